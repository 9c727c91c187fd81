use std::fs;
use std::path::{Path, PathBuf};

use procgate_core::perception::{first_detection, ingest, Calibration, CentroidDetector, SignatureSet};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn load() -> (Calibration, CentroidDetector) {
    let dir = fixtures().join("shutdown");
    let cal = Calibration::from_toml(&fs::read_to_string(dir.join("calibration.toml")).unwrap()).unwrap();
    let sigs = SignatureSet::from_toml(&fs::read_to_string(dir.join("signatures.toml")).unwrap()).unwrap();
    (
        cal,
        CentroidDetector {
            signatures: sigs.signatures,
        },
    )
}

#[test]
fn corpus_labels_match() {
    let (cal, det) = load();
    let corpus = fixtures().join("corpus");
    let mut rdr = csv::Reader::from_path(corpus.join("labels.csv")).unwrap();
    let mut n = 0;
    for row in rdr.records() {
        let row = row.unwrap();
        let t = ingest(&fs::read_to_string(corpus.join(&row[0])).unwrap()).unwrap();
        let got = first_detection(&t, 50, &cal, &det).unwrap().map(|l| l.event_id);
        let want = (!row[1].is_empty()).then(|| row[1].to_string());
        assert_eq!(got, want, "{}", &row[0]);
        n += 1;
    }
    assert_eq!(n, 15);
}

#[test]
fn scenario_stream_names_generator_disconnect() {
    let (cal, det) = load();
    let t = ingest(&fs::read_to_string(fixtures().join("shutdown/generator_disconnect.csv")).unwrap()).unwrap();
    assert_eq!(t.columns.len(), 33);
    let label = first_detection(&t, 50, &cal, &det).unwrap().unwrap();
    assert_eq!(label.name, "Disconnection of Generator to 6kV 1B Bus bar");
    assert!(
        label.detected_at > 17 + 20 * 150,
        "detected before onset at {}",
        label.detected_at
    );
}

#[test]
fn sample_rows_are_published_values() {
    let t = ingest(&fs::read_to_string(fixtures().join("shutdown/telemetry_sample.csv")).unwrap()).unwrap();
    let times: Vec<u64> = t.frames.iter().map(|f| f.time).collect();
    assert_eq!(times, [17, 37, 10610]);
    assert_eq!(t.value(0, "Thermal Power #1"), Some(0.0));
    assert_eq!(t.value(1, "Helium Blower Speed #1"), Some(3820.901));
    assert_eq!(t.value(2, "Condenser Level"), Some(603.6227));

    let stream = ingest(&fs::read_to_string(fixtures().join("shutdown/generator_disconnect.csv")).unwrap()).unwrap();
    for (i, f) in t.frames.iter().enumerate() {
        let k = stream
            .frames
            .iter()
            .position(|s| s.time == f.time)
            .expect("sample tick in stream");
        for (c, name) in t.columns.iter().enumerate() {
            assert_eq!(stream.value(k, name), Some(f.values[c]), "row {i} {name}");
        }
    }
}
