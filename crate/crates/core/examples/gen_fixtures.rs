//! Regenerates the synthetic telemetry fixtures.
//!
//! ```text
//! cargo run -p procgate-core --example gen_fixtures -- fixtures
//! ```
//!
//! Writes the 33-parameter plant schema, a detection corpus (three seeds per
//! event class plus nominal runs), the shutdown scenario stream, calibration
//! and event signatures. Output is deterministic.

use std::error::Error;
use std::fs;
use std::path::Path;

use procgate_core::perception::{
    ingest, window_features, Calibration, EventSignature, ParameterCalibration, SignatureSet, TelemetryFrame,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

const WINDOW: usize = 50;
const DT: u64 = 20;
const T0: u64 = 17;

/// (name, nominal, noise std)
const SCHEMA: [(&str, f64, f64); 33] = [
    ("Nuclear Power", 183.60, 0.004),
    ("Thermal Power #1", 198.29, 0.05),
    ("Helium Blower Speed #1", 3823.0, 3.0),
    ("Thermal Power #2", 198.31, 0.05),
    ("Helium Blower Speed #2", 3824.0, 3.0),
    ("Hot Helium Temp #1", 542.27, 0.02),
    ("Cold Helium Temp #1", 251.35, 0.02),
    ("Hot Helium Temp #2", 542.27, 0.02),
    ("Cold Helium Temp #2", 251.355, 0.02),
    ("Primary Pressure", 7.00, 0.002),
    ("SG Outlet Steam Temp #1", 566.0, 0.1),
    ("SG Outlet Steam Temp #2", 566.0, 0.1),
    ("Main Steam Pressure", 13.24, 0.005),
    ("Main Steam Temperature", 566.0, 0.1),
    ("Main Steam Flow", 673.0, 0.5),
    ("Feedwater Flow", 673.0, 0.5),
    ("Feedwater Temperature", 205.0, 0.05),
    ("Feedwater Pump Speed", 5200.0, 2.0),
    ("Turbine Speed", 3000.0, 0.5),
    ("Generator Power", 211.0, 0.2),
    ("Generator Voltage", 20.0, 0.01),
    ("Generator Frequency", 50.0, 0.005),
    ("6kV 1A Bus Voltage", 6.30, 0.005),
    ("6kV 1B Bus Voltage", 6.30, 0.005),
    ("Condenser Pressure", 4.90, 0.02),
    ("Deaerator Level", 2.10, 0.005),
    ("Deaerator Pressure", 0.95, 0.002),
    ("Rod Position Group 1", 250.0, 0.05),
    ("Rod Position Group 2", 250.0, 0.05),
    ("Bypass Valve Position", 0.5, 0.05),
    ("Circulating Water Flow", 42000.0, 20.0),
    ("Condensate Pump Flow", 560.0, 0.5),
    ("Condenser Level", 704.22, 0.05),
];

struct EventClass {
    id: &'static str,
    name: &'static str,
    /// (parameter, post-event value)
    targets: &'static [(&'static str, f64)],
}

const EVENTS: [EventClass; 4] = [
    EventClass {
        id: "E01",
        name: "Disconnection of Generator to 6kV 1B Bus bar",
        targets: &[
            ("Nuclear Power", 183.0486),
            ("Thermal Power #1", 199.7107),
            ("Helium Blower Speed #1", 3800.0),
            ("Thermal Power #2", 199.70),
            ("Hot Helium Temp #1", 519.56),
            ("Cold Helium Temp #1", 248.21),
            ("Hot Helium Temp #2", 519.5561),
            ("Cold Helium Temp #2", 248.2146),
            ("Generator Power", 0.0),
            ("6kV 1B Bus Voltage", 0.0),
            ("Bypass Valve Position", 60.0),
            ("Main Steam Pressure", 13.60),
            ("Condenser Level", 603.6227),
        ],
    },
    EventClass {
        id: "E02",
        name: "Loss of Main Feedwater",
        targets: &[
            ("Nuclear Power", 20.0),
            ("SG Outlet Steam Temp #1", 600.0),
            ("SG Outlet Steam Temp #2", 600.0),
            ("Main Steam Pressure", 12.0),
            ("Main Steam Flow", 300.0),
            ("Feedwater Flow", 0.0),
            ("Feedwater Pump Speed", 0.0),
            ("Deaerator Level", 2.60),
            ("Rod Position Group 1", 0.0),
            ("Rod Position Group 2", 0.0),
        ],
    },
    EventClass {
        id: "E03",
        name: "Helium Blower #1 Trip",
        targets: &[
            ("Nuclear Power", 100.0),
            ("Thermal Power #1", 10.0),
            ("Helium Blower Speed #1", 0.0),
            ("Hot Helium Temp #1", 300.0),
            ("Cold Helium Temp #1", 245.0),
            ("Primary Pressure", 6.80),
        ],
    },
    EventClass {
        id: "E04",
        name: "Condenser Vacuum Loss",
        targets: &[
            ("Turbine Speed", 2990.0),
            ("Generator Power", 150.0),
            ("Condenser Pressure", 30.0),
            ("Circulating Water Flow", 5000.0),
            ("Condensate Pump Flow", 450.0),
            ("Condenser Level", 680.0),
        ],
    },
];

/// Rows of the published telemetry sample: TIME and six named columns.
const SAMPLE_COLUMNS: [&str; 6] = [
    "Nuclear Power",
    "Thermal Power #1",
    "Helium Blower Speed #1",
    "Hot Helium Temp #2",
    "Cold Helium Temp #2",
    "Condenser Level",
];
const SAMPLE_ROWS: [(u64, [f64; 6]); 3] = [
    (17, [183.5995, 0.0, 3826.837, 542.2744, 251.3571, 704.1935]),
    (37, [183.6040, 198.2936, 3820.901, 542.2758, 251.3527, 704.2556]),
    (10610, [183.0486, 199.7107, 3800.0, 519.5561, 248.2146, 603.6227]),
];

fn column(name: &str) -> usize {
    SCHEMA.iter().position(|(n, _, _)| *n == name).expect("schema column")
}

fn nominal() -> Vec<f64> {
    SCHEMA.iter().map(|(_, v, _)| *v).collect()
}

fn post_event(class: &EventClass, scale: f64) -> Vec<f64> {
    let mut v = nominal();
    for (name, target) in class.targets {
        let i = column(name);
        v[i] += (target - v[i]) * scale;
    }
    v
}

struct Run {
    frames: usize,
    onset: usize,
    tau: f64,
    target: Vec<f64>,
}

fn simulate(run: &Run, rng: &mut StdRng) -> Vec<TelemetryFrame> {
    let base = nominal();
    let noise: Vec<Normal<f64>> = SCHEMA.iter().map(|(_, _, s)| Normal::new(0.0, *s).unwrap()).collect();
    (0..run.frames)
        .map(|k| {
            let w = if k < run.onset {
                0.0
            } else {
                1.0 - (-((k - run.onset) as f64) / run.tau).exp()
            };
            let values = (0..SCHEMA.len())
                .map(|i| base[i] + (run.target[i] - base[i]) * w + noise[i].sample(rng))
                .collect();
            TelemetryFrame {
                time: T0 + DT * k as u64,
                values,
            }
        })
        .collect()
}

fn write_csv(path: &Path, frames: &[TelemetryFrame]) -> Result<(), Box<dyn Error>> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["TIME".to_string()];
    header.extend(SCHEMA.iter().map(|(n, _, _)| n.to_string()));
    w.write_record(&header)?;
    for f in frames {
        let mut row = vec![f.time.to_string()];
        row.extend(f.values.iter().map(|v| format!("{v:.4}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reload through the ingest path so signatures see the rounded values.
fn reload(path: &Path) -> Result<Vec<TelemetryFrame>, Box<dyn Error>> {
    Ok(ingest(&fs::read_to_string(path)?)?.frames)
}

fn calibration() -> Calibration {
    Calibration {
        parameters: SCHEMA
            .iter()
            .map(|(name, mean, std)| ParameterCalibration {
                name: name.to_string(),
                mean: *mean,
                std: *std,
                // one noise std of drift across the window
                slope_scale: std / (WINDOW as f64 * DT as f64),
            })
            .collect(),
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn main() -> Result<(), Box<dyn Error>> {
    let root = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into());
    let root = Path::new(&root);
    let corpus_dir = root.join("corpus");
    let shutdown_dir = root.join("shutdown");
    fs::create_dir_all(&corpus_dir)?;
    fs::create_dir_all(&shutdown_dir)?;
    let cal = calibration();

    let mut labels = csv::Writer::from_path(corpus_dir.join("labels.csv"))?;
    labels.write_record(["file", "event_id"])?;
    let mut steady: Vec<Vec<Vec<f64>>> = vec![Vec::new(); EVENTS.len()];
    let mut nominal_features: Vec<Vec<f64>> = Vec::new();

    for seed in 0..3u64 {
        let mut rng = StdRng::seed_from_u64(1000 + seed);
        let run = Run {
            frames: 300,
            onset: 300,
            tau: 1.0,
            target: nominal(),
        };
        let file = format!("nominal_{seed}.csv");
        write_csv(&corpus_dir.join(&file), &simulate(&run, &mut rng))?;
        labels.write_record([file.as_str(), ""])?;
        let frames = reload(&corpus_dir.join(&file))?;
        for end in WINDOW..=frames.len() {
            nominal_features.push(window_features(&frames[..end], WINDOW, &cal)?);
        }
    }

    for (c, class) in EVENTS.iter().enumerate() {
        for seed in 0..3u64 {
            let mut rng = StdRng::seed_from_u64(100 * (c as u64 + 1) + seed);
            let onset = rng.random_range(80..140);
            let tau = rng.random_range(6.0..14.0);
            let scale = rng.random_range(0.9..1.1);
            let run = Run {
                frames: 400,
                onset,
                tau,
                target: post_event(class, scale),
            };
            let file = format!("{}_{seed}.csv", class.id.to_lowercase());
            write_csv(&corpus_dir.join(&file), &simulate(&run, &mut rng))?;
            labels.write_record([file.as_str(), class.id])?;
            let frames = reload(&corpus_dir.join(&file))?;
            let settled = onset + (8.0 * tau) as usize + WINDOW;
            for end in settled..=frames.len() {
                steady[c].push(window_features(&frames[..end], WINDOW, &cal)?);
            }
        }
    }
    labels.flush()?;

    let dim = SCHEMA.len() * 2;
    let centroids: Vec<Vec<f64>> = steady
        .iter()
        .map(|windows| {
            let mut c = vec![0.0; dim];
            for w in windows {
                for (a, b) in c.iter_mut().zip(w) {
                    *a += b / windows.len() as f64;
                }
            }
            c
        })
        .collect();
    let origin = vec![0.0; dim];
    let mut signatures = Vec::new();
    for (c, class) in EVENTS.iter().enumerate() {
        let spread = steady[c].iter().map(|w| distance(w, &centroids[c])).fold(0.0, f64::max);
        let nominal_gap = nominal_features
            .iter()
            .map(|w| distance(w, &centroids[c]))
            .fold(f64::INFINITY, f64::min);
        let class_gap = centroids
            .iter()
            .enumerate()
            .filter(|(o, _)| *o != c)
            .map(|(_, o)| distance(o, &centroids[c]))
            .fold(distance(&origin, &centroids[c]), f64::min);
        let threshold = (3.0 * spread).min(0.4 * class_gap.min(nominal_gap));
        assert!(threshold > spread, "{}: classes are not separable", class.id);
        println!(
            "{}: spread {spread:.2}, nominal gap {nominal_gap:.2}, class gap {class_gap:.2}, threshold {threshold:.2}",
            class.id
        );
        signatures.push(EventSignature {
            event_id: class.id.into(),
            name: class.name.into(),
            centroid: centroids[c].iter().map(|v| (v * 1e4).round() / 1e4).collect(),
            threshold: (threshold * 100.0).round() / 100.0,
        });
    }

    fs::write(
        shutdown_dir.join("signatures.toml"),
        toml::to_string(&SignatureSet { signatures })?,
    )?;
    fs::write(shutdown_dir.join("calibration.toml"), toml::to_string(&cal)?)?;

    // Scenario stream: the published sample rows pinned at both ends.
    let e01 = &EVENTS[0];
    let mut rng = StdRng::seed_from_u64(42);
    let run = Run {
        frames: 530,
        onset: 150,
        tau: 10.0,
        target: post_event(e01, 1.0),
    };
    let mut frames = simulate(&run, &mut rng);
    for (time, values) in &SAMPLE_ROWS[..2] {
        let k = ((time - T0) / DT) as usize;
        for (name, v) in SAMPLE_COLUMNS.iter().zip(values) {
            frames[k].values[column(name)] = *v;
        }
    }
    let (last_time, last_values) = SAMPLE_ROWS[2];
    let mut last = TelemetryFrame {
        time: last_time,
        values: post_event(e01, 1.0),
    };
    for (name, v) in SAMPLE_COLUMNS.iter().zip(last_values) {
        last.values[column(name)] = v;
    }
    frames.push(last);
    write_csv(&shutdown_dir.join("generator_disconnect.csv"), &frames)?;

    let mut w = csv::Writer::from_path(shutdown_dir.join("telemetry_sample.csv"))?;
    let mut header = vec!["TIME".to_string()];
    header.extend(SAMPLE_COLUMNS.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (time, values) in SAMPLE_ROWS {
        let mut row = vec![time.to_string()];
        row.extend(values.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
