//! Telemetry ingestion, windowed features and initiating-event detection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PerceptionError {
    #[error("row {row}: TIME {time} does not follow {previous}")]
    NonMonotonicTime { row: usize, previous: u64, time: u64 },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: cannot parse `{text}` as a number")]
    UnparseableNumber { row: usize, column: String, text: String },
    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("need at least {needed} frames, have {have}")]
    InsufficientFrames { needed: usize, have: usize },
    #[error("feature dimension {features} does not match signature `{event_id}` ({centroid})")]
    DimensionMismatch {
        event_id: String,
        features: usize,
        centroid: usize,
    },
    #[error("no event signatures configured")]
    NoSignatures,
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("csv: {0}")]
    Csv(String),
}

pub const TIME_COLUMN: &str = "TIME";

/// One telemetry sample. `time` counts 10 ms ticks; values follow the
/// owning stream's column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub time: u64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Telemetry {
    pub columns: Vec<String>,
    pub frames: Vec<TelemetryFrame>,
}

impl Telemetry {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn value(&self, frame: usize, name: &str) -> Option<f64> {
        Some(self.frames.get(frame)?.values[self.column(name)?])
    }

    /// Reorder columns to `schema`, dropping any extras.
    pub fn project(&self, schema: &[String]) -> Result<Telemetry, PerceptionError> {
        let idx = schema
            .iter()
            .map(|name| {
                self.column(name)
                    .ok_or_else(|| PerceptionError::MissingColumn(name.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Telemetry {
            columns: schema.to_vec(),
            frames: self
                .frames
                .iter()
                .map(|f| TelemetryFrame {
                    time: f.time,
                    values: idx.iter().map(|&i| f.values[i]).collect(),
                })
                .collect(),
        })
    }
}

/// Parse a telemetry CSV whose first column is `TIME`.
pub fn ingest(csv_text: &str) -> Result<Telemetry, PerceptionError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(csv_text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| PerceptionError::Csv(e.to_string()))?
        .clone();
    if headers.get(0).map(|h| h.to_ascii_uppercase()) != Some(TIME_COLUMN.to_string()) {
        return Err(PerceptionError::MissingColumn(TIME_COLUMN.into()));
    }
    let columns: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();

    let mut frames: Vec<TelemetryFrame> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // header is line 1
        let record = record.map_err(|e| PerceptionError::Csv(e.to_string()))?;
        if record.len() != headers.len() {
            return Err(PerceptionError::RaggedRow {
                row,
                expected: headers.len(),
                found: record.len(),
            });
        }
        let time_text = &record[0];
        let time: u64 = time_text.parse().map_err(|_| PerceptionError::UnparseableNumber {
            row,
            column: TIME_COLUMN.into(),
            text: time_text.to_string(),
        })?;
        if let Some(prev) = frames.last() {
            if time <= prev.time {
                return Err(PerceptionError::NonMonotonicTime {
                    row,
                    previous: prev.time,
                    time,
                });
            }
        }
        let values = record
            .iter()
            .skip(1)
            .zip(&columns)
            .map(|(text, column)| {
                text.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| PerceptionError::UnparseableNumber {
                        row,
                        column: column.clone(),
                        text: text.to_string(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        frames.push(TelemetryFrame { time, values });
    }
    Ok(Telemetry { columns, frames })
}

/// Nominal statistics of one parameter, used to z-score window features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterCalibration {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    /// Typical magnitude of the per-tick slope under nominal noise.
    pub slope_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Calibration {
    pub parameters: Vec<ParameterCalibration>,
}

impl Calibration {
    pub fn from_toml(text: &str) -> Result<Self, PerceptionError> {
        let cal: Self = toml::from_str(text).map_err(|e| PerceptionError::Calibration(e.to_string()))?;
        if let Some(p) = cal.parameters.iter().find(|p| !(p.std > 0.0) || !(p.slope_scale > 0.0)) {
            return Err(PerceptionError::Calibration(format!(
                "`{}` needs positive std and slope_scale",
                p.name
            )));
        }
        Ok(cal)
    }

    /// Unit scaling for `n` parameters: features equal the raw statistics.
    pub fn identity(names: &[String]) -> Self {
        Self {
            parameters: names
                .iter()
                .map(|n| ParameterCalibration {
                    name: n.clone(),
                    mean: 0.0,
                    std: 1.0,
                    slope_scale: 1.0,
                })
                .collect(),
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.parameters.iter().map(|p| p.name.clone()).collect()
    }
}

/// Mean and least-squares slope (value per tick) of each parameter over
/// the last `window_len` frames.
pub fn window_stats(frames: &[TelemetryFrame], window_len: usize) -> Result<Vec<(f64, f64)>, PerceptionError> {
    if window_len < 2 || frames.len() < window_len {
        return Err(PerceptionError::InsufficientFrames {
            needed: window_len.max(2),
            have: frames.len(),
        });
    }
    let window = &frames[frames.len() - window_len..];
    let n = window_len as f64;
    let t0 = window[0].time as f64;
    let t_mean = window.iter().map(|f| f.time as f64 - t0).sum::<f64>() / n;
    let sxx: f64 = window.iter().map(|f| (f.time as f64 - t0 - t_mean).powi(2)).sum();
    let params = window[0].values.len();
    Ok((0..params)
        .map(|p| {
            let mean = window.iter().map(|f| f.values[p]).sum::<f64>() / n;
            let sxy: f64 = window
                .iter()
                .map(|f| (f.time as f64 - t0 - t_mean) * (f.values[p] - mean))
                .sum();
            (mean, sxy / sxx)
        })
        .collect())
}

/// Feature vector `[z_mean_0, z_slope_0, z_mean_1, ...]` in calibration order.
/// Frames must carry values in the same order as `calibration`.
pub fn window_features(
    frames: &[TelemetryFrame],
    window_len: usize,
    calibration: &Calibration,
) -> Result<Vec<f64>, PerceptionError> {
    let stats = window_stats(frames, window_len)?;
    if stats.len() != calibration.parameters.len() {
        return Err(PerceptionError::Calibration(format!(
            "frames carry {} parameters, calibration has {}",
            stats.len(),
            calibration.parameters.len()
        )));
    }
    Ok(stats
        .iter()
        .zip(&calibration.parameters)
        .flat_map(|(&(mean, slope), c)| [(mean - c.mean) / c.std, slope / c.slope_scale])
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSignature {
    pub event_id: String,
    pub name: String,
    pub centroid: Vec<f64>,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLabel {
    pub event_id: String,
    pub name: String,
    pub distance: f64,
    pub detected_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureSet {
    pub signatures: Vec<EventSignature>,
}

impl SignatureSet {
    pub fn from_toml(text: &str) -> Result<Self, PerceptionError> {
        toml::from_str(text).map_err(|e| PerceptionError::Calibration(e.to_string()))
    }
}

/// Maps a feature vector to an initiating event, if any.
pub trait EventDetector: Send + Sync {
    fn detect(&self, features: &[f64], at_tick: u64) -> Result<Option<EventLabel>, PerceptionError>;
}

pub fn detect(
    features: &[f64],
    signatures: &[EventSignature],
    at_tick: u64,
) -> Result<Option<EventLabel>, PerceptionError> {
    if signatures.is_empty() {
        return Err(PerceptionError::NoSignatures);
    }
    let mut best: Option<(f64, &EventSignature)> = None;
    for sig in signatures {
        if sig.centroid.len() != features.len() {
            return Err(PerceptionError::DimensionMismatch {
                event_id: sig.event_id.clone(),
                features: features.len(),
                centroid: sig.centroid.len(),
            });
        }
        let d = features
            .iter()
            .zip(&sig.centroid)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let better = match best {
            None => true,
            Some((bd, bs)) => d < bd || (d == bd && sig.event_id < bs.event_id),
        };
        if better {
            best = Some((d, sig));
        }
    }
    let (distance, sig) = best.expect("non-empty");
    Ok((distance <= sig.threshold).then(|| EventLabel {
        event_id: sig.event_id.clone(),
        name: sig.name.clone(),
        distance,
        detected_at: at_tick,
    }))
}

#[derive(Debug, Clone)]
pub struct CentroidDetector {
    pub signatures: Vec<EventSignature>,
}

impl EventDetector for CentroidDetector {
    fn detect(&self, features: &[f64], at_tick: u64) -> Result<Option<EventLabel>, PerceptionError> {
        detect(features, &self.signatures, at_tick)
    }
}

/// Slide a window over a whole stream and return the first detection.
pub fn first_detection(
    telemetry: &Telemetry,
    window_len: usize,
    calibration: &Calibration,
    detector: &dyn EventDetector,
) -> Result<Option<EventLabel>, PerceptionError> {
    let stream = telemetry.project(&calibration.names())?;
    for end in window_len..=stream.frames.len() {
        let window = &stream.frames[..end];
        let features = window_features(window, window_len, calibration)?;
        if let Some(label) = detector.detect(&features, window[end - 1].time)? {
            return Ok(Some(label));
        }
    }
    Ok(None)
}
