//! Operator timing and workload model.
//!
//! An execution path is expanded into primitive operator actions, each
//! with a nominal duration; pointing uses a Fitts-style law. The summed
//! median feeds a lognormal required-time distribution, and the time-related
//! failure probability is the chance the required time exceeds what is
//! available.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::iekg::Coords;
use crate::procedure::{ExecutionPath, StepKind};

#[derive(Debug, Error, PartialEq)]
pub enum TwinError {
    #[error("execution path `{0}` has no nodes and nothing to verify")]
    EmptyPath(String),
    #[error("invalid primitive: {0}")]
    InvalidPrimitive(String),
    #[error("invalid timing config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrimitiveAction {
    VisualSearch,
    Point { distance_px: f64, width_px: f64 },
    Click,
    ReadValue,
    MemoryRetrieve,
    MentalPrep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrimitiveTimes {
    pub visual_search: f64,
    pub click: f64,
    pub read_value: f64,
    pub memory_retrieve: f64,
    pub mental_prep: f64,
}

impl Default for PrimitiveTimes {
    fn default() -> Self {
        Self {
            visual_search: 1.10,
            click: 0.20,
            read_value: 1.35,
            memory_retrieve: 1.20,
            mental_prep: 1.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointingLaw {
    /// Intercept, seconds.
    pub a: f64,
    /// Slope, seconds per bit.
    pub b: f64,
    pub target_width_px: f64,
    pub home: [f64; 2],
}

impl Default for PointingLaw {
    fn default() -> Self {
        Self {
            a: 0.1,
            b: 0.15,
            target_width_px: 30.0,
            home: [960.0, 540.0],
        }
    }
}

impl PointingLaw {
    pub fn time(&self, distance_px: f64, width_px: f64) -> f64 {
        self.a + self.b * (distance_px / width_px + 1.0).log2()
    }
}

/// Coefficients of the rule-based workload predictor. Each dimension is
/// `base + per_node * path_len + per_pressure * ratio + per_pending * pending`,
/// clamped to [0, 100]. Physical demand is constant for soft controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadRamp {
    pub base: f64,
    pub per_node: f64,
    pub per_pressure: f64,
    pub per_pending: f64,
}

impl WorkloadRamp {
    const fn new(base: f64, per_node: f64, per_pressure: f64, per_pending: f64) -> Self {
        Self {
            base,
            per_node,
            per_pressure,
            per_pending,
        }
    }

    fn eval(&self, ctx: &RunContext) -> f64 {
        (self.base
            + self.per_node * ctx.path_len as f64
            + self.per_pressure * ctx.time_pressure_ratio
            + self.per_pending * ctx.pending_steps as f64)
            .clamp(0.0, 100.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadRule {
    pub mental: WorkloadRamp,
    pub physical: f64,
    pub temporal: WorkloadRamp,
    pub performance: WorkloadRamp,
    pub effort: WorkloadRamp,
    pub frustration: WorkloadRamp,
}

impl Default for WorkloadRule {
    fn default() -> Self {
        Self {
            mental: WorkloadRamp::new(20.0, 4.0, 30.0, 1.0),
            physical: 10.0,
            temporal: WorkloadRamp::new(10.0, 0.0, 80.0, 1.0),
            performance: WorkloadRamp::new(70.0, 0.5, 10.0, 0.0),
            effort: WorkloadRamp::new(20.0, 4.0, 25.0, 1.0),
            frustration: WorkloadRamp::new(5.0, 1.0, 15.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingConfig {
    pub sigma: f64,
    pub primitives: PrimitiveTimes,
    pub pointing: PointingLaw,
    pub workload: WorkloadRule,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            sigma: 0.28,
            primitives: PrimitiveTimes::default(),
            pointing: PointingLaw::default(),
            workload: WorkloadRule::default(),
        }
    }
}

impl TimingConfig {
    pub fn from_toml(text: &str) -> Result<Self, TwinError> {
        let cfg: Self = toml::from_str(text).map_err(|e| TwinError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TwinError> {
        let p = &self.primitives;
        let times = [
            ("visual_search", p.visual_search),
            ("click", p.click),
            ("read_value", p.read_value),
            ("memory_retrieve", p.memory_retrieve),
            ("mental_prep", p.mental_prep),
            ("pointing.a", self.pointing.a),
            ("pointing.b", self.pointing.b),
        ];
        if let Some((name, _)) = times.iter().find(|(_, t)| !(t.is_finite() && *t >= 0.0)) {
            return Err(TwinError::InvalidConfig(format!(
                "{name} must be a non-negative number"
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(TwinError::InvalidConfig("sigma must be > 0".into()));
        }
        if !(self.pointing.target_width_px > 0.0) {
            return Err(TwinError::InvalidConfig("target_width_px must be > 0".into()));
        }
        Ok(())
    }

    fn home(&self) -> Coords {
        Coords::new(self.pointing.home[0], self.pointing.home[1])
    }
}

pub fn compile_primitives(path: &ExecutionPath, config: &TimingConfig) -> Result<Vec<PrimitiveAction>, TwinError> {
    if path.nodes.is_empty() && path.verifications == 0 {
        return Err(TwinError::EmptyPath(path.step_id.clone()));
    }
    let reads_per_node = matches!(path.kind, StepKind::ParameterCheck | StepKind::Checklist);
    let width = config.pointing.target_width_px;

    let mut out = Vec::with_capacity(1 + path.nodes.len() * 4);
    out.push(PrimitiveAction::MentalPrep);
    let mut from = config.home();
    for node in &path.nodes {
        out.push(PrimitiveAction::VisualSearch);
        out.push(PrimitiveAction::Point {
            distance_px: from.distance(&node.coords),
            width_px: width,
        });
        out.push(PrimitiveAction::Click);
        if reads_per_node {
            out.push(PrimitiveAction::ReadValue);
        }
        from = node.coords;
    }
    if path.nodes.is_empty() {
        out.extend(std::iter::repeat_n(PrimitiveAction::ReadValue, path.verifications));
    }
    Ok(out)
}

pub fn primitive_time(action: &PrimitiveAction, config: &TimingConfig) -> Result<f64, TwinError> {
    let p = &config.primitives;
    Ok(match *action {
        PrimitiveAction::VisualSearch => p.visual_search,
        PrimitiveAction::Click => p.click,
        PrimitiveAction::ReadValue => p.read_value,
        PrimitiveAction::MemoryRetrieve => p.memory_retrieve,
        PrimitiveAction::MentalPrep => p.mental_prep,
        PrimitiveAction::Point { distance_px, width_px } => {
            if !(distance_px >= 0.0) || !(width_px > 0.0) {
                return Err(TwinError::InvalidPrimitive(format!(
                    "point distance {distance_px} / width {width_px}"
                )));
            }
            config.pointing.time(distance_px, width_px)
        }
    })
}

/// Median execution time in seconds: the sum of primitive durations.
pub fn estimate_median(primitives: &[PrimitiveAction], config: &TimingConfig) -> Result<f64, TwinError> {
    primitives.iter().map(|a| primitive_time(a, config)).sum()
}

/// Lognormal required-time distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeEstimate {
    pub median_s: f64,
    pub sigma: f64,
    pub mu: f64,
}

impl TimeEstimate {
    pub fn new(median_s: f64, sigma: f64) -> Result<Self, TwinError> {
        if !(median_s > 0.0 && median_s.is_finite()) {
            return Err(TwinError::InvalidConfig(format!("median must be > 0, got {median_s}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(TwinError::InvalidConfig(format!("sigma must be > 0, got {sigma}")));
        }
        Ok(Self {
            median_s,
            sigma,
            mu: median_s.ln(),
        })
    }

    /// Probability that the required time exceeds `t_avail_s`.
    pub fn p_t(&self, t_avail_s: f64) -> f64 {
        p_t(self, t_avail_s)
    }
}

pub fn standard_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// `1 - Phi((ln t - mu) / sigma)`, evaluated through `erfc` so the upper
/// tail keeps relative precision.
pub fn p_t(estimate: &TimeEstimate, t_avail_s: f64) -> f64 {
    if t_avail_s <= 0.0 {
        return 1.0;
    }
    if t_avail_s.is_infinite() {
        return 0.0;
    }
    let z = (t_avail_s.ln() - estimate.mu) / estimate.sigma;
    standard_normal_sf(z).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadVector {
    pub mental: f64,
    pub physical: f64,
    pub temporal: f64,
    pub performance: f64,
    pub effort: f64,
    pub frustration: f64,
}

impl WorkloadVector {
    pub fn new(mental: f64, physical: f64, temporal: f64, performance: f64, effort: f64, frustration: f64) -> Self {
        Self {
            mental,
            physical,
            temporal,
            performance,
            effort,
            frustration,
        }
    }

    pub fn components(&self) -> [f64; 6] {
        [
            self.mental,
            self.physical,
            self.temporal,
            self.performance,
            self.effort,
            self.frustration,
        ]
    }

    pub fn is_valid(&self) -> bool {
        self.components().iter().all(|c| (0.0..=100.0).contains(c))
    }

    pub fn aggregate(&self) -> f64 {
        aggregate_workload(self)
    }
}

/// Unweighted TLX-style score; performance is reverse scored.
pub fn aggregate_workload(w: &WorkloadVector) -> f64 {
    (w.mental + w.physical + w.temporal + (100.0 - w.performance) + w.effort + w.frustration) / 6.0
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunContext {
    pub path_len: usize,
    /// Median required time over available time.
    pub time_pressure_ratio: f64,
    pub pending_steps: usize,
}

pub fn predict_workload(ctx: &RunContext, rule: &WorkloadRule) -> WorkloadVector {
    let ctx = RunContext {
        time_pressure_ratio: ctx.time_pressure_ratio.max(0.0),
        ..*ctx
    };
    WorkloadVector {
        mental: rule.mental.eval(&ctx),
        physical: rule.physical.clamp(0.0, 100.0),
        temporal: rule.temporal.eval(&ctx),
        performance: rule.performance.eval(&ctx),
        effort: rule.effort.eval(&ctx),
        frustration: rule.frustration.eval(&ctx),
    }
}
