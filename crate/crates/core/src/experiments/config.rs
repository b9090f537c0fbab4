use std::f64::consts::PI;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ch::{CHParams, NoiseMode};
use crate::entropy::{mollified_initial, DiffusionCoefficient};
use crate::error::{Error, Result};
use crate::grid::{check_grid_size, Field};
use crate::ikk::IKKParams;
use crate::kernel::{check_resolved, DEFAULT_KERNEL_RADIUS};
use crate::noise::DEFAULT_MOLLIFIER_RADIUS;
use crate::trajectory::ControlField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ConvergeTwoStep,
    EntropyReport,
    RemainderScaling,
    LdpRegime,
    GammaConverge,
    NoiseChecks,
    Simulate,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::ConvergeTwoStep => "converge_two_step",
            Self::EntropyReport => "entropy_report",
            Self::RemainderScaling => "remainder_scaling",
            Self::LdpRegime => "ldp_regime",
            Self::GammaConverge => "gamma_converge",
            Self::NoiseChecks => "noise_checks",
            Self::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Ch,
    #[default]
    Ikk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// `mean + amplitude cos(2 pi mode x)`, the same for every `gamma`.
    Cosine {
        amplitude: f64,
        #[serde(default)]
        mean: f64,
        #[serde(default = "default_mode")]
        mode: u32,
    },
    /// `gamma^{-1/3} rho(gamma^{-1/3} x)`; only for Kac-only experiments,
    /// since the family has no L^2 limit.
    Mollified { amplitude: f64, radius: f64 },
}

impl Default for InitialData {
    fn default() -> Self {
        Self::Cosine {
            amplitude: 0.5,
            mean: 0.0,
            mode: 1,
        }
    }
}

impl InitialData {
    pub fn build(&self, n: usize, gamma: f64) -> Result<Field> {
        match *self {
            Self::Cosine { amplitude, mean, mode } => {
                Field::from_fn(n, |x| mean + amplitude * (2.0 * PI * mode as f64 * x).cos())
            }
            Self::Mollified { amplitude, radius } => Ok(mollified_initial(n, gamma, amplitude, radius)?.0),
        }
    }

    /// Datum of the Cahn-Hilliard limit.
    pub fn limit(&self, n: usize) -> Result<Field> {
        match self {
            Self::Cosine { .. } => self.build(n, 1.0),
            Self::Mollified { .. } => Err(Error::Config(
                "mollified initial data has no Cahn-Hilliard limit; use cosine data".into(),
            )),
        }
    }
}

/// `g(t, x) = amplitude cos(2 pi mode x)`, times `cos(2 pi t / T)` when
/// `temporal` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    #[serde(default = "default_control_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_control_mode")]
    pub mode: u32,
    #[serde(default)]
    pub temporal: bool,
    #[serde(default = "default_control_samples")]
    pub samples: usize,
}

impl Default for ControlSpec {
    fn default() -> Self {
        Self {
            amplitude: default_control_amplitude(),
            mode: default_control_mode(),
            temporal: false,
            samples: default_control_samples(),
        }
    }
}

impl ControlSpec {
    pub fn build(&self, n: usize, t_final: f64) -> Result<ControlField> {
        let s = *self;
        ControlField::from_fn(n, t_final, s.samples, move |t, x| {
            let time = if s.temporal {
                (2.0 * PI * t / t_final).cos()
            } else {
                1.0
            };
            s.amplitude * time * (2.0 * PI * s.mode as f64 * x).cos()
        })
    }
}

/// One point of a joint `(epsilon, gamma, delta, n)` schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub epsilon: f64,
    pub gamma: f64,
    pub delta: f64,
    pub n: u32,
}

/// `epsilon_i = 4^{-i}`, `delta_i = epsilon_i^{3/4}`, `gamma_i = epsilon_i^{1/2}`,
/// `n_i = i + 2` for `i = 1..=levels`.
pub fn default_schedule(levels: usize) -> Vec<ScheduleEntry> {
    (1..=levels)
        .map(|i| {
            let eps = 4f64.powi(-(i as i32));
            ScheduleEntry {
                epsilon: eps,
                gamma: eps.sqrt(),
                delta: eps.powf(0.75),
                n: i as u32 + 2,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub model: Model,
    #[serde(default = "default_gammas")]
    pub gammas: Vec<f64>,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    /// Diffusion coefficient family indices; the first one is used outside
    /// the schedule.
    #[serde(default = "default_families")]
    pub families: Vec<u32>,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    /// Common time step of every run; `None` takes the smallest default
    /// step among the coupled runs.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    /// Fixed `gamma` for sweeps over `delta`.
    #[serde(default = "default_reference_gamma")]
    pub reference_gamma: f64,
    /// Fixed `delta` for sweeps over `gamma`.
    #[serde(default = "default_reference_delta")]
    pub reference_delta: f64,
    #[serde(default)]
    pub initial: InitialData,
    #[serde(default)]
    pub control: ControlSpec,
    #[serde(default)]
    pub schedule: Option<Vec<ScheduleEntry>>,
    #[serde(default = "default_levels")]
    pub levels: usize,
    /// Negative Sobolev index of the remainder norms.
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_kernel_radius")]
    pub kernel_radius: f64,
    #[serde(default = "default_mollifier_radius")]
    pub mollifier_radius: f64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_mode() -> u32 {
    1
}
fn default_control_amplitude() -> f64 {
    0.5
}
fn default_control_mode() -> u32 {
    2
}
fn default_control_samples() -> usize {
    100
}
fn default_gammas() -> Vec<f64> {
    vec![0.5, 0.25, 0.125]
}
fn default_deltas() -> Vec<f64> {
    vec![0.2, 0.1, 0.05]
}
fn default_epsilons() -> Vec<f64> {
    vec![1.0]
}
fn default_families() -> Vec<u32> {
    vec![64]
}
fn default_a() -> f64 {
    -1.0
}
fn default_n() -> usize {
    64
}
fn default_t_final() -> f64 {
    0.1
}
fn default_snapshots() -> usize {
    50
}
fn default_replicates() -> usize {
    10
}
fn default_reference_gamma() -> f64 {
    0.25
}
fn default_reference_delta() -> f64 {
    0.1
}
fn default_levels() -> usize {
    3
}
fn default_beta() -> f64 {
    7.0
}
fn default_kernel_radius() -> f64 {
    DEFAULT_KERNEL_RADIUS
}
fn default_mollifier_radius() -> f64 {
    DEFAULT_MOLLIFIER_RADIUS
}

impl ExperimentConfig {
    /// All defaults for the given kind. Remainder scaling runs on
    /// noise-free paths; the recovery sequence uses a short horizon and a
    /// large profile so the weight effect stays above the time-stepping
    /// error of the recovered rates.
    pub fn new(kind: ExperimentKind) -> Self {
        let mut cfg: Self = serde_json::from_value(serde_json::json!({ "kind": kind })).expect("defaults deserialize");
        match kind {
            ExperimentKind::RemainderScaling => cfg.epsilons = vec![0.0],
            ExperimentKind::EntropyReport => cfg.epsilons = vec![0.1],
            ExperimentKind::GammaConverge => {
                cfg.t_final = 0.02;
                cfg.initial = InitialData::Cosine {
                    amplitude: 0.8,
                    mean: 0.0,
                    mode: 1,
                };
            }
            _ => {}
        }
        cfg
    }

    /// Parses a config; keys left out take the defaults of its kind.
    pub fn from_json(text: &str) -> Result<Self> {
        let bad = |e: serde_json::Error| Error::Config(e.to_string());
        let given: serde_json::Value = serde_json::from_str(text).map_err(bad)?;
        let serde_json::Value::Object(given) = given else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let kind: ExperimentKind =
            serde_json::from_value(given.get("kind").cloned().unwrap_or_default()).map_err(bad)?;
        let mut merged = serde_json::to_value(Self::new(kind)).map_err(bad)?;
        let obj = merged.as_object_mut().expect("config is an object");
        // an absent optional field serializes as null; drop those so they
        // are not mistaken for explicit values
        obj.retain(|_, v| !v.is_null());
        obj.extend(given);
        let cfg: Self = serde_json::from_value(merged).map_err(bad)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form.
    /// SHA-256 of the compact JSON, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let digest = Sha256::digest(serde_json::to_string(&c).expect("config serializes").as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn schedule(&self) -> Vec<ScheduleEntry> {
        self.schedule.clone().unwrap_or_else(|| default_schedule(self.levels))
    }

    pub fn coefficient(&self) -> DiffusionCoefficient {
        DiffusionCoefficient::FamilyN { n: self.families[0] }
    }

    fn bad(msg: impl Into<String>) -> Error {
        Error::Config(msg.into())
    }

    pub fn validate(&self) -> Result<()> {
        check_grid_size(self.n).map_err(|e| Self::bad(e.to_string()))?;
        for (name, empty) in [
            ("gammas", self.gammas.is_empty()),
            ("deltas", self.deltas.is_empty()),
            ("epsilons", self.epsilons.is_empty()),
            ("families", self.families.is_empty()),
        ] {
            if empty {
                return Err(Self::bad(format!("{name} must not be empty")));
            }
        }
        if self.replicates == 0 || self.snapshots == 0 || self.levels == 0 {
            return Err(Self::bad("replicates, snapshots and levels must be positive"));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) || !self.a.is_finite() {
            return Err(Self::bad("need t_final > 0 and finite a"));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt <= self.t_final) {
                return Err(Self::bad(format!("dt {dt} outside (0, t_final]")));
            }
        }
        if !(self.beta >= 0.0 && self.beta <= 10.0) {
            return Err(Self::bad(format!("beta {} outside [0, 10]", self.beta)));
        }
        if self.families.iter().any(|&k| k < 2) {
            return Err(Self::bad("coefficient family indices must be >= 2"));
        }
        if self.epsilons.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(Self::bad("epsilons must be >= 0"));
        }
        let schedule = self.schedule();
        if schedule.is_empty() {
            return Err(Self::bad("schedule must not be empty"));
        }
        let mut gammas = self.gammas.clone();
        gammas.push(self.reference_gamma);
        let mut deltas = self.deltas.clone();
        deltas.push(self.reference_delta);
        if self.kind == ExperimentKind::LdpRegime {
            for s in &schedule {
                if !(s.epsilon >= 0.0) || s.n < 2 {
                    return Err(Self::bad("schedule needs epsilon >= 0 and n >= 2"));
                }
                gammas.push(s.gamma);
                deltas.push(s.delta);
            }
        }
        for &g in &gammas {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Self::bad(format!("gamma {g} outside (0, 1]")));
            }
            check_resolved("rescaled kernel", self.kernel_radius * g.cbrt(), self.n)
                .map_err(|e| Self::bad(format!("gamma {g}, N {}: {e}", self.n)))?;
        }
        for &d in &deltas {
            if !(d > 0.0) {
                return Err(Self::bad(format!("delta {d} must be > 0")));
            }
            let support = self.mollifier_radius * d.cbrt();
            if support >= 0.5 {
                return Err(Self::bad(format!(
                    "mollifier support for delta {d} exceeds half the period"
                )));
            }
            check_resolved("mollifier", support, self.n)
                .map_err(|e| Self::bad(format!("delta {d}, N {}: {e}", self.n)))?;
        }
        if self.kind == ExperimentKind::RemainderScaling && (self.gammas.len() < 3 || self.deltas.len() < 3) {
            return Err(Self::bad("slope fits need at least 3 gammas and 3 deltas"));
        }
        if let InitialData::Mollified { .. } = self.initial {
            let needs_limit = matches!(
                self.kind,
                ExperimentKind::ConvergeTwoStep | ExperimentKind::LdpRegime | ExperimentKind::GammaConverge
            ) || (self.kind == ExperimentKind::Simulate && self.model == Model::Ch);
            if needs_limit {
                return Err(Self::bad("this experiment needs cosine initial data"));
            }
        }
        Ok(())
    }

    pub fn ikk_params(&self, gamma: f64, delta: f64, epsilon: f64) -> IKKParams {
        let mut p = IKKParams::new(gamma, delta, self.a, self.t_final, self.n);
        p.epsilon = epsilon;
        p.coefficient = self.coefficient();
        p.dt = self.dt;
        p.snapshots = self.snapshots;
        p.kernel_radius = self.kernel_radius;
        p.mollifier_radius = self.mollifier_radius;
        p
    }

    pub fn ch_params(&self, noise: NoiseMode) -> CHParams {
        let mut p = CHParams::new(self.a, noise, self.t_final, self.n);
        p.dt = self.dt;
        p.snapshots = self.snapshots;
        p.kernel_radius = self.kernel_radius;
        p
    }

    pub fn mollified_noise(&self, delta: f64) -> NoiseMode {
        NoiseMode::Mollified {
            delta,
            base_radius: self.mollifier_radius,
        }
    }
}
