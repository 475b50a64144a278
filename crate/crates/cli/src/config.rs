//! Experiment configuration: a flat TOML file, resolved against the
//! reduced or full-scale defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    OrbitError,
    Delta,
    ShadowWindow,
    SamplingError,
    DensityError,
    ElboCurve,
    InversionCheck,
    OracleCheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::OrbitError,
        ExperimentKind::Delta,
        ExperimentKind::ShadowWindow,
        ExperimentKind::SamplingError,
        ExperimentKind::DensityError,
        ExperimentKind::ElboCurve,
        ExperimentKind::InversionCheck,
        ExperimentKind::OracleCheck,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::OrbitError => "orbit-error",
            ExperimentKind::Delta => "delta",
            ExperimentKind::ShadowWindow => "shadow-window",
            ExperimentKind::SamplingError => "sampling-error",
            ExperimentKind::DensityError => "density-error",
            ExperimentKind::ElboCurve => "elbo-curve",
            ExperimentKind::InversionCheck => "inversion-check",
            ExperimentKind::OracleCheck => "oracle-check",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Banana,
    Cross,
    Linreg,
    Logreg,
    Gaussian,
}

impl TargetKind {
    pub fn name(&self) -> &'static str {
        match self {
            TargetKind::Banana => "banana",
            TargetKind::Cross => "cross",
            TargetKind::Linreg => "linreg",
            TargetKind::Logreg => "logreg",
            TargetKind::Gaussian => "gaussian",
        }
    }
}

/// `reference = "fit"`, `reference = "standard"`, or an inline table
/// `reference = { mean = [...], log_std = [...] }` on the position space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReferenceSpec {
    Named(String),
    Inline { mean: Vec<f64>, log_std: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_target")]
    pub target: TargetKind,
    pub leapfrog_steps: Option<usize>,
    pub step_size: Option<f64>,
    pub refresh_offset: Option<f64>,
    pub refresh_amplitude: Option<f64>,
    /// Flow lengths `N` (orbit steps `k` for orbit-error).
    pub lengths: Option<Vec<usize>>,
    /// Number of independent seeds (orbits, ELBO draws, inversion checks).
    pub seeds: Option<usize>,
    /// Base seed; stream `i` feeds draw `i`.
    pub seed: Option<u64>,
    pub precision_bits: Option<u32>,
    pub dataset_path: Option<PathBuf>,
    pub reference: Option<ReferenceSpec>,
    pub fit_steps: Option<usize>,
    pub output_dir: Option<PathBuf>,
    /// Draws for delta and sampling-error, evaluation points for density-error.
    pub draws: Option<usize>,
    pub delta: Option<f64>,
    /// Scaling constants for oracle-check.
    pub scaling_c: Option<Vec<f64>>,
    /// Curvature probes per orbit point in shadow-window; 0 skips `M`.
    pub curvature_probes: Option<usize>,
    /// Evaluate the finite-N density error bound in density-error.
    pub error_bound: Option<bool>,
}

fn default_target() -> TargetKind {
    TargetKind::Banana
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Reduced,
    Full,
}

/// Command-line overrides applied after the file is read.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub precision_bits: Option<u32>,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind, target: TargetKind) -> Self {
        Self {
            experiment,
            target,
            leapfrog_steps: None,
            step_size: None,
            refresh_offset: None,
            refresh_amplitude: None,
            lengths: None,
            seeds: None,
            seed: None,
            precision_bits: None,
            dataset_path: None,
            reference: None,
            fit_steps: None,
            output_dir: None,
            draws: None,
            delta: None,
            scaling_c: None,
            curvature_probes: None,
            error_bound: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Fill every unset field from the defaults for `scale` and validate.
    pub fn resolve(mut self, scale: Scale, ov: &Overrides) -> Result<Self, CliError> {
        use ExperimentKind as E;
        let full = scale == Scale::Full;
        let (steps, eps) = match self.target {
            TargetKind::Gaussian => (50, 0.05),
            t => shadowflow::targets::default_leapfrog(t.name()).expect("built-in target"),
        };
        self.leapfrog_steps.get_or_insert(steps);
        self.step_size.get_or_insert(eps);
        self.refresh_offset.get_or_insert(0.5);
        self.refresh_amplitude.get_or_insert(0.25);
        let lengths: Vec<usize> = match (self.experiment, full) {
            (E::OrbitError, false) => (1..=150).collect(),
            (E::OrbitError, true) => (1..=300).collect(),
            (E::Delta, _) => vec![1],
            (E::ShadowWindow, false) => vec![10, 25, 50, 100, 150, 200],
            (E::ShadowWindow, true) => vec![10, 50, 100, 200, 500, 1000, 1500],
            (E::SamplingError, false) | (E::DensityError, false) => vec![500],
            (E::SamplingError, true) | (E::DensityError, true) => vec![100, 500, 1000],
            (E::ElboCurve, false) => vec![50, 100, 200],
            (E::ElboCurve, true) => vec![50, 100, 200, 500, 1000],
            (E::InversionCheck, _) => vec![100],
            (E::OracleCheck, _) => vec![1, 2, 10, 100],
        };
        self.lengths.get_or_insert(lengths);
        let seeds = match (self.experiment, full) {
            (E::InversionCheck, _) => 5,
            (E::ShadowWindow, false) => 5,
            (E::ElboCurve, false) => 50,
            (_, false) => 20,
            (_, true) => 100,
        };
        self.seeds.get_or_insert(seeds);
        if let Some(s) = ov.seed {
            self.seed = Some(s);
        }
        self.seed.get_or_insert(2024);
        let bits = match (self.experiment, full) {
            (E::InversionCheck, _) | (_, true) => 2048,
            (_, false) => 256,
        };
        if let Some(b) = ov.precision_bits {
            self.precision_bits = Some(b);
        }
        self.precision_bits.get_or_insert(bits);
        self.reference.get_or_insert(ReferenceSpec::Named("fit".into()));
        self.fit_steps.get_or_insert(5000);
        if let Some(o) = &ov.output_dir {
            self.output_dir = Some(o.clone());
        }
        self.output_dir.get_or_insert_with(|| PathBuf::from("out"));
        let draws = match (self.experiment, full) {
            (E::Delta, false) => 200,
            (E::Delta, true) => 1000,
            (E::SamplingError, false) => 2000,
            (E::SamplingError, true) => 10_000,
            (E::DensityError, false) => 50,
            (E::DensityError, true) => 100,
            _ => 0,
        };
        self.draws.get_or_insert(draws);
        self.delta.get_or_insert(shadowflow::shadowing::DEFAULT_DELTA);
        self.scaling_c.get_or_insert(vec![0.5, 1.0, 2.0]);
        self.curvature_probes.get_or_insert(if full { 8 } else { 0 });
        self.error_bound.get_or_insert(false);
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        let lengths = self.lengths.as_deref().unwrap_or(&[]);
        if lengths.is_empty() || lengths.contains(&0) {
            return bad("lengths must be a nonempty list of positive integers");
        }
        if self.seeds == Some(0) {
            return bad("seeds must be at least 1");
        }
        if self.leapfrog_steps == Some(0) || self.step_size.is_some_and(|s| !(s > 0.0)) {
            return bad("leapfrog_steps and step_size must be positive");
        }
        if self.precision_bits.is_some_and(|b| b < 128) {
            return bad("precision_bits must be at least 128");
        }
        if self.delta.is_some_and(|d| !(d > 0.0)) {
            return bad("delta must be positive");
        }
        if self
            .scaling_c
            .as_ref()
            .is_some_and(|c| c.is_empty() || c.iter().any(|v| !(*v > 0.0)))
        {
            return bad("scaling_c must be a nonempty list of positive numbers");
        }
        let needs_draws = matches!(
            self.experiment,
            ExperimentKind::Delta | ExperimentKind::SamplingError | ExperimentKind::DensityError
        );
        if needs_draws && self.draws == Some(0) {
            return bad("draws must be at least 1");
        }
        if matches!(self.target, TargetKind::Linreg | TargetKind::Logreg) && self.dataset_path.is_none() {
            return bad("regression targets need dataset_path");
        }
        match &self.reference {
            Some(ReferenceSpec::Named(n)) if n != "fit" && n != "standard" => {
                bad("reference must be \"fit\", \"standard\", or { mean, log_std }")
            }
            Some(ReferenceSpec::Inline { mean, log_std }) if mean.len() != log_std.len() => {
                bad("reference mean and log_std differ in length")
            }
            _ => Ok(()),
        }
    }

    pub fn lengths(&self) -> &[usize] {
        self.lengths.as_deref().expect("resolved")
    }
    pub fn seeds(&self) -> usize {
        self.seeds.expect("resolved")
    }
    pub fn seed(&self) -> u64 {
        self.seed.expect("resolved")
    }
    pub fn bits(&self) -> u32 {
        self.precision_bits.expect("resolved")
    }
    pub fn draws(&self) -> usize {
        self.draws.expect("resolved")
    }
    pub fn delta(&self) -> f64 {
        self.delta.expect("resolved")
    }
    pub fn output_dir(&self) -> &Path {
        self.output_dir.as_deref().expect("resolved")
    }
}
