use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::families::{FamilyKind, FamilySpec};

/// Calibrated `c₁` for the uniformity tester at `n = 400`, `ε = 0.5`.
pub const DEFAULT_C1_UNIFORMITY: f64 = 13.0;
/// Calibrated `c₁` for the identity tester with deterministic flattening.
pub const DEFAULT_C1_IDENTITY: f64 = 2.5;
/// Calibrated `c₁` for the closeness tester with randomized flattening.
pub const DEFAULT_C1_CLOSENESS: f64 = 3.0;

pub fn default_c1(tester: TesterKind) -> f64 {
    match tester {
        TesterKind::Uniformity => DEFAULT_C1_UNIFORMITY,
        TesterKind::Identity => DEFAULT_C1_IDENTITY,
        TesterKind::Closeness => DEFAULT_C1_CLOSENESS,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TesterKind {
    Uniformity,
    Identity,
    Closeness,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlatteningMode {
    #[default]
    None,
    Deterministic,
    Randomized,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// Where a report goes; no path means stdout.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

/// One Monte Carlo experiment. Identical configs give identical results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub tester: TesterKind,
    /// The family under test; its `s` is replaced by the tester's sample size.
    pub family: FamilySpec,
    pub epsilon: f64,
    pub c1: f64,
    pub trials: u64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub flattening: FlatteningMode,
    /// Closeness flattening budget; defaults to `min(⌈n^{2/3}/ε^{4/3}⌉, n)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Closeness unequal-size mode: flattening budget `k₁` and the matching source count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<usize>,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentConfig {
    /// A config with the tester's default `c₁`, the matching default flattening
    /// and no output path.
    pub fn new(tester: TesterKind, family: FamilySpec, epsilon: f64, trials: u64, master_seed: u64) -> Self {
        let flattening = match tester {
            TesterKind::Uniformity => FlatteningMode::None,
            TesterKind::Identity => FlatteningMode::Deterministic,
            TesterKind::Closeness => FlatteningMode::Randomized,
        };
        Self {
            tester,
            family,
            epsilon,
            c1: default_c1(tester),
            trials,
            master_seed,
            flattening,
            k: None,
            k1: None,
            output: OutputSpec::default(),
        }
    }

    pub fn with_c1(mut self, c1: f64) -> Self {
        self.c1 = c1;
        self
    }

    pub fn with_flattening(mut self, flattening: FlatteningMode) -> Self {
        self.flattening = flattening;
        self
    }

    pub fn with_k1(mut self, k1: usize) -> Self {
        self.k1 = Some(k1);
        self
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without building the family.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::IncompatibleConfig(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 2.0) {
            return bad(format!("epsilon must lie in (0, 2], got {}", self.epsilon));
        }
        if !(self.c1 > 0.0 && self.c1.is_finite()) {
            return bad(format!("c1 must be positive and finite, got {}", self.c1));
        }
        if self.family.n < 2 {
            return bad(format!("domain size must be at least 2, got {}", self.family.n));
        }
        if self.family.kind == FamilyKind::Definetti {
            return bad("definetti families are probed with the definetti subcommand, not a tester".into());
        }
        match (self.tester, self.flattening) {
            (TesterKind::Uniformity, FlatteningMode::None) => {}
            (TesterKind::Identity, FlatteningMode::None | FlatteningMode::Deterministic) => {}
            (TesterKind::Closeness, FlatteningMode::None | FlatteningMode::Randomized) => {}
            (t, f) => return bad(format!("{t:?} does not support {f:?} flattening")),
        }
        if self.tester != TesterKind::Closeness && (self.k.is_some() || self.k1.is_some()) {
            return bad("k and k1 apply to the closeness tester only".into());
        }
        if self.k.is_some() && self.k1.is_some() {
            return bad("set either k or k1, not both".into());
        }
        if self.k1.is_some() && self.flattening != FlatteningMode::Randomized {
            return bad("k1 needs randomized flattening".into());
        }
        for (name, v) in [("k", self.k), ("k1", self.k1)] {
            if let Some(v) = v {
                if v == 0 || v > self.family.n {
                    return bad(format!("{name} must lie in [1, n = {}], got {v}", self.family.n));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ExperimentConfig {
        ExperimentConfig::new(
            TesterKind::Closeness,
            FamilySpec::new(FamilyKind::Uniform, 100, 0),
            0.5,
            10,
            1,
        )
    }

    #[test]
    fn json_round_trip() {
        let cfg = base().with_k1(20);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn minimal_json_uses_defaults() {
        let text = r#"{"tester":"identity","family":{"kind":"shared_sign","n":50,"s":0,"epsilon":0.5},
            "epsilon":0.5,"c1":2,"trials":10,"flattening":"deterministic"}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(cfg.master_seed, 0);
        assert_eq!(cfg.output, OutputSpec::default());
    }

    #[test]
    fn rejects_incompatible_combinations() {
        let mut cfg = base();
        cfg.flattening = FlatteningMode::Deterministic;
        assert!(cfg.validate().is_err());
        let mut cfg = base();
        cfg.tester = TesterKind::Uniformity;
        assert!(cfg.validate().is_err());
        let mut cfg = base();
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = base();
        cfg.k = Some(101);
        assert!(cfg.validate().is_err());
        let mut cfg = base();
        cfg.family.kind = FamilyKind::Definetti;
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::from_json(r#"{"tester":"identity","bogus":1}"#).is_err());
    }
}
