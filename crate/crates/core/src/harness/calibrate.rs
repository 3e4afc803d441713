use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, FlatteningMode, OutputSpec, TesterKind};
use super::experiment::run_trials;
use super::HarnessError;
use crate::families::{FamilyKind, FamilySpec, ReferenceSpec};
use crate::numeric::binomial_ci99;
use crate::testers::Decision;

/// Grid `{0.5, 1.0, …, 16}`.
pub const C1_GRID_STEP: f64 = 0.5;
pub const C1_GRID_MAX: f64 = 16.0;

/// A family and the verdict a correct tester should give on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCase {
    pub family: FamilySpec,
    pub expect: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRequest {
    pub tester: TesterKind,
    pub n: usize,
    pub epsilon: f64,
    #[serde(default = "default_target")]
    pub target_error: f64,
    pub references: Vec<ReferenceCase>,
    pub trials: u64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub flattening: FlatteningMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<usize>,
}

fn default_target() -> f64 {
    1.0 / 3.0
}

impl CalibrationRequest {
    /// The default reference set with the tester's usual flattening.
    pub fn new(tester: TesterKind, n: usize, epsilon: f64, trials: u64, master_seed: u64) -> Self {
        let flattening = match tester {
            TesterKind::Uniformity => FlatteningMode::None,
            TesterKind::Identity => FlatteningMode::Deterministic,
            TesterKind::Closeness => FlatteningMode::Randomized,
        };
        Self {
            tester,
            n,
            epsilon,
            target_error: default_target(),
            references: default_references(tester, n, epsilon, master_seed),
            trials,
            master_seed,
            flattening,
            k1: None,
        }
    }

    fn experiment(&self, case: &ReferenceCase, c1: f64) -> ExperimentConfig {
        ExperimentConfig {
            tester: self.tester,
            family: case.family.clone(),
            epsilon: self.epsilon,
            c1,
            trials: self.trials,
            master_seed: self.master_seed,
            flattening: self.flattening,
            k: None,
            k1: self.k1,
            output: OutputSpec::default(),
        }
    }
}

/// Error rates at one grid point, in reference order. Evaluation stops at the
/// first reference that misses the target, so later entries may be absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub c1: f64,
    pub errors: Vec<f64>,
    pub ci_radii: Vec<f64>,
    pub qualifies: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub c1: f64,
    pub grid: Vec<GridPoint>,
    /// Whether every error rate at the next grid point stays within the
    /// combined CI of its value at `c1`; `None` when `c1` is the last point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monotone: Option<bool>,
}

/// A completeness family and two soundness families: heterogeneous shared-sign
/// sources `ε` to `2ε` from `q`, and identical sources exactly `ε` from `q`.
/// Uniformity uses a uniform `q`; identity and closeness repeat the set for
/// uniform, Zipf and point-mass-heavy references.
pub fn default_references(tester: TesterKind, n: usize, epsilon: f64, seed: u64) -> Vec<ReferenceCase> {
    let refs = match tester {
        TesterKind::Uniformity => vec![ReferenceSpec::Uniform],
        _ => vec![
            ReferenceSpec::Uniform,
            ReferenceSpec::Zipf { exponent: 1.0 },
            ReferenceSpec::PointMassHeavy { mass: 0.5 },
        ],
    };
    let mut out = Vec::new();
    for r in refs {
        let spec = |kind| {
            FamilySpec::new(kind, n, 0)
                .with_epsilon(epsilon)
                .with_seed(seed)
                .with_reference(r.clone())
        };
        out.push(ReferenceCase {
            family: spec(FamilyKind::Uniform),
            expect: Decision::Accept,
        });
        // Shared-sign sources move between ε/2 and ε; identical-far sources move exactly ε/2.
        for (kind, cap) in [
            (FamilyKind::SharedSign, epsilon),
            (FamilyKind::IdenticalFar, epsilon / 2.0),
        ] {
            out.push(ReferenceCase {
                family: spec(kind).with_max_mass(cap),
                expect: Decision::Reject,
            });
        }
    }
    out
}

/// Smallest grid `c₁` at which every reference's error rate is at most
/// `target_error − ci`.
pub fn calibrate(req: &CalibrationRequest) -> Result<CalibrationResult, HarnessError> {
    if !(req.target_error > 0.0 && req.target_error < 1.0) {
        return Err(HarnessError::CalibrationFailed(format!(
            "target error {} is not achievable",
            req.target_error
        )));
    }
    let has = |d| req.references.iter().any(|r| r.expect == d);
    if !has(Decision::Accept) || !has(Decision::Reject) {
        return Err(HarnessError::IncompatibleConfig(
            "calibration needs at least one completeness and one soundness reference".into(),
        ));
    }
    let steps = (C1_GRID_MAX / C1_GRID_STEP).round() as usize;
    let mut grid = Vec::new();
    for i in 1..=steps {
        let c1 = i as f64 * C1_GRID_STEP;
        let point = evaluate(req, c1, true)?;
        let qualifies = point.qualifies;
        grid.push(point);
        if qualifies {
            let monotone = if i < steps {
                let next = evaluate(req, c1 + C1_GRID_STEP, false)?;
                let here = grid.last().expect("just pushed");
                let ok = here
                    .errors
                    .iter()
                    .zip(&here.ci_radii)
                    .zip(next.errors.iter().zip(&next.ci_radii))
                    .all(|((e, r), (e2, r2))| *e2 <= e + r + r2);
                grid.push(next);
                Some(ok)
            } else {
                None
            };
            return Ok(CalibrationResult { c1, grid, monotone });
        }
    }
    Err(HarnessError::CalibrationFailed(format!(
        "no c1 up to {C1_GRID_MAX} keeps every error rate below {}",
        req.target_error
    )))
}

fn evaluate(req: &CalibrationRequest, c1: f64, stop_early: bool) -> Result<GridPoint, HarnessError> {
    let mut errors = Vec::new();
    let mut ci_radii = Vec::new();
    let mut qualifies = true;
    for case in &req.references {
        let r = run_trials(&req.experiment(case, c1))?;
        let error = match case.expect {
            Decision::Accept => r.reject_rate,
            Decision::Reject => r.accept_rate,
        };
        let ci = binomial_ci99(error, r.trials);
        errors.push(error);
        ci_radii.push(ci);
        if error > req.target_error - ci {
            qualifies = false;
            if stop_early {
                break;
            }
        }
    }
    Ok(GridPoint {
        c1,
        errors,
        ci_radii,
        qualifies,
    })
}
