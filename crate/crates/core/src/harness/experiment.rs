use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, FlatteningMode, TesterKind};
use super::HarnessError;
use crate::dist::{Distribution, SourceFamily};
use crate::families::FamilyKind;
use crate::flattening::{
    flatten_distribution, flatten_plan_deterministic, flatten_plan_randomized, flattened_sq_norm, FlatteningPlan,
};
use crate::numeric::{binomial_ci99, CompensatedSum};
use crate::oracles::{
    closeness_moments_from_parts, collision_variance, identity_moments_from_parts, ChiSqParts, OracleError,
};
use crate::sampling::{
    draw_iid_counts_into, draw_one_per_source_into, draw_poissonized_counts_into, AliasTable, CountVector,
    FamilySampler, RngHandle,
};
use crate::testers::{
    closeness_sizes, closeness_sizes_unequal, closeness_test, identity_sample_size, identity_test,
    uniformity_sample_size, uniformity_test, TesterConfig,
};

/// Randomized flattening is expected to give `‖q′‖₂² ≤ MARKOV_FACTOR/k` in most trials.
pub const MARKOV_FACTOR: f64 = 10.0;

/// What one trial did.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub statistic: f64,
    pub threshold: f64,
    pub rejected: bool,
    pub source_samples: u64,
    pub reference_samples: u64,
    pub flattening_samples: u64,
    pub max_per_source: u64,
    /// Domain size the tester saw.
    pub tester_n: usize,
    /// `‖q′‖₂²` of this trial's plan, when the trial flattened.
    pub flat_sq_norm: Option<f64>,
}

/// Sample accounting summed over trial records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub total_source_samples: u64,
    pub total_reference_samples: u64,
    pub total_flattening_samples: u64,
    /// Mean source samples per trial.
    pub mean_per_trial: f64,
    /// Most source samples in any one trial.
    pub max_per_trial: u64,
    /// Most samples any one source gave in any trial.
    pub max_per_source: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatteningSummary {
    pub mode: FlatteningMode,
    /// Flattening budget (randomized only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub mean_flat_size: f64,
    pub mean_sq_norm: f64,
    pub max_sq_norm: f64,
    /// Deterministic: whether `‖q′‖₂² ≤ 1/n` (up to `1e-12`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub within_one_over_n: Option<bool>,
    /// Randomized: fraction of trials with `‖q′‖₂² > 10/k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction_above_markov: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub tester: TesterKind,
    pub trials: u64,
    pub accepts: u64,
    pub rejects: u64,
    pub accept_rate: f64,
    pub reject_rate: f64,
    /// 99% binomial radius of the rates.
    pub ci_radius: f64,
    pub mean_statistic: f64,
    /// Mean threshold (constant unless randomized flattening changes the domain).
    pub mean_threshold: f64,
    /// Planned number of sources.
    pub s: usize,
    /// Original domain size.
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_expectation: Option<f64>,
    /// Exact variance of the statistic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_variance: Option<f64>,
    /// `|mean_statistic − oracle_expectation| ≤ 5·√(oracle_variance/trials)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_consistent: Option<bool>,
    pub samples: SampleSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flattening: Option<FlatteningSummary>,
    pub master_seed: u64,
}

/// Runs on the global rayon pool.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    Ok(run_trials_detailed(cfg, None)?.0)
}

/// Runs on a dedicated pool of `threads` workers.
pub fn run_trials_on(cfg: &ExperimentConfig, threads: usize) -> Result<ExperimentResult, HarnessError> {
    Ok(run_trials_detailed(cfg, Some(threads))?.0)
}

/// The result plus every trial record in trial order.
pub fn run_trials_detailed(
    cfg: &ExperimentConfig,
    threads: Option<usize>,
) -> Result<(ExperimentResult, Vec<TrialRecord>), HarnessError> {
    cfg.validate()?;
    let pipeline = Pipeline::prepare(cfg)?;
    let run = || -> Result<Vec<TrialRecord>, HarnessError> {
        (0..cfg.trials)
            .into_par_iter()
            .map(|t| pipeline.trial(&mut RngHandle::new(cfg.master_seed, t)))
            .collect()
    };
    let records = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| HarnessError::IncompatibleConfig(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    let result = pipeline.aggregate(cfg, &records);
    Ok((result, records))
}

struct Oracle {
    expectation: f64,
    variance: Option<f64>,
}

enum Stage {
    Uniformity {
        tcfg: TesterConfig,
    },
    Identity {
        tcfg: TesterConfig,
        q_test: Distribution,
        plan: Option<FlatteningPlan>,
        sq_norm: f64,
    },
    Closeness {
        tcfg: TesterConfig,
        q: Distribution,
        q_table: AliasTable,
        budget: Option<usize>,
    },
}

struct Pipeline {
    sampler: FamilySampler,
    s: usize,
    n: usize,
    stage: Stage,
    oracle: Option<Oracle>,
}

fn incompatible(m: impl Into<String>) -> HarnessError {
    HarnessError::IncompatibleConfig(m.into())
}

impl Pipeline {
    fn prepare(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let n = cfg.family.n;
        let q = cfg.family.reference.build(n)?;
        let base = TesterConfig::new(n, cfg.epsilon, cfg.c1)?;
        let (s, stage) = match cfg.tester {
            TesterKind::Uniformity => {
                if !q.is_uniform(1e-12) {
                    return Err(incompatible("the uniformity tester needs a uniform reference"));
                }
                (uniformity_sample_size(&base)?, Stage::Uniformity { tcfg: base })
            }
            TesterKind::Identity => {
                let plan = (cfg.flattening == FlatteningMode::Deterministic).then(|| flatten_plan_deterministic(&q));
                let q_test = match &plan {
                    Some(p) => flatten_distribution(&q, p)?,
                    None => q.clone(),
                };
                let tcfg = base.on_domain(q_test.len());
                let sq_norm = crate::dist::lp_power_sum(q_test.probs(), 2).expect("order 2");
                (
                    identity_sample_size(&tcfg, &q_test)?,
                    Stage::Identity {
                        tcfg,
                        q_test,
                        plan,
                        sq_norm,
                    },
                )
            }
            TesterKind::Closeness => {
                let (budget, s) = match (cfg.k1, cfg.k) {
                    (Some(k1), _) => (k1, closeness_sizes_unequal(&base, k1)?),
                    (None, k) => {
                        let tcfg = match k {
                            Some(k) => base.with_k(k)?,
                            None => base,
                        };
                        closeness_sizes(&tcfg)?
                    }
                };
                let randomized = cfg.flattening == FlatteningMode::Randomized;
                (
                    s,
                    Stage::Closeness {
                        tcfg: base,
                        q_table: AliasTable::new(&q),
                        q: q.clone(),
                        budget: randomized.then_some(budget),
                    },
                )
            }
        };
        if cfg.family.kind == FamilyKind::MomentMatching && s > n {
            return Err(incompatible(format!(
                "the moment-matching family needs s ≤ n, but the tester asks for s = {s} at n = {n}"
            )));
        }
        let mut spec = cfg.family.clone();
        spec.s = s;
        let family = spec.generate()?;
        if family.reference() != &q {
            return Err(incompatible("the family's reference differs from its spec"));
        }
        let oracle = oracle_for(&stage, &family)?;
        Ok(Self {
            sampler: FamilySampler::new(&family),
            s,
            n,
            stage,
            oracle,
        })
    }

    fn trial(&self, rng: &mut RngHandle) -> Result<TrialRecord, HarnessError> {
        match &self.stage {
            Stage::Uniformity { tcfg } => {
                let mut buf = Vec::with_capacity(self.s);
                draw_one_per_source_into(&self.sampler, rng, &mut buf);
                let v = uniformity_test(tcfg, &buf)?;
                Ok(TrialRecord {
                    statistic: v.statistic,
                    threshold: v.threshold,
                    rejected: v.rejects(),
                    source_samples: self.s as u64,
                    reference_samples: 0,
                    flattening_samples: 0,
                    max_per_source: 1,
                    tester_n: tcfg.n,
                    flat_sq_norm: None,
                })
            }
            Stage::Identity {
                tcfg,
                q_test,
                plan,
                sq_norm,
            } => {
                let mut counts = CountVector::zeros(tcfg.n);
                let log = draw_poissonized_counts_into(&self.sampler, rng, &mut counts, |x, r| match plan {
                    Some(p) => p.lift(x, r),
                    None => x,
                });
                let v = identity_test(tcfg, q_test, &counts, self.s)?;
                Ok(TrialRecord {
                    statistic: v.statistic,
                    threshold: v.threshold,
                    rejected: v.rejects(),
                    source_samples: log.total,
                    reference_samples: 0,
                    flattening_samples: 0,
                    max_per_source: log.max_per_source,
                    tester_n: tcfg.n,
                    flat_sq_norm: plan.as_ref().map(|_| *sq_norm),
                })
            }
            Stage::Closeness {
                tcfg,
                q,
                q_table,
                budget,
            } => {
                // The plan is drawn before any testing sample.
                let plan = match budget {
                    Some(k) => Some(flatten_plan_randomized(q_table, *k as u64, rng)?),
                    None => None,
                };
                let flat_n = plan.as_ref().map_or(self.n, |p| p.flat_size());
                let lift = |x: usize, r: &mut RngHandle| match &plan {
                    Some(p) => p.lift(x, r),
                    None => x,
                };
                let mut t = CountVector::zeros(flat_n);
                let log = draw_poissonized_counts_into(&self.sampler, rng, &mut t, lift);
                let mut y = CountVector::zeros(flat_n);
                let reference_samples = draw_iid_counts_into(q_table, self.s as f64, rng, &mut y, lift)?;
                let v = closeness_test(&tcfg.on_domain(flat_n), &t, &y, self.s)?;
                let flat_sq_norm = match &plan {
                    Some(p) => Some(flattened_sq_norm(q, p)?),
                    None => None,
                };
                Ok(TrialRecord {
                    statistic: v.statistic,
                    threshold: v.threshold,
                    rejected: v.rejects(),
                    source_samples: log.total,
                    reference_samples,
                    flattening_samples: (flat_n - self.n) as u64,
                    max_per_source: log.max_per_source,
                    tester_n: flat_n,
                    flat_sq_norm,
                })
            }
        }
    }

    fn aggregate(&self, cfg: &ExperimentConfig, records: &[TrialRecord]) -> ExperimentResult {
        let trials = records.len() as u64;
        let tf = trials as f64;
        let rejects = records.iter().filter(|r| r.rejected).count() as u64;
        let accepts = trials - rejects;
        let accept_rate = accepts as f64 / tf;
        let mean = |f: &dyn Fn(&TrialRecord) -> f64| {
            let mut acc = CompensatedSum::new();
            records.iter().for_each(|r| acc.add(f(r)));
            acc.value() / tf
        };
        let mean_statistic = mean(&|r| r.statistic);
        let samples = SampleSummary {
            total_source_samples: records.iter().map(|r| r.source_samples).sum(),
            total_reference_samples: records.iter().map(|r| r.reference_samples).sum(),
            total_flattening_samples: records.iter().map(|r| r.flattening_samples).sum(),
            mean_per_trial: mean(&|r| r.source_samples as f64),
            max_per_trial: records.iter().map(|r| r.source_samples).max().unwrap_or(0),
            max_per_source: records.iter().map(|r| r.max_per_source).max().unwrap_or(0),
        };
        let flattening = match &self.stage {
            Stage::Identity {
                plan: Some(_),
                sq_norm,
                tcfg,
                ..
            } => Some(FlatteningSummary {
                mode: FlatteningMode::Deterministic,
                k: None,
                mean_flat_size: tcfg.n as f64,
                mean_sq_norm: *sq_norm,
                max_sq_norm: *sq_norm,
                within_one_over_n: Some(*sq_norm <= 1.0 / self.n as f64 + 1e-12),
                fraction_above_markov: None,
            }),
            Stage::Closeness { budget: Some(k), .. } => {
                let norms: Vec<f64> = records.iter().filter_map(|r| r.flat_sq_norm).collect();
                let limit = MARKOV_FACTOR / *k as f64;
                Some(FlatteningSummary {
                    mode: FlatteningMode::Randomized,
                    k: Some(*k),
                    mean_flat_size: mean(&|r| r.tester_n as f64),
                    mean_sq_norm: mean(&|r| r.flat_sq_norm.unwrap_or(0.0)),
                    max_sq_norm: norms.iter().copied().fold(0.0, f64::max),
                    within_one_over_n: None,
                    fraction_above_markov: Some(norms.iter().filter(|&&v| v > limit).count() as f64 / tf),
                })
            }
            _ => None,
        };
        let (oracle_expectation, oracle_variance, oracle_consistent) = match &self.oracle {
            Some(o) => {
                let consistent = o.variance.map(|v| {
                    (mean_statistic - o.expectation).abs() <= 5.0 * (v / tf).sqrt() + 1e-9 * o.expectation.abs()
                });
                (Some(o.expectation), o.variance, consistent)
            }
            None => (None, None, None),
        };
        ExperimentResult {
            tester: cfg.tester,
            trials,
            accepts,
            rejects,
            accept_rate,
            reject_rate: rejects as f64 / tf,
            ci_radius: binomial_ci99(accept_rate, trials),
            mean_statistic,
            mean_threshold: mean(&|r| r.threshold),
            s: self.s,
            n: self.n,
            oracle_expectation,
            oracle_variance,
            oracle_consistent,
            samples,
            flattening,
            master_seed: cfg.master_seed,
        }
    }
}

/// Exact moments of the statistic the stage computes, when the family has a
/// partition and the plan is fixed in advance.
fn oracle_for(stage: &Stage, family: &SourceFamily) -> Result<Option<Oracle>, HarnessError> {
    if family.partition().is_none() {
        return Ok(None);
    }
    let parts = || match ChiSqParts::from_family(family) {
        Ok(p) => Ok(Some(p)),
        Err(OracleError::MissingPartition) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(match stage {
        Stage::Uniformity { .. } => {
            let m = collision_variance(family)?;
            Some(Oracle {
                expectation: m.expectation,
                variance: m.statistic_variance(),
            })
        }
        Stage::Identity { plan, .. } => match parts()? {
            Some(p) => {
                let p = match plan {
                    Some(plan) => p.flattened(plan)?,
                    None => p,
                };
                let m = identity_moments_from_parts(&p)?;
                Some(Oracle {
                    expectation: m.expectation,
                    variance: Some(m.variance_exact),
                })
            }
            None => None,
        },
        Stage::Closeness { budget: None, .. } => match parts()? {
            Some(p) => {
                let m = closeness_moments_from_parts(&p)?;
                Some(Oracle {
                    expectation: m.expectation,
                    variance: Some(m.variance_exact),
                })
            }
            None => None,
        },
        Stage::Closeness { .. } => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{FamilySpec, ReferenceSpec};

    fn cfg(tester: TesterKind, kind: FamilyKind, n: usize, eps: f64, trials: u64) -> ExperimentConfig {
        ExperimentConfig::new(
            tester,
            FamilySpec::new(kind, n, 0).with_epsilon(eps).with_seed(9),
            eps,
            trials,
            42,
        )
    }

    #[test]
    fn rates_sum_to_one_and_accounting_matches_records() {
        for tester in [TesterKind::Uniformity, TesterKind::Identity, TesterKind::Closeness] {
            let c = cfg(tester, FamilyKind::SharedSign, 60, 0.5, 50);
            let (r, recs) = run_trials_detailed(&c, Some(1)).unwrap();
            assert!((r.accept_rate + r.reject_rate - 1.0).abs() < 1e-15);
            assert_eq!(r.accepts + r.rejects, 50);
            assert_eq!(
                r.samples.total_source_samples,
                recs.iter().map(|r| r.source_samples).sum::<u64>()
            );
            assert_eq!(
                r.samples.total_reference_samples,
                recs.iter().map(|r| r.reference_samples).sum::<u64>()
            );
            assert_eq!(
                r.samples.total_flattening_samples,
                recs.iter().map(|r| r.flattening_samples).sum::<u64>()
            );
            assert_eq!(r.master_seed, 42);
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let c = cfg(TesterKind::Closeness, FamilyKind::SharedSign, 80, 0.5, 40);
        let a = run_trials_on(&c, 1).unwrap();
        let b = run_trials_on(&c, 3).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn uniformity_needs_uniform_reference() {
        let mut c = cfg(TesterKind::Uniformity, FamilyKind::Uniform, 50, 0.5, 5);
        c.family.reference = ReferenceSpec::Zipf { exponent: 1.0 };
        assert!(matches!(run_trials(&c), Err(HarnessError::IncompatibleConfig(_))));
    }

    #[test]
    fn moment_matching_needs_small_s() {
        let c = cfg(TesterKind::Uniformity, FamilyKind::MomentMatching, 5, 0.25, 5);
        assert!(matches!(run_trials(&c), Err(HarnessError::IncompatibleConfig(_))));
    }

    #[test]
    fn oracles_attach_where_defined() {
        let r = run_trials(&cfg(TesterKind::Identity, FamilyKind::Uniform, 40, 0.5, 20)).unwrap();
        assert_eq!(r.oracle_expectation, Some(0.0));
        assert!(r.flattening.unwrap().within_one_over_n.unwrap());
        let r = run_trials(&cfg(TesterKind::Closeness, FamilyKind::Uniform, 40, 0.5, 20)).unwrap();
        assert!(r.oracle_expectation.is_none());
        assert!(r.flattening.unwrap().fraction_above_markov.is_some());
        let r = run_trials(&cfg(TesterKind::Uniformity, FamilyKind::MomentMatching, 400, 1.0, 5).with_c1(1.0)).unwrap();
        assert!(r.oracle_expectation.is_none());
    }

    #[test]
    fn identity_oracle_matches_simulation() {
        let c = cfg(TesterKind::Identity, FamilyKind::SharedSign, 30, 0.5, 4000);
        let r = run_trials(&c).unwrap();
        assert_eq!(r.oracle_consistent, Some(true), "{r:?}");
    }
}
