//! Chi-square goodness of fit for the Poisson and categorical samplers against statrs.

use multisrc::sampling::{draw_categorical, draw_poisson};
use multisrc::{AliasTable, Distribution, RngHandle};
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

const DRAWS: u64 = 200_000;
/// Per-test p-value floor; with a dozen tests the family-wise false alarm rate stays near 1e-4.
const P_FLOOR: f64 = 1e-5;
const MIN_EXPECTED: f64 = 5.0;

/// Pearson statistic over bins merged left to right until each expects at least 5, returning the p-value.
fn gof_p_value(observed: &[u64], probs: &[f64], draws: u64) -> f64 {
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (&obs, &p) in observed.iter().zip(probs) {
        o += obs as f64;
        e += p * draws as f64;
        if e >= MIN_EXPECTED {
            bins.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if let Some(last) = bins.last_mut() {
        last.0 += o;
        last.1 += e;
    }
    let stat: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = (bins.len() - 1) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

fn poisson_gof(lambda: f64, seed: u64) -> f64 {
    let reference = Poisson::new(lambda).unwrap();
    let hi = (lambda + 12.0 * lambda.sqrt() + 20.0) as usize;
    let mut observed = vec![0u64; hi + 1];
    let mut rng = RngHandle::new(seed, 0);
    for _ in 0..DRAWS {
        let k = draw_poisson(lambda, &mut rng).unwrap() as usize;
        observed[k.min(hi)] += 1;
    }
    let mut probs: Vec<f64> = (0..=hi).map(|k| reference.pmf(k as u64)).collect();
    // The last bin takes the upper tail.
    let below: f64 = probs[..hi].iter().sum();
    probs[hi] = 1.0 - below;
    gof_p_value(&observed, &probs, DRAWS)
}

#[test]
fn poisson_matches_reference_on_both_sides_of_the_cutoff() {
    for (i, lambda) in [0.05, 0.5, 3.0, 12.0, 29.9, 30.0, 31.0, 75.0, 400.0, 10_000.0]
        .into_iter()
        .enumerate()
    {
        let p = poisson_gof(lambda, 100 + i as u64);
        assert!(p > P_FLOOR, "lambda {lambda}: p-value {p}");
    }
}

#[test]
fn poisson_zero_rate_is_zero() {
    let mut rng = RngHandle::new(1, 1);
    assert!((0..1000).all(|_| draw_poisson(0.0, &mut rng).unwrap() == 0));
}

#[test]
fn poisson_rejects_bad_rates() {
    let mut rng = RngHandle::new(1, 1);
    for lambda in [-1.0, f64::NAN, f64::INFINITY] {
        assert!(draw_poisson(lambda, &mut rng).is_err());
    }
}

#[test]
fn alias_and_inversion_match_the_distribution() {
    let weights = [0.3, 0.0, 0.05, 0.2, 0.0001, 0.1499, 0.3];
    let p = Distribution::new(weights.to_vec()).unwrap();
    let table = AliasTable::new(&p);
    let mut alias = vec![0u64; weights.len()];
    let mut inversion = vec![0u64; weights.len()];
    let mut rng = RngHandle::new(7, 3);
    for _ in 0..DRAWS {
        alias[table.sample(&mut rng)] += 1;
        inversion[draw_categorical(&p, &mut rng)] += 1;
    }
    assert_eq!(alias[1], 0);
    assert_eq!(inversion[1], 0);
    let support: Vec<usize> = (0..weights.len()).filter(|&x| weights[x] > 0.0).collect();
    let pick = |v: &[u64]| support.iter().map(|&x| v[x]).collect::<Vec<_>>();
    let probs: Vec<f64> = support.iter().map(|&x| weights[x]).collect();
    assert!(gof_p_value(&pick(&alias), &probs, DRAWS) > P_FLOOR);
    assert!(gof_p_value(&pick(&inversion), &probs, DRAWS) > P_FLOOR);
}

#[test]
fn alias_table_on_a_long_zipf_tail() {
    let n = 2000;
    let w: Vec<f64> = (1..=n).map(|i| 1.0 / i as f64).collect();
    let t: f64 = w.iter().sum();
    let probs: Vec<f64> = w.iter().map(|v| v / t).collect();
    let table = AliasTable::new(&Distribution::new(probs.clone()).unwrap());
    let mut observed = vec![0u64; n];
    let mut rng = RngHandle::new(11, 0);
    for _ in 0..DRAWS {
        observed[table.sample(&mut rng)] += 1;
    }
    assert!(gof_p_value(&observed, &probs, DRAWS) > P_FLOOR);
}
