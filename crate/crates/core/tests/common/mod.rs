//! Shared helpers: a structural-family generator that does not go through the
//! library's generators, and brute-force reference computations.
#![allow(dead_code)]

use multisrc::{Distribution, RngHandle, SourceFamily};

/// Random weights on `n` cells, roughly a third of them zero when `sparse`.
pub fn random_weights(n: usize, sparse: bool, rng: &mut RngHandle) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| {
            if sparse && rng.uniform() < 0.3 {
                0.0
            } else {
                // Heavy-ish tail so some cells dominate.
                (-rng.uniform().max(1e-300).ln()).powf(2.0)
            }
        })
        .collect();
    if w.iter().all(|&v| v == 0.0) {
        w[rng.below(n)] = 1.0;
    }
    w
}

pub fn normalise(w: &[f64]) -> Vec<f64> {
    let t: f64 = w.iter().sum();
    w.iter().map(|v| v / t).collect()
}

/// Reference shapes drawn for corpus families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Uniform,
    Random,
    Zipf,
    Heavy,
}

pub fn reference(shape: Shape, n: usize, rng: &mut RngHandle) -> Vec<f64> {
    match shape {
        Shape::Uniform => vec![1.0 / n as f64; n],
        Shape::Random => normalise(&random_weights(n, true, rng)),
        Shape::Zipf => normalise(&(1..=n).map(|i| 1.0 / i as f64).collect::<Vec<_>>()),
        Shape::Heavy => {
            let mut v = vec![0.5 / (n - 1) as f64; n];
            v[0] = 0.5;
            v
        }
    }
}

/// A family satisfying the shared-sign condition with respect to `q`: a random
/// split into `A` (mass added) and `B` (mass removed), then per source a random
/// moved mass spread over `B` in proportion to random weights capped by `q`,
/// and over `A` in proportion to other random weights. Returns the family with
/// the generator's `A`/`B` labels.
pub fn structural_family(q: Vec<f64>, s: usize, rng: &mut RngHandle) -> (SourceFamily, Vec<bool>) {
    let n = q.len();
    let mut in_a: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.5).collect();
    if in_a.iter().all(|&a| a) {
        in_a[rng.below(n)] = false;
    }
    if in_a.iter().all(|&a| !a) {
        in_a[rng.below(n)] = true;
    }
    let mut sources = Vec::with_capacity(s);
    for _ in 0..s {
        // Fraction of each B cell removed, with a common scale so the total is bounded by q(B).
        let scale = rng.uniform();
        let removed: Vec<f64> = (0..n)
            .map(|x| if in_a[x] { 0.0 } else { q[x] * scale * rng.uniform() })
            .collect();
        let m: f64 = removed.iter().sum();
        let wa: Vec<f64> = (0..n)
            .map(|x| if in_a[x] { rng.uniform() + 0.01 } else { 0.0 })
            .collect();
        let ta: f64 = wa.iter().sum();
        let p: Vec<f64> = (0..n)
            .map(|x| {
                if in_a[x] {
                    q[x] + m * wa[x] / ta
                } else {
                    q[x] - removed[x]
                }
            })
            .collect();
        sources.push(p);
    }
    let q = Distribution::new(q).expect("reference is a distribution");
    let sources = sources
        .into_iter()
        .map(|p| Distribution::new(p).expect("sources are distributions"))
        .collect();
    let mut fam = SourceFamily::new(q, sources).expect("same domain");
    fam.verify().expect("generator respects the sign pattern");
    (fam, in_a)
}

/// A corpus entry: shape `i % 4`, `n ∈ [2, max_n]`, `s ∈ [2, max_s]`.
pub fn corpus_family(i: u64, max_n: usize, max_s: usize, seed: u64) -> (SourceFamily, Shape) {
    let mut rng = RngHandle::new(seed, i);
    let shape = [Shape::Uniform, Shape::Random, Shape::Zipf, Shape::Heavy][(i % 4) as usize];
    let n = 2 + rng.below(max_n - 1);
    let s = 2 + rng.below(max_s - 1);
    let q = reference(shape, n, &mut rng);
    (structural_family(q, s, &mut rng).0, shape)
}

/// `Σ_{i<j} ⟨p_i, p_j⟩ / C(s, 2)` by direct double loop.
pub fn brute_collision_expectation(fam: &SourceFamily) -> f64 {
    let src = fam.sources();
    let s = src.len();
    let mut total = 0.0;
    for i in 0..s {
        for j in i + 1..s {
            total += src[i]
                .probs()
                .iter()
                .zip(src[j].probs())
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
    }
    total / (s * (s - 1) / 2) as f64
}

/// `Σ_x (λ_x − s·q(x))²`, the mean of both chi-square statistics.
pub fn brute_chi_square_expectation(fam: &SourceFamily) -> f64 {
    let s = fam.s() as f64;
    let q = fam.reference().probs();
    (0..fam.n())
        .map(|x| {
            let l: f64 = fam.sources().iter().map(|p| p.probs()[x]).sum();
            let d = l - s * q[x];
            d * d
        })
        .sum()
}

/// Prints one acceptance line straight to stdout so it shows under any harness.
pub fn report(id: u32, name: &str, pass: bool, detail: &str) {
    use std::io::Write;
    let tag = if pass { "PASS" } else { "FAIL" };
    let line = format!("{tag} [criterion {id:>2}] {name}: {detail}\n");
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}
