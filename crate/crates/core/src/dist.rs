//! Validated probability vectors, distances, and the shared-sign structure of a source family.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{compensated_sum, CompensatedSum};

/// Entries below this are rejected as negative mass; entries in `[-1e-12, 0)` are clamped to 0.
pub const NEGATIVE_TOLERANCE: f64 = 1e-12;
/// Allowed deviation of the raw sum from 1 before renormalisation is refused.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;
/// `|p(x) − q(x)|` at or below this counts as equality when deciding signs.
pub const SIGN_TOLERANCE: f64 = 1e-14;
/// Sums within this many ulps of one are not rescaled.
const RESCALE_ULPS: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("distribution has no entries")]
    Empty,
    #[error("entry {index} is not a finite number")]
    NonFinite { index: usize },
    #[error("entry {index} has negative mass {value}")]
    NegativeMass { index: usize, value: f64 },
    #[error("entries sum to {sum}, outside 1 ± 1e-9")]
    NotNormalized { sum: f64 },
    #[error("domain sizes differ: {left} vs {right}")]
    DomainMismatch { left: usize, right: usize },
    #[error("unsupported norm order {0}; expected 1, 2, 3 or 4")]
    UnsupportedOrder(u32),
    #[error("sources {j} and {k} deviate from the reference in opposite directions at index {x}")]
    StructuralViolation { x: usize, j: usize, k: usize },
    #[error("family has no verified sign partition")]
    MissingPartition,
    #[error("family has no sources")]
    NoSources,
    #[error("partition does not match the family: {0}")]
    InvalidPartition(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// A probability vector over `{0, …, n−1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Validates and renormalises raw masses.
    pub fn new(raw: Vec<f64>) -> Result<Self, DistError> {
        validate_distribution(raw)
    }

    /// Uniform distribution over `n` elements.
    pub fn uniform(n: usize) -> Result<Self, DistError> {
        if n == 0 {
            return Err(DistError::Empty);
        }
        Ok(Self {
            probs: vec![1.0 / n as f64; n],
        })
    }

    /// All mass on `index`.
    pub fn point_mass(n: usize, index: usize) -> Result<Self, DistError> {
        if index >= n {
            return Err(DistError::DomainMismatch {
                left: n,
                right: index + 1,
            });
        }
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Ok(Self { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    /// True when every entry equals `1/n` to within `tol`.
    pub fn is_uniform(&self, tol: f64) -> bool {
        let u = 1.0 / self.len() as f64;
        self.probs.iter().all(|&p| (p - u).abs() <= tol)
    }

    /// Parses one probability per line. Blank lines and `#` comments are skipped.
    pub fn parse_text(text: &str) -> Result<Self, DistError> {
        let mut raw = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            raw.push(parse_probability(t, i + 1)?);
        }
        validate_distribution(raw)
    }

    /// One probability per line, shortest round-trip decimal form.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.len() * 8);
        for p in &self.probs {
            out.push_str(&format!("{p}\n"));
        }
        out
    }
}

impl TryFrom<Vec<f64>> for Distribution {
    type Error = DistError;

    fn try_from(raw: Vec<f64>) -> Result<Self, Self::Error> {
        validate_distribution(raw)
    }
}

impl From<Distribution> for Vec<f64> {
    fn from(d: Distribution) -> Self {
        d.probs
    }
}

fn parse_probability(token: &str, line: usize) -> Result<f64, DistError> {
    let v: f64 = token.parse().map_err(|_| DistError::Parse {
        line,
        message: format!("expected a decimal probability, found {token:?}"),
    })?;
    if !v.is_finite() {
        return Err(DistError::Parse {
            line,
            message: "probability is not finite".into(),
        });
    }
    Ok(v)
}

/// Checks non-negativity and normalisation, clamps `[-1e-12, 0)` to zero and
/// rescales so the entries sum to one. Sums already within a few ulps of one are
/// kept as given, so validating a validated vector is the identity.
pub fn validate_distribution(mut raw: Vec<f64>) -> Result<Distribution, DistError> {
    if raw.is_empty() {
        return Err(DistError::Empty);
    }
    for (index, v) in raw.iter_mut().enumerate() {
        if !v.is_finite() {
            return Err(DistError::NonFinite { index });
        }
        if *v < -NEGATIVE_TOLERANCE {
            return Err(DistError::NegativeMass { index, value: *v });
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let sum = compensated_sum(raw.iter().copied());
    if !((1.0 - NORMALIZATION_TOLERANCE)..=(1.0 + NORMALIZATION_TOLERANCE)).contains(&sum) {
        return Err(DistError::NotNormalized { sum });
    }
    if (sum - 1.0).abs() > RESCALE_ULPS * f64::EPSILON {
        for v in raw.iter_mut() {
            *v /= sum;
        }
    }
    Ok(Distribution { probs: raw })
}

fn check_same_len(a: usize, b: usize) -> Result<(), DistError> {
    if a == b {
        Ok(())
    } else {
        Err(DistError::DomainMismatch { left: a, right: b })
    }
}

/// `Σ_x |p(x) − q(x)|`.
pub fn l1_distance(p: &Distribution, q: &Distribution) -> Result<f64, DistError> {
    check_same_len(p.len(), q.len())?;
    Ok(compensated_sum(
        p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()),
    ))
}

/// Total variation distance, half the ℓ₁ distance.
pub fn tv_distance(p: &Distribution, q: &Distribution) -> Result<f64, DistError> {
    Ok(0.5 * l1_distance(p, q)?)
}

/// `(Σ_x |v(x)|^order)^(1/order)` for `order ∈ {1, 2, 3, 4}`.
pub fn lp_norm(v: &[f64], order: u32) -> Result<f64, DistError> {
    let s = lp_power_sum(v, order)?;
    Ok(match order {
        1 => s,
        2 => s.sqrt(),
        3 => s.cbrt(),
        _ => s.sqrt().sqrt(),
    })
}

/// `Σ_x |v(x)|^order`, the norm without the final root.
pub fn lp_power_sum(v: &[f64], order: u32) -> Result<f64, DistError> {
    let f: fn(f64) -> f64 = match order {
        1 => |a| a.abs(),
        2 => |a| a * a,
        3 => |a| a.abs() * a * a,
        4 => |a| (a * a) * (a * a),
        _ => return Err(DistError::UnsupportedOrder(order)),
    };
    Ok(compensated_sum(v.iter().map(|&a| f(a))))
}

/// Which side of the reference a domain element sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    /// Every source is at or above the reference.
    A,
    /// Every source is at or below the reference.
    B,
}

impl Side {
    /// `+1` for `A`, `−1` for `B`.
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Side::A => 1.0,
            Side::B => -1.0,
        }
    }
}

/// A split of the domain into the sets `A` and `B`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    sides: Vec<Side>,
}

impl Partition {
    pub fn from_sides(sides: Vec<Side>) -> Self {
        Self { sides }
    }

    pub fn sides(&self) -> &[Side] {
        &self.sides
    }

    pub fn side(&self, x: usize) -> Side {
        self.sides[x]
    }

    pub fn len(&self) -> usize {
        self.sides.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sides.is_empty()
    }

    pub fn a(&self) -> Vec<usize> {
        self.indices(Side::A)
    }

    pub fn b(&self) -> Vec<usize> {
        self.indices(Side::B)
    }

    fn indices(&self, side: Side) -> Vec<usize> {
        self.sides
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == side)
            .map(|(x, _)| x)
            .collect()
    }
}

/// A reference distribution `q` and sources `p_1 … p_s` on the same domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FamilyFile", into = "FamilyFile")]
pub struct SourceFamily {
    reference: Distribution,
    sources: Vec<Distribution>,
    partition: Option<Partition>,
}

#[derive(Serialize, Deserialize)]
struct FamilyFile {
    reference: Distribution,
    sources: Vec<Distribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    partition: Option<Partition>,
}

impl TryFrom<FamilyFile> for SourceFamily {
    type Error = DistError;

    fn try_from(f: FamilyFile) -> Result<Self, Self::Error> {
        let family = SourceFamily::new(f.reference, f.sources)?;
        match f.partition {
            Some(p) => family.with_partition(p),
            None => Ok(family),
        }
    }
}

impl From<SourceFamily> for FamilyFile {
    fn from(f: SourceFamily) -> Self {
        FamilyFile {
            reference: f.reference,
            sources: f.sources,
            partition: f.partition,
        }
    }
}

impl SourceFamily {
    pub fn new(reference: Distribution, sources: Vec<Distribution>) -> Result<Self, DistError> {
        if sources.is_empty() {
            return Err(DistError::NoSources);
        }
        for p in &sources {
            check_same_len(reference.len(), p.len())?;
        }
        Ok(Self {
            reference,
            sources,
            partition: None,
        })
    }

    /// Builds the family and runs [`verify_structural_condition`] on it.
    pub fn verified(reference: Distribution, sources: Vec<Distribution>) -> Result<Self, DistError> {
        let mut family = Self::new(reference, sources)?;
        family.verify()?;
        Ok(family)
    }

    /// Verifies the structural condition and stores the partition.
    pub fn verify(&mut self) -> Result<&Partition, DistError> {
        let partition = verify_structural_condition(self)?;
        Ok(self.partition.insert(partition))
    }

    /// Attaches a partition after checking every source respects it.
    pub fn with_partition(mut self, partition: Partition) -> Result<Self, DistError> {
        check_partition(&self, &partition)?;
        self.partition = Some(partition);
        Ok(self)
    }

    pub fn reference(&self) -> &Distribution {
        &self.reference
    }

    pub fn sources(&self) -> &[Distribution] {
        &self.sources
    }

    pub fn partition(&self) -> Option<&Partition> {
        self.partition.as_ref()
    }

    /// Domain size `n`.
    pub fn n(&self) -> usize {
        self.reference.len()
    }

    /// Number of sources `s`.
    pub fn s(&self) -> usize {
        self.sources.len()
    }

    /// `λ_x = Σ_j p_j(x)`.
    pub fn lambda(&self) -> Vec<f64> {
        (0..self.n())
            .map(|x| compensated_sum(self.sources.iter().map(|p| p.probs[x])))
            .collect()
    }

    /// Text form: the reference block followed by one block per source,
    /// blocks separated by a blank line.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# reference\n");
        out.push_str(&self.reference.to_text());
        for (j, p) in self.sources.iter().enumerate() {
            out.push_str(&format!("\n# source {}\n", j + 1));
            out.push_str(&p.to_text());
        }
        out
    }

    /// Parses the text form written by [`SourceFamily::to_text`].
    pub fn parse_text(text: &str) -> Result<Self, DistError> {
        let mut blocks: Vec<Vec<f64>> = Vec::new();
        let mut current: Vec<f64> = Vec::new();
        let mut first_line = 0usize;
        let mut block_lines: Vec<usize> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.starts_with('#') {
                continue;
            }
            if t.is_empty() {
                if !current.is_empty() {
                    blocks.push(std::mem::take(&mut current));
                    block_lines.push(first_line);
                }
                continue;
            }
            if current.is_empty() {
                first_line = i + 1;
            }
            current.push(parse_probability(t, i + 1)?);
        }
        if !current.is_empty() {
            blocks.push(current);
            block_lines.push(first_line);
        }
        let mut dists = Vec::with_capacity(blocks.len());
        for (raw, line) in blocks.into_iter().zip(block_lines) {
            dists.push(validate_distribution(raw).map_err(|e| DistError::Parse {
                line,
                message: e.to_string(),
            })?);
        }
        if dists.is_empty() {
            return Err(DistError::Empty);
        }
        let reference = dists.remove(0);
        Self::new(reference, dists)
    }
}

#[derive(Clone, Copy)]
enum CellSign {
    Equal,
    Above,
    Below,
}

#[inline]
fn cell_sign(p: f64, q: f64) -> CellSign {
    let d = p - q;
    if d > SIGN_TOLERANCE {
        CellSign::Above
    } else if d < -SIGN_TOLERANCE {
        CellSign::Below
    } else {
        CellSign::Equal
    }
}

/// Finds the sign partition: `x ∈ B` iff some source is strictly below `q(x)`
/// and none strictly above. Elements where every source equals `q(x)` go to `A`.
///
/// On failure reports the smallest offending `x` with the first source above
/// and the first source below it.
pub fn verify_structural_condition(family: &SourceFamily) -> Result<Partition, DistError> {
    let n = family.n();
    let q = family.reference.probs();
    let mut first_above: Vec<Option<usize>> = vec![None; n];
    let mut first_below: Vec<Option<usize>> = vec![None; n];
    for (j, p) in family.sources.iter().enumerate() {
        for (x, (&pv, &qv)) in p.probs.iter().zip(q).enumerate() {
            match cell_sign(pv, qv) {
                CellSign::Above => {
                    first_above[x].get_or_insert(j);
                }
                CellSign::Below => {
                    first_below[x].get_or_insert(j);
                }
                CellSign::Equal => {}
            }
        }
    }
    let mut sides = Vec::with_capacity(n);
    for x in 0..n {
        match (first_above[x], first_below[x]) {
            (Some(j), Some(k)) => return Err(DistError::StructuralViolation { x, j, k }),
            (None, Some(_)) => sides.push(Side::B),
            _ => sides.push(Side::A),
        }
    }
    Ok(Partition { sides })
}

fn check_partition(family: &SourceFamily, partition: &Partition) -> Result<(), DistError> {
    if partition.len() != family.n() {
        return Err(DistError::InvalidPartition(format!(
            "partition covers {} elements, domain has {}",
            partition.len(),
            family.n()
        )));
    }
    let q = family.reference.probs();
    for (j, p) in family.sources.iter().enumerate() {
        for (x, (&px, &qx)) in p.probs.iter().zip(q).enumerate() {
            let ok = matches!(
                (partition.sides[x], cell_sign(px, qx)),
                (_, CellSign::Equal) | (Side::A, CellSign::Above) | (Side::B, CellSign::Below)
            );
            if !ok {
                return Err(DistError::InvalidPartition(format!(
                    "source {j} is on the wrong side at index {x}"
                )));
            }
        }
    }
    Ok(())
}

/// `e_j(x) = |p_j(x) − q(x)|` together with the sign sets and ℓ₁ gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorVectors {
    /// Row `j` is `e_j`.
    pub e: Vec<Vec<f64>>,
    pub signs: Vec<Side>,
    /// `ε′_j = ‖p_j − q‖₁`.
    pub l1_gaps: Vec<f64>,
}

impl ErrorVectors {
    /// `E(x) = Σ_j e_j(x)`.
    pub fn column_sums(&self) -> Vec<f64> {
        let n = self.signs.len();
        (0..n)
            .map(|x| compensated_sum(self.e.iter().map(|row| row[x])))
            .collect()
    }

    /// `|Σ_{x∈A} e_j(x) − Σ_{x∈B} e_j(x)|` for source `j`.
    pub fn conservation_gap(&self, j: usize) -> f64 {
        let mut acc = CompensatedSum::new();
        for (x, &v) in self.e[j].iter().enumerate() {
            acc.add(self.signs[x].sign() * v);
        }
        acc.value().abs()
    }
}

/// Extracts the error matrix of a family whose partition has been verified.
pub fn error_vectors(family: &SourceFamily) -> Result<ErrorVectors, DistError> {
    let partition = family.partition.as_ref().ok_or(DistError::MissingPartition)?;
    let q = family.reference.probs();
    let mut e = Vec::with_capacity(family.s());
    let mut l1_gaps = Vec::with_capacity(family.s());
    for p in &family.sources {
        let row: Vec<f64> = p.probs.iter().zip(q).map(|(a, b)| (a - b).abs()).collect();
        l1_gaps.push(compensated_sum(row.iter().copied()));
        e.push(row);
    }
    Ok(ErrorVectors {
        e,
        signs: partition.sides.clone(),
        l1_gaps,
    })
}
