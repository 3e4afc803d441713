//! Small numerical helpers shared by every module.

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl Extend<f64> for CompensatedSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.add(x);
        }
    }
}

/// Compensated sum of an iterator.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::new();
    acc.extend(values);
    acc.value()
}

const PAIRWISE_BLOCK: usize = 64;

/// Pairwise (cascade) summation of `f(i)` for `i` in `0..len`, without allocating.
pub fn pairwise_sum_by<F: Fn(usize) -> f64>(len: usize, f: F) -> f64 {
    fn go<F: Fn(usize) -> f64>(lo: usize, hi: usize, f: &F) -> f64 {
        if hi - lo <= PAIRWISE_BLOCK {
            let mut acc = 0.0;
            for i in lo..hi {
                acc += f(i);
            }
            acc
        } else {
            let mid = lo + (hi - lo) / 2;
            go(lo, mid, f) + go(mid, hi, f)
        }
    }
    go(0, len, &f)
}

/// Relative distance to the nearest integer under which [`ceil_snapped`] rounds instead of ceiling.
pub const SNAP_TOLERANCE: f64 = 1e-9;

/// `⌈x⌉`, except that values within a relative `1e-9` of an integer snap to it.
///
/// Guards formulas such as `1000^(2/3)` that land a few ulps away from an integer.
pub fn ceil_snapped(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= SNAP_TOLERANCE * r.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// `C(s, 2)` as a float.
#[inline]
pub fn choose2(s: usize) -> f64 {
    let s = s as f64;
    s * (s - 1.0) / 2.0
}

/// `C(s, 3)` as a float.
#[inline]
pub fn choose3(s: usize) -> f64 {
    let s = s as f64;
    s * (s - 1.0) * (s - 2.0) / 6.0
}

/// Elementary symmetric sums `(e1, e2, e3, e4)` of a list of values.
///
/// Uses the forward recurrence, which never subtracts and so stays accurate
/// for non-negative inputs.
pub fn elementary_symmetric4<I: IntoIterator<Item = f64>>(values: I) -> [f64; 4] {
    let mut e = [0.0f64; 4];
    for v in values {
        e[3] += e[2] * v;
        e[2] += e[1] * v;
        e[1] += e[0] * v;
        e[0] += v;
    }
    e
}

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.576;

/// 99% binomial radius `2.576·√(p̂(1−p̂)/trials)`.
pub fn binomial_ci99(p_hat: f64, trials: u64) -> f64 {
    if trials == 0 {
        return f64::INFINITY;
    }
    Z99 * (p_hat * (1.0 - p_hat) / trials as f64).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancelled_mass() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
        assert_eq!(v.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let s = pairwise_sum_by(1000, |i| i as f64);
        assert_eq!(s, 499_500.0);
        assert_eq!(pairwise_sum_by(0, |_| 1.0), 0.0);
    }

    #[test]
    fn ceil_snaps_float_noise() {
        let k = 1000f64.powf(2.0 / 3.0);
        assert!(k < 100.0);
        assert_eq!(ceil_snapped(k), 100.0);
        assert_eq!(ceil_snapped(100.2), 101.0);
        assert_eq!(ceil_snapped(0.05), 1.0);
        assert_eq!(ceil_snapped(3.0), 3.0);
    }

    #[test]
    fn elementary_symmetric_of_ones() {
        let e = elementary_symmetric4([1.0; 5]);
        assert_eq!(e, [5.0, 10.0, 10.0, 5.0]);
    }

    #[test]
    fn binomial_radius() {
        assert_eq!(binomial_ci99(1.0, 400), 0.0);
        assert!((binomial_ci99(0.5, 400) - 2.576 * 0.025).abs() < 1e-15);
    }
}
