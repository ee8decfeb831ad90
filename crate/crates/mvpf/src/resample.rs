//! Multinomial resampling and the maximal-coupling index sampler.
//!
//! The PF resamples each particle independently from the normalized weights.
//! The CPF resamples index pairs through a maximal coupling: with probability
//! rho = sum_i min(v1_i, v2_i) both chains draw the same index from the
//! overlap, otherwise each draws independently from its residual. Marginals
//! are exactly v1 and v2 either way, which is what keeps the coupled filter
//! unbiased for both levels.

use crate::error::{invalid, Error, Result};
use crate::lattice::RngStream;

/// Normalized, non-negative weights summing to 1.
#[derive(Clone, Debug)]
pub struct WeightVector {
    w: Vec<f64>,
}

impl WeightVector {
    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

pub fn normalize_weights(raw: &[f64]) -> Result<WeightVector> {
    if raw.is_empty() {
        return Err(invalid("cannot normalize an empty weight vector"));
    }
    let mut sum = 0.0;
    for &r in raw {
        if !r.is_finite() || r < 0.0 {
            return Err(invalid(format!("weight {r} is not finite and non-negative")));
        }
        sum += r;
    }
    if sum <= 0.0 {
        return Err(Error::WeightUnderflow);
    }
    Ok(WeightVector {
        w: raw.iter().map(|r| r / sum).collect(),
    })
}

/// Normalizes weights given in log space, shifting by the maximum before
/// exponentiation. For finite inputs at least one shifted weight is exp(0),
/// so the underflow error is unreachable here.
pub fn normalize_log_weights(logw: &[f64]) -> Result<WeightVector> {
    if logw.is_empty() {
        return Err(invalid("cannot normalize an empty weight vector"));
    }
    if logw.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(invalid("log weights must be < +inf and not NaN"));
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::WeightUnderflow);
    }
    let shifted: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    normalize_weights(&shifted)
}

/// Prefix sums for inverse-CDF sampling plus the index of the last positive
/// weight, used to clamp draws that land beyond the final partial sum by
/// rounding.
#[derive(Clone, Debug)]
struct Cdf {
    cum: Vec<f64>,
    last_positive: usize,
}

impl Cdf {
    fn new(w: &[f64]) -> Self {
        let mut cum = Vec::with_capacity(w.len());
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &wi) in w.iter().enumerate() {
            acc += wi;
            cum.push(acc);
            if wi > 0.0 {
                last_positive = i;
            }
        }
        Self { cum, last_positive }
    }

    /// First index whose cumulative sum strictly exceeds u.
    fn index(&self, u: f64) -> usize {
        let i = self.cum.partition_point(|&c| c <= u);
        if i >= self.cum.len() {
            self.last_positive
        } else {
            i
        }
    }
}

/// `count` i.i.d. categorical draws by inverse CDF over the fixed index order.
pub fn multinomial_indices(
    w: &WeightVector,
    count: usize,
    stream: &mut RngStream,
) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(invalid("resampling needs count >= 1"));
    }
    let cdf = Cdf::new(w.weights());
    Ok((0..count).map(|_| cdf.index(stream.uniform())).collect())
}

/// Maximal coupling of two categorical distributions, precomputed so one
/// construction serves many index draws within a resampling step.
#[derive(Clone, Debug)]
pub struct MaximalCoupler {
    rho: f64,
    identical: bool,
    overlap_cdf: Option<Cdf>,
    residual1_cdf: Option<Cdf>,
    residual2_cdf: Option<Cdf>,
}

impl MaximalCoupler {
    pub fn new(v1: &WeightVector, v2: &WeightVector) -> Result<Self> {
        if v1.len() != v2.len() {
            return Err(invalid(format!(
                "coupled weight vectors have lengths {} and {}",
                v1.len(),
                v2.len()
            )));
        }
        let w1 = v1.weights();
        let w2 = v2.weights();
        let mins: Vec<f64> = w1.iter().zip(w2).map(|(a, b)| a.min(*b)).collect();
        let rho: f64 = mins.iter().sum();
        // Guard against 1/(1 - rho) blowing up when the distributions agree to
        // rounding error: treat them as identical.
        let identical = 1.0 - rho <= 1e-14;
        let overlap_cdf = if rho > 0.0 {
            Some(Cdf::new(&mins.iter().map(|m| m / rho).collect::<Vec<_>>()))
        } else {
            None
        };
        let (residual1_cdf, residual2_cdf) = if identical {
            (None, None)
        } else {
            let res = |w: &[f64]| {
                Cdf::new(
                    &w.iter()
                        .zip(&mins)
                        .map(|(wi, mi)| (wi - mi) / (1.0 - rho))
                        .collect::<Vec<_>>(),
                )
            };
            (Some(res(w1)), Some(res(w2)))
        };
        Ok(Self {
            rho,
            identical,
            overlap_cdf,
            residual1_cdf,
            residual2_cdf,
        })
    }

    /// rho = sum_i min(v1_i, v2_i), the coupling probability.
    pub fn overlap(&self) -> f64 {
        self.rho
    }

    /// One coupled index pair; marginals are exactly v1 and v2.
    pub fn sample(&self, stream: &mut RngStream) -> (usize, usize) {
        let u = stream.uniform();
        if self.identical || u < self.rho {
            let i = self
                .overlap_cdf
                .as_ref()
                .expect("overlap cdf exists whenever the coupled branch is reachable")
                .index(stream.uniform());
            (i, i)
        } else {
            let i1 = self.residual1_cdf.as_ref().unwrap().index(stream.uniform());
            let i2 = self.residual2_cdf.as_ref().unwrap().index(stream.uniform());
            (i1, i2)
        }
    }
}

/// Single coupled draw (Algorithm 3). Prefer [`MaximalCoupler`] when sampling
/// many pairs from the same weights.
pub fn maximal_coupling_indices(
    v1: &WeightVector,
    v2: &WeightVector,
    stream: &mut RngStream,
) -> Result<(usize, usize)> {
    Ok(MaximalCoupler::new(v1, v2)?.sample(stream))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Role, StreamId};
    use proptest::prelude::*;

    // Chi-square 0.999 quantiles from the standard table.
    const CHI2_999_DF3: f64 = 16.266;
    const CHI2_999_DF15: f64 = 37.697;

    fn stream(seed: u64) -> RngStream {
        RngStream::new(
            seed,
            StreamId {
                replication: 0,
                role: Role::Resample,
                level: 0,
            },
        )
    }

    #[test]
    fn normalize_basic() {
        let w = normalize_weights(&[2.0, 2.0, 2.0]).unwrap();
        for &wi in w.weights() {
            assert_eq!(wi, 1.0 / 3.0);
        }
        let w = normalize_weights(&[1.0, 3.0]).unwrap();
        assert_eq!(w.weights(), &[0.25, 0.75]);
    }

    #[test]
    fn normalize_rejects_degenerate_input() {
        assert!(matches!(
            normalize_weights(&[0.0, 0.0]),
            Err(Error::WeightUnderflow)
        ));
        assert!(normalize_weights(&[]).is_err());
        assert!(normalize_weights(&[1.0, -0.5]).is_err());
        assert!(normalize_weights(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn log_normalization_matches_direct() {
        let raw = [0.3, 1.7, 0.05, 2.2];
        let direct = normalize_weights(&raw).unwrap();
        let logs: Vec<f64> = raw.iter().map(|r| r.ln()).collect();
        let via_log = normalize_log_weights(&logs).unwrap();
        for (a, b) in direct.weights().iter().zip(via_log.weights()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn log_normalization_survives_extreme_shifts() {
        let w = normalize_log_weights(&[-1000.0, -1001.0]).unwrap();
        let expect = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((w.weights()[0] - expect).abs() < 1e-12);
        assert!(normalize_log_weights(&[f64::NEG_INFINITY, -2.0]).is_ok());
        assert!(matches!(
            normalize_log_weights(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            Err(Error::WeightUnderflow)
        ));
    }

    proptest! {
        #[test]
        fn normalized_weights_sum_to_one(raw in proptest::collection::vec(0.0f64..100.0, 1..40)) {
            prop_assume!(raw.iter().sum::<f64>() > 0.0);
            let w = normalize_weights(&raw).unwrap();
            let sum: f64 = w.weights().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn multinomial_degenerate_mass() {
        let w = normalize_weights(&[1.0, 0.0, 0.0]).unwrap();
        let idx = multinomial_indices(&w, 1000, &mut stream(1)).unwrap();
        assert!(idx.iter().all(|&i| i == 0));
    }

    #[test]
    fn multinomial_binomial_frequency() {
        let w = normalize_weights(&[0.5, 0.5]).unwrap();
        let n = 100_000;
        let idx = multinomial_indices(&w, n, &mut stream(2)).unwrap();
        let f0 = idx.iter().filter(|&&i| i == 0).count() as f64 / n as f64;
        let tol = 3.0 * 0.5 / (n as f64).sqrt();
        assert!((f0 - 0.5).abs() < tol, "freq {f0}");
    }

    #[test]
    fn multinomial_resampling_is_unbiased() {
        let values: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let w = normalize_weights(&vec![1.0; 10]).unwrap();
        let mut s = stream(3);
        let reps = 10_000;
        let mut sum = 0.0;
        for _ in 0..reps {
            for i in multinomial_indices(&w, 10, &mut s).unwrap() {
                sum += values[i];
            }
        }
        let mean = sum / (10.0 * reps as f64);
        let sd = (values.iter().map(|v| (v - 4.5).powi(2)).sum::<f64>() / 10.0).sqrt();
        let tol = 3.0 * sd / ((10 * reps) as f64).sqrt();
        assert!((mean - 4.5).abs() < tol, "mean {mean}");
    }

    #[test]
    fn multinomial_marginal_chi_square() {
        let w = normalize_weights(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let n = 100_000usize;
        let idx = multinomial_indices(&w, n, &mut stream(4)).unwrap();
        let mut counts = [0usize; 4];
        for i in idx {
            counts[i] += 1;
        }
        let mut chi2 = 0.0;
        for (c, p) in counts.iter().zip(w.weights()) {
            let expect = n as f64 * p;
            chi2 += (*c as f64 - expect).powi(2) / expect;
        }
        assert!(chi2 < CHI2_999_DF3, "chi2 {chi2}");
    }

    #[test]
    fn identical_weights_always_couple() {
        let v = normalize_weights(&[0.2, 0.5, 0.3]).unwrap();
        let c = MaximalCoupler::new(&v, &v).unwrap();
        assert!((c.overlap() - 1.0).abs() <= 1e-14);
        let mut s = stream(5);
        let mut counts = [0usize; 3];
        let n = 30_000;
        for _ in 0..n {
            let (i1, i2) = c.sample(&mut s);
            assert_eq!(i1, i2);
            counts[i1] += 1;
        }
        for (cnt, p) in counts.iter().zip(v.weights()) {
            let freq = *cnt as f64 / n as f64;
            let tol = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() < tol, "freq {freq} p {p}");
        }
    }

    #[test]
    fn disjoint_supports_never_couple() {
        let v1 = normalize_weights(&[1.0, 0.0]).unwrap();
        let v2 = normalize_weights(&[0.0, 1.0]).unwrap();
        let c = MaximalCoupler::new(&v1, &v2).unwrap();
        assert_eq!(c.overlap(), 0.0);
        let mut s = stream(6);
        for _ in 0..1000 {
            assert_eq!(c.sample(&mut s), (0, 1));
        }
    }

    #[test]
    fn coupling_probability_matches_overlap() {
        let v1 = normalize_weights(&[0.5, 0.5]).unwrap();
        let v2 = normalize_weights(&[0.25, 0.75]).unwrap();
        let c = MaximalCoupler::new(&v1, &v2).unwrap();
        assert_eq!(c.overlap(), 0.75);
        let mut s = stream(7);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| {
                let (i1, i2) = c.sample(&mut s);
                i1 == i2
            })
            .count();
        let freq = hits as f64 / n as f64;
        let tol = 3.0 * (0.75 * 0.25 / n as f64).sqrt();
        assert!((freq - 0.75).abs() < tol, "freq {freq}");
    }

    #[test]
    fn coupled_marginals_pass_chi_square() {
        // A fixed pair of 16-point weight vectors; both empirical marginals
        // must match their targets at the 0.001 level.
        let mut s = stream(8);
        let raw1: Vec<f64> = (0..16).map(|_| s.uniform() + 0.05).collect();
        let raw2: Vec<f64> = (0..16).map(|_| s.uniform() + 0.05).collect();
        let v1 = normalize_weights(&raw1).unwrap();
        let v2 = normalize_weights(&raw2).unwrap();
        let c = MaximalCoupler::new(&v1, &v2).unwrap();
        let n = 100_000usize;
        let mut c1 = [0usize; 16];
        let mut c2 = [0usize; 16];
        for _ in 0..n {
            let (i1, i2) = c.sample(&mut s);
            c1[i1] += 1;
            c2[i2] += 1;
        }
        for (counts, v) in [(&c1, &v1), (&c2, &v2)] {
            let mut chi2 = 0.0;
            for (cnt, p) in counts.iter().zip(v.weights()) {
                let expect = n as f64 * p;
                chi2 += (*cnt as f64 - expect).powi(2) / expect;
            }
            assert!(chi2 < CHI2_999_DF15, "chi2 {chi2}");
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let v1 = normalize_weights(&[0.5, 0.5]).unwrap();
        let v2 = normalize_weights(&[1.0, 1.0, 1.0]).unwrap();
        assert!(MaximalCoupler::new(&v1, &v2).is_err());
        assert!(maximal_coupling_indices(&v1, &v2, &mut stream(9)).is_err());
    }

    #[test]
    fn multinomial_count_validation() {
        let w = normalize_weights(&[1.0]).unwrap();
        assert!(multinomial_indices(&w, 0, &mut stream(10)).is_err());
    }
}
