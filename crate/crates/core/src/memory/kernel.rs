//! Interaction kernel over historical hypotheses.
//!
//! For a candidate `j` seen from the current branch:
//!
//! ```text
//! U_j = alpha * S_j * exp(-gamma * L) + beta * tanh(delta_j)
//! p_j = exp(U_j) / sum_k exp(U_k)
//! ```
//!
//! `S_j` is the cosine similarity between hypothesis embeddings, `L` the
//! current branch depth and `delta_j` the direction-aware gap between the
//! best score of candidate `j`'s branch and the global best. All math here is
//! generic over the float type.

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ScoreRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("zero-norm embedding")]
    ZeroVector,
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("empty potential vector")]
    EmptyInput,
    #[error("non-finite potential at index {0}")]
    NonFinite(usize),
    #[error("invalid kernel parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Float + Deserialize<'de>"))]
pub struct KernelParams<T> {
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
    /// Number of hypotheses drawn from history per loop.
    pub sample_count_n: usize,
    /// Maximum number of current-branch hypotheses in the pool.
    pub current_count_m: usize,
}

impl<T: Float> KernelParams<T> {
    pub fn new(
        alpha: T,
        beta: T,
        gamma: T,
        sample_count_n: usize,
        current_count_m: usize,
    ) -> Result<Self, KernelError> {
        let p = KernelParams {
            alpha,
            beta,
            gamma,
            sample_count_n,
            current_count_m,
        };
        p.validate()?;
        Ok(p)
    }

    /// alpha + beta <= 2 keeps every potential inside [-2, 2].
    pub fn validate(&self) -> Result<(), KernelError> {
        let zero = T::zero();
        let two = T::one() + T::one();
        if !(self.alpha >= zero && self.beta >= zero && self.gamma >= zero) {
            return Err(KernelError::InvalidParams(
                "alpha, beta and gamma must be non-negative".into(),
            ));
        }
        if self.alpha + self.beta > two {
            return Err(KernelError::InvalidParams("alpha + beta must not exceed 2".into()));
        }
        if self.current_count_m == 0 {
            return Err(KernelError::InvalidParams("current_count_m must be at least 1".into()));
        }
        Ok(())
    }

    pub fn bound(&self) -> T {
        self.alpha + self.beta
    }
}

impl<T: Float> Default for KernelParams<T> {
    fn default() -> Self {
        let half = T::one() / (T::one() + T::one());
        KernelParams {
            alpha: T::one(),
            beta: T::one(),
            gamma: half,
            sample_count_n: 2,
            current_count_m: 3,
        }
    }
}

pub fn cosine_similarity<T: Float>(a: &[T], b: &[T]) -> Result<T, KernelError> {
    if a.len() != b.len() {
        return Err(KernelError::DimensionMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (T::zero(), T::zero(), T::zero());
    for (x, y) in a.iter().zip(b) {
        dot = dot + *x * *y;
        na = na + *x * *x;
        nb = nb + *y * *y;
    }
    if na == T::zero() || nb == T::zero() {
        return Err(KernelError::ZeroVector);
    }
    let s = dot / (na.sqrt() * nb.sqrt());
    // rounding can push |s| a hair past 1
    Ok(s.max(-T::one()).min(T::one()))
}

/// Direction-aware gap between a branch best and the global best: positive
/// when the branch is ahead.
pub fn score_delta(branch_best: &ScoreRecord, global_best: &ScoreRecord) -> Result<f64, KernelError> {
    if branch_best.metric_name != global_best.metric_name
        || branch_best.higher_is_better != global_best.higher_is_better
    {
        return Err(ModelError::MetricMismatch(format!(
            "{} vs {}",
            branch_best.metric_name, global_best.metric_name
        ))
        .into());
    }
    Ok(if branch_best.higher_is_better {
        branch_best.value - global_best.value
    } else {
        global_best.value - branch_best.value
    })
}

pub fn interaction_potential<T: Float>(
    similarity: T,
    depth: u32,
    delta: T,
    params: &KernelParams<T>,
) -> T {
    let decay = (-params.gamma * T::from(depth).expect("depth fits in float")).exp();
    params.alpha * similarity * decay + params.beta * delta.tanh()
}

/// Numerically stable softmax.
pub fn sampling_distribution<T: Float>(potentials: &[T]) -> Result<Vec<T>, KernelError> {
    if potentials.is_empty() {
        return Err(KernelError::EmptyInput);
    }
    if let Some(i) = potentials.iter().position(|u| !u.is_finite()) {
        return Err(KernelError::NonFinite(i));
    }
    let max = potentials.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = potentials.iter().map(|u| (*u - max).exp()).collect();
    let total = exps.iter().copied().fold(T::zero(), |a, b| a + b);
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Draws one index from a categorical distribution by inverse CDF.
pub fn sample_categorical<T: Float, R: Rng + ?Sized>(probabilities: &[T], rng: &mut R) -> usize {
    let total = probabilities.iter().copied().fold(T::zero(), |a, b| a + b);
    let u = T::from(rng.random::<f64>()).expect("f64 converts") * total;
    let mut acc = T::zero();
    for (i, p) in probabilities.iter().enumerate() {
        acc = acc + *p;
        if u < acc {
            return i;
        }
    }
    // u landed on the rounding slack at the top; return the last positive entry
    probabilities
        .iter()
        .rposition(|p| *p > T::zero())
        .unwrap_or(probabilities.len() - 1)
}

/// Sequential draws without replacement, renormalising over the remaining
/// entries after each pick. Returns indices in draw order.
pub fn sample_without_replacement<T: Float, R: Rng + ?Sized>(
    probabilities: &[T],
    n: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..probabilities.len()).collect();
    let mut picks = Vec::with_capacity(n.min(remaining.len()));
    while picks.len() < n && !remaining.is_empty() {
        let weights: Vec<T> = remaining.iter().map(|&i| probabilities[i]).collect();
        let k = sample_categorical(&weights, rng);
        picks.push(remaining.remove(k));
    }
    picks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScoreSource;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(v: f64, higher: bool) -> ScoreRecord {
        ScoreRecord {
            value: v,
            metric_name: "m".into(),
            higher_is_better: higher,
            source: ScoreSource::Validation,
        }
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3, -1.2, 4.0];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        // 32 / (sqrt(14) * sqrt(77))
        let s = cosine_similarity(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((s - 0.974_631_846_197_076_2).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]), Err(KernelError::ZeroVector));
        assert_eq!(
            cosine_similarity(&[1.0], &[1.0, 1.0]),
            Err(KernelError::DimensionMismatch(1, 2))
        );
        let s32 = cosine_similarity(&[1.0f32, 2.0, 3.0], &[4.0f32, 5.0, 6.0]).unwrap();
        assert!((s32 - 0.974_631_8).abs() < 1e-6);
    }

    #[test]
    fn delta_examples() {
        assert!((score_delta(&rec(0.9, true), &rec(0.8, true)).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(score_delta(&rec(0.4, true), &rec(0.4, true)).unwrap(), 0.0);
        assert!((score_delta(&rec(0.3, false), &rec(0.2, false)).unwrap() + 0.1).abs() < 1e-12);
        assert!(score_delta(&rec(0.3, false), &rec(0.2, true)).is_err());
    }

    #[test]
    fn potential_examples() {
        let p = KernelParams::default();
        assert_eq!(interaction_potential(1.0, 0, 0.0, &p), 1.0);
        // 0.8 * e^-1 + tanh(0.1)
        let u = interaction_potential(0.8, 2, 0.1, &p);
        assert!((u - 0.393_971_547_562_109_7).abs() < 1e-12, "{u}");
        let zero = KernelParams { alpha: 0.0, beta: 0.0, ..p };
        assert_eq!(interaction_potential(0.7, 3, 5.0, &zero), 0.0);
    }

    #[test]
    fn params_validation() {
        assert!(KernelParams::new(1.5, 0.6, 0.5, 2, 3).is_err());
        assert!(KernelParams::new(-0.1, 0.6, 0.5, 2, 3).is_err());
        assert!(KernelParams::new(1.0, 1.0, 0.5, 2, 0).is_err());
        assert!(KernelParams::new(1.0f32, 1.0, 0.0, 0, 1).is_ok());
    }

    #[test]
    fn softmax_examples() {
        let p = sampling_distribution(&[0.4, 0.4, 0.4]).unwrap();
        for x in &p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let e = std::f64::consts::E;
        let p = sampling_distribution(&[1.0, 0.0]).unwrap();
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert_eq!(sampling_distribution(&[-3.2]).unwrap(), vec![1.0]);
        assert_eq!(sampling_distribution::<f64>(&[]), Err(KernelError::EmptyInput));
        assert_eq!(sampling_distribution(&[0.0, f64::NAN]), Err(KernelError::NonFinite(1)));
        // large potentials stay finite
        let p = sampling_distribution(&[1000.0, 999.0]).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn without_replacement_never_repeats() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let probs = sampling_distribution(&[0.1, 2.0, -1.0, 0.5]).unwrap();
        for _ in 0..200 {
            let mut picks = sample_without_replacement(&probs, 3, &mut rng);
            picks.sort();
            picks.dedup();
            assert_eq!(picks.len(), 3);
        }
        assert_eq!(sample_without_replacement(&probs, 10, &mut rng).len(), 4);
        assert_eq!(sample_without_replacement(&[1.0], 1, &mut rng), vec![0]);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let probs = sampling_distribution(&[0.3, 0.2, 0.9, -0.4]).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| sample_categorical(&probs, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn potential_is_bounded(s in -1.0f64..=1.0, l in 0u32..50, d in -10.0f64..10.0,
                                    a in 0.0f64..=1.0, b in 0.0f64..=1.0, g in 0.0f64..3.0) {
                let p = KernelParams::new(a, b, g, 1, 1).unwrap();
                prop_assert!(interaction_potential(s, l, d, &p).abs() <= p.bound() + 1e-15);
            }

            #[test]
            fn potential_decays_with_depth(s in 0.0001f64..=1.0, l in 0u32..40, d in -3.0f64..3.0, g in 0.0f64..2.0) {
                let p = KernelParams { gamma: g, ..KernelParams::default() };
                prop_assert!(interaction_potential(s, l + 1, d, &p) <= interaction_potential(s, l, d, &p));
            }

            #[test]
            fn zero_gamma_ignores_depth(s in -1.0f64..=1.0, l in 0u32..100, d in -3.0f64..3.0) {
                let p = KernelParams { gamma: 0.0, ..KernelParams::default() };
                prop_assert_eq!(interaction_potential(s, l, d, &p), interaction_potential(s, 0, d, &p));
            }

            #[test]
            fn softmax_sums_to_one_and_is_shift_invariant(u in prop::collection::vec(-2.0f64..2.0, 1..20), c in -50.0f64..50.0) {
                let p = sampling_distribution(&u).unwrap();
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(p.iter().all(|x| *x > 0.0));
                let shifted: Vec<f64> = u.iter().map(|x| x + c).collect();
                let q = sampling_distribution(&shifted).unwrap();
                for (a, b) in p.iter().zip(&q) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
