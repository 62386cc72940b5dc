//! Seeded multimodal test function standing in for solution quality.
//!
//! Each coordinate has its own profile, a sum of 1-D Gaussian bumps: one
//! narrow planted bump of height 1 and a few lower, wider decoys. The surface
//! over `[0, 1]^d` is the product of the profiles, which expands to a sum of
//! axis-aligned d-dimensional bumps, scaled so that its single global optimum
//! reaches the configured maximum. Good settings of one coordinate stay good
//! whatever the others are, so partial progress carries between solutions.

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BackendError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LandscapeConfig {
    pub dimension: usize,
    pub max_value: f64,
    /// Width of the planted bump on every axis.
    pub global_width: f64,
    /// Decoy bumps per axis.
    pub local_bumps: usize,
    /// Decoy heights relative to the planted bump.
    pub local_height: (f64, f64),
    pub local_width: (f64, f64),
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        LandscapeConfig {
            dimension: 2,
            max_value: 0.95,
            global_width: 0.03,
            local_bumps: 3,
            local_height: (0.6, 0.85),
            local_width: (0.08, 0.16),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bump<T> {
    pub center: T,
    pub height: T,
    pub width: T,
}

impl<T: Float> Bump<T> {
    fn value(&self, x: T) -> T {
        let two = T::one() + T::one();
        let d = x - self.center;
        self.height * (-(d * d / (two * self.width * self.width))).exp()
    }
}

/// One coordinate's profile and the location and value of its maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisProfile<T> {
    pub bumps: Vec<Bump<T>>,
    pub argmax: T,
    pub peak: T,
}

impl<T: Float> AxisProfile<T> {
    pub fn value(&self, x: T) -> T {
        self.bumps.iter().fold(T::zero(), |acc, b| acc + b.value(x))
    }

    fn new(bumps: Vec<Bump<T>>) -> Self {
        const GRID: usize = 4096;
        let mut profile = AxisProfile {
            bumps,
            argmax: T::zero(),
            peak: T::zero(),
        };
        let step = T::one() / cast(GRID as f64);
        let mut best = (T::zero(), T::neg_infinity());
        for i in 0..=GRID {
            let x = step * cast(i as f64);
            let v = profile.value(x);
            if v > best.1 {
                best = (x, v);
            }
        }
        // golden-section search inside the winning grid cell
        let phi: T = cast(0.618_033_988_749_895);
        let mut lo = (best.0 - step).max(T::zero());
        let mut hi = (best.0 + step).min(T::one());
        for _ in 0..80 {
            let a = hi - phi * (hi - lo);
            let b = lo + phi * (hi - lo);
            if profile.value(a) < profile.value(b) {
                lo = a;
            } else {
                hi = b;
            }
        }
        let mid = (lo + hi) / cast(2.0);
        let x = if profile.value(mid) >= best.1 { mid } else { best.0 };
        profile.argmax = x;
        profile.peak = profile.value(x);
        profile
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeState<T> {
    pub param_vector: Vec<T>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landscape<T> {
    seed: u64,
    max_value: T,
    axes: Vec<AxisProfile<T>>,
    optimum: Vec<T>,
}

fn cast<T: Float>(v: f64) -> T {
    T::from(v).expect("float conversion")
}

impl<T: Float> Landscape<T> {
    pub fn generate(seed: u64, cfg: &LandscapeConfig) -> Self {
        assert!(cfg.dimension > 0, "landscape dimension must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let axes: Vec<AxisProfile<T>> = (0..cfg.dimension)
            .map(|_| {
                let mut bumps = Vec::with_capacity(cfg.local_bumps + 1);
                bumps.push(Bump {
                    center: cast(rng.random_range(0.15..0.85)),
                    height: T::one(),
                    width: cast(cfg.global_width),
                });
                for _ in 0..cfg.local_bumps {
                    let (h_lo, h_hi) = cfg.local_height;
                    let (w_lo, w_hi) = cfg.local_width;
                    bumps.push(Bump {
                        center: cast(rng.random_range(0.0..1.0)),
                        height: cast(rng.random_range(h_lo..=h_hi).min(0.95)),
                        width: cast(rng.random_range(w_lo..=w_hi)),
                    });
                }
                AxisProfile::new(bumps)
            })
            .collect();
        let optimum = axes.iter().map(|a| a.argmax).collect();
        Landscape {
            seed,
            max_value: cast(cfg.max_value),
            axes,
            optimum,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dimension(&self) -> usize {
        self.axes.len()
    }

    pub fn optimum(&self) -> &[T] {
        &self.optimum
    }

    pub fn max_value(&self) -> T {
        self.max_value
    }

    pub fn axes(&self) -> &[AxisProfile<T>] {
        &self.axes
    }

    pub fn score(&self, x: &[T]) -> Result<T, BackendError> {
        if x.len() != self.dimension() {
            return Err(BackendError::DimensionMismatch {
                expected: self.dimension(),
                got: x.len(),
            });
        }
        Ok(self
            .axes
            .iter()
            .zip(x)
            .fold(self.max_value, |acc, (a, v)| acc * (a.value(*v) / a.peak)))
    }

    pub fn score_state(&self, state: &LandscapeState<T>) -> Result<T, BackendError> {
        if state.seed != self.seed {
            return Err(BackendError::Config(format!(
                "state seed {} does not match landscape seed {}",
                state.seed, self.seed
            )));
        }
        self.score(&state.param_vector)
    }
}
