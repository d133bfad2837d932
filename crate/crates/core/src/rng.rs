//! Deterministic random streams.
//!
//! Every stream is a ChaCha8 generator keyed by a 64-bit seed and positioned
//! on one of its 2^64 independent streams. Parallel work units never share a
//! stream; they receive a child via [`RandomStream::substream`], so results
//! do not depend on scheduling order or thread count.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Gamma, StandardNormal};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream for the `index`-th work unit under this stream.
    ///
    /// Depends only on `(seed, stream_id, index)`, never on how many draws
    /// the parent has already produced.
    pub fn substream(&self, index: u64) -> RandomStream {
        let key = splitmix64(self.seed ^ splitmix64(self.stream_id.wrapping_add(0x5851_F42D_4C95_7F2D)));
        RandomStream::new(key, index)
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform index in `0..k`. Panics if `k == 0`.
    pub fn index(&mut self, k: usize) -> usize {
        assert!(k > 0, "index() on an empty range");
        self.rng.random_range(0..k)
    }

    pub(crate) fn gamma(&mut self, shape: f64, scale: f64) -> f64 {
        // Parameters are validated by the caller.
        Gamma::new(shape, scale)
            .expect("validated gamma parameters")
            .sample(&mut self.rng)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// A uniformly random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Distributions the sampler needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Distribution {
    Uniform,
    Normal { mean: f64, variance: f64 },
    InverseGamma { shape: f64, scale: f64 },
    DiscreteUniform(usize),
}

impl Distribution {
    fn validate(&self) -> Result<()> {
        match *self {
            Distribution::Uniform => Ok(()),
            Distribution::Normal { mean, variance } => {
                if !mean.is_finite() || !(variance >= 0.0) || !variance.is_finite() {
                    return Err(Error::ParameterDomain(format!(
                        "normal requires finite mean and variance >= 0, got ({mean}, {variance})"
                    )));
                }
                Ok(())
            }
            Distribution::InverseGamma { shape, scale } => {
                if !(shape > 0.0 && shape.is_finite() && scale > 0.0 && scale.is_finite()) {
                    return Err(Error::ParameterDomain(format!(
                        "inverse-gamma requires shape > 0 and scale > 0, got ({shape}, {scale})"
                    )));
                }
                Ok(())
            }
            Distribution::DiscreteUniform(k) => {
                if k == 0 {
                    return Err(Error::ParameterDomain(
                        "discrete-uniform requires k >= 1".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// One variate from `dist`. Discrete draws are returned as their index.
pub fn draw(stream: &mut RandomStream, dist: &Distribution) -> Result<f64> {
    dist.validate()?;
    Ok(match *dist {
        Distribution::Uniform => stream.uniform(),
        Distribution::Normal { mean, variance } => {
            if variance == 0.0 {
                mean
            } else {
                mean + variance.sqrt() * stream.standard_normal()
            }
        }
        Distribution::InverseGamma { shape, scale } => 1.0 / stream.gamma(shape, 1.0 / scale),
        Distribution::DiscreteUniform(k) => stream.index(k) as f64,
    })
}
