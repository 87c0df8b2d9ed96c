//! Seeded random streams and random probe objects.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{ComplexMatrix, DensityMatrix, C64};

/// Independent, reproducible random stream `index` derived from `seed`.
///
/// Two streams with the same `(seed, index)` produce identical output, and
/// different indices never overlap, so work split by index gives the same
/// numbers regardless of how it is scheduled.
#[derive(Clone, Debug)]
pub struct Stream(ChaCha8Rng);

impl Stream {
    pub fn new(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        Self(rng)
    }

    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }
}

fn complex_normal(rng: &mut Stream) -> C64 {
    C64::new(rng.normal(), rng.normal())
}

/// Ginibre matrix with unit-variance complex Gaussian entries.
pub fn random_matrix(rng: &mut Stream, dim: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(dim, |_, _| complex_normal(rng))
}

/// Random full-rank mixed state `G G† / Tr[G G†]`.
pub fn random_state(rng: &mut Stream, dim: usize) -> DensityMatrix {
    let g = random_matrix(rng, dim);
    DensityMatrix::new_unchecked(&g * &g.dagger())
}

/// Haar-random pure state.
pub fn haar_pure_state(rng: &mut Stream, dim: usize) -> DensityMatrix {
    let psi: Vec<C64> = (0..dim).map(|_| complex_normal(rng)).collect();
    DensityMatrix::pure(&psi)
}

/// Haar-random qubit as Bloch angles: `cos θ` uniform on [−1, 1] and `φ`
/// uniform on [0, 2π).
pub fn haar_bloch_angles(rng: &mut Stream) -> (f64, f64) {
    let cos_theta = 2.0 * rng.uniform() - 1.0;
    let phi = std::f64::consts::TAU * rng.uniform();
    (cos_theta.clamp(-1.0, 1.0).acos(), phi)
}
