//! Counter-based Gaussian increments.
//!
//! Every increment is a pure function of `(master_seed, path, step, mode)`:
//! a ChaCha8 generator keyed by the master seed is positioned on stream
//! `path` at a block offset derived from `(step, mode / 8)`, and eight
//! standard normals are drawn from that window. Ensembles are therefore
//! reproducible regardless of how paths are scheduled across workers, and any
//! single increment can be replayed without generating its predecessors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CoefficientModel, Nemytskii};
use crate::spectral::SpectralCoeffs;

const MODES_PER_WINDOW: usize = 8;
/// Each window spans 2^8 ChaCha blocks (4096 words), far more than eight
/// ziggurat draws consume.
const WINDOW_BLOCK_BITS: u32 = 8;
const GROUP_BITS: u32 = 16;

/// Position of one path in the noise space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NoiseStream {
    pub master_seed: u64,
    pub path_index: u64,
    pub step_counter: u64,
}

impl NoiseStream {
    pub fn new(master_seed: u64, path_index: u64) -> Self {
        Self {
            master_seed,
            path_index,
            step_counter: 0,
        }
    }

    /// `N_w` i.i.d. `Normal(0, τ)` Brownian increments for the current step,
    /// then advances to the next step.
    pub fn gaussian_increments(&mut self, noise_modes: usize, tau: f64) -> Vec<f64> {
        let mut out = vec![0.0; noise_modes];
        self.fill_increments(tau, &mut out);
        out
    }

    pub fn fill_increments(&mut self, tau: f64, out: &mut [f64]) {
        self.increments_at(self.step_counter, tau, out);
        self.step_counter += 1;
    }

    /// Increments of an arbitrary step, leaving the stream untouched.
    pub fn increments_at(&self, step: u64, tau: f64, out: &mut [f64]) {
        standard_normals(self.master_seed, self.path_index, step, out);
        let scale = tau.sqrt();
        out.iter_mut().for_each(|z| *z *= scale);
    }
}

/// Standard normals for modes `0..out.len()` of `(seed, path, step)`.
pub fn standard_normals(master_seed: u64, path: u64, step: u64, out: &mut [f64]) {
    assert!(
        step < 1 << (64 - GROUP_BITS - WINDOW_BLOCK_BITS),
        "step counter exhausted"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path);
    for (group, chunk) in out.chunks_mut(MODES_PER_WINDOW).enumerate() {
        assert!(group < 1 << GROUP_BITS, "too many noise modes");
        let block = (step << (GROUP_BITS + WINDOW_BLOCK_BITS)) | ((group as u64) << WINDOW_BLOCK_BITS);
        rng.set_word_pos(u128::from(block) * 16);
        for z in chunk.iter_mut() {
            *z = StandardNormal.sample(&mut rng);
        }
    }
}

/// Derives an independent seed, e.g. one per initial datum of an experiment.
pub fn derive_seed(master_seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = master_seed ^ salt.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `P_N G(x) δβ` on `n = c.n_modes()` modes, `N_w = δβ.len()` noise modes.
pub fn multiplicative_increment(
    c: &SpectralCoeffs,
    model: &CoefficientModel,
    dbeta: &[f64],
    q: usize,
) -> Result<SpectralCoeffs> {
    let n = c.n_modes();
    if dbeta.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: 1,
            actual: 0,
        });
    }
    let ops = Nemytskii::for_noise(n, dbeta.len(), q)?;
    let grid = ops.state_on_grid(c.as_slice());
    let mut out = vec![0.0; n];
    ops.noise_apply_from_grid(model, &grid, dbeta, &mut out);
    SpectralCoeffs::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{noise_matrix, paper_diffusion};
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn increments_are_deterministic_and_advance() {
        let mut a = NoiseStream::new(42, 3);
        let mut b = NoiseStream::new(42, 3);
        let x = a.gaussian_increments(10, 0.05);
        assert_eq!(x, b.gaussian_increments(10, 0.05));
        assert_eq!(a.step_counter, 1);
        let y = a.gaussian_increments(10, 0.05);
        assert_ne!(x, y);
        let mut replay = vec![0.0; 10];
        a.increments_at(1, 0.05, &mut replay);
        assert_eq!(replay, y);
    }

    #[test]
    fn mode_values_do_not_depend_on_truncation() {
        let mut short = vec![0.0; 5];
        let mut long = vec![0.0; 40];
        standard_normals(9, 1, 17, &mut short);
        standard_normals(9, 1, 17, &mut long);
        assert_eq!(short[..], long[..5]);
    }

    #[test]
    fn distinct_coordinates_differ() {
        let mut base = vec![0.0; 16];
        standard_normals(1, 0, 0, &mut base);
        for (seed, path, step) in [(2, 0, 0), (1, 1, 0), (1, 0, 1)] {
            let mut other = vec![0.0; 16];
            standard_normals(seed, path, step, &mut other);
            assert!(base.iter().zip(&other).all(|(a, b)| a != b));
        }
        // the two halves of a 16-mode draw come from different windows
        assert!(base[..8].iter().zip(&base[8..]).all(|(a, b)| a != b));
    }

    #[test]
    fn mode_one_moments() {
        let tau = 0.05;
        let draws = 100_000;
        let mut s = NoiseStream::new(2024, 0);
        let mut buf = [0.0];
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..draws {
            s.fill_increments(tau, &mut buf);
            sum += buf[0];
            sum2 += buf[0] * buf[0];
        }
        let mean = sum / draws as f64;
        let var = sum2 / draws as f64 - mean * mean;
        assert!(mean.abs() < 4.0 * (tau / draws as f64).sqrt(), "{mean}");
        assert!((0.045..=0.055).contains(&var), "{var}");
    }

    #[test]
    fn paths_are_uncorrelated() {
        let steps = 100_000;
        let (mut s0, mut s1) = (NoiseStream::new(5, 0), NoiseStream::new(5, 1));
        let (mut a, mut b) = ([0.0], [0.0]);
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for _ in 0..steps {
            s0.fill_increments(1.0, &mut a);
            s1.fill_increments(1.0, &mut b);
            sab += a[0] * b[0];
            saa += a[0] * a[0];
            sbb += b[0] * b[0];
        }
        let corr = sab / (saa * sbb).sqrt();
        assert!(corr.abs() < 4.0 / (steps as f64).sqrt(), "{corr}");
    }

    #[test]
    fn increment_examples() {
        let m = CoefficientModel::allen_cahn(0.5, paper_diffusion(), 3.0).unwrap();
        let b = [0.3, -0.1, 0.7, 0.2];
        let out = multiplicative_increment(&SpectralCoeffs::zeros(3), &m, &b, 8).unwrap();
        for (o, e) in out.as_slice().iter().zip(&b[..3]) {
            assert!((o - 2.0 * e).abs() < 1e-12);
        }
        let c = SpectralCoeffs::new(vec![0.5, 0.1, -0.4]).unwrap();
        let zero = multiplicative_increment(&c, &m, &[0.0; 4], 8).unwrap();
        assert_eq!(zero, SpectralCoeffs::zeros(3));
        assert!(multiplicative_increment(&c, &m, &b, 6).is_err());
        assert!(multiplicative_increment(&c, &m, &[], 8).is_err());
    }

    #[test]
    fn increment_is_linear() {
        let m = CoefficientModel::allen_cahn(0.5, paper_diffusion(), 3.0).unwrap();
        let c = SpectralCoeffs::new(vec![0.9, -0.3, 0.2, 0.6]).unwrap();
        let b1 = [0.1, 0.2, -0.3, 0.4, 0.5];
        let b2 = [-1.0, 0.25, 0.0, 0.3, -0.2];
        let (s, t) = (1.7, -0.4);
        let mix: Vec<f64> = b1.iter().zip(&b2).map(|(x, y)| s * x + t * y).collect();
        let lhs = multiplicative_increment(&c, &m, &mix, 16).unwrap();
        let r1 = multiplicative_increment(&c, &m, &b1, 16).unwrap();
        let r2 = multiplicative_increment(&c, &m, &b2, 16).unwrap();
        let rhs = r1.scale(s).add(&r2.scale(t));
        assert!(lhs.sub(&rhs).as_slice().iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn conditional_covariance_matches_closed_form() {
        let tau = 0.05;
        let m = CoefficientModel::allen_cahn(0.5, paper_diffusion(), 3.0).unwrap();
        let c = SpectralCoeffs::new(vec![0.8, -0.5, 0.3, 0.1]).unwrap();
        let (n, nw, q) = (4, 4, 16);
        let draws = 10_000;
        let mut stream = NoiseStream::new(77, 0);
        let mut cov = DMatrix::<f64>::zeros(n, n);
        for _ in 0..draws {
            let db = stream.gaussian_increments(nw, tau);
            let v = DVector::from_vec(multiplicative_increment(&c, &m, &db, q).unwrap().into_vec());
            cov += &v * v.transpose();
        }
        cov /= draws as f64;
        let mat = noise_matrix(&c, &m, nw, q).unwrap();
        let exact = &mat * mat.transpose() * tau;
        let err = (&cov - &exact).symmetric_eigenvalues().amax();
        let scale = exact.symmetric_eigenvalues().amax();
        assert!(err <= 0.1 * scale, "{err} vs {scale}");
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let seeds: Vec<u64> = (0..3).map(|i| derive_seed(2024, i)).collect();
        assert!(seeds[0] != seeds[1] && seeds[1] != seeds[2] && seeds[0] != 2024);
        assert_eq!(derive_seed(2024, 1), seeds[1]);
    }
}
