//! Cylindrical Q-Wiener process paths.
//!
//! Increments are generated counter-based: every scalar draw is a pure
//! function of a 64-bit key derived from `(seed, step, component, mode)`.
//! Nothing is stored, so the same logical Brownian path can be consumed at
//! different step sizes (one integrator at `base_dt`, another at an integer
//! multiple) and the aggregated increments stay consistent. The covariance
//! weights `theta_i` are applied downstream by the diffusion coefficient;
//! the path itself is an array of independent standard Brownian motions,
//! one per (component, mode) pair.

use nalgebra::DMatrix;

use crate::error::{Result, SimError};

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Final avalanche of splitmix64.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold one word into a running key.
#[inline]
pub fn compose(h: u64, x: u64) -> u64 {
    mix64(h ^ x.wrapping_mul(0xD6E8_FEB8_6659_FD93).wrapping_add(GOLDEN_GAMMA))
}

/// Deterministic stream of draws derived from a single key (splitmix64
/// sequence plus Marsaglia polar transform for normals).
#[derive(Clone, Debug)]
pub struct KeyStream {
    state: u64,
    spare: Option<f64>,
}

impl KeyStream {
    pub fn new(key: u64) -> Self {
        KeyStream { state: key, spare: None }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform on [0, 1) with 53 random bits.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let a = 2.0 * self.next_uniform() - 1.0;
            let b = 2.0 * self.next_uniform() - 1.0;
            let s = a * a + b * b;
            if s > 0.0 && s < 1.0 {
                let m = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(b * m);
                return a * m;
            }
        }
    }
}

/// One logical Q-Wiener path on `[0, horizon]` sampled on a base grid.
#[derive(Clone, Debug)]
pub struct NoisePath {
    seed: u64,
    base_dt: f64,
    horizon: f64,
    n_components: usize,
    n_modes: usize,
    n_base_steps: usize,
}

impl NoisePath {
    pub fn new(
        seed: u64,
        base_dt: f64,
        horizon: f64,
        n_components: usize,
        n_modes: usize,
    ) -> Result<Self> {
        if !(base_dt > 0.0) || !(horizon > 0.0) {
            return Err(SimError::InvalidConfig(
                "noise path needs base_dt > 0 and horizon > 0".into(),
            ));
        }
        let n = (horizon / base_dt).round() as usize;
        if n == 0 || (n as f64 * base_dt - horizon).abs() > 1e-9 * horizon {
            return Err(SimError::InvalidConfig(format!(
                "horizon {horizon} is not an integer multiple of base_dt {base_dt}"
            )));
        }
        Ok(NoisePath { seed, base_dt, horizon, n_components, n_modes, n_base_steps: n })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn base_dt(&self) -> f64 {
        self.base_dt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_base_steps(&self) -> usize {
        self.n_base_steps
    }

    /// The raw standard-normal draw behind base step `step`, component `c`, mode `i`.
    #[inline]
    pub fn standard_normal(&self, step: usize, c: usize, i: usize) -> f64 {
        let key = compose(compose(compose(self.seed, step as u64), c as u64), i as u64);
        KeyStream::new(key).next_normal()
    }

    // Aligned binary-tree sum of leaf increments (each already scaled by
    // sqrt(base_dt)) so that the increment over a window equals the sum of
    // the increments over its two halves bit for bit.
    fn gauss_sum(&self, c: usize, i: usize, start: usize, len: usize, sqrt_dt: f64) -> f64 {
        if len == 1 {
            sqrt_dt * self.standard_normal(start, c, i)
        } else {
            let h = len / 2;
            self.gauss_sum(c, i, start, h, sqrt_dt)
                + self.gauss_sum(c, i, start + h, len - h, sqrt_dt)
        }
    }

    /// Brownian increment over base steps `[start, start + dt_multiple)` for
    /// every (component, mode); entry `(c, i)` has variance `dt_multiple * base_dt`.
    pub fn increment(&self, start: usize, dt_multiple: usize) -> Result<DMatrix<f64>> {
        if dt_multiple == 0 || start + dt_multiple > self.n_base_steps {
            return Err(SimError::WindowOutOfRange {
                start,
                len: dt_multiple,
                max: self.n_base_steps,
            });
        }
        let sqrt_dt = self.base_dt.sqrt();
        let mut out = DMatrix::zeros(self.n_components, self.n_modes);
        for c in 0..self.n_components {
            for i in 0..self.n_modes {
                out[(c, i)] = self.gauss_sum(c, i, start, dt_multiple, sqrt_dt);
            }
        }
        Ok(out)
    }

    /// Fingerprint of the realized path (used to verify that coupled runs
    /// consumed the same noise).
    pub fn checksum(&self) -> u64 {
        let mut h = compose(self.seed, self.n_base_steps as u64);
        h = compose(h, self.base_dt.to_bits());
        let probes = self.n_base_steps.min(32);
        for n in 0..probes {
            for c in 0..self.n_components {
                for i in 0..self.n_modes.min(4) {
                    h = compose(h, self.standard_normal(n, c, i).to_bits());
                }
            }
        }
        h
    }
}
