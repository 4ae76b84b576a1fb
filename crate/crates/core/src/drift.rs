//! The noise-induced drift `S(u)` of the limiting equation: the Gaussian
//! average of `z -> [Dg^{-1}(u) z] z` against the invariant measure of the
//! frozen cell problem.
//!
//! Three routes are implemented. The production path is spectral: with
//! `Lambda_u = sum_m lam_m phi_m phi_m^T`, bilinearity of
//! `(z1, z2) -> [Dg^{-1}(u) z1] z2` and `E[c_m c_m'] = lam_m delta_mm'`
//! force `S(u) = sum_m lam_m [Dg^{-1}(u) phi_m] phi_m`, exact at the
//! truncation level. Monte-Carlo sampling of `nu^u` and the ergodic average
//! along one exact-kernel stationary trajectory serve as independent
//! oracles with reported standard errors.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::coefficients::CoefficientSet;
use crate::error::{Result, SimError};
use crate::noise::{compose, KeyStream};
use crate::ou::{unflatten, GaussianSampler, OuKernel};
use crate::spectral::Field;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DriftMethod {
    Spectral,
    MonteCarlo,
    Ergodic,
}

/// One drift evaluation: the field, which route produced it, and a
/// norm-level standard error (0 for the spectral route).
#[derive(Clone, Debug)]
pub struct DriftResult {
    pub value: Field,
    pub method: DriftMethod,
    /// aggregated standard error: sqrt(sum of per-coefficient SE^2)
    pub error_estimate: f64,
    pub sample_count: usize,
}

/// `[Dg_R^{-1}(u) z] z` evaluated as a field.
fn drift_integrand(coeffs: &CoefficientSet, u: &Field, z: &Field) -> Result<Field> {
    let m = coeffs.d_friction_inv(u, z)?;
    Ok(z.apply_matrix(&m))
}

/// Exact-at-truncation drift via the eigendecomposition of `Lambda_u`.
pub fn drift_spectral(coeffs: &CoefficientSet, u: &Field, kernel: &OuKernel) -> Result<DriftResult> {
    let space = u.space().clone();
    if coeffs.friction.is_constant() && coeffs.cutoff.is_none() {
        // Dg = 0 identically; no eigen decomposition needed
        return Ok(DriftResult {
            value: Field::zeros(&space),
            method: DriftMethod::Spectral,
            error_estimate: 0.0,
            sample_count: 0,
        });
    }
    let eig = kernel.lambda().assembled().clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
    let mut s = Field::zeros(&space);
    for (m, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam <= 1e-14 * max {
            continue;
        }
        let phi = unflatten(&space, &DVector::from(eig.eigenvectors.column(m).clone_owned()));
        let term = drift_integrand(coeffs, u, &phi)?;
        s.add_scaled(lam, &term);
    }
    Ok(DriftResult {
        value: s,
        method: DriftMethod::Spectral,
        error_estimate: 0.0,
        sample_count: 0,
    })
}

fn mean_and_se(space: &Field, sums: &DMatrix<f64>, sumsq: &DMatrix<f64>, n: usize) -> (Field, f64) {
    let nf = n as f64;
    let mut mean = space.clone();
    let mut se_sq = 0.0;
    for c in 0..sums.nrows() {
        for i in 0..sums.ncols() {
            let m = sums[(c, i)] / nf;
            mean.coeffs_mut()[(c, i)] = m;
            let var = (sumsq[(c, i)] / nf - m * m).max(0.0);
            se_sq += var / nf;
        }
    }
    (mean, se_sq.sqrt())
}

/// Monte-Carlo estimate over `n_samples` draws from `nu^u`. Samples are
/// generated in fixed-size chunks with per-chunk keys so the reduction is
/// deterministic under any parallel schedule.
pub fn drift_monte_carlo(
    coeffs: &CoefficientSet,
    u: &Field,
    kernel: &OuKernel,
    n_samples: usize,
    seed: u64,
) -> Result<DriftResult> {
    if n_samples < 100 {
        return Err(SimError::InvalidConfig("Monte-Carlo drift needs >= 100 samples".into()));
    }
    let sampler = kernel.sampler()?;
    let space = u.space().clone();
    let (r, n) = (space.n_components(), space.n_modes());
    let chunk = 4096usize;
    let n_chunks = n_samples.div_ceil(chunk);
    let partials: Vec<Result<(DMatrix<f64>, DMatrix<f64>)>> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let mut stream = KeyStream::new(compose(seed, ci as u64));
            let lo = ci * chunk;
            let hi = ((ci + 1) * chunk).min(n_samples);
            let mut sums = DMatrix::zeros(r, n);
            let mut sumsq = DMatrix::zeros(r, n);
            for _ in lo..hi {
                let z = sampler.sample(&mut stream);
                let val = drift_integrand(coeffs, u, &z)?;
                for c in 0..r {
                    for i in 0..n {
                        let v = val.coeffs()[(c, i)];
                        sums[(c, i)] += v;
                        sumsq[(c, i)] += v * v;
                    }
                }
            }
            Ok((sums, sumsq))
        })
        .collect();
    let mut sums = DMatrix::zeros(r, n);
    let mut sumsq = DMatrix::zeros(r, n);
    for p in partials {
        let (s, s2) = p?;
        sums += s;
        sumsq += s2;
    }
    let (mean, se) = mean_and_se(&Field::zeros(&space), &sums, &sumsq, n_samples);
    Ok(DriftResult {
        value: mean,
        method: DriftMethod::MonteCarlo,
        error_estimate: se,
        sample_count: n_samples,
    })
}

/// Ergodic average of the integrand along one stationary trajectory of the
/// exact transition kernel, started from an invariant draw after burn-in.
/// The standard error is estimated by batch means (50 batches), which
/// absorbs the autocorrelation of the chain.
pub fn stationary_process_oracle(
    coeffs: &CoefficientSet,
    u: &Field,
    kernel: &OuKernel,
    seed: u64,
    burn_in: f64,
    horizon: f64,
) -> Result<DriftResult> {
    let gamma0 = kernel.gamma0();
    if burn_in < 10.0 / gamma0 {
        return Err(SimError::InvalidConfig(format!(
            "burn-in {burn_in} too short; need >= {}",
            10.0 / gamma0
        )));
    }
    let dt = 0.5 / gamma0;
    let n_burn = (burn_in / dt).ceil() as usize;
    let n_samples = (horizon / dt).ceil() as usize;
    if n_samples < 500 {
        return Err(SimError::InvalidConfig("ergodic horizon too short".into()));
    }
    let space = u.space().clone();
    let (r, n) = (space.n_components(), space.n_modes());
    // exact one-step transition: y -> E y + xi, xi ~ N(0, Lambda - E Lambda E^T)
    let e = kernel.decay(dt);
    let (_, step_cov) = kernel.transition(&Field::zeros(&space), dt)?;
    let step_sampler = GaussianSampler::from_covariance(&space, step_cov.assembled())?;
    let mut stream = KeyStream::new(compose(seed, 0xE6_0D1C));
    let mut y = kernel.sampler()?.sample(&mut stream);
    for _ in 0..n_burn {
        let mut next = y.apply_matrix(&e);
        next.add_scaled(1.0, &step_sampler.sample(&mut stream));
        y = next;
    }
    let n_batches = 50usize;
    let batch_len = n_samples / n_batches;
    let total = batch_len * n_batches;
    let mut batch_means: Vec<DMatrix<f64>> = Vec::with_capacity(n_batches);
    let mut grand = DMatrix::zeros(r, n);
    for _ in 0..n_batches {
        let mut acc = DMatrix::zeros(r, n);
        for _ in 0..batch_len {
            let val = drift_integrand(coeffs, u, &y)?;
            acc += val.coeffs();
            let mut next = y.apply_matrix(&e);
            next.add_scaled(1.0, &step_sampler.sample(&mut stream));
            y = next;
        }
        acc /= batch_len as f64;
        grand += &acc;
        batch_means.push(acc);
    }
    grand /= n_batches as f64;
    let mut se_sq = 0.0;
    for c in 0..r {
        for i in 0..n {
            let mut var = 0.0;
            for bm in &batch_means {
                var += (bm[(c, i)] - grand[(c, i)]).powi(2);
            }
            var /= (n_batches - 1) as f64;
            se_sq += var / n_batches as f64;
        }
    }
    let mut value = Field::zeros(&space);
    value.coeffs_mut().copy_from(&grand);
    Ok(DriftResult {
        value,
        method: DriftMethod::Ergodic,
        error_estimate: se_sq.sqrt(),
        sample_count: total,
    })
}

/// Ratio `||S(u1) - S(u2)||_{H^1} / [(1 + ||u1||^2_{H^2} + ||u2||^2_{H^2}) ||u1 - u2||_{H^1}]`
/// probed by property tests for boundedness.
pub fn drift_lipschitz_probe(
    coeffs: &CoefficientSet,
    u1: &Field,
    u2: &Field,
) -> Result<f64> {
    let diff = u1 - u2;
    let denom_dist = diff.sobolev_norm(1.0);
    if denom_dist == 0.0 {
        return Err(SimError::InvalidConfig(
            "Lipschitz probe undefined for identical arguments".into(),
        ));
    }
    let k1 = OuKernel::build(coeffs, u1)?;
    let k2 = OuKernel::build(coeffs, u2)?;
    let s1 = drift_spectral(coeffs, u1, &k1)?.value;
    let s2 = drift_spectral(coeffs, u2, &k2)?.value;
    let num = (&s1 - &s2).sobolev_norm(1.0);
    let denom = (1.0 + u1.sobolev_norm_sq(2.0) + u2.sobolev_norm_sq(2.0)) * denom_dist;
    Ok(num / denom)
}
