//! Named coefficient-model presets selected from the run configuration.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::coefficients::{
    CoefficientSet, CutoffModel, DiffusionMatrix, DiffusionModel, FrictionModel, PointwiseMap,
};
use crate::error::{Result, SimError};
use crate::harness::config::RunConfig;
use crate::spectral::{Field, SpectralSpace};

pub fn build_space(cfg: &RunConfig) -> Result<Arc<SpectralSpace>> {
    SpectralSpace::build(cfg.length, cfg.n_modes, cfg.n_components)
}

/// Instantiate the coefficient bundle named by `cfg.model`.
///
/// * `default`: two components; friction `G0 + A1 tanh(<u, e1>_{H^1})` with
///   `G0 = [[2, 0.5], [0.5, 3]]`, `|A1| ~ 0.5`; saturating forcing
///   `f(xi) = xi / (1 + |xi|^2)`; diffusion `I + 0.3 diag(tanh xi_c)`;
///   `theta_i = i^{-q}`.
/// * `constant`: same, with the friction frozen at `G0` (zero drift case).
/// * `scalar`: one component, `g(u) = 2 + 0.5 tanh(<u, e1>_{H^1})`.
pub fn build_coefficients(space: &Arc<SpectralSpace>, cfg: &RunConfig) -> Result<CoefficientSet> {
    let cutoff = match cfg.cutoff_radius {
        None => None,
        Some(radius) => Some(CutoffModel::new(radius, cfg.rbar, cfg.sbar, cfg.kbar)?),
    };
    let diffusion = DiffusionModel::new(
        DiffusionMatrix::TanhDiag { amp: 0.3 },
        cfg.noise_amplitude,
        cfg.theta_q,
    )?;
    let friction = match cfg.model.as_str() {
        "default" => {
            if space.n_components() != 2 {
                return Err(SimError::InvalidConfig(
                    "model 'default' needs n_components = 2".into(),
                ));
            }
            let base = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 3.0]);
            let a1 = DMatrix::from_row_slice(2, 2, &[0.3, 0.4, -0.2, 0.1]);
            let w1 = Field::basis(space, 0, 0, 1.0);
            FrictionModel::matrix_nonlocal(base, vec![(a1, w1)])?
        }
        "constant" => {
            let r = space.n_components();
            let mut base = DMatrix::identity(r, r) * 2.0;
            if r >= 2 {
                base[(1, 1)] = 3.0;
                base[(0, 1)] = 0.5;
                base[(1, 0)] = 0.5;
            }
            FrictionModel::constant(base)?
        }
        "scalar" => {
            if space.n_components() != 1 {
                return Err(SimError::InvalidConfig(
                    "model 'scalar' needs n_components = 1".into(),
                ));
            }
            FrictionModel::scalar_nonlocal(2.0, 0.5, Field::basis(space, 0, 0, 1.0))?
        }
        other => {
            return Err(SimError::InvalidConfig(format!(
                "unknown model '{other}' (expected default | constant | scalar)"
            )))
        }
    };
    Ok(CoefficientSet { friction, forcing: PointwiseMap::Saturating, diffusion, cutoff })
}

/// The fixed smooth initial position used by the experiments: a few low
/// modes, finite in every `H^s`, well inside the default cutoff ball. The
/// probe-mode coefficient (component 0, mode 1) is kept small so the
/// nonlocal friction starts near the steep part of its tanh response,
/// where the state dependence (and hence the noise-induced drift) is
/// strongest.
pub fn default_initial_field(space: &Arc<SpectralSpace>) -> Field {
    let mut f = Field::zeros(space);
    let n = space.n_modes();
    f.coeffs_mut()[(0, 0)] = 0.1;
    if n > 1 {
        f.coeffs_mut()[(0, 1)] = 0.8;
    }
    if n > 2 {
        f.coeffs_mut()[(0, 2)] = -0.15;
    }
    if space.n_components() >= 2 {
        f.coeffs_mut()[(1, 0)] = 0.5;
        if n > 1 {
            f.coeffs_mut()[(1, 1)] = 0.2;
        }
        if n > 3 {
            f.coeffs_mut()[(1, 3)] = -0.1;
        }
    }
    f
}
