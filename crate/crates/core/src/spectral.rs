//! Dirichlet-Laplacian eigenbasis on an interval, fractional Sobolev norms,
//! and the discrete sine transform pair used for pointwise (Nemytskii) maps.
//!
//! On `(0, l)` the eigenpairs are `e_i(x) = sqrt(2/l) sin(i pi x / l)` with
//! `alpha_i = (i pi / l)^2`, so a field is stored as an `r x N` matrix of
//! coefficients against `e_1 .. e_N`, one row per component. The collocation
//! grid has `M = 2N` interior points `x_j = j l / (M+1)`; on that grid the
//! discrete orthogonality of the sine basis makes the analysis/synthesis
//! pair an exact inverse on band-limited fields.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Result, SimError};
use crate::noise::{compose, KeyStream};

/// Immutable description of the truncated eigenbasis. Shared via `Arc`;
/// transforms are pure, so a space can be used from many threads.
#[derive(Debug)]
pub struct SpectralSpace {
    length: f64,
    n_modes: usize,
    n_components: usize,
    eigenvalues: Vec<f64>,
    collocation_size: usize,
    grid: Vec<f64>,
    /// `synth[(j, i)] = e_{i+1}(x_j)`, size M x N.
    synth: DMatrix<f64>,
    synth_t: DMatrix<f64>,
    quad_weight: f64,
}

impl SpectralSpace {
    /// `length` is the interval size, `n_modes` the Galerkin truncation N,
    /// `n_components` the number r of field components.
    pub fn build(length: f64, n_modes: usize, n_components: usize) -> Result<Arc<Self>> {
        if !(length > 0.0) {
            return Err(SimError::InvalidConfig(format!("domain length must be > 0, got {length}")));
        }
        if n_modes == 0 || n_components == 0 {
            return Err(SimError::InvalidConfig(
                "n_modes and n_components must be >= 1".into(),
            ));
        }
        let m = 2 * n_modes;
        let eigenvalues: Vec<f64> = (1..=n_modes)
            .map(|i| (i as f64 * std::f64::consts::PI / length).powi(2))
            .collect();
        let grid: Vec<f64> = (1..=m).map(|j| j as f64 * length / (m + 1) as f64).collect();
        let norm = (2.0 / length).sqrt();
        let mut synth = DMatrix::zeros(m, n_modes);
        for (j, &x) in grid.iter().enumerate() {
            for i in 0..n_modes {
                synth[(j, i)] = norm * ((i + 1) as f64 * std::f64::consts::PI * x / length).sin();
            }
        }
        let synth_t = synth.transpose();
        Ok(Arc::new(SpectralSpace {
            length,
            n_modes,
            n_components,
            eigenvalues,
            collocation_size: m,
            grid,
            synth,
            synth_t,
            quad_weight: length / (m + 1) as f64,
        }))
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn collocation_size(&self) -> usize {
        self.collocation_size
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// `alpha_{mode+1}` (0-based mode index).
    #[inline]
    pub fn eigenvalue(&self, mode: usize) -> f64 {
        self.eigenvalues[mode]
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Point evaluation of the basis function `e_{mode+1}`.
    pub fn basis_eval(&self, mode: usize, x: f64) -> f64 {
        (2.0 / self.length).sqrt()
            * ((mode + 1) as f64 * std::f64::consts::PI * x / self.length).sin()
    }

    /// Flat index used when fields are viewed as vectors in R^{N r}.
    #[inline]
    pub fn flat_index(&self, component: usize, mode: usize) -> usize {
        mode * self.n_components + component
    }

    pub fn flat_dim(&self) -> usize {
        self.n_components * self.n_modes
    }

    /// `e_{i+1}(x_j)` as an M x N matrix (synthesis on the collocation grid).
    pub fn synthesis_matrix(&self) -> &DMatrix<f64> {
        &self.synth
    }

    /// Quadrature weight of the collocation grid, `l / (M + 1)`.
    pub fn quadrature_weight(&self) -> f64 {
        self.quad_weight
    }
}

/// An r-component field stored spectrally; row c, column i holds
/// the coefficient of component c against `e_{i+1}`.
#[derive(Clone, Debug)]
pub struct Field {
    space: Arc<SpectralSpace>,
    coeffs: DMatrix<f64>,
}

impl Field {
    pub fn zeros(space: &Arc<SpectralSpace>) -> Field {
        Field {
            space: space.clone(),
            coeffs: DMatrix::zeros(space.n_components, space.n_modes),
        }
    }

    pub fn from_coeffs(space: &Arc<SpectralSpace>, coeffs: DMatrix<f64>) -> Result<Field> {
        if coeffs.nrows() != space.n_components || coeffs.ncols() != space.n_modes {
            return Err(SimError::SizeMismatch(format!(
                "expected {}x{} coefficient matrix, got {}x{}",
                space.n_components,
                space.n_modes,
                coeffs.nrows(),
                coeffs.ncols()
            )));
        }
        if !coeffs.iter().all(|v| v.is_finite()) {
            return Err(SimError::InvalidConfig("field coefficients must be finite".into()));
        }
        Ok(Field { space: space.clone(), coeffs })
    }

    /// The basis field `amp * e_{mode+1}` placed in one component.
    pub fn basis(space: &Arc<SpectralSpace>, component: usize, mode: usize, amp: f64) -> Field {
        let mut f = Field::zeros(space);
        f.coeffs[(component, mode)] = amp;
        f
    }

    /// Deterministic pseudo-random field with coefficients
    /// `scale * N(0,1) / (i+1)^decay`; `decay >= 2.5` keeps H^2 norms tame.
    pub fn random_smooth(space: &Arc<SpectralSpace>, key: u64, scale: f64, decay: f64) -> Field {
        let mut f = Field::zeros(space);
        for c in 0..space.n_components {
            let mut stream = KeyStream::new(compose(key, c as u64));
            for i in 0..space.n_modes {
                f.coeffs[(c, i)] = scale * stream.next_normal() / ((i + 1) as f64).powf(decay);
            }
        }
        f
    }

    pub fn space(&self) -> &Arc<SpectralSpace> {
        &self.space
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.coeffs
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|v| v.is_finite())
    }

    /// Fractional Sobolev norm `(sum_i alpha_i^delta <h, e_i>^2)^(1/2)`.
    /// The square root is part of the norm convention so that delta = 0
    /// recovers the L^2 norm.
    pub fn sobolev_norm(&self, delta: f64) -> f64 {
        self.sobolev_norm_sq(delta).sqrt()
    }

    pub fn sobolev_norm_sq(&self, delta: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.space.n_modes {
            let w = if delta == 0.0 { 1.0 } else { self.space.eigenvalue(i).powf(delta) };
            let mut col = 0.0;
            for c in 0..self.space.n_components {
                let v = self.coeffs[(c, i)];
                col += v * v;
            }
            acc += w * col;
        }
        acc
    }

    /// `<self, other>_{H^delta}` with the same eigenvalue weights.
    pub fn sobolev_inner(&self, other: &Field, delta: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.space.n_modes {
            let w = if delta == 0.0 { 1.0 } else { self.space.eigenvalue(i).powf(delta) };
            let mut col = 0.0;
            for c in 0..self.space.n_components {
                col += self.coeffs[(c, i)] * other.coeffs[(c, i)];
            }
            acc += w * col;
        }
        acc
    }

    pub fn h_inner(&self, other: &Field) -> f64 {
        self.sobolev_inner(other, 0.0)
    }

    pub fn h1_inner(&self, other: &Field) -> f64 {
        self.sobolev_inner(other, 1.0)
    }

    /// Collocation values, r x M.
    pub fn to_collocation(&self) -> DMatrix<f64> {
        &self.coeffs * &self.space.synth_t
    }

    /// Project r x M collocation values onto the first N modes.
    pub fn from_collocation(space: &Arc<SpectralSpace>, values: &DMatrix<f64>) -> Result<Field> {
        if values.nrows() != space.n_components || values.ncols() != space.collocation_size {
            return Err(SimError::SizeMismatch(format!(
                "expected {}x{} collocation values, got {}x{}",
                space.n_components,
                space.collocation_size,
                values.nrows(),
                values.ncols()
            )));
        }
        let coeffs = values * &space.synth * space.quad_weight;
        Ok(Field { space: space.clone(), coeffs })
    }

    /// Apply an r x r matrix to every mode's component vector.
    pub fn apply_matrix(&self, m: &DMatrix<f64>) -> Field {
        Field { space: self.space.clone(), coeffs: m * &self.coeffs }
    }

    /// The Laplacian action: mode i is multiplied by -alpha_i.
    pub fn laplacian(&self) -> Field {
        let mut out = self.clone();
        for i in 0..self.space.n_modes {
            let a = -self.space.eigenvalue(i);
            for c in 0..self.space.n_components {
                out.coeffs[(c, i)] *= a;
            }
        }
        out
    }

    pub fn scale(&mut self, a: f64) {
        self.coeffs *= a;
    }

    pub fn add_scaled(&mut self, a: f64, other: &Field) {
        self.coeffs.zip_apply(&other.coeffs, |x, y| *x += a * y);
    }

    /// Pointwise evaluation `h(x)` (summing the truncated series).
    pub fn eval(&self, component: usize, x: f64) -> f64 {
        (0..self.space.n_modes)
            .map(|i| self.coeffs[(component, i)] * self.space.basis_eval(i, x))
            .sum()
    }
}

impl std::ops::Add<&Field> for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        Field { space: self.space.clone(), coeffs: &self.coeffs + &rhs.coeffs }
    }
}

impl std::ops::Sub<&Field> for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        Field { space: self.space.clone(), coeffs: &self.coeffs - &rhs.coeffs }
    }
}

impl std::ops::Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, rhs: f64) -> Field {
        Field { space: self.space.clone(), coeffs: &self.coeffs * rhs }
    }
}

/// Position-velocity pair `(u, du/dt)` with its mass parameter; an element
/// of `H^delta x H^(delta-1)` for whatever delta the norms are taken in.
#[derive(Clone, Debug)]
pub struct PhaseState {
    pub u: Field,
    pub v: Field,
    pub mass: f64,
}

impl PhaseState {
    pub fn new(u: Field, v: Field, mass: f64) -> Result<PhaseState> {
        if !Arc::ptr_eq(u.space(), v.space()) {
            return Err(SimError::SizeMismatch(
                "position and velocity must share one spectral space".into(),
            ));
        }
        if !(mass > 0.0) {
            return Err(SimError::InvalidConfig(format!("mass must be > 0, got {mass}")));
        }
        Ok(PhaseState { u, v, mass })
    }

    /// `||(u, sqrt(mu) v)||^2` in `H^delta x H^(delta-1)`; these are the
    /// initial-condition functionals tracked by the energy ledger.
    pub fn scaled_pair_norm_sq(&self, delta: f64) -> f64 {
        self.u.sobolev_norm_sq(delta) + self.mass * self.v.sobolev_norm_sq(delta - 1.0)
    }

    /// Norm of the raw pair `(u, v)` in `H^delta x H^(delta-1)`.
    pub fn pair_norm_sq(&self, delta: f64) -> f64 {
        self.u.sobolev_norm_sq(delta) + self.v.sobolev_norm_sq(delta - 1.0)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}
