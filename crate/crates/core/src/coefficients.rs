//! The coefficient triple (friction, forcing, diffusion) and its cutoff
//! truncation.
//!
//! The friction is a nonlocal matrix map `g: H^1 -> R^{r x r}`,
//! `g(u) = G0 + sum_k A_k tanh(<u, w_k>_{H^1})`, uniformly elliptic with a
//! constant `gamma0` computed at build time from `G0` and the perturbation
//! budget. The forcing is a pointwise (Nemytskii) map applied through the
//! collocation grid, and the diffusion is multiplicative,
//! `sigma(u) dw = lambda(u(x)) dw(x)` with diagonal covariance weights
//! `theta_i = i^{-q}`.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Result, SimError};
use crate::spectral::{Field, SpectralSpace};

/// Smallest eigenvalue of the symmetric part of an r x r matrix.
pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Spectral (operator 2-)norm.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    (m.transpose() * m).symmetric_eigenvalues().max().max(0.0).sqrt()
}

/// State-dependent matrix friction with first and second derivatives.
#[derive(Clone, Debug)]
pub struct FrictionModel {
    base: DMatrix<f64>,
    perturbations: Vec<(DMatrix<f64>, Field)>,
    gamma0: f64,
    sup_norm: f64,
}

impl FrictionModel {
    /// Constant friction `g(u) = G0`; requires a positive-definite symmetric part.
    pub fn constant(base: DMatrix<f64>) -> Result<FrictionModel> {
        Self::matrix_nonlocal(base, Vec::new())
    }

    /// Zero friction, only meaningful for integrator reduction tests. The
    /// ellipticity constant is 0, so cell-problem constructions reject it.
    pub fn undamped(r: usize) -> FrictionModel {
        FrictionModel {
            base: DMatrix::zeros(r, r),
            perturbations: Vec::new(),
            gamma0: 0.0,
            sup_norm: 0.0,
        }
    }

    /// Scalar nonlocal friction `g(u) = g0 + amp * tanh(<u, w>_{H^1})`, r = 1.
    pub fn scalar_nonlocal(g0: f64, amp: f64, probe: Field) -> Result<FrictionModel> {
        Self::matrix_nonlocal(
            DMatrix::from_element(1, 1, g0),
            vec![(DMatrix::from_element(1, 1, amp), probe)],
        )
    }

    /// `g(u) = G0 + sum_k A_k tanh(<u, w_k>_{H^1})`. Ellipticity is checked
    /// here: `gamma0 = lambda_min(sym G0) - sum_k |sym A_k|` must be positive.
    pub fn matrix_nonlocal(
        base: DMatrix<f64>,
        perturbations: Vec<(DMatrix<f64>, Field)>,
    ) -> Result<FrictionModel> {
        let r = base.nrows();
        if base.ncols() != r {
            return Err(SimError::InvalidConfig("friction base matrix must be square".into()));
        }
        let mut gamma0 = min_sym_eigenvalue(&base);
        let mut sup = op_norm(&base);
        for (a, w) in &perturbations {
            if a.nrows() != r || a.ncols() != r {
                return Err(SimError::InvalidConfig(
                    "friction perturbation matrices must match the base size".into(),
                ));
            }
            if w.space().n_components() != r {
                return Err(SimError::InvalidConfig(
                    "friction probe fields must have r components".into(),
                ));
            }
            let sym = (a + a.transpose()) * 0.5;
            gamma0 -= op_norm(&sym);
            sup += op_norm(a);
        }
        if gamma0 <= 0.0 {
            return Err(SimError::InvalidConfig(format!(
                "friction model is not uniformly elliptic (gamma0 = {gamma0:.3e})"
            )));
        }
        Ok(FrictionModel { base, perturbations, gamma0, sup_norm: sup })
    }

    pub fn dim(&self) -> usize {
        self.base.nrows()
    }

    /// Uniform ellipticity constant: `<g(u) xi, xi> >= gamma0 |xi|^2`.
    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    /// Uniform bound on the operator norm of `g(u)`.
    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    /// `gamma0 / (sup |g|)^2`, the ellipticity constant of the inverse.
    pub fn gamma0_inv(&self) -> f64 {
        self.gamma0 / (self.sup_norm * self.sup_norm)
    }

    pub fn is_constant(&self) -> bool {
        self.perturbations.is_empty()
    }

    /// `g(u)`.
    pub fn matrix(&self, u: &Field) -> DMatrix<f64> {
        let mut g = self.base.clone();
        for (a, w) in &self.perturbations {
            g += a * u.h1_inner(w).tanh();
        }
        g
    }

    /// Directional derivative `Dg(u)[k]`, linear in `k`.
    pub fn derivative(&self, u: &Field, k: &Field) -> DMatrix<f64> {
        let r = self.dim();
        let mut d = DMatrix::zeros(r, r);
        for (a, w) in &self.perturbations {
            let s = u.h1_inner(w).tanh();
            d += a * ((1.0 - s * s) * k.h1_inner(w));
        }
        d
    }

    /// `D^2 g(u)[k1, k2]`.
    pub fn second_derivative(&self, u: &Field, k1: &Field, k2: &Field) -> DMatrix<f64> {
        let r = self.dim();
        let mut d = DMatrix::zeros(r, r);
        for (a, w) in &self.perturbations {
            let s = u.h1_inner(w).tanh();
            // d^2/ds^2 tanh = -2 tanh sech^2
            d += a * (-2.0 * s * (1.0 - s * s) * k1.h1_inner(w) * k2.h1_inner(w));
        }
        d
    }

    pub fn inverse(&self, u: &Field) -> Result<DMatrix<f64>> {
        self.matrix(u)
            .try_inverse()
            .ok_or_else(|| SimError::Numeric("friction matrix not invertible; ellipticity breached".into()))
    }

    /// `Dg^{-1}(u)[k] = -g^{-1}(u) [Dg(u)k] g^{-1}(u)`.
    pub fn inv_derivative(&self, u: &Field, k: &Field) -> Result<DMatrix<f64>> {
        let inv = self.inverse(u)?;
        Ok(-(&inv * self.derivative(u, k) * &inv))
    }
}

/// Pointwise nonlinearity applied componentwise to field values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PointwiseMap {
    Zero,
    Identity,
    /// componentwise sine
    Sine,
    /// `f(xi) = xi / (1 + |xi|^2)`; bounded with two bounded derivatives
    Saturating,
}

impl PointwiseMap {
    pub fn eval(&self, xi: &[f64], out: &mut [f64]) {
        match self {
            PointwiseMap::Zero => out.fill(0.0),
            PointwiseMap::Identity => out.copy_from_slice(xi),
            PointwiseMap::Sine => {
                for (o, x) in out.iter_mut().zip(xi) {
                    *o = x.sin();
                }
            }
            PointwiseMap::Saturating => {
                let s: f64 = xi.iter().map(|x| x * x).sum();
                let d = 1.0 / (1.0 + s);
                for (o, x) in out.iter_mut().zip(xi) {
                    *o = x * d;
                }
            }
        }
    }

    pub fn jacobian(&self, xi: &[f64]) -> DMatrix<f64> {
        let r = xi.len();
        match self {
            PointwiseMap::Zero => DMatrix::zeros(r, r),
            PointwiseMap::Identity => DMatrix::identity(r, r),
            PointwiseMap::Sine => {
                DMatrix::from_fn(r, r, |i, j| if i == j { xi[i].cos() } else { 0.0 })
            }
            PointwiseMap::Saturating => {
                let s: f64 = xi.iter().map(|x| x * x).sum();
                let d = 1.0 / (1.0 + s);
                DMatrix::from_fn(r, r, |i, j| {
                    let kron = if i == j { d } else { 0.0 };
                    kron - 2.0 * xi[i] * xi[j] * d * d
                })
            }
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            PointwiseMap::Zero => 0.0,
            _ => 1.0,
        }
    }
}

/// Pointwise diffusion matrix `lambda(xi)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DiffusionMatrix {
    Zero,
    Identity,
    /// `I + amp * diag(tanh xi_1, ..., tanh xi_r)`
    TanhDiag { amp: f64 },
    /// `diag(1, 1/(1 + xi_1^2))`, r = 2 only
    InvQuad,
}

impl DiffusionMatrix {
    pub fn eval(&self, xi: &[f64], out: &mut DMatrix<f64>) {
        let r = xi.len();
        out.fill(0.0);
        match self {
            DiffusionMatrix::Zero => {}
            DiffusionMatrix::Identity => {
                for c in 0..r {
                    out[(c, c)] = 1.0;
                }
            }
            DiffusionMatrix::TanhDiag { amp } => {
                for c in 0..r {
                    out[(c, c)] = 1.0 + amp * xi[c].tanh();
                }
            }
            DiffusionMatrix::InvQuad => {
                debug_assert_eq!(r, 2, "InvQuad is a two-component test model");
                out[(0, 0)] = 1.0;
                out[(1, 1)] = 1.0 / (1.0 + xi[0] * xi[0]);
            }
        }
    }

    /// Uniform bound on the operator norm of `lambda`.
    pub fn sup_norm(&self) -> f64 {
        match self {
            DiffusionMatrix::Zero => 0.0,
            DiffusionMatrix::Identity | DiffusionMatrix::InvQuad => 1.0,
            DiffusionMatrix::TanhDiag { amp } => 1.0 + amp.abs(),
        }
    }

    /// Uniform bound on |D lambda|.
    pub fn sup_deriv(&self) -> f64 {
        match self {
            DiffusionMatrix::Zero | DiffusionMatrix::Identity => 0.0,
            DiffusionMatrix::TanhDiag { amp } => amp.abs(),
            DiffusionMatrix::InvQuad => 0.65, // max |d/ds 1/(1+s^2)| = 3 sqrt(3) / 8
        }
    }
}

/// Multiplicative diffusion `sigma(u) dw = lambda(u(x)) (Q dw)(x)` with
/// `Q e_i = theta_i e_i`, `theta_i = amplitude-independent i^{-q}`.
#[derive(Clone, Debug)]
pub struct DiffusionModel {
    pub lambda: DiffusionMatrix,
    /// global noise amplitude multiplying `lambda`
    pub amplitude: f64,
    /// covariance decay exponent, `theta_i = i^{-q}`
    pub theta_q: f64,
}

impl DiffusionModel {
    pub fn new(lambda: DiffusionMatrix, amplitude: f64, theta_q: f64) -> Result<DiffusionModel> {
        // Sum theta_i^2 alpha_i^{1 + 1/6} < infinity needs q > 7/6 + 1/2; the
        // catalog default q = 2 leaves slack.
        if theta_q < 5.0 / 3.0 + 1e-9 {
            return Err(SimError::InvalidConfig(format!(
                "theta decay exponent q = {theta_q} too small; need q > 5/3 for trace-class covariance"
            )));
        }
        if !(amplitude >= 0.0) {
            return Err(SimError::InvalidConfig("noise amplitude must be >= 0".into()));
        }
        Ok(DiffusionModel { lambda, amplitude, theta_q })
    }

    #[inline]
    pub fn theta(&self, mode: usize) -> f64 {
        ((mode + 1) as f64).powf(-self.theta_q)
    }

    pub fn theta_sq_sum(&self, n_modes: usize) -> f64 {
        (0..n_modes).map(|i| self.theta(i).powi(2)).sum()
    }

    /// Partial sum of `theta_i^2 alpha_i^{1 + 1/6}` over the configured modes.
    pub fn theta_sq_alpha_sum(&self, space: &SpectralSpace) -> f64 {
        (0..space.n_modes())
            .map(|i| self.theta(i).powi(2) * space.eigenvalue(i).powf(1.0 + 1.0 / 6.0))
            .sum()
    }

    pub fn lambda_at(&self, xi: &[f64], out: &mut DMatrix<f64>) {
        self.lambda.eval(xi, out);
        if self.amplitude != 1.0 {
            *out *= self.amplitude;
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.amplitude * self.lambda.sup_norm()
    }

    pub fn sup_deriv(&self) -> f64 {
        self.amplitude * self.lambda.sup_deriv()
    }

    /// `sigma(u)` applied to a per-(component, mode) increment table:
    /// synthesize the noise field `sum_i theta_i z_{c,i} e_i`, multiply by
    /// `lambda(u(x))` pointwise, project back onto the basis.
    pub fn apply(
        &self,
        space: &Arc<SpectralSpace>,
        u: &Field,
        draws: &DMatrix<f64>,
    ) -> Result<Field> {
        let r = space.n_components();
        let n = space.n_modes();
        if draws.nrows() != r || draws.ncols() != n {
            return Err(SimError::SizeMismatch(format!(
                "noise table must be {r}x{n}, got {}x{}",
                draws.nrows(),
                draws.ncols()
            )));
        }
        if matches!(self.lambda, DiffusionMatrix::Zero) || self.amplitude == 0.0 {
            return Ok(Field::zeros(space));
        }
        let mut weighted = draws.clone();
        for i in 0..n {
            let t = self.theta(i);
            for c in 0..r {
                weighted[(c, i)] *= t;
            }
        }
        if matches!(self.lambda, DiffusionMatrix::Identity) && self.amplitude == 1.0 {
            return Field::from_coeffs(space, weighted);
        }
        let noise = Field::from_coeffs(space, weighted)?;
        let noise_vals = noise.to_collocation();
        let u_vals = u.to_collocation();
        let m = space.collocation_size();
        let mut out_vals = DMatrix::zeros(r, m);
        let mut lam = DMatrix::zeros(r, r);
        let mut xi = vec![0.0; r];
        for j in 0..m {
            for c in 0..r {
                xi[c] = u_vals[(c, j)];
            }
            self.lambda_at(&xi, &mut lam);
            for a in 0..r {
                let mut acc = 0.0;
                for b in 0..r {
                    acc += lam[(a, b)] * noise_vals[(b, j)];
                }
                out_vals[(a, j)] = acc;
            }
        }
        Field::from_collocation(space, &out_vals)
    }
}

/// Smooth cutoff `Phi_R` of the `H^{rbar}` norm: 1 on `[0, R]`, 0 on
/// `[R+1, inf)`, cubic smoothstep in between.
#[derive(Clone, Copy, Debug)]
pub struct CutoffModel {
    pub radius: f64,
    pub rbar: f64,
    pub sbar: f64,
    pub kbar: f64,
}

impl CutoffModel {
    pub fn new(radius: f64, rbar: f64, sbar: f64, kbar: f64) -> Result<CutoffModel> {
        if radius < 1.0 {
            return Err(SimError::InvalidConfig(format!("cutoff radius must be >= 1, got {radius}")));
        }
        let lower = (2.0 * sbar / (1.0 + sbar)).max(2.0 * kbar - 3.0);
        if !(rbar > lower && rbar < 1.0) {
            return Err(SimError::InvalidConfig(format!(
                "cutoff exponent rbar = {rbar} must lie in ({lower}, 1) for sbar = {sbar}, kbar = {kbar}"
            )));
        }
        Ok(CutoffModel { radius, rbar, sbar, kbar })
    }

    /// Ramp value at norm `t`.
    pub fn phi(&self, t: f64) -> f64 {
        if t <= self.radius {
            1.0
        } else if t >= self.radius + 1.0 {
            0.0
        } else {
            let s = t - self.radius;
            1.0 - 3.0 * s * s + 2.0 * s * s * s
        }
    }

    pub fn phi_prime(&self, t: f64) -> f64 {
        if t <= self.radius || t >= self.radius + 1.0 {
            0.0
        } else {
            let s = t - self.radius;
            -6.0 * s + 6.0 * s * s
        }
    }
}

/// The full coefficient bundle consumed by integrators and cell problems.
/// With `cutoff: None` the raw coefficients are used; otherwise every call
/// goes through `Phi_R(||u||_{H^rbar})`, with exact pass-through on the ball
/// (the truncated maps agree bitwise with the raw ones while `Phi = 1`).
#[derive(Clone, Debug)]
pub struct CoefficientSet {
    pub friction: FrictionModel,
    pub forcing: PointwiseMap,
    pub diffusion: DiffusionModel,
    pub cutoff: Option<CutoffModel>,
}

impl CoefficientSet {
    pub fn cutoff_value(&self, u: &Field) -> f64 {
        match &self.cutoff {
            None => 1.0,
            Some(c) => c.phi(u.sobolev_norm(c.rbar)),
        }
    }

    /// `g_R(u) = gamma0 I + Phi (g(u) - gamma0 I)`; ellipticity is preserved
    /// for every cutoff value.
    pub fn friction_mat(&self, u: &Field) -> DMatrix<f64> {
        let g = self.friction.matrix(u);
        let phi = self.cutoff_value(u);
        if phi == 1.0 {
            return g;
        }
        let r = g.nrows();
        let g0 = self.friction.gamma0();
        if phi == 0.0 {
            return DMatrix::identity(r, r) * g0;
        }
        DMatrix::identity(r, r) * g0 + (g - DMatrix::identity(r, r) * g0) * phi
    }

    pub fn friction_inv(&self, u: &Field) -> Result<DMatrix<f64>> {
        self.friction_mat(u)
            .try_inverse()
            .ok_or_else(|| SimError::Numeric("truncated friction matrix not invertible".into()))
    }

    /// `D g_R(u)[k]`, including the chain-rule term through the cutoff norm.
    pub fn d_friction(&self, u: &Field, k: &Field) -> DMatrix<f64> {
        match &self.cutoff {
            None => self.friction.derivative(u, k),
            Some(c) => {
                let norm = u.sobolev_norm(c.rbar);
                let phi = c.phi(norm);
                if phi == 1.0 {
                    return self.friction.derivative(u, k);
                }
                let r = self.friction.dim();
                if phi == 0.0 {
                    return DMatrix::zeros(r, r);
                }
                let mut d = self.friction.derivative(u, k) * phi;
                let dphi = c.phi_prime(norm);
                if dphi != 0.0 && norm > 0.0 {
                    let dir = u.sobolev_inner(k, c.rbar) / norm;
                    let g0 = self.friction.gamma0();
                    d += (self.friction.matrix(u) - DMatrix::identity(r, r) * g0) * (dphi * dir);
                }
                d
            }
        }
    }

    /// `D g_R^{-1}(u)[k] = -g_R^{-1} [D g_R(u) k] g_R^{-1}`.
    pub fn d_friction_inv(&self, u: &Field, k: &Field) -> Result<DMatrix<f64>> {
        let inv = self.friction_inv(u)?;
        Ok(-(&inv * self.d_friction(u, k) * &inv))
    }

    /// `f_R(u)` through the collocation grid.
    pub fn apply_forcing(&self, u: &Field) -> Result<Field> {
        let space = u.space().clone();
        let phi = self.cutoff_value(u);
        if phi == 0.0 || matches!(self.forcing, PointwiseMap::Zero) {
            return Ok(Field::zeros(&space));
        }
        let r = space.n_components();
        let m = space.collocation_size();
        let vals = u.to_collocation();
        let mut out = DMatrix::zeros(r, m);
        let mut xi = vec![0.0; r];
        let mut fx = vec![0.0; r];
        for j in 0..m {
            for c in 0..r {
                xi[c] = vals[(c, j)];
            }
            self.forcing.eval(&xi, &mut fx);
            for c in 0..r {
                out[(c, j)] = fx[c];
            }
        }
        let mut f = Field::from_collocation(&space, &out)?;
        if phi != 1.0 {
            f.scale(phi);
        }
        Ok(f)
    }

    /// `sigma_R(u)` applied to an increment table.
    pub fn apply_diffusion(&self, u: &Field, draws: &DMatrix<f64>) -> Result<Field> {
        let phi = self.cutoff_value(u);
        let space = u.space().clone();
        if phi == 0.0 {
            return Ok(Field::zeros(&space));
        }
        let mut f = self.diffusion.apply(&space, u, draws)?;
        if phi != 1.0 {
            f.scale(phi);
        }
        Ok(f)
    }

    pub fn gamma0(&self) -> f64 {
        self.friction.gamma0()
    }

    pub fn with_cutoff(&self, cutoff: Option<CutoffModel>) -> CoefficientSet {
        CoefficientSet { cutoff, ..self.clone() }
    }
}
