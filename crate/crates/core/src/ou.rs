//! The frozen-coefficient Ornstein-Uhlenbeck cell problem
//! `dy = -g(u) y dt + sigma(u) dw^Q`: its invariant covariance via a
//! block-Sylvester solve, exact transition kernels, Gaussian sampling, and
//! exact action of the transition semigroup and generator on quadratic
//! functionals.
//!
//! Because the friction matrix acts identically on every spatial mode, the
//! stationary covariance decouples into N^2 independent r x r Lyapunov
//! problems `g L(i,j) + L(i,j) g^T = B(i,j)`, all sharing one Kronecker
//! factorization.
//!
//! Functional calculus convention: quadratic functionals declare their
//! derivatives with respect to the raw spectral coefficients (mode-major
//! flattening), and the generator's trace term is taken against the noise
//! Gram matrix in that same pairing. Abstract-pairing formulations reduce
//! to this once gradients are expressed in coefficients.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::coefficients::{min_sym_eigenvalue, op_norm, CoefficientSet};
use crate::error::{Result, SimError};
use crate::noise::KeyStream;
use crate::spectral::{Field, SpectralSpace};

/// Matrix exponential of a small dense matrix (scaling and squaring with a
/// [6/6] Pade approximant; r <= 4 here, so accuracy is machine-level).
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs())) * n as f64;
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let x = a / 2f64.powi(s);
    const C: [f64; 7] = [
        1.0,
        0.5,
        5.0 / 44.0,
        1.0 / 66.0,
        1.0 / 792.0,
        1.0 / 15840.0,
        1.0 / 665280.0,
    ];
    let id = DMatrix::identity(n, n);
    let x2 = &x * &x;
    let x4 = &x2 * &x2;
    let x6 = &x2 * &x4;
    let even = &id * C[0] + &x2 * C[2] + &x4 * C[4] + &x6 * C[6];
    let odd = &x * (&id * C[1] + &x2 * C[3] + &x4 * C[5]);
    let num = &even + &odd;
    let den = &even - &odd;
    let mut e = den
        .lu()
        .solve(&num)
        .expect("Pade denominator is nonsingular for scaled input");
    for _ in 0..s {
        e = &e * &e;
    }
    e
}

/// Symmetric block matrix indexed by (mode, mode) with r x r blocks,
/// stored assembled as an (N r) x (N r) matrix with flat index
/// `mode * r + component`.
#[derive(Clone, Debug)]
pub struct BlockCovariance {
    n_modes: usize,
    r: usize,
    mat: DMatrix<f64>,
}

impl BlockCovariance {
    pub fn zeros(n_modes: usize, r: usize) -> Self {
        BlockCovariance { n_modes, r, mat: DMatrix::zeros(n_modes * r, n_modes * r) }
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_components(&self) -> usize {
        self.r
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, a: usize, b: usize) -> f64 {
        self.mat[(i * self.r + a, j * self.r + b)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, a: usize, b: usize, v: f64) {
        self.mat[(i * self.r + a, j * self.r + b)] = v;
    }

    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.mat.view((i * self.r, j * self.r), (self.r, self.r)).into()
    }

    pub fn set_block(&mut self, i: usize, j: usize, blk: &DMatrix<f64>) {
        self.mat.view_mut((i * self.r, j * self.r), (self.r, self.r)).copy_from(blk);
    }

    pub fn assembled(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn assembled_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.mat
    }

    pub fn scale(&mut self, a: f64) {
        self.mat *= a;
    }

    /// Max over blocks of `|block(i,j) - block(j,i)^T|`.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for p in 0..self.mat.nrows() {
            for q in 0..p {
                worst = worst.max((self.mat[(p, q)] - self.mat[(q, p)]).abs());
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.mat.symmetric_eigenvalues().min()
    }

    /// `Tr_H` = sum of diagonal entries.
    pub fn trace_h(&self) -> f64 {
        self.mat.trace()
    }

    /// `Tr_{H^1}` = sum over modes of `alpha_i * tr(block(i,i))`.
    pub fn trace_h1(&self, space: &SpectralSpace) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n_modes {
            let mut t = 0.0;
            for a in 0..self.r {
                t += self.get(i, i, a, a);
            }
            acc += space.eigenvalue(i) * t;
        }
        acc
    }
}

/// View a field's coefficient matrix as a flat vector (mode-major).
pub fn flatten(f: &Field) -> DVector<f64> {
    let space = f.space();
    let (r, n) = (space.n_components(), space.n_modes());
    let mut v = DVector::zeros(r * n);
    for i in 0..n {
        for c in 0..r {
            v[i * r + c] = f.coeffs()[(c, i)];
        }
    }
    v
}

pub fn unflatten(space: &Arc<SpectralSpace>, v: &DVector<f64>) -> Field {
    let (r, n) = (space.n_components(), space.n_modes());
    let mut f = Field::zeros(space);
    for i in 0..n {
        for c in 0..r {
            f.coeffs_mut()[(c, i)] = v[i * r + c];
        }
    }
    f
}

/// The noise Gram matrix `B = [sigma_R(u) Q][sigma_R(u) Q]^*` in spectral
/// coordinates: for each noise direction (mode k, component c), the field
/// `lambda(u) theta_k e_k eps_c` is expanded in the basis and its coefficient
/// vector accumulated as an outer product. Symmetric PSD by construction.
pub fn noise_gram(coeffs: &CoefficientSet, u: &Field) -> Result<BlockCovariance> {
    let space = u.space().clone();
    let (r, n, m) = (space.n_components(), space.n_modes(), space.collocation_size());
    let mut gram = BlockCovariance::zeros(n, r);
    let phi = coeffs.cutoff_value(u);
    if phi == 0.0 || coeffs.diffusion.sup_norm() == 0.0 {
        return Ok(gram);
    }
    let u_vals = u.to_collocation();
    // lambda(u(x_j)) for every collocation point
    let mut lam_at = vec![DMatrix::zeros(r, r); m];
    let mut xi = vec![0.0; r];
    for j in 0..m {
        for c in 0..r {
            xi[c] = u_vals[(c, j)];
        }
        coeffs.diffusion.lambda_at(&xi, &mut lam_at[j]);
    }
    let synth = space.synthesis_matrix();
    let w = space.quadrature_weight();
    let mut column = DVector::zeros(n * r);
    for k in 0..n {
        let theta = coeffs.diffusion.theta(k);
        if theta == 0.0 {
            continue;
        }
        for c in 0..r {
            // gamma[a, i] = w * sum_j lam[j][(a,c)] * theta * synth[j,k] * synth[j,i]
            column.fill(0.0);
            for a in 0..r {
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..m {
                        acc += lam_at[j][(a, c)] * synth[(j, k)] * synth[(j, i)];
                    }
                    column[i * r + a] = acc * theta * w;
                }
            }
            gram.assembled_mut().ger(1.0, &column, &column, 1.0);
        }
    }
    if phi != 1.0 {
        gram.scale(phi * phi);
    }
    Ok(gram)
}

/// Solve `g L(i,j) + L(i,j) g^T = B(i,j)` for every block through one dense
/// Kronecker factorization of `I ox g + g ox I`. Returns the covariance and
/// the largest blockwise residual.
pub fn lyapunov_solve(g: &DMatrix<f64>, gram: &BlockCovariance) -> Result<(BlockCovariance, f64)> {
    let r = g.nrows();
    let n = gram.n_modes();
    if gram.n_components() != r {
        return Err(SimError::SizeMismatch("gram blocks do not match friction size".into()));
    }
    if min_sym_eigenvalue(g) <= 0.0 {
        return Err(SimError::Numeric(
            "friction spectrum must lie in the open right half-plane".into(),
        ));
    }
    let rr = r * r;
    let mut k = DMatrix::zeros(rr, rr);
    let id = DMatrix::<f64>::identity(r, r);
    // column-stacking convention: vec(g X) = (I ox g) vec(X), vec(X g^T) = (g ox I) vec(X)
    for p in 0..r {
        for q in 0..r {
            for s in 0..r {
                for t in 0..r {
                    k[(q * r + p, t * r + s)] = id[(q, t)] * g[(p, s)] + g[(q, t)] * id[(p, s)];
                }
            }
        }
    }
    let lu = k.clone().lu();
    // cheap conditioning certificate for the error path
    let mut inv_norm = 0.0f64;
    for col in 0..rr {
        let mut e = DVector::zeros(rr);
        e[col] = 1.0;
        match lu.solve(&e) {
            Some(x) => inv_norm = inv_norm.max(x.amax()),
            None => {
                return Err(SimError::Numeric(
                    "Kronecker system for the Lyapunov solve is singular".into(),
                ))
            }
        }
    }
    let cond = op_norm(&k) * inv_norm * (rr as f64).sqrt();
    if cond > 1e14 {
        return Err(SimError::Numeric(format!(
            "Kronecker system too ill-conditioned for a reliable Lyapunov solve (cond ~ {cond:.2e})"
        )));
    }
    let mut lambda = BlockCovariance::zeros(n, r);
    let mut rhs = DVector::zeros(rr);
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..=i {
            let b = gram.block(i, j);
            for q in 0..r {
                for p in 0..r {
                    rhs[q * r + p] = b[(p, q)];
                }
            }
            let x = lu
                .solve(&rhs)
                .ok_or_else(|| SimError::Numeric("Lyapunov solve failed".into()))?;
            let mut blk = DMatrix::zeros(r, r);
            for q in 0..r {
                for p in 0..r {
                    blk[(p, q)] = x[q * r + p];
                }
            }
            let resid = (g * &blk + &blk * g.transpose() - &b).amax();
            worst = worst.max(resid);
            lambda.set_block(i, j, &blk);
            if j != i {
                lambda.set_block(j, i, &blk.transpose());
            }
        }
    }
    Ok((lambda, worst))
}

/// Trapezoid/Simpson quadrature of the defining integral
/// `int_0^T e^{-g s} B e^{-g^T s} ds`; validation oracle for `lyapunov_solve`.
pub fn lambda_by_quadrature(
    g: &DMatrix<f64>,
    gram: &BlockCovariance,
    horizon: f64,
    panels: usize,
) -> BlockCovariance {
    let n = gram.n_modes();
    let r = gram.n_components();
    let panels = if panels % 2 == 0 { panels } else { panels + 1 };
    let h = horizon / panels as f64;
    let mut out = BlockCovariance::zeros(n, r);
    for p in 0..=panels {
        let s = p as f64 * h;
        let w = if p == 0 || p == panels {
            1.0
        } else if p % 2 == 1 {
            4.0
        } else {
            2.0
        } * h
            / 3.0;
        let e = expm(&(-g * s));
        let et = e.transpose();
        for i in 0..n {
            for j in 0..=i {
                let term = &e * gram.block(i, j) * &et;
                let mut blk = out.block(i, j);
                blk += term * w;
                out.set_block(i, j, &blk);
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            let t = out.block(i, j).transpose();
            out.set_block(j, i, &t);
        }
    }
    out
}

/// Frozen cell problem: friction matrix, noise Gram, and invariant covariance.
pub struct OuKernel {
    space: Arc<SpectralSpace>,
    g: DMatrix<f64>,
    /// smallest eigenvalue of the symmetric part of the frozen friction
    gamma0: f64,
    gram: BlockCovariance,
    lambda: BlockCovariance,
    sylvester_residual: f64,
}

impl OuKernel {
    /// Build the cell problem at frozen `u` from (possibly truncated)
    /// coefficients.
    pub fn build(coeffs: &CoefficientSet, u: &Field) -> Result<OuKernel> {
        let g = coeffs.friction_mat(u);
        let gamma0 = min_sym_eigenvalue(&g);
        if gamma0 <= 0.0 {
            return Err(SimError::Numeric(format!(
                "cell problem needs an elliptic friction matrix (min sym eig = {gamma0:.3e})"
            )));
        }
        let gram = noise_gram(coeffs, u)?;
        let (lambda, resid) = lyapunov_solve(&g, &gram)?;
        Ok(OuKernel { space: u.space().clone(), g, gamma0, gram, lambda, sylvester_residual: resid })
    }

    pub fn space(&self) -> &Arc<SpectralSpace> {
        &self.space
    }

    pub fn friction(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    pub fn gram(&self) -> &BlockCovariance {
        &self.gram
    }

    pub fn lambda(&self) -> &BlockCovariance {
        &self.lambda
    }

    pub fn sylvester_residual(&self) -> f64 {
        self.sylvester_residual
    }

    /// `e^{-g t}`.
    pub fn decay(&self, t: f64) -> DMatrix<f64> {
        expm(&(-&self.g * t))
    }

    /// Exact transition law of `y(t)` started from `v`: mean `e^{-gt} v`
    /// blockwise, covariance `Lambda - E Lambda E^T`.
    pub fn transition(&self, v: &Field, t: f64) -> Result<(Field, BlockCovariance)> {
        if t < 0.0 {
            return Err(SimError::InvalidConfig("transition time must be >= 0".into()));
        }
        let e = self.decay(t);
        let mean = v.apply_matrix(&e);
        let n = self.lambda.n_modes();
        let r = self.lambda.n_components();
        let et = e.transpose();
        let mut cov = BlockCovariance::zeros(n, r);
        for i in 0..n {
            for j in 0..n {
                let lam = self.lambda.block(i, j);
                let blk = &lam - &e * &lam * &et;
                cov.set_block(i, j, &blk);
            }
        }
        Ok((mean, cov))
    }

    /// Symmetric factor of the invariant covariance, for sampling from
    /// `nu^u = N(0, Lambda)`. Eigenvalues in `[-1e-10, 0)` are clipped to 0;
    /// anything more negative is a hard error.
    pub fn sampler(&self) -> Result<GaussianSampler> {
        GaussianSampler::from_covariance(&self.space, self.lambda.assembled())
    }
}

/// Samples a centered Gaussian field with a prescribed covariance.
pub struct GaussianSampler {
    space: Arc<SpectralSpace>,
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn from_covariance(space: &Arc<SpectralSpace>, cov: &DMatrix<f64>) -> Result<GaussianSampler> {
        let dim = cov.nrows();
        let eig = cov.clone().symmetric_eigen();
        let mut factor = eig.eigenvectors;
        for (idx, &val) in eig.eigenvalues.iter().enumerate() {
            if val < -1e-10 {
                return Err(SimError::Numeric(format!(
                    "covariance has eigenvalue {val:.3e} (< -1e-10); not a PSD matrix"
                )));
            }
            let s = if val <= 0.0 { 0.0 } else { val.sqrt() };
            for p in 0..dim {
                factor[(p, idx)] *= s;
            }
        }
        Ok(GaussianSampler { space: space.clone(), factor })
    }

    pub fn sample(&self, stream: &mut KeyStream) -> Field {
        let dim = self.factor.nrows();
        let xi = DVector::from_fn(dim, |_, _| stream.next_normal());
        let z = &self.factor * xi;
        unflatten(&self.space, &z)
    }
}

/// `q(v) = v^T W v + l . v + c` over flattened spectral coefficients.
#[derive(Clone, Debug)]
pub struct QuadraticFunctional {
    pub w: DMatrix<f64>,
    pub l: DVector<f64>,
    pub c: f64,
}

impl QuadraticFunctional {
    pub fn zero(dim: usize) -> Self {
        QuadraticFunctional { w: DMatrix::zeros(dim, dim), l: DVector::zeros(dim), c: 0.0 }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        QuadraticFunctional { c, ..Self::zero(dim) }
    }

    /// `phi(v) = <v, h>_{H^delta}`.
    pub fn linear_pairing(h: &Field, delta: f64) -> Self {
        let space = h.space();
        let (r, n) = (space.n_components(), space.n_modes());
        let mut l = DVector::zeros(r * n);
        for i in 0..n {
            let w = if delta == 0.0 { 1.0 } else { space.eigenvalue(i).powf(delta) };
            for c in 0..r {
                l[i * r + c] = w * h.coeffs()[(c, i)];
            }
        }
        QuadraticFunctional { w: DMatrix::zeros(r * n, r * n), l, c: 0.0 }
    }

    /// `phi(v) = ||v||^2_{H^delta}`.
    pub fn norm_sq(space: &Arc<SpectralSpace>, delta: f64) -> Self {
        let (r, n) = (space.n_components(), space.n_modes());
        let mut w = DMatrix::zeros(r * n, r * n);
        for i in 0..n {
            let a = if delta == 0.0 { 1.0 } else { space.eigenvalue(i).powf(delta) };
            for c in 0..r {
                w[(i * r + c, i * r + c)] = a;
            }
        }
        QuadraticFunctional { w, l: DVector::zeros(r * n), c: 0.0 }
    }

    pub fn eval(&self, v: &Field) -> f64 {
        let x = flatten(v);
        (&self.w * &x).dot(&x) + self.l.dot(&x) + self.c
    }

    /// Exact Gaussian expectation under `N(mean, cov)`:
    /// `E q = q(mean) + tr(W cov)`.
    pub fn gaussian_mean(&self, mean: &Field, cov: &DMatrix<f64>) -> f64 {
        let mut trace = 0.0;
        for p in 0..self.w.nrows() {
            for q in 0..self.w.ncols() {
                trace += self.w[(p, q)] * cov[(q, p)];
            }
        }
        self.eval(mean) + trace
    }
}

/// Exact action of the transition semigroup on a quadratic functional:
/// `P_t q (v) = q(e^{-gt} v) + tr(W C_t)`.
pub fn semigroup_on_quadratic(
    kernel: &OuKernel,
    q: &QuadraticFunctional,
    v: &Field,
    t: f64,
) -> Result<f64> {
    let (mean, cov) = kernel.transition(v, t)?;
    Ok(q.gaussian_mean(&mean, cov.assembled()))
}

/// Exact generator action on a quadratic functional:
/// `M q (v) = -<g v, grad q(v)> + tr(W B)` in coefficient coordinates.
pub fn generator_apply(kernel: &OuKernel, q: &QuadraticFunctional, v: &Field) -> f64 {
    let x = flatten(v);
    let gv = flatten(&v.apply_matrix(kernel.friction()));
    let grad = &self_adjoint_grad(&q.w, &x) + &q.l;
    let mut trace = 0.0;
    let b = kernel.gram().assembled();
    for p in 0..q.w.nrows() {
        for s in 0..q.w.ncols() {
            trace += q.w[(p, s)] * b[(s, p)];
        }
    }
    -gv.dot(&grad) + trace
}

fn self_adjoint_grad(w: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    // gradient of x^T W x for symmetric W
    (w * x) * 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{
        CoefficientSet, DiffusionMatrix, DiffusionModel, FrictionModel, PointwiseMap,
    };

    fn space(n: usize) -> Arc<SpectralSpace> {
        SpectralSpace::build(std::f64::consts::PI, n, 2).unwrap()
    }

    fn default_set(sp: &Arc<SpectralSpace>, lambda: DiffusionMatrix) -> CoefficientSet {
        let base = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 3.0]);
        let a1 = DMatrix::from_row_slice(2, 2, &[0.3, 0.4, -0.2, 0.1]);
        let w1 = Field::basis(sp, 0, 0, 1.0);
        CoefficientSet {
            friction: FrictionModel::matrix_nonlocal(base, vec![(a1, w1)]).unwrap(),
            forcing: PointwiseMap::Saturating,
            diffusion: DiffusionModel::new(lambda, 1.0, 2.0).unwrap(),
            cutoff: None,
        }
    }

    #[test]
    fn expm_against_series_and_scalar() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 0.7, 0.1]);
        // dense Taylor reference
        let mut term = DMatrix::identity(2, 2);
        let mut sum = DMatrix::identity(2, 2);
        for k in 1..40 {
            term = &term * &a / k as f64;
            sum += &term;
        }
        assert!((expm(&a) - sum).amax() < 1e-14);
        let s = DMatrix::from_element(1, 1, -2.5);
        assert!((expm(&s)[(0, 0)] - (-2.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn gram_identity_lambda_is_diagonal() {
        let sp = space(6);
        let set = default_set(&sp, DiffusionMatrix::Identity);
        let u = Field::random_smooth(&sp, 1, 1.0, 2.0);
        let gram = noise_gram(&set, &u).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                for a in 0..2 {
                    for b in 0..2 {
                        let want = if i == j && a == b {
                            set.diffusion.theta(i).powi(2)
                        } else {
                            0.0
                        };
                        assert!(
                            (gram.get(i, j, a, b) - want).abs() < 1e-13,
                            "block ({i},{j}) entry ({a},{b})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn gram_zero_lambda_is_zero() {
        let sp = space(4);
        let set = default_set(&sp, DiffusionMatrix::Zero);
        let u = Field::random_smooth(&sp, 2, 1.0, 2.0);
        let gram = noise_gram(&set, &u).unwrap();
        assert_eq!(gram.assembled().amax(), 0.0);
    }

    #[test]
    fn gram_matches_monte_carlo_covariance() {
        let sp = space(5);
        let set = default_set(&sp, DiffusionMatrix::TanhDiag { amp: 0.3 });
        let u = Field::random_smooth(&sp, 3, 1.0, 2.0);
        let gram = noise_gram(&set, &u).unwrap();
        // covariance of sigma(u) zeta with zeta standard normal per (c, i)
        let n_samples = 100_000;
        let dim = sp.flat_dim();
        let mut acc = DMatrix::zeros(dim, dim);
        let mut stream = KeyStream::new(17);
        for _ in 0..n_samples {
            let draws = DMatrix::from_fn(2, 5, |_, _| stream.next_normal());
            let f = set.apply_diffusion(&u, &draws).unwrap();
            let z = flatten(&f);
            acc.ger(1.0 / n_samples as f64, &z, &z, 1.0);
        }
        // per-block Frobenius comparison at 3 aggregated standard errors
        for i in 0..5 {
            for j in 0..5 {
                let mut err2 = 0.0;
                let mut var = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        let g_ab = gram.get(i, j, a, b);
                        let e = acc[(i * 2 + a, j * 2 + b)] - g_ab;
                        err2 += e * e;
                        let vaa = gram.get(i, i, a, a);
                        let vbb = gram.get(j, j, b, b);
                        var += (vaa * vbb + g_ab * g_ab) / n_samples as f64;
                    }
                }
                assert!(
                    err2.sqrt() <= 3.0 * var.sqrt().max(1e-12),
                    "block ({i},{j}): err {} vs se {}",
                    err2.sqrt(),
                    var.sqrt()
                );
            }
        }
    }

    #[test]
    fn lyapunov_diagonal_case() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let mut gram = BlockCovariance::zeros(3, 2);
        for i in 0..3 {
            gram.set_block(i, i, &DMatrix::identity(2, 2));
        }
        let (lam, resid) = lyapunov_solve(&g, &gram).unwrap();
        assert!(resid < 1e-12);
        for i in 0..3 {
            let blk = lam.block(i, i);
            assert!((blk[(0, 0)] - 0.25).abs() < 1e-14);
            assert!((blk[(1, 1)] - 0.125).abs() < 1e-14);
            // L_ab = B_ab / (g_a + g_b) = 0 off-diagonal here
            assert!(blk[(0, 1)].abs() < 1e-14);
        }
    }

    #[test]
    fn lyapunov_scalar_case() {
        let g = DMatrix::from_element(1, 1, 3.0);
        let mut gram = BlockCovariance::zeros(1, 1);
        gram.set(0, 0, 0, 0, 0.7);
        let (lam, _) = lyapunov_solve(&g, &gram).unwrap();
        assert!((lam.get(0, 0, 0, 0) - 0.7 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_upper_triangular_against_direct_solve() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        let mut gram = BlockCovariance::zeros(1, 2);
        gram.set_block(0, 0, &DMatrix::identity(2, 2));
        let (lam, resid) = lyapunov_solve(&g, &gram).unwrap();
        assert!(resid < 1e-12);
        // independent oracle: solve the 3x3 system for symmetric X
        // eq(p,q): sum_k g[p,k] x[k,q] + x[p,k] g[q,k] = b[p,q]
        // unknowns x11, x12, x22
        let mut a = DMatrix::zeros(3, 3);
        let mut b = DVector::zeros(3);
        let eqs = [(0usize, 0usize), (0, 1), (1, 1)];
        let unk = [(0usize, 0usize), (0, 1), (1, 1)];
        for (row, &(p, q)) in eqs.iter().enumerate() {
            for (col, &(s, t)) in unk.iter().enumerate() {
                let mut coef = 0.0;
                for k in 0..2 {
                    // x[k,q] term
                    if (k, q) == (s, t) || ((q, k) == (s, t) && s != t) {
                        coef += g[(p, k)];
                    }
                    if (p, k) == (s, t) || ((k, p) == (s, t) && s != t) {
                        coef += g[(q, k)];
                    }
                }
                a[(row, col)] = coef;
            }
            b[row] = if p == q { 1.0 } else { 0.0 };
        }
        let x = a.lu().solve(&b).unwrap();
        let blk = lam.block(0, 0);
        assert!((blk[(0, 0)] - x[0]).abs() < 1e-12);
        assert!((blk[(0, 1)] - x[1]).abs() < 1e-12);
        assert!((blk[(1, 1)] - x[2]).abs() < 1e-12);
    }

    #[test]
    fn lambda_matches_quadrature_of_defining_integral() {
        let sp = space(6);
        let set = default_set(&sp, DiffusionMatrix::TanhDiag { amp: 0.3 });
        let u = Field::random_smooth(&sp, 5, 1.0, 2.0);
        let kernel = OuKernel::build(&set, &u).unwrap();
        let quad = lambda_by_quadrature(
            kernel.friction(),
            kernel.gram(),
            40.0 / kernel.gamma0(),
            8192,
        );
        let err = (quad.assembled() - kernel.lambda().assembled()).amax();
        assert!(err < 1e-8, "quadrature vs sylvester: {err}");
    }

    #[test]
    fn transition_limits() {
        let sp = space(5);
        let set = default_set(&sp, DiffusionMatrix::TanhDiag { amp: 0.3 });
        let u = Field::random_smooth(&sp, 7, 1.0, 2.0);
        let kernel = OuKernel::build(&set, &u).unwrap();
        let v = Field::random_smooth(&sp, 8, 1.0, 1.5);
        let (m0, c0) = kernel.transition(&v, 0.0).unwrap();
        assert!((m0.coeffs() - v.coeffs()).amax() < 1e-14);
        assert!(c0.assembled().amax() < 1e-12);
        let t_long = 45.0 / kernel.gamma0();
        let (m_inf, c_inf) = kernel.transition(&v, t_long).unwrap();
        assert!(m_inf.sobolev_norm(0.0) < 1e-12 * v.sobolev_norm(0.0).max(1.0));
        assert!((c_inf.assembled() - kernel.lambda().assembled()).amax() < 1e-12);
        // Loewner monotonicity towards Lambda
        for &t in &[0.1, 0.3, 0.9, 2.7] {
            let (_, ct) = kernel.transition(&v, t).unwrap();
            let gap = kernel.lambda().assembled() - ct.assembled();
            assert!(gap.symmetric_eigenvalues().min() > -1e-10);
        }
    }

    #[test]
    fn scalar_transition_closed_form() {
        let sp = SpectralSpace::build(std::f64::consts::PI, 1, 1).unwrap();
        let g0 = 1.7;
        let set = CoefficientSet {
            friction: FrictionModel::constant(DMatrix::from_element(1, 1, g0)).unwrap(),
            forcing: PointwiseMap::Zero,
            diffusion: DiffusionModel::new(DiffusionMatrix::Identity, 1.0, 2.0).unwrap(),
            cutoff: None,
        };
        let u = Field::zeros(&sp);
        let kernel = OuKernel::build(&set, &u).unwrap();
        let b = 1.0; // theta_1 = 1
        let v = Field::basis(&sp, 0, 0, 0.8);
        let (mean, cov) = kernel.transition(&v, 1.0).unwrap();
        assert!((mean.coeffs()[(0, 0)] - 0.8 * (-g0).exp()).abs() < 1e-12);
        let want = b / (2.0 * g0) * (1.0 - (-2.0 * g0).exp());
        assert!((cov.get(0, 0, 0, 0) - want).abs() < 1e-12);
    }

    #[test]
    fn invariant_sampling_statistics() {
        let sp = space(4);
        let set = default_set(&sp, DiffusionMatrix::TanhDiag { amp: 0.3 });
        let u = Field::random_smooth(&sp, 9, 1.0, 2.0);
        let kernel = OuKernel::build(&set, &u).unwrap();
        let sampler = kernel.sampler().unwrap();
        let n = 100_000;
        let dim = sp.flat_dim();
        let mut mean = DVector::zeros(dim);
        let mut cov = DMatrix::zeros(dim, dim);
        let mut h1_second_moment = 0.0;
        let mut stream = KeyStream::new(23);
        for _ in 0..n {
            let z = sampler.sample(&mut stream);
            let zf = flatten(&z);
            mean += &zf;
            cov.ger(1.0 / n as f64, &zf, &zf, 1.0);
            h1_second_moment += z.sobolev_norm_sq(1.0) / n as f64;
        }
        mean /= n as f64;
        let lam = kernel.lambda();
        for p in 0..dim {
            let se = (lam.assembled()[(p, p)] / n as f64).sqrt();
            assert!(mean[p].abs() < 3.0 * se + 1e-12, "mean[{p}] = {}", mean[p]);
        }
        for i in 0..4 {
            for j in 0..4 {
                let mut err2 = 0.0;
                let mut var = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        let l_ab = lam.get(i, j, a, b);
                        let e = cov[(i * 2 + a, j * 2 + b)] - l_ab;
                        err2 += e * e;
                        var += (lam.get(i, i, a, a) * lam.get(j, j, b, b) + l_ab * l_ab)
                            / n as f64;
                    }
                }
                assert!(err2.sqrt() <= 3.0 * var.sqrt(), "block ({i},{j})");
            }
        }
        let trace_h1 = lam.trace_h1(&sp);
        // SE of the H^1 second moment ~ sqrt(2 sum (alpha_i lam_ii)^2 / n)
        let mut var = 0.0;
        for i in 0..4 {
            for a in 0..2 {
                var += 2.0 * (sp.eigenvalue(i) * lam.get(i, i, a, a)).powi(2) / n as f64;
            }
        }
        assert!((h1_second_moment - trace_h1).abs() < 3.0 * var.sqrt() + 1e-9);
    }

    #[test]
    fn trace_bounds_from_model_constants() {
        let sp = space(8);
        let set = default_set(&sp, DiffusionMatrix::TanhDiag { amp: 0.3 });
        for seed in 0..10u64 {
            let u = Field::random_smooth(&sp, 100 + seed, 1.5, 1.2);
            let kernel = OuKernel::build(&set, &u).unwrap();
            let g0 = set.friction.gamma0();
            let lam_inf = set.diffusion.sup_norm();
            let dlam_inf = set.diffusion.sup_deriv();
            let r = 2.0;
            let theta2: f64 = set.diffusion.theta_sq_sum(sp.n_modes());
            let c_h = r * lam_inf * lam_inf * theta2 / (2.0 * g0);
            assert!(kernel.lambda().trace_h() <= c_h * (1.0 + 1e-9));
            // H^1 envelope: 2 theta_k^2 (lam^2 alpha_k + Dlam^2 (2/l) ||u||_{H^1}^2) per
            // component, divided by 2 gamma0
            let mut c1 = 0.0;
            for k in 0..sp.n_modes() {
                c1 += set.diffusion.theta(k).powi(2)
                    * 2.0
                    * (lam_inf * lam_inf * sp.eigenvalue(k)
                        + dlam_inf * dlam_inf * (2.0 / sp.length()) * u.sobolev_norm_sq(1.0));
            }
            c1 *= r / (2.0 * g0);
            assert!(kernel.lambda().trace_h1(&sp) <= c1 * (1.0 + 1e-9));
        }
    }

    #[test]
    fn psd_and_symmetry_invariants() {
        let sp = space(6);
        let set = default_set(&sp, DiffusionMatrix::TanhDiag { amp: 0.3 });
        let u = Field::random_smooth(&sp, 4, 1.0, 1.5);
        let kernel = OuKernel::build(&set, &u).unwrap();
        assert!(kernel.lambda().symmetry_defect() < 1e-13);
        assert!(kernel.lambda().min_eigenvalue() > -1e-10);
        assert!(kernel.sylvester_residual() < 1e-10);
        assert!(kernel.gram().min_eigenvalue() > -1e-12);
    }

    #[test]
    fn semigroup_on_quadratics() {
        let sp = space(4);
        let set = default_set(&sp, DiffusionMatrix::TanhDiag { amp: 0.3 });
        let u = Field::random_smooth(&sp, 31, 1.0, 2.0);
        let kernel = OuKernel::build(&set, &u).unwrap();
        let v = Field::random_smooth(&sp, 32, 1.0, 1.5);
        // ||v||_H^2 relaxes to Tr_H Lambda
        let q = QuadraticFunctional::norm_sq(&sp, 0.0);
        let long = semigroup_on_quadratic(&kernel, &q, &v, 50.0 / kernel.gamma0()).unwrap();
        assert!((long - kernel.lambda().trace_h()).abs() < 1e-10);
        // linear functionals propagate through the decay matrix only
        let h = Field::random_smooth(&sp, 33, 1.0, 2.0);
        let lin = QuadraticFunctional::linear_pairing(&h, 0.0);
        for &t in &[0.0, 0.4, 1.3] {
            let got = semigroup_on_quadratic(&kernel, &lin, &v, t).unwrap();
            let want = v.apply_matrix(&kernel.decay(t)).h_inner(&h);
            assert!((got - want).abs() < 1e-12);
        }
        // Monte-Carlo cross-check of the full quadratic propagation
        let q = QuadraticFunctional::norm_sq(&sp, 1.0);
        let t = 0.35;
        let got = semigroup_on_quadratic(&kernel, &q, &v, t).unwrap();
        let (mean, cov) = kernel.transition(&v, t).unwrap();
        let sampler = GaussianSampler::from_covariance(&sp, cov.assembled()).unwrap();
        let n = 100_000;
        let mut stream = KeyStream::new(71);
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..n {
            let mut z = sampler.sample(&mut stream);
            z.add_scaled(1.0, &mean);
            let val = q.eval(&z);
            acc += val;
            acc2 += val * val;
        }
        let mc = acc / n as f64;
        let se = ((acc2 / n as f64 - mc * mc) / n as f64).sqrt();
        assert!((got - mc).abs() < 3.0 * se, "exact {got} vs mc {mc} (se {se})");
    }

    #[test]
    fn generator_on_linear_and_stationarity() {
        let sp = space(5);
        let set = default_set(&sp, DiffusionMatrix::TanhDiag { amp: 0.3 });
        let u = Field::random_smooth(&sp, 41, 1.0, 2.0);
        let kernel = OuKernel::build(&set, &u).unwrap();
        let v = Field::random_smooth(&sp, 42, 1.0, 1.5);
        let h = Field::random_smooth(&sp, 43, 1.0, 2.0);
        // linear functional: no trace term, drift only
        let lin = QuadraticFunctional::linear_pairing(&h, 0.0);
        let got = generator_apply(&kernel, &lin, &v);
        let want = -v.apply_matrix(kernel.friction()).h_inner(&h);
        assert!((got - want).abs() < 1e-13);
        // constant functionals are annihilated
        let c = QuadraticFunctional::constant(sp.flat_dim(), 4.2);
        assert_eq!(generator_apply(&kernel, &c, &v), 0.0);
        // int M q d nu = 0 for a battery of quadratics: M q is itself a
        // quadratic functional, so the nu-average is exact Gaussian calculus
        let dim = sp.flat_dim();
        let mut big_g = DMatrix::zeros(dim, dim);
        for i in 0..sp.n_modes() {
            for a in 0..2 {
                for b in 0..2 {
                    big_g[(i * 2 + a, i * 2 + b)] = kernel.friction()[(a, b)];
                }
            }
        }
        let mut stream = KeyStream::new(44);
        for _ in 0..12 {
            let mut w = DMatrix::from_fn(dim, dim, |_, _| stream.next_normal());
            w = (&w + &w.transpose()) * 0.5;
            let l = DVector::from_fn(dim, |_, _| stream.next_normal());
            let q = QuadraticFunctional { w: w.clone(), l: l.clone(), c: 0.0 };
            let mut trace_b = 0.0;
            let bmat = kernel.gram().assembled();
            for p in 0..dim {
                for s in 0..dim {
                    trace_b += w[(p, s)] * bmat[(s, p)];
                }
            }
            let mq = QuadraticFunctional {
                w: -(big_g.transpose() * &w + &w * &big_g),
                l: -(big_g.transpose() * &l),
                c: trace_b,
            };
            // generator_apply agrees with the explicit quadratic form of M q
            for probe in 0..3u64 {
                let v = Field::random_smooth(&sp, 900 + probe, 1.0, 1.0);
                let by_generator = generator_apply(&kernel, &q, &v);
                let by_form = mq.eval(&v);
                assert!(
                    (by_generator - by_form).abs() < 1e-10 * by_form.abs().max(1.0),
                    "generator vs form: {by_generator} vs {by_form}"
                );
            }
            let zero_mean = Field::zeros(&sp);
            let stationary = mq.gaussian_mean(&zero_mean, kernel.lambda().assembled());
            assert!(stationary.abs() < 1e-8, "stationarity defect {stationary}");
        }
    }

    #[test]
    fn gaussian_sampler_rejects_indefinite_matrices() {
        let sp = SpectralSpace::build(1.0, 1, 1).unwrap();
        let bad = DMatrix::from_element(1, 1, -1.0e-3);
        assert!(GaussianSampler::from_covariance(&sp, &bad).is_err());
    }
}
