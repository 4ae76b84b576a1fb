//! Perturbed-test-function machinery as executable identities.
//!
//! With a frozen `u`, a probe direction `h` in H and the truncated cell
//! problem at `u`, the correctors are
//!
//! * `phi1(v) = <g_R^{-1}(u) v, h>_H`, which satisfies
//!   `M phi1 = -<v, h>_H` exactly,
//! * `psi(v) = <[D g_R^{-1}(u) v] v, h>_H`, a quadratic form in `v` whose
//!   stationary mean is `<S_R(u), h>_H`,
//! * `phi2(v) = int_0^inf e^{-lambda(mu) t} (P_t psi(v) - <S_R(u), h>_H) dt`,
//!   which satisfies the resolvent identity
//!   `M phi2 = lambda(mu) phi2 - (psi - <S_R(u), h>_H)`.
//!
//! `P_t psi` is a Gaussian-propagated quadratic form, so `phi2` is computed
//! by Gauss-Legendre quadrature over an exponentially mapped grid, each
//! node contributing an explicit quadratic form. Derivatives of `phi2` are
//! then exact (no finite differences), and the resolvent residual measures
//! only the quadrature error plus the Lyapunov solve floor.

use nalgebra::{DMatrix, DVector};

use crate::coefficients::CoefficientSet;
use crate::drift::drift_spectral;
use crate::error::{Result, SimError};
use crate::ou::{flatten, generator_apply, OuKernel, QuadraticFunctional};
use crate::spectral::Field;

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x =
            (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Scaling rule `lambda(mu) = mu^exponent` with `exponent = (1/2 - delta)/2`,
/// the geometric mean satisfying both limits `lambda -> 0` and
/// `mu^{1/2 - delta} / lambda -> 0`.
#[derive(Clone, Copy, Debug)]
pub struct ScalingRule {
    pub delta: f64,
    pub exponent: f64,
}

impl ScalingRule {
    pub fn new(delta: f64) -> Result<ScalingRule> {
        if !(delta > 0.0 && delta < 0.5) {
            return Err(SimError::InvalidConfig(format!(
                "scaling delta must lie in (0, 1/2), got {delta}"
            )));
        }
        Ok(ScalingRule { delta, exponent: (0.5 - delta) / 2.0 })
    }

    pub fn lambda(&self, mu: f64) -> f64 {
        mu.powf(self.exponent)
    }

    /// `mu^{1/2 - delta} / lambda(mu)`; must vanish with mu.
    pub fn ratio(&self, mu: f64) -> f64 {
        mu.powf(0.5 - self.delta) / self.lambda(mu)
    }
}

/// `phi2` represented as an explicit quadratic-plus-constant form,
/// `phi2(v) = v^T W2 v - c2`, with a certified tail bound for the part of
/// the integral beyond the quadrature horizon.
pub struct Phi2Form {
    pub w2: DMatrix<f64>,
    pub c2: f64,
    pub nodes: usize,
    /// tail(v) <= tail_coeff * (||v||_H^2 + trace_term)
    tail_coeff: f64,
    trace_term: f64,
}

impl Phi2Form {
    pub fn eval(&self, v: &Field) -> f64 {
        let x = flatten(v);
        (&self.w2 * &x).dot(&x) - self.c2
    }

    /// Certified bound on the truncated tail of the defining integral.
    pub fn tail_bound(&self, v: &Field) -> f64 {
        self.tail_coeff * (v.sobolev_norm_sq(0.0) + self.trace_term)
    }

    pub fn as_quadratic(&self) -> QuadraticFunctional {
        QuadraticFunctional {
            w: self.w2.clone(),
            l: DVector::zeros(self.w2.nrows()),
            c: -self.c2,
        }
    }
}

/// Frozen context for corrector evaluation: probe `h`, base point `u`, the
/// truncated cell problem at `u`, and the quadrature setup for `phi2`.
pub struct CorrectorContext {
    coeffs: CoefficientSet,
    u: Field,
    h: Field,
    kernel: OuKernel,
    /// symmetric matrix of the quadratic form `psi`
    w_psi: DMatrix<f64>,
    /// spectral-route drift S_R(u)
    s_field: Field,
    /// `<S_R(u), h>_H` via the trace route `tr(W_psi Lambda)`
    s_pair: f64,
    pub scaling: ScalingRule,
    pub quad_horizon: f64,
    pub default_nodes: usize,
}

impl CorrectorContext {
    pub fn new(
        coeffs: &CoefficientSet,
        u: &Field,
        h: &Field,
        scaling: ScalingRule,
        default_nodes: usize,
    ) -> Result<CorrectorContext> {
        let kernel = OuKernel::build(coeffs, u)?;
        let quad_horizon = 40.0 / kernel.gamma0();
        let space = u.space().clone();
        let (r, n) = (space.n_components(), space.n_modes());
        let dim = r * n;
        // psi(v) = sum_{ci,bj} [sum_a (Dg_R^{-1}(u) e_{ci})[a,b] h_{aj}] v_ci v_bj
        let mut w_raw = DMatrix::zeros(dim, dim);
        for i in 0..n {
            for c in 0..r {
                let basis = Field::basis(&space, c, i, 1.0);
                let m_ci = coeffs.d_friction_inv(u, &basis)?;
                for j in 0..n {
                    for b in 0..r {
                        let mut acc = 0.0;
                        for a in 0..r {
                            acc += m_ci[(a, b)] * h.coeffs()[(a, j)];
                        }
                        w_raw[(i * r + c, j * r + b)] = acc;
                    }
                }
            }
        }
        let w_psi = (&w_raw + &w_raw.transpose()) * 0.5;
        let s_field = drift_spectral(coeffs, u, &kernel)?.value;
        let mut s_pair = 0.0;
        let lam = kernel.lambda().assembled();
        for p in 0..dim {
            for q in 0..dim {
                s_pair += w_psi[(p, q)] * lam[(q, p)];
            }
        }
        Ok(CorrectorContext {
            coeffs: coeffs.clone(),
            u: u.clone(),
            h: h.clone(),
            kernel,
            w_psi,
            s_field,
            s_pair,
            scaling,
            quad_horizon,
            default_nodes,
        })
    }

    pub fn kernel(&self) -> &OuKernel {
        &self.kernel
    }

    pub fn frozen_field(&self) -> &Field {
        &self.u
    }

    pub fn probe(&self) -> &Field {
        &self.h
    }

    pub fn drift_field(&self) -> &Field {
        &self.s_field
    }

    /// `<S_R(u), h>_H` computed from the spectral drift field.
    pub fn drift_pairing_spectral(&self) -> f64 {
        self.s_field.h_inner(&self.h)
    }

    /// `<S_R(u), h>_H` computed as `tr(W_psi Lambda)`.
    pub fn drift_pairing_trace(&self) -> f64 {
        self.s_pair
    }

    /// `phi1(v) = <g_R^{-1}(u) v, h>_H`.
    pub fn phi1(&self, v: &Field) -> Result<f64> {
        let inv = self.coeffs.friction_inv(&self.u)?;
        Ok(v.apply_matrix(&inv).h_inner(&self.h))
    }

    fn phi1_functional(&self) -> Result<QuadraticFunctional> {
        // phi1(v) = <v, g_R^{-T} h>_H, linear in the coefficients
        let inv_t = self.coeffs.friction_inv(&self.u)?.transpose();
        let lh = self.h.apply_matrix(&inv_t);
        Ok(QuadraticFunctional::linear_pairing(&lh, 0.0))
    }

    /// Residual of the generator identity `M phi1(v) + <v, h>_H = 0`.
    pub fn generator_identity_phi1(&self, v: &Field) -> Result<f64> {
        let q = self.phi1_functional()?;
        Ok(generator_apply(&self.kernel, &q, v) + v.h_inner(&self.h))
    }

    /// `psi(v) = <[D g_R^{-1}(u) v] v, h>_H` as the symmetric quadratic form.
    pub fn psi(&self, v: &Field) -> f64 {
        let x = flatten(v);
        (&self.w_psi * &x).dot(&x)
    }

    /// Direct (non-form) evaluation used to validate the form assembly.
    pub fn psi_direct(&self, v: &Field) -> Result<f64> {
        let m = self.coeffs.d_friction_inv(&self.u, v)?;
        Ok(v.apply_matrix(&m).h_inner(&self.h))
    }

    /// `P_t psi(v) - <S_R(u), h>_H`, exact per `t`.
    pub fn phi2_integrand(&self, v: &Field, t: f64) -> f64 {
        let e = self.kernel.decay(t);
        let mean = v.apply_matrix(&e);
        let x = flatten(&mean);
        let quad = (&self.w_psi * &x).dot(&x);
        // tr(W E Lambda E^T) via blockwise conjugation
        let conj = conjugate_blockwise(self.kernel.lambda().assembled(), &e);
        let mut tr = 0.0;
        for p in 0..self.w_psi.nrows() {
            for q in 0..self.w_psi.ncols() {
                tr += self.w_psi[(p, q)] * conj[(q, p)];
            }
        }
        quad - tr
    }

    /// Assemble `phi2` for the given `mu` with `nodes` quadrature points on
    /// `[0, quad_horizon]`, exponentially mapped to resolve the `e^{-2 gamma0 t}`
    /// decay of the integrand.
    pub fn phi2_form(&self, mu: f64, nodes: usize) -> Result<Phi2Form> {
        if !(mu > 0.0 && mu <= 1.0) {
            return Err(SimError::InvalidConfig(format!("mu must lie in (0, 1], got {mu}")));
        }
        if nodes < 4 {
            return Err(SimError::InvalidConfig("phi2 needs at least 4 quadrature nodes".into()));
        }
        let lambda_mu = self.scaling.lambda(mu);
        let beta = self.kernel.gamma0();
        let horizon = self.quad_horizon;
        let q = 1.0 - (-beta * horizon).exp();
        let (gl_nodes, gl_weights) = gauss_legendre(nodes);
        let dim = self.w_psi.nrows();
        let mut w2 = DMatrix::zeros(dim, dim);
        let mut c2 = 0.0;
        let lam = self.kernel.lambda().assembled();
        for (x, w) in gl_nodes.iter().zip(&gl_weights) {
            let s = 0.5 * (x + 1.0); // [-1,1] -> [0,1]
            let t = -(1.0 - s * q).ln() / beta;
            let jac = 0.5 * q / (beta * (1.0 - s * q));
            let weight = w * jac * (-lambda_mu * t).exp();
            let e = self.kernel.decay(t);
            // E^T W E accumulated blockwise
            let r = self.kernel.space().n_components();
            let n = self.kernel.space().n_modes();
            let et = e.transpose();
            for i in 0..n {
                for j in 0..n {
                    let wb = self.w_psi.view((i * r, j * r), (r, r));
                    let conj = &et * wb * &e;
                    let mut view = w2.view_mut((i * r, j * r), (r, r));
                    for a in 0..r {
                        for b in 0..r {
                            view[(a, b)] += weight * conj[(a, b)];
                        }
                    }
                }
            }
            let lam_conj = conjugate_blockwise(lam, &e);
            let mut tr = 0.0;
            for p in 0..dim {
                for s2 in 0..dim {
                    tr += self.w_psi[(p, s2)] * lam_conj[(s2, p)];
                }
            }
            c2 += weight * tr;
        }
        let w_norm = op_norm_sym(&self.w_psi);
        let rate = lambda_mu + 2.0 * beta;
        let tail_coeff = w_norm * (-rate * horizon).exp() / rate;
        Ok(Phi2Form {
            w2,
            c2,
            nodes,
            tail_coeff,
            trace_term: self.kernel.lambda().trace_h(),
        })
    }

    /// `phi2(v)` at the default node count; returns the value and the tail
    /// certificate.
    pub fn phi2(&self, v: &Field, mu: f64) -> Result<(f64, f64)> {
        let form = self.phi2_form(mu, self.default_nodes)?;
        Ok((form.eval(v), form.tail_bound(v)))
    }

    /// Residual of the resolvent identity
    /// `M phi2 - lambda(mu) phi2 + (psi - <S_R, h>_H) = 0`, with `M phi2`
    /// computed exactly from the per-node quadratic representation.
    pub fn resolvent_identity_phi2(&self, v: &Field, mu: f64, nodes: usize) -> Result<f64> {
        let form = self.phi2_form(mu, nodes)?;
        let lambda_mu = self.scaling.lambda(mu);
        let m_phi2 = generator_apply(&self.kernel, &form.as_quadratic(), v);
        let rhs = lambda_mu * form.eval(v) - (self.psi(v) - self.s_pair);
        Ok(m_phi2 - rhs)
    }

    /// `int psi d nu^u - <S_R(u), h>_H`, the two-route trace agreement.
    pub fn stationary_mean_psi_residual(&self) -> f64 {
        self.drift_pairing_trace() - self.drift_pairing_spectral()
    }
}

fn conjugate_blockwise(mat: &DMatrix<f64>, e: &DMatrix<f64>) -> DMatrix<f64> {
    // blockdiag(e) * mat * blockdiag(e)^T for an r x r block structure
    let r = e.nrows();
    let dim = mat.nrows();
    let n = dim / r;
    let mut out = DMatrix::zeros(dim, dim);
    let et = e.transpose();
    for i in 0..n {
        for j in 0..n {
            let blk = mat.view((i * r, j * r), (r, r));
            let conj = e * blk * &et;
            out.view_mut((i * r, j * r), (r, r)).copy_from(&conj);
        }
    }
    out
}

fn op_norm_sym(m: &DMatrix<f64>) -> f64 {
    m.symmetric_eigenvalues().iter().fold(0.0f64, |a, &v| a.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{
        DiffusionMatrix, DiffusionModel, FrictionModel, PointwiseMap,
    };
    use crate::noise::KeyStream;
    use crate::spectral::SpectralSpace;
    use std::sync::Arc;

    fn space(n: usize) -> Arc<SpectralSpace> {
        SpectralSpace::build(std::f64::consts::PI, n, 2).unwrap()
    }

    fn nonconstant_set(sp: &Arc<SpectralSpace>) -> CoefficientSet {
        let base = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 3.0]);
        let a1 = DMatrix::from_row_slice(2, 2, &[0.3, 0.4, -0.2, 0.1]);
        let w1 = Field::basis(sp, 0, 0, 1.0);
        CoefficientSet {
            friction: FrictionModel::matrix_nonlocal(base, vec![(a1, w1)]).unwrap(),
            forcing: PointwiseMap::Saturating,
            diffusion: DiffusionModel::new(DiffusionMatrix::TanhDiag { amp: 0.3 }, 1.0, 2.0)
                .unwrap(),
            cutoff: None,
        }
    }

    fn constant_ctx(sp: &Arc<SpectralSpace>) -> CorrectorContext {
        let set = CoefficientSet {
            friction: FrictionModel::constant(DMatrix::identity(2, 2) * 2.0).unwrap(),
            forcing: PointwiseMap::Zero,
            diffusion: DiffusionModel::new(DiffusionMatrix::TanhDiag { amp: 0.3 }, 1.0, 2.0)
                .unwrap(),
            cutoff: None,
        };
        let u = Field::random_smooth(sp, 1, 1.0, 2.0);
        let h = Field::random_smooth(sp, 2, 1.0, 2.0);
        CorrectorContext::new(&set, &u, &h, ScalingRule::new(0.25).unwrap(), 64).unwrap()
    }

    fn default_ctx(sp: &Arc<SpectralSpace>, seed: u64) -> CorrectorContext {
        let set = nonconstant_set(sp);
        let u = Field::random_smooth(sp, seed, 1.0, 1.5);
        let h = Field::random_smooth(sp, seed + 1000, 1.0, 2.0);
        CorrectorContext::new(&set, &u, &h, ScalingRule::new(0.25).unwrap(), 64).unwrap()
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(6);
        // degree-11 polynomial integrated exactly
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((integral - 2.0 / 11.0).abs() < 1e-13);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-13);
    }

    #[test]
    fn scaling_rule_limits() {
        let s = ScalingRule::new(0.25).unwrap();
        let mut prev_l = f64::INFINITY;
        let mut prev_r = f64::INFINITY;
        for &mu in &[1e-1, 1e-2, 1e-3, 1e-5, 1e-8] {
            assert!(s.lambda(mu) < prev_l);
            assert!(s.ratio(mu) < prev_r);
            prev_l = s.lambda(mu);
            prev_r = s.ratio(mu);
        }
        assert!(ScalingRule::new(0.0).is_err());
        assert!(ScalingRule::new(0.5).is_err());
    }

    #[test]
    fn phi1_examples() {
        let sp = space(5);
        let set = nonconstant_set(&sp);
        let u = Field::random_smooth(&sp, 3, 1.0, 1.5);
        // g = 2I, v = h with ||h|| = 1 gives 1/2
        let iso = CoefficientSet {
            friction: FrictionModel::constant(DMatrix::identity(2, 2) * 2.0).unwrap(),
            ..set.clone()
        };
        let mut h = Field::random_smooth(&sp, 4, 1.0, 2.0);
        let n = h.sobolev_norm(0.0);
        h.scale(1.0 / n);
        let ctx =
            CorrectorContext::new(&iso, &u, &h, ScalingRule::new(0.25).unwrap(), 32).unwrap();
        assert!((ctx.phi1(&h).unwrap() - 0.5).abs() < 1e-13);
        assert_eq!(ctx.phi1(&Field::zeros(&sp)).unwrap(), 0.0);
        // linearity
        let ctx = default_ctx(&sp, 7);
        let v1 = Field::random_smooth(&sp, 8, 1.0, 1.5);
        let v2 = Field::random_smooth(&sp, 9, 1.0, 1.5);
        let mut combo = Field::zeros(&sp);
        combo.add_scaled(1.7, &v1);
        combo.add_scaled(-0.4, &v2);
        let lhs = ctx.phi1(&combo).unwrap();
        let rhs = 1.7 * ctx.phi1(&v1).unwrap() - 0.4 * ctx.phi1(&v2).unwrap();
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn psi_examples() {
        let sp = space(5);
        // constant friction: psi vanishes identically
        let ctx = constant_ctx(&sp);
        let v = Field::random_smooth(&sp, 5, 1.0, 1.5);
        assert_eq!(ctx.psi(&v), 0.0);
        // quadratic scaling and agreement with the direct evaluation
        let ctx = default_ctx(&sp, 11);
        assert_eq!(ctx.psi(&Field::zeros(&sp)), 0.0);
        let val = ctx.psi(&v);
        let mut av = v.clone();
        av.scale(3.0);
        assert!((ctx.psi(&av) - 9.0 * val).abs() < 1e-13 * val.abs().max(1.0));
        let direct = ctx.psi_direct(&v).unwrap();
        assert!((val - direct).abs() < 1e-12 * direct.abs().max(1.0));
        // |psi| <= c ||h|| ||v||_{H^1} ||v||_H with a model-level constant
        for seed in 0..50u64 {
            let v = Field::random_smooth(&sp, 300 + seed, 2.0, 1.0);
            let bound = ctx.probe().sobolev_norm(0.0)
                * v.sobolev_norm(1.0)
                * v.sobolev_norm(0.0);
            assert!(ctx.psi(&v).abs() <= 10.0 * bound);
        }
    }

    #[test]
    fn generator_identity_for_phi1() {
        let sp = space(6);
        for seed in 0..25u64 {
            let ctx = default_ctx(&sp, 100 + 3 * seed);
            let v = Field::random_smooth(&sp, 500 + seed, 1.0, 1.2);
            let res = ctx.generator_identity_phi1(&v).unwrap();
            assert!(res.abs() < 1e-11, "seed {seed}: residual {res}");
        }
        // v = 0 and linear scaling
        let ctx = default_ctx(&sp, 200);
        assert_eq!(ctx.generator_identity_phi1(&Field::zeros(&sp)).unwrap(), 0.0);
        let v = Field::random_smooth(&sp, 201, 1.0, 1.2);
        let mut big = v.clone();
        big.scale(1e3);
        let res = ctx.generator_identity_phi1(&big).unwrap();
        assert!(res.abs() < 1e-8, "scaled residual {res}");
    }

    #[test]
    fn phi2_trivial_cases() {
        let sp = space(5);
        let ctx = constant_ctx(&sp);
        let v = Field::random_smooth(&sp, 6, 1.0, 1.5);
        let (val, tail) = ctx.phi2(&v, 0.01).unwrap();
        assert_eq!(val, 0.0);
        assert!(tail < 1e-20);
        // integrand at t = 0 equals psi - <S,h>
        let ctx = default_ctx(&sp, 13);
        let at0 = ctx.phi2_integrand(&v, 0.0);
        let want = ctx.psi(&v) - ctx.drift_pairing_trace();
        assert!((at0 - want).abs() < 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn phi2_mean_under_invariant_measure_is_small() {
        let sp = space(4);
        let ctx = default_ctx(&sp, 17);
        let sampler = ctx.kernel().sampler().unwrap();
        let mut stream = KeyStream::new(55);
        let n = 10_000;
        let form = ctx.phi2_form(0.01, 64).unwrap();
        let mut mean_integrand = 0.0;
        let mut mean_phi2 = 0.0;
        let mut scale = 0.0;
        for _ in 0..n {
            let v = sampler.sample(&mut stream);
            mean_integrand += (ctx.psi(&v) - ctx.drift_pairing_trace()) / n as f64;
            let value = form.eval(&v);
            mean_phi2 += value / n as f64;
            scale += value.abs() / n as f64;
        }
        // E_nu psi = <S,h> makes both means small relative to typical size
        assert!(mean_integrand.abs() < 0.05 * scale.max(1e-12) + 3e-3);
        assert!(mean_phi2.abs() < 0.1 * scale.max(1e-12) + 3e-3);
    }

    #[test]
    fn resolvent_identity_and_node_refinement() {
        let sp = space(5);
        let ctx = default_ctx(&sp, 19);
        let v = Field::random_smooth(&sp, 20, 1.0, 1.5);
        for &mu in &[1e-1, 1e-2] {
            let res = ctx.resolvent_identity_phi2(&v, mu, 200).unwrap();
            assert!(res.abs() < 1e-6, "mu {mu}: residual {res}");
            let r8 = ctx.resolvent_identity_phi2(&v, mu, 8).unwrap().abs();
            let r16 = ctx.resolvent_identity_phi2(&v, mu, 16).unwrap().abs();
            assert!(r8 >= 4.0 * r16, "node doubling: {r8} -> {r16}");
        }
        // constant friction: identically zero
        let ctx0 = constant_ctx(&sp);
        let res = ctx0.resolvent_identity_phi2(&v, 0.01, 16).unwrap();
        assert_eq!(res, 0.0);
    }

    #[test]
    fn stationary_mean_matches_drift_pairing() {
        let sp = space(6);
        for seed in 0..10u64 {
            let ctx = default_ctx(&sp, 400 + seed);
            let res = ctx.stationary_mean_psi_residual();
            assert!(res.abs() < 1e-10, "seed {seed}: {res}");
        }
        // doubling h doubles both routes
        let set = nonconstant_set(&sp);
        let u = Field::random_smooth(&sp, 23, 1.0, 1.5);
        let h = Field::random_smooth(&sp, 24, 1.0, 2.0);
        let h2 = &h * 2.0;
        let rule = ScalingRule::new(0.25).unwrap();
        let a = CorrectorContext::new(&set, &u, &h, rule, 32).unwrap();
        let b = CorrectorContext::new(&set, &u, &h2, rule, 32).unwrap();
        assert!(
            (2.0 * a.drift_pairing_trace() - b.drift_pairing_trace()).abs()
                < 1e-12 * b.drift_pairing_trace().abs().max(1.0)
        );
        // constant friction: both sides vanish
        let c = constant_ctx(&sp);
        assert_eq!(c.drift_pairing_trace(), 0.0);
        assert_eq!(c.drift_pairing_spectral(), 0.0);
    }

    #[test]
    fn decay_envelope_and_uniform_phi2_bound() {
        let sp = space(5);
        let ctx = default_ctx(&sp, 29);
        let gamma0 = ctx.kernel().gamma0();
        let h_norm = ctx.probe().sobolev_norm(0.0);
        let u_h1 = ctx.frozen_field().sobolev_norm_sq(1.0);
        // fitted envelope constant over a (t, v) grid stays bounded
        let mut fitted_c = 0.0f64;
        for seed in 0..20u64 {
            let v = Field::random_smooth(&sp, 600 + seed, 1.5, 1.2);
            let weight = (1.0 + v.sobolev_norm_sq(1.0) + u_h1) * h_norm;
            for &t in &[0.0, 0.2, 0.5, 1.0, 2.0, 4.0] {
                let val = ctx.phi2_integrand(&v, t).abs();
                fitted_c = fitted_c.max(val * (gamma0 * t).exp() / weight);
            }
        }
        assert!(fitted_c.is_finite() && fitted_c < 50.0, "envelope constant {fitted_c}");
        // sup over the mu grid of |phi2| against the same weight
        let mut fitted = 0.0f64;
        for seed in 0..10u64 {
            let v = Field::random_smooth(&sp, 700 + seed, 1.5, 1.2);
            let weight = (1.0 + v.sobolev_norm_sq(1.0) + u_h1) * h_norm;
            for &mu in &[1e-1, 1e-2, 1e-3] {
                let (val, _) = ctx.phi2(&v, mu).unwrap();
                fitted = fitted.max(val.abs() / weight);
            }
        }
        assert!(fitted.is_finite() && fitted < 50.0, "phi2 bound constant {fitted}");
    }
}
