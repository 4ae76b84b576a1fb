//! Semi-implicit integration of the limiting quasilinear parabolic system
//! `du = g^{-1}(u) Lap u + g^{-1}(u) f(u) + S(u) + g^{-1}(u) sigma(u) dw^Q`
//! (optionally with all coefficients truncated at radius R, and with a
//! switch that drops `S` for the ablation experiment).
//!
//! Each step freezes `M = g_R^{-1}(u_n)` and solves, per spatial mode i,
//! the r x r system `(I + dt alpha_i M) u_{n+1,i} = rhs_i`. The symmetric
//! part of `M` is positive definite, so every per-mode matrix is
//! invertible and the linear part is unconditionally stable.

use nalgebra::DMatrix;

use crate::coefficients::CoefficientSet;
use crate::drift::drift_spectral;
use crate::error::{Result, SimError};
use crate::noise::NoisePath;
use crate::ou::OuKernel;
use crate::spectral::Field;
use crate::wave::Kahan;

#[derive(Clone, Debug)]
pub struct LimitRunConfig {
    /// step size as a multiple of the path's base step
    pub path_multiple: usize,
    pub horizon: f64,
    pub snapshot_stride: usize,
    /// false forces S = 0 (ablation arm)
    pub include_drift: bool,
    /// recompute S every k steps (k = 1: every step)
    pub drift_every: usize,
}

impl LimitRunConfig {
    pub fn dt(&self, path: &NoisePath) -> f64 {
        self.path_multiple as f64 * path.base_dt()
    }

    fn validate(&self, path: &NoisePath) -> Result<usize> {
        if self.path_multiple == 0 || self.snapshot_stride == 0 || self.drift_every == 0 {
            return Err(SimError::InvalidConfig(
                "path_multiple, snapshot_stride and drift_every must be >= 1".into(),
            ));
        }
        if self.horizon < 0.0 {
            return Err(SimError::InvalidConfig("horizon must be >= 0".into()));
        }
        let dt = self.dt(path);
        let n_steps = (self.horizon / dt).round() as usize;
        if (n_steps as f64 * dt - self.horizon).abs() > 1e-9 * self.horizon.max(dt) {
            return Err(SimError::InvalidConfig(
                "horizon must be an integer number of steps".into(),
            ));
        }
        if n_steps * self.path_multiple > path.n_base_steps() {
            return Err(SimError::InvalidConfig("run exceeds the noise path horizon".into()));
        }
        Ok(n_steps)
    }
}

#[derive(Clone, Debug)]
pub struct LimitLedger {
    pub dt: f64,
    pub sup_u_h1_sq: f64,
    pub int_u_h2_sq: Kahan,
    /// worst per-mode linear-solve residual observed over the run
    pub max_solve_residual: f64,
    /// `(t, ||u||^2_H1, ||u||^2_H2)` at snapshot times
    pub series: Vec<[f64; 3]>,
}

pub struct LimitRun {
    pub times: Vec<f64>,
    pub snapshots: Vec<Field>,
    pub final_field: Field,
    pub ledger: LimitLedger,
}

/// One semi-implicit step. `drift` is the (possibly lagged) noise-induced
/// drift evaluated at some recent iterate, or `None` when disabled.
pub fn limit_step(
    u: &Field,
    coeffs: &CoefficientSet,
    dt: f64,
    dw: &DMatrix<f64>,
    drift: Option<&Field>,
) -> Result<(Field, f64)> {
    let space = u.space().clone();
    let (r, n) = (space.n_components(), space.n_modes());
    let m = coeffs.friction_inv(u)?;
    let forcing = coeffs.apply_forcing(u)?;
    let noise = coeffs.apply_diffusion(u, dw)?;

    // rhs = u + dt (M f + S) + M sigma dW
    let mut rhs = u.clone();
    rhs.add_scaled(dt, &forcing.apply_matrix(&m));
    if let Some(s) = drift {
        rhs.add_scaled(dt, s);
    }
    rhs.add_scaled(1.0, &noise.apply_matrix(&m));

    let mut out = Field::zeros(&space);
    let mut residual = 0.0f64;
    let id = DMatrix::<f64>::identity(r, r);
    for i in 0..n {
        let a = &id + &m * (dt * space.eigenvalue(i));
        let lu = a.clone().lu();
        let rhs_i = rhs.coeffs().column(i).into_owned();
        let x = lu.solve(&rhs_i).ok_or_else(|| {
            SimError::Numeric(format!("per-mode solve failed at mode {i} (singular matrix)"))
        })?;
        let res = (&a * &x - &rhs_i).amax();
        residual = residual.max(res);
        for c in 0..r {
            out.coeffs_mut()[(c, i)] = x[c];
        }
    }
    Ok((out, residual))
}

/// Integrate the limit equation along a noise path, recomputing the
/// spectral drift every `drift_every` steps.
pub fn simulate_limit(
    coeffs: &CoefficientSet,
    cfg: &LimitRunConfig,
    path: &NoisePath,
    u0: &Field,
) -> Result<LimitRun> {
    let n_steps = cfg.validate(path)?;
    let dt = cfg.dt(path);
    let mut u = u0.clone();
    let mut ledger = LimitLedger {
        dt,
        sup_u_h1_sq: u.sobolev_norm_sq(1.0),
        int_u_h2_sq: Kahan::default(),
        max_solve_residual: 0.0,
        series: vec![[0.0, u.sobolev_norm_sq(1.0), u.sobolev_norm_sq(2.0)]],
    };
    ledger.int_u_h2_sq.add(u.sobolev_norm_sq(2.0) * dt);
    let mut times = vec![0.0];
    let mut snapshots = vec![u.clone()];
    let mut drift_cache: Option<Field> = None;
    for step in 0..n_steps {
        let drift = if cfg.include_drift {
            if step % cfg.drift_every == 0 || drift_cache.is_none() {
                let kernel = OuKernel::build(coeffs, &u)?;
                drift_cache = Some(drift_spectral(coeffs, &u, &kernel)?.value);
            }
            drift_cache.as_ref()
        } else {
            None
        };
        let dw = path.increment(step * cfg.path_multiple, cfg.path_multiple)?;
        let (next, res) = limit_step(&u, coeffs, dt, &dw, drift)?;
        u = next;
        let t = (step + 1) as f64 * dt;
        if !u.is_finite() {
            return Err(SimError::BlowUp {
                step: step + 1,
                time: t,
                what: "limit state non-finite".into(),
            });
        }
        ledger.max_solve_residual = ledger.max_solve_residual.max(res);
        ledger.sup_u_h1_sq = ledger.sup_u_h1_sq.max(u.sobolev_norm_sq(1.0));
        ledger.int_u_h2_sq.add(u.sobolev_norm_sq(2.0) * dt);
        if (step + 1) % cfg.snapshot_stride == 0 {
            times.push(t);
            snapshots.push(u.clone());
            ledger.series.push([t, u.sobolev_norm_sq(1.0), u.sobolev_norm_sq(2.0)]);
        }
    }
    Ok(LimitRun { times, snapshots, final_field: u, ledger })
}
