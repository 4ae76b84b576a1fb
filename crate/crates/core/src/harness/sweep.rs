//! Experiment orchestration: the mu-sweep convergence study, the
//! noise-induced-drift ablation, and the energy-bound diagnostics.
//!
//! Coupling discipline: within one (replica, mu) row the wave system and
//! the limit equation consume the same `NoisePath`. All step sizes are
//! `snapshot_dt / 2^m` for integer `m`, so every integrator hits the
//! snapshot times exactly and aggregated increments of the shared path are
//! consistent across resolutions. The limit trajectory does not depend on
//! mu and is therefore computed once per replica and reused across the
//! whole grid.

use rayon::prelude::*;

use crate::coefficients::CoefficientSet;
use crate::error::{Result, SimError};
use crate::harness::catalog::{build_coefficients, build_space, default_initial_field};
use crate::harness::config::RunConfig;
use crate::noise::{compose, NoisePath};
use crate::parabolic::{simulate_limit, LimitRun, LimitRunConfig};
use crate::spectral::{Field, PhaseState};
use crate::wave::{simulate_wave, EnergyLedger, WaveRunConfig};

/// Power-of-two time-grid layout shared by all integrators of one run.
#[derive(Clone, Debug)]
pub struct GridPlan {
    pub snapshot_dt: f64,
    pub base_m: u32,
    pub base_dt: f64,
    pub m_limit: u32,
    /// per mu (descending): refinement level of the wave step
    pub wave_m: Vec<(f64, u32)>,
}

impl GridPlan {
    pub fn build(cfg: &RunConfig, alpha_max: f64) -> Result<GridPlan> {
        let snapshot_dt = cfg.horizon / cfg.snapshots as f64;
        let m_limit = cfg.limit_dt_divisor.trailing_zeros();
        let mut base_m = m_limit;
        let mut wave_m = Vec::new();
        for &mu in &cfg.mu_grid {
            let bound = cfg
                .dt_max
                .min(cfg.c_wave * (mu / alpha_max).sqrt())
                .min(cfg.c_fric * mu);
            let mut m = 0u32;
            while snapshot_dt / 2f64.powi(m as i32) > bound {
                m += 1;
                if m > 24 {
                    return Err(SimError::InvalidConfig(format!(
                        "mu = {mu} needs more than 2^24 steps per snapshot; refuse to run"
                    )));
                }
            }
            base_m = base_m.max(m);
            wave_m.push((mu, m));
        }
        Ok(GridPlan {
            snapshot_dt,
            base_m,
            base_dt: snapshot_dt / 2f64.powi(base_m as i32),
            m_limit,
            wave_m,
        })
    }

    pub fn wave_config(&self, mu: f64, m: u32, horizon: f64) -> WaveRunConfig {
        WaveRunConfig {
            mass: mu,
            path_multiple: 1usize << (self.base_m - m),
            horizon,
            snapshot_stride: 1usize << m,
        }
    }

    pub fn limit_config(&self, cfg: &RunConfig, include_drift: bool) -> LimitRunConfig {
        LimitRunConfig {
            path_multiple: 1usize << (self.base_m - self.m_limit),
            horizon: cfg.horizon,
            snapshot_stride: 1usize << self.m_limit,
            include_drift,
            drift_every: cfg.drift_every,
        }
    }
}

/// Coupled-path error metric on the shared snapshot grid:
/// `sup_k ||w_k - l_k||_{H^rho}` and the trapezoid rule for
/// `int ||w - l||^p_{H^vartheta} dt`.
pub fn error_metrics(
    wave: &[Field],
    limit: &[Field],
    times: &[f64],
    rho: f64,
    vartheta: f64,
    p: f64,
) -> Result<(f64, f64)> {
    if wave.len() != limit.len() || wave.len() != times.len() || wave.len() < 2 {
        return Err(SimError::SizeMismatch(format!(
            "snapshot grids differ: wave {}, limit {}, times {}",
            wave.len(),
            limit.len(),
            times.len()
        )));
    }
    let mut sup = 0.0f64;
    let mut integral = 0.0f64;
    for k in 0..wave.len() {
        let diff = &wave[k] - &limit[k];
        sup = sup.max(diff.sobolev_norm(rho));
        let val = diff.sobolev_norm(vartheta).powf(p);
        let w = if k == 0 {
            (times[1] - times[0]) / 2.0
        } else if k == wave.len() - 1 {
            (times[k] - times[k - 1]) / 2.0
        } else {
            (times[k + 1] - times[k - 1]) / 2.0
        };
        integral += w * val;
    }
    Ok((sup, integral))
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub mu: f64,
    pub replica: usize,
    pub seed: u64,
    pub sup_err: f64,
    pub int_err: f64,
    pub total_err: f64,
    pub sup_u_h2_sq: f64,
    pub sup_v_h1_sq: f64,
    pub int_u_h1_sq: f64,
    pub int_v_h_sq: f64,
    pub path_checksum: u64,
    pub flagged: bool,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct MuSummary {
    pub mu: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub flagged: usize,
}

pub struct SweepReport {
    pub config_hash: String,
    pub plan: GridPlan,
    pub rows: Vec<SweepRow>,
    pub summaries: Vec<MuSummary>,
    pub failures: Vec<String>,
    pub pass: bool,
}

/// Linear-interpolation quantile of a sorted slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

fn run_replica(
    cfg: &RunConfig,
    coeffs: &CoefficientSet,
    plan: &GridPlan,
    u0: &Field,
    replica: usize,
    limit_arms: &[bool],
) -> Result<Vec<Vec<SweepRow>>> {
    let space = u0.space().clone();
    let seed = compose(cfg.seed, replica as u64);
    let path = NoisePath::new(
        seed,
        plan.base_dt,
        cfg.horizon,
        space.n_components(),
        space.n_modes(),
    )?;
    let checksum = path.checksum();
    // one limit solve per arm, reused across the whole mu grid
    let limits: Vec<Option<LimitRun>> = limit_arms
        .iter()
        .map(|&include_drift| {
            match simulate_limit(coeffs, &plan.limit_config(cfg, include_drift), &path, u0) {
                Ok(run) => Ok(Some(run)),
                Err(SimError::BlowUp { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut per_arm: Vec<Vec<SweepRow>> = vec![Vec::new(); limit_arms.len()];
    for &(mu, m) in &plan.wave_m {
        let wave_cfg = plan.wave_config(mu, m, cfg.horizon);
        let initial = PhaseState::new(u0.clone(), Field::zeros(&space), mu)?;
        let wave = match simulate_wave(coeffs, &wave_cfg, &path, &initial) {
            Ok(run) => Some(run),
            Err(SimError::BlowUp { .. }) => None,
            Err(e) => return Err(e),
        };
        for (arm, limit) in limits.iter().enumerate() {
            let row = match (&wave, limit) {
                (Some(w), Some(l)) => {
                    let (sup_err, int_err) = error_metrics(
                        &w.snapshots,
                        &l.snapshots,
                        &w.times,
                        cfg.rho,
                        cfg.vartheta,
                        cfg.p_exp,
                    )?;
                    SweepRow {
                        mu,
                        replica,
                        seed,
                        sup_err,
                        int_err,
                        total_err: sup_err + int_err,
                        sup_u_h2_sq: w.ledger.sup_u_h2_sq,
                        sup_v_h1_sq: w.ledger.sup_v_h1_sq,
                        int_u_h1_sq: w.ledger.int_u_h1_sq.value(),
                        int_v_h_sq: w.ledger.int_v_h_sq.value(),
                        path_checksum: checksum,
                        flagged: false,
                    }
                }
                _ => SweepRow {
                    mu,
                    replica,
                    seed,
                    sup_err: f64::NAN,
                    int_err: f64::NAN,
                    total_err: f64::NAN,
                    sup_u_h2_sq: f64::NAN,
                    sup_v_h1_sq: f64::NAN,
                    int_u_h1_sq: f64::NAN,
                    int_v_h_sq: f64::NAN,
                    path_checksum: checksum,
                    flagged: true,
                },
            };
            per_arm[arm].push(row);
        }
    }
    Ok(per_arm)
}

fn summarize(cfg: &RunConfig, rows: &[SweepRow]) -> (Vec<MuSummary>, Vec<String>, bool) {
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for &mu in &cfg.mu_grid {
        let mut vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.mu == mu && !r.flagged)
            .map(|r| r.total_err)
            .collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let flagged = rows.iter().filter(|r| r.mu == mu && r.flagged).count();
        summaries.push(MuSummary {
            mu,
            median: quantile(&vals, 0.5),
            q1: quantile(&vals, 0.25),
            q3: quantile(&vals, 0.75),
            flagged,
        });
    }
    let total_flagged: usize = summaries.iter().map(|s| s.flagged).sum();
    let frac = total_flagged as f64 / rows.len().max(1) as f64;
    if frac > cfg.max_flagged_fraction {
        failures.push(format!(
            "flagged fraction {frac:.2} exceeds {}",
            cfg.max_flagged_fraction
        ));
    }
    let medians: Vec<f64> = summaries.iter().map(|s| s.median).collect();
    if medians.iter().any(|m| !m.is_finite()) {
        failures.push("non-finite median in the sweep".into());
    } else {
        let inversions = medians.windows(2).filter(|w| w[1] > w[0]).count();
        if inversions > cfg.max_inversions {
            failures.push(format!(
                "median error sequence has {inversions} inversions (allowed {})",
                cfg.max_inversions
            ));
        }
        let first = medians[0];
        let last = *medians.last().unwrap();
        if !(last < first / cfg.pass_ratio) {
            failures.push(format!(
                "median error at mu_min ({last:.4e}) not below median at mu_max / {} ({:.4e})",
                cfg.pass_ratio,
                first / cfg.pass_ratio
            ));
        }
        if !(last <= cfg.pass_max_error) {
            failures.push(format!(
                "median error at mu_min ({last:.4e}) above frozen threshold {}",
                cfg.pass_max_error
            ));
        }
    }
    let pass = failures.is_empty();
    (summaries, failures, pass)
}

/// The convergence study: wave vs limit on shared paths over the mu grid.
pub fn run_convergence_sweep(cfg: &RunConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let space = build_space(cfg)?;
    let coeffs = build_coefficients(&space, cfg)?;
    let plan = GridPlan::build(cfg, space.eigenvalue(space.n_modes() - 1))?;
    let u0 = default_initial_field(&space);
    let replica_rows: Vec<Result<Vec<Vec<SweepRow>>>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|rep| run_replica(cfg, &coeffs, &plan, &u0, rep, &[cfg.include_drift]))
        .collect();
    let mut rows = Vec::new();
    for r in replica_rows {
        rows.extend(r?.remove(0));
    }
    rows.sort_by(|a, b| {
        b.mu.partial_cmp(&a.mu).unwrap().then(a.replica.cmp(&b.replica))
    });
    let (summaries, failures, pass) = summarize(cfg, &rows);
    Ok(SweepReport { config_hash: cfg.hash_hex(), plan, rows, summaries, failures, pass })
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct AblationSummary {
    pub mu: f64,
    pub median_with: f64,
    pub median_without: f64,
}

pub struct AblationReport {
    pub config_hash: String,
    pub rows_with: Vec<SweepRow>,
    pub rows_without: Vec<SweepRow>,
    pub per_mu: Vec<AblationSummary>,
    /// difference of the arm medians at the smallest mu,
    /// `median(err without S) - median(err with S)`
    pub gap: f64,
    /// the larger of the two arms' interquartile ranges at the smallest mu
    pub iqr: f64,
    /// median of the per-replica paired differences (diagnostic)
    pub paired_gap: f64,
    /// interquartile range of the paired differences (diagnostic)
    pub paired_iqr: f64,
    /// whether the drift is structurally nonzero for this model
    pub drift_active: bool,
    pub failures: Vec<String>,
    pub pass: bool,
}

/// Run the limit equation with and without the noise-induced drift against
/// the same wave trajectories; measure what the drift buys at the smallest
/// mass.
pub fn run_drift_ablation(cfg: &RunConfig) -> Result<AblationReport> {
    cfg.validate()?;
    let space = build_space(cfg)?;
    let coeffs = build_coefficients(&space, cfg)?;
    let drift_active = !coeffs.friction.is_constant();
    let plan = GridPlan::build(cfg, space.eigenvalue(space.n_modes() - 1))?;
    let u0 = default_initial_field(&space);
    let replica_rows: Vec<Result<Vec<Vec<SweepRow>>>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|rep| run_replica(cfg, &coeffs, &plan, &u0, rep, &[true, false]))
        .collect();
    let mut rows_with = Vec::new();
    let mut rows_without = Vec::new();
    for r in replica_rows {
        let mut arms = r?;
        rows_without.extend(arms.remove(1));
        rows_with.extend(arms.remove(0));
    }
    let order = |a: &SweepRow, b: &SweepRow| {
        b.mu.partial_cmp(&a.mu).unwrap().then(a.replica.cmp(&b.replica))
    };
    rows_with.sort_by(order);
    rows_without.sort_by(order);
    let mut per_mu = Vec::new();
    for &mu in &cfg.mu_grid {
        let med = |rows: &[SweepRow]| {
            let mut v: Vec<f64> = rows
                .iter()
                .filter(|r| r.mu == mu && !r.flagged)
                .map(|r| r.total_err)
                .collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            quantile(&v, 0.5)
        };
        per_mu.push(AblationSummary {
            mu,
            median_with: med(&rows_with),
            median_without: med(&rows_without),
        });
    }
    let mu_min = *cfg.mu_grid.last().unwrap();
    let arm_stats = |rows: &[SweepRow]| -> (f64, f64, usize) {
        let mut v: Vec<f64> = rows
            .iter()
            .filter(|r| r.mu == mu_min && !r.flagged)
            .map(|r| r.total_err)
            .collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (quantile(&v, 0.5), quantile(&v, 0.75) - quantile(&v, 0.25), v.len())
    };
    let (med_with, iqr_with, n_with) = arm_stats(&rows_with);
    let (med_without, iqr_without, n_without) = arm_stats(&rows_without);
    let gap = med_without - med_with;
    let iqr = iqr_with.max(iqr_without);
    // per-replica paired differences on shared paths, as a diagnostic
    let mut diffs: Vec<f64> = Vec::new();
    for rep in 0..cfg.replicas {
        let find = |rows: &[SweepRow]| {
            rows.iter()
                .find(|r| r.mu == mu_min && r.replica == rep && !r.flagged)
                .map(|r| r.total_err)
        };
        if let (Some(w), Some(wo)) = (find(&rows_with), find(&rows_without)) {
            diffs.push(wo - w);
        }
    }
    diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let paired_gap = quantile(&diffs, 0.5);
    let paired_iqr = quantile(&diffs, 0.75) - quantile(&diffs, 0.25);
    let mut failures = Vec::new();
    if n_with < cfg.replicas / 2 || n_without < cfg.replicas / 2 {
        failures.push("too many flagged replicas at the smallest mu".into());
    }
    if drift_active {
        if !(med_with < med_without) {
            failures.push(format!(
                "limit-with-S ({med_with:.4e}) does not beat limit-without-S ({med_without:.4e})"
            ));
        }
        if !(gap > iqr) {
            failures.push(format!(
                "drift gap {gap:.4e} does not exceed the ensemble IQR {iqr:.4e}"
            ));
        }
    } else if gap.abs() > 1e-12 || paired_gap.abs() > 1e-12 {
        failures.push(format!(
            "constant friction should make both arms coincide; gap = {gap:.4e}"
        ));
    }
    let pass = failures.is_empty();
    Ok(AblationReport {
        config_hash: cfg.hash_hex(),
        rows_with,
        rows_without,
        per_mu,
        gap,
        iqr,
        paired_gap,
        paired_iqr,
        drift_active,
        failures,
        pass,
    })
}

#[derive(Clone, Debug)]
pub struct DiagnosticsRow {
    pub mu: f64,
    pub replica: usize,
    pub finite: bool,
    pub sup_u_h_sq: f64,
    pub sup_u_h1_sq: f64,
    pub sup_u_h2_sq: f64,
    pub sup_v_h_sq: f64,
    pub sup_v_h1_sq: f64,
    pub int_u_h1_sq: f64,
    pub int_u_h2_sq: f64,
    pub int_v_h_sq: f64,
    pub int_v_h1_sq: f64,
    pub int_cross: f64,
    pub int_v_h_4th: f64,
    pub sup_v_h_4th: f64,
    pub sup_u_h1_4th: f64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct MuDiagnostics {
    pub mu: f64,
    /// `E sup ||u||_H^2 + int E ||u||_{H^1}^2`
    pub energy_h: f64,
    /// `mu^3 E sup ||v||_H^4 + mu E sup ||u||_{H^1}^4 + mu int E ||u||_{H^1}^2 ||v||_H^2
    ///  + mu^2 int E ||v||_H^4 + mu int E ||v||_H^2`
    pub fourth_moment: f64,
    /// `E sup ||u||_{H^1}^2 + int E ||u||_{H^2}^2` (through the wave ledger)
    pub h1_bound: f64,
    /// `sqrt(mu) E sup ||u||_{H^2}^2`, the monitored decreasing trend
    pub h2_scaled: f64,
    /// `mu E sup ||u||_{H^2}^2 + mu^2 E sup ||v||_{H^1}^2 + mu int E ||v||_{H^1}^2`
    pub velocity_bound: f64,
}

pub struct DiagnosticsReport {
    pub config_hash: String,
    pub rows: Vec<DiagnosticsRow>,
    pub per_mu: Vec<MuDiagnostics>,
    pub failures: Vec<String>,
    pub pass: bool,
}

fn ledger_row(mu: f64, replica: usize, ledger: &EnergyLedger) -> DiagnosticsRow {
    DiagnosticsRow {
        mu,
        replica,
        finite: ledger.all_finite(),
        sup_u_h_sq: ledger.sup_u_h_sq,
        sup_u_h1_sq: ledger.sup_u_h1_sq,
        sup_u_h2_sq: ledger.sup_u_h2_sq,
        sup_v_h_sq: ledger.sup_v_h_sq,
        sup_v_h1_sq: ledger.sup_v_h1_sq,
        int_u_h1_sq: ledger.int_u_h1_sq.value(),
        int_u_h2_sq: ledger.int_u_h2_sq.value(),
        int_v_h_sq: ledger.int_v_h_sq.value(),
        int_v_h1_sq: ledger.int_v_h1_sq.value(),
        int_cross: ledger.int_cross_u_h1_v_h.value(),
        int_v_h_4th: ledger.int_v_h_4th.value(),
        sup_v_h_4th: ledger.sup_v_h_4th,
        sup_u_h1_4th: ledger.sup_u_h1_4th,
    }
}

/// Ensemble estimates of the a-priori energy functionals with pass/fail
/// trend tests.
pub fn run_diagnostics(cfg: &RunConfig) -> Result<DiagnosticsReport> {
    cfg.validate()?;
    let space = build_space(cfg)?;
    let coeffs = build_coefficients(&space, cfg)?;
    let plan = GridPlan::build(cfg, space.eigenvalue(space.n_modes() - 1))?;
    let u0 = default_initial_field(&space);
    let all: Vec<Result<Vec<DiagnosticsRow>>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|rep| {
            let seed = compose(cfg.seed, rep as u64);
            let path = NoisePath::new(
                seed,
                plan.base_dt,
                cfg.horizon,
                space.n_components(),
                space.n_modes(),
            )?;
            let mut rows = Vec::new();
            for &(mu, m) in &plan.wave_m {
                let wave_cfg = plan.wave_config(mu, m, cfg.horizon);
                let initial = PhaseState::new(u0.clone(), Field::zeros(&space), mu)?;
                match simulate_wave(&coeffs, &wave_cfg, &path, &initial) {
                    Ok(run) => rows.push(ledger_row(mu, rep, &run.ledger)),
                    Err(SimError::BlowUp { .. }) => rows.push(DiagnosticsRow {
                        mu,
                        replica: rep,
                        finite: false,
                        sup_u_h_sq: f64::NAN,
                        sup_u_h1_sq: f64::NAN,
                        sup_u_h2_sq: f64::NAN,
                        sup_v_h_sq: f64::NAN,
                        sup_v_h1_sq: f64::NAN,
                        int_u_h1_sq: f64::NAN,
                        int_u_h2_sq: f64::NAN,
                        int_v_h_sq: f64::NAN,
                        int_v_h1_sq: f64::NAN,
                        int_cross: f64::NAN,
                        int_v_h_4th: f64::NAN,
                        sup_v_h_4th: f64::NAN,
                        sup_u_h1_4th: f64::NAN,
                    }),
                    Err(e) => return Err(e),
                }
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for r in all {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| b.mu.partial_cmp(&a.mu).unwrap().then(a.replica.cmp(&b.replica)));
    let mut per_mu = Vec::new();
    let mut failures = Vec::new();
    for &mu in &cfg.mu_grid {
        let group: Vec<&DiagnosticsRow> = rows.iter().filter(|r| r.mu == mu).collect();
        if group.iter().any(|r| !r.finite) {
            failures.push(format!("non-finite energy functional at mu = {mu}"));
            continue;
        }
        let n = group.len() as f64;
        let mean = |f: &dyn Fn(&DiagnosticsRow) -> f64| {
            group.iter().map(|r| f(r)).sum::<f64>() / n
        };
        per_mu.push(MuDiagnostics {
            mu,
            energy_h: mean(&|r| r.sup_u_h_sq) + mean(&|r| r.int_u_h1_sq),
            fourth_moment: mu.powi(3) * mean(&|r| r.sup_v_h_4th)
                + mu * mean(&|r| r.sup_u_h1_4th)
                + mu * mean(&|r| r.int_cross)
                + mu * mu * mean(&|r| r.int_v_h_4th)
                + mu * mean(&|r| r.int_v_h_sq),
            h1_bound: mean(&|r| r.sup_u_h1_sq) + mean(&|r| r.int_u_h2_sq),
            h2_scaled: mu.sqrt() * mean(&|r| r.sup_u_h2_sq),
            velocity_bound: mu * mean(&|r| r.sup_u_h2_sq)
                + mu * mu * mean(&|r| r.sup_v_h1_sq)
                + mu * mean(&|r| r.int_v_h1_sq),
        });
    }
    if per_mu.len() == cfg.mu_grid.len() {
        for w in per_mu.windows(2) {
            if w[1].h2_scaled > 1.1 * w[0].h2_scaled {
                failures.push(format!(
                    "sqrt(mu) E sup |u|_H2^2 grew from {:.4e} (mu = {}) to {:.4e} (mu = {})",
                    w[0].h2_scaled, w[0].mu, w[1].h2_scaled, w[1].mu
                ));
            }
        }
        // non-explosion of the remaining bounded functionals
        let cap = 50.0;
        let first = &per_mu[0];
        for d in &per_mu[1..] {
            for (name, now, base) in [
                ("energy_h", d.energy_h, first.energy_h),
                ("fourth_moment", d.fourth_moment, first.fourth_moment),
                ("h1_bound", d.h1_bound, first.h1_bound),
                ("velocity_bound", d.velocity_bound, first.velocity_bound),
            ] {
                if now > cap * base.max(1e-12) {
                    failures.push(format!(
                        "{name} exploded: {now:.4e} at mu = {} vs {base:.4e} at mu = {}",
                        d.mu, first.mu
                    ));
                }
            }
        }
    }
    let pass = failures.is_empty();
    Ok(DiagnosticsReport { config_hash: cfg.hash_hex(), rows, per_mu, failures, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mini_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.apply("n_modes", "8").unwrap();
        cfg.apply("snapshots", "20").unwrap();
        cfg.apply("horizon", "0.25").unwrap();
        cfg.apply("replicas", "4").unwrap();
        cfg.apply("mu_grid", "1e-1,1e-2").unwrap();
        cfg.apply("pass_max_error", "10").unwrap();
        cfg.apply("pass_ratio", "1.05").unwrap();
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn grid_plan_aligns_snapshots_and_steps() {
        let cfg = mini_cfg();
        let alpha_max = (8.0f64).powi(2);
        let plan = GridPlan::build(&cfg, alpha_max).unwrap();
        assert_eq!(plan.snapshot_dt, 0.0125);
        for &(mu, m) in &plan.wave_m {
            let dt = plan.snapshot_dt / 2f64.powi(m as i32);
            assert!(dt <= cfg.c_wave * (mu / alpha_max).sqrt() + 1e-15);
            assert!(dt <= cfg.c_fric * mu + 1e-15);
            assert!(m <= plan.base_m);
        }
        // base grid refines the limit grid
        assert!(plan.base_m >= plan.m_limit);
    }

    #[test]
    fn quantile_conventions() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn error_metric_on_identical_trajectories_is_zero() {
        let cfg = mini_cfg();
        let sp = build_space(&cfg).unwrap();
        let fields: Vec<Field> =
            (0..3).map(|k| Field::random_smooth(&sp, k, 1.0, 2.0)).collect();
        let times = vec![0.0, 0.5, 1.0];
        let (sup, int) = error_metrics(&fields, &fields, &times, 0.9, 1.5, 3.0).unwrap();
        assert_eq!(sup, 0.0);
        assert_eq!(int, 0.0);
        let shifted: Vec<Field> = fields
            .iter()
            .map(|f| {
                let mut g = f.clone();
                g.add_scaled(0.1, &Field::basis(&sp, 0, 0, 1.0));
                g
            })
            .collect();
        let (sup, int) = error_metrics(&fields, &shifted, &times, 0.9, 1.5, 3.0).unwrap();
        assert!(sup > 0.0 && int > 0.0);
    }

    #[test]
    fn mini_sweep_runs_and_couples_paths() {
        let cfg = mini_cfg();
        let report = run_convergence_sweep(&cfg).unwrap();
        assert_eq!(report.rows.len(), 8);
        // one checksum per replica, shared across the mu grid
        for rep in 0..4 {
            let sums: Vec<u64> = report
                .rows
                .iter()
                .filter(|r| r.replica == rep)
                .map(|r| r.path_checksum)
                .collect();
            assert!(sums.windows(2).all(|w| w[0] == w[1]));
        }
        assert!(report.rows.iter().all(|r| !r.flagged));
        // deterministic repetition
        let again = run_convergence_sweep(&cfg).unwrap();
        for (a, b) in report.rows.iter().zip(&again.rows) {
            assert_eq!(a.total_err.to_bits(), b.total_err.to_bits());
        }
    }

    #[test]
    fn deterministic_relaxation_error_decreases_with_mu() {
        // constant friction, no noise, no forcing: the coupled error is the
        // deterministic wave-to-heat relaxation gap and must vanish with mu
        let mut cfg = mini_cfg();
        cfg.apply("model", "constant").unwrap();
        cfg.apply("noise_amplitude", "0").unwrap();
        cfg.apply("mu_grid", "1e-1,1e-2,1e-3").unwrap();
        cfg.apply("replicas", "1").unwrap();
        cfg.apply("pass_ratio", "3").unwrap();
        let report = run_convergence_sweep(&cfg).unwrap();
        let meds: Vec<f64> = report.summaries.iter().map(|s| s.median).collect();
        assert!(meds[0] > meds[1] && meds[1] > meds[2], "medians {meds:?}");
        assert!(meds[2] < meds[0] / 3.0, "tail ratio too weak: {meds:?}");
    }

    #[test]
    fn ablation_arms_coincide_for_constant_friction() {
        let mut cfg = mini_cfg();
        cfg.apply("model", "constant").unwrap();
        let report = run_drift_ablation(&cfg).unwrap();
        assert!(!report.drift_active);
        assert_eq!(report.gap, 0.0);
        assert_eq!(report.iqr, 0.0);
        assert!(report.pass, "failures: {:?}", report.failures);
        for (a, b) in report.rows_with.iter().zip(&report.rows_without) {
            assert_eq!(a.total_err.to_bits(), b.total_err.to_bits());
        }
    }

    #[test]
    fn diagnostics_mini_run_is_finite() {
        let cfg = mini_cfg();
        let report = run_diagnostics(&cfg).unwrap();
        assert_eq!(report.per_mu.len(), 2);
        assert!(report.rows.iter().all(|r| r.finite));
        for d in &report.per_mu {
            assert!(d.energy_h.is_finite() && d.h2_scaled.is_finite());
        }
    }
}
