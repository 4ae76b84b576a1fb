//! Batch driver for the damped-wave / small-mass-limit experiments.
//!
//! Every subcommand loads the flat key-value config (defaults when no file
//! is given), applies `--set key=value` overrides, writes machine-readable
//! reports into the output directory, prints a human summary, and exits
//! nonzero when a pass/fail gate fails.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use skwave::corrector::{CorrectorContext, ScalingRule};
use skwave::drift::{drift_monte_carlo, drift_spectral, stationary_process_oracle};
use skwave::harness::catalog::{build_coefficients, build_space, default_initial_field};
use skwave::harness::config::RunConfig;
use skwave::harness::report;
use skwave::harness::sweep::{run_convergence_sweep, run_diagnostics, run_drift_ablation, GridPlan};
use skwave::noise::{compose, NoisePath};
use skwave::ou::OuKernel;
use skwave::parabolic::simulate_limit;
use skwave::spectral::{Field, PhaseState};
use skwave::wave::simulate_wave;

#[derive(Parser)]
#[command(name = "skwave", about = "stochastic damped wave systems and their small-mass limit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// flat key-value config file (defaults apply when omitted)
    #[arg(long)]
    config: Option<PathBuf>,
    /// override one config key, e.g. --set n_modes=16 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// output directory (overrides the config's out_dir)
    #[arg(long)]
    out: Option<PathBuf>,
    /// replace the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// replace the configured replica count
    #[arg(long)]
    replicas: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one damped-wave trajectory and dump snapshots + ledger
    SimulateWave {
        #[command(flatten)]
        common: Common,
        /// mass parameter (defaults to the smallest grid entry)
        #[arg(long)]
        mu: Option<f64>,
    },
    /// Integrate the limit equation on the same path layout
    SimulateLimit {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate the noise-induced drift S(u) with a Monte-Carlo cross-check
    Drift {
        #[command(flatten)]
        common: Common,
        /// field source: "initial", "random:SEED", or "from-file:PATH"
        #[arg(long, default_value = "initial")]
        u: String,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// also run the ergodic stationary-trajectory estimate
        #[arg(long)]
        ergodic: bool,
    },
    /// Coupled-path convergence sweep over the mu grid
    Sweep {
        #[command(flatten)]
        common: Common,
        /// restrict the sweep to a single mu
        #[arg(long)]
        mu: Option<f64>,
    },
    /// Limit-with-S vs limit-without-S ablation
    Ablation {
        #[command(flatten)]
        common: Common,
    },
    /// Corrector/generator identity residuals
    ValidateCorrectors {
        #[command(flatten)]
        common: Common,
        /// mu values for the resolvent identity (comma separated)
        #[arg(long, default_value = "1e-1,1e-2,1e-3")]
        mu: String,
        #[arg(long, default_value_t = 10)]
        batch: usize,
    },
    /// Energy-bound trend diagnostics over the mu grid
    Diagnostics {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    for item in &common.overrides {
        let (k, v) = item
            .split_once('=')
            .with_context(|| format!("--set needs KEY=VALUE, got '{item}'"))?;
        cfg.apply(k.trim(), v)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(replicas) = common.replicas {
        cfg.replicas = replicas;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig, leaf: &str) -> PathBuf {
    Path::new(&cfg.out_dir).join(leaf)
}

fn write_metadata(dir: &Path, cfg: &RunConfig, started: Instant) -> Result<()> {
    let meta = format!(
        "{{\n  \"config_hash\": \"{}\",\n  \"wall_seconds\": {:.3},\n  \"unix_time\": {}\n}}\n",
        cfg.hash_hex(),
        started.elapsed().as_secs_f64(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    );
    report::write_text(&dir.join("metadata.json"), &meta)?;
    report::write_text(&dir.join("config.cfg"), &cfg.canonical())?;
    Ok(())
}

fn resolve_field(cfg: &RunConfig, spec: &str) -> Result<Field> {
    let space = build_space(cfg)?;
    if spec == "initial" {
        return Ok(default_initial_field(&space));
    }
    if let Some(seed) = spec.strip_prefix("random:") {
        let seed: u64 = seed.parse().context("random:SEED needs an integer seed")?;
        return Ok(Field::random_smooth(&space, seed, 1.0, 1.5));
    }
    if let Some(path) = spec.strip_prefix("from-file:") {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading field file {path}"))?;
        return Ok(report::field_from_str(&space, &text)?);
    }
    bail!("--u must be 'initial', 'random:SEED' or 'from-file:PATH'");
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(pass) => {
            if pass {
                0
            } else {
                1
            }
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            2
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::SimulateWave { common, mu } => {
            let started = Instant::now();
            let cfg = load_config(&common)?;
            let mu = mu.unwrap_or_else(|| *cfg.mu_grid.last().unwrap());
            let space = build_space(&cfg)?;
            let coeffs = build_coefficients(&space, &cfg)?;
            let plan = GridPlan::build(&cfg, space.eigenvalue(space.n_modes() - 1))?;
            let m = plan
                .wave_m
                .iter()
                .find(|(g, _)| (*g - mu).abs() < 1e-12 * mu)
                .map(|&(_, m)| m)
                .unwrap_or(plan.base_m);
            let path = NoisePath::new(
                compose(cfg.seed, 0),
                plan.base_dt,
                cfg.horizon,
                space.n_components(),
                space.n_modes(),
            )?;
            let initial =
                PhaseState::new(default_initial_field(&space), Field::zeros(&space), mu)?;
            let run = simulate_wave(&coeffs, &plan.wave_config(mu, m, cfg.horizon), &path, &initial)?;
            let dir = out_dir(&cfg, "wave");
            report::write_text(
                &dir.join("snapshots.csv"),
                &report::snapshots_csv(&cfg.hash_hex(), path.seed(), mu, &run.times, &run.snapshots),
            )?;
            let mut ledger = String::from("t,u_h_sq,u_h1_sq,u_h2_sq,v_h_sq,v_h1_sq\n");
            for row in &run.ledger.series {
                ledger.push_str(
                    &row.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(","),
                );
                ledger.push('\n');
            }
            report::write_text(&dir.join("ledger.csv"), &ledger)?;
            write_metadata(&dir, &cfg, started)?;
            println!(
                "wave run: mu = {mu}, dt = {:.3e}, {} snapshots, sup |u|_H1^2 = {:.4e}",
                plan.wave_config(mu, m, cfg.horizon).dt(&path),
                run.snapshots.len(),
                run.ledger.sup_u_h1_sq
            );
            println!("wrote {}", dir.display());
            Ok(true)
        }
        Command::SimulateLimit { common } => {
            let started = Instant::now();
            let cfg = load_config(&common)?;
            let space = build_space(&cfg)?;
            let coeffs = build_coefficients(&space, &cfg)?;
            let plan = GridPlan::build(&cfg, space.eigenvalue(space.n_modes() - 1))?;
            let path = NoisePath::new(
                compose(cfg.seed, 0),
                plan.base_dt,
                cfg.horizon,
                space.n_components(),
                space.n_modes(),
            )?;
            let u0 = default_initial_field(&space);
            let run =
                simulate_limit(&coeffs, &plan.limit_config(&cfg, cfg.include_drift), &path, &u0)?;
            let dir = out_dir(&cfg, "limit");
            report::write_text(
                &dir.join("snapshots.csv"),
                &report::snapshots_csv(&cfg.hash_hex(), path.seed(), 0.0, &run.times, &run.snapshots),
            )?;
            let mut ledger = String::from("t,u_h1_sq,u_h2_sq\n");
            for row in &run.ledger.series {
                ledger.push_str(
                    &row.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(","),
                );
                ledger.push('\n');
            }
            report::write_text(&dir.join("ledger.csv"), &ledger)?;
            write_metadata(&dir, &cfg, started)?;
            println!(
                "limit run: dt = {:.3e}, {} snapshots, sup |u|_H1^2 = {:.4e}, max solve residual {:.2e}",
                plan.limit_config(&cfg, cfg.include_drift).dt(&path),
                run.snapshots.len(),
                run.ledger.sup_u_h1_sq,
                run.ledger.max_solve_residual
            );
            println!("wrote {}", dir.display());
            Ok(true)
        }
        Command::Drift { common, u, samples, ergodic } => {
            let started = Instant::now();
            let cfg = load_config(&common)?;
            let field = resolve_field(&cfg, &u)?;
            let space = field.space().clone();
            let coeffs = build_coefficients(&space, &cfg)?;
            let kernel = OuKernel::build(&coeffs, &field)?;
            let spectral = drift_spectral(&coeffs, &field, &kernel)?;
            let mc = drift_monte_carlo(&coeffs, &field, &kernel, samples.max(100), cfg.seed)?;
            let gap = (&spectral.value - &mc.value).sobolev_norm(0.0);
            println!("S(u) spectral vs Monte-Carlo ({} samples):", mc.sample_count);
            println!("  |S|_H = {:.6e}, |S|_H1 = {:.6e}", spectral.value.sobolev_norm(0.0), spectral.value.sobolev_norm(1.0));
            println!("  |S_spec - S_mc|_H = {gap:.3e}, 3 x SE = {:.3e}", 3.0 * mc.error_estimate);
            let mut pass = gap <= 3.0 * mc.error_estimate || mc.error_estimate == 0.0;
            if ergodic {
                let erg = stationary_process_oracle(
                    &coeffs,
                    &field,
                    &kernel,
                    compose(cfg.seed, 0xE),
                    15.0 / kernel.gamma0(),
                    4000.0 / kernel.gamma0(),
                )?;
                let gap_e = (&spectral.value - &erg.value).sobolev_norm(0.0);
                println!(
                    "  |S_spec - S_ergodic|_H = {gap_e:.3e}, 3 x SE = {:.3e}",
                    3.0 * erg.error_estimate
                );
                pass &= gap_e <= 3.0 * erg.error_estimate || erg.error_estimate == 0.0;
            }
            let dir = out_dir(&cfg, "drift");
            report::write_text(&dir.join("s_field.csv"), &report::field_to_string(&spectral.value))?;
            write_metadata(&dir, &cfg, started)?;
            println!("wrote {}", dir.display());
            println!("{}", if pass { "PASS" } else { "FAIL" });
            Ok(pass)
        }
        Command::Sweep { common, mu } => {
            let started = Instant::now();
            let mut cfg = load_config(&common)?;
            if let Some(mu) = mu {
                cfg.apply("mu_grid", &format!("{mu}"))?;
                // single-point sweeps cannot assess the decay trend
                cfg.apply("pass_ratio", "0")?;
                cfg.validate()?;
            }
            let rep = run_convergence_sweep(&cfg)?;
            let dir = out_dir(&cfg, "sweep");
            report::write_text(&dir.join("report.csv"), &report::sweep_csv(&rep))?;
            report::write_text(&dir.join("summary.json"), &report::sweep_summary_json(&rep))?;
            write_metadata(&dir, &cfg, started)?;
            println!("mu          median        q1            q3            flagged");
            for s in &rep.summaries {
                println!(
                    "{:<10.3e} {:<13.6e} {:<13.6e} {:<13.6e} {}",
                    s.mu, s.median, s.q1, s.q3, s.flagged
                );
            }
            for f in &rep.failures {
                println!("FAIL: {f}");
            }
            println!("wrote {}", dir.display());
            println!("{}", if rep.pass { "PASS" } else { "FAIL" });
            Ok(rep.pass)
        }
        Command::Ablation { common } => {
            let started = Instant::now();
            let cfg = load_config(&common)?;
            let rep = run_drift_ablation(&cfg)?;
            let dir = out_dir(&cfg, "ablation");
            report::write_text(&dir.join("report.csv"), &report::ablation_csv(&rep))?;
            report::write_text(&dir.join("summary.json"), &report::ablation_summary_json(&rep))?;
            write_metadata(&dir, &cfg, started)?;
            println!("mu          median with S  median without S");
            for s in &rep.per_mu {
                println!("{:<10.3e} {:<14.6e} {:<14.6e}", s.mu, s.median_with, s.median_without);
            }
            println!(
                "gap at mu_min = {:.4e}, IQR of paired differences = {:.4e}",
                rep.gap, rep.iqr
            );
            for f in &rep.failures {
                println!("FAIL: {f}");
            }
            println!("wrote {}", dir.display());
            println!("{}", if rep.pass { "PASS" } else { "FAIL" });
            Ok(rep.pass)
        }
        Command::ValidateCorrectors { common, mu, batch } => {
            let started = Instant::now();
            let cfg = load_config(&common)?;
            let mus: Vec<f64> = mu
                .split(',')
                .map(|m| m.trim().parse::<f64>().context("bad --mu list"))
                .collect::<Result<_>>()?;
            let space = build_space(&cfg)?;
            let coeffs = build_coefficients(&space, &cfg)?;
            let rule = ScalingRule::new(cfg.scaling_delta)?;
            let mut csv = String::from("case,mu,residual,tolerance,pass\n");
            let mut all_pass = true;
            let mut worst_phi1 = 0.0f64;
            let mut worst_stat = 0.0f64;
            for k in 0..batch as u64 {
                let u = Field::random_smooth(&space, compose(cfg.seed, 10 + k), 1.0, 1.5);
                let h = Field::random_smooth(&space, compose(cfg.seed, 900 + k), 1.0, 2.0);
                let v = Field::random_smooth(&space, compose(cfg.seed, 500 + k), 1.0, 1.2);
                let ctx = CorrectorContext::new(&coeffs, &u, &h, rule, cfg.quad_nodes)?;
                let r1 = ctx.generator_identity_phi1(&v)?.abs();
                worst_phi1 = worst_phi1.max(r1);
                let rs = ctx.stationary_mean_psi_residual().abs();
                worst_stat = worst_stat.max(rs);
                csv.push_str(&format!("phi1_identity,,{r1},1e-11,{}\n", r1 < 1e-11));
                csv.push_str(&format!("stationary_mean,,{rs},1e-10,{}\n", rs < 1e-10));
                all_pass &= r1 < 1e-11 && rs < 1e-10;
                for &m in &mus {
                    let r2 = ctx.resolvent_identity_phi2(&v, m, cfg.quad_nodes)?.abs();
                    csv.push_str(&format!("resolvent_identity,{m},{r2},1e-6,{}\n", r2 < 1e-6));
                    all_pass &= r2 < 1e-6;
                }
            }
            let dir = out_dir(&cfg, "correctors");
            report::write_text(&dir.join("residuals.csv"), &csv)?;
            write_metadata(&dir, &cfg, started)?;
            println!("worst phi1-identity residual:    {worst_phi1:.3e}  (tolerance 1e-11)");
            println!("worst stationary-mean residual:  {worst_stat:.3e}  (tolerance 1e-10)");
            println!("resolvent residuals in {}", dir.join("residuals.csv").display());
            println!("{}", if all_pass { "PASS" } else { "FAIL" });
            Ok(all_pass)
        }
        Command::Diagnostics { common } => {
            let started = Instant::now();
            let cfg = load_config(&common)?;
            let rep = run_diagnostics(&cfg)?;
            let dir = out_dir(&cfg, "diagnostics");
            report::write_text(&dir.join("report.csv"), &report::diagnostics_csv(&rep))?;
            report::write_text(&dir.join("summary.json"), &report::diagnostics_summary_json(&rep))?;
            write_metadata(&dir, &cfg, started)?;
            println!("mu          sqrt(mu) E sup|u|_H2^2   energy_H      velocity");
            for d in &rep.per_mu {
                println!(
                    "{:<10.3e} {:<24.6e} {:<13.6e} {:<13.6e}",
                    d.mu, d.h2_scaled, d.energy_h, d.velocity_bound
                );
            }
            for f in &rep.failures {
                println!("FAIL: {f}");
            }
            println!("wrote {}", dir.display());
            println!("{}", if rep.pass { "PASS" } else { "FAIL" });
            Ok(rep.pass)
        }
    }
}
