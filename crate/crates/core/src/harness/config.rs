//! Flat key-value run configuration with a typed schema.
//!
//! The on-disk format is one `key = value` pair per line, `#` comments.
//! Every key can also be overridden programmatically (the CLI maps
//! `--set key=value` onto [`RunConfig::apply`]). The canonical rendering is
//! what gets hashed into report rows, so identical configurations produce
//! identical `config_hash` strings.

use crate::error::{Result, SimError};
use crate::noise::compose;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub length: f64,
    pub n_modes: usize,
    pub n_components: usize,
    /// coefficient catalog entry: default | constant | scalar
    pub model: String,
    pub noise_amplitude: f64,
    pub theta_q: f64,
    /// None runs the untruncated system
    pub cutoff_radius: Option<f64>,
    pub rbar: f64,
    pub sbar: f64,
    pub kbar: f64,
    pub horizon: f64,
    pub snapshots: usize,
    pub mu_grid: Vec<f64>,
    pub replicas: usize,
    pub seed: u64,
    /// sup-error Sobolev exponent (rho < 1)
    pub rho: f64,
    /// integrated-error Sobolev exponent (1 <= vartheta < 2)
    pub vartheta: f64,
    /// integrated-error power p < 2/(vartheta - 1)
    pub p_exp: f64,
    pub dt_max: f64,
    /// wave step rule: dt <= c_wave sqrt(mu / alpha_N)
    pub c_wave: f64,
    /// friction-resolution rule: dt <= c_fric mu
    pub c_fric: f64,
    /// limit-equation step: snapshot interval divided by this power of two
    pub limit_dt_divisor: usize,
    pub drift_every: usize,
    pub include_drift: bool,
    /// convergence gate: err(mu_min) < err(mu_max) / pass_ratio
    pub pass_ratio: f64,
    /// frozen regression threshold for the smallest-mu median error
    pub pass_max_error: f64,
    pub max_inversions: usize,
    pub max_flagged_fraction: f64,
    /// corrector scaling delta in (0, 1/2)
    pub scaling_delta: f64,
    pub quad_nodes: usize,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            length: std::f64::consts::PI,
            n_modes: 32,
            n_components: 2,
            model: "default".into(),
            noise_amplitude: 1.0,
            theta_q: 2.0,
            cutoff_radius: None,
            rbar: 0.9,
            sbar: 0.5,
            kbar: 1.75,
            horizon: 1.0,
            snapshots: 200,
            mu_grid: vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3],
            replicas: 16,
            seed: 42,
            rho: 0.9,
            vartheta: 1.5,
            p_exp: 3.0,
            dt_max: 5e-3,
            c_wave: 0.5,
            c_fric: 0.1,
            limit_dt_divisor: 8,
            drift_every: 1,
            include_drift: true,
            pass_ratio: 3.0,
            pass_max_error: 0.1,
            max_inversions: 1,
            max_flagged_fraction: 0.2,
            scaling_delta: 0.25,
            quad_nodes: 200,
            out_dir: "runs".into(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| {
        SimError::InvalidConfig(format!("key '{key}': cannot parse '{value}'"))
    })
}

impl RunConfig {
    /// Apply one `key = value` override.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "length" => self.length = parse_num(key, v)?,
            "n_modes" => self.n_modes = parse_num(key, v)?,
            "n_components" => self.n_components = parse_num(key, v)?,
            "model" => self.model = v.to_string(),
            "noise_amplitude" => self.noise_amplitude = parse_num(key, v)?,
            "theta_q" => self.theta_q = parse_num(key, v)?,
            "cutoff_radius" => {
                self.cutoff_radius =
                    if v == "none" { None } else { Some(parse_num(key, v)?) }
            }
            "rbar" => self.rbar = parse_num(key, v)?,
            "sbar" => self.sbar = parse_num(key, v)?,
            "kbar" => self.kbar = parse_num(key, v)?,
            "horizon" => self.horizon = parse_num(key, v)?,
            "snapshots" => self.snapshots = parse_num(key, v)?,
            "mu_grid" => {
                let mut grid = Vec::new();
                for part in v.split(',') {
                    grid.push(parse_num::<f64>(key, part)?);
                }
                self.mu_grid = grid;
            }
            "replicas" => self.replicas = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "rho" => self.rho = parse_num(key, v)?,
            "vartheta" => self.vartheta = parse_num(key, v)?,
            "p_exp" => self.p_exp = parse_num(key, v)?,
            "dt_max" => self.dt_max = parse_num(key, v)?,
            "c_wave" => self.c_wave = parse_num(key, v)?,
            "c_fric" => self.c_fric = parse_num(key, v)?,
            "limit_dt_divisor" => self.limit_dt_divisor = parse_num(key, v)?,
            "drift_every" => self.drift_every = parse_num(key, v)?,
            "include_drift" => {
                self.include_drift = match v {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => {
                        return Err(SimError::InvalidConfig(format!(
                            "key 'include_drift': expected true/false, got '{v}'"
                        )))
                    }
                }
            }
            "pass_ratio" => self.pass_ratio = parse_num(key, v)?,
            "pass_max_error" => self.pass_max_error = parse_num(key, v)?,
            "max_inversions" => self.max_inversions = parse_num(key, v)?,
            "max_flagged_fraction" => self.max_flagged_fraction = parse_num(key, v)?,
            "scaling_delta" => self.scaling_delta = parse_num(key, v)?,
            "quad_nodes" => self.quad_nodes = parse_num(key, v)?,
            "out_dir" => self.out_dir = v.to_string(),
            _ => {
                return Err(SimError::InvalidConfig(format!("unknown configuration key '{key}'")))
            }
        }
        Ok(())
    }

    /// Parse a flat key-value file on top of the defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                SimError::InvalidConfig(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            cfg.apply(key.trim(), value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |what: &str| Err(SimError::InvalidConfig(what.to_string()));
        if !(self.length > 0.0) {
            return fail("length must be > 0");
        }
        if self.n_modes == 0 || self.n_components == 0 {
            return fail("n_modes and n_components must be >= 1");
        }
        if !(self.rho < 1.0 && self.rho > 0.0) {
            return fail("rho must lie in (0, 1)");
        }
        if !(self.vartheta >= 1.0 && self.vartheta < 2.0) {
            return fail("vartheta must lie in [1, 2)");
        }
        if !(self.p_exp * (self.vartheta - 1.0) < 2.0) {
            return fail("need p_exp * (vartheta - 1) < 2");
        }
        if self.rho > self.rbar {
            return fail("need rho <= rbar (error norm below the cutoff norm)");
        }
        if self.mu_grid.is_empty() {
            return fail("mu_grid must be nonempty");
        }
        for w in self.mu_grid.windows(2) {
            if w[1] >= w[0] {
                return fail("mu_grid must be strictly decreasing");
            }
        }
        for &mu in &self.mu_grid {
            if !(mu > 0.0 && mu <= 1.0) {
                return fail("mu values must lie in (0, 1]");
            }
        }
        if self.snapshots < 2 {
            return fail("snapshots must be >= 2");
        }
        if self.replicas == 0 {
            return fail("replicas must be >= 1");
        }
        if !self.limit_dt_divisor.is_power_of_two() {
            return fail("limit_dt_divisor must be a power of two");
        }
        if !(self.horizon > 0.0) {
            return fail("horizon must be > 0");
        }
        if !(self.c_wave > 0.0 && self.c_fric > 0.0 && self.dt_max > 0.0) {
            return fail("c_wave, c_fric, dt_max must be > 0");
        }
        if !(self.scaling_delta > 0.0 && self.scaling_delta < 0.5) {
            return fail("scaling_delta must lie in (0, 1/2)");
        }
        if self.quad_nodes < 4 {
            return fail("quad_nodes must be >= 4");
        }
        Ok(())
    }

    /// Deterministic canonical rendering (fixed key order; also the
    /// documented config-file syntax).
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("length", format!("{}", self.length));
        kv("n_modes", format!("{}", self.n_modes));
        kv("n_components", format!("{}", self.n_components));
        kv("model", self.model.clone());
        kv("noise_amplitude", format!("{}", self.noise_amplitude));
        kv("theta_q", format!("{}", self.theta_q));
        kv(
            "cutoff_radius",
            match self.cutoff_radius {
                None => "none".into(),
                Some(r) => format!("{r}"),
            },
        );
        kv("rbar", format!("{}", self.rbar));
        kv("sbar", format!("{}", self.sbar));
        kv("kbar", format!("{}", self.kbar));
        kv("horizon", format!("{}", self.horizon));
        kv("snapshots", format!("{}", self.snapshots));
        kv(
            "mu_grid",
            self.mu_grid.iter().map(|m| format!("{m}")).collect::<Vec<_>>().join(","),
        );
        kv("replicas", format!("{}", self.replicas));
        kv("seed", format!("{}", self.seed));
        kv("rho", format!("{}", self.rho));
        kv("vartheta", format!("{}", self.vartheta));
        kv("p_exp", format!("{}", self.p_exp));
        kv("dt_max", format!("{}", self.dt_max));
        kv("c_wave", format!("{}", self.c_wave));
        kv("c_fric", format!("{}", self.c_fric));
        kv("limit_dt_divisor", format!("{}", self.limit_dt_divisor));
        kv("drift_every", format!("{}", self.drift_every));
        kv("include_drift", format!("{}", self.include_drift));
        kv("pass_ratio", format!("{}", self.pass_ratio));
        kv("pass_max_error", format!("{}", self.pass_max_error));
        kv("max_inversions", format!("{}", self.max_inversions));
        kv("max_flagged_fraction", format!("{}", self.max_flagged_fraction));
        kv("scaling_delta", format!("{}", self.scaling_delta));
        kv("quad_nodes", format!("{}", self.quad_nodes));
        kv("out_dir", self.out_dir.clone());
        s
    }

    /// 64-bit fingerprint of the canonical rendering.
    pub fn hash(&self) -> u64 {
        let mut h = 0xC0F1_6A5B_0000_5EED;
        for b in self.canonical().bytes() {
            h = compose(h, b as u64);
        }
        h
    }

    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.hash())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_through_canonical_form() {
        let mut cfg = RunConfig::default();
        cfg.apply("mu_grid", "1e-1,1e-2").unwrap();
        cfg.apply("cutoff_radius", "2.5").unwrap();
        cfg.apply("seed", "7").unwrap();
        let text = cfg.canonical();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash_hex(), back.hash_hex());
    }

    #[test]
    fn field_level_errors() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply("replicas", "many").unwrap_err().to_string();
        assert!(err.contains("replicas"), "{err}");
        let err = cfg.apply("nope", "1").unwrap_err().to_string();
        assert!(err.contains("nope"), "{err}");
        assert!(RunConfig::parse("vartheta = 2.5").is_err());
        assert!(RunConfig::parse("p_exp = 5").is_err()); // p (theta-1) = 2.5 >= 2
        assert!(RunConfig::parse("mu_grid = 1e-3,1e-2").is_err()); // not decreasing
        assert!(RunConfig::parse("rho = 0.95").is_err()); // above rbar
    }

    #[test]
    fn hash_is_sensitive_to_values() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        b.apply("seed", "43").unwrap();
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let cfg = RunConfig::parse("# comment\n\nseed = 9 # trailing\n").unwrap();
        assert_eq!(cfg.seed, 9);
    }
}
