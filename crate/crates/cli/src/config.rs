//! Flat TOML run configuration: parsing, overrides, validation and hashing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use scns_core::noise::NoiseSpec;
use scns_core::solver::{steps_for, DensityFlux, ObserverConfig, StepSpec};
use scns_core::stats::{EnsembleConfig, InitialProfile};
use scns_core::{make_grid, ModelParams, NoiseBasis};

use crate::error::CliError;

/// Keys as written by the user; everything optional until validation.
#[derive(Debug, Default, Deserialize)]
#[allow(non_snake_case)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    n_cells: Option<usize>,
    #[serde(rename = "A")]
    a: Option<f64>,
    dt: Option<f64>,
    #[serde(rename = "M")]
    m: Option<usize>,
    #[serde(rename = "T")]
    t: Option<f64>,
    seed: Option<u64>,
    #[serde(rename = "K")]
    k: Option<usize>,
    p: Option<f64>,
    sigma0: Option<f64>,
    sigma_sup_sq: Option<f64>,
    cfl_max: Option<f64>,
    #[serde(rename = "T0")]
    t0: Option<f64>,
    stride: Option<f64>,
    snapshot_stride: Option<f64>,
    checkpoint_stride: Option<f64>,
    init_rho_amp: Option<f64>,
    init_u_amp: Option<f64>,
    check_times: Option<Vec<f64>>,
    #[serde(rename = "R_grid")]
    r_grid: Option<Vec<f64>>,
    #[serde(rename = "A_list")]
    a_list: Option<Vec<f64>>,
    eta: Option<f64>,
    balance_T: Option<f64>,
    paired_T: Option<f64>,
    perturbation: Option<f64>,
    flux: Option<DensityFlux>,
    out: Option<PathBuf>,
    workers: Option<usize>,
}

/// Validated configuration with every default applied.
///
/// Times (`T`, `T0`, strides, check times) are in model time units and are
/// whole multiples of `dt`. The serialised form, without `out` and
/// `workers`, is what the config hash covers.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[allow(non_snake_case)]
pub struct RunConfig {
    pub n_cells: usize,
    pub A: f64,
    pub dt: f64,
    pub M: usize,
    pub T: f64,
    pub seed: u64,
    pub K: usize,
    pub p: f64,
    pub sigma0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_sup_sq: Option<f64>,
    pub cfl_max: f64,
    pub T0: f64,
    pub stride: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_stride: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_stride: Option<f64>,
    pub init_rho_amp: f64,
    pub init_u_amp: f64,
    pub check_times: Vec<f64>,
    pub R_grid: Vec<f64>,
    pub A_list: Vec<f64>,
    pub eta: f64,
    pub balance_T: f64,
    pub paired_T: f64,
    pub perturbation: f64,
    pub flux: DensityFlux,
    #[serde(skip)]
    pub out: PathBuf,
    #[serde(skip)]
    pub workers: Option<usize>,
}

/// Command-line adjustments applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// `key=value` pairs; values are TOML literals, bare words become strings.
    pub set: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

fn bad(key: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {reason}"))
}

fn parse_override(item: &str) -> Result<(String, toml::Value), CliError> {
    let (key, value) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{item}`")))?;
    let key = key.trim();
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

/// Reads `path` (if any), applies overrides and validates.
pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let text = match path {
        Some(p) => {
            std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?
        }
        None => String::new(),
    };
    parse_with(&text, overrides)
}

/// Parses config text, applies overrides and validates.
pub fn parse_with(text: &str, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
    for item in &overrides.set {
        let (k, v) = parse_override(item)?;
        table.insert(k, v);
    }
    let raw: RawConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
    let mut cfg = validate(raw)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &overrides.out {
        cfg.out = out.clone();
    }
    if let Some(w) = overrides.workers {
        if w == 0 {
            return Err(bad("workers", "must be positive"));
        }
        cfg.workers = Some(w);
    }
    Ok(cfg)
}

/// Parses config text without overrides.
#[cfg(test)]
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    parse_with(text, &Overrides::default())
}

fn require<T>(v: Option<T>, key: &str) -> Result<T, CliError> {
    v.ok_or_else(|| bad(key, "missing required key"))
}

fn whole_steps(key: &str, t: f64, dt: f64) -> Result<u64, CliError> {
    steps_for(t, dt).map_err(|_| bad(key, format!("{t} must be a positive whole number of steps of {dt}")))
}

fn validate(raw: RawConfig) -> Result<RunConfig, CliError> {
    let n_cells = require(raw.n_cells, "n_cells")?;
    let a = require(raw.a, "A")?;
    let dt = require(raw.dt, "dt")?;
    let m = require(raw.m, "M")?;
    let t = require(raw.t, "T")?;
    let seed = require(raw.seed, "seed")?;

    let grid = make_grid::<f64>(n_cells).map_err(|e| bad("n_cells", e))?;
    ModelParams::new(a).map_err(|e| bad("A", e))?;
    let cfl_max = raw.cfl_max.unwrap_or(0.5);
    let flux = raw.flux.unwrap_or_default();
    StepSpec::with_options(dt, cfl_max, flux).map_err(|e| bad("dt/cfl_max", e))?;
    if m == 0 {
        return Err(bad("M", "needs at least one trajectory"));
    }
    whole_steps("T", t, dt)?;

    let k = raw.k.unwrap_or(4);
    let p = raw.p.unwrap_or(3.0);
    let sigma0 = match (raw.sigma0, raw.sigma_sup_sq) {
        (Some(_), Some(_)) => return Err(bad("sigma0", "sigma0 and sigma_sup_sq are mutually exclusive")),
        (None, Some(target)) => NoiseBasis::with_sup_norm_sq(&grid, k, p, target)
            .map_err(|e| bad("noise", e))?
            .sigma0(),
        (s, None) => s.unwrap_or(0.0),
    };
    NoiseBasis::from_spec(&grid, &NoiseSpec { k, sigma0, p }).map_err(|e| bad("noise", e))?;

    let t0 = raw.t0.unwrap_or(0.0);
    if !(t0 >= 0.0 && t0 < t) {
        return Err(bad("T0", format!("must lie in [0, T), got {t0}")));
    }
    let stride = raw.stride.unwrap_or(100.0 * dt);
    let stride_steps = whole_steps("stride", stride, dt)?;
    if whole_steps("T", t, dt)? % stride_steps != 0 {
        return Err(bad("T", "must be a whole number of sampling strides"));
    }
    for (key, v) in [
        ("snapshot_stride", raw.snapshot_stride),
        ("checkpoint_stride", raw.checkpoint_stride),
    ] {
        if let Some(s) = v {
            whole_steps(key, s, dt)?;
        }
    }
    if t0 > 0.0 {
        let n0 = whole_steps("T0", t0, dt)?;
        if n0 % stride_steps != 0 {
            return Err(bad("T0", "must lie on the sampling grid"));
        }
    }
    let check_times = raw.check_times.unwrap_or_else(|| vec![t / 4.0, t / 2.0, t]);
    for &c in &check_times {
        let n = whole_steps("check_times", c, dt)?;
        if c > t * (1.0 + 1e-12) || n % stride_steps != 0 {
            return Err(bad(
                "check_times",
                format!("{c} must lie in (0, T] on the sampling grid"),
            ));
        }
    }
    let r_grid = raw.r_grid.unwrap_or_else(|| vec![1.0, 2.0, 3.0]);
    if r_grid.is_empty() || r_grid.iter().any(|r| !(*r >= 1.0) || !r.is_finite()) {
        return Err(bad("R_grid", "entries must be finite and >= 1"));
    }
    let a_list = raw.a_list.unwrap_or_else(|| vec![1.0, 2.0, 4.0, 8.0]);
    if a_list.is_empty() || a_list.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(bad("A_list", "entries must be finite and positive"));
    }
    let eta = raw.eta.unwrap_or(1.0);
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(bad("eta", format!("must be positive, got {eta}")));
    }
    let balance_t = raw.balance_T.unwrap_or(0.1);
    // the balance check also runs at dt/2
    whole_steps("balance_T", balance_t, dt)?;
    let paired_t = raw.paired_T.unwrap_or(0.05);
    whole_steps("paired_T", paired_t, dt)?;
    let perturbation = raw.perturbation.unwrap_or(1e-6);
    if !(0.0..0.5).contains(&perturbation) {
        return Err(bad("perturbation", format!("must lie in [0, 0.5), got {perturbation}")));
    }
    let init = InitialProfile {
        rho_amp: raw.init_rho_amp.unwrap_or(0.0),
        u_amp: raw.init_u_amp.unwrap_or(0.0),
    };
    init.build(n_cells).map_err(|e| bad("init_rho_amp/init_u_amp", e))?;

    let cfg = RunConfig {
        n_cells,
        A: a,
        dt,
        M: m,
        T: t,
        seed,
        K: k,
        p,
        sigma0,
        sigma_sup_sq: raw.sigma_sup_sq,
        cfl_max,
        T0: t0,
        stride,
        snapshot_stride: raw.snapshot_stride,
        checkpoint_stride: raw.checkpoint_stride,
        init_rho_amp: init.rho_amp,
        init_u_amp: init.u_amp,
        check_times,
        R_grid: r_grid,
        A_list: a_list,
        eta,
        balance_T: balance_t,
        paired_T: paired_t,
        perturbation,
        flux,
        out: raw.out.unwrap_or_else(|| PathBuf::from("out")),
        workers: raw.workers,
    };
    cfg.ensemble().validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

impl RunConfig {
    /// Canonical TOML text of the hashed fields.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Hex SHA-256 of [`RunConfig::canonical`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            k: self.K,
            sigma0: self.sigma0,
            p: self.p,
        }
    }

    pub fn step_spec(&self) -> StepSpec<f64> {
        StepSpec::with_options(self.dt, self.cfl_max, self.flux).expect("validated")
    }

    pub fn params(&self) -> ModelParams<f64> {
        ModelParams::new(self.A).expect("validated")
    }

    pub fn basis(&self) -> NoiseBasis<f64> {
        NoiseBasis::from_spec(&make_grid(self.n_cells).expect("validated"), &self.noise()).expect("validated")
    }

    pub fn init(&self) -> InitialProfile {
        InitialProfile {
            rho_amp: self.init_rho_amp,
            u_amp: self.init_u_amp,
        }
    }

    fn steps(&self, t: f64) -> u64 {
        steps_for(t, self.dt).expect("validated")
    }

    pub fn stride_steps(&self) -> u64 {
        self.steps(self.stride)
    }

    pub fn checkpoint_steps(&self) -> Option<u64> {
        self.checkpoint_stride.map(|s| self.steps(s))
    }

    pub fn observer(&self) -> ObserverConfig {
        ObserverConfig {
            sample_stride: self.stride_steps(),
            snapshot_stride: self.snapshot_stride.map(|s| self.steps(s)),
        }
    }

    pub fn ensemble(&self) -> EnsembleConfig {
        EnsembleConfig {
            n_cells: self.n_cells,
            a: self.A,
            step: self.step_spec(),
            noise: self.noise(),
            n_trajectories: self.M,
            horizon: self.T,
            burn_in: self.T0,
            sample_stride: self.stride_steps(),
            snapshot_stride: self.snapshot_stride.map(|s| self.steps(s)),
            seed: self.seed,
            init: self.init(),
            check_times: self.check_times.clone(),
            workers: self.workers,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "A = 1\nn_cells = 128\ndt = 1e-4\nM = 1\nT = 1\nseed = 7\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!((c.K, c.p, c.cfl_max), (4, 3.0, 0.5));
        assert_eq!(c.sigma0, 0.0);
        assert_eq!(c.check_times, vec![0.25, 0.5, 1.0]);
        assert_eq!(c.stride_steps(), 100);
        assert_eq!(c.flux, DensityFlux::Central);
    }

    #[test]
    fn rejects_rough_noise() {
        let err = parse_config(&format!("{MINIMAL}p = 2\n")).unwrap_err();
        assert!(err.to_string().contains("H^2 noise assumption"), "{err}");
    }

    #[test]
    fn rejects_duplicates_and_unknown_keys() {
        assert!(parse_config(&format!("{MINIMAL}A = 2\n")).is_err());
        let err = parse_config(&format!("{MINIMAL}bogus = 1\n")).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn missing_keys_are_named() {
        let err = parse_config("A = 1\nn_cells = 128\ndt = 1e-4\nM = 1\nT = 1\n").unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn overrides_and_hash() {
        let base = parse_config(MINIMAL).unwrap();
        let ov = Overrides {
            set: vec!["A=2".into(), "flux=upwind".into()],
            seed: Some(9),
            out: Some("elsewhere".into()),
            workers: Some(2),
        };
        let c = parse_with(MINIMAL, &ov).unwrap();
        assert_eq!((c.A, c.seed, c.flux), (2.0, 9, DensityFlux::Upwind));
        assert_ne!(c.hash(), base.hash());

        let moved = parse_with(
            MINIMAL,
            &Overrides {
                out: Some("x".into()),
                workers: Some(3),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(moved.hash(), base.hash());
        assert_eq!(base.hash().len(), 64);
    }

    #[test]
    fn sup_norm_target() {
        let c = parse_config(&format!("{MINIMAL}sigma_sup_sq = 0.1\n")).unwrap();
        assert!((c.basis().sup_norm_sq() - 0.1).abs() < 1e-12);
        assert!(parse_config(&format!("{MINIMAL}sigma_sup_sq = 0.1\nsigma0 = 0.3\n")).is_err());
    }

    #[test]
    fn grid_constraints() {
        assert!(parse_config(&format!("{MINIMAL}stride = 0.00015\n")).is_err());
        assert!(parse_config(&format!("{MINIMAL}R_grid = [0.5]\n")).is_err());
        assert!(parse_config(&format!("{MINIMAL}T0 = 1\n")).is_err());
        assert!(parse_config(&MINIMAL.replace("n_cells = 128", "n_cells = 4")).is_err());
    }
}
