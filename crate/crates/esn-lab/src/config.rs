//! Structured-text experiment configuration: a TOML schema that mirrors the
//! task drivers, `--override key=value` patching, and resolution into typed
//! driver configs with full validation.

use esn_core::readout::ReadoutMethod;
use esn_core::reservoir::{MatrixKind, Variant};
use esn_core::theory::ScalarChannelConfig;
use esn_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::fivebit::{FiveBitSpec, SearchConfig, SearchMode};
use crate::tasks::{FixedConfig, IidSource, StreamConfig};

fn default_alpha() -> f64 {
    1.0
}
fn default_trials() -> usize {
    10
}
fn default_d_max() -> usize {
    25
}
fn default_e() -> usize {
    1000
}
fn default_r() -> usize {
    3000
}
fn default_test_seqs() -> usize {
    128
}
fn default_surface_steps() -> usize {
    200_000
}
fn default_surface_d_max() -> usize {
    1024
}
fn default_fivebit_beta() -> f64 {
    1.0 / 64.0
}
fn default_fivebit_gamma() -> f64 {
    0.99
}
fn default_fivebit_target() -> f64 {
    0.99
}
fn default_fivebit_seeds() -> usize {
    50
}
fn default_fivebit_episodes() -> usize {
    400_000
}
fn default_fivebit_mode() -> String {
    "both".into()
}
fn default_n_max() -> usize {
    1 << 15
}

/// One curve run (streaming or fixed-length, depending on the experiment's
/// task field).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    /// Label written to the CSV `experiment` column.
    pub label: String,
    /// "V1".."V5".
    pub variant: String,
    /// "permutation" | "random_orthogonal".
    pub matrix: String,
    /// "codebook" | "regression" | "cov_coarse" | "cov_fine".
    pub readout: String,
    pub n: usize,
    pub d_alphabet: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_alpha")]
    pub beta: f64,
    #[serde(default = "default_alpha")]
    pub gamma: f64,
    #[serde(default = "default_e")]
    pub e: usize,
    #[serde(default)]
    pub m: usize,
    #[serde(default = "default_r")]
    pub r: usize,
    /// Fixed-length task only.
    #[serde(default)]
    pub g: Option<usize>,
    #[serde(default)]
    pub train_seqs: Option<usize>,
    #[serde(default = "default_test_seqs")]
    pub test_seqs: usize,
    #[serde(default = "default_d_max")]
    pub d_max: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Per-run seed; defaults to experiment seed + run index.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub snr_train_db: Option<f64>,
    #[serde(default)]
    pub snr_test_db: Option<f64>,
    #[serde(default)]
    pub cov_horizon: Option<usize>,
    /// "none" | "analytic" | "measured".
    #[serde(default)]
    pub theory_iid: Option<String>,
    #[serde(default)]
    pub theory_full: bool,
    #[serde(default)]
    pub theory_indep: bool,
    #[serde(default)]
    pub geometry: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SurfaceFile {
    /// "V3" | "V4" | "V5" (scalar-channel variants).
    pub variant: String,
    pub n: usize,
    pub d_alphabet: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub beta_step: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub gamma_step: f64,
    #[serde(default = "default_surface_d_max")]
    pub d_max: usize,
    #[serde(default = "default_surface_steps")]
    pub steps: usize,
}

impl SurfaceFile {
    fn grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
        if step <= 0.0 || max < min {
            return Err(Error::Parameter(format!(
                "bad grid [{min}, {max}] step {step}"
            )));
        }
        let count = ((max - min) / step + 0.5).floor() as usize + 1;
        Ok((0..count).map(|i| min + i as f64 * step).collect())
    }

    pub fn betas(&self) -> Result<Vec<f64>> {
        Self::grid(self.beta_min, self.beta_max, self.beta_step)
    }

    pub fn gammas(&self) -> Result<Vec<f64>> {
        Self::grid(self.gamma_min, self.gamma_max, self.gamma_step)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FiveBitFile {
    pub t_list: Vec<usize>,
    /// "theory" | "empirical" | "both".
    #[serde(default = "default_fivebit_mode")]
    pub mode: String,
    #[serde(default = "default_fivebit_beta")]
    pub beta: f64,
    #[serde(default = "default_fivebit_gamma")]
    pub gamma: f64,
    #[serde(default = "default_fivebit_target")]
    pub target: f64,
    #[serde(default = "default_fivebit_seeds")]
    pub seeds: usize,
    #[serde(default = "default_fivebit_episodes")]
    pub episodes: usize,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
}

/// Top-level experiment file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub name: String,
    /// "stream" | "fixed" | "surface" | "fivebit" | "tiers".
    pub task: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub runs: Vec<RunFile>,
    #[serde(default)]
    pub surface: Option<SurfaceFile>,
    #[serde(default)]
    pub fivebit: Option<FiveBitFile>,
}

pub fn parse_variant(s: &str) -> Result<Variant> {
    match s {
        "V1" | "v1" => Ok(Variant::V1),
        "V2" | "v2" => Ok(Variant::V2),
        "V3" | "v3" => Ok(Variant::V3),
        "V4" | "v4" => Ok(Variant::V4),
        "V5" | "v5" => Ok(Variant::V5),
        _ => Err(Error::Parameter(format!("unknown variant {s:?}"))),
    }
}

pub fn parse_matrix(s: &str) -> Result<MatrixKind> {
    match s {
        "permutation" => Ok(MatrixKind::Permutation),
        "random_orthogonal" | "orthogonal" => Ok(MatrixKind::RandomOrthogonal),
        _ => Err(Error::Parameter(format!("unknown matrix family {s:?}"))),
    }
}

pub fn parse_readout(s: &str) -> Result<ReadoutMethod> {
    match s {
        "codebook" => Ok(ReadoutMethod::Codebook),
        "regression" => Ok(ReadoutMethod::Regression),
        "cov_coarse" => Ok(ReadoutMethod::CovCoarse),
        "cov_fine" => Ok(ReadoutMethod::CovFine),
        _ => Err(Error::Parameter(format!("unknown readout {s:?}"))),
    }
}

fn parse_iid(s: &Option<String>) -> Result<IidSource> {
    match s.as_deref() {
        None | Some("none") => Ok(IidSource::None),
        Some("analytic") => Ok(IidSource::Analytic),
        Some("measured") => Ok(IidSource::Measured),
        Some(other) => Err(Error::Parameter(format!("unknown theory_iid source {other:?}"))),
    }
}

/// A resolved, ready-to-run experiment.
#[derive(Debug, Clone)]
pub enum Experiment {
    Stream(Vec<(String, StreamConfig)>),
    Fixed(Vec<(String, FixedConfig)>),
    Surface(SurfaceFile),
    FiveBit(FiveBitFile),
    /// Constructed-moment predictor-tier comparison (no simulation inputs).
    Tiers,
}

impl RunFile {
    fn key_err(&self, key: &str, msg: &str) -> Error {
        Error::Parameter(format!("run {:?}, key {key}: {msg}", self.label))
    }

    fn resolve_stream(&self, experiment_seed: u64, index: usize) -> Result<StreamConfig> {
        let method = parse_readout(&self.readout)?;
        let gamma = self.gamma;
        if matches!(method, ReadoutMethod::CovCoarse | ReadoutMethod::CovFine) && gamma > 1.0 {
            return Err(self.key_err(
                "gamma",
                "covariance estimate diverges for gamma > 1 (geometric state power series)",
            ));
        }
        let mut cfg = StreamConfig::new(
            parse_variant(&self.variant)?,
            parse_matrix(&self.matrix)?,
            method,
            self.n,
            self.d_alphabet,
        );
        cfg.alpha = self.alpha;
        cfg.beta = self.beta;
        cfg.gamma = gamma;
        cfg.lambda = self.lambda;
        cfg.cov_horizon = self.cov_horizon;
        cfg.e = self.e;
        cfg.m = self.m;
        cfg.r = self.r;
        cfg.d_max = self.d_max;
        cfg.trials = self.trials;
        cfg.seed = self.seed.unwrap_or(experiment_seed.wrapping_add(index as u64));
        cfg.snr_train_db = self.snr_train_db;
        cfg.snr_test_db = self.snr_test_db;
        cfg.theory_iid = parse_iid(&self.theory_iid)?;
        cfg.theory_full = self.theory_full;
        cfg.theory_indep = self.theory_indep;
        cfg.geometry = self.geometry;
        Ok(cfg)
    }

    fn resolve_fixed(&self, experiment_seed: u64, index: usize) -> Result<FixedConfig> {
        let g = self.g.ok_or_else(|| self.key_err("g", "fixed-length runs need a sequence length"))?;
        let method = parse_readout(&self.readout)?;
        if matches!(method, ReadoutMethod::CovCoarse | ReadoutMethod::CovFine) && self.gamma > 1.0 {
            return Err(self.key_err(
                "gamma",
                "covariance estimate diverges for gamma > 1 (geometric state power series)",
            ));
        }
        let mut cfg = FixedConfig::new(
            parse_variant(&self.variant)?,
            parse_matrix(&self.matrix)?,
            method,
            self.n,
            self.d_alphabet,
            g,
        );
        cfg.alpha = self.alpha;
        cfg.beta = self.beta;
        cfg.gamma = self.gamma;
        cfg.train_seqs = self.train_seqs.unwrap_or(0);
        cfg.test_seqs = self.test_seqs;
        cfg.d_max = self.d_max.min(g.saturating_sub(1));
        cfg.trials = self.trials;
        cfg.seed = self.seed.unwrap_or(experiment_seed.wrapping_add(index as u64));
        cfg.lambda = self.lambda;
        cfg.cov_horizon = self.cov_horizon;
        cfg.theory_iid = matches!(self.theory_iid.as_deref(), Some("analytic"));
        Ok(cfg)
    }
}

impl ExperimentFile {
    /// Validate and convert into typed driver configurations.
    pub fn resolve(&self) -> Result<Experiment> {
        match self.task.as_str() {
            "stream" => {
                if self.runs.is_empty() {
                    return Err(Error::Parameter("key runs: no runs configured".into()));
                }
                let runs = self
                    .runs
                    .iter()
                    .enumerate()
                    .map(|(i, r)| Ok((r.label.clone(), r.resolve_stream(self.seed, i)?)))
                    .collect::<Result<_>>()?;
                Ok(Experiment::Stream(runs))
            }
            "fixed" => {
                if self.runs.is_empty() {
                    return Err(Error::Parameter("key runs: no runs configured".into()));
                }
                let runs = self
                    .runs
                    .iter()
                    .enumerate()
                    .map(|(i, r)| Ok((r.label.clone(), r.resolve_fixed(self.seed, i)?)))
                    .collect::<Result<_>>()?;
                Ok(Experiment::Fixed(runs))
            }
            "surface" => {
                let s = self
                    .surface
                    .clone()
                    .ok_or_else(|| Error::Parameter("key surface: missing table".into()))?;
                let v = parse_variant(&s.variant)?;
                if !matches!(v, Variant::V3 | Variant::V4 | Variant::V5) {
                    return Err(Error::Parameter(
                        "key surface.variant: capacity surfaces use the saturating variants"
                            .into(),
                    ));
                }
                s.betas()?;
                s.gammas()?;
                Ok(Experiment::Surface(s))
            }
            "fivebit" => {
                let f = self
                    .fivebit
                    .clone()
                    .ok_or_else(|| Error::Parameter("key fivebit: missing table".into()))?;
                if f.t_list.is_empty() {
                    return Err(Error::Parameter("key fivebit.t_list: empty".into()));
                }
                if !matches!(f.mode.as_str(), "theory" | "empirical" | "both") {
                    return Err(Error::Parameter(format!(
                        "key fivebit.mode: unknown mode {:?}",
                        f.mode
                    )));
                }
                Ok(Experiment::FiveBit(f))
            }
            "tiers" => Ok(Experiment::Tiers),
            other => Err(Error::Parameter(format!("key task: unknown task {other:?}"))),
        }
    }
}

impl FiveBitFile {
    pub fn spec(&self, t: usize) -> FiveBitSpec {
        FiveBitSpec { n: 0, beta: self.beta, gamma: self.gamma, t, target: self.target }
    }

    pub fn theory_search(&self, seed: u64) -> SearchConfig {
        SearchConfig {
            mode: SearchMode::Theory { episodes: self.episodes },
            seed,
            n_min: 4,
            n_max: self.n_max,
        }
    }

    pub fn empirical_search(&self, seed: u64) -> SearchConfig {
        SearchConfig {
            mode: SearchMode::Empirical { seeds: self.seeds },
            seed,
            n_min: 4,
            n_max: self.n_max,
        }
    }
}

pub fn scalar_config_for_surface(s: &SurfaceFile) -> ScalarChannelConfig {
    ScalarChannelConfig { steps: s.steps, ..Default::default() }
}

/// Parse a TOML file into an experiment description.
pub fn from_toml_str(text: &str) -> Result<ExperimentFile> {
    toml::from_str(text).map_err(|e| Error::Parameter(format!("config parse error: {e}")))
}

/// Apply one `key=value` override to a TOML document. Keys use dotted paths
/// with numeric indices into arrays (e.g. `runs.0.gamma=0.7`, `seed=9`).
pub fn apply_override(doc: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Parameter(format!("override {spec:?} is not key=value")))?;
    let value = parse_literal(raw);
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        if let Ok(idx) = part.parse::<usize>() {
            let arr = cur
                .as_array_mut()
                .ok_or_else(|| Error::Parameter(format!("key {path}: {part} indexes a non-array")))?;
            if idx >= arr.len() {
                return Err(Error::Parameter(format!(
                    "key {path}: index {idx} out of range (len {})",
                    arr.len()
                )));
            }
            if last {
                arr[idx] = value;
                return Ok(());
            }
            cur = &mut arr[idx];
        } else {
            let table = cur
                .as_table_mut()
                .ok_or_else(|| Error::Parameter(format!("key {path}: {part} indexes a non-table")))?;
            if last {
                table.insert((*part).into(), value);
                return Ok(());
            }
            cur = table
                .get_mut(*part)
                .ok_or_else(|| Error::Parameter(format!("key {path}: unknown key {part:?}")))?;
        }
    }
    Err(Error::Parameter(format!("override {spec:?} has an empty key path")))
}

fn parse_literal(raw: &str) -> toml::Value {
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    toml::Value::String(raw.into())
}

/// Round-trip an experiment through TOML with overrides applied; unknown keys
/// introduced by an override surface as parse errors.
pub fn with_overrides(file: &ExperimentFile, overrides: &[String]) -> Result<ExperimentFile> {
    let text = toml::to_string(file)
        .map_err(|e| Error::Parameter(format!("config serialization error: {e}")))?;
    let mut doc: toml::Value =
        toml::from_str(&text).map_err(|e| Error::Parameter(format!("config error: {e}")))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let text = toml::to_string(&doc)
        .map_err(|e| Error::Parameter(format!("config serialization error: {e}")))?;
    from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_stream() -> ExperimentFile {
        from_toml_str(
            r#"
            name = "demo"
            task = "stream"
            seed = 5
            [[runs]]
            label = "demo:a"
            variant = "V2"
            matrix = "permutation"
            readout = "codebook"
            n = 64
            d_alphabet = 4
            gamma = 0.9
            "#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_are_filled_in() {
        let f = minimal_stream();
        let r = &f.runs[0];
        assert_eq!((r.e, r.m, r.r), (1000, 0, 3000));
        assert_eq!(r.d_max, 25);
        assert_eq!(r.trials, 10);
        match f.resolve().unwrap() {
            Experiment::Stream(runs) => {
                assert_eq!(runs[0].1.seed, 5);
                assert_eq!(runs[0].1.gamma, 0.9);
            }
            _ => panic!("wrong task"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = from_toml_str("name = \"x\"\ntask = \"stream\"\nbogus = 1\n").unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("bogus"), "{msg}");
    }

    #[test]
    fn divergent_covariance_gamma_is_a_config_error() {
        let mut f = minimal_stream();
        f.runs[0].readout = "cov_coarse".into();
        f.runs[0].gamma = 1.2;
        let err = f.resolve().unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("gamma") && msg.contains("diverges"), "{msg}");
    }

    #[test]
    fn overrides_patch_nested_keys() {
        let f = minimal_stream();
        let g = with_overrides(&f, &["seed=7".into(), "runs.0.gamma=0.7".into()]).unwrap();
        assert_eq!(g.seed, 7);
        assert_eq!(g.runs[0].gamma, 0.7);
        // Unknown key via override is rejected on re-parse.
        assert!(with_overrides(&f, &["runs.0.bogus=1".into()]).is_err());
        // Bad index.
        assert!(with_overrides(&f, &["runs.3.gamma=0.7".into()]).is_err());
    }

    #[test]
    fn surface_grid_counts() {
        let s = SurfaceFile {
            variant: "V4".into(),
            n: 256,
            d_alphabet: 2,
            alpha: 1.0,
            beta_min: 0.0,
            beta_max: 0.5,
            beta_step: 0.01,
            gamma_min: 0.5,
            gamma_max: 1.5,
            gamma_step: 0.01,
            d_max: 1024,
            steps: 1000,
        };
        assert_eq!(s.betas().unwrap().len(), 51);
        assert_eq!(s.gammas().unwrap().len(), 101);
    }
}
