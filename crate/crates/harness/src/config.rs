//! Run configuration: a TOML file plus `--set key=value` overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bsvrb::restart::{StageMultipliers, Variant};
use bsvrb::{HyperParams, Selection};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmKind {
    BsvrbV1,
    BsvrbV2,
    ReBsvrbV1,
    ReBsvrbV2,
    BaselineMa,
}

impl AlgorithmKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::BsvrbV1 => "bsvrb-v1",
            Self::BsvrbV2 => "bsvrb-v2",
            Self::ReBsvrbV1 => "re-bsvrb-v1",
            Self::ReBsvrbV2 => "re-bsvrb-v2",
            Self::BaselineMa => "baseline-ma",
        }
    }

    /// Whether the algorithm asks the problem for dense lower Hessians.
    pub fn needs_dense_hessian(self) -> bool {
        matches!(self, Self::BsvrbV1 | Self::ReBsvrbV1 | Self::BaselineMa)
    }

    pub fn restart_variant(self) -> Option<Variant> {
        match self {
            Self::ReBsvrbV1 => Some(Variant::V1),
            Self::ReBsvrbV2 => Some(Variant::V2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionKind {
    Last,
    RandomIterate,
}

impl From<SelectionKind> for Selection {
    fn from(s: SelectionKind) -> Self {
        match s {
            SelectionKind::Last => Selection::Last,
            SelectionKind::RandomIterate => Selection::RandomIterate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    pub m: usize,
    #[serde(default = "d_x")]
    pub d_x: usize,
    #[serde(default = "d_y")]
    pub d_y: usize,
    #[serde(default = "sigma")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub lambda_reg: f64,
    #[serde(default = "samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn d_x() -> usize {
    5
}
fn d_y() -> usize {
    4
}
fn sigma() -> f64 {
    0.1
}
fn samples() -> usize {
    64
}

/// Split, corruption and model options shared by the two data-driven problems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub m: usize,
    pub temp_min: f64,
    pub temp_max: f64,
    pub lambda_reg: f64,
    /// Offer dense lower Hessians (needed by v1).
    pub dense_hessian: bool,
    pub train_frac: f64,
    pub val_frac: f64,
    pub drop_pos_frac: f64,
    pub flip_prob: f64,
    /// Seed of the split, the corruption and the temperatures.
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            m: 100,
            temp_min: 1.0,
            temp_max: 11.0,
            lambda_reg: 0.01,
            dense_hessian: true,
            train_frac: 0.6,
            val_frac: 0.2,
            drop_pos_frac: 0.7,
            flip_prob: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperweightSpec {
    #[serde(default = "n")]
    pub n: usize,
    #[serde(default = "d")]
    pub d: usize,
    #[serde(default = "density")]
    pub density: f64,
    #[serde(default = "pos_frac")]
    pub pos_frac: f64,
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default)]
    pub model: ModelSpec,
}

fn n() -> usize {
    2000
}
fn d() -> usize {
    30
}
fn density() -> f64 {
    1.0
}
fn pos_frac() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibsvmSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub model: ModelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProblemSpec {
    Quadratic(QuadraticSpec),
    Hyperweight(HyperweightSpec),
    Libsvm(LibsvmSpec),
}

impl ProblemSpec {
    pub fn num_blocks(&self) -> usize {
        match self {
            Self::Quadratic(q) => q.m,
            Self::Hyperweight(h) => h.model.m,
            Self::Libsvm(l) => l.model.m,
        }
    }

    pub fn offers_dense_hessian(&self) -> bool {
        match self {
            Self::Quadratic(_) => true,
            Self::Hyperweight(h) => h.model.dense_hessian,
            Self::Libsvm(l) => l.model.dense_hessian,
        }
    }
}

/// Which trace columns are filled and how often.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub eval_every: u64,
    pub exact_grad: bool,
    pub upper_loss: bool,
    pub delta_y: bool,
    pub delta_tracker: bool,
    /// Set to false for byte-reproducible CSVs (`wall_ms` is then 0).
    pub wall_clock: bool,
    pub check_invariants: bool,
    /// Defaults to `last` for plain runs and `random-iterate` for restarts.
    pub selection: Option<SelectionKind>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            eval_every: 100,
            exact_grad: true,
            upper_loss: true,
            delta_y: false,
            delta_tracker: false,
            wall_clock: true,
            check_invariants: false,
            selection: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RestartSpec {
    pub eps_target: f64,
    /// Continue each stage from the full returned state instead of
    /// re-initializing at the returned upper iterate.
    pub carry: bool,
    pub multipliers: StageMultipliers,
}

impl Default for RestartSpec {
    fn default() -> Self {
        Self {
            eps_target: 1e-3,
            carry: true,
            multipliers: StageMultipliers::default(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    algorithm: AlgorithmKind,
    #[serde(default = "seeds")]
    seeds: Vec<u64>,
    #[serde(default = "out_dir")]
    out_dir: PathBuf,
    #[serde(default)]
    vary_problem: bool,
    problem: ProblemSpec,
    #[serde(default)]
    params: Table,
    #[serde(default)]
    output: OutputSpec,
    #[serde(default)]
    restart: RestartSpec,
}

fn seeds() -> Vec<u64> {
    vec![0]
}
fn out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Validated configuration with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub algorithm: AlgorithmKind,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Derive the problem seed from the run seed, so each seed sees a new instance.
    pub vary_problem: bool,
    pub problem: ProblemSpec,
    /// Base parameters; `seed` is replaced per run.
    pub params: HyperParams,
    pub output: OutputSpec,
    pub restart: RestartSpec,
}

impl RunConfig {
    pub fn selection(&self) -> Selection {
        match self.output.selection {
            Some(s) => s.into(),
            None if self.algorithm.restart_variant().is_some() => Selection::RandomIterate,
            None => Selection::Last,
        }
    }
}

/// Parses `text`, applies `overrides` (each `dotted.key=value`, value in TOML
/// syntax or a bare string) and validates the result.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut table: Table = toml::from_str(text).context("config is not valid TOML")?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let raw: RawConfig = Value::Table(table).try_into().context("invalid config")?;
    resolve(raw)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    parse_config(&text, overrides).with_context(|| format!("in config {}", path.display()))
}

fn parse_value(text: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {text}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(text.to_owned())),
        Err(_) => Value::String(text.to_owned()),
    }
}

pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let Some((key, value)) = assignment.split_once('=') else {
        bail!("override `{assignment}` is not of the form key=value");
    };
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` has an empty component");
    }
    let mut node = table;
    for part in &path[..path.len() - 1] {
        let entry = node.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = match entry {
            Value::Table(t) => t,
            _ => bail!("override `{key}`: `{part}` is not a section"),
        };
    }
    node.insert(path[path.len() - 1].to_owned(), parse_value(value.trim()));
    Ok(())
}

fn resolve(raw: RawConfig) -> Result<RunConfig> {
    if raw.seeds.is_empty() {
        bail!("`seeds` must list at least one seed");
    }
    let m = raw.problem.num_blocks();
    if m == 0 {
        bail!("problem needs at least one block");
    }
    if raw.algorithm.needs_dense_hessian() && !raw.problem.offers_dense_hessian() {
        bail!(
            "{} needs dense lower Hessians but the problem only offers Hessian-vector products; \
             use bsvrb-v2 / re-bsvrb-v2 or set problem.model.dense_hessian = true",
            raw.algorithm.name()
        );
    }
    let defaults = HyperParams {
        blocks_per_iter: m.min(10),
        batch_size: 32,
        ..HyperParams::default()
    };
    let mut merged = Table::try_from(&defaults).context("serializing default parameters")?;
    for (k, v) in raw.params {
        merged.insert(k, v);
    }
    let mut params: HyperParams = Value::Table(merged).try_into().context("invalid [params]")?;
    if raw.algorithm == AlgorithmKind::BaselineMa {
        params.gamma_override = Some(0.0);
        params.gamma_bar_override = Some(0.0);
        params.beta = 1.0;
    }
    params.validate(m, None).context("invalid [params]")?;
    if raw.output.exact_grad && raw.output.eval_every == 0 {
        log::debug!("eval_every = 0: only the endpoints are evaluated");
    }
    if raw.algorithm.restart_variant().is_some() && !(raw.restart.eps_target > 0.0) {
        bail!("restart.eps_target must be positive");
    }
    Ok(RunConfig {
        algorithm: raw.algorithm,
        seeds: raw.seeds,
        out_dir: raw.out_dir,
        vary_problem: raw.vary_problem,
        problem: raw.problem,
        params,
        output: raw.output,
        restart: raw.restart,
    })
}
