//! Run configuration: defaults, flat dotted-key JSON files, flag
//! overrides, and the config hash stamped into every artifact.
//!
//! A config file is a flat JSON object whose keys use dots for nesting,
//! for example `{"phase2.lambda_fair": 2.0}`. Precedence is flags over
//! file over defaults. The hash covers the resolved experiment recipe
//! but not `seed`, `out`, or `runs`, so artifacts from a five-seed run
//! share one hash while each records its own seed.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use cfad_core::detector::{DetectorConfig, FinetuneConfig};
use cfad_core::eval::SWEEP_QUANTILES;
use cfad_core::scm::BenchmarkParams;
use cfad_core::structure_learning::{GaeConfig, RefitConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Environment variable giving the default output root.
pub const OUT_ROOT_VAR: &str = "CFAD_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "snake_case")]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub runs: u32,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub phase1: PhaseOneConfig,
    pub phase2: PhaseTwoConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: env::var_os(OUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from),
            runs: 1,
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            phase1: PhaseOneConfig::default(),
            phase2: PhaseTwoConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Synthetic,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: SourceKind,
    /// Raw CSV path, required when `source` is `csv`.
    pub csv: Option<PathBuf>,
    /// Dataset schema JSON path, required when `source` is `csv`.
    pub schema: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { source: SourceKind::Synthetic, csv: None, schema: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub nodes: usize,
    pub edge_prob: f64,
    pub weight_low: f64,
    pub weight_high: f64,
    pub train_n: usize,
    pub test_normal_n: usize,
    pub test_anomaly_n: usize,
    pub calibration_n: usize,
    pub max_draw_factor: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let p = BenchmarkParams::default();
        SynthConfig {
            nodes: p.nodes,
            edge_prob: p.edge_prob,
            weight_low: p.weight_low,
            weight_high: p.weight_high,
            train_n: p.train_n,
            test_normal_n: p.test_normal_n,
            test_anomaly_n: p.test_anomaly_n,
            calibration_n: p.calibration_n,
            max_draw_factor: p.max_draw_factor,
        }
    }
}

impl SynthConfig {
    pub fn benchmark_params(&self) -> BenchmarkParams {
        BenchmarkParams {
            nodes: self.nodes,
            edge_prob: self.edge_prob,
            weight_low: self.weight_low,
            weight_high: self.weight_high,
            train_n: self.train_n,
            test_normal_n: self.test_normal_n,
            test_anomaly_n: self.test_anomaly_n,
            calibration_n: self.calibration_n,
            max_draw_factor: self.max_draw_factor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseOneConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub lambda_sparse: f64,
    pub weight_decay: f64,
    pub lr: f64,
    pub inner_steps: usize,
    pub max_rounds: usize,
    pub h_tol: f64,
    pub rho_max: f64,
    pub prune_eps: f64,
    /// Training rows the structure learner sees; 0 lifts the cap.
    pub sample_cap: usize,
    pub refit_steps: usize,
    pub refit_lr: f64,
}

impl Default for PhaseOneConfig {
    fn default() -> Self {
        let g = GaeConfig::default();
        let r = RefitConfig::default();
        PhaseOneConfig {
            embed_dim: g.embed_dim,
            hidden: g.hidden,
            lambda_sparse: g.lambda_sparse,
            lr: g.lr,
            inner_steps: g.inner_steps,
            max_rounds: g.max_rounds,
            h_tol: g.h_tol,
            rho_max: g.rho_max,
            prune_eps: g.prune_eps,
            sample_cap: g.sample_cap.unwrap_or(0),
            refit_steps: r.steps,
            refit_lr: r.lr,
        }
    }
}

impl PhaseOneConfig {
    pub fn gae_config(&self, seed: u64) -> GaeConfig {
        GaeConfig {
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            lambda_sparse: self.lambda_sparse,
            lr: self.lr,
            inner_steps: self.inner_steps,
            max_rounds: self.max_rounds,
            h_tol: self.h_tol,
            rho_max: self.rho_max,
            prune_eps: self.prune_eps,
            sample_cap: (self.sample_cap > 0).then_some(self.sample_cap),
            seed,
        }
    }

    pub fn refit_config(&self, seed: u64) -> RefitConfig {
        RefitConfig { steps: self.refit_steps, lr: self.refit_lr, seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseTwoConfig {
    pub hidden: usize,
    pub bottleneck: usize,
    pub batch: usize,
    pub epochs: usize,
    pub lr_pretrain: f64,
    pub finetune: bool,
    pub finetune_epochs: usize,
    pub lambda_fair: f64,
    pub lr_finetune: f64,
    pub disc_hidden: usize,
    pub disc_lr: f64,
}

impl Default for PhaseTwoConfig {
    fn default() -> Self {
        let d = DetectorConfig::default();
        let f = FinetuneConfig::default();
        PhaseTwoConfig {
            hidden: d.hidden,
            bottleneck: d.bottleneck,
            batch: d.batch,
            epochs: d.epochs,
            lr_pretrain: d.lr,
            finetune: true,
            finetune_epochs: f.epochs,
            lambda_fair: 1.0,
            lr_finetune: 1e-4,
            disc_hidden: f.disc_hidden,
            disc_lr: f.disc_lr,
        }
    }
}

impl PhaseTwoConfig {
    pub fn detector_config(&self, seed: u64) -> DetectorConfig {
        DetectorConfig {
            hidden: self.hidden,
            bottleneck: self.bottleneck,
            batch: self.batch,
            epochs: self.epochs,
            lr: self.lr_pretrain,
            seed,
        }
    }

    pub fn finetune_config(&self, seed: u64) -> FinetuneConfig {
        FinetuneConfig {
            epochs: self.finetune_epochs,
            batch: self.batch,
            disc_hidden: self.disc_hidden,
            disc_lr: self.disc_lr,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Headline threshold quantile.
    pub q: f64,
    /// Quantile ladder for the trade-off sweep.
    pub sweep: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { q: 0.95, sweep: SWEEP_QUANTILES.to_vec() }
    }
}

/// Flag overrides collected by the argument parser; `None` means the
/// flag was absent.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub runs: Option<u32>,
    pub no_finetune: bool,
    pub quantile: Option<f64>,
    pub sweep: Option<Vec<f64>>,
}

impl RunConfig {
    /// Resolves defaults, then the config file, then flag overrides, and
    /// validates the result.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, CliError> {
        let mut config = match file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    CliError::Config(format!("cannot read config {}: {e}", path.display()))
                })?;
                let flat: Map<String, Value> = serde_json::from_str(&text).map_err(|e| {
                    CliError::Config(format!("config {} is not a JSON object: {e}", path.display()))
                })?;
                let mut tree = serde_json::to_value(RunConfig::default()).expect("serializable");
                for (dotted, value) in flat {
                    insert_dotted(&mut tree, &dotted, value)?;
                }
                serde_json::from_value(tree)
                    .map_err(|e| CliError::Config(format!("bad config value: {e}")))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(out) = &overrides.out {
            config.out = out.clone();
        }
        if let Some(runs) = overrides.runs {
            config.runs = runs;
        }
        if overrides.no_finetune {
            config.phase2.finetune = false;
        }
        if let Some(q) = overrides.quantile {
            config.eval.q = q;
        }
        if let Some(sweep) = &overrides.sweep {
            config.eval.sweep = sweep.clone();
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.runs == 0 {
            return bad("runs must be at least 1".to_string());
        }
        if !(self.eval.q > 0.0 && self.eval.q < 1.0) {
            return bad(format!("eval.q must lie strictly inside (0, 1), got {}", self.eval.q));
        }
        if self.eval.sweep.is_empty() {
            return bad("eval.sweep must not be empty".to_string());
        }
        for &q in &self.eval.sweep {
            if !(q > 0.0 && q < 1.0) {
                return bad(format!("sweep quantile {q} must lie strictly inside (0, 1)"));
            }
        }
        if self.data.source == SourceKind::Csv {
            if self.data.csv.is_none() {
                return bad("data.csv is required when data.source is csv".to_string());
            }
            if self.data.schema.is_none() {
                return bad("data.schema is required when data.source is csv".to_string());
            }
        }
        if self.phase2.finetune && self.phase2.lambda_fair < 0.0 {
            return bad(format!("phase2.lambda_fair must be nonnegative, got {}", self.phase2.lambda_fair));
        }
        Ok(())
    }

    /// Hash of the experiment recipe. `seed`, `out`, and `runs` are
    /// zeroed first: artifacts record the seed separately, and neither
    /// the output location nor the repeat count changes the experiment.
    pub fn hash(&self) -> String {
        let mut recipe = self.clone();
        recipe.seed = 0;
        recipe.out = PathBuf::new();
        recipe.runs = 1;
        let canonical = serde_json::to_string(&recipe).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in &digest[..8] {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    /// Copy of the config pointed at one seed's subdirectory, used by
    /// multi-run pipelines.
    pub fn for_seed(&self, seed: u64) -> RunConfig {
        let mut config = self.clone();
        config.seed = seed;
        config.out = self.out.join(format!("seed-{seed}"));
        config.runs = 1;
        config
    }
}

/// Inserts `value` at the dot-separated path inside a JSON object tree.
fn insert_dotted(tree: &mut Value, dotted: &str, value: Value) -> Result<(), CliError> {
    let mut node = tree;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Config(format!("config key {dotted:?} has an empty segment")));
        }
        let map = node.as_object_mut().ok_or_else(|| {
            CliError::Config(format!("config key {dotted:?} descends into a non-object"))
        })?;
        if i + 1 == parts.len() {
            map.insert((*part).to_string(), value);
            return Ok(());
        }
        node = map.entry((*part).to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("split yields at least one part")
}
