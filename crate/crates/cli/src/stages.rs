//! The pipeline stages behind each subcommand.
//!
//! Stages communicate only through files under the run directory, so
//! each one can be rerun independently: synth writes the benchmark,
//! discover fits the causal model, cf generates counterfactuals from it,
//! train builds the detector, eval produces the report. The pipeline
//! command chains them, writes a manifest, and with `runs > 1` repeats
//! the whole chain per seed and aggregates the reports.

use std::fs;
use std::io::Write;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use cfad_core::counterfactual::{generate_counterfactual_dataset, pair_datasets, Provenance};
use cfad_core::datasets::{load_csv, make_splits, DatasetSchema};
use cfad_core::detector::{
    finetune_adversarial, fit_threshold, pretrain, DetectorParams, DiscriminatorParams, Threshold,
};
use cfad_core::eval::{assemble_report, EvalReport, SweepRow};
use cfad_core::numerics::{SeededRng, Stream};
use cfad_core::scm::{build_benchmark, BenchmarkParams, DagSpec, Dataset, LabelRule, ScmError};
use cfad_core::structure_learning::{scm_estimate, train_gae, train_refit_decoder, ScmEstimate};

use crate::artifacts::{read_dataset, read_json, write_dataset, write_json, Manifest, OutDirs, StageMeta};
use crate::config::{RunConfig, SourceKind};
use crate::CliError;

/// Sidecar describing how the synthetic benchmark was generated.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSidecar {
    pub params: BenchmarkParams,
    pub spec: DagSpec,
    pub rule: LabelRule,
}

/// Phase One output: the pruned causal model plus convergence evidence.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscoverArtifact {
    pub estimate: ScmEstimate,
    pub h_final: f64,
    pub rounds: usize,
}

/// Phase Two output: the detector, its adversary when fine-tuned, and
/// the serving threshold.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectorArtifact {
    pub detector: DetectorParams,
    pub discriminator: Option<DiscriminatorParams>,
    pub threshold: Threshold,
    pub finetuned: bool,
}

/// Mean report over a multi-seed pipeline run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: u32,
    pub seeds: Vec<u64>,
    pub auc_pr: f64,
    pub auc_roc: f64,
    pub macro_f1: f64,
    pub changing_ratio: f64,
    pub sweep: Vec<SweepRow>,
    pub per_seed: Vec<PerSeedSummary>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerSeedSummary {
    pub seed: u64,
    pub auc_pr: f64,
    pub auc_roc: f64,
    pub macro_f1: f64,
    pub changing_ratio: f64,
}

/// Generates the synthetic benchmark and writes its four CSVs plus the
/// generation sidecar.
pub fn cmd_synth(config: &RunConfig) -> Result<(), CliError> {
    if config.data.source != SourceKind::Synthetic {
        return Err(CliError::Config(
            "synth requires data.source = synthetic".to_string(),
        ));
    }
    let dirs = OutDirs::new(&config.out);
    let hash = config.hash();
    let meta = StageMeta::new(config, &hash, "synth");
    let bench = build_benchmark(&config.synth.benchmark_params(), config.seed).map_err(map_scm)?;

    let identity_train: Vec<usize> = (0..bench.train.len()).collect();
    let identity_test: Vec<usize> = (0..bench.test.len()).collect();
    write_dataset(&dirs.synth_train(), meta, &bench.train, None)?;
    write_dataset(&dirs.synth_test(), meta, &bench.test, None)?;
    write_dataset(&dirs.synth_train_cf(), meta, &bench.train_cf, Some(&identity_train))?;
    write_dataset(&dirs.synth_test_cf(), meta, &bench.test_cf, Some(&identity_test))?;
    let sidecar = SynthSidecar {
        params: config.synth.benchmark_params(),
        spec: bench.spec,
        rule: bench.rule,
    };
    write_json(&dirs.synth_spec(), meta, &sidecar)?;
    info!("synth: {} train, {} test rows", bench.train.len(), bench.test.len());
    Ok(())
}

/// Learns the structural causal model from the training split.
pub fn cmd_discover(config: &RunConfig) -> Result<(), CliError> {
    let dirs = OutDirs::new(&config.out);
    let data = materialize(config, &dirs)?;
    let gae_config = config.phase1.gae_config(config.seed);
    let gae = train_gae(&data.train, &gae_config)
        .map_err(|e| CliError::Runtime(format!("structure learning failed: {e}")))?;
    let refit = train_refit_decoder(
        &data.train,
        &gae,
        &config.phase1.refit_config(config.seed),
        gae_config.sample_cap,
    )
    .map_err(|e| CliError::Runtime(format!("decoder refit failed: {e}")))?;
    let artifact = DiscoverArtifact {
        h_final: gae.h_final,
        rounds: gae.rounds,
        estimate: scm_estimate(&gae, refit, config.phase1.prune_eps),
    };
    let hash = config.hash();
    write_json(&dirs.estimate(), StageMeta::new(config, &hash, "discover"), &artifact)?;
    info!("discover: h_final {:.3e} after {} rounds", artifact.h_final, artifact.rounds);
    Ok(())
}

/// Generates counterfactuals for both splits from the learned model.
pub fn cmd_cf(config: &RunConfig) -> Result<(), CliError> {
    let dirs = OutDirs::new(&config.out);
    let data = materialize(config, &dirs)?;
    let artifact: DiscoverArtifact = read_json(&dirs.estimate())?.payload;
    let hash = config.hash();
    let meta = StageMeta::new(config, &hash, "cf");
    for (split, name, path) in [
        (&data.train, "train", dirs.cf_train()),
        (&data.test, "test", dirs.cf_test()),
    ] {
        let pairs = generate_counterfactual_dataset(&artifact.estimate, split)
            .map_err(|e| CliError::Runtime(format!("counterfactual generation failed: {e}")))?;
        let samples = pairs.into_iter().map(|p| p.counterfactual).collect();
        let cf = Dataset::new(samples, split.m());
        let identity: Vec<usize> = (0..cf.len()).collect();
        write_dataset(&path, meta, &cf, Some(&identity))?;
        info!("cf: wrote {} {name} counterfactuals", split.len());
    }
    Ok(())
}

/// Pretrains the detector and, unless disabled, fine-tunes it against
/// the discriminator using the generated training counterfactuals.
pub fn cmd_train(config: &RunConfig) -> Result<(), CliError> {
    let dirs = OutDirs::new(&config.out);
    let data = materialize(config, &dirs)?;
    let mut detector = pretrain(&data.train, &config.phase2.detector_config(config.seed))
        .map_err(|e| CliError::Runtime(format!("detector pretraining failed: {e}")))?;
    let mut discriminator = None;
    if config.phase2.finetune {
        let cf_train = read_dataset(&dirs.cf_train())?;
        let pairs = pair_datasets(&data.train, &cf_train, Provenance::Estimated)
            .map_err(|e| CliError::Runtime(format!("training counterfactuals misaligned: {e}")))?;
        let (tuned, disc) = finetune_adversarial(
            &detector,
            &data.train,
            &pairs,
            config.phase2.lambda_fair,
            config.phase2.lr_finetune,
            &config.phase2.finetune_config(config.seed),
        )
        .map_err(|e| CliError::Runtime(format!("adversarial fine-tuning failed: {e}")))?;
        detector = tuned;
        discriminator = Some(disc);
    }
    let threshold = fit_threshold(&detector, &data.train, config.eval.q)
        .map_err(|e| CliError::Runtime(format!("threshold fitting failed: {e}")))?;
    let artifact = DetectorArtifact {
        detector,
        discriminator,
        threshold,
        finetuned: config.phase2.finetune,
    };
    let hash = config.hash();
    write_json(&dirs.detector(), StageMeta::new(config, &hash, "train"), &artifact)?;
    info!("train: threshold tau {:.4} at q {}", artifact.threshold.tau, artifact.threshold.q);
    Ok(())
}

/// Scores the test split and writes the report plus its CSV views. The
/// fairness reference is the ground-truth counterfactual file on
/// synthetic data and the generated one on real data.
pub fn cmd_eval(config: &RunConfig) -> Result<(), CliError> {
    let dirs = OutDirs::new(&config.out);
    let data = materialize(config, &dirs)?;
    let artifact: DetectorArtifact = read_json(&dirs.detector())?.payload;
    let (cf_path, provenance) = match config.data.source {
        SourceKind::Synthetic => (dirs.synth_test_cf(), Provenance::GroundTruth),
        SourceKind::Csv => (dirs.cf_test(), Provenance::Estimated),
    };
    let cf_test = read_dataset(&cf_path)?;
    let pairs = pair_datasets(&data.test, &cf_test, provenance)
        .map_err(|e| CliError::Runtime(format!("test counterfactuals misaligned: {e}")))?;
    let hash = config.hash();
    let report = assemble_report(
        &artifact.detector,
        &data.train,
        &data.test,
        &pairs,
        config.eval.q,
        &config.eval.sweep,
        config.seed,
        &hash,
    )
    .map_err(|e| CliError::Runtime(format!("evaluation failed: {e}")))?;

    let meta = StageMeta::new(config, &hash, "eval");
    write_json(&dirs.report(), meta, &report)?;
    write_summary_csv(&dirs.summary_csv(), meta, &report)?;
    write_sweep_csv(&dirs.sweep_csv(), meta, &report.sweep)?;
    write_scores_csv(&dirs.scores_csv(), meta, &report)?;
    info!(
        "eval: macro_f1 {:.3}, changing ratio {:.3}, auc_roc {:.3}",
        report.macro_f1, report.changing_ratio, report.auc_roc
    );
    Ok(())
}

/// Runs every stage in order and writes the manifest. With `runs > 1`
/// the chain repeats for seeds `0..runs` in per-seed subdirectories and
/// a mean-aggregated report lands at the root.
pub fn cmd_pipeline(config: &RunConfig) -> Result<(), CliError> {
    if config.runs == 1 {
        return pipeline_once(config);
    }
    let seeds: Vec<u64> = (0..u64::from(config.runs)).collect();
    for &seed in &seeds {
        pipeline_once(&config.for_seed(seed))?;
    }
    aggregate(config, &seeds)
}

fn pipeline_once(config: &RunConfig) -> Result<(), CliError> {
    let dirs = OutDirs::new(&config.out);
    let mut manifest = Manifest::new(config);
    let synthetic = config.data.source == SourceKind::Synthetic;
    if synthetic {
        cmd_synth(config)?;
        for path in [
            dirs.synth_train(),
            dirs.synth_test(),
            dirs.synth_train_cf(),
            dirs.synth_test_cf(),
            dirs.synth_spec(),
        ] {
            manifest.record("synth", &path);
        }
    }
    // The vanilla-autoencoder baseline on synthetic data needs no causal
    // model: fine-tuning is off and the fairness reference is the
    // ground-truth counterfactual file. Real data always needs Phase One
    // because generated counterfactuals are its only reference.
    if config.phase2.finetune || !synthetic {
        cmd_discover(config)?;
        manifest.record("discover", &dirs.estimate());
        cmd_cf(config)?;
        manifest.record("cf", &dirs.cf_train());
        manifest.record("cf", &dirs.cf_test());
    }
    cmd_train(config)?;
    manifest.record("train", &dirs.detector());
    cmd_eval(config)?;
    for path in [dirs.report(), dirs.summary_csv(), dirs.sweep_csv(), dirs.scores_csv()] {
        manifest.record("eval", &path);
    }
    let hash = config.hash();
    write_json(&dirs.manifest(), StageMeta::new(config, &hash, "pipeline"), &manifest)?;
    Ok(())
}

fn aggregate(config: &RunConfig, seeds: &[u64]) -> Result<(), CliError> {
    let reports: Vec<EvalReport> = seeds
        .iter()
        .map(|&seed| {
            let dirs = OutDirs::new(&config.for_seed(seed).out);
            Ok(read_json::<EvalReport>(&dirs.report())?.payload)
        })
        .collect::<Result<_, CliError>>()?;
    let payload = aggregate_reports(&reports, config.runs)?;

    let hash = config.hash();
    let dirs = OutDirs::new(&config.out);
    write_json(&dirs.aggregate(), StageMeta::new(config, &hash, "aggregate"), &payload)?;

    let mut manifest = Manifest::new(config);
    for &seed in seeds {
        manifest.record("pipeline", &OutDirs::new(&config.for_seed(seed).out).manifest());
    }
    manifest.record("aggregate", &dirs.aggregate());
    write_json(&dirs.manifest(), StageMeta::new(config, &hash, "pipeline"), &manifest)?;
    Ok(())
}

/// Means of the headline metrics and of each sweep rung across reports.
pub fn aggregate_reports(reports: &[EvalReport], runs: u32) -> Result<AggregateReport, CliError> {
    let first = reports
        .first()
        .ok_or_else(|| CliError::Runtime("no reports to aggregate".to_string()))?;
    let n = reports.len() as f64;
    for report in reports {
        let quantiles = |r: &EvalReport| r.sweep.iter().map(|row| row.q).collect::<Vec<_>>();
        if quantiles(report) != quantiles(first) {
            return Err(CliError::Runtime(
                "seed reports disagree on sweep quantiles, cannot aggregate".to_string(),
            ));
        }
    }
    let mean = |take: &dyn Fn(&EvalReport) -> f64| reports.iter().map(take).sum::<f64>() / n;
    let sweep = (0..first.sweep.len())
        .map(|i| SweepRow {
            q: first.sweep[i].q,
            tau: reports.iter().map(|r| r.sweep[i].tau).sum::<f64>() / n,
            macro_f1: reports.iter().map(|r| r.sweep[i].macro_f1).sum::<f64>() / n,
            changing_ratio: reports.iter().map(|r| r.sweep[i].changing_ratio).sum::<f64>() / n,
        })
        .collect();
    Ok(AggregateReport {
        runs,
        seeds: reports.iter().map(|r| r.seed).collect(),
        auc_pr: mean(&|r| r.auc_pr),
        auc_roc: mean(&|r| r.auc_roc),
        macro_f1: mean(&|r| r.macro_f1),
        changing_ratio: mean(&|r| r.changing_ratio),
        sweep,
        per_seed: reports
            .iter()
            .map(|r| PerSeedSummary {
                seed: r.seed,
                auc_pr: r.auc_pr,
                auc_roc: r.auc_roc,
                macro_f1: r.macro_f1,
                changing_ratio: r.changing_ratio,
            })
            .collect(),
    })
}

struct StageData {
    train: Dataset,
    test: Dataset,
}

/// Produces the train/test splits a stage works on. Synthetic runs read
/// the benchmark files; CSV runs re-ingest the raw file, which is
/// deterministic under the seed, so stages stay independent without an
/// extra ingestion artifact.
fn materialize(config: &RunConfig, dirs: &OutDirs) -> Result<StageData, CliError> {
    match config.data.source {
        SourceKind::Synthetic => Ok(StageData {
            train: read_dataset(&dirs.synth_train())?,
            test: read_dataset(&dirs.synth_test())?,
        }),
        SourceKind::Csv => {
            let schema_path = config.data.schema.as_deref().expect("validated config");
            let csv_path = config.data.csv.as_deref().expect("validated config");
            let schema = DatasetSchema::from_path(schema_path)
                .map_err(|e| CliError::Config(format!("schema {}: {e}", schema_path.display())))?;
            let table = load_csv(csv_path, &schema)
                .map_err(|e| CliError::Config(format!("csv {}: {e}", csv_path.display())))?;
            let mut rng = SeededRng::new(config.seed, Stream::Split);
            let splits = make_splits(&table, &schema, &mut rng)
                .map_err(|e| CliError::Config(format!("splitting failed: {e}")))?;
            Ok(StageData { train: splits.train, test: splits.test })
        }
    }
}

fn map_scm(error: ScmError) -> CliError {
    match error {
        ScmError::InvalidParams(_) => CliError::Config(error.to_string()),
        other => CliError::Runtime(format!("benchmark generation failed: {other}")),
    }
}

fn write_csv_lines(path: &Path, meta: StageMeta, header: &str, lines: &[String]) -> Result<(), CliError> {
    let render = |e: std::io::Error| CliError::Runtime(format!("cannot write {}: {e}", path.display()));
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(render)?;
    }
    let mut file = fs::File::create(path).map_err(render)?;
    writeln!(
        file,
        "# seed={} config_hash={} stage={} artifact_version={}",
        meta.seed, meta.config_hash, meta.stage, crate::artifacts::ARTIFACT_VERSION
    )
    .map_err(render)?;
    writeln!(file, "{header}").map_err(render)?;
    for line in lines {
        writeln!(file, "{line}").map_err(render)?;
    }
    Ok(())
}

fn write_summary_csv(path: &Path, meta: StageMeta, report: &EvalReport) -> Result<(), CliError> {
    let lines = vec![
        format!("auc_pr,{}", report.auc_pr),
        format!("auc_roc,{}", report.auc_roc),
        format!("macro_f1,{}", report.macro_f1),
        format!("changing_ratio,{}", report.changing_ratio),
        format!("q,{}", report.q),
        format!("tau,{}", report.tau),
    ];
    write_csv_lines(path, meta, "metric,value", &lines)
}

fn write_sweep_csv(path: &Path, meta: StageMeta, rows: &[SweepRow]) -> Result<(), CliError> {
    let lines: Vec<String> = rows
        .iter()
        .map(|r| format!("{},{},{},{}", r.q, r.tau, r.macro_f1, r.changing_ratio))
        .collect();
    write_csv_lines(path, meta, "q,tau,macro_f1,changing_ratio", &lines)
}

fn write_scores_csv(path: &Path, meta: StageMeta, report: &EvalReport) -> Result<(), CliError> {
    let lines: Vec<String> = report
        .scores
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.sample_id, r.group, r.score, r.score_cf, r.pred, r.pred_cf
            )
        })
        .collect();
    write_csv_lines(path, meta, "sample_id,group,score,score_cf,pred,pred_cf", &lines)
}
