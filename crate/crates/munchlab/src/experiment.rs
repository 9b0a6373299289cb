//! Run-directory orchestration: one JSON config describes a whole run, and
//! each subcommand body here reads and writes only the artifacts named by
//! that config (or by explicit flag overrides). The CLI binary is a thin
//! argv shim over these functions, so every behaviour stays testable
//! in-process.
//!
//! Artifact conventions under the run directory: the dataset bundle as one
//! JSON file, checkpoints as `.json`/`.bin` pairs under the checkpoint
//! directory, reports and traces under the report directory, and a manifest
//! mapping every written artifact to its SHA-256.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{build_pretraining_corpus, CorpusConfig, CorpusError};
use crate::evalsuite::{
    evaluate, write_report_json, write_report_tsv, EvalContext, EvalError, MetricsReport,
    Pipeline, ReportCell, RunMeta,
};
use crate::hashutil::sha256_file;
use crate::kbgen::{DatasetBundle, GenConfig, KbgenError, QuestionKind, Split};
use crate::munch::{
    answer_subquestions, calibrate_threshold, retrieval_gate, uncertainty_scores,
    write_density_tsv, write_traces, CalibrationReport, Decomposer, ForgetMemory, MunchError,
    PipelineConfig,
};
use crate::seqmodel::{
    fit, load_checkpoint, save_checkpoint, Model, ModelArch, ModelError, TrainConfig,
};
use crate::unlearner::{
    run_unlearning, EarlyStopConfig, UnlearnConfig, UnlearnError, UnlearnMethod,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing artifact: {what} not found at {path}; run `{produced_by}` first")]
    MissingArtifact { what: &'static str, path: PathBuf, produced_by: &'static str },
    #[error(
        "pipeline munch needs a calibrated threshold, but no calibration artifact \
         exists at {0}; run `calibrate` first"
    )]
    MissingTau(PathBuf),
    #[error(transparent)]
    Kbgen(#[from] KbgenError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Unlearn(#[from] UnlearnError),
    #[error(transparent)]
    Munch(#[from] MunchError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl ExperimentError {
    pub fn code(&self) -> &'static str {
        match self {
            ExperimentError::Config(_) => "experiment.config",
            ExperimentError::MissingArtifact { .. } => "experiment.missing_artifact",
            ExperimentError::MissingTau(_) => "experiment.missing_tau",
            ExperimentError::Kbgen(e) => e.code(),
            ExperimentError::Corpus(e) => e.code(),
            ExperimentError::Model(e) => e.code(),
            ExperimentError::Unlearn(e) => e.code(),
            ExperimentError::Munch(e) => e.code(),
            ExperimentError::Eval(e) => e.code(),
            ExperimentError::Io(_) => "experiment.io",
            ExperimentError::Json(_) => "experiment.json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
    pub manifest: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            dataset: PathBuf::from("run/dataset.json"),
            checkpoints: PathBuf::from("run/checkpoints"),
            reports: PathBuf::from("run/reports"),
            manifest: PathBuf::from("run/manifest.json"),
        }
    }
}

/// One config document drives every subcommand; flags override single
/// fields. Absent fields fall back to defaults, so `{}` is a valid config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub paths: PathsConfig,
    pub gen: GenConfig,
    pub arch: ModelArch,
    pub corpus: CorpusConfig,
    pub train: TrainConfig,
    pub unlearn: UnlearnConfig,
    pub pipeline: PipelineConfig,
    /// Forget fractions the sweep runs, each in (0, 1).
    pub sweep_fractions: Vec<f64>,
    /// Training seeds the sweep repeats and averages over; the dataset seed
    /// stays fixed so every seed sees the same facts.
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            paths: PathsConfig::default(),
            gen: GenConfig::default(),
            arch: ModelArch { embed_dim: 64, ffn_dim: 128, n_layers: 2, context_len: 64 },
            corpus: CorpusConfig::default(),
            // Desk-scale schedule: a 500-entity bundle memorizes in about
            // seven minutes on one core at these settings.
            train: TrainConfig { epochs: 60, lr: 2e-3, ..TrainConfig::default() },
            // Tuned so one shared schedule serves all three objectives:
            // gentle steps over more epochs forget deeply before collateral
            // damage accumulates, and the loose early-stop tolerance brakes
            // on collapse only (the retain-valid LM monitor triples long
            // before retain accuracy moves).
            unlearn: UnlearnConfig {
                alpha: 0.3,
                beta: 4.0,
                train: TrainConfig {
                    epochs: 6,
                    batch_size: 8,
                    lr: 4.5e-4,
                    ..TrainConfig::default()
                },
                early_stop: Some(EarlyStopConfig { rel_tolerance: 20.0, patience: 1 }),
                ..UnlearnConfig::default()
            },
            pipeline: PipelineConfig::default(),
            sweep_fractions: vec![0.01, 0.05, 0.10],
            seeds: vec![0, 1, 2],
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
        let bytes = fs::read(path).map_err(|e| {
            ExperimentError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        let cfg: ExperimentConfig = serde_json::from_slice(&bytes)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        for &f in &self.sweep_fractions {
            if !(f > 0.0 && f < 1.0) {
                return Err(ExperimentError::Config(format!(
                    "sweep fraction {f} outside (0, 1)"
                )));
            }
        }
        if self.seeds.is_empty() {
            return Err(ExperimentError::Config("seeds list is empty".into()));
        }
        Ok(())
    }

    /// Pins every random stream of the run to one seed: dataset, corpus
    /// shuffling, init/training, unlearning, and the sweep's seed list.
    pub fn apply_seed(&mut self, seed: u64) {
        self.gen.seed = seed;
        self.corpus.seed = seed;
        self.train.seed = seed;
        self.unlearn.train.seed = seed;
        self.seeds = vec![seed];
    }

    /// "ga+rt", "npo", ... : the method label reports carry.
    pub fn method_label(&self) -> String {
        let suffix = if self.unlearn.with_retain { "+rt" } else { "" };
        format!("{}{}", self.unlearn.method, suffix)
    }

    pub fn original_ckpt(&self) -> PathBuf {
        self.paths.checkpoints.join("original")
    }

    pub fn unlearned_ckpt(&self) -> PathBuf {
        self.paths.checkpoints.join(format!("unlearned-{}", self.method_label()))
    }

    pub fn calibration_file(&self) -> PathBuf {
        self.paths.reports.join("calibration.json")
    }

    pub fn density_file(&self) -> PathBuf {
        self.paths.reports.join("calibration-density.tsv")
    }

    pub fn report_base(&self, pipeline: Pipeline) -> PathBuf {
        self.paths.reports.join(format!("report-{}-{}", self.method_label(), pipeline))
    }
}

/// Artifact checksums for one run directory, keyed by path as configured.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifacts: BTreeMap<String, String>,
}

/// Merges the given files into the manifest, rehashing each.
fn record_artifacts(cfg: &ExperimentConfig, paths: &[&Path]) -> Result<(), ExperimentError> {
    let manifest_path = &cfg.paths.manifest;
    let mut manifest: RunManifest = match fs::read(manifest_path) {
        Ok(bytes) => serde_json::from_slice(&bytes)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => RunManifest::default(),
        Err(e) => return Err(e.into()),
    };
    for path in paths {
        let hash = sha256_file(path)?;
        manifest.artifacts.insert(path.display().to_string(), hash);
    }
    if let Some(parent) = manifest_path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    fs::write(manifest_path, bytes)?;
    Ok(())
}

fn create_parent(path: &Path) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn load_bundle(cfg: &ExperimentConfig) -> Result<DatasetBundle, ExperimentError> {
    let path = &cfg.paths.dataset;
    if !path.exists() {
        return Err(ExperimentError::MissingArtifact {
            what: "dataset bundle",
            path: path.clone(),
            produced_by: "gen-data",
        });
    }
    Ok(DatasetBundle::load(path)?)
}

fn load_model(
    cfg: &ExperimentConfig,
    base: &Path,
    what: &'static str,
    produced_by: &'static str,
) -> Result<Model, ExperimentError> {
    let _ = cfg;
    if !base.with_extension("json").exists() {
        return Err(ExperimentError::MissingArtifact {
            what,
            path: base.with_extension("json"),
            produced_by,
        });
    }
    Ok(load_checkpoint(base)?)
}

/// Generates the dataset bundle and writes it to `out` (default: the
/// configured dataset path). Byte-identical across repeated calls.
pub fn cmd_gen_data(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<PathBuf, ExperimentError> {
    let out = out.unwrap_or(&cfg.paths.dataset).to_path_buf();
    let bundle = DatasetBundle::generate(&cfg.gen)?;
    create_parent(&out)?;
    bundle.save(&out)?;
    record_artifacts(cfg, &[&out])?;
    Ok(out)
}

/// Rejection texts must be spellable by the model, so they join the corpus
/// vocabulary seed texts.
/// Extra vocabulary every run feeds the tokenizer: rejection templates must
/// tokenize without UNK both as DPO win targets and as pipeline output.
pub fn vocab_extras(cfg: &ExperimentConfig) -> Vec<&str> {
    let mut extras: Vec<&str> = cfg.unlearn.rejection_pool.iter().map(|s| s.as_str()).collect();
    extras.push(cfg.pipeline.rejection_text.as_str());
    extras
}

/// Pretrains the original model on the bundle's corpus and writes the
/// checkpoint pair to `out` (default: `<checkpoints>/original`).
pub fn cmd_train(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<PathBuf, ExperimentError> {
    let bundle = load_bundle(cfg)?;
    let corpus =
        build_pretraining_corpus(&bundle, &cfg.corpus, cfg.arch.context_len, &vocab_extras(cfg))?;
    let mut model = Model::init(cfg.arch, corpus.vocab, cfg.train.seed)?;
    let report = fit(&mut model, &corpus.examples, &cfg.train)?;
    let base = out.unwrap_or(&cfg.original_ckpt()).to_path_buf();
    save_checkpoint(&model, &base)?;
    let log_path = cfg.paths.reports.join("train-log.json");
    create_parent(&log_path)?;
    fs::write(&log_path, serde_json::to_vec_pretty(&report)?)?;
    record_artifacts(
        cfg,
        &[&base.with_extension("json"), &base.with_extension("bin"), &log_path],
    )?;
    Ok(base)
}

/// Serializable slice of an unlearning outcome, kept beside the checkpoint.
#[derive(Debug, Serialize, Deserialize)]
pub struct UnlearnLog {
    pub method: String,
    pub steps: u64,
    pub epochs_run: usize,
    pub early_stopped: bool,
    pub diverged_at: Option<u64>,
    pub monitor_history: Vec<f64>,
}

/// Runs the configured unlearning method from the original checkpoint and
/// writes the unlearned checkpoint pair (default:
/// `<checkpoints>/unlearned-<method>`).
pub fn cmd_unlearn(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<PathBuf, ExperimentError> {
    let bundle = load_bundle(cfg)?;
    let original = load_model(cfg, &cfg.original_ckpt(), "original checkpoint", "train")?;
    let mut stderr = std::io::stderr();
    let log: Option<&mut dyn Write> =
        if cfg.unlearn.train.verbose { Some(&mut stderr) } else { None };
    let outcome = run_unlearning(&original, &bundle, &cfg.unlearn, log)?;
    let base = out.unwrap_or(&cfg.unlearned_ckpt()).to_path_buf();
    save_checkpoint(&outcome.model, &base)?;
    let log_path = cfg.paths.reports.join(format!("unlearn-{}.json", cfg.method_label()));
    create_parent(&log_path)?;
    let log = UnlearnLog {
        method: cfg.method_label(),
        steps: outcome.steps,
        epochs_run: outcome.epochs_run,
        early_stopped: outcome.early_stopped,
        diverged_at: outcome.diverged_at,
        monitor_history: outcome.monitor_history,
    };
    fs::write(&log_path, serde_json::to_vec_pretty(&log)?)?;
    record_artifacts(
        cfg,
        &[&base.with_extension("json"), &base.with_extension("bin"), &log_path],
    )?;
    Ok(base)
}

/// Per-question rejection statistic, the quantity the pipeline thresholds:
/// the worst (highest) hop uncertainty, or infinity when any resolved
/// subquestion hits the forget memory. A gate hit short-circuits scoring
/// and rejects at every threshold, which is exactly what an infinite score
/// does, so calibrating on this statistic matches deployed behavior.
pub fn collect_max_scores(
    original: &Model,
    scorer: &Model,
    items: &[&crate::kbgen::QaItem],
    decomposer: &mut Decomposer,
    memory: &ForgetMemory,
    pcfg: &PipelineConfig,
) -> Result<Vec<f64>, ExperimentError> {
    let mut maxima = Vec::with_capacity(items.len());
    for item in items {
        let dq = decomposer.decompose(item)?;
        let answers = answer_subquestions(original, &dq, pcfg.max_answer_tokens)?;
        let texts: Vec<String> = answers.iter().map(|a| a.generated_text.clone()).collect();
        let resolved = crate::corpus::resolve_subquestions(&dq.subquestions, &texts);
        if resolved.iter().any(|q| retrieval_gate(q, memory).1) {
            maxima.push(f64::INFINITY);
            continue;
        }
        let scores =
            uncertainty_scores(scorer, &dq, &answers, pcfg.score_norm, pcfg.max_answer_tokens)?;
        maxima.push(scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)));
    }
    Ok(maxima)
}

/// Calibrates the rejection threshold on forget versus retain-validation
/// multi-hop questions and writes the calibration report (default:
/// `<reports>/calibration.json`) plus the density TSV beside it.
pub fn cmd_calibrate(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<PathBuf, ExperimentError> {
    let bundle = load_bundle(cfg)?;
    let original = load_model(cfg, &cfg.original_ckpt(), "original checkpoint", "train")?;
    let unlearned = load_model(cfg, &cfg.unlearned_ckpt(), "unlearned checkpoint", "unlearn")?;
    let memory = ForgetMemory::from_bundle(&bundle, cfg.pipeline.similarity_threshold);
    let mut decomposer = Decomposer::from_mode(&cfg.pipeline.decomposer)?;
    let forget_items = bundle.split_questions(Split::Forget, QuestionKind::Multi);
    let retain_items = bundle.split_questions(Split::RetainValid, QuestionKind::Multi);
    let forget_scores = collect_max_scores(
        &original,
        &unlearned,
        &forget_items,
        &mut decomposer,
        &memory,
        &cfg.pipeline,
    )?;
    let retain_scores = collect_max_scores(
        &original,
        &unlearned,
        &retain_items,
        &mut decomposer,
        &memory,
        &cfg.pipeline,
    )?;
    let report = calibrate_threshold(&forget_scores, &retain_scores)?;

    let out = out.unwrap_or(&cfg.calibration_file()).to_path_buf();
    create_parent(&out)?;
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    fs::write(&out, bytes)?;
    let density = cfg.density_file();
    create_parent(&density)?;
    let mut tsv = Vec::new();
    write_density_tsv(&report, &mut tsv)?;
    fs::write(&density, tsv)?;
    record_artifacts(cfg, &[&out, &density])?;
    Ok(out)
}

fn read_tau(path: &Path) -> Result<CalibrationReport, ExperimentError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(ExperimentError::MissingTau(path.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    Ok(serde_json::from_slice(&bytes)?)
}

/// Runs the full rejection pipeline over every evaluation multi-hop question
/// and writes line-JSON decision traces (default:
/// `<reports>/traces-munch.jsonl`).
pub fn cmd_run_munch(
    cfg: &ExperimentConfig,
    tau_file: Option<&Path>,
    out: Option<&Path>,
) -> Result<PathBuf, ExperimentError> {
    let bundle = load_bundle(cfg)?;
    let original = load_model(cfg, &cfg.original_ckpt(), "original checkpoint", "train")?;
    let unlearned = load_model(cfg, &cfg.unlearned_ckpt(), "unlearned checkpoint", "unlearn")?;
    let tau = read_tau(tau_file.unwrap_or(&cfg.calibration_file()))?.tau;
    let memory = ForgetMemory::from_bundle(&bundle, cfg.pipeline.similarity_threshold);
    let mut decomposer = Decomposer::from_mode(&cfg.pipeline.decomposer)?;
    let mut items = bundle.split_questions(Split::Forget, QuestionKind::Multi);
    items.extend(bundle.split_questions(Split::RetainTest, QuestionKind::Multi));
    let traces: Vec<_> = items
        .iter()
        .map(|item| {
            crate::munch::run_munch(
                &original,
                &unlearned,
                item,
                &mut decomposer,
                &memory,
                tau,
                &cfg.pipeline,
            )
        })
        .collect::<Result<_, _>>()?;
    let out = out.unwrap_or(&cfg.paths.reports.join("traces-munch.jsonl")).to_path_buf();
    create_parent(&out)?;
    let mut bytes = Vec::new();
    write_traces(&traces, &mut bytes)?;
    fs::write(&out, bytes)?;
    record_artifacts(cfg, &[&out])?;
    Ok(out)
}

/// Evaluates the unlearned checkpoint under the given pipeline and writes
/// the report TSV, its JSON mirror, and (for pipelines) the decision traces.
/// Returns the TSV path.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    pipeline: Pipeline,
    tau_file: Option<&Path>,
    out: Option<&Path>,
) -> Result<PathBuf, ExperimentError> {
    let tau = match pipeline {
        Pipeline::Munch => Some(read_tau(tau_file.unwrap_or(&cfg.calibration_file()))?.tau),
        _ => None,
    };
    let bundle = load_bundle(cfg)?;
    let original = load_model(cfg, &cfg.original_ckpt(), "original checkpoint", "train")?;
    let unlearned = load_model(cfg, &cfg.unlearned_ckpt(), "unlearned checkpoint", "unlearn")?;
    let memory = ForgetMemory::from_bundle(&bundle, cfg.pipeline.similarity_threshold);
    let ctx = EvalContext {
        bundle: &bundle,
        original: &original,
        unlearned: &unlearned,
        memory: &memory,
        pipeline_cfg: &cfg.pipeline,
    };
    let meta = RunMeta {
        method: cfg.method_label(),
        forget_fraction: cfg.gen.forget_fraction,
        seed: cfg.train.seed,
    };
    let outcome = evaluate(&ctx, pipeline, tau, &meta)?;

    let base = out.unwrap_or(&cfg.report_base(pipeline)).to_path_buf();
    let tsv_path = base.with_extension("tsv");
    let json_path = base.with_extension("json");
    create_parent(&tsv_path)?;
    let mut tsv = Vec::new();
    write_report_tsv(&outcome.report, &mut tsv)?;
    fs::write(&tsv_path, tsv)?;
    let mut json = Vec::new();
    write_report_json(&outcome.report, &mut json)?;
    fs::write(&json_path, json)?;
    let mut written: Vec<PathBuf> = vec![tsv_path.clone(), json_path];
    if !outcome.traces.is_empty() {
        let traces_path = base.with_extension("traces.jsonl");
        let mut bytes = Vec::new();
        write_traces(&outcome.traces, &mut bytes)?;
        fs::write(&traces_path, bytes)?;
        written.push(traces_path);
    }
    let refs: Vec<&Path> = written.iter().map(|p| p.as_path()).collect();
    record_artifacts(cfg, &refs)?;
    Ok(tsv_path)
}

fn permille(fraction: f64) -> u64 {
    (fraction * 1000.0).round() as u64
}

fn sweep_report_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.paths.reports.join("sweep")
}

/// One aggregate row: a report cell averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub forget_fraction: f64,
    pub split: String,
    pub hops: String,
    pub pa: f64,
    pub rouge_l: f64,
    pub lm: f64,
    pub n_seeds: usize,
}

/// Averages per-seed sweep reports cell by cell. Rows come out sorted by
/// method, fraction, then cell order.
pub fn aggregate_reports(reports: &[MetricsReport]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, u64), Vec<&MetricsReport>> = BTreeMap::new();
    for report in reports {
        groups
            .entry((report.method.clone(), permille(report.forget_fraction)))
            .or_default()
            .push(report);
    }
    let mut rows = Vec::new();
    for ((method, _), group) in groups {
        let n = group.len();
        for (i, cell) in group[0].cells.iter().enumerate() {
            let mean = |f: fn(&ReportCell) -> f64| {
                group.iter().map(|r| f(&r.cells[i])).sum::<f64>() / n as f64
            };
            rows.push(AggregateRow {
                method: method.clone(),
                forget_fraction: group[0].forget_fraction,
                split: cell.split.clone(),
                hops: cell.hops.clone(),
                pa: (mean(|c| c.pa) * 10.0).round() / 10.0,
                rouge_l: (mean(|c| c.rouge_l) * 10.0).round() / 10.0,
                lm: (mean(|c| c.lm) * 1e4).round() / 1e4,
                n_seeds: n,
            });
        }
    }
    rows
}

pub fn write_aggregate_tsv(rows: &[AggregateRow], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "method\tforget_fraction\tsplit\thops\tpa\trouge_l\tlm\tn_seeds")?;
    for r in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.1}\t{:.1}\t{:.4}\t{}",
            r.method, r.forget_fraction, r.split, r.hops, r.pa, r.rouge_l, r.lm, r.n_seeds
        )?;
    }
    Ok(())
}

/// Rebuilds the aggregate TSV (and JSON mirror) from the per-seed report
/// JSONs under `<reports>/sweep/`. Returns the TSV path.
pub fn cmd_report(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<PathBuf, ExperimentError> {
    let dir = sweep_report_dir(cfg);
    let mut report_files = Vec::new();
    if dir.exists() {
        for seed_entry in fs::read_dir(&dir)? {
            let seed_dir = seed_entry?.path();
            if !seed_dir.is_dir() {
                continue;
            }
            for entry in fs::read_dir(&seed_dir)? {
                let path = entry?.path();
                if path.extension().is_some_and(|e| e == "json") {
                    report_files.push(path);
                }
            }
        }
    }
    if report_files.is_empty() {
        return Err(ExperimentError::MissingArtifact {
            what: "per-seed sweep reports",
            path: dir,
            produced_by: "sweep",
        });
    }
    report_files.sort();
    let reports: Vec<MetricsReport> = report_files
        .iter()
        .map(|p| Ok(serde_json::from_slice(&fs::read(p)?)?))
        .collect::<Result<_, ExperimentError>>()?;
    let rows = aggregate_reports(&reports);

    let tsv_path = out.unwrap_or(&dir.join("aggregate.tsv")).to_path_buf();
    create_parent(&tsv_path)?;
    let mut tsv = Vec::new();
    write_aggregate_tsv(&rows, &mut tsv)?;
    fs::write(&tsv_path, tsv)?;
    let json_path = tsv_path.with_extension("json");
    let mut bytes = serde_json::to_vec_pretty(&rows)?;
    bytes.push(b'\n');
    fs::write(&json_path, bytes)?;
    record_artifacts(cfg, &[&tsv_path, &json_path])?;
    Ok(tsv_path)
}

/// The full forget-fraction x method matrix: pretrains once per seed,
/// regenerates the bundle per fraction (same facts, different split
/// labels), unlearns with each method with the retain term on, evaluates
/// raw, and finally averages the per-seed reports into the aggregate TSV.
/// One original per seed is sound because the corpus trains every question
/// regardless of split, so the pretrained model is identical across
/// fractions; every fraction then unlearns from the same base model.
/// Per-seed artifacts stay on disk under seed- and fraction-tagged paths.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<PathBuf, ExperimentError> {
    let methods = [UnlearnMethod::Ga, UnlearnMethod::Dpo, UnlearnMethod::Npo];
    for &seed in &cfg.seeds {
        let mut run_cfg = cfg.clone();
        run_cfg.train.seed = seed;
        run_cfg.unlearn.train.seed = seed;

        let base_bundle = DatasetBundle::generate(&run_cfg.gen)?;
        let corpus = build_pretraining_corpus(
            &base_bundle,
            &run_cfg.corpus,
            run_cfg.arch.context_len,
            &vocab_extras(&run_cfg),
        )?;
        let mut model = Model::init(run_cfg.arch, corpus.vocab, seed)?;
        fit(&mut model, &corpus.examples, &run_cfg.train)?;
        let seed_dir = cfg.paths.checkpoints.join(format!("sweep/seed{seed}"));
        save_checkpoint(&model, &seed_dir.join("original"))?;

        for &fraction in &cfg.sweep_fractions {
            run_cfg.gen.forget_fraction = fraction;
            let tag = format!("f{:03}", permille(fraction));

            let bundle = DatasetBundle::generate(&run_cfg.gen)?;
            let dataset_path = cfg.paths.dataset.with_file_name(format!("dataset-{tag}.json"));
            create_parent(&dataset_path)?;
            bundle.save(&dataset_path)?;

            let memory = ForgetMemory::from_bundle(&bundle, cfg.pipeline.similarity_threshold);
            for method in methods {
                run_cfg.unlearn.method = method;
                run_cfg.unlearn.with_retain = true;
                let outcome = run_unlearning(&model, &bundle, &run_cfg.unlearn, None)?;
                let label = run_cfg.method_label();
                save_checkpoint(
                    &outcome.model,
                    &seed_dir.join(format!("{tag}/unlearned-{label}")),
                )?;

                let ctx = EvalContext {
                    bundle: &bundle,
                    original: &model,
                    unlearned: &outcome.model,
                    memory: &memory,
                    pipeline_cfg: &run_cfg.pipeline,
                };
                let meta = RunMeta { method: label.clone(), forget_fraction: fraction, seed };
                let result = evaluate(&ctx, Pipeline::Raw, None, &meta)?;
                let report_path =
                    sweep_report_dir(cfg).join(format!("seed{seed}/{tag}-{label}.json"));
                create_parent(&report_path)?;
                let mut bytes = Vec::new();
                write_report_json(&result.report, &mut bytes)?;
                fs::write(&report_path, bytes)?;
                record_artifacts(cfg, &[&dataset_path, &report_path])?;
            }
        }
    }
    cmd_report(cfg, out)
}
