//! Experiment orchestration: config file, run manifest, and the five
//! pipeline stages (synth/ingest → features → per-model training → report).
//!
//! Every stage reads its inputs from the artifacts of the previous stage and
//! writes its own under the run directory, so stages can be re-run
//! individually and the whole tree is reproducible byte-for-byte from
//! `(config, master seed)`. Stage seeds are derived from the master seed by
//! hashing stable stage names; nothing draws from a shared mutable stream.
//! The one deliberately non-deterministic field is the manifest's creation
//! timestamp.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{
    self, CorpusError, Dataset, Provenance, SurrogateParams, SystemClass,
};
use crate::features::{self, FeaturePipeline, FeaturesError};
use crate::metrics::{self, BootstrapCi, EvalReport, MetricKind, MetricsError};
use crate::qkernel::{self, FeatureMapSpec, QkernelError};
use crate::qnn::{self, AnsatzSpec, QnnError, TrainControl};
use crate::seeds;
use crate::spectra::{broaden, spectral_difference, ExcitationSpectrum, SpectraError};
use crate::svm::{GammaSpec, KernelSpec, SvmError, SvmParams};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("output directory {0} already exists (pass --force to overwrite)")]
    OutDirExists(PathBuf),
    #[error("missing artifact {0} (run the upstream stage first)")]
    MissingArtifact(PathBuf),
    #[error("this command needs the {expected} dataset source")]
    WrongSource { expected: &'static str },
    #[error("no trained models found under the run directory")]
    NothingTrained,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    Features(#[from] FeaturesError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Kernel(#[from] QkernelError),
    #[error(transparent)]
    Qnn(#[from] QnnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot parse config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("JSON (de)serialization failed: {0}")]
    Serde(#[from] serde_json::Error),
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Surrogate,
    Ingest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub source: SourceKind,
    /// Descriptor CSV to read when `source = "ingest"`.
    pub ingest_path: Option<PathBuf>,
    /// Broadening widths; the first is used for the model dataset, the rest
    /// only for the exported profile tables.
    pub sigmas: Vec<f64>,
    pub surrogate: SurrogateParams,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            source: SourceKind::Surrogate,
            ingest_path: None,
            sigmas: vec![0.1, 0.15, 0.2],
            surrogate: SurrogateParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub fractions: (f64, f64, f64),
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { fractions: (0.72, 0.19, 0.09), stratified: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturesConfig {
    pub top_k: usize,
    /// Box bound of the linear ranking machine.
    pub rank_c: f64,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        // Strongly regularized: weights then track per-feature class-mean
        // gaps, which keeps the ranking stable under near-duplicate features.
        Self { top_k: 3, rank_c: 0.03 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub c: f64,
    pub gamma: GammaSpec,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { c: 10.0, gamma: GammaSpec::Scale }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QsvmConfig {
    pub c: f64,
    /// Training rows drawn from the train split (stratified).
    pub train_subsample: usize,
    pub shots: u64,
    pub noise_p: f64,
    /// Independent shot-noise repetitions for the noisy variant.
    pub noise_reps: usize,
}

impl Default for QsvmConfig {
    fn default() -> Self {
        Self { c: 10.0, train_subsample: 200, shots: 1024, noise_p: 0.05, noise_reps: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QnnConfig {
    pub layers: usize,
    pub final_rotation_layer: bool,
    /// Optional cap on training rows; `None` trains on the full split.
    pub train_subsample: Option<usize>,
    #[serde(flatten)]
    pub control: TrainControl,
}

impl Default for QnnConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            final_rotation_layer: false,
            train_subsample: None,
            control: TrainControl::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub bootstrap_resamples: usize,
    pub importance_repeats: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { bootstrap_resamples: 1000, importance_repeats: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
    pub features: FeaturesConfig,
    pub svm: SvmConfig,
    pub qsvm: QsvmConfig,
    pub qnn: QnnConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: PathBuf::from("runs/default"),
            dataset: DatasetConfig::default(),
            split: SplitConfig::default(),
            features: FeaturesConfig::default(),
            svm: SvmConfig::default(),
            qsvm: QsvmConfig::default(),
            qnn: QnnConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig = toml::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        match self.dataset.source {
            SourceKind::Surrogate => self.dataset.surrogate.validate()?,
            SourceKind::Ingest => {
                let path = self.dataset.ingest_path.as_ref().ok_or_else(|| {
                    PipelineError::Config("ingest source needs dataset.ingest_path".into())
                })?;
                if !path.exists() {
                    return Err(PipelineError::Config(format!(
                        "dataset.ingest_path {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        if self.dataset.sigmas.is_empty()
            || self.dataset.sigmas.iter().any(|s| !s.is_finite() || *s <= 0.0)
        {
            return Err(PipelineError::Config("sigmas must be a non-empty positive list".into()));
        }
        if self.features.top_k == 0 || self.features.top_k > 6 {
            return Err(PipelineError::Config("features.top_k must lie in 1..=6".into()));
        }
        if !(self.features.rank_c > 0.0) || !(self.svm.c > 0.0) || !(self.qsvm.c > 0.0) {
            return Err(PipelineError::Config("box bounds must be positive".into()));
        }
        if self.qsvm.train_subsample == 0 || self.qsvm.noise_reps == 0 || self.qsvm.shots == 0 {
            return Err(PipelineError::Config("qsvm sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.qsvm.noise_p) {
            return Err(PipelineError::Config("qsvm.noise_p must lie in [0, 1]".into()));
        }
        if self.report.bootstrap_resamples < 100 {
            return Err(PipelineError::Config("report.bootstrap_resamples must be ≥ 100".into()));
        }
        if self.report.importance_repeats == 0 {
            return Err(PipelineError::Config("report.importance_repeats must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Canonical fingerprint of the whole configuration.
    pub fn sha256(&self) -> Result<String, PipelineError> {
        let canonical = serde_json::to_string(self)?;
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        Ok(digest.as_slice().iter().map(|b| format!("{b:02x}")).collect())
    }

    fn stage_seed(&self, stage: &str) -> u64 {
        seeds::derive(self.seed, stage)
    }
}

// ---------------------------------------------------------------------------
// artifact layout

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Svm,
    QsvmExact,
    QsvmNoisy,
    Qnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Svm,
        ModelKind::QsvmExact,
        ModelKind::QsvmNoisy,
        ModelKind::Qnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Svm => "svm",
            ModelKind::QsvmExact => "qsvm_exact",
            ModelKind::QsvmNoisy => "qsvm_noisy",
            ModelKind::Qnn => "qnn",
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "svm" => Ok(ModelKind::Svm),
            "qsvm-exact" | "qsvm_exact" => Ok(ModelKind::QsvmExact),
            "qsvm-noisy" | "qsvm_noisy" => Ok(ModelKind::QsvmNoisy),
            "qnn" => Ok(ModelKind::Qnn),
            other => Err(format!(
                "unknown model `{other}` (expected svm, qsvm-exact, qsvm-noisy, or qnn)"
            )),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// All artifact paths of one run, relative to the run root.
#[derive(Debug, Clone)]
pub struct RunPaths {
    root: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn excitations_csv(&self, class: SystemClass) -> PathBuf {
        let name = match class {
            SystemClass::Pristine => "excitations_pristine.csv",
            SystemClass::Doped => "excitations_doped.csv",
        };
        self.dataset_dir().join(name)
    }

    pub fn profile_csv(&self, class: SystemClass, sigma: f64) -> PathBuf {
        let system = match class {
            SystemClass::Pristine => "pristine",
            SystemClass::Doped => "doped",
        };
        self.dataset_dir().join(format!("profile_{system}_sigma_{sigma:.2}.csv"))
    }

    pub fn spectral_diff_csv(&self) -> PathBuf {
        self.dataset_dir().join("spectral_diff.csv")
    }

    pub fn dataset_csv(&self) -> PathBuf {
        self.dataset_dir().join("dataset.csv")
    }

    pub fn splits_json(&self) -> PathBuf {
        self.dataset_dir().join("splits.json")
    }

    pub fn part_csv(&self, part: &str) -> PathBuf {
        self.dataset_dir().join(format!("{part}.csv"))
    }

    pub fn features_dir(&self) -> PathBuf {
        self.root.join("features")
    }

    pub fn pipeline_json(&self) -> PathBuf {
        self.features_dir().join("pipeline.json")
    }

    pub fn ranking_json(&self) -> PathBuf {
        self.features_dir().join("ranking.json")
    }

    pub fn top_csv(&self, part: &str) -> PathBuf {
        self.features_dir().join(format!("{part}_top.csv"))
    }

    pub fn model_dir(&self, kind: ModelKind) -> PathBuf {
        self.root.join("models").join(kind.name())
    }

    pub fn model_json(&self, kind: ModelKind) -> PathBuf {
        self.model_dir(kind).join("model.json")
    }

    pub fn report_json(&self, kind: ModelKind) -> PathBuf {
        self.model_dir(kind).join("report.json")
    }

    pub fn roc_csv(&self, kind: ModelKind) -> PathBuf {
        self.model_dir(kind).join("roc.csv")
    }

    pub fn confusion_csv(&self, kind: ModelKind) -> PathBuf {
        self.model_dir(kind).join("confusion.csv")
    }

    pub fn importance_json(&self) -> PathBuf {
        self.model_dir(ModelKind::Svm).join("importance.json")
    }

    pub fn gram_csv(&self, kind: ModelKind, which: &str) -> PathBuf {
        self.model_dir(kind).join(format!("gram_{which}.csv"))
    }

    pub fn noisy_rep_dir(&self, rep: usize) -> PathBuf {
        self.model_dir(ModelKind::QsvmNoisy).join(format!("rep_{rep}"))
    }

    pub fn noisy_aggregate_json(&self) -> PathBuf {
        self.model_dir(ModelKind::QsvmNoisy).join("aggregate.json")
    }

    pub fn history_csv(&self) -> PathBuf {
        self.model_dir(ModelKind::Qnn).join("history.csv")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn summary_json(&self) -> PathBuf {
        self.report_dir().join("report.json")
    }

    pub fn summary_md(&self) -> PathBuf {
        self.report_dir().join("report.md")
    }
}

// ---------------------------------------------------------------------------
// manifest

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_sha256: String,
    pub master_seed: u64,
    /// Creation time (unix seconds); the only field excluded from
    /// determinism comparisons.
    pub created_unix: u64,
    pub stage_seeds: BTreeMap<String, u64>,
    /// Stage name → artifact paths relative to the run root.
    pub artifacts: BTreeMap<String, Vec<String>>,
}

fn relative(paths: &RunPaths, p: PathBuf) -> String {
    p.strip_prefix(paths.root()).unwrap_or(&p).to_string_lossy().into_owned()
}

/// Write the manifest for the configured run. Called at the start of every
/// stage, before that stage produces anything.
pub fn write_manifest(config: &RunConfig, paths: &RunPaths) -> Result<RunManifest, PipelineError> {
    let mut stage_seeds = BTreeMap::new();
    for stage in ["synth-pristine", "synth-doped", "split", "qsvm-subsample", "qnn", "bootstrap", "importance"] {
        stage_seeds.insert(stage.to_string(), config.stage_seed(stage));
    }
    for rep in 0..config.qsvm.noise_reps {
        let tag = format!("qsvm-noisy-rep-{rep}");
        stage_seeds.insert(tag.clone(), config.stage_seed(&tag));
    }

    let mut artifacts: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut dataset = vec![
        relative(paths, paths.dataset_csv()),
        relative(paths, paths.splits_json()),
        relative(paths, paths.part_csv("train")),
        relative(paths, paths.part_csv("val")),
        relative(paths, paths.part_csv("test")),
    ];
    if config.dataset.source == SourceKind::Surrogate {
        for class in [SystemClass::Pristine, SystemClass::Doped] {
            dataset.push(relative(paths, paths.excitations_csv(class)));
            for &sigma in &config.dataset.sigmas {
                dataset.push(relative(paths, paths.profile_csv(class, sigma)));
            }
        }
        dataset.push(relative(paths, paths.spectral_diff_csv()));
    }
    artifacts.insert("dataset".into(), dataset);
    artifacts.insert(
        "features".into(),
        vec![
            relative(paths, paths.pipeline_json()),
            relative(paths, paths.ranking_json()),
            relative(paths, paths.top_csv("train")),
            relative(paths, paths.top_csv("val")),
            relative(paths, paths.top_csv("test")),
        ],
    );
    for kind in ModelKind::ALL {
        let mut files = vec![
            relative(paths, paths.report_json(kind)),
            relative(paths, paths.roc_csv(kind)),
            relative(paths, paths.confusion_csv(kind)),
        ];
        match kind {
            ModelKind::Svm => {
                files.push(relative(paths, paths.model_json(kind)));
                files.push(relative(paths, paths.importance_json()));
            }
            ModelKind::QsvmExact => {
                files.push(relative(paths, paths.model_json(kind)));
                files.push(relative(paths, paths.gram_csv(kind, "train")));
                files.push(relative(paths, paths.gram_csv(kind, "test")));
            }
            ModelKind::QsvmNoisy => {
                files.push(relative(paths, paths.noisy_aggregate_json()));
                for rep in 0..config.qsvm.noise_reps {
                    files.push(relative(paths, paths.noisy_rep_dir(rep).join("model.json")));
                    files.push(relative(paths, paths.noisy_rep_dir(rep).join("report.json")));
                }
            }
            ModelKind::Qnn => {
                files.push(relative(paths, paths.model_json(kind)));
                files.push(relative(paths, paths.history_csv()));
            }
        }
        artifacts.insert(format!("train-{}", kind.name()), files);
    }
    artifacts.insert(
        "report".into(),
        vec![relative(paths, paths.summary_json()), relative(paths, paths.summary_md())],
    );

    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: config.sha256()?,
        master_seed: config.seed,
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        stage_seeds,
        artifacts,
    };
    std::fs::create_dir_all(paths.root())?;
    let file = std::fs::File::create(paths.manifest())?;
    serde_json::to_writer_pretty(file, &manifest)?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// small CSV helpers (labeled feature tables with arbitrary column sets)

fn write_labeled_csv(
    path: &Path,
    names: &[String],
    rows: &[Vec<f64>],
    labels: &[u8],
) -> Result<(), PipelineError> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = names.iter().map(String::as_str).collect();
    header.push("label");
    writer.write_record(&header).map_err(CorpusError::from)?;
    for (row, &label) in rows.iter().zip(labels) {
        let mut record: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        record.push(label.to_string());
        writer.write_record(&record).map_err(CorpusError::from)?;
    }
    writer.flush()?;
    Ok(())
}

fn read_labeled_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>, Vec<u8>), PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path).map_err(CorpusError::from)?;
    let header: Vec<String> = reader
        .headers()
        .map_err(CorpusError::from)?
        .iter()
        .map(|s| s.to_string())
        .collect();
    if header.last().map(String::as_str) != Some("label") {
        return Err(PipelineError::Config(format!(
            "{} lacks a trailing label column",
            path.display()
        )));
    }
    let names = header[..header.len() - 1].to_vec();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(CorpusError::from)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(CorpusError::MalformedRow {
                line,
                message: format!("expected {} fields, got {}", header.len(), record.len()),
            }
            .into());
        }
        let mut row = Vec::with_capacity(names.len());
        for field in record.iter().take(names.len()) {
            row.push(field.parse::<f64>().map_err(|_| CorpusError::MalformedRow {
                line,
                message: format!("cannot parse `{field}` as a number"),
            })?);
        }
        labels.push(record[names.len()].parse::<u8>().map_err(|_| {
            CorpusError::MalformedRow { line, message: "bad label".into() }
        })?);
        rows.push(row);
    }
    Ok((names, rows, labels))
}

fn signed_labels(labels: &[u8]) -> Vec<i8> {
    labels.iter().map(|&l| if l > 0 { 1 } else { -1 }).collect()
}

fn ensure_exists(path: PathBuf) -> Result<PathBuf, PipelineError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::MissingArtifact(path))
    }
}

// ---------------------------------------------------------------------------
// stage: synth / ingest

#[derive(Debug, Serialize, Deserialize)]
struct SplitIndices {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

fn split_and_export(
    config: &RunConfig,
    paths: &RunPaths,
    dataset: &Dataset,
) -> Result<(), PipelineError> {
    corpus::export_csv(dataset, &paths.dataset_csv())?;
    let (train, val, test) = corpus::split_indices(
        dataset,
        config.split.fractions,
        config.stage_seed("split"),
        config.split.stratified,
    )?;
    let file = std::fs::File::create(paths.splits_json())?;
    serde_json::to_writer_pretty(
        file,
        &SplitIndices { train: train.clone(), val: val.clone(), test: test.clone() },
    )?;
    for (part, indices) in [("train", &train), ("val", &val), ("test", &test)] {
        corpus::export_csv(&dataset.take(indices), &paths.part_csv(part))?;
    }
    eprintln!(
        "[dataset] {} rows split {}/{}/{}",
        dataset.n_rows(),
        train.len(),
        val.len(),
        test.len()
    );
    Ok(())
}

fn guard_out_dir(paths: &RunPaths, force: bool) -> Result<(), PipelineError> {
    if paths.root().exists() && !force {
        return Err(PipelineError::OutDirExists(paths.root().to_path_buf()));
    }
    std::fs::create_dir_all(paths.dataset_dir())?;
    Ok(())
}

/// Generate the surrogate corpus and all dataset-stage artifacts.
pub fn cmd_synth(config: &RunConfig, force: bool) -> Result<(), PipelineError> {
    config.validate()?;
    if config.dataset.source != SourceKind::Surrogate {
        return Err(PipelineError::WrongSource { expected: "surrogate" });
    }
    let paths = RunPaths::new(&config.out_dir);
    guard_out_dir(&paths, force)?;
    write_manifest(config, &paths)?;

    let params = &config.dataset.surrogate;
    let grid = params.grid()?;
    let mut spectra: Vec<(SystemClass, ExcitationSpectrum)> = Vec::new();
    for (class, tag) in
        [(SystemClass::Pristine, "synth-pristine"), (SystemClass::Doped, "synth-doped")]
    {
        let spectrum = corpus::synth_system(class, params, config.stage_seed(tag))?;
        let mut writer = csv::Writer::from_path(paths.excitations_csv(class))?;
        writer.write_record(["omega_eV", "strength"]).map_err(CorpusError::from)?;
        for line in spectrum.excitations() {
            writer
                .write_record([line.omega_ev.to_string(), line.strength.to_string()])
                .map_err(CorpusError::from)?;
        }
        writer.flush()?;
        for &sigma in &config.dataset.sigmas {
            let profile = broaden(&spectrum, &grid, sigma)?;
            let mut writer = csv::Writer::from_path(paths.profile_csv(class, sigma))?;
            writer.write_record(["E_eV", "absorption"]).map_err(CorpusError::from)?;
            for (e, a) in profile.energies_ev.iter().zip(&profile.values) {
                writer
                    .write_record([e.to_string(), a.to_string()])
                    .map_err(CorpusError::from)?;
            }
            writer.flush()?;
        }
        spectra.push((class, spectrum));
    }

    let diff = spectral_difference(&spectra[1].1, &spectra[0].1, 3)?;
    let mut writer = csv::Writer::from_path(paths.spectral_diff_csv())?;
    writer
        .write_record(["rank", "delta_omega_eV", "delta_strength"])
        .map_err(CorpusError::from)?;
    for (rank, (dw, ds)) in diff.delta_omega_ev.iter().zip(&diff.delta_strength).enumerate() {
        writer
            .write_record([(rank + 1).to_string(), dw.to_string(), ds.to_string()])
            .map_err(CorpusError::from)?;
    }
    writer.flush()?;

    let sigma = config.dataset.sigmas[0];
    let mut records = Vec::new();
    for (class, spectrum) in &spectra {
        records.extend(corpus::build_records(spectrum, params, sigma, class.label())?);
    }
    let dataset =
        Dataset::from_records(&records, Provenance::Surrogate { seed: config.seed })?;
    split_and_export(config, &paths, &dataset)
}

/// Read an external descriptor CSV and produce the dataset-stage artifacts.
pub fn cmd_ingest(config: &RunConfig, force: bool) -> Result<(), PipelineError> {
    config.validate()?;
    if config.dataset.source != SourceKind::Ingest {
        return Err(PipelineError::WrongSource { expected: "ingest" });
    }
    let source = config.dataset.ingest_path.as_ref().expect("validated above");
    let paths = RunPaths::new(&config.out_dir);
    guard_out_dir(&paths, force)?;
    write_manifest(config, &paths)?;
    let dataset = corpus::ingest_csv(source)?;
    split_and_export(config, &paths, &dataset)
}

// ---------------------------------------------------------------------------
// stage: features

#[derive(Debug, Serialize, Deserialize)]
struct RankedFeature {
    rank: usize,
    index: usize,
    name: String,
    weight: f64,
}

/// Fit the Box-Cox + standardize pipeline on the train split, rank features
/// with a linear machine, and export the top-k projected tables.
pub fn cmd_features(config: &RunConfig) -> Result<(), PipelineError> {
    config.validate()?;
    let paths = RunPaths::new(&config.out_dir);
    let train_path = ensure_exists(paths.part_csv("train"))?;
    write_manifest(config, &paths)?;
    std::fs::create_dir_all(paths.features_dir())?;

    let train = corpus::ingest_csv(&train_path)?;
    let val = corpus::ingest_csv(&ensure_exists(paths.part_csv("val"))?)?;
    let test = corpus::ingest_csv(&ensure_exists(paths.part_csv("test"))?)?;

    let pipeline = FeaturePipeline::fit(&train.rows)?;
    pipeline.save_json(&paths.pipeline_json())?;

    let train_t = pipeline.transform(&train.rows)?;
    let ranking = features::rank_features(
        &train_t,
        &signed_labels(&train.labels),
        config.features.rank_c,
    )?;
    let ranked: Vec<RankedFeature> = ranking
        .iter()
        .enumerate()
        .map(|(i, r)| RankedFeature {
            rank: i + 1,
            index: r.index,
            name: train.feature_names[r.index].clone(),
            weight: r.weight,
        })
        .collect();
    let file = std::fs::File::create(paths.ranking_json())?;
    serde_json::to_writer_pretty(file, &ranked)?;
    eprintln!(
        "[features] ranking: {}",
        ranked.iter().map(|r| r.name.as_str()).collect::<Vec<_>>().join(" > ")
    );

    let top_names: Vec<String> =
        ranking[..config.features.top_k].iter().map(|r| train.feature_names[r.index].clone()).collect();
    for (part, dataset) in [("train", &train), ("val", &val), ("test", &test)] {
        let transformed = pipeline.transform(&dataset.rows)?;
        let selected = features::select_top_k(&transformed, &ranking, config.features.top_k)?;
        write_labeled_csv(&paths.top_csv(part), &top_names, &selected, &dataset.labels)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// stage: train

/// Evaluation summary of one trained model on the test split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub eval: EvalReport,
    pub accuracy_ci: BootstrapCi,
    pub auc_ci: BootstrapCi,
}

/// Per-repetition accuracy of the shot-noise QSVM plus the pooled means.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoisyAggregate {
    pub mean_accuracy: f64,
    pub mean_auc: f64,
    pub reps: Vec<NoisyRep>,
    /// Bootstrap CI of the first repetition, for the comparison table.
    pub accuracy_ci: BootstrapCi,
    pub auc_ci: BootstrapCi,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoisyRep {
    pub seed: u64,
    pub accuracy: f64,
    pub auc: f64,
}

fn build_report(
    config: &RunConfig,
    model: &str,
    scores: &[f64],
    preds: &[i8],
    labels: &[i8],
) -> Result<ModelReport, PipelineError> {
    let eval = metrics::evaluate(scores, preds, labels)?;
    let b = config.report.bootstrap_resamples;
    let seed = config.stage_seed("bootstrap");
    let pred_values: Vec<f64> = preds.iter().map(|&p| p as f64).collect();
    let accuracy_ci = metrics::bootstrap_ci(&pred_values, labels, MetricKind::Accuracy, b, seed)?;
    let auc_ci = metrics::bootstrap_ci(scores, labels, MetricKind::Auc, b, seed)?;
    Ok(ModelReport { model: model.to_string(), eval, accuracy_ci, auc_ci })
}

fn write_eval_files(
    paths: &RunPaths,
    kind: ModelKind,
    report: &ModelReport,
) -> Result<(), PipelineError> {
    let file = std::fs::File::create(paths.report_json(kind))?;
    serde_json::to_writer_pretty(file, report)?;
    let mut roc = csv::Writer::from_path(paths.roc_csv(kind))?;
    roc.write_record(["fpr", "tpr"]).map_err(CorpusError::from)?;
    for point in &report.eval.roc {
        roc.write_record([point.fpr.to_string(), point.tpr.to_string()])
            .map_err(CorpusError::from)?;
    }
    roc.flush()?;
    let c = &report.eval.confusion;
    let mut confusion = std::fs::File::create(paths.confusion_csv(kind))?;
    writeln!(confusion, ",pred_0,pred_1")?;
    writeln!(confusion, "true_0,{},{}", c[0][0], c[0][1])?;
    writeln!(confusion, "true_1,{},{}", c[1][0], c[1][1])?;
    eprintln!(
        "[train-{}] test accuracy {:.4}, AUC {:.4}",
        kind.name(),
        report.eval.accuracy,
        report.eval.auc
    );
    Ok(())
}

struct LoadedSplits {
    names: Vec<String>,
    train_x: Vec<Vec<f64>>,
    train_y: Vec<u8>,
    val_x: Vec<Vec<f64>>,
    val_y: Vec<u8>,
    test_x: Vec<Vec<f64>>,
    test_y: Vec<u8>,
}

fn load_top_splits(paths: &RunPaths) -> Result<LoadedSplits, PipelineError> {
    let (names, train_x, train_y) = read_labeled_csv(&paths.top_csv("train"))?;
    let (_, val_x, val_y) = read_labeled_csv(&paths.top_csv("val"))?;
    let (_, test_x, test_y) = read_labeled_csv(&paths.top_csv("test"))?;
    Ok(LoadedSplits { names, train_x, train_y, val_x, val_y, test_x, test_y })
}

fn train_svm(config: &RunConfig, paths: &RunPaths, data: &LoadedSplits) -> Result<(), PipelineError> {
    let params = SvmParams {
        kernel: KernelSpec::Rbf { gamma: config.svm.gamma },
        c: config.svm.c,
        ..SvmParams::default()
    };
    let model = crate::svm::train(&data.train_x, &signed_labels(&data.train_y), &params)?;
    model.save_json(&paths.model_json(ModelKind::Svm))?;

    let scores = model.decision_batch(&data.test_x)?;
    let preds = model.predict_batch(&data.test_x)?;
    let labels = signed_labels(&data.test_y);
    let report = build_report(config, "svm", &scores, &preds, &labels)?;
    write_eval_files(paths, ModelKind::Svm, &report)?;

    let importance = metrics::permutation_importance(
        &data.test_x,
        &labels,
        |rows| {
            model
                .predict_batch(rows)
                .map_err(|e| MetricsError::PredictionFailed(e.to_string()))
        },
        config.report.importance_repeats,
        config.stage_seed("importance"),
    )?;
    let file = std::fs::File::create(paths.importance_json())?;
    serde_json::to_writer_pretty(file, &importance)?;
    Ok(())
}

/// Stratified QSVM training subset: rows, ids, and signed labels.
fn qsvm_subset(
    config: &RunConfig,
    data: &LoadedSplits,
) -> Result<(Vec<Vec<f64>>, Vec<String>, Vec<i8>), PipelineError> {
    let train = Dataset::new(
        data.names.clone(),
        data.train_x.clone(),
        data.train_y.clone(),
        Provenance::Ingested,
    )?;
    let count = config.qsvm.train_subsample.min(train.n_rows());
    let sub = corpus::subsample(&train, count, config.stage_seed("qsvm-subsample"), true)?;
    let ids: Vec<String> = (0..sub.n_rows()).map(|i| format!("s{i}")).collect();
    let y = signed_labels(&sub.labels);
    Ok((sub.rows, ids, y))
}

fn qsvm_params(config: &RunConfig) -> SvmParams {
    SvmParams { kernel: KernelSpec::Precomputed, c: config.qsvm.c, ..SvmParams::default() }
}

fn train_qsvm_exact(
    config: &RunConfig,
    paths: &RunPaths,
    data: &LoadedSplits,
) -> Result<(), PipelineError> {
    let spec = FeatureMapSpec::new(data.names.len(), 1)?;
    let (rows, ids, y) = qsvm_subset(config, data)?;
    let gram = qkernel::gram_exact(&rows, &ids, &spec)?;
    gram.to_csv_path(&paths.gram_csv(ModelKind::QsvmExact, "train"))?;
    let model = crate::svm::train_precomputed(&gram, &y, &qsvm_params(config))?;
    model.save_json(&paths.model_json(ModelKind::QsvmExact))?;

    let test_ids: Vec<String> = (0..data.test_x.len()).map(|i| format!("q{i}")).collect();
    let cross = qkernel::gram_exact_cross(&data.test_x, &test_ids, &rows, &ids, &spec)?;
    cross.to_csv_path(&paths.gram_csv(ModelKind::QsvmExact, "test"))?;
    let scores = model.decision_from_gram(&cross)?;
    let preds = model.predict_from_gram(&cross)?;
    let labels = signed_labels(&data.test_y);
    let report = build_report(config, "qsvm_exact", &scores, &preds, &labels)?;
    write_eval_files(paths, ModelKind::QsvmExact, &report)
}

fn train_qsvm_noisy(
    config: &RunConfig,
    paths: &RunPaths,
    data: &LoadedSplits,
) -> Result<(), PipelineError> {
    let spec = FeatureMapSpec::new(data.names.len(), 1)?;
    let (rows, ids, y) = qsvm_subset(config, data)?;
    let test_ids: Vec<String> = (0..data.test_x.len()).map(|i| format!("q{i}")).collect();
    let labels = signed_labels(&data.test_y);
    let mut reps = Vec::new();
    let mut first_report: Option<ModelReport> = None;
    for rep in 0..config.qsvm.noise_reps {
        let rep_seed = config.stage_seed(&format!("qsvm-noisy-rep-{rep}"));
        let gram = qkernel::gram_shots(
            &rows,
            &ids,
            &spec,
            config.qsvm.shots,
            config.qsvm.noise_p,
            seeds::derive(rep_seed, "train-gram"),
        )?;
        let model = crate::svm::train_precomputed(&gram, &y, &qsvm_params(config))?;
        let cross = qkernel::gram_shots_cross(
            &data.test_x,
            &test_ids,
            &rows,
            &ids,
            &spec,
            config.qsvm.shots,
            config.qsvm.noise_p,
            seeds::derive(rep_seed, "test-gram"),
        )?;
        let scores = model.decision_from_gram(&cross)?;
        let preds = model.predict_from_gram(&cross)?;
        let report = build_report(config, "qsvm_noisy", &scores, &preds, &labels)?;

        let rep_dir = paths.noisy_rep_dir(rep);
        std::fs::create_dir_all(&rep_dir)?;
        model.save_json(&rep_dir.join("model.json"))?;
        let file = std::fs::File::create(rep_dir.join("report.json"))?;
        serde_json::to_writer_pretty(file, &report)?;
        reps.push(NoisyRep { seed: rep_seed, accuracy: report.eval.accuracy, auc: report.eval.auc });
        if first_report.is_none() {
            first_report = Some(report);
        }
    }
    let first = first_report.expect("noise_reps ≥ 1 by validation");
    let aggregate = NoisyAggregate {
        mean_accuracy: reps.iter().map(|r| r.accuracy).sum::<f64>() / reps.len() as f64,
        mean_auc: reps.iter().map(|r| r.auc).sum::<f64>() / reps.len() as f64,
        reps,
        accuracy_ci: first.accuracy_ci,
        auc_ci: first.auc_ci,
    };
    let file = std::fs::File::create(paths.noisy_aggregate_json())?;
    serde_json::to_writer_pretty(file, &aggregate)?;
    write_eval_files(paths, ModelKind::QsvmNoisy, &first)?;
    eprintln!(
        "[train-qsvm_noisy] mean accuracy over {} reps: {:.4}",
        aggregate.reps.len(),
        aggregate.mean_accuracy
    );
    Ok(())
}

fn train_qnn(config: &RunConfig, paths: &RunPaths, data: &LoadedSplits) -> Result<(), PipelineError> {
    let n_features = data.names.len();
    let map = FeatureMapSpec::new(n_features, 1)?;
    let ansatz = AnsatzSpec::new(n_features, config.qnn.layers, config.qnn.final_rotation_layer)?;
    let (train_x, train_y) = match config.qnn.train_subsample {
        Some(count) => {
            let full = Dataset::new(
                data.names.clone(),
                data.train_x.clone(),
                data.train_y.clone(),
                Provenance::Ingested,
            )?;
            let sub =
                corpus::subsample(&full, count.min(full.n_rows()), config.stage_seed("qnn"), true)?;
            (sub.rows, sub.labels)
        }
        None => (data.train_x.clone(), data.train_y.clone()),
    };
    let outcome = qnn::train(
        &train_x,
        &train_y,
        &data.val_x,
        &data.val_y,
        &map,
        &ansatz,
        &config.qnn.control,
        config.stage_seed("qnn"),
    )?;
    outcome.model.save_json(&paths.model_json(ModelKind::Qnn))?;
    let file = std::fs::File::create(paths.history_csv())?;
    qnn::write_history_csv(&outcome.history, file)?;
    eprintln!(
        "[train-qnn] {} epochs (best {}), stopped_early = {}",
        outcome.history.len(),
        outcome.best_epoch,
        outcome.stopped_early
    );

    let mut scores = Vec::with_capacity(data.test_x.len());
    let mut preds = Vec::with_capacity(data.test_x.len());
    for row in &data.test_x {
        scores.push(outcome.model.score(row)?);
        preds.push(if outcome.model.predict(row)? > 0 { 1i8 } else { -1i8 });
    }
    let labels = signed_labels(&data.test_y);
    let report = build_report(config, "qnn", &scores, &preds, &labels)?;
    write_eval_files(paths, ModelKind::Qnn, &report)
}

/// Train and evaluate one model on the prepared feature tables.
pub fn cmd_train(config: &RunConfig, kind: ModelKind) -> Result<(), PipelineError> {
    config.validate()?;
    let paths = RunPaths::new(&config.out_dir);
    ensure_exists(paths.top_csv("train"))?;
    write_manifest(config, &paths)?;
    std::fs::create_dir_all(paths.model_dir(kind))?;
    let data = load_top_splits(&paths)?;
    match kind {
        ModelKind::Svm => train_svm(config, &paths, &data),
        ModelKind::QsvmExact => train_qsvm_exact(config, &paths, &data),
        ModelKind::QsvmNoisy => train_qsvm_noisy(config, &paths, &data),
        ModelKind::Qnn => train_qnn(config, &paths, &data),
    }
}

// ---------------------------------------------------------------------------
// stage: report

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub accuracy: f64,
    pub auc: f64,
    pub accuracy_ci: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    /// `ACC(svm) ≥ ACC(qnn) ≥ ACC(qsvm_exact) ≥ mean ACC(qsvm_noisy)`;
    /// `None` until all four models are trained.
    pub ordering_holds: Option<bool>,
}

/// Merge all trained-model reports into one comparison table.
pub fn cmd_report(config: &RunConfig) -> Result<Summary, PipelineError> {
    config.validate()?;
    let paths = RunPaths::new(&config.out_dir);
    write_manifest(config, &paths)?;
    let mut rows = Vec::new();
    let mut acc: BTreeMap<&str, f64> = BTreeMap::new();
    for kind in ModelKind::ALL {
        let (path, row) = if kind == ModelKind::QsvmNoisy {
            let path = paths.noisy_aggregate_json();
            if !path.exists() {
                continue;
            }
            let aggregate: NoisyAggregate =
                serde_json::from_reader(std::fs::File::open(&path)?)?;
            (
                path,
                SummaryRow {
                    model: kind.name().to_string(),
                    accuracy: aggregate.mean_accuracy,
                    auc: aggregate.mean_auc,
                    accuracy_ci: [aggregate.accuracy_ci.lower, aggregate.accuracy_ci.upper],
                },
            )
        } else {
            let path = paths.report_json(kind);
            if !path.exists() {
                continue;
            }
            let report: ModelReport = serde_json::from_reader(std::fs::File::open(&path)?)?;
            (
                path,
                SummaryRow {
                    model: kind.name().to_string(),
                    accuracy: report.eval.accuracy,
                    auc: report.eval.auc,
                    accuracy_ci: [report.accuracy_ci.lower, report.accuracy_ci.upper],
                },
            )
        };
        let _ = path;
        acc.insert(kind.name(), row.accuracy);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(PipelineError::NothingTrained);
    }
    let ordering_holds = match (
        acc.get("svm"),
        acc.get("qnn"),
        acc.get("qsvm_exact"),
        acc.get("qsvm_noisy"),
    ) {
        (Some(&svm), Some(&qnn), Some(&exact), Some(&noisy)) => {
            Some(svm >= qnn && qnn >= exact && exact >= noisy)
        }
        _ => None,
    };
    let summary = Summary { rows, ordering_holds };

    std::fs::create_dir_all(paths.report_dir())?;
    let file = std::fs::File::create(paths.summary_json())?;
    serde_json::to_writer_pretty(file, &summary)?;

    let mut md = String::from("# Model comparison\n\n");
    md.push_str("| model | accuracy | AUC | 95% CI (accuracy) |\n");
    md.push_str("|---|---|---|---|\n");
    for row in &summary.rows {
        md.push_str(&format!(
            "| {} | {:.4} | {:.4} | [{:.4}, {:.4}] |\n",
            row.model, row.accuracy, row.auc, row.accuracy_ci[0], row.accuracy_ci[1]
        ));
    }
    md.push('\n');
    match summary.ordering_holds {
        Some(true) => md.push_str(
            "Accuracy ordering svm ≥ qnn ≥ qsvm_exact ≥ qsvm_noisy: holds.\n",
        ),
        Some(false) => md.push_str(
            "Accuracy ordering svm ≥ qnn ≥ qsvm_exact ≥ qsvm_noisy: violated.\n",
        ),
        None => md.push_str("Accuracy ordering: not all models trained yet.\n"),
    }
    std::fs::write(paths.summary_md(), md)?;
    eprintln!("[report] {} model rows written", summary.rows.len());
    Ok(summary)
}
