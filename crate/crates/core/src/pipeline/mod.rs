//! Stage commands: synthesize, train the autoencoder, embed, train
//! classifiers, evaluate zero-shot transfer and aggregate reports.
//!
//! Every command writes under one output directory:
//!
//! ```text
//! config/<command>.toml                resolved configuration
//! data/<cell>.lmx, <cell>.labels.csv   synthetic populations
//! autoencoder/model.ckpt, loss.csv, reconstruction.csv
//! embeddings/<cell>.lmx
//! classifiers/<model>-<cell>/model.ckpt, config.toml, history.csv (+ graph.csv for gcn)
//! reports/<model>.<cell>.<mode>[.<subset>].json
//! report/tables.txt, results.csv, pca.csv, pca-<cell>.csv
//! ```

mod config;
mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;

pub use config::{AttentionStage, AutoencoderStage, FfnStage, GcnStage, RunConfig};
pub use report::{cmd_report, ReportSummary};

use crate::checkpoint::Checkpoint;
use crate::classifiers::{train_classifier, Classifier, ClassifierKind, LabeledView};
use crate::data::{
    binarize_labels, generate_synthetic_lineage, load_matrix, save_matrix, split, write_labels_csv, CellType,
    LabeledDataset, Manifest, Preprocessor, Split,
};
use crate::embedding::train_autoencoder;
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprinter;
use crate::graph::{build_graph, train_gcn};
use crate::metrics::{accuracy, EvalReport, Task, TransferMode};
use crate::rng;

pub const AE_FINGERPRINT_KEY: &str = "autoencoder_fingerprint";
pub const BINARY_NOTE: &str = "binary task: Normal = 0, any disease = 1";
pub const ATTENTION_SCALE_NOTE: &str = "attention scores are scaled by 1/sqrt(D/h), the per-head width";

fn write_config(out: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    let dir = out.join("config");
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(format!("{command}.toml")), cfg.to_toml())?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn note(msg: &str) {
    eprintln!("lineage: {msg}");
}

fn labels_for(task: Task, labels: &[usize]) -> Vec<usize> {
    match task {
        Task::Multiclass => labels.to_vec(),
        Task::Binary => binarize_labels(labels),
    }
}

pub fn dataset_path(out: &Path, cell: CellType) -> PathBuf {
    out.join("data").join(format!("{cell}.lmx"))
}

pub fn embedding_path(out: &Path, cell: CellType) -> PathBuf {
    out.join("embeddings").join(format!("{cell}.lmx"))
}

pub fn autoencoder_path(out: &Path) -> PathBuf {
    out.join("autoencoder").join("model.ckpt")
}

pub fn model_id(kind: ClassifierKind, task: Task) -> String {
    match task {
        Task::Multiclass => kind.name().to_string(),
        Task::Binary => format!("{}-binary", kind.name()),
    }
}

pub fn classifier_dir(out: &Path, model: &str, cell: CellType) -> PathBuf {
    out.join("classifiers").join(format!("{model}-{cell}"))
}

fn report_path(out: &Path, report: &EvalReport, subset: Option<Subset>) -> PathBuf {
    let mut name = format!("{}.{}.{}", report.model, report.cell_type, report.mode);
    if let Some(s) = subset.filter(|&s| s != Subset::All) {
        name.push_str(&format!(".{s}"));
    }
    out.join("reports").join(format!("{name}.json"))
}

fn save_report(path: &Path, report: &EvalReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    write_text(path, &(json + "\n"))
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes the three synthetic populations.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.synthetic.validate()?;
    write_config(out, "synth", cfg)?;
    let lineage = generate_synthetic_lineage(&cfg.synthetic)?;
    let mut paths = Vec::new();
    for ds in lineage.into_datasets() {
        let path = dataset_path(out, ds.cell_type);
        save_matrix(&path, &ds)?;
        write_labels_csv(path.with_extension("labels.csv"), &ds)?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Clone, Debug)]
pub struct TrainAeOutput {
    pub checkpoint: PathBuf,
    pub losses: Vec<f64>,
    pub train_mse: f64,
    pub test_mse: f64,
}

/// Fits preprocessing and the autoencoder on the training split of an
/// upstream (progenitor) dataset.
pub fn cmd_train_ae(cfg: &RunConfig, input: &Path, out: &Path, allow_any_celltype: bool) -> Result<TrainAeOutput> {
    cfg.validate()?;
    let ds = load_matrix(input)?;
    if ds.cell_type != CellType::Progenitor && !allow_any_celltype {
        return Err(Error::Usage(format!(
            "{} holds {} cells; the autoencoder is trained on progenitor cells only (pass --allow-any-celltype to override)",
            input.display(),
            ds.cell_type
        )));
    }
    write_config(out, "train-ae", cfg)?;
    let sp = split(ds.len(), cfg.split_ratio, cfg.seed)?;
    let pre = Preprocessor::fit(&ds.x, &sp.train)?;
    let x_train = pre.apply(&ds.x.select_rows(&sp.train))?;
    let x_test = pre.apply(&ds.x.select_rows(&sp.test))?;
    let (mut ae, losses) = train_autoencoder(&x_train, cfg.autoencoder_spec(ds.width()), &cfg.ae_training())?;
    let train_mse = ae.reconstruction_mse(&x_train)?;
    let test_mse = ae.reconstruction_mse(&x_test)?;
    ae.preprocessor = Some(pre.clone());

    let mut meta = BTreeMap::new();
    meta.insert("cell_type".into(), ds.cell_type.to_string());
    meta.insert("source_fingerprint".into(), ds.content_fingerprint());
    meta.insert("split_fingerprint".into(), sp.membership_fingerprint());
    meta.insert("preprocessor_fingerprint".into(), pre.fingerprint());
    meta.insert("training_config_fingerprint".into(), training_fingerprint(cfg, "autoencoder"));
    meta.insert("train_rows".into(), sp.train.len().to_string());
    let path = autoencoder_path(out);
    Checkpoint::from_autoencoder(&ae, meta).save(&path)?;

    let mut csv = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        csv.push_str(&format!("{},{l:.8}\n", i + 1));
    }
    write_text(&path.with_file_name("loss.csv"), &csv)?;
    write_text(
        &path.with_file_name("reconstruction.csv"),
        &format!("split,mse\ntrain,{train_mse:.8}\ntest,{test_mse:.8}\n"),
    )?;
    Ok(TrainAeOutput {
        checkpoint: path,
        losses,
        train_mse,
        test_mse,
    })
}

fn training_fingerprint(cfg: &RunConfig, stage: &str) -> String {
    let stage_toml = match stage {
        "autoencoder" => toml::to_string(&cfg.autoencoder),
        "ffn" => toml::to_string(&cfg.ffn),
        "attn" => toml::to_string(&cfg.attention),
        _ => toml::to_string(&cfg.gcn),
    }
    .expect("stage serializes");
    let mut f = Fingerprinter::new("training-config");
    f.str(stage).str(&stage_toml).u64(cfg.seed).u64(cfg.split_ratio.to_bits());
    f.finish()
}

/// Embeds a raw dataset with a trained autoencoder checkpoint.
pub fn cmd_embed(cfg: &RunConfig, checkpoint: &Path, input: &Path, out: &Path) -> Result<PathBuf> {
    let ae = Checkpoint::load(checkpoint)?.into_autoencoder()?;
    let ds = load_matrix(input)?;
    if ds.width() != ae.input_width() {
        return Err(Error::Dimension {
            context: format!("embedding {} with {}", input.display(), checkpoint.display()),
            expected: format!("{} genes (checkpoint)", ae.input_width()),
            actual: format!("{} genes (dataset)", ds.width()),
        });
    }
    write_config(out, "embed", cfg)?;
    let emb = ae.embed(&ds.x, ds.cell_type)?;
    let mut manifest = Manifest::new();
    manifest.insert("kind".into(), "embedding".into());
    manifest.insert(AE_FINGERPRINT_KEY.into(), emb.autoencoder_fingerprint.clone());
    manifest.insert("source_fingerprint".into(), ds.content_fingerprint());
    manifest.insert("latent_width".into(), emb.z.cols().to_string());
    for key in ["source", "seed"] {
        if let Some(v) = ds.manifest.get(key) {
            manifest.insert(format!("source_{key}"), v.clone());
        }
    }
    let mut out_ds = LabeledDataset::new(emb.z, ds.labels, ds.cell_type)?;
    out_ds.manifest = manifest;
    let path = embedding_path(out, ds.cell_type);
    save_matrix(&path, &out_ds)?;
    Ok(path)
}

/// Loads an embedding file and returns it with its autoencoder fingerprint.
pub fn load_embedding(path: &Path) -> Result<(LabeledDataset, String)> {
    let ds = load_matrix(path)?;
    let fp = ds.manifest.get(AE_FINGERPRINT_KEY).cloned().ok_or_else(|| {
        Error::Input(format!(
            "{} is not an embedding file (no autoencoder fingerprint in its manifest)",
            path.display()
        ))
    })?;
    Ok((ds, fp))
}

#[derive(Clone, Debug)]
pub struct TrainClfOutput {
    pub report: EvalReport,
    pub checkpoint: PathBuf,
    pub report_path: PathBuf,
}

/// Trains `kind` on the training split of an embedding file and scores it
/// on both splits.
pub fn cmd_train_clf(cfg: &RunConfig, kind: ClassifierKind, embedding: &Path, out: &Path) -> Result<TrainClfOutput> {
    cfg.validate()?;
    let (ds, ae_fp) = load_embedding(embedding)?;
    write_config(out, "train-clf", cfg)?;
    let id = model_id(kind, cfg.task);
    let dir = classifier_dir(out, &id, ds.cell_type);
    let mut meta = BTreeMap::new();
    meta.insert("model_id".into(), id.clone());
    meta.insert("task".into(), cfg.task.to_string());
    meta.insert("cell_type".into(), ds.cell_type.to_string());
    meta.insert(AE_FINGERPRINT_KEY.into(), ae_fp.clone());
    meta.insert("embedding_fingerprint".into(), ds.content_fingerprint());
    meta.insert("training_config_fingerprint".into(), training_fingerprint(cfg, kind.name()));

    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let mut report = match kind {
        ClassifierKind::Gcn => train_gcn_stage(cfg, &ds, &id, &dir, &mut meta)?,
        _ => train_dense_stage(cfg, kind, &ds, &id, &dir, &mut meta)?,
    };
    report.fingerprints.insert(AE_FINGERPRINT_KEY.into(), ae_fp);
    report.fingerprints.insert("embedding".into(), ds.content_fingerprint());
    report.fingerprints.insert("config".into(), cfg.fingerprint());
    if let Some(fp) = meta.get(crate::checkpoint::FINGERPRINT_KEY) {
        report.fingerprints.insert("model".into(), fp.clone());
    }
    let rp = report_path(out, &report, None);
    save_report(&rp, &report)?;
    Ok(TrainClfOutput {
        report,
        checkpoint: dir.join("model.ckpt"),
        report_path: rp,
    })
}

fn train_dense_stage(
    cfg: &RunConfig,
    kind: ClassifierKind,
    ds: &LabeledDataset,
    id: &str,
    dir: &Path,
    meta: &mut BTreeMap<String, String>,
) -> Result<EvalReport> {
    let labels = labels_for(cfg.task, &ds.labels);
    let sp = split(ds.len(), cfg.split_ratio, cfg.seed)?;
    let (x_train, x_test) = (ds.x.select_rows(&sp.train), ds.x.select_rows(&sp.test));
    let y_train: Vec<usize> = sp.train.iter().map(|&i| labels[i]).collect();
    let y_test: Vec<usize> = sp.test.iter().map(|&i| labels[i]).collect();
    let spec = cfg.classifier_spec(kind, ds.width())?;
    let trained = train_classifier(
        spec,
        LabeledView::new(&x_train, &y_train)?,
        Some(LabeledView::new(&x_test, &y_test)?),
        &cfg.training_for(kind),
    )?;
    let model = trained.model;
    let train_acc = accuracy(&model.predict(&x_train)?.labels, &y_train)?;
    let pred = model.predict(&x_test)?.labels;
    let mut report =
        EvalReport::from_predictions(id, ds.cell_type, TransferMode::InPopulation, cfg.task, Some(train_acc), &pred, &y_test)?;
    report.notes.extend(trained.warnings);
    report.notes.push(BINARY_NOTE.into());
    if kind == ClassifierKind::Attention {
        report.notes.push(ATTENTION_SCALE_NOTE.into());
    }
    meta.insert("split_fingerprint".into(), sp.membership_fingerprint());
    let ck = Checkpoint::from_classifier(&model, meta.clone());
    meta.insert(crate::checkpoint::FINGERPRINT_KEY.into(), model.fingerprint());
    ck.save(dir.join("model.ckpt"))?;
    write_text(&dir.join("history.csv"), &trained.history.to_csv())?;
    Ok(report)
}

/// Seeded subsample of at most `budget` rows, sorted.
pub fn node_subsample(n: usize, budget: usize, seed: u64) -> Vec<usize> {
    if n <= budget {
        return (0..n).collect();
    }
    let mut s = rng::stream(seed, "gcn/subsample");
    let mut idx = sample(&mut s, n, budget).into_vec();
    idx.sort_unstable();
    idx
}

fn train_gcn_stage(
    cfg: &RunConfig,
    ds: &LabeledDataset,
    id: &str,
    dir: &Path,
    meta: &mut BTreeMap<String, String>,
) -> Result<EvalReport> {
    let nodes = node_subsample(ds.len(), cfg.gcn.node_budget, cfg.seed);
    let mut notes = Vec::new();
    if nodes.len() < ds.len() {
        let msg = format!(
            "gcn graph built on a seeded subsample of {} of {} nodes (node budget)",
            nodes.len(),
            ds.len()
        );
        note(&msg);
        notes.push(msg);
    }
    let sub = ds.select_rows(&nodes);
    let labels = labels_for(cfg.task, &sub.labels);
    let graph = build_graph(&sub.x, &cfg.graph_config())?;
    let masks: Split = split(sub.len(), cfg.split_ratio, cfg.seed)?;
    let trained = train_gcn(
        &graph,
        &labels,
        &masks.train,
        &masks.test,
        cfg.gcn_spec(ds.width(), cfg.task),
        &cfg.gcn_training(),
    )?;
    let pred = crate::classifiers::argmax_labels(&trained.model.logits(&graph)?);
    let pick = |rows: &[usize], v: &[usize]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let train_acc = accuracy(&pick(&masks.train, &pred), &pick(&masks.train, &labels))?;
    let mut report = EvalReport::from_predictions(
        id,
        ds.cell_type,
        TransferMode::InPopulation,
        cfg.task,
        Some(train_acc),
        &pick(&masks.test, &pred),
        &pick(&masks.test, &labels),
    )?;
    report.notes.extend(notes);
    report.notes.extend(trained.warnings);
    report.notes.push(format!("graph: {} nodes, {} edges", graph.node_count(), graph.edges.len()));
    report.notes.push(BINARY_NOTE.into());
    report.fingerprints.insert("graph".into(), graph.fingerprint());

    let mut f = Fingerprinter::new("gcn-nodes");
    f.usizes(&nodes);
    meta.insert("node_subsample_fingerprint".into(), f.finish());
    meta.insert("split_fingerprint".into(), masks.membership_fingerprint());
    meta.insert("graph_fingerprint".into(), graph.fingerprint());
    meta.insert(
        "graph_config".into(),
        serde_json::to_string(&graph.config).expect("graph config serializes"),
    );
    let ck = Checkpoint::from_gcn(&trained.model, meta.clone());
    meta.insert(crate::checkpoint::FINGERPRINT_KEY.into(), trained.model.fingerprint());
    ck.save(dir.join("model.ckpt"))?;
    write_text(&dir.join("history.csv"), &trained.history.to_csv())?;
    write_text(&dir.join("graph.csv"), &graph.export())?;
    Ok(report)
}

/// Rows of the downstream file scored by a zero-shot evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subset {
    All,
    Train,
    Test,
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::All => "all",
            Subset::Train => "train",
            Subset::Test => "test",
        })
    }
}

impl FromStr for Subset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Subset::All),
            "train" => Ok(Subset::Train),
            "test" => Ok(Subset::Test),
            _ => Err(Error::Usage(format!("unknown subset {s:?}; expected all, train or test"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ZeroShotOutput {
    pub report: EvalReport,
    pub report_path: PathBuf,
}

/// Applies a trained classifier, unchanged, to another embedding file.
///
/// Seven-class models are scored on the seven labels, and their predictions
/// are binarized for F1. A binary-head model is scored against binarized
/// labels; `require_binary_head` refuses anything else.
pub fn cmd_zero_shot(
    cfg: &RunConfig,
    checkpoint: &Path,
    embedding: &Path,
    out: &Path,
    subset: Subset,
    require_binary_head: bool,
) -> Result<ZeroShotOutput> {
    let ck = Checkpoint::load(checkpoint)?;
    if ck.kind == ClassifierKind::Gcn.name() {
        return Err(Error::Usage(
            "gcn checkpoints are transductive and are not applied zero-shot; use an ffn or attn checkpoint".into(),
        ));
    }
    let trained_on = ck.meta.get(AE_FINGERPRINT_KEY).cloned().ok_or_else(|| {
        Error::Integrity(format!("{} records no autoencoder fingerprint", checkpoint.display()))
    })?;
    let id = ck.meta.get("model_id").cloned().unwrap_or_else(|| ck.kind.clone());
    let model: Classifier = ck.into_classifier()?;
    let (ds, ae_fp) = load_embedding(embedding)?;
    if ae_fp != trained_on {
        return Err(Error::Integrity(format!(
            "{} was embedded by autoencoder {ae_fp}, but the classifier was trained on embeddings from {trained_on}",
            embedding.display()
        )));
    }
    let task = match model.num_classes() {
        2 => Task::Binary,
        _ => Task::Multiclass,
    };
    if require_binary_head && task != Task::Binary {
        return Err(Error::Usage(format!(
            "--binary-head needs a two-class checkpoint; {} has {} classes",
            checkpoint.display(),
            model.num_classes()
        )));
    }
    write_config(out, "zero-shot", cfg)?;
    let rows: Vec<usize> = match subset {
        Subset::All => (0..ds.len()).collect(),
        Subset::Train => split(ds.len(), cfg.split_ratio, cfg.seed)?.train,
        Subset::Test => split(ds.len(), cfg.split_ratio, cfg.seed)?.test,
    };
    let x = ds.x.select_rows(&rows);
    let truth = labels_for(task, &rows.iter().map(|&i| ds.labels[i]).collect::<Vec<_>>());
    let pred = model.predict(&x)?.labels;
    let mut report = EvalReport::from_predictions(&id, ds.cell_type, TransferMode::ZeroShot, task, None, &pred, &truth)?;
    report.notes.push(format!("rows: {subset}"));
    report.notes.push(BINARY_NOTE.into());
    if model.kind() == ClassifierKind::Attention {
        report.notes.push(ATTENTION_SCALE_NOTE.into());
    }
    report.fingerprints.insert(AE_FINGERPRINT_KEY.into(), ae_fp);
    report.fingerprints.insert("embedding".into(), ds.content_fingerprint());
    report.fingerprints.insert("model".into(), model.fingerprint());
    let rp = report_path(out, &report, Some(subset));
    save_report(&rp, &report)?;
    Ok(ZeroShotOutput { report, report_path: rp })
}

/// The whole workflow on synthetic data: synthesize, train the autoencoder
/// on progenitors, embed every population, train each classifier on every
/// population, transfer the progenitor models zero-shot, and report.
pub fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<ReportSummary> {
    cfg.validate()?;
    write_config(out, "run", cfg)?;
    cmd_synth(cfg, out)?;
    let ae = cmd_train_ae(cfg, &dataset_path(out, CellType::Progenitor), out, false)?;
    note(&format!(
        "autoencoder: train mse {:.4}, test mse {:.4}",
        ae.train_mse, ae.test_mse
    ));
    for cell in CellType::ALL {
        cmd_embed(cfg, &ae.checkpoint, &dataset_path(out, cell), out)?;
    }
    let binary_cfg = RunConfig {
        task: Task::Binary,
        ..cfg.clone()
    };
    for kind in [ClassifierKind::Ffn, ClassifierKind::Attention, ClassifierKind::Gcn] {
        for cell in CellType::ALL {
            let r = cmd_train_clf(cfg, kind, &embedding_path(out, cell), out)?;
            note(&format!(
                "{} on {cell}: test accuracy {:.4}",
                r.report.model, r.report.test_accuracy
            ));
        }
    }
    for kind in [ClassifierKind::Ffn, ClassifierKind::Attention] {
        let mut checkpoints = vec![classifier_dir(out, &model_id(kind, cfg.task), CellType::Progenitor).join("model.ckpt")];
        if cfg.task != Task::Binary {
            checkpoints.push(cmd_train_clf(&binary_cfg, kind, &embedding_path(out, CellType::Progenitor), out)?.checkpoint);
        }
        for ck in &checkpoints {
            for cell in [CellType::Monocyte, CellType::Lymphocyte] {
                let r = cmd_zero_shot(cfg, ck, &embedding_path(out, cell), out, Subset::All, false)?;
                note(&format!(
                    "{} zero-shot on {cell}: binary F1 {:.4}",
                    r.report.model, r.report.binary_f1.value
                ));
            }
        }
    }
    cmd_report(out)
}
