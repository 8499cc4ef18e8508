mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lineage_core::metrics::EvalReport;

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn lineage(out: &Path, config: &Path, args: &[&str]) -> Output {
    Command::new(common::bin())
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("LINEAGE_OUT")
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Standalone config file; omitted keys take their defaults.
fn config_with(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn report(path: &Path) -> EvalReport {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_and_usage_exit_codes() {
    let o = Command::new(common::bin()).arg("--help").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let o = Command::new(common::bin()).arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = Command::new(common::bin())
        .args(["train-clf", "mlp", "x.lmx"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&lineage(&a, &cfg, &["synth"]));
    ok(&lineage(&b, &cfg, &["synth"]));
    ok(&lineage(&c, &cfg, &["--seed", "1", "synth"]));
    for cell in ["progenitor", "monocyte", "lymphocyte"] {
        let f = |d: &Path| fs::read(d.join("data").join(format!("{cell}.lmx"))).unwrap();
        assert_eq!(f(&a), f(&b), "{cell}");
        assert_ne!(f(&a), f(&c), "{cell}");
    }
}

#[test]
fn bad_configs_exit_one_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let priors = config_with(
        dir.path(),
        "priors.toml",
        "[synthetic]\ngenes = 20\nclass_priors = [0.5, 0.5, 0.1, 0.0, 0.0, 0.0, 0.0]\n",
    );
    let o = lineage(&dir.path().join("o"), &priors, &["synth"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("class_priors"), "{}", stderr(&o));

    let unknown = config_with(dir.path(), "unknown.toml", "[ffn]\nhidden3 = 4\n");
    let o = lineage(&dir.path().join("o"), &unknown, &["synth"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("hidden3"), "{}", stderr(&o));

    let heads = config_with(dir.path(), "heads.toml", "[attention]\nmodel_width = 256\nheads = 3\n");
    let o = lineage(&dir.path().join("o"), &heads, &["synth"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("divisible"), "{}", stderr(&o));
}

/// synth + train-ae + embed for every population under `out`.
fn prepare(out: &Path, cfg: &Path, seed: &str) {
    ok(&lineage(out, cfg, &["--seed", seed, "synth"]));
    let prog = out.join("data/progenitor.lmx");
    ok(&lineage(out, cfg, &["--seed", seed, "train-ae", p(&prog)]));
    for cell in ["progenitor", "monocyte", "lymphocyte"] {
        let ck = out.join("autoencoder/model.ckpt");
        let data = out.join(format!("data/{cell}.lmx"));
        ok(&lineage(out, cfg, &["--seed", seed, "embed", p(&ck), p(&data)]));
    }
}

#[test]
fn autoencoder_refuses_downstream_cells_unless_asked() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = config_with(
        dir.path(),
        "small.toml",
        "[synthetic]\ngenes = 40\nprogenitors = 200\nmonocytes = 100\nlymphocytes = 20\n\
         [autoencoder]\nlatent_width = 4\nencoder_widths = [8]\nepochs = 2\nbatch_size = 16\n",
    );
    ok(&lineage(&out, &cfg, &["synth"]));
    let mono = out.join("data/monocyte.lmx");
    let o = lineage(&out, &cfg, &["train-ae", p(&mono)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("progenitor"), "{}", stderr(&o));
    ok(&lineage(&out, &cfg, &["train-ae", "--allow-any-celltype", p(&mono)]));
}

#[test]
fn embedding_with_the_wrong_gene_count_is_a_dimension_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let out = dir.path().join("run");
    ok(&lineage(&out, &cfg, &["synth"]));
    ok(&lineage(&out, &cfg, &["train-ae", p(&out.join("data/progenitor.lmx"))]));

    let narrow_cfg = config_with(
        dir.path(),
        "narrow.toml",
        "[synthetic]\ngenes = 150\nprogenitors = 100\nmonocytes = 20\nlymphocytes = 20\n",
    );
    let other = dir.path().join("other");
    ok(&lineage(&other, &narrow_cfg, &["synth"]));
    let o = lineage(
        &out,
        &cfg,
        &["embed", p(&out.join("autoencoder/model.ckpt")), p(&other.join("data/monocyte.lmx"))],
    );
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("200") && e.contains("150"), "{e}");
}

#[test]
fn zero_shot_checks_the_autoencoder_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    prepare(&a, &cfg, "0");
    prepare(&b, &cfg, "1");
    ok(&lineage(&a, &cfg, &["train-clf", "ffn", p(&a.join("embeddings/progenitor.lmx"))]));
    let ck = a.join("classifiers/ffn-progenitor/model.ckpt");

    ok(&lineage(&a, &cfg, &["zero-shot", p(&ck), p(&a.join("embeddings/monocyte.lmx"))]));
    let o = lineage(&a, &cfg, &["zero-shot", p(&ck), p(&b.join("embeddings/monocyte.lmx"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let o = lineage(&a, &cfg, &["zero-shot", "--binary-head", p(&ck), p(&a.join("embeddings/monocyte.lmx"))]);
    assert_eq!(o.status.code(), Some(1));

    ok(&lineage(&a, &cfg, &["train-clf", "gcn", p(&a.join("embeddings/monocyte.lmx"))]));
    let gcn = a.join("classifiers/gcn-monocyte/model.ckpt");
    let o = lineage(&a, &cfg, &["zero-shot", p(&gcn), p(&a.join("embeddings/lymphocyte.lmx"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("transductive"), "{}", stderr(&o));
}

#[test]
fn zero_shot_on_the_held_out_split_reproduces_training_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let out = dir.path().join("run");
    prepare(&out, &cfg, "0");
    let emb = out.join("embeddings/progenitor.lmx");
    for (kind, task) in [("ffn", "multiclass-7"), ("attn", "multiclass-7"), ("ffn", "binary")] {
        ok(&lineage(&out, &cfg, &["train-clf", kind, "--task", task, p(&emb)]));
        let id = if task == "binary" { format!("{kind}-binary") } else { kind.to_string() };
        let ck = out.join(format!("classifiers/{id}-progenitor/model.ckpt"));
        ok(&lineage(&out, &cfg, &["zero-shot", "--subset", "test", p(&ck), p(&emb)]));
        let trained = report(&out.join(format!("reports/{id}.progenitor.in-population.json")));
        let replay = report(&out.join(format!("reports/{id}.progenitor.zero-shot.test.json")));
        assert_eq!(trained.test_accuracy, replay.test_accuracy, "{id}");
        assert_eq!(trained.confusion, replay.confusion, "{id}");
        assert_eq!(trained.binary_f1, replay.binary_f1, "{id}");
        assert_eq!(trained.test_count, replay.test_count, "{id}");
    }
}

#[test]
fn diverging_training_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_with(
        dir.path(),
        "hot.toml",
        "[synthetic]\ngenes = 50\nprogenitors = 300\nmonocytes = 20\nlymphocytes = 20\n\
         [autoencoder]\nlatent_width = 4\nencoder_widths = [8]\nepochs = 30\nbatch_size = 16\nlr = 1e30\n",
    );
    let out = dir.path().join("run");
    ok(&lineage(&out, &cfg, &["synth"]));
    let o = lineage(&out, &cfg, &["train-ae", p(&out.join("data/progenitor.lmx"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"), "out-of-range lr is flagged: {}", stderr(&o));
}

#[test]
fn full_run_is_complete_and_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let tables = ok(&lineage(&a, &cfg, &["run"]));
    ok(&lineage(&b, &cfg, &["run"]));
    assert!(tables.contains("Table 1") && tables.contains("Table 2"));
    assert!(!tables.contains("Gaps:"), "{tables}");
    assert!(!tables.contains("missing"), "{tables}");

    let mut names: Vec<_> = fs::read_dir(a.join("reports"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 15, "{names:?}");
    for n in &names {
        assert_eq!(fs::read(a.join("reports").join(n)).unwrap(), fs::read(b.join("reports").join(n)).unwrap(), "{n:?}");
    }
    for f in ["tables.txt", "results.csv", "pca.csv"] {
        assert_eq!(fs::read(a.join("report").join(f)).unwrap(), fs::read(b.join("report").join(f)).unwrap(), "{f}");
    }

    // One PCA row per embedded cell: 1200 + 300 + 120.
    let pca = fs::read_to_string(a.join("report/pca.csv")).unwrap();
    assert_eq!(pca.lines().count(), 1 + 1620);
    assert_eq!(pca.lines().next(), Some("x,y,cell_type,label"));

    // `report` alone regenerates identical tables from the run directory.
    let again = ok(&lineage(&a, &cfg, &["report", p(&a)]));
    assert!(again.starts_with(&tables[..tables.find("PCA").unwrap()]));
}
