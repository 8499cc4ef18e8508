use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::CellType;
use crate::error::{Error, Result};
use crate::metrics::{pca_project, EvalReport, TransferMode};
use crate::tensor::Matrix;

use super::{embedding_path, load_embedding, load_report, write_text};

#[derive(Clone, Debug)]
pub struct ReportSummary {
    pub reports: Vec<(String, EvalReport)>,
    /// Expected table cells with no report behind them.
    pub gaps: Vec<String>,
    pub tables: PathBuf,
    pub results_csv: PathBuf,
    pub pca_rows: usize,
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn find<'a>(
    reports: &'a [(String, EvalReport)],
    model: &str,
    cell: CellType,
    mode: TransferMode,
) -> Option<&'a EvalReport> {
    let stem = format!("{model}.{cell}.{mode}");
    reports.iter().find(|(s, _)| *s == stem).map(|(_, r)| r)
}

/// Aggregates `reports/*.json` and the embeddings of a run directory into
/// the two result tables, a flat CSV and PCA coordinates. Missing runs are
/// listed as gaps rather than failing the report.
pub fn cmd_report(run_dir: &Path) -> Result<ReportSummary> {
    let dir = run_dir.join("reports");
    let mut reports = Vec::new();
    if dir.is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for p in paths {
            let stem = p.file_stem().expect("json file").to_string_lossy().into_owned();
            reports.push((stem, load_report(&p)?));
        }
    }
    let mut gaps = Vec::new();
    let mut models: BTreeSet<String> = reports.iter().map(|(_, r)| r.model.clone()).collect();
    for base in ["ffn", "attn", "gcn"] {
        models.insert(base.to_string());
    }

    let mut text = String::new();
    text.push_str("Table 1. Classification on progenitor cells\n");
    text.push_str(&format!(
        "{:<14}{:>12}{:>12}{:>22}{:>22}\n",
        "Model", "Train Acc", "Test Acc", "Monocytes (ZS F1)", "Lymphocytes (ZS F1)"
    ));
    for m in &models {
        let own = find(&reports, m, CellType::Progenitor, TransferMode::InPopulation);
        let mut cells = Vec::new();
        match own {
            Some(r) => {
                cells.push(r.train_accuracy.map_or_else(|| "n/a".into(), pct));
                cells.push(pct(r.test_accuracy));
            }
            None => {
                gaps.push(format!("{m} on progenitor (in-population)"));
                cells.extend(["missing".to_string(), "missing".to_string()]);
            }
        }
        for cell in [CellType::Monocyte, CellType::Lymphocyte] {
            match find(&reports, m, cell, TransferMode::ZeroShot) {
                Some(r) => cells.push(format!("{:.4}", r.binary_f1.value)),
                None if m.starts_with("gcn") => cells.push("n/a".into()),
                None => {
                    gaps.push(format!("{m} zero-shot on {cell}"));
                    cells.push("missing".into());
                }
            }
        }
        text.push_str(&format!(
            "{:<14}{:>12}{:>12}{:>22}{:>22}\n",
            m, cells[0], cells[1], cells[2], cells[3]
        ));
    }

    // Binary-head variants are only trained upstream unless a run adds them.
    let downstream: BTreeSet<&String> = models
        .iter()
        .filter(|m| {
            ["ffn", "attn", "gcn"].contains(&m.as_str())
                || reports
                    .iter()
                    .any(|(_, r)| r.model == **m && r.cell_type != CellType::Progenitor && r.mode == TransferMode::InPopulation)
        })
        .collect();
    text.push_str("\nTable 2. Classification on downstream cell types (test accuracy)\n");
    text.push_str(&format!("{:<14}{:>14}{:>14}\n", "Model", "Monocytes", "Lymphocytes"));
    for m in downstream {
        let mut cells = Vec::new();
        for cell in [CellType::Monocyte, CellType::Lymphocyte] {
            match find(&reports, m, cell, TransferMode::InPopulation) {
                Some(r) => cells.push(pct(r.test_accuracy)),
                None => {
                    gaps.push(format!("{m} on {cell} (in-population)"));
                    cells.push("missing".into());
                }
            }
        }
        text.push_str(&format!("{:<14}{:>14}{:>14}\n", m, cells[0], cells[1]));
    }
    text.push_str("\nBinary F1 compares Normal (0) against any disease (1).\n");

    let out = run_dir.join("report");
    let pca_rows = write_pca(run_dir, &out, &mut text, &mut gaps)?;

    if !gaps.is_empty() {
        text.push_str("\nGaps:\n");
        for g in &gaps {
            text.push_str(&format!("  {g}\n"));
        }
    }
    let tables = out.join("tables.txt");
    write_text(&tables, &text)?;

    let mut csv = format!("report,{}\n", EvalReport::CSV_HEADER);
    for (stem, r) in &reports {
        csv.push_str(&format!("{stem},{}\n", r.csv_row()));
    }
    let results_csv = out.join("results.csv");
    write_text(&results_csv, &csv)?;
    Ok(ReportSummary {
        reports,
        gaps,
        tables,
        results_csv,
        pca_rows,
    })
}

fn pca_csv(proj: &Matrix<f64>, cells: &[CellType], labels: &[usize]) -> String {
    let mut s = String::from("x,y,cell_type,label\n");
    for (i, (c, l)) in cells.iter().zip(labels).enumerate() {
        s.push_str(&format!("{:.6},{:.6},{c},{l}\n", proj[(i, 0)], proj[(i, 1)]));
    }
    s
}

/// Joint PCA over every embedded population plus one PCA per population.
fn write_pca(run_dir: &Path, out: &Path, text: &mut String, gaps: &mut Vec<String>) -> Result<usize> {
    let mut rows: Vec<f32> = Vec::new();
    let (mut cells, mut labels) = (Vec::new(), Vec::new());
    let mut width = None;
    text.push_str("\nPCA of latent embeddings (explained variance ratio, PC1 / PC2)\n");
    for cell in CellType::ALL {
        let path = embedding_path(run_dir, cell);
        if !path.exists() {
            gaps.push(format!("{cell} embedding"));
            continue;
        }
        let (ds, _) = load_embedding(&path)?;
        if *width.get_or_insert(ds.width()) != ds.width() {
            return Err(Error::width(format!("embedding {}", path.display()), width.unwrap(), ds.width()));
        }
        if ds.len() >= 2 && ds.width() >= 2 {
            let pca = pca_project(&ds.x, 2)?;
            write_text(
                &out.join(format!("pca-{cell}.csv")),
                &pca_csv(&pca.projection, &vec![cell; ds.len()], &ds.labels),
            )?;
            text.push_str(&format!(
                "  {:<12}{:.4} / {:.4}\n",
                cell.name(),
                pca.explained_ratio[0],
                pca.explained_ratio[1]
            ));
        }
        rows.extend_from_slice(ds.x.as_slice());
        cells.extend(std::iter::repeat_n(cell, ds.len()));
        labels.extend_from_slice(&ds.labels);
    }
    let Some(d) = width else { return Ok(0) };
    let all = Matrix::from_vec(cells.len(), d, rows)?;
    if all.rows() < 2 || d < 2 {
        return Ok(0);
    }
    let pca = pca_project(&all, 2)?;
    text.push_str(&format!(
        "  {:<12}{:.4} / {:.4}\n",
        "all", pca.explained_ratio[0], pca.explained_ratio[1]
    ));
    write_text(&out.join("pca.csv"), &pca_csv(&pca.projection, &cells, &labels))?;
    Ok(all.rows())
}
