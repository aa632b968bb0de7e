//! `report`: gathers run and sweep reports into paper-shaped markdown tables.

use std::fs;
use std::path::{Path, PathBuf};

use modbias::dataset::Regime;
use modbias::loss::LossKind;
use modbias::train::{read_report, read_sweep, Aggregate, RunReport, SweepKind, SweepReport};
use modbias::{Error, Result};

use crate::ReportArgs;

const MISSING: &str = "—";

#[derive(Debug, Default)]
pub struct Collected {
    pub runs: Vec<(PathBuf, RunReport)>,
    pub sweeps: Vec<(PathBuf, SweepReport)>,
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: e }
}

fn walk(dir: &Path, out: &mut Collected) -> Result<()> {
    let sweep = dir.join("sweep.json");
    if sweep.is_file() {
        out.sweeps.push((dir.to_path_buf(), read_sweep(&sweep)?));
        return Ok(());
    }
    let report = dir.join("report.json");
    if report.is_file() {
        out.runs.push((dir.to_path_buf(), read_report(&report)?));
    }
    let mut children: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| io(dir, e)))
        .collect::<Result<Vec<_>>>()?;
    children.sort();
    for child in children.into_iter().filter(|p| p.is_dir()) {
        walk(&child, out)?;
    }
    Ok(())
}

/// Finds every run and sweep under `root`, in path order.
pub fn collect(root: &Path) -> Result<Collected> {
    if !root.is_dir() {
        return Err(Error::NoRunsFound(root.to_path_buf()));
    }
    let mut out = Collected::default();
    walk(root, &mut out)?;
    if out.runs.is_empty() && out.sweeps.is_empty() {
        return Err(Error::NoRunsFound(root.to_path_buf()));
    }
    Ok(out)
}

fn model_label(model: &str) -> &str {
    match model {
        "mlp" => "MLPs",
        "lenet" => "LeNet",
        other => other,
    }
}

fn percent(a: &Aggregate) -> String {
    format!("{:.2} ± {:.2}", a.mean * 100.0, a.std * 100.0)
}

fn plain(a: &Aggregate) -> String {
    format!("{:.2} ± {:.2}", a.mean, a.std)
}

/// One summarized cell, kept at full precision for the CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub table: &'static str,
    pub row: String,
    pub column: String,
    pub aggregate: Aggregate,
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn markdown(&self) -> String {
        let mut out = format!("| {} |\n", self.header.join(" | "));
        out += &format!("|{}\n", "---|".repeat(self.header.len()));
        for r in &self.rows {
            out += &format!("| {} |\n", r.join(" | "));
        }
        out
    }
}

fn run_row_label(r: &RunReport) -> String {
    let model = model_label(r.config.model.kind.name()).to_string();
    match r.config.loss.kind {
        LossKind::Softmax => model,
        kind => format!("{model} ({})", kind.name()),
    }
}

fn table2(runs: &[(PathBuf, RunReport)], cells: &mut Vec<CellRecord>) -> Table {
    let mut labels: Vec<String> = Vec::new();
    for (_, r) in runs {
        let l = run_row_label(r);
        if !labels.contains(&l) {
            labels.push(l);
        }
    }
    let mut rows = Vec::new();
    for label in labels {
        let mut row = vec![label.clone()];
        for (regime, name) in [(Regime::Iid, "In-Domain"), (Regime::Ood, "OoD")] {
            let found = runs.iter().find(|(_, r)| run_row_label(r) == label && r.regime == Some(regime));
            match found {
                Some((_, r)) => {
                    row.push(percent(&r.test_accuracy));
                    row.push(plain(&r.test_loss));
                    cells.push(CellRecord {
                        table: "accuracy",
                        row: label.clone(),
                        column: format!("{name} ACC"),
                        aggregate: r.test_accuracy,
                    });
                    cells.push(CellRecord {
                        table: "accuracy",
                        row: label.clone(),
                        column: format!("{name} Loss"),
                        aggregate: r.test_loss,
                    });
                }
                None => row.extend([MISSING.to_string(), MISSING.to_string()]),
            }
        }
        rows.push(row);
    }
    let header = ["Method", "In-Domain ACC", "In-Domain Loss", "OoD ACC", "OoD Loss"];
    Table { header: header.iter().map(|s| s.to_string()).collect(), rows }
}

fn ordered_models<'a>(sweeps: impl Iterator<Item = &'a SweepReport>) -> Vec<String> {
    let mut models: Vec<String> = sweeps.map(|s| s.model.clone()).collect();
    models.sort_by_key(|m| match m.as_str() {
        "mlp" => (0, String::new()),
        "lenet" => (1, String::new()),
        other => (2, other.to_string()),
    });
    models.dedup();
    models
}

fn sorted_values(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn table6(sweeps: &[&SweepReport], cells: &mut Vec<CellRecord>) -> Table {
    let models = ordered_models(sweeps.iter().copied());
    let fixed = sorted_values(
        sweeps.iter().flat_map(|s| s.cells.iter()).filter(|c| c.method == "fixed").filter_map(|c| c.value),
    );
    let mut layout: Vec<(&str, String, &str, Option<f64>)> =
        vec![("Baseline", "-".into(), "baseline", None), ("NSL", "-".into(), "nsl", None)];
    for &m in &fixed {
        layout.push(("Fixed Margin", m.to_string(), "fixed", Some(m)));
    }
    layout.push(("Adapted Margin", "adaptive".into(), "adaptive", None));
    let mut rows = Vec::new();
    for (label, margin, method, value) in layout {
        let mut row = vec![label.to_string(), margin.clone()];
        for model in &models {
            let cell = sweeps.iter().filter(|s| &s.model == model).find_map(|s| s.cell(method, value));
            match cell {
                Some(c) => {
                    row.push(percent(&c.report.test_accuracy));
                    cells.push(CellRecord {
                        table: "margin-sweep",
                        row: format!("{label} {margin}"),
                        column: model_label(model).to_string(),
                        aggregate: c.report.test_accuracy,
                    });
                }
                None => row.push(MISSING.to_string()),
            }
        }
        rows.push(row);
    }
    let mut header = vec!["Method".to_string(), "Margin".to_string()];
    header.extend(models.iter().map(|m| model_label(m).to_string()));
    Table { header, rows }
}

fn fig6(sweeps: &[&SweepReport], cells: &mut Vec<CellRecord>) -> Table {
    let scales = sorted_values(sweeps.iter().flat_map(|s| s.cells.iter()).filter_map(|c| c.value));
    let mut keys: Vec<(String, String)> = Vec::new();
    for s in sweeps {
        for c in &s.cells {
            let k = (s.model.clone(), c.method.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
    }
    let mut rows = Vec::new();
    for (model, method) in keys {
        let mut row = vec![model_label(&model).to_string(), method.clone()];
        for &scale in &scales {
            let cell = sweeps.iter().filter(|s| s.model == model).find_map(|s| s.cell(&method, Some(scale)));
            match cell {
                Some(c) => {
                    row.push(percent(&c.report.test_accuracy));
                    cells.push(CellRecord {
                        table: "scale-sweep",
                        row: format!("{} {method}", model_label(&model)),
                        column: format!("s={scale}"),
                        aggregate: c.report.test_accuracy,
                    });
                }
                None => row.push(MISSING.to_string()),
            }
        }
        rows.push(row);
    }
    let mut header = vec!["Model".to_string(), "Method".to_string()];
    header.extend(scales.iter().map(|s| format!("s={s}")));
    Table { header, rows }
}

/// Markdown for every table that has data, plus the cell records behind it.
pub fn render(c: &Collected) -> (String, Vec<CellRecord>) {
    let mut cells = Vec::new();
    let mut sections = Vec::new();
    if !c.runs.is_empty() {
        let t = table2(&c.runs, &mut cells);
        sections.push(format!("### Test accuracy (%) and loss\n\n{}", t.markdown()));
    }
    let margin: Vec<&SweepReport> = c.sweeps.iter().map(|(_, s)| s).filter(|s| s.kind == SweepKind::Margin).collect();
    if !margin.is_empty() {
        let t = table6(&margin, &mut cells);
        sections.push(format!("### OoD accuracy (%) by margin\n\n{}", t.markdown()));
    }
    let scale: Vec<&SweepReport> = c.sweeps.iter().map(|(_, s)| s).filter(|s| s.kind == SweepKind::Scale).collect();
    if !scale.is_empty() {
        let t = fig6(&scale, &mut cells);
        sections.push(format!("### Accuracy (%) by scale\n\n{}", t.markdown()));
    }
    (sections.join("\n"), cells)
}

pub fn write_csv(path: &Path, cells: &[CellRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["table", "row", "column", "mean", "std", "n"])?;
    for c in cells {
        let a = c.aggregate;
        w.write_record([c.table, &c.row, &c.column, &a.mean.to_string(), &a.std.to_string(), &a.n.to_string()])?;
    }
    w.flush().map_err(|e| io(path, e))
}

pub fn run(a: ReportArgs) -> Result<()> {
    let collected = collect(&a.runs)?;
    let (markdown, cells) = render(&collected);
    print!("{markdown}");
    if let Some(out) = &a.out {
        fs::create_dir_all(out).map_err(|e| io(out, e))?;
        let md = out.join("report.md");
        fs::write(&md, &markdown).map_err(|e| io(&md, e))?;
        write_csv(&out.join("report.csv"), &cells)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aggregate(v: f64) -> Aggregate {
        Aggregate { mean: v, std: 0.01, n: 5 }
    }

    #[test]
    fn markdown_table_shape() {
        let t = Table { header: vec!["a".into(), "b".into()], rows: vec![vec!["1".into(), MISSING.into()]] };
        assert_eq!(t.markdown(), "| a | b |\n|---|---|\n| 1 | — |\n");
    }

    #[test]
    fn formats_percentages() {
        assert_eq!(percent(&aggregate(0.5555)), "55.55 ± 1.00");
        assert_eq!(plain(&aggregate(1.31)), "1.31 ± 0.01");
    }

    #[test]
    fn values_are_sorted_and_unique() {
        assert_eq!(sorted_values([0.5, 0.1, 0.5, 0.3].into_iter()), vec![0.1, 0.3, 0.5]);
    }
}
