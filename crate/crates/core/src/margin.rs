//! Bias-conditional label counts and the adaptive margin table derived from
//! them.
//!
//! For bias factor `k` and class `i`, with `n[k][i]` the number of training
//! samples of class `i` carrying factor `k`:
//!
//! ```text
//! m[k][i] = 1 - (n[k][i] + eps) / (sum_j n[k][j] + eps)
//! ```
//!
//! Frequent classes under a factor get small margins, rare ones large.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// `counts[k][i]`: samples of class `i` with bias factor `k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasCounts {
    counts: Vec<Vec<u64>>,
    omega: usize,
}

impl BiasCounts {
    pub fn zeros(factors: usize, omega: usize) -> Self {
        BiasCounts { counts: vec![vec![0; omega]; factors], omega }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let omega = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != omega) {
            return Err(Error::RowLengthMismatch { found: r.len(), expected: omega });
        }
        Ok(BiasCounts { counts: rows, omega })
    }

    pub fn factors(&self) -> usize {
        self.counts.len()
    }

    pub fn omega(&self) -> usize {
        self.omega
    }

    pub fn row(&self, k: usize) -> &[u64] {
        &self.counts[k]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, k: usize, i: usize) -> u64 {
        self.counts[k][i]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Row `k` normalized to a distribution; `None` for an empty row.
    pub fn conditional(&self, k: usize) -> Option<Vec<f64>> {
        let sum: u64 = self.counts[k].iter().sum();
        (sum > 0).then(|| self.counts[k].iter().map(|&n| n as f64 / sum as f64).collect())
    }

    fn add(&mut self, other: &BiasCounts) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Counts `(bias_factor, label)` pairs into a `factors × omega` matrix.
pub fn count_bias(labels: &[u8], bias_factors: &[u8], factors: usize, omega: usize) -> Result<BiasCounts> {
    if labels.len() != bias_factors.len() {
        return Err(Error::ShapeMismatch(format!("{} labels vs {} bias factors", labels.len(), bias_factors.len())));
    }
    let mut counts = BiasCounts::zeros(factors, omega);
    for (&i, &k) in labels.iter().zip(bias_factors) {
        let (i, k) = (i as usize, k as usize);
        if i >= omega {
            return Err(Error::IndexOutOfRange { what: "label", value: i, limit: omega });
        }
        if k >= factors {
            return Err(Error::IndexOutOfRange { what: "bias factor", value: k, limit: factors });
        }
        counts.counts[k][i] += 1;
    }
    Ok(counts)
}

/// Sharded version of [`count_bias`]; shards are summed in order.
pub fn count_bias_sharded(
    labels: &[u8],
    bias_factors: &[u8],
    factors: usize,
    omega: usize,
    exec: crate::exec::Execution,
) -> Result<BiasCounts> {
    if labels.len() != bias_factors.len() {
        return count_bias(labels, bias_factors, factors, omega);
    }
    let pairs: Vec<(u8, u8)> = labels.iter().copied().zip(bias_factors.iter().copied()).collect();
    let shards = exec.map_chunks(&pairs, 8192, |chunk| {
        let (l, k): (Vec<u8>, Vec<u8>) = chunk.iter().copied().unzip();
        count_bias(&l, &k, factors, omega)
    });
    let mut total = BiasCounts::zeros(factors, omega);
    for shard in shards {
        total.add(&shard?);
    }
    Ok(total)
}

/// Adaptive margins `m[k][i]`, looked up per sample by its own bias factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginTable {
    margins: Vec<Vec<f64>>,
    pub epsilon: f64,
}

impl MarginTable {
    pub fn from_rows(margins: Vec<Vec<f64>>, epsilon: f64) -> Result<Self> {
        let omega = margins.first().map_or(0, Vec::len);
        if let Some(r) = margins.iter().find(|r| r.len() != omega) {
            return Err(Error::RowLengthMismatch { found: r.len(), expected: omega });
        }
        Ok(MarginTable { margins, epsilon })
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.margins[k]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.margins
    }

    pub fn factors(&self) -> usize {
        self.margins.len()
    }

    pub fn omega(&self) -> usize {
        self.margins.first().map_or(0, Vec::len)
    }
}

/// Evaluates the margin formula row by row.
///
/// An all-zero row gives `(0 + eps) / (0 + eps) = 1` for every class, i.e. all
/// margins are zero for a bias factor never seen in training.
pub fn margins_from_counts(counts: &BiasCounts, epsilon: f64) -> Result<MarginTable> {
    if !(epsilon > 0.0) {
        return Err(Error::ConfigInvalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let margins = counts
        .rows()
        .iter()
        .map(|row| {
            let total = row.iter().sum::<u64>() as f64;
            row.iter().map(|&n| 1.0 - (n as f64 + epsilon) / (total + epsilon)).collect()
        })
        .collect();
    Ok(MarginTable { margins, epsilon })
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(file))
}

/// Reads `bias_factor,label,count` rows. A leading header row is allowed.
/// Pairs that never appear are zero; dimensions are `max index + 1`.
pub fn load_counts_csv(path: &Path) -> Result<BiasCounts> {
    let mut entries = Vec::new();
    for (idx, rec) in csv_reader(path)?.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(idx + 1, |p| p.line() as usize);
        if idx == 0 && rec.get(0) == Some("bias_factor") {
            continue;
        }
        if rec.len() != 3 {
            return Err(Error::Parse { line, message: format!("expected 3 fields, found {}", rec.len()) });
        }
        let field = |j: usize| -> Result<i64> {
            rec[j].parse::<i64>().map_err(|e| Error::Parse { line, message: format!("{:?}: {e}", &rec[j]) })
        };
        let (k, i, n) = (field(0)?, field(1)?, field(2)?);
        if k < 0 || i < 0 {
            return Err(Error::Parse { line, message: "negative index".into() });
        }
        if n < 0 {
            return Err(Error::NegativeCount { line });
        }
        entries.push((k as usize, i as usize, n as u64));
    }
    let factors = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
    let omega = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
    let mut counts = BiasCounts::zeros(factors, omega);
    for (k, i, n) in entries {
        counts.counts[k][i] += n;
    }
    Ok(counts)
}

pub fn save_counts_csv(counts: &BiasCounts, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bias_factor", "label", "count"])?;
    for (k, row) in counts.rows().iter().enumerate() {
        for (i, n) in row.iter().enumerate() {
            w.write_record([k.to_string(), i.to_string(), n.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `bias_factor,label,margin` with 9 decimal digits.
pub fn save_margin_table(table: &MarginTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bias_factor", "label", "margin"])?;
    for (k, row) in table.rows().iter().enumerate() {
        for (i, m) in row.iter().enumerate() {
            w.write_record([k.to_string(), i.to_string(), format!("{m:.9}")])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_margin_table(path: &Path) -> Result<MarginTable> {
    let mut entries = Vec::new();
    for (idx, rec) in csv_reader(path)?.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(idx + 1, |p| p.line() as usize);
        if idx == 0 && rec.get(0) == Some("bias_factor") {
            continue;
        }
        if rec.len() != 3 {
            return Err(Error::Parse { line, message: format!("expected 3 fields, found {}", rec.len()) });
        }
        let parse_idx = |j: usize| -> Result<usize> {
            rec[j].parse().map_err(|e| Error::Parse { line, message: format!("{:?}: {e}", &rec[j]) })
        };
        let (k, i) = (parse_idx(0)?, parse_idx(1)?);
        let m: f64 = rec[2].parse().map_err(|e| Error::Parse { line, message: format!("{:?}: {e}", &rec[2]) })?;
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::Parse { line, message: format!("margin {m} outside [0, 1]") });
        }
        entries.push((k, i, m));
    }
    let factors = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
    let omega = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
    let mut margins = vec![vec![0.0; omega]; factors];
    for (k, i, m) in entries {
        margins[k][i] = m;
    }
    Ok(MarginTable { margins, epsilon: DEFAULT_EPSILON })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Execution;

    #[test]
    fn empty_stream_gives_zero_matrix() {
        let c = count_bias(&[], &[], 10, 10).unwrap();
        assert_eq!(c.total(), 0);
        assert_eq!(c.factors(), 10);
        assert!(c.rows().iter().all(|r| r.iter().all(|&n| n == 0)));
    }

    #[test]
    fn direct_count() {
        let mut labels = vec![0u8; 90];
        labels.extend(vec![1u8; 10]);
        let c = count_bias(&labels, &[0u8; 100], 10, 10).unwrap();
        assert_eq!(&c.row(0)[..3], &[90, 10, 0]);
        assert_eq!(c.total(), 100);
    }

    #[test]
    fn out_of_range_indices() {
        assert!(matches!(count_bias(&[10], &[0], 10, 10), Err(Error::IndexOutOfRange { what: "label", .. })));
        assert!(matches!(count_bias(&[0], &[3], 3, 10), Err(Error::IndexOutOfRange { what: "bias factor", .. })));
    }

    #[test]
    fn sharded_count_matches() {
        let labels: Vec<u8> = (0..20_000u32).map(|i| (i * 7 % 10) as u8).collect();
        let factors: Vec<u8> = (0..20_000u32).map(|i| (i * 3 % 10) as u8).collect();
        let a = count_bias(&labels, &factors, 10, 10).unwrap();
        for exec in [Execution::Sequential, Execution::Parallel] {
            assert_eq!(count_bias_sharded(&labels, &factors, 10, 10, exec).unwrap(), a);
        }
    }

    #[test]
    fn margins_for_ninety_ten_row() {
        let counts = BiasCounts::from_rows(vec![vec![90, 10]]).unwrap();
        let t = margins_from_counts(&counts, 1e-6).unwrap();
        // 1 - 90.000001/100.000001 and 1 - 10.000001/100.000001
        assert!((t.row(0)[0] - 0.1).abs() < 1e-8);
        assert!((t.row(0)[1] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn uniform_row_margins() {
        let counts = BiasCounts::from_rows(vec![vec![50; 10]]).unwrap();
        let t = margins_from_counts(&counts, 1e-6).unwrap();
        assert!(t.row(0).iter().all(|&m| (m - 0.9).abs() < 1e-8));
    }

    #[test]
    fn empty_row_margins_are_zero() {
        let counts = BiasCounts::zeros(2, 4);
        let t = margins_from_counts(&counts, 1e-6).unwrap();
        assert!(t.rows().iter().flatten().all(|&m| m == 0.0));
    }

    #[test]
    fn rejects_non_positive_epsilon() {
        assert!(margins_from_counts(&BiasCounts::zeros(1, 1), 0.0).is_err());
    }

    #[test]
    fn counts_csv_reads_rows_and_rejects_bad_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        fs::write(&p, "0,0,90\n0,1,10\n").unwrap();
        let c = load_counts_csv(&p).unwrap();
        assert_eq!(c.rows(), &[vec![90, 10]]);

        fs::write(&p, "0,0,1\na,b,c\n").unwrap();
        assert!(matches!(load_counts_csv(&p), Err(Error::Parse { line: 2, .. })));
        fs::write(&p, "0,0,-4\n").unwrap();
        assert!(matches!(load_counts_csv(&p), Err(Error::NegativeCount { line: 1 })));
    }

    #[test]
    fn margin_table_csv_has_nine_decimals() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let counts = BiasCounts::from_rows(vec![vec![3, 1], vec![0, 7]]).unwrap();
        let t = margins_from_counts(&counts, 1e-6).unwrap();
        save_margin_table(&t, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let first = text.lines().nth(1).unwrap();
        assert!(first.starts_with("0,0,0.2499999"), "{first}");
        assert_eq!(first.rsplit('.').next().unwrap().len(), 9);
        let back = load_margin_table(&p).unwrap();
        for (a, b) in back.rows().iter().flatten().zip(t.rows().iter().flatten()) {
            assert!((a - b).abs() <= 5e-10);
        }
    }
}
