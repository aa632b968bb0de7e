//! Two-layer perceptron: `input -> H (ReLU) -> D`.
//!
//! The first layer only visits nonzero inputs. Its weight gradient runs
//! input-major over the whole batch so each gradient row is written once
//! per batch.

use super::{axpy, axpy4, dot};

#[derive(Clone, Debug, PartialEq)]
pub struct MlpLayout {
    pub input: usize,
    pub hidden: usize,
    pub features: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    end: usize,
}

/// Batch activations, row-major by sample.
#[derive(Clone, Debug)]
pub struct MlpCache {
    batch: usize,
    /// Nonzero inputs grouped by input index: `col_start[j]..col_start[j+1]`
    /// indexes `entries` of `(sample, value)`.
    col_start: Vec<u32>,
    entries: Vec<(u32, f64)>,
    hidden: Vec<f64>,
    pub features: Vec<f64>,
}

/// `y += Σ a_i rows[i]`, four rows at a time.
fn accumulate_rows<'a>(y: &mut [f64], terms: impl ExactSizeIterator<Item = (f64, &'a [f64])>) {
    let mut pending: [(f64, &[f64]); 4] = [(0.0, &[]); 4];
    let mut n = 0;
    for t in terms {
        pending[n] = t;
        n += 1;
        if n == 4 {
            let [a, b, c, d] = pending;
            axpy4([a.0, b.0, c.0, d.0], [a.1, b.1, c.1, d.1], y);
            n = 0;
        }
    }
    for &(v, row) in &pending[..n] {
        axpy(v, row, y);
    }
}

impl MlpLayout {
    pub fn new(input: usize, hidden: usize, features: usize) -> Self {
        let w1 = 0;
        let b1 = w1 + input * hidden;
        let w2 = b1 + hidden;
        let b2 = w2 + hidden * features;
        let end = b2 + features;
        MlpLayout { input, hidden, features, w1, b1, w2, b2, end }
    }

    pub fn param_count(&self) -> usize {
        self.end
    }

    pub(super) fn weight_blocks(&self) -> Vec<(usize, usize, usize, bool)> {
        vec![
            (self.w1, self.input * self.hidden, self.input, true),
            (self.w2, self.hidden * self.features, self.hidden, false),
        ]
    }

    fn w1_row<'a>(&self, p: &'a [f64], j: usize) -> &'a [f64] {
        &p[self.w1 + j * self.hidden..self.w1 + (j + 1) * self.hidden]
    }

    pub fn forward(&self, p: &[f64], xs: &[&[f64]]) -> MlpCache {
        let (h, d, batch) = (self.hidden, self.features, xs.len());
        let mut col_start = vec![0u32; self.input + 1];
        let mut hidden = Vec::with_capacity(batch * h);
        for x in xs {
            let mut hs = p[self.b1..self.b1 + h].to_vec();
            let nonzero = x.iter().enumerate().filter(|(_, &v)| v != 0.0);
            for (j, _) in nonzero.clone() {
                col_start[j + 1] += 1;
            }
            let terms: Vec<(f64, &[f64])> = nonzero.map(|(j, &v)| (v, self.w1_row(p, j))).collect();
            accumulate_rows(&mut hs, terms.into_iter());
            hs.iter_mut().for_each(|v| *v = v.max(0.0));
            hidden.extend_from_slice(&hs);
        }
        for j in 0..self.input {
            col_start[j + 1] += col_start[j];
        }
        let mut fill: Vec<u32> = col_start[..self.input].to_vec();
        let mut entries = vec![(0u32, 0.0); col_start[self.input] as usize];
        for (s, x) in xs.iter().enumerate() {
            for (j, &v) in x.iter().enumerate() {
                if v != 0.0 {
                    entries[fill[j] as usize] = (s as u32, v);
                    fill[j] += 1;
                }
            }
        }

        let mut features = Vec::with_capacity(batch * d);
        for hs in hidden.chunks_exact(h) {
            let mut f = p[self.b2..self.b2 + d].to_vec();
            let terms: Vec<(f64, &[f64])> = hs
                .iter()
                .enumerate()
                .filter(|(_, &a)| a > 0.0)
                .map(|(k, &a)| (a, &p[self.w2 + k * d..self.w2 + (k + 1) * d]))
                .collect();
            accumulate_rows(&mut f, terms.into_iter());
            features.extend_from_slice(&f);
        }
        MlpCache { batch, col_start, entries, hidden, features }
    }

    pub fn backward(&self, p: &[f64], c: &MlpCache, dfeat: &[f64], g: &mut [f64]) {
        let (h, d) = (self.hidden, self.features);
        let mut dh = vec![0.0; c.batch * h];
        for s in 0..c.batch {
            let df = &dfeat[s * d..(s + 1) * d];
            axpy(1.0, df, &mut g[self.b2..self.b2 + d]);
            let hs = &c.hidden[s * h..(s + 1) * h];
            let dhs = &mut dh[s * h..(s + 1) * h];
            for (k, &a) in hs.iter().enumerate() {
                if a > 0.0 {
                    let row = self.w2 + k * d;
                    axpy(a, df, &mut g[row..row + d]);
                    dhs[k] = dot(&p[row..row + d], df);
                }
            }
            axpy(1.0, dhs, &mut g[self.b1..self.b1 + h]);
        }
        for j in 0..self.input {
            let col = &c.entries[c.col_start[j] as usize..c.col_start[j + 1] as usize];
            if col.is_empty() {
                continue;
            }
            let terms = col.iter().map(|&(s, v)| (v, &dh[s as usize * h..(s as usize + 1) * h]));
            accumulate_rows(&mut g[self.w1 + j * h..self.w1 + (j + 1) * h], terms);
        }
    }
}
