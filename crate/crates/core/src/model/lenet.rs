//! LeNet-style convnet on 28×28×3 inputs:
//! conv 5×5 (6) → ReLU → avgpool 2 → conv 5×5 (16) → ReLU → avgpool 2 →
//! fc 400→120 (ReLU) → fc 120→D.
//!
//! Activations are height-width-channel. Kernel storage is chosen for the
//! inner loops rather than readability:
//! - conv1 is `[in][kr][4 - kc][out]`: a nonzero input pixel scatters one
//!   contiguous 30-value run per kernel row into a padded output grid.
//! - conv2 is `[out][kr][kc][in]`: each output is a dot product with a
//!   150-value receptive field assembled from five contiguous runs.

use super::{axpy, axpy_n, dot, dot_n};

const K: usize = 5;
const IN_SIDE: usize = 28;
const IN_CH: usize = 3;
const C1: usize = 6;
const C2: usize = 16;
const FC1: usize = 120;
/// Side of the zero-padded conv1 output grid; covers every position a
/// pixel can reach.
const PAD: usize = IN_SIDE + K - 1;
/// One kernel row across all columns and channels.
const ROW1: usize = K * C1;
const TAPS1: usize = K * ROW1;
const ROW2: usize = K * C1;
const TAPS2: usize = K * ROW2;

#[derive(Clone, Debug, PartialEq)]
pub struct LeNetLayout {
    pub features: usize,
    conv1_side: usize,
    pool1_side: usize,
    conv2_side: usize,
    pool2_side: usize,
    flat: usize,
    c1w: usize,
    c1b: usize,
    c2w: usize,
    c2b: usize,
    f1w: usize,
    f1b: usize,
    f2w: usize,
    f2b: usize,
    end: usize,
}

/// Activations of one sample.
#[derive(Clone, Debug)]
struct SampleActs {
    /// Nonzero input pixels: `(row, col, rgb)`.
    pixels: Vec<(u8, u8, [f64; IN_CH])>,
    a1: Vec<f64>,
    p1: Vec<f64>,
    a2: Vec<f64>,
    p2: Vec<f64>,
    a3: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LeNetCache {
    samples: Vec<SampleActs>,
    /// Row-major `B × D`.
    pub features: Vec<f64>,
}

fn add_scaled(a: f64, x: &[f64], y: &mut [f64]) {
    match y.len() {
        C1 => axpy_n::<C1>(a, x, y),
        C2 => axpy_n::<C2>(a, x, y),
        _ => axpy(a, x, y),
    }
}

fn pool_forward(input: &[f64], side: usize, ch: usize) -> Vec<f64> {
    let half = side / 2;
    let mut out = vec![0.0; half * half * ch];
    for i in 0..half {
        for j in 0..half {
            let o = &mut out[(i * half + j) * ch..(i * half + j + 1) * ch];
            for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let at = ((2 * i + di) * side + 2 * j + dj) * ch;
                add_scaled(0.25, &input[at..at + ch], o);
            }
        }
    }
    out
}

/// Spreads pooled gradients back over the 2×2 windows, masked by the ReLU
/// that precedes the pool.
fn pool_relu_backward(dpool: &[f64], act: &[f64], side: usize, ch: usize) -> Vec<f64> {
    let half = side / 2;
    let mut out = vec![0.0; side * side * ch];
    for i in 0..half {
        for j in 0..half {
            let d = &dpool[(i * half + j) * ch..(i * half + j + 1) * ch];
            for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let at = ((2 * i + di) * side + 2 * j + dj) * ch;
                for c in 0..ch {
                    if act[at + c] > 0.0 {
                        out[at + c] = 0.25 * d[c];
                    }
                }
            }
        }
    }
    out
}

impl LeNetLayout {
    pub fn new(features: usize) -> Self {
        let conv1_side = IN_SIDE - K + 1;
        let pool1_side = conv1_side / 2;
        let conv2_side = pool1_side - K + 1;
        let pool2_side = conv2_side / 2;
        assert_eq!((conv1_side, pool1_side, conv2_side, pool2_side), (24, 12, 8, 4));
        let flat = pool2_side * pool2_side * C2;
        let c1w = 0;
        let c1b = c1w + IN_CH * TAPS1;
        let c2w = c1b + C1;
        let c2b = c2w + C2 * TAPS2;
        let f1w = c2b + C2;
        let f1b = f1w + flat * FC1;
        let f2w = f1b + FC1;
        let f2b = f2w + FC1 * features;
        let end = f2b + features;
        LeNetLayout {
            features,
            conv1_side,
            pool1_side,
            conv2_side,
            pool2_side,
            flat,
            c1w,
            c1b,
            c2w,
            c2b,
            f1w,
            f1b,
            f2w,
            f2b,
            end,
        }
    }

    pub fn param_count(&self) -> usize {
        self.end
    }

    pub(super) fn weight_blocks(&self) -> Vec<(usize, usize, usize, bool)> {
        vec![
            (self.c1w, IN_CH * TAPS1, K * K * IN_CH, true),
            (self.c2w, C2 * TAPS2, TAPS2, true),
            (self.f1w, self.flat * FC1, self.flat, true),
            (self.f2w, FC1 * self.features, FC1, false),
        ]
    }

    pub fn forward(&self, p: &[f64], xs: &[&[f64]]) -> LeNetCache {
        let mut samples = Vec::with_capacity(xs.len());
        let mut features = Vec::with_capacity(xs.len() * self.features);
        for x in xs {
            let (acts, f) = self.forward_one(p, x);
            samples.push(acts);
            features.extend_from_slice(&f);
        }
        LeNetCache { samples, features }
    }

    /// Receptive field of conv2 output `(r, c)`, ordered `[kr][kc][in]`.
    fn gather_field(&self, p1: &[f64], r: usize, c: usize, field: &mut [f64]) {
        let side = self.pool1_side;
        for kr in 0..K {
            let at = ((r + kr) * side + c) * C1;
            field[kr * ROW2..(kr + 1) * ROW2].copy_from_slice(&p1[at..at + ROW2]);
        }
    }

    fn forward_one(&self, p: &[f64], x: &[f64]) -> (SampleActs, Vec<f64>) {
        let s1 = self.conv1_side;
        let mut pixels = Vec::new();
        for (pix, rgb) in x.chunks_exact(IN_CH).enumerate() {
            if rgb.iter().any(|&v| v != 0.0) {
                pixels.push(((pix / IN_SIDE) as u8, (pix % IN_SIDE) as u8, [rgb[0], rgb[1], rgb[2]]));
            }
        }

        let mut pad = vec![0.0; PAD * PAD * C1];
        let mut contrib = [0.0; TAPS1];
        for &(r, c, rgb) in &pixels {
            let (r, c) = (r as usize, c as usize);
            contrib.fill(0.0);
            for (ci, &v) in rgb.iter().enumerate() {
                if v != 0.0 {
                    let w = self.c1w + ci * TAPS1;
                    axpy_n::<TAPS1>(v, &p[w..w + TAPS1], &mut contrib);
                }
            }
            for kr in 0..K {
                let at = ((r + K - 1 - kr) * PAD + c) * C1;
                axpy_n::<ROW1>(1.0, &contrib[kr * ROW1..(kr + 1) * ROW1], &mut pad[at..at + ROW1]);
            }
        }
        let mut a1 = vec![0.0; s1 * s1 * C1];
        let bias1 = &p[self.c1b..self.c1b + C1];
        for i in 0..s1 {
            for j in 0..s1 {
                let src = ((i + K - 1) * PAD + j + K - 1) * C1;
                let dst = (i * s1 + j) * C1;
                for co in 0..C1 {
                    a1[dst + co] = (pad[src + co] + bias1[co]).max(0.0);
                }
            }
        }
        let p1 = pool_forward(&a1, s1, C1);

        let s2 = self.conv2_side;
        let mut a2 = vec![0.0; s2 * s2 * C2];
        let mut field = [0.0; TAPS2];
        for r in 0..s2 {
            for c in 0..s2 {
                self.gather_field(&p1, r, c, &mut field);
                let out = &mut a2[(r * s2 + c) * C2..(r * s2 + c + 1) * C2];
                for (co, o) in out.iter_mut().enumerate() {
                    let w = self.c2w + co * TAPS2;
                    *o = (p[self.c2b + co] + dot_n::<TAPS2>(&field, &p[w..w + TAPS2])).max(0.0);
                }
            }
        }
        let p2 = pool_forward(&a2, s2, C2);
        debug_assert_eq!(self.pool2_side * self.pool2_side * C2, p2.len());

        let mut a3 = p[self.f1b..self.f1b + FC1].to_vec();
        for (j, &v) in p2.iter().enumerate() {
            if v != 0.0 {
                let row = self.f1w + j * FC1;
                axpy_n::<FC1>(v, &p[row..row + FC1], &mut a3);
            }
        }
        a3.iter_mut().for_each(|v| *v = v.max(0.0));

        let d = self.features;
        let mut features = p[self.f2b..self.f2b + d].to_vec();
        for (k, &v) in a3.iter().enumerate() {
            if v > 0.0 {
                let row = self.f2w + k * d;
                axpy(v, &p[row..row + d], &mut features);
            }
        }
        (SampleActs { pixels, a1, p1, a2, p2, a3 }, features)
    }

    pub fn backward(&self, p: &[f64], c: &LeNetCache, dfeat: &[f64], g: &mut [f64]) {
        let d = self.features;
        for (s, acts) in c.samples.iter().enumerate() {
            self.backward_one(p, acts, &dfeat[s * d..(s + 1) * d], g);
        }
    }

    fn backward_one(&self, p: &[f64], c: &SampleActs, dfeat: &[f64], g: &mut [f64]) {
        let d = self.features;
        axpy(1.0, dfeat, &mut g[self.f2b..self.f2b + d]);
        let mut da3 = vec![0.0; FC1];
        for (k, &v) in c.a3.iter().enumerate() {
            if v > 0.0 {
                let row = self.f2w + k * d;
                axpy(v, dfeat, &mut g[row..row + d]);
                da3[k] = dot(&p[row..row + d], dfeat);
            }
        }

        axpy_n::<FC1>(1.0, &da3, &mut g[self.f1b..self.f1b + FC1]);
        let mut dp2 = vec![0.0; self.flat];
        for (j, &v) in c.p2.iter().enumerate() {
            // a zero pooled value means its whole window was cut by the ReLU
            if v != 0.0 {
                let row = self.f1w + j * FC1;
                axpy_n::<FC1>(v, &da3, &mut g[row..row + FC1]);
                dp2[j] = dot_n::<FC1>(&p[row..row + FC1], &da3);
            }
        }

        let (s2, ps1) = (self.conv2_side, self.pool1_side);
        let dz2 = pool_relu_backward(&dp2, &c.a2, s2, C2);
        let mut dp1 = vec![0.0; ps1 * ps1 * C1];
        let mut field = [0.0; TAPS2];
        let mut dfield = [0.0; TAPS2];
        for r in 0..s2 {
            for cc in 0..s2 {
                let dz = &dz2[(r * s2 + cc) * C2..(r * s2 + cc + 1) * C2];
                if dz.iter().all(|&v| v == 0.0) {
                    continue;
                }
                axpy_n::<C2>(1.0, dz, &mut g[self.c2b..self.c2b + C2]);
                self.gather_field(&c.p1, r, cc, &mut field);
                dfield.fill(0.0);
                for (co, &dv) in dz.iter().enumerate() {
                    if dv != 0.0 {
                        let w = self.c2w + co * TAPS2;
                        axpy_n::<TAPS2>(dv, &field, &mut g[w..w + TAPS2]);
                        axpy_n::<TAPS2>(dv, &p[w..w + TAPS2], &mut dfield);
                    }
                }
                for kr in 0..K {
                    let at = ((r + kr) * ps1 + cc) * C1;
                    axpy_n::<ROW2>(1.0, &dfield[kr * ROW2..(kr + 1) * ROW2], &mut dp1[at..at + ROW2]);
                }
            }
        }

        let s1 = self.conv1_side;
        let dz1 = pool_relu_backward(&dp1, &c.a1, s1, C1);
        let mut dpad = vec![0.0; PAD * PAD * C1];
        for i in 0..s1 {
            let src = i * s1 * C1;
            let dst = ((i + K - 1) * PAD + K - 1) * C1;
            dpad[dst..dst + s1 * C1].copy_from_slice(&dz1[src..src + s1 * C1]);
        }
        for o in dz1.chunks_exact(C1) {
            axpy_n::<C1>(1.0, o, &mut g[self.c1b..self.c1b + C1]);
        }
        let mut dcontrib = [0.0; TAPS1];
        for &(r, cc, rgb) in &c.pixels {
            let (r, cc) = (r as usize, cc as usize);
            for kr in 0..K {
                let at = ((r + K - 1 - kr) * PAD + cc) * C1;
                dcontrib[kr * ROW1..(kr + 1) * ROW1].copy_from_slice(&dpad[at..at + ROW1]);
            }
            for (ci, &v) in rgb.iter().enumerate() {
                if v != 0.0 {
                    let w = self.c1w + ci * TAPS1;
                    axpy_n::<TAPS1>(v, &dcontrib, &mut g[w..w + TAPS1]);
                }
            }
        }
    }
}
