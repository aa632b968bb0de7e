//! Finite-difference gradient checks shared by the oracle tests and the
//! acceptance run.
#![allow(dead_code)]

use modbias::dataset::{NUM_CLASSES, RGB_LEN};
use modbias::loss::{head_loss, linear_softmax_loss, lmcl_loss, mmdb_loss, nsl_loss, LossConfig, LossGrad, LossKind};
use modbias::model::{backward, forward, init_params, ModelSpec, Params};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LOSS_TOL: f64 = 1e-5;
pub const LOSS_FLOOR: f64 = 1e-5;
pub const MODEL_TOL: f64 = 1e-4;

/// Relative error with an absolute floor so that entries which are zero up to
/// rounding do not blow up the ratio.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Fourth-order central difference.
fn derivative(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}

pub struct Draw {
    pub w: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: f64,
    pub m: f64,
    pub row: Vec<f64>,
}

pub fn draw(rng: &mut ChaCha8Rng) -> Draw {
    let omega = rng.gen_range(2..12);
    let d = rng.gen_range(2..16);
    let w = (0..omega * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mut y = vec![0.0; omega];
    y[rng.gen_range(0..omega)] = 1.0;
    Draw {
        w,
        x,
        y,
        s: rng.gen_range(1.0..32.0),
        m: rng.gen_range(0.0..0.9),
        row: (0..omega).map(|_| rng.gen_range(0.0..1.0)).collect(),
    }
}

/// Worst relative error over every input and weight coordinate.
pub fn loss_error(f: impl Fn(&[f64], &[f64]) -> LossGrad, w: &[f64], x: &[f64]) -> f64 {
    let g = f(w, x);
    let mut worst: f64 = 0.0;
    let h = 1e-4;
    for i in 0..x.len() {
        let num = derivative(
            |v| {
                let mut xp = x.to_vec();
                xp[i] = v;
                f(w, &xp).loss
            },
            x[i],
            h,
        );
        worst = worst.max(rel_err(g.dl_dx[i], num, LOSS_FLOOR));
    }
    for i in 0..w.len() {
        let num = derivative(
            |v| {
                let mut wp = w.to_vec();
                wp[i] = v;
                f(&wp, x).loss
            },
            w[i],
            h,
        );
        worst = worst.max(rel_err(g.dl_dw[i], num, LOSS_FLOOR));
    }
    worst
}

pub const LOSS_NAMES: [&str; 4] = ["softmax", "nsl", "lmcl", "mmdb"];

/// Worst error of each loss over `draws` random heads.
pub fn loss_errors(seed: u64, draws: usize) -> [f64; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 4];
    for _ in 0..draws {
        let d = draw(&mut rng);
        let errs = [
            loss_error(|w, x| linear_softmax_loss(w, x, &d.y).unwrap(), &d.w, &d.x),
            loss_error(|w, x| nsl_loss(w, x, &d.y, d.s).unwrap(), &d.w, &d.x),
            loss_error(|w, x| lmcl_loss(w, x, &d.y, d.s, d.m).unwrap(), &d.w, &d.x),
            loss_error(|w, x| mmdb_loss(w, x, &d.y, d.s, &d.row).unwrap(), &d.w, &d.x),
        ];
        for (a, e) in worst.iter_mut().zip(errs) {
            *a = a.max(e);
        }
    }
    worst
}

fn sparse_image(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..RGB_LEN).map(|_| if rng.gen_bool(0.2) { rng.gen_range(0.0..1.0) } else { 0.0 }).collect()
}

struct Batch {
    xs: Vec<Vec<f64>>,
    ys: Vec<Vec<f64>>,
    rows: Vec<Vec<f64>>,
}

fn batch(rng: &mut ChaCha8Rng, n: usize) -> Batch {
    let mut b = Batch { xs: vec![], ys: vec![], rows: vec![] };
    for _ in 0..n {
        b.xs.push(sparse_image(rng));
        let mut y = vec![0.0; NUM_CLASSES];
        y[rng.gen_range(0..NUM_CLASSES)] = 1.0;
        b.ys.push(y);
        b.rows.push((0..NUM_CLASSES).map(|_| rng.gen_range(0.0..1.0)).collect());
    }
    b
}

fn total_loss(params: &Params, cfg: &LossConfig, b: &Batch) -> f64 {
    let (feats, _) = forward(params, &b.xs).unwrap();
    feats
        .iter()
        .zip(&b.ys)
        .zip(&b.rows)
        .map(|((f, y), row)| head_loss(cfg, params.head(), f, y, Some(row)).unwrap().loss)
        .sum()
}

fn full_gradient(params: &Params, cfg: &LossConfig, b: &Batch) -> Vec<f64> {
    let (feats, cache) = forward(params, &b.xs).unwrap();
    let head_offset = params.feature_param_count();
    let mut head = vec![0.0; params.head().len()];
    let mut dfeat = Vec::new();
    for ((f, y), row) in feats.iter().zip(&b.ys).zip(&b.rows) {
        let g = head_loss(cfg, params.head(), f, y, Some(row)).unwrap();
        head.iter_mut().zip(&g.dl_dw).for_each(|(a, b)| *a += b);
        dfeat.push(g.dl_dx);
    }
    let mut grad = backward(params, cache, &dfeat).unwrap();
    grad[head_offset..].copy_from_slice(&head);
    grad
}

#[derive(Debug, Clone, Copy)]
pub struct ModelCheck {
    pub worst: f64,
    pub coords: usize,
    /// Coordinates whose step had to shrink past an activation switch.
    pub kinks: usize,
}

/// Checks `coords` parameter coordinates of a whole model on a small batch.
pub fn model_check(spec: ModelSpec, kind: LossKind, seed: u64, coords: usize) -> ModelCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_params(spec, seed).unwrap();
    let b = batch(&mut rng, 4);
    let cfg = LossConfig { kind, scale: 16.0, fixed_margin: 0.35, ..LossConfig::new(kind) };
    let grad = full_gradient(&params, &cfg, &b);
    let nonzero: Vec<usize> = (0..grad.len()).filter(|&i| grad[i] != 0.0).collect();
    assert!(!nonzero.is_empty());
    let mut check = ModelCheck { worst: 0.0, coords, kinks: 0 };
    for c in 0..coords {
        // Half of the coordinates come from the support of the gradient so that
        // sparse inputs do not leave the check mostly comparing zeros.
        let i = if c % 2 == 0 { nonzero[rng.gen_range(0..nonzero.len())] } else { rng.gen_range(0..grad.len()) };
        let base = total_loss(&params, &cfg, &b);
        let mut h = 1e-6;
        let num = loop {
            let orig = params.as_slice()[i];
            params.as_mut_slice()[i] = orig + h;
            let up = total_loss(&params, &cfg, &b);
            params.as_mut_slice()[i] = orig - h;
            let down = total_loss(&params, &cfg, &b);
            params.as_mut_slice()[i] = orig;
            // A ReLU or max-pool switch inside [-h, h] shows up as disagreeing
            // one-sided slopes; shrink the step until the interval is smooth.
            let right = (up - base) / h;
            let left = (base - down) / h;
            if rel_err(right, left, 1e-2) < 1e-3 || h < 1e-9 {
                break (up - down) / (2.0 * h);
            }
            check.kinks += 1;
            h /= 10.0;
        };
        check.worst = check.worst.max(rel_err(grad[i], num, 1e-4));
    }
    check
}

pub const MODEL_LOSSES: [LossKind; 4] = [LossKind::Mmdb, LossKind::Softmax, LossKind::Nsl, LossKind::Lmcl];

pub fn coords_for(kind: LossKind) -> usize {
    if kind == LossKind::Mmdb {
        200
    } else {
        60
    }
}
