use modbias::diagnostics::jsd;
use modbias::loss::{
    lmcl_loss, mmdb_loss, mmdb_probs, nsl_loss, offset_cosine_loss, temperature_probs, DEFAULT_NORM_EPSILON,
};
use modbias::margin::{count_bias, load_counts_csv, margins_from_counts, save_counts_csv, BiasCounts};
use proptest::prelude::*;

const EPS: f64 = 1e-6;

fn count_row(omega: usize) -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(0u64..5_000, omega)
}

fn count_matrix() -> impl Strategy<Value = Vec<Vec<u64>>> {
    (2usize..12, 1usize..8).prop_flat_map(|(omega, k)| prop::collection::vec(count_row(omega), k))
}

/// `(W, x, y, margin row)` with non-degenerate norms.
fn head_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (2usize..10, 2usize..12).prop_flat_map(|(omega, d)| {
        (
            prop::collection::vec(-1.0f64..1.0, omega * d),
            prop::collection::vec(-2.0f64..2.0, d),
            0..omega,
            prop::collection::vec(0.0f64..1.0, omega),
        )
            .prop_filter("non-degenerate", move |(w, x, _, _)| {
                x.iter().map(|v| v * v).sum::<f64>() > 1e-4
                    && w.chunks(d).all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-4)
            })
            .prop_map(move |(w, x, t, row)| {
                let mut y = vec![0.0; omega];
                y[t] = 1.0;
                (w, x, y, row)
            })
    })
}

fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_filter_map("positive mass", |v| {
        let s: f64 = v.iter().sum();
        (s > 1e-6).then(|| v.iter().map(|a| a / s).collect())
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn margins_reverse_count_order_and_stay_in_range(rows in count_matrix()) {
        let counts = BiasCounts::from_rows(rows.clone()).unwrap();
        let table = margins_from_counts(&counts, EPS).unwrap();
        for (k, row) in rows.iter().enumerate() {
            let m = table.row(k);
            for i in 0..row.len() {
                prop_assert!((0.0..1.0).contains(&m[i]) || row.iter().all(|&c| c == 0));
                for j in 0..row.len() {
                    if row[i] > row[j] { prop_assert!(m[i] < m[j]); }
                    if row[i] == row[j] { prop_assert_eq!(m[i], m[j]); }
                }
            }
        }
    }

    #[test]
    fn scaling_a_count_row_barely_moves_margins(row in count_row(10), factor in 2u64..50) {
        prop_assume!(row.iter().sum::<u64>() >= 1_000);
        let scaled: Vec<u64> = row.iter().map(|c| c * factor).collect();
        let a = margins_from_counts(&BiasCounts::from_rows(vec![row]).unwrap(), EPS).unwrap();
        let b = margins_from_counts(&BiasCounts::from_rows(vec![scaled]).unwrap(), EPS).unwrap();
        prop_assert!(max_abs_diff(a.row(0), b.row(0)) < 10.0 * EPS * 10.0);
    }

    #[test]
    fn arbitrary_count_files_round_trip(rows in count_matrix()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("counts.csv");
        let counts = BiasCounts::from_rows(rows).unwrap();
        save_counts_csv(&counts, &path).unwrap();
        let back = load_counts_csv(&path).unwrap();
        prop_assert_eq!(back.rows(), counts.rows());
        let (a, b) = (margins_from_counts(&back, EPS).unwrap(), margins_from_counts(&counts, EPS).unwrap());
        prop_assert_eq!(a.rows(), b.rows());
    }

    #[test]
    fn counting_any_stream_sums_to_its_length(
        stream in prop::collection::vec((0u8..6, 0u8..9), 0..400)
    ) {
        let factors: Vec<u8> = stream.iter().map(|p| p.0).collect();
        let labels: Vec<u8> = stream.iter().map(|p| p.1).collect();
        let counts = count_bias(&labels, &factors, 6, 9).unwrap();
        prop_assert_eq!(counts.total(), stream.len() as u64);
        for &(k, i) in &stream {
            prop_assert!(counts.get(k as usize, i as usize) > 0);
        }
    }

    #[test]
    fn shifting_a_margin_row_changes_nothing((w, x, y, row) in head_case(), c in -0.5f64..0.5, s in 1.0f64..64.0) {
        let shifted: Vec<f64> = row.iter().map(|m| m + c).collect();
        let a = mmdb_loss(&w, &x, &y, s, &row).unwrap();
        let b = mmdb_loss(&w, &x, &y, s, &shifted).unwrap();
        prop_assert!(max_abs_diff(&a.probs, &b.probs) < 1e-12);
        prop_assert!(max_abs_diff(&a.dl_dx, &b.dl_dx) < 1e-12 * s.max(1.0) * 10.0);
        prop_assert!(max_abs_diff(&a.dl_dw, &b.dl_dw) < 1e-12 * s.max(1.0) * 10.0);
    }

    #[test]
    fn mmdb_is_radially_invariant((w, x, y, row) in head_case(), c in 0.01f64..100.0, s in 1.0f64..64.0) {
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        let a = mmdb_loss(&w, &x, &y, s, &row).unwrap().loss;
        let b = mmdb_loss(&w, &scaled, &y, s, &row).unwrap().loss;
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn equal_margins_reduce_mmdb_to_nsl((w, x, y, _) in head_case(), m in 0.0f64..1.0, s in 1.0f64..64.0) {
        let row = vec![m; y.len()];
        let mmdb = mmdb_probs(&w, &x, s, &row).unwrap();
        let nsl = nsl_loss(&w, &x, &y, s).unwrap();
        prop_assert!(max_abs_diff(&mmdb, &nsl.probs) < 1e-12);
        // The fixed margin hits the target only, so it does change the loss
        // wherever the loss has not underflowed.
        if m > 1e-3 && nsl.loss > 1e-9 {
            prop_assert!(lmcl_loss(&w, &x, &y, s, m).unwrap().loss > nsl.loss);
        }
    }

    #[test]
    fn temperature_form_equals_margin_form((w, x, _, row) in head_case(), s in 0.5f64..64.0) {
        let a = mmdb_probs(&w, &x, s, &row).unwrap();
        let b = temperature_probs(&w, &x, s, &row).unwrap();
        prop_assert!(max_abs_diff(&a, &b) < 1e-12);
    }

    #[test]
    fn lmcl_without_margin_is_nsl((w, x, y, _) in head_case(), s in 1.0f64..64.0) {
        let a = lmcl_loss(&w, &x, &y, s, 0.0).unwrap();
        let b = nsl_loss(&w, &x, &y, s).unwrap();
        prop_assert!((a.loss - b.loss).abs() < 1e-12);
        prop_assert!(max_abs_diff(&a.dl_dx, &b.dl_dx) < 1e-12);
    }

    #[test]
    fn losses_stay_finite_up_to_scale_128((w, x, y, row) in head_case(), p in 0u32..8) {
        let s = f64::from(1u32 << p);
        for g in [
            nsl_loss(&w, &x, &y, s).unwrap(),
            lmcl_loss(&w, &x, &y, s, 0.9).unwrap(),
            mmdb_loss(&w, &x, &y, s, &row).unwrap(),
        ] {
            prop_assert!(g.loss.is_finite());
            prop_assert!(g.probs.iter().chain(&g.dl_dx).chain(&g.dl_dw).all(|v| v.is_finite()));
        }
    }

    #[test]
    fn jsd_is_symmetric_and_bounded(
        (p, q) in (2usize..12).prop_flat_map(|n| (distribution(n), distribution(n)))
    ) {
        let a = jsd(&p, &q).unwrap();
        prop_assert_eq!(a, jsd(&q, &p).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(jsd(&p, &p).unwrap().abs() < 1e-12);
    }
}

#[test]
fn decision_boundary_flips_at_margin_gap() {
    // Unit class weights at ±φ around the feature axis; rotating the feature
    // by δ makes cos θ_0 - cos θ_1 sweep through zero.
    let (m_lo, m_hi) = (0.2, 0.6);
    let row = [m_lo, m_hi];
    let phi: f64 = 0.7;
    let w = [phi.cos(), phi.sin(), phi.cos(), -phi.sin()];
    let probs_at = |gap: f64| {
        // cos(φ - δ) - cos(φ + δ) = 2 sin φ sin δ = -gap
        let delta = (-gap / (2.0 * phi.sin())).asin();
        let x = [delta.cos(), delta.sin()];
        let y = [1.0, 0.0];
        offset_cosine_loss(&w, &x, &y, 16.0, &row, DEFAULT_NORM_EPSILON).unwrap().probs
    };
    // Class 0 carries the low margin; it wins until its cosine deficit
    // exceeds m_hi - m_lo.
    let threshold = m_hi - m_lo;
    let before = probs_at(threshold - 1e-6);
    let after = probs_at(threshold + 1e-6);
    assert!(before[0] > before[1]);
    assert!(after[1] > after[0]);
}
