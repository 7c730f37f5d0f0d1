mod common;

use std::collections::HashMap;

use proptest::prelude::*;
use sqa_core::estimators::{
    empirical_pmf, mos, mos_ci, normal_quantile, per_pvs_std, windowed_bias, EstimatorError,
    OrderWindow,
};
use sqa_core::simulate::NormalStream;
use sqa_core::{Dataset, RatingRecord, Scale};
use statrs::distribution::{ContinuousCDF, Normal};

/// Sparse discrete dataset: `cells[i][j] = Some(score)` where rated.
fn discrete_dataset(cells: &[Vec<Option<u32>>], categories: u32) -> Option<Dataset> {
    let mut recs = Vec::new();
    for (i, row) in cells.iter().enumerate() {
        for (j, s) in row.iter().enumerate() {
            if let Some(s) = s {
                recs.push(RatingRecord::new(format!("s{i}"), format!("j{j}"), f64::from(*s)));
            }
        }
    }
    if recs.is_empty() {
        return None;
    }
    let npvs = cells[0].len();
    let src: HashMap<_, _> = (0..npvs).map(|j| (format!("j{j}"), format!("k{}", j / 2))).collect();
    let hrc: HashMap<_, _> = (0..npvs).map(|j| (format!("j{j}"), "h".into())).collect();
    Some(Dataset::build(&recs, &src, &hrc, Scale::discrete(categories).unwrap()).unwrap())
}

fn cells_strategy() -> impl Strategy<Value = Vec<Vec<Option<u32>>>> {
    (1usize..6, 1usize..7).prop_flat_map(|(ni, nj)| {
        prop::collection::vec(
            prop::collection::vec(prop::option::weighted(0.8, 1u32..=5), nj),
            ni,
        )
    })
}

/// Scores grouped by PVS label, straight from the records.
fn scores_by_pvs(ds: &Dataset) -> HashMap<String, Vec<f64>> {
    let mut out: HashMap<String, Vec<f64>> = HashMap::new();
    let (recs, _, _) = ds.to_rating_records();
    for r in recs {
        out.entry(r.pvs).or_default().push(r.score);
    }
    out
}

fn two_pass_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

proptest! {
    #[test]
    fn pmf_is_normalized_and_its_mean_is_the_mos(cells in cells_strategy()) {
        let Some(ds) = discrete_dataset(&cells, 5) else { return Ok(()) };
        let table = mos(&ds, 0.95).unwrap();
        for j in 0..ds.n_pvss() {
            let pmf = empirical_pmf(&ds, j).unwrap();
            prop_assert!(pmf.iter().all(|&p| p >= 0.0));
            prop_assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let expectation: f64 = pmf.iter().enumerate().map(|(s, p)| (s + 1) as f64 * p).sum();
            prop_assert!((expectation - table.rows[j].mean).abs() < 1e-12);
        }
    }

    #[test]
    fn mos_matches_brute_force_and_ignores_record_order(cells in cells_strategy(), rot in 0usize..50) {
        let Some(ds) = discrete_dataset(&cells, 5) else { return Ok(()) };
        let table = mos(&ds, 0.9).unwrap();
        let groups = scores_by_pvs(&ds);
        for (j, row) in table.rows.iter().enumerate() {
            let xs = &groups[ds.pvss().label(j)];
            prop_assert_eq!(row.n, xs.len());
            prop_assert!((row.mean - xs.iter().sum::<f64>() / xs.len() as f64).abs() < 1e-12);
            prop_assert!(row.ci_lo <= row.mean && row.mean <= row.ci_hi);
        }
        let (mut recs, src, hrc) = ds.to_rating_records();
        let len = recs.len();
        recs.rotate_left(rot % len);
        recs.reverse();
        let shuffled = Dataset::build(&recs, &src, &hrc, ds.scale()).unwrap();
        prop_assert_eq!(mos(&shuffled, 0.9).unwrap(), table);
    }

    #[test]
    fn shifting_scores_shifts_mos_only(cells in cells_strategy(), c in -50.0f64..50.0) {
        let Some(ds) = discrete_dataset(&cells, 5) else { return Ok(()) };
        let (mut recs, src, hrc) = ds.to_rating_records();
        recs.iter_mut().for_each(|r| r.score += c);
        let open = Scale::continuous(f64::NEG_INFINITY, f64::INFINITY).unwrap();
        let shifted = Dataset::build(&recs, &src, &hrc, open).unwrap();
        let (a, b) = (mos(&ds, 0.95).unwrap(), mos(&shifted, 0.95).unwrap());
        for (x, y) in a.rows.iter().zip(&b.rows) {
            prop_assert!((y.mean - (x.mean + c)).abs() < 1e-12);
            match (x.std, y.std) {
                (Some(s), Some(t)) => prop_assert!((s - t).abs() < 1e-12),
                (None, None) => {}
                _ => prop_assert!(false, "std definedness changed"),
            }
        }
    }

    #[test]
    fn std_matches_two_pass_formula(xs in prop::collection::vec(-1e3f64..1e3, 2..40)) {
        let recs: Vec<_> = xs.iter().enumerate().map(|(i, &x)| RatingRecord::new(format!("s{i}"), "j", x)).collect();
        let src: HashMap<_, _> = [("j".to_string(), "k".to_string())].into();
        let hrc = src.clone();
        let ds = Dataset::build(&recs, &src, &hrc, Scale::continuous(-1e4, 1e4).unwrap()).unwrap();
        let got = per_pvs_std(&ds)[0].unwrap();
        let want = two_pass_std(&xs);
        prop_assert!((got - want).abs() <= 1e-12 * want.max(1.0));
    }

    #[test]
    fn ci_width_does_not_grow_with_n(std in 0.0f64..5.0, n in 2usize..500, level in 0.01f64..0.999) {
        let (lo1, hi1) = mos_ci(0.0, std, n, level).unwrap();
        let (lo2, hi2) = mos_ci(0.0, std, n + 1, level).unwrap();
        prop_assert!(hi2 - lo2 <= hi1 - lo1 + 1e-15);
    }

    #[test]
    fn quantile_agrees_with_reference(p in 1e-10f64..(1.0 - 1e-10)) {
        let reference = Normal::standard().inverse_cdf(p);
        prop_assert!((normal_quantile(p) - reference).abs() <= 4.5e-4);
        prop_assert!((normal_quantile(p) - reference).abs() <= 1e-8 * reference.abs().max(1.0));
    }
}

/// Session of `n_pvs` PVSs per subject with orders from a seeded shuffle.
fn ordered_session(n_subjects: usize, n_pvs: usize, seed: u64) -> (Dataset, Vec<f64>) {
    let mut s = NormalStream::new(seed);
    let psi: Vec<f64> = (0..n_pvs).map(|_| 1.0 + 4.0 * s.uniform()).collect();
    let mut recs = Vec::new();
    for i in 0..n_subjects {
        let mut orders: Vec<u32> = (1..=n_pvs as u32).collect();
        for m in (1..orders.len()).rev() {
            let k = (s.uniform() * (m + 1) as f64) as usize;
            orders.swap(m, k.min(m));
        }
        for j in 0..n_pvs {
            let u = psi[j] + 0.7 * s.normal();
            recs.push(
                RatingRecord::new(format!("s{}", i + 1), format!("j{}", j + 1), u)
                    .with_order(orders[j]),
            );
        }
    }
    let src: HashMap<_, _> = (0..n_pvs).map(|j| (format!("j{}", j + 1), format!("k{}", j + 1))).collect();
    let hrc: HashMap<_, _> = (0..n_pvs).map(|j| (format!("j{}", j + 1), "h1".into())).collect();
    let open = Scale::continuous(f64::NEG_INFINITY, f64::INFINITY).unwrap();
    (Dataset::build(&recs, &src, &hrc, open).unwrap(), psi)
}

#[test]
fn windowed_bias_matches_loop_oracle() {
    for seed in 0..10 {
        let (ds, _) = ordered_session(3, 40, seed);
        let psi_hat: Vec<f64> = (0..ds.n_pvss()).map(|j| 2.0 + 0.01 * j as f64).collect();
        for subject in 0..3 {
            for (a, b) in [(1, 40), (1, 10), (7, 23), (31, 40)] {
                let got = windowed_bias(&ds, &psi_hat, subject, OrderWindow::new(a, b).unwrap()).unwrap();
                // oracle: scan every record, keep the subject's window
                let (mut sum, mut n) = (0.0, 0);
                for r in ds.records() {
                    let o = r.order.unwrap();
                    if r.subject == subject && o >= a && o <= b {
                        sum += r.score - psi_hat[r.pvs];
                        n += 1;
                    }
                }
                assert_eq!(n, (b - a + 1) as usize);
                assert_eq!(got.terms, n);
                assert!((got.value - sum / n as f64).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn full_session_window_equals_residual_mean_bias() {
    let (ds, _) = ordered_session(4, 30, 99);
    let mos = mos(&ds, 0.95).unwrap().means();
    for subject in 0..4 {
        let got = windowed_bias(&ds, &mos, subject, OrderWindow::new(1, 30).unwrap()).unwrap();
        let resid: Vec<f64> = ds
            .records()
            .iter()
            .filter(|r| r.subject == subject)
            .map(|r| r.score - mos[r.pvs])
            .collect();
        let classic = resid.iter().sum::<f64>() / resid.len() as f64;
        assert!((got.value - classic).abs() < 1e-12);
    }
}

#[test]
fn constant_offset_window() {
    let mut recs = Vec::new();
    let psi: Vec<f64> = (0..200).map(|j| 1.0 + (j % 4) as f64).collect();
    for j in 0..200 {
        recs.push(RatingRecord::new("s1", format!("j{}", j + 1), psi[j] + 0.5).with_order(200 - j as u32));
    }
    let src: HashMap<_, _> = (0..200).map(|j| (format!("j{}", j + 1), "k1".into())).collect();
    let hrc = src.clone();
    let ds = Dataset::build(&recs, &src, &hrc, Scale::continuous(0.0, 10.0).unwrap()).unwrap();
    for (a, b) in [(1, 25), (176, 200)] {
        let w = windowed_bias(&ds, &psi, 0, OrderWindow::new(a, b).unwrap()).unwrap();
        assert_eq!(w.value, 0.5);
        assert_eq!(w.terms, 25);
    }
}

#[test]
fn windowed_bias_errors() {
    let (ds, _) = ordered_session(1, 20, 5);
    let psi = vec![3.0; 20];
    assert!(matches!(
        windowed_bias(&ds, &psi, 0, OrderWindow::new(15, 25).unwrap()),
        Err(EstimatorError::WindowNotCovered { order: 21, .. })
    ));
    assert!(matches!(
        windowed_bias(&ds, &psi[..3], 0, OrderWindow::new(1, 20).unwrap()),
        Err(EstimatorError::PsiMissing(_))
    ));
    assert!(matches!(
        windowed_bias(&ds, &psi, 3, OrderWindow::new(1, 20).unwrap()),
        Err(EstimatorError::UnknownSubject(3))
    ));

    let plain = common::dataset_from(&[(0, 0, 1.0), (0, 1, 2.0)], |j| j);
    assert!(matches!(
        windowed_bias(&plain, &[1.0, 2.0], 0, OrderWindow::new(1, 2).unwrap()),
        Err(EstimatorError::OrderMissing(_))
    ));
}
