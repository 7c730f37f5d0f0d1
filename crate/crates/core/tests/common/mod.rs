#![allow(dead_code)]

use std::collections::HashMap;

use sqa_core::mle::ModelKind;
use sqa_core::simulate::{OrderPolicy, SimulationConfig, TruthPrior};
use sqa_core::{Dataset, RatingRecord, Scale};

pub const TRUTH_SEED: u64 = 2024;
pub const PILOT_SEED: u64 = 1000;
pub const CHECK_SEED: u64 = 0;
pub const N_SEEDS: usize = 20;

pub fn open_scale() -> Scale {
    Scale::continuous(f64::NEG_INFINITY, f64::INFINITY).unwrap()
}

/// JP ground truth: Δ ~ N(0, 0.3²), υ and φ uniform on [0.2, 0.8], ψ on [1, 5].
pub fn desk_prior(subjects: usize, pvss: usize) -> TruthPrior {
    TruthPrior {
        model: ModelKind::Jp,
        subjects,
        pvss,
        pvss_per_src: 1,
        psi_range: (1.0, 5.0),
        delta_sd: 0.3,
        upsilon_range: (0.2, 0.8),
        dispersion_range: (0.2, 0.8),
    }
}

pub fn desk_config(subjects: usize, pvss: usize, seed: u64) -> SimulationConfig {
    desk_prior(subjects, pvss).draw(TRUTH_SEED, seed, open_scale(), OrderPolicy::None)
}

/// Dataset from `(subject, pvs, score)` triples; PVS `j` belongs to SRC `src(j)`.
pub fn dataset_from(cells: &[(usize, usize, f64)], src: impl Fn(usize) -> usize) -> Dataset {
    let recs: Vec<_> = cells
        .iter()
        .map(|&(i, j, u)| RatingRecord::new(format!("s{}", i + 1), format!("j{}", j + 1), u))
        .collect();
    let npvs = cells.iter().map(|c| c.1).max().unwrap() + 1;
    let src_of: HashMap<_, _> = (0..npvs)
        .map(|j| (format!("j{}", j + 1), format!("k{}", src(j) + 1)))
        .collect();
    let hrc_of: HashMap<_, _> = (0..npvs)
        .map(|j| (format!("j{}", j + 1), "h1".to_string()))
        .collect();
    Dataset::build(&recs, &src_of, &hrc_of, open_scale()).unwrap()
}

/// Same records with every score passed through `f`.
pub fn map_scores(ds: &Dataset, f: impl Fn(usize, f64) -> f64) -> Dataset {
    let (mut recs, src, hrc) = ds.to_rating_records();
    for r in &mut recs {
        let i = ds.subjects().index_of(&r.subject).unwrap();
        r.score = f(i, r.score);
    }
    Dataset::build(&recs, &src, &hrc, open_scale()).unwrap()
}
