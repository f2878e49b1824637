//! Seeded random instances shared by the integration suites.

use pseudoflow::field::{GridGeometry, ScalarField};
use pseudoflow::graph::DagModel;
use pseudoflow::ishikawa::IshikawaModel;
use pseudoflow::potts::PottsModel;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_field(rng: &mut ChaCha8Rng, geom: &GridGeometry, lo: f64, hi: f64) -> ScalarField {
    let values = (0..geom.voxel_count()).map(|_| rng.gen_range(lo..hi)).collect();
    ScalarField::from_values(geom, values).unwrap()
}

/// Random flat model with labels `l0..` (already in sorted order, so the
/// star-DAG view enumerates them identically).
pub fn random_potts(
    rng: &mut ChaCha8Rng,
    dims: &[usize],
    labels: usize,
    smoothness_max: f64,
) -> PottsModel {
    let geom = GridGeometry::new(dims).unwrap();
    let fields = (0..labels)
        .map(|l| {
            (
                format!("l{l}"),
                random_field(rng, &geom, 0.0, 1.0),
                random_field(rng, &geom, 0.0, smoothness_max.max(1e-9)),
            )
        })
        .collect();
    PottsModel::new(geom, fields).unwrap()
}

pub fn random_ishikawa(
    rng: &mut ChaCha8Rng,
    dims: &[usize],
    levels: usize,
    smoothness_max: f64,
) -> IshikawaModel {
    let geom = GridGeometry::new(dims).unwrap();
    let data = (0..=levels).map(|_| random_field(rng, &geom, 0.0, 1.0)).collect();
    let smoothness = (0..levels)
        .map(|_| random_field(rng, &geom, 0.0, smoothness_max.max(1e-9)))
        .collect();
    IshikawaModel::new(geom, data, smoothness).unwrap()
}

/// Random simplex-feasible label fields (per-voxel positive and normalized).
pub fn random_simplex_labels(
    rng: &mut ChaCha8Rng,
    geom: &GridGeometry,
    labels: usize,
) -> Vec<ScalarField> {
    let n = geom.voxel_count();
    let mut raw: Vec<Vec<f64>> = (0..labels)
        .map(|_| (0..n).map(|_| rng.gen_range(0.01..1.0)).collect())
        .collect();
    for i in 0..n {
        let total: f64 = raw.iter().map(|r| r[i]).sum();
        for r in raw.iter_mut() {
            r[i] /= total;
        }
    }
    raw.into_iter()
        .map(|r| ScalarField::from_values(geom, r).unwrap())
        .collect()
}

/// Random two-layer DAG: a couple of super-objects over the end labels,
/// every end reachable, all weights positive.
pub fn random_two_layer_dag(
    rng: &mut ChaCha8Rng,
    dims: &[usize],
    ends: usize,
    mids: usize,
    smoothness_max: f64,
) -> DagModel {
    let geom = GridGeometry::new(dims).unwrap();
    let mut b = pseudoflow::graph::DagModelBuilder::new(geom.clone(), "S");
    for m in 0..mids {
        let s = random_field(rng, &geom, 0.0, smoothness_max.max(1e-9));
        b = b.node(&format!("m{m}"), None, Some(s));
        b = b.edge("S", &format!("m{m}"), rng.gen_range(0.2..1.0));
    }
    for e in 0..ends {
        let d = random_field(rng, &geom, 0.0, 1.0);
        let s = random_field(rng, &geom, 0.0, smoothness_max.max(1e-9));
        b = b.node(&format!("e{e}"), Some(d), Some(s));
        // Anchor to the source so every end is reachable even with no mids.
        b = b.edge("S", &format!("e{e}"), rng.gen_range(0.2..1.0));
        for m in 0..mids {
            if rng.gen_bool(0.6) {
                b = b.edge(&format!("m{m}"), &format!("e{e}"), rng.gen_range(0.2..1.0));
            }
        }
    }
    b.build().unwrap()
}
