//! Discretized energy evaluation, exhaustive ground truth on tiny instances,
//! and cross-run comparison. Solver, energy and oracle all score the same
//! discretization (forward differences, per-voxel Euclidean norm), so
//! optimality statements are meaningful.
//!
//! All evaluators stream per voxel without materializing gradient fields;
//! this keeps the solvers' in-loop traces inside their buffer budgets.

use rayon::prelude::*;
use thiserror::Error;

use crate::field::{self, GridWalk, LabelMap, ScalarField};
use crate::graph::DagModel;
use crate::ishikawa::IshikawaModel;
use crate::potts::{self, PottsModel};

/// Enumeration ceiling for the exhaustive oracle.
pub const DEFAULT_ENUMERATION_GUARD: u64 = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("labeling violates the simplex constraint at voxel {0}")]
    InfeasibleLabeling(usize),
    #[error("expected {expected} label fields, got {got}")]
    LabelCountMismatch { expected: usize, got: usize },
    #[error("label fields do not match the model geometry")]
    GeometryMismatch,
    #[error("instance needs {states} labelings, above the guard of {guard}")]
    InstanceTooLarge { states: u64, guard: u64 },
    #[error("energy report carries no iterations to compare")]
    EmptyTrace,
}

/// Per-iteration traces of a solver run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyReport {
    /// Discretized energy of the argmax labeling after each iteration.
    pub primal_energies: Vec<f64>,
    /// Relaxed energy of the label fields after each iteration.
    pub relaxed_energies: Vec<f64>,
    /// Maximum per-voxel label change of each iteration.
    pub max_label_changes: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl EnergyReport {
    pub fn final_relaxed_energy(&self) -> Option<f64> {
        self.relaxed_energies.last().copied()
    }

    pub fn final_primal_energy(&self) -> Option<f64> {
        self.primal_energies.last().copied()
    }
}

fn check_labels(
    expected: usize,
    geometry: &crate::field::GridGeometry,
    labels: &[ScalarField],
) -> Result<(), EnergyError> {
    if labels.len() != expected {
        return Err(EnergyError::LabelCountMismatch { expected, got: labels.len() });
    }
    if labels.iter().any(|u| u.geometry() != geometry) {
        return Err(EnergyError::GeometryMismatch);
    }
    Ok(())
}

fn check_simplex(labels: &[ScalarField]) -> Result<(), EnergyError> {
    let n = labels[0].geometry().voxel_count();
    for i in 0..n {
        let mut total = 0.0;
        for u in labels {
            let v = u.values()[i];
            if v < -1e-9 {
                return Err(EnergyError::InfeasibleLabeling(i));
            }
            total += v;
        }
        if (total - 1.0).abs() > 1e-6 {
            return Err(EnergyError::InfeasibleLabeling(i));
        }
    }
    Ok(())
}

/// Relaxed flat-model energy: sum over labels and voxels of the data term
/// weighted by the label plus the smoothness-weighted per-voxel gradient
/// norm. Rejects labelings off the simplex.
pub fn potts_energy(model: &PottsModel, labels: &[ScalarField]) -> Result<f64, EnergyError> {
    check_labels(model.label_count(), model.geometry(), labels)?;
    check_simplex(labels)?;
    Ok(potts_relaxed_energy_unchecked(model, labels))
}

pub(crate) fn potts_relaxed_energy_unchecked(
    model: &PottsModel,
    labels: &[ScalarField],
) -> f64 {
    let walk = GridWalk::new(model.geometry());
    let nd = walk.ndim();
    field::sum_voxels(model.geometry().voxel_count(), |i| {
        let mut acc = 0.0;
        for (l, u) in labels.iter().enumerate() {
            let uv = u.values();
            acc += model.data(l).values()[i] * uv[i];
            let mut sq = 0.0;
            for axis in 0..nd {
                let g = walk.forward_diff(uv, i, axis);
                sq += g * g;
            }
            acc += model.smoothness(l).values()[i] * sq.sqrt();
        }
        acc
    })
}

/// Discretized energy of the one-hot argmax labeling of `labels`.
pub fn potts_argmax_energy(model: &PottsModel, labels: &[ScalarField]) -> f64 {
    let walk = GridWalk::new(model.geometry());
    potts_indicator_energy(model, &walk, |i| field::argmax_at(labels, i))
}

/// Discretized energy of an explicit label assignment.
pub fn potts_discrete_energy(model: &PottsModel, map: &LabelMap) -> Result<f64, EnergyError> {
    if map.geometry() != model.geometry() {
        return Err(EnergyError::GeometryMismatch);
    }
    let walk = GridWalk::new(model.geometry());
    let idx = map.indices();
    Ok(potts_indicator_energy(model, &walk, |i| idx[i] as usize))
}

fn potts_indicator_energy<F>(model: &PottsModel, walk: &GridWalk, assign: F) -> f64
where
    F: Fn(usize) -> usize + Sync,
{
    let nd = walk.ndim();
    field::sum_voxels(model.geometry().voxel_count(), |i| {
        let here = assign(i);
        let mut acc = model.data(here).values()[i];

        // Only the labels taken at this voxel or one of its forward
        // neighbors have a nonzero indicator gradient here.
        let mut involved = [usize::MAX; 4];
        let mut neighbors = [usize::MAX; 3];
        involved[0] = here;
        let mut count = 1;
        for axis in 0..nd {
            let d = walk.forward_diff_index(i, axis);
            if let Some(j) = d {
                let m = assign(j);
                neighbors[axis] = m;
                if !involved[..count].contains(&m) {
                    involved[count] = m;
                    count += 1;
                }
            }
        }
        for &label in &involved[..count] {
            let mut sq = 0.0;
            for axis in 0..nd {
                if neighbors[axis] == usize::MAX {
                    continue;
                }
                let diff = (neighbors[axis] == label) as i32 - (here == label) as i32;
                sq += (diff * diff) as f64;
            }
            if sq > 0.0 {
                acc += model.smoothness(label).values()[i] * sq.sqrt();
            }
        }
        acc
    })
}

/// Relaxed DAG energy of end-label fields (in end-label name order):
/// intermediate labels are reconstructed from the weighted-sum constraint,
/// then every non-source node contributes its smoothness-weighted gradient
/// norm and end labels contribute their data terms.
pub fn dag_energy(model: &DagModel, end_labels: &[ScalarField]) -> Result<f64, EnergyError> {
    let ends = model.end_label_indices();
    check_labels(ends.len(), model.geometry(), end_labels)?;
    check_simplex(end_labels)?;
    Ok(dag_relaxed_energy_unchecked(model, end_labels))
}

pub(crate) fn dag_relaxed_energy_unchecked(
    model: &DagModel,
    end_labels: &[ScalarField],
) -> f64 {
    let walk = GridWalk::new(model.geometry());
    let nd = walk.ndim();
    let weights = model.path_weights_to_ends();
    let source = model.source_index();
    let reconstruct = |node: usize, voxel: usize| -> f64 {
        let row = &weights[node];
        let mut v = 0.0;
        for (k, u) in end_labels.iter().enumerate() {
            v += row[k] * u.values()[voxel];
        }
        v
    };
    field::sum_voxels(model.geometry().voxel_count(), |i| {
        let mut acc = 0.0;
        for node in 0..model.node_count() {
            if node == source {
                continue;
            }
            if let Some(data) = model.data_of(node) {
                acc += data.values()[i] * reconstruct(node, i);
            }
            let here = reconstruct(node, i);
            let mut sq = 0.0;
            for axis in 0..nd {
                if let Some(j) = walk.forward_diff_index(i, axis) {
                    let g = reconstruct(node, j) - here;
                    sq += g * g;
                }
            }
            let s = model
                .smoothness_of(node)
                .expect("validated non-source node has smoothness");
            acc += s.values()[i] * sq.sqrt();
        }
        acc
    })
}

/// DAG energy of the one-hot argmax of the end-label fields.
pub fn dag_argmax_energy(model: &DagModel, end_labels: &[ScalarField]) -> f64 {
    let walk = GridWalk::new(model.geometry());
    dag_indicator_energy(model, &walk, |i| field::argmax_at(end_labels, i))
}

/// DAG energy of an explicit end-label assignment.
pub fn dag_discrete_energy(model: &DagModel, map: &LabelMap) -> Result<f64, EnergyError> {
    if map.geometry() != model.geometry() {
        return Err(EnergyError::GeometryMismatch);
    }
    let walk = GridWalk::new(model.geometry());
    let idx = map.indices();
    Ok(dag_indicator_energy(model, &walk, |i| idx[i] as usize))
}

fn dag_indicator_energy<F>(model: &DagModel, walk: &GridWalk, assign: F) -> f64
where
    F: Fn(usize) -> usize + Sync,
{
    let nd = walk.ndim();
    let ends = model.end_label_indices();
    let weights = model.path_weights_to_ends();
    let source = model.source_index();
    field::sum_voxels(model.geometry().voxel_count(), |i| {
        let here = assign(i);
        let mut acc = model
            .data_of(ends[here])
            .expect("end label carries data")
            .values()[i];
        for node in 0..model.node_count() {
            if node == source {
                continue;
            }
            let row = &weights[node];
            let mut sq = 0.0;
            for axis in 0..nd {
                if let Some(j) = walk.forward_diff_index(i, axis) {
                    let g = row[assign(j)] - row[here];
                    sq += g * g;
                }
            }
            if sq > 0.0 {
                let s = model
                    .smoothness_of(node)
                    .expect("validated non-source node has smoothness");
                acc += s.values()[i] * sq.sqrt();
            }
        }
        acc
    })
}

/// Relaxed linear-order energy: data terms on the partition labels,
/// smoothness on the cumulative (suffix-sum) labels of levels `1..=N`.
pub fn ishikawa_energy(
    model: &IshikawaModel,
    labels: &[ScalarField],
) -> Result<f64, EnergyError> {
    check_labels(model.label_count(), model.geometry(), labels)?;
    check_simplex(labels)?;
    Ok(ishikawa_relaxed_energy_unchecked(model, labels))
}

pub(crate) fn ishikawa_relaxed_energy_unchecked(
    model: &IshikawaModel,
    labels: &[ScalarField],
) -> f64 {
    let walk = GridWalk::new(model.geometry());
    let nd = walk.ndim();
    let n = model.level_count();
    field::sum_voxels(model.geometry().voxel_count(), |i| {
        let mut acc = 0.0;
        for (l, u) in labels.iter().enumerate() {
            acc += model.data(l).values()[i] * u.values()[i];
        }
        // Suffix sums built level by level from the top; cum_k needs levels
        // k..=N, so visiting k = N, N-1, .., 1 keeps running accumulators.
        let mut cum_here = 0.0;
        let mut cum_nb = [0.0f64; 3];
        for k in (1..=n).rev() {
            let uv = labels[k].values();
            cum_here += uv[i];
            let mut sq = 0.0;
            for axis in 0..nd {
                if let Some(j) = walk.forward_diff_index(i, axis) {
                    cum_nb[axis] += uv[j];
                    let g = cum_nb[axis] - cum_here;
                    sq += g * g;
                }
            }
            acc += model.smoothness(k).values()[i] * sq.sqrt();
        }
        acc
    })
}

/// Linear-order energy of the one-hot argmax labeling.
pub fn ishikawa_argmax_energy(model: &IshikawaModel, labels: &[ScalarField]) -> f64 {
    let walk = GridWalk::new(model.geometry());
    ishikawa_indicator_energy(model, &walk, |i| field::argmax_at(labels, i))
}

/// Linear-order energy of an explicit level assignment.
pub fn ishikawa_discrete_energy(
    model: &IshikawaModel,
    map: &LabelMap,
) -> Result<f64, EnergyError> {
    if map.geometry() != model.geometry() {
        return Err(EnergyError::GeometryMismatch);
    }
    let walk = GridWalk::new(model.geometry());
    let idx = map.indices();
    Ok(ishikawa_indicator_energy(model, &walk, |i| idx[i] as usize))
}

fn ishikawa_indicator_energy<F>(model: &IshikawaModel, walk: &GridWalk, assign: F) -> f64
where
    F: Fn(usize) -> usize + Sync,
{
    let nd = walk.ndim();
    let n = model.level_count();
    field::sum_voxels(model.geometry().voxel_count(), |i| {
        let here = assign(i);
        let mut acc = model.data(here).values()[i];
        let mut neighbors = [usize::MAX; 3];
        for axis in 0..nd {
            if let Some(j) = walk.forward_diff_index(i, axis) {
                neighbors[axis] = assign(j);
            }
        }
        for k in 1..=n {
            // Cumulative indicator: 1 where the assigned level is >= k.
            let mut sq = 0.0;
            for axis in 0..nd {
                if neighbors[axis] == usize::MAX {
                    continue;
                }
                let diff = (neighbors[axis] >= k) as i32 - (here >= k) as i32;
                sq += (diff * diff) as f64;
            }
            if sq > 0.0 {
                acc += model.smoothness(k).values()[i] * sq.sqrt();
            }
        }
        acc
    })
}

/// Exhaustively enumerates every one-hot labeling of a flat model and
/// returns the minimizer (ties broken by lexicographic labeling).
pub fn brute_force_potts(
    model: &PottsModel,
    max_states: u64,
) -> Result<(LabelMap, f64), EnergyError> {
    let walk = GridWalk::new(model.geometry());
    let (indices, energy) = brute_force_search(
        model.label_count(),
        model.geometry().voxel_count(),
        max_states,
        |assign| potts_indicator_energy(model, &walk, |i| assign[i] as usize),
    )?;
    Ok((
        LabelMap::new(model.geometry(), indices).expect("assignment spans the grid"),
        energy,
    ))
}

/// Exhaustive minimizer over end-label assignments of a DAG model.
pub fn brute_force_dag(
    model: &DagModel,
    max_states: u64,
) -> Result<(LabelMap, f64), EnergyError> {
    let walk = GridWalk::new(model.geometry());
    let (indices, energy) = brute_force_search(
        model.end_label_indices().len(),
        model.geometry().voxel_count(),
        max_states,
        |assign| dag_indicator_energy(model, &walk, |i| assign[i] as usize),
    )?;
    Ok((
        LabelMap::new(model.geometry(), indices).expect("assignment spans the grid"),
        energy,
    ))
}

/// Enumerates `labels^voxels` assignments in lexicographic order (voxel 0
/// most significant) and returns the earliest minimizer. The search space is
/// split into blocks scored in parallel; the block reduction compares
/// `(energy, index)` pairs, so the winner does not depend on scheduling.
fn brute_force_search<F>(
    labels: usize,
    voxels: usize,
    max_states: u64,
    score: F,
) -> Result<(Vec<u8>, f64), EnergyError>
where
    F: Fn(&[u8]) -> f64 + Sync,
{
    assert!(labels >= 1 && labels <= 256, "oracle supports 1..=256 labels");
    let states_f = (labels as f64).powi(voxels as i32);
    if !(states_f <= max_states as f64) {
        return Err(EnergyError::InstanceTooLarge {
            states: if states_f <= u64::MAX as f64 { states_f as u64 } else { u64::MAX },
            guard: max_states,
        });
    }
    let total = states_f as u64;

    let decode = |state: u64| -> Vec<u8> {
        let mut digits = vec![0u8; voxels];
        let mut rest = state;
        for v in (0..voxels).rev() {
            digits[v] = (rest % labels as u64) as u8;
            rest /= labels as u64;
        }
        digits
    };
    let advance = |digits: &mut [u8]| {
        for v in (0..voxels).rev() {
            digits[v] += 1;
            if (digits[v] as usize) < labels {
                return;
            }
            digits[v] = 0;
        }
    };

    const BLOCK: u64 = 4096;
    let blocks = total.div_ceil(BLOCK);
    let scan_block = |b: u64| -> (f64, u64) {
        let lo = b * BLOCK;
        let hi = (lo + BLOCK).min(total);
        let mut digits = decode(lo);
        let mut best = (f64::INFINITY, u64::MAX);
        for state in lo..hi {
            let e = score(&digits);
            if e < best.0 {
                best = (e, state);
            }
            advance(&mut digits);
        }
        best
    };
    let pick = |a: (f64, u64), b: (f64, u64)| {
        if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
            b
        } else {
            a
        }
    };
    let (energy, state) = if blocks <= 4 {
        (0..blocks).map(scan_block).fold((f64::INFINITY, u64::MAX), pick)
    } else {
        (0..blocks)
            .into_par_iter()
            .map(scan_block)
            .reduce(|| (f64::INFINITY, u64::MAX), pick)
    };
    Ok((decode(state), energy))
}

/// Outcome of comparing two runs on the same instance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunComparison {
    /// `|e_a - e_b|` over the smaller final relaxed energy magnitude.
    pub relative_energy_gap: f64,
    /// Fraction of voxels whose argmax labels agree.
    pub argmax_agreement: f64,
    /// Largest per-voxel, per-label difference between the field sets.
    pub max_label_difference: f64,
}

pub fn compare_runs(
    report_a: &EnergyReport,
    labels_a: &[ScalarField],
    report_b: &EnergyReport,
    labels_b: &[ScalarField],
) -> Result<RunComparison, EnergyError> {
    if labels_a.len() != labels_b.len() || labels_a.is_empty() {
        return Err(EnergyError::LabelCountMismatch {
            expected: labels_a.len(),
            got: labels_b.len(),
        });
    }
    if labels_a
        .iter()
        .zip(labels_b)
        .any(|(a, b)| a.geometry() != b.geometry() || a.geometry() != labels_a[0].geometry())
    {
        return Err(EnergyError::GeometryMismatch);
    }
    let (Some(ea), Some(eb)) =
        (report_a.final_relaxed_energy(), report_b.final_relaxed_energy())
    else {
        return Err(EnergyError::EmptyTrace);
    };

    let relative_energy_gap = if ea == eb {
        0.0
    } else {
        (ea - eb).abs() / ea.abs().min(eb.abs()).max(1e-12)
    };
    let agreement = potts::argmax_labeling(labels_a)
        .agreement(&potts::argmax_labeling(labels_b))
        .expect("geometries checked above");
    let mut max_diff = 0.0f64;
    for (a, b) in labels_a.iter().zip(labels_b) {
        let (av, bv) = (a.values(), b.values());
        max_diff = max_diff.max(field::max_voxels(av.len(), |i| (av[i] - bv[i]).abs()));
    }
    Ok(RunComparison {
        relative_energy_gap,
        argmax_agreement: agreement,
        max_label_difference: max_diff,
    })
}
