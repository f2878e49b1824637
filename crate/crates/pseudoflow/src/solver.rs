//! Configuration and error types shared by the three solvers.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("model needs at least two labels, got {0}")]
    TooFewLabels(usize),
    #[error("label mass collapsed to zero at voxel {voxel}")]
    NumericalCollapse { voxel: usize },
}

/// Proximal weight, dual step size and stopping controls.
///
/// The defaults keep `c * tau` well inside the stability regime of the
/// projected dual step (below `1 / (4 * axes)` for the discrete operator
/// norm). Smaller `c` sharpens the label updates toward a hard minimum;
/// `anneal_factor < 1` shrinks `c` geometrically after each iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Proximal weight `c` of the entropic distance term.
    pub proximal_weight: f64,
    /// Gradient-descent step `tau` for the spatial flow update.
    pub step_size: f64,
    pub max_iters: usize,
    /// Convergence threshold on the max per-voxel label change.
    pub tolerance: f64,
    /// Geometric decay applied to `c` after each iteration; `1.0` disables
    /// annealing.
    pub anneal_factor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            proximal_weight: 0.25,
            step_size: 0.1,
            max_iters: 1000,
            tolerance: 1e-6,
            anneal_factor: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.proximal_weight > 0.0 && self.proximal_weight.is_finite()) {
            return Err(SolverError::InvalidConfig(format!(
                "proximal weight must be positive, got {}",
                self.proximal_weight
            )));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(SolverError::InvalidConfig(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(SolverError::InvalidConfig(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if !(self.anneal_factor > 0.0 && self.anneal_factor <= 1.0) {
            return Err(SolverError::InvalidConfig(format!(
                "anneal factor must lie in (0, 1], got {}",
                self.anneal_factor
            )));
        }
        Ok(())
    }
}

// Shared per-iteration kernels. All three solvers route their passes through
// these so that models which coincide structurally (a star ordering run as a
// flat model or as a DAG) evolve bit-identically.

use crate::field::{self, GridWalk, ScalarField, VectorField};

/// `dst(x) <- excess(x)` on the first call, `min(dst(x), excess(x))` after;
/// builds the per-voxel exponent shift.
pub(crate) fn min_excess_into<F>(dst: &mut ScalarField, first: bool, excess: F)
where
    F: Fn(usize) -> f64 + Sync,
{
    field::for_voxels(dst.values_mut(), 1, |start, w| {
        for (j, v) in w.iter_mut().enumerate() {
            let e = excess(start + j);
            *v = if first { e } else { v.min(e) };
        }
    });
}

/// Multiplicative label update `u(x) <- u(x) * exp(-(excess(x) - shift(x)) / c)`;
/// returns the largest per-voxel change of the (unnormalized) label, which is
/// the convergence metric: it vanishes exactly at fixed points and needs no
/// extra buffer.
pub(crate) fn multiplicative_update<F>(
    u: &mut ScalarField,
    excess: F,
    shift: &[f64],
    c: f64,
) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    field::for_voxels_max(u.values_mut(), 1, |start, w| {
        let mut local = 0.0f64;
        for (j, v) in w.iter_mut().enumerate() {
            let i = start + j;
            let next = *v * (-(excess(i) - shift[i]) / c).exp();
            local = local.max((next - *v).abs());
            *v = next;
        }
        local
    })
}

/// Dual flow step: descend along the potential's gradient, then project each
/// voxel's flow vector onto the ball of radius `bound`.
pub(crate) fn flow_step(
    q: &mut VectorField,
    potential: &[f64],
    bound: &[f64],
    step: f64,
    walk: &GridWalk,
) {
    let nd = walk.ndim();
    field::for_voxels(q.interleaved_mut(), nd, |start, w| {
        for j in 0..w.len() / nd {
            let voxel = start + j;
            let comps = &mut w[j * nd..j * nd + nd];
            for (axis, c) in comps.iter_mut().enumerate() {
                *c -= step * walk.forward_diff(potential, voxel, axis);
            }
            field::project_voxel(comps, bound[voxel]);
        }
    });
}

/// Simultaneous mutable/shared access to two distinct entries of a field
/// slice (used by the prefix/suffix accumulations and edge pushes).
pub(crate) fn pair_mut(
    fields: &mut [ScalarField],
    write: usize,
    read: usize,
) -> (&mut ScalarField, &ScalarField) {
    assert_ne!(write, read);
    if write < read {
        let (lo, hi) = fields.split_at_mut(read);
        (&mut lo[write], &hi[0])
    } else {
        let (lo, hi) = fields.split_at_mut(write);
        (&mut hi[0], &lo[read])
    }
}

/// Divides every label by the accumulator; a zero accumulator is a numerical
/// collapse and is reported with its (lowest) voxel index.
pub(crate) fn normalize_labels(
    labels: &mut [&mut ScalarField],
    accumulator: &ScalarField,
) -> Result<(), SolverError> {
    if let Some(voxel) = accumulator.values().iter().position(|&a| a == 0.0) {
        return Err(SolverError::NumericalCollapse { voxel });
    }
    let acc = accumulator.values();
    for u in labels.iter_mut() {
        field::for_voxels(u.values_mut(), 1, |start, w| {
            for (j, v) in w.iter_mut().enumerate() {
                *v /= acc[start + j];
            }
        });
    }
    Ok(())
}
