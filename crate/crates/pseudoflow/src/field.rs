//! Regular-grid scalar and vector fields with the discrete differential
//! operators and projections used by every solver step.
//!
//! Storage is flat and axis-major with the first axis fastest, which fixes a
//! bit-exact layout for file I/O. The gradient is a forward first difference
//! with a zero at the trailing boundary of each axis, and the divergence is
//! its exact negative adjoint, so that `<grad u, q> = -<u, div q>` holds for
//! arbitrary fields. All reductions use a fixed chunk association so results
//! are bit-identical between serial and parallel runs.

use std::cell::Cell;

use rayon::prelude::*;
use thiserror::Error;

/// Chunk length (in voxels) used as the association unit for reductions and
/// as the work unit for parallel passes.
pub(crate) const CHUNK: usize = 4096;
/// Below this many voxels a pass runs on the calling thread.
const PAR_MIN: usize = 4096;

thread_local! {
    static VOXEL_BUFFERS: Cell<u64> = const { Cell::new(0) };
}

/// Running count of voxel-sized `f64` buffers allocated on this thread.
///
/// A `ScalarField` counts as one buffer, a `VectorField` as one per axis.
/// The solver budget tests snapshot this around init and iteration to audit
/// that the working set matches the reported buffer budget.
pub fn voxel_buffers_allocated() -> u64 {
    VOXEL_BUFFERS.with(|c| c.get())
}

fn note_buffers(n: u64) {
    VOXEL_BUFFERS.with(|c| c.set(c.get() + n));
}

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("grid must have 2 or 3 axes, got {0}")]
    BadAxisCount(usize),
    #[error("axis {0} has extent 0")]
    ZeroExtent(usize),
    #[error("geometry mismatch: {left:?} vs {right:?}")]
    GeometryMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("storage length {got} does not match voxel count {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value at voxel {0}")]
    NonFinite(usize),
    #[error("division by zero at voxel {0}")]
    DivisionByZero(usize),
    #[error("negative projection bound at voxel {0}")]
    NegativeBound(usize),
}

/// Extents of a regular 2D or 3D grid with unit spacing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridGeometry {
    dims: Vec<usize>,
}

impl GridGeometry {
    pub fn new(dims: &[usize]) -> Result<Self, FieldError> {
        if dims.len() < 2 || dims.len() > 3 {
            return Err(FieldError::BadAxisCount(dims.len()));
        }
        for (axis, &n) in dims.iter().enumerate() {
            if n == 0 {
                return Err(FieldError::ZeroExtent(axis));
            }
        }
        Ok(Self { dims: dims.to_vec() })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn extent(&self, axis: usize) -> usize {
        self.dims[axis]
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Linear stride of one step along `axis` (first axis fastest).
    pub fn stride(&self, axis: usize) -> usize {
        self.dims[..axis].iter().product()
    }

    fn check_match(&self, other: &GridGeometry) -> Result<(), FieldError> {
        if self != other {
            return Err(FieldError::GeometryMismatch {
                left: self.dims.clone(),
                right: other.dims.clone(),
            });
        }
        Ok(())
    }
}

/// Precomputed strides/extents for streaming per-voxel difference stencils.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GridWalk {
    ndim: usize,
    dims: [usize; 3],
    strides: [usize; 3],
}

impl GridWalk {
    pub(crate) fn new(geom: &GridGeometry) -> Self {
        let mut dims = [1usize; 3];
        let mut strides = [0usize; 3];
        for axis in 0..geom.ndim() {
            dims[axis] = geom.extent(axis);
            strides[axis] = geom.stride(axis);
        }
        Self { ndim: geom.ndim(), dims, strides }
    }

    pub(crate) fn ndim(&self) -> usize {
        self.ndim
    }

    #[inline]
    fn coord(&self, voxel: usize, axis: usize) -> usize {
        (voxel / self.strides[axis]) % self.dims[axis]
    }

    /// Forward difference of `u` along `axis` at `voxel`; zero at the
    /// trailing boundary.
    #[inline]
    pub(crate) fn forward_diff(&self, u: &[f64], voxel: usize, axis: usize) -> f64 {
        if self.coord(voxel, axis) + 1 < self.dims[axis] {
            u[voxel + self.strides[axis]] - u[voxel]
        } else {
            0.0
        }
    }

    /// Index of the forward neighbor along `axis`, if `voxel` is not on the
    /// trailing boundary.
    #[inline]
    pub(crate) fn forward_diff_index(&self, voxel: usize, axis: usize) -> Option<usize> {
        if self.coord(voxel, axis) + 1 < self.dims[axis] {
            Some(voxel + self.strides[axis])
        } else {
            None
        }
    }

    /// Divergence of interleaved flow components at `voxel`: the exact
    /// negative adjoint of [`GridWalk::forward_diff`]. The component at the
    /// trailing boundary of an axis pairs with a structurally zero gradient
    /// entry and therefore does not contribute.
    #[inline]
    pub(crate) fn divergence_at(&self, q: &[f64], voxel: usize) -> f64 {
        let nd = self.ndim;
        let mut acc = 0.0;
        for axis in 0..nd {
            let c = self.coord(voxel, axis);
            if c + 1 < self.dims[axis] {
                acc += q[voxel * nd + axis];
            }
            if c > 0 {
                acc -= q[(voxel - self.strides[axis]) * nd + axis];
            }
        }
        acc
    }
}

/// One real value per voxel.
#[derive(Debug, PartialEq)]
pub struct ScalarField {
    geometry: GridGeometry,
    values: Vec<f64>,
}

impl Clone for ScalarField {
    fn clone(&self) -> Self {
        note_buffers(1);
        Self { geometry: self.geometry.clone(), values: self.values.clone() }
    }
}

impl ScalarField {
    pub fn zeros(geometry: &GridGeometry) -> Self {
        Self::filled(geometry, 0.0)
    }

    pub fn filled(geometry: &GridGeometry, value: f64) -> Self {
        note_buffers(1);
        Self {
            geometry: geometry.clone(),
            values: vec![value; geometry.voxel_count()],
        }
    }

    /// Takes ownership of raw values; rejects wrong lengths and non-finite
    /// entries.
    pub fn from_values(geometry: &GridGeometry, values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != geometry.voxel_count() {
            return Err(FieldError::LengthMismatch {
                expected: geometry.voxel_count(),
                got: values.len(),
            });
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite(bad));
        }
        note_buffers(1);
        Ok(Self { geometry: geometry.clone(), values })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn fill(&mut self, value: f64) {
        self.values.fill(value);
    }

    pub fn scale(&mut self, factor: f64) {
        for_voxels(&mut self.values, 1, |_, w| {
            for v in w {
                *v *= factor;
            }
        });
    }

    pub fn add_field(&mut self, other: &ScalarField) -> Result<(), FieldError> {
        self.geometry.check_match(&other.geometry)?;
        let rhs = other.values();
        for_voxels(&mut self.values, 1, |start, w| {
            for (j, v) in w.iter_mut().enumerate() {
                *v += rhs[start + j];
            }
        });
        Ok(())
    }

    /// `self += factor * other`.
    pub fn axpy(&mut self, factor: f64, other: &ScalarField) -> Result<(), FieldError> {
        self.geometry.check_match(&other.geometry)?;
        let rhs = other.values();
        for_voxels(&mut self.values, 1, |start, w| {
            for (j, v) in w.iter_mut().enumerate() {
                *v += factor * rhs[start + j];
            }
        });
        Ok(())
    }

    pub fn exp_in_place(&mut self) {
        for_voxels(&mut self.values, 1, |_, w| {
            for v in w {
                *v = v.exp();
            }
        });
    }

    /// Pointwise division; a zero denominator is reported to the caller.
    pub fn divide_by(&mut self, other: &ScalarField) -> Result<(), FieldError> {
        self.geometry.check_match(&other.geometry)?;
        let rhs = other.values();
        if let Some(bad) = rhs.iter().position(|&d| d == 0.0) {
            return Err(FieldError::DivisionByZero(bad));
        }
        for_voxels(&mut self.values, 1, |start, w| {
            for (j, v) in w.iter_mut().enumerate() {
                *v /= rhs[start + j];
            }
        });
        Ok(())
    }

    pub fn copy_from(&mut self, other: &ScalarField) -> Result<(), FieldError> {
        self.geometry.check_match(&other.geometry)?;
        self.values.copy_from_slice(other.values());
        Ok(())
    }

    /// Deterministic (fixed-association) sum of all voxels.
    pub fn sum(&self) -> f64 {
        let v = &self.values;
        sum_voxels(v.len(), |i| v[i])
    }
}

/// One real value per voxel per axis. Components are stored interleaved
/// (voxel-major) so that per-voxel operations touch contiguous memory; the
/// axis-major file layout applies to scalar volumes only.
#[derive(Debug, PartialEq)]
pub struct VectorField {
    geometry: GridGeometry,
    data: Vec<f64>,
}

impl Clone for VectorField {
    fn clone(&self) -> Self {
        note_buffers(self.geometry.ndim() as u64);
        Self { geometry: self.geometry.clone(), data: self.data.clone() }
    }
}

impl VectorField {
    pub fn zeros(geometry: &GridGeometry) -> Self {
        note_buffers(geometry.ndim() as u64);
        Self {
            geometry: geometry.clone(),
            data: vec![0.0; geometry.voxel_count() * geometry.ndim()],
        }
    }

    /// Builds a field from one slice per axis.
    pub fn from_components(
        geometry: &GridGeometry,
        components: &[Vec<f64>],
    ) -> Result<Self, FieldError> {
        if components.len() != geometry.ndim() {
            return Err(FieldError::BadAxisCount(components.len()));
        }
        let n = geometry.voxel_count();
        for comp in components {
            if comp.len() != n {
                return Err(FieldError::LengthMismatch { expected: n, got: comp.len() });
            }
            if let Some(bad) = comp.iter().position(|v| !v.is_finite()) {
                return Err(FieldError::NonFinite(bad));
            }
        }
        let nd = geometry.ndim();
        let mut data = vec![0.0; n * nd];
        for (axis, comp) in components.iter().enumerate() {
            for (i, &v) in comp.iter().enumerate() {
                data[i * nd + axis] = v;
            }
        }
        note_buffers(nd as u64);
        Ok(Self { geometry: geometry.clone(), data })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn get(&self, voxel: usize, axis: usize) -> f64 {
        self.data[voxel * self.geometry.ndim() + axis]
    }

    pub fn set(&mut self, voxel: usize, axis: usize, value: f64) {
        let nd = self.geometry.ndim();
        self.data[voxel * nd + axis] = value;
    }

    /// Copies out one component as a plain per-voxel vector.
    pub fn component(&self, axis: usize) -> Vec<f64> {
        let nd = self.geometry.ndim();
        self.data.iter().skip(axis).step_by(nd).copied().collect()
    }

    pub(crate) fn interleaved(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn interleaved_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Per-voxel Euclidean norm.
    pub fn norm_at(&self, voxel: usize) -> f64 {
        let nd = self.geometry.ndim();
        let mut s = 0.0;
        for axis in 0..nd {
            let v = self.data[voxel * nd + axis];
            s += v * v;
        }
        s.sqrt()
    }
}

/// Forward first difference per axis; zero at the trailing boundary
/// (Neumann boundary).
pub fn gradient(u: &ScalarField) -> VectorField {
    let walk = GridWalk::new(u.geometry());
    let nd = walk.ndim();
    let mut out = VectorField::zeros(u.geometry());
    let src = u.values();
    for_voxels(out.interleaved_mut(), nd, |start, w| {
        for j in 0..w.len() / nd {
            let voxel = start + j;
            for axis in 0..nd {
                w[j * nd + axis] = walk.forward_diff(src, voxel, axis);
            }
        }
    });
    out
}

/// Exact negative adjoint of [`gradient`]: `<grad u, q> = -<u, div q>` for
/// all `u`, `q`. Per axis this is the backward difference `q_i - q_{i-1}`
/// with `q_{-1} = 0`, except that the component at the trailing boundary is
/// dropped (it pairs with a structurally zero gradient entry).
pub fn divergence(q: &VectorField) -> ScalarField {
    let walk = GridWalk::new(q.geometry());
    let mut out = ScalarField::zeros(q.geometry());
    let src = q.interleaved();
    for_voxels(out.values_mut(), 1, |start, w| {
        for (j, v) in w.iter_mut().enumerate() {
            *v = walk.divergence_at(src, start + j);
        }
    });
    out
}

// Relative slack on the projection trigger. Wide enough that a vector already
// scaled onto the ball is never rescaled (keeps the projection exactly
// idempotent), narrow enough that the feasibility excess stays below 1e-12
// for bounds up to ~10.
const PROJECT_SLACK: f64 = 1e-13;

/// Scales each voxel's vector onto the Euclidean ball of the given radius;
/// vectors already inside are untouched.
pub fn project_ball(q: &mut VectorField, bound: &ScalarField) -> Result<(), FieldError> {
    q.geometry().check_match(bound.geometry())?;
    if let Some(bad) = bound.values().iter().position(|&b| b < 0.0) {
        return Err(FieldError::NegativeBound(bad));
    }
    let nd = q.geometry().ndim();
    let bounds = bound.values();
    for_voxels(q.interleaved_mut(), nd, |start, w| {
        for j in 0..w.len() / nd {
            project_voxel(&mut w[j * nd..j * nd + nd], bounds[start + j]);
        }
    });
    Ok(())
}

#[inline]
pub(crate) fn project_voxel(components: &mut [f64], bound: f64) {
    let mut sq = 0.0;
    for &c in components.iter() {
        sq += c * c;
    }
    let norm = sq.sqrt();
    if norm > bound * (1.0 + PROJECT_SLACK) {
        let scale = bound / norm;
        for c in components {
            *c *= scale;
        }
    }
}

/// Discrete per-voxel label assignment (indices into an end-label list).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    geometry: GridGeometry,
    indices: Vec<u8>,
}

impl LabelMap {
    pub fn new(geometry: &GridGeometry, indices: Vec<u8>) -> Result<Self, FieldError> {
        if indices.len() != geometry.voxel_count() {
            return Err(FieldError::LengthMismatch {
                expected: geometry.voxel_count(),
                got: indices.len(),
            });
        }
        Ok(Self { geometry: geometry.clone(), indices })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn indices(&self) -> &[u8] {
        &self.indices
    }

    /// Fraction of voxels on which two maps agree.
    pub fn agreement(&self, other: &LabelMap) -> Result<f64, FieldError> {
        self.geometry.check_match(&other.geometry)?;
        let same = self
            .indices
            .iter()
            .zip(&other.indices)
            .filter(|(a, b)| a == b)
            .count();
        Ok(same as f64 / self.indices.len().max(1) as f64)
    }
}

/// Index of the largest value among `fields` at `voxel`; ties go to the
/// lowest index.
#[inline]
pub(crate) fn argmax_at(fields: &[ScalarField], voxel: usize) -> usize {
    let mut best = 0;
    let mut best_val = fields[0].values()[voxel];
    for (k, f) in fields.iter().enumerate().skip(1) {
        let v = f.values()[voxel];
        if v > best_val {
            best = k;
            best_val = v;
        }
    }
    best
}

/// Runs `op(first_voxel, window)` over fixed-size windows of `dst`.
/// `stride` is the number of stored values per voxel (1 for scalars, the
/// axis count for interleaved vectors). Window boundaries are identical in
/// serial and parallel execution.
pub(crate) fn for_voxels<F>(dst: &mut [f64], stride: usize, op: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let window = CHUNK * stride;
    if dst.len() < PAR_MIN * stride {
        for (ci, w) in dst.chunks_mut(window).enumerate() {
            op(ci * CHUNK, w);
        }
    } else {
        dst.par_chunks_mut(window)
            .enumerate()
            .for_each(|(ci, w)| op(ci * CHUNK, w));
    }
}

/// Like [`for_voxels`], but `op` also returns a per-window maximum which is
/// reduced across windows (exact, so thread count does not matter).
pub(crate) fn for_voxels_max<F>(dst: &mut [f64], stride: usize, op: F) -> f64
where
    F: Fn(usize, &mut [f64]) -> f64 + Sync,
{
    let window = CHUNK * stride;
    if dst.len() < PAR_MIN * stride {
        dst.chunks_mut(window)
            .enumerate()
            .map(|(ci, w)| op(ci * CHUNK, w))
            .fold(f64::NEG_INFINITY, f64::max)
    } else {
        dst.par_chunks_mut(window)
            .enumerate()
            .map(|(ci, w)| op(ci * CHUNK, w))
            .reduce(|| f64::NEG_INFINITY, f64::max)
    }
}

/// Deterministic sum of `f(voxel)` over `0..n`: per-chunk partials are
/// accumulated in voxel order and then folded in chunk order, so the
/// association (and the result) never depends on the thread count.
pub(crate) fn sum_voxels<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunk_sum = |ci: usize| {
        let lo = ci * CHUNK;
        let hi = (lo + CHUNK).min(n);
        let mut s = 0.0;
        for i in lo..hi {
            s += f(i);
        }
        s
    };
    let chunks = n.div_ceil(CHUNK);
    if n < PAR_MIN {
        (0..chunks).map(chunk_sum).sum()
    } else {
        let partials: Vec<f64> = (0..chunks).into_par_iter().map(chunk_sum).collect();
        partials.iter().sum()
    }
}

/// Maximum of `f(voxel)` over `0..n` (exact, so association-free).
pub(crate) fn max_voxels<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunk_max = |ci: usize| {
        let lo = ci * CHUNK;
        let hi = (lo + CHUNK).min(n);
        let mut m = f64::NEG_INFINITY;
        for i in lo..hi {
            m = m.max(f(i));
        }
        m
    };
    let chunks = n.div_ceil(CHUNK);
    if n < PAR_MIN {
        (0..chunks).map(chunk_max).fold(f64::NEG_INFINITY, f64::max)
    } else {
        (0..chunks)
            .into_par_iter()
            .map(chunk_max)
            .reduce(|| f64::NEG_INFINITY, f64::max)
    }
}

/// Deterministic inner product of two scalar fields.
pub fn inner_scalar(a: &ScalarField, b: &ScalarField) -> Result<f64, FieldError> {
    a.geometry().check_match(b.geometry())?;
    let (av, bv) = (a.values(), b.values());
    Ok(sum_voxels(av.len(), |i| av[i] * bv[i]))
}

/// Deterministic inner product of two vector fields (all components).
pub fn inner_vector(a: &VectorField, b: &VectorField) -> Result<f64, FieldError> {
    a.geometry().check_match(b.geometry())?;
    let (av, bv) = (a.interleaved(), b.interleaved());
    Ok(sum_voxels(av.len(), |i| av[i] * bv[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn line3() -> GridGeometry {
        // 1D examples live on a 3x1 grid; the second axis contributes nothing.
        GridGeometry::new(&[3, 1]).unwrap()
    }

    #[test]
    fn geometry_validation() {
        assert_eq!(GridGeometry::new(&[4]).unwrap_err(), FieldError::BadAxisCount(1));
        assert_eq!(
            GridGeometry::new(&[2, 2, 2, 2]).unwrap_err(),
            FieldError::BadAxisCount(4)
        );
        assert_eq!(GridGeometry::new(&[4, 0]).unwrap_err(), FieldError::ZeroExtent(1));
        let g = GridGeometry::new(&[4, 3, 2]).unwrap();
        assert_eq!(g.voxel_count(), 24);
        assert_eq!(g.stride(0), 1);
        assert_eq!(g.stride(1), 4);
        assert_eq!(g.stride(2), 12);
    }

    #[test]
    fn gradient_forward_difference() {
        let g = line3();
        let u = ScalarField::from_values(&g, vec![0.0, 1.0, 0.0]).unwrap();
        let q = gradient(&u);
        assert_eq!(q.component(0), vec![1.0, -1.0, 0.0]);
        assert_eq!(q.component(1), vec![0.0, 0.0, 0.0]);

        let u = ScalarField::from_values(&g, vec![0.0, 0.0, 1.0]).unwrap();
        assert_eq!(gradient(&u).component(0), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = GridGeometry::new(&[4, 3]).unwrap();
        let u = ScalarField::filled(&g, 2.5);
        assert!(gradient(&u).interleaved().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn divergence_backward_difference() {
        let g = line3();
        let q =
            VectorField::from_components(&g, &[vec![1.0, -1.0, 0.0], vec![0.0; 3]]).unwrap();
        assert_eq!(divergence(&q).values(), &[1.0, -2.0, 1.0]);

        let zero = VectorField::zeros(&g);
        assert!(divergence(&zero).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn divergence_drops_trailing_component() {
        // The trailing component pairs with a structurally zero gradient
        // entry, so the adjoint ignores it and the total divergence is zero.
        let g = line3();
        let q = VectorField::from_components(&g, &[vec![1.0, 1.0, 1.0], vec![0.0; 3]]).unwrap();
        let d = divergence(&q);
        assert_eq!(d.values(), &[1.0, 0.0, -1.0]);
        assert_eq!(d.sum(), 0.0);
    }

    #[test]
    fn adjoint_identity_hand_case() {
        let g = line3();
        let u = ScalarField::from_values(&g, vec![0.0, 1.0, 0.0]).unwrap();
        let q =
            VectorField::from_components(&g, &[vec![1.0, -1.0, 0.0], vec![0.0; 3]]).unwrap();
        let lhs = inner_vector(&gradient(&u), &q).unwrap();
        let rhs = -inner_scalar(&u, &divergence(&q)).unwrap();
        assert_eq!(lhs, 2.0);
        assert_eq!(rhs, 2.0);
    }

    #[test]
    fn project_ball_examples() {
        let g = GridGeometry::new(&[1, 1]).unwrap();
        let mut q = VectorField::from_components(&g, &[vec![3.0], vec![4.0]]).unwrap();
        let b5 = ScalarField::filled(&g, 5.0);
        project_ball(&mut q, &b5).unwrap();
        assert_eq!((q.get(0, 0), q.get(0, 1)), (3.0, 4.0));

        let mut q = VectorField::from_components(&g, &[vec![6.0], vec![8.0]]).unwrap();
        project_ball(&mut q, &b5).unwrap();
        assert_abs_diff_eq!(q.get(0, 0), 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.get(0, 1), 4.0, epsilon = 1e-15);

        let mut q = VectorField::from_components(&g, &[vec![1.0], vec![0.0]]).unwrap();
        let b0 = ScalarField::filled(&g, 0.0);
        project_ball(&mut q, &b0).unwrap();
        assert_eq!((q.get(0, 0), q.get(0, 1)), (0.0, 0.0));
    }

    #[test]
    fn project_ball_rejects_negative_bound() {
        let g = GridGeometry::new(&[1, 1]).unwrap();
        let mut q = VectorField::zeros(&g);
        let b = ScalarField::from_values(&g, vec![-1.0]).unwrap();
        assert_eq!(project_ball(&mut q, &b).unwrap_err(), FieldError::NegativeBound(0));
    }

    #[test]
    fn arithmetic_examples() {
        let g = GridGeometry::new(&[2, 1]).unwrap();
        let mut f = ScalarField::zeros(&g);
        f.fill(0.5);
        assert_eq!(f.sum(), 1.0);

        let mut e = ScalarField::zeros(&g);
        e.exp_in_place();
        assert_eq!(e.values(), &[1.0, 1.0]);

        let mut num = ScalarField::from_values(&g, vec![2.0, 4.0]).unwrap();
        let den = ScalarField::from_values(&g, vec![2.0, 2.0]).unwrap();
        num.divide_by(&den).unwrap();
        assert_eq!(num.values(), &[1.0, 2.0]);

        let zero_den = ScalarField::from_values(&g, vec![1.0, 0.0]).unwrap();
        assert_eq!(num.divide_by(&zero_den).unwrap_err(), FieldError::DivisionByZero(1));
    }

    #[test]
    fn geometry_mismatch_is_reported() {
        let a = ScalarField::zeros(&GridGeometry::new(&[2, 2]).unwrap());
        let mut b = ScalarField::zeros(&GridGeometry::new(&[2, 3]).unwrap());
        assert!(matches!(
            b.add_field(&a).unwrap_err(),
            FieldError::GeometryMismatch { .. }
        ));
    }

    #[test]
    fn from_values_rejects_non_finite() {
        let g = GridGeometry::new(&[2, 1]).unwrap();
        assert_eq!(
            ScalarField::from_values(&g, vec![1.0, f64::NAN]).unwrap_err(),
            FieldError::NonFinite(1)
        );
    }

    #[test]
    fn label_map_agreement() {
        let g = GridGeometry::new(&[2, 2]).unwrap();
        let a = LabelMap::new(&g, vec![0, 1, 1, 0]).unwrap();
        let b = LabelMap::new(&g, vec![0, 1, 0, 0]).unwrap();
        assert_eq!(a.agreement(&b).unwrap(), 0.75);
    }

    #[test]
    fn chunked_sum_matches_reference_on_small_input() {
        let xs: Vec<f64> = (0..100).map(|i| i as f64 * 0.25).collect();
        let total = sum_voxels(xs.len(), |i| xs[i]);
        assert_abs_diff_eq!(total, xs.iter().sum::<f64>(), epsilon = 1e-12);
    }

    fn arb_geometry() -> impl Strategy<Value = GridGeometry> {
        prop_oneof![
            (1usize..6, 1usize..6).prop_map(|(a, b)| GridGeometry::new(&[a, b]).unwrap()),
            (1usize..4, 1usize..4, 1usize..4)
                .prop_map(|(a, b, c)| GridGeometry::new(&[a, b, c]).unwrap()),
        ]
    }

    fn arb_fields() -> impl Strategy<Value = (ScalarField, VectorField)> {
        arb_geometry().prop_flat_map(|g| {
            let n = g.voxel_count();
            let nd = g.ndim();
            (
                proptest::collection::vec(-10.0f64..10.0, n),
                proptest::collection::vec(
                    proptest::collection::vec(-10.0f64..10.0, n),
                    nd,
                ),
            )
                .prop_map(move |(u, comps)| {
                    (
                        ScalarField::from_values(&g, u).unwrap(),
                        VectorField::from_components(&g, &comps).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn adjointness((u, q) in arb_fields()) {
            let lhs = inner_vector(&gradient(&u), &q).unwrap();
            let rhs = -inner_scalar(&u, &divergence(&q)).unwrap();
            let scale = 1.0 + lhs.abs().max(rhs.abs());
            prop_assert!((lhs - rhs).abs() <= 1e-10 * scale);
        }

        #[test]
        fn projection_idempotent_and_feasible((_, q) in arb_fields(), bound in 0.0f64..3.0) {
            let b = ScalarField::filled(q.geometry(), bound);
            let mut once = q.clone();
            project_ball(&mut once, &b).unwrap();
            for v in 0..q.geometry().voxel_count() {
                prop_assert!(once.norm_at(v) <= bound + 1e-12);
            }
            let mut twice = once.clone();
            project_ball(&mut twice, &b).unwrap();
            prop_assert_eq!(once.interleaved(), twice.interleaved());
        }
    }
}
