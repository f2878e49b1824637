//! Flat multi-region solver: every label competes directly under a per-voxel
//! simplex constraint, with one spatial flow field per label.
//!
//! Each iteration performs, in this order: a multiplicative label update
//! driven by the data term plus the divergence of the label's flow, a
//! projected dual step on the flows against the just-updated (unnormalized)
//! labels, accumulation of the label sum, and simplex normalization. The
//! exponent is shifted per voxel by the minimum excess before
//! exponentiation, which leaves the normalized result unchanged but avoids
//! underflow for small proximal weights.

use crate::energy;
use crate::field::{self, GridGeometry, GridWalk, LabelMap, ScalarField, VectorField};
use crate::graph::{DagModel, DagModelBuilder, ModelIssue};
use crate::solver::{self, SolverConfig, SolverError};

/// A flat label model: per label a data term and a non-negative smoothness
/// field, all on one grid.
#[derive(Debug)]
pub struct PottsModel {
    geometry: GridGeometry,
    names: Vec<String>,
    data: Vec<ScalarField>,
    smoothness: Vec<ScalarField>,
}

impl PottsModel {
    /// Validates geometry agreement, finiteness and smoothness sign for all
    /// labels. `labels` is kept in the given order.
    pub fn new(
        geometry: GridGeometry,
        labels: Vec<(String, ScalarField, ScalarField)>,
    ) -> Result<Self, Vec<ModelIssue>> {
        let mut issues = Vec::new();
        let mut names = Vec::new();
        let mut data = Vec::new();
        let mut smoothness = Vec::new();
        for (name, d, s) in labels {
            if names.contains(&name) {
                issues.push(ModelIssue::DuplicateNode(name.clone()));
            }
            for (field, check_sign) in [(&d, false), (&s, true)] {
                if field.geometry() != &geometry {
                    issues.push(ModelIssue::GeometryMismatch(name.clone()));
                    continue;
                }
                if let Some(bad) = field.values().iter().position(|v| !v.is_finite()) {
                    issues.push(ModelIssue::NonFiniteField { node: name.clone(), voxel: bad });
                } else if check_sign {
                    if let Some(bad) = field.values().iter().position(|&v| v < 0.0) {
                        issues.push(ModelIssue::NegativeSmoothness {
                            node: name.clone(),
                            voxel: bad,
                        });
                    }
                }
            }
            names.push(name);
            data.push(d);
            smoothness.push(s);
        }
        if names.is_empty() {
            issues.push(ModelIssue::NoEndLabels);
        }
        if !issues.is_empty() {
            return Err(issues);
        }
        Ok(Self { geometry, names, data, smoothness })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn label_count(&self) -> usize {
        self.names.len()
    }

    pub fn label_names(&self) -> &[String] {
        &self.names
    }

    pub fn data(&self, label: usize) -> &ScalarField {
        &self.data[label]
    }

    pub fn smoothness(&self, label: usize) -> &ScalarField {
        &self.smoothness[label]
    }

    /// The same model as a star-shaped DAG (source feeding every label with
    /// unit weight); used by the cross-solver equivalence checks.
    pub fn to_dag(&self, source: &str) -> Result<DagModel, Vec<ModelIssue>> {
        let mut b = DagModelBuilder::new(self.geometry.clone(), source);
        for (i, name) in self.names.iter().enumerate() {
            b = b
                .node(name, Some(self.data[i].clone()), Some(self.smoothness[i].clone()))
                .edge(source, name, 1.0);
        }
        b.build()
    }
}

/// Working buffers of the flat solver: one label field and one flow field per
/// label, plus a single accumulator. This is the entire voxel-sized state.
#[derive(Debug)]
pub struct PottsState {
    labels: Vec<ScalarField>,
    flows: Vec<VectorField>,
    accumulator: ScalarField,
    iterations: usize,
}

impl PottsState {
    /// Uniform labels at `1 / #labels`, zero flows.
    pub fn init(model: &PottsModel, config: &SolverConfig) -> Result<Self, SolverError> {
        config.validate()?;
        let k = model.label_count();
        if k < 2 {
            return Err(SolverError::TooFewLabels(k));
        }
        let geom = model.geometry();
        let labels = (0..k).map(|_| ScalarField::filled(geom, 1.0 / k as f64)).collect();
        let flows = (0..k).map(|_| VectorField::zeros(geom)).collect();
        Ok(Self {
            labels,
            flows,
            accumulator: ScalarField::zeros(geom),
            iterations: 0,
        })
    }

    pub fn labels(&self) -> &[ScalarField] {
        &self.labels
    }

    pub fn flows(&self) -> &[VectorField] {
        &self.flows
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Number of voxel-sized buffers held by this state; equals the
    /// pseudo-flow budget for the model.
    pub fn voxel_buffer_count(&self) -> usize {
        let nd = self.accumulator.geometry().ndim();
        self.labels.len() + self.flows.len() * nd + 1
    }

    /// One full iteration; returns the maximum per-voxel label change.
    pub fn iterate(
        &mut self,
        model: &PottsModel,
        config: &SolverConfig,
    ) -> Result<f64, SolverError> {
        let walk = GridWalk::new(model.geometry());
        let c = config.proximal_weight;
        let step = c * config.step_size;

        // Per-voxel exponent shift: the minimum excess over labels, staged in
        // the accumulator (free until the normalization step).
        for (l, q) in self.flows.iter().enumerate() {
            let d = model.data(l).values();
            let qv = q.interleaved();
            solver::min_excess_into(&mut self.accumulator, l == 0, |i| {
                d[i] + walk.divergence_at(qv, i)
            });
        }

        // Multiplicative update against the shifted excess.
        let mut max_change = 0.0f64;
        let shift = self.accumulator.values();
        for (l, u) in self.labels.iter_mut().enumerate() {
            let d = model.data(l).values();
            let qv = self.flows[l].interleaved();
            let change = solver::multiplicative_update(
                u,
                |i| d[i] + walk.divergence_at(qv, i),
                shift,
                c,
            );
            max_change = max_change.max(change);
        }

        // Dual step against the unnormalized labels.
        for (l, q) in self.flows.iter_mut().enumerate() {
            solver::flow_step(
                q,
                self.labels[l].values(),
                model.smoothness(l).values(),
                step,
                &walk,
            );
        }

        // Accumulate and normalize back onto the simplex.
        self.accumulator
            .copy_from(&self.labels[0])
            .expect("state buffers share one geometry");
        for u in &self.labels[1..] {
            self.accumulator.add_field(u).expect("state buffers share one geometry");
        }
        let mut labels: Vec<&mut ScalarField> = self.labels.iter_mut().collect();
        solver::normalize_labels(&mut labels, &self.accumulator)?;

        self.iterations += 1;
        Ok(max_change)
    }
}

/// Converged labeling plus the per-iteration report.
#[derive(Debug)]
pub struct PottsSolution {
    pub label_names: Vec<String>,
    pub labels: Vec<ScalarField>,
    pub label_map: LabelMap,
    pub report: energy::EnergyReport,
}

/// Runs the solver until the label change drops below the tolerance or
/// `max_iters` is reached (reported via [`energy::EnergyReport::converged`]).
/// Identical inputs produce bit-identical outputs regardless of thread count.
pub fn run(model: &PottsModel, config: &SolverConfig) -> Result<PottsSolution, SolverError> {
    let mut state = PottsState::init(model, config)?;
    let mut current = config.clone();
    let mut report = energy::EnergyReport::default();

    for _ in 0..config.max_iters {
        let change = state.iterate(model, &current)?;
        report.relaxed_energies.push(energy::potts_relaxed_energy_unchecked(
            model,
            state.labels(),
        ));
        report
            .primal_energies
            .push(energy::potts_argmax_energy(model, state.labels()));
        report.max_label_changes.push(change);
        report.iterations += 1;
        if change < current.tolerance {
            report.converged = true;
            break;
        }
        current.proximal_weight *= current.anneal_factor;
    }

    let label_map = argmax_labeling(&state.labels);
    Ok(PottsSolution {
        label_names: model.names.clone(),
        labels: state.labels,
        label_map,
        report,
    })
}

/// Per-voxel index of the maximal label; ties go to the lowest index.
pub fn argmax_labeling(labels: &[ScalarField]) -> LabelMap {
    assert!(
        !labels.is_empty() && labels.len() <= 256,
        "argmax label maps support 1..=256 labels"
    );
    let geom = labels[0].geometry();
    let indices = (0..geom.voxel_count())
        .map(|i| field::argmax_at(labels, i) as u8)
        .collect();
    LabelMap::new(geom, indices).expect("labels share one geometry")
}
