//! Solver for general directed-acyclic label orderings; tree (hierarchical)
//! and star orderings are special cases.
//!
//! Only end labels carry explicit label buffers. Intermediate labels are
//! implicit: one excess buffer per non-source node is reused for the
//! top-down flow-excess accumulation and, after the label update, for the
//! bottom-up accumulation of unnormalized label masses that drives the flow
//! updates. The working set is therefore one label buffer and one excess per
//! end label, one excess per intermediate, one flow field per non-source
//! node and a single accumulator.

use crate::energy;
use crate::field::{self, GridWalk, LabelMap, ScalarField, VectorField};
use crate::graph::{self, DagModel, GraphError};
use crate::potts::argmax_labeling;
use crate::solver::{self, SolverConfig, SolverError};

/// Working buffers of the DAG solver. Buffer count is asserted against the
/// pseudo-flow budget at construction.
#[derive(Debug)]
pub struct DagState {
    labels: Vec<ScalarField>,
    flows: Vec<VectorField>,
    excess: Vec<ScalarField>,
    accumulator: ScalarField,
    iterations: usize,
    /// node index -> slot in `flows`/`excess`; the source has no slot.
    slot: Vec<Option<usize>>,
}

impl DagState {
    /// Uniform end labels at `1 / #end-labels`, zero flows and excesses.
    pub fn init(model: &DagModel, config: &SolverConfig) -> Result<Self, SolverError> {
        config.validate()?;
        let ends = model.end_label_indices();
        if ends.len() < 2 {
            return Err(SolverError::TooFewLabels(ends.len()));
        }
        let geom = model.geometry();
        let source = model.source_index();

        let mut slot = vec![None; model.node_count()];
        let mut next = 0;
        for node in 0..model.node_count() {
            if node != source {
                slot[node] = Some(next);
                next += 1;
            }
        }
        let state = Self {
            labels: (0..ends.len())
                .map(|_| ScalarField::filled(geom, 1.0 / ends.len() as f64))
                .collect(),
            flows: (0..next).map(|_| VectorField::zeros(geom)).collect(),
            excess: (0..next).map(|_| ScalarField::zeros(geom)).collect(),
            accumulator: ScalarField::zeros(geom),
            iterations: 0,
            slot,
        };
        assert_eq!(
            state.voxel_buffer_count(),
            graph::model_budget(model).pseudo,
            "state working set must match the pseudo-flow budget"
        );
        Ok(state)
    }

    /// End-label fields, in end-label name order.
    pub fn end_labels(&self) -> &[ScalarField] {
        &self.labels
    }

    /// Flow field of a non-source node.
    pub fn flow_of(&self, model: &DagModel, node: &str) -> Result<&VectorField, GraphError> {
        let idx = model.index_of(node)?;
        self.slot[idx]
            .map(|s| &self.flows[s])
            .ok_or_else(|| GraphError::UnknownNode(node.to_string()))
    }

    /// Excess/mass buffer of a non-source node.
    pub fn excess_of(&self, model: &DagModel, node: &str) -> Result<&ScalarField, GraphError> {
        let idx = model.index_of(node)?;
        self.slot[idx]
            .map(|s| &self.excess[s])
            .ok_or_else(|| GraphError::UnknownNode(node.to_string()))
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn voxel_buffer_count(&self) -> usize {
        let nd = self.accumulator.geometry().ndim();
        self.labels.len() + self.flows.len() * nd + self.excess.len() + 1
    }

    /// Top-down phase: every non-source node starts from the divergence of
    /// its own flow, end labels add their data term, and each node visited in
    /// topological order pushes its weighted excess into its children. After
    /// this, every end label holds its full flow excess.
    pub fn accumulate_excess_topdown(&mut self, model: &DagModel) {
        let walk = GridWalk::new(model.geometry());
        for node in 0..model.node_count() {
            let Some(s) = self.slot[node] else { continue };
            let q = self.flows[s].interleaved();
            field::for_voxels(self.excess[s].values_mut(), 1, |start, w| {
                for (j, v) in w.iter_mut().enumerate() {
                    *v = walk.divergence_at(q, start + j);
                }
            });
            if let Some(data) = model.data_of(node) {
                self.excess[s].add_field(data).expect("model and state share geometry");
            }
        }
        for &node in model.topo_indices() {
            let Some(s) = self.slot[node] else { continue };
            for &(child, w) in model.children_of(node) {
                let cs = self.slot[child].expect("children are never the source");
                let (dst, src) = solver::pair_mut(&mut self.excess, cs, s);
                dst.axpy(w, src).expect("state buffers share one geometry");
            }
        }
    }

    /// Label phase: multiplicative update of the end labels against their
    /// excesses (with the per-voxel exponent shift), stash the unnormalized
    /// masses back into the end excess buffers, then normalize. Returns the
    /// maximum per-voxel label change.
    pub fn update_labels(
        &mut self,
        model: &DagModel,
        config: &SolverConfig,
    ) -> Result<f64, SolverError> {
        let c = config.proximal_weight;
        let ends = model.end_label_indices();

        for (k, &e) in ends.iter().enumerate() {
            let d = self.excess[self.slot[e].unwrap()].values();
            solver::min_excess_into(&mut self.accumulator, k == 0, |i| d[i]);
        }

        let shift = self.accumulator.values();
        let mut max_change = 0.0f64;
        for (k, &e) in ends.iter().enumerate() {
            let d = self.excess[self.slot[e].unwrap()].values();
            let change =
                solver::multiplicative_update(&mut self.labels[k], |i| d[i], shift, c);
            max_change = max_change.max(change);
        }
        for (k, &e) in ends.iter().enumerate() {
            let s = self.slot[e].unwrap();
            self.excess[s]
                .copy_from(&self.labels[k])
                .expect("state buffers share one geometry");
        }

        self.accumulator
            .copy_from(&self.labels[0])
            .expect("state buffers share one geometry");
        for u in &self.labels[1..] {
            self.accumulator.add_field(u).expect("state buffers share one geometry");
        }
        let mut labels: Vec<&mut ScalarField> = self.labels.iter_mut().collect();
        solver::normalize_labels(&mut labels, &self.accumulator)?;

        Ok(max_change)
    }

    /// Bottom-up phase: clear intermediate excesses, then visit nodes in
    /// reverse topological order, taking the projected dual step on each
    /// node's flow against its accumulated mass and pushing the weighted
    /// mass into non-source parents. Intermediate masses come out as the
    /// path-weighted sums of end-label masses.
    pub fn propagate_mass_and_update_flows(&mut self, model: &DagModel, config: &SolverConfig) {
        let walk = GridWalk::new(model.geometry());
        let step = config.proximal_weight * config.step_size;
        let source = model.source_index();

        for node in 0..model.node_count() {
            if node == source || model.is_end_label(node) {
                continue;
            }
            self.excess[self.slot[node].unwrap()].fill(0.0);
        }
        for &node in model.topo_indices().iter().rev() {
            let Some(s) = self.slot[node] else { continue };
            solver::flow_step(
                &mut self.flows[s],
                self.excess[s].values(),
                model
                    .smoothness_of(node)
                    .expect("validated non-source node has smoothness")
                    .values(),
                step,
                &walk,
            );
            for &(parent, w) in model.parents_of(node) {
                if parent == source {
                    continue;
                }
                let ps = self.slot[parent].expect("non-source parent has a slot");
                let (dst, src) = solver::pair_mut(&mut self.excess, ps, s);
                dst.axpy(w, src).expect("state buffers share one geometry");
            }
        }
    }

    /// One full iteration; returns the maximum per-voxel label change.
    pub fn iterate(
        &mut self,
        model: &DagModel,
        config: &SolverConfig,
    ) -> Result<f64, SolverError> {
        self.accumulate_excess_topdown(model);
        let change = self.update_labels(model, config)?;
        self.propagate_mass_and_update_flows(model, config);
        self.iterations += 1;
        Ok(change)
    }
}

/// Converged end-label fields plus the per-iteration report. Intermediate
/// labels are implicit; reconstruct them on demand.
#[derive(Debug)]
pub struct DagSolution {
    pub end_label_names: Vec<String>,
    pub end_labels: Vec<ScalarField>,
    pub label_map: LabelMap,
    pub report: energy::EnergyReport,
}

impl DagSolution {
    /// Label field of any node, reconstructed from the weighted-sum
    /// constraint over end labels.
    pub fn label_of(&self, model: &DagModel, node: &str) -> Result<ScalarField, GraphError> {
        reconstruct_label(model, &self.end_labels, node)
    }
}

/// `u_node = sum over end labels of W(node, end) * u_end`.
pub fn reconstruct_label(
    model: &DagModel,
    end_labels: &[ScalarField],
    node: &str,
) -> Result<ScalarField, GraphError> {
    model.index_of(node)?;
    let mut out = ScalarField::zeros(model.geometry());
    for (k, end) in model.end_label_names().iter().enumerate() {
        let w = model.path_weight(node, end)?;
        if w != 0.0 {
            out.axpy(w, &end_labels[k]).expect("end labels share the model geometry");
        }
    }
    Ok(out)
}

/// Runs to convergence or `max_iters`; deterministic for identical inputs.
pub fn run(model: &DagModel, config: &SolverConfig) -> Result<DagSolution, SolverError> {
    let mut state = DagState::init(model, config)?;
    let mut current = config.clone();
    let mut report = energy::EnergyReport::default();

    for _ in 0..config.max_iters {
        let change = state.iterate(model, &current)?;
        report.relaxed_energies.push(energy::dag_relaxed_energy_unchecked(
            model,
            state.end_labels(),
        ));
        report
            .primal_energies
            .push(energy::dag_argmax_energy(model, state.end_labels()));
        report.max_label_changes.push(change);
        report.iterations += 1;
        if change < current.tolerance {
            report.converged = true;
            break;
        }
        current.proximal_weight *= current.anneal_factor;
    }

    let label_map = argmax_labeling(&state.labels);
    Ok(DagSolution {
        end_label_names: model
            .end_label_names()
            .iter()
            .map(|s| s.to_string())
            .collect(),
        end_labels: state.labels,
        label_map,
        report,
    })
}
