//! Solver for linearly ordered label models with `N` levels and `N + 1`
//! labels. The linear order makes most flow variables redundant: one flow
//! field per level regularizes the cumulative (suffix) label, the per-level
//! flow excess is a prefix sum of divergences, and level 0 needs no excess
//! buffer at all. The working set is exactly `N + 1` label buffers, `N`
//! excess buffers, `N` flow fields and one accumulator.

use crate::energy;
use crate::field::{GridGeometry, GridWalk, LabelMap, ScalarField, VectorField};
use crate::graph::{self, DagModel, DagModelBuilder, ModelIssue};
use crate::potts::argmax_labeling;
use crate::solver::{self, SolverConfig, SolverError};

/// A linear label order: data terms for labels `0..=N`, smoothness fields
/// for the cumulative labels of levels `1..=N`.
#[derive(Debug)]
pub struct IshikawaModel {
    geometry: GridGeometry,
    data: Vec<ScalarField>,
    smoothness: Vec<ScalarField>,
}

impl IshikawaModel {
    pub fn new(
        geometry: GridGeometry,
        data: Vec<ScalarField>,
        smoothness: Vec<ScalarField>,
    ) -> Result<Self, Vec<ModelIssue>> {
        let mut issues = Vec::new();
        if data.len() < 2 {
            issues.push(ModelIssue::NoEndLabels);
        } else if smoothness.len() != data.len() - 1 {
            issues.push(ModelIssue::MissingSmoothness(format!(
                "chain with {} labels needs {} smoothness fields, got {}",
                data.len(),
                data.len() - 1,
                smoothness.len()
            )));
        }
        for (k, (field, check_sign)) in data
            .iter()
            .map(|f| (f, false))
            .chain(smoothness.iter().map(|f| (f, true)))
            .enumerate()
        {
            let name = format!("level field {k}");
            if field.geometry() != &geometry {
                issues.push(ModelIssue::GeometryMismatch(name));
                continue;
            }
            if let Some(bad) = field.values().iter().position(|v| !v.is_finite()) {
                issues.push(ModelIssue::NonFiniteField { node: name, voxel: bad });
            } else if check_sign {
                if let Some(bad) = field.values().iter().position(|&v| v < 0.0) {
                    issues.push(ModelIssue::NegativeSmoothness { node: name, voxel: bad });
                }
            }
        }
        if !issues.is_empty() {
            return Err(issues);
        }
        Ok(Self { geometry, data, smoothness })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    /// Number of levels `N`; the model has `N + 1` labels.
    pub fn level_count(&self) -> usize {
        self.smoothness.len()
    }

    pub fn label_count(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self, label: usize) -> &ScalarField {
        &self.data[label]
    }

    /// Smoothness of the cumulative label of level `k`, `1 <= k <= N`.
    pub fn smoothness(&self, level: usize) -> &ScalarField {
        &self.smoothness[level - 1]
    }

    /// The equivalent DAG ordering: a chain of cumulative nodes `cum k`
    /// (carrying the level smoothness), each feeding the end label of its
    /// level; end labels carry the data terms and zero smoothness.
    pub fn to_dag(&self) -> Result<DagModel, Vec<ModelIssue>> {
        let n = self.level_count();
        let width = n.max(1).ilog10() as usize + 1;
        let cum = |k: usize| format!("cum{k:0width$}");
        let end = |k: usize| format!("lv{k:0width$}");
        let zero = ScalarField::zeros(&self.geometry);

        let mut b = DagModelBuilder::new(self.geometry.clone(), "S");
        for k in 0..=n {
            b = b.node(&end(k), Some(self.data[k].clone()), Some(zero.clone()));
        }
        for k in 1..=n {
            b = b.node(&cum(k), None, Some(self.smoothness(k).clone()));
        }
        b = b.edge("S", &end(0), 1.0).edge("S", &cum(1), 1.0);
        for k in 1..=n {
            b = b.edge(&cum(k), &end(k), 1.0);
            if k < n {
                b = b.edge(&cum(k), &cum(k + 1), 1.0);
            }
        }
        b.build()
    }
}

/// Working buffers of the chain solver; `5N + 2` voxel-sized buffers on 3D
/// grids, asserted at construction against the budget accounting.
#[derive(Debug)]
pub struct IshikawaState {
    labels: Vec<ScalarField>,
    flows: Vec<VectorField>,
    excess: Vec<ScalarField>,
    accumulator: ScalarField,
    iterations: usize,
}

impl IshikawaState {
    pub fn init(model: &IshikawaModel, config: &SolverConfig) -> Result<Self, SolverError> {
        config.validate()?;
        let n = model.level_count();
        let labels_count = model.label_count();
        if labels_count < 2 {
            return Err(SolverError::TooFewLabels(labels_count));
        }
        let geom = model.geometry();
        let state = Self {
            labels: (0..labels_count)
                .map(|_| ScalarField::filled(geom, 1.0 / labels_count as f64))
                .collect(),
            flows: (0..n).map(|_| VectorField::zeros(geom)).collect(),
            excess: (0..n).map(|_| ScalarField::zeros(geom)).collect(),
            accumulator: ScalarField::zeros(geom),
            iterations: 0,
        };
        let budget = graph::ishikawa_budget(n, geom.ndim())
            .expect("level count validated above");
        assert_eq!(
            state.voxel_buffer_count(),
            budget.pseudo,
            "state working set must match the pseudo-flow budget"
        );
        Ok(state)
    }

    pub fn labels(&self) -> &[ScalarField] {
        &self.labels
    }

    pub fn flows(&self) -> &[VectorField] {
        &self.flows
    }

    pub fn excess(&self) -> &[ScalarField] {
        &self.excess
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn voxel_buffer_count(&self) -> usize {
        let nd = self.accumulator.geometry().ndim();
        self.labels.len() + self.flows.len() * nd + self.excess.len() + 1
    }

    /// One full iteration: prefix-accumulate flow excesses, add data terms,
    /// multiplicative label update (shifted exponent), stash unnormalized
    /// masses in the excess buffers, normalize, suffix-accumulate the masses
    /// and take the projected dual step on every level flow.
    pub fn iterate(
        &mut self,
        model: &IshikawaModel,
        config: &SolverConfig,
    ) -> Result<f64, SolverError> {
        let walk = GridWalk::new(model.geometry());
        let n = model.level_count();
        let c = config.proximal_weight;
        let step = c * config.step_size;

        // Prefix excesses: d_k = sum of div q_j for j <= k; level 0 has no
        // buffer, its excess is identically zero.
        {
            let q = self.flows[0].interleaved();
            let d1 = self.excess[0].values_mut();
            crate::field::for_voxels(d1, 1, |start, w| {
                for (j, v) in w.iter_mut().enumerate() {
                    *v = walk.divergence_at(q, start + j);
                }
            });
        }
        for k in 2..=n {
            let (dst, prev) = solver::pair_mut(&mut self.excess, k - 1, k - 2);
            let q = self.flows[k - 1].interleaved();
            let prev = prev.values();
            crate::field::for_voxels(dst.values_mut(), 1, |start, w| {
                for (j, v) in w.iter_mut().enumerate() {
                    let i = start + j;
                    *v = prev[i] + walk.divergence_at(q, i);
                }
            });
        }
        for k in 1..=n {
            self.excess[k - 1]
                .add_field(model.data(k))
                .expect("state buffers share one geometry");
        }

        // Exponent shift over all labels; level 0 contributes its data term
        // directly in place of the never-materialized excess.
        solver::min_excess_into(&mut self.accumulator, true, {
            let d0 = model.data(0).values();
            move |i| d0[i]
        });
        for k in 1..=n {
            let dk = self.excess[k - 1].values();
            solver::min_excess_into(&mut self.accumulator, false, |i| dk[i]);
        }

        let shift = self.accumulator.values();
        let d0 = model.data(0).values();
        let mut max_change =
            solver::multiplicative_update(&mut self.labels[0], |i| d0[i], shift, c);
        for k in 1..=n {
            let dk = self.excess[k - 1].values();
            let change =
                solver::multiplicative_update(&mut self.labels[k], |i| dk[i], shift, c);
            max_change = max_change.max(change);
        }

        // Unnormalized masses into the excess buffers, then normalize.
        for k in 1..=n {
            self.excess[k - 1]
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

        // Suffix masses: d_k = sum of masses of levels >= k.
        for k in (1..n).rev() {
            let (dst, next) = solver::pair_mut(&mut self.excess, k - 1, k);
            dst.add_field(next).expect("state buffers share one geometry");
        }
        for k in 1..=n {
            solver::flow_step(
                &mut self.flows[k - 1],
                self.excess[k - 1].values(),
                model.smoothness(k).values(),
                step,
                &walk,
            );
        }

        self.iterations += 1;
        Ok(max_change)
    }
}

#[derive(Debug)]
pub struct IshikawaSolution {
    pub labels: Vec<ScalarField>,
    pub label_map: LabelMap,
    pub report: energy::EnergyReport,
}

/// Runs to convergence (max per-voxel label change below the tolerance) or
/// `max_iters`; deterministic for identical inputs.
pub fn run(
    model: &IshikawaModel,
    config: &SolverConfig,
) -> Result<IshikawaSolution, SolverError> {
    let mut state = IshikawaState::init(model, config)?;
    let mut current = config.clone();
    let mut report = energy::EnergyReport::default();

    for _ in 0..config.max_iters {
        let change = state.iterate(model, &current)?;
        report.relaxed_energies.push(energy::ishikawa_relaxed_energy_unchecked(
            model,
            state.labels(),
        ));
        report
            .primal_energies
            .push(energy::ishikawa_argmax_energy(model, state.labels()));
        report.max_label_changes.push(change);
        report.iterations += 1;
        if change < current.tolerance {
            report.converged = true;
            break;
        }
        current.proximal_weight *= current.anneal_factor;
    }

    let label_map = argmax_labeling(&state.labels);
    Ok(IshikawaSolution { labels: state.labels, label_map, report })
}
