//! Label-ordering structures (star, chain, tree, general DAG), their derived
//! orderings and path weights, and working-buffer budget accounting for the
//! implicit-source/sink (pseudo-flow) layout versus the fully explicit
//! (full-flow) layout.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::field::{GridGeometry, ScalarField};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("budget requires a positive label/level count")]
    EmptyModel,
}

/// A single structural violation found while validating a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelIssue {
    DuplicateNode(String),
    SourceHasParents(String),
    EdgeToUnknownNode { parent: String, child: String },
    NonPositiveWeight { parent: String, child: String },
    Cycle(Vec<String>),
    Unreachable(String),
    EndLabelMissingData(String),
    DataOnNonEndNode(String),
    MissingSmoothness(String),
    SmoothnessOnSource,
    NegativeSmoothness { node: String, voxel: usize },
    NonFiniteField { node: String, voxel: usize },
    GeometryMismatch(String),
    NoEndLabels,
}

impl fmt::Display for ModelIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DuplicateNode(n) => write!(f, "node {n:?} declared more than once"),
            Self::SourceHasParents(n) => write!(f, "source {n:?} must not have parents"),
            Self::EdgeToUnknownNode { parent, child } => {
                write!(f, "edge {parent:?} -> {child:?} references an undeclared node")
            }
            Self::NonPositiveWeight { parent, child } => {
                write!(f, "edge {parent:?} -> {child:?} must have a strictly positive weight")
            }
            Self::Cycle(nodes) => write!(f, "cycle through {}", nodes.join(" -> ")),
            Self::Unreachable(n) => write!(f, "node {n:?} is not reachable from the source"),
            Self::EndLabelMissingData(n) => {
                write!(f, "end label {n:?} has no data term")
            }
            Self::DataOnNonEndNode(n) => {
                write!(f, "node {n:?} has children and must not carry a data term")
            }
            Self::MissingSmoothness(n) => write!(f, "node {n:?} has no smoothness field"),
            Self::SmoothnessOnSource => write!(f, "the source carries no smoothness field"),
            Self::NegativeSmoothness { node, voxel } => {
                write!(f, "smoothness of {node:?} is negative at voxel {voxel}")
            }
            Self::NonFiniteField { node, voxel } => {
                write!(f, "field of {node:?} is non-finite at voxel {voxel}")
            }
            Self::GeometryMismatch(n) => {
                write!(f, "fields of {n:?} do not match the model geometry")
            }
            Self::NoEndLabels => write!(f, "model has no end labels"),
        }
    }
}

#[derive(Debug, Default)]
struct NodeSpec {
    data: Option<ScalarField>,
    smoothness: Option<ScalarField>,
}

/// Mutable description of a label ordering; [`DagModelBuilder::build`]
/// validates every structural invariant and freezes it into a [`DagModel`].
#[derive(Debug)]
pub struct DagModelBuilder {
    geometry: GridGeometry,
    source: String,
    nodes: BTreeMap<String, NodeSpec>,
    edges: Vec<(String, String, f64)>,
    duplicates: Vec<String>,
}

impl DagModelBuilder {
    pub fn new(geometry: GridGeometry, source: &str) -> Self {
        let mut nodes = BTreeMap::new();
        nodes.insert(source.to_string(), NodeSpec::default());
        Self {
            geometry,
            source: source.to_string(),
            nodes,
            edges: Vec::new(),
            duplicates: Vec::new(),
        }
    }

    pub fn node(
        mut self,
        name: &str,
        data: Option<ScalarField>,
        smoothness: Option<ScalarField>,
    ) -> Self {
        if self.nodes.contains_key(name) {
            self.duplicates.push(name.to_string());
        }
        self.nodes.insert(name.to_string(), NodeSpec { data, smoothness });
        self
    }

    pub fn edge(mut self, parent: &str, child: &str, weight: f64) -> Self {
        self.edges.push((parent.to_string(), child.to_string(), weight));
        self
    }

    /// Validates all invariants; on failure every violated invariant is
    /// reported, not just the first.
    pub fn build(self) -> Result<DagModel, Vec<ModelIssue>> {
        let mut issues: Vec<ModelIssue> =
            self.duplicates.iter().cloned().map(ModelIssue::DuplicateNode).collect();

        let names: Vec<String> = self.nodes.keys().cloned().collect();
        let index: HashMap<&str, usize> =
            names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let n = names.len();
        let mut children: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut parents: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];

        for (parent, child, w) in &self.edges {
            let (pi, ci) = match (index.get(parent.as_str()), index.get(child.as_str())) {
                (Some(&pi), Some(&ci)) => (pi, ci),
                _ => {
                    issues.push(ModelIssue::EdgeToUnknownNode {
                        parent: parent.clone(),
                        child: child.clone(),
                    });
                    continue;
                }
            };
            if !(*w > 0.0) {
                issues.push(ModelIssue::NonPositiveWeight {
                    parent: parent.clone(),
                    child: child.clone(),
                });
            }
            children[pi].push((ci, *w));
            parents[ci].push((pi, *w));
        }
        for lists in [&mut children, &mut parents] {
            for l in lists.iter_mut() {
                l.sort_by_key(|&(i, _)| i);
            }
        }

        let src = index[self.source.as_str()];
        if !parents[src].is_empty() {
            issues.push(ModelIssue::SourceHasParents(self.source.clone()));
        }

        // Kahn's algorithm; leftovers with nonzero in-degree witness a cycle.
        let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> =
            (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&i) = ready.iter().next() {
            ready.remove(&i);
            order.push(i);
            for &(c, _) in &children[i] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() < n {
            let cycle: Vec<String> = (0..n)
                .filter(|&i| indeg[i] > 0)
                .map(|i| names[i].clone())
                .collect();
            issues.push(ModelIssue::Cycle(cycle));
        }

        // Reachability from the source.
        let mut reachable = vec![false; n];
        reachable[src] = true;
        let mut stack = vec![src];
        while let Some(i) = stack.pop() {
            for &(c, _) in &children[i] {
                if !reachable[c] {
                    reachable[c] = true;
                    stack.push(c);
                }
            }
        }
        for i in 0..n {
            if !reachable[i] {
                issues.push(ModelIssue::Unreachable(names[i].clone()));
            }
        }

        let mut end_count = 0;
        for (i, name) in names.iter().enumerate() {
            let spec = &self.nodes[name];
            let is_source = i == src;
            let is_end = children[i].is_empty() && !is_source;
            if is_end {
                end_count += 1;
            }

            match (&spec.data, is_end) {
                (None, true) => issues.push(ModelIssue::EndLabelMissingData(name.clone())),
                (Some(_), false) => issues.push(ModelIssue::DataOnNonEndNode(name.clone())),
                _ => {}
            }
            if is_source {
                if spec.smoothness.is_some() {
                    issues.push(ModelIssue::SmoothnessOnSource);
                }
            } else if spec.smoothness.is_none() {
                issues.push(ModelIssue::MissingSmoothness(name.clone()));
            }

            for (field, check_sign) in
                [(&spec.data, false), (&spec.smoothness, true)]
            {
                let Some(field) = field else { continue };
                if field.geometry() != &self.geometry {
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
        }
        if end_count == 0 {
            issues.push(ModelIssue::NoEndLabels);
        }

        if !issues.is_empty() {
            return Err(issues);
        }

        let specs: Vec<NodeSpec> = {
            let mut m = self.nodes;
            names.iter().map(|n| m.remove(n).unwrap()).collect()
        };
        Ok(DagModel {
            geometry: self.geometry,
            names,
            source: src,
            children,
            parents,
            specs,
            topo: order,
        })
    }
}

/// A validated label-ordering model: a single-source acyclic graph with
/// positively weighted edges, data terms on the childless (end) labels and a
/// non-negative smoothness field on every non-source node. Immutable after
/// validation and freely shareable.
#[derive(Debug)]
pub struct DagModel {
    geometry: GridGeometry,
    names: Vec<String>,
    source: usize,
    children: Vec<Vec<(usize, f64)>>,
    parents: Vec<Vec<(usize, f64)>>,
    specs: Vec<NodeSpec>,
    topo: Vec<usize>,
}

impl DagModel {
    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn node_names(&self) -> &[String] {
        &self.names
    }

    pub fn source(&self) -> &str {
        &self.names[self.source]
    }

    pub(crate) fn source_index(&self) -> usize {
        self.source
    }

    pub fn index_of(&self, name: &str) -> Result<usize, GraphError> {
        self.names
            .binary_search_by(|n| n.as_str().cmp(name))
            .map_err(|_| GraphError::UnknownNode(name.to_string()))
    }

    pub fn is_end_label(&self, index: usize) -> bool {
        self.children[index].is_empty() && index != self.source
    }

    /// Indices of end labels, in lexicographic name order.
    pub fn end_label_indices(&self) -> Vec<usize> {
        (0..self.names.len()).filter(|&i| self.is_end_label(i)).collect()
    }

    pub fn end_label_names(&self) -> Vec<&str> {
        self.end_label_indices().iter().map(|&i| self.names[i].as_str()).collect()
    }

    pub fn children_of(&self, index: usize) -> &[(usize, f64)] {
        &self.children[index]
    }

    pub fn parents_of(&self, index: usize) -> &[(usize, f64)] {
        &self.parents[index]
    }

    pub fn data_of(&self, index: usize) -> Option<&ScalarField> {
        self.specs[index].data.as_ref()
    }

    pub fn smoothness_of(&self, index: usize) -> Option<&ScalarField> {
        self.specs[index].smoothness.as_ref()
    }

    /// True when every non-source node has exactly one parent.
    pub fn is_tree(&self) -> bool {
        (0..self.names.len())
            .all(|i| i == self.source || self.parents[i].len() == 1)
    }

    /// Non-fatal modelling warnings: parents whose child weights do not sum
    /// to one (weights are not required to, but partition semantics usually
    /// want them to).
    pub fn lint(&self) -> Vec<String> {
        let mut warnings = Vec::new();
        for i in 0..self.names.len() {
            if self.children[i].is_empty() {
                continue;
            }
            let total: f64 = self.children[i].iter().map(|&(_, w)| w).sum();
            if (total - 1.0).abs() > 1e-9 {
                warnings.push(format!(
                    "child weights of {:?} sum to {total}, not 1",
                    self.names[i]
                ));
            }
        }
        warnings
    }

    /// Top-down topological order (source first) and its reverse. Ties are
    /// broken by lexicographic node name, so the order is deterministic.
    pub fn topo_orders(&self) -> (TopoOrder, TopoOrder) {
        let top_down: Vec<String> =
            self.topo.iter().map(|&i| self.names[i].clone()).collect();
        let bottom_up: Vec<String> = top_down.iter().rev().cloned().collect();
        (TopoOrder { order: top_down }, TopoOrder { order: bottom_up })
    }

    pub(crate) fn topo_indices(&self) -> &[usize] {
        &self.topo
    }

    /// Sum over directed paths from `a` to `b` of the product of edge
    /// weights: 1 on `a == b`, 0 when `b` is not a descendant of `a`.
    pub fn path_weight(&self, a: &str, b: &str) -> Result<f64, GraphError> {
        let ai = self.index_of(a)?;
        let bi = self.index_of(b)?;
        let mut memo = vec![f64::NAN; self.names.len()];
        Ok(self.path_weight_memo(ai, bi, &mut memo))
    }

    fn path_weight_memo(&self, a: usize, b: usize, memo: &mut [f64]) -> f64 {
        if a == b {
            return 1.0;
        }
        if !memo[a].is_nan() {
            return memo[a];
        }
        let mut total = 0.0;
        for &(child, w) in &self.children[a] {
            total += w * self.path_weight_memo(child, b, memo);
        }
        memo[a] = total;
        total
    }

    /// Path weights from every node to every end label, as a dense matrix
    /// indexed `[node][end-label position]`.
    pub(crate) fn path_weights_to_ends(&self) -> Vec<Vec<f64>> {
        let ends = self.end_label_indices();
        let mut table = vec![vec![0.0; ends.len()]; self.names.len()];
        for (k, &e) in ends.iter().enumerate() {
            table[e][k] = 1.0;
        }
        for &i in self.topo.iter().rev() {
            if self.is_end_label(i) {
                continue;
            }
            for k in 0..ends.len() {
                let mut total = 0.0;
                for &(child, w) in &self.children[i] {
                    total += w * table[child][k];
                }
                table[i][k] = total;
            }
        }
        table
    }
}

/// A topological ordering of node names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopoOrder {
    order: Vec<String>,
}

impl TopoOrder {
    pub fn names(&self) -> &[String] {
        &self.order
    }
}

/// Which solver layout a budget describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Potts,
    Ishikawa,
    Dag,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Potts => write!(f, "potts"),
            Self::Ishikawa => write!(f, "ishikawa"),
            Self::Dag => write!(f, "dagmf"),
        }
    }
}

/// Voxel-sized working-buffer counts for the pseudo-flow layout (implicit
/// source/sink flows) against the full-flow layout (everything explicit).
///
/// Pseudo-flow counts enumerate the buffers the solvers in this crate
/// actually allocate. Full-flow counts for 3D DAG and chain models are the
/// established figures for the explicit layout; the Potts full-flow count
/// and every 2D count are derived by the same enumeration with one fewer
/// spatial flow component per node, and are flagged as derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferBudget {
    pub kind: ModelKind,
    pub spatial_dims: usize,
    pub pseudo: usize,
    pub full: usize,
    pub full_is_derived: bool,
}

impl BufferBudget {
    /// Fraction of full-flow memory saved by the pseudo-flow layout.
    pub fn reduction(&self) -> f64 {
        1.0 - self.pseudo as f64 / self.full as f64
    }
}

fn check_dims(spatial_dims: usize) -> Result<(), GraphError> {
    // Budgets are only defined for the grid ranks the fields support.
    if spatial_dims < 2 || spatial_dims > 3 {
        return Err(GraphError::EmptyModel);
    }
    Ok(())
}

/// Budget for a flat `label_count`-region model: per label one label buffer
/// and `d` flow components, plus one accumulator. The full-flow layout adds
/// one sink flow per label and one shared source flow.
pub fn potts_budget(label_count: usize, spatial_dims: usize) -> Result<BufferBudget, GraphError> {
    check_dims(spatial_dims)?;
    if label_count < 1 {
        return Err(GraphError::EmptyModel);
    }
    let d = spatial_dims;
    Ok(BufferBudget {
        kind: ModelKind::Potts,
        spatial_dims,
        pseudo: (d + 1) * label_count + 1,
        full: (d + 2) * label_count + 1,
        full_is_derived: true,
    })
}

/// Budget for a linear order with `level_count` levels (one more label than
/// levels): labels, one accumulator, one excess and `d` flow components per
/// level. In 3D this is `5N+2` against `6N+1` for the explicit layout.
pub fn ishikawa_budget(
    level_count: usize,
    spatial_dims: usize,
) -> Result<BufferBudget, GraphError> {
    check_dims(spatial_dims)?;
    if level_count < 1 {
        return Err(GraphError::EmptyModel);
    }
    let (d, n) = (spatial_dims, level_count);
    Ok(BufferBudget {
        kind: ModelKind::Ishikawa,
        spatial_dims,
        pseudo: (d + 2) * n + 2,
        full: (d + 3) * n + 1,
        full_is_derived: spatial_dims != 3,
    })
}

/// Budget for a general DAG ordering with `end_labels` childless labels and
/// `intermediates` other non-source nodes. Per end label: one label buffer,
/// one excess, `d` flow components; per intermediate: one excess and `d`
/// flow components; plus one accumulator. In 3D: `5E + 4I + 1` against
/// `6E + 7I + 2` for the explicit layout.
pub fn dag_budget(
    end_labels: usize,
    intermediates: usize,
    spatial_dims: usize,
) -> Result<BufferBudget, GraphError> {
    check_dims(spatial_dims)?;
    if end_labels < 1 {
        return Err(GraphError::EmptyModel);
    }
    let d = spatial_dims;
    Ok(BufferBudget {
        kind: ModelKind::Dag,
        spatial_dims,
        pseudo: (d + 2) * end_labels + (d + 1) * intermediates + 1,
        full: (d + 3) * end_labels + (d + 4) * intermediates + 2,
        full_is_derived: spatial_dims != 3,
    })
}

/// Budget for a validated model, using its own geometry rank.
pub fn model_budget(model: &DagModel) -> BufferBudget {
    let ends = model.end_label_indices().len();
    let intermediates = model.node_count() - ends - 1;
    dag_budget(ends, intermediates, model.geometry().ndim())
        .expect("validated model has at least one end label")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn geom() -> GridGeometry {
        GridGeometry::new(&[2, 2]).unwrap()
    }

    fn field(v: f64) -> ScalarField {
        ScalarField::filled(&geom(), v)
    }

    fn star_abc() -> DagModel {
        DagModelBuilder::new(geom(), "S")
            .node("A", Some(field(1.0)), Some(field(0.1)))
            .node("B", Some(field(2.0)), Some(field(0.1)))
            .node("C", Some(field(3.0)), Some(field(0.1)))
            .edge("S", "A", 1.0)
            .edge("S", "B", 1.0)
            .edge("S", "C", 1.0)
            .build()
            .unwrap()
    }

    fn diamond(w: f64) -> DagModel {
        DagModelBuilder::new(geom(), "S")
            .node("A", None, Some(field(0.1)))
            .node("B", None, Some(field(0.1)))
            .node("C", Some(field(1.0)), Some(field(0.1)))
            .edge("S", "A", w)
            .edge("S", "B", w)
            .edge("A", "C", w)
            .edge("B", "C", w)
            .build()
            .unwrap()
    }

    #[test]
    fn star_is_valid() {
        let m = star_abc();
        assert_eq!(m.end_label_names(), vec!["A", "B", "C"]);
        assert!(m.is_tree());
    }

    #[test]
    fn cycle_is_diagnosed() {
        let err = DagModelBuilder::new(geom(), "S")
            .node("A", None, Some(field(0.0)))
            .node("B", None, Some(field(0.0)))
            .edge("S", "A", 1.0)
            .edge("A", "B", 1.0)
            .edge("B", "A", 1.0)
            .build()
            .unwrap_err();
        assert!(err.iter().any(|i| matches!(i, ModelIssue::Cycle(_))));
    }

    #[test]
    fn missing_data_term_is_diagnosed_by_name() {
        let err = DagModelBuilder::new(geom(), "S")
            .node("A", None, Some(field(0.0)))
            .edge("S", "A", 1.0)
            .build()
            .unwrap_err();
        assert!(err.contains(&ModelIssue::EndLabelMissingData("A".into())));
    }

    #[test]
    fn all_violations_are_reported_together() {
        let err = DagModelBuilder::new(geom(), "S")
            .node("A", None, Some(field(0.0)))
            .node("B", Some(field(1.0)), None)
            .edge("S", "A", -1.0)
            .edge("S", "B", 1.0)
            .edge("X", "A", 1.0)
            .build()
            .unwrap_err();
        assert!(err.contains(&ModelIssue::EndLabelMissingData("A".into())));
        assert!(err.contains(&ModelIssue::MissingSmoothness("B".into())));
        assert!(err.iter().any(|i| matches!(i, ModelIssue::NonPositiveWeight { .. })));
        assert!(err.iter().any(|i| matches!(i, ModelIssue::EdgeToUnknownNode { .. })));
    }

    #[test]
    fn topo_order_examples() {
        let chain = DagModelBuilder::new(geom(), "S")
            .node("A", None, Some(field(0.0)))
            .node("B", Some(field(1.0)), Some(field(0.0)))
            .edge("S", "A", 1.0)
            .edge("A", "B", 1.0)
            .build()
            .unwrap();
        let (top, bottom) = chain.topo_orders();
        assert_eq!(top.names(), &["S", "A", "B"]);
        assert_eq!(bottom.names(), &["B", "A", "S"]);

        let star = DagModelBuilder::new(geom(), "S")
            .node("B", Some(field(1.0)), Some(field(0.0)))
            .node("A", Some(field(1.0)), Some(field(0.0)))
            .edge("S", "B", 1.0)
            .edge("S", "A", 1.0)
            .build()
            .unwrap();
        let (top, _) = star.topo_orders();
        assert_eq!(top.names(), &["S", "A", "B"]);

        let (top, _) = diamond(0.5).topo_orders();
        assert_eq!(top.names().last().unwrap(), "C");
    }

    #[test]
    fn path_weight_examples() {
        let m = star_abc();
        assert_eq!(m.path_weight("A", "A").unwrap(), 1.0);
        assert_eq!(m.path_weight("A", "B").unwrap(), 0.0);

        let chain = DagModelBuilder::new(geom(), "S")
            .node("A", None, Some(field(0.0)))
            .node("B", Some(field(1.0)), Some(field(0.0)))
            .edge("S", "A", 0.7)
            .edge("A", "B", 0.5)
            .build()
            .unwrap();
        assert_abs_diff_eq!(chain.path_weight("S", "B").unwrap(), 0.35, epsilon = 1e-15);

        assert_abs_diff_eq!(diamond(0.5).path_weight("S", "C").unwrap(), 0.5, epsilon = 1e-15);

        assert_eq!(
            chain.path_weight("S", "nope").unwrap_err(),
            GraphError::UnknownNode("nope".into())
        );
    }

    #[test]
    fn tree_path_weight_is_product_along_unique_path() {
        let tree = DagModelBuilder::new(geom(), "S")
            .node("M", None, Some(field(0.0)))
            .node("A", Some(field(1.0)), Some(field(0.0)))
            .node("B", Some(field(1.0)), Some(field(0.0)))
            .edge("S", "M", 0.25)
            .edge("M", "A", 0.5)
            .edge("M", "B", 2.0)
            .build()
            .unwrap();
        assert_abs_diff_eq!(tree.path_weight("S", "A").unwrap(), 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(tree.path_weight("S", "B").unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn budget_examples() {
        let b = ishikawa_budget(3, 3).unwrap();
        assert_eq!((b.pseudo, b.full), (17, 19));
        assert!(!b.full_is_derived);

        let b = dag_budget(4, 2, 3).unwrap();
        assert_eq!((b.pseudo, b.full), (29, 40));
        assert_abs_diff_eq!(b.reduction(), 0.275, epsilon = 1e-12);

        let b = potts_budget(100, 3).unwrap();
        assert_eq!((b.pseudo, b.full), (401, 501));
        assert_abs_diff_eq!(b.reduction(), 100.0 / 501.0, epsilon = 1e-12);
        assert!(b.full_is_derived);

        assert_eq!(potts_budget(0, 3).unwrap_err(), GraphError::EmptyModel);
        assert_eq!(ishikawa_budget(0, 2).unwrap_err(), GraphError::EmptyModel);
    }

    #[test]
    fn balanced_dag_reduction_is_about_thirty_percent() {
        for ends in [2usize, 4, 10, 100] {
            let b = dag_budget(ends, ends, 3).unwrap();
            let r = b.reduction();
            assert!((0.28..=0.33).contains(&r), "ends={ends} reduction={r}");
        }
    }

    #[test]
    fn lint_flags_unnormalized_weights() {
        let m = DagModelBuilder::new(geom(), "S")
            .node("A", Some(field(1.0)), Some(field(0.0)))
            .node("B", Some(field(1.0)), Some(field(0.0)))
            .edge("S", "A", 0.4)
            .edge("S", "B", 0.6)
            .build()
            .unwrap();
        assert!(m.lint().is_empty());
        // A unit-weight star sums to the child count per parent.
        assert_eq!(star_abc().lint().len(), 1);
    }

    /// Random layered DAGs with normalized child weights.
    fn arb_normalized_dag() -> impl Strategy<Value = DagModel> {
        (2usize..5, 1usize..4, proptest::num::u64::ANY).prop_map(|(ends, mids, seed)| {
            // Simple deterministic pseudo-random weights from the seed.
            let mut state = seed | 1;
            let mut next = move || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 33) as f64 / (1u64 << 31) as f64) + 0.25
            };
            let mut b = DagModelBuilder::new(geom(), "S");
            let mid_names: Vec<String> = (0..mids).map(|i| format!("m{i}")).collect();
            let end_names: Vec<String> = (0..ends).map(|i| format!("e{i}")).collect();
            for m in &mid_names {
                b = b.node(m, None, Some(field(0.0)));
            }
            for e in &end_names {
                b = b.node(e, Some(field(1.0)), Some(field(0.0)));
            }
            // Source feeds every mid and every end; each mid feeds all ends.
            // Normalize each parent's outgoing weights to sum to one.
            let mut src_ws: Vec<f64> = (0..mids + ends).map(|_| next()).collect();
            let total: f64 = src_ws.iter().sum();
            src_ws.iter_mut().for_each(|w| *w /= total);
            for (i, m) in mid_names.iter().enumerate() {
                b = b.edge("S", m, src_ws[i]);
            }
            for (i, e) in end_names.iter().enumerate() {
                b = b.edge("S", e, src_ws[mids + i]);
            }
            for m in &mid_names {
                let mut ws: Vec<f64> = (0..ends).map(|_| next()).collect();
                let total: f64 = ws.iter().sum();
                ws.iter_mut().for_each(|w| *w /= total);
                for (e, w) in end_names.iter().zip(ws) {
                    b = b.edge(m, e, w);
                }
            }
            b.build().unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn normalized_weights_partition_unit_mass(m in arb_normalized_dag()) {
            let total: f64 = m
                .end_label_names()
                .iter()
                .map(|e| m.path_weight("S", e).unwrap())
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn zero_path_weight_matches_unreachability(m in arb_normalized_dag()) {
            // Breadth-first reachability as the independent reference.
            for a in m.node_names() {
                for b in m.node_names() {
                    let w = m.path_weight(a, b).unwrap();
                    let ai = m.index_of(a).unwrap();
                    let bi = m.index_of(b).unwrap();
                    let mut seen = vec![false; m.node_count()];
                    seen[ai] = true;
                    let mut stack = vec![ai];
                    while let Some(i) = stack.pop() {
                        for &(c, _) in m.children_of(i) {
                            if !seen[c] {
                                seen[c] = true;
                                stack.push(c);
                            }
                        }
                    }
                    prop_assert_eq!(w == 0.0, !seen[bi]);
                }
            }
        }
    }
}
