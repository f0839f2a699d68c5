//! Simulator snapshots as graphs, plus dataset sampling and z-score
//! normalization.
//!
//! Node order is `[inner, outer, roller_0, …, roller_{N-1}]`. Node features
//! are position (mm), velocity (mm/s), external force (N) and a three-way
//! one-hot type. Rollers carry zero kinematic features. Each roller is linked
//! to both rings by a pair of directed edges whose features are the vector
//! between the two contact anchors and its length (mm).

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::GraphError;
use crate::geometry::{BearingConfig, DerivedGeometry, Vec2};
use crate::simulator::{StepRecord, Trajectory};

pub const NODE_FEATURES: usize = 9;
pub const EDGE_FEATURES: usize = 3;
pub const TARGET_DIM: usize = 2;
pub const INNER_NODE: usize = 0;
pub const OUTER_NODE: usize = 1;
pub const FIRST_ROLLER_NODE: usize = 2;
/// Offset of the one-hot node type block inside the node feature vector.
pub const TYPE_OFFSET: usize = 6;
pub const STD_FLOOR: f64 = 1e-8;
pub const GRAPH_FORMAT_VERSION: u32 = 1;

const MM_PER_M: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    Inner,
    Outer,
    Roller,
}

impl NodeType {
    fn one_hot(self) -> [f64; 3] {
        match self {
            NodeType::Inner => [1.0, 0.0, 0.0],
            NodeType::Outer => [0.0, 1.0, 0.0],
            NodeType::Roller => [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub trajectory_id: String,
    pub step: usize,
}

/// Fixed-topology bearing graph. All per-item arrays are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub n_nodes: usize,
    /// `n_nodes × NODE_FEATURES`
    pub node_features: Vec<f64>,
    pub senders: Vec<usize>,
    pub receivers: Vec<usize>,
    /// `n_edges × EDGE_FEATURES`
    pub edge_features: Vec<f64>,
    /// Net force on each node, `n_nodes × 2`.
    pub node_targets: Vec<f64>,
    /// Contact force exerted on the receiver, `n_edges × 2`.
    pub edge_targets: Vec<f64>,
    pub meta: GraphMeta,
}

impl Graph {
    pub fn n_edges(&self) -> usize {
        self.senders.len()
    }

    pub fn n_rollers(&self) -> usize {
        self.n_nodes - FIRST_ROLLER_NODE
    }

    pub fn roller_node(k: usize) -> usize {
        FIRST_ROLLER_NODE + k
    }

    /// Edge index of roller `k` → inner ring. The pair for roller `k` is laid out
    /// as `[k→inner, inner→k, k→outer, outer→k]`.
    pub fn roller_to_inner_edge(k: usize) -> usize {
        4 * k
    }

    pub fn inner_to_roller_edge(k: usize) -> usize {
        4 * k + 1
    }

    pub fn roller_to_outer_edge(k: usize) -> usize {
        4 * k + 2
    }

    pub fn outer_to_roller_edge(k: usize) -> usize {
        4 * k + 3
    }

    pub fn node_row(&self, i: usize) -> &[f64] {
        &self.node_features[i * NODE_FEATURES..(i + 1) * NODE_FEATURES]
    }

    pub fn edge_row(&self, e: usize) -> &[f64] {
        &self.edge_features[e * EDGE_FEATURES..(e + 1) * EDGE_FEATURES]
    }

    pub fn edge_target(&self, e: usize) -> Vec2 {
        Vec2::new(self.edge_targets[2 * e], self.edge_targets[2 * e + 1])
    }

    pub fn node_target(&self, i: usize) -> Vec2 {
        Vec2::new(self.node_targets[2 * i], self.node_targets[2 * i + 1])
    }

    /// Checks array lengths and index ranges.
    pub fn validate(&self) -> Result<(), GraphError> {
        let n_edges = self.n_edges();
        let checks = [
            ("node_features", self.n_nodes * NODE_FEATURES, self.node_features.len()),
            ("receivers", n_edges, self.receivers.len()),
            ("edge_features", n_edges * EDGE_FEATURES, self.edge_features.len()),
            ("node_targets", self.n_nodes * TARGET_DIM, self.node_targets.len()),
            ("edge_targets", n_edges * TARGET_DIM, self.edge_targets.len()),
        ];
        for (what, expected, found) in checks {
            if expected != found {
                return Err(GraphError::Dimension { what, expected, found });
            }
        }
        if let Some(&bad) = self.senders.iter().chain(&self.receivers).find(|&&i| i >= self.n_nodes) {
            return Err(GraphError::Dimension {
                what: "edge endpoint",
                expected: self.n_nodes,
                found: bad,
            });
        }
        Ok(())
    }
}

fn ring_anchor(ring_center: Vec2, radius: f64, roller_center: Vec2, roller: usize, ring: &'static str) -> Result<Vec2, GraphError> {
    let ray = roller_center - ring_center;
    let len = ray.norm();
    if !(len > 0.0) {
        return Err(GraphError::DegenerateAnchor { roller, ring });
    }
    Ok(ring_center + (radius / len) * ray)
}

/// Graph for one recorded state.
///
/// Edge features are `anchor(receiver) − anchor(sender)` and its length, where a
/// roller's anchor is its center and a ring's anchor is the raceway point on the
/// ray from the ring center through the roller center.
pub fn snapshot_to_graph(
    record: &StepRecord,
    config: &BearingConfig,
    geom: &DerivedGeometry,
    trajectory_id: &str,
) -> Result<Graph, GraphError> {
    let n = config.n_rollers;
    if record.rollers.len() != n {
        return Err(GraphError::RollerCount {
            expected: n,
            found: record.rollers.len(),
        });
    }
    let n_nodes = FIRST_ROLLER_NODE + n;
    let mut node_features = vec![0.0; n_nodes * NODE_FEATURES];
    let mut node_targets = vec![0.0; n_nodes * TARGET_DIM];
    let inner = &record.state.inner;
    let outer = &record.state.outer;
    let rows = [
        (INNER_NODE, MM_PER_M * inner.position, MM_PER_M * inner.velocity, Vec2::ZERO, NodeType::Inner, record.net_force_inner),
        (OUTER_NODE, MM_PER_M * outer.position, MM_PER_M * outer.velocity, record.external_force, NodeType::Outer, record.net_force_outer),
    ];
    for (i, pos, vel, ext, kind, target) in rows {
        let row = &mut node_features[i * NODE_FEATURES..(i + 1) * NODE_FEATURES];
        row[..6].copy_from_slice(&[pos.x, pos.y, vel.x, vel.y, ext.x, ext.y]);
        row[TYPE_OFFSET..].copy_from_slice(&kind.one_hot());
        node_targets[2 * i] = target.x;
        node_targets[2 * i + 1] = target.y;
    }
    for k in 0..n {
        let i = Graph::roller_node(k);
        node_features[i * NODE_FEATURES + TYPE_OFFSET..(i + 1) * NODE_FEATURES]
            .copy_from_slice(&NodeType::Roller.one_hot());
    }

    let inner_center = MM_PER_M * inner.position;
    let outer_center = MM_PER_M * outer.position;
    let n_edges = 4 * n;
    let mut senders = Vec::with_capacity(n_edges);
    let mut receivers = Vec::with_capacity(n_edges);
    let mut edge_features = Vec::with_capacity(n_edges * EDGE_FEATURES);
    let mut edge_targets = Vec::with_capacity(n_edges * TARGET_DIM);
    for (k, roller) in record.rollers.iter().enumerate() {
        let node = Graph::roller_node(k);
        let c = roller.center;
        let inner_anchor = ring_anchor(inner_center, geom.inner_raceway_radius, c, k, "inner")?;
        let outer_anchor = ring_anchor(outer_center, geom.outer_raceway_radius, c, k, "outer")?;
        let edges = [
            (node, INNER_NODE, inner_anchor - c, roller.q_inner),
            (INNER_NODE, node, c - inner_anchor, -roller.q_inner),
            (node, OUTER_NODE, outer_anchor - c, roller.q_outer),
            (OUTER_NODE, node, c - outer_anchor, -roller.q_outer),
        ];
        for (s, r, dx, force) in edges {
            senders.push(s);
            receivers.push(r);
            edge_features.extend_from_slice(&[dx.x, dx.y, dx.norm()]);
            edge_targets.extend_from_slice(&[force.x, force.y]);
        }
    }
    Ok(Graph {
        n_nodes,
        node_features,
        senders,
        receivers,
        edge_features,
        node_targets,
        edge_targets,
        meta: GraphMeta {
            trajectory_id: trajectory_id.to_string(),
            step: record.step,
        },
    })
}

/// [`snapshot_to_graph`] with the geometry derived from `config`.
pub fn record_to_graph(record: &StepRecord, config: &BearingConfig, trajectory_id: &str) -> Result<Graph, GraphError> {
    let geom = crate::geometry::derived_geometry(config)?;
    snapshot_to_graph(record, config, &geom, trajectory_id)
}

/// Which recorded steps become graphs: every step inside a window, plus every
/// `stride`-th step elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingPolicy {
    /// Inclusive step ranges kept densely.
    pub windows: Vec<[usize; 2]>,
    pub stride: usize,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self {
            windows: vec![[0, 250], [2500, 2750]],
            stride: 10,
        }
    }
}

impl SamplingPolicy {
    pub fn keeps(&self, step: usize) -> bool {
        self.windows.iter().any(|&[a, b]| (a..=b).contains(&step)) || (self.stride > 0 && step % self.stride == 0)
    }
}

/// Graphs for every kept step, in trajectory order then step order.
pub fn sample_dataset(trajectories: &[Trajectory], policy: &SamplingPolicy) -> Result<Vec<Graph>, GraphError> {
    let first = trajectories.first().ok_or(GraphError::Empty("trajectory list"))?;
    let version = first.header.format_version;
    if let Some(t) = trajectories.iter().find(|t| t.header.format_version != version) {
        return Err(GraphError::FormatVersion(version, t.header.format_version));
    }
    let per_traj: Vec<Result<Vec<Graph>, GraphError>> = trajectories
        .par_iter()
        .map(|traj| {
            let geom = crate::geometry::derived_geometry(&traj.header.config)?;
            let id = traj.id();
            traj.records
                .iter()
                .filter(|r| policy.keeps(r.step))
                .map(|r| snapshot_to_graph(r, &traj.header.config, &geom, &id))
                .collect()
        })
        .collect();
    let mut graphs = Vec::new();
    for g in per_traj {
        graphs.extend(g?);
    }
    Ok(graphs)
}

/// Per-dimension mean and standard deviation of every graph array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub node_mean: Vec<f64>,
    pub node_std: Vec<f64>,
    pub edge_mean: Vec<f64>,
    pub edge_std: Vec<f64>,
    pub node_target_mean: Vec<f64>,
    pub node_target_std: Vec<f64>,
    pub edge_target_mean: Vec<f64>,
    pub edge_target_std: Vec<f64>,
}

fn column_stats<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut count = 0usize;
    let mut sum = vec![0.0; dim];
    for row in rows.clone() {
        count += 1;
        for (s, v) in sum.iter_mut().zip(row) {
            *s += v;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0; dim];
    for row in rows {
        for ((s, v), m) in sq.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = sq.iter().map(|s| (s / count as f64).sqrt().max(STD_FLOOR)).collect();
    (mean, std)
}

/// Population statistics over all nodes and edges of `graphs`. The one-hot
/// node-type columns are left unscaled (mean 0, std 1).
pub fn compute_norm_stats(graphs: &[Graph]) -> Result<NormStats, GraphError> {
    if graphs.is_empty() {
        return Err(GraphError::Empty("graph list"));
    }
    let nodes = graphs.iter().flat_map(|g| g.node_features.chunks_exact(NODE_FEATURES));
    let edges = graphs.iter().flat_map(|g| g.edge_features.chunks_exact(EDGE_FEATURES));
    let node_t = graphs.iter().flat_map(|g| g.node_targets.chunks_exact(TARGET_DIM));
    let edge_t = graphs.iter().flat_map(|g| g.edge_targets.chunks_exact(TARGET_DIM));
    let (mut node_mean, mut node_std) = column_stats(nodes, NODE_FEATURES);
    for d in TYPE_OFFSET..NODE_FEATURES {
        node_mean[d] = 0.0;
        node_std[d] = 1.0;
    }
    let (edge_mean, edge_std) = column_stats(edges, EDGE_FEATURES);
    let (node_target_mean, node_target_std) = column_stats(node_t, TARGET_DIM);
    let (edge_target_mean, edge_target_std) = column_stats(edge_t, TARGET_DIM);
    Ok(NormStats {
        node_mean,
        node_std,
        edge_mean,
        edge_std,
        node_target_mean,
        node_target_std,
        edge_target_mean,
        edge_target_std,
    })
}

fn scale_rows(values: &mut [f64], mean: &[f64], std: &[f64]) {
    for row in values.chunks_exact_mut(mean.len()) {
        for ((v, m), s) in row.iter_mut().zip(mean).zip(std) {
            *v = (*v - m) / s;
        }
    }
}

fn unscale_rows(values: &mut [f64], mean: &[f64], std: &[f64]) {
    for row in values.chunks_exact_mut(mean.len()) {
        for ((v, m), s) in row.iter_mut().zip(mean).zip(std) {
            *v = *v * s + m;
        }
    }
}

impl NormStats {
    pub fn validate(&self) -> Result<(), GraphError> {
        let dims = [
            ("node_mean", NODE_FEATURES, self.node_mean.len()),
            ("node_std", NODE_FEATURES, self.node_std.len()),
            ("edge_mean", EDGE_FEATURES, self.edge_mean.len()),
            ("edge_std", EDGE_FEATURES, self.edge_std.len()),
            ("node_target_mean", TARGET_DIM, self.node_target_mean.len()),
            ("node_target_std", TARGET_DIM, self.node_target_std.len()),
            ("edge_target_mean", TARGET_DIM, self.edge_target_mean.len()),
            ("edge_target_std", TARGET_DIM, self.edge_target_std.len()),
        ];
        for (what, expected, found) in dims {
            if expected != found {
                return Err(GraphError::Dimension { what, expected, found });
            }
        }
        Ok(())
    }

    /// z-scored copy of `graph`.
    pub fn normalize_graph(&self, graph: &Graph) -> Result<Graph, GraphError> {
        self.validate()?;
        graph.validate()?;
        let mut g = graph.clone();
        scale_rows(&mut g.node_features, &self.node_mean, &self.node_std);
        scale_rows(&mut g.edge_features, &self.edge_mean, &self.edge_std);
        scale_rows(&mut g.node_targets, &self.node_target_mean, &self.node_target_std);
        scale_rows(&mut g.edge_targets, &self.edge_target_mean, &self.edge_target_std);
        Ok(g)
    }

    /// Inverse of [`normalize_graph`](Self::normalize_graph).
    pub fn denormalize_graph(&self, graph: &Graph) -> Result<Graph, GraphError> {
        self.validate()?;
        graph.validate()?;
        let mut g = graph.clone();
        unscale_rows(&mut g.node_features, &self.node_mean, &self.node_std);
        unscale_rows(&mut g.edge_features, &self.edge_mean, &self.edge_std);
        unscale_rows(&mut g.node_targets, &self.node_target_mean, &self.node_target_std);
        unscale_rows(&mut g.edge_targets, &self.edge_target_mean, &self.edge_target_std);
        Ok(g)
    }

    /// Maps normalized `(edge, node)` force predictions back to newtons.
    pub fn denormalize_predictions(&self, edge_preds: &[f64], node_preds: &[f64]) -> Result<(Vec<f64>, Vec<f64>), GraphError> {
        self.validate()?;
        for (what, len) in [("edge predictions", edge_preds.len()), ("node predictions", node_preds.len())] {
            if len % TARGET_DIM != 0 {
                return Err(GraphError::Dimension {
                    what,
                    expected: len.next_multiple_of(TARGET_DIM),
                    found: len,
                });
            }
        }
        let mut e = edge_preds.to_vec();
        let mut n = node_preds.to_vec();
        unscale_rows(&mut e, &self.edge_target_mean, &self.edge_target_std);
        unscale_rows(&mut n, &self.node_target_mean, &self.node_target_std);
        Ok((e, n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub graphs: Vec<Graph>,
    /// Computed from the training split, shared unchanged by the test split.
    pub stats: NormStats,
    pub split: Split,
    /// Trajectory ids in the order their graphs appear.
    pub provenance: Vec<String>,
    pub normalized: bool,
}

/// z-scored copy of a raw dataset.
pub fn normalize(dataset: &Dataset) -> Result<Dataset, GraphError> {
    if dataset.normalized {
        return Ok(dataset.clone());
    }
    let graphs = dataset
        .graphs
        .iter()
        .map(|g| dataset.stats.normalize_graph(g))
        .collect::<Result<_, _>>()?;
    Ok(Dataset {
        graphs,
        normalized: true,
        ..dataset.clone()
    })
}

pub fn denormalize_predictions(
    edge_preds: &[f64],
    node_preds: &[f64],
    stats: &NormStats,
) -> Result<(Vec<f64>, Vec<f64>), GraphError> {
    stats.denormalize_predictions(edge_preds, node_preds)
}

/// On-disk description of a dataset split. Graphs are rebuilt from the listed
/// trajectory files on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub split: Split,
    pub sources: Vec<PathBuf>,
    pub policy: SamplingPolicy,
    pub stats: NormStats,
    pub n_graphs: usize,
}
