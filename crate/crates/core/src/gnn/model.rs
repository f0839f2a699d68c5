//! Encode-process-decode message passing network.
//!
//! Node and edge features are lifted to latents by separate encoder MLPs.
//! Each processor block updates every edge from its own latent and the
//! latents of its sender and receiver, sums the resulting messages at each
//! receiver, and updates every node from its latent and that sum. Both
//! updates are residual. Blocks do not share weights. Separate decoders map
//! the final edge latents to contact forces and node latents to net forces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{MlpParams, MlpTape};
use crate::error::ModelError;
use crate::graph::{Graph, EDGE_FEATURES, NODE_FEATURES, TARGET_DIM};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnnHyper {
    pub latent_size: usize,
    pub n_blocks: usize,
    /// Hidden layers per MLP, each `latent_size` wide.
    pub hidden_layers: usize,
}

impl Default for GnnHyper {
    fn default() -> Self {
        Self {
            latent_size: 64,
            n_blocks: 3,
            hidden_layers: 2,
        }
    }
}

impl GnnHyper {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.latent_size == 0 || self.n_blocks == 0 {
            return Err(ModelError::Empty("latent size / processor block count must be >= 1"));
        }
        Ok(())
    }

    fn mlp_sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(self.latent_size, self.hidden_layers));
        sizes.push(output);
        sizes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessorBlock {
    /// `[edge ‖ sender ‖ receiver]` → edge message.
    pub edge_mlp: MlpParams,
    /// `[node ‖ Σ incoming messages]` → node update.
    pub node_mlp: MlpParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnModel {
    pub hyper: GnnHyper,
    pub node_encoder: MlpParams,
    pub edge_encoder: MlpParams,
    pub blocks: Vec<ProcessorBlock>,
    pub edge_decoder: MlpParams,
    pub node_decoder: MlpParams,
}

/// Name, shape and offset of one parameter tensor in the flat layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl GnnModel {
    /// Freshly initialised model; every MLP draws from one seeded stream.
    pub fn new(hyper: &GnnHyper, seed: u64) -> Result<Self, ModelError> {
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = hyper.latent_size;
        let node_encoder = MlpParams::init(&hyper.mlp_sizes(NODE_FEATURES, l), &mut rng)?;
        let edge_encoder = MlpParams::init(&hyper.mlp_sizes(EDGE_FEATURES, l), &mut rng)?;
        let mut blocks = Vec::with_capacity(hyper.n_blocks);
        for _ in 0..hyper.n_blocks {
            blocks.push(ProcessorBlock {
                edge_mlp: MlpParams::init(&hyper.mlp_sizes(3 * l, l), &mut rng)?,
                node_mlp: MlpParams::init(&hyper.mlp_sizes(2 * l, l), &mut rng)?,
            });
        }
        let edge_decoder = MlpParams::init(&hyper.mlp_sizes(l, TARGET_DIM), &mut rng)?;
        let node_decoder = MlpParams::init(&hyper.mlp_sizes(l, TARGET_DIM), &mut rng)?;
        Ok(Self {
            hyper: hyper.clone(),
            node_encoder,
            edge_encoder,
            blocks,
            edge_decoder,
            node_decoder,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hyper: self.hyper.clone(),
            node_encoder: self.node_encoder.zeros_like(),
            edge_encoder: self.edge_encoder.zeros_like(),
            blocks: self
                .blocks
                .iter()
                .map(|b| ProcessorBlock {
                    edge_mlp: b.edge_mlp.zeros_like(),
                    node_mlp: b.node_mlp.zeros_like(),
                })
                .collect(),
            edge_decoder: self.edge_decoder.zeros_like(),
            node_decoder: self.node_decoder.zeros_like(),
        }
    }

    fn components(&self) -> Vec<(String, &MlpParams)> {
        let mut out = vec![
            ("node_encoder".to_string(), &self.node_encoder),
            ("edge_encoder".to_string(), &self.edge_encoder),
        ];
        for (m, b) in self.blocks.iter().enumerate() {
            out.push((format!("processor{m}.edge_mlp"), &b.edge_mlp));
            out.push((format!("processor{m}.node_mlp"), &b.node_mlp));
        }
        out.push(("edge_decoder".to_string(), &self.edge_decoder));
        out.push(("node_decoder".to_string(), &self.node_decoder));
        out
    }

    fn components_mut(&mut self) -> Vec<&mut MlpParams> {
        let mut out = vec![&mut self.node_encoder, &mut self.edge_encoder];
        for b in &mut self.blocks {
            out.push(&mut b.edge_mlp);
            out.push(&mut b.node_mlp);
        }
        out.push(&mut self.edge_decoder);
        out.push(&mut self.node_decoder);
        out
    }

    /// Layout of [`flatten`](Self::flatten): every tensor in a fixed order.
    pub fn manifest(&self) -> Vec<TensorSpec> {
        let mut offset = 0;
        let mut specs = Vec::new();
        for (prefix, mlp) in self.components() {
            for (name, shape, values) in mlp.tensors() {
                specs.push(TensorSpec {
                    name: format!("{prefix}.{name}"),
                    offset,
                    shape,
                });
                offset += values.len();
            }
        }
        specs
    }

    pub fn param_count(&self) -> usize {
        self.components().iter().map(|(_, m)| m.param_count()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for (_, mlp) in self.components() {
            for (_, _, values) in mlp.tensors() {
                flat.extend_from_slice(values);
            }
        }
        flat
    }

    pub fn assign(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        let expected = self.param_count();
        if flat.len() != expected {
            return Err(ModelError::Dimension {
                what: "flat parameter vector".into(),
                expected,
                found: flat.len(),
            });
        }
        let mut offset = 0;
        for mlp in self.components_mut() {
            for t in mlp.tensors_mut() {
                let n = t.len();
                t.copy_from_slice(&flat[offset..offset + n]);
                offset += n;
            }
        }
        Ok(())
    }
}

/// Several graphs stacked into one disconnected graph.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub n_nodes: usize,
    pub node_features: Vec<f64>,
    pub edge_features: Vec<f64>,
    pub senders: Vec<usize>,
    pub receivers: Vec<usize>,
    /// Incoming edge ids per node, CSR layout.
    incoming_offsets: Vec<usize>,
    incoming_edges: Vec<usize>,
    /// `(first node, node count, first edge, edge count)` per graph.
    pub spans: Vec<(usize, usize, usize, usize)>,
}

impl GraphBatch {
    pub fn new(graphs: &[&Graph]) -> Result<Self, ModelError> {
        if graphs.is_empty() {
            return Err(ModelError::Empty("graph batch"));
        }
        let mut b = GraphBatch {
            n_nodes: 0,
            node_features: Vec::new(),
            edge_features: Vec::new(),
            senders: Vec::new(),
            receivers: Vec::new(),
            incoming_offsets: Vec::new(),
            incoming_edges: Vec::new(),
            spans: Vec::with_capacity(graphs.len()),
        };
        for g in graphs {
            g.validate().map_err(|e| ModelError::Dimension {
                what: e.to_string(),
                expected: 0,
                found: 0,
            })?;
            let (node0, edge0) = (b.n_nodes, b.senders.len());
            b.node_features.extend_from_slice(&g.node_features);
            b.edge_features.extend_from_slice(&g.edge_features);
            b.senders.extend(g.senders.iter().map(|s| s + node0));
            b.receivers.extend(g.receivers.iter().map(|r| r + node0));
            b.spans.push((node0, g.n_nodes, edge0, g.n_edges()));
            b.n_nodes += g.n_nodes;
        }
        let mut counts = vec![0usize; b.n_nodes + 1];
        for &r in &b.receivers {
            counts[r + 1] += 1;
        }
        for i in 0..b.n_nodes {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut incoming = vec![0usize; b.receivers.len()];
        for (e, &r) in b.receivers.iter().enumerate() {
            incoming[fill[r]] = e;
            fill[r] += 1;
        }
        b.incoming_offsets = counts;
        b.incoming_edges = incoming;
        Ok(b)
    }

    pub fn n_edges(&self) -> usize {
        self.senders.len()
    }

    fn incoming(&self, node: usize) -> &[usize] {
        &self.incoming_edges[self.incoming_offsets[node]..self.incoming_offsets[node + 1]]
    }

    /// Per-node, per-dimension sum of incoming edge rows.
    ///
    /// Summands are added in ascending value order, which makes the result
    /// independent of how edges and nodes are numbered.
    fn aggregate(&self, messages: &[f64], width: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_nodes * width];
        let mut scratch = Vec::new();
        for node in 0..self.n_nodes {
            let incoming = self.incoming(node);
            let row = &mut out[node * width..(node + 1) * width];
            match incoming {
                [] => {}
                [a] => row.copy_from_slice(&messages[a * width..(a + 1) * width]),
                [a, b] => {
                    for d in 0..width {
                        row[d] = messages[a * width + d] + messages[b * width + d];
                    }
                }
                many => {
                    for d in 0..width {
                        scratch.clear();
                        scratch.extend(many.iter().map(|&e| messages[e * width + d]));
                        scratch.sort_unstable_by(f64::total_cmp);
                        row[d] = scratch.iter().sum();
                    }
                }
            }
        }
        out
    }
}

struct BlockTape {
    edge_tape: MlpTape,
    node_tape: MlpTape,
}

/// Intermediate values kept for the backward pass.
pub struct ForwardTape {
    node_encoder: MlpTape,
    edge_encoder: MlpTape,
    blocks: Vec<BlockTape>,
    edge_decoder: MlpTape,
    node_decoder: MlpTape,
}

/// Edge and node predictions for a batch, each `rows × 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub edges: Vec<f64>,
    pub nodes: Vec<f64>,
}

fn check_finite(values: &[f64], what: impl FnOnce() -> String) -> Result<(), ModelError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite(what()))
    }
}

fn gather_edge_inputs(batch: &GraphBatch, edges: &[f64], nodes: &[f64], l: usize) -> Vec<f64> {
    let mut input = Vec::with_capacity(batch.n_edges() * 3 * l);
    for e in 0..batch.n_edges() {
        let (s, r) = (batch.senders[e], batch.receivers[e]);
        input.extend_from_slice(&edges[e * l..(e + 1) * l]);
        input.extend_from_slice(&nodes[s * l..(s + 1) * l]);
        input.extend_from_slice(&nodes[r * l..(r + 1) * l]);
    }
    input
}

fn concat_rows(a: &[f64], b: &[f64], l: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    for (ra, rb) in a.chunks_exact(l).zip(b.chunks_exact(l)) {
        out.extend_from_slice(ra);
        out.extend_from_slice(rb);
    }
    out
}

impl GnnModel {
    fn check_batch(&self, batch: &GraphBatch) -> Result<(), ModelError> {
        let checks = [
            ("node features", batch.n_nodes * NODE_FEATURES, batch.node_features.len()),
            ("edge features", batch.n_edges() * EDGE_FEATURES, batch.edge_features.len()),
        ];
        for (what, expected, found) in checks {
            if expected != found {
                return Err(ModelError::Dimension {
                    what: what.into(),
                    expected,
                    found,
                });
            }
        }
        Ok(())
    }

    pub fn forward_batch(&self, batch: &GraphBatch) -> Result<(Predictions, ForwardTape), ModelError> {
        self.check_batch(batch)?;
        let l = self.hyper.latent_size;
        let (n_nodes, n_edges) = (batch.n_nodes, batch.n_edges());
        let (mut nodes, node_encoder) = self.node_encoder.forward_batch(&batch.node_features, n_nodes)?;
        let (mut edges, edge_encoder) = self.edge_encoder.forward_batch(&batch.edge_features, n_edges)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (m, block) in self.blocks.iter().enumerate() {
            let edge_input = gather_edge_inputs(batch, &edges, &nodes, l);
            let (messages, edge_tape) = block.edge_mlp.forward_batch(&edge_input, n_edges)?;
            let summed = batch.aggregate(&messages, l);
            let node_input = concat_rows(&nodes, &summed, l);
            let (node_update, node_tape) = block.node_mlp.forward_batch(&node_input, n_nodes)?;
            for (e, d) in edges.iter_mut().zip(&messages) {
                *e += d;
            }
            for (v, d) in nodes.iter_mut().zip(&node_update) {
                *v += d;
            }
            check_finite(&edges, || format!("edge latents after processor block {m}"))?;
            check_finite(&nodes, || format!("node latents after processor block {m}"))?;
            blocks.push(BlockTape { edge_tape, node_tape });
        }
        let (edge_out, edge_decoder) = self.edge_decoder.forward_batch(&edges, n_edges)?;
        let (node_out, node_decoder) = self.node_decoder.forward_batch(&nodes, n_nodes)?;
        Ok((
            Predictions {
                edges: edge_out,
                nodes: node_out,
            },
            ForwardTape {
                node_encoder,
                edge_encoder,
                blocks,
                edge_decoder,
                node_decoder,
            },
        ))
    }

    /// Accumulates parameter gradients for upstream gradients on the predictions.
    pub fn backward_batch(
        &self,
        batch: &GraphBatch,
        tape: &ForwardTape,
        d_edges: &[f64],
        d_nodes: &[f64],
        grads: &mut GnnModel,
    ) {
        let l = self.hyper.latent_size;
        let mut d_edge_lat = self.edge_decoder.backward_batch(&tape.edge_decoder, d_edges, &mut grads.edge_decoder);
        let mut d_node_lat = self.node_decoder.backward_batch(&tape.node_decoder, d_nodes, &mut grads.node_decoder);
        for (m, block) in self.blocks.iter().enumerate().rev() {
            let bt = &tape.blocks[m];
            let gb = &mut grads.blocks[m];
            // Node update: V' = V + f([V ‖ agg]).
            let d_node_in = block.node_mlp.backward_batch(&bt.node_tape, &d_node_lat, &mut gb.node_mlp);
            let mut d_agg = vec![0.0; batch.n_nodes * l];
            for (i, row) in d_node_in.chunks_exact(2 * l).enumerate() {
                for d in 0..l {
                    d_node_lat[i * l + d] += row[d];
                }
                d_agg[i * l..(i + 1) * l].copy_from_slice(&row[l..]);
            }
            // Edge update: E' = E + msg, msg also feeds the receiver sum.
            let mut d_msg = d_edge_lat.clone();
            for (e, &r) in batch.receivers.iter().enumerate() {
                for d in 0..l {
                    d_msg[e * l + d] += d_agg[r * l + d];
                }
            }
            let d_edge_in = block.edge_mlp.backward_batch(&bt.edge_tape, &d_msg, &mut gb.edge_mlp);
            for (e, row) in d_edge_in.chunks_exact(3 * l).enumerate() {
                let (s, r) = (batch.senders[e], batch.receivers[e]);
                for d in 0..l {
                    d_edge_lat[e * l + d] += row[d];
                    d_node_lat[s * l + d] += row[l + d];
                    d_node_lat[r * l + d] += row[2 * l + d];
                }
            }
        }
        self.node_encoder.backward_batch(&tape.node_encoder, &d_node_lat, &mut grads.node_encoder);
        self.edge_encoder.backward_batch(&tape.edge_encoder, &d_edge_lat, &mut grads.edge_encoder);
    }
}

/// Predictions for one (normalized) graph: `(edge forces, node forces)`, each `rows × 2`.
pub fn gnn_forward(model: &GnnModel, graph: &Graph) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    let batch = GraphBatch::new(&[graph])?;
    let (p, _) = model.forward_batch(&batch)?;
    Ok((p.edges, p.nodes))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub edge: f64,
    pub node: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { edge: 1.0, node: 1.0 }
    }
}

fn mse(pred: &[f64], target: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64
}

/// `w_e · MSE(edges) + w_n · MSE(nodes)` for one graph, in normalized units.
pub fn loss_fn(edge_preds: &[f64], node_preds: &[f64], graph: &Graph, weights: LossWeights) -> Result<f64, ModelError> {
    for (what, expected, found) in [
        ("edge predictions", graph.edge_targets.len(), edge_preds.len()),
        ("node predictions", graph.node_targets.len(), node_preds.len()),
    ] {
        if expected != found {
            return Err(ModelError::Dimension {
                what: what.into(),
                expected,
                found,
            });
        }
    }
    Ok(weights.edge * mse(edge_preds, &graph.edge_targets) + weights.node * mse(node_preds, &graph.node_targets))
}

/// Mean per-graph loss over `graphs` without building gradients.
pub fn batch_loss(model: &GnnModel, graphs: &[&Graph], weights: LossWeights) -> Result<f64, ModelError> {
    let batch = GraphBatch::new(graphs)?;
    let (p, _) = model.forward_batch(&batch)?;
    let mut total = 0.0;
    for (g, &(n0, nn, e0, ne)) in graphs.iter().zip(&batch.spans) {
        total += loss_fn(&p.edges[2 * e0..2 * (e0 + ne)], &p.nodes[2 * n0..2 * (n0 + nn)], g, weights)?;
    }
    Ok(total / graphs.len() as f64)
}

/// Mean batch loss and its exact gradient with respect to every parameter.
pub fn gradients(model: &GnnModel, graphs: &[&Graph], weights: LossWeights) -> Result<(f64, GnnModel), ModelError> {
    let batch = GraphBatch::new(graphs)?;
    let (p, tape) = model.forward_batch(&batch)?;
    let scale = 1.0 / graphs.len() as f64;
    let mut d_edges = vec![0.0; p.edges.len()];
    let mut d_nodes = vec![0.0; p.nodes.len()];
    let mut total = 0.0;
    for (g, &(n0, nn, e0, ne)) in graphs.iter().zip(&batch.spans) {
        let (ep, np) = (&p.edges[2 * e0..2 * (e0 + ne)], &p.nodes[2 * n0..2 * (n0 + nn)]);
        total += loss_fn(ep, np, g, weights)?;
        let ce = if ne > 0 { 2.0 * weights.edge * scale / (2 * ne) as f64 } else { 0.0 };
        let cn = if nn > 0 { 2.0 * weights.node * scale / (2 * nn) as f64 } else { 0.0 };
        for (i, (p, t)) in ep.iter().zip(&g.edge_targets).enumerate() {
            d_edges[2 * e0 + i] = ce * (p - t);
        }
        for (i, (p, t)) in np.iter().zip(&g.node_targets).enumerate() {
            d_nodes[2 * n0 + i] = cn * (p - t);
        }
    }
    let mut grads = model.zeros_like();
    model.backward_batch(&batch, &tape, &d_edges, &d_nodes, &mut grads);
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(ModelError::NonFinite("batch loss".into()));
    }
    check_finite(&grads.flatten(), || "parameter gradients".into())?;
    Ok((loss, grads))
}
