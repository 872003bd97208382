//! Compile a validated topology into the end-to-end trainable network.
//!
//! Every link gets a two-layer encoder at its tail node (ReLU hidden,
//! identity output sized to the link's channel count); every destination gets
//! a two-layer decoder (ReLU hidden, sigmoid output of width n). Channel
//! noise enters as non-trainable additive layers with unit Jacobians.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NncError, Result};
use crate::rng::stream_rng;
use crate::tape::{sample_noise, Activation, Mode, NodeId, NoiseSpec, Tape};
use crate::tensor::Tensor;
use crate::topology::{Role, Topology};

pub const DEFAULT_HIDDEN_WIDTH: usize = 32;

/// Draw-counter namespace for evaluation passes, disjoint from the training
/// step counter.
pub const EVAL_DRAW_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InnerNnSpec {
    pub hidden_width: usize,
}

impl Default for InnerNnSpec {
    fn default() -> Self {
        InnerNnSpec {
            hidden_width: DEFAULT_HIDDEN_WIDTH,
        }
    }
}

impl InnerNnSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 {
            return Err(NncError::config("hidden width must be >= 1"));
        }
        Ok(())
    }
}

/// Parameter indices of one two-layer inner NN.
#[derive(Debug, Clone, Copy)]
struct InnerNn {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
pub struct EndToEndModel {
    topology: Topology,
    spec: InnerNnSpec,
    seed: u64,
    params: Vec<(String, Tensor)>,
    /// Encoder per link, parallel to `topology.links`.
    encoders: Vec<InnerNn>,
    /// Decoder per destination, sorted by destination id.
    decoders: Vec<(String, InnerNn)>,
    topo_order: Vec<String>,
}

/// Tape handles from one traced forward pass.
pub struct TracedForward {
    pub tape: Tape,
    /// Leaf ids of every parameter, parallel to the model's parameter store.
    pub param_nodes: Vec<NodeId>,
    /// (destination id, reconstruction node), sorted by destination id.
    pub reconstructions: Vec<(String, NodeId)>,
    /// Transmitted signal W per link, parallel to `topology.links`.
    pub link_signals: Vec<NodeId>,
    /// Received signal Y per link.
    pub link_received: Vec<NodeId>,
}

/// Materialized forward outputs for evaluation.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub reconstructions: BTreeMap<String, Tensor>,
    /// Per link, in declaration order.
    pub link_signals: Vec<Tensor>,
    pub link_received: Vec<Tensor>,
}

/// Scalar components of the training objective.
pub struct LossNodes {
    pub total: NodeId,
    pub distortion: NodeId,
    pub power_penalty: NodeId,
}

impl EndToEndModel {
    /// Build the end-to-end network. Deterministic for a fixed seed: weights
    /// are Glorot-uniform, biases zero.
    pub fn compile(topology: Topology, spec: InnerNnSpec, seed: u64) -> Result<Self> {
        topology.ensure_valid()?;
        spec.validate()?;
        let topo_order = topology.topological_order()?;

        let mut params: Vec<(String, Tensor)> = Vec::new();
        let mut add_nn = |name: &str, d_in: usize, hidden: usize, d_out: usize| -> InnerNn {
            let mut add = |suffix: &str, rows: usize, cols: usize, init: bool| -> usize {
                let idx = params.len();
                let t = if init {
                    glorot_uniform(rows, cols, seed, idx as u64)
                } else {
                    Tensor::zeros(rows, cols)
                };
                params.push((format!("{name}.{suffix}"), t));
                idx
            };
            InnerNn {
                w1: add("w1", d_in, hidden, true),
                b1: add("b1", 1, hidden, false),
                w2: add("w2", hidden, d_out, true),
                b2: add("b2", 1, d_out, false),
            }
        };

        let hidden = spec.hidden_width;
        let mut encoders = Vec::with_capacity(topology.links.len());
        for link in &topology.links {
            let d_in = topology.incoming_dim(&link.from)?;
            encoders.push(add_nn(&format!("enc[{}]", link.key()), d_in, hidden, link.channels));
        }
        let n = topology.total_source_dim();
        let mut decoders = Vec::new();
        for dest in topology.destinations() {
            let d_in = topology.incoming_dim(&dest.id)?;
            decoders.push((
                dest.id.clone(),
                add_nn(&format!("dec[{}]", dest.id), d_in, hidden, n),
            ));
        }

        Ok(EndToEndModel {
            topology,
            spec,
            seed,
            params,
            encoders,
            decoders,
            topo_order,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn spec(&self) -> InnerNnSpec {
        self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn source_dim(&self) -> usize {
        self.topology.total_source_dim()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.as_slice().len()).sum()
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Vec<(String, Tensor)> {
        &mut self.params
    }

    /// Record a full forward pass on a fresh tape. `noise_draw` selects the
    /// per-link noise streams: replaying the same draw replays the noise.
    pub fn forward_traced(
        &self,
        batch: &Tensor,
        mode: Mode,
        noise_draw: u64,
    ) -> Result<TracedForward> {
        let n = self.source_dim();
        if batch.cols() != n {
            return Err(NncError::config(format!(
                "batch width {} does not match total source dimension {n}",
                batch.cols()
            )));
        }
        let mut tape = Tape::new();
        let param_nodes: Vec<NodeId> = self
            .params
            .iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect();

        // source slices in node-id order
        let mut node_input: HashMap<String, NodeId> = HashMap::new();
        let mut offset = 0;
        for s in self.topology.sources() {
            let slice = batch.slice_cols(offset, offset + s.source_dim)?;
            node_input.insert(s.id.clone(), tape.leaf(slice));
            offset += s.source_dim;
        }

        let mut link_signals: Vec<Option<NodeId>> = vec![None; self.topology.links.len()];
        let mut link_received: Vec<Option<NodeId>> = vec![None; self.topology.links.len()];

        for node_id in &self.topo_order {
            let node = self.topology.node(node_id).expect("order over known nodes");
            let input = if node.role == Role::Source {
                node_input[node_id]
            } else {
                let incoming: Vec<NodeId> = self
                    .topology
                    .links_in(node_id)
                    .iter()
                    .map(|(li, _)| link_received[*li].expect("predecessor processed"))
                    .collect();
                let cat = tape.concat(&incoming)?;
                node_input.insert(node_id.clone(), cat);
                cat
            };
            for (li, link) in self.topology.links_out(node_id) {
                let nn = self.encoders[li];
                let h = tape.dense(input, param_nodes[nn.w1], param_nodes[nn.b1], Activation::Relu)?;
                let w = tape.dense(h, param_nodes[nn.w2], param_nodes[nn.b2], Activation::Identity)?;
                let spec = NoiseSpec {
                    variance: link.noise_variance,
                    rng_seed: self.seed,
                };
                let noise =
                    sample_noise(batch.rows(), link.channels, &spec, li as u64, noise_draw)?;
                let y = tape.add_noise(w, &noise)?;
                let _ = mode; // noise is sampled in both modes
                link_signals[li] = Some(w);
                link_received[li] = Some(y);
            }
        }

        let mut reconstructions = Vec::new();
        for (dest_id, nn) in &self.decoders {
            let input = node_input[dest_id];
            let h = tape.dense(input, param_nodes[nn.w1], param_nodes[nn.b1], Activation::Relu)?;
            let x_hat =
                tape.dense(h, param_nodes[nn.w2], param_nodes[nn.b2], Activation::Sigmoid)?;
            reconstructions.push((dest_id.clone(), x_hat));
        }

        Ok(TracedForward {
            tape,
            param_nodes,
            reconstructions,
            link_signals: link_signals.into_iter().map(|x| x.unwrap()).collect(),
            link_received: link_received.into_iter().map(|x| x.unwrap()).collect(),
        })
    }

    /// Forward pass returning materialized tensors.
    pub fn forward(&self, batch: &Tensor, mode: Mode, noise_draw: u64) -> Result<ForwardResult> {
        let traced = self.forward_traced(batch, mode, noise_draw)?;
        let mut reconstructions = BTreeMap::new();
        for (id, node) in &traced.reconstructions {
            reconstructions.insert(id.clone(), traced.tape.value(*node).clone());
        }
        Ok(ForwardResult {
            reconstructions,
            link_signals: traced
                .link_signals
                .iter()
                .map(|&id| traced.tape.value(id).clone())
                .collect(),
            link_received: traced
                .link_received
                .iter()
                .map(|&id| traced.tape.value(id).clone())
                .collect(),
        })
    }

    /// Record the training objective on the tape of a traced forward:
    /// sum over destinations of BCE plus sum over links of
    /// lambda * mean signal energy.
    pub fn loss_traced(&self, traced: &mut TracedForward, batch: &Tensor) -> Result<LossNodes> {
        let mut bces = Vec::new();
        for (_, recon) in &traced.reconstructions {
            bces.push(traced.tape.bce_loss(*recon, batch)?);
        }
        let distortion = traced.tape.sum_scalars(&bces)?;
        let mut penalties = Vec::new();
        for (li, link) in self.topology.links.iter().enumerate() {
            let p = traced.tape.power_readout(traced.link_signals[li]);
            penalties.push(traced.tape.scale(p, link.lambda));
        }
        let power_penalty = traced.tape.sum_scalars(&penalties)?;
        let total = traced.tape.sum_scalars(&[distortion, power_penalty])?;
        Ok(LossNodes {
            total,
            distortion,
            power_penalty,
        })
    }

    /// Per-link and per-channel average transmitted power on a sample batch.
    pub fn link_power_profile(&self, sample: &Tensor, noise_draw: u64) -> Result<PowerProfile> {
        let result = self.forward(sample, Mode::Eval, noise_draw)?;
        Ok(PowerProfile::from_signals(&result.link_signals))
    }
}

/// Objective value computed by direct summation from materialized outputs;
/// the non-tape route to the same scalar.
pub fn loss_value(result: &ForwardResult, batch: &Tensor, topology: &Topology) -> Result<f64> {
    use crate::tape::BCE_CLAMP;
    let n = batch.cols() as f64;
    let b = batch.rows() as f64;
    let mut total = 0.0;
    for dest in topology.destinations() {
        let recon = result
            .reconstructions
            .get(&dest.id)
            .ok_or_else(|| NncError::config(format!("missing reconstruction for {}", dest.id)))?;
        if recon.shape() != batch.shape() {
            return Err(NncError::config("reconstruction shape mismatch"));
        }
        let mut h = 0.0;
        for (&p, &t) in recon.as_slice().iter().zip(batch.as_slice()) {
            let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            h -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        }
        total += h / (n * b);
    }
    for (li, link) in topology.links.iter().enumerate() {
        let w = &result.link_signals[li];
        let energy: f64 = w.as_slice().iter().map(|v| v * v).sum();
        total += link.lambda * energy / w.rows() as f64;
    }
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct PowerProfile {
    /// Mean power of each channel, per link.
    pub per_link_channel: Vec<Vec<f64>>,
    /// Per-link power: sum over the link's channels.
    pub per_link_total: Vec<f64>,
    /// Per-image total power: sum over links.
    pub total_per_image: f64,
}

impl PowerProfile {
    pub fn from_signals(link_signals: &[Tensor]) -> Self {
        let per_link_channel: Vec<Vec<f64>> = link_signals
            .iter()
            .map(|w| {
                let b = w.rows() as f64;
                let mut ch = vec![0.0; w.cols()];
                for r in 0..w.rows() {
                    for (c, &v) in ch.iter_mut().zip(w.row(r)) {
                        *c += v * v;
                    }
                }
                ch.iter().map(|&s| s / b).collect()
            })
            .collect();
        let per_link_total: Vec<f64> = per_link_channel.iter().map(|c| c.iter().sum()).collect();
        let total_per_image = per_link_total.iter().sum();
        PowerProfile {
            per_link_channel,
            per_link_total,
            total_per_image,
        }
    }

    /// All channel powers flattened in link declaration order.
    pub fn flat_channel_powers(&self) -> Vec<f64> {
        self.per_link_channel.iter().flatten().copied().collect()
    }
}

fn glorot_uniform(rows: usize, cols: usize, seed: u64, param_index: u64) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mut rng = stream_rng(seed, 0x1217, param_index);
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
    .expect("shape matches generated data")
}

/// Versioned checkpoint: topology hash + seed + parameter matrices.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub topology_hash: String,
    pub seed: u64,
    pub hidden_width: usize,
    pub params: Vec<CheckpointParam>,
}

#[derive(Serialize, Deserialize)]
pub struct CheckpointParam {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl EndToEndModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: 1,
            topology_hash: self.topology.content_hash(),
            seed: self.seed,
            hidden_width: self.spec.hidden_width,
            params: self
                .params
                .iter()
                .map(|(name, t)| CheckpointParam {
                    name: name.clone(),
                    rows: t.rows(),
                    cols: t.cols(),
                    data: t.as_slice().to_vec(),
                })
                .collect(),
        }
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, json)?;
        Ok(())
    }

    /// Rebuild a model from a checkpoint; the topology must hash-match the
    /// one the checkpoint was trained on, and every matrix must fit.
    pub fn load_checkpoint(path: impl AsRef<Path>, topology: Topology) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.version != 1 {
            return Err(NncError::config(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        if ckpt.topology_hash != topology.content_hash() {
            return Err(NncError::config(
                "checkpoint topology hash does not match the provided topology",
            ));
        }
        let mut model = EndToEndModel::compile(
            topology,
            InnerNnSpec {
                hidden_width: ckpt.hidden_width,
            },
            ckpt.seed,
        )?;
        if ckpt.params.len() != model.params.len() {
            return Err(NncError::config("checkpoint parameter count mismatch"));
        }
        for ((name, t), cp) in model.params.iter_mut().zip(&ckpt.params) {
            if cp.name != *name || cp.rows != t.rows() || cp.cols != t.cols() {
                return Err(NncError::config(format!(
                    "checkpoint parameter {} does not match compiled shape",
                    cp.name
                )));
            }
            *t = Tensor::from_vec(cp.rows, cp.cols, cp.data.clone())?;
        }
        Ok(model)
    }
}
