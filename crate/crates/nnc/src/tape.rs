//! Reverse-mode automatic differentiation on a linear tape.
//!
//! The tape records exactly the primitives the end-to-end network needs:
//! affine layers with ReLU/sigmoid/identity activations, additive Gaussian
//! noise, column concatenation, binary cross entropy, mean signal energy, and
//! scalar combination. Operations are recorded in topological order by
//! construction; `backward` replays them in exact reverse order.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{NncError, Result};
use crate::linalg;
use crate::rng::stream_rng;
use crate::tensor::Tensor;

/// Prediction clamp applied before the BCE logarithms.
pub const BCE_CLAMP: f64 = 1e-7;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

/// Whether a forward pass is part of training or evaluation. Channel noise is
/// sampled fresh in both modes; the distinction exists for callers that log
/// or checkpoint differently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One fully-connected layer held outside any tape.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn check(&self) -> Result<()> {
        if self.bias.len() != self.weight.cols() {
            return Err(NncError::config(format!(
                "bias length {} does not match weight output width {}",
                self.bias.len(),
                self.weight.cols()
            )));
        }
        Ok(())
    }
}

/// Additive Gaussian channel description: per-channel noise variance and the
/// seed its stream derives from.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    pub variance: f64,
    pub rng_seed: u64,
}

impl NoiseSpec {
    pub fn check(&self) -> Result<()> {
        if self.variance < 0.0 || !self.variance.is_finite() {
            return Err(NncError::config(format!(
                "noise variance must be finite and >= 0, got {}",
                self.variance
            )));
        }
        Ok(())
    }
}

enum Op {
    Leaf,
    Dense {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        activation: Activation,
    },
    Noise {
        input: NodeId,
    },
    Concat {
        inputs: Vec<NodeId>,
    },
    Bce {
        pred: NodeId,
        target: Tensor,
    },
    Power {
        input: NodeId,
    },
    Scale {
        input: NodeId,
        factor: f64,
    },
    SumScalars {
        terms: Vec<NodeId>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Tensor>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: None,
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Record an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// `activation(input . W + b)` with `W` and `b` living on the tape so
    /// their gradients accumulate.
    pub fn dense(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        activation: Activation,
    ) -> Result<NodeId> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        if x.cols() != w.rows() {
            return Err(NncError::config(format!(
                "dense input width {} does not match layer input dim {}",
                x.cols(),
                w.rows()
            )));
        }
        if b.rows() != 1 || b.cols() != w.cols() {
            return Err(NncError::config(format!(
                "dense bias shape {:?} does not match output width {}",
                b.shape(),
                w.cols()
            )));
        }
        let mut z = linalg::matmul(x, w);
        let bias_row = b.row(0).to_vec();
        for r in 0..z.rows() {
            for (v, bv) in z.row_mut(r).iter_mut().zip(&bias_row) {
                *v = activation.apply(*v + bv);
            }
        }
        Ok(self.push(
            z,
            Op::Dense {
                input,
                weight,
                bias,
                activation,
            },
        ))
    }

    /// `input + noise` where `noise` was already sampled; unit Jacobian.
    pub fn add_noise(&mut self, input: NodeId, noise: &Tensor) -> Result<NodeId> {
        let value = self.value(input).add(noise)?;
        Ok(self.push(value, Op::Noise { input }))
    }

    /// Column-wise concatenation in the given order. A single input passes
    /// through untouched.
    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        match inputs {
            [] => Err(NncError::config("concat of empty input list")),
            [one] => Ok(*one),
            many => {
                let parts: Vec<&Tensor> = many.iter().map(|&id| self.value(id)).collect();
                let value = Tensor::hcat(&parts)?;
                Ok(self.push(
                    value,
                    Op::Concat {
                        inputs: many.to_vec(),
                    },
                ))
            }
        }
    }

    /// Mean over the batch of the per-example binary cross entropy
    /// `-(1/n) sum_i [t log p + (1-t) log (1-p)]`, predictions clamped to
    /// `[BCE_CLAMP, 1-BCE_CLAMP]`.
    pub fn bce_loss(&mut self, pred: NodeId, target: &Tensor) -> Result<NodeId> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(NncError::config(format!(
                "bce shape mismatch: prediction {:?} vs target {:?}",
                p.shape(),
                target.shape()
            )));
        }
        let value = bce_value(p, target);
        Ok(self.push(
            Tensor::scalar(value),
            Op::Bce {
                pred,
                target: target.clone(),
            },
        ))
    }

    /// Batch-mean of the per-example total signal energy `sum_c w_c^2`.
    pub fn power_readout(&mut self, input: NodeId) -> NodeId {
        let value = power_value(self.value(input));
        self.push(Tensor::scalar(value), Op::Power { input })
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let value = self.value(input).map(|x| x * factor);
        self.push(value, Op::Scale { input, factor })
    }

    pub fn sum_scalars(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        if terms.is_empty() {
            return Err(NncError::config("sum of empty scalar list"));
        }
        let mut acc = 0.0;
        for &t in terms {
            acc += self
                .value(t)
                .scalar_value()
                .ok_or_else(|| NncError::usage("sum_scalars on a non-scalar node"))?;
        }
        Ok(self.push(
            Tensor::scalar(acc),
            Op::SumScalars {
                terms: terms.to_vec(),
            },
        ))
    }

    /// Reverse sweep from `loss`. Single use: a second call is an error.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.grads.is_some() {
            return Err(NncError::usage(
                "backward called twice on the same tape; re-run the forward pass",
            ));
        }
        if !self.nodes[loss].value.is_scalar() {
            return Err(NncError::usage("backward requires a scalar loss node"));
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.rows(), n.value.cols()))
            .collect();
        grads[loss].set(0, 0, 1.0);

        for id in (0..=loss).rev() {
            let g = grads[id].clone();
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Dense {
                    input,
                    weight,
                    bias,
                    activation,
                } => {
                    let y = &self.nodes[id].value;
                    let mut gz = g;
                    for (gv, &yv) in gz.as_mut_slice().iter_mut().zip(y.as_slice()) {
                        *gv *= activation.grad_from_output(yv);
                    }
                    let x = &self.nodes[*input].value;
                    let w = &self.nodes[*weight].value;
                    let gw = linalg::matmul_tn(x, &gz);
                    let gb = linalg::col_sums(&gz);
                    let gx = linalg::matmul_nt(&gz, w);
                    grads[*weight].add_assign(&gw);
                    for (b, v) in grads[*bias].as_mut_slice().iter_mut().zip(&gb) {
                        *b += v;
                    }
                    grads[*input].add_assign(&gx);
                }
                Op::Noise { input } => {
                    grads[*input].add_assign(&g);
                }
                Op::Concat { inputs } => {
                    let mut offset = 0;
                    for &inp in inputs.clone().iter() {
                        let w = self.nodes[inp].value.cols();
                        let part = g.slice_cols(offset, offset + w)?;
                        grads[inp].add_assign(&part);
                        offset += w;
                    }
                }
                Op::Bce { pred, target } => {
                    let gs = g.scalar_value().unwrap();
                    let p = &self.nodes[*pred].value;
                    let b = p.rows() as f64;
                    let n = p.cols() as f64;
                    let gp = grads[*pred].as_mut_slice();
                    for (gv, (&pv, &tv)) in gp
                        .iter_mut()
                        .zip(p.as_slice().iter().zip(target.as_slice()))
                    {
                        let pc = pv.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                        *gv += gs * (-(tv / pc) + (1.0 - tv) / (1.0 - pc)) / (b * n);
                    }
                }
                Op::Power { input } => {
                    let gs = g.scalar_value().unwrap();
                    let x = &self.nodes[*input].value;
                    let b = x.rows() as f64;
                    for (gv, &xv) in grads[*input]
                        .as_mut_slice()
                        .iter_mut()
                        .zip(x.as_slice())
                    {
                        *gv += gs * 2.0 * xv / b;
                    }
                }
                Op::Scale { input, factor } => {
                    let scaled = g.map(|x| x * factor);
                    grads[*input].add_assign(&scaled);
                }
                Op::SumScalars { terms } => {
                    let gs = g.scalar_value().unwrap();
                    for &t in terms.clone().iter() {
                        let cur = grads[t].scalar_value().unwrap();
                        grads[t].set(0, 0, cur + gs);
                    }
                }
            }
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Gradient of the last `backward` loss with respect to node `id`.
    pub fn grad(&self, id: NodeId) -> Result<&Tensor> {
        self.grads
            .as_ref()
            .map(|g| &g[id])
            .ok_or_else(|| NncError::usage("grad requested before backward"))
    }
}

fn bce_value(pred: &Tensor, target: &Tensor) -> f64 {
    let n = pred.cols() as f64;
    let mut total = 0.0;
    for r in 0..pred.rows() {
        let mut h = 0.0;
        for (&p, &t) in pred.row(r).iter().zip(target.row(r)) {
            let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            h -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        }
        total += h / n;
    }
    total / pred.rows() as f64
}

fn power_value(x: &Tensor) -> f64 {
    let sum: f64 = x.as_slice().iter().map(|v| v * v).sum();
    sum / x.rows() as f64
}

/// The spec'd standalone op: record `input . W + b` through `layer`,
/// registering the layer's parameters as fresh tape leaves. Returns
/// (output, weight leaf, bias leaf).
pub fn dense_forward(
    tape: &mut Tape,
    input: NodeId,
    layer: &DenseLayer,
) -> Result<(NodeId, NodeId, NodeId)> {
    layer.check()?;
    let w = tape.leaf(layer.weight.clone());
    let b = tape.leaf(Tensor::from_vec(1, layer.bias.len(), layer.bias.clone())?);
    let out = tape.dense(input, w, b, layer.activation)?;
    Ok((out, w, b))
}

/// Sample fresh channel noise and record `input + noise`. Noise is drawn in
/// both training and evaluation: the physical channel is always noisy.
pub fn gaussian_noise_forward(
    tape: &mut Tape,
    input: NodeId,
    spec: &NoiseSpec,
    _mode: Mode,
    stream: u64,
    draw: u64,
) -> Result<NodeId> {
    spec.check()?;
    let (rows, cols) = tape.value(input).shape();
    let noise = sample_noise(rows, cols, spec, stream, draw)?;
    tape.add_noise(input, &noise)
}

/// A `rows x cols` tensor of iid `N(0, variance)` draws for stream
/// `(spec.rng_seed, stream, draw)`.
pub fn sample_noise(
    rows: usize,
    cols: usize,
    spec: &NoiseSpec,
    stream: u64,
    draw: u64,
) -> Result<Tensor> {
    spec.check()?;
    if spec.variance == 0.0 {
        return Ok(Tensor::zeros(rows, cols));
    }
    let normal = Normal::new(0.0, spec.variance.sqrt())
        .map_err(|e| NncError::config(format!("bad noise distribution: {e}")))?;
    let mut rng = stream_rng(spec.rng_seed, stream, draw);
    let data: Vec<f64> = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
    Tensor::from_vec(rows, cols, data)
}

/// Convenience for building N(0, sigma^2) perturbed tensors outside a tape.
pub fn gaussian_tensor(rows: usize, cols: usize, rng: &mut impl Rng, std: f64) -> Tensor {
    let normal = Normal::new(0.0, std).expect("std must be finite and >= 0");
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| normal.sample(rng)).collect(),
    )
    .expect("shape matches generated data")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape, rows: &[Vec<f64>]) -> NodeId {
        tape.leaf(Tensor::from_rows(rows).unwrap())
    }

    #[test]
    fn relu_clamps_negatives_under_identity_weights() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[vec![-1.0, 2.0]]);
        let w = leaf(&mut tape, &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = leaf(&mut tape, &[vec![0.0, 0.0]]);
        let y = tape.dense(x, w, b, Activation::Relu).unwrap();
        assert_eq!(tape.value(y).row(0), &[0.0, 2.0]);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[vec![0.0]]);
        let w = leaf(&mut tape, &[vec![1.0]]);
        let b = leaf(&mut tape, &[vec![0.0]]);
        let y = tape.dense(x, w, b, Activation::Sigmoid).unwrap();
        assert!((tape.value(y).get(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dense_rejects_dimension_mismatch() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[vec![1.0, 2.0, 3.0]]);
        let w = leaf(&mut tape, &[vec![1.0], vec![1.0]]); // 2x1, input is width 3
        let b = leaf(&mut tape, &[vec![0.0]]);
        assert!(matches!(
            tape.dense(x, w, b, Activation::Identity),
            Err(NncError::Config(_))
        ));
    }

    #[test]
    fn zero_variance_noise_is_identity() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[vec![1.5, -2.0]]);
        let spec = NoiseSpec {
            variance: 0.0,
            rng_seed: 1,
        };
        let y = gaussian_noise_forward(&mut tape, x, &spec, Mode::Train, 0, 0).unwrap();
        assert_eq!(tape.value(y).row(0), &[1.5, -2.0]);
    }

    #[test]
    fn negative_variance_rejected() {
        let spec = NoiseSpec {
            variance: -1.0,
            rng_seed: 1,
        };
        assert!(matches!(spec.check(), Err(NncError::Config(_))));
    }

    #[test]
    fn noise_statistics_follow_the_law_of_large_numbers() {
        let spec = NoiseSpec {
            variance: 1e-4,
            rng_seed: 42,
        };
        let n = 1_000_000;
        let noise = sample_noise(1, n, &spec, 0, 0).unwrap();
        let mean: f64 = noise.as_slice().iter().sum::<f64>() / n as f64;
        let var: f64 = noise.as_slice().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
            / n as f64;
        assert!(mean.abs() < 3.0 * 1e-2 / 1e3, "mean {mean}");
        assert!((var - 1e-4).abs() < 1e-4 * 0.01, "variance {var}");
    }

    #[test]
    fn noise_backward_is_identity() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[vec![1.0, 2.0]]);
        let noise = Tensor::from_rows(&[vec![0.3, -0.2]]).unwrap();
        let y = tape.add_noise(x, &noise).unwrap();
        // reduce to a scalar: power readout, then check dL/dx == dL/dy.
        let p = tape.power_readout(y);
        tape.backward(p).unwrap();
        let gy: Vec<f64> = tape.value(y).as_slice().iter().map(|v| 2.0 * v).collect();
        assert_eq!(tape.grad(x).unwrap().as_slice(), gy.as_slice());
    }

    #[test]
    fn concat_forward_and_backward_split() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[vec![1.0, 2.0]]);
        let b = leaf(&mut tape, &[vec![3.0]]);
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.value(c).row(0), &[1.0, 2.0, 3.0]);

        // single input passes through
        let mut t2 = Tape::new();
        let a2 = leaf(&mut t2, &[vec![1.0]]);
        assert_eq!(t2.concat(&[a2]).unwrap(), a2);

        // backward splits at offsets: use scale to make a scalar-friendly path
        let p = tape.power_readout(c);
        tape.backward(p).unwrap();
        assert_eq!(tape.grad(a).unwrap().row(0), &[2.0, 4.0]);
        assert_eq!(tape.grad(b).unwrap().row(0), &[6.0]);
    }

    #[test]
    fn bce_known_values() {
        let mut tape = Tape::new();
        let p = leaf(&mut tape, &[vec![0.5]]);
        let t = Tensor::from_rows(&[vec![1.0]]).unwrap();
        let l = tape.bce_loss(p, &t).unwrap();
        assert!((tape.value(l).scalar_value().unwrap() - 2f64.ln()).abs() < 1e-12);

        let mut tape = Tape::new();
        let p = leaf(&mut tape, &[vec![0.5]]);
        let t = Tensor::from_rows(&[vec![0.5]]).unwrap();
        let l = tape.bce_loss(p, &t).unwrap();
        assert!((tape.value(l).scalar_value().unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_matches_scalar_loop_oracle_on_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let n = 5;
            let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.99)).collect();
            let targ: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            // independent scalar-loop oracle
            let mut expect = 0.0;
            for i in 0..n {
                expect -= targ[i] * pred[i].ln() + (1.0 - targ[i]) * (1.0 - pred[i]).ln();
            }
            expect /= n as f64;

            let mut tape = Tape::new();
            let p = tape.leaf(Tensor::from_vec(1, n, pred.clone()).unwrap());
            let t = Tensor::from_vec(1, n, targ.clone()).unwrap();
            let l = tape.bce_loss(p, &t).unwrap();
            assert!((tape.value(l).scalar_value().unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn bce_finite_at_extreme_predictions() {
        let mut tape = Tape::new();
        let p = leaf(&mut tape, &[vec![0.0, 1.0]]);
        let t = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let l = tape.bce_loss(p, &t).unwrap();
        assert!(tape.value(l).scalar_value().unwrap().is_finite());
    }

    #[test]
    fn power_readout_known_values() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[vec![3.0, 4.0]]);
        let p = tape.power_readout(a);
        assert_eq!(tape.value(p).scalar_value().unwrap(), 25.0);

        let z = tape.leaf(Tensor::zeros(3, 4));
        let p = tape.power_readout(z);
        assert_eq!(tape.value(p).scalar_value().unwrap(), 0.0);

        let m = leaf(&mut tape, &[vec![1.0, 0.0], vec![0.0, 2.0]]);
        let p = tape.power_readout(m);
        assert_eq!(tape.value(p).scalar_value().unwrap(), 2.5);
    }

    #[test]
    fn power_readout_invariant_to_batch_duplication() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[vec![1.0, -2.0], vec![0.5, 3.0]]);
        let dup = leaf(
            &mut tape,
            &[
                vec![1.0, -2.0],
                vec![0.5, 3.0],
                vec![1.0, -2.0],
                vec![0.5, 3.0],
            ],
        );
        let pa = tape.power_readout(a);
        let pd = tape.power_readout(dup);
        assert_eq!(
            tape.value(pa).scalar_value().unwrap(),
            tape.value(pd).scalar_value().unwrap()
        );
    }

    #[test]
    fn scalar_chain_gradient() {
        // loss = w * x with x = [[2]]: dloss/dw = 2
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[vec![2.0]]);
        let w = leaf(&mut tape, &[vec![1.5]]);
        let b = leaf(&mut tape, &[vec![0.0]]);
        let y = tape.dense(x, w, b, Activation::Identity).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(w).unwrap().scalar_value().unwrap(), 2.0);
    }

    #[test]
    fn double_backward_is_an_error() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[vec![2.0]]);
        let p = tape.power_readout(x);
        tape.backward(p).unwrap();
        assert!(matches!(tape.backward(p), Err(NncError::Usage(_))));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[vec![1.0, 2.0]]);
        assert!(matches!(tape.backward(x), Err(NncError::Usage(_))));
    }

    #[test]
    fn dense_matches_matmul_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_vec(2, 3, (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let w = Tensor::from_vec(3, 4, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let layer = DenseLayer {
            weight: w.clone(),
            bias: b.clone(),
            activation: Activation::Identity,
        };
        let (y, _, _) = dense_forward(&mut tape, xid, &layer).unwrap();

        for i in 0..2 {
            for j in 0..4 {
                let mut s = b[j];
                for k in 0..3 {
                    s += x.get(i, k) * w.get(k, j);
                }
                assert!((tape.value(y).get(i, j) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn finite_difference_gradient_check_small_net() {
        // two dense layers + bce + power, checked against central differences
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let b_sz = 3;
        let d_in = 4;
        let hidden = 5;
        let d_out = 2;
        let x = Tensor::from_vec(
            b_sz,
            d_in,
            (0..b_sz * d_in).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let t = Tensor::from_vec(
            b_sz,
            d_out,
            (0..b_sz * d_out).map(|_| rng.gen_range(0.1..0.9)).collect(),
        )
        .unwrap();
        let mut params = vec![
            Tensor::from_vec(
                d_in,
                hidden,
                (0..d_in * hidden).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            )
            .unwrap(),
            Tensor::from_vec(1, hidden, (0..hidden).map(|_| rng.gen_range(-0.1..0.1)).collect())
                .unwrap(),
            Tensor::from_vec(
                hidden,
                d_out,
                (0..hidden * d_out).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            )
            .unwrap(),
            Tensor::from_vec(1, d_out, (0..d_out).map(|_| rng.gen_range(-0.1..0.1)).collect())
                .unwrap(),
        ];

        let eval = |params: &[Tensor], want_grads: bool| -> (f64, Option<Vec<Tensor>>) {
            let mut tape = Tape::new();
            let xid = tape.leaf(x.clone());
            let ids: Vec<NodeId> = params.iter().map(|p| tape.leaf(p.clone())).collect();
            let h = tape.dense(xid, ids[0], ids[1], Activation::Relu).unwrap();
            let y = tape.dense(h, ids[2], ids[3], Activation::Sigmoid).unwrap();
            let l1 = tape.bce_loss(y, &t).unwrap();
            let p = tape.power_readout(h);
            let ps = tape.scale(p, 0.01);
            let loss = tape.sum_scalars(&[l1, ps]).unwrap();
            let lv = tape.value(loss).scalar_value().unwrap();
            if want_grads {
                tape.backward(loss).unwrap();
                let gs = ids.iter().map(|&id| tape.grad(id).unwrap().clone()).collect();
                (lv, Some(gs))
            } else {
                (lv, None)
            }
        };

        let (_, grads) = eval(&params, true);
        let grads = grads.unwrap();
        let h_step = 1e-5;
        for pi in 0..params.len() {
            for idx in 0..params[pi].as_slice().len() {
                let orig = params[pi].as_slice()[idx];
                params[pi].as_mut_slice()[idx] = orig + h_step;
                let (lp, _) = eval(&params, false);
                params[pi].as_mut_slice()[idx] = orig - h_step;
                let (lm, _) = eval(&params, false);
                params[pi].as_mut_slice()[idx] = orig;
                let fd = (lp - lm) / (2.0 * h_step);
                let an = grads[pi].as_slice()[idx];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-4, "param {pi} idx {idx}: analytic {an} vs fd {fd}");
            }
        }
    }
}
