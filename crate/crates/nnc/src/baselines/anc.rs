//! Analog network coding: every node amplifies and forwards the sum of its
//! (noisy) inputs with a shared factor, and destinations decode through the
//! known end-to-end linear map.
//!
//! Source pixels are split into slots of one channel-block each; a full image
//! needs ceil(source_dim / k) network uses.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;

use crate::error::{NncError, Result};
use crate::metrics::psnr_from_mse;
use crate::tape::{sample_noise, NoiseSpec};
use crate::tensor::Tensor;
use crate::topology::{Role, Topology};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy)]
pub struct AncConfig {
    /// Shared amplification factor, known to the decoders.
    pub beta: f64,
    /// Pixels carried per network use by each source (= channel count).
    pub pixels_per_slot: usize,
    /// Network uses per image.
    pub slots: usize,
}

impl AncConfig {
    /// Derive the slotting from a homogeneous-channel topology.
    pub fn for_topology(topology: &Topology, beta: f64) -> Result<Self> {
        if beta < 0.0 || !beta.is_finite() {
            return Err(NncError::config("amplification factor must be finite and >= 0"));
        }
        let k = homogeneous_channels(topology)?;
        let max_dim = topology
            .sources()
            .iter()
            .map(|s| s.source_dim)
            .max()
            .ok_or_else(|| NncError::config("topology has no sources"))?;
        let slots = max_dim.div_ceil(k);
        Ok(AncConfig {
            beta,
            pixels_per_slot: k,
            slots,
        })
    }
}

fn homogeneous_channels(topology: &Topology) -> Result<usize> {
    let mut iter = topology.links.iter().map(|l| l.channels);
    let k = iter
        .next()
        .ok_or_else(|| NncError::config("topology has no links"))?;
    if iter.any(|c| c != k) {
        return Err(NncError::config(
            "analog network coding requires the same channel count on every link",
        ));
    }
    Ok(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AncDecoder {
    /// Ordinary least squares through the pseudo-inverse of the end-to-end
    /// map (default).
    LeastSquares,
    /// Linear MMSE using the empirical second moments of the transmitted
    /// slot vectors.
    Lmmse,
}

/// Effective linear system seen by one destination: received = A x + noise,
/// with noise covariance accumulated over every link's injection.
pub struct DestinationMap {
    pub id: String,
    pub a: DMatrix<f64>,
    pub noise_cov: DMatrix<f64>,
    /// Per-link noise-injection coefficients (stacked received dims x k).
    pub noise_coef: Vec<DMatrix<f64>>,
}

/// The end-to-end linear maps of all destinations plus the slot layout.
pub struct LinearNetworkMap {
    pub slot_dim: usize,
    /// (source id, column offset of its block inside a slot vector).
    pub source_blocks: Vec<(String, usize)>,
    pub destinations: Vec<DestinationMap>,
}

/// Pure function of topology and beta: propagate coefficient matrices through
/// the DAG.
pub fn linear_map(topology: &Topology, beta: f64) -> Result<LinearNetworkMap> {
    topology.ensure_valid()?;
    let k = homogeneous_channels(topology)?;
    let sources = topology.sources();
    let slot_dim = k * sources.len();
    let source_blocks: Vec<(String, usize)> = sources
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.clone(), i * k))
        .collect();
    let n_links = topology.links.len();

    // per-link received-signal coefficients: over x_slot and over each link's
    // injected noise
    struct Coef {
        x: DMatrix<f64>,
        noise: Vec<DMatrix<f64>>,
    }
    let zero_coef = |k: usize| Coef {
        x: DMatrix::zeros(k, slot_dim),
        noise: vec![DMatrix::zeros(k, k); n_links],
    };

    let order = topology.topological_order()?;
    let mut received: Vec<Option<Coef>> = (0..n_links).map(|_| None).collect();
    let block_of: HashMap<&str, usize> = source_blocks
        .iter()
        .map(|(id, off)| (id.as_str(), *off))
        .collect();

    for node_id in &order {
        let node = topology.node(node_id).expect("known node");
        // the signal this node forwards on every outgoing link
        let outgoing = topology.links_out(node_id);
        if outgoing.is_empty() {
            continue;
        }
        let forwarded = match node.role {
            Role::Source => {
                let mut c = zero_coef(k);
                let off = block_of[node_id.as_str()];
                for i in 0..k {
                    c.x[(i, off + i)] = beta;
                }
                c
            }
            _ => {
                // amplify the sum of received (noisy) inputs
                let mut c = zero_coef(k);
                for (li, _) in topology.links_in(node_id) {
                    let r = received[li].as_ref().expect("predecessor processed");
                    c.x += &r.x;
                    for (acc, m) in c.noise.iter_mut().zip(&r.noise) {
                        *acc += m;
                    }
                }
                c.x *= beta;
                for m in &mut c.noise {
                    *m *= beta;
                }
                c
            }
        };
        for (li, _) in outgoing {
            let mut c = Coef {
                x: forwarded.x.clone(),
                noise: forwarded.noise.clone(),
            };
            // the link's own additive noise enters with unit coefficient
            c.noise[li] += DMatrix::identity(k, k);
            received[li] = Some(c);
        }
    }

    let mut destinations = Vec::new();
    for dest in topology.destinations() {
        let incoming = topology.links_in(&dest.id);
        let d_in: usize = incoming.len() * k;
        let mut a = DMatrix::zeros(d_in, slot_dim);
        let mut noise_coef = vec![DMatrix::zeros(d_in, k); n_links];
        for (row_block, (li, _)) in incoming.iter().enumerate() {
            let r = received[*li].as_ref().expect("link feeding destination");
            a.view_mut((row_block * k, 0), (k, slot_dim)).copy_from(&r.x);
            for (stacked, m) in noise_coef.iter_mut().zip(&r.noise) {
                stacked.view_mut((row_block * k, 0), (k, k)).copy_from(m);
            }
        }
        let mut noise_cov = DMatrix::zeros(d_in, d_in);
        for (m, link) in noise_coef.iter().zip(&topology.links) {
            noise_cov += m * m.transpose() * link.noise_variance;
        }
        destinations.push(DestinationMap {
            id: dest.id.clone(),
            a,
            noise_cov,
            noise_coef,
        });
    }

    Ok(LinearNetworkMap {
        slot_dim,
        source_blocks,
        destinations,
    })
}

fn ls_decoder(map: &DestinationMap, slot_dim: usize) -> Result<DMatrix<f64>> {
    // Normal equations: dec = (A^T A)^{-1} A^T. A failed Cholesky means the
    // Gram matrix is not positive definite, i.e. A is rank deficient. (An
    // SVD pseudo-inverse would also work in principle, but nalgebra's SVD
    // misconverges on these block-structured maps, whose singular values
    // repeat with multiplicity k.)
    let at = map.a.transpose();
    let gram = &at * &map.a;
    let chol = nalgebra::Cholesky::new(gram).ok_or_else(|| {
        NncError::numeric(format!(
            "end-to-end map at destination {} is rank deficient (fewer than {slot_dim} \
             independent dimensions); least-squares decoding is not invertible",
            map.id
        ))
    })?;
    Ok(chol.solve(&at))
}

fn lmmse_decoder(map: &DestinationMap, rx: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    // E = Rx A^T (A Rx A^T + Sigma)^{-1}
    let s = &map.a * rx * map.a.transpose() + &map.noise_cov;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| NncError::numeric(format!("singular LMMSE system at {}", map.id)))?;
    Ok(rx * map.a.transpose() * s_inv)
}

struct SimulationOutcome {
    reconstructions: BTreeMap<String, Tensor>,
    /// Total transmitted energy per image, averaged over the batch.
    avg_power: f64,
}

fn simulate(
    topology: &Topology,
    config: &AncConfig,
    batch: &Tensor,
    seed: u64,
    decoder: Option<AncDecoder>,
) -> Result<SimulationOutcome> {
    topology.ensure_valid()?;
    let k = homogeneous_channels(topology)?;
    if k != config.pixels_per_slot {
        return Err(NncError::config(
            "pixels_per_slot must equal the per-link channel count",
        ));
    }
    let n = topology.total_source_dim();
    if batch.cols() != n {
        return Err(NncError::config(format!(
            "batch width {} does not match total source dimension {n}",
            batch.cols()
        )));
    }
    if config.slots * config.pixels_per_slot
        < topology.sources().iter().map(|s| s.source_dim).max().unwrap_or(0)
    {
        return Err(NncError::config("slot layout does not cover the source dimension"));
    }
    let b = batch.rows();
    let map = linear_map(topology, config.beta)?;
    let order = topology.topological_order()?;
    let sources = topology.sources();
    let source_col_offset: HashMap<String, usize> = {
        let mut m = HashMap::new();
        let mut off = 0;
        for s in &sources {
            m.insert(s.id.clone(), off);
            off += s.source_dim;
        }
        m
    };
    let source_dims: HashMap<String, usize> =
        sources.iter().map(|s| (s.id.clone(), s.source_dim)).collect();

    let mut recon: BTreeMap<String, Tensor> = map
        .destinations
        .iter()
        .map(|d| (d.id.clone(), Tensor::zeros(b, n)))
        .collect();
    let mut total_energy = 0.0;

    for slot in 0..config.slots {
        // x_slot (b x slot_dim)
        let mut x_slot = Tensor::zeros(b, map.slot_dim);
        for (sid, block_off) in &map.source_blocks {
            let col0 = source_col_offset[sid];
            let dim = source_dims[sid];
            for r in 0..b {
                for i in 0..k {
                    let src_col = slot * k + i;
                    if src_col < dim {
                        x_slot.set(r, block_off + i, batch.get(r, col0 + src_col));
                    }
                }
            }
        }

        // numeric propagation
        let mut link_received: Vec<Option<Tensor>> = vec![None; topology.links.len()];
        for node_id in &order {
            let node = topology.node(node_id).expect("known node");
            let outgoing = topology.links_out(node_id);
            if outgoing.is_empty() {
                continue;
            }
            let forwarded: Tensor = match node.role {
                Role::Source => {
                    let off = map
                        .source_blocks
                        .iter()
                        .find(|(id, _)| id == node_id)
                        .map(|(_, o)| *o)
                        .expect("source block");
                    let block = x_slot.slice_cols(off, off + k)?;
                    block.map(|v| v * config.beta)
                }
                _ => {
                    let mut sum = Tensor::zeros(b, k);
                    for (li, _) in topology.links_in(node_id) {
                        sum.add_assign(link_received[li].as_ref().expect("processed"));
                    }
                    sum.map(|v| v * config.beta)
                }
            };
            for (li, link) in outgoing {
                let energy: f64 = forwarded.as_slice().iter().map(|v| v * v).sum();
                total_energy += energy / b as f64;
                let spec = NoiseSpec {
                    variance: link.noise_variance,
                    rng_seed: seed,
                };
                let noise = sample_noise(b, k, &spec, li as u64, slot as u64)?;
                link_received[li] = Some(forwarded.add(&noise)?);
            }
        }

        // decode per destination (skipped for pure power accounting)
        let Some(decoder) = decoder else { continue };
        for dmap in &map.destinations {
            let incoming = topology.links_in(&dmap.id);
            let stacked: Vec<&Tensor> = incoming
                .iter()
                .map(|(li, _)| link_received[*li].as_ref().expect("processed"))
                .collect();
            let y = Tensor::hcat(&stacked)?;
            let dec = match decoder {
                AncDecoder::LeastSquares => ls_decoder(dmap, map.slot_dim)?,
                AncDecoder::Lmmse => {
                    // empirical slot second moments
                    let xs = DMatrix::from_row_iterator(
                        b,
                        map.slot_dim,
                        x_slot.as_slice().iter().copied(),
                    );
                    let rx = xs.transpose() * &xs / b as f64;
                    lmmse_decoder(dmap, &rx)?
                }
            };
            // x_hat (b x slot_dim) = y (b x d) * dec^T (d x slot_dim)
            let ym = DMatrix::from_row_iterator(b, y.cols(), y.as_slice().iter().copied());
            let xh = ym * dec.transpose();
            let out = recon.get_mut(&dmap.id).unwrap();
            for (sid, block_off) in &map.source_blocks {
                let col0 = source_col_offset[sid];
                let dim = source_dims[sid];
                for r in 0..b {
                    for i in 0..k {
                        let src_col = slot * k + i;
                        if src_col < dim {
                            out.set(r, col0 + src_col, xh[(r, block_off + i)]);
                        }
                    }
                }
            }
        }
    }

    for t in recon.values_mut() {
        *t = t.map(|v| v.clamp(0.0, 1.0));
    }
    Ok(SimulationOutcome {
        reconstructions: recon,
        avg_power: total_energy,
    })
}

/// Amplify-and-forward transmission of a batch; reconstructions are decoded
/// by least squares and clipped to [0, 1].
pub fn anc_forward(
    topology: &Topology,
    config: &AncConfig,
    batch: &Tensor,
    seed: u64,
) -> Result<BTreeMap<String, Tensor>> {
    anc_forward_with_decoder(topology, config, batch, seed, AncDecoder::LeastSquares)
}

pub fn anc_forward_with_decoder(
    topology: &Topology,
    config: &AncConfig,
    batch: &Tensor,
    seed: u64,
    decoder: AncDecoder,
) -> Result<BTreeMap<String, Tensor>> {
    Ok(simulate(topology, config, batch, seed, Some(decoder))?.reconstructions)
}

/// Average per-image total transmitted energy over all links and slots.
/// Relays amplify their received (noisy) inputs, so forwarded noise energy is
/// included.
pub fn anc_power(topology: &Topology, config: &AncConfig, batch: &Tensor, seed: u64) -> Result<f64> {
    Ok(simulate(topology, config, batch, seed, None)?.avg_power)
}

#[derive(Debug, Clone)]
pub struct AncPoint {
    pub beta: f64,
    pub power: f64,
    /// (destination id, pSNR dB) sorted by destination id.
    pub psnr: Vec<(String, f64)>,
}

/// Power-distortion curve over a grid of amplification factors, each point
/// averaged over `repetitions` fresh-noise transmissions of the test batch.
pub fn anc_sweep(
    topology: &Topology,
    betas: &[f64],
    test_batch: &Tensor,
    seed: u64,
    repetitions: usize,
) -> Result<Vec<AncPoint>> {
    if betas.is_empty() {
        return Err(NncError::usage("anc_sweep requires a nonempty beta grid"));
    }
    if repetitions == 0 {
        return Err(NncError::config("repetitions must be >= 1"));
    }
    let run_beta = |&beta: &f64| -> Result<AncPoint> {
        let config = AncConfig::for_topology(topology, beta)?;
        let mut power = 0.0;
        let mut mse_acc: BTreeMap<String, f64> = BTreeMap::new();
        for rep in 0..repetitions {
            let outcome = simulate(
                topology,
                &config,
                test_batch,
                seed.wrapping_add(rep as u64).wrapping_mul(0x9E37),
                Some(AncDecoder::LeastSquares),
            )?;
            power += outcome.avg_power / repetitions as f64;
            for (id, recon) in &outcome.reconstructions {
                let m = crate::metrics::mse(test_batch, recon)?;
                *mse_acc.entry(id.clone()).or_insert(0.0) += m / repetitions as f64;
            }
        }
        Ok(AncPoint {
            beta,
            power,
            psnr: mse_acc
                .into_iter()
                .map(|(id, m)| (id, psnr_from_mse(m, 1.0)))
                .collect(),
        })
    };

    #[cfg(feature = "parallel")]
    let points: Vec<AncPoint> = betas.par_iter().map(run_beta).collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let points: Vec<AncPoint> = betas.iter().map(run_beta).collect::<Result<_>>()?;
    Ok(points)
}
