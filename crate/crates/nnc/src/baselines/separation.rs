//! Separate source and network coding: compress at the sources, then account
//! for the minimum transmit power needed to carry the compressed bits through
//! capacity-achieving, error-free channel codes. This is a power accounting
//! model, not a transmission simulation.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use crate::baselines::flow::FlowNetwork;
use crate::error::{NncError, Result};
use crate::topology::{Role, Topology};

/// Per-channel AWGN capacity in bits per use.
pub fn awgn_capacity(power: f64, noise_variance: f64) -> f64 {
    if noise_variance == 0.0 {
        return f64::INFINITY;
    }
    0.5 * (1.0 + power / noise_variance).log2()
}

/// Per-channel power needed to support `capacity` bits per use.
pub fn awgn_power(capacity: f64, noise_variance: f64) -> f64 {
    noise_variance * ((2.0f64).powf(2.0 * capacity) - 1.0)
}

#[derive(Debug, Clone)]
pub struct SeparationSolution {
    /// Per-channel capacity assigned to each link, keyed "from->to".
    pub capacities: BTreeMap<String, f64>,
    /// Sum over links of channels * per-channel power.
    pub total_power: f64,
}

#[derive(Debug, Clone)]
pub struct SeparationReport {
    /// Compressed size of each source's data, in bits.
    pub sizes_bits: BTreeMap<String, f64>,
    /// Per-channel rates R_i = L_i / k.
    pub rates: BTreeMap<String, f64>,
    /// Per-channel link capacities of the minimizing allocation.
    pub capacities: BTreeMap<String, f64>,
    pub total_power: f64,
}

const FEAS_EPS: f64 = 1e-9;
const MAX_SOURCES_FOR_SUBSETS: usize = 16;

/// Indices of links and nodes prepared for repeated max-flow runs.
struct CutProblem<'a> {
    topology: &'a Topology,
    node_index: BTreeMap<&'a str, usize>,
    source_ids: Vec<String>,
    dest_ids: Vec<String>,
    /// One demand per source, aligned with `source_ids`; bits per network use.
    demands: Vec<f64>,
}

impl<'a> CutProblem<'a> {
    fn new(topology: &'a Topology, demands: &BTreeMap<String, f64>) -> Result<Self> {
        topology.ensure_valid()?;
        for (id, d) in demands {
            let node = topology
                .node(id)
                .ok_or_else(|| NncError::config(format!("demand for unknown node {id}")))?;
            if node.role != Role::Source {
                return Err(NncError::config(format!("demand on non-source node {id}")));
            }
            if *d < 0.0 || !d.is_finite() {
                return Err(NncError::config(format!("negative demand at {id}")));
            }
        }
        let sources = topology.sources();
        if sources.len() > MAX_SOURCES_FOR_SUBSETS {
            return Err(NncError::config(
                "separation accounting enumerates source subsets; too many sources",
            ));
        }
        let node_index: BTreeMap<&str, usize> = topology
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();
        let source_ids: Vec<String> = sources.iter().map(|s| s.id.clone()).collect();
        let demands_vec = source_ids
            .iter()
            .map(|id| demands.get(id).copied().unwrap_or(0.0))
            .collect();
        Ok(CutProblem {
            topology,
            node_index,
            source_ids,
            dest_ids: topology.destinations().iter().map(|d| d.id.clone()).collect(),
            demands: demands_vec,
        })
    }

    /// Max flow from the subset of sources selected by `mask` to `dest`,
    /// with per-link capacity capacities[l] * channels[l].
    fn flow(&self, mask: usize, dest: &str, capacities: &[f64]) -> f64 {
        let n = self.topology.nodes.len();
        let super_source = n;
        let mut g = FlowNetwork::new(n + 1);
        for (li, link) in self.topology.links.iter().enumerate() {
            g.add_edge(
                self.node_index[link.from.as_str()],
                self.node_index[link.to.as_str()],
                capacities[li] * link.channels as f64,
            );
        }
        for (si, sid) in self.source_ids.iter().enumerate() {
            if mask & (1 << si) != 0 {
                g.add_edge(super_source, self.node_index[sid.as_str()], f64::INFINITY);
            }
        }
        g.max_flow(super_source, self.node_index[dest])
    }

    fn subset_demand(&self, mask: usize) -> f64 {
        self.demands
            .iter()
            .enumerate()
            .filter(|(si, _)| mask & (1 << si) != 0)
            .map(|(_, d)| d)
            .sum()
    }

    fn subset_names(&self, mask: usize) -> String {
        let names: Vec<&str> = self
            .source_ids
            .iter()
            .enumerate()
            .filter(|(si, _)| mask & (1 << si) != 0)
            .map(|(_, id)| id.as_str())
            .collect();
        names.join(", ")
    }

    /// Every destination must receive every source subset's joint demand
    /// across the corresponding cut.
    fn feasible(&self, capacities: &[f64]) -> bool {
        self.first_violated(capacities).is_none()
    }

    fn first_violated(&self, capacities: &[f64]) -> Option<(usize, String)> {
        let full = (1usize << self.source_ids.len()) - 1;
        for dest in &self.dest_ids {
            for mask in 1..=full {
                let demand = self.subset_demand(mask);
                if demand == 0.0 {
                    continue;
                }
                let flow = self.flow(mask, dest, capacities);
                if flow + FEAS_EPS * (1.0 + demand) < demand {
                    return Some((mask, dest.clone()));
                }
            }
        }
        None
    }
}

/// Minimum total power to deliver `demands` (bits per network use, keyed by
/// source id) to every destination, with per-channel link capacity
/// c = 0.5*log2(1 + P/sigma^2).
///
/// Solved by a deterministic coordinate-descent search over per-link capacity
/// allocations, started from the cheapest uniform allocation.
pub fn separation_power_estimate(
    topology: &Topology,
    demands: &BTreeMap<String, f64>,
) -> Result<f64> {
    Ok(separation_solve(topology, demands)?.total_power)
}

pub fn separation_solve(
    topology: &Topology,
    demands: &BTreeMap<String, f64>,
) -> Result<SeparationSolution> {
    let problem = CutProblem::new(topology, demands)?;
    let n_links = topology.links.len();

    if problem.demands.iter().all(|&d| d == 0.0) {
        return Ok(SeparationSolution {
            capacities: topology.links.iter().map(|l| (l.key(), 0.0)).collect(),
            total_power: 0.0,
        });
    }

    // Structural feasibility: with unit capacities the flow scales linearly,
    // so a zero flow means no routing exists at any power.
    let unit: Vec<f64> = vec![1.0; n_links];
    let full = (1usize << problem.source_ids.len()) - 1;
    let mut uniform_c: f64 = 0.0;
    for dest in &problem.dest_ids {
        for mask in 1..=full {
            let demand = problem.subset_demand(mask);
            if demand == 0.0 {
                continue;
            }
            let unit_flow = problem.flow(mask, dest, &unit);
            if unit_flow <= 0.0 {
                return Err(NncError::config(format!(
                    "infeasible cut: destination {dest} cannot be reached from sources {{{}}} \
                     at any power",
                    problem.subset_names(mask)
                )));
            }
            uniform_c = uniform_c.max(demand / unit_flow);
        }
    }

    // coordinate descent from the feasible uniform start
    let mut caps: Vec<f64> = vec![uniform_c; n_links];
    debug_assert!(problem.feasible(&caps));
    let power_of = |caps: &[f64]| -> f64 {
        caps.iter()
            .zip(&topology.links)
            .map(|(&c, l)| l.channels as f64 * awgn_power(c, l.noise_variance))
            .sum()
    };
    for _pass in 0..64 {
        let mut changed = false;
        for li in 0..n_links {
            let original = caps[li];
            if original == 0.0 {
                continue;
            }
            // shrink this link's capacity as far as feasibility allows
            caps[li] = 0.0;
            if problem.feasible(&caps) {
                changed = true;
                continue;
            }
            let mut lo = 0.0;
            let mut hi = original;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                caps[li] = mid;
                if problem.feasible(&caps) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            caps[li] = hi;
            if hi < original - 1e-12 * (1.0 + original) {
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    Ok(SeparationSolution {
        total_power: power_of(&caps),
        capacities: topology
            .links
            .iter()
            .zip(&caps)
            .map(|(l, &c)| (l.key(), c))
            .collect(),
    })
}

/// Full accounting from per-source compressed sizes in bytes. Requires a
/// homogeneous channel count k so per-channel rates R_i = L_i / k are well
/// defined.
pub fn separation_report(
    topology: &Topology,
    sizes_bytes: &BTreeMap<String, f64>,
) -> Result<SeparationReport> {
    let mut iter = topology.links.iter().map(|l| l.channels);
    let k = iter
        .next()
        .ok_or_else(|| NncError::config("topology has no links"))?;
    if iter.any(|c| c != k) {
        return Err(NncError::config(
            "separation report requires the same channel count on every link",
        ));
    }
    let mut sizes_bits = BTreeMap::new();
    let mut rates = BTreeMap::new();
    let mut demands = BTreeMap::new();
    for s in topology.sources() {
        let bytes = sizes_bytes.get(&s.id).copied().ok_or_else(|| {
            NncError::config(format!("no compressed size supplied for source {}", s.id))
        })?;
        if bytes < 0.0 || !bytes.is_finite() {
            return Err(NncError::config(format!("negative size for source {}", s.id)));
        }
        let bits = bytes * 8.0;
        sizes_bits.insert(s.id.clone(), bits);
        rates.insert(s.id.clone(), bits / k as f64);
        demands.insert(s.id.clone(), bits);
    }
    let solution = separation_solve(topology, &demands)?;
    Ok(SeparationReport {
        sizes_bits,
        rates,
        capacities: solution.capacities,
        total_power: solution.total_power,
    })
}

/// Parse externally measured compressed sizes from a CSV of
/// `image_id,source_node,bytes` rows (optional header) and return the mean
/// bytes per source node.
pub fn load_measured_sizes(path: impl AsRef<Path>) -> Result<BTreeMap<String, f64>> {
    let path = path.as_ref();
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    parse_measured_sizes(&text, &path.display().to_string())
}

pub fn parse_measured_sizes(text: &str, path: &str) -> Result<BTreeMap<String, f64>> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut offset = 0u64;
    for (line_no, line) in text.lines().enumerate() {
        let line_offset = offset;
        offset += line.len() as u64 + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if line_no == 0 && fields.get(2).map(|f| f.parse::<f64>().is_err()) == Some(true) {
            continue; // header row
        }
        if fields.len() != 3 {
            return Err(NncError::Parse {
                path: path.to_string(),
                offset: line_offset,
                message: format!("expected 3 fields (image_id,source_node,bytes), got {}", fields.len()),
            });
        }
        let bytes: f64 = fields[2].parse().map_err(|_| NncError::Parse {
            path: path.to_string(),
            offset: line_offset,
            message: format!("bytes field {:?} is not a number", fields[2]),
        })?;
        if bytes < 0.0 {
            return Err(NncError::Parse {
                path: path.to_string(),
                offset: line_offset,
                message: "negative byte count".to_string(),
            });
        }
        let entry = sums.entry(fields[1].to_string()).or_insert((0.0, 0));
        entry.0 += bytes;
        entry.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(k, (sum, n))| (k, sum / n as f64))
        .collect())
}
