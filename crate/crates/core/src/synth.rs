//! Deterministic generation of random test networks.
//!
//! Line susceptances are drawn uniformly from `[-1, 0]`, conductances as
//! `|b| * U[0, 0.5]`, voltages from `[0.95, 1.05]`, starting angles from
//! `[-0.5, 0.5]`, damping from `[1.5, 3]`, and inertia from `[0.4, 2]`.
//! The topology is a uniform random graph with a target average degree,
//! redrawn until connected. Setpoints are assigned as the active-power flow
//! at the sampled angles, so every generated instance possesses an exact
//! equilibrium at those angles.

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::netmodel::{
    build_admittance, Base, IfaceEntry, InterfaceParams, Line, LineStatus, Network, Node, NodeKind,
    Shunt,
};
use crate::powerflow::{flow_active, Equilibrium};
use crate::{Error, Result};

/// Inclusive sampling interval.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            Uniform::new_inclusive(self.lo, self.hi).sample(rng)
        }
    }
}

/// Generator configuration; defaults mirror the published sampling ranges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    /// Target average node degree of the random graph.
    pub avg_degree: f64,
    /// Line susceptance range (nonpositive).
    pub b: Range,
    /// Conductance as a fraction of |b|.
    pub g_ratio: Range,
    pub voltage: Range,
    /// Starting angle range (rad).
    pub delta: Range,
    pub damping: Range,
    pub inertia: Range,
    /// Force zero conductance on every line.
    pub lossless: bool,
    /// Retry budget for the connectivity rejection loop.
    pub max_retries: usize,
}

impl SynthConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        SynthConfig {
            n,
            seed,
            avg_degree: 4.0,
            b: Range::new(-1.0, 0.0),
            g_ratio: Range::new(0.0, 0.5),
            voltage: Range::new(0.95, 1.05),
            delta: Range::new(-0.5, 0.5),
            damping: Range::new(1.5, 3.0),
            inertia: Range::new(0.4, 2.0),
            lossless: false,
            max_retries: 200,
        }
    }

    pub fn lossless(mut self) -> Self {
        self.lossless = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ranges_ok = [
            &self.b,
            &self.g_ratio,
            &self.voltage,
            &self.delta,
            &self.damping,
            &self.inertia,
        ]
        .iter()
        .all(|r| r.lo <= r.hi);
        let ok = self.n >= 2
            && ranges_ok
            && self.b.hi <= 0.0
            && self.g_ratio.lo >= 0.0
            && self.voltage.lo > 0.0
            && self.damping.lo > 0.0
            && self.inertia.lo > 0.0
            && self.avg_degree > 0.0
            && self.max_retries >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig {
                context: format!("{self:?}"),
            })
        }
    }
}

/// Draws a connected network with interface parameters and the sampled
/// starting angles (packaged as an equilibrium: setpoints are chosen as the
/// flow at those angles, making them exact).
pub fn generate(cfg: &SynthConfig) -> Result<(Network, InterfaceParams, Equilibrium)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n;

    let nodes: Vec<Node> = (0..n)
        .map(|id| Node {
            id,
            kind: NodeKind::Active,
            voltage: cfg.voltage.sample(&mut rng),
            shunt: Shunt::default(),
        })
        .collect();

    let lines = sample_connected_topology(cfg, &mut rng)?;
    let net = Network {
        nodes,
        lines,
        base: Base::default(),
    };

    let delta: Vec<f64> = (0..n).map(|_| cfg.delta.sample(&mut rng)).collect();
    let y = build_admittance(&net)?;
    let p_set = flow_active(&y, &net.voltages(), &delta);

    let entries = (0..n)
        .map(|id| IfaceEntry {
            id,
            m: cfg.inertia.sample(&mut rng),
            d: cfg.damping.sample(&mut rng),
            p_set: p_set[id],
        })
        .collect();

    Ok((net, InterfaceParams { entries }, Equilibrium::at(delta)))
}

/// Uniform random graph at the target average degree, redrawn until
/// connected. A random spanning-tree skeleton keeps the rejection rate low
/// at small sizes without biasing against any particular edge.
fn sample_connected_topology(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Line>> {
    let n = cfg.n;
    let target_edges = (cfg.avg_degree * n as f64 / 2.0).round() as usize;
    let max_edges = n * (n - 1) / 2;
    let target_edges = target_edges.clamp(n - 1, max_edges);

    for _ in 0..cfg.max_retries {
        // random spanning tree: connect each node to a uniformly chosen
        // earlier node in a shuffled order
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(target_edges);
        for idx in 1..n {
            let parent = order[Uniform::new(0, idx).sample(rng)];
            let child = order[idx];
            pairs.push((parent.min(child), parent.max(child)));
        }
        // fill the remaining budget with distinct random pairs
        let mut used: std::collections::HashSet<(usize, usize)> = pairs.iter().copied().collect();
        let node_dist = Uniform::new(0, n);
        let mut attempts = 0;
        while pairs.len() < target_edges && attempts < 50 * target_edges {
            attempts += 1;
            let a = node_dist.sample(rng);
            let b = node_dist.sample(rng);
            if a == b {
                continue;
            }
            let key = (a.min(b), a.max(b));
            if used.insert(key) {
                pairs.push(key);
            }
        }
        pairs.sort_unstable();

        let lines: Vec<Line> = pairs
            .iter()
            .map(|&(i, k)| {
                let b = cfg.b.sample(rng);
                let g = if cfg.lossless {
                    0.0
                } else {
                    b.abs() * cfg.g_ratio.sample(rng)
                };
                Line {
                    i,
                    k,
                    g,
                    b,
                    status: LineStatus::Closed,
                }
            })
            .collect();

        let probe = Network {
            nodes: (0..n)
                .map(|id| Node {
                    id,
                    kind: NodeKind::Active,
                    voltage: 1.0,
                    shunt: Shunt::default(),
                })
                .collect(),
            lines: lines.clone(),
            base: Base::default(),
        };
        if probe.is_connected() {
            return Ok(lines);
        }
    }
    Err(Error::ConnectivityRetryExhausted {
        attempts: cfg.max_retries,
    })
}
