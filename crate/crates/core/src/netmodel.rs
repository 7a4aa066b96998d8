//! Static network representation and admittance-matrix construction.
//!
//! A [`Network`] is the linking grid: nodes are microgrid PCCs, lines are the
//! branches coupling them. Line admittances follow the sign convention
//! `y = g + jb` with `g >= 0` and `b <= 0`. The admittance matrix has
//! diagonal entries equal to the sum of incident line admittances plus the
//! shunt, and off-diagonal entries equal to the negated line admittance, so
//! with zero shunts every row sums to zero.
//!
//! A remark on shunts: loads modeled as constant admittances can equivalently
//! be seen as branches to an augmented ground node; that augmentation commutes
//! with Kron reduction, so we expose shunts directly and never materialize a
//! ground node.

use std::collections::HashSet;

use nalgebra::DMatrix;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Whether a node hosts a controlled interface (active) or only load (passive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Active,
    Passive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineStatus {
    Closed,
    Open,
}

/// Shunt admittance-to-ground at a PCC, per unit. Defaults to zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Shunt {
    pub g: f64,
    pub b: f64,
}

impl Shunt {
    pub fn as_complex(&self) -> Complex<f64> {
        Complex::new(self.g, self.b)
    }

    pub fn is_zero(&self) -> bool {
        self.g == 0.0 && self.b == 0.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub kind: NodeKind,
    /// Terminal voltage magnitude, per unit. Must be positive.
    pub voltage: f64,
    #[serde(default)]
    pub shunt: Shunt,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Line {
    pub i: usize,
    pub k: usize,
    /// Conductance, per unit; convention requires `g >= 0`.
    pub g: f64,
    /// Susceptance, per unit; convention requires `b <= 0`.
    pub b: f64,
    pub status: LineStatus,
}

impl Line {
    pub fn admittance(&self) -> Complex<f64> {
        Complex::new(self.g, self.b)
    }

    pub fn touches(&self, i: usize, k: usize) -> bool {
        (self.i == i && self.k == k) || (self.i == k && self.k == i)
    }
}

/// Per-unit base metadata. Carried for provenance, never used in the math.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Base {
    pub p_mw: f64,
    pub v_kv: f64,
}

impl Default for Base {
    fn default() -> Self {
        Base {
            p_mw: 100.0,
            v_kv: 12.66,
        }
    }
}

/// The static linking grid: nodes, lines, and base metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    pub nodes: Vec<Node>,
    pub lines: Vec<Line>,
    #[serde(default)]
    pub base: Base,
}

/// Per-active-node interface parameters: virtual inertia `m`, damping `d`,
/// and active-power setpoint.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IfaceEntry {
    pub id: usize,
    pub m: f64,
    pub d: f64,
    pub p_set: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InterfaceParams {
    pub entries: Vec<IfaceEntry>,
}

impl InterfaceParams {
    pub fn uniform(n: usize, m: f64, d: f64) -> Self {
        InterfaceParams {
            entries: (0..n)
                .map(|id| IfaceEntry {
                    id,
                    m,
                    d,
                    p_set: 0.0,
                })
                .collect(),
        }
    }

    pub fn get(&self, id: usize) -> Option<&IfaceEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Inertia vector over all `n` nodes, erroring on a node without params.
    pub fn inertia_vector(&self, n: usize) -> Result<Vec<f64>> {
        (0..n)
            .map(|id| {
                self.get(id)
                    .map(|e| e.m)
                    .ok_or(Error::MissingParams { node: id })
            })
            .collect()
    }

    pub fn damping_vector(&self, n: usize) -> Result<Vec<f64>> {
        (0..n)
            .map(|id| {
                self.get(id)
                    .map(|e| e.d)
                    .ok_or(Error::MissingParams { node: id })
            })
            .collect()
    }

    pub fn setpoint_vector(&self, n: usize) -> Result<Vec<f64>> {
        (0..n)
            .map(|id| {
                self.get(id)
                    .map(|e| e.p_set)
                    .ok_or(Error::MissingParams { node: id })
            })
            .collect()
    }
}

impl Network {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    /// Voltage magnitude vector in node order.
    pub fn voltages(&self) -> Vec<f64> {
        self.nodes.iter().map(|nd| nd.voltage).collect()
    }

    /// Checks structural invariants: dense ids, positive voltages, distinct
    /// endpoints, known endpoints, at most one line per unordered pair.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.n();
        let mut seen = vec![false; n];
        for node in &self.nodes {
            if node.id >= n || seen[node.id] {
                return Err(Error::NonDenseIds { id: node.id });
            }
            seen[node.id] = true;
            if node.voltage <= 0.0 {
                return Err(Error::NonPositiveVoltage {
                    node: node.id,
                    value: node.voltage,
                });
            }
        }
        let mut pairs = HashSet::new();
        for line in &self.lines {
            if line.i == line.k {
                return Err(Error::SelfLoop {
                    i: line.i,
                    k: line.k,
                });
            }
            if line.i >= n || line.k >= n {
                return Err(Error::UnknownNode {
                    i: line.i,
                    k: line.k,
                });
            }
            let key = (line.i.min(line.k), line.i.max(line.k));
            if !pairs.insert(key) {
                return Err(Error::DuplicateLine { i: key.0, k: key.1 });
            }
        }
        Ok(())
    }

    /// True if all closed lines have zero conductance.
    pub fn is_lossless(&self) -> bool {
        self.lines
            .iter()
            .filter(|l| l.status == LineStatus::Closed)
            .all(|l| l.g == 0.0)
    }

    /// Connected component label per node, over closed lines only.
    pub fn components(&self) -> Vec<usize> {
        let n = self.n();
        let mut label = vec![usize::MAX; n];
        let mut adj = vec![Vec::new(); n];
        for line in self.lines.iter().filter(|l| l.status == LineStatus::Closed) {
            adj[line.i].push(line.k);
            adj[line.k].push(line.i);
        }
        let mut next = 0;
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            label[start] = next;
            while let Some(u) = stack.pop() {
                for &v in &adj[u] {
                    if label[v] == usize::MAX {
                        label[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn is_connected(&self) -> bool {
        let labels = self.components();
        labels.iter().all(|&l| l == 0) && !labels.is_empty()
    }

    /// Longest shortest-path length over closed lines; `None` if disconnected.
    pub fn diameter(&self) -> Option<usize> {
        let n = self.n();
        if !self.is_connected() {
            return None;
        }
        let mut adj = vec![Vec::new(); n];
        for line in self.lines.iter().filter(|l| l.status == LineStatus::Closed) {
            adj[line.i].push(line.k);
            adj[line.k].push(line.i);
        }
        let mut diameter = 0;
        for start in 0..n {
            let mut dist = vec![usize::MAX; n];
            dist[start] = 0;
            let mut queue = std::collections::VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            diameter = diameter.max(*dist.iter().max().unwrap());
        }
        Some(diameter)
    }
}

/// Complex admittance matrix `Y = G + jB` with polar accessors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    y: DMatrix<Complex<f64>>,
}

impl AdmittanceMatrix {
    pub fn from_matrix(y: DMatrix<Complex<f64>>) -> Self {
        assert_eq!(y.nrows(), y.ncols());
        AdmittanceMatrix { y }
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn entry(&self, i: usize, k: usize) -> Complex<f64> {
        self.y[(i, k)]
    }

    pub fn matrix(&self) -> &DMatrix<Complex<f64>> {
        &self.y
    }

    /// Magnitude `Y_ik` of the polar view.
    pub fn magnitude(&self, i: usize, k: usize) -> f64 {
        self.y[(i, k)].norm()
    }

    /// Angle `theta_ik` of the polar view, radians.
    pub fn angle(&self, i: usize, k: usize) -> f64 {
        self.y[(i, k)].arg()
    }

    pub fn conductance(&self, i: usize, k: usize) -> f64 {
        self.y[(i, k)].re
    }

    pub fn susceptance(&self, i: usize, k: usize) -> f64 {
        self.y[(i, k)].im
    }

    pub fn row_sum(&self, i: usize) -> Complex<f64> {
        (0..self.n()).map(|k| self.y[(i, k)]).sum()
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.y.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Builds the symmetric admittance matrix of `net`. Only closed lines
/// contribute; shunts land on the diagonal.
pub fn build_admittance(net: &Network) -> Result<AdmittanceMatrix> {
    let n = net.n();
    let mut pairs = HashSet::new();
    let mut y = DMatrix::from_element(n, n, Complex::new(0.0, 0.0));
    for node in &net.nodes {
        y[(node.id, node.id)] += node.shunt.as_complex();
    }
    for line in &net.lines {
        let key = (line.i.min(line.k), line.i.max(line.k));
        if !pairs.insert(key) {
            return Err(Error::DuplicateLine { i: key.0, k: key.1 });
        }
        if line.status != LineStatus::Closed {
            continue;
        }
        let adm = line.admittance();
        y[(line.i, line.k)] -= adm;
        y[(line.k, line.i)] -= adm;
        y[(line.i, line.i)] += adm;
        y[(line.k, line.k)] += adm;
    }
    Ok(AdmittanceMatrix { y })
}

/// Returns a copy of `net` with line `(i,k)` set to `status`. The original
/// network is unchanged.
pub fn set_line_status(net: &Network, i: usize, k: usize, status: LineStatus) -> Result<Network> {
    let mut out = net.clone();
    let line = out
        .lines
        .iter_mut()
        .find(|l| l.touches(i, k))
        .ok_or(Error::NoSuchLine { i, k })?;
    line.status = status;
    Ok(out)
}

/// Diagnostic report from [`validate_network`].
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    /// Lines violating `g >= 0, b <= 0`.
    pub sign_violations: Vec<(usize, usize)>,
    pub connected: bool,
    pub component_count: usize,
    /// Nodes with no incident closed line.
    pub dangling_nodes: Vec<usize>,
}

/// Reports convention violations, connectivity over closed lines, and
/// dangling nodes. Never fails; the findings are the output.
pub fn validate_network(net: &Network) -> Diagnostics {
    let sign_violations = net
        .lines
        .iter()
        .filter(|l| l.g < 0.0 || l.b > 0.0)
        .map(|l| (l.i, l.k))
        .collect();
    let labels = net.components();
    let component_count = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut incident = vec![false; net.n()];
    for line in net.lines.iter().filter(|l| l.status == LineStatus::Closed) {
        incident[line.i] = true;
        incident[line.k] = true;
    }
    let dangling_nodes = (0..net.n()).filter(|&i| !incident[i]).collect();
    Diagnostics {
        sign_violations,
        connected: component_count == 1,
        component_count,
        dangling_nodes,
    }
}

/// Convenience constructor used throughout the tests: all nodes active,
/// voltage 1.0, no shunts, all lines closed.
pub fn simple_network(n: usize, lines: &[(usize, usize, f64, f64)]) -> Network {
    Network {
        nodes: (0..n)
            .map(|id| Node {
                id,
                kind: NodeKind::Active,
                voltage: 1.0,
                shunt: Shunt::default(),
            })
            .collect(),
        lines: lines
            .iter()
            .map(|&(i, k, g, b)| Line {
                i,
                k,
                g,
                b,
                status: LineStatus::Closed,
            })
            .collect(),
        base: Base::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_bus() -> Network {
        simple_network(2, &[(0, 1, 0.0, -1.0)])
    }

    #[test]
    fn single_line_admittance() {
        let y = build_admittance(&two_bus()).unwrap();
        assert_abs_diff_eq!(y.entry(0, 0).im, -1.0);
        assert_abs_diff_eq!(y.entry(0, 1).im, 1.0);
        assert_abs_diff_eq!(y.entry(1, 0).im, 1.0);
        assert_abs_diff_eq!(y.entry(1, 1).im, -1.0);
        assert_eq!(y.entry(0, 0).re, 0.0);
        // polar views of the lossless line
        assert_abs_diff_eq!(y.angle(0, 1), std::f64::consts::FRAC_PI_2);
        assert_abs_diff_eq!(y.angle(0, 0), -std::f64::consts::FRAC_PI_2);
    }

    #[test]
    fn all_lines_open_leaves_shunts() {
        let mut net = two_bus();
        net.nodes[0].shunt = Shunt { g: 0.5, b: -0.25 };
        net.lines[0].status = LineStatus::Open;
        let y = build_admittance(&net).unwrap();
        assert_eq!(y.entry(0, 0), Complex::new(0.5, -0.25));
        assert_eq!(y.entry(1, 1), Complex::new(0.0, 0.0));
        assert_eq!(y.entry(0, 1), Complex::new(0.0, 0.0));
    }

    #[test]
    fn chain_row_sums_and_fill() {
        let net = simple_network(3, &[(0, 1, 0.0, -1.0), (1, 2, 0.0, -1.0)]);
        let y = build_admittance(&net).unwrap();
        for i in 0..3 {
            assert!(y.row_sum(i).norm() < 1e-12);
        }
        assert_eq!(y.entry(0, 2), Complex::new(0.0, 0.0));
    }

    #[test]
    fn duplicate_pair_rejected() {
        let mut net = two_bus();
        net.lines.push(Line {
            i: 1,
            k: 0,
            g: 0.0,
            b: -2.0,
            status: LineStatus::Closed,
        });
        match build_admittance(&net) {
            Err(Error::DuplicateLine { i: 0, k: 1 }) => {}
            other => panic!("expected duplicate-line error, got {other:?}"),
        }
    }

    #[test]
    fn open_close_is_involution() {
        let net = two_bus();
        let y0 = build_admittance(&net).unwrap();
        let opened = set_line_status(&net, 0, 1, LineStatus::Open).unwrap();
        let closed = set_line_status(&opened, 1, 0, LineStatus::Closed).unwrap();
        assert_eq!(build_admittance(&closed).unwrap(), y0);
        // original untouched
        assert_eq!(net.lines[0].status, LineStatus::Closed);
        // opened variant is diag(shunts) = 0 here
        let yo = build_admittance(&opened).unwrap();
        assert!(yo.max_abs_entry() == 0.0);
    }

    #[test]
    fn opening_triangle_line_shrinks_b_diagonal() {
        let tri = simple_network(
            3,
            &[(0, 1, 0.0, -1.0), (1, 2, 0.0, -1.0), (0, 2, 0.0, -0.5)],
        );
        let y = build_admittance(&tri).unwrap();
        let cut = set_line_status(&tri, 0, 1, LineStatus::Open).unwrap();
        let yc = build_admittance(&cut).unwrap();
        assert!(yc.susceptance(0, 0).abs() < y.susceptance(0, 0).abs());
        assert_abs_diff_eq!(yc.susceptance(2, 2), y.susceptance(2, 2));
    }

    #[test]
    fn validation_reports() {
        let tri = simple_network(3, &[(0, 1, 0.0, -1.0), (1, 2, 0.0, -1.0), (0, 2, 0.0, -1.0)]);
        assert!(validate_network(&tri).connected);

        let isolated = simple_network(2, &[]);
        let d = validate_network(&isolated);
        assert!(!d.connected);
        assert_eq!(d.component_count, 2);
        assert_eq!(d.dangling_nodes, vec![0, 1]);

        let mut bad = two_bus();
        bad.lines[0].b = 0.5;
        let d = validate_network(&bad);
        assert_eq!(d.sign_violations, vec![(0, 1)]);
    }

    #[test]
    fn unknown_line_errors() {
        assert!(matches!(
            set_line_status(&two_bus(), 0, 5, LineStatus::Open),
            Err(Error::NoSuchLine { .. })
        ));
    }

    #[test]
    fn invariant_checks() {
        let mut net = two_bus();
        net.nodes[1].voltage = -1.0;
        assert!(matches!(
            net.check_invariants(),
            Err(Error::NonPositiveVoltage { node: 1, .. })
        ));
    }
}
