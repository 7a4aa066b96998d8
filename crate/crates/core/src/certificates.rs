//! Sufficient stability conditions and the per-node stability index.
//!
//! The workhorse is the local condition `-Q_i - V_i^2 B_ii <= d_i^2 / (2 m_i)`
//! evaluated at an equilibrium whose coupling angles all lie in `(0, pi)`.
//! Its index form `S_i = -Q_i - V_i^2 B_ii - d_i^2/(2 m_i)` is nonpositive at
//! every node exactly when the condition holds, and doubles as a stability
//! margin. Three tiers exist:
//!
//! - lossless networks: any equilibrium in the coupling region is stable,
//!   no per-node condition needed;
//! - lossy networks: the local condition above (certificate tier `Thm1c`);
//! - the topology-only bound `sum_k V_i V_k Y_ik <= d_i^2/(2 m_i)` which
//!   dominates it (`Cor1`);
//! - structure-preserving grids with passive internal nodes, certified from
//!   original-network quantities via Kron-reduction monotonicity (`Thm2`).

use serde::Serialize;

use crate::kron::{
    check_assumption1, check_assumption2, kron_reduce, RatioBoundReport, ReductionTrace,
    SignPatternReport,
};
use crate::netmodel::{build_admittance, AdmittanceMatrix, InterfaceParams, Network};
use crate::powerflow::{check_omega_region, flow_reactive, Equilibrium, OmegaCheck};
use crate::{Error, Result};

/// Certificate evaluation for one node.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NodeCertificate {
    pub node: usize,
    /// Left-hand side of the condition (measurement side), per unit.
    pub lhs: f64,
    /// `d^2 / (2 m)`.
    pub rhs: f64,
    /// Stability index `S = lhs - rhs`; nonpositive means satisfied.
    pub index: f64,
    pub satisfied: bool,
    /// Shunt pushed the diagonal susceptance positive, flipping the usual
    /// sign of the `-V^2 B_ii` term.
    pub shunt_sign_flip: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// All line conductances zero and the point is in the coupling region:
    /// stable regardless of damping and inertia.
    LosslessStable,
    Certified,
    Uncertified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Thm1c,
    Cor1,
    Thm2,
}

/// Full certificate report.
#[derive(Debug, Clone, Serialize)]
pub struct CertReport {
    pub nodes: Vec<NodeCertificate>,
    pub verdict: Verdict,
    pub which_condition: Condition,
    /// Set when the equilibrium is outside the coupling region; the report
    /// still carries the indices but refuses to certify.
    pub omega_violation: bool,
    pub worst_margin: f64,
}

impl CertReport {
    pub fn all_satisfied(&self) -> bool {
        self.nodes.iter().all(|c| c.satisfied)
    }

    pub fn is_certified(&self) -> bool {
        matches!(self.verdict, Verdict::LosslessStable | Verdict::Certified)
    }

    pub fn unsatisfied_nodes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|c| !c.satisfied)
            .map(|c| c.node)
            .collect()
    }
}

/// `S = -Q - V^2 B_ii - d^2/(2m)`.
pub fn stability_index(q: f64, v: f64, b_ii: f64, d: f64, m: f64) -> Result<f64> {
    if m <= 0.0 {
        return Err(Error::NonPositiveParam {
            node: 0,
            name: "inertia",
            value: m,
        });
    }
    if d <= 0.0 {
        return Err(Error::NonPositiveParam {
            node: 0,
            name: "damping",
            value: d,
        });
    }
    Ok(-q - v * v * b_ii - d * d / (2.0 * m))
}

/// Shared evaluation: given lhs per node and params, build the per-node
/// certificates with safety margin `margin` (satisfied iff `S <= -margin`).
fn evaluate_nodes(
    node_ids: &[usize],
    lhs: &[f64],
    shunt_flip: &[bool],
    params: &InterfaceParams,
    margin: f64,
) -> Result<Vec<NodeCertificate>> {
    node_ids
        .iter()
        .enumerate()
        .map(|(pos, &id)| {
            let entry = params.get(id).ok_or(Error::MissingParams { node: id })?;
            if entry.m <= 0.0 {
                return Err(Error::NonPositiveParam {
                    node: id,
                    name: "inertia",
                    value: entry.m,
                });
            }
            if entry.d <= 0.0 {
                return Err(Error::NonPositiveParam {
                    node: id,
                    name: "damping",
                    value: entry.d,
                });
            }
            let rhs = entry.d * entry.d / (2.0 * entry.m);
            let index = lhs[pos] - rhs;
            Ok(NodeCertificate {
                node: id,
                lhs: lhs[pos],
                rhs,
                index,
                satisfied: index <= -margin,
                shunt_sign_flip: shunt_flip[pos],
            })
        })
        .collect()
}

/// Evaluates the measurement-based certificate at an equilibrium:
/// `lhs_i = -Q_i - V_i^2 B_ii` from the reactive flows and the admittance
/// diagonal. Lossless networks short-circuit to `LosslessStable` whenever the
/// point is in the coupling region.
pub fn certify_lossy(
    net: &Network,
    eq: &Equilibrium,
    params: &InterfaceParams,
    margin: f64,
) -> Result<CertReport> {
    let y = build_admittance(net)?;
    let v = net.voltages();
    certify_lossy_from_admittance(&y, &v, &eq.delta, net.is_lossless(), params, margin)
}

/// Same as [`certify_lossy`] but on a prebuilt admittance matrix (used for
/// Kron-reduced systems that have no `Network` representation).
pub fn certify_lossy_from_admittance(
    y: &AdmittanceMatrix,
    v: &[f64],
    delta: &[f64],
    lossless: bool,
    params: &InterfaceParams,
    margin: f64,
) -> Result<CertReport> {
    let n = y.n();
    if v.len() != n || delta.len() != n {
        return Err(Error::DimensionMismatch {
            context: format!("n={n}, |V|={}, |delta|={}", v.len(), delta.len()),
        });
    }
    let omega: OmegaCheck = check_omega_region(y, delta);
    let q = flow_reactive(y, v, delta);
    let ids: Vec<usize> = (0..n).collect();
    let lhs: Vec<f64> = (0..n)
        .map(|i| -q[i] - v[i] * v[i] * y.susceptance(i, i))
        .collect();
    let flips: Vec<bool> = (0..n).map(|i| y.susceptance(i, i) > 0.0).collect();
    let nodes = evaluate_nodes(&ids, &lhs, &flips, params, margin)?;
    let all = nodes.iter().all(|c| c.satisfied);
    let verdict = if !omega.in_region {
        Verdict::Uncertified
    } else if lossless {
        Verdict::LosslessStable
    } else if all {
        Verdict::Certified
    } else {
        Verdict::Uncertified
    };
    Ok(CertReport {
        nodes,
        verdict,
        which_condition: Condition::Thm1c,
        omega_violation: !omega.in_region,
        worst_margin: omega.worst_margin,
    })
}

/// Topology-only (equilibrium-independent) certificate:
/// `lhs_i = sum_{k != i} V_i V_k Y_ik`.
pub fn certify_topology(net: &Network, params: &InterfaceParams, margin: f64) -> Result<CertReport> {
    let y = build_admittance(net)?;
    let v = net.voltages();
    let n = y.n();
    let ids: Vec<usize> = (0..n).collect();
    let lhs: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&k| k != i)
                .map(|k| v[i] * v[k] * y.magnitude(i, k))
                .sum()
        })
        .collect();
    let flips = vec![false; n];
    let nodes = evaluate_nodes(&ids, &lhs, &flips, params, margin)?;
    let all = nodes.iter().all(|c| c.satisfied);
    Ok(CertReport {
        nodes,
        verdict: if all {
            Verdict::Certified
        } else {
            Verdict::Uncertified
        },
        which_condition: Condition::Cor1,
        omega_violation: false,
        worst_margin: f64::INFINITY,
    })
}

/// Certificate for a structure-preserving grid with passive internal nodes,
/// evaluated on original-network diagonal susceptances.
#[derive(Debug, Clone, Serialize)]
pub struct StructurePreservingReport {
    /// The certificate with `lhs_k = -Q_k - V_k^2 B_kk` (original `B_kk`).
    pub cert: CertReport,
    pub assumption1: SignPatternReport,
    /// Ratio bounds on the original admittance matrix; together with the
    /// sign pattern this is the hypothesis the reduction argument needs.
    pub assumption2: RatioBoundReport,
    /// Sign pattern held after every elimination step.
    pub assumption1_all_steps: bool,
    /// Ratio bounds held after every elimination step. Diagnostic only: the
    /// bounds are not invariant under reduction (fill-in entries can drift
    /// outside them), so this does not gate the verdict.
    pub assumption2_all_steps: bool,
    pub trace: ReductionTrace,
    /// Cross-check: the same certificate evaluated with the reduced-network
    /// diagonal (`B^r_kk`); the original-network form is the more
    /// conservative of the two.
    pub reduced_cert: CertReport,
}

/// Evaluates the original-network certificate for the Kron-reduced system.
/// `eq` holds angles of the reduced (active-node) system in survivor order.
pub fn certify_structure_preserving(
    full_net: &Network,
    active: &[usize],
    params: &InterfaceParams,
    eq: &Equilibrium,
    nu_min: f64,
    nu_max: f64,
    margin: f64,
) -> Result<StructurePreservingReport> {
    let y_full = build_admittance(full_net)?;
    let n = full_net.n();
    let active_set: std::collections::HashSet<usize> = active.iter().copied().collect();
    let passive: Vec<usize> = (0..n).filter(|i| !active_set.contains(i)).collect();

    let assumption1 = check_assumption1(&y_full);
    let assumption2 = check_assumption2(&y_full, nu_min, nu_max)?;
    let (y_reduced, trace) = kron_reduce(&y_full, &passive, Some((nu_min, nu_max)))?;
    let assumption1_all_steps = trace.steps.iter().all(|s| s.assumption1_ok);
    let assumption2_all_steps = trace
        .steps
        .iter()
        .all(|s| s.assumption2_ok.unwrap_or(true));

    let v_full = full_net.voltages();
    let v_reduced: Vec<f64> = trace.survivors.iter().map(|&id| v_full[id]).collect();
    let m = y_reduced.n();
    if eq.delta.len() != m {
        return Err(Error::DimensionMismatch {
            context: format!(
                "reduced system has {m} nodes but equilibrium carries {} angles",
                eq.delta.len()
            ),
        });
    }

    // reactive power at active nodes is the same in the original and reduced
    // networks for a consistent voltage assignment, so it is computed on the
    // reduced system
    let omega = check_omega_region(&y_reduced, &eq.delta);
    let q = flow_reactive(&y_reduced, &v_reduced, &eq.delta);
    let lhs: Vec<f64> = (0..m)
        .map(|r| {
            let id = trace.survivors[r];
            -q[r] - v_reduced[r] * v_reduced[r] * y_full.susceptance(id, id)
        })
        .collect();
    let flips: Vec<bool> = trace
        .survivors
        .iter()
        .map(|&id| y_full.susceptance(id, id) > 0.0)
        .collect();
    let nodes = evaluate_nodes(&trace.survivors, &lhs, &flips, params, margin)?;
    let hypotheses_hold =
        assumption1.ok() && assumption2.ok() && assumption1_all_steps && omega.in_region;
    let all = nodes.iter().all(|c| c.satisfied);
    let cert = CertReport {
        nodes,
        verdict: if hypotheses_hold && all {
            Verdict::Certified
        } else {
            Verdict::Uncertified
        },
        which_condition: Condition::Thm2,
        omega_violation: !omega.in_region,
        worst_margin: omega.worst_margin,
    };

    let reduced_cert = certify_lossy_from_admittance(
        &y_reduced,
        &v_reduced,
        &eq.delta,
        false,
        &remap_params(params, &trace.survivors)?,
        margin,
    )?;

    Ok(StructurePreservingReport {
        cert,
        assumption1,
        assumption2,
        assumption1_all_steps,
        assumption2_all_steps,
        trace,
        reduced_cert,
    })
}

/// Reindexes interface params from original ids to reduced positions.
fn remap_params(params: &InterfaceParams, survivors: &[usize]) -> Result<InterfaceParams> {
    let entries = survivors
        .iter()
        .enumerate()
        .map(|(pos, &id)| {
            let e = params.get(id).ok_or(Error::MissingParams { node: id })?;
            Ok(crate::netmodel::IfaceEntry { id: pos, ..*e })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InterfaceParams { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{simple_network, IfaceEntry, Line, LineStatus};
    use crate::powerflow::Equilibrium;
    use approx::assert_abs_diff_eq;

    fn params(md: &[(f64, f64)]) -> InterfaceParams {
        InterfaceParams {
            entries: md
                .iter()
                .enumerate()
                .map(|(id, &(m, d))| IfaceEntry {
                    id,
                    m,
                    d,
                    p_set: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn index_basic() {
        assert_abs_diff_eq!(stability_index(0.0, 1.0, 0.0, 1.0, 1.0).unwrap(), -0.5);
        assert!(stability_index(0.0, 1.0, 0.0, 1.0, -1.0).is_err());
        assert!(stability_index(0.0, 1.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn table_case_rhs_arithmetic() {
        // d = 4.62, m = 0.5 gives rhs = 21.3444; a reported index of -0.074
        // then pins the measurement side at 21.2704
        let rhs = 4.62_f64 * 4.62 / (2.0 * 0.5);
        assert_abs_diff_eq!(rhs, 21.3444, epsilon = 1e-10);
        let lhs = rhs - 0.074;
        assert_abs_diff_eq!(lhs, 21.2704, epsilon = 1e-10);
    }

    #[test]
    fn lossless_short_circuit() {
        let net = simple_network(2, &[(0, 1, 0.0, -1.0)]);
        let eq = Equilibrium::at(vec![0.1, 0.0]);
        // tiny damping, huge inertia: per-node condition would fail, the
        // lossless branch certifies anyway
        let report = certify_lossy(&net, &eq, &params(&[(50.0, 0.01), (50.0, 0.01)]), 0.0).unwrap();
        assert_eq!(report.verdict, Verdict::LosslessStable);
    }

    #[test]
    fn lossy_two_bus_certificate() {
        let net = simple_network(2, &[(0, 1, 0.1, -1.0)]);
        let eq = Equilibrium::at(vec![0.0, 0.0]);
        let report = certify_lossy(&net, &eq, &params(&[(0.5, 2.0), (0.5, 2.0)]), 0.0).unwrap();
        assert_eq!(report.verdict, Verdict::Certified);
        for c in &report.nodes {
            assert_abs_diff_eq!(c.rhs, 4.0);
            // oracle: Q_i = -V^2 B_ii - L_ii, so lhs = L_ii = |y| sin(theta)
            // arg(-y) with y = 0.1 - j, so -y = -0.1 + j
            let theta = 1.0_f64.atan2(-0.1);
            let lhs = (0.1_f64 * 0.1 + 1.0).sqrt() * theta.sin();
            assert_abs_diff_eq!(c.lhs, lhs, epsilon = 1e-12);
            assert_abs_diff_eq!(c.lhs, 1.0, epsilon = 1e-12);
            assert!(c.satisfied);
        }
    }

    #[test]
    fn failing_node_listed() {
        let net = simple_network(2, &[(0, 1, 0.1, -1.0)]);
        let eq = Equilibrium::at(vec![0.0, 0.0]);
        // node 1 has a hopeless damping/inertia pair
        let report = certify_lossy(&net, &eq, &params(&[(0.5, 2.0), (10.0, 0.1)]), 0.0).unwrap();
        assert_eq!(report.verdict, Verdict::Uncertified);
        assert_eq!(report.unsatisfied_nodes(), vec![1]);
        assert!(!report.omega_violation);
    }

    #[test]
    fn omega_violation_refuses_to_certify() {
        let net = simple_network(2, &[(0, 1, 0.1, -1.0)]);
        let eq = Equilibrium::at(vec![3.0, 0.0]);
        let report = certify_lossy(&net, &eq, &params(&[(0.5, 5.0), (0.5, 5.0)]), 0.0).unwrap();
        assert!(report.omega_violation);
        assert_eq!(report.verdict, Verdict::Uncertified);
    }

    #[test]
    fn topology_certificate() {
        let net = simple_network(2, &[(0, 1, 0.0, -1.0)]);
        let report = certify_topology(&net, &params(&[(1.0, 2.0), (1.0, 2.0)]), 0.0).unwrap();
        assert_eq!(report.verdict, Verdict::Certified);
        for c in &report.nodes {
            assert_abs_diff_eq!(c.lhs, 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(c.rhs, 2.0);
        }

        // isolated node always satisfies
        let net = simple_network(3, &[(0, 1, 0.0, -1.0)]);
        let report = certify_topology(&net, &params(&[(1.0, 2.0); 3]), 0.0).unwrap();
        assert_abs_diff_eq!(report.nodes[2].lhs, 0.0);
        assert!(report.nodes[2].satisfied);
    }

    #[test]
    fn structure_preserving_no_passive_matches_lossy() {
        let mut net = simple_network(2, &[]);
        net.lines.push(Line {
            i: 0,
            k: 1,
            g: 0.15,
            b: -0.9,
            status: LineStatus::Closed,
        });
        let eq = Equilibrium::at(vec![0.05, 0.0]);
        let p = params(&[(0.5, 2.0), (0.5, 2.0)]);
        let sp =
            certify_structure_preserving(&net, &[0, 1], &p, &eq, 5.0, 7.14, 0.0).unwrap();
        let lossy = certify_lossy(&net, &eq, &p, 0.0).unwrap();
        for (a, b) in sp.cert.nodes.iter().zip(&lossy.nodes) {
            assert_abs_diff_eq!(a.lhs, b.lhs, epsilon = 1e-12);
            assert_abs_diff_eq!(a.rhs, b.rhs, epsilon = 1e-12);
        }
        assert_eq!(sp.cert.verdict, Verdict::Certified);
    }

    #[test]
    fn structure_preserving_chain_implication() {
        // 0 - 1 - 2 with a passive middle node, ratios inside [5, 7.14]
        let mut net = simple_network(3, &[]);
        net.nodes[1].kind = crate::netmodel::NodeKind::Passive;
        net.lines = vec![
            Line {
                i: 0,
                k: 1,
                g: 0.1,
                b: -0.6,
                status: LineStatus::Closed,
            },
            Line {
                i: 1,
                k: 2,
                g: 0.15,
                b: -0.9,
                status: LineStatus::Closed,
            },
        ];
        let p = params(&[(0.5, 2.0), (1.0, 1.0), (0.5, 2.0)]);
        let eq = Equilibrium::at(vec![0.05, 0.0]);
        let sp = certify_structure_preserving(&net, &[0, 2], &p, &eq, 5.0, 7.14, 0.0).unwrap();
        assert!(sp.assumption1.ok());
        assert!(sp.assumption2.ok());
        assert!(sp.assumption1_all_steps);
        // equal-angle lines combine without ratio drift
        assert!(sp.assumption2_all_steps);
        // monotonicity makes the original-network form the conservative one
        if sp.cert.all_satisfied() {
            assert!(sp.reduced_cert.all_satisfied());
        }
        for (a, b) in sp.cert.nodes.iter().zip(&sp.reduced_cert.nodes) {
            assert!(a.lhs >= b.lhs - 1e-12);
        }
    }
}
