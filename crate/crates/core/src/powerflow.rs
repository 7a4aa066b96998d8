//! Flow-function evaluation, reactive power, and equilibrium solving.
//!
//! The active flow function is
//! `P_i(delta) = sum_k V_i V_k Y_ik cos(theta_ik - delta_i + delta_k)`
//! and an equilibrium is an angle vector with `P_e(delta*) = P_s` and zero
//! frequency deviation. The flow function is translationally invariant, so
//! the solver pins a reference node at angle zero and absorbs network losses
//! there: the mismatch at the reference node is not driven to zero, only the
//! mismatches at all other nodes are.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::netmodel::AdmittanceMatrix;
use crate::spectral::build_laplacian;
use crate::{Error, Result};

/// An equilibrium point: angles, identically-zero frequency deviation, and
/// the residual active-power mismatch the solver achieved.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Equilibrium {
    pub delta: Vec<f64>,
    pub omega: Vec<f64>,
    pub residual: f64,
}

impl Equilibrium {
    pub fn at(delta: Vec<f64>) -> Self {
        let n = delta.len();
        Equilibrium {
            delta,
            omega: vec![0.0; n],
            residual: 0.0,
        }
    }
}

/// Result of testing whether every coupling angle lies in `(0, pi)`.
#[derive(Debug, Clone, Serialize)]
pub struct OmegaCheck {
    /// Coupling angle `phi_ik = theta_ik - delta_i + delta_k` per arc with
    /// nonzero admittance.
    pub arcs: Vec<ArcAngle>,
    pub in_region: bool,
    /// Minimum over arcs of `min(phi, pi - phi)`; positive iff in the region.
    pub worst_margin: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ArcAngle {
    pub i: usize,
    pub k: usize,
    pub phi: f64,
}

/// Active power injection at every node.
pub fn flow_active(y: &AdmittanceMatrix, v: &[f64], delta: &[f64]) -> Vec<f64> {
    let n = y.n();
    assert_eq!(v.len(), n, "voltage vector length");
    assert_eq!(delta.len(), n, "angle vector length");
    (0..n)
        .map(|i| {
            (0..n)
                .map(|k| v[i] * v[k] * y.magnitude(i, k) * (y.angle(i, k) - delta[i] + delta[k]).cos())
                .sum()
        })
        .collect()
}

/// Net outgoing reactive power at every node:
/// `Q_k = -sum_i V_k V_i Y_ki sin(theta_ki - delta_k + delta_i)`.
pub fn flow_reactive(y: &AdmittanceMatrix, v: &[f64], delta: &[f64]) -> Vec<f64> {
    let n = y.n();
    assert_eq!(v.len(), n, "voltage vector length");
    assert_eq!(delta.len(), n, "angle vector length");
    (0..n)
        .map(|k| {
            -(0..n)
                .map(|i| v[k] * v[i] * y.magnitude(k, i) * (y.angle(k, i) - delta[k] + delta[i]).sin())
                .sum::<f64>()
        })
        .collect()
}

/// Coupling-angle region check over all arcs with nonzero admittance.
pub fn check_omega_region(y: &AdmittanceMatrix, delta: &[f64]) -> OmegaCheck {
    let n = y.n();
    assert_eq!(delta.len(), n, "angle vector length");
    let threshold = 1e-14 * y.max_abs_entry().max(1.0);
    let mut arcs = Vec::new();
    let mut worst = f64::INFINITY;
    for i in 0..n {
        for k in 0..n {
            if i == k || y.magnitude(i, k) <= threshold {
                continue;
            }
            let phi = y.angle(i, k) - delta[i] + delta[k];
            worst = worst.min(phi.min(std::f64::consts::PI - phi));
            arcs.push(ArcAngle { i, k, phi });
        }
    }
    if arcs.is_empty() {
        worst = 0.0;
    }
    OmegaCheck {
        in_region: !arcs.is_empty() && worst > 0.0,
        arcs,
        worst_margin: worst,
    }
}

/// Newton solver configuration. Flat start, `1e-10` infinity-norm tolerance,
/// 50 iterations unless overridden.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iterations: usize,
    pub initial: Option<Vec<f64>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-10,
            max_iterations: 50,
            initial: None,
        }
    }
}

/// Solves `P_e(delta) = P_s` for angles with `delta[reference] = 0`, Newton
/// iteration on the reduced system (reference row/column of the flow Jacobian
/// deleted). Losses are absorbed at the reference node.
pub fn solve_equilibrium(
    y: &AdmittanceMatrix,
    v: &[f64],
    p_set: &[f64],
    reference: usize,
    opts: &SolveOptions,
) -> Result<Equilibrium> {
    let n = y.n();
    if v.len() != n || p_set.len() != n {
        return Err(Error::DimensionMismatch {
            context: format!("n={n}, |V|={}, |P_s|={}", v.len(), p_set.len()),
        });
    }
    if reference >= n {
        return Err(Error::DimensionMismatch {
            context: format!("reference node {reference} out of range 0..{n}"),
        });
    }
    let mut delta = match &opts.initial {
        Some(d0) => {
            assert_eq!(d0.len(), n, "initial angle vector length");
            let shift = d0[reference];
            d0.iter().map(|&d| d - shift).collect::<Vec<_>>()
        }
        None => vec![0.0; n],
    };
    let free: Vec<usize> = (0..n).filter(|&i| i != reference).collect();

    let mut residual = mismatch_norm(y, v, p_set, &delta, &free);
    for _ in 0..opts.max_iterations {
        if residual <= opts.tol {
            return Ok(Equilibrium {
                delta,
                omega: vec![0.0; n],
                residual,
            });
        }
        let lap = build_laplacian(y, v, &delta);
        let p = flow_active(y, v, &delta);
        let m = free.len();
        let mut jac = DMatrix::zeros(m, m);
        let mut rhs = DVector::zeros(m);
        for (r, &i) in free.iter().enumerate() {
            rhs[r] = p[i] - p_set[i];
            for (c, &k) in free.iter().enumerate() {
                jac[(r, c)] = lap.entry(i, k);
            }
        }
        let step = solve_reduced(&jac, &rhs)?;
        for (r, &i) in free.iter().enumerate() {
            delta[i] -= step[r];
        }
        residual = mismatch_norm(y, v, p_set, &delta, &free);
    }
    if residual <= opts.tol {
        Ok(Equilibrium {
            delta,
            omega: vec![0.0; n],
            residual,
        })
    } else {
        Err(Error::NoConvergence {
            iterations: opts.max_iterations,
            residual,
        })
    }
}

fn mismatch_norm(
    y: &AdmittanceMatrix,
    v: &[f64],
    p_set: &[f64],
    delta: &[f64],
    free: &[usize],
) -> f64 {
    let p = flow_active(y, v, delta);
    free.iter()
        .map(|&i| (p[i] - p_set[i]).abs())
        .fold(0.0, f64::max)
}

fn solve_reduced(jac: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if jac.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    let lu = jac.clone().full_piv_lu();
    let diag: Vec<f64> = (0..jac.nrows()).map(|i| lu.u()[(i, i)].abs()).collect();
    let largest = diag.iter().copied().fold(0.0, f64::max);
    let smallest = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if largest == 0.0 || smallest <= 1e-12 * largest {
        return Err(Error::SingularJacobian);
    }
    lu.solve(rhs).ok_or(Error::SingularJacobian)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{build_admittance, simple_network};
    use approx::assert_abs_diff_eq;

    fn two_bus_lossless() -> AdmittanceMatrix {
        build_admittance(&simple_network(2, &[(0, 1, 0.0, -1.0)])).unwrap()
    }

    #[test]
    fn lossless_flat_angles_carry_no_power() {
        let y = two_bus_lossless();
        let p = flow_active(&y, &[1.0, 1.0], &[0.3, 0.3]);
        assert_abs_diff_eq!(p[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn two_bus_active_flow_matches_sine() {
        let y = two_bus_lossless();
        let p = flow_active(&y, &[1.0, 1.0], &[0.1, 0.0]);
        assert_abs_diff_eq!(p[0], 0.1_f64.sin(), epsilon = 1e-14);
        assert_abs_diff_eq!(p[1], -(0.1_f64.sin()), epsilon = 1e-14);
    }

    #[test]
    fn translational_invariance() {
        let net = simple_network(3, &[(0, 1, 0.1, -0.9), (1, 2, 0.2, -1.3)]);
        let y = build_admittance(&net).unwrap();
        let v = [1.0, 0.97, 1.02];
        let d = [0.2, -0.1, 0.05];
        let shifted: Vec<f64> = d.iter().map(|x| x + 0.7).collect();
        let p0 = flow_active(&y, &v, &d);
        let p1 = flow_active(&y, &v, &shifted);
        for (a, b) in p0.iter().zip(&p1) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn reactive_flow_examples() {
        let y = two_bus_lossless();
        let q = flow_reactive(&y, &[1.0, 1.0], &[0.0, 0.0]);
        assert_abs_diff_eq!(q[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(q[1], 0.0, epsilon = 1e-14);

        let q = flow_reactive(&y, &[1.0, 1.0], &[0.1, 0.0]);
        assert_abs_diff_eq!(q[0], 1.0 - 0.1_f64.cos(), epsilon = 1e-14);
    }

    #[test]
    fn omega_region_examples() {
        let y = two_bus_lossless();
        let check = check_omega_region(&y, &[0.1, 0.0]);
        assert!(check.in_region);
        let phi01 = check
            .arcs
            .iter()
            .find(|a| a.i == 0 && a.k == 1)
            .unwrap()
            .phi;
        assert_abs_diff_eq!(phi01, std::f64::consts::FRAC_PI_2 - 0.1, epsilon = 1e-14);

        let boundary = check_omega_region(&y, &[std::f64::consts::PI, 0.0]);
        assert!(!boundary.in_region);
    }

    #[test]
    fn trivial_equilibrium() {
        let y = two_bus_lossless();
        let eq = solve_equilibrium(
            &y,
            &[1.0, 1.0],
            &[0.0, 0.0],
            0,
            &SolveOptions::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(eq.delta[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eq.delta[1], 0.0, epsilon = 1e-12);
        assert!(eq.omega.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn two_bus_analytic_equilibrium() {
        let y = two_bus_lossless();
        let p = 0.1_f64.sin();
        let eq = solve_equilibrium(
            &y,
            &[1.0, 1.0],
            &[p, -p],
            1,
            &SolveOptions::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(eq.delta[0], 0.1, epsilon = 1e-10);
        assert_abs_diff_eq!(eq.delta[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn newton_round_trip_recovers_angles() {
        let net = simple_network(4, &[(0, 1, 0.1, -0.8), (1, 2, 0.05, -1.2), (2, 3, 0.0, -0.6), (0, 3, 0.2, -1.0)]);
        let y = build_admittance(&net).unwrap();
        let v = [1.0, 0.96, 1.04, 1.0];
        let target = [0.3, 0.1, -0.2, 0.0];
        let p_set = flow_active(&y, &v, &target);
        let eq = solve_equilibrium(&y, &v, &p_set, 3, &SolveOptions::default()).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(eq.delta[i], target[i], epsilon = 1e-8);
        }
        assert!(eq.residual <= 1e-10);
    }

    #[test]
    fn newton_is_exact_at_the_solution() {
        let y = two_bus_lossless();
        let p = 0.1_f64.sin();
        let opts = SolveOptions {
            max_iterations: 1,
            initial: Some(vec![0.1, 0.0]),
            ..SolveOptions::default()
        };
        let eq = solve_equilibrium(&y, &[1.0, 1.0], &[p, -p], 1, &opts).unwrap();
        assert!(eq.residual <= 1e-12);
    }

    #[test]
    fn degenerate_jacobian_is_an_error() {
        // coupling angle pi/2 away from theta makes the reduced Jacobian zero
        let y = two_bus_lossless();
        let opts = SolveOptions {
            initial: Some(vec![std::f64::consts::FRAC_PI_2, 0.0]),
            max_iterations: 1,
            ..SolveOptions::default()
        };
        let err = solve_equilibrium(&y, &[1.0, 1.0], &[2.0, -2.0], 1, &opts);
        assert!(matches!(err, Err(Error::SingularJacobian)));
    }
}
