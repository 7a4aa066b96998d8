//! Kron reduction of passive nodes from an admittance matrix.
//!
//! Elimination of node `k0` maps `Y_ik -> Y_ik - Y_ik0 Y_k0k / Y_k0k0`, which
//! preserves symmetry and zero row sums. Eliminating a set of passive nodes
//! one at a time equals the block Schur complement with respect to that set,
//! independent of order when every pivot is nonsingular; the default order is
//! descending node index. Loads at passive nodes are carried as shunt
//! admittances before reduction.
//!
//! Under the distribution-grid sign pattern (off-diagonal `G <= 0, B >= 0`,
//! diagonal `G >= 0, B <= 0`) and the susceptance/conductance ratio bounds
//! `nu_min |G_ik| <= |B_ik| <= nu_max |G_ik|` with
//! `nu_max <= sqrt(1 + 2 nu_min^2)`, the sign pattern survives reduction and
//! every surviving diagonal susceptance can only grow: `B^r_kk >= B_kk`.

use nalgebra::DMatrix;
use num_complex::Complex;
use serde::Serialize;

use crate::netmodel::AdmittanceMatrix;
use crate::{Error, Result};

/// Relative pivot threshold below which an elimination step is rejected.
const PIVOT_RELATIVE_TOL: f64 = 1e-12;

/// Sign-pattern report for an admittance matrix.
#[derive(Debug, Clone, Serialize)]
pub struct SignPatternReport {
    /// Entries `(i, k)` violating the pattern (diagonal included).
    pub violations: Vec<(usize, usize)>,
}

impl SignPatternReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Per-line ratio report for the susceptance/conductance bounds.
#[derive(Debug, Clone, Serialize)]
pub struct RatioBoundReport {
    pub nu_min: f64,
    pub nu_max: f64,
    /// Off-diagonal entries `(i, k, |B|/|G| or inf)` outside the bounds.
    pub violations: Vec<(usize, usize, f64)>,
}

impl RatioBoundReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Diagnostics collected at one elimination step.
#[derive(Debug, Clone, Serialize)]
pub struct StepDiagnostics {
    /// Original id of the eliminated node.
    pub eliminated: usize,
    /// Sign pattern of the matrix after this step.
    pub assumption1_ok: bool,
    /// Ratio bounds after this step, when bounds were supplied.
    pub assumption2_ok: Option<bool>,
    /// `(original id, B_kk before, B_kk after)` for every surviving node.
    pub b_diagonal: Vec<(usize, f64, f64)>,
}

/// Ordered log of a full reduction.
#[derive(Debug, Clone, Serialize)]
pub struct ReductionTrace {
    pub eliminated: Vec<usize>,
    /// Original ids of the surviving nodes, in result order.
    pub survivors: Vec<usize>,
    pub steps: Vec<StepDiagnostics>,
}

/// Validates `0 <= nu_min <= nu_max <= sqrt(1 + 2 nu_min^2)`.
///
/// A rounded upper bound is accepted to within 1e-2 absolute so that the
/// conventional pair `(5, 7.14)` (exact bound `sqrt(51) = 7.1414...`) remains
/// usable when quoted to two decimals.
pub fn validate_nu_bounds(nu_min: f64, nu_max: f64) -> Result<()> {
    let limit = (1.0 + 2.0 * nu_min * nu_min).sqrt();
    if nu_min < 0.0 || nu_max < nu_min || nu_max > limit + 1e-2 {
        return Err(Error::InvalidNuBounds { nu_min, nu_max });
    }
    Ok(())
}

/// Largest ratio bound admissible for a given `nu_min`.
pub fn max_admissible_nu(nu_min: f64) -> f64 {
    (1.0 + 2.0 * nu_min * nu_min).sqrt()
}

/// Checks the distribution-grid sign pattern: off-diagonals `G <= 0, B >= 0`,
/// diagonals `G >= 0, B <= 0`.
pub fn check_assumption1(y: &AdmittanceMatrix) -> SignPatternReport {
    let n = y.n();
    let tol = 1e-12 * y.max_abs_entry().max(1.0);
    let mut violations = Vec::new();
    for i in 0..n {
        for k in 0..n {
            let e = y.entry(i, k);
            let bad = if i == k {
                e.re < -tol || e.im > tol
            } else {
                e.re > tol || e.im < -tol
            };
            if bad {
                violations.push((i, k));
            }
        }
    }
    SignPatternReport { violations }
}

/// Checks `nu_min |G_ik| <= |B_ik| <= nu_max |G_ik|` on every off-diagonal
/// entry. `G_ik = 0` forces `B_ik = 0`.
pub fn check_assumption2(y: &AdmittanceMatrix, nu_min: f64, nu_max: f64) -> Result<RatioBoundReport> {
    validate_nu_bounds(nu_min, nu_max)?;
    let n = y.n();
    let tol = 1e-12 * y.max_abs_entry().max(1.0);
    let mut violations = Vec::new();
    for i in 0..n {
        for k in 0..n {
            if i == k {
                continue;
            }
            let g = y.conductance(i, k).abs();
            let b = y.susceptance(i, k).abs();
            if g <= tol {
                if b > tol {
                    violations.push((i, k, f64::INFINITY));
                }
                continue;
            }
            let ratio = b / g;
            if ratio < nu_min - 1e-9 || ratio > nu_max + 1e-9 {
                violations.push((i, k, ratio));
            }
        }
    }
    Ok(RatioBoundReport {
        nu_min,
        nu_max,
        violations,
    })
}

/// Eliminates a single node, returning the `(n-1) x (n-1)` matrix with the
/// remaining rows and columns in their original relative order.
pub fn eliminate_node(y: &AdmittanceMatrix, k0: usize) -> Result<AdmittanceMatrix> {
    let n = y.n();
    assert!(k0 < n, "node index out of range");
    let pivot = y.entry(k0, k0);
    if pivot.norm() <= PIVOT_RELATIVE_TOL * y.max_abs_entry() {
        return Err(Error::SingularPivot {
            node: k0,
            magnitude: pivot.norm(),
        });
    }
    let keep: Vec<usize> = (0..n).filter(|&i| i != k0).collect();
    let mut out = DMatrix::from_element(n - 1, n - 1, Complex::new(0.0, 0.0));
    for (r, &i) in keep.iter().enumerate() {
        for (c, &k) in keep.iter().enumerate() {
            out[(r, c)] = y.entry(i, k) - y.entry(i, k0) * y.entry(k0, k) / pivot;
        }
    }
    Ok(AdmittanceMatrix::from_matrix(out))
}

/// Eliminates every node in `passive` (descending index order), logging
/// per-step diagnostics. When `nu_bounds` is given, the ratio assumption is
/// re-checked after every step.
pub fn kron_reduce(
    y: &AdmittanceMatrix,
    passive: &[usize],
    nu_bounds: Option<(f64, f64)>,
) -> Result<(AdmittanceMatrix, ReductionTrace)> {
    let n = y.n();
    for &p in passive {
        assert!(p < n, "passive node index out of range");
    }
    if let Some((lo, hi)) = nu_bounds {
        validate_nu_bounds(lo, hi)?;
    }
    let active_count = n - passive.len();
    if active_count == 0 {
        return Err(Error::InvalidConfig {
            context: "active set must be nonempty".into(),
        });
    }

    let mut order: Vec<usize> = passive.to_vec();
    order.sort_unstable();
    order.dedup();
    order.reverse();

    // survivors[r] = original id of current row r
    let mut survivors: Vec<usize> = (0..n).collect();
    let mut current = y.clone();
    let mut steps = Vec::new();
    for (step_idx, &node) in order.iter().enumerate() {
        let local = survivors
            .iter()
            .position(|&id| id == node)
            .expect("eliminated node still present");
        let before: Vec<f64> = survivors
            .iter()
            .enumerate()
            .filter(|&(r, _)| r != local)
            .map(|(r, _)| current.susceptance(r, r))
            .collect();
        current = match eliminate_node(&current, local) {
            Ok(m) => m,
            Err(Error::SingularPivot { .. }) => {
                return Err(Error::SingularPassiveBlock {
                    step: step_idx,
                    node,
                })
            }
            Err(other) => return Err(other),
        };
        survivors.remove(local);
        let b_diagonal = survivors
            .iter()
            .enumerate()
            .map(|(r, &id)| (id, before[r], current.susceptance(r, r)))
            .collect();
        steps.push(StepDiagnostics {
            eliminated: node,
            assumption1_ok: check_assumption1(&current).ok(),
            assumption2_ok: match nu_bounds {
                Some((lo, hi)) => Some(check_assumption2(&current, lo, hi)?.ok()),
                None => None,
            },
            b_diagonal,
        });
    }
    Ok((
        current,
        ReductionTrace {
            eliminated: order,
            survivors,
            steps,
        },
    ))
}

/// Per-node comparison of diagonal susceptances across one elimination.
#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    /// `(original id, B_kk, B^r_kk)` for every surviving node.
    pub diagonal: Vec<(usize, f64, f64)>,
    /// Surviving nodes where `B^r_kk < B_kk - 1e-12`.
    pub failures: Vec<usize>,
}

impl MonotonicityReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares diagonal susceptances before and after a single-node elimination.
/// A failure indicates an assumption violation upstream.
pub fn verify_monotonicity(
    y: &AdmittanceMatrix,
    y_reduced: &AdmittanceMatrix,
    eliminated: usize,
) -> MonotonicityReport {
    let n = y.n();
    assert_eq!(y_reduced.n(), n - 1, "expected single-node elimination");
    let keep: Vec<usize> = (0..n).filter(|&i| i != eliminated).collect();
    let mut diagonal = Vec::with_capacity(n - 1);
    let mut failures = Vec::new();
    for (r, &id) in keep.iter().enumerate() {
        let before = y.susceptance(id, id);
        let after = y_reduced.susceptance(r, r);
        if after < before - 1e-12 {
            failures.push(id);
        }
        diagonal.push((id, before, after));
    }
    MonotonicityReport { diagonal, failures }
}
