//! Flow Jacobian (Laplacian), system Jacobian, spectra, and the structural
//! checks linking them.
//!
//! The flow Jacobian `L` is the Laplacian of a weighted digraph with arc
//! weights `w_ik = V_i V_k Y_ik sin(theta_ik - delta_i + delta_k)`; it has
//! zero row sums by construction and, at an equilibrium inside the coupling
//! region, nonpositive off-diagonals. The system Jacobian is
//!
//! ```text
//! J = [ 0        I      ]
//!     [ -M^-1 L  -M^-1 D ]
//! ```
//!
//! `lambda` is an eigenvalue of `J` exactly when the quadratic pencil
//! `P(lambda) = lambda^2 M + lambda D + L` is singular, which
//! [`pencil_residual`] measures as a normalized smallest singular value.

use nalgebra::linalg::Schur;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::Serialize;

use crate::netmodel::AdmittanceMatrix;
use crate::{Error, Result};

/// Relative singular-value threshold for kernel dimension estimates.
const KERNEL_RELATIVE_TOL: f64 = 1e-8;

/// Jacobian of the flow function with respect to the angles.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    l: DMatrix<f64>,
}

impl Laplacian {
    pub fn from_matrix(l: DMatrix<f64>) -> Self {
        assert_eq!(l.nrows(), l.ncols());
        Laplacian { l }
    }

    pub fn n(&self) -> usize {
        self.l.nrows()
    }

    pub fn entry(&self, i: usize, k: usize) -> f64 {
        self.l[(i, k)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.l.iter().fold(0.0, |acc, x| acc.max(x.abs()))
    }

    pub fn max_abs_row_sum(&self) -> f64 {
        (0..self.n())
            .map(|i| (0..self.n()).map(|k| self.l[(i, k)]).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }
}

/// The block system Jacobian together with its diagonal inertia and damping.
#[derive(Debug, Clone)]
pub struct SystemJacobian {
    j: DMatrix<f64>,
    inertia: Vec<f64>,
    damping: Vec<f64>,
}

impl SystemJacobian {
    pub fn n(&self) -> usize {
        self.inertia.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.j
    }

    pub fn inertia(&self) -> &[f64] {
        &self.inertia
    }

    pub fn damping(&self) -> &[f64] {
        &self.damping
    }
}

/// Eigenvalues of the system Jacobian with zero-mode and half-plane
/// classification.
#[derive(Debug, Clone, Serialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex<f64>>,
    /// Threshold separating the structural zero mode from stable modes:
    /// `1e-8 * max(1, spectral radius)`.
    pub tol_zero: f64,
    pub zero_count: usize,
    /// True iff every nonzero eigenvalue has strictly negative real part.
    pub lhp: bool,
    /// Largest real part among nonzero eigenvalues (`-inf` when none).
    pub max_real_nonzero: f64,
}

impl Spectrum {
    pub fn is_zero_mode(&self, lambda: Complex<f64>) -> bool {
        lambda.norm() <= self.tol_zero
    }

    /// Nonzero real eigenvalues (imaginary part below the zero threshold).
    pub fn real_nonzero(&self) -> impl Iterator<Item = f64> + '_ {
        self.eigenvalues
            .iter()
            .filter(|z| z.norm() > self.tol_zero && z.im.abs() <= self.tol_zero)
            .map(|z| z.re)
    }

    /// Worst mismatch between eigenvalues with nonzero imaginary part and
    /// their closest conjugate partner.
    pub fn conjugate_pairing_discrepancy(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for z in &self.eigenvalues {
            if z.im.abs() <= self.tol_zero {
                continue;
            }
            let target = z.conj();
            let best = self
                .eigenvalues
                .iter()
                .map(|w| (w - target).norm())
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(best);
        }
        worst
    }
}

/// Builds the flow Jacobian from the admittance matrix, voltage magnitudes,
/// and angles. Rows sum to zero exactly by construction.
pub fn build_laplacian(y: &AdmittanceMatrix, v: &[f64], delta: &[f64]) -> Laplacian {
    let n = y.n();
    assert_eq!(v.len(), n, "voltage vector length");
    assert_eq!(delta.len(), n, "angle vector length");
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        for k in 0..n {
            if i == k {
                continue;
            }
            let w = v[i] * v[k] * y.magnitude(i, k) * (y.angle(i, k) - delta[i] + delta[k]).sin();
            l[(i, k)] = -w;
            l[(i, i)] += w;
        }
    }
    Laplacian { l }
}

/// Assembles the 2n x 2n system Jacobian. Inertia and damping must be
/// strictly positive at every node; the inverse of `M` is applied as a row
/// scaling.
pub fn build_jacobian(lap: &Laplacian, inertia: &[f64], damping: &[f64]) -> Result<SystemJacobian> {
    let n = lap.n();
    if inertia.len() != n || damping.len() != n {
        return Err(Error::DimensionMismatch {
            context: format!("n={n}, |m|={}, |d|={}", inertia.len(), damping.len()),
        });
    }
    for i in 0..n {
        if inertia[i] <= 0.0 {
            return Err(Error::NonPositiveParam {
                node: i,
                name: "inertia",
                value: inertia[i],
            });
        }
        if damping[i] <= 0.0 {
            return Err(Error::NonPositiveParam {
                node: i,
                name: "damping",
                value: damping[i],
            });
        }
    }
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        for k in 0..n {
            j[(n + i, k)] = -lap.entry(i, k) / inertia[i];
        }
        j[(n + i, n + i)] = -damping[i] / inertia[i];
    }
    Ok(SystemJacobian {
        j,
        inertia: inertia.to_vec(),
        damping: damping.to_vec(),
    })
}

/// Classifies a raw eigenvalue list: zero-mode count, half-plane membership,
/// and the largest nonzero real part.
pub fn classify_spectrum(values: &[Complex<f64>]) -> Spectrum {
    let radius = values.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let tol_zero = 1e-8 * radius.max(1.0);
    let zero_count = values.iter().filter(|z| z.norm() <= tol_zero).count();
    let nonzero: Vec<&Complex<f64>> = values.iter().filter(|z| z.norm() > tol_zero).collect();
    let lhp = nonzero.iter().all(|z| z.re < 0.0);
    let max_real_nonzero = nonzero
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    Spectrum {
        eigenvalues: values.to_vec(),
        tol_zero,
        zero_count,
        lhp,
        max_real_nonzero,
    }
}

/// Computes and classifies the full spectrum of the system Jacobian.
pub fn eigenvalues(jac: &SystemJacobian) -> Result<Spectrum> {
    let eigs = complex_eigenvalues(jac.matrix())?;
    Ok(classify_spectrum(&eigs))
}

/// Dense nonsymmetric eigendecomposition via real Schur form.
pub fn complex_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::EigenFailure {
            context: "matrix contains non-finite entries".into(),
        });
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000).ok_or_else(|| {
        Error::EigenFailure {
            context: format!(
                "Schur iteration did not converge (n={}, max |entry| = {:.3e})",
                m.nrows(),
                m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
            ),
        }
    })?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Normalized singularity measure of the quadratic pencil
/// `P(lambda) = lambda^2 M + lambda D + L` at a probe point: smallest
/// singular value divided by the largest. Near zero iff `lambda` is an
/// eigenvalue of the system Jacobian.
pub fn pencil_residual(lap: &Laplacian, inertia: &[f64], damping: &[f64], lambda: Complex<f64>) -> f64 {
    let n = lap.n();
    assert_eq!(inertia.len(), n);
    assert_eq!(damping.len(), n);
    let l2 = lambda * lambda;
    let mut p = DMatrix::from_element(n, n, Complex::new(0.0, 0.0));
    for i in 0..n {
        for k in 0..n {
            p[(i, k)] = Complex::new(lap.entry(i, k), 0.0);
        }
        p[(i, i)] += l2 * inertia[i] + lambda * damping[i];
    }
    let sv = complex_singular_values(&p);
    let largest = sv.iter().copied().fold(0.0, f64::max);
    let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if largest == 0.0 {
        0.0
    } else {
        smallest / largest
    }
}

/// Singular values of a complex matrix via its real 2n x 2n embedding
/// `[[Re, -Im], [Im, Re]]` (each singular value appears twice).
fn complex_singular_values(m: &DMatrix<Complex<f64>>) -> Vec<f64> {
    let n = m.nrows();
    let mut em = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for k in 0..n {
            em[(i, k)] = m[(i, k)].re;
            em[(i, n + k)] = -m[(i, k)].im;
            em[(n + i, k)] = m[(i, k)].im;
            em[(n + i, n + k)] = m[(i, k)].re;
        }
    }
    em.singular_values().iter().copied().collect()
}

/// Report on the M-matrix structure of the flow Jacobian.
#[derive(Debug, Clone, Serialize)]
pub struct MMatrixReport {
    /// Off-diagonal entries that are positive (beyond rounding), i.e. arcs
    /// with negative weight, indicating the point is outside the coupling
    /// region.
    pub sign_violations: Vec<(usize, usize)>,
    pub max_abs_row_sum: f64,
    /// True iff every Gershgorin disc lies in the closed right half plane.
    pub gershgorin_right_half_plane: bool,
    /// Multiplicity of the (numerically) zero eigenvalue of `L`.
    pub zero_eigenvalue_multiplicity: usize,
}

/// Checks the sign pattern, row sums, Gershgorin disc containment, and zero
/// eigenvalue multiplicity of a flow Jacobian.
pub fn m_matrix_diagnostics(lap: &Laplacian) -> Result<MMatrixReport> {
    let n = lap.n();
    let scale = lap.max_abs_entry().max(1.0);
    let tol = 1e-12 * scale;
    let mut sign_violations = Vec::new();
    let mut gershgorin = true;
    for i in 0..n {
        let mut radius = 0.0;
        for k in 0..n {
            if i != k {
                if lap.entry(i, k) > tol {
                    sign_violations.push((i, k));
                }
                radius += lap.entry(i, k).abs();
            }
        }
        // disc centered at L_ii with the off-diagonal radius stays in the
        // closed RHP iff L_ii >= radius
        if lap.entry(i, i) < radius - tol {
            gershgorin = false;
        }
    }
    let eigs = complex_eigenvalues(lap.matrix())?;
    let radius = eigs.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let tol_zero = 1e-8 * radius.max(1.0);
    let zero_eigenvalue_multiplicity = eigs.iter().filter(|z| z.norm() <= tol_zero).count();
    Ok(MMatrixReport {
        sign_violations,
        max_abs_row_sum: lap.max_abs_row_sum(),
        gershgorin_right_half_plane: gershgorin,
        zero_eigenvalue_multiplicity,
    })
}

/// Result of cross-checking the kernels of `J` and `L`.
#[derive(Debug, Clone, Serialize)]
pub struct KernelCheck {
    pub dim_ker_l: usize,
    pub dim_ker_j: usize,
    /// Every null vector `(v1, v2)` of `J` has `v2 ~ 0` and `L v1 ~ 0`.
    pub projection_holds: bool,
    /// `(v, 0)` annihilates `J` for every null vector `v` of `L`.
    pub converse_holds: bool,
    pub multiplicities_equal: bool,
}

impl KernelCheck {
    pub fn all_hold(&self) -> bool {
        self.projection_holds && self.converse_holds && self.multiplicities_equal
    }
}

/// Verifies numerically that the kernel of `L` is the projection of the
/// kernel of `J` onto the angle subspace, and that the two zero-eigenvalue
/// geometric multiplicities agree. Kernel dimensions come from singular-value
/// thresholding at `1e-8` relative.
pub fn kernel_projection_check(jac: &SystemJacobian, lap: &Laplacian) -> KernelCheck {
    let n = lap.n();
    let l_null = null_space(lap.matrix());
    let j_null = null_space(jac.matrix());

    let l_scale = lap.max_abs_entry().max(1.0);
    let j_scale = jac.matrix().iter().fold(1.0f64, |acc, x| acc.max(x.abs()));
    let tol = 1e-6;

    let mut projection_holds = true;
    for v in &j_null {
        let v1 = DVector::from_iterator(n, (0..n).map(|i| v[i]));
        let v2 = DVector::from_iterator(n, (0..n).map(|i| v[n + i]));
        if v2.norm() > tol || (lap.matrix() * &v1).norm() > tol * l_scale {
            projection_holds = false;
        }
    }
    let mut converse_holds = true;
    for v in &l_null {
        let mut lifted = DVector::zeros(2 * n);
        for i in 0..n {
            lifted[i] = v[i];
        }
        if (jac.matrix() * &lifted).norm() > tol * j_scale {
            converse_holds = false;
        }
    }
    KernelCheck {
        dim_ker_l: l_null.len(),
        dim_ker_j: j_null.len(),
        projection_holds,
        converse_holds,
        multiplicities_equal: l_null.len() == j_null.len(),
    }
}

/// Orthonormal basis of the numerical null space of a real square matrix.
fn null_space(m: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let largest = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = KERNEL_RELATIVE_TOL * largest.max(1.0);
    svd.singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= tol)
        .map(|(i, _)| v_t.row(i).transpose())
        .collect()
}
