//! Proper orthogonal decomposition by the method of snapshots.
//!
//! The temporal correlation matrix of the mean-subtracted vorticity
//! snapshots is diagonalized with cyclic Jacobi rotations. Its leading
//! eigenvectors combine the snapshots into orthonormal vorticity modes,
//! streamfunction modes follow from the Poisson relation, and modal
//! coefficients are projections onto the vorticity modes.

use crate::error::{Error, Result};
use crate::field::{weighted_dot, Field2D, Grid};
use crate::fom::SnapshotSet;
use crate::poisson::PoissonSolver;

/// Modes with `lambda_k <= RANK_CUTOFF * lambda_1` are numerically unusable.
pub const RANK_CUTOFF: f64 = 1e-12;

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-9;

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::Dimension(format!(
                    "row of length {} in a {n}x{n} matrix",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Column `k` as a vector.
    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, k)).collect()
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.data
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn off_diagonal_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    s += self.get(i, j).powi(2);
                }
            }
        }
        s.sqrt()
    }
}

/// Mean-subtracted snapshots `omega'(t_n)`.
fn fluctuations(snapshots: &SnapshotSet) -> Vec<Field2D> {
    snapshots
        .omega
        .iter()
        .map(|w| {
            let mut f = w.clone();
            f.axpy(-1.0, &snapshots.omega_mean).expect("snapshot grids validated");
            f
        })
        .collect()
}

/// `A_ij = <omega'_i ; omega'_j>` over the snapshot set.
pub fn correlation_matrix(snapshots: &SnapshotSet) -> Result<SquareMatrix> {
    let n = snapshots.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "correlation matrix needs at least 2 snapshots, got {n}"
        )));
    }
    let fl = fluctuations(snapshots);
    let (wx, wy) = snapshots.grid.trapezoid_weights();
    let mut a = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let v = weighted_dot(&wx, &wy, fl[i].values(), fl[j].values());
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    Ok(a)
}

/// Eigendecomposition of a symmetric matrix by cyclic-by-row Jacobi sweeps
/// with threshold pivoting.
///
/// Returns eigenvalues in descending order and the matching orthonormal
/// eigenvectors as the columns of the second matrix.
pub fn jacobi_eigendecomposition(matrix: &SquareMatrix) -> Result<(Vec<f64>, SquareMatrix)> {
    let n = matrix.n;
    let norm = matrix.frobenius();
    let mut asym = 0.0_f64;
    for i in 0..n {
        for j in i + 1..n {
            asym = asym.max((matrix.get(i, j) - matrix.get(j, i)).abs());
        }
    }
    if asym > SYMMETRY_TOL * norm {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    if matrix.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("eigensolver input"));
    }

    let mut a = matrix.clone();
    // Work on the exactly symmetrized matrix.
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a.get(i, j) + a.get(j, i));
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    let mut v = SquareMatrix::identity(n);

    let mut converged = n < 2 || norm == 0.0;
    for sweep in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        let off = a.off_diagonal_norm();
        if off < JACOBI_TOL * norm {
            converged = true;
            break;
        }
        let threshold = if sweep < 3 {
            0.2 * off / (n * n) as f64
        } else {
            0.0
        };
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a.get(p, q);
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let g = 100.0 * apq.abs();
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a.set(p, q, 0.0);
                    a.set(q, p, 0.0);
                    continue;
                }
                if apq.abs() <= threshold || apq == 0.0 {
                    continue;
                }
                rotate(&mut a, &mut v, p, q);
            }
        }
    }
    if !converged && a.off_diagonal_norm() >= JACOBI_TOL * norm {
        return Err(Error::NoConvergence(format!(
            "Jacobi sweeps did not converge in {JACOBI_MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)).then(i.cmp(&j)));
    let lambdas = order.iter().map(|&k| a.get(k, k)).collect();
    let mut vectors = SquareMatrix::zeros(n);
    for (col, &k) in order.iter().enumerate() {
        for row in 0..n {
            vectors.set(row, col, v.get(row, k));
        }
    }
    Ok((lambdas, vectors))
}

/// Applies the rotation annihilating `a[p][q]` to `a` and accumulates it in `v`.
fn rotate(a: &mut SquareMatrix, v: &mut SquareMatrix, p: usize, q: usize) {
    let n = a.n;
    let apq = a.get(p, q);
    let app = a.get(p, p);
    let aqq = a.get(q, q);
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a.get(k, p);
        let akq = a.get(k, q);
        let np = c * akp - s * akq;
        let nq = s * akp + c * akq;
        a.set(k, p, np);
        a.set(p, k, np);
        a.set(k, q, nq);
        a.set(q, k, nq);
    }
    a.set(p, p, app - t * apq);
    a.set(q, q, aqq + t * apq);
    a.set(p, q, 0.0);
    a.set(q, p, 0.0);
    for k in 0..n {
        let vkp = v.get(k, p);
        let vkq = v.get(k, q);
        v.set(k, p, c * vkp - s * vkq);
        v.set(k, q, s * vkp + c * vkq);
    }
}

/// Number of eigenvalues above the rank cutoff.
pub fn usable_modes(lambdas: &[f64]) -> usize {
    match lambdas.first() {
        Some(&l1) if l1 > 0.0 => lambdas.iter().take_while(|&&l| l > RANK_CUTOFF * l1).count(),
        _ => 0,
    }
}

/// Flips `field` so that its largest-magnitude node is positive; returns
/// whether a flip happened.
fn normalize_sign(field: &mut Field2D) -> bool {
    let mut best = 0.0_f64;
    for &v in field.values() {
        if v.abs() > best.abs() {
            best = v;
        }
    }
    if best < 0.0 {
        field.scale(-1.0);
        true
    } else {
        false
    }
}

/// `phi_k = lambda_k^{-1/2} sum_n V[n][k] omega'(t_n)` for `k < r`.
pub fn build_vorticity_modes(
    snapshots: &SnapshotSet,
    lambdas: &[f64],
    vectors: &SquareMatrix,
    r: usize,
) -> Result<Vec<Field2D>> {
    let n = snapshots.len();
    if vectors.n() != n || lambdas.len() != n {
        return Err(Error::Dimension(format!(
            "eigensystem of size {} for {n} snapshots",
            vectors.n()
        )));
    }
    let usable = usable_modes(lambdas);
    if r > usable {
        return Err(Error::Rank {
            requested: r,
            usable,
        });
    }
    let fl = fluctuations(snapshots);
    let modes = (0..r)
        .map(|k| {
            let mut phi = Field2D::zeros(snapshots.grid);
            for (s, f) in fl.iter().enumerate() {
                phi.axpy(vectors.get(s, k), f).expect("snapshot grids validated");
            }
            phi.scale(1.0 / lambdas[k].sqrt());
            normalize_sign(&mut phi);
            phi
        })
        .collect();
    Ok(modes)
}

/// `theta_k` solving `lap(theta_k) = -phi_k` for each vorticity mode.
pub fn build_streamfunction_modes(phi: &[Field2D]) -> Result<Vec<Field2D>> {
    let Some(first) = phi.first() else {
        return Ok(Vec::new());
    };
    let solver = PoissonSolver::new(*first.grid());
    phi.iter().map(|p| solver.solve(p)).collect()
}

/// `a[k][n] = <omega_n - mean ; phi_k>` for arbitrary fields and mean.
pub fn project_fields(fields: &[Field2D], mean: &Field2D, phi: &[Field2D]) -> Result<Vec<Vec<f64>>> {
    let grid = *mean.grid();
    let (wx, wy) = grid.trapezoid_weights();
    let mut out = vec![Vec::with_capacity(fields.len()); phi.len()];
    for p in phi {
        grid.ensure_same(p.grid())?;
    }
    for f in fields {
        let fl = f.sub(mean)?;
        for (k, p) in phi.iter().enumerate() {
            out[k].push(weighted_dot(&wx, &wy, fl.values(), p.values()));
        }
    }
    Ok(out)
}

/// Modal coefficients of the snapshot set itself, `R x N`.
pub fn project_coefficients(snapshots: &SnapshotSet, phi: &[Field2D]) -> Result<Vec<Vec<f64>>> {
    project_fields(&snapshots.omega, &snapshots.omega_mean, phi)
}

/// Which field a reconstruction produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Omega,
    Psi,
}

/// A truncated POD basis with everything needed to reconstruct fields and
/// to assemble Galerkin operators.
#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    pub grid: Grid,
    /// All eigenvalues of the correlation matrix, descending.
    pub lambdas: Vec<f64>,
    pub phi: Vec<Field2D>,
    pub theta: Vec<Field2D>,
    /// Training coefficients, `a_train[k][n]`.
    pub a_train: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    pub omega_mean: Field2D,
    pub psi_mean: Field2D,
}

impl PodBasis {
    /// Runs the full construction and keeps `r` modes.
    pub fn from_snapshots(snapshots: &SnapshotSet, r: usize) -> Result<Self> {
        let a = correlation_matrix(snapshots)?;
        let (lambdas, vectors) = jacobi_eigendecomposition(&a)?;
        let phi = build_vorticity_modes(snapshots, &lambdas, &vectors, r)?;
        let theta = build_streamfunction_modes(&phi)?;
        let a_train = project_coefficients(snapshots, &phi)?;
        Ok(Self {
            grid: snapshots.grid,
            lambdas,
            phi,
            theta,
            a_train,
            times: snapshots.times.clone(),
            omega_mean: snapshots.omega_mean.clone(),
            psi_mean: snapshots.psi_mean.clone(),
        })
    }

    pub fn r(&self) -> usize {
        self.phi.len()
    }

    /// Training coefficients as time-major state vectors.
    pub fn train_states(&self) -> Vec<Vec<f64>> {
        let n = self.times.len();
        (0..n)
            .map(|t| self.a_train.iter().map(|series| series[t]).collect())
            .collect()
    }

    /// Coefficients of arbitrary fields relative to this basis, time-major.
    pub fn project_states(&self, fields: &[Field2D]) -> Result<Vec<Vec<f64>>> {
        let by_mode = project_fields(fields, &self.omega_mean, &self.phi)?;
        Ok((0..fields.len())
            .map(|t| by_mode.iter().map(|series| series[t]).collect())
            .collect())
    }

    /// Keeps the leading `r` modes.
    pub fn truncate(&self, r: usize) -> Result<Self> {
        if r > self.r() {
            return Err(Error::Rank {
                requested: r,
                usable: self.r(),
            });
        }
        let mut out = self.clone();
        out.phi.truncate(r);
        out.theta.truncate(r);
        out.a_train.truncate(r);
        Ok(out)
    }
}

/// `mean + sum_k a_k mode_k` for the requested field.
pub fn reconstruct_field(a: &[f64], basis: &PodBasis, which: FieldKind) -> Result<Field2D> {
    if a.len() != basis.r() {
        return Err(Error::Dimension(format!(
            "{} coefficients for a basis of {} modes",
            a.len(),
            basis.r()
        )));
    }
    let (mean, modes) = match which {
        FieldKind::Omega => (&basis.omega_mean, &basis.phi),
        FieldKind::Psi => (&basis.psi_mean, &basis.theta),
    };
    let mut out = mean.clone();
    for (ak, m) in a.iter().zip(modes) {
        out.axpy(*ak, m)?;
    }
    Ok(out)
}
