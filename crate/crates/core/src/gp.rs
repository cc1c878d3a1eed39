//! Intrusive Galerkin-projection reduced-order model.
//!
//! Projecting the vorticity equation onto the POD vorticity modes gives a
//! quadratic system `da_k/dt = B_k + L_k^i a_i + N_k^{ij} a_i a_j` whose
//! coefficients are assembled once with the same discrete operators the
//! full-order solver uses.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::field::{ddx, laplacian, weighted_dot, Field2D};
use crate::fom::{arakawa_jacobian, DIVERGENCE_THRESHOLD};
use crate::pod::PodBasis;

/// Where a coefficient trajectory came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Provenance {
    Gp,
    Lstm { sigma: usize },
    TrueProjection,
}

/// Modal coefficients over time.
#[derive(Debug, Clone, PartialEq)]
pub struct RomTrajectory {
    pub times: Vec<f64>,
    /// One state vector of length `r` per time.
    pub states: Vec<Vec<f64>>,
    pub provenance: Provenance,
    /// Set when integration stopped because the state blew up.
    pub diverged_at: Option<f64>,
}

impl RomTrajectory {
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>, provenance: Provenance) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::Dimension(format!(
                "{} times for {} states",
                times.len(),
                states.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("trajectory times must be strictly increasing".into()));
        }
        if let Some(first) = states.first() {
            let r = first.len();
            if states.iter().any(|s| s.len() != r) {
                return Err(Error::Dimension("ragged trajectory states".into()));
            }
        }
        Ok(Self {
            times,
            states,
            provenance,
            diverged_at: None,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn r(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// Time series of mode `k`.
    pub fn mode(&self, k: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[k]).collect()
    }

    pub fn max_abs_mode(&self, k: usize) -> f64 {
        self.states.iter().fold(0.0_f64, |m, s| m.max(s[k].abs()))
    }
}

/// Precomputed Galerkin coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinTensors {
    pub r: usize,
    pub re: f64,
    pub ro: f64,
    /// `b[k]`
    pub b: Vec<f64>,
    /// `l[k * r + i]`
    pub l: Vec<f64>,
    /// `n[(k * r + i) * r + j]`, `i` indexing vorticity modes and `j`
    /// streamfunction modes.
    pub n: Vec<f64>,
}

impl GalerkinTensors {
    pub fn zeros(r: usize, re: f64, ro: f64) -> Self {
        Self {
            r,
            re,
            ro,
            b: vec![0.0; r],
            l: vec![0.0; r * r],
            n: vec![0.0; r * r * r],
        }
    }

    #[inline]
    pub fn l_at(&self, k: usize, i: usize) -> f64 {
        self.l[k * self.r + i]
    }

    #[inline]
    pub fn n_at(&self, k: usize, i: usize, j: usize) -> f64 {
        self.n[(k * self.r + i) * self.r + j]
    }
}

/// Builds `B`, `L` and `N` from a POD basis.
pub fn assemble_tensors(basis: &PodBasis, re: f64, ro: f64) -> Result<GalerkinTensors> {
    if !(re > 0.0 && ro > 0.0 && re.is_finite() && ro.is_finite()) {
        return Err(Error::Config(format!("re and ro must be positive, got {re} and {ro}")));
    }
    let r = basis.r();
    if basis.theta.len() != r {
        return Err(Error::Dimension(format!(
            "{} vorticity modes but {} streamfunction modes",
            r,
            basis.theta.len()
        )));
    }
    let grid = basis.grid;
    let (wx, wy) = grid.trapezoid_weights();
    let project = |f: &Field2D, k: usize| weighted_dot(&wx, &wy, f.values(), basis.phi[k].values());

    let wbar = &basis.omega_mean;
    let pbar = &basis.psi_mean;
    let mut out = GalerkinTensors::zeros(r, re, ro);

    let mut base = arakawa_jacobian(wbar, pbar)?;
    base.scale(-1.0);
    let forcing = Field2D::from_fn(grid, |_, y| (PI * y).sin());
    let mut linear_src = forcing;
    linear_src.axpy(1.0, &ddx(pbar))?;
    base.axpy(1.0 / ro, &linear_src)?;
    base.axpy(1.0 / re, &laplacian(wbar))?;
    for k in 0..r {
        out.b[k] = project(&base, k);
    }

    for i in 0..r {
        let mut li = arakawa_jacobian(wbar, &basis.theta[i])?;
        li.axpy(1.0, &arakawa_jacobian(&basis.phi[i], pbar)?)?;
        li.scale(-1.0);
        li.axpy(1.0 / ro, &ddx(&basis.theta[i]))?;
        li.axpy(1.0 / re, &laplacian(&basis.phi[i]))?;
        for k in 0..r {
            out.l[k * r + i] = project(&li, k);
        }
    }

    for i in 0..r {
        for j in 0..r {
            let jac = arakawa_jacobian(&basis.phi[i], &basis.theta[j])?;
            for k in 0..r {
                out.n[(k * r + i) * r + j] = -project(&jac, k);
            }
        }
    }

    if out.b.iter().chain(&out.l).chain(&out.n).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Galerkin tensors"));
    }
    Ok(out)
}

/// `da/dt` of the Galerkin system.
pub fn gp_rhs(a: &[f64], t: &GalerkinTensors) -> Vec<f64> {
    let r = t.r;
    debug_assert_eq!(a.len(), r);
    let mut out = t.b.clone();
    for (k, o) in out.iter_mut().enumerate() {
        let lrow = &t.l[k * r..(k + 1) * r];
        let mut acc = 0.0;
        for i in 0..r {
            let nrow = &t.n[(k * r + i) * r..(k * r + i + 1) * r];
            let inner: f64 = nrow.iter().zip(a).map(|(n, aj)| n * aj).sum();
            acc += a[i] * (lrow[i] + inner);
        }
        *o += acc;
    }
    out
}

fn rk3_step(a: &[f64], t: &GalerkinTensors, dt: f64) -> Vec<f64> {
    let k1 = gp_rhs(a, t);
    let a1: Vec<f64> = a.iter().zip(&k1).map(|(x, k)| x + dt * k).collect();
    let k2 = gp_rhs(&a1, t);
    let a2: Vec<f64> = a
        .iter()
        .zip(a1.iter().zip(&k2))
        .map(|(x, (y, k))| 0.75 * x + 0.25 * (y + dt * k))
        .collect();
    let k3 = gp_rhs(&a2, t);
    a.iter()
        .zip(a2.iter().zip(&k3))
        .map(|(x, (y, k))| x / 3.0 + 2.0 / 3.0 * (y + dt * k))
        .collect()
}

/// Default integration step. At desk-scale amplitudes the linearized
/// system has spectral radius up to about 2e3.
pub const DEFAULT_GP_DT: f64 = 1e-4;

/// Integrates the Galerkin system with fixed-step TVD-RK3, recording the
/// state at each of `output_times` (the first being the initial time).
///
/// The last step before each output time is shortened to land on it
/// exactly. If `|a|_inf` exceeds the divergence threshold the trajectory
/// is truncated and `diverged_at` records when.
pub fn integrate_gp(
    a0: &[f64],
    tensors: &GalerkinTensors,
    dt: f64,
    output_times: &[f64],
) -> Result<RomTrajectory> {
    if a0.len() != tensors.r {
        return Err(Error::Dimension(format!(
            "initial state of length {} for {} modes",
            a0.len(),
            tensors.r
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::Config(format!("ROM time step must be positive, got {dt}")));
    }
    let Some(&t0) = output_times.first() else {
        return Err(Error::InsufficientData("no output times".into()));
    };
    if output_times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("output times must be strictly increasing".into()));
    }

    let mut traj = RomTrajectory::new(vec![t0], vec![a0.to_vec()], Provenance::Gp)?;
    let mut a = a0.to_vec();
    let mut t = t0;
    for &target in &output_times[1..] {
        while t < target {
            let h = dt.min(target - t);
            a = rk3_step(&a, tensors, h);
            t = if target - t <= dt { target } else { t + h };
            let max = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if !(max <= DIVERGENCE_THRESHOLD) {
                traj.diverged_at = Some(t);
                return Ok(traj);
            }
        }
        traj.times.push(target);
        traj.states.push(a.clone());
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use crate::fom::{bve_rhs, FomConfig, SnapshotSet};
    use crate::poisson::solve_poisson;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_basis(g: Grid, r: usize, seed: u64) -> PodBasis {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let omega: Vec<Field2D> = (0..r + 3)
            .map(|_| {
                let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
                Field2D::from_fn_dirichlet(g, |x, y| {
                    c[0] * (PI * x).sin() * (PI * y).sin()
                        + c[1] * (2.0 * PI * x).sin() * (0.5 * PI * (y + 1.0)).sin()
                        + c[2] * (3.0 * PI * x).sin() * (1.5 * PI * (y + 1.0)).sin()
                        + c[3] * x * (1.0 - x) * (1.0 - y * y)
                        + c[4] * (PI * x).sin() * (2.0 * PI * y).sin()
                        + c[5] * x * x * (1.0 - x) * (1.0 - y * y) * y
                })
            })
            .collect();
        let set = SnapshotSet::new(g, (0..r + 3).map(|t| t as f64).collect(), omega).unwrap();
        PodBasis::from_snapshots(&set, r).unwrap()
    }

    /// Independent node-by-node quadrature of `<f ; g>` with the trapezoid rule.
    fn quad(f: &Field2D, g: &Field2D) -> f64 {
        let grid = f.grid();
        let mut s = 0.0;
        for i in 0..grid.nx() {
            let wi = if i == 0 || i == grid.nx() - 1 { 0.5 } else { 1.0 };
            for j in 0..grid.ny() {
                let wj = if j == 0 || j == grid.ny() - 1 { 0.5 } else { 1.0 };
                s += wi * wj * grid.dx() * grid.dy() * f.at(i, j) * g.at(i, j);
            }
        }
        s
    }

    #[test]
    fn zero_mean_leaves_only_forcing() {
        let g = Grid::new(17, 33).unwrap();
        let mut basis = random_basis(g, 3, 1);
        basis.omega_mean = Field2D::zeros(g);
        basis.psi_mean = Field2D::zeros(g);
        let ro = 0.01;
        let t = assemble_tensors(&basis, 100.0, ro).unwrap();
        let f = Field2D::from_fn(g, |_, y| (PI * y).sin() / ro);
        for k in 0..3 {
            let want = quad(&f, &basis.phi[k]);
            assert!((t.b[k] - want).abs() <= 1e-10 * want.abs().max(1.0));
        }
    }

    #[test]
    fn y_only_modes_have_no_quadratic_term() {
        let g = Grid::new(17, 33).unwrap();
        let mut basis = random_basis(g, 2, 2);
        for (m, (phi, theta)) in basis.phi.iter_mut().zip(basis.theta.iter_mut()).enumerate() {
            let m = (m + 1) as f64;
            *phi = Field2D::from_fn(g, |_, y| (m * PI * y).sin());
            *theta = Field2D::from_fn(g, |_, y| (m * PI * y).cos());
        }
        let t = assemble_tensors(&basis, 100.0, 0.01).unwrap();
        assert!(t.n.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn entries_match_brute_force_quadrature() {
        let g = Grid::new(33, 65).unwrap();
        let basis = random_basis(g, 3, 3);
        let (re, ro) = (450.0, 3.6e-3);
        let t = assemble_tensors(&basis, re, ro).unwrap();
        let jac = |a: &Field2D, b: &Field2D| arakawa_jacobian(a, b).unwrap();
        let (wbar, pbar) = (&basis.omega_mean, &basis.psi_mean);
        for k in 0..3 {
            let phik = &basis.phi[k];
            let forcing = Field2D::from_fn(g, |_, y| (PI * y).sin());
            let want_b = -quad(&jac(wbar, pbar), phik)
                + (quad(&forcing, phik) + quad(&ddx(pbar), phik)) / ro
                + quad(&laplacian(wbar), phik) / re;
            assert!((t.b[k] - want_b).abs() <= 1e-10 * want_b.abs().max(1.0));
            for i in 0..3 {
                let want_l = -quad(&jac(wbar, &basis.theta[i]), phik)
                    - quad(&jac(&basis.phi[i], pbar), phik)
                    + quad(&ddx(&basis.theta[i]), phik) / ro
                    + quad(&laplacian(&basis.phi[i]), phik) / re;
                assert!((t.l_at(k, i) - want_l).abs() <= 1e-10 * want_l.abs().max(1.0));
                for j in 0..3 {
                    let want_n = -quad(&jac(&basis.phi[i], &basis.theta[j]), phik);
                    assert!((t.n_at(k, i, j) - want_n).abs() <= 1e-10 * want_n.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn rhs_cases() {
        let mut t = GalerkinTensors::zeros(4, 1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for v in t.b.iter_mut().chain(t.l.iter_mut()).chain(t.n.iter_mut()) {
            *v = rng.gen_range(-1.0..1.0);
        }
        assert_eq!(gp_rhs(&[0.0; 4], &t), t.b);

        let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let got = gp_rhs(&a, &t);
        for k in 0..4 {
            let mut want = t.b[k];
            for i in 0..4 {
                want += t.l_at(k, i) * a[i];
                for j in 0..4 {
                    want += t.n_at(k, i, j) * a[i] * a[j];
                }
            }
            assert!((got[k] - want).abs() < 1e-13);
        }

        let mut lin = GalerkinTensors::zeros(3, 1.0, 1.0);
        lin.b = vec![1.0, 2.0, 3.0];
        for k in 0..3 {
            lin.l[k * 3 + k] = -0.5;
        }
        assert_eq!(gp_rhs(&[2.0, 4.0, 6.0], &lin), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn integration_cases() {
        let zero = GalerkinTensors::zeros(2, 1.0, 1.0);
        let times: Vec<f64> = (0..=10).map(|n| n as f64 * 0.1).collect();
        let traj = integrate_gp(&[0.3, -0.7], &zero, 1e-3, &times).unwrap();
        assert!(traj.states.iter().all(|s| s == &vec![0.3, -0.7]));

        let mut decay = GalerkinTensors::zeros(1, 1.0, 1.0);
        decay.l[0] = -1.0;
        let traj = integrate_gp(&[1.0], &decay, 1e-3, &[0.0, 1.0]).unwrap();
        assert_eq!(traj.times, vec![0.0, 1.0]);
        assert!((traj.states[1][0] - (-1.0f64).exp()).abs() < 1e-6);

        // Output times that are not multiples of dt.
        let traj = integrate_gp(&[1.0], &decay, 0.3, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(traj.len(), 3);

        let mut blowup = GalerkinTensors::zeros(1, 1.0, 1.0);
        blowup.n[0] = 1.0;
        let traj = integrate_gp(&[1.0], &blowup, 1e-3, &[0.0, 0.5, 2.0]).unwrap();
        let when = traj.diverged_at.expect("da/dt = a^2 blows up at t = 1");
        assert!((0.99..1.01).contains(&when));
        assert_eq!(traj.len(), 2);
    }

    #[test]
    fn gp_rhs_matches_projected_fom_rhs() {
        let g = Grid::new(33, 65).unwrap();
        let basis = random_basis(g, 3, 5);
        let cfg = FomConfig {
            grid: g,
            ..FomConfig::desk_scale()
        };
        let t = assemble_tensors(&basis, cfg.re, cfg.ro).unwrap();
        let a0 = vec![0.4, -1.1, 0.25];
        let omega = crate::pod::reconstruct_field(&a0, &basis, crate::pod::FieldKind::Omega).unwrap();
        let psi = solve_poisson(&omega).unwrap();
        let full = bve_rhs(&omega, &psi, &cfg).unwrap();
        let got = gp_rhs(&a0, &t);
        for k in 0..3 {
            let want = quad(&full, &basis.phi[k]);
            assert!((got[k] - want).abs() <= 1e-8 * want.abs().max(1.0), "{} vs {want}", got[k]);
        }
    }

    #[test]
    fn sign_flip_equivariance() {
        let g = Grid::new(17, 33).unwrap();
        let basis = random_basis(g, 3, 6);
        let t = assemble_tensors(&basis, 450.0, 3.6e-3).unwrap();
        let mut flipped = basis.clone();
        let flip = [1.0, -1.0, -1.0];
        for k in 0..3 {
            flipped.phi[k].scale(flip[k]);
            flipped.theta[k].scale(flip[k]);
        }
        let tf = assemble_tensors(&flipped, 450.0, 3.6e-3).unwrap();
        let a = [0.5, 0.2, -0.9];
        let af: Vec<f64> = a.iter().zip(flip).map(|(x, s)| x * s).collect();
        let r = gp_rhs(&a, &t);
        let rf = gp_rhs(&af, &tf);
        for k in 0..3 {
            assert!((rf[k] - flip[k] * r[k]).abs() < 1e-9 * r[k].abs().max(1.0));
        }
    }
}
