//! Full-order solver for the forced-dissipative barotropic vorticity
//! equation on the double-gyre basin:
//!
//! ```text
//! d(omega)/dt = -J(omega, psi) + (1/Ro) d(psi)/dx + (1/Re) lap(omega) + (1/Ro) sin(pi y)
//! lap(psi) = -omega
//! ```
//!
//! Walls are free-slip (`psi = omega = 0`). The Jacobian uses Arakawa's
//! energy- and enstrophy-conserving stencil and time integration is the
//! three-stage TVD Runge-Kutta scheme with a Poisson solve per stage.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{Field2D, Grid};
use crate::poisson::PoissonSolver;

/// Vorticity magnitude beyond which a run is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub struct FomConfig {
    pub grid: Grid,
    pub re: f64,
    pub ro: f64,
    pub dt: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub snapshot_t0: f64,
    pub snapshot_t1: f64,
    pub n_snapshots: usize,
    /// Amplitude of an optional seeded interior perturbation added to the
    /// rest state. Zero reproduces a pure spin-up from rest.
    pub seed_perturbation_amplitude: f64,
    pub seed: u64,
}

impl FomConfig {
    /// Reduced-resolution configuration used for desk-scale experiments:
    /// Re = 450, Ro = 3.6e-3 on a 129 x 257 grid, 200 snapshots over [10, 50].
    ///
    /// The step is the largest that survives the spin-up transient, whose
    /// western boundary jet briefly reaches speeds near 150.
    pub fn desk_scale() -> Self {
        Self {
            grid: Grid::new(129, 257).expect("static grid"),
            re: 450.0,
            ro: 3.6e-3,
            dt: 1.0e-4,
            t_start: 0.0,
            t_end: 100.0,
            snapshot_t0: 10.0,
            snapshot_t1: 50.0,
            n_snapshots: 200,
            seed_perturbation_amplitude: 0.0,
            seed: 0,
        }
    }

    /// The full-resolution run: 256 x 512 grid, 400 snapshots over [10, 50].
    pub fn full_scale() -> Self {
        Self {
            grid: Grid::new(256, 512).expect("static grid"),
            dt: 2.5e-5,
            n_snapshots: 400,
            ..Self::desk_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.re > 0.0) {
            return bad(format!("re must be positive, got {}", self.re));
        }
        if !(self.ro > 0.0) {
            return bad(format!("ro must be positive, got {}", self.ro));
        }
        if !(self.dt >= 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be finite and non-negative, got {}", self.dt));
        }
        if !(self.t_start < self.snapshot_t0
            && self.snapshot_t0 < self.snapshot_t1
            && self.snapshot_t1 <= self.t_end)
        {
            return bad(format!(
                "require t_start < snapshot_t0 < snapshot_t1 <= t_end, got {} / {} / {} / {}",
                self.t_start, self.snapshot_t0, self.snapshot_t1, self.t_end
            ));
        }
        if self.n_snapshots < 2 {
            return bad(format!("n_snapshots must be at least 2, got {}", self.n_snapshots));
        }
        if !self.seed_perturbation_amplitude.is_finite() {
            return bad("seed_perturbation_amplitude must be finite".into());
        }
        Ok(())
    }

    pub fn snapshot_interval(&self) -> f64 {
        (self.snapshot_t1 - self.snapshot_t0) / (self.n_snapshots - 1) as f64
    }

    /// Training sample times: `n_snapshots` uniform points on `[t0, t1]`.
    pub fn snapshot_times(&self) -> Vec<f64> {
        let h = self.snapshot_interval();
        (0..self.n_snapshots)
            .map(|n| {
                if n + 1 == self.n_snapshots {
                    self.snapshot_t1
                } else {
                    self.snapshot_t0 + n as f64 * h
                }
            })
            .collect()
    }

    /// Training times continued at the same interval up to `t_end`.
    pub fn extended_times(&self) -> Vec<f64> {
        let h = self.snapshot_interval();
        let mut times = self.snapshot_times();
        let mut n = self.n_snapshots;
        loop {
            let t = self.snapshot_t0 + n as f64 * h;
            if t > self.t_end + 1e-9 * h {
                break;
            }
            times.push(t);
            n += 1;
        }
        times
    }
}

/// Ordered vorticity snapshots on one grid together with their mean fields.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub grid: Grid,
    pub times: Vec<f64>,
    pub omega: Vec<Field2D>,
    pub omega_mean: Field2D,
    pub psi_mean: Field2D,
}

impl SnapshotSet {
    /// Builds the set, computing the time-averaged vorticity and the matching
    /// streamfunction `lap(psi_mean) = -omega_mean`.
    pub fn new(grid: Grid, times: Vec<f64>, omega: Vec<Field2D>) -> Result<Self> {
        if times.len() != omega.len() {
            return Err(Error::Dimension(format!(
                "{} times for {} snapshots",
                times.len(),
                omega.len()
            )));
        }
        if omega.is_empty() {
            return Err(Error::InsufficientData("snapshot set is empty".into()));
        }
        let mut mean = Field2D::zeros(grid);
        for w in &omega {
            grid.ensure_same(w.grid())?;
            mean.axpy(1.0, w)?;
        }
        mean.scale(1.0 / omega.len() as f64);
        let psi_mean = PoissonSolver::new(grid).solve(&mean)?;
        Ok(Self {
            grid,
            times,
            omega,
            omega_mean: mean,
            psi_mean,
        })
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    /// Keeps the first `n` snapshots and recomputes the means.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        Self::new(self.grid, self.times[..n].to_vec(), self.omega[..n].to_vec())
    }
}

/// Three adjacent x-rows of a field: west (`i - 1`), centre, east (`i + 1`).
#[derive(Clone, Copy)]
struct Rows<'a> {
    w: &'a [f64],
    c: &'a [f64],
    e: &'a [f64],
}

impl<'a> Rows<'a> {
    #[inline(always)]
    fn at(v: &'a [f64], i: usize, ny: usize) -> Self {
        Self {
            w: &v[(i - 1) * ny..i * ny],
            c: &v[i * ny..(i + 1) * ny],
            e: &v[(i + 1) * ny..(i + 2) * ny],
        }
    }
}

/// Arakawa stencil sum at row offset `j`, unscaled (multiply by 1/(12 dx dy)).
///
/// Written as a sum of pairwise antisymmetric products so that
/// `J(a, b) == -J(b, a)` and `J(a, a) == 0` hold exactly in floating point.
#[inline(always)]
fn arakawa_sum(a: Rows, b: Rows, j: usize) -> f64 {
    let (ae, aw, an, aso) = (a.e[j], a.w[j], a.c[j + 1], a.c[j - 1]);
    let (be, bw, bn, bso) = (b.e[j], b.w[j], b.c[j + 1], b.c[j - 1]);
    let (ane, anw, ase, asw) = (a.e[j + 1], a.w[j + 1], a.e[j - 1], a.w[j - 1]);
    let (bne, bnw, bse, bsw) = (b.e[j + 1], b.w[j + 1], b.e[j - 1], b.w[j - 1]);
    let pair = |ap: f64, bp: f64, aq: f64, bq: f64| ap * bq - aq * bp;
    let j1 = (ae - aw) * (bn - bso) - (be - bw) * (an - aso);
    let j23 = pair(ae, be, ane, bne) - pair(ae, be, ase, bse) - pair(aw, bw, anw, bnw)
        + pair(aw, bw, asw, bsw)
        - pair(an, bn, ane, bne)
        + pair(an, bn, anw, bnw)
        + pair(aso, bso, ase, bse)
        - pair(aso, bso, asw, bsw);
    j1 + j23
}

/// The nine-point neighbourhood of the interior nodes of row `i`, as
/// equal-length slices indexed by interior offset.
struct Window<'a> {
    c: &'a [f64],
    n: &'a [f64],
    s: &'a [f64],
    e: &'a [f64],
    w: &'a [f64],
    ne: &'a [f64],
    nw: &'a [f64],
    se: &'a [f64],
    sw: &'a [f64],
}

impl<'a> Window<'a> {
    #[inline(always)]
    fn at(v: &'a [f64], i: usize, ny: usize) -> Self {
        let r = Rows::at(v, i, ny);
        let m = ny - 2;
        Self {
            c: &r.c[1..m + 1],
            n: &r.c[2..m + 2],
            s: &r.c[..m],
            e: &r.e[1..m + 1],
            w: &r.w[1..m + 1],
            ne: &r.e[2..m + 2],
            nw: &r.w[2..m + 2],
            se: &r.e[..m],
            sw: &r.w[..m],
        }
    }

    /// Same sum as [`arakawa_sum`], at interior offset `j`.
    #[inline(always)]
    fn arakawa(&self, b: &Self, j: usize) -> f64 {
        let (ae, aw, an, aso) = (self.e[j], self.w[j], self.n[j], self.s[j]);
        let (be, bw, bn, bso) = (b.e[j], b.w[j], b.n[j], b.s[j]);
        let (ane, anw, ase, asw) = (self.ne[j], self.nw[j], self.se[j], self.sw[j]);
        let (bne, bnw, bse, bsw) = (b.ne[j], b.nw[j], b.se[j], b.sw[j]);
        let pair = |ap: f64, bp: f64, aq: f64, bq: f64| ap * bq - aq * bp;
        let j1 = (ae - aw) * (bn - bso) - (be - bw) * (an - aso);
        let j23 = pair(ae, be, ane, bne) - pair(ae, be, ase, bse) - pair(aw, bw, anw, bnw)
            + pair(aw, bw, asw, bsw)
            - pair(an, bn, ane, bne)
            + pair(an, bn, anw, bnw)
            + pair(aso, bso, ase, bse)
            - pair(aso, bso, asw, bsw);
        j1 + j23
    }
}

/// Arakawa Jacobian `J(a, b) = a_x b_y - a_y b_x`, zero on boundary nodes.
pub fn arakawa_jacobian(a: &Field2D, b: &Field2D) -> Result<Field2D> {
    a.grid().ensure_same(b.grid())?;
    let grid = *a.grid();
    let (nx, ny) = (grid.nx(), grid.ny());
    let scale = 1.0 / (12.0 * grid.dx() * grid.dy());
    let (av, bv) = (a.values(), b.values());
    let mut out = Field2D::zeros(grid);
    let ov = out.values_mut();
    for i in 1..nx - 1 {
        let (ar, br) = (Rows::at(av, i, ny), Rows::at(bv, i, ny));
        let row = &mut ov[i * ny..(i + 1) * ny];
        for j in 1..ny - 1 {
            row[j] = arakawa_sum(ar, br, j) * scale;
        }
    }
    Ok(out)
}

/// Work arrays for one RK3 step. `psi` and `rhs` are only ever written on
/// interior nodes, so their boundaries stay zero between steps.
struct StepBuffers {
    psi: Vec<f64>,
    rhs: Vec<f64>,
    stage: Vec<f64>,
}

impl StepBuffers {
    fn new(n: usize) -> Self {
        Self {
            psi: vec![0.0; n],
            rhs: vec![0.0; n],
            stage: vec![0.0; n],
        }
    }
}

/// Stateful BVE integrator: cached Poisson plans and forcing profile.
#[derive(Debug)]
pub struct BveSolver {
    cfg: FomConfig,
    poisson: PoissonSolver,
    forcing: Vec<f64>,
}

impl BveSolver {
    pub fn new(cfg: FomConfig) -> Result<Self> {
        let grid = cfg.grid;
        let inv_ro = 1.0 / cfg.ro;
        let forcing = (0..grid.ny()).map(|j| inv_ro * (PI * grid.y(j)).sin()).collect();
        Ok(Self {
            poisson: PoissonSolver::new(grid),
            forcing,
            cfg,
        })
    }

    pub fn config(&self) -> &FomConfig {
        &self.cfg
    }

    pub fn poisson(&self) -> &PoissonSolver {
        &self.poisson
    }

    /// Fused evaluation of every right-hand-side term on interior nodes.
    fn rhs_into(&self, omega: &[f64], psi: &[f64], out: &mut [f64]) {
        let grid = self.cfg.grid;
        let (nx, ny) = (grid.nx(), grid.ny());
        let (dx, dy) = (grid.dx(), grid.dy());
        let jac = 1.0 / (12.0 * dx * dy);
        let inv_ro_2dx = 0.5 / (self.cfg.ro * dx);
        let visc_x = 1.0 / (self.cfg.re * dx * dx);
        let visc_y = 1.0 / (self.cfg.re * dy * dy);
        let m = ny - 2;
        let forcing = &self.forcing[1..ny - 1];
        for i in 1..nx - 1 {
            let (w, p) = (Window::at(omega, i, ny), Window::at(psi, i, ny));
            let row = &mut out[i * ny + 1..(i + 1) * ny - 1];
            for j in 0..m {
                let lap_x = w.e[j] - 2.0 * w.c[j] + w.w[j];
                let lap_y = w.n[j] - 2.0 * w.c[j] + w.s[j];
                row[j] = -w.arakawa(&p, j) * jac
                    + (p.e[j] - p.w[j]) * inv_ro_2dx
                    + lap_x * visc_x
                    + lap_y * visc_y
                    + forcing[j];
            }
        }
    }

    /// Right-hand side for a given vorticity/streamfunction pair.
    pub fn rhs(&self, omega: &Field2D, psi: &Field2D) -> Result<Field2D> {
        self.cfg.grid.ensure_same(omega.grid())?;
        self.cfg.grid.ensure_same(psi.grid())?;
        let mut out = Field2D::zeros(self.cfg.grid);
        self.rhs_into(omega.values(), psi.values(), out.values_mut());
        Ok(out)
    }

    /// One TVD-RK3 step of size `dt`; `t` is the time at the start of the step
    /// and is only used to label a divergence.
    pub fn step(&self, omega: &Field2D, dt: f64, t: f64) -> Result<Field2D> {
        self.cfg.grid.ensure_same(omega.grid())?;
        let mut out = omega.clone();
        self.step_in_place(&mut out, dt, t, &mut StepBuffers::new(self.cfg.grid.len()))?;
        Ok(out)
    }

    fn step_in_place(&self, omega: &mut Field2D, dt: f64, t: f64, buf: &mut StepBuffers) -> Result<()> {
        let StepBuffers { psi, rhs, stage } = buf;

        // Stage 1: w1 = w0 + dt L(w0)
        let w0 = omega.values();
        self.poisson.solve_into(w0, psi);
        self.rhs_into(w0, psi, rhs);
        for ((s, w), r) in stage.iter_mut().zip(w0).zip(rhs.iter()) {
            *s = w + dt * r;
        }

        // Stage 2: w2 = 3/4 w0 + 1/4 w1 + 1/4 dt L(w1)
        self.poisson.solve_into(stage, psi);
        self.rhs_into(stage, psi, rhs);
        for ((s, w), r) in stage.iter_mut().zip(w0).zip(rhs.iter()) {
            *s = 0.75 * w + 0.25 * *s + 0.25 * dt * r;
        }

        // Stage 3: w = 1/3 w0 + 2/3 w2 + 2/3 dt L(w2)
        self.poisson.solve_into(stage, psi);
        self.rhs_into(stage, psi, rhs);
        for ((w, s), r) in omega.values_mut().iter_mut().zip(stage.iter()).zip(rhs.iter()) {
            *w = *w / 3.0 + 2.0 / 3.0 * (s + dt * r);
        }

        omega.zero_boundary();
        let max_abs = omega.values().iter().fold(0.0_f64, |m, v| {
            if v.is_nan() {
                f64::INFINITY
            } else {
                m.max(v.abs())
            }
        });
        if max_abs > DIVERGENCE_THRESHOLD {
            return Err(Error::Divergence {
                time: t + dt,
                max_abs,
            });
        }
        Ok(())
    }

    /// Advances `omega` from `t` to exactly `target` with steps of at most `dt`.
    pub fn advance(&self, omega: &mut Field2D, t: &mut f64, target: f64) -> Result<()> {
        self.cfg.grid.ensure_same(omega.grid())?;
        let dt = self.cfg.dt;
        if dt == 0.0 {
            return Ok(());
        }
        let mut buf = StepBuffers::new(self.cfg.grid.len());
        let tol = 1e-9 * dt;
        while target - *t > tol {
            let h = dt.min(target - *t);
            self.step_in_place(omega, h, *t, &mut buf)?;
            *t += h;
        }
        *t = target;
        Ok(())
    }

    fn initial_condition(&self) -> Field2D {
        let grid = self.cfg.grid;
        let amp = self.cfg.seed_perturbation_amplitude;
        if amp == 0.0 {
            return Field2D::zeros(grid);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        Field2D::from_fn_dirichlet(grid, |_, _| amp * rng.gen_range(-1.0..1.0))
    }

    /// Integrates from rest and samples vorticity at each of `times`.
    pub fn sample(&self, times: &[f64]) -> Result<Vec<Field2D>> {
        let mut omega = self.initial_condition();
        let mut t = self.cfg.t_start;
        let mut out = Vec::with_capacity(times.len());
        for &target in times {
            self.advance(&mut omega, &mut t, target)?;
            out.push(omega.clone());
        }
        Ok(out)
    }
}

/// Right-hand side of the BVE for a consistent `(omega, psi)` pair.
pub fn bve_rhs(omega: &Field2D, psi: &Field2D, cfg: &FomConfig) -> Result<Field2D> {
    BveSolver::new(cfg.clone())?.rhs(omega, psi)
}

/// One TVD-RK3 step of `cfg.dt` starting at `cfg.t_start`.
pub fn step_rk3(omega: &Field2D, cfg: &FomConfig) -> Result<Field2D> {
    BveSolver::new(cfg.clone())?.step(omega, cfg.dt, cfg.t_start)
}

/// Spins the basin up from rest and returns the training snapshots on
/// `[snapshot_t0, snapshot_t1]`. Integration stops at `snapshot_t1`.
pub fn run_fom(cfg: &FomConfig) -> Result<SnapshotSet> {
    cfg.validate()?;
    let solver = BveSolver::new(cfg.clone())?;
    let times = cfg.snapshot_times();
    let omega = solver.sample(&times)?;
    SnapshotSet::new(cfg.grid, times, omega)
}

/// Like [`run_fom`] but keeps sampling at the snapshot interval up to
/// `t_end`. Returns `(training set, full-window set)`; the training set is a
/// prefix of the full-window set.
pub fn run_fom_extended(cfg: &FomConfig) -> Result<(SnapshotSet, SnapshotSet)> {
    cfg.validate()?;
    let solver = BveSolver::new(cfg.clone())?;
    let times = cfg.extended_times();
    let omega = solver.sample(&times)?;
    let full = SnapshotSet::new(cfg.grid, times, omega)?;
    let train = full.prefix(cfg.n_snapshots)?;
    Ok((train, full))
}
