//! Direct solver for the five-point Poisson problem `lap(psi) = -omega` with
//! homogeneous Dirichlet walls: type-I discrete sine transforms along `y`
//! and tridiagonal elimination along `x`.

use std::f64::consts::PI;
use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{RealFftPlanner, RealToComplex};

use crate::error::{Error, Result};
use crate::field::{Field2D, Grid};

/// Unnormalized type-I discrete sine transform of length `n - 1`:
/// `S_k = sum_j x_j sin(pi j k / n)` for `j, k = 1..n-1`.
///
/// Even `n` runs through a real FFT of length `n` after the classic
/// symmetric pre-twiddle; odd `n` falls back to the dense sum.
pub struct SineTransform {
    n: usize,
    fft: Option<Arc<dyn RealToComplex<f64>>>,
    sines: Vec<f64>,
}

/// Rows handled together by [`SineTransform::process_batch`].
pub const BATCH: usize = 4;

/// Work buffers for one [`SineTransform`].
pub struct SineScratch {
    real: Vec<f64>,
    spectrum: Vec<Complex<f64>>,
    fft: Vec<Complex<f64>>,
}

impl SineTransform {
    /// Transform for `len` interior samples.
    pub fn new(len: usize) -> Self {
        let n = len + 1;
        if n % 2 == 0 {
            let fft = RealFftPlanner::<f64>::new().plan_fft_forward(n);
            let sines = (0..=n / 2).map(|k| (PI * k as f64 / n as f64).sin()).collect();
            Self {
                n,
                fft: Some(fft),
                sines,
            }
        } else {
            let sines = (0..2 * n).map(|k| (PI * k as f64 / n as f64).sin()).collect();
            Self {
                n,
                fft: None,
                sines,
            }
        }
    }

    pub fn len(&self) -> usize {
        self.n - 1
    }

    pub fn is_empty(&self) -> bool {
        self.n == 1
    }

    pub fn scratch(&self) -> SineScratch {
        let (spectrum, fft) = match &self.fft {
            Some(f) => (f.make_output_vec(), f.make_scratch_vec()),
            None => (Vec::new(), Vec::new()),
        };
        SineScratch {
            real: vec![0.0; self.n],
            spectrum,
            fft,
        }
    }

    /// In-place transform of `data` (length `n - 1`).
    pub fn process(&self, data: &mut [f64], scratch: &mut SineScratch) {
        debug_assert_eq!(data.len(), self.n - 1);
        match &self.fft {
            Some(fft) => self.process_fft(fft.as_ref(), data, scratch),
            None => self.process_dense(data, scratch),
        }
    }

    /// Transforms several rows at once. Each row gets exactly the same
    /// arithmetic as [`SineTransform::process`]; batching only lets the
    /// serial running sums of different rows overlap.
    pub fn process_batch(&self, rows: &mut [&mut [f64]], scratch: &mut [SineScratch]) {
        debug_assert!(scratch.len() >= rows.len());
        match &self.fft {
            Some(fft) if rows.len() == BATCH => {
                for (row, sc) in rows.iter_mut().zip(scratch.iter_mut()) {
                    self.twiddle_and_fft(fft.as_ref(), row, sc);
                }
                let spec: [&[Complex<f64>]; BATCH] = std::array::from_fn(|r| &scratch[r].spectrum[..]);
                let mut odd = [0.0; BATCH];
                for r in 0..BATCH {
                    odd[r] = 0.5 * spec[r][0].re;
                    rows[r][0] = odd[r];
                }
                for k in 1..self.n / 2 {
                    for r in 0..BATCH {
                        rows[r][2 * k - 1] = -spec[r][k].im;
                        odd[r] += spec[r][k].re;
                        rows[r][2 * k] = odd[r];
                    }
                }
            }
            _ => {
                for (row, sc) in rows.iter_mut().zip(scratch.iter_mut()) {
                    self.process(row, sc);
                }
            }
        }
    }

    /// Symmetric pre-twiddle of `data` followed by the real FFT into the
    /// scratch spectrum.
    fn twiddle_and_fft(&self, fft: &dyn RealToComplex<f64>, data: &[f64], sc: &mut SineScratch) {
        let n = self.n;
        let half = n / 2;
        let y = &mut sc.real;
        y[0] = 0.0;
        y[1..].copy_from_slice(data);
        let (lo, hi) = y.split_at_mut(half);
        let sines = &self.sines[1..half];
        for ((a, b), s) in lo[1..].iter_mut().zip(hi[1..].iter_mut().rev()).zip(sines) {
            let sym = s * (*a + *b);
            let anti = 0.5 * (*a - *b);
            *a = sym + anti;
            *b = sym - anti;
        }
        let mid = hi[0];
        let sym = self.sines[half] * (mid + mid);
        hi[0] = sym + 0.5 * (mid - mid);
        fft.process_with_scratch(y, &mut sc.spectrum, &mut sc.fft)
            .expect("buffer sizes fixed at construction");
    }

    fn process_fft(&self, fft: &dyn RealToComplex<f64>, data: &mut [f64], sc: &mut SineScratch) {
        let n = self.n;
        self.twiddle_and_fft(fft, data, sc);
        // Even outputs come from the imaginary parts, odd ones by running sum.
        let spec = &sc.spectrum;
        let mut odd = 0.5 * spec[0].re;
        data[0] = odd;
        for k in 1..n / 2 {
            data[2 * k - 1] = -spec[k].im;
            odd += spec[k].re;
            data[2 * k] = odd;
        }
    }

    fn process_dense(&self, data: &mut [f64], sc: &mut SineScratch) {
        let n = self.n;
        let x = &mut sc.real;
        x[..n - 1].copy_from_slice(data);
        for k in 1..n {
            let mut acc = 0.0;
            for j in 1..n {
                acc += x[j - 1] * self.sines[(j * k) % (2 * n)];
            }
            data[k - 1] = acc;
        }
    }
}

/// Reusable Poisson solver for one grid: sine transform along `y`, then one
/// tridiagonal solve along `x` per sine mode.
pub struct PoissonSolver {
    grid: Grid,
    dst_y: SineTransform,
    off: f64,
    /// Thomas factors laid out `[i * my + q]` so sweeps run contiguously over modes.
    cprime: Vec<f64>,
    inv_pivot: Vec<f64>,
    norm: f64,
}

impl std::fmt::Debug for PoissonSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PoissonSolver").field("grid", &self.grid).finish()
    }
}

impl PoissonSolver {
    pub fn new(grid: Grid) -> Self {
        let mx = grid.nx() - 2;
        let my = grid.ny() - 2;
        let dy2 = grid.dy() * grid.dy();
        let off = 1.0 / (grid.dx() * grid.dx());
        // Eigenvalues of the y second-difference operator for each sine mode.
        let eig_y: Vec<f64> = (1..=my)
            .map(|q| (2.0 * (PI * q as f64 / (my + 1) as f64).cos() - 2.0) / dy2)
            .collect();
        let mut cprime = vec![0.0; mx * my];
        let mut inv_pivot = vec![0.0; mx * my];
        for (q, ey) in eig_y.iter().enumerate() {
            let diag = ey - 2.0 * off;
            let mut prev = 0.0;
            for i in 0..mx {
                let pivot = 1.0 / (diag - off * prev);
                inv_pivot[i * my + q] = pivot;
                prev = off * pivot;
                cprime[i * my + q] = prev;
            }
        }
        Self {
            grid,
            dst_y: SineTransform::new(my),
            off,
            cprime,
            inv_pivot,
            norm: 2.0 / (my + 1) as f64,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Returns `psi` with `lap(psi) = -omega` on interior nodes and `psi = 0`
    /// on the walls. Boundary values of `omega` are ignored.
    pub fn solve(&self, omega: &Field2D) -> Result<Field2D> {
        self.grid.ensure_same(omega.grid())?;
        if !omega.is_finite() {
            return Err(Error::NonFinite("Poisson right-hand side"));
        }
        let mut psi = Field2D::zeros(self.grid);
        self.solve_into(omega.values(), psi.values_mut());
        Ok(psi)
    }

    /// Unchecked kernel: `psi` must be zero on the boundary on entry. All
    /// work happens in place on the interior rows of `psi`.
    pub(crate) fn solve_into(&self, omega: &[f64], psi: &mut [f64]) {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let (mx, my) = (nx - 2, ny - 2);
        let mut scratch: Vec<SineScratch> = (0..BATCH).map(|_| self.dst_y.scratch()).collect();
        let row = |i: usize| (i + 1) * ny + 1..(i + 1) * ny + 1 + my;

        // Transformed rows, negated and prescaled by the inverse-transform
        // normalization so the tridiagonal systems read T x = g.
        let gain = -self.norm;
        for i in 0..mx {
            let r = row(i);
            for (p, w) in psi[r.clone()].iter_mut().zip(&omega[r]) {
                *p = gain * w;
            }
        }
        self.transform_rows(psi, &mut scratch);

        // Forward elimination, vectorized across modes.
        let off = self.off;
        for (v, piv) in psi[row(0)].iter_mut().zip(&self.inv_pivot[..my]) {
            *v *= piv;
        }
        for i in 1..mx {
            let (done, rest) = psi.split_at_mut(row(i).start);
            let prev = &done[row(i - 1)];
            let cur = &mut rest[..my];
            let piv = &self.inv_pivot[i * my..(i + 1) * my];
            for ((c, p), v) in cur.iter_mut().zip(prev).zip(piv) {
                *c = (*c - off * p) * v;
            }
        }
        // Back substitution.
        for i in (0..mx - 1).rev() {
            let (head, tail) = psi.split_at_mut(row(i + 1).start);
            let next = &tail[..my];
            let cur = &mut head[row(i)];
            let cp = &self.cprime[i * my..(i + 1) * my];
            for ((c, n), k) in cur.iter_mut().zip(next).zip(cp) {
                *c -= k * n;
            }
        }

        self.transform_rows(psi, &mut scratch);
    }

    /// Sine transform of the interior of every interior row of `v`.
    fn transform_rows(&self, v: &mut [f64], scratch: &mut [SineScratch]) {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let my = ny - 2;
        let mut rows: Vec<&mut [f64]> = v[ny..(nx - 1) * ny]
            .chunks_exact_mut(ny)
            .map(|r| &mut r[1..1 + my])
            .collect();
        for group in rows.chunks_mut(BATCH) {
            self.dst_y.process_batch(group, scratch);
        }
    }
}

/// Convenience wrapper planning a solver for a single solve.
pub fn solve_poisson(omega: &Field2D) -> Result<Field2D> {
    PoissonSolver::new(*omega.grid()).solve(omega)
}
