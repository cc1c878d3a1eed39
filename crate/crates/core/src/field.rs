//! Basin grid, nodal scalar fields and the discrete calculus shared by every
//! other stage of the pipeline.
//!
//! The grid is node-centered and includes the boundary nodes. Values are
//! stored row-major by x then y, so `values[i * ny + j]` is the node at
//! `(x_i, y_j)` and the y direction is contiguous in memory.

use crate::error::{Error, Result};

pub const X_MIN: f64 = 0.0;
pub const X_MAX: f64 = 1.0;
pub const Y_MIN: f64 = -1.0;
pub const Y_MAX: f64 = 1.0;

/// Node-centered discretization of the rectangular basin `[0,1] x [-1,1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
}

impl Grid {
    pub const MIN_NODES: usize = 8;

    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < Self::MIN_NODES || ny < Self::MIN_NODES {
            return Err(Error::InvalidGrid(format!(
                "{nx}x{ny} nodes; at least {m}x{m} required",
                m = Self::MIN_NODES
            )));
        }
        Ok(Self {
            nx,
            ny,
            dx: (X_MAX - X_MIN) / (nx - 1) as f64,
            dy: (Y_MAX - Y_MIN) / (ny - 1) as f64,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    /// Total node count, boundary included.
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        X_MIN + i as f64 * self.dx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        Y_MIN + j as f64 * self.dy
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    /// One-dimensional trapezoidal weights along x and y; their outer product
    /// is the quadrature weight of each node.
    pub fn trapezoid_weights(&self) -> (Vec<f64>, Vec<f64>) {
        let edge = |n: usize, h: f64| {
            (0..n)
                .map(|k| if k == 0 || k == n - 1 { 0.5 * h } else { h })
                .collect::<Vec<_>>()
        };
        (edge(self.nx, self.dx), edge(self.ny, self.dy))
    }

    pub(crate) fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::Dimension(format!(
                "grid {}x{} does not match grid {}x{}",
                self.nx, self.ny, other.nx, other.ny
            )));
        }
        Ok(())
    }
}

/// A scalar field sampled on every node of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    grid: Grid,
    values: Vec<f64>,
}

impl Field2D {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "{} values supplied for a {}x{} grid",
                values.len(),
                grid.nx,
                grid.ny
            )));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f(x, y)` on every node.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.nx {
            let x = grid.x(i);
            for j in 0..grid.ny {
                values.push(f(x, grid.y(j)));
            }
        }
        Self { grid, values }
    }

    /// Like [`Field2D::from_fn`] but forces the boundary nodes to zero.
    pub fn from_fn_dirichlet(grid: Grid, f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut field = Self::from_fn(grid, f);
        field.zero_boundary();
        field
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.grid.index(i, j);
        self.values[k] = v;
    }

    pub fn zero_boundary(&mut self) {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        for j in 0..ny {
            self.values[j] = 0.0;
            self.values[(nx - 1) * ny + j] = 0.0;
        }
        for i in 0..nx {
            self.values[i * ny] = 0.0;
            self.values[i * ny + ny - 1] = 0.0;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Field2D) -> Result<()> {
        self.grid.ensure_same(&other.grid)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn sub(&self, other: &Field2D) -> Result<Field2D> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }
}

/// Trapezoidal approximation of the domain integral of `f * g`.
pub fn inner_product(f: &Field2D, g: &Field2D) -> Result<f64> {
    f.grid.ensure_same(&g.grid)?;
    let (wx, wy) = f.grid.trapezoid_weights();
    Ok(weighted_dot(&wx, &wy, &f.values, &g.values))
}

/// Inner product kernel with precomputed trapezoid weights.
pub(crate) fn weighted_dot(wx: &[f64], wy: &[f64], f: &[f64], g: &[f64]) -> f64 {
    let ny = wy.len();
    let mut total = 0.0;
    for (i, &w) in wx.iter().enumerate() {
        let row = i * ny;
        let mut acc = 0.0;
        for j in 0..ny {
            acc += wy[j] * (f[row + j] * g[row + j]);
        }
        total += w * acc;
    }
    total
}

/// Second-order five-point Laplacian on interior nodes; boundary nodes are 0.
pub fn laplacian(f: &Field2D) -> Field2D {
    let grid = f.grid;
    let (nx, ny) = (grid.nx, grid.ny);
    let (idx2, idy2) = (1.0 / (grid.dx * grid.dx), 1.0 / (grid.dy * grid.dy));
    let v = &f.values;
    let mut out = vec![0.0; grid.len()];
    for i in 1..nx - 1 {
        for j in 1..ny - 1 {
            let k = i * ny + j;
            out[k] = (v[k + ny] - 2.0 * v[k] + v[k - ny]) * idx2
                + (v[k + 1] - 2.0 * v[k] + v[k - 1]) * idy2;
        }
    }
    Field2D { grid, values: out }
}

/// Second-order central difference in x on interior nodes; boundary nodes are 0.
pub fn ddx(f: &Field2D) -> Field2D {
    let grid = f.grid;
    let (nx, ny) = (grid.nx, grid.ny);
    let s = 0.5 / grid.dx;
    let v = &f.values;
    let mut out = vec![0.0; grid.len()];
    for i in 1..nx - 1 {
        for j in 1..ny - 1 {
            let k = i * ny + j;
            out[k] = (v[k + ny] - v[k - ny]) * s;
        }
    }
    Field2D { grid, values: out }
}

/// Root-mean-square over all nodes: `sqrt(sum f^2 / (nx*ny))`.
pub fn l2_grid_norm(f: &Field2D) -> f64 {
    let sum: f64 = f.values.iter().map(|v| v * v).sum();
    (sum / f.values.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid(nx: usize, ny: usize) -> Grid {
        Grid::new(nx, ny).unwrap()
    }

    #[test]
    fn grid_spacing() {
        let g = grid(65, 129);
        assert_eq!(g.dx(), 1.0 / 64.0);
        assert_eq!(g.dy(), 2.0 / 128.0);
        assert!(Grid::new(7, 20).is_err());
        assert!(Grid::new(20, 4).is_err());
    }

    #[test]
    fn inner_product_trivial_cases() {
        let g = grid(33, 65);
        let zero = Field2D::zeros(g);
        let any = Field2D::from_fn(g, |x, y| x * x + y.cos());
        assert_eq!(inner_product(&zero, &any).unwrap(), 0.0);

        let one = Field2D::from_fn(g, |_, _| 1.0);
        assert!((inner_product(&one, &one).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn inner_product_sine_converges() {
        let mut prev = f64::INFINITY;
        for n in [17, 33, 65] {
            let g = grid(n, 2 * n - 1);
            let f = Field2D::from_fn(g, |x, y| (PI * x).sin() * (PI * y).sin());
            let err = (inner_product(&f, &f).unwrap() - 0.5).abs();
            assert!(err < prev || err < 1e-14);
            prev = err;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn inner_product_grid_mismatch() {
        let a = Field2D::zeros(grid(9, 9));
        let b = Field2D::zeros(grid(9, 10));
        assert!(matches!(inner_product(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn laplacian_of_constant_and_quadratic() {
        let g = grid(17, 33);
        let c = laplacian(&Field2D::from_fn(g, |_, _| 3.5));
        assert!(c.max_abs() < 1e-9);

        let q = laplacian(&Field2D::from_fn(g, |x, y| x * x + y * y));
        for i in 1..g.nx() - 1 {
            for j in 1..g.ny() - 1 {
                assert!((q.at(i, j) - 4.0).abs() < 1e-9);
            }
        }
        assert_eq!(q.at(0, 5), 0.0);
    }

    fn sine_mode_error(n: usize, kx: f64, my: f64) -> f64 {
        let g = grid(n, 2 * n - 1);
        let f = Field2D::from_fn(g, |x, y| (kx * PI * x).sin() * (my * PI * (y + 1.0) / 2.0).sin());
        let lap = laplacian(&f);
        let eig = -(kx * kx + my * my / 4.0) * PI * PI;
        let mut err = 0.0_f64;
        for i in 1..g.nx() - 1 {
            for j in 1..g.ny() - 1 {
                err = err.max((lap.at(i, j) - eig * f.at(i, j)).abs());
            }
        }
        err
    }

    #[test]
    fn laplacian_second_order_convergence() {
        let e1 = sine_mode_error(33, 2.0, 3.0);
        let e2 = sine_mode_error(65, 2.0, 3.0);
        let order = (e1 / e2).log2();
        assert!((1.8..=2.2).contains(&order), "order {order}");
    }

    #[test]
    fn laplacian_eigenfunction() {
        let g = grid(65, 129);
        let f = Field2D::from_fn(g, |x, y| (PI * x).sin() * (PI * y).sin());
        let lap = laplacian(&f);
        for i in 1..g.nx() - 1 {
            for j in 1..g.ny() - 1 {
                assert!((lap.at(i, j) + 2.0 * PI * PI * f.at(i, j)).abs() < 5e-3);
            }
        }
    }

    #[test]
    fn l2_norm_cases() {
        let g = grid(10, 12);
        assert_eq!(l2_grid_norm(&Field2D::zeros(g)), 0.0);
        assert!((l2_grid_norm(&Field2D::from_fn(g, |_, _| -2.5)) - 2.5).abs() < 1e-15);
        let mut f = Field2D::zeros(g);
        f.set(3, 4, 6.0);
        assert!((l2_grid_norm(&f) - 6.0 / 120f64.sqrt()).abs() < 1e-15);
    }

    fn field_from(g: Grid, v: Vec<f64>) -> Field2D {
        Field2D::from_values(g, v).unwrap()
    }

    proptest! {
        #[test]
        fn inner_product_symmetric_bilinear(
            f in proptest::collection::vec(-1.0f64..1.0, 100),
            g in proptest::collection::vec(-1.0f64..1.0, 100),
            h in proptest::collection::vec(-1.0f64..1.0, 100),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let gr = grid(10, 10);
            let (f, g, h) = (field_from(gr, f), field_from(gr, g), field_from(gr, h));
            let fg = inner_product(&f, &g).unwrap();
            prop_assert_eq!(fg, inner_product(&g, &f).unwrap());

            let mut comb = f.clone();
            comb.scale(alpha);
            comb.axpy(beta, &h).unwrap();
            let lhs = inner_product(&comb, &g).unwrap();
            let rhs = alpha * fg + beta * inner_product(&h, &g).unwrap();
            let scale = (alpha.abs() + beta.abs()) * 2.0 + 1e-300;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale.max(lhs.abs()));
        }
    }
}
