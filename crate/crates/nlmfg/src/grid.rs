//! Uniform 1D grid on [a, b], hat-basis interpolation with constant exterior
//! (ghost) data, and mollification of lattice functions.

use crate::quad;

/// Uniform grid with nodes `x_i = a + i*rho`, `i = 0..=n`, and midpoint cells
/// `E_i = (x_i - rho/2, x_i + rho/2)`.
#[derive(Debug, Clone)]
pub struct Grid {
    pub a: f64,
    pub b: f64,
    pub rho: f64,
    n: usize,
}

impl Grid {
    /// Builds the grid, snapping `rho` so that `b - a` is an integer multiple.
    pub fn new(a: f64, b: f64, rho: f64) -> Grid {
        assert!(b > a && rho > 0.0);
        let n = ((b - a) / rho).round().max(1.0) as usize;
        let snapped = (b - a) / n as f64;
        if (snapped - rho).abs() > 1e-12 * rho {
            log::warn!("grid spacing snapped from {rho} to {snapped}");
        }
        Grid { a, b, rho: snapped, n }
    }

    pub fn n_cells(&self) -> usize {
        self.n
    }

    pub fn n_nodes(&self) -> usize {
        self.n + 1
    }

    pub fn node(&self, i: usize) -> f64 {
        self.a + i as f64 * self.rho
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes()).map(|i| self.node(i))
    }

    /// Index of the cell E_i containing x (nearest node), or None outside [a,b].
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        if x < self.a || x > self.b {
            return None;
        }
        let i = ((x - self.a) / self.rho).round() as usize;
        Some(i.min(self.n))
    }

    /// Hat basis function of the (possibly virtual) node at `a + j*rho`.
    pub fn hat(&self, j: isize, x: f64) -> f64 {
        let t = ((x - self.a) / self.rho - j as f64).abs();
        if t < 1.0 {
            1.0 - t
        } else {
            0.0
        }
    }

    /// Decomposes x into the bracketing lattice index and fraction:
    /// `x = a + (i0 + t)*rho` with `t in [0,1)`.
    pub fn locate(&self, x: f64) -> (isize, f64) {
        let s = (x - self.a) / self.rho;
        let i0 = s.floor();
        (i0 as isize, s - i0)
    }

    /// Value of the lattice extended by the constant `ghost` outside `0..=n`.
    #[inline]
    pub fn lattice_value(&self, values: &[f64], ghost: f64, j: isize) -> f64 {
        if j >= 0 && (j as usize) < values.len() {
            values[j as usize]
        } else {
            ghost
        }
    }

    /// Piecewise-linear interpolation `I[f](x)` of lattice values with
    /// constant ghost extension outside the index range.
    pub fn interp(&self, values: &[f64], ghost: f64, x: f64) -> f64 {
        let (i0, t) = self.locate(x);
        let v0 = self.lattice_value(values, ghost, i0);
        let v1 = self.lattice_value(values, ghost, i0 + 1);
        (1.0 - t) * v0 + t * v1
    }

    /// Mollified view of a lattice function, for arbitrary-point queries.
    pub fn mollify<'a>(&'a self, values: &'a [f64], ghost: f64, eps: f64) -> MollifiedFn<'a> {
        assert!(eps > 0.0);
        MollifiedFn { grid: self, values, ghost, eps, norm: bump_mass() }
    }
}

/// Lattice function: values over grid indices at one time step.
#[derive(Debug, Clone)]
pub struct LatticeFn {
    pub values: Vec<f64>,
    pub time_index: usize,
}

impl LatticeFn {
    pub fn new(values: Vec<f64>, time_index: usize) -> LatticeFn {
        assert!(values.iter().all(|v| v.is_finite()), "lattice values must be finite");
        LatticeFn { values, time_index }
    }
}

// --- mollifier -------------------------------------------------------------

/// The standard bump exp(1/(x^2-1)) on (-1,1), unnormalized.
fn bump(x: f64) -> f64 {
    if x.abs() < 1.0 {
        (1.0 / (x * x - 1.0)).exp()
    } else {
        0.0
    }
}

fn bump_deriv(x: f64) -> f64 {
    if x.abs() < 1.0 {
        let d = x * x - 1.0;
        bump(x) * (-2.0 * x / (d * d))
    } else {
        0.0
    }
}

fn bump_mass() -> f64 {
    // \int_{-1}^1 exp(1/(x^2-1)) dx, computed once
    use std::sync::OnceLock;
    static MASS: OnceLock<f64> = OnceLock::new();
    *MASS.get_or_init(|| quad::integrate(&bump, -1.0, 1.0, 1e-15))
}

/// Smooth view `u * rho_eps` of a lattice function (ghost-extended), with
/// analytic kernel derivative: `D(u * rho_eps) = u * D rho_eps`.
pub struct MollifiedFn<'a> {
    grid: &'a Grid,
    values: &'a [f64],
    ghost: f64,
    eps: f64,
    norm: f64,
}

impl MollifiedFn<'_> {
    fn kernel(&self, y: f64) -> f64 {
        bump(y / self.eps) / (self.eps * self.norm)
    }

    fn kernel_deriv(&self, y: f64) -> f64 {
        bump_deriv(y / self.eps) / (self.eps * self.eps * self.norm)
    }

    fn kink_breaks(&self, x: f64) -> Vec<f64> {
        // u_ext has kinks at lattice points; in the y variable those sit at
        // y = x - (a + j*rho)
        let rho = self.grid.rho;
        let jmin = ((x - self.eps - self.grid.a) / rho).floor() as isize;
        let jmax = ((x + self.eps - self.grid.a) / rho).ceil() as isize;
        (jmin..=jmax).map(|j| x - (self.grid.a + j as f64 * rho)).collect()
    }

    pub fn value(&self, x: f64) -> f64 {
        let breaks = self.kink_breaks(x);
        quad::integrate_with_breaks(
            &|y| self.grid.interp(self.values, self.ghost, x - y) * self.kernel(y),
            -self.eps,
            self.eps,
            &breaks,
            1e-13,
        )
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let breaks = self.kink_breaks(x);
        quad::integrate_with_breaks(
            &|y| self.grid.interp(self.values, self.ghost, x - y) * self.kernel_deriv(y),
            -self.eps,
            self.eps,
            &breaks,
            1e-13,
        )
    }
}

/// Precomputed node-stencil mollification weights for one (rho, eps) pair.
/// `u_eps(x_i) = sum_k value_w[k] u~_{i-k}`, same for the derivative, with
/// the lattice ghost-extended. Weights are symmetrized and normalized so that
/// constants and affine data are reproduced exactly.
#[derive(Debug, Clone)]
pub struct MollifierStencil {
    pub eps: f64,
    pub half: usize,
    value_w: Vec<f64>,
    deriv_w: Vec<f64>,
}

impl MollifierStencil {
    pub fn new(rho: f64, eps: f64) -> MollifierStencil {
        assert!(eps > 0.0 && rho > 0.0);
        let norm = bump_mass();
        let kernel = |y: f64| bump(y / eps) / (eps * norm);
        let kernel_d = |y: f64| bump_deriv(y / eps) / (eps * eps * norm);
        let hat = |u: f64| if u.abs() < 1.0 { 1.0 - u.abs() } else { 0.0 };
        let half = (eps / rho).ceil() as usize + 1;
        let m = 2 * half + 1;
        let raw = |ker: &dyn Fn(f64) -> f64, k: isize| -> f64 {
            let c = k as f64 * rho;
            let lo = (c - rho).max(-eps);
            let hi = (c + rho).min(eps);
            if lo >= hi {
                return 0.0;
            }
            quad::integrate_with_breaks(&|y| hat((c - y) / rho) * ker(y), lo, hi, &[c], 1e-15)
        };
        let mut value_w = vec![0.0; m];
        let mut deriv_w = vec![0.0; m];
        for k in -(half as isize)..=(half as isize) {
            value_w[(k + half as isize) as usize] = raw(&kernel, k);
            deriv_w[(k + half as isize) as usize] = raw(&kernel_d, k);
        }
        // symmetrize (kernel is even, its derivative odd), then rescale so that
        // constants map to themselves and affine slopes are exact
        for k in 1..=half {
            let s = 0.5 * (value_w[half + k] + value_w[half - k]);
            value_w[half + k] = s;
            value_w[half - k] = s;
            let d = 0.5 * (deriv_w[half + k] - deriv_w[half - k]);
            deriv_w[half + k] = d;
            deriv_w[half - k] = -d;
        }
        deriv_w[half] = 0.0;
        let vs: f64 = value_w.iter().sum();
        for w in &mut value_w {
            *w /= vs;
        }
        let slope: f64 = deriv_w
            .iter()
            .enumerate()
            .map(|(idx, &w)| -((idx as f64 - half as f64) * rho) * w)
            .sum();
        for w in &mut deriv_w {
            *w /= slope;
        }
        MollifierStencil { eps, half, value_w, deriv_w }
    }

    /// Mollified values and derivatives at every node of the lattice.
    pub fn apply(&self, grid: &Grid, values: &[f64], ghost: f64) -> (Vec<f64>, Vec<f64>) {
        self.apply_ext(|j| grid.lattice_value(values, ghost, j), values.len())
    }

    /// Mollified values and derivatives with the lattice extended by its edge
    /// values (clamped) instead of a constant ghost. This keeps the mollified
    /// gradient bounded by the interior Lipschitz constant of the lattice
    /// data, which the constant exterior penalty would destroy near the
    /// boundary whenever eps spans several cells.
    pub fn apply_clamped(&self, values: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = values.len();
        let clamped = |j: isize| values[j.clamp(0, n as isize - 1) as usize];
        self.apply_ext(clamped, n)
    }

    fn apply_ext(&self, lattice: impl Fn(isize) -> f64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let half = self.half as isize;
        let mut vals = vec![0.0; n];
        let mut ders = vec![0.0; n];
        for i in 0..n {
            let mut v = 0.0;
            let mut d = 0.0;
            for k in -half..=half {
                let u = lattice(i as isize - k);
                v += self.value_w[(k + half) as usize] * u;
                d += self.deriv_w[(k + half) as usize] * u;
            }
            vals[i] = v;
            ders[i] = d;
        }
        (vals, ders)
    }
}
