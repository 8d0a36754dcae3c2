//! Approximate optimal feedback control alpha(t, x) = H_p(x, Du_eps(t, x))
//! built from the mollified value field, and the scheme characteristics.

use crate::grid::{Grid, MollifierStencil};
use crate::hjb::{Hamiltonian, ValueField};
use crate::levy::LevyDiscretization;
use crate::par;

/// Node-sampled feedback control alpha[k][i] with the mollified gradients it
/// was built from.
#[derive(Debug, Clone)]
pub struct FeedbackControl {
    pub alpha: Vec<Vec<f64>>,
    pub grad: Vec<Vec<f64>>,
    pub eps: f64,
}

impl FeedbackControl {
    pub fn n_steps(&self) -> usize {
        self.alpha.len() - 1
    }

    pub fn sup_norm(&self) -> f64 {
        self.alpha
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |m, &a| m.max(a.abs()))
    }

    /// Constant feedback field, mainly for tests and uncoupled runs.
    pub fn constant(value: f64, n_steps: usize, n_nodes: usize, eps: f64) -> FeedbackControl {
        FeedbackControl {
            alpha: vec![vec![value; n_nodes]; n_steps + 1],
            grad: vec![vec![0.0; n_nodes]; n_steps + 1],
            eps,
        }
    }
}

/// Evaluates the feedback map at every (k, i) through the mollified-gradient
/// node stencil.
pub fn build(u: &ValueField, grid: &Grid, eps: f64, ham: &Hamiltonian) -> FeedbackControl {
    let stencil = MollifierStencil::new(grid.rho, eps);
    let slices = par::map_indexed(u.u.len(), |k| {
        // clamped extension: the exterior penalty value is a device of the
        // HJB scheme only; feeding it to the mollifier would inject an O(1)
        // artificial gradient up to eps inside the boundary
        let (_, grad) = stencil.apply_clamped(&u.u[k]);
        let alpha: Vec<f64> = grad
            .iter()
            .enumerate()
            .map(|(i, &p)| ham.h_p(grid.node(i), p))
            .collect();
        (alpha, grad)
    });
    let mut alpha = Vec::with_capacity(slices.len());
    let mut grad = Vec::with_capacity(slices.len());
    for (a, g) in slices {
        alpha.push(a);
        grad.push(g);
    }
    FeedbackControl { alpha, grad, eps }
}

/// Characteristic feet at step k:
/// `Phi^{+-}_{j,k} = x_j - h (alpha_{j,k} + b_r) +- sqrt(h) sigma_r`.
pub fn characteristics(
    fc: &FeedbackControl,
    grid: &Grid,
    disc: &LevyDiscretization,
    h: f64,
    k: usize,
) -> (Vec<f64>, Vec<f64>) {
    let shift = h.sqrt() * disc.sigma_r;
    let alpha = &fc.alpha[k];
    let mut plus = Vec::with_capacity(alpha.len());
    let mut minus = Vec::with_capacity(alpha.len());
    for (j, &a) in alpha.iter().enumerate() {
        let base = grid.node(j) - h * (a + disc.b_r);
        plus.push(base + shift);
        minus.push(base - shift);
    }
    (plus, minus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::{self, LevyMeasure};

    fn vf(grid: &Grid, values: Vec<f64>, ghost: f64) -> ValueField {
        ValueField {
            u: vec![values],
            rho: grid.rho,
            h: 0.01,
            r: 0.1,
            eps: 0.2,
            ghost,
        }
    }

    #[test]
    fn constant_field_gives_hp_at_zero() {
        let grid = Grid::new(0.0, 1.0, 0.05);
        let u = vf(&grid, vec![4.0; grid.n_nodes()], 4.0);
        let fc = build(&u, &grid, 0.2, &Hamiltonian::Quadratic);
        for &a in &fc.alpha[0] {
            assert!(a.abs() < 1e-13);
        }
    }

    #[test]
    fn affine_field_gives_unit_control_interior() {
        let grid = Grid::new(0.0, 1.0, 0.02);
        let vals: Vec<f64> = grid.nodes().collect();
        let u = vf(&grid, vals, 0.0);
        let eps = 4.0 * grid.rho;
        let fc = build(&u, &grid, eps, &Hamiltonian::Quadratic);
        let st = MollifierStencil::new(grid.rho, eps);
        for i in st.half + 1..grid.n_nodes() - st.half - 1 {
            assert!((fc.alpha[0][i] - 1.0).abs() < 1e-8, "i={i} a={}", fc.alpha[0][i]);
        }
    }

    #[test]
    fn characteristics_shift_and_identity() {
        let grid = Grid::new(0.0, 1.0, 0.1);
        let disc = levy::derive(&LevyMeasure::zero(), 0.5, &grid).unwrap();
        let h = 0.05;
        // alpha = 0 and no diffusion: feet stay put
        let fc0 = FeedbackControl::constant(0.0, 0, grid.n_nodes(), 0.2);
        let (p, m) = characteristics(&fc0, &grid, &disc, h, 0);
        for j in 0..grid.n_nodes() {
            assert_eq!(p[j], grid.node(j));
            assert_eq!(m[j], grid.node(j));
        }
        // h alpha = rho: exact one-cell left shift
        let fc1 = FeedbackControl::constant(grid.rho / h, 0, grid.n_nodes(), 0.2);
        let (p, _) = characteristics(&fc1, &grid, &disc, h, 0);
        for j in 1..grid.n_nodes() {
            assert!((p[j] - grid.node(j - 1)).abs() < 1e-14);
        }
    }
}
