//! Forward dual semi-Lagrangian scheme: transition kernel built from the
//! feedback control's characteristics plus the shared jump weight table, and
//! the mass-conserving density evolution (leak tracked as an exterior sink).

use crate::control::{self, FeedbackControl};
use crate::error::{MfgError, Result};
use crate::grid::Grid;
use crate::levy::LevyDiscretization;
use crate::par;

/// 5-point Gauss-Legendre nodes/weights on [-1, 1].
const GL5_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_W: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

/// Discrete density: cell masses per time slice plus the cumulative mass that
/// leaked outside [a, b] (the exterior is an absorbing sink).
#[derive(Debug, Clone)]
pub struct DensityField {
    /// m[k][i], cell mass at node i and time t_k.
    pub m: Vec<Vec<f64>>,
    /// Cumulative leaked mass at each time slice.
    pub leak: Vec<f64>,
    pub rho: f64,
    pub h: f64,
}

impl DensityField {
    pub fn n_steps(&self) -> usize {
        self.m.len() - 1
    }

    /// Interior mass plus sink; should be 1 at every step.
    pub fn total_mass(&self, k: usize) -> f64 {
        self.m[k].iter().sum::<f64>() + self.leak[k]
    }

    /// L^p norm of the cell-density view m_i / rho; `p = f64::INFINITY` gives
    /// the sup norm.
    pub fn lp_norm(&self, k: usize, p: f64) -> f64 {
        if p.is_infinite() {
            self.m[k].iter().fold(0.0, |a, &v| a.max(v / self.rho))
        } else {
            (self.m[k]
                .iter()
                .map(|&v| (v / self.rho).powf(p) * self.rho)
                .sum::<f64>())
            .powf(1.0 / p)
        }
    }

    /// sup over k of the lattice L^1 distance to another field.
    pub fn l1_sup_distance(&self, other: &DensityField) -> f64 {
        self.m
            .iter()
            .zip(&other.m)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Constant-in-time field replicating one slice N+1 times.
    pub fn constant_in_time(slice: Vec<f64>, n_steps: usize, rho: f64, h: f64) -> DensityField {
        DensityField {
            m: vec![slice; n_steps + 1],
            leak: vec![0.0; n_steps + 1],
            rho,
            h,
        }
    }
}

/// Cell masses `m_{i,0} = int_{E_i} m0(x) dx` by per-cell Gauss-Legendre,
/// renormalized to exact unit mass.
pub fn initial_masses(grid: &Grid, density: &dyn Fn(f64) -> f64) -> Vec<f64> {
    let half = 0.5 * grid.rho;
    let mut m: Vec<f64> = (0..grid.n_nodes())
        .map(|i| {
            let x = grid.node(i);
            let lo = (x - half).max(grid.a);
            let hi = (x + half).min(grid.b);
            let c = 0.5 * (lo + hi);
            let s = 0.5 * (hi - lo);
            (0..5).map(|q| GL5_W[q] * density(c + s * GL5_X[q]) * s).sum::<f64>()
        })
        .collect();
    let total: f64 = m.iter().sum();
    assert!(total > 0.0, "initial density carries no mass on [a, b]");
    for v in &mut m {
        *v /= total;
    }
    m
}

/// One-step transition kernel B(i, j, k): two beta stencils at the
/// characteristic feet weighted e^{-lambda h}/2 plus the shared jump weight
/// table; columns are exactly stochastic including the exterior leak.
pub struct TransitionKernel<'a> {
    pub grid: &'a Grid,
    pub disc: &'a LevyDiscretization,
    /// e^{-lambda_r h} / 2 per diffusion branch.
    pub diff_w: f64,
    /// (1 - e^{-lambda_r h}) / total discrete intensity; h-limit when
    /// lambda_r = 0 (the weight table is zero then anyway).
    pub jump_w: f64,
    pub phi_plus: Vec<f64>,
    pub phi_minus: Vec<f64>,
}

/// Builds the kernel for step k from the frozen control.
pub fn kernel<'a>(
    fc: &FeedbackControl,
    grid: &'a Grid,
    disc: &'a LevyDiscretization,
    h: f64,
    k: usize,
) -> TransitionKernel<'a> {
    let (phi_plus, phi_minus) = control::characteristics(fc, grid, disc, h, k);
    let total = disc.total_intensity();
    let (diff_w, jump_w) = if total == 0.0 {
        (0.5, h) // jump table is all zeros; h is the (1-e)/lambda limit
    } else {
        let e = (-h * disc.lambda_r).exp();
        (0.5 * e, (1.0 - e) / total)
    };
    TransitionKernel { grid, disc, diff_w, jump_w, phi_plus, phi_minus }
}

impl TransitionKernel<'_> {
    fn n(&self) -> usize {
        self.phi_plus.len()
    }

    /// Explicit column j: interior entries (i, B(i,j)) and the leak mass.
    pub fn column(&self, j: usize) -> (Vec<(usize, f64)>, f64) {
        let n = self.n();
        let mut entries: Vec<(usize, f64)> = Vec::new();
        let mut leak = self.jump_w * self.disc.tail_mass;
        let mut push = |i: isize, w: f64, leak: &mut f64| {
            if w == 0.0 {
                return;
            }
            if i >= 0 && (i as usize) < n {
                entries.push((i as usize, w));
            } else {
                *leak += w;
            }
        };
        for foot in [self.phi_plus[j], self.phi_minus[j]] {
            let (i0, t) = self.grid.locate(foot);
            push(i0, self.diff_w * (1.0 - t), &mut leak);
            push(i0 + 1, self.diff_w * t, &mut leak);
        }
        let jm = self.disc.offset_max();
        for (idx, &w) in self.disc.weights().iter().enumerate() {
            push(j as isize + idx as isize - jm, self.jump_w * w, &mut leak);
        }
        (entries, leak)
    }

    /// Column sum including the leak; equals 1 up to rounding.
    pub fn column_sum(&self, j: usize) -> f64 {
        let (entries, leak) = self.column(j);
        entries.iter().map(|(_, w)| w).sum::<f64>() + leak
    }

    /// Row sums of the pure beta part, `sum_j [beta_i(Phi+_j) + beta_i(Phi-_j)]/2`
    /// (the Lemma-6.8 quantity, without the survival factor).
    pub fn beta_row_sums(&self) -> Vec<f64> {
        let n = self.n();
        let mut rows = vec![0.0; n];
        for j in 0..n {
            for foot in [self.phi_plus[j], self.phi_minus[j]] {
                let (i0, t) = self.grid.locate(foot);
                if i0 >= 0 && (i0 as usize) < n {
                    rows[i0 as usize] += 0.5 * (1.0 - t);
                }
                let i1 = i0 + 1;
                if i1 >= 0 && (i1 as usize) < n {
                    rows[i1 as usize] += 0.5 * t;
                }
            }
        }
        rows
    }

    /// One forward step: `out_i = sum_j m_j B(i,j)`; returns the mass leaked
    /// during this step.
    pub fn apply(&self, m: &[f64]) -> (Vec<f64>, f64) {
        let n = self.n();
        // diffusion part: cheap sequential scatter over source nodes
        let mut diff = vec![0.0; n];
        let mut leak = 0.0;
        for (j, &mj) in m.iter().enumerate() {
            if mj == 0.0 {
                continue;
            }
            for foot in [self.phi_plus[j], self.phi_minus[j]] {
                let (i0, t) = self.grid.locate(foot);
                for (i, w) in [(i0, 1.0 - t), (i0 + 1, t)] {
                    let mass = self.diff_w * w * mj;
                    if i >= 0 && (i as usize) < n {
                        diff[i as usize] += mass;
                    } else {
                        leak += mass;
                    }
                }
            }
        }
        // jump part: gather correlation against the shared weight table
        let jm = self.disc.offset_max();
        let weights = self.disc.weights();
        let jump_w = self.jump_w;
        let out = par::map_indexed(n, |i| {
            let mut s = diff[i];
            if jump_w > 0.0 {
                let mut acc = 0.0;
                for (idx, &w) in weights.iter().enumerate() {
                    let j = i as isize - (idx as isize - jm);
                    if w != 0.0 && j >= 0 && (j as usize) < n {
                        acc += w * m[j as usize];
                    }
                }
                s += jump_w * acc;
            }
            s
        });
        let total_in: f64 = m.iter().sum();
        let total_out: f64 = out.iter().sum();
        // the remaining deficit is jump mass that left [a,b] (incl. tail)
        let jump_leak = total_in - total_out - leak;
        (out, leak + jump_leak.max(0.0))
    }
}

/// Full forward evolution from the initial cell masses under the control.
pub fn evolve(
    m0: Vec<f64>,
    fc: &FeedbackControl,
    grid: &Grid,
    disc: &LevyDiscretization,
    h: f64,
) -> Result<DensityField> {
    let n_steps = fc.n_steps();
    let mut m = Vec::with_capacity(n_steps + 1);
    let mut leak = Vec::with_capacity(n_steps + 1);
    m.push(m0);
    leak.push(0.0);
    for k in 0..n_steps {
        let ker = kernel(fc, grid, disc, h, k);
        let (next, dl) = ker.apply(&m[k]);
        for (i, &v) in next.iter().enumerate() {
            if v < -1e-13 {
                return Err(MfgError::NegativeMass { node: i, step: k + 1, mass: v });
            }
        }
        leak.push(leak[k] + dl);
        m.push(next);
    }
    Ok(DensityField { m, leak, rho: grid.rho, h })
}

/// Residual of the very-weak formulation for a smooth compactly supported
/// test function: `|int phi dm(T) - int phi dm0 - sum_k h sum_i (Lphi(x_i) -
/// alpha_{i,k} Dphi(x_i)) m_{i,k}|` with an oracle generator value `l_phi`.
pub fn weak_form_defect(
    m: &DensityField,
    fc: &FeedbackControl,
    grid: &Grid,
    phi: &dyn Fn(f64) -> f64,
    dphi: &dyn Fn(f64) -> f64,
    l_phi: &dyn Fn(f64) -> f64,
) -> f64 {
    let n_steps = m.n_steps();
    let pair = |slice: &[f64]| -> f64 {
        slice.iter().enumerate().map(|(i, &mi)| phi(grid.node(i)) * mi).sum()
    };
    let terminal = pair(&m.m[n_steps]);
    let initial = pair(&m.m[0]);
    let mut integral = 0.0;
    for k in 0..n_steps {
        let mut s = 0.0;
        for (i, &mi) in m.m[k].iter().enumerate() {
            if mi != 0.0 {
                let x = grid.node(i);
                s += (l_phi(x) - fc.alpha[k][i] * dphi(x)) * mi;
            }
        }
        integral += m.h * s;
    }
    (terminal - initial - integral).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::{self, LevyKind, LevyMeasure};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian(mean: f64, std: f64) -> impl Fn(f64) -> f64 {
        move |x: f64| (-0.5 * ((x - mean) / std).powi(2)).exp()
    }

    #[test]
    fn initial_masses_unit_and_positive() {
        let grid = Grid::new(0.0, 1.0, 0.01);
        let m0 = initial_masses(&grid, &gaussian(0.5, 0.1));
        assert!((m0.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(m0.iter().all(|&v| v >= 0.0));
        // mode at the center
        let imax = (0..m0.len()).max_by(|&a, &b| m0[a].partial_cmp(&m0[b]).unwrap()).unwrap();
        assert_eq!(grid.node(imax), 0.5);
    }

    #[test]
    fn identity_kernel_keeps_density() {
        let grid = Grid::new(0.0, 1.0, 0.05);
        let disc = levy::derive(&LevyMeasure::zero(), 0.5, &grid).unwrap();
        let fc = FeedbackControl::constant(0.0, 10, grid.n_nodes(), 0.2);
        let m0 = initial_masses(&grid, &gaussian(0.5, 0.1));
        let d = evolve(m0.clone(), &fc, &grid, &disc, 0.02).unwrap();
        for k in 0..=10 {
            for i in 0..m0.len() {
                assert!((d.m[k][i] - m0[i]).abs() < 1e-13);
            }
            assert!(d.leak[k].abs() < 1e-13);
        }
    }

    #[test]
    fn shift_kernel_translates() {
        let grid = Grid::new(0.0, 1.0, 0.05);
        let disc = levy::derive(&LevyMeasure::zero(), 0.5, &grid).unwrap();
        let h: f64 = 0.02;
        let fc = FeedbackControl::constant(grid.rho / h, 3, grid.n_nodes(), 0.2);
        let mut m0 = vec![0.0; grid.n_nodes()];
        m0[10] = 1.0;
        let d = evolve(m0, &fc, &grid, &disc, h).unwrap();
        for k in 0..=3 {
            assert!((d.m[k][10 - k] - 1.0).abs() < 1e-14);
            assert!((d.total_mass(k) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn columns_stochastic_and_nonnegative() {
        let grid = Grid::new(0.0, 1.0, 0.02);
        let meas = LevyMeasure::new(LevyKind::FractionalLaplacian { s: 1.5 }, 0.0081).unwrap();
        let h: f64 = 0.02;
        let disc = levy::derive(&meas, h.powf(1.0 / 3.0), &grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut fc = FeedbackControl::constant(0.0, 2, grid.n_nodes(), 0.2);
        for s in &mut fc.alpha {
            for a in s.iter_mut() {
                *a = rng.gen_range(-2.0..2.0);
            }
        }
        let ker = kernel(&fc, &grid, &disc, h, 1);
        for j in 0..grid.n_nodes() {
            let (entries, leak) = ker.column(j);
            assert!(entries.iter().all(|&(_, w)| w >= 0.0) && leak >= 0.0);
            assert!((ker.column_sum(j) - 1.0).abs() < 1e-12, "j={j}");
        }
    }

    #[test]
    fn duality_associativity() {
        // sum_i phi_i (B m)_i equals sum_j m_j (column_j . phi) with zero
        // exterior phi
        let grid = Grid::new(0.0, 1.0, 0.05);
        let meas = LevyMeasure::new(LevyKind::FractionalLaplacian { s: 1.2 }, 0.01).unwrap();
        let h: f64 = 0.02;
        let disc = levy::derive(&meas, 0.1, &grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fc = FeedbackControl::constant(0.7, 1, grid.n_nodes(), 0.2);
        let ker = kernel(&fc, &grid, &disc, h, 0);
        let m: Vec<f64> = (0..grid.n_nodes()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let phi: Vec<f64> = (0..grid.n_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (out, _) = ker.apply(&m);
        let lhs: f64 = out.iter().zip(&phi).map(|(a, b)| a * b).sum();
        let rhs: f64 = (0..grid.n_nodes())
            .map(|j| {
                let (entries, _) = ker.column(j);
                m[j] * entries.iter().map(|&(i, w)| w * phi[i]).sum::<f64>()
            })
            .sum();
        assert!((lhs - rhs).abs() < 1e-12, "lhs={lhs} rhs={rhs}");
    }

    #[test]
    fn mass_conserved_with_sink() {
        let grid = Grid::new(0.0, 1.0, 0.02);
        let meas = LevyMeasure::new(LevyKind::FractionalLaplacian { s: 1.5 }, 0.0081).unwrap();
        let h: f64 = 0.01;
        let disc = levy::derive(&meas, h.powf(1.0 / 3.0), &grid).unwrap();
        let fc = FeedbackControl::constant(0.5, 20, grid.n_nodes(), 0.2);
        let m0 = initial_masses(&grid, &gaussian(0.5, 0.1));
        let d = evolve(m0, &fc, &grid, &disc, h).unwrap();
        for k in 0..=20 {
            assert!((d.total_mass(k) - 1.0).abs() < 1e-12, "k={k}");
            assert!(d.m[k].iter().all(|&v| v >= 0.0));
        }
        assert!(d.leak[20] > 0.0, "nonlocal jumps must leak some mass");
    }

    #[test]
    fn weak_form_trivial_cases() {
        let grid = Grid::new(0.0, 1.0, 0.05);
        let disc = levy::derive(&LevyMeasure::zero(), 0.5, &grid).unwrap();
        let fc = FeedbackControl::constant(0.0, 10, grid.n_nodes(), 0.2);
        let m0 = initial_masses(&grid, &gaussian(0.5, 0.1));
        let d = evolve(m0, &fc, &grid, &disc, 0.02).unwrap();
        // phi vanishing on the support of m
        let zero = |_x: f64| 0.0;
        assert_eq!(weak_form_defect(&d, &fc, &grid, &zero, &zero, &zero), 0.0);
        // stationary density, any phi: defect 0 (terminal = initial, alpha = 0)
        let phi = |x: f64| (std::f64::consts::PI * x).sin().powi(2);
        let dphi = |x: f64| {
            2.0 * std::f64::consts::PI
                * (std::f64::consts::PI * x).sin()
                * (std::f64::consts::PI * x).cos()
        };
        let defect = weak_form_defect(&d, &fc, &grid, &phi, &dphi, &zero);
        assert!(defect < 1e-14);
    }
}
#[cfg(test)]
mod conservation_tests {
    use super::*;
    use crate::control::FeedbackControl;
    use crate::levy::{self, LevyKind, LevyMeasure};

    #[test]
    fn mass_plus_leak_conserved_forty_steps() {
        let grid = Grid::new(0.0, 1.0, 0.025);
        let measure = LevyMeasure::new(LevyKind::FractionalLaplacian { s: 1.5 }, 0.0081).unwrap();
        let disc = levy::derive(&measure, 0.025f64.powf(1.0 / 3.0), &grid).unwrap();
        let fc = FeedbackControl::constant(0.2, 40, grid.n_nodes(), 0.158);
        let m0 = initial_masses(&grid, &|x: f64| (-((x - 0.5) / 0.1).powi(2)).exp());
        let m = evolve(m0, &fc, &grid, &disc, 0.025).unwrap();
        for k in 0..=40 {
            let gap = (m.total_mass(k) - 1.0).abs();
            assert!(gap <= 1e-12, "k={k}: gap={gap:.3e} leak={}", m.leak[k]);
        }
    }
}
