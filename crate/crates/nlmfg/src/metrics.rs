//! Distances between discrete measures (exact bounded-Lipschitz / flat
//! distance, W1 surrogate), error metrics for convergence studies, and
//! sampled regularity constants of the cost data.

use crate::error::{MfgError, Result};
use crate::grid::Grid;
use crate::hjb::{CouplingCosts, Hamiltonian};

/// Concave piecewise-linear function on [-1, 1], stored as breakpoints.
#[derive(Debug, Clone)]
struct ConcavePwl {
    /// (x, y) with strictly increasing x; linear between, undefined outside.
    pts: Vec<(f64, f64)>,
}

impl ConcavePwl {
    fn linear(c: f64) -> ConcavePwl {
        ConcavePwl { pts: vec![(-1.0, -c), (1.0, c)] }
    }

    fn add_linear(&mut self, c: f64) {
        for p in &mut self.pts {
            p.1 += c * p.0;
        }
    }

    fn max_value(&self) -> f64 {
        self.pts.iter().fold(f64::NEG_INFINITY, |m, p| m.max(p.1))
    }

    fn value(&self, x: f64) -> f64 {
        let pts = &self.pts;
        if x <= pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            if x <= w[1].0 {
                let t = (x - w[0].0) / (w[1].0 - w[0].0);
                return (1.0 - t) * w[0].1 + t * w[1].1;
            }
        }
        pts[pts.len() - 1].1
    }

    /// Replaces V by `W(f) = max_{|g-f| <= radius} V(g)`, then restricts to
    /// [-1, 1]: the increasing branch shifts left, the decreasing branch
    /// shifts right, and a plateau appears at the apex.
    fn dilate(&mut self, radius: f64) {
        let apex = self
            .pts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let apex_x = self.pts[apex].0;
        let apex_y = self.pts[apex].1;
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(self.pts.len() + 2);
        for &(x, y) in &self.pts[..apex] {
            out.push((x - radius, y));
        }
        out.push((apex_x - radius, apex_y));
        out.push((apex_x + radius, apex_y));
        for &(x, y) in &self.pts[apex + 1..] {
            out.push((x + radius, y));
        }
        // clamp the domain back to [-1, 1]
        let mut v = ConcavePwl { pts: out };
        let lo = v.value(-1.0);
        let hi = v.value(1.0);
        let mut pts: Vec<(f64, f64)> =
            v.pts.drain(..).filter(|p| p.0 > -1.0 + 1e-18 && p.0 < 1.0 - 1e-18).collect();
        pts.insert(0, (-1.0, lo));
        pts.push((1.0, hi));
        // drop duplicate abscissae introduced by the clamp
        pts.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-15);
        self.pts = pts;
    }
}

/// Exact Kantorovich-Rubinstein (flat) distance between two lattice measures
/// on a common grid:
/// `sup { sum_i (m1_i - m2_i) f_i : |f_i| <= 1, |f_{i+1} - f_i| <= rho }`,
/// solved by dynamic programming over concave piecewise-linear value
/// functions (the LP's inner structure is a chain).
pub fn flat_distance(m1: &[f64], m2: &[f64], rho: f64) -> Result<f64> {
    if m1.len() != m2.len() {
        return Err(MfgError::IncompatibleRuns("flat distance needs a common grid".into()));
    }
    let mass_gap = (m1.iter().sum::<f64>() - m2.iter().sum::<f64>()).abs();
    if mass_gap > 0.01 {
        return Err(MfgError::MassMismatch(mass_gap));
    }
    let n = m1.len();
    let c = |i: usize| m1[i] - m2[i];
    // V_i(f) = max over f_{i+1}..f_{n-1} given f_i = f; backward recursion
    let mut v = ConcavePwl::linear(c(n - 1));
    for i in (0..n - 1).rev() {
        v.dilate(rho);
        v.add_linear(c(i));
    }
    Ok(v.max_value())
}

/// Cheap upper surrogate used inside iteration loops: `min(W1-via-CDF, 2)`.
pub fn flat_distance_surrogate(m1: &[f64], m2: &[f64], rho: f64) -> f64 {
    let mut cdf_gap = 0.0;
    let mut acc = 0.0;
    for i in 0..m1.len() {
        acc += m1[i] - m2[i];
        cdf_gap += acc.abs() * rho;
    }
    cdf_gap.min(2.0)
}

/// Relative errors of a coarse run against a finer reference:
/// `ERR_u = ||u_c(0,.) - u_ref(0,.)||_{L^inf(roi)} / ||u_ref(0,.)||_{L^inf(roi)}`
/// and the analogous relative L^1 error of the terminal density view, both
/// sampled at the reference nodes with the coarse fields interpolated.
pub struct RunSlices<'a> {
    pub grid: &'a Grid,
    /// u(0, x_i).
    pub u0: &'a [f64],
    /// terminal cell masses m(T).
    pub m_t: &'a [f64],
}

pub fn err_metrics(run: &RunSlices, reference: &RunSlices, roi: (f64, f64)) -> Result<(f64, f64)> {
    let (gr, gf) = (run.grid, reference.grid);
    if (gr.a - gf.a).abs() > 1e-12 || (gr.b - gf.b).abs() > 1e-12 {
        return Err(MfgError::IncompatibleRuns("domains differ".into()));
    }
    if gr.rho < gf.rho {
        return Err(MfgError::IncompatibleRuns("reference must be finer".into()));
    }
    let mut unum: f64 = 0.0;
    let mut uden: f64 = 0.0;
    let mut mnum = 0.0;
    let mut mden = 0.0;
    for i in 0..gf.n_nodes() {
        let x = gf.node(i);
        if x < roi.0 - 1e-12 || x > roi.1 + 1e-12 {
            continue;
        }
        let ur = gf.interp(reference.u0, f64::NAN, x);
        let uc = gr.interp(run.u0, f64::NAN, x);
        unum = unum.max((uc - ur).abs());
        uden = uden.max(ur.abs());
        // piecewise-constant density views m_j / rho on the cells
        // E_j = [x_j - rho/2, x_j + rho/2), compared at reference nodes
        let dr = reference.m_t[i] / gf.rho;
        let jc = ((x - gr.a) / gr.rho).round() as isize;
        let dc = if jc < 0 || jc as usize >= run.m_t.len() {
            0.0
        } else {
            run.m_t[jc as usize] / gr.rho
        };
        mnum += (dc - dr).abs() * gf.rho;
        mden += dr.abs() * gf.rho;
    }
    if uden == 0.0 || mden == 0.0 {
        return Err(MfgError::IncompatibleRuns("reference vanishes on the region".into()));
    }
    Ok((unum / uden, mnum / mden))
}

/// Least-squares order of a positive error sequence against halving levels.
pub fn fitted_order(errs: &[f64]) -> f64 {
    let n = errs.len() as f64;
    let xm = (errs.len() - 1) as f64 / 2.0;
    let ys: Vec<f64> = errs.iter().map(|e| -e.log2()).collect();
    let ym = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, y) in ys.iter().enumerate() {
        let dx = k as f64 - xm;
        num += dx * (y - ym);
        den += dx * dx;
    }
    num / den
}

/// Bound constants of the cost data, estimated by sampling on the grid and a
/// fine time lattice: sup norms (C), Lipschitz constants (L) and
/// semiconcavity constants (c) of f(t,.), G and L(x,.).
#[derive(Debug, Clone, Copy)]
pub struct RegularityConstants {
    pub c_f: f64,
    pub l_f: f64,
    pub sc_f: f64,
    pub c_g: f64,
    pub l_g: f64,
    pub sc_g: f64,
    pub c_l: f64,
    pub l_l: f64,
    pub sc_l: f64,
}

impl RegularityConstants {
    /// `alpha_cap` bounds the control range entering C_L; `coupling_sup`
    /// bounds the K (phi_delta * m) part of F (at most K / (delta sqrt(2pi))
    /// for unit-mass m, sampled here as K * kernel peak).
    pub fn estimate(
        costs: &CouplingCosts,
        ham: &Hamiltonian,
        grid: &Grid,
        horizon: f64,
        alpha_cap: f64,
    ) -> RegularityConstants {
        let rho = grid.rho;
        let nt = 64;
        let mut c_f: f64 = 0.0;
        let mut l_f: f64 = 0.0;
        let mut sc_f: f64 = 0.0;
        for kt in 0..=nt {
            let t = horizon * kt as f64 / nt as f64;
            let vals: Vec<f64> = grid.nodes().map(|x| (costs.f)(t, x)).collect();
            let (c, l, s) = profile(&vals, rho);
            c_f = c_f.max(c);
            l_f = l_f.max(l);
            sc_f = sc_f.max(s);
        }
        // coupling part: |K (phi_delta * m)| <= K * peak of the kernel; it is
        // x-Lipschitz with constant K * peak / delta (Gaussian derivative
        // bound) and semiconcave with K * peak / delta^2
        if costs.k != 0.0 && costs.delta > 0.0 {
            let peak = costs.k.abs() / (costs.delta * (2.0 * std::f64::consts::PI).sqrt());
            c_f += peak;
            l_f += peak / costs.delta;
            sc_f += peak / (costs.delta * costs.delta);
        }
        let gv: Vec<f64> = grid.nodes().map(|x| (costs.g)(x)).collect();
        let (c_g, l_g, sc_g) = profile(&gv, rho);
        let mut c_l: f64 = 0.0;
        let mut l_l: f64 = 0.0;
        let mut sc_l: f64 = 0.0;
        let na = 65;
        for ka in 0..=na {
            let alpha = -alpha_cap + 2.0 * alpha_cap * ka as f64 / na as f64;
            let vals: Vec<f64> = grid.nodes().map(|x| ham.l(x, alpha)).collect();
            let (c, l, s) = profile(&vals, rho);
            c_l = c_l.max(c);
            l_l = l_l.max(l);
            sc_l = sc_l.max(s);
        }
        RegularityConstants { c_f, l_f, sc_f, c_g, l_g, sc_g, c_l, l_l, sc_l }
    }

    /// Control search box of the one-step operator: (L_F + L_L) T + L_G + 1.
    pub fn alpha_bound(&self, horizon: f64) -> f64 {
        (self.l_f + self.l_l) * horizon + self.l_g + 1.0
    }
}

/// (sup, Lipschitz, semiconcavity) profile of sampled values on the lattice.
fn profile(vals: &[f64], rho: f64) -> (f64, f64, f64) {
    let c = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut l: f64 = 0.0;
    let mut s: f64 = 0.0;
    for w in vals.windows(2) {
        l = l.max((w[1] - w[0]).abs() / rho);
    }
    for w in vals.windows(3) {
        s = s.max((w[2] - 2.0 * w[1] + w[0]) / (rho * rho));
    }
    (c, l, s)
}
