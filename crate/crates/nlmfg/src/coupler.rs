//! The coupled MFG solve: damped fixed-point iteration alternating the
//! backward HJB solve and the forward FPK evolution, with CFL validation and
//! convergence monitoring.

use std::sync::Arc;
use std::time::Instant;

use crate::control::{self, FeedbackControl};
use crate::error::{MfgError, Result};
use crate::fpk::{self, DensityField};
use crate::grid::Grid;
use crate::hjb::{self, CouplingCosts, Hamiltonian, ValueField};
use crate::levy::{self, LevyDiscretization, LevyMeasure};
use crate::metrics::{self, RegularityConstants};

/// Discretization parameters of one run.
#[derive(Debug, Clone, Copy)]
pub struct SchemeParams {
    pub rho: f64,
    pub h: f64,
    pub r: f64,
    pub eps: f64,
}

/// Full problem description.
#[derive(Clone)]
pub struct MfgProblem {
    pub grid: Grid,
    pub horizon: f64,
    pub measure: LevyMeasure,
    pub ham: Hamiltonian,
    pub costs: CouplingCosts,
    /// Unnormalized initial density formula on [a, b].
    pub m0: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub params: SchemeParams,
}

/// The three vanishing ratios of the convergence theory, evaluated at the
/// fixed resolution of the run.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct CflReport {
    /// rho^2 / h.
    pub space_time: f64,
    /// h / r^sigma.
    pub jump: f64,
    /// sqrt(h) / eps.
    pub mollifier: f64,
}

impl CflReport {
    pub fn violations(&self, threshold: f64) -> Vec<(&'static str, f64)> {
        let mut v = Vec::new();
        for (name, value) in [
            ("rho^2/h", self.space_time),
            ("h/r^sigma", self.jump),
            ("sqrt(h)/eps", self.mollifier),
        ] {
            if value > threshold {
                v.push((name, value));
            }
        }
        v
    }
}

impl MfgProblem {
    /// Number of time steps; construction snaps h so that N h = T exactly.
    pub fn n_steps(&self) -> usize {
        (self.horizon / self.params.h).round().max(1.0) as usize
    }

    /// Snaps h to divide the horizon exactly and rho to divide the domain.
    pub fn snap(&mut self) {
        let n = (self.horizon / self.params.h).round().max(1.0);
        self.params.h = self.horizon / n;
        self.params.rho = self.grid.rho;
    }

    pub fn cfl(&self) -> CflReport {
        let p = self.params;
        let sigma = self.measure.sigma_order();
        let jump = if self.measure.is_zero() { 0.0 } else { p.h / p.r.powf(sigma) };
        CflReport {
            space_time: p.rho * p.rho / p.h,
            jump,
            mollifier: p.h.sqrt() / p.eps,
        }
    }

    /// Errors with CflViolation unless all ratios pass or `force` is set.
    pub fn check_cfl(&self, threshold: f64, force: bool) -> Result<CflReport> {
        let report = self.cfl();
        if let Some(&(name, value)) = report.violations(threshold).first() {
            if force {
                log::warn!("CFL ratio {name} = {value:.3} exceeds {threshold:.3}, forced on");
            } else {
                return Err(MfgError::CflViolation { name, value, threshold });
            }
        }
        Ok(report)
    }

    pub fn derive_levy(&self) -> Result<LevyDiscretization> {
        levy::derive(&self.measure, self.params.r, &self.grid)
    }

    pub fn regularity(&self) -> RegularityConstants {
        // the alpha range entering C_L is the scheme's own search box; one
        // bootstrap round with a unit cap fixes it
        let rc0 = RegularityConstants::estimate(&self.costs, &self.ham, &self.grid, self.horizon, 1.0);
        let cap = rc0.alpha_bound(self.horizon);
        RegularityConstants::estimate(&self.costs, &self.ham, &self.grid, self.horizon, cap)
    }

    pub fn initial_masses(&self) -> Vec<f64> {
        fpk::initial_masses(&self.grid, &*self.m0)
    }
}

/// Per-iteration convergence record.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IterRecord {
    /// sup over k of the lattice L1 distance between consecutive couplings.
    pub l1_change: f64,
    /// sup over k of the flat-metric surrogate distance.
    pub flat_change: f64,
    pub hjb_secs: f64,
    pub fpk_secs: f64,
}

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct FixedPointTrace {
    pub iterations: Vec<IterRecord>,
}

pub struct MfgSolution {
    pub u: ValueField,
    pub m: DensityField,
    /// The converged coupling the final u was solved against.
    pub mu: DensityField,
    pub control: FeedbackControl,
    pub trace: FixedPointTrace,
    pub cfl: CflReport,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOpts {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub cfl_threshold: f64,
    pub force: bool,
}

impl Default for SolveOpts {
    fn default() -> SolveOpts {
        SolveOpts { tol: 1e-12, max_iter: 200, damping: 0.5, cfl_threshold: 5.0, force: false }
    }
}

/// Damped fixed-point iteration: mu starts as m0 frozen in time; each round
/// solves HJB against mu, builds the feedback control, evolves FPK, then
/// averages mu <- (1 - damping) mu + damping m.
pub fn solve(problem: &MfgProblem, opts: &SolveOpts) -> Result<MfgSolution> {
    let cfl = problem.check_cfl(opts.cfl_threshold, opts.force)?;
    let grid = &problem.grid;
    let disc = problem.derive_levy()?;
    let p = problem.params;
    let n = problem.n_steps();
    let rc = problem.regularity();
    // Boundary nodes legitimately flee the exterior penalty at up to
    // sigma_r/sqrt(h) (+ compensator drift) to pull the diffusion feet back
    // inside the domain, so the search box must exceed the interior
    // regularity bound by that margin.
    let alpha_bound =
        rc.alpha_bound(problem.horizon) + disc.sigma_r / p.h.sqrt() + disc.b_r.abs();
    let m0 = problem.initial_masses();
    let mut mu = DensityField::constant_in_time(m0.clone(), n, p.rho, p.h);
    let mut trace = FixedPointTrace::default();
    // Picard with a fixed step can cycle on strongly coupled long-horizon
    // problems; halve the damping whenever the change grows two rounds in a
    // row.
    let mut damping = opts.damping;
    let mut grew = 0usize;
    for iter in 0..opts.max_iter {
        let t0 = Instant::now();
        let u = hjb::solve_backward(grid, &disc, &problem.ham, &problem.costs, p.h, &mu.m, p.eps, alpha_bound)?;
        let hjb_secs = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let fc = control::build(&u, grid, p.eps, &problem.ham);
        let m = fpk::evolve(m0.clone(), &fc, grid, &disc, p.h)?;
        let fpk_secs = t1.elapsed().as_secs_f64();
        // damped update and its size
        let mut l1_change: f64 = 0.0;
        let mut flat_change: f64 = 0.0;
        for k in 0..=n {
            let mut step_l1 = 0.0;
            for i in 0..mu.m[k].len() {
                let new = (1.0 - opts.damping) * mu.m[k][i] + opts.damping * m.m[k][i];
                step_l1 += (new - mu.m[k][i]).abs();
                mu.m[k][i] = new;
            }
            mu.leak[k] = (1.0 - opts.damping) * mu.leak[k] + opts.damping * m.leak[k];
            l1_change = l1_change.max(step_l1);
            flat_change =
                flat_change.max(metrics::flat_distance_surrogate(&mu.m[k], &m.m[k], p.rho));
        }
        trace.iterations.push(IterRecord { l1_change, flat_change, hjb_secs, fpk_secs });
        log::info!("iteration {iter}: L1 change {l1_change:.3e}, flat {flat_change:.3e}");
        if l1_change <= opts.tol {
            return Ok(MfgSolution { u, m, mu, control: fc, trace, cfl });
        }
    }
    let change = trace.iterations.last().map(|r| r.l1_change).unwrap_or(f64::NAN);
    Err(MfgError::NoConvergence { change, iters: opts.max_iter, tol: opts.tol })
}

/// One row of a convergence table.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct StudyLevel {
    pub h: f64,
    pub err_u: f64,
    pub err_m: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct StudyResult {
    pub levels: Vec<StudyLevel>,
    /// Least-squares orders over the halving ladder.
    pub order_u: f64,
    pub order_m: f64,
    /// Per-halving error ratios, coarse over next-finer.
    pub ratios_u: Vec<f64>,
    pub ratios_m: Vec<f64>,
}

/// Solves every ladder level and the reference, then reports relative errors
/// of u(0, .) in sup norm and of the terminal density in L1 on the region of
/// interest, plus fitted orders and per-halving ratios.
pub fn convergence_study(
    ladder: &[MfgProblem],
    reference: &MfgProblem,
    roi: (f64, f64),
    opts: &SolveOpts,
) -> Result<StudyResult> {
    if ladder.len() < 2 {
        return Err(MfgError::IncompatibleRuns("ladder needs at least two levels".into()));
    }
    for p in ladder {
        if p.params.h <= reference.params.h {
            return Err(MfgError::IncompatibleRuns(
                "reference level must be strictly finer than every ladder level".into(),
            ));
        }
    }
    log::info!("study: solving reference at h = {}", reference.params.h);
    let ref_sol = solve(reference, opts)?;
    let ref_slices = metrics::RunSlices {
        grid: &reference.grid,
        u0: &ref_sol.u.u[0],
        m_t: &ref_sol.m.m[ref_sol.m.n_steps()],
    };
    let mut levels = Vec::new();
    for p in ladder {
        log::info!("study: solving level h = {}", p.params.h);
        let sol = solve(p, opts)?;
        let slices = metrics::RunSlices {
            grid: &p.grid,
            u0: &sol.u.u[0],
            m_t: &sol.m.m[sol.m.n_steps()],
        };
        let (err_u, err_m) = metrics::err_metrics(&slices, &ref_slices, roi)?;
        levels.push(StudyLevel { h: p.params.h, err_u, err_m });
    }
    let errs_u: Vec<f64> = levels.iter().map(|l| l.err_u).collect();
    let errs_m: Vec<f64> = levels.iter().map(|l| l.err_m).collect();
    let ratio = |e: &[f64]| e.windows(2).map(|w| w[0] / w[1]).collect::<Vec<f64>>();
    Ok(StudyResult {
        order_u: metrics::fitted_order(&errs_u),
        order_m: metrics::fitted_order(&errs_m),
        ratios_u: ratio(&errs_u),
        ratios_m: ratio(&errs_m),
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::LevyKind;

    fn uncoupled_problem(h: f64) -> MfgProblem {
        let grid = Grid::new(0.0, 1.0, h);
        MfgProblem {
            grid,
            horizon: 0.2,
            measure: LevyMeasure::new(LevyKind::FractionalLaplacian { s: 1.5 }, 0.0081).unwrap(),
            ham: Hamiltonian::Quadratic,
            costs: CouplingCosts {
                f: Arc::new(|t: f64, x: f64| {
                    5.0 * (x - 0.5 * (1.0 - (2.0 * std::f64::consts::PI * t).sin())).powi(2)
                }),
                k: 0.0,
                delta: 0.4,
                g: Arc::new(|_x| 0.0),
            },
            m0: Arc::new(|x: f64| (-0.5 * ((x - 0.5) / 0.1).powi(2)).exp()),
            params: SchemeParams { rho: h, h, r: h.powf(1.0 / 3.0), eps: h.sqrt() },
        }
    }

    #[test]
    fn cfl_gate_blocks_and_forces() {
        let mut p = uncoupled_problem(0.02);
        p.params.rho = 1.0; // rho^2/h enormous
        assert!(matches!(
            p.check_cfl(5.0, false),
            Err(MfgError::CflViolation { .. })
        ));
        assert!(p.check_cfl(5.0, true).is_ok());
    }

    #[test]
    fn uncoupled_problem_contracts_geometrically() {
        // K = 0: u is independent of mu, so m is fixed after the first pass
        // and damping 1/2 halves the gap every iteration
        let p = uncoupled_problem(0.02);
        let sol = solve(&p, &SolveOpts { tol: 1e-10, ..Default::default() }).unwrap();
        let it = &sol.trace.iterations;
        let expected_iters = ((it[0].l1_change / 1e-10).log2().ceil() as usize) + 1;
        assert!(it.len() <= expected_iters + 1, "{} vs {}", it.len(), expected_iters);
        for w in it.windows(2) {
            if w[1].l1_change > 1e-13 {
                let ratio = w[0].l1_change / w[1].l1_change;
                assert!((ratio - 2.0).abs() < 1e-3, "ratio {ratio}");
            }
        }
        // self-consistency: one more HJB+FPK pass moves mu by <= 2 tol
        let disc = p.derive_levy().unwrap();
        let rc = p.regularity();
        let u = hjb::solve_backward(
            &p.grid, &disc, &p.ham, &p.costs, p.params.h, &sol.mu.m, p.params.eps,
            rc.alpha_bound(p.horizon) + disc.sigma_r / p.params.h.sqrt() + disc.b_r.abs(),
        )
        .unwrap();
        let fc = control::build(&u, &p.grid, p.params.eps, &p.ham);
        let m = fpk::evolve(p.initial_masses(), &fc, &p.grid, &disc, p.params.h).unwrap();
        assert!(m.l1_sup_distance(&sol.mu) <= 2e-10);
    }
}
