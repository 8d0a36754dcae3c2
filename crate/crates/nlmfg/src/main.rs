//! Command-line front end: solves the coupled system or its halves from a
//! TOML config (or a named preset) and writes CSV results plus a manifest.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nlmfg::config::{Config, PRESET_NAMES};
use nlmfg::coupler::{self, MfgProblem};
use nlmfg::error::MfgError;
use nlmfg::fpk;
use nlmfg::hjb::{self, StepCtx};
use nlmfg::io::{Manifest, ResolvedParams, RunDir};
use nlmfg::levy;
use nlmfg::mc::{self, SimConfig};
use nlmfg::metrics;
use nlmfg::{control, Result};

#[derive(Parser)]
#[command(
    name = "nlmfg",
    version,
    about = "Semi-Lagrangian solver for mean field games with nonlocal diffusion"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Path to a TOML configuration file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset (example1, example2-{i..iv}, example3, example4).
    #[arg(long)]
    preset: Option<String>,
    /// Output directory for CSVs and the manifest.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Proceed despite CFL ratio violations.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the backward HJB equation with the coupling frozen at m0.
    SolveHjb(Common),
    /// Solve HJB with frozen coupling, then evolve the density forward.
    SolveFpk(Common),
    /// Solve the coupled system by damped fixed-point iteration.
    SolveMfg(Common),
    /// Cross-check the density against a Monte-Carlo particle simulation.
    McValidate {
        #[command(flatten)]
        common: Common,
        /// Number of simulated paths.
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long, default_value_t = 1234)]
        seed: u64,
        /// Largest acceptable flat distance at the final time.
        #[arg(long, default_value_t = 0.05)]
        max_flat: f64,
    },
    /// Run the h-ladder refinement study defined in the config.
    ConvergenceStudy(Common),
    /// Run the structural property suite on the configured problem.
    CheckInvariants {
        #[command(flatten)]
        common: Common,
        /// Coarsen the resolution for a fast smoke run.
        #[arg(long)]
        quick: bool,
    },
    /// Derive and export the jump quadrature weight table.
    ExportWeights(Common),
}

fn load_config(common: &Common) -> Result<Config> {
    let mut cfg = match (&common.config, &common.preset) {
        (Some(path), None) => Config::from_path(path)?,
        (None, Some(name)) => Config::preset(name)?,
        (None, None) => {
            return Err(MfgError::Config(format!(
                "pass --config <file> or --preset <name> (presets: {})",
                PRESET_NAMES.join(", ")
            )))
        }
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    if common.force {
        cfg.cfl.force = true;
    }
    Ok(cfg)
}

fn resolved_params(p: &MfgProblem) -> ResolvedParams {
    ResolvedParams {
        rho: p.params.rho,
        h: p.params.h,
        r: p.params.r,
        eps: p.params.eps,
        n_steps: p.n_steps(),
        n_nodes: p.grid.n_nodes(),
    }
}

/// Frozen coupling: the initial density replicated over all time slices.
fn frozen_mu(p: &MfgProblem) -> Vec<Vec<f64>> {
    vec![p.initial_masses(); p.n_steps() + 1]
}

fn solve_hjb_cmd(common: &Common) -> Result<()> {
    let t0 = Instant::now();
    let cfg = load_config(common)?;
    let p = cfg.resolve()?;
    let cfl = p.check_cfl(cfg.cfl.threshold, cfg.cfl.force)?;
    let disc = p.derive_levy()?;
    let alpha_bound = p.regularity().alpha_bound(p.horizon);
    let u = hjb::solve_backward(
        &p.grid, &disc, &p.ham, &p.costs, p.params.h, &frozen_mu(&p), p.params.eps, alpha_bound,
    )?;
    let mut run = RunDir::create(&common.out)?;
    run.export_value_field(&p.grid, &u)?;
    run.export_weights(&disc)?;
    let mut manifest = Manifest::new("solve-hjb", cfg.hash(), cfg.to_toml(), resolved_params(&p));
    manifest.cfl = Some(cfl);
    manifest.wall_secs = t0.elapsed().as_secs_f64();
    manifest.extra = serde_json::json!({ "alpha_bound": alpha_bound, "coupling": "frozen at m0" });
    run.finish(&manifest)
}

fn solve_fpk_cmd(common: &Common) -> Result<()> {
    let t0 = Instant::now();
    let cfg = load_config(common)?;
    let p = cfg.resolve()?;
    let cfl = p.check_cfl(cfg.cfl.threshold, cfg.cfl.force)?;
    let disc = p.derive_levy()?;
    let alpha_bound = p.regularity().alpha_bound(p.horizon);
    let u = hjb::solve_backward(
        &p.grid, &disc, &p.ham, &p.costs, p.params.h, &frozen_mu(&p), p.params.eps, alpha_bound,
    )?;
    let fc = control::build(&u, &p.grid, p.params.eps, &p.ham);
    let m = fpk::evolve(p.initial_masses(), &fc, &p.grid, &disc, p.params.h)?;
    let n = m.n_steps();
    let mut run = RunDir::create(&common.out)?;
    run.export_density_field(&p.grid, &m)?;
    run.export_weights(&disc)?;
    let mut manifest = Manifest::new("solve-fpk", cfg.hash(), cfg.to_toml(), resolved_params(&p));
    manifest.cfl = Some(cfl);
    manifest.wall_secs = t0.elapsed().as_secs_f64();
    manifest.extra = serde_json::json!({
        "terminal_mass": m.total_mass(n),
        "terminal_leak": m.leak[n],
        "coupling": "frozen at m0",
    });
    run.finish(&manifest)
}

fn solve_mfg_cmd(common: &Common) -> Result<()> {
    let t0 = Instant::now();
    let cfg = load_config(common)?;
    let p = cfg.resolve()?;
    let sol = coupler::solve(&p, &cfg.solve_opts())?;
    let disc = p.derive_levy()?;
    let n = sol.m.n_steps();
    let mut run = RunDir::create(&common.out)?;
    run.export_value_field(&p.grid, &sol.u)?;
    run.export_density_field(&p.grid, &sol.m)?;
    run.export_trace(&sol.trace)?;
    run.export_weights(&disc)?;
    let mut manifest = Manifest::new("solve-mfg", cfg.hash(), cfg.to_toml(), resolved_params(&p));
    manifest.cfl = Some(sol.cfl);
    manifest.wall_secs = t0.elapsed().as_secs_f64();
    manifest.extra = serde_json::json!({
        "iterations": sol.trace.iterations.len(),
        "final_l1_change": sol.trace.iterations.last().map(|r| r.l1_change),
        "terminal_mass": sol.m.total_mass(n),
        "terminal_leak": sol.m.leak[n],
    });
    manifest.trace = Some(sol.trace);
    run.finish(&manifest)
}

fn mc_validate_cmd(common: &Common, paths: usize, seed: u64, max_flat: f64) -> Result<()> {
    let t0 = Instant::now();
    let cfg = load_config(common)?;
    let p = cfg.resolve()?;
    let sol = coupler::solve(&p, &cfg.solve_opts())?;
    let disc = p.derive_levy()?;
    let sim = SimConfig {
        n_paths: paths,
        seed,
        fc: &sol.control,
        disc: &disc,
        grid: &p.grid,
        h: p.params.h,
    };
    let emp = mc::simulate(&sim, &p.initial_masses());
    let n = sol.m.n_steps();
    let flat = metrics::flat_distance(&emp.hist[n], &sol.m.m[n], p.params.rho)?;
    let sampler_defect = if disc.has_jumps() {
        Some(mc::jump_sampler_check(&disc, 1_000_000, seed)?)
    } else {
        None
    };
    let mut run = RunDir::create(&common.out)?;
    run.export_density_field(&p.grid, &sol.m)?;
    run.export_histogram(&p.grid, &emp)?;
    let mut manifest = Manifest::new("mc-validate", cfg.hash(), cfg.to_toml(), resolved_params(&p));
    manifest.cfl = Some(sol.cfl);
    manifest.wall_secs = t0.elapsed().as_secs_f64();
    manifest.extra = serde_json::json!({
        "paths": paths,
        "seed": seed,
        "flat_distance_terminal": flat,
        "max_flat": max_flat,
        "sampler_sup_cdf_defect": sampler_defect,
        "mc_terminal_leak": emp.leak[n],
        "fpk_terminal_leak": sol.m.leak[n],
    });
    run.finish(&manifest)?;
    println!("flat distance at T: {flat:.6} (limit {max_flat})");
    if flat > max_flat {
        return Err(MfgError::Config(format!(
            "Monte-Carlo cross-check failed: flat distance {flat:.6} > {max_flat}"
        )));
    }
    Ok(())
}

fn convergence_study_cmd(common: &Common) -> Result<()> {
    let t0 = Instant::now();
    let cfg = load_config(common)?;
    let study = cfg.study.clone().ok_or_else(|| {
        MfgError::Config("config has no [study] section (try --preset example4)".into())
    })?;
    let ladder: Vec<MfgProblem> = study
        .ladder
        .iter()
        .map(|&h| cfg.at_resolution(h).resolve())
        .collect::<Result<_>>()?;
    let reference = cfg.at_resolution(study.reference).resolve()?;
    let result =
        coupler::convergence_study(&ladder, &reference, (study.roi[0], study.roi[1]), &cfg.solve_opts())?;
    println!("{:>12} {:>12} {:>12}", "h", "ERR_u", "ERR_m");
    for l in &result.levels {
        println!("{:>12.6} {:>12.4e} {:>12.4e}", l.h, l.err_u, l.err_m);
    }
    println!("fitted order: u {:.3}, m {:.3}", result.order_u, result.order_m);
    let mut run = RunDir::create(&common.out)?;
    let rows: Vec<String> = result
        .levels
        .iter()
        .map(|l| format!("{:.17e},{:.17e},{:.17e}", l.h, l.err_u, l.err_m))
        .collect();
    run.export_table("study.csv", "h,err_u,err_m", &rows)?;
    let mut manifest =
        Manifest::new("convergence-study", cfg.hash(), cfg.to_toml(), resolved_params(&reference));
    manifest.wall_secs = t0.elapsed().as_secs_f64();
    manifest.extra = serde_json::to_value(&result).unwrap();
    run.finish(&manifest)
}

struct CheckOutcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn run_invariant_checks(p: &MfgProblem, quick: bool) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let disc = p.derive_levy()?;
    let grid = &p.grid;
    let h = p.params.h;

    // jump weight identity: sum of table weights + tail = lambda_r
    let (pass, detail) = if disc.has_jumps() {
        let defect = levy::weight_row_sum_check(&disc)?;
        (defect <= 1e-10, format!("relative defect {defect:.3e}"))
    } else {
        (true, "no jump part".into())
    };
    out.push(CheckOutcome { name: "weight-identity", pass, detail });

    // HJB monotonicity + commutation by constants on random fields
    let alpha_bound = p.regularity().alpha_bound(p.horizon);
    let ctx = StepCtx { grid, disc: &disc, ham: &p.ham, h, ghost: 10.0, alpha_bound };
    let f_slice = vec![0.0; grid.n_nodes()];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n_fields = if quick { 10 } else { 100 };
    let mut worst_mono: f64 = 0.0;
    let mut worst_comm: f64 = 0.0;
    for _ in 0..n_fields {
        let v: Vec<f64> = (0..grid.n_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = v.iter().map(|&x| x + rng.gen::<f64>()).collect();
        let sv = hjb::step(&ctx, &v, &f_slice)?;
        let sw = hjb::step(&ctx, &w, &f_slice)?;
        for i in 0..v.len() {
            worst_mono = worst_mono.max(sv[i] - sw[i]);
        }
        let c = rng.gen_range(-2.0..2.0);
        let vc: Vec<f64> = v.iter().map(|&x| x + c).collect();
        let ctx_c = StepCtx {
            grid,
            disc: &disc,
            ham: &p.ham,
            h,
            ghost: ctx.ghost + c,
            alpha_bound,
        };
        let svc = hjb::step(&ctx_c, &vc, &f_slice)?;
        for i in 0..v.len() {
            worst_comm = worst_comm.max((svc[i] - sv[i] - c).abs());
        }
    }
    out.push(CheckOutcome {
        name: "hjb-monotonicity",
        pass: worst_mono <= 1e-12,
        detail: format!("worst violation {worst_mono:.3e} over {n_fields} field pairs"),
    });
    out.push(CheckOutcome {
        name: "hjb-commutation",
        pass: worst_comm <= 1e-12,
        detail: format!("worst defect {worst_comm:.3e} over {n_fields} fields"),
    });

    // FPK kernel: nonnegative entries, column sums <= 1 including the sink
    let fc = control::FeedbackControl::constant(0.3, 1, grid.n_nodes(), p.params.eps);
    let kernel = fpk::kernel(&fc, grid, &disc, h, 0);
    let mut min_entry: f64 = 0.0;
    let mut worst_col: f64 = 0.0;
    for j in 0..grid.n_nodes() {
        let (col, leak) = kernel.column(j);
        for &(_, w) in &col {
            min_entry = min_entry.min(w);
        }
        let sum: f64 = col.iter().map(|&(_, w)| w).sum::<f64>() + leak;
        worst_col = worst_col.max((sum - 1.0).abs());
    }
    out.push(CheckOutcome {
        name: "fpk-kernel-stochastic",
        pass: min_entry >= -1e-15 && worst_col <= 1e-12,
        detail: format!("min entry {min_entry:.3e}, worst |column sum - 1| {worst_col:.3e}"),
    });

    // mass conservation and positivity along a full forward evolution
    let n_steps = if quick { p.n_steps().min(40) } else { p.n_steps() };
    let fc = control::FeedbackControl::constant(0.2, n_steps, grid.n_nodes(), p.params.eps);
    let m = fpk::evolve(p.initial_masses(), &fc, grid, &disc, h)?;
    let mut worst_mass: f64 = 0.0;
    let mut min_mass: f64 = 0.0;
    for k in 0..=n_steps {
        // total_mass already includes the cumulative sink
        worst_mass = worst_mass.max((m.total_mass(k) - 1.0).abs());
        min_mass = min_mass.min(m.m[k].iter().cloned().fold(0.0, f64::min));
    }
    out.push(CheckOutcome {
        name: "fpk-mass-conservation",
        pass: worst_mass <= 1e-12 && min_mass >= -1e-13,
        detail: format!("worst |mass + leak - 1| {worst_mass:.3e}, min cell mass {min_mass:.3e}"),
    });

    Ok(out)
}

fn check_invariants_cmd(common: &Common, quick: bool) -> Result<()> {
    let t0 = Instant::now();
    let cfg = load_config(common)?;
    let cfg = if quick {
        let h = cfg.params.h.max(0.025);
        cfg.at_resolution(h)
    } else {
        cfg
    };
    let p = cfg.resolve()?;
    let cfl = p.check_cfl(cfg.cfl.threshold, cfg.cfl.force)?;
    let checks = run_invariant_checks(&p, quick)?;
    let mut failures = Vec::new();
    let mut extra = serde_json::Map::new();
    for c in &checks {
        let verdict = if c.pass { "pass" } else { "FAIL" };
        println!("{:<24} {} ({})", c.name, verdict, c.detail);
        extra.insert(c.name.into(), serde_json::json!({ "pass": c.pass, "detail": c.detail }));
        if !c.pass {
            failures.push(c.name);
        }
    }
    let run = RunDir::create(&common.out)?;
    let mut manifest =
        Manifest::new("check-invariants", cfg.hash(), cfg.to_toml(), resolved_params(&p));
    manifest.cfl = Some(cfl);
    manifest.wall_secs = t0.elapsed().as_secs_f64();
    manifest.extra = serde_json::Value::Object(extra);
    run.finish(&manifest)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(MfgError::Config(format!("invariant violations: {}", failures.join(", "))))
    }
}

fn export_weights_cmd(common: &Common) -> Result<()> {
    let t0 = Instant::now();
    let cfg = load_config(common)?;
    let p = cfg.resolve()?;
    let disc = p.derive_levy()?;
    let mut run = RunDir::create(&common.out)?;
    run.export_weights(&disc)?;
    let mut manifest =
        Manifest::new("export-weights", cfg.hash(), cfg.to_toml(), resolved_params(&p));
    manifest.wall_secs = t0.elapsed().as_secs_f64();
    manifest.extra = serde_json::json!({
        "r": disc.r,
        "sigma_r": disc.sigma_r,
        "b_r": disc.b_r,
        "lambda_r": disc.lambda_r,
        "tail_mass": disc.tail_mass,
        "offset_max": disc.offset_max(),
    });
    run.finish(&manifest)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::SolveHjb(c) => solve_hjb_cmd(c),
        Cmd::SolveFpk(c) => solve_fpk_cmd(c),
        Cmd::SolveMfg(c) => solve_mfg_cmd(c),
        Cmd::McValidate { common, paths, seed, max_flat } => {
            mc_validate_cmd(common, *paths, *seed, *max_flat)
        }
        Cmd::ConvergenceStudy(c) => convergence_study_cmd(c),
        Cmd::CheckInvariants { common, quick } => check_invariants_cmd(common, *quick),
        Cmd::ExportWeights(c) => export_weights_cmd(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ MfgError::CflViolation { .. }) => {
            eprintln!("refused: {e} (rerun with --force to override)");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
