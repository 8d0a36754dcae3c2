//! Monte-Carlo simulation of the discrete controlled jump diffusion under a
//! frozen feedback control: the probabilistic oracle for the FPK density.
//! Per step a path either diffuses (random walk with drift) or jumps
//! (Bernoulli trigger equivalent to the geometric waiting-time law), never
//! both.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::FeedbackControl;
use crate::error::{MfgError, Result};
use crate::grid::Grid;
use crate::levy::LevyDiscretization;
use crate::par;

pub struct SimConfig<'a> {
    pub n_paths: usize,
    pub seed: u64,
    pub fc: &'a FeedbackControl,
    pub disc: &'a LevyDiscretization,
    pub grid: &'a Grid,
    pub h: f64,
}

/// Empirical measures per time slice, binned on the grid cells, plus the
/// fraction of paths absorbed outside [a, b].
pub struct Empirical {
    pub hist: Vec<Vec<f64>>,
    pub leak: Vec<f64>,
}

/// Inverse-CDF tables for the categorical jump law nu_r / lambda_r (weight
/// table plus tail bucket) and for the initial cell masses.
struct Cdf {
    cum: Vec<f64>,
}

impl Cdf {
    fn new(weights: impl Iterator<Item = f64>) -> Cdf {
        let mut cum = Vec::new();
        let mut acc = 0.0;
        for w in weights {
            acc += w;
            cum.push(acc);
        }
        let total = acc;
        for c in &mut cum {
            *c /= total;
        }
        Cdf { cum }
    }

    fn sample(&self, u: f64) -> usize {
        self.cum.partition_point(|&c| c < u).min(self.cum.len() - 1)
    }
}

/// Runs all paths; per-path RNG streams are split off the seed by the path
/// index, so the path set is identical for a fixed seed regardless of the
/// thread count.
pub fn simulate(cfg: &SimConfig, m0: &[f64]) -> Empirical {
    let grid = cfg.grid;
    let disc = cfg.disc;
    let n_steps = cfg.fc.n_steps();
    let n_nodes = grid.n_nodes();
    let jump_prob = if disc.total_intensity() > 0.0 {
        1.0 - (-cfg.h * disc.lambda_r).exp()
    } else {
        0.0
    };
    let jump_cdf = if jump_prob > 0.0 {
        Some(Cdf::new(disc.weights().iter().copied().chain([disc.tail_mass])))
    } else {
        None
    };
    let m0_cdf = Cdf::new(m0.iter().copied());
    let sqh_sigma = cfg.h.sqrt() * disc.sigma_r;
    let n_chunks = 64.min(cfg.n_paths).max(1);
    // each chunk accumulates its own histogram; the sum is order-independent
    // in exact counts, so results are deterministic for a fixed seed
    let chunks = par::map_indexed(n_chunks, |chunk| {
        let lo = cfg.n_paths * chunk / n_chunks;
        let hi = cfg.n_paths * (chunk + 1) / n_chunks;
        let mut counts = vec![vec![0u64; n_nodes]; n_steps + 1];
        let mut leaked = vec![0u64; n_steps + 1];
        for path in lo..hi {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(path as u64 + 1);
            let mut x = grid.node(m0_cdf.sample(rng.gen::<f64>()));
            let mut alive = true;
            for k in 0..=n_steps {
                if alive {
                    counts[k][grid.cell_of(x).expect("alive path inside [a,b]")] += 1;
                } else {
                    leaked[k] += 1;
                }
                if k == n_steps || !alive {
                    continue;
                }
                // one event per interval: jump or diffuse, never both
                if jump_prob > 0.0 && rng.gen::<f64>() < jump_prob {
                    let idx = jump_cdf.as_ref().unwrap().sample(rng.gen::<f64>());
                    if idx == disc.weights().len() {
                        alive = false; // tail bucket: jump beyond the table
                        continue;
                    }
                    let z = (idx as isize - disc.offset_max()) as f64 * disc.rho;
                    x += z;
                } else {
                    let alpha = grid.interp(&cfg.fc.alpha[k], 0.0, x);
                    let xi = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    x += cfg.h * (-alpha - disc.b_r) + sqh_sigma * xi;
                }
                if x < grid.a || x > grid.b {
                    alive = false;
                }
            }
        }
        (counts, leaked)
    });
    let scale = 1.0 / cfg.n_paths as f64;
    let mut hist = vec![vec![0.0; n_nodes]; n_steps + 1];
    let mut leak = vec![0.0; n_steps + 1];
    for (counts, leaked) in chunks {
        for k in 0..=n_steps {
            for i in 0..n_nodes {
                hist[k][i] += counts[k][i] as f64 * scale;
            }
            leak[k] += leaked[k] as f64 * scale;
        }
    }
    Empirical { hist, leak }
}

/// Draws `n_draws` jump sizes and returns the sup distance between the
/// empirical CDF and the normalized weight-table CDF (tail bucket included).
pub fn jump_sampler_check(disc: &LevyDiscretization, n_draws: usize, seed: u64) -> Result<f64> {
    if disc.lambda_r <= 0.0 {
        return Err(MfgError::DegenerateIntensity);
    }
    let cdf = Cdf::new(disc.weights().iter().copied().chain([disc.tail_mass]));
    let n_bins = cdf.cum.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; n_bins];
    for _ in 0..n_draws {
        counts[cdf.sample(rng.gen::<f64>())] += 1;
    }
    let mut emp = 0.0;
    let mut sup: f64 = 0.0;
    for (i, &c) in counts.iter().enumerate() {
        emp += c as f64 / n_draws as f64;
        sup = sup.max((emp - cdf.cum[i]).abs());
    }
    Ok(sup)
}
