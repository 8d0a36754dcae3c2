//! Results-directory output: CSV exports for the value field, density field,
//! iteration trace, jump weights, and Monte-Carlo histograms, plus a JSON
//! run manifest that lists every written file with its SHA-256 checksum.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::coupler::{CflReport, FixedPointTrace};
use crate::error::Result;
use crate::fpk::DensityField;
use crate::grid::Grid;
use crate::hjb::ValueField;
use crate::levy::LevyDiscretization;
use crate::mc::Empirical;

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Accumulates files written into one results directory and finishes with
/// `manifest.json`.
pub struct RunDir {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl RunDir {
    pub fn create(dir: &Path) -> Result<RunDir> {
        fs::create_dir_all(dir)?;
        Ok(RunDir { dir: dir.to_path_buf(), files: BTreeMap::new() })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.dir.join(name), contents)?;
        self.files.insert(name.to_string(), sha256_hex(contents.as_bytes()));
        Ok(())
    }

    fn write_csv(&mut self, name: &str, header: &str, rows: &[String]) -> Result<()> {
        let mut out = String::with_capacity(rows.len() * 32 + header.len() + 1);
        out.push_str(header);
        out.push('\n');
        for row in rows {
            out.push_str(row);
            out.push('\n');
        }
        self.write(name, &out)
    }

    /// `u.csv`: columns `k,i,x_i,u`.
    pub fn export_value_field(&mut self, grid: &Grid, u: &ValueField) -> Result<()> {
        let rows: Vec<String> = u
            .u
            .iter()
            .enumerate()
            .flat_map(|(k, slice)| {
                slice
                    .iter()
                    .enumerate()
                    .map(move |(i, &v)| format!("{k},{i},{:.17e},{v:.17e}", grid.node(i)))
            })
            .collect();
        self.write_csv("u.csv", "k,i,x_i,u", &rows)
    }

    /// `m.csv`: columns `k,i,x_i,m` where `m` is the density (cell mass / rho).
    pub fn export_density_field(&mut self, grid: &Grid, m: &DensityField) -> Result<()> {
        self.export_density_as(grid, &m.m, m.rho, "m.csv")
    }

    /// `mc.csv`: empirical Monte-Carlo histogram in the density-field format.
    pub fn export_histogram(&mut self, grid: &Grid, emp: &Empirical) -> Result<()> {
        self.export_density_as(grid, &emp.hist, grid.rho, "mc.csv")
    }

    fn export_density_as(
        &mut self,
        grid: &Grid,
        masses: &[Vec<f64>],
        rho: f64,
        name: &str,
    ) -> Result<()> {
        let rows: Vec<String> = masses
            .iter()
            .enumerate()
            .flat_map(|(k, slice)| {
                slice.iter().enumerate().map(move |(i, &mass)| {
                    format!("{k},{i},{:.17e},{:.17e}", grid.node(i), mass / rho)
                })
            })
            .collect();
        self.write_csv(name, "k,i,x_i,m", &rows)
    }

    /// `trace.csv`: one row per fixed-point iteration.
    pub fn export_trace(&mut self, trace: &FixedPointTrace) -> Result<()> {
        let rows: Vec<String> = trace
            .iterations
            .iter()
            .enumerate()
            .map(|(i, r)| {
                format!(
                    "{i},{:.17e},{:.17e},{:.6},{:.6}",
                    r.l1_change, r.flat_change, r.hjb_secs, r.fpk_secs
                )
            })
            .collect();
        self.write_csv("trace.csv", "iter,l1_change,flat_change,hjb_secs,fpk_secs", &rows)
    }

    /// `weights.csv`: the jump quadrature table, columns `j,z_j,omega_j`.
    pub fn export_weights(&mut self, disc: &LevyDiscretization) -> Result<()> {
        let jmax = disc.offset_max();
        let rows: Vec<String> = (-jmax..=jmax)
            .map(|j| format!("{j},{:.17e},{:.17e}", j as f64 * disc.rho, disc.weight(j)))
            .collect();
        self.write_csv("weights.csv", "j,z_j,omega_j", &rows)
    }

    /// Arbitrary study tables (e.g. convergence results).
    pub fn export_table(&mut self, name: &str, header: &str, rows: &[String]) -> Result<()> {
        self.write_csv(name, header, rows)
    }

    /// Writes `manifest.json` and consumes the directory handle. `extra`
    /// carries command-specific fields (metrics, notes, parameters).
    pub fn finish(mut self, manifest: &Manifest) -> Result<()> {
        let mut doc = serde_json::to_value(manifest).expect("manifest serializes");
        doc["files"] = serde_json::to_value(&self.files).unwrap();
        let text = serde_json::to_string_pretty(&doc).unwrap() + "\n";
        self.write("manifest.json", &text)?;
        Ok(())
    }
}

/// Run metadata stored next to the CSVs; `files` is filled in by
/// [`RunDir::finish`].
#[derive(Debug, Clone, serde::Serialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    /// The full configuration, embedded for reproducibility.
    pub config_toml: String,
    /// Resolved discretization actually used (post-snap).
    pub resolved: ResolvedParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cfl: Option<CflReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<FixedPointTrace>,
    pub wall_secs: f64,
    /// Command-specific metrics and notes.
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ResolvedParams {
    pub rho: f64,
    pub h: f64,
    pub r: f64,
    pub eps: f64,
    pub n_steps: usize,
    pub n_nodes: usize,
}

impl Manifest {
    pub fn new(command: &str, config_hash: String, config_toml: String, resolved: ResolvedParams) -> Manifest {
        Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash,
            config_toml,
            resolved,
            cfl: None,
            trace: None,
            wall_secs: 0.0,
            extra: serde_json::Value::Object(Default::default()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::coupler::IterRecord;

    #[test]
    fn manifest_lists_every_csv_with_checksum() {
        let tmp = std::env::temp_dir().join(format!("nlmfg-io-test-{}", std::process::id()));
        let grid = Grid::new(0.0, 1.0, 0.25);
        let mut run = RunDir::create(&tmp).unwrap();
        let u = ValueField {
            u: vec![vec![0.0; grid.n_nodes()]; 2],
            rho: 0.25,
            h: 0.5,
            r: 0.5,
            eps: 0.5,
            ghost: 0.0,
        };
        run.export_value_field(&grid, &u).unwrap();
        let trace = FixedPointTrace {
            iterations: vec![IterRecord {
                l1_change: 0.5,
                flat_change: 0.25,
                hjb_secs: 0.1,
                fpk_secs: 0.1,
            }],
        };
        run.export_trace(&trace).unwrap();
        let cfg = Config::preset("example1").unwrap();
        let manifest = Manifest::new(
            "solve-mfg",
            cfg.hash(),
            cfg.to_toml(),
            ResolvedParams { rho: 0.25, h: 0.5, r: 0.5, eps: 0.5, n_steps: 1, n_nodes: 5 },
        );
        run.finish(&manifest).unwrap();

        let text = std::fs::read_to_string(tmp.join("manifest.json")).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        let files = doc["files"].as_object().unwrap();
        for entry in std::fs::read_dir(&tmp).unwrap() {
            let name = entry.unwrap().file_name().into_string().unwrap();
            if name.ends_with(".csv") {
                let hash = files[&name].as_str().unwrap();
                let bytes = std::fs::read(tmp.join(&name)).unwrap();
                assert_eq!(hash, sha256_hex(&bytes), "{name}");
            }
        }
        assert_eq!(doc["config_hash"].as_str().unwrap(), cfg.hash());
        // u.csv has header + 2 slices x 5 nodes
        let u_csv = std::fs::read_to_string(tmp.join("u.csv")).unwrap();
        assert_eq!(u_csv.lines().count(), 1 + 10);
        std::fs::remove_dir_all(&tmp).unwrap();
    }
}
