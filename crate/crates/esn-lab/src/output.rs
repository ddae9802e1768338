//! CSV and metadata emission. CSV bodies are deterministic functions of the
//! results (floats use shortest round-trip formatting), so reruns of the same
//! resolved configuration produce byte-identical files; the metadata sidecar
//! additionally records wall time and versions.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use esn_core::analysis::CapacitySurface;
use serde::Serialize;

use crate::config::ExperimentFile;
use crate::tasks::TaskResult;

/// Pinned header of the accuracy-curve CSV.
pub const CURVES_HEADER: &str = "experiment,variant,matrix,readout,N,D,alpha,beta,gamma,d,accuracy_empirical,stderr,accuracy_theory_full,accuracy_theory_indep,accuracy_theory_iid,trials";

/// Pinned header of the geometry CSV.
pub const GEOMETRY_HEADER: &str = "readout,D,d,mean_cosine,etf_target,mu_h_minus_mu_r_cosine,sigma_h";

/// Pinned header of the capacity-surface CSV.
pub const SURFACE_HEADER: &str = "beta,gamma,I_tot_bits";

/// Per-run identification columns of the curves CSV.
#[derive(Debug, Clone)]
pub struct RunMeta {
    pub label: String,
    pub variant: String,
    pub matrix: String,
    pub readout: String,
    pub n: usize,
    pub d_alphabet: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per (run, delay); blank fields for unavailable predictors.
pub fn curves_csv(rows: &[(RunMeta, TaskResult)]) -> String {
    let mut out = String::from(CURVES_HEADER);
    out.push('\n');
    for (meta, result) in rows {
        for s in &result.delays {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                meta.label,
                meta.variant,
                meta.matrix,
                meta.readout,
                meta.n,
                meta.d_alphabet,
                meta.alpha,
                meta.beta,
                meta.gamma,
                s.d,
                s.accuracy,
                s.stderr,
                opt(s.theory_full),
                opt(s.theory_indep),
                opt(s.theory_iid),
                result.trials,
            );
        }
    }
    out
}

/// One row per (run, delay) for runs that collected geometry diagnostics.
pub fn geometry_csv(rows: &[(RunMeta, TaskResult)]) -> String {
    let mut out = String::from(GEOMETRY_HEADER);
    out.push('\n');
    for (meta, result) in rows {
        for s in &result.delays {
            if let Some(g) = &s.geometry {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    meta.readout,
                    meta.d_alphabet,
                    s.d,
                    g.mean_cosine,
                    g.etf_target,
                    g.class_mean_cosine,
                    g.sigma_h,
                );
            }
        }
    }
    out
}

/// Long-format capacity surface, one row per (beta, gamma) cell.
pub fn surface_csv(surface: &CapacitySurface) -> String {
    let mut out = String::from(SURFACE_HEADER);
    out.push('\n');
    for (bi, &beta) in surface.betas.iter().enumerate() {
        for (gi, &gamma) in surface.gammas.iter().enumerate() {
            let _ = writeln!(out, "{beta:.4},{gamma:.4},{}", surface.at(bi, gi));
        }
    }
    out
}

/// One row per distractor period of the minimal-reservoir search.
#[derive(Debug, Clone, Copy)]
pub struct FiveBitRow {
    pub t: usize,
    pub n_theory: Option<usize>,
    pub n_empirical: Option<usize>,
}

pub fn fivebit_csv(rows: &[FiveBitRow]) -> String {
    let mut out = String::from("t,n_theory,n_empirical\n");
    for r in rows {
        let fmt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{}", r.t, fmt(r.n_theory), fmt(r.n_empirical));
    }
    out
}

/// One constructed moment instance scored by every predictor tier, with a
/// Monte-Carlo reference.
#[derive(Debug, Clone)]
pub struct TierRow {
    pub case: String,
    pub p_full: f64,
    pub p_indep: f64,
    pub p_iid: f64,
    pub p_mc: f64,
    pub mc_samples: u64,
}

pub fn tiers_csv(rows: &[TierRow]) -> String {
    let mut out = String::from("case,p_full,p_indep,p_iid,p_mc,mc_samples\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.case, r.p_full, r.p_indep, r.p_iid, r.p_mc, r.mc_samples
        );
    }
    out
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    name: &'a str,
    seed: u64,
    jobs: usize,
    version: &'a str,
    wall_seconds: f64,
    files: &'a [String],
    /// The fully resolved configuration; feeding it back through `run`
    /// reproduces the CSV bodies byte for byte.
    config: &'a ExperimentFile,
}

pub fn metadata_json(
    config: &ExperimentFile,
    jobs: usize,
    wall_seconds: f64,
    files: &[String],
) -> String {
    let meta = Metadata {
        name: &config.name,
        seed: config.seed,
        jobs,
        version: env!("CARGO_PKG_VERSION"),
        wall_seconds,
        files,
        config,
    };
    let mut text = serde_json::to_string_pretty(&meta).expect("metadata serialization");
    text.push('\n');
    text
}

/// Tracks emitted files so a failing run can remove its partial outputs.
#[derive(Debug)]
pub struct OutputWriter {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputWriter {
    pub fn new(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> std::io::Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// Names of the files written so far, in emission order.
    pub fn names(&self) -> Vec<String> {
        self.written
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect()
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.written
    }

    /// Remove everything written (cleanup after a mid-run error).
    pub fn discard(self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
    }
}
