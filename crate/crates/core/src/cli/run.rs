//! `simulate`, `theory` and `calibrate` drivers and the output manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{
    config_digest, replica_seed, run_observed, sidecar_path, Observer, Population, SimOptions, SignSidecar,
};
use crate::error::{Error, Result};
use crate::stats::{average_curves, default_acf_window, fit_powerlaw, fit_prefactor, AcfAccumulator, LengthHistogram, PowerLawFit};
use crate::theory::{exact_acf_market, hetero_acf_asymptote_curve, lower_bound_pt_count, AcfCurve, CurveKind};

use super::config::ExperimentConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Index of everything a run wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub seeds: Vec<u64>,
    /// File names relative to the output directory.
    pub files: Vec<String>,
    pub timings_seconds: BTreeMap<String, f64>,
    pub version: String,
    pub warnings: Vec<String>,
    /// SHA-256 over the contents of all listed files.
    pub output_digest: String,
}

/// Sidecar written next to every CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSidecar {
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub kind: String,
}

/// Collects output files in a directory and produces the manifest.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
    config_digest: String,
    seeds: Vec<u64>,
}

impl OutputDir {
    pub fn create(root: &Path, config_digest: &str, seeds: &[u64]) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            files: Vec::new(),
            config_digest: config_digest.to_string(),
            seeds: seeds.to_vec(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Registers an already-written file (and its sidecar, if present).
    pub fn register(&mut self, name: &str) {
        self.files.push(name.to_string());
        let side = format!("{name}.json");
        if self.root.join(&side).exists() {
            self.files.push(side);
        }
    }

    pub fn write_csv(&mut self, name: &str, contents: &str, kind: &str) -> Result<()> {
        std::fs::write(self.path(name), contents)?;
        let side = CsvSidecar {
            config_digest: self.config_digest.clone(),
            seeds: self.seeds.clone(),
            kind: kind.to_string(),
        };
        std::fs::write(sidecar_path(&self.path(name)), serde_json::to_string_pretty(&side)?)?;
        self.register(name);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        std::fs::write(self.path(name), serde_json::to_string_pretty(value)?)?;
        self.register(name);
        Ok(())
    }

    pub fn finish(self, timings: BTreeMap<String, f64>, warnings: Vec<String>) -> Result<RunManifest> {
        let mut h = Sha256::new();
        for f in &self.files {
            h.update(f.as_bytes());
            h.update(std::fs::read(self.root.join(f))?);
        }
        let manifest = RunManifest {
            config_digest: self.config_digest,
            seeds: self.seeds,
            files: self.files,
            timings_seconds: timings,
            version: VERSION.to_string(),
            warnings,
            output_digest: hex::encode(h.finalize()),
        };
        std::fs::write(self.root.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

/// Streams `trader_id,length` rows.
struct MetaorderCsv {
    w: BufWriter<File>,
    failed: Option<std::io::Error>,
}

impl Observer for MetaorderCsv {
    fn on_metaorder(&mut self, trader: usize, length: u64) {
        if self.failed.is_none() {
            if let Err(e) = writeln!(self.w, "{trader},{length}") {
                self.failed = Some(e);
            }
        }
    }
}

/// Streams raw int8 signs.
struct SignFile {
    w: BufWriter<File>,
    failed: Option<std::io::Error>,
}

impl Observer for SignFile {
    fn on_signs(&mut self, signs: &[i8]) {
        if self.failed.is_none() {
            let bytes: Vec<u8> = signs.iter().map(|&s| s as u8).collect();
            if let Err(e) = self.w.write_all(&bytes) {
                self.failed = Some(e);
            }
        }
    }
}

/// Optional per-replica file outputs.
#[derive(Debug, Clone, Default)]
pub struct ReplicaFiles {
    pub metaorders: Option<PathBuf>,
    pub signs: Option<PathBuf>,
}

/// What one replica measured.
pub struct Measurement {
    /// Dense sample ACF on lags `1..=max_lag`.
    pub acf: AcfCurve,
    pub lengths: Option<LengthHistogram>,
}

/// Runs one replica, streaming its signs into an ACF accumulator and,
/// optionally, metaorder lengths of `length_ids` into a histogram.
pub fn measure(
    population: &Population,
    steps: u64,
    seed: u64,
    options: &SimOptions,
    max_lag: usize,
    length_ids: Option<&[usize]>,
    files: &ReplicaFiles,
) -> Result<Measurement> {
    struct Sink {
        acf: AcfAccumulator,
        hist: Option<LengthHistogram>,
        csv: Option<MetaorderCsv>,
        signs: Option<SignFile>,
    }
    impl Observer for Sink {
        fn on_signs(&mut self, s: &[i8]) {
            self.acf.push(s);
            if let Some(f) = &mut self.signs {
                f.on_signs(s);
            }
        }
        fn on_metaorder(&mut self, trader: usize, length: u64) {
            if let Some(h) = &mut self.hist {
                h.on_metaorder(trader, length);
            }
            if let Some(c) = &mut self.csv {
                c.on_metaorder(trader, length);
            }
        }
    }
    let csv = match &files.metaorders {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            writeln!(w, "trader_id,length")?;
            Some(MetaorderCsv { w, failed: None })
        }
        None => None,
    };
    let signs = match &files.signs {
        Some(p) => Some(SignFile {
            w: BufWriter::new(File::create(p)?),
            failed: None,
        }),
        None => None,
    };
    let mut sink = Sink {
        acf: AcfAccumulator::new(max_lag),
        hist: length_ids.map(|ids| LengthHistogram::new(population.len(), ids)),
        csv,
        signs,
    };
    run_observed(population, steps, seed, options, &mut sink)?;
    if let Some(mut c) = sink.csv {
        if let Some(e) = c.failed {
            return Err(e.into());
        }
        c.w.flush()?;
    }
    if let Some(mut s) = sink.signs {
        if let Some(e) = s.failed {
            return Err(e.into());
        }
        s.w.flush()?;
    }
    Ok(Measurement {
        acf: sink.acf.finish()?,
        lengths: sink.hist,
    })
}

/// Restricts a dense curve to the requested lags.
pub fn select_lags(dense: &AcfCurve, lags: &[u64]) -> Result<AcfCurve> {
    let mut values = Vec::with_capacity(lags.len());
    let mut errs = Vec::with_capacity(lags.len());
    for &l in lags {
        let i = dense
            .lags
            .binary_search(&l)
            .map_err(|_| Error::domain(format!("lag {l} not measured")))?;
        values.push(dense.values[i]);
        if let Some(se) = &dense.stderr {
            errs.push(se[i]);
        }
    }
    AcfCurve::new(lags.to_vec(), values, dense.kind, dense.stderr.as_ref().map(|_| errs))
}

/// Command-line overrides for `simulate`.
#[derive(Debug, Clone, Default)]
pub struct SimulateOverrides {
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
    pub save_signs: bool,
}

pub fn run_simulate(config: &ExperimentConfig, out: &Path, overrides: &SimulateOverrides) -> Result<RunManifest> {
    let t0 = Instant::now();
    let mut timings = BTreeMap::new();
    let built = config.build_population()?;
    let pop = &built.population;
    let mut warnings = built.warnings.clone();
    let options = config.sim_options(pop);
    let base = overrides.seed.unwrap_or(config.seed);
    let replicas = overrides.replicas.unwrap_or(config.replicas).max(1);
    let seeds: Vec<u64> = (0..replicas as u64).map(|k| replica_seed(base, k)).collect();
    let digest = config_digest(pop, config.steps, &options);
    let mut dir = OutputDir::create(out, &digest, &seeds)?;
    let lags = &config.lags().0;
    let max_lag = *lags.last().unwrap() as usize;

    let names: Vec<(String, Option<String>)> = (0..replicas)
        .map(|k| {
            (
                format!("metaorders_r{k}.csv"),
                overrides.save_signs.then(|| format!("signs_r{k}.bin")),
            )
        })
        .collect();
    let results: Vec<Result<Measurement>> = seeds
        .par_iter()
        .zip(&names)
        .map(|(&seed, (m, s))| {
            let files = ReplicaFiles {
                metaorders: Some(dir.path(m)),
                signs: s.as_ref().map(|s| dir.path(s)),
            };
            measure(pop, config.steps, seed, &options, max_lag, None, &files)
        })
        .collect();
    let mut curves = Vec::with_capacity(replicas);
    for ((r, (m, s)), &seed) in results.into_iter().zip(&names).zip(&seeds) {
        curves.push(select_lags(&r?.acf, lags)?);
        let side = CsvSidecar {
            config_digest: digest.clone(),
            seeds: vec![seed],
            kind: "metaorder_log".into(),
        };
        std::fs::write(sidecar_path(&dir.path(m)), serde_json::to_string_pretty(&side)?)?;
        dir.register(m);
        if let Some(s) = s {
            let side = SignSidecar {
                steps: config.steps,
                seed,
                config_digest: digest.clone(),
                encoding: "int8".into(),
            };
            std::fs::write(sidecar_path(&dir.path(s)), serde_json::to_string_pretty(&side)?)?;
            dir.register(s);
        }
    }
    timings.insert("simulation".into(), t0.elapsed().as_secs_f64());

    let acf = average_curves(&curves)?;
    dir.write_csv("acf.csv", &acf.to_csv(), "simulated")?;

    let t1 = Instant::now();
    match exact_acf_market(pop, lags) {
        Ok(c) => dir.write_csv("theory.csv", &c.to_csv(), "exact")?,
        Err(e) => warnings.push(format!("exact theory skipped: {e}")),
    }
    if let Ok(c) = hetero_acf_asymptote_curve(pop, lags) {
        dir.write_csv("asymptote.csv", &c.to_csv(), "asymptotic")?;
    }
    timings.insert("theory".into(), t1.elapsed().as_secs_f64());
    timings.insert("total".into(), t0.elapsed().as_secs_f64());
    dir.finish(timings, warnings)
}

/// Exact market ACF of the configured population.
pub fn run_theory(config: &ExperimentConfig, lags: &[u64]) -> Result<AcfCurve> {
    let built = config.build_population()?;
    exact_acf_market(&built.population, lags)
}

pub const DEFAULT_MU: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub input: String,
    pub mu: f64,
    pub mu_source: String,
    pub gamma: f64,
    pub gamma_source: String,
    pub alpha: f64,
    pub prefactor: f64,
    pub fit: PowerLawFit,
    pub m_pt_lower_bound: f64,
}

/// Fits `c0 tau^{-gamma}` to an ACF and converts `c0` into a lower bound on
/// the number of power-law splitters.
pub fn calibrate_curve(curve: &AcfCurve, input: &str, mu: Option<f64>, gamma: Option<f64>) -> Result<CalibrationReport> {
    let max = *curve.lags.last().ok_or_else(|| Error::config("acf", "no rows"))? as f64;
    let (lo, hi) = default_acf_window(u64::MAX);
    let window = (lo, hi.min(max));
    let free = fit_powerlaw(curve.points(), window)?;
    let (g, gamma_source, prefactor) = match gamma {
        Some(g) => (g, "user", fit_prefactor(curve.points(), window, g)?),
        None => (free.exponent, "fitted", free.prefactor),
    };
    let (mu, mu_source) = match mu {
        Some(m) => (m, "user"),
        None => (DEFAULT_MU, "default"),
    };
    let alpha = g + 1.0;
    let m = lower_bound_pt_count(mu, alpha, prefactor)?;
    Ok(CalibrationReport {
        input: input.to_string(),
        mu,
        mu_source: mu_source.into(),
        gamma: g,
        gamma_source: gamma_source.into(),
        alpha,
        prefactor,
        fit: free,
        m_pt_lower_bound: m,
    })
}

pub fn run_calibrate(acf_file: &Path, mu: Option<f64>, gamma: Option<f64>) -> Result<CalibrationReport> {
    let curve = AcfCurve::read_csv(acf_file, CurveKind::Simulated)?;
    calibrate_curve(&curve, &acf_file.display().to_string(), mu, gamma)
}
