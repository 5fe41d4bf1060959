//! Seeded Monte Carlo sweeps over `(K_a, P, SNR, G)` with CSV output.
//!
//! Every trial draws from its own ChaCha streams keyed by a per-trial seed.
//! The seed depends only on the master seed and the trial index, so trial `t`
//! sees the same users and channels at every grid point; only the pilots,
//! combiners and noise change with `G`.
//!
//! Config files are TOML; see `ExperimentConfig` for the keys and defaults.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::{
    build_channel_matrix, draw_activity, synth_user_channel, ActivityPattern, ArrayGeometry, ChannelMatrix,
    ChannelModel, OfdmConfig,
};
use crate::baseline::{somp, GreedyConfig, Selection};
use crate::cmat::CMat;
use crate::detect::{aud_error_prob, bi_ad, cg_ad, nmse, DetectorConfig, NmseMode};
use crate::error::{Error, Result};
use crate::frontend::{assemble_sensing, build_combiner, gen_pilots, simulate_received, MeasurementSet, SensingOperator, Snr};
use crate::solver::{self, SolverConfig, SolverOutput, TraceRow};

/// Cyclic prefix length in samples; matches the largest path delay `32/B_s`.
pub const CYCLIC_PREFIX_SAMPLES: usize = 32;

/// Largest `J·Q` for which a dense copy of the sensing operator is built.
pub const DENSE_LIMIT: usize = 1 << 24;

/// Air time of `g` OFDM symbols, `g (N_c + CP) / B_s` seconds.
pub fn symbol_latency(g: usize, ofdm: &OfdmConfig) -> f64 {
    (g * (ofdm.subcarriers + CYCLIC_PREFIX_SAMPLES)) as f64 / ofdm.bandwidth_hz
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Oamp,
    Somp,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Oamp => "oamp-em-mmv",
            Algorithm::Somp => "somp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Detector {
    Cg,
    Bi,
}

impl Detector {
    pub fn name(&self) -> &'static str {
        match self {
            Detector::Cg => "cg-ad",
            Detector::Bi => "bi-ad",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfdmSection {
    pub bandwidth_hz: f64,
    pub subcarriers: usize,
    pub carrier_hz: f64,
}

impl Default for OfdmSection {
    fn default() -> Self {
        Self { bandwidth_hz: 1e9, subcarriers: 256, carrier_hz: 30e9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub paths: usize,
    /// Path delays are uniform on `[0, max_delay_samples / B_s]`.
    pub max_delay_samples: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self { paths: 4, max_delay_samples: 32.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Population `K`.
    pub users: usize,
    /// Active-user counts `K_a`.
    pub active: Vec<usize>,
    /// OFDM symbol counts `G`.
    pub symbols: Vec<usize>,
    /// Pilot subcarrier counts `P`.
    pub pilots: Vec<usize>,
    pub snr_db: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            users: 500,
            active: vec![50],
            symbols: vec![150, 200, 250, 300],
            pilots: vec![16],
            snr_db: vec![30.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub selection: Selection,
    /// Users the greedy search may pick; defaults to the true `K_a`.
    pub max_blocks: Option<usize>,
    pub residual_tolerance: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self { selection: Selection::Block, max_blocks: None, residual_tolerance: 1e-6 }
    }
}

/// Full description of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
    /// Fill the `wall_ms` column; off makes reruns byte-identical.
    pub record_timing: bool,
    pub algorithms: Vec<Algorithm>,
    pub detectors: Vec<Detector>,
    pub nmse_mode: NmseMode,
    pub geometry: ArrayGeometry,
    pub ofdm: OfdmSection,
    pub channel: ChannelSection,
    pub sweep: SweepSection,
    pub solver: SolverConfig,
    pub detector: DetectorConfig,
    pub baseline: BaselineSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            trials: 20,
            threads: None,
            output: None,
            record_timing: true,
            algorithms: vec![Algorithm::Oamp],
            detectors: vec![Detector::Cg, Detector::Bi],
            nmse_mode: NmseMode::ActiveRows,
            geometry: ArrayGeometry::reference(),
            ofdm: OfdmSection::default(),
            channel: ChannelSection::default(),
            sweep: SweepSection::default(),
            solver: SolverConfig { trace: false, ..SolverConfig::default() },
            detector: DetectorConfig::default(),
            baseline: BaselineSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.detector.validate()?;
        self.solver.validate()?;
        let s = &self.sweep;
        if s.active.is_empty() || s.symbols.is_empty() || s.pilots.is_empty() || s.snr_db.is_empty() {
            return Err(Error::Config("sweep lists must be non-empty".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("need at least one trial".into()));
        }
        if self.algorithms.is_empty() || self.detectors.is_empty() {
            return Err(Error::Config("select at least one algorithm and one detector".into()));
        }
        for &p in &s.pilots {
            self.ofdm_for(p)?;
        }
        if let Some(&ka) = s.active.iter().find(|&&ka| ka > s.users) {
            return Err(Error::TooMany { requested: ka, available: s.users });
        }
        Ok(())
    }

    pub fn ofdm_for(&self, pilots: usize) -> Result<OfdmConfig> {
        OfdmConfig::new(self.ofdm.bandwidth_hz, self.ofdm.subcarriers, pilots, self.ofdm.carrier_hz)
    }

    pub fn channel_model(&self) -> ChannelModel {
        ChannelModel {
            paths: self.channel.paths,
            max_delay_s: self.channel.max_delay_samples / self.ofdm.bandwidth_hz,
        }
    }

    /// Grid points in CSV order (`G` varies fastest).
    pub fn grid(&self) -> Vec<GridPoint> {
        let s = &self.sweep;
        let mut out = Vec::new();
        for &k_a in &s.active {
            for &p in &s.pilots {
                for &snr_db in &s.snr_db {
                    for &g in &s.symbols {
                        out.push(GridPoint { k: s.users, k_a, g, p, snr_db });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub k: usize,
    pub k_a: usize,
    pub g: usize,
    pub p: usize,
    pub snr_db: f64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `trial` under master seed `master`.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    splitmix64(master ^ splitmix64(trial as u64))
}

#[derive(Debug, Clone, Copy)]
enum Stream {
    Activity = 0,
    Channel = 1,
    Pilots = 2,
    Combiners = 3,
    Noise = 4,
}

fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// One synthesized problem instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub point: GridPoint,
    pub seed: u64,
    pub activity: ActivityPattern,
    pub channel: ChannelMatrix,
    pub operator: SensingOperator,
    pub measurements: MeasurementSet,
}

/// Draw activity, channels, pilots, combiners and noise for one trial.
pub fn build_instance(cfg: &ExperimentConfig, point: GridPoint, seed: u64) -> Result<Instance> {
    let geom = cfg.geometry;
    let ofdm = cfg.ofdm_for(point.p)?;
    let activity = draw_activity(point.k, point.k_a, &mut stream(seed, Stream::Activity))?;

    let model = cfg.channel_model();
    let mut rng = stream(seed, Stream::Channel);
    let zero = CMat::zeros(geom.n_bs(), point.p);
    let channels: Vec<CMat> = (0..point.k)
        .map(|k| {
            let paths = model.draw_paths(&mut rng);
            if activity.is_active(k) {
                synth_user_channel(&paths, &geom, &ofdm)
            } else {
                zero.clone()
            }
        })
        .collect();
    let channel = build_channel_matrix(&channels, &activity)?;

    let pilots = gen_pilots(point.k, point.g, &mut stream(seed, Stream::Pilots))?;
    let mut rng = stream(seed, Stream::Combiners);
    let combiners = (0..point.g)
        .map(|_| build_combiner(&geom, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let operator = assemble_sensing(pilots, combiners)?;
    let measurements = simulate_received(&operator, &channel, Snr::from(point.snr_db), &mut stream(seed, Stream::Noise))?;
    Ok(Instance { point, seed, activity, channel, operator, measurements })
}

/// One CSV line. Aggregate and skipped lines leave per-trial fields empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub row: String,
    pub i_h: usize,
    pub i_v: usize,
    pub m_h: usize,
    pub m_v: usize,
    pub d: usize,
    pub paths: usize,
    pub iterations: usize,
    pub k: usize,
    pub k_a: usize,
    pub g: usize,
    pub p: usize,
    pub snr_db: f64,
    pub trial: Option<usize>,
    pub seed: Option<u64>,
    pub algorithm: String,
    pub detector: String,
    pub aud_error: Option<f64>,
    pub nmse_db: Option<f64>,
    pub wall_ms: Option<f64>,
}

/// Condensed solver trace.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TraceSummary {
    pub iterations: usize,
    pub final_sigma2: f64,
    pub true_sigma2: f64,
    pub final_mean_lambda: f64,
    pub clamped_variance: usize,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub point: GridPoint,
    pub trial: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub detector: Detector,
    pub aud_error: f64,
    pub nmse_db: f64,
    pub wall_ms: f64,
    pub summary: TraceSummary,
}

impl ExperimentConfig {
    fn row(&self, kind: &str, point: &GridPoint, algorithm: &str, detector: &str) -> CsvRow {
        CsvRow {
            row: kind.into(),
            i_h: self.geometry.i_h,
            i_v: self.geometry.i_v,
            m_h: self.geometry.m_h,
            m_v: self.geometry.m_v,
            d: self.geometry.d,
            paths: self.channel.paths,
            iterations: self.solver.iterations,
            k: point.k,
            k_a: point.k_a,
            g: point.g,
            p: point.p,
            snr_db: point.snr_db,
            trial: None,
            seed: None,
            algorithm: algorithm.into(),
            detector: detector.into(),
            aud_error: None,
            nmse_db: None,
            wall_ms: None,
        }
    }
}

impl TrialResult {
    pub fn to_row(&self, cfg: &ExperimentConfig) -> CsvRow {
        CsvRow {
            trial: Some(self.trial),
            seed: Some(self.seed),
            aud_error: Some(self.aud_error),
            nmse_db: Some(self.nmse_db),
            wall_ms: cfg.record_timing.then_some(self.wall_ms),
            ..cfg.row("trial", &self.point, self.algorithm.name(), self.detector.name())
        }
    }
}

/// Output of one algorithm on one instance.
#[derive(Debug, Clone)]
pub struct Recovery {
    pub h_hat: CMat,
    pub solver: Option<SolverOutput>,
    pub wall_ms: f64,
}

pub fn recover(cfg: &ExperimentConfig, inst: &Instance, algorithm: Algorithm) -> Result<Recovery> {
    let y = &inst.measurements.y;
    let start = Instant::now();
    match algorithm {
        Algorithm::Oamp => {
            let out = solver::run(y, &inst.operator, &cfg.solver)?;
            Ok(Recovery {
                h_hat: out.h_hat.clone(),
                solver: Some(out),
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            })
        }
        Algorithm::Somp => {
            let n_bs = cfg.geometry.n_bs();
            let blocks = cfg
                .baseline
                .max_blocks
                .unwrap_or(inst.point.k_a)
                .min(inst.operator.q() / n_bs);
            let unit = match cfg.baseline.selection {
                Selection::Block => n_bs,
                Selection::Row => 1,
            };
            let greedy = GreedyConfig {
                max_support: (blocks * n_bs).min(inst.operator.q() / unit * unit),
                residual_tolerance: cfg.baseline.residual_tolerance,
                selection: cfg.baseline.selection,
            };
            let out = somp(y, &inst.operator, &greedy)?;
            Ok(Recovery { h_hat: out.h_hat, solver: None, wall_ms: start.elapsed().as_secs_f64() * 1e3 })
        }
    }
}

/// Run every selected algorithm and detector on one trial.
pub fn run_trial(cfg: &ExperimentConfig, point: GridPoint, trial: usize) -> Result<Vec<TrialResult>> {
    let seed = trial_seed(cfg.seed, trial);
    let inst = build_instance(cfg, point, seed)?;
    let n_bs = cfg.geometry.n_bs();
    let mut out = Vec::new();
    for &algorithm in &cfg.algorithms {
        let rec = recover(cfg, &inst, algorithm)?;
        let nmse_db = nmse(&rec.h_hat, inst.channel.matrix(), &inst.activity, n_bs, cfg.nmse_mode)?;
        let summary = rec
            .solver
            .as_ref()
            .map(|s| TraceSummary {
                iterations: cfg.solver.iterations,
                final_sigma2: s.sigma2,
                true_sigma2: inst.measurements.noise_var,
                final_mean_lambda: s.prior.lambda.mean(),
                clamped_variance: s.diagnostics.clamped_variance,
            })
            .unwrap_or_default();
        for &detector in &cfg.detectors {
            let detection = match (detector, &rec.solver) {
                (Detector::Cg, _) => cg_ad(&rec.h_hat, n_bs, &cfg.detector)?,
                (Detector::Bi, Some(s)) => bi_ad(&s.eta, n_bs, &cfg.detector)?,
                // greedy recovery has no belief indicators
                (Detector::Bi, None) => continue,
            };
            out.push(TrialResult {
                point,
                trial,
                seed,
                algorithm,
                detector,
                aud_error: aud_error_prob(&detection.activity, &inst.activity)?,
                nmse_db,
                wall_ms: rec.wall_ms,
                summary,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct SweepResult {
    pub trials: Vec<TrialResult>,
    pub rows: Vec<CsvRow>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Run the whole grid. Trials run on a pool of `cfg.threads` workers;
/// results come back in (grid point, trial) order.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let grid = cfg.grid();
    let work: Vec<(usize, usize)> = (0..grid.len())
        .filter(|&i| grid[i].g <= grid[i].k)
        .flat_map(|i| (0..cfg.trials).map(move |t| (i, t)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<Vec<TrialResult>>> =
        pool.install(|| work.par_iter().map(|&(i, t)| run_trial(cfg, grid[i], t)).collect());

    let mut sweep = SweepResult::default();
    let mut per_point: Vec<Vec<TrialResult>> = vec![Vec::new(); grid.len()];
    for (r, &(i, _)) in results.into_iter().zip(&work) {
        per_point[i].extend(r?);
    }

    for (point, trials) in grid.iter().zip(per_point) {
        if point.g > point.k {
            sweep.rows.push(cfg.row("skipped", point, "", ""));
            continue;
        }
        sweep.rows.extend(trials.iter().map(|t| t.to_row(cfg)));
        let mut keys: Vec<(Algorithm, Detector)> = Vec::new();
        for t in &trials {
            if !keys.contains(&(t.algorithm, t.detector)) {
                keys.push((t.algorithm, t.detector));
            }
        }
        for (alg, det) in keys {
            let sel: Vec<&TrialResult> = trials.iter().filter(|t| t.algorithm == alg && t.detector == det).collect();
            let col = |f: fn(&TrialResult) -> f64| mean_std(&sel.iter().map(|t| f(t)).collect::<Vec<_>>());
            let (aud, nm, wall) = (col(|t| t.aud_error), col(|t| t.nmse_db), col(|t| t.wall_ms));
            sweep.rows.push(CsvRow {
                aud_error: Some(aud.0),
                nmse_db: Some(nm.0),
                wall_ms: cfg.record_timing.then_some(wall.0),
                ..cfg.row("mean", point, alg.name(), det.name())
            });
            sweep.rows.push(CsvRow {
                aud_error: Some(aud.1),
                nmse_db: Some(nm.1),
                wall_ms: cfg.record_timing.then_some(wall.1),
                ..cfg.row("std", point, alg.name(), det.name())
            });
        }
        sweep.trials.extend(trials);
    }
    Ok(sweep)
}

pub fn write_csv<W: Write>(rows: &[CsvRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Open the output before spending time on the sweep, run it, write CSV.
pub fn run_sweep_to_path(cfg: &ExperimentConfig, path: &Path) -> Result<SweepResult> {
    let file = File::create(path)?;
    let sweep = run_sweep(cfg)?;
    write_csv(&sweep.rows, BufWriter::new(file))?;
    Ok(sweep)
}

/// Run one trial with the solver trace enabled.
pub fn run_single(cfg: &ExperimentConfig, point: GridPoint, seed: u64) -> Result<(Instance, Vec<TrialResult>, Vec<TraceRow>)> {
    let inst = build_instance(cfg, point, seed)?;
    let solver_cfg = SolverConfig { trace: true, ..cfg.solver };
    let out = solver::run(&inst.measurements.y, &inst.operator, &solver_cfg)?;
    let n_bs = cfg.geometry.n_bs();
    let nmse_db = nmse(&out.h_hat, inst.channel.matrix(), &inst.activity, n_bs, cfg.nmse_mode)?;
    let summary = TraceSummary {
        iterations: solver_cfg.iterations,
        final_sigma2: out.sigma2,
        true_sigma2: inst.measurements.noise_var,
        final_mean_lambda: out.prior.lambda.mean(),
        clamped_variance: out.diagnostics.clamped_variance,
    };
    let mut results = Vec::new();
    for detector in [Detector::Cg, Detector::Bi] {
        let det = match detector {
            Detector::Cg => cg_ad(&out.h_hat, n_bs, &cfg.detector)?,
            Detector::Bi => bi_ad(&out.eta, n_bs, &cfg.detector)?,
        };
        results.push(TrialResult {
            point,
            trial: 0,
            seed,
            algorithm: Algorithm::Oamp,
            detector,
            aud_error: aud_error_prob(&det.activity, &inst.activity)?,
            nmse_db,
            wall_ms: 0.0,
            summary,
        });
    }
    Ok((inst, results, out.trace))
}
