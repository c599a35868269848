//! Seeded Monte Carlo experiments behind the command-line tool.
//!
//! Every realization `i` draws its channel from ChaCha stream `i` of the
//! master seed, and the same channels are reused at every SNR and `delta`
//! on the grid, so curves are compared on common channels. Realizations run
//! in parallel but are reduced in index order, which keeps outputs
//! byte-identical for any thread count.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::capacity_freq::{self, equal_power_spectral, fs_capacity_spectral, SpectralOptions, SpectralSolution};
use crate::capacity_time::{
    equal_power_capacity_with, flat_capacity, flat_capacity_blockform, fs_capacity_time, fs_capacity_time_with,
    BlockModel, BlockOptions, FsBasis, SystemParams, DEFAULT_BLOCKFORM_CAP,
};
use crate::channel::{self, FsChannel};
use crate::error::{FtnError, Result};
use crate::gram::{GramMatrix, DEFAULT_COND_CAP};
use crate::oracle::{brute_force_capacity, szego_convergence, OracleOptions};
use crate::pulse::PulseConfig;

pub const SWEEP_SCHEMA: &str = "ftn-sweep/1";
pub const VALIDATE_SCHEMA: &str = "ftn-validate/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Flat,
    Fs,
    Spectrum,
    Validate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// Dense block matrices at block length `N`.
    Time,
    /// Per-frequency waterfilling on an `M`-point grid.
    Spectral,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, { $($name:literal => $val:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = FtnError;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($name => Ok($val),)+
                    other => Err(FtnError::InvalidConfig(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }
    };
}

keyword_enum!(Mode, "mode", { "flat" => Mode::Flat, "fs" => Mode::Fs, "spectrum" => Mode::Spectrum, "validate" => Mode::Validate });
keyword_enum!(Engine, "engine", { "time" => Engine::Time, "spectral" => Engine::Spectral });
keyword_enum!(FsBasis, "basis", { "simultaneous" => FsBasis::Simultaneous, "phi-eigen" => FsBasis::PhiEigen });

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Flat => "flat",
            Mode::Fs => "fs",
            Mode::Spectrum => "spectrum",
            Mode::Validate => "validate",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub k: usize,
    pub l: usize,
    pub j: usize,
    pub snr_db: Vec<f64>,
    pub deltas: Vec<f64>,
    pub beta: f64,
    pub t_symbol: f64,
    pub n: usize,
    pub grid: usize,
    pub realizations: usize,
    pub seed: u64,
    pub engine: Engine,
    pub basis: FsBasis,
    pub out: Option<PathBuf>,
    pub channel_file: Option<PathBuf>,
    /// Replaces every numeric threshold of `validate`.
    pub tolerance: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Flat,
            k: 2,
            l: 2,
            j: 20,
            snr_db: parse_snr_grid("0:30:5").expect("valid literal"),
            deltas: vec![1.0],
            beta: 0.5,
            t_symbol: 0.01,
            n: 256,
            grid: 1024,
            realizations: 100,
            seed: 1,
            engine: Engine::Time,
            basis: FsBasis::Simultaneous,
            out: None,
            channel_file: None,
            tolerance: None,
        }
    }
}

/// Parses `a:b:step` (inclusive), a comma list, or a single value.
pub fn parse_snr_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || FtnError::InvalidConfig(format!("bad SNR grid `{s}`"));
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    match parts.as_slice() {
        [a, b, step] => {
            let (a, b, step): (f64, f64, f64) = (
                a.parse().map_err(|_| bad())?,
                b.parse().map_err(|_| bad())?,
                step.parse().map_err(|_| bad())?,
            );
            if !(step > 0.0) || b < a || !a.is_finite() || !b.is_finite() {
                return Err(bad());
            }
            let count = ((b - a) / step + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|i| a + i as f64 * step).collect())
        }
        [_] => parse_list(s),
        _ => Err(bad()),
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    let values = s
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| FtnError::InvalidConfig(format!("bad number `{}`", v.trim())))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(FtnError::InvalidConfig("empty list".into()));
    }
    Ok(values)
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| FtnError::InvalidConfig(format!("bad value `{value}` for `{key}`")))
}

impl ExperimentConfig {
    /// Sets one field from its textual form. Keys match the config file and
    /// the CLI flags with dashes turned into underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        match key.as_str() {
            "mode" => self.mode = value.parse()?,
            "k" => self.k = parse_num(&key, value)?,
            "l" => self.l = parse_num(&key, value)?,
            "j" => self.j = parse_num(&key, value)?,
            "snr_db" => self.snr_db = parse_snr_grid(value)?,
            "delta" | "deltas" => self.deltas = parse_list(value)?,
            "beta" => self.beta = parse_num(&key, value)?,
            "t_symbol" => self.t_symbol = parse_num(&key, value)?,
            "n" => self.n = parse_num(&key, value)?,
            "grid" => self.grid = parse_num(&key, value)?,
            "realizations" => self.realizations = parse_num(&key, value)?,
            "seed" => self.seed = parse_num(&key, value)?,
            "engine" => self.engine = value.parse()?,
            "basis" => self.basis = value.parse()?,
            "out" => self.out = Some(PathBuf::from(value.trim())),
            "channel_file" => self.channel_file = Some(PathBuf::from(value.trim())),
            "tolerance" => self.tolerance = Some(parse_num(&key, value)?),
            other => return Err(FtnError::InvalidConfig(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| FtnError::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(key, value).map_err(|e| FtnError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.l == 0 || self.j == 0 {
            return Err(FtnError::InvalidConfig("K, L and J must be >= 1".into()));
        }
        if self.realizations == 0 {
            return Err(FtnError::InvalidConfig("need at least one realization".into()));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(FtnError::InvalidConfig("SNR grid must be non-empty and finite".into()));
        }
        if self.deltas.is_empty() {
            return Err(FtnError::InvalidConfig("need at least one delta".into()));
        }
        for &delta in &self.deltas {
            let pulse = PulseConfig::new(self.t_symbol, self.beta, delta)?;
            if self.mode != Mode::Validate {
                pulse.require_well_conditioned()?;
            }
        }
        Ok(())
    }

    fn pulse(&self, delta: f64) -> Result<PulseConfig> {
        PulseConfig::new(self.t_symbol, self.beta, delta)
    }

    /// Channel for realization `index`, or the loaded file.
    pub fn channel(&self, index: u64) -> Result<FsChannel> {
        if let Some(path) = &self.channel_file {
            return channel::load_channel(path);
        }
        Ok(match self.mode {
            Mode::Flat => FsChannel::from(channel::gen_flat_indexed(self.k, self.l, self.seed, index)),
            _ => channel::gen_fs_indexed(self.k, self.l, self.j, self.seed, index),
        })
    }

    fn effective_realizations(&self) -> usize {
        if self.channel_file.is_some() {
            1
        } else {
            self.realizations
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub delta: f64,
    pub beta: f64,
    pub scheme: String,
    pub mean_capacity_bits_s_hz: f64,
    pub stderr: f64,
    pub realizations: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepMetadata {
    pub schema: &'static str,
    pub version: &'static str,
    pub config: ExperimentConfig,
    pub realizations_used: usize,
    /// The same channel draws are used at every SNR and delta.
    pub channels_shared_across_grid: bool,
    pub noise_variance: f64,
    pub capacity_unit: &'static str,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub metadata: SweepMetadata,
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        if self.rows.is_empty() {
            w.write_record([
                "snr_db",
                "delta",
                "beta",
                "scheme",
                "mean_capacity_bits_s_hz",
                "stderr",
                "realizations",
                "seed",
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_metadata<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.metadata)?;
        Ok(())
    }

    /// Mean capacity of `scheme` at (`snr_db`, `delta`), if present.
    pub fn mean(&self, scheme: &str, snr_db: f64, delta: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.scheme == scheme && r.snr_db == snr_db && r.delta == delta)
            .map(|r| r.mean_capacity_bits_s_hz)
    }
}

fn schemes(mode: Mode) -> &'static [&'static str] {
    match mode {
        Mode::Flat => &["optimal"],
        _ => &["optimal", "equal_power"],
    }
}

/// Capacities of one channel in bit/s/Hz, indexed `[delta][snr][scheme]`.
fn evaluate_realization(cfg: &ExperimentConfig, ch: &FsChannel) -> Result<Vec<Vec<Vec<f64>>>> {
    cfg.deltas
        .iter()
        .map(|&delta| {
            let pulse = cfg.pulse(delta)?;
            let bw = pulse.bandwidth_product();
            if cfg.mode == Mode::Flat {
                let flat = ch.as_flat().ok_or_else(|| {
                    FtnError::InvalidConfig("flat mode needs a single-tap channel".into())
                })?;
                return cfg
                    .snr_db
                    .iter()
                    .map(|&snr| {
                        let p = SystemParams::from_snr_db(pulse, snr)?;
                        Ok(vec![flat_capacity(&flat, &p)?.report.bits_per_s_per_hz])
                    })
                    .collect();
            }
            match cfg.engine {
                Engine::Time => {
                    let model = BlockModel::build(ch, &pulse, cfg.n, &BlockOptions::default())?;
                    cfg.snr_db
                        .iter()
                        .map(|&snr| {
                            let p = SystemParams::from_snr_db(pulse, snr)?;
                            let opt = fs_capacity_time_with(&model, &p, cfg.basis)?.report.bits_per_s_per_hz;
                            let eq = equal_power_capacity_with(&model, &p)? / bw;
                            Ok(vec![opt, eq])
                        })
                        .collect()
                }
                Engine::Spectral => cfg
                    .snr_db
                    .iter()
                    .map(|&snr| {
                        let p = SystemParams::from_snr_db(pulse, snr)?;
                        let opt = fs_capacity_spectral(ch, &p, cfg.grid, &SpectralOptions::default())?
                            .bits_per_s_per_hz;
                        let eq = equal_power_spectral(ch, &p, cfg.grid)? / bw;
                        Ok(vec![opt, eq])
                    })
                    .collect(),
            }
        })
        .collect()
}

/// Mean and standard error (unbiased sample variance; 0 for one sample).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    if !matches!(cfg.mode, Mode::Flat | Mode::Fs) {
        return Err(FtnError::InvalidConfig(format!("sweep needs mode flat or fs, got {}", cfg.mode)));
    }
    let r = cfg.effective_realizations();
    let per_realization: Vec<Vec<Vec<Vec<f64>>>> = (0..r as u64)
        .into_par_iter()
        .map(|i| {
            cfg.channel(i)
                .and_then(|ch| evaluate_realization(cfg, &ch))
                .map_err(|e| FtnError::Realization {
                    index: i,
                    seed: cfg.seed,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let names = schemes(cfg.mode);
    let mut rows = Vec::new();
    for (d, &delta) in cfg.deltas.iter().enumerate() {
        for (s, &snr_db) in cfg.snr_db.iter().enumerate() {
            for (c, name) in names.iter().enumerate() {
                let values: Vec<f64> = per_realization.iter().map(|v| v[d][s][c]).collect();
                let (mean, stderr) = mean_stderr(&values);
                rows.push(SweepRow {
                    snr_db,
                    delta,
                    beta: cfg.beta,
                    scheme: (*name).to_string(),
                    mean_capacity_bits_s_hz: mean,
                    stderr,
                    realizations: r,
                    seed: cfg.seed,
                });
            }
        }
    }
    Ok(SweepResult {
        rows,
        metadata: SweepMetadata {
            schema: SWEEP_SCHEMA,
            version: env!("CARGO_PKG_VERSION"),
            config: cfg.clone(),
            realizations_used: r,
            channels_shared_across_grid: true,
            noise_variance: 1.0,
            capacity_unit: "bit/s/Hz",
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GainRow {
    pub snr_db: f64,
    pub gain: f64,
}

/// Gain of `delta_fast` over `delta_ref` at every SNR, plus the index of the
/// point closest to `target` when one is given.
pub fn delta_gain(
    sweep: &SweepResult,
    scheme: &str,
    delta_fast: f64,
    delta_ref: f64,
    target: Option<f64>,
) -> (Vec<GainRow>, Option<usize>) {
    let rows: Vec<GainRow> = sweep
        .metadata
        .config
        .snr_db
        .iter()
        .filter_map(|&snr| {
            let a = sweep.mean(scheme, snr, delta_fast)?;
            let b = sweep.mean(scheme, snr, delta_ref)?;
            Some(GainRow { snr_db: snr, gain: a - b })
        })
        .collect();
    let best = target.and_then(|t| {
        rows.iter()
            .enumerate()
            .min_by(|a, b| (a.1.gain - t).abs().total_cmp(&(b.1.gain - t).abs()))
            .map(|(i, _)| i)
    });
    (rows, best)
}

/// Spectral solution for one channel at the first `delta` and SNR of the config.
pub fn run_spectrum(cfg: &ExperimentConfig) -> Result<SpectralSolution> {
    cfg.validate()?;
    let pulse = cfg.pulse(cfg.deltas[0])?;
    let params = SystemParams::from_snr_db(pulse, cfg.snr_db[0])?;
    let mut single = cfg.clone();
    if single.mode == Mode::Spectrum {
        single.mode = if cfg.j == 1 { Mode::Flat } else { Mode::Fs };
    }
    let ch = single.channel(0)?;
    fs_capacity_spectral(&ch, &params, cfg.grid, &SpectralOptions::default())
}

pub fn write_spectrum<W: Write>(sol: &SpectralSolution, out: W) -> Result<()> {
    capacity_freq::write_spectrum_csv(sol, out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CapacityRow {
    pub snr_db: f64,
    pub delta: f64,
    pub beta: f64,
    pub bits_per_channel_use: f64,
    pub bits_per_s_per_hz: f64,
    pub equal_power_bits_per_s_per_hz: Option<f64>,
}

/// Capacity of a single channel (realization 0 or the loaded file) over the grid.
pub fn run_capacity(cfg: &ExperimentConfig) -> Result<Vec<CapacityRow>> {
    cfg.validate()?;
    let ch = cfg.channel(0)?;
    let mut rows = Vec::new();
    for &delta in &cfg.deltas {
        let pulse = cfg.pulse(delta)?;
        let model = if ch.j() > 1 && cfg.engine == Engine::Time {
            Some(BlockModel::build(&ch, &pulse, cfg.n, &BlockOptions::default())?)
        } else {
            None
        };
        for &snr_db in &cfg.snr_db {
            let p = SystemParams::from_snr_db(pulse, snr_db)?;
            let bw = pulse.bandwidth_product();
            let (bits, equal) = match (ch.as_flat(), &model) {
                (Some(flat), _) => (flat_capacity(&flat, &p)?.report.bits_per_channel_use, None),
                (None, Some(model)) => (
                    fs_capacity_time_with(model, &p, cfg.basis)?.report.bits_per_channel_use,
                    Some(equal_power_capacity_with(model, &p)? / bw),
                ),
                (None, None) => (
                    fs_capacity_spectral(&ch, &p, cfg.grid, &SpectralOptions::default())?.bits_per_channel_use,
                    Some(equal_power_spectral(&ch, &p, cfg.grid)? / bw),
                ),
            };
            rows.push(CapacityRow {
                snr_db,
                delta,
                beta: cfg.beta,
                bits_per_channel_use: bits,
                bits_per_s_per_hz: bits / bw,
                equal_power_bits_per_s_per_hz: equal,
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub schema: &'static str,
    pub seed: u64,
    pub tolerance_override: Option<f64>,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

fn numeric_check(name: &str, measured: Result<f64>, threshold: f64, over: Option<f64>, detail: &str) -> Check {
    let threshold = over.unwrap_or(threshold);
    match measured {
        Ok(m) => Check {
            name: name.into(),
            passed: m <= threshold,
            measured: m,
            threshold,
            detail: detail.into(),
        },
        Err(e) => Check {
            name: name.into(),
            passed: false,
            measured: f64::NAN,
            threshold,
            detail: format!("{detail}; error: {e}"),
        },
    }
}

fn max_of(values: impl IntoIterator<Item = Result<f64>>) -> Result<f64> {
    values.into_iter().try_fold(0.0f64, |m, v| Ok(m.max(v?)))
}

/// Bundled cross-checks. Failures are recorded, not raised.
pub fn run_validate(cfg: &ExperimentConfig) -> ValidationReport {
    let seed = cfg.seed;
    let over = cfg.tolerance;
    let p = |beta: f64, delta: f64, snr: f64| -> Result<SystemParams> {
        SystemParams::from_snr_db(PulseConfig::new(cfg.t_symbol, beta, delta)?, snr)
    };
    let mut checks = Vec::new();

    checks.push(numeric_check(
        "oracle_flat",
        max_of((0..3).map(|i| {
            let params = p(0.25, 0.9, 10.0)?;
            let ch = channel::gen_flat_indexed(2, 2, seed, i);
            let closed = flat_capacity(&ch, &params)?.report.bits_per_channel_use;
            let oracle = brute_force_capacity(&FsChannel::from(&ch), &params, 4, &OracleOptions::default())?;
            Ok((oracle.bits_per_channel_use - closed).abs())
        })),
        1e-4,
        over,
        "max |oracle - closed form| in bits, 3 flat 2x2 channels, N=4, delta=0.9, beta=0.25, 10 dB",
    ));

    checks.push(numeric_check(
        "oracle_fs",
        max_of((0..2).map(|i| {
            let params = p(0.25, 0.9, 10.0)?;
            let ch = channel::gen_fs_indexed(2, 2, 2, seed, i);
            let engine = fs_capacity_time(&ch, &params, 8, FsBasis::Simultaneous, &BlockOptions::default())?;
            let oracle = brute_force_capacity(&ch, &params, 8, &OracleOptions::default())?;
            Ok((oracle.bits_per_channel_use - engine.report.bits_per_channel_use).abs())
        })),
        1e-4,
        over,
        "max |oracle - block engine| in bits, 2 FS 2x2 channels, J=2, N=8",
    ));

    checks.push(numeric_check(
        "n_independence",
        max_of((0..5).flat_map(|i| {
            [1usize, 2, 4, 8, 16].into_iter().map(move |n| {
                let params = p(0.5, 0.8, 10.0)?;
                let ch = channel::gen_flat_indexed(2, 2, seed, i);
                let closed = flat_capacity(&ch, &params)?.report.bits_per_channel_use;
                let block = flat_capacity_blockform(&ch, &params, n, DEFAULT_BLOCKFORM_CAP, DEFAULT_COND_CAP)?;
                Ok((block - closed).abs())
            })
        })),
        1e-9,
        over,
        "max |C_N - C| over N in {1,2,4,8,16}, 5 flat channels",
    ));

    checks.push(numeric_check(
        "single_tap_reduction",
        max_of((0..5).flat_map(|i| {
            [4usize, 16, 32].into_iter().map(move |n| {
                let params = p(0.5, 0.8, 10.0)?;
                let flat = channel::gen_flat_indexed(2, 2, seed, i);
                let closed = flat_capacity(&flat, &params)?.report.bits_per_channel_use;
                let fs = fs_capacity_time(&FsChannel::from(&flat), &params, n, FsBasis::Simultaneous, &BlockOptions::default())?;
                Ok((fs.report.bits_per_channel_use - closed).abs())
            })
        })),
        1e-8,
        over,
        "max |C_FS,N - C| for single-tap channels, N in {4,16,32}",
    ));

    checks.push(numeric_check(
        "time_frequency",
        (|| {
            let params = p(0.5, 0.8, 10.0)?;
            let ch = channel::gen_fs_indexed(2, 2, 5, seed, 0);
            let time = fs_capacity_time(&ch, &params, 512, FsBasis::Simultaneous, &BlockOptions::default())?;
            let spec = fs_capacity_spectral(&ch, &params, 1024, &SpectralOptions::default())?;
            Ok((time.report.bits_per_channel_use - spec.bits_per_channel_use).abs() / spec.bits_per_channel_use)
        })(),
        0.02,
        over,
        "relative |block(N=512) - spectral(M=1024)|, 2x2, J=5, delta=0.8, beta=0.5, 10 dB",
    ));

    checks.push(numeric_check(
        "szego_monotone",
        (|| {
            let params = p(0.25, 0.9, 10.0)?;
            let ch = channel::gen_fs_indexed(1, 1, 5, seed, 0);
            let rows = szego_convergence(&ch, &params, &[64, 128, 256], 4096, &BlockOptions::default())?;
            Ok(rows.windows(2).filter(|w| w[1].error >= w[0].error).count() as f64)
        })(),
        0.0,
        None,
        "count of non-decreasing steps in e(N), SISO J=5, N in {64,128,256}",
    ));

    let mut mazo_cases = vec![(0.72, 0.25)];
    mazo_cases.extend(cfg.deltas.iter().filter(|&&d| d * (1.0 + cfg.beta) < 1.0).map(|&d| (d, cfg.beta)));
    for (delta, beta) in mazo_cases {
        let outcome = p(beta, delta, 10.0).and_then(|params| flat_capacity(&channel::gen_flat(2, 2, seed), &params));
        let rejected = matches!(outcome, Err(FtnError::MazoRegion { .. }));
        checks.push(Check {
            name: format!("mazo_guard_delta_{delta}_beta_{beta}"),
            passed: rejected,
            measured: delta * (1.0 + beta),
            threshold: 1.0,
            detail: "delta*(1+beta) < 1 must be rejected; rejection counts as a pass".into(),
        });
    }

    let conditioning = PulseConfig::new(cfg.t_symbol, 0.3, 0.7)
        .and_then(|pulse| GramMatrix::build(&pulse, 256).decompose())
        .map(|s| s.check_conditioning(DEFAULT_COND_CAP));
    checks.push(Check {
        name: "ill_conditioned_gram".into(),
        passed: matches!(conditioning, Ok(Err(FtnError::IllConditioned { .. }))),
        measured: 0.91,
        threshold: 1.0,
        detail: "Gram matrix at delta=0.7, beta=0.3, N=256 must be refused as ill-conditioned".into(),
    });

    let passed = checks.iter().all(|c| c.passed);
    ValidationReport {
        schema: VALIDATE_SCHEMA,
        seed,
        tolerance_override: over,
        passed,
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_grid_parsing() {
        assert_eq!(parse_snr_grid("0:30:5").unwrap(), vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0]);
        assert_eq!(parse_snr_grid("0:1:0.1").unwrap().len(), 11);
        assert_eq!(parse_snr_grid("3, 7").unwrap(), vec![3.0, 7.0]);
        assert_eq!(parse_snr_grid("12").unwrap(), vec![12.0]);
        assert!(parse_snr_grid("5:0:1").is_err());
        assert!(parse_snr_grid("0:10:0").is_err());
        assert!(parse_snr_grid("a:b").is_err());
    }

    #[test]
    fn config_text_and_overrides() {
        let cfg = ExperimentConfig::from_text(
            "# sweep\nmode = fs\nk=3\nl = 2\nj=4\nsnr_db = 0:10:5\ndelta = 0.8, 1.0\nbeta = 0.5\nengine = spectral\n",
        )
        .unwrap();
        assert_eq!(cfg.mode, Mode::Fs);
        assert_eq!((cfg.k, cfg.l, cfg.j), (3, 2, 4));
        assert_eq!(cfg.deltas, vec![0.8, 1.0]);
        assert_eq!(cfg.engine, Engine::Spectral);
        assert!(cfg.validate().is_ok());
        assert!(matches!(ExperimentConfig::from_text("bogus = 1"), Err(FtnError::Parse { line: 1, .. })));
        assert!(matches!(ExperimentConfig::from_text("\nk"), Err(FtnError::Parse { line: 2, .. })));
        let mut c = cfg.clone();
        c.set("snr-db", "7").unwrap();
        assert_eq!(c.snr_db, vec![7.0]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig::default();
        cfg.deltas = vec![0.6];
        assert!(matches!(cfg.validate(), Err(FtnError::MazoRegion { .. })));
        cfg.mode = Mode::Validate;
        assert!(cfg.validate().is_ok());
        cfg.realizations = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn stderr_uses_unbiased_variance() {
        assert_eq!(mean_stderr(&[4.0]), (4.0, 0.0));
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    fn small_sweep(mode: Mode) -> ExperimentConfig {
        ExperimentConfig {
            mode,
            j: 3,
            snr_db: vec![0.0, 10.0],
            deltas: vec![0.8, 1.0],
            n: 16,
            grid: 128,
            realizations: 6,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn sweep_is_deterministic_and_well_formed() {
        let cfg = small_sweep(Mode::Fs);
        let a = run_sweep(&cfg).unwrap();
        let b = run_sweep(&cfg).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        let text = String::from_utf8(x).unwrap();
        assert!(text.starts_with("snr_db,delta,beta,scheme,mean_capacity_bits_s_hz,stderr,realizations,seed\n"));
        assert_eq!(a.rows.len(), 2 * 2 * 2);
        for r in &a.rows {
            assert!(r.mean_capacity_bits_s_hz > 0.0 && r.stderr > 0.0);
        }
        let mut meta = Vec::new();
        a.write_metadata(&mut meta).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&meta).unwrap();
        assert_eq!(v["schema"], SWEEP_SCHEMA);
    }

    #[test]
    fn sweep_is_independent_of_thread_count() {
        let cfg = small_sweep(Mode::Flat);
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let mut out = Vec::new();
            pool.install(|| run_sweep(&cfg)).unwrap().write_csv(&mut out).unwrap();
            out
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn spectral_engine_sweep_runs() {
        let mut cfg = small_sweep(Mode::Fs);
        cfg.engine = Engine::Spectral;
        let s = run_sweep(&cfg).unwrap();
        for snr in [0.0, 10.0] {
            assert!(s.mean("optimal", snr, 0.8).unwrap() > s.mean("equal_power", snr, 0.8).unwrap());
        }
    }

    #[test]
    fn gain_table_flags_best_match() {
        let s = run_sweep(&small_sweep(Mode::Flat)).unwrap();
        let (rows, best) = delta_gain(&s, "optimal", 0.8, 1.0, Some(100.0));
        assert_eq!(rows.len(), 2);
        assert_eq!(best, Some(1));
        assert!(rows.iter().all(|r| r.gain > 0.0));
    }

    #[test]
    fn spectrum_and_capacity_runs() {
        let mut cfg = small_sweep(Mode::Flat);
        cfg.deltas = vec![0.9];
        cfg.beta = 0.25;
        let sol = run_spectrum(&cfg).unwrap();
        let first = sol.eigenspectrum.row(0).to_owned();
        assert!(sol.eigenspectrum.rows().into_iter().all(|r| r == first));
        let rows = run_capacity(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[1].bits_per_channel_use > rows[0].bits_per_channel_use);
    }

    #[test]
    fn validate_default_config_passes() {
        let cfg = ExperimentConfig {
            mode: Mode::Validate,
            ..Default::default()
        };
        let report = run_validate(&cfg);
        assert!(report.passed, "{:?}", report.checks);
    }

    #[test]
    fn validate_tampered_tolerance_fails_in_a_controlled_way() {
        let mut cfg = ExperimentConfig {
            mode: Mode::Validate,
            ..Default::default()
        };
        cfg.tolerance = Some(1e-15);
        let report = run_validate(&cfg);
        assert!(!report.passed);
        assert!(report.checks.iter().any(|c| !c.passed && c.measured > 1e-15));
        let mut buf = Vec::new();
        report.write_json(&mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["schema"], VALIDATE_SCHEMA);
        assert!(v["checks"].as_array().unwrap().iter().all(|c| c.get("threshold").is_some()));
    }
}
