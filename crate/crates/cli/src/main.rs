use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ftn_capacity::channel;
use ftn_capacity::harness::{self, ExperimentConfig, Mode};

/// Capacity of faster-than-Nyquist MIMO signaling.
#[derive(Parser)]
#[command(name = "ftncap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Capacity of one channel over the SNR and delta grid (JSON).
    Capacity(Common),
    /// Monte Carlo mean capacity over the grid (CSV plus metadata JSON).
    Sweep(Common),
    /// Eigenmodes, eigenspectrum and input spectrum of one channel (CSV).
    Spectrum(Common),
    /// Run the bundled cross-checks (JSON). Exits with 2 if any check fails.
    Validate(Common),
    /// Generate or inspect channel files.
    #[command(subcommand)]
    Channel(ChannelCommand),
}

#[derive(Subcommand)]
enum ChannelCommand {
    /// Draw a seeded i.i.d. Rayleigh channel.
    Gen {
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 2)]
        l: usize,
        #[arg(long, default_value_t = 1)]
        j: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Realization index within the seed.
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a summary of a channel file.
    Show {
        #[arg(long = "channel-file")]
        channel_file: PathBuf,
    },
}

#[derive(Args, Default)]
struct Common {
    /// key = value file applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// flat | fs | spectrum | validate
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    l: Option<String>,
    #[arg(long)]
    j: Option<String>,
    /// `a:b:step`, a comma list, or a single value, in dB.
    #[arg(long = "snr-db", allow_hyphen_values = true)]
    snr_db: Option<String>,
    /// Comma-separated acceleration factors.
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long = "t-symbol")]
    t_symbol: Option<String>,
    /// Block length of the time-domain engine.
    #[arg(long)]
    n: Option<String>,
    /// Frequency grid size of the spectral engine.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    realizations: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// time | spectral
    #[arg(long)]
    engine: Option<String>,
    /// simultaneous | phi-eigen
    #[arg(long)]
    basis: Option<String>,
    /// Replace every numeric threshold of `validate`.
    #[arg(long)]
    tolerance: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "channel-file")]
    channel_file: Option<PathBuf>,
}

impl Common {
    fn resolve(&self, mode: Option<Mode>) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
        }
        let flags = [
            ("mode", &self.mode),
            ("k", &self.k),
            ("l", &self.l),
            ("j", &self.j),
            ("snr_db", &self.snr_db),
            ("delta", &self.delta),
            ("beta", &self.beta),
            ("t_symbol", &self.t_symbol),
            ("n", &self.n),
            ("grid", &self.grid),
            ("realizations", &self.realizations),
            ("seed", &self.seed),
            ("engine", &self.engine),
            ("basis", &self.basis),
            ("tolerance", &self.tolerance),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v).with_context(|| format!("--{}", key.replace('_', "-")))?;
            }
        }
        if let Some(p) = &self.out {
            cfg.out = Some(p.clone());
        }
        if let Some(p) = &self.channel_file {
            cfg.channel_file = Some(p.clone());
        }
        if let Some(mode) = mode {
            cfg.mode = mode;
        }
        Ok(cfg)
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn metadata_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    out.with_file_name(name)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Capacity(args) => {
            let cfg = args.resolve(None)?;
            let rows = harness::run_capacity(&cfg)?;
            let mut out = output(cfg.out.as_deref())?;
            serde_json::to_writer_pretty(&mut out, &rows)?;
            writeln!(out)?;
            out.flush()?;
        }
        Command::Sweep(args) => {
            let cfg = args.resolve(None)?;
            if !matches!(cfg.mode, Mode::Flat | Mode::Fs) {
                bail!("sweep needs --mode flat or fs");
            }
            let result = harness::run_sweep(&cfg)?;
            let mut out = output(cfg.out.as_deref())?;
            result.write_csv(&mut out)?;
            out.flush()?;
            if let Some(path) = &cfg.out {
                let meta = metadata_path(path);
                let mut m = output(Some(&meta))?;
                result.write_metadata(&mut m)?;
                writeln!(m)?;
                m.flush()?;
            }
        }
        Command::Spectrum(args) => {
            let cfg = args.resolve(None)?;
            let sol = harness::run_spectrum(&cfg)?;
            let mut out = output(cfg.out.as_deref())?;
            harness::write_spectrum(&sol, &mut out)?;
            out.flush()?;
        }
        Command::Validate(args) => {
            let cfg = args.resolve(Some(Mode::Validate))?;
            let report = harness::run_validate(&cfg);
            let mut out = output(cfg.out.as_deref())?;
            report.write_json(&mut out)?;
            writeln!(out)?;
            out.flush()?;
            for c in report.checks.iter().filter(|c| !c.passed) {
                eprintln!("check failed: {} (measured {:e}, threshold {:e})", c.name, c.measured, c.threshold);
            }
            if !report.passed {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Channel(ChannelCommand::Gen { k, l, j, seed, index, out }) => {
            if k == 0 || l == 0 || j == 0 {
                bail!("--k, --l and --j must be >= 1");
            }
            let ch = if j == 1 {
                channel::FsChannel::from(channel::gen_flat_indexed(k, l, seed, index))
            } else {
                channel::gen_fs_indexed(k, l, j, seed, index)
            };
            let mut w = output(out.as_deref())?;
            w.write_all(channel::format_channel(&ch).as_bytes())?;
            w.flush()?;
        }
        Command::Channel(ChannelCommand::Show { channel_file }) => {
            let ch = channel::load_channel(&channel_file)
                .with_context(|| format!("loading {}", channel_file.display()))?;
            println!("K={} L={} J={}", ch.k(), ch.l(), ch.j());
            for a in 0..ch.k() {
                let energies: Vec<String> = (0..ch.l()).map(|b| format!("{:.6}", ch.link_energy(a, b))).collect();
                println!("link energy row {a}: {}", energies.join(" "));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
