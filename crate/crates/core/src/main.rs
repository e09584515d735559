use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use rfshift::cli::{
    diagnose_report, kernel_reports_csv, kernel_verify, run_sweep, spectral_ratio_report, AuditOptions,
    ExperimentConfig, KernelVerifyOptions, SpectrumSource,
};
use rfshift::kernels::OnesCoefficient;
use rfshift::spectra::{Spectrum, SpectrumKind};

#[derive(Parser)]
#[command(name = "rfshift", version, about = "Random-feature regression under covariate shift")]
struct Cli {
    /// Worker threads for Monte Carlo sweeps.
    #[arg(long, global = true, default_value_t = default_workers())]
    workers: usize,

    /// Overrides the master seed of the config or subcommand.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo sweep over m and write the result CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the closed-form expected kernel with its linearization across p.
    KernelVerify {
        #[arg(long, value_delimiter = ',', default_value = "256,1024,4096")]
        p_values: Vec<usize>,
        #[arg(long, default_value_t = 4)]
        n: usize,
        /// Spectrum kind evaluated at each p.
        #[arg(long, default_value = "example2")]
        spectrum: String,
        /// Input sets averaged per p.
        #[arg(long, default_value_t = 64)]
        x_draws: usize,
        #[arg(long, value_enum, default_value_t = Coefficient::Trace)]
        ones_coefficient: Coefficient,
        #[arg(long)]
        out: PathBuf,
    },
    /// Eigenvalue-ratio audit of a shifted spectrum against a baseline.
    SpectraAudit {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        shifted: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        b: f64,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Benign-overfitting and high-dimension diagnostics for a spectrum.
    Diagnose {
        /// Spectrum kind or file.
        #[arg(long)]
        spectrum: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        /// Dimension for kinds not sized by n.
        #[arg(long)]
        p: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        b: f64,
        #[arg(long, default_value_t = 0.5)]
        xi: f64,
        /// Ratio a `≫` condition must reach to count as satisfied.
        #[arg(long, default_value_t = 2.0)]
        threshold: f64,
        /// Writes to standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Coefficient {
    /// tr{Σ²}
    Trace,
    /// tr{Σ²}/λ₁²
    Rank,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Sweep { config, out } => {
            let parsed = ExperimentConfig::parse_file(&config)
                .with_context(|| format!("reading config {}", config.display()))?;
            let mut cfg = parsed.config;
            if let Some(seed) = cli.seed {
                cfg.master_seed = seed;
            }
            log::info!("resolved config:\n{}", cfg.to_config_string().trim_end());
            let result = run_sweep(&cfg, cli.workers)?;
            write(&out, &result.to_csv())?;
            log::info!("wrote {} rows to {}", result.rows.len(), out.display());
        }
        Command::KernelVerify {
            p_values,
            n,
            spectrum,
            x_draws,
            ones_coefficient,
            out,
        } => {
            let Some(kind) = SpectrumKind::parse(&spectrum) else {
                bail!("unknown spectrum kind `{spectrum}`");
            };
            let opts = KernelVerifyOptions {
                n,
                kind,
                seed: cli.seed.unwrap_or(0),
                x_draws,
                reading: match ones_coefficient {
                    Coefficient::Trace => OnesCoefficient::TraceOfSquare,
                    Coefficient::Rank => OnesCoefficient::EffectiveRankOfSquare,
                },
            };
            log::info!("kernel-verify p = {p_values:?}, n = {n}, spectrum = {}, x_draws = {x_draws}", kind.name());
            write(&out, &kernel_reports_csv(&kernel_verify(&p_values, opts)?))?;
        }
        Command::SpectraAudit {
            baseline,
            shifted,
            n,
            b,
            tau,
            out,
        } => {
            let base = Spectrum::read(&baseline).with_context(|| format!("reading {}", baseline.display()))?;
            let shift = Spectrum::read(&shifted).with_context(|| format!("reading {}", shifted.display()))?;
            write(&out, &spectral_ratio_report(&base, &shift, AuditOptions { n, b, tau })?)?;
        }
        Command::Diagnose {
            spectrum,
            n,
            m,
            p,
            b,
            xi,
            threshold,
            out,
        } => {
            let source = SpectrumSource::parse(&spectrum, Path::new(""));
            let spec = match (&source, p) {
                (SpectrumSource::Kind(kind), _) if kind.size_is_sample_count() => source.resolve(n, n.pow(5))?,
                (SpectrumSource::Kind(_), None) => bail!("--p is required for spectrum `{spectrum}`"),
                (SpectrumSource::Kind(_), Some(p)) => source.resolve(n, p)?,
                (SpectrumSource::File(path), _) => Spectrum::read(path)?,
            };
            let text = diagnose_report(&spec, n, m, b, xi, threshold)?;
            match out {
                Some(path) => write(&path, &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}
