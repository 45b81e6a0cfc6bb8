use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tokenlab::experiments::{compare, parse_config, parse_params, run_experiment};
use tokenlab::theory_errors::{capacity, limit_optimal_error, sample_scalar_law, LimitQuery, Model};
use tokenlab::Error;

#[derive(Parser)]
#[command(name = "lab", version, about = "Theory and simulation runs for attention-based sequence classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Pooled,
    Vectorized,
    Attention,
    ApproxAttention,
}

impl From<ModelArg> for Model {
    fn from(m: ModelArg) -> Model {
        match m {
            ModelArg::Pooled => Model::Pooled,
            ModelArg::Vectorized => Model::Vectorized,
            ModelArg::Attention => Model::Attention,
            ModelArg::ApproxAttention => Model::ApproxAttention,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write CSVs plus a JSON summary.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Join two CSVs on their parameter columns and z-test the values.
    Compare { a: PathBuf, b: PathBuf },
    /// Optimal test error as the sequence length grows.
    Limits {
        #[arg(long, value_enum)]
        model: ModelArg,
        /// Use `inf` for an infinite SNR.
        #[arg(long)]
        snr: f64,
        #[arg(long)]
        pi: f64,
        #[arg(long)]
        attention_ratio: Option<f64>,
    },
    /// Predicted separability threshold.
    Capacity {
        #[arg(long, value_enum)]
        model: ModelArg,
        /// JSON object with task parameters (the `params` block of a config).
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Failures caused by bad input exit with 2, all others with 1.
fn exit_for(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Config { .. } | Error::Parameter(_) | Error::Json(_) | Error::Io(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn verdict(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            workers,
        } => {
            let mut spec = parse_config(&config)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            if let Some(o) = out {
                spec.output_dir = o;
            }
            let report = match workers {
                Some(k) => rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build()
                    .map_err(|e| Error::Parameter(e.to_string()))?
                    .install(|| run_experiment(&spec))?,
                None => run_experiment(&spec)?,
            };
            let s = &report.summary;
            for r in &s.rows {
                println!(
                    "{:<18} {:<16} theory={:<12.6} empirical={:<12.6} se={:<10.3e} z={:<8.2} {}",
                    r.panel,
                    r.model.map_or_else(String::new, |m| format!("{m:?}")),
                    r.theory,
                    r.empirical_mean,
                    r.empirical_stderr,
                    r.z,
                    if r.pass { "pass" } else { "FAIL" }
                );
            }
            for p in &s.points {
                for f in &p.failures {
                    eprintln!("point {} {} trial {:?}: {}", p.index, f.panel, f.trial, f.message);
                }
            }
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            println!("{} of {} rows pass", s.n_pass, s.rows.len());
            Ok(verdict(s.all_pass))
        }
        Command::Compare { a, b } => {
            let c = compare(&a, &b)?;
            for r in &c.rows {
                let key: Vec<String> = r.key.iter().map(|(k, v)| format!("{k}={v}")).collect();
                println!(
                    "{} theory={} empirical={} se={} z={:.3} {}",
                    key.join(","),
                    r.theory,
                    r.empirical_mean,
                    r.empirical_stderr,
                    r.z,
                    if r.pass { "pass" } else { "FAIL" }
                );
            }
            for u in &c.unmatched {
                eprintln!("unmatched: {u}");
            }
            Ok(verdict(c.all_pass()))
        }
        Command::Limits {
            model,
            snr,
            pi,
            attention_ratio,
        } => {
            let r = limit_optimal_error(&LimitQuery {
                model: model.into(),
                snr,
                pi,
                attention_ratio,
            })?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Capacity { model, config, seed } => {
            let p = parse_params(&std::fs::read_to_string(&config)?)?;
            let task = p.task()?;
            let model = Model::from(model);
            let law = if model == Model::Attention {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Some(sample_scalar_law(p.gamma, p.q_norm, p.beta, &task, p.n_mc, &mut rng)?)
            } else {
                None
            };
            let r = capacity(model, &task, law.as_ref())?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(verdict(r.converged))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => exit_for(&e),
    }
}
