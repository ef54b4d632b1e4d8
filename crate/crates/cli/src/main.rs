use std::path::PathBuf;
use std::process::ExitCode;

use bayes_pde::pde::NoiseSpec;
use bayes_pde::pipeline::{self, Profile, RunConfig, Surrogate};
use bayes_pde::regression::Method;
use bayes_pde::Error;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "bayes-pde", version, about = "Discover PDEs from sparse sensor data with a Bayesian surrogate")]
struct Cli {
    /// JSON run configuration; built from --profile and --problem when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
    #[arg(long, global = true, value_enum)]
    method: Option<MethodArg>,
    /// Output root directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Preset problem: burgers, kdv or heat.
    #[arg(long, global = true)]
    problem: Option<String>,
    /// Measurement noise std for single-case commands; 0 means noiseless.
    #[arg(long, global = true)]
    noise: Option<f64>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the problem and write sensor data.
    Generate,
    /// Train a surrogate on the generated data.
    Train {
        #[arg(long, value_enum, default_value = "bnn")]
        mode: ModeArg,
    },
    /// Build the derivative library and run sparse regression.
    Discover {
        /// Library source; defaults to bnn for stblr and dnn for stols.
        #[arg(long, value_enum)]
        surrogate: Option<SurrogateArg>,
    },
    /// Score trained surrogates and discovered PDEs against ground truth.
    Evaluate,
    /// Run every stage for every noise case and write the report.
    Pipeline,
    /// Rebuild the report from pipeline artifacts.
    Report,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProfileArg {
    Paper,
    Desk,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Stblr,
    Stols,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Bnn,
    Dnn,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SurrogateArg {
    Bnn,
    Dnn,
    Exact,
}

fn profile_of(p: ProfileArg) -> Profile {
    match p {
        ProfileArg::Paper => Profile::Paper,
        ProfileArg::Desk => Profile::Desk,
    }
}

fn resolve(cli: &Cli) -> bayes_pde::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let mut cfg = RunConfig::load(path)?;
            if let Some(p) = cli.profile {
                // Swap in the profile's run lengths, keep everything else.
                let base = RunConfig::profile(profile_of(p), &cfg.problem);
                cfg.profile = base.profile;
                cfg.hmc.n_samples = base.hmc.n_samples;
                cfg.d = base.d;
                cfg.thinning = base.thinning;
            }
            if let Some(problem) = &cli.problem {
                cfg.problem = problem.clone();
            }
            cfg
        }
        None => {
            let problem = cli.problem.as_deref().unwrap_or("burgers");
            let profile = cli.profile.map(profile_of).unwrap_or(Profile::Desk);
            RunConfig::profile(profile, problem)
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(n) = cli.threads {
        cfg.threads = Some(n);
    }
    if let Some(sigma) = cli.noise {
        cfg.noise = if sigma == 0.0 {
            NoiseSpec::None
        } else {
            NoiseSpec::Gaussian { sigma }
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Dimension(_) | Error::Domain(_) => 2,
        Error::Numerical(_) => 3,
        Error::Io { .. } | Error::Format { .. } => 4,
    }
}

fn run(cli: &Cli) -> bayes_pde::Result<()> {
    let cfg = resolve(cli)?;
    if cli.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        return Ok(());
    }
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let method = match cli.method {
        Some(MethodArg::Stols) => Method::Stols,
        _ => Method::Stblr,
    };
    match &cli.command {
        Command::Generate => {
            let path = pipeline::cmd_generate(&cfg)?;
            println!("{}", path.display());
        }
        Command::Train { mode } => {
            let mode = match mode {
                ModeArg::Bnn => Surrogate::Bnn,
                ModeArg::Dnn => Surrogate::Dnn,
            };
            let path = pipeline::cmd_train(&cfg, mode)?;
            println!("{}", path.display());
        }
        Command::Discover { surrogate } => {
            let surrogate = surrogate.map(|s| match s {
                SurrogateArg::Bnn => Surrogate::Bnn,
                SurrogateArg::Dnn => Surrogate::Dnn,
                SurrogateArg::Exact => Surrogate::Exact,
            });
            let found = pipeline::cmd_discover(&cfg, method, surrogate)?;
            if found.trivial {
                eprintln!("warning: every candidate was pruned (trivial PDE u_t = 0)");
            }
        }
        Command::Evaluate => {
            let ev = pipeline::cmd_evaluate(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&ev).expect("evaluation serializes"));
        }
        Command::Pipeline => {
            let report = pipeline::cmd_pipeline(&cfg)?;
            print!("{}", report.render());
        }
        Command::Report => {
            let report = pipeline::cmd_report(&cfg)?;
            print!("{}", report.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
