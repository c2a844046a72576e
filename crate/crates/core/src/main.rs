use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;

use paygap::config::{RunConfig, SupportOrder};
use paygap::datamodel::{load_dataset, validate_blocks, Dataset, Schema, VariableBlock};
use paygap::dgp::{paper_shape_dgp, DgpConfig, Sector};
use paygap::estimators::run_grid;
use paygap::inference::bootstrap_grid;
use paygap::report::{diagnose, estimates_csv, estimates_table};
use paygap::support::{rank_variable_blocks, sequential_support_analysis};
use paygap::Error;

#[derive(Parser)]
#[command(name = "paygap", version, about = "Unexplained pay gap estimation under common support")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Inputs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Overrides the seed of the run configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sequential common-support analysis.
    Support {
        #[command(flatten)]
        inputs: Inputs,
        /// deltaR2, given, increasing or random(SEED).
        #[arg(long)]
        order: Option<String>,
    },
    /// Estimation grid with bootstrap standard errors.
    Estimate {
        #[command(flatten)]
        inputs: Inputs,
        /// Bootstrap replicates (0 skips standard errors).
        #[arg(long)]
        bootstrap: Option<usize>,
    },
    /// Propensity overlap, variable selection and prediction power.
    Diagnose {
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Writes a synthetic dataset with schema, run config and truth.
    Simulate {
        /// `private`, `public` or a DGP config file.
        #[arg(long, default_value = "private")]
        dgp: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "sim")]
        out_dir: PathBuf,
    },
}

enum Failure {
    Validation(Error),
    Estimation(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Validation(e)
    }
}

fn load(inputs: &Inputs) -> Result<(Dataset, RunConfig), Error> {
    let schema = Schema::from_file(&inputs.schema)?;
    let data = load_dataset(&inputs.data, &schema)?;
    let mut cfg = match &inputs.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::parse("")?,
    };
    if let Some(s) = inputs.seed {
        cfg = cfg.with_seed(s);
    }
    validate_blocks(&data, &cfg.blocks)?;
    data.require_both_groups()?;
    Ok((data, cfg))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf, Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let p = dir.join(name);
    std::fs::write(&p, text).map_err(|e| Error::Io {
        path: p.clone(),
        source: e,
    })?;
    Ok(p)
}

fn ordered_blocks(data: &Dataset, cfg: &RunConfig, order: SupportOrder) -> Result<Vec<VariableBlock>, Error> {
    let by_name = |n: &str| {
        cfg.blocks
            .iter()
            .find(|b| b.name == n)
            .cloned()
            .ok_or_else(|| Error::UnknownBlock(n.to_string()))
    };
    match order {
        SupportOrder::Given => cfg.support_sequence.iter().map(|n| by_name(n)).collect(),
        SupportOrder::DeltaR2 | SupportOrder::Increasing => {
            let mut ranked = rank_variable_blocks(&[data], &cfg.blocks, &cfg.specs.baseline)?;
            for r in &ranked {
                log::info!("block {}: delta adjusted R2 {:.6}", r.block, r.delta_r2);
            }
            if order == SupportOrder::Increasing {
                ranked.reverse();
            }
            ranked.iter().map(|r| by_name(&r.block)).collect()
        }
        SupportOrder::Random(seed) => {
            let mut blocks = cfg.blocks.clone();
            blocks.shuffle(&mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed));
            Ok(blocks)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Support { inputs, order } => {
            let (data, cfg) = load(&inputs)?;
            let order = match order {
                Some(o) => SupportOrder::parse(&o)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown support order `{o}`")))?,
                None => cfg.support_order,
            };
            let blocks = ordered_blocks(&data, &cfg, order)?;
            let report = sequential_support_analysis(&data, &blocks)?;
            write(&inputs.out_dir, "support_curve.csv", &report.to_csv())?;
            let table = report.to_table();
            write(&inputs.out_dir, "support_summary.txt", &table)?;
            print!("{table}");
        }
        Command::Estimate { inputs, bootstrap } => {
            let (data, mut cfg) = load(&inputs)?;
            if let Some(b) = bootstrap {
                cfg.bootstrap.replicates = b;
            }
            if cfg.plan.supports.is_empty() {
                return Err(Error::InvalidArgument("the run configuration declares no support".into()).into());
            }
            let mut cells = run_grid(&data, &cfg.blocks, &cfg.specs, &cfg.plan, &cfg.estimation)?;
            if cells.iter().all(|c| c.result.is_err()) {
                let first = cells.first().and_then(|c| c.result.as_ref().err()).cloned().unwrap_or_default();
                return Err(Failure::Estimation(format!("every grid cell failed (first error: {first})")));
            }
            if cfg.bootstrap.replicates >= 2 {
                bootstrap_grid(&data, &cfg.blocks, &cfg.specs, &cfg.plan, &cfg.estimation, &cfg.bootstrap, &mut cells)?;
            }
            write(&inputs.out_dir, "estimates.csv", &estimates_csv(&cells, cfg.benchmark.as_ref()))?;
            let table = estimates_table(&cells);
            write(&inputs.out_dir, "estimates.txt", &table)?;
            print!("{table}");
            let failed = cells.iter().filter(|c| c.result.is_err()).count();
            if failed > 0 {
                eprintln!("{failed} of {} grid cells failed; see estimates.csv", cells.len());
            }
        }
        Command::Diagnose { inputs } => {
            let (data, cfg) = load(&inputs)?;
            let d = diagnose(&data, &cfg)?;
            write(&inputs.out_dir, "propensity_histogram.csv", &d.propensity_csv)?;
            write(&inputs.out_dir, "selection.csv", &d.selection_csv)?;
            write(&inputs.out_dir, "prediction_power.csv", &d.power_csv)?;
            print!("{}\n{}", d.selection_csv, d.power_csv);
        }
        Command::Simulate { dgp, n, seed, out_dir } => {
            let mut cfg = match Sector::parse(&dgp) {
                Some(s) => paper_shape_dgp(s),
                None => {
                    let text = std::fs::read_to_string(&dgp).map_err(|e| Error::Io {
                        path: PathBuf::from(&dgp),
                        source: e,
                    })?;
                    DgpConfig::parse(&text)?
                }
            };
            if let Some(n) = n {
                cfg.n = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let truth = cfg.export(&out_dir)?;
            print!("{}", truth.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_default_env()
        .init();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Estimation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
