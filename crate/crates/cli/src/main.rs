//! `stem`: clear a two-stage stochastic market and run the case-study experiments.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use stem_core::experiments::{
    baseline_compare, baseline_table, misreport_sweep, misreport_table, payment_sweep,
    payment_table, CaseStudy, PaymentAxis, ASSUMED_VARIANCES, CASESTUDY_TOML, DEFAULT_SAMPLES,
    MISREPORT_GRID,
};
use stem_core::model::{bitmask_string, parse_market, Market};
use stem_core::payments::{settle, CounterfactualCache};
use stem_core::scenario::{sample_scenarios, ScenarioSet};
use stem_core::stage1::solve_first_stage_on;
use stem_core::stage2::solve_second_stage;
use stem_core::table::{CsvTable, Cell};
use stem_core::MarketError;

use manifest::Manifest;

#[derive(Parser)]
#[command(name = "stem", version, about = "Two-stage stochastic market clearing with VCG payments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a market configuration and list every violation.
    Validate { config: PathBuf },
    /// Solve the first stage and write the decision with per-bitmask diagnostics.
    Solve {
        config: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Also write the planning scenarios.
        #[arg(long)]
        dump_scenarios: bool,
    },
    /// Clear the second stage for given realized types and settle payments.
    #[command(alias = "settle")]
    Clear {
        config: PathBuf,
        /// Realized types, one scenario in the scenario CSV schema.
        #[arg(long)]
        realization: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Average utility against reported baseline variance (fig2.csv).
    SweepMisreport {
        /// Market configuration; defaults to the shipped case study.
        config: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        mc: SampleArgs,
    },
    /// Payments to one producer along a parameter axis (fig3_<axis>.csv).
    SweepPayments {
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_axis)]
        axis: PaymentAxis,
        /// 1-based index of the varied producer.
        #[arg(long, default_value_t = 1)]
        producer: usize,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        mc: SampleArgs,
    },
    /// Proposed market against fixed-variance markets (table1.csv).
    CompareBaseline {
        config: Option<PathBuf>,
        /// Operator-imposed baseline variances.
        #[arg(long, value_delimiter = ',', default_values_t = ASSUMED_VARIANCES.to_vec())]
        assumed: Vec<f64>,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        mc: SampleArgs,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Seed; falls back to STEM_SEED, then to the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of planning scenarios.
    #[arg(long)]
    scenarios: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args, Clone)]
struct SampleArgs {
    /// Number of evaluation realizations.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
}

fn parse_axis(s: &str) -> Result<PaymentAxis, String> {
    s.parse().map_err(|e: MarketError| e.to_string())
}

/// Failure with its exit code.
#[derive(Debug)]
enum Failure {
    /// Malformed or invalid input (exit 1).
    Invalid(String),
    /// Solver error or unreadable file (exit 2).
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl From<MarketError> for Failure {
    fn from(e: MarketError) -> Self {
        match e {
            MarketError::InvalidConfig(_) | MarketError::Parse(_) | MarketError::DimensionMismatch { .. } => {
                Failure::Invalid(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Invalid(m) | Failure::Runtime(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

/// A loaded market with the text it came from.
struct Loaded {
    market: Market,
    source: String,
    text: String,
}

fn load(config: Option<&Path>) -> Result<Loaded, Failure> {
    let (text, source) = match config {
        Some(p) => (
            fs::read_to_string(p).map_err(|e| io_failure(p, e))?,
            p.display().to_string(),
        ),
        None => (CASESTUDY_TOML.to_string(), "<shipped case study>".to_string()),
    };
    let market = parse_market(&text)?;
    let violations = market.validate();
    if !violations.is_empty() {
        return Err(MarketError::InvalidConfig(violations).into());
    }
    Ok(Loaded {
        market,
        source,
        text,
    })
}

fn resolve_seed(flag: Option<u64>, config_seed: u64) -> Result<u64, Failure> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("STEM_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::Invalid(format!("STEM_SEED={v:?} is not an unsigned integer"))),
        Err(_) => Ok(config_seed),
    }
}

/// Applies seed and scenario overrides.
fn configure(loaded: &mut Loaded, run: &RunArgs) -> Result<(), Failure> {
    let cfg = &mut loaded.market.config;
    cfg.seed = resolve_seed(run.seed, cfg.seed)?;
    if let Some(s) = run.scenarios {
        if s == 0 {
            return Err(Failure::Invalid("--scenarios must be at least 1".into()));
        }
        cfg.scenario_count = s;
    }
    Ok(())
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn write(out: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let path = out.join(name);
    fs::write(&path, contents).map_err(|e| io_failure(&path, e))
}

fn run(command: Command) -> Result<(), Failure> {
    let started = Instant::now();
    match command {
        Command::Validate { config } => {
            let text = fs::read_to_string(&config).map_err(|e| io_failure(&config, e))?;
            let market = parse_market(&text)?;
            let violations = market.validate();
            if violations.is_empty() {
                println!(
                    "{}: ok ({} producers, demand {})",
                    config.display(),
                    market.n(),
                    market.config.demand
                );
                Ok(())
            } else {
                for v in &violations {
                    eprintln!("{}: {v}", config.display());
                }
                Err(Failure::Invalid(format!("{} violation(s)", violations.len())))
            }
        }
        Command::Solve {
            config,
            run,
            dump_scenarios,
        } => {
            let mut loaded = load(Some(&config))?;
            configure(&mut loaded, &run)?;
            let cfg = loaded.market.config.clone();
            let (scenarios, sol) = with_threads(run.threads, || -> Result<_, MarketError> {
                let sc = sample_scenarios(&loaded.market.distributions, cfg.scenario_count, cfg.seed)?;
                let sol = solve_first_stage_on(&sc, &cfg)?;
                Ok((sc, sol))
            })??;
            let mut solution = CsvTable::new(&["bitmask", "reserve", "dispatchable", "expected_cost"]);
            solution.push(vec![
                sol.decision.bitmask_string().into(),
                sol.decision.reserve_capacity.into(),
                sol.decision.dispatchable.into(),
                sol.expected_cost.into(),
            ]);
            let mut diagnostics = CsvTable::new(&[
                "bitmask",
                "reserve",
                "dispatchable",
                "expected_cost",
                "lower_bound",
                "cuts",
            ]);
            for (mask, o) in &sol.per_bitmask {
                diagnostics.push(vec![
                    bitmask_string(mask).into(),
                    o.reserve.into(),
                    o.dispatchable.into(),
                    o.value.into(),
                    o.lower_bound.into(),
                    o.cuts.into(),
                ]);
            }
            write(&run.out, "solution.csv", &solution.render())?;
            write(&run.out, "diagnostics.csv", &diagnostics.render())?;
            if dump_scenarios {
                write(&run.out, "scenarios.csv", &scenarios.to_csv())?;
            }
            println!(
                "dispatch {} reserve {:.3} dispatchable {:.3} expected cost {:.3}",
                sol.decision.bitmask_string(),
                sol.decision.reserve_capacity,
                sol.decision.dispatchable,
                sol.expected_cost
            );
            finish(&run.out, "solve", &loaded, None, started)
        }
        Command::Clear {
            config,
            realization,
            run,
        } => {
            let mut loaded = load(Some(&config))?;
            configure(&mut loaded, &run)?;
            let text = fs::read_to_string(&realization).map_err(|e| io_failure(&realization, e))?;
            let realized = ScenarioSet::from_csv(&text)?;
            if realized.len() != 1 {
                return Err(Failure::Invalid(format!(
                    "{}: expected exactly one scenario, found {}",
                    realization.display(),
                    realized.len()
                )));
            }
            let thetas = realized.scenario(0).to_vec();
            if thetas.len() != loaded.market.n() {
                return Err(MarketError::DimensionMismatch {
                    expected: loaded.market.n(),
                    actual: thetas.len(),
                }
                .into());
            }
            let cfg = loaded.market.config.clone();
            let (cache, stage2, records) = with_threads(run.threads, || -> Result<_, MarketError> {
                let sc = sample_scenarios(&loaded.market.distributions, cfg.scenario_count, cfg.seed)?;
                let cache = CounterfactualCache::build(&sc, &cfg)?;
                let stage2 = solve_second_stage(cache.decision(), &thetas, &cfg)?;
                let records = settle(&cache, &thetas, &cfg)?;
                Ok((cache, stage2, records))
            })??;
            let mut settlement = CsvTable::new(&["producer", "t1", "t2", "cost", "utility"]);
            for r in &records {
                settlement.push(vec![
                    r.producer_id.into(),
                    r.t1.into(),
                    r.t2.into(),
                    r.cost.into(),
                    r.utility.into(),
                ]);
            }
            let mut second = CsvTable::new(&["resource", "volume"]);
            for (i, v) in stage2.decision.volumes.iter().enumerate() {
                second.push(vec![Cell::Text(format!("producer_{}", i + 1)), (*v).into()]);
            }
            second.push(vec!["activation".into(), stage2.decision.activation.into()]);
            second.push(vec!["shedding".into(), stage2.decision.shedding.into()]);
            second.push(vec!["second_stage_cost".into(), stage2.value.into()]);
            write(&run.out, "settlement.csv", &settlement.render())?;
            write(&run.out, "second_stage.csv", &second.render())?;
            println!(
                "dispatch {} activation {:.3} shedding {:.3} second-stage cost {:.3}",
                cache.decision().bitmask_string(),
                stage2.decision.activation,
                stage2.decision.shedding,
                stage2.value
            );
            finish(&run.out, "clear", &loaded, None, started)
        }
        Command::SweepMisreport { config, run, mc } => {
            let (loaded, case) = case_study(config.as_deref(), &run)?;
            let producers: Vec<usize> = (0..case.n()).collect();
            let seed = case.config.seed;
            let points = with_threads(run.threads, || {
                misreport_sweep(&case, &producers, &MISREPORT_GRID, mc.samples, seed)
            })??;
            write(&run.out, "fig2.csv", &misreport_table(&points).render())?;
            finish(&run.out, "sweep-misreport", &loaded, Some(mc.samples), started)
        }
        Command::SweepPayments {
            config,
            axis,
            producer,
            run,
            mc,
        } => {
            let (loaded, case) = case_study(config.as_deref(), &run)?;
            if producer == 0 || producer > case.n() {
                return Err(Failure::Invalid(format!(
                    "--producer must be between 1 and {}",
                    case.n()
                )));
            }
            let seed = case.config.seed;
            let points = with_threads(run.threads, || {
                payment_sweep(&case, axis, axis.default_values(), producer - 1, mc.samples, seed)
            })??;
            write(&run.out, &format!("fig3_{axis}.csv"), &payment_table(&points).render())?;
            finish(&run.out, "sweep-payments", &loaded, Some(mc.samples), started)
        }
        Command::CompareBaseline {
            config,
            assumed,
            run,
            mc,
        } => {
            let (loaded, case) = case_study(config.as_deref(), &run)?;
            let seed = case.config.seed;
            let columns = with_threads(run.threads, || {
                baseline_compare(&case, &assumed, mc.samples, seed)
            })??;
            write(&run.out, "table1.csv", &baseline_table(&columns).render())?;
            finish(&run.out, "compare-baseline", &loaded, Some(mc.samples), started)
        }
    }
}

fn case_study(config: Option<&Path>, run: &RunArgs) -> Result<(Loaded, CaseStudy), Failure> {
    let mut loaded = load(config)?;
    configure(&mut loaded, run)?;
    let case = CaseStudy::from_market(loaded.market.clone())?;
    Ok((loaded, case))
}

fn finish(
    out: &Path,
    command: &str,
    loaded: &Loaded,
    samples: Option<usize>,
    started: Instant,
) -> Result<(), Failure> {
    let m = Manifest::new(
        command,
        &loaded.source,
        &loaded.market.config,
        samples,
        &loaded.text,
        started.elapsed(),
    );
    write(out, "manifest.json", &m.to_json())
}
