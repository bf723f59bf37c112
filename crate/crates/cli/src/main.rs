use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use statplan::decision_engine::{self, ActionSpec, AdviceRule};
use statplan::event_model::{Event, EventInstance};
use statplan::interval_stats::{approx_interval, exact_interval, interval_for, ExactTable, ProbInterval, TrialCounts};
use statplan::knowledge_base::{OccurrenceStore, PcaQuery};
use statplan::rail_sim::{run_scenario, Scenario};

/// Decide between actions from observed success counts.
#[derive(Parser)]
#[command(name = "statplan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Auto,
    Approx,
    Exact,
}

#[derive(Subcommand)]
enum Command {
    /// Confidence interval for y successes in n trials.
    Estimate {
        y: u64,
        n: u64,
        #[arg(default_value_t = 0.05)]
        alpha: f64,
        #[arg(value_enum, default_value_t = MethodArg::Auto)]
        method: MethodArg,
        /// Print bounds at full precision.
        #[arg(long)]
        full: bool,
    },
    /// Write the exact-interval lookup table.
    Table {
        #[arg(long, default_value_t = 40)]
        n_max: u64,
        #[arg(long = "alpha", default_values_t = [0.05, 0.01])]
        alphas: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Append instance lines (file or stdin) to a knowledge base.
    Ingest {
        #[arg(long)]
        kb: PathBuf,
        /// Event declarations used when the knowledge base does not exist yet.
        #[arg(long)]
        catalog: Option<PathBuf>,
        input: Option<PathBuf>,
    },
    /// Interval for `success` given `reference`, optionally within a context.
    Query {
        #[arg(long)]
        kb: PathBuf,
        success: String,
        reference: String,
        #[arg(long)]
        within: Option<String>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Pick an action for a goal.
    Decide {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        goal: String,
        /// `Name=TryEvent`, repeatable.
        #[arg(long = "action", required = true)]
        actions: Vec<String>,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        within: Option<String>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Pick the context under which an action family does best.
    Preconditions {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        goal: String,
        #[arg(long)]
        family: String,
        candidates: Vec<String>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Choose one action per subgoal.
    Plan {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        goal: String,
        #[arg(long = "action", required = true)]
        actions: Vec<String>,
        #[arg(long = "subgoal", required = true)]
        subgoals: Vec<String>,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        within: Option<String>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Run a scenario file and check its assertions.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_kb(path: &Path) -> Result<OccurrenceStore> {
    Ok(OccurrenceStore::load(path)?)
}

fn parse_actions(store: &OccurrenceStore, specs: &[String]) -> Result<Vec<ActionSpec>> {
    specs
        .iter()
        .map(|s| {
            let (name, event) = s.split_once('=').with_context(|| format!("expected Name=TryEvent, got `{s}`"))?;
            Ok(ActionSpec::new(name.trim(), store.resolve(event.trim())?))
        })
        .collect()
}

fn load_rules(path: Option<&Path>) -> Result<Vec<AdviceRule>> {
    match path {
        Some(p) => Ok(decision_engine::parse_rules(&read(p)?).with_context(|| p.display().to_string())?),
        None => Ok(Vec::new()),
    }
}

fn context(store: &OccurrenceStore, within: Option<&str>) -> Result<Event> {
    Ok(within.map(|c| store.resolve(c)).transpose()?.unwrap_or_else(Event::any))
}

fn format_interval(iv: &ProbInterval, full: bool) -> String {
    if full {
        format!("{} {} {}", iv.lo(), iv.hi(), iv.method())
    } else {
        format!("{:.4} {:.4} {}", iv.lo(), iv.hi(), iv.method())
    }
}

/// Runs one command, writing its report to `out`. Returns the exit code for
/// outcomes that are not errors: 0, or 2 for "undecided" and partial plans,
/// or 1 when a scenario has failing assertions.
fn run(cli: Cli, out: &mut dyn Write) -> Result<u8> {
    match cli.command {
        Command::Estimate { y, n, alpha, method, full } => {
            let counts = TrialCounts::new(y, n)?;
            let iv = match method {
                MethodArg::Auto => interval_for(counts, alpha)?,
                MethodArg::Approx => approx_interval(counts, alpha)?,
                MethodArg::Exact => exact_interval(counts, alpha)?,
            };
            writeln!(out, "{}", format_interval(&iv, full))?;
        }
        Command::Table { n_max, alphas, out: path } => {
            if n_max > 1000 {
                bail!("--n-max must be at most 1000");
            }
            let text = ExactTable::generate(n_max, &alphas)?.render();
            match path {
                Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => out.write_all(text.as_bytes())?,
            }
        }
        Command::Ingest { kb, catalog, input } => {
            let mut store = if kb.exists() {
                load_kb(&kb)?
            } else {
                let path = catalog.context("knowledge base does not exist; pass --catalog")?;
                let events = read(&path)?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .map(|l| l.parse::<Event>())
                    .collect::<Result<Vec<_>, _>>()
                    .with_context(|| path.display().to_string())?;
                OccurrenceStore::new(events)?
            };
            let lines: Vec<String> = match &input {
                Some(p) => read(p)?.lines().map(str::to_string).collect(),
                None => io::stdin().lock().lines().collect::<io::Result<_>>()?,
            };
            let mut added = 0;
            for (i, line) in lines.iter().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let instance: EventInstance = line.parse().with_context(|| format!("input line {}", i + 1))?;
                store.ingest(instance).with_context(|| format!("input line {}", i + 1))?;
                added += 1;
            }
            store.save(&kb)?;
            writeln!(out, "ingested {added} instances, {} total", store.len())?;
        }
        Command::Query { kb, success, reference, within, alpha } => {
            let store = load_kb(&kb)?;
            let q = PcaQuery::new(store.resolve(&success)?, store.resolve(&reference)?, alpha)
                .within(context(&store, within.as_deref())?);
            let counts = store.trial_counts(&q);
            let iv = store.pca(&q)?;
            writeln!(out, "{counts} {iv} {}", iv.method())?;
        }
        Command::Decide { kb, goal, actions, rules, within, alpha } => {
            let store = load_kb(&kb)?;
            let actions = parse_actions(&store, &actions)?;
            let rules = load_rules(rules.as_deref())?;
            let d = decision_engine::decide_with_advice(
                &store,
                &store.resolve(&goal)?,
                &context(&store, within.as_deref())?,
                alpha,
                &actions,
                &rules,
            )?;
            write!(out, "{}", d.trace())?;
            if !d.is_decided() {
                return Ok(2);
            }
        }
        Command::Preconditions { kb, goal, family, candidates, alpha } => {
            let store = load_kb(&kb)?;
            let cands = candidates.iter().map(|c| store.resolve(c)).collect::<Result<Vec<_>, _>>()?;
            let choice = decision_engine::select_preconditions(
                &store,
                &store.resolve(&goal)?,
                &store.resolve(&family)?,
                &cands,
                alpha,
            )?;
            write!(out, "{}", choice.trace())?;
        }
        Command::Plan { kb, goal, actions, subgoals, rules, within, alpha } => {
            let store = load_kb(&kb)?;
            let actions = parse_actions(&store, &actions)?;
            let subgoals = subgoals.iter().map(|s| store.resolve(s)).collect::<Result<Vec<_>, _>>()?;
            let plan = decision_engine::plan_sequence(
                &store,
                &store.resolve(&goal)?,
                &context(&store, within.as_deref())?,
                alpha,
                &actions,
                &subgoals,
                &load_rules(rules.as_deref())?,
            )?;
            write!(out, "{}", plan.trace())?;
            if !plan.is_complete() {
                return Ok(2);
            }
        }
        Command::Simulate { scenario, seed, out: path } => {
            let report = run_scenario(&Scenario::load(&scenario)?, seed)?;
            let text = report.render();
            out.write_all(text.as_bytes())?;
            if let Some(p) = path {
                fs::write(&p, &text).with_context(|| format!("writing {}", p.display()))?;
            }
            if !report.all_passed() {
                return Ok(1);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    // clap's own usage exit code is 2, which is reserved for "undecided"
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    match run(cli, &mut io::stdout().lock()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
