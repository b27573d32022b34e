use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use masfuzz_core::campaign::{render_text, CampaignConfig, Pipeline};
use masfuzz_core::oracle::OracleConfig;
use masfuzz_core::scheduler::{Action, CampaignStatus};

const EXIT_COMPLETED: u8 = 0;
const EXIT_FATAL: u8 = 1;
const EXIT_BUDGET_EXHAUSTED: u8 = 3;

#[derive(Parser)]
#[command(name = "masfuzz", version, about = "Sequence-guided fuzz driver generation and scheduling for C libraries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Every stage in order, then the report.
    Run {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoints already in the working directory.
        #[arg(long)]
        resume: bool,
    },
    /// Scan the library and mine API sequences.
    Mine {
        #[command(flatten)]
        common: Common,
    },
    /// Generate and compile one driver per public API per round.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the scheduling loop over the generated drivers.
    Schedule {
        #[command(flatten)]
        common: Common,
        /// Print the initial scheduling decisions without executing anything.
        #[arg(long)]
        dry_run: bool,
        #[arg(long)]
        resume: bool,
    },
    /// Classify crashes that are still unclassified.
    Triage {
        #[command(flatten)]
        common: Common,
    },
    /// Render report.json, report.txt and coverage_curve.csv.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Campaign configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Total fuzzing budget, e.g. `90`, `90s`, `15m`, `2h`.
    #[arg(long, value_parser = parse_duration)]
    budget: Option<f64>,
    /// Use the deterministic built-in oracles for every role.
    #[arg(long)]
    stub_oracles: bool,
    /// Simulation spec; drivers are checked instead of compiled and runs are simulated.
    #[arg(long)]
    simulate: Option<PathBuf>,
    /// Override the working directory.
    #[arg(long)]
    workdir: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(long, short, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn parse_duration(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let (num, unit) = match s.find(|c: char| c.is_ascii_alphabetic()) {
        Some(i) => (&s[..i], &s[i..]),
        None => (s, "s"),
    };
    let v: f64 = num.trim().parse().map_err(|_| format!("invalid duration `{s}`"))?;
    let scale = match unit {
        "s" | "sec" | "secs" => 1.0,
        "m" | "min" | "mins" => 60.0,
        "h" | "hr" | "hrs" => 3600.0,
        _ => return Err(format!("unknown duration unit `{unit}` (use s, m or h)")),
    };
    if !(v.is_finite() && v > 0.0) {
        return Err(format!("duration must be positive, got `{s}`"));
    }
    Ok(v * scale)
}

impl Common {
    fn pipeline(&self) -> anyhow::Result<Pipeline> {
        let level = match self.verbose {
            0 => tracing::Level::WARN,
            1 => tracing::Level::INFO,
            _ => tracing::Level::DEBUG,
        };
        let _ = tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).try_init();

        let mut cfg = CampaignConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        if let Some(b) = self.budget {
            cfg.scheduler.total_budget_secs = b;
        }
        if self.stub_oracles {
            cfg.oracles = OracleConfig::stub();
        }
        if let Some(s) = &self.simulate {
            cfg.simulate = Some(s.clone());
        }
        if let Some(w) = &self.workdir {
            cfg.workdir = w.clone();
        }
        Ok(Pipeline::from_config(cfg)?)
    }
}

fn status_code(s: CampaignStatus) -> u8 {
    match s {
        CampaignStatus::BudgetExhausted => EXIT_BUDGET_EXHAUSTED,
        _ => EXIT_COMPLETED,
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Run { common, resume } => {
            let p = common.pipeline()?;
            let r = p.run(resume)?;
            print!("{}", render_text(&r));
            Ok(status_code(r.status))
        }
        Command::Mine { common } => {
            let p = common.pipeline()?;
            let (model, m) = p.mine()?;
            println!("{} public APIs, {} sequences mined", model.apis.len(), m.pool.sequences.len());
            Ok(EXIT_COMPLETED)
        }
        Command::Generate { common } => {
            let p = common.pipeline()?;
            let d = p.generate()?;
            let ok = d.drivers.iter().filter(|x| x.state == masfuzz_core::synth::DriverState::Compiled).count();
            println!("{} drivers generated, {} compiled", d.drivers.len(), ok);
            Ok(EXIT_COMPLETED)
        }
        Command::Schedule { common, dry_run, resume } => {
            let p = common.pipeline()?;
            if dry_run {
                println!("driver\tindex\taction\tavg_cov\talpha\tbase_time\tomega\tassigned");
                for d in p.dry_run()? {
                    let action = if d.action == Action::Skip { "skip" } else { "execute" };
                    println!(
                        "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.3}\t{:.6}\t{:.3}",
                        d.driver_id, d.index, action, d.avg_cov, d.alpha_t, d.base_time, d.omega_novelty, d.assigned_time
                    );
                }
                return Ok(EXIT_COMPLETED);
            }
            let c = p.schedule(resume)?;
            println!(
                "{} drivers scheduled, {:.1}s consumed, {} branches",
                c.state.schedule.len(),
                c.state.consumed,
                c.state.ledger.global_branches.len()
            );
            Ok(status_code(c.state.status))
        }
        Command::Triage { common } => {
            let p = common.pipeline()?;
            let book = p.triage()?;
            let s = masfuzz_core::triage::summarize(book.records.values());
            println!("{}", serde_json::to_string_pretty(&s)?);
            Ok(EXIT_COMPLETED)
        }
        Command::Report { common } => {
            let p = common.pipeline()?;
            let r = p.report()?;
            print!("{}", render_text(&r));
            Ok(EXIT_COMPLETED)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FATAL)
        }
    }
}
