use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fedcontrib::cas::ContentStore;
use fedcontrib::config::{client_address, ClientEntry, RunConfig};
use fedcontrib::data::{load_idx, mnist_paths, SyntheticTask};
use fedcontrib::model::evaluate;
use fedcontrib::replay::{verify, ReplayError};
use fedcontrib::report::ContractRole;
use fedcontrib::{run_experiment, Dataset, Protocol};

const REPORT: &str = "report.csv";
const LOG: &str = "transactions.jsonl";
const CAS: &str = "cas";
const MANIFEST: &str = "manifest.json";

#[derive(Parser)]
#[command(
    name = "fedcontrib",
    version,
    about = "Federated learning contributivity simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Run one experiment and write its report, transaction log, content
    /// store and manifest to --out.
    Run(RunArgs),
    /// Recompute a run from its transaction log and content store and
    /// compare with the recorded report.
    Replay {
        /// Run directory, or the transaction log inside one.
        path: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run config; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    protocol: Option<Protocol>,
    /// Directory holding the uncompressed MNIST IDX files.
    #[arg(long, env = "FEDCONTRIB_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Use a generated task with this many training samples instead of MNIST.
    #[arg(long, conflicts_with = "data_dir")]
    synthetic: Option<usize>,
    /// Number of equally sized clients.
    #[arg(long, conflicts_with = "ratios")]
    clients: Option<usize>,
    /// Relative client dataset sizes, e.g. 2:1:1.
    #[arg(long, value_delimiter = ':')]
    ratios: Option<Vec<u64>>,
    /// Label-flip proportion per client, e.g. 0,0.3,0.9.
    #[arg(long, value_delimiter = ',')]
    flip: Option<Vec<f64>>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of the training split to use.
    #[arg(long)]
    subsample: Option<f64>,
    #[arg(long)]
    token_scale: Option<f64>,
    /// Logical seconds per round.
    #[arg(long)]
    round_duration: Option<u64>,
    /// Hidden layer widths, e.g. 128 or 256,64.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    out: PathBuf,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident <- $flag:ident),*) => {
                $(if let Some(v) = self.$flag.clone() { cfg.$field = v; })*
            };
        }
        set!(protocol <- protocol, rounds <- rounds, epochs <- epochs,
             batch_size <- batch_size, learning_rate <- lr, seed <- seed,
             token_scale <- token_scale, round_duration <- round_duration,
             hidden <- hidden);
        if self.data_dir.is_some() {
            cfg.data_dir = self.data_dir.clone();
        }
        if self.subsample.is_some() {
            cfg.subsample = self.subsample;
        }
        if let Some(n) = self.clients {
            cfg.clients = vec![ClientEntry::default(); n];
        }
        if let Some(r) = &self.ratios {
            cfg.clients = r
                .iter()
                .map(|&ratio| ClientEntry { ratio, flip: 0.0 })
                .collect();
        }
        if let Some(flips) = &self.flip {
            if self.clients.is_none() && self.ratios.is_none() && self.config.is_none() {
                cfg.clients = vec![ClientEntry::default(); flips.len()];
            }
            if flips.len() != cfg.clients.len() {
                bail!(
                    "--flip gives {} values for {} clients",
                    flips.len(),
                    cfg.clients.len()
                );
            }
            for (c, &p) in cfg.clients.iter_mut().zip(flips) {
                c.flip = p;
            }
        }
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct ContractFile {
    contract: u32,
    role: String,
    report: String,
}

#[derive(Serialize)]
struct RunManifest {
    version: String,
    seed: u64,
    data: String,
    config: RunConfig,
    report: String,
    transactions: String,
    cas: String,
    contracts: Vec<ContractFile>,
    final_model: String,
    test_accuracy: f64,
    test_loss: f64,
    wall_clock_secs: f64,
}

fn load_data(args: &RunArgs, cfg: &RunConfig) -> Result<(Dataset, Dataset, String)> {
    if let Some(n) = args.synthetic {
        let task = SyntheticTask::new(64, 10, cfg.seed);
        let train = task.sample(n, cfg.seed ^ 1);
        let test = task.sample((n / 5).max(50), cfg.seed ^ 2);
        return Ok((train, test, format!("synthetic n={n}")));
    }
    let dir = cfg
        .data_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("data/mnist"));
    let load = |train: bool| {
        let (images, labels) = mnist_paths(&dir, train);
        load_idx(&images, &labels).with_context(|| {
            format!(
                "loading MNIST from {} (set --data-dir or FEDCONTRIB_DATA_DIR, or run scripts/fetch_mnist.sh)",
                dir.display()
            )
        })
    };
    Ok((load(true)?, load(false)?, dir.display().to_string()))
}

fn role_name(role: ContractRole) -> String {
    match role {
        ContractRole::Crowdsource => "crowdsource".into(),
        ContractRole::Auxiliary { evaluator } => format!("auxiliary (evaluator {evaluator})"),
        ContractRole::Main => "main".into(),
    }
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = args.resolve()?;
    let (train, test, source) = load_data(args, &cfg)?;
    let experiment = cfg.materialize(&train, &test)?;
    let run = run_experiment(&experiment)?;
    let final_eval = evaluate(&run.final_model()?, &test)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let csv = run.report.to_csv();
    fs::write(args.out.join(REPORT), &csv)?;
    fs::write(args.out.join(LOG), run.ledger.export_log())?;
    run.store.persist_to(&args.out.join(CAS))?;

    let mut contracts = Vec::new();
    for c in &run.report.contracts {
        let name = format!("contract-{}.csv", c.contract);
        let single = fedcontrib::ContributivityReport {
            contracts: vec![c.clone()],
        };
        fs::write(args.out.join(&name), single.to_csv())?;
        contracts.push(ContractFile {
            contract: c.contract,
            role: role_name(c.role),
            report: name,
        });
    }
    let manifest = RunManifest {
        version: format!("fedcontrib {}", env!("CARGO_PKG_VERSION")),
        seed: cfg.seed,
        data: source,
        config: cfg.clone(),
        report: REPORT.into(),
        transactions: LOG.into(),
        cas: CAS.into(),
        contracts,
        final_model: run.final_model.to_hex(),
        test_accuracy: final_eval.accuracy,
        test_loss: final_eval.loss,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    fs::write(
        args.out.join(MANIFEST),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;

    let outcome = run.report.outcome().context("run produced no report")?;
    let protocol = match cfg.protocol {
        Protocol::Crowdsource => "crowdsource",
        Protocol::Consortium => "consortium",
    };
    let mut out = String::new();
    writeln!(
        out,
        "{protocol}: {} clients, {} rounds, test accuracy {:.4}",
        experiment.clients.len(),
        cfg.rounds,
        final_eval.accuracy
    )?;
    writeln!(
        out,
        "{:<8} {:<44} {:>6} {:>6} {:>7} {:>12} {:>7}",
        "client", "address", "ratio", "flip", "size", "tokens", "share"
    )?;
    let total: u64 = outcome.final_tokens().iter().sum();
    for (i, (entry, spec)) in cfg.clients.iter().zip(&experiment.clients).enumerate() {
        let address = client_address(i);
        let tokens = outcome.tokens_of(&address);
        let share = if total == 0 {
            0.0
        } else {
            tokens as f64 / total as f64
        };
        writeln!(
            out,
            "{:<8} {:<44} {:>6} {:>6} {:>7} {:>12} {:>7.4}",
            i,
            address.to_string(),
            entry.ratio,
            entry.flip,
            spec.dataset.len(),
            tokens,
            share
        )?;
    }
    writeln!(out, "wrote {}", args.out.display())?;
    // A closed pipe (e.g. `| head`) is not an error for a summary.
    let _ = std::io::stdout().write_all(out.as_bytes());
    Ok(())
}

fn run_dir_of(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

fn cmd_replay(path: &Path) -> Result<bool> {
    let dir = run_dir_of(path);
    let log_path = if path.is_dir() {
        dir.join(LOG)
    } else {
        path.to_path_buf()
    };
    let log =
        fs::read_to_string(&log_path).with_context(|| format!("reading {}", log_path.display()))?;
    let csv_path = dir.join(REPORT);
    let csv =
        fs::read_to_string(&csv_path).with_context(|| format!("reading {}", csv_path.display()))?;
    let cas_dir = dir.join(CAS);
    if !cas_dir.is_dir() {
        bail!("no content store at {}", cas_dir.display());
    }
    let store = ContentStore::with_dir(&cas_dir)?;
    match verify(&log, &store, &csv) {
        Ok(report) => {
            let rows: usize = report
                .contracts
                .iter()
                .map(|c| c.rounds.len() * c.authors.len())
                .sum();
            println!(
                "replay ok: {} contracts, {rows} report rows match",
                report.contracts.len()
            );
            Ok(true)
        }
        Err(ReplayError::Record(m)) => {
            eprintln!(
                "replay diverged at {} line {}: {}",
                log_path.display(),
                m.index + 1,
                m.reason
            );
            Ok(false)
        }
        Err(e @ ReplayError::Report { .. }) => {
            eprintln!("replay diverged: {e}");
            Ok(false)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args).map(|()| true),
        Command::Replay { path } => cmd_replay(path),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
