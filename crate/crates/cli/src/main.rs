use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spatial_memory::harness::{
    canonical_json, compare, snapshot_load, snapshot_save, snapshot_to_string, verify, CompareOptions, Experiment,
    RunConfig, VerifyOptions, REPORT_SIGNIFICANT_DIGITS,
};
use spatial_memory::pipeline::{PipelineState, Policy};
use spatial_memory::synth::Scenario;
use spatial_memory::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_VERIFY: u8 = 2;
const EXIT_IO: u8 = 3;

/// Streaming spatial memory experiments on synthetic scenes.
#[derive(Parser)]
#[command(name = "smem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one stream and write its report.
    Run(RunArgs),
    /// Compare eviction policies across seeds and stream lengths.
    Compare(CompareArgs),
    /// Replay streams against the brute-force oracle.
    Verify(VerifyArgs),
    /// Save or inspect pipeline snapshots.
    #[command(subcommand)]
    Snapshot(SnapshotCommand),
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML file with run settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Frames in the generated scenario.
    #[arg(long)]
    length: Option<usize>,
    /// Local window size.
    #[arg(long)]
    tau: Option<usize>,
    /// Evidence bank capacity.
    #[arg(long)]
    capacity: Option<usize>,
    #[arg(long = "lambda-r")]
    lambda_r: Option<f64>,
    #[arg(long = "lambda-nu")]
    lambda_nu: Option<f64>,
    /// One of sgeb_full, fifo, relevance_only, novelty_only, no_bias.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long = "revisit-rate")]
    revisit_rate: Option<f64>,
    #[arg(long = "noise-scale")]
    noise_scale: Option<f64>,
    #[arg(long = "cggf-off")]
    cggf_off: bool,
    #[arg(long = "fgcb-off")]
    fgcb_off: bool,
    #[arg(long = "sgeb-off")]
    sgeb_off: bool,
    #[arg(long = "camera-delta-off")]
    camera_delta_off: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Report path; stdout when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Replay this scenario file instead of generating one.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Write the scenario used by the run.
    #[arg(long = "save-scenario")]
    save_scenario: Option<PathBuf>,
    /// Continue from a snapshot instead of the first frame.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Record wall time in the report (makes it non-reproducible).
    #[arg(long)]
    timing: bool,
    /// Include full per-step tensors.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Seeds as `a..b` or a comma list.
    #[arg(long, default_value = "0..20")]
    seeds: String,
    /// Stream lengths, comma separated.
    #[arg(long, default_value = "64,256,1024", value_delimiter = ',')]
    lengths: Vec<usize>,
    #[arg(long, default_value = "sgeb_full,fifo", value_delimiter = ',')]
    policies: Vec<String>,
    /// JSON output path; the text table always goes to stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "0..20")]
    seeds: String,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Evidence bank capacity for the replayed streams.
    #[arg(long = "bank-capacity", default_value_t = 8)]
    bank_capacity: usize,
    /// Negative control: run the bank with newest-first tie-breaking.
    #[arg(long = "corrupt-tie-break", hide = true)]
    corrupt_tie_break: bool,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SnapshotCommand {
    /// Run the first `steps` frames and save the pipeline state.
    Save {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        steps: u64,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Load a snapshot, validate it, and print a summary.
    Show { path: PathBuf },
}

enum Failure {
    Usage(String),
    Io(String),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) => Failure::Io(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| io_failure(path, e))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| io_failure(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Defaults, then the config file, then explicit flags.
fn resolve_config(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut c = match &args.config {
        Some(path) => toml::from_str::<RunConfig>(&read_file(path)?)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?,
        None => RunConfig::default(),
    };
    if let Some(v) = args.seed {
        c.seed = v;
    }
    if let Some(v) = args.length {
        c.scenario.length = v;
    }
    if let Some(v) = args.tau {
        c.tau = v;
    }
    if let Some(v) = args.capacity {
        c.capacity_k = v;
    }
    if let Some(v) = args.lambda_r {
        c.lambda_r = v;
    }
    if let Some(v) = args.lambda_nu {
        c.lambda_nu = v;
    }
    if let Some(p) = &args.policy {
        c.policy = p.parse()?;
    }
    if let Some(v) = args.revisit_rate {
        c.scenario.revisit_rate = v;
    }
    if let Some(v) = args.noise_scale {
        c.scenario.noise_scale = v;
    }
    c.toggles.cggf_on &= !args.cggf_off;
    c.toggles.fgcb_on &= !args.fgcb_off;
    c.toggles.sgeb_on &= !args.sgeb_off;
    c.toggles.camera_delta_on &= !args.camera_delta_off;
    c.validate()?;
    Ok(c)
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::Usage(format!("cannot parse seeds `{text}` (use `a..b` or `1,2,3`)"));
    let seeds = if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        (a..b).collect()
    } else {
        text.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect::<Result<Vec<u64>, _>>()?
    };
    Ok(seeds)
}

fn experiment(config: &RunConfig, scenario: Option<&Path>) -> Result<Experiment, Failure> {
    match scenario {
        Some(path) => {
            let scenario = Scenario::from_json(&read_file(path)?)?;
            let mut config = config.clone();
            config.scenario.length = scenario.length;
            Ok(Experiment::with_scenario(&config, scenario)?)
        }
        None => Ok(Experiment::new(config)?),
    }
}

fn check_resumable(exp: &Experiment, state: &PipelineState) -> Result<(), Failure> {
    let mismatch = |what: &str| Failure::Usage(format!("snapshot {what} does not match the run configuration"));
    if state.fgcb.capacity() != exp.config.tau {
        return Err(mismatch("window size"));
    }
    if *state.sgeb.config() != exp.config.bank_config() {
        return Err(mismatch("bank settings"));
    }
    if state.question_pooled != exp.question {
        return Err(mismatch("question vector"));
    }
    if state.step > exp.scenario.length as u64 {
        return Err(mismatch("step counter"));
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let mut config = resolve_config(&args.config)?;
    config.verbose |= args.verbose;
    let exp = experiment(&config, args.scenario.as_deref())?;
    if let Some(path) = &args.save_scenario {
        std::fs::write(path, exp.scenario.to_json()?).map_err(|e| io_failure(path, e))?;
    }
    let state = match &args.resume {
        Some(path) => {
            let state = snapshot_load(path)?;
            check_resumable(&exp, &state)?;
            state
        }
        None => exp.initial_state()?,
    };
    let (_, report) = exp.finish(state, args.timing)?;
    write_output(args.output.as_deref(), &canonical_json(&report, Some(REPORT_SIGNIFICANT_DIGITS))?)
}

fn parse_policies(names: &[String]) -> Result<Vec<Policy>, Failure> {
    names.iter().map(|n| n.trim().parse().map_err(Failure::from)).collect()
}

fn cmd_compare(args: &CompareArgs) -> Result<(), Failure> {
    let config = resolve_config(&args.config)?;
    let options = CompareOptions {
        seeds: parse_seeds(&args.seeds)?,
        lengths: args.lengths.clone(),
        policies: parse_policies(&args.policies)?,
    };
    let comparison = compare(&config, &options)?;
    print!("{}", comparison.table());
    if let Some(path) = &args.output {
        let text = canonical_json(&comparison, Some(REPORT_SIGNIFICANT_DIGITS))?;
        std::fs::write(path, text).map_err(|e| io_failure(path, e))?;
    }
    Ok(())
}

fn cmd_verify(args: &VerifyArgs) -> Result<(), Failure> {
    let config = resolve_config(&args.config)?;
    let options = VerifyOptions {
        seeds: parse_seeds(&args.seeds)?,
        steps: args.steps,
        capacity: args.bank_capacity,
        corrupt_tie_break: args.corrupt_tie_break,
    };
    let report = verify(&config, &options)?;
    if let Some(path) = &args.output {
        std::fs::write(path, canonical_json(&report, Some(REPORT_SIGNIFICANT_DIGITS))?)
            .map_err(|e| io_failure(path, e))?;
    }
    let steps: u64 = report.seeds.iter().map(|s| s.steps_checked).sum();
    let ties: u64 = report.seeds.iter().map(|s| s.ties).sum();
    if report.passed {
        println!(
            "verify: pass ({} seeds, {steps} steps, {ties} ties resolved)",
            report.seeds.len()
        );
        return Ok(());
    }
    for d in &report.divergences {
        println!(
            "divergence: seed {} frame {} [{}] expected {} got {}",
            d.seed, d.frame_index, d.check, d.expected, d.got
        );
    }
    Err(Failure::Verification(format!("{} divergence(s)", report.divergences.len())))
}

fn cmd_snapshot(cmd: &SnapshotCommand) -> Result<(), Failure> {
    match cmd {
        SnapshotCommand::Save {
            config,
            steps,
            output,
            scenario,
        } => {
            let config = resolve_config(config)?;
            let exp = experiment(&config, scenario.as_deref())?;
            if *steps > exp.scenario.length as u64 {
                return Err(Failure::Usage(format!(
                    "cannot snapshot after {steps} steps of a {}-frame scenario",
                    exp.scenario.length
                )));
            }
            let (state, _) = exp.advance(exp.initial_state()?, *steps)?;
            snapshot_save(&state, output).map_err(|e| match e {
                Error::Io(io) => io_failure(output, io),
                other => other.into(),
            })
        }
        SnapshotCommand::Show { path } => {
            let state = snapshot_load(path)?;
            // Round-trips through the canonical form, so a clean load re-emits identical bytes.
            let canonical = snapshot_to_string(&state)?;
            println!(
                "step {}  window {:?}  bank {:?}  bytes {}",
                state.step,
                state.fgcb.frame_indices(),
                state.sgeb.frame_indices(),
                canonical.len()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Snapshot(c) => cmd_snapshot(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_IO)
        }
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(EXIT_VERIFY)
        }
    }
}
