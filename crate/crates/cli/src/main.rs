//! `probe`: failure-mode analysis, parameter sweeps and the indexing harness.
//!
//! Exit codes: 0 success, 2 input error, 3 degenerate input, 4 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rope_probe::failure::{
    enumerate_attention_invariance, enumerate_pos_aliasing, enumerate_token_aliasing, sweep, token_inversion_empirical,
    SweepGrid,
};
use rope_probe::io::{
    bin_heatmap, load_qk, load_spectrum, read_json, write_csv, write_heatmap, write_json, write_pairs,
    write_position_set, write_reports, write_sweep, Format,
};
use rope_probe::rope::spectrum_from_qk;
use rope_probe::{DTypeFormat, FailureMode, FailureRequest, ProbeError, Spectrum, ThresholdMode};
use rope_probe_indexing::{
    run_trials, score, ConstantResponder, HarnessError, HttpResponder, IndexingTaskSpec, IndexingTrial,
    PerfectResponder, RandomResponder, Responder, RunOptions,
};

const SEED_ENV: &str = "PROBE_SEED";
const TOKEN_ENV: &str = "PROBE_API_TOKEN";

#[derive(Parser)]
#[command(name = "probe", version, about = "Rotary-embedding attention failure analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyse one failure mode for a key spectrum.
    Failure(FailureArgs),
    /// Run every cell of a parameter grid.
    Sweep(SweepArgs),
    /// Array-indexing evaluation harness.
    #[command(subcommand)]
    Indexing(IndexingCommand),
}

#[derive(Args)]
struct FailureArgs {
    #[arg(long)]
    mode: FailureMode,
    /// Key spectrum file.
    #[arg(long, required_unless_present = "qk", conflicts_with = "qk")]
    spectrum: Option<PathBuf>,
    /// Query/key vector file, converted to a spectrum.
    #[arg(long)]
    qk: Option<PathBuf>,
    /// Second key spectrum for two-key modes.
    #[arg(long, conflicts_with = "qk2")]
    spectrum2: Option<PathBuf>,
    #[arg(long)]
    qk2: Option<PathBuf>,
    /// Context length; positions 0..M are analysed.
    #[arg(long = "M", value_name = "N")]
    context: u64,
    /// bf16, fp16, fp32 or fp64.
    #[arg(long, default_value = "bf16", conflicts_with = "dtype_bits")]
    dtype: DTypeFormat,
    /// Custom format as "EXPONENT_BITS,FRACTION_BITS".
    #[arg(long, value_name = "E,F")]
    dtype_bits: Option<String>,
    #[arg(long, default_value = "theory")]
    threshold_mode: ThresholdMode,
    /// Overridden by PROBE_SEED when set.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo pairs for position inversion.
    #[arg(long, default_value_t = 0)]
    mc_samples: u64,
    /// Reference distance for token inversion with two keys.
    #[arg(long, default_value_t = 1)]
    baseline: usize,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the extension of --out.
    #[arg(long)]
    format: Option<Format>,
    /// Also write the enumerated pairs (pos-alias, invariance).
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Also write a binned pair heatmap (pos-alias, invariance).
    #[arg(long)]
    heatmap: Option<PathBuf>,
    /// Heatmap bins per axis; 200 for pos-alias and 16 for invariance when absent.
    #[arg(long)]
    bins: Option<usize>,
    /// Also write the failing positions and running fraction (tok-inv, tok-alias).
    #[arg(long)]
    positions: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON parameter grid.
    #[arg(long)]
    grid: PathBuf,
    /// Replaces the grid seed; PROBE_SEED takes precedence.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    format: Option<Format>,
}

#[derive(Subcommand)]
enum IndexingCommand {
    /// Generate prompts, query the responder and save every trial.
    Run(IndexingRunArgs),
    /// Aggregate a saved trial file by array length.
    Score(IndexingScoreArgs),
}

#[derive(Args)]
struct IndexingRunArgs {
    /// Chat-completion URL; bearer token read from PROBE_API_TOKEN.
    #[arg(long, required_unless_present = "responder")]
    endpoint: Option<String>,
    #[arg(long, requires = "endpoint")]
    model: Option<String>,
    /// Offline mock: perfect, random or constant:K.
    #[arg(long, conflicts_with = "endpoint")]
    responder: Option<String>,
    /// "START..ENDxFACTOR" or a comma-separated list.
    #[arg(long, default_value = "4..4096x2")]
    lengths: String,
    #[arg(long, default_value_t = 10)]
    lists_per_length: usize,
    #[arg(long, default_value_t = 10)]
    queries_per_list: usize,
    /// Overridden by PROBE_SEED when set.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    #[arg(long, default_value_t = 3)]
    retries: u32,
    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,
    /// JSON object merged into every request body.
    #[arg(long)]
    extra: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IndexingScoreArgs {
    trials: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<Format>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

impl From<ProbeError> for Failure {
    fn from(e: ProbeError) -> Self {
        let code = match e {
            ProbeError::Degenerate(_) => 3,
            ProbeError::Io(_) => 4,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::input(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn resolve_seed(flag: Option<u64>) -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Failure::input(format!("{SEED_ENV}=`{v}` is not a u64"))),
        Err(_) => Ok(flag),
    }
}

fn output_format(path: &Path, explicit: Option<Format>) -> CliResult<Format> {
    Ok(match explicit {
        Some(f) => f,
        None => Format::from_path(path)?,
    })
}

fn load_key(spectrum: Option<&Path>, qk: Option<&Path>) -> CliResult<Option<Spectrum>> {
    Ok(match (spectrum, qk) {
        (Some(p), _) => Some(load_spectrum(p)?),
        (None, Some(p)) => Some(spectrum_from_qk(&load_qk(p)?)?),
        (None, None) => None,
    })
}

fn run_failure_cmd(a: FailureArgs) -> CliResult {
    let key = load_key(a.spectrum.as_deref(), a.qk.as_deref())?.expect("clap requires a key");
    let other = load_key(a.spectrum2.as_deref(), a.qk2.as_deref())?;
    let dtype = match &a.dtype_bits {
        Some(bits) => DTypeFormat::from_bits_spec(bits)?,
        None => a.dtype.clone(),
    };
    let mut req = FailureRequest::new(a.mode, a.context);
    req.dtype = dtype.clone();
    req.threshold_mode = a.threshold_mode;
    req.seed = resolve_seed(a.seed)?.unwrap_or(0);
    req.mc_samples = a.mc_samples;
    req.baseline = a.baseline;

    let report = rope_probe::failure::run_failure(&req, &key, other.as_ref())?;
    write_reports(&a.out, std::slice::from_ref(&report), output_format(&a.out, a.format)?)?;

    let m = a.context;
    let pair_mode = matches!(a.mode, FailureMode::PositionAliasing | FailureMode::AttentionInvariance);
    let set_mode = matches!(a.mode, FailureMode::TokenInversion | FailureMode::TokenAliasing);
    if (a.pairs.is_some() || a.heatmap.is_some()) && !pair_mode {
        return Err(Failure::input("--pairs/--heatmap apply to pos-alias and invariance only"));
    }
    if a.positions.is_some() && !set_mode {
        return Err(Failure::input("--positions applies to tok-inv and tok-alias only"));
    }
    let series = key.series(0, m)?;
    let second_series = || -> CliResult<Vec<f64>> {
        match &other {
            Some(o) => Ok(o.series(0, m)?),
            None => Err(Failure::input(format!("--positions for {} needs a second key", a.mode))),
        }
    };
    if pair_mode && (a.pairs.is_some() || a.heatmap.is_some()) {
        let pairs = match a.mode {
            FailureMode::PositionAliasing => enumerate_pos_aliasing(&series, &dtype),
            _ => enumerate_attention_invariance(&series, &second_series()?, &dtype)?,
        };
        if let Some(p) = &a.pairs {
            write_pairs(p, &pairs, output_format(p, None)?)?;
        }
        if let Some(p) = &a.heatmap {
            let default_bins = if a.mode == FailureMode::PositionAliasing { 200 } else { 16 };
            let grid = bin_heatmap(&pairs, m, a.bins.unwrap_or(default_bins))?;
            write_heatmap(p, &grid, output_format(p, None)?)?;
        }
    }
    if let Some(p) = &a.positions {
        let set = match a.mode {
            FailureMode::TokenInversion => token_inversion_empirical(&series, &second_series()?, a.baseline)?,
            _ => enumerate_token_aliasing(&series, &second_series()?, &dtype)?,
        };
        write_position_set(p, &set, output_format(p, None)?)?;
    }

    let show = |label: &str, v: Option<f64>| {
        if let Some(v) = v {
            println!("{label:<16} {v:.6e}");
        }
    };
    println!("mode             {}", report.mode);
    show("lower_bound", report.lower_bound);
    show("analytic_prob", report.analytic_prob);
    show("analytic_alt", report.analytic_prob_alt);
    show("empirical_prob", report.empirical_prob);
    if let Some(c) = report.count {
        println!("count            {c}");
    }
    if let Some(mc) = report.mc_estimate {
        println!("mc_estimate      {:.6e} +/- {:.2e}", mc.estimate, mc.half_width);
    }
    Ok(())
}

fn run_sweep_cmd(a: SweepArgs) -> CliResult {
    let mut grid: SweepGrid = read_json(&a.grid)?;
    if let Some(seed) = resolve_seed(a.seed)? {
        grid.seed = seed;
    }
    let out = sweep(&grid)?;
    write_sweep(&a.out, &out, output_format(&a.out, a.format)?)?;
    let failed = out.rows.iter().filter(|r| r.error.is_some()).count();
    println!("{} cells, {} with errors", out.rows.len(), failed);
    Ok(())
}

/// "4..4096x2" (geometric, inclusive) or "4,8,16".
fn parse_lengths(s: &str) -> CliResult<Vec<usize>> {
    let bad = || Failure::input(format!("cannot parse lengths `{s}`; use START..ENDxFACTOR or a comma list"));
    if let Some((start, rest)) = s.split_once("..") {
        let (end, factor) = rest.split_once('x').ok_or_else(bad)?;
        let (start, end, factor): (usize, usize, usize) = (
            start.trim().parse().map_err(|_| bad())?,
            end.trim().parse().map_err(|_| bad())?,
            factor.trim().parse().map_err(|_| bad())?,
        );
        if start == 0 || factor < 2 || end < start {
            return Err(bad());
        }
        let mut out = Vec::new();
        let mut n = start;
        while n <= end {
            out.push(n);
            n = match n.checked_mul(factor) {
                Some(v) => v,
                None => break,
            };
        }
        Ok(out)
    } else {
        s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect()
    }
}

fn mock_responder(name: &str, seed: u64) -> CliResult<Box<dyn Responder>> {
    Ok(match name {
        "perfect" => Box::new(PerfectResponder),
        "random" => Box::new(RandomResponder::new(seed)),
        other => match other.strip_prefix("constant:").map(str::parse::<u64>) {
            Some(Ok(k)) => Box::new(ConstantResponder(k)),
            _ => return Err(Failure::input(format!("unknown responder `{other}`; use perfect, random or constant:K"))),
        },
    })
}

fn run_indexing(a: IndexingRunArgs) -> CliResult {
    let seed = resolve_seed(a.seed)?.unwrap_or(0);
    let spec = IndexingTaskSpec {
        lengths: parse_lengths(&a.lengths)?,
        lists_per_length: a.lists_per_length,
        queries_per_list: a.queries_per_list,
        seed,
        ..IndexingTaskSpec::default()
    };
    let responder: Box<dyn Responder> = match (&a.responder, &a.endpoint) {
        (Some(name), _) => mock_responder(name, seed)?,
        (None, Some(url)) => {
            let model = a.model.clone().ok_or_else(|| Failure::input("--endpoint needs --model"))?;
            let extra = match &a.extra {
                Some(text) => match serde_json::from_str(text) {
                    Ok(serde_json::Value::Object(map)) => map,
                    _ => return Err(Failure::input("--extra must be a JSON object")),
                },
                None => Default::default(),
            };
            Box::new(
                HttpResponder::new(url, model, Duration::from_secs(a.timeout_secs))
                    .with_token(std::env::var(TOKEN_ENV).ok())
                    .with_extra(extra),
            )
        }
        (None, None) => return Err(Failure::input("give --endpoint or --responder")),
    };
    let opts = RunOptions { max_in_flight: a.max_in_flight, retries: a.retries, ..RunOptions::default() };
    let trials = run_trials(&spec, responder.as_ref(), &opts)?;
    write_json(&a.out, &trials)?;
    let errors = trials.iter().filter(|t| t.error.is_some()).count();
    println!("{} trials written, {} failed after retries", trials.len(), errors);
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

fn run_score(a: IndexingScoreArgs) -> CliResult {
    let trials: Vec<IndexingTrial> = read_json(&a.trials)?;
    let scores = score(&trials);
    println!("{:>8} {:>10} {:>10} {:>10}", "length", "tokens", "accuracy", "std");
    for s in &scores {
        println!(
            "{:>8} {:>10} {:>10} {:>10}",
            s.length,
            fmt_opt(s.token_estimate_mean),
            fmt_opt(s.accuracy_mean),
            fmt_opt(s.accuracy_std)
        );
    }
    if let Some(out) = &a.out {
        match output_format(out, a.format)? {
            Format::Json => write_json(out, &scores)?,
            Format::Csv => write_csv(
                out,
                &["length", "lists", "trials", "token_estimate_mean", "accuracy_mean", "accuracy_std"],
                &scores,
            )?,
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Failure(a) => run_failure_cmd(a),
        Command::Sweep(a) => run_sweep_cmd(a),
        Command::Indexing(IndexingCommand::Run(a)) => run_indexing(a),
        Command::Indexing(IndexingCommand::Score(a)) => run_score(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_ranges() {
        let l = parse_lengths("4..4096x2").ok().unwrap();
        assert_eq!(l.len(), 11);
        assert_eq!((l[0], l[10]), (4, 4096));
        assert_eq!(parse_lengths("3, 5").ok().unwrap(), vec![3, 5]);
        assert!(parse_lengths("4..2x2").is_err());
        assert!(parse_lengths("4..8x1").is_err());
        assert!(parse_lengths("a").is_err());
    }

    #[test]
    fn responder_names() {
        assert!(mock_responder("perfect", 0).is_ok());
        assert!(mock_responder("constant:2", 0).is_ok());
        assert!(mock_responder("constant:x", 0).is_err());
        assert!(mock_responder("oracle", 0).is_err());
    }
}
