mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfgfn::active_loop::{cost_ablation, run_experiment, AblationEntry};
use mfgfn::config::ExperimentConfig;
use mfgfn::env::Space;
use mfgfn::oracles::{format_sequence, parse_sequence, OracleSet, Task};
use mfgfn::policy::{sample_terminals, PolicyNet, PolicySnapshot, SampleMode, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use plot::Series;

#[derive(Parser)]
#[command(name = "mfgfn", version, about = "Multi-fidelity active learning with GFlowNets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one active-learning experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// `key=value`, repeatable; values are TOML literals.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Run directory; defaults to `output_dir` from the config, then `runs/<task>_<sampler>_seed<seed>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare MF-GFN under several low-fidelity costs against SF-GFN.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated `low:high` pairs, e.g. `0.2:20,1:20,10:20`.
        #[arg(long)]
        costs: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot mean top-K against cumulative cost for one or more run directories.
    Plot {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "mean top-K score")]
        title: String,
    },
    /// Evaluate one oracle at a point.
    Oracle {
        /// branin, hartmann6 or sequence_toy.
        #[arg(long)]
        task: String,
        /// Grid indices, comma-separated.
        #[arg(long, conflicts_with = "seq")]
        point: Option<String>,
        /// Nucleotide string for the sequence task.
        #[arg(long)]
        seq: Option<String>,
        #[arg(long)]
        m: u8,
        /// Grid side or sequence length; defaults to the preset side or the given sequence's length.
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Draw objects from a saved policy.
    Sample {
        /// Resolved `config.json` of the run.
        #[arg(long)]
        config: PathBuf,
        /// A `policy_round_<j>.json` snapshot.
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Follow the most likely action instead of sampling.
        #[arg(long)]
        greedy: bool,
    },
}

#[derive(Debug)]
enum CliError {
    Core(mfgfn::Error),
    MissingData(String),
    Usage(String),
}

impl From<mfgfn::Error> for CliError {
    fn from(e: mfgfn::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_config() => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::MissingData(m) => write!(f, "missing data: {m}"),
            CliError::Usage(m) => write!(f, "{m}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(mfgfn::Error::io(path, e))
}

fn load_config(path: &Path, seed: Option<u64>, overrides: &[String]) -> CliResult<ExperimentConfig> {
    let mut all = overrides.to_vec();
    if let Some(s) = seed {
        all.push(format!("seed={s}"));
    }
    let config = ExperimentConfig::load(path, &all)?;
    for w in config.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(config)
}

fn cmd_run(config: &Path, seed: Option<u64>, overrides: &[String], out: Option<PathBuf>) -> CliResult<()> {
    let cfg = load_config(config, seed, overrides)?;
    let dir = out.or_else(|| cfg.output_dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| {
        PathBuf::from(format!("runs/{}_{}_seed{}", cfg.task.name(), cfg.sampler.name(), cfg.seed))
    });
    let summary = run_experiment(&cfg, Some(&dir))?;
    println!("run directory: {}", dir.display());
    println!("rounds: {}", summary.rounds);
    println!("spent: {} (initial data {})", summary.spent, summary.init_cost);
    println!("top-{} (dataset): {}", cfg.top_k, summary.topk_dataset);
    println!("diversity (dataset top-{}): {}", cfg.top_k, summary.diversity_dataset);
    Ok(())
}

fn parse_cost_pairs(text: &str) -> CliResult<Vec<Vec<f64>>> {
    text.split(',')
        .map(|pair| {
            let parts: Vec<&str> = pair.trim().split(':').collect();
            if parts.len() != 2 {
                return Err(CliError::Usage(format!("cost pair `{pair}` must look like low:high")));
            }
            parts
                .iter()
                .map(|p| p.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("bad cost `{p}` in `{pair}`"))))
                .collect()
        })
        .collect()
}

fn ablation_table(entries: &[AblationEntry]) -> String {
    let mut out = String::from("sampler,low_cost,high_cost,round,spent,mean_topK,diversity,diverse_topK\n");
    let mut push = |label: &str, costs: &[f64], reports: &[mfgfn::active_loop::RoundReport]| {
        for r in reports {
            out.push_str(&format!(
                "{label},{},{},{},{},{},{},{}\n",
                costs[0], costs[1], r.round, r.spent, r.mean_topk, r.diversity, r.diverse_topk
            ));
        }
    };
    if let Some(first) = entries.first() {
        push("sf_gfn", &first.costs, &first.sf.reports);
    }
    for e in entries {
        push("mf_gfn", &e.costs, &e.mf.reports);
    }
    out
}

fn curve(label: String, reports: &[mfgfn::active_loop::RoundReport]) -> Series {
    Series { label, points: reports.iter().map(|r| (r.spent, r.mean_topk)).collect() }
}

fn cmd_ablate(config: &Path, costs: &str, seed: Option<u64>, overrides: &[String], out: &Path) -> CliResult<()> {
    let pairs = parse_cost_pairs(costs)?;
    for p in &pairs {
        if p[0] >= p[1] {
            eprintln!("warning: costs {}:{} are not increasing; the multi-fidelity advantage is expected to vanish", p[0], p[1]);
        }
    }
    let cfg = load_config(config, seed, overrides)?;
    let entries = cost_ablation(&cfg, &pairs, Some(out))?;
    let table = out.join("comparison.csv");
    fs::write(&table, ablation_table(&entries)).map_err(|e| io_err(&table, e))?;
    let mut series = vec![curve("sf_gfn".into(), &entries[0].sf.reports)];
    series.extend(entries.iter().map(|e| curve(format!("mf_gfn {}:{}", e.costs[0], e.costs[1]), &e.mf.reports)));
    let svg = out.join("ablation.svg");
    let title = format!("{} cost ablation", cfg.task.name());
    fs::write(&svg, plot::render(&series, &title, &format!("mean top-{}", cfg.top_k))).map_err(|e| io_err(&svg, e))?;
    println!("sampler,low_cost,high_cost,rounds,spent,final_mean_topK,topK_dataset");
    println!("sf_gfn,,{},{},{},{},{}", pairs[0][1], entries[0].sf.rounds, entries[0].sf.spent, last_topk(&entries[0].sf.reports), entries[0].sf.topk_dataset);
    for e in &entries {
        println!("mf_gfn,{},{},{},{},{},{}", e.costs[0], e.costs[1], e.mf.rounds, e.mf.spent, last_topk(&e.mf.reports), e.mf.topk_dataset);
    }
    println!("wrote {} and {}", table.display(), svg.display());
    Ok(())
}

fn last_topk(reports: &[mfgfn::active_loop::RoundReport]) -> f64 {
    reports.last().map_or(f64::NAN, |r| r.mean_topk)
}

fn read_rounds(dir: &Path) -> CliResult<Vec<(f64, f64)>> {
    let path = dir.join("rounds.csv");
    let text = fs::read_to_string(&path).map_err(|_| CliError::MissingData(format!("{} not found", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name);
    let (Some(ci), Some(si)) = (col("spent"), col("mean_topK")) else {
        return Err(CliError::MissingData(format!("{} lacks spent/mean_topK columns", path.display())));
    };
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let get = |i: usize| f.get(i).and_then(|v| v.parse::<f64>().ok());
            match (get(ci), get(si)) {
                (Some(c), Some(s)) => Ok((c, s)),
                _ => Err(CliError::MissingData(format!("malformed row `{l}` in {}", path.display()))),
            }
        })
        .collect()
}

fn cmd_plot(runs: &[PathBuf], out: &Path, title: &str) -> CliResult<()> {
    let mut series = Vec::new();
    for dir in runs {
        let points = read_rounds(dir)?;
        if points.is_empty() {
            return Err(CliError::MissingData(format!("{} has no rounds", dir.display())));
        }
        let label = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        series.push(Series { label, points });
    }
    fs::write(out, plot::render(&series, title, "mean top-K score")).map_err(|e| io_err(out, e))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn parse_task(name: &str) -> CliResult<Task> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| CliError::Core(mfgfn::Error::config("task", format!("unknown task `{name}`"))))
}

fn cmd_oracle(task: &str, point: Option<&str>, seq: Option<&str>, m: u8, resolution: Option<usize>) -> CliResult<()> {
    let task = parse_task(task)?;
    let preset = ExperimentConfig::preset(task);
    let x: Vec<u16> = match (task, point, seq) {
        (Task::SequenceToy, _, Some(s)) => parse_sequence(s)?,
        (Task::SequenceToy, _, None) => return Err(CliError::Usage("the sequence task needs --seq".into())),
        (_, Some(p), _) => p
            .split(',')
            .map(|v| v.trim().parse::<u16>().map_err(|_| CliError::Usage(format!("bad grid index `{v}`"))))
            .collect::<CliResult<_>>()?,
        (_, None, _) => return Err(CliError::Usage("grid tasks need --point".into())),
    };
    // a sequence sets its own length unless one is given
    let side = match task {
        Task::SequenceToy => resolution.unwrap_or(x.len()),
        _ => resolution.unwrap_or(preset.resolution),
    };
    let oracles = OracleSet::for_task(task, side).with_costs(&preset.costs)?;
    let value = oracles.evaluate(&x, m)?;
    println!("value {value}");
    println!("cost {}", oracles.cost(m).as_f64());
    Ok(())
}

fn cmd_sample(config: &Path, policy: &Path, n: usize, seed: u64, greedy: bool) -> CliResult<()> {
    let cfg = load_config(config, None, &[])?;
    let oracles = cfg.oracles()?;
    let text = fs::read_to_string(policy).map_err(|e| io_err(policy, e))?;
    let snapshot: PolicySnapshot = serde_json::from_str(&text).map_err(mfgfn::Error::from)?;
    let train = TrainConfig { epsilon: cfg.epsilon, lr: cfg.lr, lr_log_z: cfg.lr_log_z, ..TrainConfig::default() };
    let net = PolicyNet::from_snapshot(&snapshot, &train)?;
    let mf_env = oracles.env();
    let sf_env = mf_env.single_fidelity();
    let env = if net.matches(&mf_env) && mf_env.is_multi_fidelity() {
        mf_env
    } else if net.matches(&sf_env) {
        sf_env
    } else {
        return Err(CliError::Usage("policy does not match the configured task".into()));
    };
    let mode = if greedy { SampleMode::Greedy } else { SampleMode::Mixture(0.0) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (x, m) in sample_terminals(&net, &env, n, mode, &mut rng) {
        let shown = match env.space() {
            Space::Sequence { .. } => format_sequence(&x),
            Space::Grid { .. } => x.iter().map(u16::to_string).collect::<Vec<_>>().join(","),
        };
        let m = if env.is_multi_fidelity() { m } else { oracles.target_fidelity() };
        println!("{shown} m={m} score={}", oracles.score(&x)?);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, overrides, out } => cmd_run(&config, seed, &overrides, out),
        Command::Ablate { config, costs, seed, overrides, out } => cmd_ablate(&config, &costs, seed, &overrides, &out),
        Command::Plot { runs, out, title } => cmd_plot(&runs, &out, &title),
        Command::Oracle { task, point, seq, m, resolution } => {
            cmd_oracle(&task, point.as_deref(), seq.as_deref(), m, resolution)
        }
        Command::Sample { config, policy, n, seed, greedy } => cmd_sample(&config, &policy, n, seed, greedy),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_pairs_parse() {
        assert_eq!(parse_cost_pairs("0.2:20,1:20, 10:20").unwrap(), vec![vec![0.2, 20.0], vec![1.0, 20.0], vec![10.0, 20.0]]);
        assert!(parse_cost_pairs("1-20").is_err());
        assert!(parse_cost_pairs("a:20").is_err());
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(CliError::Core(mfgfn::Error::config("x", "y")).exit_code(), 2);
        assert_eq!(CliError::Core(mfgfn::Error::Numerical("nan".into())).exit_code(), 3);
        assert_eq!(CliError::MissingData("d".into()).exit_code(), 1);
    }
}
