//! Experiment configuration: a flat key-value file with per-task presets.
//!
//! A config names a `task`; every other key falls back to that task's preset.
//! Unknown keys are rejected. Files ending in `.json` are read as JSON (the
//! resolved config written into each run directory), anything else as TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracles::{OracleSet, Task};
use crate::surrogate::StationaryKernel;

pub const SEED_ENV: &str = "MFGFN_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    MfGfn,
    SfGfn,
    RandomFidGfn,
    Random,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::MfGfn => "mf_gfn",
            SamplerKind::SfGfn => "sf_gfn",
            SamplerKind::RandomFidGfn => "random_fid_gfn",
            SamplerKind::Random => "random",
        }
    }

    pub fn is_single_fidelity(self) -> bool {
        self == SamplerKind::SfGfn
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub sampler: SamplerKind,
    /// Grid side (Branin, Hartmann) or sequence length.
    pub resolution: usize,
    pub costs: Vec<f64>,
    /// Active budget is `gamma * costs[M]`.
    pub gamma: f64,
    pub batch_size: usize,
    /// Proposals sampled per round before top-B selection.
    pub proposals: usize,
    pub top_k: usize,
    /// Initial annotations per fidelity for multi-fidelity samplers.
    pub init_counts: Vec<usize>,
    /// Initial target-fidelity annotations for the single-fidelity sampler.
    pub init_sf: usize,
    pub count_init_budget: bool,
    pub max_rounds: usize,

    pub kernel: StationaryKernel,
    pub gp_steps: usize,
    /// Hyperparameter steps after the first round, warm-started from the previous fit.
    pub gp_refit_steps: usize,
    pub gp_restarts: usize,
    pub gp_lr: f64,
    /// Cap on the points used for hyperparameter fitting; 0 means no cap.
    pub gp_max_points: usize,

    pub n_max_value_samples: usize,
    pub pool_size: usize,
    pub gibbon_batch_term: bool,

    pub hidden: usize,
    pub trajectories: usize,
    pub train_batch: usize,
    pub epsilon: f64,
    pub lr: f64,
    pub lr_log_z: f64,
    /// Keep the policy across rounds instead of re-initializing it.
    pub warm_start: bool,

    pub beta: f64,
    pub rho: f64,
    pub reward_exponent: f64,
    pub diversity_threshold: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn preset(task: Task) -> Self {
        let base = ExperimentConfig {
            task,
            sampler: SamplerKind::MfGfn,
            resolution: 100,
            costs: vec![0.01, 0.1, 1.0],
            gamma: 300.0,
            batch_size: 30,
            proposals: 300,
            top_k: 50,
            init_counts: vec![20, 20, 2],
            init_sf: 4,
            count_init_budget: false,
            max_rounds: 500,
            kernel: StationaryKernel::SquaredExponential,
            gp_steps: 200,
            gp_refit_steps: 50,
            gp_restarts: 2,
            gp_lr: 0.05,
            gp_max_points: 256,
            n_max_value_samples: 10,
            pool_size: 256,
            gibbon_batch_term: false,
            hidden: 128,
            trajectories: 2000,
            train_batch: 16,
            epsilon: 0.1,
            lr: 1e-3,
            lr_log_z: 0.1,
            warm_start: true,
            beta: 1.0,
            rho: 1.0,
            reward_exponent: 1.0,
            diversity_threshold: 0.6,
            seed: 0,
            output_dir: None,
        };
        match task {
            Task::Branin => base,
            Task::Hartmann6 => ExperimentConfig {
                resolution: 10,
                costs: vec![0.125, 0.25, 1.0],
                gamma: 100.0,
                batch_size: 10,
                proposals: 100,
                top_k: 10,
                init_counts: vec![80, 40, 5],
                init_sf: 25,
                beta: 1e-2,
                // the 10^6 grid needs faster policy fitting and a wider max-value pool
                pool_size: 1024,
                lr: 3e-3,
                lr_log_z: 1.0,
                ..base
            },
            Task::SequenceToy => ExperimentConfig {
                resolution: 8,
                costs: vec![0.2, 20.0],
                gamma: 20.0,
                batch_size: 20,
                proposals: 200,
                top_k: 20,
                init_counts: vec![100, 5],
                init_sf: 6,
                beta: 1e-5,
                rho: 2.0,
                ..base
            },
        }
    }

    /// Parses a config from text, applying `key=value` overrides on top.
    pub fn from_str_with(text: &str, json: bool, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = if json {
            serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))?
        };
        for o in overrides {
            let (key, value) = parse_override(o)?;
            table.insert(key, value);
        }
        if !table.contains_key("seed") {
            if let Ok(seed) = std::env::var(SEED_ENV) {
                let seed: i64 = seed
                    .trim()
                    .parse()
                    .map_err(|_| Error::config(SEED_ENV, format!("not an integer: {seed}")))?;
                table.insert("seed".into(), toml::Value::Integer(seed));
            }
        }
        let task_value = table
            .get("task")
            .cloned()
            .ok_or_else(|| Error::config("task", "missing required key"))?;
        let task: Task = task_value
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("task", located(text, "task", e.to_string())))?;
        let preset = toml::Table::try_from(Self::preset(task)).map_err(|e| Error::Serde(e.to_string()))?;
        let resolve = |user: &toml::Table| -> std::result::Result<ExperimentConfig, toml::de::Error> {
            let mut merged = preset.clone();
            for (k, v) in user {
                merged.insert(k.clone(), v.clone());
            }
            toml::Value::Table(merged).try_into()
        };
        let config = resolve(&table).map_err(|e| {
            let msg = e.to_string().trim().to_string();
            // pin the failure on the first key that breaks the preset on its own
            let field = field_of(&msg).or_else(|| {
                table.iter().find_map(|(k, v)| {
                    let single: toml::Table = [(k.clone(), v.clone())].into_iter().collect();
                    resolve(&single).is_err().then(|| k.clone())
                })
            });
            let field = field.unwrap_or_else(|| "config".into());
            let msg = located(text, &field, msg);
            Error::config(field, msg)
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let json = path.extension().is_some_and(|e| e == "json");
        Self::from_str_with(&text, json, overrides).map_err(|e| match e {
            Error::Config { field, message } => Error::Config {
                field,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })
    }

    pub fn oracles(&self) -> Result<OracleSet> {
        OracleSet::for_task(self.task, self.resolution).with_costs(&self.costs)
    }

    /// Number of oracles for this task.
    pub fn fidelities(&self) -> usize {
        OracleSet::for_task(self.task, self.resolution).fidelities()
    }

    /// Active budget `gamma * lambda_M`.
    pub fn budget(&self) -> f64 {
        self.gamma * self.costs.last().copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.fidelities();
        let check = |ok: bool, field: &str, msg: &str| if ok { Ok(()) } else { Err(Error::config(field, msg)) };
        check(self.resolution >= 2, "resolution", "must be at least 2")?;
        if self.task == Task::SequenceToy {
            check(self.resolution <= 24, "resolution", "sequence length must be at most 24")?;
        }
        self.oracles()?;
        check(self.gamma >= 0.0 && self.gamma.is_finite(), "gamma", "must be a non-negative number")?;
        check(self.batch_size >= 1, "batch_size", "must be positive")?;
        check(self.proposals >= 1, "proposals", "must be positive")?;
        check(self.top_k >= 1, "top_k", "must be positive")?;
        check(self.init_counts.len() == m, "init_counts", "needs one count per fidelity")?;
        check(self.max_rounds >= 1, "max_rounds", "must be positive")?;
        check(self.gp_lr > 0.0, "gp_lr", "must be positive")?;
        check(self.n_max_value_samples >= 1, "n_max_value_samples", "must be positive")?;
        check(self.pool_size >= 1, "pool_size", "must be positive")?;
        check(self.hidden >= 1, "hidden", "must be positive")?;
        check(self.train_batch >= 1, "train_batch", "must be positive")?;
        check((0.0..=1.0).contains(&self.epsilon), "epsilon", "must lie in [0, 1]")?;
        check(self.lr > 0.0 && self.lr_log_z > 0.0, "lr", "learning rates must be positive")?;
        check(self.beta > 0.0, "beta", "must be positive")?;
        check(self.rho >= 1.0, "rho", "must be at least 1")?;
        check(self.reward_exponent > 0.0, "reward_exponent", "must be positive")?;
        check(
            (0.0..=1.0).contains(&self.diversity_threshold),
            "diversity_threshold",
            "must lie in [0, 1]",
        )?;
        Ok(())
    }

    /// Non-fatal issues worth reporting to the user.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.costs.windows(2).any(|w| w[0] == w[1]) {
            out.push(format!("equal fidelity costs {:?}: the cheaper oracle brings no saving", self.costs));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn parse_override(o: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = o
        .split_once('=')
        .ok_or_else(|| Error::config("override", format!("expected key=value, got `{o}`")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((key, value))
}

/// Appends the line number of `key` in `text`, when it appears there.
fn located(text: &str, key: &str, msg: String) -> String {
    let line = text.lines().position(|l| {
        let l = l.trim_start().trim_start_matches('"');
        l.starts_with(key) && l[key.len()..].trim_start().trim_start_matches('"').trim_start().starts_with(['=', ':'])
    });
    match line {
        Some(i) => format!("line {}: {msg}", i + 1),
        None => msg,
    }
}

fn field_of(msg: &str) -> Option<String> {
    for marker in ["unknown field `", "missing field `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            return rest.split('`').next().map(str::to_string);
        }
    }
    msg.split("for key `").nth(1).and_then(|r| r.split('`').next()).map(str::to_string)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_follow_task_tables() {
        let b = ExperimentConfig::preset(Task::Branin);
        assert_eq!((b.beta, b.rho, b.gamma, b.batch_size), (1.0, 1.0, 300.0, 30));
        assert_eq!(b.budget(), 300.0);
        let h = ExperimentConfig::preset(Task::Hartmann6);
        assert_eq!((h.beta, h.rho, h.gamma, h.batch_size), (1e-2, 1.0, 100.0, 10));
        assert_eq!(h.budget(), 100.0);
        let s = ExperimentConfig::preset(Task::SequenceToy);
        assert_eq!((s.beta, s.rho), (1e-5, 2.0));
        for c in [b, h, s] {
            c.validate().unwrap();
        }
    }

    #[test]
    fn file_keys_and_overrides_apply() {
        let text = "task = \"branin\"\nsampler = \"sf_gfn\"\ngamma = 42\n";
        let c = ExperimentConfig::from_str_with(text, false, &["gamma=10".into(), "epsilon=0.2".into()]).unwrap();
        assert_eq!(c.sampler, SamplerKind::SfGfn);
        assert_eq!(c.gamma, 10.0);
        assert_eq!(c.epsilon, 0.2);
        assert_eq!(c.batch_size, 30);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = ExperimentConfig::from_str_with("task = \"branin\"\nsampler = \"greedy\"\n", false, &[]);
        match bad {
            Err(Error::Config { field, message }) => {
                assert_eq!(field, "sampler");
                assert!(message.starts_with("line 2"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let unknown = ExperimentConfig::from_str_with("task = \"branin\"\nbogus = 1\n", false, &[]);
        assert!(matches!(unknown, Err(Error::Config { field, .. }) if field == "bogus"));
        let missing = ExperimentConfig::from_str_with("gamma = 3\n", false, &[]);
        assert!(matches!(missing, Err(Error::Config { field, .. }) if field == "task"));
        let costs = ExperimentConfig::from_str_with("task = \"branin\"\ncosts = [1.0, 0.1, 0.01]\n", false, &[]);
        assert!(matches!(costs, Err(Error::Config { field, .. }) if field == "costs"));
    }

    #[test]
    fn resolved_config_round_trips_through_json() {
        let c = ExperimentConfig::from_str_with("task = \"sequence_toy\"\nseed = 7\n", false, &[]).unwrap();
        let back = ExperimentConfig::from_str_with(&c.to_json(), true, &[]).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn equal_costs_warn() {
        let c = ExperimentConfig::from_str_with("task = \"sequence_toy\"\ncosts = [20.0, 20.0]\n", false, &[]).unwrap();
        assert_eq!(c.warnings().len(), 1);
    }
}
