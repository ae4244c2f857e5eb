//! The multi-fidelity active-learning loop.
//!
//! Each round fits the surrogate, trains the sampler on the cost-weighted
//! acquisition, draws `N` proposals, queries the top `B` new `(x, m)` pairs and
//! records metrics. Rounds continue until the active budget is spent.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{sample_max_values, AcqConfig, Acquisition};
use crate::config::{ExperimentConfig, SamplerKind};
use crate::env::{Env, Object};
use crate::error::{Error, Result};
use crate::metrics::{diverse_topk, mean_topk, pairwise_diversity, topk_indices, ScoredItem, SelectBy};
use crate::oracles::{Annotation, Cost, OracleSet};
use crate::policy::{sample_terminals, PolicyNet, RewardTransform, SampleMode, TrainConfig};
use crate::surrogate::{normalize_fidelity, GpData, GpFitConfig, MfGpModel, MfKernelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub x: Object,
    pub y: f64,
    pub m: u8,
    pub cost: Cost,
    /// 0 for the initial dataset.
    pub round: usize,
}

/// Annotations without duplicate `(x, m)` pairs, in acquisition order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AnnotatedDataset {
    entries: Vec<Entry>,
    #[serde(skip)]
    index: HashSet<(Object, u8)>,
}

impl AnnotatedDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn contains(&self, x: &[u16], m: u8) -> bool {
        self.index.contains(&(x.to_vec(), m))
    }

    /// Adds an annotation; returns false (and changes nothing) for a duplicate pair.
    pub fn insert(&mut self, a: Annotation, round: usize) -> bool {
        if !self.index.insert((a.x.clone(), a.m)) {
            return false;
        }
        self.entries.push(Entry { x: a.x, y: a.y, m: a.m, cost: a.cost, round });
        true
    }

    pub fn total_cost(&self) -> Cost {
        self.entries.iter().map(|e| e.cost).sum()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut d: AnnotatedDataset = serde_json::from_str(text)?;
        d.index = d.entries.iter().map(|e| (e.x.clone(), e.m)).collect();
        if d.index.len() != d.entries.len() {
            return Err(Error::Serde("dataset contains duplicate (x, m) pairs".into()));
        }
        Ok(d)
    }

    /// Surrogate training data. With `single_fidelity` every point sits at `m_norm = 1`.
    pub fn gp_data(&self, env: &Env, oracles: &OracleSet, single_fidelity: bool) -> GpData {
        let fids = if single_fidelity { 1 } else { oracles.fidelities() };
        let mut d = GpData::default();
        for e in &self.entries {
            let m = if single_fidelity { 1 } else { e.m };
            d.push(env.object_features(&e.x), normalize_fidelity(m, fids), oracles.score_sign() * e.y);
        }
        d
    }
}

/// Exact cost accounting against the active budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub cap: Cost,
    pub init_spent: Cost,
    pub active_spent: Cost,
    pub count_init: bool,
    pub history: Vec<Cost>,
}

impl BudgetLedger {
    pub fn new(cap: Cost, init_spent: Cost, count_init: bool) -> Self {
        BudgetLedger { cap, init_spent, active_spent: Cost::ZERO, count_init, history: Vec::new() }
    }

    /// Spend counted against the cap.
    pub fn spent(&self) -> Cost {
        if self.count_init {
            self.active_spent + self.init_spent
        } else {
            self.active_spent
        }
    }

    pub fn total_spent(&self) -> Cost {
        self.active_spent + self.init_spent
    }

    pub fn exhausted(&self) -> bool {
        self.spent() >= self.cap
    }

    pub fn record(&mut self, round_cost: Cost) {
        self.active_spent += round_cost;
        self.history.push(round_cost);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    /// Spend counted against the budget after this round.
    pub spent: f64,
    pub total_spent: f64,
    pub round_cost: f64,
    pub queries: usize,
    pub fidelity_counts: Vec<usize>,
    /// Mean target score of the top-K distinct proposals ranked by acquisition.
    pub mean_topk: f64,
    /// Mean target score of the top-K distinct proposals ranked by score.
    pub mean_topk_by_score: f64,
    pub diversity: f64,
    pub diverse_topk: f64,
    /// Mean target score of the top-K distinct objects in the dataset.
    pub topk_dataset: f64,
    pub best_dataset: f64,
    pub train_loss: f64,
    pub log_z: f64,
}

impl RoundReport {
    pub const CSV_HEADER: &'static str =
        "round,spent,mean_topK,diversity,diverse_topK,total_spent,queries,topK_dataset,best_dataset,train_loss";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.round,
            self.spent,
            self.mean_topk,
            self.diversity,
            self.diverse_topk,
            self.total_spent,
            self.queries,
            self.topk_dataset,
            self.best_dataset,
            self.train_loss
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub task: String,
    pub sampler: String,
    pub seed: u64,
    pub budget: f64,
    pub init_cost: f64,
    pub rounds: usize,
    pub spent: f64,
    pub total_spent: f64,
    pub dataset_size: usize,
    pub topk_dataset: f64,
    pub diversity_dataset: f64,
    pub reports: Vec<RoundReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Uniform-random initial annotations, `counts[m - 1]` at each fidelity.
pub fn init_dataset<R: Rng + ?Sized>(
    oracles: &OracleSet,
    counts: &[usize],
    rng: &mut R,
) -> Result<(AnnotatedDataset, Cost)> {
    if counts.len() != oracles.fidelities() {
        return Err(Error::config("init_counts", "needs one count per fidelity"));
    }
    let env = oracles.env();
    let mut queries = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, &n) in counts.iter().enumerate() {
        let m = i as u8 + 1;
        if n as u128 > env.object_count() {
            return Err(Error::config("init_counts", "more initial points than objects"));
        }
        let mut added = 0;
        while added < n {
            let x = env.random_object(rng);
            if seen.insert((x.clone(), m)) {
                queries.push((x, m));
                added += 1;
            }
        }
    }
    let (annotations, cost) = oracles.evaluate_batch(&queries)?;
    let mut d = AnnotatedDataset::new();
    for a in annotations {
        d.insert(a, 0);
    }
    Ok((d, cost))
}

/// First cumulative spend at which `value` reaches `threshold`, or infinity.
pub fn budget_to_threshold(reports: &[RoundReport], value: impl Fn(&RoundReport) -> f64, threshold: f64) -> f64 {
    reports
        .iter()
        .find(|r| value(r) >= threshold)
        .map_or(f64::INFINITY, |r| r.spent)
}

/// All mutable state of one experiment.
pub struct LoopState {
    pub config: ExperimentConfig,
    pub oracles: OracleSet,
    env: Env,
    policy_env: Env,
    pub dataset: AnnotatedDataset,
    pub ledger: BudgetLedger,
    pub policy: Option<PolicyNet>,
    pub model: Option<MfGpModel>,
    gp_params: Option<MfKernelParams>,
    rng: ChaCha8Rng,
    pub round: usize,
    pub reports: Vec<RoundReport>,
}

impl LoopState {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let oracles = config.oracles()?;
        let env = oracles.env();
        let sf = config.sampler.is_single_fidelity();
        let policy_env = match config.sampler {
            SamplerKind::MfGfn | SamplerKind::Random => env.clone(),
            SamplerKind::SfGfn | SamplerKind::RandomFidGfn => env.single_fidelity(),
        };
        let counts: Vec<usize> = if sf {
            let mut c = vec![0; oracles.fidelities()];
            *c.last_mut().expect("at least one fidelity") = config.init_sf;
            c
        } else {
            config.init_counts.clone()
        };
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (dataset, init_cost) = init_dataset(&oracles, &counts, &mut init_rng)?;
        let cap = Cost::from_f64(config.budget())
            .map_err(|_| Error::config("gamma", "budget must be a multiple of 1e-6"))?;
        let ledger = BudgetLedger::new(cap, init_cost, config.count_init_budget);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(LoopState {
            oracles,
            env,
            policy_env,
            dataset,
            ledger,
            policy: None,
            model: None,
            gp_params: None,
            rng,
            round: 0,
            reports: Vec::new(),
            config,
        })
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn done(&self) -> bool {
        self.ledger.exhausted() || self.round >= self.config.max_rounds
    }

    fn acquisition_costs(&self) -> Vec<Cost> {
        if self.config.sampler.is_single_fidelity() {
            vec![self.oracles.cost(self.oracles.target_fidelity())]
        } else {
            self.oracles.costs().to_vec()
        }
    }

    fn fit_surrogate(&mut self) -> Result<MfGpModel> {
        let sf = self.config.sampler.is_single_fidelity();
        let data = self.dataset.gp_data(&self.env, &self.oracles, sf);
        let warm = self.gp_params.clone();
        let cfg = GpFitConfig {
            kernel: self.config.kernel,
            steps: if warm.is_some() { self.config.gp_refit_steps } else { self.config.gp_steps },
            lr: self.config.gp_lr,
            restarts: if warm.is_some() { 1 } else { self.config.gp_restarts },
            max_points: (self.config.gp_max_points > 0).then_some(self.config.gp_max_points),
            seed: self.rng.random(),
            init: warm,
        };
        let model = MfGpModel::fit(&data, &cfg)?;
        self.gp_params = Some(model.params().clone());
        Ok(model)
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            trajectories: self.config.trajectories,
            batch_size: self.config.train_batch,
            epsilon: self.config.epsilon,
            lr: self.config.lr,
            lr_log_z: self.config.lr_log_z,
        }
    }

    /// One round: fit, train, propose, select, query, report.
    pub fn run_round(&mut self) -> Result<RoundReport> {
        let round = self.round + 1;
        self.run_round_inner(round).map_err(|e| Error::Round { round, source: Box::new(e) })
    }

    fn run_round_inner(&mut self, round: usize) -> Result<RoundReport> {
        let cfg = self.config.clone();
        let fids = self.oracles.fidelities();
        let target = self.oracles.target_fidelity();
        let sf = cfg.sampler.is_single_fidelity();

        let model = self.fit_surrogate()?;
        let acq_cfg = AcqConfig {
            n_max_value_samples: cfg.n_max_value_samples,
            pool_size: cfg.pool_size,
            batch_term: cfg.gibbon_batch_term,
        };
        let samples = sample_max_values(&model, &self.env, &acq_cfg, &mut self.rng)?;
        let acq = Acquisition::new(&model, samples, &self.acquisition_costs())?;
        let transform = RewardTransform { exponent: cfg.reward_exponent, ..RewardTransform::new(cfg.beta, cfg.rho, round as u32) };

        let mut cache: HashMap<Object, Vec<f64>> = HashMap::new();
        let env = self.env.clone();
        let mut alpha_all = |x: &Object| -> Vec<f64> {
            cache
                .entry(x.clone())
                .or_insert_with(|| acq.mf_mes_all(&env.object_features(x)))
                .clone()
        };

        let mut train_loss = f64::NAN;
        if cfg.sampler != SamplerKind::Random {
            let train_cfg = self.train_config();
            if self.policy.is_none() || !cfg.warm_start {
                self.policy = Some(PolicyNet::new(&self.policy_env, cfg.hidden, &train_cfg, &mut self.rng));
            }
            let policy = self.policy.as_mut().expect("initialized above");
            let sampler = cfg.sampler;
            let trace = policy.train(
                &self.policy_env,
                |x, m| {
                    let a = alpha_all(x);
                    let alpha = match sampler {
                        SamplerKind::MfGfn => a[m as usize - 1],
                        SamplerKind::SfGfn => a[0],
                        _ => a.iter().sum::<f64>() / a.len() as f64,
                    };
                    Ok(transform.log_apply(alpha))
                },
                &train_cfg,
                &mut self.rng,
            )?;
            let tail = (trace.len() / 10).max(1).min(trace.len());
            if tail > 0 {
                train_loss = trace[trace.len() - tail..].iter().sum::<f64>() / tail as f64;
            }
        }

        // proposals as (x, m) in the multi-fidelity numbering
        let proposals: Vec<(Object, u8)> = match cfg.sampler {
            SamplerKind::MfGfn => {
                let net = self.policy.as_ref().expect("trained");
                sample_terminals(net, &self.policy_env, cfg.proposals, SampleMode::Mixture(0.0), &mut self.rng)
            }
            SamplerKind::SfGfn => {
                let net = self.policy.as_ref().expect("trained");
                sample_terminals(net, &self.policy_env, cfg.proposals, SampleMode::Mixture(0.0), &mut self.rng)
                    .into_iter()
                    .map(|(x, _)| (x, target))
                    .collect()
            }
            SamplerKind::RandomFidGfn => {
                let net = self.policy.as_ref().expect("trained");
                sample_terminals(net, &self.policy_env, cfg.proposals, SampleMode::Mixture(0.0), &mut self.rng)
                    .into_iter()
                    .map(|(x, _)| (x, self.rng.random_range(1..=fids as u8)))
                    .collect()
            }
            SamplerKind::Random => (0..cfg.proposals)
                .map(|_| (self.env.random_object(&mut self.rng), self.rng.random_range(1..=fids as u8)))
                .collect(),
        };
        let acq_m = |m: u8| if sf { 1usize } else { m as usize };
        let scored: Vec<f64> = proposals.iter().map(|(x, m)| alpha_all(x)[acq_m(*m) - 1]).collect();

        let selected = self.select_batch(&acq, &proposals, &scored, &mut alpha_all)?;
        let (annotations, round_cost) = self.oracles.evaluate_batch(&selected)?;
        let mut fidelity_counts = vec![0; fids];
        for a in annotations {
            fidelity_counts[a.m as usize - 1] += 1;
            let added = self.dataset.insert(a, round);
            debug_assert!(added);
        }
        self.ledger.record(round_cost);

        let report = self.report(round, &proposals, &scored, round_cost, selected.len(), fidelity_counts, train_loss)?;
        self.model = Some(model);
        self.round = round;
        self.reports.push(report.clone());
        Ok(report)
    }

    /// Top-B new pairs by acquisition, back-filling with uniform random pairs
    /// when the proposals hold fewer than B unqueried pairs.
    fn select_batch(
        &mut self,
        acq: &Acquisition<'_>,
        proposals: &[(Object, u8)],
        scored: &[f64],
        alpha_all: &mut impl FnMut(&Object) -> Vec<f64>,
    ) -> Result<Vec<(Object, u8)>> {
        let b = self.config.batch_size;
        let fids = self.oracles.fidelities();
        let sf = self.config.sampler.is_single_fidelity();
        let target = self.oracles.target_fidelity();
        let mut ranked: Vec<((Object, u8), f64)> =
            proposals.iter().cloned().zip(scored.iter().copied()).collect();
        let mut seen: BTreeSet<(Object, u8)> = BTreeSet::new();
        let fresh = |ranked: &mut Vec<((Object, u8), f64)>, seen: &mut BTreeSet<(Object, u8)>| {
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
            ranked
                .iter()
                .filter(|(p, _)| !self.dataset.contains(&p.0, p.1) && seen.insert(p.clone()))
                .map(|(p, _)| p.clone())
                .collect::<Vec<_>>()
        };
        let mut candidates = fresh(&mut ranked, &mut seen);
        let mut attempts = 0;
        while candidates.len() < b && attempts < 10 {
            attempts += 1;
            let mut extra = Vec::new();
            for _ in 0..proposals.len().max(b) {
                let x = self.env.random_object(&mut self.rng);
                let m = if sf { target } else { self.rng.random_range(1..=fids as u8) };
                let score = alpha_all(&x)[if sf { 0 } else { m as usize - 1 }];
                extra.push(((x, m), score));
            }
            candidates.extend(fresh(&mut extra, &mut seen));
        }
        if self.config.gibbon_batch_term && candidates.len() > b {
            let shortlist: Vec<(Object, u8)> = candidates.iter().take(3 * b).cloned().collect();
            let feats: Vec<(Vec<f64>, u8)> = shortlist
                .iter()
                .map(|(x, m)| (self.env.object_features(x), if sf { 1 } else { *m }))
                .collect();
            let picked = acq.greedy_batch(&feats, b)?;
            return Ok(picked.into_iter().map(|i| shortlist[i].clone()).collect());
        }
        candidates.truncate(b);
        Ok(candidates)
    }

    #[allow(clippy::too_many_arguments)]
    fn report(
        &self,
        round: usize,
        proposals: &[(Object, u8)],
        scored: &[f64],
        round_cost: Cost,
        queries: usize,
        fidelity_counts: Vec<usize>,
        train_loss: f64,
    ) -> Result<RoundReport> {
        let k = self.config.top_k;
        let space = self.env.space();
        // one item per distinct object, keeping its best acquisition value
        let mut best: Vec<(Object, f64)> = Vec::new();
        let mut pos: HashMap<Object, usize> = HashMap::new();
        for ((x, _), a) in proposals.iter().zip(scored) {
            match pos.get(x) {
                Some(&i) => best[i].1 = best[i].1.max(*a),
                None => {
                    pos.insert(x.clone(), best.len());
                    best.push((x.clone(), *a));
                }
            }
        }
        let items: Vec<ScoredItem> = best
            .into_iter()
            .map(|(x, a)| Ok(ScoredItem { score: self.oracles.score(&x)?, x, acquisition: a }))
            .collect::<Result<_>>()?;
        let mean_k = mean_topk(&items, k, SelectBy::Acquisition)?;
        let mean_k_score = mean_topk(&items, k, SelectBy::Score)?;
        let top: Vec<Object> = topk_indices(&items, k, SelectBy::Acquisition)
            .into_iter()
            .map(|i| items[i].x.clone())
            .collect();
        let diversity = pairwise_diversity(&top, space).unwrap_or(0.0);
        let diverse = diverse_topk(&items, k, self.config.diversity_threshold, space);
        let diverse_mean = diverse.iter().map(|i| i.score).sum::<f64>() / diverse.len().max(1) as f64;
        let (topk_dataset, best_dataset) = self.dataset_topk()?;
        Ok(RoundReport {
            round,
            spent: self.ledger.spent().as_f64(),
            total_spent: self.ledger.total_spent().as_f64(),
            round_cost: round_cost.as_f64(),
            queries,
            fidelity_counts,
            mean_topk: mean_k,
            mean_topk_by_score: mean_k_score,
            diversity,
            diverse_topk: diverse_mean,
            topk_dataset,
            best_dataset,
            train_loss,
            log_z: self.policy.as_ref().map_or(f64::NAN, |p| p.log_z()),
        })
    }

    /// Mean target score of the top-K distinct dataset objects, and the best one.
    pub fn dataset_topk(&self) -> Result<(f64, f64)> {
        let objects = self.dataset_objects();
        if objects.is_empty() {
            return Ok((f64::NAN, f64::NAN));
        }
        let items: Vec<ScoredItem> = objects
            .into_iter()
            .map(|x| Ok(ScoredItem { score: self.oracles.score(&x)?, x, acquisition: 0.0 }))
            .collect::<Result<_>>()?;
        Ok((mean_topk(&items, self.config.top_k, SelectBy::Score)?, mean_topk(&items, 1, SelectBy::Score)?))
    }

    fn dataset_objects(&self) -> Vec<Object> {
        let mut seen = BTreeSet::new();
        self.dataset
            .entries()
            .iter()
            .filter(|e| seen.insert(e.x.clone()))
            .map(|e| e.x.clone())
            .collect()
    }

    pub fn summary(&self, error: Option<String>) -> Result<ExperimentSummary> {
        let (topk_dataset, _) = self.dataset_topk()?;
        let objects = self.dataset_objects();
        let top: Vec<Object> = {
            let items: Vec<ScoredItem> = objects
                .iter()
                .map(|x| Ok(ScoredItem { score: self.oracles.score(x)?, x: x.clone(), acquisition: 0.0 }))
                .collect::<Result<_>>()?;
            topk_indices(&items, self.config.top_k, SelectBy::Score)
                .into_iter()
                .map(|i| items[i].x.clone())
                .collect()
        };
        Ok(ExperimentSummary {
            task: self.config.task.name().to_string(),
            sampler: self.config.sampler.name().to_string(),
            seed: self.config.seed,
            budget: self.ledger.cap.as_f64(),
            init_cost: self.ledger.init_spent.as_f64(),
            rounds: self.round,
            spent: self.ledger.spent().as_f64(),
            total_spent: self.ledger.total_spent().as_f64(),
            dataset_size: self.dataset.len(),
            topk_dataset,
            diversity_dataset: pairwise_diversity(&top, self.env.space()).unwrap_or(0.0),
            reports: self.reports.clone(),
            error,
        })
    }
}

/// Files written for one run.
struct RunDir {
    root: PathBuf,
}

impl RunDir {
    fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(RunDir { root: root.to_path_buf() })
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        let path = self.root.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))
    }

    fn append_line(&self, name: &str, line: &str) -> Result<()> {
        let path = self.root.join(name);
        let mut f = fs::OpenOptions::new()
            .append(true)
            .create(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&path, e))
    }
}

/// Runs rounds until the budget is spent. With `out`, writes `config.json`,
/// `rounds.csv`, per-round dataset and policy snapshots, the latest surrogate
/// and `summary.json`; partial logs survive a failing round.
pub fn run_experiment(config: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentSummary> {
    let mut state = LoopState::new(config.clone())?;
    let dir = out.map(RunDir::create).transpose()?;
    if let Some(d) = &dir {
        d.write("config.json", &config.to_json())?;
        d.write("rounds.csv", &format!("{}\n", RoundReport::CSV_HEADER))?;
        d.write("dataset_round_0.json", &serde_json::to_string(&state.dataset)?)?;
    }
    while !state.done() {
        match state.run_round() {
            Ok(report) => {
                if let Some(d) = &dir {
                    d.append_line("rounds.csv", &report.csv_row())?;
                    d.write(&format!("dataset_round_{}.json", report.round), &serde_json::to_string(&state.dataset)?)?;
                    if let Some(p) = &state.policy {
                        d.write(&format!("policy_round_{}.json", report.round), &serde_json::to_string(&p.snapshot())?)?;
                    }
                    if let Some(m) = &state.model {
                        d.write("surrogate.json", &serde_json::to_string(&m.snapshot())?)?;
                    }
                }
            }
            Err(e) => {
                if let Some(d) = &dir {
                    let summary = state.summary(Some(e.to_string()))?;
                    d.write("summary.json", &serde_json::to_string_pretty(&summary)?)?;
                }
                return Err(e);
            }
        }
    }
    let summary = state.summary(None)?;
    if let Some(d) = &dir {
        d.write("summary.json", &serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationEntry {
    pub costs: Vec<f64>,
    pub mf: ExperimentSummary,
    pub sf: ExperimentSummary,
}

/// Runs MF-GFN once per cost vector and SF-GFN once (it only sees the target
/// cost), all from the same seed. Runs go to `out/<label>/` when `out` is given.
pub fn cost_ablation(config: &ExperimentConfig, cost_sets: &[Vec<f64>], out: Option<&Path>) -> Result<Vec<AblationEntry>> {
    if config.fidelities() != 2 {
        return Err(Error::config("task", "cost ablation needs a two-fidelity task"));
    }
    if cost_sets.is_empty() {
        return Err(Error::config("costs", "no cost pairs given"));
    }
    let target = cost_sets[0][1];
    if cost_sets.iter().any(|c| c.len() != 2 || c[1] != target) {
        return Err(Error::config("costs", "every pair needs two costs and the same target cost"));
    }
    let sub = |label: &str| out.map(|o| o.join(label));
    let sf_cfg = ExperimentConfig { sampler: SamplerKind::SfGfn, costs: cost_sets[0].clone(), ..config.clone() };
    let sf = run_experiment(&sf_cfg, sub("sf_gfn").as_deref())?;
    let mut entries = Vec::new();
    for costs in cost_sets {
        let mf_cfg = ExperimentConfig { sampler: SamplerKind::MfGfn, costs: costs.clone(), ..config.clone() };
        let label = format!("mf_gfn_{}_{}", costs[0], costs[1]);
        let mf = run_experiment(&mf_cfg, sub(&label).as_deref())?;
        entries.push(AblationEntry { costs: costs.clone(), mf, sf: sf.clone() });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::Task;

    fn smoke(task: Task, sampler: SamplerKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::preset(task);
        c.sampler = sampler;
        c.seed = 3;
        c.trajectories = 32;
        c.hidden = 16;
        c.gp_steps = 10;
        c.gp_refit_steps = 5;
        c.gp_restarts = 1;
        c.n_max_value_samples = 2;
        c.pool_size = 32;
        c
    }

    #[test]
    fn branin_initial_dataset() {
        let o = OracleSet::branin(100);
        let (d, cost) = init_dataset(&o, &[20, 20, 2], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(d.len(), 42);
        assert_eq!(cost, Cost::from_f64(4.2).unwrap());
        let (d, cost) = init_dataset(&o, &[0, 0, 0], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(d.is_empty());
        assert_eq!(cost, Cost::ZERO);
        let h = OracleSet::hartmann6(10);
        let (d, _) = init_dataset(&h, &[80, 40, 5], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let per: Vec<usize> = (1..=3u8).map(|m| d.entries().iter().filter(|e| e.m == m).count()).collect();
        assert_eq!(per, [80, 40, 5]);
    }

    #[test]
    fn dataset_rejects_duplicates() {
        let mut d = AnnotatedDataset::new();
        let a = Annotation { x: vec![1, 2], y: 0.5, m: 1, cost: Cost::from_micros(10) };
        assert!(d.insert(a.clone(), 0));
        assert!(!d.insert(a.clone(), 1));
        assert!(d.insert(Annotation { m: 2, ..a }, 1));
        let back = AnnotatedDataset::from_json(&serde_json::to_string(&d).unwrap()).unwrap();
        assert!(back.contains(&[1, 2], 2));
        assert_eq!(back.len(), 2);
    }

    #[test]
    fn zero_budget_runs_no_rounds() {
        let mut c = smoke(Task::Branin, SamplerKind::MfGfn);
        c.gamma = 0.0;
        let s = run_experiment(&c, None).unwrap();
        assert_eq!(s.rounds, 0);
        assert_eq!(s.dataset_size, 42);
        assert!((s.init_cost - 4.2).abs() < 1e-12);
    }

    #[test]
    fn ledger_is_exact_and_queries_unique() {
        for sampler in [SamplerKind::MfGfn, SamplerKind::SfGfn, SamplerKind::RandomFidGfn, SamplerKind::Random] {
            let mut c = smoke(Task::Branin, sampler);
            c.gamma = 3.0;
            c.max_rounds = 3;
            let mut state = LoopState::new(c).unwrap();
            while !state.done() {
                let r = state.run_round().unwrap();
                assert_eq!(r.queries, 30);
            }
            let active: Cost = state.dataset.entries().iter().filter(|e| e.round > 0).map(|e| e.cost).sum();
            assert_eq!(active, state.ledger.active_spent);
            assert_eq!(state.ledger.total_spent(), state.dataset.total_cost());
            let history: Cost = state.ledger.history.iter().copied().sum();
            assert_eq!(history, active);
            if sampler == SamplerKind::SfGfn {
                assert!(state.dataset.entries().iter().all(|e| e.m == 3));
            }
        }
    }

    #[test]
    fn identical_seeds_give_identical_reports() {
        let mut c = smoke(Task::SequenceToy, SamplerKind::MfGfn);
        c.max_rounds = 2;
        let a = run_experiment(&c, None).unwrap();
        let b = run_experiment(&c, None).unwrap();
        assert_eq!(
            a.reports.iter().map(RoundReport::csv_row).collect::<Vec<_>>(),
            b.reports.iter().map(RoundReport::csv_row).collect::<Vec<_>>()
        );
    }

    #[test]
    fn small_proposal_pool_is_backfilled() {
        let mut c = smoke(Task::Branin, SamplerKind::Random);
        c.proposals = 5;
        c.max_rounds = 1;
        let mut state = LoopState::new(c).unwrap();
        assert_eq!(state.run_round().unwrap().queries, 30);
    }

    #[test]
    fn budget_threshold_helper() {
        let mk = |spent: f64, v: f64| RoundReport {
            round: 1,
            spent,
            total_spent: spent,
            round_cost: 0.0,
            queries: 0,
            fidelity_counts: vec![],
            mean_topk: v,
            mean_topk_by_score: v,
            diversity: 0.0,
            diverse_topk: v,
            topk_dataset: v,
            best_dataset: v,
            train_loss: 0.0,
            log_z: 0.0,
        };
        let reports = [mk(1.0, 0.2), mk(2.5, 0.9), mk(4.0, 0.95)];
        assert_eq!(budget_to_threshold(&reports, |r| r.mean_topk, 0.9), 2.5);
        assert_eq!(budget_to_threshold(&reports, |r| r.mean_topk, 0.99), f64::INFINITY);
    }
}
