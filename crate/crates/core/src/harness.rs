//! Permutation testing: first-divergence trials, experiment sweeps, the
//! detection model E[X] and exhaustive enumeration of small queues.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixtures::{self, ALICE, BOB, DEFAULT_DEPOSIT};
use crate::lifecycle::{run_transaction, FeeSchedule, World};
use crate::queue::{fisher_yates, mix, Message, Rng};
use crate::snapshot::{diff_worlds, fingerprint, DiffReport};
use crate::vm::{GetMethodError, Value};

/// Largest queue [`enumerate_permutations`] accepts (8! executions).
pub const MAX_ENUMERATION_LEN: usize = 8;
/// Getter compared alongside the fingerprint during trials.
pub const STATE_GETTER: &str = "get_state";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("expected_iterations needs n1, n2 >= 1")]
    Domain,
    #[error("{0} messages is too many to enumerate (max {MAX_ENUMERATION_LEN})")]
    TooManyPermutations(usize),
    #[error("{0}")]
    Io(String),
}

/// `p = n1 / (n1 + n2)`.
fn probabilities(n1: u64, n2: u64) -> Result<(f64, f64), HarnessError> {
    if n1 == 0 || n2 == 0 {
        return Err(HarnessError::Domain);
    }
    let p = n1 as f64 / (n1 + n2) as f64;
    Ok((p, 1.0 - p))
}

/// Σ_{k≥2} k (p^{k-1} q + q^{k-1} p), summed until a term drops below 1e-15.
pub fn expected_iterations_series(p: f64) -> f64 {
    let q = 1.0 - p;
    let (mut pk, mut qk) = (p, q);
    let mut sum = 0.0;
    let mut k = 2.0;
    loop {
        let term = k * (pk * q + qk * p);
        sum += term;
        if term < 1e-15 && k > 2.0 {
            return sum;
        }
        pk *= p;
        qk *= q;
        k += 1.0;
    }
}

pub fn expected_iterations_closed(p: f64) -> f64 {
    1.0 / p + 1.0 / (1.0 - p) - 1.0
}

pub fn expected_iterations(n1: u64, n2: u64) -> Result<f64, HarnessError> {
    let (p, _) = probabilities(n1, n2)?;
    Ok(expected_iterations_series(p))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n1: u64,
    pub n2: u64,
    pub value_per_message: u128,
    pub trials: u64,
    pub max_iterations: u64,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n1: 32,
            n2: 32,
            value_per_message: DEFAULT_DEPOSIT,
            trials: 100,
            max_iterations: 1000,
            master_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn new(n1: u64, n2: u64, master_seed: u64) -> ExperimentConfig {
        ExperimentConfig { n1, n2, master_seed, ..ExperimentConfig::default() }
    }

    pub fn from_json(text: &str) -> Result<ExperimentConfig, HarnessError> {
        let c: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n1 == 0 || self.n2 == 0 {
            return Err(HarnessError::Config("n1 and n2 must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(HarnessError::Config("trials must be at least 1".into()));
        }
        if self.max_iterations < 2 {
            return Err(HarnessError::Config("max_iterations must be at least 2".into()));
        }
        Ok(())
    }

    /// n1 ENLIST messages from Alice followed by n2 from Bob, ids from 1.
    pub fn base_queue(&self) -> Vec<Message> {
        let mut queue = Vec::with_capacity((self.n1 + self.n2) as usize);
        for i in 0..self.n1 + self.n2 {
            let (sender, who) = if i < self.n1 { (ALICE, "Alice") } else { (BOB, "Bob") };
            queue.push(fixtures::enlist(i + 1, sender, self.value_per_message, &format!("ENLIST {who}")));
        }
        queue
    }

    pub fn trial_seed(&self, trial_index: u64) -> u64 {
        mix(self.master_seed ^ trial_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrialResult {
    pub trial_index: u64,
    /// `None` when the iteration cap was reached without divergence.
    pub first_divergence: Option<u64>,
    pub iterations_run: u64,
    #[serde(serialize_with = "hex_serialize")]
    pub baseline_fingerprint: [u8; 32],
    #[serde(serialize_with = "hex_option")]
    pub divergent_fingerprint: Option<[u8; 32]>,
    /// Orderings whose final owner was not the first ENLIST sender.
    pub winner_law_violations: u64,
}

fn hex_serialize<S: serde::Serializer>(d: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(d))
}

fn hex_option<S: serde::Serializer>(d: &Option<[u8; 32]>, s: S) -> Result<S::Ok, S::Error> {
    match d {
        Some(d) => s.serialize_str(&hex::encode(d)),
        None => s.serialize_none(),
    }
}

fn same_values(a: &Result<Vec<Value>, GetMethodError>, b: &Result<Vec<Value>, GetMethodError>) -> bool {
    match (a, b) {
        (Ok(x), Ok(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.same_as(q)),
        (Err(x), Err(y)) => x == y,
        _ => false,
    }
}

/// Outcome of running one ordering to completion.
struct Outcome {
    fingerprint: [u8; 32],
    state: Result<Vec<Value>, GetMethodError>,
    winner_law_ok: bool,
}

fn execute_ordering(initial: &World, order: &[Message], fees: &FeeSchedule) -> Outcome {
    let mut world = initial.clone();
    for m in order {
        run_transaction(&mut world, m, fees);
    }
    let state = world.get(STATE_GETTER);
    let winner_law_ok = match (order.first(), state.as_ref().ok().and_then(|v| fixtures::decode_state(v))) {
        (Some(first), Some((_, owner))) => owner.contents_eq(&crate::queue::address_slice(first.sender_id)),
        _ => false,
    };
    Outcome { fingerprint: fingerprint(&world), state, winner_law_ok }
}

pub fn run_trial(config: &ExperimentConfig, trial_index: u64) -> TrialResult {
    let base = config.base_queue();
    let initial = fixtures::fresh_world();
    let fees = FeeSchedule::default();
    let mut rng = Rng::new(config.trial_seed(trial_index));
    let mut order = base.clone();
    let mut violations = 0;

    fisher_yates(&mut order, &mut rng);
    let baseline = execute_ordering(&initial, &order, &fees);
    violations += !baseline.winner_law_ok as u64;

    for k in 2..=config.max_iterations {
        order.clone_from(&base);
        fisher_yates(&mut order, &mut rng);
        let outcome = execute_ordering(&initial, &order, &fees);
        violations += !outcome.winner_law_ok as u64;
        if outcome.fingerprint != baseline.fingerprint || !same_values(&outcome.state, &baseline.state) {
            return TrialResult {
                trial_index,
                first_divergence: Some(k),
                iterations_run: k,
                baseline_fingerprint: baseline.fingerprint,
                divergent_fingerprint: Some(outcome.fingerprint),
                winner_law_violations: violations,
            };
        }
    }
    TrialResult {
        trial_index,
        first_divergence: None,
        iterations_run: config.max_iterations,
        baseline_fingerprint: baseline.fingerprint,
        divergent_fingerprint: None,
        winner_law_violations: violations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    /// Iterations executed across all trials, censored ones counted at the cap.
    pub total_iterations: u64,
    /// Mean over uncensored trials (NaN when every trial was censored).
    pub mean: f64,
    /// Sample standard deviation over uncensored trials.
    pub std_dev: f64,
    pub censored_count: u64,
    pub theoretical: f64,
    pub winner_law_violations: u64,
}

impl ExperimentSummary {
    pub fn from_trials(config: &ExperimentConfig, trials: &[TrialResult]) -> ExperimentSummary {
        let values: Vec<f64> = trials.iter().filter_map(|t| t.first_divergence).map(|k| k as f64).collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std_dev = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        ExperimentSummary {
            config: config.clone(),
            total_iterations: trials.iter().map(|t| t.iterations_run).sum(),
            mean,
            std_dev,
            censored_count: trials.iter().filter(|t| t.first_divergence.is_none()).count() as u64,
            theoretical: expected_iterations(config.n1, config.n2).unwrap_or(f64::NAN),
            winner_law_violations: trials.iter().map(|t| t.winner_law_violations).sum(),
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        let n = (self.config.trials - self.censored_count) as f64;
        self.std_dev / n.sqrt()
    }

    pub fn log2_ratio(&self) -> f64 {
        (self.config.n1 as f64 / self.config.n2 as f64).log2()
    }
}

pub fn run_trials(config: &ExperimentConfig, parallel: bool) -> Vec<TrialResult> {
    if parallel {
        (0..config.trials).into_par_iter().map(|i| run_trial(config, i)).collect()
    } else {
        (0..config.trials).map(|i| run_trial(config, i)).collect()
    }
}

/// Runs every trial in parallel; the summary does not depend on scheduling.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary, HarnessError> {
    run_experiment_with(config, true)
}

pub fn run_experiment_with(
    config: &ExperimentConfig,
    parallel: bool,
) -> Result<ExperimentSummary, HarnessError> {
    config.validate()?;
    Ok(ExperimentSummary::from_trials(config, &run_trials(config, parallel)))
}

/// n1 ∈ {1, 2, 4, ..., 512}, n2 = 32.
pub fn default_sweep(master_seed: u64) -> Vec<ExperimentConfig> {
    (0..10).map(|i| ExperimentConfig::new(1 << i, 32, master_seed)).collect()
}

pub const CSV_HEADER: &str = "n1,n2,trials,log2_ratio,mean,std_dev,theoretical";

pub fn summaries_to_csv(summaries: &[ExperimentSummary]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in summaries {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6}",
            s.config.n1,
            s.config.n2,
            s.config.trials,
            s.log2_ratio(),
            s.mean,
            s.std_dev,
            s.theoretical
        )
        .unwrap();
    }
    out
}

pub fn run_sweep(
    configs: &[ExperimentConfig],
    parallel: bool,
) -> Result<Vec<ExperimentSummary>, HarnessError> {
    configs.iter().map(|c| run_experiment_with(c, parallel)).collect()
}

/// Runs each config and writes the CSV to `out_path`.
pub fn sweep_and_emit(
    configs: &[ExperimentConfig],
    out_path: &Path,
) -> Result<Vec<ExperimentSummary>, HarnessError> {
    let summaries = run_sweep(configs, true)?;
    std::fs::write(out_path, summaries_to_csv(&summaries))
        .map_err(|e| HarnessError::Io(format!("{}: {e}", out_path.display())))?;
    Ok(summaries)
}

#[derive(Debug, Clone)]
pub struct OutcomeClass {
    pub fingerprint: [u8; 32],
    pub count: usize,
    /// Lexicographically first ordering (by queue position) reaching this state.
    pub representative: Vec<u64>,
    pub final_world: World,
}

#[derive(Debug, Clone)]
pub struct Enumeration {
    /// Classes in order of first appearance.
    pub classes: Vec<OutcomeClass>,
    /// Diff between every pair of class representatives `(i, j)`, `i < j`.
    pub diffs: Vec<(usize, usize, DiffReport)>,
}

impl Enumeration {
    pub fn total(&self) -> usize {
        self.classes.iter().map(|c| c.count).sum()
    }

    pub fn multiplicities(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.count).collect()
    }
}

fn next_permutation(idx: &mut [usize]) -> bool {
    let Some(i) = (1..idx.len()).rev().find(|&i| idx[i - 1] < idx[i]) else {
        return false;
    };
    let j = (i..idx.len()).rev().find(|&j| idx[j] > idx[i - 1]).unwrap();
    idx.swap(i - 1, j);
    idx[i..].reverse();
    true
}

/// Runs every ordering of `messages` from `initial` and groups final states by fingerprint.
pub fn enumerate_permutations(
    messages: &[Message],
    initial: &World,
    fees: &FeeSchedule,
) -> Result<Enumeration, HarnessError> {
    if messages.len() > MAX_ENUMERATION_LEN {
        return Err(HarnessError::TooManyPermutations(messages.len()));
    }
    let mut idx: Vec<usize> = (0..messages.len()).collect();
    let mut classes: Vec<OutcomeClass> = Vec::new();
    let mut by_fp: HashMap<[u8; 32], usize> = HashMap::new();
    loop {
        let mut world = initial.clone();
        for &i in &idx {
            run_transaction(&mut world, &messages[i], fees);
        }
        let fp = fingerprint(&world);
        match by_fp.get(&fp) {
            Some(&c) => classes[c].count += 1,
            None => {
                by_fp.insert(fp, classes.len());
                classes.push(OutcomeClass {
                    fingerprint: fp,
                    count: 1,
                    representative: idx.iter().map(|&i| messages[i].id).collect(),
                    final_world: world,
                });
            }
        }
        if !next_permutation(&mut idx) {
            break;
        }
    }
    let mut diffs = Vec::new();
    for i in 0..classes.len() {
        for j in i + 1..classes.len() {
            diffs.push((i, j, diff_worlds(&classes[i].final_world, &classes[j].final_world)));
        }
    }
    Ok(Enumeration { classes, diffs })
}
