//! PATE: teachers trained on disjoint private shards label a public pool
//! through a Laplace noisy argmax, and a student learns from those labels
//! alone.
//!
//! Noise is parameterized by its inverse scale γ, i.e. Laplace scale
//! `b = 1/γ`. One query changes at most two vote counts by one each, so it
//! is `2γ`-DP; in RDP terms it is two sensitivity-one Laplace releases.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::accountant::{self, DpGuarantee, Mechanism, PrivacyLedger};
use crate::error::{Error, Result};
use crate::gaf::EncodedSet;
use crate::market::{PatternClass, NUM_CLASSES};
use crate::nn::train::{predict, train_baseline, EvalPlan, TrainHistory};
use crate::nn::{evaluate, ModelParams, TrainConfig};
use crate::par::Exec;
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PateConfig {
    pub teacher_count: usize,
    /// Inverse Laplace scale γ; `f64::INFINITY` means no noise.
    pub gamma: f64,
    /// Student label queries; `None` means `min(1000, |public|)`.
    pub query_budget: Option<usize>,
    /// Share of the training split held out as the public pool.
    pub public_fraction: f64,
    pub teacher: TrainConfig,
    pub student: TrainConfig,
    pub delta: f64,
    pub seed: u64,
}

impl Default for PateConfig {
    fn default() -> Self {
        PateConfig {
            teacher_count: 10,
            gamma: 1.0,
            query_budget: None,
            public_fraction: 0.2,
            teacher: TrainConfig::default(),
            student: TrainConfig::default(),
            delta: 1e-5,
            seed: 0,
        }
    }
}

impl PateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.teacher_count < 2 {
            return Err(Error::ConfigInvalid(format!(
                "need at least 2 teachers, got {}",
                self.teacher_count
            )));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::ConfigInvalid(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.query_budget == Some(0) {
            return Err(Error::ConfigInvalid("query budget must be at least 1".into()));
        }
        if !(self.public_fraction > 0.0 && self.public_fraction < 1.0) {
            return Err(Error::ConfigInvalid(format!(
                "public fraction must lie in (0, 1), got {}",
                self.public_fraction
            )));
        }
        self.teacher.validate()?;
        self.student.validate()
    }

    pub fn queries(&self, public_len: usize) -> usize {
        self.query_budget.unwrap_or(public_len.min(1000))
    }
}

/// Indices of each class, each list shuffled by `rng`.
fn shuffled_by_class(labels: &[PatternClass], rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); NUM_CLASSES];
    for (i, l) in labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }
    for c in &mut by_class {
        c.shuffle(rng);
    }
    by_class
}

/// Stratified split of `set` into `(private, public)`; each class gives
/// `round(fraction · count)` samples to the public pool.
pub fn split_public(set: &EncodedSet, fraction: f64, seed: u64) -> (EncodedSet, EncodedSet) {
    let mut rng = rng::stream(seed, "public-split", 0);
    let (mut private, mut public) = (Vec::new(), Vec::new());
    for class in shuffled_by_class(set.labels(), &mut rng) {
        let k = (fraction * class.len() as f64).round() as usize;
        public.extend_from_slice(&class[..k]);
        private.extend_from_slice(&class[k..]);
    }
    private.sort_unstable();
    public.sort_unstable();
    (set.subset(&private), set.subset(&public))
}

/// Up to `size` sample indices, taking classes in turn so the subset stays
/// as balanced as the data allows.
pub fn stratified_indices(labels: &[PatternClass], size: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng::stream(seed, "stratified", 0);
    let by_class = shuffled_by_class(labels, &mut rng);
    let mut out = Vec::with_capacity(size.min(labels.len()));
    let mut depth = 0;
    while out.len() < size.min(labels.len()) {
        for c in &by_class {
            if let Some(&i) = c.get(depth) {
                if out.len() < size {
                    out.push(i);
                }
            }
        }
        depth += 1;
    }
    out.sort_unstable();
    out
}

/// Splits `0..labels.len()` into `teachers` disjoint shards whose sizes
/// differ by at most one. Samples are dealt round-robin in class-major
/// order, so each shard receives a near-equal share of every class.
pub fn partition_private(
    labels: &[PatternClass],
    teachers: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if teachers == 0 || labels.len() < teachers {
        return Err(Error::TooFewSamples {
            needed: teachers.max(1),
            available: labels.len(),
        });
    }
    let mut rng = rng::stream(seed, "partition", 0);
    let mut shards = vec![Vec::new(); teachers];
    let order = shuffled_by_class(labels, &mut rng).concat();
    for (k, i) in order.into_iter().enumerate() {
        shards[k % teachers].push(i);
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    Ok(shards)
}

/// Private shards and the public pool. Public labels are kept only for
/// measuring label quality; aggregation never reads them.
#[derive(Clone, Debug)]
pub struct PateSplit {
    pub partitions: Vec<EncodedSet>,
    pub public: EncodedSet,
}

impl PateSplit {
    pub fn new(train: &EncodedSet, config: &PateConfig) -> Result<Self> {
        config.validate()?;
        let (private, public) = split_public(train, config.public_fraction, config.seed);
        let shards = partition_private(private.labels(), config.teacher_count, config.seed)?;
        Ok(PateSplit {
            partitions: shards.iter().map(|s| private.subset(s)).collect(),
            public,
        })
    }
}

/// One trained teacher and its accuracy curve.
#[derive(Clone, Debug)]
pub struct Teacher {
    pub params: ModelParams,
    pub history: TrainHistory,
}

/// Trains one teacher per shard, in parallel under `exec`. Teacher `i` uses
/// seed `derive_seed(config.seed, "teacher", i)`.
pub fn train_teachers(
    partitions: &[EncodedSet],
    config: &TrainConfig,
    eval: Option<EvalPlan<'_>>,
    exec: Exec,
) -> Result<Vec<Teacher>> {
    if partitions.iter().any(EncodedSet::is_empty) {
        return Err(Error::EmptySplit);
    }
    let idx: Vec<usize> = (0..partitions.len()).collect();
    exec.map(&idx, |&i| {
        let cfg = TrainConfig {
            seed: rng::derive_seed(config.seed, "teacher", i as u64),
            ..config.clone()
        };
        let (params, history) = train_baseline(&partitions[i], &cfg, eval, Exec::Sequential)?;
        Ok(Teacher { params, history })
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandRow {
    pub epoch: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Min/median/max teacher accuracy at every evaluated epoch.
pub fn teacher_band(teachers: &[Teacher]) -> Vec<BandRow> {
    let Some(first) = teachers.first() else {
        return Vec::new();
    };
    first
        .history
        .epochs
        .iter()
        .enumerate()
        .filter(|(_, e)| e.accuracy.is_some())
        .map(|(k, e)| {
            let accs: Vec<f64> = teachers
                .iter()
                .filter_map(|t| t.history.epochs.get(k).and_then(|s| s.accuracy))
                .collect();
            BandRow {
                epoch: e.epoch,
                min: accs.iter().cloned().fold(f64::INFINITY, f64::min),
                median: median(&accs),
                max: accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

/// Per-class teacher votes for one public sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoteHistogram {
    counts: [usize; NUM_CLASSES],
}

impl VoteHistogram {
    pub fn new(counts: [usize; NUM_CLASSES]) -> Self {
        VoteHistogram { counts }
    }

    pub fn from_votes(votes: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut counts = [0; NUM_CLASSES];
        for v in votes {
            *counts
                .get_mut(v)
                .ok_or_else(|| Error::Domain(format!("vote for unknown class {v}")))? += 1;
        }
        Ok(VoteHistogram { counts })
    }

    pub fn counts(&self) -> &[usize; NUM_CLASSES] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Plain argmax, lowest class on ties.
    pub fn plurality(&self) -> PatternClass {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        PatternClass::from_index(best).expect("class index in range")
    }
}

/// Argmax of the counts after adding i.i.d. Laplace(1/γ) noise to each.
pub fn noisy_aggregate(votes: &VoteHistogram, gamma: f64, rng: &mut Rng) -> PatternClass {
    let scale = 1.0 / gamma;
    let noisy: Vec<f64> = votes
        .counts
        .iter()
        .map(|&c| c as f64 + rng::laplace(rng, scale))
        .collect();
    let best = crate::nn::argmax(&noisy);
    PatternClass::from_index(best).expect("class index in range")
}

/// Counts answered queries against a fixed budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueryBudget {
    budget: usize,
    used: usize,
}

impl QueryBudget {
    pub fn new(budget: usize) -> Self {
        QueryBudget { budget, used: 0 }
    }

    pub fn consume(&mut self) -> Result<()> {
        if self.used >= self.budget {
            return Err(Error::BudgetExceeded {
                budget: self.budget,
            });
        }
        self.used += 1;
        Ok(())
    }

    pub fn used(&self) -> usize {
        self.used
    }

    pub fn remaining(&self) -> usize {
        self.budget - self.used
    }
}

/// Answers noisy-argmax label queries from precomputed teacher votes,
/// refusing once the budget is spent.
pub struct Aggregator<'a> {
    votes: &'a [VoteHistogram],
    gamma: f64,
    budget: QueryBudget,
    rng: Rng,
}

impl<'a> Aggregator<'a> {
    pub fn new(votes: &'a [VoteHistogram], gamma: f64, budget: usize, rng: Rng) -> Self {
        Aggregator {
            votes,
            gamma,
            budget: QueryBudget::new(budget),
            rng,
        }
    }

    pub fn query(&mut self, sample: usize) -> Result<PatternClass> {
        self.budget.consume()?;
        Ok(noisy_aggregate(&self.votes[sample], self.gamma, &mut self.rng))
    }

    pub fn queries_used(&self) -> usize {
        self.budget.used()
    }
}

/// Teacher vote histograms for every sample of `pool`.
pub fn vote_histograms(teachers: &[Teacher], pool: &EncodedSet, exec: Exec) -> Vec<VoteHistogram> {
    let preds: Vec<Vec<usize>> = exec.map(teachers, |t| predict(&t.params, pool, Exec::Sequential));
    (0..pool.len())
        .map(|i| {
            VoteHistogram::from_votes(preds.iter().map(|p| p[i])).expect("predictions are class indices")
        })
        .collect()
}

/// The public samples chosen for labeling: a seeded random `queries`-subset
/// of the pool, in pool order.
pub fn query_indices(pool_len: usize, queries: usize, seed: u64) -> Result<Vec<usize>> {
    if queries > pool_len {
        return Err(Error::TooFewSamples {
            needed: queries,
            available: pool_len,
        });
    }
    let mut rng = rng::stream(seed, "queries", 0);
    let mut idx: Vec<usize> = (0..pool_len).collect();
    idx.shuffle(&mut rng);
    idx.truncate(queries);
    idx.sort_unstable();
    Ok(idx)
}

/// Public samples with their noisy ensemble labels.
#[derive(Clone, Debug)]
pub struct LabeledPublic {
    pub set: EncodedSet,
    pub queries: usize,
    /// Fraction of noisy labels equal to the withheld true labels.
    pub label_accuracy: f64,
}

/// Labels `queries` public samples through the noisy aggregator. `votes`
/// holds one histogram per public sample.
pub fn label_public(
    public: &EncodedSet,
    votes: &[VoteHistogram],
    gamma: f64,
    queries: usize,
    seed: u64,
) -> Result<LabeledPublic> {
    if votes.len() != public.len() {
        return Err(Error::LengthMismatch {
            expected: public.len(),
            actual: votes.len(),
        });
    }
    let picked = query_indices(public.len(), queries, seed)?;
    let mut agg = Aggregator::new(votes, gamma, queries, rng::stream(seed, "laplace", 0));
    let labels = picked
        .iter()
        .map(|&i| agg.query(i))
        .collect::<Result<Vec<_>>>()?;
    let hits = picked
        .iter()
        .zip(&labels)
        .filter(|(&i, l)| public.label(i) == **l)
        .count();
    Ok(LabeledPublic {
        set: public.subset(&picked).relabel(labels)?,
        queries: agg.queries_used(),
        label_accuracy: hits as f64 / queries.max(1) as f64,
    })
}

/// Trains the student on the noisily labeled public subset only.
pub fn train_student(
    labeled: &EncodedSet,
    config: &TrainConfig,
    exec: Exec,
) -> Result<ModelParams> {
    if labeled.is_empty() {
        return Err(Error::EmptySplit);
    }
    Ok(train_baseline(labeled, config, None, exec)?.0)
}

/// Data-independent privacy bound for `queries` noisy-argmax answers:
/// the smaller of naive composition `2γQ` (δ = 0) and Laplace RDP
/// composition converted at `delta`. `delta = 0` gives the naive bound.
pub fn pate_epsilon(gamma: f64, queries: u64, delta: f64) -> Result<DpGuarantee> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!("gamma must be positive and finite, got {gamma}")));
    }
    let naive = DpGuarantee {
        epsilon: 2.0 * gamma * queries as f64,
        delta: 0.0,
        alpha: f64::INFINITY,
    };
    if delta == 0.0 || queries == 0 {
        return Ok(naive);
    }
    let mut ledger = PrivacyLedger::new();
    ledger.record(Mechanism::Laplace { b: 1.0 / gamma }, 2 * queries)?;
    let rdp = accountant::to_dp(ledger.curve(), delta)?;
    Ok(if rdp.epsilon < naive.epsilon { rdp } else { naive })
}

/// Outcome of one full PATE pipeline.
#[derive(Clone, Debug)]
pub struct PateOutcome {
    pub student_accuracy: f64,
    pub label_accuracy: f64,
    pub queries: usize,
    pub guarantee: DpGuarantee,
}

/// A trained teacher ensemble with its votes on the public pool, reusable
/// across noise levels.
pub struct Ensemble {
    pub split: PateSplit,
    pub teachers: Vec<Teacher>,
    pub votes: Vec<VoteHistogram>,
    /// Final accuracy of each teacher on the full test split.
    pub teacher_accuracy: Vec<f64>,
}

impl Ensemble {
    /// Splits `train`, trains the teachers and collects their public votes.
    /// `band` enables periodic teacher evaluation for the accuracy band.
    pub fn train(
        train: &EncodedSet,
        test: &EncodedSet,
        config: &PateConfig,
        band: Option<EvalPlan<'_>>,
        exec: Exec,
    ) -> Result<Self> {
        let split = PateSplit::new(train, config)?;
        let tcfg = TrainConfig {
            seed: config.seed,
            ..config.teacher.clone()
        };
        let teachers = train_teachers(&split.partitions, &tcfg, band, exec)?;
        let votes = vote_histograms(&teachers, &split.public, exec);
        let teacher_accuracy = exec
            .map(&teachers, |t| evaluate(&t.params, test, Exec::Sequential))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Ensemble {
            split,
            teachers,
            votes,
            teacher_accuracy,
        })
    }

    /// Labels the public pool at noise `gamma`, trains a student and
    /// evaluates it on `test`.
    pub fn student(
        &self,
        test: &EncodedSet,
        config: &PateConfig,
        gamma: f64,
        exec: Exec,
    ) -> Result<PateOutcome> {
        let queries = config.queries(self.split.public.len());
        let labeled = label_public(&self.split.public, &self.votes, gamma, queries, config.seed)?;
        let scfg = TrainConfig {
            seed: rng::derive_seed(config.seed, "student", 0),
            ..config.student.clone()
        };
        let student = train_student(&labeled.set, &scfg, exec)?;
        Ok(PateOutcome {
            student_accuracy: evaluate(&student, test, exec)?,
            label_accuracy: labeled.label_accuracy,
            queries: labeled.queries,
            guarantee: pate_epsilon(gamma, labeled.queries as u64, config.delta)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<PatternClass> {
        (0..n)
            .map(|i| PatternClass::from_index(i % NUM_CLASSES).unwrap())
            .collect()
    }

    #[test]
    fn partition_sizes_balance() {
        let p = partition_private(&labels(81), 10, 3).unwrap();
        let mut sizes: Vec<usize> = p.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, [8, 8, 8, 8, 8, 8, 8, 8, 8, 9]);
        let mut all: Vec<usize> = p.concat();
        all.sort_unstable();
        assert_eq!(all, (0..81).collect::<Vec<_>>());
        assert!(matches!(
            partition_private(&labels(5), 10, 3),
            Err(Error::TooFewSamples { needed: 10, available: 5 })
        ));
    }

    #[test]
    fn zero_noise_is_plain_argmax() {
        let v = VoteHistogram::new([10, 0, 0, 0, 0, 0, 0, 0]);
        let mut r = rng::seeded(0);
        assert_eq!(noisy_aggregate(&v, f64::INFINITY, &mut r), PatternClass::MorningStar);
    }

    #[test]
    fn budget_is_enforced() {
        let mut b = QueryBudget::new(1);
        assert!(b.consume().is_ok());
        assert!(matches!(b.consume(), Err(Error::BudgetExceeded { budget: 1 })));
    }

    #[test]
    fn epsilon_bounds() {
        assert_eq!(pate_epsilon(0.3, 1, 0.0).unwrap().epsilon, 0.6);
        assert_eq!(pate_epsilon(0.01, 100, 0.0).unwrap().epsilon, 2.0);
        let naive = pate_epsilon(0.1, 1000, 0.0).unwrap().epsilon;
        assert!((naive - 200.0).abs() < 1e-9);
        assert!(pate_epsilon(0.1, 1000, 1e-5).unwrap().epsilon < naive);
    }

    #[test]
    fn median_of_even_count_averages() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[5.0, 1.0, 3.0]), 3.0);
    }
}
