//! The experiment commands. Each reads its inputs from and writes its
//! artifacts to one output directory, and never touches anything else.
//!
//! Layout of the output directory:
//!
//! ```text
//! config.toml                 configuration echo (with hash comment)
//! data/{train.csv,test.csv,meta}
//! baseline_curve.csv          seed, epoch, loss, test accuracy
//! baseline_seed<k>.ckpt
//! dpsgd_table.csv             one row per (C, σ)
//! curves/dpsgd_C<c>_sigma<s>_seed<k>.{csv,txt}
//! pate_table.csv              one row per (b, N_t)
//! teacher_band_N<k>.csv       seed, epoch, min, median, max
//! epsilon_table.csv, report.txt   written by `report`
//! ```

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::table::{
    epsilon_rows, read_rows, render_dpsgd, render_pate, summarize, write_rows, DpSgdRow, PateRow,
};
use crate::accountant::{self, DpGuarantee};
use crate::dpsgd::{self, DpSgdConfig, TrainingRunRecord};
use crate::error::{Error, Result};
use crate::gaf::{encode_set_with, EncodedSet};
use crate::market::{self, Dataset, LabeledWindow};
use crate::nn::checkpoint::{write_checkpoint, Checkpoint};
use crate::nn::train::{train_baseline, EvalPlan, TrainHistory};
use crate::nn::TrainConfig;
use crate::par::Exec;
use crate::pate::{self, median, teacher_band, Ensemble, PateConfig};
use crate::rng;

/// Seed of the `k`-th run of every sweep cell. Cells share run seeds, so the
/// k-th DP-SGD run starts from the same weights as the k-th baseline run.
pub fn run_seed(master: u64, k: usize) -> u64 {
    rng::derive_seed(master, "run", k as u64)
}

pub fn run_seeds(config: &ExperimentConfig) -> Vec<u64> {
    (0..config.seeds_per_cell)
        .map(|k| run_seed(config.seed, k))
        .collect()
}

pub fn dataset_seed(master: u64) -> u64 {
    rng::derive_seed(master, "dataset", 0)
}

/// Configuration plus where to write.
#[derive(Clone, Debug)]
pub struct Context {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub exec: Exec,
}

impl Context {
    pub fn new(config: ExperimentConfig, out: impl Into<PathBuf>) -> Self {
        Context {
            config,
            out: out.into(),
            exec: Exec::default(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn prepare(&self) -> Result<()> {
        self.config.validate()?;
        fs::create_dir_all(&self.out)?;
        let echo = format!(
            "# config hash {}\n{}",
            self.config.hash(),
            self.config.to_toml()
        );
        fs::write(self.path("config.toml"), echo)?;
        Ok(())
    }
}

fn csv_dataset(path: &Path, config: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    let bars = market::load_ohlc_csv(path)?;
    let windows = market::extract_windows(&bars, config.generator.window_len, 1)?;
    let labeled = market::label_windows(windows);
    if labeled.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            available: labeled.len(),
        });
    }
    let labels: Vec<_> = labeled.iter().map(|l| l.label).collect();
    let test_n = ((config.dataset.test_fraction * labeled.len() as f64).round() as usize)
        .clamp(1, labeled.len() - 1);
    let test_idx = pate::stratified_indices(&labels, test_n, seed);
    let mut is_test = vec![false; labeled.len()];
    test_idx.iter().for_each(|&i| is_test[i] = true);
    let (test, train): (Vec<(usize, LabeledWindow)>, Vec<_>) =
        labeled.into_iter().enumerate().partition(|(i, _)| is_test[*i]);
    Ok(Dataset {
        train: train.into_iter().map(|(_, w)| w).collect(),
        test: test.into_iter().map(|(_, w)| w).collect(),
        seed,
        generator: config.generator.clone(),
    })
}

/// Generates (or ingests) the dataset and writes the archive to `data/`.
pub fn cmd_gen_data(ctx: &Context) -> Result<Dataset> {
    ctx.prepare()?;
    let cfg = &ctx.config;
    let seed = dataset_seed(cfg.seed);
    let dataset = match &cfg.dataset.csv {
        Some(path) => csv_dataset(path, cfg, seed)?,
        None => market::generate::build_dataset_with(
            cfg.dataset.per_class_train,
            cfg.dataset.per_class_test,
            seed,
            &cfg.generator,
            ctx.exec,
        )?,
    };
    market::write_archive(ctx.path("data"), &dataset)?;
    Ok(dataset)
}

/// Encoded train and test splits.
#[derive(Clone, Debug)]
pub struct EncodedData {
    pub train: EncodedSet,
    pub test: EncodedSet,
}

impl EncodedData {
    pub fn encode(dataset: &Dataset, config: &ExperimentConfig, exec: Exec) -> Result<Self> {
        let mode = config.dataset.normalization;
        Ok(EncodedData {
            train: encode_set_with(&dataset.train, mode, exec)?,
            test: encode_set_with(&dataset.test, mode, exec)?,
        })
    }
}

/// Reads the archive written by `gen-data` and encodes it.
pub fn load_data(ctx: &Context) -> Result<EncodedData> {
    let dir = ctx.path("data");
    if !dir.join("meta").exists() {
        return Err(Error::Format(format!(
            "no dataset archive in {}; run gen-data first",
            dir.display()
        )));
    }
    EncodedData::encode(&market::read_archive(dir)?, &ctx.config, ctx.exec)
}

#[derive(Clone, Debug)]
pub struct BaselineRun {
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub history: TrainHistory,
}

/// Trains the baseline once per run seed; writes `baseline_curve.csv` and a
/// checkpoint per seed.
pub fn cmd_train_baseline(ctx: &Context) -> Result<Vec<BaselineRun>> {
    ctx.prepare()?;
    let data = load_data(ctx)?;
    let seeds = run_seeds(&ctx.config);
    let results = ctx.exec.map(&seeds, |&seed| -> Result<_> {
        let cfg = TrainConfig {
            seed,
            ..ctx.config.model.clone()
        };
        let eval = EvalPlan {
            set: &data.test,
            every: 1,
        };
        train_baseline(&data.train, &cfg, Some(eval), Exec::Sequential)
    });
    let mut runs = Vec::new();
    let mut w = csv::Writer::from_path(ctx.path("baseline_curve.csv"))?;
    w.write_record(["seed_index", "seed", "epoch", "mean_loss", "test_accuracy"])?;
    for (k, (seed, r)) in seeds.iter().zip(results).enumerate() {
        let (params, history) = r?;
        for e in &history.epochs {
            w.write_record([
                k.to_string(),
                seed.to_string(),
                e.epoch.to_string(),
                e.mean_loss.to_string(),
                e.accuracy.map(|a| a.to_string()).unwrap_or_default(),
            ])?;
        }
        let ckpt = Checkpoint {
            params,
            seed: *seed,
            steps: history.step_losses.len() as u64,
        };
        write_checkpoint(ctx.path(&format!("baseline_seed{k}.ckpt")), &ckpt)?;
        runs.push(BaselineRun {
            seed: *seed,
            accuracy: history.epochs.last().and_then(|e| e.accuracy),
            history,
        });
    }
    w.flush()?;
    Ok(runs)
}

/// DP-SGD configuration of one sweep run.
pub fn dpsgd_config(config: &ExperimentConfig, clip: f64, sigma: f64, seed: u64) -> DpSgdConfig {
    let s = &config.dpsgd;
    DpSgdConfig {
        group_size: s.group_size,
        noise_multiplier: sigma,
        clip_bound: clip,
        learning_rate: s.learning_rate,
        epochs: s.epochs,
        steps: None,
        delta: s.delta,
        seed,
        eval_every: s.eval_every,
    }
}

fn curve_stem(clip: f64, sigma: f64, k: usize) -> String {
    format!("dpsgd_C{clip}_sigma{sigma}_seed{k}")
}

/// Runs every (C, σ) cell for every run seed; writes `dpsgd_table.csv` and
/// one curve CSV plus config sidecar per run under `curves/`.
pub fn cmd_train_dpsgd(ctx: &Context) -> Result<Vec<DpSgdRow>> {
    ctx.prepare()?;
    let data = load_data(ctx)?;
    let cfg = &ctx.config;
    let seeds = run_seeds(cfg);
    let mut jobs = Vec::new();
    for &c in &cfg.dpsgd.clip_bounds {
        for &s in &cfg.dpsgd.noise_multipliers {
            for k in 0..seeds.len() {
                jobs.push((c, s, k));
            }
        }
    }
    let results = ctx.exec.map(&jobs, |&(c, s, k)| -> Result<TrainingRunRecord> {
        let run = dpsgd_config(cfg, c, s, seeds[k]);
        let (_, record) = dpsgd::dp_sgd_train(&data.train, Some(&data.test), &run, Exec::Sequential)
            .map_err(|e| Error::ConfigInvalid(format!("dpsgd cell (C={c}, sigma={s}): {e}")))?;
        Ok(record)
    });
    let curves = ctx.path("curves");
    fs::create_dir_all(&curves)?;
    let mut records = Vec::new();
    for (&(c, s, k), r) in jobs.iter().zip(results) {
        let record = r?;
        let stem = curve_stem(c, s, k);
        dpsgd::write_run_csv(curves.join(format!("{stem}.csv")), &record)?;
        dpsgd::write_sidecar(
            curves.join(format!("{stem}.txt")),
            &dpsgd_config(cfg, c, s, seeds[k]),
            data.train.len(),
            &record,
        )?;
        records.push(((c, s), record));
    }
    let hash = cfg.hash();
    let seed_list = seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
    let mut rows = Vec::new();
    for &c in &cfg.dpsgd.clip_bounds {
        for &s in &cfg.dpsgd.noise_multipliers {
            let cell: Vec<&TrainingRunRecord> = records
                .iter()
                .filter(|(key, _)| *key == (c, s))
                .map(|(_, r)| r)
                .collect();
            let accs: Vec<f64> = cell.iter().map(|r| r.final_accuracy.unwrap_or(f64::NAN)).collect();
            let (mean, min, max) = summarize(&accs);
            let g = cell[0].guarantee;
            rows.push(DpSgdRow {
                clip_bound: c,
                noise_multiplier: s,
                seeds: accs.len(),
                accuracy_mean: mean,
                accuracy_min: min,
                accuracy_max: max,
                steps: cell[0].step_count,
                epsilon: g.epsilon,
                delta: g.delta,
                alpha: g.alpha,
                private: g.is_private(),
                run_seeds: seed_list.clone(),
                config_hash: hash.clone(),
            });
        }
    }
    write_rows(ctx.path("dpsgd_table.csv"), &rows)?;
    Ok(rows)
}

/// PATE configuration of one sweep run.
pub fn pate_config(config: &ExperimentConfig, teachers: usize, scale: f64, seed: u64) -> PateConfig {
    let p = &config.pate;
    PateConfig {
        teacher_count: teachers,
        gamma: 1.0 / scale,
        query_budget: p.query_budget,
        public_fraction: p.public_fraction,
        teacher: config.model.clone(),
        student: config.model.clone(),
        delta: p.delta,
        seed,
    }
}

struct PateCell {
    band: Vec<pate::BandRow>,
    teacher_median: f64,
    outcomes: Vec<pate::PateOutcome>,
}

/// Trains each teacher ensemble once per (N_t, seed) and a student per
/// Laplace scale; writes `pate_table.csv` and `teacher_band_N<k>.csv`.
pub fn cmd_train_pate(ctx: &Context) -> Result<Vec<PateRow>> {
    ctx.prepare()?;
    let data = load_data(ctx)?;
    let cfg = &ctx.config;
    let p = &cfg.pate;
    let seeds = run_seeds(cfg);
    let band_idx = pate::stratified_indices(
        data.test.labels(),
        p.teacher_eval_samples,
        rng::derive_seed(cfg.seed, "band-subset", 0),
    );
    let band_set = data.test.subset(&band_idx);
    let mut jobs = Vec::new();
    for &n in &p.teacher_counts {
        for k in 0..seeds.len() {
            jobs.push((n, k));
        }
    }
    let results = ctx.exec.map(&jobs, |&(n, k)| -> Result<PateCell> {
        let base = pate_config(cfg, n, p.laplace_scales[0], seeds[k]);
        let plan = EvalPlan {
            set: &band_set,
            every: p.teacher_eval_every,
        };
        let ens = Ensemble::train(&data.train, &data.test, &base, Some(plan), Exec::Sequential)?;
        let outcomes = p
            .laplace_scales
            .iter()
            .map(|&b| ens.student(&data.test, &base, 1.0 / b, Exec::Sequential))
            .collect::<Result<Vec<_>>>()?;
        Ok(PateCell {
            band: teacher_band(&ens.teachers),
            teacher_median: median(&ens.teacher_accuracy),
            outcomes,
        })
    });
    let cells = results.into_iter().collect::<Result<Vec<_>>>()?;

    for &n in &p.teacher_counts {
        let mut w = csv::Writer::from_path(ctx.path(&format!("teacher_band_N{n}.csv")))?;
        w.write_record(["seed_index", "epoch", "min", "median", "max"])?;
        for (&(jn, k), cell) in jobs.iter().zip(&cells) {
            if jn != n {
                continue;
            }
            for r in &cell.band {
                w.write_record([
                    k.to_string(),
                    r.epoch.to_string(),
                    r.min.to_string(),
                    r.median.to_string(),
                    r.max.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }

    let hash = cfg.hash();
    let seed_list = seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
    let mut rows = Vec::new();
    for (bi, &b) in p.laplace_scales.iter().enumerate() {
        for &n in &p.teacher_counts {
            let cell: Vec<&PateCell> = jobs
                .iter()
                .zip(&cells)
                .filter(|((jn, _), _)| *jn == n)
                .map(|(_, c)| c)
                .collect();
            let accs: Vec<f64> = cell.iter().map(|c| c.outcomes[bi].student_accuracy).collect();
            let labels: Vec<f64> = cell.iter().map(|c| c.outcomes[bi].label_accuracy).collect();
            let medians: Vec<f64> = cell.iter().map(|c| c.teacher_median).collect();
            let (mean, min, max) = summarize(&accs);
            let first = &cell[0].outcomes[bi];
            rows.push(PateRow {
                laplace_scale: b,
                teacher_count: n,
                seeds: accs.len(),
                accuracy_mean: mean,
                accuracy_min: min,
                accuracy_max: max,
                label_accuracy_mean: summarize(&labels).0,
                teacher_median_accuracy: summarize(&medians).0,
                queries: first.queries,
                epsilon: first.guarantee.epsilon,
                delta: first.guarantee.delta,
                alpha: first.guarantee.alpha,
                run_seeds: seed_list.clone(),
                config_hash: hash.clone(),
            });
        }
    }
    write_rows(ctx.path("pate_table.csv"), &rows)?;
    Ok(rows)
}

/// Arguments of the `account` command.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AccountQuery {
    /// `steps` DP-SGD steps at sampling rate `q` and noise multiplier `sigma`.
    Gaussian {
        q: f64,
        sigma: f64,
        steps: u64,
        delta: f64,
    },
    /// `queries` PATE answers at inverse Laplace scale `gamma`.
    Pate { gamma: f64, queries: u64, delta: f64 },
}

pub fn cmd_account(query: AccountQuery) -> Result<DpGuarantee> {
    match query {
        AccountQuery::Gaussian {
            q,
            sigma,
            steps,
            delta,
        } => accountant::dpsgd_guarantee(q, sigma, steps, delta),
        AccountQuery::Pate {
            gamma,
            queries,
            delta,
        } => {
            if queries == 0 {
                return Err(Error::Domain("query count must be at least 1".into()));
            }
            pate::pate_epsilon(gamma, queries, delta)
        }
    }
}

fn baseline_summary(path: &Path) -> Result<Option<String>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut finals: Vec<(usize, f64)> = Vec::new();
    let mut r = csv::Reader::from_path(path)?;
    for rec in r.records() {
        let rec = rec?;
        let k: usize = rec[0].parse().map_err(|_| Error::Format("bad seed index".into()))?;
        if let Ok(acc) = rec[4].parse::<f64>() {
            match finals.iter_mut().find(|(s, _)| *s == k) {
                Some(slot) => slot.1 = acc,
                None => finals.push((k, acc)),
            }
        }
    }
    if finals.is_empty() {
        return Ok(None);
    }
    let accs: Vec<f64> = finals.iter().map(|f| f.1).collect();
    let (mean, min, max) = summarize(&accs);
    Ok(Some(format!(
        "Baseline test accuracy over {} seeds: mean {:.2}%, range [{:.2}%, {:.2}%]\n",
        accs.len(),
        100.0 * mean,
        100.0 * min,
        100.0 * max
    )))
}

/// Renders every table found in `out` to `report.txt` and writes
/// `epsilon_table.csv`. Returns the report text.
pub fn cmd_report(out: &Path) -> Result<String> {
    let dp_path = out.join("dpsgd_table.csv");
    let pate_path = out.join("pate_table.csv");
    let dp: Vec<DpSgdRow> = if dp_path.exists() { read_rows(&dp_path)? } else { Vec::new() };
    let pt: Vec<PateRow> = if pate_path.exists() { read_rows(&pate_path)? } else { Vec::new() };
    let baseline = baseline_summary(&out.join("baseline_curve.csv"))?;
    if dp.is_empty() && pt.is_empty() && baseline.is_none() {
        return Err(Error::Format(format!(
            "no results tables in {}; run a training command first",
            out.display()
        )));
    }
    let mut text = String::new();
    if let Some(b) = baseline {
        text.push_str(&b);
        text.push('\n');
    }
    if !dp.is_empty() {
        text.push_str("DP-SGD test accuracy by noise multiplier and clip bound\n");
        text.push_str(&render_dpsgd(&dp));
        text.push_str(&format!(
            "delta = {}, config {}\n\n",
            dp[0].delta, dp[0].config_hash
        ));
    }
    if !pt.is_empty() {
        text.push_str("PATE student test accuracy by Laplace scale and teacher count\n");
        text.push_str(&render_pate(&pt));
        text.push_str(&format!(
            "queries = {}, delta = {}, config {}\n",
            pt[0].queries, pt[0].delta, pt[0].config_hash
        ));
        text.push_str("median final teacher accuracy:");
        let mut seen = Vec::new();
        for r in &pt {
            if !seen.contains(&r.teacher_count) {
                seen.push(r.teacher_count);
                text.push_str(&format!(
                    " N = {}: {:.2}%;",
                    r.teacher_count,
                    100.0 * r.teacher_median_accuracy
                ));
            }
        }
        text.push('\n');
    }
    write_rows(out.join("epsilon_table.csv"), &epsilon_rows(&dp, &pt))?;
    let mut f = fs::File::create(out.join("report.txt"))?;
    f.write_all(text.as_bytes())?;
    Ok(text)
}
