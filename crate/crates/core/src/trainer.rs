//! Co-training loop for the allocation network and the adversary, and
//! adversary-only searches against fixed policies.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adwords::{
    cr_param_grad, fractional_cr, taped_cr, AdWordsInstance, EnvError, Policy, TapedInstance,
};
use crate::autodiff::{adam_step, evaluate_and_grad, AdamConfig, AdamState, AutodiffError, Tape, Var};
use crate::distributions::{uniform_random, DistributionSpec};
use crate::lp::{offline_optimum, OfflineOptimum};
use crate::networks::{AdvNet, AdvNetConfig, AlgNet};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value at step {step} ({detail}); checkpoint: {checkpoint:?}")]
    NonFinite {
        step: usize,
        detail: String,
        checkpoint: Option<PathBuf>,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl From<crate::lp::LpError> for TrainError {
    fn from(e: crate::lp::LpError) -> Self {
        TrainError::Env(e.into())
    }
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Env(e.into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub t: usize,
    pub t_alg: usize,
    pub t_adv: usize,
    pub t_add: usize,
    pub t_restart: usize,
    pub n_batch: usize,
    pub n_noise: usize,
    pub m: usize,
    pub n: usize,
    pub distribution: Option<DistributionSpec>,
    pub alpha: f64,
    pub seed: u64,
    pub lr_alg: f64,
    pub lr_adv: f64,
    pub with_budgets: bool,
    pub alg_hidden: Vec<usize>,
    pub adv_hidden: Vec<usize>,
    pub checkpoint_every: usize,
    /// Skip adversary updates, appends and restarts (sanity mode).
    pub freeze_adversary: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            t: 25_000,
            t_alg: 4,
            t_adv: 4,
            t_add: 100,
            t_restart: 100,
            n_batch: 100,
            n_noise: 100,
            m: 25,
            n: 5,
            distribution: None,
            alpha: 0.0,
            seed: 0,
            lr_alg: 1e-3,
            lr_adv: 1e-3,
            with_budgets: false,
            alg_hidden: AlgNet::DEFAULT_HIDDEN.to_vec(),
            adv_hidden: vec![256, 256],
            checkpoint_every: 1000,
            freeze_adversary: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let counters = [
            ("t", self.t),
            ("t_alg", self.t_alg),
            ("t_adv", self.t_adv),
            ("t_add", self.t_add),
            ("t_restart", self.t_restart),
            ("n_batch", self.n_batch),
            ("n_noise", self.n_noise),
            ("m", self.m),
            ("n", self.n),
            ("checkpoint_every", self.checkpoint_every),
        ];
        if let Some((name, _)) = counters.iter().find(|(_, v)| *v == 0) {
            return Err(TrainError::Config(format!("{name} must be at least 1")));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(TrainError::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.alpha > 0.0 && self.distribution.is_none() {
            return Err(TrainError::Config("alpha > 0 needs a distribution".into()));
        }
        if self.lr_alg <= 0.0 || self.lr_adv <= 0.0 {
            return Err(TrainError::Config("learning rates must be positive".into()));
        }
        Ok(())
    }

    fn adv_config(&self) -> AdvNetConfig {
        AdvNetConfig {
            m: self.m,
            n: self.n,
            noise_dim: self.n_noise,
            hidden: self.adv_hidden.clone(),
            with_budgets: self.with_budgets,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    /// Outer step at which the instance was added; 0 for the random seeds.
    pub step: usize,
    pub opt: f64,
    pub instance: AdWordsInstance,
}

/// Append-only store of hard instances with cached offline optima.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperienceArray {
    entries: Vec<Experience>,
    seeded: usize,
}

impl ExperienceArray {
    pub fn seeded<R: Rng + ?Sized>(count: usize, m: usize, n: usize, rng: &mut R) -> Result<Self, EnvError> {
        let mut e = ExperienceArray::default();
        for _ in 0..count {
            e.push(0, uniform_random(m, n, rng)?)?;
        }
        e.seeded = count;
        Ok(e)
    }

    pub fn push(&mut self, step: usize, instance: AdWordsInstance) -> Result<(), EnvError> {
        let opt = offline_optimum(&instance)?.value;
        self.entries.push(Experience { step, opt, instance });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of initial random instances.
    pub fn seeded_count(&self) -> usize {
        self.seeded
    }

    pub fn entries(&self) -> &[Experience] {
        &self.entries
    }

    /// Entries appended by the adversary, in order.
    pub fn appended(&self) -> &[Experience] {
        &self.entries[self.seeded..]
    }

    /// Up to `k` distinct entries chosen uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<&Experience> {
        let k = k.min(self.entries.len());
        sample_indices(rng, self.entries.len(), k)
            .into_iter()
            .map(|i| &self.entries[i])
            .collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), TrainError> {
        let mut w = BufWriter::new(File::create(path)?);
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self, TrainError> {
        let mut e = ExperienceArray::default();
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Experience = serde_json::from_str(&line)?;
            if rec.step == 0 {
                e.seeded += 1;
            }
            e.entries.push(rec);
        }
        Ok(e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub worst_batch_cr: f64,
    pub adv_cr: Option<f64>,
    pub appended_cr: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, TrainError> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<Result<Vec<HistoryRow>, _>>()?;
        Ok(TrainHistory { rows })
    }
}

/// Index and CR of the hardest instance (first one on ties), fractional mode.
pub fn select_worst<P: Policy + ?Sized>(policy: &P, instances: &[AdWordsInstance]) -> Result<(usize, f64), EnvError> {
    let batch = instances
        .iter()
        .map(|i| Ok((i, offline_optimum(i)?.value)))
        .collect::<Result<Vec<_>, EnvError>>()?;
    select_worst_with_opt(policy, &batch)
}

fn select_worst_with_opt<P: Policy + ?Sized>(
    policy: &P,
    batch: &[(&AdWordsInstance, f64)],
) -> Result<(usize, f64), EnvError> {
    if batch.is_empty() {
        return Err(EnvError::InvalidInstance("empty batch".into()));
    }
    let mut best = (0, f64::INFINITY);
    for (k, (inst, opt)) in batch.iter().enumerate() {
        let cr = fractional_cr(policy, inst, *opt)?;
        if cr < best.1 {
            best = (k, cr);
        }
    }
    Ok(best)
}

/// One adversary batch: generated instances with their scores.
struct AdvBatch {
    mean: f64,
    grad: Vec<f64>,
    items: Vec<(AdWordsInstance, f64)>,
}

/// Mean of `score` over instances generated from `noises`, differentiated
/// with respect to the adversary weights.
fn adversary_objective<F>(adv: &AdvNet, noises: &[Vec<f64>], mut score: F) -> Result<AdvBatch, EnvError>
where
    F: FnMut(&mut Tape, &AdWordsInstance, &OfflineOptimum, TapedInstance) -> Result<Var, EnvError>,
{
    let mut items = Vec::with_capacity(noises.len());
    let (mean, grad) = evaluate_and_grad(&adv.params, |tape, w| {
        let generated = adv.generate_batch_taped(tape, w, noises)?;
        let mut total = tape.constant(0.0);
        for (bids, budgets) in generated {
            let inst = AdWordsInstance::new(
                adv.config.m,
                adv.config.n,
                tape.value(bids).to_vec(),
                tape.value(budgets).to_vec(),
            )?;
            let opt = offline_optimum(&inst)?;
            let v = score(tape, &inst, &opt, TapedInstance { bids, budgets })?;
            items.push((inst, tape.scalar(v)));
            total = tape.add(total, v);
        }
        Ok::<_, EnvError>(tape.scale(total, 1.0 / noises.len() as f64))
    })?;
    Ok(AdvBatch { mean, grad, items })
}

fn cr_score<'p, P: Policy + ?Sized>(
    policy: &'p P,
) -> impl FnMut(&mut Tape, &AdWordsInstance, &OfflineOptimum, TapedInstance) -> Result<Var, EnvError> + 'p {
    move |tape, inst, opt, vars| taped_cr(tape, policy, inst, opt, vars, None, true)
}

fn noise_batch<R: Rng + ?Sized>(adv: &AdvNet, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..k).map(|_| adv.sample_noise(rng)).collect()
}

pub struct TrainOutcome {
    pub alg: AlgNet,
    pub adv: AdvNet,
    pub experience: ExperienceArray,
    pub history: TrainHistory,
}

/// Full co-training state; [`train`] drives it to completion.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub alg: AlgNet,
    pub adv: AdvNet,
    pub experience: ExperienceArray,
    pub history: TrainHistory,
    alg_opt: AdamState,
    adv_opt: AdamState,
    rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let alg = AlgNet::new(&cfg.alg_hidden, &mut rng);
        let adv = AdvNet::new(cfg.adv_config(), &mut rng);
        let experience = ExperienceArray::seeded(cfg.n_batch, cfg.m, cfg.n, &mut rng)?;
        Ok(Trainer {
            alg_opt: AdamState::new(alg.params.len(), AdamConfig::with_lr(cfg.lr_alg)),
            adv_opt: AdamState::new(adv.params.len(), AdamConfig::with_lr(cfg.lr_adv)),
            alg,
            adv,
            experience,
            history: TrainHistory::default(),
            rng,
            step: 0,
            cfg,
        })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    /// Ascends the CR of the hardest instance in a batch drawn from experience.
    fn alg_update_worst(&mut self) -> Result<f64, TrainError> {
        let batch: Vec<(&AdWordsInstance, f64)> = self
            .experience
            .sample(self.cfg.n_batch, &mut self.rng)
            .into_iter()
            .map(|e| (&e.instance, e.opt))
            .collect();
        let (k, worst) = select_worst_with_opt(&self.alg, &batch)?;
        let (_, grad) = cr_param_grad(&self.alg, batch[k].0, batch[k].1)?;
        adam_step(self.alg.params.values_mut(), &grad, &mut self.alg_opt, true)?;
        Ok(worst)
    }

    /// Ascends the mean CR over a batch from the fixed distribution.
    fn alg_update_distribution(&mut self, dist: &DistributionSpec) -> Result<f64, TrainError> {
        let mut grad = vec![0.0; self.alg.params.len()];
        let mut worst = f64::INFINITY;
        let k = self.cfg.n_batch as f64;
        for _ in 0..self.cfg.n_batch {
            let inst = dist.sample(&mut self.rng)?;
            let opt = offline_optimum(&inst)?.value;
            let (cr, g) = cr_param_grad(&self.alg, &inst, opt)?;
            worst = worst.min(cr);
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b / k);
        }
        adam_step(self.alg.params.values_mut(), &grad, &mut self.alg_opt, true)?;
        Ok(worst)
    }

    fn adv_update(&mut self) -> Result<f64, TrainError> {
        let noises = noise_batch(&self.adv, self.cfg.n_batch, &mut self.rng);
        let batch = adversary_objective(&self.adv, &noises, cr_score(&self.alg))?;
        adam_step(self.adv.params.values_mut(), &batch.grad, &mut self.adv_opt, false)?;
        Ok(batch.mean)
    }

    /// Appends the hardest of fresh adversary outputs and resampled experience.
    fn append_hardest(&mut self) -> Result<f64, TrainError> {
        let mut pool: Vec<(AdWordsInstance, f64)> = Vec::with_capacity(2 * self.cfg.n_batch);
        for _ in 0..self.cfg.n_batch {
            let z = self.adv.sample_noise(&mut self.rng);
            let inst = self.adv.adv_generate(&z)?;
            let opt = offline_optimum(&inst)?.value;
            pool.push((inst, opt));
        }
        for e in self.experience.sample(self.cfg.n_batch, &mut self.rng) {
            pool.push((e.instance.clone(), e.opt));
        }
        let refs: Vec<(&AdWordsInstance, f64)> = pool.iter().map(|(i, o)| (i, *o)).collect();
        let (k, cr) = select_worst_with_opt(&self.alg, &refs)?;
        let (inst, _) = pool.swap_remove(k);
        self.experience.push(self.step, inst)?;
        Ok(cr)
    }

    fn finite_guard(&self, dir: Option<&Path>, detail: &str) -> Result<(), TrainError> {
        if self.alg.params.all_finite() && self.adv.params.all_finite() {
            return Ok(());
        }
        let checkpoint = match dir {
            Some(d) => Some(self.save(d)?),
            None => None,
        };
        Err(TrainError::NonFinite {
            step: self.step,
            detail: detail.into(),
            checkpoint,
        })
    }

    /// Runs one outer iteration.
    pub fn step(&mut self, dir: Option<&Path>) -> Result<&HistoryRow, TrainError> {
        self.step += 1;
        let mut worst = f64::INFINITY;
        for _ in 0..self.cfg.t_alg {
            let use_dist = self.cfg.alpha > 0.0 && self.rng.gen_bool(self.cfg.alpha);
            let res = match (use_dist, self.cfg.distribution.clone()) {
                (true, Some(d)) => self.alg_update_distribution(&d),
                _ => self.alg_update_worst(),
            };
            worst = worst.min(self.wrap_nonfinite(res, dir, "algorithm update")?);
            self.finite_guard(dir, "algorithm parameters")?;
        }
        let mut adv_cr = None;
        let mut appended_cr = None;
        if !self.cfg.freeze_adversary {
            for _ in 0..self.cfg.t_adv {
                let res = self.adv_update();
                adv_cr = Some(self.wrap_nonfinite(res, dir, "adversary update")?);
                self.finite_guard(dir, "adversary parameters")?;
            }
            if self.step % self.cfg.t_add == 0 {
                appended_cr = Some(self.append_hardest()?);
            }
            if self.step % self.cfg.t_restart == 0 {
                self.adv.reinit(&mut self.rng);
                self.adv_opt.reset();
            }
        }
        self.history.rows.push(HistoryRow {
            step: self.step,
            worst_batch_cr: worst,
            adv_cr,
            appended_cr,
        });
        if let Some(d) = dir {
            if self.step % self.cfg.checkpoint_every == 0 {
                self.save(d)?;
            }
        }
        Ok(self.history.rows.last().expect("just pushed"))
    }

    fn wrap_nonfinite(&self, res: Result<f64, TrainError>, dir: Option<&Path>, what: &str) -> Result<f64, TrainError> {
        match res {
            Err(TrainError::Env(EnvError::Autodiff(AutodiffError::NonFinite { node, op }))) => {
                let checkpoint = match dir {
                    Some(d) => Some(self.save(d)?),
                    None => None,
                };
                Err(TrainError::NonFinite {
                    step: self.step,
                    detail: format!("{what}: node {node} ({op})"),
                    checkpoint,
                })
            }
            other => other,
        }
    }

    /// Writes config, both networks, experience and history into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, TrainError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(&self.cfg)?)?;
        fs::write(dir.join("alg.json"), serde_json::to_string(&self.alg)?)?;
        fs::write(dir.join("adv.json"), serde_json::to_string(&self.adv)?)?;
        self.experience.write_jsonl(&dir.join("experience.jsonl"))?;
        self.history.write_csv(&dir.join("history.csv"))?;
        Ok(dir.to_path_buf())
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome {
            alg: self.alg,
            adv: self.adv,
            experience: self.experience,
            history: self.history,
        }
    }
}

/// Runs the co-training loop for `cfg.t` steps, checkpointing into `dir`.
pub fn train(cfg: TrainConfig, dir: Option<&Path>) -> Result<TrainOutcome, TrainError> {
    train_with(cfg, dir, |_| {})
}

/// [`train`] with a per-step callback.
pub fn train_with(
    cfg: TrainConfig,
    dir: Option<&Path>,
    mut on_step: impl FnMut(&HistoryRow),
) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(cfg)?;
    for _ in 0..trainer.cfg.t {
        on_step(trainer.step(dir)?);
    }
    if let Some(d) = dir {
        trainer.save(d)?;
    }
    Ok(trainer.finish())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub steps: usize,
    pub restart_every: usize,
    pub n_batch: usize,
    pub m: usize,
    pub n: usize,
    pub n_noise: usize,
    pub hidden: Vec<usize>,
    pub with_budgets: bool,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            steps: 5000,
            restart_every: 500,
            n_batch: 100,
            m: 25,
            n: 5,
            n_noise: 100,
            hidden: vec![256, 256],
            with_budgets: false,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl SearchConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.steps == 0 || self.restart_every == 0 || self.n_batch == 0 || self.m == 0 || self.n == 0 {
            return Err(TrainError::Config("search counters must be at least 1".into()));
        }
        Ok(())
    }

    fn adv_config(&self) -> AdvNetConfig {
        AdvNetConfig {
            m: self.m,
            n: self.n,
            noise_dim: self.n_noise,
            hidden: self.hidden.clone(),
            with_budgets: self.with_budgets,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    /// Batch mean of the optimised quantity.
    pub batch_mean: f64,
    /// Best single-instance value seen so far.
    pub best: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub instance: AdWordsInstance,
    /// CR for fixed-target search, CR gap for difference search.
    pub value: f64,
    pub trace: Vec<TracePoint>,
}

fn run_search<F>(cfg: &SearchConfig, ascent: bool, mut make_score: F) -> Result<SearchResult, TrainError>
where
    F: FnMut(&mut Tape, &AdWordsInstance, &OfflineOptimum, TapedInstance) -> Result<Var, EnvError>,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adv = AdvNet::new(cfg.adv_config(), &mut rng);
    let mut opt = AdamState::new(adv.params.len(), AdamConfig::with_lr(cfg.lr));
    let better = |a: f64, b: f64| if ascent { a > b } else { a < b };
    let mut best: Option<(AdWordsInstance, f64)> = None;
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let noises = noise_batch(&adv, cfg.n_batch, &mut rng);
        let batch = adversary_objective(&adv, &noises, &mut make_score)?;
        for (inst, v) in batch.items {
            if best.as_ref().map_or(true, |(_, b)| better(v, *b)) {
                best = Some((inst, v));
            }
        }
        adam_step(adv.params.values_mut(), &batch.grad, &mut opt, ascent)?;
        if !adv.params.all_finite() {
            return Err(TrainError::NonFinite {
                step,
                detail: "adversary parameters".into(),
                checkpoint: None,
            });
        }
        trace.push(TracePoint {
            step,
            batch_mean: batch.mean,
            best: best.as_ref().map(|(_, b)| *b).expect("non-empty batch"),
        });
        if step % cfg.restart_every == 0 {
            adv.reinit(&mut rng);
            opt.reset();
        }
    }
    let (instance, value) = best.expect("at least one step");
    Ok(SearchResult { instance, value, trace })
}

/// Trains a fresh adversary to minimise the CR of a fixed `target`,
/// restarting it every `restart_every` steps; keeps the hardest instance seen.
pub fn adv_search_fixed<P: Policy + ?Sized>(target: &P, cfg: &SearchConfig) -> Result<SearchResult, TrainError> {
    run_search(cfg, false, cr_score(target))
}

/// Trains an adversary to maximise `CR(a) − CR(b)`.
pub fn adv_search_diff<A, B>(a: &A, b: &B, cfg: &SearchConfig) -> Result<SearchResult, TrainError>
where
    A: Policy + ?Sized,
    B: Policy + ?Sized,
{
    run_search(cfg, true, |tape, inst, opt, vars| {
        let ca = taped_cr(tape, a, inst, opt, vars, None, true)?;
        let cb = taped_cr(tape, b, inst, opt, vars, None, true)?;
        Ok(tape.sub(ca, cb))
    })
}
