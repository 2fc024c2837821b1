//! Meta-training of the preference network: first-order MAML, Reptile, and
//! the pooled-SGD baseline.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Algo;
use crate::error::{Error, Result};
use crate::net::{axpy, batch_loss, gradient, sgd_steps, FeatureVector, LabeledSample, ModelParams, FEATURE_DIM};
use crate::oracle::UserProfile;
use crate::scalar::{c, Scalar};
use crate::seed;
use crate::world::Situation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    pub algo: Algo,
    /// Inner (per-user) learning rate.
    pub inner_lr: f64,
    pub meta_lr: f64,
    pub inner_steps: usize,
    pub epochs: usize,
    /// Users per meta-batch.
    pub batch_size: usize,
    pub support_size: usize,
    pub query_size: usize,
    /// Gradient evaluations per baseline epoch; `None` matches one MAML epoch.
    pub baseline_steps_per_epoch: Option<usize>,
    pub layer_dims: Vec<usize>,
    /// Decay the meta step size (and the baseline step size) linearly to zero.
    pub anneal: bool,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self::for_algo(Algo::Maml)
    }
}

impl MetaConfig {
    pub fn for_algo(algo: Algo) -> Self {
        Self {
            algo,
            inner_lr: DEFAULT_INNER_LR,
            meta_lr: match algo {
                Algo::Reptile => 0.5,
                _ => 0.1,
            },
            inner_steps: 3,
            epochs: 500,
            batch_size: 10,
            support_size: 10,
            query_size: 10,
            baseline_steps_per_epoch: None,
            layer_dims: crate::net::DEFAULT_LAYERS.to_vec(),
            anneal: true,
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.inner_lr >= 0.0 && self.inner_lr.is_finite()) {
            return bad("inner_lr must be a non-negative number");
        }
        if !(self.meta_lr >= 0.0 && self.meta_lr.is_finite()) {
            return bad("meta_lr must be a non-negative number");
        }
        if self.inner_steps == 0 || self.batch_size == 0 {
            return bad("inner_steps and batch_size must be at least 1");
        }
        if self.support_size == 0 || self.query_size == 0 {
            return bad("support_size and query_size must be at least 1");
        }
        if self.layer_dims.first() != Some(&FEATURE_DIM) || self.layer_dims.last() != Some(&4) {
            return bad("layer_dims must start at 10 and end at 4");
        }
        Ok(())
    }

    /// Configuration in effect for `epoch`, with annealed step sizes.
    pub fn at_epoch(&self, epoch: usize) -> Self {
        let mut cfg = self.clone();
        if self.anneal && self.epochs > 0 {
            let frac = 1.0 - epoch as f64 / self.epochs as f64;
            match self.algo {
                Algo::Baseline => cfg.inner_lr *= frac,
                _ => cfg.meta_lr *= frac,
            }
        }
        cfg
    }

    /// Gradient evaluations per epoch of the configured algorithm.
    pub fn gradient_budget_per_epoch(&self) -> usize {
        match self.algo {
            Algo::Maml => self.batch_size * (self.inner_steps + 1),
            Algo::Reptile => self.batch_size * self.inner_steps,
            Algo::Baseline => self
                .baseline_steps_per_epoch
                .unwrap_or(self.batch_size * (self.inner_steps + 1)),
        }
    }
}

/// Inner learning rate shared by meta-training, few-shot evaluation and the
/// online runtime.
pub const DEFAULT_INNER_LR: f64 = 0.5;

/// One user's samples split into disjoint support and query sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Task<T> {
    pub user_id: u64,
    pub support: Vec<LabeledSample<T>>,
    pub query: Vec<LabeledSample<T>>,
}

impl<T: Scalar> Task<T> {
    pub fn all_samples(&self) -> Vec<LabeledSample<T>> {
        self.support.iter().chain(&self.query).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskBatch<T> {
    pub tasks: Vec<Task<T>>,
}

/// Random input in a random situation, labeled with the user's target for it.
pub fn random_sample<T: Scalar>(user: &UserProfile<T>, rng: &mut impl Rng) -> LabeledSample<T> {
    let situation = Situation::ALL[rng.gen_range(0..4)];
    let mut f = [T::zero(); FEATURE_DIM];
    for v in &mut f[..4] {
        *v = c(rng.gen::<f64>());
    }
    f[4 + situation.index()] = T::one();
    // Scaled distances: at or below 0.5 means within the threshold.
    let near = |flag: bool, rng: &mut dyn rand::RngCore| -> f64 {
        let u: f64 = rng.gen();
        if flag {
            0.5 * u
        } else {
            1.0 - 0.5 * u * (1.0 - f64::EPSILON)
        }
    };
    f[8] = c(near(situation.near_obstacle(), rng));
    f[9] = c(near(situation.near_target(), rng));
    LabeledSample { input: FeatureVector(f), label: *user.target(situation) }
}

pub fn make_task_dataset<T: Scalar>(user: &UserProfile<T>, m: usize, seed: u64) -> Vec<LabeledSample<T>> {
    let mut rng = seed::rng(seed, &[0x7a5c, user.id]);
    (0..m).map(|_| random_sample(user, &mut rng)).collect()
}

pub fn make_task<T: Scalar>(user: &UserProfile<T>, support_size: usize, query_size: usize, seed: u64) -> Task<T> {
    let mut samples = make_task_dataset(user, support_size + query_size, seed);
    let query = samples.split_off(support_size);
    Task { user_id: user.id, support: samples, query }
}

/// `batch_size` users drawn with replacement, each with a fresh task.
pub fn sample_batch<T: Scalar>(users: &[UserProfile<T>], cfg: &MetaConfig, epoch: u64) -> TaskBatch<T> {
    let mut rng = seed::rng(cfg.seed, &[0xba7c, epoch]);
    let tasks = (0..cfg.batch_size)
        .map(|slot| {
            let user = &users[rng.gen_range(0..users.len())];
            make_task(user, cfg.support_size, cfg.query_size, seed::derive(cfg.seed, &[epoch, slot as u64]))
        })
        .collect();
    TaskBatch { tasks }
}

/// `k` full-batch SGD steps on the support set.
pub fn inner_adapt<T: Scalar>(params: &ModelParams<T>, support: &[LabeledSample<T>], lr: f64, k: usize) -> Result<ModelParams<T>> {
    sgd_steps(params, support, c(lr), k)
}

/// First-order MAML: query gradients at the adapted parameters, averaged and
/// applied to the shared initialization.
pub fn maml_epoch<T: Scalar>(params: &ModelParams<T>, batch: &TaskBatch<T>, cfg: &MetaConfig) -> Result<ModelParams<T>> {
    if batch.tasks.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let grads: Vec<Vec<T>> = batch
        .tasks
        .par_iter()
        .map(|task| {
            let adapted = inner_adapt(params, &task.support, cfg.inner_lr, cfg.inner_steps)?;
            gradient(&adapted, &task.query)
        })
        .collect::<Result<_>>()?;
    let mut next = params.clone();
    axpy(&mut next.theta, -c::<T>(cfg.meta_lr), &mean_in_order(&grads));
    Ok(next)
}

/// Reptile: move the initialization toward the mean of per-user adapted
/// parameters. Written as an interpolation so that β=1 lands exactly on the
/// adapted mean and β=0 leaves θ untouched.
pub fn reptile_epoch<T: Scalar>(params: &ModelParams<T>, batch: &TaskBatch<T>, cfg: &MetaConfig) -> Result<ModelParams<T>> {
    if batch.tasks.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let adapted: Vec<Vec<T>> = batch
        .tasks
        .par_iter()
        .map(|task| Ok(inner_adapt(params, &task.all_samples(), cfg.inner_lr, cfg.inner_steps)?.theta))
        .collect::<Result<_>>()?;
    let target = mean_in_order(&adapted);
    let beta: T = c(cfg.meta_lr);
    let keep = T::one() - beta;
    let mut next = params.clone();
    for (p, a) in next.theta.iter_mut().zip(&target) {
        *p = keep * *p + beta * *a;
    }
    Ok(next)
}

/// Element-wise mean, summed in slice order so results are bit-reproducible.
fn mean_in_order<T: Scalar>(vs: &[Vec<T>]) -> Vec<T> {
    let mut acc = vs[0].clone();
    for v in &vs[1..] {
        axpy(&mut acc, T::one(), v);
    }
    let n: T = c(vs.len() as f64);
    acc.iter_mut().for_each(|a| *a = *a / n);
    acc
}

/// A minibatch of `size` samples, each from a uniformly drawn user.
pub fn pooled_minibatch<T: Scalar>(users: &[UserProfile<T>], size: usize, rng: &mut impl Rng) -> Vec<LabeledSample<T>> {
    (0..size)
        .map(|_| {
            let user = &users[rng.gen_range(0..users.len())];
            random_sample(user, rng)
        })
        .collect()
}

/// One epoch of pooled SGD without any meta mechanism.
pub fn baseline_epoch<T: Scalar>(params: &ModelParams<T>, users: &[UserProfile<T>], cfg: &MetaConfig, epoch: u64) -> Result<ModelParams<T>> {
    if users.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut rng = seed::rng(cfg.seed, &[0xba5e, epoch]);
    let mut cur = params.clone();
    for _ in 0..cfg.gradient_budget_per_epoch() {
        let batch = pooled_minibatch(users, cfg.support_size, &mut rng);
        cur = crate::net::sgd_step(&cur, &batch, c(cfg.inner_lr))?;
    }
    Ok(cur)
}

pub fn train_baseline<T: Scalar>(params: &ModelParams<T>, users: &[UserProfile<T>], cfg: &MetaConfig) -> Result<ModelParams<T>> {
    let mut cur = params.clone();
    for epoch in 0..cfg.epochs {
        cur = baseline_epoch(&cur, users, cfg, epoch as u64)?;
    }
    Ok(cur)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_support_loss: f64,
    pub mean_query_loss_pre: f64,
    pub mean_query_loss_post: f64,
}

/// Losses on a task batch at `params`: support, query before adaptation, query after.
pub fn batch_stats<T: Scalar>(params: &ModelParams<T>, batch: &TaskBatch<T>, cfg: &MetaConfig) -> Result<(f64, f64, f64)> {
    let rows: Vec<(f64, f64, f64)> = batch
        .tasks
        .par_iter()
        .map(|task| {
            let support = batch_loss(params, &task.support)?.as_f64();
            let pre = batch_loss(params, &task.query)?.as_f64();
            let adapted = inner_adapt(params, &task.support, cfg.inner_lr, cfg.inner_steps)?;
            let post = batch_loss(&adapted, &task.query)?.as_f64();
            Ok((support, pre, post))
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let sum = rows.iter().fold((0.0, 0.0, 0.0), |a, r| (a.0 + r.0, a.1 + r.1, a.2 + r.2));
    Ok((sum.0 / n, sum.1 / n, sum.2 / n))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub log: Vec<EpochLog>,
}

/// Run `cfg.epochs` epochs of the configured algorithm from `init`.
pub fn train<T: Scalar>(init: &ModelParams<T>, users: &[UserProfile<T>], cfg: &MetaConfig) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if users.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut params = init.clone();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batch = sample_batch(users, cfg, epoch as u64);
        let (s, pre, post) = batch_stats(&params, &batch, cfg)?;
        log.push(EpochLog { epoch, mean_support_loss: s, mean_query_loss_pre: pre, mean_query_loss_post: post });
        let step_cfg = cfg.at_epoch(epoch);
        params = match cfg.algo {
            Algo::Maml => maml_epoch(&params, &batch, &step_cfg)?,
            Algo::Reptile => reptile_epoch(&params, &batch, &step_cfg)?,
            Algo::Baseline => baseline_epoch(&params, users, &step_cfg, epoch as u64)?,
        };
    }
    Ok(TrainOutcome { params, log })
}

pub fn write_training_log(log: &[EpochLog], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in log {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FewShotConfig {
    pub steps: usize,
    pub lr: f64,
    pub support_size: usize,
    pub query_size: usize,
    pub seed: u64,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        Self { steps: 2, lr: DEFAULT_INNER_LR, support_size: 10, query_size: 10, seed: 1 }
    }
}

/// Per-user query loss after `steps` SGD steps on that user's support set.
pub fn few_shot_losses<T: Scalar>(params: &ModelParams<T>, users: &[UserProfile<T>], cfg: &FewShotConfig) -> Result<Vec<f64>> {
    users
        .par_iter()
        .map(|u| {
            let task = make_task(u, cfg.support_size, cfg.query_size, cfg.seed);
            let adapted = inner_adapt(params, &task.support, cfg.lr, cfg.steps)?;
            Ok(batch_loss(&adapted, &task.query)?.as_f64())
        })
        .collect()
}

pub fn few_shot_loss<T: Scalar>(params: &ModelParams<T>, users: &[UserProfile<T>], cfg: &FewShotConfig) -> Result<f64> {
    if users.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let losses = few_shot_losses(params, users, cfg)?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}
