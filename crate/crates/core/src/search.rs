//! Bi-level differentiable search: weight warm-up, then alternating weight
//! and architecture steps with periodic genotype snapshots.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{GradTarget, Gradients, Graph, Var};
use crate::data::{split_dataset, Batch, BatchStream, SourceImage, StreamState};
use crate::error::{Error, Result};
use crate::genotype::{extract_genotype, Genotype};
use crate::losses::{total_loss, LogKernel, LossParts, LossWeights};
use crate::optim::{Adam, AdamConfig, AdamState};
use crate::params::{ParamGroup, ParamStore};
use crate::search_space::{Supernet, SupernetConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SearchConfig {
    /// Total iterations, warm-up included.
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub hr_patch: usize,
    pub train_fraction: f64,
    pub augment: bool,
    pub lr_theta: f64,
    pub lr_arch: f64,
    pub betas_theta: (f64, f64),
    pub betas_arch: (f64, f64),
    pub weight_decay: f64,
    /// Steps after which a genotype is extracted; empty means 25%, 50% and
    /// 75% of `total_steps`.
    pub snapshot_steps: Vec<u64>,
    pub loss: LossWeights,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            total_steps: 2000,
            warmup_steps: 200,
            batch_size: 64,
            hr_patch: 64,
            train_fraction: 0.8,
            augment: true,
            lr_theta: 3e-4,
            lr_arch: 3e-4,
            betas_theta: (0.9, 0.999),
            betas_arch: (0.5, 0.999),
            weight_decay: 1e-8,
            snapshot_steps: Vec::new(),
            loss: LossWeights::default(),
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn resolved_snapshots(&self) -> Vec<u64> {
        if self.snapshot_steps.is_empty() {
            [1, 2, 3].iter().map(|q| self.total_steps * q / 4).collect()
        } else {
            let mut s = self.snapshot_steps.clone();
            s.sort_unstable();
            s.dedup();
            s
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        if self.warmup_steps >= self.total_steps {
            return bad(format!(
                "warm-up ({}) must be shorter than the run ({})",
                self.warmup_steps, self.total_steps
            ));
        }
        if self.batch_size == 0 || self.hr_patch == 0 {
            return bad("batch size and patch size must be positive".into());
        }
        for (name, v) in [("lr_theta", self.lr_theta), ("lr_arch", self.lr_arch)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{} must be positive, got {}", name, v));
            }
        }
        for s in self.resolved_snapshots() {
            if s <= self.warmup_steps || s > self.total_steps {
                return bad(format!(
                    "snapshot step {} is outside ({}, {}]",
                    s, self.warmup_steps, self.total_steps
                ));
            }
        }
        self.loss.validate()
    }

    fn adam(&self, lr: f64, betas: (f64, f64)) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Shannon entropy (nats) of `softmax(row)` for each row.
pub fn snapshot_entropy(alpha: &[[f64; crate::search_space::NUM_OPERATIONS]]) -> Vec<f64> {
    alpha
        .iter()
        .map(|row| {
            crate::autograd::softmax(row)
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -p * libm::log(p))
                .sum()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Snapshot {
    pub step: u64,
    pub genotype: Genotype,
}

/// What happened in one iteration.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepRecord {
    pub step: u64,
    pub warmup: bool,
    /// Training loss before the weight update.
    pub train: LossParts,
    /// Validation loss before the architecture update; absent in warm-up.
    pub valid: Option<LossParts>,
    pub entropy_mean: f64,
    pub entropy_min: f64,
    pub entropy_max: f64,
    pub snapshot: Option<Genotype>,
}

/// Everything besides parameter values needed to resume a search.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SearchState {
    pub step: u64,
    pub theta_optimizer: AdamState,
    pub arch_optimizer: AdamState,
    pub train_stream: StreamState,
    pub valid_stream: StreamState,
    pub snapshots: Vec<Snapshot>,
}

/// Seeds of the independent random streams derived from one run seed.
fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
}

/// Loss of `net` on `batch` within graph `g`.
fn batch_loss(
    g: &mut Graph<'_>,
    net: &Supernet,
    batch: &Batch,
    weights: &LossWeights,
    kernel: &LogKernel,
) -> Result<(Var, LossParts)> {
    let lr = g.input(batch.lr.clone());
    let hr = g.input(batch.hr.clone());
    let sr = net.forward(g, lr)?;
    let alpha: Vec<Var> = net.alpha.iter().map(|&id| g.param(id)).collect();
    total_loss(g, sr, hr, &alpha, net.config().channels, weights, kernel)
}

fn check_finite(step: u64, what: &str, parts: &LossParts, grads: &Gradients) -> Result<()> {
    if !parts.total.is_finite() {
        return Err(Error::NonFinite {
            step,
            what: format!("{} loss", what),
        });
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            step,
            what: format!("{} gradient", what),
        });
    }
    Ok(())
}

/// One θ update on `batch`: gradient of the full loss with respect to the
/// weights only.
pub fn theta_step(
    store: &mut ParamStore,
    net: &Supernet,
    batch: &Batch,
    weights: &LossWeights,
    kernel: &LogKernel,
    opt: &mut Adam,
    step: u64,
) -> Result<LossParts> {
    let (parts, grads) = {
        let mut g = Graph::new(store, GradTarget::Weights);
        let (loss, parts) = batch_loss(&mut g, net, batch, weights, kernel)?;
        (parts, g.backward(loss))
    };
    check_finite(step, "training", &parts, &grads)?;
    opt.step(store, &grads);
    Ok(parts)
}

/// Gradient of `L_tr + λ·L_val` with respect to α and β, from one graph.
pub fn arch_gradient(
    store: &ParamStore,
    net: &Supernet,
    train: &Batch,
    valid: &Batch,
    weights: &LossWeights,
    kernel: &LogKernel,
) -> Result<(Gradients, LossParts, LossParts)> {
    let mut g = Graph::new(store, GradTarget::Architecture);
    let (lt, pt) = batch_loss(&mut g, net, train, weights, kernel)?;
    let (lv, pv) = batch_loss(&mut g, net, valid, weights, kernel)?;
    let scaled = g.mul_scalar(lv, weights.lambda_val);
    let mixed = g.add(lt, scaled);
    Ok((g.backward(mixed), pt, pv))
}

/// One architecture update on the mixed-level gradient.
#[allow(clippy::too_many_arguments)]
pub fn arch_step(
    store: &mut ParamStore,
    net: &Supernet,
    train: &Batch,
    valid: &Batch,
    weights: &LossWeights,
    kernel: &LogKernel,
    opt: &mut Adam,
    step: u64,
) -> Result<LossParts> {
    let (grads, _, pv) = arch_gradient(store, net, train, valid, weights, kernel)?;
    check_finite(step, "architecture", &pv, &grads)?;
    opt.step(store, &grads);
    Ok(pv)
}

/// A search in progress. Drive it with [`SearchSession::advance`].
pub struct SearchSession {
    pub config: SearchConfig,
    pub store: ParamStore,
    pub net: Supernet,
    pub theta_opt: Adam,
    pub arch_opt: Adam,
    pub train: Vec<SourceImage>,
    pub valid: Vec<SourceImage>,
    train_stream: BatchStream,
    valid_stream: BatchStream,
    kernel: LogKernel,
    step: u64,
    snapshots: Vec<Snapshot>,
}

impl SearchSession {
    /// Splits `images` into train and validation sets and initializes the
    /// super-network with zero architecture logits.
    pub fn new(config: SearchConfig, net_config: &SupernetConfig, images: Vec<SourceImage>) -> Result<Self> {
        config.validate()?;
        net_config.validate()?;
        if images.iter().any(|s| s.scale != net_config.scale) {
            return Err(Error::InvalidConfig("dataset scale differs from the network scale".into()));
        }
        let (ti, vi) = split_dataset(images.len(), config.train_fraction, sub_seed(config.seed, 1))?;
        let pick = |idx: &[usize]| idx.iter().map(|&i| images[i].clone()).collect::<Vec<_>>();
        let (train, valid) = (pick(&ti), pick(&vi));
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, 0));
        let net = Supernet::new(net_config, &mut store, &mut rng)?;
        let theta_opt = Adam::new(&store, ParamGroup::Weights, config.adam(config.lr_theta, config.betas_theta));
        let arch_opt = Adam::new(&store, ParamGroup::Architecture, config.adam(config.lr_arch, config.betas_arch));
        let train_stream = BatchStream::new(
            train.len(),
            config.batch_size,
            config.hr_patch,
            config.augment,
            sub_seed(config.seed, 2),
        )?;
        let valid_stream = BatchStream::new(
            valid.len(),
            config.batch_size,
            config.hr_patch,
            config.augment,
            sub_seed(config.seed, 3),
        )?;
        Ok(Self {
            config,
            store,
            net,
            theta_opt,
            arch_opt,
            train,
            valid,
            train_stream,
            valid_stream,
            kernel: LogKernel::default(),
            step: 0,
            snapshots: Vec::new(),
        })
    }

    /// Iterations completed so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.total_steps
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn genotype(&self) -> Result<Genotype> {
        extract_genotype(&self.net.arch_params(&self.store), self.net.config())
    }

    /// Runs the next iteration: a θ step, then (after warm-up) an
    /// architecture step on the same training batch and a fresh validation
    /// batch.
    pub fn advance(&mut self) -> Result<StepRecord> {
        if self.is_finished() {
            return Err(Error::InvalidArgument("search already finished".into()));
        }
        let step = self.step + 1;
        let warmup = step <= self.config.warmup_steps;
        let weights = self.config.loss;
        let batch = self.train_stream.next_batch(&self.train)?;
        let train = theta_step(
            &mut self.store,
            &self.net,
            &batch,
            &weights,
            &self.kernel,
            &mut self.theta_opt,
            step,
        )?;
        let valid = if warmup {
            None
        } else {
            let vbatch = self.valid_stream.next_batch(&self.valid)?;
            Some(arch_step(
                &mut self.store,
                &self.net,
                &batch,
                &vbatch,
                &weights,
                &self.kernel,
                &mut self.arch_opt,
                step,
            )?)
        };
        self.step = step;
        let arch = self.net.arch_params(&self.store);
        let entropy = snapshot_entropy(&arch.alpha);
        let snapshot = if self.config.resolved_snapshots().contains(&step) {
            let genotype = extract_genotype(&arch, self.net.config())?;
            self.snapshots.push(Snapshot {
                step,
                genotype: genotype.clone(),
            });
            Some(genotype)
        } else {
            None
        };
        Ok(StepRecord {
            step,
            warmup,
            train,
            valid,
            entropy_mean: entropy.iter().sum::<f64>() / entropy.len() as f64,
            entropy_min: entropy.iter().cloned().fold(f64::INFINITY, f64::min),
            entropy_max: entropy.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            snapshot,
        })
    }

    pub fn state(&self) -> SearchState {
        SearchState {
            step: self.step,
            theta_optimizer: self.theta_opt.state().clone(),
            arch_optimizer: self.arch_opt.state().clone(),
            train_stream: self.train_stream.state(),
            valid_stream: self.valid_stream.state(),
            snapshots: self.snapshots.clone(),
        }
    }

    /// Resumes from `state`; parameter values must be restored into
    /// `self.store` separately.
    pub fn restore(&mut self, state: SearchState) -> Result<()> {
        let invalid = |e: &str| Error::InvalidArgument(format!("cannot resume search: {}", e));
        self.theta_opt.restore(state.theta_optimizer).map_err(invalid)?;
        self.arch_opt.restore(state.arch_optimizer).map_err(invalid)?;
        self.train_stream.restore(&state.train_stream)?;
        self.valid_stream.restore(&state.valid_stream)?;
        self.step = state.step;
        self.snapshots = state.snapshots;
        Ok(())
    }

    /// Overwrites parameter values by name.
    pub fn load_params(&mut self, values: &[(alloc::string::String, Tensor)]) -> Result<()> {
        for (name, value) in values {
            let id = self
                .store
                .find(name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {}", name)))?;
            if self.store.get(id).shape() != value.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "{}: expected {:?}, got {:?}",
                    name,
                    self.store.get(id).shape(),
                    value.shape()
                )));
            }
            *self.store.get_mut(id) = value.clone();
        }
        Ok(())
    }
}

/// Runs a complete search, calling `on_step` after every iteration.
pub fn run_search(
    config: SearchConfig,
    net_config: &SupernetConfig,
    images: Vec<SourceImage>,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<SearchSession> {
    let mut session = SearchSession::new(config, net_config, images)?;
    while !session.is_finished() {
        let record = session.advance()?;
        on_step(&record);
    }
    Ok(session)
}
