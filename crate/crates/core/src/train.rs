//! Retraining of derived networks from scratch, inference and evaluation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{GradTarget, Graph};
use crate::data::{BatchStream, Image, SourceImage, StreamState};
use crate::error::{Error, Result};
use crate::genotype::{DerivedNet, Genotype};
use crate::losses::{total_loss, LogKernel, LossParts, LossWeights};
use crate::metrics::{evaluate_images, EvalReport};
use crate::optim::{Adam, AdamConfig, AdamState};
use crate::params::{ParamGroup, ParamStore};
use crate::search_space::SupernetConfig;
use crate::tensor::Tensor;

/// Name of the reconstruction tail, the only scale-dependent layer.
pub const TAIL: &str = "upsampler";

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub total_steps: u64,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_halve_every: u64,
    /// HR patch side; `None` picks [`default_hr_patch`] for the scale.
    pub hr_patch: Option<usize>,
    pub augment: bool,
    pub weight_decay: f64,
    pub loss: LossWeights,
    pub seed: u64,
    /// Checkpoint whose body weights initialize the network; loaded by the
    /// caller through [`load_body`].
    pub init_from: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 5000,
            batch_size: 32,
            lr_init: 3e-4,
            lr_halve_every: 1000,
            hr_patch: None,
            augment: true,
            weight_decay: 1e-8,
            loss: LossWeights::retrain(),
            seed: 0,
            init_from: None,
        }
    }
}

/// 128, 192 and 256 for ×2, ×3 and ×4.
pub fn default_hr_patch(scale: usize) -> usize {
    64 * scale
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.total_steps == 0 || self.lr_halve_every == 0 {
            return bad("total_steps and lr_halve_every must be positive".into());
        }
        if self.batch_size == 0 || self.hr_patch == Some(0) {
            return bad("batch size and patch size must be positive".into());
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return bad(format!("lr_init must be positive, got {}", self.lr_init));
        }
        if self.loss.gamma != 0.0 {
            return bad("retraining has no architecture parameters; gamma must be 0".into());
        }
        self.loss.validate()
    }

    pub fn hr_patch_for(&self, scale: usize) -> usize {
        self.hr_patch.unwrap_or_else(|| default_hr_patch(scale))
    }

    /// Learning rate used by 1-based `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let halvings = step.saturating_sub(1) / self.lr_halve_every;
        self.lr_init * libm::pow(0.5, halvings as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: LossParts,
}

/// Everything besides parameter values needed to resume training.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainState {
    pub step: u64,
    pub optimizer: AdamState,
    pub stream: StreamState,
}

/// Copies `source` weights into `store` by name. With `reinit_tail` the
/// tail keeps its fresh initialization; every other parameter must exist in
/// `source` with the same shape. Returns the names copied.
pub fn load_body(store: &mut ParamStore, source: &[(String, Tensor)], reinit_tail: bool) -> Result<Vec<String>> {
    let mut copied = Vec::new();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = String::from(store.name(id));
        if reinit_tail && (name == TAIL || name.starts_with(&format!("{}.", TAIL))) {
            continue;
        }
        let value = source
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::ShapeMismatch(format!("layer {} is missing from the initial weights", name)))?;
        if value.shape() != store.get(id).shape() {
            return Err(Error::ShapeMismatch(format!(
                "layer {}: expected {:?}, initial weights have {:?}",
                name,
                store.get(id).shape(),
                value.shape()
            )));
        }
        *store.get_mut(id) = value.clone();
        copied.push(name);
    }
    Ok(copied)
}

/// Runs `net` on one image, clamping the result to [0, 1].
pub fn super_resolve(net: &DerivedNet, store: &ParamStore, lr: &Image) -> Result<Image> {
    let mut g = Graph::new(store, GradTarget::Nothing);
    let x = g.input(lr.to_tensor());
    let y = net.forward(&mut g, x)?;
    let mut out = Image::from_tensor(g.value(y), 0);
    out.clamp01();
    Ok(out)
}

/// Y-channel metrics of `net` on full HR images, named by the first field.
pub fn evaluate_model(net: &DerivedNet, store: &ParamStore, images: &[(String, Image)]) -> Result<EvalReport> {
    evaluate_images(images, net.config().scale, |lr| super_resolve(net, store, lr))
}

/// Retraining in progress. Drive it with [`TrainSession::advance`].
pub struct TrainSession {
    pub config: TrainConfig,
    pub store: ParamStore,
    pub net: DerivedNet,
    pub optimizer: Adam,
    pub images: Vec<SourceImage>,
    stream: BatchStream,
    kernel: LogKernel,
    step: u64,
}

impl TrainSession {
    pub fn new(genotype: &Genotype, config: TrainConfig, images: Vec<SourceImage>) -> Result<Self> {
        Self::with_network(genotype, &genotype.network_config(), config, images)
    }

    pub fn with_network(
        genotype: &Genotype,
        net_config: &SupernetConfig,
        config: TrainConfig,
        images: Vec<SourceImage>,
    ) -> Result<Self> {
        config.validate()?;
        if images.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        if images.iter().any(|s| s.scale != genotype.scale) {
            return Err(Error::InvalidConfig("dataset scale differs from the genotype scale".into()));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let net = DerivedNet::with_config(genotype, net_config, &mut store, &mut rng)?;
        let optimizer = Adam::new(
            &store,
            ParamGroup::Weights,
            AdamConfig {
                lr: config.lr_init,
                weight_decay: config.weight_decay,
                ..AdamConfig::default()
            },
        );
        let stream = BatchStream::new(
            images.len(),
            config.batch_size,
            config.hr_patch_for(genotype.scale),
            config.augment,
            config.seed.wrapping_add(1),
        )?;
        Ok(Self {
            config,
            store,
            net,
            optimizer,
            images,
            stream,
            kernel: LogKernel::default(),
            step: 0,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.total_steps
    }

    pub fn advance(&mut self) -> Result<TrainRecord> {
        if self.is_finished() {
            return Err(Error::InvalidArgument("training already finished".into()));
        }
        let step = self.step + 1;
        let lr = self.config.lr_at(step);
        let batch = self.stream.next_batch(&self.images)?;
        let (loss, grads) = {
            let mut g = Graph::new(&self.store, GradTarget::Weights);
            let x = g.input(batch.lr);
            let hr = g.input(batch.hr);
            let sr = self.net.forward(&mut g, x)?;
            let (total, parts) = total_loss(
                &mut g,
                sr,
                hr,
                &[],
                self.net.config().channels,
                &self.config.loss,
                &self.kernel,
            )?;
            (parts, g.backward(total))
        };
        if !loss.total.is_finite() || !grads.is_finite() {
            return Err(Error::NonFinite {
                step,
                what: "training loss or gradient".into(),
            });
        }
        self.optimizer.config.lr = lr;
        self.optimizer.step(&mut self.store, &grads);
        self.step = step;
        Ok(TrainRecord { step, lr, loss })
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            step: self.step,
            optimizer: self.optimizer.state().clone(),
            stream: self.stream.state(),
        }
    }

    /// Resumes from `state`; parameter values are restored separately.
    pub fn restore(&mut self, state: TrainState) -> Result<()> {
        self.optimizer
            .restore(state.optimizer)
            .map_err(|e| Error::InvalidArgument(format!("cannot resume training: {}", e)))?;
        self.stream.restore(&state.stream)?;
        self.step = state.step;
        Ok(())
    }

    /// Parameter values by name.
    pub fn params(&self) -> Vec<(String, Tensor)> {
        self.store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect()
    }

    pub fn load_params(&mut self, values: &[(String, Tensor)]) -> Result<()> {
        load_body(&mut self.store, values, false).map(|_| ())
    }
}
