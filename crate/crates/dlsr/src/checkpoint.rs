//! Binary checkpoints: magic, format version, a JSON header and the raw
//! tensor payload as little-endian f64.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use dlsr_core::genotype::Genotype;
use dlsr_core::optim::AdamState;
use dlsr_core::params::ParamStore;
use dlsr_core::search::{SearchConfig, SearchSession, SearchState};
use dlsr_core::search_space::{ArchParams, SupernetConfig};
use dlsr_core::tensor::Tensor;
use dlsr_core::train::{TrainConfig, TrainSession, TrainState};
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 8] = b"DLSRCKPT";
pub const FORMAT_VERSION: u32 = 1;

const PARAM: &str = "param/";
const FIRST: &str = "m1/";
const SECOND: &str = "m2/";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Search,
    Train,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResume {
    pub config: SearchConfig,
    /// Optimizer moments are stored in the payload, not here.
    pub state: SearchState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainResume {
    pub config: TrainConfig,
    pub state: TrainState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub kind: CheckpointKind,
    pub network: SupernetConfig,
    /// The trained genotype; absent for search checkpoints.
    pub genotype: Option<Genotype>,
    pub search: Option<SearchResume>,
    pub train: Option<TrainResume>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub tensors: Vec<Tensor>,
}

fn take_moments(state: &mut AdamState, tag: &str, names: &mut Vec<TensorEntry>, out: &mut Vec<Tensor>) {
    for (prefix, moments) in [(FIRST, &mut state.first_moment), (SECOND, &mut state.second_moment)] {
        for (i, t) in std::mem::take(moments).into_iter().enumerate() {
            names.push(TensorEntry {
                name: format!("{}{}/{}", prefix, tag, i),
                shape: t.shape().to_vec(),
            });
            out.push(t);
        }
    }
}

fn store_params(store: &ParamStore, names: &mut Vec<TensorEntry>, out: &mut Vec<Tensor>) {
    for (_, p) in store.iter() {
        names.push(TensorEntry {
            name: format!("{}{}", PARAM, p.name),
            shape: p.value.shape().to_vec(),
        });
        out.push(p.value.clone());
    }
}

impl Checkpoint {
    pub fn from_search(session: &SearchSession) -> Self {
        let (mut names, mut tensors) = (Vec::new(), Vec::new());
        store_params(&session.store, &mut names, &mut tensors);
        let mut state = session.state();
        take_moments(&mut state.theta_optimizer, "theta", &mut names, &mut tensors);
        take_moments(&mut state.arch_optimizer, "arch", &mut names, &mut tensors);
        Self {
            header: Header {
                kind: CheckpointKind::Search,
                network: session.net.config().clone(),
                genotype: None,
                search: Some(SearchResume {
                    config: session.config.clone(),
                    state,
                }),
                train: None,
                tensors: names,
            },
            tensors,
        }
    }

    pub fn from_train(session: &TrainSession) -> Self {
        let (mut names, mut tensors) = (Vec::new(), Vec::new());
        store_params(&session.store, &mut names, &mut tensors);
        let mut state = session.state();
        take_moments(&mut state.optimizer, "theta", &mut names, &mut tensors);
        Self {
            header: Header {
                kind: CheckpointKind::Train,
                network: session.net.config().clone(),
                genotype: Some(session.net.genotype.clone()),
                search: None,
                train: Some(TrainResume {
                    config: session.config.clone(),
                    state,
                }),
                tensors: names,
            },
            tensors,
        }
    }

    fn prefixed(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.header
            .tensors
            .iter()
            .zip(&self.tensors)
            .filter_map(|(e, t)| e.name.strip_prefix(prefix).map(|n| (n.to_string(), t.clone())))
            .collect()
    }

    /// Parameter values by name.
    pub fn params(&self) -> Vec<(String, Tensor)> {
        self.prefixed(PARAM)
    }

    fn moments(&self, tag: &str, state: &mut AdamState) {
        let collect = |prefix: &str| {
            self.prefixed(&format!("{}{}/", prefix, tag))
                .into_iter()
                .map(|(_, t)| t)
                .collect()
        };
        state.first_moment = collect(FIRST);
        state.second_moment = collect(SECOND);
    }

    /// Search resume data with optimizer moments restored.
    pub fn search_resume(&self) -> Result<SearchResume> {
        let mut resume = self.header.search.clone().context("not a search checkpoint")?;
        self.moments("theta", &mut resume.state.theta_optimizer);
        self.moments("arch", &mut resume.state.arch_optimizer);
        Ok(resume)
    }

    pub fn train_resume(&self) -> Result<TrainResume> {
        let mut resume = self.header.train.clone().context("not a training checkpoint")?;
        self.moments("theta", &mut resume.state.optimizer);
        Ok(resume)
    }

    /// Architecture logits of a search checkpoint.
    pub fn arch_params(&self) -> Result<ArchParams> {
        let params = self.params();
        let get = |name: String| {
            params
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t.data().to_vec())
                .with_context(|| format!("checkpoint has no {}", name))
        };
        let cfg = &self.header.network;
        let mut arch = ArchParams::zeros(cfg.num_cells);
        for (l, row) in arch.alpha.iter_mut().enumerate() {
            let values = get(format!("arch.alpha.{}", l))?;
            ensure!(values.len() == row.len(), "arch.alpha.{} has {} entries", l, values.len());
            row.copy_from_slice(&values);
        }
        for (j, row) in arch.beta.iter_mut().enumerate() {
            *row = get(format!("arch.beta.{}", j))?;
        }
        arch.validate(cfg.num_cells)?;
        Ok(arch)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(24 + header.len() + 8 * self.tensors.iter().map(Tensor::len).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).context("truncated checkpoint")?;
        ensure!(&magic == MAGIC, "not a checkpoint file");
        let mut word = [0u8; 4];
        r.read_exact(&mut word).context("truncated checkpoint")?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            bail!("checkpoint format version {} is not supported (expected {})", version, FORMAT_VERSION);
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).context("truncated checkpoint")?;
        let len = usize::try_from(u64::from_le_bytes(len))?;
        ensure!(r.len() >= len, "truncated checkpoint header");
        let header: Header = serde_json::from_slice(&r[..len]).context("corrupt checkpoint header")?;
        r = &r[len..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            ensure!(r.len() >= 8 * n, "truncated tensor {}", entry.name);
            let data = r[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Tensor::from_vec(&entry.shape, data));
            r = &r[8 * n..];
        }
        ensure!(r.is_empty(), "{} trailing bytes after the tensor payload", r.len());
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).with_context(|| format!("cannot create {}", tmp.display()))?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path).with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("cannot read checkpoint {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("in {}", path.display()))
    }
}

/// Restores a search session from a checkpoint taken with the same
/// configuration and data.
pub fn resume_search(session: &mut SearchSession, ckpt: &Checkpoint) -> Result<()> {
    let resume = ckpt.search_resume()?;
    ensure!(
        resume.config == session.config && ckpt.header.network == *session.net.config(),
        "checkpoint was written by a different search configuration"
    );
    session.load_params(&ckpt.params())?;
    session.restore(resume.state)?;
    Ok(())
}

/// Restores a training session; the genotype must match.
pub fn resume_train(session: &mut TrainSession, ckpt: &Checkpoint) -> Result<()> {
    let resume = ckpt.train_resume()?;
    ensure!(
        ckpt.header.genotype.as_ref() == Some(&session.net.genotype),
        "checkpoint genotype differs from the genotype being trained"
    );
    ensure!(
        resume.config == session.config,
        "checkpoint was written by a different training configuration"
    );
    session.load_params(&ckpt.params())?;
    session.restore(resume.state)?;
    Ok(())
}
