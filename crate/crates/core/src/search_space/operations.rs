//! The nine candidate operations of a mixed layer.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::{ConvGeom, Graph, Var};
use crate::error::{Error, Result};
use crate::params::{fan_in_uniform, ParamGroup, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    /// A single dense k×k convolution.
    Plain,
    /// (depthwise k×k, pointwise 1×1) applied twice.
    Separable,
    /// One depthwise k×k convolution with dilation 2, then pointwise 1×1.
    Dilated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OperationSpec {
    pub name: &'static str,
    pub kernel: usize,
    pub kind: OpKind,
    pub dilation: usize,
}

impl OperationSpec {
    /// Zero padding that keeps H×W unchanged.
    pub fn padding(&self) -> usize {
        self.dilation * (self.kernel - 1) / 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operation {
    Conv1x1,
    Conv3x3,
    Conv5x5,
    Conv7x7,
    SepConv3x3,
    SepConv5x5,
    SepConv7x7,
    DilConv3x3,
    DilConv5x5,
}

pub const NUM_OPERATIONS: usize = 9;

impl Operation {
    /// Registry order; α rows are indexed the same way.
    pub const ALL: [Operation; NUM_OPERATIONS] = [
        Operation::Conv1x1,
        Operation::Conv3x3,
        Operation::Conv5x5,
        Operation::Conv7x7,
        Operation::SepConv3x3,
        Operation::SepConv5x5,
        Operation::SepConv7x7,
        Operation::DilConv3x3,
        Operation::DilConv5x5,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn spec(self) -> OperationSpec {
        use OpKind::*;
        let (name, kernel, kind) = match self {
            Operation::Conv1x1 => ("conv1x1", 1, Plain),
            Operation::Conv3x3 => ("conv3x3", 3, Plain),
            Operation::Conv5x5 => ("conv5x5", 5, Plain),
            Operation::Conv7x7 => ("conv7x7", 7, Plain),
            Operation::SepConv3x3 => ("sepconv3x3", 3, Separable),
            Operation::SepConv5x5 => ("sepconv5x5", 5, Separable),
            Operation::SepConv7x7 => ("sepconv7x7", 7, Separable),
            Operation::DilConv3x3 => ("dilconv3x3", 3, Dilated),
            Operation::DilConv5x5 => ("dilconv5x5", 5, Dilated),
        };
        OperationSpec {
            name,
            kernel,
            kind,
            dilation: if kind == Dilated { 2 } else { 1 },
        }
    }

    pub fn name(self) -> &'static str {
        self.spec().name
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|op| op.name() == name)
            .ok_or_else(|| Error::UnknownOperation(name.into()))
    }
}

impl core::fmt::Display for Operation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for Operation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_name(s)
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for Operation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for Operation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let name = <alloc::borrow::Cow<'de, str>>::deserialize(d)?;
        Operation::from_name(&name).map_err(|_| {
            serde::de::Error::custom(alloc::format!(
                "unknown operation {:?}, expected one of {}",
                name,
                Operation::ALL.map(|o| o.name()).join(", ")
            ))
        })
    }
}

/// One convolution inside a candidate op. No bias.
#[derive(Clone, Debug)]
struct OpConv {
    weight: ParamId,
    geom: ConvGeom,
}

/// A candidate operation with its own weights, mapping C channels to C
/// channels at unchanged spatial size.
#[derive(Clone, Debug)]
pub struct OpLayer {
    op: Operation,
    channels: usize,
    convs: Vec<OpConv>,
}

impl OpLayer {
    pub fn new(
        op: Operation,
        channels: usize,
        prefix: &str,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument("operation needs at least one channel".into()));
        }
        let spec = op.spec();
        let k = spec.kernel;
        let c = channels;
        let mut convs = Vec::new();
        let mut add = |part: &str, shape: [usize; 4], geom: ConvGeom, store: &mut ParamStore| {
            let fan_in = shape[1] * shape[2] * shape[3];
            let w = fan_in_uniform(&shape, fan_in, rng);
            let weight = store.add(format!("{}.{}", prefix, part), ParamGroup::Weights, w);
            convs.push(OpConv { weight, geom });
        };
        let depthwise = ConvGeom {
            stride: 1,
            padding: spec.padding(),
            dilation: spec.dilation,
            groups: c,
        };
        let pointwise = ConvGeom::same(1);
        match spec.kind {
            OpKind::Plain => add("conv", [c, c, k, k], ConvGeom::same(k), store),
            OpKind::Separable => {
                add("dw1", [c, 1, k, k], depthwise, store);
                add("pw1", [c, c, 1, 1], pointwise, store);
                add("dw2", [c, 1, k, k], depthwise, store);
                add("pw2", [c, c, 1, 1], pointwise, store);
            }
            OpKind::Dilated => {
                add("dw", [c, 1, k, k], depthwise, store);
                add("pw", [c, c, 1, 1], pointwise, store);
            }
        }
        Ok(Self { op, channels, convs })
    }

    pub fn operation(&self) -> Operation {
        self.op
    }

    pub fn weight_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.convs.iter().map(|c| c.weight)
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let got = g.value(x).dims4()[1];
        if got != self.channels {
            return Err(Error::ChannelMismatch {
                expected: self.channels,
                got,
            });
        }
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate() {
            // the doubled separable block has a ReLU between its two pairs
            if self.op.spec().kind == OpKind::Separable && i == 2 {
                h = g.relu(h);
            }
            let w = g.param(conv.weight);
            h = g.conv2d(h, w, None, conv.geom);
        }
        Ok(h)
    }
}
