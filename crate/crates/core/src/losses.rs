//! Distortion, high-frequency and complexity losses.

use alloc::format;
use alloc::vec::Vec;

use crate::autograd::{ConvGeom, Graph, Var};
use crate::complexity::op_params;
use crate::error::{Error, Result};
use crate::search_space::{Operation, NUM_OPERATIONS};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LossWeights {
    /// Weight of the validation term in the architecture gradient.
    pub lambda_val: f64,
    /// Weight of the HFEN term.
    pub mu: f64,
    /// Weight of the parameter regularizer.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_val: 1.0,
            mu: 0.2,
            gamma: 0.2,
        }
    }
}

impl LossWeights {
    /// Retraining weights: no regularizer.
    pub fn retrain() -> Self {
        Self {
            gamma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda_val), ("mu", self.mu), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("loss weight {} must be finite and >= 0, got {}", name, v)));
            }
        }
        Ok(())
    }
}

/// Zero-sum Laplacian-of-Gaussian filter.
#[derive(Clone, Debug, PartialEq)]
pub struct LogKernel {
    pub size: usize,
    pub sigma: f64,
    /// Row-major `size × size` taps.
    pub weights: Vec<f64>,
}

impl Default for LogKernel {
    fn default() -> Self {
        Self::new(15, 1.5).expect("default kernel is valid")
    }
}

impl LogKernel {
    /// Gaussian normalized to unit sum, multiplied by `(r² − 2σ²)/σ⁴`, then
    /// shifted to zero mean.
    pub fn new(size: usize, sigma: f64) -> Result<Self> {
        if size % 2 == 0 || !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "LoG kernel needs an odd size and positive sigma, got {} and {}",
                size, sigma
            )));
        }
        let half = (size / 2) as f64;
        let s2 = sigma * sigma;
        let r2: Vec<f64> = (0..size * size)
            .map(|i| {
                let y = (i / size) as f64 - half;
                let x = (i % size) as f64 - half;
                x * x + y * y
            })
            .collect();
        let gauss: Vec<f64> = r2.iter().map(|r| libm::exp(-r / (2.0 * s2))).collect();
        let peak = gauss.iter().cloned().fold(0.0, f64::max);
        let gauss: Vec<f64> = gauss.iter().map(|&g| if g < f64::EPSILON * peak { 0.0 } else { g }).collect();
        let total: f64 = gauss.iter().sum();
        let log: Vec<f64> = gauss.iter().zip(&r2).map(|(g, r)| g / total * (r - 2.0 * s2) / (s2 * s2)).collect();
        let mean = log.iter().sum::<f64>() / log.len() as f64;
        Ok(Self {
            size,
            sigma,
            weights: log.iter().map(|v| v - mean).collect(),
        })
    }

    /// The kernel repeated for a depthwise convolution over `channels`.
    pub fn depthwise(&self, channels: usize) -> Tensor {
        let mut data = Vec::with_capacity(channels * self.weights.len());
        for _ in 0..channels {
            data.extend_from_slice(&self.weights);
        }
        Tensor::from_vec(&[channels, 1, self.size, self.size], data)
    }
}

fn same_shape(g: &Graph<'_>, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (g.value(a).shape(), g.value(b).shape());
    if sa != sb {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", sa, sb)));
    }
    Ok(())
}

/// Mean absolute error over all elements.
pub fn l1_loss(g: &mut Graph<'_>, sr: Var, hr: Var) -> Result<Var> {
    same_shape(g, sr, hr)?;
    Ok(g.mean_abs_diff(sr, hr))
}

/// Applies the LoG filter to each channel with reflection padding.
pub fn log_filter(g: &mut Graph<'_>, x: Var, kernel: &LogKernel) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 4 {
        return Err(Error::ShapeMismatch(format!("expected an N×C×H×W batch, got {:?}", shape)));
    }
    if shape[2] < kernel.size || shape[3] < kernel.size {
        return Err(Error::TooSmall(format!(
            "image {}x{} is smaller than the {}x{} LoG kernel",
            shape[2], shape[3], kernel.size, kernel.size
        )));
    }
    let c = shape[1];
    let padded = g.reflect_pad(x, kernel.size / 2);
    let w = g.input(kernel.depthwise(c));
    let geom = ConvGeom {
        stride: 1,
        padding: 0,
        dilation: 1,
        groups: c,
    };
    Ok(g.conv2d(padded, w, None, geom))
}

/// Mean absolute difference of the LoG responses.
pub fn hfen_loss(g: &mut Graph<'_>, sr: Var, hr: Var, kernel: &LogKernel) -> Result<Var> {
    same_shape(g, sr, hr)?;
    let fs = log_filter(g, sr, kernel)?;
    let fh = log_filter(g, hr, kernel)?;
    Ok(g.mean_abs_diff(fs, fh))
}

/// `p_o / Σ_c p_c` for each candidate op at width `channels`.
pub fn op_param_fractions(channels: usize) -> [f64; NUM_OPERATIONS] {
    let p = Operation::ALL.map(|op| op_params(&op.spec(), channels) as f64);
    let total: f64 = p.iter().sum();
    p.map(|v| v / total)
}

/// Σ over mixed layers of Σ_o fraction_o · softmax(α_l)_o.
pub fn param_regularizer(g: &mut Graph<'_>, alpha: &[Var], channels: usize) -> Result<Var> {
    let fractions = op_param_fractions(channels).to_vec();
    let mut total: Option<Var> = None;
    for &row in alpha {
        let len = g.value(row).len();
        if len != NUM_OPERATIONS {
            return Err(Error::LengthMismatch {
                what: "alpha row",
                expected: NUM_OPERATIONS,
                got: len,
            });
        }
        let w = g.softmax(row);
        let term = g.dot_const(w, fractions.clone());
        total = Some(match total {
            Some(t) => g.add(t, term),
            None => term,
        });
    }
    Ok(match total {
        Some(t) => t,
        None => g.input(Tensor::scalar(0.0)),
    })
}

/// Plain evaluation of the regularizer.
pub fn param_regularizer_value(alpha: &[[f64; NUM_OPERATIONS]], channels: usize) -> f64 {
    let fractions = op_param_fractions(channels);
    alpha
        .iter()
        .map(|row| crate::autograd::softmax(row).iter().zip(&fractions).map(|(w, f)| w * f).sum::<f64>())
        .sum()
}

/// Component values of one loss evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossParts {
    pub l1: f64,
    pub hfen: f64,
    pub param: f64,
    pub total: f64,
}

/// `l1 + mu·hfen + gamma·L_P`. The regularizer is skipped when `gamma` is 0
/// or `alpha` is empty, and HFEN when `mu` is 0.
pub fn total_loss(
    g: &mut Graph<'_>,
    sr: Var,
    hr: Var,
    alpha: &[Var],
    channels: usize,
    weights: &LossWeights,
    kernel: &LogKernel,
) -> Result<(Var, LossParts)> {
    let mut parts = LossParts::default();
    let l1 = l1_loss(g, sr, hr)?;
    parts.l1 = g.value(l1).item();
    let mut total = l1;
    if weights.mu != 0.0 {
        let h = hfen_loss(g, sr, hr, kernel)?;
        parts.hfen = g.value(h).item();
        let scaled = g.mul_scalar(h, weights.mu);
        total = g.add(total, scaled);
    }
    if weights.gamma != 0.0 && !alpha.is_empty() {
        let p = param_regularizer(g, alpha, channels)?;
        parts.param = g.value(p).item();
        let scaled = g.mul_scalar(p, weights.gamma);
        total = g.add(total, scaled);
    }
    parts.total = g.value(total).item();
    Ok((total, parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::GradTarget;
    use crate::params::ParamStore;

    #[test]
    fn log_kernel_sums_to_zero_and_is_symmetric() {
        let k = LogKernel::default();
        assert_eq!(k.weights.len(), 225);
        assert!(k.weights.iter().sum::<f64>().abs() < 1e-12);
        let centre = k.weights[7 * 15 + 7];
        assert!(centre < 0.0);
        for i in 0..15 {
            for j in 0..15 {
                assert_eq!(k.weights[i * 15 + j], k.weights[j * 15 + i]);
                assert_eq!(k.weights[i * 15 + j], k.weights[(14 - i) * 15 + j]);
            }
        }
        assert!(LogKernel::new(4, 1.0).is_err());
    }

    #[test]
    fn regularizer_bounds_at_fifty_channels() {
        let f = op_param_fractions(50);
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((param_regularizer_value(&[[0.0; 9]], 50) - 1.0 / 9.0).abs() < 1e-12);
        let mut row = [-1000.0; 9];
        row[Operation::Conv7x7.index()] = 1000.0;
        assert!((param_regularizer_value(&[row], 50) - 122_500.0 / 240_000.0).abs() < 1e-12);
    }

    #[test]
    fn l1_of_constant_offset() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, GradTarget::Nothing);
        let hr = g.input(Tensor::full(&[1, 3, 4, 4], 0.2));
        let sr = g.input(Tensor::full(&[1, 3, 4, 4], 0.7));
        let l = l1_loss(&mut g, sr, hr).unwrap();
        assert!((g.value(l).item() - 0.5).abs() < 1e-12);
        let small = g.input(Tensor::full(&[1, 3, 4, 3], 0.0));
        assert!(l1_loss(&mut g, sr, small).is_err());
        assert!(matches!(hfen_loss(&mut g, sr, hr, &LogKernel::default()), Err(Error::TooSmall(_))));
    }
}
