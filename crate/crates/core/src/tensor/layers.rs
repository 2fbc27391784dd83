use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::{shape_err, Result, Tensor, TensorError};
use crate::scalar::Scalar;

/// Geometry of a valid (unpadded) 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        in_h: usize,
        in_w: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            in_h,
            in_w,
            kernel,
            stride,
        }
    }

    /// `floor((in − kernel)/stride) + 1`
    pub fn out_h(&self) -> usize {
        (self.in_h - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w - self.kernel) / self.stride + 1
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel,
            self.kernel,
        ]
    }

    pub fn is_valid(&self) -> bool {
        self.kernel > 0 && self.stride > 0 && self.in_h >= self.kernel && self.in_w >= self.kernel
    }
}

/// One layer of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerSpec {
    FullyConnected {
        inputs: usize,
        outputs: usize,
    },
    /// 3×3-style valid convolution with stride 2 on `[N, C, H, W]` input.
    Conv2dValidStride2 {
        in_channels: usize,
        out_channels: usize,
        in_h: usize,
        in_w: usize,
        kernel: usize,
    },
    ReLU,
    Tanh,
    Flatten,
    Concat,
}

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// `U(−√(6/fan_in), √(6/fan_in))`, for layers feeding a ReLU.
    KaimingUniform,
    /// `U(−√(6/(fan_in+fan_out)), …)`, for Tanh and linear outputs.
    XavierUniform,
}

impl Init {
    pub fn bound(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            Init::KaimingUniform => (6.0 / fan_in as f64).sqrt(),
            Init::XavierUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        }
    }

    /// Variance of the uniform distribution the scheme draws from.
    pub fn variance(self, fan_in: usize, fan_out: usize) -> f64 {
        let b = self.bound(fan_in, fan_out);
        b * b / 3.0
    }
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, in_h: usize, in_w: usize) -> Self {
        LayerSpec::Conv2dValidStride2 {
            in_channels,
            out_channels,
            in_h,
            in_w,
            kernel: 3,
        }
    }

    pub fn geometry(&self) -> Option<ConvGeometry> {
        match *self {
            LayerSpec::Conv2dValidStride2 {
                in_channels,
                out_channels,
                in_h,
                in_w,
                kernel,
            } => Some(ConvGeometry::new(
                in_channels,
                out_channels,
                in_h,
                in_w,
                kernel,
                2,
            )),
            _ => None,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerSpec::FullyConnected { .. } | LayerSpec::Conv2dValidStride2 { .. }
        )
    }

    /// Shapes of `(weight, bias)` for parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match self {
            LayerSpec::FullyConnected { inputs, outputs } => {
                Some((vec![*inputs, *outputs], vec![*outputs]))
            }
            LayerSpec::Conv2dValidStride2 { .. } => {
                let g = self.geometry().unwrap();
                Some((g.weight_shape().to_vec(), vec![g.out_channels]))
            }
            _ => None,
        }
    }

    fn fans(&self) -> (usize, usize) {
        match self {
            LayerSpec::FullyConnected { inputs, outputs } => (*inputs, *outputs),
            LayerSpec::Conv2dValidStride2 { .. } => {
                let g = self.geometry().unwrap();
                let kk = g.kernel * g.kernel;
                (g.in_channels * kk, g.out_channels * kk)
            }
            _ => (0, 0),
        }
    }

    /// Output shape for a given input shape (batch axis included).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            LayerSpec::FullyConnected { inputs, outputs } => {
                if input.len() != 2 || input[1] != *inputs {
                    return Err(shape_err(
                        "FullyConnected",
                        format!("[N,{inputs}]"),
                        format!("{input:?}"),
                    ));
                }
                Ok(vec![input[0], *outputs])
            }
            LayerSpec::Conv2dValidStride2 { .. } => {
                let g = self.geometry().unwrap();
                if !g.is_valid() {
                    return Err(shape_err(
                        "Conv2dValidStride2",
                        "input at least kernel sized",
                        format!("{g:?}"),
                    ));
                }
                if input.len() != 4 || input[1..] != [g.in_channels, g.in_h, g.in_w] {
                    return Err(shape_err(
                        "Conv2dValidStride2",
                        format!("[N,{},{},{}]", g.in_channels, g.in_h, g.in_w),
                        format!("{input:?}"),
                    ));
                }
                Ok(vec![input[0], g.out_channels, g.out_h(), g.out_w()])
            }
            LayerSpec::ReLU | LayerSpec::Tanh | LayerSpec::Concat => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input[0], input[1..].iter().product()]),
        }
    }

    /// Applies the layer. `weights` holds the bound `(weight, bias)` nodes of
    /// parameterized layers; `Concat` joins all `inputs` column-wise.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        weights: Option<(Var, Var)>,
        inputs: &[Var],
    ) -> Result<Var> {
        let x = *inputs
            .first()
            .ok_or_else(|| TensorError::Usage("layer applied to no inputs".into()))?;
        match self {
            LayerSpec::Concat => g.concat_cols(inputs),
            _ if inputs.len() != 1 => Err(TensorError::Usage(format!("{self:?} takes one input"))),
            LayerSpec::FullyConnected { .. } => {
                self.output_shape(g.value(x).shape())?;
                let (w, b) = weights
                    .ok_or_else(|| TensorError::Usage("FullyConnected without weights".into()))?;
                let y = g.matmul(x, w)?;
                g.add_row_bias(y, b)
            }
            LayerSpec::Conv2dValidStride2 { .. } => {
                self.output_shape(g.value(x).shape())?;
                let (w, b) = weights
                    .ok_or_else(|| TensorError::Usage("convolution without weights".into()))?;
                g.conv2d(x, w, b, self.geometry().unwrap())
            }
            LayerSpec::ReLU => Ok(g.relu(x)),
            LayerSpec::Tanh => Ok(g.tanh(x)),
            LayerSpec::Flatten => g.flatten(x),
        }
    }
}

/// How a network's parameters enter a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binding {
    Trainable,
    Frozen,
}

/// A sequential stack of layers whose parameters live under `prefix` in a
/// [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub prefix: String,
    pub layers: Vec<LayerSpec>,
}

impl Network {
    pub fn new(prefix: impl Into<String>, layers: Vec<LayerSpec>) -> Self {
        Self {
            prefix: prefix.into(),
            layers,
        }
    }

    /// Fully connected stack `sizes[0] → … → sizes[n]` with ReLU between
    /// layers and `output` after the last one.
    pub fn mlp(prefix: impl Into<String>, sizes: &[usize], output: Option<LayerSpec>) -> Self {
        let mut layers = Vec::new();
        for (i, w) in sizes.windows(2).enumerate() {
            layers.push(LayerSpec::FullyConnected {
                inputs: w[0],
                outputs: w[1],
            });
            if i + 2 < sizes.len() {
                layers.push(LayerSpec::ReLU);
            }
        }
        if let Some(o) = output {
            layers.push(o);
        }
        Self::new(prefix, layers)
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.{layer}.weight", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.{layer}.bias", self.prefix)
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut shape = input.to_vec();
        for l in &self.layers {
            shape = l.output_shape(&shape)?;
        }
        Ok(shape)
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        input: Var,
        binding: Binding,
    ) -> Result<Var> {
        g.value(input)
            .check_finite(&format!("input to {}", self.prefix))?;
        let mut x = input;
        for (i, layer) in self.layers.iter().enumerate() {
            let weights = if layer.has_params() {
                let (wn, bn) = (self.weight_name(i), self.bias_name(i));
                Some(match binding {
                    Binding::Trainable => (g.param(store, &wn)?, g.param(store, &bn)?),
                    Binding::Frozen => (g.frozen_param(store, &wn)?, g.frozen_param(store, &bn)?),
                })
            } else {
                None
            };
            x = layer.forward(g, weights, &[x])?;
        }
        Ok(x)
    }

    /// Scheme used for layer `i`: Kaiming when a ReLU follows, Xavier otherwise.
    pub fn init_for(&self, i: usize) -> Init {
        match self.layers.get(i + 1) {
            Some(LayerSpec::ReLU) => Init::KaimingUniform,
            _ => Init::XavierUniform,
        }
    }

    /// Draws this network's parameters into `store`.
    pub fn init_into<S: Scalar, R: Rng>(
        &self,
        store: &mut ParamStore<S>,
        rng: &mut R,
    ) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            let Some((wshape, bshape)) = layer.param_shapes() else {
                continue;
            };
            let (fan_in, fan_out) = layer.fans();
            let bound = self.init_for(i).bound(fan_in, fan_out);
            let n: usize = wshape.iter().product();
            let w = (0..n)
                .map(|_| S::from_f64c(rng.gen_range(-bound..bound)))
                .collect();
            store.insert(self.weight_name(i), Tensor::new(wshape, w)?)?;
            store.insert(self.bias_name(i), Tensor::zeros(&bshape))?;
        }
        Ok(())
    }
}

/// Fresh parameters for `net`; bit-identical for equal seeds.
pub fn init_params<S: Scalar>(net: &Network, seed: u64) -> Result<ParamStore<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    net.init_into(&mut store, &mut rng)?;
    Ok(store)
}
