//! Dense feed-forward networks with a reverse-mode tape.
//!
//! Inputs are batches laid out row-major as `(batch, features)`. A layer
//! computes `y = act(x Wᵀ + b)` with `W` stored as `(out_dim, in_dim)`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NumError, ParameterSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::None => {}
        }
    }

    /// Turns `dy` into `dz` given the post-activation output `y`.
    fn backprop(self, y: &Array2<f64>, dy: &mut Array2<f64>) {
        match self {
            Activation::Relu => dy.zip_mut_with(y, |g, &out| {
                if out <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => dy.zip_mut_with(y, |g, &out| *g *= 1.0 - out * out),
            Activation::None => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDims {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

/// Ordered list of dense layers. Consecutive layers always chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    layers: Vec<LayerDims>,
}

impl LayerSpec {
    pub fn new(layers: Vec<LayerDims>) -> Result<Self, NumError> {
        if layers.is_empty() {
            return Err(NumError::Config("layer spec needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(NumError::Config(format!("layer {i} has a zero dimension")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(NumError::LayerShape {
                    layer: i + 1,
                    expected: pair[0].out_dim,
                    got: pair[1].in_dim,
                });
            }
        }
        Ok(Self { layers })
    }

    /// `input → hidden… → output`, ReLU on hidden layers and `out_act` last.
    pub fn mlp(input: usize, hidden: &[usize], output: usize, out_act: Activation) -> Result<Self, NumError> {
        let mut dims = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for &h in hidden {
            dims.push(LayerDims {
                in_dim: prev,
                out_dim: h,
                activation: Activation::Relu,
            });
            prev = h;
        }
        dims.push(LayerDims {
            in_dim: prev,
            out_dim: output,
            activation: out_act,
        });
        Self::new(dims)
    }

    pub fn dense(input: usize, output: usize, act: Activation) -> Self {
        Self::mlp(input, &[], output, act).expect("dense layer dims must be positive")
    }

    pub fn layers(&self) -> &[LayerDims] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }
}

/// A [`LayerSpec`] bound to a contiguous run of entries inside a
/// [`ParameterSet`], starting at `base`: `weight_i` at `base + 2i` and `bias_i`
/// at `base + 2i + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    spec: LayerSpec,
    base: usize,
}

impl Mlp {
    /// Registers freshly initialized weights for `spec` at the end of `params`.
    ///
    /// Weights and biases are drawn from `U(-1/√fan_in, 1/√fan_in)`.
    pub fn register<R: Rng + ?Sized>(spec: LayerSpec, prefix: &str, params: &mut ParameterSet, rng: &mut R) -> Self {
        let base = params.len();
        for (i, l) in spec.layers.iter().enumerate() {
            let bound = 1.0 / (l.in_dim as f64).sqrt();
            let w = Array2::from_shape_fn((l.out_dim, l.in_dim), |_| rng.random_range(-bound..bound));
            let b = Array1::from_shape_fn(l.out_dim, |_| rng.random_range(-bound..bound));
            params.push(format!("{prefix}.{i}.weight"), w.into_dyn());
            params.push(format!("{prefix}.{i}.bias"), b.into_dyn());
        }
        Self { spec, base }
    }

    /// Layout for parameters already present at `base` (e.g. a loaded set).
    pub fn at(spec: LayerSpec, base: usize) -> Self {
        Self { spec, base }
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    /// Entry indices owned by this network.
    pub fn entry_range(&self) -> std::ops::Range<usize> {
        self.base..self.base + 2 * self.spec.layers.len()
    }

    fn check(&self, params: &ParameterSet, x: &ArrayView2<'_, f64>) -> Result<(), NumError> {
        if x.ncols() != self.spec.in_dim() {
            return Err(NumError::LayerShape {
                layer: 0,
                expected: self.spec.in_dim(),
                got: x.ncols(),
            });
        }
        if params.len() < self.base + 2 * self.spec.layers.len() {
            return Err(NumError::Shape("parameter set too short for network".into()));
        }
        for (i, l) in self.spec.layers.iter().enumerate() {
            let w = params.get(self.base + 2 * i);
            let b = params.get(self.base + 2 * i + 1);
            if w.shape() != [l.out_dim, l.in_dim] {
                return Err(NumError::LayerShape {
                    layer: i,
                    expected: l.out_dim * l.in_dim,
                    got: w.len(),
                });
            }
            if b.shape() != [l.out_dim] {
                return Err(NumError::LayerShape {
                    layer: i,
                    expected: l.out_dim,
                    got: b.len(),
                });
            }
        }
        Ok(())
    }

    fn layer_forward(&self, params: &ParameterSet, i: usize, x: &ArrayView2<'_, f64>) -> Array2<f64> {
        let w = params.matrix(self.base + 2 * i);
        let b = params.vector(self.base + 2 * i + 1);
        let mut z = x.dot(&w.t());
        z += &b;
        self.spec.layers[i].activation.apply(&mut z);
        z
    }

    /// Forward pass without recording.
    pub fn predict(&self, params: &ParameterSet, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, NumError> {
        self.check(params, &x)?;
        let mut h = self.layer_forward(params, 0, &x);
        for i in 1..self.spec.layers.len() {
            h = self.layer_forward(params, i, &h.view());
        }
        Ok(h)
    }

    /// Forward pass that records what [`MlpTape::backward`] needs.
    pub fn forward(&self, params: &ParameterSet, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, MlpTape), NumError> {
        self.check(params, &x)?;
        let mut outputs = Vec::with_capacity(self.spec.layers.len());
        outputs.push(self.layer_forward(params, 0, &x));
        for i in 1..self.spec.layers.len() {
            let next = self.layer_forward(params, i, &outputs[i - 1].view());
            outputs.push(next);
        }
        let y = outputs.last().unwrap().clone();
        Ok((
            y,
            MlpTape {
                net: self.clone(),
                input: Some(x.to_owned()),
                outputs,
            },
        ))
    }
}

/// Recorded forward pass of one [`Mlp`]. Can be replayed backwards once.
#[derive(Debug, Clone)]
pub struct MlpTape {
    net: Mlp,
    input: Option<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().unwrap()
    }

    pub fn is_consumed(&self) -> bool {
        self.input.is_none()
    }

    /// Hash of the on/off pattern of every ReLU unit in the recorded pass.
    /// Two passes with equal signatures sit in the same linear region.
    pub fn relu_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (layer, out) in self.net.spec.layers.iter().zip(&self.outputs) {
            if layer.activation != Activation::Relu {
                continue;
            }
            for &v in out.iter() {
                h ^= (v > 0.0) as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the network input.
    pub fn backward(
        &mut self,
        params: &ParameterSet,
        upstream: ArrayView2<'_, f64>,
        grads: &mut ParameterSet,
    ) -> Result<Array2<f64>, NumError> {
        self.replay(params, upstream, Some(grads))
    }

    /// Gradient with respect to the input only; parameter gradients are not
    /// formed. Consumes the tape like [`backward`](Self::backward).
    pub fn input_gradient(&mut self, params: &ParameterSet, upstream: ArrayView2<'_, f64>) -> Result<Array2<f64>, NumError> {
        self.replay(params, upstream, None)
    }

    fn replay(
        &mut self,
        params: &ParameterSet,
        upstream: ArrayView2<'_, f64>,
        mut grads: Option<&mut ParameterSet>,
    ) -> Result<Array2<f64>, NumError> {
        let input = self.input.take().ok_or(NumError::TapeConsumed)?;
        let out = self.outputs.last().unwrap();
        if upstream.dim() != out.dim() {
            return Err(NumError::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.dim(),
                out.dim()
            )));
        }
        let layers = self.net.spec.layers.clone();
        let base = self.net.base;
        let mut delta = upstream.to_owned();
        for i in (0..layers.len()).rev() {
            layers[i].activation.backprop(&self.outputs[i], &mut delta);
            if let Some(grads) = grads.as_deref_mut() {
                let x = if i == 0 { input.view() } else { self.outputs[i - 1].view() };
                {
                    let mut gw = grads.matrix_mut(base + 2 * i);
                    general_mat_mul(1.0, &delta.t(), &x, 1.0, &mut gw);
                }
                let mut gb = grads.vector_mut(base + 2 * i + 1);
                gb += &delta.sum_axis(Axis(0));
            }
            delta = delta.dot(&params.matrix(base + 2 * i));
        }
        self.outputs.clear();
        Ok(delta)
    }

    /// Convenience form: fresh gradient set plus input gradient.
    pub fn gradients(
        &mut self,
        params: &ParameterSet,
        upstream: ArrayView2<'_, f64>,
    ) -> Result<(ParameterSet, Array2<f64>), NumError> {
        let mut grads = params.zeros_like();
        let dx = self.backward(params, upstream, &mut grads)?;
        Ok((grads, dx))
    }
}

/// Single-sample forward pass over a parameter set laid out from index 0.
pub fn mlp_forward(spec: &LayerSpec, params: &ParameterSet, x: &[f64]) -> Result<(Vec<f64>, MlpTape), NumError> {
    let net = Mlp::at(spec.clone(), 0);
    let row = ArrayView2::from_shape((1, x.len()), x).map_err(|e| NumError::Shape(e.to_string()))?;
    let (y, tape) = net.forward(params, row)?;
    Ok((y.into_raw_vec_and_offset().0, tape))
}
