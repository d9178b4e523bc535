//! Small MLP noise predictor with hand-written backpropagation.

use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

/// Anything that predicts the noise in `x_t` at step `t`.
pub trait NoisePredictor {
    fn predict_noise(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>>;
}

/// Fully connected layer `y = x·W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(input, output),
            bias: vec![0.0; output],
        }
    }

    fn glorot(input: usize, output: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        let mut layer = Self::zeros(input, output);
        layer
            .weight
            .as_mut_slice()
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-bound..bound));
        layer
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.left_mul(x).expect("layer input width");
        for (v, b) in y.iter_mut().zip(&self.bias) {
            *v += b;
        }
        y
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each hidden layer.
    pre: Vec<Vec<f64>>,
}

/// `[x_t ‖ t/T] → hidden (SiLU) → … → noise`, output width equal to the
/// embedding width.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseNet {
    layers: Vec<Dense>,
    embed_dim: usize,
    steps: usize,
}

impl NoiseNet {
    /// Two hidden layers of `width` units.
    pub fn new(embed_dim: usize, width: usize, steps: usize, rng: &mut Rng) -> Result<Self> {
        Self::with_hidden(embed_dim, &[width, width], steps, rng)
    }

    pub fn with_hidden(
        embed_dim: usize,
        hidden: &[usize],
        steps: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let sizes = Self::sizes(embed_dim, hidden, steps)?;
        let layers = sizes
            .windows(2)
            .map(|w| Dense::glorot(w[0], w[1], rng))
            .collect();
        Ok(Self {
            layers,
            embed_dim,
            steps,
        })
    }

    pub fn zeros(embed_dim: usize, hidden: &[usize], steps: usize) -> Result<Self> {
        let sizes = Self::sizes(embed_dim, hidden, steps)?;
        let layers = sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Ok(Self {
            layers,
            embed_dim,
            steps,
        })
    }

    fn sizes(embed_dim: usize, hidden: &[usize], steps: usize) -> Result<Vec<usize>> {
        if embed_dim == 0 || steps == 0 || hidden.contains(&0) {
            return Err(Error::invalid(
                "noise net sizes and step count must be positive",
            ));
        }
        let mut sizes = vec![embed_dim + 1];
        sizes.extend_from_slice(hidden);
        sizes.push(embed_dim);
        Ok(sizes)
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    /// Layer widths, input first.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].weight.rows()];
        s.extend(self.layers.iter().map(|l| l.bias.len()));
        s
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    fn input(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        if x_t.len() != self.embed_dim {
            return Err(Error::DimensionMismatch {
                expected: self.embed_dim,
                actual: x_t.len(),
            });
        }
        let mut input = Vec::with_capacity(self.embed_dim + 1);
        input.extend_from_slice(x_t);
        input.push(t as f64 / self.steps as f64);
        Ok(input)
    }

    pub fn forward(&self, x_t: &[f64], t: usize) -> Result<(Vec<f64>, ForwardCache)> {
        let mut x = self.input(x_t, t)?;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len() - 1),
        };
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&x);
            cache.inputs.push(std::mem::take(&mut x));
            if i == last {
                x = z;
            } else {
                x = z.iter().map(|&v| silu(v)).collect();
                cache.pre.push(z);
            }
        }
        Ok((x, cache))
    }

    /// Accumulates parameter gradients for upstream gradient `d_out` into
    /// `grads` and returns the gradient w.r.t. `x_t` (time input dropped).
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64], grads: &mut NetGrads) -> Vec<f64> {
        let mut delta = d_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                for (d, &z) in delta.iter_mut().zip(&cache.pre[i]) {
                    *d *= silu_grad(z);
                }
            }
            let layer = &self.layers[i];
            let g = &mut grads.layers[i];
            let x = &cache.inputs[i];
            for (gb, d) in g.bias.iter_mut().zip(&delta) {
                *gb += d;
            }
            let mut d_in = vec![0.0; x.len()];
            for (r, &xr) in x.iter().enumerate() {
                let w_row = layer.weight.row(r);
                let g_row = g.weight.row_mut(r);
                let mut acc = 0.0;
                for j in 0..delta.len() {
                    g_row[j] += xr * delta[j];
                    acc += w_row[j] * delta[j];
                }
                d_in[r] = acc;
            }
            delta = d_in;
        }
        delta.truncate(self.embed_dim);
        delta
    }

    pub fn zero_grads(&self) -> NetGrads {
        NetGrads {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.weight.rows(), l.weight.cols()))
                .collect(),
        }
    }

    /// `θ ← θ − lr·g`.
    pub fn apply(&mut self, grads: &NetGrads, lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, gw) in layer
                .weight
                .as_mut_slice()
                .iter_mut()
                .zip(g.weight.as_slice())
            {
                *w -= lr * gw;
            }
            for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= lr * gb;
            }
        }
    }

    /// Writes `manifest` (layer sizes, step count, beta range) plus
    /// `layer_<i>.weight.txt` / `layer_<i>.bias.txt` matrices.
    pub fn write(&self, dir: &Path, beta_range: (f64, f64)) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let sizes: Vec<String> = self.layer_sizes().iter().map(usize::to_string).collect();
        let manifest = format!(
            "layer_sizes={}\nsteps={}\nbeta_start={:e}\nbeta_end={:e}\n",
            sizes.join(" "),
            self.steps,
            beta_range.0,
            beta_range.1
        );
        let path = dir.join("manifest");
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
        for (i, l) in self.layers.iter().enumerate() {
            l.weight
                .write_text(&dir.join(format!("layer_{i}.weight.txt")))?;
            Matrix::from_vec(1, l.bias.len(), l.bias.clone())?
                .write_text(&dir.join(format!("layer_{i}.bias.txt")))?;
        }
        Ok(())
    }

    /// Returns the net and the stored beta range.
    pub fn read(dir: &Path) -> Result<(Self, (f64, f64))> {
        let path = dir.join("manifest");
        let kv = crate::embedding::read_key_values(&path)?;
        let bad = |k: &str| Error::Parse {
            path: path.clone(),
            line: 0,
            message: format!("missing or bad {k}"),
        };
        let sizes: Vec<usize> = kv
            .get("layer_sizes")
            .ok_or_else(|| bad("layer_sizes"))?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad("layer_sizes")))
            .collect::<Result<_>>()?;
        let steps: usize = kv
            .get("steps")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("steps"))?;
        let beta_start: f64 = kv
            .get("beta_start")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("beta_start"))?;
        let beta_end: f64 = kv
            .get("beta_end")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("beta_end"))?;
        if sizes.len() < 2 || sizes[0] != sizes[sizes.len() - 1] + 1 {
            return Err(bad("layer_sizes"));
        }
        let mut net = Self::zeros(sizes[sizes.len() - 1], &sizes[1..sizes.len() - 1], steps)?;
        for (i, l) in net.layers.iter_mut().enumerate() {
            l.weight = Matrix::read_text(&dir.join(format!("layer_{i}.weight.txt")), sizes[i + 1])?;
            if l.weight.rows() != sizes[i] {
                return Err(bad("layer weight shape"));
            }
            let bias = Matrix::read_text(&dir.join(format!("layer_{i}.bias.txt")), sizes[i + 1])?;
            if bias.rows() != 1 {
                return Err(bad("layer bias shape"));
            }
            l.bias = bias.as_slice().to_vec();
        }
        Ok((net, (beta_start, beta_end)))
    }
}

impl NoisePredictor for NoiseNet {
    fn predict_noise(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        Ok(self.forward(x_t, t)?.0)
    }
}

/// Gradient buffers shaped like a [`NoiseNet`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<Dense>,
}

impl NetGrads {
    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.weight.as_mut_slice().fill(0.0);
            l.bias.fill(0.0);
        }
    }
}

/// Predicted noise for `x_t` at step `t`.
pub fn noise_net_forward(x_t: &[f64], t: usize, net: &NoiseNet) -> Result<Vec<f64>> {
    net.predict_noise(x_t, t)
}
