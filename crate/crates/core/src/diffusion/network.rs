//! Conditional noise-prediction MLP, batched through `dgemm`.
//!
//! Activations are row-major `batch × width`. Weights are stored row-major
//! `outputs × inputs`, so a layer computes `Y = X Wᵀ + b`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

pub const TIME_EMBED_DIM: usize = 128;
pub const PARAMS_VERSION: &str = "fluidsense-denoiser/1";

/// Sinusoidal timestep features `[sin(tω_j) ; cos(tω_j)]` with `ω_j`
/// geometric from 1 down to 1e-4.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    write_time_embedding(t, &mut out);
    out
}

fn write_time_embedding(t: usize, out: &mut [f64]) {
    let half = out.len() / 2;
    let tf = t as f64;
    for j in 0..half {
        let omega = if half > 1 {
            1e-4f64.powf(j as f64 / (half - 1) as f64)
        } else {
            1.0
        };
        out[j] = (tf * omega).sin();
        out[half + j] = (tf * omega).cos();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserParams {
    pub version: String,
    pub k: usize,
    pub context_len: usize,
    pub time_dim: usize,
    pub hidden: Vec<usize>,
    pub layers: Vec<Layer>,
}

/// Intermediate values of one batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// Input to each layer; `inputs[0]` is the assembled network input.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Per-layer parameter gradients, same shapes as the layers.
pub type LayerGrads = Vec<(Vec<f64>, Vec<f64>)>;

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// `C = A·B + beta·C` with explicit strides; `A` is `m × k`, `B` is `k × n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every element the kernel touches;
    // `c` is row-major m × n and does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl DenoiserParams {
    /// Hidden layers get N(0, 1/fan_in) weights; the output layer starts at
    /// zero so the untrained network predicts zero noise.
    pub fn init(k: usize, context_len: usize, hidden: &[usize], rng: &mut RngStream) -> Result<Self> {
        if k == 0 || hidden.contains(&0) {
            return Err(Error::config("network widths must be positive"));
        }
        let time_dim = TIME_EMBED_DIM;
        let mut widths = vec![k + context_len + time_dim];
        widths.extend_from_slice(hidden);
        widths.push(k);
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let mut layer = Layer::zeros(w[0], w[1]);
                if i < last {
                    let std = 1.0 / (w[0] as f64).sqrt();
                    for v in &mut layer.weight {
                        *v = std * rng.standard_normal();
                    }
                }
                layer
            })
            .collect();
        Ok(Self {
            version: PARAMS_VERSION.into(),
            k,
            context_len,
            time_dim,
            hidden: hidden.to_vec(),
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.k + self.context_len + self.time_dim
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Checks internal shape consistency, e.g. after loading.
    pub fn validate(&self) -> Result<()> {
        if self.version != PARAMS_VERSION {
            return Err(Error::config(format!(
                "unsupported denoiser version '{}'",
                self.version
            )));
        }
        let mut widths = vec![self.input_dim()];
        widths.extend_from_slice(&self.hidden);
        widths.push(self.k);
        if self.layers.len() != widths.len() - 1 {
            return Err(Error::config("layer count does not match hidden sizes"));
        }
        for (l, w) in self.layers.iter().zip(widths.windows(2)) {
            if l.inputs != w[0] || l.outputs != w[1] || l.weight.len() != w[0] * w[1] || l.bias.len() != w[1] {
                return Err(Error::config("layer shape does not match manifest"));
            }
            if l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::Numerical("non-finite network parameter".into()));
            }
        }
        Ok(())
    }

    /// Appends one input row `[z_t ; c ; timeembed(t)]` to `out`.
    pub fn push_input_row(&self, z: &[f64], t: usize, c: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if z.len() != self.k || c.len() != self.context_len {
            return Err(Error::config(format!(
                "denoiser expects z of length {} and context of length {}, got {} and {}",
                self.k,
                self.context_len,
                z.len(),
                c.len()
            )));
        }
        out.extend_from_slice(z);
        out.extend_from_slice(c);
        let start = out.len();
        out.resize(start + self.time_dim, 0.0);
        write_time_embedding(t, &mut out[start..]);
        Ok(())
    }

    /// Batched forward pass over assembled input rows.
    pub fn forward(&self, input: Vec<f64>, batch: usize) -> ForwardCache {
        assert_eq!(input.len(), batch * self.input_dim(), "input shape mismatch");
        let n_layers = self.layers.len();
        let mut inputs = vec![input];
        let mut pre = Vec::with_capacity(n_layers - 1);
        let mut output = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let x = inputs.last().expect("layer input");
            let mut y = Vec::with_capacity(batch * layer.outputs);
            for _ in 0..batch {
                y.extend_from_slice(&layer.bias);
            }
            gemm(
                batch,
                layer.inputs,
                layer.outputs,
                x,
                (layer.inputs, 1),
                &layer.weight,
                (1, layer.inputs),
                1.0,
                &mut y,
            );
            if i + 1 < n_layers {
                let act = y.iter().map(|&v| silu(v)).collect();
                pre.push(y);
                inputs.push(act);
            } else {
                output = y;
            }
        }
        ForwardCache {
            batch,
            inputs,
            pre,
            output,
        }
    }

    /// `ε_φ(z_t, t, c)` for one input.
    pub fn predict(&self, z: &[f64], t: usize, c: &[f64]) -> Result<Vec<f64>> {
        let mut row = Vec::with_capacity(self.input_dim());
        self.push_input_row(z, t, c, &mut row)?;
        Ok(self.forward(row, 1).output)
    }

    /// Reverse pass for an output adjoint `d_out` (`batch × k`). Returns
    /// parameter gradients when requested, and the adjoint of the
    /// assembled input.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64], want_params: bool) -> (Option<LayerGrads>, Vec<f64>) {
        let batch = cache.batch;
        assert_eq!(d_out.len(), batch * self.k, "output adjoint shape mismatch");
        let mut grads: LayerGrads = Vec::new();
        let mut dy = d_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let x = &cache.inputs[i];
            if want_params {
                let mut dw = vec![0.0; layer.outputs * layer.inputs];
                gemm(
                    layer.outputs,
                    batch,
                    layer.inputs,
                    &dy,
                    (1, layer.outputs),
                    x,
                    (layer.inputs, 1),
                    0.0,
                    &mut dw,
                );
                let mut db = vec![0.0; layer.outputs];
                for row in dy.chunks_exact(layer.outputs) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                grads.push((dw, db));
            }
            let mut dx = vec![0.0; batch * layer.inputs];
            gemm(
                batch,
                layer.outputs,
                layer.inputs,
                &dy,
                (layer.outputs, 1),
                &layer.weight,
                (layer.inputs, 1),
                0.0,
                &mut dx,
            );
            if i > 0 {
                for (d, p) in dx.iter_mut().zip(&cache.pre[i - 1]) {
                    *d *= silu_grad(*p);
                }
            }
            dy = dx;
        }
        grads.reverse();
        (want_params.then_some(grads), dy)
    }
}
