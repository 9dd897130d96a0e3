//! A small fully connected network with ReLU hidden layers and an identity
//! output layer, stored as one flat parameter vector.
//!
//! Layer `l` occupies `W_l` (row-major, `n_out x n_in`) followed by `b_l`.
//! Batched passes go through `ndarray` matrix products.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::rng::RngStream;
use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    id: u64,
    version: u64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Self { sizes: self.sizes.clone(), params: self.params.clone(), id: fresh_id(), version: 0 }
    }
}

/// Activations recorded by [`Mlp::forward_cached`]; consumed by [`Mlp::gradient`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    net_id: u64,
    version: u64,
    /// Input to every layer; `layer_inputs[0]` is the network input.
    layer_inputs: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct MlpGradient {
    /// Summed over the batch; same layout as [`Mlp::params`].
    pub params: Vec<f64>,
    /// Gradient with respect to the network input, one row per sample.
    pub input: Array2<f64>,
}

/// `sum (n_in + 1) * n_out` over consecutive layer pairs.
pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

impl Mlp {
    /// Weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new(sizes: &[usize], rng: &mut RngStream) -> Self {
        let mut net = Self::zeros(sizes);
        let mut offset = 0;
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let n = (w[0] + 1) * w[1];
            for p in &mut net.params[offset..offset + n] {
                *p = rng.uniform_range(-bound, bound);
            }
            offset += n;
        }
        net
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "invalid layer sizes {sizes:?}");
        Self { sizes: sizes.to_vec(), params: vec![0.0; param_count(sizes)], id: fresh_id(), version: 0 }
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::contract(format!("invalid layer sizes {sizes:?}")));
        }
        if params.len() != param_count(sizes) {
            return Err(Error::contract(format!(
                "expected {} parameters for {:?}, got {}",
                param_count(sizes),
                sizes,
                params.len()
            )));
        }
        Ok(Self { sizes: sizes.to_vec(), params, id: fresh_id(), version: 0 })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    /// Scales the output layer, which keeps fresh heads close to zero.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let n_in = self.sizes[self.sizes.len() - 2];
        let n_out = self.output_dim();
        let start = self.params.len() - (n_in + 1) * n_out;
        self.params_mut()[start..].iter_mut().for_each(|p| *p *= factor);
    }

    /// `self <- tau * self + (1 - tau) * source`.
    pub fn polyak_from(&mut self, source: &Mlp, tau: f64) {
        debug_assert_eq!(self.sizes, source.sizes);
        for (t, s) in self.params_mut().iter_mut().zip(&source.params) {
            *t = tau * *t + (1.0 - tau) * s;
        }
    }

    fn layer_views(&self, layer: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let offset: usize = self.sizes[..=layer].windows(2).map(|w| (w[0] + 1) * w[1]).sum();
        let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let w = ArrayView2::from_shape((n_out, n_in), &self.params[offset..offset + n_in * n_out]).unwrap();
        let b = ArrayView1::from(&self.params[offset + n_in * n_out..offset + (n_in + 1) * n_out]);
        (w, b)
    }

    fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.sizes.len() - 1);
        let mut acc = 0;
        for w in self.sizes.windows(2) {
            out.push(acc);
            acc += (w[0] + 1) * w[1];
        }
        out
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::contract(format!("mlp input has length {}, expected {}", x.len(), self.input_dim())));
        }
        let mut h: Vec<f64> = x.to_vec();
        let layers = self.sizes.len() - 1;
        for l in 0..layers {
            let (w, b) = self.layer_views(l);
            let mut next: Vec<f64> = b.to_vec();
            for (o, row) in w.outer_iter().enumerate() {
                next[o] += row.iter().zip(&h).map(|(a, c)| a * c).sum::<f64>();
            }
            if l + 1 < layers {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = next;
        }
        Ok(h)
    }

    /// Batched forward pass; one row per sample.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.input_dim(), "mlp batch input width");
        let layers = self.sizes.len() - 1;
        let mut h = x.to_owned();
        for l in 0..layers {
            h = self.affine(h.view(), l);
            if l + 1 < layers {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        h
    }

    fn affine(&self, h: ArrayView2<f64>, layer: usize) -> Array2<f64> {
        let (w, b) = self.layer_views(layer);
        let mut out = h.dot(&w.t());
        out += &b;
        out
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::contract(format!("mlp input has width {}, expected {}", x.ncols(), self.input_dim())));
        }
        let layers = self.sizes.len() - 1;
        let mut inputs = Vec::with_capacity(layers);
        let mut h = x.to_owned();
        for l in 0..layers {
            let mut next = self.affine(h.view(), l);
            if l + 1 < layers {
                next.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(h);
            h = next;
        }
        Ok((h, MlpCache { net_id: self.id, version: self.version, layer_inputs: inputs }))
    }

    /// Backpropagates `grad_out` (dL/d output, one row per sample) through the
    /// activations of a matching forward pass.
    pub fn gradient(&self, cache: &MlpCache, grad_out: ArrayView2<f64>) -> Result<MlpGradient> {
        if cache.net_id != self.id || cache.version != self.version {
            return Err(Error::contract("stale activation cache: network changed since the forward pass"));
        }
        let batch = cache.layer_inputs[0].nrows();
        if grad_out.nrows() != batch || grad_out.ncols() != self.output_dim() {
            return Err(Error::contract(format!(
                "output gradient shape {:?}, expected ({batch}, {})",
                grad_out.shape(),
                self.output_dim()
            )));
        }
        let offsets = self.offsets();
        let mut grads = vec![0.0; self.params.len()];
        let mut g: Array2<f64> = grad_out.to_owned();
        for l in (0..self.sizes.len() - 1).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = &cache.layer_inputs[l];
            let dw = g.t().dot(input);
            let db = g.sum_axis(Axis(0));
            let off = offsets[l];
            // logical row-major order; `dot` may return a non-standard layout
            grads[off..off + n_in * n_out].iter_mut().zip(dw.iter()).for_each(|(d, v)| *d = *v);
            grads[off + n_in * n_out..off + (n_in + 1) * n_out]
                .copy_from_slice(db.as_slice().expect("standard layout"));
            let (w, _) = self.layer_views(l);
            let mut prev = g.dot(&w);
            if l > 0 {
                prev.zip_mut_with(input, |gv, &a| {
                    if a <= 0.0 {
                        *gv = 0.0;
                    }
                });
            }
            g = prev;
        }
        Ok(MlpGradient { params: grads, input: g })
    }
}

/// Stacks row slices into a batch matrix.
pub fn rows_to_array(rows: &[Vec<f64>], width: usize) -> Array2<f64> {
    let mut a = Array2::zeros((rows.len(), width));
    for (i, r) in rows.iter().enumerate() {
        a.row_mut(i).assign(&ArrayView1::from(&r[..]));
    }
    a
}

/// Concatenates blocks column-wise.
pub fn hcat(blocks: &[ArrayView2<'_, f64>]) -> Array2<f64> {
    ndarray::concatenate(Axis(1), blocks).expect("matching row counts")
}

pub fn column_sum(a: &Array2<f64>) -> Array1<f64> {
    a.sum_axis(Axis(0))
}
