//! Dynamic-graph edge-convolution encoder.
//!
//! Each layer rebuilds a kNN graph in its input feature space, applies a
//! shared affine map to `[x_i, x_j - x_i]` for every edge, and max-pools
//! over the neighbourhood. Layer outputs are concatenated, projected per
//! point to the latent width and max-pooled over all points.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::knn::knn_graph;
use super::linear::Linear;
use super::{LatentVector, ModelError, ParamSet, TensorVisitor};
use crate::seed::Rng;

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub k_neighbors: usize,
    pub layer_widths: Vec<usize>,
    pub latent_dim: usize,
    /// Per-point feature normalization after every edge layer.
    pub normalize: bool,
}

impl EncoderConfig {
    /// Desk-scale default: two edge layers (64, 128), k = 8, latent 128.
    pub fn desk() -> Self {
        Self {
            k_neighbors: 8,
            layer_widths: vec![64, 128],
            latent_dim: 128,
            normalize: false,
        }
    }

    /// Full-size profile: the reference backbone's edge widths doubled for
    /// 6-channel input, k = 20, latent 1024, normalization on.
    pub fn paper() -> Self {
        Self {
            k_neighbors: 20,
            layer_widths: vec![128, 128, 256, 512],
            latent_dim: 1024,
            normalize: true,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.k_neighbors == 0
            || self.latent_dim == 0
            || self.layer_widths.is_empty()
            || self.layer_widths.contains(&0)
        {
            return Err(ModelError::Config(format!(
                "invalid encoder config {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    /// Edge maps, each `(2 * in) x out`.
    pub edges: Vec<Linear>,
    pub proj: Linear,
}

struct EdgeCache {
    input: Array2<f64>,
    /// Neighbour (row index) achieving the max per output channel.
    argmax: Array2<u32>,
    /// Max-pooled pre-activation.
    pooled: Array2<f64>,
    /// Normalized output and per-row inverse std, when normalizing.
    norm: Option<(Array2<f64>, Array1<f64>)>,
}

pub struct EncoderCache {
    layers: Vec<EdgeCache>,
    concat: Array2<f64>,
    /// Point achieving the max per latent channel.
    argmax: Vec<usize>,
}

impl Encoder {
    pub const INPUT_CHANNELS: usize = 6;

    pub fn init(cfg: &EncoderConfig, rng: &mut Rng) -> Self {
        let mut edges = Vec::with_capacity(cfg.layer_widths.len());
        let mut width = Self::INPUT_CHANNELS;
        for &w in &cfg.layer_widths {
            edges.push(Linear::init(2 * width, w, rng));
            width = w;
        }
        let concat: usize = cfg.layer_widths.iter().sum();
        Self {
            cfg: cfg.clone(),
            edges,
            proj: Linear::init(concat, cfg.latent_dim, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            cfg: self.cfg.clone(),
            edges: self
                .edges
                .iter()
                .map(|l| Linear::zeros(l.fan_in(), l.fan_out()))
                .collect(),
            proj: Linear::zeros(self.proj.fan_in(), self.proj.fan_out()),
        }
    }

    fn edge_forward(
        &self,
        layer: usize,
        x: Array2<f64>,
    ) -> Result<(Array2<f64>, EdgeCache), ModelError> {
        let lin = &self.edges[layer];
        let width = x.ncols();
        let graph = knn_graph(x.view(), self.cfg.k_neighbors)?;
        let top = lin.weight.slice(s![..width, ..]);
        let bottom = lin.weight.slice(s![width.., ..]);
        // [x_i, x_j - x_i] W = x_i (W_top - W_bot) + x_j W_bot
        let center = x.dot(&(&top - &bottom)) + &lin.bias;
        let neighbour = x.dot(&bottom);
        let (n, out) = center.dim();
        let mut pooled = Array2::<f64>::zeros((n, out));
        let mut argmax = Array2::<u32>::zeros((n, out));
        for i in 0..n {
            let c = center.row(i);
            let mut best = pooled.row_mut(i);
            let mut arg = argmax.row_mut(i);
            for (rank, &j) in graph.row(i).iter().enumerate() {
                let nb = neighbour.row(j as usize);
                for ch in 0..out {
                    let v = c[ch] + nb[ch];
                    if rank == 0 || v > best[ch] {
                        best[ch] = v;
                        arg[ch] = j;
                    }
                }
            }
        }
        let mut y = pooled.mapv(|v| v.max(0.0));
        let norm = if self.cfg.normalize {
            let mut inv = Array1::zeros(n);
            for (mut row, inv_std) in y.rows_mut().into_iter().zip(inv.iter_mut()) {
                let mean = row.mean().expect("non-empty");
                let var = row
                    .mapv(|v| (v - mean) * (v - mean))
                    .mean()
                    .expect("non-empty");
                *inv_std = 1.0 / (var + NORM_EPS).sqrt();
                row.mapv_inplace(|v| (v - mean) * *inv_std);
            }
            Some((y.clone(), inv))
        } else {
            None
        };
        Ok((
            y,
            EdgeCache {
                input: x,
                argmax,
                pooled,
                norm,
            },
        ))
    }

    /// Returns `dL/d input` and accumulates the layer's parameter gradient.
    fn edge_backward(
        &self,
        layer: usize,
        cache: &EdgeCache,
        mut dy: Array2<f64>,
        grad: &mut Encoder,
    ) -> Array2<f64> {
        if let Some((yhat, inv)) = &cache.norm {
            for ((mut d, yh), &inv_std) in
                dy.rows_mut().into_iter().zip(yhat.rows()).zip(inv.iter())
            {
                let mean_d = d.mean().expect("non-empty");
                let mean_dy =
                    d.iter().zip(yh.iter()).map(|(a, b)| a * b).sum::<f64>() / d.len() as f64;
                ndarray::Zip::from(&mut d)
                    .and(&yh)
                    .for_each(|g, &h| *g = inv_std * (*g - mean_d - h * mean_dy));
            }
        }
        ndarray::Zip::from(&mut dy)
            .and(&cache.pooled)
            .for_each(|g, &p| {
                if p <= 0.0 {
                    *g = 0.0;
                }
            });
        let x = &cache.input;
        let width = x.ncols();
        let mut d_neighbour = Array2::<f64>::zeros(dy.raw_dim());
        for (i, d) in dy.rows().into_iter().enumerate() {
            let arg = cache.argmax.row(i);
            for (ch, &g) in d.iter().enumerate() {
                if g != 0.0 {
                    d_neighbour[[arg[ch] as usize, ch]] += g;
                }
            }
        }
        let lin = &self.edges[layer];
        let top = lin.weight.slice(s![..width, ..]);
        let bottom = lin.weight.slice(s![width.., ..]);
        let g = &mut grad.edges[layer];
        let d_center = &dy;
        {
            let mut gt = g.weight.slice_mut(s![..width, ..]);
            ndarray::linalg::general_mat_mul(1.0, &x.t(), d_center, 1.0, &mut gt);
        }
        {
            let mut gb = g.weight.slice_mut(s![width.., ..]);
            let diff = &d_neighbour - d_center;
            ndarray::linalg::general_mat_mul(1.0, &x.t(), &diff, 1.0, &mut gb);
        }
        g.bias += &d_center.sum_axis(Axis(0));
        d_center.dot(&(&top - &bottom).t()) + d_neighbour.dot(&bottom.t())
    }

    /// Forward pass over an `N x 6` feature matrix.
    pub fn forward(
        &self,
        input: ArrayView2<f64>,
    ) -> Result<(LatentVector, EncoderCache), ModelError> {
        if input.ncols() != Self::INPUT_CHANNELS {
            return Err(ModelError::Shape {
                what: "encoder input channels",
                expected: Self::INPUT_CHANNELS,
                found: input.ncols(),
            });
        }
        if input.nrows() <= self.cfg.k_neighbors {
            return Err(ModelError::Neighbors {
                k: self.cfg.k_neighbors,
                points: input.nrows(),
            });
        }
        let mut layers = Vec::with_capacity(self.edges.len());
        let mut x = input.to_owned();
        for l in 0..self.edges.len() {
            let (y, cache) = self.edge_forward(l, x)?;
            layers.push(cache);
            x = y;
        }
        let mut outputs: Vec<ArrayView2<f64>> =
            layers.iter().skip(1).map(|c| c.input.view()).collect();
        outputs.push(x.view());
        let concat = ndarray::concatenate(Axis(1), &outputs).expect("equal row counts");
        let z = self.proj.forward(concat.view());
        let mut argmax = vec![0usize; self.cfg.latent_dim];
        let mut latent = z.row(0).to_owned();
        for (i, row) in z.rows().into_iter().enumerate().skip(1) {
            for (ch, &v) in row.iter().enumerate() {
                if v > latent[ch] {
                    latent[ch] = v;
                    argmax[ch] = i;
                }
            }
        }
        Ok((
            LatentVector(latent),
            EncoderCache {
                layers,
                concat,
                argmax,
            },
        ))
    }

    pub fn encode(&self, input: ArrayView2<f64>) -> Result<LatentVector, ModelError> {
        self.forward(input).map(|(z, _)| z)
    }

    /// Back-propagates `d_latent`, accumulating into `grad`; returns the
    /// gradient with respect to the input features.
    pub fn backward(
        &self,
        cache: &EncoderCache,
        d_latent: ArrayView1<f64>,
        grad: &mut Encoder,
    ) -> Array2<f64> {
        let (n, width) = cache.concat.dim();
        let mut d_concat = Array2::<f64>::zeros((n, width));
        for (ch, (&i, &g)) in cache.argmax.iter().zip(d_latent.iter()).enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.proj
                .weight
                .column_mut(ch)
                .scaled_add(g, &cache.concat.row(i));
            d_concat
                .row_mut(i)
                .scaled_add(g, &self.proj.weight.column(ch));
        }
        grad.proj.bias += &d_latent;

        let mut offset = width;
        let mut d_next: Option<Array2<f64>> = None;
        for l in (0..self.edges.len()).rev() {
            let w = self.cfg.layer_widths[l];
            offset -= w;
            let mut dy = d_concat.slice(s![.., offset..offset + w]).to_owned();
            if let Some(d) = d_next.take() {
                dy += &d;
            }
            d_next = Some(self.edge_backward(l, &cache.layers[l], dy, grad));
        }
        d_next.expect("at least one layer")
    }
}

impl ParamSet for Encoder {
    fn visit(&self, prefix: &str, f: &mut TensorVisitor<'_>) {
        for (i, l) in self.edges.iter().enumerate() {
            l.visit(&format!("{prefix}.edge{i}"), f);
        }
        self.proj.visit(&format!("{prefix}.proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, l) in self.edges.iter_mut().enumerate() {
            l.visit_mut(&format!("{prefix}.edge{i}"), f);
        }
        self.proj.visit_mut(&format!("{prefix}.proj"), f);
    }
}
