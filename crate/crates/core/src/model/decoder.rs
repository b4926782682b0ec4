//! Two-stage folding decoder emitting 6-channel (position + color) points.
//!
//! Stage one folds a fixed square lattice conditioned on the latent code;
//! stage two refolds the stage-one output, again conditioned on the code.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::linear::Mlp;
use super::{ModelError, ParamSet, TensorVisitor};
use crate::seed::Rng;

pub const OUTPUT_CHANNELS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderConfig {
    /// Lattice side `m`; the lattice has `m * m >= output_points` nodes.
    pub grid_side: usize,
    pub fold_widths: Vec<usize>,
    pub output_points: usize,
    pub output_channels: usize,
}

impl DecoderConfig {
    /// Smallest lattice covering `points`, with the given hidden widths.
    pub fn for_points(points: usize, fold_widths: Vec<usize>) -> Self {
        let mut m = (points as f64).sqrt().floor() as usize;
        while m * m < points {
            m += 1;
        }
        Self {
            grid_side: m,
            fold_widths,
            output_points: points,
            output_channels: OUTPUT_CHANNELS,
        }
    }

    pub fn desk(points: usize) -> Self {
        Self::for_points(points, vec![64, 64])
    }

    pub fn paper(points: usize) -> Self {
        Self::for_points(points, vec![1024, 1024])
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.output_channels != OUTPUT_CHANNELS {
            return Err(ModelError::Config(format!(
                "decoder must emit 6 channels, got {}",
                self.output_channels
            )));
        }
        if self.output_points == 0 || self.fold_widths.contains(&0) {
            return Err(ModelError::Config(format!(
                "invalid decoder config {self:?}"
            )));
        }
        if self.grid_side * self.grid_side < self.output_points {
            return Err(ModelError::GridTooSmall {
                side: self.grid_side,
                points: self.output_points,
            });
        }
        Ok(())
    }

    /// Lattice on `[-0.5, 0.5]^2`, row-major, first `output_points` nodes.
    pub fn grid(&self) -> Array2<f64> {
        let m = self.grid_side;
        let coord = |i: usize| {
            if m > 1 {
                -0.5 + i as f64 / (m - 1) as f64
            } else {
                0.0
            }
        };
        Array2::from_shape_fn((self.output_points, 2), |(node, axis)| {
            if axis == 0 {
                coord(node / m)
            } else {
                coord(node % m)
            }
        })
    }
}

/// One folding MLP over `[latent, local]` rows. The latent part of the
/// first layer is computed once and broadcast over rows.
struct StageCache {
    local: Array2<f64>,
    inputs: Vec<Array2<f64>>,
}

fn stage_forward(
    mlp: &Mlp,
    latent: ArrayView1<f64>,
    local: ArrayView2<f64>,
) -> (Array2<f64>, StageCache) {
    let first = &mlp.layers[0];
    let l = latent.len();
    let shared = latent.dot(&first.weight.slice(s![..l, ..])) + &first.bias;
    let mut h = local.dot(&first.weight.slice(s![l.., ..])) + &shared;
    let mut inputs = Vec::with_capacity(mlp.layers.len());
    for layer in &mlp.layers[1..] {
        h.mapv_inplace(|v| v.max(0.0));
        let next = layer.forward(h.view());
        inputs.push(h);
        h = next;
    }
    (
        h,
        StageCache {
            local: local.to_owned(),
            inputs,
        },
    )
}

/// Returns `(d latent, d local)`.
fn stage_backward(
    mlp: &Mlp,
    latent: ArrayView1<f64>,
    cache: &StageCache,
    dy: ArrayView2<f64>,
    grad: &mut Mlp,
) -> (Array1<f64>, Array2<f64>) {
    let mut d = dy.to_owned();
    for i in (1..mlp.layers.len()).rev() {
        let x = &cache.inputs[i - 1];
        let mut dx = mlp.layers[i].backward(x.view(), d.view(), &mut grad.layers[i]);
        ndarray::Zip::from(&mut dx).and(x).for_each(|g, &v| {
            if v <= 0.0 {
                *g = 0.0;
            }
        });
        d = dx;
    }
    let l = latent.len();
    let first = &mlp.layers[0];
    let g = &mut grad.layers[0];
    let col_sum = d.sum_axis(Axis(0));
    {
        let mut gl = g.weight.slice_mut(s![..l, ..]);
        for (mut row, &z) in gl.rows_mut().into_iter().zip(latent.iter()) {
            row.scaled_add(z, &col_sum);
        }
    }
    {
        let mut gloc = g.weight.slice_mut(s![l.., ..]);
        ndarray::linalg::general_mat_mul(1.0, &cache.local.t(), &d, 1.0, &mut gloc);
    }
    g.bias += &col_sum;
    let d_latent = first.weight.slice(s![..l, ..]).dot(&col_sum);
    let d_local = d.dot(&first.weight.slice(s![l.., ..]).t());
    (d_latent, d_local)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub cfg: DecoderConfig,
    pub latent_dim: usize,
    pub fold1: Mlp,
    pub fold2: Mlp,
    grid: Array2<f64>,
}

pub struct DecoderCache {
    stage1: StageCache,
    stage2: StageCache,
}

impl Decoder {
    pub fn init(cfg: &DecoderConfig, latent_dim: usize, rng: &mut Rng) -> Self {
        let dims = |local: usize| {
            let mut d = vec![latent_dim + local];
            d.extend(&cfg.fold_widths);
            d.push(OUTPUT_CHANNELS);
            d
        };
        let fold1 = Mlp::init(&dims(2), rng);
        let fold2 = Mlp::init(&dims(OUTPUT_CHANNELS), rng);
        Self {
            cfg: cfg.clone(),
            latent_dim,
            fold1,
            fold2,
            grid: cfg.grid(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            cfg: self.cfg.clone(),
            latent_dim: self.latent_dim,
            fold1: self.fold1.zeros_like(),
            fold2: self.fold2.zeros_like(),
            grid: self.grid.clone(),
        }
    }

    /// `N x 6` repainted cloud for a latent code.
    pub fn forward(
        &self,
        latent: ArrayView1<f64>,
    ) -> Result<(Array2<f64>, DecoderCache), ModelError> {
        if latent.len() != self.latent_dim {
            return Err(ModelError::Shape {
                what: "decoder latent",
                expected: self.latent_dim,
                found: latent.len(),
            });
        }
        let (inter, stage1) = stage_forward(&self.fold1, latent, self.grid.view());
        let (out, stage2) = stage_forward(&self.fold2, latent, inter.view());
        Ok((out, DecoderCache { stage1, stage2 }))
    }

    pub fn decode(&self, latent: ArrayView1<f64>) -> Result<Array2<f64>, ModelError> {
        self.forward(latent).map(|(y, _)| y)
    }

    /// Accumulates parameter gradients; returns `dL/d latent`.
    pub fn backward(
        &self,
        latent: ArrayView1<f64>,
        cache: &DecoderCache,
        d_out: ArrayView2<f64>,
        grad: &mut Decoder,
    ) -> Array1<f64> {
        let (dz2, d_inter) =
            stage_backward(&self.fold2, latent, &cache.stage2, d_out, &mut grad.fold2);
        let (dz1, _) = stage_backward(
            &self.fold1,
            latent,
            &cache.stage1,
            d_inter.view(),
            &mut grad.fold1,
        );
        dz1 + dz2
    }
}

impl ParamSet for Decoder {
    fn visit(&self, prefix: &str, f: &mut TensorVisitor<'_>) {
        self.fold1.visit(&format!("{prefix}.fold1"), f);
        self.fold2.visit(&format!("{prefix}.fold2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.fold1.visit_mut(&format!("{prefix}.fold1"), f);
        self.fold2.visit_mut(&format!("{prefix}.fold2"), f);
    }
}
