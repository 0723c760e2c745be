// SPDX-License-Identifier: Apache-2.0
//! Hardware-aware training of a [`MappedNetwork`].
//!
//! Each tile computes, in unit-weight terms,
//!
//! ```text
//! u = f_dac(clip(x, ±X_r)) / X_r
//! a = (W + σ_w ξ)ᵀ u
//! s = f_adc(η ⊙ a + σ_out ξ)
//! y = X_r · s
//! ```
//!
//! The DAC clip and quantizer are active only while input ranges are being
//! learned, the ADC only while channel scales are being learned. Gradients
//! pass the quantizers unchanged (straight-through) and stop where a value
//! was clipped; `X_r` receives the closed-form [`input_range_gradient`]
//! plus, for outputs held at the ADC bound, the direct term of `y = X_r · s`.

use serde::{Deserialize, Serialize};

use crate::config::TileHardwareConfig;
use crate::dataset::Dataset;
use crate::error::{AimcError, Result};
use crate::matrix::Matrix;
use crate::network::{accuracy, column_block, MappedNetwork};
use crate::quant::UniformQuantizer;
use crate::rng::{standard_normal, RngStream};

/// Smallest learned input range.
pub const MIN_INPUT_RANGE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub sigma_w: f64,
    pub sigma_out: f64,
    pub lr_init: f64,
    pub lr_final: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Decay weight of the input-range gradient.
    pub decay_eta: f64,
    pub learn_input_range: bool,
    pub learn_conductance_scale: bool,
    /// Quantize with the DAC / ADC whenever they are active.
    pub enable_quantization: bool,
    pub dac_bits: u32,
    pub adc_bits: u32,
    /// ADC full scale in units of one full-scale cell at full input.
    pub out_bound: f64,
    /// Learning rate of input ranges and channel scales.
    pub range_lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    /// Initial (and, when not learned, fixed) input range of every tile.
    pub initial_input_range: f64,
    /// Floating-point training before the noisy finetune; 0 skips it.
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sigma_w: 0.06,
            sigma_out: 0.1,
            lr_init: 5e-5,
            lr_final: 5e-8,
            epochs: 20,
            batch_size: 8,
            decay_eta: 1e-2,
            learn_input_range: false,
            learn_conductance_scale: false,
            enable_quantization: true,
            dac_bits: 8,
            adc_bits: 8,
            out_bound: 10.0,
            range_lr: 1e-3,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            initial_input_range: 1.0,
            pretrain_epochs: 40,
            pretrain_lr: 1e-2,
            pretrain_batch_size: 32,
        }
    }
}

impl TrainConfig {
    /// Quantizer widths and ADC bound taken from the hardware.
    pub fn matched_to(mut self, hw: &TileHardwareConfig) -> Self {
        self.dac_bits = hw.dac_bits;
        self.adc_bits = hw.adc_bits;
        self.out_bound = hw.saturating_pes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AimcError::InvalidConfig(m.into()));
        if self.epochs == 0 || self.batch_size == 0 || self.pretrain_batch_size == 0 {
            return bad("epochs and batch sizes must be >= 1");
        }
        if !(self.lr_final >= 0.0 && self.lr_final <= self.lr_init) {
            return bad("need 0 <= lr_final <= lr_init");
        }
        if !(self.decay_eta >= 0.0) {
            return bad("decay_eta must be >= 0");
        }
        if !(self.sigma_w >= 0.0 && self.sigma_out >= 0.0) {
            return bad("noise stds must be >= 0");
        }
        if self.dac_bits == 0 || self.adc_bits == 0 || !(self.out_bound > 0.0) {
            return bad("quantizer settings must be positive");
        }
        if !(self.initial_input_range > 0.0) {
            return bad("initial_input_range must be > 0");
        }
        if !(self.range_lr >= 0.0 && self.pretrain_lr >= 0.0 && self.weight_decay >= 0.0) {
            return bad("learning rates and weight decay must be >= 0");
        }
        Ok(())
    }
}

/// Input-range learning rule:
///
/// `Σ_{x ≥ X_r} min(g, 0) − Σ_{x ≤ −X_r} max(g, 0) + X_r · η · #{|x| < X_r} / N`
pub fn input_range_gradient(x_cached: &[f64], grad_x: &[f64], x_r: f64, eta: f64) -> f64 {
    let mut clipped = 0.0;
    let mut inside = 0usize;
    for (&x, &g) in x_cached.iter().zip(grad_x) {
        if x >= x_r {
            clipped += g.min(0.0);
        } else if x <= -x_r {
            clipped -= g.max(0.0);
        } else {
            inside += 1;
        }
    }
    let n = x_cached.len().max(1) as f64;
    clipped + x_r * eta * inside as f64 / n
}

/// `grad_η[j] = Σ_b grad_s[b][j] · a[b][j]`.
pub fn channel_scale_gradient(grad_s: &Matrix, pre_scale: &Matrix) -> Vec<f64> {
    let mut g = vec![0.0; grad_s.cols()];
    for b in 0..grad_s.rows() {
        for ((gj, &d), &a) in g.iter_mut().zip(grad_s.row(b)).zip(pre_scale.row(b)) {
            *gj += d * a;
        }
    }
    g
}

/// Which parts of the hardware path a forward pass models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileOptions {
    pub sigma_w: f64,
    pub sigma_out: f64,
    pub clip_input: bool,
    pub clip_output: bool,
    pub quantize: bool,
    pub dac_bits: u32,
    pub adc_bits: u32,
    pub out_bound: f64,
}

impl TileOptions {
    /// Noise-free floating point.
    pub fn exact() -> Self {
        Self {
            sigma_w: 0.0,
            sigma_out: 0.0,
            clip_input: false,
            clip_output: false,
            quantize: false,
            dac_bits: 8,
            adc_bits: 8,
            out_bound: 1.0,
        }
    }

    pub fn from_config(cfg: &TrainConfig, noisy: bool) -> Self {
        Self {
            sigma_w: if noisy { cfg.sigma_w } else { 0.0 },
            sigma_out: if noisy { cfg.sigma_out } else { 0.0 },
            clip_input: cfg.learn_input_range,
            clip_output: cfg.learn_conductance_scale,
            quantize: cfg.enable_quantization,
            dac_bits: cfg.dac_bits,
            adc_bits: cfg.adc_bits,
            out_bound: cfg.out_bound,
        }
    }
}

/// Values kept from a tile forward for its backward pass.
#[derive(Debug, Clone)]
pub struct TileCache {
    pub x: Matrix,
    pub u: Matrix,
    /// Noisy weights actually used.
    pub w: Matrix,
    /// Pre-scale accumulation `a`.
    pub a: Matrix,
    /// Output not clipped by the ADC.
    pub pass: Vec<bool>,
    /// ADC output level where the output clipped, zero elsewhere.
    pub clipped: Vec<f64>,
    pub x_r: f64,
}

#[derive(Debug, Clone)]
pub struct TileGrads {
    pub x: Matrix,
    pub w: Matrix,
    pub eta: Vec<f64>,
    pub x_r: f64,
}

/// Training forward of one tile over a batch (`x`: batch × rows).
pub fn tile_train_forward<R: rand::Rng + ?Sized>(
    w: &Matrix,
    x: &Matrix,
    x_r: f64,
    eta: &[f64],
    opts: &TileOptions,
    gen: &mut R,
) -> Result<(Matrix, TileCache)> {
    let (rows, cols) = w.shape();
    if x.cols() != rows || eta.len() != cols {
        return Err(AimcError::Shape("tile forward operand shapes".into()));
    }
    if !(x_r > 0.0) {
        return Err(AimcError::InvalidConfig(format!(
            "input range {x_r} must be > 0"
        )));
    }
    let dac = UniformQuantizer::new(x_r, opts.dac_bits)?;
    let u = x.map(|v| {
        if opts.clip_input {
            let c = if opts.quantize {
                dac.quantize(v)
            } else {
                dac.clip(v)
            };
            c / x_r
        } else {
            v / x_r
        }
    });
    let wn = if opts.sigma_w > 0.0 {
        w.map(|v| v + opts.sigma_w * standard_normal(gen))
    } else {
        w.clone()
    };
    let batch = x.rows();
    let mut a = Matrix::zeros(batch, cols);
    for b in 0..batch {
        wn.vec_mul_into(u.row(b), a.row_mut(b));
    }
    let adc = UniformQuantizer::new(opts.out_bound, opts.adc_bits)?;
    let mut y = Matrix::zeros(batch, cols);
    let mut pass = vec![true; batch * cols];
    let mut clipped = vec![0.0; batch * cols];
    for b in 0..batch {
        for j in 0..cols {
            let mut s = eta[j] * a.get(b, j);
            if opts.sigma_out > 0.0 {
                s += opts.sigma_out * standard_normal(gen);
            }
            if opts.clip_output {
                pass[b * cols + j] = s.abs() <= opts.out_bound;
                s = if opts.quantize {
                    adc.quantize(s)
                } else {
                    adc.clip(s)
                };
                if !pass[b * cols + j] {
                    clipped[b * cols + j] = s;
                }
            }
            y.set(b, j, x_r * s);
        }
    }
    Ok((
        y,
        TileCache {
            x: x.clone(),
            u,
            w: wn,
            a,
            pass,
            clipped,
            x_r,
        },
    ))
}

/// Backward of [`tile_train_forward`] given `dy` (batch × cols).
pub fn tile_train_backward(
    cache: &TileCache,
    dy: &Matrix,
    eta: &[f64],
    opts: &TileOptions,
    decay_eta: f64,
) -> TileGrads {
    let (rows, cols) = cache.w.shape();
    let batch = dy.rows();
    let x_r = cache.x_r;
    let mut ds = Matrix::zeros(batch, cols);
    for b in 0..batch {
        for j in 0..cols {
            if cache.pass[b * cols + j] {
                ds.set(b, j, x_r * dy.get(b, j));
            }
        }
    }
    let grad_eta = channel_scale_gradient(&ds, &cache.a);
    let da = Matrix::from_fn(batch, cols, |b, j| ds.get(b, j) * eta[j]);

    let mut gw = Matrix::zeros(rows, cols);
    let mut du = Matrix::zeros(batch, rows);
    for b in 0..batch {
        let (ub, dab) = (cache.u.row(b), da.row(b));
        for (i, &ui) in ub.iter().enumerate() {
            let acc: f64 = cache
                .w
                .row(i)
                .iter()
                .zip(dab)
                .fold(0.0, |s, (w, d)| s + w * d);
            du.set(b, i, acc);
            if ui != 0.0 {
                for (g, &d) in gw.row_mut(i).iter_mut().zip(dab) {
                    *g += ui * d;
                }
            }
        }
    }

    // gradient with respect to the clipped input
    let dxc = du.map(|v| v / x_r);
    let (gx, gxr) = if opts.clip_input {
        let gx = Matrix::from_fn(batch, rows, |b, i| {
            if cache.x.get(b, i).abs() < x_r {
                dxc.get(b, i)
            } else {
                0.0
            }
        });
        // y = x_r · s, and a clipped s no longer depends on x_r
        let out_term: f64 = cache
            .clipped
            .iter()
            .zip(dy.as_slice())
            .map(|(c, d)| c * d)
            .sum();
        let gxr =
            input_range_gradient(cache.x.as_slice(), dxc.as_slice(), x_r, decay_eta) + out_term;
        (gx, gxr)
    } else {
        (dxc, 0.0)
    };
    TileGrads {
        x: gx,
        w: gw,
        eta: grad_eta,
        x_r: gxr,
    }
}

/// One noisy forward of a single vector through unit weights with `X_r = 1`,
/// `η = 1`; quantizers follow `cfg.enable_quantization`.
pub fn noisy_forward(w: &Matrix, x: &[f64], cfg: &TrainConfig, rng: RngStream) -> Result<Vec<f64>> {
    let opts = TileOptions {
        clip_input: cfg.enable_quantization,
        clip_output: cfg.enable_quantization,
        ..TileOptions::from_config(cfg, true)
    };
    let xs = Matrix::from_vec(1, x.len(), x.to_vec())?;
    let mut gen = rng.generator();
    let eta = vec![1.0; w.cols()];
    let (y, _) = tile_train_forward(w, &xs, 1.0, &eta, &opts, &mut gen)?;
    Ok(y.into_vec())
}

/// Softmax cross-entropy averaged over the batch, with its gradient.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let n = logits.rows().max(1) as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        let row = logits.row(b);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        loss += z.ln() + m - row[label];
        for (j, g) in grad.row_mut(b).iter_mut().enumerate() {
            let p = (row[j] - m).exp() / z;
            *g = (p - if j == label { 1.0 } else { 0.0 }) / n;
        }
    }
    (loss / n, grad)
}

struct LayerCache {
    tiles: Vec<TileCache>,
    /// pre-activation output
    z: Matrix,
}

/// Network forward through the training path. With `gen = None` no noise
/// is drawn regardless of `opts`.
fn network_forward<R: rand::Rng + ?Sized>(
    net: &MappedNetwork,
    x: &Matrix,
    opts: &TileOptions,
    mut gen: Option<&mut R>,
) -> Result<(Matrix, Vec<LayerCache>)> {
    let quiet = TileOptions {
        sigma_w: 0.0,
        sigma_out: 0.0,
        ..*opts
    };
    let mut input = x.clone();
    let mut caches = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let mut z = Matrix::zeros(input.rows(), layer.out_dim());
        let mut tiles = Vec::with_capacity(layer.tiles.len());
        for (t, a) in layer.tiles.iter().enumerate() {
            let xs = column_block(&input, a.row_span.start, a.row_span.len);
            let w = layer.tile_weights(t);
            let (y, cache) = match gen.as_deref_mut() {
                Some(g) => tile_train_forward(
                    &w,
                    &xs,
                    layer.input_ranges[t],
                    &layer.scales[t].eta,
                    opts,
                    g,
                )?,
                None => {
                    let mut unused = RngStream::new(0, 0).generator();
                    tile_train_forward(
                        &w,
                        &xs,
                        layer.input_ranges[t],
                        &layer.scales[t].eta,
                        &quiet,
                        &mut unused,
                    )?
                }
            };
            for b in 0..y.rows() {
                let row = z.row_mut(b);
                for (j, v) in y.row(b).iter().enumerate() {
                    row[a.col_span.start + j] += v;
                }
            }
            tiles.push(cache);
        }
        for b in 0..z.rows() {
            for (v, c) in z.row_mut(b).iter_mut().zip(&layer.bias) {
                *v += c;
            }
        }
        input = if layer.relu {
            z.map(|v| v.max(0.0))
        } else {
            z.clone()
        };
        caches.push(LayerCache { tiles, z });
    }
    Ok((input, caches))
}

/// Gradients of every trainable quantity, laid out like the network.
#[derive(Debug, Clone)]
pub struct NetworkGrads {
    pub weights: Vec<Matrix>,
    pub bias: Vec<Vec<f64>>,
    pub eta: Vec<Vec<Vec<f64>>>,
    pub input_ranges: Vec<Vec<f64>>,
}

fn network_backward(
    net: &MappedNetwork,
    caches: &[LayerCache],
    d_out: Matrix,
    opts: &TileOptions,
    decay_eta: f64,
) -> NetworkGrads {
    let n = net.layers.len();
    let mut grads = NetworkGrads {
        weights: net
            .layers
            .iter()
            .map(|l| Matrix::zeros(l.in_dim(), l.out_dim()))
            .collect(),
        bias: net.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        eta: net
            .layers
            .iter()
            .map(|l| l.scales.iter().map(|s| vec![0.0; s.eta.len()]).collect())
            .collect(),
        input_ranges: net
            .layers
            .iter()
            .map(|l| vec![0.0; l.tiles.len()])
            .collect(),
    };
    let mut d = d_out;
    for l in (0..n).rev() {
        let layer = &net.layers[l];
        let cache = &caches[l];
        if layer.relu {
            for (g, &z) in d.as_mut_slice().iter_mut().zip(cache.z.as_slice()) {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        for b in 0..d.rows() {
            for (gb, v) in grads.bias[l].iter_mut().zip(d.row(b)) {
                *gb += v;
            }
        }
        let mut dx = Matrix::zeros(d.rows(), layer.in_dim());
        for (t, a) in layer.tiles.iter().enumerate() {
            let dy = column_block(&d, a.col_span.start, a.col_span.len);
            let g =
                tile_train_backward(&cache.tiles[t], &dy, &layer.scales[t].eta, opts, decay_eta);
            for i in 0..a.row_span.len {
                for j in 0..a.col_span.len {
                    let (r, c) = (a.row_span.start + i, a.col_span.start + j);
                    let v = grads.weights[l].get(r, c) + g.w.get(i, j);
                    grads.weights[l].set(r, c, v);
                }
            }
            for b in 0..dx.rows() {
                let row = dx.row_mut(b);
                for (i, v) in g.x.row(b).iter().enumerate() {
                    row[a.row_span.start + i] += v;
                }
            }
            grads.eta[l][t] = g.eta;
            grads.input_ranges[l][t] = g.x_r;
        }
        d = dx;
    }
    grads
}

/// Adam moments for one parameter vector.
#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone)]
struct AdamW {
    betas: (f64, f64),
    eps: f64,
    t: i32,
}

impl AdamW {
    fn update(&self, p: &mut [f64], g: &[f64], st: &mut Moments, lr: f64, wd: f64) {
        if st.m.len() != p.len() {
            st.m = vec![0.0; p.len()];
            st.v = vec![0.0; p.len()];
        }
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for k in 0..p.len() {
            st.m[k] = b1 * st.m[k] + (1.0 - b1) * g[k];
            st.v[k] = b2 * st.v[k] + (1.0 - b2) * g[k] * g[k];
            let mh = st.m[k] / c1;
            let vh = st.v[k] / c2;
            p[k] -= lr * (mh / (vh.sqrt() + self.eps) + wd * p[k]);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
struct Schedule {
    lr_init: f64,
    lr_final: f64,
    total_steps: usize,
}

impl Schedule {
    fn at(&self, step: usize) -> f64 {
        if self.total_steps <= 1 {
            return self.lr_init;
        }
        let f = step as f64 / (self.total_steps - 1) as f64;
        self.lr_init + (self.lr_final - self.lr_init) * f
    }
}

struct Optimizer {
    adam: AdamW,
    weights: Vec<Moments>,
    bias: Vec<Moments>,
    eta: Vec<Vec<Moments>>,
    ranges: Vec<Moments>,
}

impl Optimizer {
    fn new(net: &MappedNetwork, cfg: &TrainConfig) -> Self {
        Self {
            adam: AdamW {
                betas: cfg.betas,
                eps: cfg.adam_eps,
                t: 0,
            },
            weights: vec![Moments::default(); net.layers.len()],
            bias: vec![Moments::default(); net.layers.len()],
            eta: net
                .layers
                .iter()
                .map(|l| vec![Moments::default(); l.tiles.len()])
                .collect(),
            ranges: vec![Moments::default(); net.layers.len()],
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        net: &mut MappedNetwork,
        g: &NetworkGrads,
        lr: f64,
        range_lr: f64,
        wd: f64,
        learn_ranges: bool,
        learn_scales: bool,
    ) {
        self.adam.t += 1;
        for (l, layer) in net.layers.iter_mut().enumerate() {
            self.adam.update(
                layer.weights.as_mut_slice(),
                g.weights[l].as_slice(),
                &mut self.weights[l],
                lr,
                wd,
            );
            for w in layer.weights.as_mut_slice() {
                *w = w.clamp(-1.0, 1.0);
            }
            self.adam
                .update(&mut layer.bias, &g.bias[l], &mut self.bias[l], lr, 0.0);
            if learn_scales {
                for (t, s) in layer.scales.iter_mut().enumerate() {
                    self.adam
                        .update(&mut s.eta, &g.eta[l][t], &mut self.eta[l][t], range_lr, 0.0);
                    s.project();
                }
            }
            if learn_ranges {
                self.adam.update(
                    &mut layer.input_ranges,
                    &g.input_ranges[l],
                    &mut self.ranges[l],
                    range_lr,
                    0.0,
                );
                for r in &mut layer.input_ranges {
                    *r = r.max(MIN_INPUT_RANGE);
                }
            }
        }
    }
}

/// Loss and accuracy of the noise-free training path.
pub fn evaluate(net: &MappedNetwork, data: &Dataset, opts: &TileOptions) -> Result<(f64, f64)> {
    let (logits, _) = network_forward::<rand_chacha::ChaCha8Rng>(net, &data.x, opts, None)?;
    let (loss, _) = cross_entropy(&logits, &data.labels);
    Ok((loss, accuracy(&logits, &data.labels)))
}

fn shuffled(n: usize, rng: RngStream) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng.generator());
    idx
}

#[allow(clippy::too_many_arguments)]
fn run_epochs(
    net: &mut MappedNetwork,
    train: &Dataset,
    val: &Dataset,
    opts: &TileOptions,
    noisy: bool,
    sched: Schedule,
    epochs: usize,
    batch_size: usize,
    cfg: &TrainConfig,
    learn_ranges: bool,
    learn_scales: bool,
    rng: RngStream,
) -> Result<Vec<EpochMetrics>> {
    let mut opt = Optimizer::new(net, cfg);
    let eval_opts = TileOptions {
        sigma_w: 0.0,
        sigma_out: 0.0,
        ..*opts
    };
    let mut metrics = Vec::with_capacity(epochs);
    let mut step = 0;
    for epoch in 0..epochs {
        let order = shuffled(train.len(), rng.derive(epoch as u64).derive(0));
        let mut noise = rng.derive(epoch as u64).derive(1).generator();
        let (mut sum_loss, mut seen) = (0.0, 0usize);
        for (k, idx) in order.chunks(batch_size).enumerate() {
            let batch = train.select(idx);
            let (logits, caches) = if noisy {
                network_forward(net, &batch.x, opts, Some(&mut noise))?
            } else {
                network_forward::<rand_chacha::ChaCha8Rng>(net, &batch.x, opts, None)?
            };
            let (loss, d) = cross_entropy(&logits, &batch.labels);
            if !loss.is_finite() {
                return Err(AimcError::TrainingFailure {
                    epoch,
                    step: k,
                    reason: format!("loss is {loss}"),
                });
            }
            let grads = network_backward(net, &caches, d, opts, cfg.decay_eta);
            opt.step(
                net,
                &grads,
                sched.at(step),
                cfg.range_lr,
                cfg.weight_decay,
                learn_ranges,
                learn_scales,
            );
            step += 1;
            sum_loss += loss * batch.len() as f64;
            seen += batch.len();
        }
        let (val_loss, val_acc) = evaluate(net, val, &eval_opts)?;
        metrics.push(EpochMetrics {
            epoch,
            split: "train".into(),
            loss: sum_loss / seen.max(1) as f64,
            accuracy: f64::NAN,
            seed: rng.seed,
        });
        metrics.push(EpochMetrics {
            epoch,
            split: "val".into(),
            loss: val_loss,
            accuracy: val_acc,
            seed: rng.seed,
        });
    }
    Ok(metrics)
}

/// Floating-point training (no noise, no clipping, ranges and scales fixed).
pub fn pretrain(
    net: &mut MappedNetwork,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    rng: RngStream,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if cfg.pretrain_epochs == 0 {
        return Ok(Vec::new());
    }
    let steps = cfg.pretrain_epochs * train.len().div_ceil(cfg.pretrain_batch_size);
    let sched = Schedule {
        lr_init: cfg.pretrain_lr,
        lr_final: cfg.pretrain_lr * 0.01,
        total_steps: steps,
    };
    run_epochs(
        net,
        train,
        val,
        &TileOptions::exact(),
        false,
        sched,
        cfg.pretrain_epochs,
        cfg.pretrain_batch_size,
        cfg,
        false,
        false,
        rng,
    )
}

/// Hardware-aware finetune; returns one train and one val row per epoch.
pub fn finetune(
    net: &mut MappedNetwork,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    rng: RngStream,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(AimcError::EmptyInput(
            "training needs non-empty splits".into(),
        ));
    }
    let steps = cfg.epochs * train.len().div_ceil(cfg.batch_size);
    let sched = Schedule {
        lr_init: cfg.lr_init,
        lr_final: cfg.lr_final,
        total_steps: steps,
    };
    let opts = TileOptions::from_config(cfg, true);
    run_epochs(
        net,
        train,
        val,
        &opts,
        true,
        sched,
        cfg.epochs,
        cfg.batch_size,
        cfg,
        cfg.learn_input_range,
        cfg.learn_conductance_scale,
        rng,
    )
}
