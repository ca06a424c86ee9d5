//! A small trainable denoiser with the shared-encoder / three-head shape.
//!
//! Each latent row is `[latent_scale * u_i | x_i^t | log O_i^t]`: learned
//! features `u_i` next to the residue's raw noisy coordinates and rotation
//! vector. The encoder computes `u_i` with a per-residue layer over
//! `[type one-hot | coords | flattened orientation | time embedding |
//! position embedding | pooled context]` and a second layer that also sees the
//! mean of all residues' hidden states.
//!
//! Each decoder is a one-hidden-layer head over `[u_i | x_i | log O_i | time
//! embedding]`. The type head gives logits. The coordinate head predicts the
//! clean coordinates `x0`, mixed as `c0 * x0 + ct * x^t` with the schedule's
//! posterior coefficients. The rotation head predicts a body-frame rotation
//! vector `w`, giving `O^t exp(w)`.
//!
//! Training regresses the heads onto a teacher's posterior parameters (the
//! mixture oracle): KL for types, squared error on the implied `x0` and on
//! the implied `w`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{softmax_in_place, Denoiser, DenoiserOutput, LatentCode};
use crate::diffusion::forward_state;
use crate::error::{Error, Result};
use crate::schedule::{NoiseSchedule, ScheduleParams};
use crate::so3::{Rotation, Vec3};
use crate::state::{CdrState, ChainTag, ComplexContext, NUM_TYPES};

pub const CHECKPOINT_FORMAT: &str = "cdr-codesign.toy-denoiser";
pub const CHECKPOINT_VERSION: u32 = 1;

const CONTEXT_FEATURES: usize = NUM_TYPES + 3 + 9 + 3;
/// Raw coordinate and rotation-vector channels at the end of each latent row.
const PASSTHROUGH: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyModelConfig {
    /// Total latent width, including the six raw channels.
    pub latent_dim: usize,
    pub hidden: usize,
    pub decoder_hidden: usize,
    pub time_features: usize,
    pub position_features: usize,
    /// Learned channels are `latent_scale * tanh(..)`; decoders read them divided back.
    pub latent_scale: f64,
    pub schedule: ScheduleParams,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            hidden: 128,
            decoder_hidden: 64,
            time_features: 8,
            position_features: 8,
            latent_scale: 0.02,
            schedule: ScheduleParams::default(),
        }
    }
}

impl ToyModelConfig {
    fn input_dim(&self) -> usize {
        NUM_TYPES + 3 + 9 + self.time_features + self.position_features + CONTEXT_FEATURES
    }

    fn learned_dim(&self) -> usize {
        self.latent_dim - PASSTHROUGH
    }

    fn validate(&self) -> Result<()> {
        if self.latent_dim <= PASSTHROUGH || self.hidden == 0 || self.decoder_hidden == 0 {
            return Err(Error::Config(format!(
                "toy model needs latent_dim > {PASSTHROUGH} and positive widths"
            )));
        }
        if self.time_features % 2 != 0 || self.position_features % 2 != 0 {
            return Err(Error::Config("embedding widths must be even".into()));
        }
        if !(self.latent_scale > 0.0) {
            return Err(Error::Config("latent_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Linear {
    w: DMatrix<f64>,
    b: DVector<f64>,
}

impl Linear {
    fn init<R: Rng + ?Sized>(out: usize, inp: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (inp + out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Self {
            w: DMatrix::from_fn(out, inp, |_, _| dist.sample(rng)),
            b: DVector::zeros(out),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            w: DMatrix::zeros(self.w.nrows(), self.w.ncols()),
            b: DVector::zeros(self.b.len()),
        }
    }

    fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.w * x + &self.b
    }
}

fn tanh(v: DVector<f64>) -> DVector<f64> {
    v.map(f64::tanh)
}

fn sinusoid(x: f64, width: usize, out: &mut Vec<f64>) {
    for k in 0..width / 2 {
        let w = std::f64::consts::FRAC_PI_2 * (1u64 << k) as f64;
        out.push((w * x).sin());
        out.push((w * x).cos());
    }
}

// Layer order in `ToyDenoiser::layers`.
const ENC1: usize = 0;
const ENC2: usize = 1;
const SEQ: usize = 2;
const COORD: usize = 4;
const ROT: usize = 6;
const N_LAYERS: usize = 8;
const LAYER_NAMES: [&str; N_LAYERS] = [
    "encoder.residue",
    "encoder.pooled",
    "seq.hidden",
    "seq.out",
    "coord.hidden",
    "coord.out",
    "rot.hidden",
    "rot.out",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    cfg: ToyModelConfig,
    schedule: NoiseSchedule,
    layers: Vec<Linear>,
}

/// Intermediate values of one encoder pass, kept for backpropagation.
struct EncoderTrace {
    inputs: Vec<DVector<f64>>,
    hidden: Vec<DVector<f64>>,
    pooled_in: Vec<DVector<f64>>,
    /// `u_i = tanh(..)`, before `latent_scale`.
    learned: Vec<DVector<f64>>,
}

struct HeadTrace {
    input: DVector<f64>,
    hidden: DVector<f64>,
    out: DVector<f64>,
}

/// One decoded residue: raw head outputs plus the raw channels they act on.
struct ResidueDecode {
    heads: [HeadTrace; 3],
    x_t: Vec3,
    o_t: Rotation,
}

impl ToyDenoiser {
    pub fn new<R: Rng + ?Sized>(cfg: ToyModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let schedule = cfg.schedule.build()?;
        let head_in = cfg.learned_dim() + PASSTHROUGH + cfg.time_features;
        let layers = vec![
            Linear::init(cfg.hidden, cfg.input_dim(), rng),
            Linear::init(cfg.learned_dim(), 2 * cfg.hidden, rng),
            Linear::init(cfg.decoder_hidden, head_in, rng),
            Linear::init(NUM_TYPES, cfg.decoder_hidden, rng),
            Linear::init(cfg.decoder_hidden, head_in, rng),
            Linear::init(3, cfg.decoder_hidden, rng),
            Linear::init(cfg.decoder_hidden, head_in, rng),
            Linear::init(3, cfg.decoder_hidden, rng),
        ];
        Ok(Self {
            cfg,
            schedule,
            layers,
        })
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn time_embedding(&self, t: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.cfg.time_features);
        sinusoid(
            t as f64 / self.schedule.steps() as f64,
            self.cfg.time_features,
            &mut v,
        );
        v
    }

    fn context_summary(ctx: &ComplexContext) -> Vec<f64> {
        let mut v = vec![0.0; CONTEXT_FEATURES];
        let n = ctx.len().max(1) as f64;
        for j in 0..ctx.len() {
            v[ctx.types[j].index()] += 1.0 / n;
            for a in 0..3 {
                v[NUM_TYPES + a] += ctx.coords[j][a] / n;
            }
            for (k, x) in ctx.orients[j].to_row_major().iter().enumerate() {
                v[NUM_TYPES + 3 + k] += x / n;
            }
            let tag = match ctx.chain_tags[j] {
                ChainTag::Antigen => 0,
                ChainTag::Heavy => 1,
                ChainTag::Light => 2,
            };
            v[NUM_TYPES + 12 + tag] += 1.0 / n;
        }
        v
    }

    fn residue_inputs(
        &self,
        state: &CdrState,
        ctx: &ComplexContext,
        t: usize,
    ) -> Vec<DVector<f64>> {
        let m = state.len();
        let temb = self.time_embedding(t);
        let csum = Self::context_summary(ctx);
        (0..m)
            .map(|i| {
                let mut f = vec![0.0; NUM_TYPES];
                f[state.types[i].index()] = 1.0;
                f.extend(state.coords[i].iter());
                f.extend(state.orients[i].to_row_major());
                f.extend(&temb);
                sinusoid(
                    (i as f64 + 0.5) / m as f64,
                    self.cfg.position_features,
                    &mut f,
                );
                f.extend(&csum);
                DVector::from_vec(f)
            })
            .collect()
    }

    fn encode_trace(&self, state: &CdrState, ctx: &ComplexContext, t: usize) -> EncoderTrace {
        let inputs = self.residue_inputs(state, ctx, t);
        let hidden: Vec<DVector<f64>> = inputs
            .iter()
            .map(|x| tanh(self.layers[ENC1].forward(x)))
            .collect();
        let mut pooled = DVector::zeros(self.cfg.hidden);
        for h in &hidden {
            pooled += h;
        }
        pooled /= hidden.len() as f64;
        let pooled_in: Vec<DVector<f64>> = hidden
            .iter()
            .map(|h| {
                let mut v = DVector::zeros(2 * self.cfg.hidden);
                v.rows_mut(0, self.cfg.hidden).copy_from(h);
                v.rows_mut(self.cfg.hidden, self.cfg.hidden)
                    .copy_from(&pooled);
                v
            })
            .collect();
        let learned = pooled_in
            .iter()
            .map(|y| tanh(self.layers[ENC2].forward(y)))
            .collect();
        EncoderTrace {
            inputs,
            hidden,
            pooled_in,
            learned,
        }
    }

    fn head(&self, first: usize, input: &DVector<f64>) -> HeadTrace {
        let hidden = tanh(self.layers[first].forward(input));
        let out = self.layers[first + 1].forward(&hidden);
        HeadTrace {
            input: input.clone(),
            hidden,
            out,
        }
    }

    /// Decode latent rows given as `[u | x^t | log O^t]` with `u` unscaled.
    fn decode_rows(&self, rows: &[DVector<f64>], t: usize) -> (Vec<ResidueDecode>, DenoiserOutput) {
        let temb = self.time_embedding(t);
        let (c0, ct) = self.schedule.posterior_coefficients(t);
        let l = self.cfg.learned_dim();
        let mut traces = Vec::with_capacity(rows.len());
        let mut out = DenoiserOutput {
            seq_probs: vec![],
            coord_means: vec![],
            orient_means: vec![],
        };
        for v in rows {
            let mut input = DVector::zeros(l + PASSTHROUGH + temb.len());
            input.rows_mut(0, l + PASSTHROUGH).copy_from(v);
            for (k, x) in temb.iter().enumerate() {
                input[l + PASSTHROUGH + k] = *x;
            }
            let x_t = Vec3::new(v[l], v[l + 1], v[l + 2]);
            let o_t = Rotation::exp(&Vec3::new(v[l + 3], v[l + 4], v[l + 5]));
            let seq = self.head(SEQ, &input);
            let coord = self.head(COORD, &input);
            let rot = self.head(ROT, &input);
            let mut probs = [0.0; NUM_TYPES];
            probs.copy_from_slice(seq.out.as_slice());
            softmax_in_place(&mut probs);
            out.seq_probs.push(probs);
            let x0 = Vec3::new(coord.out[0], coord.out[1], coord.out[2]);
            out.coord_means.push(x0 * c0 + x_t * ct);
            let w = Vec3::new(rot.out[0], rot.out[1], rot.out[2]);
            out.orient_means.push(o_t.compose(&Rotation::exp(&w)));
            traces.push(ResidueDecode {
                heads: [seq, coord, rot],
                x_t,
                o_t,
            });
        }
        (traces, out)
    }

    fn latent_rows(&self, state: &CdrState, enc: &EncoderTrace) -> Vec<DVector<f64>> {
        let l = self.cfg.learned_dim();
        (0..state.len())
            .map(|i| {
                let mut v = DVector::zeros(l + PASSTHROUGH);
                v.rows_mut(0, l).copy_from(&enc.learned[i]);
                let rv = state.orients[i].log();
                for a in 0..3 {
                    v[l + a] = state.coords[i][a];
                    v[l + 3 + a] = rv[a];
                }
                v
            })
            .collect()
    }

    /// Head-space regression targets implied by teacher posterior parameters.
    fn head_targets(
        &self,
        dec: &ResidueDecode,
        target: &DenoiserOutput,
        i: usize,
        t: usize,
    ) -> (Vec3, Vec3) {
        let (c0, ct) = self.schedule.posterior_coefficients(t);
        let x0 = (target.coord_means[i] - dec.x_t * ct) / c0;
        let w = dec.o_t.inverse().compose(&target.orient_means[i]).log();
        (x0, w)
    }

    /// Per-example loss and, when `grads` is given, its gradient accumulated
    /// into `grads`.
    fn loss_and_grad(
        &self,
        ex: &Example,
        ctx: &ComplexContext,
        grads: Option<&mut [Linear]>,
    ) -> LossParts {
        let enc = self.encode_trace(&ex.state, ctx, ex.t);
        let rows = self.latent_rows(&ex.state, &enc);
        let (dec, out) = self.decode_rows(&rows, ex.t);
        let m = ex.state.len();
        let inv_m = 1.0 / m as f64;
        let mut parts = LossParts::default();
        let mut d_outs = Vec::with_capacity(m);
        for i in 0..m {
            let p = &out.seq_probs[i];
            let q = &ex.target.seq_probs[i];
            let kl: f64 = q
                .iter()
                .zip(p)
                .filter(|(qi, _)| **qi > 0.0)
                .map(|(qi, pi)| qi * (qi / pi.max(1e-300)).ln())
                .sum();
            parts.seq += kl * inv_m;
            let (x0, w) = self.head_targets(&dec[i], &ex.target, i, ex.t);
            let dx = DVector::from_fn(3, |k, _| dec[i].heads[1].out[k] - x0[k]);
            let dw = DVector::from_fn(3, |k, _| dec[i].heads[2].out[k] - w[k]);
            parts.coord += dx.norm_squared() * inv_m;
            parts.rot += dw.norm_squared() * inv_m;
            if grads.is_some() {
                let d_seq = DVector::from_fn(NUM_TYPES, |k, _| (p[k] - q[k]) * inv_m);
                d_outs.push([d_seq, dx * (2.0 * inv_m), dw * (2.0 * inv_m)]);
            }
        }
        let Some(grads) = grads else {
            return parts;
        };

        let l = self.cfg.learned_dim();
        let h = self.cfg.hidden;
        let mut d_hidden: Vec<DVector<f64>> = Vec::with_capacity(m);
        let mut d_pooled = DVector::zeros(h);
        for i in 0..m {
            let mut d_learned = DVector::zeros(l);
            for (k, first) in [SEQ, COORD, ROT].into_iter().enumerate() {
                let tr = &dec[i].heads[k];
                let dy = &d_outs[i][k];
                grads[first + 1].w += dy * tr.hidden.transpose();
                grads[first + 1].b += dy;
                let da = self.layers[first + 1].w.tr_mul(dy);
                let dpre = da.component_mul(&tr.hidden.map(|a| 1.0 - a * a));
                grads[first].w += &dpre * tr.input.transpose();
                grads[first].b += &dpre;
                let dq = self.layers[first].w.tr_mul(&dpre);
                d_learned += dq.rows(0, l);
            }
            let u = &enc.learned[i];
            let dp2 = d_learned.component_mul(&u.map(|a| 1.0 - a * a));
            grads[ENC2].w += &dp2 * enc.pooled_in[i].transpose();
            grads[ENC2].b += &dp2;
            let dy = self.layers[ENC2].w.tr_mul(&dp2);
            d_hidden.push(dy.rows(0, h).into_owned());
            d_pooled += dy.rows(h, h);
        }
        d_pooled /= m as f64;
        for i in 0..m {
            let dh = &d_hidden[i] + &d_pooled;
            let dp1 = dh.component_mul(&enc.hidden[i].map(|a| 1.0 - a * a));
            grads[ENC1].w += &dp1 * enc.inputs[i].transpose();
            grads[ENC1].b += &dp1;
        }
        parts
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.cfg.clone(),
            tensors: self
                .layers
                .iter()
                .zip(LAYER_NAMES)
                .flat_map(|(l, name)| {
                    [
                        Tensor {
                            name: format!("{name}.weight"),
                            rows: l.w.nrows(),
                            cols: l.w.ncols(),
                            data: l.w.transpose().as_slice().to_vec(),
                        },
                        Tensor {
                            name: format!("{name}.bias"),
                            rows: l.b.len(),
                            cols: 1,
                            data: l.b.as_slice().to_vec(),
                        },
                    ]
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unexpected format `{}`",
                ck.format
            )));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                ck.version
            )));
        }
        // Shapes come from a freshly built model with the stored config.
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = Self::new(ck.config.clone(), &mut rng)?;
        if ck.tensors.len() != 2 * N_LAYERS {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                2 * N_LAYERS,
                ck.tensors.len()
            )));
        }
        for (k, layer) in model.layers.iter_mut().enumerate() {
            let (w, b) = (&ck.tensors[2 * k], &ck.tensors[2 * k + 1]);
            let name = LAYER_NAMES[k];
            if w.name != format!("{name}.weight") || b.name != format!("{name}.bias") {
                return Err(Error::Checkpoint(format!(
                    "tensor order mismatch at layer `{name}`"
                )));
            }
            if w.rows != layer.w.nrows()
                || w.cols != layer.w.ncols()
                || w.data.len() != w.rows * w.cols
            {
                return Err(Error::Checkpoint(format!("bad shape for `{}`", w.name)));
            }
            if b.rows != layer.b.len() || b.cols != 1 || b.data.len() != b.rows {
                return Err(Error::Checkpoint(format!("bad shape for `{}`", b.name)));
            }
            layer.w = DMatrix::from_row_slice(w.rows, w.cols, &w.data);
            layer.b = DVector::from_column_slice(&b.data);
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        Self::from_checkpoint(&ck)
    }
}

impl Denoiser for ToyDenoiser {
    fn latent_dim(&self) -> usize {
        self.cfg.latent_dim
    }

    fn encode(&self, state: &CdrState, ctx: &ComplexContext, t: usize) -> Result<LatentCode> {
        ctx.check_state(state)?;
        self.schedule.check_time(t)?;
        let enc = self.encode_trace(state, ctx, t);
        let rows = self.latent_rows(state, &enc);
        let l = self.cfg.learned_dim();
        let scale = self.cfg.latent_scale;
        let z = DMatrix::from_fn(state.len(), self.cfg.latent_dim, |i, k| {
            if k < l {
                rows[i][k] * scale
            } else {
                rows[i][k]
            }
        });
        LatentCode::new(z, t)
    }

    fn decode(&self, z: &LatentCode, t: usize) -> Result<DenoiserOutput> {
        self.schedule.check_time(t)?;
        if z.dim() != self.cfg.latent_dim || z.rows() == 0 {
            return Err(Error::Shape(format!(
                "latent width {} vs model {}",
                z.dim(),
                self.cfg.latent_dim
            )));
        }
        let l = self.cfg.learned_dim();
        let scale = self.cfg.latent_scale;
        let rows: Vec<DVector<f64>> = (0..z.rows())
            .map(|i| {
                DVector::from_fn(self.cfg.latent_dim, |k, _| {
                    if k < l {
                        z.values[(i, k)] / scale
                    } else {
                        z.values[(i, k)]
                    }
                })
            })
            .collect();
        Ok(self.decode_rows(&rows, t).1)
    }
}

/// Serialized model: a format tag and version, the model config, and every
/// parameter tensor in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ToyModelConfig,
    pub tensors: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 3e-3,
            validation_size: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub seq: f64,
    pub coord: f64,
    pub rot: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.seq + self.coord + self.rot
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_validation: LossParts,
    pub final_validation: LossParts,
    pub epoch_validation: Vec<f64>,
}

struct Example {
    state: CdrState,
    t: usize,
    target: DenoiserOutput,
}

fn make_examples<R: Rng + ?Sized>(
    items: &[&CdrState],
    ctx: &ComplexContext,
    teacher: &dyn Denoiser,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<Example>> {
    let noisy = items
        .iter()
        .map(|a0| {
            let t = rng.random_range(1..=sched.steps());
            forward_state(a0, sched, t, rng).map(|s| (s, t))
        })
        .collect::<Result<Vec<_>>>()?;
    noisy
        .into_par_iter()
        .map(|(state, t)| {
            let target = teacher.predict(&state, ctx, t)?;
            Ok(Example { state, t, target })
        })
        .collect()
}

fn mean_loss(model: &ToyDenoiser, examples: &[Example], ctx: &ComplexContext) -> LossParts {
    let parts: Vec<LossParts> = examples
        .par_iter()
        .map(|ex| model.loss_and_grad(ex, ctx, None))
        .collect();
    let n = parts.len().max(1) as f64;
    parts.iter().fold(LossParts::default(), |acc, p| LossParts {
        seq: acc.seq + p.seq / n,
        coord: acc.coord + p.coord / n,
        rot: acc.rot + p.rot / n,
    })
}

struct Adam {
    m: Vec<Linear>,
    v: Vec<Linear>,
    step: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [Linear], grads: &[Linear], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.step += 1;
        let c1 = 1.0 - B1.powi(self.step);
        let c2 = 1.0 - B2.powi(self.step);
        for k in 0..params.len() {
            let upd = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for j in 0..p.len() {
                    m[j] = B1 * m[j] + (1.0 - B1) * g[j];
                    v[j] = B2 * v[j] + (1.0 - B2) * g[j] * g[j];
                    p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + 1e-8);
                }
            };
            upd(
                params[k].w.as_mut_slice(),
                grads[k].w.as_slice(),
                self.m[k].w.as_mut_slice(),
                self.v[k].w.as_mut_slice(),
            );
            upd(
                params[k].b.as_mut_slice(),
                grads[k].b.as_slice(),
                self.m[k].b.as_mut_slice(),
                self.v[k].b.as_mut_slice(),
            );
        }
    }
}

/// Fit a freshly initialized [`ToyDenoiser`] to a teacher's posterior
/// parameters on noised copies of `dataset`.
///
/// Every epoch visits each clean item once at a fresh random time and noise
/// draw. A fixed validation set of `validation_size` noised items is drawn
/// before training.
pub fn train_toy_denoiser<R: Rng + ?Sized>(
    dataset: &[CdrState],
    ctx: &ComplexContext,
    teacher: &dyn Denoiser,
    sched: &NoiseSchedule,
    model_cfg: ToyModelConfig,
    train_cfg: TrainConfig,
    rng: &mut R,
) -> Result<(ToyDenoiser, TrainReport)> {
    let Some(first) = dataset.first() else {
        return Err(Error::Config("training dataset is empty".into()));
    };
    if let Some(bad) = dataset.iter().position(|s| s.len() != first.len()) {
        return Err(Error::Shape(format!(
            "dataset item {bad} has a different loop length"
        )));
    }
    ctx.check_state(first)?;
    if model_cfg.schedule != *sched.params() {
        return Err(Error::Config(
            "model schedule must match the training schedule".into(),
        ));
    }
    let mut model = ToyDenoiser::new(model_cfg, rng)?;

    let val_items: Vec<&CdrState> = (0..train_cfg.validation_size)
        .map(|k| &dataset[k % dataset.len()])
        .collect();
    let validation = make_examples(&val_items, ctx, teacher, sched, rng)?;
    let initial = mean_loss(&model, &validation, ctx);
    let mut report = TrainReport {
        initial_validation: initial,
        final_validation: initial,
        epoch_validation: vec![],
    };

    let zeros: Vec<Linear> = model.layers.iter().map(Linear::zeros_like).collect();
    let mut adam = Adam {
        m: zeros.clone(),
        v: zeros.clone(),
        step: 0,
    };
    let batch = train_cfg.batch_size.max(1);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..train_cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            let items: Vec<&CdrState> = chunk.iter().map(|&k| &dataset[k]).collect();
            let examples = make_examples(&items, ctx, teacher, sched, rng)?;
            let partial: Vec<Vec<Linear>> = examples
                .par_iter()
                .map(|ex| {
                    let mut g = zeros.clone();
                    model.loss_and_grad(ex, ctx, Some(&mut g));
                    g
                })
                .collect();
            let mut grads = zeros.clone();
            let scale = 1.0 / partial.len() as f64;
            for g in &partial {
                for (acc, gk) in grads.iter_mut().zip(g) {
                    acc.w += &gk.w * scale;
                    acc.b += &gk.b * scale;
                }
            }
            adam.step(&mut model.layers, &grads, train_cfg.learning_rate);
        }
        report
            .epoch_validation
            .push(mean_loss(&model, &validation, ctx).total());
    }
    report.final_validation = mean_loss(&model, &validation, ctx);
    Ok((model, report))
}
