//! The multi-headed network: one convolutional head per observable (RSSI and
//! SINR), each followed by self-attention or an LSTM, merged into a
//! convolutional body with a dense classifier.
//!
//! ```text
//! head(x[1, w]):  conv×3 (ReLU) → [C, L] → transpose → [L, C]
//!                 attention → [L, E] → dropout → mean over L → [E]
//!              or lstm      → [E]    → dropout
//! body:           concat → [1, 2E] → conv×3 (ReLU) → flatten → dropout
//!                 → dense(100, ReLU) → dense(2) → softmax
//! ```
//!
//! The temporal mean (or the LSTM's final state) makes the parameter count
//! independent of the window length.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::{mhsa_backward, mhsa_forward, AttentionCache, AttentionParams};
use super::layers::{
    conv1d, conv1d_backward, cross_entropy, dense, dense_backward, dropout_mask, relu_backward_inplace,
    relu_inplace, softmax, softmax_cross_entropy_backward, temporal_pool, temporal_pool_backward,
    ConvSpec,
};
use super::lstm::{lstm_backward, lstm_forward, LstmCache, LstmParams};
use super::Tensor;
use crate::dataset::{Label, WindowSample};
use crate::error::{config, shape};
use crate::math::sqrt;
use crate::rng;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Attention,
    Lstm,
}

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub variant: Variant,
    /// Window length fed to each head.
    pub w: usize,
    pub head_convs: Vec<ConvSpec>,
    pub attention_heads: usize,
    pub key_dim: usize,
    /// Per-head embedding width: attention output projection or LSTM units.
    pub embed_dim: usize,
    pub body_convs: Vec<ConvSpec>,
    pub dense_width: usize,
    pub dropout: f64,
    pub classes: usize,
}

/// Upper bound on trainable parameters.
pub const MAX_PARAMS: usize = 100_000;

const TABLE_CONVS: [ConvSpec; 3] = [
    ConvSpec::new(8, 8, 2),
    ConvSpec::new(8, 4, 2),
    ConvSpec::new(8, 3, 1),
];

impl ArchConfig {
    /// Reference configuration: three (8,8,2)/(8,4,2)/(8,3,1) convolutions per
    /// head and in the body, 8 attention heads of width 8 (or 16 LSTM units),
    /// 16-wide embeddings, a 100-unit dense layer, dropout 0.4, two classes.
    pub fn reference(variant: Variant, w: usize) -> Self {
        Self {
            variant,
            w,
            head_convs: TABLE_CONVS.to_vec(),
            attention_heads: 8,
            key_dim: 8,
            embed_dim: 16,
            body_convs: TABLE_CONVS.to_vec(),
            dense_width: 100,
            dropout: 0.4,
            classes: 2,
        }
    }

    fn chain_len(convs: &[ConvSpec], mut len: usize) -> Option<usize> {
        for c in convs {
            len = c.output_len(len)?;
        }
        Some(len)
    }

    /// Sequence length entering the attention/LSTM block.
    pub fn head_seq_len(&self) -> Option<usize> {
        Self::chain_len(&self.head_convs, self.w)
    }

    /// Flattened body width before the dense layer.
    pub fn body_flat_len(&self) -> Option<usize> {
        let len = Self::chain_len(&self.body_convs, 2 * self.embed_dim)?;
        Some(len * self.body_convs.last()?.filters)
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_convs.is_empty() || self.body_convs.is_empty() {
            return Err(config!("head and body need at least one convolution"));
        }
        if self.head_convs.iter().chain(&self.body_convs).any(|c| {
            c.filters == 0 || c.kernel == 0 || c.stride == 0
        }) {
            return Err(config!("convolution specs must be positive"));
        }
        if self.head_seq_len().is_none() {
            return Err(config!("window length {} too short for the head convolutions", self.w));
        }
        if self.body_flat_len().is_none() {
            return Err(config!(
                "embedding width {} too short for the body convolutions",
                self.embed_dim
            ));
        }
        if self.embed_dim == 0 || self.dense_width == 0 || self.classes < 2 {
            return Err(config!("embedding, dense width and class count must be positive"));
        }
        if self.variant == Variant::Attention && (self.attention_heads == 0 || self.key_dim == 0) {
            return Err(config!("attention needs at least one head with a positive key width"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config!("dropout rate {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ConvIdx {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum MixerIdx {
    Attention {
        wq: usize,
        bq: usize,
        wk: usize,
        wv: usize,
        bv: usize,
        wo: usize,
        bo: usize,
    },
    Lstm {
        w: usize,
        u: usize,
        b: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct HeadIdx {
    convs: Vec<ConvIdx>,
    mixer: MixerIdx,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    heads: [HeadIdx; 2],
    body: Vec<ConvIdx>,
    hidden: ConvIdx,
    output: ConvIdx,
}

/// Named, ordered trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    fn push(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total scalar count.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Flat (tensor, offset) address of scalar number `i`.
    pub fn locate(&self, mut i: usize) -> Option<(usize, usize)> {
        for (t, tensor) in self.tensors.iter().enumerate() {
            if i < tensor.len() {
                return Some((t, i));
            }
            i -= tensor.len();
        }
        None
    }
}

/// Per-parameter gradients aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Self {
            tensors: params.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in &mut self.tensors {
            t.scale(k);
        }
    }

    pub fn get(&self, t: usize, offset: usize) -> f64 {
        self.tensors[t].data()[offset]
    }
}

/// The multi-headed detector.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: ArchConfig,
    pub seed: u64,
    params: ParamStore,
    layout: Layout,
}

enum MixerTape {
    Attention(AttentionCache),
    Lstm(LstmCache),
}

struct HeadTape {
    /// Inputs to each convolution followed by the last rectified output.
    acts: Vec<Tensor>,
    seq: Tensor,
    mixer: MixerTape,
    /// Mixer output before dropout.
    mixed: Tensor,
    mask: Option<Vec<f64>>,
}

/// Activations of one forward pass, consumed by [`Model::backward_sample`].
pub struct Tape {
    heads: [HeadTape; 2],
    body_acts: Vec<Tensor>,
    flat_mask: Option<Vec<f64>>,
    flat_dropped: Tensor,
    hidden: Tensor,
    pub logits: Tensor,
    pub probs: Tensor,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], limit: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| (2.0 * rng.random::<f64>() - 1.0) * limit).collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

fn apply_mask(x: &Tensor, mask: &Option<Vec<f64>>) -> Tensor {
    match mask {
        None => x.clone(),
        Some(m) => {
            let mut out = x.clone();
            for (v, k) in out.data_mut().iter_mut().zip(m) {
                *v *= k;
            }
            out
        }
    }
}

impl Model {
    /// Builds the network with uniform fan-in initialization and zero biases.
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng::stream(seed, &[0x1417]);
        let mut params = ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        };
        let conv_stack = |params: &mut ParamStore, rng: &mut rng::Rng, prefix: &str, specs: &[ConvSpec]| {
            let mut c_in = 1;
            let mut out = Vec::new();
            for (i, c) in specs.iter().enumerate() {
                let fan_in = (c_in * c.kernel) as f64;
                let w = params.push(
                    format!("{prefix}.conv{}.weight", i + 1),
                    uniform(rng, &[c.filters, c_in, c.kernel], sqrt(6.0 / fan_in)),
                );
                let b = params.push(format!("{prefix}.conv{}.bias", i + 1), Tensor::zeros(&[c.filters]));
                out.push(ConvIdx { w, b });
                c_in = c.filters;
            }
            out
        };
        let mut heads = Vec::new();
        for prefix in ["rssi", "sinr"] {
            let convs = conv_stack(&mut params, &mut rng, prefix, &arch.head_convs);
            let d = arch.head_convs.last().map_or(1, |c| c.filters);
            let e = arch.embed_dim;
            let mixer = match arch.variant {
                Variant::Attention => {
                    let hk = arch.attention_heads * arch.key_dim;
                    let lim_in = sqrt(3.0 / d as f64);
                    let lim_out = sqrt(3.0 / hk as f64);
                    let mut proj = |name: &str, rows: usize, cols: usize, lim: f64, bias: bool| {
                        let w = params.push(
                            format!("{prefix}.attention.{name}.weight"),
                            uniform(&mut rng, &[rows, cols], lim),
                        );
                        let b = bias.then(|| {
                            params.push(format!("{prefix}.attention.{name}.bias"), Tensor::zeros(&[cols]))
                        });
                        (w, b.unwrap_or(usize::MAX))
                    };
                    let (wq, bq) = proj("query", d, hk, lim_in, true);
                    let (wk, _) = proj("key", d, hk, lim_in, false);
                    let (wv, bv) = proj("value", d, hk, lim_in, true);
                    let (wo, bo) = proj("output", hk, e, lim_out, true);
                    MixerIdx::Attention {
                        wq,
                        bq,
                        wk,
                        wv,
                        bv,
                        wo,
                        bo,
                    }
                }
                Variant::Lstm => {
                    let lim = sqrt(3.0 / (d + e) as f64);
                    let w = params.push(format!("{prefix}.lstm.input_weight"), uniform(&mut rng, &[4 * e, d], lim));
                    let u = params.push(format!("{prefix}.lstm.recurrent_weight"), uniform(&mut rng, &[4 * e, e], lim));
                    let b = params.push(format!("{prefix}.lstm.bias"), Tensor::zeros(&[4 * e]));
                    MixerIdx::Lstm { w, u, b }
                }
            };
            heads.push(HeadIdx { convs, mixer });
        }
        let body = conv_stack(&mut params, &mut rng, "body", &arch.body_convs);
        let flat = arch.body_flat_len().expect("validated");
        let hw = params.push(
            "dense.weight".into(),
            uniform(&mut rng, &[arch.dense_width, flat], sqrt(6.0 / flat as f64)),
        );
        let hb = params.push("dense.bias".into(), Tensor::zeros(&[arch.dense_width]));
        let ow = params.push(
            "output.weight".into(),
            uniform(&mut rng, &[arch.classes, arch.dense_width], sqrt(3.0 / arch.dense_width as f64)),
        );
        let ob = params.push("output.bias".into(), Tensor::zeros(&[arch.classes]));
        let [rssi, sinr]: [HeadIdx; 2] = heads.try_into().expect("two heads");
        let model = Self {
            arch,
            seed,
            params,
            layout: Layout {
                heads: [rssi, sinr],
                body,
                hidden: ConvIdx { w: hw, b: hb },
                output: ConvIdx { w: ow, b: ob },
            },
        };
        if model.param_count() >= MAX_PARAMS {
            return Err(config!(
                "{} trainable parameters exceed the {MAX_PARAMS} budget",
                model.param_count()
            ));
        }
        Ok(model)
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Replaces parameter values; names and shapes must match exactly.
    pub fn load_params(&mut self, named: Vec<(String, Tensor)>) -> Result<()> {
        if named.len() != self.params.len() {
            return Err(shape!(
                "checkpoint has {} tensors, model has {}",
                named.len(),
                self.params.len()
            ));
        }
        for ((name, t), (own_name, own)) in named.iter().zip(self.params.names.iter().zip(&self.params.tensors)) {
            if name != own_name || t.shape() != own.shape() {
                return Err(shape!(
                    "tensor {name} {:?} does not match {own_name} {:?}",
                    t.shape(),
                    own.shape()
                ));
            }
        }
        self.params.tensors = named.into_iter().map(|(_, t)| t).collect();
        Ok(())
    }

    fn p(&self, i: usize) -> &Tensor {
        &self.params.tensors[i]
    }

    fn conv_forward(&self, idx: &[ConvIdx], specs: &[ConvSpec], x: Tensor, acts: &mut Vec<Tensor>) -> Result<Tensor> {
        let mut cur = x;
        for (ci, spec) in idx.iter().zip(specs) {
            let mut y = conv1d(&cur, self.p(ci.w), self.p(ci.b), spec.stride)?;
            relu_inplace(&mut y);
            acts.push(cur);
            cur = y;
        }
        Ok(cur)
    }

    fn conv_backward(
        &self,
        idx: &[ConvIdx],
        specs: &[ConvSpec],
        acts: &[Tensor],
        out: &Tensor,
        mut dy: Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        // acts[i] is the input of layer i; the output of layer i is acts[i + 1]
        // (or `out` for the last layer).
        for i in (0..idx.len()).rev() {
            let y = if i + 1 < acts.len() { &acts[i + 1] } else { out };
            relu_backward_inplace(y, &mut dy);
            let (dx, dw, db) = conv1d_backward(&acts[i], self.p(idx[i].w), specs[i].stride, &dy)?;
            grads.tensors[idx[i].w].add_assign(&dw);
            grads.tensors[idx[i].b].add_assign(&db);
            dy = dx;
        }
        Ok(dy)
    }

    fn attention_params(&self, m: &MixerIdx) -> Option<AttentionParams<'_>> {
        match *m {
            MixerIdx::Attention {
                wq,
                bq,
                wk,
                wv,
                bv,
                wo,
                bo,
            } => Some(AttentionParams {
                wq: self.p(wq),
                bq: self.p(bq),
                wk: self.p(wk),
                
                wv: self.p(wv),
                bv: self.p(bv),
                wo: self.p(wo),
                bo: self.p(bo),
            }),
            MixerIdx::Lstm { .. } => None,
        }
    }

    fn head_forward(&self, h: usize, x: &[f64], rng: Option<&mut rng::Rng>) -> Result<(Tensor, HeadTape)> {
        let idx = &self.layout.heads[h];
        let input = Tensor::from_vec(&[1, x.len()], x.to_vec())?;
        let mut acts = Vec::with_capacity(idx.convs.len() + 1);
        let conv_out = self.conv_forward(&idx.convs, &self.arch.head_convs, input, &mut acts)?;
        let seq = conv_out.transpose()?;
        acts.push(conv_out);
        let (mixed, mixer) = match idx.mixer {
            MixerIdx::Attention { .. } => {
                let p = self.attention_params(&idx.mixer).expect("attention");
                let (y, cache) = mhsa_forward(&seq, &p, self.arch.attention_heads, self.arch.key_dim)?;
                (y, MixerTape::Attention(cache))
            }
            MixerIdx::Lstm { w, u, b } => {
                let p = LstmParams {
                    w: self.p(w),
                    u: self.p(u),
                    b: self.p(b),
                };
                let (y, cache) = lstm_forward(&seq, &p)?;
                (y, MixerTape::Lstm(cache))
            }
        };
        let mask = rng.map(|r| dropout_mask(mixed.len(), self.arch.dropout, r));
        let dropped = apply_mask(&mixed, &mask);
        let emb = match idx.mixer {
            MixerIdx::Attention { .. } => temporal_pool(&dropped)?,
            MixerIdx::Lstm { .. } => dropped,
        };
        Ok((
            emb,
            HeadTape {
                acts,
                seq,
                mixer,
                mixed,
                mask,
            },
        ))
    }

    /// Forward pass. With `rng` the dropout masks are drawn from it (training
    /// mode); without it dropout is the identity.
    pub fn forward_tape(&self, rssi: &[f64], sinr: &[f64], mut rng: Option<&mut rng::Rng>) -> Result<Tape> {
        if rssi.len() != self.arch.w || sinr.len() != self.arch.w {
            return Err(shape!(
                "window of {}/{} samples, model expects {}",
                rssi.len(),
                sinr.len(),
                self.arch.w
            ));
        }
        let (e_r, t_r) = self.head_forward(0, rssi, rng.as_deref_mut())?;
        let (e_s, t_s) = self.head_forward(1, sinr, rng.as_deref_mut())?;
        let mut joined = e_r.into_data();
        joined.extend_from_slice(e_s.data());
        let body_in = Tensor::from_vec(&[1, joined.len()], joined)?;
        let mut body_acts = Vec::with_capacity(self.layout.body.len() + 1);
        let body_out = self.conv_forward(&self.layout.body, &self.arch.body_convs, body_in, &mut body_acts)?;
        let flat = body_out.clone().reshape(&[body_out.len()])?;
        body_acts.push(body_out);
        let flat_mask = rng.map(|r| dropout_mask(flat.len(), self.arch.dropout, r));
        let flat_dropped = apply_mask(&flat, &flat_mask);
        let mut hidden = dense(&flat_dropped, self.p(self.layout.hidden.w), self.p(self.layout.hidden.b))?;
        relu_inplace(&mut hidden);
        let logits = dense(&hidden, self.p(self.layout.output.w), self.p(self.layout.output.b))?;
        let probs = softmax(&logits);
        Ok(Tape {
            heads: [t_r, t_s],
            body_acts,
            flat_mask,
            flat_dropped,
            hidden,
            logits,
            probs,
        })
    }

    /// Class probabilities `[p_no_attack, p_attack]` in inference mode.
    pub fn forward(&self, sample: &WindowSample) -> Result<[f64; 2]> {
        let tape = self.forward_tape(&sample.rssi, &sample.sinr, None)?;
        let p = tape.probs.data();
        Ok([p[0], p[1]])
    }

    /// Probability of the attack class in inference mode.
    pub fn attack_probability(&self, sample: &WindowSample) -> Result<f64> {
        Ok(self.forward(sample)?[Label::Attack.index()])
    }

    /// Pre-softmax scores in inference mode.
    pub fn logits(&self, sample: &WindowSample) -> Result<Tensor> {
        Ok(self.forward_tape(&sample.rssi, &sample.sinr, None)?.logits)
    }

    /// Cross-entropy of one sample in inference mode.
    pub fn loss(&self, sample: &WindowSample) -> Result<f64> {
        let tape = self.forward_tape(&sample.rssi, &sample.sinr, None)?;
        Ok(cross_entropy(&tape.probs, sample.label.index()))
    }

    fn head_backward(&self, h: usize, tape: &HeadTape, d_emb: &[f64], grads: &mut Gradients) -> Result<()> {
        let idx = &self.layout.heads[h];
        let d_emb = Tensor::vector(d_emb.to_vec());
        let mut d_mixed = match idx.mixer {
            MixerIdx::Attention { .. } => temporal_pool_backward(&d_emb, tape.mixed.dims2()?.0),
            MixerIdx::Lstm { .. } => d_emb,
        };
        if let Some(mask) = &tape.mask {
            for (g, m) in d_mixed.data_mut().iter_mut().zip(mask) {
                *g *= m;
            }
        }
        let d_seq = match (&idx.mixer, &tape.mixer) {
            (
                MixerIdx::Attention {
                    wq,
                    bq,
                    wk,
                    wv,
                    bv,
                    wo,
                    bo,
                },
                MixerTape::Attention(cache),
            ) => {
                let p = self.attention_params(&idx.mixer).expect("attention");
                let (dx, g) = mhsa_backward(&tape.seq, &p, self.arch.attention_heads, self.arch.key_dim, cache, &d_mixed)?;
                for (i, t) in [(*wq, g.wq), (*bq, g.bq), (*wk, g.wk), (*wv, g.wv), (*bv, g.bv), (*wo, g.wo), (*bo, g.bo)] {
                    grads.tensors[i].add_assign(&t);
                }
                dx
            }
            (MixerIdx::Lstm { w, u, b }, MixerTape::Lstm(cache)) => {
                let p = LstmParams {
                    w: self.p(*w),
                    u: self.p(*u),
                    b: self.p(*b),
                };
                let (dx, g) = lstm_backward(&tape.seq, &p, cache, &d_mixed)?;
                grads.tensors[*w].add_assign(&g.w);
                grads.tensors[*u].add_assign(&g.u);
                grads.tensors[*b].add_assign(&g.b);
                dx
            }
            _ => unreachable!("tape and layout variants agree"),
        };
        let d_conv = d_seq.transpose()?;
        let n = tape.acts.len();
        self.conv_backward(&idx.convs, &self.arch.head_convs, &tape.acts[..n - 1], &tape.acts[n - 1], d_conv, grads)?;
        Ok(())
    }

    /// Accumulates gradients of the sample's cross-entropy into `grads`,
    /// scaled by `weight`.
    pub fn backward_sample(&self, tape: &Tape, target: usize, weight: f64, grads: &mut Gradients) -> Result<()> {
        let mut d_logits = softmax_cross_entropy_backward(&tape.probs, target);
        d_logits.scale(weight);
        let out = self.layout.output;
        let (mut d_hidden, dw, db) = dense_backward(&tape.hidden, self.p(out.w), &d_logits)?;
        grads.tensors[out.w].add_assign(&dw);
        grads.tensors[out.b].add_assign(&db);
        relu_backward_inplace(&tape.hidden, &mut d_hidden);
        let hid = self.layout.hidden;
        let (mut d_flat, dw, db) = dense_backward(&tape.flat_dropped, self.p(hid.w), &d_hidden)?;
        grads.tensors[hid.w].add_assign(&dw);
        grads.tensors[hid.b].add_assign(&db);
        if let Some(mask) = &tape.flat_mask {
            for (g, m) in d_flat.data_mut().iter_mut().zip(mask) {
                *g *= m;
            }
        }
        let n = tape.body_acts.len();
        let body_out = &tape.body_acts[n - 1];
        let d_body = d_flat.reshape(body_out.shape())?;
        let d_in = self.conv_backward(
            &self.layout.body,
            &self.arch.body_convs,
            &tape.body_acts[..n - 1],
            body_out,
            d_body,
            grads,
        )?;
        let e = self.arch.embed_dim;
        let d = d_in.data();
        self.head_backward(0, &tape.heads[0], &d[..e], grads)?;
        self.head_backward(1, &tape.heads[1], &d[e..2 * e], grads)?;
        Ok(())
    }

    fn sample_gradients(&self, s: &WindowSample, dropout_seed: Option<u64>, weight: f64) -> Result<(f64, Gradients)> {
        let mut rng = dropout_seed.map(|seed| rng::stream(seed, &[]));
        let tape = self.forward_tape(&s.rssi, &s.sinr, rng.as_mut())?;
        let loss = cross_entropy(&tape.probs, s.label.index());
        let mut g = Gradients::zeros_like(&self.params);
        self.backward_sample(&tape, s.label.index(), weight, &mut g)?;
        Ok((loss, g))
    }

    /// Mean cross-entropy over `batch` and its exact gradient.
    ///
    /// With `dropout_seeds` (one per sample) dropout is active with masks drawn
    /// from those seeds; otherwise the pass runs in inference mode. Per-sample
    /// gradients are summed in batch order regardless of how they are computed.
    pub fn batch_gradients(&self, batch: &[&WindowSample], dropout_seeds: Option<&[u64]>) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(shape!("empty batch"));
        }
        let weight = 1.0 / batch.len() as f64;
        let seed_of = |i: usize| dropout_seeds.map(|s| s[i]);
        #[cfg(feature = "std")]
        let parts: Vec<Result<(f64, Gradients)>> = {
            use rayon::prelude::*;
            batch
                .par_iter()
                .enumerate()
                .map(|(i, s)| self.sample_gradients(s, seed_of(i), weight))
                .collect()
        };
        #[cfg(not(feature = "std"))]
        let parts: Vec<Result<(f64, Gradients)>> = batch
            .iter()
            .enumerate()
            .map(|(i, s)| self.sample_gradients(s, seed_of(i), weight))
            .collect();
        let mut total = Gradients::zeros_like(&self.params);
        let mut loss = 0.0;
        for part in parts {
            let (l, g) = part?;
            loss += l;
            total.add_assign(&g);
        }
        Ok((loss * weight, total))
    }

    /// Mean cross-entropy gradient over a batch in inference mode.
    pub fn backward(&self, batch: &[WindowSample]) -> Result<(f64, Gradients)> {
        let refs: Vec<&WindowSample> = batch.iter().collect();
        self.batch_gradients(&refs, None)
    }
}

/// Layout summary of a built model: `(name, shape)` in parameter order.
pub fn describe(model: &Model) -> Vec<(String, Vec<usize>)> {
    model
        .params
        .iter()
        .map(|(n, t)| (String::from(n), t.shape().to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Origin;

    fn window(w: usize, k: f64, label: Label) -> WindowSample {
        WindowSample {
            rssi: (0..w).map(|i| libm::sin(i as f64 * 0.1 * k)).collect(),
            sinr: (0..w).map(|i| libm::cos(i as f64 * 0.07 + k)).collect(),
            label,
            origin: Origin { run: 0, start: 0 },
        }
    }

    #[test]
    fn parameter_count_is_window_invariant_and_bounded() {
        for v in [Variant::Attention, Variant::Lstm] {
            let counts: Vec<usize> = [50, 100, 200, 300]
                .iter()
                .map(|&w| Model::new(ArchConfig::reference(v, w), 1).unwrap().param_count())
                .collect();
            assert!(counts.windows(2).all(|c| c[0] == c[1]), "{v:?}: {counts:?}");
            assert!(counts[0] < MAX_PARAMS);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        for v in [Variant::Attention, Variant::Lstm] {
            let m = Model::new(ArchConfig::reference(v, 60), 3).unwrap();
            for k in 0..5 {
                let p = m.forward(&window(60, k as f64, Label::Attack)).unwrap();
                assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
                assert!(p[0] > 0.0 && p[1] > 0.0);
            }
        }
    }

    #[test]
    fn inference_is_deterministic() {
        let m = Model::new(ArchConfig::reference(Variant::Attention, 50), 4).unwrap();
        let s = window(50, 1.0, Label::NoAttack);
        assert_eq!(m.forward(&s).unwrap(), m.forward(&s.clone()).unwrap());
    }

    #[test]
    fn time_reversal_changes_output() {
        let m = Model::new(ArchConfig::reference(Variant::Lstm, 50), 4).unwrap();
        let s = window(50, 1.3, Label::NoAttack);
        let mut r = s.clone();
        r.rssi.reverse();
        r.sinr.reverse();
        assert_ne!(m.forward(&s).unwrap(), m.forward(&r).unwrap());
    }

    #[test]
    fn wrong_length_rejected() {
        let m = Model::new(ArchConfig::reference(Variant::Attention, 50), 4).unwrap();
        assert!(matches!(
            m.forward(&window(49, 1.0, Label::Attack)),
            Err(crate::Error::Shape(_))
        ));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(Model::new(ArchConfig::reference(Variant::Attention, 10), 1).is_err());
        let mut a = ArchConfig::reference(Variant::Lstm, 50);
        a.dropout = 1.0;
        assert!(matches!(Model::new(a, 1), Err(crate::Error::Config(_))));
        let mut a = ArchConfig::reference(Variant::Attention, 50);
        a.dense_width = 5000;
        assert!(Model::new(a, 1).is_err());
    }

    #[test]
    fn output_bias_gradient_closed_form() {
        // Zeroed weights give uniform output, so d(mean CE)/d(output bias) is
        // mean(p − y) = (0.5 − y).
        let mut m = Model::new(ArchConfig::reference(Variant::Attention, 50), 2).unwrap();
        for t in m.params_mut().tensors_mut() {
            t.fill(0.0);
        }
        let batch = [
            window(50, 1.0, Label::Attack),
            window(50, 2.0, Label::NoAttack),
            window(50, 3.0, Label::Attack),
        ];
        let (loss, g) = m.backward(&batch).unwrap();
        assert!((loss - core::f64::consts::LN_2).abs() < 1e-12);
        let ob = m.layout.output.b;
        let expected_attack = (0.5 - 1.0) * 2.0 / 3.0 + 0.5 / 3.0;
        assert!((g.get(ob, 1) - expected_attack).abs() < 1e-12);
        assert!((g.get(ob, 0) + expected_attack).abs() < 1e-12);
        // Symmetric batch: gradients cancel exactly.
        let sym = [window(50, 1.0, Label::Attack), window(50, 1.0, Label::NoAttack)];
        let (_, g) = m.backward(&sym).unwrap();
        assert_eq!(g.get(ob, 0), 0.0);
    }

    // With every weight zero the network reduces to
    // softmax(W_out · relu(b_dense) + b_out), checked against scalar arithmetic.
    #[test]
    fn reduced_model_matches_scalar_oracle() {
        let mut m = Model::new(ArchConfig::reference(Variant::Lstm, 50), 2).unwrap();
        for t in m.params_mut().tensors_mut() {
            t.fill(0.0);
        }
        let (hb, ow, ob) = (m.layout.hidden.b, m.layout.output.w, m.layout.output.b);
        let ps = m.params_mut().tensors_mut();
        ps[hb].data_mut()[0] = 0.8;
        ps[hb].data_mut()[1] = -0.3;
        ps[hb].data_mut()[2] = 1.5;
        ps[ow].data_mut()[0] = 0.5; // class 0, unit 0
        ps[ow].data_mut()[2] = -1.0; // class 0, unit 2
        ps[ow].data_mut()[100] = 2.0; // class 1, unit 0
        ps[ow].data_mut()[101] = 7.0; // class 1, unit 1 (rectified away)
        ps[ob].data_mut()[1] = 0.25;
        let z0 = 0.5 * 0.8 - 1.0 * 1.5;
        let z1 = 2.0 * 0.8 + 0.25;
        let p1 = 1.0 / (1.0 + libm::exp(z0 - z1));
        let p = m.forward(&window(50, 0.4, Label::Attack)).unwrap();
        assert!((p[1] - p1).abs() < 1e-15);
        assert!((p[0] - (1.0 - p1)).abs() < 1e-15);
    }

    #[test]
    fn names_are_unique() {
        let m = Model::new(ArchConfig::reference(Variant::Attention, 50), 1).unwrap();
        let d = describe(&m);
        let mut names: Vec<&String> = d.iter().map(|(n, _)| n).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), d.len());
    }
}
