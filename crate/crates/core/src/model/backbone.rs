//! Toy decoder-only language backbone with LoRA adapters.
//!
//! Pre-norm single-head transformer blocks (RMS norm, causal attention,
//! ReLU MLP) over a frozen token embedding. Every affine layer, including
//! the output head, carries a low-rank adapter `x A B * (alpha / rank)`;
//! only the adapters are trainable.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::params::{digest, ParamSet};
use super::tokenizer::TokenId;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};

const NORM_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    #[serde(default = "default_backbone_name")]
    pub name: String,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_ffn")]
    pub ffn_dim: usize,
    #[serde(default = "default_context")]
    pub max_context: usize,
    #[serde(default = "default_backbone_seed")]
    pub seed: u64,
}

fn default_backbone_name() -> String {
    "toy-transformer".into()
}
fn default_d_model() -> usize {
    2048
}
fn default_layers() -> usize {
    16
}
fn default_ffn() -> usize {
    8192
}
fn default_context() -> usize {
    2048
}
fn default_backbone_seed() -> u64 {
    29
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            name: default_backbone_name(),
            d_model: default_d_model(),
            layers: default_layers(),
            ffn_dim: default_ffn(),
            max_context: default_context(),
            seed: default_backbone_seed(),
        }
    }
}

/// Low-rank adapter settings. `alpha` defaults to the rank (scale 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
}

impl LoraConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            alpha: rank as f64,
        }
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageBackboneHandle {
    pub name: String,
    pub d_l: usize,
    pub vocab_size: usize,
    pub max_context: usize,
    pub lora: LoraConfig,
}

struct BaseLayer {
    linears: [Array2<f64>; 6],
}

const LAYER_LINEARS: [&str; 6] = ["q", "k", "v", "o", "up", "down"];
const Q: usize = 0;
const K: usize = 1;
const V: usize = 2;
const O: usize = 3;
const UP: usize = 4;
const DOWN: usize = 5;

/// Frozen base weights. Nothing here changes after construction.
pub struct ToyBackbone {
    handle: LanguageBackboneHandle,
    embed: Array2<f64>,
    layers: Vec<BaseLayer>,
    lm_head: Array2<f64>,
}

/// Positions of `(a, b)` adapter pairs inside a [`ParamSet`], per layer
/// in [`LAYER_LINEARS`] order, then the output head.
#[derive(Clone, Debug)]
pub(crate) struct LoraSlots {
    layers: Vec<[(usize, usize); 6]>,
    lm_head: (usize, usize),
}

struct BoundLinear {
    base: Var,
    a: Var,
    b: Var,
}

pub(crate) struct BoundBackbone {
    layers: Vec<[BoundLinear; 6]>,
    lm_head: BoundLinear,
    scale: f64,
    d: usize,
}

impl ToyBackbone {
    pub fn new(config: &BackboneConfig, vocab_size: usize, lora: LoraConfig) -> Result<Self> {
        if config.d_model == 0 || config.ffn_dim == 0 || config.layers == 0 {
            return Err(Error::config("backbone dims and layer count must be positive"));
        }
        if lora.rank == 0 {
            return Err(Error::config("LoRA rank must be positive"));
        }
        let d = config.d_model;
        let f = config.ffn_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut normal = |rows: usize, cols: usize, std: f64| {
            let dist = Normal::new(0.0, std).expect("valid normal");
            Array2::from_shape_fn((rows, cols), |_| dist.sample(&mut rng))
        };
        let embed = normal(vocab_size, d, 1.0);
        let layers = (0..config.layers)
            .map(|_| {
                let inv_d = 1.0 / (d as f64).sqrt();
                BaseLayer {
                    linears: [
                        normal(d, d, inv_d),
                        normal(d, d, inv_d),
                        normal(d, d, inv_d),
                        normal(d, d, inv_d * 0.5),
                        normal(d, f, inv_d),
                        normal(f, d, 0.5 / (f as f64).sqrt()),
                    ],
                }
            })
            .collect();
        let lm_head = normal(d, vocab_size, 1.0 / (d as f64).sqrt());
        Ok(Self {
            handle: LanguageBackboneHandle {
                name: config.name.clone(),
                d_l: d,
                vocab_size,
                max_context: config.max_context,
                lora,
            },
            embed,
            layers,
            lm_head,
        })
    }

    pub fn handle(&self) -> &LanguageBackboneHandle {
        &self.handle
    }

    pub fn d_model(&self) -> usize {
        self.handle.d_l
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Frozen token embedding lookup.
    pub fn embed_tokens(&self, tokens: &[TokenId]) -> Result<Array2<f64>> {
        let d = self.d_model();
        let mut out = Array2::zeros((tokens.len(), d));
        for (i, &t) in tokens.iter().enumerate() {
            if t >= self.handle.vocab_size {
                return Err(Error::input(format!("token id {t} outside vocabulary")));
            }
            out.row_mut(i).assign(&self.embed.row(t));
        }
        Ok(out)
    }

    pub fn checksum(&self) -> String {
        let mut all: Vec<&Array2<f64>> = vec![&self.embed];
        for l in &self.layers {
            all.extend(l.linears.iter());
        }
        all.push(&self.lm_head);
        digest(all)
    }

    /// Registers freshly initialized adapters: `A` normal with std
    /// `1/sqrt(in)`, `B` zero, so the adapted network starts equal to the
    /// base network.
    pub(crate) fn register_lora(&self, params: &mut ParamSet, rng: &mut impl Rng) -> LoraSlots {
        let r = self.handle.lora.rank;
        let add = |params: &mut ParamSet, name: String, base: &Array2<f64>, rng: &mut dyn rand::RngCore| {
            let (inp, out) = base.dim();
            let dist = Normal::new(0.0, 1.0 / (inp as f64).sqrt()).expect("valid normal");
            let a = Array2::from_shape_fn((inp, r), |_| dist.sample(rng));
            let ia = params.push(format!("{name}.a"), a);
            let ib = params.push(format!("{name}.b"), Array2::zeros((r, out)));
            (ia, ib)
        };
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(li, layer)| {
                let mut slots = [(0, 0); 6];
                for (k, name) in LAYER_LINEARS.iter().enumerate() {
                    slots[k] = add(params, format!("lora.l{li}.{name}"), &layer.linears[k], rng);
                }
                slots
            })
            .collect();
        let lm_head = add(params, "lora.lm_head".into(), &self.lm_head, rng);
        LoraSlots { layers, lm_head }
    }

    pub(crate) fn bind(&self, g: &mut Graph, slots: &LoraSlots, vars: &[Var]) -> BoundBackbone {
        let layers = self
            .layers
            .iter()
            .zip(&slots.layers)
            .map(|(layer, s)| {
                std::array::from_fn(|k| BoundLinear {
                    base: g.constant(layer.linears[k].clone()),
                    a: vars[s[k].0],
                    b: vars[s[k].1],
                })
            })
            .collect();
        let lm_head = BoundLinear {
            base: g.constant(self.lm_head.clone()),
            a: vars[slots.lm_head.0],
            b: vars[slots.lm_head.1],
        };
        BoundBackbone {
            layers,
            lm_head,
            scale: self.handle.lora.scale(),
            d: self.d_model(),
        }
    }

    pub fn check_context(&self, len: usize) -> Result<()> {
        if len > self.handle.max_context {
            return Err(Error::ContextOverflow {
                len,
                max: self.handle.max_context,
            });
        }
        Ok(())
    }
}

impl BoundBackbone {
    fn linear(&self, g: &mut Graph, x: Var, l: &BoundLinear) -> Var {
        let base = g.matmul(x, l.base);
        let down = g.matmul(x, l.a);
        let up = g.matmul(down, l.b);
        let up = g.scale(up, self.scale);
        g.add(base, up)
    }

    /// Per-layer keys and values of a shared prefix (rows that every
    /// sequence in a group starts with).
    pub(crate) fn prefix_kv(&self, g: &mut Graph, prefix: Var) -> Vec<(Var, Var)> {
        let inv_sqrt_d = 1.0 / (self.d as f64).sqrt();
        let last = self.layers.len() - 1;
        let mut x = prefix;
        let mut out = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let h = g.rms_norm(x, NORM_EPS);
            let k = self.linear(g, h, &layer[K]);
            let v = self.linear(g, h, &layer[V]);
            // the prefix's own update is only needed by deeper layers
            if li < last {
                let q = self.linear(g, h, &layer[Q]);
                let attn = attend(g, q, k, v, 0, inv_sqrt_d);
                let o = self.linear(g, attn, &layer[O]);
                let y = g.add(x, o);
                x = self.mlp(g, y, layer);
            }
            out.push((k, v));
        }
        out
    }

    /// Runs the blocks over a stack of per-sequence `suffix` rows split by
    /// `segments`. Each suffix row attends causally to the whole prefix
    /// (given as per-layer keys and values, or empty) and to earlier rows of
    /// its own segment. Returns the final normalized suffix hidden states.
    pub(crate) fn forward(&self, g: &mut Graph, prefix: &[(Var, Var)], suffix: Var, segments: &[usize]) -> Var {
        debug_assert!(prefix.is_empty() || prefix.len() == self.layers.len());
        debug_assert_eq!(segments.iter().sum::<usize>(), g.value(suffix).nrows());
        let prefix_len = prefix.first().map_or(0, |(k, _)| g.value(*k).nrows());
        let inv_sqrt_d = 1.0 / (self.d as f64).sqrt();
        let mut xs = suffix;
        for (li, layer) in self.layers.iter().enumerate() {
            let hs = g.rms_norm(xs, NORM_EPS);
            let qs = self.linear(g, hs, &layer[Q]);
            let ks = self.linear(g, hs, &layer[K]);
            let vs = self.linear(g, hs, &layer[V]);
            let mut outs = Vec::with_capacity(segments.len());
            let mut start = 0;
            for &len in segments {
                let q = g.slice_rows(qs, start, len);
                let mut k = g.slice_rows(ks, start, len);
                let mut v = g.slice_rows(vs, start, len);
                if let Some(&(kp, vp)) = prefix.get(li) {
                    k = g.concat_rows(&[kp, k]);
                    v = g.concat_rows(&[vp, v]);
                }
                outs.push(attend(g, q, k, v, prefix_len, inv_sqrt_d));
                start += len;
            }
            let attn = if outs.len() == 1 { outs[0] } else { g.concat_rows(&outs) };
            let o = self.linear(g, attn, &layer[O]);
            xs = g.add(xs, o);
            xs = self.mlp(g, xs, layer);
        }
        g.rms_norm(xs, NORM_EPS)
    }

    fn mlp(&self, g: &mut Graph, x: Var, layer: &[BoundLinear; 6]) -> Var {
        let h = g.rms_norm(x, NORM_EPS);
        let h = self.linear(g, h, &layer[UP]);
        let h = g.relu(h);
        let h = self.linear(g, h, &layer[DOWN]);
        g.add(x, h)
    }

    pub(crate) fn logits(&self, g: &mut Graph, hidden: Var) -> Var {
        self.linear(g, hidden, &self.lm_head)
    }
}

fn attend(g: &mut Graph, q: Var, k: Var, v: Var, offset: usize, scale: f64) -> Var {
    let kt = g.transpose(k);
    let scores = g.matmul(q, kt);
    let scores = g.scale(scores, scale);
    let weights = g.causal_softmax(scores, offset);
    g.matmul(weights, v)
}
