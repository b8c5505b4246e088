//! Frozen foundation scorers.
//!
//! A scorer consumes a soft prompt (`l x d_model`) and an item embedding,
//! concatenates `[flatten(prompt); item * item_proj]` into one row of width
//! `(l + 1) * d_model`, runs `depth` post-norm residual feed-forward blocks
//!
//! ```text
//! h <- LN(h + act(h W1 + b1) W2 + b2)
//! ```
//!
//! and reads task logits off a linear head (5 rating logits or 1 click logit).
//! Weights are drawn once from `(family, seed)` and never change afterwards.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PumaError, Result};
use crate::numeric::{affine_row, layer_norm_bwd, layer_norm_fwd, vec_mat_acc, vec_mat_t, Activation, LnCache, Rng, Tensor2};
use crate::scalar::Scalar;

pub const LN_EPS: f64 = 1e-5;

/// Output head of a scorer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Five logits, one per rating token "1".."5".
    Rating5,
    /// One logit for the "yes" token.
    Click1,
}

impl HeadKind {
    pub fn width(self) -> usize {
        match self {
            HeadKind::Rating5 => 5,
            HeadKind::Click1 => 1,
        }
    }
}

/// Architecture of a frozen scorer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScorerFamily {
    pub name: String,
    pub d_model: usize,
    pub depth: usize,
    pub d_hidden: usize,
    pub nonlinearity: Activation,
    pub head: HeadKind,
    /// Prompt rows the scorer reads (`l`).
    #[serde(default = "default_prompt_len")]
    pub prompt_len: usize,
}

fn default_prompt_len() -> usize {
    1
}

/// Names of the built-in families, in canonical order.
pub const BUILTIN_FAMILIES: [&str; 5] = ["alpha", "bravo", "charlie", "delta", "echo"];

impl ScorerFamily {
    /// One of the five built-in families. Hidden width is twice the model width.
    pub fn builtin(name: &str, head: HeadKind) -> Result<Self> {
        let (d_model, depth, act) = match name {
            "alpha" => (32, 3, Activation::Gelu),
            "bravo" => (48, 4, Activation::Tanh),
            "charlie" => (24, 3, Activation::Relu),
            "delta" => (64, 5, Activation::Gelu),
            "echo" => (16, 3, Activation::Tanh),
            other => return Err(PumaError::Config(format!("unknown scorer family `{other}`"))),
        };
        Ok(ScorerFamily {
            name: name.to_string(),
            d_model,
            depth,
            d_hidden: 2 * d_model,
            nonlinearity: act,
            head,
            prompt_len: 1,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 3 {
            return Err(PumaError::Config(format!("family `{}`: depth {} < 3", self.name, self.depth)));
        }
        if self.d_model == 0 || self.d_hidden == 0 || self.prompt_len == 0 {
            return Err(PumaError::Config(format!("family `{}`: zero-sized dimension", self.name)));
        }
        if self.name.is_empty() || self.name.len() > u16::MAX as usize {
            return Err(PumaError::Config("family name must be 1..65535 bytes".into()));
        }
        Ok(())
    }

    /// Width of the assembled input row, `(l + 1) * d_model`.
    pub fn width(&self) -> usize {
        (self.prompt_len + 1) * self.d_model
    }
}

/// One residual feed-forward block.
#[derive(Clone, Debug, PartialEq)]
pub struct FfnBlock<T> {
    pub(crate) w1: Tensor2<T>,
    pub(crate) b1: Vec<T>,
    pub(crate) w2: Tensor2<T>,
    pub(crate) b2: Vec<T>,
    pub(crate) ln_gamma: Vec<T>,
    pub(crate) ln_beta: Vec<T>,
}

impl<T: Scalar> FfnBlock<T> {
    pub fn w1(&self) -> &Tensor2<T> {
        &self.w1
    }
    pub fn b1(&self) -> &[T] {
        &self.b1
    }
    pub fn w2(&self) -> &Tensor2<T> {
        &self.w2
    }
    pub fn b2(&self) -> &[T] {
        &self.b2
    }
    pub fn ln_gamma(&self) -> &[T] {
        &self.ln_gamma
    }
    pub fn ln_beta(&self) -> &[T] {
        &self.ln_beta
    }
}

/// A fixed-weight scorer. There is no mutable access to the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenScorer<T> {
    family: ScorerFamily,
    seed: u64,
    d_item: usize,
    item_proj: Tensor2<T>,
    blocks: Vec<FfnBlock<T>>,
    head_w: Tensor2<T>,
    head_b: Vec<T>,
}

/// Per-block values saved by [`FrozenScorer::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct BlockCache<T> {
    pub input: Vec<T>,
    pub pre_act: Vec<T>,
    pub post_act: Vec<T>,
    pub ln: LnCache<T>,
}

#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    pub input: Vec<T>,
    pub blocks: Vec<BlockCache<T>>,
    pub output: Vec<T>,
    scorer_tag: u64,
}

fn draw_vec<T: Scalar>(n: usize, std: f64, rng: &mut Rng) -> Vec<T> {
    (0..n).map(|_| T::lit(rng.normal() * std)).collect()
}

impl<T: Scalar> FrozenScorer<T> {
    /// Draws all weights from `N(0, 1/fan_in)` using a generator seeded by `seed`.
    /// Layer-norm gains start at one and shifts at zero.
    pub fn build(family: ScorerFamily, d_item: usize, seed: u64) -> Result<Self> {
        family.validate()?;
        if d_item == 0 {
            return Err(PumaError::Config("item embedding width must be positive".into()));
        }
        let mut rng = Rng::for_stage(seed, &format!("scorer/{}", family.name));
        let w = family.width();
        let h = family.d_hidden;
        let item_proj = Tensor2::randn(d_item, family.d_model, (1.0 / d_item as f64).sqrt(), &mut rng);
        let mut blocks = Vec::with_capacity(family.depth);
        for _ in 0..family.depth {
            let w1 = Tensor2::randn(w, h, (1.0 / w as f64).sqrt(), &mut rng);
            let b1 = draw_vec(h, (1.0 / w as f64).sqrt(), &mut rng);
            let w2 = Tensor2::randn(h, w, (1.0 / h as f64).sqrt(), &mut rng);
            let b2 = draw_vec(w, (1.0 / h as f64).sqrt(), &mut rng);
            blocks.push(FfnBlock {
                w1,
                b1,
                w2,
                b2,
                ln_gamma: vec![T::one(); w],
                ln_beta: vec![T::zero(); w],
            });
        }
        let head_w = Tensor2::randn(w, family.head.width(), (1.0 / w as f64).sqrt(), &mut rng);
        let head_b = draw_vec(family.head.width(), (1.0 / w as f64).sqrt(), &mut rng);
        Ok(FrozenScorer {
            family,
            seed,
            d_item,
            item_proj,
            blocks,
            head_w,
            head_b,
        })
    }

    /// Reassembles a scorer from stored weights (used by the file loader).
    pub(crate) fn from_parts(
        family: ScorerFamily,
        seed: u64,
        item_proj: Tensor2<T>,
        blocks: Vec<FfnBlock<T>>,
        head_w: Tensor2<T>,
        head_b: Vec<T>,
    ) -> Result<Self> {
        family.validate()?;
        let w = family.width();
        let ok = item_proj.cols() == family.d_model
            && blocks.len() == family.depth
            && blocks.iter().all(|b| {
                b.w1.shape() == (w, family.d_hidden)
                    && b.b1.len() == family.d_hidden
                    && b.w2.shape() == (family.d_hidden, w)
                    && b.b2.len() == w
                    && b.ln_gamma.len() == w
                    && b.ln_beta.len() == w
            })
            && head_w.shape() == (w, family.head.width())
            && head_b.len() == family.head.width();
        if !ok {
            return Err(PumaError::Format {
                kind: "scorer",
                reason: "tensor shapes disagree with family".into(),
            });
        }
        Ok(FrozenScorer {
            d_item: item_proj.rows(),
            family,
            seed,
            item_proj,
            blocks,
            head_w,
            head_b,
        })
    }

    pub fn family(&self) -> &ScorerFamily {
        &self.family
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn d_model(&self) -> usize {
        self.family.d_model
    }

    pub fn d_item(&self) -> usize {
        self.d_item
    }

    pub fn prompt_len(&self) -> usize {
        self.family.prompt_len
    }

    pub fn head_kind(&self) -> HeadKind {
        self.family.head
    }

    pub fn item_proj(&self) -> &Tensor2<T> {
        &self.item_proj
    }

    pub fn blocks(&self) -> &[FfnBlock<T>] {
        &self.blocks
    }

    pub fn head_weights(&self) -> (&Tensor2<T>, &[T]) {
        (&self.head_w, &self.head_b)
    }

    /// `"<family>#<seed>"`, the provenance label stored with prompt corpora.
    pub fn id(&self) -> String {
        format!("{}#{}", self.family.name, self.seed)
    }

    pub fn param_count(&self) -> usize {
        self.item_proj.len()
            + self
                .blocks
                .iter()
                .map(|b| b.w1.len() + b.b1.len() + b.w2.len() + b.b2.len() + b.ln_gamma.len() + b.ln_beta.len())
                .sum::<usize>()
            + self.head_w.len()
            + self.head_b.len()
    }

    /// Every weight in declaration order.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![self.item_proj.data()];
        for b in &self.blocks {
            out.extend([b.w1.data(), &b.b1[..], b.w2.data(), &b.b2[..], &b.ln_gamma[..], &b.ln_beta[..]]);
        }
        out.push(self.head_w.data());
        out.push(&self.head_b);
        out
    }

    /// SHA-256 over the little-endian `f64` bytes of every weight.
    pub fn weight_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in self.tensors() {
            for &v in t {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    fn tag(&self) -> u64 {
        // Cheap identity check tying a cache to the scorer that produced it.
        self.seed ^ ((self.family.d_model as u64) << 32) ^ ((self.family.depth as u64) << 48)
    }

    fn check_prompt(&self, prompt: &Tensor2<T>) -> Result<()> {
        if prompt.shape() != (self.family.prompt_len, self.family.d_model) {
            return Err(PumaError::dims(
                "scorer prompt",
                format!("{}x{}", prompt.rows(), prompt.cols()),
                format!("{}x{} expected by `{}`", self.family.prompt_len, self.family.d_model, self.family.name),
            ));
        }
        Ok(())
    }

    /// The template: `[flatten(prompt); item_embed * item_proj]`.
    pub fn assemble_input(&self, prompt: &Tensor2<T>, item_embed: &[T]) -> Result<Vec<T>> {
        self.check_prompt(prompt)?;
        if item_embed.len() != self.d_item {
            return Err(PumaError::dims("item embedding", item_embed.len(), self.d_item));
        }
        let mut x = Vec::with_capacity(self.family.width());
        x.extend_from_slice(prompt.data());
        let start = x.len();
        x.resize(start + self.family.d_model, T::zero());
        vec_mat_acc(item_embed, &self.item_proj, &mut x[start..]);
        Ok(x)
    }

    /// Task logits for one (prompt, item) pair, with the cache needed for backprop.
    pub fn forward(&self, prompt: &Tensor2<T>, item_embed: &[T]) -> Result<(Vec<T>, ForwardCache<T>)> {
        let input = self.assemble_input(prompt, item_embed)?;
        Ok(self.forward_assembled(input))
    }

    /// Logits only.
    pub fn logits(&self, prompt: &Tensor2<T>, item_embed: &[T]) -> Result<Vec<T>> {
        Ok(self.forward(prompt, item_embed)?.0)
    }

    fn forward_assembled(&self, input: Vec<T>) -> (Vec<T>, ForwardCache<T>) {
        let eps = T::lit(LN_EPS);
        let act = self.family.nonlinearity;
        let mut h = input.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let pre = affine_row(&h, &b.w1, &b.b1);
            let post: Vec<T> = pre.iter().map(|&v| act.apply(v)).collect();
            let mut r = b.b2.clone();
            vec_mat_acc(&post, &b.w2, &mut r);
            for (ri, &hi) in r.iter_mut().zip(&h) {
                *ri += hi;
            }
            let (out, ln) = layer_norm_fwd(&r, &b.ln_gamma, &b.ln_beta, eps);
            caches.push(BlockCache {
                input: std::mem::replace(&mut h, out),
                pre_act: pre,
                post_act: post,
                ln,
            });
        }
        let logits = affine_row(&h, &self.head_w, &self.head_b);
        (
            logits,
            ForwardCache {
                input,
                blocks: caches,
                output: h,
                scorer_tag: self.tag(),
            },
        )
    }

    /// Gradient of `logits . grad_logits` w.r.t. the whole assembled input row.
    pub fn backward_assembled(&self, cache: &ForwardCache<T>, grad_logits: &[T]) -> Result<Vec<T>> {
        if cache.scorer_tag != self.tag() || cache.blocks.len() != self.blocks.len() {
            return Err(PumaError::dims("backward cache", "cache from another scorer", self.id()));
        }
        if grad_logits.len() != self.family.head.width() {
            return Err(PumaError::dims("grad_logits", grad_logits.len(), self.family.head.width()));
        }
        let act = self.family.nonlinearity;
        let mut g = vec_mat_t(grad_logits, &self.head_w);
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            let (g_r, _, _) = layer_norm_bwd(&g, &b.ln_gamma, &c.ln);
            // r = h + post W2 + b2
            let g_post = vec_mat_t(&g_r, &b.w2);
            let g_pre: Vec<T> = g_post.iter().zip(&c.pre_act).map(|(&gp, &z)| gp * act.derivative(z)).collect();
            let mut g_in = vec_mat_t(&g_pre, &b.w1);
            for (gi, &gr) in g_in.iter_mut().zip(&g_r) {
                *gi += gr;
            }
            g = g_in;
        }
        Ok(g)
    }

    /// Gradient of `logits . grad_logits` w.r.t. the prompt entries, shaped `l x d_model`.
    /// Scorer weights take no part in the result.
    pub fn backward_inputs(&self, cache: &ForwardCache<T>, grad_logits: &[T]) -> Result<Tensor2<T>> {
        let g = self.backward_assembled(cache, grad_logits)?;
        let n = self.family.prompt_len * self.family.d_model;
        Tensor2::from_vec(self.family.prompt_len, self.family.d_model, g[..n].to_vec())
    }

    /// Post-activation hidden vectors of the last three blocks for `prompt`
    /// paired with an all-zeros probe item; length `3 * d_hidden`.
    pub fn ffn_activations(&self, prompt: &Tensor2<T>) -> Result<Vec<T>> {
        if self.blocks.len() < 3 {
            return Err(PumaError::Config(format!("ffn_activations needs depth >= 3, got {}", self.blocks.len())));
        }
        let probe = vec![T::zero(); self.d_item];
        let (_, cache) = self.forward(prompt, &probe)?;
        let n = cache.blocks.len();
        Ok(cache.blocks[n - 3..].iter().flat_map(|b| b.post_act.iter().copied()).collect())
    }
}

/// Builds a scorer for a family; shorthand for [`FrozenScorer::build`].
pub fn build_scorer<T: Scalar>(family: ScorerFamily, d_item: usize, seed: u64) -> Result<FrozenScorer<T>> {
    FrozenScorer::build(family, d_item, seed)
}
