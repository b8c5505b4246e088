//! Residual migration adapter: maps a user's source prompt(s) into the prompt
//! space of a target scorer.
//!
//! `z = [flatten(p1); ...; flatten(pk)] W_in`, then `R` blocks of
//! `z <- z + act(LN(z) W1 + b1) W2 + b2`, reshaped to `l x d_t`.

use serde::{Deserialize, Serialize};

use crate::data::{InteractionDataset, Task};
use crate::error::{PumaError, Result};
use crate::foundation::FrozenScorer;
use crate::metrics::MetricsReport;
use crate::numeric::{layer_norm_bwd, layer_norm_fwd, outer_acc, vec_mat_acc, vec_mat_t, Activation, AdamState, LnCache, Rng, Tensor2};
use crate::prompt::{cast_items, check_task, evaluate, logits_loss, PromptCorpus, RatingHead, SoftPrompt, TrainLog};
use crate::scalar::Scalar;

const ADAPTER_LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterBlock<T> {
    pub ln_gamma: Tensor2<T>,
    pub ln_beta: Tensor2<T>,
    pub w1: Tensor2<T>,
    pub b1: Tensor2<T>,
    pub w2: Tensor2<T>,
    pub b2: Tensor2<T>,
}

impl<T: Scalar> AdapterBlock<T> {
    fn zeros(width: usize, hidden: usize) -> Self {
        AdapterBlock {
            ln_gamma: Tensor2::zeros(1, width),
            ln_beta: Tensor2::zeros(1, width),
            w1: Tensor2::zeros(width, hidden),
            b1: Tensor2::zeros(1, hidden),
            w2: Tensor2::zeros(hidden, width),
            b2: Tensor2::zeros(1, width),
        }
    }

    fn tensors(&self) -> [&Tensor2<T>; 6] {
        [&self.ln_gamma, &self.ln_beta, &self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor2<T>; 6] {
        [
            &mut self.ln_gamma,
            &mut self.ln_beta,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MigrationAdapter<T> {
    /// `(l, d_src)` of each source corpus, in input order.
    pub source_dims: Vec<(usize, usize)>,
    pub target_dim: (usize, usize),
    pub w_in: Tensor2<T>,
    pub blocks: Vec<AdapterBlock<T>>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterHyper {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub blocks: usize,
    pub hidden: usize,
    pub activation: Activation,
    pub head_hidden: usize,
    /// Multiplier on the `1/sqrt(fan_in)` standard deviation of `W_in`.
    pub init_scale: f64,
    /// Decoupled weight decay on `W_in`, `W1` and `W2`.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for AdapterHyper {
    fn default() -> Self {
        AdapterHyper {
            epochs: 4,
            lr: 1e-4,
            batch: 32,
            blocks: 2,
            hidden: 8,
            activation: Activation::Gelu,
            head_hidden: 16,
            init_scale: 1.0,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl AdapterHyper {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.blocks == 0 || self.hidden == 0 || self.head_hidden == 0 || !(self.lr > 0.0) {
            return Err(PumaError::Config("adapter hyperparameters must be positive".into()));
        }
        if !(self.init_scale > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(PumaError::Config("adapter hyperparameters must be positive".into()));
        }
        Ok(())
    }
}

/// Intermediates of one adapter evaluation.
#[derive(Clone, Debug)]
pub struct AdapterCache<T> {
    input: Vec<T>,
    blocks: Vec<AdapterBlockCache<T>>,
}

#[derive(Clone, Debug)]
struct AdapterBlockCache<T> {
    ln_out: Vec<T>,
    ln: LnCache<T>,
    pre: Vec<T>,
    post: Vec<T>,
}

/// Builds an adapter with `W_in ~ N(0, 1/fan_in)` and identity residual blocks.
pub fn build_adapter<T: Scalar>(
    source_dims: &[(usize, usize)],
    target_dim: (usize, usize),
    blocks: usize,
    hidden: usize,
    activation: Activation,
    seed: u64,
) -> Result<MigrationAdapter<T>> {
    if source_dims.is_empty() || blocks == 0 || hidden == 0 {
        return Err(PumaError::Config(
            "adapter needs at least one source, one block and a hidden width".into(),
        ));
    }
    if source_dims.iter().chain([&target_dim]).any(|&(l, d)| l == 0 || d == 0) {
        return Err(PumaError::Config("adapter dimensions must be positive".into()));
    }
    let fan_in: usize = source_dims.iter().map(|(l, d)| l * d).sum();
    let width = target_dim.0 * target_dim.1;
    let mut rng = Rng::for_stage(seed, "adapter-init");
    let w_in = Tensor2::randn(fan_in, width, (1.0 / fan_in as f64).sqrt(), &mut rng);
    let blocks = (0..blocks)
        .map(|_| {
            let mut b = AdapterBlock::zeros(width, hidden);
            b.ln_gamma.fill(T::one());
            b.w1 = Tensor2::randn(width, hidden, (1.0 / width as f64).sqrt(), &mut rng);
            b
        })
        .collect();
    Ok(MigrationAdapter {
        source_dims: source_dims.to_vec(),
        target_dim,
        w_in,
        blocks,
        activation,
    })
}

impl<T: Scalar> MigrationAdapter<T> {
    pub fn input_width(&self) -> usize {
        self.w_in.rows()
    }

    pub fn width(&self) -> usize {
        self.w_in.cols()
    }

    pub fn hidden(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.w1.cols())
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Every trainable tensor: `W_in`, then each block's `gamma, beta, W1, b1, W2, b2`.
    pub fn tensors(&self) -> Vec<&Tensor2<T>> {
        let mut out = vec![&self.w_in];
        for b in &self.blocks {
            out.extend(b.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor2<T>> {
        let mut out = vec![&mut self.w_in];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out
    }

    pub fn zeros_like(&self) -> Self {
        MigrationAdapter {
            source_dims: self.source_dims.clone(),
            target_dim: self.target_dim,
            w_in: Tensor2::zeros(self.w_in.rows(), self.w_in.cols()),
            blocks: vec![AdapterBlock::zeros(self.width(), self.hidden()); self.blocks.len()],
            activation: self.activation,
        }
    }

    fn concat_sources(&self, prompts: &[&Tensor2<T>]) -> Result<Vec<T>> {
        if prompts.len() != self.source_dims.len() {
            return Err(PumaError::dims("adapter sources", prompts.len(), self.source_dims.len()));
        }
        let mut x = Vec::with_capacity(self.input_width());
        for (p, &dims) in prompts.iter().zip(&self.source_dims) {
            if p.shape() != dims {
                return Err(PumaError::dims("adapter source prompt", format!("{:?}", p.shape()), format!("{dims:?}")));
            }
            x.extend_from_slice(p.data());
        }
        Ok(x)
    }

    /// The target prompt for one user, given that user's prompt from every source.
    pub fn forward(&self, prompts: &[&Tensor2<T>]) -> Result<Tensor2<T>> {
        Ok(self.forward_cached(prompts)?.0)
    }

    pub fn forward_cached(&self, prompts: &[&Tensor2<T>]) -> Result<(Tensor2<T>, AdapterCache<T>)> {
        let input = self.concat_sources(prompts)?;
        let eps = T::lit(ADAPTER_LN_EPS);
        let mut z = vec![T::zero(); self.width()];
        vec_mat_acc(&input, &self.w_in, &mut z);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (ln_out, ln) = layer_norm_fwd(&z, b.ln_gamma.data(), b.ln_beta.data(), eps);
            let mut pre = b.b1.data().to_vec();
            vec_mat_acc(&ln_out, &b.w1, &mut pre);
            let post: Vec<T> = pre.iter().map(|&v| self.activation.apply(v)).collect();
            for (zi, &bi) in z.iter_mut().zip(b.b2.data()) {
                *zi += bi;
            }
            vec_mat_acc(&post, &b.w2, &mut z);
            caches.push(AdapterBlockCache { ln_out, ln, pre, post });
        }
        let (l, d) = self.target_dim;
        Ok((Tensor2::from_vec(l, d, z)?, AdapterCache { input, blocks: caches }))
    }

    /// Accumulates `scale *` the parameter gradient of `<output, grad_out>` into `acc`,
    /// returning the gradient w.r.t. the concatenated source input.
    pub fn backward(&self, cache: &AdapterCache<T>, grad_out: &Tensor2<T>, scale: T, acc: &mut MigrationAdapter<T>) -> Vec<T> {
        let mut g: Vec<T> = grad_out.data().iter().map(|&v| v * scale).collect();
        for ((b, c), ab) in self.blocks.iter().zip(&cache.blocks).zip(acc.blocks.iter_mut()).rev() {
            // z_out = z + post W2 + b2
            for (a, &gi) in ab.b2.data_mut().iter_mut().zip(&g) {
                *a += gi;
            }
            outer_acc(&c.post, &g, &mut ab.w2);
            let g_post = vec_mat_t(&g, &b.w2);
            let g_pre: Vec<T> = g_post.iter().zip(&c.pre).map(|(&gp, &z)| gp * self.activation.derivative(z)).collect();
            for (a, &gi) in ab.b1.data_mut().iter_mut().zip(&g_pre) {
                *a += gi;
            }
            outer_acc(&c.ln_out, &g_pre, &mut ab.w1);
            let g_ln = vec_mat_t(&g_pre, &b.w1);
            let (g_z, g_gamma, g_beta) = layer_norm_bwd(&g_ln, b.ln_gamma.data(), &c.ln);
            for (a, v) in ab.ln_gamma.data_mut().iter_mut().zip(g_gamma) {
                *a += v;
            }
            for (a, v) in ab.ln_beta.data_mut().iter_mut().zip(g_beta) {
                *a += v;
            }
            for (gi, v) in g.iter_mut().zip(g_z) {
                *gi += v;
            }
        }
        outer_acc(&cache.input, &g, &mut acc.w_in);
        vec_mat_t(&g, &self.w_in)
    }

    pub fn accumulate(&mut self, other: &MigrationAdapter<T>, scale: T) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.axpy(scale, b);
        }
    }
}

/// Prompts of user `u` from each source, in source order.
fn user_sources<'a, T: Scalar>(sources: &[&'a PromptCorpus<T>], u: usize) -> Result<Vec<&'a Tensor2<T>>> {
    sources.iter().map(|c| c.prompt(u).map(|p| &p.values)).collect()
}

/// Everything `train_adapter` needs. Sources and target stay frozen.
pub struct MigrationJob<'a, T> {
    pub sources: Vec<&'a PromptCorpus<T>>,
    pub target: &'a FrozenScorer<T>,
    pub dataset: &'a InteractionDataset,
    /// Training-split record indices; only those of `users` are used.
    pub train_idx: &'a [usize],
    /// The coreset `U'`.
    pub users: &'a [usize],
    pub hyper: AdapterHyper,
}

#[derive(Clone, Debug)]
pub struct AdapterOutcome<T> {
    pub adapter: MigrationAdapter<T>,
    /// Fresh rating head trained alongside the adapter (rating task).
    pub head: Option<RatingHead<T>>,
    pub log: TrainLog,
    pub source_hashes: Vec<String>,
    pub target_hash: String,
}

impl<'a, T: Scalar> MigrationJob<'a, T> {
    /// The record subset `D'`: training records whose user is in `U'`.
    pub fn subset_records(&self) -> Vec<usize> {
        let mut chosen = vec![false; self.dataset.n_users];
        for &u in self.users {
            if u < chosen.len() {
                chosen[u] = true;
            }
        }
        self.train_idx
            .iter()
            .copied()
            .filter(|&i| chosen[self.dataset.records[i].user as usize])
            .collect()
    }

    fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        check_task(self.target, self.dataset.task)?;
        if self.sources.is_empty() {
            return Err(PumaError::Config("migration needs at least one source corpus".into()));
        }
        if self.users.is_empty() {
            return Err(PumaError::Config("empty training user subset".into()));
        }
        for &u in self.users {
            if u >= self.dataset.n_users {
                return Err(PumaError::MissingUser(u, "dataset"));
            }
            for c in &self.sources {
                c.prompt(u)?;
            }
        }
        Ok(())
    }
}

/// Loss of one record routed through the adapter into `target`. Adds
/// `scale` times the adapter gradient into `acc` and returns the loss with the
/// head gradient (rating task only).
#[allow(clippy::too_many_arguments)]
pub fn adapter_record_grad<T: Scalar>(
    adapter: &MigrationAdapter<T>,
    sources: &[&Tensor2<T>],
    target: &FrozenScorer<T>,
    item: &[T],
    y: f64,
    head: Option<&RatingHead<T>>,
    scale: T,
    acc: &mut MigrationAdapter<T>,
) -> Result<(T, Option<RatingHead<T>>)> {
    let (prompt, a_cache) = adapter.forward_cached(sources)?;
    let (logits, s_cache) = target.forward(&prompt, item)?;
    let (loss, g_logits, g_head) = logits_loss(&logits, y, target.head_kind(), head)?;
    let g_prompt = target.backward_inputs(&s_cache, &g_logits)?;
    adapter.backward(&a_cache, &g_prompt, scale, acc);
    Ok((loss, g_head))
}

/// Fits the adapter (and, for ratings, a fresh target head) on `D'` with Adam.
/// Fails with [`PumaError::FrozenViolation`] if any source prompt or target
/// weight changed.
pub fn train_adapter<T: Scalar>(job: &MigrationJob<'_, T>) -> Result<AdapterOutcome<T>> {
    job.validate()?;
    let hyper = &job.hyper;
    let source_hashes: Vec<String> = job.sources.iter().map(|c| c.prompt_hash()).collect();
    let target_hash = job.target.weight_hash();

    let dims: Vec<(usize, usize)> = job.sources.iter().map(|c| (c.prompt_len(), c.width())).collect();
    let target_dim = (job.target.prompt_len(), job.target.d_model());
    let mut adapter = build_adapter::<T>(&dims, target_dim, hyper.blocks, hyper.hidden, hyper.activation, hyper.seed)?;
    adapter.w_in.scale(T::lit(hyper.init_scale));
    let shrink = T::one() - T::lit(hyper.lr * hyper.weight_decay);
    let records = job.subset_records();
    if records.is_empty() {
        return Err(PumaError::Config("selected users have no training records".into()));
    }
    let mut head = (job.dataset.task == Task::Rating).then(|| {
        let mut rng = Rng::for_stage(hyper.seed, "adapter-head-init");
        RatingHead::init(hyper.head_hidden, job.dataset.mean_outcome(&records), &mut rng)
    });

    let items = cast_items::<T>(job.dataset);
    let mut rng = Rng::for_stage(hyper.seed, "adapter-train");
    let mut adam = AdamState::<T>::new(hyper.lr);
    let mut order = records.clone();
    let mut log = TrainLog::default();
    let n_adapter = adapter.tensors().len();

    for _ in 0..hyper.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hyper.batch) {
            let inv = T::one() / T::lit(batch.len() as f64);
            let mut grad = adapter.zeros_like();
            let mut head_grad = head.as_ref().map(RatingHead::zeros_like);
            for &idx in batch {
                let r = job.dataset.records[idx];
                let srcs = user_sources(&job.sources, r.user as usize)?;
                let (loss, g_head) = adapter_record_grad(&adapter, &srcs, job.target, &items[r.item as usize], r.y, head.as_ref(), inv, &mut grad)?;
                epoch_loss += loss.as_f64();
                if let (Some(acc), Some(gh)) = (head_grad.as_mut(), g_head.as_ref()) {
                    acc.accumulate(gh, inv);
                }
            }
            log.records_processed += batch.len() as u64;

            if hyper.weight_decay > 0.0 {
                adapter.w_in.scale(shrink);
                for b in &mut adapter.blocks {
                    b.w1.scale(shrink);
                    b.w2.scale(shrink);
                }
            }
            let mut params = adapter.tensors_mut();
            let mut grads: Vec<Tensor2<T>> = Vec::with_capacity(n_adapter + 4);
            grads.push(grad.w_in);
            for b in grad.blocks {
                grads.extend([b.ln_gamma, b.ln_beta, b.w1, b.b1, b.w2, b.b2]);
            }
            if let (Some(h), Some(hg)) = (head.as_mut(), head_grad) {
                params.extend(h.params_mut());
                grads.extend(hg.into_params());
            }
            adam.step(&mut params, &grads)?;
            log.steps += 1;
        }
        log.epoch_losses.push(epoch_loss / order.len() as f64);
    }

    for (c, h) in job.sources.iter().zip(&source_hashes) {
        if &c.prompt_hash() != h {
            return Err(PumaError::FrozenViolation("source prompts changed during adapter training".into()));
        }
    }
    if job.target.weight_hash() != target_hash {
        return Err(PumaError::FrozenViolation(format!(
            "target scorer {} changed during adapter training",
            job.target.id()
        )));
    }
    Ok(AdapterOutcome {
        adapter,
        head,
        log,
        source_hashes,
        target_hash,
    })
}

/// Applies the adapter to every user, producing a corpus for `target`.
pub fn migrate_corpus<T: Scalar>(
    adapter: &MigrationAdapter<T>,
    sources: &[&PromptCorpus<T>],
    head: Option<RatingHead<T>>,
    target: &FrozenScorer<T>,
) -> Result<PromptCorpus<T>> {
    let first = sources.first().ok_or_else(|| PumaError::Config("no source corpus".into()))?;
    if adapter.target_dim != (target.prompt_len(), target.d_model()) {
        return Err(PumaError::dims("adapter target", format!("{:?}", adapter.target_dim), target.id()));
    }
    let n = first.n_users();
    if let Some(c) = sources.iter().find(|c| c.n_users() != n) {
        return Err(PumaError::MissingUser(n.min(c.n_users()), "source corpus"));
    }
    let prompts = (0..n)
        .map(|user| {
            let srcs = user_sources(sources, user)?;
            Ok(SoftPrompt {
                user,
                values: adapter.forward(&srcs)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PromptCorpus {
        scorer_id: target.id(),
        prompts,
        head,
    })
}

/// One migration: train on the coreset, migrate everybody, evaluate.
#[derive(Clone, Debug)]
pub struct MigrationRun<T> {
    pub corpus: PromptCorpus<T>,
    pub outcome: AdapterOutcome<T>,
    pub users: Vec<usize>,
    pub metrics: MetricsReport,
}

/// Direct (one or more sources) migration into `target`, evaluated on `eval_idx`.
#[allow(clippy::too_many_arguments)]
pub fn migrate_once<T: Scalar>(
    sources: &[&PromptCorpus<T>],
    target: &FrozenScorer<T>,
    ds: &InteractionDataset,
    train_idx: &[usize],
    users: Vec<usize>,
    eval_idx: &[usize],
    hyper: &AdapterHyper,
) -> Result<MigrationRun<T>> {
    let job = MigrationJob {
        sources: sources.to_vec(),
        target,
        dataset: ds,
        train_idx,
        users: &users,
        hyper: hyper.clone(),
    };
    let outcome = train_adapter(&job)?;
    let corpus = migrate_corpus(&outcome.adapter, sources, outcome.head.clone(), target)?;
    let metrics = evaluate(target, &corpus, ds, eval_idx)?;
    Ok(MigrationRun {
        corpus,
        outcome,
        users,
        metrics,
    })
}

/// Chained migration `M_1 -> M_2 -> ... -> M_n`. Prompts are never re-fit: each
/// hop trains only a new adapter, and its migrated corpus feeds the next hop.
/// `select(hop, corpus)` picks the coreset for each hop. Returns `n - 1` runs.
#[allow(clippy::too_many_arguments)]
pub fn chain_migrate<T: Scalar>(
    scorers: &[&FrozenScorer<T>],
    initial: &PromptCorpus<T>,
    ds: &InteractionDataset,
    train_idx: &[usize],
    eval_idx: &[usize],
    hyper: &AdapterHyper,
    mut select: impl FnMut(usize, &PromptCorpus<T>) -> Result<Vec<usize>>,
) -> Result<Vec<MigrationRun<T>>> {
    if scorers.len() < 2 {
        return Err(PumaError::Config("a chain needs at least two scorers".into()));
    }
    if initial.scorer_id != scorers[0].id() {
        return Err(PumaError::TaskMismatch(format!(
            "chain starts at {} but the corpus belongs to {}",
            scorers[0].id(),
            initial.scorer_id
        )));
    }
    let mut runs: Vec<MigrationRun<T>> = Vec::with_capacity(scorers.len() - 1);
    for (hop, target) in scorers[1..].iter().enumerate() {
        let current = runs.last().map_or(initial, |r| &r.corpus);
        let users = select(hop, current)?;
        // hop 0 keeps the caller's seed so it reproduces a direct migration
        let seed = match hop {
            0 => hyper.seed,
            _ => crate::numeric::derive_seed(hyper.seed, &format!("hop{hop}")),
        };
        let hop_hyper = AdapterHyper { seed, ..hyper.clone() };
        let run = migrate_once(&[current], target, ds, train_idx, users, eval_idx, &hop_hyper)?;
        runs.push(run);
    }
    Ok(runs)
}

/// Aggregated migration: each user's prompts from every source corpus are
/// concatenated as the adapter input.
#[allow(clippy::too_many_arguments)]
pub fn aggregate_migrate<T: Scalar>(
    corpora: &[&PromptCorpus<T>],
    target: &FrozenScorer<T>,
    ds: &InteractionDataset,
    train_idx: &[usize],
    users: Vec<usize>,
    eval_idx: &[usize],
    hyper: &AdapterHyper,
) -> Result<MigrationRun<T>> {
    if let Some(first) = corpora.first() {
        if corpora.iter().any(|c| c.n_users() != first.n_users()) {
            return Err(PumaError::Config("aggregated corpora must share the user set".into()));
        }
    }
    migrate_once(corpora, target, ds, train_idx, users, eval_idx, hyper)
}
