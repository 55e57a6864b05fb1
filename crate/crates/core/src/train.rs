//! Two-stage training: source pre-training, then weighted adversarial
//! adaptation with the frozen source encoder driving sample selection.

use crate::adam::{AdamConfig, AdamState};
use crate::checkpoint::{self, CheckpointMeta};
use crate::data::{label_matrix, recipe_blocks, DatasetBundle, ImageSample, RecipeSample};
use crate::encoders::{
    FrozenSourceEncoder, ModelDims, ModelState, RecipeEncoderParams, TapedDiscriminator,
    TapedHeads, TapedImageEncoder, TapedRecipeEncoder,
};
use crate::error::{Error, Result};
use crate::kv::KvReader;
use crate::losses::{
    regularizer, total_loss_node, weighted_adversarial_losses, weighted_triplet_loss,
    LossBreakdown, LossConfig,
};
use crate::matrix::Matrix;
use crate::rng::{substream, Stream};
use crate::selection::{
    compute_w1, compute_weight_vector, extract_w2, sample_source_batch, select_topk, whole_pool,
    SelectedSubset, SimilarityMatrix, WeightVector,
};
use crate::tape::Tape;
use rand::Rng;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Source subset pool is pool_factor * batch_size, factor in 1..=5.
    pub pool_factor: usize,
    pub pretrain_epochs: usize,
    pub adapt_epochs: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub optimizer: AdamConfig,
    /// Draw the source batch from the whole pool instead of the top-K subset.
    pub sbs_off: bool,
    /// Use all-ones weights in the triplet term.
    pub w_triplet_off: bool,
    /// Use all-ones weights in the adversarial term.
    pub w_adv_off: bool,
    /// Re-initialize the recipe encoder at the start of adaptation instead of
    /// warm-starting from the pre-trained snapshot.
    pub warm_start_off: bool,
    pub eval_pool: usize,
    pub eval_repeats: usize,
    pub hidden: usize,
    pub embed: usize,
    pub disc_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            pool_factor: 2,
            pretrain_epochs: 30,
            adapt_epochs: 30,
            seed: 42,
            loss: LossConfig::default(),
            optimizer: AdamConfig::default(),
            sbs_off: false,
            w_triplet_off: false,
            w_adv_off: false,
            warm_start_off: false,
            eval_pool: 100,
            eval_repeats: 10,
            hidden: 24,
            embed: 32,
            disc_hidden: 32,
        }
    }
}

impl TrainConfig {
    pub fn pool_size(&self) -> usize {
        self.pool_factor * self.batch_size
    }

    /// K = 2 once the pool holds at least two batches, else 1.
    pub fn top_k(&self) -> usize {
        if self.pool_size() >= 2 * self.batch_size {
            2
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be at least 2 (triplet negatives)".into(),
            ));
        }
        if !(1..=5).contains(&self.pool_factor) {
            return Err(Error::Config(format!(
                "pool_factor must lie in 1..=5, got {}",
                self.pool_factor
            )));
        }
        if self.eval_pool == 0 || self.eval_repeats == 0 {
            return Err(Error::Config(
                "eval_pool and eval_repeats must be positive".into(),
            ));
        }
        if self.hidden == 0 || self.embed == 0 || self.disc_hidden == 0 {
            return Err(Error::Config("model dims must be positive".into()));
        }
        self.loss.validate()?;
        if self.optimizer.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let f = |v: f64| format!("{v}");
        vec![
            ("batch_size".into(), self.batch_size.to_string()),
            ("pool_factor".into(), self.pool_factor.to_string()),
            ("pretrain_epochs".into(), self.pretrain_epochs.to_string()),
            ("adapt_epochs".into(), self.adapt_epochs.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("margin".into(), f(self.loss.margin)),
            ("beta".into(), f(self.loss.beta)),
            ("lambda".into(), f(self.loss.lambda)),
            ("learning_rate".into(), f(self.optimizer.learning_rate)),
            ("sbs_off".into(), self.sbs_off.to_string()),
            ("w_triplet_off".into(), self.w_triplet_off.to_string()),
            ("w_adv_off".into(), self.w_adv_off.to_string()),
            ("warm_start_off".into(), self.warm_start_off.to_string()),
            ("eval_pool".into(), self.eval_pool.to_string()),
            ("eval_repeats".into(), self.eval_repeats.to_string()),
            ("hidden".into(), self.hidden.to_string()),
            ("embed".into(), self.embed.to_string()),
            ("disc_hidden".into(), self.disc_hidden.to_string()),
        ]
    }

    pub fn from_kv(pairs: &[(String, String)], origin: &str) -> Result<Self> {
        let known = [
            "batch_size",
            "pool_factor",
            "pretrain_epochs",
            "adapt_epochs",
            "seed",
            "margin",
            "beta",
            "lambda",
            "learning_rate",
            "sbs_off",
            "w_triplet_off",
            "w_adv_off",
            "warm_start_off",
            "eval_pool",
            "eval_repeats",
            "hidden",
            "embed",
            "disc_hidden",
        ];
        for (k, _) in pairs {
            if !known.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown key {k} in {origin}")));
            }
        }
        let r = KvReader::new(pairs, origin);
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            batch_size: r.parse_or("batch_size", d.batch_size)?,
            pool_factor: r.parse_or("pool_factor", d.pool_factor)?,
            pretrain_epochs: r.parse_or("pretrain_epochs", d.pretrain_epochs)?,
            adapt_epochs: r.parse_or("adapt_epochs", d.adapt_epochs)?,
            seed: r.parse_or("seed", d.seed)?,
            loss: LossConfig {
                margin: r.parse_or("margin", d.loss.margin)?,
                beta: r.parse_or("beta", d.loss.beta)?,
                lambda: r.parse_or("lambda", d.loss.lambda)?,
            },
            optimizer: AdamConfig {
                learning_rate: r.parse_or("learning_rate", d.optimizer.learning_rate)?,
                ..AdamConfig::default()
            },
            sbs_off: r.parse_or("sbs_off", d.sbs_off)?,
            w_triplet_off: r.parse_or("w_triplet_off", d.w_triplet_off)?,
            w_adv_off: r.parse_or("w_adv_off", d.w_adv_off)?,
            warm_start_off: r.parse_or("warm_start_off", d.warm_start_off)?,
            eval_pool: r.parse_or("eval_pool", d.eval_pool)?,
            eval_repeats: r.parse_or("eval_repeats", d.eval_repeats)?,
            hidden: r.parse_or("hidden", d.hidden)?,
            embed: r.parse_or("embed", d.embed)?,
            disc_hidden: r.parse_or("disc_hidden", d.disc_hidden)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_dims(&self, bundle: &DatasetBundle) -> ModelDims {
        let c = &bundle.manifest.config;
        ModelDims {
            d_title: c.d_title,
            d_ingredient: c.d_ingredient,
            d_steps: c.d_steps,
            d_image: c.d_image,
            vocab: c.vocab,
            hidden: self.hidden,
            embed: self.embed,
            disc_hidden: self.disc_hidden,
        }
    }
}

/// Where a training run writes its byproducts. All sinks are optional.
pub struct TrainSink {
    log: Option<std::io::BufWriter<std::fs::File>>,
    trace: Option<std::io::BufWriter<std::fs::File>>,
    last_good_path: Option<PathBuf>,
    pub variant: String,
    log_started: bool,
}

impl TrainSink {
    pub fn none() -> Self {
        TrainSink {
            log: None,
            trace: None,
            last_good_path: None,
            variant: "full".into(),
            log_started: false,
        }
    }

    pub fn with_paths(
        log: Option<&Path>,
        trace: Option<&Path>,
        last_good: Option<&Path>,
        variant: &str,
    ) -> Result<Self> {
        let open = |p: &Path| {
            std::fs::File::create(p)
                .map(std::io::BufWriter::new)
                .map_err(|e| Error::io(p.display().to_string(), e))
        };
        Ok(TrainSink {
            log: log.map(open).transpose()?,
            trace: trace.map(open).transpose()?,
            last_good_path: last_good.map(|p| p.to_path_buf()),
            variant: variant.to_string(),
            log_started: false,
        })
    }

    pub fn last_good_path(&self) -> Option<&Path> {
        self.last_good_path.as_deref()
    }

    fn log_step(&mut self, stage: &str, step: usize, breakdown: &LossBreakdown) -> Result<()> {
        if let Some(log) = &mut self.log {
            if !self.log_started {
                writeln!(log, "{}", LossBreakdown::LOG_HEADER)
                    .map_err(|e| Error::io("training log", e))?;
                self.log_started = true;
            }
            writeln!(log, "{}", breakdown.log_line(stage, step))
                .map_err(|e| Error::io("training log", e))?;
        }
        Ok(())
    }

    fn trace_step(
        &mut self,
        step: usize,
        w1: &SimilarityMatrix,
        subset: &SelectedSubset,
        weights: &WeightVector,
    ) -> Result<()> {
        if let Some(trace) = &mut self.trace {
            let io = |e| Error::io("selection trace", e);
            for j in 0..w1.values.rows() {
                let row: Vec<String> = w1.values.row(j).iter().map(|v| v.to_string()).collect();
                writeln!(trace, "{step}\tw1\t{j}\t{}", row.join(",")).map_err(io)?;
            }
            let idx: Vec<String> = subset.indices.iter().map(|i| i.to_string()).collect();
            writeln!(trace, "{step}\tsubset\t-\t{}", idx.join(",")).map_err(io)?;
            let w: Vec<String> = weights.weights.iter().map(|v| v.to_string()).collect();
            writeln!(trace, "{step}\tweights\t-\t{}", w.join(",")).map_err(io)?;
        }
        Ok(())
    }

    fn save_last_good(
        &mut self,
        state: &ModelState,
        frozen: &FrozenSourceEncoder,
        meta: &CheckpointMeta,
    ) -> Result<()> {
        if let Some(path) = &self.last_good_path {
            checkpoint::save(path, state, frozen, meta)?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if let Some(log) = &mut self.log {
            log.flush().map_err(|e| Error::io("training log", e))?;
        }
        if let Some(trace) = &mut self.trace {
            trace.flush().map_err(|e| Error::io("selection trace", e))?;
        }
        Ok(())
    }

    fn annotate(&self, err: Error) -> Error {
        match (&err, &self.last_good_path) {
            (Error::Train(msg), Some(path)) => Error::Train(format!(
                "{msg}; last good checkpoint at {}",
                path.display()
            )),
            _ => err,
        }
    }
}

/// Uniform draw of `count` distinct indices from 0..total.
fn draw_indices(total: usize, count: usize, rng: &mut Stream) -> Vec<usize> {
    debug_assert!(count <= total);
    let mut scratch: Vec<usize> = (0..total).collect();
    for i in 0..count {
        let j = rng.random_range(i..total);
        scratch.swap(i, j);
    }
    scratch.truncate(count);
    scratch
}

fn steps_per_epoch(total: usize, batch: usize) -> usize {
    total.div_ceil(batch)
}

struct SourceBatch<'a> {
    recipes: Vec<&'a RecipeSample>,
    images: Vec<&'a ImageSample>,
}

fn gather_source<'a>(bundle: &'a DatasetBundle, indices: &[usize]) -> SourceBatch<'a> {
    SourceBatch {
        recipes: indices
            .iter()
            .map(|&i| &bundle.source_pairs[i].0)
            .collect(),
        images: indices
            .iter()
            .map(|&i| &bundle.source_pairs[i].1)
            .collect(),
    }
}

/// One supervised step on a source batch: triplet (with the given weights)
/// plus the regularizer, no adversarial term.
fn source_step(
    state: &mut ModelState,
    batch: &SourceBatch,
    weights: &WeightVector,
    loss_cfg: &LossConfig,
    adam: &mut AdamState,
) -> Result<LossBreakdown> {
    let (title, ingredient, steps) = recipe_blocks(&batch.recipes);
    let images = crate::data::image_matrix(&batch.images);
    let labels = label_matrix(&batch.recipes);

    let mut tape = Tape::new();
    let enc_r = TapedRecipeEncoder::insert(&state.recipe_encoder, &mut tape);
    let enc_v = TapedImageEncoder::insert(&state.image_encoder, &mut tape);
    let heads = TapedHeads::insert(&state.heads, &mut tape);

    let t = tape.leaf(title);
    let i = tape.leaf(ingredient);
    let s = tape.leaf(steps);
    let x = tape.leaf(images.clone());

    let recipe_emb = enc_r.forward(&mut tape, t, i, s)?;
    let image_emb = enc_v.forward(&mut tape, x)?;

    let triplet = weighted_triplet_loss(
        &mut tape,
        recipe_emb,
        image_emb,
        weights,
        loss_cfg.margin,
    )?;
    let (cls, rec) = regularizer(&mut tape, image_emb, &labels, recipe_emb, &images, &heads)?;
    let total = total_loss_node(&mut tape, triplet, None, cls, rec, loss_cfg)?;

    let breakdown = LossBreakdown::from_parts(
        tape.scalar(triplet)?,
        0.0,
        0.0,
        tape.scalar(cls)?,
        tape.scalar(rec)?,
        loss_cfg,
    )?;

    tape.backward(total)?;

    let ids: Vec<_> = enc_r
        .param_ids()
        .into_iter()
        .chain(enc_v.param_ids())
        .chain(heads.param_ids())
        .collect();
    let grads: Vec<Matrix> = ids.iter().map(|&id| tape.grad(id).clone()).collect();
    let mut tensors = state.encoder_group_mut();
    let updates = tensors
        .iter_mut()
        .zip(grads.iter())
        .map(|((name, param), grad)| (name.as_str(), &mut **param, grad))
        .collect();
    adam.step(updates)?;

    Ok(breakdown)
}

/// Run `epochs` of source-only training driven by the given batch stream.
fn run_source_epochs(
    bundle: &DatasetBundle,
    state: &mut ModelState,
    epochs: usize,
    cfg: &TrainConfig,
    src_rng: &mut Stream,
    adam: &mut AdamState,
    sink: &mut TrainSink,
    stage: &str,
) -> Result<()> {
    let n_source = bundle.source_pairs.len();
    let per_epoch = steps_per_epoch(n_source, cfg.batch_size);
    let ones = WeightVector::ones(cfg.batch_size);
    let mut global_step = 0usize;
    for epoch in 0..epochs {
        for _ in 0..per_epoch {
            let indices = draw_indices(n_source, cfg.batch_size, src_rng);
            let batch = gather_source(bundle, &indices);
            let breakdown = source_step(state, &batch, &ones, &cfg.loss, adam)?;
            sink.log_step(stage, global_step, &breakdown)?;
            global_step += 1;
        }
        let frozen = FrozenSourceEncoder::snapshot(&state.recipe_encoder);
        sink.save_last_good(
            state,
            &frozen,
            &CheckpointMeta {
                stage: format!("{stage}-epoch-{epoch}"),
                seed: cfg.seed,
                variant: sink.variant.clone(),
                pool_size: cfg.pool_size(),
            },
        )?;
    }
    Ok(())
}

/// Pre-train encoders and heads on source pairs; the final recipe encoder
/// becomes the frozen similarity model. Evaluating the returned state on
/// target data gives the source-only baseline.
pub fn pretrain_source(
    bundle: &DatasetBundle,
    cfg: &TrainConfig,
    sink: &mut TrainSink,
) -> Result<(ModelState, FrozenSourceEncoder)> {
    cfg.validate()?;
    if bundle.source_pairs.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "batch size {} exceeds the {} source pairs",
            cfg.batch_size,
            bundle.source_pairs.len()
        )));
    }
    let dims = cfg.model_dims(bundle);
    let mut state = ModelState::init(dims, &mut substream(cfg.seed, "init"));
    let mut adam = AdamState::new(
        cfg.optimizer,
        state.encoder_group().iter().map(|(_, m)| *m),
    );
    let mut src_rng = substream(cfg.seed, "pretrain.batch");
    run_source_epochs(
        bundle,
        &mut state,
        cfg.pretrain_epochs,
        cfg,
        &mut src_rng,
        &mut adam,
        sink,
        "pretrain",
    )
    .map_err(|e| sink.annotate(e))?;
    sink.flush()?;
    let frozen = FrozenSourceEncoder::snapshot(&state.recipe_encoder);
    Ok((state, frozen))
}

/// Resume source pre-training from a checkpointed state. Uses a fresh batch
/// stream and a fresh optimizer, and re-snapshots the frozen encoder at the
/// end.
pub fn continue_pretrain(
    bundle: &DatasetBundle,
    mut state: ModelState,
    extra_epochs: usize,
    cfg: &TrainConfig,
    sink: &mut TrainSink,
) -> Result<(ModelState, FrozenSourceEncoder)> {
    cfg.validate()?;
    let mut adam = AdamState::new(
        cfg.optimizer,
        state.encoder_group().iter().map(|(_, m)| *m),
    );
    let mut src_rng = substream(cfg.seed, "pretrain.batch.resume");
    run_source_epochs(
        bundle,
        &mut state,
        extra_epochs,
        cfg,
        &mut src_rng,
        &mut adam,
        sink,
        "pretrain",
    )
    .map_err(|e| sink.annotate(e))?;
    sink.flush()?;
    let frozen = FrozenSourceEncoder::snapshot(&state.recipe_encoder);
    Ok((state, frozen))
}

/// One adaptation step: selection, weighting, discriminator update, then
/// encoder update.
#[allow(clippy::too_many_arguments)]
fn adapt_step(
    bundle: &DatasetBundle,
    state: &mut ModelState,
    frozen_source_emb: &Matrix,
    frozen_target_emb: &Matrix,
    cfg: &TrainConfig,
    src_rng: &mut Stream,
    tgt_rng: &mut Stream,
    adam_enc: &mut AdamState,
    adam_disc: &mut AdamState,
    sink: &mut TrainSink,
    step: usize,
) -> Result<LossBreakdown> {
    let n = cfg.batch_size;
    let pool_size = cfg.pool_size();
    let n_source = bundle.source_pairs.len();
    let n_target = bundle.target_recipes.len();

    // Draw the source subset pool and the target batch.
    let pool_indices = draw_indices(n_source, pool_size, src_rng);
    let target_indices = draw_indices(n_target, n, tgt_rng);

    // Similarities under the frozen source encoder.
    let target_feats = frozen_target_emb.gather_rows(&target_indices)?;
    let source_feats = frozen_source_emb.gather_rows(&pool_indices)?;
    let target_ids: Vec<u64> = target_indices
        .iter()
        .map(|&j| bundle.target_recipes[j].id)
        .collect();
    let source_ids: Vec<u64> = pool_indices
        .iter()
        .map(|&i| bundle.source_pairs[i].0.id)
        .collect();
    let w1 = compute_w1(&target_feats, &source_feats, &target_ids, &source_ids)?;

    // With a pool of exactly one batch there is nothing to select from.
    let subset = if cfg.sbs_off || pool_size == n {
        whole_pool(pool_size, n)
    } else {
        select_topk(&w1, cfg.top_k())?
    };
    let batch_positions = sample_source_batch(&subset, n, src_rng)?;
    let source_indices: Vec<usize> = batch_positions.iter().map(|&p| pool_indices[p]).collect();

    let w2 = extract_w2(&w1, &batch_positions)?;
    let weights = compute_weight_vector(&w2)?;
    sink.trace_step(step, &w1, &subset, &weights)?;

    let ones = WeightVector::ones(n);
    let triplet_weights = if cfg.w_triplet_off { &ones } else { &weights };
    let adv_weights = if cfg.w_adv_off { &ones } else { &weights };

    let source_batch = gather_source(bundle, &source_indices);
    let target_batch: Vec<&RecipeSample> = target_indices
        .iter()
        .map(|&j| &bundle.target_recipes[j])
        .collect();

    let (src_title, src_ing, src_steps) = recipe_blocks(&source_batch.recipes);
    let (tgt_title, tgt_ing, tgt_steps) = recipe_blocks(&target_batch);
    let images = crate::data::image_matrix(&source_batch.images);
    let labels = label_matrix(&source_batch.recipes);

    // Discriminator update on the current encoders.
    let disc_value = {
        let mut tape = Tape::new();
        let enc_r = TapedRecipeEncoder::insert(&state.recipe_encoder, &mut tape);
        let disc = TapedDiscriminator::insert(&state.discriminator, &mut tape);
        let st = tape.leaf(src_title.clone());
        let si = tape.leaf(src_ing.clone());
        let ss = tape.leaf(src_steps.clone());
        let tt = tape.leaf(tgt_title.clone());
        let ti = tape.leaf(tgt_ing.clone());
        let ts = tape.leaf(tgt_steps.clone());
        let src_emb = enc_r.forward(&mut tape, st, si, ss)?;
        let tgt_emb = enc_r.forward(&mut tape, tt, ti, ts)?;
        let (disc_loss, _) =
            weighted_adversarial_losses(&mut tape, src_emb, tgt_emb, adv_weights, &disc)?;
        let value = tape.scalar(disc_loss)?;
        if !value.is_finite() {
            return Err(Error::Train("non-finite discriminator loss".into()));
        }
        tape.backward(disc_loss)?;
        let ids = disc.param_ids();
        let grads: Vec<Matrix> = ids.iter().map(|&id| tape.grad(id).clone()).collect();
        let mut tensors = state.discriminator_group_mut();
        let updates = tensors
            .iter_mut()
            .zip(grads.iter())
            .map(|((name, param), grad)| (name.as_str(), &mut **param, grad))
            .collect();
        adam_disc.step(updates)?;
        value
    };

    // Encoder update against the freshly updated discriminator.
    let mut tape = Tape::new();
    let enc_r = TapedRecipeEncoder::insert(&state.recipe_encoder, &mut tape);
    let enc_v = TapedImageEncoder::insert(&state.image_encoder, &mut tape);
    let heads = TapedHeads::insert(&state.heads, &mut tape);
    let disc = TapedDiscriminator::insert(&state.discriminator, &mut tape);

    let st = tape.leaf(src_title);
    let si = tape.leaf(src_ing);
    let ss = tape.leaf(src_steps);
    let tt = tape.leaf(tgt_title);
    let ti = tape.leaf(tgt_ing);
    let ts = tape.leaf(tgt_steps);
    let x = tape.leaf(images.clone());

    let src_emb = enc_r.forward(&mut tape, st, si, ss)?;
    let tgt_emb = enc_r.forward(&mut tape, tt, ti, ts)?;
    let img_emb = enc_v.forward(&mut tape, x)?;

    let triplet =
        weighted_triplet_loss(&mut tape, src_emb, img_emb, triplet_weights, cfg.loss.margin)?;
    let (_, enc_adv) =
        weighted_adversarial_losses(&mut tape, src_emb, tgt_emb, adv_weights, &disc)?;
    let (cls, rec) = regularizer(&mut tape, img_emb, &labels, src_emb, &images, &heads)?;
    let total = total_loss_node(&mut tape, triplet, Some(enc_adv), cls, rec, &cfg.loss)?;

    let breakdown = LossBreakdown::from_parts(
        tape.scalar(triplet)?,
        tape.scalar(enc_adv)?,
        disc_value,
        tape.scalar(cls)?,
        tape.scalar(rec)?,
        &cfg.loss,
    )?;

    tape.backward(total)?;
    let ids: Vec<_> = enc_r
        .param_ids()
        .into_iter()
        .chain(enc_v.param_ids())
        .chain(heads.param_ids())
        .collect();
    let grads: Vec<Matrix> = ids.iter().map(|&id| tape.grad(id).clone()).collect();
    let mut tensors = state.encoder_group_mut();
    let updates = tensors
        .iter_mut()
        .zip(grads.iter())
        .map(|((name, param), grad)| (name.as_str(), &mut **param, grad))
        .collect();
    adam_enc.step(updates)?;

    Ok(breakdown)
}

fn run_adapt_loop(
    bundle: &DatasetBundle,
    state: &mut ModelState,
    frozen: &FrozenSourceEncoder,
    cfg: &TrainConfig,
    src_rng: &mut Stream,
    tgt_rng: &mut Stream,
    sink: &mut TrainSink,
) -> Result<()> {
    // The frozen encoder never changes, so all frozen embeddings can be
    // computed once up front.
    let all_source: Vec<&RecipeSample> = bundle.source_pairs.iter().map(|(r, _)| r).collect();
    let all_target: Vec<&RecipeSample> = bundle.target_recipes.iter().collect();
    let frozen_source_emb = frozen.encode(&all_source)?;
    let frozen_target_emb = frozen.encode(&all_target)?;

    let mut adam_enc = AdamState::new(
        cfg.optimizer,
        state.encoder_group().iter().map(|(_, m)| *m),
    );
    let mut adam_disc = AdamState::new(
        cfg.optimizer,
        state.discriminator_group().iter().map(|(_, m)| *m),
    );

    let per_epoch = steps_per_epoch(bundle.target_recipes.len(), cfg.batch_size);
    let mut global_step = 0usize;
    for epoch in 0..cfg.adapt_epochs {
        for _ in 0..per_epoch {
            let breakdown = adapt_step(
                bundle,
                state,
                &frozen_source_emb,
                &frozen_target_emb,
                cfg,
                src_rng,
                tgt_rng,
                &mut adam_enc,
                &mut adam_disc,
                sink,
                global_step,
            )?;
            sink.log_step("adapt", global_step, &breakdown)?;
            global_step += 1;
        }
        sink.save_last_good(
            state,
            frozen,
            &CheckpointMeta {
                stage: format!("adapt-epoch-{epoch}"),
                seed: cfg.seed,
                variant: sink.variant.clone(),
                pool_size: cfg.pool_size(),
            },
        )?;
    }
    Ok(())
}

/// Weighted adversarial adaptation of a pre-trained model using unpaired
/// target recipes. The frozen source encoder only scores similarities; its
/// parameters are never touched.
pub fn adapt(
    bundle: &DatasetBundle,
    state: &ModelState,
    frozen: &FrozenSourceEncoder,
    cfg: &TrainConfig,
    sink: &mut TrainSink,
) -> Result<ModelState> {
    cfg.validate()?;
    if bundle.target_recipes.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "batch size {} exceeds the {} target recipes",
            cfg.batch_size,
            bundle.target_recipes.len()
        )));
    }
    if bundle.source_pairs.len() < cfg.pool_size() {
        return Err(Error::Config(format!(
            "pool size {} exceeds the {} source pairs",
            cfg.pool_size(),
            bundle.source_pairs.len()
        )));
    }
    let mut adapted = state.clone();
    if cfg.warm_start_off {
        let dims = cfg.model_dims(bundle);
        adapted.recipe_encoder =
            RecipeEncoderParams::init(&dims, &mut substream(cfg.seed, "init.adapt"));
    }
    let mut src_rng = substream(cfg.seed, "adapt.batch.source");
    let mut tgt_rng = substream(cfg.seed, "adapt.batch.target");
    run_adapt_loop(
        bundle,
        &mut adapted,
        frozen,
        cfg,
        &mut src_rng,
        &mut tgt_rng,
        sink,
    )
    .map_err(|e| sink.annotate(e))?;
    sink.flush()?;
    Ok(adapted)
}

/// Fully supervised upper bound: trains on source pairs plus the first half
/// of the target test pairs, for the combined epoch budget. Evaluate it on
/// the second half of the test pairs only.
pub fn oracle_train(
    bundle: &DatasetBundle,
    cfg: &TrainConfig,
    sink: &mut TrainSink,
) -> Result<ModelState> {
    cfg.validate()?;
    let half = bundle.target_test_pairs.len() / 2;
    let mut combined = bundle.clone();
    combined
        .source_pairs
        .extend(bundle.target_test_pairs[..half].iter().cloned());
    let oracle_cfg = TrainConfig {
        pretrain_epochs: cfg.pretrain_epochs + cfg.adapt_epochs,
        ..cfg.clone()
    };
    let (state, _) = pretrain_source(&combined, &oracle_cfg, sink)?;
    Ok(state)
}

/// The half of the test pairs the oracle never trains on.
pub fn oracle_eval_split(bundle: &DatasetBundle) -> &[(RecipeSample, ImageSample)] {
    let half = bundle.target_test_pairs.len() / 2;
    &bundle.target_test_pairs[half..]
}
