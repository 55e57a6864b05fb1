//! Learnable recipe/image encoders, the frozen source recipe encoder, the
//! domain discriminator and the two regularizer heads.
//!
//! All encoders emit row-l2-normalized embeddings, so cosine similarity
//! between outputs is a plain dot product.

use crate::data::{ImageSample, RecipeSample};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Stream;
use crate::tape::{NodeId, Tape};
use rand::Rng;

/// Probabilities leaving the discriminator (and entering any log) stay inside
/// this band.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelDims {
    pub d_title: usize,
    pub d_ingredient: usize,
    pub d_steps: usize,
    pub d_image: usize,
    pub vocab: usize,
    /// Width of the per-section sub-encoders.
    pub hidden: usize,
    /// Embedding dimension.
    pub embed: usize,
    pub disc_hidden: usize,
}

impl ModelDims {
    pub fn for_data(config: &crate::data::GenConfig) -> Self {
        ModelDims {
            d_title: config.d_title,
            d_ingredient: config.d_ingredient,
            d_steps: config.d_steps,
            d_image: config.d_image,
            vocab: config.vocab,
            hidden: 24,
            embed: 32,
            disc_hidden: 32,
        }
    }
}

/// One fully connected layer; weights are in x out, bias is 1 x out.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Matrix,
    pub b: Matrix,
}

impl Dense {
    /// Uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out)); zero bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut Stream) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-a..a))
            .collect();
        Dense {
            w: Matrix::from_vec(fan_in, fan_out, data).expect("sized by construction"),
            b: Matrix::zeros(1, fan_out),
        }
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        out.push((format!("{prefix}.w"), &self.w));
        out.push((format!("{prefix}.b"), &self.b));
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Matrix)>) {
        out.push((format!("{prefix}.w"), &mut self.w));
        out.push((format!("{prefix}.b"), &mut self.b));
    }
}

/// Leaf ids of a dense layer inserted into a tape.
#[derive(Clone, Copy)]
pub struct TapedDense {
    pub w: NodeId,
    pub b: NodeId,
}

impl TapedDense {
    fn insert(params: &Dense, tape: &mut Tape) -> Self {
        TapedDense {
            w: tape.leaf(params.w.clone()),
            b: tape.leaf(params.b.clone()),
        }
    }

    fn apply(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        tape.dense(x, self.w, self.b)
    }
}

/// Three per-section sub-encoders (tanh) fused by a linear layer, then
/// row-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct RecipeEncoderParams {
    pub title: Dense,
    pub ingredient: Dense,
    pub steps: Dense,
    pub fusion: Dense,
}

impl RecipeEncoderParams {
    pub fn init(dims: &ModelDims, rng: &mut Stream) -> Self {
        RecipeEncoderParams {
            title: Dense::init(dims.d_title, dims.hidden, rng),
            ingredient: Dense::init(dims.d_ingredient, dims.hidden, rng),
            steps: Dense::init(dims.d_steps, dims.hidden, rng),
            fusion: Dense::init(3 * dims.hidden, dims.embed, rng),
        }
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        self.title.named(&format!("{prefix}.title"), &mut out);
        self.ingredient
            .named(&format!("{prefix}.ingredient"), &mut out);
        self.steps.named(&format!("{prefix}.steps"), &mut out);
        self.fusion.named(&format!("{prefix}.fusion"), &mut out);
        out
    }

    pub fn named_tensors_mut(&mut self, prefix: &str) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        self.title.named_mut(&format!("{prefix}.title"), &mut out);
        self.ingredient
            .named_mut(&format!("{prefix}.ingredient"), &mut out);
        self.steps.named_mut(&format!("{prefix}.steps"), &mut out);
        self.fusion.named_mut(&format!("{prefix}.fusion"), &mut out);
        out
    }
}

pub struct TapedRecipeEncoder {
    title: TapedDense,
    ingredient: TapedDense,
    steps: TapedDense,
    fusion: TapedDense,
}

impl TapedRecipeEncoder {
    pub fn insert(params: &RecipeEncoderParams, tape: &mut Tape) -> Self {
        TapedRecipeEncoder {
            title: TapedDense::insert(&params.title, tape),
            ingredient: TapedDense::insert(&params.ingredient, tape),
            steps: TapedDense::insert(&params.steps, tape),
            fusion: TapedDense::insert(&params.fusion, tape),
        }
    }

    pub fn param_ids(&self) -> Vec<NodeId> {
        vec![
            self.title.w,
            self.title.b,
            self.ingredient.w,
            self.ingredient.b,
            self.steps.w,
            self.steps.b,
            self.fusion.w,
            self.fusion.b,
        ]
    }

    /// Embed a batch given its three feature blocks (already on the tape).
    pub fn forward(
        &self,
        tape: &mut Tape,
        title: NodeId,
        ingredient: NodeId,
        steps: NodeId,
    ) -> Result<NodeId> {
        let t = self.title.apply(tape, title)?;
        let t = tape.tanh(t);
        let i = self.ingredient.apply(tape, ingredient)?;
        let i = tape.tanh(i);
        let s = self.steps.apply(tape, steps)?;
        let s = tape.tanh(s);
        let ti = tape.concat_cols(t, i)?;
        let fused = tape.concat_cols(ti, s)?;
        let emb = self.fusion.apply(tape, fused)?;
        tape.l2_normalize_rows(emb)
    }
}

/// Two dense layers (relu then linear), row-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEncoderParams {
    pub l1: Dense,
    pub l2: Dense,
}

impl ImageEncoderParams {
    pub fn init(dims: &ModelDims, rng: &mut Stream) -> Self {
        ImageEncoderParams {
            l1: Dense::init(dims.d_image, dims.hidden, rng),
            l2: Dense::init(dims.hidden, dims.embed, rng),
        }
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        self.l1.named(&format!("{prefix}.l1"), &mut out);
        self.l2.named(&format!("{prefix}.l2"), &mut out);
        out
    }

    pub fn named_tensors_mut(&mut self, prefix: &str) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        self.l1.named_mut(&format!("{prefix}.l1"), &mut out);
        self.l2.named_mut(&format!("{prefix}.l2"), &mut out);
        out
    }
}

pub struct TapedImageEncoder {
    l1: TapedDense,
    l2: TapedDense,
}

impl TapedImageEncoder {
    pub fn insert(params: &ImageEncoderParams, tape: &mut Tape) -> Self {
        TapedImageEncoder {
            l1: TapedDense::insert(&params.l1, tape),
            l2: TapedDense::insert(&params.l2, tape),
        }
    }

    pub fn param_ids(&self) -> Vec<NodeId> {
        vec![self.l1.w, self.l1.b, self.l2.w, self.l2.b]
    }

    pub fn forward(&self, tape: &mut Tape, image: NodeId) -> Result<NodeId> {
        let h = self.l1.apply(tape, image)?;
        let h = tape.relu(h);
        let emb = self.l2.apply(tape, h)?;
        tape.l2_normalize_rows(emb)
    }
}

/// Three-layer perceptron emitting a source-vs-target probability.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams {
    pub l1: Dense,
    pub l2: Dense,
    pub l3: Dense,
}

impl DiscriminatorParams {
    pub fn init(dims: &ModelDims, rng: &mut Stream) -> Self {
        DiscriminatorParams {
            l1: Dense::init(dims.embed, dims.disc_hidden, rng),
            l2: Dense::init(dims.disc_hidden, dims.disc_hidden, rng),
            l3: Dense::init(dims.disc_hidden, 1, rng),
        }
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        self.l1.named(&format!("{prefix}.l1"), &mut out);
        self.l2.named(&format!("{prefix}.l2"), &mut out);
        self.l3.named(&format!("{prefix}.l3"), &mut out);
        out
    }

    pub fn named_tensors_mut(&mut self, prefix: &str) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        self.l1.named_mut(&format!("{prefix}.l1"), &mut out);
        self.l2.named_mut(&format!("{prefix}.l2"), &mut out);
        self.l3.named_mut(&format!("{prefix}.l3"), &mut out);
        out
    }
}

pub struct TapedDiscriminator {
    l1: TapedDense,
    l2: TapedDense,
    l3: TapedDense,
}

impl TapedDiscriminator {
    pub fn insert(params: &DiscriminatorParams, tape: &mut Tape) -> Self {
        TapedDiscriminator {
            l1: TapedDense::insert(&params.l1, tape),
            l2: TapedDense::insert(&params.l2, tape),
            l3: TapedDense::insert(&params.l3, tape),
        }
    }

    pub fn param_ids(&self) -> Vec<NodeId> {
        vec![
            self.l1.w, self.l1.b, self.l2.w, self.l2.b, self.l3.w, self.l3.b,
        ]
    }

    /// Probabilities in (0,1), clamped away from the extremes so downstream
    /// logs stay finite.
    pub fn forward(&self, tape: &mut Tape, embeddings: NodeId) -> Result<NodeId> {
        let h = self.l1.apply(tape, embeddings)?;
        let h = tape.relu(h);
        let h = self.l2.apply(tape, h)?;
        let h = tape.relu(h);
        let logits = self.l3.apply(tape, h)?;
        let p = tape.sigmoid(logits);
        Ok(tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP))
    }
}

/// Ingredient classifier (image embedding -> vocab, sigmoid) and feature
/// reconstructor (recipe embedding -> image feature space, linear).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadsParams {
    pub ingredient: Dense,
    pub reconstruct: Dense,
}

impl HeadsParams {
    pub fn init(dims: &ModelDims, rng: &mut Stream) -> Self {
        HeadsParams {
            ingredient: Dense::init(dims.embed, dims.vocab, rng),
            reconstruct: Dense::init(dims.embed, dims.d_image, rng),
        }
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        self.ingredient
            .named(&format!("{prefix}.ingredient"), &mut out);
        self.reconstruct
            .named(&format!("{prefix}.reconstruct"), &mut out);
        out
    }

    pub fn named_tensors_mut(&mut self, prefix: &str) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        self.ingredient
            .named_mut(&format!("{prefix}.ingredient"), &mut out);
        self.reconstruct
            .named_mut(&format!("{prefix}.reconstruct"), &mut out);
        out
    }
}

pub struct TapedHeads {
    pub ingredient: TapedDense,
    pub reconstruct: TapedDense,
}

impl TapedHeads {
    pub fn insert(params: &HeadsParams, tape: &mut Tape) -> Self {
        TapedHeads {
            ingredient: TapedDense::insert(&params.ingredient, tape),
            reconstruct: TapedDense::insert(&params.reconstruct, tape),
        }
    }

    pub fn param_ids(&self) -> Vec<NodeId> {
        vec![
            self.ingredient.w,
            self.ingredient.b,
            self.reconstruct.w,
            self.reconstruct.b,
        ]
    }

    /// Multi-label ingredient probabilities from image embeddings.
    pub fn classify(&self, tape: &mut Tape, image_emb: NodeId) -> Result<NodeId> {
        let logits = self.ingredient.apply(tape, image_emb)?;
        Ok(tape.sigmoid(logits))
    }

    /// Reconstruct raw image features from recipe embeddings.
    pub fn reconstruct(&self, tape: &mut Tape, recipe_emb: NodeId) -> Result<NodeId> {
        self.reconstruct.apply(tape, recipe_emb)
    }
}

/// Snapshot of the source recipe encoder, immutable during adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenSourceEncoder(RecipeEncoderParams);

impl FrozenSourceEncoder {
    pub fn snapshot(params: &RecipeEncoderParams) -> Self {
        FrozenSourceEncoder(params.clone())
    }

    pub fn params(&self) -> &RecipeEncoderParams {
        &self.0
    }

    pub fn encode(&self, batch: &[&RecipeSample]) -> Result<Matrix> {
        encode_recipes_plain(&self.0, batch)
    }

    /// Bit pattern of every parameter, for immutability checks.
    pub fn parameter_bits(&self) -> Vec<u64> {
        self.0
            .named_tensors("frozen")
            .iter()
            .flat_map(|(_, m)| m.data().iter().map(|v| v.to_bits()))
            .collect()
    }
}

/// All learnable parameters plus the frozen source encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub dims: ModelDims,
    pub recipe_encoder: RecipeEncoderParams,
    pub image_encoder: ImageEncoderParams,
    pub discriminator: DiscriminatorParams,
    pub heads: HeadsParams,
}

impl ModelState {
    pub fn init(dims: ModelDims, rng: &mut Stream) -> Self {
        ModelState {
            dims,
            recipe_encoder: RecipeEncoderParams::init(&dims, rng),
            image_encoder: ImageEncoderParams::init(&dims, rng),
            discriminator: DiscriminatorParams::init(&dims, rng),
            heads: HeadsParams::init(&dims, rng),
        }
    }

    /// Tensors updated by the encoder step: both encoders and the heads.
    pub fn encoder_group(&self) -> Vec<(String, &Matrix)> {
        let mut out = self.recipe_encoder.named_tensors("recipe");
        out.extend(self.image_encoder.named_tensors("image"));
        out.extend(self.heads.named_tensors("heads"));
        out
    }

    pub fn encoder_group_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = self.recipe_encoder.named_tensors_mut("recipe");
        out.extend(self.image_encoder.named_tensors_mut("image"));
        out.extend(self.heads.named_tensors_mut("heads"));
        out
    }

    pub fn discriminator_group(&self) -> Vec<(String, &Matrix)> {
        self.discriminator.named_tensors("disc")
    }

    pub fn discriminator_group_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        self.discriminator.named_tensors_mut("disc")
    }

    pub fn all_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = self.encoder_group();
        out.extend(self.discriminator_group());
        out
    }

    pub fn all_tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = self.recipe_encoder.named_tensors_mut("recipe");
        out.extend(self.image_encoder.named_tensors_mut("image"));
        out.extend(self.heads.named_tensors_mut("heads"));
        out.extend(self.discriminator.named_tensors_mut("disc"));
        out
    }
}

/// Run the recipe encoder outside any training graph.
pub fn encode_recipes_plain(params: &RecipeEncoderParams, batch: &[&RecipeSample]) -> Result<Matrix> {
    if batch.is_empty() {
        return Err(Error::Contract("encode_recipe: empty batch".into()));
    }
    let (title, ingredient, steps) = crate::data::recipe_blocks(batch);
    let mut tape = Tape::new();
    let enc = TapedRecipeEncoder::insert(params, &mut tape);
    let t = tape.leaf(title);
    let i = tape.leaf(ingredient);
    let s = tape.leaf(steps);
    let out = enc.forward(&mut tape, t, i, s)?;
    Ok(tape.value(out).clone())
}

/// Run the image encoder outside any training graph.
pub fn encode_images_plain(params: &ImageEncoderParams, batch: &[&ImageSample]) -> Result<Matrix> {
    if batch.is_empty() {
        return Err(Error::Contract("encode_image: empty batch".into()));
    }
    let feats = crate::data::image_matrix(batch);
    let mut tape = Tape::new();
    let enc = TapedImageEncoder::insert(params, &mut tape);
    let x = tape.leaf(feats);
    let out = enc.forward(&mut tape, x)?;
    Ok(tape.value(out).clone())
}

/// Run the discriminator outside any training graph.
pub fn discriminate_plain(params: &DiscriminatorParams, embeddings: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let disc = TapedDiscriminator::insert(params, &mut tape);
    let x = tape.leaf(embeddings.clone());
    let out = disc.forward(&mut tape, x)?;
    Ok(tape.value(out).clone())
}
