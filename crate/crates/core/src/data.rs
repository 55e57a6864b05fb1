//! Synthetic paired/unpaired cross-modal datasets for two domains.
//!
//! Every sample derives from a latent dish concept `z`. Source recipes and
//! images are fixed linear maps of `z` plus noise; the target domain applies
//! a per-block latent rotation (angle `shift_angle`) and a feature-space mean
//! offset on top of the same maps, so one scalar controls the domain gap.
//! A fraction of source samples additionally gets a large fixed offset:
//! those are the "distinctive" samples the selection machinery is meant to
//! filter out.

use crate::error::{Error, Result};
use crate::kv::{self, KvReader};
use crate::matrix::Matrix;
use crate::rng::{substream, Stream};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const SOURCE_PAIRS_FILE: &str = "source_pairs.tsv";
pub const TARGET_RECIPES_FILE: &str = "target_recipes.tsv";
pub const TARGET_TEST_FILE: &str = "target_test.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub n_source: usize,
    pub n_target: usize,
    pub n_target_test: usize,
    pub latent_dim: usize,
    pub d_title: usize,
    pub d_ingredient: usize,
    pub d_steps: usize,
    pub d_image: usize,
    pub vocab: usize,
    pub active_labels: usize,
    /// Rotation angle of the target domain's latent maps, in [0, pi/2].
    pub shift_angle: f64,
    pub noise_scale: f64,
    /// Fraction of source samples marked distinctive.
    pub distinct_fraction: f64,
    /// Magnitude of the extra feature-space offset on distinctive samples.
    pub distinct_scale: f64,
    /// Mean offset of the target domain is shift_angle * offset_scale.
    pub offset_scale: f64,
    /// Attenuation of the mean offset on the image block.
    pub image_offset_scale: f64,
    /// Attenuation of the rotation and offset on the recipe blocks. The
    /// image block shifts by the full angle; recipes shift by a fraction of
    /// it so similarities under the frozen encoder keep enough resolution
    /// for sample selection.
    pub recipe_shift_scale: f64,
    /// Magnitude of a fixed component shared by every recipe (both domains).
    /// Gives recipe features the anisotropy of real text embeddings, so
    /// ordinary samples have a positive similarity baseline that scattered
    /// distinctive samples lack.
    pub common_scale: f64,
    /// Displacement of the target domain's concept distribution along a
    /// fixed latent direction. Through the shared maps this is a coherent
    /// per-block mean offset, and it is what makes "similarity to the
    /// target" a stable per-sample property: source dishes near the target
    /// region transfer, dishes far from it do not.
    pub target_latent_offset: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_source: 2000,
            n_target: 1000,
            n_target_test: 500,
            latent_dim: 16,
            d_title: 20,
            d_ingredient: 20,
            d_steps: 20,
            d_image: 32,
            vocab: 50,
            active_labels: 5,
            shift_angle: 0.6,
            noise_scale: 0.1,
            distinct_fraction: 0.2,
            distinct_scale: 3.0,
            offset_scale: 2.0,
            image_offset_scale: 0.25,
            recipe_shift_scale: 0.4,
            common_scale: 2.0,
            target_latent_offset: 1.5,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let half_pi = std::f64::consts::FRAC_PI_2;
        if !(0.0..=half_pi).contains(&self.shift_angle) {
            return Err(Error::Config(format!(
                "shift_angle must lie in [0, pi/2], got {}",
                self.shift_angle
            )));
        }
        if self.noise_scale < 0.0 {
            return Err(Error::Config("noise_scale must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.distinct_fraction) {
            return Err(Error::Config("distinct_fraction must lie in [0,1]".into()));
        }
        for (name, v) in [
            ("n_source", self.n_source),
            ("n_target", self.n_target),
            ("n_target_test", self.n_target_test),
            ("latent_dim", self.latent_dim),
            ("d_title", self.d_title),
            ("d_ingredient", self.d_ingredient),
            ("d_steps", self.d_steps),
            ("d_image", self.d_image),
            ("vocab", self.vocab),
            ("active_labels", self.active_labels),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.active_labels > self.vocab {
            return Err(Error::Config(format!(
                "active_labels {} exceeds vocab {}",
                self.active_labels, self.vocab
            )));
        }
        if self.distinct_scale < 0.0 || self.offset_scale < 0.0 || self.image_offset_scale < 0.0
        {
            return Err(Error::Config("scales must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.recipe_shift_scale) {
            return Err(Error::Config(
                "recipe_shift_scale must lie in [0,1]".into(),
            ));
        }
        if self.common_scale < 0.0 {
            return Err(Error::Config("common_scale must be >= 0".into()));
        }
        if self.target_latent_offset < 0.0 {
            return Err(Error::Config(
                "target_latent_offset must be >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let f = |v: f64| format!("{v}");
        vec![
            ("n_source".into(), self.n_source.to_string()),
            ("n_target".into(), self.n_target.to_string()),
            ("n_target_test".into(), self.n_target_test.to_string()),
            ("latent_dim".into(), self.latent_dim.to_string()),
            ("d_title".into(), self.d_title.to_string()),
            ("d_ingredient".into(), self.d_ingredient.to_string()),
            ("d_steps".into(), self.d_steps.to_string()),
            ("d_image".into(), self.d_image.to_string()),
            ("vocab".into(), self.vocab.to_string()),
            ("active_labels".into(), self.active_labels.to_string()),
            ("shift_angle".into(), f(self.shift_angle)),
            ("noise_scale".into(), f(self.noise_scale)),
            ("distinct_fraction".into(), f(self.distinct_fraction)),
            ("distinct_scale".into(), f(self.distinct_scale)),
            ("offset_scale".into(), f(self.offset_scale)),
            ("image_offset_scale".into(), f(self.image_offset_scale)),
            ("recipe_shift_scale".into(), f(self.recipe_shift_scale)),
            ("common_scale".into(), f(self.common_scale)),
            ("target_latent_offset".into(), f(self.target_latent_offset)),
        ]
    }

    pub fn from_kv(pairs: &[(String, String)], origin: &str) -> Result<Self> {
        let known = [
            "n_source",
            "n_target",
            "n_target_test",
            "latent_dim",
            "d_title",
            "d_ingredient",
            "d_steps",
            "d_image",
            "vocab",
            "active_labels",
            "shift_angle",
            "noise_scale",
            "distinct_fraction",
            "distinct_scale",
            "offset_scale",
            "image_offset_scale",
            "recipe_shift_scale",
            "common_scale",
            "target_latent_offset",
        ];
        for (k, _) in pairs {
            if !known.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown key {k} in {origin}")));
            }
        }
        let r = KvReader::new(pairs, origin);
        let d = GenConfig::default();
        let cfg = GenConfig {
            n_source: r.parse_or("n_source", d.n_source)?,
            n_target: r.parse_or("n_target", d.n_target)?,
            n_target_test: r.parse_or("n_target_test", d.n_target_test)?,
            latent_dim: r.parse_or("latent_dim", d.latent_dim)?,
            d_title: r.parse_or("d_title", d.d_title)?,
            d_ingredient: r.parse_or("d_ingredient", d.d_ingredient)?,
            d_steps: r.parse_or("d_steps", d.d_steps)?,
            d_image: r.parse_or("d_image", d.d_image)?,
            vocab: r.parse_or("vocab", d.vocab)?,
            active_labels: r.parse_or("active_labels", d.active_labels)?,
            shift_angle: r.parse_or("shift_angle", d.shift_angle)?,
            noise_scale: r.parse_or("noise_scale", d.noise_scale)?,
            distinct_fraction: r.parse_or("distinct_fraction", d.distinct_fraction)?,
            distinct_scale: r.parse_or("distinct_scale", d.distinct_scale)?,
            offset_scale: r.parse_or("offset_scale", d.offset_scale)?,
            image_offset_scale: r.parse_or("image_offset_scale", d.image_offset_scale)?,
            recipe_shift_scale: r.parse_or("recipe_shift_scale", d.recipe_shift_scale)?,
            common_scale: r.parse_or("common_scale", d.common_scale)?,
            target_latent_offset: r.parse_or("target_latent_offset", d.target_latent_offset)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecipeSample {
    pub id: u64,
    pub title_feat: Vec<f64>,
    pub ingredient_feat: Vec<f64>,
    pub steps_feat: Vec<f64>,
    /// Binary multi-hot ingredient indicator, at least one entry active.
    pub ingredient_labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub id: u64,
    pub image_feat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenManifest {
    pub seed: u64,
    pub config: GenConfig,
    /// Digest over the latent vectors in recipe construction order.
    pub recipe_latent_digest: String,
    /// Digest over the latent vectors in image construction order.
    pub image_latent_digest: String,
    /// Ids of the distinctive source samples.
    pub distinct_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub source_pairs: Vec<(RecipeSample, ImageSample)>,
    pub target_recipes: Vec<RecipeSample>,
    /// Held out paired target data, used for evaluation only.
    pub target_test_pairs: Vec<(RecipeSample, ImageSample)>,
    pub manifest: GenManifest,
}

/// Linear map from latent space plus a fixed feature-space rotation and
/// offsets describing the target domain's shift.
struct BlockMap {
    /// latent_dim x feature_dim
    weights: Matrix,
    /// Orthonormal plane pairs (u, v) in feature space. The target rotation
    /// turns by the shift angle inside every plane at once; rotating the
    /// feature space moves the (anisotropic) feature covariance, so the gap
    /// is observable from unpaired data, while a latent-space rotation of an
    /// isotropic concept vector would be statistically invisible.
    planes: Vec<(Vec<f64>, Vec<f64>)>,
    /// Unit offset direction the target domain shifts along.
    offset_dir: Vec<f64>,
    /// Unit direction of the component shared by every sample of the block.
    common_dir: Vec<f64>,
}

fn normal(rng: &mut Stream) -> f64 {
    StandardNormal.sample(rng)
}

fn draw_normal_vec(rng: &mut Stream, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

fn draw_unit_vec(rng: &mut Stream, n: usize) -> Vec<f64> {
    loop {
        let v = draw_normal_vec(rng, n);
        let norm = crate::matrix::l2_norm(&v);
        if norm > 1e-9 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

/// Random orthonormal basis paired into floor(n/2) disjoint 2-planes,
/// built by Gram-Schmidt over Gaussian draws.
fn draw_planes(rng: &mut Stream, n: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v = draw_normal_vec(rng, n);
        for b in &basis {
            let proj = crate::matrix::dot(&v, b);
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= proj * bi;
            }
        }
        let norm = crate::matrix::l2_norm(&v);
        if norm > 1e-9 {
            basis.push(v.iter().map(|x| x / norm).collect());
        }
    }
    basis
        .chunks_exact(2)
        .map(|pair| (pair[0].clone(), pair[1].clone()))
        .collect()
}

impl BlockMap {
    fn draw(rng: &mut Stream, latent_dim: usize, feature_dim: usize) -> Self {
        let scale = 1.0 / (latent_dim as f64).sqrt();
        let weights = Matrix::from_vec(
            latent_dim,
            feature_dim,
            draw_normal_vec(rng, latent_dim * feature_dim)
                .into_iter()
                .map(|v| v * scale)
                .collect(),
        )
        .expect("sized by construction");
        let planes = draw_planes(rng, feature_dim);
        let offset_dir = draw_unit_vec(rng, feature_dim);
        let common_dir = draw_unit_vec(rng, feature_dim);
        BlockMap {
            weights,
            planes,
            offset_dir,
            common_dir,
        }
    }

    /// Rotate a feature vector by `angle` inside every fixed 2-plane.
    fn rotate(&self, feats: &[f64], angle: f64) -> Vec<f64> {
        let (sin, cos) = angle.sin_cos();
        let mut out = feats.to_vec();
        for (u, v) in &self.planes {
            let a = crate::matrix::dot(feats, u);
            let b = crate::matrix::dot(feats, v);
            for ((oi, ui), vi) in out.iter_mut().zip(u).zip(v) {
                *oi += (cos - 1.0) * (a * ui + b * vi) + sin * (a * vi - b * ui);
            }
        }
        out
    }

    fn apply(&self, z: &[f64]) -> Vec<f64> {
        let zm = Matrix::row_vector(z.to_vec());
        let out = zm.matmul(&self.weights).expect("latent dims agree");
        out.data().to_vec()
    }

    fn features(
        &self,
        z: &[f64],
        domain: Domain,
        angle: f64,
        offset_scale: f64,
        common_scale: f64,
        noise_scale: f64,
        rng: &mut Stream,
    ) -> Vec<f64> {
        let mut base = match domain {
            Domain::Source => self.apply(z),
            Domain::Target => {
                let mut f = self.rotate(&self.apply(z), angle);
                let shift = angle * offset_scale;
                for (fi, oi) in f.iter_mut().zip(&self.offset_dir) {
                    *fi += shift * oi;
                }
                f
            }
        };
        for (fi, ci) in base.iter_mut().zip(&self.common_dir) {
            *fi += common_scale * ci;
        }
        base.into_iter()
            .map(|v| v + noise_scale * normal(rng))
            .collect()
    }

    /// Distinctive samples scatter along a per-sample random direction. A
    /// shared direction would form one far-away island that the tanh layers
    /// collapse to a point and fit for free; scattering spreads the damage
    /// so downweighting it is worth something.
    fn add_distinct(&self, feats: &mut [f64], scale: f64, rng: &mut Stream) {
        let dir = draw_unit_vec(rng, feats.len());
        for (f, d) in feats.iter_mut().zip(&dir) {
            *f += scale * d;
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Domain {
    Source,
    Target,
}

struct Generator {
    config: GenConfig,
    title: BlockMap,
    ingredient: BlockMap,
    steps: BlockMap,
    image: BlockMap,
    /// latent_dim x vocab projection behind the ingredient labels.
    label_proj: Matrix,
    /// Unit latent direction the target concept distribution is shifted
    /// along.
    target_dir: Vec<f64>,
}

impl Generator {
    fn new(config: &GenConfig, rng: &mut Stream) -> Self {
        let l = config.latent_dim;
        Generator {
            config: config.clone(),
            title: BlockMap::draw(rng, l, config.d_title),
            ingredient: BlockMap::draw(rng, l, config.d_ingredient),
            steps: BlockMap::draw(rng, l, config.d_steps),
            image: BlockMap::draw(rng, l, config.d_image),
            label_proj: Matrix::from_vec(l, config.vocab, draw_normal_vec(rng, l * config.vocab))
                .expect("sized by construction"),
            target_dir: draw_unit_vec(rng, l),
        }
    }

    /// Concept vector for a target-domain dish.
    fn draw_target_latent(&self, rng: &mut Stream) -> Vec<f64> {
        let mut z = draw_normal_vec(rng, self.config.latent_dim);
        for (zi, di) in z.iter_mut().zip(&self.target_dir) {
            *zi += self.config.target_latent_offset * di;
        }
        z
    }

    fn labels(&self, z: &[f64]) -> Vec<u8> {
        let projected = Matrix::row_vector(z.to_vec())
            .matmul(&self.label_proj)
            .expect("latent dims agree");
        let scores = projected.data();
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        let mut labels = vec![0u8; scores.len()];
        for &idx in order.iter().take(self.config.active_labels) {
            labels[idx] = 1;
        }
        labels
    }

    fn recipe(
        &self,
        id: u64,
        z: &[f64],
        domain: Domain,
        distinct: bool,
        rng: &mut Stream,
    ) -> RecipeSample {
        let c = &self.config;
        let angle = c.shift_angle * c.recipe_shift_scale;
        let mut title = self.title.features(
            z,
            domain,
            angle,
            c.offset_scale,
            c.common_scale,
            c.noise_scale,
            rng,
        );
        let mut ingredient = self.ingredient.features(
            z,
            domain,
            angle,
            c.offset_scale,
            c.common_scale,
            c.noise_scale,
            rng,
        );
        let mut steps = self.steps.features(
            z,
            domain,
            angle,
            c.offset_scale,
            c.common_scale,
            c.noise_scale,
            rng,
        );
        if distinct {
            self.title.add_distinct(&mut title, c.distinct_scale, rng);
            self.ingredient
                .add_distinct(&mut ingredient, c.distinct_scale, rng);
            self.steps.add_distinct(&mut steps, c.distinct_scale, rng);
        }
        RecipeSample {
            id,
            title_feat: title,
            ingredient_feat: ingredient,
            steps_feat: steps,
            ingredient_labels: self.labels(z),
        }
    }

    // Distinctive samples keep ordinary image features: the extra offset
    // lives in the recipe blocks only, so those pairs are cross-modally
    // inconsistent and act as training noise unless filtered or downweighted.
    fn image(&self, id: u64, z: &[f64], domain: Domain, rng: &mut Stream) -> ImageSample {
        let c = &self.config;
        let feat = self.image.features(
            z,
            domain,
            c.shift_angle,
            c.offset_scale * c.image_offset_scale,
            0.0,
            c.noise_scale,
            rng,
        );
        ImageSample {
            id,
            image_feat: feat,
        }
    }
}

fn digest_latent(hasher: &mut Sha256, z: &[f64]) {
    for v in z {
        hasher.update(v.to_bits().to_le_bytes());
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Ids of each split live in disjoint ranges.
const TARGET_ID_BASE: u64 = 1_000_000;
const TEST_ID_BASE: u64 = 2_000_000;

pub fn generate(config: &GenConfig, seed: u64) -> Result<DatasetBundle> {
    config.validate()?;
    let mut rng = substream(seed, "data");
    let gen = Generator::new(config, &mut rng);

    // Exact count of distinctive samples, chosen by partial shuffle.
    let n_distinct = (config.distinct_fraction * config.n_source as f64).round() as usize;
    let mut indices: Vec<usize> = (0..config.n_source).collect();
    for i in 0..n_distinct.min(config.n_source) {
        let j = rng.random_range(i..config.n_source);
        indices.swap(i, j);
    }
    let mut is_distinct = vec![false; config.n_source];
    for &i in indices.iter().take(n_distinct) {
        is_distinct[i] = true;
    }

    let mut recipe_hasher = Sha256::new();
    let mut image_hasher = Sha256::new();

    let mut source_pairs = Vec::with_capacity(config.n_source);
    for i in 0..config.n_source {
        let z = draw_normal_vec(&mut rng, config.latent_dim);
        let id = i as u64;
        digest_latent(&mut recipe_hasher, &z);
        let recipe = gen.recipe(id, &z, Domain::Source, is_distinct[i], &mut rng);
        digest_latent(&mut image_hasher, &z);
        let image = gen.image(id, &z, Domain::Source, &mut rng);
        source_pairs.push((recipe, image));
    }

    let mut target_recipes = Vec::with_capacity(config.n_target);
    for j in 0..config.n_target {
        let z = gen.draw_target_latent(&mut rng);
        let id = TARGET_ID_BASE + j as u64;
        digest_latent(&mut recipe_hasher, &z);
        target_recipes.push(gen.recipe(id, &z, Domain::Target, false, &mut rng));
    }

    let mut target_test_pairs = Vec::with_capacity(config.n_target_test);
    for k in 0..config.n_target_test {
        let z = gen.draw_target_latent(&mut rng);
        let id = TEST_ID_BASE + k as u64;
        digest_latent(&mut recipe_hasher, &z);
        let recipe = gen.recipe(id, &z, Domain::Target, false, &mut rng);
        digest_latent(&mut image_hasher, &z);
        let image = gen.image(id, &z, Domain::Target, &mut rng);
        target_test_pairs.push((recipe, image));
    }

    let distinct_ids = is_distinct
        .iter()
        .enumerate()
        .filter(|(_, d)| **d)
        .map(|(i, _)| i as u64)
        .collect();

    Ok(DatasetBundle {
        source_pairs,
        target_recipes,
        target_test_pairs,
        manifest: GenManifest {
            seed,
            config: config.clone(),
            recipe_latent_digest: hex(&recipe_hasher.finalize()),
            image_latent_digest: hex(&image_hasher.finalize()),
            distinct_ids,
        },
    })
}

fn join_floats(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn join_labels(v: &[u8]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn recipe_fields(r: &RecipeSample) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}",
        r.id,
        join_floats(&r.title_feat),
        join_floats(&r.ingredient_feat),
        join_floats(&r.steps_feat),
        join_labels(&r.ingredient_labels)
    )
}

pub fn save(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;

    let mut manifest = String::new();
    manifest.push_str("# synthetic cross-modal dataset\n");
    manifest.push_str("# files: source_pairs.tsv, target_recipes.tsv, target_test.tsv\n");
    manifest.push_str("# record delimiter: tab; vector entries: comma\n");
    manifest.push_str(
        "# recipe fields: id, title_feat, ingredient_feat, steps_feat, ingredient_labels\n",
    );
    manifest.push_str("# pair fields: recipe fields, then image_feat\n");
    manifest.push_str("# floats are shortest round-trip decimal (bit-exact on reload)\n");
    let mut pairs = vec![
        ("format_version".to_string(), "1".to_string()),
        ("seed".to_string(), bundle.manifest.seed.to_string()),
    ];
    pairs.extend(bundle.manifest.config.to_kv());
    pairs.push((
        "recipe_latent_digest".to_string(),
        bundle.manifest.recipe_latent_digest.clone(),
    ));
    pairs.push((
        "image_latent_digest".to_string(),
        bundle.manifest.image_latent_digest.clone(),
    ));
    pairs.push((
        "distinct_ids".to_string(),
        bundle
            .manifest
            .distinct_ids
            .iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(","),
    ));
    manifest.push_str(&kv::render(&pairs));
    let mpath = dir.join(MANIFEST_FILE);
    std::fs::write(&mpath, manifest).map_err(|e| Error::io(mpath.display().to_string(), e))?;

    let mut src = String::new();
    for (r, v) in &bundle.source_pairs {
        src.push_str(&recipe_fields(r));
        src.push('\t');
        src.push_str(&join_floats(&v.image_feat));
        src.push('\n');
    }
    let spath = dir.join(SOURCE_PAIRS_FILE);
    std::fs::write(&spath, src).map_err(|e| Error::io(spath.display().to_string(), e))?;

    let mut tgt = String::new();
    for r in &bundle.target_recipes {
        tgt.push_str(&recipe_fields(r));
        tgt.push('\n');
    }
    let tpath = dir.join(TARGET_RECIPES_FILE);
    std::fs::write(&tpath, tgt).map_err(|e| Error::io(tpath.display().to_string(), e))?;

    let mut test = String::new();
    for (r, v) in &bundle.target_test_pairs {
        test.push_str(&recipe_fields(r));
        test.push('\t');
        test.push_str(&join_floats(&v.image_feat));
        test.push('\n');
    }
    let epath = dir.join(TARGET_TEST_FILE);
    std::fs::write(&epath, test).map_err(|e| Error::io(epath.display().to_string(), e))?;

    Ok(())
}

struct LineParser<'a> {
    path: String,
    line: usize,
    config: &'a GenConfig,
}

impl<'a> LineParser<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn float_vec(&self, field: &str, name: &str, want: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(want);
        for part in field.split(',') {
            let v: f64 = part
                .parse()
                .map_err(|_| self.err(format!("{name}: bad float {part:?}")))?;
            if !v.is_finite() {
                return Err(self.err(format!("{name}: non-finite value")));
            }
            out.push(v);
        }
        if out.len() != want {
            return Err(self.err(format!(
                "{name}: expected {want} entries, got {}",
                out.len()
            )));
        }
        Ok(out)
    }

    fn recipe(&self, fields: &[&str]) -> Result<RecipeSample> {
        let c = self.config;
        let id: u64 = fields[0]
            .parse()
            .map_err(|_| self.err(format!("bad id {:?}", fields[0])))?;
        let labels: Vec<u8> = fields[4]
            .split(',')
            .map(|p| match p {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(self.err(format!("labels: expected 0/1, got {other:?}"))),
            })
            .collect::<Result<_>>()?;
        if labels.len() != c.vocab {
            return Err(self.err(format!(
                "labels: expected {} entries, got {}",
                c.vocab,
                labels.len()
            )));
        }
        if !labels.contains(&1) {
            return Err(self.err("labels: no active entry"));
        }
        Ok(RecipeSample {
            id,
            title_feat: self.float_vec(fields[1], "title_feat", c.d_title)?,
            ingredient_feat: self.float_vec(fields[2], "ingredient_feat", c.d_ingredient)?,
            steps_feat: self.float_vec(fields[3], "steps_feat", c.d_steps)?,
            ingredient_labels: labels,
        })
    }
}

fn read_lines(dir: &Path, file: &str, expect: usize) -> Result<Vec<String>> {
    let path = dir.join(file);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path.display().to_string())
        } else {
            Error::io(path.display().to_string(), e)
        }
    })?;
    let lines: Vec<String> = text.lines().map(|l| l.to_string()).collect();
    if lines.len() != expect {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: lines.len(),
            msg: format!("expected {expect} records, found {}", lines.len()),
        });
    }
    Ok(lines)
}

pub fn load(dir: &Path) -> Result<DatasetBundle> {
    let mpath = dir.join(MANIFEST_FILE);
    let pairs = kv::parse_file(&mpath)?;
    let reader = KvReader::new(&pairs, mpath.display().to_string());
    let version: u32 = reader.parse("format_version")?;
    if version != 1 {
        return Err(Error::Config(format!(
            "unsupported dataset format_version {version}"
        )));
    }
    let seed: u64 = reader.parse("seed")?;
    let recipe_latent_digest = reader.require("recipe_latent_digest")?.to_string();
    let image_latent_digest = reader.require("image_latent_digest")?.to_string();
    let distinct_raw = reader.require("distinct_ids")?;
    let distinct_ids: Vec<u64> = if distinct_raw.is_empty() {
        Vec::new()
    } else {
        distinct_raw
            .split(',')
            .map(|p| {
                p.parse().map_err(|_| {
                    Error::Config(format!("bad distinct id {p:?} in {}", mpath.display()))
                })
            })
            .collect::<Result<_>>()?
    };
    let config_pairs: Vec<(String, String)> = pairs
        .iter()
        .filter(|(k, _)| {
            ![
                "format_version",
                "seed",
                "recipe_latent_digest",
                "image_latent_digest",
                "distinct_ids",
            ]
            .contains(&k.as_str())
        })
        .cloned()
        .collect();
    let config = GenConfig::from_kv(&config_pairs, &mpath.display().to_string())?;

    let parse_split = |file: &str, expect: usize, with_image: bool| -> Result<Vec<(RecipeSample, Option<ImageSample>)>> {
        let lines = read_lines(dir, file, expect)?;
        let n_fields = if with_image { 6 } else { 5 };
        let mut out = Vec::with_capacity(expect);
        for (i, line) in lines.iter().enumerate() {
            let parser = LineParser {
                path: dir.join(file).display().to_string(),
                line: i + 1,
                config: &config,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != n_fields {
                return Err(parser.err(format!(
                    "expected {n_fields} tab-separated fields, got {}",
                    fields.len()
                )));
            }
            let recipe = parser.recipe(&fields)?;
            let image = if with_image {
                let feat = parser.float_vec(fields[5], "image_feat", config.d_image)?;
                Some(ImageSample {
                    id: recipe.id,
                    image_feat: feat,
                })
            } else {
                None
            };
            out.push((recipe, image));
        }
        Ok(out)
    };

    let source_pairs: Vec<(RecipeSample, ImageSample)> =
        parse_split(SOURCE_PAIRS_FILE, config.n_source, true)?
            .into_iter()
            .map(|(r, v)| (r, v.expect("image present")))
            .collect();
    let target_recipes: Vec<RecipeSample> =
        parse_split(TARGET_RECIPES_FILE, config.n_target, false)?
            .into_iter()
            .map(|(r, _)| r)
            .collect();
    let target_test_pairs: Vec<(RecipeSample, ImageSample)> =
        parse_split(TARGET_TEST_FILE, config.n_target_test, true)?
            .into_iter()
            .map(|(r, v)| (r, v.expect("image present")))
            .collect();

    // No test/train leakage across target splits.
    let train_ids: std::collections::BTreeSet<u64> =
        target_recipes.iter().map(|r| r.id).collect();
    for (r, _) in &target_test_pairs {
        if train_ids.contains(&r.id) {
            return Err(Error::Contract(format!(
                "target test id {} appears in the target training split",
                r.id
            )));
        }
    }

    Ok(DatasetBundle {
        source_pairs,
        target_recipes,
        target_test_pairs,
        manifest: GenManifest {
            seed,
            config,
            recipe_latent_digest,
            image_latent_digest,
            distinct_ids,
        },
    })
}

/// Stack the three recipe feature blocks of a batch into matrices.
pub fn recipe_blocks(batch: &[&RecipeSample]) -> (Matrix, Matrix, Matrix) {
    let title: Vec<Vec<f64>> = batch.iter().map(|r| r.title_feat.clone()).collect();
    let ing: Vec<Vec<f64>> = batch.iter().map(|r| r.ingredient_feat.clone()).collect();
    let steps: Vec<Vec<f64>> = batch.iter().map(|r| r.steps_feat.clone()).collect();
    (
        Matrix::from_rows(&title).expect("equal dims"),
        Matrix::from_rows(&ing).expect("equal dims"),
        Matrix::from_rows(&steps).expect("equal dims"),
    )
}

pub fn image_matrix(batch: &[&ImageSample]) -> Matrix {
    let rows: Vec<Vec<f64>> = batch.iter().map(|v| v.image_feat.clone()).collect();
    Matrix::from_rows(&rows).expect("equal dims")
}

pub fn label_matrix(batch: &[&RecipeSample]) -> Matrix {
    let rows: Vec<Vec<f64>> = batch
        .iter()
        .map(|r| r.ingredient_labels.iter().map(|&b| b as f64).collect())
        .collect();
    Matrix::from_rows(&rows).expect("equal dims")
}
