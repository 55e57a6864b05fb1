//! Training objectives: weighted bidirectional triplet loss, weighted
//! adversarial losses for discriminator and encoder, the source-domain
//! regularizer, and their combination.

use crate::encoders::{TapedDiscriminator, TapedHeads};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::selection::WeightVector;
use crate::tape::{NodeId, Tape};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Triplet margin.
    pub margin: f64,
    /// Adversarial trade-off.
    pub beta: f64,
    /// Regularizer trade-off.
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 0.3,
            beta: 0.01,
            lambda: 0.002,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin <= 0.0 {
            return Err(Error::Config(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        if self.beta < 0.0 || self.lambda < 0.0 {
            return Err(Error::Config(
                "beta and lambda must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-step scalar record of every objective component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub w_triplet: f64,
    pub w_adv_encoder: f64,
    pub w_adv_discriminator: f64,
    pub reg_classification: f64,
    pub reg_reconstruction: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_parts(
        w_triplet: f64,
        w_adv_encoder: f64,
        w_adv_discriminator: f64,
        reg_classification: f64,
        reg_reconstruction: f64,
        config: &LossConfig,
    ) -> Result<Self> {
        let total = w_triplet
            + config.beta * w_adv_encoder
            + config.lambda * (reg_classification + reg_reconstruction);
        let out = LossBreakdown {
            w_triplet,
            w_adv_encoder,
            w_adv_discriminator,
            reg_classification,
            reg_reconstruction,
            total,
        };
        for (name, v) in [
            ("w_triplet", w_triplet),
            ("w_adv_encoder", w_adv_encoder),
            ("w_adv_discriminator", w_adv_discriminator),
            ("reg_classification", reg_classification),
            ("reg_reconstruction", reg_reconstruction),
            ("total", total),
        ] {
            if !v.is_finite() {
                return Err(Error::Train(format!("non-finite loss component {name}")));
            }
        }
        Ok(out)
    }

    pub const LOG_HEADER: &'static str =
        "stage\tstep\tw_triplet\tw_adv_encoder\tw_adv_discriminator\treg_classification\treg_reconstruction\ttotal";

    pub fn log_line(&self, stage: &str, step: usize) -> String {
        format!(
            "{stage}\t{step}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.w_triplet,
            self.w_adv_encoder,
            self.w_adv_discriminator,
            self.reg_classification,
            self.reg_reconstruction,
            self.total
        )
    }
}

/// Cosine distance d(u, v) = 1 - cos(u, v), in [0, 2].
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    let nu = crate::matrix::l2_norm(u);
    let nv = crate::matrix::l2_norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate(
            "cosine_distance: zero vector".into(),
        ));
    }
    Ok(1.0 - crate::matrix::dot(u, v) / (nu * nv))
}

fn weights_column(tape: &mut Tape, weights: &WeightVector) -> NodeId {
    tape.leaf(Matrix::column_vector(weights.weights.clone()))
}

/// Bidirectional margin loss over positive pairs (row i of both matrices is
/// the same dish) against all in-batch negatives, scaled per anchor by the
/// source sample's weight:
///
///   sum_i w_i * (mean_{j != i} [d(r_i, v_i) - d(r_i, v_j) + margin]_+
///              + mean_{j != i} [d(v_i, r_i) - d(v_i, r_j) + margin]_+) / n
pub fn weighted_triplet_loss(
    tape: &mut Tape,
    recipe_emb: NodeId,
    image_emb: NodeId,
    weights: &WeightVector,
    margin: f64,
) -> Result<NodeId> {
    let n = tape.value(recipe_emb).rows();
    if n < 2 {
        return Err(Error::Contract(format!(
            "triplet loss needs at least 2 samples for negatives, got {n}"
        )));
    }
    if weights.len() != n {
        return Err(Error::Contract(format!(
            "weight vector length {} does not match batch size {n}",
            weights.len()
        )));
    }

    // Pairwise cosine distances D[i][j] = 1 - r_i . v_j (embeddings are
    // unit-norm rows). The image-anchor table is its transpose at the
    // similarity level.
    let vt = tape.transpose(image_emb);
    let sim = tape.matmul(recipe_emb, vt)?;
    let pos_sim = tape.row_dot(recipe_emb, image_emb)?;

    // Hinge argument H[i][j] = d(a_i, p_i) - d(a_i, n_j) + margin
    //                        = sim[i][j] - pos_sim[i] + margin.
    let mut off_diag = Matrix::filled(n, n, 1.0);
    for i in 0..n {
        off_diag.set(i, i, 0.0);
    }
    let mask = tape.leaf(off_diag);
    let neg_pos = tape.mul_scalar(pos_sim, -1.0);

    let anchor_term = |tape: &mut Tape, sim_matrix: NodeId| -> Result<NodeId> {
        let shifted = tape.add_col_broadcast(sim_matrix, neg_pos)?;
        let arg = tape.add_scalar(shifted, margin);
        let hinge = tape.relu(arg);
        let masked = tape.mul(hinge, mask)?;
        let sums = tape.row_sums(masked);
        Ok(tape.mul_scalar(sums, 1.0 / (n as f64 - 1.0)))
    };

    let recipe_anchor = anchor_term(tape, sim)?;
    let sim_t = tape.transpose(sim);
    let image_anchor = anchor_term(tape, sim_t)?;

    let per_anchor = tape.add(recipe_anchor, image_anchor)?;
    let w = weights_column(tape, weights);
    let weighted = tape.mul(per_anchor, w)?;
    Ok(tape.mean_all(weighted))
}

/// Domain-classification losses on recipe embeddings.
///
/// The discriminator minimizes
///   -(1/n) sum_i w_i (log D(s_i) + log(1 - D(t_i)))
/// and the encoder minimizes the non-saturating flip
///   -(1/n) sum_i w_i log D(t_i).
pub fn weighted_adversarial_losses(
    tape: &mut Tape,
    source_emb: NodeId,
    target_emb: NodeId,
    weights: &WeightVector,
    discriminator: &TapedDiscriminator,
) -> Result<(NodeId, NodeId)> {
    let n = tape.value(source_emb).rows();
    if tape.value(target_emb).rows() != n {
        return Err(Error::Shape {
            op: "weighted_adversarial_losses",
            lhs: tape.value(source_emb).shape(),
            rhs: tape.value(target_emb).shape(),
        });
    }
    if weights.len() != n {
        return Err(Error::Contract(format!(
            "weight vector length {} does not match batch size {n}",
            weights.len()
        )));
    }

    let d_src = discriminator.forward(tape, source_emb)?;
    let d_tgt = discriminator.forward(tape, target_emb)?;

    let ln_src = tape.ln(d_src);
    let neg_tgt = tape.mul_scalar(d_tgt, -1.0);
    let one_minus_tgt = tape.add_scalar(neg_tgt, 1.0);
    let ln_one_minus_tgt = tape.ln(one_minus_tgt);
    let ln_tgt = tape.ln(d_tgt);

    let w = weights_column(tape, weights);

    let disc_inner = tape.add(ln_src, ln_one_minus_tgt)?;
    let disc_weighted = tape.mul(disc_inner, w)?;
    let disc_mean = tape.mean_all(disc_weighted);
    let disc_loss = tape.mul_scalar(disc_mean, -1.0);

    let enc_weighted = tape.mul(ln_tgt, w)?;
    let enc_mean = tape.mean_all(enc_weighted);
    let enc_loss = tape.mul_scalar(enc_mean, -1.0);

    Ok((disc_loss, enc_loss))
}

/// Source-domain regularizer: multi-label BCE of the ingredient head on image
/// embeddings, and MSE of the reconstruction head on recipe embeddings
/// against the raw image features.
pub fn regularizer(
    tape: &mut Tape,
    image_emb: NodeId,
    ingredient_labels: &Matrix,
    recipe_emb: NodeId,
    raw_image_feats: &Matrix,
    heads: &TapedHeads,
) -> Result<(NodeId, NodeId)> {
    let probs = heads.classify(tape, image_emb)?;
    if tape.value(probs).shape() != ingredient_labels.shape() {
        return Err(Error::Shape {
            op: "regularizer_classification",
            lhs: tape.value(probs).shape(),
            rhs: ingredient_labels.shape(),
        });
    }
    let p = tape.clamp(probs, crate::encoders::PROB_CLAMP, 1.0 - crate::encoders::PROB_CLAMP);
    let y = tape.leaf(ingredient_labels.clone());
    let ln_p = tape.ln(p);
    let pos = tape.mul(y, ln_p)?;
    let neg_p = tape.mul_scalar(p, -1.0);
    let one_minus_p = tape.add_scalar(neg_p, 1.0);
    let ln_q = tape.ln(one_minus_p);
    let neg_y = tape.mul_scalar(y, -1.0);
    let one_minus_y = tape.add_scalar(neg_y, 1.0);
    let negterm = tape.mul(one_minus_y, ln_q)?;
    let s = tape.add(pos, negterm)?;
    let mean = tape.mean_all(s);
    let classification = tape.mul_scalar(mean, -1.0);

    let recon = heads.reconstruct(tape, recipe_emb)?;
    if tape.value(recon).shape() != raw_image_feats.shape() {
        return Err(Error::Shape {
            op: "regularizer_reconstruction",
            lhs: tape.value(recon).shape(),
            rhs: raw_image_feats.shape(),
        });
    }
    let x = tape.leaf(raw_image_feats.clone());
    let diff = tape.sub(recon, x)?;
    let sq = tape.mul(diff, diff)?;
    let reconstruction = tape.mean_all(sq);

    Ok((classification, reconstruction))
}

/// Combine the encoder-side objective per the trade-off hyperparameters:
/// total = triplet + beta * adversarial(encoder) + lambda * (cls + rec).
pub fn total_loss_node(
    tape: &mut Tape,
    triplet: NodeId,
    adv_encoder: Option<NodeId>,
    classification: NodeId,
    reconstruction: NodeId,
    config: &LossConfig,
) -> Result<NodeId> {
    let reg = tape.add(classification, reconstruction)?;
    let reg_scaled = tape.mul_scalar(reg, config.lambda);
    let mut total = tape.add(triplet, reg_scaled)?;
    if let Some(adv) = adv_encoder {
        let adv_scaled = tape.mul_scalar(adv, config.beta);
        total = tape.add(total, adv_scaled)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{DiscriminatorParams, HeadsParams, ModelDims};
    use crate::rng::substream;
    use rand::Rng;

    fn dims() -> ModelDims {
        ModelDims {
            d_title: 4,
            d_ingredient: 4,
            d_steps: 4,
            d_image: 6,
            vocab: 5,
            hidden: 6,
            embed: 8,
            disc_hidden: 8,
        }
    }

    fn unit_rows(rng: &mut crate::rng::Stream, n: usize, d: usize) -> Matrix {
        let mut m = Matrix::zeros(n, d);
        for r in 0..n {
            loop {
                let row: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = crate::matrix::l2_norm(&row);
                if norm > 1e-6 {
                    for (c, v) in row.iter().enumerate() {
                        m.set(r, c, v / norm);
                    }
                    break;
                }
            }
        }
        m
    }

    #[test]
    fn cosine_distance_basics() {
        assert_eq!(cosine_distance(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 2.0);
        assert!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn cosine_distance_is_scale_invariant() {
        let u = [0.3, -0.7, 0.2];
        let v = [0.1, 0.4, -0.9];
        let d1 = cosine_distance(&u, &v).unwrap();
        let scaled: Vec<f64> = u.iter().map(|x| 37.5 * x).collect();
        let d2 = cosine_distance(&scaled, &v).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
    }

    /// Naive per-term reference for the weighted triplet loss.
    fn triplet_oracle(r: &Matrix, v: &Matrix, w: &[f64], margin: f64) -> f64 {
        let n = r.rows();
        let d = |a: &[f64], b: &[f64]| 1.0 - crate::matrix::dot(a, b);
        let mut total = 0.0;
        for i in 0..n {
            let mut recipe_anchor = 0.0;
            let mut image_anchor = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                recipe_anchor +=
                    (d(r.row(i), v.row(i)) - d(r.row(i), v.row(j)) + margin).max(0.0);
                image_anchor +=
                    (d(v.row(i), r.row(i)) - d(v.row(i), r.row(j)) + margin).max(0.0);
            }
            total += w[i] * (recipe_anchor + image_anchor) / (n as f64 - 1.0);
        }
        total / n as f64
    }

    #[test]
    fn satisfied_margin_gives_zero_loss() {
        // positives identical (distance 0), negatives orthogonal (distance 1),
        // margin well under 1.
        let r = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let v = r.clone();
        let mut tape = Tape::new();
        let re = tape.leaf(r);
        let ve = tape.leaf(v);
        let loss =
            weighted_triplet_loss(&mut tape, re, ve, &WeightVector::ones(2), 0.3).unwrap();
        assert_eq!(tape.scalar(loss).unwrap(), 0.0);
    }

    #[test]
    fn all_ones_weights_match_the_oracle() {
        let mut rng = substream(5, "test");
        for trial in 0..20 {
            let n = 2 + (trial % 5);
            let r = unit_rows(&mut rng, n, 8);
            let v = unit_rows(&mut rng, n, 8);
            let mut tape = Tape::new();
            let re = tape.leaf(r.clone());
            let ve = tape.leaf(v.clone());
            let loss =
                weighted_triplet_loss(&mut tape, re, ve, &WeightVector::ones(n), 0.3).unwrap();
            let got = tape.scalar(loss).unwrap();
            let want = triplet_oracle(&r, &v, &vec![1.0; n], 0.3);
            let denom = want.abs().max(1e-12);
            assert!(
                (got - want).abs() / denom < 1e-9,
                "trial {trial}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn zero_weight_annihilates_the_anchor() {
        let mut rng = substream(6, "test");
        let r = unit_rows(&mut rng, 2, 8);
        let v = unit_rows(&mut rng, 2, 8);
        let mut tape = Tape::new();
        let re = tape.leaf(r.clone());
        let ve = tape.leaf(v.clone());
        let w = WeightVector {
            weights: vec![2.0, 0.0],
        };
        let loss = weighted_triplet_loss(&mut tape, re, ve, &w, 0.3).unwrap();
        let got = tape.scalar(loss).unwrap();
        let want = triplet_oracle(&r, &v, &[2.0, 0.0], 0.3);
        assert!((got - want).abs() < 1e-12);
        // anchor-1 contributes nothing: value equals 2 * anchor-0 terms / n
        let anchor0_only = triplet_oracle(&r, &v, &[2.0, 0.0], 0.3);
        assert_eq!(want, anchor0_only);
    }

    #[test]
    fn triplet_needs_two_samples() {
        let mut tape = Tape::new();
        let r = tape.leaf(Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let v = tape.leaf(Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap());
        assert!(matches!(
            weighted_triplet_loss(&mut tape, r, v, &WeightVector::ones(1), 0.3),
            Err(Error::Contract(_))
        ));
    }

    /// Naive reference for the weighted adversarial pair.
    fn adversarial_oracle(ds: &[f64], dt: &[f64], w: &[f64]) -> (f64, f64) {
        let n = ds.len() as f64;
        let mut disc = 0.0;
        let mut enc = 0.0;
        for i in 0..ds.len() {
            disc += w[i] * (ds[i].ln() + (1.0 - dt[i]).ln());
            enc += w[i] * dt[i].ln();
        }
        (-disc / n, -enc / n)
    }

    fn disc_fixture() -> (DiscriminatorParams, Matrix, Matrix) {
        let d = dims();
        let params = DiscriminatorParams::init(&d, &mut substream(7, "init"));
        let mut rng = substream(8, "test");
        let src = unit_rows(&mut rng, 4, d.embed);
        let tgt = unit_rows(&mut rng, 4, d.embed);
        (params, src, tgt)
    }

    #[test]
    fn chance_discriminator_disc_loss_is_two_ln_two() {
        // Zero weights and biases emit exactly 0.5 for any input.
        let d = dims();
        let params = DiscriminatorParams {
            l1: crate::encoders::Dense {
                w: Matrix::zeros(d.embed, d.disc_hidden),
                b: Matrix::zeros(1, d.disc_hidden),
            },
            l2: crate::encoders::Dense {
                w: Matrix::zeros(d.disc_hidden, d.disc_hidden),
                b: Matrix::zeros(1, d.disc_hidden),
            },
            l3: crate::encoders::Dense {
                w: Matrix::zeros(d.disc_hidden, 1),
                b: Matrix::zeros(1, 1),
            },
        };
        let mut rng = substream(9, "test");
        let src = unit_rows(&mut rng, 3, d.embed);
        let tgt = unit_rows(&mut rng, 3, d.embed);
        let mut tape = Tape::new();
        let disc = TapedDiscriminator::insert(&params, &mut tape);
        let s = tape.leaf(src);
        let t = tape.leaf(tgt);
        let (disc_loss, _) =
            weighted_adversarial_losses(&mut tape, s, t, &WeightVector::ones(3), &disc).unwrap();
        let got = tape.scalar(disc_loss).unwrap();
        assert!((got - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_zero_both_losses_and_gradients() {
        let (params, src, tgt) = disc_fixture();
        let mut tape = Tape::new();
        let disc = TapedDiscriminator::insert(&params, &mut tape);
        let s = tape.leaf(src);
        let t = tape.leaf(tgt);
        let w = WeightVector {
            weights: vec![0.0; 4],
        };
        let (disc_loss, enc_loss) =
            weighted_adversarial_losses(&mut tape, s, t, &w, &disc).unwrap();
        assert_eq!(tape.scalar(disc_loss).unwrap(), 0.0);
        assert_eq!(tape.scalar(enc_loss).unwrap(), 0.0);
        tape.backward(disc_loss).unwrap();
        for id in disc.param_ids() {
            assert!(tape.grad(id).data().iter().all(|&g| g == 0.0));
        }
        assert!(tape.grad(s).data().iter().all(|&g| g == 0.0));
        assert!(tape.grad(t).data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn adversarial_matches_scalar_oracle() {
        let (params, src, tgt) = disc_fixture();
        let probs_s = crate::encoders::discriminate_plain(&params, &src).unwrap();
        let probs_t = crate::encoders::discriminate_plain(&params, &tgt).unwrap();
        let w: Vec<f64> = vec![0.5, 1.5, 2.0, 0.0];

        let mut tape = Tape::new();
        let disc = TapedDiscriminator::insert(&params, &mut tape);
        let s = tape.leaf(src);
        let t = tape.leaf(tgt);
        let (disc_loss, enc_loss) = weighted_adversarial_losses(
            &mut tape,
            s,
            t,
            &WeightVector { weights: w.clone() },
            &disc,
        )
        .unwrap();
        let (want_disc, want_enc) = adversarial_oracle(
            &probs_s.data().to_vec(),
            &probs_t.data().to_vec(),
            &w,
        );
        let got_disc = tape.scalar(disc_loss).unwrap();
        let got_enc = tape.scalar(enc_loss).unwrap();
        assert!((got_disc - want_disc).abs() / want_disc.abs().max(1e-12) < 1e-9);
        assert!((got_enc - want_enc).abs() / want_enc.abs().max(1e-12) < 1e-9);
    }

    fn heads_fixture() -> (HeadsParams, Matrix, Matrix, Matrix) {
        let d = dims();
        let heads = HeadsParams::init(&d, &mut substream(10, "init"));
        let mut rng = substream(11, "test");
        let image_emb = unit_rows(&mut rng, 2, d.embed);
        let recipe_emb = unit_rows(&mut rng, 2, d.embed);
        let labels = Matrix::from_rows(&[
            vec![1.0, 0.0, 1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0, 1.0],
        ])
        .unwrap();
        (heads, image_emb, recipe_emb, labels)
    }

    #[test]
    fn regularizer_matches_scalar_oracle() {
        let (heads, image_emb, recipe_emb, labels) = heads_fixture();
        let d = dims();
        let mut rng = substream(12, "test");
        let raw = Matrix::from_vec(
            2,
            d.d_image,
            (0..2 * d.d_image).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();

        let mut tape = Tape::new();
        let taped = TapedHeads::insert(&heads, &mut tape);
        let ie = tape.leaf(image_emb.clone());
        let re = tape.leaf(recipe_emb.clone());
        let (cls, rec) =
            regularizer(&mut tape, ie, &labels, re, &raw, &taped).unwrap();

        // scalar oracle
        let probs = {
            let logits = image_emb.matmul(&heads.ingredient.w).unwrap();
            let mut p = logits.clone();
            for r in 0..p.rows() {
                for c in 0..p.cols() {
                    let z = logits.at(r, c) + heads.ingredient.b.at(0, c);
                    p.set(r, c, 1.0 / (1.0 + (-z).exp()));
                }
            }
            p
        };
        let mut bce = 0.0;
        for r in 0..2 {
            for c in 0..d.vocab {
                let y = labels.at(r, c);
                let p = probs.at(r, c).clamp(1e-7, 1.0 - 1e-7);
                bce += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            }
        }
        bce /= (2 * d.vocab) as f64;

        let recon = {
            let mut m = recipe_emb.matmul(&heads.reconstruct.w).unwrap();
            for r in 0..m.rows() {
                for c in 0..m.cols() {
                    let v = m.at(r, c) + heads.reconstruct.b.at(0, c);
                    m.set(r, c, v);
                }
            }
            m
        };
        let mut mse = 0.0;
        for r in 0..2 {
            for c in 0..d.d_image {
                let e = recon.at(r, c) - raw.at(r, c);
                mse += e * e;
            }
        }
        mse /= (2 * d.d_image) as f64;

        let got_cls = tape.scalar(cls).unwrap();
        let got_rec = tape.scalar(rec).unwrap();
        assert!((got_cls - bce).abs() / bce.abs().max(1e-12) < 1e-9);
        assert!((got_rec - mse).abs() / mse.abs().max(1e-12) < 1e-9);
    }

    #[test]
    fn perfect_heads_give_zero_losses() {
        // Craft label/feature targets the heads can match exactly by zeroing
        // weights: reconstruction of zeros, and BCE against p=0.5 is not zero,
        // so instead check the stated bounds with targets equal to outputs.
        let (heads, image_emb, recipe_emb, _) = heads_fixture();
        let d = dims();

        // reconstruction: target = actual head output -> exactly zero
        let recon_target = {
            let mut m = recipe_emb.matmul(&heads.reconstruct.w).unwrap();
            for r in 0..m.rows() {
                for c in 0..m.cols() {
                    let v = m.at(r, c) + heads.reconstruct.b.at(0, c);
                    m.set(r, c, v);
                }
            }
            m
        };
        // classification: drive probabilities to the labels with huge logits
        let strong = HeadsParams {
            ingredient: crate::encoders::Dense {
                w: Matrix::zeros(d.embed, d.vocab),
                b: Matrix::from_vec(
                    1,
                    d.vocab,
                    vec![40.0, -40.0, 40.0, -40.0, -40.0],
                )
                .unwrap(),
            },
            reconstruct: heads.reconstruct.clone(),
        };
        let labels =
            Matrix::from_rows(&[vec![1.0, 0.0, 1.0, 0.0, 0.0], vec![1.0, 0.0, 1.0, 0.0, 0.0]])
                .unwrap();

        let mut tape = Tape::new();
        let taped = TapedHeads::insert(&strong, &mut tape);
        let ie = tape.leaf(image_emb);
        let re = tape.leaf(recipe_emb);
        let (cls, rec) =
            regularizer(&mut tape, ie, &labels, re, &recon_target, &taped).unwrap();
        assert!(tape.scalar(cls).unwrap() <= 1e-6);
        assert!(tape.scalar(rec).unwrap() <= 1e-12);
    }

    #[test]
    fn breakdown_combines_parts_per_hyperparameters() {
        let cfg = LossConfig::default();
        let b = LossBreakdown::from_parts(1.0, 1.0, 1.0, 1.0, 1.0, &cfg).unwrap();
        assert!((b.total - 1.014).abs() < 1e-12);

        let off = LossConfig {
            beta: 0.0,
            lambda: 0.0,
            ..cfg
        };
        let b2 = LossBreakdown::from_parts(0.7, 3.0, 1.0, 2.0, 2.0, &off).unwrap();
        assert_eq!(b2.total, 0.7);
    }

    #[test]
    fn total_node_equals_breakdown_total() {
        let cfg = LossConfig::default();
        let mut tape = Tape::new();
        let t = tape.leaf(Matrix::filled(1, 1, 0.9));
        let a = tape.leaf(Matrix::filled(1, 1, 0.4));
        let c = tape.leaf(Matrix::filled(1, 1, 0.2));
        let r = tape.leaf(Matrix::filled(1, 1, 0.3));
        let total = total_loss_node(&mut tape, t, Some(a), c, r, &cfg).unwrap();
        let breakdown = LossBreakdown::from_parts(0.9, 0.4, 0.0, 0.2, 0.3, &cfg).unwrap();
        assert!((tape.scalar(total).unwrap() - breakdown.total).abs() < 1e-12);
    }
}
