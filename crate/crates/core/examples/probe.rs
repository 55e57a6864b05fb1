// Selection-pipeline diagnostics: union sizes, poison filtering, weight mass.
// cargo run -p cma-core --example probe --release -- [flags as in tune]
use cma_core::data::{generate, GenConfig, RecipeSample};
use cma_core::encoders::FrozenSourceEncoder;
use cma_core::rng::substream;
use cma_core::selection::*;
use cma_core::train::{pretrain_source, TrainConfig, TrainSink};
use rand::Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let get = |name: &str, default: f64| -> f64 {
        args.iter()
            .position(|a| a == name)
            .and_then(|i| args.get(i + 1))
            .and_then(|v| v.parse().ok())
            .unwrap_or(default)
    };
    let gen = GenConfig {
        target_latent_offset: get("--tlo", 1.5),
        shift_angle: get("--theta", 1.0),
        noise_scale: get("--noise", 0.5),
        distinct_fraction: get("--rho", 0.2),
        distinct_scale: get("--distinct", 4.0),
        offset_scale: get("--offset", 3.0),
        image_offset_scale: get("--img-offset", 0.25),
        ..GenConfig::default()
    };
    let cfg = TrainConfig {
        pretrain_epochs: get("--pre", 30.0) as usize,
        pool_factor: get("--pool", 2.0) as usize,
        ..TrainConfig::default()
    };
    let bundle = generate(&gen, 1).unwrap();
    let (_, frozen) = pretrain_source(&bundle, &cfg, &mut TrainSink::none()).unwrap();
    selection_stats(&bundle, &frozen, &cfg);
}

fn selection_stats(
    bundle: &cma_core::data::DatasetBundle,
    frozen: &FrozenSourceEncoder,
    cfg: &TrainConfig,
) {
    let n = cfg.batch_size;
    let pool_size = cfg.pool_size();
    let all_source: Vec<&RecipeSample> = bundle.source_pairs.iter().map(|(r, _)| r).collect();
    let all_target: Vec<&RecipeSample> = bundle.target_recipes.iter().collect();
    let src_emb = frozen.encode(&all_source).unwrap();
    let tgt_emb = frozen.encode(&all_target).unwrap();
    let distinct: std::collections::BTreeSet<u64> =
        bundle.manifest.distinct_ids.iter().copied().collect();

    // Raw cosine statistics in the frozen embedding space.
    let mut clean_stats = (0.0f64, 0.0f64, 0usize);
    let mut distinct_stats = (0.0f64, 0.0f64, 0usize);
    for j in (0..all_target.len()).step_by(7) {
        for i in (0..all_source.len()).step_by(13) {
            let c = cma_core::matrix::dot(tgt_emb.row(j), src_emb.row(i));
            let slot = if distinct.contains(&all_source[i].id) {
                &mut distinct_stats
            } else {
                &mut clean_stats
            };
            slot.0 += c;
            slot.1 += c * c;
            slot.2 += 1;
        }
    }
    for (name, (s1, s2, k)) in [("clean", clean_stats), ("distinct", distinct_stats)] {
        let mean = s1 / k as f64;
        let var = s2 / k as f64 - mean * mean;
        println!("cos(target, {name} source): mean {mean:.3}, std {:.3}", var.sqrt());
    }

    let mut rng = substream(9, "probe");
    let steps = 200;
    let mut union_sizes = 0.0;
    let mut distinct_in_pool = 0.0;
    let mut distinct_in_subset = 0.0;
    let mut distinct_in_batch = 0.0;
    let mut weight_on_distinct = 0.0;
    let mut seen: std::collections::BTreeSet<usize> = Default::default();
    let mut clean_row_sums: Vec<f64> = Vec::new();
    let mut distinct_row_sums: Vec<f64> = Vec::new();

    for _ in 0..steps {
        let pool: Vec<usize> = {
            let mut idx: Vec<usize> = (0..all_source.len()).collect();
            for i in 0..pool_size {
                let j = rng.random_range(i..idx.len());
                idx.swap(i, j);
            }
            idx.truncate(pool_size);
            idx
        };
        let tgt: Vec<usize> = {
            let mut idx: Vec<usize> = (0..all_target.len()).collect();
            for i in 0..n {
                let j = rng.random_range(i..idx.len());
                idx.swap(i, j);
            }
            idx.truncate(n);
            idx
        };
        let tf = tgt_emb.gather_rows(&tgt).unwrap();
        let sf = src_emb.gather_rows(&pool).unwrap();
        let tids: Vec<u64> = tgt.iter().map(|&j| all_target[j].id).collect();
        let sids: Vec<u64> = pool.iter().map(|&i| all_source[i].id).collect();
        let w1 = compute_w1(&tf, &sf, &tids, &sids).unwrap();
        let subset = select_topk(&w1, cfg.top_k()).unwrap();
        let batch = sample_source_batch(&subset, n, &mut rng).unwrap();
        let w2 = extract_w2(&w1, &batch).unwrap();
        let weights = compute_weight_vector(&w2).unwrap();

        union_sizes += subset.indices.len() as f64;
        distinct_in_pool += pool
            .iter()
            .filter(|&&i| distinct.contains(&all_source[i].id))
            .count() as f64;
        distinct_in_subset += subset
            .indices
            .iter()
            .filter(|&&p| distinct.contains(&all_source[pool[p]].id))
            .count() as f64;
        let mut wd = 0.0;
        let mut dn = 0.0;
        for (k, &p) in batch.iter().enumerate() {
            let is_d = distinct.contains(&all_source[pool[p]].id);
            let row_sum: f64 = w2.row(k).iter().sum();
            if is_d {
                dn += 1.0;
                wd += weights.weights[k];
                distinct_row_sums.push(row_sum);
            } else {
                clean_row_sums.push(row_sum);
            }
            seen.insert(pool[p]);
        }
        distinct_in_batch += dn;
        weight_on_distinct += wd;
    }
    let s = steps as f64;
    println!("pool={pool_size} K={}", cfg.top_k());
    println!("mean union size: {:.1} / {pool_size}", union_sizes / s);
    println!(
        "distinct frac: pool {:.3}, subset {:.3}, batch {:.3}",
        distinct_in_pool / s / pool_size as f64,
        distinct_in_subset / (union_sizes),
        distinct_in_batch / s / n as f64
    );
    println!(
        "mean weight on a distinct batch member: {:.3} (uniform would be 1)",
        weight_on_distinct / distinct_in_batch.max(1.0)
    );
    println!(
        "unique source samples trained on over {steps} steps: {} / {}",
        seen.len(),
        all_source.len()
    );
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len().max(1) as f64;
        (m, var.sqrt())
    };
    let (cm, cs) = stats(&clean_row_sums);
    let (dm, ds) = stats(&distinct_row_sums);
    println!("batch W2 row sums: clean {cm:.2} +- {cs:.2}, distinct {dm:.2} +- {ds:.2}");
}
