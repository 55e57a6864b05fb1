// Scratch harness for picking generator defaults. Not part of the build
// contract; run with: cargo run -p cma-core --example tune --release
use cma_core::ablation::{run_ablation, AblationCell, Variant};
use cma_core::data::{generate, GenConfig};
use cma_core::train::TrainConfig;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let get = |name: &str, default: f64| -> f64 {
        args.iter()
            .position(|a| a == name)
            .and_then(|i| args.get(i + 1))
            .and_then(|v| v.parse().ok())
            .unwrap_or(default)
    };
    let seeds: Vec<u64> = (1..=get("--seeds", 3.0) as u64).collect();
    let gen = GenConfig {
        target_latent_offset: get("--tlo", 1.5),
        recipe_shift_scale: get("--rss", 0.4),
        shift_angle: get("--theta", 0.6),
        noise_scale: get("--noise", 0.1),
        distinct_fraction: get("--rho", 0.2),
        distinct_scale: get("--distinct", 3.0),
        offset_scale: get("--offset", 2.0),
        image_offset_scale: get("--img-offset", 0.25),
        ..GenConfig::default()
    };
    let mut cfg = TrainConfig {
        pretrain_epochs: get("--pre", 30.0) as usize,
        adapt_epochs: get("--adapt", 30.0) as usize,
        pool_factor: get("--pool", 2.0) as usize,
        ..TrainConfig::default()
    };
    cfg.loss.beta = get("--beta", cfg.loss.beta);
    println!(
        "theta={} noise={} rho={} distinct={} offset={} img_offset={} beta={} pre={} adapt={} pool={}",
        gen.shift_angle,
        gen.noise_scale,
        gen.distinct_fraction,
        gen.distinct_scale,
        gen.offset_scale,
        gen.image_offset_scale,
        cfg.loss.beta,
        cfg.pretrain_epochs,
        cfg.adapt_epochs,
        cfg.pool_factor
    );

    let variants = Variant::comparison_table();
    let mut medr: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
    let t0 = Instant::now();
    for &seed in &seeds {
        let bundle = generate(&gen, seed).unwrap();
        let cells: Vec<AblationCell> = variants
            .iter()
            .map(|&v| AblationCell {
                variant: v,
                seed,
                pool_factor: cfg.pool_factor,
            })
            .collect();
        let results = run_ablation(&bundle, &cfg, &cells, 1).unwrap();
        print!("seed {seed}:");
        for r in &results {
            print!("  {}={:.1}", r.cell.variant.label(), r.report.medr);
            medr.entry(r.cell.variant.label())
                .or_default()
                .push(r.report.medr);
        }
        println!("  [{:.1}s]", t0.elapsed().as_secs_f64());
    }
    println!("--- means over {} seeds ---", seeds.len());
    for (label, values) in &medr {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        println!("{label}: {mean:.2}");
    }
}
