//! Grid runner for method variants, seeds and pool sizes, with shared
//! pre-training per seed.

use crate::data::DatasetBundle;
use crate::encoders::{FrozenSourceEncoder, ModelState};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::rng::substream;
use crate::train::{adapt, oracle_eval_split, oracle_train, pretrain_source, TrainConfig, TrainSink};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Pre-trained on source only, no adaptation.
    SourceOnly,
    /// Adversarial adaptation with no selection and no re-weighting.
    UnweightedAdversarial,
    /// Full method minus the source batch selector.
    NoSbs,
    /// Full method with all-ones weights in the triplet term.
    NoWeightedTriplet,
    /// Full method with all-ones weights in the adversarial term.
    NoWeightedAdversarial,
    /// Selection plus both weighted losses.
    Full,
    /// Supervised upper bound trained with target pairs.
    Oracle,
}

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Variant::SourceOnly => "source_only",
            Variant::UnweightedAdversarial => "unweighted_adv",
            Variant::NoSbs => "no_sbs",
            Variant::NoWeightedTriplet => "no_w_triplet",
            Variant::NoWeightedAdversarial => "no_w_adv",
            Variant::Full => "full",
            Variant::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "source_only" => Ok(Variant::SourceOnly),
            "unweighted_adv" => Ok(Variant::UnweightedAdversarial),
            "no_sbs" => Ok(Variant::NoSbs),
            "no_w_triplet" => Ok(Variant::NoWeightedTriplet),
            "no_w_adv" => Ok(Variant::NoWeightedAdversarial),
            "full" => Ok(Variant::Full),
            "oracle" => Ok(Variant::Oracle),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }

    /// The comparison table: baselines, single ablations, full method.
    pub fn comparison_table() -> [Variant; 6] {
        [
            Variant::SourceOnly,
            Variant::UnweightedAdversarial,
            Variant::NoSbs,
            Variant::NoWeightedTriplet,
            Variant::NoWeightedAdversarial,
            Variant::Full,
        ]
    }

    pub fn apply(&self, cfg: &mut TrainConfig) {
        match self {
            Variant::SourceOnly | Variant::Full | Variant::Oracle => {}
            Variant::UnweightedAdversarial => {
                cfg.sbs_off = true;
                cfg.w_triplet_off = true;
                cfg.w_adv_off = true;
            }
            Variant::NoSbs => cfg.sbs_off = true,
            Variant::NoWeightedTriplet => cfg.w_triplet_off = true,
            Variant::NoWeightedAdversarial => cfg.w_adv_off = true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationCell {
    pub variant: Variant,
    pub seed: u64,
    pub pool_factor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: AblationCell,
    pub pool_size: usize,
    pub report: MetricsReport,
}

/// Run one grid cell against an existing pre-trained model.
fn run_cell(
    bundle: &DatasetBundle,
    base: &TrainConfig,
    cell: &AblationCell,
    pretrained: &(ModelState, FrozenSourceEncoder),
) -> Result<CellResult> {
    let mut cfg = base.clone();
    cfg.seed = cell.seed;
    cfg.pool_factor = cell.pool_factor;
    cell.variant.apply(&mut cfg);

    let mut eval_rng = substream(cell.seed, "eval");
    let report = match cell.variant {
        Variant::SourceOnly => evaluate(
            &pretrained.0,
            &bundle.target_test_pairs,
            cfg.eval_pool,
            cfg.eval_repeats,
            &mut eval_rng,
        )?,
        Variant::Oracle => {
            let state = oracle_train(bundle, &cfg, &mut TrainSink::none())?;
            let split = oracle_eval_split(bundle);
            evaluate(
                &state,
                split,
                cfg.eval_pool.min(split.len()),
                cfg.eval_repeats,
                &mut eval_rng,
            )?
        }
        _ => {
            let adapted = adapt(
                bundle,
                &pretrained.0,
                &pretrained.1,
                &cfg,
                &mut TrainSink::none(),
            )?;
            evaluate(
                &adapted,
                &bundle.target_test_pairs,
                cfg.eval_pool,
                cfg.eval_repeats,
                &mut eval_rng,
            )?
        }
    };
    Ok(CellResult {
        cell: *cell,
        pool_size: cfg.pool_size(),
        report,
    })
}

/// Run every cell of the grid. Pre-training is shared across cells with the
/// same seed (it does not depend on the variant or the pool size), which is
/// exact because training is a pure function of (config, seed, dataset).
/// `workers` bounds how many cells run concurrently.
pub fn run_ablation(
    bundle: &DatasetBundle,
    base: &TrainConfig,
    cells: &[AblationCell],
    workers: usize,
) -> Result<Vec<CellResult>> {
    base.validate()?;
    let workers = workers.max(1);

    // Shared pretrain per seed.
    let seeds: Vec<u64> = {
        let mut s: Vec<u64> = cells.iter().map(|c| c.seed).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let mut pretrained: BTreeMap<u64, (ModelState, FrozenSourceEncoder)> = BTreeMap::new();
    if workers == 1 || seeds.len() == 1 {
        for &seed in &seeds {
            let cfg = TrainConfig {
                seed,
                ..base.clone()
            };
            pretrained.insert(seed, pretrain_source(bundle, &cfg, &mut TrainSink::none())?);
        }
    } else {
        let results: Vec<(u64, Result<(ModelState, FrozenSourceEncoder)>)> =
            std::thread::scope(|scope| {
                let mut handles = Vec::new();
                for chunk in seeds.chunks(workers) {
                    let mut wave = Vec::new();
                    for &seed in chunk {
                        let cfg = TrainConfig {
                            seed,
                            ..base.clone()
                        };
                        wave.push(scope.spawn(move || {
                            (seed, pretrain_source(bundle, &cfg, &mut TrainSink::none()))
                        }));
                    }
                    handles.extend(wave.into_iter().map(|h| h.join().expect("worker panicked")));
                }
                handles
            });
        for (seed, result) in results {
            pretrained.insert(seed, result?);
        }
    }

    // Grid cells, in waves of `workers`, reported in grid order.
    let mut out: Vec<Option<CellResult>> = vec![None; cells.len()];
    if workers == 1 {
        for (i, cell) in cells.iter().enumerate() {
            out[i] = Some(run_cell(bundle, base, cell, &pretrained[&cell.seed])?);
        }
    } else {
        let results: Vec<(usize, Result<CellResult>)> = std::thread::scope(|scope| {
            let mut collected = Vec::new();
            for chunk in cells.chunks(workers) {
                let offset = collected.len();
                let mut wave = Vec::new();
                for (k, cell) in chunk.iter().enumerate() {
                    let pre = &pretrained[&cell.seed];
                    wave.push(
                        scope.spawn(move || (offset + k, run_cell(bundle, base, cell, pre))),
                    );
                }
                collected.extend(wave.into_iter().map(|h| h.join().expect("worker panicked")));
            }
            collected
        });
        for (i, result) in results {
            out[i] = Some(result?);
        }
    }
    Ok(out.into_iter().map(|r| r.expect("cell filled")).collect())
}

/// Stable id for one run row: config, seed and dataset digests.
pub fn run_id(cell: &AblationCell, config_digest: &str, dataset_digest: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(cell.variant.label().as_bytes());
    hasher.update(cell.seed.to_le_bytes());
    hasher.update(cell.pool_factor.to_le_bytes());
    hasher.update(config_digest.as_bytes());
    hasher.update(dataset_digest.as_bytes());
    let digest = hasher.finalize();
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    hex[..12].to_string()
}

pub const METRICS_CSV_HEADER: &str = "run_id,variant,seed,pool_size,medr,r1,r5,r10";

pub fn metrics_csv(
    results: &[CellResult],
    config_digest: &str,
    dataset_digest: &str,
) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            run_id(&r.cell, config_digest, dataset_digest),
            r.cell.variant.label(),
            r.cell.seed,
            r.pool_size,
            r.report.medr,
            r.report.r_at[&1],
            r.report.r_at[&5],
            r.report.r_at[&10],
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, GenConfig};

    fn small_bundle() -> DatasetBundle {
        generate(
            &GenConfig {
                n_source: 100,
                n_target: 60,
                n_target_test: 50,
                ..GenConfig::default()
            },
            21,
        )
        .unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            pool_factor: 2,
            pretrain_epochs: 1,
            adapt_epochs: 1,
            eval_pool: 20,
            eval_repeats: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn single_cell_equals_direct_run() {
        let bundle = small_bundle();
        let base = small_cfg();
        let cell = AblationCell {
            variant: Variant::Full,
            seed: 5,
            pool_factor: 2,
        };
        let grid = run_ablation(&bundle, &base, &[cell], 1).unwrap();

        let mut cfg = base.clone();
        cfg.seed = 5;
        let (state, frozen) = pretrain_source(&bundle, &cfg, &mut TrainSink::none()).unwrap();
        let adapted = adapt(&bundle, &state, &frozen, &cfg, &mut TrainSink::none()).unwrap();
        let report = evaluate(
            &adapted,
            &bundle.target_test_pairs,
            cfg.eval_pool,
            cfg.eval_repeats,
            &mut substream(5, "eval"),
        )
        .unwrap();
        assert_eq!(grid[0].report, report);
    }

    #[test]
    fn workers_do_not_change_results() {
        let bundle = small_bundle();
        let base = small_cfg();
        let cells: Vec<AblationCell> = [Variant::SourceOnly, Variant::Full]
            .iter()
            .flat_map(|&v| {
                [1u64, 2].iter().map(move |&s| AblationCell {
                    variant: v,
                    seed: s,
                    pool_factor: 2,
                })
            })
            .collect();
        let serial = run_ablation(&bundle, &base, &cells, 1).unwrap();
        let parallel = run_ablation(&bundle, &base, &cells, 4).unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn csv_has_one_row_per_cell() {
        let bundle = small_bundle();
        let base = small_cfg();
        let cells: Vec<AblationCell> = (1..=3)
            .map(|s| AblationCell {
                variant: Variant::SourceOnly,
                seed: s,
                pool_factor: 1,
            })
            .collect();
        let results = run_ablation(&bundle, &base, &cells, 1).unwrap();
        let csv = metrics_csv(&results, "cfg", "data");
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], METRICS_CSV_HEADER);
        assert!(lines[1].contains("source_only"));
    }

    #[test]
    fn variant_labels_roundtrip() {
        for v in Variant::comparison_table() {
            assert_eq!(Variant::parse(v.label()).unwrap(), v);
        }
        assert!(Variant::parse("nope").is_err());
    }
}
