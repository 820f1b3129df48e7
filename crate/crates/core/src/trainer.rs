//! Preprocessing and the training loop: per epoch, draw fresh
//! corruption plans, materialize the three views, encode, align,
//! reconstruct, and take one Adam step.

use crate::config::{Ablation, RunConfig};
use crate::corruption::{build_plan, materialize, write_plan_json, PlanOptions, View};
use crate::error::{Error, Result};
use crate::frequency::{compute_contributions, ContributionScores};
use crate::graph::Graph;
use crate::model::losses::{loss_align, loss_edge, loss_node, loss_total};
use crate::model::{
    bind_params, decode_edges, decode_nodes, encode, init_params, EncoderConfig, ModelParams,
};
use crate::spectral::{
    edge_features, edge_list_hash, eigensolve_smallest, load_bundle, position_matrix, save_bundle,
    EdgeFeatureMatrix, EigensolveOptions, PositionMatrix, RbfParams, SpectralBundle,
};
use fcg_tensor::{Adam, Scalar, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::Path;

/// Everything computed once before training: spectral bundle,
/// contribution scores, positional distances, edge features, and the
/// RBF grid. All reused unchanged across epochs.
#[derive(Debug, Clone)]
pub struct PreprocessArtifacts<F: Scalar> {
    pub bundle: SpectralBundle<F>,
    pub scores: ContributionScores<F>,
    pub positions: PositionMatrix<F>,
    pub edge_feats: EdgeFeatureMatrix<F>,
    pub rbf: RbfParams<F>,
    pub cache_hit: bool,
}

pub fn preprocess<F: Scalar>(
    g: &Graph<F>,
    k: usize,
    k_e: usize,
    rbf_count: usize,
    opts: &EigensolveOptions<F>,
    cache_path: Option<&Path>,
) -> Result<PreprocessArtifacts<F>> {
    let hash = edge_list_hash(g);
    let mut cache_hit = false;
    let bundle = match cache_path {
        Some(path) => match load_bundle::<F>(path, &hash, g.num_nodes(), k, k_e)? {
            Some(bundle) => {
                log::info!(
                    "spectral cache hit at {}; skipping eigensolve",
                    path.display()
                );
                cache_hit = true;
                bundle
            }
            None => {
                let bundle = eigensolve_smallest(&crate::graph::build_laplacian(g), k, k_e, opts)?;
                save_bundle(&bundle, &hash, path)?;
                bundle
            }
        },
        None => eigensolve_smallest(&crate::graph::build_laplacian(g), k, k_e, opts)?,
    };

    let scores = compute_contributions(&bundle, g);
    let positions = position_matrix(&bundle, g);
    let edge_feats = edge_features(&bundle, g);
    let rbf = RbfParams::from_distances(positions.dists(), rbf_count)?;
    Ok(PreprocessArtifacts {
        bundle,
        scores,
        positions,
        edge_feats,
        rbf,
        cache_hit,
    })
}

/// Resolve the encoder configuration for a concrete graph.
pub fn encoder_config(cfg: &RunConfig, feature_dim: usize) -> Result<EncoderConfig> {
    let enc = EncoderConfig {
        variant: cfg.model_variant.parse()?,
        layers: cfg.model_layers,
        hidden: cfg.model_hidden,
        heads: cfg.model_heads,
        rbf: cfg.effective_rbf(feature_dim),
    };
    enc.validate()?;
    Ok(enc)
}

/// Preprocess with the run config's effective K / K_e / RBF settings.
pub fn preprocess_for_config<F: Scalar>(
    cfg: &RunConfig,
    g: &Graph<F>,
    cache_path: Option<&Path>,
) -> Result<PreprocessArtifacts<F>> {
    let k = cfg.effective_k(g.num_nodes());
    let k_e = cfg.effective_k_e(k);
    let opts = EigensolveOptions {
        dense_cutoff: cfg.spectral_dense_cutoff,
        seed: cfg.seed,
        ..EigensolveOptions::default()
    };
    preprocess(
        g,
        k,
        k_e,
        cfg.effective_rbf(g.feature_dim()),
        &opts,
        cache_path,
    )
}

/// How the ablation flags reshape the pipeline for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineMods {
    pub plan: PlanOptions,
    /// Drop the alignment term from the objective.
    pub skip_alignment: bool,
}

pub fn apply_ablation(ablation: Ablation) -> PipelineMods {
    PipelineMods {
        plan: PlanOptions {
            uniform_nodes: ablation.uniform_nodes(),
            uniform_edges: ablation.uniform_edges(),
            separate_views: ablation.separate_views(),
        },
        skip_alignment: ablation.no_alignment(),
    }
}

/// One epoch's recorded loss terms. `total` always equals
/// `node + alpha * edge + beta * align` for the run's weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub total: f64,
    pub node: f64,
    pub edge: f64,
    pub align: f64,
}

pub struct TrainOutcome<F: Scalar> {
    pub params: ModelParams<F>,
    pub history: Vec<LossRecord>,
}

pub fn train<F: Scalar>(
    cfg: &RunConfig,
    g: &Graph<F>,
    pre: &PreprocessArtifacts<F>,
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    let enc_cfg = encoder_config(cfg, g.feature_dim())?;
    if pre.rbf.dim() != enc_cfg.rbf {
        return Err(Error::Config(format!(
            "preprocess used {} RBF kernels but the run config resolves to {}",
            pre.rbf.dim(),
            enc_cfg.rbf
        )));
    }
    let mods = apply_ablation(cfg.ablation);

    // Separate streams: parameter init vs per-epoch sampling.
    let mut root = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init_seed: u64 = root.random();
    let sampling_seed: u64 = root.random();
    let mut plan_seeder = ChaCha8Rng::seed_from_u64(sampling_seed);

    let mut params = init_params::<F>(&enc_cfg, g.feature_dim(), pre.bundle.k_e, init_seed)?;
    let mut adam = Adam::new(F::c(cfg.lr));

    let gamma = F::c(cfg.gamma);
    let tau = F::c(cfg.tau);
    let alpha = F::c(cfg.alpha);
    let beta = F::c(cfg.beta);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    for epoch in 1..=cfg.epochs {
        let plan_seed: u64 = plan_seeder.random();
        let step = (|| -> Result<LossRecord> {
            let plan = build_plan(&pre.scores, g, cfg.r_n, cfg.r_e, plan_seed, mods.plan)?;
            if epoch == 1 && !cfg.debug_plan_json.is_empty() {
                write_plan_json(&plan, Path::new(&cfg.debug_plan_json))?;
            }

            let g_n = materialize(&plan, g, View::Nodes);
            let g_e = materialize(&plan, g, View::Edges);
            let g_c = materialize(&plan, g, View::Combined);

            let mut tape = Tape::new();
            let bound = bind_params(&mut tape, &params)?;

            let enc_n = encode(&mut tape, &g_n, &pre.positions, &pre.rbf, &params, &bound)?;
            let enc_e = encode(&mut tape, &g_e, &pre.positions, &pre.rbf, &params, &bound)?;
            let enc_c = encode(&mut tape, &g_c, &pre.positions, &pre.rbf, &params, &bound)?;

            let l_align = if mods.skip_alignment {
                tape.scalar(F::zero())?
            } else {
                loss_align(&mut tape, enc_n.h, enc_e.h, enc_c.h, tau)?
            };

            let x_hat = decode_nodes(&mut tape, &bound, enc_n.h)?;
            let l_node = loss_node(&mut tape, x_hat, g, &g_n.masked_nodes, gamma)?;

            let dropped: Vec<(usize, usize)> = plan.s_e.edges.iter().copied().collect();
            let e_hat = decode_edges(&mut tape, &bound, enc_e.h, &dropped, &plan.s_e.edges)?;
            let target_rows: Vec<Vec<F>> = dropped
                .iter()
                .map(|&(i, j)| {
                    let eid = g.edge_id(i, j).expect("dropped edge exists in base graph");
                    pre.edge_feats.row(eid).to_vec()
                })
                .collect();
            let targets = if dropped.is_empty() {
                Tensor::zeros(&[0, pre.bundle.k_e])
            } else {
                Tensor::from_rows(&target_rows)?
            };
            let l_edge = loss_edge(&mut tape, e_hat, &targets, gamma)?;

            let total = loss_total(&mut tape, l_node, l_edge, l_align, alpha, beta)?;

            tape.backward(total)?;
            params.store.zero_grad();
            tape.apply_param_grads(&mut params.store);
            adam.step(&mut params.store);

            Ok(LossRecord {
                epoch,
                total: tape.value(total).item().as_f64(),
                node: tape.value(l_node).item().as_f64(),
                edge: tape.value(l_edge).item().as_f64(),
                align: tape.value(l_align).item().as_f64(),
            })
        })();
        let record = step.map_err(|e| Error::Training {
            epoch,
            msg: e.to_string(),
        })?;
        if !record.total.is_finite() {
            return Err(Error::Training {
                epoch,
                msg: format!("non-finite loss {}", record.total),
            });
        }
        history.push(record);

        if cfg.patience > 0 {
            if record.total < best {
                best = record.total;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    log::info!("early stop at epoch {epoch}: no improvement for {stale} epochs");
                    break;
                }
            }
        }
    }

    Ok(TrainOutcome { params, history })
}

/// `history.csv`: resolved config as `#` comments, then one row per
/// epoch with the total and each component term.
pub fn write_history_csv(history: &[LossRecord], config_header: &str, path: &Path) -> Result<()> {
    let mut out = String::new();
    for line in config_header.lines() {
        let _ = writeln!(out, "# {line}");
    }
    let _ = writeln!(out, "epoch,loss_total,loss_node,loss_edge,loss_align");
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.total, r.node, r.edge, r.align
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Persist trained parameters with the resolved config embedded, so a
/// checkpoint alone suffices to rebuild the model for evaluation.
pub fn save_checkpoint<F: Scalar>(
    params: &ModelParams<F>,
    cfg: &RunConfig,
    path: &Path,
) -> Result<()> {
    fcg_tensor::checkpoint::save(&params.store, &cfg.resolved_string(), path)?;
    Ok(())
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<(ModelParams<F>, RunConfig)> {
    let (store, meta) = fcg_tensor::checkpoint::load::<F>(path)?;
    let mut cfg = RunConfig::default();
    for line in meta.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((key, value)) = line.split_once('=') {
            cfg.set(key.trim(), value.trim())?;
        }
    }
    let token = store
        .id("mask_token")
        .ok_or_else(|| Error::Checkpoint("checkpoint lacks mask_token".into()))?;
    let feat_dim = store.value(token).shape()[0];
    let dec_edge = store
        .id("dec_edge.w1")
        .ok_or_else(|| Error::Checkpoint("checkpoint lacks dec_edge.w1".into()))?;
    let k_e = store.value(dec_edge).shape()[1];
    let enc_cfg = encoder_config(&cfg, feat_dim)?;
    Ok((
        ModelParams {
            store,
            cfg: enc_cfg,
            feat_dim,
            k_e,
        },
        cfg,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_synthetic, SynthKind, SynthParams};
    use crate::model::bind_params;
    use crate::testutil::gnp_graph;

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.set("train.epochs", "3").unwrap();
        cfg.set("model.hidden", "8").unwrap();
        cfg.set("model.heads", "2").unwrap();
        cfg.set("model.layers", "1").unwrap();
        cfg.set("spectral.k", "10").unwrap();
        cfg.set("spectral.k_e", "4").unwrap();
        cfg.set("model.rbf", "4").unwrap();
        cfg
    }

    fn small_graph() -> Graph<f64> {
        gnp_graph::<f64>(14, 0.3, 5, 3)
    }

    #[test]
    fn k_larger_than_n_is_an_error() {
        let g = small_graph();
        let mut cfg = small_cfg();
        cfg.set("spectral.k", "100").unwrap();
        assert!(preprocess_for_config(&cfg, &g, None).is_err());
    }

    #[test]
    fn k2_preprocess_reproduces_the_contribution_oracle() {
        let g: Graph<f64> = Graph::new(
            &[(0, 1)],
            Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap(),
            None,
            crate::graph::EdgePolicy::Strict,
        )
        .unwrap();
        let pre = preprocess(&g, 2, 2, 2, &EigensolveOptions::default(), None).unwrap();
        assert!((pre.scores.edge[0] - 0.5).abs() < 1e-12);
        assert!((pre.scores.node[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cache_hit_skips_eigensolve() {
        let g = small_graph();
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("spectral.bin");
        let first = preprocess(&g, 6, 3, 4, &EigensolveOptions::default(), Some(&cache)).unwrap();
        assert!(!first.cache_hit);
        let second = preprocess(&g, 6, 3, 4, &EigensolveOptions::default(), Some(&cache)).unwrap();
        assert!(second.cache_hit);
        assert_eq!(first.bundle, second.bundle);
    }

    #[test]
    fn single_epoch_changes_parameters() {
        let g = small_graph();
        let mut cfg = small_cfg();
        cfg.set("train.epochs", "1").unwrap();
        let pre = preprocess_for_config(&cfg, &g, None).unwrap();
        let before = init_params::<f64>(
            &encoder_config(&cfg, g.feature_dim()).unwrap(),
            g.feature_dim(),
            pre.bundle.k_e,
            {
                let mut root = ChaCha8Rng::seed_from_u64(cfg.seed);
                root.random()
            },
        )
        .unwrap();
        let outcome = train(&cfg, &g, &pre).unwrap();
        assert_eq!(outcome.history.len(), 1);
        let delta: f64 = outcome
            .params
            .store
            .entries()
            .zip(before.store.entries())
            .map(|((_, a), (_, b))| {
                a.value
                    .data()
                    .iter()
                    .zip(b.value.data())
                    .map(|(x, y)| (x - y).abs())
                    .sum::<f64>()
            })
            .sum();
        assert!(delta > 0.0, "no parameter movement");
    }

    #[test]
    fn identical_seeds_produce_identical_history() {
        let g = small_graph();
        let cfg = small_cfg();
        let pre = preprocess_for_config(&cfg, &g, None).unwrap();
        let a = train(&cfg, &g, &pre).unwrap();
        let b = train(&cfg, &g, &pre).unwrap();
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn component_terms_sum_to_total() {
        let g = small_graph();
        let cfg = small_cfg();
        let pre = preprocess_for_config(&cfg, &g, None).unwrap();
        let outcome = train(&cfg, &g, &pre).unwrap();
        for r in &outcome.history {
            let expect = r.node + cfg.alpha * r.edge + cfg.beta * r.align;
            assert!((r.total - expect).abs() < 1e-10);
            assert!(r.total.is_finite());
        }
    }

    #[test]
    fn plans_differ_across_epochs_while_spectra_are_fixed() {
        let g = small_graph();
        let cfg = small_cfg();
        let pre = preprocess_for_config(&cfg, &g, None).unwrap();
        let pre2 = preprocess_for_config(&cfg, &g, None).unwrap();
        assert_eq!(pre.bundle, pre2.bundle);

        // Reproduce the trainer's seed stream and draw two plans.
        let mut root = ChaCha8Rng::seed_from_u64(cfg.seed);
        let _init: u64 = root.random();
        let sampling: u64 = root.random();
        let mut seeder = ChaCha8Rng::seed_from_u64(sampling);
        let s1: u64 = seeder.random();
        let s2: u64 = seeder.random();
        let p1 = build_plan(&pre.scores, &g, 0.3, 0.3, s1, PlanOptions::default()).unwrap();
        let p2 = build_plan(&pre.scores, &g, 0.3, 0.3, s2, PlanOptions::default()).unwrap();
        assert_ne!(p1.s_n, p2.s_n);
    }

    #[test]
    fn ablation_flags_map_to_pipeline_mods() {
        let mods = apply_ablation(Ablation::WoCne);
        assert!(mods.plan.uniform_nodes && mods.plan.uniform_edges);
        assert!(!mods.skip_alignment);
        let mods = apply_ablation(Ablation::WoSa);
        assert!(mods.skip_alignment && !mods.plan.separate_views);
        let mods = apply_ablation(Ablation::WoSoa);
        assert!(mods.skip_alignment && mods.plan.separate_views);
        assert_eq!(
            apply_ablation(Ablation::None),
            apply_ablation(Ablation::None)
        );
    }

    #[test]
    fn wo_sa_records_zero_alignment_loss() {
        let g = small_graph();
        let mut cfg = small_cfg();
        cfg.set("ablation", "wo_sa").unwrap();
        let pre = preprocess_for_config(&cfg, &g, None).unwrap();
        let outcome = train(&cfg, &g, &pre).unwrap();
        assert!(outcome.history.iter().all(|r| r.align == 0.0));
    }

    #[test]
    fn checkpoint_round_trip_preserves_forward_outputs_bitwise() {
        let g = small_graph();
        let cfg = small_cfg();
        let pre = preprocess_for_config(&cfg, &g, None).unwrap();
        let outcome = train(&cfg, &g, &pre).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&outcome.params, &cfg, &path).unwrap();
        let (loaded, cfg2) = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(cfg, cfg2);

        let forward = |params: &ModelParams<f64>| -> Vec<u64> {
            let cg = crate::corruption::CorruptedGraph {
                base: &g,
                masked_nodes: Vec::new(),
                edges: g.edges().to_vec(),
            };
            let mut tape = Tape::new();
            let bound = bind_params(&mut tape, params).unwrap();
            let enc = encode(&mut tape, &cg, &pre.positions, &pre.rbf, params, &bound).unwrap();
            tape.value(enc.h)
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect()
        };
        assert_eq!(forward(&outcome.params), forward(&loaded));
    }

    #[test]
    fn history_csv_embeds_config_and_rows() {
        let g = small_graph();
        let cfg = small_cfg();
        let pre = preprocess_for_config(&cfg, &g, None).unwrap();
        let outcome = train(&cfg, &g, &pre).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        write_history_csv(&outcome.history, &cfg.resolved_string(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("# train.epochs = 3"));
        assert!(text.contains("epoch,loss_total,loss_node,loss_edge,loss_align"));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 4);
    }

    #[test]
    fn non_finite_loss_aborts_with_epoch_index() {
        let g = small_graph();
        let mut cfg = small_cfg();
        // An absurd exponent overflows (1 - cos)^gamma to infinity on
        // the first epoch.
        cfg.set("loss.gamma", "100000").unwrap();
        let pre = preprocess_for_config(&cfg, &g, None).unwrap();
        match train(&cfg, &g, &pre) {
            Err(Error::Training { epoch: 1, .. }) => {}
            Err(other) => panic!("expected epoch-1 training abort, got {other:?}"),
            Ok(_) => panic!("expected epoch-1 training abort, got success"),
        }
    }

    #[test]
    fn zero_rates_train_on_alignment_only() {
        let g = small_graph();
        let mut cfg = small_cfg();
        cfg.set("corrupt.r_n", "0").unwrap();
        cfg.set("corrupt.r_e", "0").unwrap();
        let pre = preprocess_for_config(&cfg, &g, None).unwrap();
        let outcome = train(&cfg, &g, &pre).unwrap();
        for r in &outcome.history {
            assert_eq!(r.node, 0.0);
            assert_eq!(r.edge, 0.0);
            assert!(r.total.is_finite());
        }
    }

    #[test]
    fn one_training_step_changes_frozen_embeddings() {
        let g = small_graph();
        let mut cfg = small_cfg();
        cfg.set("train.epochs", "1").unwrap();
        let pre = preprocess_for_config(&cfg, &g, None).unwrap();

        let mut root = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init_seed: u64 = root.random();
        let untrained = init_params::<f64>(
            &encoder_config(&cfg, g.feature_dim()).unwrap(),
            g.feature_dim(),
            pre.bundle.k_e,
            init_seed,
        )
        .unwrap();
        let trained = train(&cfg, &g, &pre).unwrap().params;

        let h0 = crate::evalkit::embed(&g, &untrained, &pre).unwrap();
        let h1 = crate::evalkit::embed(&g, &trained, &pre).unwrap();
        let diff: f64 = h0
            .data()
            .iter()
            .zip(h1.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(diff > 0.0, "embeddings unchanged after a training step");
    }

    #[test]
    fn patience_stops_training_early() {
        let g = small_graph();
        let mut cfg = small_cfg();
        cfg.set("train.epochs", "200").unwrap();
        cfg.set("train.patience", "2").unwrap();
        // A divergent learning rate plateaus immediately.
        cfg.set("train.lr", "50.0").unwrap();
        let pre = preprocess_for_config(&cfg, &g, None).unwrap();
        let outcome = train(&cfg, &g, &pre).unwrap();
        assert!(
            outcome.history.len() < 200,
            "ran all {} epochs despite patience",
            outcome.history.len()
        );
    }

    #[test]
    fn training_runs_on_synthetic_sbm() {
        let params = SynthParams {
            kind: SynthKind::Sbm,
            block_sizes: vec![10, 10],
            p_in: 0.4,
            p_out: 0.05,
            feature_dim: 4,
            noise: 1.0,
            seed: 5,
        };
        let g: Graph<f64> = generate_synthetic(&params).unwrap();
        let mut cfg = small_cfg();
        cfg.set("spectral.k", "0").unwrap(); // all eigenpairs
        cfg.set("train.epochs", "5").unwrap();
        let pre = preprocess_for_config(&cfg, &g, None).unwrap();
        let outcome = train(&cfg, &g, &pre).unwrap();
        assert_eq!(outcome.history.len(), 5);
    }
}
