//! Frozen-encoder evaluation: embeddings, linear probes, pooled
//! readouts, and the metrics they report.

use crate::config::RunConfig;
use crate::corruption::CorruptedGraph;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{bind_params, encode, ModelParams};
use crate::trainer::{load_checkpoint, preprocess_for_config, PreprocessArtifacts};
use fcg_tensor::{Adam, ParamStore, Scalar, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Encode the uncorrupted graph (no masking, full edge set) through a
/// trained encoder.
pub fn embed<F: Scalar>(
    g: &Graph<F>,
    params: &ModelParams<F>,
    pre: &PreprocessArtifacts<F>,
) -> Result<Tensor<F>> {
    let cg = CorruptedGraph {
        base: g,
        masked_nodes: Vec::new(),
        edges: g.edges().to_vec(),
    };
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params)?;
    let state = encode(&mut tape, &cg, &pre.positions, &pre.rbf, params, &bound)?;
    Ok(tape.value(state.h).clone())
}

/// Convenience path: rebuild the model from a checkpoint (whose
/// embedded config drives preprocessing) and embed `g`.
pub fn embed_from_checkpoint<F: Scalar>(
    g: &Graph<F>,
    checkpoint: &Path,
    cache_path: Option<&Path>,
) -> Result<Tensor<F>> {
    let (params, cfg) = load_checkpoint::<F>(checkpoint)?;
    let pre = preprocess_for_config(&cfg, g, cache_path)?;
    embed(g, &params, &pre)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Sum,
    Mean,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Pooling::Sum),
            "mean" => Ok(Pooling::Mean),
            other => Err(Error::Config(format!(
                "unknown pooling `{other}` (expected sum|mean)"
            ))),
        }
    }
}

/// Pool node representations into one graph-level vector.
pub fn graph_readout<F: Scalar>(h: &Tensor<F>, pooling: Pooling) -> Result<Vec<F>> {
    let (n, d) = (h.shape()[0], h.shape()[1]);
    if n == 0 {
        return Err(Error::Eval("cannot pool an empty graph".into()));
    }
    let mut out = vec![F::zero(); d];
    for i in 0..n {
        for (o, &v) in out.iter_mut().zip(h.row(i)) {
            *o += v;
        }
    }
    if pooling == Pooling::Mean {
        let inv = F::one() / F::c(n as f64);
        for o in &mut out {
            *o *= inv;
        }
    }
    Ok(out)
}

/// Train/val/test node index lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Where splits come from: fixed index lists on disk, or stratified
/// random splits regenerated per repeat.
#[derive(Debug, Clone)]
pub enum SplitSpec {
    Fractions { train: f64, val: f64 },
    File(std::path::PathBuf),
}

/// Parse a split file of `train:`/`val:`/`test:` lines with
/// comma-separated node indices.
pub fn load_splits(path: &Path, num_nodes: usize) -> Result<Splits> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut splits = Splits {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, rest) = line.split_once(':').ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: "expected `train:`/`val:`/`test:` prefix".into(),
        })?;
        let idx: Vec<usize> = rest
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| {
                t.trim().parse::<usize>().map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: format!("bad index `{t}`: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= num_nodes) {
            return Err(Error::Bounds {
                index: bad,
                num_nodes,
            });
        }
        match name.trim() {
            "train" => splits.train = idx,
            "val" => splits.val = idx,
            "test" => splits.test = idx,
            other => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: format!("unknown split `{other}`"),
                })
            }
        }
    }
    if splits.train.is_empty() || splits.test.is_empty() {
        return Err(Error::Eval(
            "split file needs non-empty train and test".into(),
        ));
    }
    Ok(splits)
}

/// Stratified random split: each class is shuffled and divided by the
/// given fractions.
pub fn stratified_split(
    classes: &[usize],
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<Splits> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_classes = classes.iter().max().map_or(0, |&c| c + 1);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &c) in classes.iter().enumerate() {
        groups[c].push(i);
    }
    let mut splits = Splits {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for group in groups.iter_mut() {
        // Fisher-Yates shuffle.
        for i in (1..group.len()).rev() {
            let j = rng.random_range(0..=i);
            group.swap(i, j);
        }
        let n = group.len();
        let n_train = ((train_frac * n as f64) + 0.5).floor() as usize;
        let n_val = ((val_frac * n as f64) + 0.5).floor() as usize;
        let n_train = n_train.min(n);
        let n_val = n_val.min(n - n_train);
        splits.train.extend(&group[..n_train]);
        splits.val.extend(&group[n_train..n_train + n_val]);
        splits.test.extend(&group[n_train + n_val..]);
    }
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();
    if splits.train.is_empty() || splits.test.is_empty() {
        return Err(Error::Eval(
            "stratified split produced an empty train or test set".into(),
        ));
    }
    Ok(splits)
}

/// Metric summary over probe repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub per_repeat: Vec<f64>,
}

impl ProbeResult {
    fn from_values(metric: &str, values: Vec<f64>) -> Self {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
        ProbeResult {
            metric: metric.into(),
            mean,
            std: var.sqrt(),
            per_repeat: values,
        }
    }
}

/// Multinomial logistic regression on frozen embeddings: Adam for a
/// fixed number of steps, no regularization, accuracy on the test
/// split, mean ± std over repeats.
pub fn linear_probe<F: Scalar>(
    h: &Tensor<F>,
    classes: &[usize],
    split: &SplitSpec,
    repeats: usize,
    seed: u64,
    steps: usize,
    lr: f64,
) -> Result<ProbeResult> {
    if repeats == 0 {
        return Err(Error::Eval("repeats must be >= 1".into()));
    }
    if h.shape()[0] != classes.len() {
        return Err(Error::Shape(format!(
            "{} embeddings vs {} labels",
            h.shape()[0],
            classes.len()
        )));
    }
    let num_classes = classes.iter().max().map_or(0, |&c| c + 1);
    if num_classes < 2 {
        return Err(Error::Eval("need at least two classes to probe".into()));
    }

    let mut values = Vec::with_capacity(repeats);
    for rep in 0..repeats {
        let splits = match split {
            SplitSpec::File(path) => load_splits(path, classes.len())?,
            SplitSpec::Fractions { train, val } => {
                stratified_split(classes, *train, *val, seed.wrapping_add(rep as u64))?
            }
        };
        let (w, b) = train_probe(h, classes, &splits.train, num_classes, steps, lr)?;
        let pred = predict(h, &w, &b, &splits.test);
        let truth: Vec<usize> = splits.test.iter().map(|&i| classes[i]).collect();
        values.push(accuracy(&pred, &truth)?);
    }
    Ok(ProbeResult::from_values("accuracy", values))
}

fn train_probe<F: Scalar>(
    h: &Tensor<F>,
    classes: &[usize],
    train: &[usize],
    num_classes: usize,
    steps: usize,
    lr: f64,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let d = h.shape()[1];
    let rows: Vec<Vec<F>> = train.iter().map(|&i| h.row(i).to_vec()).collect();
    let h_train = Tensor::from_rows(&rows)?;
    let mut onehot = Tensor::<F>::zeros(&[train.len(), num_classes]);
    for (r, &i) in train.iter().enumerate() {
        onehot.set2(r, classes[i], F::one());
    }

    let mut store = ParamStore::<F>::new();
    let wid = store.add("w", Tensor::zeros(&[d, num_classes]))?;
    let bid = store.add("b", Tensor::zeros(&[num_classes]))?;
    let mut adam = Adam::new(F::c(lr));

    for _ in 0..steps {
        let mut tape = Tape::new();
        let x = tape.constant(h_train.clone())?;
        let y = tape.constant(onehot.clone())?;
        let w = tape.param(&store, wid)?;
        let b = tape.param(&store, bid)?;
        let logits = tape.matmul(x, w)?;
        let logits = tape.add_row_vec(logits, b)?;
        let lse = tape.logsumexp_last_axis(logits)?;
        let picked = tape.mul(logits, y)?;
        let true_logit = tape.sum_last_axis(picked)?;
        let per_row = tape.sub(lse, true_logit)?;
        let loss = tape.mean_all(per_row)?;
        tape.backward(loss)?;
        store.zero_grad();
        tape.apply_param_grads(&mut store);
        adam.step(&mut store);
    }
    Ok((store.value(wid).clone(), store.value(bid).clone()))
}

fn predict<F: Scalar>(h: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>, idx: &[usize]) -> Vec<usize> {
    let (d, c) = (w.shape()[0], w.shape()[1]);
    idx.iter()
        .map(|&i| {
            let row = h.row(i);
            let mut best = 0;
            let mut best_v = F::neg_infinity();
            for j in 0..c {
                let mut v = b.data()[j];
                for k in 0..d {
                    v += row[k] * w.get2(k, j);
                }
                if v > best_v {
                    best_v = v;
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Eval(format!(
            "accuracy needs equal non-empty inputs, got {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Eval(format!(
            "rmse needs equal non-empty inputs, got {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let mse = pred
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(mse.sqrt())
}

/// ROC-AUC via the Mann-Whitney rank statistic with midrank ties.
pub fn roc_auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Eval("roc_auc needs equal non-empty inputs".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Eval("roc_auc labels must be 0/1".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Eval("roc_auc needs both classes present".into()));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // Midranks over tied blocks.
    let mut ranks = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mid;
        }
        i = j + 1;
    }

    let rank_sum: f64 = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == 1)
        .map(|(i, _)| ranks[i])
        .sum();
    Ok((rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64)
}

/// `results.json`: metric summary plus the resolved config.
pub fn write_results_json(result: &ProbeResult, config: &RunConfig, path: &Path) -> Result<()> {
    let doc = serde_json::json!({
        "metric": result.metric,
        "mean": result.mean,
        "std": result.std,
        "per_repeat": result.per_repeat,
        "config": config.resolved_string(),
    });
    std::fs::write(path, serde_json::to_string_pretty(&doc)?).map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfectly_separated_clusters_probe_at_full_accuracy() {
        // Two tight clusters around +/- (3, 3).
        let mut rows = Vec::new();
        let mut classes = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..40 {
            let c = i % 2;
            let sign = if c == 0 { 1.0 } else { -1.0 };
            rows.push(vec![
                sign * 3.0 + 0.1 * rng.random::<f64>(),
                sign * 3.0 + 0.1 * rng.random::<f64>(),
            ]);
            classes.push(c);
        }
        let h = Tensor::from_rows(&rows).unwrap();
        let res = linear_probe(
            &h,
            &classes,
            &SplitSpec::Fractions {
                train: 0.6,
                val: 0.2,
            },
            3,
            0,
            200,
            0.05,
        )
        .unwrap();
        assert_eq!(res.mean, 1.0, "{res:?}");
        assert_eq!(res.per_repeat.len(), 3);
    }

    #[test]
    fn random_labels_probe_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..4).map(|_| rng.random::<f64>() - 0.5).collect())
            .collect();
        let classes: Vec<usize> = (0..200).map(|_| rng.random_range(0..2usize)).collect();
        let h = Tensor::from_rows(&rows).unwrap();
        let res = linear_probe(
            &h,
            &classes,
            &SplitSpec::Fractions {
                train: 0.6,
                val: 0.2,
            },
            5,
            0,
            150,
            0.05,
        )
        .unwrap();
        // 3 sigma of chance for ~40 test points, averaged over repeats.
        let sigma = (0.25f64 / 40.0).sqrt();
        assert!((res.mean - 0.5).abs() < 3.0 * sigma, "mean {}", res.mean);
    }

    #[test]
    fn single_repeat_reports_zero_std() {
        let rows = vec![
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![1.0, 0.1],
            vec![-1.0, 0.1],
        ];
        let classes = vec![0, 1, 0, 1];
        let h = Tensor::from_rows(&rows).unwrap();
        let res = linear_probe(
            &h,
            &classes,
            &SplitSpec::Fractions {
                train: 0.5,
                val: 0.0,
            },
            1,
            3,
            50,
            0.1,
        )
        .unwrap();
        assert_eq!(res.std, 0.0);
    }

    #[test]
    fn mean_pool_of_identical_rows_is_that_row() {
        let h = Tensor::from_rows(&[vec![2.0, -1.0], vec![2.0, -1.0], vec![2.0, -1.0]]).unwrap();
        let v = graph_readout(&h, Pooling::Mean).unwrap();
        assert_eq!(v, vec![2.0, -1.0]);
        let s = graph_readout(&h, Pooling::Sum).unwrap();
        assert_eq!(s, vec![6.0, -3.0]);
    }

    #[test]
    fn empty_graph_readout_errors() {
        let h = Tensor::<f64>::zeros(&[0, 3]);
        assert!(graph_readout(&h, Pooling::Mean).is_err());
    }

    #[test]
    fn auc_perfect_ordering_is_one() {
        let auc = roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn auc_all_equal_scores_is_half() {
        let auc = roc_auc(&[0.5, 0.5, 0.5, 0.5], &[0, 1, 0, 1]).unwrap();
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn auc_mixed_example_matches_pair_counting() {
        // Pairs won: 3 of 4 -> 0.75.
        let auc = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert!((auc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let scores = [0.1, 0.7, 0.3, 0.9, 0.5];
        let labels = [0, 1, 0, 1, 1];
        let a = roc_auc(&scores, &labels).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| (s * 3.0).exp() + 7.0).collect();
        let b = roc_auc(&transformed, &labels).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn auc_requires_both_classes() {
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn rmse_identity_and_nonnegativity() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(rmse(&[1.0, 2.0], &[2.0, 0.0]).unwrap() > 0.0);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn split_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("splits.txt");
        std::fs::write(&path, "train: 0,1,2\nval: 3\ntest: 4,5\n").unwrap();
        let s = load_splits(&path, 6).unwrap();
        assert_eq!(s.train, vec![0, 1, 2]);
        assert_eq!(s.val, vec![3]);
        assert_eq!(s.test, vec![4, 5]);
        assert!(load_splits(&path, 4).is_err()); // index 5 out of bounds
    }

    #[test]
    fn stratified_split_respects_fractions_and_classes() {
        let classes: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let s = stratified_split(&classes, 0.6, 0.2, 11).unwrap();
        assert_eq!(s.train.len(), 60);
        assert_eq!(s.val.len(), 20);
        assert_eq!(s.test.len(), 20);
        let train_ones = s.train.iter().filter(|&&i| classes[i] == 1).count();
        assert_eq!(train_ones, 30);
        // Disjoint and complete.
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }
}
