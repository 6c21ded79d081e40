use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::labels::LabelSet;
use super::MetricSummary;
use crate::error::{Error, Result};
use crate::hetgraph::EmbeddingMatrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            iterations: 300,
            learning_rate: 0.1,
            l2: 1e-4,
        }
    }
}

/// TP / (TP + (FP + FN) / 2), pooled over all classes.
pub fn micro_f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = tp as f64 + 0.5 * (fp + fn_) as f64;
    if denom == 0.0 {
        0.0
    } else {
        tp as f64 / denom
    }
}

/// Micro-averaged F1 of single-label predictions.
pub fn micro_f1(truth: &[usize], pred: &[usize]) -> f64 {
    assert_eq!(truth.len(), pred.len());
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&t, &p) in truth.iter().zip(pred) {
        if t == p {
            tp += 1;
        } else {
            fp += 1;
            fn_ += 1;
        }
    }
    micro_f1_from_counts(tp, fp, fn_)
}

/// Fold index for each labeled entry. Entries of each class are shuffled
/// and dealt round-robin, continuing the deal across classes so fold sizes
/// differ by at most one.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Vec<usize> {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0; labels.len()];
    let mut next = 0;
    for members in by_class.iter_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            out[i] = next % folds;
            next += 1;
        }
    }
    out
}

/// One-vs-rest logistic regression trained by full-batch gradient descent.
#[derive(Clone, Debug)]
pub struct OneVsRest {
    mean: Array1<f64>,
    scale: Array1<f64>,
    // (d + 1) x classes, last row is the bias
    weights: Array2<f64>,
}

fn with_bias(x: &Array2<f64>, mean: &Array1<f64>, scale: &Array1<f64>) -> Array2<f64> {
    let (n, d) = x.dim();
    let mut out = Array2::ones((n, d + 1));
    let mut body = out.slice_mut(ndarray::s![.., ..d]);
    body.assign(&((x - mean) / scale));
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl OneVsRest {
    /// Features are standardized with the training rows' mean and standard deviation.
    pub fn fit(x: &Array2<f64>, y: &[usize], classes: usize, cfg: &LogisticConfig) -> Self {
        let (n, d) = x.dim();
        let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(d));
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        let xb = with_bias(x, &mean, &scale);
        let mut target = Array2::<f64>::zeros((n, classes));
        for (i, &c) in y.iter().enumerate() {
            target[[i, c]] = 1.0;
        }
        let mut w = Array2::<f64>::zeros((d + 1, classes));
        let inv_n = 1.0 / n.max(1) as f64;
        for _ in 0..cfg.iterations {
            let residual = xb.dot(&w).mapv(sigmoid) - &target;
            let mut grad = xb.t().dot(&residual) * inv_n;
            let mut body = grad.slice_mut(ndarray::s![..d, ..]);
            body.scaled_add(cfg.l2, &w.slice(ndarray::s![..d, ..]));
            w.scaled_add(-cfg.learning_rate, &grad);
        }
        OneVsRest {
            mean,
            scale,
            weights: w,
        }
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<usize> {
        let scores = with_bias(x, &self.mean, &self.scale).dot(&self.weights);
        scores
            .outer_iter()
            .map(|row| {
                let mut best = 0;
                for (c, &s) in row.iter().enumerate() {
                    if s > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

/// Micro-F1 of a one-vs-rest classifier over `folds`-fold cross-validation.
pub fn node_classification(emb: &EmbeddingMatrix, labels: &LabelSet, folds: usize, seed: u64) -> Result<MetricSummary> {
    node_classification_with(emb, labels, folds, seed, &LogisticConfig::default())
}

pub fn node_classification_with(
    emb: &EmbeddingMatrix,
    labels: &LabelSet,
    folds: usize,
    seed: u64,
    cfg: &LogisticConfig,
) -> Result<MetricSummary> {
    if labels.num_classes() < 2 {
        return Err(Error::InvalidInput(
            "node classification needs at least two classes".into(),
        ));
    }
    if folds < 2 || labels.len() < folds {
        return Err(Error::InvalidInput(format!(
            "{} labeled nodes cannot fill {folds} folds",
            labels.len()
        )));
    }
    if let Some(&u) = labels.nodes().iter().find(|&&u| u as usize >= emb.rows()) {
        return Err(Error::InvalidInput(format!("labeled node {u} has no embedding row")));
    }
    let x_all = emb
        .as_array()
        .select(Axis(0), &labels.nodes().iter().map(|&u| u as usize).collect::<Vec<_>>());
    let y_all = labels.labels();
    let fold_of = stratified_folds(y_all, folds, seed);
    let mut scores = Vec::with_capacity(folds);
    for f in 0..folds {
        let train: Vec<usize> = (0..y_all.len()).filter(|&i| fold_of[i] != f).collect();
        let test: Vec<usize> = (0..y_all.len()).filter(|&i| fold_of[i] == f).collect();
        let model = OneVsRest::fit(
            &x_all.select(Axis(0), &train),
            &train.iter().map(|&i| y_all[i]).collect::<Vec<_>>(),
            labels.num_classes(),
            cfg,
        );
        let pred = model.predict(&x_all.select(Axis(0), &test));
        let truth: Vec<usize> = test.iter().map(|&i| y_all[i]).collect();
        scores.push(micro_f1(&truth, &pred));
    }
    Ok(MetricSummary::from_values(scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn hand_worked_confusion_table() {
        // 20 predictions over 3 classes: 13 correct, 7 wrong
        let truth = [0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2];
        let pred = [0, 0, 0, 0, 0, 1, 2, 1, 1, 1, 1, 0, 0, 2, 2, 2, 2, 1, 0, 0];
        // TP 13, FP 7, FN 7 -> 13 / (13 + 7) = 0.65
        assert!((micro_f1(&truth, &pred) - 0.65).abs() < 1e-12);
        assert_eq!(micro_f1_from_counts(13, 7, 7), 0.65);
    }

    #[test]
    fn folds_are_balanced_and_stratified() {
        let labels: Vec<usize> = (0..103).map(|i| i % 3).collect();
        let f = stratified_folds(&labels, 10, 1);
        let mut sizes = [0usize; 10];
        for &k in &f {
            sizes[k] += 1;
        }
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for c in 0..3 {
            let mut per = [0usize; 10];
            for (i, &k) in f.iter().enumerate() {
                if labels[i] == c {
                    per[k] += 1;
                }
            }
            assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
    }

    fn clouds(n: usize, sep: f64, seed: u64) -> (EmbeddingMatrix, LabelSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((2 * n, 4));
        for i in 0..2 * n {
            let c = if i < n { sep } else { -sep };
            for k in 0..4 {
                x[[i, k]] = c + rng.random::<f64>() - 0.5;
            }
        }
        let labels = LabelSet::from_pairs(2 * n, (0..2 * n).map(|i| (i as u32, (i / n).to_string()))).unwrap();
        (EmbeddingMatrix::new(x).unwrap(), labels)
    }

    #[test]
    fn separable_clouds_score_one() {
        let (e, l) = clouds(50, 10.0, 3);
        let s = node_classification(&e, &l, 10, 0).unwrap();
        assert_eq!(s.mean, 1.0);
    }

    #[test]
    fn permuted_labels_fall_to_majority_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 600;
        let mut x = Array2::zeros((n, 4));
        x.mapv_inplace(|_: f64| rng.random::<f64>());
        // 60/40 class split, labels unrelated to features
        let labels = LabelSet::from_pairs(
            n,
            (0..n).map(|i| (i as u32, if i % 5 < 3 { "a" } else { "b" }.to_string())),
        )
        .unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let shuffled = labels.permuted(&perm);
        let s = node_classification(&EmbeddingMatrix::new(x).unwrap(), &shuffled, 10, 0).unwrap();
        assert!(
            (s.mean - shuffled.majority_rate()).abs() < 0.05,
            "{} vs {}",
            s.mean,
            shuffled.majority_rate()
        );
    }

    #[test]
    fn single_class_is_rejected() {
        let e = EmbeddingMatrix::zeros(20, 2);
        let l = LabelSet::from_pairs(20, (0..20).map(|i| (i, "x".to_string()))).unwrap();
        assert!(node_classification(&e, &l, 10, 0).is_err());
    }
}
