//! Linear-probe node classification: multinomial logistic regression on
//! frozen embeddings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dense::{gemm, DenseMat};
use crate::error::{Error, Result};
use crate::graph::{Adjacency, Split};
use crate::rng;

/// L2 strengths tried on the validation split.
pub const L2_GRID: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];
pub const MAX_ITERS: usize = 2000;
pub const TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub values: Vec<f64>,
}

impl MeanStd {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std, values }
    }
}

/// A fitted softmax classifier over `d` inputs and `c` classes.
#[derive(Clone, Debug)]
pub struct LogisticModel {
    /// `(d + 1) × c`; the last row is the bias.
    pub weights: DenseMat,
    pub iterations: usize,
}

fn with_bias(x: &DenseMat) -> DenseMat {
    let (n, d) = x.shape();
    DenseMat::from_fn(n, d + 1, |i, j| if j < d { x.get(i, j) } else { 1.0 })
}

/// Row-wise softmax in place.
fn softmax_rows(m: &mut DenseMat) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
}

/// Mean cross-entropy plus `l2/2 · ‖W‖²` (bias excluded) and its gradient.
fn objective(xb: &DenseMat, y: &[usize], w: &DenseMat, l2: f64) -> (f64, DenseMat) {
    let n = xb.rows() as f64;
    let d = xb.cols() - 1;
    let mut p = gemm(xb, false, w, false);
    let mut loss = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let row = p.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[yi];
    }
    softmax_rows(&mut p);
    for (i, &yi) in y.iter().enumerate() {
        p.add_at(i, yi, -1.0);
    }
    let mut grad = gemm(xb, true, &p, false);
    grad.scale_in_place(1.0 / n);
    loss /= n;
    for r in 0..d {
        for (g, &wv) in grad.row_mut(r).iter_mut().zip(w.row(r)) {
            *g += l2 * wv;
        }
        loss += 0.5 * l2 * w.row(r).iter().map(|v| v * v).sum::<f64>();
    }
    (loss, grad)
}

/// Largest eigenvalue of `XᵀX / n` by power iteration.
fn gram_spectral_bound(xb: &DenseMat) -> f64 {
    let n = xb.rows() as f64;
    let mut v = DenseMat::filled(xb.cols(), 1, 1.0 / (xb.cols() as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..100 {
        let u = gemm(xb, true, &gemm(xb, false, &v, false), false);
        let norm = u.frobenius_norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm / n;
        v = u;
        v.scale_in_place(1.0 / norm);
        if (next - lambda).abs() <= 1e-6 * next {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Fits by Nesterov-accelerated full-batch gradient descent with step
/// `1/L`, `L = λmax(XᵀX/n)/2 + l2`, stopping at the first extrapolated
/// point whose largest gradient entry is below [`TOLERANCE`], or after
/// [`MAX_ITERS`] steps. Initial weights are drawn small from `rng`.
pub fn fit_logistic<R: Rng + ?Sized>(
    x: &DenseMat,
    y: &[usize],
    classes: usize,
    l2: f64,
    rng: &mut R,
) -> Result<LogisticModel> {
    if x.rows() != y.len() || x.rows() == 0 {
        return Err(Error::Shape(format!(
            "{} embedding rows for {} labels",
            x.rows(),
            y.len()
        )));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= classes) {
        return Err(Error::invalid(format!("label {bad} outside {classes} classes")));
    }
    let xb = with_bias(x);
    let step = 1.0 / (0.5 * gram_spectral_bound(&xb) + l2).max(1e-12);
    let mut w = DenseMat::from_fn(xb.cols(), classes, |_, _| rng.random_range(-1e-3..1e-3));
    let mut prev = w.clone();
    let mut iterations = MAX_ITERS;
    for t in 0..MAX_ITERS {
        let momentum = t as f64 / (t as f64 + 3.0);
        let look = w.zip_map(&prev, |a, b| a + momentum * (a - b));
        let (_, grad) = objective(&xb, y, &look, l2);
        prev = w;
        w = look;
        if grad.max_abs() < TOLERANCE {
            iterations = t;
            break;
        }
        w.axpy(-step, &grad);
    }
    Ok(LogisticModel {
        weights: w,
        iterations,
    })
}

impl LogisticModel {
    pub fn predict(&self, x: &DenseMat) -> Vec<usize> {
        let scores = gemm(&with_bias(x), false, &self.weights, false);
        (0..scores.rows())
            .map(|i| {
                let row = scores.row(i);
                (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
            })
            .collect()
    }
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len() as f64
}

/// Centers by the train mean and divides by the train RMS row norm. Both are
/// invariant to rotating the embedding space.
fn standardize(z: &DenseMat, train: &[usize]) -> DenseMat {
    let d = z.cols();
    let mut mean = vec![0.0; d];
    for &i in train {
        for (m, v) in mean.iter_mut().zip(z.row(i)) {
            *m += v / train.len() as f64;
        }
    }
    let ms = train
        .iter()
        .map(|&i| z.row(i).iter().zip(&mean).map(|(v, m)| (v - m).powi(2)).sum::<f64>())
        .sum::<f64>()
        / train.len() as f64;
    let scale = if ms > 0.0 { 1.0 / ms.sqrt() } else { 1.0 };
    DenseMat::from_fn(z.rows(), d, |i, j| (z.get(i, j) - mean[j]) * scale)
}

/// Test predictions of one probe seed.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRun {
    pub seed: u64,
    pub l2: f64,
    pub test_nodes: Vec<usize>,
    pub predictions: Vec<usize>,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeOutcome {
    pub accuracy: MeanStd,
    pub runs: Vec<ProbeRun>,
}

fn nodes_in(split: &[Option<Split>], which: Split) -> Vec<usize> {
    (0..split.len()).filter(|&i| split[i] == Some(which)).collect()
}

/// Linear-probe accuracy over `seeds`. The L2 strength is picked per seed
/// from [`L2_GRID`] by validation accuracy (first best wins); without
/// validation nodes the smallest strength is used.
pub fn linear_probe(
    z: &DenseMat,
    labels: &[usize],
    split: &[Option<Split>],
    seeds: &[u64],
) -> Result<ProbeOutcome> {
    if z.rows() != labels.len() || split.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} embeddings, {} labels, {} split entries",
            z.rows(),
            labels.len(),
            split.len()
        )));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("linear probe needs at least one seed"));
    }
    let train = nodes_in(split, Split::Train);
    let val = nodes_in(split, Split::Val);
    let test = nodes_in(split, Split::Test);
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("linear probe needs nonempty train and test splits"));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut seen = vec![false; classes];
    for &i in &train {
        seen[labels[i]] = true;
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::invalid(format!("class {c} has no training node")));
    }
    let zs = standardize(z, &train);
    let pick = |nodes: &[usize]| {
        (
            zs.select_rows(nodes),
            nodes.iter().map(|&i| labels[i]).collect::<Vec<_>>(),
        )
    };
    let (x_train, y_train) = pick(&train);
    let (x_val, y_val) = pick(&val);
    let (x_test, y_test) = pick(&test);

    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut best: Option<(f64, f64, LogisticModel)> = None;
        for (g, &l2) in L2_GRID.iter().enumerate() {
            let mut r = rng::stream(seed, "probe", g as u64);
            let model = fit_logistic(&x_train, &y_train, classes, l2, &mut r)?;
            let score = if val.is_empty() {
                0.0
            } else {
                accuracy(&model.predict(&x_val), &y_val)
            };
            if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                best = Some((score, l2, model));
            }
        }
        let (_, l2, model) = best.expect("grid is nonempty");
        let predictions = model.predict(&x_test);
        runs.push(ProbeRun {
            seed,
            l2,
            accuracy: accuracy(&predictions, &y_test),
            test_nodes: test.clone(),
            predictions,
        });
    }
    Ok(ProbeOutcome {
        accuracy: MeanStd::from_values(runs.iter().map(|r| r.accuracy).collect()),
        runs,
    })
}

/// Test accuracy among nodes whose clean-graph degree lies in `[min, max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketAccuracy {
    pub min_degree: usize,
    /// `None` for the open-ended top bucket.
    pub max_degree: Option<usize>,
    pub count: usize,
    /// Mean over probe seeds; `None` when no test node falls in the bucket.
    pub accuracy: Option<f64>,
}

/// Degree buckets from ascending upper bounds: `[2]` gives `d ≤ 2` and `d > 2`.
pub fn degree_buckets(thresholds: &[usize]) -> Result<Vec<(usize, Option<usize>)>> {
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("degree thresholds must be strictly increasing"));
    }
    let mut out = Vec::with_capacity(thresholds.len() + 1);
    let mut lo = 0;
    for &t in thresholds {
        out.push((lo, Some(t)));
        lo = t + 1;
    }
    out.push((lo, None));
    Ok(out)
}

/// Splits the probe's test predictions by degree in `adjacency`.
pub fn degree_bucket_accuracy(
    probe: &ProbeOutcome,
    labels: &[usize],
    adjacency: &Adjacency,
    thresholds: &[usize],
) -> Result<Vec<BucketAccuracy>> {
    let buckets = degree_buckets(thresholds)?;
    let inside = |d: usize, (lo, hi): (usize, Option<usize>)| d >= lo && hi.is_none_or(|h| d <= h);
    Ok(buckets
        .into_iter()
        .map(|b| {
            let per_seed: Vec<(usize, usize)> = probe
                .runs
                .iter()
                .map(|run| {
                    run.test_nodes
                        .iter()
                        .zip(&run.predictions)
                        .filter(|&(&i, _)| inside(adjacency.degree(i), b))
                        .fold((0, 0), |(n, hit), (&i, &p)| (n + 1, hit + usize::from(p == labels[i])))
                })
                .collect();
            let count = per_seed.first().map_or(0, |c| c.0);
            let accuracy = (count > 0).then(|| {
                per_seed.iter().map(|&(n, h)| h as f64 / n as f64).sum::<f64>() / per_seed.len() as f64
            });
            BucketAccuracy {
                min_degree: b.0,
                max_degree: b.1,
                count,
                accuracy,
            }
        })
        .collect())
}
