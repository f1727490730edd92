//! k-means clustering with k-means++ seeding, and normalized mutual
//! information between two labelings.

use rand::Rng;

use crate::dense::DenseMat;
use crate::error::{Error, Result};

pub const DEFAULT_RESTARTS: usize = 10;
const MAX_LLOYD_ITERS: usize = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub assignment: Vec<usize>,
    pub centroids: DenseMat,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sum of squared distances of each point to its cluster mean.
pub fn inertia_of(z: &DenseMat, assignment: &[usize], k: usize) -> f64 {
    let c = centroids_of(z, assignment, k);
    (0..z.rows()).map(|i| sq_dist(z.row(i), c.row(assignment[i]))).sum()
}

fn centroids_of(z: &DenseMat, assignment: &[usize], k: usize) -> DenseMat {
    let mut c = DenseMat::zeros(k, z.cols());
    let mut counts = vec![0usize; k];
    for (i, &a) in assignment.iter().enumerate() {
        counts[a] += 1;
        for (s, v) in c.row_mut(a).iter_mut().zip(z.row(i)) {
            *s += v;
        }
    }
    for (a, &m) in counts.iter().enumerate() {
        if m > 0 {
            for s in c.row_mut(a) {
                *s /= m as f64;
            }
        }
    }
    c
}

/// k-means++ seeding: first centre uniform, then each next centre drawn
/// with probability proportional to squared distance to the nearest centre.
fn seed_centres<R: Rng + ?Sized>(z: &DenseMat, k: usize, rng: &mut R) -> DenseMat {
    let n = z.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(z.row(i), z.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(z.row(i), z.row(next)));
        }
    }
    z.select_rows(&chosen)
}

fn lloyd(z: &DenseMat, mut centroids: DenseMat) -> Clustering {
    let (n, k) = (z.rows(), centroids.rows());
    let mut assignment = vec![usize::MAX; n];
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        for (i, a) in assignment.iter_mut().enumerate() {
            let best = (0..k)
                .map(|c| (sq_dist(z.row(i), centroids.row(c)), c))
                .fold((f64::INFINITY, 0), |b, x| if x.0 < b.0 { x } else { b })
                .1;
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let fresh = centroids_of(z, &assignment, k);
        // An emptied cluster keeps its previous centre.
        let mut counts = vec![0usize; k];
        for &a in &assignment {
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids.row_mut(c).copy_from_slice(fresh.row(c));
            }
        }
    }
    let inertia = (0..n).map(|i| sq_dist(z.row(i), centroids.row(assignment[i]))).sum();
    Clustering {
        assignment,
        centroids,
        inertia,
    }
}

/// Best-inertia clustering over `restarts` k-means++ initializations.
pub fn kmeans<R: Rng + ?Sized>(z: &DenseMat, k: usize, restarts: usize, rng: &mut R) -> Result<Clustering> {
    if k < 2 || restarts == 0 {
        return Err(Error::invalid(format!("k-means needs k >= 2 and restarts >= 1, got {k}, {restarts}")));
    }
    let mut distinct: Vec<&[f64]> = (0..z.rows()).map(|i| z.row(i)).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::invalid(format!(
            "{} distinct points cannot form {k} clusters",
            distinct.len()
        )));
    }
    let mut best: Option<Clustering> = None;
    for _ in 0..restarts {
        let run = lloyd(z, seed_centres(z, k, rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(a; b) / √(H(a) H(b))`. When either labeling is constant the mutual
/// information is zero, and so is the score, except that two constant
/// labelings agree perfectly and score 1.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("labelings of length {} and {}", a.len(), b.len())));
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut joint = vec![0usize; ka * kb];
    let mut ca = vec![0usize; ka];
    let mut cb = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let n = a.len() as f64;
    let (ha, hb) = (entropy(ca.iter().copied(), n), entropy(cb.iter().copied(), n));
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    if ha == 0.0 || hb == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let c = joint[x * kb + y];
            if c > 0 {
                let pxy = c as f64 / n;
                mi += pxy * (pxy * n * n / (ca[x] as f64 * cb[y] as f64)).ln();
            }
        }
    }
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

/// Clusters `z` into `k` groups and scores the result against `labels`.
pub fn kmeans_nmi<R: Rng + ?Sized>(
    z: &DenseMat,
    labels: &[usize],
    k: usize,
    restarts: usize,
    rng: &mut R,
) -> Result<f64> {
    if labels.len() != z.rows() {
        return Err(Error::Shape(format!("{} labels for {} embeddings", labels.len(), z.rows())));
    }
    let c = kmeans(z, k, restarts, rng)?;
    nmi(&c.assignment, labels)
}
