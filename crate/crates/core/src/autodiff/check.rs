use rand::Rng;

use super::{Tape, Var};
use crate::dense::DenseMat;
use crate::error::{Error, Result};

/// Compares the tape gradient of a scalar function against central finite
/// differences.
///
/// `build` records the function on a fresh tape given the leaf holding the
/// input matrix and returns the scalar output. The input is perturbed at each
/// of `coords`, and the largest `|analytic − fd| / (|fd| + 1e-8)` is returned.
pub fn finite_difference_check<F>(
    build: F,
    point: &DenseMat,
    h: f64,
    coords: &[(usize, usize)],
) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("step must be positive, got {h}")));
    }
    let eval = |x: DenseMat| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(x);
        let out = build(&mut tape, leaf)?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let leaf = tape.leaf(point.clone());
    let out = build(&mut tape, leaf)?;
    let analytic = tape.backward(out)?.get(leaf);

    let mut worst = 0.0f64;
    for &(i, j) in coords {
        if i >= point.rows() || j >= point.cols() {
            return Err(Error::Shape(format!(
                "coordinate ({i}, {j}) outside {:?}",
                point.shape()
            )));
        }
        let mut plus = point.clone();
        plus.add_at(i, j, h);
        let mut minus = point.clone();
        minus.add_at(i, j, -h);
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let err = (analytic.get(i, j) - fd).abs() / (fd.abs() + 1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Up to `count` distinct coordinates of a `rows × cols` matrix, drawn
/// uniformly; all coordinates when `count` covers the matrix.
pub fn sample_coordinates<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    count: usize,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let total = rows * cols;
    let mut flat: Vec<usize> = if count >= total {
        (0..total).collect()
    } else {
        rand::seq::index::sample(rng, total, count).into_vec()
    };
    flat.sort_unstable();
    flat.into_iter().map(|p| (p / cols, p % cols)).collect()
}
