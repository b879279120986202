use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MmdEstimator {
    #[default]
    Biased,
    Unbiased,
}

fn kernel_mean<'t>(a: Var<'t>, b: Var<'t>, gamma: f64, drop_diagonal: bool) -> Result<Var<'t>> {
    let k = a.pairwise_sq_dist(b)?.scale(-gamma)?.exp()?;
    let (n, m) = (k.shape()[0], k.shape()[1]);
    if drop_diagonal {
        // Diagonal entries are exactly k(x, x) = 1.
        k.sum()?.affine(1.0 / (n * (n - 1)) as f64, -(n as f64) / (n * (n - 1)) as f64)
    } else {
        k.sum()?.scale(1.0 / (n * m) as f64)
    }
}

/// Squared MMD with the Gaussian kernel `exp(−γ‖x − x′‖²)`.
pub fn mmd2<'t>(x: Var<'t>, y: Var<'t>, gamma: f64, estimator: MmdEstimator) -> Result<Var<'t>> {
    let (n, m) = (x.shape()[0], y.shape()[0]);
    if n == 0 || m == 0 {
        return Err(Error::Empty { op: "mmd2" });
    }
    if !(gamma > 0.0) {
        return Err(Error::domain("mmd2", format!("bandwidth must be positive, got {gamma}")));
    }
    let unbiased = estimator == MmdEstimator::Unbiased;
    if unbiased && (n < 2 || m < 2) {
        return Err(Error::domain("mmd2", "unbiased estimator needs at least two samples per set"));
    }
    let kxx = kernel_mean(x, x, gamma, unbiased)?;
    let kyy = kernel_mean(y, y, gamma, unbiased)?;
    let kxy = kernel_mean(x, y, gamma, false)?;
    kxx.add(kyy)?.sub(kxy.scale(2.0)?)
}

pub fn mmd2_values(x: &Tensor, y: &Tensor, gamma: f64, estimator: MmdEstimator) -> Result<f64> {
    let tape = Tape::no_grad();
    Ok(mmd2(tape.constant(x.clone()), tape.constant(y.clone()), gamma, estimator)?.item())
}

/// `γ = 1 / (2·median²)` over distinct pairwise distances of the pooled sample.
pub fn median_heuristic(x: &Tensor, y: &Tensor) -> Result<f64> {
    let (n, d) = x.dims2()?;
    let (m, d2) = y.dims2()?;
    if d != d2 {
        return Err(Error::shape("median_heuristic", x.shape(), y.shape()));
    }
    let rows: Vec<&[f64]> = (0..n).map(|i| x.row(i)).chain((0..m).map(|j| y.row(j))).collect();
    let mut dists = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let s: f64 = rows[i].iter().zip(rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            dists.push(s.sqrt());
        }
    }
    if dists.is_empty() {
        return Err(Error::Empty { op: "median_heuristic" });
    }
    dists.sort_by(f64::total_cmp);
    let k = dists.len();
    let med = if k % 2 == 1 {
        dists[k / 2]
    } else {
        0.5 * (dists[k / 2 - 1] + dists[k / 2])
    };
    if med <= 0.0 {
        return Err(Error::domain("median_heuristic", "median pairwise distance is zero"));
    }
    Ok(1.0 / (2.0 * med * med))
}
