//! Data generators and task metrics: the 4-DOF arm, Pareto and uniform
//! sources, and resimulation error.

use std::io::Write;

use rand::Rng;
use rand_distr::{Normal, Uniform};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::flows::{FlowModel, PaddingSpec};
use crate::rng::seed_everything;
use crate::training::{sample_posterior, LatentSampler};

/// Planar arm on a vertical rail: segment lengths and prior std-devs of
/// `(rail offset, three joint angles)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IkConfig {
    pub lengths: [f64; 3],
    pub sigmas: [f64; 4],
}

impl Default for IkConfig {
    fn default() -> Self {
        IkConfig {
            lengths: [0.5, 0.5, 1.0],
            sigmas: [0.25, 0.5, 0.5, 0.5],
        }
    }
}

impl IkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lengths.iter().chain(&self.sigmas).all(|&v| v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("arm lengths and sigmas must be positive: {self:?}")))
        }
    }

    pub fn reach(&self) -> f64 {
        self.lengths.iter().sum()
    }

    /// End-effector position of one configuration.
    pub fn forward(&self, x: &[f64]) -> [f64; 2] {
        let [l1, l2, l3] = self.lengths;
        let (a1, a2, a3) = (x[1], x[2] - x[1], x[3] - x[1] - x[2]);
        [
            x[0] + l1 * a1.sin() + l2 * a2.sin() + l3 * a3.sin(),
            l1 * a1.cos() + l2 * a2.cos() + l3 * a3.cos(),
        ]
    }

    /// Row-wise [`forward`](Self::forward) of an `n × 4` batch.
    pub fn forward_batch(&self, x: &Tensor) -> Result<Tensor> {
        let (n, d) = x.dims2()?;
        if d != 4 {
            return Err(Error::shape("ik_forward", &[n, d], &[n, 4]));
        }
        let data = (0..n).flat_map(|i| self.forward(x.row(i))).collect();
        Tensor::new([n, 2], data)
    }

    /// `n` prior draws and their noiseless end-effector positions.
    pub fn generate(&self, n: usize, seed: u64) -> Result<(Tensor, Tensor)> {
        self.validate()?;
        if n == 0 {
            return Err(Error::Empty { op: "ik_generate" });
        }
        let mut rng = seed_everything(seed).stream("ik_data");
        let normals: Vec<Normal<f64>> = self
            .sigmas
            .iter()
            .map(|&s| Normal::new(0.0, s).expect("validated sigma"))
            .collect();
        let data = (0..n).flat_map(|_| normals.iter().map(|d| rng.sample(d)).collect::<Vec<_>>()).collect();
        let x = Tensor::new([n, 4], data)?;
        let y = self.forward_batch(&x)?;
        Ok((x, y))
    }

    /// Mean `‖forward(x̂_i) − y*‖₂` over candidate preimages.
    pub fn resim_error_of(&self, samples: &Tensor, y_star: [f64; 2]) -> Result<f64> {
        let y = self.forward_batch(samples)?;
        let n = y.rows();
        if n == 0 {
            return Err(Error::Empty { op: "resim_error" });
        }
        let total: f64 = (0..n).map(|i| (y.at(i, 0) - y_star[0]).hypot(y.at(i, 1) - y_star[1])).sum();
        Ok(total / n as f64)
    }

    /// Resimulation error of `n` posterior samples drawn from `model`.
    pub fn resim_error<R: Rng + ?Sized>(
        &self,
        model: &FlowModel,
        y_star: [f64; 2],
        n: usize,
        latent: &LatentSampler,
        padding: Option<&PaddingSpec>,
        rng: &mut R,
    ) -> Result<f64> {
        let samples = sample_posterior(model, &y_star, n, latent, padding, rng)?;
        self.resim_error_of(&samples, y_star)
    }
}

/// I.i.d. Pareto coordinates with shape `alpha` and scale `x_m`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParetoConfig {
    pub alpha: f64,
    pub x_m: f64,
    pub dim: usize,
}

impl ParetoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha > 0.0 && self.x_m > 0.0 && self.dim > 0 {
            Ok(())
        } else {
            Err(Error::Config(format!("Pareto needs alpha, x_m > 0 and dim ≥ 1: {self:?}")))
        }
    }

    /// Inverse CDF: `x_m (1 − u)^{−1/α}`.
    pub fn quantile(&self, u: f64) -> f64 {
        self.x_m * (1.0 - u).powf(-1.0 / self.alpha)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.x_m {
            0.0
        } else {
            self.alpha * self.x_m.powf(self.alpha) / x.powf(self.alpha + 1.0)
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Tensor> {
        self.validate()?;
        let mut rng = seed_everything(seed).stream("pareto");
        let data = (0..n * self.dim).map(|_| self.quantile(rng.random::<f64>())).collect();
        Tensor::new([n, self.dim], data)
    }
}

/// I.i.d. `U[a, b)` entries.
pub fn uniform_sample(a: f64, b: f64, n: usize, dim: usize, seed: u64) -> Result<Tensor> {
    let u = Uniform::new(a, b).map_err(|_| Error::domain("uniform_sample", format!("need a < b, got [{a}, {b}]")))?;
    let mut rng = seed_everything(seed).stream("uniform");
    Tensor::new([n, dim], (0..n * dim).map(|_| rng.sample(u)).collect())
}

/// Per-coordinate affine standardisation `(x − shift) / scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, frac) = (pos.floor() as usize, pos.fract());
    if lo + 1 < sorted.len() {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    } else {
        sorted[lo]
    }
}

impl Standardizer {
    /// Shift by `x_m`, scale by each column's interquartile range.
    pub fn pareto(train: &Tensor, x_m: f64) -> Result<Self> {
        let (n, d) = train.dims2()?;
        if n < 2 {
            return Err(Error::Empty { op: "Standardizer::pareto" });
        }
        let mut scale = Vec::with_capacity(d);
        for j in 0..d {
            let mut col = train.column(j);
            col.sort_by(f64::total_cmp);
            let iqr = quantile_sorted(&col, 0.75) - quantile_sorted(&col, 0.25);
            if !(iqr > 0.0) {
                return Err(Error::domain("Standardizer::pareto", format!("column {j} has zero spread")));
            }
            scale.push(iqr);
        }
        Ok(Standardizer {
            shift: vec![x_m; d],
            scale,
        })
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.map(x, |v, s, c| (v - s) / c)
    }

    pub fn invert(&self, x: &Tensor) -> Result<Tensor> {
        self.map(x, |v, s, c| v * c + s)
    }

    fn map(&self, x: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor> {
        let (n, d) = x.dims2()?;
        if d != self.shift.len() {
            return Err(Error::shape("Standardizer", &[n, d], &[n, self.shift.len()]));
        }
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(k, &v)| f(v, self.shift[k % d], self.scale[k % d]))
            .collect();
        Tensor::new([n, d], data)
    }
}

/// Write `x` and `y` side by side with header `x1..xd,y1..yk`.
pub fn write_dataset_csv<W: Write>(out: W, x: &Tensor, y: &Tensor) -> Result<()> {
    let (n, dx) = x.dims2()?;
    let (ny, dy) = y.dims2()?;
    if n != ny {
        return Err(Error::shape("write_dataset_csv", &[n, dx], &[ny, dy]));
    }
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = (1..=dx)
        .map(|j| format!("x{j}"))
        .chain((1..=dy).map(|j| format!("y{j}")))
        .collect();
    w.write_record(&header).map_err(io)?;
    for i in 0..n {
        let row: Vec<String> = x.row(i).iter().chain(y.row(i)).map(|v| format!("{v:e}")).collect();
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Empirical `mean |x|^p` over all entries.
pub fn abs_moment(x: &Tensor, p: f64) -> f64 {
    x.data().iter().map(|v| v.abs().powf(p)).sum::<f64>() / x.len() as f64
}
