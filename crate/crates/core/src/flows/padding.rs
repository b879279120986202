use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    /// Append zeros.
    Zero,
    /// Cycle through the original coordinates.
    Repeat,
}

impl PadMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zero" => Some(PadMode::Zero),
            "repeat" => Some(PadMode::Repeat),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PadMode::Zero => "zero",
            PadMode::Repeat => "repeat",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PaddingSpec {
    pub original: usize,
    pub padded: usize,
    pub mode: PadMode,
    /// Std-dev of Gaussian noise added to zero-padded entries in training.
    pub noise: f64,
}

impl PaddingSpec {
    pub fn new(original: usize, padded: usize, mode: PadMode) -> Result<Self> {
        if padded < original || original == 0 {
            return Err(Error::Config(format!(
                "cannot pad width {original} to {padded}"
            )));
        }
        Ok(PaddingSpec {
            original,
            padded,
            mode,
            noise: 0.0,
        })
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn extra(&self) -> usize {
        self.padded - self.original
    }

    fn check(&self, x: &Tensor, width: usize) -> Result<usize> {
        let (n, c) = x.dims2()?;
        if c != width {
            return Err(Error::shape("padding", &[n, c], &[n, width]));
        }
        Ok(n)
    }

    /// Deterministic padding (no noise).
    pub fn pad(&self, x: &Tensor) -> Result<Tensor> {
        let n = self.check(x, self.original)?;
        let mut out = Vec::with_capacity(n * self.padded);
        for i in 0..n {
            let row = x.row(i);
            out.extend_from_slice(row);
            for k in self.original..self.padded {
                out.push(match self.mode {
                    PadMode::Zero => 0.0,
                    PadMode::Repeat => row[k % self.original],
                });
            }
        }
        Tensor::new([n, self.padded], out)
    }

    /// Padding for training inputs: zero-padded entries receive noise of
    /// scale `self.noise`.
    pub fn pad_noisy<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> Result<Tensor> {
        let mut out = self.pad(x)?;
        if self.mode == PadMode::Zero && self.noise > 0.0 {
            let (n, w) = out.dims2()?;
            let data = out.data_mut();
            for i in 0..n {
                for k in self.original..w {
                    data[i * w + k] += self.noise * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        Ok(out)
    }

    pub fn unpad(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x, self.padded)?;
        x.slice_cols(0, self.original)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_and_repeat_examples() {
        let x = Tensor::from_rows(&[[1.0, 2.0]]).unwrap();
        let z = PaddingSpec::new(2, 4, PadMode::Zero).unwrap();
        assert_eq!(z.pad(&x).unwrap().data(), &[1.0, 2.0, 0.0, 0.0]);
        let r = PaddingSpec::new(2, 5, PadMode::Repeat).unwrap();
        assert_eq!(r.pad(&x).unwrap().data(), &[1.0, 2.0, 1.0, 2.0, 1.0]);
        for spec in [z, r] {
            assert_eq!(spec.unpad(&spec.pad(&x).unwrap()).unwrap(), x);
        }
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let spec = PaddingSpec::new(2, 4, PadMode::Zero).unwrap();
        let x = Tensor::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        assert!(spec.pad(&x).is_err());
        assert!(spec.unpad(&x).is_err());
        assert!(PaddingSpec::new(3, 2, PadMode::Zero).is_err());
    }
}
