use std::f64::consts::LN_2;

use crate::autodiff::Var;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FDivergence {
    KL,
    ReverseKL,
    JS,
}

impl FDivergence {
    pub const ALL: [FDivergence; 3] = [FDivergence::KL, FDivergence::ReverseKL, FDivergence::JS];

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kl" => Some(FDivergence::KL),
            "reversekl" | "reverse_kl" | "rkl" => Some(FDivergence::ReverseKL),
            "js" => Some(FDivergence::JS),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FDivergence::KL => "KL",
            FDivergence::ReverseKL => "ReverseKL",
            FDivergence::JS => "JS",
        }
    }
}

/// Which conjugate the Jensen-Shannon objective uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum JsConjugate {
    /// `f*(t) = log(1 + e^t) − log 2`.
    #[default]
    Shifted,
    /// `f*(t) = −log(2 − e^t)`, defined for `t < log 2`.
    Classical,
}

/// Generator data of one f-divergence: conjugate `f*` and the output
/// activation `g_f` that maps raw critic outputs into the domain of `f*`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FDivergenceSpec {
    pub kind: FDivergence,
    pub js: JsConjugate,
}

impl From<FDivergence> for FDivergenceSpec {
    fn from(kind: FDivergence) -> Self {
        FDivergenceSpec {
            kind,
            js: JsConjugate::default(),
        }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl FDivergenceSpec {
    pub fn new(kind: FDivergence) -> Self {
        kind.into()
    }

    /// `g_f(v)` on plain numbers.
    pub fn gf_scalar(&self, v: f64) -> f64 {
        match self.kind {
            FDivergence::KL => v,
            FDivergence::ReverseKL => -(-v).exp(),
            FDivergence::JS => LN_2 - softplus(-v),
        }
    }

    /// `f*(t)`; errors outside the conjugate's domain.
    pub fn fstar_scalar(&self, t: f64) -> Result<f64> {
        match (self.kind, self.js) {
            (FDivergence::KL, _) => Ok((t - 1.0).exp()),
            (FDivergence::ReverseKL, _) => {
                if t < 0.0 {
                    Ok(-1.0 - (-t).ln())
                } else {
                    Err(Error::domain("fstar", format!("reverse-KL conjugate needs t < 0, got {t}")))
                }
            }
            (FDivergence::JS, JsConjugate::Shifted) => Ok(softplus(t) - LN_2),
            (FDivergence::JS, JsConjugate::Classical) => {
                if t < LN_2 {
                    Ok(-(2.0 - t.exp()).ln())
                } else {
                    Err(Error::domain("fstar", format!("JS conjugate needs t < log 2, got {t}")))
                }
            }
        }
    }

    /// `sup |f*'|` and `sup |f*|` over `[−b, b]`, when that interval lies in
    /// the conjugate's domain.
    pub fn bounds(&self, b: f64) -> Option<(f64, f64)> {
        match (self.kind, self.js) {
            (FDivergence::KL, _) => Some(((b - 1.0).exp(), (b - 1.0).exp())),
            (FDivergence::ReverseKL, _) => None,
            (FDivergence::JS, JsConjugate::Shifted) => {
                let a1 = 1.0 / (1.0 + (-b).exp());
                let a2 = (softplus(b) - LN_2).max(LN_2 - softplus(-b));
                Some((a1, a2))
            }
            (FDivergence::JS, JsConjugate::Classical) => {
                if b < LN_2 {
                    let a1 = b.exp() / (2.0 - b.exp());
                    let a2 = (-(2.0 - b.exp()).ln()).abs().max((-(2.0 - (-b).exp()).ln()).abs());
                    Some((a1, a2))
                } else {
                    None
                }
            }
        }
    }

    pub fn gf<'t>(&self, v: Var<'t>) -> Result<Var<'t>> {
        match self.kind {
            FDivergence::KL => Ok(v),
            FDivergence::ReverseKL => v.neg()?.exp()?.neg(),
            FDivergence::JS => v.neg()?.softplus()?.affine(-1.0, LN_2),
        }
    }

    /// `f*` applied to a node; callers must keep inputs in the domain.
    pub fn fstar<'t>(&self, t: Var<'t>) -> Result<Var<'t>> {
        match (self.kind, self.js) {
            (FDivergence::KL, _) => t.shift(-1.0)?.exp(),
            (FDivergence::ReverseKL, _) => t.neg()?.log()?.affine(-1.0, -1.0),
            (FDivergence::JS, JsConjugate::Shifted) => t.softplus()?.shift(-LN_2),
            (FDivergence::JS, JsConjugate::Classical) => t.exp()?.affine(-1.0, 2.0)?.log()?.neg(),
        }
    }

    /// `f*(g_f(v))` in a form that stays finite for every real `v`.
    pub fn fstar_of_gf<'t>(&self, v: Var<'t>) -> Result<Var<'t>> {
        match (self.kind, self.js) {
            (FDivergence::KL, _) => v.shift(-1.0)?.exp(),
            (FDivergence::ReverseKL, _) => v.shift(-1.0),
            (FDivergence::JS, JsConjugate::Shifted) => self.fstar(self.gf(v)?),
            // −log(2 − 2σ(v)) = softplus(v) − log 2
            (FDivergence::JS, JsConjugate::Classical) => v.softplus()?.shift(-LN_2),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};

    fn spec(kind: FDivergence) -> FDivergenceSpec {
        kind.into()
    }

    #[test]
    fn conjugate_examples() {
        assert_eq!(spec(FDivergence::JS).fstar_scalar(0.0).unwrap(), 0.0);
        assert_eq!(spec(FDivergence::KL).fstar_scalar(1.0).unwrap(), 1.0);
        let rkl = spec(FDivergence::ReverseKL);
        assert!((rkl.fstar_scalar(rkl.gf_scalar(0.0)).unwrap() + 1.0).abs() < 1e-15);
        assert!(rkl.fstar_scalar(0.5).is_err());
        let classical = FDivergenceSpec {
            kind: FDivergence::JS,
            js: JsConjugate::Classical,
        };
        assert!(classical.fstar_scalar(1.0).is_err());
    }

    /// `sup_u (u·t − f(u))` by golden-section search in `log u`.
    fn numeric_conjugate(f: impl Fn(f64) -> f64, t: f64) -> f64 {
        let obj = |s: f64| {
            let u = s.exp();
            u * t - f(u)
        };
        let (mut lo, mut hi) = (-30.0f64, 10.0f64);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..300 {
            let a = hi - g * (hi - lo);
            let b = lo + g * (hi - lo);
            if obj(a) > obj(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        obj(0.5 * (lo + hi))
    }

    #[test]
    fn closed_forms_match_numeric_conjugation() {
        let kl = |u: f64| u * u.ln();
        let rkl = |u: f64| -u.ln();
        let js = |u: f64| u * u.ln() - (u + 1.0) * ((u + 1.0) / 2.0).ln();
        let classical = FDivergenceSpec {
            kind: FDivergence::JS,
            js: JsConjugate::Classical,
        };
        for v in [-2.0, -0.5, 0.0, 0.7, 1.5] {
            let t = spec(FDivergence::KL).gf_scalar(v);
            let want = numeric_conjugate(kl, t);
            assert!((spec(FDivergence::KL).fstar_scalar(t).unwrap() - want).abs() < 1e-8);

            let r = spec(FDivergence::ReverseKL);
            let t = r.gf_scalar(v);
            let want = numeric_conjugate(rkl, t);
            assert!((r.fstar_scalar(t).unwrap() - want).abs() < 1e-8);
            // composed closed form v − 1
            assert!((want - (v - 1.0)).abs() < 1e-8);

            let t = classical.gf_scalar(v);
            let want = numeric_conjugate(js, t);
            assert!((classical.fstar_scalar(t).unwrap() - want).abs() < 1e-8);
        }
    }

    #[test]
    fn composed_forms_agree_with_composition() {
        let tape = Tape::no_grad();
        let v = tape.constant(Tensor::vector(vec![-3.0, -0.2, 0.0, 0.4, 2.5]));
        for kind in FDivergence::ALL {
            for js in [JsConjugate::Shifted, JsConjugate::Classical] {
                let s = FDivergenceSpec { kind, js };
                let direct = s.fstar_of_gf(v).unwrap().value();
                for (i, &x) in v.value().data().iter().enumerate() {
                    let want = s.fstar_scalar(s.gf_scalar(x)).unwrap();
                    assert!((direct.data()[i] - want).abs() < 1e-12, "{kind:?} {js:?} {x}");
                }
            }
        }
    }

    #[test]
    fn composition_is_finite_for_extreme_outputs() {
        let tape = Tape::no_grad();
        let v = tape.constant(Tensor::vector(vec![-600.0, 600.0]));
        for kind in [FDivergence::ReverseKL, FDivergence::JS] {
            assert!(spec(kind).fstar_of_gf(v).is_ok());
        }
    }

    #[test]
    fn js_bounds() {
        let (a1, a2) = spec(FDivergence::JS).bounds(3.0).unwrap();
        assert!(a1 <= 1.0);
        assert!(a2 <= ((1.0 + 3f64.exp()) / 2.0).ln() + 1e-12);
        assert!(a2 <= 3.0);
        assert!(spec(FDivergence::ReverseKL).bounds(1.0).is_none());
    }
}
