//! Invertible blocks and their composition into a flow `T = (T_y, T_z)`.

pub mod checkpoint;
mod coupling;
mod iresnet;
mod model;
mod padding;
mod subnet;

pub use coupling::{CouplingBlock, DEFAULT_CLAMP};
pub use iresnet::{
    spectral_norm, spectral_project, IResNetBlock, InverseTrace, MAX_DENSE_LOGDET_DIM,
};
pub use model::{ArchKind, ArchSpec, Block, FlowModel, FlowOutput};
pub use padding::{PadMode, PaddingSpec};
pub use subnet::{Activation, InitMode, Linear, Subnet};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check_module, Parameters, Tape, Tensor};
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// log|det| of the central-difference Jacobian of `f` at `x`.
    fn fd_logdet(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> f64 {
        let d = x.len();
        let h = 1e-6;
        let mut jac = DMatrix::zeros(d, d);
        let mut xp = x.to_vec();
        for j in 0..d {
            xp[j] = x[j] + h;
            let fp = f(&xp);
            xp[j] = x[j] - h;
            let fm = f(&xp);
            xp[j] = x[j];
            for i in 0..d {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        jac.determinant().abs().ln()
    }

    fn randomize<P: Parameters>(m: &mut P, std: f64, seed: u64) {
        let mut r = rng(seed);
        for p in m.params_mut() {
            p.value = Tensor::randn(p.value.shape(), std, &mut r);
        }
    }

    fn coupling(d: usize, seed: u64) -> CouplingBlock {
        let mut b = CouplingBlock::new(d, d / 2, 8, Activation::Tanh, 2.0, InitMode::Random, &mut rng(seed))
            .unwrap();
        randomize(&mut b, 0.5, seed + 1);
        b
    }

    #[test]
    fn zero_coupling_is_identity() {
        let mut b = coupling(4, 1);
        for p in b.params_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
        let u = Tensor::randn([5, 4], 1.0, &mut rng(2));
        let tape = Tape::no_grad();
        let (o, ld) = b.forward(&tape, tape.constant(u.clone())).unwrap();
        assert_eq!(*o.value(), u);
        assert!(ld.value().data().iter().all(|&v| v == 0.0));
        let back = b.inverse(&tape, tape.constant(u.clone())).unwrap();
        assert_eq!(*back.value(), u);
    }

    #[test]
    fn coupling_hand_example() {
        let mut b = CouplingBlock::new(2, 1, 3, Activation::Tanh, 2.0, InitMode::Identity, &mut rng(0))
            .unwrap();
        for p in b.params_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
        // ŝ1 = c·tanh(s/c) = log 2 from the output bias of s1 alone.
        let raw = 2.0 * (std::f64::consts::LN_2 / 2.0).atanh();
        b.s1.output.bias.value = Tensor::vector(vec![raw]);
        let tape = Tape::no_grad();
        let u = Tensor::from_rows(&[[1.0, 1.0]]).unwrap();
        let (o, ld) = b.forward(&tape, tape.constant(u.clone())).unwrap();
        let o = o.value();
        assert!((o.data()[0] - 2.0).abs() < 1e-12);
        assert_eq!(o.data()[1], 1.0);
        assert!((ld.item() - std::f64::consts::LN_2).abs() < 1e-12);
        let back = b.inverse(&tape, tape.constant((*o).clone())).unwrap();
        assert!(back.value().max_abs_diff(&u) < 1e-12);
    }

    #[test]
    fn coupling_round_trip() {
        for seed in 0..100 {
            let b = coupling(2 + (seed as usize % 7), seed);
            let d = b.dim;
            let u = Tensor::randn([4, d], 1.5, &mut rng(1000 + seed));
            let tape = Tape::no_grad();
            let (o, _) = b.forward(&tape, tape.constant(u.clone())).unwrap();
            let back = b.inverse(&tape, o).unwrap();
            assert!(back.value().max_abs_diff(&u) < 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn coupling_scales_are_clamped() {
        let mut b = coupling(4, 9);
        randomize(&mut b, 20.0, 10);
        let u = Tensor::randn([16, 4], 3.0, &mut rng(11));
        let tape = Tape::no_grad();
        let (_, ld) = b.forward(&tape, tape.constant(u)).unwrap();
        // Each of the 4 coordinates is scaled once, by at most e^{±c}.
        assert!(ld.value().data().iter().all(|v| v.abs() <= 4.0 * 2.0 + 1e-12));
    }

    #[test]
    fn coupling_logdet_matches_jacobian() {
        let b = coupling(6, 3);
        let x = Tensor::randn([1, 6], 1.0, &mut rng(4));
        let f = |v: &[f64]| {
            let tape = Tape::no_grad();
            let (o, _) = b
                .forward(&tape, tape.constant(Tensor::new([1, 6], v.to_vec()).unwrap()))
                .unwrap();
            o.value().data().to_vec()
        };
        let tape = Tape::no_grad();
        let (_, ld) = b.forward(&tape, tape.constant(x.clone())).unwrap();
        assert!((ld.item() - fd_logdet(f, x.data())).abs() < 1e-5);
    }

    fn iresnet(d: usize, hidden: usize, s: f64, seed: u64) -> IResNetBlock {
        let mut b = IResNetBlock::new(d, hidden, s, &mut rng(seed)).unwrap();
        randomize(&mut b, 1.0, seed + 7);
        b.project().unwrap();
        b
    }

    #[test]
    fn zero_weight_iresnet_shifts() {
        let mut b = iresnet(3, 5, 0.5, 1);
        b.w1.value = Tensor::zeros([5, 3]);
        b.w2.value = Tensor::zeros([3, 5]);
        b.b2.value = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let x = Tensor::randn([2, 3], 1.0, &mut rng(2));
        let tape = Tape::no_grad();
        let (o, ld) = b.forward(&tape, tape.constant(x.clone())).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(o.value().at(i, j), x.at(i, j) + b.b2.value.data()[j]);
            }
        }
        assert!(ld.value().data().iter().all(|&v| v.abs() < 1e-15));
        let (back, trace) = b.inverse_traced(&tape, o).unwrap();
        assert!(back.value().max_abs_diff(&x) < 1e-12);
        // One update moves to o − b2, the next confirms it.
        assert!(trace.iterations() <= 2);
    }

    #[test]
    fn iresnet_logdet_matches_jacobian_and_bounds() {
        let b = iresnet(4, 6, 0.7, 5);
        for k in 0..5 {
            let x = Tensor::randn([1, 4], 1.0, &mut rng(50 + k));
            let f = |v: &[f64]| {
                let tape = Tape::no_grad();
                let (o, _) = b
                    .forward(&tape, tape.constant(Tensor::new([1, 4], v.to_vec()).unwrap()))
                    .unwrap();
                o.value().data().to_vec()
            };
            let tape = Tape::no_grad();
            let (_, ld) = b.forward(&tape, tape.constant(x.clone())).unwrap();
            let ld = ld.item();
            assert!((ld - fd_logdet(f, x.data())).abs() < 1e-5);
            assert!(ld >= 4.0 * 0.51f64.ln() && ld <= 4.0 * 1.49f64.ln());
        }
    }

    #[test]
    fn iresnet_inverse_converges_geometrically() {
        let b = iresnet(5, 8, 0.5, 8);
        let x = Tensor::randn([6, 5], 1.0, &mut rng(9));
        let tape = Tape::no_grad();
        let (o, _) = b.forward(&tape, tape.constant(x.clone())).unwrap();
        let (back, trace) = b.inverse_traced(&tape, o).unwrap();
        assert!(back.value().max_abs_diff(&x) < 1e-9);
        // residual check ‖x + F(x) − o‖∞
        let (again, _) = b.forward(&tape, back).unwrap();
        assert!(again.value().max_abs_diff(&o.value()) < 1e-9);
        let u0 = trace.updates[0];
        for (k, &u) in trace.updates.iter().enumerate().skip(1) {
            assert!(u <= 2.0 * 0.25f64.powi(k as i32) * u0 + 1e-12, "iteration {k}");
        }
    }

    #[test]
    fn iresnet_is_contractive() {
        for seed in 0..20 {
            let b = iresnet(4, 7, 0.6, 100 + seed);
            let tape = Tape::no_grad();
            let x = Tensor::randn([1, 4], 2.0, &mut rng(seed));
            let y = Tensor::randn([1, 4], 2.0, &mut rng(seed + 500));
            let (fx, _) = b.forward(&tape, tape.constant(x.clone())).unwrap();
            let (fy, _) = b.forward(&tape, tape.constant(y.clone())).unwrap();
            // F(x) − F(y) = (T(x) − x) − (T(y) − y)
            let norm = |v: Vec<f64>| v.iter().map(|a| a * a).sum::<f64>().sqrt();
            let dres: Vec<f64> = (0..4)
                .map(|j| (fx.value().data()[j] - x.data()[j]) - (fy.value().data()[j] - y.data()[j]))
                .collect();
            let dx: Vec<f64> = (0..4).map(|j| x.data()[j] - y.data()[j]).collect();
            assert!(norm(dres) <= 0.36 * norm(dx) + 1e-9);
        }
    }

    #[test]
    fn spectral_projection_examples() {
        let w = Tensor::from_rows(&[[2.0, 0.0], [0.0, 1.0]]).unwrap();
        let p = spectral_project(&w, 0.5).unwrap();
        assert!(p.max_abs_diff(&w.map(|v| v * 0.25)) < 1e-12);
        assert!((spectral_norm(&p).unwrap() - 0.5).abs() < 1e-9);

        let small = Tensor::from_rows(&[[0.3, 0.0], [0.0, 0.1]]).unwrap();
        assert_eq!(spectral_project(&small, 0.5).unwrap(), small);

        let z = Tensor::zeros([3, 2]);
        assert_eq!(spectral_project(&z, 0.5).unwrap(), z);
        assert!(spectral_project(&w, 1.5).is_err());

        let r = Tensor::randn([7, 5], 3.0, &mut rng(3));
        let p = spectral_project(&r, 0.4).unwrap();
        assert!(spectral_norm(&p).unwrap() <= 0.4 + 1e-6);
        // Power iteration agrees with an SVD.
        let m = DMatrix::from_row_slice(7, 5, r.data());
        let sv = m.singular_values().max();
        assert!((spectral_norm(&r).unwrap() - sv).abs() < 1e-8 * sv);
    }

    fn mixed_model(d: usize, seed: u64) -> FlowModel {
        let blocks = vec![
            Block::Coupling(coupling(d, seed)),
            Block::Reverse { dim: d },
            Block::IResNet(iresnet(d, 6, 0.6, seed + 3)),
            Block::Coupling(coupling(d, seed + 5)),
        ];
        FlowModel::from_blocks(d / 2, d - d / 2, blocks).unwrap()
    }

    #[test]
    fn empty_and_identity_models() {
        let m = FlowModel::from_blocks(1, 2, vec![]).unwrap();
        let x = Tensor::randn([3, 3], 1.0, &mut rng(1));
        let (y, z, ld) = m.forward_values(&x).unwrap();
        assert_eq!(y, x.slice_cols(0, 1).unwrap());
        assert_eq!(z, x.slice_cols(1, 3).unwrap());
        assert!(ld.data().iter().all(|&v| v == 0.0));
        assert_eq!(m.inverse_values(&y, &z).unwrap(), x);

        let spec = ArchSpec {
            blocks: 2,
            hidden: 4,
            ..ArchSpec::default()
        };
        let id = FlowModel::build(&spec, 2, 2, &mut rng(2)).unwrap();
        let x = Tensor::randn([3, 4], 1.0, &mut rng(3));
        let (y, z, ld) = id.forward_values(&x).unwrap();
        assert_eq!(Tensor::concat_cols(&[&y, &z]).unwrap(), x);
        assert!(ld.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn model_logdet_is_sum_of_blocks() {
        let m = mixed_model(4, 11);
        let x = Tensor::randn([3, 4], 1.0, &mut rng(12));
        let tape = Tape::no_grad();
        let out = m.forward(&tape, tape.constant(x.clone())).unwrap();
        let mut h = tape.constant(x);
        let mut total: Option<Vec<f64>> = None;
        for b in &m.blocks {
            let (o, ld) = b.forward(&tape, h).unwrap();
            h = o;
            if let Some(ld) = ld {
                let ld = ld.value().data().to_vec();
                total = Some(match total {
                    None => ld,
                    Some(t) => t.iter().zip(&ld).map(|(a, b)| a + b).collect(),
                });
            }
        }
        assert_eq!(out.logdet.value().data(), total.unwrap().as_slice());
    }

    #[test]
    fn model_round_trip_and_shapes() {
        let m = mixed_model(6, 21);
        let x = Tensor::randn([10, 6], 1.0, &mut rng(22));
        let (y, z, _) = m.forward_values(&x).unwrap();
        assert_eq!(y.shape(), &[10, 3]);
        let back = m.inverse_values(&y, &z).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-7);

        let zs = Tensor::randn([7, 3], 1.0, &mut rng(23));
        let ys = Tensor::zeros([7, 3]);
        assert_eq!(m.inverse_values(&ys, &zs).unwrap().shape(), &[7, 6]);
        assert!(m.inverse_values(&Tensor::zeros([7, 2]), &zs).is_err());
    }

    #[test]
    fn block_gradients_pass_grad_check() {
        let x = Tensor::randn([3, 4], 1.0, &mut rng(31));
        let mut c = coupling(4, 30);
        let e = grad_check_module(
            &mut c,
            |b, tape| {
                let (o, ld) = b.forward(tape, tape.constant(x.clone()))?;
                o.square()?.mean()?.add(ld.mean()?)
            },
            1e-5,
        )
        .unwrap();
        assert!(e < 1e-4, "coupling {e}");

        let mut r = iresnet(4, 5, 0.6, 32);
        let e = grad_check_module(
            &mut r,
            |b, tape| {
                let (o, ld) = b.forward(tape, tape.constant(x.clone()))?;
                o.square()?.mean()?.add(ld.mean()?)
            },
            1e-5,
        )
        .unwrap();
        assert!(e < 1e-4, "iresnet {e}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = mixed_model(4, 40);
        let text = checkpoint::to_string(&m);
        let back = checkpoint::from_str(&text).unwrap();
        assert_eq!(checkpoint::to_string(&back), text);
        let x = Tensor::randn([5, 4], 1.0, &mut rng(41));
        let (y1, z1, l1) = m.forward_values(&x).unwrap();
        let (y2, z2, l2) = back.forward_values(&x).unwrap();
        assert_eq!((y1, z1, l1), (y2, z2, l2));

        assert!(checkpoint::from_str("garbage").is_err());
        let truncated = &text[..text.len() - 4];
        assert!(checkpoint::from_str(truncated).is_err());
    }
}
