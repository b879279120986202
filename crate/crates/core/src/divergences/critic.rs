use rand::Rng;

use crate::autodiff::{Param, Parameters, Tape, Var};
use crate::error::Result;
use crate::flows::Linear;

pub const CRITIC_WIDTH: usize = 64;

/// Scalar-valued critic `V_ω`: two relu hidden layers and a linear read-out.
#[derive(Clone, Debug)]
pub struct CriticNet {
    pub layers: [Linear; 3],
}

impl CriticNet {
    pub fn new<R: Rng + ?Sized>(input: usize, rng: &mut R) -> Self {
        Self::with_width(input, CRITIC_WIDTH, rng)
    }

    /// He-initialised layers of the given width.
    pub fn with_width<R: Rng + ?Sized>(input: usize, width: usize, rng: &mut R) -> Self {
        CriticNet {
            layers: [
                Linear::new(input, width, (2.0 / input as f64).sqrt(), rng),
                Linear::new(width, width, (2.0 / width as f64).sqrt(), rng),
                Linear::new(width, 1, (1.0 / width as f64).sqrt(), rng),
            ],
        }
    }

    /// The constant-zero critic.
    pub fn zeros(input: usize) -> Self {
        let mut rng = <crate::rng::Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut c = Self::with_width(input, CRITIC_WIDTH, &mut rng);
        for p in c.params_mut() {
            p.value.data_mut().fill(0.0);
        }
        c
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    /// Critic values, one per row: shape `[n]`.
    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.layers[0].forward(tape, x)?.relu()?;
        let h = self.layers[1].forward(tape, h)?.relu()?;
        self.layers[2].forward(tape, h)?.sum_axis(1)
    }
}

impl Parameters for CriticNet {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }
}
