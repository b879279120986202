use rand::Rng;

use crate::autodiff::{Param, Parameters, Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Result<Var<'t>> {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.relu(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// How freshly built networks draw their weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InitMode {
    /// `N(0, 1/fan_in)` weights, zero biases, zero output layer for coupling
    /// subnets so a new flow is the identity.
    #[default]
    Identity,
    /// Every weight `N(0, 1)`, zero biases.
    StandardNormal,
    /// `N(0, 1/fan_in)` everywhere, including the output layer.
    Random,
}

impl InitMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(InitMode::Identity),
            "standard_normal" => Some(InitMode::StandardNormal),
            "random" => Some(InitMode::Random),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InitMode::Identity => "identity",
            InitMode::StandardNormal => "standard_normal",
            InitMode::Random => "random",
        }
    }
}

/// Fully connected layer; weights stored `in × out` so `y = x·W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, std: f64, rng: &mut R) -> Self {
        let weight = if std == 0.0 {
            Tensor::zeros([fan_in, fan_out])
        } else {
            Tensor::randn([fan_in, fan_out], std, rng)
        };
        Linear {
            weight: Param::new(weight),
            bias: Param::new(Tensor::zeros([fan_out])),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(tape.param(&self.weight))?
            .add_row(tape.param(&self.bias))
    }
}

/// Two-layer perceptron `in → hidden → out`.
#[derive(Clone, Debug)]
pub struct Subnet {
    pub hidden: Linear,
    pub output: Linear,
    pub activation: Activation,
}

impl Subnet {
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        output: usize,
        activation: Activation,
        init: InitMode,
        rng: &mut R,
    ) -> Self {
        let (std_h, std_o) = match init {
            InitMode::Identity => ((1.0 / input as f64).sqrt(), 0.0),
            InitMode::StandardNormal => (1.0, 1.0),
            InitMode::Random => ((1.0 / input as f64).sqrt(), (1.0 / hidden as f64).sqrt()),
        };
        Subnet {
            hidden: Linear::new(input, hidden, std_h, rng),
            output: Linear::new(hidden, output, std_o, rng),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.output.out_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden.out_dim()
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.activation.apply(self.hidden.forward(tape, x)?)?;
        self.output.forward(tape, h)
    }
}

impl Parameters for Subnet {
    fn params(&self) -> Vec<&Param> {
        vec![
            &self.hidden.weight,
            &self.hidden.bias,
            &self.output.weight,
            &self.output.bias,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.output.weight,
            &mut self.output.bias,
        ]
    }
}
