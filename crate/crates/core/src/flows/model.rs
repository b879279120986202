use rand::Rng;

use super::coupling::{CouplingBlock, DEFAULT_CLAMP};
use super::iresnet::IResNetBlock;
use super::subnet::{Activation, InitMode};
use crate::autodiff::{Param, Parameters, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub enum Block {
    Coupling(CouplingBlock),
    IResNet(IResNetBlock),
    /// Fixed coordinate reversal.
    Reverse { dim: usize },
}

impl Block {
    pub fn dim(&self) -> usize {
        match self {
            Block::Coupling(b) => b.dim,
            Block::IResNet(b) => b.dim(),
            Block::Reverse { dim } => *dim,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Block::Coupling(_) => "coupling",
            Block::IResNet(_) => "iresnet",
            Block::Reverse { .. } => "reverse",
        }
    }

    /// Output and per-row log-determinant. `None` when the block is volume
    /// preserving.
    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<(Var<'t>, Option<Var<'t>>)> {
        match self {
            Block::Coupling(b) => b.forward(tape, x).map(|(o, l)| (o, Some(l))),
            Block::IResNet(b) => b.forward(tape, x).map(|(o, l)| (o, Some(l))),
            Block::Reverse { dim } => Ok((reverse_cols(x, *dim)?, None)),
        }
    }

    pub fn inverse<'t>(&self, tape: &'t Tape, o: Var<'t>) -> Result<Var<'t>> {
        match self {
            Block::Coupling(b) => b.inverse(tape, o),
            Block::IResNet(b) => b.inverse(tape, o),
            Block::Reverse { dim } => reverse_cols(o, *dim),
        }
    }
}

fn reverse_cols(x: Var<'_>, dim: usize) -> Result<Var<'_>> {
    let shape = x.shape();
    if shape.len() != 2 || shape[1] != dim {
        return Err(Error::shape("reverse", &shape, &[0, dim]));
    }
    let cols = (0..dim)
        .rev()
        .map(|j| x.slice_cols(j, j + 1))
        .collect::<Result<Vec<_>>>()?;
    Var::concat_cols(&cols)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArchKind {
    Coupling,
    IResNet,
}

impl ArchKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "coupling" => Some(ArchKind::Coupling),
            "iresnet" => Some(ArchKind::IResNet),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Coupling => "coupling",
            ArchKind::IResNet => "iresnet",
        }
    }
}

/// Everything needed to build a fresh [`FlowModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub kind: ArchKind,
    pub blocks: usize,
    pub hidden: usize,
    pub activation: Activation,
    pub clamp: f64,
    /// Coupling split `d1`; `None` means `floor(d/2)`.
    pub split: Option<usize>,
    /// Spectral bound `s` for iResNet weights.
    pub spectral_bound: f64,
    pub init: InitMode,
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec {
            kind: ArchKind::Coupling,
            blocks: 4,
            hidden: 128,
            activation: Activation::Tanh,
            clamp: DEFAULT_CLAMP,
            split: None,
            spectral_bound: 0.7,
            init: InitMode::Identity,
        }
    }
}

/// Per-batch flow evaluation: full output, its split, and log-determinants.
#[derive(Clone, Copy, Debug)]
pub struct FlowOutput<'t> {
    pub out: Var<'t>,
    pub y: Var<'t>,
    pub z: Var<'t>,
    pub logdet: Var<'t>,
}

/// Invertible map `T = (T_y, T_z)` on `R^{d_y + d_z}`; the first `d_y`
/// output coordinates are `T_y`.
#[derive(Clone, Debug)]
pub struct FlowModel {
    pub blocks: Vec<Block>,
    pub d_y: usize,
    pub d_z: usize,
}

impl FlowModel {
    pub fn from_blocks(d_y: usize, d_z: usize, blocks: Vec<Block>) -> Result<Self> {
        let d = d_y + d_z;
        if d == 0 {
            return Err(Error::Config("flow dimension must be positive".into()));
        }
        if let Some(b) = blocks.iter().find(|b| b.dim() != d) {
            return Err(Error::Config(format!(
                "{} block of width {} in a flow of width {d}",
                b.kind(),
                b.dim()
            )));
        }
        Ok(FlowModel { blocks, d_y, d_z })
    }

    pub fn build<R: Rng + ?Sized>(spec: &ArchSpec, d_y: usize, d_z: usize, rng: &mut R) -> Result<Self> {
        let d = d_y + d_z;
        let mut blocks = Vec::with_capacity(2 * spec.blocks);
        for i in 0..spec.blocks {
            if i > 0 {
                blocks.push(Block::Reverse { dim: d });
            }
            blocks.push(match spec.kind {
                ArchKind::Coupling => Block::Coupling(CouplingBlock::new(
                    d,
                    spec.split.unwrap_or(d / 2),
                    spec.hidden,
                    spec.activation,
                    spec.clamp,
                    spec.init,
                    rng,
                )?),
                ArchKind::IResNet => {
                    Block::IResNet(IResNetBlock::new(d, spec.hidden, spec.spectral_bound, rng)?)
                }
            });
        }
        // Keep the net coordinate permutation trivial, so an identity-initialised
        // flow is the identity map.
        if spec.blocks % 2 == 0 {
            blocks.push(Block::Reverse { dim: d });
        }
        Self::from_blocks(d_y, d_z, blocks)
    }

    pub fn dim(&self) -> usize {
        self.d_y + self.d_z
    }

    fn check_input(&self, x: Var<'_>) -> Result<usize> {
        let shape = x.shape();
        match shape.as_slice() {
            [n, w] if *w == self.dim() => Ok(*n),
            _ => Err(Error::shape("flow", &shape, &[0, self.dim()])),
        }
    }

    /// Apply the blocks in order; the log-determinant is the running sum of
    /// the per-block terms.
    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<FlowOutput<'t>> {
        let n = self.check_input(x)?;
        let mut h = x;
        let mut logdet: Option<Var<'t>> = None;
        for block in &self.blocks {
            let (out, ld) = block.forward(tape, h)?;
            h = out;
            if let Some(ld) = ld {
                logdet = Some(match logdet {
                    None => ld,
                    Some(acc) => acc.add(ld)?,
                });
            }
        }
        let logdet = match logdet {
            Some(l) => l,
            None => tape.constant(Tensor::zeros([n])),
        };
        Ok(FlowOutput {
            out: h,
            y: h.slice_cols(0, self.d_y)?,
            z: h.slice_cols(self.d_y, self.dim())?,
            logdet,
        })
    }

    /// `T⁻¹` of a full output row batch.
    pub fn inverse_joint<'t>(&self, tape: &'t Tape, o: Var<'t>) -> Result<Var<'t>> {
        self.check_input(o)?;
        let mut h = o;
        for block in self.blocks.iter().rev() {
            h = block.inverse(tape, h)?;
        }
        Ok(h)
    }

    /// `T⁻¹(y, z)`.
    pub fn inverse<'t>(&self, tape: &'t Tape, y: Var<'t>, z: Var<'t>) -> Result<Var<'t>> {
        let (ys, zs) = (y.shape(), z.shape());
        if ys.len() != 2 || zs.len() != 2 || ys[1] != self.d_y || zs[1] != self.d_z || ys[0] != zs[0] {
            return Err(Error::shape("flow inverse", &ys, &zs));
        }
        let joint = if self.d_y == 0 {
            z
        } else if self.d_z == 0 {
            y
        } else {
            Var::concat_cols(&[y, z])?
        };
        self.inverse_joint(tape, joint)
    }

    /// Untracked forward: `(y, z, logdet)`.
    pub fn forward_values(&self, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let tape = Tape::no_grad();
        let out = self.forward(&tape, tape.constant(x.clone()))?;
        Ok((
            (*out.y.value()).clone(),
            (*out.z.value()).clone(),
            (*out.logdet.value()).clone(),
        ))
    }

    /// Untracked `T⁻¹(y, z)`.
    pub fn inverse_values(&self, y: &Tensor, z: &Tensor) -> Result<Tensor> {
        let tape = Tape::no_grad();
        let x = self.inverse(&tape, tape.constant(y.clone()), tape.constant(z.clone()))?;
        Ok((*x.value()).clone())
    }

    /// Untracked `T⁻¹` of full output rows.
    pub fn inverse_joint_values(&self, o: &Tensor) -> Result<Tensor> {
        let tape = Tape::no_grad();
        let x = self.inverse_joint(&tape, tape.constant(o.clone()))?;
        Ok((*x.value()).clone())
    }

    /// Re-impose the spectral bound on every iResNet block.
    pub fn project(&mut self) -> Result<()> {
        for block in &mut self.blocks {
            if let Block::IResNet(b) = block {
                b.project()?;
            }
        }
        Ok(())
    }
}

impl Parameters for FlowModel {
    fn params(&self) -> Vec<&Param> {
        self.blocks
            .iter()
            .flat_map(|b| match b {
                Block::Coupling(c) => c.params(),
                Block::IResNet(r) => r.params(),
                Block::Reverse { .. } => vec![],
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.blocks
            .iter_mut()
            .flat_map(|b| match b {
                Block::Coupling(c) => c.params_mut(),
                Block::IResNet(r) => r.params_mut(),
                Block::Reverse { .. } => vec![],
            })
            .collect()
    }
}
