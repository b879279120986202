//! Plain-text model checkpoints.
//!
//! ```text
//! varinn-flow 1
//! dims 2 14
//! block coupling dim=16 split=8 clamp=2.0 act=tanh
//! param s1.hidden.weight 8x128 <values...>
//! block reverse dim=16
//! end
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::coupling::CouplingBlock;
use super::iresnet::IResNetBlock;
use super::model::{Block, FlowModel};
use super::subnet::{Activation, Linear, Subnet};
use crate::autodiff::{Param, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "varinn-flow";
const VERSION: u32 = 1;

fn write_param(out: &mut String, name: &str, t: &Tensor) {
    let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
    let _ = write!(out, "param {name} {}", dims.join("x"));
    for v in t.data() {
        let _ = write!(out, " {v:?}");
    }
    out.push('\n');
}

fn write_subnet(out: &mut String, prefix: &str, s: &Subnet) {
    write_param(out, &format!("{prefix}.hidden.weight"), &s.hidden.weight.value);
    write_param(out, &format!("{prefix}.hidden.bias"), &s.hidden.bias.value);
    write_param(out, &format!("{prefix}.output.weight"), &s.output.weight.value);
    write_param(out, &format!("{prefix}.output.bias"), &s.output.bias.value);
}

pub fn to_string(model: &FlowModel) -> String {
    let mut out = format!("{MAGIC} {VERSION}\ndims {} {}\n", model.d_y, model.d_z);
    for block in &model.blocks {
        match block {
            Block::Coupling(c) => {
                let _ = writeln!(
                    out,
                    "block coupling dim={} split={} clamp={:?} act={}",
                    c.dim,
                    c.split,
                    c.clamp,
                    c.s1.activation.name()
                );
                for (name, net) in [("s1", &c.s1), ("t1", &c.t1), ("s2", &c.s2), ("t2", &c.t2)] {
                    write_subnet(&mut out, name, net);
                }
            }
            Block::IResNet(r) => {
                let _ = writeln!(
                    out,
                    "block iresnet dim={} hidden={} bound={:?} tol={:?} max_iter={}",
                    r.dim(),
                    r.hidden(),
                    r.bound,
                    r.tol,
                    r.max_iter
                );
                write_param(&mut out, "w1", &r.w1.value);
                write_param(&mut out, "b1", &r.b1.value);
                write_param(&mut out, "w2", &r.w2.value);
                write_param(&mut out, "b2", &r.b2.value);
            }
            Block::Reverse { dim } => {
                let _ = writeln!(out, "block reverse dim={dim}");
            }
        }
    }
    out.push_str("end\n");
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct PendingBlock {
    kind: String,
    attrs: BTreeMap<String, String>,
    params: BTreeMap<String, Tensor>,
}

impl PendingBlock {
    fn attr<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.attrs
            .get(key)
            .ok_or_else(|| bad(format!("{} block missing `{key}`", self.kind)))?
            .parse()
            .map_err(|_| bad(format!("{} block has malformed `{key}`", self.kind)))
    }

    fn take(&mut self, name: &str) -> Result<Param> {
        self.params
            .remove(name)
            .map(Param::new)
            .ok_or_else(|| bad(format!("{} block missing parameter `{name}`", self.kind)))
    }

    fn subnet(&mut self, prefix: &str, activation: Activation) -> Result<Subnet> {
        Ok(Subnet {
            hidden: Linear {
                weight: self.take(&format!("{prefix}.hidden.weight"))?,
                bias: self.take(&format!("{prefix}.hidden.bias"))?,
            },
            output: Linear {
                weight: self.take(&format!("{prefix}.output.weight"))?,
                bias: self.take(&format!("{prefix}.output.bias"))?,
            },
            activation,
        })
    }

    fn finish(mut self) -> Result<Block> {
        let block = match self.kind.as_str() {
            "coupling" => {
                let act = self.attrs.get("act").cloned().unwrap_or_default();
                let activation =
                    Activation::parse(&act).ok_or_else(|| bad(format!("unknown activation `{act}`")))?;
                Block::Coupling(CouplingBlock {
                    dim: self.attr("dim")?,
                    split: self.attr("split")?,
                    clamp: self.attr("clamp")?,
                    s1: self.subnet("s1", activation)?,
                    t1: self.subnet("t1", activation)?,
                    s2: self.subnet("s2", activation)?,
                    t2: self.subnet("t2", activation)?,
                })
            }
            "iresnet" => Block::IResNet(IResNetBlock {
                bound: self.attr("bound")?,
                tol: self.attr("tol")?,
                max_iter: self.attr("max_iter")?,
                w1: self.take("w1")?,
                b1: self.take("b1")?,
                w2: self.take("w2")?,
                b2: self.take("b2")?,
            }),
            "reverse" => Block::Reverse {
                dim: self.attr("dim")?,
            },
            other => return Err(bad(format!("unknown block kind `{other}`"))),
        };
        if let Some(extra) = self.params.keys().next() {
            return Err(bad(format!("unexpected parameter `{extra}`")));
        }
        Ok(block)
    }
}

fn parse_param(rest: &str) -> Result<(String, Tensor)> {
    let mut it = rest.split_ascii_whitespace();
    let name = it.next().ok_or_else(|| bad("param without name"))?.to_string();
    let dims = it.next().ok_or_else(|| bad("param without shape"))?;
    let shape = if dims.is_empty() {
        vec![]
    } else {
        dims.split('x')
            .map(|d| d.parse::<usize>().map_err(|_| bad(format!("bad shape `{dims}`"))))
            .collect::<Result<Vec<_>>>()?
    };
    let data = it
        .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad value `{v}` in `{name}`"))))
        .collect::<Result<Vec<_>>>()?;
    let t = Tensor::new(shape, data).map_err(|e| bad(format!("{name}: {e}")))?;
    Ok((name, t))
}

pub fn from_str(text: &str) -> Result<FlowModel> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| bad("empty checkpoint"))?;
    match header.split_ascii_whitespace().collect::<Vec<_>>().as_slice() {
        [m, v] if *m == MAGIC && v.parse() == Ok(VERSION) => {}
        _ => return Err(bad(format!("unsupported header `{header}`"))),
    }
    let dims = lines.next().ok_or_else(|| bad("missing dims line"))?;
    let (d_y, d_z) = match dims.split_ascii_whitespace().collect::<Vec<_>>().as_slice() {
        ["dims", a, b] => (
            a.parse().map_err(|_| bad("bad d_y"))?,
            b.parse().map_err(|_| bad("bad d_z"))?,
        ),
        _ => return Err(bad(format!("malformed dims line `{dims}`"))),
    };
    let mut blocks = Vec::new();
    let mut pending: Option<PendingBlock> = None;
    let mut ended = false;
    for line in lines {
        let line = line.trim();
        if line == "end" {
            ended = true;
            break;
        }
        let (tag, rest) = line.split_once(' ').unwrap_or((line, ""));
        match tag {
            "block" => {
                if let Some(p) = pending.take() {
                    blocks.push(p.finish()?);
                }
                let mut it = rest.split_ascii_whitespace();
                let kind = it.next().ok_or_else(|| bad("block without kind"))?.to_string();
                let attrs = it
                    .map(|kv| {
                        kv.split_once('=')
                            .map(|(k, v)| (k.to_string(), v.to_string()))
                            .ok_or_else(|| bad(format!("malformed attribute `{kv}`")))
                    })
                    .collect::<Result<_>>()?;
                pending = Some(PendingBlock {
                    kind,
                    attrs,
                    params: BTreeMap::new(),
                });
            }
            "param" => {
                let p = pending.as_mut().ok_or_else(|| bad("param outside a block"))?;
                let (name, t) = parse_param(rest)?;
                p.params.insert(name, t);
            }
            other => return Err(bad(format!("unknown line tag `{other}`"))),
        }
    }
    if !ended {
        return Err(bad("truncated checkpoint (no `end`)"));
    }
    if let Some(p) = pending.take() {
        blocks.push(p.finish()?);
    }
    FlowModel::from_blocks(d_y, d_z, blocks)
}

pub fn save(model: &FlowModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_string(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<FlowModel> {
    from_str(&std::fs::read_to_string(path)?)
}
