//! Experiment harness: one subcommand per case study, each expanded into a
//! matrix of independent cells whose results stream into one CSV file.

pub mod checks;
mod cells;
mod config;
mod rows;

use std::io::Write;
use std::path::PathBuf;
use std::sync::mpsc;

pub use cells::{
    ik_eval, mean_coordinate_w1, mean_std, Cell, CellOutcome, OracleCritic, Task, IK_REFERENCE_TARGET,
    SUPPORT_MMD_GAMMA,
};
pub use config::{parse_override, parse_settings, ExperimentConfig, Setting, Subcommand, Sweep, OUTPUT_ROOT_ENV, SECTIONS};
pub use rows::{read_rows, to_csv_string, ResultRow, ResultSink, Status, HEADER};

use crate::divergences::Prior;
use crate::error::{Error, Result};
use crate::flows::ArchSpec;
use crate::training::{LossKind, TrainConfig};

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

fn run_id(cfg: &ExperimentConfig, parts: &[(&str, String)]) -> String {
    let body: Vec<String> = parts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("{}:{}", cfg.experiment.name(), body.join(","))
}

fn prior_label(p: Prior) -> String {
    match p {
        Prior::Gaussian => "gaussian".into(),
        Prior::Uniform { a, b } => format!("uniform({a},{b})"),
    }
}

struct CellBuilder<'a> {
    cfg: &'a ExperimentConfig,
    arch: ArchSpec,
    d_z: usize,
    train: TrainConfig,
}

impl CellBuilder<'_> {
    fn cell(self, parts: &[(&str, String)], seed: Option<u64>, task: Task) -> Cell {
        let direction = match (&task, self.train.loss) {
            (Task::Ik, LossKind::Nll) => "-".to_string(),
            (Task::Ik, _) => self.train.direction.name().to_string(),
            _ => "-".to_string(),
        };
        let loss = match &task {
            Task::KlOracle { .. } => "kl".to_string(),
            Task::Selfcheck => "-".to_string(),
            _ => self.train.loss.name().to_string(),
        };
        let architecture = match &task {
            Task::KlOracle { critic: OracleCritic::Mlp, .. } => "mlp".to_string(),
            Task::KlOracle { critic: OracleCritic::Rkhs { .. }, .. } => "rkhs".to_string(),
            Task::Selfcheck => "-".to_string(),
            _ => self.arch.kind.name().to_string(),
        };
        let mut parts = parts.to_vec();
        if let Some(s) = seed {
            parts.push(("seed", s.to_string()));
        }
        let train = TrainConfig {
            seed: seed.unwrap_or(0),
            ..self.train
        };
        Cell {
            run_id: run_id(self.cfg, &parts),
            architecture,
            loss,
            direction,
            seed,
            arch: self.arch,
            d_z: self.d_z,
            train,
            task,
        }
    }
}

/// Expand a configuration into its run matrix, in output order.
pub fn plan(cfg: &ExperimentConfig) -> Vec<Cell> {
    use Subcommand::*;
    let base = || CellBuilder {
        cfg,
        arch: cfg.arch.clone(),
        d_z: cfg.d_z,
        train: cfg.train.clone(),
    };
    let sw = &cfg.sweep;
    let mut cells = Vec::new();
    match cfg.experiment {
        PriorEffect => {
            for &prior in &sw.priors {
                for &lp in &sw.lambda_priors {
                    for &seed in &cfg.seeds {
                        let mut b = base();
                        b.train.prior = prior;
                        b.train.lambda_prior = lp;
                        let parts = [("prior", prior_label(prior)), ("lambda_prior", fmt_num(lp))];
                        cells.push(b.cell(&parts, Some(seed), Task::Ik));
                    }
                }
            }
        }
        FdivCompare => {
            for &kind in &sw.archs {
                for &loss in &sw.losses {
                    for &dir in &sw.directions {
                        let parts = [
                            ("arch", kind.name().to_string()),
                            ("loss", loss.name().to_string()),
                            ("direction", dir.name().to_string()),
                        ];
                        let first = cells.len();
                        for &seed in &cfg.seeds {
                            let mut b = base();
                            b.arch.kind = kind;
                            b.train.loss = loss;
                            b.train.direction = dir;
                            cells.push(b.cell(&parts, Some(seed), Task::Ik));
                        }
                        let mut b = base();
                        b.arch.kind = kind;
                        b.train.loss = loss;
                        b.train.direction = dir;
                        let task = Task::Aggregate {
                            members: (first..cells.len()).collect(),
                            metrics: vec!["resim_error", "wall_time"],
                        };
                        cells.push(b.cell(&parts, None, task));
                    }
                }
            }
        }
        LatentSweep => {
            for &loss in &sw.losses {
                for &d_z in &sw.latent_dims {
                    for &seed in &cfg.seeds {
                        let mut b = base();
                        b.d_z = d_z;
                        b.train.loss = loss;
                        let parts = [("loss", loss.name().to_string()), ("latent_dim", d_z.to_string())];
                        cells.push(b.cell(&parts, Some(seed), Task::Ik));
                    }
                }
            }
        }
        EpsilonSweep => {
            for &loss in &sw.losses {
                for &eps in &sw.epsilons {
                    for &seed in &cfg.seeds {
                        let mut b = base();
                        b.train.loss = loss;
                        b.train.epsilon = eps;
                        let parts = [("loss", loss.name().to_string()), ("epsilon", fmt_num(eps))];
                        cells.push(b.cell(&parts, Some(seed), Task::Ik));
                    }
                }
            }
        }
        SupportMismatch => {
            for &loss in &sw.losses {
                for &(a, bnd) in &sw.supports {
                    for &seed in &cfg.seeds {
                        let mut b = base();
                        b.train.loss = loss;
                        let parts = [("loss", loss.name().to_string()), ("latent", format!("U({a},{bnd})"))];
                        cells.push(b.cell(&parts, Some(seed), Task::Support { a, b: bnd }));
                    }
                }
            }
        }
        ParetoMoments => {
            for &alpha in &sw.alphas {
                for &seed in &cfg.seeds {
                    let parts = [("alpha", fmt_num(alpha))];
                    cells.push(base().cell(&parts, Some(seed), Task::Pareto { alpha }));
                }
            }
        }
        KlOracle => {
            let critics = std::iter::once(OracleCritic::Mlp).chain(sw.bounds.iter().map(|&b| OracleCritic::Rkhs { b }));
            for critic in critics {
                for &n in &sw.sample_sizes {
                    for &seed in &cfg.seeds {
                        let mut parts = vec![("n", n.to_string())];
                        parts.insert(
                            0,
                            match critic {
                                OracleCritic::Mlp => ("critic", "mlp".to_string()),
                                OracleCritic::Rkhs { b } => ("critic", format!("rkhs(b={b})")),
                            },
                        );
                        cells.push(base().cell(&parts, Some(seed), Task::KlOracle { n, critic: critic.clone() }));
                    }
                }
            }
        }
        Selfcheck => {
            for &seed in &cfg.seeds {
                cells.push(base().cell(&[], Some(seed), Task::Selfcheck));
            }
        }
    }
    cells
}

/// Command-line switches that are not part of the configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub dry_run: bool,
    pub force: bool,
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            dry_run: false,
            force: false,
            jobs: 1,
        }
    }
}

#[derive(Debug)]
pub struct RunSummary {
    pub rows: Vec<ResultRow>,
    pub cells: usize,
    pub failed_rows: usize,
    pub output: Option<PathBuf>,
}

/// The resolved matrix as printed by `--dry-run`.
pub fn describe_plan(cfg: &ExperimentConfig, cells: &[Cell]) -> String {
    let mut s = format!(
        "{}: {} cells -> {}\n",
        cfg.experiment.name(),
        cells.len(),
        cfg.output_path().display()
    );
    for (i, c) in cells.iter().enumerate() {
        let detail = match &c.task {
            Task::Aggregate { members, .. } => format!("summary of {} runs", members.len()),
            Task::Selfcheck | Task::KlOracle { .. } => String::new(),
            task => format!(
                "{} x{} h{}{} epochs={} batch={} lr={}/{}",
                c.arch.kind.name(),
                c.arch.blocks,
                c.arch.hidden,
                if *task == Task::Ik { format!(" d_z={}", c.d_z) } else { String::new() },
                c.train.epochs,
                c.train.batch_size,
                c.train.lr_model,
                c.train.lr_critic
            ),
        };
        s.push_str(&format!("{i:4}  {}  {detail}\n", c.run_id));
    }
    s
}

/// Run a whole subcommand: plan, refuse or replace completed run ids,
/// execute cells (on `jobs` workers) and write their rows in plan order.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions, log: &mut dyn Write) -> Result<RunSummary> {
    let cells = plan(cfg);
    if cells.is_empty() {
        return Err(Error::Config(format!("{}: the sweep expands to no cells", cfg.experiment.name())));
    }
    if opts.dry_run {
        write!(log, "{}", describe_plan(cfg, &cells))?;
        return Ok(RunSummary {
            rows: Vec::new(),
            cells: cells.len(),
            failed_rows: 0,
            output: None,
        });
    }
    let ids: Vec<String> = cells.iter().map(|c| c.run_id.clone()).collect();
    let mut sink = ResultSink::open(cfg.output_path(), &ids, opts.force)?;
    let work: Vec<usize> = (0..cells.len())
        .filter(|&i| !matches!(cells[i].task, Task::Aggregate { .. }))
        .collect();

    let mut done: Vec<Option<Vec<ResultRow>>> = vec![None; cells.len()];
    let mut next = 0usize;
    let mut all_rows = Vec::new();
    let mut emit = |i: usize, outcome: CellOutcome, log: &mut dyn Write| -> Result<()> {
        if let Some(note) = &outcome.note {
            writeln!(log, "failed {note}")?;
        }
        done[i] = Some(outcome.rows);
        while next < cells.len() {
            if let Task::Aggregate { members, metrics } = &cells[next].task {
                let member_rows: Vec<&[ResultRow]> =
                    members.iter().filter_map(|&m| done[m].as_deref()).collect();
                done[next] = Some(cells[next].aggregate(cfg, &member_rows, metrics));
            }
            let Some(rows) = &done[next] else { break };
            sink.write(rows)?;
            writeln!(log, "done {}", cells[next].run_id)?;
            all_rows.extend(rows.iter().cloned());
            next += 1;
        }
        Ok(())
    };

    if opts.jobs <= 1 {
        for &i in &work {
            emit(i, cells[i].run(cfg), log)?;
        }
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        let (tx, rx) = mpsc::channel();
        let mut result = Ok(());
        pool.in_place_scope(|scope| {
            for &i in &work {
                let tx = tx.clone();
                let cell = &cells[i];
                scope.spawn(move |_| {
                    let _ = tx.send((i, cell.run(cfg)));
                });
            }
            drop(tx);
            for (i, outcome) in rx {
                if result.is_ok() {
                    result = emit(i, outcome, log);
                }
            }
        });
        result?;
    }
    let failed_rows = all_rows.iter().filter(|r| r.cells()[10] == "failed").count();
    Ok(RunSummary {
        rows: all_rows,
        cells: cells.len(),
        failed_rows,
        output: Some(sink.path().to_path_buf()),
    })
}
