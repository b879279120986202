use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn varinn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_varinn"))
        .args(args)
        .env_remove("VARINN_OUTPUT")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("varinn-cli-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// CSV lines with the wall-time column removed.
fn timeless(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| {
            let mut tail = l.rsplitn(3, ',');
            let status = tail.next().unwrap();
            tail.next();
            format!("{},{status}", tail.next().unwrap())
        })
        .collect()
}

const SMALL: [&str; 3] = ["--sweep.sample_sizes=50", "--sweep.bounds=2", "--experiment.seeds=0..2"];

#[test]
fn dry_run_prints_the_matrix_and_writes_nothing() {
    let dir = scratch("dry");
    let out = dir.join("rows.csv");
    let o = varinn(&["latent-sweep", "--dry-run", "--output", out.to_str().unwrap(), "--sweep.latent_dims=2,4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stderr(&o);
    assert!(text.contains("latent-sweep: 4 cells"), "{text}");
    assert!(text.contains("latent-sweep:loss=sinkhorn,latent_dim=4,seed=0"), "{text}");
    assert!(!out.exists());
}

#[test]
fn every_config_problem_is_reported() {
    let dir = scratch("bad");
    let cfg = dir.join("bad.conf");
    std::fs::write(&cfg, "[train]\nepochs = many\nbogus = 1\n[nowhere]\nx = 1\n").unwrap();
    let o = varinn(&["selfcheck", "--config", cfg.to_str().unwrap(), "--arch.blocks=0"]);
    assert_eq!(o.status.code(), Some(2));
    let text = stderr(&o);
    for needle in ["epochs", "bogus", "nowhere", "blocks"] {
        assert!(text.contains(needle), "missing {needle}: {text}");
    }
}

#[test]
fn completed_runs_need_force() {
    let dir = scratch("force");
    let out = dir.join("kl.csv");
    let out_arg = format!("--experiment.output={}", out.display());
    let mut args = vec!["kl-oracle", out_arg.as_str()];
    args.extend(SMALL);
    let first = varinn(&args);
    assert!(first.status.success(), "{}", stderr(&first));
    let body = std::fs::read_to_string(&out).unwrap();
    let header = body.lines().next().unwrap();
    assert_eq!(
        header,
        "run_id,experiment,architecture,loss,direction,seed,epoch,metric_name,metric_value,wall_time_s,status"
    );
    assert_eq!(body.lines().count(), 1 + 4 * 2);

    let again = varinn(&args);
    assert_eq!(again.status.code(), Some(2));
    assert!(stderr(&again).contains("--force"), "{}", stderr(&again));
    assert_eq!(std::fs::read_to_string(&out).unwrap(), body);

    args.push("--force");
    let forced = varinn(&args);
    assert!(forced.status.success(), "{}", stderr(&forced));
    assert_eq!(timeless(&std::fs::read_to_string(&out).unwrap()), timeless(&body));
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = scratch("env");
    let mut args = vec!["kl-oracle", "--sweep.sample_sizes=50", "--sweep.bounds=2", "--experiment.seeds=0"];
    args.push("--experiment.output=nested/kl.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_varinn"))
        .args(&args)
        .env("VARINN_OUTPUT", &dir)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.join("nested/kl.csv").exists());
}

#[test]
fn shipped_configs_resolve() {
    for (sub, file) in [
        ("prior-effect", "configs/prior-effect.conf"),
        ("support-mismatch", "configs/support-mismatch.conf"),
        ("pareto-moments", "configs/quick.conf"),
    ] {
        let path = repo_file(file);
        let o = varinn(&[sub, "--config", path.to_str().unwrap(), "--dry-run"]);
        assert!(o.status.success(), "{file}: {}", stderr(&o));
    }
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = varinn(&["train-everything"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn parallel_jobs_write_the_sequential_file() {
    let dir = scratch("jobs");
    let bodies: Vec<Vec<String>> = ["1", "2"]
        .iter()
        .map(|jobs| {
            let out = dir.join(format!("jobs{jobs}.csv"));
            let out_arg = format!("--experiment.output={}", out.display());
            let mut args = vec!["kl-oracle", out_arg.as_str(), "--jobs", jobs];
            args.extend(SMALL);
            let o = varinn(&args);
            assert!(o.status.success(), "{}", stderr(&o));
            timeless(&std::fs::read_to_string(&out).unwrap())
        })
        .collect();
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn trained_cells_leave_loadable_checkpoints() {
    let dir = scratch("ckpt");
    let out = format!("--experiment.output={}", dir.join("p.csv").display());
    let ck = format!("--experiment.checkpoints={}", dir.join("models").display());
    let o = varinn(&[
        "pareto-moments",
        &out,
        &ck,
        "--sweep.alphas=3",
        "--experiment.seeds=0",
        "--experiment.samples=300",
        "--experiment.eval_samples=100",
        "--train.epochs=1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let path = dir.join("models/pareto-moments_alpha=3_seed=0.flow");
    let model = varinn::flows::checkpoint::load(&path).unwrap();
    assert_eq!(model.dim(), 2);
}
