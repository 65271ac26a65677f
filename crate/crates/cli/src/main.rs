use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use denseseg::arch::{audit, load_checkpoint, save_checkpoint, NetworkSpec, COMPARISON_PARAMS};
use denseseg::eval::{evaluate, sliding_window_predict, vote_strategies, WindowOptions};
use denseseg::io::{
    atomic_write, load_dataset, read_labels, read_volume, write_labels, write_phantom_dataset,
};
use denseseg::train::{load_config, trace_csv, train_with, RunConfig, TrainEvent};
use denseseg::verify::{network_cases, op_cases, SuiteCase};
use denseseg::volume::check_same_grid;

const CHECKPOINT_FILE: &str = "checkpoint.dsgc";
const TRACE_FILE: &str = "loss.csv";
const CONFIG_COPY: &str = "config.txt";

#[derive(Parser)]
#[command(name = "denseseg", version, about = "3-D dense network for brain tissue segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic phantom samples and a manifest.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        noise: f32,
    },
    /// Train on the samples of a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment a T1/T2 pair by overlapped patch voting.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        t1: PathBuf,
        #[arg(long)]
        t2: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Config the checkpoint was trained with; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to half the patch size.
        #[arg(long)]
        stride: Option<usize>,
        /// Defaults to the config's patch size.
        #[arg(long)]
        patch: Option<usize>,
        #[arg(long, default_value = "majority")]
        vote: String,
    },
    /// Compare a predicted label volume with ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report depth, channel trace and parameter counts.
    Audit {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also check the tiny end-to-end network.
        #[arg(long)]
        network: bool,
    },
}

fn run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => load_config(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn gen_data(out: &Path, count: usize, size: usize, seed: u64, noise: f32) -> Result<()> {
    let manifest = write_phantom_dataset(out, count, size, seed, noise)?;
    println!("wrote {count} phantoms of {size}^3 and {}", manifest.display());
    Ok(())
}

fn train(manifest: &Path, config: &Path, out: &Path) -> Result<()> {
    let cfg = run_config(Some(config))?;
    let data = load_dataset(manifest).with_context(|| format!("loading {}", manifest.display()))?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let samples: Vec<_> = data.into_iter().map(|(_, s)| s).collect();
    let ckpt = out.join(CHECKPOINT_FILE);
    let start = Instant::now();
    let every = (cfg.train.max_iters / 20).max(1);
    let outcome = train_with(&samples, &cfg.train, &cfg.hyper, &mut |e| {
        match e {
            TrainEvent::Iteration(r) if r.iter % every == 0 || r.iter + 1 == cfg.train.max_iters => {
                eprintln!(
                    "iter {:>6}  lr {:.2e}  loss {:.5}  {:.0}s",
                    r.iter,
                    r.lr,
                    r.loss,
                    start.elapsed().as_secs_f64()
                );
            }
            TrainEvent::Checkpoint { spec, store, .. } => save_checkpoint(spec, store, &ckpt)?,
            _ => {}
        }
        Ok(())
    })?;
    if cfg.train.max_iters == 0 {
        save_checkpoint(&outcome.spec, &outcome.store, &ckpt)?;
    }
    atomic_write(&out.join(TRACE_FILE), trace_csv(&outcome.trace).as_bytes())?;
    let text = std::fs::read(config).with_context(|| format!("reading {}", config.display()))?;
    atomic_write(&out.join(CONFIG_COPY), &text)?;
    println!(
        "trained {} iterations in {:.1}s; checkpoint {}",
        outcome.trace.len(),
        start.elapsed().as_secs_f64(),
        ckpt.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn predict(
    checkpoint: &Path,
    t1: &Path,
    t2: &Path,
    out: &Path,
    config: Option<&Path>,
    stride: Option<usize>,
    patch: Option<usize>,
    vote: &str,
) -> Result<()> {
    vote_strategies().get(vote)?;
    let cfg = run_config(config)?;
    let spec = NetworkSpec::build(&cfg.hyper)?;
    let store = load_checkpoint(&spec, checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let t1v = read_volume(t1).with_context(|| format!("reading {}", t1.display()))?;
    let t2v = read_volume(t2).with_context(|| format!("reading {}", t2.display()))?;
    let mods = vec![t1v, t2v];
    check_same_grid(&mods).context("T1 and T2 volumes are not on the same grid")?;
    let patch = patch.unwrap_or(cfg.train.patch_size);
    let mut opts = WindowOptions::new(patch).with_vote(vote);
    opts.conv_kernel = cfg.train.conv_kernel.clone();
    if let Some(s) = stride {
        opts.stride = s;
    }
    let labels = sliding_window_predict(&spec, &store, &mods, &opts)?;
    write_labels(out, &labels).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} ({:?} voxels)", out.display(), labels.dims());
    Ok(())
}

fn evaluate_cmd(pred: &Path, gt: &Path, out: &Path) -> Result<()> {
    let p = read_labels(pred).with_context(|| format!("reading {}", pred.display()))?;
    let g = read_labels(gt).with_context(|| format!("reading {}", gt.display()))?;
    let report = evaluate(&p, &g)?;
    atomic_write(out, report.to_csv().as_bytes()).with_context(|| format!("writing {}", out.display()))?;
    print!("{}", report.to_table());
    Ok(())
}

fn audit_cmd(config: Option<&Path>) -> Result<()> {
    let cfg = run_config(config)?;
    let report = audit(&NetworkSpec::build(&cfg.hyper)?)?;
    print!("{}", report.render());
    if report.total_params >= COMPARISON_PARAMS {
        eprintln!("warning: {} parameters is not below {COMPARISON_PARAMS}", report.total_params);
    }
    Ok(())
}

fn print_cases(cases: &[SuiteCase]) -> bool {
    let mut ok = true;
    for c in cases {
        println!(
            "{:<4} {:<34} max rel err {:.2e} (tol {:.0e}, {} checked, {} skipped)",
            if c.pass() { "PASS" } else { "FAIL" },
            c.name,
            c.report.max_rel_err,
            c.tol,
            c.report.checked,
            c.report.skipped
        );
        ok &= c.pass();
    }
    ok
}

fn gradcheck(seed: u64, network: bool) -> Result<()> {
    let mut ok = print_cases(&op_cases(seed)?);
    if network {
        ok &= print_cases(&network_cases(seed)?);
    }
    if !ok {
        bail!("gradient check failed");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            out,
            count,
            size,
            seed,
            noise,
        } => gen_data(&out, count, size, seed, noise),
        Command::Train {
            manifest,
            config,
            out,
        } => train(&manifest, &config, &out),
        Command::Predict {
            checkpoint,
            t1,
            t2,
            out,
            config,
            stride,
            patch,
            vote,
        } => predict(&checkpoint, &t1, &t2, &out, config.as_deref(), stride, patch, &vote),
        Command::Evaluate { pred, gt, out } => evaluate_cmd(&pred, &gt, &out),
        Command::Audit { config } => audit_cmd(config.as_deref()),
        Command::Gradcheck { seed, network } => gradcheck(seed, network),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
