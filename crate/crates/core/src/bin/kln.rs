use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use kln::config::{self, RunConfig};
use kln::data::{synth_blobs, Dataset};
use kln::diagnostics::{
    h_heatmap, kernel_histogram, off_diagonal_cv, relative_frobenius, BatchMode, Features,
    DEFAULT_BINS, DEFAULT_PAIRS,
};
use kln::network::ModelParams;
use kln::training::{evaluate, mean_std, train, TrainOutcome};
use kln::{Error, Result};

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

/// Kernel learning network: CMMD-trained encoder + classifier.
///
/// Run settings come from defaults, then `--config FILE` (flat `key = value`
/// lines), then flags; later sources win. Every run writes the resolved
/// settings to `config.txt`, which can be passed back with `--config`.
#[derive(Parser)]
#[command(name = "kln", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write report.txt, model.ckpt and config.txt
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Independent runs with seeds seed, seed+1, ...; prints mean and std
        #[arg(long, default_value_t = 1)]
        repeat: usize,
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
    },
    /// Test error of a checkpoint
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// H-matrix heat maps, kernel histograms and separation scores
    Diagnose {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        source: FeatureSource,
        #[arg(long, value_enum)]
        which: Which,
        /// Class for the single-class heat map (default: seeded pick)
        #[arg(long)]
        single_class: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_PAIRS)]
        pairs: usize,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        /// Use the training split instead of the test split
        #[arg(long)]
        train_split: bool,
        #[arg(long, default_value = "runs/diagnose")]
        out: PathBuf,
    },
    /// One run per value of a weight, all else fixed; writes sweep.csv
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values
        #[arg(long)]
        values: String,
        /// Run values on separate threads
        #[arg(long)]
        parallel: bool,
        #[arg(long, default_value = "runs/sweep")]
        out: PathBuf,
    },
    /// Write a synthetic blobs dataset as CSV
    Blobs {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 0.35)]
        spread: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct FeatureSource {
    /// Kernel on encoded features of this checkpoint
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Kernel on raw input features
    #[arg(long)]
    raw: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Heatmap,
    Histogram,
    Separation,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Beta,
    Beta1,
    Beta2,
}

impl Axis {
    fn key(self) -> &'static str {
        match self {
            Axis::Beta => "beta",
            Axis::Beta1 => "beta1",
            Axis::Beta2 => "beta2",
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Flat key = value settings file
    #[arg(long)]
    config: Option<PathBuf>,
    /// supervised | semi | identity | ae-pretrain
    #[arg(long)]
    mode: Option<String>,
    /// mnist | blobs
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    data_dir: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Labelled samples (class-balanced)
    #[arg(long)]
    labels: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    beta1: Option<String>,
    #[arg(long)]
    beta2: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    /// Gaussian sigma^2 values, comma-separated
    #[arg(long)]
    bandwidths: Option<String>,
    #[arg(long)]
    train_subset: Option<String>,
    #[arg(long)]
    test_subset: Option<String>,
    /// Any other setting as key=value (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn flag_pairs(&self) -> Result<Vec<(String, String)>> {
        let named = [
            ("mode", &self.mode),
            ("dataset", &self.dataset),
            ("data_dir", &self.data_dir),
            ("epochs", &self.epochs),
            ("seed", &self.seed),
            ("labels", &self.labels),
            ("beta", &self.beta),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("lambda", &self.lambda),
            ("batch_size", &self.batch_size),
            ("bandwidths", &self.bandwidths),
            ("train_subset", &self.train_subset),
            ("test_subset", &self.test_subset),
        ];
        let mut out: Vec<(String, String)> = named
            .iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect();
        for item in &self.set {
            let (k, v) = item.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("--set expects KEY=VALUE, got `{item}`"))
            })?;
            let k = k.trim().to_string();
            if out.iter().any(|(existing, _)| *existing == k) {
                return Err(Error::InvalidConfig(format!("`{k}` given twice on the command line")));
            }
            out.push((k, v.trim().to_string()));
        }
        Ok(out)
    }

    fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => config::read_file(p)?,
            None => Vec::new(),
        };
        RunConfig::resolve(&file, &self.flag_pairs()?)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::InvalidKernel(_) => EXIT_USAGE,
        Error::Io { .. }
        | Error::BadMagic { .. }
        | Error::Truncated { .. }
        | Error::CountMismatch { .. }
        | Error::Checkpoint { .. }
        | Error::InvalidDataset(_) => EXIT_IO,
        _ => EXIT_NUMERIC,
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run_once(cfg: &RunConfig, train_set: &Dataset, test: &Dataset, out: &Path, quiet: bool) -> Result<TrainOutcome> {
    write(&out.join("config.txt"), cfg.to_text())?;
    let outcome = train(train_set, test, &cfg.train, cfg.mode, |r| {
        if !quiet {
            eprintln!("{r}");
        }
    })?;
    write(&out.join("report.txt"), outcome.report.to_text())?;
    outcome.params.save(&out.join("model.ckpt"))?;
    Ok(outcome)
}

fn cmd_train(run: &RunArgs, repeat: usize, out: &Path) -> Result<()> {
    if repeat == 0 {
        return Err(Error::InvalidConfig("--repeat must be at least 1".into()));
    }
    let cfg = run.resolve()?;
    let (train_set, test, val) = cfg.load_datasets()?;
    let mut errors = Vec::with_capacity(repeat);
    for i in 0..repeat {
        let mut c = cfg.clone();
        c.train.seed = cfg.train.seed + i as u64;
        let dir = if repeat == 1 {
            out.to_path_buf()
        } else {
            out.join(format!("run-{i}"))
        };
        let o = run_once(&c, &train_set, &test, &dir, false)?;
        let mut line = format!(
            "seed={} final_error={} best_error={} wall_time_secs={:.1}",
            c.train.seed, o.report.final_error, o.report.best_error, o.report.wall_time_secs
        );
        if let Some(v) = &val {
            line.push_str(&format!(" validation_error={}", evaluate(&o.params, v)?));
        }
        println!("{line}");
        errors.push(o.report.final_error);
    }
    if repeat > 1 {
        let (m, s) = mean_std(&errors);
        println!("summary runs={repeat} mean_error={m} std_error={s}");
    }
    Ok(())
}

fn cmd_eval(run: &RunArgs, checkpoint: &Path) -> Result<()> {
    let cfg = run.resolve()?;
    let params = ModelParams::load(checkpoint)?;
    let (_, test, _) = cfg.load_datasets()?;
    let err = evaluate(&params, &test)?;
    println!(
        "error={err} n={} dataset={} checkpoint={}",
        test.len(),
        test.name,
        checkpoint.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_diagnose(
    run: &RunArgs,
    source: &FeatureSource,
    which: Which,
    single_class: Option<usize>,
    pairs: usize,
    bins: usize,
    train_split: bool,
    out: &Path,
) -> Result<()> {
    let cfg = run.resolve()?;
    let (train_set, test, _) = cfg.load_datasets()?;
    let ds = if train_split { &train_set } else { &test };
    let params = source.checkpoint.as_deref().map(ModelParams::load).transpose()?;
    let features = match &params {
        Some(p) => Features::Latent(p),
        None => Features::Raw,
    };
    let spec = cfg.train.data_kernel()?;
    let seed = cfg.train.seed;
    match which {
        Which::Heatmap => {
            let bs = cfg.train.batch_size;
            let lambda = cfg.train.lambda;
            let mixed = h_heatmap(ds, &spec, features, BatchMode::Mixed, bs, lambda, seed)?;
            let single = h_heatmap(ds, &spec, features, BatchMode::SingleClass(single_class), bs, lambda, seed)?;
            mixed.export(out, "heatmap-mixed")?;
            single.export(out, "heatmap-single")?;
            println!(
                "mixed_offdiag_cv={} single_offdiag_cv={} single_class={} relative_frobenius={}",
                off_diagonal_cv(&mixed.h),
                off_diagonal_cv(&single.h),
                single.class.expect("single-class batch"),
                relative_frobenius(&mixed.h, &single.h)?
            );
        }
        Which::Histogram | Which::Separation => {
            let h = kernel_histogram(ds, &spec, features, pairs, bins, seed)?;
            if matches!(which, Which::Histogram) {
                let path = out.join("histogram.csv");
                write(&path, h.to_csv())?;
                println!("separation={} csv={}", h.separation()?, path.display());
            } else {
                println!("separation={}", h.separation()?);
            }
        }
    }
    Ok(())
}

fn cmd_sweep(run: &RunArgs, axis: Axis, values: &str, parallel: bool, out: &Path) -> Result<()> {
    let values: Vec<String> = values
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(Error::InvalidConfig("--values needs at least one value".into()));
    }
    let base = run.resolve()?;
    let (train_set, test, _) = base.load_datasets()?;
    let configs: Vec<RunConfig> = values
        .iter()
        .map(|v| {
            let mut c = base.clone();
            c.set(axis.key(), v)?;
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let dir = |v: &str| out.join(format!("{}-{v}", axis.key()));
    let results: Vec<Result<f64>> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = configs
                .iter()
                .zip(&values)
                .map(|(c, v)| {
                    let (train_set, test, d) = (&train_set, &test, dir(v));
                    s.spawn(move || run_once(c, train_set, test, &d, true).map(|o| o.report.final_error))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect()
        })
    } else {
        configs
            .iter()
            .zip(&values)
            .map(|(c, v)| run_once(c, &train_set, &test, &dir(v), true).map(|o| o.report.final_error))
            .collect()
    };
    let mut csv = String::from("value,final_error\n");
    for (v, r) in values.iter().zip(results) {
        let err = r?;
        println!("{}={v} final_error={err}", axis.key());
        csv.push_str(&format!("{v},{err}\n"));
    }
    write(&out.join("sweep.csv"), csv)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { run, repeat, out } => cmd_train(&run, repeat, &out),
        Command::Eval { run, checkpoint } => cmd_eval(&run, &checkpoint),
        Command::Diagnose {
            run,
            source,
            which,
            single_class,
            pairs,
            bins,
            train_split,
            out,
        } => cmd_diagnose(&run, &source, which, single_class, pairs, bins, train_split, &out),
        Command::Sweep {
            run,
            axis,
            values,
            parallel,
            out,
        } => cmd_sweep(&run, axis, &values, parallel, &out),
        Command::Blobs {
            classes,
            per_class,
            dim,
            spread,
            seed,
            out,
        } => {
            let ds = synth_blobs(classes, per_class, dim, spread, seed)?;
            ds.write_csv(&out)?;
            println!("wrote {} rows to {}", ds.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
