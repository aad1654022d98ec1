use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info, warn};
use rayon::prelude::*;

use selfdace::metrics::{report_csv, MetricReport};
use selfdace::network::{checkpoint, ModelBundle};
use selfdace::pipeline::{self, list_images, load_image, save_png, GroundTruth, TrainConfig};
use selfdace::{Error, Result};

#[derive(Parser)]
#[command(name = "selfdace", version, about = "Low-light image enhancement with adaptive adjustment curves")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the curve modules (and optionally the denoiser) from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Average each block's modules into one self-looping module.
    Fuse {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enhance one image or every PNG of a directory.
    Enhance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip the denoiser even if the checkpoint carries one.
        #[arg(long)]
        no_denoise: bool,
    },
    /// Score predictions against same-named references.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

/// Worker pool capped by `DACE_THREADS` when it is set.
fn pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("DACE_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidArgument(format!("DACE_THREADS must be a positive integer, got {v:?}")))?;
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn train(config: &Path) -> Result<()> {
    let cfg = TrainConfig::load(config)?;
    let trained = pipeline::train::run(&cfg)?;
    if let (Some(first), Some(last)) = (trained.reports.first(), trained.reports.last()) {
        info!("loss {:.6} -> {:.6}", first.total, last.total);
    }
    println!("wrote {}", cfg.output.display());
    Ok(())
}

fn fuse(input: &Path, out: &Path) -> Result<()> {
    let bundle = checkpoint::load(input)?;
    if bundle.is_fused() {
        warn!("{} is already fused", input.display());
    }
    checkpoint::save(&bundle.fuse()?, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn enhance(model: &Path, input: &Path, out: &Path, no_denoise: bool) -> Result<()> {
    let mut bundle: ModelBundle = checkpoint::load(model)?;
    if !bundle.is_fused() {
        warn!("{} is not fused; fusing in memory", model.display());
        bundle = bundle.fuse()?;
    }
    let inputs = list_images(input)?;
    if inputs.is_empty() {
        return Err(Error::InvalidArgument(format!("no PNG images in {}", input.display())));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let results: Vec<Result<()>> = pool()?.install(|| {
        inputs
            .par_iter()
            .map(|p| {
                let img = load_image(p)?;
                let enhanced = bundle.forward_fused(&img, !no_denoise)?;
                save_png(&enhanced, out.join(file_name(p)))
            })
            .collect()
    });
    let mut first_err = None;
    for (p, r) in inputs.iter().zip(results) {
        if let Err(e) = r {
            error!("{}: {e}", p.display());
            first_err.get_or_insert(e);
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => {
            println!("enhanced {} image(s) into {}", inputs.len(), out.display());
            Ok(())
        }
    }
}

fn eval(pred: &Path, gt: &Path, report: &Path) -> Result<bool> {
    let preds = list_images(pred)?;
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for p in preds {
        let g = gt.join(file_name(&p));
        if g.is_file() {
            pairs.push((p, g));
        } else {
            unmatched.push(file_name(&p));
        }
    }
    for name in &unmatched {
        warn!("no reference for {name}; skipped");
    }
    let rows: Vec<Result<(String, MetricReport)>> = pool()?.install(|| {
        pairs
            .par_iter()
            .map(|(p, g)| {
                let reference = GroundTruth::load(g)?;
                Ok((file_name(p), reference.evaluate(&load_image(p)?)?))
            })
            .collect()
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    std::fs::write(report, report_csv(&rows)).map_err(|e| Error::io(report, e))?;
    println!("scored {} pair(s) into {}", rows.len(), report.display());
    if !unmatched.is_empty() {
        eprintln!("unmatched predictions: {}", unmatched.join(", "));
    }
    Ok(unmatched.is_empty())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train { config } => train(&config).map(|_| true),
        Command::Fuse { input, out } => fuse(&input, &out).map(|_| true),
        Command::Enhance {
            model,
            input,
            out,
            no_denoise,
        } => enhance(&model, &input, &out, no_denoise).map(|_| true),
        Command::Eval { pred, gt, report } => eval(&pred, &gt, &report),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
