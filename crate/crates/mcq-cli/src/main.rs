use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use mcq::trainer::TrainConfig;
use mcq::{Image, MultiCodebook};
use mcq_cli::commands::{
    cmd_compress, cmd_decompress, cmd_inspect, cmd_perturb, cmd_train, parse_algorithm, parse_init,
    CompressArgs, DecompressArgs, PerturbArgs, TrainArgs,
};
use mcq_cli::output::{fmt_f64, write_atomic, Csv};
use mcq_cli::spec_file::ModelSpecFile;
use mcq_cli::{bench, sweep};

/// Multi-codebook cascaded vector-quantization codec.
#[derive(Parser)]
#[command(name = "mcq", version, about)]
struct Cli {
    /// Worker threads; 1 guarantees bit-reproducible output.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Learn codebooks from a corpus of images or a latent dump.
    Train(TrainCli),
    /// Compress an image into a .mcq stream.
    Compress(CompressCli),
    /// Decompress a .mcq stream back to an image.
    Decompress(DecompressCli),
    /// Rate-distortion sweep over images x models, CSV out.
    Sweep(SweepCli),
    /// Randomly perturb coded indices and report the damage.
    Perturb(PerturbCli),
    /// Encode/decode latency versus codebook geometry, CSV out.
    Bench(BenchCli),
    /// Dump a stream header as JSON.
    Inspect(InspectCli),
}

#[derive(Args)]
struct TrainCli {
    /// Corpus: a directory of images or one .mcql latent dump.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    /// Output codebook (.mcqb).
    #[arg(long)]
    out: PathBuf,
    /// Loss-trace CSV; defaults next to the codebook.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// gumbel-st or kmeans.
    #[arg(long, default_value = "gumbel-st")]
    algorithm: String,
    /// random-sample or kmeans++.
    #[arg(long, default_value = "kmeans++")]
    init: String,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.5)]
    lr_initial: f64,
    #[arg(long, default_value_t = 0.01)]
    lr_final: f64,
    #[arg(long, default_value_t = 1.0)]
    temperature_initial: f64,
    #[arg(long, default_value_t = 0.1)]
    temperature_final: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CompressCli {
    image: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    /// Override the codebook named in the spec file.
    #[arg(long)]
    codebook: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Print a JSON report with bpp and quality metrics.
    #[arg(long)]
    report: bool,
    /// Use stochastic (Gumbel) assignment instead of greedy.
    #[arg(long)]
    sample: bool,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DecompressCli {
    stream: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Decode levels N..=L only (1 = everything, higher = coarser).
    #[arg(long, default_value_t = 1)]
    levels_decode: usize,
}

#[derive(Args)]
struct SweepCli {
    /// Images to sweep.
    #[arg(long, num_args = 1.., required = true)]
    images: Vec<PathBuf>,
    /// Model spec files (each naming its codebook).
    #[arg(long, num_args = 1.., required = true)]
    specs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PerturbCli {
    stream: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reference image for quality metrics (defaults to the unperturbed
    /// decode).
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args)]
struct BenchCli {
    /// Group counts to bench.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    groups: Vec<usize>,
    /// Codebook sizes to bench.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "64,128,256,512,1024,2048,4096,8192"
    )]
    codewords: Vec<u32>,
    #[arg(long, default_value_t = 96)]
    grid_h: usize,
    #[arg(long, default_value_t = 64)]
    grid_w: usize,
    /// Channels per group.
    #[arg(long, default_value_t = 24)]
    dim: usize,
    #[arg(long, default_value_t = 20)]
    runs: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectCli {
    stream: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("MCQ_LOG")).init();
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if matches!(
                e.downcast_ref::<mcq::Error>(),
                Some(mcq::Error::Diverged(_))
            ) {
                return ExitCode::from(2);
            }
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Train(a) => {
            let config = TrainConfig {
                epochs: a.epochs,
                batch_size: a.batch_size,
                lr_initial: a.lr_initial,
                lr_final: a.lr_final,
                temperature_initial: a.temperature_initial,
                temperature_final: a.temperature_final,
                seed: a.seed,
                algorithm: parse_algorithm(&a.algorithm)?,
                init: parse_init(&a.init)?,
            };
            cmd_train(&TrainArgs {
                corpus: a.corpus,
                spec: a.spec,
                out: a.out,
                trace: a.trace,
                config,
            })
        }
        Cmd::Compress(a) => {
            let report = cmd_compress(&CompressArgs {
                image: a.image,
                spec: a.spec,
                codebook: a.codebook,
                out: a.out,
                report: a.report,
                sample: a.sample,
                temperature: a.temperature,
                seed: a.seed,
            })?;
            if let Some(report) = report {
                println!("{}", serde_json::to_string_pretty(&report)?);
            }
            Ok(())
        }
        Cmd::Decompress(a) => cmd_decompress(&DecompressArgs {
            stream: a.stream,
            codebook: a.codebook,
            out: a.out,
            levels_decode: a.levels_decode,
        }),
        Cmd::Sweep(a) => {
            let mut images = Vec::new();
            for path in &a.images {
                images.push((
                    path.file_name()
                        .unwrap_or_default()
                        .to_string_lossy()
                        .into_owned(),
                    Image::read(path)?,
                ));
            }
            let mut models = Vec::new();
            for path in &a.specs {
                let spec = ModelSpecFile::parse(path)?;
                let book_path = spec
                    .codebook
                    .clone()
                    .ok_or_else(|| anyhow::anyhow!("spec {} names no codebook", spec.name))?;
                let books = MultiCodebook::load(&book_path)?;
                models.push((spec, books));
            }
            let (rows, summaries) = sweep::run_sweep(&images, &models)?;
            write_atomic(&a.out, sweep::sweep_csv(&rows, &summaries).as_bytes())?;
            Ok(())
        }
        Cmd::Perturb(a) => {
            let report = cmd_perturb(&PerturbArgs {
                stream: a.stream,
                codebook: a.codebook,
                out: a.out,
                fraction: a.fraction,
                seed: a.seed,
                reference: a.reference,
            })?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Cmd::Bench(a) => {
            let cfg = bench::BenchConfig {
                groups: a.groups,
                codewords: a.codewords,
                grid_h: a.grid_h,
                grid_w: a.grid_w,
                dim: a.dim,
                runs: a.runs,
                warmup: a.warmup,
                seed: a.seed,
            };
            let rows = bench::run_bench(&cfg)?;
            let mut csv = Csv::new("mcq.bench.v1", "m,k,enc_ms,dec_ms");
            for r in &rows {
                csv.row(&[
                    r.groups.to_string(),
                    r.codewords.to_string(),
                    fmt_f64(r.enc_ms),
                    fmt_f64(r.dec_ms),
                ]);
            }
            csv.write(&a.out)?;
            Ok(())
        }
        Cmd::Inspect(a) => {
            let report = cmd_inspect(&a.stream)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}
