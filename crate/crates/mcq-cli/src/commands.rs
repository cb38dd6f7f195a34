//! Implementations behind the CLI subcommands, kept callable from tests.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use mcq::cascade::CascadeConfig;
use mcq::container::read_stream;
use mcq::metrics::{db_convert, ms_ssim, psnr};
use mcq::trainer::{
    read_latent_dump, train_gumbel_st, train_kmeans, Algorithm, InitStrategy, TrainConfig,
};
use mcq::transform::{analysis, pad_to_multiple};
use mcq::{compress_image, decompress_image, Image, LatentGrid, MultiCodebook, SamplerConfig};

use crate::output::{fmt_f64, write_atomic, Csv};
use crate::perturb::perturb_stack;
use crate::spec_file::ModelSpecFile;

/// Load a training corpus: either a single `.mcql` latent dump or a
/// directory of images transformed on the fly. Directory entries are
/// processed in sorted order so corpora enumerate deterministically.
pub fn load_corpus(path: &Path, spec: &ModelSpecFile) -> Result<Vec<LatentGrid>> {
    let multiple = spec.transform.patch << (spec.levels - 1);
    if path.is_file() {
        let corpus = read_latent_dump(path)?;
        let n = spec.latent_channels();
        if corpus.iter().any(|g| g.n != n) {
            bail!("latent dump channels do not match spec ({n})");
        }
        return Ok(corpus);
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("reading corpus dir {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("ppm") | Some("pgm") | Some("png")
            )
        })
        .collect();
    entries.sort();
    if entries.is_empty() {
        bail!("corpus directory {} holds no images", path.display());
    }
    let mut corpus = Vec::with_capacity(entries.len());
    for entry in entries {
        let image = Image::read(&entry)?;
        let (padded, _) = pad_to_multiple(&image, multiple)?;
        corpus.push(analysis(&padded, &spec.transform)?);
    }
    Ok(corpus)
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub corpus: PathBuf,
    pub spec: PathBuf,
    pub out: PathBuf,
    pub trace: Option<PathBuf>,
    pub config: TrainConfig,
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let spec = ModelSpecFile::parse(&args.spec)?;
    let corpus = load_corpus(&args.corpus, &spec)?;
    let cascade = CascadeConfig {
        levels: spec.levels,
        groups: spec.groups,
        codewords_per_level: spec.codewords.clone(),
        sampler: SamplerConfig::hard(),
    };
    let trace_path = args
        .trace
        .clone()
        .unwrap_or_else(|| args.out.with_extension("trace.csv"));
    let (books, csv) = match args.config.algorithm {
        Algorithm::GumbelSt => {
            let (books, trace) = train_gumbel_st(&corpus, &cascade, &args.config)?;
            let mut csv = Csv::new("mcq.loss.v1", "epoch,loss,temperature,lr");
            for t in &trace {
                csv.row(&[
                    t.epoch.to_string(),
                    fmt_f64(t.loss),
                    fmt_f64(t.temperature),
                    fmt_f64(t.lr),
                ]);
            }
            (books, csv)
        }
        Algorithm::KMeans => {
            let (books, traces) = train_kmeans(&corpus, &cascade, &args.config)?;
            let mut csv = Csv::new("mcq.inertia.v1", "level,iteration,inertia");
            for (l, trace) in traces.iter().enumerate() {
                for (i, inertia) in trace.iter().enumerate() {
                    csv.row(&[(l + 1).to_string(), i.to_string(), fmt_f64(*inertia)]);
                }
            }
            (books, csv)
        }
    };
    write_atomic(&args.out, &books.to_bytes())?;
    csv.write(&trace_path)?;
    log::info!(
        "trained {} ({} parameters) -> {}",
        spec.name,
        books.parameter_count(),
        args.out.display()
    );
    Ok(())
}

fn load_books(spec: &ModelSpecFile, codebook: Option<&Path>) -> Result<MultiCodebook> {
    let path = codebook
        .map(Path::to_path_buf)
        .or_else(|| spec.codebook.clone())
        .context("no codebook given: pass --codebook or set it in the spec file")?;
    let books = MultiCodebook::load(&path)
        .with_context(|| format!("loading codebook {}", path.display()))?;
    if books.levels() != spec.levels
        || books.groups != spec.groups
        || books.codewords_per_level() != spec.codewords
        || books.latent_channels() != spec.latent_channels()
    {
        bail!(
            "codebook geometry (L={}, M={}, K={:?}, n={}) does not match spec {}",
            books.levels(),
            books.groups,
            books.codewords_per_level(),
            books.latent_channels(),
            spec.name
        );
    }
    Ok(books)
}

#[derive(Debug, Serialize)]
pub struct CompressReportJson {
    pub schema: &'static str,
    pub image: String,
    pub model: String,
    pub width: usize,
    pub height: usize,
    pub stream_bytes: usize,
    pub bpp: f64,
    pub payload_bpp: f64,
    pub sup_bpp: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub msssim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub msssim_db: Option<f64>,
}

pub struct CompressArgs {
    pub image: PathBuf,
    pub spec: PathBuf,
    pub codebook: Option<PathBuf>,
    pub out: PathBuf,
    pub report: bool,
    pub sample: bool,
    pub temperature: f64,
    pub seed: u64,
}

pub fn cmd_compress(args: &CompressArgs) -> Result<Option<CompressReportJson>> {
    let spec = ModelSpecFile::parse(&args.spec)?;
    let books = load_books(&spec, args.codebook.as_deref())?;
    let image = Image::read(&args.image)?;
    let sampler = if args.sample {
        SamplerConfig::gumbel(args.temperature, args.seed)
    } else {
        SamplerConfig::hard()
    };
    let enc = compress_image(&image, &spec.transform, &books, sampler)?;
    write_atomic(&args.out, &enc.bytes)?;
    if !args.report {
        return Ok(None);
    }
    let decoded = decompress_image(&enc.bytes, &books, 1)?;
    let p = psnr(&image, &decoded)?;
    let s = ms_ssim(&image, &decoded)?;
    Ok(Some(CompressReportJson {
        schema: "mcq.compress.v1",
        image: args.image.display().to_string(),
        model: spec.name,
        width: image.width,
        height: image.height,
        stream_bytes: enc.report.stream_bytes,
        bpp: enc.report.bpp,
        payload_bpp: enc.report.payload_bpp,
        sup_bpp: enc.report.sup_bpp,
        psnr_db: Some(p),
        msssim: Some(s.value),
        msssim_db: Some(db_convert(s.value)),
    }))
}

pub struct DecompressArgs {
    pub stream: PathBuf,
    pub codebook: PathBuf,
    pub out: PathBuf,
    pub levels_decode: usize,
}

pub fn cmd_decompress(args: &DecompressArgs) -> Result<()> {
    let bytes = fs::read(&args.stream)
        .with_context(|| format!("reading stream {}", args.stream.display()))?;
    let books = MultiCodebook::load(&args.codebook)?;
    let image = decompress_image(&bytes, &books, args.levels_decode)?;
    let encoded = match args.out.extension().and_then(|e| e.to_str()) {
        Some("png") => image.to_png_bytes()?,
        _ => image.to_ppm_bytes(),
    };
    write_atomic(&args.out, &encoded)?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct InspectJson {
    pub schema: &'static str,
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub transform: String,
    pub patch: usize,
    pub levels: u8,
    pub groups: u16,
    pub codewords_per_level: Vec<u32>,
    pub codebook_digest: String,
    pub stochastic: bool,
    pub stream_bytes: usize,
    pub payload_bytes: usize,
    pub bpp: f64,
}

pub fn cmd_inspect(stream: &Path) -> Result<InspectJson> {
    let bytes = fs::read(stream)?;
    let (header, payload) = read_stream(&bytes)?;
    Ok(InspectJson {
        schema: "mcq.inspect.v1",
        width: header.width,
        height: header.height,
        channels: header.channels,
        transform: format!("{:?}", header.transform.kind),
        patch: header.transform.patch,
        levels: header.levels,
        groups: header.groups,
        codewords_per_level: header.codewords_per_level.clone(),
        codebook_digest: hex(&header.codebook_digest),
        stochastic: header.stochastic,
        stream_bytes: bytes.len(),
        payload_bytes: payload.len(),
        bpp: mcq::container::actual_bpp(bytes.len(), header.width as usize, header.height as usize),
    })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct PerturbJson {
    pub schema: &'static str,
    pub fraction: f64,
    pub requested: usize,
    pub changed: usize,
    pub bpp_before: f64,
    pub bpp_after: f64,
    pub bpp_change_rel: f64,
    pub psnr_db_before: f64,
    pub psnr_db_after: f64,
    pub msssim_before: f64,
    pub msssim_after: f64,
    /// True when the metrics compare against an external reference image
    /// rather than the unperturbed decode.
    pub against_reference: bool,
}

pub struct PerturbArgs {
    pub stream: PathBuf,
    pub codebook: PathBuf,
    pub out: PathBuf,
    pub fraction: f64,
    pub seed: u64,
    pub reference: Option<PathBuf>,
}

pub fn cmd_perturb(args: &PerturbArgs) -> Result<PerturbJson> {
    let bytes = fs::read(&args.stream)?;
    let books = MultiCodebook::load(&args.codebook)?;
    let (header, payload) = read_stream(&bytes)?;
    header.matches_codebook(&books)?;
    let mut codes = mcq::codec::decode_stream_codes(&header, payload)?;
    let total = codes.total_positions();
    let requested = (args.fraction * total as f64).floor() as usize;
    let changed = perturb_stack(
        &mut codes,
        &header.codewords_per_level,
        args.fraction,
        args.seed,
    )?;
    let perturbed_bytes = mcq::codec::reencode_stream(&header, &codes)?;
    write_atomic(&args.out, &perturbed_bytes)?;

    let before_img = decompress_image(&bytes, &books, 1)?;
    let after_img = decompress_image(&perturbed_bytes, &books, 1)?;
    let (reference, against_reference) = match &args.reference {
        Some(p) => (Image::read(p)?, true),
        None => (before_img.clone(), false),
    };
    let (w, h) = (header.width as usize, header.height as usize);
    let bpp_before = mcq::container::actual_bpp(bytes.len(), w, h);
    let bpp_after = mcq::container::actual_bpp(perturbed_bytes.len(), w, h);
    Ok(PerturbJson {
        schema: "mcq.perturb.v1",
        fraction: args.fraction,
        requested,
        changed,
        bpp_before,
        bpp_after,
        bpp_change_rel: (bpp_after - bpp_before) / bpp_before,
        psnr_db_before: psnr(&reference, &before_img)?,
        psnr_db_after: psnr(&reference, &after_img)?,
        msssim_before: ms_ssim(&reference, &before_img)?.value,
        msssim_after: ms_ssim(&reference, &after_img)?.value,
        against_reference,
    })
}

pub fn parse_algorithm(s: &str) -> Result<Algorithm> {
    match s {
        "gumbel-st" | "gumbel" => Ok(Algorithm::GumbelSt),
        "kmeans" => Ok(Algorithm::KMeans),
        other => bail!("unknown algorithm `{other}` (use gumbel-st or kmeans)"),
    }
}

pub fn parse_init(s: &str) -> Result<InitStrategy> {
    match s {
        "random-sample" | "random" => Ok(InitStrategy::RandomSample),
        "kmeans++" | "kmeanspp" => Ok(InitStrategy::KMeansPlusPlus),
        other => bail!("unknown init strategy `{other}`"),
    }
}
