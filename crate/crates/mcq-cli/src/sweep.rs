//! Rate-distortion sweeps: one point per (image, model) plus per-model mean
//! and jackknife standard-error rows.

use anyhow::Result;

use mcq::metrics::{db_convert, jackknife_se, ms_ssim, psnr, RdPoint};
use mcq::{compress_image, decompress_image, Image, MultiCodebook, SamplerConfig};

use crate::output::{fmt_f64, Csv};
use crate::spec_file::ModelSpecFile;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub model: String,
    pub image: String,
    pub point: RdPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSummary {
    pub model: String,
    pub count: usize,
    pub mean: RdPoint,
    /// Jackknife standard errors for (bpp, psnr_db, msssim_db); zero when
    /// only one image was swept.
    pub se_bpp: f64,
    pub se_psnr_db: f64,
    pub se_msssim_db: f64,
}

pub fn run_sweep(
    images: &[(String, Image)],
    models: &[(ModelSpecFile, MultiCodebook)],
) -> Result<(Vec<SweepRow>, Vec<ModelSummary>)> {
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (spec, books) in models {
        let mut bpps = Vec::new();
        let mut psnrs = Vec::new();
        let mut msssims = Vec::new();
        let mut msssim_dbs = Vec::new();
        for (name, image) in images {
            let enc = compress_image(image, &spec.transform, books, SamplerConfig::hard())?;
            let decoded = decompress_image(&enc.bytes, books, 1)?;
            let p = psnr(image, &decoded)?;
            let s = ms_ssim(image, &decoded)?;
            let point = RdPoint {
                bpp: enc.report.bpp,
                psnr_db: p,
                msssim: s.value,
                msssim_db: db_convert(s.value),
            };
            bpps.push(point.bpp);
            psnrs.push(point.psnr_db);
            msssims.push(point.msssim);
            msssim_dbs.push(point.msssim_db);
            rows.push(SweepRow {
                model: spec.name.clone(),
                image: name.clone(),
                point,
            });
        }
        let n = images.len();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let se = |v: &[f64]| {
            if v.len() >= 2 {
                jackknife_se(v).unwrap_or(0.0)
            } else {
                0.0
            }
        };
        summaries.push(ModelSummary {
            model: spec.name.clone(),
            count: n,
            mean: RdPoint {
                bpp: mean(&bpps),
                psnr_db: mean(&psnrs),
                msssim: mean(&msssims),
                msssim_db: mean(&msssim_dbs),
            },
            se_bpp: se(&bpps),
            se_psnr_db: se(&psnrs),
            se_msssim_db: se(&msssim_dbs),
        });
    }
    Ok((rows, summaries))
}

pub fn sweep_csv(rows: &[SweepRow], summaries: &[ModelSummary]) -> String {
    let mut csv = Csv::new("mcq.sweep.v1", "model,image,bpp,psnr_db,msssim,msssim_db");
    for r in rows {
        csv.row(&[
            r.model.clone(),
            r.image.clone(),
            fmt_f64(r.point.bpp),
            fmt_f64(r.point.psnr_db),
            fmt_f64(r.point.msssim),
            fmt_f64(r.point.msssim_db),
        ]);
    }
    for s in summaries {
        csv.row(&[
            s.model.clone(),
            "(mean)".into(),
            fmt_f64(s.mean.bpp),
            fmt_f64(s.mean.psnr_db),
            fmt_f64(s.mean.msssim),
            fmt_f64(s.mean.msssim_db),
        ]);
        csv.row(&[
            s.model.clone(),
            "(jackknife_se)".into(),
            fmt_f64(s.se_bpp),
            fmt_f64(s.se_psnr_db),
            String::new(),
            fmt_f64(s.se_msssim_db),
        ]);
    }
    csv.into_string()
}
