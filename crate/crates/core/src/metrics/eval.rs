//! Per-pair evaluation of a model over a prepared corpus.

use super::{quality, Psnr, QualityReport};
use crate::jpeg::decode_rgb;
use crate::network::EfdrModel;
use crate::pipeline::{hide, reveal, LoadedPair, PipelineError};
use crate::tensor::Scalar;
use serde::Serialize;
use std::io::{self, Write};

pub const CSV_HEADER: &str = "file,psnr_cs,ssim_cs,apd_cs,psnr_sr,ssim_sr,apd_sr";

/// Cover vs stego (`cs`) and secret vs recovered secret (`sr`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub file: String,
    pub cover_stego: QualityReport,
    pub secret_recovery: QualityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
    /// Column means; PSNR averages the finite rows and is `Identical` only
    /// when every row is.
    pub mean: Option<(QualityReport, QualityReport)>,
}

fn mean_reports<'a>(reports: impl Iterator<Item = &'a QualityReport> + Clone) -> QualityReport {
    let n = reports.clone().count() as f64;
    let finite: Vec<f64> = reports.clone().filter_map(|r| r.psnr.db()).collect();
    let psnr = if finite.is_empty() { Psnr::Identical } else { Psnr::Db(finite.iter().sum::<f64>() / finite.len() as f64) };
    QualityReport {
        psnr,
        ssim: reports.clone().map(|r| r.ssim).sum::<f64>() / n,
        apd: reports.map(|r| r.apd).sum::<f64>() / n,
    }
}

impl EvalTable {
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let mean = (!rows.is_empty()).then(|| {
            (mean_reports(rows.iter().map(|r| &r.cover_stego)), mean_reports(rows.iter().map(|r| &r.secret_recovery)))
        });
        Self { rows, mean }
    }
}

/// Hides each pair's secret in its cover, reveals it from the written stego
/// file with a zero auxiliary input, and measures both directions on 8-bit
/// decodes.
pub fn evaluate_pairs<T: Scalar>(model: &EfdrModel<T>, pairs: &[LoadedPair]) -> Result<EvalTable, PipelineError> {
    let mut rows = Vec::with_capacity(pairs.len());
    for p in pairs {
        let st = hide(&p.cover, &p.secret, model)?;
        let cover_px = decode_rgb(&p.cover);
        let stego_px = decode_rgb(&st.stego_jpeg);
        let recovered = reveal(&st.stego_jpeg, model)?.quantized_to_u8_levels();
        rows.push(EvalRow {
            file: p.name.clone(),
            cover_stego: quality(&cover_px, &stego_px)?,
            secret_recovery: quality(&p.secret, &recovered)?,
        });
    }
    Ok(EvalTable::from_rows(rows))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_line(name: &str, cs: &QualityReport, sr: &QualityReport) -> String {
    format!(
        "{},{},{:.6},{:.6},{},{:.6},{:.6}",
        csv_field(name),
        cs.psnr,
        cs.ssim,
        cs.apd,
        sr.psnr,
        sr.ssim,
        sr.apd
    )
}

/// Header, one line per pair, then a `MEAN` line.
pub fn write_csv<W: Write>(table: &EvalTable, mut out: W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in &table.rows {
        writeln!(out, "{}", csv_line(&r.file, &r.cover_stego, &r.secret_recovery))?;
    }
    if let Some((cs, sr)) = &table.mean {
        writeln!(out, "{}", csv_line("MEAN", cs, sr))?;
    }
    Ok(())
}

pub fn write_json<W: Write>(table: &EvalTable, out: W) -> io::Result<()> {
    serde_json::to_writer_pretty(out, table).map_err(io::Error::from)
}

