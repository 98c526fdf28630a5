//! Text dumps of JPEG files and tensor containers.

use crate::error::CliError;
use efdr::jpeg::JpegFile;
use efdr::network::TensorFile;
use efdr::pipeline::coefficients_to_subbands;
use efdr::transform::SubbandMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

const CHANNEL_NAMES: [&str; 3] = ["Y", "Cb", "Cr"];

/// Magnitude bins: 0, 1, 2-3, 4-7, ..., 512-1024.
fn bin_of(v: i16) -> usize {
    let m = v.unsigned_abs() as u32;
    if m == 0 {
        0
    } else {
        (32 - m.leading_zeros()) as usize
    }
}

fn bin_label(b: usize) -> String {
    match b {
        0 => "0".into(),
        1 => "1".into(),
        _ => format!("{}-{}", 1u32 << (b - 1), (1u32 << b) - 1),
    }
}

pub fn describe_jpeg(f: &JpegFile) -> String {
    let mut s = String::new();
    let c = &f.coefficients;
    let _ = writeln!(s, "size {}x{} (height x width), blocks {}x{}", f.height, f.width, c.rows, c.cols);
    let _ = writeln!(s, "restart interval {}", f.restart_interval.map_or("none".to_string(), |r| r.to_string()));
    for (i, comp) in f.components.iter().enumerate() {
        let _ = writeln!(
            s,
            "component {} id {} quant {} huffman dc {} ac {}",
            CHANNEL_NAMES[i], comp.id, comp.quant_table, comp.dc_table, comp.ac_table
        );
    }
    for (slot, t) in f.quant_tables.iter().enumerate() {
        if let Some(t) = t {
            let _ = writeln!(s, "quant table {slot}");
            for row in t.natural().chunks(8) {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:4}")).collect();
                let _ = writeln!(s, "  {}", cells.join(""));
            }
        }
    }
    for ch in 0..3 {
        let mut dc = Vec::new();
        let mut bins = [0usize; 12];
        for by in 0..c.rows {
            for bx in 0..c.cols {
                let b = c.block(ch, by, bx);
                dc.push(b[0]);
                for &v in &b[1..] {
                    bins[bin_of(v)] += 1;
                }
            }
        }
        let (lo, hi) = (dc.iter().min().copied().unwrap_or(0), dc.iter().max().copied().unwrap_or(0));
        let _ = writeln!(s, "{} dc min {lo} max {hi}", CHANNEL_NAMES[ch]);
        let last = bins.iter().rposition(|&n| n > 0).unwrap_or(0);
        let cells: Vec<String> = (0..=last).map(|b| format!("{}:{}", bin_label(b), bins[b])).collect();
        let _ = writeln!(s, "{} ac |value| histogram {}", CHANNEL_NAMES[ch], cells.join(" "));
    }
    s
}

pub fn describe_subband(map: &SubbandMap, k: usize) -> String {
    let plane = &map.data[k * map.positions()..(k + 1) * map.positions()];
    let min = plane.iter().copied().fold(f64::INFINITY, f64::min);
    let max = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = plane.iter().sum::<f64>() / plane.len() as f64;
    let nonzero = plane.iter().filter(|&&v| v != 0.0).count();
    let (c, f) = (k / 64, k % 64);
    format!(
        "sub-band {k} ({} u {} v {}): {}x{} min {min} max {max} mean {mean:.4} nonzero {nonzero}\n",
        CHANNEL_NAMES[c],
        f / 8,
        f % 8,
        map.rows,
        map.cols
    )
}

/// Binary PGM of one sub-band, linearly stretched from its minimum (0) to
/// its maximum (255); a constant plane is written as 128.
pub fn subband_pgm(map: &SubbandMap, k: usize) -> Vec<u8> {
    let plane = &map.data[k * map.positions()..(k + 1) * map.positions()];
    let min = plane.iter().copied().fold(f64::INFINITY, f64::min);
    let max = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{} {}\n255\n", map.cols, map.rows).into_bytes();
    out.extend(plane.iter().map(|&v| if max > min { ((v - min) / (max - min) * 255.0).round() as u8 } else { 128 }));
    out
}

pub fn describe_container(f: &TensorFile) -> String {
    let mut s = String::new();
    for (k, v) in &f.meta {
        let _ = writeln!(s, "{k} = {v}");
    }
    let total: usize = f.tensors.iter().map(|(_, t)| t.len()).sum();
    let _ = writeln!(s, "{} tensors, {total} values", f.tensors.len());
    for (name, t) in &f.tensors {
        let _ = writeln!(s, "  {name} {:?}", t.shape());
    }
    s
}

/// Dumps `path`; with `subband`, also describes that sub-band and, with
/// `pgm`, writes it as an image.
pub fn run(path: &Path, subband: Option<usize>, pgm: Option<&Path>) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.starts_with(efdr::network::MAGIC) {
        if subband.is_some() || pgm.is_some() {
            return Err(CliError::Usage("--subband and --pgm apply to JPEG files only".into()));
        }
        return Ok(describe_container(&TensorFile::from_bytes(&bytes)?));
    }
    let f = efdr::jpeg::parse(&bytes)?;
    let mut s = describe_jpeg(&f);
    if let Some(k) = subband {
        let map = coefficients_to_subbands(&f.coefficients);
        s.push_str(&describe_subband(&map, k));
        if let Some(p) = pgm {
            fs::write(p, subband_pgm(&map, k)).map_err(|e| CliError::io(p, e))?;
        }
    } else if pgm.is_some() {
        return Err(CliError::Usage("--pgm requires --subband".into()));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn magnitude_bins() {
        assert_eq!(bin_of(0), 0);
        assert_eq!(bin_of(-1), 1);
        assert_eq!(bin_of(3), 2);
        assert_eq!(bin_of(4), 3);
        assert_eq!(bin_of(-1024), 11);
        assert_eq!(bin_label(3), "4-7");
    }

    #[test]
    fn pgm_stretches_to_full_range() {
        let map = SubbandMap::new(64, 1, 3, (0..192).map(|i| i as f64).collect()).unwrap();
        let pgm = subband_pgm(&map, 1);
        assert!(pgm.starts_with(b"P5\n3 1\n255\n"));
        assert_eq!(&pgm[pgm.len() - 3..], &[0, 128, 255]);
    }
}
