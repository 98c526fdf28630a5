//! Prepared corpus layout: `covers/*.jpg`, `secrets/*.png` and a
//! tab-separated `manifest.tsv` listing one cover/secret pair per line.

use super::PipelineError;
use crate::jpeg::{encode_rgb, parse, serialize, JpegFile};
use crate::transform::PlanarImage;
use std::fs;
use std::path::{Path, PathBuf};

pub const MANIFEST: &str = "manifest.tsv";
const MANIFEST_HEADER: &str = "cover\tsecret";

/// Top-left corner of a centred `crop`x`crop` window.
pub fn center_crop_window(height: usize, width: usize, crop: usize) -> Option<(usize, usize)> {
    (height >= crop && width >= crop).then(|| ((height - crop) / 2, (width - crop) / 2))
}

pub fn read_rgb_image(path: &Path) -> Result<PlanarImage, PipelineError> {
    let img = image::open(path).map_err(|e| PipelineError::Image { path: path.into(), message: e.to_string() })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(PlanarImage::from_rgb8(h as usize, w as usize, rgb.as_raw())?)
}

/// Writes the image, rounded and clamped to 8 bits, as an RGB PNG.
pub fn write_png(path: &Path, img: &PlanarImage) -> Result<(), PipelineError> {
    image::save_buffer_with_format(
        path,
        &img.to_rgb8(),
        img.width as u32,
        img.height as u32,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| PipelineError::Image { path: path.into(), message: e.to_string() })
}

fn crop(img: &PlanarImage, top: usize, left: usize, size: usize) -> PlanarImage {
    let mut out = PlanarImage::filled(img.colorspace, size, size, 0.0);
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                out.set(c, y, x, img.get(c, top + y, left + x));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrepareSummary {
    pub written: usize,
    /// Source files left out, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

fn is_image_file(path: &Path) -> bool {
    let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
    matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg"))
}

/// Centre-crops every image in `src_dir`, writes the crop as a baseline
/// 4:4:4 cover at quality `qf` and as a lossless secret, and pairs cover `i`
/// with secret `i + 1` (cyclically) in the manifest.
pub fn prepare_dataset(src_dir: &Path, out_dir: &Path, qf: u32, crop_size: usize) -> Result<PrepareSummary, PipelineError> {
    crate::jpeg::make_quant_tables(qf)?;
    if crop_size == 0 || crop_size % 8 != 0 {
        return Err(PipelineError::Config(format!("crop {crop_size} must be a positive multiple of 8")));
    }
    let mut sources: Vec<PathBuf> = fs::read_dir(src_dir)
        .map_err(|e| PipelineError::io(src_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    sources.sort();
    let covers = out_dir.join("covers");
    let secrets = out_dir.join("secrets");
    for d in [&covers, &secrets] {
        fs::create_dir_all(d).map_err(|e| PipelineError::io(d, e))?;
    }
    let mut summary = PrepareSummary::default();
    let mut names = Vec::new();
    for src in &sources {
        let img = match read_rgb_image(src) {
            Ok(img) => img,
            Err(PipelineError::Image { message, .. }) => {
                summary.skipped.push((src.clone(), message));
                continue;
            }
            Err(e) => {
                summary.skipped.push((src.clone(), e.to_string()));
                continue;
            }
        };
        let Some((top, left)) = center_crop_window(img.height, img.width, crop_size) else {
            summary.skipped.push((src.clone(), format!("{}x{} is smaller than the {crop_size}x{crop_size} crop", img.height, img.width)));
            continue;
        };
        let patch = crop(&img, top, left, crop_size);
        let stem = src.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let name = format!("{:05}_{stem}", names.len());
        let jpg = serialize(&encode_rgb(&patch, qf)?)?;
        let cover_path = covers.join(format!("{name}.jpg"));
        fs::write(&cover_path, jpg).map_err(|e| PipelineError::io(&cover_path, e))?;
        write_png(&secrets.join(format!("{name}.png")), &patch)?;
        names.push(name);
    }
    let n = names.len();
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for i in 0..n {
        manifest.push_str(&format!("covers/{}.jpg\tsecrets/{}.png\n", names[i], names[(i + 1) % n]));
    }
    let mpath = out_dir.join(MANIFEST);
    fs::write(&mpath, manifest).map_err(|e| PipelineError::io(&mpath, e))?;
    summary.written = n;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairEntry {
    pub cover: PathBuf,
    pub secret: PathBuf,
}

/// A cover file and its secret image, loaded.
#[derive(Debug, Clone)]
pub struct LoadedPair {
    pub name: String,
    pub cover: JpegFile,
    pub secret: PlanarImage,
}

/// A prepared corpus, as listed by its manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub pairs: Vec<PairEntry>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, PipelineError> {
        let mpath = root.join(MANIFEST);
        let text = fs::read_to_string(&mpath).map_err(|e| PipelineError::io(&mpath, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(PipelineError::Dataset(format!("{}: missing header line", mpath.display())));
        }
        let mut pairs = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (c, s) = line
                .split_once('\t')
                .ok_or_else(|| PipelineError::Dataset(format!("{} line {}: expected two columns", mpath.display(), i + 2)))?;
            pairs.push(PairEntry { cover: root.join(c), secret: root.join(s) });
        }
        if pairs.is_empty() {
            return Err(PipelineError::Dataset(format!("{} lists no pairs", mpath.display())));
        }
        Ok(Self { root: root.to_path_buf(), pairs })
    }

    /// Reads and parses every pair; all images must share one size.
    pub fn load(&self) -> Result<Vec<LoadedPair>, PipelineError> {
        let mut out: Vec<LoadedPair> = Vec::with_capacity(self.pairs.len());
        for p in &self.pairs {
            let bytes = fs::read(&p.cover).map_err(|e| PipelineError::io(&p.cover, e))?;
            let cover = parse(&bytes).map_err(|e| PipelineError::Image { path: p.cover.clone(), message: e.to_string() })?;
            let secret = read_rgb_image(&p.secret)?;
            if (cover.height, cover.width) != (secret.height, secret.width) {
                return Err(PipelineError::Dataset(format!(
                    "{}: cover {}x{} and secret {}x{} differ",
                    p.cover.display(),
                    cover.height,
                    cover.width,
                    secret.height,
                    secret.width
                )));
            }
            if let Some(first) = out.first() {
                if (first.cover.height, first.cover.width) != (cover.height, cover.width) {
                    return Err(PipelineError::Dataset(format!(
                        "non-uniform image sizes: {}x{} and {}x{}",
                        first.cover.height, first.cover.width, cover.height, cover.width
                    )));
                }
            }
            let name = p.cover.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
            out.push(LoadedPair { name, cover, secret });
        }
        Ok(out)
    }
}
