use crate::error::CliError;
use efdr::jpeg::{parse, serialize, JpegFile};
use efdr::metrics::{evaluate_pairs, write_csv, write_json};
use efdr::network::{map_to_tensor, tensor_to_map, EfdrModel, ModelConfig, SubbandNorm, TensorFile, BRANCH_CHANNELS};
use efdr::pipeline::{
    coefficients_to_subbands, hide as hide_pair, prepare_dataset, read_rgb_image, reveal as reveal_zero, reveal_with_aux,
    train as train_model, write_png, Dataset, TrainConfig, CHECKPOINT_NAME, LOG_NAME,
};
use efdr::selftest::run_all;
use efdr::transform::{secret_to_subbands, SubbandMap};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

/// `kind` of the container written by `hide --dump-rf`.
pub const RF_KIND: &str = "r_f";

fn read_jpeg(path: &Path) -> Result<JpegFile, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    parse(&bytes).map_err(|e| CliError::Jpeg(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<EfdrModel<f32>, CliError> {
    EfdrModel::load(path).map_err(|e| CliError::Model(format!("{}: {e}", path.display())))
}

pub fn prepare(src: &Path, out: &Path, qf: u32, crop: usize) -> Result<(), CliError> {
    let summary = prepare_dataset(src, out, qf, crop)?;
    for (path, why) in &summary.skipped {
        eprintln!("warning: skipped {}: {why}", path.display());
    }
    println!("prepared {} pairs, skipped {} files", summary.written, summary.skipped.len());
    if summary.written == 0 {
        return Err(CliError::Dataset(format!("no usable images in {}", src.display())));
    }
    Ok(())
}

pub fn train(data: &Path, out: &Path, cfg: &TrainConfig, init: Option<&Path>, quiet: bool) -> Result<(), CliError> {
    cfg.validate()?;
    let dataset = Dataset::open(data)?;
    let init = init.map(load_model).transpose()?;
    let outcome = train_model(cfg, &dataset, out, init, |r| {
        if !quiet {
            println!(
                "epoch {} l_hi {:.4} l_re {:.4} l_total {:.4} val {:.4} lr {:e}",
                r.epoch, r.l_hi, r.l_re, r.l_total, r.val_l_total, r.lr
            );
        }
    })?;
    if !quiet {
        println!("{} epochs; wrote {} and {}", outcome.records.len(), out.join(CHECKPOINT_NAME).display(), out.join(LOG_NAME).display());
    }
    Ok(())
}

pub fn init(out: &Path, cfg: ModelConfig, seed: u64, fit: Option<&Path>, randomize: Option<f64>) -> Result<(), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = EfdrModel::<f32>::new(cfg, &mut rng)?;
    if let Some(data) = fit {
        let pairs = Dataset::open(data)?.load()?;
        let mut maps = Vec::with_capacity(pairs.len());
        for p in &pairs {
            maps.push((coefficients_to_subbands(&p.cover.coefficients), secret_to_subbands(&p.secret).map_err(efdr::pipeline::PipelineError::from)?));
        }
        model.norm = SubbandNorm::fit(maps.iter().map(|(c, s)| (c, s)))?;
    }
    if let Some(amp) = randomize {
        model.randomize(&mut rng, amp)?;
    }
    model.save(out, &[("init.seed".into(), seed.to_string())])?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn hide(cover: &Path, secret: &Path, model: &Path, out: &Path, dump_rf: Option<&Path>) -> Result<(), CliError> {
    let cover_file = read_jpeg(cover)?;
    let secret_img = read_rgb_image(secret)?;
    let model = load_model(model)?;
    let r = hide_pair(&cover_file, &secret_img, &model)?;
    fs::write(out, serialize(&r.stego_jpeg)?).map_err(|e| CliError::io(out, e))?;
    if let Some(p) = dump_rf {
        let meta = vec![
            ("kind".to_string(), RF_KIND.to_string()),
            ("rows".to_string(), r.r_f.rows.to_string()),
            ("cols".to_string(), r.r_f.cols.to_string()),
        ];
        let file = TensorFile { meta, tensors: vec![(RF_KIND.to_string(), map_to_tensor::<f32>(&r.r_f))] };
        file.write(p).map_err(|e| CliError::io(p, e))?;
    }
    println!("prequant_psnr {} postquant_psnr {}", r.prequant_psnr, r.postquant_psnr);
    Ok(())
}

fn read_aux(path: &Path, rows: usize, cols: usize) -> Result<SubbandMap, CliError> {
    let file = TensorFile::read(path).map_err(|e| CliError::Model(format!("{}: {e}", path.display())))?;
    if file.meta("kind") != Some(RF_KIND) {
        return Err(CliError::Model(format!("{}: not an r_f tensor file", path.display())));
    }
    let t = file.tensor(RF_KIND).ok_or_else(|| CliError::Model(format!("{}: missing r_f tensor", path.display())))?;
    if t.shape() != [BRANCH_CHANNELS, rows * cols] {
        return Err(CliError::Model(format!(
            "{}: r_f has shape {:?}, stego needs [{BRANCH_CHANNELS}, {}]",
            path.display(),
            t.shape(),
            rows * cols
        )));
    }
    Ok(tensor_to_map(t, rows, cols)?)
}

pub fn reveal(stego: &Path, model: &Path, out: &Path, aux: &str) -> Result<(), CliError> {
    let stego_file = read_jpeg(stego)?;
    let model = load_model(model)?;
    let img = if aux == "zero" {
        reveal_zero(&stego_file, &model)?
    } else {
        let c = &stego_file.coefficients;
        reveal_with_aux(&stego_file, &read_aux(Path::new(aux), c.rows, c.cols)?, &model)?
    };
    write_png(out, &img)?;
    Ok(())
}

pub fn eval(data: &Path, model: &Path, out: &Path, json: Option<&Path>) -> Result<(), CliError> {
    let pairs = Dataset::open(data)?.load()?;
    let model = load_model(model)?;
    let table = evaluate_pairs(&model, &pairs)?;
    let f = File::create(out).map_err(|e| CliError::io(out, e))?;
    write_csv(&table, BufWriter::new(f)).map_err(|e| CliError::io(out, e))?;
    if let Some(p) = json {
        let f = File::create(p).map_err(|e| CliError::io(p, e))?;
        write_json(&table, BufWriter::new(f)).map_err(|e| CliError::io(p, e))?;
    }
    if let Some((cs, sr)) = &table.mean {
        println!(
            "{} pairs; cover/stego psnr {} ssim {:.4} apd {:.4}; secret/recovered psnr {} ssim {:.4} apd {:.4}",
            table.rows.len(),
            cs.psnr,
            cs.ssim,
            cs.apd,
            sr.psnr,
            sr.ssim,
            sr.apd
        );
    }
    Ok(())
}

pub fn selftest() -> Result<(), CliError> {
    let results = run_all();
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::SelfTest(format!("{failed} of {} checks failed", results.len())));
    }
    Ok(())
}
