//! Quick built-in checks: codec round trips, the DCT against its defining
//! sum, network bijectivity and finite-difference gradient checks.

use crate::jpeg::{decode_rgb, encode_rgb, parse, serialize, CoefficientImage, JpegFile, QuantTable};
use crate::network::{EfdrModel, ModelConfig, SubbandNorm, BRANCH_CHANNELS, TOTAL_CHANNELS};
use crate::synth::natural_image;
use crate::tensor::{gradcheck, Graph, ParamId, Tensor, TensorError, Var};
use crate::transform::{dct8x8_block, idct8x8_block, secret_to_subbands, subbands_to_secret_unclamped};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn codec_round_trip(rng: &mut ChaCha8Rng) -> CheckResult {
    let run = |rng: &mut ChaCha8Rng| -> Result<String, String> {
        let mut files = 0;
        for (i, qf) in [30u32, 75, 95].into_iter().enumerate() {
            let (h, w) = (16 + 8 * i, 24 + 8 * i);
            let f = encode_rgb(&natural_image(rng, h, w), qf).map_err(|e| e.to_string())?;
            let bytes = serialize(&f).map_err(|e| e.to_string())?;
            let back = parse(&bytes).map_err(|e| e.to_string())?;
            if back.coefficients != f.coefficients || back.quant_tables != f.quant_tables {
                return Err(format!("round trip differs at qf {qf}"));
            }
            let mut data = f.coefficients.data.clone();
            let k = 64 + 5;
            data[k] += 1;
            let mutated = parse(&serialize(&f.with_coefficients(data.clone()).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            let changed: Vec<usize> = (0..data.len()).filter(|&j| mutated.coefficients.data[j] != f.coefficients.data[j]).collect();
            if changed != [k] {
                return Err(format!("single mutation changed {changed:?}"));
            }
            files += 1;
        }
        let zero = JpegFile::from_coefficients(CoefficientImage::zeros(2, 2, [0, 1, 1]), QuantTable([16; 64]), QuantTable([17; 64]));
        let px = decode_rgb(&parse(&serialize(&zero).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?);
        if px.data.iter().any(|&v| v != 128.0) {
            return Err("all-zero coefficients do not decode to mid-gray".into());
        }
        Ok(format!("{files} files round-tripped"))
    };
    match run(rng) {
        Ok(d) => result("codec round trip", true, d),
        Err(d) => result("codec round trip", false, d),
    }
}

fn dct_oracle(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst = 0.0f64;
    let mut worst_rt = 0.0f64;
    for _ in 0..200 {
        let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-128.0..128.0)).collect();
        let mut fast = [0.0; 64];
        dct8x8_block(&x, &mut fast);
        for u in 0..8 {
            for v in 0..8 {
                let cu = if u == 0 { (1.0f64 / 8.0).sqrt() } else { 0.5 };
                let cv = if v == 0 { (1.0f64 / 8.0).sqrt() } else { 0.5 };
                let mut s = 0.0;
                for i in 0..8 {
                    for j in 0..8 {
                        s += x[i * 8 + j]
                            * ((2 * i + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos()
                            * ((2 * j + 1) as f64 * v as f64 * std::f64::consts::PI / 16.0).cos();
                    }
                }
                worst = worst.max((cu * cv * s - fast[u * 8 + v]).abs());
            }
        }
        let mut back = [0.0; 64];
        idct8x8_block(&fast, &mut back);
        worst_rt = worst_rt.max(back.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let img = natural_image(rng, 16, 16);
    let rt = subbands_to_secret_unclamped(&secret_to_subbands(&img).expect("aligned")).expect("192 channels");
    let secret_err = rt.data.iter().zip(&img.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let passed = worst < 1e-10 && worst_rt < 1e-10 && secret_err < 1e-6;
    result("dct oracle", passed, format!("direct-sum {worst:.2e}, inverse {worst_rt:.2e}, secret chain {secret_err:.2e}"))
}

fn small_config(n: usize) -> ModelConfig {
    ModelConfig { submodules: n, heads: 2, dim_attn: 16, dim_mlp: 32, ..ModelConfig::default() }
}

fn random_map(rng: &mut ChaCha8Rng, cols: usize, amp: f64) -> crate::transform::SubbandMap {
    let data = (0..BRANCH_CHANNELS * cols).map(|_| rng.gen_range(-amp..amp)).collect();
    crate::transform::SubbandMap::new(BRANCH_CHANNELS, 1, cols, data).expect("shape")
}

fn bijectivity(rng: &mut ChaCha8Rng) -> CheckResult {
    let run = |rng: &mut ChaCha8Rng| -> Result<(f64, f64), crate::network::NetworkError> {
        let mut model = EfdrModel::<f64>::new(small_config(3), rng)?;
        model.randomize(rng, 0.1)?;
        let c = random_map(rng, 4, 30.0);
        let s = random_map(rng, 4, 300.0);
        model.norm = SubbandNorm::fit([(&c, &s)])?;
        let (st, rf) = model.forward(&c, &s)?;
        let (cr, sr) = model.inverse(&st, &rf)?;
        let e64 = cr.max_abs_diff(&c).max(sr.max_abs_diff(&s));
        let m32 = model.cast::<f32>()?;
        let (st, rf) = m32.forward(&c, &s)?;
        let (cr, sr) = m32.inverse(&st, &rf)?;
        Ok((e64, cr.max_abs_diff(&c).max(sr.max_abs_diff(&s))))
    };
    match run(rng) {
        Ok((e64, e32)) => result("bijectivity", e64 < 1e-8 && e32 < 1e-3, format!("f64 {e64:.2e}, f32 {e32:.2e}")),
        Err(e) => result("bijectivity", false, e.to_string()),
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], amp: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-amp..amp)).collect()).expect("shape")
}

type OpFn = fn(&mut Graph<f64>, &[Var]) -> crate::tensor::Result<Var>;

fn gradient_checks(rng: &mut ChaCha8Rng) -> CheckResult {
    let a = rand_tensor(rng, &[3, 4], 1.0);
    let b = rand_tensor(rng, &[3, 4], 1.0);
    let sq = {
        let mut m = rand_tensor(rng, &[3, 3], 0.3);
        for i in 0..3 {
            m.data_mut()[i * 4] += 2.0;
        }
        m
    };
    let ops: Vec<(&str, OpFn, Vec<Tensor<f64>>)> = vec![
        ("mul", |g, v| g.mul(v[0], v[1]), vec![a.clone(), b.clone()]),
        ("exp", |g, v| g.exp(v[0]), vec![a.clone()]),
        ("tanh", |g, v| g.tanh(v[0]), vec![a.clone()]),
        ("gelu", |g, v| g.gelu(v[0]), vec![a.clone()]),
        ("matmul", |g, v| g.matmul(v[0], v[1]), vec![a.clone(), rand_tensor(rng, &[4, 2], 1.0)]),
        ("softmax", |g, v| g.softmax(v[0], 1), vec![a.clone()]),
        ("layer_norm", |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5), vec![a.clone(), rand_tensor(rng, &[4], 1.0), rand_tensor(rng, &[4], 1.0)]),
        ("inverse", |g, v| g.inverse(v[0]), vec![sq.clone()]),
        ("conv1x1", |g, v| g.conv1x1(v[0], v[1]), vec![rand_tensor(rng, &[3, 5], 1.0), sq]),
    ];
    let mut worst_op = 0.0f64;
    for (name, f, inputs) in &ops {
        match gradcheck(f, inputs, 1e-4, None, rng) {
            Ok(r) => worst_op = worst_op.max(r.rel_error),
            Err(e) => return result("gradient checks", false, format!("{name}: {e}")),
        }
    }
    let net = (|| -> Result<f64, String> {
        let mut model = EfdrModel::<f64>::new(small_config(1), rng).map_err(|e| e.to_string())?;
        model.randomize(rng, 0.05).map_err(|e| e.to_string())?;
        let std: Vec<f64> = (0..TOTAL_CHANNELS).map(|_| rng.gen_range(1.0..20.0)).collect();
        model.norm = SubbandNorm::from_std(&std).map_err(|e| e.to_string())?;
        let mut inputs = vec![rand_tensor(rng, &[BRANCH_CHANNELS, 2], 5.0), rand_tensor(rng, &[BRANCH_CHANNELS, 2], 5.0)];
        inputs.extend(model.params.iter().map(|(_, p)| p.value.clone()));
        let r = gradcheck(
            |g, v| {
                for (i, &var) in v[2..].iter().enumerate() {
                    g.bind(ParamId(i), var);
                }
                let (st, rf) = model.forward_graph(g, v[0], v[1]).map_err(|e| TensorError::Invalid(e.to_string()))?;
                let zero = g.constant(Tensor::zeros(&[BRANCH_CHANNELS, 2]));
                let (_, sr) = model.inverse_graph(g, st, zero).map_err(|e| TensorError::Invalid(e.to_string()))?;
                g.concat_rows(&[st, rf, sr])
            },
            &inputs,
            1e-4,
            Some(300),
            rng,
        )
        .map_err(|e| e.to_string())?;
        Ok(r.rel_error)
    })();
    match net {
        Ok(e) => result(
            "gradient checks",
            worst_op < 1e-4 && e < 1e-3,
            format!("{} ops worst {worst_op:.2e}, network {e:.2e}", ops.len()),
        ),
        Err(e) => result("gradient checks", false, format!("network: {e}")),
    }
}

/// Runs every check with a fixed seed.
pub fn run_all() -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);
    vec![codec_round_trip(&mut rng), dct_oracle(&mut rng), bijectivity(&mut rng), gradient_checks(&mut rng)]
}
