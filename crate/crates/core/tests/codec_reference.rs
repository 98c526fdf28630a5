//! Differential tests of the coefficient codec against libjpeg.

use efdr::jpeg::{self, make_quant_tables, parse, serialize, CoefficientImage, JpegError, JpegFile, AC_RANGE, DC_RANGE};
use efdr::synth::natural_image_rgb8;
use efdr_refjpeg::{self as refjpeg, EncodeOptions};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Sample {
    label: String,
    bytes: Vec<u8>,
}

/// At least fifty baseline files spanning sizes, qualities, restart
/// intervals and both standard and optimized Huffman tables.
fn corpus() -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let qualities = [5, 10, 25, 40, 50, 60, 75, 85, 90, 95, 98, 100];
    let restarts = [0, 0, 1, 2, 5, 17];
    let mut out = Vec::new();
    for i in 0..60 {
        let h = 8 * rng.gen_range(1..=12);
        let w = 8 * rng.gen_range(1..=12);
        let px = natural_image_rgb8(&mut rng, h, w);
        let opts = EncodeOptions {
            quality: qualities[i % qualities.len()],
            restart_interval: restarts[i % restarts.len()],
            optimize_coding: i % 2 == 1,
            progressive: false,
            subsample: false,
        };
        let bytes = refjpeg::encode_rgb(&px, w, h, opts).expect("libjpeg encode");
        out.push(Sample { label: format!("#{i} {h}x{w} {opts:?}"), bytes });
    }
    out
}

fn assert_matches_reference(file: &JpegFile, bytes: &[u8], label: &str) {
    let r = refjpeg::read_coefficients(bytes).expect("libjpeg read");
    assert_eq!((r.width, r.height, r.components), (file.width, file.height, 3), "{label}");
    let c = &file.coefficients;
    assert_eq!((r.height_in_blocks, r.width_in_blocks), (c.rows, c.cols), "{label}");
    for ch in 0..3 {
        assert_eq!(&r.quant[ch], file.channel_quant(ch).natural(), "{label} quant ch{ch}");
        for by in 0..c.rows {
            for bx in 0..c.cols {
                assert_eq!(r.block(ch, by, bx), c.block(ch, by, bx), "{label} block ({ch},{by},{bx})");
            }
        }
    }
}

#[test]
fn parse_matches_libjpeg_on_corpus() {
    let corpus = corpus();
    assert!(corpus.len() >= 50);
    for s in &corpus {
        let f = parse(&s.bytes).unwrap_or_else(|e| panic!("{}: {e}", s.label));
        assert_matches_reference(&f, &s.bytes, &s.label);
    }
}

#[test]
fn reencoded_files_are_read_identically_by_libjpeg() {
    for s in corpus() {
        let f = parse(&s.bytes).unwrap();
        let out = serialize(&f).unwrap();
        assert_matches_reference(&f, &out, &s.label);
        let g = parse(&out).unwrap();
        assert_eq!(g.coefficients, f.coefficients, "{}", s.label);
        assert_eq!(g.channel_quants(), f.channel_quants(), "{}", s.label);
        assert_eq!(serialize(&g).unwrap(), out, "serialization is a fixed point: {}", s.label);
    }
}

#[test]
fn single_coefficient_mutation_survives_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for s in corpus().iter().take(20) {
        let f = parse(&s.bytes).unwrap();
        let mut data = f.coefficients.data.clone();
        let idx = rng.gen_range(0..data.len());
        let (lo, hi) = if idx % 64 == 0 { DC_RANGE } else { AC_RANGE };
        data[idx] = if data[idx] < hi { data[idx] + 1 } else { lo };
        let mutated = f.with_coefficients(data.clone()).unwrap();
        let bytes = serialize(&mutated).unwrap();
        let back = parse(&bytes).unwrap();
        let diffs: Vec<usize> =
            (0..data.len()).filter(|&i| back.coefficients.data[i] != f.coefficients.data[i]).collect();
        assert_eq!(diffs, vec![idx], "{}", s.label);
        assert_matches_reference(&back, &bytes, &s.label);
    }
}

#[test]
fn all_zero_coefficients_decode_to_mid_gray() {
    let (l, c) = make_quant_tables(75).unwrap();
    let file = JpegFile::from_coefficients(CoefficientImage::zeros(3, 5, [0, 1, 1]), l, c);
    let bytes = serialize(&file).unwrap();
    for float_idct in [false, true] {
        let img = refjpeg::decode_rgb(&bytes, float_idct).unwrap();
        assert_eq!((img.width, img.height), (40, 24));
        assert!(img.pixels.iter().all(|&p| p == 128));
    }
}

#[test]
fn quant_tables_match_libjpeg_quality_scaling() {
    let px = vec![100u8; 8 * 8 * 3];
    for qf in 1..=100u32 {
        let bytes = refjpeg::encode_rgb(&px, 8, 8, EncodeOptions { quality: qf as i32, ..Default::default() }).unwrap();
        let r = refjpeg::read_coefficients(&bytes).unwrap();
        let (l, c) = make_quant_tables(qf).unwrap();
        assert_eq!(&r.quant[0], l.natural(), "luma qf={qf}");
        assert_eq!(&r.quant[1], c.natural(), "chroma qf={qf}");
    }
    assert_eq!(make_quant_tables(0), Err(JpegError::InvalidQuality(0)));
    assert_eq!(make_quant_tables(101), Err(JpegError::InvalidQuality(101)));
}

#[test]
fn own_pixel_decode_tracks_libjpeg() {
    for s in corpus().iter().step_by(3) {
        let f = parse(&s.bytes).unwrap();
        let ours = jpeg::decode_rgb(&f).to_rgb8();
        // Neither libjpeg IDCT is exact: the integer one rounds intermediate
        // stages and the float one loses range at very low qualities.
        let islow = refjpeg::decode_rgb(&s.bytes, false).unwrap().pixels;
        let float = refjpeg::decode_rgb(&s.bytes, true).unwrap().pixels;
        let diffs: Vec<i32> = (0..ours.len())
            .map(|i| {
                let o = ours[i] as i32;
                (o - islow[i] as i32).abs().min((o - float[i] as i32).abs())
            })
            .collect();
        let worst = *diffs.iter().max().unwrap();
        let mean = diffs.iter().sum::<i32>() as f64 / diffs.len() as f64;
        assert!(worst <= 2 && mean < 0.05, "{}: max diff {worst}, mean {mean:.3}", s.label);
    }
}

#[test]
fn own_encoder_output_is_valid_for_libjpeg() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let img = efdr::synth::natural_image(&mut rng, 32, 48);
    for qf in [10, 50, 75, 95, 100] {
        let f = jpeg::encode_rgb(&img, qf).unwrap();
        let bytes = serialize(&f).unwrap();
        assert_matches_reference(&f, &bytes, &format!("qf{qf}"));
    }
}

#[test]
fn rejects_progressive_and_subsampled_files() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let px = natural_image_rgb8(&mut rng, 32, 32);
    let prog = refjpeg::encode_rgb(&px, 32, 32, EncodeOptions { progressive: true, ..Default::default() }).unwrap();
    assert!(matches!(parse(&prog), Err(JpegError::UnsupportedFormat(_))));
    let sub = refjpeg::encode_rgb(&px, 32, 32, EncodeOptions { subsample: true, ..Default::default() }).unwrap();
    assert!(matches!(parse(&sub), Err(JpegError::UnsupportedFormat(_))));
    let odd = refjpeg::encode_rgb(&natural_image_rgb8(&mut rng, 12, 20), 20, 12, EncodeOptions::default()).unwrap();
    assert!(matches!(parse(&odd), Err(JpegError::UnsupportedFormat(_))));
}

#[test]
fn truncation_and_garbage_are_errors() {
    let s = &corpus()[7];
    for cut in [0, 1, 2, 20, s.bytes.len() / 2, s.bytes.len() - 2] {
        let r = parse(&s.bytes[..cut]);
        assert!(r.is_err(), "cut at {cut}");
    }
    assert_eq!(parse(&s.bytes[..s.bytes.len() / 2]), Err(JpegError::TruncatedFile));
    assert!(parse(b"definitely not a jpeg").is_err());
}

#[test]
fn extreme_coefficients_are_encodable() {
    let (l, c) = make_quant_tables(100).unwrap();
    let mut coefs = CoefficientImage::zeros(2, 3, [0, 1, 1]);
    for (i, v) in coefs.data.iter_mut().enumerate() {
        let (lo, hi) = if i % 64 == 0 { DC_RANGE } else { AC_RANGE };
        *v = if (i / 64 + i) % 2 == 0 { lo } else { hi };
    }
    let f = JpegFile::from_coefficients(coefs, l, c);
    let bytes = serialize(&f).unwrap();
    assert_matches_reference(&f, &bytes, "extremes");

    let mut bad = f.coefficients.data.clone();
    bad[64] = DC_RANGE.1 + 1;
    assert!(matches!(serialize(&f.with_coefficients(bad).unwrap()), Err(JpegError::Encodability(_))));
    let mut bad = f.coefficients.data.clone();
    bad[5] = AC_RANGE.0 - 1;
    assert!(matches!(serialize(&f.with_coefficients(bad).unwrap()), Err(JpegError::Encodability(_))));
}

fn coefficient_strategy() -> impl Strategy<Value = (usize, usize, Vec<i16>, u32)> {
    (1usize..4, 1usize..4, 1u32..=100).prop_flat_map(|(r, c, q)| {
        let n = 3 * r * c * 64;
        let sparse = prop_oneof![
            6 => Just(0i16),
            3 => -8i16..=8,
            1 => AC_RANGE.0..=AC_RANGE.1,
        ];
        (Just(r), Just(c), prop::collection::vec(sparse, n), Just(q))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn serialize_round_trips_any_in_range_coefficients((rows, cols, mut data, qf) in coefficient_strategy()) {
        for i in (0..data.len()).step_by(64) {
            data[i] = data[i].clamp(DC_RANGE.0, DC_RANGE.1);
        }
        let (l, c) = make_quant_tables(qf).unwrap();
        let mut coefs = CoefficientImage::zeros(rows, cols, [0, 1, 1]);
        coefs.data = data;
        let f = JpegFile::from_coefficients(coefs, l, c);
        let bytes = serialize(&f).unwrap();
        let back = parse(&bytes).unwrap();
        prop_assert_eq!(&back.coefficients, &f.coefficients);
        let r = refjpeg::read_coefficients(&bytes).unwrap();
        for ch in 0..3 {
            for by in 0..rows {
                for bx in 0..cols {
                    prop_assert_eq!(r.block(ch, by, bx), f.coefficients.block(ch, by, bx));
                }
            }
        }
    }
}
