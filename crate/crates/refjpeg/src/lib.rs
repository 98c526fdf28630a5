//! Safe wrappers over a handful of libjpeg entry points.
//!
//! This crate exists so that the codec in `efdr-core` can be checked against
//! an independent, widely deployed implementation: coefficient dumps via
//! `jpeg_read_coefficients`, pixel decodes, and an encoder for building test
//! corpora.

use std::ffi::{c_char, c_int, c_uchar, c_ulong, c_ushort, c_void, CStr};

extern "C" {
    fn refjpeg_read_coefficients(
        data: *const c_uchar,
        len: c_ulong,
        out_w: *mut c_int,
        out_h: *mut c_int,
        out_comps: *mut c_int,
        out_wb: *mut c_int,
        out_hb: *mut c_int,
        out_coefs: *mut *mut i16,
        out_quant: *mut c_ushort,
        errbuf: *mut c_char,
        errlen: c_int,
    ) -> c_int;
    fn refjpeg_decode_rgb(
        data: *const c_uchar,
        len: c_ulong,
        float_idct: c_int,
        out_w: *mut c_int,
        out_h: *mut c_int,
        out_pixels: *mut *mut c_uchar,
        errbuf: *mut c_char,
        errlen: c_int,
    ) -> c_int;
    fn refjpeg_encode_rgb(
        pixels: *const c_uchar,
        w: c_int,
        h: c_int,
        quality: c_int,
        restart_interval: c_int,
        optimize: c_int,
        progressive: c_int,
        subsample: c_int,
        out_data: *mut *mut c_uchar,
        out_len: *mut c_ulong,
        errbuf: *mut c_char,
        errlen: c_int,
    ) -> c_int;
    fn refjpeg_free(p: *mut c_void);
}

/// Error reported by libjpeg.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefError(pub String);

impl std::fmt::Display for RefError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "libjpeg: {}", self.0)
    }
}

impl std::error::Error for RefError {}

fn err_from(buf: &[c_char]) -> RefError {
    // SAFETY: the shim always NUL-terminates via snprintf.
    let msg = unsafe { CStr::from_ptr(buf.as_ptr()) };
    RefError(msg.to_string_lossy().into_owned())
}

/// Quantized coefficients as libjpeg sees them.
#[derive(Debug, Clone)]
pub struct RefCoefficients {
    pub width: usize,
    pub height: usize,
    pub components: usize,
    pub width_in_blocks: usize,
    pub height_in_blocks: usize,
    /// `[component][by][bx][k]`, natural order, flattened.
    pub coefficients: Vec<i16>,
    /// One natural-order quant table per component.
    pub quant: Vec<[u16; 64]>,
}

impl RefCoefficients {
    pub fn block(&self, comp: usize, by: usize, bx: usize) -> &[i16] {
        let idx = ((comp * self.height_in_blocks + by) * self.width_in_blocks + bx) * 64;
        &self.coefficients[idx..idx + 64]
    }
}

pub fn read_coefficients(data: &[u8]) -> Result<RefCoefficients, RefError> {
    let (mut w, mut h, mut comps, mut wb, mut hb) = (0, 0, 0, 0, 0);
    let mut coefs: *mut i16 = std::ptr::null_mut();
    let mut quant = [0u16; 256];
    let mut errbuf = [0 as c_char; 256];
    // SAFETY: all out-pointers reference live locals; the shim allocates
    // `coefs` with malloc on success.
    let rc = unsafe {
        refjpeg_read_coefficients(
            data.as_ptr(),
            data.len() as c_ulong,
            &mut w,
            &mut h,
            &mut comps,
            &mut wb,
            &mut hb,
            &mut coefs,
            quant.as_mut_ptr(),
            errbuf.as_mut_ptr(),
            errbuf.len() as c_int,
        )
    };
    if rc != 0 {
        return Err(err_from(&errbuf));
    }
    let n = comps as usize * wb as usize * hb as usize * 64;
    // SAFETY: the shim allocated exactly n shorts.
    let coefficients = unsafe { std::slice::from_raw_parts(coefs, n).to_vec() };
    unsafe { refjpeg_free(coefs as *mut c_void) };
    let quant = (0..comps as usize)
        .map(|c| {
            let mut t = [0u16; 64];
            t.copy_from_slice(&quant[c * 64..c * 64 + 64]);
            t
        })
        .collect();
    Ok(RefCoefficients {
        width: w as usize,
        height: h as usize,
        components: comps as usize,
        width_in_blocks: wb as usize,
        height_in_blocks: hb as usize,
        coefficients,
        quant,
    })
}

/// Decoded interleaved RGB image.
#[derive(Debug, Clone)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn decode_rgb(data: &[u8], float_idct: bool) -> Result<RgbImage, RefError> {
    let (mut w, mut h) = (0, 0);
    let mut px: *mut c_uchar = std::ptr::null_mut();
    let mut errbuf = [0 as c_char; 256];
    // SAFETY: see read_coefficients.
    let rc = unsafe {
        refjpeg_decode_rgb(
            data.as_ptr(),
            data.len() as c_ulong,
            float_idct as c_int,
            &mut w,
            &mut h,
            &mut px,
            errbuf.as_mut_ptr(),
            errbuf.len() as c_int,
        )
    };
    if rc != 0 {
        return Err(err_from(&errbuf));
    }
    let n = w as usize * h as usize * 3;
    let pixels = unsafe { std::slice::from_raw_parts(px, n).to_vec() };
    unsafe { refjpeg_free(px as *mut c_void) };
    Ok(RgbImage { width: w as usize, height: h as usize, pixels })
}

/// Encoder knobs exposed for corpus generation.
#[derive(Debug, Clone, Copy)]
pub struct EncodeOptions {
    pub quality: i32,
    pub restart_interval: u32,
    pub optimize_coding: bool,
    pub progressive: bool,
    /// Use libjpeg's default 2x2 chroma subsampling instead of 4:4:4.
    pub subsample: bool,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self { quality: 75, restart_interval: 0, optimize_coding: false, progressive: false, subsample: false }
    }
}

pub fn encode_rgb(
    pixels: &[u8],
    width: usize,
    height: usize,
    opts: EncodeOptions,
) -> Result<Vec<u8>, RefError> {
    assert_eq!(pixels.len(), width * height * 3, "pixel buffer size");
    let mut out: *mut c_uchar = std::ptr::null_mut();
    let mut len: c_ulong = 0;
    let mut errbuf = [0 as c_char; 256];
    // SAFETY: see read_coefficients; libjpeg allocates the output with malloc.
    let rc = unsafe {
        refjpeg_encode_rgb(
            pixels.as_ptr(),
            width as c_int,
            height as c_int,
            opts.quality,
            opts.restart_interval as c_int,
            opts.optimize_coding as c_int,
            opts.progressive as c_int,
            opts.subsample as c_int,
            &mut out,
            &mut len,
            errbuf.as_mut_ptr(),
            errbuf.len() as c_int,
        )
    };
    if rc != 0 {
        return Err(err_from(&errbuf));
    }
    let bytes = unsafe { std::slice::from_raw_parts(out, len as usize).to_vec() };
    unsafe { refjpeg_free(out as *mut c_void) };
    Ok(bytes)
}
