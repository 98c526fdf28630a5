use super::huffman::{build_optimal, EncodeTable};
use super::{HuffmanSpec, JpegError, JpegFile, ZIGZAG};

struct BitWriter {
    out: Vec<u8>,
    acc: u32,
    nbits: u32,
}

impl BitWriter {
    fn put(&mut self, value: u32, n: u32) {
        debug_assert!(n <= 16);
        for i in (0..n).rev() {
            self.acc = (self.acc << 1) | ((value >> i) & 1);
            self.nbits += 1;
            if self.nbits == 8 {
                let b = self.acc as u8;
                self.out.push(b);
                if b == 0xFF {
                    self.out.push(0x00);
                }
                self.acc = 0;
                self.nbits = 0;
            }
        }
    }

    /// Pads the final byte with one bits.
    fn flush(&mut self) {
        if self.nbits > 0 {
            let pad = 8 - self.nbits;
            self.put((1 << pad) - 1, pad);
        }
    }
}

#[inline]
fn category(v: i32) -> u32 {
    32 - v.unsigned_abs().leading_zeros()
}

#[inline]
fn magnitude_bits(v: i32, s: u32) -> u32 {
    if v < 0 {
        ((v - 1) as u32) & ((1 << s) - 1)
    } else {
        v as u32
    }
}

/// Runs `emit(is_dc, symbol, extra_value, extra_bits)` over the Huffman
/// symbols of one block.
fn block_symbols(block: &[i16], pred: &mut i32, mut emit: impl FnMut(bool, u8, i32, u32)) {
    let dc = block[0] as i32;
    let diff = dc - *pred;
    *pred = dc;
    let s = category(diff);
    emit(true, s as u8, diff, s);

    let mut run = 0u8;
    for &n in &ZIGZAG[1..] {
        let v = block[n] as i32;
        if v == 0 {
            run += 1;
            continue;
        }
        while run >= 16 {
            emit(false, 0xF0, 0, 0);
            run -= 16;
        }
        let s = category(v);
        emit(false, (run << 4) | s as u8, v, s);
        run = 0;
    }
    if run > 0 {
        emit(false, 0x00, 0, 0);
    }
}

fn push_segment(out: &mut Vec<u8>, marker: u8, payload: &[u8]) {
    out.extend_from_slice(&[0xFF, marker]);
    out.extend_from_slice(&((payload.len() + 2) as u16).to_be_bytes());
    out.extend_from_slice(payload);
}

fn dht_payload(class: u8, id: u8, spec: &HuffmanSpec) -> Vec<u8> {
    let mut p = vec![(class << 4) | id];
    p.extend_from_slice(&spec.counts);
    p.extend_from_slice(&spec.symbols);
    p
}

/// Writes a baseline JFIF file carrying `file`'s coefficients and quant
/// tables. Huffman tables are rebuilt from the coefficient statistics (one
/// pair for luma, one shared by both chroma channels) and no restart
/// markers are emitted.
pub fn serialize(file: &JpegFile) -> Result<Vec<u8>, JpegError> {
    let coefs = &file.coefficients;
    if coefs.rows * 8 != file.height || coefs.cols * 8 != file.width || coefs.data.len() != 3 * coefs.rows * coefs.cols * 64 {
        return Err(JpegError::ShapeMismatch("coefficient grid does not match image size".into()));
    }
    if file.width > u16::MAX as usize || file.height > u16::MAX as usize || file.width == 0 || file.height == 0 {
        return Err(JpegError::ShapeMismatch(format!("{}x{} not encodable", file.width, file.height)));
    }
    if let Some((i, v)) = coefs.find_out_of_range() {
        let (c, rest) = (i / (coefs.rows * coefs.cols * 64), i % 64);
        return Err(JpegError::Encodability(format!(
            "channel {c} coefficient {rest} has value {v} outside baseline range"
        )));
    }
    let mut used_q = [false; 4];
    for comp in &file.components {
        let q = file.quant_tables[comp.quant_table as usize]
            .as_ref()
            .ok_or_else(|| JpegError::ShapeMismatch(format!("missing quant table {}", comp.quant_table)))?;
        if q.0.iter().any(|&v| v == 0 || v > 255) {
            return Err(JpegError::Encodability("quant step outside 1..=255".into()));
        }
        used_q[comp.quant_table as usize] = true;
    }

    // Channel 0 uses table pair 0, channels 1 and 2 share pair 1.
    let class_of = |c: usize| usize::from(c > 0);
    let mut dc_freq = [[0u32; 256]; 2];
    let mut ac_freq = [[0u32; 256]; 2];
    let blocks = coefs.rows * coefs.cols;
    let mut preds = [0i32; 3];
    for b in 0..blocks {
        let (by, bx) = (b / coefs.cols, b % coefs.cols);
        for c in 0..3 {
            let k = class_of(c);
            block_symbols(coefs.block(c, by, bx), &mut preds[c], |is_dc, sym, _, _| {
                if is_dc {
                    dc_freq[k][sym as usize] += 1;
                } else {
                    ac_freq[k][sym as usize] += 1;
                }
            });
        }
    }
    let dc_specs = [build_optimal(&dc_freq[0]), build_optimal(&dc_freq[1])];
    let ac_specs = [build_optimal(&ac_freq[0]), build_optimal(&ac_freq[1])];
    let dc_tabs = [EncodeTable::new(&dc_specs[0])?, EncodeTable::new(&dc_specs[1])?];
    let ac_tabs = [EncodeTable::new(&ac_specs[0])?, EncodeTable::new(&ac_specs[1])?];

    let mut out = Vec::with_capacity(1024 + coefs.data.len() / 4);
    out.extend_from_slice(&[0xFF, 0xD8]);
    push_segment(&mut out, 0xE0, &[b'J', b'F', b'I', b'F', 0, 1, 1, 0, 0, 1, 0, 1, 0, 0]);
    for (id, used) in used_q.iter().enumerate() {
        if *used {
            let mut p = vec![id as u8];
            p.extend(file.quant_tables[id].unwrap().zigzag().iter().map(|&v| v as u8));
            push_segment(&mut out, 0xDB, &p);
        }
    }
    let mut sof = vec![8];
    sof.extend_from_slice(&(file.height as u16).to_be_bytes());
    sof.extend_from_slice(&(file.width as u16).to_be_bytes());
    sof.push(3);
    for comp in &file.components {
        sof.extend_from_slice(&[comp.id, 0x11, comp.quant_table]);
    }
    push_segment(&mut out, 0xC0, &sof);
    for k in 0..2u8 {
        push_segment(&mut out, 0xC4, &dht_payload(0, k, &dc_specs[k as usize]));
        push_segment(&mut out, 0xC4, &dht_payload(1, k, &ac_specs[k as usize]));
    }
    let mut sos = vec![3];
    for (c, comp) in file.components.iter().enumerate() {
        let k = class_of(c) as u8;
        sos.extend_from_slice(&[comp.id, (k << 4) | k]);
    }
    sos.extend_from_slice(&[0, 63, 0]);
    push_segment(&mut out, 0xDA, &sos);

    let mut bw = BitWriter { out, acc: 0, nbits: 0 };
    let mut preds = [0i32; 3];
    for b in 0..blocks {
        let (by, bx) = (b / coefs.cols, b % coefs.cols);
        for c in 0..3 {
            let (dct, act) = (&dc_tabs[class_of(c)], &ac_tabs[class_of(c)]);
            block_symbols(coefs.block(c, by, bx), &mut preds[c], |is_dc, sym, v, n| {
                let t = if is_dc { dct } else { act };
                bw.put(t.code[sym as usize] as u32, t.size[sym as usize] as u32);
                if n > 0 {
                    bw.put(magnitude_bits(v, n), n);
                }
            });
        }
    }
    bw.flush();
    let mut out = bw.out;
    out.extend_from_slice(&[0xFF, 0xD9]);
    Ok(out)
}
