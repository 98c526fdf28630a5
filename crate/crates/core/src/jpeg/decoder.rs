use super::huffman::DecodeTable;
use super::{
    CoefficientImage, Component, HuffmanSpec, HuffmanTables, JpegError, JpegFile, QuantTable, ZIGZAG,
};

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Result<u8, JpegError> {
        let b = *self.data.get(self.pos).ok_or(JpegError::TruncatedFile)?;
        self.pos += 1;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16, JpegError> {
        Ok(((self.u8()? as u16) << 8) | self.u8()? as u16)
    }

    /// Reads a segment length and returns the payload slice.
    fn segment(&mut self) -> Result<&'a [u8], JpegError> {
        let len = self.u16()? as usize;
        if len < 2 {
            return Err(JpegError::CorruptStream(format!("segment length {len}")));
        }
        let end = self.pos + len - 2;
        if end > self.data.len() {
            return Err(JpegError::TruncatedFile);
        }
        let seg = &self.data[self.pos..end];
        self.pos = end;
        Ok(seg)
    }

    fn marker(&mut self) -> Result<u8, JpegError> {
        let b = self.u8()?;
        if b != 0xFF {
            return Err(JpegError::CorruptStream(format!("expected marker, found byte {b:#04x}")));
        }
        let mut m = self.u8()?;
        while m == 0xFF {
            m = self.u8()?;
        }
        Ok(m)
    }
}

/// Bit-level access to entropy-coded data, handling byte stuffing and
/// stopping at markers.
struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    acc: u32,
    nbits: u32,
}

impl<'a> BitReader<'a> {
    fn bit(&mut self) -> Result<u32, JpegError> {
        if self.nbits == 0 {
            let b = *self.data.get(self.pos).ok_or(JpegError::TruncatedFile)?;
            if b == 0xFF {
                let next = *self.data.get(self.pos + 1).ok_or(JpegError::TruncatedFile)?;
                if next != 0x00 {
                    return Err(JpegError::CorruptStream(format!(
                        "marker {next:#04x} inside entropy-coded data"
                    )));
                }
                self.pos += 2;
            } else {
                self.pos += 1;
            }
            self.acc = b as u32;
            self.nbits = 8;
        }
        self.nbits -= 1;
        Ok((self.acc >> self.nbits) & 1)
    }

    fn bits(&mut self, n: u32) -> Result<i32, JpegError> {
        let mut v = 0i32;
        for _ in 0..n {
            v = (v << 1) | self.bit()? as i32;
        }
        Ok(v)
    }

    /// Value of a magnitude category `s` followed by `s` raw bits.
    fn receive_extend(&mut self, s: u32) -> Result<i32, JpegError> {
        if s == 0 {
            return Ok(0);
        }
        let v = self.bits(s)?;
        Ok(if v < (1 << (s - 1)) { v - (1 << s) + 1 } else { v })
    }

    /// Consumes the expected restart marker and resets the bit buffer.
    fn restart(&mut self, expected: u8) -> Result<(), JpegError> {
        self.nbits = 0;
        let b0 = *self.data.get(self.pos).ok_or(JpegError::TruncatedFile)?;
        let b1 = *self.data.get(self.pos + 1).ok_or(JpegError::TruncatedFile)?;
        if b0 != 0xFF || b1 != 0xD0 + expected {
            return Err(JpegError::CorruptStream(format!(
                "expected RST{expected}, found {b0:#04x}{b1:02x}"
            )));
        }
        self.pos += 2;
        Ok(())
    }
}

struct Frame {
    width: usize,
    height: usize,
    ids: [u8; 3],
    quant: [u8; 3],
}

/// Parses a baseline JPEG into its tables and quantized coefficients.
pub fn parse(bytes: &[u8]) -> Result<JpegFile, JpegError> {
    let mut r = Reader { data: bytes, pos: 0 };
    if r.u8()? != 0xFF || r.u8()? != 0xD8 {
        return Err(JpegError::CorruptStream("missing SOI marker".into()));
    }

    let mut quant_tables: [Option<QuantTable>; 4] = [None; 4];
    let mut huff = HuffmanTables::default();
    let mut restart_interval: Option<u16> = None;
    let mut frame: Option<Frame> = None;
    let mut coefs: Option<CoefficientImage> = None;
    let mut comp_tables: [(u8, u8); 3] = [(0, 0); 3];
    let mut scanned = [false; 3];

    loop {
        let m = r.marker()?;
        match m {
            0xD8 => return Err(JpegError::CorruptStream("unexpected SOI".into())),
            0xD9 => break,
            0xC0 => {
                if frame.is_some() {
                    return Err(JpegError::CorruptStream("multiple frames".into()));
                }
                let f = parse_sof(r.segment()?)?;
                coefs = Some(CoefficientImage::zeros(f.height / 8, f.width / 8, f.quant));
                frame = Some(f);
            }
            0xC1 | 0xC2 | 0xC3 | 0xC5..=0xC7 | 0xC9..=0xCB | 0xCD..=0xCF => {
                let kind = match m {
                    0xC1 => "extended sequential",
                    0xC2 | 0xC6 | 0xCA | 0xCE => "progressive",
                    0xC3 | 0xC7 | 0xCB | 0xCF => "lossless",
                    _ => "hierarchical",
                };
                let coding = if m >= 0xC9 { ", arithmetic coded" } else { "" };
                return Err(JpegError::UnsupportedFormat(format!("SOF marker {m:#04x} ({kind}{coding})")));
            }
            0xCC => return Err(JpegError::UnsupportedFormat("arithmetic coding (DAC marker)".into())),
            0xC4 => parse_dht(r.segment()?, &mut huff)?,
            0xDB => parse_dqt(r.segment()?, &mut quant_tables)?,
            0xDD => {
                let seg = r.segment()?;
                if seg.len() != 2 {
                    return Err(JpegError::CorruptStream("DRI length".into()));
                }
                let ri = u16::from_be_bytes([seg[0], seg[1]]);
                restart_interval = (ri > 0).then_some(ri);
            }
            0xDA => {
                let f = frame.as_ref().ok_or_else(|| JpegError::CorruptStream("SOS before SOF".into()))?;
                let c = coefs.as_mut().expect("set with frame");
                let seg = r.segment()?;
                let scan = parse_sos(seg, f)?;
                let mut tables = Vec::with_capacity(scan.len());
                for &(ci, td, ta) in &scan {
                    let dc = huff.dc[td as usize]
                        .as_ref()
                        .ok_or_else(|| JpegError::CorruptStream(format!("missing DC table {td}")))?;
                    let ac = huff.ac[ta as usize]
                        .as_ref()
                        .ok_or_else(|| JpegError::CorruptStream(format!("missing AC table {ta}")))?;
                    tables.push((ci, DecodeTable::new(dc)?, DecodeTable::new(ac)?));
                    comp_tables[ci] = (td, ta);
                    scanned[ci] = true;
                }
                r.pos = decode_scan(bytes, r.pos, c, &tables, restart_interval)?;
            }
            0xDC => return Err(JpegError::UnsupportedFormat("DNL marker".into())),
            0xD0..=0xD7 => return Err(JpegError::CorruptStream("restart marker outside scan".into())),
            0x01 => {}
            _ => {
                // APPn, COM and any other segment with a length field.
                r.segment()?;
            }
        }
    }

    let f = frame.ok_or_else(|| JpegError::CorruptStream("no frame header".into()))?;
    if scanned.iter().any(|s| !s) {
        return Err(JpegError::CorruptStream("not every component was scanned".into()));
    }
    for (i, &q) in f.quant.iter().enumerate() {
        if quant_tables[q as usize].is_none() {
            return Err(JpegError::CorruptStream(format!("component {i} references missing quant table {q}")));
        }
    }
    let components = std::array::from_fn(|i| Component {
        id: f.ids[i],
        quant_table: f.quant[i],
        dc_table: comp_tables[i].0,
        ac_table: comp_tables[i].1,
    });
    Ok(JpegFile {
        width: f.width,
        height: f.height,
        components,
        quant_tables,
        huff_tables: huff,
        restart_interval,
        coefficients: coefs.expect("set with frame"),
    })
}

fn parse_sof(seg: &[u8]) -> Result<Frame, JpegError> {
    if seg.len() < 6 {
        return Err(JpegError::CorruptStream("short SOF".into()));
    }
    let precision = seg[0];
    if precision != 8 {
        return Err(JpegError::UnsupportedFormat(format!("{precision}-bit samples")));
    }
    let height = u16::from_be_bytes([seg[1], seg[2]]) as usize;
    let width = u16::from_be_bytes([seg[3], seg[4]]) as usize;
    let nf = seg[5] as usize;
    if nf != 3 {
        return Err(JpegError::UnsupportedFormat(format!("{nf} components (need 3)")));
    }
    if seg.len() != 6 + 3 * nf {
        return Err(JpegError::CorruptStream("SOF length".into()));
    }
    if height == 0 || width == 0 {
        return Err(JpegError::UnsupportedFormat("zero or deferred (DNL) image height".into()));
    }
    if height % 8 != 0 || width % 8 != 0 {
        return Err(JpegError::UnsupportedFormat(format!("dimensions {width}x{height} not multiples of 8")));
    }
    let mut ids = [0u8; 3];
    let mut quant = [0u8; 3];
    for i in 0..3 {
        let c = &seg[6 + 3 * i..9 + 3 * i];
        ids[i] = c[0];
        if c[1] != 0x11 {
            return Err(JpegError::UnsupportedFormat(format!(
                "chroma subsampling (component {} samples {}x{})",
                c[0],
                c[1] >> 4,
                c[1] & 15
            )));
        }
        if c[2] > 3 {
            return Err(JpegError::CorruptStream(format!("quant table id {}", c[2])));
        }
        quant[i] = c[2];
    }
    if ids[0] == ids[1] || ids[0] == ids[2] || ids[1] == ids[2] {
        return Err(JpegError::CorruptStream("duplicate component ids".into()));
    }
    Ok(Frame { width, height, ids, quant })
}

fn parse_dqt(mut seg: &[u8], tables: &mut [Option<QuantTable>; 4]) -> Result<(), JpegError> {
    while !seg.is_empty() {
        let pq = seg[0] >> 4;
        let tq = (seg[0] & 15) as usize;
        if pq != 0 {
            return Err(JpegError::UnsupportedFormat("16-bit quantization table".into()));
        }
        if tq > 3 {
            return Err(JpegError::CorruptStream(format!("quant table id {tq}")));
        }
        if seg.len() < 65 {
            return Err(JpegError::CorruptStream("short DQT".into()));
        }
        let mut zz = [0u16; 64];
        for (d, &s) in zz.iter_mut().zip(&seg[1..65]) {
            if s == 0 {
                return Err(JpegError::CorruptStream("zero quantization step".into()));
            }
            *d = s as u16;
        }
        tables[tq] = Some(QuantTable::from_zigzag(&zz));
        seg = &seg[65..];
    }
    Ok(())
}

fn parse_dht(mut seg: &[u8], huff: &mut HuffmanTables) -> Result<(), JpegError> {
    while !seg.is_empty() {
        if seg.len() < 17 {
            return Err(JpegError::CorruptStream("short DHT".into()));
        }
        let class = seg[0] >> 4;
        let id = (seg[0] & 15) as usize;
        if class > 1 || id > 3 {
            return Err(JpegError::CorruptStream(format!("Huffman table class {class} id {id}")));
        }
        let mut counts = [0u8; 16];
        counts.copy_from_slice(&seg[1..17]);
        let n: usize = counts.iter().map(|&c| c as usize).sum();
        if seg.len() < 17 + n {
            return Err(JpegError::CorruptStream("short DHT".into()));
        }
        let spec = HuffmanSpec { counts, symbols: seg[17..17 + n].to_vec() };
        spec.codes()?;
        if class == 0 {
            huff.dc[id] = Some(spec);
        } else {
            huff.ac[id] = Some(spec);
        }
        seg = &seg[17 + n..];
    }
    Ok(())
}

/// Returns `(component index, dc table, ac table)` per scan component.
fn parse_sos(seg: &[u8], f: &Frame) -> Result<Vec<(usize, u8, u8)>, JpegError> {
    let ns = *seg.first().ok_or_else(|| JpegError::CorruptStream("empty SOS".into()))? as usize;
    if !(1..=3).contains(&ns) || seg.len() != 4 + 2 * ns {
        return Err(JpegError::CorruptStream("SOS length".into()));
    }
    let mut out = Vec::with_capacity(ns);
    for i in 0..ns {
        let id = seg[1 + 2 * i];
        let t = seg[2 + 2 * i];
        let ci = f
            .ids
            .iter()
            .position(|&x| x == id)
            .ok_or_else(|| JpegError::CorruptStream(format!("scan references unknown component {id}")))?;
        if out.iter().any(|&(c, _, _)| c == ci) {
            return Err(JpegError::CorruptStream("component repeated in scan".into()));
        }
        let (td, ta) = (t >> 4, t & 15);
        if td > 3 || ta > 3 {
            return Err(JpegError::CorruptStream("Huffman table selector".into()));
        }
        out.push((ci, td, ta));
    }
    let (ss, se, ahal) = (seg[1 + 2 * ns], seg[2 + 2 * ns], seg[3 + 2 * ns]);
    if ss != 0 || se != 63 || ahal != 0 {
        return Err(JpegError::UnsupportedFormat("spectral selection or successive approximation".into()));
    }
    Ok(out)
}

fn decode_block(
    br: &mut BitReader,
    dc: &DecodeTable,
    ac: &DecodeTable,
    pred: &mut i32,
    out: &mut [i16],
) -> Result<(), JpegError> {
    let t = dc.decode(|| br.bit())? as u32;
    if t > 11 {
        return Err(JpegError::CorruptStream(format!("DC category {t}")));
    }
    *pred += br.receive_extend(t)?;
    out[0] = i16::try_from(*pred).map_err(|_| JpegError::CorruptStream("DC overflow".into()))?;
    let mut k = 1;
    while k < 64 {
        let rs = ac.decode(|| br.bit())?;
        let (run, size) = ((rs >> 4) as usize, (rs & 15) as u32);
        if size == 0 {
            if run == 15 {
                k += 16;
                continue;
            }
            break;
        }
        if size > 10 {
            return Err(JpegError::CorruptStream(format!("AC category {size}")));
        }
        k += run;
        if k > 63 {
            return Err(JpegError::CorruptStream("AC run past end of block".into()));
        }
        out[ZIGZAG[k]] = br.receive_extend(size)? as i16;
        k += 1;
    }
    if k > 64 {
        return Err(JpegError::CorruptStream("zero run past end of block".into()));
    }
    Ok(())
}

/// Decodes one scan starting at `pos`; returns the position of the marker
/// that follows it.
fn decode_scan(
    data: &[u8],
    pos: usize,
    coefs: &mut CoefficientImage,
    tables: &[(usize, DecodeTable, DecodeTable)],
    restart_interval: Option<u16>,
) -> Result<usize, JpegError> {
    let mut br = BitReader { data, pos, acc: 0, nbits: 0 };
    let (rows, cols) = (coefs.rows, coefs.cols);
    let units = rows * cols;
    let mut preds = [0i32; 3];
    let mut next_rst = 0u8;

    // With 1x1 sampling an MCU is one block per scan component, both for
    // interleaved and single-component scans.
    for mcu in 0..units {
        if let Some(ri) = restart_interval {
            if mcu > 0 && mcu % ri as usize == 0 {
                br.restart(next_rst)?;
                next_rst = (next_rst + 1) % 8;
                preds = [0; 3];
            }
        }
        let (by, bx) = (mcu / cols, mcu % cols);
        for (slot, (ci, dc, ac)) in tables.iter().enumerate() {
            let o = coefs.offset(*ci, by, bx);
            let block = &mut coefs.data[o..o + 64];
            block.fill(0);
            decode_block(&mut br, dc, ac, &mut preds[slot], block)?;
        }
    }

    // Skip padding up to the next marker.
    let mut p = br.pos;
    loop {
        match (data.get(p), data.get(p + 1)) {
            (Some(0xFF), Some(&b)) if b != 0x00 && !(0xD0..=0xD7).contains(&b) => return Ok(p),
            (Some(_), Some(_)) => p += 1,
            _ => return Err(JpegError::TruncatedFile),
        }
    }
}
