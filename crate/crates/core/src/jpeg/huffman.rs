//! Huffman table representation, decoding lookup and optimal table
//! construction (the Annex K.2 procedure with the K.3 length limit).

use super::JpegError;

/// A DHT table: number of codes of each length 1..=16 and the symbols in
/// code order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanSpec {
    pub counts: [u8; 16],
    pub symbols: Vec<u8>,
}

impl HuffmanSpec {
    /// Canonical code assignment; fails if the lengths oversubscribe the
    /// code space.
    pub(crate) fn codes(&self) -> Result<Vec<(u8, u16, u8)>, JpegError> {
        let total: usize = self.counts.iter().map(|&c| c as usize).sum();
        if total != self.symbols.len() || total > 256 {
            return Err(JpegError::CorruptStream("Huffman table symbol count mismatch".into()));
        }
        let mut out = Vec::with_capacity(total);
        let mut code: u32 = 0;
        let mut k = 0;
        for len in 1..=16u8 {
            for _ in 0..self.counts[len as usize - 1] {
                if code >= (1 << len) {
                    return Err(JpegError::CorruptStream("Huffman code lengths overflow".into()));
                }
                out.push((self.symbols[k], code as u16, len));
                k += 1;
                code += 1;
            }
            code <<= 1;
        }
        Ok(out)
    }
}

/// Decoding tables in the MINCODE/MAXCODE/VALPTR form.
#[derive(Debug, Clone)]
pub(crate) struct DecodeTable {
    maxcode: [i32; 18],
    mincode: [i32; 17],
    valptr: [usize; 17],
    symbols: Vec<u8>,
}

impl DecodeTable {
    pub(crate) fn new(spec: &HuffmanSpec) -> Result<Self, JpegError> {
        spec.codes()?;
        let mut maxcode = [-1i32; 18];
        let mut mincode = [0i32; 17];
        let mut valptr = [0usize; 17];
        let mut code = 0i32;
        let mut k = 0usize;
        for len in 1..=16 {
            let n = spec.counts[len - 1] as usize;
            if n > 0 {
                valptr[len] = k;
                mincode[len] = code;
                code += n as i32;
                k += n;
                maxcode[len] = code - 1;
            }
            code <<= 1;
        }
        // Sentinel so the decode loop terminates after 16 bits.
        maxcode[17] = i32::MAX;
        Ok(Self { maxcode, mincode, valptr, symbols: spec.symbols.clone() })
    }

    /// Decodes one symbol, pulling bits from `next_bit`.
    pub(crate) fn decode(
        &self,
        mut next_bit: impl FnMut() -> Result<u32, JpegError>,
    ) -> Result<u8, JpegError> {
        let mut code = next_bit()? as i32;
        let mut len = 1;
        while code > self.maxcode[len] {
            if len == 16 {
                return Err(JpegError::CorruptStream("invalid Huffman code".into()));
            }
            code = (code << 1) | next_bit()? as i32;
            len += 1;
        }
        Ok(self.symbols[self.valptr[len] + (code - self.mincode[len]) as usize])
    }
}

/// Per-symbol code and length for encoding.
#[derive(Debug, Clone)]
pub(crate) struct EncodeTable {
    pub code: [u16; 256],
    pub size: [u8; 256],
}

impl EncodeTable {
    pub(crate) fn new(spec: &HuffmanSpec) -> Result<Self, JpegError> {
        let mut code = [0u16; 256];
        let mut size = [0u8; 256];
        for (sym, c, len) in spec.codes()? {
            code[sym as usize] = c;
            size[sym as usize] = len;
        }
        Ok(Self { code, size })
    }
}

/// Builds a length-limited optimal table from symbol frequencies. A reserved
/// pseudo-symbol guarantees no real symbol receives the all-ones code.
pub(crate) fn build_optimal(freq_in: &[u32; 256]) -> HuffmanSpec {
    let mut freq = [0u64; 257];
    for (f, &v) in freq.iter_mut().zip(freq_in.iter()) {
        *f = v as u64;
    }
    freq[256] = 1;
    let mut codesize = [0usize; 257];
    let mut others = [-1i32; 257];

    loop {
        // Smallest nonzero frequency, ties going to the larger index.
        let mut c1: i32 = -1;
        let mut best = u64::MAX;
        for i in 0..257 {
            if freq[i] != 0 && freq[i] <= best {
                best = freq[i];
                c1 = i as i32;
            }
        }
        let mut c2: i32 = -1;
        best = u64::MAX;
        for i in 0..257 {
            if freq[i] != 0 && freq[i] <= best && i as i32 != c1 {
                best = freq[i];
                c2 = i as i32;
            }
        }
        if c2 < 0 {
            break;
        }
        let (c1u, c2u) = (c1 as usize, c2 as usize);
        freq[c1u] += freq[c2u];
        freq[c2u] = 0;

        let mut i = c1u;
        codesize[i] += 1;
        while others[i] >= 0 {
            i = others[i] as usize;
            codesize[i] += 1;
        }
        others[i] = c2;
        let mut i = c2u;
        codesize[i] += 1;
        while others[i] >= 0 {
            i = others[i] as usize;
            codesize[i] += 1;
        }
    }

    let mut bits = [0u32; 33];
    for &cs in codesize.iter() {
        if cs > 0 {
            // 257 symbols can never need more than 32 bits.
            bits[cs] += 1;
        }
    }
    for i in (17..=32).rev() {
        while bits[i] > 0 {
            let mut j = i - 2;
            while bits[j] == 0 {
                j -= 1;
            }
            bits[i] -= 2;
            bits[i - 1] += 1;
            bits[j + 1] += 2;
            bits[j] -= 1;
        }
    }
    // Drop the reserved code from the longest length.
    let mut i = 16;
    while bits[i] == 0 {
        i -= 1;
    }
    bits[i] -= 1;

    let mut counts = [0u8; 16];
    for len in 1..=16 {
        counts[len - 1] = bits[len] as u8;
    }
    let mut symbols = Vec::new();
    for len in 1..=32 {
        for (sym, &cs) in codesize.iter().enumerate().take(256) {
            if cs == len {
                symbols.push(sym as u8);
            }
        }
    }
    HuffmanSpec { counts, symbols }
}
