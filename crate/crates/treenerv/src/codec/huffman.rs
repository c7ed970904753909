//! Canonical Huffman coding over b-bit symbol streams, with an MSB-first
//! bitstream. The code table travels as a plain code-length list; codes are
//! reconstructed canonically on both sides, so decode is bit-exact.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::CodecError;

/// Entropy-coded stream: code lengths per alphabet symbol plus the packed
/// payload. `bit_len` excludes the zero padding up to the byte boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedStream {
    pub code_lengths: Vec<u8>,
    pub payload: Vec<u8>,
    pub bit_len: u64,
    pub symbol_count: u64,
}

#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bit_len: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        BitWriter::default()
    }

    /// Append the low `len` bits of `code`, most significant first.
    pub fn write_bits(&mut self, code: u64, len: u8) {
        for i in (0..len).rev() {
            let bit = ((code >> i) & 1) as u8;
            let byte_idx = (self.bit_len / 8) as usize;
            if byte_idx == self.bytes.len() {
                self.bytes.push(0);
            }
            self.bytes[byte_idx] |= bit << (7 - (self.bit_len % 8));
            self.bit_len += 1;
        }
    }

    pub fn finish(self) -> (Vec<u8>, u64) {
        (self.bytes, self.bit_len)
    }
}

pub struct BitReader<'a> {
    bytes: &'a [u8],
    bit_len: u64,
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8], bit_len: u64) -> Self {
        BitReader {
            bytes,
            bit_len,
            pos: 0,
        }
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn read_bit(&mut self) -> Result<u8, CodecError> {
        if self.pos >= self.bit_len {
            return Err(CodecError::CorruptBitstream {
                offset: self.pos as usize,
                detail: "bitstream exhausted mid-symbol".into(),
            });
        }
        let byte = self.bytes[(self.pos / 8) as usize];
        let bit = (byte >> (7 - (self.pos % 8))) & 1;
        self.pos += 1;
        Ok(bit)
    }
}

/// Code lengths for each symbol of a `1 << bits` alphabet, zero for absent
/// symbols. A single distinct symbol gets length 1, so degenerate streams
/// cost one bit per symbol. Ties in the merge order break deterministically.
pub fn build_code_lengths(freqs: &[u64]) -> Result<Vec<u8>, CodecError> {
    let present: Vec<usize> = (0..freqs.len()).filter(|&s| freqs[s] > 0).collect();
    let mut lengths = vec![0u8; freqs.len()];
    match present.len() {
        0 => return Ok(lengths),
        1 => {
            lengths[present[0]] = 1;
            return Ok(lengths);
        }
        _ => {}
    }

    // Huffman merge. Node ids double as tie-breakers: leaves first in symbol
    // order, then internal nodes in creation order.
    let mut weights: Vec<u64> = Vec::with_capacity(present.len() * 2 - 1);
    let mut parents: Vec<Option<usize>> = Vec::with_capacity(present.len() * 2 - 1);
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    for &s in &present {
        let id = weights.len();
        weights.push(freqs[s]);
        parents.push(None);
        heap.push(Reverse((freqs[s], id)));
    }
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().unwrap();
        let Reverse((wb, b)) = heap.pop().unwrap();
        let id = weights.len();
        weights.push(wa + wb);
        parents.push(None);
        parents[a] = Some(id);
        parents[b] = Some(id);
        heap.push(Reverse((wa + wb, id)));
    }

    for (leaf, &s) in present.iter().enumerate() {
        let mut depth = 0u32;
        let mut node = leaf;
        while let Some(p) = parents[node] {
            node = p;
            depth += 1;
        }
        if depth > 63 {
            return Err(CodecError::CorruptBitstream {
                offset: 0,
                detail: format!("code length {depth} exceeds 63 bits"),
            });
        }
        lengths[s] = depth as u8;
    }
    Ok(lengths)
}

struct CanonicalTable {
    /// Symbols sorted by (length, symbol).
    symbols: Vec<u16>,
    /// Per length 1..=max: count of codes and the first canonical code.
    count: Vec<u64>,
    first_code: Vec<u64>,
    /// Offset of each length's first symbol inside `symbols`.
    offset: Vec<usize>,
    max_len: usize,
}

fn canonical_table(lengths: &[u8]) -> CanonicalTable {
    let max_len = lengths.iter().copied().max().unwrap_or(0) as usize;
    let mut symbols: Vec<u16> = (0..lengths.len() as u16)
        .filter(|&s| lengths[s as usize] > 0)
        .collect();
    symbols.sort_by_key(|&s| (lengths[s as usize], s));
    let mut count = vec![0u64; max_len + 1];
    for &s in &symbols {
        count[lengths[s as usize] as usize] += 1;
    }
    let mut first_code = vec![0u64; max_len + 1];
    let mut offset = vec![0usize; max_len + 1];
    let mut code = 0u64;
    let mut off = 0usize;
    for len in 1..=max_len {
        first_code[len] = code;
        offset[len] = off;
        code = (code + count[len]) << 1;
        off += count[len] as usize;
    }
    CanonicalTable {
        symbols,
        count,
        first_code,
        offset,
        max_len,
    }
}

fn canonical_codes(lengths: &[u8]) -> Vec<(u64, u8)> {
    let table = canonical_table(lengths);
    let mut codes = vec![(0u64, 0u8); lengths.len()];
    let mut next = table.first_code.clone();
    for &s in &table.symbols {
        let len = lengths[s as usize] as usize;
        codes[s as usize] = (next[len], len as u8);
        next[len] += 1;
    }
    codes
}

/// Huffman-encode a stream of symbols drawn from a `1 << bits` alphabet.
pub fn entropy_encode(symbols: &[u16], bits: u8) -> Result<EncodedStream, CodecError> {
    let alphabet = 1usize << bits;
    let mut freqs = vec![0u64; alphabet];
    for &s in symbols {
        if s as usize >= alphabet {
            return Err(CodecError::SymbolOutOfRange { symbol: s, bits });
        }
        freqs[s as usize] += 1;
    }
    let code_lengths = build_code_lengths(&freqs)?;
    let codes = canonical_codes(&code_lengths);
    let mut writer = BitWriter::new();
    for &s in symbols {
        let (code, len) = codes[s as usize];
        writer.write_bits(code, len);
    }
    let (payload, bit_len) = writer.finish();
    Ok(EncodedStream {
        code_lengths,
        payload,
        bit_len,
        symbol_count: symbols.len() as u64,
    })
}

/// Decode `symbol_count` symbols from a canonical Huffman bitstream.
pub fn entropy_decode(
    code_lengths: &[u8],
    payload: &[u8],
    bit_len: u64,
    symbol_count: u64,
) -> Result<Vec<u16>, CodecError> {
    if symbol_count == 0 {
        return Ok(Vec::new());
    }
    let table = canonical_table(code_lengths);
    if table.symbols.is_empty() {
        return Err(CodecError::CorruptBitstream {
            offset: 0,
            detail: "no symbols in code table".into(),
        });
    }
    let mut reader = BitReader::new(payload, bit_len);
    let mut out = Vec::with_capacity(symbol_count as usize);
    for _ in 0..symbol_count {
        let start = reader.position();
        let mut code = 0u64;
        let mut len = 0usize;
        loop {
            code = (code << 1) | reader.read_bit()? as u64;
            len += 1;
            if len > table.max_len {
                return Err(CodecError::CorruptBitstream {
                    offset: start as usize,
                    detail: format!("no code of length <= {} matches", table.max_len),
                });
            }
            if table.count[len] > 0 {
                let rel = code.wrapping_sub(table.first_code[len]);
                if code >= table.first_code[len] && rel < table.count[len] {
                    out.push(table.symbols[table.offset[len] + rel as usize]);
                    break;
                }
            }
        }
    }
    Ok(out)
}
