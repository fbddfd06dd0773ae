//! Long-span erasure-only RS tier over GF(2^16).
//!
//! A span of `W` bytes is `N = W/32` chunks; chunk `i` contributes symbols
//! `16i..16i+16` as big-endian byte pairs. Parity symbols follow the data and
//! are stored as `P` bytes, also big-endian, grouped into `ceil(P/32)` parity
//! chunks that carry inner protection like data chunks do.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gf::{Field, Symbol};
use crate::inner::{PAYLOAD_BYTES, WIRE_BYTES};
use crate::rs::{CodeError, CodeSpec, DecodeStatus, FailureReason, RsCode, StageWork};

pub const SYMBOLS_PER_CHUNK: usize = PAYLOAD_BYTES / 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OuterError {
    #[error("span bytes W={0} must be a positive multiple of 32")]
    SpanBytes(usize),
    #[error("parity bytes P={0} must be a positive multiple of 2")]
    ParityBytes(usize),
    #[error("code length {0} symbols exceeds the GF(2^16) limit")]
    TooLong(usize),
    #[error("expected {expected} {what}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("chunk index {index} out of range (span has {limit} chunk slots)")]
    IndexOutOfRange { index: usize, limit: usize },
    #[error("duplicate chunk index {0}")]
    DuplicateIndex(usize),
    #[error("{erasures} erased chunks exceed capacity {capacity}")]
    Uncorrectable { erasures: usize, capacity: usize },
    #[error("non-erased chunks are inconsistent with the parity")]
    Inconsistent,
    #[error(transparent)]
    Code(#[from] CodeError),
}

/// Outer codeword geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "LayoutParams", into = "LayoutParams")]
pub struct SpanLayout {
    /// Span payload bytes.
    pub w: usize,
    /// Data chunks.
    pub n: usize,
    /// Parity bytes.
    pub p: usize,
    /// Parity symbols.
    pub r: usize,
    /// Data symbols.
    pub k: usize,
    /// Chunk-erasure capacity.
    pub c: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutParams {
    span_bytes: usize,
    parity_bytes: usize,
}

impl TryFrom<LayoutParams> for SpanLayout {
    type Error = OuterError;
    fn try_from(v: LayoutParams) -> Result<Self, OuterError> {
        SpanLayout::new(v.span_bytes, v.parity_bytes)
    }
}

impl From<SpanLayout> for LayoutParams {
    fn from(l: SpanLayout) -> Self {
        LayoutParams {
            span_bytes: l.w,
            parity_bytes: l.p,
        }
    }
}

impl SpanLayout {
    pub fn new(w: usize, p: usize) -> Result<Self, OuterError> {
        if w == 0 || !w.is_multiple_of(PAYLOAD_BYTES) {
            return Err(OuterError::SpanBytes(w));
        }
        if p == 0 || !p.is_multiple_of(2) {
            return Err(OuterError::ParityBytes(p));
        }
        let (k, r) = (w / 2, p / 2);
        if k + r > u16::MAX as usize {
            return Err(OuterError::TooLong(k + r));
        }
        Ok(SpanLayout {
            w,
            n: w / PAYLOAD_BYTES,
            p,
            r,
            k,
            c: r / SYMBOLS_PER_CHUNK,
        })
    }

    /// 2 KB span, 128 B parity, four chunk erasures.
    pub fn reliability() -> Self {
        Self::new(2048, 128).unwrap()
    }

    /// 2 KB span, 256 B parity (8/9 chunk rate), eight chunk erasures.
    pub fn bandwidth() -> Self {
        Self::new(2048, 256).unwrap()
    }

    /// Span at the 8/9 chunk rate used by the span-size sweep.
    pub fn at_rate_8_9(w: usize) -> Result<Self, OuterError> {
        Self::new(w, w / 8)
    }

    pub fn parity_chunks(&self) -> usize {
        self.p.div_ceil(PAYLOAD_BYTES)
    }

    pub fn total_chunks(&self) -> usize {
        self.n + self.parity_chunks()
    }

    /// Wire bytes of a whole span when parity is chunked.
    pub fn span_wire_bytes(&self) -> usize {
        self.total_chunks() * WIRE_BYTES
    }

    /// Payload share of the wire for whole-span transfers.
    pub fn payload_efficiency(&self) -> f64 {
        self.w as f64 / self.span_wire_bytes() as f64
    }
}

/// Chunk indices flagged by the inner tier. Indices `N..` name parity chunks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ErasureSet {
    indices: BTreeSet<usize>,
}

impl ErasureSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, index: usize) -> bool {
        self.indices.insert(index)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.contains(&index)
    }

    pub fn repairable(&self, layout: &SpanLayout) -> bool {
        self.len() <= layout.c
    }
}

impl FromIterator<usize> for ErasureSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        ErasureSet {
            indices: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Span {
    pub chunks: Vec<[u8; PAYLOAD_BYTES]>,
    pub parity: Vec<u8>,
}

impl Span {
    /// Payload bytes in chunk order.
    pub fn data_bytes(&self) -> Vec<u8> {
        self.chunks.iter().flatten().copied().collect()
    }

    /// Contents of chunk slot `i`, parity chunks zero-padded.
    pub fn slot(&self, i: usize) -> [u8; PAYLOAD_BYTES] {
        if i < self.chunks.len() {
            return self.chunks[i];
        }
        let mut out = [0u8; PAYLOAD_BYTES];
        let start = (i - self.chunks.len()) * PAYLOAD_BYTES;
        let end = (start + PAYLOAD_BYTES).min(self.parity.len());
        out[..end - start].copy_from_slice(&self.parity[start..end]);
        out
    }

    pub fn set_slot(&mut self, i: usize, bytes: &[u8; PAYLOAD_BYTES]) {
        if i < self.chunks.len() {
            self.chunks[i] = *bytes;
            return;
        }
        let start = (i - self.chunks.len()) * PAYLOAD_BYTES;
        let end = (start + PAYLOAD_BYTES).min(self.parity.len());
        self.parity[start..end].copy_from_slice(&bytes[..end - start]);
    }
}

#[derive(Debug, Clone)]
pub struct Repaired {
    pub span: Span,
    pub work: StageWork,
}

fn to_symbols(bytes: &[u8]) -> impl Iterator<Item = Symbol> + '_ {
    bytes
        .chunks_exact(2)
        .map(|p| u16::from_be_bytes([p[0], p[1]]))
}

fn from_symbols(symbols: &[Symbol]) -> Vec<u8> {
    symbols.iter().flat_map(|s| s.to_be_bytes()).collect()
}

#[derive(Debug)]
pub struct OuterCodec {
    layout: SpanLayout,
    code: RsCode,
}

impl OuterCodec {
    pub fn new(layout: SpanLayout) -> Result<Self, OuterError> {
        let spec = CodeSpec::new(Field::gf65536(), layout.k + layout.r, layout.k)?;
        Ok(OuterCodec {
            layout,
            code: RsCode::new(spec)?,
        })
    }

    /// Process-wide cache; building the parity map of a long code is not free.
    pub fn shared(layout: SpanLayout) -> Result<Arc<Self>, OuterError> {
        static CACHE: OnceLock<Mutex<HashMap<SpanLayout, Arc<OuterCodec>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(c) = cache.lock().unwrap().get(&layout) {
            return Ok(c.clone());
        }
        let codec = Arc::new(OuterCodec::new(layout)?);
        Ok(cache
            .lock()
            .unwrap()
            .entry(layout)
            .or_insert(codec)
            .clone())
    }

    pub fn layout(&self) -> &SpanLayout {
        &self.layout
    }

    pub fn code(&self) -> &RsCode {
        &self.code
    }

    fn check_chunks(&self, chunks: &[[u8; PAYLOAD_BYTES]]) -> Result<(), OuterError> {
        if chunks.len() != self.layout.n {
            return Err(OuterError::Length {
                what: "chunks",
                expected: self.layout.n,
                got: chunks.len(),
            });
        }
        Ok(())
    }

    pub fn encode(&self, chunks: &[[u8; PAYLOAD_BYTES]]) -> Result<Vec<u8>, OuterError> {
        self.check_chunks(chunks)?;
        let mut parity = vec![0; self.layout.r];
        for (j, s) in chunks.iter().flat_map(|c| to_symbols(c)).enumerate() {
            self.code.accumulate_parity(&mut parity, j, s);
        }
        Ok(from_symbols(&parity))
    }

    /// Encode `W` payload bytes into a span.
    pub fn encode_bytes(&self, data: &[u8]) -> Result<Span, OuterError> {
        if data.len() != self.layout.w {
            return Err(OuterError::Length {
                what: "span bytes",
                expected: self.layout.w,
                got: data.len(),
            });
        }
        let chunks: Vec<[u8; PAYLOAD_BYTES]> = data
            .chunks_exact(PAYLOAD_BYTES)
            .map(|c| c.try_into().unwrap())
            .collect();
        let parity = self.encode(&chunks)?;
        Ok(Span { chunks, parity })
    }

    fn codeword(&self, span: &Span) -> Result<Vec<Symbol>, OuterError> {
        self.check_chunks(&span.chunks)?;
        if span.parity.len() != self.layout.p {
            return Err(OuterError::Length {
                what: "parity bytes",
                expected: self.layout.p,
                got: span.parity.len(),
            });
        }
        Ok(span
            .chunks
            .iter()
            .flat_map(|c| to_symbols(c))
            .chain(to_symbols(&span.parity))
            .collect())
    }

    pub fn syndromes(&self, span: &Span) -> Result<Vec<Symbol>, OuterError> {
        Ok(self.code.syndromes(&self.codeword(span)?)?)
    }

    /// One erasure-only pass over the flagged chunks.
    pub fn repair(&self, span: &Span, erasures: &ErasureSet) -> Result<Repaired, OuterError> {
        let limit = self.layout.total_chunks();
        if let Some(index) = erasures.iter().find(|&i| i >= limit) {
            return Err(OuterError::IndexOutOfRange { index, limit });
        }
        if erasures.len() > self.layout.c {
            return Err(OuterError::Uncorrectable {
                erasures: erasures.len(),
                capacity: self.layout.c,
            });
        }
        let word = self.codeword(span)?;
        let n_sym = self.code.n();
        let positions: Vec<usize> = erasures
            .iter()
            .flat_map(|i| i * SYMBOLS_PER_CHUNK..(i + 1) * SYMBOLS_PER_CHUNK)
            .filter(|&s| s < n_sym)
            .collect();
        let out = self.code.decode_erasures(&word, &positions)?;
        match (out.status, out.codeword) {
            (DecodeStatus::Failure(FailureReason::ErasureBudget), _) => Err(OuterError::Uncorrectable {
                erasures: erasures.len(),
                capacity: self.layout.c,
            }),
            (DecodeStatus::Failure(_), _) | (_, None) => Err(OuterError::Inconsistent),
            (_, Some(symbols)) => {
                let bytes = from_symbols(&symbols);
                let (data, parity) = bytes.split_at(self.layout.w);
                let chunks = data
                    .chunks_exact(PAYLOAD_BYTES)
                    .map(|c| c.try_into().unwrap())
                    .collect();
                Ok(Repaired {
                    span: Span {
                        chunks,
                        parity: parity.to_vec(),
                    },
                    work: out.work,
                })
            }
        }
    }

    /// New parity after replacing the chunks at `positions`, touching only
    /// those chunks and the old parity.
    pub fn diff_parity_update(
        &self,
        old_payloads: &[[u8; PAYLOAD_BYTES]],
        new_payloads: &[[u8; PAYLOAD_BYTES]],
        positions: &[usize],
        old_parity: &[u8],
    ) -> Result<Vec<u8>, OuterError> {
        let q = positions.len();
        for (what, got) in [("old payloads", old_payloads.len()), ("new payloads", new_payloads.len())] {
            if got != q {
                return Err(OuterError::Length {
                    what,
                    expected: q,
                    got,
                });
            }
        }
        if old_parity.len() != self.layout.p {
            return Err(OuterError::Length {
                what: "parity bytes",
                expected: self.layout.p,
                got: old_parity.len(),
            });
        }
        let mut seen = BTreeSet::new();
        for &i in positions {
            if i >= self.layout.n {
                return Err(OuterError::IndexOutOfRange {
                    index: i,
                    limit: self.layout.n,
                });
            }
            if !seen.insert(i) {
                return Err(OuterError::DuplicateIndex(i));
            }
        }
        let mut parity: Vec<Symbol> = to_symbols(old_parity).collect();
        for ((old, new), &i) in old_payloads.iter().zip(new_payloads).zip(positions) {
            for (s, (a, b)) in to_symbols(old).zip(to_symbols(new)).enumerate() {
                self.code
                    .accumulate_parity(&mut parity, i * SYMBOLS_PER_CHUNK + s, a ^ b);
            }
        }
        Ok(from_symbols(&parity))
    }
}
