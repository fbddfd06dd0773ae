//! File container for the encode/decode round trip.
//!
//! Layout: magic `HBMECC01`, span bytes `W` (u32 BE), parity bytes `P` (u32
//! BE), payload length (u64 BE), then every span as its wire image: `N` data
//! chunks followed by the parity chunks, 36 B each. The last span is
//! zero-padded.

use serde::Serialize;
use thiserror::Error;

use crate::fault::{inject_bits, FaultConfig};
use crate::inner::{InnerCodec, InnerPolicy, VerdictKind, PAYLOAD_BYTES, WIRE_BYTES};
use crate::outer::{ErasureSet, OuterCodec, OuterError, Span, SpanLayout};

pub const MAGIC: &[u8; 8] = b"HBMECC01";
pub const HEADER_BYTES: usize = 24;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not a container (bad magic)")]
    Magic,
    #[error("truncated container: {0}")]
    Truncated(String),
    #[error(transparent)]
    Layout(#[from] OuterError),
    #[error("span {span}: {erasures} chunk erasures exceed capacity {capacity}")]
    Uncorrectable {
        span: usize,
        erasures: usize,
        capacity: usize,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DecodeStats {
    pub spans: u64,
    pub chunks: u64,
    pub chunks_corrected: u64,
    pub chunks_erased: u64,
    pub spans_repaired: u64,
    pub flips_injected: u64,
}

pub fn encode_container(data: &[u8], layout: &SpanLayout) -> Result<Vec<u8>, ContainerError> {
    let outer = OuterCodec::shared(*layout)?;
    let inner = InnerCodec::global();
    let spans = data.len().div_ceil(layout.w);
    let mut out = Vec::with_capacity(HEADER_BYTES + spans * layout.span_wire_bytes());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(layout.w as u32).to_be_bytes());
    out.extend_from_slice(&(layout.p as u32).to_be_bytes());
    out.extend_from_slice(&(data.len() as u64).to_be_bytes());
    let mut buf = vec![0u8; layout.w];
    for piece in data.chunks(layout.w) {
        buf.fill(0);
        buf[..piece.len()].copy_from_slice(piece);
        let span = outer.encode_bytes(&buf)?;
        for i in 0..layout.total_chunks() {
            out.extend_from_slice(&inner.encode_array(&span.slot(i)).to_wire());
        }
    }
    Ok(out)
}

/// Parse the header and return the layout and payload length.
pub fn read_header(bytes: &[u8]) -> Result<(SpanLayout, u64), ContainerError> {
    if bytes.len() < HEADER_BYTES {
        return Err(ContainerError::Truncated(format!("{} header bytes", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(ContainerError::Magic);
    }
    let w = u32::from_be_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let p = u32::from_be_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let len = u64::from_be_bytes(bytes[16..24].try_into().unwrap());
    Ok((SpanLayout::new(w, p)?, len))
}

/// Decode a container, optionally flipping bits in the wire image first
/// (the header is never touched).
pub fn decode_container(
    bytes: &[u8],
    noise: Option<&FaultConfig>,
) -> Result<(Vec<u8>, DecodeStats), ContainerError> {
    let (layout, len) = read_header(bytes)?;
    let span_bytes = layout.span_wire_bytes();
    let spans = (len as usize).div_ceil(layout.w);
    let body = &bytes[HEADER_BYTES..];
    if body.len() != spans * span_bytes {
        return Err(ContainerError::Truncated(format!(
            "body is {} bytes, expected {}",
            body.len(),
            spans * span_bytes
        )));
    }
    let mut body = body.to_vec();
    let mut stats = DecodeStats::default();
    if let Some(cfg) = noise {
        stats.flips_injected = inject_bits(&mut body, cfg, 0);
    }
    let outer = OuterCodec::shared(layout)?;
    let inner = InnerCodec::global();
    let mut out = Vec::with_capacity(spans * layout.w);
    for (s, wire) in body.chunks_exact(span_bytes).enumerate() {
        let mut span = Span {
            chunks: vec![[0; PAYLOAD_BYTES]; layout.n],
            parity: vec![0; layout.p],
        };
        let mut erasures = ErasureSet::new();
        for (i, c) in wire.chunks_exact(WIRE_BYTES).enumerate() {
            let v = inner.decode_codec(c.try_into().unwrap(), InnerPolicy::Correct);
            stats.chunks += 1;
            match (v.kind, v.payload) {
                (VerdictKind::Erasure, _) | (_, None) => {
                    stats.chunks_erased += 1;
                    erasures.insert(i);
                }
                (kind, Some(p)) => {
                    if matches!(kind, VerdictKind::Corrected(_)) {
                        stats.chunks_corrected += 1;
                    }
                    span.set_slot(i, &p);
                }
            }
        }
        if !erasures.is_empty() {
            span = outer
                .repair(&span, &erasures)
                .map_err(|_| ContainerError::Uncorrectable {
                    span: s,
                    erasures: erasures.len(),
                    capacity: layout.c,
                })?
                .span;
            stats.spans_repaired += 1;
        }
        stats.spans += 1;
        out.extend_from_slice(&span.data_bytes());
    }
    out.truncate(len as usize);
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_clean_and_noisy() {
        let data: Vec<u8> = (0..10_000u32).map(|i| (i * 31 % 251) as u8).collect();
        let l = SpanLayout::bandwidth();
        let enc = encode_container(&data, &l).unwrap();
        assert_eq!(&enc[..8], MAGIC);
        assert_eq!(enc.len(), HEADER_BYTES + 5 * 2592);
        let (dec, st) = decode_container(&enc, None).unwrap();
        assert_eq!(dec, data);
        assert_eq!(st.chunks_corrected + st.chunks_erased, 0);
        let noisy = FaultConfig { ber: 2e-3, ..Default::default() };
        let (dec, st) = decode_container(&enc, Some(&noisy)).unwrap();
        assert_eq!(dec, data);
        assert!(st.flips_injected > 0 && st.chunks_corrected > 0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(decode_container(b"short", None), Err(ContainerError::Truncated(_))));
        let mut enc = encode_container(b"hello", &SpanLayout::reliability()).unwrap();
        enc[0] = b'X';
        assert!(matches!(decode_container(&enc, None), Err(ContainerError::Magic)));
        let enc = encode_container(b"hello", &SpanLayout::reliability()).unwrap();
        assert!(matches!(decode_container(&enc[..enc.len() - 1], None), Err(ContainerError::Truncated(_))));
        let noisy = FaultConfig { ber: 0.05, ..Default::default() };
        assert!(matches!(decode_container(&enc, Some(&noisy)), Err(ContainerError::Uncorrectable { span: 0, .. })));
        let (empty, _) = decode_container(&encode_container(b"", &SpanLayout::reliability()).unwrap(), None).unwrap();
        assert!(empty.is_empty());
    }
}
