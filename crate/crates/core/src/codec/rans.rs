//! Reference rANS coder and the backend interface used by the bitstream.
//!
//! State machine (normative; an accelerated backend must reproduce it
//! byte for byte):
//! - 32-bit state `x` kept in `[RANS_L, RANS_L << 8)`, `RANS_L = 1 << 23`.
//! - Byte-wise renormalization. Before encoding a symbol with frequency `f`
//!   at precision `p`, bytes `x & 0xff` are emitted while
//!   `x >= ((RANS_L >> p) << 8) * f`.
//! - Encode step: `x = ((x / f) << p) + (x % f) + start`.
//! - Symbols are encoded last to first; the encoder starts at `x = RANS_L`
//!   and finishes by writing the 4 state bytes. The emitted byte sequence is
//!   reversed, so the payload begins with the final state in little-endian
//!   order and the decoder reads strictly forward.
//! - Decode step: `cum = x & ((1 << p) - 1)`, find the symbol with
//!   `start <= cum < start + f`, then `x = f * (x >> p) + cum - start` and
//!   pull bytes `x = (x << 8) | next` while `x < RANS_L`.
//! - A valid payload is consumed exactly and leaves the decoder at `RANS_L`.

use super::cdf::{CdfTable, CdfView};
use super::CodecError;

pub const RANS_L: u32 = 1 << 23;
pub const RANS_STATE_BYTES: usize = 4;

/// Pluggable entropy coder over [`CdfTable`]s.
pub trait CoderBackend {
    fn encode(&self, symbols: &[i32], cdf: &CdfTable) -> Result<Vec<u8>, CodecError>;
    fn decode(&self, payload: &[u8], count: usize, cdf: &CdfTable) -> Result<Vec<i32>, CodecError>;
}

/// Straightforward scalar implementation of the state machine above.
#[derive(Clone, Copy, Debug, Default)]
pub struct ReferenceCoder;

impl CoderBackend for ReferenceCoder {
    fn encode(&self, symbols: &[i32], cdf: &CdfTable) -> Result<Vec<u8>, CodecError> {
        let p = cdf.precision;
        let mut out = Vec::with_capacity(symbols.len() / 2 + RANS_STATE_BYTES);
        let mut x = RANS_L;
        for &s in symbols.iter().rev() {
            let (start, f) = cdf.interval(s)?;
            let x_max = ((RANS_L >> p) << 8) * f;
            while x >= x_max {
                out.push((x & 0xff) as u8);
                x >>= 8;
            }
            x = ((x / f) << p) + (x % f) + start;
        }
        // pushed high byte first so the reversed stream reads little-endian
        for shift in [24, 16, 8, 0] {
            out.push((x >> shift) as u8);
        }
        out.reverse();
        Ok(out)
    }

    fn decode(&self, payload: &[u8], count: usize, cdf: &CdfTable) -> Result<Vec<i32>, CodecError> {
        let p = cdf.precision;
        let mask = (1u32 << p) - 1;
        if payload.len() < RANS_STATE_BYTES {
            return Err(CodecError::TruncatedPayload("missing coder state".into()));
        }
        let mut x = u32::from_le_bytes(payload[..4].try_into().expect("4 bytes"));
        let mut pos = RANS_STATE_BYTES;
        let mut out = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let cum = x & mask;
            let (s, start, f) = cdf.lookup(cum);
            x = f * (x >> p) + cum - start;
            while x < RANS_L {
                let Some(&b) = payload.get(pos) else {
                    return Err(CodecError::TruncatedPayload(format!("ran out of bytes after {} symbols", out.len())));
                };
                x = (x << 8) | b as u32;
                pos += 1;
            }
            out.push(s);
        }
        if x != RANS_L || pos != payload.len() {
            return Err(CodecError::CorruptPayload(format!(
                "coder ended in state {x:#x} with {} unread bytes",
                payload.len() - pos
            )));
        }
        Ok(out)
    }
}

/// Status codes returned across the foreign-function boundary.
pub mod status {
    pub const OK: i32 = 0;
    pub const OUT_OF_RANGE: i32 = 1;
    pub const TRUNCATED: i32 = 2;
    pub const BUFFER_TOO_SMALL: i32 = 3;
    pub const CORRUPT: i32 = 4;
}

/// `encode(symbols, n, cdf, out, out_cap, out_len) -> status`
pub type KernelEncodeFn =
    unsafe extern "C" fn(*const i32, usize, *const CdfView, *mut u8, usize, *mut usize) -> i32;
/// `decode(payload, payload_len, n, cdf, out) -> status`; `out` holds `n` symbols.
pub type KernelDecodeFn = unsafe extern "C" fn(*const u8, usize, usize, *const CdfView, *mut i32) -> i32;

/// Upper bound on the payload size for `n` symbols: at most two
/// renormalization bytes per symbol plus the state flush.
pub fn max_payload_len(n: usize) -> usize {
    2 * n + RANS_STATE_BYTES
}

/// Backend calling an external kernel through C-compatible entry points.
#[derive(Clone, Copy, Debug)]
pub struct ExternBackend {
    pub encode: KernelEncodeFn,
    pub decode: KernelDecodeFn,
}

fn status_error(code: i32) -> CodecError {
    match code {
        status::OUT_OF_RANGE => CodecError::Range("kernel rejected an out-of-range symbol".into()),
        status::TRUNCATED => CodecError::TruncatedPayload("kernel ran out of input".into()),
        status::CORRUPT => CodecError::CorruptPayload("kernel reported a corrupt payload".into()),
        other => CodecError::Backend(other),
    }
}

impl CoderBackend for ExternBackend {
    fn encode(&self, symbols: &[i32], cdf: &CdfTable) -> Result<Vec<u8>, CodecError> {
        let view = cdf.view();
        let mut out = vec![0u8; max_payload_len(symbols.len())];
        let mut len = 0usize;
        // SAFETY: all pointers reference live buffers of the advertised sizes.
        let code =
            unsafe { (self.encode)(symbols.as_ptr(), symbols.len(), &view, out.as_mut_ptr(), out.len(), &mut len) };
        if code != status::OK {
            return Err(status_error(code));
        }
        if len > out.len() {
            return Err(CodecError::Backend(status::BUFFER_TOO_SMALL));
        }
        out.truncate(len);
        Ok(out)
    }

    fn decode(&self, payload: &[u8], count: usize, cdf: &CdfTable) -> Result<Vec<i32>, CodecError> {
        let view = cdf.view();
        let mut out = vec![0i32; count];
        // SAFETY: as above; `out` holds exactly `count` symbols.
        let code = unsafe { (self.decode)(payload.as_ptr(), payload.len(), count, &view, out.as_mut_ptr()) };
        if code != status::OK {
            return Err(status_error(code));
        }
        Ok(out)
    }
}
