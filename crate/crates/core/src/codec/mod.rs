//! Entropy-coded bitstream for quantized tensors.

mod cdf;
mod model;
mod rans;
mod record;

pub use cdf::{CdfTable, CdfView, CDF_PRECISION};
pub use model::{embedding_name, record_estimated_bits, QuantizedModel, CONFIG_RECORD, EMBEDDING_PREFIX};
pub use rans::{
    max_payload_len, status, CoderBackend, ExternBackend, KernelDecodeFn, KernelEncodeFn, ReferenceCoder, RANS_L,
    RANS_STATE_BYTES,
};
pub use record::{decode_records, encode_records, QuantizedRecord, FORMAT_VERSION, HEADER_BYTES, MAGIC, MAX_RECORD_SYMBOLS};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("not a bitstream (bad magic)")]
    BadMagic,
    #[error("unsupported bitstream version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("symbol range / CDF mismatch: {0}")]
    Range(String),
    #[error("truncated payload: {0}")]
    TruncatedPayload(String),
    #[error("corrupt payload: {0}")]
    CorruptPayload(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("model layout hash mismatch: stream has {found}, rebuilt model has {expected}")]
    ConfigHash { found: String, expected: String },
    #[error("coder backend failed with status {0}")]
    Backend(i32),
}

#[cfg(test)]
mod tests;
