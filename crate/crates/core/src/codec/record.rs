use super::cdf::{CdfTable, CDF_PRECISION};
use super::rans::CoderBackend;
use super::CodecError;
use crate::quant::{EntropyParams, QuantMode, QuantParams};

pub const MAGIC: &[u8; 4] = b"NRVB";
pub const FORMAT_VERSION: u16 = 1;
/// Magic, version and record count.
pub const HEADER_BYTES: usize = 4 + 2 + 4;
/// Largest symbol count accepted from a record header.
pub const MAX_RECORD_SYMBOLS: usize = 1 << 28;

/// One quantized tensor: integer symbols plus everything needed to decode
/// and dequantize them. Scalars are kept at their stored `f32` precision.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub symbols: Vec<i32>,
    pub scale: f32,
    pub offset: f32,
    pub mu: f32,
    pub sigma: f32,
    pub s_min: i32,
    pub s_max: i32,
}

impl QuantizedRecord {
    /// Builds a record, taking the symbol range from the data.
    pub fn new(name: impl Into<String>, shape: Vec<usize>, symbols: Vec<i32>, q: &QuantParams, m: &EntropyParams) -> Self {
        let s_min = symbols.iter().copied().min().unwrap_or(0);
        let s_max = symbols.iter().copied().max().unwrap_or(0);
        Self {
            name: name.into(),
            shape,
            symbols,
            scale: q.scale as f32,
            offset: q.offset as f32,
            mu: m.mu as f32,
            sigma: m.sigma as f32,
            s_min,
            s_max,
        }
    }

    pub fn quant_params(&self) -> QuantParams {
        let mode = if self.offset == 0.0 { QuantMode::Symmetric } else { QuantMode::Asymmetric };
        QuantParams { scale: self.scale as f64, offset: self.offset as f64, mode }
    }

    pub fn entropy_params(&self) -> EntropyParams {
        EntropyParams { mu: self.mu as f64, sigma: self.sigma as f64 }
    }

    pub fn cdf(&self) -> Result<CdfTable, CodecError> {
        CdfTable::build(&self.entropy_params(), self.s_min, self.s_max, CDF_PRECISION)
    }

    /// Fixed-layout metadata bytes: name length prefix, rank, dims, four
    /// scalars, the symbol range and the payload length (the name itself
    /// excluded).
    pub fn fixed_metadata_bytes(&self) -> usize {
        2 + 1 + 4 * self.shape.len() + 4 * 4 + 2 * 4 + 8
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        let bad = |m: String| Err(CodecError::InvalidRecord(format!("{}: {m}", self.name)));
        if self.name.len() > u16::MAX as usize {
            return bad("name too long".into());
        }
        if self.shape.len() > u8::MAX as usize || self.shape.iter().any(|&d| d > u32::MAX as usize) {
            return bad(format!("unrepresentable shape {:?}", self.shape));
        }
        if self.shape.iter().product::<usize>() != self.symbols.len() {
            return bad(format!("{} symbols for shape {:?}", self.symbols.len(), self.shape));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() || !self.mu.is_finite() {
            return bad(format!("invalid entropy model mu={} sigma={}", self.mu, self.sigma));
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() || !self.offset.is_finite() {
            return bad(format!("invalid quantizer scale={} offset={}", self.scale, self.offset));
        }
        if self.s_min > self.s_max || self.symbols.iter().any(|&s| s < self.s_min || s > self.s_max) {
            return Err(CodecError::Range(format!("{}: symbols outside [{}, {}]", self.name, self.s_min, self.s_max)));
        }
        Ok(())
    }
}

/// Serializes records into a self-describing stream.
pub fn encode_records(records: &[QuantizedRecord], backend: &dyn CoderBackend) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let count = u32::try_from(records.len()).map_err(|_| CodecError::InvalidRecord("too many records".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for r in records {
        r.validate()?;
        let payload = backend.encode(&r.symbols, &r.cdf()?)?;
        out.extend_from_slice(&(r.name.len() as u16).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(r.shape.len() as u8);
        for &d in &r.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in [r.scale, r.offset, r.mu, r.sigma] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&r.s_min.to_le_bytes());
        out.extend_from_slice(&r.s_max.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CodecError> {
        if self.buf.len() - self.pos < n {
            return Err(CodecError::CorruptHeader(format!("stream ends inside {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8, CodecError> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2")))
    }
    fn u32(&mut self, what: &str) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4")))
    }
    fn i32(&mut self, what: &str) -> Result<i32, CodecError> {
        Ok(i32::from_le_bytes(self.take(4, what)?.try_into().expect("4")))
    }
    fn f32(&mut self, what: &str) -> Result<f32, CodecError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().expect("4")))
    }
    fn u64(&mut self, what: &str) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8")))
    }
}

/// Parses a stream produced by [`encode_records`].
pub fn decode_records(bytes: &[u8], backend: &dyn CoderBackend) -> Result<Vec<QuantizedRecord>, CodecError> {
    let mut rd = Reader { buf: bytes, pos: 0 };
    if rd.take(4, "magic")? != MAGIC {
        return Err(CodecError::BadMagic);
    }
    let version = rd.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(CodecError::Version { found: version, expected: FORMAT_VERSION });
    }
    let count = rd.u32("record count")?;
    let mut records = Vec::new();
    for _ in 0..count {
        let len = rd.u16("name length")? as usize;
        let name = std::str::from_utf8(rd.take(len, "name")?)
            .map_err(|_| CodecError::CorruptHeader("record name is not UTF-8".into()))?
            .to_string();
        let rank = rd.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(rd.u32("dims")? as usize);
        }
        let (scale, offset, mu, sigma) = (rd.f32("scale")?, rd.f32("offset")?, rd.f32("mu")?, rd.f32("sigma")?);
        let (s_min, s_max) = (rd.i32("s_min")?, rd.i32("s_max")?);
        let payload_len = rd.u64("payload length")?;
        let remaining = (bytes.len() - rd.pos) as u64;
        if payload_len > remaining {
            return Err(CodecError::TruncatedPayload(format!(
                "{name}: payload of {payload_len} bytes but only {remaining} remain"
            )));
        }
        let payload = rd.take(payload_len as usize, "payload")?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= MAX_RECORD_SYMBOLS)
            .ok_or_else(|| CodecError::CorruptHeader(format!("{name}: implausible shape {shape:?}")))?;
        let mut r = QuantizedRecord { name, shape, symbols: Vec::new(), scale, offset, mu, sigma, s_min, s_max };
        let cdf = r.cdf().map_err(|e| match e {
            CodecError::Range(m) => CodecError::Range(format!("{}: {m}", r.name)),
            other => other,
        })?;
        r.symbols = backend.decode(payload, numel, &cdf).map_err(|e| match e {
            CodecError::TruncatedPayload(m) => CodecError::TruncatedPayload(format!("{}: {m}", r.name)),
            CodecError::CorruptPayload(m) => CodecError::CorruptPayload(format!("{}: {m}", r.name)),
            other => other,
        })?;
        records.push(r);
    }
    if rd.pos != bytes.len() {
        return Err(CodecError::CorruptHeader(format!("{} trailing bytes after the last record", bytes.len() - rd.pos)));
    }
    Ok(records)
}
