use super::CodecError;
use crate::quant::{symbol_likelihood, EntropyParams};

/// Default and bitstream CDF precision in bits.
pub const CDF_PRECISION: u32 = 16;

/// Integer cumulative frequencies for symbols `s_min..=s_max`. Entry `i` is
/// the cumulative count below symbol `s_min + i`; the table starts at 0,
/// ends at `1 << precision` and is strictly increasing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdfTable {
    pub precision: u32,
    pub s_min: i32,
    pub s_max: i32,
    pub cdf: Vec<u32>,
}

impl CdfTable {
    /// Discretizes the Gaussian bin model over `[s_min, s_max]`. Every bin
    /// receives at least one count, so any in-range symbol is codable.
    /// Probabilities are evaluated once in f64; everything after is integer
    /// arithmetic in a fixed order.
    pub fn build(m: &EntropyParams, s_min: i32, s_max: i32, precision: u32) -> Result<Self, CodecError> {
        if s_min > s_max {
            return Err(CodecError::Range(format!("empty symbol range [{s_min}, {s_max}]")));
        }
        if !(1..=24).contains(&precision) {
            return Err(CodecError::Range(format!("unsupported CDF precision {precision}")));
        }
        let total = 1u64 << precision;
        let n = (s_max as i64 - s_min as i64 + 1) as u64;
        if n > total {
            return Err(CodecError::Range(format!(
                "{n} symbols in [{s_min}, {s_max}] exceed the {total} slots of a {precision}-bit table"
            )));
        }
        let probs: Vec<f64> = (s_min..=s_max).map(|s| symbol_likelihood(s as f64, m)).collect();
        let mass: f64 = probs.iter().sum();
        let spare = (total - n) as f64;
        let mut freq: Vec<u64> = probs.iter().map(|p| 1 + (p / mass * spare).floor() as u64).collect();
        let used: u64 = freq.iter().sum();
        // the rounding remainder goes to the most probable bin (lowest index on ties)
        let top = (0..freq.len()).fold(0, |best, i| if freq[i] > freq[best] { i } else { best });
        freq[top] += total - used;
        let mut cdf = Vec::with_capacity(freq.len() + 1);
        let mut acc = 0u64;
        cdf.push(0);
        for f in freq {
            acc += f;
            cdf.push(acc as u32);
        }
        Ok(Self { precision, s_min, s_max, cdf })
    }

    pub fn len(&self) -> usize {
        self.cdf.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total(&self) -> u32 {
        1 << self.precision
    }

    /// `(start, freq)` of symbol `s`.
    pub fn interval(&self, s: i32) -> Result<(u32, u32), CodecError> {
        if s < self.s_min || s > self.s_max {
            return Err(CodecError::Range(format!("symbol {s} outside [{}, {}]", self.s_min, self.s_max)));
        }
        let i = (s as i64 - self.s_min as i64) as usize;
        Ok((self.cdf[i], self.cdf[i + 1] - self.cdf[i]))
    }

    /// Symbol whose interval contains the slot `cum`.
    pub fn lookup(&self, cum: u32) -> (i32, u32, u32) {
        let i = self.cdf.partition_point(|&c| c <= cum) - 1;
        (self.s_min + i as i32, self.cdf[i], self.cdf[i + 1] - self.cdf[i])
    }

    /// Probability the table assigns to `s`.
    pub fn prob(&self, s: i32) -> Result<f64, CodecError> {
        Ok(self.interval(s)?.1 as f64 / self.total() as f64)
    }

    /// Checks the structural invariants (used on tables arriving from outside).
    pub fn validate(&self) -> Result<(), CodecError> {
        let ok = self.cdf.len() as i64 == self.s_max as i64 - self.s_min as i64 + 2
            && self.cdf.first() == Some(&0)
            && self.cdf.last() == Some(&self.total())
            && self.cdf.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(())
        } else {
            Err(CodecError::Range("malformed CDF table".into()))
        }
    }

    /// C-compatible borrowed view for external coder backends.
    pub fn view(&self) -> CdfView {
        CdfView {
            precision: self.precision,
            s_min: self.s_min,
            s_max: self.s_max,
            cdf: self.cdf.as_ptr(),
            cdf_len: self.cdf.len(),
        }
    }
}

/// Borrowed, FFI-safe layout of a [`CdfTable`]: `cdf` points at `cdf_len =
/// s_max - s_min + 2` little-endian-agnostic `u32` cumulative counts.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct CdfView {
    pub precision: u32,
    pub s_min: i32,
    pub s_max: i32,
    pub cdf: *const u32,
    pub cdf_len: usize,
}
