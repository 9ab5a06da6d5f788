use super::*;
use crate::quant::{symbol_likelihood, EntropyParams, QuantParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model(mu: f64, sigma: f64) -> EntropyParams {
    EntropyParams { mu, sigma }
}

/// Draws symbols from the bin model by inverse-CDF sampling over a range.
fn sample_symbols(m: &EntropyParams, n: usize, seed: u64) -> Vec<i32> {
    let lo = (m.mu - 10.0 * m.sigma).floor() as i32;
    let hi = (m.mu + 10.0 * m.sigma).ceil() as i32;
    let probs: Vec<f64> = (lo..=hi).map(|s| symbol_likelihood(s as f64, m)).collect();
    let total: f64 = probs.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut u = rng.gen_range(0.0..total);
            for (i, p) in probs.iter().enumerate() {
                if u < *p {
                    return lo + i as i32;
                }
                u -= p;
            }
            hi
        })
        .collect()
}

fn record(name: &str, symbols: Vec<i32>, m: &EntropyParams) -> QuantizedRecord {
    let n = symbols.len();
    QuantizedRecord::new(name, vec![n], symbols, &QuantParams::symmetric(0.01), m)
}

#[test]
fn single_symbol_table() {
    let t = CdfTable::build(&model(3.0, 1.0), 3, 3, CDF_PRECISION).unwrap();
    assert_eq!(t.cdf, vec![0, 65536]);
    t.validate().unwrap();
}

#[test]
fn centre_bin_follows_the_gaussian_mass() {
    let t = CdfTable::build(&model(0.0, 1.0), -8, 8, CDF_PRECISION).unwrap();
    let (_, f) = t.interval(0).unwrap();
    let ideal = (0.382925f64 * 65536.0).round();
    assert!((f as f64 - ideal).abs() <= 17.0, "{f} vs {ideal}");
    t.validate().unwrap();
}

#[test]
fn every_bin_is_codable_for_degenerate_models() {
    let t = CdfTable::build(&model(0.0, 1e-6), -300, 300, CDF_PRECISION).unwrap();
    t.validate().unwrap();
    assert!((-300..=300).all(|s| t.interval(s).unwrap().1 >= 1));
    assert!(CdfTable::build(&model(0.0, 1.0), 0, 70_000, CDF_PRECISION).is_err());
    assert!(CdfTable::build(&model(0.0, 1.0), 2, 1, CDF_PRECISION).is_err());
}

#[test]
fn empty_stream_is_header_only() {
    let bytes = encode_records(&[], &ReferenceCoder).unwrap();
    assert_eq!(bytes.len(), HEADER_BYTES);
    assert_eq!(&bytes[..4], MAGIC);
    assert!(decode_records(&bytes, &ReferenceCoder).unwrap().is_empty());
}

#[test]
fn payload_tracks_model_rate() {
    let m = model(0.3, 2.5);
    let symbols = sample_symbols(&m, 100_000, 3);
    let r = record("w", symbols.clone(), &m);
    let payload = ReferenceCoder.encode(&symbols, &r.cdf().unwrap()).unwrap();
    let bits = payload.len() as f64 * 8.0;
    let est = record_estimated_bits(&r);
    assert!((bits / est - 1.0).abs() < 0.02, "{bits} vs {est}");

    let cdf = r.cdf().unwrap();
    let table_bits: f64 = symbols.iter().map(|&s| -cdf.prob(s).unwrap().log2()).sum();
    assert!(bits <= 1.02 * table_bits + 32.0);
    assert!(bits >= table_bits);
}

#[test]
fn edge_symbols_round_trip() {
    let m = model(0.0, 0.5);
    let symbols = vec![-40, 40, 0, -40, 40, 40, 0, -40];
    let r = record("edge", symbols.clone(), &m);
    let bytes = encode_records(&[r.clone()], &ReferenceCoder).unwrap();
    assert_eq!(decode_records(&bytes, &ReferenceCoder).unwrap(), vec![r]);
}

#[test]
fn fixed_metadata_fits_in_64_bytes() {
    let r = QuantizedRecord::new("x", vec![64, 64, 3, 3], vec![0; 36864], &QuantParams::symmetric(0.1), &model(0.0, 1.0));
    assert!(r.fixed_metadata_bytes() <= 64);
    let bytes = encode_records(&[r.clone()], &ReferenceCoder).unwrap();
    let payload = ReferenceCoder.encode(&r.symbols, &r.cdf().unwrap()).unwrap();
    assert_eq!(bytes.len(), HEADER_BYTES + r.fixed_metadata_bytes() + r.name.len() + payload.len());
}

fn sample_stream() -> (Vec<QuantizedRecord>, Vec<u8>) {
    let m = model(-1.0, 3.0);
    let recs = vec![record("a", sample_symbols(&m, 500, 1), &m), record("b", sample_symbols(&m, 300, 2), &m)];
    let bytes = encode_records(&recs, &ReferenceCoder).unwrap();
    (recs, bytes)
}

#[test]
fn header_errors_are_distinct() {
    let (_, bytes) = sample_stream();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert_eq!(decode_records(&bad, &ReferenceCoder), Err(CodecError::BadMagic));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(decode_records(&bad, &ReferenceCoder), Err(CodecError::Version { found: 9, .. })));
    assert!(matches!(decode_records(&bytes[..12], &ReferenceCoder), Err(CodecError::CorruptHeader(_))));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(decode_records(&extra, &ReferenceCoder), Err(CodecError::CorruptHeader(_))));
}

#[test]
fn truncated_payload_is_reported() {
    let (_, bytes) = sample_stream();
    let cut = &bytes[..bytes.len() - 3];
    assert!(matches!(decode_records(cut, &ReferenceCoder), Err(CodecError::TruncatedPayload(_))));
}

#[test]
fn corrupted_payload_is_detected() {
    let m = model(0.0, 2.0);
    let r = record("w", sample_symbols(&m, 400, 9), &m);
    let payload = ReferenceCoder.encode(&r.symbols, &r.cdf().unwrap()).unwrap();
    let mut flipped = payload.clone();
    flipped[payload.len() / 2] ^= 0x5a;
    let res = ReferenceCoder.decode(&flipped, r.symbols.len(), &r.cdf().unwrap());
    assert!(matches!(res, Err(CodecError::CorruptPayload(_)) | Err(CodecError::TruncatedPayload(_))), "{res:?}");
}

#[test]
fn range_mismatch_is_reported() {
    let (_, mut bytes) = sample_stream();
    // first record: header(10) + name len(2) + "a"(1) + rank(1) + dim(4) + 4 floats(16) -> s_min at 34
    bytes[34..38].copy_from_slice(&i32::MAX.to_le_bytes());
    assert!(matches!(decode_records(&bytes, &ReferenceCoder), Err(CodecError::Range(_))));
    let m = model(0.0, 1.0);
    let mut r = record("r", vec![0, 1, 2], &m);
    r.s_max = 1;
    assert!(matches!(encode_records(&[r], &ReferenceCoder), Err(CodecError::Range(_))));
}

unsafe extern "C" fn ext_encode(
    symbols: *const i32,
    n: usize,
    cdf: *const CdfView,
    out: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> i32 {
    let view = &*cdf;
    let table = CdfTable {
        precision: view.precision,
        s_min: view.s_min,
        s_max: view.s_max,
        cdf: std::slice::from_raw_parts(view.cdf, view.cdf_len).to_vec(),
    };
    match ReferenceCoder.encode(std::slice::from_raw_parts(symbols, n), &table) {
        Ok(bytes) if bytes.len() <= cap => {
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), out, bytes.len());
            *out_len = bytes.len();
            status::OK
        }
        Ok(_) => status::BUFFER_TOO_SMALL,
        Err(_) => status::OUT_OF_RANGE,
    }
}

unsafe extern "C" fn ext_decode(payload: *const u8, len: usize, n: usize, cdf: *const CdfView, out: *mut i32) -> i32 {
    let view = &*cdf;
    let table = CdfTable {
        precision: view.precision,
        s_min: view.s_min,
        s_max: view.s_max,
        cdf: std::slice::from_raw_parts(view.cdf, view.cdf_len).to_vec(),
    };
    match ReferenceCoder.decode(std::slice::from_raw_parts(payload, len), n, &table) {
        Ok(s) => {
            std::ptr::copy_nonoverlapping(s.as_ptr(), out, n);
            status::OK
        }
        Err(CodecError::TruncatedPayload(_)) => status::TRUNCATED,
        Err(_) => status::CORRUPT,
    }
}

#[test]
fn external_backend_is_a_drop_in() {
    let ext = ExternBackend { encode: ext_encode, decode: ext_decode };
    let (recs, bytes) = sample_stream();
    assert_eq!(encode_records(&recs, &ext).unwrap(), bytes);
    assert_eq!(decode_records(&bytes, &ext).unwrap(), recs);
    let m = model(0.0, 1.0);
    let t = CdfTable::build(&m, -2, 2, CDF_PRECISION).unwrap();
    assert!(matches!(ext.encode(&[7], &t), Err(CodecError::Range(_))));
    let empty = ext.encode(&[], &t).unwrap();
    assert_eq!(empty, RANS_L.to_le_bytes());
    assert!(ext.decode(&empty, 0, &t).unwrap().is_empty());
    assert!(max_payload_len(0) == RANS_STATE_BYTES);
}
