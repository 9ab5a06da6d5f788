//! Plugs an entropy coder in through the C-compatible kernel interface. The
//! kernel here forwards to the reference coder; an accelerated one would
//! expose the same two functions.

use nerv_boost::codec::{
    decode_records, encode_records, status, CdfTable, CdfView, CoderBackend, ExternBackend, QuantizedRecord,
    ReferenceCoder,
};
use nerv_boost::quant::{EntropyParams, QuantParams};

fn table(view: &CdfView) -> CdfTable {
    // SAFETY: the caller passes a view of a live table.
    let cdf = unsafe { std::slice::from_raw_parts(view.cdf, view.cdf_len) }.to_vec();
    CdfTable { precision: view.precision, s_min: view.s_min, s_max: view.s_max, cdf }
}

unsafe extern "C" fn kernel_encode(sym: *const i32, n: usize, cdf: *const CdfView, out: *mut u8, cap: usize, len: *mut usize) -> i32 {
    match ReferenceCoder.encode(std::slice::from_raw_parts(sym, n), &table(&*cdf)) {
        Ok(b) if b.len() <= cap => {
            std::ptr::copy_nonoverlapping(b.as_ptr(), out, b.len());
            *len = b.len();
            status::OK
        }
        Ok(_) => status::BUFFER_TOO_SMALL,
        Err(_) => status::OUT_OF_RANGE,
    }
}

unsafe extern "C" fn kernel_decode(payload: *const u8, len: usize, n: usize, cdf: *const CdfView, out: *mut i32) -> i32 {
    match ReferenceCoder.decode(std::slice::from_raw_parts(payload, len), n, &table(&*cdf)) {
        Ok(s) => {
            std::ptr::copy_nonoverlapping(s.as_ptr(), out, n);
            status::OK
        }
        Err(_) => status::CORRUPT,
    }
}

fn main() -> anyhow::Result<()> {
    let m = EntropyParams { mu: 0.0, sigma: 3.0 };
    let symbols: Vec<i32> = (0..10_000).map(|i| ((i * 7919) % 13) as i32 - 6).collect();
    let rec = QuantizedRecord::new("w", vec![100, 100], symbols, &QuantParams::symmetric(0.01), &m);
    let ext = ExternBackend { encode: kernel_encode, decode: kernel_decode };
    let a = encode_records(std::slice::from_ref(&rec), &ReferenceCoder)?;
    let b = encode_records(std::slice::from_ref(&rec), &ext)?;
    assert_eq!(a, b);
    assert_eq!(decode_records(&b, &ext)?, vec![rec]);
    println!("external backend produced the same {} bytes and decoded them back", b.len());
    Ok(())
}
