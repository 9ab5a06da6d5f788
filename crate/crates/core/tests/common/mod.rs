#![allow(dead_code)]

use nerv_boost::codec::QuantizedRecord;
use nerv_boost::quant::{EntropyParams, QuantParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// A random set of 0..=5 records: random ranks, shapes, quantizers and
/// roughly Gaussian symbols whose stored model may fit them well or badly.
pub fn random_record_set(seed: u64) -> Vec<QuantizedRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(0..=5);
    (0..n)
        .map(|i| {
            let rank = rng.gen_range(1..=4);
            let shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..=if rank > 2 { 6 } else { 40 })).collect();
            let numel: usize = shape.iter().product();
            let sigma: f64 = 10f64.powf(rng.gen_range(-3.0..2.3));
            let mu: f64 = rng.gen_range(-50.0..50.0);
            let spread = sigma * rng.gen_range(0.5..3.0);
            let normal = Normal::new(mu, spread).unwrap();
            let symbols: Vec<i32> = (0..numel).map(|_| normal.sample(&mut rng).round() as i32).collect();
            let q = if rng.gen_bool(0.5) {
                QuantParams::symmetric(rng.gen_range(1e-4..1.0))
            } else {
                QuantParams::asymmetric(rng.gen_range(1e-4..1.0), rng.gen_range(-2.0..2.0))
            };
            let m = EntropyParams { mu: mu + rng.gen_range(-2.0..2.0), sigma };
            QuantizedRecord::new(format!("t{i}.w"), shape, symbols, &q.to_stored(), &m.to_stored())
        })
        .collect()
}
