use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gauss_samples(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            // Box-Muller
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}

#[test]
fn quantizer_examples() {
    assert_eq!(quantize(&[1.3f64], &QuantParams::symmetric(0.5)).unwrap(), vec![3]);
    assert_eq!(dequantize(&[3], &QuantParams::symmetric(0.5)), vec![1.5]);
    let q = QuantParams::asymmetric(0.2, 0.1);
    assert_eq!(quantize(&[0.9f64], &q).unwrap(), vec![4]);
    assert!((dequantize(&[4], &q)[0] - 0.9).abs() < 1e-15);
    assert_eq!(quantize(&[1.25f64, -1.25, 0.75], &QuantParams::symmetric(0.5)).unwrap(), vec![2, -2, 2]);
    assert!(quantize(&[f64::NAN], &QuantParams::symmetric(0.5)).is_err());
    assert!(quantize(&[1.0f64], &QuantParams::symmetric(0.0)).is_err());
}

#[test]
fn initial_lattice_spans_the_tensor() {
    let x = [-0.3f64, 0.1, 0.9];
    let s = QuantParams::init(&x, QuantMode::Symmetric, 4.0);
    assert_eq!(s.offset, 0.0);
    assert!((s.scale - 1.8 / 15.0).abs() < 1e-15);
    let a = QuantParams::init(&x, QuantMode::Asymmetric, 4.0);
    assert!((a.offset - 0.3).abs() < 1e-15);
    assert!((a.scale - 1.2 / 15.0).abs() < 1e-15);
    let syms = quantize(&x, &a).unwrap();
    assert!(syms.iter().all(|s| s.abs() <= 8));
}

#[test]
fn likelihood_of_centre_bin() {
    let p = symbol_likelihood(0.0, &EntropyParams { mu: 0.0, sigma: 1.0 });
    assert!((p - 0.382925).abs() < 1e-5, "{p}");
    let erf_form = libm::erf(0.5 / std::f64::consts::SQRT_2);
    assert!((p - erf_form).abs() < 1e-15);
}

#[test]
fn likelihood_mass_is_a_sub_distribution() {
    for (mu, sigma) in [(0.0, 1.0), (0.4, 0.3), (-2.7, 7.3), (13.2, 25.0), (0.5, 1e-3)] {
        let m = EntropyParams { mu, sigma };
        let reach = (8.0 * sigma).ceil() as i64 + 1;
        let c = mu.round() as i64;
        let mass: f64 = (c - reach..=c + reach).map(|v| symbol_likelihood(v as f64, &m)).sum();
        assert!(mass >= 0.999 && mass <= 1.0 + 1e-6, "{mu} {sigma}: {mass}");
    }
    let wide = EntropyParams { mu: 0.0, sigma: 1e12 };
    assert_eq!(symbol_likelihood(0.0, &wide), P_MIN);
}

#[test]
fn tail_likelihoods_stay_accurate() {
    // upper-tail masses Q(4.5) - Q(5.5) from tabulated normal tail values
    let want = 3.397_673_124_730_053_6e-6 - 1.898_956_246_588_772_7e-8;
    let p = symbol_likelihood(5.0, &EntropyParams { mu: 0.0, sigma: 1.0 });
    assert!((p / want - 1.0).abs() < 1e-9, "{p} vs {want}");
    assert_eq!(p, symbol_likelihood(-5.0, &EntropyParams { mu: 0.0, sigma: 1.0 }));
}

#[test]
fn entropy_model_fit_examples() {
    let q = QuantParams::symmetric(1.0);
    let c = fit_entropy_model(&[0.7f64; 9], &q).unwrap();
    assert_eq!(c.sigma, SIGMA_MIN);
    let pm = fit_entropy_model(&[1.0f64, -1.0, 1.0, -1.0], &q).unwrap();
    assert_eq!((pm.mu, pm.sigma), (0.0, 1.0));
    let x = [0.3f64, -1.2, 2.5, 0.8];
    let a = fit_entropy_model(&x, &QuantParams::asymmetric(0.25, 0.1)).unwrap();
    let xs: Vec<f64> = x.iter().map(|v| v * 3.0).collect();
    let b = fit_entropy_model(&xs, &QuantParams::asymmetric(0.75, 0.3)).unwrap();
    assert!((a.mu - b.mu).abs() < 1e-12 && (a.sigma - b.sigma).abs() < 1e-12);
    assert!(fit_entropy_model::<f64>(&[], &q).is_err());
}

#[test]
fn rate_examples() {
    let m = EntropyParams { mu: 0.5, sigma: 1e-3 };
    let bits = estimate_rate_bits([0.0, 1.0, 1.0, 0.0, 1.0], &m);
    assert!((bits - 5.0).abs() < 1e-12);
    let capped = estimate_rate_bits([1e6], &EntropyParams { mu: 0.0, sigma: 1.0 });
    assert!((capped - 1e9f64.log2()).abs() < 1e-9);
}

#[test]
fn rate_of_gaussian_symbols_matches_discrete_entropy() {
    let sigma = 3.0;
    let m = EntropyParams { mu: 0.0, sigma };
    let symbols: Vec<f64> = gauss_samples(200_000, sigma, 7).into_iter().map(|v| v.round_ties_even()).collect();
    let per = estimate_rate_bits(symbols.iter().copied(), &m) / symbols.len() as f64;
    // entropy of the discretized Gaussian by direct summation
    let phi = |z: f64| 0.5 * libm::erfc(-z / std::f64::consts::SQRT_2);
    let h: f64 = (-60..=60)
        .map(|v| {
            let p = phi((v as f64 + 0.5) / sigma) - phi((v as f64 - 0.5) / sigma);
            if p > 0.0 {
                -p * p.log2()
            } else {
                0.0
            }
        })
        .sum();
    assert!((per - h).abs() < 0.01, "{per} vs {h}");
    let diff_entropy = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * sigma * sigma).log2();
    assert!((h - diff_entropy).abs() < 0.01);
}

#[test]
fn integer_symbol_rate_matches_independent_sum_exactly() {
    let m = EntropyParams { mu: 0.37, sigma: 2.2 };
    let symbols: Vec<i32> = (0..5000).map(|i| ((i * 7919) % 23) - 11).collect();
    let ours = estimate_rate_bits(symbols.iter().map(|&s| s as f64), &m);
    let mut oracle = 0.0f64;
    for &s in &symbols {
        let d = (s as f64 - 0.37).abs();
        let k = 2.2 * std::f64::consts::SQRT_2;
        let p = (0.5 * (libm::erfc((d - 0.5) / k) - libm::erfc((d + 0.5) / k))).max(1e-9);
        oracle += -p.log2();
    }
    assert_eq!(ours.to_bits(), oracle.to_bits());
}

#[test]
fn widening_sigma_costs_bits_at_the_mean() {
    let mut prev = 0.0;
    for k in 0..20 {
        let m = EntropyParams { mu: 1.5, sigma: 1.0 + k as f64 * 0.5 };
        let b = estimate_rate_bits([1.5], &m);
        assert!(b >= prev);
        prev = b;
    }
}

#[test]
fn budget_examples() {
    let t = rate_target(1_000_000, DEFAULT_B_AVG, 132, 720, 1280);
    assert!((t - 0.032881).abs() < 1e-6);
    let b = RateBudget { r: 0.05, r_target: t, b_avg: 4.0, kappa: KAPPA_HYBRID_BOOST };
    assert!((cem_loss(1.0, &b) - 1.008560).abs() < 1e-6);
    let under = RateBudget { r: 0.01, ..b };
    assert_eq!(cem_loss(1.0, &under), 1.0);
    assert_eq!((KAPPA_BASELINE, KAPPA_INDEX_BOOST, KAPPA_HYBRID_BOOST), (0.05, 0.2, 0.5));
    let rb = rate_budget(8.0 * 132.0 * 720.0 * 1280.0 * 0.05 / 8.0, 1_000_000, 4.0, 0.5, 132, 720, 1280);
    assert!((rb.r - 0.05).abs() < 1e-12 && rb.r_target == t);
}

fn scalar(g: &mut Graph<f64>, v: f64) -> Var {
    g.leaf(Tensor::scalar(v))
}

#[test]
fn graph_rate_and_model_agree_with_eager_forms() {
    let x = Tensor::new(vec![64], gauss_samples(64, 0.3, 3)).unwrap();
    let q = QuantParams::asymmetric(0.05, 0.02);
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let qv = QuantVars { scale: scalar(&mut g, q.scale), offset: Some(scalar(&mut g, q.offset)) };
    let (mu, sigma) = entropy_model_node(&mut g, xv, &qv).unwrap();
    let m = fit_entropy_model(x.data(), &q).unwrap();
    assert!((g.value(mu).item() - m.mu).abs() < 1e-10);
    assert!((g.value(sigma).item() - m.sigma).abs() < 1e-10);

    let noise = uniform_noise::<f64>(vec![64], &mut ChaCha8Rng::seed_from_u64(1));
    let view = mixed_quantize_node(&mut g, xv, &qv, &noise).unwrap();
    let syms = quantize(x.data(), &q).unwrap();
    let deq = dequantize(&syms, &q);
    for (a, b) in g.value(view.ste).data().iter().zip(&deq) {
        assert!((a - b).abs() < 1e-12);
    }
    let noisy: Vec<f64> = g.value(view.noisy).data().to_vec();
    let bits = rate_bits_node(&mut g, view.noisy, mu, sigma).unwrap();
    let eager = estimate_rate_bits(noisy, &m);
    assert!((g.value(bits).item() - eager).abs() < 1e-9 * eager);

    // straight-through: d(sum ste)/dx is exactly one everywhere
    let s = g.sum(view.ste);
    let grads = g.backward(s);
    assert!(grads.get(xv).unwrap().data().iter().all(|v| (*v - 1.0).abs() < 1e-12));
}

#[test]
fn noisy_view_is_unbiased() {
    let x = Tensor::from_fn(vec![1], |_| 0.37f64);
    let q = QuantParams::symmetric(0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut acc = 0.0;
    let n = 20_000;
    for _ in 0..n {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let qv = QuantVars { scale: g.constant(Tensor::scalar(q.scale)), offset: None };
        let noise = uniform_noise(vec![1], &mut rng);
        let view = mixed_quantize_node(&mut g, xv, &qv, &noise).unwrap();
        acc += g.value(view.noisy).item();
    }
    assert!((acc / n as f64 - 3.7).abs() < 0.01);
}

/// Rate-path objective as a function of `(ς, η)` with fixed noise.
fn rate_objective(scale: f64, offset: f64, x: &Tensor<f64>, noise: &Tensor<f64>) -> (f64, f64, f64) {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let s = scalar(&mut g, scale);
    let e = scalar(&mut g, offset);
    let qv = QuantVars { scale: s, offset: Some(e) };
    let view = mixed_quantize_node(&mut g, xv, &qv, noise).unwrap();
    let (mu, sigma) = entropy_model_node(&mut g, xv, &qv).unwrap();
    let bits = rate_bits_node(&mut g, view.noisy, mu, sigma).unwrap();
    let ld = g.constant(Tensor::scalar(0.25));
    let loss = cem_loss_node(&mut g, ld, bits, 40, 0.01, 0.5).unwrap();
    let grads = g.backward(loss);
    (g.value(loss).item(), grads.get(s).unwrap().item(), grads.get(e).unwrap().item())
}

#[test]
fn rate_gradients_match_finite_differences() {
    let x = Tensor::new(vec![300], gauss_samples(300, 0.4, 11)).unwrap();
    let noise = uniform_noise::<f64>(vec![300], &mut ChaCha8Rng::seed_from_u64(2));
    let (s0, e0) = (0.07, 0.03);
    let (_, ds, de) = rate_objective(s0, e0, &x, &noise);
    let h = 1e-7;
    let fs = (rate_objective(s0 + h, e0, &x, &noise).0 - rate_objective(s0 - h, e0, &x, &noise).0) / (2.0 * h);
    let fe = (rate_objective(s0, e0 + h, &x, &noise).0 - rate_objective(s0, e0 - h, &x, &noise).0) / (2.0 * h);
    assert!((fs - ds).abs() <= 1e-3 * fs.abs(), "scale {fs} vs {ds}");
    // the rate only sees x - η through both the symbols and μ_s, so it is
    // invariant to the offset
    assert!(fe.abs() < 1e-6 && de.abs() < 1e-12, "offset {fe} vs {de}");
}

proptest! {
    #[test]
    fn round_trip_error_is_at_most_half_a_step(
        xs in proptest::collection::vec(-50.0f64..50.0, 1..64),
        scale in 1e-3f64..4.0,
        offset in -5.0f64..5.0,
        asym in any::<bool>(),
    ) {
        let q = if asym { QuantParams::asymmetric(scale, offset) } else { QuantParams::symmetric(scale) };
        let syms = quantize(&xs, &q).unwrap();
        for (x, y) in xs.iter().zip(dequantize(&syms, &q)) {
            prop_assert!((x - y).abs() <= scale / 2.0 * (1.0 + 1e-12) + 1e-12);
        }
    }
}
