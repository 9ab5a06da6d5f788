//! Parameter budgeting: solving the base width for a target size and
//! reporting how parameters are spread over decoder stages.

use serde::Serialize;

use super::{Arch, DecoderConfig};
use crate::error::{Error, Result};
use crate::params::ShapeCounter;

/// Allowed relative deviation of the realized size from the target.
pub const BUDGET_TOLERANCE: f64 = 0.03;

const MAX_WIDTH: usize = 4096;

/// Learnable parameters of the decoder and temporal network for `cfg`.
pub fn count_params(cfg: &DecoderConfig) -> usize {
    let mut c = ShapeCounter::default();
    Arch::declare(&mut c, cfg);
    c.total()
}

/// Solves the widths for `target` parameters. The base width `C1` is
/// searched first; when integer steps of `C1` cannot land within
/// [`BUDGET_TOLERANCE`] (small models), the width floor `c_min` is raised
/// as a fine-grained second knob, and for index-based variants the hidden
/// width of the fully connected stem as a third.
pub fn solve_widths(cfg: &DecoderConfig, target: usize) -> Result<DecoderConfig> {
    let with = |c1: usize, c_min: usize| {
        let mut probe = cfg.clone();
        probe.c1 = c1;
        probe.c_min = c_min;
        probe
    };
    let at = |c1: usize| count_params(&with(c1, cfg.c_min));
    // Size is nondecreasing in C1, so bisect for the first width at or above target.
    let (mut lo, mut hi) = (1, MAX_WIDTH);
    if at(hi) < target {
        return Err(Error::Config(format!("target {target} exceeds the size reachable with C1 <= {MAX_WIDTH}")));
    }
    while lo < hi {
        let mid = (lo + hi) / 2;
        if at(mid) >= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let rel = |c: &DecoderConfig| (count_params(c) as f64 / target.max(1) as f64 - 1.0).abs();
    let mut best = with(lo, cfg.c_min);
    for c in [with(lo.saturating_sub(1).max(1), cfg.c_min)] {
        if rel(&c) < rel(&best) {
            best = c;
        }
    }
    if rel(&best) > BUDGET_TOLERANCE {
        for c1 in [lo.saturating_sub(1).max(1), lo] {
            for c_min in cfg.c_min + 1..=c1.max(cfg.c_min + 1) {
                let c = with(c1, c_min);
                if rel(&c) < rel(&best) {
                    best = c;
                }
            }
        }
    }
    if rel(&best) > BUDGET_TOLERANCE && !cfg.variant.is_hybrid() {
        for c1 in [lo.saturating_sub(1).max(1), lo] {
            let with_hidden = |h: usize| DecoderConfig { stem_hidden: h, ..with(c1, cfg.c_min) };
            let (mut a, mut b) = (1, MAX_WIDTH);
            while a < b {
                let mid = (a + b) / 2;
                if count_params(&with_hidden(mid)) >= target {
                    b = mid;
                } else {
                    a = mid + 1;
                }
            }
            for h in [a.saturating_sub(1).max(1), a] {
                let c = with_hidden(h);
                if rel(&c) < rel(&best) {
                    best = c;
                }
            }
        }
    }
    if rel(&best) > BUDGET_TOLERANCE {
        let n = count_params(&best);
        return Err(Error::Config(format!(
            "target {target} is unreachable: closest layout C1={} c_min={} gives {n} parameters ({:+.1}%)",
            best.c1,
            best.c_min,
            100.0 * (n as f64 / target as f64 - 1.0)
        )));
    }
    Ok(best)
}

#[derive(Clone, Debug, Serialize)]
pub struct BalanceReport {
    /// `(group, parameters)` in build order: `zgen`, `stem`, `stage1..N`, `head`.
    pub groups: Vec<(String, usize)>,
    pub total: usize,
    /// Standard deviation of the stage shares of all stage parameters.
    pub std_fraction: f64,
    /// Coefficient of variation of the per-stage parameter counts.
    pub cv: f64,
}

impl BalanceReport {
    pub fn stage_counts(&self) -> Vec<usize> {
        self.groups.iter().filter(|(g, _)| g.starts_with("stage")).map(|(_, n)| *n).collect()
    }
}

fn group_of(name: &str) -> String {
    if name.starts_with("zgen") {
        return "zgen".into();
    }
    let rest = name.strip_prefix("dec.").unwrap_or(name);
    let head = rest.split('.').next().unwrap_or(rest);
    match head.strip_prefix('s').and_then(|d| d.parse::<usize>().ok()) {
        Some(i) => format!("stage{i}"),
        None if head.starts_with("stem") => "stem".into(),
        None => head.to_string(),
    }
}

/// Groups named parameter counts into decoder stages.
pub fn parameter_balance_report(params: impl IntoIterator<Item = (String, usize)>, stages: usize) -> BalanceReport {
    let mut groups: Vec<(String, usize)> = vec![("zgen".into(), 0), ("stem".into(), 0)];
    groups.extend((1..=stages).map(|i| (format!("stage{i}"), 0)));
    groups.push(("head".into(), 0));
    let mut total = 0;
    for (name, n) in params {
        total += n;
        let g = group_of(&name);
        match groups.iter_mut().find(|(k, _)| *k == g) {
            Some(slot) => slot.1 += n,
            None => groups.push((g, n)),
        }
    }
    let counts: Vec<f64> = groups
        .iter()
        .filter(|(g, _)| g.starts_with("stage"))
        .map(|(_, n)| *n as f64)
        .collect();
    let sum: f64 = counts.iter().sum();
    let k = counts.len().max(1) as f64;
    let mean = sum / k;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / k;
    let (cv, std_fraction) = if sum > 0.0 { (var.sqrt() / mean, var.sqrt() / sum) } else { (0.0, 0.0) };
    BalanceReport { groups, total, std_fraction, cv }
}
