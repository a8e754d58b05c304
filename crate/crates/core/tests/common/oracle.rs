//! Brute-force reference solvers and random instance generators shared by the
//! integration tests.

#![allow(dead_code)]

use rand::Rng;
use stem_core::model::{first_stage_cost, FirstStageDecision, MarketConfig, Prices, ProducerType};
use stem_core::scenario::ScenarioSet;
use stem_core::stage2::solve_second_stage;

/// One bounded-variable column of the split second-stage LP.
struct Column {
    cost: f64,
    /// Coefficient in the balance row.
    sign: f64,
    upper: Option<f64>,
}

/// Optimal second-stage value by enumerating every basic solution of the
/// split-variable LP `min Σ cost·v` s.t. `Σ sign·v = R`, `0 ≤ v ≤ upper`.
///
/// Columns: up-regulation (finite up cost) and down-regulation (capacity =
/// baseline) of each dispatched producer, activation (capacity = reserve),
/// shedding. With one equality row, a basic solution has one basic column
/// and every other column at a bound.
pub fn stage2_value(x: &FirstStageDecision, thetas: &[ProducerType], cfg: &MarketConfig) -> Option<f64> {
    let mut cols = Vec::new();
    let mut residual = cfg.demand - x.dispatchable;
    for (t, &on) in thetas.iter().zip(&x.dispatch) {
        if !on {
            continue;
        }
        residual -= t.baseline;
        if let Some(u) = t.up_cost {
            cols.push(Column { cost: u, sign: 1.0, upper: None });
        }
        cols.push(Column { cost: t.down_cost, sign: -1.0, upper: Some(t.baseline) });
    }
    cols.push(Column { cost: cfg.prices.activation, sign: 1.0, upper: Some(x.reserve_capacity) });
    cols.push(Column { cost: cfg.prices.shedding, sign: 1.0, upper: None });

    let bounded: Vec<usize> = (0..cols.len()).filter(|&k| cols[k].upper.is_some()).collect();
    let mut best: Option<f64> = None;
    for basic in 0..cols.len() {
        let others: Vec<usize> = bounded.iter().copied().filter(|&k| k != basic).collect();
        for pattern in 0u32..(1 << others.len()) {
            let mut value = vec![0.0; cols.len()];
            for (bit, &k) in others.iter().enumerate() {
                if pattern >> bit & 1 == 1 {
                    value[k] = cols[k].upper.unwrap();
                }
            }
            let covered: f64 = (0..cols.len())
                .filter(|&k| k != basic)
                .map(|k| cols[k].sign * value[k])
                .sum();
            let v = (residual - covered) / cols[basic].sign;
            let tol = 1e-9 * (1.0 + residual.abs());
            if v < -tol || cols[basic].upper.is_some_and(|u| v > u + tol) {
                continue;
            }
            value[basic] = v;
            let cost: f64 = cols.iter().zip(&value).map(|(c, v)| c.cost * v).sum();
            if best.is_none_or(|b| cost < b) {
                best = Some(cost);
            }
        }
    }
    best
}

/// SAA objective of a fixed bitmask at `(r, d)`.
pub fn saa_value(mask: &[bool], r: f64, d: f64, scenarios: &ScenarioSet, cfg: &MarketConfig) -> f64 {
    let x = FirstStageDecision::new(mask.to_vec(), r, d);
    let q: f64 = scenarios
        .iter()
        .map(|t| solve_second_stage(&x, t, cfg).unwrap().value)
        .sum();
    first_stage_cost(&x, cfg) + q / scenarios.len() as f64
}

/// Exact minimum of the SAA objective of `mask` over the box.
///
/// The objective is piecewise linear on the arrangement of lines
/// `d = c` (residual zero or a cumulative curtailment capacity reached),
/// `r + d = c` (residual equals reserve) and the box edges, so its minimum is
/// attained at a pairwise intersection of these lines.
pub fn stage1_mask_minimum(mask: &[bool], scenarios: &ScenarioSet, cfg: &MarketConfig) -> (f64, f64, f64) {
    let (r_max, d_max) = (cfg.reserve_cap_max, cfg.demand);
    let mut d_lines = vec![0.0, d_max];
    let mut diag_lines = Vec::new();
    for thetas in scenarios.iter() {
        let dispatched: Vec<&ProducerType> = thetas.iter().zip(mask).filter(|(_, &m)| m).map(|(t, _)| t).collect();
        let base: f64 = dispatched.iter().map(|t| t.baseline).sum();
        let zero = cfg.demand - base;
        d_lines.push(zero);
        diag_lines.push(zero);
        let mut caps: Vec<(f64, f64)> = dispatched.iter().map(|t| (t.down_cost, t.baseline)).collect();
        caps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cum = 0.0;
        for (_, c) in caps {
            cum += c;
            d_lines.push(zero + cum);
        }
    }
    let r_lines = [0.0, r_max];
    let mut points = Vec::new();
    for &d in &d_lines {
        for &r in &r_lines {
            points.push((r, d));
        }
        for &c in &diag_lines {
            points.push((c - d, d));
        }
    }
    for &c in &diag_lines {
        for &r in &r_lines {
            points.push((r, c - r));
        }
    }
    let eps = 1e-12;
    let mut best = (0.0, 0.0, f64::INFINITY);
    for (r, d) in points {
        if r < -eps || r > r_max + eps || d < -eps || d > d_max + eps {
            continue;
        }
        let (r, d) = (r.clamp(0.0, r_max), d.clamp(0.0, d_max));
        let v = saa_value(mask, r, d, scenarios, cfg);
        if v < best.2 {
            best = (r, d, v);
        }
    }
    best
}

/// Coarse-to-fine grid search; an upper bound on the true minimum.
pub fn stage1_grid_minimum(mask: &[bool], scenarios: &ScenarioSet, cfg: &MarketConfig) -> f64 {
    let (r_max, d_max) = (cfg.reserve_cap_max, cfg.demand);
    let (mut lo_r, mut hi_r, mut lo_d, mut hi_d) = (0.0, r_max, 0.0, d_max);
    let mut best = (0.0, 0.0, f64::INFINITY);
    for _ in 0..4 {
        let steps = 40;
        for a in 0..=steps {
            for b in 0..=steps {
                let r = lo_r + (hi_r - lo_r) * a as f64 / steps as f64;
                let d = lo_d + (hi_d - lo_d) * b as f64 / steps as f64;
                let v = saa_value(mask, r, d, scenarios, cfg);
                if v < best.2 {
                    best = (r, d, v);
                }
            }
        }
        let (wr, wd) = ((hi_r - lo_r) / 8.0, (hi_d - lo_d) / 8.0);
        lo_r = (best.0 - wr).max(0.0);
        hi_r = (best.0 + wr).min(r_max);
        lo_d = (best.1 - wd).max(0.0);
        hi_d = (best.1 + wd).min(d_max);
    }
    best.2
}

/// Prices satisfying `α₄ ≥ α₃`.
pub fn random_prices(rng: &mut impl Rng) -> Prices {
    let activation = rng.random_range(0.0..20.0);
    Prices {
        reserve: rng.random_range(0.0..15.0),
        dispatchable: rng.random_range(0.0..15.0),
        activation,
        shedding: rng.random_range(activation..300.0),
    }
}

/// Down cost and baseline from the test ranges; up cost at least `floor` or infinite.
pub fn random_type(rng: &mut impl Rng, floor: f64) -> ProducerType {
    let down = rng.random_range(0.0..30.0);
    let base = rng.random_range(0.0..50.0);
    if rng.random_bool(0.25) {
        ProducerType::inflexible(down, base)
    } else {
        ProducerType::new(down, base, rng.random_range(floor..floor.max(30.0) + 1.0))
    }
}
