//! Time-ahead clearing by sample-average approximation.
//!
//! Dispatch bitmasks are enumerated. For each bitmask the continuous part
//! `g(r, d) = α₁r + α₂d + mean_s Q_s(r, d)` is convex piecewise linear and is
//! minimized by Kelley's cutting-plane method, with cuts built from the exact
//! second-stage subgradients.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{MarketError, Result};
use crate::lp::{minimize, LpOutcome, Row};
use crate::model::{first_stage_cost, FirstStageDecision, MarketConfig, TypeDistribution, MAX_PRODUCERS};
use crate::scenario::{sample_scenarios, ScenarioSet};
use crate::stage2::{solve_second_stage, RecourseLadder};
use crate::TOLERANCE;

/// Upper bound on the number of cuts per bitmask, box corners included.
pub const MAX_CUTS: usize = 200;

/// Relative gap at which the cutting-plane method stops.
pub const GAP_TOLERANCE: f64 = 1e-6;

/// Best continuous decision for one dispatch bitmask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskOptimum {
    pub reserve: f64,
    pub dispatchable: f64,
    /// SAA objective at (reserve, dispatchable), first-stage cost included.
    pub value: f64,
    /// Final lower bound of the cutting-plane model.
    pub lower_bound: f64,
    pub cuts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Solution {
    pub decision: FirstStageDecision,
    pub expected_cost: f64,
    pub per_bitmask: BTreeMap<Vec<bool>, MaskOptimum>,
}

/// The SAA objective of one bitmask with its per-scenario merit orders.
pub struct SaaObjective<'a> {
    ladders: Vec<RecourseLadder>,
    cfg: &'a MarketConfig,
}

/// Value of the SAA objective at a point with one of its subgradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub d_reserve: f64,
    pub d_dispatchable: f64,
}

impl<'a> SaaObjective<'a> {
    pub fn new(mask: &[bool], scenarios: &ScenarioSet, cfg: &'a MarketConfig) -> Result<Self> {
        if scenarios.is_empty() {
            return Err(MarketError::EmptyScenarioSet);
        }
        if scenarios.n() != mask.len() {
            return Err(MarketError::DimensionMismatch {
                expected: mask.len(),
                actual: scenarios.n(),
            });
        }
        let ladders = scenarios
            .iter()
            .map(|thetas| RecourseLadder::new(thetas, mask))
            .collect();
        Ok(Self { ladders, cfg })
    }

    /// Summation runs in scenario order, so the result does not depend on threading.
    pub fn evaluate(&self, reserve: f64, dispatchable: f64) -> Result<Evaluation> {
        let prices = &self.cfg.prices;
        let (mut q, mut gr, mut gd) = (0.0, 0.0, 0.0);
        for ladder in &self.ladders {
            let residual = ladder.residual(self.cfg.demand, dispatchable);
            let rec = ladder.evaluate(residual, reserve, prices)?;
            q += rec.value;
            gr += rec.d_reserve();
            gd += rec.d_dispatchable();
        }
        let s = self.ladders.len() as f64;
        Ok(Evaluation {
            value: prices.reserve * reserve + prices.dispatchable * dispatchable + q / s,
            d_reserve: prices.reserve + gr / s,
            d_dispatchable: prices.dispatchable + gd / s,
        })
    }
}

/// Minimizes the SAA objective of `mask` over `[0, reserve_cap_max] × [0, D]`.
pub fn optimize_continuous(
    mask: &[bool],
    scenarios: &ScenarioSet,
    cfg: &MarketConfig,
) -> Result<MaskOptimum> {
    let objective = SaaObjective::new(mask, scenarios, cfg)?;
    let (r_max, d_max) = (cfg.reserve_cap_max.max(0.0), cfg.demand.max(0.0));

    let mut corners = vec![(0.0, 0.0), (r_max, 0.0), (0.0, d_max), (r_max, d_max)];
    corners.dedup();
    corners.sort_by(|a, b| a.partial_cmp(b).unwrap());
    corners.dedup();

    let mut rows = vec![
        Row::le(vec![1.0, 0.0, 0.0], r_max),
        Row::le(vec![0.0, 1.0, 0.0], d_max),
    ];
    let mut best: Option<(f64, f64, f64)> = None;
    let add_cut = |r: f64, d: f64, rows: &mut Vec<Row>, best: &mut Option<(f64, f64, f64)>| -> Result<()> {
        let e = objective.evaluate(r, d)?;
        rows.push(Row::le(
            vec![e.d_reserve, e.d_dispatchable, -1.0],
            e.d_reserve * r + e.d_dispatchable * d - e.value,
        ));
        let better = match *best {
            None => true,
            Some((bv, br, bd)) => {
                e.value < bv - TOLERANCE
                    || (e.value <= bv + TOLERANCE && (r, d) < (br, bd))
            }
        };
        if better {
            *best = Some((e.value, r, d));
        }
        Ok(())
    };
    for &(r, d) in &corners {
        add_cut(r, d, &mut rows, &mut best)?;
    }
    let mut cuts = corners.len();
    loop {
        let (x, lower) = match minimize(&[0.0, 0.0, 1.0], &rows) {
            LpOutcome::Optimal { x, value } => (x, value),
            // the master is bounded below by 0 and contains the box
            LpOutcome::Infeasible | LpOutcome::Unbounded => {
                unreachable!("cutting-plane master problem must be solvable")
            }
        };
        let (value, r_best, d_best) = best.expect("at least one cut evaluated");
        let gap = value - lower;
        if gap < GAP_TOLERANCE * (1.0 + value.abs()) {
            return Ok(MaskOptimum {
                reserve: r_best,
                dispatchable: d_best,
                value,
                lower_bound: lower,
                cuts,
            });
        }
        if cuts >= MAX_CUTS {
            return Err(MarketError::NoConvergence { cuts, gap });
        }
        let r = x[0].clamp(0.0, r_max);
        let d = x[1].clamp(0.0, d_max);
        add_cut(r, d, &mut rows, &mut best)?;
        cuts += 1;
    }
}

/// All `2ⁿ` dispatch vectors in lexicographic order (`false < true`).
pub fn all_masks(n: usize) -> Vec<Vec<bool>> {
    (0..1u32 << n)
        .map(|bits| (0..n).map(|i| bits >> (n - 1 - i) & 1 == 1).collect())
        .collect()
}

/// Solves the first stage on a fresh scenario set drawn from `cfg.seed`.
pub fn solve_first_stage(
    distributions: &[TypeDistribution],
    cfg: &MarketConfig,
) -> Result<Stage1Solution> {
    check_size(distributions.len())?;
    let scenarios = sample_scenarios(distributions, cfg.scenario_count, cfg.seed)?;
    solve_first_stage_on(&scenarios, cfg)
}

fn check_size(n: usize) -> Result<()> {
    if n > MAX_PRODUCERS {
        return Err(MarketError::TooManyProducers {
            n,
            max: MAX_PRODUCERS,
        });
    }
    Ok(())
}

/// Solves the first stage on a given scenario set.
///
/// Ties within [`TOLERANCE`] go to the lexicographically smallest bitmask.
pub fn solve_first_stage_on(scenarios: &ScenarioSet, cfg: &MarketConfig) -> Result<Stage1Solution> {
    if scenarios.is_empty() {
        return Err(MarketError::EmptyScenarioSet);
    }
    let n = scenarios.n();
    check_size(n)?;
    let masks = all_masks(n);
    let optima = masks
        .par_iter()
        .map(|m| optimize_continuous(m, scenarios, cfg))
        .collect::<Result<Vec<_>>>()?;
    let per_bitmask: BTreeMap<Vec<bool>, MaskOptimum> = masks.into_iter().zip(optima).collect();
    let min = per_bitmask
        .values()
        .map(|o| o.value)
        .fold(f64::INFINITY, f64::min);
    let (mask, opt) = per_bitmask
        .iter()
        .find(|(_, o)| o.value <= min + TOLERANCE)
        .expect("at least one bitmask");
    let decision = FirstStageDecision::new(mask.clone(), opt.reserve, opt.dispatchable);
    Ok(Stage1Solution {
        expected_cost: opt.value,
        decision,
        per_bitmask,
    })
}

/// First-stage cost plus the mean second-stage value, solved scenario by scenario.
pub fn expected_cost(
    x: &FirstStageDecision,
    scenarios: &ScenarioSet,
    cfg: &MarketConfig,
) -> Result<f64> {
    if scenarios.is_empty() {
        return Err(MarketError::EmptyScenarioSet);
    }
    let values = scenarios
        .iter()
        .map(|thetas| solve_second_stage(x, thetas, cfg).map(|s| s.value))
        .collect::<Result<Vec<_>>>()?;
    Ok(first_stage_cost(x, cfg) + values.iter().sum::<f64>() / scenarios.len() as f64)
}
