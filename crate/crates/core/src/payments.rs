//! Two-stage VCG payments.
//!
//! Each producer is paid the reduction in first-stage cost its participation
//! causes, `t1_i = c¹(x₋ᵢ) − c¹(x)`, and at the second stage its own cost plus
//! its marginal contribution to the second-stage cost,
//! `t2_i = c_i(y, θ_i) − l²(x, y, θ) + l²(x₋ᵢ, y₋ᵢ, θ₋ᵢ)`. The counterfactual
//! second stage is evaluated at the counterfactual first-stage decision,
//! which is solved once and cached.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{MarketError, Result};
use crate::model::{
    first_stage_cost, producer_cost, FirstStageDecision, MarketConfig, ProducerType,
    SecondStageDecision, SettlementRecord,
};
use crate::scenario::ScenarioSet;
use crate::stage1::{all_masks, solve_first_stage_on, Stage1Solution};
use crate::stage2::{solve_second_stage, Stage2Solution};
use crate::TOLERANCE;

/// First-stage solutions with and without each producer on common scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualCache {
    pub full: Stage1Solution,
    pub without: BTreeMap<usize, Stage1Solution>,
}

impl CounterfactualCache {
    /// Solves the full market and every single-producer removal.
    pub fn build(scenarios: &ScenarioSet, cfg: &MarketConfig) -> Result<Self> {
        let all: Vec<usize> = (0..scenarios.n()).collect();
        Self::build_for(scenarios, cfg, &all)
    }

    /// Solves the full market and the removals of `producers` only.
    pub fn build_for(scenarios: &ScenarioSet, cfg: &MarketConfig, producers: &[usize]) -> Result<Self> {
        let full = solve_first_stage_on(scenarios, cfg)?;
        let without = producers
            .par_iter()
            .map(|&i| counterfactual(scenarios, cfg, i).map(|s| (i, s)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .collect();
        Ok(Self { full, without })
    }

    /// Assembles a cache from separately solved parts.
    pub fn from_parts(full: Stage1Solution, without: BTreeMap<usize, Stage1Solution>) -> Self {
        Self { full, without }
    }

    pub fn decision(&self) -> &FirstStageDecision {
        &self.full.decision
    }

    pub fn without(&self, i: usize) -> Result<&Stage1Solution> {
        self.without.get(&i).ok_or(MarketError::MissingCounterfactual(i))
    }
}

/// First-stage solution of the market with producer `i` removed.
pub fn counterfactual(scenarios: &ScenarioSet, cfg: &MarketConfig, i: usize) -> Result<Stage1Solution> {
    if i >= scenarios.n() {
        return Err(MarketError::DimensionMismatch {
            expected: scenarios.n(),
            actual: i + 1,
        });
    }
    solve_first_stage_on(&scenarios.without_producer(i), cfg)
}

pub fn first_stage_payment(i: usize, cache: &CounterfactualCache, cfg: &MarketConfig) -> Result<f64> {
    let without = cache.without(i)?;
    Ok(first_stage_cost(&without.decision, cfg) - first_stage_cost(&cache.full.decision, cfg))
}

/// Cost of producer `i` for its dispatched volume; undispatched producers incur none.
fn dispatched_cost(i: usize, x: &FirstStageDecision, y: &SecondStageDecision, theta: &ProducerType) -> Result<f64> {
    if x.dispatch[i] {
        producer_cost(theta, y.volumes[i])
    } else {
        Ok(0.0)
    }
}

fn drop_index<T: Clone>(v: &[T], i: usize) -> Vec<T> {
    let mut out = v.to_vec();
    out.remove(i);
    out
}

/// Second-stage payment of producer `i` for the realized types.
pub fn second_stage_payment(
    i: usize,
    cache: &CounterfactualCache,
    realized: &[ProducerType],
    cfg: &MarketConfig,
) -> Result<f64> {
    let factual = factual_stage2(cache, realized, cfg)?;
    let own = dispatched_cost(i, cache.decision(), &factual.decision, &realized[i])?;
    let without = cache.without(i)?;
    let removed = solve_second_stage(&without.decision, &drop_index(realized, i), cfg)?;
    Ok(own - factual.value + removed.value)
}

/// Payments, cost and utility of every producer for one realization.
pub fn settle(
    cache: &CounterfactualCache,
    realized: &[ProducerType],
    cfg: &MarketConfig,
) -> Result<Vec<SettlementRecord>> {
    let factual = factual_stage2(cache, realized, cfg)?;
    (0..realized.len())
        .map(|i| record(i, cache, realized, &factual, cfg))
        .collect()
}

/// Settlement of a single producer; cheaper than [`settle`] when only one row is needed.
pub fn settle_producer(
    i: usize,
    cache: &CounterfactualCache,
    realized: &[ProducerType],
    cfg: &MarketConfig,
) -> Result<SettlementRecord> {
    let factual = factual_stage2(cache, realized, cfg)?;
    record(i, cache, realized, &factual, cfg)
}

fn factual_stage2(
    cache: &CounterfactualCache,
    realized: &[ProducerType],
    cfg: &MarketConfig,
) -> Result<Stage2Solution> {
    let x = cache.decision();
    if realized.len() != x.dispatch.len() {
        return Err(MarketError::DimensionMismatch {
            expected: x.dispatch.len(),
            actual: realized.len(),
        });
    }
    solve_second_stage(x, realized, cfg)
}

fn record(
    i: usize,
    cache: &CounterfactualCache,
    realized: &[ProducerType],
    factual: &Stage2Solution,
    cfg: &MarketConfig,
) -> Result<SettlementRecord> {
    let t1 = first_stage_payment(i, cache, cfg)?;
    let own = dispatched_cost(i, cache.decision(), &factual.decision, &realized[i])?;
    let without = cache.without(i)?;
    let removed = solve_second_stage(&without.decision, &drop_index(realized, i), cfg)?;
    Ok(SettlementRecord::new(i + 1, t1, own - factual.value + removed.value, own))
}

pub fn utility(t1: f64, t2: f64, cost: f64) -> f64 {
    t1 + t2 - cost
}

/// One-shot market outcome: best bitmask with all reserve available and no
/// dispatchable power, so the only operator cost is the second-stage cost.
#[derive(Debug, Clone, PartialEq)]
pub struct OneShotOutcome {
    pub decision: FirstStageDecision,
    pub volumes: SecondStageDecision,
    pub value: f64,
}

/// Minimizes `c²(y) + Σ c_i(y, θ_i)` over bitmasks.
///
/// Ties within [`TOLERANCE`] go to the smallest bitmask, as in the first stage.
pub fn one_shot(thetas: &[ProducerType], cfg: &MarketConfig) -> Result<OneShotOutcome> {
    let outcomes = all_masks(thetas.len())
        .into_iter()
        .map(|mask| {
            let x = FirstStageDecision::new(mask, cfg.reserve_cap_max, 0.0);
            let sol = solve_second_stage(&x, thetas, cfg)?;
            Ok(OneShotOutcome {
                decision: x,
                volumes: sol.decision,
                value: sol.value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let min = outcomes.iter().map(|o| o.value).fold(f64::INFINITY, f64::min);
    Ok(outcomes
        .into_iter()
        .find(|o| o.value <= min + TOLERANCE)
        .expect("at least the empty bitmask"))
}

/// Classic single-stage VCG payments of the one-shot market.
pub fn single_stage_vcg(thetas: &[ProducerType], cfg: &MarketConfig) -> Result<Vec<f64>> {
    let f = one_shot(thetas, cfg)?;
    (0..thetas.len())
        .map(|i| {
            let own = dispatched_cost(i, &f.decision, &f.volumes, &thetas[i])?;
            let removed = one_shot(&drop_index(thetas, i), cfg)?;
            Ok(own - f.value + removed.value)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Prices;

    fn cfg(demand: f64) -> MarketConfig {
        MarketConfig::new(demand, Prices::from_array([10.0, 6.0, 8.0, 200.0]))
    }

    #[test]
    fn lone_free_producer_is_paid_avoided_dispatchable() {
        let theta = ProducerType::inflexible(0.0, 20.0);
        let sc = ScenarioSet::certain(vec![theta], 1);
        let c = cfg(20.0);
        let cache = CounterfactualCache::build(&sc, &c).unwrap();
        assert!((cache.without(0).unwrap().decision.dispatchable - 20.0).abs() < 1e-6);
        let t1 = first_stage_payment(0, &cache, &c).unwrap();
        assert!((t1 - 120.0).abs() < 1e-6);
        let t2 = second_stage_payment(0, &cache, &[theta], &c).unwrap();
        assert!(t2.abs() < 1e-6);
        let rec = settle(&cache, &[theta], &c).unwrap();
        assert!((rec[0].utility - 120.0).abs() < 1e-6);
        assert_eq!(rec[0].producer_id, 1);
    }

    #[test]
    fn unchanged_decision_pays_nothing_at_first_stage() {
        // producer 2 is useless: zero baseline and no up-regulation
        let thetas = vec![ProducerType::inflexible(0.0, 20.0), ProducerType::inflexible(0.0, 0.0)];
        let sc = ScenarioSet::certain(thetas.clone(), 1);
        let c = cfg(20.0);
        let cache = CounterfactualCache::build(&sc, &c).unwrap();
        assert_eq!(first_stage_payment(1, &cache, &c).unwrap(), 0.0);
        assert!(second_stage_payment(1, &cache, &thetas, &c).unwrap().abs() < 1e-9);
    }

    #[test]
    fn utility_arithmetic() {
        assert_eq!(utility(120.0, 0.0, 0.0), 120.0);
        assert_eq!(utility(0.0, 0.0, 0.0), 0.0);
        assert_eq!(utility(50.0, -10.0, 15.0), 25.0);
    }

    fn unit_market() -> MarketConfig {
        let mut c = MarketConfig::new(1.0, Prices::from_array([0.0, 0.0, 0.0, 1000.0]));
        c.reserve_cap_max = 0.0;
        c
    }

    #[test]
    fn second_price_for_two_bidders() {
        let thetas = [ProducerType::new(0.0, 0.0, 5.0), ProducerType::new(0.0, 0.0, 8.0)];
        let p = single_stage_vcg(&thetas, &unit_market()).unwrap();
        assert!((p[0] - 8.0).abs() < 1e-9);
        assert!(p[1].abs() < 1e-9);
    }

    #[test]
    fn lone_bidder_is_paid_shedding_cost() {
        let thetas = [ProducerType::new(0.0, 0.0, 5.0)];
        let p = single_stage_vcg(&thetas, &unit_market()).unwrap();
        assert!((p[0] - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn null_participant_is_paid_own_cost() {
        let thetas = [ProducerType::new(0.0, 0.0, 5.0), ProducerType::new(2.0, 0.0, 9.0)];
        let c = unit_market();
        let p = single_stage_vcg(&thetas, &c).unwrap();
        assert!(p[1].abs() < 1e-9);
    }
}
