//! Real-time redispatch.
//!
//! For a first-stage decision and realized types, the second stage covers the
//! residual demand `R = D - x_{n+2} - Σ_{dispatched} baseline`. A shortfall
//! (`R > 0`) is covered in merit order by reserve activation (capped by the
//! procured capacity), up-regulation of dispatched producers, and load
//! shedding. A surplus (`R < 0`) is curtailed by down-regulating dispatched
//! producers in ascending order of down-regulation cost, each at most to zero
//! output. Activation is upward only.
//!
//! Writing each dispatched volume as `baseline + up - down` with both parts
//! non-negative turns the producer cost into a linear function, so the
//! problem is a single-row LP with simple bounds and the greedy fill is exact.
//! Undispatched producers stay at their baseline, their unique zero-cost
//! volume.

use crate::error::{MarketError, Result};
use crate::model::{system_cost, FirstStageDecision, MarketConfig, Prices, ProducerType, SecondStageDecision};
use crate::TOLERANCE;

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Solution {
    pub decision: SecondStageDecision,
    /// Optimal second-stage objective (operator cost plus producer costs).
    pub value: f64,
    /// Subgradient of `value` with respect to reserve capacity.
    pub d_reserve: f64,
    /// Subgradient of `value` with respect to dispatchable power.
    pub d_dispatchable: f64,
}

/// A resource used to balance the residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Activation,
    Up(usize),
    Shedding,
    Down(usize),
}

/// Value of covering one residual plus its dual prices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recourse {
    pub value: f64,
    /// Marginal cost of residual demand (dual of the balance).
    pub balance_price: f64,
    /// Marginal value of reserve capacity (dual of the activation cap, ≥ 0).
    pub reserve_rent: f64,
}

impl Recourse {
    pub fn d_reserve(&self) -> f64 {
        -self.reserve_rent
    }

    pub fn d_dispatchable(&self) -> f64 {
        -self.balance_price
    }
}

/// Merit-order data for one set of dispatched producers in one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct RecourseLadder {
    /// Cheapest finite up-regulation offer, `(cost, producer)`.
    cheapest_up: Option<(f64, usize)>,
    /// Down-regulation offers `(cost, capacity, producer)`, cheapest first.
    down: Vec<(f64, f64, usize)>,
    baseline_sum: f64,
}

impl RecourseLadder {
    /// Ladder of the producers with `dispatch[i] == true`.
    pub fn new(thetas: &[ProducerType], dispatch: &[bool]) -> Self {
        let mut cheapest_up: Option<(f64, usize)> = None;
        let mut down = Vec::new();
        let mut baseline_sum = 0.0;
        for (i, (t, _)) in thetas
            .iter()
            .zip(dispatch)
            .enumerate()
            .filter(|(_, (_, &on))| on)
        {
            baseline_sum += t.baseline;
            if let Some(u) = t.up_cost {
                if cheapest_up.is_none_or(|(c, _)| u < c) {
                    cheapest_up = Some((u, i));
                }
            }
            down.push((t.down_cost, t.baseline, i));
        }
        // stable: equal costs keep producer order
        down.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self {
            cheapest_up,
            down,
            baseline_sum,
        }
    }

    pub fn baseline_sum(&self) -> f64 {
        self.baseline_sum
    }

    /// Residual demand left after dispatched baselines and dispatchable power.
    pub fn residual(&self, demand: f64, dispatchable: f64) -> f64 {
        demand - dispatchable - self.baseline_sum
    }

    /// Covers `residual` given `reserve` capacity; reports each used action.
    pub fn cover(
        &self,
        residual: f64,
        reserve: f64,
        prices: &Prices,
        mut take: impl FnMut(Action, f64),
    ) -> Result<Recourse> {
        if residual > 0.0 {
            // the first uncapped resource in merit order absorbs the tail;
            // at equal cost activation precedes producers, which precede shedding
            let tail = match self.cheapest_up {
                Some((u, i)) if u <= prices.shedding => (u, Action::Up(i)),
                _ => (prices.shedding, Action::Shedding),
            };
            if tail.0 < 0.0 || prices.activation < 0.0 {
                return Err(MarketError::UnboundedLp);
            }
            let activation_first = prices.activation <= tail.0;
            let activation = if activation_first {
                residual.min(reserve.max(0.0))
            } else {
                0.0
            };
            let rest = residual - activation;
            let mut value = 0.0;
            if activation > 0.0 {
                take(Action::Activation, activation);
                value += prices.activation * activation;
            }
            if rest > 0.0 {
                take(tail.1, rest);
                value += tail.0 * rest;
                let reserve_rent = if activation_first {
                    tail.0 - prices.activation
                } else {
                    0.0
                };
                Ok(Recourse {
                    value,
                    balance_price: tail.0,
                    reserve_rent,
                })
            } else {
                Ok(Recourse {
                    value,
                    balance_price: prices.activation,
                    reserve_rent: 0.0,
                })
            }
        } else if residual < 0.0 {
            let mut surplus = -residual;
            let mut value = 0.0;
            let mut price = 0.0;
            for &(cost, cap, i) in &self.down {
                if surplus <= 0.0 {
                    break;
                }
                let amount = surplus.min(cap);
                if amount > 0.0 {
                    take(Action::Down(i), amount);
                    value += cost * amount;
                    price = -cost;
                    surplus -= amount;
                }
            }
            if surplus > TOLERANCE {
                return Err(MarketError::InfeasibleLp {
                    surplus: -residual,
                    capacity: self.down.iter().map(|d| d.1).sum(),
                });
            }
            Ok(Recourse {
                value,
                balance_price: price,
                reserve_rent: 0.0,
            })
        } else {
            Ok(Recourse {
                value: 0.0,
                balance_price: 0.0,
                reserve_rent: 0.0,
            })
        }
    }

    /// Value and duals only.
    pub fn evaluate(&self, residual: f64, reserve: f64, prices: &Prices) -> Result<Recourse> {
        self.cover(residual, reserve, prices, |_, _| {})
    }
}

/// Optimal second-stage decision for first-stage decision `x` and realized `thetas`.
pub fn solve_second_stage(
    x: &FirstStageDecision,
    thetas: &[ProducerType],
    cfg: &MarketConfig,
) -> Result<Stage2Solution> {
    if thetas.len() != x.dispatch.len() {
        return Err(MarketError::DimensionMismatch {
            expected: x.dispatch.len(),
            actual: thetas.len(),
        });
    }
    let ladder = RecourseLadder::new(thetas, &x.dispatch);
    let residual = ladder.residual(cfg.demand, x.dispatchable);
    let mut decision = SecondStageDecision {
        volumes: thetas.iter().map(|t| t.baseline).collect(),
        activation: 0.0,
        shedding: 0.0,
    };
    let recourse = ladder.cover(residual, x.reserve_capacity, &cfg.prices, |action, amount| {
        match action {
            Action::Activation => decision.activation += amount,
            Action::Shedding => decision.shedding += amount,
            Action::Up(i) => decision.volumes[i] += amount,
            Action::Down(i) => decision.volumes[i] -= amount,
        }
    })?;
    // guard against rounding below zero on fully curtailed producers
    for v in &mut decision.volumes {
        if *v < 0.0 && *v > -TOLERANCE {
            *v = 0.0;
        }
    }
    let value = system_cost(x, &decision, thetas, cfg)?.stage2();
    Ok(Stage2Solution {
        decision,
        value,
        d_reserve: recourse.d_reserve(),
        d_dispatchable: recourse.d_dispatchable(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Prices;

    fn cfg() -> MarketConfig {
        MarketConfig::new(100.0, Prices::from_array([10.0, 6.0, 8.0, 200.0]))
    }

    fn x(reserve: f64) -> FirstStageDecision {
        FirstStageDecision::new(vec![true], reserve, 0.0)
    }

    #[test]
    fn activation_before_up_regulation() {
        let s = solve_second_stage(&x(20.0), &[ProducerType::new(2.0, 90.0, 10.0)], &cfg()).unwrap();
        assert_eq!(s.decision.volumes, vec![90.0]);
        assert_eq!(s.decision.activation, 10.0);
        assert_eq!(s.decision.shedding, 0.0);
        assert_eq!(s.value, 80.0);
        assert_eq!(s.d_reserve, 0.0);
        assert_eq!(s.d_dispatchable, -8.0);
    }

    #[test]
    fn up_regulation_after_reserve_runs_out() {
        let s = solve_second_stage(&x(5.0), &[ProducerType::new(2.0, 90.0, 10.0)], &cfg()).unwrap();
        assert_eq!(s.decision.volumes, vec![95.0]);
        assert_eq!(s.decision.activation, 5.0);
        assert_eq!(s.value, 90.0);
        assert_eq!(s.d_reserve, -2.0);
        assert_eq!(s.d_dispatchable, -10.0);
    }

    #[test]
    fn shedding_without_up_regulation() {
        let s = solve_second_stage(&x(5.0), &[ProducerType::inflexible(2.0, 90.0)], &cfg()).unwrap();
        assert_eq!(s.decision.volumes, vec![90.0]);
        assert_eq!(s.decision.activation, 5.0);
        assert_eq!(s.decision.shedding, 5.0);
        assert_eq!(s.value, 1040.0);
        assert_eq!(s.d_reserve, -192.0);
    }

    #[test]
    fn baseline_meets_demand() {
        let s = solve_second_stage(&x(0.0), &[ProducerType::new(2.0, 100.0, 10.0)], &cfg()).unwrap();
        assert_eq!(s.decision.volumes, vec![100.0]);
        assert_eq!(s.decision.activation, 0.0);
        assert_eq!(s.value, 0.0);
    }

    #[test]
    fn surplus_curtailed_cheapest_first() {
        let thetas = [
            ProducerType::inflexible(5.0, 60.0),
            ProducerType::inflexible(3.0, 30.0),
            ProducerType::inflexible(3.0, 30.0),
        ];
        let x = FirstStageDecision::new(vec![true; 3], 10.0, 0.0);
        let s = solve_second_stage(&x, &thetas, &cfg()).unwrap();
        // surplus 20 -> producer 2 (cheapest, lowest index) takes it all
        assert_eq!(s.decision.volumes, vec![60.0, 10.0, 30.0]);
        assert_eq!(s.decision.activation, 0.0);
        assert_eq!(s.value, 60.0);
        assert_eq!(s.d_dispatchable, 3.0);
        assert_eq!(s.d_reserve, 0.0);
    }

    #[test]
    fn undispatched_producers_stay_at_baseline() {
        let thetas = [ProducerType::inflexible(5.0, 60.0), ProducerType::new(1.0, 30.0, 9.0)];
        let x = FirstStageDecision::new(vec![true, false], 0.0, 0.0);
        let s = solve_second_stage(&x, &thetas, &cfg()).unwrap();
        assert_eq!(s.decision.volumes[1], 30.0);
        assert_eq!(s.decision.shedding, 40.0);
        assert!(s.decision.is_feasible(&x, &cfg()));
    }

    #[test]
    fn cheap_up_regulation_bypasses_reserve() {
        let mut c = cfg();
        c.prices.activation = 12.0;
        let s = solve_second_stage(&x(50.0), &[ProducerType::new(2.0, 90.0, 10.0)], &c).unwrap();
        assert_eq!(s.decision.activation, 0.0);
        assert_eq!(s.decision.volumes, vec![100.0]);
        assert_eq!(s.d_reserve, 0.0);
    }

    #[test]
    fn negative_shedding_price_is_unbounded() {
        let mut c = cfg();
        c.prices.shedding = -1.0;
        assert!(matches!(
            solve_second_stage(&x(0.0), &[ProducerType::inflexible(2.0, 90.0)], &c),
            Err(MarketError::UnboundedLp)
        ));
    }
}
