//! Case-study experiments: variance misreports, payment decompositions and a
//! comparison against markets that impose a fixed forecast variance.
//!
//! Every experiment plans on `scenario_count` draws from the reported
//! distributions and evaluates on `samples` realizations from the true
//! distributions. Both sets come from fixed substreams of one seed, so
//! different reports see the same underlying random numbers.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{MarketError, Result};
use crate::model::{
    first_stage_cost, parse_market, FirstStageDecision, Market, MarketConfig, TypeDistribution,
};
use crate::payments::{counterfactual, first_stage_payment, settle_producer, CounterfactualCache};
use crate::scenario::{sample_realizations, sample_scenarios, ScenarioSet};
use crate::stage1::{optimize_continuous, solve_first_stage_on};
use crate::stage2::solve_second_stage;
use crate::table::CsvTable;

/// The shipped case-study configuration.
pub const CASESTUDY_TOML: &str = include_str!("../../../configs/casestudy.toml");

/// Reported variances tried for each producer.
pub const MISREPORT_GRID: [f64; 8] = [0.0, 4.0, 16.0, 36.0, 64.0, 144.0, 400.0, 1024.0];
pub const VARIANCE_AXIS: [f64; 5] = [4.0, 16.0, 36.0, 64.0, 1024.0];
pub const DOWNCOST_AXIS: [f64; 5] = [2.0, 5.0, 10.0, 15.0, 20.0];
/// Variances imposed by the fixed-variance markets.
pub const ASSUMED_VARIANCES: [f64; 2] = [100.0, 4.0];
/// Default number of evaluation realizations.
pub const DEFAULT_SAMPLES: usize = 2000;

/// A validated market whose reports are the producers' true distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseStudy {
    pub config: MarketConfig,
    pub distributions: Vec<TypeDistribution>,
}

impl CaseStudy {
    pub fn shipped() -> Self {
        let market = parse_market(CASESTUDY_TOML).expect("shipped case study parses");
        Self::from_market(market).expect("shipped case study is valid")
    }

    pub fn from_market(market: Market) -> Result<Self> {
        let violations = market.validate();
        if !violations.is_empty() {
            return Err(MarketError::InvalidConfig(violations));
        }
        Ok(Self {
            config: market.config,
            distributions: market.distributions,
        })
    }

    pub fn n(&self) -> usize {
        self.distributions.len()
    }

    pub fn true_variances(&self) -> Vec<f64> {
        self.distributions.iter().map(|q| q.baseline_variance()).collect()
    }

    fn with_seed(&self, seed: u64) -> MarketConfig {
        MarketConfig {
            seed,
            ..self.config.clone()
        }
    }
}

/// Sample mean and (n − 1)-normalized standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MisreportPoint {
    /// 1-based producer index.
    pub producer: usize,
    pub reported_variance: f64,
    pub avg_utility: f64,
    pub std_err: f64,
}

/// Average utility of each producer in `producers` (0-based) for every
/// reported baseline variance in `grid`, others reporting truthfully.
pub fn misreport_sweep(
    case: &CaseStudy,
    producers: &[usize],
    grid: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<MisreportPoint>> {
    let cfg = case.with_seed(seed);
    let truth = &case.distributions;
    let realizations = sample_realizations(truth, samples, seed)?;
    let truthful_plan = sample_scenarios(truth, cfg.scenario_count, seed)?;
    let mut out = Vec::with_capacity(producers.len() * grid.len());
    for &i in producers {
        check_producer(case, i)?;
        // the market without i does not depend on what i reports
        let without_i = counterfactual(&truthful_plan, &cfg, i)?;
        let points = grid
            .par_iter()
            .map(|&v| {
                let mut reported = truth.clone();
                reported[i] = reported[i].set_baseline_variance(v);
                let plan = sample_scenarios(&reported, cfg.scenario_count, seed)?;
                let full = solve_first_stage_on(&plan, &cfg)?;
                let cache = CounterfactualCache::from_parts(full, BTreeMap::from([(i, without_i.clone())]));
                let utilities = realizations
                    .iter()
                    .map(|theta| settle_producer(i, &cache, theta, &cfg).map(|r| r.utility))
                    .collect::<Result<Vec<_>>>()?;
                let (mean, std) = mean_std(&utilities);
                Ok(MisreportPoint {
                    producer: i + 1,
                    reported_variance: v,
                    avg_utility: mean,
                    std_err: std / (utilities.len() as f64).sqrt(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.extend(points);
    }
    Ok(out)
}

fn check_producer(case: &CaseStudy, i: usize) -> Result<()> {
    if i >= case.n() {
        return Err(MarketError::DimensionMismatch {
            expected: case.n(),
            actual: i + 1,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaymentAxis {
    /// Baseline forecast variance of the varied producer.
    Variance,
    /// Mean down-regulation cost of the varied producer.
    DownCost,
}

impl PaymentAxis {
    pub fn default_values(self) -> &'static [f64] {
        match self {
            PaymentAxis::Variance => &VARIANCE_AXIS,
            PaymentAxis::DownCost => &DOWNCOST_AXIS,
        }
    }

    fn apply(self, q: &TypeDistribution, value: f64) -> TypeDistribution {
        match self {
            PaymentAxis::Variance => q.set_baseline_variance(value),
            PaymentAxis::DownCost => {
                let mut q = q.clone();
                q.mean[0] = value;
                q
            }
        }
    }
}

impl fmt::Display for PaymentAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PaymentAxis::Variance => "variance",
            PaymentAxis::DownCost => "downcost",
        })
    }
}

impl FromStr for PaymentAxis {
    type Err = MarketError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variance" => Ok(PaymentAxis::Variance),
            "downcost" => Ok(PaymentAxis::DownCost),
            other => Err(MarketError::Parse(format!(
                "unknown axis {other:?}, expected variance or downcost"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaymentPoint {
    pub axis_value: f64,
    pub first_payment: f64,
    pub second_payment_mean: f64,
    pub second_payment_std: f64,
}

impl PaymentPoint {
    pub fn total(&self) -> f64 {
        self.first_payment + self.second_payment_mean
    }
}

/// Payments to `producer` (0-based) as one of its parameters moves along `axis`.
///
/// The producer reports truthfully at every point; its true distribution is
/// the modified one.
pub fn payment_sweep(
    case: &CaseStudy,
    axis: PaymentAxis,
    values: &[f64],
    producer: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<PaymentPoint>> {
    check_producer(case, producer)?;
    let cfg = case.with_seed(seed);
    values
        .par_iter()
        .map(|&value| {
            let mut truth = case.distributions.clone();
            truth[producer] = axis.apply(&truth[producer], value);
            let plan = sample_scenarios(&truth, cfg.scenario_count, seed)?;
            let cache = CounterfactualCache::build_for(&plan, &cfg, &[producer])?;
            let realizations = sample_realizations(&truth, samples, seed)?;
            let t2 = realizations
                .iter()
                .map(|theta| settle_producer(producer, &cache, theta, &cfg).map(|r| r.t2))
                .collect::<Result<Vec<_>>>()?;
            let (mean, std) = mean_std(&t2);
            Ok(PaymentPoint {
                axis_value: value,
                first_payment: first_stage_payment(producer, &cache, &cfg)?,
                second_payment_mean: mean,
                second_payment_std: std,
            })
        })
        .collect()
}

/// One market design evaluated on the true realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineColumn {
    pub label: String,
    pub dispatch: Vec<bool>,
    pub dispatchable: f64,
    pub reserve: f64,
    pub avg_system_cost: f64,
    pub std_err: f64,
}

/// Label of the column that plans with every baseline variance set to `v`.
pub fn fixed_variance_label(v: f64) -> String {
    format!("deterministic_var{}", crate::table::fmt_compact(v))
}

/// Average realized system cost of the proposed market and of markets that
/// replace every reported variance by an operator-imposed value.
///
/// The fixed-variance markets follow current practice and dispatch every
/// producer; they only choose reserve and dispatchable power.
pub fn baseline_compare(
    case: &CaseStudy,
    assumed_variances: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<BaselineColumn>> {
    let cfg = case.with_seed(seed);
    let truth = &case.distributions;
    let realizations = sample_realizations(truth, samples, seed)?;
    let mut designs = vec![("stochastic".to_string(), truth.clone(), false)];
    for &v in assumed_variances {
        let imposed = truth
            .iter()
            .map(|q| TypeDistribution::with_baseline_variance(q.mean, v, q.infinite_up_cost))
            .collect();
        designs.push((fixed_variance_label(v), imposed, true));
    }
    designs
        .par_iter()
        .map(|(label, reported, dispatch_all)| {
            let plan = sample_scenarios(reported, cfg.scenario_count, seed)?;
            let x = if *dispatch_all {
                let mask = vec![true; case.n()];
                let o = optimize_continuous(&mask, &plan, &cfg)?;
                FirstStageDecision::new(mask, o.reserve, o.dispatchable)
            } else {
                solve_first_stage_on(&plan, &cfg)?.decision
            };
            let (mean, std) = realized_system_cost(&x, &realizations, &cfg)?;
            Ok(BaselineColumn {
                label: label.clone(),
                dispatch: x.dispatch.clone(),
                dispatchable: x.dispatchable,
                reserve: x.reserve_capacity,
                avg_system_cost: mean,
                std_err: std / (realizations.len() as f64).sqrt(),
            })
        })
        .collect()
}

/// Mean and standard deviation of the total system cost of `x` over realizations.
pub fn realized_system_cost(
    x: &FirstStageDecision,
    realizations: &ScenarioSet,
    cfg: &MarketConfig,
) -> Result<(f64, f64)> {
    let c1 = first_stage_cost(x, cfg);
    let costs = realizations
        .iter()
        .map(|theta| solve_second_stage(x, theta, cfg).map(|s| c1 + s.value))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_std(&costs))
}

pub fn misreport_table(points: &[MisreportPoint]) -> CsvTable {
    let mut t = CsvTable::new(&["producer", "reported_variance", "avg_utility", "std_err"]);
    for p in points {
        t.push(vec![
            p.producer.into(),
            p.reported_variance.into(),
            p.avg_utility.into(),
            p.std_err.into(),
        ]);
    }
    t
}

pub fn payment_table(points: &[PaymentPoint]) -> CsvTable {
    let mut t = CsvTable::new(&[
        "axis_value",
        "first_payment",
        "second_payment_mean",
        "second_payment_std",
    ]);
    for p in points {
        t.push(vec![
            p.axis_value.into(),
            p.first_payment.into(),
            p.second_payment_mean.into(),
            p.second_payment_std.into(),
        ]);
    }
    t
}

pub fn baseline_table(columns: &[BaselineColumn]) -> CsvTable {
    let mut t = CsvTable::new(&[
        "column",
        "dispatched",
        "dispatchable",
        "reserve",
        "avg_system_cost",
        "std_err",
    ]);
    for c in columns {
        t.push(vec![
            c.label.as_str().into(),
            crate::model::bitmask_string(&c.dispatch).into(),
            c.dispatchable.into(),
            c.reserve.into(),
            c.avg_system_cost.into(),
            c.std_err.into(),
        ]);
    }
    t
}
