//! Market vocabulary: producer types, forecast distributions, stage decisions,
//! prices, the cost functions of both stages, and configuration loading.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};
use crate::scenario::cholesky;
use crate::TOLERANCE;

/// Largest producer count for which the dispatch bitmask is enumerated.
pub const MAX_PRODUCERS: usize = 20;

/// Realized type of a producer.
///
/// `up_cost == None` means up-regulation is infeasible: the delivered volume
/// may not exceed the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProducerType {
    /// Marginal cost of delivering below baseline (€/MWh).
    pub down_cost: f64,
    /// Baseline production (MWh).
    pub baseline: f64,
    /// Marginal cost of delivering above baseline (€/MWh).
    pub up_cost: Option<f64>,
}

impl ProducerType {
    pub fn new(down_cost: f64, baseline: f64, up_cost: f64) -> Self {
        Self {
            down_cost,
            baseline,
            up_cost: Some(up_cost),
        }
    }

    /// A producer that can curtail but not increase production.
    pub fn inflexible(down_cost: f64, baseline: f64) -> Self {
        Self {
            down_cost,
            baseline,
            up_cost: None,
        }
    }

    pub fn has_infinite_up_cost(&self) -> bool {
        self.up_cost.is_none()
    }

    pub fn is_valid(&self) -> bool {
        self.down_cost >= 0.0
            && self.down_cost.is_finite()
            && self.baseline >= 0.0
            && self.baseline.is_finite()
            && self.up_cost.is_none_or(|u| u >= 0.0 && u.is_finite())
    }
}

/// Gaussian forecast of a producer's type over (down cost, baseline, up cost).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeDistribution {
    pub mean: [f64; 3],
    pub covariance: [[f64; 3]; 3],
    pub infinite_up_cost: bool,
}

impl TypeDistribution {
    /// Uncertainty on the baseline only.
    pub fn with_baseline_variance(mean: [f64; 3], variance: f64, infinite_up_cost: bool) -> Self {
        let mut covariance = [[0.0; 3]; 3];
        covariance[1][1] = variance;
        Self {
            mean,
            covariance,
            infinite_up_cost,
        }
    }

    /// A degenerate distribution concentrated on `theta`.
    pub fn point_mass(theta: &ProducerType) -> Self {
        Self {
            mean: [
                theta.down_cost,
                theta.baseline,
                theta.up_cost.unwrap_or(0.0),
            ],
            covariance: [[0.0; 3]; 3],
            infinite_up_cost: theta.has_infinite_up_cost(),
        }
    }

    pub fn baseline_variance(&self) -> f64 {
        self.covariance[1][1]
    }

    /// Same distribution with the baseline variance replaced.
    pub fn set_baseline_variance(&self, variance: f64) -> Self {
        let mut out = self.clone();
        out.covariance[1][1] = variance;
        out
    }

    /// The type at the mean of the distribution.
    pub fn mean_type(&self) -> ProducerType {
        ProducerType {
            down_cost: self.mean[0],
            baseline: self.mean[1],
            up_cost: (!self.infinite_up_cost).then_some(self.mean[2]),
        }
    }
}

/// First-stage (time-ahead) decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStageDecision {
    pub dispatch: Vec<bool>,
    pub reserve_capacity: f64,
    pub dispatchable: f64,
}

impl FirstStageDecision {
    pub fn new(dispatch: Vec<bool>, reserve_capacity: f64, dispatchable: f64) -> Self {
        Self {
            dispatch,
            reserve_capacity,
            dispatchable,
        }
    }

    /// Nothing dispatched, no reserve, no dispatchable power.
    pub fn idle(n: usize) -> Self {
        Self::new(vec![false; n], 0.0, 0.0)
    }

    /// The decision with producer `i` removed from the dispatch vector.
    pub fn without(&self, i: usize) -> Self {
        let mut dispatch = self.dispatch.clone();
        dispatch.remove(i);
        Self::new(dispatch, self.reserve_capacity, self.dispatchable)
    }

    /// Dispatch bits rendered as `x1..xn`, e.g. `11110`.
    pub fn bitmask_string(&self) -> String {
        bitmask_string(&self.dispatch)
    }
}

pub fn bitmask_string(dispatch: &[bool]) -> String {
    dispatch.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

/// Second-stage (real-time) decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondStageDecision {
    pub volumes: Vec<f64>,
    pub activation: f64,
    pub shedding: f64,
}

impl SecondStageDecision {
    /// Residual of the power balance `D - Σ x_i y_i - x_{n+2} - y_{n+2} - y_{n+1}`.
    pub fn balance_residual(&self, x: &FirstStageDecision, cfg: &MarketConfig) -> f64 {
        let delivered: f64 = self
            .volumes
            .iter()
            .zip(&x.dispatch)
            .filter(|(_, &on)| on)
            .map(|(y, _)| y)
            .sum();
        cfg.demand - delivered - x.dispatchable - self.shedding - self.activation
    }

    pub fn is_feasible(&self, x: &FirstStageDecision, cfg: &MarketConfig) -> bool {
        self.shedding >= -TOLERANCE
            && self.activation >= -TOLERANCE
            && self.activation <= x.reserve_capacity + TOLERANCE
            && self.volumes.iter().all(|&y| y >= -TOLERANCE)
            && self.balance_residual(x, cfg).abs() <= TOLERANCE * (1.0 + cfg.demand)
    }
}

/// Operator prices, €/MWh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prices {
    /// Reserve capacity procured at the first stage.
    pub reserve: f64,
    /// Dispatchable power procured at the first stage.
    pub dispatchable: f64,
    /// Reserve activation at the second stage.
    pub activation: f64,
    /// Load shedding at the second stage.
    pub shedding: f64,
}

impl Prices {
    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            reserve: a[0],
            dispatchable: a[1],
            activation: a[2],
            shedding: a[3],
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.reserve, self.dispatchable, self.activation, self.shedding]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    /// Fixed demand, MWh.
    pub demand: f64,
    pub prices: Prices,
    /// Upper bound on reserve capacity, MWh.
    pub reserve_cap_max: f64,
    /// Number of scenarios in the sample-average approximation.
    pub scenario_count: usize,
    pub seed: u64,
}

impl MarketConfig {
    pub fn new(demand: f64, prices: Prices) -> Self {
        Self {
            demand,
            prices,
            reserve_cap_max: demand,
            scenario_count: 1000,
            seed: 0,
        }
    }
}

/// A configuration together with the reported forecast of every producer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Market {
    pub config: MarketConfig,
    pub distributions: Vec<TypeDistribution>,
}

impl Market {
    pub fn n(&self) -> usize {
        self.distributions.len()
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_config(&self.config, &self.distributions)
    }
}

/// Per-producer outcome of one market run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettlementRecord {
    pub producer_id: usize,
    pub t1: f64,
    pub t2: f64,
    pub cost: f64,
    pub utility: f64,
}

impl SettlementRecord {
    pub fn new(producer_id: usize, t1: f64, t2: f64, cost: f64) -> Self {
        Self {
            producer_id,
            t1,
            t2,
            cost,
            utility: t1 + t2 - cost,
        }
    }
}

/// Cost of a producer delivering `volume` given its realized type.
///
/// Piecewise linear with slope `-down_cost` below the baseline and `up_cost`
/// above it; zero at the baseline.
pub fn producer_cost(theta: &ProducerType, volume: f64) -> Result<f64> {
    if volume <= theta.baseline {
        return Ok(theta.down_cost * (theta.baseline - volume));
    }
    match theta.up_cost {
        Some(up) => Ok(up * (volume - theta.baseline)),
        None if volume - theta.baseline <= TOLERANCE => Ok(0.0),
        None => Err(MarketError::InfeasibleVolume {
            volume,
            baseline: theta.baseline,
        }),
    }
}

pub fn first_stage_cost(x: &FirstStageDecision, cfg: &MarketConfig) -> f64 {
    cfg.prices.reserve * x.reserve_capacity + cfg.prices.dispatchable * x.dispatchable
}

/// Operator cost of the second stage; negative activation would be credited.
pub fn second_stage_cost(y: &SecondStageDecision, cfg: &MarketConfig) -> f64 {
    cfg.prices.activation * y.activation + cfg.prices.shedding * y.shedding
}

/// The three parts of the system cost of a pair of stage decisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemCost {
    pub first_stage: f64,
    pub second_stage: f64,
    pub producers: f64,
}

impl SystemCost {
    /// Second-stage objective: operator second-stage cost plus producer costs.
    pub fn stage2(&self) -> f64 {
        self.second_stage + self.producers
    }

    pub fn total(&self) -> f64 {
        self.first_stage + self.stage2()
    }
}

pub fn system_cost(
    x: &FirstStageDecision,
    y: &SecondStageDecision,
    thetas: &[ProducerType],
    cfg: &MarketConfig,
) -> Result<SystemCost> {
    if thetas.len() != y.volumes.len() {
        return Err(MarketError::DimensionMismatch {
            expected: y.volumes.len(),
            actual: thetas.len(),
        });
    }
    let mut producers = 0.0;
    for (theta, &v) in thetas.iter().zip(&y.volumes) {
        producers += producer_cost(theta, v)?;
    }
    Ok(SystemCost {
        first_stage: first_stage_cost(x, cfg),
        second_stage: second_stage_cost(y, cfg),
        producers,
    })
}

/// A single failed configuration check.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFinite(&'static str),
    NegativeDemand(f64),
    NegativePrice { name: &'static str, value: f64 },
    SheddingBelowActivation { shedding: f64, activation: f64 },
    NegativeReserveCap(f64),
    ZeroScenarios,
    NoProducers,
    TooManyProducers(usize),
    NegativeMean { producer: usize, component: &'static str, value: f64 },
    UpCostBelowActivation { producer: usize, up_cost: f64, activation: f64 },
    NotSymmetric { producer: usize },
    NotPsd { producer: usize },
    UncertainInfiniteUpCost { producer: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite(what) => write!(f, "{what} is not finite"),
            Violation::NegativeDemand(d) => write!(f, "demand {d} is negative"),
            Violation::NegativePrice { name, value } => {
                write!(f, "price {name} = {value} is negative")
            }
            Violation::SheddingBelowActivation { shedding, activation } => write!(
                f,
                "shedding cheaper than activation: unbounded second stage ({shedding} < {activation})"
            ),
            Violation::NegativeReserveCap(r) => write!(f, "reserve_cap_max {r} is negative"),
            Violation::ZeroScenarios => write!(f, "scenario_count must be at least 1"),
            Violation::NoProducers => write!(f, "at least one producer is required"),
            Violation::TooManyProducers(n) => {
                write!(f, "{n} producers exceed the enumeration bound {MAX_PRODUCERS}")
            }
            Violation::NegativeMean {
                producer,
                component,
                value,
            } => write!(f, "producer {producer}: mean {component} {value} is negative"),
            Violation::UpCostBelowActivation {
                producer,
                up_cost,
                activation,
            } => write!(
                f,
                "producer {producer}: up-regulation cost {up_cost} below activation price {activation}: unbounded second stage"
            ),
            Violation::NotSymmetric { producer } => {
                write!(f, "producer {producer}: covariance not symmetric")
            }
            Violation::NotPsd { producer } => write!(f, "producer {producer}: covariance not PSD"),
            Violation::UncertainInfiniteUpCost { producer } => write!(
                f,
                "producer {producer}: infinite up-regulation cost but nonzero up-cost covariance"
            ),
        }
    }
}

/// Checks every configuration invariant and returns all violations found.
pub fn validate_config(cfg: &MarketConfig, distributions: &[TypeDistribution]) -> Vec<Violation> {
    let mut out = Vec::new();
    let p = &cfg.prices;
    if !cfg.demand.is_finite() {
        out.push(Violation::NonFinite("demand"));
    } else if cfg.demand < 0.0 {
        out.push(Violation::NegativeDemand(cfg.demand));
    }
    for (name, value) in [
        ("alpha1 (reserve)", p.reserve),
        ("alpha2 (dispatchable)", p.dispatchable),
        ("alpha3 (activation)", p.activation),
        ("alpha4 (shedding)", p.shedding),
    ] {
        if !value.is_finite() {
            out.push(Violation::NonFinite(name));
        } else if value < 0.0 {
            out.push(Violation::NegativePrice { name, value });
        }
    }
    if p.shedding < p.activation {
        out.push(Violation::SheddingBelowActivation {
            shedding: p.shedding,
            activation: p.activation,
        });
    }
    if !cfg.reserve_cap_max.is_finite() {
        out.push(Violation::NonFinite("reserve_cap_max"));
    } else if cfg.reserve_cap_max < 0.0 {
        out.push(Violation::NegativeReserveCap(cfg.reserve_cap_max));
    }
    if cfg.scenario_count == 0 {
        out.push(Violation::ZeroScenarios);
    }
    if distributions.is_empty() {
        out.push(Violation::NoProducers);
    }
    if distributions.len() > MAX_PRODUCERS {
        out.push(Violation::TooManyProducers(distributions.len()));
    }

    for (i, q) in distributions.iter().enumerate() {
        let producer = i + 1;
        let finite_mean = if q.infinite_up_cost { 2 } else { 3 };
        if q.mean[..finite_mean].iter().any(|m| !m.is_finite())
            || q.covariance.iter().flatten().any(|c| !c.is_finite())
        {
            out.push(Violation::NonFinite("producer distribution"));
            continue;
        }
        for (k, component) in ["down cost", "baseline", "up cost"]
            .into_iter()
            .enumerate()
            .take(finite_mean)
        {
            if q.mean[k] < 0.0 {
                out.push(Violation::NegativeMean {
                    producer,
                    component,
                    value: q.mean[k],
                });
            }
        }
        if !q.infinite_up_cost && q.mean[2] < p.activation {
            out.push(Violation::UpCostBelowActivation {
                producer,
                up_cost: q.mean[2],
                activation: p.activation,
            });
        }
        let c = &q.covariance;
        let symmetric = (0..3).all(|a| (0..3).all(|b| (c[a][b] - c[b][a]).abs() <= 1e-12));
        if !symmetric {
            out.push(Violation::NotSymmetric { producer });
        } else if cholesky(c).is_err() {
            out.push(Violation::NotPsd { producer });
        }
        if q.infinite_up_cost && (0..3).any(|k| c[2][k] != 0.0 || c[k][2] != 0.0) {
            out.push(Violation::UncertainInfiniteUpCost { producer });
        }
    }
    out
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    demand: f64,
    alpha: [f64; 4],
    reserve_cap_max: Option<f64>,
    #[serde(default = "default_scenarios")]
    scenario_count: usize,
    #[serde(default)]
    seed: u64,
    producers: Vec<ProducerEntry>,
}

fn default_scenarios() -> usize {
    1000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProducerEntry {
    mean: [f64; 3],
    cov: Option<Covariance>,
    variance: Option<f64>,
    #[serde(default)]
    infinite_up_cost: bool,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Covariance {
    Scalar(f64),
    Matrix([[f64; 3]; 3]),
}

/// Parses a TOML market description.
///
/// A scalar covariance (either `cov = 16.0` or `variance = 16.0`) is the
/// variance of the baseline; all other entries are zero.
pub fn parse_market(text: &str) -> Result<Market> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| MarketError::Parse(e.to_string()))?;
    let mut distributions = Vec::with_capacity(file.producers.len());
    for (i, p) in file.producers.into_iter().enumerate() {
        let covariance = match (p.cov, p.variance) {
            (Some(_), Some(_)) => {
                return Err(MarketError::Parse(format!(
                    "producer {}: give either cov or variance, not both",
                    i + 1
                )))
            }
            (Some(Covariance::Matrix(m)), None) => m,
            (Some(Covariance::Scalar(v)), None) | (None, Some(v)) => {
                let mut m = [[0.0; 3]; 3];
                m[1][1] = v;
                m
            }
            (None, None) => [[0.0; 3]; 3],
        };
        distributions.push(TypeDistribution {
            mean: p.mean,
            covariance,
            infinite_up_cost: p.infinite_up_cost,
        });
    }
    Ok(Market {
        config: MarketConfig {
            demand: file.demand,
            prices: Prices::from_array(file.alpha),
            reserve_cap_max: file.reserve_cap_max.unwrap_or(file.demand),
            scenario_count: file.scenario_count,
            seed: file.seed,
        },
        distributions,
    })
}

pub fn load_market(path: impl AsRef<Path>) -> Result<Market> {
    let text = std::fs::read_to_string(path)?;
    parse_market(&text)
}
