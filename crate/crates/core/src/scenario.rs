//! Reproducible sampling of realized producer types.
//!
//! Every draw of producer `i` in scenario `s` comes from its own counter-keyed
//! ChaCha stream derived from `(seed, stream, s, i)`, so a scenario set is the
//! same no matter how many threads build it or in which order. Changing one
//! producer's reported distribution leaves all other columns untouched, and
//! its own column keeps the same standard-normal draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{MarketError, Result};
use crate::model::{ProducerType, TypeDistribution};
use crate::table::fmt6;

const PIVOT_TOL: f64 = 1e-12;

/// Lower-triangular `L` with `L Lᵀ = sigma`.
///
/// Zero pivots of semidefinite inputs yield zero columns; if that fails the
/// factorization is retried once with `1e-12` added to the diagonal.
pub fn cholesky(sigma: &[[f64; 3]; 3]) -> Result<[[f64; 3]; 3]> {
    factor(sigma, 0.0, true)
        .or_else(|| factor(sigma, PIVOT_TOL, false))
        .ok_or(MarketError::NotPsd)
}

fn factor(a: &[[f64; 3]; 3], jitter: f64, allow_zero_pivot: bool) -> Option<[[f64; 3]; 3]> {
    let scale = (0..3).map(|k| a[k][k].abs()).fold(1.0, f64::max);
    let tol = PIVOT_TOL * scale;
    let mut l = [[0.0; 3]; 3];
    for j in 0..3 {
        let d = a[j][j] + jitter - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if d > tol {
            let root = d.sqrt();
            l[j][j] = root;
            for i in j + 1..3 {
                let off = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
                l[i][j] = off / root;
            }
        } else if allow_zero_pivot && d >= -tol {
            for i in j + 1..3 {
                let off = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
                if off.abs() > tol {
                    return None;
                }
            }
        } else {
            return None;
        }
    }
    Some(l)
}

/// Independent random streams used by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Scenarios for the first-stage sample-average approximation.
    Planning,
    /// Realizations used for Monte Carlo evaluation and settlement.
    Realization,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Planning => 0x5ce7_a210,
            Stream::Realization => 0x7ea1_12ed,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Key of the substream for producer `producer` in scenario `scenario`.
pub fn substream_key(seed: u64, stream: Stream, scenario: u64, producer: u64) -> u64 {
    let mut h = splitmix64(seed ^ stream.tag());
    h = splitmix64(h ^ scenario);
    splitmix64(h ^ producer.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Three standard normals from the substream `(seed, stream, scenario, producer)`.
pub fn standard_normals(seed: u64, stream: Stream, scenario: u64, producer: u64) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(substream_key(seed, stream, scenario, producer));
    let mut z = [0.0; 3];
    for v in &mut z {
        *v = StandardNormal.sample(&mut rng);
    }
    z
}

/// Maps a draw `μ + L z` onto a valid type: baseline and costs clamped at zero.
fn draw(q: &TypeDistribution, l: &[[f64; 3]; 3], z: &[f64; 3]) -> ProducerType {
    let mut v = q.mean;
    for (i, vi) in v.iter_mut().enumerate() {
        for (k, zk) in z.iter().enumerate().take(i + 1) {
            if l[i][k] != 0.0 {
                *vi += l[i][k] * zk;
            }
        }
    }
    ProducerType {
        down_cost: v[0].max(0.0),
        baseline: v[1].max(0.0),
        up_cost: (!q.infinite_up_cost).then(|| v[2].max(0.0)),
    }
}

/// `S × n` realized types.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    scenarios: Vec<Vec<ProducerType>>,
    seed: u64,
    stream_ids: Vec<u64>,
}

impl ScenarioSet {
    /// Builds a set from explicit rows; stream ids are the row indices.
    pub fn from_rows(scenarios: Vec<Vec<ProducerType>>, seed: u64) -> Result<Self> {
        let n = scenarios.first().map_or(0, Vec::len);
        if let Some(bad) = scenarios.iter().find(|row| row.len() != n) {
            return Err(MarketError::DimensionMismatch {
                expected: n,
                actual: bad.len(),
            });
        }
        let stream_ids = (0..scenarios.len() as u64).collect();
        Ok(Self {
            scenarios,
            seed,
            stream_ids,
        })
    }

    /// Every scenario equal to `thetas`.
    pub fn certain(thetas: Vec<ProducerType>, count: usize) -> Self {
        Self {
            scenarios: vec![thetas; count],
            seed: 0,
            stream_ids: (0..count as u64).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    /// Number of producers.
    pub fn n(&self) -> usize {
        self.scenarios.first().map_or(0, Vec::len)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_ids(&self) -> &[u64] {
        &self.stream_ids
    }

    pub fn scenario(&self, s: usize) -> &[ProducerType] {
        &self.scenarios[s]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[ProducerType]> {
        self.scenarios.iter().map(Vec::as_slice)
    }

    /// The same draws with producer `i`'s column removed.
    pub fn without_producer(&self, i: usize) -> Self {
        let scenarios = self
            .scenarios
            .iter()
            .map(|row| {
                let mut row = row.clone();
                row.remove(i);
                row
            })
            .collect();
        Self {
            scenarios,
            seed: self.seed,
            stream_ids: self.stream_ids.clone(),
        }
    }

    /// CSV with header `scenario,producer,down_cost,baseline,up_cost`.
    ///
    /// Scenarios are 0-based, producers 1-based; an infeasible up-regulation
    /// cost is written as `inf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,producer,down_cost,baseline,up_cost\n");
        for (s, row) in self.scenarios.iter().enumerate() {
            for (i, t) in row.iter().enumerate() {
                let up = t.up_cost.map_or_else(|| "inf".to_string(), fmt6);
                out.push_str(&format!(
                    "{s},{},{},{},{up}\n",
                    i + 1,
                    fmt6(t.down_cost),
                    fmt6(t.baseline)
                ));
            }
        }
        out
    }

    /// Parses the format written by [`ScenarioSet::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| parse_err("empty scenario file"))?;
        if header.trim() != "scenario,producer,down_cost,baseline,up_cost" {
            return Err(parse_err(format!("unexpected header `{header}`")));
        }
        let mut rows: Vec<Vec<ProducerType>> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(parse_err(format!("line {}: expected 5 fields", lineno + 2)));
            }
            let num = |k: usize| -> Result<f64> {
                f[k].parse::<f64>()
                    .map_err(|_| parse_err(format!("line {}: bad number `{}`", lineno + 2, f[k])))
            };
            let s: usize = f[0]
                .parse()
                .map_err(|_| parse_err(format!("line {}: bad scenario index", lineno + 2)))?;
            let p: usize = f[1]
                .parse()
                .map_err(|_| parse_err(format!("line {}: bad producer id", lineno + 2)))?;
            let up_cost = match f[4] {
                "inf" | "Inf" | "INF" => None,
                _ => Some(num(4)?),
            };
            let theta = ProducerType {
                down_cost: num(2)?,
                baseline: num(3)?,
                up_cost,
            };
            if !theta.is_valid() {
                return Err(parse_err(format!("line {}: invalid producer type", lineno + 2)));
            }
            if s != rows.len() && s + 1 != rows.len() {
                return Err(parse_err(format!("line {}: scenarios must be contiguous", lineno + 2)));
            }
            if s == rows.len() {
                rows.push(Vec::new());
            }
            if p != rows[s].len() + 1 {
                return Err(parse_err(format!("line {}: producers must be listed in order", lineno + 2)));
            }
            rows[s].push(theta);
        }
        Self::from_rows(rows, 0)
    }
}

fn parse_err(msg: impl Into<String>) -> MarketError {
    MarketError::Parse(msg.into())
}

/// `count` planning scenarios drawn from the reported distributions.
pub fn sample_scenarios(
    distributions: &[TypeDistribution],
    count: usize,
    seed: u64,
) -> Result<ScenarioSet> {
    sample_stream(distributions, count, seed, Stream::Planning)
}

/// `count` realizations drawn on the stream reserved for evaluation.
pub fn sample_realizations(
    distributions: &[TypeDistribution],
    count: usize,
    seed: u64,
) -> Result<ScenarioSet> {
    sample_stream(distributions, count, seed, Stream::Realization)
}

pub fn sample_stream(
    distributions: &[TypeDistribution],
    count: usize,
    seed: u64,
    stream: Stream,
) -> Result<ScenarioSet> {
    if count == 0 {
        return Err(MarketError::EmptyScenarioSet);
    }
    let factors = distributions
        .iter()
        .map(|q| cholesky(&q.covariance))
        .collect::<Result<Vec<_>>>()?;
    let scenarios = (0..count as u64)
        .into_par_iter()
        .map(|s| {
            distributions
                .iter()
                .zip(&factors)
                .enumerate()
                .map(|(i, (q, l))| draw(q, l, &standard_normals(seed, stream, s, i as u64)))
                .collect()
        })
        .collect();
    let stream_ids = (0..count as u64)
        .map(|s| substream_key(seed, stream, s, 0))
        .collect();
    Ok(ScenarioSet {
        scenarios,
        seed,
        stream_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mul_back(l: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = (0..3).map(|k| l[i][k] * l[j][k]).sum();
            }
        }
        out
    }

    #[test]
    fn cholesky_identity() {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(cholesky(&id).unwrap(), id);
    }

    #[test]
    fn cholesky_semidefinite_diagonal() {
        let s = [[0.0, 0.0, 0.0], [0.0, 16.0, 0.0], [0.0, 0.0, 0.0]];
        assert_eq!(
            cholesky(&s).unwrap(),
            [[0.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 0.0]]
        );
    }

    #[test]
    fn cholesky_multiplies_back() {
        let s = [[4.0, 2.0, 0.0], [2.0, 5.0, 0.0], [0.0, 0.0, 9.0]];
        let l = cholesky(&s).unwrap();
        let back = mul_back(&l);
        for i in 0..3 {
            for j in 0..3 {
                assert!((back[i][j] - s[i][j]).abs() <= 1e-10);
            }
            assert!(l[i][i + 1..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn cholesky_rank_one() {
        let s = [[4.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
        let back = mul_back(&cholesky(&s).unwrap());
        for i in 0..3 {
            for j in 0..3 {
                assert!((back[i][j] - s[i][j]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let s = [[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(matches!(cholesky(&s), Err(MarketError::NotPsd)));
        let s = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(matches!(cholesky(&s), Err(MarketError::NotPsd)));
    }

    #[test]
    fn zero_covariance_reproduces_mean() {
        let q = TypeDistribution::with_baseline_variance([3.0, 20.0, 12.0], 0.0, false);
        let set = sample_scenarios(std::slice::from_ref(&q), 50, 99).unwrap();
        assert!(set.iter().all(|row| row[0] == q.mean_type()));
    }

    #[test]
    fn law_of_large_numbers_on_baseline() {
        let q = TypeDistribution::with_baseline_variance([0.0, 20.0, 0.0], 16.0, true);
        let set = sample_scenarios(&[q], 10_000, 2024).unwrap();
        let b: Vec<f64> = set.iter().map(|row| row[0].baseline).collect();
        let mean = b.iter().sum::<f64>() / b.len() as f64;
        let var = b.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b.len() - 1) as f64;
        assert!((mean - 20.0).abs() < 0.2, "mean {mean}");
        assert!((var - 16.0).abs() < 1.0, "var {var}");
    }

    #[test]
    fn clamping_keeps_baselines_non_negative() {
        let q = TypeDistribution::with_baseline_variance([0.0, 20.0, 0.0], 1024.0, true);
        let set = sample_scenarios(&[q], 10_000, 5).unwrap();
        assert!(set.iter().all(|row| row[0].baseline >= 0.0));
        assert!(set.iter().any(|row| row[0].baseline == 0.0));
    }

    #[test]
    fn streams_are_distinct() {
        let q = TypeDistribution::with_baseline_variance([0.0, 20.0, 0.0], 16.0, true);
        let a = sample_scenarios(std::slice::from_ref(&q), 10, 1).unwrap();
        let b = sample_realizations(&[q], 10, 1).unwrap();
        assert_ne!(a.scenario(0)[0], b.scenario(0)[0]);
    }

    #[test]
    fn csv_round_trip() {
        let q = [
            TypeDistribution::with_baseline_variance([2.0, 20.0, 30.0], 9.0, false),
            TypeDistribution::with_baseline_variance([5.0, 20.0, 0.0], 9.0, true),
        ];
        let set = sample_scenarios(&q, 4, 3).unwrap();
        let back = ScenarioSet::from_csv(&set.to_csv()).unwrap();
        assert_eq!(back.len(), 4);
        assert_eq!(back.n(), 2);
        for (a, b) in set.iter().zip(back.iter()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x.baseline - y.baseline).abs() <= 5e-7);
                assert_eq!(x.up_cost.is_none(), y.up_cost.is_none());
            }
        }
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(ScenarioSet::from_csv("").is_err());
        assert!(ScenarioSet::from_csv("a,b\n").is_err());
        let bad = "scenario,producer,down_cost,baseline,up_cost\n0,2,1,1,inf\n";
        assert!(ScenarioSet::from_csv(bad).is_err());
        let neg = "scenario,producer,down_cost,baseline,up_cost\n0,1,1,-1,inf\n";
        assert!(ScenarioSet::from_csv(neg).is_err());
    }
}
