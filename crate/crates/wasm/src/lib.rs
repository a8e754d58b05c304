//! Browser bindings. Each export takes a market description in TOML and
//! returns a JSON document for the page to draw.

use serde::Serialize;
use stem_core::experiments::{misreport_sweep, CaseStudy, MISREPORT_GRID};
use stem_core::model::{bitmask_string, parse_market};
use stem_core::scenario::sample_scenarios;
use stem_core::stage1::{solve_first_stage_on, SaaObjective};
use stem_core::MarketError;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct MaskRow {
    bitmask: String,
    reserve: f64,
    dispatchable: f64,
    expected_cost: f64,
}

#[derive(Serialize)]
struct Clearing {
    bitmask: String,
    reserve: f64,
    dispatchable: f64,
    expected_cost: f64,
    masks: Vec<MaskRow>,
}

#[derive(Serialize)]
struct Curve {
    x: Vec<f64>,
    y: Vec<f64>,
    err: Vec<f64>,
}

fn load(toml: &str, scenarios: usize, seed: u64) -> Result<CaseStudy, MarketError> {
    let mut case = CaseStudy::from_market(parse_market(toml)?)?;
    if scenarios > 0 {
        case.config.scenario_count = scenarios;
    }
    case.config.seed = seed;
    Ok(case)
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

/// First-stage clearing with the cost of every dispatch bitmask.
pub fn clear(toml: &str, scenarios: usize, seed: u64) -> Result<String, MarketError> {
    let case = load(toml, scenarios, seed)?;
    let plan = sample_scenarios(&case.distributions, case.config.scenario_count, seed)?;
    let sol = solve_first_stage_on(&plan, &case.config)?;
    let mut masks: Vec<MaskRow> = sol
        .per_bitmask
        .iter()
        .map(|(mask, o)| MaskRow {
            bitmask: bitmask_string(mask),
            reserve: o.reserve,
            dispatchable: o.dispatchable,
            expected_cost: o.value,
        })
        .collect();
    masks.sort_by(|a, b| a.expected_cost.total_cmp(&b.expected_cost));
    Ok(json(&Clearing {
        bitmask: sol.decision.bitmask_string(),
        reserve: sol.decision.reserve_capacity,
        dispatchable: sol.decision.dispatchable,
        expected_cost: sol.expected_cost,
        masks,
    }))
}

/// Expected cost of the chosen bitmask as reserve capacity varies, dispatchable power held at its optimum.
pub fn reserve_curve(toml: &str, scenarios: usize, seed: u64, points: usize) -> Result<String, MarketError> {
    let case = load(toml, scenarios, seed)?;
    let plan = sample_scenarios(&case.distributions, case.config.scenario_count, seed)?;
    let sol = solve_first_stage_on(&plan, &case.config)?;
    let objective = SaaObjective::new(&sol.decision.dispatch, &plan, &case.config)?;
    let points = points.max(2);
    let x: Vec<f64> = (0..points)
        .map(|k| case.config.reserve_cap_max * k as f64 / (points - 1) as f64)
        .collect();
    let y = x
        .iter()
        .map(|&r| objective.evaluate(r, sol.decision.dispatchable).map(|e| e.value))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(json(&Curve { err: vec![0.0; x.len()], x, y }))
}

/// Average utility of one producer (1-based) for every reported variance on the standard grid.
pub fn misreport_curve(
    toml: &str,
    producer: usize,
    scenarios: usize,
    samples: usize,
    seed: u64,
) -> Result<String, MarketError> {
    let case = load(toml, scenarios, seed)?;
    if producer == 0 || producer > case.n() {
        return Err(MarketError::DimensionMismatch {
            expected: case.n(),
            actual: producer,
        });
    }
    let points = misreport_sweep(&case, &[producer - 1], &MISREPORT_GRID, samples, seed)?;
    Ok(json(&Curve {
        x: points.iter().map(|p| p.reported_variance).collect(),
        y: points.iter().map(|p| p.avg_utility).collect(),
        err: points.iter().map(|p| p.std_err).collect(),
    }))
}

fn js(e: MarketError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = caseStudy)]
pub fn case_study() -> String {
    stem_core::experiments::CASESTUDY_TOML.to_string()
}

#[wasm_bindgen(js_name = clearMarket)]
pub fn clear_market(toml: &str, scenarios: u32, seed: u32) -> Result<String, JsError> {
    clear(toml, scenarios as usize, seed.into()).map_err(js)
}

#[wasm_bindgen(js_name = reserveCurve)]
pub fn reserve_curve_js(toml: &str, scenarios: u32, seed: u32, points: u32) -> Result<String, JsError> {
    reserve_curve(toml, scenarios as usize, seed.into(), points as usize).map_err(js)
}

#[wasm_bindgen(js_name = misreportCurve)]
pub fn misreport_curve_js(toml: &str, producer: u32, scenarios: u32, samples: u32, seed: u32) -> Result<String, JsError> {
    misreport_curve(toml, producer as usize, scenarios as usize, samples as usize, seed.into()).map_err(js)
}
