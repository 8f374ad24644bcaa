//! Browser demo: small experiments on a synthetic 8x8 ten-class task, with
//! per-round token shares returned as JSON for charting.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use fedcontrib::config::{client_address, ClientEntry, RunConfig};
use fedcontrib::data::SyntheticTask;
use fedcontrib::model::evaluate;
use fedcontrib::{run_experiment, Protocol};

const DIM: usize = 64;
const CLASSES: u8 = 10;

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct DemoParams {
    pub protocol: Protocol,
    pub ratios: Vec<u64>,
    /// One per client, or empty for no flipping.
    pub flips: Vec<f64>,
    pub rounds: usize,
    pub seed: u64,
    pub samples: usize,
    pub learning_rate: f64,
}

impl Default for DemoParams {
    fn default() -> Self {
        Self {
            protocol: Protocol::Crowdsource,
            ratios: vec![1, 1, 1],
            flips: Vec::new(),
            rounds: 5,
            seed: 1,
            samples: 1500,
            learning_rate: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClientCurve {
    pub client: usize,
    pub ratio: u64,
    pub flip: f64,
    pub size: usize,
    /// Cumulative share after each round.
    pub shares: Vec<f64>,
    pub tokens: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoResult {
    pub protocol: Protocol,
    pub clients: Vec<ClientCurve>,
    /// Holdout accuracy of the global model after each round.
    pub accuracy: Vec<f64>,
    pub test_accuracy: f64,
}

pub fn simulate(p: &DemoParams) -> Result<DemoResult, String> {
    if !p.flips.is_empty() && p.flips.len() != p.ratios.len() {
        return Err(format!(
            "{} flip values for {} clients",
            p.flips.len(),
            p.ratios.len()
        ));
    }
    if p.samples > 20_000 || p.rounds > 20 {
        return Err("keep samples <= 20000 and rounds <= 20 in the browser".into());
    }
    let clients: Vec<ClientEntry> = p
        .ratios
        .iter()
        .enumerate()
        .map(|(i, &ratio)| ClientEntry {
            ratio,
            flip: p.flips.get(i).copied().unwrap_or(0.0),
        })
        .collect();
    let cfg = RunConfig {
        protocol: p.protocol,
        seed: p.seed,
        rounds: p.rounds,
        learning_rate: p.learning_rate,
        hidden: vec![32],
        clients,
        ..RunConfig::default()
    };
    let task = SyntheticTask::new(DIM, CLASSES, p.seed);
    let train = task.sample(p.samples, p.seed.wrapping_add(1));
    let test = task.sample((p.samples / 3).max(100), p.seed.wrapping_add(2));
    let exp = cfg.materialize(&train, &test).map_err(|e| e.to_string())?;
    let run = run_experiment(&exp).map_err(|e| e.to_string())?;
    let outcome = run.report.outcome().ok_or("empty report")?;

    let curves = cfg
        .clients
        .iter()
        .zip(&exp.clients)
        .enumerate()
        .map(|(i, (entry, spec))| {
            let at = outcome.authors.iter().position(|a| *a == client_address(i));
            let shares = outcome
                .rounds
                .iter()
                .map(|r| {
                    let total: u64 = r.cumulative_tokens.iter().sum();
                    match (at, total) {
                        (Some(k), t) if t > 0 => r.cumulative_tokens[k] as f64 / t as f64,
                        _ => 0.0,
                    }
                })
                .collect();
            ClientCurve {
                client: i,
                ratio: entry.ratio,
                flip: entry.flip,
                size: spec.dataset.len(),
                shares,
                tokens: outcome.tokens_of(&client_address(i)),
            }
        })
        .collect();
    let final_model = run.final_model().map_err(|e| e.to_string())?;
    Ok(DemoResult {
        protocol: p.protocol,
        clients: curves,
        accuracy: outcome.rounds.iter().map(|r| r.global.accuracy).collect(),
        test_accuracy: evaluate(&final_model, &test)
            .map_err(|e| e.to_string())?
            .accuracy,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub crowdsource: DemoResult,
    pub consortium: DemoResult,
    /// Largest per-client difference in final share.
    pub max_difference: f64,
}

pub fn compare(p: &DemoParams) -> Result<Comparison, String> {
    let crowdsource = simulate(&DemoParams {
        protocol: Protocol::Crowdsource,
        ..p.clone()
    })?;
    let consortium = simulate(&DemoParams {
        protocol: Protocol::Consortium,
        ..p.clone()
    })?;
    let last = |c: &ClientCurve| c.shares.last().copied().unwrap_or(0.0);
    let max_difference = crowdsource
        .clients
        .iter()
        .zip(&consortium.clients)
        .map(|(a, b)| (last(a) - last(b)).abs())
        .fold(0.0, f64::max);
    Ok(Comparison {
        crowdsource,
        consortium,
        max_difference,
    })
}

fn parse_list<T: std::str::FromStr>(s: &str, sep: char) -> Result<Vec<T>, String> {
    s.split(sep)
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse().map_err(|_| format!("cannot parse {x:?}")))
        .collect()
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

/// Crowdsource shares per round for clients sized by `ratios` ("2:1:1").
#[wasm_bindgen]
pub fn share_curves(ratios: &str, rounds: usize, seed: u64) -> Result<String, JsValue> {
    to_js(parse_list(ratios, ':').and_then(|ratios| {
        simulate(&DemoParams {
            ratios,
            rounds,
            seed,
            ..DemoParams::default()
        })
    }))
}

/// Equal clients, each flipping the given proportion of labels ("0,0.3,0.9").
#[wasm_bindgen]
pub fn flip_sweep(flips: &str, protocol: &str, seed: u64) -> Result<String, JsValue> {
    to_js(parse_list::<f64>(flips, ',').and_then(|flips| {
        simulate(&DemoParams {
            protocol: protocol.parse()?,
            ratios: vec![1; flips.len()],
            flips,
            seed,
            ..DemoParams::default()
        })
    }))
}

/// The same equal split under both protocols.
#[wasm_bindgen]
pub fn compare_protocols(clients: usize, seed: u64) -> Result<String, JsValue> {
    to_js(compare(&DemoParams {
        ratios: vec![1; clients],
        seed,
        ..DemoParams::default()
    }))
}
