//! Hand-built contracts whose models have analytically known holdout loss.
//!
//! Every stub model has zero weights except the output biases, so its
//! logits are constant. On a two-class holdout whose labels are all 0, the
//! loss is `softplus(b1 - b0)`: setting `b1 - b0 = ln(e^L - 1)` forces loss L.

#![allow(dead_code)]

use fedcontrib::cas::ContentStore;
use fedcontrib::ledger::{Address, ContractId, Ledger};
use fedcontrib::model::{evaluate, loss_gradient, serialize, Architecture, ModelParams};
use fedcontrib::Dataset;

pub const SCALE: f64 = 1e6;

pub fn arch() -> Architecture {
    Architecture::new(vec![4, 3, 2]).unwrap()
}

/// Index of the two output biases in the flat parameter vector.
pub const B0: usize = 4 * 3 + 3 + 3 * 2;

pub fn stub_with_delta(delta: f64) -> ModelParams {
    let mut w = vec![0.0; arch().param_count()];
    w[B0 + 1] = delta;
    ModelParams::from_parts(arch(), w).unwrap()
}

pub fn stub(loss: f64) -> ModelParams {
    stub_with_delta(loss.exp_m1().ln())
}

pub fn delta_of(m: &ModelParams) -> f64 {
    m.weights()[B0 + 1] - m.weights()[B0]
}

pub fn softplus(x: f64) -> f64 {
    x.exp().ln_1p()
}

pub fn holdout() -> Dataset {
    let n = 7;
    let pixels = (0..n * 4).map(|i| (i * 37 % 256) as u8).collect();
    Dataset::new(4, 2, pixels, vec![0; n], "all-zero labels").unwrap()
}

pub struct Built {
    pub ledger: Ledger,
    pub store: ContentStore,
    pub contract: ContractId,
    pub evaluator: Address,
}

/// Deploys a crowdsource contract with `genesis` and submits
/// `rounds[r]` = list of (author, model) in round `r + 1`.
pub fn build(genesis: &ModelParams, rounds: &[Vec<(Address, ModelParams)>]) -> Built {
    let store = ContentStore::in_memory();
    let mut ledger = Ledger::new();
    let evaluator = Address::derive("alice");
    let g = store.put(&serialize(genesis)).unwrap();
    let d = 100;
    let contract = ledger.deploy_crowdsource(evaluator, g, d, 0).unwrap();
    for (r, subs) in rounds.iter().enumerate() {
        for (k, (author, model)) in subs.iter().enumerate() {
            let cid = store.put(&serialize(model)).unwrap();
            ledger
                .submit_update(contract, *author, cid, r as u64 * d + k as u64)
                .unwrap();
        }
    }
    ledger
        .finish_training(contract, evaluator, rounds.len() as u64 * d)
        .unwrap();
    Built {
        ledger,
        store,
        contract,
        evaluator,
    }
}

/// Direct evaluation of sum_i (v(M_i) - v(M_{i+1}^A)), with the global
/// models rebuilt here by plain averaging rather than by the library.
pub fn brute_force(
    genesis: &ModelParams,
    rounds: &[Vec<(Address, ModelParams)>],
    author: Address,
) -> f64 {
    let h = holdout();
    let mut global = genesis.clone();
    let mut total = 0.0;
    for subs in rounds {
        let v_global = evaluate(&global, &h).unwrap().loss;
        for (who, m) in subs {
            if *who == author {
                total += v_global - evaluate(m, &h).unwrap().loss;
            }
        }
        if !subs.is_empty() {
            let mut sorted: Vec<&(Address, ModelParams)> = subs.iter().collect();
            sorted.sort_by_key(|(a, _)| *a);
            let n = sorted.len() as f64;
            let w: Vec<f64> = (0..genesis.weights().len())
                .map(|i| sorted.iter().map(|(_, m)| m.weights()[i]).sum::<f64>() / n)
                .collect();
            global = ModelParams::from_parts(arch(), w).unwrap();
        }
    }
    total
}

/// Largest relative disagreement between the analytic gradient and central
/// differences with step `h`, ignoring entries below `floor` in magnitude.
pub fn gradient_check(params: &ModelParams, data: &Dataset, h: f64, floor: f64) -> f64 {
    let (_, grad) = loss_gradient(params, data).unwrap();
    let loss_at = |w: Vec<f64>| {
        let m = ModelParams::from_parts(params.arch().clone(), w).unwrap();
        evaluate(&m, data).unwrap().loss
    };
    let mut worst: f64 = 0.0;
    for (i, &g) in grad.iter().enumerate() {
        let mut plus = params.weights().to_vec();
        let mut minus = params.weights().to_vec();
        plus[i] += h;
        minus[i] -= h;
        let numeric = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
        let scale = g.abs().max(numeric.abs());
        if scale >= floor {
            worst = worst.max((g - numeric).abs() / scale);
        }
    }
    worst
}
