//! Step-by-step evaluation and token assignment.
//!
//! A client's contributivity is the sum over rounds of the holdout-loss
//! improvement its update achieves relative to the global model it started
//! from. With loss as the metric, improvements are positive. Gains are
//! converted to integer tokens on the contract; negative gains earn none.

use crate::cas::{Cid, ContentStore};
use crate::data::Dataset;
use crate::error::{Error, LedgerError, ModelError, Result};
use crate::exec::par_map;
use crate::ledger::{Address, ConsortiumId, ContractId, CrowdsourceContract, Ledger};
use crate::model::{deserialize, evaluate, EvalResult, ModelParams};
use crate::report::{ContractReport, ContractRole, RoundGain, RoundSummary};

/// Default tokens per unit of loss reduction.
pub const DEFAULT_TOKEN_SCALE: f64 = 1e6;

pub fn load_model(store: &ContentStore, cid: &Cid) -> Result<ModelParams> {
    Ok(deserialize(&store.get(cid)?)?)
}

/// Elementwise arithmetic mean, summed in the order given.
pub fn aggregate(models: &[ModelParams]) -> Result<ModelParams> {
    let first = models
        .first()
        .ok_or_else(|| Error::Config("cannot aggregate zero models".into()))?;
    let mut sum = vec![0.0; first.weights().len()];
    for m in models {
        if m.arch() != first.arch() {
            return Err(ModelError::InvalidArchitecture(
                "aggregated models have different architectures".into(),
            )
            .into());
        }
        for (s, w) in sum.iter_mut().zip(m.weights()) {
            *s += w;
        }
    }
    let n = models.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(ModelParams::from_parts(first.arch().clone(), sum)?)
}

/// Global models for rounds `1..=through_round`; entry `r - 1` is the
/// model trainers start from in round `r`.
pub fn global_models(
    contract: &CrowdsourceContract,
    store: &ContentStore,
    through_round: u64,
) -> Result<Vec<ModelParams>> {
    if through_round == 0 {
        return Err(LedgerError::RoundZero.into());
    }
    let mut out = Vec::with_capacity(through_round as usize);
    out.push(load_model(store, &contract.genesis)?);
    for round in 2..=through_round {
        let previous = contract.updates_in_round(round - 1);
        let next = if previous.is_empty() {
            out.last().expect("genesis present").clone()
        } else {
            let models = previous
                .iter()
                .map(|u| load_update(store, u.id, &u.cid))
                .collect::<Result<Vec<_>>>()?;
            aggregate(&models)?
        };
        out.push(next);
    }
    Ok(out)
}

/// Genesis for round 1; otherwise the mean of the previous round's
/// updates in address order, or the previous global model if there were
/// none.
pub fn global_model_at(
    contract: &CrowdsourceContract,
    round: u64,
    store: &ContentStore,
) -> Result<ModelParams> {
    Ok(global_models(contract, store, round)?
        .pop()
        .expect("at least one round"))
}

fn load_update(store: &ContentStore, update: u64, cid: &Cid) -> Result<ModelParams> {
    load_model(store, cid).map_err(|e| Error::UpdateLoad {
        update,
        cid: *cid,
        cause: Box::new(e),
    })
}

/// Everything an evaluator derives from a finished contract and a holdout.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractEvaluation {
    pub rounds: u64,
    /// Ordered by update id.
    pub gains: Vec<RoundGain>,
    /// Entry `r - 1` scores the global model after round `r`.
    pub global_after_round: Vec<EvalResult>,
}

pub fn evaluate_contract(
    contract: &CrowdsourceContract,
    holdout: &Dataset,
    store: &ContentStore,
) -> Result<ContractEvaluation> {
    if !contract.training_finished {
        return Err(LedgerError::TrainingNotFinished(contract.id).into());
    }
    if holdout.is_empty() {
        return Err(ModelError::EmptyDataset.into());
    }
    let rounds = contract.completed_rounds();
    let globals = global_models(contract, store, rounds + 1)?;
    let global_eval = par_map(&globals, |m| evaluate(m, holdout))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let update_loss = par_map(&contract.updates, |u| -> Result<f64> {
        let model = load_update(store, u.id, &u.cid)?;
        Ok(evaluate(&model, holdout)?.loss)
    });
    let gains = contract
        .updates
        .iter()
        .zip(update_loss)
        .map(|(u, loss)| {
            Ok(RoundGain {
                update_id: u.id,
                round: u.round,
                author: u.author,
                gain: global_eval[(u.round - 1) as usize].loss - loss?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ContractEvaluation {
        rounds,
        gains,
        global_after_round: global_eval[1..].to_vec(),
    })
}

/// Gain of every update on a finished contract against `holdout`.
pub fn step_gains(
    contract: &CrowdsourceContract,
    holdout: &Dataset,
    store: &ContentStore,
) -> Result<Vec<RoundGain>> {
    Ok(evaluate_contract(contract, holdout, store)?.gains)
}

/// `round(scale * max(0, gain))`.
pub fn tokens_from_gain(gain: f64, scale: f64) -> u64 {
    assert!(
        scale > 0.0 && scale.is_finite(),
        "token scale must be positive"
    );
    (scale * gain.max(0.0)).round() as u64
}

fn role_of(ledger: &Ledger, contract: &CrowdsourceContract) -> ContractRole {
    match (ledger.consortium_of(contract.id), contract.evaluator) {
        (Some(c), _) if c.main == contract.id => ContractRole::Main,
        (Some(_), Some(evaluator)) => ContractRole::Auxiliary { evaluator },
        _ => ContractRole::Crowdsource,
    }
}

/// Per-round cumulative tokens from the contract's recorded assignments.
pub fn contract_report(
    ledger: &Ledger,
    contract: ContractId,
    evaluation: &ContractEvaluation,
) -> Result<ContractReport> {
    let c = ledger.contract(contract)?;
    let authors = c.authors();
    let rounds = (1..=evaluation.rounds)
        .map(|round| RoundSummary {
            round,
            cumulative_tokens: authors
                .iter()
                .map(|a| {
                    c.updates
                        .iter()
                        .filter(|u| u.author == *a && u.round <= round)
                        .filter_map(|u| u.tokens)
                        .sum()
                })
                .collect(),
            global: evaluation.global_after_round[(round - 1) as usize],
        })
        .collect();
    Ok(ContractReport {
        contract,
        role: role_of(ledger, c),
        authors,
        rounds,
        gains: evaluation.gains.clone(),
    })
}

/// The evaluator scores every update on `contract` against `holdout`,
/// commits the holdout to the store and the ledger, and assigns tokens.
/// Tokens can be assigned only once.
pub fn evaluate_and_assign(
    ledger: &mut Ledger,
    contract: ContractId,
    caller: Address,
    holdout: &Dataset,
    store: &ContentStore,
    token_scale: f64,
    now: u64,
) -> Result<ContractReport> {
    let c = ledger.contract(contract)?;
    if c.evaluator != Some(caller) {
        return Err(LedgerError::NotEvaluator.into());
    }
    if let Some(u) = c.updates.iter().find(|u| u.tokens.is_some()) {
        return Err(LedgerError::TokensAlreadySet(u.id).into());
    }
    if !(token_scale > 0.0 && token_scale.is_finite()) {
        return Err(Error::Config(format!(
            "token scale {token_scale} must be positive"
        )));
    }
    let evaluation = evaluate_contract(c, holdout, store)?;
    let holdout_cid = store.put(&holdout.to_idx_bundle())?;
    ledger.commit_evaluation(contract, caller, holdout_cid, token_scale, now)?;
    for g in &evaluation.gains {
        ledger.set_tokens(
            contract,
            caller,
            g.update_id,
            tokens_from_gain(g.gain, token_scale),
            now,
        )?;
    }
    contract_report(ledger, contract, &evaluation)
}

/// Main-contract report of a consortium: each member's tokens are the sum
/// of its tokens over the auxiliary contracts it trained, and the main
/// model's performance per round is estimated as the mean over the
/// auxiliary global models, each scored on its evaluator's holdout.
pub fn consortium_scores(
    ledger: &Ledger,
    consortium: ConsortiumId,
    aux_reports: &[ContractReport],
) -> Result<ContractReport> {
    let cons = ledger.consortium(consortium)?;
    let mut aux = Vec::with_capacity(cons.aux.len());
    for &id in &cons.aux {
        let c = ledger.contract(id)?;
        if !c.training_finished {
            return Err(LedgerError::TrainingNotFinished(id).into());
        }
        if c.evaluation.is_none() || c.updates.iter().any(|u| u.tokens.is_none()) {
            return Err(Error::Config(format!(
                "auxiliary contract {id} has not been scored"
            )));
        }
        let report = aux_reports
            .iter()
            .find(|r| r.contract == id)
            .ok_or_else(|| Error::Config(format!("no report for auxiliary contract {id}")))?;
        aux.push((c, report));
    }
    let rounds = aux.iter().map(|(_, r)| r.rounds.len()).min().unwrap_or(0) as u64;
    let mut authors = cons.members.clone();
    authors.sort();

    let rounds = (1..=rounds)
        .map(|round| {
            let cumulative_tokens = authors
                .iter()
                .map(|m| {
                    aux.iter()
                        .flat_map(|(c, _)| c.updates.iter())
                        .filter(|u| u.author == *m && u.round <= round)
                        .filter_map(|u| u.tokens)
                        .sum()
                })
                .collect();
            let n = aux.len() as f64;
            let (loss, accuracy) = aux.iter().fold((0.0, 0.0), |(l, a), (_, r)| {
                let g = r.rounds[(round - 1) as usize].global;
                (l + g.loss, a + g.accuracy)
            });
            RoundSummary {
                round,
                cumulative_tokens,
                global: EvalResult {
                    loss: loss / n,
                    accuracy: accuracy / n,
                },
            }
        })
        .collect();
    Ok(ContractReport {
        contract: cons.main,
        role: ContractRole::Main,
        authors,
        rounds,
        gains: Vec::new(),
    })
}
