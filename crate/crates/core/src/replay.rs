//! Audit of a recorded run: rebuild the ledger from its transaction log,
//! recompute every global model, gain and token from the content store,
//! and compare against what was recorded.

use crate::cas::{Cid, ContentStore};
use crate::contributivity::{
    consortium_scores, contract_report, evaluate_contract, load_model, tokens_from_gain,
};
use crate::data::Dataset;
use crate::error::Error;
use crate::ledger::{parse_log, ContractId, Ledger, ReplayMismatch, Tx};
use crate::report::ContributivityReport;

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("{0}")]
    Record(ReplayMismatch),
    #[error("report line {line} differs: recorded {recorded:?}, recomputed {recomputed:?}")]
    Report {
        line: usize,
        recorded: String,
        recomputed: String,
    },
}

impl ReplayError {
    fn at(index: usize, reason: impl Into<String>) -> Self {
        ReplayError::Record(ReplayMismatch {
            index,
            reason: reason.into(),
        })
    }
}

fn submit_index(log: &[Tx], contract: ContractId, update: u64) -> usize {
    log.iter()
        .position(|tx| matches!(tx, Tx::Submit { contract: c, update: u, .. } if *c == contract && *u == update))
        .unwrap_or(0)
}

fn set_tokens_index(log: &[Tx], contract: ContractId, update: u64) -> usize {
    log.iter()
        .position(|tx| matches!(tx, Tx::SetTokens { contract: c, update: u, .. } if *c == contract && *u == update))
        .unwrap_or(0)
}

fn commit_index(log: &[Tx], contract: ContractId) -> usize {
    log.iter()
        .position(|tx| matches!(tx, Tx::CommitEvaluation { contract: c, .. } if *c == contract))
        .unwrap_or(0)
}

fn load_holdout(store: &ContentStore, cid: &Cid, num_classes: u8) -> Result<Dataset, Error> {
    let bytes = store.get(cid)?;
    Ok(Dataset::from_idx_bundle(
        &bytes,
        num_classes,
        format!("holdout {cid}"),
    )?)
}

/// Recomputes the run's report from `log_text` and `store`. Every
/// recorded token must equal the one derived from the stored models.
pub fn recompute(
    log_text: &str,
    store: &ContentStore,
) -> Result<(Ledger, ContributivityReport), ReplayError> {
    let log = parse_log(log_text).map_err(ReplayError::Record)?;
    let ledger = Ledger::replay(&log).map_err(ReplayError::Record)?;
    let mut reports = Vec::new();

    for c in ledger.contracts() {
        if let Some(cons) = ledger.consortium_of(c.id).filter(|k| k.main == c.id) {
            let main = consortium_scores(&ledger, cons.id, &reports)
                .map_err(|e| ReplayError::at(log.len().saturating_sub(1), e.to_string()))?;
            reports.push(main);
            continue;
        }
        let Some(commit) = &c.evaluation else {
            continue;
        };
        let at_commit = commit_index(&log, c.id);
        let genesis = load_model(store, &c.genesis)
            .map_err(|e| ReplayError::at(0, format!("genesis of contract {}: {e}", c.id)))?;
        let holdout = load_holdout(store, &commit.holdout, genesis.arch().num_classes() as u8)
            .map_err(|e| ReplayError::at(at_commit, e.to_string()))?;
        let evaluation = evaluate_contract(c, &holdout, store).map_err(|e| match e {
            Error::UpdateLoad { update, .. } => {
                ReplayError::at(submit_index(&log, c.id, update), e.to_string())
            }
            other => ReplayError::at(at_commit, other.to_string()),
        })?;
        for g in &evaluation.gains {
            let derived = tokens_from_gain(g.gain, commit.token_scale);
            let recorded = c.updates[g.update_id as usize].tokens;
            if recorded != Some(derived) {
                return Err(ReplayError::at(
                    set_tokens_index(&log, c.id, g.update_id),
                    format!(
                        "update {} on contract {} recorded {recorded:?} tokens, stored models give {derived}",
                        g.update_id, c.id
                    ),
                ));
            }
        }
        let report = contract_report(&ledger, c.id, &evaluation)
            .map_err(|e| ReplayError::at(at_commit, e.to_string()))?;
        reports.push(report);
    }
    Ok((ledger, ContributivityReport { contracts: reports }))
}

/// [`recompute`], then compare the CSV byte for byte with `recorded_csv`.
pub fn verify(
    log_text: &str,
    store: &ContentStore,
    recorded_csv: &str,
) -> Result<ContributivityReport, ReplayError> {
    let (_, report) = recompute(log_text, store)?;
    let csv = report.to_csv();
    if csv != recorded_csv {
        let mut recorded = recorded_csv.lines();
        let mut recomputed = csv.lines();
        for line in 1.. {
            let (r, c) = (recorded.next(), recomputed.next());
            if r != c {
                return Err(ReplayError::Report {
                    line,
                    recorded: r.unwrap_or("<end>").to_string(),
                    recomputed: c.unwrap_or("<end>").to_string(),
                });
            }
            if r.is_none() {
                break;
            }
        }
        return Err(ReplayError::Report {
            line: 0,
            recorded: "trailing bytes differ".into(),
            recomputed: String::new(),
        });
    }
    Ok(report)
}
