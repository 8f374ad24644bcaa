//! Contributivity reports and their CSV form.

use std::fmt::Write as _;

use crate::error::LedgerError;
use crate::ledger::{Address, ContractId};
use crate::model::EvalResult;

pub const CSV_HEADER: &str =
    "contract_id,round,author,tokens_cumulative,share,global_loss,global_accuracy";

/// Score of one update: holdout loss of the global model it started from
/// minus holdout loss of the update itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundGain {
    pub update_id: u64,
    pub round: u64,
    pub author: Address,
    pub gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContractRole {
    Crowdsource,
    Auxiliary {
        evaluator: Address,
    },
    /// A consortium's main model, scored from its auxiliary contracts.
    Main,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundSummary {
    pub round: u64,
    /// Aligned with [`ContractReport::authors`].
    pub cumulative_tokens: Vec<u64>,
    /// Global model after this round's aggregation. For a main contract this
    /// is the mean over the auxiliary contracts.
    pub global: EvalResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractReport {
    pub contract: ContractId,
    pub role: ContractRole,
    /// Ascending by address.
    pub authors: Vec<Address>,
    pub rounds: Vec<RoundSummary>,
    /// Raw gains, including negative ones that earned no tokens.
    pub gains: Vec<RoundGain>,
}

impl ContractReport {
    pub fn final_tokens(&self) -> Vec<u64> {
        self.rounds
            .last()
            .map(|r| r.cumulative_tokens.clone())
            .unwrap_or_else(|| vec![0; self.authors.len()])
    }

    pub fn final_shares(&self) -> Result<Vec<f64>, LedgerError> {
        shares_of(&self.final_tokens())
    }

    pub fn tokens_of(&self, author: &Address) -> u64 {
        self.authors
            .iter()
            .position(|a| a == author)
            .map_or(0, |i| self.final_tokens()[i])
    }

    pub fn share_of(&self, author: &Address) -> Result<f64, LedgerError> {
        let total: u64 = self.final_tokens().iter().sum();
        if total == 0 {
            return Err(LedgerError::NoTokens);
        }
        Ok(self.tokens_of(author) as f64 / total as f64)
    }

    /// Sum of gains per author, aligned with `authors`.
    pub fn contributivity(&self) -> Vec<f64> {
        self.authors
            .iter()
            .map(|a| {
                self.gains
                    .iter()
                    .filter(|g| g.author == *a)
                    .map(|g| g.gain)
                    .sum()
            })
            .collect()
    }

    pub fn final_global(&self) -> Option<EvalResult> {
        self.rounds.last().map(|r| r.global)
    }
}

fn shares_of(tokens: &[u64]) -> Result<Vec<f64>, LedgerError> {
    let total: u64 = tokens.iter().sum();
    if total == 0 {
        return Err(LedgerError::NoTokens);
    }
    Ok(tokens.iter().map(|&t| t as f64 / total as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContributivityReport {
    /// The contract whose shares are the outcome comes last: the crowdsource
    /// contract, or a consortium's main contract after its auxiliaries.
    pub contracts: Vec<ContractReport>,
}

impl ContributivityReport {
    pub fn outcome(&self) -> Option<&ContractReport> {
        self.contracts.last()
    }

    pub fn contract(&self, id: ContractId) -> Option<&ContractReport> {
        self.contracts.iter().find(|c| c.contract == id)
    }

    pub fn share_of(&self, author: &Address) -> Result<f64, LedgerError> {
        self.outcome()
            .ok_or(LedgerError::NoTokens)?
            .share_of(author)
    }

    /// One row per contract, round and author. `share` is the author's
    /// fraction of the tokens assigned up to that round, 0 while none are.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_HEADER);
        out.push('\n');
        for c in &self.contracts {
            for r in &c.rounds {
                let total: u64 = r.cumulative_tokens.iter().sum();
                for (author, &tokens) in c.authors.iter().zip(&r.cumulative_tokens) {
                    let share = if total == 0 {
                        0.0
                    } else {
                        tokens as f64 / total as f64
                    };
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{}",
                        c.contract,
                        r.round,
                        author,
                        tokens,
                        share,
                        r.global.loss,
                        r.global.accuracy
                    )
                    .expect("writing to a String");
                }
            }
        }
        out
    }
}
