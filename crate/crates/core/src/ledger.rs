//! Simulated chain hosting Crowdsource and Consortium contracts.
//!
//! Blocks are not modelled: every transaction carries the logical
//! timestamp it was applied at, and a contract's training round is a pure
//! function of that timestamp. All state changes go through [`Ledger`],
//! which appends one [`Tx`] per accepted call; folding the log back through
//! [`Ledger::replay`] rebuilds identical state.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::cas::Cid;
use crate::error::LedgerError;

pub type ContractId = u32;
pub type ConsortiumId = u32;

/// 20-byte account identity.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Address([u8; 20]);

impl Address {
    pub const fn from_bytes(bytes: [u8; 20]) -> Self {
        Address(bytes)
    }

    /// Deterministic address for a named participant.
    pub fn derive(label: &str) -> Self {
        let digest = Sha256::digest(label.as_bytes());
        Address(digest[..20].try_into().expect("digest is 32 bytes"))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", self.to_hex())
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", &self.to_hex()[..8])
    }
}

impl FromStr for Address {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let h = s.strip_prefix("0x").unwrap_or(s);
        let mut out = [0u8; 20];
        hex::decode_to_slice(h, &mut out).map_err(|e| format!("bad address {s:?}: {e}"))?;
        Ok(Address(out))
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Logical clock driven by whoever orchestrates the simulation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimClock {
    now: u64,
}

impl SimClock {
    pub fn starting_at(now: u64) -> Self {
        Self { now }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// Moves forward to `t`; earlier times leave the clock unchanged.
    pub fn advance_to(&mut self, t: u64) -> u64 {
        self.now = self.now.max(t);
        self.now
    }

    pub fn advance_by(&mut self, secs: u64) -> u64 {
        self.now += secs;
        self.now
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub id: u64,
    pub round: u64,
    pub author: Address,
    pub cid: Cid,
    pub submitted_at: u64,
    pub tokens: Option<u64>,
}

/// Holdout dataset an evaluator scored a contract against, and the token
/// scale used to turn gains into tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationCommit {
    pub holdout: Cid,
    pub token_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrowdsourceContract {
    pub id: ContractId,
    /// `None` only for a consortium's main contract.
    pub evaluator: Option<Address>,
    /// Closed trainer set; `None` means anyone but the evaluator may train.
    pub trainers: Option<Vec<Address>>,
    pub genesis: Cid,
    pub round_duration: u64,
    pub deployed_at: u64,
    pub updates: Vec<UpdateRecord>,
    pub training_finished: bool,
    pub finished_at: Option<u64>,
    pub evaluation: Option<EvaluationCommit>,
}

impl CrowdsourceContract {
    /// `1 + floor((t - deployed_at) / duration)`.
    pub fn round_at(&self, t: u64) -> Result<u64, LedgerError> {
        if t < self.deployed_at {
            return Err(LedgerError::PreGenesis {
                now: t,
                deployed_at: self.deployed_at,
            });
        }
        Ok(1 + (t - self.deployed_at) / self.round_duration)
    }

    /// First second of `round`.
    pub fn round_start(&self, round: u64) -> u64 {
        self.deployed_at + (round - 1) * self.round_duration
    }

    /// Rounds that ran before training was closed, or the last round with
    /// an update if that is later.
    pub fn completed_rounds(&self) -> u64 {
        let by_clock = self
            .finished_at
            .and_then(|t| self.round_at(t).ok())
            .map_or(0, |r| r - 1);
        let by_updates = self.updates.iter().map(|u| u.round).max().unwrap_or(0);
        by_clock.max(by_updates)
    }

    /// Updates submitted in `round`, ordered by author address.
    pub fn updates_in_round(&self, round: u64) -> Vec<&UpdateRecord> {
        let mut v: Vec<&UpdateRecord> = self.updates.iter().filter(|u| u.round == round).collect();
        v.sort_by_key(|u| u.author);
        v
    }

    /// Every address with at least one update, ascending.
    pub fn authors(&self) -> Vec<Address> {
        let mut a: Vec<Address> = self.updates.iter().map(|u| u.author).collect();
        a.sort();
        a.dedup();
        a
    }

    pub fn token_balance(&self, addr: &Address) -> u64 {
        self.updates
            .iter()
            .filter(|u| u.author == *addr)
            .filter_map(|u| u.tokens)
            .sum()
    }

    pub fn total_tokens(&self) -> u64 {
        self.updates.iter().filter_map(|u| u.tokens).sum()
    }

    pub fn share(&self, addr: &Address) -> Result<f64, LedgerError> {
        let total = self.total_tokens();
        if total == 0 {
            return Err(LedgerError::NoTokens);
        }
        Ok(self.token_balance(addr) as f64 / total as f64)
    }

    /// `(author, share)` for every author, ascending by address.
    pub fn shares(&self) -> Result<Vec<(Address, f64)>, LedgerError> {
        self.authors()
            .into_iter()
            .map(|a| self.share(&a).map(|s| (a, s)))
            .collect()
    }

    fn may_train(&self, author: &Address) -> Result<(), LedgerError> {
        if self.evaluator == Some(*author) {
            return Err(LedgerError::EvaluatorMayNotTrain);
        }
        if let Some(t) = &self.trainers {
            if !t.contains(author) {
                return Err(LedgerError::NotATrainer {
                    contract: self.id,
                    author: *author,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsortiumContract {
    pub id: ConsortiumId,
    pub members: Vec<Address>,
    /// `aux[k]` is evaluated by `members[k]` and trained by everyone else.
    pub aux: Vec<ContractId>,
    pub main: ContractId,
}

impl ConsortiumContract {
    /// Contracts `member` trains on: the main contract and every auxiliary
    /// contract it does not evaluate.
    pub fn training_contracts(&self, member: &Address) -> Vec<ContractId> {
        let mut out = vec![self.main];
        out.extend(
            self.members
                .iter()
                .zip(&self.aux)
                .filter(|(m, _)| *m != member)
                .map(|(_, c)| *c),
        );
        out
    }
}

/// One accepted ledger call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Tx {
    DeployCrowdsource {
        contract: ContractId,
        evaluator: Address,
        genesis: Cid,
        round_duration: u64,
        at: u64,
    },
    DeployConsortium {
        consortium: ConsortiumId,
        members: Vec<Address>,
        aux: Vec<ContractId>,
        main: ContractId,
        genesis: Cid,
        round_duration: u64,
        at: u64,
    },
    Submit {
        contract: ContractId,
        update: u64,
        round: u64,
        author: Address,
        cid: Cid,
        at: u64,
    },
    FinishTraining {
        contract: ContractId,
        caller: Address,
        at: u64,
    },
    CommitEvaluation {
        contract: ContractId,
        caller: Address,
        holdout: Cid,
        token_scale: f64,
        at: u64,
    },
    SetTokens {
        contract: ContractId,
        caller: Address,
        update: u64,
        tokens: u64,
        at: u64,
    },
}

impl Tx {
    pub fn at(&self) -> u64 {
        match self {
            Tx::DeployCrowdsource { at, .. }
            | Tx::DeployConsortium { at, .. }
            | Tx::Submit { at, .. }
            | Tx::FinishTraining { at, .. }
            | Tx::CommitEvaluation { at, .. }
            | Tx::SetTokens { at, .. } => *at,
        }
    }
}

/// A replayed transaction disagreed with what the ledger derived.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayMismatch {
    /// Zero-based position in the log.
    pub index: usize,
    pub reason: String,
}

impl fmt::Display for ReplayMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "record {}: {}", self.index + 1, self.reason)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ledger {
    contracts: Vec<CrowdsourceContract>,
    consortia: Vec<ConsortiumContract>,
    log: Vec<Tx>,
    last_time: u64,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn log(&self) -> &[Tx] {
        &self.log
    }

    pub fn contracts(&self) -> &[CrowdsourceContract] {
        &self.contracts
    }

    pub fn consortia(&self) -> &[ConsortiumContract] {
        &self.consortia
    }

    pub fn contract(&self, id: ContractId) -> Result<&CrowdsourceContract, LedgerError> {
        self.contracts
            .get(id as usize)
            .ok_or(LedgerError::UnknownContract(id))
    }

    fn contract_mut(&mut self, id: ContractId) -> Result<&mut CrowdsourceContract, LedgerError> {
        self.contracts
            .get_mut(id as usize)
            .ok_or(LedgerError::UnknownContract(id))
    }

    pub fn consortium(&self, id: ConsortiumId) -> Result<&ConsortiumContract, LedgerError> {
        self.consortia
            .get(id as usize)
            .ok_or(LedgerError::UnknownContract(id))
    }

    /// The consortium a contract belongs to, if any.
    pub fn consortium_of(&self, contract: ContractId) -> Option<&ConsortiumContract> {
        self.consortia
            .iter()
            .find(|c| c.main == contract || c.aux.contains(&contract))
    }

    fn tick(&mut self, now: u64) -> Result<(), LedgerError> {
        if now < self.last_time {
            return Err(LedgerError::ClockWentBackwards {
                now,
                last: self.last_time,
            });
        }
        self.last_time = now;
        Ok(())
    }

    fn new_contract(
        &mut self,
        evaluator: Option<Address>,
        trainers: Option<Vec<Address>>,
        genesis: Cid,
        round_duration: u64,
        now: u64,
    ) -> ContractId {
        let id = self.contracts.len() as ContractId;
        self.contracts.push(CrowdsourceContract {
            id,
            evaluator,
            trainers,
            genesis,
            round_duration,
            deployed_at: now,
            updates: Vec::new(),
            training_finished: false,
            finished_at: None,
            evaluation: None,
        });
        id
    }

    pub fn deploy_crowdsource(
        &mut self,
        evaluator: Address,
        genesis: Cid,
        round_duration: u64,
        now: u64,
    ) -> Result<ContractId, LedgerError> {
        if round_duration == 0 {
            return Err(LedgerError::ZeroDuration);
        }
        self.tick(now)?;
        let contract = self.new_contract(Some(evaluator), None, genesis, round_duration, now);
        self.log.push(Tx::DeployCrowdsource {
            contract,
            evaluator,
            genesis,
            round_duration,
            at: now,
        });
        Ok(contract)
    }

    /// Deploys `N` auxiliary contracts and one main contract sharing the
    /// same genesis model, duration and deployment time.
    pub fn deploy_consortium(
        &mut self,
        members: &[Address],
        genesis: Cid,
        round_duration: u64,
        now: u64,
    ) -> Result<ConsortiumId, LedgerError> {
        if members.len() < 2 {
            return Err(LedgerError::TooFewMembers(members.len()));
        }
        for (i, m) in members.iter().enumerate() {
            if members[..i].contains(m) {
                return Err(LedgerError::DuplicateMember(*m));
            }
        }
        if round_duration == 0 {
            return Err(LedgerError::ZeroDuration);
        }
        self.tick(now)?;
        let aux: Vec<ContractId> = members
            .iter()
            .map(|evaluator| {
                let trainers = members
                    .iter()
                    .filter(|m| *m != evaluator)
                    .copied()
                    .collect();
                self.new_contract(
                    Some(*evaluator),
                    Some(trainers),
                    genesis,
                    round_duration,
                    now,
                )
            })
            .collect();
        let main = self.new_contract(None, Some(members.to_vec()), genesis, round_duration, now);
        let consortium = self.consortia.len() as ConsortiumId;
        self.consortia.push(ConsortiumContract {
            id: consortium,
            members: members.to_vec(),
            aux: aux.clone(),
            main,
        });
        self.log.push(Tx::DeployConsortium {
            consortium,
            members: members.to_vec(),
            aux,
            main,
            genesis,
            round_duration,
            at: now,
        });
        Ok(consortium)
    }

    pub fn submit_update(
        &mut self,
        contract: ContractId,
        author: Address,
        cid: Cid,
        now: u64,
    ) -> Result<u64, LedgerError> {
        let c = self.contract(contract)?;
        if c.training_finished {
            return Err(LedgerError::TrainingFinished(contract));
        }
        c.may_train(&author)?;
        let round = c.round_at(now)?;
        if c.updates
            .iter()
            .any(|u| u.author == author && u.round == round)
        {
            return Err(LedgerError::DuplicateSubmissionInRound { author, round });
        }
        self.tick(now)?;
        let c = self.contract_mut(contract)?;
        let update = c.updates.len() as u64;
        c.updates.push(UpdateRecord {
            id: update,
            round,
            author,
            cid,
            submitted_at: now,
            tokens: None,
        });
        self.log.push(Tx::Submit {
            contract,
            update,
            round,
            author,
            cid,
            at: now,
        });
        Ok(update)
    }

    /// Closes training. The evaluator closes its own contract; a contract
    /// without evaluator may be closed by any of its trainers.
    pub fn finish_training(
        &mut self,
        contract: ContractId,
        caller: Address,
        now: u64,
    ) -> Result<(), LedgerError> {
        let c = self.contract(contract)?;
        let allowed = match (&c.evaluator, &c.trainers) {
            (Some(e), _) => *e == caller,
            (None, Some(t)) => t.contains(&caller),
            (None, None) => false,
        };
        if !allowed {
            return Err(LedgerError::NotEvaluator);
        }
        if c.training_finished {
            return Err(LedgerError::TrainingFinished(contract));
        }
        c.round_at(now)?;
        self.tick(now)?;
        let c = self.contract_mut(contract)?;
        c.training_finished = true;
        c.finished_at = Some(now);
        self.log.push(Tx::FinishTraining {
            contract,
            caller,
            at: now,
        });
        Ok(())
    }

    /// Records which holdout the evaluator scores against, once.
    pub fn commit_evaluation(
        &mut self,
        contract: ContractId,
        caller: Address,
        holdout: Cid,
        token_scale: f64,
        now: u64,
    ) -> Result<(), LedgerError> {
        let c = self.contract(contract)?;
        if c.evaluator != Some(caller) {
            return Err(LedgerError::NotEvaluator);
        }
        if !c.training_finished {
            return Err(LedgerError::TrainingNotFinished(contract));
        }
        if c.evaluation.is_some() {
            return Err(LedgerError::EvaluationAlreadyCommitted(contract));
        }
        self.tick(now)?;
        self.contract_mut(contract)?.evaluation = Some(EvaluationCommit {
            holdout,
            token_scale,
        });
        self.log.push(Tx::CommitEvaluation {
            contract,
            caller,
            holdout,
            token_scale,
            at: now,
        });
        Ok(())
    }

    pub fn set_tokens(
        &mut self,
        contract: ContractId,
        caller: Address,
        update: u64,
        tokens: u64,
        now: u64,
    ) -> Result<(), LedgerError> {
        let c = self.contract(contract)?;
        if c.evaluator != Some(caller) {
            return Err(LedgerError::NotEvaluator);
        }
        let record = c
            .updates
            .get(update as usize)
            .ok_or(LedgerError::UnknownUpdate(update))?;
        if record.tokens.is_some() {
            return Err(LedgerError::TokensAlreadySet(update));
        }
        self.tick(now)?;
        self.contract_mut(contract)?.updates[update as usize].tokens = Some(tokens);
        self.log.push(Tx::SetTokens {
            contract,
            caller,
            update,
            tokens,
            at: now,
        });
        Ok(())
    }

    pub fn token_balance(&self, contract: ContractId, addr: &Address) -> Result<u64, LedgerError> {
        Ok(self.contract(contract)?.token_balance(addr))
    }

    pub fn total_tokens(&self, contract: ContractId) -> Result<u64, LedgerError> {
        Ok(self.contract(contract)?.total_tokens())
    }

    pub fn share(&self, contract: ContractId, addr: &Address) -> Result<f64, LedgerError> {
        self.contract(contract)?.share(addr)
    }

    /// Applies one logged transaction through the same entry points live
    /// calls use, checking that derived ids and rounds match the record.
    pub fn apply(&mut self, tx: &Tx) -> Result<(), String> {
        let mismatch = |what: &str, logged: u64, derived: u64| {
            Err(format!(
                "logged {what} {logged} but ledger derived {derived}"
            ))
        };
        match tx {
            Tx::DeployCrowdsource {
                contract,
                evaluator,
                genesis,
                round_duration,
                at,
            } => {
                let id = self
                    .deploy_crowdsource(*evaluator, *genesis, *round_duration, *at)
                    .map_err(|e| e.to_string())?;
                if id != *contract {
                    return mismatch("contract id", *contract as u64, id as u64);
                }
            }
            Tx::DeployConsortium {
                consortium,
                members,
                aux,
                main,
                genesis,
                round_duration,
                at,
            } => {
                let id = self
                    .deploy_consortium(members, *genesis, *round_duration, *at)
                    .map_err(|e| e.to_string())?;
                let c = &self.consortia[id as usize];
                if id != *consortium || c.aux != *aux || c.main != *main {
                    return Err(format!(
                        "consortium layout differs from log (id {id}, aux {:?}, main {})",
                        c.aux, c.main
                    ));
                }
            }
            Tx::Submit {
                contract,
                update,
                round,
                author,
                cid,
                at,
            } => {
                let id = self
                    .submit_update(*contract, *author, *cid, *at)
                    .map_err(|e| e.to_string())?;
                if id != *update {
                    return mismatch("update id", *update, id);
                }
                let derived = self.contracts[*contract as usize].updates[id as usize].round;
                if derived != *round {
                    return mismatch("round", *round, derived);
                }
            }
            Tx::FinishTraining {
                contract,
                caller,
                at,
            } => self
                .finish_training(*contract, *caller, *at)
                .map_err(|e| e.to_string())?,
            Tx::CommitEvaluation {
                contract,
                caller,
                holdout,
                token_scale,
                at,
            } => self
                .commit_evaluation(*contract, *caller, *holdout, *token_scale, *at)
                .map_err(|e| e.to_string())?,
            Tx::SetTokens {
                contract,
                caller,
                update,
                tokens,
                at,
            } => self
                .set_tokens(*contract, *caller, *update, *tokens, *at)
                .map_err(|e| e.to_string())?,
        }
        Ok(())
    }

    /// Folds a transaction log into a fresh ledger.
    pub fn replay(log: &[Tx]) -> Result<Ledger, ReplayMismatch> {
        let mut ledger = Ledger::new();
        for (index, tx) in log.iter().enumerate() {
            ledger
                .apply(tx)
                .map_err(|reason| ReplayMismatch { index, reason })?;
        }
        Ok(ledger)
    }

    /// One JSON object per line, in application order.
    pub fn export_log(&self) -> String {
        let mut out = String::new();
        for tx in &self.log {
            out.push_str(&serde_json::to_string(tx).expect("transactions serialize"));
            out.push('\n');
        }
        out
    }
}

/// Parses the line-delimited log written by [`Ledger::export_log`].
pub fn parse_log(text: &str) -> Result<Vec<Tx>, ReplayMismatch> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(index, line)| {
            serde_json::from_str(line).map_err(|e| ReplayMismatch {
                index,
                reason: format!("unparseable record: {e}"),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alice() -> Address {
        Address::derive("alice")
    }
    fn bob() -> Address {
        Address::derive("bob")
    }
    fn carol() -> Address {
        Address::derive("carol")
    }
    fn genesis() -> Cid {
        Cid::of(b"genesis")
    }

    fn deployed(at: u64, duration: u64) -> (Ledger, ContractId) {
        let mut l = Ledger::new();
        let c = l
            .deploy_crowdsource(alice(), genesis(), duration, at)
            .unwrap();
        (l, c)
    }

    #[test]
    fn round_boundaries() {
        let (l, c) = deployed(100, 60);
        let c = l.contract(c).unwrap();
        assert_eq!(c.round_at(100), Ok(1));
        assert_eq!(c.round_at(159), Ok(1));
        assert_eq!(c.round_at(160), Ok(2));
        assert_eq!(
            c.round_at(99),
            Err(LedgerError::PreGenesis {
                now: 99,
                deployed_at: 100
            })
        );
    }

    #[test]
    fn zero_duration_is_rejected() {
        assert_eq!(
            Ledger::new().deploy_crowdsource(alice(), genesis(), 0, 0),
            Err(LedgerError::ZeroDuration)
        );
    }

    #[test]
    fn submissions_are_recorded_per_round() {
        let (mut l, c) = deployed(0, 10);
        let id = l.submit_update(c, bob(), Cid::of(b"b2"), 15).unwrap();
        assert_eq!(l.contract(c).unwrap().updates[id as usize].round, 2);
        assert_eq!(
            l.submit_update(c, bob(), Cid::of(b"b2'"), 19),
            Err(LedgerError::DuplicateSubmissionInRound {
                author: bob(),
                round: 2
            })
        );
        assert_eq!(
            l.submit_update(c, alice(), Cid::of(b"a"), 19),
            Err(LedgerError::EvaluatorMayNotTrain)
        );
        // Skipping a round and rejoining is allowed.
        l.submit_update(c, bob(), Cid::of(b"b4"), 35).unwrap();
    }

    #[test]
    fn submissions_after_finish_are_rejected() {
        let (mut l, c) = deployed(0, 10);
        l.finish_training(c, alice(), 50).unwrap();
        assert_eq!(
            l.submit_update(c, bob(), Cid::of(b"late"), 51),
            Err(LedgerError::TrainingFinished(c))
        );
        assert_eq!(l.contract(c).unwrap().completed_rounds(), 5);
    }

    #[test]
    fn clock_cannot_run_backwards() {
        let (mut l, c) = deployed(0, 10);
        l.submit_update(c, bob(), Cid::of(b"b"), 8).unwrap();
        assert_eq!(
            l.submit_update(c, carol(), Cid::of(b"c"), 7),
            Err(LedgerError::ClockWentBackwards { now: 7, last: 8 })
        );
    }

    #[test]
    fn round_listing_is_address_sorted_regardless_of_arrival() {
        let authors = [carol(), bob(), Address::derive("dave")];
        let mut listings = Vec::new();
        for order in [[0, 1, 2], [2, 0, 1], [1, 2, 0]] {
            let (mut l, c) = deployed(0, 10);
            for (t, &i) in order.iter().enumerate() {
                let a = authors[i];
                l.submit_update(c, a, Cid::of(&a.to_hex().into_bytes()), t as u64)
                    .unwrap();
            }
            let listed: Vec<(Address, Cid)> = l
                .contract(c)
                .unwrap()
                .updates_in_round(1)
                .into_iter()
                .map(|u| (u.author, u.cid))
                .collect();
            assert!(listed.windows(2).all(|w| w[0].0 < w[1].0));
            listings.push(listed);
        }
        assert!(listings.windows(2).all(|w| w[0] == w[1]));
        let (l, c) = deployed(0, 10);
        assert!(l.contract(c).unwrap().updates_in_round(3).is_empty());
    }

    #[test]
    fn token_assignment_rules() {
        let (mut l, c) = deployed(0, 10);
        let ub = l.submit_update(c, bob(), Cid::of(b"b"), 1).unwrap();
        let uc = l.submit_update(c, carol(), Cid::of(b"c"), 2).unwrap();
        assert_eq!(l.share(c, &bob()), Err(LedgerError::NoTokens));
        assert_eq!(
            l.set_tokens(c, bob(), ub, 5, 3),
            Err(LedgerError::NotEvaluator)
        );
        assert_eq!(
            l.set_tokens(c, alice(), 9, 5, 3),
            Err(LedgerError::UnknownUpdate(9))
        );
        l.set_tokens(c, alice(), ub, 300, 3).unwrap();
        assert_eq!(l.token_balance(c, &bob()), Ok(300));
        assert_eq!(
            l.set_tokens(c, alice(), ub, 1, 4),
            Err(LedgerError::TokensAlreadySet(ub))
        );
        l.set_tokens(c, alice(), uc, 100, 4).unwrap();
        assert_eq!(l.share(c, &bob()), Ok(0.75));
        assert_eq!(l.total_tokens(c), Ok(400));
    }

    #[test]
    fn consortium_layout() {
        let members = [alice(), bob(), carol()];
        let mut l = Ledger::new();
        let id = l.deploy_consortium(&members, genesis(), 10, 0).unwrap();
        let cons = l.consortium(id).unwrap().clone();
        assert_eq!(l.contracts().len(), 4);
        assert_eq!(cons.aux.len(), 3);
        for (k, &aux) in cons.aux.iter().enumerate() {
            let c = l.contract(aux).unwrap();
            assert_eq!(c.evaluator, Some(members[k]));
            assert_eq!(c.trainers.as_ref().unwrap().len(), 2);
        }
        assert_eq!(l.contract(cons.main).unwrap().evaluator, None);
        for m in &members {
            let trains = cons.training_contracts(m);
            assert_eq!(trains.len(), 3);
            let evaluates: Vec<_> = cons
                .aux
                .iter()
                .filter(|a| l.contract(**a).unwrap().evaluator == Some(*m))
                .collect();
            assert_eq!(evaluates.len(), 1);
            assert!(!trains.contains(evaluates[0]));
        }
        assert_eq!(
            l.submit_update(cons.aux[0], Address::derive("outsider"), Cid::of(b"x"), 1),
            Err(LedgerError::NotATrainer {
                contract: cons.aux[0],
                author: Address::derive("outsider")
            })
        );
        assert_eq!(
            l.set_tokens(cons.main, alice(), 0, 1, 1),
            Err(LedgerError::NotEvaluator)
        );
    }

    #[test]
    fn two_member_consortium_has_single_trainer_aux_contracts() {
        let mut l = Ledger::new();
        let id = l
            .deploy_consortium(&[alice(), bob()], genesis(), 10, 0)
            .unwrap();
        let cons = l.consortium(id).unwrap();
        assert_eq!(l.contracts().len(), 3);
        assert_eq!(l.contract(cons.aux[0]).unwrap().trainers, Some(vec![bob()]));
        assert_eq!(
            l.contract(cons.aux[1]).unwrap().trainers,
            Some(vec![alice()])
        );
    }

    #[test]
    fn consortium_rejects_bad_member_lists() {
        let mut l = Ledger::new();
        assert_eq!(
            l.deploy_consortium(&[alice()], genesis(), 10, 0),
            Err(LedgerError::TooFewMembers(1))
        );
        assert_eq!(
            l.deploy_consortium(&[alice(), bob(), alice()], genesis(), 10, 0),
            Err(LedgerError::DuplicateMember(alice()))
        );
    }

    #[test]
    fn replay_rebuilds_identical_state() {
        let (mut l, c) = deployed(0, 10);
        let u = l.submit_update(c, bob(), Cid::of(b"b"), 1).unwrap();
        l.submit_update(c, carol(), Cid::of(b"c"), 12).unwrap();
        l.finish_training(c, alice(), 20).unwrap();
        l.commit_evaluation(c, alice(), Cid::of(b"h"), 1e6, 20)
            .unwrap();
        l.set_tokens(c, alice(), u, 7, 21).unwrap();
        l.deploy_consortium(&[bob(), carol()], genesis(), 5, 22)
            .unwrap();

        let parsed = parse_log(&l.export_log()).unwrap();
        assert_eq!(parsed, l.log());
        assert_eq!(Ledger::replay(&parsed).unwrap(), l);
    }

    #[test]
    fn replay_flags_tampered_round() {
        let (mut l, c) = deployed(0, 10);
        l.submit_update(c, bob(), Cid::of(b"b"), 1).unwrap();
        let mut log = l.log().to_vec();
        if let Tx::Submit { round, .. } = &mut log[1] {
            *round = 3;
        }
        let err = Ledger::replay(&log).unwrap_err();
        assert_eq!(err.index, 1);
    }

    #[test]
    fn sim_clock_is_monotone() {
        let mut clock = SimClock::starting_at(10);
        assert_eq!(clock.advance_to(5), 10);
        assert_eq!(clock.advance_by(7), 17);
        assert_eq!(clock.now(), 17);
    }
}
