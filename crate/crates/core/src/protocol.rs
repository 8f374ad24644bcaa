//! Round-loop orchestration of the Crowdsource and Consortium protocols.
//!
//! The orchestrator owns the logical clock. Within a round every trainer
//! reads the ledger and store as they stood at the round boundary, trains
//! independently, and the resulting updates are stored and submitted in a
//! fixed order. All cross-client effects flow through the ledger and the
//! content store, so runs are reproducible from the config alone.

use crate::cas::{Cid, ContentStore};
use crate::contributivity::{consortium_scores, evaluate_and_assign, global_model_at, load_model};
use crate::data::{flip_labels, Dataset};
use crate::error::{Error, Result};
use crate::exec::par_map;
use crate::ledger::{Address, ContractId, Ledger, SimClock};
use crate::model::{init_model, serialize, train_local, Architecture, ModelParams, TrainingConfig};
use crate::report::ContributivityReport;
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Behavior {
    Honest,
    /// Corrupts a proportion `p` of its own labels once, before training,
    /// then follows the protocol honestly.
    LabelFlipper {
        p: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientSpec {
    pub address: Address,
    pub dataset: Dataset,
    pub behavior: Behavior,
}

impl ClientSpec {
    pub fn honest(address: Address, dataset: Dataset) -> Self {
        Self {
            address,
            dataset,
            behavior: Behavior::Honest,
        }
    }

    /// The data this client actually trains (and, in a consortium,
    /// evaluates) with.
    pub fn training_data(&self) -> Result<Dataset> {
        match self.behavior {
            Behavior::Honest => Ok(self.dataset.clone()),
            Behavior::LabelFlipper { p, seed } => Ok(flip_labels(&self.dataset, p, seed)?),
        }
    }
}

pub fn make_attacker(address: Address, dataset: Dataset, p: f64, seed: u64) -> Result<ClientSpec> {
    if !(0.0..=1.0).contains(&p) {
        return Err(crate::error::DataError::InvalidProbability(p).into());
    }
    Ok(ClientSpec {
        address,
        dataset,
        behavior: Behavior::LabelFlipper { p, seed },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Crowdsource,
    Consortium,
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "crowdsource" => Ok(Protocol::Crowdsource),
            "consortium" => Ok(Protocol::Consortium),
            other => Err(format!(
                "unknown protocol {other:?} (expected crowdsource or consortium)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub arch: Architecture,
    pub clients: Vec<ClientSpec>,
    pub training: TrainingConfig,
    pub round_duration: u64,
    pub token_scale: f64,
    /// The evaluator's holdout. Required by Crowdsource, ignored by Consortium.
    pub holdout: Option<Dataset>,
}

/// Address of the Crowdsource evaluator.
pub fn evaluator_address() -> Address {
    Address::derive("evaluator")
}

/// Seed for one client's local training on one contract in one round.
pub fn round_seed(master: u64, client: &Address, contract: ContractId, round: u64) -> u64 {
    derive_seed(&[
        b"round",
        &master.to_le_bytes(),
        client.to_hex().as_bytes(),
        &contract.to_le_bytes(),
        &round.to_le_bytes(),
    ])
}

#[derive(Debug)]
pub struct ExperimentRun {
    pub report: ContributivityReport,
    pub ledger: Ledger,
    pub store: ContentStore,
    /// Global model after the last round (the main model for a consortium).
    pub final_model: Cid,
}

impl ExperimentRun {
    pub fn final_model(&self) -> Result<ModelParams> {
        load_model(&self.store, &self.final_model)
    }
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        self.training.validate()?;
        if self.clients.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 clients, got {}",
                self.clients.len()
            )));
        }
        for (i, c) in self.clients.iter().enumerate() {
            if self.clients[..i].iter().any(|o| o.address == c.address) {
                return Err(Error::Config(format!(
                    "duplicate client address {}",
                    c.address
                )));
            }
            if c.dataset.is_empty() {
                return Err(Error::Config(format!("client {} has no data", c.address)));
            }
        }
        if self.round_duration == 0 {
            return Err(crate::error::LedgerError::ZeroDuration.into());
        }
        if !(self.token_scale > 0.0 && self.token_scale.is_finite()) {
            return Err(Error::Config(format!(
                "token scale {} must be positive",
                self.token_scale
            )));
        }
        Ok(())
    }
}

struct Trained {
    contract: ContractId,
    author: Address,
    started_from: Cid,
    model: ModelParams,
}

/// One training job per `(contract, client index)`, all starting from the
/// ledger state at the round boundary. Every trainer on a contract computes
/// the aggregate itself; they must agree.
fn train_round(
    ledger: &Ledger,
    store: &ContentStore,
    jobs: &[(ContractId, usize)],
    addresses: &[Address],
    data: &[Dataset],
    training: &TrainingConfig,
    round: u64,
) -> Result<Vec<Trained>> {
    let trained = par_map(jobs, |&(contract, client)| -> Result<Trained> {
        let c = ledger.contract(contract)?;
        let global = global_model_at(c, round, store)?;
        let started_from = Cid::of(&serialize(&global));
        let seed = round_seed(training.seed, &addresses[client], contract, round);
        let model = train_local(&global, &data[client], training, seed)?;
        Ok(Trained {
            contract,
            author: addresses[client],
            started_from,
            model,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    for t in &trained {
        let first = trained
            .iter()
            .find(|o| o.contract == t.contract)
            .expect("t itself matches");
        if first.started_from != t.started_from {
            return Err(Error::Config(format!(
                "trainers disagree on the round-{round} aggregate of contract {}",
                t.contract
            )));
        }
    }
    Ok(trained)
}

fn submit_all(
    ledger: &mut Ledger,
    store: &ContentStore,
    clock: &mut SimClock,
    trained: Vec<Trained>,
    round_start: u64,
    round_duration: u64,
) -> Result<()> {
    for (k, t) in trained.into_iter().enumerate() {
        let now = clock.advance_to(round_start + (k as u64).min(round_duration - 1));
        let cid = store.put(&serialize(&t.model))?;
        ledger.submit_update(t.contract, t.author, cid, now)?;
    }
    Ok(())
}

fn genesis(cfg: &ExperimentConfig, store: &ContentStore) -> Result<Cid> {
    let model = init_model(
        &cfg.arch,
        derive_seed(&[b"genesis", &cfg.training.seed.to_le_bytes()]),
    );
    Ok(store.put(&serialize(&model))?)
}

fn store_final(
    ledger: &Ledger,
    store: &ContentStore,
    contract: ContractId,
    rounds: u64,
) -> Result<Cid> {
    let model = global_model_at(ledger.contract(contract)?, rounds + 1, store)?;
    Ok(store.put(&serialize(&model))?)
}

/// Crowdsource protocol: one evaluator-owned contract; every client trains
/// each round; afterwards the evaluator scores all updates on its holdout.
pub fn run_crowdsource(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    cfg.validate()?;
    let holdout = cfg
        .holdout
        .as_ref()
        .filter(|h| !h.is_empty())
        .ok_or_else(|| Error::Config("crowdsource needs a non-empty holdout".into()))?;
    let evaluator = evaluator_address();
    if cfg.clients.iter().any(|c| c.address == evaluator) {
        return Err(Error::Config(
            "the evaluator cannot also be a trainer".into(),
        ));
    }

    let store = ContentStore::in_memory();
    let mut ledger = Ledger::new();
    let mut clock = SimClock::starting_at(0);
    let addresses: Vec<Address> = cfg.clients.iter().map(|c| c.address).collect();
    let data = cfg
        .clients
        .iter()
        .map(ClientSpec::training_data)
        .collect::<Result<Vec<_>>>()?;

    let genesis = genesis(cfg, &store)?;
    let contract =
        ledger.deploy_crowdsource(evaluator, genesis, cfg.round_duration, clock.now())?;
    let jobs: Vec<(ContractId, usize)> = (0..cfg.clients.len()).map(|i| (contract, i)).collect();
    let rounds = cfg.training.rounds as u64;

    for round in 1..=rounds {
        let start = clock.advance_to(ledger.contract(contract)?.round_start(round));
        let trained = train_round(
            &ledger,
            &store,
            &jobs,
            &addresses,
            &data,
            &cfg.training,
            round,
        )?;
        submit_all(
            &mut ledger,
            &store,
            &mut clock,
            trained,
            start,
            cfg.round_duration,
        )?;
    }

    let end = clock.advance_to(ledger.contract(contract)?.round_start(rounds + 1));
    ledger.finish_training(contract, evaluator, end)?;
    let report = evaluate_and_assign(
        &mut ledger,
        contract,
        evaluator,
        holdout,
        &store,
        cfg.token_scale,
        end,
    )?;
    let final_model = store_final(&ledger, &store, contract, rounds)?;
    Ok(ExperimentRun {
        report: ContributivityReport {
            contracts: vec![report],
        },
        ledger,
        store,
        final_model,
    })
}

/// Consortium protocol: `N` auxiliary contracts, each evaluated by one
/// member on its own data and trained by the others, plus a main contract
/// trained by everyone and scored from the auxiliaries.
pub fn run_consortium(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    cfg.validate()?;
    let store = ContentStore::in_memory();
    let mut ledger = Ledger::new();
    let mut clock = SimClock::starting_at(0);
    let addresses: Vec<Address> = cfg.clients.iter().map(|c| c.address).collect();
    let data = cfg
        .clients
        .iter()
        .map(ClientSpec::training_data)
        .collect::<Result<Vec<_>>>()?;

    let genesis = genesis(cfg, &store)?;
    let consortium =
        ledger.deploy_consortium(&addresses, genesis, cfg.round_duration, clock.now())?;
    let cons = ledger.consortium(consortium)?.clone();
    let jobs: Vec<(ContractId, usize)> = addresses
        .iter()
        .enumerate()
        .flat_map(|(i, a)| cons.training_contracts(a).into_iter().map(move |c| (c, i)))
        .collect();
    let rounds = cfg.training.rounds as u64;

    for round in 1..=rounds {
        let start = clock.advance_to(ledger.contract(cons.main)?.round_start(round));
        let trained = train_round(
            &ledger,
            &store,
            &jobs,
            &addresses,
            &data,
            &cfg.training,
            round,
        )?;
        submit_all(
            &mut ledger,
            &store,
            &mut clock,
            trained,
            start,
            cfg.round_duration,
        )?;
    }

    let end = clock.advance_to(ledger.contract(cons.main)?.round_start(rounds + 1));
    for (k, &aux) in cons.aux.iter().enumerate() {
        ledger.finish_training(aux, addresses[k], end)?;
    }
    ledger.finish_training(cons.main, addresses[0], end)?;

    let mut reports = Vec::with_capacity(cons.aux.len() + 1);
    for (k, &aux) in cons.aux.iter().enumerate() {
        reports.push(evaluate_and_assign(
            &mut ledger,
            aux,
            addresses[k],
            &data[k],
            &store,
            cfg.token_scale,
            end,
        )?);
    }
    reports.push(consortium_scores(&ledger, consortium, &reports)?);
    let final_model = store_final(&ledger, &store, cons.main, rounds)?;
    Ok(ExperimentRun {
        report: ContributivityReport { contracts: reports },
        ledger,
        store,
        final_model,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    match cfg.protocol {
        Protocol::Crowdsource => run_crowdsource(cfg),
        Protocol::Consortium => run_consortium(cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split, SplitSpec, SyntheticTask};

    fn small_config(protocol: Protocol, clients: usize) -> ExperimentConfig {
        let task = SyntheticTask::new(16, 4, 7);
        let train = task.sample(60 * clients, 1);
        let parts = split(&train, &SplitSpec::EqualRandom(clients), 2).unwrap();
        ExperimentConfig {
            protocol,
            arch: Architecture::new(vec![16, 8, 4]).unwrap(),
            clients: parts
                .into_iter()
                .enumerate()
                .map(|(i, d)| ClientSpec::honest(Address::derive(&format!("client-{i}")), d))
                .collect(),
            training: TrainingConfig {
                rounds: 3,
                batch_size: 8,
                learning_rate: 0.1,
                seed: 5,
                ..TrainingConfig::default()
            },
            round_duration: 60,
            token_scale: 1e6,
            holdout: Some(task.sample(80, 3)),
        }
    }

    #[test]
    fn crowdsource_schedule_and_log() {
        let cfg = small_config(Protocol::Crowdsource, 3);
        let run = run_crowdsource(&cfg).unwrap();
        let c = &run.ledger.contracts()[0];
        assert_eq!(c.updates.len(), 9);
        for u in &c.updates {
            let start = c.round_start(u.round);
            assert!(u.submitted_at >= start && u.submitted_at < start + c.round_duration);
        }
        assert!(c.updates.iter().all(|u| u.tokens.is_some()));
        assert_eq!(run.report.contracts.len(), 1);
        assert_eq!(run.report.outcome().unwrap().rounds.len(), 3);
    }

    #[test]
    fn crowdsource_requires_holdout_and_two_clients() {
        let mut cfg = small_config(Protocol::Crowdsource, 3);
        cfg.holdout = None;
        assert!(run_crowdsource(&cfg).is_err());
        let mut cfg = small_config(Protocol::Crowdsource, 3);
        cfg.clients.truncate(1);
        assert!(run_crowdsource(&cfg).is_err());
    }

    #[test]
    fn two_member_consortium_structure() {
        let cfg = small_config(Protocol::Consortium, 2);
        let run = run_consortium(&cfg).unwrap();
        assert_eq!(run.ledger.contracts().len(), 3);
        let cons = &run.ledger.consortia()[0];
        for (k, &aux) in cons.aux.iter().enumerate() {
            let c = run.ledger.contract(aux).unwrap();
            assert_eq!(c.evaluator, Some(cfg.clients[k].address));
            assert!(c
                .updates
                .iter()
                .all(|u| u.author == cfg.clients[1 - k].address));
        }
        assert_eq!(run.report.contracts.len(), 3);
    }

    #[test]
    fn consortium_member_trains_n_contracts_per_round() {
        let cfg = small_config(Protocol::Consortium, 3);
        let run = run_consortium(&cfg).unwrap();
        for client in &cfg.clients {
            let per_round = run
                .ledger
                .contracts()
                .iter()
                .flat_map(|c| c.updates.iter())
                .filter(|u| u.author == client.address && u.round == 1)
                .count();
            assert_eq!(per_round, 3);
        }
    }

    #[test]
    fn zero_flip_attacker_matches_honest_client() {
        let d = SyntheticTask::new(8, 4, 0).sample(30, 1);
        let a = Address::derive("x");
        let attacker = make_attacker(a, d.clone(), 0.0, 3).unwrap();
        assert_eq!(
            attacker.training_data().unwrap(),
            ClientSpec::honest(a, d.clone()).training_data().unwrap()
        );
        assert!(make_attacker(a, d, 1.2, 0).is_err());
    }
}
