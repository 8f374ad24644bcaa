use thiserror::Error;

use crate::cas::Cid;
use crate::ledger::{Address, ContractId};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("parameter vector has {actual} entries, architecture needs {expected}")]
    ParamCount { expected: usize, actual: usize },
    #[error("parameter {index} is not finite")]
    NonFinite { index: usize },
    #[error("model expects {model}-dimensional inputs, data has {data}")]
    DimensionMismatch { model: usize, data: usize },
    #[error("label {label} out of range for a {classes}-class model")]
    LabelOutOfRange { label: u8, classes: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged (non-finite loss or parameters)")]
    Diverged,
    #[error("malformed model encoding: {0}")]
    Malformed(String),
    #[error("truncated model encoding: {0}")]
    Truncated(String),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated IDX data: {0}")]
    Truncated(String),
    #[error("images file has {images} items but labels file has {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u8, classes: u8 },
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
}

#[derive(Debug, Error)]
pub enum CasError {
    #[error("refusing to store an empty payload")]
    EmptyPayload,
    #[error("no content stored under {0}")]
    NotFound(Cid),
    #[error("stored bytes do not hash to {0}")]
    IntegrityFailure(Cid),
    #[error("invalid content id {0:?}")]
    InvalidCid(String),
    #[error("store i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("round duration must be positive")]
    ZeroDuration,
    #[error("time {now} precedes contract deployment at {deployed_at}")]
    PreGenesis { now: u64, deployed_at: u64 },
    #[error("clock moved backwards: {now} < {last}")]
    ClockWentBackwards { now: u64, last: u64 },
    #[error("unknown contract {0}")]
    UnknownContract(ContractId),
    #[error("the evaluator may not submit training updates")]
    EvaluatorMayNotTrain,
    #[error("{author} is not a trainer on contract {contract}")]
    NotATrainer {
        contract: ContractId,
        author: Address,
    },
    #[error("{author} already submitted an update in round {round}")]
    DuplicateSubmissionInRound { author: Address, round: u64 },
    #[error("training has finished on contract {0}")]
    TrainingFinished(ContractId),
    #[error("training has not finished on contract {0}")]
    TrainingNotFinished(ContractId),
    #[error("caller is not the contract evaluator")]
    NotEvaluator,
    #[error("unknown update {0}")]
    UnknownUpdate(u64),
    #[error("tokens already set on update {0}")]
    TokensAlreadySet(u64),
    #[error("contract {0} already has a committed evaluation")]
    EvaluationAlreadyCommitted(ContractId),
    #[error("no tokens have been assigned, shares are undefined")]
    NoTokens,
    #[error("round numbers start at 1")]
    RoundZero,
    #[error("consortium needs at least 2 members, got {0}")]
    TooFewMembers(usize),
    #[error("duplicate consortium member {0}")]
    DuplicateMember(Address),
}

/// Crate-wide error for operations that cross module boundaries.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Cas(#[from] CasError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error("transaction log: {0}")]
    Log(String),
    #[error("contract {contract} has no recorded holdout")]
    MissingHoldout { contract: ContractId },
    /// Carries its cause in the message, since replay reports it as text.
    #[error("update {update} references {cid}, which failed to load: {cause}")]
    UpdateLoad {
        update: u64,
        cid: Cid,
        cause: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
