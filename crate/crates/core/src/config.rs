//! Declarative run configuration (TOML).
//!
//! ```toml
//! protocol = "crowdsource"      # or "consortium"
//! data_dir = "data/mnist"       # optional, IDX files without .gz
//! seed = 1
//! rounds = 5
//! epochs = 1
//! batch_size = 32
//! learning_rate = 0.01
//! round_duration = 60           # logical seconds per round
//! token_scale = 1e6
//! subsample = 0.2               # optional fraction of the train split
//! hidden = [128]
//!
//! [[clients]]
//! ratio = 2                     # relative dataset size, default 1
//!
//! [[clients]]
//! flip = 0.3                    # label-flip proportion, default 0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::contributivity::DEFAULT_TOKEN_SCALE;
use crate::data::{split, subsample, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::ledger::Address;
use crate::model::{Architecture, TrainingConfig};
use crate::protocol::{make_attacker, ClientSpec, ExperimentConfig, Protocol};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientEntry {
    #[serde(default = "one")]
    pub ratio: u64,
    #[serde(default)]
    pub flip: f64,
}

fn one() -> u64 {
    1
}

impl Default for ClientEntry {
    fn default() -> Self {
        Self {
            ratio: 1,
            flip: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub protocol: Protocol,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    pub seed: u64,
    pub rounds: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub round_duration: u64,
    pub token_scale: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsample: Option<f64>,
    pub hidden: Vec<usize>,
    pub clients: Vec<ClientEntry>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainingConfig::default();
        Self {
            protocol: Protocol::Crowdsource,
            data_dir: None,
            seed: t.seed,
            rounds: t.rounds,
            epochs: t.epochs_per_round,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            round_duration: 60,
            token_scale: DEFAULT_TOKEN_SCALE,
            subsample: None,
            hidden: vec![128],
            clients: vec![ClientEntry::default(); 3],
        }
    }
}

/// Address of the `index`-th configured client.
pub fn client_address(index: usize) -> Address {
    Address::derive(&format!("client-{index}"))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            rounds: self.rounds,
            epochs_per_round: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
        }
    }

    fn split_spec(&self) -> SplitSpec {
        let ratios: Vec<u64> = self.clients.iter().map(|c| c.ratio).collect();
        if ratios.iter().all(|&r| r == ratios[0]) {
            SplitSpec::EqualRandom(ratios.len())
        } else {
            SplitSpec::RatioRandom(ratios)
        }
    }

    /// Builds the experiment from the train and test splits: subsample the
    /// train split, partition it over the clients, corrupt the flippers.
    /// The test split is the Crowdsource holdout.
    pub fn materialize(&self, train: &Dataset, test: &Dataset) -> Result<ExperimentConfig> {
        if self.clients.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 clients, got {}",
                self.clients.len()
            )));
        }
        let mut layers = vec![train.dim()];
        layers.extend(&self.hidden);
        layers.push(train.num_classes() as usize);
        let arch = Architecture::new(layers)?;

        let pool = match self.subsample {
            Some(f) => subsample(
                train,
                f,
                derive_seed(&[b"subsample", &self.seed.to_le_bytes()]),
            )?,
            None => train.clone(),
        };
        let parts = split(
            &pool,
            &self.split_spec(),
            derive_seed(&[b"split", &self.seed.to_le_bytes()]),
        )?;
        let clients = parts
            .into_iter()
            .zip(&self.clients)
            .enumerate()
            .map(|(i, (data, entry))| {
                let address = client_address(i);
                if entry.flip == 0.0 {
                    Ok(ClientSpec::honest(address, data))
                } else {
                    let seed = derive_seed(&[
                        b"flip",
                        &self.seed.to_le_bytes(),
                        &(i as u64).to_le_bytes(),
                    ]);
                    make_attacker(address, data, entry.flip, seed)
                }
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(ExperimentConfig {
            protocol: self.protocol,
            arch,
            clients,
            training: self.training(),
            round_duration: self.round_duration,
            token_scale: self.token_scale,
            holdout: match self.protocol {
                Protocol::Crowdsource => Some(test.clone()),
                Protocol::Consortium => None,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic;
    use crate::protocol::Behavior;

    #[test]
    fn parses_documented_example() {
        let text = r#"
            protocol = "consortium"
            seed = 9
            subsample = 0.5
            hidden = [16]

            [[clients]]
            ratio = 2

            [[clients]]
            flip = 0.3
        "#;
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.protocol, Protocol::Consortium);
        assert_eq!(cfg.rounds, 5);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(
            cfg.clients,
            vec![
                ClientEntry {
                    ratio: 2,
                    flip: 0.0
                },
                ClientEntry {
                    ratio: 1,
                    flip: 0.3
                },
            ]
        );
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(RunConfig::from_toml("roundz = 3").is_err());
    }

    #[test]
    fn materialize_splits_and_flips() {
        let train = synthetic(400, 12, 4, 1);
        let test = synthetic(50, 12, 4, 2);
        let cfg = RunConfig {
            subsample: Some(0.5),
            hidden: vec![6],
            clients: vec![
                ClientEntry {
                    ratio: 2,
                    flip: 0.0,
                },
                ClientEntry {
                    ratio: 1,
                    flip: 0.5,
                },
                ClientEntry {
                    ratio: 1,
                    flip: 0.0,
                },
            ],
            ..RunConfig::default()
        };
        let exp = cfg.materialize(&train, &test).unwrap();
        let sizes: Vec<usize> = exp.clients.iter().map(|c| c.dataset.len()).collect();
        assert_eq!(sizes, vec![100, 50, 50]);
        assert!(matches!(exp.clients[1].behavior, Behavior::LabelFlipper { p, .. } if p == 0.5));
        assert_eq!(exp.arch.layer_sizes(), &[12, 6, 4]);
        assert_eq!(exp.holdout.as_ref().map(Dataset::len), Some(50));
    }
}
