//! Experiment configuration: a flat key-value file format plus validation.
//!
//! Every key can also be set from the command line; the file only exists so
//! runs are scriptable and reproducible from a single artifact.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::clustering::{Algorithm, UpdateType};
use crate::dataset::Scheme;
use crate::federation::{shuffle_seed, FedConfig};
use crate::model::TrainConfig;
use crate::transport::{DEFAULT_PORT, PROTOCOL_VERSION};

#[derive(Debug, Error)]
#[error("config error: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sim,
    Server,
    Client,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "sim" => Some(Mode::Sim),
            "server" => Some(Mode::Server),
            "client" => Some(Mode::Client),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Sim => "sim",
            Mode::Server => "server",
            Mode::Client => "client",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub dataset_dir: PathBuf,
    pub scheme: Scheme,
    pub output: PathBuf,
    pub server_addr: String,
    pub port: u16,
    pub client_id: Option<u16>,
    pub protocol_version: u8,
    pub fed: FedConfig,
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub timeout_secs: u64,
    pub bytes_per_param: u32,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Sim,
            dataset_dir: PathBuf::from("data"),
            scheme: Scheme::Set2,
            output: PathBuf::from("metrics.csv"),
            server_addr: format!("127.0.0.1:{DEFAULT_PORT}"),
            port: DEFAULT_PORT,
            client_id: None,
            protocol_version: PROTOCOL_VERSION,
            fed: FedConfig {
                num_clients: 10,
                rounds: 50,
                tau: 0.5,
                clusters: 5,
                start_round: 10,
                update_type: UpdateType::Wbg,
                algorithm: Algorithm::Spectral,
                sigma: None,
                min_one_rep: false,
                seed: 1,
            },
            epochs: 1,
            batch_size: 32,
            learning_rate: 0.01,
            timeout_secs: 120,
            bytes_per_param: 4,
        }
    }
}

impl ExperimentConfig {
    /// Local-training settings for one client in one round; the shuffle seed
    /// is derived from the shared master seed, so simulation and deployed
    /// clients draw identical batch orders.
    pub fn train_config(&self, round: u32, client_id: u16) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: shuffle_seed(self.fed.seed, round, client_id),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.fed
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;
        if self.epochs == 0 {
            return Err(ConfigError("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ConfigError("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(ConfigError(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.bytes_per_param == 0 {
            return Err(ConfigError("bytes_per_param must be at least 1".into()));
        }
        if self.mode == Mode::Client {
            match self.client_id {
                None => return Err(ConfigError("client mode requires client_id".into())),
                Some(id) if id >= self.fed.num_clients => {
                    return Err(ConfigError(format!(
                        "client_id {id} is out of range for {} clients",
                        self.fed.num_clients
                    )))
                }
                Some(_) => {}
            }
            if self.server_addr.is_empty() {
                return Err(ConfigError("client mode requires server_addr".into()));
            }
        }
        Ok(())
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode = {}", self.mode.name());
        let _ = writeln!(s, "dataset_dir = {}", self.dataset_dir.display());
        let _ = writeln!(s, "scheme = {}", self.scheme.name());
        let _ = writeln!(s, "output = {}", self.output.display());
        let _ = writeln!(s, "server_addr = {}", self.server_addr);
        let _ = writeln!(s, "port = {}", self.port);
        if let Some(id) = self.client_id {
            let _ = writeln!(s, "client_id = {id}");
        }
        let _ = writeln!(s, "protocol_version = {}", self.protocol_version);
        let _ = writeln!(s, "num_clients = {}", self.fed.num_clients);
        let _ = writeln!(s, "rounds = {}", self.fed.rounds);
        let _ = writeln!(s, "tau = {}", self.fed.tau);
        let _ = writeln!(s, "clusters = {}", self.fed.clusters);
        let _ = writeln!(s, "start_round = {}", self.fed.start_round);
        let _ = writeln!(s, "update_type = {}", self.fed.update_type.name());
        let _ = writeln!(s, "algorithm = {}", self.fed.algorithm.name());
        match self.fed.sigma {
            Some(v) => {
                let _ = writeln!(s, "sigma = {v}");
            }
            None => {
                let _ = writeln!(s, "sigma = auto");
            }
        }
        let _ = writeln!(s, "min_one_rep = {}", self.fed.min_one_rep);
        let _ = writeln!(s, "seed = {}", self.fed.seed);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "timeout_secs = {}", self.timeout_secs);
        let _ = writeln!(s, "bytes_per_param = {}", self.bytes_per_param);
        s
    }

    pub fn write_file(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.to_file_string())
            .map_err(|e| ConfigError(format!("cannot write {}: {e}", path.display())))
    }

    pub fn apply_line(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value
                .parse()
                .map_err(|_| ConfigError(format!("invalid value {value:?} for key {key}")))
        }
        match key {
            "mode" => {
                self.mode = Mode::parse(value)
                    .ok_or_else(|| ConfigError(format!("mode must be sim, server, or client, got {value:?}")))?;
            }
            "dataset_dir" => self.dataset_dir = PathBuf::from(value),
            "scheme" => {
                self.scheme = Scheme::parse(value)
                    .ok_or_else(|| ConfigError(format!("scheme must be set1 or set2, got {value:?}")))?;
            }
            "output" => self.output = PathBuf::from(value),
            "server_addr" => self.server_addr = value.to_string(),
            "port" => self.port = parse(key, value)?,
            "client_id" => self.client_id = Some(parse(key, value)?),
            "protocol_version" => self.protocol_version = parse(key, value)?,
            "num_clients" => self.fed.num_clients = parse(key, value)?,
            "rounds" => self.fed.rounds = parse(key, value)?,
            "tau" => self.fed.tau = parse(key, value)?,
            "clusters" => self.fed.clusters = parse(key, value)?,
            "start_round" => self.fed.start_round = parse(key, value)?,
            "update_type" => {
                self.fed.update_type = UpdateType::parse(value).ok_or_else(|| {
                    ConfigError(format!("update_type must be ww, wbw, wg, or wbg, got {value:?}"))
                })?;
            }
            "algorithm" => {
                self.fed.algorithm = Algorithm::parse(value).ok_or_else(|| {
                    ConfigError(format!(
                        "algorithm must be kmeans, agglomerative, or spectral, got {value:?}"
                    ))
                })?;
            }
            "sigma" => {
                self.fed.sigma = if value == "auto" {
                    None
                } else {
                    Some(parse(key, value)?)
                };
            }
            "min_one_rep" => self.fed.min_one_rep = parse(key, value)?,
            "seed" => self.fed.seed = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "timeout_secs" => self.timeout_secs = parse(key, value)?,
            "bytes_per_param" => self.bytes_per_param = parse(key, value)?,
            other => return Err(ConfigError(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn from_file_string(text: &str) -> Result<Self, ConfigError> {
        let mut config = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1))
            })?;
            config.apply_line(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_file_string(&text)
    }
}
