//! Experiment execution: the single-threaded simulator and the socket-based
//! server/client deployment. Both modes push every hand-off through the frame
//! codec, so a deployed run and a simulated run with the same seeds produce
//! byte-identical metrics.

use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::dataset::{
    self, load_samples, partition, test_partition, ClientDataset, DatasetError,
};
use crate::federation::{
    client_round, server_round, ClientUpload, FederationError, RoundDirective, ServerState,
};
use crate::metrics::{emit_csv, MetricsError, MetricsRecord};
use crate::model::ModelParams;
use crate::transport::{loopback, Connection, Message, ProtocolError, PROTOCOL_VERSION};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl RunError {
    /// Process exit code: 1 config/dataset, 2 protocol, 3 runtime abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Dataset(_) => 1,
            RunError::Protocol(_) => 2,
            RunError::Runtime(_) => 3,
        }
    }
}

impl From<ProtocolError> for RunError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Io(io) => RunError::Runtime(format!("connection failed: {io}")),
            other => RunError::Protocol(other.to_string()),
        }
    }
}

impl From<FederationError> for RunError {
    fn from(e: FederationError) -> Self {
        RunError::Runtime(e.to_string())
    }
}

impl From<MetricsError> for RunError {
    fn from(e: MetricsError) -> Self {
        RunError::Runtime(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub final_mean_accuracy: f64,
    /// Accumulated exact-group recovery rate; `None` when no round clustered.
    pub clustering_accuracy: Option<f64>,
    pub total_uploaded_params: u64,
    pub total_suppressed_params: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub records: Vec<MetricsRecord>,
    pub summary: RunSummary,
}

fn summarize(records: &[MetricsRecord]) -> RunSummary {
    let correct: u64 = records.iter().map(|r| u64::from(r.clusters_correct)).sum();
    let groups: u64 = records.iter().map(|r| u64::from(r.groups_total)).sum();
    RunSummary {
        final_mean_accuracy: records.last().map_or(0.0, |r| r.mean_accuracy),
        clustering_accuracy: (groups > 0).then(|| correct as f64 / groups as f64),
        total_uploaded_params: records.iter().map(|r| r.uploaded_params).sum(),
        total_suppressed_params: records.iter().map(|r| r.suppressed_params).sum(),
    }
}

fn load_splits(
    config: &ExperimentConfig,
) -> Result<(Vec<ClientDataset>, Vec<ClientDataset>), RunError> {
    let dir = &config.dataset_dir;
    let train = load_samples(
        &dir.join(dataset::TRAIN_IMAGES_FILE),
        &dir.join(dataset::TRAIN_LABELS_FILE),
    )?;
    let test = load_samples(
        &dir.join(dataset::TEST_IMAGES_FILE),
        &dir.join(dataset::TEST_LABELS_FILE),
    )?;
    let clients = partition(&train, config.scheme)?;
    let tests = test_partition(&test, config.scheme)?;
    if clients.len() != usize::from(config.fed.num_clients) {
        return Err(ConfigError(format!(
            "scheme {} yields {} clients but num_clients is {}",
            config.scheme.name(),
            clients.len(),
            config.fed.num_clients
        ))
        .into());
    }
    Ok((clients, tests))
}

fn unexpected(msg: &Message) -> RunError {
    RunError::Protocol(format!("unexpected message {msg:?}"))
}

/// Runs the full experiment in-process, one thread, clients in id order.
pub fn run_sim(config: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    config.validate()?;
    let (clients, tests) = load_splits(config)?;
    let cfg = &config.fed;

    let mut state = ServerState::new(cfg.seed);
    let mut directive = RoundDirective::all_active(1, cfg.num_clients);
    let mut records = Vec::with_capacity(cfg.rounds as usize);

    for round in 1..=cfg.rounds {
        // Broadcast through the codec so clients see the wire's f32 view.
        let broadcast = loopback(&Message::GlobalModel {
            round,
            params: state.global.clone(),
        })?;
        let global = match broadcast {
            Message::GlobalModel { params, .. } => params,
            other => return Err(unexpected(&other)),
        };
        let directive_msg = loopback(&Message::Directive(directive.clone()))?;
        let directive_rx = match directive_msg {
            Message::Directive(d) => d,
            other => return Err(unexpected(&other)),
        };

        let mut uploads: Vec<ClientUpload> = Vec::new();
        for data in &clients {
            let entry = directive_rx
                .entry(data.client_id)
                .ok_or_else(|| RunError::Runtime(format!("no directive entry for client {}", data.client_id)))?;
            let produced = client_round(
                &global,
                entry.active,
                data,
                &config.train_config(round, data.client_id),
                cfg.update_type,
            )?;
            if let Some(upload) = produced {
                let delivered = loopback(&Message::LocalUpdate {
                    client_id: upload.client_id,
                    num_samples: upload.num_samples,
                    params: upload.params,
                    update: upload.update,
                })?;
                match delivered {
                    Message::LocalUpdate {
                        client_id,
                        num_samples,
                        params,
                        update,
                    } => uploads.push(ClientUpload {
                        client_id,
                        num_samples,
                        params,
                        update,
                    }),
                    other => return Err(unexpected(&other)),
                }
            }
        }

        let (next_directive, record) = server_round(&mut state, cfg, &directive, &uploads, &tests)?;
        records.push(record);
        directive = next_directive;
    }

    emit_csv(&records, &config.output)?;
    let summary = summarize(&records);
    Ok(RunOutcome { records, summary })
}

/// Serves one full experiment over TCP: waits for every client to register,
/// drives the rounds, and writes the same CSV as simulation mode.
pub fn run_server(config: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    config.validate()?;
    let (_, tests) = load_splits(config)?;
    let cfg = &config.fed;
    let n = usize::from(cfg.num_clients);
    let timeout = Duration::from_secs(config.timeout_secs);

    let listener = TcpListener::bind(("0.0.0.0", config.port))
        .map_err(|e| RunError::Runtime(format!("cannot bind port {}: {e}", config.port)))?;
    listener
        .set_nonblocking(true)
        .map_err(|e| RunError::Runtime(e.to_string()))?;

    let mut connections: Vec<Option<Connection>> = (0..n).map(|_| None).collect();
    let deadline = Instant::now() + timeout;
    let mut registered = 0usize;
    while registered < n {
        if Instant::now() >= deadline {
            return Err(RunError::Runtime(format!(
                "registration timed out with {registered} of {n} clients"
            )));
        }
        match listener.accept() {
            Ok((stream, _)) => {
                stream
                    .set_nonblocking(false)
                    .map_err(|e| RunError::Runtime(e.to_string()))?;
                let mut conn = Connection::new(stream);
                let msg = match conn.recv_deadline(Instant::now() + Duration::from_secs(10))? {
                    Some(m) => m,
                    None => continue,
                };
                let (version, client_id, num_samples) = match msg {
                    Message::Register {
                        version,
                        client_id,
                        num_samples,
                    } => (version, client_id, num_samples),
                    other => return Err(unexpected(&other)),
                };
                let slot_free = usize::from(client_id) < n
                    && connections[usize::from(client_id)].is_none();
                let accepted = version == PROTOCOL_VERSION && slot_free && num_samples > 0;
                conn.send(&Message::RegisterAck {
                    version: PROTOCOL_VERSION,
                    accepted,
                })?;
                if accepted {
                    log::info!("client {client_id} registered with {num_samples} samples");
                    connections[usize::from(client_id)] = Some(conn);
                    registered += 1;
                } else {
                    log::warn!(
                        "rejected registration: client {client_id}, protocol version {version}"
                    );
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(20));
            }
            Err(e) => return Err(RunError::Runtime(format!("accept failed: {e}"))),
        }
    }

    let mut state = ServerState::new(cfg.seed);
    let mut directive = RoundDirective::all_active(1, cfg.num_clients);
    let mut records = Vec::with_capacity(cfg.rounds as usize);

    for round in 1..=cfg.rounds {
        let model_msg = Message::GlobalModel {
            round,
            params: state.global.clone(),
        };
        let directive_msg = Message::Directive(directive.clone());
        for conn in connections.iter_mut().flatten() {
            conn.send(&model_msg)?;
            conn.send(&directive_msg)?;
        }

        // Ordered drain: expected uploaders are polled in client-id order,
        // so arrival jitter never reaches the aggregation.
        let round_deadline = Instant::now() + timeout;
        let mut uploads: Vec<ClientUpload> = Vec::new();
        for entry in directive.entries.iter().filter(|e| e.active) {
            let conn = connections[usize::from(entry.client_id)]
                .as_mut()
                .expect("registered client");
            match conn.recv_deadline(round_deadline)? {
                Some(Message::LocalUpdate {
                    client_id,
                    num_samples,
                    params,
                    update,
                }) => {
                    conn.send(&Message::MetricsAck { round })?;
                    uploads.push(ClientUpload {
                        client_id,
                        num_samples,
                        params,
                        update,
                    });
                }
                Some(other) => return Err(unexpected(&other)),
                None => {
                    log::warn!("round {round}: client {} timed out, proceeding", entry.client_id);
                }
            }
        }

        let (next_directive, record) = server_round(&mut state, cfg, &directive, &uploads, &tests)?;
        records.push(record);
        directive = next_directive;
    }

    for conn in connections.iter_mut().flatten() {
        conn.send(&Message::Shutdown)?;
    }

    emit_csv(&records, &config.output)?;
    let summary = summarize(&records);
    Ok(RunOutcome { records, summary })
}

/// One deployed client: register, then train whenever the round directive
/// marks this id active, until the server says shutdown.
pub fn run_client(config: &ExperimentConfig) -> Result<(), RunError> {
    config.validate()?;
    let client_id = config.client_id.expect("validated");
    let train_samples = load_samples(
        &config.dataset_dir.join(dataset::TRAIN_IMAGES_FILE),
        &config.dataset_dir.join(dataset::TRAIN_LABELS_FILE),
    )?;
    let clients = partition(&train_samples, config.scheme)?;
    let data = clients
        .into_iter()
        .find(|c| c.client_id == client_id)
        .ok_or_else(|| ConfigError(format!("client_id {client_id} not in partition")))?;

    let deadline = Instant::now() + Duration::from_secs(config.timeout_secs);
    let stream = loop {
        match TcpStream::connect(&config.server_addr) {
            Ok(s) => break s,
            Err(e) => {
                if Instant::now() >= deadline {
                    return Err(RunError::Runtime(format!(
                        "cannot reach server at {}: {e}",
                        config.server_addr
                    )));
                }
                std::thread::sleep(Duration::from_millis(100));
            }
        }
    };
    let mut conn = Connection::new(stream);
    conn.send(&Message::Register {
        version: config.protocol_version,
        client_id,
        num_samples: data.len() as u32,
    })?;
    match conn.recv()? {
        Message::RegisterAck { accepted: true, .. } => {}
        Message::RegisterAck { accepted: false, .. } => {
            return Err(RunError::Protocol(format!(
                "server rejected registration of client {client_id}"
            )));
        }
        other => return Err(unexpected(&other)),
    }

    let mut current: Option<ModelParams> = None;
    loop {
        match conn.recv()? {
            Message::GlobalModel { params, .. } => {
                // Adopting the broadcast is the whole round for a suppressed
                // client; training always restarts from this model.
                current = Some(params);
            }
            Message::Directive(directive) => {
                let round = directive.round;
                let entry = directive.entry(client_id).ok_or_else(|| {
                    RunError::Protocol(format!("directive for round {round} omits client {client_id}"))
                })?;
                if !entry.active {
                    continue;
                }
                let global = current.as_ref().ok_or_else(|| {
                    RunError::Protocol("directive arrived before any global model".into())
                })?;
                let upload = client_round(
                    global,
                    true,
                    &data,
                    &config.train_config(round, client_id),
                    config.fed.update_type,
                )?
                .expect("active client produces an upload");
                conn.send(&Message::LocalUpdate {
                    client_id,
                    num_samples: upload.num_samples,
                    params: upload.params,
                    update: upload.update,
                })?;
                match conn.recv()? {
                    Message::MetricsAck { .. } => {}
                    other => return Err(unexpected(&other)),
                }
            }
            Message::Shutdown => return Ok(()),
            other => return Err(unexpected(&other)),
        }
    }
}

/// Pre-splits the training set into per-client IDX cache files.
pub fn write_partition_caches(config: &ExperimentConfig, out_dir: &Path) -> Result<usize, RunError> {
    let train = load_samples(
        &config.dataset_dir.join(dataset::TRAIN_IMAGES_FILE),
        &config.dataset_dir.join(dataset::TRAIN_LABELS_FILE),
    )?;
    let clients = partition(&train, config.scheme)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| RunError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    for client in &clients {
        dataset::save_client_cache(out_dir, client)?;
    }
    Ok(clients.len())
}
