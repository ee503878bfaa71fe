//! Server and client round logic: weighted aggregation, similarity analysis,
//! representative selection, and suppression bookkeeping.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::clustering::{
    self, agglomerative, kmeans, spectral, Algorithm, ClusterAssignment, ClusteringError,
    GroundTruthGroups, UpdateType, UpdateVector,
};
use crate::dataset::ClientDataset;
use crate::metrics::{evaluate_client, MetricsError, MetricsRecord};
use crate::model::{local_train, ModelError, ModelParams, TrainConfig};

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("no updates to aggregate")]
    NoUpdates,
    #[error("invalid state: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Per-client activity decision for one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientDirective {
    pub client_id: u16,
    pub active: bool,
    pub cluster: u8,
}

/// Which clients train and upload in a round, and their cluster labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundDirective {
    pub round: u32,
    pub entries: Vec<ClientDirective>,
}

impl RoundDirective {
    pub fn all_active(round: u32, num_clients: u16) -> Self {
        RoundDirective {
            round,
            entries: (0..num_clients)
                .map(|client_id| ClientDirective {
                    client_id,
                    active: true,
                    cluster: 0,
                })
                .collect(),
        }
    }

    pub fn entry(&self, client_id: u16) -> Option<&ClientDirective> {
        self.entries.iter().find(|e| e.client_id == client_id)
    }

    pub fn active_count(&self) -> u32 {
        self.entries.iter().filter(|e| e.active).count() as u32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedConfig {
    pub num_clients: u16,
    pub rounds: u32,
    pub tau: f64,
    pub clusters: usize,
    pub start_round: u32,
    pub update_type: UpdateType,
    pub algorithm: Algorithm,
    /// Gaussian affinity bandwidth for spectral clustering; `None` selects
    /// the median pairwise distance.
    pub sigma: Option<f64>,
    pub min_one_rep: bool,
    pub seed: u64,
}

impl FedConfig {
    pub fn validate(&self) -> Result<(), FederationError> {
        if self.num_clients == 0 {
            return Err(FederationError::Invalid("num_clients must be positive".into()));
        }
        if self.rounds == 0 {
            return Err(FederationError::Invalid("rounds must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(FederationError::Invalid(format!(
                "tau must be in (0, 1], got {}",
                self.tau
            )));
        }
        if self.start_round == 0 {
            return Err(FederationError::Invalid("start_round must be at least 1".into()));
        }
        if self.clusters == 0 || self.clusters > usize::from(self.num_clients) {
            return Err(FederationError::Invalid(format!(
                "clusters must be in 1..={}, got {}",
                self.num_clients, self.clusters
            )));
        }
        if let Some(s) = self.sigma {
            if s <= 0.0 {
                return Err(FederationError::Invalid(format!(
                    "sigma must be positive, got {s}"
                )));
            }
        }
        Ok(())
    }

    /// Suppression governs a round when update control has kicked in; with
    /// tau = 1 every coin lands active, so the whole analysis is skipped and
    /// the run is bit-identical to plain federated averaging.
    pub fn suppression_in(&self, round: u32) -> bool {
        self.tau < 1.0 && round > self.start_round && round <= self.rounds
    }
}

/// A completed local-training result on its way to the server.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpload {
    pub client_id: u16,
    pub num_samples: u32,
    pub params: ModelParams,
    pub update: UpdateVector,
}

/// Stable seed derivation: one independent stream per concern, so toggling
/// one feature never shifts another's draws.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    // FNV-1a over the label, mixed with the master seed, splitmix64 finish.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in label.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ master.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Shuffle seed for one client's local pass in one round; both simulation and
/// deployed clients derive it from the shared master seed.
pub fn shuffle_seed(master: u64, round: u32, client_id: u16) -> u64 {
    derive_seed(master, &format!("shuffle/r{round}/c{client_id}"))
}

/// Server-side state carried across rounds.
pub struct ServerState {
    pub global: ModelParams,
    pub last_update: BTreeMap<u16, UpdateVector>,
    pub round: u32,
    coin_rng: ChaCha8Rng,
    kmeans_rng: ChaCha8Rng,
}

impl ServerState {
    pub fn new(master_seed: u64) -> Self {
        ServerState {
            global: ModelParams::zeros(),
            last_update: BTreeMap::new(),
            round: 0,
            coin_rng: ChaCha8Rng::seed_from_u64(derive_seed(master_seed, "coin")),
            kmeans_rng: ChaCha8Rng::seed_from_u64(derive_seed(master_seed, "kmeans")),
        }
    }
}

/// Weighted mean of uploaded parameters, weights proportional to local
/// dataset sizes. Anchored at the first upload so that identical inputs
/// aggregate to themselves exactly.
pub fn aggregate(updates: &[(&ModelParams, u32)]) -> Result<ModelParams, FederationError> {
    if updates.is_empty() {
        return Err(FederationError::NoUpdates);
    }
    let total: u64 = updates.iter().map(|&(_, n)| u64::from(n)).sum();
    if total == 0 {
        return Err(FederationError::Invalid(
            "aggregation weights sum to zero".into(),
        ));
    }
    let base = updates[0].0;
    let mut result = base.clone();
    for &(params, n) in updates {
        let p = f64::from(n) / total as f64;
        for (slot, (&theta, &anchor)) in result
            .weights
            .iter_mut()
            .chain(result.bias.iter_mut())
            .zip(params.weights.iter().chain(&params.bias).zip(
                base.weights.iter().chain(&base.bias),
            ))
        {
            *slot += p * (theta - anchor);
        }
    }
    Ok(result)
}

/// Independent coin flip per client in ascending id order: active with
/// probability tau. With `min_one_rep`, a cluster whose members all landed
/// inactive gets one member re-activated by a single extra uniform draw.
pub fn select_representatives(
    assignment: &ClusterAssignment,
    round: u32,
    tau: f64,
    min_one_rep: bool,
    rng: &mut ChaCha8Rng,
) -> RoundDirective {
    let mut entries: Vec<ClientDirective> = assignment
        .clients()
        .map(|(client_id, cluster)| ClientDirective {
            client_id,
            active: rng.random::<f64>() < tau,
            cluster: cluster as u8,
        })
        .collect();
    if min_one_rep {
        for k in 0..assignment.num_clusters() {
            let members = assignment.members_of(k);
            let any_active = entries
                .iter()
                .any(|e| e.active && members.contains(&e.client_id));
            if !any_active && !members.is_empty() {
                let draw = rng.random::<f64>();
                let pick = ((draw * members.len() as f64) as usize).min(members.len() - 1);
                let chosen = *members.iter().nth(pick).expect("non-empty cluster");
                if let Some(entry) = entries.iter_mut().find(|e| e.client_id == chosen) {
                    entry.active = true;
                }
            }
        }
    }
    RoundDirective { round, entries }
}

/// Finishes a round on the server: aggregates the uploads that arrived,
/// refreshes the stale-update table, evaluates the new global model, and
/// prepares the next round's directive (clustered once update control is on).
pub fn server_round(
    state: &mut ServerState,
    cfg: &FedConfig,
    directive: &RoundDirective,
    uploads: &[ClientUpload],
    test_sets: &[ClientDataset],
) -> Result<(RoundDirective, MetricsRecord), FederationError> {
    let completed = directive.round;
    if state.round + 1 != completed {
        return Err(FederationError::Invalid(format!(
            "round {completed} finished but server was at {}",
            state.round
        )));
    }
    if test_sets.len() != usize::from(cfg.num_clients) {
        return Err(FederationError::Invalid(format!(
            "{} evaluation sets for {} clients",
            test_sets.len(),
            cfg.num_clients
        )));
    }

    let mut ordered: Vec<&ClientUpload> = uploads.iter().collect();
    ordered.sort_by_key(|u| u.client_id);

    if ordered.is_empty() {
        log::warn!("round {completed}: no uploads received, keeping previous global model");
    } else {
        let pairs: Vec<(&ModelParams, u32)> = ordered
            .iter()
            .map(|u| (&u.params, u.num_samples))
            .collect();
        state.global = aggregate(&pairs)?;
    }
    for upload in &ordered {
        state
            .last_update
            .insert(upload.client_id, upload.update.clone());
    }
    state.round = completed;

    let accuracy: Vec<f64> = test_sets
        .iter()
        .map(|test| evaluate_client(&state.global, test))
        .collect::<Result<_, _>>()?;
    let mean_accuracy = accuracy.iter().sum::<f64>() / accuracy.len() as f64;

    let params_per_upload = cfg.update_type.vector_len() as u64;
    let uploaded_params = ordered.len() as u64 * params_per_upload;
    let suppressed = u64::from(u32::from(cfg.num_clients) - directive.active_count());
    let suppressed_params = suppressed * params_per_upload;

    let next_round = completed + 1;
    let (next_directive, clusters_correct, groups_total) = if cfg.suppression_in(next_round)
        && (0..cfg.num_clients).all(|id| state.last_update.contains_key(&id))
    {
        let points: Vec<UpdateVector> = (0..cfg.num_clients)
            .map(|id| state.last_update[&id].clone())
            .collect();
        let seed_draw: u64 = match cfg.algorithm {
            Algorithm::KMeans | Algorithm::Spectral => state.kmeans_rng.random(),
            Algorithm::Agglomerative => 0,
        };
        let assignment = match cfg.algorithm {
            Algorithm::KMeans => kmeans(&points, cfg.clusters, seed_draw)?,
            Algorithm::Agglomerative => agglomerative(&points, cfg.clusters)?,
            Algorithm::Spectral => spectral(&points, cfg.clusters, cfg.sigma, seed_draw)?,
        };
        let truth = GroundTruthGroups::consecutive_pairs(cfg.num_clients);
        let correct = clustering::correct_groups(&assignment, &truth) as u32;
        let total = truth.groups.len() as u32;
        let directive = select_representatives(
            &assignment,
            next_round,
            cfg.tau,
            cfg.min_one_rep,
            &mut state.coin_rng,
        );
        (directive, correct, total)
    } else {
        (RoundDirective::all_active(next_round, cfg.num_clients), 0, 0)
    };

    let record = MetricsRecord {
        round: completed,
        accuracy,
        mean_accuracy,
        active_count: directive.active_count(),
        uploaded_params,
        suppressed_params,
        clusters_correct,
        groups_total,
    };
    Ok((next_directive, record))
}

/// One client's round: train and upload when active, otherwise only adopt
/// the incoming global model (the caller keeps `global` as its state).
pub fn client_round(
    global: &ModelParams,
    active: bool,
    data: &ClientDataset,
    train: &TrainConfig,
    update_type: UpdateType,
) -> Result<Option<ClientUpload>, FederationError> {
    if !active {
        return Ok(None);
    }
    let (params, grad) = local_train(global, data, train)?;
    let update = clustering::flatten_update(data.client_id, &params, &grad, update_type);
    Ok(Some(ClientUpload {
        client_id: data.client_id,
        num_samples: data.len() as u32,
        params,
        update,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Sample, PIXELS_PER_IMAGE};
    use crate::model::{NUM_CLASSES, WEIGHT_COUNT};
    use rand::Rng;

    fn params_filled(value: f64) -> ModelParams {
        ModelParams {
            weights: vec![value; WEIGHT_COUNT],
            bias: vec![value; NUM_CLASSES],
        }
    }

    fn random_params(rng: &mut ChaCha8Rng) -> ModelParams {
        ModelParams {
            weights: (0..WEIGHT_COUNT).map(|_| rng.random::<f64>() - 0.5).collect(),
            bias: (0..NUM_CLASSES).map(|_| rng.random::<f64>() - 0.5).collect(),
        }
    }

    fn test_cfg() -> FedConfig {
        FedConfig {
            num_clients: 4,
            rounds: 6,
            tau: 0.5,
            clusters: 2,
            start_round: 2,
            update_type: UpdateType::Wbg,
            algorithm: Algorithm::KMeans,
            sigma: None,
            min_one_rep: false,
            seed: 9,
        }
    }

    fn blank_dataset(client_id: u16, label: u8) -> ClientDataset {
        ClientDataset {
            client_id,
            samples: vec![Sample {
                pixels: vec![0.0; PIXELS_PER_IMAGE],
                label,
            }],
            allowed_digits: vec![label],
        }
    }

    fn pair_assignment(num_clients: u16) -> ClusterAssignment {
        let ids: Vec<u16> = (0..num_clients).collect();
        let labels: Vec<usize> = ids.iter().map(|&i| usize::from(i) / 2).collect();
        ClusterAssignment::from_point_labels(&ids, &labels)
    }

    #[test]
    fn single_update_passes_through_unchanged() {
        let theta = params_filled(0.3);
        let agg = aggregate(&[(&theta, 17)]).unwrap();
        assert_eq!(agg, theta);
    }

    #[test]
    fn equal_sizes_give_the_arithmetic_mean() {
        let a = params_filled(1.0);
        let b = params_filled(3.0);
        let agg = aggregate(&[(&a, 5), (&b, 5)]).unwrap();
        for v in agg.weights.iter().chain(&agg.bias) {
            assert!((v - 2.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn sizes_one_and_three_weight_updates_quarter_three_quarters() {
        let a = params_filled(0.0);
        let b = params_filled(1.0);
        let agg = aggregate(&[(&a, 1), (&b, 3)]).unwrap();
        for v in agg.weights.iter().chain(&agg.bias) {
            assert!((v - 0.75).abs() <= 1e-12);
        }
    }

    #[test]
    fn identical_uploads_aggregate_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let theta = random_params(&mut rng);
        let agg = aggregate(&[(&theta, 3), (&theta, 7), (&theta, 1)]).unwrap();
        assert_eq!(agg, theta);
    }

    #[test]
    fn empty_aggregation_is_an_error() {
        assert!(matches!(aggregate(&[]), Err(FederationError::NoUpdates)));
    }

    #[test]
    fn aggregate_stays_within_coordinatewise_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let inputs: Vec<(ModelParams, u32)> = (0..4)
            .map(|_| (random_params(&mut rng), rng.random_range(1..20)))
            .collect();
        let refs: Vec<(&ModelParams, u32)> = inputs.iter().map(|(p, n)| (p, *n)).collect();
        let agg = aggregate(&refs).unwrap();
        for i in 0..WEIGHT_COUNT {
            let lo = inputs.iter().map(|(p, _)| p.weights[i]).fold(f64::INFINITY, f64::min);
            let hi = inputs.iter().map(|(p, _)| p.weights[i]).fold(f64::NEG_INFINITY, f64::max);
            assert!(agg.weights[i] >= lo - 1e-12 && agg.weights[i] <= hi + 1e-12);
        }
    }

    #[test]
    fn aggregate_matches_direct_weighted_mean() {
        // Independent route: plain sum of p_j * theta_j, the minimizer of the
        // quadratic surrogate over the selected set.
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let inputs: Vec<(ModelParams, u32)> = (0..5)
            .map(|_| (random_params(&mut rng), rng.random_range(1..50)))
            .collect();
        let refs: Vec<(&ModelParams, u32)> = inputs.iter().map(|(p, n)| (p, *n)).collect();
        let agg = aggregate(&refs).unwrap();

        let total: f64 = inputs.iter().map(|(_, n)| f64::from(*n)).sum();
        for i in 0..WEIGHT_COUNT {
            let direct: f64 = inputs
                .iter()
                .map(|(p, n)| f64::from(*n) / total * p.weights[i])
                .sum();
            assert!((agg.weights[i] - direct).abs() <= 1e-10);
        }
    }

    #[test]
    fn tau_one_selects_everyone() {
        let assignment = pair_assignment(10);
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let directive = select_representatives(&assignment, 5, 1.0, false, &mut rng);
        assert_eq!(directive.active_count(), 10);
    }

    #[test]
    fn selection_is_deterministic_for_a_fixed_stream() {
        let assignment = pair_assignment(10);
        let a = select_representatives(
            &assignment,
            5,
            0.5,
            false,
            &mut ChaCha8Rng::seed_from_u64(54),
        );
        let b = select_representatives(
            &assignment,
            5,
            0.5,
            false,
            &mut ChaCha8Rng::seed_from_u64(54),
        );
        assert_eq!(a, b);
    }

    #[test]
    fn coin_flip_mean_matches_tau() {
        let assignment = pair_assignment(10);
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let trials = 10_000;
        let mut active = 0u64;
        for round in 0..trials {
            let d = select_representatives(&assignment, round, 0.5, false, &mut rng);
            active += u64::from(d.active_count());
        }
        let fraction = active as f64 / (trials as f64 * 10.0);
        assert!((fraction - 0.5).abs() <= 0.02, "fraction {fraction}");
    }

    #[test]
    fn min_one_rep_leaves_no_cluster_unrepresented() {
        let assignment = pair_assignment(10);
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        for round in 0..200 {
            let d = select_representatives(&assignment, round, 0.1, true, &mut rng);
            for k in 0..assignment.num_clusters() {
                let members = assignment.members_of(k);
                assert!(
                    d.entries.iter().any(|e| e.active && members.contains(&e.client_id)),
                    "cluster {k} has no representative in round {round}"
                );
            }
        }
    }

    #[test]
    fn derive_seed_separates_labels_and_masters() {
        assert_ne!(derive_seed(1, "coin"), derive_seed(1, "kmeans"));
        assert_ne!(derive_seed(1, "coin"), derive_seed(2, "coin"));
        assert_eq!(shuffle_seed(7, 3, 2), shuffle_seed(7, 3, 2));
        assert_ne!(shuffle_seed(7, 3, 2), shuffle_seed(7, 3, 3));
    }

    #[test]
    fn rounds_before_start_keep_everyone_active() {
        let cfg = test_cfg();
        let mut state = ServerState::new(cfg.seed);
        let tests: Vec<ClientDataset> = (0..4).map(|i| blank_dataset(i, 0)).collect();
        let directive = RoundDirective::all_active(1, 4);
        let uploads: Vec<ClientUpload> = (0..4u16)
            .map(|id| ClientUpload {
                client_id: id,
                num_samples: 1,
                params: params_filled(f64::from(id) * 0.1),
                update: UpdateVector {
                    client_id: id,
                    values: vec![f64::from(id); 4],
                    update_type: UpdateType::Wbg,
                },
            })
            .collect();
        let (next, record) = server_round(&mut state, &cfg, &directive, &uploads, &tests).unwrap();
        // Next round is 2, which is not past start_round 2, so no clustering.
        assert_eq!(next, RoundDirective::all_active(2, 4));
        assert_eq!(record.active_count, 4);
        assert_eq!(record.groups_total, 0);
        assert_eq!(record.suppressed_params, 0);
    }

    #[test]
    fn identical_uploads_fix_the_global_model() {
        let cfg = test_cfg();
        let mut state = ServerState::new(cfg.seed);
        let tests: Vec<ClientDataset> = (0..4).map(|i| blank_dataset(i, 0)).collect();
        let directive = RoundDirective::all_active(1, 4);
        let theta = params_filled(0.25);
        let uploads: Vec<ClientUpload> = (0..4u16)
            .map(|id| ClientUpload {
                client_id: id,
                num_samples: 2,
                params: theta.clone(),
                update: UpdateVector {
                    client_id: id,
                    values: vec![0.0; 4],
                    update_type: UpdateType::Wbg,
                },
            })
            .collect();
        server_round(&mut state, &cfg, &directive, &uploads, &tests).unwrap();
        assert_eq!(state.global, theta);
    }

    #[test]
    fn zero_uploads_keep_the_previous_global_model() {
        let cfg = test_cfg();
        let mut state = ServerState::new(cfg.seed);
        state.global = params_filled(0.5);
        let before = state.global.clone();
        let tests: Vec<ClientDataset> = (0..4).map(|i| blank_dataset(i, 0)).collect();
        let directive = RoundDirective::all_active(1, 4);
        let (_, record) = server_round(&mut state, &cfg, &directive, &[], &tests).unwrap();
        assert_eq!(state.global, before);
        assert_eq!(record.uploaded_params, 0);
    }

    #[test]
    fn suppression_window_follows_the_start_round() {
        let cfg = test_cfg();
        assert!(!cfg.suppression_in(1));
        assert!(!cfg.suppression_in(2));
        assert!(cfg.suppression_in(3));
        assert!(cfg.suppression_in(6));
        assert!(!cfg.suppression_in(7));

        let mut tau_one = cfg;
        tau_one.tau = 1.0;
        assert!(!tau_one.suppression_in(5));
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let mut cfg = test_cfg();
        cfg.tau = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = test_cfg();
        cfg.tau = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = test_cfg();
        cfg.clusters = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = test_cfg();
        cfg.start_round = 0;
        assert!(cfg.validate().is_err());
        assert!(test_cfg().validate().is_ok());
    }
}
