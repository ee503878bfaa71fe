//! Grouping clients by the similarity of their uploads.
//!
//! Three interchangeable algorithms (k-means, single-linkage agglomerative,
//! spectral) operate on flattened update vectors and produce a labeling of
//! client ids. Euclidean distance throughout.

mod agglomerative;
mod eigen;
mod kmeans;
mod spectral;

pub use agglomerative::agglomerative;
pub use eigen::eigh_jacobi;
pub use kmeans::kmeans;
pub use spectral::spectral;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::{GradientUpdate, ModelParams, PARAM_COUNT, WEIGHT_COUNT};

#[derive(Debug, Error)]
pub enum ClusteringError {
    #[error("invalid argument: {0}")]
    Arg(String),
    #[error("degenerate affinity: all pairwise distances collapse to zero")]
    DegenerateAffinity,
}

/// Which view of a client's upload feeds the similarity analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UpdateType {
    /// Model coefficients only.
    Ww,
    /// Coefficients and intercepts.
    Wbw,
    /// Gradient of the coefficients.
    Wg,
    /// Gradient of coefficients and intercepts.
    Wbg,
}

impl UpdateType {
    pub const ALL: [UpdateType; 4] = [UpdateType::Ww, UpdateType::Wbw, UpdateType::Wg, UpdateType::Wbg];

    /// Flattened vector length for this view.
    pub fn vector_len(self) -> usize {
        match self {
            UpdateType::Ww | UpdateType::Wg => WEIGHT_COUNT,
            UpdateType::Wbw | UpdateType::Wbg => PARAM_COUNT,
        }
    }

    pub fn wire_tag(self) -> u8 {
        match self {
            UpdateType::Ww => 0,
            UpdateType::Wbw => 1,
            UpdateType::Wg => 2,
            UpdateType::Wbg => 3,
        }
    }

    pub fn from_wire_tag(tag: u8) -> Option<UpdateType> {
        match tag {
            0 => Some(UpdateType::Ww),
            1 => Some(UpdateType::Wbw),
            2 => Some(UpdateType::Wg),
            3 => Some(UpdateType::Wbg),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<UpdateType> {
        match s {
            "ww" | "WW" => Some(UpdateType::Ww),
            "wbw" | "WBW" => Some(UpdateType::Wbw),
            "wg" | "WG" => Some(UpdateType::Wg),
            "wbg" | "WBG" => Some(UpdateType::Wbg),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            UpdateType::Ww => "ww",
            UpdateType::Wbw => "wbw",
            UpdateType::Wg => "wg",
            UpdateType::Wbg => "wbg",
        }
    }
}

/// One client's flattened upload under a given update type.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateVector {
    pub client_id: u16,
    pub values: Vec<f64>,
    pub update_type: UpdateType,
}

/// Clustering algorithm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    KMeans,
    Agglomerative,
    Spectral,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::KMeans, Algorithm::Agglomerative, Algorithm::Spectral];

    pub fn parse(s: &str) -> Option<Algorithm> {
        match s {
            "kmeans" => Some(Algorithm::KMeans),
            "agglomerative" => Some(Algorithm::Agglomerative),
            "spectral" => Some(Algorithm::Spectral),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::KMeans => "kmeans",
            Algorithm::Agglomerative => "agglomerative",
            Algorithm::Spectral => "spectral",
        }
    }
}

/// A partition of client ids into contiguous cluster indices `0..num_clusters`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    labels: BTreeMap<u16, usize>,
    num_clusters: usize,
}

impl ClusterAssignment {
    /// Builds an assignment from per-point labels, renumbering clusters by
    /// first appearance so indices are contiguous and deterministic.
    pub fn from_point_labels(client_ids: &[u16], raw_labels: &[usize]) -> Self {
        debug_assert_eq!(client_ids.len(), raw_labels.len());
        let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
        let mut labels = BTreeMap::new();
        for (&id, &raw) in client_ids.iter().zip(raw_labels) {
            let next = remap.len();
            let label = *remap.entry(raw).or_insert(next);
            labels.insert(id, label);
        }
        ClusterAssignment {
            labels,
            num_clusters: remap.len(),
        }
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn label_of(&self, client_id: u16) -> Option<usize> {
        self.labels.get(&client_id).copied()
    }

    pub fn clients(&self) -> impl Iterator<Item = (u16, usize)> + '_ {
        self.labels.iter().map(|(&id, &label)| (id, label))
    }

    pub fn members_of(&self, cluster: usize) -> BTreeSet<u16> {
        self.labels
            .iter()
            .filter(|(_, &label)| label == cluster)
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// The expected device groups: consecutive client pairs share training digits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthGroups {
    pub groups: Vec<BTreeSet<u16>>,
}

impl GroundTruthGroups {
    pub fn consecutive_pairs(num_clients: u16) -> Self {
        let mut groups = Vec::new();
        let mut id = 0;
        while id < num_clients {
            let mut group = BTreeSet::new();
            group.insert(id);
            if id + 1 < num_clients {
                group.insert(id + 1);
            }
            groups.push(group);
            id += 2;
        }
        GroundTruthGroups { groups }
    }

    pub fn client_ids(&self) -> BTreeSet<u16> {
        self.groups.iter().flatten().copied().collect()
    }
}

/// Flattens the chosen view of an upload, in wire order (pixel-major weights,
/// then intercepts where included).
pub fn flatten_update(
    client_id: u16,
    params: &ModelParams,
    grad: &GradientUpdate,
    update_type: UpdateType,
) -> UpdateVector {
    let values = match update_type {
        UpdateType::Ww => params.weights.clone(),
        UpdateType::Wbw => params.weights.iter().chain(params.bias.iter()).copied().collect(),
        UpdateType::Wg => grad.d_weights.clone(),
        UpdateType::Wbg => grad.d_weights.iter().chain(grad.d_bias.iter()).copied().collect(),
    };
    UpdateVector {
        client_id,
        values,
        update_type,
    }
}

/// Number of ground-truth groups reproduced exactly by this assignment.
pub fn correct_groups(assignment: &ClusterAssignment, truth: &GroundTruthGroups) -> usize {
    truth
        .groups
        .iter()
        .filter(|group| (0..assignment.num_clusters()).any(|k| &assignment.members_of(k) == *group))
        .count()
}

/// Accumulated exact-group recovery rate over a history of assignments.
pub fn clustering_accuracy(
    history: &[ClusterAssignment],
    truth: &GroundTruthGroups,
) -> Result<f64, ClusteringError> {
    let required = truth.client_ids();
    let mut correct = 0usize;
    let mut total = 0usize;
    for assignment in history {
        for &id in &required {
            if assignment.label_of(id).is_none() {
                return Err(ClusteringError::Arg(format!(
                    "assignment is missing client {id}"
                )));
            }
        }
        correct += correct_groups(assignment, truth);
        total += truth.groups.len();
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(correct as f64 / total as f64)
}

pub(crate) fn check_points(points: &[UpdateVector], m: usize) -> Result<(), ClusteringError> {
    if m == 0 {
        return Err(ClusteringError::Arg("cluster count must be positive".into()));
    }
    if points.len() < m {
        return Err(ClusteringError::Arg(format!(
            "{} points cannot form {m} clusters",
            points.len()
        )));
    }
    let len = points[0].values.len();
    if points.iter().any(|p| p.values.len() != len) {
        return Err(ClusteringError::Arg("update vectors have mixed lengths".into()));
    }
    Ok(())
}

pub(crate) fn euclidean_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
pub(crate) fn planar(points: &[(f64, f64)]) -> Vec<UpdateVector> {
    points
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| UpdateVector {
            client_id: i as u16,
            values: vec![x, y],
            update_type: UpdateType::Ww,
        })
        .collect()
}
