//! IDX file parsing and the per-client digit partitions.
//!
//! Images and labels use the classic IDX encoding (big-endian header words,
//! one byte per pixel or label). Training data is split across ten clients
//! in fixed digit groups; two clients share each group and receive disjoint
//! halves by alternating sample index.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const IMAGE_ROWS: usize = 28;
pub const IMAGE_COLS: usize = 28;
pub const PIXELS_PER_IMAGE: usize = IMAGE_ROWS * IMAGE_COLS;
pub const NUM_CLIENTS: usize = 10;

pub const TRAIN_IMAGES_FILE: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS_FILE: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES_FILE: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS_FILE: &str = "t10k-labels-idx1-ubyte";

const IDX3_MAGIC: u32 = 0x0000_0803;
const IDX1_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("format error: {0}")]
    Format(String),
    #[error("partition error: {0}")]
    Partition(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One image with its digit label. Pixels are raw bytes scaled by 1/255.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub pixels: Vec<f32>,
    pub label: u8,
}

/// The training (or evaluation) slice owned by one client.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: u16,
    pub samples: Vec<Sample>,
    pub allowed_digits: Vec<u8>,
}

impl ClientDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// The two digit-to-client layouts. Clients 2g and 2g+1 share group g.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Set1,
    Set2,
}

impl Scheme {
    /// Digit group for each client pair, in pair order.
    pub fn groups(self) -> Vec<Vec<u8>> {
        match self {
            Scheme::Set1 => vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7], vec![8, 9]],
            Scheme::Set2 => vec![vec![0], vec![2], vec![4], vec![6], vec![8]],
        }
    }

    pub fn parse(s: &str) -> Option<Scheme> {
        match s {
            "set1" => Some(Scheme::Set1),
            "set2" => Some(Scheme::Set2),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Set1 => "set1",
            Scheme::Set2 => "set2",
        }
    }
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32, DatasetError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(DatasetError::Format(format!(
            "truncated header: need {} bytes, have {}",
            end,
            bytes.len()
        )));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses an IDX3 image payload into 784-entry pixel arrays scaled by 1/255.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Vec<f32>>, DatasetError> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX3_MAGIC {
        return Err(DatasetError::Format(format!(
            "bad image magic {magic:#010x}, expected {IDX3_MAGIC:#010x}"
        )));
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let rows = read_be_u32(bytes, 8)? as usize;
    let cols = read_be_u32(bytes, 12)? as usize;
    if rows != IMAGE_ROWS || cols != IMAGE_COLS {
        return Err(DatasetError::Format(format!(
            "unsupported image dimensions {rows}x{cols}, expected {IMAGE_ROWS}x{IMAGE_COLS}"
        )));
    }
    let payload = &bytes[16..];
    let expected = count * rows * cols;
    if payload.len() != expected {
        return Err(DatasetError::Format(format!(
            "image payload has {} bytes, expected {expected}",
            payload.len()
        )));
    }
    Ok(payload
        .chunks_exact(PIXELS_PER_IMAGE)
        .map(|chunk| chunk.iter().map(|&b| f32::from(b) / 255.0).collect())
        .collect())
}

/// Parses an IDX1 label payload into digits 0-9.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DatasetError> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX1_MAGIC {
        return Err(DatasetError::Format(format!(
            "bad label magic {magic:#010x}, expected {IDX1_MAGIC:#010x}"
        )));
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(DatasetError::Format(format!(
            "label payload has {} bytes, expected {count}",
            payload.len()
        )));
    }
    for (i, &b) in payload.iter().enumerate() {
        if b > 9 {
            return Err(DatasetError::Format(format!(
                "label {b} at index {i} is out of range 0-9"
            )));
        }
    }
    Ok(payload.to_vec())
}

pub fn load_idx_images(path: &Path) -> Result<Vec<Vec<f32>>, DatasetError> {
    parse_idx_images(&fs::read(path)?)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>, DatasetError> {
    parse_idx_labels(&fs::read(path)?)
}

/// Loads an image/label file pair into samples, in file order.
pub fn load_samples(images_path: &Path, labels_path: &Path) -> Result<Vec<Sample>, DatasetError> {
    let images = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(DatasetError::Format(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    Ok(images
        .into_iter()
        .zip(labels)
        .map(|(pixels, label)| Sample { pixels, label })
        .collect())
}

pub fn write_idx_images(path: &Path, images: &[Vec<f32>]) -> Result<(), DatasetError> {
    let mut bytes = Vec::with_capacity(16 + images.len() * PIXELS_PER_IMAGE);
    bytes.extend_from_slice(&IDX3_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
    bytes.extend_from_slice(&(IMAGE_ROWS as u32).to_be_bytes());
    bytes.extend_from_slice(&(IMAGE_COLS as u32).to_be_bytes());
    for image in images {
        debug_assert_eq!(image.len(), PIXELS_PER_IMAGE);
        bytes.extend(image.iter().map(|&p| (p * 255.0).round() as u8));
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<(), DatasetError> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&IDX1_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    fs::write(path, bytes)?;
    Ok(())
}

/// Splits training samples across ten clients per the scheme's digit groups.
///
/// Within a group, matching samples alternate between the pair's two clients
/// in input order: even positions go to the lower-numbered client. The two
/// halves are disjoint and the union preserves every matching sample.
pub fn partition(samples: &[Sample], scheme: Scheme) -> Result<Vec<ClientDataset>, DatasetError> {
    let groups = scheme.groups();
    let present: BTreeSet<u8> = samples.iter().map(|s| s.label).collect();
    for group in &groups {
        for &digit in group {
            if !present.contains(&digit) {
                return Err(DatasetError::Partition(format!(
                    "digit {digit} required by scheme {} is absent from the input",
                    scheme.name()
                )));
            }
        }
    }

    let mut clients = Vec::with_capacity(NUM_CLIENTS);
    for (g, group) in groups.iter().enumerate() {
        let digits: BTreeSet<u8> = group.iter().copied().collect();
        let matching: Vec<&Sample> = samples.iter().filter(|s| digits.contains(&s.label)).collect();
        let low_id = (2 * g) as u16;
        for (offset, id) in [(0usize, low_id), (1usize, low_id + 1)] {
            let own: Vec<Sample> = matching
                .iter()
                .skip(offset)
                .step_by(2)
                .map(|&s| s.clone())
                .collect();
            if own.is_empty() {
                return Err(DatasetError::Partition(format!(
                    "client {id} would receive no samples for digits {group:?}"
                )));
            }
            clients.push(ClientDataset {
                client_id: id,
                samples: own,
                allowed_digits: group.clone(),
            });
        }
    }
    Ok(clients)
}

/// Per-client evaluation sets: every sample whose label the client trains on.
/// Both clients of a pair see the same evaluation samples.
pub fn test_partition(
    samples: &[Sample],
    scheme: Scheme,
) -> Result<Vec<ClientDataset>, DatasetError> {
    let groups = scheme.groups();
    let mut clients = Vec::with_capacity(NUM_CLIENTS);
    for (g, group) in groups.iter().enumerate() {
        let digits: BTreeSet<u8> = group.iter().copied().collect();
        let matching: Vec<Sample> = samples
            .iter()
            .filter(|s| digits.contains(&s.label))
            .cloned()
            .collect();
        if matching.is_empty() {
            return Err(DatasetError::Partition(format!(
                "no evaluation samples for digits {group:?}"
            )));
        }
        for id in [(2 * g) as u16, (2 * g + 1) as u16] {
            clients.push(ClientDataset {
                client_id: id,
                samples: matching.clone(),
                allowed_digits: group.clone(),
            });
        }
    }
    Ok(clients)
}

pub fn cache_image_path(dir: &Path, client_id: u16) -> PathBuf {
    dir.join(format!("client_{client_id}_images.idx"))
}

pub fn cache_label_path(dir: &Path, client_id: u16) -> PathBuf {
    dir.join(format!("client_{client_id}_labels.idx"))
}

/// Writes a client's samples to the on-disk cache (IDX pair per client).
pub fn save_client_cache(dir: &Path, dataset: &ClientDataset) -> Result<(), DatasetError> {
    let images: Vec<Vec<f32>> = dataset.samples.iter().map(|s| s.pixels.clone()).collect();
    let labels: Vec<u8> = dataset.samples.iter().map(|s| s.label).collect();
    write_idx_images(&cache_image_path(dir, dataset.client_id), &images)?;
    write_idx_labels(&cache_label_path(dir, dataset.client_id), &labels)?;
    Ok(())
}

pub fn load_client_cache(
    dir: &Path,
    client_id: u16,
    allowed_digits: Vec<u8>,
) -> Result<ClientDataset, DatasetError> {
    let samples = load_samples(
        &cache_image_path(dir, client_id),
        &cache_label_path(dir, client_id),
    )?;
    Ok(ClientDataset {
        client_id,
        samples,
        allowed_digits,
    })
}
