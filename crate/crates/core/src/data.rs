//! Federation construction: synthetic data, equal sharding across clients,
//! label flipping, bid generation and an IDX loader for MNIST-format files.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::rng::{derive_seed, seeded_rng};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub data: Dataset,
    pub flip_ratio: f64,
}

impl ClientDataset {
    pub fn is_clean(&self) -> bool {
        self.flip_ratio == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlipGroup {
    pub count: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    pub num_clients: usize,
    pub samples_total: usize,
    pub flip_groups: Vec<FlipGroup>,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::InvalidConfig("num_clients must be >= 1".into()));
        }
        if self.samples_total == 0 || !self.samples_total.is_multiple_of(self.num_clients) {
            return Err(Error::InvalidConfig(format!(
                "samples_total {} must be a positive multiple of num_clients {}",
                self.samples_total, self.num_clients
            )));
        }
        let grouped: usize = self.flip_groups.iter().map(|g| g.count).sum();
        if grouped != self.num_clients {
            return Err(Error::InvalidConfig(format!(
                "flip groups cover {grouped} clients, expected {}",
                self.num_clients
            )));
        }
        if let Some(g) = self
            .flip_groups
            .iter()
            .find(|g| !(0.0..=1.0).contains(&g.ratio))
        {
            return Err(Error::InvalidConfig(format!(
                "flip ratio {} outside [0, 1]",
                g.ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BidTier {
    pub ratio: f64,
    pub bid: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BidMode {
    Gaussian { mean: f64, variance: f64 },
    /// Exact bid per flip ratio.
    Tiered(Vec<BidTier>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BidSpec {
    pub mode: BidMode,
    pub floor: f64,
    pub seed: u64,
}

/// Isotropic unit-variance Gaussian blobs, one per class, with means drawn
/// uniformly on the sphere of radius `class_separation`. Labels cycle through
/// the classes so counts differ by at most one; row order is shuffled.
pub fn generate_synthetic(
    num_classes: usize,
    input_dim: usize,
    samples: usize,
    class_separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || input_dim == 0 {
        return Err(Error::InvalidArgument(
            "num_classes and input_dim must be >= 1".into(),
        ));
    }
    if samples < num_classes {
        return Err(Error::InvalidArgument(format!(
            "{samples} samples cannot cover {num_classes} classes"
        )));
    }
    if !(class_separation.is_finite() && class_separation > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "class_separation must be positive, got {class_separation}"
        )));
    }

    let mut rng = seeded_rng(seed);
    let mut means = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let mut m: Vec<f64> = loop {
            let v: Vec<f64> = (0..input_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            if v.iter().any(|x: &f64| *x != 0.0) {
                break v;
            }
        };
        let norm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        m.iter_mut().for_each(|x| *x *= class_separation / norm);
        means.push(m);
    }

    let mut labels: Vec<usize> = (0..samples).map(|i| i % num_classes).collect();
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(samples * input_dim);
    for &y in &labels {
        for &mu in &means[y] {
            let noise: f64 = StandardNormal.sample(&mut rng);
            features.push(mu + noise);
        }
    }
    Dataset::new(features, input_dim, labels, num_classes)
}

/// Seeded equal sharding. Flip groups are assigned to a seeded permutation of
/// client ids; ratios are recorded but labels are left untouched.
pub fn partition(data: &Dataset, spec: &PartitionSpec) -> Result<Vec<ClientDataset>> {
    spec.validate()?;
    if spec.samples_total > data.len() {
        return Err(Error::InvalidConfig(format!(
            "samples_total {} exceeds dataset size {}",
            spec.samples_total,
            data.len()
        )));
    }

    let mut rng = seeded_rng(spec.seed);
    let mut rows: Vec<usize> = (0..data.len()).collect();
    rows.shuffle(&mut rng);
    let shard = spec.samples_total / spec.num_clients;

    let mut client_order: Vec<usize> = (0..spec.num_clients).collect();
    client_order.shuffle(&mut rng);
    let mut ratios = vec![0.0; spec.num_clients];
    let mut cursor = client_order.iter();
    for group in &spec.flip_groups {
        for &client in cursor.by_ref().take(group.count) {
            ratios[client] = group.ratio;
        }
    }

    Ok((0..spec.num_clients)
        .map(|client_id| ClientDataset {
            client_id,
            data: data.select(&rows[client_id * shard..(client_id + 1) * shard]),
            flip_ratio: ratios[client_id],
        })
        .collect())
}

/// Number of labels a flip ratio touches on a shard: `r * s` rounded half up.
pub fn flip_count(ratio: f64, shard: usize) -> usize {
    ((ratio * shard as f64) + 0.5).floor() as usize
}

/// Replaces exactly `flip_count(flip_ratio, |D|)` labels, chosen without
/// replacement, with a uniformly drawn different class.
pub fn flip_labels(cd: &ClientDataset, num_classes: usize, seed: u64) -> Result<ClientDataset> {
    if !(0.0..=1.0).contains(&cd.flip_ratio) {
        return Err(Error::InvalidArgument(format!(
            "flip ratio {} outside [0, 1]",
            cd.flip_ratio
        )));
    }
    let count = flip_count(cd.flip_ratio, cd.data.len()).min(cd.data.len());
    if count == 0 {
        return Ok(cd.clone());
    }
    if num_classes < 2 {
        return Err(Error::InvalidArgument(
            "label flipping needs at least two classes".into(),
        ));
    }
    if num_classes != cd.data.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "flipping over {num_classes} classes, dataset has {}",
            cd.data.num_classes()
        )));
    }

    let mut rng = seeded_rng(seed);
    let mut labels = cd.data.labels().to_vec();
    let mut chosen = index::sample(&mut rng, labels.len(), count).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        let draw = rng.random_range(0..num_classes - 1);
        labels[i] = if draw >= labels[i] { draw + 1 } else { draw };
    }
    Ok(ClientDataset {
        client_id: cd.client_id,
        data: cd.data.with_labels(labels)?,
        flip_ratio: cd.flip_ratio,
    })
}

/// Applies `flip_labels` to every client with a per-client derived seed.
pub fn flip_all(clients: &[ClientDataset], num_classes: usize, seed: u64) -> Result<Vec<ClientDataset>> {
    clients
        .iter()
        .map(|cd| flip_labels(cd, num_classes, derive_seed(seed, &[cd.client_id as u64])))
        .collect()
}

const TIER_TOLERANCE: f64 = 1e-9;

pub fn generate_bids(spec: &BidSpec, clients: &[ClientDataset]) -> Result<Vec<f64>> {
    if !(spec.floor.is_finite() && spec.floor > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "bid floor must be > 0, got {}",
            spec.floor
        )));
    }
    match &spec.mode {
        BidMode::Gaussian { mean, variance } => {
            if !(variance.is_finite() && *variance >= 0.0) || !mean.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "invalid gaussian bid parameters mean={mean} variance={variance}"
                )));
            }
            let normal = Normal::new(*mean, variance.sqrt())
                .map_err(|e| Error::InvalidConfig(format!("gaussian bids: {e}")))?;
            let mut rng = seeded_rng(spec.seed);
            Ok(clients
                .iter()
                .map(|_| normal.sample(&mut rng).max(spec.floor))
                .collect())
        }
        BidMode::Tiered(tiers) => clients
            .iter()
            .map(|cd| {
                tiers
                    .iter()
                    .find(|t| (t.ratio - cd.flip_ratio).abs() <= TIER_TOLERANCE)
                    .map(|t| t.bid.max(spec.floor))
                    .ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "no bid tier for flip ratio {} (client {})",
                            cd.flip_ratio, cd.client_id
                        ))
                    })
            })
            .collect(),
    }
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn idx_header(bytes: &[u8], path: &Path, magic: u32, dims: usize) -> Result<Vec<usize>> {
    let bad = |reason: String| Error::IdxFormat {
        path: path.to_path_buf(),
        reason,
    };
    let need = 4 + 4 * dims;
    if bytes.len() < need {
        return Err(bad(format!("header needs {need} bytes, file has {}", bytes.len())));
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    if word(0) != magic {
        return Err(bad(format!(
            "magic {:#010x}, expected {magic:#010x}",
            word(0)
        )));
    }
    Ok((1..=dims).map(|i| word(i) as usize).collect())
}

/// Parses in-memory IDX image (magic 2051) and label (magic 2049) buffers.
/// Pixels are scaled to `[0, 1]`; the class count is `max label + 1`.
pub fn parse_idx(
    images: &[u8],
    labels: &[u8],
    images_path: &Path,
    labels_path: &Path,
) -> Result<Dataset> {
    let dims = idx_header(images, images_path, IDX_IMAGES_MAGIC, 3)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let label_dims = idx_header(labels, labels_path, IDX_LABELS_MAGIC, 1)?;
    if label_dims[0] != count {
        return Err(Error::IdxFormat {
            path: labels_path.to_path_buf(),
            reason: format!("{} labels for {count} images", label_dims[0]),
        });
    }
    let pixels = rows * cols;
    let body = &images[16..];
    if body.len() < count * pixels {
        return Err(Error::IdxFormat {
            path: images_path.to_path_buf(),
            reason: format!(
                "truncated: {} pixel bytes for {count} images of {rows}x{cols}",
                body.len()
            ),
        });
    }
    let label_body = &labels[8..];
    if label_body.len() < count {
        return Err(Error::IdxFormat {
            path: labels_path.to_path_buf(),
            reason: format!("truncated: {} label bytes for {count} labels", label_body.len()),
        });
    }
    if pixels == 0 {
        return Err(Error::IdxFormat {
            path: images_path.to_path_buf(),
            reason: "zero-sized images".into(),
        });
    }

    let features = body[..count * pixels]
        .iter()
        .map(|&p| f64::from(p) / 255.0)
        .collect();
    let labels: Vec<usize> = label_body[..count].iter().map(|&l| usize::from(l)).collect();
    let num_classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(features, pixels, labels, num_classes)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = std::fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let labels = std::fs::read(lp).map_err(|e| Error::io(lp, e))?;
    parse_idx(&images, &labels, ip, lp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_groups() -> Vec<FlipGroup> {
        [0.9, 0.8, 0.7, 0.6, 0.0]
            .iter()
            .map(|&ratio| FlipGroup { count: 8, ratio })
            .collect()
    }

    #[test]
    fn synthetic_single_class_and_balance() {
        let d = generate_synthetic(1, 3, 20, 2.0, 0).unwrap();
        assert!(d.labels().iter().all(|&l| l == 0));

        let d = generate_synthetic(10, 4, 100, 2.0, 0).unwrap();
        let mut counts = [0; 10];
        d.labels().iter().for_each(|&l| counts[l] += 1);
        assert!(counts.iter().all(|&c| c == 10));

        let d = generate_synthetic(3, 2, 10, 2.0, 0).unwrap();
        let mut counts = [0; 3];
        d.labels().iter().for_each(|&l| counts[l] += 1);
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn synthetic_rejects_degenerate() {
        assert!(generate_synthetic(5, 2, 4, 1.0, 0).is_err());
        assert!(generate_synthetic(2, 0, 4, 1.0, 0).is_err());
        assert!(generate_synthetic(2, 2, 4, 0.0, 0).is_err());
    }

    #[test]
    fn reference_partition_sizes_and_groups() {
        let data = generate_synthetic(10, 4, 10_000, 3.0, 1).unwrap();
        let spec = PartitionSpec {
            num_clients: 40,
            samples_total: 10_000,
            flip_groups: reference_groups(),
            seed: 5,
        };
        let clients = partition(&data, &spec).unwrap();
        assert_eq!(clients.len(), 40);
        assert!(clients.iter().all(|c| c.data.len() == 250));
        assert_eq!(clients.iter().filter(|c| c.is_clean()).count(), 8);
        for r in [0.9, 0.8, 0.7, 0.6] {
            assert_eq!(clients.iter().filter(|c| c.flip_ratio == r).count(), 8);
        }
    }

    #[test]
    fn partition_rejects_indivisible() {
        let data = generate_synthetic(2, 2, 100, 3.0, 1).unwrap();
        let spec = PartitionSpec {
            num_clients: 3,
            samples_total: 100,
            flip_groups: vec![FlipGroup { count: 3, ratio: 0.0 }],
            seed: 0,
        };
        assert!(matches!(partition(&data, &spec), Err(Error::InvalidConfig(_))));
    }

    fn shard(flip_ratio: f64, n: usize) -> ClientDataset {
        let data = generate_synthetic(10, 2, n, 3.0, 2).unwrap();
        ClientDataset {
            client_id: 0,
            data,
            flip_ratio,
        }
    }

    #[test]
    fn flip_zero_is_identity() {
        let cd = shard(0.0, 50);
        assert_eq!(flip_labels(&cd, 10, 3).unwrap(), cd);
    }

    #[test]
    fn flip_one_changes_every_label() {
        let cd = shard(1.0, 50);
        let out = flip_labels(&cd, 10, 3).unwrap();
        assert!(cd
            .data
            .labels()
            .iter()
            .zip(out.data.labels())
            .all(|(a, b)| a != b));
    }

    #[test]
    fn flip_sixty_percent_of_250() {
        let cd = shard(0.6, 250);
        let out = flip_labels(&cd, 10, 11).unwrap();
        let changed = cd
            .data
            .labels()
            .iter()
            .zip(out.data.labels())
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(changed, 150);
        assert_eq!(out.data.features(), cd.data.features());
    }

    #[test]
    fn flip_needs_two_classes() {
        let data = Dataset::new(vec![0.0; 4], 1, vec![0; 4], 1).unwrap();
        let cd = ClientDataset {
            client_id: 0,
            data,
            flip_ratio: 0.5,
        };
        assert!(flip_labels(&cd, 1, 0).is_err());
    }

    #[test]
    fn round_half_up() {
        assert_eq!(flip_count(0.5, 5), 3);
        assert_eq!(flip_count(0.9, 250), 225);
        assert_eq!(flip_count(0.7, 250), 175);
    }

    fn reference_clients() -> Vec<ClientDataset> {
        let data = generate_synthetic(10, 4, 4_000, 3.0, 1).unwrap();
        partition(
            &data,
            &PartitionSpec {
                num_clients: 40,
                samples_total: 4_000,
                flip_groups: reference_groups(),
                seed: 5,
            },
        )
        .unwrap()
    }

    #[test]
    fn tiered_bids_follow_flip_ratio() {
        let clients = reference_clients();
        let tiers = [(0.9, 6.0), (0.8, 8.0), (0.7, 10.0), (0.6, 12.0), (0.0, 14.0)]
            .iter()
            .map(|&(ratio, bid)| BidTier { ratio, bid })
            .collect();
        let bids = generate_bids(
            &BidSpec {
                mode: BidMode::Tiered(tiers),
                floor: 0.01,
                seed: 0,
            },
            &clients,
        )
        .unwrap();
        for b in [6.0, 8.0, 10.0, 12.0, 14.0] {
            assert_eq!(bids.iter().filter(|&&x| x == b).count(), 8);
        }
    }

    #[test]
    fn missing_tier_is_an_error() {
        let clients = reference_clients();
        let spec = BidSpec {
            mode: BidMode::Tiered(vec![BidTier { ratio: 0.0, bid: 14.0 }]),
            floor: 0.01,
            seed: 0,
        };
        assert!(generate_bids(&spec, &clients).is_err());
    }

    #[test]
    fn gaussian_bids() {
        let clients = reference_clients();
        let flat = BidSpec {
            mode: BidMode::Gaussian {
                mean: 10.0,
                variance: 0.0,
            },
            floor: 0.01,
            seed: 3,
        };
        assert!(generate_bids(&flat, &clients).unwrap().iter().all(|&b| b == 10.0));

        let spec = BidSpec {
            mode: BidMode::Gaussian {
                mean: 10.0,
                variance: 1.0,
            },
            floor: 0.01,
            seed: 3,
        };
        let bids = generate_bids(&spec, &clients).unwrap();
        let mean = bids.iter().sum::<f64>() / bids.len() as f64;
        assert!((mean - 10.0).abs() <= 0.6, "sample mean {mean}");
        assert_eq!(bids, generate_bids(&spec, &clients).unwrap());
    }

    #[test]
    fn gaussian_bids_clamp_at_floor() {
        let clients = reference_clients();
        let spec = BidSpec {
            mode: BidMode::Gaussian {
                mean: -5.0,
                variance: 1.0,
            },
            floor: 0.01,
            seed: 3,
        };
        assert!(generate_bids(&spec, &clients).unwrap().iter().all(|&b| b == 0.01));
    }
}
