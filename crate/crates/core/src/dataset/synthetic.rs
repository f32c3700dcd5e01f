//! Planted-community synthetic data: users and songs are assigned to
//! groups round-robin; in-group interactions, in-group friendships, and
//! group-specific feature centroids give the model recoverable structure.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

use super::{split, Dataset, FeatureTable, Modality, RawDataset};

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_songs: usize,
    pub n_groups: usize,
    /// Interaction probability for same-group (user, song) pairs.
    pub p_in: f64,
    /// Interaction probability across groups.
    pub p_out: f64,
    /// Friendship probability for same-group user pairs.
    pub q_in: f64,
    /// Friendship probability across groups.
    pub q_out: f64,
    pub feature_dims: BTreeMap<Modality, usize>,
    /// Std-dev of Gaussian noise added to each group centroid.
    pub noise_sigma: f64,
    pub cold_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> SyntheticSpec {
        let mut feature_dims = BTreeMap::new();
        feature_dims.insert(Modality::Lyrics, 16);
        feature_dims.insert(Modality::Audio, 12);
        feature_dims.insert(Modality::Visual, 10);
        SyntheticSpec {
            n_users: 200,
            n_songs: 500,
            n_groups: 5,
            p_in: 0.5,
            p_out: 0.05,
            q_in: 0.3,
            q_out: 0.01,
            feature_dims,
            noise_sigma: 0.1,
            cold_fraction: 0.1,
            test_fraction: 0.2,
            seed: 42,
        }
    }
}

fn validate(spec: &SyntheticSpec) -> Result<()> {
    if spec.n_users == 0 || spec.n_songs == 0 {
        return Err(Error::InvalidSpec("need at least one user and one song".to_string()));
    }
    let max_groups = spec.n_users.min(spec.n_songs);
    if spec.n_groups == 0 || spec.n_groups > max_groups {
        return Err(Error::InvalidSpec(format!(
            "n_groups must be in 1..={max_groups}, got {}",
            spec.n_groups
        )));
    }
    for (name, p) in [
        ("p_in", spec.p_in),
        ("p_out", spec.p_out),
        ("q_in", spec.q_in),
        ("q_out", spec.q_out),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidSpec(format!("{name} must be in [0, 1], got {p}")));
        }
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(Error::InvalidSpec(format!(
            "noise_sigma must be finite and non-negative, got {}",
            spec.noise_sigma
        )));
    }
    if spec.feature_dims.is_empty() {
        return Err(Error::InvalidSpec("at least one modality dimension required".to_string()));
    }
    if let Some((m, _)) = spec.feature_dims.iter().find(|&(_, &d)| d == 0) {
        return Err(Error::InvalidSpec(format!("{} dimension must be positive", m.tag())));
    }
    Ok(())
}

/// Unit-norm Gaussian directions; near-orthogonal for moderate dims.
fn group_centroids(rng: &mut ChaCha20Rng, n_groups: usize, dim: usize) -> Array2<f64> {
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let mut centroids = Array2::zeros((n_groups, dim));
    for g in 0..n_groups {
        let mut row = Array1::<f64>::from_shape_fn(dim, |_| std_normal.sample(rng));
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
        centroids.row_mut(g).assign(&row);
    }
    centroids
}

/// Generate a planted-community dataset and split it.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    validate(spec)?;
    let mut warnings = Vec::new();
    if spec.n_groups == 1 {
        warnings.push("n_groups = 1: generated data has no community structure".to_string());
    }
    if spec.p_in <= spec.p_out {
        warnings.push("p_in <= p_out: interactions carry no group signal".to_string());
    }
    if spec.q_in <= spec.q_out {
        warnings.push("q_in <= q_out: friendships carry no group signal".to_string());
    }

    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).unwrap();
    let g = spec.n_groups;

    // Phase 1: modality features around group centroids.
    let mut features = BTreeMap::new();
    for (&m, &dim) in &spec.feature_dims {
        let centroids = group_centroids(&mut rng, g, dim);
        let mut rows = Array2::zeros((spec.n_songs, dim));
        for i in 0..spec.n_songs {
            for j in 0..dim {
                rows[[i, j]] = centroids[[i % g, j]] + noise.sample(&mut rng);
            }
        }
        features.insert(m, FeatureTable::new(rows)?);
    }

    // Phase 2: valence/arousal around per-group points in [-1, 1]².
    let mut emo_centroids = Array2::zeros((g, 2));
    for gi in 0..g {
        for j in 0..2 {
            emo_centroids[[gi, j]] = rng.random_range(-1.0..=1.0);
        }
    }
    let mut emo_rows = Array2::zeros((spec.n_songs, 2));
    for i in 0..spec.n_songs {
        for j in 0..2 {
            emo_rows[[i, j]] = (emo_centroids[[i % g, j]] + noise.sample(&mut rng)).clamp(-1.0, 1.0);
        }
    }
    let emotion = Some(FeatureTable::new(emo_rows)?);

    // Phase 3: interactions.
    let mut interactions = Vec::new();
    for u in 0..spec.n_users {
        for i in 0..spec.n_songs {
            let p = if u % g == i % g { spec.p_in } else { spec.p_out };
            if rng.random_bool(p) {
                interactions.push((u, i));
            }
        }
    }

    // Phase 4: friendships over unordered user pairs.
    let mut social_edges = Vec::new();
    for a in 0..spec.n_users {
        for b in (a + 1)..spec.n_users {
            let q = if a % g == b % g { spec.q_in } else { spec.q_out };
            if rng.random_bool(q) {
                social_edges.push((a, b));
            }
        }
    }

    let raw = RawDataset {
        user_ids: (0..spec.n_users).map(|u| format!("u{u}")).collect(),
        song_ids: (0..spec.n_songs).map(|i| format!("s{i}")).collect(),
        interactions,
        social_edges,
        features,
        emotion,
        warnings,
    };
    split(raw, spec.test_fraction, spec.cold_fraction, spec.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_users_or_songs_rejected() {
        let spec = SyntheticSpec {
            n_users: 0,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::InvalidSpec(_))));
        let spec = SyntheticSpec {
            n_songs: 0,
            n_groups: 1,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn single_group_warns() {
        let spec = SyntheticSpec {
            n_users: 10,
            n_songs: 20,
            n_groups: 1,
            seed: 1,
            ..Default::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        assert!(ds.warnings.iter().any(|w| w.contains("no community structure")));
    }

    #[test]
    fn deterministic_block_structure_without_noise() {
        // p_in = 1, p_out = 0: user u listens to exactly the songs with i % g == u % g
        let spec = SyntheticSpec {
            n_users: 6,
            n_songs: 9,
            n_groups: 3,
            p_in: 1.0,
            p_out: 0.0,
            q_in: 0.0,
            q_out: 0.0,
            noise_sigma: 0.0,
            cold_fraction: 0.0,
            ..Default::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let mut all: Vec<_> = ds.train.iter().chain(ds.test.iter()).copied().collect();
        all.sort_unstable();
        let expected: Vec<(usize, usize)> = (0..6)
            .flat_map(|u| (0..9).filter(move |i| i % 3 == u % 3).map(move |i| (u, i)))
            .collect();
        assert_eq!(all, expected);
        assert!(ds.social_edges.is_empty());
        // zero noise: identical in-group feature rows
        let lyr = &ds.features[&Modality::Lyrics].rows;
        for j in 0..lyr.ncols() {
            assert_eq!(lyr[[0, j]], lyr[[3, j]]);
            assert_eq!(lyr[[1, j]], lyr[[4, j]]);
        }
    }

    #[test]
    fn same_seed_reproduces_everything() {
        let spec = SyntheticSpec {
            n_users: 15,
            n_songs: 30,
            n_groups: 3,
            seed: 77,
            ..Default::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.cold_songs, b.cold_songs);
        assert_eq!(a.social_edges, b.social_edges);
        for m in Modality::ALL {
            assert_eq!(a.features[&m].rows, b.features[&m].rows);
        }
        assert_eq!(a.emotion.as_ref().unwrap().rows, b.emotion.as_ref().unwrap().rows);
    }

    #[test]
    fn emotion_values_stay_in_range() {
        let spec = SyntheticSpec {
            n_users: 10,
            n_songs: 50,
            n_groups: 2,
            noise_sigma: 5.0, // large noise exercises the clamp
            seed: 9,
            ..Default::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        for &v in ds.emotion.as_ref().unwrap().rows.iter() {
            assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn default_spec_has_three_modalities_with_declared_dims() {
        let spec = SyntheticSpec {
            n_users: 12,
            n_songs: 25,
            n_groups: 4,
            ..Default::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let dims = ds.feature_dims();
        assert_eq!(dims[&Modality::Lyrics], 16);
        assert_eq!(dims[&Modality::Audio], 12);
        assert_eq!(dims[&Modality::Visual], 10);
        assert_eq!(ds.emotion.as_ref().unwrap().dim, 2);
    }

    #[test]
    fn group_probabilities_out_of_range_rejected() {
        let spec = SyntheticSpec {
            p_in: 1.5,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::InvalidSpec(_))));
    }
}
