//! Dataset ingestion, ID interning, train/test/cold-start splitting, and
//! synthetic planted-community generation.

mod io;
mod synthetic;

pub use io::{load_dataset, load_feature_table, load_interactions, save_dataset};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

/// One content channel describing a song. Canonical order is lyrics,
/// audio, visual, matching the fusion block layout everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Lyrics,
    Audio,
    Visual,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Lyrics, Modality::Audio, Modality::Visual];

    pub fn tag(&self) -> &'static str {
        match self {
            Modality::Lyrics => "lyr",
            Modality::Audio => "fre",
            Modality::Visual => "vis",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Modality> {
        match tag {
            "lyr" => Some(Modality::Lyrics),
            "fre" => Some(Modality::Audio),
            "vis" => Some(Modality::Visual),
            _ => None,
        }
    }
}

/// Per-song feature matrix for one channel, aligned to interned song order.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    pub dim: usize,
    /// `[n_songs × dim]`, all values finite.
    pub rows: Array2<f64>,
}

impl FeatureTable {
    pub fn new(rows: Array2<f64>) -> Result<FeatureTable> {
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("feature table contains non-finite values".into()));
        }
        Ok(FeatureTable {
            dim: rows.ncols(),
            rows,
        })
    }
}

/// Raw-string to interned-index bijection, in first-appearance order.
#[derive(Debug, Clone, Default)]
pub struct Interner {
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl Interner {
    pub fn new() -> Interner {
        Interner::default()
    }

    pub fn intern(&mut self, raw: &str) -> usize {
        if let Some(&idx) = self.lookup.get(raw) {
            return idx;
        }
        let idx = self.ids.len();
        self.ids.push(raw.to_string());
        self.lookup.insert(raw.to_string(), idx);
        idx
    }

    pub fn get(&self, raw: &str) -> Option<usize> {
        self.lookup.get(raw).copied()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn into_ids(self) -> Vec<String> {
        self.ids
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Parameters that deterministically fix a train/test/cold split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitParams {
    pub test_fraction: f64,
    pub cold_fraction: f64,
    pub seed: u64,
}

/// Interned interaction data before splitting.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub user_ids: Vec<String>,
    pub song_ids: Vec<String>,
    /// Deduplicated (user, song) pairs.
    pub interactions: Vec<(usize, usize)>,
    /// Canonical undirected edges with `u < v`, deduplicated, no self-loops.
    pub social_edges: Vec<(usize, usize)>,
    pub features: BTreeMap<Modality, FeatureTable>,
    pub emotion: Option<FeatureTable>,
    pub warnings: Vec<String>,
}

/// A fully split, immutable dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub user_ids: Vec<String>,
    pub song_ids: Vec<String>,
    /// Sorted by (user, song), disjoint from `test`.
    pub train: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    /// Sorted song indices with zero train interactions and ≥1 test interaction.
    pub cold_songs: Vec<usize>,
    pub social_edges: Vec<(usize, usize)>,
    pub features: BTreeMap<Modality, FeatureTable>,
    /// Valence/arousal rows in [-1, 1]², dim 2.
    pub emotion: Option<FeatureTable>,
    pub split: SplitParams,
    /// Users left with zero train interactions (excluded from evaluation).
    pub dropped_users: usize,
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_songs(&self) -> usize {
        self.song_ids.len()
    }

    pub fn feature_dims(&self) -> BTreeMap<Modality, usize> {
        self.features.iter().map(|(&m, t)| (m, t.dim)).collect()
    }

    /// Per-user sorted train song lists.
    pub fn train_by_user(&self) -> Vec<Vec<usize>> {
        group_by_user(&self.train, self.n_users())
    }

    /// Per-user sorted test song lists.
    pub fn test_by_user(&self) -> Vec<Vec<usize>> {
        group_by_user(&self.test, self.n_users())
    }

    pub fn is_cold(&self, song: usize) -> bool {
        self.cold_songs.binary_search(&song).is_ok()
    }

    pub fn user_index(&self, raw: &str) -> Option<usize> {
        self.user_ids.iter().position(|s| s == raw)
    }
}

pub fn group_by_user(pairs: &[(usize, usize)], n_users: usize) -> Vec<Vec<usize>> {
    let mut by_user = vec![Vec::new(); n_users];
    for &(u, i) in pairs {
        by_user[u].push(i);
    }
    for items in &mut by_user {
        items.sort_unstable();
    }
    by_user
}

/// Split interactions into train/test with a cold-start song holdout.
///
/// Cold songs are sampled uniformly from the interacted songs
/// (`cold_fraction` of the catalog, clamped to what is available); every
/// interaction of a cold song goes to test. The remaining warm
/// interactions are split per-user at `test_fraction`, always leaving at
/// least one train interaction for any user that has one to give.
/// Deterministic under `seed` for a fixed interaction set.
pub fn split(raw: RawDataset, test_fraction: f64, cold_fraction: f64, seed: u64) -> Result<Dataset> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidSpec(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    if !(0.0..1.0).contains(&cold_fraction) {
        return Err(Error::InvalidSpec(format!(
            "cold_fraction must be in [0, 1), got {cold_fraction}"
        )));
    }

    let n_users = raw.user_ids.len();
    let n_songs = raw.song_ids.len();
    let mut warnings = raw.warnings;

    let mut pairs = raw.interactions;
    pairs.sort_unstable();
    pairs.dedup();

    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    // Cold holdout: only songs with at least one interaction qualify.
    let mut interacted: Vec<usize> = pairs.iter().map(|&(_, i)| i).collect();
    interacted.sort_unstable();
    interacted.dedup();
    let target_cold = (cold_fraction * n_songs as f64).floor() as usize;
    let n_cold = target_cold.min(interacted.len());
    if n_cold < target_cold {
        warnings.push(format!(
            "cold holdout clamped to {n_cold} of {target_cold} requested songs (only {} interacted)",
            interacted.len()
        ));
    }
    let mut cold_songs: Vec<usize> = rand::seq::index::sample(&mut rng, interacted.len(), n_cold)
        .into_iter()
        .map(|k| interacted[k])
        .collect();
    cold_songs.sort_unstable();

    let is_cold = |song: usize| cold_songs.binary_search(&song).is_ok();

    let mut train: Vec<(usize, usize)> = Vec::with_capacity(pairs.len());
    let mut test: Vec<(usize, usize)> = Vec::new();
    let mut warm_by_user = vec![Vec::new(); n_users];
    for &(u, i) in &pairs {
        if is_cold(i) {
            test.push((u, i));
        } else {
            warm_by_user[u].push(i);
        }
    }

    for (u, warm) in warm_by_user.iter().enumerate() {
        let n_warm = warm.len();
        if n_warm == 0 {
            continue;
        }
        let n_test = ((test_fraction * n_warm as f64).floor() as usize).min(n_warm - 1);
        let chosen = rand::seq::index::sample(&mut rng, n_warm, n_test);
        let mut to_test = vec![false; n_warm];
        for k in chosen {
            to_test[k] = true;
        }
        for (k, &song) in warm.iter().enumerate() {
            if to_test[k] {
                test.push((u, song));
            } else {
                train.push((u, song));
            }
        }
    }
    train.sort_unstable();
    test.sort_unstable();

    let mut has_train = vec![false; n_users];
    for &(u, _) in &train {
        has_train[u] = true;
    }
    let mut interacted_users = vec![false; n_users];
    for &(u, _) in &pairs {
        interacted_users[u] = true;
    }
    let dropped_users = (0..n_users)
        .filter(|&u| interacted_users[u] && !has_train[u])
        .count();
    if dropped_users > 0 {
        warnings.push(format!(
            "{dropped_users} user(s) have zero train interactions and are excluded from evaluation"
        ));
    }

    Ok(Dataset {
        user_ids: raw.user_ids,
        song_ids: raw.song_ids,
        train,
        test,
        cold_songs,
        social_edges: raw.social_edges,
        features: raw.features,
        emotion: raw.emotion,
        split: SplitParams {
            test_fraction,
            cold_fraction,
            seed,
        },
        dropped_users,
        warnings,
    })
}
