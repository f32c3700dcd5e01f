//! Learnable parameters and the forward pass: per-channel graph
//! propagation, social propagation, user/item fusion, emotion affinity,
//! and scoring.
//!
//! The parameter layout is fixed and canonical (per present modality:
//! user table, projection weight, projection bias; then the social table
//! if enabled, the fusion map, and the item-weight logits). The optimizer,
//! the finite-difference checks, and the checkpoint format all walk
//! parameters in this one order.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use std::collections::{BTreeMap, HashSet};

use ndarray::{concatenate, Array1, Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::config::TrainConfig;
use crate::dataset::{FeatureTable, Modality};
use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, SocialGraph};
use crate::numerics::{cosine, sigmoid, softmax_in_place};

/// Map from raw modality features to the shared embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `[feature_dim × d]`
    pub weight: Array2<f64>,
    /// `[d]`
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AblationFlags {
    pub no_social: bool,
    pub no_mutual: bool,
    pub no_emotion: bool,
}

/// All learnable parameters plus the fixed hyperparameters needed to
/// rebuild the forward pass from a checkpoint alone.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub n_users: usize,
    pub n_songs: usize,
    pub dim: usize,
    /// Bipartite propagation depth.
    pub layers: usize,
    /// Social propagation depth.
    pub social_layers: usize,
    /// Fixed weight of the emotion-affinity score term (not learned).
    pub lambda_emotion: f64,
    pub flags: AblationFlags,
    /// Present modalities in canonical order; all keyed maps share it.
    pub modalities: Vec<Modality>,
    /// Free per-modality user embeddings `[N × d]`.
    pub user_tables: BTreeMap<Modality, Array2<f64>>,
    pub projections: BTreeMap<Modality, Projection>,
    /// Social user embeddings `[N × d]`; `None` under the social ablation.
    pub social_table: Option<Array2<f64>>,
    /// Fusion map over the concatenated user blocks `[(c+s)·d × d]`.
    pub fuse_weight: Array2<f64>,
    /// Softmax of these gives the item-fusion weights (α, β, γ, …).
    pub item_weight_logits: Array1<f64>,
}

fn user_table_name(m: Modality) -> &'static str {
    match m {
        Modality::Lyrics => "user_lyr",
        Modality::Audio => "user_fre",
        Modality::Visual => "user_vis",
    }
}

fn proj_weight_name(m: Modality) -> &'static str {
    match m {
        Modality::Lyrics => "proj_w_lyr",
        Modality::Audio => "proj_w_fre",
        Modality::Visual => "proj_w_vis",
    }
}

fn proj_bias_name(m: Modality) -> &'static str {
    match m {
        Modality::Lyrics => "proj_b_lyr",
        Modality::Audio => "proj_b_fre",
        Modality::Visual => "proj_b_vis",
    }
}

impl ModelParams {
    /// Width of the concatenated user fusion input.
    pub fn concat_width(&self) -> usize {
        let blocks = self.modalities.len() + usize::from(self.social_table.is_some());
        blocks * self.dim
    }

    /// All learnable arrays as named flat slices, in canonical order.
    pub fn learnable_slices(&self) -> Vec<(&'static str, &[f64])> {
        let mut out = Vec::new();
        for ((&m, table), proj) in self.user_tables.iter().zip(self.projections.values()) {
            out.push((user_table_name(m), table.as_slice().expect("standard layout")));
            out.push((proj_weight_name(m), proj.weight.as_slice().expect("standard layout")));
            out.push((proj_bias_name(m), proj.bias.as_slice().expect("standard layout")));
        }
        if let Some(social) = &self.social_table {
            out.push(("social", social.as_slice().expect("standard layout")));
        }
        out.push(("fuse_w", self.fuse_weight.as_slice().expect("standard layout")));
        out.push(("item_logits", self.item_weight_logits.as_slice().expect("standard layout")));
        out
    }

    pub fn learnable_slices_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = Vec::new();
        for ((&m, table), proj) in self.user_tables.iter_mut().zip(self.projections.values_mut()) {
            out.push((user_table_name(m), table.as_slice_mut().expect("standard layout")));
            out.push((proj_weight_name(m), proj.weight.as_slice_mut().expect("standard layout")));
            out.push((proj_bias_name(m), proj.bias.as_slice_mut().expect("standard layout")));
        }
        if let Some(social) = &mut self.social_table {
            out.push(("social", social.as_slice_mut().expect("standard layout")));
        }
        out.push(("fuse_w", self.fuse_weight.as_slice_mut().expect("standard layout")));
        out.push((
            "item_logits",
            self.item_weight_logits.as_slice_mut().expect("standard layout"),
        ));
        out
    }

    pub fn all_finite(&self) -> bool {
        self.learnable_slices()
            .iter()
            .all(|(_, s)| s.iter().all(|v| v.is_finite()))
    }
}

/// Round every parameter to the nearest f32 value (kept as f64).
///
/// Checkpoints store 32-bit floats; keeping the live parameters on the
/// f32 grid makes save → load bit-exact while all arithmetic stays f64.
pub fn snap_to_f32(params: &mut ModelParams) {
    for (_, slice) in params.learnable_slices_mut() {
        for v in slice {
            *v = *v as f32 as f64;
        }
    }
}

/// Gradients congruent to [`ModelParams`]' learnable arrays.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub user_tables: BTreeMap<Modality, Array2<f64>>,
    pub proj_weights: BTreeMap<Modality, Array2<f64>>,
    pub proj_biases: BTreeMap<Modality, Array1<f64>>,
    pub social_table: Option<Array2<f64>>,
    pub fuse_weight: Array2<f64>,
    pub item_weight_logits: Array1<f64>,
}

impl ParamGrads {
    pub fn zeros_like(p: &ModelParams) -> ParamGrads {
        ParamGrads {
            user_tables: p
                .user_tables
                .iter()
                .map(|(&m, t)| (m, Array2::zeros(t.raw_dim())))
                .collect(),
            proj_weights: p
                .projections
                .iter()
                .map(|(&m, pr)| (m, Array2::zeros(pr.weight.raw_dim())))
                .collect(),
            proj_biases: p
                .projections
                .iter()
                .map(|(&m, pr)| (m, Array1::zeros(pr.bias.raw_dim())))
                .collect(),
            social_table: p.social_table.as_ref().map(|t| Array2::zeros(t.raw_dim())),
            fuse_weight: Array2::zeros(p.fuse_weight.raw_dim()),
            item_weight_logits: Array1::zeros(p.item_weight_logits.raw_dim()),
        }
    }

    /// Flat slices in the same canonical order as the parameters.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for ((table, w), b) in self
            .user_tables
            .values()
            .zip(self.proj_weights.values())
            .zip(self.proj_biases.values())
        {
            out.push(table.as_slice().expect("standard layout"));
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        if let Some(social) = &self.social_table {
            out.push(social.as_slice().expect("standard layout"));
        }
        out.push(self.fuse_weight.as_slice().expect("standard layout"));
        out.push(self.item_weight_logits.as_slice().expect("standard layout"));
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for ((table, w), b) in self
            .user_tables
            .values_mut()
            .zip(self.proj_weights.values_mut())
            .zip(self.proj_biases.values_mut())
        {
            out.push(table.as_slice_mut().expect("standard layout"));
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        if let Some(social) = &mut self.social_table {
            out.push(social.as_slice_mut().expect("standard layout"));
        }
        out.push(self.fuse_weight.as_slice_mut().expect("standard layout"));
        out.push(self.item_weight_logits.as_slice_mut().expect("standard layout"));
        out
    }
}

/// Initialize parameters: embedding tables ~ N(0, 0.01²), projections and
/// the fusion map Xavier-uniform, item-weight logits zero (uniform α).
/// Deterministic under `config.seed`.
pub fn init_params(
    config: &TrainConfig,
    n_users: usize,
    n_songs: usize,
    feature_dims: &BTreeMap<Modality, usize>,
) -> Result<ModelParams> {
    config.validate()?;
    if feature_dims.is_empty() {
        return Err(Error::Config("no modalities to initialize".to_string()));
    }
    let d = config.embedding_dim;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let table_init = Normal::new(0.0, 0.01).expect("valid std-dev");

    let modalities: Vec<Modality> = feature_dims.keys().copied().collect();
    let mut user_tables = BTreeMap::new();
    let mut projections = BTreeMap::new();
    for (&m, &dim_m) in feature_dims {
        let table = Array2::from_shape_fn((n_users, d), |_| table_init.sample(&mut rng));
        let bound = (6.0 / (dim_m + d) as f64).sqrt();
        let weight = Array2::from_shape_fn((dim_m, d), |_| rng.random_range(-bound..bound));
        user_tables.insert(m, table);
        projections.insert(
            m,
            Projection {
                weight,
                bias: Array1::zeros(d),
            },
        );
    }

    let social_table = if config.no_social {
        None
    } else {
        Some(Array2::from_shape_fn((n_users, d), |_| table_init.sample(&mut rng)))
    };

    let blocks = modalities.len() + usize::from(social_table.is_some());
    let width = blocks * d;
    let bound = (6.0 / (width + d) as f64).sqrt();
    let fuse_weight = Array2::from_shape_fn((width, d), |_| rng.random_range(-bound..bound));
    let item_weight_logits = Array1::zeros(modalities.len());

    let mut params = ModelParams {
        n_users,
        n_songs,
        dim: d,
        layers: config.layers,
        social_layers: config.social_layers,
        lambda_emotion: if config.no_emotion { 0.0 } else { config.lambda_emotion },
        flags: AblationFlags {
            no_social: config.no_social,
            no_mutual: config.no_mutual,
            no_emotion: config.no_emotion,
        },
        modalities,
        user_tables,
        projections,
        social_table,
        fuse_weight,
        item_weight_logits,
    };
    snap_to_f32(&mut params);
    Ok(params)
}

/// Layer-0 item embeddings: project raw features into the shared space.
/// This is also the cold-start path — it needs no interactions.
pub fn item_layer0(features: &FeatureTable, proj: &Projection) -> Result<Array2<f64>> {
    if features.dim != proj.weight.nrows() {
        return Err(Error::Shape(format!(
            "feature dim {} does not match projection input {}",
            features.dim,
            proj.weight.nrows()
        )));
    }
    Ok(features.rows.dot(&proj.weight) + &proj.bias)
}

/// Alternating bipartite propagation with uniform layer averaging.
///
/// Layer l+1 on each side aggregates the other side's layer l through the
/// normalized adjacency; outputs average layers 0..=L. The map is linear
/// in (user0, item0) and, because the two CSR views are exact transposes,
/// self-adjoint — backpropagation reuses this same function.
pub fn propagate_bipartite(
    graph: &BipartiteGraph,
    user0: &Array2<f64>,
    item0: &Array2<f64>,
    layers: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut user_acc = user0.clone();
    let mut item_acc = item0.clone();
    let mut user_cur = user0.clone();
    let mut item_cur = item0.clone();
    for _ in 0..layers {
        let user_next = graph.user_song.spmv(&item_cur)?;
        let item_next = graph.song_user.spmv(&user_cur)?;
        user_acc += &user_next;
        item_acc += &item_next;
        user_cur = user_next;
        item_cur = item_next;
    }
    let scale = 1.0 / (layers as f64 + 1.0);
    Ok((user_acc * scale, item_acc * scale))
}

/// Social propagation with layer averaging. Friendless users receive
/// zero from every layer ≥ 1, so their output is `row / (L_s + 1)`.
pub fn propagate_social(
    graph: &SocialGraph,
    table: &Array2<f64>,
    layers: usize,
) -> Result<Array2<f64>> {
    let mut acc = table.clone();
    let mut cur = table.clone();
    for _ in 0..layers {
        let next = graph.adj.spmv(&cur)?;
        acc += &next;
        cur = next;
    }
    Ok(acc * (1.0 / (layers as f64 + 1.0)))
}

/// Row-wise concatenation of user blocks, social last.
pub fn concat_user_blocks(
    modality_users: &[&Array2<f64>],
    social_users: Option<&Array2<f64>>,
) -> Array2<f64> {
    let views: Vec<_> = modality_users
        .iter()
        .map(|a| a.view())
        .chain(social_users.map(|a| a.view()))
        .collect();
    concatenate(Axis(1), &views).expect("blocks share row count")
}

pub(crate) fn fuse_concat(concat: &Array2<f64>, fuse_weight: &Array2<f64>) -> Result<Array2<f64>> {
    if concat.ncols() != fuse_weight.nrows() {
        return Err(Error::Shape(format!(
            "fusion input width {} does not match W_u rows {}",
            concat.ncols(),
            fuse_weight.nrows()
        )));
    }
    let mut fused = concat.dot(fuse_weight);
    fused.mapv_inplace(sigmoid);
    Ok(fused)
}

/// User fusion: elementwise logistic of the fused concatenated blocks.
/// Every output entry lies in (0, 1).
pub fn fuse_user(
    modality_users: &[&Array2<f64>],
    social_users: Option<&Array2<f64>>,
    fuse_weight: &Array2<f64>,
) -> Result<Array2<f64>> {
    fuse_concat(&concat_user_blocks(modality_users, social_users), fuse_weight)
}

/// Softmax of the item-weight logits: the convex fusion weights.
pub fn item_weights(logits: &Array1<f64>) -> Array1<f64> {
    let mut w = logits.to_vec();
    softmax_in_place(&mut w);
    Array1::from_vec(w)
}

/// Item fusion: convex combination of per-modality item embeddings.
pub fn fuse_item(modality_items: &[&Array2<f64>], weights: &Array1<f64>) -> Result<Array2<f64>> {
    if modality_items.is_empty() || modality_items.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} item blocks vs {} weights",
            modality_items.len(),
            weights.len()
        )));
    }
    let mut out = modality_items[0] * weights[0];
    for (block, &w) in modality_items.iter().zip(weights.iter()).skip(1) {
        out += &(*block * w);
    }
    Ok(out)
}

/// Mean valence/arousal over a user's train interactions; zero if none.
pub fn emotion_profile(graph: &BipartiteGraph, emotion: &FeatureTable) -> Result<Array2<f64>> {
    if emotion.dim != 2 {
        return Err(Error::Shape(format!("emotion table dim {} ≠ 2", emotion.dim)));
    }
    if emotion.rows.nrows() != graph.n_songs() {
        return Err(Error::Shape(format!(
            "emotion rows {} vs {} songs",
            emotion.rows.nrows(),
            graph.n_songs()
        )));
    }
    let mut profiles = Array2::zeros((graph.n_users(), 2));
    for u in 0..graph.n_users() {
        let songs = graph.user_song.neighbors(u);
        if songs.is_empty() {
            continue;
        }
        let inv = 1.0 / songs.len() as f64;
        for &i in songs {
            profiles[[u, 0]] += emotion.rows[[i, 0]] * inv;
            profiles[[u, 1]] += emotion.rows[[i, 1]] * inv;
        }
    }
    Ok(profiles)
}

/// Everything the forward pass produces; a pure function of
/// (params, graphs, features), cached for scoring and backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardState {
    /// Layer-averaged per-modality user embeddings `[N × d]`.
    pub modality_users: BTreeMap<Modality, Array2<f64>>,
    /// Layer-averaged per-modality item embeddings `[P × d]`.
    pub modality_items: BTreeMap<Modality, Array2<f64>>,
    pub social_users: Option<Array2<f64>>,
    /// Concatenated fusion input `[N × (c+s)·d]`, kept for backprop.
    pub concat: Array2<f64>,
    /// Fused user embeddings, entries in (0, 1).
    pub user_final: Array2<f64>,
    pub item_final: Array2<f64>,
    /// Softmaxed item-fusion weights.
    pub item_weights: Array1<f64>,
    /// `[N × 2]` mean emotion of train interactions; None if disabled.
    pub emotion_profiles: Option<Array2<f64>>,
    /// Copy of the song valence/arousal rows; None if disabled.
    pub song_emotion: Option<Array2<f64>>,
}

/// Immutable inputs the forward pass reads.
#[derive(Clone, Copy)]
pub struct ModelInputs<'a> {
    pub bipartite: &'a BipartiteGraph,
    pub social: &'a SocialGraph,
    pub features: &'a BTreeMap<Modality, FeatureTable>,
    pub emotion: Option<&'a FeatureTable>,
}

/// Full-graph forward pass.
pub fn forward(params: &ModelParams, inputs: &ModelInputs) -> Result<ForwardState> {
    if inputs.bipartite.n_users() != params.n_users || inputs.bipartite.n_songs() != params.n_songs
    {
        return Err(Error::Shape(format!(
            "graph is {}×{} but params expect {}×{}",
            inputs.bipartite.n_users(),
            inputs.bipartite.n_songs(),
            params.n_users,
            params.n_songs
        )));
    }

    let mut modality_users = BTreeMap::new();
    let mut modality_items = BTreeMap::new();
    for &m in &params.modalities {
        let features = inputs.features.get(&m).ok_or_else(|| {
            Error::Shape(format!("features for modality {:?} not available", m.tag()))
        })?;
        let item0 = item_layer0(features, &params.projections[&m])?;
        let (u, i) =
            propagate_bipartite(inputs.bipartite, &params.user_tables[&m], &item0, params.layers)?;
        modality_users.insert(m, u);
        modality_items.insert(m, i);
    }

    let social_users = match &params.social_table {
        Some(table) => Some(propagate_social(inputs.social, table, params.social_layers)?),
        None => None,
    };

    let user_blocks: Vec<&Array2<f64>> =
        params.modalities.iter().map(|m| &modality_users[m]).collect();
    let concat = concat_user_blocks(&user_blocks, social_users.as_ref());
    let user_final = fuse_concat(&concat, &params.fuse_weight)?;

    let weights = item_weights(&params.item_weight_logits);
    let item_blocks: Vec<&Array2<f64>> =
        params.modalities.iter().map(|m| &modality_items[m]).collect();
    let item_final = fuse_item(&item_blocks, &weights)?;

    let (emotion_profiles, song_emotion) = match (params.flags.no_emotion, inputs.emotion) {
        (false, Some(table)) => (
            Some(emotion_profile(inputs.bipartite, table)?),
            Some(table.rows.clone()),
        ),
        _ => (None, None),
    };

    Ok(ForwardState {
        modality_users,
        modality_items,
        social_users,
        concat,
        user_final,
        item_final,
        item_weights: weights,
        emotion_profiles,
        song_emotion,
    })
}

/// Final prediction: fused dot product plus the emotion-affinity bonus.
pub fn score(state: &ForwardState, u: usize, i: usize, lambda_emotion: f64) -> f64 {
    let dot = state.user_final.row(u).dot(&state.item_final.row(i));
    match (&state.emotion_profiles, &state.song_emotion) {
        (Some(profiles), Some(emotion)) if lambda_emotion != 0.0 => {
            let affinity = cosine(
                profiles.row(u).as_slice().expect("contiguous row"),
                emotion.row(i).as_slice().expect("contiguous row"),
            );
            dot + lambda_emotion * affinity
        }
        _ => dot,
    }
}

/// Per-modality score feeding the mutual-learning distributions: a plain
/// dot product, no emotion term.
pub fn modality_score(state: &ForwardState, m: Modality, u: usize, i: usize) -> f64 {
    state.modality_users[&m].row(u).dot(&state.modality_items[&m].row(i))
}

/// Rank every song not excluded, best first; ties broken by ascending
/// song index so rankings are deterministic.
pub fn score_all(
    state: &ForwardState,
    u: usize,
    exclude: &HashSet<usize>,
    lambda_emotion: f64,
) -> Vec<(usize, f64)> {
    let n_songs = state.item_final.nrows();
    let mut ranked: Vec<(usize, f64)> = (0..n_songs)
        .filter(|i| !exclude.contains(i))
        .map(|i| (i, score(state, u, i, lambda_emotion)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}
