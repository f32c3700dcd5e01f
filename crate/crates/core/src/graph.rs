//! Compressed sparse adjacency for the user-song bipartite graph and the
//! user-user social graph, with symmetric degree normalization.
//!
//! A [`CsrView`] is a sparse matrix `Â` with entry `1/sqrt(deg(r)·deg(c))`
//! for every edge `(r, c)`, stored row-major. [`BipartiteGraph`] keeps two
//! views of the same edge set (user rows and song rows) that are exact
//! transposes of one another.

use ndarray::Array2;

use crate::error::{Error, Result};

/// One direction of a normalized sparse adjacency matrix in CSR form.
///
/// Rows are the aggregation targets: `spmv` computes
/// `out[r] = Σ_{c ∈ N(r)} weight(r, c) · input[c]`.
#[derive(Debug, Clone)]
pub struct CsrView {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
}

impl CsrView {
    fn from_edges(edges: &[(usize, usize)], degrees_row: &[usize], degrees_col: &[usize]) -> Self {
        let n_rows = degrees_row.len();
        let n_cols = degrees_col.len();
        let mut offsets = vec![0usize; n_rows + 1];
        for &(r, _) in edges {
            offsets[r + 1] += 1;
        }
        for r in 0..n_rows {
            offsets[r + 1] += offsets[r];
        }
        let mut indices = vec![0usize; edges.len()];
        let mut weights = vec![0f64; edges.len()];
        let mut cursor = offsets.clone();
        for &(r, c) in edges {
            let slot = cursor[r];
            indices[slot] = c;
            weights[slot] = 1.0 / ((degrees_row[r] * degrees_col[c]) as f64).sqrt();
            cursor[r] += 1;
        }
        // neighbor lists sorted by column index
        for r in 0..n_rows {
            let (lo, hi) = (offsets[r], offsets[r + 1]);
            let mut order: Vec<usize> = (lo..hi).collect();
            order.sort_by_key(|&k| indices[k]);
            let sorted_idx: Vec<usize> = order.iter().map(|&k| indices[k]).collect();
            let sorted_w: Vec<f64> = order.iter().map(|&k| weights[k]).collect();
            indices[lo..hi].copy_from_slice(&sorted_idx);
            weights[lo..hi].copy_from_slice(&sorted_w);
        }
        CsrView {
            offsets,
            indices,
            weights,
            n_rows,
            n_cols,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Neighbor indices of row `r`, sorted ascending.
    pub fn neighbors(&self, r: usize) -> &[usize] {
        &self.indices[self.offsets[r]..self.offsets[r + 1]]
    }

    pub fn edge_weights(&self, r: usize) -> &[f64] {
        &self.weights[self.offsets[r]..self.offsets[r + 1]]
    }

    /// Membership test via binary search over the sorted neighbor list.
    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.neighbors(r).binary_search(&c).is_ok()
    }

    /// The `e`-th stored edge as `(row, col)`, `e < nnz()`. Lets callers
    /// draw uniformly over edges without materializing a pair list.
    pub fn edge_endpoints(&self, e: usize) -> (usize, usize) {
        debug_assert!(e < self.nnz());
        // offsets is non-decreasing: find the row whose range contains e
        let r = self.offsets.partition_point(|&o| o <= e) - 1;
        (r, self.indices[e])
    }

    /// Sparse matrix times dense matrix: `out = Â · input`.
    ///
    /// `input` is `[n_cols × d]`; the result is `[n_rows × d]`. Zero-degree
    /// rows come out as zero vectors.
    pub fn spmv(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        if input.nrows() != self.n_cols {
            return Err(Error::Shape(format!(
                "spmv expects {} input rows, got {}",
                self.n_cols,
                input.nrows()
            )));
        }
        let d = input.ncols();
        let mut out = Array2::<f64>::zeros((self.n_rows, d));
        for r in 0..self.n_rows {
            let (lo, hi) = (self.offsets[r], self.offsets[r + 1]);
            let mut out_row = out.row_mut(r);
            for k in lo..hi {
                let c = self.indices[k];
                let w = self.weights[k];
                let in_row = input.row(c);
                for (o, &x) in out_row.iter_mut().zip(in_row.iter()) {
                    *o += w * x;
                }
            }
        }
        Ok(out)
    }
}

/// User-song interaction graph shared by all modality channels.
#[derive(Debug, Clone)]
pub struct BipartiteGraph {
    /// `Â_{u←i}`: rows are users, neighbors are songs.
    pub user_song: CsrView,
    /// `Â_{i←u}`: rows are songs, neighbors are users. Exact transpose of `user_song`.
    pub song_user: CsrView,
    pub user_degrees: Vec<usize>,
    pub song_degrees: Vec<usize>,
}

impl BipartiteGraph {
    pub fn n_users(&self) -> usize {
        self.user_degrees.len()
    }

    pub fn n_songs(&self) -> usize {
        self.song_degrees.len()
    }
}

/// Build the bipartite graph from train interactions.
pub fn build_bipartite(
    interactions: &[(usize, usize)],
    n_users: usize,
    n_songs: usize,
) -> Result<BipartiteGraph> {
    let mut user_degrees = vec![0usize; n_users];
    let mut song_degrees = vec![0usize; n_songs];
    for &(u, i) in interactions {
        if u >= n_users || i >= n_songs {
            return Err(Error::GraphBuild(format!(
                "interaction ({u}, {i}) out of range for {n_users} users × {n_songs} songs"
            )));
        }
        user_degrees[u] += 1;
        song_degrees[i] += 1;
    }
    let user_song = CsrView::from_edges(interactions, &user_degrees, &song_degrees);
    let transposed: Vec<(usize, usize)> = interactions.iter().map(|&(u, i)| (i, u)).collect();
    let song_user = CsrView::from_edges(&transposed, &song_degrees, &user_degrees);
    Ok(BipartiteGraph {
        user_song,
        song_user,
        user_degrees,
        song_degrees,
    })
}

/// Symmetric user-user friendship graph.
#[derive(Debug, Clone)]
pub struct SocialGraph {
    /// `Â_soc`: symmetric normalized adjacency over users.
    pub adj: CsrView,
    pub degrees: Vec<usize>,
    /// Self-loop edges dropped during the build.
    pub self_loops_rejected: usize,
}

impl SocialGraph {
    pub fn n_users(&self) -> usize {
        self.degrees.len()
    }
}

/// Build the social graph: symmetrized, deduplicated, self-loops dropped.
pub fn build_social(edges: &[(usize, usize)], n_users: usize) -> Result<SocialGraph> {
    let mut undirected: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
    let mut self_loops_rejected = 0usize;
    for &(a, b) in edges {
        if a >= n_users || b >= n_users {
            return Err(Error::GraphBuild(format!(
                "social edge ({a}, {b}) out of range for {n_users} users"
            )));
        }
        if a == b {
            self_loops_rejected += 1;
            continue;
        }
        undirected.push((a.min(b), a.max(b)));
    }
    undirected.sort_unstable();
    undirected.dedup();

    let mut directed: Vec<(usize, usize)> = Vec::with_capacity(undirected.len() * 2);
    for &(a, b) in &undirected {
        directed.push((a, b));
        directed.push((b, a));
    }
    let mut degrees = vec![0usize; n_users];
    for &(a, _) in &directed {
        degrees[a] += 1;
    }
    let adj = CsrView::from_edges(&directed, &degrees, &degrees);
    Ok(SocialGraph {
        adj,
        degrees,
        self_loops_rejected,
    })
}

/// Both propagation graphs, built from a dataset's train split.
#[derive(Debug, Clone)]
pub struct Graphs {
    pub bipartite: BipartiteGraph,
    pub social: SocialGraph,
}

pub fn build_graphs(dataset: &crate::dataset::Dataset) -> Result<Graphs> {
    Ok(Graphs {
        bipartite: build_bipartite(&dataset.train, dataset.n_users(), dataset.n_songs())?,
        social: build_social(&dataset.social_edges, dataset.n_users())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    /// Dense `D^{-1/2} A D^{-1/2}` oracle over the same edge set.
    fn dense_normalized(edges: &[(usize, usize)], n_rows: usize, n_cols: usize) -> Array2<f64> {
        let mut deg_r = vec![0usize; n_rows];
        let mut deg_c = vec![0usize; n_cols];
        for &(r, c) in edges {
            deg_r[r] += 1;
            deg_c[c] += 1;
        }
        let mut m = Array2::<f64>::zeros((n_rows, n_cols));
        for &(r, c) in edges {
            m[[r, c]] = 1.0 / ((deg_r[r] * deg_c[c]) as f64).sqrt();
        }
        m
    }

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn single_edge_weight_is_one() {
        let g = build_bipartite(&[(0, 0)], 1, 1).unwrap();
        assert_eq!(g.user_song.edge_weights(0), &[1.0]);
        assert_eq!(g.song_user.edge_weights(0), &[1.0]);
    }

    #[test]
    fn edge_endpoints_enumerate_all_edges() {
        // includes an empty row (user 1) to exercise repeated offsets
        let edges = [(0, 1), (0, 3), (2, 0), (2, 2), (2, 3), (3, 1)];
        let g = build_bipartite(&edges, 4, 4).unwrap();
        let mut seen: Vec<(usize, usize)> = (0..g.user_song.nnz())
            .map(|e| g.user_song.edge_endpoints(e))
            .collect();
        seen.sort_unstable();
        let mut expected = edges.to_vec();
        expected.sort_unstable();
        assert_eq!(seen, expected);
    }

    #[test]
    fn fan_out_weights_match_dense_oracle() {
        // u0 connected to 4 degree-1 songs: each weight 1/sqrt(4·1) = 0.5
        let edges = [(0, 0), (0, 1), (0, 2), (0, 3)];
        let g = build_bipartite(&edges, 1, 4).unwrap();
        assert_eq!(g.user_song.edge_weights(0), &[0.5, 0.5, 0.5, 0.5]);
        let oracle = dense_normalized(&edges, 1, 4);
        for (k, &s) in g.user_song.neighbors(0).iter().enumerate() {
            assert_eq!(g.user_song.edge_weights(0)[k], oracle[[0, s]]);
        }
    }

    #[test]
    fn empty_edge_set_builds() {
        let g = build_bipartite(&[], 3, 2).unwrap();
        assert_eq!(g.user_song.nnz(), 0);
        let out = g.user_song.spmv(&Array2::zeros((2, 4))).unwrap();
        assert_eq!(out.shape(), &[3, 4]);
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(build_bipartite(&[(0, 5)], 2, 3).is_err());
        assert!(build_social(&[(0, 9)], 4).is_err());
    }

    #[test]
    fn social_symmetrized_and_deduped() {
        let g = build_social(&[(0, 1), (1, 0)], 3).unwrap();
        assert_eq!(g.adj.neighbors(0), &[1]);
        assert_eq!(g.adj.neighbors(1), &[0]);
        assert_eq!(g.adj.nnz(), 2);
    }

    #[test]
    fn social_self_loop_rejected_with_count() {
        let g = build_social(&[(0, 0), (0, 1)], 2).unwrap();
        assert_eq!(g.self_loops_rejected, 1);
        assert_eq!(g.adj.neighbors(0), &[1]);
    }

    #[test]
    fn triangle_weights_match_dense_oracle() {
        // a-b-c triangle, all degrees 2: every weight 1/2
        let g = build_social(&[(0, 1), (1, 2), (2, 0)], 3).unwrap();
        for u in 0..3 {
            for &w in g.adj.edge_weights(u) {
                assert!((w - 0.5).abs() < 1e-15);
            }
        }
        let directed: Vec<(usize, usize)> = vec![(0, 1), (1, 0), (1, 2), (2, 1), (2, 0), (0, 2)];
        let oracle = dense_normalized(&directed, 3, 3);
        let x = arr2(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let got = g.adj.spmv(&x).unwrap();
        let want = oracle.dot(&x);
        assert!(max_abs_diff(&got, &want) < 1e-12);
    }

    #[test]
    fn spmv_identity_edge_passes_row_through() {
        let g = build_bipartite(&[(0, 0)], 1, 1).unwrap();
        let x = arr2(&[[2.0, -3.0, 0.5]]);
        let out = g.user_song.spmv(&x).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn spmv_shape_mismatch_rejected() {
        let g = build_bipartite(&[(0, 0)], 2, 2).unwrap();
        assert!(g.user_song.spmv(&Array2::zeros((3, 4))).is_err());
    }

    fn random_bipartite(seed: u64, n_users: usize, n_songs: usize) -> Vec<(usize, usize)> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for u in 0..n_users {
            for i in 0..n_songs {
                if rng.random_bool(0.4) {
                    edges.push((u, i));
                }
            }
        }
        edges
    }

    #[test]
    fn spmv_matches_dense_oracle_on_random_graphs() {
        for seed in 0..5u64 {
            let edges = random_bipartite(seed, 8, 8);
            let g = build_bipartite(&edges, 8, 8).unwrap();
            let oracle = dense_normalized(&edges, 8, 8);
            let mut rng = ChaCha20Rng::seed_from_u64(seed + 100);
            let x = Array2::from_shape_fn((8, 5), |_| rng.random_range(-1.0..1.0));
            let got = g.user_song.spmv(&x).unwrap();
            let want = oracle.dot(&x);
            assert!(max_abs_diff(&got, &want) < 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn transpose_views_consistent_with_dense() {
        // user→song view then song→user view equals ÂᵀÂ applied densely
        let edges = random_bipartite(7, 6, 9);
        let g = build_bipartite(&edges, 6, 9).unwrap();
        let a = dense_normalized(&edges, 6, 9);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0));
        let got = g.user_song.spmv(&g.song_user.spmv(&x).unwrap()).unwrap();
        let want = a.dot(&a.t().dot(&x));
        assert!(max_abs_diff(&got, &want) < 1e-10);
    }

    #[test]
    fn edge_weights_in_unit_interval() {
        let edges = random_bipartite(11, 10, 10);
        let g = build_bipartite(&edges, 10, 10).unwrap();
        for r in 0..10 {
            for &w in g.user_song.edge_weights(r) {
                assert!(w > 0.0 && w <= 1.0);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn spmv_is_linear(seed in 0u64..500, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let edges = random_bipartite(seed, 7, 7);
            let g = build_bipartite(&edges, 7, 7).unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xabcd);
            let x = Array2::from_shape_fn((7, 3), |_| rng.random_range(-1.0..1.0));
            let y = Array2::from_shape_fn((7, 3), |_| rng.random_range(-1.0..1.0));
            let combined = g.user_song.spmv(&(a * &x + b * &y)).unwrap();
            let separate = a * &g.user_song.spmv(&x).unwrap() + b * &g.user_song.spmv(&y).unwrap();
            prop_assert!(max_abs_diff(&combined, &separate) < 1e-12);
        }
    }
}
