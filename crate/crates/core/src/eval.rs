//! Top-K ranking metrics with train-item exclusion.
//!
//! Every user's candidate list is the full catalog minus their train
//! interactions; nothing is subsampled at evaluation time. The report
//! carries two blocks. The `all` block scores against every held-out
//! item. The `cold` block is the new-song scenario: candidates and
//! relevance are both restricted to cold songs (songs with no train
//! interactions anywhere), so cold items compete only with each other
//! and are ranked purely by what their projected features say. Users
//! with an empty relevant set are skipped, not counted as zeros.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{score_all, ForwardState};

/// Fraction of the top-K that is relevant.
pub fn precision_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> f64 {
    assert!(k >= 1, "K must be at least 1");
    let hits = ranked.iter().take(k).filter(|i| relevant.contains(i)).count();
    hits as f64 / k as f64
}

/// Fraction of the relevant set retrieved in the top-K.
/// Callers skip users with empty relevant sets; an empty set yields 0.
pub fn recall_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> f64 {
    assert!(k >= 1, "K must be at least 1");
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranked.iter().take(k).filter(|i| relevant.contains(i)).count();
    hits as f64 / relevant.len() as f64
}

/// Binary-relevance NDCG: DCG = Σ rel(r)/log₂(r+1) over ranks 1..K,
/// normalized by the ideal DCG for min(K, |relevant|) hits.
pub fn ndcg_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> f64 {
    assert!(k >= 1, "K must be at least 1");
    if relevant.is_empty() {
        return 0.0;
    }
    let mut dcg = 0.0;
    for (rank0, item) in ranked.iter().take(k).enumerate() {
        if relevant.contains(item) {
            dcg += 1.0 / ((rank0 + 2) as f64).log2();
        }
    }
    let ideal_hits = k.min(relevant.len());
    let idcg: f64 = (0..ideal_hits).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    dcg / idcg
}

/// Averaged metrics at one cutoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMetrics {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
}

/// One evaluation block (all-test or cold-only relevance).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMetrics {
    pub rows: Vec<KMetrics>,
    /// Users that contributed to the averages.
    pub n_users: usize,
    /// Users skipped for having no relevant items in this block.
    pub n_skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub all: BlockMetrics,
    pub cold: BlockMetrics,
}

struct BlockAccum {
    sums: Vec<[f64; 3]>,
    n_users: usize,
    n_skipped: usize,
}

impl BlockAccum {
    fn new(n_k: usize) -> BlockAccum {
        BlockAccum { sums: vec![[0.0; 3]; n_k], n_users: 0, n_skipped: 0 }
    }

    fn add(&mut self, ranked: &[usize], relevant: &HashSet<usize>, k_list: &[usize]) {
        if relevant.is_empty() {
            self.n_skipped += 1;
            return;
        }
        self.n_users += 1;
        for (ki, &k) in k_list.iter().enumerate() {
            self.sums[ki][0] += precision_at_k(ranked, relevant, k);
            self.sums[ki][1] += recall_at_k(ranked, relevant, k);
            self.sums[ki][2] += ndcg_at_k(ranked, relevant, k);
        }
    }

    fn finish(self, k_list: &[usize], denom: f64) -> BlockMetrics {
        let rows = k_list
            .iter()
            .enumerate()
            .map(|(ki, &k)| {
                let [p, r, n] = self.sums[ki];
                if denom > 0.0 {
                    KMetrics { k, precision: p / denom, recall: r / denom, ndcg: n / denom }
                } else {
                    KMetrics { k, precision: 0.0, recall: 0.0, ndcg: 0.0 }
                }
            })
            .collect();
        BlockMetrics { rows, n_users: self.n_users, n_skipped: self.n_skipped }
    }
}

fn check_k_list(k_list: &[usize]) -> Result<()> {
    if k_list.is_empty() {
        return Err(Error::Config("K list must not be empty".to_string()));
    }
    if let Some(&k) = k_list.iter().find(|&&k| k == 0) {
        return Err(Error::Config(format!("K cutoffs must be ≥ 1, got {k}")));
    }
    Ok(())
}

/// Rank every user's non-train candidates by model score and average
/// the metrics over users with held-out items.
pub fn evaluate(
    state: &ForwardState,
    dataset: &Dataset,
    k_list: &[usize],
    lambda_emotion: f64,
) -> Result<MetricsReport> {
    check_k_list(k_list)?;
    let train = dataset.train_by_user();
    let test = dataset.test_by_user();
    // cold candidates = cold songs only, so exclude everything warm
    let warm: HashSet<usize> =
        (0..dataset.n_songs()).filter(|&i| !dataset.is_cold(i)).collect();
    let mut all = BlockAccum::new(k_list.len());
    let mut cold = BlockAccum::new(k_list.len());
    for u in 0..dataset.n_users() {
        let exclude: HashSet<usize> = train[u].iter().copied().collect();
        let ranked: Vec<usize> = score_all(state, u, &exclude, lambda_emotion)
            .into_iter()
            .map(|(i, _)| i)
            .collect();
        let relevant: HashSet<usize> = test[u].iter().copied().collect();
        all.add(&ranked, &relevant, k_list);
        let cold_relevant: HashSet<usize> =
            relevant.iter().copied().filter(|&i| dataset.is_cold(i)).collect();
        if cold_relevant.is_empty() {
            cold.add(&[], &cold_relevant, k_list);
        } else {
            let cold_ranked: Vec<usize> = score_all(state, u, &warm, lambda_emotion)
                .into_iter()
                .map(|(i, _)| i)
                .collect();
            cold.add(&cold_ranked, &cold_relevant, k_list);
        }
    }
    let all_n = all.n_users as f64;
    let cold_n = cold.n_users as f64;
    Ok(MetricsReport {
        all: all.finish(k_list, all_n),
        cold: cold.finish(k_list, cold_n),
    })
}

/// The same reduction as [`evaluate`] over uniformly shuffled rankings,
/// averaged over `trials` independent shuffles.
pub fn random_baseline(
    dataset: &Dataset,
    k_list: &[usize],
    seed: u64,
    trials: usize,
) -> Result<MetricsReport> {
    check_k_list(k_list)?;
    if trials == 0 {
        return Err(Error::Config("random baseline needs at least one trial".to_string()));
    }
    let train = dataset.train_by_user();
    let test = dataset.test_by_user();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut all = BlockAccum::new(k_list.len());
    let mut cold = BlockAccum::new(k_list.len());
    for _ in 0..trials {
        for u in 0..dataset.n_users() {
            let exclude: HashSet<usize> = train[u].iter().copied().collect();
            let mut ranked: Vec<usize> =
                (0..dataset.n_songs()).filter(|i| !exclude.contains(i)).collect();
            ranked.shuffle(&mut rng);
            let relevant: HashSet<usize> = test[u].iter().copied().collect();
            all.add(&ranked, &relevant, k_list);
            let cold_relevant: HashSet<usize> =
                relevant.iter().copied().filter(|&i| dataset.is_cold(i)).collect();
            if cold_relevant.is_empty() {
                cold.add(&[], &cold_relevant, k_list);
            } else {
                let mut cold_ranked = dataset.cold_songs.clone();
                cold_ranked.shuffle(&mut rng);
                cold.add(&cold_ranked, &cold_relevant, k_list);
            }
        }
    }
    // the skip pattern repeats identically every trial
    let all_users = all.n_users / trials;
    let all_skipped = all.n_skipped / trials;
    let cold_users = cold.n_users / trials;
    let cold_skipped = cold.n_skipped / trials;
    let mut all = all.finish(k_list, (all_users * trials) as f64);
    let mut cold = cold.finish(k_list, (cold_users * trials) as f64);
    all.n_users = all_users;
    all.n_skipped = all_skipped;
    cold.n_users = cold_users;
    cold.n_skipped = cold_skipped;
    Ok(MetricsReport { all, cold })
}

/// Serialize as `split,k,precision,recall,ndcg,n_users` rows.
pub fn metrics_csv(report: &MetricsReport) -> String {
    let mut out = String::from("split,k,precision,recall,ndcg,n_users\n");
    for (name, block) in [("all", &report.all), ("cold", &report.cold)] {
        for row in &block.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                name, row.k, row.precision, row.recall, row.ndcg, block.n_users
            )
            .expect("writing to a String cannot fail");
        }
    }
    out
}

pub fn write_metrics_csv(report: &MetricsReport, path: &Path) -> Result<()> {
    fs::write(path, metrics_csv(report)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainConfig;
    use crate::dataset::{generate_synthetic, Modality, SyntheticSpec};
    use crate::graph::build_graphs;
    use crate::model::{forward, init_params, ModelInputs};
    use ndarray::{Array1, Array2};
    use std::collections::BTreeMap;

    fn rel(items: &[usize]) -> HashSet<usize> {
        items.iter().copied().collect()
    }

    #[test]
    fn precision_anchors() {
        let ranked: Vec<usize> = (0..10).collect();
        assert!((precision_at_k(&ranked, &rel(&[0, 5, 9]), 10) - 0.3).abs() < 1e-12);
        assert!((precision_at_k(&ranked, &rel(&[0, 1, 2]), 3) - 1.0).abs() < 1e-12);
        assert_eq!(precision_at_k(&ranked, &rel(&[]), 10), 0.0);
        assert_eq!(precision_at_k(&[], &rel(&[1]), 5), 0.0);
    }

    #[test]
    fn recall_anchors() {
        let ranked: Vec<usize> = (0..10).collect();
        assert!((recall_at_k(&ranked, &rel(&[3, 7]), 10) - 1.0).abs() < 1e-12);
        assert!((recall_at_k(&ranked, &rel(&[3, 70]), 10) - 0.5).abs() < 1e-12);
        assert_eq!(recall_at_k(&ranked, &rel(&[70, 80]), 10), 0.0);
    }

    #[test]
    fn ndcg_anchors() {
        let ranked: Vec<usize> = (0..10).collect();
        // perfect ranking at K = |relevant|
        assert!((ndcg_at_k(&ranked, &rel(&[0, 1, 2]), 3) - 1.0).abs() < 1e-12);
        // single relevant item at rank 2 → 1/log₂3
        assert!((ndcg_at_k(&ranked, &rel(&[1]), 5) - 0.6309297535714574).abs() < 1e-12);
        assert_eq!(ndcg_at_k(&ranked, &rel(&[70]), 5), 0.0);
        // hand DCG: hits at ranks 1 and 3 of K=3, |rel|=2
        // dcg = 1 + 1/2, idcg = 1 + 1/log₂3
        let got = ndcg_at_k(&ranked, &rel(&[0, 2]), 3);
        let want = 1.5 / (1.0 + 1.0 / 3f64.log2());
        assert!((got - want).abs() < 1e-12);
    }

    /// A forward state whose scores are given directly: d = n_users,
    /// user u is the u-th basis vector, so score(u, i) = scores[i][u].
    fn planted_state(scores: &Array2<f64>) -> ForwardState {
        let n_users = scores.ncols();
        let mut user_final = Array2::zeros((n_users, n_users));
        for u in 0..n_users {
            user_final[[u, u]] = 1.0;
        }
        ForwardState {
            modality_users: BTreeMap::new(),
            modality_items: BTreeMap::new(),
            social_users: None,
            concat: Array2::zeros((n_users, 0)),
            user_final,
            item_final: scores.clone(),
            item_weights: Array1::zeros(0),
            emotion_profiles: None,
            song_emotion: None,
        }
    }

    fn toy_dataset(
        n_users: usize,
        n_songs: usize,
        train: Vec<(usize, usize)>,
        test: Vec<(usize, usize)>,
        cold_songs: Vec<usize>,
    ) -> Dataset {
        Dataset {
            user_ids: (0..n_users).map(|u| format!("u{u}")).collect(),
            song_ids: (0..n_songs).map(|s| format!("s{s}")).collect(),
            train,
            test,
            cold_songs,
            social_edges: vec![],
            features: BTreeMap::new(),
            emotion: None,
            split: crate::dataset::SplitParams { test_fraction: 0.2, cold_fraction: 0.0, seed: 0 },
            dropped_users: 0,
            warnings: vec![],
        }
    }

    #[test]
    fn perfect_model_scores_one_everywhere() {
        // 3 users, 6 songs; each user's single test item gets the top score.
        let mut scores = Array2::zeros((6, 3));
        scores[[3, 0]] = 10.0;
        scores[[4, 1]] = 10.0;
        scores[[5, 2]] = 10.0;
        let state = planted_state(&scores);
        let ds = toy_dataset(
            3,
            6,
            vec![(0, 0), (1, 1), (2, 2)],
            vec![(0, 3), (1, 4), (2, 5)],
            vec![],
        );
        let report = evaluate(&state, &ds, &[1], 0.0).unwrap();
        let row = report.all.rows[0];
        assert!((row.precision - 1.0).abs() < 1e-12);
        assert!((row.recall - 1.0).abs() < 1e-12);
        assert!((row.ndcg - 1.0).abs() < 1e-12);
        assert_eq!(report.all.n_users, 3);
        assert_eq!(report.all.n_skipped, 0);
    }

    #[test]
    fn k_beyond_catalog_saturates_recall() {
        let scores = Array2::zeros((5, 2));
        let state = planted_state(&scores);
        let ds = toy_dataset(2, 5, vec![(0, 0), (1, 1)], vec![(0, 2), (0, 3), (1, 4)], vec![]);
        let report = evaluate(&state, &ds, &[100], 0.0).unwrap();
        assert!((report.all.rows[0].recall - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_test_users_are_skipped_not_zeroed() {
        let mut scores = Array2::zeros((4, 3));
        scores[[2, 0]] = 5.0;
        let state = planted_state(&scores);
        // user 2 has no test items; users 0 and 1 each have one.
        let ds = toy_dataset(3, 4, vec![(0, 0), (1, 0), (2, 0)], vec![(0, 2), (1, 3)], vec![]);
        let report = evaluate(&state, &ds, &[1], 0.0).unwrap();
        assert_eq!(report.all.n_users, 2);
        assert_eq!(report.all.n_skipped, 1);
        // user 0 hits (precision 1), user 1 misses (item 3 ranks below 2's 5.0? —
        // zero scores tie, broken by ascending index: user 1 sees [1? no, 1 is
        // train-excluded] → candidates (1,2,3) minus train {0} = ranked 1,2,3
        // by tie → top-1 is 1, miss). Average precision = 0.5.
        assert!((report.all.rows[0].precision - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cold_block_restricts_relevance() {
        let mut scores = Array2::zeros((5, 2));
        scores[[3, 0]] = 9.0; // user 0's top pick is cold song 3
        scores[[2, 1]] = 9.0; // user 1's top pick is warm song 2
        let state = planted_state(&scores);
        let ds = toy_dataset(
            2,
            5,
            vec![(0, 0), (1, 0)],
            vec![(0, 3), (0, 2), (1, 2)],
            vec![3], // song 3 is cold
        );
        let report = evaluate(&state, &ds, &[1], 0.0).unwrap();
        // cold block: only user 0 has a cold relevant item, and it ranks first
        assert_eq!(report.cold.n_users, 1);
        assert_eq!(report.cold.n_skipped, 1);
        assert!((report.cold.rows[0].precision - 1.0).abs() < 1e-12);
        assert!((report.cold.rows[0].recall - 1.0).abs() < 1e-12);
    }

    fn trained_small() -> (Dataset, ForwardState, f64) {
        let spec = SyntheticSpec {
            n_users: 10,
            n_songs: 20,
            n_groups: 2,
            seed: 31,
            feature_dims: {
                let mut m = BTreeMap::new();
                m.insert(Modality::Lyrics, 4);
                m.insert(Modality::Audio, 3);
                m.insert(Modality::Visual, 3);
                m
            },
            ..Default::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let graphs = build_graphs(&ds).unwrap();
        let cfg = TrainConfig { embedding_dim: 5, seed: 31, ..Default::default() };
        let params = init_params(&cfg, ds.n_users(), ds.n_songs(), &ds.feature_dims()).unwrap();
        let inputs = ModelInputs {
            bipartite: &graphs.bipartite,
            social: &graphs.social,
            features: &ds.features,
            emotion: ds.emotion.as_ref(),
        };
        let state = forward(&params, &inputs).unwrap();
        (ds, state, params.lambda_emotion)
    }

    /// From-scratch reimplementation: sort candidates by (−score, index),
    /// then count hits directly from first principles.
    #[test]
    fn matches_brute_force_oracle() {
        let (ds, state, lam) = trained_small();
        let k_list = [1, 3, 5, 10, 50];
        let report = evaluate(&state, &ds, &k_list, lam).unwrap();

        let train = ds.train_by_user();
        let test = ds.test_by_user();
        let mut sums = vec![[0.0f64; 3]; k_list.len()];
        let mut n_eval = 0usize;
        for u in 0..ds.n_users() {
            if test[u].is_empty() {
                continue;
            }
            n_eval += 1;
            let mut cand: Vec<(usize, f64)> = (0..ds.n_songs())
                .filter(|i| !train[u].contains(i))
                .map(|i| (i, crate::model::score(&state, u, i, lam)))
                .collect();
            cand.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            for (ki, &k) in k_list.iter().enumerate() {
                let topk: Vec<usize> = cand.iter().take(k).map(|&(i, _)| i).collect();
                let hits = topk.iter().filter(|i| test[u].contains(i)).count();
                sums[ki][0] += hits as f64 / k as f64;
                sums[ki][1] += hits as f64 / test[u].len() as f64;
                let mut dcg = 0.0;
                for (r, i) in topk.iter().enumerate() {
                    if test[u].contains(i) {
                        dcg += std::f64::consts::LN_2 / ((r + 2) as f64).ln();
                    }
                }
                let mut idcg = 0.0;
                for r in 0..k.min(test[u].len()) {
                    idcg += std::f64::consts::LN_2 / ((r + 2) as f64).ln();
                }
                sums[ki][2] += dcg / idcg;
            }
        }
        assert_eq!(report.all.n_users, n_eval);
        for (ki, row) in report.all.rows.iter().enumerate() {
            assert!((row.precision - sums[ki][0] / n_eval as f64).abs() < 1e-9);
            assert!((row.recall - sums[ki][1] / n_eval as f64).abs() < 1e-9);
            assert!((row.ndcg - sums[ki][2] / n_eval as f64).abs() < 1e-9);
        }

        // cold block: candidates are the cold songs themselves
        let mut cold_sums = vec![[0.0f64; 3]; k_list.len()];
        let mut cold_eval = 0usize;
        for u in 0..ds.n_users() {
            let cold_rel: Vec<usize> =
                test[u].iter().copied().filter(|&i| ds.is_cold(i)).collect();
            if cold_rel.is_empty() {
                continue;
            }
            cold_eval += 1;
            let mut cand: Vec<(usize, f64)> = ds
                .cold_songs
                .iter()
                .map(|&i| (i, crate::model::score(&state, u, i, lam)))
                .collect();
            cand.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            for (ki, &k) in k_list.iter().enumerate() {
                let topk: Vec<usize> = cand.iter().take(k).map(|&(i, _)| i).collect();
                let hits = topk.iter().filter(|i| cold_rel.contains(i)).count();
                cold_sums[ki][0] += hits as f64 / k as f64;
                cold_sums[ki][1] += hits as f64 / cold_rel.len() as f64;
            }
        }
        assert_eq!(report.cold.n_users, cold_eval);
        if cold_eval > 0 {
            for (ki, row) in report.cold.rows.iter().enumerate() {
                assert!((row.precision - cold_sums[ki][0] / cold_eval as f64).abs() < 1e-9);
                assert!((row.recall - cold_sums[ki][1] / cold_eval as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn train_items_never_recommended() {
        let (ds, state, lam) = trained_small();
        let train = ds.train_by_user();
        for u in 0..ds.n_users() {
            let exclude: HashSet<usize> = train[u].iter().copied().collect();
            for (i, _) in score_all(&state, u, &exclude, lam) {
                assert!(!exclude.contains(&i));
            }
        }
    }

    #[test]
    fn recall_is_monotone_in_k() {
        let (ds, state, lam) = trained_small();
        let report = evaluate(&state, &ds, &[1, 2, 5, 10, 20], lam).unwrap();
        for w in report.all.rows.windows(2) {
            assert!(w[1].recall >= w[0].recall - 1e-12);
        }
    }

    #[test]
    fn all_metrics_bounded() {
        let (ds, state, lam) = trained_small();
        let report = evaluate(&state, &ds, &[1, 5, 10], lam).unwrap();
        for block in [&report.all, &report.cold] {
            for row in &block.rows {
                for v in [row.precision, row.recall, row.ndcg] {
                    assert!((0.0..=1.0).contains(&v), "{v} out of range");
                }
            }
        }
    }

    #[test]
    fn random_baseline_is_deterministic_and_bounded() {
        let (ds, _, _) = trained_small();
        let a = random_baseline(&ds, &[5, 10], 99, 3).unwrap();
        let b = random_baseline(&ds, &[5, 10], 99, 3).unwrap();
        assert_eq!(a, b);
        let c = random_baseline(&ds, &[5, 10], 100, 3).unwrap();
        assert_ne!(a, c);
        for row in &a.all.rows {
            assert!(row.precision > 0.0 || row.recall >= 0.0);
            assert!(row.recall <= 1.0);
        }
        assert_eq!(a.all.n_users, b.all.n_users);
    }

    #[test]
    fn random_baseline_recall_near_expectation() {
        // With ~20 candidates and K=10 the expected recall is ≈ 1/2
        // regardless of |relevant|; 200 trials keeps the spread small.
        let (ds, _, _) = trained_small();
        let report = random_baseline(&ds, &[10], 7, 200).unwrap();
        let got = report.all.rows[0].recall;
        assert!((0.3..0.75).contains(&got), "recall {got}");
    }

    #[test]
    fn csv_has_expected_shape() {
        let (ds, state, lam) = trained_small();
        let report = evaluate(&state, &ds, &[5, 10], lam).unwrap();
        let csv = metrics_csv(&report);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "split,k,precision,recall,ndcg,n_users");
        assert_eq!(lines.len(), 1 + 4);
        assert!(lines[1].starts_with("all,5,"));
        assert!(lines[3].starts_with("cold,5,"));
    }

    #[test]
    fn zero_k_and_empty_list_rejected() {
        let (ds, state, lam) = trained_small();
        assert!(evaluate(&state, &ds, &[], lam).is_err());
        assert!(evaluate(&state, &ds, &[5, 0], lam).is_err());
        assert!(random_baseline(&ds, &[5], 1, 0).is_err());
    }
}
