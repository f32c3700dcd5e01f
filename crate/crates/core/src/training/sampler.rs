//! Uniform BPR triple sampling with rejection of observed interactions.

use rand::Rng;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;

/// One training example: a (user, positive, negative) ranking triple and
/// the candidate set the mutual-learning distributions are built over.
#[derive(Debug, Clone)]
pub struct Triple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
    /// `candidates[0]` is the positive; the rest are distinct sampled
    /// negatives, none interacted with by `user` in train.
    pub candidates: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub triples: Vec<Triple>,
}

const REJECTION_LIMIT: usize = 100;

/// Draw one song outside `N_u`; None if the limit is hit.
fn sample_negative<R: Rng>(
    graph: &BipartiteGraph,
    user: usize,
    taken: &[usize],
    rng: &mut R,
) -> Option<usize> {
    let n_songs = graph.n_songs();
    for _ in 0..REJECTION_LIMIT {
        let i = rng.random_range(0..n_songs);
        if !graph.user_song.contains(user, i) && !taken.contains(&i) {
            return Some(i);
        }
    }
    None
}

/// Sample `batch_size` positives uniformly over train interactions; each
/// yields `negatives_per_positive` triples. Negatives are uniform over
/// the catalog with rejection of the user's train items (up to 100
/// attempts, then the positive is redrawn). Candidate negatives for the
/// mutual loss are drawn the same way but kept distinct within a triple;
/// they are always drawn, so ablating the mutual loss does not perturb
/// the RNG stream.
pub fn sample_batch<R: Rng>(
    graph: &BipartiteGraph,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Batch> {
    let nnz = graph.user_song.nnz();
    if nnz == 0 {
        return Err(Error::SamplingExhausted("no train interactions to sample".to_string()));
    }
    let n_songs = graph.n_songs();
    let want = config.batch_size * config.negatives_per_positive;
    let mut triples = Vec::with_capacity(want);
    // hard cap so a pathological graph (every user saturating the
    // catalog) errors out instead of spinning
    let mut attempts_left = config.batch_size * 1000;

    while triples.len() < want {
        if attempts_left == 0 {
            return Err(Error::SamplingExhausted(format!(
                "could not sample a batch: sampled users interact with all {n_songs} songs"
            )));
        }
        attempts_left -= 1;

        let (user, pos) = graph.user_song.edge_endpoints(rng.random_range(0..nnz));
        if graph.user_song.neighbors(user).len() >= n_songs {
            continue; // user saturates the catalog: no negative exists
        }
        let mut ok = true;
        let mut drawn = Vec::with_capacity(config.negatives_per_positive);
        for _ in 0..config.negatives_per_positive {
            match sample_negative(graph, user, &[], rng) {
                Some(neg) => drawn.push(neg),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        for neg in drawn {
            // distinct candidate negatives; a pool smaller than requested
            // just yields a shorter candidate list
            let pool = n_songs - graph.user_song.neighbors(user).len();
            let quota = config.candidate_negatives.min(pool);
            let mut candidates = Vec::with_capacity(1 + quota);
            candidates.push(pos);
            let mut taken = Vec::with_capacity(quota);
            while taken.len() < quota {
                match sample_negative(graph, user, &taken, rng) {
                    Some(c) => taken.push(c),
                    None => break,
                }
            }
            candidates.extend_from_slice(&taken);
            triples.push(Triple {
                user,
                pos,
                neg,
                candidates,
            });
        }
    }
    Ok(Batch { triples })
}
