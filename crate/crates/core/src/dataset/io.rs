//! Flat-file readers and writers for dataset directories.
//!
//! A dataset directory holds `interactions.tsv`, optional `social.tsv`,
//! per-channel `features_{lyr,fre,vis}.txt`, optional `features_emo.txt`,
//! an `id_map.tsv` fixing the raw-id ⇄ index bijection, and a
//! `split.conf` recording the split parameters. Loading re-derives the
//! exact same train/test/cold partition from those parameters.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::config::read_kv_file;
use crate::error::{Error, Result};

use super::{split, Dataset, FeatureTable, Interner, Modality, RawDataset};

/// Lines of a text file with 1-based numbers, comments and blanks removed.
fn content_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end().to_string()))
        .filter(|(_, l)| !l.trim_start().is_empty() && !l.trim_start().starts_with('#'))
        .collect())
}

/// Parse a TAB-separated pair file (`interactions.tsv` / `social.tsv`).
///
/// An optional third numeric column (an interaction weight) is accepted
/// and ignored. Duplicate pairs are dropped, keeping first appearance.
pub fn load_interactions(path: &Path) -> Result<Vec<(String, String)>> {
    let lines = content_lines(path)?;
    let mut seen = std::collections::HashSet::new();
    let mut pairs = Vec::new();
    for (line_no, line) in &lines {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::parse(
                path,
                *line_no,
                format!("expected `id<TAB>id`, got {} field(s)", fields.len()),
            ));
        }
        if fields.len() == 3 {
            fields[2].parse::<f64>().map_err(|_| {
                Error::parse(path, *line_no, format!("bad weight column {:?}", fields[2]))
            })?;
        }
        let pair = (fields[0].to_string(), fields[1].to_string());
        if seen.insert(pair.clone()) {
            pairs.push(pair);
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoInteractions {
            path: path.to_path_buf(),
        });
    }
    Ok(pairs)
}

/// Parse a whitespace-separated feature table.
///
/// The header line is `n_rows dim`; every following row is a song id and
/// `dim` finite reals. Every song in `song_lookup` must have exactly one
/// row, and `n_rows` must equal the catalog size.
pub fn load_feature_table(
    path: &Path,
    song_lookup: &HashMap<String, usize>,
    expected_dim: Option<usize>,
) -> Result<FeatureTable> {
    let lines = content_lines(path)?;
    let mut it = lines.iter();
    let (header_no, header) = it
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing `n_rows dim` header".to_string()))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    let (n_rows, dim) = match head.as_slice() {
        [n, d] => (
            n.parse::<usize>()
                .map_err(|_| Error::parse(path, *header_no, format!("bad row count {n:?}")))?,
            d.parse::<usize>()
                .map_err(|_| Error::parse(path, *header_no, format!("bad dimension {d:?}")))?,
        ),
        _ => {
            return Err(Error::parse(
                path,
                *header_no,
                "header must be `n_rows dim`".to_string(),
            ))
        }
    };
    if n_rows != song_lookup.len() {
        return Err(Error::parse(
            path,
            *header_no,
            format!(
                "header declares {n_rows} rows but the catalog has {} songs",
                song_lookup.len()
            ),
        ));
    }
    if let Some(want) = expected_dim {
        if dim != want {
            return Err(Error::parse(
                path,
                *header_no,
                format!("expected dimension {want}, header declares {dim}"),
            ));
        }
    }
    if dim == 0 {
        return Err(Error::parse(path, *header_no, "dimension must be positive".to_string()));
    }

    let mut rows = Array2::<f64>::zeros((song_lookup.len(), dim));
    let mut filled = vec![false; song_lookup.len()];
    for (line_no, line) in it {
        let mut tok = line.split_whitespace();
        let id = tok.next().unwrap(); // non-blank line guaranteed
        let &song = song_lookup
            .get(id)
            .ok_or_else(|| Error::parse(path, *line_no, format!("unknown song id {id:?}")))?;
        if filled[song] {
            return Err(Error::parse(path, *line_no, format!("duplicate row for song {id:?}")));
        }
        filled[song] = true;
        let mut count = 0;
        for (j, raw) in tok.enumerate() {
            if j >= dim {
                return Err(Error::parse(path, *line_no, format!("more than {dim} values")));
            }
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::parse(path, *line_no, format!("bad value {raw:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, *line_no, format!("non-finite value {raw:?}")));
            }
            rows[[song, j]] = v;
            count = j + 1;
        }
        if count != dim {
            return Err(Error::parse(
                path,
                *line_no,
                format!("expected {dim} values, got {count}"),
            ));
        }
    }
    if let Some(song) = filled.iter().position(|&f| !f) {
        let raw = song_lookup
            .iter()
            .find(|&(_, &idx)| idx == song)
            .map(|(id, _)| id.clone())
            .unwrap_or_else(|| song.to_string());
        return Err(Error::MissingFeature {
            path: path.to_path_buf(),
            song: raw,
        });
    }
    FeatureTable::new(rows)
}

fn load_id_map(path: &Path) -> Result<(Interner, Interner)> {
    let mut users: Vec<Option<String>> = Vec::new();
    let mut songs: Vec<Option<String>> = Vec::new();
    for (line_no, line) in content_lines(path)? {
        let fields: Vec<&str> = line.split('\t').collect();
        let [kind, raw, idx] = fields.as_slice() else {
            return Err(Error::parse(path, line_no, "expected `u|s<TAB>raw<TAB>index`".to_string()));
        };
        let idx: usize = idx
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("bad index {idx:?}")))?;
        let slot = match *kind {
            "u" => &mut users,
            "s" => &mut songs,
            _ => return Err(Error::parse(path, line_no, format!("bad kind {kind:?}"))),
        };
        if idx >= slot.len() {
            slot.resize(idx + 1, None);
        }
        if slot[idx].is_some() {
            return Err(Error::parse(path, line_no, format!("duplicate index {idx}")));
        }
        slot[idx] = Some(raw.to_string());
    }
    let materialize = |slots: Vec<Option<String>>, what: &str| -> Result<Interner> {
        let mut interner = Interner::new();
        for (idx, slot) in slots.into_iter().enumerate() {
            let raw = slot.ok_or_else(|| {
                Error::parse(path, 0, format!("{what} index {idx} missing from id map"))
            })?;
            interner.intern(&raw);
        }
        Ok(interner)
    };
    Ok((materialize(users, "user")?, materialize(songs, "song")?))
}

/// Load a dataset directory and re-derive its split.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mut warnings = Vec::new();

    let id_map_path = dir.join("id_map.tsv");
    let fixed_ids = id_map_path.is_file();
    let (mut users, mut songs) = if fixed_ids {
        load_id_map(&id_map_path)?
    } else {
        (Interner::new(), Interner::new())
    };

    let inter_path = dir.join("interactions.tsv");
    let mut interactions = Vec::new();
    for (u_raw, s_raw) in load_interactions(&inter_path)? {
        let (u, s) = if fixed_ids {
            let u = users.get(&u_raw).ok_or_else(|| {
                Error::parse(&inter_path, 0, format!("user {u_raw:?} not in id map"))
            })?;
            let s = songs.get(&s_raw).ok_or_else(|| {
                Error::parse(&inter_path, 0, format!("song {s_raw:?} not in id map"))
            })?;
            (u, s)
        } else {
            (users.intern(&u_raw), songs.intern(&s_raw))
        };
        interactions.push((u, s));
    }

    let social_path = dir.join("social.tsv");
    let mut social_edges = Vec::new();
    let mut self_loops = 0usize;
    if social_path.is_file() {
        for (a_raw, b_raw) in load_interactions(&social_path)? {
            let (a, b) = if fixed_ids {
                let a = users.get(&a_raw).ok_or_else(|| {
                    Error::parse(&social_path, 0, format!("user {a_raw:?} not in id map"))
                })?;
                let b = users.get(&b_raw).ok_or_else(|| {
                    Error::parse(&social_path, 0, format!("user {b_raw:?} not in id map"))
                })?;
                (a, b)
            } else {
                (users.intern(&a_raw), users.intern(&b_raw))
            };
            if a == b {
                self_loops += 1;
                continue;
            }
            social_edges.push((a.min(b), a.max(b)));
        }
        social_edges.sort_unstable();
        social_edges.dedup();
        if self_loops > 0 {
            warnings.push(format!("dropped {self_loops} social self-loop(s)"));
        }
    } else {
        warnings.push("social.tsv not found; social graph is empty".to_string());
    }

    let song_lookup: HashMap<String, usize> = songs
        .ids()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i))
        .collect();

    let mut features = BTreeMap::new();
    for m in Modality::ALL {
        let path = dir.join(format!("features_{}.txt", m.tag()));
        if path.is_file() {
            features.insert(m, load_feature_table(&path, &song_lookup, None)?);
        } else {
            warnings.push(format!(
                "features_{}.txt not found; {} channel disabled",
                m.tag(),
                m.tag()
            ));
        }
    }
    if features.is_empty() {
        return Err(Error::Config(format!(
            "no modality feature tables found in {}",
            dir.display()
        )));
    }

    let emo_path = dir.join("features_emo.txt");
    let emotion = if emo_path.is_file() {
        let table = load_feature_table(&emo_path, &song_lookup, Some(2))?;
        if table.rows.iter().any(|&v| !(-1.0..=1.0).contains(&v)) {
            warnings.push("emotion table has values outside [-1, 1]".to_string());
        }
        Some(table)
    } else {
        warnings.push("features_emo.txt not found; emotion affinity disabled".to_string());
        None
    };

    let conf_path = dir.join("split.conf");
    let (mut test_fraction, mut cold_fraction, mut seed) = (0.2, 0.1, 42u64);
    if conf_path.is_file() {
        for (line_no, key, value) in read_kv_file(&conf_path)? {
            match key.as_str() {
                "test_fraction" => {
                    test_fraction = value.parse().map_err(|_| {
                        Error::parse(&conf_path, line_no, format!("bad test_fraction {value:?}"))
                    })?
                }
                "cold_fraction" => {
                    cold_fraction = value.parse().map_err(|_| {
                        Error::parse(&conf_path, line_no, format!("bad cold_fraction {value:?}"))
                    })?
                }
                "seed" => {
                    seed = value.parse().map_err(|_| {
                        Error::parse(&conf_path, line_no, format!("bad seed {value:?}"))
                    })?
                }
                other => {
                    return Err(Error::parse(
                        &conf_path,
                        line_no,
                        format!("unknown key {other:?}"),
                    ))
                }
            }
        }
    } else {
        warnings.push("split.conf not found; using default split parameters".to_string());
    }

    let raw = RawDataset {
        user_ids: users.into_ids(),
        song_ids: songs.into_ids(),
        interactions,
        social_edges,
        features,
        emotion,
        warnings,
    };
    split(raw, test_fraction, cold_fraction, seed)
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

/// Write a dataset directory that `load_dataset` reproduces exactly.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut id_map = String::new();
    for (idx, raw) in ds.user_ids.iter().enumerate() {
        writeln!(id_map, "u\t{raw}\t{idx}").unwrap();
    }
    for (idx, raw) in ds.song_ids.iter().enumerate() {
        writeln!(id_map, "s\t{raw}\t{idx}").unwrap();
    }
    write_file(&dir.join("id_map.tsv"), &id_map)?;

    let mut pairs: Vec<(usize, usize)> = ds.train.iter().chain(ds.test.iter()).copied().collect();
    pairs.sort_unstable();
    let mut inter = String::new();
    for (u, i) in pairs {
        writeln!(inter, "{}\t{}", ds.user_ids[u], ds.song_ids[i]).unwrap();
    }
    write_file(&dir.join("interactions.tsv"), &inter)?;

    if !ds.social_edges.is_empty() {
        let mut social = String::new();
        for &(a, b) in &ds.social_edges {
            writeln!(social, "{}\t{}", ds.user_ids[a], ds.user_ids[b]).unwrap();
        }
        write_file(&dir.join("social.tsv"), &social)?;
    }

    let write_table = |tag: &str, table: &FeatureTable| -> Result<()> {
        let mut out = String::new();
        writeln!(out, "{} {}", ds.n_songs(), table.dim).unwrap();
        for (idx, raw) in ds.song_ids.iter().enumerate() {
            write!(out, "{raw}").unwrap();
            for j in 0..table.dim {
                write!(out, " {}", table.rows[[idx, j]]).unwrap();
            }
            out.push('\n');
        }
        write_file(&dir.join(format!("features_{tag}.txt")), &out)
    };
    for (m, table) in &ds.features {
        write_table(m.tag(), table)?;
    }
    if let Some(emo) = &ds.emotion {
        write_table("emo", emo)?;
    }

    let conf = format!(
        "test_fraction = {}\ncold_fraction = {}\nseed = {}\n",
        ds.split.test_fraction, ds.split.cold_fraction, ds.split.seed
    );
    write_file(&dir.join("split.conf"), &conf)
}
