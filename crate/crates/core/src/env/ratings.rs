//! Offline ratings pipeline and the replay environment built on it.
//!
//! Input is delimiter-separated text with a header line whose first three
//! columns are `user_id`, `item_id` and `rating` (`,`, `;`, tab and `::`
//! are recognised; further columns such as timestamps are ignored).
//!
//! Preprocessing keeps the most active users and items, factorizes the
//! rating matrix with a truncated SVD, normalizes the factors, binarizes
//! ratings (`> 4` is positive), and groups users with k-means. Every sampled
//! round pairs one positive item with nine negative items for a user drawn
//! from a uniformly chosen group.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kmeans::kmeans;
use super::svd::{truncated_svd, SparseMatrix};
use super::{normalize, perturb_unit, Environment, Outcome, Round};
use crate::clustering::UserId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestOptions {
    pub max_users: usize,
    pub max_items: usize,
    /// SVD rank per side; arm vectors have dimension `2 * rank`.
    pub rank: usize,
    pub groups: usize,
    /// Ratings strictly above this are positive.
    pub positive_above: f64,
    pub negatives_per_round: usize,
    pub kmeans_iterations: usize,
    pub seed: u64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            max_users: 10_000,
            max_items: 10_000,
            rank: 10,
            groups: 50,
            positive_above: 4.0,
            negatives_per_round: 9,
            kmeans_iterations: 100,
            seed: 0,
        }
    }
}

/// Preprocessed ratings: normalized factors, user groups and labelled items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingsDataset {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub user_features: Vec<Vec<f64>>,
    pub item_features: Vec<Vec<f64>>,
    /// User indices per k-means group.
    pub groups: Vec<Vec<UserId>>,
    pub positives: Vec<Vec<u32>>,
    pub negatives: Vec<Vec<u32>>,
    pub negatives_per_round: usize,
    /// Raw ids of users dropped for having no positive item.
    pub excluded_users: Vec<String>,
}

/// A sampled round with its hidden labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRound {
    pub round: Round,
    pub rewards: Vec<f64>,
    pub group: usize,
}

fn split_line<'a>(line: &'a str, delim: &str) -> Vec<&'a str> {
    line.split(delim).map(str::trim).collect()
}

fn detect_delimiter(header: &str) -> &'static str {
    ["::", "\t", ";", ","]
        .into_iter()
        .find(|d| header.contains(d))
        .unwrap_or(",")
}

/// Reads `(user, item, rating)` triples; later duplicates overwrite earlier ones.
fn read_triples(path: &Path) -> Result<Vec<(String, String, f64)>> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().ok_or(Error::Dataset("empty ratings file".into()))??;
    let delim = detect_delimiter(&header);
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols = split_line(&line, delim);
        if cols.len() < 3 {
            return Err(Error::Dataset(format!("line {}: expected 3 columns", n + 2)));
        }
        let rating: f64 = cols[2]
            .parse()
            .map_err(|_| Error::Dataset(format!("line {}: bad rating {:?}", n + 2, cols[2])))?;
        out.push((cols[0].to_string(), cols[1].to_string(), rating));
    }
    Ok(out)
}

/// Ids of the `keep` most frequent keys; ties go to the earlier first appearance.
fn top_by_count<'a>(keys: impl Iterator<Item = &'a str>, keep: usize) -> Vec<String> {
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for (pos, k) in keys.enumerate() {
        counts.entry(k).or_insert((0, pos)).0 += 1;
    }
    let mut ranked: Vec<(&str, (usize, usize))> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
    ranked.into_iter().take(keep).map(|(k, _)| k.to_string()).collect()
}

pub fn ingest_ratings(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<RatingsDataset> {
    let triples = read_triples(path.as_ref())?;
    RatingsDataset::from_triples(&triples, opts)
}

impl RatingsDataset {
    pub fn from_triples(triples: &[(String, String, f64)], opts: &IngestOptions) -> Result<Self> {
        if triples.is_empty() {
            return Err(Error::Dataset("no ratings".into()));
        }
        let users = top_by_count(triples.iter().map(|t| t.0.as_str()), opts.max_users);
        let items = top_by_count(triples.iter().map(|t| t.1.as_str()), opts.max_items);
        let user_index: HashMap<&str, usize> = users.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
        let item_index: HashMap<&str, usize> = items.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();

        let mut cells: HashMap<(usize, usize), f64> = HashMap::new();
        for (u, i, r) in triples {
            if let (Some(&u), Some(&i)) = (user_index.get(u.as_str()), item_index.get(i.as_str())) {
                cells.insert((u, i), *r);
            }
        }
        let mut entries: Vec<(usize, usize, f64)> = cells.into_iter().map(|((u, i), r)| (u, i, r)).collect();
        entries.sort_by_key(|&(u, i, _)| (u, i));

        let rank = opts.rank.min(users.len()).min(items.len());
        let matrix = SparseMatrix::from_triples(users.len(), items.len(), &entries)?;
        let svd = truncated_svd(&matrix, rank, opts.seed)?;
        let factor = |m: &nalgebra::DMatrix<f64>, row: usize| {
            let mut v: Vec<f64> = (0..opts.rank)
                .map(|k| {
                    if k < rank {
                        m[(row, k)] * svd.singular_values[k].sqrt()
                    } else {
                        0.0
                    }
                })
                .collect();
            normalize(&mut v);
            v
        };

        let mut positives = vec![Vec::new(); users.len()];
        let mut negatives = vec![Vec::new(); users.len()];
        for &(u, i, r) in &entries {
            if r > opts.positive_above {
                positives[u].push(i as u32);
            } else {
                negatives[u].push(i as u32);
            }
        }

        let mut keep = Vec::new();
        let mut excluded_users = Vec::new();
        for (u, id) in users.iter().enumerate() {
            if positives[u].is_empty() {
                excluded_users.push(id.clone());
            } else {
                keep.push(u);
            }
        }
        if keep.is_empty() {
            return Err(Error::Dataset("no user has a positive rating".into()));
        }
        let user_features: Vec<Vec<f64>> = keep.iter().map(|&u| factor(&svd.u, u)).collect();
        let item_features: Vec<Vec<f64>> = (0..items.len()).map(|i| factor(&svd.v, i)).collect();
        let k = opts.groups.min(keep.len()).max(1);
        let clusters = kmeans(&user_features, k, opts.kmeans_iterations, opts.seed)?;
        let groups = clusters
            .members()
            .into_iter()
            .map(|m| m.into_iter().map(|u| u as UserId).collect())
            .collect();

        Ok(Self {
            user_ids: keep.iter().map(|&u| users[u].clone()).collect(),
            item_ids: items,
            user_features,
            item_features,
            groups,
            positives: keep.iter().map(|&u| std::mem::take(&mut positives[u])).collect(),
            negatives: keep.iter().map(|&u| std::mem::take(&mut negatives[u])).collect(),
            negatives_per_round: opts.negatives_per_round,
            excluded_users,
        })
    }

    pub fn dim(&self) -> usize {
        self.user_features[0].len() + self.item_features[0].len()
    }

    pub fn is_eligible(&self, user: UserId) -> bool {
        let u = user as usize;
        !self.positives[u].is_empty() && self.negatives[u].len() >= self.negatives_per_round
    }

    /// Groups holding at least one eligible user.
    pub fn eligible_groups(&self) -> Vec<usize> {
        (0..self.groups.len())
            .filter(|&g| self.groups[g].iter().any(|&u| self.is_eligible(u)))
            .collect()
    }

    /// Draws a group uniformly, then an eligible user in it, then one
    /// positive and the negatives, shuffled.
    pub fn sample_round<R: Rng>(&self, rng: &mut R, t: usize) -> Option<LabeledRound> {
        self.sample_with(rng, t, &self.user_features, &self.eligible_groups())
    }

    fn sample_with<R: Rng>(
        &self,
        rng: &mut R,
        t: usize,
        user_features: &[Vec<f64>],
        eligible_groups: &[usize],
    ) -> Option<LabeledRound> {
        let &group = eligible_groups.choose(rng)?;
        let candidates: Vec<UserId> = self.groups[group]
            .iter()
            .copied()
            .filter(|&u| self.is_eligible(u))
            .collect();
        let &user = candidates.choose(rng)?;
        let u = user as usize;
        let pos = *self.positives[u].choose(rng)?;
        let negs = index::sample(rng, self.negatives[u].len(), self.negatives_per_round);
        let mut labelled: Vec<(u32, f64)> = vec![(pos, 1.0)];
        labelled.extend(negs.iter().map(|k| (self.negatives[u][k], 0.0)));
        labelled.shuffle(rng);
        let uf = &user_features[u];
        let arms = labelled
            .iter()
            .map(|&(i, _)| uf.iter().chain(&self.item_features[i as usize]).copied().collect())
            .collect();
        Some(LabeledRound {
            round: Round { t, user, arms },
            rewards: labelled.iter().map(|&(_, r)| r).collect(),
            group,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Replays sampled rounds; optionally perturbs user features every `period` rounds.
pub struct DatasetEnv {
    dataset: RatingsDataset,
    user_features: Vec<Vec<f64>>,
    eligible_groups: Vec<usize>,
    rounds: usize,
    perturbation: Option<(usize, f64)>,
    rng: ChaCha8Rng,
    t: usize,
    current: Option<Vec<f64>>,
}

impl DatasetEnv {
    pub fn new(dataset: RatingsDataset, rounds: usize, perturbation: Option<(usize, f64)>, seed: u64) -> Result<Self> {
        let eligible_groups = dataset.eligible_groups();
        if eligible_groups.is_empty() {
            return Err(Error::Dataset(format!(
                "no user has a positive and {} negative items",
                dataset.negatives_per_round
            )));
        }
        if let Some((period, _)) = perturbation {
            if period == 0 {
                return Err(Error::InvalidParameter("perturbation period must be >= 1".into()));
            }
        }
        Ok(Self {
            user_features: dataset.user_features.clone(),
            dataset,
            eligible_groups,
            rounds,
            perturbation,
            rng: ChaCha8Rng::seed_from_u64(seed),
            t: 0,
            current: None,
        })
    }

    pub fn dataset(&self) -> &RatingsDataset {
        &self.dataset
    }
}

impl Environment for DatasetEnv {
    fn dim(&self) -> usize {
        self.dataset.dim()
    }

    fn next_round(&mut self) -> Option<Round> {
        if self.t >= self.rounds {
            return None;
        }
        self.t += 1;
        if let Some((period, sigma)) = self.perturbation {
            if self.t > 1 && (self.t - 1).is_multiple_of(period) && sigma > 0.0 {
                for f in &mut self.user_features {
                    perturb_unit(f, sigma, &mut self.rng);
                }
            }
        }
        let labelled = self
            .dataset
            .sample_with(&mut self.rng, self.t, &self.user_features, &self.eligible_groups)?;
        self.current = Some(labelled.rewards);
        Some(labelled.round)
    }

    fn play(&mut self, arm: usize) -> Result<Outcome> {
        let rewards = self.current.as_ref().ok_or(Error::Empty("no active round"))?;
        let reward = *rewards
            .get(arm)
            .ok_or_else(|| Error::InvalidParameter(format!("arm {arm} out of range")))?;
        Ok(Outcome {
            reward,
            regret: 1.0 - reward,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_triples() -> Vec<(String, String, f64)> {
        let mut t = Vec::new();
        for u in 0..3 {
            for i in 0..3 {
                let r = if (u + i) % 2 == 0 { 5.0 } else { 1.0 };
                t.push((format!("u{u}"), format!("i{i}"), r));
            }
        }
        t
    }

    #[test]
    fn binarization_keeps_only_top_ratings() {
        let opts = IngestOptions { rank: 2, groups: 2, negatives_per_round: 1, ..Default::default() };
        let ds = RatingsDataset::from_triples(&toy_triples(), &opts).unwrap();
        for (u, id) in ds.user_ids.iter().enumerate() {
            let un: usize = id[1..].parse().unwrap();
            for &i in &ds.positives[u] {
                let inum: usize = ds.item_ids[i as usize][1..].parse().unwrap();
                assert_eq!((un + inum) % 2, 0);
            }
            assert_eq!(ds.positives[u].len() + ds.negatives[u].len(), 3);
        }
    }

    #[test]
    fn users_without_positives_are_excluded() {
        let mut t = toy_triples();
        t.push(("grumpy".into(), "i0".into(), 2.0));
        let opts = IngestOptions { rank: 2, groups: 2, ..Default::default() };
        let ds = RatingsDataset::from_triples(&t, &opts).unwrap();
        assert_eq!(ds.excluded_users, vec!["grumpy".to_string()]);
        assert!(!ds.user_ids.contains(&"grumpy".to_string()));
    }

    #[test]
    fn top_counts_limit_users_and_items() {
        let mut t = toy_triples();
        t.push(("rare".into(), "i9".into(), 5.0));
        let opts = IngestOptions { max_users: 3, max_items: 3, rank: 2, groups: 1, ..Default::default() };
        let ds = RatingsDataset::from_triples(&t, &opts).unwrap();
        assert_eq!(ds.user_ids.len(), 3);
        assert_eq!(ds.item_ids.len(), 3);
        assert!(!ds.item_ids.contains(&"i9".to_string()));
    }

    #[test]
    fn reads_delimited_file_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.dat");
        std::fs::write(&path, "user_id::item_id::rating::ts\n1::10::5::0\n1::11::2::0\n2::10::4::0\n2::11::5::0\n").unwrap();
        let opts = IngestOptions { rank: 1, groups: 1, negatives_per_round: 1, ..Default::default() };
        let ds = ingest_ratings(&path, &opts).unwrap();
        assert_eq!(ds.user_ids.len(), 2);
        assert_eq!(ds.dim(), 2);
        assert!(ingest_ratings(dir.path().join("missing.csv"), &opts).is_err());
        std::fs::write(&path, "user,item,rating\n1,2,oops\n").unwrap();
        assert!(ingest_ratings(&path, &opts).is_err());
    }
}
