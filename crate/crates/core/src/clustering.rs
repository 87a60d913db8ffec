//! User clustering under a preference metric.
//!
//! Two strategies are provided:
//!
//! * [`club_clusters`]: item-independent clusters, the connected components
//!   of the graph linking users whose embeddings are within `epsilon1`.
//! * [`mcnb_clusters`]: per-arm clusters of users whose predicted reward for
//!   that arm agree up to a tolerance (transitively closed).
//!
//! [`validate_partition`] checks the diameter, maximality and separation
//! conditions of an `(epsilon1, epsilon2)` cluster by brute force.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type UserId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserEmbedding {
    pub user: UserId,
    pub vector: Vec<f64>,
}

impl UserEmbedding {
    pub fn new(user: UserId, vector: Vec<f64>) -> Self {
        Self { user, vector }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Disjoint user groups; each group sorted, groups ordered by their smallest member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    groups: Vec<Vec<UserId>>,
}

impl Partition {
    /// Normalizes the group order so that equal partitions compare equal.
    pub fn new(mut groups: Vec<Vec<UserId>>) -> Self {
        groups.retain(|g| !g.is_empty());
        for g in &mut groups {
            g.sort_unstable();
        }
        groups.sort_unstable_by_key(|g| g[0]);
        Self { groups }
    }

    pub fn groups(&self) -> &[Vec<UserId>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// The group containing `user`.
    pub fn group_of(&self, user: UserId) -> Option<&[UserId]> {
        self.groups
            .iter()
            .find(|g| g.binary_search(&user).is_ok())
            .map(Vec::as_slice)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    Global,
    PerArm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub mode: ClusterMode,
    /// One partition in global mode, one per arm in per-arm mode.
    pub partitions: Vec<Partition>,
    pub epsilon1: f64,
    pub epsilon2: f64,
}

impl ClusterAssignment {
    /// Partition that applies to `arm`.
    pub fn for_arm(&self, arm: usize) -> &Partition {
        match self.mode {
            ClusterMode::Global => &self.partitions[0],
            ClusterMode::PerArm => &self.partitions[arm],
        }
    }
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }

    fn groups(mut self, ids: impl Iterator<Item = UserId>) -> Vec<Vec<UserId>> {
        let mut by_root: BTreeMap<usize, Vec<UserId>> = BTreeMap::new();
        for (i, id) in ids.enumerate() {
            let r = self.find(i);
            by_root.entry(r).or_default().push(id);
        }
        by_root.into_values().collect()
    }
}

/// Connected components of the `epsilon1`-neighbourhood graph over the embeddings.
pub fn club_clusters(embeddings: &[UserEmbedding], epsilon1: f64) -> Result<ClusterAssignment> {
    if embeddings.is_empty() {
        return Err(Error::Empty("user embeddings"));
    }
    if !(epsilon1 > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon1 must be > 0, got {epsilon1}")));
    }
    let dim = embeddings[0].vector.len();
    if let Some(bad) = embeddings.iter().find(|e| e.vector.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.vector.len(),
        });
    }
    let n = embeddings.len();
    let mut dsu = DisjointSet::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if distance(&embeddings[i].vector, &embeddings[j].vector) <= epsilon1 {
                dsu.union(i, j);
            }
        }
    }
    let groups = dsu.groups(embeddings.iter().map(|e| e.user));
    Ok(ClusterAssignment {
        mode: ClusterMode::Global,
        partitions: vec![Partition::new(groups)],
        epsilon1,
        epsilon2: 0.0,
    })
}

/// Groups users whose predicted rewards for one arm are chained within `tolerance`.
pub fn mcnb_clusters(predicted: &[(UserId, f64)], tolerance: f64) -> Result<Partition> {
    if !(tolerance >= 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be >= 0, got {tolerance}")));
    }
    let mut sorted: Vec<(UserId, f64)> = predicted.to_vec();
    if sorted.iter().any(|(_, r)| !r.is_finite()) {
        return Err(Error::NonFinite("predicted reward"));
    }
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut groups: Vec<Vec<UserId>> = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for (user, r) in sorted {
        match groups.last_mut() {
            Some(g) if r - last <= tolerance => g.push(user),
            _ => groups.push(vec![user]),
        }
        last = r;
    }
    Ok(Partition::new(groups))
}

/// Per-arm assignment from a `(user, arm) -> predicted reward` table.
pub fn mcnb_assignment(per_arm: &[Vec<(UserId, f64)>], tolerance: f64) -> Result<ClusterAssignment> {
    let partitions = per_arm
        .iter()
        .map(|p| mcnb_clusters(p, tolerance))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterAssignment {
        mode: ClusterMode::PerArm,
        partitions,
        epsilon1: tolerance,
        epsilon2: 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    /// Two members of one group are farther apart than `epsilon1`.
    Diameter { group: usize, a: UserId, b: UserId, distance: f64 },
    /// `outsider` is within `epsilon1` of every member, so the group is not maximal.
    NotMaximal { group: usize, outsider: UserId },
    /// Members of different groups are closer than `epsilon2`.
    Separation { a: UserId, b: UserId, distance: f64 },
    /// A user is missing from, or repeated in, the partition.
    NotAPartition { user: UserId },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Brute-force check of the three cluster conditions for one partition.
pub fn validate_partition(
    partition: &Partition,
    embeddings: &[UserEmbedding],
    epsilon1: f64,
    epsilon2: f64,
) -> ValidationReport {
    let mut violations = Vec::new();
    let lookup: BTreeMap<UserId, &[f64]> = embeddings
        .iter()
        .map(|e| (e.user, e.vector.as_slice()))
        .collect();
    let mut seen: BTreeMap<UserId, usize> = BTreeMap::new();
    for (g, group) in partition.groups().iter().enumerate() {
        for &u in group {
            if seen.insert(u, g).is_some() || !lookup.contains_key(&u) {
                violations.push(Violation::NotAPartition { user: u });
            }
        }
    }
    for &u in lookup.keys() {
        if !seen.contains_key(&u) {
            violations.push(Violation::NotAPartition { user: u });
        }
    }
    if !violations.is_empty() {
        return ValidationReport { violations };
    }
    let vec_of = |u: UserId| lookup[&u];
    for (g, group) in partition.groups().iter().enumerate() {
        for (i, &a) in group.iter().enumerate() {
            for &b in &group[i + 1..] {
                let d = distance(vec_of(a), vec_of(b));
                if d > epsilon1 {
                    violations.push(Violation::Diameter { group: g, a, b, distance: d });
                }
            }
        }
        for &outsider in lookup.keys() {
            if seen[&outsider] == g {
                continue;
            }
            if group
                .iter()
                .all(|&m| distance(vec_of(m), vec_of(outsider)) <= epsilon1)
            {
                violations.push(Violation::NotMaximal { group: g, outsider });
            }
        }
    }
    let users: Vec<UserId> = lookup.keys().copied().collect();
    for (i, &a) in users.iter().enumerate() {
        for &b in &users[i + 1..] {
            if seen[&a] != seen[&b] {
                let d = distance(vec_of(a), vec_of(b));
                if d < epsilon2 {
                    violations.push(Violation::Separation { a, b, distance: d });
                }
            }
        }
    }
    ValidationReport { violations }
}

/// Validates every partition of an assignment; `embeddings[k]` holds the metric for partition `k`.
pub fn validate_assignment(
    assignment: &ClusterAssignment,
    embeddings: &[Vec<UserEmbedding>],
    epsilon1: f64,
    epsilon2: f64,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    if embeddings.len() != assignment.partitions.len() {
        report.violations.push(Violation::NotAPartition { user: UserId::MAX });
        return report;
    }
    for (p, e) in assignment.partitions.iter().zip(embeddings) {
        report
            .violations
            .extend(validate_partition(p, e, epsilon1, epsilon2).violations);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> Vec<UserEmbedding> {
        points
            .iter()
            .enumerate()
            .map(|(i, &p)| UserEmbedding::new(i as UserId, vec![p]))
            .collect()
    }

    #[test]
    fn identical_embeddings_form_one_cluster() {
        let e = line(&[1.0, 1.0, 1.0, 1.0]);
        let a = club_clusters(&e, 0.1).unwrap();
        assert_eq!(a.partitions[0].groups(), &[vec![0, 1, 2, 3]]);
    }

    #[test]
    fn three_point_line() {
        let e = line(&[0.0, 0.5, 10.0]);
        let a = club_clusters(&e, 1.0).unwrap();
        assert_eq!(a.partitions[0].groups(), &[vec![0, 1], vec![2]]);
        let report = validate_assignment(&a, &[e], 1.0, 5.0);
        assert!(report.is_valid(), "{report:?}");
    }

    #[test]
    fn tiny_threshold_gives_singletons() {
        let e = line(&[0.0, 1.0, 2.0, 3.0]);
        let a = club_clusters(&e, 0.5).unwrap();
        assert_eq!(a.partitions[0].len(), 4);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(club_clusters(&[], 1.0).is_err());
        assert!(club_clusters(&line(&[0.0]), 0.0).is_err());
    }

    #[test]
    fn merged_group_violates_diameter() {
        let e = line(&[0.0, 0.5, 10.0]);
        let p = Partition::new(vec![vec![0, 1, 2]]);
        let r = validate_partition(&p, &e, 1.0, 0.0);
        assert!(r.violations.iter().any(|v| matches!(v, Violation::Diameter { .. })));
    }

    #[test]
    fn split_pair_violates_maximality() {
        let e = line(&[0.0, 0.5]);
        let p = Partition::new(vec![vec![0], vec![1]]);
        let r = validate_partition(&p, &e, 1.0, 0.0);
        assert!(r.violations.iter().any(|v| matches!(v, Violation::NotMaximal { .. })));
    }

    #[test]
    fn chained_component_fails_diameter() {
        let e = line(&[0.0, 0.9, 1.8]);
        let a = club_clusters(&e, 1.0).unwrap();
        assert_eq!(a.partitions[0].len(), 1);
        let r = validate_assignment(&a, &[e], 1.0, 0.0);
        assert!(!r.is_valid());
    }

    #[test]
    fn reward_grouping() {
        let p = mcnb_clusters(&[(1, 0.2), (2, 0.2), (3, 0.9)], 1e-3).unwrap();
        assert_eq!(p.groups(), &[vec![1, 2], vec![3]]);
        let p = mcnb_clusters(&[(1, 0.1), (2, 0.2), (3, 0.3)], 0.0).unwrap();
        assert_eq!(p.len(), 3);
        let p = mcnb_clusters(&[(1, 0.4), (2, 0.4), (3, 0.4)], 0.0).unwrap();
        assert_eq!(p.len(), 1);
        assert!(mcnb_clusters(&[(1, 0.4)], -1.0).is_err());
    }

    #[test]
    fn reward_grouping_chains() {
        let p = mcnb_clusters(&[(5, 0.30), (6, 0.305), (7, 0.31), (8, 0.5)], 0.006).unwrap();
        assert_eq!(p.groups(), &[vec![5, 6, 7], vec![8]]);
        assert_eq!(p.group_of(6), Some(&[5, 6, 7][..]));
        assert_eq!(p.group_of(9), None);
    }

    #[test]
    fn partition_checks() {
        let e = line(&[0.0, 1.0]);
        let p = Partition::new(vec![vec![0]]);
        let r = validate_partition(&p, &e, 1.0, 0.0);
        assert!(matches!(r.violations[0], Violation::NotAPartition { user: 1 }));
    }
}
