//! Agglomerative clustering of per-language mean embeddings under a
//! PLDA-derived distance, and the resulting cluster map with priors.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::plda::{pair_score, to_pair_params, PldaModel};
use crate::preproc::AffinePreproc;
use crate::scalar::Scalar;

/// Square symmetric distance matrix over labelled items; the diagonal holds
/// `-∞` and is never read.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix<T> {
    pub labels: Vec<String>,
    pub values: Matrix<T>,
}

impl<T: Scalar> DistanceMatrix<T> {
    pub fn new(labels: Vec<String>, mut values: Matrix<T>) -> Result<Self> {
        if !values.is_square() || values.rows() != labels.len() {
            return Err(Error::invalid(
                "distance matrix must be square and match labels",
            ));
        }
        for i in 0..labels.len() {
            values[(i, i)] = T::neg_infinity();
        }
        Ok(Self { labels, values })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn min_off_diagonal(&self) -> T {
        let n = self.len();
        let mut m = T::infinity();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m = m.min(self.values[(i, j)]);
                }
            }
        }
        m
    }
}

/// `dist(i, j) = −pair_score(apply(m_i), apply(m_j))`, symmetrized.
pub fn plda_distance_matrix<T: Scalar>(
    means: &BTreeMap<String, Vec<T>>,
    model: &PldaModel<T>,
    preproc: &AffinePreproc<T>,
) -> Result<DistanceMatrix<T>> {
    if means.len() < 2 {
        return Err(Error::invalid("need at least two languages to cluster"));
    }
    if preproc.out_dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: preproc.out_dim(),
        });
    }
    let params = to_pair_params(model)?;
    let labels: Vec<String> = means.keys().cloned().collect();
    let projected = means
        .values()
        .map(|m| preproc.apply(m))
        .collect::<Result<Vec<_>>>()?;
    let n = labels.len();
    let mut values = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dij = -pair_score(&params, &projected[i], &projected[j]);
            let dji = -pair_score(&params, &projected[j], &projected[i]);
            let d = (dij + dji) * T::half();
            values[(i, j)] = d;
            values[(j, i)] = d;
        }
    }
    DistanceMatrix::new(labels, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub step: usize,
    pub left: String,
    pub right: String,
    pub distance: f64,
}

/// Full average-linkage merge sequence. Cluster names are their
/// lexicographically smallest member; ties in distance are broken by the
/// smallest `(left, right)` name pair.
pub fn linkage<T: Scalar>(dist: &DistanceMatrix<T>) -> Vec<Merge> {
    let n = dist.len();
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    let names: Vec<String> = dist.labels.clone();
    let mut d: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| dist.values[(i, j)].to_f64_lossy()).collect())
        .collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if members[i].is_none() {
                continue;
            }
            for j in (i + 1)..n {
                if members[j].is_none() {
                    continue;
                }
                let (a, b) = if names[i] < names[j] { (i, j) } else { (j, i) };
                let cand = (d[i][j], a, b);
                best = Some(match best {
                    None => cand,
                    Some(cur) => {
                        let better = cand.0 < cur.0
                            || (cand.0 == cur.0
                                && (&names[cand.1], &names[cand.2])
                                    < (&names[cur.1], &names[cur.2]));
                        if better {
                            cand
                        } else {
                            cur
                        }
                    }
                });
            }
        }
        let (dist_ab, a, b) = best.expect("two active clusters");
        merges.push(Merge {
            step,
            left: names[a].clone(),
            right: names[b].clone(),
            distance: dist_ab,
        });
        let ma = members[a].take().unwrap();
        let mb = members[b].take().unwrap();
        let (na, nb) = (ma.len() as f64, mb.len() as f64);
        for k in 0..n {
            if members[k].is_some() {
                let v = (na * d[a][k] + nb * d[b][k]) / (na + nb);
                d[a][k] = v;
                d[k][a] = v;
            }
        }
        let mut merged = ma;
        merged.extend(mb);
        members[a] = Some(merged);
        // names[a] already is the smaller of the two
    }
    merges
}

/// Applies merges in order until the first merge distance exceeds `threshold`.
pub fn cut(labels: &[String], merges: &[Merge], threshold: f64) -> Vec<Vec<String>> {
    let mut groups: BTreeMap<String, Vec<String>> = labels
        .iter()
        .map(|l| (l.clone(), vec![l.clone()]))
        .collect();
    for m in merges {
        if !(m.distance <= threshold) {
            break;
        }
        let right = groups.remove(&m.right).expect("right cluster active");
        groups
            .get_mut(&m.left)
            .expect("left cluster active")
            .extend(right);
    }
    groups
        .into_values()
        .map(|mut g| {
            g.sort();
            g
        })
        .collect()
}

pub fn agglomerate<T: Scalar>(dist: &DistanceMatrix<T>, threshold: f64) -> ClusterMap {
    let merges = linkage(dist);
    let groups = cut(&dist.labels, &merges, threshold);
    ClusterMap::from_groups(groups, Some(threshold)).expect("partition of distinct labels")
}

pub fn dendrogram_tsv(merges: &[Merge]) -> String {
    let mut out = String::from("step\tleft\tright\tdistance\n");
    for m in merges {
        writeln!(out, "{}\t{}\t{}\t{}", m.step, m.left, m.right, m.distance).unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub name: String,
    pub languages: Vec<String>,
}

/// Assignment of languages to clusters with the priors `p(c) = |c| / N` and
/// `p(l|c) = 1 / |c|`. Clusters are ordered by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMap {
    pub clusters: Vec<Cluster>,
    pub assignment: BTreeMap<String, usize>,
    pub p_c: Vec<f64>,
    pub p_l_given_c: BTreeMap<String, f64>,
    pub threshold: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ClusterMapFile {
    clusters: BTreeMap<String, Vec<String>>,
    threshold: Option<f64>,
}

impl ClusterMap {
    /// Builds a map from groups of languages; each cluster is named after its
    /// lexicographically smallest language.
    pub fn from_groups(groups: Vec<Vec<String>>, threshold: Option<f64>) -> Result<Self> {
        let named = groups
            .into_iter()
            .map(|mut g| {
                g.sort();
                let name = g
                    .first()
                    .cloned()
                    .ok_or_else(|| Error::invalid("empty cluster"))?;
                Ok((name, g))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_named(named, threshold)
    }

    pub fn from_named(named: Vec<(String, Vec<String>)>, threshold: Option<f64>) -> Result<Self> {
        let mut named = named;
        named.sort_by(|a, b| a.0.cmp(&b.0));
        let mut assignment = BTreeMap::new();
        let mut clusters = Vec::with_capacity(named.len());
        for (id, (name, mut languages)) in named.into_iter().enumerate() {
            if languages.is_empty() {
                return Err(Error::invalid(format!("cluster {name} is empty")));
            }
            if clusters.iter().any(|c: &Cluster| c.name == name) {
                return Err(Error::invalid(format!("duplicate cluster name {name}")));
            }
            languages.sort();
            for l in &languages {
                if assignment.insert(l.clone(), id).is_some() {
                    return Err(Error::invalid(format!(
                        "language {l} assigned to two clusters"
                    )));
                }
            }
            clusters.push(Cluster { name, languages });
        }
        Ok(cluster_priors(ClusterMap {
            clusters,
            assignment,
            p_c: Vec::new(),
            p_l_given_c: BTreeMap::new(),
            threshold: threshold.filter(|t| t.is_finite()),
        }))
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_languages(&self) -> usize {
        self.assignment.len()
    }

    pub fn languages(&self) -> Vec<String> {
        self.assignment.keys().cloned().collect()
    }

    pub fn cluster_of(&self, language: &str) -> Option<usize> {
        self.assignment.get(language).copied()
    }

    pub fn cluster_by_name(&self, name: &str) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.clusters.iter().map(|c| c.name.clone()).collect()
    }

    /// Same partition regardless of names and threshold.
    pub fn same_partition(&self, other: &ClusterMap) -> bool {
        let mut a: Vec<&Vec<String>> = self.clusters.iter().map(|c| &c.languages).collect();
        let mut b: Vec<&Vec<String>> = other.clusters.iter().map(|c| &c.languages).collect();
        a.sort();
        b.sort();
        a == b
    }

    pub fn to_json(&self) -> String {
        let file = ClusterMapFile {
            clusters: self
                .clusters
                .iter()
                .map(|c| (c.name.clone(), c.languages.clone()))
                .collect(),
            threshold: self.threshold,
        };
        serde_json::to_string_pretty(&file).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ClusterMapFile = serde_json::from_str(text)?;
        Self::from_named(file.clusters.into_iter().collect(), file.threshold)
    }
}

impl Serialize for ClusterMap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ClusterMapFile {
            clusters: self
                .clusters
                .iter()
                .map(|c| (c.name.clone(), c.languages.clone()))
                .collect(),
            threshold: self.threshold,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ClusterMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = ClusterMapFile::deserialize(d)?;
        Self::from_named(file.clusters.into_iter().collect(), file.threshold)
            .map_err(serde::de::Error::custom)
    }
}

/// Recomputes `p(c)` and `p(l|c)` from the assignment.
pub fn cluster_priors(mut map: ClusterMap) -> ClusterMap {
    let total = map.assignment.len() as f64;
    map.p_c = map
        .clusters
        .iter()
        .map(|c| c.languages.len() as f64 / total)
        .collect();
    map.p_l_given_c = map
        .clusters
        .iter()
        .flat_map(|c| {
            let p = 1.0 / c.languages.len() as f64;
            c.languages.iter().map(move |l| (l.clone(), p))
        })
        .collect();
    map
}
