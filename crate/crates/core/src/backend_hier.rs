//! Two-stage hierarchical backend.
//!
//! Stage 1 scores clusters of languages. Stage 2 scores languages after the
//! embedding is shifted by the mean of the cluster being considered. The two
//! likelihood ratios are combined under the cluster and within-cluster priors.

use serde::{Deserialize, Serialize};

use crate::backend_flat::{init_generative, FlatBackend, Scorer};
use crate::dataio::{EmbeddingSet, LabelIndex};
use crate::error::{Error, Result};
use crate::lancluster::ClusterMap;
use crate::linalg::{axpy, sub_vec, Matrix};
use crate::plda::DEFAULT_EM_ITERS;
use crate::scalar::{log_sum_exp, Scalar};

/// Prior odds `p / (1 - p)`; `Certain` when `p = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Odds<T> {
    Finite(T),
    Certain,
}

impl<T: Scalar> Odds<T> {
    pub fn from_prob(p: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::invalid(format!("prior {p} outside (0, 1]")));
        }
        if p == 1.0 {
            Ok(Odds::Certain)
        } else {
            Ok(Odds::Finite(T::c(p / (1.0 - p))))
        }
    }
}

fn check_odds<T: Scalar>(o: T) -> Result<T> {
    if o.is_finite() && o > T::zero() {
        Ok(o)
    } else {
        Err(Error::invalid(format!(
            "prior odds must be positive and finite, got {o}"
        )))
    }
}

/// Language log-likelihood ratio from the cluster LLR `l_c` and the
/// within-cluster LLR `l_lc`, computed in log space.
pub fn combine_llr<T: Scalar>(l_c: T, l_lc: T, p_c: Odds<T>, p_lc: Odds<T>) -> Result<T> {
    Ok(combine_with_grad(l_c, l_lc, p_c, p_lc)?.0)
}

/// [`combine_llr`] plus its partial derivatives with respect to `l_c` and `l_lc`.
pub fn combine_with_grad<T: Scalar>(
    l_c: T,
    l_lc: T,
    p_c: Odds<T>,
    p_lc: Odds<T>,
) -> Result<(T, T, T)> {
    match (p_c, p_lc) {
        (_, Odds::Certain) => Ok((l_c, T::one(), T::zero())),
        (Odds::Certain, Odds::Finite(_)) => Ok((l_lc, T::zero(), T::one())),
        (Odds::Finite(oc), Odds::Finite(olc)) => {
            let oc = check_odds(oc)?;
            let olc = check_odds(olc)?;
            let a = l_c + oc.ln();
            let b = l_lc + olc.ln();
            let lse = log_sum_exp(&[a, b, T::zero()]);
            // With q = (oc(e^lc - 1) + olc(e^llc - 1)) / (1 + oc + olc) the value is
            // lc + llc - ln(1 + q); ln_1p keeps it exact at the origin, and the
            // log-sum-exp form takes over once q is far from zero.
            let q = (oc * l_c.exp_m1() + olc * l_lc.exp_m1()) / (T::one() + oc + olc);
            let value = if q.abs() <= T::half() {
                l_c + l_lc - q.ln_1p()
            } else {
                l_c + l_lc - lse + (oc + olc + T::one()).ln()
            };
            let d_c = (log_sum_exp(&[b, T::zero()]) - lse).exp();
            let d_lc = (log_sum_exp(&[a, T::zero()]) - lse).exp();
            Ok((value, d_c, d_lc))
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
struct HierRepr<T> {
    stage1: FlatBackend<T>,
    stage2: FlatBackend<T>,
    shifts: Matrix<T>,
    cluster_map: ClusterMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HierRepr<T>", into = "HierRepr<T>")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct HierBackend<T> {
    /// Detectors are the clusters, in cluster-map order.
    pub stage1: FlatBackend<T>,
    /// Detectors are the languages, sorted.
    pub stage2: FlatBackend<T>,
    /// Raw-space cluster means, one row per cluster.
    pub shifts: Matrix<T>,
    cluster_map: ClusterMap,
    cluster_of_lang: Vec<usize>,
    members: Vec<Vec<usize>>,
    odds_c: Vec<Odds<T>>,
    odds_lc: Vec<Odds<T>>,
}

impl<T: Scalar> TryFrom<HierRepr<T>> for HierBackend<T> {
    type Error = Error;
    fn try_from(r: HierRepr<T>) -> Result<Self> {
        HierBackend::new(r.stage1, r.stage2, r.shifts, r.cluster_map)
    }
}

impl<T: Scalar> From<HierBackend<T>> for HierRepr<T> {
    fn from(h: HierBackend<T>) -> Self {
        HierRepr {
            stage1: h.stage1,
            stage2: h.stage2,
            shifts: h.shifts,
            cluster_map: h.cluster_map,
        }
    }
}

impl<T: Scalar> HierBackend<T> {
    pub fn new(
        stage1: FlatBackend<T>,
        stage2: FlatBackend<T>,
        shifts: Matrix<T>,
        cluster_map: ClusterMap,
    ) -> Result<Self> {
        if stage1.labels != cluster_map.names() {
            return Err(Error::invalid(
                "stage-1 detectors must be the clusters in map order",
            ));
        }
        if stage2.labels != cluster_map.languages() {
            return Err(Error::invalid(
                "stage-2 detectors must be the mapped languages, sorted",
            ));
        }
        let dim = stage1.preproc.in_dim();
        if stage2.preproc.in_dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: stage2.preproc.in_dim(),
            });
        }
        if shifts.rows() != cluster_map.n_clusters() || shifts.cols() != dim {
            return Err(Error::invalid(
                "shifts must have one raw-space row per cluster",
            ));
        }
        if !shifts.is_finite() {
            return Err(Error::NonFinite("cluster shifts".into()));
        }
        let cluster_of_lang: Vec<usize> = stage2
            .labels
            .iter()
            .map(|l| cluster_map.cluster_of(l).expect("checked above"))
            .collect();
        let mut members = vec![Vec::new(); cluster_map.n_clusters()];
        for (l, &c) in cluster_of_lang.iter().enumerate() {
            members[c].push(l);
        }
        let odds_c = cluster_map
            .p_c
            .iter()
            .map(|&p| Odds::from_prob(p))
            .collect::<Result<Vec<_>>>()?;
        let odds_lc = stage2
            .labels
            .iter()
            .map(|l| Odds::from_prob(cluster_map.p_l_given_c[l]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            stage1,
            stage2,
            shifts,
            cluster_map,
            cluster_of_lang,
            members,
            odds_c,
            odds_lc,
        })
    }

    pub fn cluster_map(&self) -> &ClusterMap {
        &self.cluster_map
    }

    /// Cluster index of every stage-2 detector.
    pub fn cluster_of_lang(&self) -> &[usize] {
        &self.cluster_of_lang
    }

    /// Stage-2 detector indices of every cluster.
    pub fn members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn odds_c(&self) -> &[Odds<T>] {
        &self.odds_c
    }

    pub fn odds_lc(&self) -> &[Odds<T>] {
        &self.odds_lc
    }

    /// Cluster and within-cluster scores. Within-cluster entries of
    /// singleton clusters are left at zero since they do not contribute.
    pub fn stage_scores(&self, x: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let l_c = self.stage1.score_all(x)?;
        let mut l_lc = vec![T::zero(); self.stage2.n_detectors()];
        for (c, m) in self.members.iter().enumerate() {
            if m.len() < 2 {
                continue;
            }
            let u = self.stage2.preproc.apply(&sub_vec(x, self.shifts.row(c)))?;
            for &l in m {
                l_lc[l] =
                    crate::plda::pair_score(&self.stage2.params, self.stage2.detectors.row(l), &u);
            }
        }
        Ok((l_c, l_lc))
    }

    pub fn cast<U: Scalar>(&self) -> HierBackend<U> {
        HierBackend::new(
            self.stage1.cast(),
            self.stage2.cast(),
            self.shifts.cast(),
            self.cluster_map.clone(),
        )
        .expect("casting keeps a valid backend valid")
    }
}

impl<T: Scalar> Scorer<T> for HierBackend<T> {
    fn detector_labels(&self) -> &[String] {
        &self.stage2.labels
    }

    fn input_dim(&self) -> usize {
        self.stage1.preproc.in_dim()
    }

    fn score_all(&self, x: &[T]) -> Result<Vec<T>> {
        let (l_c, l_lc) = self.stage_scores(x)?;
        (0..l_lc.len())
            .map(|l| {
                let c = self.cluster_of_lang[l];
                combine_llr(l_c[c], l_lc[l], self.odds_c[c], self.odds_lc[l])
            })
            .collect()
    }
}

/// Generative initialization of both stages. Stage 1 is fit on cluster
/// labels with at most `C - 1` dimensions, stage 2 on cluster-shifted
/// embeddings with language labels and at most `L - C` dimensions.
pub fn init_hier<T: Scalar>(
    train: &EmbeddingSet<T>,
    clusters: &ClusterMap,
    weights: &[T],
    out_dim1: usize,
    out_dim2: usize,
) -> Result<HierBackend<T>> {
    let languages = LabelIndex::languages_of(train);
    if languages.names != clusters.languages() {
        return Err(Error::invalid(
            "cluster map languages differ from the training languages",
        ));
    }
    let n_c = clusters.n_clusters();
    let n_l = languages.n_classes();
    if n_c < 2 || n_c >= n_l {
        return Err(Error::HierarchyDegenerate(format!(
            "{n_c} clusters over {n_l} languages leaves a stage with no dimensions"
        )));
    }
    if out_dim1 == 0 || out_dim1 > n_c - 1 {
        return Err(Error::HierarchyDegenerate(format!(
            "stage-1 dimension {out_dim1} must be in 1..={}",
            n_c - 1
        )));
    }
    if out_dim2 == 0 || out_dim2 > n_l - n_c {
        return Err(Error::HierarchyDegenerate(format!(
            "stage-2 dimension {out_dim2} must be in 1..={}",
            n_l - n_c
        )));
    }
    let vectors = train.vectors();
    let cluster_labels = LabelIndex {
        names: clusters.names(),
        of_record: train
            .records()
            .iter()
            .map(|r| clusters.cluster_of(&r.language).expect("languages checked"))
            .collect(),
    };
    let stage1 = init_generative(
        &vectors,
        &cluster_labels,
        weights,
        out_dim1,
        DEFAULT_EM_ITERS,
    )?
    .backend;
    // m_c: plain average of the per-language means of the cluster.
    let lang_means = crate::dataio::class_means(&vectors, &languages.of_record, n_l, None)?;
    let mut shifts = vec![vec![T::zero(); train.dim()]; n_c];
    for (c, cl) in clusters.clusters.iter().enumerate() {
        for l in &cl.languages {
            let li = languages.names.binary_search(l).expect("languages checked");
            axpy(
                T::one() / T::from_usize_lossy(cl.languages.len()),
                &lang_means[li],
                &mut shifts[c],
            );
        }
    }
    let shifted: Vec<Vec<T>> = vectors
        .iter()
        .zip(&cluster_labels.of_record)
        .map(|(x, &c)| sub_vec(x, &shifts[c]))
        .collect();
    let srefs: Vec<&[T]> = shifted.iter().map(Vec::as_slice).collect();
    let stage2 = init_generative(&srefs, &languages, weights, out_dim2, DEFAULT_EM_ITERS)?.backend;
    HierBackend::new(
        stage1,
        stage2,
        Matrix::from_rows(&shifts)?,
        clusters.clone(),
    )
}
