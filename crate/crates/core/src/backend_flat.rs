//! Flat PLDA backends.
//!
//! [`FlatBackend`] is the discriminatively trainable model: affine
//! preprocessing with length normalization, pair-score parameters and one
//! detector vector per class. [`GenerativeBackend`] is the classic PLDA
//! system that scores with the exact multi-enrollment likelihood ratio.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{EmbeddingSet, LabelIndex};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::plda::{
    em_train, pair_score, to_pair_params, Enrollment, ExactScorer, PairScoreParams, PldaModel,
};
use crate::preproc::{fit_lda, AffinePreproc};
use crate::scalar::Scalar;

/// Anything that maps a raw embedding to one score per detector.
pub trait Scorer<T: Scalar>: Sync {
    fn detector_labels(&self) -> &[String];
    fn input_dim(&self) -> usize;
    fn score_all(&self, x: &[T]) -> Result<Vec<T>>;

    /// Scores every record, in record order. Parallel over records.
    fn score_set(&self, set: &EmbeddingSet<T>) -> Result<Vec<Vec<T>>> {
        if set.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: set.dim(),
            });
        }
        set.records()
            .par_iter()
            .map(|r| self.score_all(&r.vector))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct DetectorVector<T> {
    pub language: String,
    pub vector: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
struct FlatRepr<T> {
    preproc: AffinePreproc<T>,
    params: PairScoreParams<T>,
    detectors: Vec<DetectorVector<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlatRepr<T>", into = "FlatRepr<T>")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct FlatBackend<T> {
    pub preproc: AffinePreproc<T>,
    pub params: PairScoreParams<T>,
    /// Detector labels, parallel to the rows of `detectors`.
    pub labels: Vec<String>,
    /// One row per detector, `out_dim` columns.
    pub detectors: Matrix<T>,
}

impl<T: Scalar> TryFrom<FlatRepr<T>> for FlatBackend<T> {
    type Error = Error;
    fn try_from(r: FlatRepr<T>) -> Result<Self> {
        let labels = r.detectors.iter().map(|d| d.language.clone()).collect();
        let rows: Vec<Vec<T>> = r.detectors.into_iter().map(|d| d.vector).collect();
        FlatBackend::new(r.preproc, r.params, labels, Matrix::from_rows(&rows)?)
    }
}

impl<T: Scalar> From<FlatBackend<T>> for FlatRepr<T> {
    fn from(b: FlatBackend<T>) -> Self {
        let detectors = b
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| DetectorVector {
                language: l.clone(),
                vector: b.detectors.row(i).to_vec(),
            })
            .collect();
        FlatRepr {
            preproc: b.preproc,
            params: b.params,
            detectors,
        }
    }
}

impl<T: Scalar> FlatBackend<T> {
    pub fn new(
        preproc: AffinePreproc<T>,
        params: PairScoreParams<T>,
        labels: Vec<String>,
        detectors: Matrix<T>,
    ) -> Result<Self> {
        let d = preproc.out_dim();
        if params.dim() != d || params.lambda.rows() != d || params.gamma.rows() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: params.dim(),
            });
        }
        if detectors.rows() != labels.len() || (detectors.rows() > 0 && detectors.cols() != d) {
            return Err(Error::invalid(
                "detector matrix does not match labels / dimension",
            ));
        }
        if labels.is_empty() {
            return Err(Error::invalid("backend needs at least one detector"));
        }
        let mut sorted = labels.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != labels.len() {
            return Err(Error::invalid("detector labels must be unique"));
        }
        if !detectors.is_finite() || !params.is_finite() {
            return Err(Error::NonFinite("flat backend".into()));
        }
        Ok(Self {
            preproc,
            params,
            labels,
            detectors,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.preproc.out_dim()
    }

    pub fn n_detectors(&self) -> usize {
        self.labels.len()
    }

    /// Scores of an already preprocessed (unit-norm) vector.
    pub fn score_projected(&self, u: &[T]) -> Vec<T> {
        (0..self.n_detectors())
            .map(|l| pair_score(&self.params, self.detectors.row(l), u))
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> FlatBackend<U> {
        FlatBackend {
            preproc: self.preproc.cast(),
            params: PairScoreParams {
                lambda: self.params.lambda.cast(),
                gamma: self.params.gamma.cast(),
                c: self
                    .params
                    .c
                    .iter()
                    .map(|&v| U::c(v.to_f64_lossy()))
                    .collect(),
                k: U::c(self.params.k.to_f64_lossy()),
            },
            labels: self.labels.clone(),
            detectors: self.detectors.cast(),
        }
    }
}

impl<T: Scalar> Scorer<T> for FlatBackend<T> {
    fn detector_labels(&self) -> &[String] {
        &self.labels
    }

    fn input_dim(&self) -> usize {
        self.preproc.in_dim()
    }

    fn score_all(&self, x: &[T]) -> Result<Vec<T>> {
        let u = self.preproc.apply(x)?;
        Ok(self.score_projected(&u))
    }
}

/// Classic PLDA system: generative parameters, exact scoring with the full
/// enrollment set of every detector.
#[derive(Debug, Clone)]
pub struct GenerativeBackend<T> {
    pub preproc: AffinePreproc<T>,
    pub model: PldaModel<T>,
    pub enrollments: Vec<Enrollment<T>>,
    labels: Vec<String>,
    scorer: ExactScorer<T>,
}

impl<T: Scalar> GenerativeBackend<T> {
    pub fn new(
        preproc: AffinePreproc<T>,
        model: PldaModel<T>,
        enrollments: Vec<Enrollment<T>>,
    ) -> Result<Self> {
        if preproc.out_dim() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                found: preproc.out_dim(),
            });
        }
        let scorer = ExactScorer::new(&model, &enrollments)?;
        let labels = enrollments.iter().map(|e| e.language.clone()).collect();
        Ok(Self {
            preproc,
            model,
            enrollments,
            labels,
            scorer,
        })
    }
}

impl<T: Scalar> Scorer<T> for GenerativeBackend<T> {
    fn detector_labels(&self) -> &[String] {
        &self.labels
    }

    fn input_dim(&self) -> usize {
        self.preproc.in_dim()
    }

    fn score_all(&self, x: &[T]) -> Result<Vec<T>> {
        let u = self.preproc.apply(x)?;
        Ok(self.scorer.score_all(&u))
    }
}

/// Everything produced by generative initialization of one flat stage.
#[derive(Debug, Clone)]
pub struct GenerativeInit<T> {
    pub backend: FlatBackend<T>,
    pub model: PldaModel<T>,
    pub enrollments: Vec<Enrollment<T>>,
    pub em_log_likelihood: Vec<T>,
}

impl<T: Scalar> GenerativeInit<T> {
    /// The exact-scoring PLDA system sharing this initialization.
    pub fn generative_backend(&self) -> Result<GenerativeBackend<T>> {
        GenerativeBackend::new(
            self.backend.preproc.clone(),
            self.model.clone(),
            self.enrollments.clone(),
        )
    }
}

/// LDA fit, EM on the preprocessed vectors, pair-score conversion, and
/// detector vectors set to the per-class mean of the preprocessed vectors.
/// At this point the flat backend reproduces the mean-approximation PLDA
/// score exactly.
pub fn init_generative<T: Scalar>(
    vectors: &[&[T]],
    labels: &LabelIndex,
    weights: &[T],
    out_dim: usize,
    em_iters: usize,
) -> Result<GenerativeInit<T>> {
    let n_classes = labels.n_classes();
    let preproc = fit_lda(vectors, &labels.of_record, n_classes, weights, out_dim)?;
    let projected = vectors
        .iter()
        .map(|x| preproc.apply(x))
        .collect::<Result<Vec<_>>>()?;
    let prefs: Vec<&[T]> = projected.iter().map(Vec::as_slice).collect();
    let fit = em_train(&prefs, &labels.of_record, n_classes, weights, em_iters)?;
    let params = to_pair_params(&fit.model)?;
    let means = crate::dataio::class_means(&prefs, &labels.of_record, n_classes, None)?;
    let mut counts = vec![0usize; n_classes];
    for &c in &labels.of_record {
        counts[c] += 1;
    }
    let enrollments = labels
        .names
        .iter()
        .zip(&means)
        .zip(&counts)
        .map(|((l, m), &n)| Enrollment {
            language: l.clone(),
            count: n,
            mean: m.clone(),
        })
        .collect();
    let backend = FlatBackend::new(
        preproc,
        params,
        labels.names.clone(),
        Matrix::from_rows(&means)?,
    )?;
    Ok(GenerativeInit {
        backend,
        model: fit.model,
        enrollments,
        em_log_likelihood: fit.log_likelihood,
    })
}

/// [`init_generative`] on an embedding set with languages as classes.
pub fn init_from_generative<T: Scalar>(
    train: &EmbeddingSet<T>,
    weights: &[T],
    out_dim: usize,
) -> Result<GenerativeInit<T>> {
    let labels = LabelIndex::languages_of(train);
    let n = labels.n_classes();
    if out_dim + 1 > n {
        return Err(Error::invalid(format!(
            "out_dim {out_dim} must be at most the number of languages minus one ({})",
            n.saturating_sub(1)
        )));
    }
    init_generative(
        &train.vectors(),
        &labels,
        weights,
        out_dim,
        crate::plda::DEFAULT_EM_ITERS,
    )
}
