//! Two-covariance PLDA.
//!
//! Latent class mean `y ~ N(μ, B⁻¹)`, observation `x | y ~ N(y, W⁻¹)`, with
//! `B` the between-class precision and `W` the within-class precision.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, cholesky_with_ridge, Cholesky, Matrix};
use crate::scalar::Scalar;

pub const DEFAULT_EM_ITERS: usize = 50;
pub const EM_TOLERANCE: f64 = 1e-9;
const EM_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct PldaModel<T> {
    pub mu: Vec<T>,
    pub b_prec: Matrix<T>,
    pub w: Matrix<T>,
}

/// Coefficients of the symmetric single-enrollment score
/// `2 wᵀΛw_l + wᵀΓw + w_lᵀΓw_l + wᵀc + w_lᵀc + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct PairScoreParams<T> {
    pub lambda: Matrix<T>,
    pub gamma: Matrix<T>,
    pub c: Vec<T>,
    pub k: T,
}

impl<T: Scalar> PldaModel<T> {
    pub fn new(mu: Vec<T>, b_prec: Matrix<T>, w: Matrix<T>) -> Result<Self> {
        let d = mu.len();
        for (name, m) in [("B", &b_prec), ("W", &w)] {
            if m.rows() != d || m.cols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: m.rows(),
                });
            }
            if m.max_asymmetry() > T::c(1e-10) * (T::one() + m.trace().abs()) {
                return Err(Error::invalid(format!("{name} is not symmetric")));
            }
            Cholesky::new(m)?;
        }
        Ok(Self { mu, b_prec, w })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn cast<U: Scalar>(&self) -> PldaModel<U> {
        PldaModel {
            mu: self.mu.iter().map(|&v| U::c(v.to_f64_lossy())).collect(),
            b_prec: self.b_prec.cast(),
            w: self.w.cast(),
        }
    }
}

impl<T: Scalar> PairScoreParams<T> {
    pub fn zeros(d: usize) -> Self {
        Self {
            lambda: Matrix::zeros(d, d),
            gamma: Matrix::zeros(d, d),
            c: vec![T::zero(); d],
            k: T::zero(),
        }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn is_finite(&self) -> bool {
        self.lambda.is_finite()
            && self.gamma.is_finite()
            && self.c.iter().all(|v| v.is_finite())
            && self.k.is_finite()
    }
}

/// `log ∫ N(y; μ, B⁻¹) Π_i N(x_i; y, W⁻¹) dy` in closed form.
pub fn set_log_marginal<T: Scalar>(model: &PldaModel<T>, vectors: &[&[T]]) -> Result<T> {
    let weights = vec![T::one(); vectors.len()];
    weighted_log_marginal(model, vectors, &weights)
}

/// Same integral with each observation's log-density scaled by its weight.
fn weighted_log_marginal<T: Scalar>(
    model: &PldaModel<T>,
    vectors: &[&[T]],
    weights: &[T],
) -> Result<T> {
    if vectors.is_empty() {
        return Err(Error::EmptySet);
    }
    let d = model.dim();
    let mut n = T::zero();
    let mut f = vec![T::zero(); d];
    let mut quad = T::zero();
    for (x, &w) in vectors.iter().zip(weights) {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: x.len(),
            });
        }
        n += w;
        linalg::axpy(w, x, &mut f);
        quad += w * model.w.bilinear(x, x);
    }
    let chol_b = Cholesky::new(&model.b_prec)?;
    let chol_w = Cholesky::new(&model.w)?;
    let mut lam = model.w.scale(n);
    lam = lam.add(&model.b_prec);
    let chol_l = Cholesky::new(&lam)?;
    let bmu = model.b_prec.mul_vec(&model.mu);
    let mut gamma = model.w.mul_vec(&f);
    linalg::axpy(T::one(), &bmu, &mut gamma);
    let h = T::half();
    let two_pi = T::c(2.0 * PI);
    Ok(-h * n * T::from_usize_lossy(d) * two_pi.ln()
        + h * n * chol_w.log_det()
        + h * chol_b.log_det()
        - h * chol_l.log_det()
        - h * (linalg::dot(&model.mu, &bmu) + quad)
        + h * chol_l.inv_quad(&gamma))
}

pub fn exact_llr<T: Scalar>(model: &PldaModel<T>, enroll: &[&[T]], test: &[T]) -> Result<T> {
    if enroll.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut all: Vec<&[T]> = enroll.to_vec();
    all.push(test);
    Ok(set_log_marginal(model, &all)?
        - set_log_marginal(model, enroll)?
        - set_log_marginal(model, &[test])?)
}

pub fn to_pair_params<T: Scalar>(model: &PldaModel<T>) -> Result<PairScoreParams<T>> {
    let b = &model.b_prec;
    let w = &model.w;
    let q1 = b.add(w);
    let q2 = b.add(&w.scale(T::two()));
    let c1 = Cholesky::new(&q1)?;
    let c2 = Cholesky::new(&q2)?;
    let cb = Cholesky::new(b)?;
    let q1i = c1.inverse();
    let q2i = c2.inverse();
    let diff = q2i.sub(&q1i);
    let h = T::half();
    let mut lambda = w.matmul(&q2i).matmul(w).scale(h);
    let mut gamma = w.matmul(&diff).matmul(w).scale(h);
    lambda.symmetrize();
    gamma.symmetrize();
    let bmu = b.mul_vec(&model.mu);
    let c = w.matmul(&diff).mul_vec(&bmu);
    let k = -h * cb.log_det() - h * c2.log_det()
        + c1.log_det()
        + h * linalg::dot(&model.mu, &bmu)
        + h * c2.inv_quad(&bmu)
        - c1.inv_quad(&bmu);
    Ok(PairScoreParams {
        lambda,
        gamma,
        c,
        k,
    })
}

pub fn pair_score<T: Scalar>(params: &PairScoreParams<T>, w_l: &[T], w: &[T]) -> T {
    T::two() * params.lambda.bilinear(w, w_l)
        + params.gamma.bilinear(w, w)
        + params.gamma.bilinear(w_l, w_l)
        + linalg::dot(w, &params.c)
        + linalg::dot(w_l, &params.c)
        + params.k
}

pub fn approx_llr<T: Scalar>(
    params: &PairScoreParams<T>,
    enroll: &[&[T]],
    test: &[T],
) -> Result<T> {
    let first = enroll.first().ok_or(Error::EmptySet)?;
    let mut mean = vec![T::zero(); first.len()];
    for e in enroll {
        linalg::axpy(T::one(), e, &mut mean);
    }
    let n = T::from_usize_lossy(enroll.len());
    mean.iter_mut().for_each(|v| *v /= n);
    Ok(pair_score(params, &mean, test))
}

/// Enrollment summary for one detector: exact scoring only needs the count
/// and the mean of the enrollment vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Enrollment<T> {
    pub language: String,
    pub count: usize,
    pub mean: Vec<T>,
}

/// Precomputed factors for multi-enrollment exact scoring.
#[derive(Debug, Clone)]
pub struct ExactScorer<T> {
    model: PldaModel<T>,
    bmu: Vec<T>,
    single: Cholesky<T>,
    detectors: Vec<DetectorFactors<T>>,
    // ½ log|B| − ½ μᵀBμ; net coefficient −1 across the three set marginals
    constant: T,
}

#[derive(Debug, Clone)]
struct DetectorFactors<T> {
    sum: Vec<T>,
    enrolled: Cholesky<T>,
    with_test: Cholesky<T>,
    // M'(n, F) of the enrollment set alone
    base: T,
}

impl<T: Scalar> ExactScorer<T> {
    pub fn new(model: &PldaModel<T>, enrollments: &[Enrollment<T>]) -> Result<Self> {
        let bmu = model.b_prec.mul_vec(&model.mu);
        let factor =
            |n: usize| Cholesky::new(&model.b_prec.add(&model.w.scale(T::from_usize_lossy(n))));
        let single = factor(1)?;
        let mut detectors = Vec::with_capacity(enrollments.len());
        for e in enrollments {
            if e.count == 0 {
                return Err(Error::invalid(format!(
                    "detector {} has no enrollment",
                    e.language
                )));
            }
            if e.mean.len() != model.dim() {
                return Err(Error::DimensionMismatch {
                    expected: model.dim(),
                    found: e.mean.len(),
                });
            }
            let sum = linalg::scale_vec(&e.mean, T::from_usize_lossy(e.count));
            let enrolled = factor(e.count)?;
            let with_test = factor(e.count + 1)?;
            let mut this = DetectorFactors {
                sum,
                enrolled,
                with_test,
                base: T::zero(),
            };
            this.base = Self::reduced_marginal(model, &bmu, &this.enrolled, &this.sum);
            detectors.push(this);
        }
        let cb = Cholesky::new(&model.b_prec)?;
        let constant = T::half() * (cb.log_det() - linalg::dot(&model.mu, &bmu));
        Ok(Self {
            model: model.clone(),
            bmu,
            single,
            detectors,
            constant,
        })
    }

    /// Terms of the set marginal that do not cancel in the LLR, up to a
    /// constant `½ log|B| − ½ μᵀBμ` per set.
    fn reduced_marginal(model: &PldaModel<T>, bmu: &[T], chol: &Cholesky<T>, sum: &[T]) -> T {
        let mut gamma = model.w.mul_vec(sum);
        linalg::axpy(T::one(), bmu, &mut gamma);
        T::half() * (chol.inv_quad(&gamma) - chol.log_det())
    }

    pub fn n_detectors(&self) -> usize {
        self.detectors.len()
    }

    pub fn score(&self, detector: usize, test: &[T]) -> T {
        let det = &self.detectors[detector];
        let joint_sum = linalg::add_vec(&det.sum, test);
        let joint = Self::reduced_marginal(&self.model, &self.bmu, &det.with_test, &joint_sum);
        let alone = Self::reduced_marginal(&self.model, &self.bmu, &self.single, test);
        joint - det.base - alone - self.constant
    }

    pub fn score_all(&self, test: &[T]) -> Vec<T> {
        let c = self.constant;
        let alone = Self::reduced_marginal(&self.model, &self.bmu, &self.single, test);
        self.detectors
            .iter()
            .map(|det| {
                let joint_sum = linalg::add_vec(&det.sum, test);
                let joint =
                    Self::reduced_marginal(&self.model, &self.bmu, &det.with_test, &joint_sum);
                joint - det.base - alone - c
            })
            .collect()
    }
}

/// Result of EM training, with the observed-data log-likelihood before the
/// first iteration and after each one.
#[derive(Debug, Clone)]
pub struct EmFit<T> {
    pub model: PldaModel<T>,
    pub log_likelihood: Vec<T>,
}

struct ClassStats<T> {
    mass: Vec<T>,
    first: Vec<Vec<T>>,
    second: Matrix<T>,
    total: T,
}

fn class_stats<T: Scalar>(
    vectors: &[&[T]],
    labels: &[usize],
    n_classes: usize,
    weights: &[T],
) -> ClassStats<T> {
    let d = vectors[0].len();
    let mut mass = vec![T::zero(); n_classes];
    let mut first = vec![vec![T::zero(); d]; n_classes];
    let mut second = Matrix::zeros(d, d);
    for ((x, &c), &w) in vectors.iter().zip(labels).zip(weights) {
        mass[c] += w;
        linalg::axpy(w, x, &mut first[c]);
        second.add_outer(w, x, x);
    }
    second.symmetrize();
    let total = mass.iter().copied().sum();
    ClassStats {
        mass,
        first,
        second,
        total,
    }
}

fn invert_spd<T: Scalar>(m: &Matrix<T>, what: &str) -> Result<Matrix<T>> {
    let mut m = m.clone();
    m.symmetrize();
    let (c, _) = cholesky_with_ridge(&m, EM_RIDGE, what)?;
    Ok(c.inverse())
}

fn observed_log_likelihood<T: Scalar>(model: &PldaModel<T>, st: &ClassStats<T>) -> Result<T> {
    let d = T::from_usize_lossy(model.dim());
    let k = T::from_usize_lossy(st.mass.len());
    let chol_b = Cholesky::new(&model.b_prec)?;
    let chol_w = Cholesky::new(&model.w)?;
    let bmu = model.b_prec.mul_vec(&model.mu);
    let h = T::half();
    let mut ll = -h * st.total * d * T::c(2.0 * PI).ln()
        + h * st.total * chol_w.log_det()
        + h * k * chol_b.log_det()
        - h * k * linalg::dot(&model.mu, &bmu);
    // tr(W S)
    let mut tr = T::zero();
    for i in 0..model.dim() {
        tr += linalg::dot(model.w.row(i), st.second.row(i));
    }
    ll -= h * tr;
    for (n, f) in st.mass.iter().zip(&st.first) {
        let lam = model.b_prec.add(&model.w.scale(*n));
        let cl = Cholesky::new(&lam)?;
        let mut gamma = model.w.mul_vec(f);
        linalg::axpy(T::one(), &bmu, &mut gamma);
        ll += h * (cl.inv_quad(&gamma) - cl.log_det());
    }
    Ok(ll)
}

/// Moment-based starting point: weighted global mean, average within-class
/// covariance and covariance of the class means.
fn moment_init<T: Scalar>(st: &ClassStats<T>) -> Result<PldaModel<T>> {
    let d = st.second.rows();
    let mut mu = vec![T::zero(); d];
    for f in &st.first {
        linalg::axpy(T::one() / st.total, f, &mut mu);
    }
    let mut within = st.second.clone();
    let mut between = Matrix::zeros(d, d);
    for (n, f) in st.mass.iter().zip(&st.first) {
        let m = linalg::scale_vec(f, T::one() / *n);
        within.add_outer(-T::one(), f, &m);
        let dm = linalg::sub_vec(&m, &mu);
        between.add_outer(*n, &dm, &dm);
    }
    let within = within.scale(T::one() / st.total);
    let between = between.scale(T::one() / st.total);
    Ok(PldaModel {
        mu,
        b_prec: invert_spd(&between, "between-class covariance")?,
        w: invert_spd(&within, "within-class covariance")?,
    })
}

fn em_iteration<T: Scalar>(model: &PldaModel<T>, st: &ClassStats<T>) -> Result<PldaModel<T>> {
    let d = model.dim();
    let k = T::from_usize_lossy(st.mass.len());
    let bmu = model.b_prec.mul_vec(&model.mu);
    let mut mu = vec![T::zero(); d];
    let mut second_y = Matrix::zeros(d, d);
    let mut w_acc = st.second.clone();
    for (n, f) in st.mass.iter().zip(&st.first) {
        let lam = model.b_prec.add(&model.w.scale(*n));
        let (cl, _) = cholesky_with_ridge(&lam, EM_RIDGE, "class posterior precision")?;
        let mut gamma = model.w.mul_vec(f);
        linalg::axpy(T::one(), &bmu, &mut gamma);
        let y = cl.solve(&gamma);
        let cov = cl.inverse();
        // R = Σ + ŷŷᵀ
        let mut r = cov;
        r.add_outer(T::one(), &y, &y);
        linalg::axpy(T::one() / k, &y, &mut mu);
        second_y = second_y.add(&r.scale(T::one() / k));
        w_acc.add_outer(-T::one(), f, &y);
        w_acc.add_outer(-T::one(), &y, f);
        w_acc = w_acc.add(&r.scale(*n));
    }
    let mut between = second_y;
    between.add_outer(-T::one(), &mu, &mu);
    let within = w_acc.scale(T::one() / st.total);
    Ok(PldaModel {
        mu,
        b_prec: invert_spd(&between, "between-class covariance")?,
        w: invert_spd(&within, "within-class covariance")?,
    })
}

/// Weighted two-covariance EM. Weights are rescaled to mean one, so any
/// uniform scaling of the weights yields the same model.
pub fn em_train<T: Scalar>(
    vectors: &[&[T]],
    labels: &[usize],
    n_classes: usize,
    weights: &[T],
    n_iters: usize,
) -> Result<EmFit<T>> {
    if vectors.is_empty() {
        return Err(Error::EmptySet);
    }
    if vectors.len() != labels.len() || vectors.len() != weights.len() {
        return Err(Error::invalid(
            "vectors, labels and weights differ in length",
        ));
    }
    if n_classes < 2 {
        return Err(Error::invalid("PLDA training needs at least two classes"));
    }
    if weights.iter().any(|&w| !(w > T::zero())) {
        return Err(Error::invalid("weights must be positive"));
    }
    let mut present = vec![false; n_classes];
    for &c in labels {
        present[c] = true;
    }
    if let Some(c) = present.iter().position(|p| !p) {
        return Err(Error::invalid(format!("class {c} has no samples")));
    }
    let sum: T = weights.iter().copied().sum();
    let scale = T::from_usize_lossy(weights.len()) / sum;
    let weights: Vec<T> = weights.iter().map(|&w| w * scale).collect();

    let st = class_stats(vectors, labels, n_classes, &weights);
    let mut model = moment_init(&st)?;
    let mut trace = vec![observed_log_likelihood(&model, &st)?];
    for it in 0..n_iters {
        let next = em_iteration(&model, &st)?;
        let ll = observed_log_likelihood(&next, &st)?;
        let prev = *trace.last().unwrap();
        model = next;
        trace.push(ll);
        if ((ll - prev) / prev.abs().max(T::one())).abs() < T::c(EM_TOLERANCE) {
            log::debug!("EM converged after {} iterations", it + 1);
            break;
        }
    }
    Ok(EmFit {
        model,
        log_likelihood: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn scalar_model(mu: f64, b: f64, w: f64) -> PldaModel<f64> {
        PldaModel::new(
            vec![mu],
            Matrix::from_rows(&[vec![b]]).unwrap(),
            Matrix::from_rows(&[vec![w]]).unwrap(),
        )
        .unwrap()
    }

    fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        let mut a = Matrix::zeros(d, d);
        for v in a.as_mut_slice() {
            *v = rng.random_range(-1.0..1.0);
        }
        let mut m = a.matmul(&a.transpose());
        m.add_diag(0.3);
        m
    }

    fn random_model(d: usize, rng: &mut ChaCha8Rng) -> PldaModel<f64> {
        let mu = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        PldaModel::new(mu, random_spd(d, rng), random_spd(d, rng)).unwrap()
    }

    fn log_normal_1d(x: f64, m: f64, var: f64) -> f64 {
        -0.5 * (2.0 * PI * var).ln() - 0.5 * (x - m).powi(2) / var
    }

    #[test]
    fn marginal_scalar_example() {
        let m = scalar_model(0.0, 1.0, 1.0);
        let v = set_log_marginal(&m, &[&[0.0]]).unwrap();
        let expected = -0.5 * (2.0 * PI).ln() - 0.5 * 2f64.ln();
        assert!((v - expected).abs() < 1e-12);
        assert!((v + 1.26551).abs() < 1e-5);
    }

    #[test]
    fn single_marginal_is_gaussian_with_summed_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_model(3, &mut rng);
        let x = [0.3, -1.0, 0.7];
        let bi = Cholesky::new(&m.b_prec).unwrap().inverse();
        let wi = Cholesky::new(&m.w).unwrap().inverse();
        let cov = bi.add(&wi);
        let c = Cholesky::new(&cov).unwrap();
        let diff = linalg::sub_vec(&x, &m.mu);
        let direct = -1.5 * (2.0 * PI).ln() - 0.5 * c.log_det() - 0.5 * c.inv_quad(&diff);
        let v = set_log_marginal(&m, &[&x]).unwrap();
        assert!((v - direct).abs() < 1e-10);
    }

    #[test]
    fn marginal_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_model(2, &mut rng);
        let a = [0.1, 0.2];
        let b = [-1.0, 0.4];
        let c = [2.0, 0.0];
        let v1 = set_log_marginal(&m, &[&a, &b, &c]).unwrap();
        let v2 = set_log_marginal(&m, &[&c, &a, &b]).unwrap();
        assert!((v1 - v2).abs() < 1e-12);
    }

    #[test]
    fn point_prior_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut m = random_model(2, &mut rng);
        m.b_prec = Matrix::identity(2).scale(1e8);
        let xs = [[0.3, -0.2], [1.0, 0.5]];
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let v = set_log_marginal(&m, &refs).unwrap();
        let cw = Cholesky::new(&m.w).unwrap();
        let direct: f64 = xs
            .iter()
            .map(|x| {
                let d = linalg::sub_vec(x, &m.mu);
                -(2.0 * PI).ln() + 0.5 * cw.log_det() - 0.5 * m.w.bilinear(&d, &d)
            })
            .sum();
        assert!((v - direct).abs() < 1e-3, "{v} vs {direct}");
    }

    #[test]
    fn exact_llr_scalar_example_and_symmetry() {
        let m = scalar_model(0.0, 1.0, 1.0);
        let l = exact_llr(&m, &[&[0.0]], &[0.0]).unwrap();
        assert!((l - (2f64.ln() - 0.5 * 3f64.ln())).abs() < 1e-12);
        assert!((l - 0.14384).abs() < 1e-5);
        let a = exact_llr(&m, &[&[1.3]], &[-0.2]).unwrap();
        let b = exact_llr(&m, &[&[-0.2]], &[1.3]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn more_consistent_enrollment_raises_llr() {
        let m = scalar_model(0.0, 1.0, 1.0);
        let v = [1.5];
        let one = exact_llr(&m, &[&v], &v).unwrap();
        let two = exact_llr(&m, &[&v, &v], &v).unwrap();
        assert!(two > one, "{two} <= {one}");
    }

    #[test]
    fn pair_params_reproduce_exact_llr() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let m = random_model(4, &mut rng);
            let p = to_pair_params(&m).unwrap();
            let a: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let exact = exact_llr(&m, &[&a], &b).unwrap();
            let pair = pair_score(&p, &a, &b);
            assert!(
                (exact - pair).abs() <= 1e-8 * (1.0 + exact.abs()),
                "{exact} vs {pair}"
            );
        }
    }

    #[test]
    fn zero_mean_gives_zero_linear_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = random_model(3, &mut rng);
        m.mu = vec![0.0; 3];
        let p = to_pair_params(&m).unwrap();
        assert!(p.c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lambda_scales_with_precisions() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = random_model(3, &mut rng);
        let alpha = 3.5;
        let scaled = PldaModel::new(m.mu.clone(), m.b_prec.scale(alpha), m.w.scale(alpha)).unwrap();
        let p = to_pair_params(&m).unwrap();
        let q = to_pair_params(&scaled).unwrap();
        assert!(q.lambda.max_abs_diff(&p.lambda.scale(alpha)) < 1e-10);
        assert!(q.gamma.max_abs_diff(&p.gamma.scale(alpha)) < 1e-10);
    }

    #[test]
    fn pair_score_basic_properties() {
        let p = PairScoreParams::<f64>::zeros(2);
        assert_eq!(pair_score(&p, &[1.0, 2.0], &[3.0, -1.0]), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = to_pair_params(&random_model(2, &mut rng)).unwrap();
        let a = [0.4, -0.3];
        let b = [1.1, 0.9];
        assert!((pair_score(&p, &a, &b) - pair_score(&p, &b, &a)).abs() < 1e-12);
    }

    #[test]
    fn approx_llr_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let m = random_model(3, &mut rng);
        let p = to_pair_params(&m).unwrap();
        let v = [0.5, 0.1, -0.4];
        let t = [0.2, 0.2, 0.0];
        assert_eq!(approx_llr(&p, &[&v], &t).unwrap(), pair_score(&p, &v, &t));
        assert!(
            (approx_llr(&p, &[&v, &v], &t).unwrap() - approx_llr(&p, &[&v], &t).unwrap()).abs()
                < 1e-12
        );
        let v2 = [-0.3, 0.8, 0.2];
        let approx = approx_llr(&p, &[&v, &v2], &t).unwrap();
        let exact = exact_llr(&m, &[&v, &v2], &t).unwrap();
        assert!((approx - exact).abs() > 1e-6);
    }

    #[test]
    fn exact_scorer_matches_set_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let m = random_model(3, &mut rng);
        let enroll: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = enroll.iter().map(Vec::as_slice).collect();
        let mean: Vec<f64> = (0..3)
            .map(|j| enroll.iter().map(|e| e[j]).sum::<f64>() / 5.0)
            .collect();
        let scorer = ExactScorer::new(
            &m,
            &[Enrollment {
                language: "a".into(),
                count: 5,
                mean,
            }],
        )
        .unwrap();
        let t = [0.3, -0.1, 0.9];
        let direct = exact_llr(&m, &refs, &t).unwrap();
        assert!((scorer.score(0, &t) - direct).abs() < 1e-9);
        assert!((scorer.score_all(&t)[0] - direct).abs() < 1e-9);
    }

    fn sample_scalar_classes(
        seed: u64,
        n_classes: usize,
        per_class: usize,
    ) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nd = Normal::new(0.0, 1.0).unwrap();
        let mut xs = Vec::new();
        let mut ls = Vec::new();
        for c in 0..n_classes {
            let y = nd.sample(&mut rng);
            for _ in 0..per_class {
                xs.push(vec![y + nd.sample(&mut rng)]);
                ls.push(c);
            }
        }
        (xs, ls)
    }

    #[test]
    fn em_recovers_scalar_variances() {
        let (xs, ls) = sample_scalar_classes(17, 100, 100);
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let fit = em_train(&refs, &ls, 100, &vec![1.0; xs.len()], 50).unwrap();
        let between_var = 1.0 / fit.model.b_prec[(0, 0)];
        let within_var = 1.0 / fit.model.w[(0, 0)];
        assert!((between_var - 1.0).abs() < 0.15, "between {between_var}");
        assert!((within_var - 1.0).abs() < 0.15, "within {within_var}");
    }

    #[test]
    fn em_zero_iterations_is_moment_init() {
        let (xs, ls) = sample_scalar_classes(3, 10, 20);
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let fit = em_train(&refs, &ls, 10, &vec![1.0; xs.len()], 0).unwrap();
        assert_eq!(fit.log_likelihood.len(), 1);
        let mean = xs.iter().map(|x| x[0]).sum::<f64>() / xs.len() as f64;
        assert!((fit.model.mu[0] - mean).abs() < 1e-12);
        let mut within = 0.0;
        for c in 0..10 {
            let cls: Vec<f64> = xs
                .iter()
                .zip(&ls)
                .filter(|(_, &l)| l == c)
                .map(|(x, _)| x[0])
                .collect();
            let m = cls.iter().sum::<f64>() / cls.len() as f64;
            within += cls.iter().map(|x| (x - m).powi(2)).sum::<f64>();
        }
        within /= xs.len() as f64;
        assert!((1.0 / fit.model.w[(0, 0)] - within).abs() < 1e-10);
    }

    #[test]
    fn em_weight_scale_invariance() {
        let (xs, ls) = sample_scalar_classes(7, 8, 15);
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let w1: Vec<f64> = (0..xs.len()).map(|i| 1.0 + (i % 3) as f64).collect();
        let w2: Vec<f64> = w1.iter().map(|w| 2.0 * w).collect();
        let a = em_train(&refs, &ls, 8, &w1, 20).unwrap().model;
        let b = em_train(&refs, &ls, 8, &w2, 20).unwrap().model;
        assert!(a.b_prec.max_abs_diff(&b.b_prec) < 1e-10);
        assert!(a.w.max_abs_diff(&b.w) < 1e-10);
        assert!((a.mu[0] - b.mu[0]).abs() < 1e-10);
    }

    #[test]
    fn em_rejects_single_class() {
        let xs = [vec![0.0], vec![1.0]];
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        assert!(em_train(&refs, &[0, 0], 1, &[1.0, 1.0], 5).is_err());
    }

    #[test]
    fn one_dimensional_integral_oracle() {
        // trapezoid rule over the latent mean
        let m = scalar_model(0.4, 0.7, 2.0);
        let xs = [0.1, 0.9, -0.3];
        let f = |y: f64| {
            log_normal_1d(y, 0.4, 1.0 / 0.7)
                + xs.iter().map(|&x| log_normal_1d(x, y, 0.5)).sum::<f64>()
        };
        let (lo, hi, n) = (-12.0, 12.0, 200_000);
        let h = (hi - lo) / n as f64;
        let integral: f64 = (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * f(lo + i as f64 * h).exp()
            })
            .sum::<f64>()
            * h;
        let refs: Vec<&[f64]> = xs.iter().map(std::slice::from_ref).collect();
        let v = set_log_marginal(&m, &refs).unwrap();
        assert!((v - integral.ln()).abs() < 1e-8);
    }
}
