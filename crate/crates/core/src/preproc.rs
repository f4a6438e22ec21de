//! LDA projection with folded mean/variance normalization, followed by
//! length normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, cholesky_with_ridge, symmetric_eigen, Matrix};
use crate::scalar::Scalar;

/// Norm guard for length normalization.
pub const LENGTH_NORM_EPS: f64 = 1e-10;

/// Within-class scatter condition number above which a ridge is added.
const MAX_CONDITION: f64 = 1e10;
const LDA_RIDGE: f64 = 1e-6;

/// `x ↦ lengthnorm(A·x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct AffinePreproc<T> {
    pub a: Matrix<T>,
    pub b: Vec<T>,
}

/// Intermediate values of [`AffinePreproc::apply`] kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Projected<T> {
    /// `A·x + b`
    pub v: Vec<T>,
    pub norm: T,
    /// `v / ‖v‖`
    pub u: Vec<T>,
}

impl<T: Scalar> AffinePreproc<T> {
    pub fn new(a: Matrix<T>, b: Vec<T>) -> Result<Self> {
        if a.rows() == 0 || a.rows() > a.cols() {
            return Err(Error::invalid(format!(
                "affine map must satisfy 1 <= out_dim <= in_dim, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        if b.len() != a.rows() {
            return Err(Error::DimensionMismatch {
                expected: a.rows(),
                found: b.len(),
            });
        }
        if !a.is_finite() || b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("preproc".into()));
        }
        Ok(Self { a, b })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            a: Matrix::identity(dim),
            b: vec![T::zero(); dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.a.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.a.rows()
    }

    /// `A·x + b` without length normalization.
    pub fn affine(&self, x: &[T]) -> Vec<T> {
        let mut v = self.a.mul_vec(x);
        linalg::axpy(T::one(), &self.b, &mut v);
        v
    }

    pub fn project(&self, x: &[T]) -> Result<Projected<T>> {
        if x.len() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim(),
                found: x.len(),
            });
        }
        let v = self.affine(x);
        let norm = linalg::norm(&v);
        if !(norm >= T::c(LENGTH_NORM_EPS)) {
            return Err(Error::DegenerateEmbedding(norm.to_f64_lossy()));
        }
        let u = v.iter().map(|&e| e / norm).collect();
        Ok(Projected { v, norm, u })
    }

    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.project(x)?.u)
    }

    pub fn cast<U: Scalar>(&self) -> AffinePreproc<U> {
        AffinePreproc {
            a: self.a.cast(),
            b: self.b.iter().map(|&v| U::c(v.to_f64_lossy())).collect(),
        }
    }
}

pub fn length_normalize<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    let n = linalg::norm(v);
    if !(n >= T::c(LENGTH_NORM_EPS)) {
        return Err(Error::DegenerateEmbedding(n.to_f64_lossy()));
    }
    Ok(v.iter().map(|&e| e / n).collect())
}

/// Weighted within- and between-class scatter, each normalized by total weight.
pub(crate) fn scatter_matrices<T: Scalar>(
    vectors: &[&[T]],
    labels: &[usize],
    n_classes: usize,
    weights: &[T],
) -> Result<(Matrix<T>, Matrix<T>, Vec<T>)> {
    let dim = vectors.first().ok_or(Error::EmptySet)?.len();
    let means = crate::dataio::class_means(vectors, labels, n_classes, Some(weights))?;
    let mut mass = vec![T::zero(); n_classes];
    for (&c, &w) in labels.iter().zip(weights) {
        mass[c] += w;
    }
    let total: T = mass.iter().copied().sum();
    let mut global = vec![T::zero(); dim];
    for (m, &w) in means.iter().zip(&mass) {
        linalg::axpy(w / total, m, &mut global);
    }
    let mut sw = Matrix::zeros(dim, dim);
    for ((x, &c), &w) in vectors.iter().zip(labels).zip(weights) {
        let d = linalg::sub_vec(x, &means[c]);
        sw.add_outer(w / total, &d, &d);
    }
    let mut sb = Matrix::zeros(dim, dim);
    for (m, &w) in means.iter().zip(&mass) {
        let d = linalg::sub_vec(m, &global);
        sb.add_outer(w / total, &d, &d);
    }
    sw.symmetrize();
    sb.symmetrize();
    Ok((sw, sb, global))
}

/// Fits the LDA directions and folds per-component standardization of the
/// (weighted) training projections into the affine map.
pub fn fit_lda<T: Scalar>(
    vectors: &[&[T]],
    labels: &[usize],
    n_classes: usize,
    weights: &[T],
    out_dim: usize,
) -> Result<AffinePreproc<T>> {
    if vectors.len() != labels.len() || vectors.len() != weights.len() {
        return Err(Error::invalid(
            "vectors, labels and weights differ in length",
        ));
    }
    if out_dim == 0 {
        return Err(Error::invalid("LDA output dimension must be at least 1"));
    }
    if n_classes < 2 || out_dim > n_classes - 1 {
        return Err(Error::invalid(format!(
            "LDA output dimension {out_dim} exceeds number of classes minus one ({})",
            n_classes.saturating_sub(1)
        )));
    }
    let in_dim = vectors[0].len();
    if out_dim > in_dim {
        return Err(Error::invalid(format!(
            "LDA output dimension {out_dim} exceeds input dimension {in_dim}"
        )));
    }
    let mut counts = vec![0usize; n_classes];
    for (&c, &w) in labels.iter().zip(weights) {
        if !(w > T::zero()) {
            return Err(Error::invalid("weights must be positive"));
        }
        counts[c] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n < 2) {
        return Err(Error::invalid(format!(
            "class {c} has fewer than 2 samples"
        )));
    }

    let (mut sw, sb, _) = scatter_matrices(vectors, labels, n_classes, weights)?;
    let (ev, _) = symmetric_eigen(&sw);
    let (hi, lo) = (ev[0], ev[in_dim - 1]);
    if !(hi > T::zero()) {
        return Err(Error::NotPositiveDefinite(
            "within-class scatter is zero; data has no within-class variation".into(),
        ));
    }
    if !(lo > T::zero()) || hi / lo > T::c(MAX_CONDITION) {
        let ridge = T::c(LDA_RIDGE) * sw.trace() / T::from_usize_lossy(in_dim);
        log::warn!(
            "within-class scatter ill-conditioned (cond {:e}); ridge {:e} applied",
            (hi / lo).to_f64_lossy(),
            ridge.to_f64_lossy()
        );
        sw.add_diag(ridge);
    }
    let (chol, _) = cholesky_with_ridge(&sw, LDA_RIDGE, "within-class scatter")?;

    // C = L⁻¹ Sb L⁻ᵀ
    let mut half = Matrix::zeros(in_dim, in_dim);
    for j in 0..in_dim {
        let col: Vec<T> = (0..in_dim).map(|i| sb[(i, j)]).collect();
        let y = chol.solve_lower(&col);
        for i in 0..in_dim {
            half[(i, j)] = y[i];
        }
    }
    let mut c = Matrix::zeros(in_dim, in_dim);
    for i in 0..in_dim {
        let y = chol.solve_lower(half.row(i));
        for j in 0..in_dim {
            c[(i, j)] = y[j];
        }
    }
    let (_, u) = symmetric_eigen(&c);

    let mut directions = Matrix::zeros(out_dim, in_dim);
    for k in 0..out_dim {
        let uk: Vec<T> = (0..in_dim).map(|i| u[(i, k)]).collect();
        let mut v = chol.solve_upper(&uk);
        let lead = v.iter().copied().fold(
            T::zero(),
            |acc, x| if x.abs() > acc.abs() { x } else { acc },
        );
        if lead < T::zero() {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        directions.row_mut(k).copy_from_slice(&v);
    }

    // standardize projections
    let total: T = weights.iter().copied().sum();
    let mut mean = vec![T::zero(); out_dim];
    let projected: Vec<Vec<T>> = vectors.iter().map(|x| directions.mul_vec(x)).collect();
    for (z, &w) in projected.iter().zip(weights) {
        linalg::axpy(w / total, z, &mut mean);
    }
    let mut var = vec![T::zero(); out_dim];
    for (z, &w) in projected.iter().zip(weights) {
        for k in 0..out_dim {
            let d = z[k] - mean[k];
            var[k] += w / total * d * d;
        }
    }
    let mut a = directions;
    let mut b = vec![T::zero(); out_dim];
    for k in 0..out_dim {
        if !(var[k] > T::zero()) {
            return Err(Error::NotPositiveDefinite(format!(
                "projected component {k} has zero variance"
            )));
        }
        let s = T::one() / var[k].sqrt();
        a.row_mut(k).iter_mut().for_each(|x| *x *= s);
        b[k] = -mean[k] * s;
    }
    AffinePreproc::new(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn two_class_2d(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nd = Normal::new(0.0, 0.3).unwrap();
        let mut xs = Vec::new();
        let mut ls = Vec::new();
        for c in 0..2 {
            let mx = if c == 0 { -1.0 } else { 1.0 };
            for _ in 0..n {
                xs.push(vec![mx + nd.sample(&mut rng), nd.sample(&mut rng)]);
                ls.push(c);
            }
        }
        (xs, ls)
    }

    /// Independent route: brute force generalized eigenvector by scanning
    /// directions on the unit circle and maximizing the Rayleigh quotient.
    fn brute_force_direction(sw: &Matrix<f64>, sb: &Matrix<f64>) -> [f64; 2] {
        let mut best = (f64::NEG_INFINITY, [0.0, 0.0]);
        for i in 0..200_000 {
            let t = std::f64::consts::PI * i as f64 / 200_000.0;
            let v = [t.cos(), t.sin()];
            let q = sb.bilinear(&v, &v) / sw.bilinear(&v, &v);
            if q > best.0 {
                best = (q, v);
            }
        }
        best.1
    }

    #[test]
    fn lda_direction_matches_brute_force() {
        let (xs, ls) = two_class_2d(500, 11);
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let w = vec![1.0; xs.len()];
        let p = fit_lda(&refs, &ls, 2, &w, 1).unwrap();
        let dir = p.a.row(0);
        let n = linalg::norm(dir);
        let dir = [dir[0] / n, dir[1] / n];
        let (sw, sb, _) = scatter_matrices(&refs, &ls, 2, &w).unwrap();
        let oracle = brute_force_direction(&sw, &sb);
        let cos = (dir[0] * oracle[0] + dir[1] * oracle[1]).abs();
        assert!(cos > 1.0 - 1e-8, "cos {cos}");
        // nearly parallel to the axis joining the class means
        assert!(dir[0].abs() > 0.99);
        assert!(dir[0] > 0.0, "sign convention");
    }

    #[test]
    fn rank_bound_enforced() {
        let (xs, ls) = two_class_2d(10, 1);
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let w = vec![1.0; xs.len()];
        assert!(fit_lda(&refs, &ls, 2, &w, 2).is_err());
        assert!(fit_lda(&refs, &ls, 2, &w, 0).is_err());
    }

    #[test]
    fn uniform_weight_scaling_is_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let nd = Normal::new(0.0, 1.0).unwrap();
        let xs: Vec<Vec<f64>> = (0..120)
            .map(|i| {
                (0..5)
                    .map(|j| nd.sample(&mut rng) + ((i % 4) * j) as f64 * 0.5)
                    .collect()
            })
            .collect();
        let ls: Vec<usize> = (0..120).map(|i| i % 4).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let p1 = fit_lda(&refs, &ls, 4, &vec![1.0; 120], 3).unwrap();
        let p2 = fit_lda(&refs, &ls, 4, &vec![2.0; 120], 3).unwrap();
        assert!(p1.a.max_abs_diff(&p2.a) < 1e-9);
    }

    #[test]
    fn projected_training_data_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let nd = Normal::new(0.0, 1.0).unwrap();
        let xs: Vec<Vec<f64>> = (0..300)
            .map(|i| {
                (0..6)
                    .map(|j| nd.sample(&mut rng) + ((i % 5) as f64 - j as f64))
                    .collect()
            })
            .collect();
        let ls: Vec<usize> = (0..300).map(|i| i % 5).collect();
        let w: Vec<f64> = (0..300).map(|i| 1.0 + (i % 3) as f64).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let p = fit_lda(&refs, &ls, 5, &w, 4).unwrap();
        let total: f64 = w.iter().sum();
        for k in 0..4 {
            let z: Vec<f64> = xs.iter().map(|x| p.affine(x)[k]).collect();
            let m: f64 = z.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / total;
            let v: f64 = z
                .iter()
                .zip(&w)
                .map(|(a, b)| b * (a - m).powi(2))
                .sum::<f64>()
                / total;
            assert!(m.abs() < 1e-8, "mean {m}");
            assert!((v - 1.0).abs() < 1e-6, "var {v}");
        }
    }

    #[test]
    fn degenerate_within_scatter_gets_ridge() {
        // third coordinate constant: singular within-class scatter
        let xs: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                vec![
                    (i % 2) as f64 * 3.0 + (i as f64 * 0.37).sin(),
                    (i as f64 * 1.3).cos(),
                    1.0,
                ]
            })
            .collect();
        let ls: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let p = fit_lda(&refs, &ls, 2, &vec![1.0; 40], 1).unwrap();
        assert!(p.a.is_finite());
    }

    #[test]
    fn apply_examples() {
        let p = AffinePreproc::<f64>::identity(2);
        assert_eq!(p.apply(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
        assert!(matches!(
            p.apply(&[0.0, 0.0]),
            Err(Error::DegenerateEmbedding(_))
        ));
        assert!(p.apply(&[1.0]).is_err());
    }

    #[test]
    fn length_normalize_examples() {
        assert_eq!(length_normalize(&[0.0, 2.0]).unwrap(), vec![0.0, 1.0]);
        let u = [0.6, 0.8];
        assert_eq!(length_normalize(&u).unwrap(), u.to_vec());
        assert!(length_normalize(&[1e-300, 0.0]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn apply_output_has_unit_norm(x in proptest::collection::vec(-1e3f64..1e3, 3), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let nd = Normal::new(0.0, 1.0).unwrap();
            let a = Matrix::from_row_major(2, 3, (0..6).map(|_| nd.sample(&mut rng)).collect());
            let p = AffinePreproc::new(a, vec![nd.sample(&mut rng), nd.sample(&mut rng)]).unwrap();
            if let Ok(u) = p.apply(&x) {
                proptest::prop_assert!((linalg::norm(&u) - 1.0).abs() < 1e-12);
            }
        }
    }
}
