//! Reverse-mode gradients of the training loss for both backends.
//!
//! Per-sample work fans out over fixed-size chunks; chunk accumulators are
//! summed in chunk order so the result does not depend on the thread count.

use rayon::prelude::*;

use crate::backend_flat::{FlatBackend, Scorer};
use crate::backend_hier::{combine_with_grad, HierBackend};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, sub_vec, Matrix};
use crate::preproc::Projected;
use crate::scalar::Scalar;
use crate::training::loss::{bce_loss_grad, check_alpha};

const CHUNK: usize = 64;

/// One gradient tensor per trainable parameter group, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle<T> {
    pub names: Vec<String>,
    pub values: Vec<Vec<T>>,
}

impl<T: Scalar> GradientBundle<T> {
    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i].as_slice())
    }

    pub fn check_finite(&self) -> Result<()> {
        for (n, v) in self.names.iter().zip(&self.values) {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {n}")));
            }
        }
        Ok(())
    }

    pub fn norm(&self) -> T {
        self.values
            .iter()
            .flatten()
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }
}

/// A backend whose parameters can be trained with the batch loss.
pub trait Trainable<T: Scalar>: Scorer<T> + Clone + Send + Sync {
    /// Parameter group names, in the order of [`Trainable::params_mut`].
    fn group_names(&self) -> Vec<String>;
    fn params(&self) -> Vec<&[T]>;
    fn params_mut(&mut self) -> Vec<&mut [T]>;
    /// Restores structural constraints after an update (symmetric Λ and Γ).
    fn after_step(&mut self);
    /// Batch loss with per-sample labels in detector order.
    fn loss(&self, xs: &[&[T]], labels: &[usize], pi: f64, alpha: f64) -> Result<T>;
    fn loss_and_grad(
        &self,
        xs: &[&[T]],
        labels: &[usize],
        pi: f64,
        alpha: f64,
    ) -> Result<(T, GradientBundle<T>)>;
}

/// Matrices reused by every per-sample backward pass.
struct FlatConsts<T> {
    lambda_t: Matrix<T>,
    gamma_sym: Matrix<T>,
}

impl<T: Scalar> FlatConsts<T> {
    fn new(b: &FlatBackend<T>) -> Self {
        Self {
            lambda_t: b.params.lambda.transpose(),
            gamma_sym: b.params.gamma.add(&b.params.gamma.transpose()),
        }
    }
}

#[derive(Clone)]
struct FlatAccum<T> {
    a: Matrix<T>,
    b: Vec<T>,
    lambda: Matrix<T>,
    gamma: Matrix<T>,
    c: Vec<T>,
    k: T,
    det: Matrix<T>,
    det_mass: Vec<T>,
}

impl<T: Scalar> FlatAccum<T> {
    fn zeros(be: &FlatBackend<T>) -> Self {
        let (d, dim, l) = (be.out_dim(), be.preproc.in_dim(), be.n_detectors());
        Self {
            a: Matrix::zeros(d, dim),
            b: vec![T::zero(); d],
            lambda: Matrix::zeros(d, d),
            gamma: Matrix::zeros(d, d),
            c: vec![T::zero(); d],
            k: T::zero(),
            det: Matrix::zeros(l, d),
            det_mass: vec![T::zero(); l],
        }
    }

    fn merge(&mut self, o: &Self) {
        fn add<T: Scalar>(x: &mut [T], y: &[T]) {
            for (a, &b) in x.iter_mut().zip(y) {
                *a += b;
            }
        }
        add(self.a.as_mut_slice(), o.a.as_slice());
        add(&mut self.b, &o.b);
        add(self.lambda.as_mut_slice(), o.lambda.as_slice());
        add(self.gamma.as_mut_slice(), o.gamma.as_slice());
        add(&mut self.c, &o.c);
        self.k += o.k;
        add(self.det.as_mut_slice(), o.det.as_slice());
        add(&mut self.det_mass, &o.det_mass);
    }

    /// Adds the terms that only depend on per-detector totals.
    fn finish(
        mut self,
        be: &FlatBackend<T>,
        consts: &FlatConsts<T>,
        prefix: &str,
    ) -> GradientBundle<T> {
        for l in 0..be.n_detectors() {
            let m = self.det_mass[l];
            if m == T::zero() {
                continue;
            }
            let w = be.detectors.row(l);
            self.gamma.add_outer(m, w, w);
            axpy(m, w, &mut self.c);
            let gw = consts.gamma_sym.mul_vec(w);
            let row = self.det.row_mut(l);
            axpy(m, &gw, row);
            axpy(m, &be.params.c, row);
        }
        GradientBundle {
            names: flat_names(prefix),
            values: vec![
                self.a.as_slice().to_vec(),
                self.b,
                self.lambda.as_slice().to_vec(),
                self.gamma.as_slice().to_vec(),
                self.c,
                vec![self.k],
                self.det.as_slice().to_vec(),
            ],
        }
    }
}

fn flat_names(prefix: &str) -> Vec<String> {
    [
        "preproc.a",
        "preproc.b",
        "lambda",
        "gamma",
        "c",
        "k",
        "detectors",
    ]
    .iter()
    .map(|n| format!("{prefix}{n}"))
    .collect()
}

/// Backpropagates score gradients `ds` of one sample into `acc`, returning
/// the gradient with respect to the raw input.
fn flat_backward<T: Scalar>(
    be: &FlatBackend<T>,
    consts: &FlatConsts<T>,
    x: &[T],
    proj: &Projected<T>,
    ds: &[T],
    acc: &mut FlatAccum<T>,
) -> Vec<T> {
    let u = &proj.u;
    let d = u.len();
    let two = T::two();
    let sigma: T = ds.iter().copied().sum();
    let mut r = vec![T::zero(); d];
    let lt_u = consts.lambda_t.mul_vec(u);
    for (l, &g) in ds.iter().enumerate() {
        if g == T::zero() {
            continue;
        }
        axpy(g, be.detectors.row(l), &mut r);
        axpy(two * g, &lt_u, acc.det.row_mut(l));
        acc.det_mass[l] += g;
    }
    acc.k += sigma;
    axpy(sigma, u, &mut acc.c);
    acc.lambda.add_outer(two, u, &r);
    acc.gamma.add_outer(sigma, u, u);

    let mut du = be.params.lambda.mul_vec(&r);
    for v in du.iter_mut() {
        *v *= two;
    }
    axpy(sigma, &consts.gamma_sym.mul_vec(u), &mut du);
    axpy(sigma, &be.params.c, &mut du);

    let radial = dot(u, &du);
    let dv: Vec<T> = du
        .iter()
        .zip(u)
        .map(|(&g, &ui)| (g - radial * ui) / proj.norm)
        .collect();
    acc.a.add_outer(T::one(), &dv, x);
    axpy(T::one(), &dv, &mut acc.b);
    be.preproc.a.tr_mul_vec(&dv)
}

fn flat_params<T: Scalar>(b: &FlatBackend<T>) -> Vec<&[T]> {
    vec![
        b.preproc.a.as_slice(),
        &b.preproc.b,
        b.params.lambda.as_slice(),
        b.params.gamma.as_slice(),
        &b.params.c,
        std::slice::from_ref(&b.params.k),
        b.detectors.as_slice(),
    ]
}

fn flat_params_mut<T: Scalar>(b: &mut FlatBackend<T>) -> Vec<&mut [T]> {
    vec![
        b.preproc.a.as_mut_slice(),
        &mut b.preproc.b,
        b.params.lambda.as_mut_slice(),
        b.params.gamma.as_mut_slice(),
        &mut b.params.c,
        std::slice::from_mut(&mut b.params.k),
        b.detectors.as_mut_slice(),
    ]
}

fn symmetrize_flat<T: Scalar>(b: &mut FlatBackend<T>) {
    b.params.lambda.symmetrize();
    b.params.gamma.symmetrize();
}

fn closed_labels(labels: &[usize]) -> Vec<Option<usize>> {
    labels.iter().map(|&l| Some(l)).collect()
}

fn check_batch<T>(xs: &[&[T]], labels: &[usize]) -> Result<()> {
    if xs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            found: labels.len(),
        });
    }
    if xs.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(())
}

fn flat_forward<T: Scalar>(
    b: &FlatBackend<T>,
    xs: &[&[T]],
) -> Result<(Vec<Projected<T>>, Vec<Vec<T>>)> {
    let projs: Vec<Projected<T>> = xs
        .par_iter()
        .map(|x| b.preproc.project(x))
        .collect::<Result<_>>()?;
    let scores = projs.par_iter().map(|p| b.score_projected(&p.u)).collect();
    Ok((projs, scores))
}

impl<T: Scalar> Trainable<T> for FlatBackend<T> {
    fn group_names(&self) -> Vec<String> {
        flat_names("")
    }

    fn params(&self) -> Vec<&[T]> {
        flat_params(self)
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        flat_params_mut(self)
    }

    fn after_step(&mut self) {
        symmetrize_flat(self);
    }

    fn loss(&self, xs: &[&[T]], labels: &[usize], pi: f64, alpha: f64) -> Result<T> {
        check_flat_alpha(alpha)?;
        check_batch(xs, labels)?;
        let (_, scores) = flat_forward(self, xs)?;
        Ok(bce_loss_grad(&scores, &closed_labels(labels), pi)?.0)
    }

    fn loss_and_grad(
        &self,
        xs: &[&[T]],
        labels: &[usize],
        pi: f64,
        alpha: f64,
    ) -> Result<(T, GradientBundle<T>)> {
        check_flat_alpha(alpha)?;
        check_batch(xs, labels)?;
        let (projs, scores) = flat_forward(self, xs)?;
        let (loss, ds) = bce_loss_grad(&scores, &closed_labels(labels), pi)?;
        let consts = FlatConsts::new(self);
        let idx: Vec<usize> = (0..xs.len()).collect();
        let partials: Vec<FlatAccum<T>> = idx
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc = FlatAccum::zeros(self);
                for &i in chunk {
                    flat_backward(self, &consts, xs[i], &projs[i], &ds[i], &mut acc);
                }
                acc
            })
            .collect();
        let mut total = FlatAccum::zeros(self);
        for p in &partials {
            total.merge(p);
        }
        let bundle = total.finish(self, &consts, "");
        bundle.check_finite()?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        Ok((loss, bundle))
    }
}

fn check_flat_alpha(alpha: f64) -> Result<()> {
    if alpha != 0.0 {
        return Err(Error::invalid(
            "a cluster-loss weight needs a hierarchical backend",
        ));
    }
    Ok(())
}

/// Forward values of one sample through both stages.
struct HierSample<T> {
    p1: Projected<T>,
    /// Per cluster: shifted input and its projection (multi-language clusters only).
    p2: Vec<Option<(Vec<T>, Projected<T>)>>,
    l_c: Vec<T>,
    lan: Vec<T>,
    d_c: Vec<T>,
    d_lc: Vec<T>,
}

fn hier_sample<T: Scalar>(h: &HierBackend<T>, x: &[T]) -> Result<HierSample<T>> {
    let p1 = h.stage1.preproc.project(x)?;
    let l_c = h.stage1.score_projected(&p1.u);
    let n_l = h.stage2.n_detectors();
    let mut l_lc = vec![T::zero(); n_l];
    let mut p2 = Vec::with_capacity(h.members().len());
    for (c, m) in h.members().iter().enumerate() {
        if m.len() < 2 {
            p2.push(None);
            continue;
        }
        let xc = sub_vec(x, h.shifts.row(c));
        let pr = h.stage2.preproc.project(&xc)?;
        for &l in m {
            l_lc[l] = crate::plda::pair_score(&h.stage2.params, h.stage2.detectors.row(l), &pr.u);
        }
        p2.push(Some((xc, pr)));
    }
    let (mut lan, mut d_c, mut d_lc) = (
        vec![T::zero(); n_l],
        vec![T::zero(); n_l],
        vec![T::zero(); n_l],
    );
    for l in 0..n_l {
        let c = h.cluster_of_lang()[l];
        let (v, a, b) = combine_with_grad(l_c[c], l_lc[l], h.odds_c()[c], h.odds_lc()[l])?;
        lan[l] = v;
        d_c[l] = a;
        d_lc[l] = b;
    }
    Ok(HierSample {
        p1,
        p2,
        l_c,
        lan,
        d_c,
        d_lc,
    })
}

struct HierAccum<T> {
    s1: FlatAccum<T>,
    s2: FlatAccum<T>,
    shifts: Matrix<T>,
}

impl<T: Scalar> HierBackend<T> {
    fn hier_forward(
        &self,
        xs: &[&[T]],
        labels: &[usize],
        pi: f64,
        alpha: f64,
    ) -> Result<HierForward<T>> {
        check_alpha(alpha)?;
        check_batch(xs, labels)?;
        let n_l = self.stage2.n_detectors();
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_l) {
            return Err(Error::invalid(format!(
                "label {bad} is not among the {n_l} detectors"
            )));
        }
        let samples: Vec<HierSample<T>> = xs
            .par_iter()
            .map(|x| hier_sample(self, x))
            .collect::<Result<_>>()?;
        let lan: Vec<Vec<T>> = samples.iter().map(|s| s.lan.clone()).collect();
        let (lan_loss, d_lan) = bce_loss_grad(&lan, &closed_labels(labels), pi)?;
        let (loss, d_clu) = if alpha > 0.0 {
            let clu: Vec<Vec<T>> = samples.iter().map(|s| s.l_c.clone()).collect();
            let cl: Vec<Option<usize>> = labels
                .iter()
                .map(|&l| Some(self.cluster_of_lang()[l]))
                .collect();
            let (clu_loss, d_clu) = bce_loss_grad(&clu, &cl, pi)?;
            (
                T::c(1.0 - alpha) * lan_loss + T::c(alpha) * clu_loss,
                Some(d_clu),
            )
        } else {
            (lan_loss, None)
        };
        Ok(HierForward {
            samples,
            loss,
            d_lan,
            d_clu,
        })
    }
}

struct HierForward<T> {
    samples: Vec<HierSample<T>>,
    loss: T,
    d_lan: Vec<Vec<T>>,
    d_clu: Option<Vec<Vec<T>>>,
}

impl<T: Scalar> Trainable<T> for HierBackend<T> {
    fn group_names(&self) -> Vec<String> {
        let mut n = flat_names("stage1.");
        n.extend(flat_names("stage2."));
        n.push("shifts".into());
        n
    }

    fn params(&self) -> Vec<&[T]> {
        let mut p = flat_params(&self.stage1);
        p.extend(flat_params(&self.stage2));
        p.push(self.shifts.as_slice());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut p = flat_params_mut(&mut self.stage1);
        p.extend(flat_params_mut(&mut self.stage2));
        p.push(self.shifts.as_mut_slice());
        p
    }

    fn after_step(&mut self) {
        symmetrize_flat(&mut self.stage1);
        symmetrize_flat(&mut self.stage2);
    }

    fn loss(&self, xs: &[&[T]], labels: &[usize], pi: f64, alpha: f64) -> Result<T> {
        Ok(self.hier_forward(xs, labels, pi, alpha)?.loss)
    }

    fn loss_and_grad(
        &self,
        xs: &[&[T]],
        labels: &[usize],
        pi: f64,
        alpha: f64,
    ) -> Result<(T, GradientBundle<T>)> {
        let fw = self.hier_forward(xs, labels, pi, alpha)?;
        let c1 = FlatConsts::new(&self.stage1);
        let c2 = FlatConsts::new(&self.stage2);
        let w_lan = T::c(1.0 - alpha);
        let n_c = self.members().len();
        let n_l = self.stage2.n_detectors();
        let zeros = || HierAccum {
            s1: FlatAccum::zeros(&self.stage1),
            s2: FlatAccum::zeros(&self.stage2),
            shifts: Matrix::zeros(n_c, self.shifts.cols()),
        };
        let idx: Vec<usize> = (0..xs.len()).collect();
        let partials: Vec<HierAccum<T>> = idx
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc = zeros();
                for &i in chunk {
                    let s = &fw.samples[i];
                    let mut ds1 = match &fw.d_clu {
                        Some(d) => d[i].iter().map(|&g| g * T::c(alpha)).collect(),
                        None => vec![T::zero(); n_c],
                    };
                    let mut ds2 = vec![T::zero(); n_l];
                    for l in 0..n_l {
                        let g = w_lan * fw.d_lan[i][l];
                        ds1[self.cluster_of_lang()[l]] += g * s.d_c[l];
                        ds2[l] = g * s.d_lc[l];
                    }
                    flat_backward(&self.stage1, &c1, xs[i], &s.p1, &ds1, &mut acc.s1);
                    for (c, m) in self.members().iter().enumerate() {
                        let Some((xc, pr)) = &s.p2[c] else { continue };
                        let mut dsc = vec![T::zero(); n_l];
                        for &l in m {
                            dsc[l] = ds2[l];
                        }
                        let dx = flat_backward(&self.stage2, &c2, xc, pr, &dsc, &mut acc.s2);
                        axpy(-T::one(), &dx, acc.shifts.row_mut(c));
                    }
                }
                acc
            })
            .collect();
        let mut total = zeros();
        for p in &partials {
            total.s1.merge(&p.s1);
            total.s2.merge(&p.s2);
            for (a, &b) in total
                .shifts
                .as_mut_slice()
                .iter_mut()
                .zip(p.shifts.as_slice())
            {
                *a += b;
            }
        }
        let mut bundle = total.s1.finish(&self.stage1, &c1, "stage1.");
        let b2 = total.s2.finish(&self.stage2, &c2, "stage2.");
        bundle.names.extend(b2.names);
        bundle.values.extend(b2.values);
        bundle.names.push("shifts".into());
        bundle.values.push(total.shifts.as_slice().to_vec());
        bundle.check_finite()?;
        if !fw.loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        Ok((fw.loss, bundle))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lancluster::ClusterMap;
    use crate::plda::PairScoreParams;
    use crate::preproc::AffinePreproc;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> Matrix<f64> {
        let n = Normal::new(0.0, s).unwrap();
        Matrix::from_row_major(r, c, (0..r * c).map(|_| n.sample(rng)).collect())
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, s: f64) -> Vec<f64> {
        let d = Normal::new(0.0, s).unwrap();
        (0..n).map(|_| d.sample(rng)).collect()
    }

    fn rand_flat(rng: &mut ChaCha8Rng, dim: usize, d: usize, labels: &[&str]) -> FlatBackend<f64> {
        let mut lambda = rand_matrix(rng, d, d, 0.5);
        lambda.symmetrize();
        let mut gamma = rand_matrix(rng, d, d, 0.5);
        gamma.symmetrize();
        let params = PairScoreParams {
            lambda,
            gamma,
            c: rand_vec(rng, d, 0.5),
            k: 0.3,
        };
        let pre = AffinePreproc::new(rand_matrix(rng, d, dim, 1.0), rand_vec(rng, d, 0.5)).unwrap();
        let det = rand_matrix(rng, labels.len(), d, 0.6);
        FlatBackend::new(
            pre,
            params,
            labels.iter().map(|s| s.to_string()).collect(),
            det,
        )
        .unwrap()
    }

    /// Central differences over every entry of every group; returns the
    /// worst relative error, with an absolute floor for tiny gradients.
    fn fd_check<B: Trainable<f64>>(
        b: &B,
        xs: &[&[f64]],
        labels: &[usize],
        pi: f64,
        alpha: f64,
    ) -> f64 {
        let (_, g) = b.loss_and_grad(xs, labels, pi, alpha).unwrap();
        assert_eq!(g.names, b.group_names());
        let sizes: Vec<usize> = b.params().iter().map(|p| p.len()).collect();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for (gi, &n) in sizes.iter().enumerate() {
            assert_eq!(g.values[gi].len(), n, "shape of {}", g.names[gi]);
            for j in 0..n {
                let mut p = b.clone();
                p.params_mut()[gi][j] += h;
                let mut m = b.clone();
                m.params_mut()[gi][j] -= h;
                let fd = (p.loss(xs, labels, pi, alpha).unwrap()
                    - m.loss(xs, labels, pi, alpha).unwrap())
                    / (2.0 * h);
                let an = g.values[gi][j];
                let err = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3);
                assert!(err < 1e-4, "{}[{j}]: analytic {an} fd {fd}", g.names[gi]);
                worst = worst.max(err);
            }
        }
        worst
    }

    #[test]
    fn flat_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = rand_flat(&mut rng, 8, 3, &["a", "b", "c", "d"]);
        let xs: Vec<Vec<f64>> = (0..20).map(|_| rand_vec(&mut rng, 8, 1.0)).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let labels: Vec<usize> = (0..20).map(|i| i % 4).collect();
        fd_check(&b, &refs, &labels, 0.2, 0.0);
    }

    fn rand_hier(rng: &mut ChaCha8Rng) -> HierBackend<f64> {
        let map = ClusterMap::from_groups(
            vec![
                vec!["a".into(), "b".into()],
                vec!["c".into(), "d".into(), "e".into()],
                vec!["f".into()],
            ],
            None,
        )
        .unwrap();
        let s1 = rand_flat(rng, 8, 2, &["a", "c", "f"]);
        let s2 = rand_flat(rng, 8, 3, &["a", "b", "c", "d", "e", "f"]);
        HierBackend::new(s1, s2, rand_matrix(rng, 3, 8, 0.5), map).unwrap()
    }

    #[test]
    fn hier_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = rand_hier(&mut rng);
        let xs: Vec<Vec<f64>> = (0..18).map(|_| rand_vec(&mut rng, 8, 1.0)).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let labels: Vec<usize> = (0..18).map(|i| i % 6).collect();
        fd_check(&h, &refs, &labels, 0.1, 0.0);
        fd_check(&h, &refs, &labels, 0.1, 0.3);
    }

    #[test]
    fn k_gradient_is_the_global_offset_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = rand_flat(&mut rng, 8, 3, &["a", "b", "c", "d"]);
        let xs: Vec<Vec<f64>> = (0..10).map(|_| rand_vec(&mut rng, 8, 1.0)).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let labels: Vec<usize> = (0..10).map(|i| i % 4).collect();
        let (_, g) = b.loss_and_grad(&refs, &labels, 0.3, 0.0).unwrap();
        let scores: Vec<Vec<f64>> = refs.iter().map(|x| b.score_all(x).unwrap()).collect();
        let shifted = |delta: f64| {
            let s: Vec<Vec<f64>> = scores
                .iter()
                .map(|r| r.iter().map(|v| v + delta).collect())
                .collect();
            crate::training::loss::bce_loss(&s, &labels, 0.3).unwrap()
        };
        let dir = (shifted(1e-6) - shifted(-1e-6)) / 2e-6;
        assert!((g.get("k").unwrap()[0] - dir).abs() < 1e-8);
    }

    #[test]
    fn saturated_scores_give_vanishing_gradients() {
        let d = 4;
        let params = PairScoreParams {
            lambda: Matrix::identity(d).scale(500.0),
            gamma: Matrix::zeros(d, d),
            c: vec![0.0; d],
            k: -500.0,
        };
        let b = FlatBackend::new(
            AffinePreproc::identity(d),
            params,
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            Matrix::identity(d),
        )
        .unwrap();
        let xs: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let (loss, g) = b.loss_and_grad(&refs, &[0, 1, 2, 3], 0.01, 0.0).unwrap();
        assert!(loss < 1e-12);
        assert!(g.norm() < 1e-12, "{}", g.norm());
    }

    #[test]
    fn flat_rejects_cluster_weight_and_gradient_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = rand_flat(&mut rng, 8, 3, &["a", "b", "c", "d"]);
        let xs: Vec<Vec<f64>> = (0..300).map(|_| rand_vec(&mut rng, 8, 1.0)).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let labels: Vec<usize> = (0..300).map(|i| i % 4).collect();
        assert!(b.loss_and_grad(&refs, &labels, 0.1, 0.5).is_err());
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let g1 = one.install(|| b.loss_and_grad(&refs, &labels, 0.1, 0.0).unwrap());
        let g2 = b.loss_and_grad(&refs, &labels, 0.1, 0.0).unwrap();
        assert_eq!(g1, g2);
    }
}
