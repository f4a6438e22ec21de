//! Synthetic hierarchical embeddings and the three-system comparison.
//!
//! Cluster means are drawn around the origin, language means around their
//! cluster mean, and samples around their language mean plus a per-dataset
//! shift.

use std::collections::BTreeMap;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::backend_flat::{init_from_generative, Scorer};
use crate::backend_hier::init_hier;
use crate::dataio::{
    balance_weights, generate_trials, per_language_means, EmbeddingRecord, EmbeddingSet, TrialSet,
};
use crate::error::{Error, Result};
use crate::lancluster::{linkage, plda_distance_matrix, ClusterMap, Merge};
use crate::metrics::{evaluate, subset_trials, BootstrapSpec, DcfParams, MetricReport};
use crate::scalar::Scalar;
use crate::training::{multi_seed_train, DevSet, TrainConfig, Trainable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub dim: usize,
    /// Languages per cluster.
    pub cluster_sizes: Vec<usize>,
    pub sigma_cluster: f64,
    pub sigma_language: f64,
    pub sigma_within: f64,
    pub n_datasets: usize,
    pub sigma_dataset: f64,
    pub samples_per_language: SplitSizes,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            cluster_sizes: vec![3, 3, 2, 1, 1],
            sigma_cluster: 3.0,
            sigma_language: 1.0,
            sigma_within: 0.7,
            n_datasets: 2,
            sigma_dataset: 0.3,
            samples_per_language: SplitSizes {
                train: 200,
                dev: 40,
                test: 40,
            },
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// The message names the offending field.
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, why: &str| Err(Error::invalid(format!("{f}: {why}")));
        if self.dim == 0 {
            return bad("dim", "must be positive");
        }
        if self.cluster_sizes.is_empty() || self.cluster_sizes.contains(&0) {
            return bad(
                "cluster_sizes",
                "needs at least one cluster and no empty cluster",
            );
        }
        if !(self.sigma_cluster > 0.0 && self.sigma_cluster.is_finite()) {
            return bad("sigma_cluster", "must be positive");
        }
        if !(self.sigma_within > 0.0 && self.sigma_within.is_finite()) {
            return bad("sigma_within", "must be positive");
        }
        if !(self.sigma_language >= 0.0 && self.sigma_language.is_finite()) {
            return bad("sigma_language", "must be non-negative");
        }
        if !(self.sigma_dataset >= 0.0 && self.sigma_dataset.is_finite()) {
            return bad("sigma_dataset", "must be non-negative");
        }
        if self.n_datasets == 0 {
            return bad("n_datasets", "must be positive");
        }
        let s = &self.samples_per_language;
        if s.train == 0 || s.dev == 0 || s.test == 0 {
            return bad(
                "samples_per_language",
                "every split needs at least one sample",
            );
        }
        Ok(())
    }

    pub fn n_languages(&self) -> usize {
        self.cluster_sizes.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData<T> {
    pub train: EmbeddingSet<T>,
    pub dev: EmbeddingSet<T>,
    pub test: EmbeddingSet<T>,
    pub truth: ClusterMap,
}

/// Draws a full synthetic corpus. Sample `k` of every language and split
/// belongs to dataset `k mod n_datasets`.
pub fn generate<T: Scalar>(config: &SynthConfig) -> Result<SynthData<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let draw = |rng: &mut ChaCha8Rng, s: f64| -> Vec<f64> {
        (0..config.dim).map(|_| s * std.sample(rng)).collect()
    };
    let mut languages = Vec::new();
    let mut groups = Vec::new();
    for (i, &size) in config.cluster_sizes.iter().enumerate() {
        let cm = draw(&mut rng, config.sigma_cluster);
        let mut g = Vec::with_capacity(size);
        for j in 0..size {
            let off = draw(&mut rng, config.sigma_language);
            let lm: Vec<f64> = cm.iter().zip(&off).map(|(a, b)| a + b).collect();
            let name = format!("c{i}_l{j}");
            g.push(name.clone());
            languages.push((name, lm));
        }
        groups.push(g);
    }
    let shifts: Vec<Vec<f64>> = (0..config.n_datasets)
        .map(|_| draw(&mut rng, config.sigma_dataset))
        .collect();
    let split = |name: &str, n: usize, rng: &mut ChaCha8Rng| -> Result<EmbeddingSet<T>> {
        let mut recs = Vec::with_capacity(n * languages.len());
        for (lang, mean) in &languages {
            for k in 0..n {
                let ds = k % config.n_datasets;
                let noise = draw(rng, config.sigma_within);
                recs.push(EmbeddingRecord {
                    sample_id: format!("{name}_{lang}_{k:05}"),
                    language: lang.clone(),
                    dataset: format!("d{ds}"),
                    vector: mean
                        .iter()
                        .zip(&shifts[ds])
                        .zip(&noise)
                        .map(|((m, s), e)| T::c(m + s + e))
                        .collect(),
                });
            }
        }
        EmbeddingSet::new(recs)
    };
    let s = config.samples_per_language;
    let train = split("train", s.train, &mut rng)?;
    let dev = split("dev", s.dev, &mut rng)?;
    let test = split("test", s.test, &mut rng)?;
    Ok(SynthData {
        train,
        dev,
        test,
        truth: ClusterMap::from_groups(groups, None)?,
    })
}

/// How the clustering threshold of the comparison is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ThresholdChoice {
    /// Every cut of the dendrogram, scored on dev by the generatively
    /// initialized hierarchical backend (see [`tune_clusters`]).
    #[default]
    TunedOnDev,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonOptions {
    pub threshold: ThresholdChoice,
    pub bootstrap: Option<BootstrapSpec>,
    pub dcf: DcfParams,
}

impl Default for ComparisonOptions {
    fn default() -> Self {
        Self {
            threshold: ThresholdChoice::TunedOnDev,
            bootstrap: Some(BootstrapSpec {
                n_boot: 1000,
                seed: 0,
            }),
            dcf: DcfParams::default(),
        }
    }
}

pub const SYSTEMS: [&str; 3] = ["plda", "dplda", "hdplda"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSummary {
    pub all_actual_dcf_norm: f64,
    /// Mean over clusters with at least three languages.
    pub within_cluster_actual_dcf_norm: Option<f64>,
    pub dev_value: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCandidate {
    pub threshold: f64,
    pub n_clusters: usize,
    pub gap: f64,
    pub dev_loss: Option<f64>,
    pub dev_dcf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// system → subset → metrics. Subsets are `all` and `within:<cluster>`.
    pub systems: BTreeMap<String, BTreeMap<String, MetricReport>>,
    pub summary: BTreeMap<String, SystemSummary>,
    pub clusters: ClusterMap,
    pub truth: ClusterMap,
    pub truth_recovered: bool,
    pub threshold: f64,
    pub threshold_candidates: Vec<ThresholdCandidate>,
    pub dendrogram: Vec<Merge>,
}

#[derive(Debug, Clone)]
pub struct ComparisonResult {
    pub report: ComparisonReport,
    pub test: EmbeddingSet<f64>,
    /// Dense test scores per system, rows in test-record order.
    pub scores: BTreeMap<String, (Vec<String>, Vec<Vec<f64>>)>,
}

/// Candidate partitions along the dendrogram. After `k` merges the
/// threshold sits halfway between merge `k - 1` and merge `k`; `gap` is the
/// relative width of that interval.
fn cluster_partitions(labels: &[String], merges: &[Merge]) -> Vec<(f64, f64, Vec<Vec<String>>)> {
    (1..merges.len())
        .map(|k| {
            let (lo, hi) = (merges[k - 1].distance, merges[k].distance);
            let t = 0.5 * (lo + hi);
            let scale = lo.abs() + hi.abs();
            let gap = if scale > 0.0 { (hi - lo) / scale } else { 0.0 };
            (t, gap, crate::lancluster::cut(labels, merges, t))
        })
        .collect()
}

fn dev_loss_and_dcf<B: Scorer<f64>>(b: &B, dev: &EmbeddingSet<f64>, pi: f64) -> Result<(f64, f64)> {
    let rows = b.score_set(dev)?;
    let det = b.detector_labels();
    let labels: Vec<Option<usize>> = dev
        .records()
        .iter()
        .map(|r| det.iter().position(|d| d == &r.language))
        .collect();
    let loss = crate::training::bce_loss_grad(&rows, &labels, pi)?.0;
    let trials = generate_trials(dev, det)?;
    let dcf = crate::metrics::actual_dcf(
        &trials.gather(&rows),
        &trials.targets(),
        &DcfParams::default(),
    )?
    .dcf_norm;
    Ok((loss, dcf))
}

/// Dev-tuned language clustering. Every partition along the dendrogram with
/// between 2 and `L - 1` clusters gets a generatively initialized
/// hierarchical backend; the lowest dev actual DCF wins, ties going to the
/// widest dendrogram gap and then to the lowest dev loss.
pub fn tune_clusters(
    train: &EmbeddingSet<f64>,
    dev: &EmbeddingSet<f64>,
    weights: &[f64],
    merges: &[Merge],
    labels: &[String],
    cfg: &TrainConfig,
) -> Result<(ClusterMap, f64, Vec<ThresholdCandidate>)> {
    let n_l = labels.len();
    let mut best: Option<((f64, f64, f64), ClusterMap, f64)> = None;
    let mut candidates = Vec::new();
    for (t, gap, groups) in cluster_partitions(labels, merges) {
        let n_c = groups.len();
        let mut cand = ThresholdCandidate {
            threshold: t,
            n_clusters: n_c,
            gap,
            dev_loss: None,
            dev_dcf: None,
        };
        if n_c >= 2 && n_c < n_l {
            let map = ClusterMap::from_groups(groups, Some(t))?;
            let d1 = cfg.lda_dim_stage1.unwrap_or(n_c - 1).min(n_c - 1);
            let d2 = cfg.lda_dim_stage2.unwrap_or(n_l - n_c).min(n_l - n_c);
            if let Ok(h) = init_hier(train, &map, weights, d1, d2) {
                let (loss, dcf) = dev_loss_and_dcf(&h, dev, cfg.pi)?;
                cand.dev_loss = Some(loss);
                cand.dev_dcf = Some(dcf);
                let key = (dcf, -gap, loss);
                let better = match &best {
                    None => true,
                    Some((k, _, _)) => key.partial_cmp(k) == Some(std::cmp::Ordering::Less),
                };
                if better {
                    best = Some((key, map, t));
                }
            }
        }
        candidates.push(cand);
    }
    let (_, map, t) =
        best.ok_or_else(|| Error::HierarchyDegenerate("no usable clustering threshold".into()))?;
    Ok((map, t, candidates))
}

fn evaluate_system(
    trials: &TrialSet,
    rows: &[Vec<f64>],
    truth: &ClusterMap,
    opts: &ComparisonOptions,
) -> Result<(BTreeMap<String, MetricReport>, SystemSummary)> {
    let mut out = BTreeMap::new();
    let all = evaluate(trials, rows, &opts.dcf, opts.bootstrap)?;
    let mut within = Vec::new();
    for c in &truth.clusters {
        if c.languages.len() < 2 {
            continue;
        }
        let sub = subset_trials(trials, c)?;
        let r = evaluate(&sub, rows, &opts.dcf, opts.bootstrap)?;
        if c.languages.len() >= 3 {
            within.push(r.actual_dcf_norm);
        }
        out.insert(format!("within:{}", c.name), r);
    }
    let summary = SystemSummary {
        all_actual_dcf_norm: all.actual_dcf_norm,
        within_cluster_actual_dcf_norm: (!within.is_empty())
            .then(|| within.iter().sum::<f64>() / within.len() as f64),
        dev_value: None,
        seed: None,
    };
    out.insert("all".into(), all);
    Ok((out, summary))
}

fn train_system<B: Trainable<f64>>(
    init: &B,
    train: &EmbeddingSet<f64>,
    dev: &[DevSet<f64>],
    cfg: &TrainConfig,
) -> Result<(B, f64, u64)> {
    let out = multi_seed_train(|_| Ok(init.clone()), train, dev, cfg)?;
    Ok((out.best.backend, out.best.dev_value, out.best.seed))
}

/// Generative PLDA on `train`, then average linkage over the PLDA distance
/// between language means. Returns the merges, the sorted languages and the
/// balancing weights used for training.
pub fn plda_dendrogram(
    train: &EmbeddingSet<f64>,
    lda_dim: Option<usize>,
) -> Result<(Vec<Merge>, Vec<String>, Vec<f64>)> {
    let languages = train.languages();
    let weights = balance_weights(train);
    let gen = init_from_generative(
        train,
        &weights,
        lda_dim.unwrap_or(languages.len().saturating_sub(1)),
    )?;
    let means = per_language_means(train, None, &languages)?;
    let merges = linkage(&plda_distance_matrix(
        &means,
        &gen.model,
        &gen.backend.preproc,
    )?);
    Ok((merges, languages, weights))
}

/// Generates data, trains the three systems on it and evaluates them on
/// all test trials and on the within-cluster subsets of the true clusters.
pub fn run_comparison(
    config: &SynthConfig,
    train_cfg: &TrainConfig,
    opts: &ComparisonOptions,
) -> Result<ComparisonResult> {
    train_cfg.validate()?;
    let data = generate::<f64>(config)?;
    let languages = data.train.languages();
    let n_l = languages.len();
    if n_l < 3 {
        return Err(Error::invalid(
            "the comparison needs at least three languages",
        ));
    }
    let weights = balance_weights(&data.train);
    let dev = vec![DevSet {
        name: "dev".into(),
        set: data.dev.clone(),
    }];
    let trials = generate_trials(&data.test, &languages)?;

    let flat_dim = train_cfg.lda_dim.unwrap_or(n_l - 1);
    let gen = init_from_generative(&data.train, &weights, flat_dim)?;
    let plda = gen.generative_backend()?;

    let means = per_language_means(&data.train, None, &languages)?;
    let dist = plda_distance_matrix(&means, &gen.model, &gen.backend.preproc)?;
    let merges = linkage(&dist);
    let (clusters, threshold, candidates) = match opts.threshold {
        ThresholdChoice::Fixed(t) => (
            ClusterMap::from_groups(crate::lancluster::cut(&languages, &merges, t), Some(t))?,
            t,
            Vec::new(),
        ),
        ThresholdChoice::TunedOnDev => tune_clusters(
            &data.train,
            &data.dev,
            &weights,
            &merges,
            &languages,
            train_cfg,
        )?,
    };
    info!("clusters at threshold {threshold}: {}", clusters.to_json());

    let mut systems = BTreeMap::new();
    let mut summary = BTreeMap::new();
    let mut scores = BTreeMap::new();
    let mut record = |name: &str,
                      rows: Vec<Vec<f64>>,
                      dets: Vec<String>,
                      dev_value: Option<f64>,
                      seed: Option<u64>|
     -> Result<()> {
        let (subsets, mut s) = evaluate_system(&trials, &rows, &data.truth, opts)?;
        s.dev_value = dev_value;
        s.seed = seed;
        info!(
            "{name}: all {} within {:?}",
            s.all_actual_dcf_norm, s.within_cluster_actual_dcf_norm
        );
        systems.insert(name.to_string(), subsets);
        summary.insert(name.to_string(), s);
        scores.insert(name.to_string(), (dets, rows));
        Ok(())
    };

    record(
        "plda",
        plda.score_set(&data.test)?,
        languages.clone(),
        None,
        None,
    )?;

    let (dplda, dv, ds) = train_system(&gen.backend, &data.train, &dev, train_cfg)?;
    record(
        "dplda",
        dplda.score_set(&data.test)?,
        languages.clone(),
        Some(dv),
        Some(ds),
    )?;

    let n_c = clusters.n_clusters();
    let d1 = train_cfg.lda_dim_stage1.unwrap_or(n_c - 1);
    let d2 = train_cfg.lda_dim_stage2.unwrap_or(n_l - n_c);
    let hinit = init_hier(&data.train, &clusters, &weights, d1, d2)?;
    let (hdplda, hv, hs) = train_system(&hinit, &data.train, &dev, train_cfg)?;
    record(
        "hdplda",
        hdplda.score_set(&data.test)?,
        languages.clone(),
        Some(hv),
        Some(hs),
    )?;

    let truth_recovered = clusters.same_partition(&data.truth);
    Ok(ComparisonResult {
        report: ComparisonReport {
            systems,
            summary,
            clusters,
            truth: data.truth,
            truth_recovered,
            threshold,
            threshold_candidates: candidates,
            dendrogram: merges,
        },
        test: data.test,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            dim: 8,
            cluster_sizes: vec![2, 1],
            samples_per_language: SplitSizes {
                train: 20,
                dev: 5,
                test: 5,
            },
            ..SynthConfig::default()
        }
    }

    #[test]
    fn reproducible_and_disjoint() {
        let a = generate::<f64>(&small()).unwrap();
        let b = generate::<f64>(&small()).unwrap();
        assert_eq!(a, b);
        let ids = |s: &EmbeddingSet<f64>| {
            s.records()
                .iter()
                .map(|r| r.sample_id.clone())
                .collect::<std::collections::HashSet<_>>()
        };
        assert!(ids(&a.train).is_disjoint(&ids(&a.dev)));
        assert!(ids(&a.dev).is_disjoint(&ids(&a.test)));
        assert_eq!(a.train.languages(), vec!["c0_l0", "c0_l1", "c1_l0"]);
        assert_eq!(a.train.datasets(), vec!["d0", "d1"]);
        assert_eq!(a.truth.n_clusters(), 2);
        let c = generate::<f64>(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn single_language_mean_is_within_bound() {
        let cfg = SynthConfig {
            cluster_sizes: vec![1],
            n_datasets: 1,
            sigma_dataset: 0.0,
            samples_per_language: SplitSizes {
                train: 400,
                dev: 1,
                test: 1,
            },
            ..small()
        };
        let a = generate::<f64>(&cfg).unwrap();
        // Rebuild the language mean from the generator's draw order.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let cm: Vec<f64> = (0..cfg.dim)
            .map(|_| cfg.sigma_cluster * n.sample(&mut rng))
            .collect();
        let off: Vec<f64> = (0..cfg.dim)
            .map(|_| cfg.sigma_language * n.sample(&mut rng))
            .collect();
        let means = per_language_means(&a.train, None, &a.train.languages()).unwrap();
        let bound = 3.0 * cfg.sigma_within / (400f64).sqrt();
        for (j, m) in means["c0_l0"].iter().enumerate() {
            assert!((m - (cm[j] + off[j])).abs() < bound, "dim {j}");
        }
        let w: Vec<f64> = balance_weights(&a.train);
        assert!(w.iter().all(|&v| v == w[0]));
    }

    #[test]
    fn config_errors_name_the_field() {
        let e = SynthConfig {
            sigma_within: 0.0,
            ..small()
        }
        .validate()
        .unwrap_err();
        assert!(e.to_string().contains("sigma_within"));
        let e = SynthConfig {
            cluster_sizes: vec![2, 0],
            ..small()
        }
        .validate()
        .unwrap_err();
        assert!(e.to_string().contains("cluster_sizes"));
        assert!(serde_json::from_str::<SynthConfig>(r#"{"dimm": 3}"#).is_err());
        let c: SynthConfig = serde_json::from_str(r#"{"dim": 3}"#).unwrap();
        assert_eq!(c.cluster_sizes, vec![3, 3, 2, 1, 1]);
    }
}
