//! Detection metrics: Bayes-threshold decisions, normalized actual and
//! minimum DCF, EER, within-cluster trial subsets and bootstrap intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{Trial, TrialSet};
use crate::error::{Error, Result};
use crate::lancluster::Cluster;
use crate::scalar::Scalar;

pub const DEFAULT_BOOTSTRAP: usize = 1000;
const MAX_REDRAWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        Self {
            p_target: 0.1,
            c_miss: 1.0,
            c_fa: 1.0,
        }
    }
}

impl DcfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_target > 0.0 && self.p_target < 1.0)
            || !(self.c_miss > 0.0)
            || !(self.c_fa > 0.0)
        {
            return Err(Error::invalid(format!("invalid DCF parameters {self:?}")));
        }
        Ok(())
    }

    /// Cost of the best trivial system (accept all or reject all).
    pub fn normalizer(&self) -> f64 {
        (self.c_miss * self.p_target).min(self.c_fa * (1.0 - self.p_target))
    }

    fn cost(&self, pmiss: f64, pfa: f64) -> f64 {
        (self.c_miss * self.p_target * pmiss + self.c_fa * (1.0 - self.p_target) * pfa)
            / self.normalizer()
    }
}

/// `log(c_fa (1 - p) / (c_miss p))`. A trial is accepted iff its score is
/// strictly above this value.
pub fn bayes_threshold(p_target: f64, c_miss: f64, c_fa: f64) -> f64 {
    (c_fa * (1.0 - p_target) / (c_miss * p_target)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActualDcf {
    pub pmiss: f64,
    pub pfa: f64,
    pub dcf_norm: f64,
}

fn check_trials<T: Scalar>(scores: &[T], targets: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            found: scores.len(),
        });
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite() && !s.is_infinite()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    let p = targets.iter().filter(|&&t| t).count();
    let n = targets.len() - p;
    if p == 0 {
        return Err(Error::invalid("no target trials"));
    }
    if n == 0 {
        return Err(Error::invalid("no non-target trials"));
    }
    Ok((p, n))
}

/// Weighted miss and false-alarm rates at a fixed threshold.
fn rates_at<T: Scalar>(
    scores: &[T],
    targets: &[bool],
    mult: Option<&[f64]>,
    threshold: f64,
) -> (f64, f64) {
    let (mut miss, mut fa, mut nt, mut nn) = (0.0, 0.0, 0.0, 0.0);
    for (i, (&s, &t)) in scores.iter().zip(targets).enumerate() {
        let m = mult.map_or(1.0, |m| m[i]);
        if m == 0.0 {
            continue;
        }
        let accept = s.to_f64_lossy() > threshold;
        if t {
            nt += m;
            if !accept {
                miss += m;
            }
        } else {
            nn += m;
            if accept {
                fa += m;
            }
        }
    }
    (miss / nt, fa / nn)
}

pub fn actual_dcf<T: Scalar>(
    scores: &[T],
    targets: &[bool],
    params: &DcfParams,
) -> Result<ActualDcf> {
    params.validate()?;
    check_trials(scores, targets)?;
    let th = bayes_threshold(params.p_target, params.c_miss, params.c_fa);
    let (pmiss, pfa) = rates_at(scores, targets, None, th);
    Ok(ActualDcf {
        pmiss,
        pfa,
        dcf_norm: params.cost(pmiss, pfa),
    })
}

/// Operating points of the threshold sweep, from accept-all to reject-all.
/// Thresholds sit at minus infinity and at every distinct score.
fn sweep<T: Scalar>(scores: &[T], targets: &[bool]) -> Vec<(f64, f64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let p = targets.iter().filter(|&&t| t).count() as f64;
    let n = targets.len() as f64 - p;
    let (mut miss, mut fa_rejected) = (0usize, 0usize);
    let mut points = vec![(0.0, 1.0)];
    let mut i = 0;
    while i < order.len() {
        let v = scores[order[i]];
        while i < order.len() && scores[order[i]] == v {
            if targets[order[i]] {
                miss += 1;
            } else {
                fa_rejected += 1;
            }
            i += 1;
        }
        points.push((miss as f64 / p, 1.0 - fa_rejected as f64 / n));
    }
    points
}

pub fn min_dcf<T: Scalar>(scores: &[T], targets: &[bool], params: &DcfParams) -> Result<f64> {
    params.validate()?;
    check_trials(scores, targets)?;
    Ok(sweep(scores, targets)
        .into_iter()
        .map(|(pm, pf)| params.cost(pm, pf))
        .fold(f64::INFINITY, f64::min))
}

/// Equal error rate by linear interpolation between the two adjacent
/// operating points where `Pmiss - Pfa` changes sign.
pub fn eer<T: Scalar>(scores: &[T], targets: &[bool]) -> Result<f64> {
    check_trials(scores, targets)?;
    let pts = sweep(scores, targets);
    let k = pts
        .iter()
        .position(|&(pm, pf)| pm - pf >= 0.0)
        .expect("the reject-all point has Pmiss = 1, Pfa = 0");
    let (pm1, pf1) = pts[k];
    if pm1 == pf1 || k == 0 {
        return Ok(pm1);
    }
    let (pm0, pf0) = pts[k - 1];
    let lambda = (pf0 - pm0) / ((pm1 - pm0) - (pf1 - pf0));
    Ok(pm0 + lambda * (pm1 - pm0))
}

/// Keeps trials whose sample language and detector both belong to the cluster.
pub fn subset_trials(trials: &TrialSet, cluster: &Cluster) -> Result<TrialSet> {
    if cluster.languages.len() < 2 {
        return Err(Error::invalid(format!(
            "cluster {} has fewer than two languages",
            cluster.name
        )));
    }
    let inside = |l: &str| cluster.languages.iter().any(|c| c == l);
    let kept: Vec<Trial> = trials
        .trials
        .iter()
        .filter(|t| {
            inside(&trials.sample_languages[t.sample]) && inside(&trials.detectors[t.detector])
        })
        .copied()
        .collect();
    Ok(TrialSet {
        detectors: trials.detectors.clone(),
        sample_ids: trials.sample_ids.clone(),
        sample_languages: trials.sample_languages.clone(),
        trials: kept,
    })
}

/// Percentile interval of the normalized actual DCF over sample-level
/// bootstrap replicates. Replicate `i` draws from its own stream of a
/// ChaCha generator seeded with `seed`, so results do not depend on the
/// number of worker threads.
pub fn bootstrap_ci<T: Scalar>(
    scores: &[T],
    targets: &[bool],
    sample_of_trial: &[usize],
    n_boot: usize,
    seed: u64,
    params: &DcfParams,
) -> Result<(f64, f64)> {
    params.validate()?;
    check_trials(scores, targets)?;
    if sample_of_trial.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            found: sample_of_trial.len(),
        });
    }
    if n_boot == 0 {
        return Err(Error::invalid("n_boot must be positive"));
    }
    let mut samples: Vec<usize> = sample_of_trial.to_vec();
    samples.sort_unstable();
    samples.dedup();
    if samples.len() < 2 {
        return Err(Error::invalid(
            "bootstrap needs at least two distinct samples",
        ));
    }
    let slot: std::collections::HashMap<usize, usize> =
        samples.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let slot_of_trial: Vec<usize> = sample_of_trial.iter().map(|s| slot[s]).collect();
    let th = bayes_threshold(params.p_target, params.c_miss, params.c_fa);
    let n = samples.len();
    let mut values = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            for _ in 0..=MAX_REDRAWS {
                let mut count = vec![0.0f64; n];
                for _ in 0..n {
                    count[rng.random_range(0..n)] += 1.0;
                }
                let mult: Vec<f64> = slot_of_trial.iter().map(|&s| count[s]).collect();
                let has_t = targets.iter().zip(&mult).any(|(&t, &m)| t && m > 0.0);
                let has_n = targets.iter().zip(&mult).any(|(&t, &m)| !t && m > 0.0);
                if has_t && has_n {
                    let (pm, pf) = rates_at(scores, targets, Some(&mult), th);
                    return Ok(params.cost(pm, pf));
                }
            }
            Err(Error::invalid(format!(
                "bootstrap replicate {b} lacked targets or non-targets after {MAX_REDRAWS} redraws"
            )))
        })
        .collect::<Result<Vec<f64>>>()?;
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite costs"));
    let rank = |per_mille: usize| (per_mille * n_boot).div_ceil(1000).max(1);
    Ok((values[rank(25) - 1], values[rank(975) - 1]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pmiss: f64,
    pub pfa: f64,
    pub actual_dcf_norm: f64,
    pub min_dcf_norm: f64,
    pub eer: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapSpec {
    pub n_boot: usize,
    pub seed: u64,
}

/// All metrics for a trial set given the dense `samples × detectors` scores.
pub fn evaluate<T: Scalar>(
    trials: &TrialSet,
    score_rows: &[Vec<T>],
    params: &DcfParams,
    bootstrap: Option<BootstrapSpec>,
) -> Result<MetricReport> {
    let scores = trials.gather(score_rows);
    let targets = trials.targets();
    let act = actual_dcf(&scores, &targets, params)?;
    let ci = match bootstrap {
        Some(b) => Some(bootstrap_ci(
            &scores,
            &targets,
            &trials.sample_of_trial(),
            b.n_boot,
            b.seed,
            params,
        )?),
        None => None,
    };
    Ok(MetricReport {
        pmiss: act.pmiss,
        pfa: act.pfa,
        actual_dcf_norm: act.dcf_norm,
        min_dcf_norm: min_dcf(&scores, &targets, params)?,
        eer: eer(&scores, &targets)?,
        n_target: trials.n_targets(),
        n_nontarget: trials.len() - trials.n_targets(),
        ci_low: ci.map(|c| c.0),
        ci_high: ci.map(|c| c.1),
    })
}

/// One row per `(system, subset)` report, for plotting.
pub fn report_table_tsv(rows: &[(String, String, MetricReport)]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
    let mut out = String::from(
        "system\tsubset\tactual_dcf_norm\tmin_dcf_norm\teer\tpmiss\tpfa\tn_target\tn_nontarget\tci_low\tci_high\n",
    );
    for (sys, sub, r) in rows {
        out.push_str(&format!(
            "{sys}\t{sub}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.actual_dcf_norm,
            r.min_dcf_norm,
            r.eer,
            r.pmiss,
            r.pfa,
            r.n_target,
            r.n_nontarget,
            opt(r.ci_low),
            opt(r.ci_high)
        ));
    }
    out
}
