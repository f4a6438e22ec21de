//! Embedding sets, the EMB-TSV interchange format, detection trials and
//! held-out splitting.
//!
//! EMB-TSV is UTF-8 text. The first line is `#dim=<D>`; every following
//! line is `sample_id<TAB>language<TAB>dataset<TAB>f1 f2 ... fD`.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord<T> {
    pub sample_id: String,
    pub language: String,
    pub dataset: String,
    pub vector: Vec<T>,
}

/// Ordered, validated collection of records sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet<T> {
    records: Vec<EmbeddingRecord<T>>,
    dim: usize,
}

impl<T: Scalar> EmbeddingSet<T> {
    pub fn new(records: Vec<EmbeddingRecord<T>>) -> Result<Self> {
        let dim = records.first().ok_or(Error::EmptySet)?.vector.len();
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.vector.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.vector.len(),
                });
            }
            if r.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("embedding {}", r.sample_id)));
            }
            if !seen.insert(r.sample_id.as_str()) {
                return Err(Error::DuplicateSample(r.sample_id.clone()));
            }
        }
        Ok(Self { records, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord<T>] {
        &self.records
    }

    pub fn vectors(&self) -> Vec<&[T]> {
        self.records.iter().map(|r| r.vector.as_slice()).collect()
    }

    /// Sorted, de-duplicated language inventory.
    pub fn languages(&self) -> Vec<String> {
        let mut v: Vec<String> = self.records.iter().map(|r| r.language.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn datasets(&self) -> Vec<String> {
        let mut v: Vec<String> = self.records.iter().map(|r| r.dataset.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Sorted `(language, dataset)` groups with the record indices in each.
    pub fn groups(&self) -> BTreeMap<(String, String), Vec<usize>> {
        let mut g: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            g.entry((r.language.clone(), r.dataset.clone()))
                .or_default()
                .push(i);
        }
        g
    }

    fn subset(&self, idx: &[usize]) -> Vec<EmbeddingRecord<T>> {
        idx.iter().map(|&i| self.records[i].clone()).collect()
    }
}

pub fn parse_embeddings<T: Scalar>(text: &str) -> Result<EmbeddingSet<T>> {
    let mut lines = text.lines().enumerate();
    let header_dim = match lines.next() {
        Some((_, h)) => {
            let h = h.trim_end_matches('\r');
            let d = h.strip_prefix("#dim=").ok_or_else(|| Error::Parse {
                line: 1,
                msg: format!("expected `#dim=<D>` header, found `{h}`"),
            })?;
            d.trim().parse::<usize>().map_err(|e| Error::Parse {
                line: 1,
                msg: format!("bad dimension `{d}`: {e}"),
            })?
        }
        None => return Err(Error::EmptySet),
    };
    if header_dim == 0 {
        return Err(Error::Parse {
            line: 1,
            msg: "dimension must be positive".into(),
        });
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut dim: Option<usize> = None;
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.splitn(4, '\t');
        let mut next = |name: &str| {
            fields.next().ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("missing field `{name}`"),
            })
        };
        let sample_id = next("sample_id")?.to_string();
        let language = next("language")?.to_string();
        let dataset = next("dataset")?.to_string();
        let values = next("vector")?;
        let vector = values
            .split_ascii_whitespace()
            .map(|tok| {
                tok.parse::<T>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line: lineno,
                        msg: format!("non-numeric value `{tok}`"),
                    })
            })
            .collect::<Result<Vec<T>>>()?;
        let expected = *dim.get_or_insert(vector.len());
        if vector.len() != expected || vector.len() != header_dim {
            return Err(Error::DimensionMismatchAtLine {
                line: lineno,
                expected: header_dim,
                found: vector.len(),
            });
        }
        if !seen.insert(sample_id.clone()) {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("duplicate sample_id `{sample_id}`"),
            });
        }
        records.push(EmbeddingRecord {
            sample_id,
            language,
            dataset,
            vector,
        });
    }
    EmbeddingSet::new(records)
}

pub fn load_embeddings<T: Scalar>(path: impl AsRef<Path>) -> Result<EmbeddingSet<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text)
}

/// Floats are written in shortest round-trip form, so reading the file back
/// reproduces every value exactly.
pub fn format_embeddings<T: Scalar>(set: &EmbeddingSet<T>) -> Result<String> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut out = String::new();
    writeln!(out, "#dim={}", set.dim()).unwrap();
    for r in set.records() {
        for (name, f) in [
            ("sample_id", &r.sample_id),
            ("language", &r.language),
            ("dataset", &r.dataset),
        ] {
            if f.contains(['\t', '\n']) || f.is_empty() {
                return Err(Error::invalid(format!(
                    "{name} `{f}` is empty or contains tab/newline"
                )));
            }
        }
        write!(out, "{}\t{}\t{}\t", r.sample_id, r.language, r.dataset).unwrap();
        for (j, v) in r.vector.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn save_embeddings<T: Scalar>(set: &EmbeddingSet<T>, path: impl AsRef<Path>) -> Result<()> {
    let text = format_embeddings(set)?;
    std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path, e))
}

/// Maps each record to a class index; class names are sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelIndex {
    pub names: Vec<String>,
    pub of_record: Vec<usize>,
}

impl LabelIndex {
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Self {
        let mut names: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
        names.sort();
        names.dedup();
        let of_record = labels
            .iter()
            .map(|s| {
                names
                    .binary_search_by(|n| n.as_str().cmp(s.as_ref()))
                    .unwrap()
            })
            .collect();
        Self { names, of_record }
    }

    pub fn languages_of<T: Scalar>(set: &EmbeddingSet<T>) -> Self {
        let labels: Vec<&str> = set.records().iter().map(|r| r.language.as_str()).collect();
        Self::from_labels(&labels)
    }

    pub fn n_classes(&self) -> usize {
        self.names.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trial {
    pub sample: usize,
    pub detector: usize,
    pub is_target: bool,
}

/// Every sample crossed with every detector, sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSet {
    pub detectors: Vec<String>,
    pub sample_ids: Vec<String>,
    pub sample_languages: Vec<String>,
    pub trials: Vec<Trial>,
}

impl TrialSet {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn n_targets(&self) -> usize {
        self.trials.iter().filter(|t| t.is_target).count()
    }

    pub fn targets(&self) -> Vec<bool> {
        self.trials.iter().map(|t| t.is_target).collect()
    }

    /// Per-trial sample index, for resampling at the sample level.
    pub fn sample_of_trial(&self) -> Vec<usize> {
        self.trials.iter().map(|t| t.sample).collect()
    }

    /// Picks entries of a dense `samples × detectors` score matrix, in trial order.
    pub fn gather<T: Copy>(&self, score_rows: &[Vec<T>]) -> Vec<T> {
        self.trials
            .iter()
            .map(|t| score_rows[t.sample][t.detector])
            .collect()
    }
}

pub fn generate_trials<T: Scalar>(set: &EmbeddingSet<T>, detectors: &[String]) -> Result<TrialSet> {
    trials_from_labels(
        set.records()
            .iter()
            .map(|r| (r.sample_id.clone(), r.language.clone())),
        detectors,
    )
}

pub fn trials_from_labels(
    samples: impl IntoIterator<Item = (String, String)>,
    detectors: &[String],
) -> Result<TrialSet> {
    if detectors.is_empty() {
        return Err(Error::invalid("detector list is empty"));
    }
    let (sample_ids, sample_languages): (Vec<String>, Vec<String>) = samples.into_iter().unzip();
    let mut trials = Vec::with_capacity(sample_ids.len() * detectors.len());
    for (s, lang) in sample_languages.iter().enumerate() {
        for (d, det) in detectors.iter().enumerate() {
            trials.push(Trial {
                sample: s,
                detector: d,
                is_target: lang == det,
            });
        }
    }
    Ok(TrialSet {
        detectors: detectors.to_vec(),
        sample_ids,
        sample_languages,
        trials,
    })
}

#[derive(Debug, Clone)]
pub struct Holdout<T> {
    pub train: EmbeddingSet<T>,
    pub heldout: EmbeddingSet<T>,
    pub warnings: Vec<String>,
}

/// Stratified split per `(language, dataset)`: `floor(fraction · n)` records
/// of each group are held out. Singleton groups stay in train.
pub fn split_holdout<T: Scalar>(
    set: &EmbeddingSet<T>,
    fraction: f64,
    seed: u64,
) -> Result<Holdout<T>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "holdout fraction {fraction} not in (0,1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut held = vec![false; set.len()];
    let mut warnings = Vec::new();
    for ((lang, ds), mut idx) in set.groups() {
        if idx.len() < 2 {
            let msg = format!("group ({lang}, {ds}) has a single sample; kept in train");
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let n_held = (fraction * idx.len() as f64).floor() as usize;
        idx.shuffle(&mut rng);
        for &i in &idx[..n_held] {
            held[i] = true;
        }
    }
    let (h, t): (Vec<usize>, Vec<usize>) = (0..set.len()).partition(|&i| held[i]);
    let train = EmbeddingSet::new(set.subset(&t))?;
    let heldout = if h.is_empty() {
        return Err(Error::invalid(
            "held-out partition is empty; increase the fraction",
        ));
    } else {
        EmbeddingSet::new(set.subset(&h))?
    };
    Ok(Holdout {
        train,
        heldout,
        warnings,
    })
}

/// Weighted per-class means; `weights = None` means uniform.
pub fn class_means<T: Scalar>(
    vectors: &[&[T]],
    labels: &[usize],
    n_classes: usize,
    weights: Option<&[T]>,
) -> Result<Vec<Vec<T>>> {
    let dim = vectors.first().ok_or(Error::EmptySet)?.len();
    let mut sums = vec![vec![T::zero(); dim]; n_classes];
    let mut mass = vec![T::zero(); n_classes];
    for (i, (v, &c)) in vectors.iter().zip(labels).enumerate() {
        let w = weights.map_or(T::one(), |w| w[i]);
        crate::linalg::axpy(w, v, &mut sums[c]);
        mass[c] += w;
    }
    sums.into_iter()
        .zip(mass)
        .enumerate()
        .map(|(c, (s, m))| {
            if m > T::zero() {
                Ok(s.into_iter().map(|x| x / m).collect())
            } else {
                Err(Error::invalid(format!("class {c} has no samples")))
            }
        })
        .collect()
}

pub fn per_language_means<T: Scalar>(
    set: &EmbeddingSet<T>,
    weights: Option<&[T]>,
    languages: &[String],
) -> Result<BTreeMap<String, Vec<T>>> {
    if let Some(w) = weights {
        if w.len() != set.len() {
            return Err(Error::DimensionMismatch {
                expected: set.len(),
                found: w.len(),
            });
        }
    }
    let labels = LabelIndex::languages_of(set);
    for l in languages {
        if labels.names.binary_search(l).is_err() {
            return Err(Error::UnknownLanguage(l.clone()));
        }
    }
    let means = class_means(
        &set.vectors(),
        &labels.of_record,
        labels.n_classes(),
        weights,
    )?;
    Ok(labels
        .names
        .into_iter()
        .zip(means)
        .filter(|(n, _)| languages.contains(n))
        .collect())
}

/// `1 / count(language, dataset)` per record, unnormalized.
pub fn balance_weights<T: Scalar>(set: &EmbeddingSet<T>) -> Vec<T> {
    let mut w = vec![T::zero(); set.len()];
    for idx in set.groups().values() {
        let v = T::one() / T::from_usize_lossy(idx.len());
        for &i in idx {
            w[i] = v;
        }
    }
    w
}

/// One `(sample, detector, score)` line of a score table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLine<T> {
    pub sample_id: String,
    pub detector: String,
    pub llr: T,
}

/// `sample_id<TAB>detector<TAB>llr` per line, sample-major, scores at nine
/// significant digits.
pub fn format_scores<T: Scalar>(
    sample_ids: &[String],
    detectors: &[String],
    rows: &[Vec<T>],
) -> Result<String> {
    if sample_ids.len() != rows.len() {
        return Err(Error::DimensionMismatch {
            expected: sample_ids.len(),
            found: rows.len(),
        });
    }
    let mut out = String::new();
    for (id, row) in sample_ids.iter().zip(rows) {
        if row.len() != detectors.len() {
            return Err(Error::DimensionMismatch {
                expected: detectors.len(),
                found: row.len(),
            });
        }
        for (d, v) in detectors.iter().zip(row) {
            writeln!(out, "{id}\t{d}\t{:.8e}", v.to_f64_lossy()).unwrap();
        }
    }
    Ok(out)
}

pub fn parse_scores<T: Scalar>(text: &str) -> Result<Vec<ScoreLine<T>>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected 3 tab-separated fields, found {}", f.len()),
            });
        }
        let llr = f[2]
            .parse::<T>()
            .ok()
            .filter(|v| !v.is_nan())
            .ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("bad score `{}`", f[2]),
            })?;
        out.push(ScoreLine {
            sample_id: f[0].to_string(),
            detector: f[1].to_string(),
            llr,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(out)
}

/// Dense score rows and trials from a score table and the true labels of
/// its samples. Detectors keep their order of first appearance.
pub fn trials_from_scores<T: Scalar>(
    lines: &[ScoreLine<T>],
    labels: &BTreeMap<String, String>,
) -> Result<(TrialSet, Vec<Vec<T>>)> {
    let mut detectors: Vec<String> = Vec::new();
    let mut samples: Vec<String> = Vec::new();
    let mut det_idx = std::collections::HashMap::new();
    let mut sample_idx = std::collections::HashMap::new();
    for l in lines {
        if !det_idx.contains_key(&l.detector) {
            det_idx.insert(l.detector.clone(), detectors.len());
            detectors.push(l.detector.clone());
        }
        if !sample_idx.contains_key(&l.sample_id) {
            sample_idx.insert(l.sample_id.clone(), samples.len());
            samples.push(l.sample_id.clone());
        }
    }
    let mut rows = vec![vec![T::nan(); detectors.len()]; samples.len()];
    let mut seen = vec![vec![false; detectors.len()]; samples.len()];
    let mut trials = Vec::with_capacity(lines.len());
    let sample_languages = samples
        .iter()
        .map(|s| {
            labels
                .get(s)
                .cloned()
                .ok_or_else(|| Error::invalid(format!("no label for sample `{s}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    for l in lines {
        let (s, d) = (sample_idx[&l.sample_id], det_idx[&l.detector]);
        if seen[s][d] {
            return Err(Error::invalid(format!(
                "duplicate score for ({}, {})",
                l.sample_id, l.detector
            )));
        }
        seen[s][d] = true;
        rows[s][d] = l.llr;
        trials.push(Trial {
            sample: s,
            detector: d,
            is_target: sample_languages[s] == detectors[d],
        });
    }
    Ok((
        TrialSet {
            detectors,
            sample_ids: samples,
            sample_languages,
            trials,
        },
        rows,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, lang: &str, ds: &str, v: &[f64]) -> EmbeddingRecord<f64> {
        EmbeddingRecord {
            sample_id: id.into(),
            language: lang.into(),
            dataset: ds.into(),
            vector: v.to_vec(),
        }
    }

    #[test]
    fn parses_two_rows() {
        let s: EmbeddingSet<f64> =
            parse_embeddings("#dim=3\na\ten\td0\t1 2 3\nb\tfr\td0\t4 5 6.5\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.dim(), 3);
        assert_eq!(s.records()[1].vector, vec![4.0, 5.0, 6.5]);
    }

    #[test]
    fn dimension_mismatch_names_line() {
        let err =
            parse_embeddings::<f64>("#dim=3\na\ten\td0\t1 2 3\nb\ten\td0\t1 2 3 4\n").unwrap_err();
        assert!(
            matches!(err, Error::DimensionMismatchAtLine { line: 3, .. }),
            "{err}"
        );
        assert!(err.to_string().contains("dimension mismatch at line 3"));
    }

    #[test]
    fn header_only_is_empty() {
        assert!(matches!(
            parse_embeddings::<f64>("#dim=3\n"),
            Err(Error::EmptySet)
        ));
        assert!(matches!(parse_embeddings::<f64>(""), Err(Error::EmptySet)));
    }

    #[test]
    fn non_numeric_and_duplicates_rejected() {
        let err = parse_embeddings::<f64>("#dim=2\na\ten\td0\t1 x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_embeddings::<f64>("#dim=1\na\ten\td0\t1\na\ten\td0\t2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
        let err = parse_embeddings::<f64>("#dim=1\na\ten\td0\tNaN\n").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn unicode_labels_round_trip() {
        let set = EmbeddingSet::new(vec![rec("s1", "español", "ñ-set", &[0.1, 1e-300])]).unwrap();
        let text = format_embeddings(&set).unwrap();
        let back: EmbeddingSet<f64> = parse_embeddings(&text).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn saving_empty_set_fails() {
        let empty = EmbeddingSet::<f64> {
            records: vec![],
            dim: 2,
        };
        assert!(format_embeddings(&empty).is_err());
    }

    #[test]
    fn trial_counts() {
        let set = EmbeddingSet::new(vec![
            rec("1", "a", "d", &[0.0]),
            rec("2", "a", "d", &[0.0]),
            rec("3", "b", "d", &[0.0]),
        ])
        .unwrap();
        let t = generate_trials(&set, &["a".into(), "b".into()]).unwrap();
        assert_eq!(t.len(), 6);
        assert_eq!(t.n_targets(), 3);

        let oos = EmbeddingSet::new(vec![rec("1", "c", "d", &[0.0])]).unwrap();
        let t = generate_trials(&oos, &["a".into(), "b".into()]).unwrap();
        assert_eq!((t.len(), t.n_targets()), (2, 0));

        let one = EmbeddingSet::new(vec![rec("1", "a", "d", &[0.0])]).unwrap();
        let t = generate_trials(&one, &["a".into()]).unwrap();
        assert_eq!((t.len(), t.n_targets()), (1, 1));
        assert!(generate_trials(&one, &[]).is_err());
    }

    fn grouped(sizes: &[(&str, usize)]) -> EmbeddingSet<f64> {
        let mut recs = Vec::new();
        for (lang, n) in sizes {
            for i in 0..*n {
                recs.push(rec(&format!("{lang}{i}"), lang, "d0", &[i as f64]));
            }
        }
        EmbeddingSet::new(recs).unwrap()
    }

    #[test]
    fn holdout_stratified_and_deterministic() {
        let set = grouped(&[("a", 100), ("b", 100)]);
        let s1 = split_holdout(&set, 0.1, 5).unwrap();
        assert_eq!(s1.heldout.len(), 20);
        for l in ["a", "b"] {
            assert_eq!(
                s1.heldout
                    .records()
                    .iter()
                    .filter(|r| r.language == l)
                    .count(),
                10
            );
        }
        let s2 = split_holdout(&set, 0.1, 5).unwrap();
        assert_eq!(s1.heldout, s2.heldout);
        assert_eq!(s1.train, s2.train);
    }

    #[test]
    fn holdout_floor_rule_and_singletons() {
        let set = grouped(&[("a", 3), ("b", 1)]);
        let s = split_holdout(&set, 0.5, 0).unwrap();
        assert_eq!(s.heldout.len(), 1);
        assert_eq!(s.train.len(), 3);
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn means_and_weights() {
        let set = EmbeddingSet::new(vec![
            rec("1", "a", "x", &[0.0, 0.0]),
            rec("2", "a", "y", &[2.0, 0.0]),
        ])
        .unwrap();
        let m = per_language_means(&set, None, &["a".into()]).unwrap();
        assert_eq!(m["a"], vec![1.0, 0.0]);
        let m = per_language_means(&set, Some(&[1.0, 3.0]), &["a".into()]).unwrap();
        assert_eq!(m["a"], vec![1.5, 0.0]);
        assert!(matches!(
            per_language_means(&set, None, &["zz".into()]),
            Err(Error::UnknownLanguage(_))
        ));
    }

    #[test]
    fn balance_weight_examples() {
        let set = grouped(&[("a", 4)]);
        assert_eq!(balance_weights(&set), vec![0.25; 4]);
        let set = grouped(&[("a", 1), ("b", 2)]);
        assert_eq!(balance_weights(&set), vec![1.0, 0.5, 0.5]);
        let set = grouped(&[("a", 1)]);
        assert_eq!(balance_weights(&set), vec![1.0]);
    }

    #[test]
    fn score_table_round_trip() {
        let ids = vec!["s1".to_string(), "s2".to_string()];
        let dets = vec!["a".to_string(), "b".to_string()];
        let rows = vec![vec![1.234567891234, -0.5], vec![1e-20, 42.0]];
        let text = format_scores(&ids, &dets, &rows).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("s1\ta\t1.23456789e0\n"));
        let lines = parse_scores::<f64>(&text).unwrap();
        let labels: BTreeMap<String, String> = [("s1", "a"), ("s2", "c")]
            .iter()
            .map(|(s, l)| (s.to_string(), l.to_string()))
            .collect();
        let (trials, back) = trials_from_scores(&lines, &labels).unwrap();
        assert_eq!(trials.detectors, dets);
        assert_eq!(trials.n_targets(), 1);
        assert_eq!(back[1][1], 42.0);
        assert!(parse_scores::<f64>("s1\ta\n").is_err());
        let missing: BTreeMap<String, String> = BTreeMap::new();
        assert!(trials_from_scores(&lines, &missing).is_err());
    }
}
