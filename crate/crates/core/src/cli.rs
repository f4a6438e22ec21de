//! Command-line front end. Exit codes: 0 success, 1 runtime or numeric
//! failure, 2 usage or configuration error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::backend_flat::init_from_generative;
use crate::backend_hier::init_hier;
use crate::dataio::{
    balance_weights, format_scores, load_embeddings, parse_scores, per_language_means,
    save_embeddings, trials_from_scores, EmbeddingSet,
};
use crate::error::Error;
use crate::lancluster::{cut, dendrogram_tsv, linkage, plda_distance_matrix, ClusterMap};
use crate::metrics::{
    bootstrap_ci, evaluate, report_table_tsv, subset_trials, BootstrapSpec, DcfParams,
};
use crate::modelfile::{ModelBody, ModelFile};
use crate::synthgen::{
    generate, run_comparison, ComparisonOptions, SynthConfig, ThresholdChoice, SYSTEMS,
};
use crate::training::{multi_seed_train, DevSet, TrainConfig};

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub msg: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: 2,
            msg: msg.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. }
            | Error::NotPositiveDefinite(_)
            | Error::NonFinite(_)
            | Error::DegenerateEmbedding(_) => 1,
            _ => 2,
        };
        Self {
            code,
            msg: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "hplda",
    version,
    about = "PLDA, DPLDA and HDPLDA language-detection backends"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Plda,
    Dplda,
    Hdplda,
}

#[derive(Debug, clap::Args)]
pub struct DcfArgs {
    #[arg(long, default_value_t = 0.1)]
    pub p_target: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c_miss: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c_fa: f64,
}

impl DcfArgs {
    fn params(&self) -> CliResult<DcfParams> {
        let p = DcfParams {
            p_target: self.p_target,
            c_miss: self.c_miss,
            c_fa: self.c_fa,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic train/dev/test embeddings and the true cluster map.
    Synth {
        /// SynthConfig JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Cluster languages by the PLDA distance between their means.
    Cluster {
        #[arg(long)]
        train: PathBuf,
        /// Model file of kind `plda`.
        #[arg(long)]
        model: PathBuf,
        /// Merges stop once the linkage distance exceeds this value.
        #[arg(long, allow_hyphen_values = true)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the output path with extension `dendrogram.tsv`.
        #[arg(long)]
        dendrogram: Option<PathBuf>,
    },
    /// Train a backend and write the model file and its training log.
    Train {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        train: PathBuf,
        /// Dev EMB-TSV files, named by file stem. Required for dplda and hdplda.
        #[arg(long)]
        dev: Vec<PathBuf>,
        /// TrainConfig JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Cluster map JSON. Required for hdplda.
        #[arg(long)]
        clusters: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the output path with extension `log.tsv`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score every sample of an EMB-TSV file against every detector.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detection-cost metrics of a score table.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        /// EMB-TSV file carrying the true language of each sample.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, requires = "subset")]
        cluster: Option<PathBuf>,
        /// Restrict to trials inside this cluster of `--cluster`.
        #[arg(long, requires = "cluster")]
        subset: Option<String>,
        /// Number of bootstrap replicates for a confidence interval.
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        dcf: DcfArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bootstrap confidence interval of the normalized actual DCF.
    Bootstrap {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = crate::metrics::DEFAULT_BOOTSTRAP)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        dcf: DcfArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate all three systems on synthetic data.
    Compare {
        #[arg(long)]
        synth_config: Option<PathBuf>,
        #[arg(long)]
        train_config: Option<PathBuf>,
        /// Fixed clustering threshold; tuned on dev when omitted.
        #[arg(long, allow_hyphen_values = true)]
        threshold: Option<f64>,
        #[arg(long, default_value_t = crate::metrics::DEFAULT_BOOTSTRAP)]
        bootstrap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Parses a JSON config; errors carry the path of the offending key.
pub fn parse_config<C: DeserializeOwned>(text: &str, what: &str) -> CliResult<C> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::usage(format!("{what}: at `{path}`: {}", e.into_inner()))
    })
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e).into())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    s.push('\n');
    write_text(path, &s)
}

fn load_config<C: DeserializeOwned + Default>(path: Option<&Path>, what: &str) -> CliResult<C> {
    match path {
        Some(p) => parse_config(&read_text(p)?, &format!("{what} {}", p.display())),
        None => Ok(C::default()),
    }
}

fn load_clusters(path: &Path) -> CliResult<ClusterMap> {
    ClusterMap::from_json(&read_text(path)?)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> CliResult<ModelFile> {
    ModelFile::from_json(&read_text(path)?)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e).into())
}

fn label_map(set: &EmbeddingSet<f64>) -> BTreeMap<String, String> {
    set.records()
        .iter()
        .map(|r| (r.sample_id.clone(), r.language.clone()))
        .collect()
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth { config, out_dir } => cmd_synth(config.as_deref(), &out_dir),
        Command::Cluster {
            train,
            model,
            threshold,
            out,
            dendrogram,
        } => {
            let dendrogram = dendrogram.unwrap_or_else(|| out.with_extension("dendrogram.tsv"));
            cmd_cluster(&train, &model, threshold, &out, &dendrogram)
        }
        Command::Train {
            kind,
            train,
            dev,
            config,
            clusters,
            out,
            log,
        } => {
            let log = log.unwrap_or_else(|| out.with_extension("log.tsv"));
            cmd_train(
                kind,
                &train,
                &dev,
                config.as_deref(),
                clusters.as_deref(),
                &out,
                &log,
            )
        }
        Command::Score { model, test, out } => cmd_score(&model, &test, &out),
        Command::Eval {
            scores,
            labels,
            cluster,
            subset,
            bootstrap,
            seed,
            dcf,
            out,
        } => {
            let spec = bootstrap.map(|n_boot| BootstrapSpec { n_boot, seed });
            let subset = cluster.as_deref().zip(subset.as_deref());
            cmd_eval(&scores, &labels, subset, spec, &dcf.params()?, &out)
        }
        Command::Bootstrap {
            scores,
            labels,
            n,
            seed,
            dcf,
            out,
        } => cmd_bootstrap(&scores, &labels, n, seed, &dcf.params()?, &out),
        Command::Compare {
            synth_config,
            train_config,
            threshold,
            bootstrap,
            seed,
            out_dir,
        } => cmd_compare(
            synth_config.as_deref(),
            train_config.as_deref(),
            threshold,
            bootstrap,
            seed,
            &out_dir,
        ),
    }
}

pub fn cmd_synth(config: Option<&Path>, out_dir: &Path) -> CliResult<()> {
    let cfg: SynthConfig = load_config(config, "synth config")?;
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let data = generate::<f64>(&cfg)?;
    create_dir(out_dir)?;
    save_embeddings(&data.train, out_dir.join("train.tsv"))?;
    save_embeddings(&data.dev, out_dir.join("dev.tsv"))?;
    save_embeddings(&data.test, out_dir.join("test.tsv"))?;
    write_text(
        &out_dir.join("truth_clusters.json"),
        &(data.truth.to_json() + "\n"),
    )
}

pub fn cmd_cluster(
    train: &Path,
    model: &Path,
    threshold: f64,
    out: &Path,
    dendrogram: &Path,
) -> CliResult<()> {
    if threshold.is_nan() {
        return Err(CliError::usage("threshold must not be NaN"));
    }
    let model = load_model(model)?;
    let ModelBody::Plda { preproc, plda, .. } = &model.body else {
        return Err(CliError::usage(format!(
            "clustering needs a plda model, got {}",
            model.body.kind()
        )));
    };
    let set = load_embeddings::<f64>(train)?;
    let languages = set.languages();
    let means = per_language_means(&set, None, &languages)?;
    let dist = plda_distance_matrix(&means, plda, preproc)?;
    let merges = linkage(&dist);
    let map = ClusterMap::from_groups(cut(&dist.labels, &merges, threshold), Some(threshold))?;
    info!(
        "{} languages in {} clusters",
        map.n_languages(),
        map.n_clusters()
    );
    write_text(out, &(map.to_json() + "\n"))?;
    write_text(dendrogram, &dendrogram_tsv(&merges))
}

fn load_dev_sets(paths: &[PathBuf]) -> CliResult<Vec<DevSet<f64>>> {
    let mut out: Vec<DevSet<f64>> = Vec::new();
    for p in paths {
        let name = p.file_stem().map_or_else(
            || p.display().to_string(),
            |s| s.to_string_lossy().into_owned(),
        );
        if out.iter().any(|d| d.name == name) {
            return Err(CliError::usage(format!(
                "two dev sets share the name {name}"
            )));
        }
        out.push(DevSet {
            name,
            set: load_embeddings(p)?,
        });
    }
    Ok(out)
}

pub fn cmd_train(
    kind: Kind,
    train: &Path,
    dev: &[PathBuf],
    config: Option<&Path>,
    clusters: Option<&Path>,
    out: &Path,
    log: &Path,
) -> CliResult<()> {
    if kind == Kind::Hdplda && clusters.is_none() {
        return Err(CliError::usage("hdplda training needs --clusters"));
    }
    if kind != Kind::Plda && dev.is_empty() {
        return Err(CliError::usage(
            "discriminative training needs at least one --dev set",
        ));
    }
    let cfg: TrainConfig = load_config(config, "train config")?;
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let clusters = clusters.map(load_clusters).transpose()?;
    let set = load_embeddings::<f64>(train)?;
    let weights = balance_weights(&set);
    let n_l = set.languages().len();
    if n_l < 2 {
        return Err(CliError::usage("training needs at least two languages"));
    }
    let flat_dim = cfg.lda_dim.unwrap_or(n_l - 1);
    let (file, log_tsv) = match kind {
        Kind::Plda => {
            let gen = init_from_generative(&set, &weights, flat_dim)?;
            let mut tsv = String::from("iteration\tlog_likelihood\n");
            for (i, v) in gen.em_log_likelihood.iter().enumerate() {
                tsv.push_str(&format!("{i}\t{v}\n"));
            }
            let mut file = ModelFile::generative(&gen.generative_backend()?);
            file.train_config_used = Some(cfg.clone());
            (file, tsv)
        }
        Kind::Dplda => {
            let dev = load_dev_sets(dev)?;
            let gen = init_from_generative(&set, &weights, flat_dim)?;
            let outcome = multi_seed_train(|_| Ok(gen.backend.clone()), &set, &dev, &cfg)?;
            let best = outcome.best;
            info!("dplda: seed {} dev value {}", best.seed, best.dev_value);
            (
                ModelFile::new(
                    ModelBody::Dplda(best.backend),
                    Some(cfg.clone()),
                    Some(best.seed),
                ),
                best.log.to_tsv(),
            )
        }
        Kind::Hdplda => {
            let dev = load_dev_sets(dev)?;
            let map = clusters.expect("checked above");
            let n_c = map.n_clusters();
            let d1 = cfg.lda_dim_stage1.unwrap_or(n_c.saturating_sub(1));
            let d2 = cfg.lda_dim_stage2.unwrap_or(n_l.saturating_sub(n_c));
            let init = init_hier(&set, &map, &weights, d1, d2)?;
            let outcome = multi_seed_train(|_| Ok(init.clone()), &set, &dev, &cfg)?;
            let best = outcome.best;
            info!("hdplda: seed {} dev value {}", best.seed, best.dev_value);
            (
                ModelFile::new(
                    ModelBody::Hdplda(best.backend),
                    Some(cfg.clone()),
                    Some(best.seed),
                ),
                best.log.to_tsv(),
            )
        }
    };
    file.save(out)?;
    write_text(log, &log_tsv)
}

pub fn cmd_score(model: &Path, test: &Path, out: &Path) -> CliResult<()> {
    let model = load_model(model)?;
    let loaded = model.scorer()?;
    let scorer = loaded.as_scorer();
    let set = load_embeddings::<f64>(test)?;
    let rows = scorer.score_set(&set)?;
    let ids: Vec<String> = set.records().iter().map(|r| r.sample_id.clone()).collect();
    write_text(out, &format_scores(&ids, scorer.detector_labels(), &rows)?)
}

fn load_trials(
    scores: &Path,
    labels: &Path,
) -> CliResult<(crate::dataio::TrialSet, Vec<Vec<f64>>)> {
    let lines = parse_scores::<f64>(&read_text(scores)?)?;
    let set = load_embeddings::<f64>(labels)?;
    Ok(trials_from_scores(&lines, &label_map(&set))?)
}

pub fn cmd_eval(
    scores: &Path,
    labels: &Path,
    subset: Option<(&Path, &str)>,
    bootstrap: Option<BootstrapSpec>,
    params: &DcfParams,
    out: &Path,
) -> CliResult<()> {
    let (mut trials, rows) = load_trials(scores, labels)?;
    if let Some((clusters, name)) = subset {
        let map = load_clusters(clusters)?;
        let cluster = map
            .cluster_by_name(name)
            .ok_or_else(|| CliError::usage(format!("no cluster named {name}")))?;
        trials = subset_trials(&trials, cluster)?;
    }
    let report = evaluate(&trials, &rows, params, bootstrap)?;
    write_json(out, &report)
}

#[derive(Serialize)]
struct BootstrapReport {
    actual_dcf_norm: f64,
    ci_low: f64,
    ci_high: f64,
    n_boot: usize,
    seed: u64,
}

pub fn cmd_bootstrap(
    scores: &Path,
    labels: &Path,
    n: usize,
    seed: u64,
    params: &DcfParams,
    out: &Path,
) -> CliResult<()> {
    if n == 0 {
        return Err(CliError::usage("--n must be positive"));
    }
    let (trials, rows) = load_trials(scores, labels)?;
    let s = trials.gather(&rows);
    let t = trials.targets();
    let act = crate::metrics::actual_dcf(&s, &t, params)?;
    let (lo, hi) = bootstrap_ci(&s, &t, &trials.sample_of_trial(), n, seed, params)?;
    write_json(
        out,
        &BootstrapReport {
            actual_dcf_norm: act.dcf_norm,
            ci_low: lo,
            ci_high: hi,
            n_boot: n,
            seed,
        },
    )
}

pub fn cmd_compare(
    synth_config: Option<&Path>,
    train_config: Option<&Path>,
    threshold: Option<f64>,
    n_boot: usize,
    seed: u64,
    out_dir: &Path,
) -> CliResult<()> {
    let synth: SynthConfig = load_config(synth_config, "synth config")?;
    synth
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let train: TrainConfig = load_config(train_config, "train config")?;
    train
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let opts = ComparisonOptions {
        threshold: threshold.map_or(ThresholdChoice::TunedOnDev, ThresholdChoice::Fixed),
        bootstrap: (n_boot > 0).then_some(BootstrapSpec { n_boot, seed }),
        dcf: DcfParams::default(),
    };
    let result = run_comparison(&synth, &train, &opts)?;
    create_dir(out_dir)?;
    write_json(&out_dir.join("report.json"), &result.report)?;
    write_text(
        &out_dir.join("dendrogram.tsv"),
        &dendrogram_tsv(&result.report.dendrogram),
    )?;
    let ids: Vec<String> = result
        .test
        .records()
        .iter()
        .map(|r| r.sample_id.clone())
        .collect();
    let mut table = Vec::new();
    for sys in SYSTEMS {
        let (dets, rows) = &result.scores[sys];
        write_text(
            &out_dir.join(format!("scores_{sys}.tsv")),
            &format_scores(&ids, dets, rows)?,
        )?;
        for (subset, r) in &result.report.systems[sys] {
            table.push((sys.to_string(), subset.clone(), r.clone()));
        }
    }
    write_text(&out_dir.join("report_table.tsv"), &report_table_tsv(&table))?;
    for sys in SYSTEMS {
        let s = &result.report.summary[sys];
        println!(
            "{sys}\tall {:.4}\twithin {}",
            s.all_actual_dcf_norm,
            s.within_cluster_actual_dcf_norm
                .map_or("NA".into(), |v| format!("{v:.4}"))
        );
    }
    println!("clusters recovered: {}", result.report.truth_recovered);
    Ok(())
}
