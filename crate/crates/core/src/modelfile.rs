//! JSON model files for the three backend kinds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend_flat::{FlatBackend, GenerativeBackend, Scorer};
use crate::backend_hier::HierBackend;
use crate::error::{Error, Result};
use crate::plda::{Enrollment, PldaModel};
use crate::preproc::AffinePreproc;
use crate::training::TrainConfig;

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelBody {
    Plda {
        preproc: AffinePreproc<f64>,
        plda: PldaModel<f64>,
        detectors: Vec<Enrollment<f64>>,
    },
    Dplda(FlatBackend<f64>),
    Hdplda(HierBackend<f64>),
}

impl ModelBody {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelBody::Plda { .. } => "plda",
            ModelBody::Dplda(_) => "dplda",
            ModelBody::Hdplda(_) => "hdplda",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: String,
    #[serde(flatten)]
    pub body: ModelBody,
    pub train_config_used: Option<TrainConfig>,
    pub seed: Option<u64>,
}

/// A loaded model ready for scoring.
pub enum LoadedScorer {
    Plda(GenerativeBackend<f64>),
    Dplda(FlatBackend<f64>),
    Hdplda(HierBackend<f64>),
}

impl LoadedScorer {
    pub fn as_scorer(&self) -> &dyn Scorer<f64> {
        match self {
            LoadedScorer::Plda(b) => b,
            LoadedScorer::Dplda(b) => b,
            LoadedScorer::Hdplda(b) => b,
        }
    }
}

impl ModelFile {
    pub fn new(body: ModelBody, train_config_used: Option<TrainConfig>, seed: Option<u64>) -> Self {
        Self {
            format_version: FORMAT_VERSION.into(),
            body,
            train_config_used,
            seed,
        }
    }

    pub fn generative(b: &GenerativeBackend<f64>) -> Self {
        Self::new(
            ModelBody::Plda {
                preproc: b.preproc.clone(),
                plda: b.model.clone(),
                detectors: b.enrollments.clone(),
            },
            None,
            None,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let m: ModelFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::invalid(format!("model file at `{path}`: {}", e.into_inner()))
        })?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "format_version: unsupported `{}` (expected `{FORMAT_VERSION}`)",
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(&path, self.to_json()?).map_err(|e| Error::io(&path, e))
    }

    pub fn scorer(&self) -> Result<LoadedScorer> {
        Ok(match &self.body {
            ModelBody::Plda {
                preproc,
                plda,
                detectors,
            } => LoadedScorer::Plda(GenerativeBackend::new(
                preproc.clone(),
                plda.clone(),
                detectors.clone(),
            )?),
            ModelBody::Dplda(b) => LoadedScorer::Dplda(b.clone()),
            ModelBody::Hdplda(b) => LoadedScorer::Hdplda(b.clone()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend_flat::init_from_generative;
    use crate::dataio::balance_weights;
    use crate::synthgen::{generate, SplitSizes, SynthConfig};

    fn data() -> crate::synthgen::SynthData<f64> {
        generate(&SynthConfig {
            dim: 6,
            cluster_sizes: vec![2, 2],
            samples_per_language: SplitSizes {
                train: 30,
                dev: 5,
                test: 5,
            },
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_scores_bitwise() {
        let d = data();
        let gen = init_from_generative(&d.train, &balance_weights(&d.train), 3).unwrap();
        let files = [
            ModelFile::generative(&gen.generative_backend().unwrap()),
            ModelFile::new(
                ModelBody::Dplda(gen.backend.clone()),
                Some(TrainConfig::default()),
                Some(4),
            ),
        ];
        for f in files {
            let back = ModelFile::from_json(&f.to_json().unwrap()).unwrap();
            assert_eq!(back, f);
            let a = f.scorer().unwrap().as_scorer().score_set(&d.test).unwrap();
            let b = back
                .scorer()
                .unwrap()
                .as_scorer()
                .score_set(&d.test)
                .unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_unknown_kind_and_version() {
        let e = ModelFile::from_json(r#"{"format_version": "1", "kind": "svm"}"#).unwrap_err();
        assert!(e.to_string().contains("svm"), "{e}");
        let d = data();
        let gen = init_from_generative(&d.train, &balance_weights(&d.train), 3).unwrap();
        let mut f = ModelFile::generative(&gen.generative_backend().unwrap());
        f.format_version = "2".into();
        let e = ModelFile::from_json(&f.to_json().unwrap()).unwrap_err();
        assert!(e.to_string().contains("format_version"));
    }
}
