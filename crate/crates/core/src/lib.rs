//! Generative, discriminative and hierarchical PLDA backends for language
//! detection over fixed-dimension embeddings.
//!
//! Everything numeric is generic over [`Scalar`]; the `*64` aliases below
//! fix it to `f64`, which is what the CLI uses.

pub mod backend_flat;
pub mod backend_hier;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod lancluster;
pub mod linalg;
pub mod metrics;
pub mod modelfile;
pub mod plda;
pub mod preproc;
pub mod scalar;
pub mod synthgen;
pub mod training;

pub use backend_flat::{
    init_from_generative, init_generative, FlatBackend, GenerativeBackend, GenerativeInit, Scorer,
};
pub use backend_hier::{combine_llr, combine_with_grad, init_hier, HierBackend, Odds};
pub use dataio::{EmbeddingRecord, EmbeddingSet, LabelIndex, TrialSet};
pub use error::{Error, Result};
pub use lancluster::{
    agglomerate, linkage, plda_distance_matrix, ClusterMap, DistanceMatrix, Merge,
};
pub use linalg::Matrix;
pub use metrics::{actual_dcf, bayes_threshold, eer, min_dcf, DcfParams, MetricReport};
pub use modelfile::{ModelBody, ModelFile};
pub use plda::{
    em_train, exact_llr, pair_score, to_pair_params, Enrollment, PairScoreParams, PldaModel,
};
pub use preproc::AffinePreproc;
pub use scalar::Scalar;
pub use synthgen::{SynthConfig, SynthData};
pub use training::{multi_seed_train, train, TrainConfig, Trainable};

pub type Matrix64 = Matrix<f64>;
pub type EmbeddingSet64 = EmbeddingSet<f64>;
pub type AffinePreproc64 = AffinePreproc<f64>;
pub type PldaModel64 = PldaModel<f64>;
pub type PairScoreParams64 = PairScoreParams<f64>;
pub type FlatBackend64 = FlatBackend<f64>;
pub type GenerativeBackend64 = GenerativeBackend<f64>;
pub type HierBackend64 = HierBackend<f64>;
pub type DistanceMatrix64 = DistanceMatrix<f64>;
