//! The three graphs the model convolves over, plus pre-sampled neighbour
//! tables for the bipartite graph.

mod bipartite;
mod bundle;
mod presample;
mod similarity;

pub use bipartite::{build_bipartite, BipartiteGraph};
pub use bundle::{read_bundle, write_bundle, GraphBundle, GraphConfig, BUNDLE_MAGIC};
pub use presample::{presample, SampledNeighborTable};
pub use similarity::{
    build_from_similarity, build_similarity_graph, calibrate_threshold, cosine_similarity,
    threshold_graph, Axis, Calibration, CosineProfiles, PairwiseSimilarity, SimilarityConfig,
    SimilarityGraph,
};
