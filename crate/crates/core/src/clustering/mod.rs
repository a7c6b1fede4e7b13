//! Semi-supervised clustering of the joint embedding set, estimation of the
//! number of clusters, and matched accuracy on the target.

mod estimate_k;
mod hungarian;
mod kmeans;
mod metrics;

pub use estimate_k::{
    brent_minimize, estimate_k, known_centers, KEstimate, KMethod, DEFAULT_K_CAP, K_RESTARTS,
};
pub use hungarian::{hungarian, Matching};
pub use kmeans::{
    confident_pseudo_pins, init_centers, kmeans, ss_kmeans, ss_kmeans_from, ClusteringResult,
    PinOrigin, PinSet, DEFAULT_PIN_THRESHOLD, MAX_LLOYD_ITERS,
};
pub use metrics::{auroc, gcd_accuracy, GcdMetrics};
