//! Sliding-window voting inference and segmentation metrics.

mod metrics;
mod report;
mod vote;
mod window;

pub use metrics::{
    asd, dice, extract_surface, mhd, nearest_distances_brute, squared_distance_transform,
    surface_distances, surface_distances_brute, Mask,
};
pub use report::{average, evaluate, ClassMetrics, MetricsReport, TISSUES};
pub use vote::{argmax_strided, vote_strategies, Majority, MeanProb, VoteGrid, VoteStrategy, DEFAULT_VOTE};
pub use window::{
    predict_sample, single_pass_predict, sliding_window_predict, tile_corners, tile_starts,
    WindowOptions, DEFAULT_PATCH,
};
