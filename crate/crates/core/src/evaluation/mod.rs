//! Independent checks of the cost model and optimizer: an element-level
//! loop-nest counter, exact search, search baselines and rank correlation.

pub mod exhaustive;
pub mod oracle;
pub mod search;
pub mod stats;

pub use exhaustive::{exhaustive_best, ExhaustiveResult, SPACE_LIMIT};
pub use oracle::{loopnest_count, strategy_counts, Boundary, OracleCounts, MAC_LIMIT};
pub use search::{ga_search, gradient_search, random_search, GaParams, Method, SearchResult};
pub use stats::{rank_correlation, RankCorrelation};
