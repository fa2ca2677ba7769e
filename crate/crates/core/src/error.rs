use thiserror::Error;

/// Errors produced by summarization, estimation, and fitting.
#[derive(Debug, Error)]
pub enum Error {
    #[error("attribute `{attribute}`: class index {class} out of range 1..={levels}")]
    ClassOutOfRange {
        attribute: String,
        class: usize,
        levels: usize,
    },

    #[error("group index {group} out of range 1..={count}")]
    GroupOutOfRange { group: usize, count: usize },

    #[error("expected {expected} class indices, got {actual}")]
    ClassTupleLength { expected: usize, actual: usize },

    #[error("attribute `{attribute}`: unknown level `{label}` (known levels: {known})")]
    UnknownLevel {
        attribute: String,
        label: String,
        known: String,
    },

    #[error("attribute `{0}` has duplicate level labels")]
    DuplicateLevels(String),

    #[error("attribute space must have at least one attribute with at least one level")]
    EmptySpace,

    #[error("group count {d} exceeds the configured limit {limit}")]
    SpaceTooLarge { d: usize, limit: usize },

    #[error("record batch is empty")]
    EmptyBatch,

    #[error("no tasks supplied")]
    NoTasks,

    #[error(
        "variance denominator is not positive ({rows} rows, {nonempty_groups} nonempty groups) \
         and no fallback variance was configured"
    )]
    DegenerateVariance { rows: usize, nonempty_groups: usize },

    #[error("within-group residual variance is exactly zero and no variance floor is configured")]
    ZeroVariance,

    #[error("every group is empty")]
    AllGroupsEmpty,

    #[error("group {group} has zero total precision across all tasks and no fallback is enabled")]
    ZeroTotalPrecision { group: usize },

    #[error("group has members of only one class; AUC variance is undefined")]
    SingleClassGroup,

    #[error("inclusion mask selects no groups")]
    EmptyInclusionMask,

    #[error("{what}: expected length {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{method} requires at least {needed} groups, got {actual}")]
    TooFewGroups {
        method: &'static str,
        needed: usize,
        actual: usize,
    },

    #[error("linear system is ill-conditioned (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("singular linear system while computing {what}")]
    SingularSystem { what: &'static str },
}

pub type Result<T> = std::result::Result<T, Error>;
