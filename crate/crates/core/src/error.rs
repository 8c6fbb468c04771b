use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("negative {what} {value} at index {index}")]
    Negative { what: &'static str, index: usize, value: f64 },

    #[error("od pair ({origin} -> {destination}) is not connected")]
    Disconnected { origin: String, destination: String },

    #[error("edge {0} has a hard-capacity cost; only the LP-limit solver accepts it")]
    HardCapEdge(usize),

    #[error("edge {edge}: time {time} is below the free-flow time {free_flow}")]
    BelowFreeFlow { edge: usize, time: f64, free_flow: f64 },

    #[error("od pair ({origin} -> {destination}) has more than {budget} simple paths")]
    PathBudget {
        origin: String,
        destination: String,
        budget: usize,
    },

    #[error("infeasible demand: {demand} exceeds the capacity {capacity} of the cut separating {nodes:?}")]
    InfeasibleCut { demand: f64, capacity: f64, nodes: Vec<String> },

    #[error("margins are unbalanced: sum L = {rows}, sum W = {cols}")]
    UnbalancedMargins { rows: f64, cols: f64 },

    #[error("productivity condition fails: {0}")]
    Unproductive(String),

    #[error("oracle returned a non-finite value in block {block} at iteration {iteration}")]
    NonFinite { block: usize, iteration: usize },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}
