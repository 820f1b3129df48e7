use thiserror::Error;

/// Errors surfaced by the graph pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("node index {index} out of bounds for {num_nodes} nodes")]
    Bounds { index: usize, num_nodes: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid graph: {0}")]
    Graph(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("eigensolve did not converge after {iters} iterations; worst residual {residual:.3e}")]
    Spectral { residual: f64, iters: usize },
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("cache error: {0}")]
    Cache(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training aborted at epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error(transparent)]
    Tensor(#[from] fcg_tensor::TensorError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
