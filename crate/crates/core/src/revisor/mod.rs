//! Revisor side of the pipeline: prompts for building hallucinatory training
//! captions, the backend protocol used to revise masked descriptions, and
//! training-set assembly.

mod backend;
mod dataset;
pub mod prompt;

pub use backend::{
    revise, revise_all, BackendConfig, BackendError, BackendMode, HttpBackend, MockBackend, ReviseRequest,
    ReviseResponse, RevisorBackend,
};
pub use dataset::{build_training_records, revise_corpus, DatasetBuild, RevisedRecord, SkippedImage, TrainingRecord};
pub use prompt::{
    build_cooccur_prompt, build_hallucination_prompt, parse_cooccur_response, parse_hallucination_response,
};

use crate::masker::MaskError;

#[derive(Debug, thiserror::Error)]
pub enum RevisorError {
    #[error("description is empty")]
    EmptyDescription,
    #[error("template slot `{0}` has no value")]
    UnresolvedSlot(String),
    #[error("could not parse model response ({message}): {raw:?}")]
    Parse { message: String, raw: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("nothing to process")]
    EmptyInput,
    #[error("{skipped} of {total} images skipped, more than half")]
    TooManySkips { skipped: usize, total: usize },
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Maps `f` over `items` with at most `max_in_flight` calls running at once.
/// Output order matches input order.
pub(crate) fn bounded_map<T, R, F>(items: &[T], max_in_flight: usize, f: F) -> Result<Vec<R>, RevisorError>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .map_err(|e| RevisorError::Pool(e.to_string()))?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}
