//! Backend implementations: inline sequential evaluation, a local process
//! pool, and a client for remote TCP worker daemons.

pub mod link;
pub mod sequential;

use std::path::PathBuf;

use crate::backend::{Backend, BackendSpec};
use crate::error::FutureError;

pub use link::LinkPool;
pub use sequential::SequentialBackend;

/// Construct the backend for one plan layer. Returns the backend plus any
/// degraded-start warnings (e.g. unreachable cluster endpoints).
pub fn build_backend(
    spec: &BackendSpec,
    worker_exe: Option<&PathBuf>,
) -> Result<(Box<dyn Backend>, Vec<String>), FutureError> {
    match spec {
        BackendSpec::Sequential => Ok((
            Box::new(SequentialBackend::new(worker_exe.cloned())),
            Vec::new(),
        )),
        BackendSpec::ProcessPool { .. } => {
            let n = spec.resolved_workers();
            let pool = LinkPool::start_pool(n, worker_exe)?;
            Ok((Box::new(pool), Vec::new()))
        }
        BackendSpec::TcpCluster { endpoints } => {
            let (pool, warnings) = LinkPool::connect_cluster(endpoints)?;
            Ok((Box::new(pool), warnings))
        }
    }
}
