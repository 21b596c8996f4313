//! Pipeline orchestration for the `roamkit` CLI: configuration parsing
//! and validation, stage sequencing with artifact hashing and invariant
//! checks, and the pluggable inpainting hook.

pub mod config;
pub mod inpaint;
pub mod pipeline;
pub mod report;

pub use config::PipelineConfig;
pub use pipeline::run_pipeline;
pub use report::RunReport;

/// Applies the ROAMKIT_THREADS cap to the global rayon pool. Call once at
/// process start; later calls are ignored.
pub fn init_thread_pool() {
    if let Ok(v) = std::env::var("ROAMKIT_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
