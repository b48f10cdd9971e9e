//! File formats, image IO and the command-line front end for
//! `msdeblur-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod imageio;

/// Marks an error that should exit with status 2.
#[derive(Debug, thiserror::Error)]
#[error("numerical failure: {0}")]
pub struct NumericalFailure(pub String);

/// Process exit status for a command result.
pub fn exit_code(result: &anyhow::Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) => {
            let numerical = e.chain().any(|c| {
                c.downcast_ref::<NumericalFailure>().is_some()
                    || matches!(c.downcast_ref::<msdeblur_core::Error>(), Some(msdeblur_core::Error::NonFinite(_)))
            });
            if numerical {
                2
            } else {
                1
            }
        }
    }
}
