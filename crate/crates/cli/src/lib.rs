//! Command implementations behind the `dstts` binary.

pub mod config;
pub mod eval;
pub mod preprocess;
pub mod synth;
pub mod train;

use dstts_core::CoreError;

/// Process exit status for a failed command: 2 for a numerical abort,
/// 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err
        .chain()
        .any(|e| matches!(e.downcast_ref::<CoreError>(), Some(CoreError::NonFinite(_))));
    if numeric {
        2
    } else {
        1
    }
}
