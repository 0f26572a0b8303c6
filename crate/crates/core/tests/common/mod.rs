#![allow(dead_code)]

pub use dstts_core::gradcheck::{stats_for, synthetic_example};
