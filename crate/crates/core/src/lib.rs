//! Visible-infrared multimodal person re-identification workbench: corrupted
//! benchmark construction, small fusion networks trained with ML-MDA, and
//! leave-one-out retrieval evaluation.

pub mod augment;
pub mod benchmark;
pub mod config;
pub mod corruptions;
pub mod dataset;
pub mod evaluation;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod synthetic;
pub mod tensor;
pub mod training;
