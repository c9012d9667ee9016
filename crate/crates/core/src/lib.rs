//! Dual-context contrastive decoding for language models that read 3D scenes
//! as serialized scene graphs.

pub mod bench;
pub mod dataset;
pub mod decoder;
pub mod distortion;
pub mod experiment;
pub mod lexicon;
pub mod metrics;
pub mod plot;
pub mod provider;
pub mod reference;
pub mod remote;
pub mod scene;
pub mod seed;
