//! Schema-preserving scene perturbations used to build the contrastive
//! (distorted) context.
//!
//! Every operator is a pure function of `(graph, parameters, seed)`: the
//! input graph is never mutated and the same inputs always produce the same
//! output graph.

mod geometric;
mod presets;
mod semantic;
mod structural;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::Lexicon;
use crate::scene::{SceneError, SceneGraph};
use crate::seed;

pub use geometric::geometric_noise;
pub use presets::{Preset, SubstitutionLevel};
pub use semantic::{semantic_drop_modifier, semantic_shuffle, semantic_substitute};
pub use structural::{struct_distractor, struct_relation_flip, struct_sparsify};

#[derive(Debug, Error)]
pub enum DistortionError {
    #[error("invalid distortion spec: {0}")]
    InvalidSpec(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DistortionKind {
    SemanticShuffle,
    SemanticSubstitute,
    SemanticDropModifier,
    GeometricNoise,
    StructSparsify,
    StructRelationFlip,
    StructDistractor,
    Mixed,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    /// Share of objects (or relations) affected, in `[0, 1]`.
    #[serde(default)]
    pub fraction: f64,
    #[serde(default)]
    pub sigma_centroid: f64,
    #[serde(default)]
    pub sigma_extent: f64,
    #[serde(default)]
    pub seed: u64,
    /// Number of injected objects (`StructDistractor` only).
    #[serde(default, skip_serializing_if = "is_zero")]
    pub count: usize,
    #[serde(default)]
    pub children: Vec<DistortionSpec>,
    /// Category/synonym/predicate tables. Mixed children inherit the
    /// parent's tables when they carry none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Lexicon>,
}

impl DistortionSpec {
    pub fn new(kind: DistortionKind) -> Self {
        Self {
            kind,
            fraction: 0.0,
            sigma_centroid: 0.0,
            sigma_extent: 0.0,
            seed: 0,
            count: 0,
            children: Vec::new(),
            vocabulary: None,
        }
    }

    pub fn identity() -> Self {
        Self::new(DistortionKind::GeometricNoise)
    }

    pub fn with_fraction(mut self, fraction: f64) -> Self {
        self.fraction = fraction;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma_centroid = sigma;
        self.sigma_extent = sigma;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_count(mut self, count: usize) -> Self {
        self.count = count;
        self
    }

    pub fn with_vocabulary(mut self, lexicon: Lexicon) -> Self {
        self.vocabulary = Some(lexicon);
        self
    }

    pub fn mixed(children: Vec<DistortionSpec>) -> Self {
        let mut s = Self::new(DistortionKind::Mixed);
        s.children = children;
        s
    }

    /// Overrides the noise level of every geometric component, recursing
    /// into Mixed children.
    pub fn override_sigma(&mut self, sigma: f64) {
        match self.kind {
            DistortionKind::GeometricNoise => {
                self.sigma_centroid = sigma;
                self.sigma_extent = sigma;
            }
            DistortionKind::Mixed => self.children.iter_mut().for_each(|c| c.override_sigma(sigma)),
            _ => {}
        }
    }

    /// Overrides the affected fraction of every fraction-driven component.
    pub fn override_fraction(&mut self, fraction: f64) {
        match self.kind {
            DistortionKind::GeometricNoise | DistortionKind::StructDistractor => {}
            DistortionKind::Mixed => self.children.iter_mut().for_each(|c| c.override_fraction(fraction)),
            _ => self.fraction = fraction,
        }
    }

    /// Fills in `lexicon` wherever no vocabulary is set.
    pub fn fill_vocabulary(&mut self, lexicon: &Lexicon) {
        if self.vocabulary.is_none() {
            self.vocabulary = Some(lexicon.clone());
        }
    }

    pub fn validate(&self) -> Result<(), DistortionError> {
        let bad = |m: String| Err(DistortionError::InvalidSpec(m));
        if !(0.0..=1.0).contains(&self.fraction) {
            return bad(format!("fraction {} outside [0, 1]", self.fraction));
        }
        if !(self.sigma_centroid >= 0.0 && self.sigma_centroid.is_finite()) {
            return bad(format!(
                "sigma_centroid {} must be finite and >= 0",
                self.sigma_centroid
            ));
        }
        if !(self.sigma_extent >= 0.0 && self.sigma_extent.is_finite()) {
            return bad(format!("sigma_extent {} must be finite and >= 0", self.sigma_extent));
        }
        match self.kind {
            DistortionKind::Mixed => {
                if self.children.is_empty() {
                    return bad("Mixed needs at least one child".into());
                }
                for c in &self.children {
                    if c.kind == DistortionKind::Mixed {
                        return bad("Mixed children cannot be Mixed".into());
                    }
                    c.validate()?;
                }
            }
            _ if !self.children.is_empty() => {
                return bad(format!("{:?} cannot have children", self.kind));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self, DistortionError> {
        let spec: DistortionSpec = serde_json::from_str(s).map_err(|e| DistortionError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Number of affected items when at least one should be touched.
pub(crate) fn quota_ceil(fraction: f64, n: usize) -> usize {
    // The epsilon keeps products like 0.3 * 10 = 3.0000000000000004 at 3.
    let q = (fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
    q.min(n)
}

/// Number of removed items; never rounds up.
pub(crate) fn quota_floor(fraction: f64, n: usize) -> usize {
    let q = (fraction * n as f64 + 1e-9).floor().max(0.0) as usize;
    q.min(n)
}

/// Applies `spec` to `graph`, returning the distorted graph.
pub fn apply_distortion(graph: &SceneGraph, spec: &DistortionSpec) -> Result<SceneGraph, DistortionError> {
    graph.validate()?;
    spec.validate()?;
    let out = apply_inner(graph, spec, spec.seed, spec.vocabulary.as_ref())?;
    out.validate()?;
    Ok(out)
}

fn apply_inner(
    graph: &SceneGraph,
    spec: &DistortionSpec,
    seed: u64,
    inherited: Option<&Lexicon>,
) -> Result<SceneGraph, DistortionError> {
    let vocab = spec.vocabulary.as_ref().or(inherited);
    let need_vocab = || vocab.ok_or_else(|| DistortionError::Config(format!("{:?} requires a vocabulary", spec.kind)));
    match spec.kind {
        DistortionKind::SemanticShuffle => semantic_shuffle(graph, spec.fraction, seed, vocab),
        DistortionKind::SemanticSubstitute => semantic_substitute(graph, spec.fraction, seed, need_vocab()?),
        DistortionKind::SemanticDropModifier => Ok(semantic_drop_modifier(graph, spec.fraction, seed)),
        DistortionKind::GeometricNoise => Ok(geometric_noise(graph, spec.sigma_centroid, spec.sigma_extent, seed)),
        DistortionKind::StructSparsify => Ok(struct_sparsify(graph, spec.fraction, seed)),
        DistortionKind::StructRelationFlip => {
            let empty = Lexicon::default();
            struct_relation_flip(graph, spec.fraction, seed, vocab.unwrap_or(&empty))
        }
        DistortionKind::StructDistractor => struct_distractor(graph, spec.count, seed, vocab),
        DistortionKind::Mixed => {
            let mut current = graph.clone();
            for (i, child) in spec.children.iter().enumerate() {
                let child_seed = seed::hash_parts(seed, &[&(i as u64).to_le_bytes(), &child.seed.to_le_bytes()]);
                current = apply_inner(&current, child, child_seed, vocab)?;
            }
            Ok(current)
        }
    }
}
