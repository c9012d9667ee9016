use std::fmt;
use std::str::FromStr;

use super::{DistortionKind, DistortionSpec};
use crate::lexicon::Lexicon;

pub const LOW_SUBSTITUTION: f64 = 0.10;
pub const HIGH_SUBSTITUTION: f64 = 0.25;
pub const LOW_GEOM_SIGMA: f64 = 0.05;
pub const HIGH_GEOM_SIGMA: f64 = 0.20;
pub const SPARSIFY_FRACTION: f64 = 0.20;
pub const RELFLIP_FRACTION: f64 = 0.30;
pub const DISTRACTOR_COUNT: usize = 3;
pub const SHUFFLE_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubstitutionLevel {
    Low,
    High,
}

impl SubstitutionLevel {
    pub fn fraction(self) -> f64 {
        match self {
            SubstitutionLevel::Low => LOW_SUBSTITUTION,
            SubstitutionLevel::High => HIGH_SUBSTITUTION,
        }
    }
}

/// Named distortion recipes, addressed by their ablation tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    Identity,
    SemShuffle,
    LowSemSub,
    HighSemSub,
    HighSemDropMod,
    LowGeom,
    HighGeom,
    StructSparse,
    StructRelFlip,
    StructDist,
    LowSemSubGeom,
    HighSemSubGeom,
}

impl Preset {
    pub const ALL: [Preset; 12] = [
        Preset::Identity,
        Preset::SemShuffle,
        Preset::LowSemSub,
        Preset::HighSemSub,
        Preset::HighSemDropMod,
        Preset::LowGeom,
        Preset::HighGeom,
        Preset::StructSparse,
        Preset::StructRelFlip,
        Preset::StructDist,
        Preset::LowSemSubGeom,
        Preset::HighSemSubGeom,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Preset::Identity => "Identity",
            Preset::SemShuffle => "Sem-Shuffle",
            Preset::LowSemSub => "Low-SemSub",
            Preset::HighSemSub => "High-SemSub",
            Preset::HighSemDropMod => "High-Sem-DropMod",
            Preset::LowGeom => "Low-Geom",
            Preset::HighGeom => "High-Geom",
            Preset::StructSparse => "Struct-Sparse",
            Preset::StructRelFlip => "Struct-RelFlip",
            Preset::StructDist => "Struct-Dist",
            Preset::LowSemSubGeom => "Low-SemSub-Geom",
            Preset::HighSemSubGeom => "High-SemSub-Geom",
        }
    }

    /// Builds the spec with the bundled lexicon attached.
    pub fn spec(self, seed: u64) -> DistortionSpec {
        self.spec_with(seed, Lexicon::builtin())
    }

    pub fn spec_with(self, seed: u64, lexicon: &Lexicon) -> DistortionSpec {
        use DistortionKind::*;
        let sub = |level: SubstitutionLevel| DistortionSpec::new(SemanticSubstitute).with_fraction(level.fraction());
        let geo = |sigma: f64| DistortionSpec::new(GeometricNoise).with_sigma(sigma);
        let spec = match self {
            Preset::Identity => DistortionSpec::identity(),
            Preset::SemShuffle => DistortionSpec::new(SemanticShuffle).with_fraction(SHUFFLE_FRACTION),
            Preset::LowSemSub => sub(SubstitutionLevel::Low),
            Preset::HighSemSub => sub(SubstitutionLevel::High),
            Preset::HighSemDropMod => DistortionSpec::new(SemanticDropModifier).with_fraction(HIGH_SUBSTITUTION),
            Preset::LowGeom => geo(LOW_GEOM_SIGMA),
            Preset::HighGeom => geo(HIGH_GEOM_SIGMA),
            Preset::StructSparse => DistortionSpec::new(StructSparsify).with_fraction(SPARSIFY_FRACTION),
            Preset::StructRelFlip => DistortionSpec::new(StructRelationFlip).with_fraction(RELFLIP_FRACTION),
            Preset::StructDist => DistortionSpec::new(StructDistractor).with_count(DISTRACTOR_COUNT),
            Preset::LowSemSubGeom => DistortionSpec::mixed(vec![sub(SubstitutionLevel::Low), geo(LOW_GEOM_SIGMA)]),
            Preset::HighSemSubGeom => DistortionSpec::mixed(vec![sub(SubstitutionLevel::High), geo(HIGH_GEOM_SIGMA)]),
        };
        spec.with_seed(seed).with_vocabulary(lexicon.clone())
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let tags: Vec<&str> = Preset::ALL.iter().map(|p| p.tag()).collect();
                format!("unknown preset {s:?}; expected one of {}", tags.join(", "))
            })
    }
}
