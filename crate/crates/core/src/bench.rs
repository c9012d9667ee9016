//! Wall-clock comparison of single- and dual-context decoding across scene
//! sizes.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataset::generate_scenes;
use crate::decoder::{decode_baseline, decode_vcd, DecodeConfig};
use crate::distortion::{DistortionSpec, Preset};
use crate::experiment::{distort_scene, ExperimentError};
use crate::lexicon::Lexicon;
use crate::provider::LogitProvider;
use crate::scene::{build_prompt, Presence, Profile, Query, Split};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub sizes: Vec<usize>,
    /// Timed decodes per size and mode (one scene each).
    pub repeats: usize,
    /// Untimed decodes before measuring.
    pub warmup: usize,
    pub decode: DecodeConfig,
    pub distortion: DistortionSpec,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            sizes: vec![5, 10, 20, 35, 50],
            repeats: 30,
            warmup: 5,
            decode: DecodeConfig::default(),
            distortion: Preset::LowSemSubGeom.spec(0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRow {
    pub objects: usize,
    pub repeats: usize,
    pub single_median_ms: f64,
    pub dual_median_ms: f64,
    pub single_mean_ms: f64,
    pub dual_mean_ms: f64,
    /// `dual_median_ms / single_median_ms`.
    pub ratio: f64,
}

pub fn median_ms(samples: &[Duration]) -> f64 {
    let mut ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e3).collect();
    ms.sort_by(f64::total_cmp);
    match ms.len() {
        0 => 0.0,
        n if n % 2 == 1 => ms[n / 2],
        n => (ms[n / 2 - 1] + ms[n / 2]) / 2.0,
    }
}

fn mean_ms(samples: &[Duration]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|d| d.as_secs_f64() * 1e3).sum::<f64>() / samples.len() as f64
}

/// For every size, decodes `repeats` generated scenes of exactly that many
/// objects with a presence question about a present object, once
/// single-context and once dual-context, alternating the two.
pub fn bench_runtime(provider: &dyn LogitProvider, opts: &BenchOptions) -> Result<Vec<RuntimeRow>, ExperimentError> {
    if opts.sizes.is_empty() {
        return Err(ExperimentError::Config("no scene sizes to benchmark".into()));
    }
    if opts.repeats == 0 {
        return Err(ExperimentError::Config("repeats must be >= 1".into()));
    }
    opts.decode.validate()?;
    let lexicon = opts
        .distortion
        .vocabulary
        .as_ref()
        .unwrap_or_else(|| Lexicon::builtin());
    let mut sized = Vec::with_capacity(opts.sizes.len());
    for &size in &opts.sizes {
        if size == 0 {
            return Err(ExperimentError::Config("scene size must be >= 1".into()));
        }
        let scenes = generate_scenes(opts.repeats, size..=size, lexicon, seed::child(opts.seed, size as u64))
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        let mut jobs = Vec::with_capacity(scenes.len());
        for g in &scenes {
            let q = Query::presence(&g.objects[0].category, Presence::Present, Split::Random);
            let o = build_prompt(g, &q, Profile::Geometry)?;
            let d = build_prompt(&distort_scene(g, &opts.distortion)?, &q, Profile::Geometry)?;
            jobs.push((o, d));
        }
        sized.push(jobs);
    }
    for jobs in &sized {
        for (o, d) in jobs.iter().cycle().take(opts.warmup) {
            decode_baseline(provider, o, &opts.decode)?;
            decode_vcd(provider, o, d, &opts.decode)?;
        }
    }
    // Sizes take turns so that load changes during the run hit all of them.
    let mut single = vec![Vec::with_capacity(opts.repeats); sized.len()];
    let mut dual = vec![Vec::with_capacity(opts.repeats); sized.len()];
    for r in 0..opts.repeats {
        for (k, jobs) in sized.iter().enumerate() {
            let (o, d) = &jobs[r];
            let t = Instant::now();
            decode_baseline(provider, o, &opts.decode)?;
            single[k].push(t.elapsed());
            let t = Instant::now();
            decode_vcd(provider, o, d, &opts.decode)?;
            dual[k].push(t.elapsed());
        }
    }
    let mut rows = Vec::with_capacity(sized.len());
    for (k, &size) in opts.sizes.iter().enumerate() {
        let (s, d) = (median_ms(&single[k]), median_ms(&dual[k]));
        rows.push(RuntimeRow {
            objects: size,
            repeats: opts.repeats,
            single_median_ms: s,
            dual_median_ms: d,
            single_mean_ms: mean_ms(&single[k]),
            dual_mean_ms: mean_ms(&dual[k]),
            ratio: if s > 0.0 { d / s } else { 0.0 },
        });
    }
    Ok(rows)
}

/// Total dual time over total single time, from the per-size medians.
pub fn overall_ratio(rows: &[RuntimeRow]) -> f64 {
    let s: f64 = rows.iter().map(|r| r.single_median_ms).sum();
    let d: f64 = rows.iter().map(|r| r.dual_median_ms).sum();
    if s > 0.0 {
        d / s
    } else {
        0.0
    }
}
