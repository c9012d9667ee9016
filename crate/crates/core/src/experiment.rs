//! End-to-end evaluation runs: decode every item with and without the
//! distorted context, parse the answers and score them.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{HealProbePair, QueryRecord};
use crate::decoder::{
    decode_baseline, decode_batch, decode_vcd, DecodeConfig, DecodeError, DecodeTrace, PairDirection,
};
use crate::distortion::{apply_distortion, DistortionError, DistortionSpec, Preset};
use crate::lexicon::Lexicon;
use crate::metrics::{
    score_chair, score_pope, AnswerParser, ChairScore, CorrectnessRule, EvalReport, LatencyStats, ParsedAnswer,
    Prediction,
};
use crate::provider::LogitProvider;
use crate::reference::ReferenceModelParams;
use crate::scene::{build_prompt, parse_scene, split_prompt, Profile, SceneError, SceneGraph};
use crate::seed;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Distortion(#[from] DistortionError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub decode: DecodeConfig,
    pub distortion: DistortionSpec,
    #[serde(default)]
    pub rule: CorrectnessRule,
    /// Worker threads for decoding.
    pub jobs: usize,
    /// Dual-context jobs sharing one batched provider round trip.
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            decode: DecodeConfig::default(),
            distortion: Preset::LowSemSubGeom.spec(0),
            rule: CorrectnessRule::DecisionAndReference,
            jobs: 1,
            batch_size: 8,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.decode.validate()?;
        self.distortion.validate()?;
        if self.jobs == 0 || self.batch_size == 0 {
            return Err(ExperimentError::Config("jobs and batch_size must be >= 1".into()));
        }
        Ok(())
    }

    fn lexicon(&self) -> &Lexicon {
        self.distortion
            .vocabulary
            .as_ref()
            .unwrap_or_else(|| Lexicon::builtin())
    }
}

/// Seed used to distort one scene: every scene gets its own stream, fixed
/// by the spec seed and the scene id.
pub fn scene_distortion_seed(spec_seed: u64, scene_id: &str) -> u64 {
    seed::keyed(spec_seed, scene_id)
}

pub fn distort_scene(graph: &SceneGraph, spec: &DistortionSpec) -> Result<SceneGraph, DistortionError> {
    let spec = spec
        .clone()
        .with_seed(scene_distortion_seed(spec.seed, &graph.scene_id));
    apply_distortion(graph, &spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub index: usize,
    pub scene_id: String,
    pub split: String,
    pub mode: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub baseline: EvalReport,
    pub vcd: EvalReport,
    pub transcripts: Vec<TranscriptRecord>,
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, ExperimentError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| ExperimentError::Config(format!("thread pool: {e}")))
}

type TraceResult = Result<DecodeTrace, DecodeError>;

/// Decodes every prompt pair twice: single-context on `single[i]`, and
/// dual-context on `pairs[i]`. Output order follows the input order.
fn decode_all(
    provider: &dyn LogitProvider,
    single: &[String],
    pairs: &[(String, String)],
    opts: &EvalOptions,
) -> Result<(Vec<TraceResult>, Vec<TraceResult>), ExperimentError> {
    let pool = thread_pool(opts.jobs)?;
    let cfg = &opts.decode;
    let baseline: Vec<TraceResult> =
        pool.install(|| single.par_iter().map(|p| decode_baseline(provider, p, cfg)).collect());
    let vcd: Vec<TraceResult> = if cfg.batch_dual {
        let chunks: Vec<Result<Vec<TraceResult>, DecodeError>> = pool.install(|| {
            pairs
                .par_chunks(opts.batch_size)
                .map(|chunk| decode_batch(provider, chunk, cfg).map(|b| b.traces))
                .collect()
        });
        let mut out = Vec::with_capacity(pairs.len());
        for c in chunks {
            out.extend(c?);
        }
        out
    } else {
        pool.install(|| pairs.par_iter().map(|(o, d)| decode_vcd(provider, o, d, cfg)).collect())
    };
    Ok((baseline, vcd))
}

struct Decoded {
    texts: Vec<Option<String>>,
    errors: Vec<Option<String>>,
    latency: LatencyStats,
    failed: usize,
}

fn collect(provider: &dyn LogitProvider, traces: Vec<TraceResult>) -> Decoded {
    let mut latencies = Vec::new();
    let mut texts = Vec::with_capacity(traces.len());
    let mut errors = Vec::with_capacity(traces.len());
    let mut failed = 0;
    for t in traces {
        match t {
            Ok(trace) => {
                latencies.push(trace.latency);
                texts.push(Some(provider.vocabulary().decode(&trace.tokens)));
                errors.push(None);
            }
            Err(e) => {
                log::warn!("decode failed: {e}");
                failed += 1;
                texts.push(None);
                errors.push(Some(e.to_string()));
            }
        }
    }
    Decoded {
        texts,
        errors,
        latency: LatencyStats::from_durations(&latencies),
        failed,
    }
}

fn transcripts<'a>(
    mode: &str,
    decoded: &'a Decoded,
    meta: &'a [(String, String)],
) -> impl Iterator<Item = TranscriptRecord> + 'a {
    let mode = mode.to_string();
    decoded.texts.iter().zip(&decoded.errors).zip(meta).enumerate().map(
        move |(index, ((text, error), (scene_id, split)))| TranscriptRecord {
            index,
            scene_id: scene_id.clone(),
            split: split.clone(),
            mode: mode.clone(),
            text: text.clone().unwrap_or_default(),
            error: error.clone(),
        },
    )
}

/// Presence-question evaluation. Scenes use the geometry profile; every
/// scene is distorted once with its own seed.
pub fn run_pope_eval(
    provider: &dyn LogitProvider,
    scenes: &[SceneGraph],
    queries: &[QueryRecord],
    opts: &EvalOptions,
) -> Result<EvalOutput, ExperimentError> {
    opts.validate()?;
    let by_id: HashMap<&str, &SceneGraph> = scenes.iter().map(|g| (g.scene_id.as_str(), g)).collect();
    let mut distorted: HashMap<&str, SceneGraph> = HashMap::new();
    let mut single = Vec::with_capacity(queries.len());
    let mut pairs = Vec::with_capacity(queries.len());
    let mut graphs = Vec::with_capacity(queries.len());
    for rec in queries {
        let g = *by_id
            .get(rec.scene_id.as_str())
            .ok_or_else(|| ExperimentError::Config(format!("query refers to unknown scene {:?}", rec.scene_id)))?;
        if !distorted.contains_key(g.scene_id.as_str()) {
            distorted.insert(g.scene_id.as_str(), distort_scene(g, &opts.distortion)?);
        }
        let original = build_prompt(g, &rec.query, Profile::Geometry)?;
        let d = build_prompt(&distorted[g.scene_id.as_str()], &rec.query, Profile::Geometry)?;
        single.push(original.clone());
        pairs.push((original, d));
        graphs.push(g);
    }

    let (b, v) = decode_all(provider, &single, &pairs, opts)?;
    let parser = AnswerParser::new(opts.lexicon());
    let meta: Vec<(String, String)> = queries
        .iter()
        .map(|q| (q.scene_id.clone(), q.query.split.to_string()))
        .collect();
    let mut reports = Vec::new();
    let mut all_transcripts = Vec::new();
    for (label, traces) in [("baseline", b), ("vcd", v)] {
        let decoded = collect(provider, traces);
        let parsed: Vec<Option<ParsedAnswer>> = decoded
            .texts
            .iter()
            .map(|t| t.as_ref().map(|t| parser.parse(t)))
            .collect();
        let preds: Vec<Prediction> = parsed
            .iter()
            .zip(queries)
            .zip(&graphs)
            .filter_map(|((a, q), g)| {
                a.as_ref().map(|answer| Prediction {
                    answer,
                    query: &q.query,
                    graph: g,
                })
            })
            .collect();
        let mut report = EvalReport::new(label, opts.rule);
        report.splits = score_pope(&preds, opts.rule);
        report.latency = decoded.latency;
        report.failed_jobs = decoded.failed;
        all_transcripts.extend(transcripts(label, &decoded, &meta));
        reports.push(report);
    }
    let vcd = reports.pop().expect("two reports");
    let baseline = reports.pop().expect("two reports");
    Ok(EvalOutput {
        baseline,
        vcd,
        transcripts: all_transcripts,
    })
}

fn prompt_scene(prompt: &str) -> Result<SceneGraph, ExperimentError> {
    let (scene, _) = split_prompt(prompt)
        .ok_or_else(|| ExperimentError::Config("prompt lacks a `Query: <refer_expression>` line".into()))?;
    Ok(parse_scene(scene)?)
}

/// Clean/adversarial task evaluation scored with CHAIR.
///
/// The baseline answers the adversarial prompt. The dual-context run uses
/// the pair in the configured direction (by default the clean prompt is the
/// original context). Each answer is scored against the scene serialized in
/// the prompt that played the original context.
pub fn run_heal_eval(
    provider: &dyn LogitProvider,
    pairs: &[HealProbePair],
    opts: &EvalOptions,
) -> Result<EvalOutput, ExperimentError> {
    opts.validate()?;
    let mut single = Vec::with_capacity(pairs.len());
    let mut dual = Vec::with_capacity(pairs.len());
    let mut baseline_scenes = Vec::with_capacity(pairs.len());
    let mut vcd_scenes = Vec::with_capacity(pairs.len());
    for p in pairs {
        p.validate().map_err(ExperimentError::Config)?;
        let (o, d) = match opts.decode.pair_direction {
            PairDirection::CleanIsOriginal => (&p.clean, &p.adversarial),
            PairDirection::AdversarialIsOriginal => (&p.adversarial, &p.clean),
        };
        single.push(p.adversarial.clone());
        dual.push((o.clone(), d.clone()));
        baseline_scenes.push(prompt_scene(&p.adversarial)?);
        vcd_scenes.push(prompt_scene(o)?);
    }
    let (b, v) = decode_all(provider, &single, &dual, opts)?;
    let parser = AnswerParser::new(opts.lexicon());
    let meta: Vec<(String, String)> = pairs
        .iter()
        .map(|p| (p.scene_id.clone(), p.probe.as_str().to_string()))
        .collect();
    let mut reports = Vec::new();
    let mut all_transcripts = Vec::new();
    for (label, traces, scenes) in [("baseline", b, &baseline_scenes), ("vcd", v, &vcd_scenes)] {
        let decoded = collect(provider, traces);
        let parsed: Vec<Option<ParsedAnswer>> = decoded
            .texts
            .iter()
            .map(|t| t.as_ref().map(|t| parser.parse(t)))
            .collect();
        let mut by_probe: BTreeMap<String, Vec<(&ParsedAnswer, &SceneGraph)>> = BTreeMap::new();
        let mut all = Vec::new();
        for ((a, g), (_, probe)) in parsed.iter().zip(scenes.iter()).zip(&meta) {
            if let Some(a) = a {
                by_probe.entry(probe.clone()).or_default().push((a, g));
                all.push((a, g));
            }
        }
        let mut report = EvalReport::new(label, opts.rule);
        report.chair = Some(score_chair(&all, opts.lexicon()));
        report.chair_by_split = by_probe
            .into_iter()
            .map(|(k, v)| (k, score_chair(&v, opts.lexicon())))
            .collect::<BTreeMap<String, ChairScore>>();
        report.latency = decoded.latency;
        report.failed_jobs = decoded.failed;
        all_transcripts.extend(transcripts(label, &decoded, &meta));
        reports.push(report);
    }
    let vcd = reports.pop().expect("two reports");
    let baseline = reports.pop().expect("two reports");
    Ok(EvalOutput {
        baseline,
        vcd,
        transcripts: all_transcripts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Pope,
    Heal,
}

/// Where logits come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderSpec {
    Reference {
        preset: String,
        params: ReferenceModelParams,
    },
    Remote {
        url: String,
    },
}

/// Everything needed to repeat an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub benchmark: Benchmark,
    /// Record file (queries or pairs JSONL) with `scenes/` beside it.
    pub dataset: std::path::PathBuf,
    pub provider: ProviderSpec,
    pub options: EvalOptions,
    pub started_at: String,
    pub finished_at: String,
}

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
