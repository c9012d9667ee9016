//! Single- and dual-context autoregressive decoding with contrastive logit
//! fusion.
//!
//! In dual mode two sessions (original and distorted context) advance in
//! lockstep. Each step fuses their logits, picks one token from the fused
//! vector and feeds that same token to both sessions.

use std::time::{Duration, Instant};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::{recompute, LogitProvider, Logits, ProviderError, Session, TokenId};
use crate::scene::{serialize_scene, Profile, SceneGraph};
use crate::seed;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid decode config: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("provider failed at step {step}: {source}")]
    Provider {
        step: usize,
        #[source]
        source: ProviderError,
    },
}

/// `(1 + alpha) * z_o - alpha * z_d`, evaluated as `z_o + alpha * (z_o - z_d)`
/// so that equal inputs and `alpha = 0` return `z_o` bit for bit.
pub fn fuse_logits(z_o: &[f32], z_d: &[f32], alpha: f64) -> Result<Logits, DecodeError> {
    if z_o.len() != z_d.len() {
        return Err(DecodeError::Contract(format!(
            "logit length mismatch: {} vs {}",
            z_o.len(),
            z_d.len()
        )));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(DecodeError::Config(format!(
            "alpha must be finite and >= 0, got {alpha}"
        )));
    }
    let a = alpha as f32;
    Ok(z_o.iter().zip(z_d).map(|(&o, &d)| o + a * (o - d)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Greedy,
    Sample,
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "sample" => Ok(Strategy::Sample),
            other => Err(format!("unknown strategy {other:?}; expected greedy or sample")),
        }
    }
}

/// Which prompt of a clean/adversarial pair plays the original context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PairDirection {
    #[default]
    CleanIsOriginal,
    AdversarialIsOriginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub alpha: f64,
    pub temperature: f64,
    pub max_tokens: usize,
    pub strategy: Strategy,
    pub use_cache: bool,
    pub batch_dual: bool,
    pub sample_seed: u64,
    pub retain_logits: bool,
    pub pair_direction: PairDirection,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            temperature: 1.0,
            max_tokens: 32,
            strategy: Strategy::Greedy,
            use_cache: true,
            batch_dual: true,
            sample_seed: 0,
            retain_logits: false,
            pair_direction: PairDirection::CleanIsOriginal,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(DecodeError::Config(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(DecodeError::Config(format!(
                "temperature must be finite and > 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(DecodeError::Config("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Eos,
    MaxTokens,
}

/// Provider calls made by one decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CallStats {
    pub prompt_ingestions: usize,
    pub steps: usize,
}

/// Logits seen at one position. `distorted` and `fused` are absent for
/// single-context decoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLogits {
    pub original: Logits,
    pub distorted: Option<Logits>,
    pub fused: Option<Logits>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub tokens: Vec<TokenId>,
    pub finish: FinishReason,
    /// Filled only when `retain_logits` is set.
    pub steps: Vec<StepLogits>,
    pub latency: Duration,
    pub calls: CallStats,
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(z: &[f32]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in z.iter().enumerate() {
        match best {
            Some(b) if v <= z[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

fn select(z: &[f32], config: &DecodeConfig, rng: &mut seed::Rng) -> Result<TokenId, DecodeError> {
    if z.iter().any(|v| v.is_nan()) {
        return Err(DecodeError::Contract("NaN in logits".into()));
    }
    match config.strategy {
        Strategy::Greedy => argmax(z)
            .map(|i| i as TokenId)
            .ok_or_else(|| DecodeError::Contract("empty logit vector".into())),
        Strategy::Sample => {
            let t = config.temperature;
            let max = z.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            if max == f64::NEG_INFINITY {
                return Err(DecodeError::Contract("all logits are -inf".into()));
            }
            if max == f64::INFINITY {
                // Degenerate: uniform over the +inf entries.
                let top: Vec<usize> = (0..z.len()).filter(|&i| z[i] == f32::INFINITY).collect();
                return Ok(top[rng.random_range(0..top.len())] as TokenId);
            }
            let weights: Vec<f64> = z.iter().map(|&v| ((v as f64 - max) / t).exp()).collect();
            let dist = WeightedIndex::new(&weights)
                .map_err(|e| DecodeError::Contract(format!("cannot sample from logits: {e}")))?;
            Ok(dist.sample(rng) as TokenId)
        }
    }
}

struct Job<'a> {
    prompts: Vec<&'a str>,
    sessions: Vec<Box<dyn Session>>,
    logits: Vec<Logits>,
    tokens: Vec<TokenId>,
    steps: Vec<StepLogits>,
    rng: seed::Rng,
    calls: CallStats,
    result: Option<Result<DecodeTrace, DecodeError>>,
}

impl Job<'_> {
    fn live(&self) -> bool {
        self.result.is_none()
    }

    fn fail(&mut self, err: DecodeError) {
        self.result = Some(Err(err));
    }
}

/// Runs single- or dual-context jobs in lockstep. With `batched`, every
/// provider round trip covers all live sessions of all jobs; otherwise each
/// session is called on its own.
fn run_jobs(
    provider: &dyn LogitProvider,
    jobs: &[Vec<&str>],
    config: &DecodeConfig,
    batched: bool,
) -> Result<Vec<Result<DecodeTrace, DecodeError>>, DecodeError> {
    config.validate()?;
    let vocab_len = provider.vocabulary().len();
    let eos = provider.vocabulary().eos();
    let started = Instant::now();

    let mut state: Vec<Job> = jobs
        .iter()
        .map(|prompts| Job {
            prompts: prompts.clone(),
            sessions: Vec::new(),
            logits: Vec::new(),
            tokens: Vec::new(),
            steps: Vec::new(),
            rng: seed::rng(config.sample_seed),
            calls: CallStats::default(),
            result: None,
        })
        .collect();

    if config.use_cache {
        for job in &mut state {
            for p in job.prompts.clone() {
                match provider.open_session(p) {
                    Ok(s) => job.sessions.push(s),
                    Err(e) => {
                        job.fail(DecodeError::Provider { step: 0, source: e });
                        break;
                    }
                }
            }
        }
    }
    advance(provider, &mut state, config, batched, None);

    loop {
        for job in state.iter_mut().filter(|j| j.live()) {
            if let Err(e) = choose(job, config, vocab_len, eos, started) {
                job.fail(e);
            }
        }
        if state.iter().all(|j| !j.live()) {
            break;
        }
        let next: Vec<TokenId> = state.iter().map(|j| j.tokens.last().copied().unwrap_or(eos)).collect();
        advance(provider, &mut state, config, batched, Some(&next));
    }

    Ok(state
        .into_iter()
        .map(|j| j.result.expect("every job finishes"))
        .collect())
}

/// Fetches the next logits for every live job: prefill when `next` is
/// `None`, otherwise a step with `next[job]`.
fn advance(
    provider: &dyn LogitProvider,
    state: &mut [Job],
    config: &DecodeConfig,
    batched: bool,
    next: Option<&[TokenId]>,
) {
    let step_index = |j: &Job| j.tokens.len();
    if !config.use_cache {
        for job in state.iter_mut().filter(|j| j.live()) {
            let mut out = Vec::with_capacity(job.prompts.len());
            for p in &job.prompts {
                job.calls.prompt_ingestions += 1;
                job.calls.steps += job.tokens.len();
                match recompute(provider, p, &job.tokens) {
                    Ok(z) => out.push(z),
                    Err(e) => {
                        let step = step_index(job);
                        job.fail(DecodeError::Provider { step, source: e });
                        break;
                    }
                }
            }
            job.logits = out;
        }
        return;
    }

    if !batched {
        for (ji, job) in state.iter_mut().enumerate().filter(|(_, j)| j.live()) {
            let mut out = Vec::with_capacity(job.sessions.len());
            let mut failure = None;
            for s in &mut job.sessions {
                let r = match next {
                    None => s.prefill(),
                    Some(tokens) => s.step(tokens[ji]),
                };
                match r {
                    Ok(z) => out.push(z),
                    Err(e) => {
                        failure = Some(e);
                        break;
                    }
                }
            }
            count_calls(job, next.is_none());
            job.logits = out;
            if let Some(e) = failure {
                let step = step_index(job);
                job.fail(DecodeError::Provider { step, source: e });
            }
        }
        return;
    }

    let mut owners: Vec<usize> = Vec::new();
    let mut tokens: Vec<TokenId> = Vec::new();
    let results = {
        let mut refs: Vec<&mut dyn Session> = Vec::new();
        for (ji, job) in state.iter_mut().enumerate().filter(|(_, j)| j.live()) {
            for s in &mut job.sessions {
                owners.push(ji);
                if let Some(n) = next {
                    tokens.push(n[ji]);
                }
                refs.push(s.as_mut());
            }
        }
        match next {
            None => provider.prefill_batch(&mut refs),
            Some(_) => provider.step_batch(&mut refs, &tokens),
        }
    };
    if results.len() != owners.len() {
        for &ji in &owners {
            if state[ji].live() {
                state[ji].fail(DecodeError::Contract(format!(
                    "batched call returned {} results for {} sessions",
                    results.len(),
                    owners.len()
                )));
            }
        }
        return;
    }
    let mut fresh: Vec<Vec<Logits>> = vec![Vec::new(); state.len()];
    let mut errors: Vec<Option<ProviderError>> = (0..state.len()).map(|_| None).collect();
    for (ji, r) in owners.into_iter().zip(results) {
        match r {
            Ok(z) => fresh[ji].push(z),
            Err(e) => {
                errors[ji].get_or_insert(e);
            }
        }
    }
    for (ji, job) in state.iter_mut().enumerate().filter(|(_, j)| j.live()) {
        count_calls(job, next.is_none());
        job.logits = std::mem::take(&mut fresh[ji]);
        if let Some(e) = errors[ji].take() {
            let step = step_index(job);
            job.fail(DecodeError::Provider { step, source: e });
        }
    }
}

fn count_calls(job: &mut Job, prefill: bool) {
    if prefill {
        job.calls.prompt_ingestions += job.sessions.len();
    } else {
        job.calls.steps += job.sessions.len();
    }
}

/// Fuses the job's current logits, picks a token and decides whether the
/// job is finished.
fn choose(
    job: &mut Job,
    config: &DecodeConfig,
    vocab_len: usize,
    eos: TokenId,
    started: Instant,
) -> Result<(), DecodeError> {
    for z in &job.logits {
        if z.len() != vocab_len {
            return Err(DecodeError::Contract(format!(
                "logit vector of length {} for a vocabulary of {vocab_len}",
                z.len()
            )));
        }
    }
    let (token, record) = match job.logits.as_slice() {
        [z] => (
            select(z, config, &mut job.rng)?,
            StepLogits {
                original: Vec::new(),
                distorted: None,
                fused: None,
            },
        ),
        [z_o, z_d] => {
            let fused = fuse_logits(z_o, z_d, config.alpha)?;
            (
                select(&fused, config, &mut job.rng)?,
                StepLogits {
                    original: Vec::new(),
                    distorted: None,
                    fused: Some(fused),
                },
            )
        }
        other => {
            return Err(DecodeError::Contract(format!(
                "expected 1 or 2 contexts, got {}",
                other.len()
            )));
        }
    };
    if config.retain_logits {
        let mut record = record;
        let mut streams = std::mem::take(&mut job.logits).into_iter();
        record.original = streams.next().unwrap_or_default();
        record.distorted = streams.next();
        job.steps.push(record);
    }
    job.tokens.push(token);
    let finish = if token == eos {
        Some(FinishReason::Eos)
    } else if job.tokens.len() == config.max_tokens {
        Some(FinishReason::MaxTokens)
    } else {
        None
    };
    if let Some(finish) = finish {
        job.result = Some(Ok(DecodeTrace {
            tokens: std::mem::take(&mut job.tokens),
            finish,
            steps: std::mem::take(&mut job.steps),
            latency: started.elapsed(),
            calls: job.calls,
        }));
    }
    Ok(())
}

fn single(
    provider: &dyn LogitProvider,
    prompts: Vec<&str>,
    config: &DecodeConfig,
    batched: bool,
) -> Result<DecodeTrace, DecodeError> {
    if prompts.iter().any(|p| p.trim().is_empty()) {
        return Err(DecodeError::Config("empty prompt".into()));
    }
    run_jobs(provider, &[prompts], config, batched)?
        .pop()
        .expect("one job in, one result out")
}

/// Plain autoregressive decoding on one context.
pub fn decode_baseline(
    provider: &dyn LogitProvider,
    prompt: &str,
    config: &DecodeConfig,
) -> Result<DecodeTrace, DecodeError> {
    single(provider, vec![prompt], config, false)
}

/// Dual-context decoding: original and distorted prompts advance together
/// and every token is chosen from the fused logits.
pub fn decode_vcd(
    provider: &dyn LogitProvider,
    prompt_original: &str,
    prompt_distorted: &str,
    config: &DecodeConfig,
) -> Result<DecodeTrace, DecodeError> {
    single(
        provider,
        vec![prompt_original, prompt_distorted],
        config,
        config.batch_dual,
    )
}

/// Dual-context decoding over one fixed scene with two task prompts.
/// `config.pair_direction` selects which prompt is the original context.
pub fn decode_vcd_paired_prompt(
    provider: &dyn LogitProvider,
    graph: &SceneGraph,
    profile: Profile,
    prompt_clean: &str,
    prompt_adversarial: &str,
    config: &DecodeConfig,
) -> Result<DecodeTrace, DecodeError> {
    let scene = serialize_scene(graph, profile).map_err(|e| DecodeError::Config(e.to_string()))?;
    let prefix = format!("{scene}\n");
    for (name, p) in [("clean", prompt_clean), ("adversarial", prompt_adversarial)] {
        if !p.starts_with(&prefix) {
            return Err(DecodeError::Contract(format!(
                "{name} prompt does not start with the serialized scene {:?}",
                graph.scene_id
            )));
        }
    }
    match config.pair_direction {
        PairDirection::CleanIsOriginal => decode_vcd(provider, prompt_clean, prompt_adversarial, config),
        PairDirection::AdversarialIsOriginal => decode_vcd(provider, prompt_adversarial, prompt_clean, config),
    }
}

/// Dual-context decoding of many `(original, distorted)` pairs sharing
/// provider round trips. A failing job yields an error entry; the others
/// run to completion.
pub fn decode_batch(
    provider: &dyn LogitProvider,
    jobs: &[(String, String)],
    config: &DecodeConfig,
) -> Result<BatchResult, DecodeError> {
    let started = Instant::now();
    let prompts: Vec<Vec<&str>> = jobs.iter().map(|(o, d)| vec![o.as_str(), d.as_str()]).collect();
    let traces = if prompts.is_empty() {
        Vec::new()
    } else {
        run_jobs(provider, &prompts, config, true)?
    };
    Ok(BatchResult {
        traces,
        wall_clock: started.elapsed(),
    })
}

#[derive(Debug)]
pub struct BatchResult {
    pub traces: Vec<Result<DecodeTrace, DecodeError>>,
    pub wall_clock: Duration,
}

fn logits_match(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(&x, &y)| {
            if x == y {
                return true;
            }
            let (x, y) = (x as f64, y as f64);
            (x - y).abs() <= 1e-9 * x.abs().max(y.abs())
        })
}

/// Whether incremental stepping agrees (within 1e-9 relative) with a
/// from-scratch recomputation at every one of `n_tokens` positions. The fed
/// tokens are drawn uniformly from the vocabulary with a fixed seed.
pub fn session_cache_check(provider: &dyn LogitProvider, prompt: &str, n_tokens: usize) -> bool {
    let v = provider.vocabulary().len();
    if n_tokens == 0 || v == 0 {
        return false;
    }
    let mut rng = seed::rng(seed::keyed(0x5EED, prompt));
    let history: Vec<TokenId> = (0..n_tokens).map(|_| rng.random_range(0..v) as TokenId).collect();
    cache_agrees(provider, prompt, &history).unwrap_or(false)
}

fn cache_agrees(provider: &dyn LogitProvider, prompt: &str, history: &[TokenId]) -> Result<bool, ProviderError> {
    let mut session = provider.open_session(prompt)?;
    if !logits_match(&session.prefill()?, &recompute(provider, prompt, &[])?) {
        return Ok(false);
    }
    for k in 0..history.len() {
        let inc = session.step(history[k])?;
        if !logits_match(&inc, &recompute(provider, prompt, &history[..=k])?) {
            return Ok(false);
        }
    }
    Ok(true)
}
