//! A synthetic grounded language model with closed-form logits.
//!
//! The model reads the serialized scene and the query from the prompt and
//! answers with the grounded markup format
//! `<detailed_grounding>Yes, there is a <p>chair</p>[<obj_1>]`.
//!
//! Presence questions ("Is there a {category} in the room?"): at the answer
//! position, with `e = 1` when the category occurs verbatim among the scene's
//! categories and `d = 1` when the scene looks degraded,
//!
//! ```text
//! logit(Yes) = beta_prior + beta_ground * e + delta_prior_boost * d
//! logit(No)  = beta_ground * (1 - e)
//! ```
//!
//! and every other token sits at `floor_logit`. Scripted markup positions put
//! `markup_logit` on the single expected token.
//!
//! The degradation test is lexical: `d = 1` iff the fraction of objects whose
//! category is not a canonical lexicon category exceeds
//! `degradation_threshold` (0.05 by default). Synonym substitution raises it;
//! geometric noise does not.
//!
//! Any other query is treated as a task. The model lists the task's object
//! mentions one by one, each scored `beta_prior + beta_ground * present +
//! delta_prior_boost * d` against stopping at `beta_ground`, grounds present
//! ones with `[<obj_k>]`, and attaches task-mentioned states scored the same
//! way with `held` in place of `present`.
//!
//! Logits depend only on `(prompt, history, params)`, so cached and replayed
//! sessions agree exactly.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::lexicon::{Lexicon, WordMatcher};
use crate::provider::{LogitProvider, Logits, ProviderError, Session, TokenId, Vocabulary};
use crate::scene::{parse_scene, split_prompt, SceneGraph};
use crate::seed;

/// Highest `<obj_k>` tag the vocabulary can express.
pub const MAX_OBJECT_TAGS: usize = 256;

pub const EOS: &str = "<eos>";
pub const GROUNDING_OPEN: &str = "<detailed_grounding>";
pub const YES: &str = "Yes";
pub const NO: &str = "No";
pub const THERE_IS: &str = ", there is a ";
pub const P_OPEN: &str = "<p>";
pub const P_CLOSE: &str = "</p>";
pub const REF_OPEN: &str = "[";
pub const REF_CLOSE: &str = "]";
pub const ITEM_END: &str = "; ";

fn default_threshold() -> f64 {
    0.05
}
fn default_markup() -> f64 {
    10.0
}
fn default_floor() -> f64 {
    -10.0
}
fn default_vocabulary() -> Lexicon {
    Lexicon::builtin().clone()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModelParams {
    pub beta_prior: f64,
    pub beta_ground: f64,
    pub delta_prior_boost: f64,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub noise_seed: u64,
    #[serde(default = "default_threshold")]
    pub degradation_threshold: f64,
    #[serde(default = "default_markup")]
    pub markup_logit: f64,
    #[serde(default = "default_floor")]
    pub floor_logit: f64,
    #[serde(default = "default_vocabulary")]
    pub vocabulary: Lexicon,
}

impl Default for ReferenceModelParams {
    fn default() -> Self {
        Self {
            beta_prior: 2.0,
            beta_ground: 3.0,
            delta_prior_boost: 1.0,
            noise_std: 0.0,
            noise_seed: 0,
            degradation_threshold: default_threshold(),
            markup_logit: default_markup(),
            floor_logit: default_floor(),
            vocabulary: default_vocabulary(),
        }
    }
}

impl ReferenceModelParams {
    /// Prior strong enough that absent objects are affirmed on clean scenes
    /// (`beta_prior > beta_ground`), with no jitter.
    pub fn over_affirming() -> Self {
        Self {
            beta_prior: 3.5,
            noise_std: 0.0,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "default" => Some(Self::default()),
            "over-affirming" => Some(Self::over_affirming()),
            _ => None,
        }
    }

    pub const PRESETS: [&'static str; 2] = ["default", "over-affirming"];

    pub fn validate(&self) -> Result<(), String> {
        let finite = [
            self.beta_prior,
            self.beta_ground,
            self.delta_prior_boost,
            self.noise_std,
            self.degradation_threshold,
            self.markup_logit,
            self.floor_logit,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err("reference model parameters must be finite".into());
        }
        if self.noise_std < 0.0 {
            return Err(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if !(0.0..=1.0).contains(&self.degradation_threshold) {
            return Err("degradation_threshold must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Fraction of objects whose category is not canonical in `lexicon`
/// (0 for an empty scene).
pub fn degradation_score(graph: &SceneGraph, lexicon: &Lexicon) -> f64 {
    if graph.is_empty() {
        return 0.0;
    }
    let off = graph
        .objects
        .iter()
        .filter(|o| !lexicon.is_canonical(&o.category))
        .count();
    off as f64 / graph.len() as f64
}

fn presence_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*(?:is there an?|are there any) (.+?) in the room\?\s*$").expect("static regex")
    })
}

/// The queried category when `query` is a presence question.
pub fn presence_target(query: &str) -> Option<String> {
    presence_regex().captures(query).map(|c| c[1].trim().to_lowercase())
}

#[derive(Debug)]
enum Mode {
    Presence {
        category: String,
    },
    Task {
        categories: Vec<String>,
        states: Vec<String>,
    },
}

#[derive(Debug)]
struct Context {
    graph: SceneGraph,
    degraded: bool,
    mode: Mode,
}

enum Next {
    Forced(TokenId),
    Scored(Vec<(TokenId, f64)>),
}

#[derive(Debug)]
struct Ids {
    eos: TokenId,
    grounding: TokenId,
    yes: TokenId,
    no: TokenId,
    there_is: TokenId,
    p_open: TokenId,
    p_close: TokenId,
    ref_open: TokenId,
    ref_close: TokenId,
    item_end: TokenId,
    words: HashMap<String, TokenId>,
    states: HashMap<String, TokenId>,
    first_tag: TokenId,
}

#[derive(Debug)]
struct Inner {
    params: ReferenceModelParams,
    vocab: Vocabulary,
    ids: Ids,
    object_words: WordMatcher,
    state_words: WordMatcher,
}

/// The reference model as a [`LogitProvider`].
#[derive(Debug, Clone)]
pub struct ReferenceModel {
    inner: Arc<Inner>,
}

fn state_surface(state: &str) -> String {
    format!(" ({state})")
}

impl ReferenceModel {
    pub fn new(params: ReferenceModelParams) -> Result<Self, ProviderError> {
        params.validate().map_err(ProviderError::Protocol)?;
        let markup = [
            EOS,
            GROUNDING_OPEN,
            YES,
            NO,
            THERE_IS,
            P_OPEN,
            P_CLOSE,
            REF_OPEN,
            REF_CLOSE,
            ITEM_END,
        ];
        let mut tokens: Vec<String> = markup.iter().map(|s| s.to_string()).collect();
        let object_words = params.vocabulary.all_object_words();
        tokens.extend(object_words.iter().cloned());
        tokens.extend(params.vocabulary.states.iter().map(|s| state_surface(s)));
        let first_tag = tokens.len() as TokenId;
        tokens.extend((1..=MAX_OBJECT_TAGS).map(|k| format!("<obj_{k}>")));
        let vocab = Vocabulary::new(tokens, EOS)?;

        let id = |s: &str| vocab.id(s).expect("markup token present");
        let ids = Ids {
            eos: id(EOS),
            grounding: id(GROUNDING_OPEN),
            yes: id(YES),
            no: id(NO),
            there_is: id(THERE_IS),
            p_open: id(P_OPEN),
            p_close: id(P_CLOSE),
            ref_open: id(REF_OPEN),
            ref_close: id(REF_CLOSE),
            item_end: id(ITEM_END),
            words: object_words.iter().map(|w| (w.clone(), id(w))).collect(),
            states: params
                .vocabulary
                .states
                .iter()
                .map(|s| (s.clone(), id(&state_surface(s))))
                .collect(),
            first_tag,
        };
        let inner = Inner {
            object_words: WordMatcher::new(&object_words),
            state_words: WordMatcher::new(&params.vocabulary.states),
            params,
            vocab,
            ids,
        };
        Ok(Self { inner: Arc::new(inner) })
    }

    pub fn params(&self) -> &ReferenceModelParams {
        &self.inner.params
    }

    /// Logits after `history` for `prompt`, computed from scratch.
    pub fn reference_logits(&self, prompt: &str, history: &[TokenId]) -> Result<Logits, ProviderError> {
        let ctx = self.inner.ingest(prompt)?;
        self.inner.check_tokens(history)?;
        Ok(self.inner.logits(prompt, &ctx, history))
    }
}

impl Inner {
    fn ingest(&self, prompt: &str) -> Result<Context, ProviderError> {
        let (scene_text, query) = split_prompt(prompt)
            .ok_or_else(|| ProviderError::BadPrompt("no `Query: <refer_expression>` line".into()))?;
        let graph = parse_scene(scene_text).map_err(|e| ProviderError::BadPrompt(e.to_string()))?;
        let degraded = degradation_score(&graph, &self.params.vocabulary) > self.params.degradation_threshold;
        let mode = match presence_target(query) {
            Some(category) => Mode::Presence {
                category: self.singular(category),
            },
            None => Mode::Task {
                categories: self
                    .object_words
                    .find_distinct(query)
                    .into_iter()
                    .filter(|w| self.ids.words.contains_key(w))
                    .collect(),
                states: self
                    .state_words
                    .find_distinct(query)
                    .into_iter()
                    .filter(|s| self.ids.states.contains_key(s))
                    .collect(),
            },
        };
        Ok(Context { graph, degraded, mode })
    }

    /// Maps a plural surface ("chairs", "couches") onto a known word.
    fn singular(&self, word: String) -> String {
        if self.ids.words.contains_key(&word) {
            return word;
        }
        ["es", "s"]
            .iter()
            .filter_map(|suffix| word.strip_suffix(suffix))
            .find(|stem| self.ids.words.contains_key(*stem))
            .map(str::to_string)
            .unwrap_or(word)
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<(), ProviderError> {
        match tokens.iter().find(|&&t| t as usize >= self.vocab.len()) {
            Some(&t) => Err(ProviderError::UnknownToken(t)),
            None => Ok(()),
        }
    }

    fn affirm(&self, ctx: &Context, grounded: bool) -> f64 {
        let p = &self.params;
        p.beta_prior + if grounded { p.beta_ground } else { 0.0 } + if ctx.degraded { p.delta_prior_boost } else { 0.0 }
    }

    fn word_of(&self, token: TokenId) -> Option<&str> {
        let w = self.vocab.token(token)?;
        (self.ids.words.get(w) == Some(&token)).then_some(w)
    }

    fn is_state(&self, token: TokenId) -> bool {
        self.ids.states.values().any(|&t| t == token)
    }

    /// `[`, `<obj_k>`, `]` for the first instance of `category`, when taggable.
    fn reference_tokens(&self, graph: &SceneGraph, category: &str) -> Vec<TokenId> {
        match graph.first_index_of(category) {
            Some(k) if k <= MAX_OBJECT_TAGS => vec![
                self.ids.ref_open,
                self.ids.first_tag + (k as TokenId - 1),
                self.ids.ref_close,
            ],
            _ => Vec::new(),
        }
    }

    fn logits(&self, prompt: &str, ctx: &Context, history: &[TokenId]) -> Logits {
        let next = match &ctx.mode {
            Mode::Presence { category } => self.next_presence(ctx, category, history),
            Mode::Task { categories, states } => self.next_task(ctx, categories, states, history),
        };
        let mut z = vec![self.params.floor_logit as f32; self.vocab.len()];
        match next {
            Next::Forced(t) => z[t as usize] = self.params.markup_logit as f32,
            Next::Scored(mut entries) => {
                if self.params.noise_std > 0.0 {
                    let bytes: Vec<u8> = history.iter().flat_map(|t| t.to_le_bytes()).collect();
                    let mut rng = seed::rng(seed::hash_parts(self.params.noise_seed, &[prompt.as_bytes(), &bytes]));
                    let normal = Normal::new(0.0, self.params.noise_std).expect("validated noise_std");
                    for (_, v) in &mut entries {
                        *v += normal.sample(&mut rng);
                    }
                }
                for (t, v) in entries {
                    z[t as usize] = v as f32;
                }
            }
        }
        z
    }

    fn next_presence(&self, ctx: &Context, category: &str, h: &[TokenId]) -> Next {
        let ids = &self.ids;
        if h.is_empty() {
            return Next::Forced(ids.grounding);
        }
        if h[0] != ids.grounding {
            return Next::Forced(ids.eos);
        }
        if h.len() == 1 {
            let p = &self.params;
            let e = ctx.graph.contains_category(category);
            let no = if e { 0.0 } else { p.beta_ground };
            return Next::Scored(vec![(ids.yes, self.affirm(ctx, e)), (ids.no, no)]);
        }
        if h[1] != ids.yes {
            return Next::Forced(ids.eos);
        }
        let rest = match follow(&[ids.there_is, ids.p_open], &h[2..], ids.eos) {
            Ok(rest) => rest,
            Err(next) => return next,
        };
        let Some((&cat_token, rest)) = rest.split_first() else {
            return Next::Forced(ids.words.get(category).copied().unwrap_or(ids.eos));
        };
        let Some(word) = self.word_of(cat_token) else {
            return Next::Forced(ids.eos);
        };
        let mut tail = vec![ids.p_close];
        tail.extend(self.reference_tokens(&ctx.graph, word));
        match follow(&tail, rest, ids.eos) {
            Ok(_) => Next::Forced(ids.eos),
            Err(next) => next,
        }
    }

    fn next_task(&self, ctx: &Context, categories: &[String], states: &[String], h: &[TokenId]) -> Next {
        let ids = &self.ids;
        if h.is_empty() {
            return Next::Forced(ids.grounding);
        }
        if h[0] != ids.grounding {
            return Next::Forced(ids.eos);
        }
        let stop = self.params.beta_ground;
        let mut rest = &h[1..];
        let mut emitted: Vec<&str> = Vec::new();
        loop {
            let pending: Vec<(TokenId, f64)> = categories
                .iter()
                .filter(|c| !emitted.contains(&c.as_str()))
                .map(|c| (ids.words[c], self.affirm(ctx, ctx.graph.contains_category(c))))
                .collect();
            let Some((&t, after)) = rest.split_first() else {
                let mut v = vec![(ids.eos, stop)];
                if let Some(best) = pending.iter().map(|e| e.1).reduce(f64::max) {
                    v.push((ids.p_open, best));
                }
                return Next::Scored(v);
            };
            if t != ids.p_open {
                return Next::Forced(ids.eos);
            }
            rest = after;

            let Some((&cat_token, after)) = rest.split_first() else {
                if !pending.is_empty() {
                    return Next::Scored(pending);
                }
                let all: Vec<(TokenId, f64)> = categories
                    .iter()
                    .map(|c| (ids.words[c], self.affirm(ctx, ctx.graph.contains_category(c))))
                    .collect();
                return if all.is_empty() {
                    Next::Forced(ids.eos)
                } else {
                    Next::Scored(all)
                };
            };
            let Some(word) = self.word_of(cat_token) else {
                return Next::Forced(ids.eos);
            };
            emitted.push(word);
            rest = after;

            let mut tail = vec![ids.p_close];
            tail.extend(self.reference_tokens(&ctx.graph, word));
            rest = match follow(&tail, rest, ids.eos) {
                Ok(r) => r,
                Err(next) => return next,
            };

            let held: Vec<&str> = ctx
                .graph
                .objects
                .iter()
                .filter(|o| o.category == word)
                .flat_map(|o| o.states.iter().map(String::as_str))
                .collect();
            let mut said: Vec<TokenId> = Vec::new();
            loop {
                let Some((&t, after)) = rest.split_first() else {
                    let mut v: Vec<(TokenId, f64)> = states
                        .iter()
                        .map(|s| (ids.states[s], s))
                        .filter(|(t, _)| !said.contains(t))
                        .map(|(t, s)| (t, self.affirm(ctx, held.contains(&s.as_str()))))
                        .collect();
                    v.push((ids.item_end, stop));
                    return Next::Scored(v);
                };
                rest = after;
                if t == ids.item_end {
                    break;
                }
                if !self.is_state(t) {
                    return Next::Forced(ids.eos);
                }
                said.push(t);
            }
        }
    }
}

/// Matches `history` against a fixed `script`. Returns the remaining history
/// when the script is complete, or the next forced token otherwise (`eos` on
/// any deviation).
fn follow<'h>(script: &[TokenId], history: &'h [TokenId], eos: TokenId) -> Result<&'h [TokenId], Next> {
    for (i, &s) in script.iter().enumerate() {
        match history.get(i) {
            None => return Err(Next::Forced(s)),
            Some(&t) if t != s => return Err(Next::Forced(eos)),
            Some(_) => {}
        }
    }
    Ok(&history[script.len()..])
}

struct ReferenceSession {
    inner: Arc<Inner>,
    prompt: String,
    ctx: Option<Context>,
    history: Vec<TokenId>,
}

impl Session for ReferenceSession {
    fn prefill(&mut self) -> Result<Logits, ProviderError> {
        let ctx = self.inner.ingest(&self.prompt)?;
        let z = self.inner.logits(&self.prompt, &ctx, &self.history);
        self.ctx = Some(ctx);
        Ok(z)
    }

    fn step(&mut self, token: TokenId) -> Result<Logits, ProviderError> {
        self.inner.check_tokens(&[token])?;
        let ctx = self
            .ctx
            .as_ref()
            .ok_or_else(|| ProviderError::Protocol("step before prefill".into()))?;
        self.history.push(token);
        Ok(self.inner.logits(&self.prompt, ctx, &self.history))
    }
}

impl LogitProvider for ReferenceModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.inner.vocab
    }

    fn open_session(&self, prompt: &str) -> Result<Box<dyn Session>, ProviderError> {
        if prompt.trim().is_empty() {
            return Err(ProviderError::BadPrompt("empty prompt".into()));
        }
        Ok(Box::new(ReferenceSession {
            inner: Arc::clone(&self.inner),
            prompt: prompt.to_string(),
            ctx: None,
            history: Vec::new(),
        }))
    }

    fn prefill_batch(&self, sessions: &mut [&mut dyn Session]) -> Vec<Result<Logits, ProviderError>> {
        if rayon::current_num_threads() > 1 {
            sessions.par_iter_mut().map(|s| s.prefill()).collect()
        } else {
            sessions.iter_mut().map(|s| s.prefill()).collect()
        }
    }

    /// Steps cost microseconds here, less than handing them to the pool.
    fn step_batch(&self, sessions: &mut [&mut dyn Session], tokens: &[TokenId]) -> Vec<Result<Logits, ProviderError>> {
        sessions.iter_mut().zip(tokens).map(|(s, &t)| s.step(t)).collect()
    }
}
