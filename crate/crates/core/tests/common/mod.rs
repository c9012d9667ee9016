#![allow(dead_code)]

pub mod oracle;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};

use vcd_core::dataset::{build_pope_split, generate_scenes, SplitSpec};
use vcd_core::distortion::{DistortionSpec, Preset};
use vcd_core::experiment::distort_scene;
use vcd_core::lexicon::Lexicon;
use vcd_core::provider::{LogitProvider, Logits, ProviderError, Session, TokenId, Vocabulary};
use vcd_core::reference::{ReferenceModel, ReferenceModelParams};
use vcd_core::remote::{OpenRequest, OpenResponse, StepRequest, StepResponse};
use vcd_core::scene::{build_prompt, Profile, SceneGraph, Split};

pub fn reference(params: ReferenceModelParams) -> ReferenceModel {
    ReferenceModel::new(params).expect("valid params")
}

/// `(original, distorted)` presence-question prompt pairs over generated
/// scenes.
pub fn prompt_pairs(n: usize, spec: &DistortionSpec, seed: u64) -> Vec<(String, String)> {
    let lex = Lexicon::builtin();
    let scenes = generate_scenes(n.div_ceil(2).max(1), 5..=20, lex, seed).unwrap();
    let split = SplitSpec::from_corpus(&scenes, Split::Random, 1, lex);
    let queries = build_pope_split(&scenes, &split, seed).unwrap();
    let by_id: HashMap<&str, &SceneGraph> = scenes.iter().map(|g| (g.scene_id.as_str(), g)).collect();
    queries
        .iter()
        .take(n)
        .map(|r| {
            let g = by_id[r.scene_id.as_str()];
            let d = distort_scene(g, spec).unwrap();
            (
                build_prompt(g, &r.query, Profile::Geometry).unwrap(),
                build_prompt(&d, &r.query, Profile::Geometry).unwrap(),
            )
        })
        .collect()
}

pub fn default_pairs(n: usize, seed: u64) -> Vec<(String, String)> {
    prompt_pairs(n, &Preset::LowSemSubGeom.spec(seed), seed)
}

/// Provider whose logits are a pure function of `(prompt, history)`.
pub struct FnProvider<F> {
    pub vocab: Vocabulary,
    pub f: Arc<F>,
}

impl<F> FnProvider<F>
where
    F: Fn(&str, &[TokenId]) -> Result<Logits, ProviderError> + Send + Sync + 'static,
{
    pub fn new(tokens: &[&str], f: F) -> Self {
        let vocab = Vocabulary::new(tokens.iter().map(|t| t.to_string()).collect(), "<eos>").unwrap();
        Self { vocab, f: Arc::new(f) }
    }
}

struct FnSession<F> {
    prompt: String,
    history: Vec<TokenId>,
    f: Arc<F>,
}

impl<F> Session for FnSession<F>
where
    F: Fn(&str, &[TokenId]) -> Result<Logits, ProviderError> + Send + Sync + 'static,
{
    fn prefill(&mut self) -> Result<Logits, ProviderError> {
        (self.f)(&self.prompt, &self.history)
    }

    fn step(&mut self, token: TokenId) -> Result<Logits, ProviderError> {
        self.history.push(token);
        (self.f)(&self.prompt, &self.history)
    }
}

impl<F> LogitProvider for FnProvider<F>
where
    F: Fn(&str, &[TokenId]) -> Result<Logits, ProviderError> + Send + Sync + 'static,
{
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn open_session(&self, prompt: &str) -> Result<Box<dyn Session>, ProviderError> {
        Ok(Box::new(FnSession {
            prompt: prompt.to_string(),
            history: Vec::new(),
            f: self.f.clone(),
        }))
    }
}

/// Wraps a provider with a stale cache: every session but the first one
/// opened sees a biased EOS logit once it has taken more than `after` steps,
/// so incremental stepping and from-scratch replays disagree.
pub struct Drifting<P> {
    pub inner: P,
    pub after: usize,
    pub opened: AtomicU64,
}

impl<P> Drifting<P> {
    pub fn new(inner: P, after: usize) -> Self {
        Self {
            inner,
            after,
            opened: AtomicU64::new(0),
        }
    }
}

struct DriftSession {
    inner: Box<dyn Session>,
    steps: usize,
    after: usize,
    biased: bool,
}

impl Session for DriftSession {
    fn prefill(&mut self) -> Result<Logits, ProviderError> {
        self.inner.prefill()
    }

    fn step(&mut self, token: TokenId) -> Result<Logits, ProviderError> {
        self.steps += 1;
        let mut z = self.inner.step(token)?;
        if self.biased && self.steps > self.after {
            z[0] += 0.5;
        }
        Ok(z)
    }
}

impl<P: LogitProvider> LogitProvider for Drifting<P> {
    fn vocabulary(&self) -> &Vocabulary {
        self.inner.vocabulary()
    }

    fn open_session(&self, prompt: &str) -> Result<Box<dyn Session>, ProviderError> {
        Ok(Box::new(DriftSession {
            inner: self.inner.open_session(prompt)?,
            steps: 0,
            after: self.after,
            biased: self.opened.fetch_add(1, Ordering::SeqCst) > 0,
        }))
    }
}

#[derive(Default)]
struct ServerState {
    model: Option<Arc<ReferenceModel>>,
    sessions: Mutex<HashMap<String, (String, Vec<TokenId>)>>,
    next: AtomicU64,
    deleted: AtomicU64,
}

/// A reference model served over the HTTP protocol on a background thread.
pub struct MockServer {
    pub url: String,
    state: Arc<ServerState>,
}

impl MockServer {
    pub fn start(model: ReferenceModel) -> Self {
        let state = Arc::new(ServerState {
            model: Some(Arc::new(model)),
            ..Default::default()
        });
        let app = Router::new()
            .route("/v1/vocab", get(vocab))
            .route("/v1/session", post(open))
            .route("/v1/session/{id}/step", post(step))
            .route("/v1/session/{id}", axum::routing::delete(close))
            .with_state(state.clone());
        let (tx, rx) = std::sync::mpsc::channel::<SocketAddr>();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, app).await.unwrap();
            });
        });
        let addr = rx.recv().unwrap();
        Self {
            url: format!("http://{addr}"),
            state,
        }
    }

    pub fn open_sessions(&self) -> usize {
        self.state.sessions.lock().unwrap().len()
    }

    pub fn deleted(&self) -> u64 {
        self.state.deleted.load(Ordering::SeqCst)
    }
}

fn model(state: &ServerState) -> &ReferenceModel {
    state.model.as_deref().expect("model set")
}

async fn vocab(State(state): State<Arc<ServerState>>) -> Json<Vec<String>> {
    Json(model(&state).vocabulary().tokens().to_vec())
}

async fn open(
    State(state): State<Arc<ServerState>>,
    Json(req): Json<OpenRequest>,
) -> Result<Json<OpenResponse>, (StatusCode, String)> {
    model(&state)
        .open_session(&req.prompt)
        .map_err(|e| (StatusCode::BAD_REQUEST, e.to_string()))?;
    let id = format!("s{}", state.next.fetch_add(1, Ordering::SeqCst));
    state
        .sessions
        .lock()
        .unwrap()
        .insert(id.clone(), (req.prompt, Vec::new()));
    Ok(Json(OpenResponse {
        session_id: id,
        vocab_size: model(&state).vocabulary().len(),
    }))
}

async fn step(
    State(state): State<Arc<ServerState>>,
    Path(id): Path<String>,
    Json(req): Json<StepRequest>,
) -> Result<Json<StepResponse>, (StatusCode, String)> {
    let (prompt, history) = {
        let mut sessions = state.sessions.lock().unwrap();
        let entry = sessions
            .get_mut(&id)
            .ok_or((StatusCode::NOT_FOUND, format!("unknown session {id}")))?;
        if let Some(t) = req.token_id {
            if t as usize >= model(&state).vocabulary().len() {
                return Err((StatusCode::BAD_REQUEST, format!("unknown token {t}")));
            }
            entry.1.push(t);
        }
        entry.clone()
    };
    let logits = model(&state)
        .reference_logits(&prompt, &history)
        .map_err(|e| (StatusCode::BAD_REQUEST, e.to_string()))?;
    Ok(Json(StepResponse { logits }))
}

async fn close(State(state): State<Arc<ServerState>>, Path(id): Path<String>) -> StatusCode {
    match state.sessions.lock().unwrap().remove(&id) {
        Some(_) => {
            state.deleted.fetch_add(1, Ordering::SeqCst);
            StatusCode::NO_CONTENT
        }
        None => StatusCode::NOT_FOUND,
    }
}
