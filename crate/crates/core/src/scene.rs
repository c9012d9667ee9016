//! Object-centric scene graphs and their textual prompt rendering.
//!
//! A scene renders as
//!
//! ```text
//! scene_01: {
//! <obj_1>: { category: "chair", centroid:[0.00, 0.00, 0.45], extent:[0.50, 0.50, 0.90] }
//! }
//! ```
//!
//! Object tags are positional (`<obj_k>` is the k-th object, 1-based), and
//! every coordinate is printed with two decimals. The state-centric profile
//! swaps the geometry fields for `states:[...]` and `relations:[...]`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const QUERY_OPEN: &str = "Query: <refer_expression> ";
pub const QUERY_CLOSE: &str = " <refer_expression>";

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("object {id}: {reason}")]
    InvalidObject { id: String, reason: String },
    #[error("duplicate object id {0}")]
    DuplicateId(String),
    #[error("object {id}: relation targets unknown object {target}")]
    DanglingRelation { id: String, target: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("scene json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub predicate: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectNode {
    pub id: String,
    pub category: String,
    /// Centroid `[x, y, z]` in meters.
    pub centroid: [f64; 3],
    /// Extent `[w, h, d]` in meters.
    pub extent: [f64; 3],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub relations: Vec<Relation>,
}

impl ObjectNode {
    pub fn new(id: impl Into<String>, category: impl Into<String>, centroid: [f64; 3], extent: [f64; 3]) -> Self {
        Self {
            id: id.into(),
            category: category.into(),
            centroid,
            extent,
            states: Vec::new(),
            relations: Vec::new(),
        }
    }

    fn validate(&self) -> Result<(), SceneError> {
        let bad = |reason: &str| SceneError::InvalidObject {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.is_empty() {
            return Err(bad("empty id"));
        }
        if self.category.trim().is_empty() {
            return Err(bad("empty category"));
        }
        if self.category != self.category.to_lowercase() {
            return Err(bad("category must be lowercase"));
        }
        if self.category.contains('"') || self.category.contains('\n') {
            return Err(bad("category contains a quote or newline"));
        }
        if self.centroid.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite centroid"));
        }
        if self.extent.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(bad("extent components must be finite and >= 0"));
        }
        for s in &self.states {
            if s.is_empty() || s.contains('"') || s.contains('\n') {
                return Err(bad("malformed state string"));
            }
        }
        for r in &self.relations {
            if r.predicate.is_empty() || r.predicate.contains('"') || r.predicate.contains('\n') {
                return Err(bad("malformed relation predicate"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub scene_id: String,
    pub objects: Vec<ObjectNode>,
}

/// Which attributes the prompt rendering carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Category, centroid and extent (3D-POPE style).
    #[default]
    Geometry,
    /// Category, states and relations (HEAL style).
    State,
}

impl SceneGraph {
    pub fn new(scene_id: impl Into<String>, objects: Vec<ObjectNode>) -> Self {
        Self {
            scene_id: scene_id.into(),
            objects,
        }
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.scene_id.contains('\n') || self.scene_id.contains(": {") {
            return Err(SceneError::InvalidObject {
                id: format!("scene_{}", self.scene_id),
                reason: "scene id cannot contain a newline or ': {'".into(),
            });
        }
        let mut ids = HashSet::with_capacity(self.objects.len());
        for o in &self.objects {
            o.validate()?;
            if !ids.insert(o.id.as_str()) {
                return Err(SceneError::DuplicateId(o.id.clone()));
            }
        }
        for o in &self.objects {
            for r in &o.relations {
                if !ids.contains(r.target.as_str()) {
                    return Err(SceneError::DanglingRelation {
                        id: o.id.clone(),
                        target: r.target.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn contains_category(&self, category: &str) -> bool {
        self.objects.iter().any(|o| o.category == category)
    }

    /// 1-based position of the first object with `category`.
    pub fn first_index_of(&self, category: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.category == category).map(|i| i + 1)
    }

    /// Object at a 1-based `<obj_k>` tag.
    pub fn object_at(&self, tag: usize) -> Option<&ObjectNode> {
        tag.checked_sub(1).and_then(|i| self.objects.get(i))
    }

    /// Renames ids to the positional `obj_k` form used by the prompt
    /// rendering, rewriting relation targets to match.
    pub fn with_canonical_ids(&self) -> SceneGraph {
        let map: HashMap<&str, String> = self
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| (o.id.as_str(), format!("obj_{}", i + 1)))
            .collect();
        let objects = self
            .objects
            .iter()
            .map(|o| ObjectNode {
                id: map[o.id.as_str()].clone(),
                relations: o
                    .relations
                    .iter()
                    .map(|r| Relation {
                        predicate: r.predicate.clone(),
                        target: map.get(r.target.as_str()).cloned().unwrap_or_else(|| r.target.clone()),
                    })
                    .collect(),
                ..o.clone()
            })
            .collect();
        SceneGraph::new(self.scene_id.clone(), objects)
    }

    pub fn from_json_str(s: &str) -> Result<Self, SceneError> {
        let g: SceneGraph = serde_json::from_str(s)?;
        g.validate()?;
        Ok(g)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene graphs always serialize")
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), SceneError> {
        std::fs::write(path, self.to_json_pretty() + "\n").map_err(|source| SceneError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Fixed two-decimal rendering. `format!` rounds the exact binary value
/// half-to-even; negative zero is printed without a sign.
pub fn fmt_coord(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

fn fmt_vec3(v: &[f64; 3]) -> String {
    format!("[{}, {}, {}]", fmt_coord(v[0]), fmt_coord(v[1]), fmt_coord(v[2]))
}

pub fn serialize_scene(graph: &SceneGraph, profile: Profile) -> Result<String, SceneError> {
    graph.validate()?;
    let positions: HashMap<&str, usize> = graph
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| (o.id.as_str(), i + 1))
        .collect();
    let mut out = String::with_capacity(32 + graph.objects.len() * 96);
    out.push_str(&format!("scene_{}: {{\n", graph.scene_id));
    for (i, o) in graph.objects.iter().enumerate() {
        let k = i + 1;
        match profile {
            Profile::Geometry => {
                out.push_str(&format!(
                    "<obj_{k}>: {{ category: \"{}\", centroid:{}, extent:{} }}\n",
                    o.category,
                    fmt_vec3(&o.centroid),
                    fmt_vec3(&o.extent)
                ));
            }
            Profile::State => {
                let states: Vec<String> = o.states.iter().map(|s| format!("\"{s}\"")).collect();
                let rels: Vec<String> = o
                    .relations
                    .iter()
                    .map(|r| format!("\"{}\" <obj_{}>", r.predicate, positions[r.target.as_str()]))
                    .collect();
                out.push_str(&format!(
                    "<obj_{k}>: {{ category: \"{}\", states:[{}], relations:[{}] }}\n",
                    o.category,
                    states.join(", "),
                    rels.join(", ")
                ));
            }
        }
    }
    out.push('}');
    Ok(out)
}

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^scene_(.*?)\s*:\s*\{$").unwrap())
}

fn object_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"^<obj_(\d+)>\s*:\s*\{\s*category\s*:\s*"([^"]*)"\s*,(.*)\}$"#).unwrap())
}

fn field_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(\w+)\s*:\s*\[([^\]]*)\]").unwrap())
}

fn quoted_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#""([^"]*)""#).unwrap())
}

fn relation_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#""([^"]*)"\s*<obj_(\d+)>"#).unwrap())
}

fn parse_vec3(body: &str, line: usize, field: &str) -> Result<[f64; 3], SceneError> {
    let parts: Vec<&str> = body.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(SceneError::Parse {
            line,
            message: format!("`{field}` needs 3 components, found {}", parts.len()),
        });
    }
    let mut out = [0.0; 3];
    for (slot, p) in out.iter_mut().zip(&parts) {
        *slot = p.parse::<f64>().map_err(|_| SceneError::Parse {
            line,
            message: format!("`{field}` component {p:?} is not a number"),
        })?;
    }
    Ok(out)
}

/// Inverse of [`serialize_scene`]. Accepts either profile per line; ids are
/// taken from the `<obj_k>` tags. Line numbers in errors are 1-based.
pub fn parse_scene(text: &str) -> Result<SceneGraph, SceneError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or(SceneError::Parse {
        line: 1,
        message: "empty scene text".into(),
    })?;
    let scene_id = header_re()
        .captures(header)
        .map(|c| c[1].to_string())
        .ok_or_else(|| SceneError::Parse {
            line: hline,
            message: "expected `scene_<id>: {` header".into(),
        })?;

    let mut objects = Vec::new();
    let mut closed = false;
    for (ln, line) in lines {
        if closed {
            return Err(SceneError::Parse {
                line: ln,
                message: "content after closing `}`".into(),
            });
        }
        if line == "}" {
            closed = true;
            continue;
        }
        objects.push(parse_object_line(ln, line)?);
    }
    if !closed {
        return Err(SceneError::Parse {
            line: text.lines().count().max(1),
            message: "missing closing `}`".into(),
        });
    }
    let graph = SceneGraph::new(scene_id, objects);
    graph.validate()?;
    Ok(graph)
}

fn parse_object_line(ln: usize, line: &str) -> Result<ObjectNode, SceneError> {
    let caps = object_re().captures(line).ok_or_else(|| SceneError::Parse {
        line: ln,
        message: "malformed object line".into(),
    })?;
    let id = format!("obj_{}", &caps[1]);
    let category = caps[2].to_string();
    let rest = &caps[3];

    let mut centroid = None;
    let mut extent = None;
    let mut states = None;
    let mut relations = None;
    let mut consumed = 0usize;
    for f in field_re().captures_iter(rest) {
        let whole = f.get(0).unwrap();
        let between = &rest[consumed..whole.start()];
        if !between.chars().all(|c| c == ',' || c.is_whitespace()) {
            return Err(SceneError::Parse {
                line: ln,
                message: format!("unexpected text {:?}", between.trim()),
            });
        }
        consumed = whole.end();
        let name = &f[1];
        let body = &f[2];
        match name {
            "centroid" => centroid = Some(parse_vec3(body, ln, "centroid")?),
            "extent" => extent = Some(parse_vec3(body, ln, "extent")?),
            "states" => {
                states = Some(
                    quoted_re()
                        .captures_iter(body)
                        .map(|c| c[1].to_string())
                        .collect::<Vec<_>>(),
                )
            }
            "relations" => {
                relations = Some(
                    relation_re()
                        .captures_iter(body)
                        .map(|c| Relation {
                            predicate: c[1].to_string(),
                            target: format!("obj_{}", &c[2]),
                        })
                        .collect::<Vec<_>>(),
                )
            }
            other => {
                return Err(SceneError::Parse {
                    line: ln,
                    message: format!("unknown field `{other}`"),
                })
            }
        }
    }
    if !rest[consumed..].trim().is_empty() {
        return Err(SceneError::Parse {
            line: ln,
            message: format!("unexpected text {:?}", rest[consumed..].trim()),
        });
    }

    let missing = |f: &str| SceneError::Parse {
        line: ln,
        message: format!("missing `{f}:`"),
    };
    let geometric = centroid.is_some() || extent.is_some();
    let stateful = states.is_some() || relations.is_some();
    if geometric {
        let centroid = centroid.ok_or_else(|| missing("centroid"))?;
        let extent = extent.ok_or_else(|| missing("extent"))?;
        let mut node = ObjectNode::new(id, category, centroid, extent);
        node.states = states.unwrap_or_default();
        node.relations = relations.unwrap_or_default();
        Ok(node)
    } else if stateful {
        let mut node = ObjectNode::new(id, category, [0.0; 3], [0.0; 3]);
        node.states = states.ok_or_else(|| missing("states"))?;
        node.relations = relations.ok_or_else(|| missing("relations"))?;
        Ok(node)
    } else {
        Err(missing("centroid"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Presence {
    #[serde(rename = "yes")]
    Present,
    #[serde(rename = "no")]
    Absent,
}

/// HEAL scene-task inconsistency probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HealProbe {
    DistractorInjection,
    ObjectRemoval,
    SynonymSubstitution,
    SceneTaskContradiction,
    Baseline,
}

impl HealProbe {
    pub const ALL: [HealProbe; 5] = [
        HealProbe::DistractorInjection,
        HealProbe::ObjectRemoval,
        HealProbe::SynonymSubstitution,
        HealProbe::SceneTaskContradiction,
        HealProbe::Baseline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HealProbe::DistractorInjection => "distractor_injection",
            HealProbe::ObjectRemoval => "object_removal",
            HealProbe::SynonymSubstitution => "synonym_substitution",
            HealProbe::SceneTaskContradiction => "scene_task_contradiction",
            HealProbe::Baseline => "baseline",
        }
    }
}

impl FromStr for HealProbe {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HealProbe::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown HEAL probe {s:?}"))
    }
}

/// Question split: one of the three 3D-POPE negative constructions, or a
/// HEAL probe tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Split {
    Random,
    Popular,
    Adversarial,
    Heal(HealProbe),
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Random => f.write_str("random"),
            Split::Popular => f.write_str("popular"),
            Split::Adversarial => f.write_str("adversarial"),
            Split::Heal(p) => f.write_str(p.as_str()),
        }
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Split::Random),
            "popular" => Ok(Split::Popular),
            "adversarial" => Ok(Split::Adversarial),
            other => other
                .parse::<HealProbe>()
                .map(Split::Heal)
                .map_err(|_| format!("unknown split {other:?}")),
        }
    }
}

impl TryFrom<String> for Split {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Split> for String {
    fn from(s: Split) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub text: String,
    pub target_category: String,
    pub ground_truth: Presence,
    pub split: Split,
}

impl Query {
    /// The fixed presence-question template.
    pub fn presence(category: &str, ground_truth: Presence, split: Split) -> Self {
        Self {
            text: format!("Is there a {category} in the room?"),
            target_category: category.to_string(),
            ground_truth,
            split,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.text.trim().is_empty() {
            return Err(SceneError::InvalidQuery("empty query text".into()));
        }
        if self.text.contains('\n') {
            return Err(SceneError::InvalidQuery("query text spans several lines".into()));
        }
        if self.target_category.trim().is_empty() {
            return Err(SceneError::InvalidQuery("empty target category".into()));
        }
        Ok(())
    }
}

/// Serialized scene followed by the `<refer_expression>`-wrapped query.
pub fn build_prompt(graph: &SceneGraph, query: &Query, profile: Profile) -> Result<String, SceneError> {
    query.validate()?;
    Ok(build_prompt_text(&serialize_scene(graph, profile)?, &query.text))
}

pub(crate) fn build_prompt_text(scene_text: &str, query_text: &str) -> String {
    format!("{scene_text}\n{QUERY_OPEN}{query_text}{QUERY_CLOSE}")
}

/// Splits a prompt into its scene text and query text.
pub fn split_prompt(prompt: &str) -> Option<(&str, &str)> {
    let idx = prompt.rfind(&format!("\n{QUERY_OPEN}"))?;
    let scene = &prompt[..idx];
    let query = prompt[idx + 1 + QUERY_OPEN.len()..].strip_suffix(QUERY_CLOSE)?;
    Some((scene, query))
}
