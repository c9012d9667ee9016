//! Answer parsing, presence-question classification metrics and CHAIR
//! hallucination rates.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::lexicon::{Lexicon, WordMatcher};
use crate::scene::{Presence, Query, SceneGraph};

pub const SCHEMA_VERSION: u32 = 1;

const GROUNDING_OPEN: &str = "<detailed_grounding>";
const GROUNDING_CLOSE: &str = "</detailed_grounding>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Yes,
    No,
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub decision: Decision,
    /// Referenced tags as `obj_k`, in order of appearance.
    pub referenced_object_ids: Vec<String>,
    pub mentioned_objects: BTreeSet<String>,
    pub mentioned_states: BTreeSet<String>,
}

impl ParsedAnswer {
    /// 1-based positional indices of the referenced tags.
    pub fn referenced_tags(&self) -> impl Iterator<Item = usize> + '_ {
        self.referenced_object_ids
            .iter()
            .filter_map(|id| id.strip_prefix("obj_")?.parse().ok())
    }
}

fn ref_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[<obj_(\d+)>\]").expect("static regex"))
}

fn phrase_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)<p>(.*?)</p>").expect("static regex"))
}

/// Category and state vocabularies used to spot bare mentions.
#[derive(Debug, Clone)]
pub struct AnswerParser {
    objects: WordMatcher,
    states: WordMatcher,
}

impl AnswerParser {
    pub fn new(lexicon: &Lexicon) -> Self {
        Self {
            objects: WordMatcher::new(&lexicon.all_object_words()),
            states: WordMatcher::new(&lexicon.states),
        }
    }

    pub fn builtin() -> &'static AnswerParser {
        static P: OnceLock<AnswerParser> = OnceLock::new();
        P.get_or_init(|| AnswerParser::new(Lexicon::builtin()))
    }

    pub fn parse(&self, text: &str) -> ParsedAnswer {
        let segment = grounding_segment(text);
        let decision = leading_decision(segment);
        let referenced_object_ids = if decision == Decision::Unparseable {
            Vec::new()
        } else {
            ref_regex()
                .captures_iter(segment)
                .map(|c| format!("obj_{}", &c[1]))
                .collect()
        };
        let mut mentioned_objects: BTreeSet<String> = phrase_regex()
            .captures_iter(segment)
            .map(|c| c[1].trim().to_lowercase())
            .filter(|s| !s.is_empty())
            .collect();
        mentioned_objects.extend(self.objects.find_all(segment));
        let mentioned_states = self.states.find_all(segment).into_iter().collect();
        ParsedAnswer {
            decision,
            referenced_object_ids,
            mentioned_objects,
            mentioned_states,
        }
    }
}

/// Parses with the bundled lexicon.
pub fn parse_answer(text: &str) -> ParsedAnswer {
    AnswerParser::builtin().parse(text)
}

/// The first `<detailed_grounding>` segment, or the whole text when the tag
/// is absent.
fn grounding_segment(text: &str) -> &str {
    let Some(start) = text.find(GROUNDING_OPEN) else {
        return text;
    };
    let rest = &text[start + GROUNDING_OPEN.len()..];
    let end = [rest.find(GROUNDING_CLOSE), rest.find(GROUNDING_OPEN)]
        .into_iter()
        .flatten()
        .min()
        .unwrap_or(rest.len());
    &rest[..end]
}

fn leading_decision(segment: &str) -> Decision {
    let s = segment.trim_start();
    let word_at = |w: &str| {
        s.get(..w.len()).is_some_and(|head| head.eq_ignore_ascii_case(w))
            && !s[w.len()..].chars().next().is_some_and(|c| c.is_alphanumeric())
    };
    if word_at("yes") {
        Decision::Yes
    } else if word_at("no") {
        Decision::No
    } else {
        Decision::Unparseable
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorrectnessRule {
    DecisionOnly,
    /// A "Yes" on a present object also needs a reference to an instance of
    /// the queried category.
    #[default]
    DecisionAndReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    TruePositive,
    FalsePositive,
    TrueNegative,
    FalseNegative,
    /// "Yes" on a present object without a correct reference.
    YesUnmatched,
    UnparseablePresent,
    UnparseableAbsent,
}

pub fn classify(answer: &ParsedAnswer, query: &Query, graph: &SceneGraph, rule: CorrectnessRule) -> Outcome {
    match (query.ground_truth, answer.decision) {
        (Presence::Present, Decision::Yes) => {
            let grounded = rule == CorrectnessRule::DecisionOnly
                || answer
                    .referenced_tags()
                    .filter_map(|k| graph.object_at(k))
                    .any(|o| o.category == query.target_category);
            if grounded {
                Outcome::TruePositive
            } else {
                Outcome::YesUnmatched
            }
        }
        (Presence::Present, Decision::No) => Outcome::FalseNegative,
        (Presence::Present, Decision::Unparseable) => Outcome::UnparseablePresent,
        (Presence::Absent, Decision::Yes) => Outcome::FalsePositive,
        (Presence::Absent, Decision::No) => Outcome::TrueNegative,
        (Presence::Absent, Decision::Unparseable) => Outcome::UnparseableAbsent,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub yes_unmatched: usize,
    pub unparseable_present: usize,
    pub unparseable_absent: usize,
}

impl Confusion {
    pub fn add(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::TruePositive => self.tp += 1,
            Outcome::FalsePositive => self.fp += 1,
            Outcome::TrueNegative => self.tn += 1,
            Outcome::FalseNegative => self.fn_ += 1,
            Outcome::YesUnmatched => self.yes_unmatched += 1,
            Outcome::UnparseablePresent => self.unparseable_present += 1,
            Outcome::UnparseableAbsent => self.unparseable_absent += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
        self.yes_unmatched += other.yes_unmatched;
        self.unparseable_present += other.unparseable_present;
        self.unparseable_absent += other.unparseable_absent;
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_ + self.yes_unmatched + self.unparseable_present + self.unparseable_absent
    }

    pub fn unparseable(&self) -> usize {
        self.unparseable_present + self.unparseable_absent
    }

    /// Every question whose object is present, however it was answered.
    pub fn positives(&self) -> usize {
        self.tp + self.fn_ + self.yes_unmatched + self.unparseable_present
    }

    pub fn metrics(&self) -> ClassMetrics {
        let mut flags = Vec::new();
        let mut ratio = |num: usize, den: usize, flag: &str| {
            if den == 0 {
                flags.push(flag.to_string());
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(self.tp, self.tp + self.fp, "precision_undefined");
        let recall = ratio(self.tp, self.positives(), "recall_undefined");
        let accuracy = ratio(self.tp + self.tn, self.total(), "no_predictions");
        let yes_rate = if self.total() == 0 {
            0.0
        } else {
            (self.tp + self.fp + self.yes_unmatched) as f64 / self.total() as f64
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            accuracy,
            yes_rate,
            flags,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub yes_rate: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub counts: Confusion,
    #[serde(flatten)]
    pub metrics: ClassMetrics,
}

impl From<Confusion> for SplitReport {
    fn from(counts: Confusion) -> Self {
        Self {
            metrics: counts.metrics(),
            counts,
        }
    }
}

/// One scored prediction.
#[derive(Debug, Clone, Copy)]
pub struct Prediction<'a> {
    pub answer: &'a ParsedAnswer,
    pub query: &'a Query,
    pub graph: &'a SceneGraph,
}

/// Per-split reports plus an `"all"` entry pooling every prediction.
pub fn score_pope(predictions: &[Prediction<'_>], rule: CorrectnessRule) -> BTreeMap<String, SplitReport> {
    let mut per: BTreeMap<String, Confusion> = BTreeMap::new();
    let mut all = Confusion::default();
    for p in predictions {
        let outcome = classify(p.answer, p.query, p.graph, rule);
        per.entry(p.query.split.to_string()).or_default().add(outcome);
        all.add(outcome);
    }
    let mut out: BTreeMap<String, SplitReport> = per.into_iter().map(|(k, c)| (k, c.into())).collect();
    out.insert(ALL_SPLITS.to_string(), all.into());
    out
}

pub const ALL_SPLITS: &str = "all";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChairRate {
    pub hallucinated: usize,
    pub mentioned: usize,
    /// Corpus-level `hallucinated / mentioned`; 0 when nothing was mentioned.
    pub rate: f64,
    /// Mean of per-answer rates over answers with at least one mention.
    pub macro_rate: f64,
    pub no_mentions: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChairScore {
    pub objects: ChairRate,
    pub states: ChairRate,
}

#[derive(Default)]
struct RateAcc {
    hallucinated: usize,
    mentioned: usize,
    macro_sum: f64,
    macro_n: usize,
}

impl RateAcc {
    fn add(&mut self, hallucinated: usize, mentioned: usize) {
        self.hallucinated += hallucinated;
        self.mentioned += mentioned;
        if mentioned > 0 {
            self.macro_sum += hallucinated as f64 / mentioned as f64;
            self.macro_n += 1;
        }
    }

    fn finish(self) -> ChairRate {
        ChairRate {
            hallucinated: self.hallucinated,
            mentioned: self.mentioned,
            rate: if self.mentioned == 0 {
                0.0
            } else {
                self.hallucinated as f64 / self.mentioned as f64
            },
            macro_rate: if self.macro_n == 0 {
                0.0
            } else {
                self.macro_sum / self.macro_n as f64
            },
            no_mentions: self.mentioned == 0,
        }
    }
}

/// Hallucinated (object, state) counts for one answer against its scene.
pub fn chair_counts(answer: &ParsedAnswer, graph: &SceneGraph, lexicon: &Lexicon) -> ((usize, usize), (usize, usize)) {
    let scene: BTreeSet<&str> = graph
        .objects
        .iter()
        .map(|o| lexicon.canonicalize(&o.category))
        .collect();
    let mentioned: BTreeSet<&str> = answer
        .mentioned_objects
        .iter()
        .map(|m| lexicon.canonicalize(m))
        .collect();
    let bad_objects = mentioned.iter().filter(|m| !scene.contains(*m)).count();

    let referenced: BTreeSet<usize> = answer.referenced_tags().collect();
    let held: BTreeSet<&str> = graph
        .objects
        .iter()
        .enumerate()
        .filter(|(i, o)| referenced.contains(&(i + 1)) || mentioned.contains(lexicon.canonicalize(&o.category)))
        .flat_map(|(_, o)| o.states.iter().map(String::as_str))
        .collect();
    let bad_states = answer
        .mentioned_states
        .iter()
        .filter(|s| !held.contains(s.as_str()))
        .count();
    (
        (bad_objects, mentioned.len()),
        (bad_states, answer.mentioned_states.len()),
    )
}

/// Corpus-level CHAIR rates. Mentions are canonicalized through `lexicon`
/// before being checked against the scene.
pub fn score_chair(outputs: &[(&ParsedAnswer, &SceneGraph)], lexicon: &Lexicon) -> ChairScore {
    let mut objects = RateAcc::default();
    let mut states = RateAcc::default();
    for (answer, graph) in outputs {
        let ((ho, mo), (hs, ms)) = chair_counts(answer, graph, lexicon);
        objects.add(ho, mo);
        states.add(hs, ms);
    }
    ChairScore {
        objects: objects.finish(),
        states: states.finish(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyStats {
    pub n: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

impl LatencyStats {
    /// Mean and nearest-rank 95th percentile.
    pub fn from_durations(samples: &[Duration]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        let rank = ((0.95 * ms.len() as f64).ceil() as usize).clamp(1, ms.len());
        Self {
            n: ms.len(),
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            p95_ms: ms[rank - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    /// Decoding mode, e.g. `baseline` or `vcd`.
    pub label: String,
    #[serde(default)]
    pub rule: CorrectnessRule,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub splits: BTreeMap<String, SplitReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chair: Option<ChairScore>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub chair_by_split: BTreeMap<String, ChairScore>,
    pub latency: LatencyStats,
    /// Jobs that failed and were left out of the scores.
    #[serde(default)]
    pub failed_jobs: usize,
}

impl EvalReport {
    pub fn new(label: &str, rule: CorrectnessRule) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            label: label.to_string(),
            rule,
            splits: BTreeMap::new(),
            chair: None,
            chair_by_split: BTreeMap::new(),
            latency: LatencyStats::default(),
            failed_jobs: 0,
        }
    }

    /// Copy with wall-clock fields zeroed, for reproducibility comparisons.
    pub fn without_timings(&self) -> Self {
        Self {
            latency: LatencyStats {
                n: self.latency.n,
                ..LatencyStats::default()
            },
            ..self.clone()
        }
    }
}

pub const CSV_HEADER: [&str; 20] = [
    "schema_version",
    "label",
    "split",
    "tp",
    "fp",
    "tn",
    "fn",
    "yes_unmatched",
    "unparseable",
    "precision",
    "recall",
    "f1",
    "accuracy",
    "yes_rate",
    "chair_objects",
    "chair_states",
    "chair_objects_macro",
    "chair_states_macro",
    "latency_mean_ms",
    "latency_p95_ms",
];

/// One row per (report, split); a report without splits gets a single row
/// under split `all`. CHAIR and latency columns repeat the report values.
pub fn write_csv<W: io::Write>(out: W, reports: &[EvalReport]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        let chair = |f: fn(&ChairScore) -> f64| r.chair.as_ref().map(|c| format!("{:.6}", f(c))).unwrap_or_default();
        let tail = [
            chair(|c| c.objects.rate),
            chair(|c| c.states.rate),
            chair(|c| c.objects.macro_rate),
            chair(|c| c.states.macro_rate),
            format!("{:.3}", r.latency.mean_ms),
            format!("{:.3}", r.latency.p95_ms),
        ];
        let mut rows: Vec<(String, Option<&SplitReport>)> =
            r.splits.iter().map(|(k, v)| (k.clone(), Some(v))).collect();
        if rows.is_empty() {
            rows.push((ALL_SPLITS.to_string(), None));
        }
        for (split, rep) in rows {
            let mut rec = vec![r.schema_version.to_string(), r.label.clone(), split];
            match rep {
                Some(s) => {
                    let c = &s.counts;
                    let m = &s.metrics;
                    rec.extend(
                        [c.tp, c.fp, c.tn, c.fn_, c.yes_unmatched, c.unparseable()]
                            .iter()
                            .map(|v| v.to_string()),
                    );
                    rec.extend(
                        [m.precision, m.recall, m.f1, m.accuracy, m.yes_rate]
                            .iter()
                            .map(|v| format!("{v:.6}")),
                    );
                }
                None => rec.extend(std::iter::repeat_n(String::new(), 11)),
            }
            rec.extend(tail.iter().cloned());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `<stem>.json` (array of reports) and `<stem>.csv` into `dir`.
pub fn write_reports(dir: &Path, stem: &str, reports: &[EvalReport]) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(reports).map_err(io::Error::other)?;
    std::fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
    let file = std::fs::File::create(dir.join(format!("{stem}.csv")))?;
    write_csv(file, reports).map_err(io::Error::other)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{ObjectNode, Split};

    #[test]
    fn grounded_answer_example() {
        let a = parse_answer("<detailed_grounding>Yes, there is a <p>chair</p>[<obj_1>]");
        assert_eq!(a.decision, Decision::Yes);
        assert_eq!(a.referenced_object_ids, ["obj_1"]);
        assert_eq!(a.mentioned_objects, BTreeSet::from(["chair".to_string()]));
    }

    #[test]
    fn plain_and_empty_answers() {
        let a = parse_answer("No.");
        assert_eq!(a.decision, Decision::No);
        assert!(a.referenced_object_ids.is_empty());
        assert_eq!(parse_answer("").decision, Decision::Unparseable);
        assert_eq!(parse_answer("Nope").decision, Decision::Unparseable);
        assert_eq!(parse_answer("  YES").decision, Decision::Yes);
    }

    #[test]
    fn only_the_first_segment_counts() {
        let a =
            parse_answer("preamble no <detailed_grounding>No</detailed_grounding><detailed_grounding>Yes [<obj_2>]");
        assert_eq!(a.decision, Decision::No);
        assert!(a.referenced_object_ids.is_empty());
    }

    #[test]
    fn unparseable_drops_references() {
        let a = parse_answer("<p>chair</p>[<obj_1>] (dusty)");
        assert_eq!(a.decision, Decision::Unparseable);
        assert!(a.referenced_object_ids.is_empty());
        assert!(a.mentioned_objects.contains("chair"));
        assert!(a.mentioned_states.contains("dusty"));
    }

    #[test]
    fn confusion_example() {
        let c = Confusion {
            tp: 3,
            fp: 1,
            tn: 4,
            fn_: 2,
            ..Default::default()
        };
        let m = c.metrics();
        assert_eq!(m.precision, 0.75);
        assert_eq!(m.recall, 0.6);
        assert_eq!(m.accuracy, 0.7);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.yes_rate, 0.4);
        assert!(m.flags.is_empty());
    }

    #[test]
    fn zero_denominators_are_flagged() {
        let m = Confusion {
            tn: 2,
            fn_: 1,
            ..Default::default()
        }
        .metrics();
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.f1, 0.0);
        assert!(m.flags.contains(&"precision_undefined".to_string()));
    }

    #[test]
    fn reference_rule_needs_matching_instance() {
        let g = SceneGraph::new(
            "s",
            vec![
                ObjectNode::new("obj_1", "chair", [0.0; 3], [1.0; 3]),
                ObjectNode::new("obj_2", "table", [0.0; 3], [1.0; 3]),
            ],
        );
        let q = Query::presence("table", Presence::Present, Split::Random);
        let wrong = parse_answer("Yes, there is a <p>table</p>[<obj_1>]");
        let right = parse_answer("Yes, there is a <p>table</p>[<obj_2>]");
        assert_eq!(
            classify(&wrong, &q, &g, CorrectnessRule::DecisionAndReference),
            Outcome::YesUnmatched
        );
        assert_eq!(
            classify(&wrong, &q, &g, CorrectnessRule::DecisionOnly),
            Outcome::TruePositive
        );
        assert_eq!(
            classify(&right, &q, &g, CorrectnessRule::DecisionAndReference),
            Outcome::TruePositive
        );
    }

    #[test]
    fn chair_one_of_three() {
        let g = SceneGraph::new(
            "s",
            vec![
                ObjectNode::new("obj_1", "chair", [0.0; 3], [1.0; 3]),
                ObjectNode::new("obj_2", "table", [0.0; 3], [1.0; 3]),
            ],
        );
        let a = parse_answer("<p>chair</p>, <p>table</p> and <p>microwave</p>");
        let s = score_chair(&[(&a, &g)], Lexicon::builtin());
        assert_eq!((s.objects.hallucinated, s.objects.mentioned), (1, 3));
        assert!((s.objects.rate - 1.0 / 3.0).abs() < 1e-12);
        assert!(s.states.no_mentions);

        let none = parse_answer("No.");
        let s = score_chair(&[(&none, &g)], Lexicon::builtin());
        assert!(s.objects.no_mentions);
        assert_eq!(s.objects.rate, 0.0);
    }

    #[test]
    fn chair_canonicalizes_synonyms() {
        let g = SceneGraph::new("s", vec![ObjectNode::new("obj_1", "sofa", [0.0; 3], [1.0; 3])]);
        let a = parse_answer("<p>couch</p>");
        assert_eq!(score_chair(&[(&a, &g)], Lexicon::builtin()).objects.hallucinated, 0);
    }

    #[test]
    fn latency_percentile() {
        let d: Vec<Duration> = (1..=20).map(Duration::from_millis).collect();
        let s = LatencyStats::from_durations(&d);
        assert_eq!(s.n, 20);
        assert_eq!(s.p95_ms, 19.0);
        assert!((s.mean_ms - 10.5).abs() < 1e-9);
    }

    #[test]
    fn csv_has_one_row_per_split() {
        let mut r = EvalReport::new("vcd", CorrectnessRule::DecisionOnly);
        r.splits.insert(
            "all".into(),
            Confusion {
                tp: 1,
                ..Default::default()
            }
            .into(),
        );
        r.splits.insert(
            "random".into(),
            Confusion {
                tp: 1,
                ..Default::default()
            }
            .into(),
        );
        let mut buf = Vec::new();
        write_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("1,vcd,all,1,0,0,0,0,0,1.000000"));
    }
}
