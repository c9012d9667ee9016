use rand::seq::{index, IndexedRandom, SliceRandom};

use super::{quota_ceil, DistortionError};
use crate::lexicon::Lexicon;
use crate::scene::SceneGraph;
use crate::seed;

const SHUFFLE_ATTEMPTS: usize = 64;

fn pick_sorted(rng: &mut seed::Rng, n: usize, k: usize) -> Vec<usize> {
    let mut idx = index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Reassigns the categories of `⌈fraction·N⌉` random objects by a
/// derangement of their own category multiset.
///
/// When no fixed-point-free permutation exists (a single selected object, or
/// one category holding more than half of the selection), the positions that
/// would keep their label are substituted from the vocabulary, or from the
/// scene's other categories when no vocabulary is given.
pub fn semantic_shuffle(
    graph: &SceneGraph,
    fraction: f64,
    seed: u64,
    vocabulary: Option<&Lexicon>,
) -> Result<SceneGraph, DistortionError> {
    let mut out = graph.clone();
    let n = graph.len();
    let k = quota_ceil(fraction, n);
    if k == 0 {
        return Ok(out);
    }
    let mut rng = seed::rng(seed);
    let selected = pick_sorted(&mut rng, n, k);
    let original: Vec<&str> = selected.iter().map(|&i| graph.objects[i].category.as_str()).collect();
    let assigned = derange(&original, &mut rng);

    for (slot, (&obj, new_cat)) in selected.iter().zip(assigned).enumerate() {
        let orig = original[slot];
        let cat = if new_cat != orig {
            new_cat.to_string()
        } else {
            shuffle_fallback(graph, orig, vocabulary, &mut rng)?
        };
        out.objects[obj].category = cat;
    }
    Ok(out)
}

fn shuffle_fallback(
    graph: &SceneGraph,
    orig: &str,
    vocabulary: Option<&Lexicon>,
    rng: &mut seed::Rng,
) -> Result<String, DistortionError> {
    let candidates: Vec<&str> = match vocabulary {
        Some(lex) => lex
            .categories
            .iter()
            .map(String::as_str)
            .filter(|c| *c != orig)
            .collect(),
        None => {
            let mut cats: Vec<&str> = graph
                .objects
                .iter()
                .map(|o| o.category.as_str())
                .filter(|c| *c != orig)
                .collect();
            cats.sort_unstable();
            cats.dedup();
            cats
        }
    };
    candidates.choose(rng).map(|s| s.to_string()).ok_or_else(|| {
        DistortionError::Config(format!(
            "semantic shuffle: no replacement for {orig:?} without a vocabulary"
        ))
    })
}

/// Permutes `cats` so that as few positions as possible keep their value.
/// The result is fixed-point free whenever no value occupies more than half
/// of the positions.
pub(crate) fn derange<'a>(cats: &[&'a str], rng: &mut seed::Rng) -> Vec<&'a str> {
    let k = cats.len();
    let mut perm: Vec<&str> = cats.to_vec();
    if k < 2 {
        return perm;
    }
    for _ in 0..SHUFFLE_ATTEMPTS {
        perm.shuffle(rng);
        if perm.iter().zip(cats).all(|(a, b)| a != b) {
            return perm;
        }
    }
    // Group equal values together (in random order), then rotate the value
    // sequence by the largest multiplicity.
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng);
    order.sort_by(|&a, &b| cats[a].cmp(cats[b]));
    let mut max_mult = 1;
    let mut run = 1;
    for w in order.windows(2) {
        if cats[w[0]] == cats[w[1]] {
            run += 1;
            max_mult = max_mult.max(run);
        } else {
            run = 1;
        }
    }
    let mut out = vec![""; k];
    for (i, &pos) in order.iter().enumerate() {
        out[pos] = cats[order[(i + max_mult) % k]];
    }
    out
}

/// Replaces `⌈fraction·N⌉` random categories with a near-synonym (or, when
/// the table has no entry, another vocabulary category).
pub fn semantic_substitute(
    graph: &SceneGraph,
    fraction: f64,
    seed: u64,
    vocabulary: &Lexicon,
) -> Result<SceneGraph, DistortionError> {
    if vocabulary.categories.is_empty() && vocabulary.synonyms.is_empty() {
        return Err(DistortionError::Config(
            "semantic substitution: empty vocabulary".into(),
        ));
    }
    let mut out = graph.clone();
    let n = graph.len();
    let k = quota_ceil(fraction, n);
    if k == 0 {
        return Ok(out);
    }
    let mut rng = seed::rng(seed);
    for i in pick_sorted(&mut rng, n, k) {
        let orig = &graph.objects[i].category;
        let alts = vocabulary.alternatives(orig);
        let pick = alts
            .choose(&mut rng)
            .ok_or_else(|| DistortionError::Config(format!("semantic substitution: no alternative for {orig:?}")))?;
        out.objects[i].category = pick.to_string();
    }
    Ok(out)
}

/// Strips descriptive modifiers from multi-word categories, keeping the
/// final word. Only multi-word categories count toward the quota.
pub fn semantic_drop_modifier(graph: &SceneGraph, fraction: f64, seed: u64) -> SceneGraph {
    let mut out = graph.clone();
    let eligible: Vec<usize> = graph
        .objects
        .iter()
        .enumerate()
        .filter(|(_, o)| o.category.split_whitespace().count() > 1)
        .map(|(i, _)| i)
        .collect();
    let k = quota_ceil(fraction, eligible.len());
    if k == 0 {
        return out;
    }
    let mut rng = seed::rng(seed);
    for j in pick_sorted(&mut rng, eligible.len(), k) {
        let i = eligible[j];
        let last = graph.objects[i].category.split_whitespace().last().unwrap_or_default();
        out.objects[i].category = last.to_string();
    }
    out
}
