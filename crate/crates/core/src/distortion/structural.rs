use std::collections::HashSet;

use rand::seq::{index, IndexedRandom};
use rand::Rng as _;

use super::{quota_ceil, quota_floor, DistortionError};
use crate::lexicon::Lexicon;
use crate::scene::{ObjectNode, SceneGraph};
use crate::seed;

/// Removes `⌊fraction·N⌋` objects uniformly at random together with every
/// relation that points at them. Surviving ids are unchanged.
pub fn struct_sparsify(graph: &SceneGraph, fraction: f64, seed: u64) -> SceneGraph {
    let n = graph.len();
    let k = quota_floor(fraction, n);
    if k == 0 {
        return graph.clone();
    }
    let mut rng = seed::rng(seed);
    let removed: HashSet<usize> = index::sample(&mut rng, n, k).into_iter().collect();
    let removed_ids: HashSet<&str> = removed.iter().map(|&i| graph.objects[i].id.as_str()).collect();
    let objects = graph
        .objects
        .iter()
        .enumerate()
        .filter(|(i, _)| !removed.contains(i))
        .map(|(_, o)| {
            let mut o = o.clone();
            o.relations.retain(|r| !removed_ids.contains(r.target.as_str()));
            o
        })
        .collect();
    SceneGraph::new(graph.scene_id.clone(), objects)
}

/// Inverts `⌈fraction·R⌉` relations, where `R` counts only relations whose
/// predicate has an entry in the inverse table.
pub fn struct_relation_flip(
    graph: &SceneGraph,
    fraction: f64,
    seed: u64,
    vocabulary: &Lexicon,
) -> Result<SceneGraph, DistortionError> {
    let total: usize = graph.objects.iter().map(|o| o.relations.len()).sum();
    if total == 0 || fraction == 0.0 {
        return Ok(graph.clone());
    }
    if vocabulary.antonyms.is_empty() {
        return Err(DistortionError::Config(
            "relation flip: empty predicate inverse table".into(),
        ));
    }
    let eligible: Vec<(usize, usize)> = graph
        .objects
        .iter()
        .enumerate()
        .flat_map(|(oi, o)| {
            o.relations
                .iter()
                .enumerate()
                .filter(|(_, r)| vocabulary.inverse_predicate(&r.predicate).is_some())
                .map(move |(ri, _)| (oi, ri))
        })
        .collect();
    let k = quota_ceil(fraction, eligible.len());
    let mut out = graph.clone();
    if k == 0 {
        return Ok(out);
    }
    let mut rng = seed::rng(seed);
    let mut picks = index::sample(&mut rng, eligible.len(), k).into_vec();
    picks.sort_unstable();
    for p in picks {
        let (oi, ri) = eligible[p];
        let rel = &mut out.objects[oi].relations[ri];
        rel.predicate = vocabulary
            .inverse_predicate(&rel.predicate)
            .expect("eligible predicates have inverses")
            .to_string();
    }
    Ok(out)
}

fn fresh_id(taken: &mut HashSet<String>, start: usize) -> String {
    let mut k = start;
    loop {
        let id = format!("obj_{k}");
        if taken.insert(id.clone()) {
            return id;
        }
        k += 1;
    }
}

/// Appends `count` clutter objects. Each is either a vocabulary category
/// placed uniformly inside the bounding box of the scene's centroids, or a
/// copy of an existing object whose centroid is jittered by at most half of
/// its extent per axis. The choice is a seeded coin flip when both sources
/// are available.
pub fn struct_distractor(
    graph: &SceneGraph,
    count: usize,
    seed: u64,
    vocabulary: Option<&Lexicon>,
) -> Result<SceneGraph, DistortionError> {
    if count == 0 {
        return Ok(graph.clone());
    }
    let vocab: Vec<&str> = vocabulary
        .map(|l| l.categories.iter().map(String::as_str).collect())
        .unwrap_or_default();
    if vocab.is_empty() && graph.is_empty() {
        return Err(DistortionError::Config(
            "distractor injection needs a vocabulary or a non-empty scene".into(),
        ));
    }

    let (lo, hi) = bounding_box(graph);
    let mut rng = seed::rng(seed);
    let mut out = graph.clone();
    let mut taken: HashSet<String> = graph.objects.iter().map(|o| o.id.clone()).collect();

    for _ in 0..count {
        let duplicate = if vocab.is_empty() {
            true
        } else if graph.is_empty() {
            false
        } else {
            rng.random_bool(0.5)
        };
        let id = fresh_id(&mut taken, out.len() + 1);
        let node = if duplicate {
            let src = graph.objects.choose(&mut rng).expect("non-empty scene");
            let mut centroid = src.centroid;
            for (c, e) in centroid.iter_mut().zip(src.extent) {
                let half = e / 2.0;
                if half > 0.0 {
                    *c += rng.random_range(-half..=half);
                }
            }
            ObjectNode {
                id,
                category: src.category.clone(),
                centroid,
                extent: src.extent,
                states: src.states.clone(),
                relations: Vec::new(),
            }
        } else {
            let category = vocab.choose(&mut rng).expect("non-empty vocabulary");
            let mut centroid = [0.0; 3];
            for (axis, c) in centroid.iter_mut().enumerate() {
                *c = if hi[axis] > lo[axis] {
                    rng.random_range(lo[axis]..=hi[axis])
                } else {
                    lo[axis]
                };
            }
            let mut extent = [0.0; 3];
            for e in &mut extent {
                *e = rng.random_range(0.2..=1.0);
            }
            ObjectNode::new(id, *category, centroid, extent)
        };
        out.objects.push(node);
    }
    Ok(out)
}

/// Axis-aligned bounds of the object centroids (origin for an empty scene).
pub(crate) fn bounding_box(graph: &SceneGraph) -> ([f64; 3], [f64; 3]) {
    if graph.is_empty() {
        return ([0.0; 3], [0.0; 3]);
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for o in &graph.objects {
        for a in 0..3 {
            lo[a] = lo[a].min(o.centroid[a]);
            hi[a] = hi[a].max(o.centroid[a]);
        }
    }
    (lo, hi)
}
