use rand_distr::{Distribution, Normal};

use crate::scene::SceneGraph;
use crate::seed;

/// Adds zero-mean Gaussian noise to every centroid (`sigma_centroid`) and
/// extent (`sigma_extent`). Extents are clamped at zero afterwards.
///
/// Draw order per object is three centroid axes, then three extent axes; a
/// zero sigma skips its draws entirely, so `sigma = 0` is an exact identity.
pub fn geometric_noise(graph: &SceneGraph, sigma_centroid: f64, sigma_extent: f64, seed: u64) -> SceneGraph {
    let mut out = graph.clone();
    let mut rng = seed::rng(seed);
    let centroid_noise = (sigma_centroid > 0.0).then(|| Normal::new(0.0, sigma_centroid).expect("finite sigma"));
    let extent_noise = (sigma_extent > 0.0).then(|| Normal::new(0.0, sigma_extent).expect("finite sigma"));
    for o in &mut out.objects {
        if let Some(n) = &centroid_noise {
            for v in &mut o.centroid {
                *v += n.sample(&mut rng);
            }
        }
        if let Some(n) = &extent_noise {
            for v in &mut o.extent {
                *v = (*v + n.sample(&mut rng)).max(0.0);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::ObjectNode;

    #[test]
    fn zero_sigma_is_identity() {
        let g = SceneGraph::new(
            "s",
            vec![ObjectNode::new("a", "chair", [1.0, -2.0, 0.5], [0.3, 0.4, 0.5])],
        );
        assert_eq!(geometric_noise(&g, 0.0, 0.0, 99), g);
    }

    #[test]
    fn tiny_extents_stay_non_negative() {
        let g = SceneGraph::new(
            "s",
            (0..200)
                .map(|i| ObjectNode::new(format!("o{i}"), "box", [0.0; 3], [0.01; 3]))
                .collect(),
        );
        let out = geometric_noise(&g, 1.0, 1.0, 5);
        assert!(out.objects.iter().flat_map(|o| o.extent).all(|v| v >= 0.0));
        assert!(out.objects.iter().flat_map(|o| o.extent).any(|v| v == 0.0));
        assert_eq!(out.objects[0].category, "box");
    }

    #[test]
    fn centroid_only_noise_leaves_extent() {
        let g = SceneGraph::new("s", vec![ObjectNode::new("a", "chair", [1.0; 3], [0.5; 3])]);
        let out = geometric_noise(&g, 0.2, 0.0, 1);
        assert_eq!(out.objects[0].extent, [0.5; 3]);
        assert_ne!(out.objects[0].centroid, [1.0; 3]);
    }
}
