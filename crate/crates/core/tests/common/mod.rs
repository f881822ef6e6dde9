#![allow(dead_code)]

use hcmfl::hierarchy::ROOT;
use hcmfl::VenueHierarchy;
use rand::Rng;

/// Random tree with `layers` layers below the root. Every node above the
/// last layer gets 1..=`max_children` children with probability
/// `p_branch` (always at layer 0), so leaves appear on several layers.
pub fn random_tree<R: Rng>(rng: &mut R, layers: usize, max_children: usize, p_branch: f64) -> VenueHierarchy {
    let mut edges = Vec::new();
    let mut frontier = vec![ROOT.to_string()];
    for layer in 1..=layers {
        let mut next = Vec::new();
        for parent in &frontier {
            if layer > 1 && !rng.gen_bool(p_branch) {
                continue;
            }
            for _ in 0..rng.gen_range(1..=max_children) {
                let id = format!("n{}_{}", layer, edges.len());
                edges.push((id.clone(), parent.clone()));
                next.push(id);
            }
        }
        frontier = next;
    }
    VenueHierarchy::from_edges(edges).expect("generated tree is valid")
}
