//! Skeleton assembly from candidate keypoints.
//!
//! Connections are solved one at a time as bipartite problems between the
//! keypoints already attached to partial skeletons (parents) and the free
//! candidates of the child category. The cost of a pair is the association
//! penalty: the mean distance between each keypoint and the location its
//! partner's association map predicts for it. Dominant connections come
//! first and decide which roots survive; the remaining connections follow
//! by order, pruning unattached candidates after every order.

use crate::assignment::{greedy_assign, CostMatrix};
use crate::error::Result;
use crate::geometry::Point;
use crate::map_codec::{read_assoc, CandidateKeypoint, MapStack};
use crate::skeleton::{ConnectionId, Pose, SkeletonSpec};

/// Fraction of the image diagonal above which an association is discarded.
pub const DEFAULT_GATE_FRACTION: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct PartialSkeleton {
    pub coords: Vec<Option<Point>>,
    /// Candidate score of every attached keypoint.
    pub scores: Vec<Option<f64>>,
}

impl PartialSkeleton {
    fn new(categories: usize) -> Self {
        PartialSkeleton { coords: vec![None; categories], scores: vec![None; categories] }
    }

    fn attach(&mut self, cand: &CandidateKeypoint) {
        self.coords[cand.category] = Some(cand.position);
        self.scores[cand.category] = Some(cand.score);
    }

    pub fn to_pose(&self, frame_index: usize) -> Pose {
        Pose { coords: self.coords.clone(), frame_index }
    }
}

/// Location of the partner keypoint predicted from `candidate` through the
/// connection's association channels. `forward` reads the parent-to-child
/// channels, otherwise the child-to-parent ones.
pub fn predict_complement(
    candidate: Point,
    connection: ConnectionId,
    maps: &MapStack,
    forward: bool,
) -> Result<Point> {
    let m = &maps.assoc[connection.0];
    let (gx, gy) = if forward { (&m.ab_x, &m.ab_y) } else { (&m.ba_x, &m.ba_y) };
    Ok(candidate + Point::new(read_assoc(gx, candidate)?, read_assoc(gy, candidate)?))
}

/// Mean of the two complement-prediction errors of a parent/child pair.
pub fn association_penalty(
    parent: Point,
    child: Point,
    maps: &MapStack,
    connection: ConnectionId,
) -> Result<f64> {
    let to_child = predict_complement(parent, connection, maps, true)?;
    let to_parent = predict_complement(child, connection, maps, false)?;
    Ok((to_child.distance(child) + to_parent.distance(parent)) / 2.0)
}

/// Runs one connection: matches skeletons holding the parent keypoint
/// against the child candidates and attaches the winners. Returns the
/// indices of skeletons that received a child.
fn connect(
    skeletons: &mut [PartialSkeleton],
    alive: &[bool],
    children: &[CandidateKeypoint],
    connection: ConnectionId,
    spec: &SkeletonSpec,
    maps: &MapStack,
    gate: f64,
) -> Result<Vec<usize>> {
    let parent_cat = spec.connection(connection).parent;
    let parents: Vec<usize> = (0..skeletons.len())
        .filter(|&i| alive[i] && skeletons[i].coords[parent_cat].is_some())
        .collect();
    if parents.is_empty() || children.is_empty() {
        return Ok(Vec::new());
    }
    let mut costs = Vec::with_capacity(parents.len() * children.len());
    for &i in &parents {
        let p = skeletons[i].coords[parent_cat].expect("filtered above");
        for c in children {
            costs.push(association_penalty(p, c.position, maps, connection)?);
        }
    }
    let cost = CostMatrix::from_fn(parents.len(), children.len(), |r, c| costs[r * children.len() + c]);
    let mut matched = Vec::new();
    for (r, c) in greedy_assign(&cost, Some(gate)) {
        let skel = parents[r];
        skeletons[skel].attach(&children[c]);
        matched.push(skel);
    }
    Ok(matched)
}

/// Assembles candidates (grouped by category) into skeletons.
///
/// Every returned skeleton has its root and at least one dominant
/// connection; no candidate is used twice.
pub fn assemble(
    candidates: &[Vec<CandidateKeypoint>],
    maps: &MapStack,
    spec: &SkeletonSpec,
    gate: f64,
) -> Result<Vec<PartialSkeleton>> {
    let n = spec.len();
    let empty = Vec::new();
    let of = |cat: usize| candidates.get(cat).unwrap_or(&empty);

    let mut skeletons: Vec<PartialSkeleton> = of(spec.root())
        .iter()
        .map(|c| {
            let mut s = PartialSkeleton::new(n);
            s.attach(c);
            s
        })
        .collect();
    let mut alive = vec![true; skeletons.len()];

    // dominant connections share the root pool; each is an independent problem
    let mut has_dominant = vec![false; skeletons.len()];
    for &(id, _) in spec.dominant() {
        let child = spec.connection(id).child;
        for s in connect(&mut skeletons, &alive, of(child), id, spec, maps, gate)? {
            has_dominant[s] = true;
        }
    }
    for (a, d) in alive.iter_mut().zip(&has_dominant) {
        *a = *d;
    }

    for order in 1..=spec.max_rank() {
        for id in spec.tree_connections() {
            if spec.order(id) != order || spec.is_dominant(id) {
                continue;
            }
            let child = spec.connection(id).child;
            connect(&mut skeletons, &alive, of(child), id, spec, maps, gate)?;
        }
    }

    Ok(skeletons
        .into_iter()
        .zip(alive)
        .filter_map(|(s, a)| a.then_some(s))
        .collect())
}

/// Gate used by [`assemble`] for an image: a fraction of its diagonal.
pub fn gate_for(maps: &MapStack, fraction: f64) -> f64 {
    fraction * maps.diagonal()
}
