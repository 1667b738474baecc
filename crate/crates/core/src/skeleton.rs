//! Hierarchical skeleton model.
//!
//! A skeleton is a tree of keypoint categories rooted at a central keypoint.
//! The rank of a category is its path length to the root and the order of a
//! connection is the rank of its child. A subset of the first-order
//! connections is *dominant*: a pose is only a valid skeleton when the root
//! and at least one dominant connection are present. The β-weighted mean
//! length of the present dominant connections is the skeleton scale.
//!
//! Connections flagged `training_only` carry association maps but take no
//! part in the tree (they may close a cycle, e.g. a hook-to-hook link).

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::map_codec::EncoderParams;

/// Bundled skeleton: six dorsal keypoints of cattle.
pub const CATTLE_SKELETON_TOML: &str = include_str!("../skeletons/cattle.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectionDef {
    pub parent: String,
    pub child: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub training_only: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominantDef {
    pub parent: String,
    pub child: String,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionRef {
    pub parent: String,
    pub child: String,
}

/// Declarative skeleton description, as stored in a skeleton config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonConfig {
    pub name: String,
    pub categories: Vec<String>,
    pub root: String,
    pub connections: Vec<ConnectionDef>,
    pub dominant: Vec<DominantDef>,
    pub reference: ConnectionRef,
    /// Pairs of child categories whose dominant connections mirror each other.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub symmetric: Vec<[String; 2]>,
    #[serde(default)]
    pub encoder: EncoderParams,
    /// Per-category observation variance (px²) used to build the tracker's R.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_star: Option<Vec<f64>>,
}

impl SkeletonConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("skeleton config is always serializable")
    }
}

/// One way a [`SkeletonConfig`] can fail validation.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Empty,
    DuplicateCategory(String),
    UnknownCategory(String),
    NotATree(String),
    DominantNotAConnection(String),
    DominantNotFirstOrder(String),
    NonPositiveBeta(String),
    ReferenceNotDominant(String),
    ReferenceBetaNotOne(f64),
    BadSymmetricPair(String),
    BadEncoderParams(String),
    BadObservationVariance(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "skeleton has no categories"),
            Violation::DuplicateCategory(c) => write!(f, "duplicate category `{c}`"),
            Violation::UnknownCategory(c) => write!(f, "unknown category `{c}`"),
            Violation::NotATree(why) => write!(f, "not a tree: {why}"),
            Violation::DominantNotAConnection(c) => {
                write!(f, "dominant connection {c} is not a skeleton connection")
            }
            Violation::DominantNotFirstOrder(c) => {
                write!(f, "dominant must be first-order: {c}")
            }
            Violation::NonPositiveBeta(c) => write!(f, "beta of {c} must be positive"),
            Violation::ReferenceNotDominant(c) => {
                write!(f, "reference connection {c} is not dominant")
            }
            Violation::ReferenceBetaNotOne(b) => {
                write!(f, "reference connection must have beta 1, got {b}")
            }
            Violation::BadSymmetricPair(why) => write!(f, "symmetric pair: {why}"),
            Violation::BadEncoderParams(why) => write!(f, "encoder parameters: {why}"),
            Violation::BadObservationVariance(why) => write!(f, "r_star: {why}"),
        }
    }
}

fn arrow(parent: &str, child: &str) -> String {
    format!("{parent}->{child}")
}

/// Returns every invariant violation of `config`; an empty list means valid.
pub fn validate_spec(config: &SkeletonConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    if config.categories.is_empty() {
        out.push(Violation::Empty);
        return out;
    }
    let mut index = HashMap::new();
    for (i, c) in config.categories.iter().enumerate() {
        if index.insert(c.as_str(), i).is_some() {
            out.push(Violation::DuplicateCategory(c.clone()));
        }
    }
    let lookup = |name: &str, out: &mut Vec<Violation>| -> Option<usize> {
        let found = index.get(name).copied();
        if found.is_none() {
            out.push(Violation::UnknownCategory(name.to_string()));
        }
        found
    };
    let root = lookup(&config.root, &mut out);

    let n = config.categories.len();
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for c in config.connections.iter().filter(|c| !c.training_only) {
        let p = lookup(&c.parent, &mut out);
        let ch = lookup(&c.child, &mut out);
        if let (Some(p), Some(ch)) = (p, ch) {
            if p == ch {
                out.push(Violation::NotATree(format!("self loop on `{}`", c.parent)));
            } else {
                parents[ch].push(p);
            }
        }
    }
    for c in config.connections.iter().filter(|c| c.training_only) {
        lookup(&c.parent, &mut out);
        lookup(&c.child, &mut out);
    }

    let mut tree_ok = true;
    if let Some(root) = root {
        if !parents[root].is_empty() {
            out.push(Violation::NotATree(format!("root `{}` has a parent", config.root)));
            tree_ok = false;
        }
        for (i, ps) in parents.iter().enumerate() {
            if i == root {
                continue;
            }
            match ps.len() {
                0 => {
                    out.push(Violation::NotATree(format!(
                        "`{}` has no parent",
                        config.categories[i]
                    )));
                    tree_ok = false;
                }
                1 => {}
                _ => {
                    out.push(Violation::NotATree(format!(
                        "`{}` has {} parents",
                        config.categories[i],
                        ps.len()
                    )));
                    tree_ok = false;
                }
            }
        }
        if tree_ok {
            // Every node has one parent; walk up and look for cycles.
            for start in 0..n {
                let mut node = start;
                let mut steps = 0;
                while node != root {
                    node = parents[node][0];
                    steps += 1;
                    if steps > n {
                        out.push(Violation::NotATree(format!(
                            "cycle through `{}`",
                            config.categories[start]
                        )));
                        tree_ok = false;
                        break;
                    }
                }
                if !tree_ok {
                    break;
                }
            }
        }
    }

    for d in &config.dominant {
        let name = arrow(&d.parent, &d.child);
        let is_conn = config
            .connections
            .iter()
            .any(|c| !c.training_only && c.parent == d.parent && c.child == d.child);
        if !is_conn {
            out.push(Violation::DominantNotAConnection(name.clone()));
        }
        if d.parent != config.root {
            out.push(Violation::DominantNotFirstOrder(name.clone()));
        }
        if !(d.beta > 0.0 && d.beta.is_finite()) {
            out.push(Violation::NonPositiveBeta(name));
        }
    }
    if config.dominant.is_empty() {
        out.push(Violation::ReferenceNotDominant(arrow(
            &config.reference.parent,
            &config.reference.child,
        )));
    } else {
        match config
            .dominant
            .iter()
            .find(|d| d.parent == config.reference.parent && d.child == config.reference.child)
        {
            None => out.push(Violation::ReferenceNotDominant(arrow(
                &config.reference.parent,
                &config.reference.child,
            ))),
            Some(d) if d.beta != 1.0 => out.push(Violation::ReferenceBetaNotOne(d.beta)),
            Some(_) => {}
        }
    }

    for [a, b] in &config.symmetric {
        for c in [a, b] {
            if !config.dominant.iter().any(|d| &d.child == c) {
                out.push(Violation::BadSymmetricPair(format!(
                    "`{c}` is not the child of a dominant connection"
                )));
            }
        }
        if a == b {
            out.push(Violation::BadSymmetricPair(format!("`{a}` paired with itself")));
        }
    }

    let e = &config.encoder;
    if !(e.theta > 0.0 && e.theta < 1.0) {
        out.push(Violation::BadEncoderParams(format!("theta {} not in (0, 1)", e.theta)));
    }
    if !(e.gamma > 0.0 && e.gamma < 1.0) {
        out.push(Violation::BadEncoderParams(format!("gamma {} not in (0, 1)", e.gamma)));
    }
    if !(e.kernel_extent > 0.0) {
        out.push(Violation::BadEncoderParams(format!(
            "kernel_extent {} must be positive",
            e.kernel_extent
        )));
    }
    if let Some(r) = &config.r_star {
        if r.len() != n {
            out.push(Violation::BadObservationVariance(format!(
                "expected {n} values, got {}",
                r.len()
            )));
        } else if r.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            out.push(Violation::BadObservationVariance("values must be positive".into()));
        }
    }
    out
}

/// Index of a connection inside [`SkeletonSpec::connections`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConnectionId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Connection {
    pub parent: usize,
    pub child: usize,
    pub training_only: bool,
}

/// A validated skeleton with resolved category indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSpec {
    name: String,
    categories: Vec<String>,
    root: usize,
    parent: Vec<Option<usize>>,
    rank: Vec<usize>,
    connections: Vec<Connection>,
    dominant: Vec<(ConnectionId, f64)>,
    reference: ConnectionId,
    symmetric: Vec<(ConnectionId, ConnectionId)>,
    encoder: EncoderParams,
    r_star: Option<Vec<f64>>,
}

impl SkeletonSpec {
    pub fn from_config(config: &SkeletonConfig) -> Result<Self> {
        let violations = validate_spec(config);
        if !violations.is_empty() {
            let msg = violations
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::InvalidSkeleton(msg));
        }
        let index: HashMap<&str, usize> = config
            .categories
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let n = config.categories.len();
        let root = index[config.root.as_str()];
        let connections: Vec<Connection> = config
            .connections
            .iter()
            .map(|c| Connection {
                parent: index[c.parent.as_str()],
                child: index[c.child.as_str()],
                training_only: c.training_only,
            })
            .collect();
        let mut parent = vec![None; n];
        for c in connections.iter().filter(|c| !c.training_only) {
            parent[c.child] = Some(c.parent);
        }
        let rank = (0..n)
            .map(|mut i| {
                let mut r = 0;
                while let Some(p) = parent[i] {
                    i = p;
                    r += 1;
                }
                r
            })
            .collect();
        let find = |p: usize, c: usize| {
            connections
                .iter()
                .position(|k| !k.training_only && k.parent == p && k.child == c)
                .map(ConnectionId)
                .expect("validated connection")
        };
        let dominant = config
            .dominant
            .iter()
            .map(|d| (find(index[d.parent.as_str()], index[d.child.as_str()]), d.beta))
            .collect::<Vec<_>>();
        let reference = find(
            index[config.reference.parent.as_str()],
            index[config.reference.child.as_str()],
        );
        let dominant_of_child = |c: &str| {
            dominant
                .iter()
                .map(|(id, _)| *id)
                .find(|id| connections[id.0].child == index[c])
                .expect("validated symmetric pair")
        };
        let symmetric = config
            .symmetric
            .iter()
            .map(|[a, b]| (dominant_of_child(a), dominant_of_child(b)))
            .collect();
        Ok(SkeletonSpec {
            name: config.name.clone(),
            categories: config.categories.clone(),
            root,
            parent,
            rank,
            connections,
            dominant,
            reference,
            symmetric,
            encoder: config.encoder,
            r_star: config.r_star.clone(),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_config(&SkeletonConfig::from_toml(text)?)
    }

    /// The bundled six-keypoint cattle skeleton.
    pub fn cattle() -> Self {
        Self::from_toml(CATTLE_SKELETON_TOML).expect("bundled skeleton is valid")
    }

    pub fn to_config(&self) -> SkeletonConfig {
        let conn = |id: ConnectionId| {
            let c = self.connections[id.0];
            (self.categories[c.parent].clone(), self.categories[c.child].clone())
        };
        let (rp, rc) = conn(self.reference);
        SkeletonConfig {
            name: self.name.clone(),
            categories: self.categories.clone(),
            root: self.categories[self.root].clone(),
            connections: self
                .connections
                .iter()
                .map(|c| ConnectionDef {
                    parent: self.categories[c.parent].clone(),
                    child: self.categories[c.child].clone(),
                    training_only: c.training_only,
                })
                .collect(),
            dominant: self
                .dominant
                .iter()
                .map(|&(id, beta)| {
                    let (parent, child) = conn(id);
                    DominantDef { parent, child, beta }
                })
                .collect(),
            reference: ConnectionRef { parent: rp, child: rc },
            symmetric: self
                .symmetric
                .iter()
                .map(|&(a, b)| [conn(a).1, conn(b).1])
                .collect(),
            encoder: self.encoder,
            r_star: self.r_star.clone(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn category_index(&self, name: &str) -> Result<usize> {
        self.categories
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownCategory(name.to_string()))
    }

    pub fn parent_of(&self, category: usize) -> Option<usize> {
        self.parent[category]
    }

    pub fn rank(&self, category: usize) -> usize {
        self.rank[category]
    }

    /// Tree-path length from `category` to the root.
    pub fn rank_of(&self, category: &str) -> Result<usize> {
        Ok(self.rank[self.category_index(category)?])
    }

    /// Rank of the skeleton: the largest rank of any category.
    pub fn max_rank(&self) -> usize {
        self.rank.iter().copied().max().unwrap_or(0)
    }

    /// Categories on the path from the root down to `category`, both included.
    pub fn path_from_root(&self, category: usize) -> Vec<usize> {
        let mut path = vec![category];
        let mut node = category;
        while let Some(p) = self.parent[node] {
            path.push(p);
            node = p;
        }
        path.reverse();
        path
    }

    pub fn connections(&self) -> &[Connection] {
        &self.connections
    }

    pub fn connection(&self, id: ConnectionId) -> Connection {
        self.connections[id.0]
    }

    /// Tree connections (training-only links excluded), in declaration order.
    pub fn tree_connections(&self) -> impl Iterator<Item = ConnectionId> + '_ {
        self.connections
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.training_only)
            .map(|(i, _)| ConnectionId(i))
    }

    /// Order of a connection: the rank of its child.
    pub fn order(&self, id: ConnectionId) -> usize {
        self.rank[self.connections[id.0].child]
    }

    pub fn find_connection(&self, parent: &str, child: &str) -> Result<ConnectionId> {
        let p = self.category_index(parent)?;
        let c = self.category_index(child)?;
        self.connections
            .iter()
            .position(|k| k.parent == p && k.child == c)
            .map(ConnectionId)
            .ok_or_else(|| Error::InvalidSkeleton(format!("no connection {parent}->{child}")))
    }

    pub fn connection_name(&self, id: ConnectionId) -> String {
        let c = self.connections[id.0];
        arrow(&self.categories[c.parent], &self.categories[c.child])
    }

    pub fn dominant(&self) -> &[(ConnectionId, f64)] {
        &self.dominant
    }

    pub fn is_dominant(&self, id: ConnectionId) -> bool {
        self.dominant.iter().any(|(d, _)| *d == id)
    }

    pub fn reference(&self) -> ConnectionId {
        self.reference
    }

    pub fn symmetric_pairs(&self) -> &[(ConnectionId, ConnectionId)] {
        &self.symmetric
    }

    pub fn encoder(&self) -> EncoderParams {
        self.encoder
    }

    pub fn r_star(&self) -> Option<&[f64]> {
        self.r_star.as_deref()
    }

    /// Returns a copy with the dominant weights replaced.
    pub fn with_betas(&self, betas: &BTreeMap<ConnectionId, f64>) -> Self {
        let mut out = self.clone();
        for (id, beta) in out.dominant.iter_mut() {
            if let Some(b) = betas.get(id) {
                *beta = *b;
            }
        }
        out
    }
}

/// One animal's keypoints, indexed like [`SkeletonSpec::categories`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub coords: Vec<Option<Point>>,
    pub frame_index: usize,
}

impl Pose {
    pub fn empty(categories: usize, frame_index: usize) -> Self {
        Pose { coords: vec![None; categories], frame_index }
    }

    pub fn from_coords(coords: Vec<Option<Point>>) -> Self {
        Pose { coords, frame_index: 0 }
    }

    pub fn get(&self, category: usize) -> Option<Point> {
        self.coords.get(category).copied().flatten()
    }

    pub fn present(&self) -> impl Iterator<Item = (usize, Point)> + '_ {
        self.coords.iter().enumerate().filter_map(|(i, c)| c.map(|p| (i, p)))
    }

    pub fn present_count(&self) -> usize {
        self.coords.iter().filter(|c| c.is_some()).count()
    }

    pub fn connection_vector(&self, spec: &SkeletonSpec, id: ConnectionId) -> ConnectionVector {
        let c = spec.connection(id);
        match (self.get(c.parent), self.get(c.child)) {
            (Some(a), Some(b)) => ConnectionVector { value: b - a, present: true },
            _ => ConnectionVector { value: Point::ORIGIN, present: false },
        }
    }

    /// Root present and at least one dominant connection with both endpoints.
    pub fn is_valid(&self, spec: &SkeletonSpec) -> bool {
        self.get(spec.root()).is_some()
            && spec
                .dominant()
                .iter()
                .any(|(id, _)| self.connection_vector(spec, *id).present)
    }

    /// Applies `f` to every present keypoint.
    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> Pose {
        Pose {
            coords: self.coords.iter().map(|c| c.map(&f)).collect(),
            frame_index: self.frame_index,
        }
    }
}

/// Vector from a connection's parent to its child; zero when either is missing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConnectionVector {
    pub value: Point,
    pub present: bool,
}

/// β-weighted mean length of the present dominant connections.
///
/// Returns `None` when no dominant connection is present, which marks the
/// pose as an invalid skeleton.
pub fn skeleton_scale(spec: &SkeletonSpec, pose: &Pose) -> Option<f64> {
    let mut weighted = 0.0;
    let mut present = 0usize;
    for &(id, beta) in spec.dominant() {
        let u = pose.connection_vector(spec, id);
        if u.present {
            weighted += beta * u.value.norm();
            present += 1;
        }
    }
    (present > 0).then(|| weighted / present as f64)
}

/// Estimates the dominant-connection weights from annotated poses.
///
/// For every non-reference dominant connection `d`, β_d is the
/// no-intercept least-squares slope of ‖u_ref‖ on ‖u_d‖ over poses where
/// both connections are present. Mirrored pairs declared in the skeleton are
/// then replaced by their mean. The reference weight is 1.
pub fn estimate_betas(
    annotations: &[Pose],
    spec: &SkeletonSpec,
    reference: ConnectionId,
) -> Result<BTreeMap<ConnectionId, f64>> {
    if !spec.is_dominant(reference) {
        return Err(Error::InvalidSkeleton(format!(
            "reference {} is not dominant",
            spec.connection_name(reference)
        )));
    }
    let mut betas = BTreeMap::new();
    betas.insert(reference, 1.0);
    for &(id, _) in spec.dominant() {
        if id == reference {
            continue;
        }
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut found = 0;
        for pose in annotations {
            let k = pose.connection_vector(spec, reference);
            let d = pose.connection_vector(spec, id);
            if k.present && d.present {
                let x = d.value.norm();
                sxy += x * k.value.norm();
                sxx += x * x;
                found += 1;
            }
        }
        if found < 2 || sxx == 0.0 {
            return Err(Error::InsufficientSamples {
                connection: spec.connection_name(id),
                found,
            });
        }
        betas.insert(id, sxy / sxx);
    }
    for &(a, b) in spec.symmetric_pairs() {
        if a == reference || b == reference {
            continue;
        }
        let mean = (betas[&a] + betas[&b]) / 2.0;
        betas.insert(a, mean);
        betas.insert(b, mean);
    }
    Ok(betas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cattle() -> SkeletonSpec {
        SkeletonSpec::cattle()
    }

    fn pose(spec: &SkeletonSpec, pts: &[(&str, f64, f64)]) -> Pose {
        let mut p = Pose::empty(spec.len(), 0);
        for &(name, x, y) in pts {
            p.coords[spec.category_index(name).unwrap()] = Some(Point::new(x, y));
        }
        p
    }

    #[test]
    fn ranks_of_bundled_skeleton() {
        let s = cattle();
        assert_eq!(s.rank_of("withers").unwrap(), 0);
        assert_eq!(s.rank_of("tail implant").unwrap(), 1);
        assert_eq!(s.rank_of("nose").unwrap(), 2);
        assert_eq!(s.max_rank(), 2);
        assert!(matches!(s.rank_of("hoof"), Err(Error::UnknownCategory(_))));
    }

    #[test]
    fn rank_increases_along_every_connection() {
        let s = cattle();
        for id in s.tree_connections() {
            let c = s.connection(id);
            assert_eq!(s.rank(c.child), s.rank(c.parent) + 1);
        }
    }

    #[test]
    fn bundled_skeleton_is_valid() {
        let config = SkeletonConfig::from_toml(CATTLE_SKELETON_TOML).unwrap();
        assert!(validate_spec(&config).is_empty());
        assert_eq!(config.categories.len(), 6);
        assert_eq!(config.connections.iter().filter(|c| !c.training_only).count(), 5);
        assert_eq!(config.dominant.len(), 3);
    }

    #[test]
    fn two_parents_is_not_a_tree() {
        let mut config = cattle().to_config();
        config.connections.push(ConnectionDef {
            parent: "head".into(),
            child: "tail implant".into(),
            training_only: false,
        });
        let v = validate_spec(&config);
        assert!(v.iter().any(|v| v.to_string().starts_with("not a tree")), "{v:?}");
    }

    #[test]
    fn second_order_dominant_is_rejected() {
        let mut config = cattle().to_config();
        config.dominant.push(DominantDef { parent: "head".into(), child: "nose".into(), beta: 1.0 });
        let v = validate_spec(&config);
        assert!(v
            .iter()
            .any(|v| v.to_string().starts_with("dominant must be first-order")));
    }

    #[test]
    fn reference_beta_and_duplicates() {
        let mut config = cattle().to_config();
        config.dominant[0].beta = 2.0;
        config.categories.push("nose".into());
        let v = validate_spec(&config);
        assert!(v.contains(&Violation::ReferenceBetaNotOne(2.0)));
        assert!(v.contains(&Violation::DuplicateCategory("nose".into())));
        assert!(SkeletonSpec::from_config(&config).is_err());
    }

    #[test]
    fn training_only_link_may_close_a_cycle() {
        let s = cattle();
        let aux = s.find_connection("right hook", "left hook").unwrap();
        assert!(s.connection(aux).training_only);
        assert!(s.tree_connections().all(|id| id != aux));
    }

    #[test]
    fn config_round_trip() {
        let s = cattle();
        let back = SkeletonSpec::from_toml(&s.to_config().to_toml()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn scale_single_connection() {
        let s = cattle();
        let p = pose(&s, &[("withers", 0.0, 0.0), ("tail implant", 10.0, 0.0)]);
        assert!((skeleton_scale(&s, &p).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn scale_three_connections() {
        let s = cattle();
        let p = pose(
            &s,
            &[
                ("withers", 0.0, 0.0),
                ("tail implant", 10.0, 0.0),
                ("left hook", 3.0, 4.0),
                ("right hook", -3.0, 4.0),
            ],
        );
        let expected = (10.0 + 1.45 * 5.0 + 1.45 * 5.0) / 3.0;
        assert!((skeleton_scale(&s, &p).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn scale_undefined_without_dominant() {
        let s = cattle();
        let p = pose(&s, &[("withers", 0.0, 0.0), ("head", 5.0, 0.0), ("nose", 9.0, 0.0)]);
        assert_eq!(skeleton_scale(&s, &p), None);
        assert!(!p.is_valid(&s));
    }

    #[test]
    fn zero_length_dominant_counts_in_denominator() {
        let s = cattle();
        let p = pose(
            &s,
            &[("withers", 1.0, 1.0), ("tail implant", 11.0, 1.0), ("left hook", 1.0, 1.0)],
        );
        assert!((skeleton_scale(&s, &p).unwrap() - 5.0).abs() < 1e-12);
    }

    fn lengths_pose(s: &SkeletonSpec, k: f64, d: f64) -> Pose {
        pose(s, &[("withers", 0.0, 0.0), ("tail implant", k, 0.0), ("left hook", 0.0, d)])
    }

    #[test]
    fn betas_from_closed_form_ols() {
        // single-hook skeleton so the symmetric averaging does not apply
        let mut config = cattle().to_config();
        config.symmetric.clear();
        config.dominant.retain(|d| d.child != "right hook");
        let s = SkeletonSpec::from_config(&config).unwrap();
        let poses = vec![
            lengths_pose(&s, 4.0, 2.0),
            lengths_pose(&s, 6.0, 3.0),
            lengths_pose(&s, 10.0, 5.0),
        ];
        let lh = s.find_connection("withers", "left hook").unwrap();
        let betas = estimate_betas(&poses, &s, s.reference()).unwrap();
        assert!((betas[&lh] - 2.0).abs() < 1e-12);
        assert_eq!(betas[&s.reference()], 1.0);

        // sum(xy)/sum(x^2) on a noisy set
        let poses = vec![lengths_pose(&s, 4.0, 2.0), lengths_pose(&s, 7.0, 3.0)];
        let betas = estimate_betas(&poses, &s, s.reference()).unwrap();
        assert!((betas[&lh] - (8.0 + 21.0) / 13.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_betas_are_averaged() {
        let s = cattle();
        let mk = |k: f64, l: f64, r: f64| {
            pose(
                &s,
                &[
                    ("withers", 0.0, 0.0),
                    ("tail implant", k, 0.0),
                    ("left hook", 0.0, l),
                    ("right hook", 0.0, -r),
                ],
            )
        };
        let poses = vec![mk(4.0, 2.0, 4.0), mk(8.0, 4.0, 8.0)];
        let betas = estimate_betas(&poses, &s, s.reference()).unwrap();
        let lh = s.find_connection("withers", "left hook").unwrap();
        let rh = s.find_connection("withers", "right hook").unwrap();
        assert!((betas[&lh] - 1.5).abs() < 1e-12);
        assert!((betas[&rh] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn betas_need_two_samples() {
        let s = cattle();
        let poses = vec![lengths_pose(&s, 4.0, 2.0)];
        let err = estimate_betas(&poses, &s, s.reference()).unwrap_err();
        assert!(err.to_string().contains("withers->left hook"), "{err}");
    }

    fn full_pose() -> impl Strategy<Value = Vec<(f64, f64)>> {
        proptest::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 6)
    }

    proptest! {
        #[test]
        fn scale_is_rigid_invariant_and_homogeneous(
            pts in full_pose(),
            angle in -3.2..3.2f64,
            tx in -100.0..100.0f64,
            ty in -100.0..100.0f64,
            c in 0.1..10.0f64,
        ) {
            let s = cattle();
            let p = Pose::from_coords(pts.iter().map(|&(x, y)| Some(Point::new(x, y))).collect());
            let base = skeleton_scale(&s, &p).unwrap();
            prop_assume!(base > 1e-6);
            let moved = p.map_points(|q| q.rotate(angle) + Point::new(tx, ty));
            let moved_scale = skeleton_scale(&s, &moved).unwrap();
            prop_assert!(((moved_scale - base) / base).abs() < 1e-9);
            let scaled = skeleton_scale(&s, &p.map_points(|q| q * c)).unwrap();
            prop_assert!(((scaled - c * base) / (c * base)).abs() < 1e-9);
        }

        #[test]
        fn betas_recover_exact_linear_relation(
            lengths in proptest::collection::vec(1.0..100.0f64, 2..20),
            beta in 0.2..5.0f64,
        ) {
            let mut config = cattle().to_config();
            config.symmetric.clear();
            let s = SkeletonSpec::from_config(&config).unwrap();
            let poses: Vec<Pose> = lengths.iter().map(|&d| pose(&s, &[
                ("withers", 0.0, 0.0),
                ("tail implant", beta * d, 0.0),
                ("left hook", 0.0, d),
                ("right hook", 0.0, -d),
            ])).collect();
            let betas = estimate_betas(&poses, &s, s.reference()).unwrap();
            for (_, b) in betas.iter().filter(|(id, _)| **id != s.reference()) {
                prop_assert!((b - beta).abs() < 1e-9 * beta);
            }
        }
    }
}
