//! Keypoint probability maps and keypoint association maps.
//!
//! Encoding turns annotated poses into the targets a detector is trained on;
//! decoding turns (predicted) probability maps back into candidate
//! keypoints. Grids are stored row-major as `(row = y, col = x)` while every
//! public function takes image coordinates `(x, y)`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::skeleton::{skeleton_scale, ConnectionId, Pose, SkeletonSpec};

pub type Grid = Array2<f32>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderParams {
    /// Kernel width as a fraction of the skeleton scale.
    pub theta: f64,
    /// Unit-peak kernel value below which association weights are cut to 0.
    pub gamma: f64,
    /// Half-width of the kernel support, in multiples of sigma.
    pub kernel_extent: f64,
}

impl Default for EncoderParams {
    fn default() -> Self {
        EncoderParams { theta: 0.2, gamma: 0.2, kernel_extent: 3.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeParams {
    pub threshold: f64,
    pub nms_radius: f64,
    /// Side of the square averaging kernel applied before peak search.
    pub smooth: usize,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams { threshold: 0.4, nms_radius: 7.0, smooth: 5 }
    }
}

/// The four offset channels of one connection `a -> b`.
#[derive(Clone, Debug, PartialEq)]
pub struct AssocMaps {
    pub ab_x: Grid,
    pub ab_y: Grid,
    pub ba_x: Grid,
    pub ba_y: Grid,
}

impl AssocMaps {
    pub fn zeros(width: usize, height: usize) -> Self {
        let z = Grid::zeros((height, width));
        AssocMaps { ab_x: z.clone(), ab_y: z.clone(), ba_x: z.clone(), ba_y: z }
    }

    pub fn channels(&self) -> [&Grid; 4] {
        [&self.ab_x, &self.ab_y, &self.ba_x, &self.ba_y]
    }

    pub fn channels_mut(&mut self) -> [&mut Grid; 4] {
        [&mut self.ab_x, &mut self.ab_y, &mut self.ba_x, &mut self.ba_y]
    }
}

pub const ASSOC_CHANNEL_SUFFIXES: [&str; 4] = ["ab_x", "ab_y", "ba_x", "ba_y"];

/// Probability maps (one per category) and association maps (four per
/// connection, training-only connections included) of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MapStack {
    pub width: usize,
    pub height: usize,
    pub prob: Vec<Grid>,
    pub assoc: Vec<AssocMaps>,
}

impl MapStack {
    pub fn zeros(spec: &SkeletonSpec, width: usize, height: usize) -> Self {
        MapStack {
            width,
            height,
            prob: vec![Grid::zeros((height, width)); spec.len()],
            assoc: vec![AssocMaps::zeros(width, height); spec.connections().len()],
        }
    }

    /// Channel names in storage order: probability maps, then four
    /// association channels per connection.
    pub fn channel_names(spec: &SkeletonSpec) -> Vec<String> {
        let mut names: Vec<String> = spec.categories().iter().map(|c| format!("prob:{c}")).collect();
        for i in 0..spec.connections().len() {
            let conn = spec.connection_name(ConnectionId(i));
            for s in ASSOC_CHANNEL_SUFFIXES {
                names.push(format!("assoc:{conn}:{s}"));
            }
        }
        names
    }

    pub fn channels(&self) -> impl Iterator<Item = &Grid> {
        self.prob.iter().chain(self.assoc.iter().flat_map(|a| a.channels()))
    }

    /// Rebuilds a stack from channels laid out as in [`MapStack::channel_names`].
    pub fn from_channels(spec: &SkeletonSpec, width: usize, height: usize, mut channels: Vec<Grid>) -> Result<Self> {
        let expected = spec.len() + 4 * spec.connections().len();
        if channels.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "expected {expected} channels for skeleton `{}`, got {}",
                spec.name(),
                channels.len()
            )));
        }
        if let Some(bad) = channels.iter().find(|g| g.dim() != (height, width)) {
            return Err(Error::ShapeMismatch(format!(
                "channel of shape {:?} in a {width}x{height} stack",
                bad.dim()
            )));
        }
        let rest = channels.split_off(spec.len());
        let assoc = rest
            .chunks(4)
            .map(|c| AssocMaps {
                ab_x: c[0].clone(),
                ab_y: c[1].clone(),
                ba_x: c[2].clone(),
                ba_y: c[3].clone(),
            })
            .collect();
        Ok(MapStack { width, height, prob: channels, assoc })
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }
}

/// Kernel standard deviation of an animal: θ·(s_n + s̄)/2.
pub fn kernel_sigma(pose_scale: f64, mean_scale: f64, theta: f64) -> Result<f64> {
    for s in [pose_scale, mean_scale] {
        if !(s > 0.0) {
            return Err(Error::NonPositiveScale(s));
        }
    }
    Ok(theta * (pose_scale + mean_scale) / 2.0)
}

/// Per-pose kernel sigmas; fails on poses without a skeleton scale.
pub fn pose_sigmas(poses: &[Pose], spec: &SkeletonSpec, params: &EncoderParams) -> Result<Vec<f64>> {
    let scales = poses
        .iter()
        .enumerate()
        .map(|(i, p)| match skeleton_scale(spec, p) {
            Some(s) if s > 0.0 => Ok(s),
            _ => Err(Error::InvalidPose(i)),
        })
        .collect::<Result<Vec<_>>>()?;
    if scales.is_empty() {
        return Ok(Vec::new());
    }
    let mean = scales.iter().sum::<f64>() / scales.len() as f64;
    scales.iter().map(|&s| kernel_sigma(s, mean, params.theta)).collect()
}

fn in_image(p: Point, width: usize, height: usize) -> bool {
    p.is_finite() && p.x >= 0.0 && p.y >= 0.0 && p.x <= (width - 1) as f64 && p.y <= (height - 1) as f64
}

/// Unit-peak Gaussian kernel restricted to a square support.
struct Kernel {
    center: Point,
    sigma: f64,
    cols: std::ops::RangeInclusive<usize>,
    rows: std::ops::RangeInclusive<usize>,
}

impl Kernel {
    fn new(center: Point, sigma: f64, extent: f64, width: usize, height: usize) -> Option<Self> {
        let r = extent * sigma;
        let span = |c: f64, n: usize| {
            let lo = (c - r).ceil().max(0.0);
            let hi = (c + r).floor().min((n - 1) as f64);
            (lo <= hi).then_some(lo as usize..=hi as usize)
        };
        Some(Kernel {
            center,
            sigma,
            cols: span(center.x, width)?,
            rows: span(center.y, height)?,
        })
    }

    fn value(&self, row: usize, col: usize) -> f64 {
        let dx = col as f64 - self.center.x;
        let dy = row as f64 - self.center.y;
        (-(dx * dx + dy * dy) / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// Encodes keypoints as max-merged unit-peak Gaussian kernels, one map per
/// category. Keypoints outside the image are skipped with a warning.
pub fn encode_prob_maps(
    poses: &[Pose],
    spec: &SkeletonSpec,
    params: &EncoderParams,
    width: usize,
    height: usize,
) -> Result<Vec<Grid>> {
    let sigmas = pose_sigmas(poses, spec, params)?;
    let mut maps = vec![Grid::zeros((height, width)); spec.len()];
    for (n, (pose, &sigma)) in poses.iter().zip(&sigmas).enumerate() {
        for (cat, p) in pose.present() {
            if !in_image(p, width, height) {
                log::warn!(
                    "pose {n}: `{}` at ({:.1}, {:.1}) is outside the {width}x{height} image, skipped",
                    spec.categories()[cat],
                    p.x,
                    p.y
                );
                continue;
            }
            let Some(k) = Kernel::new(p, sigma, params.kernel_extent, width, height) else {
                continue;
            };
            let map = &mut maps[cat];
            for row in k.rows.clone() {
                for col in k.cols.clone() {
                    let v = k.value(row, col) as f32;
                    let cell = &mut map[(row, col)];
                    if v > *cell {
                        *cell = v;
                    }
                }
            }
        }
    }
    Ok(maps)
}

/// Encodes the four offset channels of every connection.
///
/// Around each source keypoint the offset to its partner is written as the
/// kernel-weighted mean over all animals, with weights below `gamma` cut to
/// zero. Cells with no weight stay 0.
pub fn encode_assoc_maps(
    poses: &[Pose],
    spec: &SkeletonSpec,
    params: &EncoderParams,
    width: usize,
    height: usize,
) -> Result<Vec<AssocMaps>> {
    let sigmas = pose_sigmas(poses, spec, params)?;
    let mut out = Vec::with_capacity(spec.connections().len());
    for conn in spec.connections() {
        let mut num = [
            Array2::<f64>::zeros((height, width)),
            Array2::<f64>::zeros((height, width)),
            Array2::<f64>::zeros((height, width)),
            Array2::<f64>::zeros((height, width)),
        ];
        let mut den_a = Array2::<f64>::zeros((height, width));
        let mut den_b = Array2::<f64>::zeros((height, width));
        for (pose, &sigma) in poses.iter().zip(&sigmas) {
            let (Some(a), Some(b)) = (pose.get(conn.parent), pose.get(conn.child)) else {
                continue;
            };
            if !in_image(a, width, height) || !in_image(b, width, height) {
                continue;
            }
            let d = b - a;
            for (src, off, (nx, ny), den) in [
                (a, d, (0, 1), &mut den_a),
                (b, d * -1.0, (2, 3), &mut den_b),
            ] {
                let Some(k) = Kernel::new(src, sigma, params.kernel_extent, width, height) else {
                    continue;
                };
                for row in k.rows.clone() {
                    for col in k.cols.clone() {
                        let w = k.value(row, col);
                        if w > params.gamma {
                            num[nx][(row, col)] += w * off.x;
                            num[ny][(row, col)] += w * off.y;
                            den[(row, col)] += w;
                        }
                    }
                }
            }
        }
        let ratio = |n: &Array2<f64>, d: &Array2<f64>| -> Grid {
            Grid::from_shape_fn((height, width), |ix| {
                if d[ix] > 0.0 {
                    (n[ix] / d[ix]) as f32
                } else {
                    0.0
                }
            })
        };
        out.push(AssocMaps {
            ab_x: ratio(&num[0], &den_a),
            ab_y: ratio(&num[1], &den_a),
            ba_x: ratio(&num[2], &den_b),
            ba_y: ratio(&num[3], &den_b),
        });
    }
    Ok(out)
}

/// Encodes a full [`MapStack`] for one frame.
pub fn encode(
    poses: &[Pose],
    spec: &SkeletonSpec,
    params: &EncoderParams,
    width: usize,
    height: usize,
) -> Result<MapStack> {
    Ok(MapStack {
        width,
        height,
        prob: encode_prob_maps(poses, spec, params, width, height)?,
        assoc: encode_assoc_maps(poses, spec, params, width, height)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateKeypoint {
    pub category: usize,
    pub position: Point,
    pub score: f64,
}

/// Square mean filter with edge-replicated padding.
pub fn smooth_box(grid: &Grid, size: usize) -> Array2<f64> {
    let (h, w) = grid.dim();
    let r = (size / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut horiz = Array2::<f64>::zeros((h, w));
    for row in 0..h {
        for col in 0..w {
            let mut s = 0.0;
            for d in -r..=r {
                s += grid[(row, clamp(col as isize + d, w))] as f64;
            }
            horiz[(row, col)] = s;
        }
    }
    let norm = ((2 * r + 1) * (2 * r + 1)) as f64;
    let mut out = Array2::<f64>::zeros((h, w));
    for row in 0..h {
        for col in 0..w {
            let mut s = 0.0;
            for d in -r..=r {
                s += horiz[(clamp(row as isize + d, h), col)];
            }
            out[(row, col)] = s / norm;
        }
    }
    out
}

/// Vertex offset of the parabola through `(-1, left)`, `(0, center)`,
/// `(1, right)`, clamped to ±0.5.
pub fn parabola_offset(left: f64, center: f64, right: f64) -> f64 {
    let curvature = 2.0 * center - left - right;
    if curvature <= 0.0 {
        return 0.0;
    }
    ((right - left) / (2.0 * curvature)).clamp(-0.5, 0.5)
}

fn peaks(smoothed: &Array2<f64>, threshold: f64) -> Vec<(usize, usize, f64)> {
    let (h, w) = smoothed.dim();
    let mut out = Vec::new();
    for row in 0..h {
        for col in 0..w {
            let v = smoothed[(row, col)];
            if v <= threshold {
                continue;
            }
            let mut is_max = true;
            'n: for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (r, c) = (row as isize + dr, col as isize + dc);
                    if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                        continue;
                    }
                    if smoothed[(r as usize, c as usize)] >= v {
                        is_max = false;
                        break 'n;
                    }
                }
            }
            if is_max {
                out.push((row, col, v));
            }
        }
    }
    out
}

/// Finds candidate keypoints on every probability map.
///
/// Each map is smoothed, strict local maxima above the threshold are kept,
/// maxima closer than `nms_radius` to a stronger one are dropped (ties go to
/// the lower row, then the lower column) and survivors are refined to
/// sub-pixel precision with independent parabola fits along x and y.
/// Output is ordered by category, then by descending score.
pub fn decode_candidates(prob_maps: &[Grid], params: &DecodeParams) -> Vec<CandidateKeypoint> {
    let mut out = Vec::new();
    for (category, map) in prob_maps.iter().enumerate() {
        let smoothed = smooth_box(map, params.smooth);
        let (h, w) = smoothed.dim();
        let mut found = peaks(&smoothed, params.threshold);
        found.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        let mut kept: Vec<(usize, usize, f64)> = Vec::new();
        for p in found {
            let close = kept.iter().any(|k| {
                let dr = k.0 as f64 - p.0 as f64;
                let dc = k.1 as f64 - p.1 as f64;
                dr.hypot(dc) < params.nms_radius
            });
            if !close {
                kept.push(p);
            }
        }
        for (row, col, score) in kept {
            let dx = if col > 0 && col + 1 < w {
                parabola_offset(smoothed[(row, col - 1)], score, smoothed[(row, col + 1)])
            } else {
                0.0
            };
            let dy = if row > 0 && row + 1 < h {
                parabola_offset(smoothed[(row - 1, col)], score, smoothed[(row + 1, col)])
            } else {
                0.0
            };
            out.push(CandidateKeypoint {
                category,
                position: Point::new(col as f64 + dx, row as f64 + dy),
                score: score.clamp(0.0, 1.0),
            });
        }
    }
    out
}

/// Groups candidates by category.
pub fn candidates_by_category(candidates: &[CandidateKeypoint], categories: usize) -> Vec<Vec<CandidateKeypoint>> {
    let mut out = vec![Vec::new(); categories];
    for c in candidates {
        if c.category < categories {
            out[c.category].push(*c);
        }
    }
    out
}

/// Three-point Lagrange weights around node 0 for an offset `t`.
fn quadratic_weights(t: f64) -> [f64; 3] {
    [t * (t - 1.0) / 2.0, 1.0 - t * t, t * (t + 1.0) / 2.0]
}

/// Stencil start and weights along one axis of length `n`.
fn stencil(v: f64, n: usize) -> (usize, Vec<f64>) {
    match n {
        1 => (0, vec![1.0]),
        2 => (0, vec![1.0 - v, v]),
        _ => {
            let center = (v.round() as usize).clamp(1, n - 2);
            let w = quadratic_weights(v - center as f64);
            (center - 1, w.to_vec())
        }
    }
}

/// Reads a grid at a sub-pixel image position with separable quadratic
/// interpolation. Exact at grid nodes and for affine fields.
pub fn read_assoc(grid: &Grid, position: Point) -> Result<f64> {
    let (h, w) = grid.dim();
    let Point { x, y } = position;
    if w == 0 || h == 0 || !position.is_finite() || x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
        return Err(Error::OutOfBounds { x, y, width: w, height: h });
    }
    // image (x, y) -> grid (row, col)
    let (r0, wr) = stencil(y, h);
    let (c0, wc) = stencil(x, w);
    let mut acc = 0.0;
    for (i, a) in wr.iter().enumerate() {
        for (j, b) in wc.iter().enumerate() {
            acc += a * b * grid[(r0 + i, c0 + j)] as f64;
        }
    }
    Ok(acc)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Loss {
    pub total: f64,
    pub location: f64,
    pub association: f64,
}

pub const DEFAULT_LOSS_GAMMA: f64 = 512.0;

/// Training loss evaluated on given map stacks: an intercept, the mean
/// squared probability-map error and the squared association error (scaled
/// by `gamma`) over cells where the target is nonzero.
pub fn loss_eval(pred: &MapStack, truth: &MapStack, thetas: [f64; 3], gamma: f64) -> Result<Loss> {
    if pred.width != truth.width
        || pred.height != truth.height
        || pred.prob.len() != truth.prob.len()
        || pred.assoc.len() != truth.assoc.len()
    {
        return Err(Error::ShapeMismatch("prediction and target stacks differ".into()));
    }
    let mut sq = 0.0;
    let mut cells = 0usize;
    for (p, t) in pred.prob.iter().zip(&truth.prob) {
        for (a, b) in p.iter().zip(t.iter()) {
            let d = *a as f64 - *b as f64;
            sq += d * d;
        }
        cells += t.len();
    }
    let location = if cells > 0 { sq / cells as f64 } else { 0.0 };

    let mut sq = 0.0;
    let mut nonzero = 0usize;
    for (p, t) in pred.assoc.iter().zip(&truth.assoc) {
        for (pc, tc) in p.channels().into_iter().zip(t.channels()) {
            for (a, b) in pc.iter().zip(tc.iter()) {
                if *b != 0.0 {
                    let d = (*a as f64 - *b as f64) / gamma;
                    sq += d * d;
                    nonzero += 1;
                }
            }
        }
    }
    let association = if nonzero > 0 { sq / nonzero as f64 } else { 0.0 };
    Ok(Loss {
        total: thetas[0] + thetas[1] * location + thetas[2] * association,
        location,
        association,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec() -> SkeletonSpec {
        SkeletonSpec::cattle()
    }

    /// Withers at `w`, tail 10 px to the right, nothing else.
    fn two_point_pose(s: &SkeletonSpec, w: Point, t: Point) -> Pose {
        let mut p = Pose::empty(s.len(), 0);
        p.coords[s.root()] = Some(w);
        p.coords[s.category_index("tail implant").unwrap()] = Some(t);
        p
    }

    #[test]
    fn sigma_examples() {
        // theta * s when the animal has the mean scale
        assert!((kernel_sigma(10.0, 10.0, 0.2).unwrap() - 2.0).abs() < 1e-12);
        assert!((kernel_sigma(8.0, 12.0, 0.2).unwrap() - 2.0).abs() < 1e-12);
        assert!((kernel_sigma(10.0, 10.0, 0.15).unwrap() - 1.5).abs() < 1e-12);
        assert!(kernel_sigma(0.0, 10.0, 0.2).is_err());
        assert!(kernel_sigma(10.0, -1.0, 0.2).is_err());
    }

    #[test]
    fn prob_map_peak_and_one_sigma() {
        let s = spec();
        // scale 10 => sigma = 2
        let p = two_point_pose(&s, Point::new(50.0, 50.0), Point::new(60.0, 50.0));
        let maps = encode_prob_maps(&[p], &s, &EncoderParams::default(), 100, 100).unwrap();
        let w = &maps[s.root()];
        assert_eq!(w[(50, 50)], 1.0);
        assert!((w[(50, 52)] as f64 - (-0.5f64).exp()).abs() < 1e-6);
        assert!((w[(52, 50)] as f64 - (-0.5f64).exp()).abs() < 1e-6);
        // outside the 3 sigma support
        assert_eq!(w[(50, 57)], 0.0);
        assert_eq!(w[(10, 10)], 0.0);
    }

    #[test]
    fn duplicate_keypoints_are_idempotent() {
        let s = spec();
        let p = two_point_pose(&s, Point::new(30.0, 30.0), Point::new(40.0, 30.0));
        let one = encode_prob_maps(std::slice::from_ref(&p), &s, &EncoderParams::default(), 64, 64).unwrap();
        let two = encode_prob_maps(&[p.clone(), p], &s, &EncoderParams::default(), 64, 64).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn off_image_keypoint_is_skipped() {
        let s = spec();
        let p = two_point_pose(&s, Point::new(30.0, 30.0), Point::new(70.0, 30.0));
        let maps = encode_prob_maps(&[p], &s, &EncoderParams::default(), 64, 64).unwrap();
        let tail = s.category_index("tail implant").unwrap();
        assert!(maps[tail].iter().all(|v| *v == 0.0));
        assert_eq!(maps[s.root()][(30, 30)], 1.0);
    }

    #[test]
    fn invalid_pose_is_an_error() {
        let s = spec();
        let mut p = Pose::empty(s.len(), 0);
        p.coords[0] = Some(Point::new(3.0, 3.0));
        assert!(matches!(
            encode_prob_maps(&[p], &s, &EncoderParams::default(), 16, 16),
            Err(Error::InvalidPose(0))
        ));
    }

    #[test]
    fn assoc_single_animal_offsets() {
        let s = spec();
        let a = Point::new(5.0, 5.0);
        let b = Point::new(8.0, 9.0);
        let p = two_point_pose(&s, a, b);
        let maps = encode_assoc_maps(&[p], &s, &EncoderParams::default(), 32, 32).unwrap();
        let wt = &maps[s.reference().0];
        assert_eq!(wt.ab_x[(5, 5)], 3.0);
        assert_eq!(wt.ab_y[(5, 5)], 4.0);
        assert_eq!(wt.ba_x[(9, 8)], -3.0);
        assert_eq!(wt.ba_y[(9, 8)], -4.0);
        // far from the source keypoint
        assert_eq!(wt.ab_x[(30, 30)], 0.0);
        // other connections untouched
        let head = s.find_connection("withers", "head").unwrap();
        assert!(maps[head.0].ab_x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn assoc_weighted_mean_of_colocated_sources() {
        let s = spec();
        let a = Point::new(10.0, 10.0);
        let p1 = two_point_pose(&s, a, a + Point::new(3.0, 0.0));
        let p2 = two_point_pose(&s, a, a + Point::new(5.0, 0.0));
        let maps = encode_assoc_maps(&[p1, p2], &s, &EncoderParams::default(), 32, 32).unwrap();
        assert!((maps[s.reference().0].ab_x[(10, 10)] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn assoc_neighbourhood_follows_gamma_cutoff() {
        let s = spec();
        // scale 20 => sigma 4; cutoff radius sigma*sqrt(2 ln 5) ~ 7.18
        let p = two_point_pose(&s, Point::new(30.0, 30.0), Point::new(50.0, 30.0));
        let maps = encode_assoc_maps(&[p], &s, &EncoderParams::default(), 64, 64).unwrap();
        let ab_x = &maps[s.reference().0].ab_x;
        assert_eq!(ab_x[(30, 37)], 20.0);
        assert_eq!(ab_x[(30, 38)], 0.0);
    }

    #[test]
    fn parabola_examples() {
        assert_eq!(parabola_offset(0.5, 1.0, 0.5), 0.0);
        assert!((parabola_offset(0.4, 1.0, 0.6) - 0.1).abs() < 1e-12);
        assert!((parabola_offset(0.6, 1.0, 0.4) + 0.1).abs() < 1e-12);
        assert_eq!(parabola_offset(0.0, 1.0, 1.0), 0.5);
    }

    #[test]
    fn decode_single_integer_keypoint() {
        let s = spec();
        let p = two_point_pose(&s, Point::new(40.0, 30.0), Point::new(40.0, 60.0));
        let maps = encode_prob_maps(&[p], &s, &EncoderParams::default(), 80, 80).unwrap();
        let c = decode_candidates(&maps, &DecodeParams::default());
        let roots: Vec<_> = c.iter().filter(|c| c.category == s.root()).collect();
        assert_eq!(roots.len(), 1);
        assert!(roots[0].position.distance(Point::new(40.0, 30.0)) < 0.51);
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn decode_empty_and_faint_maps() {
        let g = Grid::zeros((20, 20));
        assert!(decode_candidates(std::slice::from_ref(&g), &DecodeParams::default()).is_empty());
        let faint = Grid::from_elem((20, 20), 0.3);
        assert!(decode_candidates(&[faint], &DecodeParams::default()).is_empty());
    }

    #[test]
    fn nms_keeps_stronger_peak_and_breaks_ties_by_row() {
        let mut g = Grid::zeros((40, 40));
        g[(10, 10)] = 25.0;
        g[(10, 15)] = 25.0;
        g[(30, 30)] = 20.0;
        let params = DecodeParams { smooth: 1, ..Default::default() };
        let c = decode_candidates(&[g], &params);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].position, Point::new(10.0, 10.0));
        assert_eq!(c[1].position, Point::new(30.0, 30.0));
    }

    #[test]
    fn border_maximum_is_detected() {
        let mut g = Grid::zeros((20, 20));
        g[(0, 0)] = 1.0;
        g[(0, 1)] = 1.0;
        g[(1, 0)] = 1.0;
        g[(1, 1)] = 1.0;
        let c = decode_candidates(&[g], &DecodeParams { threshold: 0.1, ..Default::default() });
        assert_eq!(c.len(), 1);
        assert!(c[0].position.x < 1.0 && c[0].position.y < 1.0);
    }

    #[test]
    fn decode_is_deterministic() {
        let s = spec();
        let poses = vec![
            two_point_pose(&s, Point::new(20.3, 20.7), Point::new(20.0, 45.2)),
            two_point_pose(&s, Point::new(60.1, 25.0), Point::new(61.0, 50.0)),
        ];
        let maps = encode_prob_maps(&poses, &s, &EncoderParams::default(), 90, 70).unwrap();
        let a = decode_candidates(&maps, &DecodeParams::default());
        let b = decode_candidates(&maps, &DecodeParams::default());
        assert_eq!(a, b);
    }

    #[test]
    fn read_assoc_examples() {
        let constant = Grid::from_elem((10, 12), 3.0);
        assert!((read_assoc(&constant, Point::new(4.3, 7.9)).unwrap() - 3.0).abs() < 1e-12);

        let g = Grid::from_shape_fn((10, 12), |(r, c)| (r * 100 + c) as f32);
        assert_eq!(read_assoc(&g, Point::new(5.0, 7.0)).unwrap(), 705.0);
        // boundary node uses a shifted stencil but is still exact
        assert_eq!(read_assoc(&g, Point::new(0.0, 9.0)).unwrap(), 900.0);

        let ramp = Grid::from_shape_fn((10, 12), |(_, c)| c as f32);
        assert!((read_assoc(&ramp, Point::new(4.5, 3.2)).unwrap() - 4.5).abs() < 1e-12);

        assert!(read_assoc(&g, Point::new(-0.1, 2.0)).is_err());
        assert!(read_assoc(&g, Point::new(2.0, 9.5)).is_err());
    }

    #[test]
    fn loss_examples() {
        let s = spec();
        let p = two_point_pose(&s, Point::new(10.0, 10.0), Point::new(20.0, 10.0));
        let truth = encode(&[p], &s, &EncoderParams::default(), 32, 32).unwrap();

        let l = loss_eval(&truth, &truth, [0.5, 1.0, 1.0], DEFAULT_LOSS_GAMMA).unwrap();
        assert_eq!((l.total, l.location, l.association), (0.5, 0.0, 0.0));

        let mut shifted = truth.clone();
        for g in shifted.prob.iter_mut() {
            g.mapv_inplace(|v| v + 0.1);
        }
        let l = loss_eval(&shifted, &truth, [0.0, 1.0, 1.0], DEFAULT_LOSS_GAMMA).unwrap();
        assert!((l.location - 0.01).abs() < 1e-7);
        assert_eq!(l.association, 0.0);
        assert!((l.total - 0.01).abs() < 1e-7);

        let mut truth1 = MapStack::zeros(&s, 8, 8);
        truth1.assoc[0].ab_x[(3, 3)] = 2.0;
        let mut pred1 = truth1.clone();
        pred1.assoc[0].ab_x[(3, 3)] = 514.0;
        // nonzero prediction where the target is zero does not count
        pred1.assoc[1].ab_y[(1, 1)] = 100.0;
        let l = loss_eval(&pred1, &truth1, [0.0, 1.0, 1.0], DEFAULT_LOSS_GAMMA).unwrap();
        assert!((l.association - 1.0).abs() < 1e-12);

        let zeros = MapStack::zeros(&s, 8, 8);
        let l = loss_eval(&zeros, &zeros, [0.0, 1.0, 1.0], DEFAULT_LOSS_GAMMA).unwrap();
        assert_eq!(l.association, 0.0);

        let other = MapStack::zeros(&s, 9, 8);
        assert!(loss_eval(&zeros, &other, [0.0, 1.0, 1.0], DEFAULT_LOSS_GAMMA).is_err());
    }

    proptest! {
        #[test]
        fn prob_maps_stay_in_unit_interval(
            pts in proptest::collection::vec((5.0..55.0f64, 5.0..55.0f64, 5.0..30.0f64), 1..4)
        ) {
            let s = spec();
            let poses: Vec<Pose> = pts
                .iter()
                .map(|&(x, y, l)| two_point_pose(&s, Point::new(x, y), Point::new(x + l, y)))
                .collect();
            let maps = encode_prob_maps(&poses, &s, &EncoderParams::default(), 64, 64).unwrap();
            for m in &maps {
                prop_assert!(m.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn quadratic_read_reproduces_affine_fields(
            a in -5.0..5.0f64, b in -5.0..5.0f64, c in -20.0..20.0f64,
            x in 0.0..15.0f64, y in 0.0..11.0f64,
        ) {
            let g = Grid::from_shape_fn((12, 16), |(r, col)| (a * col as f64 + b * r as f64 + c) as f32);
            let v = read_assoc(&g, Point::new(x, y)).unwrap();
            prop_assert!((v - (a * x + b * y + c)).abs() < 1e-4);
        }

        #[test]
        fn isolated_animal_offsets_reach_partner(
            x in 15.0..45.0f64, y in 15.0..45.0f64,
            dx in -12.0..12.0f64, dy in 8.0..14.0f64,
        ) {
            let s = spec();
            let a = Point::new(x, y);
            let b = a + Point::new(dx, dy);
            let p = two_point_pose(&s, a, b);
            let maps = encode_assoc_maps(&[p], &s, &EncoderParams::default(), 64, 64).unwrap();
            let m = &maps[s.reference().0];
            let pred = a + Point::new(read_assoc(&m.ab_x, a).unwrap(), read_assoc(&m.ab_y, a).unwrap());
            prop_assert!(pred.distance(b) < 0.5);
        }
    }
}
