//! Deterministic synthetic scenes.
//!
//! Animals are a fixed template pose (rotated, scaled and slightly jittered)
//! carried by a root that moves with piecewise constant velocity. Detections
//! are produced from the truth by independent per-keypoint dropout and
//! Gaussian noise. All randomness comes from ChaCha streams derived from the
//! scenario seed, so equal seeds give bit-identical output on every platform.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::assignment::CostMatrix;
use crate::assembly::association_penalty;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::io::FrameDetections;
use crate::kalman::{self, FilterModel, FilterState, Mitigation, ObservationMask, DEFAULT_SIGN_WINDOW};
use crate::map_codec::{encode, MapStack};
use crate::skeleton::{ConnectionId, Pose, SkeletonSpec};

/// Dorsal-view cattle template, facing +x, in pixels relative to the withers.
pub fn cattle_template() -> BTreeMap<String, [f64; 2]> {
    [
        ("withers", [0.0, 0.0]),
        ("tail implant", [-40.0, 0.0]),
        ("head", [18.0, -2.0]),
        ("nose", [30.0, 2.0]),
        ("left hook", [-30.0, -9.0]),
        ("right hook", [-30.0, 9.0]),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Stationary,
    Walking,
    AbruptTurn,
}

/// Motion from `from_frame` until the next segment starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub from_frame: usize,
    pub regime: Regime,
    /// Root displacement per frame; ignored while stationary.
    #[serde(default)]
    pub velocity: [f64; 2],
    /// Standard deviation of the per-frame root perturbation.
    #[serde(default)]
    pub process_noise: f64,
}

impl Segment {
    pub fn stationary(from_frame: usize) -> Self {
        Segment { from_frame, regime: Regime::Stationary, velocity: [0.0; 2], process_noise: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub frames: usize,
    pub arena: [f64; 2],
    pub n_animals: usize,
    /// Keypoint offsets from the root, keyed by category name.
    pub template: BTreeMap<String, [f64; 2]>,
    pub scale_range: [f64; 2],
    pub random_heading: bool,
    /// Minimum initial distance between same-category keypoints of two animals.
    pub min_separation: f64,
    /// Minimum initial distance of every keypoint from the arena border.
    pub margin: f64,
    /// Stationary standard deviation of the slowly varying offset jitter.
    pub offset_jitter: f64,
    pub schedule: Vec<Segment>,
    /// Per-animal schedules; animals beyond this list use `schedule`.
    pub animal_schedules: Vec<Vec<Segment>>,
    pub detection_sigma: f64,
    pub detection_sigma_per_category: BTreeMap<String, f64>,
    pub dropout: f64,
    pub dropout_per_category: BTreeMap<String, f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 0,
            frames: 100,
            arena: [640.0, 480.0],
            n_animals: 2,
            template: cattle_template(),
            scale_range: [1.0, 1.0],
            random_heading: false,
            min_separation: 60.0,
            margin: 20.0,
            offset_jitter: 0.0,
            schedule: vec![Segment::stationary(0)],
            animal_schedules: Vec::new(),
            detection_sigma: 0.0,
            detection_sigma_per_category: BTreeMap::new(),
            dropout: 0.0,
            dropout_per_category: BTreeMap::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self, spec: &SkeletonSpec) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.arena[0] > 0.0 && self.arena[1] > 0.0) {
            return bad(format!("arena must be positive, got {:?}", self.arena));
        }
        if !(self.scale_range[0] > 0.0 && self.scale_range[0] <= self.scale_range[1]) {
            return bad(format!("invalid scale range {:?}", self.scale_range));
        }
        for name in spec.categories() {
            if !self.template.contains_key(name) {
                return bad(format!("template has no offset for `{name}`"));
            }
        }
        for (what, map) in [("detection_sigma_per_category", &self.detection_sigma_per_category), ("dropout_per_category", &self.dropout_per_category)] {
            for name in map.keys() {
                spec.category_index(name).map_err(|_| Error::Config(format!("{what}: unknown category `{name}`")))?;
            }
        }
        let sigmas = std::iter::once(self.detection_sigma).chain(self.detection_sigma_per_category.values().copied());
        for s in sigmas.chain([self.offset_jitter]) {
            if !(s >= 0.0) || !s.is_finite() {
                return bad(format!("noise levels must be finite and non-negative, got {s}"));
            }
        }
        for p in std::iter::once(self.dropout).chain(self.dropout_per_category.values().copied()) {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("dropout probability {p} outside [0, 1]"));
            }
        }
        for sched in std::iter::once(&self.schedule).chain(&self.animal_schedules) {
            if sched.first().map(|s| s.from_frame) != Some(0) {
                return bad("every schedule must start at frame 0".into());
            }
            if sched.windows(2).any(|w| w[0].from_frame >= w[1].from_frame) {
                return bad("schedule segments must have increasing start frames".into());
            }
            if sched.iter().any(|s| !(s.process_noise >= 0.0) || !s.velocity.iter().all(|v| v.is_finite())) {
                return bad("segment velocities must be finite and noise non-negative".into());
            }
        }
        Ok(())
    }

    fn schedule_of(&self, animal: usize) -> &[Segment] {
        self.animal_schedules.get(animal).unwrap_or(&self.schedule)
    }

    fn per_category(&self, spec: &SkeletonSpec, default: f64, map: &BTreeMap<String, f64>) -> Vec<f64> {
        spec.categories().iter().map(|c| map.get(c).copied().unwrap_or(default)).collect()
    }

    pub fn sigmas(&self, spec: &SkeletonSpec) -> Vec<f64> {
        self.per_category(spec, self.detection_sigma, &self.detection_sigma_per_category)
    }

    pub fn dropouts(&self, spec: &SkeletonSpec) -> Vec<f64> {
        self.per_category(spec, self.dropout, &self.dropout_per_category)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthAnimal {
    pub id: usize,
    pub pose: Pose,
    pub regime: Regime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFrame {
    pub frame_index: usize,
    pub animals: Vec<TruthAnimal>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSequence {
    pub frames: Vec<TruthFrame>,
}

impl GroundTruthSequence {
    pub fn poses(&self, frame: usize) -> Vec<Pose> {
        self.frames[frame].animals.iter().map(|a| a.pose.clone()).collect()
    }
}

/// An animal's body: template offsets after rotation and scaling.
#[derive(Clone, Debug)]
pub struct Body {
    pub offsets: Vec<Point>,
}

impl Body {
    pub fn new(spec: &SkeletonSpec, template: &BTreeMap<String, [f64; 2]>, scale: f64, heading: f64) -> Result<Self> {
        let offsets = spec
            .categories()
            .iter()
            .map(|c| {
                let [x, y] = *template.get(c).ok_or_else(|| Error::Config(format!("template has no offset for `{c}`")))?;
                Ok(Point::new(x, y).rotate(heading) * scale)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Body { offsets })
    }

    pub fn pose_at(&self, root: Point, frame_index: usize) -> Pose {
        Pose { coords: self.offsets.iter().map(|&o| Some(root + o)).collect(), frame_index }
    }
}

fn separated(a: &Pose, b: &Pose, min: f64) -> bool {
    a.coords.iter().zip(&b.coords).all(|(p, q)| match (p, q) {
        (Some(p), Some(q)) => p.distance(*q) > min,
        _ => true,
    })
}

fn inside(p: &Pose, width: f64, height: f64, margin: f64) -> bool {
    p.present().all(|(_, q)| q.x >= margin && q.y >= margin && q.x <= width - 1.0 - margin && q.y <= height - 1.0 - margin)
}

/// Placement constraints for [`place_animals`].
#[derive(Clone, Debug)]
pub struct Placement<'a> {
    pub template: &'a BTreeMap<String, [f64; 2]>,
    pub arena: [f64; 2],
    pub scale_range: [f64; 2],
    pub random_heading: bool,
    pub min_separation: f64,
    pub margin: f64,
}

const MAX_PLACEMENT_TRIES: usize = 20_000;

/// Samples non-overlapping animals by rejection. Returns each animal's body
/// and root position.
pub fn place_animals(spec: &SkeletonSpec, n: usize, placement: &Placement<'_>, rng: &mut impl Rng) -> Result<Vec<(Body, Point)>> {
    let [w, h] = placement.arena;
    let mut placed: Vec<(Body, Point, Pose)> = Vec::with_capacity(n);
    for k in 0..n {
        let mut ok = None;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let scale = if placement.scale_range[0] < placement.scale_range[1] {
                rng.random_range(placement.scale_range[0]..placement.scale_range[1])
            } else {
                placement.scale_range[0]
            };
            let heading = if placement.random_heading { rng.random_range(-std::f64::consts::PI..std::f64::consts::PI) } else { 0.0 };
            let root = Point::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
            let body = Body::new(spec, placement.template, scale, heading)?;
            let pose = body.pose_at(root, 0);
            if inside(&pose, w, h, placement.margin)
                && placed.iter().all(|(_, _, other)| separated(&pose, other, placement.min_separation))
            {
                ok = Some((body, root, pose));
                break;
            }
        }
        let Some(entry) = ok else {
            return Err(Error::Config(format!("arena {w}x{h} is too small to place animal {} of {n}", k + 1)));
        };
        placed.push(entry);
    }
    Ok(placed.into_iter().map(|(b, r, _)| (b, r)).collect())
}

fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("validated non-negative sigma")
}

const JITTER_MEMORY: f64 = 0.9;

/// Generates the ground-truth trajectories of a scenario.
pub fn generate(config: &ScenarioConfig, spec: &SkeletonSpec) -> Result<GroundTruthSequence> {
    config.validate(spec)?;
    let mut rng = stream(config.seed, 1);
    let placement = Placement {
        template: &config.template,
        arena: config.arena,
        scale_range: config.scale_range,
        random_heading: config.random_heading,
        min_separation: config.min_separation,
        margin: config.margin,
    };
    let animals = place_animals(spec, config.n_animals, &placement, &mut rng)?;
    let mut roots: Vec<Point> = animals.iter().map(|a| a.1).collect();
    let c = spec.len();
    let mut jitter = vec![vec![Point::ORIGIN; c]; animals.len()];
    let innovation = normal(config.offset_jitter * (1.0 - JITTER_MEMORY * JITTER_MEMORY).sqrt());
    let mut frames = Vec::with_capacity(config.frames);
    for t in 0..config.frames {
        let mut out = Vec::with_capacity(animals.len());
        for (a, (body, _)) in animals.iter().enumerate() {
            let sched = config.schedule_of(a);
            let seg = sched.iter().rev().find(|s| s.from_frame <= t).expect("schedule starts at 0");
            if t > 0 {
                let v = if seg.regime == Regime::Stationary { Point::ORIGIN } else { Point::new(seg.velocity[0], seg.velocity[1]) };
                let noise = normal(seg.process_noise);
                roots[a] = roots[a] + v + Point::new(noise.sample(&mut rng), noise.sample(&mut rng));
            }
            let mut pose = body.pose_at(roots[a], t);
            if config.offset_jitter > 0.0 {
                for (i, j) in jitter[a].iter_mut().enumerate() {
                    *j = *j * JITTER_MEMORY + Point::new(innovation.sample(&mut rng), innovation.sample(&mut rng));
                    if i != spec.root() {
                        pose.coords[i] = pose.coords[i].map(|p| p + *j);
                    }
                }
            }
            out.push(TruthAnimal { id: a, pose, regime: seg.regime });
        }
        frames.push(TruthFrame { frame_index: t, animals: out });
    }
    Ok(GroundTruthSequence { frames })
}

/// Detections with the identity of the animal each pose came from.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDetections {
    pub frame_index: usize,
    pub poses: Vec<(usize, Pose)>,
}

/// Applies dropout and noise; poses that lose validity are removed.
pub fn corrupt_labeled(truth: &GroundTruthSequence, config: &ScenarioConfig, spec: &SkeletonSpec) -> Result<Vec<LabeledDetections>> {
    config.validate(spec)?;
    let sigmas = config.sigmas(spec);
    let dropouts = config.dropouts(spec);
    let noise: Vec<Normal<f64>> = sigmas.iter().map(|&s| normal(s)).collect();
    let mut rng = stream(config.seed, 2);
    Ok(truth
        .frames
        .iter()
        .map(|f| {
            let poses = f
                .animals
                .iter()
                .filter_map(|a| {
                    let mut p = a.pose.clone();
                    for (i, c) in p.coords.iter_mut().enumerate() {
                        let drop = rng.random::<f64>() < dropouts[i];
                        let d = Point::new(noise[i].sample(&mut rng), noise[i].sample(&mut rng));
                        *c = if drop { None } else { c.map(|q| q + d) };
                    }
                    p.is_valid(spec).then_some((a.id, p))
                })
                .collect();
            LabeledDetections { frame_index: f.frame_index, poses }
        })
        .collect())
}

pub fn corrupt(truth: &GroundTruthSequence, config: &ScenarioConfig, spec: &SkeletonSpec) -> Result<Vec<FrameDetections>> {
    Ok(corrupt_labeled(truth, config, spec)?
        .into_iter()
        .map(|f| FrameDetections { frame_index: f.frame_index, poses: f.poses.into_iter().map(|(_, p)| p).collect() })
        .collect())
}

/// Two-keypoint skeleton used by the parallel-rows association scene.
pub const PAIR_SKELETON_TOML: &str = r#"
name = "pair"
categories = ["a", "b"]
root = "a"
reference = { parent = "a", child = "b" }

[[connections]]
parent = "a"
child = "b"

[[dominant]]
parent = "a"
child = "b"
beta = 1.0
"#;

/// Six parallel a→b pairs where the first `a` and the last `b` were not
/// detected. Greedy assembly keeps the four true pairs and gates the long
/// leftover; Hungarian assignment shifts every pair by one row.
#[derive(Clone, Debug)]
pub struct ParallelRowsScene {
    pub spec: SkeletonSpec,
    pub connection: ConnectionId,
    pub truth: Vec<Pose>,
    pub a: Vec<Point>,
    pub b: Vec<Point>,
    pub maps: MapStack,
    pub gate: f64,
    /// Pairs (a index, b index) that are correct.
    pub expected_greedy: Vec<(usize, usize)>,
    pub expected_dropped: Vec<(usize, usize)>,
    pub expected_hungarian: Vec<(usize, usize)>,
}

impl ParallelRowsScene {
    pub fn cost_matrix(&self) -> Result<CostMatrix> {
        let mut rows = Vec::with_capacity(self.a.len());
        for &a in &self.a {
            let mut row = Vec::with_capacity(self.b.len());
            for &b in &self.b {
                row.push(association_penalty(a, b, &self.maps, self.connection)?);
            }
            rows.push(row);
        }
        CostMatrix::from_rows(&rows)
    }

    /// Index in `a` of the animal in `row`, if it was detected.
    pub fn row_of_a(&self, i: usize) -> usize {
        i + 1
    }

    pub fn row_of_b(&self, j: usize) -> usize {
        j
    }
}

pub fn parallel_rows_scene() -> Result<ParallelRowsScene> {
    let spec = SkeletonSpec::from_toml(PAIR_SKELETON_TOML)?;
    let connection = spec.reference();
    let (width, height) = (400, 300);
    let (x0, length, y0, spacing) = (150.0, 100.0, 100.0, 20.0);
    let rows = 6;
    let truth: Vec<Pose> = (0..rows)
        .map(|r| {
            let y = y0 + spacing * r as f64;
            Pose::from_coords(vec![Some(Point::new(x0, y)), Some(Point::new(x0 + length, y))])
        })
        .collect();
    let maps = encode(&truth, &spec, &spec.encoder(), width, height)?;
    let a = truth[1..].iter().map(|p| p.get(0).unwrap()).collect();
    let b = truth[..rows - 1].iter().map(|p| p.get(1).unwrap()).collect();
    let gate = 0.05 * maps.diagonal();
    Ok(ParallelRowsScene {
        spec,
        connection,
        truth,
        a,
        b,
        maps,
        gate,
        expected_greedy: (0..4).map(|i| (i, i + 1)).collect(),
        expected_dropped: vec![(4, 0)],
        expected_hungarian: (0..5).map(|i| (i, i)).collect(),
    })
}

/// Filter variants compared in the one-dimensional regime-switch demo.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KfMode {
    Standard,
    Adaptive,
    AdaptiveUnmitigated,
}

impl std::str::FromStr for KfMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(KfMode::Standard),
            "adaptive" => Ok(KfMode::Adaptive),
            "adaptive-unmitigated" => Ok(KfMode::AdaptiveUnmitigated),
            other => Err(Error::Config(format!("unknown filter mode `{other}`"))),
        }
    }
}

/// Constant-velocity truth observed in position whose process noise jumps
/// by `jump_factor` at `switch_step`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KfDemoConfig {
    pub seed: u64,
    pub steps: usize,
    pub switch_step: usize,
    /// Diagonal process-noise variances (position, velocity) before the switch.
    pub q: [f64; 2],
    pub jump_factor: f64,
    pub r: f64,
    /// Multiplies the filter's Q relative to the pre-switch truth.
    pub q_model_factor: f64,
    pub sign_window: usize,
}

impl Default for KfDemoConfig {
    fn default() -> Self {
        KfDemoConfig {
            seed: 7,
            steps: 500,
            switch_step: 250,
            q: [1e-4, 1e-6],
            jump_factor: 1e5,
            r: 1.0,
            q_model_factor: 1.0,
            sign_window: DEFAULT_SIGN_WINDOW,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KfDemoRow {
    pub step: usize,
    pub truth: f64,
    pub observation: f64,
    pub estimate: f64,
    pub alpha: f64,
    pub gamma: f64,
}

/// Truth and observations of the demo; identical for every mode.
pub fn kf_demo_signal(config: &KfDemoConfig) -> Vec<(f64, f64)> {
    let mut rng = stream(config.seed, 3);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let (mut pos, mut vel) = (0.0, 0.0);
    (0..config.steps)
        .map(|t| {
            let k = if t >= config.switch_step { config.jump_factor } else { 1.0 };
            if t > 0 {
                pos += vel + (config.q[0] * k).sqrt() * std.sample(&mut rng);
                vel += (config.q[1] * k).sqrt() * std.sample(&mut rng);
            }
            let z = pos + config.r.sqrt() * std.sample(&mut rng);
            (pos, z)
        })
        .collect()
}

pub fn run_kf_demo(config: &KfDemoConfig, mode: KfMode) -> Result<Vec<KfDemoRow>> {
    let q = DMatrix::from_diagonal(&DVector::from_row_slice(&[
        config.q[0] * config.q_model_factor,
        config.q[1] * config.q_model_factor,
    ]));
    let model = FilterModel::new(
        DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        q,
        DMatrix::from_element(1, 1, config.r),
    )?;
    let signal = kf_demo_signal(config);
    let mut rows = Vec::with_capacity(signal.len());
    let mut state: Option<FilterState> = None;
    let mask = ObservationMask::all(1);
    for (t, &(truth, z)) in signal.iter().enumerate() {
        let zv = DVector::from_row_slice(&[z]);
        let s = match state.as_mut() {
            None => {
                let p0 = DMatrix::from_diagonal(&DVector::from_row_slice(&[config.r, 1.0]));
                state.insert(FilterState::new(DVector::from_row_slice(&[z, 0.0]), p0, 1, config.sign_window))
            }
            Some(s) => {
                s.predict(&model);
                match mode {
                    KfMode::Standard => kalman::update_standard(&model, s, &zv, &mask)?,
                    KfMode::Adaptive => kalman::update_adaptive(&model, s, &zv, &mask, Mitigation::Signs)?,
                    KfMode::AdaptiveUnmitigated => kalman::update_adaptive(&model, s, &zv, &mask, Mitigation::Fixed(1.0))?,
                }
                s
            }
        };
        rows.push(KfDemoRow { step: t, truth, observation: z, estimate: s.x[0], alpha: s.last_alpha, gamma: s.last_gamma });
    }
    Ok(rows)
}

/// Root-mean-square estimation error over `range`.
pub fn rmse(rows: &[KfDemoRow], range: std::ops::Range<usize>) -> f64 {
    let r = &rows[range];
    (r.iter().map(|x| (x.estimate - x.truth).powi(2)).sum::<f64>() / r.len() as f64).sqrt()
}
