//! KeySORT: multi-animal skeleton tracking with one adaptive Kalman filter
//! per animal.
//!
//! The state of a tracklet holds the root keypoint in absolute image
//! coordinates and every other keypoint as an offset from its parent, followed
//! by the velocities of all of these. An observed keypoint is the root plus
//! the chain of offsets down to it, so a missing keypoint keeps moving with
//! the rest of the animal instead of staying where it was last seen.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assignment::{hungarian, CostMatrix};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::kalman::{self, FilterModel, FilterState, Mitigation, ObservationMask, DEFAULT_SIGN_WINDOW};
use crate::skeleton::{Pose, SkeletonSpec};

/// Per-keypoint observation variance used when neither the skeleton nor the
/// tracker configuration provides one.
pub const DEFAULT_R_STAR: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Association gate on ψ, in original-image pixels.
    pub gate_px: f64,
    pub max_missed_frames: u32,
    /// Completed updates before a tracklet may survive a missed frame.
    pub maturity_age: u32,
    /// Longest run of missing frames over which a keypoint is imputed.
    pub impute_max_consecutive: u32,
    pub impute_freq_threshold: f64,
    pub freq_memory: f64,
    pub r_scale: f64,
    pub q_pos_factor: f64,
    pub q_vel_factor: f64,
    pub p0_factor: f64,
    /// Multiplies ψ to convert working coordinates to original-image pixels.
    pub coord_scale: f64,
    pub mitigation: Mitigation,
    pub sign_window: usize,
    pub impute: bool,
    /// Per-keypoint variances; overrides the skeleton's values when set.
    pub r_star: Option<Vec<f64>>,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            gate_px: 25.0,
            max_missed_frames: 3,
            maturity_age: 3,
            impute_max_consecutive: 2,
            impute_freq_threshold: 0.5,
            freq_memory: 0.8,
            r_scale: 1e-2,
            q_pos_factor: 1e-5,
            q_vel_factor: 1e-7,
            p0_factor: 1e10,
            coord_scale: 1.0,
            mitigation: Mitigation::Signs,
            sign_window: DEFAULT_SIGN_WINDOW,
            impute: true,
            r_star: None,
        }
    }
}

impl TrackerConfig {
    /// Parses and validates a TOML document; absent fields keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: TrackerConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gate_px", self.gate_px),
            ("impute_freq_threshold", self.impute_freq_threshold),
            ("r_scale", self.r_scale),
            ("q_pos_factor", self.q_pos_factor),
            ("q_vel_factor", self.q_vel_factor),
            ("p0_factor", self.p0_factor),
            ("coord_scale", self.coord_scale),
        ];
        for (name, v) in positive {
            // a zero gate is allowed: it disables association
            let ok = if name == "gate_px" { v >= 0.0 } else { v > 0.0 };
            if !ok || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.freq_memory > 0.0 && self.freq_memory < 1.0) {
            return Err(Error::Config(format!("freq_memory must lie in (0, 1), got {}", self.freq_memory)));
        }
        if self.sign_window == 0 {
            return Err(Error::Config("sign_window must be at least 1".into()));
        }
        if let Mitigation::Fixed(g) = self.mitigation {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::Config(format!("fixed mitigation must lie in [0, 1], got {g}")));
            }
        }
        Ok(())
    }
}

/// Filter matrices of a tracklet together with the map from absolute
/// keypoint coordinates to state positions used at initiation.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackerModel {
    pub filter: FilterModel,
    pub p0: DMatrix<f64>,
    /// Inverse of the position block of H.
    pub to_state: DMatrix<f64>,
}

impl TrackerModel {
    /// Builds a model from the position block of H (absolute coordinates as
    /// a function of state positions). Velocities share the same structure.
    pub fn from_position_observation(h_pos: DMatrix<f64>, r_star: &[f64], config: &TrackerConfig) -> Result<Self> {
        let k = h_pos.nrows();
        if h_pos.ncols() != k || r_star.len() * 2 != k {
            return Err(Error::Dimension(format!(
                "position observation {:?} with {} keypoint variances",
                h_pos.shape(),
                r_star.len()
            )));
        }
        if r_star.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
            return Err(Error::Config("keypoint variances must be positive".into()));
        }
        let to_state = h_pos
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Dimension("position observation matrix is singular".into()))?;
        let n = 2 * k;
        let mut phi = DMatrix::identity(n, n);
        for i in 0..k {
            phi[(i, k + i)] = 1.0;
        }
        let mut h = DMatrix::zeros(k, n);
        h.view_mut((0, 0), (k, k)).copy_from(&h_pos);
        let r_diag: Vec<f64> = r_star.iter().flat_map(|&r| [r * config.r_scale; 2]).collect();
        let mean_r = r_diag.iter().sum::<f64>() / k as f64;
        let q_diag: Vec<f64> = (0..n)
            .map(|i| mean_r * if i < k { config.q_pos_factor } else { config.q_vel_factor })
            .collect();
        let q = DMatrix::from_diagonal(&DVector::from_vec(q_diag));
        let p0 = &q * config.p0_factor;
        let r = DMatrix::from_diagonal(&DVector::from_vec(r_diag));
        Ok(TrackerModel { filter: FilterModel::new(phi, h, q, r)?, p0, to_state })
    }

    fn categories(&self) -> usize {
        self.filter.obs_dim() / 2
    }
}

/// Hierarchical model: H expresses each keypoint as the root plus the
/// offsets along its tree path.
pub fn build_model(spec: &SkeletonSpec, r_star: &[f64], config: &TrackerConfig) -> Result<TrackerModel> {
    let c = spec.len();
    if r_star.len() != c {
        return Err(Error::Dimension(format!("{} keypoint variances for {c} categories", r_star.len())));
    }
    let mut h_pos = DMatrix::zeros(2 * c, 2 * c);
    for cat in 0..c {
        for node in spec.path_from_root(cat) {
            h_pos[(2 * cat, 2 * node)] = 1.0;
            h_pos[(2 * cat + 1, 2 * node + 1)] = 1.0;
        }
    }
    TrackerModel::from_position_observation(h_pos, r_star, config)
}

/// Mean distance between observed keypoints and their predictions.
pub fn psi(observed: &Pose, predicted: &Pose) -> Option<f64> {
    let d: Vec<f64> = observed
        .present()
        .filter_map(|(i, p)| predicted.get(i).map(|q| p.distance(q)))
        .collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

/// Exponentially smoothed observation frequency.
pub fn running_freq(f_prev: f64, observed: bool, memory: f64) -> f64 {
    (1.0 - memory) * if observed { 1.0 } else { 0.0 } + memory * f_prev
}

#[derive(Clone, Debug)]
pub struct Tracklet {
    pub id: u64,
    pub filter: FilterState,
    pub age: u32,
    pub missed: u32,
    pub freq: Vec<f64>,
    pub last_seen: Vec<Option<usize>>,
}

/// One tracklet's output for a frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub id: u64,
    pub observed: Vec<Option<Point>>,
    /// Full predicted pose; absent on the frame a tracklet is initiated.
    pub prior: Option<Vec<Option<Point>>>,
    /// Filtered pose: observed keypoints plus imputed ones.
    pub posterior: Vec<Option<Point>>,
    pub imputed: Vec<bool>,
    pub freq: Vec<f64>,
    pub alpha: f64,
    pub gamma: f64,
    /// Association cost of the match; absent for new tracklets.
    pub psi: Option<f64>,
}

impl TrackRecord {
    pub fn observed_pose(&self, frame_index: usize) -> Pose {
        Pose { coords: self.observed.clone(), frame_index }
    }

    pub fn posterior_pose(&self, frame_index: usize) -> Pose {
        Pose { coords: self.posterior.clone(), frame_index }
    }

    pub fn prior_pose(&self, frame_index: usize) -> Option<Pose> {
        self.prior.as_ref().map(|c| Pose { coords: c.clone(), frame_index })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameOutput {
    pub frame_index: usize,
    pub tracks: Vec<TrackRecord>,
}

#[derive(Clone, Debug)]
pub struct Tracker {
    config: TrackerConfig,
    model: TrackerModel,
    tracklets: Vec<Tracklet>,
    next_id: u64,
    last_frame: Option<usize>,
}

impl Tracker {
    pub fn new(spec: &SkeletonSpec, config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        let r_star = config
            .r_star
            .clone()
            .or_else(|| spec.r_star().map(<[f64]>::to_vec))
            .unwrap_or_else(|| vec![DEFAULT_R_STAR; spec.len()]);
        let model = build_model(spec, &r_star, &config)?;
        Self::with_model(spec, config, model)
    }

    /// Tracker over a custom model, e.g. a different state parametrization.
    pub fn with_model(spec: &SkeletonSpec, config: TrackerConfig, model: TrackerModel) -> Result<Self> {
        config.validate()?;
        if model.categories() != spec.len() {
            return Err(Error::Dimension(format!(
                "model covers {} categories, skeleton has {}",
                model.categories(),
                spec.len()
            )));
        }
        Ok(Tracker { config, model, tracklets: Vec::new(), next_id: 0, last_frame: None })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn model(&self) -> &TrackerModel {
        &self.model
    }

    pub fn tracklets(&self) -> &[Tracklet] {
        &self.tracklets
    }

    fn pose_of(&self, x: &DVector<f64>) -> Vec<Option<Point>> {
        let abs = &self.model.filter.h * x;
        (0..self.model.categories()).map(|c| Some(Point::new(abs[2 * c], abs[2 * c + 1]))).collect()
    }

    fn initiate(&mut self, spec: &SkeletonSpec, obs: &Pose, frame: usize) -> TrackRecord {
        let c = self.model.categories();
        let k = 2 * c;
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by_key(|&i| spec.rank(i));
        let mut known = vec![false; c];
        let mut abs = vec![Point::ORIGIN; c];
        for &cat in &order {
            match spec.parent_of(cat) {
                None => {
                    known[cat] = obs.get(cat).is_some();
                    abs[cat] = obs.get(cat).unwrap_or(Point::ORIGIN);
                }
                Some(p) => {
                    known[cat] = known[p] && obs.get(cat).is_some();
                    abs[cat] = if known[cat] { obs.get(cat).unwrap() } else { abs[p] };
                }
            }
        }
        let abs_vec = DVector::from_iterator(k, abs.iter().flat_map(|p| [p.x, p.y]));
        let mut x = DVector::zeros(2 * k);
        x.rows_mut(0, k).copy_from(&(&self.model.to_state * abs_vec));
        let filter = FilterState::new(x, self.model.p0.clone(), k, self.config.sign_window);

        let id = self.next_id;
        self.next_id += 1;
        let observed_flags: Vec<bool> = (0..c).map(|i| obs.get(i).is_some()).collect();
        let tracklet = Tracklet {
            id,
            filter,
            age: 0,
            missed: 0,
            freq: observed_flags.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect(),
            last_seen: observed_flags.iter().map(|&o| o.then_some(frame)).collect(),
        };
        let record = TrackRecord {
            id,
            observed: obs.coords.clone(),
            prior: None,
            posterior: obs.coords.clone(),
            imputed: vec![false; c],
            freq: tracklet.freq.clone(),
            alpha: 1.0,
            gamma: 0.0,
            psi: None,
        };
        self.tracklets.push(tracklet);
        record
    }

    /// Processes the skeletons detected in one frame.
    ///
    /// Frames must arrive with strictly increasing indices. Poses without a
    /// root or dominant connection are ignored.
    pub fn step(&mut self, spec: &SkeletonSpec, poses: &[Pose], frame_index: usize) -> Result<FrameOutput> {
        if let Some(last) = self.last_frame {
            if frame_index <= last {
                return Err(Error::Config(format!("frame index {frame_index} does not follow {last}")));
            }
        }
        self.last_frame = Some(frame_index);
        let c = self.model.categories();
        if spec.len() != c {
            return Err(Error::Dimension(format!("skeleton has {} categories, tracker {c}", spec.len())));
        }
        let observations: Vec<&Pose> = poses
            .iter()
            .filter(|p| {
                let ok = p.coords.len() == c && p.is_valid(spec) && p.present().all(|(_, q)| q.is_finite());
                if !ok {
                    log::warn!("frame {frame_index}: ignoring an invalid skeleton");
                }
                ok
            })
            .collect();

        for t in &mut self.tracklets {
            t.filter.predict(&self.model.filter);
        }
        let priors: Vec<Vec<Option<Point>>> = self.tracklets.iter().map(|t| self.pose_of(&t.filter.x)).collect();

        let cost = CostMatrix::from_fn(observations.len(), self.tracklets.len(), |r, col| {
            let prior = Pose { coords: priors[col].clone(), frame_index };
            psi(observations[r], &prior).map_or(f64::INFINITY, |d| d * self.config.coord_scale)
        });
        let pairs = if self.config.gate_px > 0.0 { hungarian(&cost, Some(self.config.gate_px)) } else { Vec::new() };

        let mut obs_matched = vec![false; observations.len()];
        let mut track_matched = vec![None; self.tracklets.len()];
        for &(r, col) in &pairs {
            obs_matched[r] = true;
            track_matched[col] = Some(r);
        }

        let mut records = Vec::new();
        let mut survivors = Vec::with_capacity(self.tracklets.len());
        let tracklets = std::mem::take(&mut self.tracklets);
        for (col, mut t) in tracklets.into_iter().enumerate() {
            let Some(r) = track_matched[col] else {
                for f in &mut t.freq {
                    *f = running_freq(*f, false, self.config.freq_memory);
                }
                if t.age < self.config.maturity_age {
                    log::debug!("frame {frame_index}: dropping immature tracklet {}", t.id);
                    continue;
                }
                t.missed += 1;
                if t.missed > self.config.max_missed_frames {
                    log::debug!("frame {frame_index}: terminating tracklet {}", t.id);
                    continue;
                }
                survivors.push(t);
                continue;
            };
            let obs = observations[r];
            let mut z = DVector::zeros(2 * c);
            let mut mask = vec![false; 2 * c];
            for (i, p) in obs.present() {
                z[2 * i] = p.x;
                z[2 * i + 1] = p.y;
                mask[2 * i] = true;
                mask[2 * i + 1] = true;
            }
            kalman::update_adaptive(
                &self.model.filter,
                &mut t.filter,
                &z,
                &ObservationMask(mask),
                self.config.mitigation,
            )?;
            t.age += 1;
            t.missed = 0;
            let post = self.pose_of(&t.filter.x);
            let mut posterior = vec![None; c];
            let mut imputed = vec![false; c];
            for i in 0..c {
                let seen = obs.get(i).is_some();
                t.freq[i] = running_freq(t.freq[i], seen, self.config.freq_memory);
                if seen {
                    t.last_seen[i] = Some(frame_index);
                    posterior[i] = post[i];
                } else if self.config.impute
                    && t.freq[i] > self.config.impute_freq_threshold
                    && t.last_seen[i]
                        .is_some_and(|s| frame_index - s <= self.config.impute_max_consecutive as usize)
                {
                    posterior[i] = priors[col][i];
                    imputed[i] = true;
                }
            }
            records.push(TrackRecord {
                id: t.id,
                observed: obs.coords.clone(),
                prior: Some(priors[col].clone()),
                posterior,
                imputed,
                freq: t.freq.clone(),
                alpha: t.filter.last_alpha,
                gamma: t.filter.last_gamma,
                psi: Some(cost.get(r, col)),
            });
            survivors.push(t);
        }
        self.tracklets = survivors;

        for (r, obs) in observations.iter().enumerate() {
            if !obs_matched[r] {
                records.push(self.initiate(spec, obs, frame_index));
            }
        }
        records.sort_by_key(|rec| rec.id);
        debug_assert!(self.tracklets.iter().all(|t| t.missed <= self.config.max_missed_frames));
        Ok(FrameOutput { frame_index, tracks: records })
    }
}

/// Runs a tracker over a whole sequence of frames.
pub fn track_sequence(
    spec: &SkeletonSpec,
    config: TrackerConfig,
    frames: &[(usize, Vec<Pose>)],
) -> Result<Vec<FrameOutput>> {
    let mut tracker = Tracker::new(spec, config)?;
    frames.iter().map(|(i, poses)| tracker.step(spec, poses, *i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SkeletonSpec {
        SkeletonSpec::cattle()
    }

    fn cow(s: &SkeletonSpec, at: Point) -> Pose {
        let offsets = [
            ("withers", 0.0, 0.0),
            ("tail implant", -40.0, 0.0),
            ("head", 18.0, -2.0),
            ("nose", 30.0, 2.0),
            ("left hook", -30.0, -9.0),
            ("right hook", -30.0, 9.0),
        ];
        let mut p = Pose::empty(s.len(), 0);
        for (name, dx, dy) in offsets {
            p.coords[s.category_index(name).unwrap()] = Some(at + Point::new(dx, dy));
        }
        p
    }

    #[test]
    fn model_dimensions_and_chain_rows() {
        let s = spec();
        let m = build_model(&s, &[4.0; 6], &TrackerConfig::default()).unwrap();
        assert_eq!(m.filter.state_dim(), 24);
        assert_eq!(m.filter.obs_dim(), 12);
        let w = s.category_index("withers").unwrap();
        let h = s.category_index("head").unwrap();
        let n = s.category_index("nose").unwrap();
        let row_h: Vec<usize> = (0..24).filter(|&j| m.filter.h[(2 * h, j)] != 0.0).collect();
        assert_eq!(row_h, vec![2 * w, 2 * h]);
        let mut row_n: Vec<usize> = (0..24).filter(|&j| m.filter.h[(2 * n, j)] != 0.0).collect();
        row_n.sort();
        let mut want = vec![2 * w, 2 * h, 2 * n];
        want.sort();
        assert_eq!(row_n, want);
        // R = 4e-2, Q = 4e-7 / 4e-9, P0 = Q * 1e10
        assert!((m.filter.r[(0, 0)] - 0.04).abs() < 1e-15);
        assert!((m.filter.q[(0, 0)] - 4e-7).abs() < 1e-20);
        assert!((m.filter.q[(12, 12)] - 4e-9).abs() < 1e-22);
        assert!((m.p0[(0, 0)] - 4e3).abs() < 1e-9);
        assert!(build_model(&s, &[4.0; 5], &TrackerConfig::default()).is_err());
    }

    #[test]
    fn psi_examples() {
        let a = Pose::from_coords(vec![Some(Point::new(0.0, 0.0)), Some(Point::new(1.0, 1.0)), None]);
        assert_eq!(psi(&a, &a), Some(0.0));
        let b = Pose::from_coords(vec![Some(Point::new(3.0, 4.0)), Some(Point::new(1.0, 1.0)), Some(Point::ORIGIN)]);
        assert_eq!(psi(&a, &b), Some(2.5));
        let w = Pose::from_coords(vec![Some(Point::new(10.0, 0.0)), None, None]);
        assert_eq!(psi(&w, &b.map_points(|_| Point::ORIGIN)), Some(10.0));
        assert_eq!(psi(&Pose::empty(3, 0), &b), None);
    }

    #[test]
    fn running_freq_examples() {
        assert!((running_freq(1.0, false, 0.8) - 0.8).abs() < 1e-15);
        assert!((running_freq(0.8, false, 0.8) - 0.64).abs() < 1e-15);
        assert!((running_freq(0.0, true, 0.8) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn stationary_animal_keeps_its_id_and_converges() {
        let s = spec();
        let truth = cow(&s, Point::new(100.0, 80.0));
        let mut t = Tracker::new(&s, TrackerConfig::default()).unwrap();
        let mut last = None;
        for f in 0..10 {
            let out = t.step(&s, std::slice::from_ref(&truth), f).unwrap();
            assert_eq!(out.tracks.len(), 1);
            let rec = &out.tracks[0];
            assert_eq!(rec.id, 0);
            last = Some(rec.clone());
        }
        let rec = last.unwrap();
        for (i, p) in truth.present() {
            assert!(rec.posterior[i].unwrap().distance(p) < 1e-6);
        }
    }

    #[test]
    fn initiation_zeroes_offsets_below_a_missing_parent() {
        let s = spec();
        let mut obs = cow(&s, Point::new(50.0, 50.0));
        let head = s.category_index("head").unwrap();
        obs.coords[head] = None;
        let mut t = Tracker::new(&s, TrackerConfig::default()).unwrap();
        t.step(&s, &[obs], 0).unwrap();
        let x = &t.tracklets()[0].filter.x;
        let nose = s.category_index("nose").unwrap();
        assert_eq!((x[2 * head], x[2 * head + 1]), (0.0, 0.0));
        assert_eq!((x[2 * nose], x[2 * nose + 1]), (0.0, 0.0));
        let tail = s.category_index("tail implant").unwrap();
        assert_eq!((x[2 * tail], x[2 * tail + 1]), (-40.0, 0.0));
        assert_eq!(t.tracklets()[0].freq[head], 0.0);
    }

    #[test]
    fn disappearance_for_four_frames_terminates() {
        let s = spec();
        let truth = cow(&s, Point::new(100.0, 80.0));
        let mut t = Tracker::new(&s, TrackerConfig::default()).unwrap();
        for f in 0..5 {
            t.step(&s, std::slice::from_ref(&truth), f).unwrap();
        }
        for f in 5..8 {
            assert!(t.step(&s, &[], f).unwrap().tracks.is_empty());
            assert_eq!(t.tracklets().len(), 1);
        }
        t.step(&s, &[], 8).unwrap();
        assert!(t.tracklets().is_empty());
        let out = t.step(&s, &[truth], 9).unwrap();
        assert_eq!(out.tracks[0].id, 1);
    }

    #[test]
    fn immature_tracklet_dies_on_first_miss() {
        let s = spec();
        let truth = cow(&s, Point::new(100.0, 80.0));
        let mut t = Tracker::new(&s, TrackerConfig::default()).unwrap();
        for f in 0..3 {
            t.step(&s, std::slice::from_ref(&truth), f).unwrap();
        }
        // age 2 after three frames
        t.step(&s, &[], 3).unwrap();
        assert!(t.tracklets().is_empty());
    }

    #[test]
    fn nose_imputed_only_briefly() {
        let s = spec();
        let nose = s.category_index("nose").unwrap();
        let truth = cow(&s, Point::new(100.0, 80.0));
        let mut no_nose = truth.clone();
        no_nose.coords[nose] = None;
        let mut t = Tracker::new(&s, TrackerConfig::default()).unwrap();
        for f in 0..10 {
            t.step(&s, std::slice::from_ref(&truth), f).unwrap();
        }
        let out = t.step(&s, std::slice::from_ref(&no_nose), 10).unwrap();
        assert!(out.tracks[0].imputed[nose]);
        assert!(out.tracks[0].posterior[nose].unwrap().distance(truth.get(nose).unwrap()) < 1e-3);
        let out = t.step(&s, std::slice::from_ref(&no_nose), 11).unwrap();
        assert!(out.tracks[0].imputed[nose]);
        let out = t.step(&s, std::slice::from_ref(&no_nose), 12).unwrap();
        assert!(!out.tracks[0].imputed[nose]);
        assert!(out.tracks[0].posterior[nose].is_none());
    }

    #[test]
    fn zero_gate_never_associates() {
        let s = spec();
        let truth = cow(&s, Point::new(100.0, 80.0));
        let cfg = TrackerConfig { gate_px: 0.0, ..TrackerConfig::default() };
        let mut t = Tracker::new(&s, cfg).unwrap();
        for f in 0..4 {
            let out = t.step(&s, std::slice::from_ref(&truth), f).unwrap();
            assert_eq!(out.tracks.len(), 1);
            assert_eq!(out.tracks[0].id, f as u64);
            assert!(out.tracks[0].prior.is_none());
        }
    }

    #[test]
    fn frame_indices_must_increase() {
        let s = spec();
        let mut t = Tracker::new(&s, TrackerConfig::default()).unwrap();
        t.step(&s, &[], 3).unwrap();
        assert!(t.step(&s, &[], 3).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrackerConfig::default().validate().is_ok());
        assert!(TrackerConfig { freq_memory: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrackerConfig { r_scale: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrackerConfig { mitigation: Mitigation::Fixed(2.0), ..Default::default() }.validate().is_err());
        let text = "gate_px = 30.0\nmitigation = { fixed = 0.0 }\n";
        let cfg: TrackerConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.gate_px, 30.0);
        assert_eq!(cfg.mitigation, Mitigation::Fixed(0.0));
    }
}
