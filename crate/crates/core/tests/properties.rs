use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use keysort_core::io::{self, FrameDetections, Header, DETECTIONS_FORMAT, TRACKS_FORMAT};
use keysort_core::kalman::{update_adaptive, FilterState, DEFAULT_SIGN_WINDOW};
use keysort_core::tracker::track_sequence;
use keysort_core::{FilterModel, Mitigation, ObservationMask, Point, Pose, SkeletonSpec, TrackerConfig};

fn cv_model(q: f64, r: f64) -> FilterModel {
    FilterModel::new(
        DMatrix::from_row_slice(4, 4, &[1., 0., 1., 0., 0., 1., 0., 1., 0., 0., 1., 0., 0., 0., 0., 1.]),
        DMatrix::from_row_slice(2, 4, &[1., 0., 0., 0., 0., 1., 0., 0.]),
        DMatrix::from_diagonal_element(4, 4, q),
        DMatrix::from_diagonal_element(2, 2, r),
    )
    .unwrap()
}

fn cow(spec: &SkeletonSpec, at: (f64, f64), drop: &[bool]) -> Pose {
    let offsets = [(0., 0.), (-40., 0.), (18., -2.), (30., 2.), (-30., -9.), (-30., 9.)];
    let coords = offsets
        .iter()
        .zip(drop)
        .enumerate()
        .map(|(k, (&(dx, dy), &d))| (k == spec.root() || !d).then(|| Point::new(at.0 + dx, at.1 + dy)))
        .collect();
    Pose::from_coords(coords)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adaptive_filter_keeps_covariance_symmetric_psd(
        zs in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64, any::<bool>()), 1..40),
        q in 1e-6..1.0f64,
        r in 1e-3..10.0f64,
        unmitigated in any::<bool>(),
    ) {
        let model = cv_model(q, r);
        let mut s = FilterState::new(DVector::zeros(4), DMatrix::identity(4, 4) * 100.0, 2, DEFAULT_SIGN_WINDOW);
        let mitigation = if unmitigated { Mitigation::Fixed(1.0) } else { Mitigation::Signs };
        for (x, y, seen) in zs {
            s.predict(&model);
            let mask = ObservationMask(vec![seen, true]);
            update_adaptive(&model, &mut s, &DVector::from_row_slice(&[x, y]), &mask, mitigation).unwrap();
            prop_assert!(s.last_alpha > 0.0 && s.last_alpha <= 1.0);
            prop_assert!((0.0..=1.0).contains(&s.last_gamma));
            prop_assert!((&s.p - s.p.transpose()).abs().max() <= 1e-9 * s.p.abs().max().max(1.0));
            let min_eig = s.p.clone().symmetric_eigen().eigenvalues.min();
            prop_assert!(min_eig >= -1e-9 * s.p.abs().max().max(1.0), "eigenvalue {}", min_eig);
        }
    }

    #[test]
    fn tracker_output_respects_its_rules(
        frames in prop::collection::vec(prop::collection::vec(prop::collection::vec(prop::bool::weighted(0.2), 6), 0..=3), 1..25),
    ) {
        let spec = SkeletonSpec::cattle();
        let sites = [(100.0, 100.0), (300.0, 120.0), (200.0, 300.0)];
        let input: Vec<(usize, Vec<Pose>)> = frames
            .iter()
            .enumerate()
            .map(|(f, animals)| (f, animals.iter().zip(sites).map(|(d, at)| cow(&spec, at, d)).collect()))
            .collect();
        let cfg = TrackerConfig::default();
        let out = track_sequence(&spec, cfg.clone(), &input).unwrap();
        for (frame, (_, poses)) in out.iter().zip(&input) {
            let valid = poses.iter().filter(|p| p.is_valid(&spec)).count();
            prop_assert_eq!(frame.tracks.len(), valid, "every valid observation yields one record");
            prop_assert!(frame.tracks.windows(2).all(|w| w[0].id < w[1].id));
            for t in &frame.tracks {
                for k in 0..spec.len() {
                    if t.observed[k].is_some() {
                        prop_assert!(t.posterior[k].is_some() && !t.imputed[k]);
                    }
                    if t.imputed[k] {
                        prop_assert!(t.observed[k].is_none() && t.freq[k] > cfg.impute_freq_threshold);
                    }
                    prop_assert!((0.0..=1.0).contains(&t.freq[k]));
                }
            }
        }
    }

    #[test]
    fn detections_and_tracks_files_round_trip(
        frames in prop::collection::vec(prop::collection::vec(prop::collection::vec(prop::bool::weighted(0.3), 6), 0..=3), 0..10),
        x in 50.0..500.0f64,
    ) {
        let spec = SkeletonSpec::cattle();
        let dets: Vec<FrameDetections> = frames
            .iter()
            .enumerate()
            .map(|(f, a)| FrameDetections {
                frame_index: 2 * f,
                poses: a.iter().enumerate().map(|(i, d)| {
                    let mut p = cow(&spec, (x + 150.0 * i as f64 + 0.123, 80.5), d);
                    p.frame_index = 2 * f;
                    p
                }).collect(),
            })
            .collect();
        let mut buf = Vec::new();
        io::write_detections(&mut buf, &Header::new(DETECTIONS_FORMAT, &spec, 640, 480), &dets).unwrap();
        let (_, back) = io::read_detections(buf.as_slice()).unwrap();
        prop_assert_eq!(&back, &dets);

        let input: Vec<(usize, Vec<Pose>)> = dets.iter().map(|f| (f.frame_index, f.poses.clone())).collect();
        let tracks = track_sequence(&spec, TrackerConfig::default(), &input).unwrap();
        let mut buf = Vec::new();
        io::write_tracks(&mut buf, &Header::new(TRACKS_FORMAT, &spec, 640, 480), &tracks).unwrap();
        let (_, back) = io::read_tracks(buf.as_slice()).unwrap();
        prop_assert_eq!(back, tracks);
    }
}
