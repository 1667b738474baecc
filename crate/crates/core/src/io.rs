//! File formats.
//!
//! Detections, ground truth and tracks are JSON-lines files: a header record
//! naming the format, its version, the skeleton and the image size, then one
//! record per frame with strictly increasing `frame_index`. A pose is an
//! object keyed by category name with `[x, y]` or `null` values. Map stacks
//! use a small little-endian binary container.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::map_codec::{Grid, MapStack};
use crate::metrics::EvalReport;
use crate::skeleton::{Pose, SkeletonSpec};
use crate::synth::{GroundTruthSequence, Regime, TruthAnimal, TruthFrame};
use crate::tracker::{FrameOutput, TrackRecord};

pub const FORMAT_VERSION: u32 = 1;
pub const DETECTIONS_FORMAT: &str = "keysort-detections";
pub const TRUTH_FORMAT: &str = "keysort-truth";
pub const TRACKS_FORMAT: &str = "keysort-tracks";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub skeleton: String,
    pub categories: Vec<String>,
    pub width: usize,
    pub height: usize,
}

impl Header {
    pub fn new(format: &str, spec: &SkeletonSpec, width: usize, height: usize) -> Self {
        Header {
            format: format.to_string(),
            version: FORMAT_VERSION,
            skeleton: spec.name().to_string(),
            categories: spec.categories().to_vec(),
            width,
            height,
        }
    }
}

/// The skeletons detected in one frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameDetections {
    pub frame_index: usize,
    pub poses: Vec<Pose>,
}

fn format_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Format { line, msg: msg.into() }
}

pub fn pose_to_json(pose: &Pose, categories: &[String]) -> Value {
    let mut m = Map::new();
    for (name, c) in categories.iter().zip(&pose.coords) {
        m.insert(name.clone(), c.map_or(Value::Null, |p| json!([p.x, p.y])));
    }
    Value::Object(m)
}

pub fn pose_from_json(v: &Value, categories: &[String], frame_index: usize, line: usize) -> Result<Pose> {
    let obj = v.as_object().ok_or_else(|| format_err(line, "pose must be an object"))?;
    for key in obj.keys() {
        if !categories.contains(key) {
            return Err(format_err(line, format!("unknown category `{key}`")));
        }
    }
    let coords = categories
        .iter()
        .map(|name| match obj.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => {
                let p: [f64; 2] = serde_json::from_value(v.clone())
                    .map_err(|_| format_err(line, format!("`{name}` must be [x, y] or null")))?;
                let p = Point::new(p[0], p[1]);
                if !p.is_finite() {
                    return Err(format_err(line, format!("`{name}` has non-finite coordinates")));
                }
                Ok(Some(p))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Pose { coords, frame_index })
}

fn coords_to_json(coords: &[Option<Point>], categories: &[String]) -> Value {
    pose_to_json(&Pose { coords: coords.to_vec(), frame_index: 0 }, categories)
}

fn per_category<T: Serialize>(values: &[T], categories: &[String]) -> Value {
    Value::Object(categories.iter().cloned().zip(values.iter().map(|v| json!(v))).collect())
}

fn per_category_from<T: for<'de> Deserialize<'de>>(v: &Value, categories: &[String], line: usize, what: &str) -> Result<Vec<T>> {
    let obj = v.as_object().ok_or_else(|| format_err(line, format!("`{what}` must be an object")))?;
    categories
        .iter()
        .map(|c| {
            let x = obj.get(c).ok_or_else(|| format_err(line, format!("`{what}` lacks `{c}`")))?;
            serde_json::from_value(x.clone()).map_err(|e| format_err(line, format!("`{what}.{c}`: {e}")))
        })
        .collect()
}

/// Line-oriented writer shared by all JSON-lines formats.
pub struct JsonLinesWriter<W: Write> {
    out: W,
}

impl<W: Write> JsonLinesWriter<W> {
    pub fn new(mut out: W, header: &Header) -> std::io::Result<Self> {
        serde_json::to_writer(&mut out, header)?;
        out.write_all(b"\n")?;
        Ok(JsonLinesWriter { out })
    }

    pub fn record(&mut self, v: &Value) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, v)?;
        self.out.write_all(b"\n")
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Parsed JSON-lines body: header plus (line number, record) pairs.
pub struct JsonLines {
    pub header: Header,
    pub records: Vec<(usize, Value)>,
}

pub fn read_json_lines(input: impl BufRead, expected_format: &str) -> Result<JsonLines> {
    let mut header = None;
    let mut records = Vec::new();
    let mut last_frame: Option<usize> = None;
    for (i, line) in input.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| format_err(n, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).map_err(|e| format_err(n, e.to_string()))?;
        if header.is_none() {
            let h: Header = serde_json::from_value(v).map_err(|e| format_err(n, format!("bad header: {e}")))?;
            if h.format != expected_format {
                return Err(format_err(n, format!("expected format `{expected_format}`, found `{}`", h.format)));
            }
            if h.version != FORMAT_VERSION {
                return Err(format_err(n, format!("unsupported version {}", h.version)));
            }
            header = Some(h);
            continue;
        }
        let frame = v
            .get("frame_index")
            .and_then(Value::as_u64)
            .ok_or_else(|| format_err(n, "record lacks a non-negative integer `frame_index`"))? as usize;
        if last_frame.is_some_and(|l| frame <= l) {
            return Err(format_err(n, format!("frame_index {frame} does not increase")));
        }
        last_frame = Some(frame);
        records.push((n, v));
    }
    let header = header.ok_or_else(|| format_err(0, "missing header"))?;
    Ok(JsonLines { header, records })
}

/// Checks that a file's categories match the skeleton in use.
pub fn check_header(header: &Header, spec: &SkeletonSpec) -> Result<()> {
    if header.categories != spec.categories() {
        return Err(Error::ShapeMismatch(format!(
            "file categories {:?} differ from skeleton `{}` {:?}",
            header.categories,
            spec.name(),
            spec.categories()
        )));
    }
    Ok(())
}

fn frame_of(v: &Value) -> usize {
    v["frame_index"].as_u64().expect("checked while reading") as usize
}

pub fn write_detections(out: impl Write, header: &Header, frames: &[FrameDetections]) -> std::io::Result<()> {
    let mut w = JsonLinesWriter::new(out, header)?;
    for f in frames {
        let poses: Vec<Value> = f.poses.iter().map(|p| pose_to_json(p, &header.categories)).collect();
        w.record(&json!({ "frame_index": f.frame_index, "poses": poses }))?;
    }
    w.finish().map(|_| ())
}

pub fn read_detections(input: impl BufRead) -> Result<(Header, Vec<FrameDetections>)> {
    let body = read_json_lines(input, DETECTIONS_FORMAT)?;
    let cats = &body.header.categories;
    let frames = body
        .records
        .iter()
        .map(|(n, v)| {
            let frame_index = frame_of(v);
            let poses = v
                .get("poses")
                .and_then(Value::as_array)
                .ok_or_else(|| format_err(*n, "record lacks `poses`"))?
                .iter()
                .map(|p| pose_from_json(p, cats, frame_index, *n))
                .collect::<Result<Vec<_>>>()?;
            Ok(FrameDetections { frame_index, poses })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((body.header, frames))
}

pub fn write_truth(out: impl Write, header: &Header, truth: &GroundTruthSequence) -> std::io::Result<()> {
    let mut w = JsonLinesWriter::new(out, header)?;
    for f in &truth.frames {
        let animals: Vec<Value> = f
            .animals
            .iter()
            .map(|a| json!({ "id": a.id, "regime": a.regime, "pose": pose_to_json(&a.pose, &header.categories) }))
            .collect();
        w.record(&json!({ "frame_index": f.frame_index, "animals": animals }))?;
    }
    w.finish().map(|_| ())
}

pub fn read_truth(input: impl BufRead) -> Result<(Header, GroundTruthSequence)> {
    let body = read_json_lines(input, TRUTH_FORMAT)?;
    let cats = &body.header.categories;
    let frames = body
        .records
        .iter()
        .map(|(n, v)| {
            let frame_index = frame_of(v);
            let animals = v
                .get("animals")
                .and_then(Value::as_array)
                .ok_or_else(|| format_err(*n, "record lacks `animals`"))?
                .iter()
                .map(|a| {
                    let id = a.get("id").and_then(Value::as_u64).ok_or_else(|| format_err(*n, "animal lacks `id`"))?;
                    let regime: Regime = serde_json::from_value(a.get("regime").cloned().unwrap_or(Value::Null))
                        .map_err(|e| format_err(*n, format!("bad regime: {e}")))?;
                    let pose = pose_from_json(a.get("pose").unwrap_or(&Value::Null), cats, frame_index, *n)?;
                    Ok(TruthAnimal { id: id as usize, pose, regime })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TruthFrame { frame_index, animals })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((body.header, GroundTruthSequence { frames }))
}

fn track_to_json(t: &TrackRecord, cats: &[String]) -> Value {
    json!({
        "id": t.id,
        "observed": coords_to_json(&t.observed, cats),
        "prior": t.prior.as_ref().map(|p| coords_to_json(p, cats)),
        "posterior": coords_to_json(&t.posterior, cats),
        "imputed": per_category(&t.imputed, cats),
        "freq": per_category(&t.freq, cats),
        "alpha": t.alpha,
        "gamma": t.gamma,
        "psi": t.psi,
    })
}

fn track_from_json(v: &Value, cats: &[String], frame: usize, n: usize) -> Result<TrackRecord> {
    let coords = |key: &str| -> Result<Vec<Option<Point>>> {
        Ok(pose_from_json(v.get(key).unwrap_or(&Value::Null), cats, frame, n)?.coords)
    };
    let num = |key: &str| v.get(key).and_then(Value::as_f64).ok_or_else(|| format_err(n, format!("track lacks `{key}`")));
    Ok(TrackRecord {
        id: v.get("id").and_then(Value::as_u64).ok_or_else(|| format_err(n, "track lacks `id`"))?,
        observed: coords("observed")?,
        prior: match v.get("prior") {
            None | Some(Value::Null) => None,
            Some(_) => Some(coords("prior")?),
        },
        posterior: coords("posterior")?,
        imputed: per_category_from(v.get("imputed").unwrap_or(&Value::Null), cats, n, "imputed")?,
        freq: per_category_from(v.get("freq").unwrap_or(&Value::Null), cats, n, "freq")?,
        alpha: num("alpha")?,
        gamma: num("gamma")?,
        psi: v.get("psi").and_then(Value::as_f64),
    })
}

pub fn write_tracks(out: impl Write, header: &Header, frames: &[FrameOutput]) -> std::io::Result<()> {
    let mut w = JsonLinesWriter::new(out, header)?;
    for f in frames {
        let tracks: Vec<Value> = f.tracks.iter().map(|t| track_to_json(t, &header.categories)).collect();
        w.record(&json!({ "frame_index": f.frame_index, "tracks": tracks }))?;
    }
    w.finish().map(|_| ())
}

pub fn read_tracks(input: impl BufRead) -> Result<(Header, Vec<FrameOutput>)> {
    let body = read_json_lines(input, TRACKS_FORMAT)?;
    let cats = &body.header.categories;
    let frames = body
        .records
        .iter()
        .map(|(n, v)| {
            let frame_index = frame_of(v);
            let tracks = v
                .get("tracks")
                .and_then(Value::as_array)
                .ok_or_else(|| format_err(*n, "record lacks `tracks`"))?
                .iter()
                .map(|t| track_from_json(t, cats, frame_index, *n))
                .collect::<Result<Vec<_>>>()?;
            if tracks.windows(2).any(|w| w[0].id == w[1].id) {
                return Err(format_err(*n, "duplicate track id"));
            }
            Ok(FrameOutput { frame_index, tracks })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((body.header, frames))
}

const MAP_MAGIC: &[u8; 8] = b"KSMAPS\0\0";

/// Writes a map stack: magic, version, width, height, channel count, the
/// length-prefixed channel names, then every channel as row-major f32 LE.
pub fn write_map_stack(mut out: impl Write, maps: &MapStack, spec: &SkeletonSpec) -> std::io::Result<()> {
    out.write_all(MAP_MAGIC)?;
    let names = MapStack::channel_names(spec);
    for v in [FORMAT_VERSION, maps.width as u32, maps.height as u32, names.len() as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    for name in &names {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
    }
    for ch in maps.channels() {
        for v in ch.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b).map_err(|e| format_err(0, format!("truncated map file: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

/// Reads a map stack; its channel names must match the skeleton.
pub fn read_map_stack(mut input: impl Read, spec: &SkeletonSpec) -> Result<MapStack> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|_| format_err(0, "not a map file"))?;
    if &magic != MAP_MAGIC {
        return Err(format_err(0, "not a map file"));
    }
    let version = read_u32(&mut input)?;
    if version != FORMAT_VERSION {
        return Err(format_err(0, format!("unsupported map version {version}")));
    }
    let width = read_u32(&mut input)? as usize;
    let height = read_u32(&mut input)? as usize;
    let count = read_u32(&mut input)? as usize;
    let expected = MapStack::channel_names(spec);
    if count != expected.len() {
        return Err(Error::ShapeMismatch(format!("{count} channels, skeleton needs {}", expected.len())));
    }
    for want in &expected {
        let len = read_u32(&mut input)? as usize;
        if len > 4096 {
            return Err(format_err(0, "channel name too long"));
        }
        let mut buf = vec![0u8; len];
        input.read_exact(&mut buf).map_err(|e| format_err(0, format!("truncated map file: {e}")))?;
        if buf != want.as_bytes() {
            return Err(Error::ShapeMismatch(format!(
                "channel `{}` where `{want}` was expected",
                String::from_utf8_lossy(&buf)
            )));
        }
    }
    let mut channels = Vec::with_capacity(count);
    let mut buf = vec![0u8; width * height * 4];
    for _ in 0..count {
        input.read_exact(&mut buf).map_err(|e| format_err(0, format!("truncated map file: {e}")))?;
        let data: Vec<f32> = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        channels.push(Grid::from_shape_vec((height, width), data).expect("sized above"));
    }
    MapStack::from_channels(spec, width, height, channels)
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x}"))
}

/// Per-category summary table of a report.
pub fn write_report_csv(mut out: impl Write, label: &str, report: &EvalReport) -> std::io::Result<()> {
    writeln!(out, "set,category,recovery,rel_error_mean,rel_error_std,frame_diff_q05,frame_diff_q50,frame_diff_q95")?;
    for c in &report.categories {
        writeln!(
            out,
            "{label},{},{},{},{},{},{},{}",
            c.category,
            opt(c.recovery),
            opt(c.rel_error_mean),
            opt(c.rel_error_std),
            opt(c.frame_diff.q05),
            opt(c.frame_diff.q50),
            opt(c.frame_diff.q95)
        )?;
    }
    Ok(())
}

/// Long-format frame-difference samples for plotting.
pub fn write_samples_csv(mut out: impl Write, label: &str, report: &EvalReport) -> std::io::Result<()> {
    writeln!(out, "set,category,frame_difference")?;
    for (c, samples) in report.categories.iter().zip(&report.frame_diff_samples) {
        for s in samples {
            writeln!(out, "{label},{},{s}", c.category)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map_codec::{encode, EncoderParams};

    fn spec() -> SkeletonSpec {
        SkeletonSpec::cattle()
    }

    fn pose(s: &SkeletonSpec, x: f64, frame: usize) -> Pose {
        let mut p = Pose::empty(s.len(), frame);
        p.coords[0] = Some(Point::new(x, 20.5));
        p.coords[1] = Some(Point::new(x - 40.25, 20.0));
        p
    }

    #[test]
    fn detections_round_trip() {
        let s = spec();
        let h = Header::new(DETECTIONS_FORMAT, &s, 640, 480);
        let frames = vec![
            FrameDetections { frame_index: 0, poses: vec![pose(&s, 100.0, 0), pose(&s, 0.1 + 0.2, 0)] },
            FrameDetections { frame_index: 3, poses: vec![] },
        ];
        let mut buf = Vec::new();
        write_detections(&mut buf, &h, &frames).unwrap();
        let (h2, back) = read_detections(buf.as_slice()).unwrap();
        assert_eq!(h2, h);
        assert_eq!(back, frames);
    }

    #[test]
    fn detections_reject_bad_input() {
        let s = spec();
        let h = serde_json::to_string(&Header::new(DETECTIONS_FORMAT, &s, 10, 10)).unwrap();
        let cases = [
            format!("{h}\n{{\"frame_index\":2,\"poses\":[]}}\n{{\"frame_index\":2,\"poses\":[]}}\n"),
            format!("{h}\n{{\"frame_index\":0,\"poses\":[{{\"elbow\":[1,2]}}]}}\n"),
            format!("{h}\n{{\"frame_index\":0,\"poses\":[{{\"withers\":[1]}}]}}\n"),
            format!("{h}\n{{\"poses\":[]}}\n"),
            "{\"frame_index\":0}\n".to_string(),
            String::new(),
        ];
        for text in cases {
            assert!(read_detections(text.as_bytes()).is_err(), "{text}");
        }
        let err = read_detections(cases_line_three(&h).as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format { line: 3, .. }), "{err}");
    }

    fn cases_line_three(h: &str) -> String {
        format!("{h}\n{{\"frame_index\":1,\"poses\":[]}}\n{{\"frame_index\":0,\"poses\":[]}}\n")
    }

    #[test]
    fn truth_and_tracks_round_trip() {
        let s = spec();
        let truth = GroundTruthSequence {
            frames: vec![TruthFrame {
                frame_index: 0,
                animals: vec![TruthAnimal { id: 2, pose: pose(&s, 50.0, 0), regime: Regime::AbruptTurn }],
            }],
        };
        let mut buf = Vec::new();
        write_truth(&mut buf, &Header::new(TRUTH_FORMAT, &s, 100, 100), &truth).unwrap();
        assert_eq!(read_truth(buf.as_slice()).unwrap().1, truth);

        let rec = TrackRecord {
            id: 7,
            observed: pose(&s, 1.0, 0).coords,
            prior: Some(pose(&s, 2.0, 0).coords),
            posterior: pose(&s, 1.5, 0).coords,
            imputed: vec![false, true, false, false, false, false],
            freq: vec![1.0, 0.8, 0.0, 0.0, 0.0, 0.0],
            alpha: 0.25,
            gamma: 0.5,
            psi: Some(1.25),
        };
        let mut new = rec.clone();
        new.id = 8;
        new.prior = None;
        new.psi = None;
        let frames = vec![FrameOutput { frame_index: 4, tracks: vec![rec, new] }];
        let mut buf = Vec::new();
        write_tracks(&mut buf, &Header::new(TRACKS_FORMAT, &s, 100, 100), &frames).unwrap();
        assert_eq!(read_tracks(buf.as_slice()).unwrap().1, frames);
        assert!(read_detections(buf.as_slice()).is_err());
    }

    #[test]
    fn map_stack_round_trip_is_exact() {
        let s = spec();
        let mut p = Pose::empty(s.len(), 0);
        let offsets = [(0.0, 0.0), (-40.0, 0.0), (18.0, -2.0), (30.0, 2.0), (-30.0, -9.0), (-30.0, 9.0)];
        for (i, (x, y)) in offsets.iter().enumerate() {
            p.coords[i] = Some(Point::new(60.3 + x, 40.7 + y));
        }
        let maps = encode(&[p], &s, &EncoderParams::default(), 120, 80).unwrap();
        let mut buf = Vec::new();
        write_map_stack(&mut buf, &maps, &s).unwrap();
        let back = read_map_stack(buf.as_slice(), &s).unwrap();
        assert_eq!(back, maps);
        assert!(read_map_stack(&buf[..buf.len() - 1], &s).is_err());
        assert!(read_map_stack(&b"garbage!"[..], &s).is_err());
        let other = SkeletonSpec::from_toml(crate::synth::PAIR_SKELETON_TOML).unwrap();
        assert!(matches!(read_map_stack(buf.as_slice(), &other), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn report_csv_has_quantile_columns() {
        let s = spec();
        let report = crate::metrics::Evaluator::new(&s, 50.0).finish();
        let mut buf = Vec::new();
        write_report_csv(&mut buf, "posterior", &report).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().next().unwrap().contains("frame_diff_q05,frame_diff_q50,frame_diff_q95"));
        assert_eq!(text.lines().count(), 1 + s.len());
    }
}
