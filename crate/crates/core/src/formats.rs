//! On-disk formats shared by every pipeline stage.
//!
//! * Detections / ground truth: JSON lines
//!   `{"frame_id": str, "category": str, "bbox": [x1, y1, x2, y2], "score": num}`
//!   (`score` absent for ground truth).
//! * Activation tensors (`.actf`), one file per frame and layer, little-endian:
//!   `"ACTF" | u16 version = 1 | u16 reserved = 0 | u32 N | u32 H | u32 W | f32[N·H·W]`
//!   in (channel, row, column) order.
//! * Features: JSON lines `{"frame_id": str, "feature": str, "values": [num, ...]}`.
//! * Manifest: JSON lines binding a frame id to its files and temporal order.
//! * Stage outputs: per-frame mAP, labels and alert scores, all JSON lines.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_frame, ActivationMap, AlertLabel, BoundingBox, Detection, FeatureName, FeatureVector,
    FrameRecord, GroundTruthObject, Label, ModelError,
};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: {source}")]
    Invalid {
        path: String,
        line: usize,
        source: ModelError,
    },

    #[error("{path}:{line}: frame '{frame_id}' is not a known frame")]
    MissingFrame {
        path: String,
        line: usize,
        frame_id: String,
    },

    #[error("corrupt tensor {path}: {reason}")]
    CorruptTensor { path: String, reason: String },

    #[error("{path}: duplicate frame id '{frame_id}'")]
    DuplicateFrame { path: String, frame_id: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl FormatError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Errors caused by values that break a domain invariant rather than by malformed input.
    pub fn is_invariant_violation(&self) -> bool {
        matches!(self, FormatError::Invalid { .. })
    }
}

fn open(path: &Path) -> Result<BufReader<File>, FormatError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| FormatError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, FormatError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| FormatError::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| FormatError::io(path, e))
}

/// Parses every non-blank line; yields (1-based line number, value).
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, FormatError> {
    let reader = open(path)?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| FormatError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| FormatError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<(), FormatError> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| FormatError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| FormatError::io(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

/// One detection or ground-truth line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxLine {
    pub frame_id: String,
    pub category: String,
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

fn to_box(b: [f64; 4]) -> BoundingBox {
    BoundingBox {
        x1: b[0],
        y1: b[1],
        x2: b[2],
        y2: b[3],
    }
}

/// Reads frames from ground-truth and detection files. Frames are the ids in `known`
/// when given (in that order), otherwise the ids of the ground-truth file in order of
/// first appearance. Every record is validated.
pub fn read_frames(
    gt_path: &Path,
    det_path: Option<&Path>,
    known: Option<&[String]>,
) -> Result<Vec<FrameRecord>, FormatError> {
    let mut frames: Vec<FrameRecord> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    if let Some(ids) = known {
        for id in ids {
            if index.contains_key(id) {
                return Err(FormatError::DuplicateFrame {
                    path: "<frame list>".into(),
                    frame_id: id.clone(),
                });
            }
            index.insert(id.clone(), frames.len());
            frames.push(FrameRecord::new(id.clone()));
        }
    }
    let gt_name = gt_path.display().to_string();
    for (line, g) in read_jsonl::<BoxLine>(gt_path)? {
        let slot = match index.get(&g.frame_id) {
            Some(&i) => i,
            None if known.is_none() => {
                index.insert(g.frame_id.clone(), frames.len());
                frames.push(FrameRecord::new(g.frame_id.clone()));
                frames.len() - 1
            }
            None => {
                return Err(FormatError::MissingFrame {
                    path: gt_name,
                    line,
                    frame_id: g.frame_id,
                })
            }
        };
        let obj = GroundTruthObject::new(to_box(g.bbox), g.category);
        check_line(
            &gt_name,
            line,
            validate_frame(FrameRecord::new("").with_gt(obj.clone())),
        )?;
        frames[slot].ground_truth.push(obj);
    }
    if let Some(det_path) = det_path {
        let det_name = det_path.display().to_string();
        for (line, d) in read_jsonl::<BoxLine>(det_path)? {
            let Some(&slot) = index.get(&d.frame_id) else {
                return Err(FormatError::MissingFrame {
                    path: det_name,
                    line,
                    frame_id: d.frame_id,
                });
            };
            let Some(score) = d.score else {
                return Err(FormatError::Parse {
                    path: det_name,
                    line,
                    message: "detection without score".into(),
                });
            };
            let det = Detection::new(to_box(d.bbox), d.category, score);
            check_line(
                &det_name,
                line,
                validate_frame(FrameRecord::new("").with_detection(det.clone())),
            )?;
            frames[slot].detections.push(det);
        }
    }
    Ok(frames)
}

fn check_line<T>(path: &str, line: usize, r: Result<T, ModelError>) -> Result<T, FormatError> {
    r.map_err(|source| FormatError::Invalid {
        path: path.to_string(),
        line,
        source,
    })
}

pub fn gt_lines(frames: &[FrameRecord]) -> Vec<BoxLine> {
    frames
        .iter()
        .flat_map(|f| {
            f.ground_truth.iter().map(move |g| BoxLine {
                frame_id: f.frame_id.clone(),
                category: g.category.clone(),
                bbox: g.bbox.to_array(),
                score: None,
            })
        })
        .collect()
}

pub fn detection_lines(frames: &[FrameRecord]) -> Vec<BoxLine> {
    frames
        .iter()
        .flat_map(|f| {
            f.detections.iter().map(move |d| BoxLine {
                frame_id: f.frame_id.clone(),
                category: d.category.clone(),
                bbox: d.bbox.to_array(),
                score: Some(d.score),
            })
        })
        .collect()
}

pub fn write_frames(
    frames: &[FrameRecord],
    gt_path: &Path,
    det_path: &Path,
) -> Result<(), FormatError> {
    write_jsonl(gt_path, &gt_lines(frames))?;
    write_jsonl(det_path, &detection_lines(frames))
}

pub const ACTF_MAGIC: &[u8; 4] = b"ACTF";
pub const ACTF_VERSION: u16 = 1;
const ACTF_HEADER_LEN: usize = 20;

/// Encodes an activation map; values are narrowed to binary32.
pub fn encode_actf(map: &ActivationMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(ACTF_HEADER_LEN + map.values().len() * 4);
    out.extend_from_slice(ACTF_MAGIC);
    out.extend_from_slice(&ACTF_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    for d in [map.channels(), map.height(), map.width()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in map.values() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_actf(
    bytes: &[u8],
    frame_id: &str,
    layer_name: &str,
    source: &str,
) -> Result<ActivationMap, FormatError> {
    let corrupt = |reason: String| FormatError::CorruptTensor {
        path: source.to_string(),
        reason,
    };
    if bytes.len() < ACTF_HEADER_LEN {
        return Err(corrupt(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[..4] != ACTF_MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at =
        |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let version = u16_at(4);
    if version != ACTF_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    if u16_at(6) != 0 {
        return Err(corrupt("reserved field is not zero".into()));
    }
    let (n, h, w) = (u32_at(8), u32_at(12), u32_at(16));
    let count = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| corrupt("dimension product overflows".into()))?;
    let payload = &bytes[ACTF_HEADER_LEN..];
    if Some(payload.len()) != count.checked_mul(4) {
        return Err(corrupt(format!(
            "header declares {n}x{h}x{w} = {count} values but payload holds {} bytes",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    ActivationMap::new(frame_id, layer_name, n, h, w, values).map_err(|e| corrupt(e.to_string()))
}

pub fn write_actf(path: &Path, map: &ActivationMap) -> Result<(), FormatError> {
    let mut w = create(path)?;
    w.write_all(&encode_actf(map))
        .and_then(|_| w.flush())
        .map_err(|e| FormatError::io(path, e))
}

pub fn read_actf(
    path: &Path,
    frame_id: &str,
    layer_name: &str,
) -> Result<ActivationMap, FormatError> {
    let mut bytes = Vec::new();
    open(path)?
        .read_to_end(&mut bytes)
        .map_err(|e| FormatError::io(path, e))?;
    decode_actf(&bytes, frame_id, layer_name, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLine {
    pub frame_id: String,
    pub feature: FeatureName,
    pub values: Vec<f64>,
}

/// Reads feature vectors, keeping only `name` when given. Dimensions must agree per feature name.
pub fn read_features(
    path: &Path,
    name: Option<FeatureName>,
) -> Result<Vec<FeatureVector>, FormatError> {
    let p = path.display().to_string();
    let mut dims: HashMap<FeatureName, usize> = HashMap::new();
    let mut out = Vec::new();
    for (line, f) in read_jsonl::<FeatureLine>(path)? {
        if name.is_some_and(|n| n != f.feature) {
            continue;
        }
        let expected = *dims.entry(f.feature).or_insert(f.values.len());
        if expected != f.values.len() {
            return Err(FormatError::Parse {
                path: p,
                line,
                message: format!(
                    "feature '{}' has {} values, earlier lines have {expected}",
                    f.feature,
                    f.values.len()
                ),
            });
        }
        out.push(check_line(
            &p,
            line,
            FeatureVector::new(f.frame_id, f.feature, f.values),
        )?);
    }
    Ok(out)
}

pub fn write_features(path: &Path, features: &[FeatureVector]) -> Result<(), FormatError> {
    let lines: Vec<FeatureLine> = features
        .iter()
        .map(|f| FeatureLine {
            frame_id: f.frame_id.clone(),
            feature: f.name,
            values: f.values.clone(),
        })
        .collect();
    write_jsonl(path, &lines)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRef {
    pub layer: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub frame_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groundtruth: Option<PathBuf>,
    /// Layers ordered shallow to deep.
    #[serde(default)]
    pub activations: Vec<LayerRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<u64>,
}

/// Manifest with every path resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, FormatError> {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let p = path.display().to_string();
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for (line, mut e) in read_jsonl::<ManifestEntry>(path)? {
            if !seen.insert(e.frame_id.clone()) {
                return Err(FormatError::DuplicateFrame {
                    path: p,
                    frame_id: e.frame_id,
                });
            }
            let resolve = |q: &mut PathBuf| {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            };
            e.detections.as_mut().map(resolve);
            e.groundtruth.as_mut().map(resolve);
            for l in &mut e.activations {
                resolve(&mut l.path);
            }
            let files = e
                .detections
                .iter()
                .chain(&e.groundtruth)
                .chain(e.activations.iter().map(|l| &l.path));
            for f in files {
                if !f.exists() {
                    return Err(FormatError::Io {
                        path: format!("{p}:{line}"),
                        source: std::io::Error::new(
                            std::io::ErrorKind::NotFound,
                            format!("referenced file {} does not exist", f.display()),
                        ),
                    });
                }
            }
            entries.push(e);
        }
        Ok(Manifest { entries })
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        write_jsonl(path, &self.entries)
    }

    pub fn frame_ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.frame_id.clone()).collect()
    }

    /// Entries sorted by their order index, or `None` if any entry lacks one.
    pub fn temporal_order(&self) -> Option<Vec<&ManifestEntry>> {
        let mut v: Vec<&ManifestEntry> = self.entries.iter().collect();
        if v.iter().any(|e| e.order.is_none()) {
            return None;
        }
        v.sort_by_key(|e| e.order);
        Some(v)
    }

    /// Loads the frame records referenced by the manifest, in manifest order.
    /// Shared ground-truth and detection files are read once.
    pub fn load_frames(&self) -> Result<Vec<FrameRecord>, FormatError> {
        let ids = self.frame_ids();
        let mut frames: Vec<FrameRecord> =
            ids.iter().map(|id| FrameRecord::new(id.clone())).collect();
        let index: HashMap<&str, usize> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();

        let mut gt_files: Vec<&Path> = Vec::new();
        let mut det_files: Vec<&Path> = Vec::new();
        for e in &self.entries {
            if let Some(g) = &e.groundtruth {
                if !gt_files.contains(&g.as_path()) {
                    gt_files.push(g);
                }
            }
            if let Some(d) = &e.detections {
                if !det_files.contains(&d.as_path()) {
                    det_files.push(d);
                }
            }
        }
        let wanted = |e: &ManifestEntry, file: &Path, gt: bool| {
            let r = if gt { &e.groundtruth } else { &e.detections };
            r.as_deref() == Some(file)
        };
        for (files, gt) in [(gt_files, true), (det_files, false)] {
            for file in files {
                let name = file.display().to_string();
                for (line, b) in read_jsonl::<BoxLine>(file)? {
                    let Some(&slot) = index.get(b.frame_id.as_str()) else {
                        return Err(FormatError::MissingFrame {
                            path: name,
                            line,
                            frame_id: b.frame_id,
                        });
                    };
                    // a shared file may hold frames that point elsewhere; only keep lines
                    // for frames that reference this very file
                    if !wanted(&self.entries[slot], file, gt) {
                        continue;
                    }
                    if gt {
                        let obj = GroundTruthObject::new(to_box(b.bbox), b.category);
                        check_line(
                            &name,
                            line,
                            validate_frame(FrameRecord::new("").with_gt(obj.clone())),
                        )?;
                        frames[slot].ground_truth.push(obj);
                    } else {
                        let score = b.score.ok_or_else(|| FormatError::Parse {
                            path: name.clone(),
                            line,
                            message: "detection without score".into(),
                        })?;
                        let det = Detection::new(to_box(b.bbox), b.category, score);
                        check_line(
                            &name,
                            line,
                            validate_frame(FrameRecord::new("").with_detection(det.clone())),
                        )?;
                        frames[slot].detections.push(det);
                    }
                }
            }
        }
        Ok(frames)
    }

    /// Loads every layer of an entry, in listed order.
    pub fn load_activations(
        &self,
        entry: &ManifestEntry,
    ) -> Result<Vec<ActivationMap>, FormatError> {
        entry
            .activations
            .iter()
            .map(|l| read_actf(&l.path, &entry.frame_id, &l.layer))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    pub frames: usize,
    pub evaluated: usize,
    pub undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MapFileLine {
    Frame { frame_id: String, map: Option<f64> },
    Summary { summary: MapSummary },
}

pub fn write_map_file(
    path: &Path,
    maps: &[(String, Option<f64>)],
) -> Result<MapSummary, FormatError> {
    let undefined = maps.iter().filter(|(_, m)| m.is_none()).count();
    let summary = MapSummary {
        frames: maps.len(),
        evaluated: maps.len() - undefined,
        undefined,
    };
    let mut lines: Vec<MapFileLine> = maps
        .iter()
        .map(|(id, m)| MapFileLine::Frame {
            frame_id: id.clone(),
            map: *m,
        })
        .collect();
    lines.push(MapFileLine::Summary {
        summary: summary.clone(),
    });
    write_jsonl(path, &lines)?;
    Ok(summary)
}

/// Per-frame mAP values, `None` for frames without ground truth. The summary line is skipped.
pub fn read_map_file(path: &Path) -> Result<Vec<(String, Option<f64>)>, FormatError> {
    Ok(read_jsonl::<MapFileLine>(path)?
        .into_iter()
        .filter_map(|(_, l)| match l {
            MapFileLine::Frame { frame_id, map } => Some((frame_id, map)),
            MapFileLine::Summary { .. } => None,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelHeader {
    pub lambda: f64,
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub percentile: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelLine {
    pub frame_id: String,
    pub map: f64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum LabelFileLine {
    Label(LabelLine),
    Header(LabelHeader),
}

pub fn write_label_file(
    path: &Path,
    header: &LabelHeader,
    labels: &[AlertLabel],
) -> Result<(), FormatError> {
    let mut lines = vec![LabelFileLine::Header(header.clone())];
    lines.extend(labels.iter().map(|l| {
        LabelFileLine::Label(LabelLine {
            frame_id: l.frame_id.clone(),
            map: l.per_frame_map,
            label: l.label,
        })
    }));
    write_jsonl(path, &lines)
}

pub fn read_label_file(path: &Path) -> Result<(Option<LabelHeader>, Vec<AlertLabel>), FormatError> {
    let mut header = None;
    let mut labels = Vec::new();
    for (_, line) in read_jsonl::<LabelFileLine>(path)? {
        match line {
            LabelFileLine::Header(h) => header = Some(h),
            LabelFileLine::Label(l) => labels.push(AlertLabel {
                frame_id: l.frame_id,
                per_frame_map: l.map,
                label: l.label,
            }),
        }
    }
    Ok((header, labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLine {
    pub frame_id: String,
    pub failure_probability: f64,
}

pub fn write_scores(path: &Path, scores: &[(String, f64)]) -> Result<(), FormatError> {
    let lines: Vec<ScoreLine> = scores
        .iter()
        .map(|(id, p)| ScoreLine {
            frame_id: id.clone(),
            failure_probability: *p,
        })
        .collect();
    write_jsonl(path, &lines)
}

pub fn read_scores(path: &Path) -> Result<Vec<(String, f64)>, FormatError> {
    Ok(read_jsonl::<ScoreLine>(path)?
        .into_iter()
        .map(|(_, s)| (s.frame_id, s.failure_probability))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_map() -> ActivationMap {
        ActivationMap::new(
            "f0",
            "layer4",
            2,
            2,
            3,
            (0..12).map(|v| v as f64 * 0.5 - 2.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn actf_round_trip_and_layout() {
        let m = sample_map();
        let bytes = encode_actf(&m);
        assert_eq!(&bytes[..4], b"ACTF");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..20], &[2, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(bytes.len(), 20 + 12 * 4);
        let back = decode_actf(&bytes, "f0", "layer4", "mem").unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn actf_rejects_corruption() {
        let bytes = encode_actf(&sample_map());
        let is_corrupt = |b: &[u8]| {
            matches!(
                decode_actf(b, "f", "l", "mem"),
                Err(FormatError::CorruptTensor { .. })
            )
        };
        assert!(is_corrupt(&bytes[..bytes.len() - 1]));
        assert!(is_corrupt(&bytes[..10]));
        let mut b = bytes.clone();
        b[1] = b'X';
        assert!(is_corrupt(&b));
        let mut b = bytes.clone();
        b[4] = 2;
        assert!(is_corrupt(&b));
        let mut b = bytes.clone();
        b[8] = 0;
        assert!(is_corrupt(&b));
        let mut b = bytes.clone();
        b.extend_from_slice(&[0, 0, 0, 0]);
        assert!(is_corrupt(&b));
        let mut b = bytes;
        b[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(is_corrupt(&b));
    }

    #[test]
    fn parse_error_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gt.jsonl");
        std::fs::write(
            &p,
            "{\"frame_id\":\"a\",\"category\":\"car\",\"bbox\":[0,0,1,1]}\n\n{not json\n",
        )
        .unwrap();
        match read_frames(&p, None, None) {
            Err(FormatError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_detection_frame_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let gt = dir.path().join("gt.jsonl");
        let det = dir.path().join("det.jsonl");
        std::fs::write(
            &gt,
            "{\"frame_id\":\"a\",\"category\":\"car\",\"bbox\":[0,0,1,1]}\n",
        )
        .unwrap();
        std::fs::write(
            &det,
            "{\"frame_id\":\"b\",\"category\":\"car\",\"bbox\":[0,0,1,1],\"score\":0.5}\n",
        )
        .unwrap();
        assert!(matches!(
            read_frames(&gt, Some(&det), None),
            Err(FormatError::MissingFrame { line: 1, .. })
        ));
    }

    #[test]
    fn invalid_values_are_invariant_violations() {
        let dir = tempfile::tempdir().unwrap();
        let gt = dir.path().join("gt.jsonl");
        std::fs::write(
            &gt,
            "{\"frame_id\":\"a\",\"category\":\"car\",\"bbox\":[5,0,1,1]}\n",
        )
        .unwrap();
        let err = read_frames(&gt, None, None).unwrap_err();
        assert!(err.is_invariant_violation());
    }

    #[test]
    fn map_and_label_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("map.jsonl");
        let maps = vec![("a".to_string(), Some(0.25)), ("b".to_string(), None)];
        let s = write_map_file(&p, &maps).unwrap();
        assert_eq!(s.undefined, 1);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"map\":null"));
        assert!(text.contains("\"summary\""));
        assert_eq!(read_map_file(&p).unwrap(), maps);

        let lp = dir.path().join("labels.jsonl");
        let header = LabelHeader {
            lambda: 0.5,
            mode: "absolute".into(),
            percentile: None,
        };
        let labels = vec![AlertLabel {
            frame_id: "a".into(),
            per_frame_map: 0.25,
            label: Label::Failure,
        }];
        write_label_file(&lp, &header, &labels).unwrap();
        let (h, l) = read_label_file(&lp).unwrap();
        assert_eq!(h, Some(header));
        assert_eq!(l, labels);
    }
}
