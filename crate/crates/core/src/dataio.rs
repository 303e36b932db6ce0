//! MOTChallenge input and construction of fixed-cardinality test sequences.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::formats;
use crate::geometry::{iou, BBox};
use crate::metrics::hungarian;
use crate::rng::{self, stream};
use crate::scene::{Detection, ObservationSequence, Scene};

/// One line of a MOTChallenge detection or ground-truth file.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub frame: usize,
    pub id: i64,
    pub bbox: BBox,
    pub confidence: f64,
    /// Trailing columns (class and visibility in ground-truth files, world
    /// coordinates in detection files).
    pub extra: Vec<f64>,
}

impl DetectionRecord {
    /// Ground-truth rows that count for evaluation: non-zero flag and, when
    /// present, class 1 (pedestrian).
    pub fn is_evaluated_gt(&self) -> bool {
        self.confidence != 0.0 && self.extra.first().is_none_or(|c| *c == 1.0)
    }
}

pub fn parse_mot_str(text: &str, what: &str) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let loc = format!("line {}", i + 1);
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 7 {
            return Err(Error::parse(what, loc, format!("expected at least 7 fields, found {}", fields.len())));
        }
        let nums: Vec<f64> = fields
            .iter()
            .enumerate()
            .map(|(j, f)| {
                f.parse::<f64>()
                    .map_err(|_| Error::parse(what, loc.clone(), format!("field {} is not a number: '{f}'", j + 1)))
            })
            .collect::<Result<_>>()?;
        if nums[0] < 1.0 || nums[0].fract() != 0.0 {
            return Err(Error::parse(what, loc, "frame must be a positive integer"));
        }
        if !(nums[4] > 0.0 && nums[5] > 0.0) {
            return Err(Error::parse(what, loc, "width and height must be positive"));
        }
        out.push(DetectionRecord {
            frame: nums[0] as usize,
            id: nums[1] as i64,
            bbox: BBox::from_ltwh(nums[2], nums[3], nums[4], nums[5]),
            confidence: nums[6],
            extra: nums[7..].to_vec(),
        });
    }
    Ok(out)
}

/// Parses `frame,id,left,top,width,height,conf[,...]` lines.
pub fn parse_mot_csv(path: &Path) -> Result<Vec<DetectionRecord>> {
    parse_mot_str(&formats::read_to_string(path)?, &path.display().to_string())
}

pub fn format_mot_csv(records: &[DetectionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let b = &r.bbox;
        out.push_str(&format!(
            "{},{},{},{},{},{},{}",
            r.frame,
            r.id,
            b.x_min(),
            b.y_min(),
            b.width(),
            b.height(),
            r.confidence
        ));
        for e in &r.extra {
            out.push_str(&format!(",{e}"));
        }
        out.push('\n');
    }
    out
}

/// Entries of a `seqinfo.ini` sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqInfo {
    pub im_width: f64,
    pub im_height: f64,
    pub frame_rate: Option<f64>,
    pub seq_length: Option<usize>,
}

pub fn parse_seqinfo(text: &str, what: &str) -> Result<SeqInfo> {
    let mut kv = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('[') || line.starts_with(';') || line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            kv.insert(k.trim().to_owned(), v.trim().to_owned());
        }
    }
    let num = |k: &str| -> Result<Option<f64>> {
        kv.get(k)
            .map(|v| v.parse::<f64>().map_err(|_| Error::parse(what, k, format!("'{v}' is not a number"))))
            .transpose()
    };
    let im_width = num("imWidth")?.ok_or_else(|| Error::parse(what, "imWidth", "missing"))?;
    let im_height = num("imHeight")?.ok_or_else(|| Error::parse(what, "imHeight", "missing"))?;
    if !(im_width > 0.0 && im_height > 0.0) {
        return Err(Error::parse(what, "imWidth/imHeight", "image size must be positive"));
    }
    Ok(SeqInfo {
        im_width,
        im_height,
        frame_rate: num("frameRate")?,
        seq_length: num("seqLength")?.map(|v| v as usize),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledDetection {
    pub frame: usize,
    pub id: i64,
    pub bbox: BBox,
}

fn by_frame<T>(items: &[T], frame: impl Fn(&T) -> usize) -> BTreeMap<usize, Vec<&T>> {
    let mut m: BTreeMap<usize, Vec<&T>> = BTreeMap::new();
    for it in items {
        m.entry(frame(it)).or_default().push(it);
    }
    m
}

/// Per-frame Hungarian matching of detections to ground truth on `1 - IoU`.
/// Matched detections take the ground-truth identity; the rest are dropped.
pub fn match_det_to_gt(dets: &[DetectionRecord], gt: &[DetectionRecord], iou_threshold: f64) -> Vec<LabeledDetection> {
    let dets_f = by_frame(dets, |d| d.frame);
    let gt_f = by_frame(gt, |g| g.frame);
    let mut out = Vec::new();
    for (frame, ds) in &dets_f {
        let Some(gs) = gt_f.get(frame) else {
            continue;
        };
        let cost: Vec<Vec<f64>> = ds
            .iter()
            .map(|d| gs.iter().map(|g| 1.0 - iou(&d.bbox, &g.bbox)).collect())
            .collect();
        for (di, gi) in hungarian(&cost) {
            if 1.0 - cost[di][gi] >= iou_threshold {
                out.push(LabeledDetection {
                    frame: *frame,
                    id: gs[gi].id,
                    bbox: ds[di].bbox,
                });
            }
        }
    }
    out
}

/// One test sequence cut from a video.
#[derive(Debug, Clone, PartialEq)]
pub struct Mot3tSequence {
    /// First frame of the window (1-based, as in the source files).
    pub start_frame: usize,
    pub ids: Vec<i64>,
    pub scene: Scene,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mot3tReport {
    pub windows: usize,
    pub emitted: usize,
    /// Windows with fewer than `n_tracks` identities spanning every frame.
    pub skipped: usize,
}

/// Cuts a video into consecutive windows of `seq_len` frames, keeps the
/// identities present in the ground truth on every frame of a window, samples
/// `n_tracks` of them and emits their matched detections (missing frames stay
/// missing) and ground truth. `num_frames` defaults to the last ground-truth
/// frame.
pub fn build_mot3t(
    labeled: &[LabeledDetection],
    gt: &[DetectionRecord],
    num_frames: Option<usize>,
    seq_len: usize,
    n_tracks: usize,
    seed: u64,
    video: u64,
) -> Result<(Vec<Mot3tSequence>, Mot3tReport)> {
    if n_tracks == 0 || seq_len == 0 {
        return Err(Error::Config("sequence length and track count must be at least 1".into()));
    }
    let total = num_frames.unwrap_or_else(|| gt.iter().map(|g| g.frame).max().unwrap_or(0));
    let gt_f = by_frame(gt, |g| g.frame);
    let det_f = by_frame(labeled, |d| d.frame);
    let mut report = Mot3tReport {
        windows: total / seq_len,
        ..Mot3tReport::default()
    };
    let mut out = Vec::new();
    for w in 0..report.windows {
        let start = 1 + w * seq_len;
        let frames = start..start + seq_len;
        let mut full: Option<BTreeSet<i64>> = None;
        for f in frames.clone() {
            let ids: BTreeSet<i64> = gt_f.get(&f).map_or_else(BTreeSet::new, |g| g.iter().map(|r| r.id).collect());
            full = Some(match full {
                None => ids,
                Some(prev) => prev.intersection(&ids).copied().collect(),
            });
        }
        let candidates: Vec<i64> = full.unwrap_or_default().into_iter().collect();
        if candidates.len() < n_tracks {
            report.skipped += 1;
            continue;
        }
        let mut r = rng::rng_for(seed, &[stream::MOT3T, video, w as u64]);
        let mut picked: Vec<usize> = sample(&mut r, candidates.len(), n_tracks).into_vec();
        picked.sort_unstable();
        let ids: Vec<i64> = picked.iter().map(|&i| candidates[i]).collect();
        let truth: Vec<Vec<BBox>> = ids
            .iter()
            .map(|id| {
                frames
                    .clone()
                    .map(|f| gt_f[&f].iter().find(|g| g.id == *id).expect("identity spans the window").bbox)
                    .collect()
            })
            .collect();
        let obs_frames: Vec<Vec<Detection>> = frames
            .clone()
            .map(|f| {
                det_f.get(&f).map_or_else(Vec::new, |ds| {
                    ds.iter()
                        .filter_map(|d| ids.iter().position(|id| *id == d.id).map(|n| Detection::labelled(d.bbox, n)))
                        .collect()
                })
            })
            .collect();
        out.push(Mot3tSequence {
            start_frame: start,
            ids,
            scene: Scene {
                truth,
                obs: ObservationSequence::new(obs_frames)?,
            },
        });
        report.emitted += 1;
    }
    Ok((out, report))
}

/// Divides x coordinates by `width` and y coordinates by `height`.
pub fn normalize_box(b: &BBox, width: f64, height: f64) -> BBox {
    BBox::new(b.x_min() / width, b.y_min() / height, b.x_max() / width, b.y_max() / height)
}

pub fn normalize_scene(scene: &Scene, width: f64, height: f64) -> Result<Scene> {
    Ok(Scene {
        truth: scene
            .truth
            .iter()
            .map(|tr| tr.iter().map(|b| normalize_box(b, width, height)).collect())
            .collect(),
        obs: ObservationSequence::new(
            scene
                .obs
                .frames()
                .iter()
                .map(|f| {
                    f.iter()
                        .map(|d| Detection {
                            bbox: normalize_box(&d.bbox, width, height),
                            label: d.label,
                        })
                        .collect()
                })
                .collect(),
        )?,
    })
}
