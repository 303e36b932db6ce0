//! Plain-text file formats.
//!
//! Trajectory file: one record per trajectory, a `T=<int>` header followed by
//! `T` lines `x_min y_min x_max y_max`; records are separated by a blank line.
//!
//! Scene file: records of the form
//!
//! ```text
//! scene T=<T> N=<N>
//! track 1
//! <T box lines>
//! ...
//! track N
//! <T box lines>
//! obs
//! <t> <label> x_min y_min x_max y_max      (t is 1-based, label is 1-based or -1)
//! end
//! ```
//!
//! Results file: same layout with a `result T=<T> N=<N>` header, one `track`
//! block per estimated source, then an `eta` block of `t k n eta` rows
//! (1-based indices) and `end`.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a write
//! followed by a read reproduces every value bit for bit.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::scene::{Detection, ObservationSequence, Scene};
use crate::trajgen::BoxTrajectory;

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn push_box(out: &mut String, b: &BBox) {
    let [a, c, d, e] = b.0;
    let _ = writeln!(out, "{a} {c} {d} {e}");
}

fn parse_floats<const N: usize>(what: &str, line_no: usize, fields: &[&str]) -> Result<[f64; N]> {
    if fields.len() != N {
        return Err(Error::parse(
            what,
            format!("line {line_no}"),
            format!("expected {N} fields, found {}", fields.len()),
        ));
    }
    let mut out = [0.0; N];
    for (o, f) in out.iter_mut().zip(fields) {
        *o = f.parse::<f64>().map_err(|e| {
            Error::parse(what, format!("line {line_no}"), format!("invalid number {f:?}: {e}"))
        })?;
    }
    Ok(out)
}

fn parse_box(what: &str, line_no: usize, line: &str) -> Result<BBox> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    Ok(BBox(parse_floats::<4>(what, line_no, &fields)?))
}

pub fn format_trajectories(data: &[BoxTrajectory]) -> String {
    let mut out = String::new();
    for (i, traj) in data.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "T={}", traj.len());
        for b in traj {
            push_box(&mut out, b);
        }
    }
    out
}

pub fn parse_trajectories(text: &str) -> Result<Vec<BoxTrajectory>> {
    const WHAT: &str = "trajectory file";
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i].trim();
        if line.is_empty() {
            i += 1;
            continue;
        }
        let len: usize = line
            .strip_prefix("T=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(WHAT, format!("line {}", i + 1), "expected header T=<int>"))?;
        let mut traj = Vec::with_capacity(len);
        for j in 0..len {
            let idx = i + 1 + j;
            let l = lines
                .get(idx)
                .ok_or_else(|| Error::parse(WHAT, format!("line {}", idx + 1), "unexpected end of file"))?;
            traj.push(parse_box(WHAT, idx + 1, l)?);
        }
        out.push(traj);
        i += 1 + len;
        if let Some(l) = lines.get(i) {
            if !l.trim().is_empty() {
                return Err(Error::parse(WHAT, format!("line {}", i + 1), "expected blank line between records"));
            }
        }
    }
    Ok(out)
}

pub fn write_trajectory_file(path: &Path, data: &[BoxTrajectory]) -> Result<()> {
    write_atomic(path, format_trajectories(data).as_bytes())
}

pub fn read_trajectory_file(path: &Path) -> Result<Vec<BoxTrajectory>> {
    parse_trajectories(&read_to_string(path)?)
}

fn push_tracks(out: &mut String, tracks: &[Vec<BBox>]) {
    for (n, track) in tracks.iter().enumerate() {
        let _ = writeln!(out, "track {}", n + 1);
        for b in track {
            push_box(out, b);
        }
    }
}

pub fn format_scenes(scenes: &[Scene]) -> String {
    let mut out = String::new();
    for scene in scenes {
        let _ = writeln!(out, "scene T={} N={}", scene.num_frames(), scene.num_sources());
        push_tracks(&mut out, &scene.truth);
        out.push_str("obs\n");
        for (t, frame) in scene.obs.frames().iter().enumerate() {
            for d in frame {
                let label = d.label.map_or(-1, |l| l as i64 + 1);
                let [a, b, c, e] = d.bbox.0;
                let _ = writeln!(out, "{} {label} {a} {b} {c} {e}", t + 1);
            }
        }
        out.push_str("end\n");
    }
    out
}

/// Line cursor with 1-based line numbers for error messages.
struct Lines<'a> {
    lines: Vec<&'a str>,
    pos: usize,
    what: &'static str,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str, what: &'static str) -> Self {
        Lines {
            lines: text.lines().collect(),
            pos: 0,
            what,
        }
    }

    fn skip_blank(&mut self) {
        while self.pos < self.lines.len() && self.lines[self.pos].trim().is_empty() {
            self.pos += 1;
        }
    }

    fn next(&mut self) -> Result<(usize, &'a str)> {
        let line = self
            .lines
            .get(self.pos)
            .ok_or_else(|| Error::parse(self.what, format!("line {}", self.pos + 1), "unexpected end of file"))?;
        self.pos += 1;
        Ok((self.pos, line.trim()))
    }

    fn done(&self) -> bool {
        self.pos >= self.lines.len()
    }

    fn err(&self, line_no: usize, msg: impl Into<String>) -> Error {
        Error::parse(self.what, format!("line {line_no}"), msg)
    }
}

fn parse_header(lines: &Lines<'_>, line_no: usize, line: &str, keyword: &str) -> Result<(usize, usize)> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(keyword) {
        return Err(lines.err(line_no, format!("expected `{keyword} T=<int> N=<int>`")));
    }
    let mut seq_len = None;
    let mut n = None;
    for p in parts {
        if let Some(v) = p.strip_prefix("T=") {
            seq_len = v.parse().ok();
        } else if let Some(v) = p.strip_prefix("N=") {
            n = v.parse().ok();
        }
    }
    match (seq_len, n) {
        (Some(t), Some(n)) => Ok((t, n)),
        _ => Err(lines.err(line_no, format!("expected `{keyword} T=<int> N=<int>`"))),
    }
}

fn parse_track_blocks(lines: &mut Lines<'_>, seq_len: usize, n: usize) -> Result<Vec<Vec<BBox>>> {
    let mut tracks = Vec::with_capacity(n);
    for expected in 1..=n {
        let (no, line) = lines.next()?;
        if line != format!("track {expected}") {
            return Err(lines.err(no, format!("expected `track {expected}`")));
        }
        let mut track = Vec::with_capacity(seq_len);
        for _ in 0..seq_len {
            let (no, line) = lines.next()?;
            track.push(parse_box(lines.what, no, line)?);
        }
        tracks.push(track);
    }
    Ok(tracks)
}

pub fn parse_scenes(text: &str) -> Result<Vec<Scene>> {
    let mut lines = Lines::new(text, "scene file");
    let mut scenes = Vec::new();
    loop {
        lines.skip_blank();
        if lines.done() {
            break;
        }
        let (no, header) = lines.next()?;
        let (seq_len, n) = parse_header(&lines, no, header, "scene")?;
        let truth = parse_track_blocks(&mut lines, seq_len, n)?;
        let (no, line) = lines.next()?;
        if line != "obs" {
            return Err(lines.err(no, "expected `obs`"));
        }
        let mut frames: Vec<Vec<Detection>> = vec![Vec::new(); seq_len];
        loop {
            let (no, line) = lines.next()?;
            if line == "end" {
                break;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(lines.err(no, "expected `t label x_min y_min x_max y_max`"));
            }
            let t: usize = fields[0]
                .parse()
                .ok()
                .filter(|t| (1..=seq_len).contains(t))
                .ok_or_else(|| lines.err(no, format!("frame index must lie in 1..={seq_len}")))?;
            let label: i64 = fields[1].parse().map_err(|_| lines.err(no, "invalid label"))?;
            let bbox = BBox(parse_floats::<4>(lines.what, no, &fields[2..])?);
            let label = if label >= 1 { Some(label as usize - 1) } else { None };
            frames[t - 1].push(Detection { bbox, label });
        }
        scenes.push(Scene {
            truth,
            obs: ObservationSequence::new(frames)?,
        });
    }
    Ok(scenes)
}

pub fn write_scene_file(path: &Path, scenes: &[Scene]) -> Result<()> {
    write_atomic(path, format_scenes(scenes).as_bytes())
}

pub fn read_scene_file(path: &Path) -> Result<Vec<Scene>> {
    parse_scenes(&read_to_string(path)?)
}

/// Estimated trajectories and assignment probabilities for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingResult {
    /// `tracks[n][t]` is the estimated box of source `n` at frame `t`.
    pub tracks: Vec<Vec<BBox>>,
    /// `eta[t][k][n]`.
    pub eta: Vec<Vec<Vec<f64>>>,
}

impl TrackingResult {
    pub fn num_frames(&self) -> usize {
        self.tracks.first().map_or(self.eta.len(), Vec::len)
    }
}

pub fn format_results(results: &[TrackingResult]) -> String {
    let mut out = String::new();
    for r in results {
        let _ = writeln!(out, "result T={} N={}", r.num_frames(), r.tracks.len());
        push_tracks(&mut out, &r.tracks);
        out.push_str("eta\n");
        for (t, rows) in r.eta.iter().enumerate() {
            for (k, row) in rows.iter().enumerate() {
                for (n, v) in row.iter().enumerate() {
                    let _ = writeln!(out, "{} {} {} {v}", t + 1, k + 1, n + 1);
                }
            }
        }
        out.push_str("end\n");
    }
    out
}

pub fn parse_results(text: &str) -> Result<Vec<TrackingResult>> {
    let mut lines = Lines::new(text, "results file");
    let mut out = Vec::new();
    loop {
        lines.skip_blank();
        if lines.done() {
            break;
        }
        let (no, header) = lines.next()?;
        let (seq_len, n) = parse_header(&lines, no, header, "result")?;
        let tracks = parse_track_blocks(&mut lines, seq_len, n)?;
        let (no, line) = lines.next()?;
        if line != "eta" {
            return Err(lines.err(no, "expected `eta`"));
        }
        let mut eta: Vec<Vec<Vec<f64>>> = vec![Vec::new(); seq_len];
        loop {
            let (no, line) = lines.next()?;
            if line == "end" {
                break;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(lines.err(no, "expected `t k n eta`"));
            }
            let idx = |s: &str| s.parse::<usize>().ok().filter(|v| *v >= 1);
            let (t, k, src) = match (idx(f[0]), idx(f[1]), idx(f[2])) {
                (Some(t), Some(k), Some(src)) if t <= seq_len && src <= n => (t - 1, k - 1, src - 1),
                _ => return Err(lines.err(no, "invalid index")),
            };
            let v: f64 = f[3].parse().map_err(|_| lines.err(no, "invalid probability"))?;
            let rows = &mut eta[t];
            if k == rows.len() {
                rows.push(vec![f64::NAN; n]);
            } else if k > rows.len() {
                return Err(lines.err(no, "observation index out of order"));
            }
            rows[k][src] = v;
        }
        if eta.iter().flatten().flatten().any(|v| v.is_nan()) {
            return Err(lines.err(lines.pos, "incomplete eta table"));
        }
        out.push(TrackingResult { tracks, eta });
    }
    Ok(out)
}

pub fn write_results_file(path: &Path, results: &[TrackingResult]) -> Result<()> {
    write_atomic(path, format_results(results).as_bytes())
}

pub fn read_results_file(path: &Path) -> Result<Vec<TrackingResult>> {
    parse_results(&read_to_string(path)?)
}
