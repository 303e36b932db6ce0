//! CLEAR-MOT and identity metrics.

use std::collections::HashMap;
use std::ops::AddAssign;

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

/// Minimum-cost assignment for a rectangular cost matrix (`cost[r][c]`).
/// Returns one `(row, col)` pair per row when rows <= cols, otherwise one per
/// column, sorted by row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = cost[0].len();
    if cols == 0 {
        return Vec::new();
    }
    if rows > cols {
        let t: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| cost[r][c]).collect()).collect();
        let mut pairs: Vec<(usize, usize)> = hungarian(&t).into_iter().map(|(c, r)| (r, c)).collect();
        pairs.sort_unstable();
        return pairs;
    }
    // shortest augmenting paths with potentials, 1-based with a virtual column 0
    let (n, m) = (rows, cols);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect();
    pairs.sort_unstable();
    pairs
}

/// Total cost of an assignment.
pub fn assignment_cost(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(r, c)| cost[r][c]).sum()
}

/// Boxes per frame keyed by track identity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackSet {
    frames: Vec<Vec<(usize, BBox)>>,
}

impl TrackSet {
    /// Fails when an identity appears twice in one frame.
    pub fn new(frames: Vec<Vec<(usize, BBox)>>) -> Result<Self> {
        for (t, f) in frames.iter().enumerate() {
            let mut ids: Vec<usize> = f.iter().map(|(id, _)| *id).collect();
            ids.sort_unstable();
            if ids.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Config(format!("duplicate track identity at frame {t}")));
            }
        }
        Ok(TrackSet { frames })
    }

    /// Tracks spanning every frame; track `n` gets identity `n`.
    pub fn from_tracks(tracks: &[Vec<BBox>]) -> Self {
        let len = tracks.iter().map(Vec::len).max().unwrap_or(0);
        let frames = (0..len)
            .map(|t| {
                tracks
                    .iter()
                    .enumerate()
                    .filter_map(|(n, tr)| tr.get(t).map(|b| (n, *b)))
                    .collect()
            })
            .collect();
        TrackSet { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[(usize, BBox)] {
        &self.frames[t]
    }

    pub fn num_boxes(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }
}

/// Additive event counts; summing over sequences and then calling
/// [`MetricCounts::report`] gives dataset-level metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricCounts {
    pub num_gt: usize,
    pub num_pred: usize,
    pub matches: usize,
    pub iou_sum: f64,
    pub fp: usize,
    pub fn_: usize,
    pub ids: usize,
    pub idtp: usize,
    pub gt_tracks: usize,
    pub mt: usize,
    pub ml: usize,
}

impl AddAssign for MetricCounts {
    fn add_assign(&mut self, o: Self) {
        self.num_gt += o.num_gt;
        self.num_pred += o.num_pred;
        self.matches += o.matches;
        self.iou_sum += o.iou_sum;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.ids += o.ids;
        self.idtp += o.idtp;
        self.gt_tracks += o.gt_tracks;
        self.mt += o.mt;
        self.ml += o.ml;
    }
}

impl MetricCounts {
    pub fn report(&self) -> Result<MetricsReport> {
        if self.num_gt == 0 {
            return Err(Error::EmptyGroundTruth);
        }
        let gt = self.num_gt as f64;
        let errors = (self.fn_ + self.fp + self.ids) as f64;
        Ok(MetricsReport {
            mota: (gt - errors) / gt,
            motp: if self.matches == 0 {
                0.0
            } else {
                self.iou_sum / self.matches as f64
            },
            idf1: 2.0 * self.idtp as f64 / (self.num_gt + self.num_pred) as f64,
            ids: self.ids,
            fp: self.fp,
            fn_: self.fn_,
            mt: self.mt,
            ml: self.ml,
            num_gt: self.num_gt,
            gt_tracks: self.gt_tracks,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub mota: f64,
    pub motp: f64,
    pub idf1: f64,
    pub ids: usize,
    pub fp: usize,
    pub fn_: usize,
    pub mt: usize,
    pub ml: usize,
    /// Sum over frames of the ground-truth box count.
    pub num_gt: usize,
    pub gt_tracks: usize,
}

impl MetricsReport {
    fn pct(&self, count: usize) -> f64 {
        count as f64 / self.num_gt as f64
    }

    pub fn ids_pct(&self) -> f64 {
        self.pct(self.ids)
    }

    pub fn fp_pct(&self) -> f64 {
        self.pct(self.fp)
    }

    pub fn fn_pct(&self) -> f64 {
        self.pct(self.fn_)
    }

    /// `(name, value)` pairs in table order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("MOTA", format!("{:.6}", self.mota)),
            ("MOTP", format!("{:.6}", self.motp)),
            ("IDF1", format!("{:.6}", self.idf1)),
            ("#IDS", self.ids.to_string()),
            ("%IDS", format!("{:.6}", self.ids_pct())),
            ("#FP", self.fp.to_string()),
            ("%FP", format!("{:.6}", self.fp_pct())),
            ("#FN", self.fn_.to_string()),
            ("%FN", format!("{:.6}", self.fn_pct())),
            ("MT", self.mt.to_string()),
            ("ML", self.ml.to_string()),
        ]
    }

    /// `metric=value` lines.
    pub fn key_values(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Two-line aligned table.
    pub fn table(&self) -> String {
        let e = self.entries();
        let widths: Vec<usize> = e.iter().map(|(k, v)| k.len().max(v.len())).collect();
        let head: Vec<String> = e.iter().zip(&widths).map(|((k, _), w)| format!("{k:>w$}")).collect();
        let vals: Vec<String> = e.iter().zip(&widths).map(|((_, v), w)| format!("{v:>w$}")).collect();
        format!("{}\n{}\n", head.join("  "), vals.join("  "))
    }
}

/// Event counts for one sequence.
pub fn evaluate_counts(gt: &TrackSet, pred: &TrackSet, iou_threshold: f64) -> Result<MetricCounts> {
    if gt.len() != pred.len() {
        return Err(Error::FrameRange(format!(
            "ground truth has {} frames, prediction has {}",
            gt.len(),
            pred.len()
        )));
    }
    let mut c = MetricCounts {
        num_gt: gt.num_boxes(),
        num_pred: pred.num_boxes(),
        ..MetricCounts::default()
    };
    if c.num_gt == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let mut last: HashMap<usize, usize> = HashMap::new();
    let mut life: HashMap<usize, (usize, usize)> = HashMap::new();
    let mut pair_counts: HashMap<(usize, usize), usize> = HashMap::new();

    for t in 0..gt.len() {
        let g = gt.frame(t);
        let p = pred.frame(t);
        for (gid, gb) in g {
            life.entry(*gid).or_default().0 += 1;
            for (pid, pb) in p {
                if iou(gb, pb) >= iou_threshold {
                    *pair_counts.entry((*gid, *pid)).or_default() += 1;
                }
            }
        }

        // keep previous correspondences that are still valid
        let mut g_used = vec![false; g.len()];
        let mut p_used = vec![false; p.len()];
        let mut matches: Vec<(usize, usize, f64)> = Vec::new();
        for (gi, (gid, gb)) in g.iter().enumerate() {
            if let Some(pid) = last.get(gid) {
                if let Some(pi) = p.iter().position(|(id, _)| id == pid) {
                    let o = iou(gb, &p[pi].1);
                    if !p_used[pi] && o >= iou_threshold {
                        g_used[gi] = true;
                        p_used[pi] = true;
                        matches.push((gi, pi, o));
                    }
                }
            }
        }
        let gr: Vec<usize> = (0..g.len()).filter(|i| !g_used[*i]).collect();
        let pr: Vec<usize> = (0..p.len()).filter(|i| !p_used[*i]).collect();
        if !gr.is_empty() && !pr.is_empty() {
            let big = 1e6;
            let cost: Vec<Vec<f64>> = gr
                .iter()
                .map(|&gi| {
                    pr.iter()
                        .map(|&pi| {
                            let o = iou(&g[gi].1, &p[pi].1);
                            if o >= iou_threshold {
                                1.0 - o
                            } else {
                                big
                            }
                        })
                        .collect()
                })
                .collect();
            for (r, col) in hungarian(&cost) {
                if cost[r][col] < big {
                    let (gi, pi) = (gr[r], pr[col]);
                    matches.push((gi, pi, 1.0 - cost[r][col]));
                }
            }
        }

        for &(gi, pi, o) in &matches {
            let (gid, pid) = (g[gi].0, p[pi].0);
            if let Some(prev) = last.insert(gid, pid) {
                if prev != pid {
                    c.ids += 1;
                }
            }
            life.entry(gid).or_default().1 += 1;
            c.iou_sum += o;
        }
        c.matches += matches.len();
        c.fn_ += g.len() - matches.len();
        c.fp += p.len() - matches.len();
    }

    // identity-level global matching
    let mut gids: Vec<usize> = life.keys().copied().collect();
    gids.sort_unstable();
    let mut pids: Vec<usize> = (0..pred.len()).flat_map(|t| pred.frame(t).iter().map(|(id, _)| *id)).collect();
    pids.sort_unstable();
    pids.dedup();
    if !pids.is_empty() {
        let cost: Vec<Vec<f64>> = gids
            .iter()
            .map(|g| {
                pids.iter()
                    .map(|p| -(pair_counts.get(&(*g, *p)).copied().unwrap_or(0) as f64))
                    .collect()
            })
            .collect();
        c.idtp = hungarian(&cost).iter().map(|&(r, col)| (-cost[r][col]) as usize).sum();
    }

    c.gt_tracks = gids.len();
    for (span, tracked) in life.values() {
        let ratio = *tracked as f64 / *span as f64;
        if ratio >= 0.8 {
            c.mt += 1;
        } else if ratio <= 0.2 {
            c.ml += 1;
        }
    }
    Ok(c)
}

/// Metrics of one sequence, matching at `iou_threshold` (0.5 by convention).
pub fn evaluate(gt: &TrackSet, pred: &TrackSet, iou_threshold: f64) -> Result<MetricsReport> {
    evaluate_counts(gt, pred, iou_threshold)?.report()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(x: f64, y: f64) -> BBox {
        BBox::new(x, y, x + 1.0, y + 1.0)
    }

    #[test]
    fn hungarian_small_cases() {
        assert_eq!(hungarian(&[vec![3.0]]), vec![(0, 0)]);
        let p = hungarian(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert_eq!(p, vec![(0, 0), (1, 1)]);
        assert_eq!(assignment_cost(&[vec![1.0, 2.0], vec![2.0, 1.0]], &p), 2.0);
        let rect = hungarian(&[vec![5.0, 1.0, 9.0]]);
        assert_eq!(rect, vec![(0, 1)]);
        let tall = hungarian(&[vec![5.0], vec![1.0], vec![9.0]]);
        assert_eq!(tall, vec![(1, 0)]);
    }

    fn tracks(n: usize, len: usize) -> Vec<Vec<BBox>> {
        (0..n).map(|i| (0..len).map(|t| unit(3.0 * i as f64, 0.01 * t as f64)).collect()).collect()
    }

    #[test]
    fn perfect_prediction() {
        let gt = TrackSet::from_tracks(&tracks(3, 10));
        let r = evaluate(&gt, &gt, 0.5).unwrap();
        assert_eq!((r.mota, r.motp, r.idf1), (1.0, 1.0, 1.0));
        assert_eq!((r.ids, r.fp, r.fn_, r.mt, r.ml), (0, 0, 0, 3, 0));
    }

    // 4 tracks x 25 frames; track 0 missed on 10 frames, 5 spurious boxes,
    // one identity switch on track 1.
    #[test]
    fn mota_fixture() {
        let gt_tracks = tracks(4, 25);
        let gt = TrackSet::from_tracks(&gt_tracks);
        let frames = (0..25)
            .map(|t| {
                let mut f = Vec::new();
                for (n, tr) in gt_tracks.iter().enumerate() {
                    if n == 0 && t >= 15 {
                        continue;
                    }
                    let id = if n == 1 && t >= 12 { 99 } else { n };
                    f.push((id, tr[t]));
                }
                if t < 5 {
                    f.push((50, unit(100.0, 100.0)));
                }
                f
            })
            .collect();
        let pred = TrackSet::new(frames).unwrap();
        let r = evaluate(&gt, &pred, 0.5).unwrap();
        assert_eq!(r.num_gt, 100);
        assert_eq!((r.fn_, r.fp, r.ids), (10, 5, 1));
        assert_eq!(r.mota, 0.84);
        assert_eq!(r.fn_pct(), 0.1);
    }

    #[test]
    fn mt_threshold() {
        let gt_tracks = tracks(1, 20);
        let gt = TrackSet::from_tracks(&gt_tracks);
        let frames = (0..20)
            .map(|t| if t < 17 { vec![(0, gt_tracks[0][t])] } else { vec![] })
            .collect();
        let r = evaluate(&gt, &TrackSet::new(frames).unwrap(), 0.5).unwrap();
        assert_eq!((r.mt, r.ml, r.fn_), (1, 0, 3));
    }

    #[test]
    fn empty_ground_truth_is_an_error() {
        let gt = TrackSet::new(vec![vec![]; 3]).unwrap();
        assert!(matches!(evaluate(&gt, &gt, 0.5), Err(Error::EmptyGroundTruth)));
    }

    #[test]
    fn frame_mismatch_is_an_error() {
        let a = TrackSet::from_tracks(&tracks(1, 3));
        let b = TrackSet::from_tracks(&tracks(1, 4));
        assert!(matches!(evaluate(&a, &b, 0.5), Err(Error::FrameRange(_))));
    }

    #[test]
    fn duplicate_identity_is_rejected() {
        assert!(TrackSet::new(vec![vec![(1, unit(0.0, 0.0)), (1, unit(2.0, 0.0))]]).is_err());
    }

    #[test]
    fn output_formats() {
        let gt = TrackSet::from_tracks(&tracks(2, 4));
        let r = evaluate(&gt, &gt, 0.5).unwrap();
        assert!(r.key_values().starts_with("MOTA=1.000000\n"));
        assert_eq!(r.table().lines().count(), 2);
    }
}
