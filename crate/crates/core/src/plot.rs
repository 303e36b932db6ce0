//! SVG rendering of tracking results: one panel per selected frame with
//! ground truth (solid), observations (dashed) and estimates (bold).

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::scene::ObservationSequence;

const PANEL: f64 = 240.0;
const MARGIN: f64 = 12.0;
const COLUMNS: usize = 4;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

pub struct PlotInput<'a> {
    /// Estimated tracks, `estimates[n][t]`.
    pub estimates: &'a [Vec<BBox>],
    pub truth: Option<&'a [Vec<BBox>]>,
    pub obs: Option<&'a ObservationSequence>,
    /// 0-based frames to draw; empty means every frame.
    pub frames: &'a [usize],
}

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

/// Maps data coordinates into a panel, preserving aspect ratio.
struct Frame {
    x0: f64,
    y0: f64,
    scale: f64,
}

impl Frame {
    fn fit<'a>(boxes: impl Iterator<Item = &'a BBox>) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for b in boxes.filter(|b| b.0.iter().all(|v| v.is_finite())) {
            lo = [lo[0].min(b.x_min()), lo[1].min(b.y_min())];
            hi = [hi[0].max(b.x_max()), hi[1].max(b.y_max())];
        }
        if !lo[0].is_finite() {
            return Frame { x0: 0.0, y0: 0.0, scale: PANEL };
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
        Frame { x0: lo[0], y0: lo[1], scale: PANEL / span }
    }

    fn rect(&self, out: &mut String, ox: f64, oy: f64, b: &BBox, style: &str) {
        let x = ox + (b.x_min() - self.x0) * self.scale;
        let y = oy + (b.y_min() - self.y0) * self.scale;
        let w = b.width().max(0.0) * self.scale;
        let h = b.height().max(0.0) * self.scale;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="none" {style}/>"#
        );
    }
}

/// Renders the selected frames into a self-contained SVG document. The output
/// depends only on the inputs.
pub fn render_svg(input: &PlotInput) -> Result<String> {
    let num_frames = input.estimates.first().map_or(0, Vec::len);
    if input.estimates.is_empty() || num_frames == 0 {
        return Err(Error::Config("nothing to plot: the results are empty".into()));
    }
    let frames: Vec<usize> = if input.frames.is_empty() {
        (0..num_frames).collect()
    } else {
        input.frames.to_vec()
    };
    if let Some(&t) = frames.iter().find(|t| **t >= num_frames) {
        return Err(Error::FrameRange(format!(
            "frame {} requested but the results have {num_frames} frames",
            t + 1
        )));
    }
    if let Some(truth) = input.truth {
        if truth.iter().any(|tr| tr.len() != num_frames) {
            return Err(Error::FrameRange("ground truth and results differ in length".into()));
        }
    }
    if let Some(obs) = input.obs {
        if obs.len() != num_frames {
            return Err(Error::FrameRange("observations and results differ in length".into()));
        }
    }

    let all = input
        .estimates
        .iter()
        .flatten()
        .chain(input.truth.into_iter().flatten().flatten())
        .chain(input.obs.into_iter().flat_map(|o| o.frames().iter().flatten().map(|d| &d.bbox)));
    let map = Frame::fit(all);

    let cols = frames.len().min(COLUMNS);
    let rows = frames.len().div_ceil(COLUMNS);
    let cell = PANEL + 2.0 * MARGIN;
    let (width, height) = (cols as f64 * cell, rows as f64 * (cell + 14.0));

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    for (i, &t) in frames.iter().enumerate() {
        let ox = (i % COLUMNS) as f64 * cell + MARGIN;
        let oy = (i / COLUMNS) as f64 * (cell + 14.0) + MARGIN + 14.0;
        let _ = writeln!(out, r#"<g id="frame-{}">"#, t + 1);
        let _ = writeln!(
            out,
            r#"<text x="{ox:.2}" y="{:.2}" font-family="sans-serif" font-size="11">frame {}</text>"#,
            oy - 4.0,
            t + 1
        );
        let _ = writeln!(
            out,
            r##"<rect x="{ox:.2}" y="{oy:.2}" width="{PANEL:.2}" height="{PANEL:.2}" fill="none" stroke="#bbbbbb" stroke-width="0.5"/>"##
        );
        if let Some(truth) = input.truth {
            for (n, track) in truth.iter().enumerate() {
                let style = format!(r#"class="truth" stroke="{}" stroke-width="1""#, color(n));
                map.rect(&mut out, ox, oy, &track[t], &style);
            }
        }
        if let Some(obs) = input.obs {
            for d in obs.frame(t) {
                let c = d.label.map_or("#555555", color);
                let style = format!(r#"class="obs" stroke="{c}" stroke-width="1" stroke-dasharray="4 3""#);
                map.rect(&mut out, ox, oy, &d.bbox, &style);
            }
        }
        for (n, track) in input.estimates.iter().enumerate() {
            let style = format!(r#"class="estimate" stroke="{}" stroke-width="3""#, color(n));
            map.rect(&mut out, ox, oy, &track[t], &style);
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64) -> BBox {
        BBox::new(x, 0.0, x + 0.1, 0.2)
    }

    #[test]
    fn single_box() {
        let est = vec![vec![b(0.1)]];
        let svg = render_svg(&PlotInput { estimates: &est, truth: None, obs: None, frames: &[] }).unwrap();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches(r#"class="estimate""#).count(), 1);
    }

    #[test]
    fn element_count_scales() {
        let est: Vec<Vec<BBox>> = (0..3).map(|n| (0..5).map(|t| b(0.1 * (n + t) as f64)).collect()).collect();
        let truth = est.clone();
        let obs = ObservationSequence::from_boxes((0..5).map(|t| vec![b(0.1 * t as f64)]).collect()).unwrap();
        let svg = render_svg(&PlotInput {
            estimates: &est,
            truth: Some(&truth),
            obs: Some(&obs),
            frames: &[0, 2, 4],
        })
        .unwrap();
        assert_eq!(svg.matches(r#"class="estimate""#).count(), 9);
        assert_eq!(svg.matches(r#"class="truth""#).count(), 9);
        assert_eq!(svg.matches(r#"class="obs""#).count(), 3);
        let again = render_svg(&PlotInput {
            estimates: &est,
            truth: Some(&truth),
            obs: Some(&obs),
            frames: &[0, 2, 4],
        })
        .unwrap();
        assert_eq!(svg, again);
    }

    #[test]
    fn rejects_empty_and_out_of_range() {
        assert!(render_svg(&PlotInput { estimates: &[], truth: None, obs: None, frames: &[] }).is_err());
        let est = vec![vec![b(0.1)]];
        assert!(matches!(
            render_svg(&PlotInput { estimates: &est, truth: None, obs: None, frames: &[3] }),
            Err(Error::FrameRange(_))
        ));
    }
}
