//! Synthetic single-source bounding-box trajectories built from piece-wise
//! elementary motions, and multi-source test scenes derived from them.
//!
//! Each coordinate sequence is split into at most `s_max` segments. Every
//! segment follows one elementary motion evaluated in segment-local time, and
//! its free offset is chosen so that the segment starts exactly where the
//! previous segment's function lands at the boundary frame.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::formats;
use crate::geometry::BBox;
use crate::rng::{self, Rng};
use crate::scene::{Detection, ObservationSequence, Scene};

pub type BoxTrajectory = Vec<BBox>;

const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionKind {
    Static,
    ConstantVelocity,
    ConstantAcceleration,
    Sinusoid,
}

impl MotionKind {
    pub const ALL: [MotionKind; 4] = [
        MotionKind::Static,
        MotionKind::ConstantVelocity,
        MotionKind::ConstantAcceleration,
        MotionKind::Sinusoid,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementaryMotion {
    Static { a0: f64 },
    ConstantVelocity { a1: f64, a0: f64 },
    ConstantAcceleration { a2: f64, a1: f64, a0: f64 },
    Sinusoid { a: f64, omega: f64, phi0: f64 },
}

impl ElementaryMotion {
    pub fn kind(&self) -> MotionKind {
        match self {
            ElementaryMotion::Static { .. } => MotionKind::Static,
            ElementaryMotion::ConstantVelocity { .. } => MotionKind::ConstantVelocity,
            ElementaryMotion::ConstantAcceleration { .. } => MotionKind::ConstantAcceleration,
            ElementaryMotion::Sinusoid { .. } => MotionKind::Sinusoid,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            ElementaryMotion::Static { a0 } => a0,
            ElementaryMotion::ConstantVelocity { a1, a0 } => a1 * t + a0,
            ElementaryMotion::ConstantAcceleration { a2, a1, a0 } => a2 * t * t + a1 * t + a0,
            ElementaryMotion::Sinusoid { a, omega, phi0 } => a * (omega * t + phi0).sin(),
        }
    }

    /// Value at local time `tau` of the segment anchored so that `tau = 0`
    /// evaluates to exactly `start`.
    pub fn anchored(&self, start: f64, tau: f64) -> f64 {
        match *self {
            ElementaryMotion::Static { .. } => start,
            ElementaryMotion::ConstantVelocity { a1, .. } => a1 * tau + start,
            ElementaryMotion::ConstantAcceleration { a2, a1, .. } => a2 * tau * tau + a1 * tau + start,
            ElementaryMotion::Sinusoid { .. } => {
                if tau == 0.0 {
                    start
                } else {
                    start + (self.eval(tau) - self.eval(0.0))
                }
            }
        }
    }

    /// Sets the free offset of a polynomial motion; sinusoids are anchored
    /// through [`ElementaryMotion::anchored`] instead.
    fn with_offset(self, start: f64) -> Self {
        match self {
            ElementaryMotion::Static { .. } => ElementaryMotion::Static { a0: start },
            ElementaryMotion::ConstantVelocity { a1, .. } => ElementaryMotion::ConstantVelocity { a1, a0: start },
            ElementaryMotion::ConstantAcceleration { a2, a1, .. } => {
                ElementaryMotion::ConstantAcceleration { a2, a1, a0: start }
            }
            s @ ElementaryMotion::Sinusoid { .. } => s,
        }
    }
}

/// Mean and standard deviation of a Gaussian (or of the log of a log-normal).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussParam {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussParam {
    pub const fn new(mu: f64, sigma: f64) -> Self {
        GaussParam { mu, sigma }
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        let e: f64 = StandardNormal.sample(rng);
        self.mu + self.sigma * e
    }

    fn sample_lognormal(&self, rng: &mut Rng) -> Result<f64> {
        if self.sigma == 0.0 {
            return Ok(self.mu.exp());
        }
        let d = LogNormal::new(self.mu, self.sigma)
            .map_err(|e| Error::Config(format!("log-normal parameters: {e}")))?;
        Ok(d.sample(rng))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajGenConfig {
    pub seq_len: usize,
    pub s_max: usize,
    /// Probabilities of static, constant velocity, constant acceleration and
    /// sinusoid segments.
    pub kind_probabilities: [f64; 4],
    pub a1: GaussParam,
    pub a2: GaussParam,
    pub omega: GaussParam,
    pub phi0: GaussParam,
    /// Log-normal parameters of the initial box width.
    pub b0: GaussParam,
    /// Log-normal parameters of the height/width ratio.
    pub ratio: GaussParam,
}

impl Default for TrajGenConfig {
    fn default() -> Self {
        TrajGenConfig {
            seq_len: 60,
            s_max: 3,
            kind_probabilities: [0.25; 4],
            a1: GaussParam::new(0.0, 0.005),
            a2: GaussParam::new(0.0, 0.0002),
            omega: GaussParam::new(0.05, 0.02),
            phi0: GaussParam::new(0.0, PI),
            b0: GaussParam::new(0.1f64.ln(), 0.5),
            ratio: GaussParam::new(2.5f64.ln(), 0.3),
        }
    }
}

impl TrajGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len < 1 {
            return Err(Error::Config("sequence length must be at least 1".into()));
        }
        if self.s_max < 1 {
            return Err(Error::Config("s_max must be at least 1".into()));
        }
        let p = &self.kind_probabilities;
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("motion kind probabilities must be nonnegative".into()));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "motion kind probabilities sum to {total}, expected 1"
            )));
        }
        for (name, g) in [
            ("a1", self.a1),
            ("a2", self.a2),
            ("omega", self.omega),
            ("phi0", self.phi0),
            ("b0", self.b0),
            ("ratio", self.ratio),
        ] {
            if !g.mu.is_finite() || !g.sigma.is_finite() || g.sigma < 0.0 {
                return Err(Error::Config(format!(
                    "{name}: mean must be finite and sigma nonnegative"
                )));
            }
        }
        Ok(())
    }
}

/// Segment layout shared by the x, y and width sequences of one trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentPlan {
    seq_len: usize,
    /// Strictly increasing start frames of segments 2..s, all in 1..seq_len.
    boundaries: Vec<usize>,
}

impl SegmentPlan {
    pub fn new(seq_len: usize, boundaries: Vec<usize>) -> Result<Self> {
        if seq_len == 0 {
            return Err(Error::Config("sequence length must be at least 1".into()));
        }
        let mut prev = 0;
        for &b in &boundaries {
            if b <= prev || b >= seq_len {
                return Err(Error::Config(format!(
                    "segment boundaries {boundaries:?} must be strictly increasing inside 1..{seq_len}"
                )));
            }
            prev = b;
        }
        Ok(SegmentPlan { seq_len, boundaries })
    }

    /// Draws the segment count uniformly in 1..=s_max (capped by the sequence
    /// length) and the cut points uniformly without replacement.
    pub fn sample(rng: &mut Rng, cfg: &TrajGenConfig) -> Self {
        let max_segments = cfg.s_max.min(cfg.seq_len);
        let s = rng.random_range(1..=max_segments);
        let mut cuts: Vec<usize> = if s > 1 {
            sample_indices(rng, cfg.seq_len - 1, s - 1)
                .into_iter()
                .map(|i| i + 1)
                .collect()
        } else {
            Vec::new()
        };
        cuts.sort_unstable();
        SegmentPlan {
            seq_len: cfg.seq_len,
            boundaries: cuts,
        }
    }

    pub fn num_segments(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// (start, end) frame ranges of every segment.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut starts = vec![0];
        starts.extend_from_slice(&self.boundaries);
        let mut ends = self.boundaries.clone();
        ends.push(self.seq_len);
        starts.into_iter().zip(ends).collect()
    }
}

/// Evaluates a piece-wise sequence. Returns the values and, per boundary, the
/// (left limit, right limit) pair: the previous segment's function and the new
/// segment's function, both evaluated at the boundary frame.
pub fn compose(
    plan: &SegmentPlan,
    motions: &[ElementaryMotion],
    start: f64,
) -> Result<(Vec<f64>, Vec<(f64, f64)>)> {
    if motions.len() != plan.num_segments() {
        return Err(Error::Config(format!(
            "{} motions for {} segments",
            motions.len(),
            plan.num_segments()
        )));
    }
    let mut values = Vec::with_capacity(plan.seq_len);
    let mut limits = Vec::with_capacity(plan.boundaries.len());
    let mut offset = start;
    for (i, ((begin, end), motion)) in plan.segments().into_iter().zip(motions).enumerate() {
        let motion = motion.with_offset(offset);
        if i > 0 {
            let right = motion.anchored(offset, 0.0);
            let left = offset;
            limits.push((left, right));
        }
        for t in begin..end {
            values.push(motion.anchored(offset, (t - begin) as f64));
        }
        offset = motion.anchored(offset, (end - begin) as f64);
    }
    Ok((values, limits))
}

fn sample_kind(rng: &mut Rng, p: &[f64; 4]) -> MotionKind {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (kind, &pk) in MotionKind::ALL.iter().zip(p) {
        acc += pk;
        if u < acc {
            return *kind;
        }
    }
    // Rounding can leave u above the accumulated total; take the last kind
    // with nonzero mass.
    MotionKind::ALL
        .iter()
        .zip(p)
        .rev()
        .find(|(_, &pk)| pk > 0.0)
        .map(|(k, _)| *k)
        .unwrap_or(MotionKind::Static)
}

/// Samples one elementary motion. The offset is filled in later by [`compose`].
/// Sinusoid amplitudes are drawn so the peak speed `a * omega` follows the
/// velocity distribution.
pub fn sample_motion(rng: &mut Rng, cfg: &TrajGenConfig) -> ElementaryMotion {
    match sample_kind(rng, &cfg.kind_probabilities) {
        MotionKind::Static => ElementaryMotion::Static { a0: 0.0 },
        MotionKind::ConstantVelocity => ElementaryMotion::ConstantVelocity {
            a1: cfg.a1.sample(rng),
            a0: 0.0,
        },
        MotionKind::ConstantAcceleration => ElementaryMotion::ConstantAcceleration {
            a2: cfg.a2.sample(rng),
            a1: cfg.a1.sample(rng),
            a0: 0.0,
        },
        MotionKind::Sinusoid => {
            let omega = cfg.omega.sample(rng);
            let phi0 = cfg.phi0.sample(rng);
            let speed = cfg.a1.sample(rng);
            let a = if omega.abs() > 1e-9 { speed / omega } else { 0.0 };
            ElementaryMotion::Sinusoid { a, omega, phi0 }
        }
    }
}

/// One coordinate sequence on a given segment plan.
pub fn gen_coordinate_sequence_on(
    rng: &mut Rng,
    cfg: &TrajGenConfig,
    plan: &SegmentPlan,
    start: f64,
) -> Result<Vec<f64>> {
    let motions: Vec<_> = (0..plan.num_segments()).map(|_| sample_motion(rng, cfg)).collect();
    Ok(compose(plan, &motions, start)?.0)
}

/// One coordinate sequence with its own segment plan.
pub fn gen_coordinate_sequence(rng: &mut Rng, cfg: &TrajGenConfig, start: f64) -> Result<Vec<f64>> {
    cfg.validate()?;
    let plan = SegmentPlan::sample(rng, cfg);
    gen_coordinate_sequence_on(rng, cfg, &plan, start)
}

/// Samples one box trajectory. x, y and the log-width follow independent
/// piece-wise sequences on a shared segment plan; the height is the width
/// times a per-trajectory constant ratio.
pub fn gen_box_trajectory(rng: &mut Rng, cfg: &TrajGenConfig) -> Result<BoxTrajectory> {
    cfg.validate()?;
    for _ in 0..MAX_ATTEMPTS {
        let x0: f64 = rng.random();
        let y0: f64 = rng.random();
        let b0 = cfg.b0.sample_lognormal(rng)?;
        let ratio = cfg.ratio.sample_lognormal(rng)?;
        let plan = SegmentPlan::sample(rng, cfg);
        let x = gen_coordinate_sequence_on(rng, cfg, &plan, x0)?;
        let y = gen_coordinate_sequence_on(rng, cfg, &plan, y0)?;
        let log_w = gen_coordinate_sequence_on(rng, cfg, &plan, b0.ln())?;
        let traj: BoxTrajectory = (0..cfg.seq_len)
            .map(|t| {
                let w = log_w[t].exp();
                let h = w * ratio;
                BBox::new(x[t], y[t] - h, x[t] + w, y[t])
            })
            .collect();
        if traj.iter().all(BBox::is_valid) {
            return Ok(traj);
        }
    }
    Err(Error::Sampling(MAX_ATTEMPTS))
}

/// Generates `count` trajectories. Trajectory `i` uses a generator derived
/// from `(seed, i)`, so the output does not depend on thread scheduling.
pub fn gen_trajectories(seed: u64, cfg: &TrajGenConfig, count: usize) -> Result<Vec<BoxTrajectory>> {
    cfg.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::rng_for(seed, &[rng::stream::TRAJGEN, i as u64]);
            gen_box_trajectory(&mut rng, cfg)
        })
        .collect()
}

/// Generates a dataset and writes it in the trajectory file format.
pub fn gen_dataset(seed: u64, cfg: &TrajGenConfig, count: usize, out_path: &Path) -> Result<Vec<BoxTrajectory>> {
    if count == 0 {
        return Err(Error::Config("dataset count must be at least 1".into()));
    }
    let data = gen_trajectories(seed, cfg, count)?;
    formats::write_trajectory_file(out_path, &data)?;
    Ok(data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub n_sources: usize,
    pub seq_len: usize,
    pub occlusion_rate: f64,
    pub noise_scale: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            n_sources: 3,
            seq_len: 60,
            occlusion_rate: 0.15,
            noise_scale: 0.04,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sources < 1 {
            return Err(Error::Config("a scene needs at least one source".into()));
        }
        if self.seq_len < 1 {
            return Err(Error::Config("sequence length must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.occlusion_rate) {
            return Err(Error::Config("occlusion rate must lie in [0, 1)".into()));
        }
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return Err(Error::Config("noise scale must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Perturbs a box with zero-mean Gaussian noise whose per-coordinate standard
/// deviation is `noise_scale` times the box width (x) or height (y).
pub fn perturb_box(rng: &mut Rng, b: &BBox, noise_scale: f64) -> BBox {
    if noise_scale == 0.0 {
        return *b;
    }
    let scales = [b.width(), b.height(), b.width(), b.height()];
    for _ in 0..MAX_ATTEMPTS {
        let mut out = b.0;
        for (v, s) in out.iter_mut().zip(scales) {
            let e: f64 = StandardNormal.sample(rng);
            *v += noise_scale * s * e;
        }
        let candidate = BBox(out);
        if candidate.is_valid() {
            return candidate;
        }
    }
    *b
}

/// Generates independent trajectories, drops each detection with probability
/// `occlusion_rate`, perturbs the survivors and shuffles them within frames.
/// Detections of the first frame are never dropped, so that every source can
/// be initialized from it.
pub fn gen_multisource_scene(rng: &mut Rng, traj_cfg: &TrajGenConfig, cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let traj_cfg = TrajGenConfig {
        seq_len: cfg.seq_len,
        ..traj_cfg.clone()
    };
    let truth: Vec<BoxTrajectory> = (0..cfg.n_sources)
        .map(|_| gen_box_trajectory(rng, &traj_cfg))
        .collect::<Result<_>>()?;
    let obs = observe_tracks(rng, &truth, cfg.occlusion_rate, cfg.noise_scale)?;
    Ok(Scene { truth, obs })
}

/// Turns ground-truth tracks into shuffled, noisy, partially missing detections.
/// The first frame is always complete.
pub fn observe_tracks(
    rng: &mut Rng,
    truth: &[BoxTrajectory],
    occlusion_rate: f64,
    noise_scale: f64,
) -> Result<ObservationSequence> {
    let seq_len = truth.first().map_or(0, Vec::len);
    let mut frames = Vec::with_capacity(seq_len);
    for t in 0..seq_len {
        let mut frame = Vec::with_capacity(truth.len());
        for (n, track) in truth.iter().enumerate() {
            let keep = t == 0 || occlusion_rate == 0.0 || rng.random::<f64>() >= occlusion_rate;
            if keep {
                frame.push(Detection::labelled(perturb_box(rng, &track[t], noise_scale), n));
            }
        }
        shuffle(rng, &mut frame);
        frames.push(frame);
    }
    ObservationSequence::new(frames)
}

fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Scene used for occlusion checks: the detections of `source` are removed on
/// frames `gap`.
pub fn remove_detections(obs: &mut ObservationSequence, source: usize, gap: std::ops::Range<usize>) {
    for t in gap {
        if let Some(frame) = obs.frames_mut().get_mut(t) {
            frame.retain(|d| d.label != Some(source));
        }
    }
}
