//! Baseline dynamical models for the VEM loop: a linear-Gaussian model (VKF)
//! and a deterministic autoregressive LSTM (Deep AR).

use std::path::Path;
use std::sync::OnceLock;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::geometry::Vec4;
use crate::nn::{self, Activation, Dense, Layout, Lstm};
use crate::paramio::{self, ModelKind};
use crate::rng::{self, stream, Rng};
use crate::scene::ObservationSequence;
use crate::srnn::{GaussianParams, RecurrentState, H_DIM, S_DIM};
use crate::train::{self, TrainConfig, TrainOutcome, Trainable};
use crate::vem::{self, Dynamics, VemConfig, VemOutput};

/// Linear dynamics `s_t = D s_{t-1} + noise`; the process covariance is
/// estimated inside the VEM loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynParams {
    pub transition: [[f64; 4]; 4],
}

impl Default for LinearDynParams {
    fn default() -> Self {
        let mut d = [[0.0; 4]; 4];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        LinearDynParams { transition: d }
    }
}

impl LinearDynParams {
    pub fn apply(&self, x: &Vec4) -> Vec4 {
        std::array::from_fn(|i| (0..4).map(|j| self.transition[i][j] * x[j]).sum())
    }
}

/// Tracks with the VKF model plugged into the VEM loop.
pub fn vkf_run(obs: &ObservationSequence, params: &LinearDynParams, cfg: &VemConfig) -> Result<VemOutput> {
    vem::run(obs, Dynamics::Vkf(params.clone()), cfg)
}

/// Tracks with the Deep AR model plugged into the VEM loop (no E-Z step).
pub fn deep_ar_run(obs: &ObservationSequence, params: &DeepArParams, cfg: &VemConfig) -> Result<VemOutput> {
    vem::run(obs, Dynamics::DeepAr(params.clone()), cfg)
}

struct DeepArArch {
    layout: Layout,
    lstm: Lstm,
    head: Dense,
}

fn arch() -> &'static DeepArArch {
    static ARCH: OnceLock<DeepArArch> = OnceLock::new();
    ARCH.get_or_init(|| {
        let mut layout = Layout::default();
        let lstm = Lstm::register(&mut layout, "rnn", S_DIM, H_DIM);
        let head = Dense::register(&mut layout, "head", H_DIM, 2 * S_DIM, Activation::Identity);
        DeepArArch { layout, lstm, head }
    })
}

/// LSTM over `s_{1:t-1}` followed by a linear head giving the mean and
/// log-variance of `s_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepArParams {
    data: Vec<f64>,
}

impl DeepArParams {
    pub fn layout() -> &'static Layout {
        &arch().layout
    }

    pub fn init(seed: u64) -> Self {
        let a = arch();
        let mut rng = rng::rng_for(seed, &[stream::INIT]);
        let mut data = vec![0.0; a.layout.len()];
        a.lstm.init(&mut data, &mut rng);
        a.head.init(&mut data, &mut rng);
        DeepArParams { data }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        paramio::save(path, ModelKind::DeepAr, Self::layout(), &self.data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(DeepArParams {
            data: paramio::load(path, ModelKind::DeepAr, Self::layout())?,
        })
    }

    pub fn step(&self, s_prev: &Vec4, state: &RecurrentState) -> RecurrentState {
        let r = arch().lstm.forward(&self.data, s_prev, &state.h, &state.c);
        let mut out = RecurrentState::default();
        out.h.copy_from_slice(&r.h);
        out.c.copy_from_slice(&r.c);
        out
    }

    pub fn predict(&self, state: &RecurrentState) -> GaussianParams {
        let y = arch().head.forward(&self.data, &state.h);
        GaussianParams {
            mean: std::array::from_fn(|d| y[d]),
            log_var: std::array::from_fn(|d| y[S_DIM + d]),
        }
    }

    /// Log-likelihood `sum_t log N(s_t; mu_t, v_t)`. Where `generated[t]` is
    /// set, the recurrence reads the previous predicted mean instead of
    /// `s_{t-1}`.
    pub fn log_likelihood(&self, seq: &[Vec4], generated: &[bool]) -> f64 {
        self.pass(seq, generated, None)
    }

    /// Negative log-likelihood and its gradient.
    pub fn loss_and_grad(&self, seq: &[Vec4], generated: &[bool]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; self.data.len()];
        let ll = self.pass(seq, generated, Some(&mut g));
        (-ll, g)
    }

    fn pass(&self, seq: &[Vec4], generated: &[bool], grad: Option<&mut [f64]>) -> f64 {
        let a = arch();
        let p = &self.data;
        let mut h = vec![0.0; H_DIM];
        let mut c = vec![0.0; H_DIM];
        let mut mu_prev = vec![0.0; S_DIM];
        let mut ll = 0.0;
        let mut steps = Vec::new();
        for t in 0..seq.len() {
            let x: Vec<f64> = if t == 0 {
                vec![0.0; S_DIM]
            } else if generated[t] {
                mu_prev.clone()
            } else {
                seq[t - 1].to_vec()
            };
            let cache = a.lstm.forward(p, &x, &h, &c);
            let y = a.head.forward(p, &cache.h);
            ll += nn::log_normal_diag(&seq[t], &y[..S_DIM], &y[S_DIM..]);
            mu_prev = y[..S_DIM].to_vec();
            let prev = (std::mem::replace(&mut h, cache.h.clone()), std::mem::replace(&mut c, cache.c.clone()));
            if grad.is_some() {
                steps.push((x, prev, cache, y));
            }
        }
        let Some(g) = grad else {
            return ll;
        };
        let mut dh_next = vec![0.0; H_DIM];
        let mut dc_next = vec![0.0; H_DIM];
        let mut dmu_next = vec![0.0; S_DIM];
        for t in (0..seq.len()).rev() {
            let (x, (hp, cp), cache, y) = &steps[t];
            let (_, dmu, dlv) = nn::log_normal_diag_grad(&seq[t], &y[..S_DIM], &y[S_DIM..]);
            let dy: Vec<f64> = (0..S_DIM)
                .map(|d| -dmu[d] + dmu_next[d])
                .chain(dlv.iter().map(|v| -v))
                .collect();
            let mut dh = dh_next.clone();
            a.head.backward(p, &cache.h, y, &dy, g, &mut dh);
            let (dx, dhp, dcp) = a.lstm.backward(p, x, hp, cp, cache, &dh, &dc_next, g);
            dh_next = dhp;
            dc_next = dcp;
            dmu_next = if t > 0 && generated[t] { dx } else { vec![0.0; S_DIM] };
        }
        ll
    }
}

fn sample_generated(rng: &mut Rng, len: usize, tf: f64) -> Vec<bool> {
    (0..len).map(|t| t > 0 && tf < 1.0 && rng.random::<f64>() >= tf).collect()
}

impl Trainable for DeepArParams {
    fn params(&self) -> &[f64] {
        &self.data
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn loss_and_grad(&self, seq: &[Vec4], rng: &mut Rng, tf: f64) -> (f64, Vec<f64>) {
        let gen = sample_generated(rng, seq.len(), tf);
        DeepArParams::loss_and_grad(self, seq, &gen)
    }

    fn objective(&self, seq: &[Vec4], rng: &mut Rng, tf: f64) -> f64 {
        let gen = sample_generated(rng, seq.len(), tf);
        self.log_likelihood(seq, &gen)
    }
}

/// Maximum-likelihood training of the Deep AR model with the shared harness.
pub fn train_deep_ar(
    train_set: &[Vec<Vec4>],
    val_set: &[Vec<Vec4>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<DeepArParams>> {
    if train_set.iter().chain(val_set).any(Vec::is_empty) {
        return Err(Error::Config("training sequences must be nonempty".into()));
    }
    train::train(DeepArParams::init(cfg.seed), train_set, val_set, cfg)
}
