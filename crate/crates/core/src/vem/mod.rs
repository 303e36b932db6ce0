//! Variational EM tracking: cascade initialization followed by iterations of
//! the E-W step, one sampling pass per source (E-Z and E-S interleaved frame
//! by frame), and the optional fine-tuning and covariance M-steps.

mod steps;

pub use steps::{
    build_phi, e_s_update, e_w_update, entropy, expand_phi, log_beta, m_step_phi, m_step_phi_diag, softmax_in_place,
};

use rayon::prelude::*;

use crate::baselines::{DeepArParams, LinearDynParams};
use crate::error::{Error, Result, Step};
use crate::formats::TrackingResult;
use crate::geometry::{BBox, Vec4};
use crate::nn::Adam;
use crate::rng::{self, stream};
use crate::scene::ObservationSequence;
use crate::srnn::{self, RecurrentState, SrnnParams};

#[derive(Debug, Clone, PartialEq)]
pub struct VemConfig {
    /// Number of sources; defaults to the number of first-frame detections.
    pub n_sources: Option<usize>,
    pub r_phi: f64,
    pub iterations: usize,
    pub init_subseq_len: usize,
    pub init_iterations: usize,
    pub fine_tune: bool,
    pub m_step_phi: bool,
    pub fine_tune_lr: f64,
    pub encoder_input: EncoderInput,
    pub seed: u64,
}

/// What the encoder reads from the previous iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderInput {
    /// The sampled sequence `s^{(i-1)}`.
    Samples,
    /// The posterior means `m^{(i-1)}`.
    Means,
}

impl Default for VemConfig {
    fn default() -> Self {
        VemConfig {
            n_sources: None,
            r_phi: 0.04,
            iterations: 70,
            init_subseq_len: 30,
            init_iterations: 20,
            fine_tune: false,
            m_step_phi: false,
            fine_tune_lr: 1e-4,
            encoder_input: EncoderInput::Samples,
            seed: 0,
        }
    }
}

impl VemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sources == Some(0) {
            return Err(Error::Config("at least one source is required".into()));
        }
        if !(self.r_phi > 0.0 && self.r_phi < 1.0) {
            return Err(Error::Config(format!("r_phi must lie in (0, 1), got {}", self.r_phi)));
        }
        if self.iterations == 0 {
            return Err(Error::Config("at least one VEM iteration is required".into()));
        }
        if self.init_subseq_len == 0 {
            return Err(Error::Config("init subsequence length must be at least 1".into()));
        }
        if self.init_iterations == 0 {
            return Err(Error::Config("init iterations must be at least 1".into()));
        }
        if !(self.fine_tune_lr >= 0.0 && self.fine_tune_lr.is_finite()) {
            return Err(Error::Config("fine-tune learning rate must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// The dynamical model providing the per-frame prior `(mu, v)` of each source.
#[derive(Debug, Clone)]
pub enum Dynamics {
    /// One parameter set shared by every source, or one per source.
    Srnn(Vec<SrnnParams>),
    DeepAr(DeepArParams),
    Vkf(LinearDynParams),
}

impl Dynamics {
    fn srnn_for(params: &[SrnnParams], n: usize) -> &SrnnParams {
        if params.len() == 1 {
            &params[0]
        } else {
            &params[n]
        }
    }

    fn check(&self, n_sources: usize) -> Result<()> {
        if let Dynamics::Srnn(p) = self {
            if p.is_empty() || (p.len() != 1 && p.len() != n_sources) {
                return Err(Error::Config(format!(
                    "expected 1 or {n_sources} SRNN parameter sets, got {}",
                    p.len()
                )));
            }
        }
        Ok(())
    }
}

/// Posterior state of the VEM loop. Source-indexed quantities are stored as
/// `[n][t]`, observation-indexed ones as `[t][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VemState {
    pub m: Vec<Vec<Vec4>>,
    pub v: Vec<Vec<Vec4>>,
    pub s: Vec<Vec<Vec4>>,
    pub z: Vec<Vec<Vec4>>,
    /// `eta[t][k][n]`.
    pub eta: Vec<Vec<Vec<f64>>>,
    pub phi: Vec<Vec<Vec4>>,
    /// Process covariance of the linear model, `[n][t]`; empty otherwise.
    pub lambda: Vec<Vec<Vec4>>,
}

impl VemState {
    /// Every source constant at `start[n]` with variance `var[n]`.
    pub fn constant(start: &[Vec4], var: &[Vec4], phi: Vec<Vec<Vec4>>) -> Self {
        let len = phi.len();
        let n = start.len();
        let m: Vec<Vec<Vec4>> = start.iter().map(|x| vec![*x; len]).collect();
        let v: Vec<Vec<Vec4>> = var.iter().map(|x| vec![*x; len]).collect();
        let eta = phi
            .iter()
            .map(|f| vec![vec![1.0 / n as f64; n]; f.len()])
            .collect();
        VemState {
            s: m.clone(),
            z: vec![vec![[0.0; 4]; len]; n],
            lambda: v.clone(),
            m,
            v,
            eta,
            phi,
        }
    }

    pub fn num_sources(&self) -> usize {
        self.m.len()
    }

    pub fn num_frames(&self) -> usize {
        self.phi.len()
    }
}

/// Inputs of one source's sampling pass.
pub struct SourceInput<'a> {
    pub source: usize,
    /// Observation boxes `[t][k]`.
    pub obs: &'a [Vec<Vec4>],
    pub phi: &'a [Vec<Vec4>],
    /// `eta[t][k][n]`; only column `source` is read.
    pub eta: &'a [Vec<Vec<f64>>],
    /// Previous iteration's samples, read by the encoder.
    pub prev_s: &'a [Vec4],
    /// Previous iteration's posterior moments, used by the linear model at
    /// the first frame.
    pub prev_m: &'a [Vec4],
    pub prev_v: &'a [Vec4],
    /// Process covariance of the linear model.
    pub lambda: &'a [Vec4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourcePass {
    pub m: Vec<Vec4>,
    pub v: Vec<Vec4>,
    pub s: Vec<Vec4>,
    pub z: Vec<Vec4>,
    /// Reparameterization noise of every `z_t`.
    pub eps_z: Vec<Vec4>,
    /// Prior mean and variance of every frame.
    pub mu: Vec<Vec4>,
    pub prior_var: Vec<Vec4>,
}

/// One frame-by-frame pass for one source. For each frame: sample `z_t` from
/// the encoder (run over the previous samples), get the prior of `s_t` from
/// the decoder (run over the current samples), apply the E-S update and
/// sample `s_t ~ N(m_t, V_t)`. `noise` supplies standard-normal 4-vectors,
/// `z` noise first, then `s` noise.
pub fn sampling_pass(model: &Dynamics, input: &SourceInput<'_>, noise: &mut dyn FnMut() -> Vec4) -> SourcePass {
    let len = input.obs.len();
    let n = input.source;
    let mut out = SourcePass {
        m: Vec::with_capacity(len),
        v: Vec::with_capacity(len),
        s: Vec::with_capacity(len),
        z: Vec::with_capacity(len),
        eps_z: Vec::with_capacity(len),
        mu: Vec::with_capacity(len),
        prior_var: Vec::with_capacity(len),
    };
    let mut enc_state = RecurrentState::default();
    let mut dec_state = RecurrentState::default();
    let mut z_prev = [0.0; 4];
    for t in 0..len {
        let (mu, var) = match model {
            Dynamics::Srnn(params) => {
                let p = Dynamics::srnn_for(params, n);
                let prev_in = if t == 0 { [0.0; 4] } else { input.prev_s[t - 1] };
                let cur_in = if t == 0 { [0.0; 4] } else { out.s[t - 1] };
                enc_state = srnn::recurrence_step(p, &prev_in, &enc_state);
                dec_state = srnn::recurrence_step(p, &cur_in, &dec_state);
                let q = srnn::encode_z(p, &enc_state, &input.prev_s[t], &z_prev);
                let eps = noise();
                let z = srnn::reparam(&q, &eps);
                let d = srnn::decode_s(p, &dec_state, &z);
                out.eps_z.push(eps);
                out.z.push(z);
                z_prev = z;
                (d.mean, d.var())
            }
            Dynamics::DeepAr(p) => {
                let cur_in = if t == 0 { [0.0; 4] } else { out.s[t - 1] };
                dec_state = p.step(&cur_in, &dec_state);
                let d = p.predict(&dec_state);
                (d.mean, d.var())
            }
            Dynamics::Vkf(lin) => {
                if t == 0 {
                    (lin.apply(&input.prev_m[0]), input.lambda[0])
                } else {
                    (lin.apply(&out.m[t - 1]), input.lambda[t])
                }
            }
        };
        let eta: Vec<f64> = input.eta[t].iter().map(|row| row[n]).collect();
        let (m, v) = e_s_update(&eta, &input.phi[t], &input.obs[t], &mu, &var);
        let s = match model {
            Dynamics::Vkf(_) => m,
            _ => {
                let e = noise();
                std::array::from_fn(|d| m[d] + v[d].sqrt() * e[d])
            }
        };
        out.mu.push(mu);
        out.prior_var.push(var);
        out.m.push(m);
        out.v.push(v);
        out.s.push(s);
    }
    out
}

/// One Adam step on the Monte Carlo ELBO summed over sources that share
/// `params`. Sources whose objective is not finite are skipped and reported.
pub fn e_z_finetune(
    params: &mut SrnnParams,
    adam: &mut Adam,
    passes: &[(&[Vec4], &[Vec4], &[Vec4])],
) -> Vec<usize> {
    let mut grad = vec![0.0; params.as_slice().len()];
    let mut skipped = Vec::new();
    let parts: Vec<(f64, Vec<f64>)> = passes
        .par_iter()
        .map(|(prev_s, s, eps)| srnn::finetune_loss_and_grad(params, prev_s, s, eps))
        .collect();
    for (i, (loss, g)) in parts.into_iter().enumerate() {
        if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
            log::warn!("fine-tuning skipped for source {i}: non-finite objective");
            skipped.push(i);
            continue;
        }
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    if skipped.len() < passes.len() {
        let before = params.clone();
        adam.step(params.as_mut_slice(), &grad);
        if !params.is_finite() {
            log::warn!("fine-tuning step produced non-finite parameters; reverted");
            *params = before;
        }
    }
    skipped
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub mean_eta_entropy: f64,
    pub mean_v_trace: f64,
}

pub fn format_diagnostics(diag: &[IterationDiagnostics]) -> String {
    let mut out = String::from("iteration,mean_eta_entropy,mean_V_trace\n");
    for d in diag {
        out.push_str(&format!("{},{},{}\n", d.iteration, d.mean_eta_entropy, d.mean_v_trace));
    }
    out
}

#[derive(Debug, Clone)]
pub struct VemOutput {
    pub state: VemState,
    /// Piecewise-constant initialization produced by the cascade.
    pub init_m: Vec<Vec<Vec4>>,
    pub diagnostics: Vec<IterationDiagnostics>,
    /// The dynamical model after the run (changed only by fine-tuning).
    pub model: Dynamics,
}

impl VemOutput {
    /// Posterior means `m[n][t]`, the trajectory estimates.
    pub fn trajectories(&self) -> &[Vec<Vec4>] {
        &self.state.m
    }

    pub fn to_result(&self) -> TrackingResult {
        TrackingResult {
            tracks: self
                .state
                .m
                .iter()
                .map(|tr| tr.iter().map(|x| BBox(*x)).collect())
                .collect(),
            eta: self.state.eta.clone(),
        }
    }
}

struct Options {
    fine_tune: bool,
    m_step_phi: bool,
}

struct Engine {
    model: Dynamics,
    encoder_input: EncoderInput,
    adams: Vec<Adam>,
    fine_tune_lr: f64,
}

impl Engine {
    /// Runs `iters` iterations on `obs`, updating `state` in place. Noise of
    /// iteration `i`, source `n` comes from the generator at
    /// `seed_path ++ [i, n]`.
    fn iterate(
        &mut self,
        obs: &[Vec<Vec4>],
        state: &mut VemState,
        iters: usize,
        seed: u64,
        seed_path: &[u64],
        opts: &Options,
        mut diag: Option<&mut Vec<IterationDiagnostics>>,
    ) -> Result<()> {
        let n_src = state.num_sources();
        let len = obs.len();
        for i in 0..iters {
            // E-W
            for t in 0..len {
                if obs[t].is_empty() {
                    continue;
                }
                let m_t: Vec<Vec4> = state.m.iter().map(|tr| tr[t]).collect();
                let v_t: Vec<Vec4> = state.v.iter().map(|tr| tr[t]).collect();
                let eta = e_w_update(&m_t, &v_t, &state.phi[t], &obs[t]);
                if eta.iter().flatten().any(|x| !x.is_finite()) {
                    return Err(Error::Numerical {
                        step: Step::EW,
                        iteration: i,
                        frame: t,
                        source_index: 0,
                    });
                }
                state.eta[t] = eta;
            }

            // E-Z / E-S
            let model = &self.model;
            let enc_in = self.encoder_input;
            let st = &*state;
            let passes: Vec<SourcePass> = (0..n_src)
                .into_par_iter()
                .map(|n| {
                    let mut path = seed_path.to_vec();
                    path.extend([i as u64, n as u64]);
                    let mut r = rng::rng_for(seed, &path);
                    let input = SourceInput {
                        source: n,
                        obs,
                        phi: &st.phi,
                        eta: &st.eta,
                        prev_s: match enc_in {
                            EncoderInput::Samples => &st.s[n],
                            EncoderInput::Means => &st.m[n],
                        },
                        prev_m: &st.m[n],
                        prev_v: &st.v[n],
                        lambda: st.lambda.get(n).map_or(&[][..], |l| &l[..]),
                    };
                    sampling_pass(model, &input, &mut || srnn::standard_normal4(&mut r))
                })
                .collect();
            for (n, p) in passes.iter().enumerate() {
                for t in 0..len {
                    let ok = p.m[t].iter().chain(&p.s[t]).all(|x| x.is_finite())
                        && p.v[t].iter().all(|x| x.is_finite() && *x > 0.0);
                    if !ok {
                        return Err(Error::Numerical {
                            step: Step::ES,
                            iteration: i,
                            frame: t,
                            source_index: n,
                        });
                    }
                }
            }

            // optional fine-tuning of the SRNN
            if opts.fine_tune {
                if let Dynamics::Srnn(params) = &mut self.model {
                    let groups: Vec<Vec<usize>> = if params.len() == 1 {
                        vec![(0..n_src).collect()]
                    } else {
                        (0..n_src).map(|n| vec![n]).collect()
                    };
                    if self.adams.is_empty() {
                        self.adams = params
                            .iter()
                            .map(|p| Adam::new(p.as_slice().len(), self.fine_tune_lr))
                            .collect();
                    }
                    for (gi, group) in groups.iter().enumerate() {
                        let data: Vec<(&[Vec4], &[Vec4], &[Vec4])> = group
                            .iter()
                            .map(|&n| (&state.s[n][..], &passes[n].s[..], &passes[n].eps_z[..]))
                            .collect();
                        e_z_finetune(&mut params[gi], &mut self.adams[gi], &data);
                    }
                }
            }

            // M-step for the linear model's process covariance
            if matches!(self.model, Dynamics::Vkf(_)) {
                for (n, p) in passes.iter().enumerate() {
                    for t in 0..len {
                        let v_prev = if t == 0 { state.v[n][0] } else { p.v[t - 1] };
                        state.lambda[n][t] =
                            std::array::from_fn(|d| (p.m[t][d] - p.mu[t][d]).powi(2) + p.v[t][d] + v_prev[d]);
                    }
                }
            }

            for (n, p) in passes.into_iter().enumerate() {
                state.m[n] = p.m;
                state.v[n] = p.v;
                state.s[n] = p.s;
                if !p.z.is_empty() {
                    state.z[n] = p.z;
                }
            }

            if opts.m_step_phi {
                for t in 0..len {
                    let m_t: Vec<Vec4> = state.m.iter().map(|tr| tr[t]).collect();
                    let v_t: Vec<Vec4> = state.v.iter().map(|tr| tr[t]).collect();
                    for k in 0..obs[t].len() {
                        let phi = m_step_phi_diag(&state.eta[t][k], &obs[t][k], &m_t, &v_t);
                        if phi.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                            return Err(Error::Numerical {
                                step: Step::M,
                                iteration: i,
                                frame: t,
                                source_index: 0,
                            });
                        }
                        state.phi[t][k] = phi;
                    }
                }
            }

            if let Some(d) = diag.as_deref_mut() {
                d.push(diagnostics(i, state));
            }
        }
        Ok(())
    }
}

fn diagnostics(iteration: usize, state: &VemState) -> IterationDiagnostics {
    let rows: Vec<&Vec<f64>> = state.eta.iter().flatten().collect();
    let mean_eta_entropy = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| entropy(r)).sum::<f64>() / rows.len() as f64
    };
    let traces: Vec<f64> = state.v.iter().flatten().map(|v| v.iter().sum()).collect();
    IterationDiagnostics {
        iteration,
        mean_eta_entropy,
        mean_v_trace: traces.iter().sum::<f64>() / traces.len().max(1) as f64,
    }
}

fn boxes(obs: &ObservationSequence) -> Vec<Vec<Vec4>> {
    obs.frames()
        .iter()
        .map(|f| f.iter().map(|d| d.bbox.0).collect())
        .collect()
}

struct Prepared {
    obs: Vec<Vec<Vec4>>,
    slots: Vec<Vec4>,
    start: Vec<Vec4>,
    start_var: Vec<Vec4>,
}

fn prepare(obs: &ObservationSequence, cfg: &VemConfig) -> Result<Prepared> {
    cfg.validate()?;
    if obs.is_empty() {
        return Err(Error::Init("empty observation sequence".into()));
    }
    let first: Vec<BBox> = obs.frame(0).iter().map(|d| d.bbox).collect();
    if first.is_empty() {
        return Err(Error::Init("no detection at the first frame".into()));
    }
    let slots = build_phi(&first, cfg.r_phi)?;
    let n = cfg.n_sources.unwrap_or(first.len());
    if n > first.len() {
        return Err(Error::Init(format!(
            "{n} sources requested but only {} first-frame detections",
            first.len()
        )));
    }
    Ok(Prepared {
        obs: boxes(obs),
        start: first[..n].iter().map(|b| b.0).collect(),
        start_var: slots[..n].to_vec(),
        slots,
    })
}

/// Cascade initialization: the sequence is cut into subsequences of length
/// `init_subseq_len`; each is initialized constant (at the first-frame
/// detections, then at the previous subsequence's final estimate) and run for
/// `init_iterations` iterations to produce the hand-off. Returns the
/// concatenated piecewise-constant means `[n][t]`.
pub fn cascade_init(obs: &ObservationSequence, model: &Dynamics, cfg: &VemConfig) -> Result<Vec<Vec<Vec4>>> {
    let prep = prepare(obs, cfg)?;
    model.check(prep.start.len())?;
    cascade(&prep, model, cfg)
}

fn cascade(prep: &Prepared, model: &Dynamics, cfg: &VemConfig) -> Result<Vec<Vec<Vec4>>> {
    let len = prep.obs.len();
    let n = prep.start.len();
    let mut engine = Engine {
        model: model.clone(),
        encoder_input: cfg.encoder_input,
        adams: Vec::new(),
        fine_tune_lr: cfg.fine_tune_lr,
    };
    let opts = Options {
        fine_tune: false,
        m_step_phi: false,
    };
    let mut init: Vec<Vec<Vec4>> = vec![Vec::with_capacity(len); n];
    let mut anchor = prep.start.clone();
    let j = cfg.init_subseq_len;
    let n_sub = len.div_ceil(j);
    for sub in 0..n_sub {
        let range = sub * j..((sub + 1) * j).min(len);
        for (tr, a) in init.iter_mut().zip(&anchor) {
            tr.extend(std::iter::repeat_n(*a, range.len()));
        }
        if sub + 1 == n_sub {
            break;
        }
        let obs = &prep.obs[range.clone()];
        let phi = expand_phi(&prep.slots, obs.iter().map(Vec::len));
        let mut state = VemState::constant(&anchor, &prep.start_var, phi);
        engine.iterate(
            obs,
            &mut state,
            cfg.init_iterations,
            cfg.seed,
            &[stream::CASCADE, sub as u64],
            &opts,
            None,
        )?;
        anchor = state.m.iter().map(|tr| *tr.last().expect("nonempty subsequence")).collect();
    }
    Ok(init)
}

/// Full tracking run: cascade initialization, then `iterations` VEM
/// iterations over the whole sequence. The posterior means are the
/// trajectory estimates.
pub fn run(obs: &ObservationSequence, model: Dynamics, cfg: &VemConfig) -> Result<VemOutput> {
    let prep = prepare(obs, cfg)?;
    let n = prep.start.len();
    model.check(n)?;
    let init_m = cascade(&prep, &model, cfg)?;
    let phi = expand_phi(&prep.slots, prep.obs.iter().map(Vec::len));
    let mut state = VemState::constant(&prep.start, &prep.start_var, phi);
    for (dst, src) in state.m.iter_mut().zip(&init_m) {
        dst.clone_from(src);
    }
    state.s = state.m.clone();
    let mut engine = Engine {
        model,
        encoder_input: cfg.encoder_input,
        adams: Vec::new(),
        fine_tune_lr: cfg.fine_tune_lr,
    };
    let opts = Options {
        fine_tune: cfg.fine_tune,
        m_step_phi: cfg.m_step_phi,
    };
    let mut diag = Vec::with_capacity(cfg.iterations);
    engine.iterate(
        &prep.obs,
        &mut state,
        cfg.iterations,
        cfg.seed,
        &[stream::VEM],
        &opts,
        Some(&mut diag),
    )?;
    Ok(VemOutput {
        state,
        init_m,
        diagnostics: diag,
        model: engine.model,
    })
}
