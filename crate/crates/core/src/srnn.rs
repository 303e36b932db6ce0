//! Stochastic recurrent neural network (SRNN) dynamical VAE.
//!
//! Generative side: a forward LSTM summarizes `s_{1:t-1}` into `h_t`;
//! `d_z(h_t, z_{t-1})` gives the prior of `z_t` and `d_s(h_t, z_t)` the
//! distribution of `s_t`. Inference side: `e_z(h_t, s_t, z_{t-1})` gives the
//! causal posterior of `z_t`, reusing the generative `h_t`. Every Gaussian is
//! diagonal and produced as (mean, log-variance).

use std::path::Path;
use std::sync::OnceLock;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Vec4;
use crate::paramio::{self, ModelKind};
use crate::nn::{self, Layout, Lstm, LstmCache, Mlp};
use crate::rng::{self, Rng};

pub const S_DIM: usize = 4;
pub const Z_DIM: usize = 4;
pub const H_DIM: usize = 8;

pub(crate) struct SrnnArch {
    pub layout: Layout,
    pub lstm: Lstm,
    pub ds: Mlp,
    pub dz: Mlp,
    pub ez: Mlp,
}

pub(crate) fn arch() -> &'static SrnnArch {
    static ARCH: OnceLock<SrnnArch> = OnceLock::new();
    ARCH.get_or_init(|| {
        let mut layout = Layout::default();
        let lstm = Lstm::register(&mut layout, "rnn", S_DIM, H_DIM);
        let ds = Mlp::register(&mut layout, "dec_s", &[H_DIM + Z_DIM, 16, 2 * S_DIM]);
        let dz = Mlp::register(&mut layout, "prior_z", &[H_DIM + Z_DIM, 8, 8, 2 * Z_DIM]);
        let ez = Mlp::register(&mut layout, "enc_z", &[H_DIM + S_DIM + Z_DIM, 16, 8, 2 * Z_DIM]);
        SrnnArch { layout, lstm, ds, dz, ez }
    })
}

/// All SRNN weights in one flat vector laid out by [`SrnnParams::layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct SrnnParams {
    data: Vec<f64>,
}

/// Gradient with the same layout as [`SrnnParams`].
pub type SrnnGrad = Vec<f64>;

impl SrnnParams {
    pub fn layout() -> &'static Layout {
        &arch().layout
    }

    pub fn zeros() -> Self {
        SrnnParams {
            data: vec![0.0; Self::layout().len()],
        }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases,
    /// forget-gate bias 1.
    pub fn init(seed: u64) -> Self {
        let a = arch();
        let mut rng = rng::rng_for(seed, &[rng::stream::INIT]);
        let mut data = vec![0.0; a.layout.len()];
        a.lstm.init(&mut data, &mut rng);
        a.ds.init(&mut data, &mut rng);
        a.dz.init(&mut data, &mut rng);
        a.ez.init(&mut data, &mut rng);
        SrnnParams { data }
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        if data.len() != Self::layout().len() {
            return Err(Error::Config(format!(
                "SRNN expects {} parameters, got {}",
                Self::layout().len(),
                data.len()
            )));
        }
        Ok(SrnnParams { data })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        paramio::save(path, ModelKind::Srnn, Self::layout(), &self.data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(SrnnParams {
            data: paramio::load(path, ModelKind::Srnn, Self::layout())?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecurrentState {
    pub h: [f64; H_DIM],
    pub c: [f64; H_DIM],
}

impl Default for RecurrentState {
    fn default() -> Self {
        RecurrentState {
            h: [0.0; H_DIM],
            c: [0.0; H_DIM],
        }
    }
}

/// Diagonal Gaussian stored as mean and log-variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    pub mean: Vec4,
    pub log_var: Vec4,
}

impl GaussianParams {
    pub fn var(&self) -> Vec4 {
        self.log_var.map(f64::exp)
    }

    fn from_head(out: &[f64]) -> Self {
        let mut mean = [0.0; 4];
        let mut log_var = [0.0; 4];
        mean.copy_from_slice(&out[..4]);
        log_var.copy_from_slice(&out[4..8]);
        GaussianParams { mean, log_var }
    }

    pub fn log_density(&self, x: &Vec4) -> f64 {
        nn::log_normal_diag(x, &self.mean, &self.log_var)
    }
}

fn to_array<const N: usize>(v: &[f64]) -> [f64; N] {
    let mut a = [0.0; N];
    a.copy_from_slice(v);
    a
}

fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// `h_t = d_h(s_{t-1}, h_{t-1})`, one LSTM step.
pub fn recurrence_step(params: &SrnnParams, s_prev: &Vec4, state: &RecurrentState) -> RecurrentState {
    let r = arch().lstm.forward(&params.data, s_prev, &state.h, &state.c);
    RecurrentState {
        h: to_array(&r.h),
        c: to_array(&r.c),
    }
}

/// Prior `p(z_t | s_{1:t-1}, z_{t-1})`.
pub fn prior_z(params: &SrnnParams, state: &RecurrentState, z_prev: &Vec4) -> GaussianParams {
    let a = arch();
    let acts = a.dz.forward(&params.data, cat(&[&state.h, z_prev]));
    GaussianParams::from_head(Mlp::output(&acts))
}

/// Generative distribution `p(s_t | s_{1:t-1}, z_t)`.
pub fn decode_s(params: &SrnnParams, state: &RecurrentState, z: &Vec4) -> GaussianParams {
    let a = arch();
    let acts = a.ds.forward(&params.data, cat(&[&state.h, z]));
    GaussianParams::from_head(Mlp::output(&acts))
}

/// Causal posterior `q(z_t | s_{1:t}, z_{t-1})`; `state` carries `s_{1:t-1}`.
pub fn encode_z(params: &SrnnParams, state: &RecurrentState, s_t: &Vec4, z_prev: &Vec4) -> GaussianParams {
    let a = arch();
    let acts = a.ez.forward(&params.data, cat(&[&state.h, s_t, z_prev]));
    GaussianParams::from_head(Mlp::output(&acts))
}

pub fn standard_normal4(rng: &mut Rng) -> Vec4 {
    std::array::from_fn(|_| StandardNormal.sample(rng))
}

/// `mean + sqrt(var) * eps`.
pub fn reparam(g: &GaussianParams, eps: &Vec4) -> Vec4 {
    std::array::from_fn(|d| g.mean[d] + (0.5 * g.log_var[d]).exp() * eps[d])
}

pub fn reparam_sample(rng: &mut Rng, g: &GaussianParams) -> Vec4 {
    reparam(g, &standard_normal4(rng))
}

/// Pinned randomness for one sequence: the reparameterization noise of every
/// `z_t` and the per-frame scheduled-sampling choices (`true` means the
/// recurrence reads the decoder mean of the previous frame instead of the
/// data).
#[derive(Debug, Clone, PartialEq)]
pub struct ElboNoise {
    pub eps: Vec<Vec4>,
    pub generated: Vec<bool>,
}

impl ElboNoise {
    pub fn sample(rng: &mut Rng, len: usize, teacher_forcing_prob: f64) -> Self {
        use rand::Rng as _;
        let mut eps = Vec::with_capacity(len);
        let mut generated = Vec::with_capacity(len);
        for t in 0..len {
            eps.push(standard_normal4(rng));
            let gen = t > 0 && teacher_forcing_prob < 1.0 && rng.random::<f64>() >= teacher_forcing_prob;
            generated.push(gen);
        }
        ElboNoise { eps, generated }
    }

    pub fn zeros(len: usize) -> Self {
        ElboNoise {
            eps: vec![[0.0; 4]; len],
            generated: vec![false; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ElboBreakdown {
    pub elbo: f64,
    pub log_likelihood: f64,
    pub kl: f64,
}

/// Inputs of one forward/backward pass.
pub(crate) struct PassInput<'a> {
    /// Likelihood targets; also the decoder-side recurrence inputs.
    pub target: &'a [Vec4],
    /// When set, the encoder runs its own LSTM chain over this sequence and
    /// reads its frame `t`; otherwise the encoder shares the decoder chain and
    /// reads `target[t]`.
    pub encoder_seq: Option<&'a [Vec4]>,
    pub eps: &'a [Vec4],
    pub generated: Option<&'a [bool]>,
    pub kl_weight: f64,
}

struct StepCache {
    x_b: Vec<f64>,
    prev_b: (Vec<f64>, Vec<f64>),
    lstm_b: LstmCache,
    enc: Option<(Vec<f64>, (Vec<f64>, Vec<f64>), LstmCache)>,
    ez: Vec<Vec<f64>>,
    dz: Vec<Vec<f64>>,
    ds: Vec<Vec<f64>>,
    z: Vec4,
}

/// Forward pass, and the gradient of the negative objective when `grad` is set.
pub(crate) fn run_pass(params: &SrnnParams, input: &PassInput<'_>, grad: Option<&mut [f64]>) -> ElboBreakdown {
    let a = arch();
    let p = params.as_slice();
    let len = input.target.len();
    let zeros_h = vec![0.0; H_DIM];
    let mut hb = zeros_h.clone();
    let mut cb = zeros_h.clone();
    let mut ha = zeros_h.clone();
    let mut ca = zeros_h.clone();
    let mut z_prev: Vec4 = [0.0; 4];
    let mut mu_s_prev: Vec4 = [0.0; 4];
    let mut ll = 0.0;
    let mut kl = 0.0;
    let mut caches: Vec<StepCache> = Vec::with_capacity(if grad.is_some() { len } else { 0 });

    for t in 0..len {
        let gen = input.generated.is_some_and(|g| g[t]);
        let x_b: Vec<f64> = if t == 0 {
            vec![0.0; S_DIM]
        } else if gen {
            mu_s_prev.to_vec()
        } else {
            input.target[t - 1].to_vec()
        };
        let lstm_b = a.lstm.forward(p, &x_b, &hb, &cb);
        let (h_enc, s_enc, enc_cache) = match input.encoder_seq {
            Some(enc) => {
                let x_a: Vec<f64> = if t == 0 { vec![0.0; S_DIM] } else { enc[t - 1].to_vec() };
                let lstm_a = a.lstm.forward(p, &x_a, &ha, &ca);
                let h = lstm_a.h.clone();
                let prev = (ha.clone(), ca.clone());
                ha = lstm_a.h.clone();
                ca = lstm_a.c.clone();
                (h, enc[t], Some((x_a, prev, lstm_a)))
            }
            None => (lstm_b.h.clone(), input.target[t], None),
        };
        let ez_acts = a.ez.forward(p, cat(&[&h_enc, &s_enc, &z_prev]));
        let q = GaussianParams::from_head(Mlp::output(&ez_acts));
        let z = reparam(&q, &input.eps[t]);
        let dz_acts = a.dz.forward(p, cat(&[&lstm_b.h, &z_prev]));
        let prior = GaussianParams::from_head(Mlp::output(&dz_acts));
        let ds_acts = a.ds.forward(p, cat(&[&lstm_b.h, &z]));
        let dec = GaussianParams::from_head(Mlp::output(&ds_acts));

        ll += dec.log_density(&input.target[t]);
        kl += nn::kl_diag(&q.mean, &q.log_var, &prior.mean, &prior.log_var);

        let prev_b = (hb, cb);
        hb = lstm_b.h.clone();
        cb = lstm_b.c.clone();
        mu_s_prev = dec.mean;
        if grad.is_some() {
            caches.push(StepCache {
                x_b,
                prev_b,
                lstm_b,
                enc: enc_cache,
                ez: ez_acts,
                dz: dz_acts,
                ds: ds_acts,
                z,
            });
        }
        z_prev = z;
    }

    let out = ElboBreakdown {
        elbo: ll - kl,
        log_likelihood: ll,
        kl,
    };
    let Some(g) = grad else {
        return out;
    };

    let w = input.kl_weight;
    let mut dhb_next = vec![0.0; H_DIM];
    let mut dcb_next = vec![0.0; H_DIM];
    let mut dha_next = vec![0.0; H_DIM];
    let mut dca_next = vec![0.0; H_DIM];
    let mut dz_next = [0.0; Z_DIM];
    let mut dmus_next = [0.0; S_DIM];
    for t in (0..len).rev() {
        let c = &caches[t];
        let ds_out = Mlp::output(&c.ds);
        let (_, dmu, dlv) = nn::log_normal_diag_grad(&input.target[t], &ds_out[..4], &ds_out[4..]);
        let mut d_ds_out = vec![0.0; 2 * S_DIM];
        for d in 0..S_DIM {
            d_ds_out[d] = -dmu[d] + dmus_next[d];
            d_ds_out[S_DIM + d] = -dlv[d];
        }
        let d_ds_in = a.ds.backward(p, &c.ds, &d_ds_out, g);

        let ez_out = Mlp::output(&c.ez);
        let dz_out = Mlp::output(&c.dz);
        let [dmq, dlvq, dmp, dlvp] = nn::kl_diag_grad(&ez_out[..4], &ez_out[4..], &dz_out[..4], &dz_out[4..]);
        let mut d_ez_out = vec![0.0; 2 * Z_DIM];
        let mut d_dz_out = vec![0.0; 2 * Z_DIM];
        for d in 0..Z_DIM {
            let dzt = d_ds_in[H_DIM + d] + dz_next[d];
            d_ez_out[d] = w * dmq[d] + dzt;
            d_ez_out[Z_DIM + d] = w * dlvq[d] + dzt * 0.5 * (0.5 * ez_out[Z_DIM + d]).exp() * input.eps[t][d];
            d_dz_out[d] = w * dmp[d];
            d_dz_out[Z_DIM + d] = w * dlvp[d];
        }
        let d_ez_in = a.ez.backward(p, &c.ez, &d_ez_out, g);
        let d_dz_in = a.dz.backward(p, &c.dz, &d_dz_out, g);
        for d in 0..Z_DIM {
            dz_next[d] = d_ez_in[H_DIM + S_DIM + d] + d_dz_in[H_DIM + d];
        }
        debug_assert_eq!(c.z.len(), Z_DIM);

        let mut dhb: Vec<f64> = (0..H_DIM).map(|j| d_ds_in[j] + d_dz_in[j] + dhb_next[j]).collect();
        match &c.enc {
            None => {
                for j in 0..H_DIM {
                    dhb[j] += d_ez_in[j];
                }
            }
            Some((x_a, (hp, cp), lstm_a)) => {
                let dha: Vec<f64> = (0..H_DIM).map(|j| d_ez_in[j] + dha_next[j]).collect();
                let (_, dh_prev, dc_prev) = a.lstm.backward(p, x_a, hp, cp, lstm_a, &dha, &dca_next, g);
                dha_next = dh_prev;
                dca_next = dc_prev;
            }
        }
        let (dx_b, dh_prev, dc_prev) =
            a.lstm
                .backward(p, &c.x_b, &c.prev_b.0, &c.prev_b.1, &c.lstm_b, &dhb, &dcb_next, g);
        dhb_next = dh_prev;
        dcb_next = dc_prev;
        let gen = t > 0 && input.generated.is_some_and(|gm| gm[t]);
        dmus_next = if gen { to_array(&dx_b) } else { [0.0; S_DIM] };
    }
    out
}

/// Single-sample ELBO of one sequence with pinned noise.
pub fn elbo_with_noise(params: &SrnnParams, seq: &[Vec4], noise: &ElboNoise) -> Result<ElboBreakdown> {
    if seq.is_empty() {
        return Err(Error::Config("ELBO of an empty sequence".into()));
    }
    Ok(run_pass(
        params,
        &PassInput {
            target: seq,
            encoder_seq: None,
            eps: &noise.eps,
            generated: Some(&noise.generated),
            kl_weight: 1.0,
        },
        None,
    ))
}

/// Single-sample ELBO: `sum_t log N(s_t; mu_s, v_s) - KL(q(z_t) || p(z_t))`.
pub fn elbo(params: &SrnnParams, seq: &[Vec4], rng: &mut Rng, teacher_forcing_prob: f64) -> Result<ElboBreakdown> {
    let noise = ElboNoise::sample(rng, seq.len(), teacher_forcing_prob);
    elbo_with_noise(params, seq, &noise)
}

/// Negative ELBO and its gradient for one sequence with pinned noise.
pub fn loss_and_grad(params: &SrnnParams, seq: &[Vec4], noise: &ElboNoise, kl_weight: f64) -> (f64, SrnnGrad) {
    let mut g = vec![0.0; params.data.len()];
    let b = run_pass(
        params,
        &PassInput {
            target: seq,
            encoder_seq: None,
            eps: &noise.eps,
            generated: Some(&noise.generated),
            kl_weight,
        },
        Some(&mut g),
    );
    (-(b.log_likelihood - kl_weight * b.kl), g)
}

/// Gradient of the summed negative ELBO over a batch. Noise is drawn from
/// `rng` sequence by sequence before the (parallel) evaluation; the reduction
/// runs in batch order.
pub fn gradients(
    params: &SrnnParams,
    batch: &[Vec<Vec4>],
    rng: &mut Rng,
    teacher_forcing_prob: f64,
) -> Result<(f64, SrnnGrad)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let noises: Vec<ElboNoise> = batch
        .iter()
        .map(|s| ElboNoise::sample(rng, s.len(), teacher_forcing_prob))
        .collect();
    let parts: Vec<(f64, SrnnGrad)> = batch
        .par_iter()
        .zip(&noises)
        .map(|(s, n)| loss_and_grad(params, s, n, 1.0))
        .collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; params.data.len()];
    for (i, (loss, g)) in parts.into_iter().enumerate() {
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { sequence: i });
        }
        total += loss;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((total, grad))
}

/// Monte Carlo objective maximized when fine-tuning inside the VEM loop for
/// one source: the decoder chain runs over the current samples `s`, the
/// encoder chain over the previous iteration's samples `prev_s`, and
/// `z_t = mu_q + sigma_q * eps_t`.
pub fn finetune_objective(params: &SrnnParams, prev_s: &[Vec4], s: &[Vec4], eps: &[Vec4]) -> ElboBreakdown {
    run_pass(
        params,
        &PassInput {
            target: s,
            encoder_seq: Some(prev_s),
            eps,
            generated: None,
            kl_weight: 1.0,
        },
        None,
    )
}

/// Negative fine-tuning objective and its gradient.
pub fn finetune_loss_and_grad(params: &SrnnParams, prev_s: &[Vec4], s: &[Vec4], eps: &[Vec4]) -> (f64, SrnnGrad) {
    let mut g = vec![0.0; params.data.len()];
    let b = run_pass(
        params,
        &PassInput {
            target: s,
            encoder_seq: Some(prev_s),
            eps,
            generated: None,
            kl_weight: 1.0,
        },
        Some(&mut g),
    );
    (-b.elbo, g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_seq(len: usize, seed: u64) -> Vec<Vec4> {
        let mut r = rng::rng_from_seed(seed);
        (0..len)
            .map(|_| {
                let e = standard_normal4(&mut r);
                [0.3 + 0.1 * e[0], 0.2 + 0.1 * e[1], 0.45 + 0.1 * e[2], 0.6 + 0.1 * e[3]]
            })
            .collect()
    }

    #[test]
    fn zero_weights_give_neutral_outputs() {
        let p = SrnnParams::zeros();
        let st = recurrence_step(&p, &[0.3, 0.1, 0.5, 0.9], &RecurrentState::default());
        assert_eq!(st.h, [0.0; H_DIM]);
        for g in [
            prior_z(&p, &st, &[1.0; 4]),
            decode_s(&p, &st, &[1.0; 4]),
            encode_z(&p, &st, &[0.2; 4], &[1.0; 4]),
        ] {
            assert_eq!(g.mean, [0.0; 4]);
            assert_eq!(g.var(), [1.0; 4]);
        }
    }

    #[test]
    fn variances_are_positive() {
        let mut r = rng::rng_from_seed(4);
        for trial in 0..1000 {
            let p = SrnnParams::init(trial);
            let s = standard_normal4(&mut r);
            let st = recurrence_step(&p, &s, &RecurrentState::default());
            let z = standard_normal4(&mut r);
            for g in [prior_z(&p, &st, &z), decode_s(&p, &st, &z), encode_z(&p, &st, &s, &z)] {
                assert!(g.var().iter().all(|v| *v > 0.0));
            }
        }
    }

    #[test]
    fn reparam_at_zero_noise_is_mean() {
        let g = GaussianParams {
            mean: [1.0, 2.0, 3.0, 4.0],
            log_var: [0.3; 4],
        };
        assert_eq!(reparam(&g, &[0.0; 4]), g.mean);
    }

    #[test]
    fn reparam_sample_moments() {
        let g = GaussianParams {
            mean: [0.0; 4],
            log_var: [0.0; 4],
        };
        let mut r = rng::rng_from_seed(12);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| reparam_sample(&mut r, &g)[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02);
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let p = SrnnParams::init(1);
        assert!(elbo(&p, &[], &mut rng::rng_from_seed(1), 1.0).is_err());
    }

    #[test]
    fn encoder_shares_generative_recurrence() {
        let p = SrnnParams::init(3);
        let s = toy_seq(2, 1);
        let st = recurrence_step(&p, &s[0], &RecurrentState::default());
        let before = encode_z(&p, &st, &s[1], &[0.0; 4]);
        let mut q = p.clone();
        let spec = SrnnParams::layout().get("rnn.weight_ih").unwrap().clone();
        for v in &mut q.as_mut_slice()[spec.range()] {
            *v += 0.1;
        }
        let st2 = recurrence_step(&q, &s[0], &RecurrentState::default());
        let after = encode_z(&q, &st2, &s[1], &[0.0; 4]);
        assert_ne!(before, after);
    }

    #[test]
    fn gradient_is_deterministic_given_seed() {
        let p = SrnnParams::init(5);
        let batch = vec![toy_seq(5, 1), toy_seq(5, 2)];
        let a = gradients(&p, &batch, &mut rng::rng_from_seed(8), 0.5).unwrap();
        let b = gradients(&p, &batch, &mut rng::rng_from_seed(8), 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn log_variance_head_of_encoder_is_inert_without_noise_and_kl() {
        let p = SrnnParams::init(6);
        let seq = toy_seq(4, 3);
        let (_, g) = loss_and_grad(&p, &seq, &ElboNoise::zeros(4), 0.0);
        let layout = SrnnParams::layout();
        let w = layout.get("enc_z.2.weight").unwrap();
        let b = layout.get("enc_z.2.bias").unwrap();
        // rows 4..8 of the last encoder layer produce the log-variance
        for row in 4..8 {
            for col in 0..8 {
                assert_eq!(g[w.offset + row * 8 + col], 0.0);
            }
            assert_eq!(g[b.offset + row], 0.0);
        }
        // the prior network only enters through the KL term
        for spec in layout.tensors().iter().filter(|t| t.name.starts_with("prior_z")) {
            assert!(g[spec.range()].iter().all(|v| *v == 0.0));
        }
    }

    fn check_fd(f: impl Fn(&SrnnParams) -> f64, p: &SrnnParams, g: &[f64]) {
        let h = 1e-6;
        let mut worst = 0.0f64;
        for i in 0..p.as_slice().len() {
            let mut a = p.clone();
            a.as_mut_slice()[i] += h;
            let mut b = p.clone();
            b.as_mut_slice()[i] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            let err = (fd - g[i]).abs() / (1.0 + fd.abs());
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn elbo_gradient_matches_finite_differences() {
        let p = SrnnParams::init(11);
        let seq = toy_seq(3, 4);
        let mut noise = ElboNoise::sample(&mut rng::rng_from_seed(2), 3, 1.0);
        noise.generated = vec![false, true, false];
        let (loss, g) = loss_and_grad(&p, &seq, &noise, 1.0);
        let f = |q: &SrnnParams| -elbo_with_noise(q, &seq, &noise).unwrap().elbo;
        assert!((loss - f(&p)).abs() < 1e-12);
        check_fd(f, &p, &g);
    }

    #[test]
    fn finetune_gradient_matches_finite_differences() {
        let p = SrnnParams::init(12);
        let prev = toy_seq(3, 5);
        let s = toy_seq(3, 6);
        let eps: Vec<Vec4> = (0..3).map(|_| standard_normal4(&mut rng::rng_from_seed(9))).collect();
        let (_, g) = finetune_loss_and_grad(&p, &prev, &s, &eps);
        check_fd(|q| -finetune_objective(q, &prev, &s, &eps).elbo, &p, &g);
    }

    // Plain re-implementation of the LSTM cell from the textbook equations.
    fn reference_lstm(p: &[f64], x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let l = SrnnParams::layout();
        let wih = &p[l.get("rnn.weight_ih").unwrap().range()];
        let whh = &p[l.get("rnn.weight_hh").unwrap().range()];
        let b = &p[l.get("rnn.bias").unwrap().range()];
        let pre = |r: usize| {
            b[r] + (0..S_DIM).map(|k| wih[r * S_DIM + k] * x[k]).sum::<f64>()
                + (0..H_DIM).map(|k| whh[r * H_DIM + k] * h[k]).sum::<f64>()
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut hn = vec![0.0; H_DIM];
        let mut cn = vec![0.0; H_DIM];
        for j in 0..H_DIM {
            let i = sig(pre(j));
            let f = sig(pre(H_DIM + j));
            let gg = pre(2 * H_DIM + j).tanh();
            let o = sig(pre(3 * H_DIM + j));
            cn[j] = f * c[j] + i * gg;
            hn[j] = o * cn[j].tanh();
        }
        (hn, cn)
    }

    #[test]
    fn recurrence_matches_reference_cell() {
        let p = SrnnParams::init(21);
        let seq = toy_seq(6, 8);
        let mut st = RecurrentState::default();
        let mut h = vec![0.0; H_DIM];
        let mut c = vec![0.0; H_DIM];
        for s in &seq {
            st = recurrence_step(&p, s, &st);
            let (hn, cn) = reference_lstm(p.as_slice(), s, &h, &c);
            h = hn;
            c = cn;
            for j in 0..H_DIM {
                assert!((st.h[j] - h[j]).abs() < 1e-12);
                assert!((st.c[j] - c[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn step_api_agrees_with_pass() {
        let p = SrnnParams::init(31);
        let seq = toy_seq(4, 1);
        let noise = ElboNoise::sample(&mut rng::rng_from_seed(3), 4, 1.0);
        let full = elbo_with_noise(&p, &seq, &noise).unwrap();
        let mut st = RecurrentState::default();
        let mut z_prev = [0.0; 4];
        let mut s_prev = [0.0; 4];
        let mut total = 0.0;
        for t in 0..4 {
            st = recurrence_step(&p, &s_prev, &st);
            let q = encode_z(&p, &st, &seq[t], &z_prev);
            let pz = prior_z(&p, &st, &z_prev);
            let z = reparam(&q, &noise.eps[t]);
            let d = decode_s(&p, &st, &z);
            total += d.log_density(&seq[t]) - nn::kl_diag(&q.mean, &q.log_var, &pz.mean, &pz.log_var);
            z_prev = z;
            s_prev = seq[t];
        }
        assert!((total - full.elbo).abs() < 1e-10);
    }
}
