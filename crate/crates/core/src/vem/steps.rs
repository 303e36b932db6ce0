//! Closed-form VEM updates. All covariances are diagonal and stored as
//! 4-vectors, so inverses are elementwise reciprocals.

use crate::error::{Error, Result};
use crate::geometry::{BBox, Vec4};
use crate::nn::LOG_2PI;

/// Observation covariance slots from the first-frame detections:
/// `r_phi^2 * (w^2, h^2, w^2, h^2)` for each detection.
pub fn build_phi(first_frame: &[BBox], r_phi: f64) -> Result<Vec<Vec4>> {
    if first_frame.is_empty() {
        return Err(Error::Init("no detection at the first frame".into()));
    }
    if !(r_phi > 0.0 && r_phi < 1.0) {
        return Err(Error::Config(format!("r_phi must lie in (0, 1), got {r_phi}")));
    }
    first_frame
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let (w, h) = (b.width(), b.height());
            if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
                return Err(Error::DegenerateObservation(format!(
                    "first-frame detection {k} has zero or negative size"
                )));
            }
            let (w2, h2) = (r_phi * r_phi * w * w, r_phi * r_phi * h * h);
            Ok([w2, h2, w2, h2])
        })
        .collect()
}

/// Expands covariance slots over a sequence: detection `k` of any frame uses
/// slot `k mod K_1`.
pub fn expand_phi(slots: &[Vec4], counts: impl IntoIterator<Item = usize>) -> Vec<Vec<Vec4>> {
    counts
        .into_iter()
        .map(|k_t| (0..k_t).map(|k| slots[k % slots.len()]).collect())
        .collect()
}

/// E-S update for one source at one frame.
///
/// `eta[k]` is the responsibility of this source for observation `k`. With no
/// observation the result is the prior `(mu, v)`.
pub fn e_s_update(eta: &[f64], phi: &[Vec4], obs: &[Vec4], mu: &Vec4, v: &Vec4) -> (Vec4, Vec4) {
    if obs.is_empty() {
        return (*mu, *v);
    }
    let mut m = [0.0; 4];
    let mut var = [0.0; 4];
    for d in 0..4 {
        let mut prec = 1.0 / v[d];
        let mut lin = mu[d] / v[d];
        for k in 0..obs.len() {
            prec += eta[k] / phi[k][d];
            lin += eta[k] * obs[k][d] / phi[k][d];
        }
        var[d] = 1.0 / prec;
        m[d] = var[d] * lin;
    }
    (m, var)
}

/// Unnormalized log responsibility
/// `log N(o; m, phi) - 0.5 * sum_d V_d / phi_d`.
pub fn log_beta(o: &Vec4, m: &Vec4, v: &Vec4, phi: &Vec4) -> f64 {
    let mut acc = -2.0 * LOG_2PI;
    for d in 0..4 {
        let r = o[d] - m[d];
        acc -= 0.5 * (phi[d].ln() + r * r / phi[d] + v[d] / phi[d]);
    }
    acc
}

/// Normalizes log-weights in place into probabilities (log-sum-exp).
pub fn softmax_in_place(w: &mut [f64]) {
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in w.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in w.iter_mut() {
        *x /= sum;
    }
}

/// E-W update for one frame: `eta[k][n]` for `K_t` observations and `N`
/// sources with posterior moments `m[n]`, `v[n]`.
pub fn e_w_update(m: &[Vec4], v: &[Vec4], phi: &[Vec4], obs: &[Vec4]) -> Vec<Vec<f64>> {
    obs.iter()
        .zip(phi)
        .map(|(o, ph)| {
            let mut row: Vec<f64> = m.iter().zip(v).map(|(mn, vn)| log_beta(o, mn, vn, ph)).collect();
            softmax_in_place(&mut row);
            row
        })
        .collect()
}

/// Full M-step covariance for one observation:
/// `sum_n eta_n [(o - m_n)(o - m_n)^T + diag(V_n)]`.
pub fn m_step_phi(eta: &[f64], o: &Vec4, m: &[Vec4], v: &[Vec4]) -> [[f64; 4]; 4] {
    let mut phi = [[0.0; 4]; 4];
    for n in 0..m.len() {
        let r: Vec4 = std::array::from_fn(|d| o[d] - m[n][d]);
        for i in 0..4 {
            for j in 0..4 {
                phi[i][j] += eta[n] * r[i] * r[j];
            }
            phi[i][i] += eta[n] * v[n][i];
        }
    }
    phi
}

/// Diagonal of [`m_step_phi`], the form used inside the loop.
pub fn m_step_phi_diag(eta: &[f64], o: &Vec4, m: &[Vec4], v: &[Vec4]) -> Vec4 {
    let full = m_step_phi(eta, o, m, v);
    std::array::from_fn(|d| full[d][d])
}

/// Shannon entropy (nats) of one responsibility row.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|x| **x > 0.0).map(|x| -x * x.ln()).sum()
}
