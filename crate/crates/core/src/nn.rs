//! Small dense/LSTM building blocks over a flat parameter vector, with
//! hand-written reverse-mode gradients.

use rand::Rng as _;

use crate::rng::Rng;

/// Named tensor inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Layout {
    tensors: Vec<TensorSpec>,
    len: usize,
}

impl Layout {
    pub fn add(&mut self, name: &str, shape: &[usize]) -> usize {
        let offset = self.len;
        let spec = TensorSpec {
            name: name.to_owned(),
            shape: shape.to_vec(),
            offset,
        };
        self.len += spec.len();
        self.tensors.push(spec);
        offset
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

/// `y = act(W x + b)` with `W` stored row-major (out x in).
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    w: usize,
    b: usize,
    pub inp: usize,
    pub out: usize,
    pub act: Activation,
}

impl Dense {
    pub fn register(layout: &mut Layout, name: &str, inp: usize, out: usize, act: Activation) -> Self {
        let w = layout.add(&format!("{name}.weight"), &[out, inp]);
        let b = layout.add(&format!("{name}.bias"), &[out]);
        Dense { w, b, inp, out, act }
    }

    pub fn init(&self, p: &mut [f64], rng: &mut Rng) {
        let bound = 1.0 / (self.inp as f64).sqrt();
        for v in &mut p[self.w..self.w + self.inp * self.out] {
            *v = rng.random_range(-bound..bound);
        }
        p[self.b..self.b + self.out].fill(0.0);
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inp);
        let w = &p[self.w..self.w + self.inp * self.out];
        let b = &p[self.b..self.b + self.out];
        (0..self.out)
            .map(|o| {
                let row = &w[o * self.inp..(o + 1) * self.inp];
                let pre = b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
                match self.act {
                    Activation::Identity => pre,
                    Activation::Tanh => pre.tanh(),
                }
            })
            .collect()
    }

    /// Accumulates parameter gradients into `g` and input gradients into `dx`.
    /// `y` is the forward output and `dy` the gradient with respect to it.
    pub fn backward(&self, p: &[f64], x: &[f64], y: &[f64], dy: &[f64], g: &mut [f64], dx: &mut [f64]) {
        let w = &p[self.w..self.w + self.inp * self.out];
        for o in 0..self.out {
            let dpre = match self.act {
                Activation::Identity => dy[o],
                Activation::Tanh => dy[o] * (1.0 - y[o] * y[o]),
            };
            if dpre == 0.0 {
                continue;
            }
            g[self.b + o] += dpre;
            let grow = &mut g[self.w + o * self.inp..self.w + (o + 1) * self.inp];
            for (gi, xi) in grow.iter_mut().zip(x) {
                *gi += dpre * xi;
            }
            let row = &w[o * self.inp..(o + 1) * self.inp];
            for (di, wi) in dx.iter_mut().zip(row) {
                *di += dpre * wi;
            }
        }
    }
}

/// A stack of dense layers; `forward` keeps every activation for `backward`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn register(layout: &mut Layout, name: &str, dims: &[usize]) -> Self {
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { Activation::Identity } else { Activation::Tanh };
                Dense::register(layout, &format!("{name}.{i}"), dims[i], dims[i + 1], act)
            })
            .collect();
        Mlp { layers }
    }

    pub fn init(&self, p: &mut [f64], rng: &mut Rng) {
        for l in &self.layers {
            l.init(p, rng);
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inp
    }

    /// Returns the activations of every layer, input first, output last.
    pub fn forward(&self, p: &[f64], x: Vec<f64>) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        for l in &self.layers {
            let y = l.forward(p, acts.last().expect("nonempty"));
            acts.push(y);
        }
        acts
    }

    pub fn output(acts: &[Vec<f64>]) -> &[f64] {
        acts.last().expect("nonempty")
    }

    /// Returns the gradient with respect to the input.
    pub fn backward(&self, p: &[f64], acts: &[Vec<f64>], dy: &[f64], g: &mut [f64]) -> Vec<f64> {
        let mut d = dy.to_vec();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let mut dx = vec![0.0; l.inp];
            l.backward(p, &acts[i], &acts[i + 1], &d, g, &mut dx);
            d = dx;
        }
        d
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Single LSTM cell, gate order (input, forget, cell, output).
#[derive(Debug, Clone, Copy)]
pub struct Lstm {
    w_ih: usize,
    w_hh: usize,
    b: usize,
    pub inp: usize,
    pub hid: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCache {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl Lstm {
    pub fn register(layout: &mut Layout, name: &str, inp: usize, hid: usize) -> Self {
        let w_ih = layout.add(&format!("{name}.weight_ih"), &[4 * hid, inp]);
        let w_hh = layout.add(&format!("{name}.weight_hh"), &[4 * hid, hid]);
        let b = layout.add(&format!("{name}.bias"), &[4 * hid]);
        Lstm { w_ih, w_hh, b, inp, hid }
    }

    pub fn init(&self, p: &mut [f64], rng: &mut Rng) {
        let h4 = 4 * self.hid;
        let bi = 1.0 / (self.inp as f64).sqrt();
        for v in &mut p[self.w_ih..self.w_ih + h4 * self.inp] {
            *v = rng.random_range(-bi..bi);
        }
        let bh = 1.0 / (self.hid as f64).sqrt();
        for v in &mut p[self.w_hh..self.w_hh + h4 * self.hid] {
            *v = rng.random_range(-bh..bh);
        }
        let bias = &mut p[self.b..self.b + h4];
        bias.fill(0.0);
        bias[self.hid..2 * self.hid].fill(1.0);
    }

    pub fn forward(&self, p: &[f64], x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmCache {
        let hid = self.hid;
        let w_ih = &p[self.w_ih..self.w_ih + 4 * hid * self.inp];
        let w_hh = &p[self.w_hh..self.w_hh + 4 * hid * hid];
        let b = &p[self.b..self.b + 4 * hid];
        let pre: Vec<f64> = (0..4 * hid)
            .map(|r| {
                let a: f64 = w_ih[r * self.inp..(r + 1) * self.inp].iter().zip(x).map(|(w, v)| w * v).sum();
                let c: f64 = w_hh[r * hid..(r + 1) * hid].iter().zip(h_prev).map(|(w, v)| w * v).sum();
                b[r] + a + c
            })
            .collect();
        let i: Vec<f64> = pre[..hid].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = pre[hid..2 * hid].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = pre[2 * hid..3 * hid].iter().map(|v| v.tanh()).collect();
        let o: Vec<f64> = pre[3 * hid..].iter().map(|&v| sigmoid(v)).collect();
        let c: Vec<f64> = (0..hid).map(|j| f[j] * c_prev[j] + i[j] * g[j]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..hid).map(|j| o[j] * tanh_c[j]).collect();
        LstmCache { i, f, g, o, c, tanh_c, h }
    }

    /// Backpropagates `dh`, `dc` (gradients on the cell outputs) through one
    /// step. Returns `(dx, dh_prev, dc_prev)`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        p: &[f64],
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
        cache: &LstmCache,
        dh: &[f64],
        dc: &[f64],
        grad: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hid = self.hid;
        let mut dpre = vec![0.0; 4 * hid];
        let mut dc_prev = vec![0.0; hid];
        for j in 0..hid {
            let do_ = dh[j] * cache.tanh_c[j];
            let dcj = dc[j] + dh[j] * cache.o[j] * (1.0 - cache.tanh_c[j] * cache.tanh_c[j]);
            let di = dcj * cache.g[j];
            let df = dcj * c_prev[j];
            let dg = dcj * cache.i[j];
            dc_prev[j] = dcj * cache.f[j];
            dpre[j] = di * cache.i[j] * (1.0 - cache.i[j]);
            dpre[hid + j] = df * cache.f[j] * (1.0 - cache.f[j]);
            dpre[2 * hid + j] = dg * (1.0 - cache.g[j] * cache.g[j]);
            dpre[3 * hid + j] = do_ * cache.o[j] * (1.0 - cache.o[j]);
        }
        let w_ih = &p[self.w_ih..self.w_ih + 4 * hid * self.inp];
        let w_hh = &p[self.w_hh..self.w_hh + 4 * hid * hid];
        let mut dx = vec![0.0; self.inp];
        let mut dh_prev = vec![0.0; hid];
        for (r, &d) in dpre.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad[self.b + r] += d;
            let gi = &mut grad[self.w_ih + r * self.inp..self.w_ih + (r + 1) * self.inp];
            for (gv, xv) in gi.iter_mut().zip(x) {
                *gv += d * xv;
            }
            let gh = &mut grad[self.w_hh + r * hid..self.w_hh + (r + 1) * hid];
            for (gv, hv) in gh.iter_mut().zip(h_prev) {
                *gv += d * hv;
            }
            for (dv, wv) in dx.iter_mut().zip(&w_ih[r * self.inp..(r + 1) * self.inp]) {
                *dv += d * wv;
            }
            for (dv, wv) in dh_prev.iter_mut().zip(&w_hh[r * hid..(r + 1) * hid]) {
                *dv += d * wv;
            }
        }
        (dx, dh_prev, dc_prev)
    }
}

pub const LOG_2PI: f64 = 1.837_877_066_409_345_5;

/// `log N(x; mu, diag(exp(log_var)))`.
pub fn log_normal_diag(x: &[f64], mu: &[f64], log_var: &[f64]) -> f64 {
    x.iter()
        .zip(mu)
        .zip(log_var)
        .map(|((x, m), lv)| -0.5 * (LOG_2PI + lv + (x - m) * (x - m) * (-lv).exp()))
        .sum()
}

/// Gradients of `log_normal_diag` with respect to (x, mu, log_var).
pub fn log_normal_diag_grad(x: &[f64], mu: &[f64], log_var: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut dx = vec![0.0; n];
    let mut dmu = vec![0.0; n];
    let mut dlv = vec![0.0; n];
    for d in 0..n {
        let prec = (-log_var[d]).exp();
        let r = x[d] - mu[d];
        dx[d] = -r * prec;
        dmu[d] = r * prec;
        dlv[d] = -0.5 + 0.5 * r * r * prec;
    }
    (dx, dmu, dlv)
}

/// `KL(N(mq, exp(lvq)) || N(mp, exp(lvp)))` for diagonal Gaussians.
pub fn kl_diag(mq: &[f64], lvq: &[f64], mp: &[f64], lvp: &[f64]) -> f64 {
    (0..mq.len())
        .map(|d| {
            let r = mq[d] - mp[d];
            0.5 * (lvp[d] - lvq[d] + ((lvq[d]).exp() + r * r) * (-lvp[d]).exp() - 1.0)
        })
        .sum()
}

/// Gradients of `kl_diag` with respect to (mq, lvq, mp, lvp).
pub fn kl_diag_grad(mq: &[f64], lvq: &[f64], mp: &[f64], lvp: &[f64]) -> [Vec<f64>; 4] {
    let n = mq.len();
    let mut g = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for d in 0..n {
        let inv_vp = (-lvp[d]).exp();
        let vq = lvq[d].exp();
        let r = mq[d] - mp[d];
        g[0][d] = r * inv_vp;
        g[1][d] = 0.5 * (vq * inv_vp - 1.0);
        g[2][d] = -r * inv_vp;
        g[3][d] = 0.5 * (1.0 - (vq + r * r) * inv_vp);
    }
    g
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
