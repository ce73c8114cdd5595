//! Single-layer LSTM over a vector sequence, mean-pooled into one logistic output.
//!
//! Gates are stacked in the order input, forget, candidate, output. No peepholes.

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::sigmoid;
use crate::error::{Error, Result};
use crate::predictor::auc;
use crate::rng::substream;

/// LSTM weights. `w` is `4h x n_in`, `u` is `4h x h`, both row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub n_in: usize,
    pub hidden: usize,
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub b: Vec<f64>,
    pub theta: Vec<f64>,
}

pub const GATE_INPUT: usize = 0;
pub const GATE_FORGET: usize = 1;
pub const GATE_CANDIDATE: usize = 2;
pub const GATE_OUTPUT: usize = 3;

impl LstmParams {
    pub fn zeros(n_in: usize, hidden: usize) -> Self {
        LstmParams {
            n_in,
            hidden,
            w: vec![0.0; 4 * hidden * n_in],
            u: vec![0.0; 4 * hidden * hidden],
            b: vec![0.0; 4 * hidden],
            theta: vec![0.0; hidden],
        }
    }

    /// Weights uniform in `±1/sqrt(h)`, forget-gate bias 1.
    pub fn init<R: Rng + ?Sized>(n_in: usize, hidden: usize, rng: &mut R) -> Self {
        let r = 1.0 / (hidden as f64).sqrt();
        let mut p = Self::zeros(n_in, hidden);
        for x in
            p.w.iter_mut()
                .chain(p.u.iter_mut())
                .chain(p.b.iter_mut())
                .chain(p.theta.iter_mut())
        {
            *x = rng.gen_range(-r..r);
        }
        p.b[GATE_FORGET * hidden..(GATE_FORGET + 1) * hidden].fill(1.0);
        p
    }

    pub fn len(&self) -> usize {
        self.w.len() + self.u.len() + self.b.len() + self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All parameters as one flat slice view, in the order w, u, b, theta.
    pub fn flat(&self) -> Vec<f64> {
        [&self.w[..], &self.u[..], &self.b[..], &self.theta[..]].concat()
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        let (a, rest) = v.split_at(self.w.len());
        let (b, rest) = rest.split_at(self.u.len());
        let (c, d) = rest.split_at(self.b.len());
        self.w.copy_from_slice(a);
        self.u.copy_from_slice(b);
        self.b.copy_from_slice(c);
        self.theta.copy_from_slice(d);
    }

    fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        self.w
            .iter_mut()
            .chain(self.u.iter_mut())
            .chain(self.b.iter_mut())
            .chain(self.theta.iter_mut())
            .for_each(|x| f(x));
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|x| x.is_finite())
    }
}

/// A sequence of `len` input vectors of width `n_in`, stored row-major.
pub trait InputSeq {
    fn steps(&self) -> usize;
    fn step(&self, t: usize) -> &[f64];
}

impl InputSeq for Vec<Vec<f64>> {
    fn steps(&self) -> usize {
        self.len()
    }
    fn step(&self, t: usize) -> &[f64] {
        &self[t]
    }
}

/// Forward activations retained for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Gate activations per step, `4h` each (after the nonlinearity).
    pub gates: Vec<Vec<f64>>,
    pub cells: Vec<Vec<f64>>,
    pub hidden: Vec<Vec<f64>>,
}

impl Trace {
    pub fn mean_hidden(&self, h: usize) -> Vec<f64> {
        let mut m = vec![0.0; h];
        for ht in &self.hidden {
            for (a, b) in m.iter_mut().zip(ht) {
                *a += b;
            }
        }
        if !self.hidden.is_empty() {
            let t = self.hidden.len() as f64;
            m.iter_mut().for_each(|x| *x /= t);
        }
        m
    }
}

fn check_shapes(seq: &dyn InputSeq, p: &LstmParams) -> Result<()> {
    for t in 0..seq.steps() {
        if seq.step(t).len() != p.n_in {
            return Err(Error::InvalidInput(format!(
                "input at step {t} has width {}, model expects {}",
                seq.step(t).len(),
                p.n_in
            )));
        }
    }
    Ok(())
}

/// Run the recurrence from `h_0 = c_0 = 0`.
pub fn lstm_forward(seq: &dyn InputSeq, p: &LstmParams) -> Result<Trace> {
    check_shapes(seq, p)?;
    let h = p.hidden;
    let n = p.n_in;
    let mut trace = Trace {
        gates: Vec::with_capacity(seq.steps()),
        cells: Vec::with_capacity(seq.steps()),
        hidden: Vec::with_capacity(seq.steps()),
    };
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    for t in 0..seq.steps() {
        let x = seq.step(t);
        let mut z = p.b.clone();
        for (r, zr) in z.iter_mut().enumerate() {
            let wr = &p.w[r * n..(r + 1) * n];
            let ur = &p.u[r * h..(r + 1) * h];
            *zr += wr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                + ur.iter().zip(&h_prev).map(|(a, b)| a * b).sum::<f64>();
        }
        let mut c = vec![0.0; h];
        let mut hn = vec![0.0; h];
        for k in 0..h {
            let i = sigmoid(z[GATE_INPUT * h + k]);
            let f = sigmoid(z[GATE_FORGET * h + k]);
            let g = z[GATE_CANDIDATE * h + k].tanh();
            let o = sigmoid(z[GATE_OUTPUT * h + k]);
            z[GATE_INPUT * h + k] = i;
            z[GATE_FORGET * h + k] = f;
            z[GATE_CANDIDATE * h + k] = g;
            z[GATE_OUTPUT * h + k] = o;
            c[k] = f * c_prev[k] + i * g;
            hn[k] = o * c[k].tanh();
        }
        if hn.iter().chain(&c).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("LSTM state at step {t}")));
        }
        trace.gates.push(z);
        trace.cells.push(c.clone());
        trace.hidden.push(hn.clone());
        h_prev = hn;
        c_prev = c;
    }
    Ok(trace)
}

fn logit(trace: &Trace, p: &LstmParams) -> f64 {
    let m = trace.mean_hidden(p.hidden);
    p.theta.iter().zip(&m).map(|(a, b)| a * b).sum()
}

/// `σ(θ · mean_t h_t)`.
pub fn predict_prob(seq: &dyn InputSeq, p: &LstmParams) -> Result<f64> {
    let trace = lstm_forward(seq, p)?;
    Ok(sigmoid(logit(&trace, p)))
}

/// Binary cross-entropy of the logistic output, computed from the logit.
pub fn example_loss(seq: &dyn InputSeq, label: bool, p: &LstmParams) -> Result<f64> {
    let s = logit(&lstm_forward(seq, p)?, p);
    Ok(bce_from_logit(s, label))
}

fn bce_from_logit(s: f64, label: bool) -> f64 {
    // softplus(s) - y s
    let softplus = if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    };
    softplus - if label { s } else { 0.0 }
}

/// Loss and gradient of one example by backpropagation through time.
pub fn backward(seq: &dyn InputSeq, label: bool, p: &LstmParams) -> Result<(f64, LstmParams)> {
    let trace = lstm_forward(seq, p)?;
    let h = p.hidden;
    let n = p.n_in;
    let steps = seq.steps();
    let mut grad = LstmParams::zeros(n, h);
    let mean = trace.mean_hidden(h);
    let s: f64 = p.theta.iter().zip(&mean).map(|(a, b)| a * b).sum();
    let loss = bce_from_logit(s, label);
    if steps == 0 {
        return Ok((loss, grad));
    }
    let ds = sigmoid(s) - if label { 1.0 } else { 0.0 };
    for k in 0..h {
        grad.theta[k] = ds * mean[k];
    }
    let dh_direct: Vec<f64> = p.theta.iter().map(|th| ds * th / steps as f64).collect();

    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let zero = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for t in (0..steps).rev() {
        let gates = &trace.gates[t];
        let c = &trace.cells[t];
        let c_prev = if t > 0 { &trace.cells[t - 1] } else { &zero };
        let h_prev = if t > 0 { &trace.hidden[t - 1] } else { &zero };
        for k in 0..h {
            let i = gates[GATE_INPUT * h + k];
            let f = gates[GATE_FORGET * h + k];
            let g = gates[GATE_CANDIDATE * h + k];
            let o = gates[GATE_OUTPUT * h + k];
            let tc = c[k].tanh();
            let dh = dh_direct[k] + dh_next[k];
            let d_o = dh * tc;
            let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
            dz[GATE_INPUT * h + k] = dc * g * i * (1.0 - i);
            dz[GATE_FORGET * h + k] = dc * c_prev[k] * f * (1.0 - f);
            dz[GATE_CANDIDATE * h + k] = dc * i * (1.0 - g * g);
            dz[GATE_OUTPUT * h + k] = d_o * o * (1.0 - o);
            dc_next[k] = dc * f;
        }
        let x = seq.step(t);
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for (r, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad.b[r] += d;
            for (gw, xi) in grad.w[r * n..(r + 1) * n].iter_mut().zip(x) {
                *gw += d * xi;
            }
            let ur = &p.u[r * h..(r + 1) * h];
            for k in 0..h {
                grad.u[r * h + k] += d * h_prev[k];
                dh_next[k] += d * ur[k];
            }
        }
    }
    Ok((loss, grad))
}

/// Largest relative error `|a - n| / max(|a|, |n|, 1e-6)` between the analytic gradient
/// `grad_fn` and central finite differences with step `1e-5`, over every parameter.
pub fn gradient_check_with(
    p: &LstmParams,
    seq: &dyn InputSeq,
    label: bool,
    grad_fn: impl Fn(&dyn InputSeq, bool, &LstmParams) -> Result<(f64, LstmParams)>,
) -> Result<f64> {
    let analytic = grad_fn(seq, label, p)?.1.flat();
    let base = p.flat();
    let mut probe = p.clone();
    let step = 1e-5;
    let mut worst = 0.0f64;
    let mut v = base.clone();
    for i in 0..base.len() {
        v[i] = base[i] + step;
        probe.set_flat(&v);
        let plus = example_loss(seq, label, &probe)?;
        v[i] = base[i] - step;
        probe.set_flat(&v);
        let minus = example_loss(seq, label, &probe)?;
        v[i] = base[i];
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

pub fn gradient_check(p: &LstmParams, seq: &dyn InputSeq, label: bool) -> Result<f64> {
    gradient_check_with(p, seq, label, backward)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub hidden: usize,
    /// Adam step size.
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Clip each batch gradient to this L2 norm; `None` disables clipping.
    pub clip: Option<f64>,
    pub seed: u64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig {
            hidden: 64,
            lr: 0.01,
            epochs: 20,
            batch: 16,
            clip: Some(5.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedLstm {
    pub params: LstmParams,
    pub config: LstmConfig,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        self.t += 1;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
    }
}

/// Mean loss over a set of examples.
pub fn mean_loss<S: InputSeq + Sync>(p: &LstmParams, data: &[(&S, bool)]) -> Result<f64> {
    let losses: Vec<f64> = data
        .par_iter()
        .map(|(s, y)| example_loss(*s, *y, p))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Mini-batch Adam with full BPTT. Returns the parameters with the best validation AUC
/// (or the final ones when the validation split lacks a class).
pub fn train<S: InputSeq + Sync>(
    train: &[(&S, bool)],
    val: &[(&S, bool)],
    init: LstmParams,
    config: &LstmConfig,
) -> Result<TrainedLstm> {
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training split".into()));
    }
    if train.iter().all(|e| e.1) || train.iter().all(|e| !e.1) {
        warn!("LSTM training split has a single class");
    }
    let mut params = init;
    let mut flat = params.flat();
    let mut adam = Adam {
        m: vec![0.0; flat.len()],
        v: vec![0.0; flat.len()],
        t: 0,
    };
    let initial = mean_loss(&params, train)?;
    let mut rng = substream(config.seed, "lstm.batches");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let val_ok = val.iter().any(|e| e.1) && val.iter().any(|e| !e.1);
    let mut best: Option<(f64, usize, LstmParams)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch.max(1)) {
            let results: Vec<(f64, LstmParams)> = batch
                .par_iter()
                .map(|&i| backward(train[i].0, train[i].1, &params))
                .collect::<Result<_>>()?;
            let mut g = vec![0.0; flat.len()];
            for (loss, gp) in &results {
                epoch_loss += loss;
                for (a, b) in g.iter_mut().zip(gp.flat()) {
                    *a += b;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            g.iter_mut().for_each(|x| *x *= scale);
            if let Some(clip) = config.clip {
                let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > clip {
                    g.iter_mut().for_each(|x| *x *= clip / norm);
                }
            }
            adam.step(&mut flat, &g, config.lr);
            params.set_flat(&flat);
        }
        let train_loss = epoch_loss / train.len() as f64;
        if !train_loss.is_finite() || train_loss > 10.0 * initial.max(1e-12) {
            return Err(Error::Diverged(format!(
                "epoch {epoch}: loss {train_loss} against initial {initial}"
            )));
        }
        let val_auc = if val_ok {
            let scores: Vec<f64> = val
                .par_iter()
                .map(|(s, _)| predict_prob(*s, &params))
                .collect::<Result<_>>()?;
            let labels: Vec<bool> = val.iter().map(|e| e.1).collect();
            Some(auc(&scores, &labels)?)
        } else {
            None
        };
        debug!("lstm epoch {epoch}: loss {train_loss:.5} val auc {val_auc:?}");
        log.push(EpochLog {
            epoch,
            train_loss,
            val_auc,
        });
        if let Some(a) = val_auc {
            if best.as_ref().map_or(true, |b| a > b.0) {
                best = Some((a, epoch, params.clone()));
            }
        }
    }
    let (best_epoch, params) = match best {
        Some((a, e, p)) => {
            info!("best validation AUC {a:.4} at epoch {e}");
            (e, p)
        }
        None => (config.epochs.saturating_sub(1), params),
    };
    Ok(TrainedLstm {
        params,
        config: *config,
        best_epoch,
        log,
    })
}

impl LstmParams {
    /// Scale every parameter (used by tests and to build degenerate fixtures).
    pub fn scale(&mut self, by: f64) {
        self.for_each_mut(|x| *x *= by);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn random_seq(t: usize, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..t)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn zero_params_give_zero_states() {
        let p = LstmParams::zeros(3, 4);
        let seq = random_seq(5, 3, &mut seeded(0));
        let tr = lstm_forward(&seq, &p).unwrap();
        assert!(tr.hidden.iter().flatten().all(|&x| x == 0.0));
        assert_eq!(predict_prob(&seq, &p).unwrap(), 0.5);
    }

    #[test]
    fn causal_prefix() {
        let mut rng = seeded(1);
        let p = LstmParams::init(3, 4, &mut rng);
        let seq = random_seq(2, 3, &mut rng);
        let one = lstm_forward(&seq[..1].to_vec(), &p).unwrap();
        let two = lstm_forward(&seq, &p).unwrap();
        assert_eq!(one.hidden[0], two.hidden[0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let mut rng = seeded(seed);
            let p = LstmParams::init(3, 4, &mut rng);
            let seq = random_seq(6, 3, &mut rng);
            let err = gradient_check(&p, &seq, seed % 2 == 0).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn corrupted_forget_gradient_is_caught() {
        let mut rng = seeded(7);
        let p = LstmParams::init(3, 4, &mut rng);
        let seq = random_seq(5, 3, &mut rng);
        let corrupt = |s: &dyn InputSeq, y: bool, p: &LstmParams| {
            let (l, mut g) = backward(s, y, p)?;
            let h = p.hidden;
            for r in GATE_FORGET * h..(GATE_FORGET + 1) * h {
                g.b[r] *= 1.5;
                for x in &mut g.w[r * p.n_in..(r + 1) * p.n_in] {
                    *x *= 1.5;
                }
            }
            Ok((l, g))
        };
        assert!(gradient_check_with(&p, &seq, true, corrupt).unwrap() > 1e-2);
    }

    #[test]
    fn wrong_width_is_rejected() {
        let p = LstmParams::zeros(3, 2);
        assert!(lstm_forward(&vec![vec![0.0; 2]], &p).is_err());
    }

    #[test]
    fn single_example_is_memorized() {
        let mut rng = seeded(3);
        let seq = random_seq(4, 3, &mut rng);
        let p = LstmParams::init(3, 4, &mut rng);
        let cfg = LstmConfig {
            hidden: 4,
            lr: 0.05,
            epochs: 600,
            batch: 1,
            clip: None,
            seed: 0,
        };
        let data = [(&seq, true)];
        let trained = train(&data, &[], p, &cfg).unwrap();
        assert!(example_loss(&seq, true, &trained.params).unwrap() < 1e-3);
    }
}
