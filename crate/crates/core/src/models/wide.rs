//! Double-double arithmetic and an LSTM loss evaluated in it, used for the
//! numeric side of gradient checks. About 32 significant digits, so central
//! differences are limited by truncation rather than round-off.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::lstm::LstmParams;
use crate::features::TokenSequence;

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Wide {
    pub hi: f64,
    pub lo: f64,
}

const LN2: Wide = Wide {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Wide {
    pub const ZERO: Wide = Wide { hi: 0.0, lo: 0.0 };
    pub const ONE: Wide = Wide { hi: 1.0, lo: 0.0 };

    fn norm(hi: f64, lo: f64) -> Wide {
        let (hi, lo) = quick_two_sum(hi, lo);
        Wide { hi, lo }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn abs(self) -> Wide {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    fn ldexp(self, k: i32) -> Wide {
        let s = 2f64.powi(k);
        Wide {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }

    pub fn exp(self) -> Wide {
        if self.hi > 709.0 {
            return Wide::from(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Wide::ZERO;
        }
        let k = (self.hi / LN2.hi).round();
        // r in [-ln2/2, ln2/2], scaled by 2^-10 so the series converges fast.
        let r = (self - LN2 * Wide::from(k)).ldexp(-10);
        let mut term = Wide::ONE;
        let mut sum = Wide::ONE;
        for n in 1..=14 {
            term = term * r / Wide::from(n as f64);
            sum = sum + term;
        }
        for _ in 0..10 {
            sum = sum * sum;
        }
        sum.ldexp(k as i32)
    }

    /// Natural logarithm for positive arguments (Newton on `exp`).
    pub fn ln(self) -> Wide {
        let mut y = Wide::from(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Wide::ONE;
        }
        y
    }

    pub fn tanh(self) -> Wide {
        let t = (self.abs() * Wide::from(-2.0)).exp();
        let v = (Wide::ONE - t) / (Wide::ONE + t);
        if self.hi < 0.0 {
            -v
        } else {
            v
        }
    }

    pub fn sigmoid(self) -> Wide {
        if self.hi >= 0.0 {
            Wide::ONE / (Wide::ONE + (-self).exp())
        } else {
            let e = self.exp();
            e / (Wide::ONE + e)
        }
    }
}

impl From<f64> for Wide {
    fn from(v: f64) -> Self {
        Wide { hi: v, lo: 0.0 }
    }
}

impl Neg for Wide {
    type Output = Wide;
    fn neg(self) -> Wide {
        Wide {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for Wide {
    type Output = Wide;
    fn add(self, o: Wide) -> Wide {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Wide::norm(s, e + f)
    }
}

impl Sub for Wide {
    type Output = Wide;
    fn sub(self, o: Wide) -> Wide {
        self + (-o)
    }
}

impl Mul for Wide {
    type Output = Wide;
    fn mul(self, o: Wide) -> Wide {
        let (p, e) = two_prod(self.hi, o.hi);
        Wide::norm(p, e + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl Div for Wide {
    type Output = Wide;
    fn div(self, o: Wide) -> Wide {
        let q1 = self.hi / o.hi;
        let r = self - o * Wide::from(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Wide::from(q2);
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Wide { hi, lo } + Wide::from(q3)
    }
}

/// Parameter blocks in the order of [`LstmParams::slices`], widened.
struct WideParams {
    blocks: Vec<Vec<Wide>>,
    hidden: usize,
    embed_dim: usize,
    layers: usize,
    n_classes: usize,
}

impl WideParams {
    fn new(params: &LstmParams) -> Self {
        WideParams {
            blocks: params
                .slices()
                .iter()
                .map(|s| s.iter().map(|&v| Wide::from(v)).collect())
                .collect(),
            hidden: params.layers[0].forward.hidden(),
            embed_dim: params.embedding.dim,
            layers: params.layers.len(),
            n_classes: params.head_b.len(),
        }
    }

    fn add_flat(&mut self, mut i: usize, delta: Wide) {
        for b in &mut self.blocks {
            if i < b.len() {
                b[i] = b[i] + delta;
                return;
            }
            i -= b.len();
        }
        panic!("flat parameter index out of range")
    }

    /// Block of gate `g` (f, i, o, c), part `k` (W, U, b) of one direction.
    fn gate(&self, layer: usize, dir: usize, g: usize, k: usize) -> &[Wide] {
        &self.blocks[1 + ((layer * 2 + dir) * 4 + g) * 3 + k]
    }

    fn step(&self, layer: usize, dir: usize, x: &[Wide], h: &[Wide], c: &[Wide]) -> (Vec<Wide>, Vec<Wide>) {
        let n = self.hidden;
        let mut act = [vec![Wide::ZERO; n], vec![Wide::ZERO; n], vec![Wide::ZERO; n], vec![Wide::ZERO; n]];
        for (g, a) in act.iter_mut().enumerate() {
            let (w, u, b) = (self.gate(layer, dir, g, 0), self.gate(layer, dir, g, 1), self.gate(layer, dir, g, 2));
            for j in 0..n {
                let mut z = b[j];
                for (k, &xk) in x.iter().enumerate() {
                    z = z + w[j * x.len() + k] * xk;
                }
                for (k, &hk) in h.iter().enumerate() {
                    z = z + u[j * n + k] * hk;
                }
                a[j] = if g == 3 { z.tanh() } else { z.sigmoid() };
            }
        }
        let c_new: Vec<Wide> = (0..n).map(|j| act[0][j] * c[j] + act[1][j] * act[3][j]).collect();
        let h_new = (0..n).map(|j| act[2][j] * c_new[j].tanh()).collect();
        (h_new, c_new)
    }

    fn loss(&self, seq: &TokenSequence, target: usize) -> Wide {
        let ids = seq.tokens();
        let emb = &self.blocks[0];
        let mut inputs: Vec<Vec<Wide>> = ids
            .iter()
            .map(|&id| emb[id as usize * self.embed_dim..(id as usize + 1) * self.embed_dim].to_vec())
            .collect();
        let t_len = ids.len();
        let n = self.hidden;
        let mut last_fwd = Vec::new();
        let mut first_bwd = Vec::new();
        for layer in 0..self.layers {
            let mut fwd = vec![Vec::new(); t_len];
            let mut bwd = vec![Vec::new(); t_len];
            let (mut h, mut c) = (vec![Wide::ZERO; n], vec![Wide::ZERO; n]);
            for t in 0..t_len {
                (h, c) = self.step(layer, 0, &inputs[t], &h, &c);
                fwd[t] = h.clone();
            }
            let (mut h, mut c) = (vec![Wide::ZERO; n], vec![Wide::ZERO; n]);
            for t in (0..t_len).rev() {
                (h, c) = self.step(layer, 1, &inputs[t], &h, &c);
                bwd[t] = h.clone();
            }
            last_fwd = fwd[t_len - 1].clone();
            first_bwd = bwd[0].clone();
            inputs = (0..t_len).map(|t| [fwd[t].clone(), bwd[t].clone()].concat()).collect();
        }
        let z: Vec<Wide> = [last_fwd, first_bwd].concat();
        let head_w = &self.blocks[self.blocks.len() - 2];
        let head_b = &self.blocks[self.blocks.len() - 1];
        let mut loss = Wide::ZERO;
        for cls in 0..self.n_classes {
            let mut l = head_b[cls];
            for (k, &zk) in z.iter().enumerate() {
                l = l + head_w[cls * z.len() + k] * zk;
            }
            // softplus(l) - y·l, with softplus(l) = max(l, 0) + ln(1 + e^{-|l|})
            let soft = (Wide::ONE + (-l.abs()).exp()).ln() + if l.hi > 0.0 { l } else { Wide::ZERO };
            loss = loss + soft - if cls == target { l } else { Wide::ZERO };
        }
        loss
    }
}

/// Central difference `(L(θ+h) - L(θ-h)) / 2h` for flat parameter `index`,
/// with the loss evaluated in double-double. `target` is the position of
/// the label in the model's class list.
pub(crate) fn wide_central_difference(
    params: &LstmParams,
    seq: &TokenSequence,
    target: usize,
    index: usize,
    h: f64,
) -> f64 {
    let mut up = WideParams::new(params);
    up.add_flat(index, Wide::from(h));
    let mut down = WideParams::new(params);
    down.add_flat(index, Wide::from(-h));
    ((up.loss(seq, target) - down.loss(seq, target)) / Wide::from(2.0 * h)).to_f64()
}

/// Loss in double-double, for cross-checking the f64 forward pass.
#[cfg(test)]
pub(crate) fn wide_loss(params: &LstmParams, seq: &TokenSequence, target: usize) -> f64 {
    WideParams::new(params).loss(seq, target).to_f64()
}
