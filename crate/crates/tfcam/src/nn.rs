//! Differentiable layers built on the tape: linear maps, LSTM/GRU
//! cells, bidirectional recurrence, multi-head self-attention, and the
//! transformer encoder block.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamSet, TapedParams};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Sinusoidal positional encoding [T,D]:
/// PE[t,2k] = sin(t / 10000^(2k/D)), PE[t,2k+1] = cos(t / 10000^(2k/D)).
pub fn positional_encoding(t_len: usize, d: usize) -> Result<Tensor> {
    if d % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "positional encoding requires even dimension, got {d}"
        )));
    }
    let mut data = vec![0.0; t_len * d];
    for t in 0..t_len {
        for k in 0..d / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * k as f64 / d as f64);
            data[t * d + 2 * k] = (t as f64 * freq).sin();
            data[t * d + 2 * k + 1] = (t as f64 * freq).cos();
        }
    }
    Tensor::new(vec![t_len, d], data)
}

/// y = x·W + b over the last axis.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub w: ParamId,
    pub b: ParamId,
}

impl LinearLayer {
    pub fn new(
        name: &str,
        in_dim: usize,
        out_dim: usize,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = params.add_uniform(format!("{name}.w"), &[in_dim, out_dim], in_dim, rng);
        let b = params.add_zeros(format!("{name}.b"), &[out_dim]);
        LinearLayer { w, b }
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        tp: &mut TapedParams,
        params: &ParamSet,
        x: Var,
    ) -> Result<Var> {
        let w = tp.var(tape, params, self.w);
        let b = tp.var(tape, params, self.b);
        let y = tape.linear(x, w)?;
        tape.add_bias(y, b)
    }
}

/// One LSTM cell: gates ordered input, forget, candidate, output.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub wx: [ParamId; 4],
    pub wh: [ParamId; 4],
    pub b: [ParamId; 4],
    pub hidden: usize,
}

const GATE_NAMES: [&str; 4] = ["i", "f", "g", "o"];

impl LstmCell {
    pub fn new(
        name: &str,
        in_dim: usize,
        hidden: usize,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mk = |params: &mut ParamSet, rng: &mut ChaCha8Rng, g: &str| {
            (
                params.add_uniform(format!("{name}.wx_{g}"), &[in_dim, hidden], in_dim, rng),
                params.add_uniform(format!("{name}.wh_{g}"), &[hidden, hidden], hidden, rng),
                params.add_zeros(format!("{name}.b_{g}"), &[hidden]),
            )
        };
        let mut wx = [ParamId(0); 4];
        let mut wh = [ParamId(0); 4];
        let mut b = [ParamId(0); 4];
        for (gi, g) in GATE_NAMES.iter().enumerate() {
            let (a, h, bias) = mk(params, rng, g);
            wx[gi] = a;
            wh[gi] = h;
            b[gi] = bias;
        }
        LstmCell { wx, wh, b, hidden }
    }

    fn preact(
        &self,
        tape: &mut Tape,
        tp: &mut TapedParams,
        params: &ParamSet,
        gate: usize,
        x: Var,
        h: Var,
    ) -> Result<Var> {
        let wx = tp.var(tape, params, self.wx[gate]);
        let wh = tp.var(tape, params, self.wh[gate]);
        let b = tp.var(tape, params, self.b[gate]);
        let a = tape.linear(x, wx)?;
        let c = tape.linear(h, wh)?;
        let s = tape.add(a, c)?;
        tape.add_bias(s, b)
    }

    /// One step: (h_prev, c_prev) → (h_t, c_t).
    pub fn step(
        &self,
        tape: &mut Tape,
        tp: &mut TapedParams,
        params: &ParamSet,
        x_t: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, Var)> {
        let zi = self.preact(tape, tp, params, 0, x_t, h_prev)?;
        let zf = self.preact(tape, tp, params, 1, x_t, h_prev)?;
        let zg = self.preact(tape, tp, params, 2, x_t, h_prev)?;
        let zo = self.preact(tape, tp, params, 3, x_t, h_prev)?;
        let i = tape.sigmoid(zi);
        let f = tape.sigmoid(zf);
        let g = tape.tanh(zg);
        let o = tape.sigmoid(zo);
        let fc = tape.mul(f, c_prev)?;
        let ig = tape.mul(i, g)?;
        let c_t = tape.add(fc, ig)?;
        let ct_tanh = tape.tanh(c_t);
        let h_t = tape.mul(o, ct_tanh)?;
        Ok((h_t, c_t))
    }

    /// Unrolls over the time axis of x[B,T,D], zero initial states.
    /// `reverse` runs t = T−1..0; outputs stay aligned to input order.
    pub fn unroll(
        &self,
        tape: &mut Tape,
        tp: &mut TapedParams,
        params: &ParamSet,
        x: Var,
        reverse: bool,
    ) -> Result<Vec<Var>> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 3 || shape[1] == 0 {
            return Err(Error::InvalidArgument(format!(
                "lstm unroll expects [B,T,D] with T ≥ 1, got {shape:?}"
            )));
        }
        let (b, t_len) = (shape[0], shape[1]);
        let mut h = tape.leaf(Tensor::zeros(&[b, self.hidden]));
        let mut c = tape.leaf(Tensor::zeros(&[b, self.hidden]));
        let order: Vec<usize> = if reverse {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        };
        let mut out = vec![Var(0); t_len];
        for &t in &order {
            let x_t = tape.index_time(x, t)?;
            let (h_t, c_t) = self.step(tape, tp, params, x_t, h, c)?;
            h = h_t;
            c = c_t;
            out[t] = h_t;
        }
        Ok(out)
    }
}

/// Forward and backward LSTM passes concatenated per time step.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

impl BiLstm {
    pub fn new(
        name: &str,
        in_dim: usize,
        hidden: usize,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        BiLstm {
            fwd: LstmCell::new(&format!("{name}.fwd"), in_dim, hidden, params, rng),
            bwd: LstmCell::new(&format!("{name}.bwd"), in_dim, hidden, params, rng),
        }
    }

    /// x[B,T,D] → [B,T,2·hidden].
    pub fn apply(
        &self,
        tape: &mut Tape,
        tp: &mut TapedParams,
        params: &ParamSet,
        x: Var,
    ) -> Result<Var> {
        let f = self.fwd.unroll(tape, tp, params, x, false)?;
        let b = self.bwd.unroll(tape, tp, params, x, true)?;
        let joined: Vec<Var> = f
            .iter()
            .zip(&b)
            .map(|(&hf, &hb)| tape.concat_last(hf, hb))
            .collect::<Result<_>>()?;
        tape.stack_time(&joined)
    }
}

/// One GRU cell (reset/update/candidate), used by the reverse-time
/// attention branches of the RETAIN baseline.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub wx: [ParamId; 3],
    pub wh: [ParamId; 3],
    pub bx: [ParamId; 3],
    pub bh: [ParamId; 3],
    pub hidden: usize,
}

impl GruCell {
    pub fn new(
        name: &str,
        in_dim: usize,
        hidden: usize,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut wx = [ParamId(0); 3];
        let mut wh = [ParamId(0); 3];
        let mut bx = [ParamId(0); 3];
        let mut bh = [ParamId(0); 3];
        for (gi, g) in ["r", "z", "n"].iter().enumerate() {
            wx[gi] = params.add_uniform(format!("{name}.wx_{g}"), &[in_dim, hidden], in_dim, rng);
            wh[gi] = params.add_uniform(format!("{name}.wh_{g}"), &[hidden, hidden], hidden, rng);
            bx[gi] = params.add_zeros(format!("{name}.bx_{g}"), &[hidden]);
            bh[gi] = params.add_zeros(format!("{name}.bh_{g}"), &[hidden]);
        }
        GruCell {
            wx,
            wh,
            bx,
            bh,
            hidden,
        }
    }

    fn branch(
        &self,
        tape: &mut Tape,
        tp: &mut TapedParams,
        params: &ParamSet,
        gate: usize,
        x: Var,
        from_x: bool,
    ) -> Result<Var> {
        let (w, b) = if from_x {
            (self.wx[gate], self.bx[gate])
        } else {
            (self.wh[gate], self.bh[gate])
        };
        let w = tp.var(tape, params, w);
        let b = tp.var(tape, params, b);
        let y = tape.linear(x, w)?;
        tape.add_bias(y, b)
    }

    pub fn step(
        &self,
        tape: &mut Tape,
        tp: &mut TapedParams,
        params: &ParamSet,
        x_t: Var,
        h_prev: Var,
    ) -> Result<Var> {
        let zr = {
            let a = self.branch(tape, tp, params, 0, x_t, true)?;
            let b = self.branch(tape, tp, params, 0, h_prev, false)?;
            tape.add(a, b)?
        };
        let r = tape.sigmoid(zr);
        let zz = {
            let a = self.branch(tape, tp, params, 1, x_t, true)?;
            let b = self.branch(tape, tp, params, 1, h_prev, false)?;
            tape.add(a, b)?
        };
        let z = tape.sigmoid(zz);
        let zn = {
            let a = self.branch(tape, tp, params, 2, x_t, true)?;
            let hn = self.branch(tape, tp, params, 2, h_prev, false)?;
            let gated = tape.mul(r, hn)?;
            tape.add(a, gated)?
        };
        let n = tape.tanh(zn);
        // h = (1−z)⊙n + z⊙h_prev
        let zh = tape.mul(z, h_prev)?;
        let zn2 = tape.mul(z, n)?;
        let n_minus = tape.sub(n, zn2)?;
        tape.add(n_minus, zh)
    }

    /// Reverse-time unroll (RETAIN convention), outputs in input order.
    pub fn unroll_reverse(
        &self,
        tape: &mut Tape,
        tp: &mut TapedParams,
        params: &ParamSet,
        x: Var,
    ) -> Result<Vec<Var>> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 3 || shape[1] == 0 {
            return Err(Error::InvalidArgument(format!(
                "gru unroll expects [B,T,D] with T ≥ 1, got {shape:?}"
            )));
        }
        let (b, t_len) = (shape[0], shape[1]);
        let mut h = tape.leaf(Tensor::zeros(&[b, self.hidden]));
        let mut out = vec![Var(0); t_len];
        for t in (0..t_len).rev() {
            let x_t = tape.index_time(x, t)?;
            h = self.step(tape, tp, params, x_t, h)?;
            out[t] = h;
        }
        Ok(out)
    }
}

/// Multi-head scaled dot-product self-attention with per-head
/// projections. Always returns the per-head weight matrices.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Vec<ParamId>,
    pub wk: Vec<ParamId>,
    pub wv: Vec<ParamId>,
    pub out: LinearLayer,
    pub n_heads: usize,
    pub d_head: usize,
    pub causal: bool,
}

impl MultiHeadAttention {
    pub fn new(
        name: &str,
        d_model: usize,
        n_heads: usize,
        causal: bool,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if n_heads == 0 || d_model % n_heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "model dimension {d_model} not divisible by {n_heads} heads"
            )));
        }
        let d_head = d_model / n_heads;
        let mut wq = Vec::new();
        let mut wk = Vec::new();
        let mut wv = Vec::new();
        for h in 0..n_heads {
            wq.push(params.add_uniform(
                format!("{name}.h{h}.wq"),
                &[d_model, d_head],
                d_model,
                rng,
            ));
            wk.push(params.add_uniform(
                format!("{name}.h{h}.wk"),
                &[d_model, d_head],
                d_model,
                rng,
            ));
            wv.push(params.add_uniform(
                format!("{name}.h{h}.wv"),
                &[d_model, d_head],
                d_model,
                rng,
            ));
        }
        let out = LinearLayer::new(&format!("{name}.out"), d_model, d_model, params, rng);
        Ok(MultiHeadAttention {
            wq,
            wk,
            wv,
            out,
            n_heads,
            d_head,
            causal,
        })
    }

    /// x[B,T,D] → (combined output [B,T,D], per-head weights [B,T,T]
    /// in query-major order: weights[b][t'][t] is query t' on key t).
    pub fn apply(
        &self,
        tape: &mut Tape,
        tp: &mut TapedParams,
        params: &ParamSet,
        x: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 3 || shape[1] == 0 {
            return Err(Error::InvalidArgument(format!(
                "attention expects [B,T,D] with T ≥ 1, got {shape:?}"
            )));
        }
        let t_len = shape[1];
        let mask = if self.causal {
            let mut m = vec![0.0; t_len * t_len];
            for q in 0..t_len {
                for k in (q + 1)..t_len {
                    m[q * t_len + k] = -1e30;
                }
            }
            Some(Tensor::new(vec![t_len, t_len], m).unwrap())
        } else {
            None
        };
        let scale = 1.0 / (self.d_head as f64).sqrt();
        let mut head_outs = Vec::new();
        let mut head_weights = Vec::new();
        for h in 0..self.n_heads {
            let wq = tp.var(tape, params, self.wq[h]);
            let wk = tp.var(tape, params, self.wk[h]);
            let wv = tp.var(tape, params, self.wv[h]);
            let q = tape.linear(x, wq)?;
            let k = tape.linear(x, wk)?;
            let v = tape.linear(x, wv)?;
            let kt = tape.transpose_last2(k)?;
            let scores = tape.bmm(q, kt)?;
            let mut scores = tape.scale(scores, scale);
            if let Some(m) = &mask {
                scores = tape.add_const(scores, m.clone())?;
            }
            let w = tape.softmax_last(scores);
            let o = tape.bmm(w, v)?;
            head_weights.push(w);
            head_outs.push(o);
        }
        let mut combined = head_outs[0];
        for &o in &head_outs[1..] {
            combined = tape.concat_last(combined, o)?;
        }
        let out = self.out.apply(tape, tp, params, combined)?;
        Ok((out, head_weights))
    }
}

/// Post-norm transformer encoder block:
/// attention → add&norm → feed-forward (4·D inner, GELU) → add&norm.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub ff1: LinearLayer,
    pub ff2: LinearLayer,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
}

const LN_EPS: f64 = 1e-5;

impl EncoderLayer {
    pub fn new(
        name: &str,
        d_model: usize,
        n_heads: usize,
        causal: bool,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let attn = MultiHeadAttention::new(&format!("{name}.attn"), d_model, n_heads, causal, params, rng)?;
        let ln1_gamma = params.add_ones(format!("{name}.ln1.gamma"), &[d_model]);
        let ln1_beta = params.add_zeros(format!("{name}.ln1.beta"), &[d_model]);
        let ff1 = LinearLayer::new(&format!("{name}.ff1"), d_model, 4 * d_model, params, rng);
        let ff2 = LinearLayer::new(&format!("{name}.ff2"), 4 * d_model, d_model, params, rng);
        let ln2_gamma = params.add_ones(format!("{name}.ln2.gamma"), &[d_model]);
        let ln2_beta = params.add_zeros(format!("{name}.ln2.beta"), &[d_model]);
        Ok(EncoderLayer {
            attn,
            ln1_gamma,
            ln1_beta,
            ff1,
            ff2,
            ln2_gamma,
            ln2_beta,
        })
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        tp: &mut TapedParams,
        params: &ParamSet,
        x: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let (att, weights) = self.attn.apply(tape, tp, params, x)?;
        let res1 = tape.add(x, att)?;
        let g1 = tp.var(tape, params, self.ln1_gamma);
        let b1 = tp.var(tape, params, self.ln1_beta);
        let y1 = tape.layer_norm(res1, g1, b1, LN_EPS)?;
        let f1 = self.ff1.apply(tape, tp, params, y1)?;
        let f1 = tape.gelu(f1);
        let f2 = self.ff2.apply(tape, tp, params, f1)?;
        let res2 = tape.add(y1, f2)?;
        let g2 = tp.var(tape, params, self.ln2_gamma);
        let b2 = tp.var(tape, params, self.ln2_beta);
        let y2 = tape.layer_norm(res2, g2, b2, LN_EPS)?;
        Ok((y2, weights))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_grads, rel_error};
    use rand::SeedableRng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn zero_lstm(params: &mut ParamSet, rng: &mut ChaCha8Rng, d: usize, hd: usize) -> LstmCell {
        let cell = LstmCell::new("cell", d, hd, params, rng);
        for p in params.iter_mut() {
            p.value.fill(0.0);
        }
        cell
    }

    #[test]
    fn positional_encoding_values() {
        let pe = positional_encoding(4, 4).unwrap();
        assert_eq!(pe.at2(0, 0), 0.0); // sin(0)
        assert_eq!(pe.at2(0, 1), 1.0); // cos(0)
        assert!((pe.at2(1, 0) - 1f64.sin()).abs() < 1e-12);
        assert!(pe.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn positional_encoding_rejects_odd_dim() {
        assert!(positional_encoding(4, 3).is_err());
    }

    #[test]
    fn lstm_zero_params_zero_states_give_zero_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamSet::new();
        let cell = zero_lstm(&mut params, &mut rng, 2, 3);
        let mut tape = Tape::new();
        let mut tp = TapedParams::new();
        let x = tape.leaf(t(&[1, 2], &[1.0, -1.0]));
        let h0 = tape.leaf(Tensor::zeros(&[1, 3]));
        let c0 = tape.leaf(Tensor::zeros(&[1, 3]));
        let (h, _) = cell.step(&mut tape, &mut tp, &params, x, h0, c0).unwrap();
        assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_saturated_forget_gate_preserves_cell_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamSet::new();
        let cell = zero_lstm(&mut params, &mut rng, 2, 2);
        // forget bias +50 → f ≈ 1; input bias −50 → i ≈ 0
        params.get_mut(cell.b[1]).value.fill(50.0);
        params.get_mut(cell.b[0]).value.fill(-50.0);
        let mut tape = Tape::new();
        let mut tp = TapedParams::new();
        let x = tape.leaf(t(&[1, 2], &[0.3, -0.7]));
        let h0 = tape.leaf(Tensor::zeros(&[1, 2]));
        let c0 = tape.leaf(t(&[1, 2], &[0.9, -0.4]));
        let (_, c1) = cell.step(&mut tape, &mut tp, &params, x, h0, c0).unwrap();
        let got = tape.value(c1).data();
        assert!((got[0] - 0.9).abs() < 1e-8 && (got[1] + 0.4).abs() < 1e-8);
    }

    /// Independent step-by-step gate evaluation with plain loops.
    fn lstm_oracle(
        params: &ParamSet,
        cell: &LstmCell,
        x: &[f64],
        h: &[f64],
        c: &[f64],
        hd: usize,
        d: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let gate = |gi: usize| -> Vec<f64> {
            let wx = params.get(cell.wx[gi]).value.data();
            let wh = params.get(cell.wh[gi]).value.data();
            let b = params.get(cell.b[gi]).value.data();
            (0..hd)
                .map(|j| {
                    let mut z = b[j];
                    for i in 0..d {
                        z += x[i] * wx[i * hd + j];
                    }
                    for i in 0..hd {
                        z += h[i] * wh[i * hd + j];
                    }
                    z
                })
                .collect()
        };
        let (zi, zf, zg, zo) = (gate(0), gate(1), gate(2), gate(3));
        let mut cn = vec![0.0; hd];
        let mut hn = vec![0.0; hd];
        for j in 0..hd {
            cn[j] = sig(zf[j]) * c[j] + sig(zi[j]) * zg[j].tanh();
            hn[j] = sig(zo[j]) * cn[j].tanh();
        }
        (hn, cn)
    }

    #[test]
    fn lstm_matches_independent_gate_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = ParamSet::new();
        let cell = LstmCell::new("cell", 2, 2, &mut params, &mut rng);
        let x = [0.4, -0.2];
        let h0 = [0.1, 0.3];
        let c0 = [-0.5, 0.2];
        let (eh, ec) = lstm_oracle(&params, &cell, &x, &h0, &c0, 2, 2);

        let mut tape = Tape::new();
        let mut tp = TapedParams::new();
        let xv = tape.leaf(t(&[1, 2], &x));
        let hv = tape.leaf(t(&[1, 2], &h0));
        let cv = tape.leaf(t(&[1, 2], &c0));
        let (h1, c1) = cell.step(&mut tape, &mut tp, &params, xv, hv, cv).unwrap();
        for (g, e) in tape.value(h1).data().iter().zip(&eh) {
            assert!((g - e).abs() < 1e-12);
        }
        for (g, e) in tape.value(c1).data().iter().zip(&ec) {
            assert!((g - e).abs() < 1e-12);
        }
        // outputs bounded
        assert!(tape.value(h1).data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn bilstm_t1_uses_same_single_step_for_both_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ParamSet::new();
        let mut bi = BiLstm::new("bi", 2, 2, &mut params, &mut rng);
        // share params across directions so both halves must agree at T=1
        bi.bwd = bi.fwd.clone();
        let mut tape = Tape::new();
        let mut tp = TapedParams::new();
        let x = tape.leaf(t(&[1, 1, 2], &[0.5, -0.3]));
        let y = bi.apply(&mut tape, &mut tp, &params, x).unwrap();
        let v = tape.value(y).data();
        assert_eq!(&v[0..2], &v[2..4]);
    }

    #[test]
    fn bilstm_reversal_swaps_halves_with_shared_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut params = ParamSet::new();
        let mut bi = BiLstm::new("bi", 2, 3, &mut params, &mut rng);
        bi.bwd = bi.fwd.clone();
        let xs: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
        let rev: Vec<f64> = xs
            .chunks(2)
            .rev()
            .flat_map(|c| c.iter().copied())
            .collect();
        let run = |data: &[f64]| {
            let mut tape = Tape::new();
            let mut tp = TapedParams::new();
            let x = tape.leaf(t(&[1, 4, 2], data));
            let y = bi.apply(&mut tape, &mut tp, &params, x).unwrap();
            tape.value(y).data().to_vec()
        };
        let a = run(&xs);
        let b = run(&rev);
        let hd = 3;
        for ti in 0..4 {
            let fa = &a[ti * 2 * hd..ti * 2 * hd + hd];
            let ba = &a[ti * 2 * hd + hd..(ti + 1) * 2 * hd];
            let tb = 3 - ti;
            let fb = &b[tb * 2 * hd..tb * 2 * hd + hd];
            let bb = &b[tb * 2 * hd + hd..(tb + 1) * 2 * hd];
            for (u, v) in fa.iter().zip(bb).chain(ba.iter().zip(fb)) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bilstm_matches_manual_unroll() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = ParamSet::new();
        let bi = BiLstm::new("bi", 2, 2, &mut params, &mut rng);
        let xs = [0.1, 0.2, -0.3, 0.4];
        let mut tape = Tape::new();
        let mut tp = TapedParams::new();
        let x = tape.leaf(t(&[1, 2, 2], &xs));
        let y = bi.apply(&mut tape, &mut tp, &params, x).unwrap();
        let got = tape.value(y).data().to_vec();

        // manual unroll of the two directions with lstm_oracle
        let (hf0, cf0) = lstm_oracle(&params, &bi.fwd, &xs[0..2], &[0.0; 2], &[0.0; 2], 2, 2);
        let (hf1, _) = lstm_oracle(&params, &bi.fwd, &xs[2..4], &hf0, &cf0, 2, 2);
        let (hb1, cb1) = lstm_oracle(&params, &bi.bwd, &xs[2..4], &[0.0; 2], &[0.0; 2], 2, 2);
        let (hb0, _) = lstm_oracle(&params, &bi.bwd, &xs[0..2], &hb1, &cb1, 2, 2);
        let expect: Vec<f64> = [hf0, hb0, hf1, hb1].concat();
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_single_position_weight_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut params = ParamSet::new();
        let mha = MultiHeadAttention::new("a", 4, 2, false, &mut params, &mut rng).unwrap();
        let mut tape = Tape::new();
        let mut tp = TapedParams::new();
        let x = tape.leaf(t(&[1, 1, 4], &[0.1, 0.2, 0.3, 0.4]));
        let (_, weights) = mha.apply(&mut tape, &mut tp, &params, x).unwrap();
        for w in weights {
            assert_eq!(tape.value(w).data(), &[1.0]);
        }
    }

    #[test]
    fn attention_identical_keys_give_uniform_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut params = ParamSet::new();
        let mha = MultiHeadAttention::new("a", 4, 1, false, &mut params, &mut rng).unwrap();
        // same embedding at every position → identical keys
        let row = [0.3, -0.1, 0.8, 0.25];
        let data: Vec<f64> = row.iter().cycle().take(12).copied().collect();
        let mut tape = Tape::new();
        let mut tp = TapedParams::new();
        let x = tape.leaf(t(&[1, 3, 4], &data));
        let (_, weights) = mha.apply(&mut tape, &mut tp, &params, x).unwrap();
        for &v in tape.value(weights[0]).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_matches_hand_computed_toy() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut params = ParamSet::new();
        let mha = MultiHeadAttention::new("a", 2, 1, false, &mut params, &mut rng).unwrap();
        let xs = [0.5, -0.2, 0.1, 0.9];
        let mut tape = Tape::new();
        let mut tp = TapedParams::new();
        let x = tape.leaf(t(&[1, 2, 2], &xs));
        let (_, weights) = mha.apply(&mut tape, &mut tp, &params, x).unwrap();
        let got = tape.value(weights[0]).data().to_vec();

        // independent scaled dot-product with plain loops
        let wq = params.get(mha.wq[0]).value.clone();
        let wk = params.get(mha.wk[0]).value.clone();
        let proj = |w: &Tensor, t_idx: usize| -> Vec<f64> {
            (0..2)
                .map(|j| (0..2).map(|i| xs[t_idx * 2 + i] * w.at2(i, j)).sum())
                .collect()
        };
        let scale = 1.0 / 2f64.sqrt();
        let mut expect = vec![0.0; 4];
        for q in 0..2 {
            let qv = proj(&wq, q);
            let scores: Vec<f64> = (0..2)
                .map(|k| {
                    let kv = proj(&wk, k);
                    scale * (qv[0] * kv[0] + qv[1] * kv[1])
                })
                .collect();
            let m = scores[0].max(scores[1]);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let sum: f64 = e.iter().sum();
            expect[q * 2] = e[0] / sum;
            expect[q * 2 + 1] = e[1] / sum;
        }
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn attention_rejects_indivisible_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ParamSet::new();
        assert!(MultiHeadAttention::new("a", 6, 4, false, &mut params, &mut rng).is_err());
    }

    #[test]
    fn causal_mask_zeroes_future_weights_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut params = ParamSet::new();
        let mha = MultiHeadAttention::new("a", 4, 2, true, &mut params, &mut rng).unwrap();
        let data: Vec<f64> = (0..16).map(|i| (i as f64 * 0.21).cos()).collect();
        let mut tape = Tape::new();
        let mut tp = TapedParams::new();
        let x = tape.leaf(t(&[1, 4, 4], &data));
        let (_, weights) = mha.apply(&mut tape, &mut tp, &params, x).unwrap();
        for w in weights {
            let wv = tape.value(w);
            for q in 0..4 {
                for k in (q + 1)..4 {
                    assert_eq!(wv.at3(0, q, k), 0.0);
                }
                let row_sum: f64 = (0..4).map(|k| wv.at3(0, q, k)).sum();
                assert!((row_sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encoder_layer_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut params = ParamSet::new();
        let layer = EncoderLayer::new("enc", 4, 2, true, &mut params, &mut rng).unwrap();
        let xs: Vec<f64> = (0..24).map(|i| (i as f64 * 0.17).sin() * 0.5).collect();
        let x_tensor = t(&[2, 3, 4], &xs);

        let forward = |ps: &ParamSet| -> f64 {
            let mut tape = Tape::new();
            let mut tp = TapedParams::new();
            let x = tape.leaf(x_tensor.clone());
            let (y, _) = layer.apply(&mut tape, &mut tp, ps, x).unwrap();
            let s = tape.sum_all(y);
            tape.value(s).item()
        };
        let numeric = finite_diff_grads(&params, 1e-5, forward);

        let mut tape = Tape::new();
        let mut tp = TapedParams::new();
        let x = tape.leaf(x_tensor.clone());
        let (y, _) = layer.apply(&mut tape, &mut tp, &params, x).unwrap();
        let loss = tape.sum_all(y);
        params.zero_grad();
        tp.backward(&tape, loss, &mut params).unwrap();

        for (i, p) in params.iter().enumerate() {
            let e = rel_error(&p.grad, &numeric[i], 1e-4);
            assert!(e < 1e-4, "param {} rel err {}", p.name, e);
        }
    }

    #[test]
    fn bilstm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut params = ParamSet::new();
        let bi = BiLstm::new("bi", 3, 2, &mut params, &mut rng);
        let xs: Vec<f64> = (0..18).map(|i| (i as f64 * 0.29).cos() * 0.6).collect();
        let x_tensor = t(&[2, 3, 3], &xs);

        let forward = |ps: &ParamSet| -> f64 {
            let mut tape = Tape::new();
            let mut tp = TapedParams::new();
            let x = tape.leaf(x_tensor.clone());
            let y = bi.apply(&mut tape, &mut tp, ps, x).unwrap();
            let s = tape.sum_all(y);
            tape.value(s).item()
        };
        let numeric = finite_diff_grads(&params, 1e-5, forward);

        let mut tape = Tape::new();
        let mut tp = TapedParams::new();
        let x = tape.leaf(x_tensor);
        let y = bi.apply(&mut tape, &mut tp, &params, x).unwrap();
        let loss = tape.sum_all(y);
        params.zero_grad();
        tp.backward(&tape, loss, &mut params).unwrap();

        for (i, p) in params.iter().enumerate() {
            let e = rel_error(&p.grad, &numeric[i], 1e-4);
            assert!(e < 1e-4, "param {} rel err {}", p.name, e);
        }
    }
}
