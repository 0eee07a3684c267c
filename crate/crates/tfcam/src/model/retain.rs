//! RETAIN-style baseline: reverse-time GRU attention branches over an
//! embedded input, with an exactly decomposable logit.

use rand_chacha::ChaCha8Rng;

use super::{ForwardVars, ModelConfig};
use crate::error::Result;
use crate::nn::{GruCell, LinearLayer};
use crate::params::{ParamSet, TapedParams};
use crate::tape::{Tape, Var};

pub(crate) struct RetainArch {
    pub embed: LinearLayer,
    pub alpha_rnn: GruCell,
    pub alpha_head: LinearLayer,
    pub beta_rnn: GruCell,
    pub beta_head: LinearLayer,
    pub head: LinearLayer,
}

impl RetainArch {
    pub fn new(config: &ModelConfig, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Self {
        let d = config.embed_dim;
        let hd = config.lstm_hidden;
        RetainArch {
            embed: LinearLayer::new("embed", config.n_features, d, params, rng),
            alpha_rnn: GruCell::new("alpha_rnn", d, hd, params, rng),
            alpha_head: LinearLayer::new("alpha_head", hd, 1, params, rng),
            beta_rnn: GruCell::new("beta_rnn", d, hd, params, rng),
            beta_head: LinearLayer::new("beta_head", hd, d, params, rng),
            head: LinearLayer::new("head", d, 1, params, rng),
        }
    }

    pub fn forward(
        &self,
        _config: &ModelConfig,
        params: &ParamSet,
        tape: &mut Tape,
        tp: &mut TapedParams,
        x: Var,
    ) -> Result<ForwardVars> {
        let shape = tape.value(x).shape().to_vec();
        let (b, t) = (shape[0], shape[1]);

        let v = self.embed.apply(tape, tp, params, x)?;

        let g_states = self.alpha_rnn.unroll_reverse(tape, tp, params, v)?;
        let g_seq = tape.stack_time(&g_states)?;
        let scores = self.alpha_head.apply(tape, tp, params, g_seq)?;
        let scores = tape.reshape(scores, vec![b, t])?;
        let alpha = tape.softmax_last(scores);

        let h_states = self.beta_rnn.unroll_reverse(tape, tp, params, v)?;
        let h_seq = tape.stack_time(&h_states)?;
        let b_proj = self.beta_head.apply(tape, tp, params, h_seq)?;
        let beta = tape.tanh(b_proj);

        let gated = tape.mul(beta, v)?;
        let weighted = tape.scale_rows(gated, alpha)?;
        let context = tape.sum_time(weighted)?;
        let logit = self.head.apply(tape, tp, params, context)?;
        let logits = tape.reshape(logit, vec![b])?;

        Ok(ForwardVars {
            logits,
            alpha: Some(alpha),
            beta: Some(beta),
            attention: Vec::new(),
        })
    }
}
