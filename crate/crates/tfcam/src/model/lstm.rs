//! Plain LSTM baseline: embed → unidirectional LSTM → last hidden
//! state → logit. No attention artifacts.

use rand_chacha::ChaCha8Rng;

use super::{ForwardVars, ModelConfig};
use crate::error::Result;
use crate::nn::{LinearLayer, LstmCell};
use crate::params::{ParamSet, TapedParams};
use crate::tape::{Tape, Var};

pub(crate) struct LstmArch {
    pub embed: LinearLayer,
    pub rnn: LstmCell,
    pub head: LinearLayer,
}

impl LstmArch {
    pub fn new(config: &ModelConfig, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Self {
        LstmArch {
            embed: LinearLayer::new("embed", config.n_features, config.embed_dim, params, rng),
            rnn: LstmCell::new("rnn", config.embed_dim, config.lstm_hidden, params, rng),
            head: LinearLayer::new("head", config.lstm_hidden, 1, params, rng),
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
        let b = tape.value(x).shape()[0];
        let e = self.embed.apply(tape, tp, params, x)?;
        let states = self.rnn.unroll(tape, tp, params, e, false)?;
        let last = *states.last().expect("T ≥ 1 enforced by unroll");
        let logit = self.head.apply(tape, tp, params, last)?;
        let logits = tape.reshape(logit, vec![b])?;
        Ok(ForwardVars {
            logits,
            alpha: None,
            beta: None,
            attention: Vec::new(),
        })
    }
}
