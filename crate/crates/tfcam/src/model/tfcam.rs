//! The cross-attention architecture.
//!
//! Pipeline: embed → add positional encoding → transformer encoder
//! stack (attention weights retained) → two bidirectional LSTM
//! branches producing temporal weights α and feature gates β → context
//! c = Σ_t α_t (β_t ⊙ Z_t) → scalar logit.

use rand_chacha::ChaCha8Rng;

use super::{ForwardVars, ModelConfig};
use crate::error::Result;
use crate::nn::{positional_encoding, BiLstm, EncoderLayer, LinearLayer};
use crate::params::{ParamSet, TapedParams};
use crate::tape::{Tape, Var};

pub(crate) struct TfcamArch {
    pub embed: LinearLayer,
    pub encoder: Vec<EncoderLayer>,
    pub alpha_rnn: BiLstm,
    pub alpha_head: LinearLayer,
    pub beta_rnn: BiLstm,
    pub beta_head: LinearLayer,
    pub head: LinearLayer,
}

impl TfcamArch {
    pub fn new(
        config: &ModelConfig,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let d = config.embed_dim;
        let hd = config.lstm_hidden;
        let embed = LinearLayer::new("embed", config.n_features, d, params, rng);
        let encoder = (0..config.n_layers)
            .map(|l| {
                EncoderLayer::new(
                    &format!("enc{l}"),
                    d,
                    config.n_heads,
                    config.causal_attention,
                    params,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let alpha_rnn = BiLstm::new("alpha_rnn", d, hd, params, rng);
        let alpha_head = LinearLayer::new("alpha_head", 2 * hd, 1, params, rng);
        let beta_rnn = BiLstm::new("beta_rnn", d, hd, params, rng);
        let beta_head = LinearLayer::new("beta_head", 2 * hd, d, params, rng);
        let head = LinearLayer::new("head", d, 1, params, rng);
        Ok(TfcamArch {
            embed,
            encoder,
            alpha_rnn,
            alpha_head,
            beta_rnn,
            beta_head,
            head,
        })
    }

    pub fn forward(
        &self,
        config: &ModelConfig,
        params: &ParamSet,
        tape: &mut Tape,
        tp: &mut TapedParams,
        x: Var,
    ) -> Result<ForwardVars> {
        let shape = tape.value(x).shape().to_vec();
        let (b, t) = (shape[0], shape[1]);

        let e = self.embed.apply(tape, tp, params, x)?;
        let pe = positional_encoding(t, config.embed_dim)?;
        let e = tape.add_const(e, pe)?;

        let mut z = e;
        let mut attention = Vec::with_capacity(config.n_layers);
        for layer in &self.encoder {
            let (out, weights) = layer.apply(tape, tp, params, z)?;
            z = out;
            attention.push(weights);
        }

        // temporal branch: per-step scalar → softmax over time
        let a_seq = self.alpha_rnn.apply(tape, tp, params, e)?;
        let a_scores = self.alpha_head.apply(tape, tp, params, a_seq)?;
        let a_scores = tape.reshape(a_scores, vec![b, t])?;
        let alpha = tape.softmax_last(a_scores);

        // feature branch: per-step gate over embedding dims
        let b_seq = self.beta_rnn.apply(tape, tp, params, e)?;
        let b_proj = self.beta_head.apply(tape, tp, params, b_seq)?;
        let beta = tape.tanh(b_proj);

        let gated = tape.mul(beta, z)?;
        let weighted = tape.scale_rows(gated, alpha)?;
        let context = tape.sum_time(weighted)?;
        let logit = self.head.apply(tape, tp, params, context)?;
        let logits = tape.reshape(logit, vec![b])?;

        Ok(ForwardVars {
            logits,
            alpha: Some(alpha),
            beta: Some(beta),
            attention,
        })
    }
}
