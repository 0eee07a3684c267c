//! Model architectures: the cross-attention model, the RETAIN-style
//! baseline, and a plain LSTM, plus training and checkpointing.
//!
//! ```
//! use tfcam::model::{Model, ModelConfig, ModelKind};
//! use tfcam::tensor::Tensor;
//!
//! let mut config = ModelConfig::new(ModelKind::Tfcam, 5, 6); // F=5, T=6
//! config.embed_dim = 8;
//! config.n_layers = 1;
//! config.n_heads = 2;
//! let model = Model::new(config).unwrap();
//!
//! let x = Tensor::zeros(&[2, 6, 5]); // batch of 2 patients
//! let artifacts = model.forward(&x).unwrap();
//! let alpha = artifacts.alpha.unwrap();
//! let row: f64 = (0..6).map(|t| alpha.at2(0, t)).sum();
//! assert!((row - 1.0).abs() < 1e-9); // temporal weights are a distribution
//! ```

mod checkpoint;
mod lstm;
mod retain;
mod tfcam;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use train::{train, TrainedModel};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamSet, TapedParams};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Tfcam,
    Retain,
    Lstm,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Tfcam => "tfcam",
            ModelKind::Retain => "retain",
            ModelKind::Lstm => "lstm",
        }
    }

    /// Explainability capability matrix, fixed by architecture:
    /// (feature level, temporal level, cross-temporal level).
    pub fn capabilities(&self) -> (bool, bool, bool) {
        match self {
            ModelKind::Lstm => (false, false, false),
            ModelKind::Retain => (true, true, false),
            ModelKind::Tfcam => (true, true, true),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tfcam" => Ok(ModelKind::Tfcam),
            "retain" => Ok(ModelKind::Retain),
            "lstm" => Ok(ModelKind::Lstm),
            other => Err(Error::InvalidArgument(format!(
                "unknown model kind '{other}', expected tfcam|retain|lstm"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model_kind: ModelKind,
    pub n_features: usize,
    pub n_timesteps: usize,
    pub embed_dim: usize,
    pub lstm_hidden: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub causal_attention: bool,
    pub seed: u64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Positive-class weight for the loss; derived from the training
    /// split's class ratio when absent.
    pub pos_weight: Option<f64>,
}

impl ModelConfig {
    pub fn new(model_kind: ModelKind, n_features: usize, n_timesteps: usize) -> Self {
        ModelConfig {
            model_kind,
            n_features,
            n_timesteps,
            embed_dim: 32,
            lstm_hidden: 32,
            n_layers: 2,
            n_heads: 4,
            causal_attention: true,
            seed: 0,
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 64,
            pos_weight: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.embed_dim % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "embed_dim must be positive and even, got {}",
                self.embed_dim
            )));
        }
        if self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "embed_dim {} must be divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if self.n_timesteps < 2 {
            return Err(Error::InvalidArgument(format!(
                "n_timesteps must be ≥ 2, got {}",
                self.n_timesteps
            )));
        }
        if self.n_features == 0 {
            return Err(Error::InvalidArgument("n_features must be ≥ 1".into()));
        }
        if self.n_layers == 0 || self.lstm_hidden == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "n_layers, lstm_hidden, batch_size must be ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

/// Everything a forward pass exposes for prediction and explanation.
/// Attention-derived fields are absent for architectures that do not
/// produce them.
#[derive(Debug, Clone)]
pub struct ForwardArtifacts {
    /// [B]
    pub logits: Tensor,
    /// [B,T], rows sum to 1.
    pub alpha: Option<Tensor>,
    /// [B,T,D]
    pub beta: Option<Tensor>,
    /// [B,T,F], signed local contributions.
    pub contribution: Option<Tensor>,
    /// [B,L,H,T,T], source-major: [b,l,h,t,t'] is weight of query t'
    /// on key t.
    pub attention_per_layer_head: Option<Tensor>,
    /// [B,T,T], mean over layers and heads; Σ_t A[b,t,t'] = 1.
    pub aggregated_attention: Option<Tensor>,
}

pub(crate) enum Arch {
    Tfcam(tfcam::TfcamArch),
    Retain(retain::RetainArch),
    Lstm(lstm::LstmArch),
}

/// A model: configuration, parameters, and the architecture wiring.
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub(crate) arch: Arch,
}

/// Tape handles produced by one forward pass; used by training.
pub(crate) struct ForwardVars {
    pub logits: Var,
    pub alpha: Option<Var>,
    pub beta: Option<Var>,
    /// Per layer, per head attention weights, query-major [B,T,T].
    pub attention: Vec<Vec<Var>>,
}

impl Model {
    /// Builds a freshly initialized model; weights drawn from the
    /// config seed.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let arch = match config.model_kind {
            ModelKind::Tfcam => Arch::Tfcam(tfcam::TfcamArch::new(&config, &mut params, &mut rng)?),
            ModelKind::Retain => {
                Arch::Retain(retain::RetainArch::new(&config, &mut params, &mut rng))
            }
            ModelKind::Lstm => Arch::Lstm(lstm::LstmArch::new(&config, &mut params, &mut rng)),
        };
        Ok(Model {
            config,
            params,
            arch,
        })
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let want = [
            x.shape().first().copied().unwrap_or(0),
            self.config.n_timesteps,
            self.config.n_features,
        ];
        if x.rank() != 3 || x.shape()[1..] != want[1..] {
            return Err(Error::shape("model input", x.shape(), &want));
        }
        Ok(())
    }

    /// Builds the forward computation on `tape` and returns the tape
    /// handles. `x` must already be a leaf on the tape.
    pub(crate) fn forward_on_tape(
        &self,
        tape: &mut Tape,
        tp: &mut TapedParams,
        x: Var,
    ) -> Result<ForwardVars> {
        self.forward_with(&self.params, tape, tp, x)
    }

    fn forward_with(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        tp: &mut TapedParams,
        x: Var,
    ) -> Result<ForwardVars> {
        match &self.arch {
            Arch::Tfcam(a) => a.forward(&self.config, params, tape, tp, x),
            Arch::Retain(a) => a.forward(&self.config, params, tape, tp, x),
            Arch::Lstm(a) => a.forward(&self.config, params, tape, tp, x),
        }
    }

    /// Weighted BCE of one batch under an arbitrary parameter
    /// assignment for this architecture. Exists for finite-difference
    /// gradient checking against [`Self::loss_gradients`].
    pub fn loss_with(
        &self,
        params: &ParamSet,
        x: &Tensor,
        labels: &Tensor,
        pos_weight: f64,
    ) -> Result<f64> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let mut tp = TapedParams::new();
        let xv = tape.leaf(x.clone());
        let fv = self.forward_with(params, &mut tape, &mut tp, xv)?;
        let loss = tape.weighted_bce(fv.logits, labels, pos_weight)?;
        Ok(tape.value(loss).item())
    }

    /// Computes the loss and populates every parameter's gradient slot
    /// via reverse-mode differentiation.
    pub fn loss_gradients(&mut self, x: &Tensor, labels: &Tensor, pos_weight: f64) -> Result<f64> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let mut tp = TapedParams::new();
        let xv = tape.leaf(x.clone());
        let fv = self.forward_on_tape(&mut tape, &mut tp, xv)?;
        let loss = tape.weighted_bce(fv.logits, labels, pos_weight)?;
        let loss_val = tape.value(loss).item();
        self.params.zero_grad();
        tp.backward(&tape, loss, &mut self.params)?;
        Ok(loss_val)
    }

    /// Full forward pass producing all explanation artifacts for this
    /// architecture.
    pub fn forward(&self, x: &Tensor) -> Result<ForwardArtifacts> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let mut tp = TapedParams::new();
        let xv = tape.leaf(x.clone());
        let fv = self.forward_on_tape(&mut tape, &mut tp, xv)?;
        let logits = tape.value(fv.logits).clone();
        if !logits.all_finite() {
            return Err(Error::NonFinite("model logits".into()));
        }

        let alpha = fv.alpha.map(|v| tape.value(v).clone());
        let beta = fv.beta.map(|v| tape.value(v).clone());

        let contribution = match (&alpha, &beta) {
            (Some(a), Some(b)) => Some(self.contribution_matrix(x, a, b)?),
            _ => None,
        };

        let attention_per_layer_head = if fv.attention.is_empty() {
            None
        } else {
            Some(stack_attention(&tape, &fv.attention))
        };
        let aggregated_attention = attention_per_layer_head
            .as_ref()
            .map(crate::explain::aggregate_attention)
            .transpose()?;

        Ok(ForwardArtifacts {
            logits,
            alpha,
            beta,
            contribution,
            attention_per_layer_head,
            aggregated_attention,
        })
    }

    /// C[b,t,i] = α[b,t] · X[b,t,i] · Σ_d (w_out[d]·β[b,t,d]·W_emb[i,d]):
    /// the exact linear decomposition of the logit through the
    /// embedding, shared by both attention architectures.
    fn contribution_matrix(&self, x: &Tensor, alpha: &Tensor, beta: &Tensor) -> Result<Tensor> {
        let (w_emb, w_out) = match &self.arch {
            Arch::Tfcam(a) => (a.embed.w, a.head.w),
            Arch::Retain(a) => (a.embed.w, a.head.w),
            Arch::Lstm(_) => {
                return Err(Error::Capability(
                    "lstm model produces no contribution matrix".into(),
                ))
            }
        };
        let w_emb = &self.params.get(w_emb).value; // [F,D]
        let w_out = &self.params.get(w_out).value; // [D,1]
        let (b, t, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let d = w_emb.shape()[1];
        let mut c = Tensor::zeros(&[b, t, f]);
        for bi in 0..b {
            for ti in 0..t {
                // kernel[i] = Σ_d w_out[d]·β[b,t,d]·W_emb[i,d]
                for fi in 0..f {
                    let mut k = 0.0;
                    for di in 0..d {
                        k += w_out.at2(di, 0) * beta.at3(bi, ti, di) * w_emb.at2(fi, di);
                    }
                    let v = alpha.at2(bi, ti) * x.at3(bi, ti, fi) * k;
                    c.set3(bi, ti, fi, v);
                }
            }
        }
        Ok(c)
    }

    /// Sum of all bias routes into the logit for patient `b`, so that
    /// Σ_{t,i} C[b,t,i] + bias_total(b) equals the logit exactly for
    /// the RETAIN architecture.
    pub fn bias_total(&self, alpha: &Tensor, beta: &Tensor, patient: usize) -> Result<f64> {
        let (b_emb, w_out, b_out) = match &self.arch {
            Arch::Retain(a) => (a.embed.b, a.head.w, a.head.b),
            Arch::Tfcam(a) => (a.embed.b, a.head.w, a.head.b),
            Arch::Lstm(_) => {
                return Err(Error::Capability("lstm model has no decomposition".into()))
            }
        };
        let b_emb = &self.params.get(b_emb).value;
        let w_out = &self.params.get(w_out).value;
        let b_out = self.params.get(b_out).value.data()[0];
        let t = alpha.shape()[1];
        let d = b_emb.len();
        let mut total = b_out;
        for ti in 0..t {
            let mut s = 0.0;
            for di in 0..d {
                s += w_out.at2(di, 0) * beta.at3(patient, ti, di) * b_emb.data()[di];
            }
            total += alpha.at2(patient, ti) * s;
        }
        Ok(total)
    }

    /// σ(logits), batch order preserved.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let artifacts = self.forward(x)?;
        Ok(artifacts.logits.map(|z| {
            if z >= 0.0 {
                1.0 / (1.0 + (-z).exp())
            } else {
                let e = z.exp();
                e / (1.0 + e)
            }
        }))
    }
}

/// Assembles per-layer/head query-major weights [B,T,T] into the
/// source-major stack [B,L,H,T,T]: stack[b,l,h,t,t'] = w[b,t',t].
fn stack_attention(tape: &Tape, attention: &[Vec<Var>]) -> Tensor {
    let l = attention.len();
    let h = attention[0].len();
    let first = tape.value(attention[0][0]);
    let (b, t) = (first.shape()[0], first.shape()[1]);
    let mut out = Tensor::zeros(&[b, l, h, t, t]);
    let data = out.data_mut();
    for (li, layer) in attention.iter().enumerate() {
        for (hi, &wv) in layer.iter().enumerate() {
            let w = tape.value(wv);
            for bi in 0..b {
                for src in 0..t {
                    for dst in 0..t {
                        let idx = (((bi * l + li) * h + hi) * t + src) * t + dst;
                        data[idx] = w.at3(bi, dst, src);
                    }
                }
            }
        }
    }
    out
}
