//! Mini-batch training with Adam on class-weighted BCE.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Model, ModelConfig};
use crate::data::CohortDataset;
use crate::error::{Error, Result};
use crate::params::{Adam, TapedParams};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// A trained model plus its per-epoch mean loss history.
pub struct TrainedModel {
    pub model: Model,
    pub history: Vec<f64>,
}

/// Trains a fresh model on `dataset`. All randomness (init, shuffling)
/// flows from `config.seed`, so identical calls produce identical
/// models and histories. With `epochs == 0` the initialized model is
/// returned untouched.
pub fn train(dataset: &CohortDataset, config: &ModelConfig) -> Result<TrainedModel> {
    if dataset.n_patients() == 0 {
        return Err(Error::InvalidArgument("empty training dataset".into()));
    }
    let n_pos = dataset.n_positive();
    let n_neg = dataset.n_patients() - n_pos;
    if config.epochs > 0 && (n_pos == 0 || n_neg == 0) {
        return Err(Error::InvalidArgument(
            "training split must contain both outcome classes".into(),
        ));
    }
    let mut model = Model::new(config.clone())?;
    let pos_weight = config
        .pos_weight
        .unwrap_or_else(|| n_neg as f64 / n_pos.max(1) as f64);

    let mut opt = Adam::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..dataset.n_patients()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let sub = dataset.subset(batch);
            let labels = Tensor::vector(&sub.y);

            let mut tape = Tape::new();
            let mut tp = TapedParams::new();
            let x = tape.leaf(sub.x.clone());
            let fv = model.forward_on_tape(&mut tape, &mut tp, x)?;
            let loss = tape.weighted_bce(fv.logits, &labels, pos_weight)?;
            let loss_val = tape.value(loss).item();
            if !loss_val.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    message: format!("loss = {loss_val}"),
                });
            }
            model.params.zero_grad();
            tp.backward(&tape, loss, &mut model.params)?;
            opt.step(&mut model.params).map_err(|e| match e {
                Error::NonFinite(what) => Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    message: what,
                },
                other => other,
            })?;
            epoch_loss += loss_val;
            n_batches += 1;
        }
        history.push(epoch_loss / n_batches as f64);
    }

    Ok(TrainedModel { model, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;

    /// F=1, positive iff the single feature is > 0.
    fn separable_toy(n: usize) -> CohortDataset {
        let t = 2;
        let mut data = Vec::with_capacity(n * t);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let v = if i % 2 == 0 { 1.0 + (i % 5) as f64 * 0.1 } else { -1.0 - (i % 5) as f64 * 0.1 };
            data.extend([v, v]);
            y.push(if v > 0.0 { 1.0 } else { 0.0 });
        }
        CohortDataset {
            x: Tensor::new(vec![n, t, 1], data).unwrap(),
            y,
            feature_names: vec!["f".into()],
            time_labels: vec!["t0".into(), "t1".into()],
            patient_ids: (0..n).map(|i| format!("p{i}")).collect(),
        }
    }

    fn toy_config(kind: ModelKind) -> ModelConfig {
        let mut c = ModelConfig::new(kind, 1, 2);
        c.embed_dim = 8;
        c.lstm_hidden = 8;
        c.n_layers = 1;
        c.n_heads = 2;
        c.epochs = 20;
        c.batch_size = 16;
        c.learning_rate = 1e-2;
        c.seed = 1;
        c
    }

    #[test]
    fn separable_toy_fits_perfectly() {
        let ds = separable_toy(32);
        let trained = train(&ds, &toy_config(ModelKind::Tfcam)).unwrap();
        // loss strictly decreases over the first 5 epochs
        for w in trained.history[..5].windows(2) {
            assert!(w[1] < w[0], "history {:?}", &trained.history[..5]);
        }
        let probs = trained.model.predict(&ds.x).unwrap();
        let correct = probs
            .data()
            .iter()
            .zip(&ds.y)
            .filter(|(&p, &y)| (p >= 0.5) == (y == 1.0))
            .count();
        assert_eq!(correct, ds.n_patients());
    }

    #[test]
    fn zero_epochs_returns_initialized_model() {
        let ds = separable_toy(8);
        let mut cfg = toy_config(ModelKind::Lstm);
        cfg.epochs = 0;
        let trained = train(&ds, &cfg).unwrap();
        assert!(trained.history.is_empty());
        let fresh = Model::new(cfg).unwrap();
        for (a, b) in trained.model.params.iter().zip(fresh.params.iter()) {
            assert_eq!(a.value.data(), b.value.data());
        }
    }

    #[test]
    fn same_seed_gives_identical_history() {
        let ds = separable_toy(16);
        let mut cfg = toy_config(ModelKind::Retain);
        cfg.epochs = 3;
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        for (pa, pb) in a.model.params.iter().zip(b.model.params.iter()) {
            assert_eq!(pa.value.data(), pb.value.data());
        }
    }

    #[test]
    fn single_class_training_is_rejected() {
        let mut ds = separable_toy(8);
        ds.y.iter_mut().for_each(|y| *y = 0.0);
        assert!(train(&ds, &toy_config(ModelKind::Lstm)).is_err());
    }
}
