//! Phase two: the anomaly detector and its adversarial fairness fine-tune.
//!
//! A fully-connected autoencoder is pretrained to reconstruct the
//! non-sensitive profile of normal samples; the squared reconstruction
//! error is the anomaly score. Fine-tuning then plays the autoencoder
//! against a discriminator that tries to tell factual bottleneck embeddings
//! from counterfactual ones:
//!
//! ```text
//! L_C = (1/N) sum_n [ log C(z_n) + log(1 - C(z_cf_n)) ]
//! ```
//!
//! The discriminator ascends `L_C`; the autoencoder descends
//! `L_AE + lambda_fair * L_C` at a deliberately small learning rate, so
//! embeddings (and with them the scores) stop carrying information about
//! the sensitive attribute while reconstruction quality survives.
//!
//! The sensitive value itself is never an input: the encoder reads the
//! profile `x` only, and the discriminator reads bottleneck embeddings.

use log::debug;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counterfactual::CounterfactualPair;
use crate::numerics::{quantile, Adam, Matrix, Mlp, NodeId, SeededRng, Stream, Tape};
use crate::numerics::MlpNodes;
use crate::scm::Dataset;

/// Errors from detector training and thresholding.
#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("loss became NaN during {stage} at epoch {epoch}, step {step}")]
    NanLoss { stage: &'static str, epoch: usize, step: usize },
    #[error("{got} counterfactual pairs for {expected} factual rows")]
    PairCountMismatch { expected: usize, got: usize },
    #[error("counterfactual pair {index} does not match its factual row")]
    PairMisalignment { index: usize },
    #[error("training data is empty")]
    EmptyTraining,
    #[error("expected {expected:?} parameters for this operation")]
    WrongStage { expected: Stage },
    #[error("quantile level {q} is outside [0, 1]")]
    InvalidQuantile { q: f64 },
}

/// Where in the training lifecycle a set of parameters came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Pretrained,
    Finetuned,
}

/// Autoencoder weights. Hidden layers are tanh, bottleneck and output are
/// linear; layer widths live in the `Mlp` dims.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub stage: Stage,
}

/// Discriminator weights, mapping a bottleneck embedding to the logit of
/// "this embedding is factual".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorParams {
    pub net: Mlp,
}

/// A fitted decision threshold over anomaly scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub tau: f64,
    pub q: f64,
    /// Which score distribution the quantile was taken over.
    pub source: String,
}

/// Architecture and pretraining hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub hidden: usize,
    pub bottleneck: usize,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { hidden: 32, bottleneck: 8, batch: 128, epochs: 50, lr: 1e-3, seed: 0 }
    }
}

/// Adversarial fine-tuning hyperparameters. The autoencoder learning rate
/// is a separate argument to [`finetune_adversarial`] because it is the
/// knob the method is sensitive to.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch: usize,
    pub disc_hidden: usize,
    pub disc_lr: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { epochs: 5, batch: 128, disc_hidden: 16, disc_lr: 1e-3, seed: 0 }
    }
}

impl DetectorParams {
    /// Bottleneck embeddings of a batch of profiles (one per row).
    pub fn embed(&self, x: &Matrix) -> Matrix {
        self.encoder.forward(x)
    }
}

impl DiscriminatorParams {
    /// Probability that each embedding row is factual, strictly in (0, 1).
    pub fn probabilities(&self, z: &Matrix) -> Vec<f64> {
        let logits = self.net.forward(z);
        (0..logits.rows()).map(|r| stable_sigmoid(logits.get(r, 0))).collect()
    }
}

fn stable_sigmoid(l: f64) -> f64 {
    if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    }
}

/// Pretrains the autoencoder on normal profiles by minibatch descent on
/// `(1/2N) sum ||x - D(E(x))||^2`.
pub fn pretrain(train: &Dataset, config: &DetectorConfig) -> Result<DetectorParams, DetectorError> {
    if train.is_empty() {
        return Err(DetectorError::EmptyTraining);
    }
    let m = train.m();
    let mut rng = SeededRng::new(config.seed, Stream::DetectorInit);
    let mut encoder = Mlp::glorot(&[m, config.hidden, config.bottleneck], &mut rng);
    let mut decoder = Mlp::glorot(&[config.bottleneck, config.hidden, m], &mut rng);
    let x = train.x_matrix();
    let mut enc_opt = Adam::new(config.lr, &encoder.param_shapes());
    let mut dec_opt = Adam::new(config.lr, &decoder.param_shapes());
    let mut shuffle = SeededRng::new(config.seed, Stream::Shuffle);
    let mut indices: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        shuffle.shuffle(&mut indices);
        let mut epoch_loss = 0.0;
        for (step, batch) in indices.chunks(config.batch).enumerate() {
            let xb = take_rows(&x, batch);
            let (tape, loss, enc_nodes, dec_nodes) =
                ae_loss_tape(&encoder, &decoder, &xb, None);
            let value = tape.scalar(loss);
            if value.is_nan() {
                return Err(DetectorError::NanLoss { stage: "pretraining", epoch, step });
            }
            epoch_loss += value;
            let grads = tape.backward(loss).expect("loss is scalar");
            encoder.apply_step(&mut enc_opt, &enc_nodes, &grads);
            decoder.apply_step(&mut dec_opt, &dec_nodes, &grads);
        }
        debug!("pretrain epoch {epoch}: mean batch loss {:.6}", epoch_loss);
    }
    Ok(DetectorParams { encoder, decoder, stage: Stage::Pretrained })
}

/// Adversarially fine-tunes a pretrained detector against a fresh
/// discriminator, alternating one discriminator ascent step on `L_C` with
/// one autoencoder descent step on `L_AE + lambda_fair * L_C` per
/// minibatch. `lr_finetune` should be small; large values trade away the
/// detection quality the pretraining bought.
pub fn finetune_adversarial(
    params: &DetectorParams,
    factual: &Dataset,
    cf_pairs: &[CounterfactualPair],
    lambda_fair: f64,
    lr_finetune: f64,
    config: &FinetuneConfig,
) -> Result<(DetectorParams, DiscriminatorParams), DetectorError> {
    if params.stage != Stage::Pretrained {
        return Err(DetectorError::WrongStage { expected: Stage::Pretrained });
    }
    if factual.is_empty() {
        return Err(DetectorError::EmptyTraining);
    }
    if cf_pairs.len() != factual.len() {
        return Err(DetectorError::PairCountMismatch {
            expected: factual.len(),
            got: cf_pairs.len(),
        });
    }
    for (index, (pair, sample)) in cf_pairs.iter().zip(factual.samples()).enumerate() {
        if pair.factual.s != sample.s || pair.factual.x != sample.x {
            return Err(DetectorError::PairMisalignment { index });
        }
    }

    let mut encoder = params.encoder.clone();
    let mut decoder = params.decoder.clone();
    let mut disc = Mlp::glorot(
        &[encoder.output_dim(), config.disc_hidden, 1],
        &mut SeededRng::new(config.seed, Stream::DiscriminatorInit),
    );
    let x_f = factual.x_matrix();
    let x_cf = Matrix::from_fn(factual.len(), factual.m(), |i, j| cf_pairs[i].counterfactual.x[j]);

    let mut enc_opt = Adam::new(lr_finetune, &encoder.param_shapes());
    let mut dec_opt = Adam::new(lr_finetune, &decoder.param_shapes());
    let mut disc_opt = Adam::new(config.disc_lr, &disc.param_shapes());
    let mut shuffle = SeededRng::new(config.seed, Stream::Shuffle);
    let mut indices: Vec<usize> = (0..factual.len()).collect();
    for epoch in 0..config.epochs {
        shuffle.shuffle(&mut indices);
        for (step, batch) in indices.chunks(config.batch).enumerate() {
            let xb_f = take_rows(&x_f, batch);
            let xb_cf = take_rows(&x_cf, batch);

            // Discriminator ascent on L_C. Embeddings enter as constants,
            // so the encoder cannot receive gradient here.
            let z_f = encoder.forward(&xb_f);
            let z_cf = encoder.forward(&xb_cf);
            let (tape, loss, disc_nodes) = disc_loss_tape(&disc, &z_f, &z_cf);
            if tape.scalar(loss).is_nan() {
                return Err(DetectorError::NanLoss { stage: "discriminator step", epoch, step });
            }
            let grads = tape.backward(loss).expect("loss is scalar");
            disc.apply_step(&mut disc_opt, &disc_nodes, &grads);

            // Autoencoder descent on L_AE + lambda * L_C against the
            // just-updated discriminator, which enters as constants.
            let adversary = (lambda_fair != 0.0).then_some((&disc, &xb_cf, lambda_fair));
            let (tape, loss, enc_nodes, dec_nodes) =
                ae_loss_tape(&encoder, &decoder, &xb_f, adversary);
            if tape.scalar(loss).is_nan() {
                return Err(DetectorError::NanLoss { stage: "autoencoder step", epoch, step });
            }
            let grads = tape.backward(loss).expect("loss is scalar");
            encoder.apply_step(&mut enc_opt, &enc_nodes, &grads);
            decoder.apply_step(&mut dec_opt, &dec_nodes, &grads);
        }
        debug!("finetune epoch {epoch} done");
    }
    Ok((
        DetectorParams { encoder, decoder, stage: Stage::Finetuned },
        DiscriminatorParams { net: disc },
    ))
}

/// Squared reconstruction error `||x - D(E(x))||^2` of one profile.
///
/// # Panics
/// Panics if `x` does not match the encoder input width.
pub fn anomaly_score(params: &DetectorParams, x: &[f64]) -> f64 {
    assert_eq!(x.len(), params.encoder.input_dim(), "profile width mismatch");
    let row = Matrix::from_vec(1, x.len(), x.to_vec());
    let recon = params.decoder.forward(&params.encoder.forward(&row));
    x.iter().enumerate().map(|(i, v)| (v - recon.get(0, i)).powi(2)).sum()
}

/// Anomaly scores of every sample, in dataset order. Each row goes through
/// the same code path as [`anomaly_score`], so batch and single-sample
/// results are identical.
pub fn anomaly_scores(params: &DetectorParams, data: &Dataset) -> Vec<f64> {
    data.samples().iter().map(|s| anomaly_score(params, &s.x)).collect()
}

/// Fits the decision threshold as the lower nearest-rank quantile of the
/// training anomaly scores at level `q`.
pub fn fit_threshold(
    params: &DetectorParams,
    train: &Dataset,
    q: f64,
) -> Result<Threshold, DetectorError> {
    if train.is_empty() {
        return Err(DetectorError::EmptyTraining);
    }
    let scores = anomaly_scores(params, train);
    let tau = quantile(&scores, q).map_err(|_| DetectorError::InvalidQuantile { q })?;
    Ok(Threshold { tau, q, source: format!("train-scores:n={}", train.len()) })
}

/// Labels a profile anomalous iff its score strictly exceeds the threshold.
pub fn predict(params: &DetectorParams, threshold: &Threshold, x: &[f64]) -> u8 {
    u8::from(anomaly_score(params, x) > threshold.tau)
}

/// Elementwise [`predict`] over a dataset.
pub fn predict_batch(params: &DetectorParams, threshold: &Threshold, data: &Dataset) -> Vec<u8> {
    data.samples().iter().map(|s| predict(params, threshold, &s.x)).collect()
}

/// Fraction of factual/counterfactual embeddings the discriminator labels
/// correctly at the 0.5 cut. Near 0.5 means the fine-tune reached its goal
/// of indistinguishable embeddings.
pub fn discriminator_accuracy(
    params: &DetectorParams,
    disc: &DiscriminatorParams,
    pairs: &[CounterfactualPair],
) -> f64 {
    assert!(!pairs.is_empty(), "no pairs to classify");
    let m = params.encoder.input_dim();
    let x_f = Matrix::from_fn(pairs.len(), m, |i, j| pairs[i].factual.x[j]);
    let x_cf = Matrix::from_fn(pairs.len(), m, |i, j| pairs[i].counterfactual.x[j]);
    let p_f = disc.probabilities(&params.embed(&x_f));
    let p_cf = disc.probabilities(&params.embed(&x_cf));
    let correct = p_f.iter().filter(|&&p| p > 0.5).count()
        + p_cf.iter().filter(|&&p| p <= 0.5).count();
    correct as f64 / (2 * pairs.len()) as f64
}

/// Rows of `x` selected by index, in the given order.
fn take_rows(x: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(idx.len(), x.cols(), |r, c| x.get(idx[r], c))
}

/// Builds the discriminator objective on fixed embeddings: the negative
/// mean log-likelihood of calling factual rows 1 and counterfactual rows 0.
/// Minimizing it ascends L_C over the discriminator weights.
fn disc_loss_tape(disc: &Mlp, z_f: &Matrix, z_cf: &Matrix) -> (Tape, NodeId, MlpNodes) {
    let mut tape = Tape::new();
    let zf = tape.constant(z_f.clone());
    let zcf = tape.constant(z_cf.clone());
    let nodes = disc.insert_params(&mut tape);
    let logits_f = disc.forward_on_tape(&mut tape, &nodes, zf);
    let logits_cf = disc.forward_on_tape(&mut tape, &nodes, zcf);
    let l_c = log_likelihood(&mut tape, logits_f, logits_cf, z_f.rows());
    let loss = tape.scale(l_c, -1.0);
    (tape, loss, nodes)
}

/// Builds the autoencoder objective for one batch: factual reconstruction
/// error, plus `lambda * L_C` when an adversary `(disc, x_cf, lambda)` is
/// present. The discriminator enters as constants so it receives no
/// gradient; with no adversary the tape is plain reconstruction, which is
/// both the pretraining objective and the `lambda_fair = 0` fine-tune.
fn ae_loss_tape(
    encoder: &Mlp,
    decoder: &Mlp,
    x_f: &Matrix,
    adversary: Option<(&Mlp, &Matrix, f64)>,
) -> (Tape, NodeId, MlpNodes, MlpNodes) {
    let mut tape = Tape::new();
    let xf = tape.constant(x_f.clone());
    let enc_nodes = encoder.insert_params(&mut tape);
    let dec_nodes = decoder.insert_params(&mut tape);
    let z_f = encoder.forward_on_tape(&mut tape, &enc_nodes, xf);
    let recon = decoder.forward_on_tape(&mut tape, &dec_nodes, z_f);
    let mut loss = tape.scaled_squared_error(recon, xf, 0.5 / x_f.rows() as f64);
    if let Some((disc, x_cf, lambda)) = adversary {
        let xcf = tape.constant(x_cf.clone());
        let z_cf = encoder.forward_on_tape(&mut tape, &enc_nodes, xcf);
        let disc_nodes = disc.insert_constants(&mut tape);
        let logits_f = disc.forward_on_tape(&mut tape, &disc_nodes, z_f);
        let logits_cf = disc.forward_on_tape(&mut tape, &disc_nodes, z_cf);
        let l_c = log_likelihood(&mut tape, logits_f, logits_cf, x_f.rows());
        let weighted = tape.scale(l_c, lambda);
        loss = tape.add(loss, weighted);
    }
    (tape, loss, enc_nodes, dec_nodes)
}

/// `(1/n) [ sum log sigmoid(logits_f) + sum log sigmoid(-logits_cf) ]`,
/// the batch estimate of L_C.
fn log_likelihood(tape: &mut Tape, logits_f: NodeId, logits_cf: NodeId, n: usize) -> NodeId {
    let ll_f = tape.log_sigmoid(logits_f);
    let neg_cf = tape.scale(logits_cf, -1.0);
    let ll_cf = tape.log_sigmoid(neg_cf);
    let sum_f = tape.sum(ll_f);
    let sum_cf = tape.sum(ll_cf);
    let total = tape.add(sum_f, sum_cf);
    tape.scale(total, 1.0 / n as f64)
}
