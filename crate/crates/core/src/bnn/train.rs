//! Straight-through-estimator training of binary MLPs.
//!
//! Forward pass during training: binary inputs, weights binarized by sign,
//! per-neuron batch norm on the integer XNOR sums of every hidden layer, and
//! a sign activation whose gradient is the hard-tanh derivative (passes where
//! `|z| <= 1`). The output layer has no batch norm; its sums are scaled by a
//! learnable positive `alpha` into softmax logits.
//!
//! Hidden batch-norm offsets are kept inside the constant cap by a penalty on
//! `|beta * s / gamma - mu|`, so folding rarely needs to clamp. After the main
//! run, population statistics are measured on the training set, batch norm is
//! folded into integer constants, and the output layer is fine-tuned for a
//! few epochs on the exact binary hidden features the hardware will see.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batchnorm::{fold_batch_norm, BatchNormParams, DEFAULT_BN_CAP};
use super::binary::{BinaryLayer, BinaryModel, BinaryVector};
use crate::bits::BitRow;
use crate::data_io::BinaryDataset;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Training-time activation between hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Activation {
    /// Sign forward, hard-tanh derivative backward.
    #[default]
    HardTanh,
}

/// How weights and activations are binarized in the training forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Binarization {
    #[default]
    Sign,
    /// Weights used as-is and activations clipped to `[-1, 1]`; makes the
    /// loss differentiable for finite-difference checks.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    Adam,
    SgdMomentum { momentum: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub activation: Activation,
    pub bn_cap: i32,
    pub optimizer: Optimizer,
    /// Cosine decay of the learning rate over the epochs.
    pub cosine_schedule: bool,
    pub bn_epsilon: f64,
    /// Offsets beyond this magnitude are penalized.
    pub cap_margin: f64,
    /// Weight of the squared offset-overflow penalty; 0 disables it.
    pub cap_penalty: f64,
    /// Output-layer epochs on the folded hidden features.
    pub finetune_epochs: usize,
    pub finetune_lr_scale: f64,
    /// Latent weights start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    pub binarization: Binarization,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 100,
            learning_rate: 0.01,
            seed: 1,
            activation: Activation::HardTanh,
            bn_cap: DEFAULT_BN_CAP,
            optimizer: Optimizer::Adam,
            cosine_schedule: true,
            bn_epsilon: 1e-5,
            cap_margin: 56.0,
            cap_penalty: 0.01,
            finetune_epochs: 3,
            finetune_lr_scale: 0.5,
            init_scale: 0.1,
            binarization: Binarization::Sign,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer<T> {
    /// Latent weights, `out_dim x in_dim`, kept in `[-1, 1]`.
    pub w: Array2<T>,
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    /// Training-set statistics measured when folding.
    pub pop_mean: Array1<T>,
    pub pop_var: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputLayer<T> {
    pub w: Array2<T>,
    pub alpha: T,
}

/// Real-valued parameters behind a binary model.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowModel<T> {
    pub hidden: Vec<HiddenLayer<T>>,
    pub output: OutputLayer<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenGrad<T> {
    pub w: Array2<T>,
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub hidden: Vec<HiddenGrad<T>>,
    pub output_w: Array2<T>,
    pub alpha: T,
}

/// Loss-shaping knobs for one forward/backward call.
#[derive(Debug, Clone, Copy)]
struct LossSpec<T> {
    epsilon: T,
    cap_margin: T,
    cap_penalty: T,
    mode: Binarization,
}

struct HiddenCache<T> {
    input: Array2<T>,
    wb: Array2<T>,
    y: Array2<T>,
    mu: Array1<T>,
    s: Array1<T>,
    xhat: Array2<T>,
    z: Array2<T>,
}

fn sign<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one()
    } else {
        -T::one()
    }
}

fn binarize_weights<T: Real>(w: &Array2<T>, mode: Binarization) -> Array2<T> {
    match mode {
        Binarization::Sign => w.mapv(sign),
        Binarization::Identity => w.clone(),
    }
}

fn activate<T: Real>(z: T, mode: Binarization) -> T {
    match mode {
        Binarization::Sign => sign(z),
        Binarization::Identity => z.max(-T::one()).min(T::one()),
    }
}

impl<T: Real> ShadowModel<T> {
    /// Uniform latent weights, `gamma = 1`, `beta = 0`, `alpha = 0.1`.
    pub fn init(arch: &[usize], init_scale: f64, rng: &mut impl Rng) -> Result<Self> {
        if arch.len() < 2 || arch.contains(&0) {
            return Err(Error::Input(format!("invalid architecture {arch:?}")));
        }
        let scale = init_scale.abs();
        let mut uniform = |r: usize, c: usize| {
            Array2::from_shape_simple_fn((r, c), || T::lit(rng.random_range(-scale..=scale)))
        };
        let n = arch.len();
        let hidden = arch[..n - 1]
            .windows(2)
            .map(|w| HiddenLayer {
                w: uniform(w[1], w[0]),
                gamma: Array1::ones(w[1]),
                beta: Array1::zeros(w[1]),
                pop_mean: Array1::zeros(w[1]),
                pop_var: Array1::ones(w[1]),
            })
            .collect();
        let output = OutputLayer {
            w: uniform(arch[n - 1], arch[n - 2]),
            alpha: T::lit(0.1),
        };
        Ok(Self { hidden, output })
    }

    pub fn arch(&self) -> Vec<usize> {
        let first = self
            .hidden
            .first()
            .map_or(self.output.w.ncols(), |h| h.w.ncols());
        std::iter::once(first)
            .chain(self.hidden.iter().map(|h| h.w.nrows()))
            .chain(std::iter::once(self.output.w.nrows()))
            .collect()
    }

    fn loss_and_grad_spec(
        &self,
        x: &Array2<T>,
        labels: &[u32],
        spec: &LossSpec<T>,
    ) -> (T, Gradients<T>) {
        let b = x.nrows();
        let bt = T::from_count(b);
        let mut caches = Vec::with_capacity(self.hidden.len());
        let mut a = x.clone();
        for layer in &self.hidden {
            let wb = binarize_weights(&layer.w, spec.mode);
            let y = a.dot(&wb.t());
            let mu = y.mean_axis(Axis(0)).expect("non-empty batch");
            let centered = &y - &mu;
            let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
            let s = var.mapv(|v| (v + spec.epsilon).sqrt());
            let xhat = &centered / &s;
            let z = &xhat * &layer.gamma + &layer.beta;
            let next = z.mapv(|v| activate(v, spec.mode));
            caches.push(HiddenCache {
                input: std::mem::replace(&mut a, next),
                wb,
                y,
                mu,
                s,
                xhat,
                z,
            });
        }

        let wb_out = binarize_weights(&self.output.w, spec.mode);
        let q = a.dot(&wb_out.t());
        let alpha = self.output.alpha;
        let mut d_logits = q.mapv(|v| v * alpha);
        let mut loss = T::zero();
        for (mut row, &label) in d_logits.rows_mut().into_iter().zip(labels) {
            let m = row.fold(T::neg_infinity(), |acc, &v| acc.max(v));
            row.mapv_inplace(|v| (v - m).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
            loss -= row[label as usize].max(T::min_positive_value()).ln();
            row[label as usize] -= T::one();
        }
        loss /= bt;
        d_logits.mapv_inplace(|v| v / bt);

        let d_alpha = (&d_logits * &q).sum();
        let d_wout = d_logits.t().dot(&a).mapv(|v| v * alpha);
        let mut da = d_logits.dot(&wb_out).mapv(|v| v * alpha);

        let mut grads_rev = Vec::with_capacity(self.hidden.len());
        for (idx, (layer, c)) in self.hidden.iter().zip(&caches).enumerate().rev() {
            let mut dz = da;
            ndarray::Zip::from(&mut dz)
                .and(&c.z)
                .for_each(|g, &z| {
                    if z.abs() > T::one() {
                        *g = T::zero();
                    }
                });
            let mut d_gamma = (&dz * &c.xhat).sum_axis(Axis(0));
            let mut d_beta = dz.sum_axis(Axis(0));
            let dxhat = &dz * &layer.gamma;
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &c.xhat).sum_axis(Axis(0));
            let mut dy = (dxhat.mapv(|v| v * bt) - &sum_dxhat - &c.xhat * &sum_dxhat_xhat)
                / &c.s.mapv(|s| s * bt);

            if spec.cap_penalty > T::zero() {
                let h = T::from_count(layer.gamma.len());
                for j in 0..layer.gamma.len() {
                    let (g, be, s, mu) = (layer.gamma[j], layer.beta[j], c.s[j], c.mu[j]);
                    let t = be * s / g - mu;
                    let over = t.abs() - spec.cap_margin;
                    if over <= T::zero() || !t.is_finite() {
                        continue;
                    }
                    loss += spec.cap_penalty * over * over / h;
                    let gt = spec.cap_penalty * T::lit(2.0) * over * t.signum() / h;
                    d_beta[j] += gt * s / g;
                    d_gamma[j] -= gt * be * s / (g * g);
                    let ratio = be / g;
                    for bi in 0..b {
                        dy[[bi, j]] += -gt / bt + gt * ratio * (c.y[[bi, j]] - mu) / (s * bt);
                    }
                }
            }

            let d_w = dy.t().dot(&c.input);
            da = if idx > 0 { dy.dot(&c.wb) } else { Array2::zeros((0, 0)) };
            grads_rev.push(HiddenGrad {
                w: d_w,
                gamma: d_gamma,
                beta: d_beta,
            });
        }
        grads_rev.reverse();
        (
            loss,
            Gradients {
                hidden: grads_rev,
                output_w: d_wout,
                alpha: d_alpha,
            },
        )
    }

    /// Mean batch loss and its gradient with respect to every trainable
    /// parameter, using batch statistics for normalization.
    pub fn loss_and_grad(
        &self,
        x: &Array2<T>,
        labels: &[u32],
        cfg: &TrainConfig,
    ) -> (T, Gradients<T>) {
        self.loss_and_grad_spec(x, labels, &LossSpec::from(cfg))
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for h in &mut self.hidden {
            out.push(h.w.as_slice_mut().expect("standard layout"));
            out.push(h.gamma.as_slice_mut().expect("standard layout"));
            out.push(h.beta.as_slice_mut().expect("standard layout"));
        }
        out.push(self.output.w.as_slice_mut().expect("standard layout"));
        out.push(std::slice::from_mut(&mut self.output.alpha));
        out
    }

    fn clip(&mut self) {
        let one = T::one();
        for h in &mut self.hidden {
            h.w.mapv_inplace(|v| v.max(-one).min(one));
        }
        self.output.w.mapv_inplace(|v| v.max(-one).min(one));
        self.output.alpha = self.output.alpha.max(T::lit(1e-3));
    }
}

impl<T: Real> From<&TrainConfig> for LossSpec<T> {
    fn from(cfg: &TrainConfig) -> Self {
        Self {
            epsilon: T::lit(cfg.bn_epsilon),
            cap_margin: T::lit(cfg.cap_margin),
            cap_penalty: T::lit(cfg.cap_penalty),
            mode: cfg.binarization,
        }
    }
}

impl<T: Real> Gradients<T> {
    fn slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for h in &self.hidden {
            out.push(h.w.as_slice().expect("standard layout"));
            out.push(h.gamma.as_slice().expect("standard layout"));
            out.push(h.beta.as_slice().expect("standard layout"));
        }
        out.push(self.output_w.as_slice().expect("standard layout"));
        out.push(std::slice::from_ref(&self.alpha));
        out
    }
}

struct OptimizerState<T> {
    kind: Optimizer,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    fn new(kind: Optimizer) -> Self {
        Self {
            kind,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    fn apply(&mut self, params: Vec<&mut [T]>, grads: Vec<&[T]>, lr: T) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        match self.kind {
            Optimizer::Adam => {
                let (b1, b2, eps) = (T::lit(0.9), T::lit(0.999), T::lit(1e-8));
                let c1 = T::one() - b1.powi(self.step);
                let c2 = T::one() - b2.powi(self.step);
                for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    for i in 0..p.len() {
                        let m = &mut self.m[k][i];
                        let v = &mut self.v[k][i];
                        *m = b1 * *m + (T::one() - b1) * g[i];
                        *v = b2 * *v + (T::one() - b2) * g[i] * g[i];
                        p[i] -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
            Optimizer::SgdMomentum { momentum } => {
                let mu = T::lit(momentum);
                for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    for i in 0..p.len() {
                        let m = &mut self.m[k][i];
                        *m = mu * *m + g[i];
                        p[i] -= lr * *m;
                    }
                }
            }
        }
    }
}

/// Packs a batch of binary vectors into a `batch x dim` ±1 matrix.
fn gather<T: Real>(inputs: &[BinaryVector], idx: &[usize]) -> Array2<T> {
    let dim = inputs[idx[0]].len();
    let mut x = Array2::from_elem((idx.len(), dim), -T::one());
    for (mut row, &i) in x.rows_mut().into_iter().zip(idx) {
        for (k, cell) in row.iter_mut().enumerate() {
            if inputs[i].bits().get(k) {
                *cell = T::one();
            }
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub finetune_loss: Vec<f64>,
    /// Folded constants that hit the cap, per hidden layer.
    pub clamped: Vec<usize>,
    /// Rows negated because `gamma < 0`, per hidden layer.
    pub negated: Vec<usize>,
    /// Smallest and largest folded constant, per hidden layer.
    pub bn_range: Vec<(i32, i32)>,
    /// Software (argmax of output sums) accuracy on the training set.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel<T> {
    pub shadow: ShadowModel<T>,
    pub model: BinaryModel,
    pub report: TrainReport,
}

/// Stateful trainer; [`train`] runs the whole recipe.
pub struct Trainer<T> {
    cfg: TrainConfig,
    shadow: ShadowModel<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> Trainer<T> {
    pub fn new(arch: &[usize], cfg: TrainConfig) -> Result<Self> {
        if cfg.batch_size < 2 {
            return Err(Error::Input("batch normalization needs batches of at least 2".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let shadow = ShadowModel::init(arch, cfg.init_scale, &mut rng)?;
        Ok(Self { cfg, shadow, rng })
    }

    pub fn shadow(&self) -> &ShadowModel<T> {
        &self.shadow
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn check_data(&self, data: &BinaryDataset) -> Result<()> {
        let arch = self.shadow.arch();
        if data.is_empty() {
            return Err(Error::Input("training set is empty".into()));
        }
        if data.dim() != arch[0] {
            return Err(Error::shape("training input width", arch[0], data.dim()));
        }
        if data.classes != *arch.last().unwrap() {
            return Err(Error::shape("class count", *arch.last().unwrap(), data.classes));
        }
        Ok(())
    }

    fn batches(&mut self, n: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        order
            .chunks(self.cfg.batch_size)
            .filter(|c| c.len() >= 2)
            .map(<[usize]>::to_vec)
            .collect()
    }

    fn lr_at(&self, epoch: usize, epochs: usize) -> T {
        let base = self.cfg.learning_rate;
        let lr = if self.cfg.cosine_schedule && epochs > 0 {
            base * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos())
        } else {
            base
        };
        T::lit(lr)
    }

    /// Runs the main training epochs; returns mean loss per epoch.
    pub fn fit(&mut self, data: &BinaryDataset) -> Result<Vec<f64>> {
        self.check_data(data)?;
        let spec = LossSpec::from(&self.cfg);
        let mut opt = OptimizerState::new(self.cfg.optimizer);
        let mut losses = Vec::with_capacity(self.cfg.epochs);
        for epoch in 0..self.cfg.epochs {
            let lr = self.lr_at(epoch, self.cfg.epochs);
            let mut total = 0.0;
            let batches = self.batches(data.len());
            for idx in &batches {
                let x = gather::<T>(&data.inputs, idx);
                let labels: Vec<u32> = idx.iter().map(|&i| data.labels[i]).collect();
                let (loss, grads) = self.shadow.loss_and_grad_spec(&x, &labels, &spec);
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!("loss diverged in epoch {epoch}")));
                }
                total += loss.as_f64();
                opt.apply(self.shadow.params_mut(), grads.slices(), lr);
                self.shadow.clip();
            }
            let mean = total / batches.len().max(1) as f64;
            log::info!("epoch {}/{}: loss {mean:.4}", epoch + 1, self.cfg.epochs);
            losses.push(mean);
        }
        Ok(losses)
    }

    /// Measures population statistics, folds batch norm and builds the binary
    /// hidden layers. Returns the layers and the hidden features of `data`.
    fn fold_hidden(
        &mut self,
        data: &BinaryDataset,
        report: &mut TrainReport,
    ) -> Result<(Vec<BinaryLayer>, Vec<BinaryVector>)> {
        let mut feats = data.inputs.clone();
        let mut layers = Vec::new();
        let eps = T::lit(self.cfg.bn_epsilon);
        for h in &mut self.shadow.hidden {
            let in_dim = h.w.ncols();
            let rows: Vec<BitRow> = h
                .w
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|&v| v >= T::zero()).collect())
                .collect();
            let probe = BinaryLayer::new(in_dim, rows.clone(), vec![0; rows.len()])?;
            let n = feats.len() as f64;
            let mut sum = vec![0f64; rows.len()];
            let mut sq = vec![0f64; rows.len()];
            for x in &feats {
                for (j, y) in probe.pre_activation(x)?.into_iter().enumerate() {
                    sum[j] += y as f64;
                    sq[j] += (y as f64) * (y as f64);
                }
            }
            let mut bn = Vec::with_capacity(rows.len());
            let mut weights = Vec::with_capacity(rows.len());
            let (mut clamped, mut negated) = (0, 0);
            for (j, row) in rows.into_iter().enumerate() {
                let mean = sum[j] / n;
                let var = (sq[j] / n - mean * mean).max(0.0);
                h.pop_mean[j] = T::lit(mean);
                h.pop_var[j] = T::lit(var);
                let p = BatchNormParams::new(
                    h.gamma[j],
                    h.beta[j],
                    T::lit(mean),
                    T::lit(var),
                    eps,
                    T::zero(),
                )?;
                let f = fold_batch_norm(&p, self.cfg.bn_cap)?;
                clamped += f.clamped as usize;
                negated += f.negate_row as usize;
                bn.push(f.constant);
                weights.push(if f.negate_row { row.not() } else { row });
            }
            report.clamped.push(clamped);
            report.negated.push(negated);
            report.bn_range.push((
                bn.iter().copied().min().unwrap_or(0),
                bn.iter().copied().max().unwrap_or(0),
            ));
            let layer = BinaryLayer::new(in_dim, weights, bn)?;
            feats = feats.iter().map(|x| layer.forward(x)).collect::<Result<_>>()?;
            layers.push(layer);
        }
        Ok((layers, feats))
    }

    /// Retrains the output layer on fixed binary hidden features.
    fn finetune_output(&mut self, feats: &[BinaryVector], labels: &[u32]) -> Vec<f64> {
        let spec = LossSpec::from(&self.cfg);
        let lr = T::lit(self.cfg.learning_rate * self.cfg.finetune_lr_scale);
        let mut head = ShadowModel {
            hidden: Vec::new(),
            output: self.shadow.output.clone(),
        };
        let mut opt = OptimizerState::new(self.cfg.optimizer);
        let mut losses = Vec::new();
        for epoch in 0..self.cfg.finetune_epochs {
            let mut total = 0.0;
            let batches = self.batches(feats.len());
            for idx in &batches {
                let x = gather::<T>(feats, idx);
                let y: Vec<u32> = idx.iter().map(|&i| labels[i]).collect();
                let (loss, g) = head.loss_and_grad_spec(&x, &y, &spec);
                total += loss.as_f64();
                opt.apply(head.params_mut(), g.slices(), lr);
                head.clip();
            }
            let mean = total / batches.len().max(1) as f64;
            log::info!("output fine-tune {}/{}: loss {mean:.4}", epoch + 1, self.cfg.finetune_epochs);
            losses.push(mean);
        }
        self.shadow.output = head.output;
        losses
    }

    /// Folds, fine-tunes the output layer and extracts the binary model.
    pub fn deploy(&mut self, data: &BinaryDataset) -> Result<(BinaryModel, TrainReport)> {
        self.check_data(data)?;
        let mut report = TrainReport {
            epoch_loss: Vec::new(),
            finetune_loss: Vec::new(),
            clamped: Vec::new(),
            negated: Vec::new(),
            bn_range: Vec::new(),
            train_accuracy: 0.0,
        };
        let (mut layers, feats) = self.fold_hidden(data, &mut report)?;
        report.finetune_loss = self.finetune_output(&feats, &data.labels);
        let out = &self.shadow.output.w;
        let rows = out
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&v| v >= T::zero()).collect())
            .collect();
        layers.push(BinaryLayer::new(out.ncols(), rows, vec![0; out.nrows()])?);
        let model = BinaryModel::new(layers)?;
        let correct = data
            .inputs
            .iter()
            .zip(&data.labels)
            .filter(|(x, &l)| model.predict(x).ok() == Some(l as usize))
            .count();
        report.train_accuracy = correct as f64 / data.len() as f64;
        Ok((model, report))
    }
}

/// Full recipe: train, fold batch norm, fine-tune the output layer.
pub fn train<T: Real>(
    data: &BinaryDataset,
    arch: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainedModel<T>> {
    let mut trainer = Trainer::<T>::new(arch, cfg.clone())?;
    let losses = trainer.fit(data)?;
    let (model, mut report) = trainer.deploy(data)?;
    report.epoch_loss = losses;
    Ok(TrainedModel {
        shadow: trainer.shadow,
        model,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(n: usize, dim: usize, seed: u64) -> BinaryDataset {
        // class decided by the majority of the first 8 bits, which are then
        // forced to agree with the class
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let class = (i % 2) as u32;
            let bits: BitRow = (0..dim)
                .map(|k| if k < 8 { class == 1 } else { rng.random::<bool>() })
                .collect();
            inputs.push(BinaryVector::from_bits(bits));
            labels.push(class);
        }
        BinaryDataset::new("toy", inputs, labels, 2).unwrap()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / na.max(nb).max(1e-12)
    }

    /// Small differentiable setup with the offset penalty switched on.
    fn grad_check_setup() -> (TrainConfig, ShadowModel<f64>, Array2<f64>, [u32; 6]) {
        let cfg = TrainConfig {
            binarization: Binarization::Identity,
            cap_margin: 0.3,
            cap_penalty: 0.5,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = ShadowModel::<f64>::init(&[7, 5, 4, 3], 0.5, &mut rng).unwrap();
        for h in &mut model.hidden {
            h.gamma.mapv_inplace(|_| rng.random_range(0.3..0.6));
            h.beta.mapv_inplace(|_| rng.random_range(-0.6..0.6));
        }
        model.output.alpha = 0.7;
        let x = Array2::from_shape_simple_fn((6, 7), || rng.random_range(-1.0..1.0));
        (cfg, model, x, [0, 1, 2, 0, 1, 2])
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (cfg, model, x, labels) = grad_check_setup();
        let (_, grads) = model.loss_and_grad(&x, &labels, &cfg);
        let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();

        let h = 1e-6;
        let n_groups = analytic.len();
        for g in 0..n_groups {
            let len = analytic[g].len();
            let mut numeric = vec![0.0; len];
            for i in 0..len {
                let mut plus = model.clone();
                plus.params_mut()[g][i] += h;
                let mut minus = model.clone();
                minus.params_mut()[g][i] -= h;
                let lp = plus.loss_and_grad(&x, &labels, &cfg).0;
                let lm = minus.loss_and_grad(&x, &labels, &cfg).0;
                numeric[i] = (lp - lm) / (2.0 * h);
            }
            let e = rel_err(&analytic[g], &numeric);
            assert!(e <= 1e-4, "group {g}: relative error {e}");
        }
    }

    #[test]
    fn penalty_is_active_in_gradient_check_setup() {
        let (cfg, model, x, labels) = grad_check_setup();
        let off = TrainConfig {
            cap_penalty: 0.0,
            ..cfg.clone()
        };
        let a = model.loss_and_grad(&x, &labels, &cfg).0;
        let b = model.loss_and_grad(&x, &labels, &off).0;
        assert!(a > b + 1e-3, "penalty contributes {}", a - b);
    }

    #[test]
    fn separable_toy_set_in_one_epoch() {
        let data = toy_dataset(400, 32, 5);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 20,
            finetune_epochs: 0,
            ..TrainConfig::default()
        };
        let t = train::<f32>(&data, &[32, 8, 2], &cfg).unwrap();
        assert_eq!(t.report.train_accuracy, 1.0);
        assert_eq!(t.model.arch(), vec![32, 8, 2]);
    }

    #[test]
    fn same_seed_same_bits() {
        let data = toy_dataset(200, 24, 6);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 25,
            finetune_epochs: 1,
            ..TrainConfig::default()
        };
        let a = train::<f32>(&data, &[24, 6, 2], &cfg).unwrap();
        let b = train::<f32>(&data, &[24, 6, 2], &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.shadow, b.shadow);
        let c = train::<f32>(&data, &[24, 6, 2], &TrainConfig { seed: 2, ..cfg }).unwrap();
        assert_ne!(a.shadow, c.shadow);
    }

    #[test]
    fn arch_mismatch_is_a_shape_error() {
        let data = toy_dataset(10, 16, 1);
        let cfg = TrainConfig::default();
        assert!(matches!(train::<f32>(&data, &[17, 4, 2], &cfg), Err(Error::Shape { .. })));
        assert!(matches!(train::<f32>(&data, &[16, 4, 3], &cfg), Err(Error::Shape { .. })));
        assert!(train::<f32>(&data, &[16], &cfg).is_err());
    }

    #[test]
    fn sgd_option_trains() {
        let data = toy_dataset(200, 16, 8);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 20,
            learning_rate: 0.05,
            optimizer: Optimizer::SgdMomentum { momentum: 0.9 },
            ..TrainConfig::default()
        };
        let t = train::<f64>(&data, &[16, 6, 2], &cfg).unwrap();
        assert!(t.report.train_accuracy > 0.9);
    }

    #[test]
    fn folded_model_respects_cap() {
        let data = toy_dataset(200, 16, 9);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 20,
            bn_cap: 3,
            ..TrainConfig::default()
        };
        let t = train::<f32>(&data, &[16, 6, 2], &cfg).unwrap();
        assert!(t.model.layers()[0].max_abs_bn() <= 3);
        assert!(t.model.layers()[1].bn_constants().iter().all(|&c| c == 0));
    }
}
