//! Dense feed-forward classifier trained with plain SGD: rectifier hidden
//! layers, softmax head, mean cross-entropy loss. Parameters live in one
//! flat vector so models can flow through aggregation rules unchanged.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::params::ParamVec;
use crate::rng::RngStream;

#[derive(Debug, Clone)]
pub struct MlpModel {
    pub layer_dims: Vec<usize>,
    pub params: ParamVec,
}

/// Total parameter count for a stack of dense layers: sum of `in*out + out`.
pub fn param_count(layer_dims: &[usize]) -> usize {
    layer_dims
        .windows(2)
        .map(|w| w[0] * w[1] + w[1])
        .sum()
}

fn validate_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::invalid("need at least input and output dims"));
    }
    if layer_dims.iter().any(|&d| d == 0) {
        return Err(Error::invalid("layer dims must be positive"));
    }
    Ok(())
}

impl MlpModel {
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        validate_dims(layer_dims)?;
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            params: vec![0.0; param_count(layer_dims)],
        })
    }

    /// Uniform init in `[-half_range, half_range]`, deterministic per stream.
    pub fn init_uniform(layer_dims: &[usize], half_range: f64, rng: RngStream) -> Result<Self> {
        let mut model = Self::zeros(layer_dims)?;
        let mut r = rng.rng();
        for p in model.params.iter_mut() {
            *p = r.random_range(-half_range..=half_range);
        }
        Ok(model)
    }

    /// Rebuild a model from a flat vector. `params` must have exactly the
    /// length implied by `layer_dims`; the vector is adopted unchanged, so
    /// flatten/unflatten round-trips bit-exactly.
    pub fn from_params(layer_dims: &[usize], params: ParamVec) -> Result<Self> {
        validate_dims(layer_dims)?;
        if params.len() != param_count(layer_dims) {
            return Err(Error::invalid(format!(
                "param vector length {} does not match layer dims (want {})",
                params.len(),
                param_count(layer_dims)
            )));
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            params,
        })
    }

    pub fn r(&self) -> usize {
        self.params.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn with_params(&self, params: ParamVec) -> Result<Self> {
        Self::from_params(&self.layer_dims, params)
    }

    /// `(weight_offset, bias_offset, in_dim, out_dim)` per layer.
    fn layers(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.layer_dims.len() - 1);
        let mut offset = 0;
        for w in self.layer_dims.windows(2) {
            let (inn, outn) = (w[0], w[1]);
            out.push((offset, offset + inn * outn, inn, outn));
            offset += inn * outn + outn;
        }
        out
    }

    /// Logits for a single sample; `acts[l]` receives layer `l`'s output
    /// (rectified except for the last layer).
    fn forward_sample(&self, x: &[f64], acts: &mut [Vec<f64>]) {
        let layers = self.layers();
        let last = layers.len() - 1;
        for (l, &(w_off, b_off, inn, outn)) in layers.iter().enumerate() {
            let (prev, rest) = if l == 0 {
                (x, &mut acts[..])
            } else {
                let (done, rest) = acts.split_at_mut(l);
                (done[l - 1].as_slice(), rest)
            };
            let z = &mut rest[0];
            z.resize(outn, 0.0);
            for o in 0..outn {
                let row = &self.params[w_off + o * inn..w_off + (o + 1) * inn];
                let mut acc = self.params[b_off + o];
                for (wv, av) in row.iter().zip(prev) {
                    acc += wv * av;
                }
                z[o] = if l < last { acc.max(0.0) } else { acc };
            }
        }
    }

    fn new_scratch(&self) -> Vec<Vec<f64>> {
        self.layer_dims[1..].iter().map(|&d| vec![0.0; d]).collect()
    }

    fn check_width(&self, features: &[f64]) -> Result<usize> {
        let inn = self.n_inputs();
        if features.is_empty() || features.len() % inn != 0 {
            return Err(Error::invalid(format!(
                "feature buffer of {} values is not a multiple of input width {}",
                features.len(),
                inn
            )));
        }
        Ok(features.len() / inn)
    }

    /// Class probabilities for a row-major feature batch, flattened to
    /// `n_rows * n_classes`. Each row sums to one (softmax head).
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        let n_rows = self.check_width(features)?;
        let inn = self.n_inputs();
        let k = self.n_classes();
        let mut acts = self.new_scratch();
        let mut out = Vec::with_capacity(n_rows * k);
        for row in 0..n_rows {
            self.forward_sample(&features[row * inn..(row + 1) * inn], &mut acts);
            let logits = acts.last().unwrap();
            let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut denom = 0.0;
            for &z in logits {
                denom += (z - m).exp();
            }
            for &z in logits {
                out.push((z - m).exp() / denom);
            }
        }
        Ok(out)
    }

    /// Mean cross-entropy loss and its gradient over a batch.
    pub fn loss_grad(&self, features: &[f64], labels: &[u32]) -> Result<(f64, ParamVec)> {
        let n_rows = self.check_width(features)?;
        if labels.len() != n_rows {
            return Err(Error::invalid("label count does not match batch rows"));
        }
        let mut grad = vec![0.0; self.r()];
        let mut acts = self.new_scratch();
        let mut deltas = self.new_scratch();
        let loss = self.accumulate_batch(features, labels, &mut grad, &mut acts, &mut deltas)?;
        Ok((loss, grad))
    }

    /// Backprop a batch into `grad` (overwritten). Returns the mean loss.
    fn accumulate_batch(
        &self,
        features: &[f64],
        labels: &[u32],
        grad: &mut [f64],
        acts: &mut [Vec<f64>],
        deltas: &mut [Vec<f64>],
    ) -> Result<f64> {
        let inn = self.n_inputs();
        let k = self.n_classes();
        let n_rows = labels.len();
        let layers = self.layers();
        let last = layers.len() - 1;
        let inv_n = 1.0 / n_rows as f64;
        grad.fill(0.0);
        let mut total_loss = 0.0;

        for row in 0..n_rows {
            let label = labels[row] as usize;
            if label >= k {
                return Err(Error::invalid(format!("label {label} out of range for {k} classes")));
            }
            let x = &features[row * inn..(row + 1) * inn];
            self.forward_sample(x, acts);

            // Stable softmax + cross-entropy at the head.
            {
                let logits = &acts[last];
                let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
                total_loss += (lse - logits[label]) * inv_n;
                let delta = &mut deltas[last];
                for (d, &z) in delta.iter_mut().zip(logits) {
                    *d = (z - lse).exp() * inv_n;
                }
                delta[label] -= inv_n;
            }

            for l in (0..layers.len()).rev() {
                let (w_off, b_off, lin, lout) = layers[l];
                // Split `deltas` so we can read layer l's delta while
                // writing layer l-1's.
                let (lower, upper) = deltas.split_at_mut(l);
                let delta = &upper[0];
                let prev: &[f64] = if l == 0 { x } else { &acts[l - 1] };
                let prev_delta: Option<&mut Vec<f64>> =
                    if l == 0 { None } else { Some(&mut lower[l - 1]) };

                if let Some(pd) = prev_delta {
                    pd.fill(0.0);
                    for o in 0..lout {
                        let dz = delta[o];
                        grad[b_off + o] += dz;
                        if dz != 0.0 {
                            let wrow = &self.params[w_off + o * lin..w_off + (o + 1) * lin];
                            let grow = &mut grad[w_off + o * lin..w_off + (o + 1) * lin];
                            for i in 0..lin {
                                grow[i] += dz * prev[i];
                                pd[i] += dz * wrow[i];
                            }
                        }
                    }
                    // Rectifier gate: activation zero means no gradient flows.
                    for (d, &a) in pd.iter_mut().zip(acts[l - 1].iter()) {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    }
                } else {
                    for o in 0..lout {
                        let dz = delta[o];
                        grad[b_off + o] += dz;
                        if dz != 0.0 {
                            let grow = &mut grad[w_off + o * lin..w_off + (o + 1) * lin];
                            for i in 0..lin {
                                grow[i] += dz * prev[i];
                            }
                        }
                    }
                }
            }
        }
        Ok(total_loss)
    }

    /// Mini-batch SGD over `indices` of `data`. Pure function of its inputs
    /// and the stream: two calls with the same arguments produce
    /// bit-identical parameters.
    pub fn local_train(
        &self,
        data: &Dataset,
        indices: &[usize],
        epochs: usize,
        batch_size: usize,
        lr: f64,
        rng: RngStream,
    ) -> Result<MlpModel> {
        if indices.is_empty() {
            return Err(Error::invalid("training shard is empty"));
        }
        if epochs < 1 || batch_size < 1 {
            return Err(Error::invalid("epochs and batch_size must be at least 1"));
        }
        if lr < 0.0 {
            return Err(Error::invalid("learning rate must be non-negative"));
        }
        if data.n_features != self.n_inputs() {
            return Err(Error::invalid("dataset width does not match model input"));
        }
        let mut model = self.clone();
        let mut r = rng.rng();
        let mut order: Vec<usize> = indices.to_vec();
        let mut grad = vec![0.0; self.r()];
        let mut acts = self.new_scratch();
        let mut deltas = self.new_scratch();
        let mut batch_x = Vec::with_capacity(batch_size * data.n_features);
        let mut batch_y = Vec::with_capacity(batch_size);
        for _ in 0..epochs {
            order.shuffle(&mut r);
            for chunk in order.chunks(batch_size) {
                batch_x.clear();
                batch_y.clear();
                for &i in chunk {
                    batch_x.extend_from_slice(data.row(i));
                    batch_y.push(data.labels[i]);
                }
                model.accumulate_batch(&batch_x, &batch_y, &mut grad, &mut acts, &mut deltas)?;
                if lr != 0.0 {
                    for (p, g) in model.params.iter_mut().zip(&grad) {
                        *p -= lr * g;
                    }
                }
            }
        }
        Ok(model)
    }

    /// Fraction of test rows whose arg-max prediction matches the label.
    /// Ties resolve to the lowest class id.
    pub fn evaluate_accuracy(&self, test: &Dataset) -> Result<f64> {
        if test.n_samples() == 0 {
            return Err(Error::invalid("test set is empty"));
        }
        if test.n_features != self.n_inputs() {
            return Err(Error::invalid("dataset width does not match model input"));
        }
        let mut acts = self.new_scratch();
        let mut correct = 0usize;
        for i in 0..test.n_samples() {
            self.forward_sample(test.row(i), &mut acts);
            let logits = acts.last().unwrap();
            let mut best = 0usize;
            for (c, &z) in logits.iter().enumerate() {
                if z > logits[best] {
                    best = c;
                }
            }
            if best == test.labels[i] as usize {
                correct += 1;
            }
        }
        Ok(correct as f64 / test.n_samples() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;

    #[test]
    fn zero_model_is_uniform() {
        let m = MlpModel::zeros(&[3, 4]).unwrap();
        let probs = m.forward(&[0.3, -0.7, 2.0]).unwrap();
        for &p in &probs {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_weights_softmax() {
        // Single 2->2 layer, W = I, b = 0, x = [1, 0]: logits [1, 0].
        let m = MlpModel::from_params(&[2, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let probs = m.forward(&[1.0, 0.0]).unwrap();
        let e = std::f64::consts::E;
        assert!((probs[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((probs[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn rows_sum_to_one() {
        let m = MlpModel::init_uniform(&[5, 7, 3], 0.5, RngStream::new(2, 2)).unwrap();
        let data = gen_synthetic(3, 5, 11, 1.0, RngStream::new(2, 3)).unwrap();
        let probs = m.forward(&data.features).unwrap();
        for row in probs.chunks(3) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn width_mismatch_rejected() {
        let m = MlpModel::zeros(&[3, 2]).unwrap();
        assert!(m.forward(&[1.0, 2.0]).is_err());
        assert!(m.loss_grad(&[1.0, 2.0, 3.0], &[0, 1]).is_err());
    }

    #[test]
    fn empty_batch_rejected() {
        let m = MlpModel::zeros(&[3, 2]).unwrap();
        assert!(m.loss_grad(&[], &[]).is_err());
    }

    #[test]
    fn confident_model_has_tiny_loss_and_grad() {
        // Huge weight pushing class 1 for positive input.
        let m = MlpModel::from_params(&[1, 2], vec![-50.0, 50.0, 0.0, 0.0]).unwrap();
        let (loss, grad) = m.loss_grad(&[1.0], &[1]).unwrap();
        assert!(loss < 1e-20);
        assert!(grad.iter().all(|g| g.abs() < 1e-20));
    }

    #[test]
    fn duplicated_batch_leaves_loss_grad_unchanged() {
        let m = MlpModel::init_uniform(&[4, 6, 3], 0.5, RngStream::new(5, 0)).unwrap();
        let data = gen_synthetic(3, 4, 6, 1.5, RngStream::new(5, 1)).unwrap();
        let (loss1, grad1) = m.loss_grad(&data.features, &data.labels).unwrap();
        let mut feats2 = data.features.clone();
        feats2.extend_from_slice(&data.features);
        let mut labels2 = data.labels.clone();
        labels2.extend_from_slice(&data.labels);
        let (loss2, grad2) = m.loss_grad(&feats2, &labels2).unwrap();
        assert!((loss1 - loss2).abs() < 1e-12);
        for (a, b) in grad1.iter().zip(&grad2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let dims = [5, 8, 4];
        let mut model = MlpModel::init_uniform(&dims, 0.6, RngStream::new(7, 0)).unwrap();
        let data = gen_synthetic(4, 5, 12, 1.0, RngStream::new(7, 1)).unwrap();
        let (_, grad) = model.loss_grad(&data.features, &data.labels).unwrap();
        let h = 1e-5;
        let mut max_rel: f64 = 0.0;
        for i in 0..model.r() {
            let orig = model.params[i];
            model.params[i] = orig + h;
            let (lp, _) = model.loss_grad(&data.features, &data.labels).unwrap();
            model.params[i] = orig - h;
            let (lm, _) = model.loss_grad(&data.features, &data.labels).unwrap();
            model.params[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel <= 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn zero_lr_is_identity() {
        let m = MlpModel::init_uniform(&[3, 5, 2], 0.5, RngStream::new(9, 0)).unwrap();
        let data = gen_synthetic(2, 3, 20, 2.0, RngStream::new(9, 1)).unwrap();
        let idx: Vec<usize> = (0..20).collect();
        let trained = m
            .local_train(&data, &idx, 2, 4, 0.0, RngStream::new(9, 2))
            .unwrap();
        assert_eq!(m.params, trained.params);
    }

    #[test]
    fn local_train_is_deterministic() {
        let m = MlpModel::init_uniform(&[3, 5, 2], 0.5, RngStream::new(10, 0)).unwrap();
        let data = gen_synthetic(2, 3, 30, 2.0, RngStream::new(10, 1)).unwrap();
        let idx: Vec<usize> = (0..30).collect();
        let a = m.local_train(&data, &idx, 3, 4, 0.05, RngStream::new(10, 2)).unwrap();
        let b = m.local_train(&data, &idx, 3, 4, 0.05, RngStream::new(10, 2)).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn separable_logistic_reaches_full_train_accuracy() {
        // 1-D two-class blobs far apart; a linear softmax model separates them.
        let data = gen_synthetic(2, 1, 40, 8.0, RngStream::new(11, 0)).unwrap();
        let m = MlpModel::zeros(&[1, 2]).unwrap();
        let idx: Vec<usize> = (0..40).collect();
        let trained = m
            .local_train(&data, &idx, 50, 8, 0.5, RngStream::new(11, 1))
            .unwrap();
        assert_eq!(trained.evaluate_accuracy(&data).unwrap(), 1.0);
    }

    #[test]
    fn constant_predictor_accuracy_is_class_fraction() {
        // Bias strongly favors class 2.
        let mut m = MlpModel::zeros(&[2, 3]).unwrap();
        let r = m.r();
        m.params[r - 1] = 10.0;
        let data = gen_synthetic(3, 2, 30, 1.0, RngStream::new(12, 0)).unwrap();
        let frac = data.labels.iter().filter(|&&l| l == 2).count() as f64 / 30.0;
        assert_eq!(m.evaluate_accuracy(&data).unwrap(), frac);
    }

    #[test]
    fn zero_model_ties_break_to_class_zero() {
        let m = MlpModel::zeros(&[2, 10]).unwrap();
        let data = gen_synthetic(10, 2, 100, 1.0, RngStream::new(13, 0)).unwrap();
        let class0 = data.labels.iter().filter(|&&l| l == 0).count() as f64 / 100.0;
        assert_eq!(m.evaluate_accuracy(&data).unwrap(), class0);
    }

    #[test]
    fn accuracy_is_permutation_invariant() {
        let m = MlpModel::init_uniform(&[3, 4, 2], 0.5, RngStream::new(14, 0)).unwrap();
        let data = gen_synthetic(2, 3, 25, 2.0, RngStream::new(14, 1)).unwrap();
        let forward = m.evaluate_accuracy(&data).unwrap();
        let perm: Vec<usize> = (0..25).rev().collect();
        let shuffled = data.select(&perm);
        assert_eq!(forward, m.evaluate_accuracy(&shuffled).unwrap());
    }

    #[test]
    fn flatten_round_trip_random_dims() {
        let mut r = RngStream::new(15, 0).rng();
        for _ in 0..100 {
            let depth = r.random_range(2..=4usize);
            let dims: Vec<usize> = (0..depth).map(|_| r.random_range(1..=6usize)).collect();
            let params: Vec<f64> = (0..param_count(&dims)).map(|_| r.random::<f64>()).collect();
            let m = MlpModel::from_params(&dims, params.clone()).unwrap();
            assert_eq!(m.params, params);
            // Layer offsets tile the vector exactly.
            let mut expected = 0;
            for (w_off, b_off, inn, out) in m.layers() {
                assert_eq!(w_off, expected);
                assert_eq!(b_off, expected + inn * out);
                expected += inn * out + out;
            }
            assert_eq!(expected, params.len());
        }
    }
}
