//! One-hidden-layer softmax classifiers trained by noisy (minibatch)
//! gradient descent.
//!
//! Parameters are a flat vector laid out layer by layer as
//! `[W1 (H×m, row-major), b1 (H), W2 (K×H, row-major), b2 (K)]`.

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, NoiseStream};
use crate::sde::GradientModel;

const INIT_KEY: u64 = 0x1417;
const BATCH_KEY: u64 = 0xBA7C;
const NOISE_KEY: u64 = 0x4015E;
const BLOBS_KEY: u64 = 0xB10B;

/// Features with integer class labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(
        features: DMatrix<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(invalid("features", "dataset must hold at least one row"));
        }
        if labels.len() != features.nrows() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                found: labels.len(),
            });
        }
        if let Some(&c) = labels.iter().find(|&&c| c >= num_classes) {
            return Err(invalid("labels", format!("label {c} outside 0..{num_classes}")));
        }
        if let Some(i) = (0..features.nrows()).find(|&i| features.row(i).iter().any(|v| !v.is_finite())) {
            return Err(invalid("features", format!("row {i} is not finite")));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> (Vec<f64>, usize) {
        (self.features.row(i).iter().copied().collect(), self.labels[i])
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let m = self.num_features();
        let features = DMatrix::from_fn(indices.len(), m, |r, c| self.features[(indices[r], c)]);
        Dataset {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            name: self.name.clone(),
        }
    }

    /// Reads CSV with header `f0,…,f{m−1},label`. The class count is one more
    /// than the largest label unless given.
    pub fn from_csv(r: impl Read, name: impl Into<String>, num_classes: Option<usize>) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let headers = reader.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
        let m = headers.len().checked_sub(1).ok_or_else(|| Error::Parse("empty header".into()))?;
        for (i, h) in headers.iter().enumerate() {
            let want = if i == m { "label".to_string() } else { format!("f{i}") };
            if h.trim() != want {
                return Err(Error::Parse(format!("column {i} is `{h}`, expected `{want}`")));
            }
        }
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            if rec.len() != m + 1 {
                return Err(Error::Parse(format!("row {line} has {} fields", rec.len())));
            }
            for f in rec.iter().take(m) {
                values.push(
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("row {line}: {e}")))?,
                );
            }
            labels.push(
                rec[m]
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("row {line} label: {e}")))?,
            );
        }
        let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |c| c + 1));
        let n = labels.len();
        Dataset::new(DMatrix::from_row_slice(n, m, &values), labels, k, name)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut writer = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.num_features()).map(|i| format!("f{i}")).collect();
        header.push("label".into());
        writer.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            rec.push(self.labels[i].to_string());
            writer.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// How the neighbouring dataset is formed from row `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Adjacency {
    /// Drop row `j`.
    Remove,
    /// Replace row `j` with the given point.
    Replace { features: Vec<f64>, label: usize },
    /// Replace row `j` with itself (the null case).
    Identical,
    /// Relabel row `j` as `(c + 1) mod K`.
    #[default]
    FlipLabel,
}

/// Neighbouring dataset differing from `d` in row `j` only.
pub fn make_adjacent(d: &Dataset, j: usize, mode: &Adjacency) -> Result<Dataset> {
    if j >= d.len() {
        return Err(Error::IndexOutOfRange { index: j, len: d.len() });
    }
    match mode {
        Adjacency::Remove => {
            if d.len() == 1 {
                return Err(invalid("mode", "cannot remove the only row"));
            }
            let keep: Vec<usize> = (0..d.len()).filter(|&i| i != j).collect();
            Ok(d.subset(&keep))
        }
        Adjacency::Replace { features, label } => {
            if features.len() != d.num_features() {
                return Err(Error::DimensionMismatch {
                    expected: d.num_features(),
                    found: features.len(),
                });
            }
            let mut out = d.clone();
            for (c, v) in features.iter().enumerate() {
                out.features[(j, c)] = *v;
            }
            out.labels[j] = *label;
            Dataset::new(out.features, out.labels, out.num_classes, out.name)
        }
        Adjacency::Identical => Ok(d.clone()),
        Adjacency::FlipLabel => {
            let mut out = d.clone();
            out.labels[j] = (out.labels[j] + 1) % d.num_classes.max(1);
            Ok(out)
        }
    }
}

/// Gaussian clusters with identity covariance. Class `k` is centred at
/// `(k − (K−1)/2)·separation` along the first axis, so neighbouring classes
/// are `separation` apart. Rows are grouped by class.
pub fn synth_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes == 0 || per_class == 0 || dim == 0 {
        return Err(invalid("synth_blobs", "classes, per_class and dim must be positive"));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(invalid("separation", "must be nonnegative and finite"));
    }
    let mut stream = NoiseStream::new(derive_seed(seed, &[BLOBS_KEY]), 0);
    let n = classes * per_class;
    let noise = stream.normals(n * dim);
    let centre = (classes as f64 - 1.0) / 2.0;
    let features = DMatrix::from_fn(n, dim, |r, c| {
        let k = r / per_class;
        let shift = if c == 0 { (k as f64 - centre) * separation } else { 0.0 };
        shift + noise[r * dim + c]
    });
    let labels = (0..n).map(|r| r / per_class).collect();
    Dataset::new(features, labels, classes, format!("blobs-k{classes}-sep{separation}"))
}

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
        }
    }
}

/// Layer sizes `(m, H, K)` and the hidden activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    pub inputs: usize,
    pub hidden: usize,
    pub classes: usize,
    pub activation: Activation,
}

impl MlpArch {
    pub fn new(inputs: usize, hidden: usize, classes: usize, activation: Activation) -> Result<Self> {
        if inputs == 0 || hidden == 0 || classes < 2 {
            return Err(invalid("layer_sizes", "need inputs ≥ 1, hidden ≥ 1, classes ≥ 2"));
        }
        Ok(MlpArch {
            inputs,
            hidden,
            classes,
            activation,
        })
    }

    pub fn for_dataset(d: &Dataset, hidden: usize, activation: Activation) -> Result<Self> {
        Self::new(d.num_features(), hidden, d.num_classes().max(2), activation)
    }

    pub fn layer_sizes(&self) -> [usize; 3] {
        [self.inputs, self.hidden, self.classes]
    }

    /// `Σ (fan_in + 1)·fan_out`.
    pub fn num_params(&self) -> usize {
        (self.inputs + 1) * self.hidden + (self.hidden + 1) * self.classes
    }

    /// Parameter index ranges of the two layers (weights then biases).
    pub fn layer_ranges(&self) -> [std::ops::Range<usize>; 2] {
        let first = (self.inputs + 1) * self.hidden;
        [0..first, first..self.num_params()]
    }
}

/// Serialized form of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<f64>,
    pub seed: u64,
}

/// Parameters of a one-hidden-layer softmax classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub arch: MlpArch,
    pub params: DVector<f64>,
    pub seed: u64,
}

struct Forward {
    z1: DMatrix<f64>,
    a1: DMatrix<f64>,
    probs: DMatrix<f64>,
    logits: DMatrix<f64>,
    /// Per row: index and value of the largest logit and
    /// `Σ_{j≠top} e^{z_j − max}`.
    norm: Vec<(usize, f64, f64)>,
}

impl Forward {
    /// `−log softmax(z)_c`, kept accurate when the row is confident.
    fn nll(&self, r: usize, c: usize) -> f64 {
        let (top, max, rest) = self.norm[r];
        let tail = rest.ln_1p();
        if c == top {
            tail
        } else {
            (max - self.logits[(r, c)]) + tail
        }
    }
}

impl MlpModel {
    pub fn zeros(arch: MlpArch) -> Self {
        MlpModel {
            arch,
            params: DVector::zeros(arch.num_params()),
            seed: 0,
        }
    }

    /// Uniform on `±1/√fan_in` for every weight and bias.
    pub fn init(arch: MlpArch, seed: u64) -> Self {
        let mut stream = NoiseStream::new(derive_seed(seed, &[INIT_KEY]), 0);
        let [l1, l2] = arch.layer_ranges();
        let mut params = DVector::zeros(arch.num_params());
        for (range, fan_in) in [(l1, arch.inputs), (l2, arch.hidden)] {
            let scale = 1.0 / (fan_in as f64).sqrt();
            for i in range {
                params[i] = scale * (2.0 * stream.uniform() - 1.0);
            }
        }
        MlpModel { arch, params, seed }
    }

    pub fn from_params(arch: MlpArch, params: DVector<f64>, seed: u64) -> Result<Self> {
        if params.len() != arch.num_params() {
            return Err(Error::DimensionMismatch {
                expected: arch.num_params(),
                found: params.len(),
            });
        }
        Ok(MlpModel { arch, params, seed })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            layer_sizes: self.arch.layer_sizes().to_vec(),
            activation: self.arch.activation,
            params: self.params.iter().copied().collect(),
            seed: self.seed,
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let [m, h, k] = c.layer_sizes[..] else {
            return Err(invalid("layer_sizes", "expected three sizes"));
        };
        let arch = MlpArch::new(m, h, k, c.activation)?;
        Self::from_params(arch, DVector::from_column_slice(&c.params), c.seed)
    }

    fn weights(&self) -> (DMatrix<f64>, &[f64], DMatrix<f64>, &[f64]) {
        let MlpArch {
            inputs: m,
            hidden: h,
            classes: k,
            ..
        } = self.arch;
        let p = self.params.as_slice();
        let w1 = DMatrix::from_row_slice(h, m, &p[..h * m]);
        let b1 = &p[h * m..h * m + h];
        let o = h * m + h;
        let w2 = DMatrix::from_row_slice(k, h, &p[o..o + k * h]);
        let b2 = &p[o + k * h..];
        (w1, b1, w2, b2)
    }

    fn forward_cache(&self, x: &DMatrix<f64>) -> Forward {
        let (w1, b1, w2, b2) = self.weights();
        let mut z1 = x * w1.transpose();
        for mut row in z1.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(b1) {
                *v += b;
            }
        }
        let act = self.arch.activation;
        let a1 = z1.map(|z| act.apply(z));
        let mut logits = &a1 * w2.transpose();
        for mut row in logits.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(b2) {
                *v += b;
            }
        }
        let mut probs = logits.clone();
        let mut norm = Vec::with_capacity(x.nrows());
        for mut row in probs.row_iter_mut() {
            let (top, max) = row
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, z)| if z > best.1 { (j, z) } else { best });
            let rest: f64 = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != top)
                .map(|(_, z)| (z - max).exp())
                .sum();
            let lse = max + rest.ln_1p();
            norm.push((top, max, rest));
            row.apply(|z| *z = (*z - lse).exp());
        }
        Forward {
            z1,
            a1,
            probs,
            logits,
            norm,
        }
    }

    /// Class probabilities, one row per input row.
    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_cache(x).probs
    }

    /// Mean cross-entropy over the rows of `data` and its gradient.
    pub fn loss_and_grad(&self, data: &Dataset) -> (f64, DVector<f64>) {
        self.loss_and_grad_rows(data, None)
    }

    /// Mean cross-entropy over `rows` (all rows when `None`) and its gradient.
    pub fn loss_and_grad_rows(&self, data: &Dataset, rows: Option<&[usize]>) -> (f64, DVector<f64>) {
        let owned;
        let (x, labels): (&DMatrix<f64>, Vec<usize>) = match rows {
            None => (data.features(), data.labels().to_vec()),
            Some(idx) => {
                owned = DMatrix::from_fn(idx.len(), data.num_features(), |r, c| data.features()[(idx[r], c)]);
                (&owned, idx.iter().map(|&i| data.labels()[i]).collect())
            }
        };
        let f = self.forward_cache(x);
        let b = x.nrows() as f64;
        let loss = labels
            .iter()
            .enumerate()
            .map(|(r, &c)| f.nll(r, c))
            .sum::<f64>()
            / b;
        let mut dz2 = f.probs.clone();
        for (r, &c) in labels.iter().enumerate() {
            dz2[(r, c)] -= 1.0;
        }
        dz2 /= b;
        (loss, self.backward(x, &f, &dz2))
    }

    fn backward(&self, x: &DMatrix<f64>, f: &Forward, dz2: &DMatrix<f64>) -> DVector<f64> {
        let (_, _, w2, _) = self.weights();
        let act = self.arch.activation;
        let gw2 = dz2.transpose() * &f.a1;
        let gb2 = dz2.row_sum();
        let mut dz1 = dz2 * &w2;
        dz1.zip_apply(&f.z1, |g, z| *g *= act.derivative(z));
        let gw1 = dz1.transpose() * x;
        let gb1 = dz1.row_sum();
        let mut g = Vec::with_capacity(self.arch.num_params());
        for r in 0..gw1.nrows() {
            g.extend(gw1.row(r).iter());
        }
        g.extend(gb1.iter());
        for r in 0..gw2.nrows() {
            g.extend(gw2.row(r).iter());
        }
        g.extend(gb2.iter());
        DVector::from_vec(g)
    }

    /// Cross-entropy of each row.
    pub fn per_example_loss(&self, data: &Dataset) -> Vec<f64> {
        let f = self.forward_cache(data.features());
        data.labels()
            .iter()
            .enumerate()
            .map(|(r, &c)| f.nll(r, c))
            .collect()
    }

    /// `N × d` matrix of per-row cross-entropy gradients (unnormalized, so the
    /// rows sum to `N` times the mean-loss gradient).
    pub fn per_example_grads(&self, data: &Dataset) -> DMatrix<f64> {
        let n = data.len();
        let mut out = DMatrix::zeros(n, self.arch.num_params());
        for i in 0..n {
            let (_, g) = self.loss_and_grad_rows(data, Some(&[i]));
            out.row_mut(i).copy_from(&g.transpose());
        }
        out
    }

    /// Fraction of rows whose most probable class is the label.
    pub fn accuracy(&self, data: &Dataset) -> f64 {
        let p = self.forward(data.features());
        let hits = data
            .labels()
            .iter()
            .enumerate()
            .filter(|(r, &c)| p.row(*r).transpose().argmax().0 == c)
            .count();
        hits as f64 / data.len() as f64
    }
}

/// Summed cross-entropy `f(x) = Σ_l ℓ_l(x)` over a dataset, viewed as a
/// function of the parameters.
#[derive(Debug, Clone)]
pub struct DatasetLoss {
    pub arch: MlpArch,
    pub data: Arc<Dataset>,
}

impl GradientModel for DatasetLoss {
    fn dim(&self) -> usize {
        self.arch.num_params()
    }

    fn num_examples(&self) -> usize {
        self.data.len()
    }

    fn per_example_gradients(&self, x: &DVector<f64>) -> DMatrix<f64> {
        MlpModel::from_params(self.arch, x.clone(), 0)
            .expect("parameter length checked by caller")
            .per_example_grads(&self.data)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let model = MlpModel::from_params(self.arch, x.clone(), 0).expect("parameter length checked by caller");
        model.loss_and_grad(&self.data).1 * self.data.len() as f64
    }
}

/// Gaussian noise added to each gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseScheme {
    #[default]
    None,
    /// Variance `σ² K_ℓ` for every parameter of layer `ℓ`, where `K_ℓ` is
    /// the largest absolute gradient entry of that layer.
    IsotropicPerLayer { sigma2: f64 },
    /// Variance `σ² |∂_i f|` for parameter `i`.
    AnisotropicPerParam { sigma2: f64 },
}

impl NoiseScheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseScheme::None => Ok(()),
            NoiseScheme::IsotropicPerLayer { sigma2 } | NoiseScheme::AnisotropicPerParam { sigma2 } => {
                if sigma2 >= 0.0 && sigma2.is_finite() {
                    Ok(())
                } else {
                    Err(invalid("sigma2", "must be nonnegative and finite"))
                }
            }
        }
    }

    /// Per-parameter noise variance given the gradient that sets its scale.
    pub fn variances(&self, arch: &MlpArch, grad: &DVector<f64>) -> DVector<f64> {
        match *self {
            NoiseScheme::None => DVector::zeros(grad.len()),
            NoiseScheme::AnisotropicPerParam { sigma2 } => grad.map(|g| sigma2 * g.abs()),
            NoiseScheme::IsotropicPerLayer { sigma2 } => {
                let mut v = DVector::zeros(grad.len());
                for range in arch.layer_ranges() {
                    let k = grad.rows_range(range.clone()).amax();
                    v.rows_range_mut(range).fill(sigma2 * k);
                }
                v
            }
        }
    }
}

/// Which gradient sets the noise scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseBasis {
    /// The minibatch gradient of the current step.
    #[default]
    Minibatch,
    /// The full-data gradient at the current iterate.
    FullGradient,
}

/// Optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    #[serde(default)]
    pub scheme: NoiseScheme,
    pub lr: f64,
    pub iters: usize,
    pub batch: usize,
    #[serde(default)]
    pub noise_on: NoiseBasis,
}

impl TrainSettings {
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        self.scheme.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid("lr", "must be positive and finite"));
        }
        if self.iters == 0 {
            return Err(invalid("iters", "must be positive"));
        }
        if self.batch == 0 {
            return Err(invalid("batch", "must be positive"));
        }
        if self.batch > dataset_len {
            return Err(Error::BatchLargerThanDataset {
                batch: self.batch,
                dataset: dataset_len,
            });
        }
        Ok(())
    }
}

/// Per-iteration record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainLog {
    /// Minibatch loss before each update.
    pub loss: Vec<f64>,
    /// Largest absolute gradient entry per layer at each update.
    pub max_grad: Vec<[f64; 2]>,
    /// Iteration at which the loss or parameters became non-finite.
    pub diverged_at: Option<usize>,
}

impl TrainLog {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn worst_loss(&self) -> f64 {
        self.loss.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Indices of a uniform minibatch of size `batch` drawn without replacement
/// for iteration `iter`.
pub fn minibatch_indices(seed: u64, iter: usize, n: usize, batch: usize) -> Vec<usize> {
    if batch == n {
        return (0..n).collect();
    }
    let mut stream = NoiseStream::new(derive_seed(seed, &[BATCH_KEY, iter as u64]), 0);
    let mut idx: Vec<usize> = (0..n).collect();
    for k in 0..batch {
        let j = k + stream.below(n - k);
        idx.swap(k, j);
    }
    idx.truncate(batch);
    idx
}

/// Noisy gradient descent `x ← x − η g + N(0, Σ_t)` from `model`. Batch
/// selection and noise for iteration `t` come from streams keyed by
/// `(seed, t)`, so runs on neighbouring datasets with the same seed share
/// their randomness.
pub fn train(model: &MlpModel, data: &Dataset, settings: &TrainSettings, seed: u64) -> Result<(MlpModel, TrainLog)> {
    settings.validate(data.len())?;
    if data.num_features() != model.arch.inputs {
        return Err(Error::DimensionMismatch {
            expected: model.arch.inputs,
            found: data.num_features(),
        });
    }
    let mut m = model.clone();
    let d = m.arch.num_params();
    let ranges = m.arch.layer_ranges();
    let mut log = TrainLog {
        loss: Vec::with_capacity(settings.iters),
        max_grad: Vec::with_capacity(settings.iters),
        diverged_at: None,
    };
    let mut xi = DVector::zeros(d);
    for t in 0..settings.iters {
        let rows = minibatch_indices(seed, t, data.len(), settings.batch);
        let (loss, grad) = m.loss_and_grad_rows(data, Some(&rows));
        log.loss.push(loss);
        log.max_grad.push([
            grad.rows_range(ranges[0].clone()).amax(),
            grad.rows_range(ranges[1].clone()).amax(),
        ]);
        if !loss.is_finite() {
            log.diverged_at = Some(t);
            break;
        }
        let mut step = -grad.clone() * settings.lr;
        if settings.scheme != NoiseScheme::None {
            let basis = match settings.noise_on {
                NoiseBasis::Minibatch => grad,
                NoiseBasis::FullGradient => m.loss_and_grad(data).1,
            };
            let var = settings.scheme.variances(&m.arch, &basis);
            let mut stream = NoiseStream::new(derive_seed(seed, &[NOISE_KEY, t as u64]), 0);
            stream.fill_normals(xi.as_mut_slice());
            step += var.map(f64::sqrt).component_mul(&xi);
        }
        m.params += step;
        if m.params.iter().any(|v| !v.is_finite()) {
            log.diverged_at = Some(t);
            break;
        }
    }
    Ok((m, log))
}

/// Initializes from `seed` and trains with the same seed.
pub fn train_from_seed(arch: MlpArch, data: &Dataset, settings: &TrainSettings, seed: u64) -> Result<(MlpModel, TrainLog)> {
    train(&MlpModel::init(arch, seed), data, settings, seed)
}
