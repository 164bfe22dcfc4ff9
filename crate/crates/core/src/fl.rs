//! Local training on small differentiable tasks, model deltas, and digital
//! federated averaging.
//!
//! Two tasks are provided: linear regression under mean squared error, and
//! a one-hidden-layer tanh network with softmax cross-entropy. Both expose
//! analytic gradients so that the training loop needs no autodiff.

use rand::seq::SliceRandom;

use crate::codec::WeightVector;
use crate::error::{dim, Error, Result};
use crate::rng::{derive_seed, rng_from, standard_normal};

/// Flat model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams(pub Vec<f64>);

impl ModelParams {
    pub fn zeros(p: usize) -> Self {
        Self(vec![0.0; p])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    LinearRegression,
    /// `tanh` hidden layer of `hidden` units followed by a softmax over
    /// `classes` outputs. Parameters are laid out as `W1 (hidden x d)`,
    /// `b1`, `W2 (classes x hidden)`, `b2`, each row-major.
    Mlp {
        hidden: usize,
        classes: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Values(Vec<f64>),
    Labels(Vec<usize>),
}

impl Targets {
    fn len(&self) -> usize {
        match self {
            Targets::Values(v) => v.len(),
            Targets::Labels(l) => l.len(),
        }
    }
}

/// A dataset together with the model that is trained on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    kind: TaskKind,
    /// Row-major, `rows x dim`.
    features: Vec<f64>,
    dim: usize,
    targets: Targets,
}

impl Task {
    pub fn linear_regression(features: Vec<f64>, dim: usize, targets: Vec<f64>) -> Result<Self> {
        Self::new(TaskKind::LinearRegression, features, dim, Targets::Values(targets))
    }

    pub fn mlp(features: Vec<f64>, dim: usize, labels: Vec<usize>, hidden: usize, classes: usize) -> Result<Self> {
        Self::new(
            TaskKind::Mlp { hidden, classes },
            features,
            dim,
            Targets::Labels(labels),
        )
    }

    pub fn new(kind: TaskKind, features: Vec<f64>, dim: usize, targets: Targets) -> Result<Self> {
        if dim == 0 || features.is_empty() {
            return Err(Error::Config("task needs at least one feature and one row".into()));
        }
        if !features.len().is_multiple_of(dim) {
            return Err(dim_err(features.len(), dim));
        }
        let rows = features.len() / dim;
        if targets.len() != rows {
            return Err(self::dim(rows, targets.len()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("features must be finite".into()));
        }
        match (&kind, &targets) {
            (TaskKind::LinearRegression, Targets::Values(v)) => {
                if v.iter().any(|t| !t.is_finite()) {
                    return Err(Error::Precondition("targets must be finite".into()));
                }
            }
            (TaskKind::Mlp { hidden, classes }, Targets::Labels(l)) => {
                if *hidden == 0 || *classes < 2 {
                    return Err(Error::Config(
                        "network needs hidden units and at least two classes".into(),
                    ));
                }
                if l.iter().any(|&c| c >= *classes) {
                    return Err(Error::Config("label exceeds class count".into()));
                }
            }
            _ => return Err(Error::Config("target type does not match the task kind".into())),
        }
        Ok(Self {
            kind,
            features,
            dim,
            targets,
        })
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn rows(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn feature_dim(&self) -> usize {
        self.dim
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            TaskKind::LinearRegression => self.dim + 1,
            TaskKind::Mlp { hidden, classes } => hidden * self.dim + hidden + classes * hidden + classes,
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(self::dim(self.param_count(), theta.len()));
        }
        Ok(())
    }

    /// Mean loss over the whole dataset.
    pub fn loss(&self, theta: &ModelParams) -> Result<f64> {
        self.check(&theta.0)?;
        let all: Vec<usize> = (0..self.rows()).collect();
        Ok(self.loss_grad(&theta.0, &all, false).0)
    }

    /// Mean loss and its gradient over the rows in `batch`.
    pub fn loss_and_grad(&self, theta: &ModelParams, batch: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check(&theta.0)?;
        if batch.is_empty() || batch.iter().any(|&i| i >= self.rows()) {
            return Err(Error::Bounds("batch rows must be valid and nonempty".into()));
        }
        Ok(self.loss_grad(&theta.0, batch, true))
    }

    fn loss_grad(&self, theta: &[f64], batch: &[usize], want_grad: bool) -> (f64, Vec<f64>) {
        let n = batch.len() as f64;
        let mut grad = if want_grad { vec![0.0; theta.len()] } else { Vec::new() };
        let mut loss = 0.0;
        match (self.kind, &self.targets) {
            (TaskKind::LinearRegression, Targets::Values(y)) => {
                let (w, b) = theta.split_at(self.dim);
                for &i in batch {
                    let x = self.row(i);
                    let r = dot(w, x) + b[0] - y[i];
                    loss += r * r;
                    if want_grad {
                        let s = 2.0 * r / n;
                        let (gw, gb) = grad.split_at_mut(self.dim);
                        for (g, xv) in gw.iter_mut().zip(x) {
                            *g += s * xv;
                        }
                        gb[0] += s;
                    }
                }
            }
            (TaskKind::Mlp { hidden, classes }, Targets::Labels(y)) => {
                let d = self.dim;
                let (w1, rest) = theta.split_at(hidden * d);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(classes * hidden);
                let mut a = vec![0.0; hidden];
                let mut z = vec![0.0; classes];
                let mut da = vec![0.0; hidden];
                for &i in batch {
                    let x = self.row(i);
                    for (h, av) in a.iter_mut().enumerate() {
                        *av = (dot(&w1[h * d..(h + 1) * d], x) + b1[h]).tanh();
                    }
                    for (c, zv) in z.iter_mut().enumerate() {
                        *zv = dot(&w2[c * hidden..(c + 1) * hidden], &a) + b2[c];
                    }
                    let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = zmax + z.iter().map(|v| (v - zmax).exp()).sum::<f64>().ln();
                    loss += lse - z[y[i]];
                    if !want_grad {
                        continue;
                    }
                    let (gw1, grest) = grad.split_at_mut(hidden * d);
                    let (gb1, grest) = grest.split_at_mut(hidden);
                    let (gw2, gb2) = grest.split_at_mut(classes * hidden);
                    da.iter_mut().for_each(|v| *v = 0.0);
                    for c in 0..classes {
                        let dz = ((z[c] - lse).exp() - if c == y[i] { 1.0 } else { 0.0 }) / n;
                        gb2[c] += dz;
                        let wrow = &w2[c * hidden..(c + 1) * hidden];
                        for h in 0..hidden {
                            gw2[c * hidden + h] += dz * a[h];
                            da[h] += dz * wrow[h];
                        }
                    }
                    for h in 0..hidden {
                        let dz1 = da[h] * (1.0 - a[h] * a[h]);
                        gb1[h] += dz1;
                        for (g, xv) in gw1[h * d..(h + 1) * d].iter_mut().zip(x) {
                            *g += dz1 * xv;
                        }
                    }
                }
            }
            _ => unreachable!("kind and targets are checked at construction"),
        }
        (loss / n, grad)
    }

    /// Classification accuracy; `None` for regression.
    pub fn accuracy(&self, theta: &ModelParams) -> Result<Option<f64>> {
        self.check(&theta.0)?;
        let (TaskKind::Mlp { hidden, classes }, Targets::Labels(y)) = (self.kind, &self.targets) else {
            return Ok(None);
        };
        let d = self.dim;
        let t = &theta.0;
        let (w1, rest) = t.split_at(hidden * d);
        let (b1, rest) = rest.split_at(hidden);
        let (w2, b2) = rest.split_at(classes * hidden);
        let correct = (0..self.rows())
            .filter(|&i| {
                let x = self.row(i);
                let a: Vec<f64> = (0..hidden)
                    .map(|h| (dot(&w1[h * d..(h + 1) * d], x) + b1[h]).tanh())
                    .collect();
                let best = (0..classes)
                    .map(|c| dot(&w2[c * hidden..(c + 1) * hidden], &a) + b2[c])
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(c, _)| c);
                best == Some(y[i])
            })
            .count();
        Ok(Some(correct as f64 / self.rows() as f64))
    }
}

fn dim_err(len: usize, d: usize) -> Error {
    Error::Dimension {
        expected: format!("a multiple of {d} feature values"),
        actual: len.to_string(),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Initial global model: zeros for regression, scaled Gaussian weights and
/// zero biases for the network.
pub fn init_params(task: &Task, seed: u64) -> ModelParams {
    match task.kind {
        TaskKind::LinearRegression => ModelParams::zeros(task.param_count()),
        TaskKind::Mlp { hidden, classes } => {
            let d = task.dim;
            let mut rng = rng_from(seed);
            let mut p = Vec::with_capacity(task.param_count());
            let s1 = (1.0 / d as f64).sqrt();
            p.extend((0..hidden * d).map(|_| s1 * standard_normal(&mut rng)));
            p.extend(std::iter::repeat_n(0.0, hidden));
            let s2 = (1.0 / hidden as f64).sqrt();
            p.extend((0..classes * hidden).map(|_| s2 * standard_normal(&mut rng)));
            p.extend(std::iter::repeat_n(0.0, classes));
            ModelParams(p)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 50,
            local_epochs: 1,
            optimizer: Optimizer::Sgd,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, rows: usize) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.batch_size > rows {
            return Err(Error::Config(format!(
                "batch size {} must lie in 1..={rows}",
                self.batch_size
            )));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps.is_finite() && eps > 0.0) {
                return Err(Error::Config("Adam needs betas in [0, 1) and eps > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundState {
    pub round: usize,
    pub global: ModelParams,
    pub num_ues: usize,
}

/// `local_epochs` passes of minibatch optimization starting at `global`.
///
/// Rows are reshuffled every epoch from `cfg.seed`; the last batch of an
/// epoch may be short. Adam moments start at zero on every call.
pub fn local_train(global: &ModelParams, task: &Task, cfg: &TrainConfig) -> Result<ModelParams> {
    task.check(&global.0)?;
    cfg.validate(task.rows())?;
    let mut theta = global.clone();
    let mut order: Vec<usize> = (0..task.rows()).collect();
    let mut rng = rng_from(cfg.seed);
    let full_batch = cfg.batch_size == task.rows();
    let p = theta.len();
    let (mut m, mut v) = match cfg.optimizer {
        Optimizer::Adam { .. } => (vec![0.0; p], vec![0.0; p]),
        Optimizer::Sgd => (Vec::new(), Vec::new()),
    };
    let mut step = 0i32;
    for _ in 0..cfg.local_epochs {
        if !full_batch {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(cfg.batch_size) {
            let (_, g) = task.loss_grad(&theta.0, batch, true);
            step += 1;
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (t, gv) in theta.0.iter_mut().zip(&g) {
                        *t -= cfg.learning_rate * gv;
                    }
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(step);
                    let c2 = 1.0 - beta2.powi(step);
                    for k in 0..p {
                        m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                        v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                        theta.0[k] -= cfg.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
    if !theta.is_finite() {
        return Err(Error::Precondition("training diverged to non-finite parameters".into()));
    }
    Ok(theta)
}

pub fn compute_delta(local: &ModelParams, global_prev: &ModelParams) -> Result<WeightVector> {
    if local.len() != global_prev.len() {
        return Err(dim(global_prev.len(), local.len()));
    }
    Ok(WeightVector(
        local.0.iter().zip(&global_prev.0).map(|(a, b)| a - b).collect(),
    ))
}

/// Adds an already averaged delta to the previous global model.
pub fn apply_global(global_prev: &ModelParams, avg_delta: &WeightVector) -> Result<ModelParams> {
    if avg_delta.len() != global_prev.len() {
        return Err(dim(global_prev.len(), avg_delta.len()));
    }
    Ok(ModelParams(
        global_prev.0.iter().zip(&avg_delta.0).map(|(a, b)| a + b).collect(),
    ))
}

/// Elementwise mean, summed in ascending index order.
pub fn mean_vectors<'a>(vs: impl ExactSizeIterator<Item = &'a [f64]>) -> Result<Vec<f64>> {
    let m = vs.len();
    let mut acc: Option<Vec<f64>> = None;
    for v in vs {
        match acc.as_mut() {
            None => acc = Some(v.to_vec()),
            Some(a) => {
                if a.len() != v.len() {
                    return Err(dim(a.len(), v.len()));
                }
                a.iter_mut().zip(v).for_each(|(x, y)| *x += y);
            }
        }
    }
    let mut acc = acc.ok_or_else(|| Error::Precondition("cannot average an empty list".into()))?;
    acc.iter_mut().for_each(|x| *x /= m as f64);
    Ok(acc)
}

pub fn fedavg_digital(locals: &[ModelParams]) -> Result<ModelParams> {
    mean_vectors(locals.iter().map(|l| l.as_slice())).map(ModelParams)
}

pub fn mean_delta(deltas: &[WeightVector]) -> Result<WeightVector> {
    mean_vectors(deltas.iter().map(|d| d.as_slice())).map(WeightVector)
}

/// Population variance across UEs, averaged over parameters.
pub fn update_variance(deltas: &[WeightVector]) -> Result<f64> {
    let mean = mean_delta(deltas)?;
    let p = mean.len();
    if p == 0 {
        return Ok(0.0);
    }
    let m = deltas.len() as f64;
    let total: f64 = (0..p)
        .map(|k| deltas.iter().map(|d| (d.0[k] - mean.0[k]).powi(2)).sum::<f64>() / m)
        .sum();
    Ok(total / p as f64)
}

/// Sample-weighted mean loss over several datasets.
pub fn pooled_loss(tasks: &[Task], theta: &ModelParams) -> Result<f64> {
    let mut num = 0.0;
    let mut rows = 0usize;
    for t in tasks {
        num += t.loss(theta)? * t.rows() as f64;
        rows += t.rows();
    }
    if rows == 0 {
        return Err(Error::Precondition("no data".into()));
    }
    Ok(num / rows as f64)
}

/// Generator for per-UE linear-regression data.
///
/// Every UE draws standard Gaussian features but labels them with its own
/// weights `w0 + heterogeneity * n_i`, so local optima differ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionData {
    pub features: usize,
    pub samples_per_ue: usize,
    pub heterogeneity: f64,
    pub noise_std: f64,
}

impl RegressionData {
    /// Data for a model with `params` parameters (features plus bias).
    pub fn with_params(params: usize, samples_per_ue: usize) -> Self {
        Self {
            features: params.saturating_sub(1).max(1),
            samples_per_ue,
            heterogeneity: 0.3,
            noise_std: 0.1,
        }
    }

    pub fn generate(&self, ues: usize, seed: u64) -> Result<Vec<Task>> {
        let d = self.features;
        let s = (1.0 / d as f64).sqrt();
        let mut rng = rng_from(derive_seed(seed, &[0]));
        let w0: Vec<f64> = (0..d).map(|_| s * standard_normal(&mut rng)).collect();
        (0..ues)
            .map(|ue| {
                let mut rng = rng_from(derive_seed(seed, &[1, ue as u64]));
                let w: Vec<f64> = w0
                    .iter()
                    .map(|v| v + self.heterogeneity * s * standard_normal(&mut rng))
                    .collect();
                let b = 0.5 + self.heterogeneity * standard_normal(&mut rng);
                let n = self.samples_per_ue;
                let x: Vec<f64> = (0..n * d).map(|_| standard_normal(&mut rng)).collect();
                let y = (0..n)
                    .map(|i| dot(&w, &x[i * d..(i + 1) * d]) + b + self.noise_std * standard_normal(&mut rng))
                    .collect();
                Task::linear_regression(x, d, y)
            })
            .collect()
    }
}

/// Generator for per-UE Gaussian-blob classification data.
///
/// Class centres are shared; each UE shifts them by `heterogeneity` times a
/// private Gaussian offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobData {
    pub features: usize,
    pub classes: usize,
    pub hidden: usize,
    pub samples_per_ue: usize,
    pub separation: f64,
    pub heterogeneity: f64,
}

impl BlobData {
    pub fn generate(&self, ues: usize, seed: u64) -> Result<Vec<Task>> {
        let d = self.features;
        let mut rng = rng_from(derive_seed(seed, &[0]));
        let centres: Vec<f64> = (0..self.classes * d)
            .map(|_| self.separation * standard_normal(&mut rng))
            .collect();
        (0..ues)
            .map(|ue| {
                let mut rng = rng_from(derive_seed(seed, &[1, ue as u64]));
                let shift: Vec<f64> = (0..d).map(|_| self.heterogeneity * standard_normal(&mut rng)).collect();
                let mut x = Vec::with_capacity(self.samples_per_ue * d);
                let mut y = Vec::with_capacity(self.samples_per_ue);
                for i in 0..self.samples_per_ue {
                    let c = i % self.classes;
                    let centre = &centres[c * d..(c + 1) * d];
                    x.extend((0..d).map(|k| centre[k] + shift[k] + standard_normal(&mut rng)));
                    y.push(c);
                }
                Task::mlp(x, d, y, self.hidden, self.classes)
            })
            .collect()
    }
}

/// Reads whitespace-separated numeric columns. The last column is the
/// target; the rest are features. `#` starts a comment and blank lines are
/// skipped. Every data row must have the same width.
pub fn parse_columns(text: &str) -> Result<(Vec<f64>, usize, Vec<f64>)> {
    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let vals = body
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        if vals.len() < 2 {
            return Err(Error::Config(format!(
                "line {}: need a feature and a target",
                lineno + 1
            )));
        }
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => {
                return Err(Error::Config(format!(
                    "line {}: expected {w} columns, found {}",
                    lineno + 1,
                    vals.len()
                )))
            }
            _ => {}
        }
        let (x, y) = vals.split_at(vals.len() - 1);
        features.extend_from_slice(x);
        targets.push(y[0]);
    }
    let w = width.ok_or_else(|| Error::Config("no data rows".into()))?;
    Ok((features, w - 1, targets))
}

impl Task {
    /// Builds a task from [`parse_columns`] text. For the network the target
    /// column must hold nonnegative integer labels.
    pub fn from_columns(text: &str, kind: TaskKind) -> Result<Self> {
        let (x, d, y) = parse_columns(text)?;
        let targets = match kind {
            TaskKind::LinearRegression => Targets::Values(y),
            TaskKind::Mlp { .. } => Targets::Labels(
                y.iter()
                    .map(|&v| {
                        if v >= 0.0 && v.fract() == 0.0 {
                            Ok(v as usize)
                        } else {
                            Err(Error::Config(format!("label {v} is not a class index")))
                        }
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        Task::new(kind, x, d, targets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn blobs() -> Task {
        BlobData {
            features: 4,
            classes: 3,
            hidden: 5,
            samples_per_ue: 30,
            separation: 4.0,
            heterogeneity: 0.0,
        }
        .generate(1, 11)
        .unwrap()
        .remove(0)
    }

    fn regression(d: usize, n: usize) -> Task {
        RegressionData {
            features: d,
            samples_per_ue: n,
            heterogeneity: 0.2,
            noise_std: 0.1,
        }
        .generate(1, 5)
        .unwrap()
        .remove(0)
    }

    fn central_difference(task: &Task, theta: &ModelParams, batch: &[usize]) -> Vec<f64> {
        let h = 1e-5;
        (0..theta.len())
            .map(|k| {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up.0[k] += h;
                dn.0[k] -= h;
                let lu = task.loss_grad(&up.0, batch, false).0;
                let ld = task.loss_grad(&dn.0, batch, false).0;
                (lu - ld) / (2.0 * h)
            })
            .collect()
    }

    fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let den = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
        num / den
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = rng_from(99);
        for task in [blobs(), regression(6, 20)] {
            let batch: Vec<usize> = (0..task.rows()).step_by(3).collect();
            let mut worst: f64 = 0.0;
            for _ in 0..50 {
                let theta = ModelParams((0..task.param_count()).map(|_| standard_normal(&mut rng)).collect());
                let (_, g) = task.loss_and_grad(&theta, &batch).unwrap();
                worst = worst.max(max_rel_err(&g, &central_difference(&task, &theta, &batch)));
            }
            assert!(worst < 1e-5, "{worst}");
        }
    }

    #[test]
    fn quadratic_descent_converges() {
        // (theta - 3)^2 as regression on one row x = 0 with target 3 and the bias as theta.
        let task = Task::linear_regression(vec![0.0], 1, vec![3.0]).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            batch_size: 1,
            local_epochs: 100,
            ..Default::default()
        };
        let out = local_train(&ModelParams::zeros(2), &task, &cfg).unwrap();
        assert!((out.0[1] - 3.0).abs() < 1e-6);
        let err0: f64 = 3.0;
        assert!((3.0 - out.0[1] - err0 * 0.8f64.powi(100)).abs() < 1e-12);
    }

    #[test]
    fn zero_epochs_is_identity_and_training_is_deterministic() {
        let task = blobs();
        let g = init_params(&task, 1);
        let mut cfg = TrainConfig {
            local_epochs: 0,
            batch_size: 7,
            optimizer: Optimizer::adam(),
            learning_rate: 0.01,
            seed: 3,
        };
        assert_eq!(local_train(&g, &task, &cfg).unwrap(), g);
        cfg.local_epochs = 3;
        let a = local_train(&g, &task, &cfg).unwrap();
        assert_eq!(a, local_train(&g, &task, &cfg).unwrap());
        assert_ne!(a, g);
        cfg.seed = 4;
        assert_ne!(a, local_train(&g, &task, &cfg).unwrap());
    }

    #[test]
    fn training_reduces_loss_for_both_optimizers() {
        let task = blobs();
        let g = init_params(&task, 2);
        for opt in [Optimizer::Sgd, Optimizer::adam()] {
            let cfg = TrainConfig {
                learning_rate: if opt == Optimizer::Sgd { 0.2 } else { 0.02 },
                batch_size: 10,
                local_epochs: 20,
                optimizer: opt,
                seed: 1,
            };
            let out = local_train(&g, &task, &cfg).unwrap();
            assert!(task.loss(&out).unwrap() < 0.5 * task.loss(&g).unwrap());
            assert!(task.accuracy(&out).unwrap().unwrap() > 0.9);
        }
    }

    #[test]
    fn dimension_and_config_errors() {
        let task = regression(3, 10);
        assert!(local_train(&ModelParams::zeros(3), &task, &TrainConfig::default()).is_err());
        let big = TrainConfig {
            batch_size: 11,
            ..Default::default()
        };
        assert!(local_train(&ModelParams::zeros(4), &task, &big).is_err());
        assert!(compute_delta(&ModelParams::zeros(2), &ModelParams::zeros(3)).is_err());
        assert!(apply_global(&ModelParams::zeros(2), &WeightVector(vec![0.0])).is_err());
        assert!(fedavg_digital(&[]).is_err());
        assert!(update_variance(&[]).is_err());
        assert!(Task::linear_regression(vec![1.0, 2.0, 3.0], 2, vec![1.0]).is_err());
        assert!(Task::mlp(vec![1.0], 1, vec![2], 3, 2).is_err());
    }

    #[test]
    fn delta_and_average_identities() {
        let th = ModelParams(vec![1.5, -2.0]);
        assert_eq!(compute_delta(&th, &th).unwrap().0, vec![0.0, 0.0]);
        assert_eq!(
            compute_delta(&ModelParams(vec![3.0]), &ModelParams(vec![1.0]))
                .unwrap()
                .0,
            vec![2.0]
        );
        let g = ModelParams(vec![0.25, 4.0]);
        let local = ModelParams(vec![1.0, -3.0]);
        let d = compute_delta(&local, &g).unwrap();
        assert_eq!(apply_global(&g, &d).unwrap(), local);
        assert_eq!(apply_global(&g, &WeightVector(vec![0.0, 0.0])).unwrap(), g);
        let sym = mean_delta(&[WeightVector(vec![0.7, -1.0]), WeightVector(vec![-0.7, 1.0])]).unwrap();
        assert_eq!(apply_global(&g, &sym).unwrap(), g);
        assert_eq!(
            fedavg_digital(&[ModelParams(vec![0.0]), ModelParams(vec![2.0])])
                .unwrap()
                .0,
            vec![1.0]
        );
        assert_eq!(fedavg_digital(&[th.clone(), th.clone(), th.clone()]).unwrap(), th);
    }

    #[test]
    fn variance_reference_values() {
        let same = vec![WeightVector(vec![1.0, 2.0]); 4];
        assert_eq!(update_variance(&same).unwrap(), 0.0);
        let pm = [WeightVector(vec![-1.0]), WeightVector(vec![1.0])];
        assert_eq!(update_variance(&pm).unwrap(), 1.0);
    }

    #[test]
    fn column_import() {
        let text = "# x1 x2 y\n1 2 3\n\n4 5 6 # trailing\n";
        let (x, d, y) = parse_columns(text).unwrap();
        assert_eq!((x, d, y), (vec![1.0, 2.0, 4.0, 5.0], 2, vec![3.0, 6.0]));
        assert!(parse_columns("1 2\n1 2 3\n")
            .unwrap_err()
            .to_string()
            .contains("line 2"));
        assert!(parse_columns("1 x\n").is_err());
        assert!(parse_columns("# only\n").is_err());
        let t = Task::from_columns("0.5 1\n-0.5 0\n", TaskKind::Mlp { hidden: 2, classes: 2 }).unwrap();
        assert_eq!(t.rows(), 2);
        assert!(Task::from_columns("0.5 1.5\n", TaskKind::Mlp { hidden: 2, classes: 2 }).is_err());
    }

    /// Largest eigenvalue of `2/n X^T X` with a bias column, by power iteration.
    fn lipschitz(task: &Task) -> f64 {
        let d = task.feature_dim() + 1;
        let n = task.rows();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r = task.row(i).to_vec();
                r.push(1.0);
                r
            })
            .collect();
        let mut v = vec![1.0; d];
        let mut lambda = 0.0;
        for _ in 0..500 {
            let mut w = vec![0.0; d];
            for r in &rows {
                let s = dot(r, &v);
                w.iter_mut().zip(r).for_each(|(a, b)| *a += 2.0 * s * b / n as f64);
            }
            lambda = dot(&w, &w).sqrt();
            v = w.iter().map(|x| x / lambda).collect();
        }
        lambda
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn full_batch_loss_never_increases(seed in any::<u64>(), frac in 0.05f64..0.95) {
            let task = RegressionData { features: 5, samples_per_ue: 40, heterogeneity: 0.5, noise_std: 0.3 }
                .generate(1, seed).unwrap().remove(0);
            let lr = frac / lipschitz(&task);
            let cfg = TrainConfig { learning_rate: lr, batch_size: task.rows(), local_epochs: 1, ..Default::default() };
            let mut theta = ModelParams::zeros(task.param_count());
            let mut prev = task.loss(&theta).unwrap();
            for _ in 0..30 {
                theta = local_train(&theta, &task, &cfg).unwrap();
                let now = task.loss(&theta).unwrap();
                prop_assert!(now <= prev * (1.0 + 1e-12));
                prev = now;
            }
        }

        #[test]
        fn fedavg_matches_delta_path(seed in any::<u64>(), m in 1usize..8, p in 1usize..40) {
            let mut rng = rng_from(seed);
            let prev = ModelParams((0..p).map(|_| standard_normal(&mut rng)).collect());
            let locals: Vec<ModelParams> = (0..m)
                .map(|_| ModelParams((0..p).map(|_| standard_normal(&mut rng)).collect()))
                .collect();
            let deltas: Vec<WeightVector> = locals.iter().map(|l| compute_delta(l, &prev).unwrap()).collect();
            let via_delta = apply_global(&prev, &mean_delta(&deltas).unwrap()).unwrap();
            let direct = fedavg_digital(&locals).unwrap();
            for (a, b) in via_delta.0.iter().zip(&direct.0) {
                let scale = locals.iter().map(|l| l.0.iter().fold(0.0f64, |s, v| s.max(v.abs()))).fold(prev.0.iter().fold(0.0f64, |s, v| s.max(v.abs())), f64::max);
                prop_assert!((a - b).abs() <= 8.0 * f64::EPSILON * scale.max(1.0) * m as f64);
            }
        }

        #[test]
        fn variance_matches_two_pass(seed in any::<u64>(), m in 1usize..8, p in 1usize..20) {
            let mut rng = rng_from(seed);
            let ds: Vec<WeightVector> = (0..m)
                .map(|_| WeightVector((0..p).map(|_| 3.0 * standard_normal(&mut rng)).collect()))
                .collect();
            let flat: Vec<f64> = ds.iter().flat_map(|d| d.0.iter().cloned()).collect();
            let mut oracle = 0.0;
            for k in 0..p {
                let col: Vec<f64> = (0..m).map(|i| flat[i * p + k]).collect();
                let mu = col.iter().sum::<f64>() / m as f64;
                oracle += col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
            }
            oracle /= p as f64;
            prop_assert!((update_variance(&ds).unwrap() - oracle).abs() <= 1e-12 * oracle.max(1.0));
        }
    }
}
