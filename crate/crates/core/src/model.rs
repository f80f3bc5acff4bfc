//! Softmax regression and a one-hidden-layer tanh MLP with hand-written
//! backpropagation.
//!
//! Parameter layout (row-major):
//! - linear: `W (C x d_in)`, `b (C)`
//! - mlp: `W1 (h x d_in)`, `b1 (h)`, `W2 (C x h)`, `b2 (C)`

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::param::ParamVector;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    #[default]
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub d_in: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl ModelSpec {
    pub fn linear(d_in: usize, classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Linear,
            d_in,
            hidden: 0,
            classes,
        }
    }

    pub fn mlp(d_in: usize, hidden: usize, classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            d_in,
            hidden,
            classes,
        }
    }

    pub fn param_dim(&self) -> usize {
        match self.kind {
            ModelKind::Linear => self.d_in * self.classes + self.classes,
            ModelKind::Mlp => self.d_in * self.hidden + self.hidden + self.hidden * self.classes + self.classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 {
            return Err(Error::config("data.d_in", "must be >= 1"));
        }
        if self.classes == 0 {
            return Err(Error::config("data.classes", "must be >= 1"));
        }
        if self.kind == ModelKind::Mlp && self.hidden == 0 {
            return Err(Error::config("model.hidden", "mlp needs hidden >= 1"));
        }
        Ok(())
    }

    fn check(&self, w: &ParamVector, data: &Dataset) -> Result<()> {
        if w.len() != self.param_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.param_dim(),
                got: w.len(),
            });
        }
        if data.dim() != self.d_in {
            return Err(Error::DimensionMismatch {
                expected: self.d_in,
                got: data.dim(),
            });
        }
        Ok(())
    }
}

/// Rows of a dataset to evaluate on: either all of them or an index list.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    data: &'a Dataset,
    indices: Option<&'a [usize]>,
}

impl<'a> Batch<'a> {
    pub fn full(data: &'a Dataset) -> Self {
        Batch { data, indices: None }
    }

    pub fn new(data: &'a Dataset, indices: &'a [usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::config("batch", "empty batch"));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= data.len()) {
            return Err(Error::config(
                "batch",
                format!("index {i} out of range for {} rows", data.len()),
            ));
        }
        Ok(Batch {
            data,
            indices: Some(indices),
        })
    }

    pub fn len(&self) -> usize {
        self.indices.map_or(self.data.len(), <[usize]>::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn rows(&self) -> impl Iterator<Item = (&'a [f64], usize)> + '_ {
        let data = self.data;
        let n = self.len();
        (0..n).map(move |k| {
            let i = self.indices.map_or(k, |ix| ix[k]);
            (data.row(i), data.label(i))
        })
    }
}

/// Draw `batch_size` distinct row indices out of `n` (all rows when the
/// batch would not be smaller than the set).
pub fn sample_batch(n: usize, batch_size: usize, stream: &RngStream) -> Vec<usize> {
    if batch_size == 0 || batch_size >= n {
        return (0..n).collect();
    }
    index::sample(&mut stream.rng(), n, batch_size).into_vec()
}

/// Logits for one sample. `hidden` receives the tanh activations for the
/// mlp and is left untouched for the linear model.
fn forward(spec: &ModelSpec, w: &[f64], x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
    let (d, c) = (spec.d_in, spec.classes);
    match spec.kind {
        ModelKind::Linear => {
            let (wm, b) = w.split_at(d * c);
            for k in 0..c {
                let row = &wm[k * d..(k + 1) * d];
                logits[k] = b[k] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        ModelKind::Mlp => {
            let h = spec.hidden;
            let (w1, rest) = w.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            for j in 0..h {
                let row = &w1[j * d..(j + 1) * d];
                let a = b1[j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                hidden[j] = a.tanh();
            }
            for k in 0..c {
                let row = &w2[k * h..(k + 1) * h];
                logits[k] = b2[k] + row.iter().zip(hidden.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
}

/// Turns logits into probabilities in place and returns `-log p[label]`.
fn softmax_xent(logits: &mut [f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted_target = logits[label] - max;
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for p in logits.iter_mut() {
        *p /= sum;
    }
    sum.ln() - shifted_target
}

fn proximal(w: &ParamVector, mu: f64, anchor: Option<&ParamVector>) -> Result<f64> {
    match anchor {
        Some(a) if mu != 0.0 => Ok(0.5 * mu * w.sub(a)?.norm_sq()),
        Some(a) => {
            w.check_dim(a)?;
            Ok(0.0)
        }
        None => Ok(0.0),
    }
}

/// Mean cross-entropy over the batch.
pub fn cross_entropy(spec: &ModelSpec, w: &ParamVector, batch: Batch<'_>) -> Result<f64> {
    spec.check(w, batch.data)?;
    if batch.is_empty() {
        return Err(Error::config("batch", "empty batch"));
    }
    let mut hidden = vec![0.0; spec.hidden];
    let mut logits = vec![0.0; spec.classes];
    let mut total = 0.0;
    for (x, y) in batch.rows() {
        forward(spec, w.as_slice(), x, &mut hidden, &mut logits);
        total += softmax_xent(&mut logits, y);
    }
    let l = total / batch.len() as f64;
    if !l.is_finite() {
        return Err(Error::non_finite(format!("cross-entropy is {l}")));
    }
    Ok(l)
}

/// Mean cross-entropy plus `(mu/2)|w - anchor|^2` when an anchor is given.
pub fn loss(spec: &ModelSpec, w: &ParamVector, batch: Batch<'_>, mu: f64, anchor: Option<&ParamVector>) -> Result<f64> {
    let l = cross_entropy(spec, w, batch)? + proximal(w, mu, anchor)?;
    if !l.is_finite() {
        return Err(Error::non_finite(format!("loss is {l}")));
    }
    Ok(l)
}

/// Analytic gradient of [`loss`].
pub fn grad(
    spec: &ModelSpec,
    w: &ParamVector,
    batch: Batch<'_>,
    mu: f64,
    anchor: Option<&ParamVector>,
) -> Result<ParamVector> {
    spec.check(w, batch.data)?;
    if batch.is_empty() {
        return Err(Error::config("batch", "empty batch"));
    }
    let (d, c, h) = (spec.d_in, spec.classes, spec.hidden);
    let ws = w.as_slice();
    let mut g = vec![0.0; ws.len()];
    let mut hidden = vec![0.0; h];
    let mut logits = vec![0.0; c];
    let mut dhidden = vec![0.0; h];
    for (x, y) in batch.rows() {
        forward(spec, ws, x, &mut hidden, &mut logits);
        softmax_xent(&mut logits, y);
        logits[y] -= 1.0; // now dL/dz
        match spec.kind {
            ModelKind::Linear => {
                let (gw, gb) = g.split_at_mut(d * c);
                for k in 0..c {
                    let dz = logits[k];
                    for (gj, xj) in gw[k * d..(k + 1) * d].iter_mut().zip(x) {
                        *gj += dz * xj;
                    }
                    gb[k] += dz;
                }
            }
            ModelKind::Mlp => {
                let w2 = &ws[h * d + h..h * d + h + c * h];
                let (gw1, rest) = g.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(c * h);
                dhidden.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..c {
                    let dz = logits[k];
                    let row = &w2[k * h..(k + 1) * h];
                    for j in 0..h {
                        gw2[k * h + j] += dz * hidden[j];
                        dhidden[j] += dz * row[j];
                    }
                    gb2[k] += dz;
                }
                for j in 0..h {
                    let da = dhidden[j] * (1.0 - hidden[j] * hidden[j]);
                    for (gi, xi) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *gi += da * xi;
                    }
                    gb1[j] += da;
                }
            }
        }
    }
    let inv_n = 1.0 / batch.len() as f64;
    for gi in &mut g {
        *gi *= inv_n;
    }
    if let Some(a) = anchor {
        w.check_dim(a)?;
        if mu != 0.0 {
            for ((gi, wi), ai) in g.iter_mut().zip(ws).zip(a.iter()) {
                *gi += mu * (wi - ai);
            }
        }
    }
    let out = ParamVector::from_vec(g).map_err(|_| Error::non_finite("gradient"))?;
    Ok(out)
}

/// Predicted class: argmax of the logits, lowest index on ties.
pub fn predict(spec: &ModelSpec, w: &ParamVector, x: &[f64]) -> usize {
    let mut hidden = vec![0.0; spec.hidden];
    let mut logits = vec![0.0; spec.classes];
    forward(spec, w.as_slice(), x, &mut hidden, &mut logits);
    argmax(&logits)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &z) in v.iter().enumerate().skip(1) {
        if z > v[best] {
            best = k;
        }
    }
    best
}

/// Fraction of rows whose argmax prediction equals the label.
pub fn accuracy(spec: &ModelSpec, w: &ParamVector, data: &Dataset) -> Result<f64> {
    spec.check(w, data)?;
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut hidden = vec![0.0; spec.hidden];
    let mut logits = vec![0.0; spec.classes];
    let mut correct = 0usize;
    for i in 0..data.len() {
        forward(spec, w.as_slice(), data.row(i), &mut hidden, &mut logits);
        if argmax(&logits) == data.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Result of comparing the analytic gradient with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub probes: usize,
    pub max_rel_error: f64,
}

/// Central-difference check of [`grad`] along `probes` random directions,
/// each at a fresh random point and proximal anchor on a small synthetic
/// batch. Relative error per probe is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn gradient_check(spec: &ModelSpec, probes: usize, step: f64, seed: u64) -> Result<GradCheck> {
    use rand::Rng;
    use rand_distr::StandardNormal;

    spec.validate()?;
    let data = crate::data::gen_synthetic(
        8 * spec.classes,
        spec.d_in,
        spec.classes,
        1.0,
        &RngStream::new(seed, "gradcheck_data"),
    )?;
    let p = spec.param_dim();
    let mut max_rel = 0.0f64;
    for k in 0..probes {
        let mut rng = RngStream::keyed(seed, "gradcheck", 0, k).rng();
        let mut draw = |scale: f64| -> Result<ParamVector> {
            ParamVector::from_vec((0..p).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
        };
        let w = draw(0.5)?;
        let anchor = draw(0.5)?;
        let dir = draw(1.0)?;
        let mu = 0.01;
        let batch = Batch::full(&data);
        let analytic = grad(spec, &w, batch, mu, Some(&anchor))?.dot(&dir)?;
        let mut plus = w.clone();
        plus.axpy(step, &dir)?;
        let mut minus = w.clone();
        minus.axpy(-step, &dir)?;
        let numeric = (loss(spec, &plus, batch, mu, Some(&anchor))? - loss(spec, &minus, batch, mu, Some(&anchor))?)
            / (2.0 * step);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheck {
        probes,
        max_rel_error: max_rel,
    })
}
