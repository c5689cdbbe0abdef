//! Logistic regression baseline on dummy-encoded, standardized inputs.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Cell, ColumnData, Dataset};
use crate::error::{Error, Result};
use crate::model::{read_versioned, sigmoid, ModelDocumentRef};

pub const LOGREG_FORMAT: &str = "glassbox.logreg";
pub const LOGREG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EncodedColumn {
    /// One design column, `(x - mean) / std`.
    Standardized { name: String, mean: f64, std: f64 },
    /// One indicator per non-reference level, in `levels` order.
    Dummy {
        name: String,
        reference: i64,
        levels: Vec<i64>,
    },
}

impl EncodedColumn {
    pub fn name(&self) -> &str {
        match self {
            EncodedColumn::Standardized { name, .. } | EncodedColumn::Dummy { name, .. } => name,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            EncodedColumn::Standardized { .. } => 1,
            EncodedColumn::Dummy { levels, .. } => levels.len(),
        }
    }

    fn write(&self, cell: Cell, out: &mut [f64]) -> Result<()> {
        match (self, cell) {
            (EncodedColumn::Standardized { mean, std, .. }, Cell::Num(x)) => out[0] = (x - mean) / std,
            (EncodedColumn::Dummy { levels, .. }, Cell::Cat(c)) => {
                out.iter_mut().for_each(|v| *v = 0.0);
                // Unseen codes and the reference both map to all zeros.
                if let Ok(i) = levels.binary_search(&c) {
                    out[i] = 1.0;
                }
            }
            (_, Cell::Missing) => return Err(Error::NotImputed(self.name().to_string())),
            _ => {
                return Err(Error::SchemaMismatch(format!(
                    "column `{}` has the wrong kind",
                    self.name()
                )))
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub columns: Vec<EncodedColumn>,
}

impl Encoding {
    pub fn width(&self) -> usize {
        self.columns.iter().map(EncodedColumn::width).sum()
    }

    /// Names of the design columns, `name=level` for indicators.
    pub fn column_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.width());
        for c in &self.columns {
            match c {
                EncodedColumn::Standardized { name, .. } => out.push(name.clone()),
                EncodedColumn::Dummy { name, levels, .. } => {
                    out.extend(levels.iter().map(|l| format!("{name}={l}")))
                }
            }
        }
        out
    }

    /// Encodes one row given as `(column, cell)` pairs; extra columns are
    /// ignored.
    pub fn encode_row(&self, row: &[(&str, Cell)]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.width()];
        let mut at = 0;
        for c in &self.columns {
            let cell = row
                .iter()
                .find(|(n, _)| *n == c.name())
                .map(|(_, cell)| *cell)
                .ok_or_else(|| Error::UnknownColumn(c.name().to_string()))?;
            c.write(cell, &mut out[at..at + c.width()])?;
            at += c.width();
        }
        Ok(out)
    }

    /// Design matrix for a whole dataset, rows in dataset order.
    pub fn encode(&self, d: &Dataset) -> Result<DMatrix<f64>> {
        let mut x = DMatrix::zeros(d.n_rows(), self.width());
        let mut at = 0;
        let mut buf = Vec::new();
        for c in &self.columns {
            let col = d
                .column(c.name())
                .ok_or_else(|| Error::UnknownColumn(c.name().to_string()))?;
            buf.resize(c.width(), 0.0);
            for r in 0..d.n_rows() {
                c.write(col.cell(r), &mut buf)?;
                for (j, v) in buf.iter().enumerate() {
                    x[(r, at + j)] = *v;
                }
            }
            at += c.width();
        }
        Ok(x)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EncodeOptions {
    /// Reference level per categorical column, overriding the most frequent.
    pub reference: BTreeMap<String, i64>,
}

/// Builds the encoding from `d` and applies it. Categorical columns get one
/// indicator per level except the reference (most frequent, ties to the
/// smallest code); continuous columns are z-scored with the population
/// standard deviation, a constant column keeping scale 1.
pub fn dummy_encode(d: &Dataset, opts: &EncodeOptions) -> Result<(DMatrix<f64>, Encoding)> {
    let mut columns = Vec::new();
    for (schema, data) in d.schema().columns.iter().zip(d.columns()) {
        let name = schema.name.clone();
        match data {
            ColumnData::Continuous(v) => {
                let xs: Vec<f64> = v
                    .iter()
                    .map(|x| x.ok_or_else(|| Error::NotImputed(name.clone())))
                    .collect::<Result<_>>()?;
                let n = xs.len().max(1) as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                let std = if var > 0.0 { var.sqrt() } else { 1.0 };
                columns.push(EncodedColumn::Standardized { name, mean, std });
            }
            ColumnData::Categorical(v) => {
                let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
                for c in v {
                    let c = c.ok_or_else(|| Error::NotImputed(name.clone()))?;
                    *counts.entry(c).or_insert(0) += 1;
                }
                let reference = match opts.reference.get(&name) {
                    Some(&r) => r,
                    // BTreeMap iterates ascending, so `max_by` keeping the
                    // first maximum needs the reversed comparison on ties.
                    None => counts
                        .iter()
                        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                        .map_or(0, |(&c, _)| c),
                };
                let levels = counts.keys().copied().filter(|&c| c != reference).collect();
                columns.push(EncodedColumn::Dummy {
                    name,
                    reference,
                    levels,
                });
            }
        }
    }
    for name in opts.reference.keys() {
        if !columns.iter().any(|c| matches!(c, EncodedColumn::Dummy { name: n, .. } if n == name)) {
            return Err(Error::UnknownColumn(name.clone()));
        }
    }
    let encoding = Encoding { columns };
    let x = encoding.encode(d)?;
    Ok((x, encoding))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogregConfig {
    pub l2: f64,
    /// Stop once the gradient max-norm is at most this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for LogregConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            tol: 1e-8,
            max_iters: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub encoding: Encoding,
    pub l2: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Gradient max-norm at the returned point.
    pub gradient_norm: f64,
}

/// Mean log-loss plus `l2 / 2 * |w|^2`; `theta[0]` is the unpenalized
/// intercept.
pub fn regularized_loss(x: &DMatrix<f64>, y: &[u8], theta: &DVector<f64>, l2: f64) -> f64 {
    let n = y.len() as f64;
    let mut nll = 0.0;
    for (r, &label) in y.iter().enumerate() {
        let z = linear(x, theta, r);
        // log(1 + e^z) - y z, evaluated without overflow.
        let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        nll += softplus - f64::from(label) * z;
    }
    let w2: f64 = theta.iter().skip(1).map(|w| w * w).sum();
    nll / n + 0.5 * l2 * w2
}

fn linear(x: &DMatrix<f64>, theta: &DVector<f64>, r: usize) -> f64 {
    theta[0] + (0..x.ncols()).map(|j| x[(r, j)] * theta[j + 1]).sum::<f64>()
}

fn gradient_hessian(x: &DMatrix<f64>, y: &[u8], theta: &DVector<f64>, l2: f64) -> (DVector<f64>, DMatrix<f64>) {
    let (n, p) = (y.len(), x.ncols() + 1);
    let mut g = DVector::zeros(p);
    let mut h = DMatrix::zeros(p, p);
    let mut row = vec![0.0; p];
    row[0] = 1.0;
    for (r, &label) in y.iter().enumerate() {
        for j in 1..p {
            row[j] = x[(r, j - 1)];
        }
        let mu = sigmoid(linear(x, theta, r));
        let resid = mu - f64::from(label);
        let w = mu * (1.0 - mu);
        for a in 0..p {
            g[a] += resid * row[a];
            for b in 0..=a {
                h[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    for a in 0..p {
        g[a] *= inv_n;
        for b in 0..=a {
            h[(a, b)] *= inv_n;
            h[(b, a)] = h[(a, b)];
        }
    }
    for j in 1..p {
        g[j] += l2 * theta[j];
        h[(j, j)] += l2;
    }
    (g, h)
}

/// Regularized Newton iterations from zero with backtracking line search.
/// Non-convergence within `max_iters` returns the last iterate with
/// `converged = false`.
pub fn fit_logreg(x: &DMatrix<f64>, y: &[u8], encoding: Encoding, cfg: &LogregConfig) -> Result<LinearModel> {
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch(format!("{} design rows, {} labels", x.nrows(), y.len())));
    }
    if x.ncols() != encoding.width() {
        return Err(Error::LengthMismatch(format!(
            "{} design columns, encoding width {}",
            x.ncols(),
            encoding.width()
        )));
    }
    if !(cfg.l2 >= 0.0 && cfg.tol > 0.0) {
        return Err(Error::Config("l2 must be nonnegative and tol positive".into()));
    }
    if y.is_empty() {
        return Err(Error::Empty("no training rows".into()));
    }
    let positives = y.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::SingleClass);
    }

    let p = x.ncols() + 1;
    let mut theta = DVector::zeros(p);
    let mut loss = regularized_loss(x, y, &theta, cfg.l2);
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    while iterations <= cfg.max_iters {
        let (g, mut h) = gradient_hessian(x, y, &theta, cfg.l2);
        grad_norm = g.amax();
        if grad_norm <= cfg.tol {
            converged = true;
            break;
        }
        if iterations == cfg.max_iters {
            break;
        }
        iterations += 1;
        // Collinear indicators leave H singular at l2 = 0; a growing ridge
        // restores definiteness.
        let mut ridge = 0.0;
        let step = loop {
            if let Some(chol) = h.clone().cholesky() {
                break chol.solve(&g);
            }
            ridge = if ridge == 0.0 { 1e-10 } else { ridge * 10.0 };
            for j in 0..p {
                h[(j, j)] += ridge;
            }
        };
        let slope = -g.dot(&step);
        let mut t = 1.0;
        loop {
            let candidate = &theta - t * &step;
            let cand_loss = regularized_loss(x, y, &candidate, cfg.l2);
            if cand_loss <= loss + 1e-4 * t * slope || t < 1e-12 {
                theta = candidate;
                loss = cand_loss;
                break;
            }
            t *= 0.5;
        }
    }
    Ok(LinearModel {
        intercept: theta[0],
        coefficients: theta.iter().skip(1).copied().collect(),
        encoding,
        l2: cfg.l2,
        converged,
        iterations,
        gradient_norm: grad_norm,
    })
}

/// Encodes and fits in one step.
pub fn fit_dataset(d: &Dataset, opts: &EncodeOptions, cfg: &LogregConfig) -> Result<LinearModel> {
    let (x, encoding) = dummy_encode(d, opts)?;
    fit_logreg(&x, d.labels(), encoding, cfg)
}

impl LinearModel {
    pub fn score_encoded(&self, encoded: &[f64]) -> f64 {
        self.intercept + encoded.iter().zip(&self.coefficients).map(|(x, w)| x * w).sum::<f64>()
    }

    pub fn predict_dataset(&self, d: &Dataset) -> Result<Vec<f64>> {
        let x = self.encoding.encode(d)?;
        Ok((0..x.nrows())
            .map(|r| {
                let z = self.intercept + (0..x.ncols()).map(|j| x[(r, j)] * self.coefficients[j]).sum::<f64>();
                sigmoid(z)
            })
            .collect())
    }

    pub fn to_document(&self) -> Result<String> {
        let doc = ModelDocumentRef {
            format: LOGREG_FORMAT,
            version: LOGREG_VERSION,
            model: self,
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Document(e.to_string()))
    }

    pub fn from_document(text: &str) -> Result<LinearModel> {
        let value = read_versioned(text, LOGREG_FORMAT, LOGREG_VERSION)?;
        let m: LinearModel = serde_json::from_value(value).map_err(|e| Error::Document(e.to_string()))?;
        if m.coefficients.len() != m.encoding.width() || !m.coefficients.iter().all(|w| w.is_finite()) {
            return Err(Error::Document("coefficients do not match the encoding".into()));
        }
        Ok(m)
    }
}

pub fn predict_logreg(m: &LinearModel, row: &[(&str, Cell)]) -> Result<f64> {
    let encoded = m.encoding.encode_row(row)?;
    Ok(sigmoid(m.score_encoded(&encoded)))
}
