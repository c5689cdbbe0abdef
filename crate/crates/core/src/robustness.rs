//! Shape-function stability across training-set sizes.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::boost::{train, TrainConfig};
use crate::data::{build_bins, discretize, BinMap, ColumnKind, Dataset, FeatureBins};
use crate::error::{Error, Result};
use crate::model::{AdditiveModel, ShapeFunction};
use crate::rng::{stream_rng, DOMAIN_SWEEP};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<(f64, f64)>,
}

impl Polyline {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("polyline has no vertices".into()));
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::InvalidArgument("polyline coordinates must be finite".into()));
        }
        Ok(Self { points })
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Discrete Fréchet distance: the smallest, over monotone couplings of the
/// two vertex sequences, of the largest coupled-vertex distance.
pub fn discrete_frechet(a: &Polyline, b: &Polyline) -> Result<f64> {
    let (p, q) = (&a.points, &b.points);
    if p.is_empty() || q.is_empty() {
        return Err(Error::Empty("polyline has no vertices".into()));
    }
    // one DP row at a time
    let mut prev = vec![0.0; q.len()];
    let mut cur = vec![0.0; q.len()];
    for i in 0..p.len() {
        for j in 0..q.len() {
            let d = dist(p[i], q[j]);
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => d.max(cur[j - 1]),
                (_, 0) => d.max(prev[0]),
                _ => d.max(prev[j].min(cur[j - 1]).min(prev[j - 1])),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[q.len() - 1])
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XScaling {
    /// Bin centers mapped affinely so the reference feature range becomes [0, 1].
    #[default]
    UnitInterval,
    Raw,
}

/// Observed (min, max) of a continuous shape's feature.
pub fn feature_range(s: &ShapeFunction) -> Result<(f64, f64)> {
    match &s.bins {
        FeatureBins::Continuous { min, max, .. } => Ok((*min, *max)),
        FeatureBins::Categorical { .. } => Err(Error::InvalidArgument(format!(
            "`{}` is categorical; compare it with categorical_shape_rmse",
            s.feature
        ))),
    }
}

/// One vertex per bin at (scaled bin center, value). `range` is the
/// reference model's feature range, used by unit-interval scaling.
pub fn shape_to_polyline(s: &ShapeFunction, scaling: XScaling, range: (f64, f64)) -> Result<Polyline> {
    feature_range(s)?;
    let (lo, hi) = range;
    let width = hi - lo;
    let points = (0..s.values.len())
        .map(|b| {
            let (a, z) = s.bins.bin_extent(b).expect("continuous bins have extents");
            let center = (a + z) / 2.0;
            let x = match scaling {
                XScaling::Raw => center,
                XScaling::UnitInterval if width > 0.0 => (center - lo) / width,
                XScaling::UnitInterval => 0.5,
            };
            (x, s.values[b])
        })
        .collect();
    Polyline::new(points)
}

/// RMS difference over the reference's categories, matched by category code.
/// A category the other shape never saw takes its sentinel value.
pub fn categorical_shape_rmse(reference: &ShapeFunction, other: &ShapeFunction) -> Result<f64> {
    if reference.feature != other.feature {
        return Err(Error::InvalidArgument(format!(
            "cannot compare `{}` with `{}`",
            reference.feature, other.feature
        )));
    }
    let (FeatureBins::Categorical { categories }, FeatureBins::Categorical { .. }) = (&reference.bins, &other.bins) else {
        return Err(Error::InvalidArgument(format!("`{}` is not categorical in both shapes", reference.feature)));
    };
    if categories.is_empty() {
        return Ok(0.0);
    }
    let ss: f64 = categories
        .iter()
        .enumerate()
        .map(|(i, &code)| {
            let theirs = other.values[other.bins.bin_of(crate::data::Cell::Cat(code))];
            (reference.values[i] - theirs).powi(2)
        })
        .sum();
    Ok((ss / categories.len() as f64).sqrt())
}

/// Fréchet distance for continuous shapes, RMSE for categorical ones.
pub fn shape_distance(reference: &ShapeFunction, other: &ShapeFunction, scaling: XScaling) -> Result<f64> {
    match reference.bins.kind() {
        ColumnKind::Continuous => {
            let range = feature_range(reference)?;
            discrete_frechet(
                &shape_to_polyline(reference, scaling, range)?,
                &shape_to_polyline(other, scaling, range)?,
            )
        }
        ColumnKind::Categorical => categorical_shape_rmse(reference, other),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub values: Vec<f64>,
    /// The first entry was zero, so values are passed through unchanged.
    pub degenerate: bool,
}

pub fn normalize_distances(raw: &[f64]) -> Normalized {
    match raw.first() {
        Some(&first) if first > 0.0 => Normalized {
            values: raw.iter().map(|d| d / first).collect(),
            degenerate: false,
        },
        Some(_) => Normalized {
            values: raw.to_vec(),
            degenerate: true,
        },
        None => Normalized {
            values: Vec::new(),
            degenerate: false,
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepEntry {
    pub size: usize,
    pub positives: usize,
    /// Subset without positives; no model was trained.
    pub degenerate: bool,
    pub shape: Option<ShapeFunction>,
    pub distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub feature: String,
    pub seed: u64,
    pub scaling: XScaling,
    pub reference: ShapeFunction,
    pub entries: Vec<SweepEntry>,
    /// Distances of non-degenerate entries divided by the first of them.
    pub normalized: Normalized,
}

impl SweepResult {
    pub fn sizes(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.size).collect()
    }

    /// (size, distance) of entries that have a distance.
    pub fn distances(&self) -> Vec<(usize, f64)> {
        self.entries.iter().filter_map(|e| e.distance.map(|d| (e.size, d))).collect()
    }
}

/// Trains on `d` over the shared grid `bins`, with bin counts taken from `d`.
fn fit(d: &Dataset, bins: &BinMap, cfg: &TrainConfig) -> Result<AdditiveModel> {
    let mut binned = discretize(d, bins)?;
    for (f, binning) in binned.binmap.features.iter_mut().enumerate() {
        binning.counts = vec![0; binning.bins.n_bins()];
        for &b in &binned.columns[f] {
            binning.counts[b as usize] += 1;
        }
    }
    train(&binned, cfg)
}

/// Trains on one uniform subset (without replacement) per size and compares
/// each requested feature's shape with the full-data model's. All models
/// share the full data's bin grid. Subsets for different sizes are drawn
/// independently; a size equal to the row count is the reference itself.
pub fn run_sweep(
    d: &Dataset,
    sizes: &[usize],
    cfg: &TrainConfig,
    features: &[String],
    scaling: XScaling,
    seed: u64,
) -> Result<Vec<SweepResult>> {
    if sizes.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one size".into()));
    }
    if sizes.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("sweep sizes must be ascending".into()));
    }
    let n = d.n_rows();
    if sizes[sizes.len() - 1] > n || sizes[0] == 0 {
        return Err(Error::InvalidArgument(format!("sweep sizes must lie in 1..={n}")));
    }
    for f in features {
        if d.column_index(f).is_none() {
            return Err(Error::UnknownFeature(f.clone()));
        }
    }
    let bins = build_bins(d, cfg.max_bins)?;
    let reference = fit(d, &bins, cfg)?;
    let mut per_size = Vec::with_capacity(sizes.len());
    for (k, &size) in sizes.iter().enumerate() {
        if size == n {
            per_size.push((n, d.n_positives(), Some(reference.clone())));
            continue;
        }
        let mut rng = stream_rng(seed, DOMAIN_SWEEP, k as u64);
        let mut rows = index::sample(&mut rng, n, size).into_vec();
        rows.sort_unstable();
        let subset = d.select_rows(&rows);
        let positives = subset.n_positives();
        if positives == 0 {
            log::warn!("sweep subset of {size} rows has no positives; skipped");
            per_size.push((size, 0, None));
            continue;
        }
        log::info!("sweep: training on {size} rows ({positives} positives)");
        per_size.push((size, positives, Some(fit(&subset, &bins, cfg)?)));
    }

    features
        .iter()
        .map(|name| {
            let ref_shape = reference.shape(name).expect("feature checked").clone();
            let entries = per_size
                .iter()
                .map(|(size, positives, model)| {
                    let shape = model.as_ref().map(|m| m.shape(name).expect("same schema").clone());
                    let distance = shape
                        .as_ref()
                        .map(|s| shape_distance(&ref_shape, s, scaling))
                        .transpose()?;
                    Ok(SweepEntry {
                        size: *size,
                        positives: *positives,
                        degenerate: model.is_none(),
                        shape,
                        distance,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let raw: Vec<f64> = entries.iter().filter_map(|e| e.distance).collect();
            Ok(SweepResult {
                feature: name.clone(),
                seed,
                scaling,
                reference: ref_shape,
                normalized: normalize_distances(&raw),
                entries,
            })
        })
        .collect()
}

/// Average ranks (ties share the mean of their positions), 1-based.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch("spearman inputs differ in length".into()));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("spearman needs at least 2 points".into()));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument("spearman of a constant sequence".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}
