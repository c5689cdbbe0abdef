//! Additive models: `g(E[y]) = intercept + sum_i f_i(x_i) + sum_pairs f_ij(x_i, x_j)`.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{BinLabel, BinMap, Cell, ColumnKind, Dataset, FeatureBinning, FeatureBins};
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "glassbox.additive_model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkFunction {
    #[default]
    Logistic,
    Identity,
}

impl LinkFunction {
    /// Maps an additive score to the mean response.
    pub fn inverse(self, score: f64) -> f64 {
        match self {
            LinkFunction::Logistic => sigmoid(score),
            LinkFunction::Identity => score,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Piecewise-constant contribution of one feature, one value per bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeFunction {
    pub feature: String,
    pub bins: FeatureBins,
    pub values: Vec<f64>,
    /// Standard deviation across outer bags.
    pub stderr: Vec<f64>,
    pub train_counts: Vec<u64>,
}

impl ShapeFunction {
    pub fn zeros(binning: &FeatureBinning) -> Self {
        let n = binning.bins.n_bins();
        Self {
            feature: binning.name.clone(),
            bins: binning.bins.clone(),
            values: vec![0.0; n],
            stderr: vec![0.0; n],
            train_counts: binning.counts.clone(),
        }
    }

    pub fn value_at(&self, cell: Cell) -> f64 {
        self.values[self.bins.bin_of(cell)]
    }

    /// Train-count weighted mean of the values.
    pub fn weighted_mean(&self) -> f64 {
        weighted_mean(&self.values, &self.train_counts)
    }
}

pub(crate) fn weighted_mean(values: &[f64], counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    values.iter().zip(counts).map(|(v, &c)| v * c as f64).sum::<f64>() / total as f64
}

/// One axis of an interaction surface. The coarse cell of a row is the
/// number of `cell_cuts` strictly below its main-effect bin index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionAxis {
    pub feature: String,
    pub bins: FeatureBins,
    pub cell_cuts: Vec<usize>,
}

impl InteractionAxis {
    pub fn n_cells(&self) -> usize {
        self.cell_cuts.len() + 1
    }

    pub fn cell_of_bin(&self, bin: usize) -> usize {
        self.cell_cuts.partition_point(|&c| c < bin)
    }

    pub fn cell_of(&self, cell: Cell) -> usize {
        self.cell_of_bin(self.bins.bin_of(cell))
    }
}

/// Pairwise term evaluated on a coarse grid, `values[row_cell][col_cell]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionSurface {
    pub axes: [InteractionAxis; 2],
    pub values: Vec<Vec<f64>>,
    pub train_counts: Vec<Vec<u64>>,
}

impl InteractionSurface {
    pub fn pair(&self) -> (&str, &str) {
        (&self.axes[0].feature, &self.axes[1].feature)
    }

    pub fn name(&self) -> String {
        format!("{} & {}", self.axes[0].feature, self.axes[1].feature)
    }

    pub fn involves(&self, feature: &str) -> bool {
        self.axes.iter().any(|a| a.feature == feature)
    }

    pub fn weighted_mean(&self) -> f64 {
        let values: Vec<f64> = self.values.iter().flatten().copied().collect();
        let counts: Vec<u64> = self.train_counts.iter().flatten().copied().collect();
        weighted_mean(&values, &counts)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    /// SHA-256 of the canonical training configuration.
    pub config_digest: String,
    pub seed: u64,
    pub n_train_rows: usize,
    pub n_train_positives: usize,
}

/// Deployable additive model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdditiveModel {
    pub intercept: f64,
    pub link: LinkFunction,
    pub shapes: Vec<ShapeFunction>,
    pub interactions: Vec<InteractionSurface>,
    pub metadata: ModelMetadata,
}

/// Per-term breakdown of a row's score.
#[derive(Clone, Debug, PartialEq)]
pub struct Explanation {
    pub intercept: f64,
    /// Shapes first (in model order), then interactions.
    pub terms: Vec<(String, f64)>,
}

impl Explanation {
    /// Intercept plus every term, summed left to right.
    pub fn total(&self) -> f64 {
        self.terms.iter().fold(self.intercept, |acc, (_, v)| acc + v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Importance {
    pub term: String,
    pub value: f64,
}

impl AdditiveModel {
    pub fn intercept_only(intercept: f64, link: LinkFunction) -> Self {
        Self {
            intercept,
            link,
            shapes: Vec::new(),
            interactions: Vec::new(),
            metadata: ModelMetadata::default(),
        }
    }

    pub fn features(&self) -> impl Iterator<Item = &str> {
        self.shapes.iter().map(|s| s.feature.as_str())
    }

    pub fn shape(&self, feature: &str) -> Option<&ShapeFunction> {
        self.shapes.iter().find(|s| s.feature == feature)
    }

    /// Bin map reconstructed from the shape functions.
    pub fn binmap(&self) -> BinMap {
        BinMap {
            features: self
                .shapes
                .iter()
                .map(|s| FeatureBinning {
                    name: s.feature.clone(),
                    bins: s.bins.clone(),
                    counts: s.train_counts.clone(),
                })
                .collect(),
        }
    }

    fn explain_with(&self, get: impl Fn(&str) -> Option<Cell>) -> Result<Explanation> {
        let lookup = |name: &str, bins: &FeatureBins| -> Result<Cell> {
            match get(name) {
                Some(c) => Ok(c),
                // a categorical feature can still route an absent value to its sentinel bin
                None if bins.sentinel_bin().is_some() => Ok(Cell::Missing),
                None => Err(Error::UnknownFeature(name.to_string())),
            }
        };
        let mut terms = Vec::with_capacity(self.shapes.len() + self.interactions.len());
        for s in &self.shapes {
            let cell = lookup(&s.feature, &s.bins)?;
            terms.push((s.feature.clone(), s.value_at(cell)));
        }
        for surface in &self.interactions {
            let [a, b] = &surface.axes;
            let i = a.cell_of(lookup(&a.feature, &a.bins)?);
            let j = b.cell_of(lookup(&b.feature, &b.bins)?);
            terms.push((surface.name(), surface.values[i][j]));
        }
        Ok(Explanation {
            intercept: self.intercept,
            terms,
        })
    }

    /// Contribution breakdown for one row given as `(feature, cell)` pairs.
    pub fn explain(&self, row: &[(&str, Cell)]) -> Result<Explanation> {
        self.explain_with(|name| row.iter().find(|(n, _)| *n == name).map(|&(_, c)| c))
    }

    /// Additive score (log-odds under the logistic link).
    pub fn score(&self, row: &[(&str, Cell)]) -> Result<f64> {
        Ok(self.explain(row)?.total())
    }

    pub fn predict_proba(&self, row: &[(&str, Cell)]) -> Result<f64> {
        if self.link != LinkFunction::Logistic {
            return Err(Error::LinkMismatch);
        }
        Ok(sigmoid(self.score(row)?))
    }

    pub fn explain_dataset(&self, d: &Dataset) -> Result<Vec<Explanation>> {
        let index: HashMap<&str, usize> = d
            .schema()
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| (c.name.as_str(), i))
            .collect();
        (0..d.n_rows())
            .map(|r| self.explain_with(|name| index.get(name).map(|&c| d.columns()[c].cell(r))))
            .collect()
    }

    pub fn score_dataset(&self, d: &Dataset) -> Result<Vec<f64>> {
        Ok(self.explain_dataset(d)?.iter().map(Explanation::total).collect())
    }

    pub fn predict_proba_dataset(&self, d: &Dataset) -> Result<Vec<f64>> {
        if self.link != LinkFunction::Logistic {
            return Err(Error::LinkMismatch);
        }
        Ok(self.score_dataset(d)?.into_iter().map(sigmoid).collect())
    }

    /// Mean absolute log-odds contribution of every term over `d`, sorted
    /// descending (ties by name).
    pub fn feature_importance(&self, d: &Dataset) -> Result<Vec<Importance>> {
        if d.n_rows() == 0 {
            return Err(Error::Empty("feature importance needs at least one row".into()));
        }
        let explanations = self.explain_dataset(d)?;
        let n_terms = self.shapes.len() + self.interactions.len();
        let mut sums = vec![0.0; n_terms];
        for e in &explanations {
            for (s, (_, v)) in sums.iter_mut().zip(&e.terms) {
                *s += v.abs();
            }
        }
        let names = self
            .shapes
            .iter()
            .map(|s| s.feature.clone())
            .chain(self.interactions.iter().map(InteractionSurface::name));
        let mut out: Vec<Importance> = names
            .zip(sums)
            .map(|(term, s)| Importance {
                term,
                value: s / d.n_rows() as f64,
            })
            .collect();
        out.sort_by(|a, b| b.value.total_cmp(&a.value).then_with(|| a.term.cmp(&b.term)));
        Ok(out)
    }

    /// Copy of the model with the feature's shape and every interaction
    /// involving it set to zero. All other components are untouched.
    pub fn zero_out_feature(&self, feature: &str) -> Result<AdditiveModel> {
        let idx = self
            .shapes
            .iter()
            .position(|s| s.feature == feature)
            .ok_or_else(|| Error::UnknownFeature(feature.to_string()))?;
        let mut out = self.clone();
        out.shapes[idx].values.iter_mut().for_each(|v| *v = 0.0);
        for surface in out.interactions.iter_mut().filter(|s| s.involves(feature)) {
            surface.values.iter_mut().flatten().for_each(|v| *v = 0.0);
        }
        Ok(out)
    }

    pub fn to_document(&self) -> Result<String> {
        let doc = ModelDocumentRef {
            format: MODEL_FORMAT,
            version: MODEL_VERSION,
            model: self,
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Document(e.to_string()))
    }

    pub fn from_document(text: &str) -> Result<AdditiveModel> {
        let value = read_versioned(text, MODEL_FORMAT, MODEL_VERSION)?;
        let model: AdditiveModel =
            serde_json::from_value(value).map_err(|e| Error::Document(e.to_string()))?;
        model.check()?;
        Ok(model)
    }

    /// Every term's feature must be present in `d` with the kind it was
    /// trained on.
    pub fn check_compatible(&self, d: &Dataset) -> Result<()> {
        let mut needed: Vec<(&str, ColumnKind)> = self.shapes.iter().map(|s| (s.feature.as_str(), s.bins.kind())).collect();
        for i in &self.interactions {
            needed.extend(i.axes.iter().map(|a| (a.feature.as_str(), a.bins.kind())));
        }
        for (name, kind) in needed {
            match d.column(name) {
                None => return Err(Error::SchemaMismatch(format!("dataset lacks feature `{name}`"))),
                Some(c) if c.kind() != kind => {
                    return Err(Error::SchemaMismatch(format!("feature `{name}` changed kind")))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    fn check(&self) -> Result<()> {
        for s in &self.shapes {
            let n = s.bins.n_bins();
            if s.values.len() != n || s.stderr.len() != n || s.train_counts.len() != n {
                return Err(Error::Document(format!("shape `{}` does not match its bins", s.feature)));
            }
        }
        for i in &self.interactions {
            let (r, c) = (i.axes[0].n_cells(), i.axes[1].n_cells());
            if i.values.len() != r || i.values.iter().any(|row| row.len() != c) {
                return Err(Error::Document(format!("interaction `{}` grid mismatch", i.name())));
            }
        }
        Ok(())
    }

    /// Delimiter-separated table of one shape: bin, bounds or category,
    /// value, stderr, count. Continuous bins are `(lower, upper]`.
    pub fn shape_table(&self, feature: &str) -> Result<String> {
        let s = self
            .shape(feature)
            .ok_or_else(|| Error::UnknownFeature(feature.to_string()))?;
        let mut out = String::from("bin,lower,upper,category,value,stderr,count\n");
        for i in 0..s.values.len() {
            let (lower, upper, category) = match s.bins.describe_bin(i) {
                BinLabel::Range { lower, upper } => (fmt_edge(lower), fmt_edge(upper), String::new()),
                BinLabel::Category(c) => (String::new(), String::new(), c.to_string()),
                BinLabel::Sentinel => (String::new(), String::new(), "missing".to_string()),
            };
            let _ = writeln!(
                out,
                "{i},{lower},{upper},{category},{},{},{}",
                s.values[i], s.stderr[i], s.train_counts[i]
            );
        }
        Ok(out)
    }
}

fn fmt_edge(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        x.to_string()
    }
}

#[derive(Serialize)]
pub(crate) struct ModelDocumentRef<'a, T: Serialize> {
    pub(crate) format: &'a str,
    pub(crate) version: u32,
    pub(crate) model: &'a T,
}

/// Parses a versioned document and returns its `model` payload.
pub(crate) fn read_versioned(text: &str, format: &str, version: u32) -> Result<serde_json::Value> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::Document("top level is not an object".into()))?;
    match obj.get("format").and_then(|f| f.as_str()) {
        Some(f) if f == format => {}
        Some(f) => return Err(Error::Version(format!("expected format `{format}`, found `{f}`"))),
        None => return Err(Error::Document("missing `format` tag".into())),
    }
    match obj.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(version) => {}
        Some(v) => return Err(Error::Version(format!("version {v} is not supported (expected {version})"))),
        None => return Err(Error::Document("missing `version` tag".into())),
    }
    obj.remove("model")
        .ok_or_else(|| Error::Document("missing `model` body".into()))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::{ColumnData, ColumnSchema, Schema};

    pub(crate) fn cont_bins(cuts: Vec<f64>) -> FeatureBins {
        FeatureBins::Continuous {
            min: cuts.first().copied().unwrap_or(0.0) - 1.0,
            max: cuts.last().copied().unwrap_or(0.0) + 1.0,
            mean: 0.0,
            cuts,
        }
    }

    pub(crate) fn shape(name: &str, cuts: Vec<f64>, values: Vec<f64>) -> ShapeFunction {
        let n = values.len();
        ShapeFunction {
            feature: name.into(),
            bins: cont_bins(cuts),
            stderr: vec![0.0; n],
            train_counts: vec![1; n],
            values,
        }
    }

    /// Two shapes (a: cuts {0}, b: cuts {0}) plus an a×b interaction with one cell per bin.
    fn two_feature_model() -> AdditiveModel {
        let axis = |name: &str| InteractionAxis {
            feature: name.into(),
            bins: cont_bins(vec![0.0]),
            cell_cuts: vec![0],
        };
        AdditiveModel {
            intercept: 0.0,
            link: LinkFunction::Logistic,
            shapes: vec![shape("a", vec![0.0], vec![0.5, -0.3]), shape("b", vec![0.0], vec![-0.2, 0.7])],
            interactions: vec![InteractionSurface {
                axes: [axis("a"), axis("b")],
                values: vec![vec![0.1, -0.1], vec![-0.1, 0.1]],
                train_counts: vec![vec![1, 1], vec![1, 1]],
            }],
            metadata: ModelMetadata::default(),
        }
    }

    fn dataset(a: Vec<f64>, b: Vec<f64>) -> Dataset {
        let n = a.len();
        Dataset::new(
            Schema::new(vec![ColumnSchema::continuous("a"), ColumnSchema::continuous("b")], "y"),
            vec![
                ColumnData::Continuous(a.into_iter().map(Some).collect()),
                ColumnData::Continuous(b.into_iter().map(Some).collect()),
            ],
            vec![0; n],
            None,
        )
        .unwrap()
    }

    #[test]
    fn score_examples() {
        let mut m = AdditiveModel::intercept_only(0.0, LinkFunction::Logistic);
        m.shapes.push(shape("x", vec![1.0, 2.0], vec![1.0, 1.0, 1.0]));
        for v in [-5.0, 1.5, 9.0] {
            assert_eq!(m.score(&[("x", Cell::Num(v))]).unwrap(), 1.0);
        }

        let m = AdditiveModel::intercept_only(-1.0986, LinkFunction::Logistic);
        assert_eq!(m.score(&[]).unwrap(), -1.0986);

        // a <= 0 -> 0.5, b <= 0 -> -0.2, cell (0, 0) -> 0.1
        let m = two_feature_model();
        let s = m.score(&[("a", Cell::Num(-1.0)), ("b", Cell::Num(-1.0))]).unwrap();
        assert!((s - 0.4).abs() < 1e-15);
    }

    #[test]
    fn score_errors_on_absent_continuous_feature() {
        let m = two_feature_model();
        assert!(matches!(m.score(&[("a", Cell::Num(1.0))]), Err(Error::UnknownFeature(_))));
    }

    #[test]
    fn absent_categorical_feature_uses_sentinel() {
        let mut m = AdditiveModel::intercept_only(0.0, LinkFunction::Logistic);
        m.shapes.push(ShapeFunction {
            feature: "c".into(),
            bins: FeatureBins::Categorical { categories: vec![1, 2] },
            values: vec![0.1, 0.2, -0.4],
            stderr: vec![0.0; 3],
            train_counts: vec![1; 3],
        });
        assert_eq!(m.score(&[]).unwrap(), -0.4);
        assert_eq!(m.score(&[("c", Cell::Cat(9))]).unwrap(), -0.4);
        assert_eq!(m.score(&[("c", Cell::Cat(2))]).unwrap(), 0.2);
    }

    #[test]
    fn predict_proba_examples() {
        let p = |s: f64| AdditiveModel::intercept_only(s, LinkFunction::Logistic).predict_proba(&[]).unwrap();
        assert!((p(1.0) - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert_eq!(p(0.0), 0.5);
        assert!((p(-1.0986) - 0.25).abs() < 1e-4);
        let m = AdditiveModel::intercept_only(0.0, LinkFunction::Identity);
        assert!(matches!(m.predict_proba(&[]), Err(Error::LinkMismatch)));
    }

    #[test]
    fn sigmoid_is_strictly_increasing_and_stable() {
        let xs: Vec<f64> = (-400..=400).map(|i| i as f64 * 0.1).collect();
        for w in xs.windows(2) {
            assert!(sigmoid(w[0]) <= sigmoid(w[1]));
        }
        assert!(sigmoid(-30.0) < sigmoid(-29.0));
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((logit(sigmoid(0.3)) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn importance_examples() {
        // contributions +1, +1, -1 -> mean absolute value 1
        let mut m = AdditiveModel::intercept_only(0.0, LinkFunction::Logistic);
        m.shapes.push(shape("a", vec![0.0], vec![-1.0, 1.0]));
        m.shapes.push(shape("b", vec![0.0], vec![0.0, 0.0]));
        let d = dataset(vec![1.0, 2.0, -1.0], vec![0.0, 1.0, 2.0]);
        let imp = m.feature_importance(&d).unwrap();
        assert_eq!(imp[0], Importance { term: "a".into(), value: 1.0 });
        assert_eq!(imp[1], Importance { term: "b".into(), value: 0.0 });

        // Hand enumeration on 4 rows with the two-feature model:
        //   a: -1, 1, 1, -1 -> 0.5, -0.3, -0.3, 0.5 -> mean |.| = 0.4
        //   b: -1, -1, 1, 1 -> -0.2, -0.2, 0.7, 0.7 -> mean |.| = 0.45
        //   cells (0,0) (1,0) (1,1) (0,1) -> 0.1, -0.1, 0.1, -0.1 -> 0.1
        let m = two_feature_model();
        let d = dataset(vec![-1.0, 1.0, 1.0, -1.0], vec![-1.0, -1.0, 1.0, 1.0]);
        let imp = m.feature_importance(&d).unwrap();
        let names: Vec<&str> = imp.iter().map(|i| i.term.as_str()).collect();
        assert_eq!(names, vec!["b", "a", "a & b"]);
        assert!((imp[0].value - 0.45).abs() < 1e-15);
        assert!((imp[1].value - 0.4).abs() < 1e-15);
        assert!((imp[2].value - 0.1).abs() < 1e-15);
    }

    #[test]
    fn importance_rejects_empty_dataset() {
        let m = two_feature_model();
        assert!(matches!(m.feature_importance(&dataset(vec![], vec![])), Err(Error::Empty(_))));
    }

    #[test]
    fn zero_out_examples() {
        let mut m = AdditiveModel::intercept_only(0.2, LinkFunction::Logistic);
        m.shapes.push(shape("a", vec![0.0], vec![0.3, -0.3]));
        m.shapes.push(shape("b", vec![0.0], vec![0.1, 0.4]));
        let z = m.zero_out_feature("a").unwrap();
        let d = dataset(vec![-1.0, 1.0], vec![-1.0, 1.0]);
        let before = m.score_dataset(&d).unwrap();
        let after = z.score_dataset(&d).unwrap();
        assert!((after[0] - (before[0] - 0.3)).abs() < 1e-15);
        assert!((after[1] - (before[1] + 0.3)).abs() < 1e-15);
        assert_eq!(z.shapes[1], m.shapes[1]);
        assert_eq!(z.intercept, m.intercept);

        let zz = z.zero_out_feature("a").unwrap();
        assert_eq!(zz.score_dataset(&d).unwrap(), after);

        let m = two_feature_model();
        let z = m.zero_out_feature("b").unwrap();
        assert!(z.interactions[0].values.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(z.shapes[0], m.shapes[0]);
        assert!(matches!(m.zero_out_feature("zzz"), Err(Error::UnknownFeature(_))));
    }

    #[test]
    fn zero_out_only_moves_that_importance() {
        let m = two_feature_model();
        let d = dataset(vec![-1.0, 1.0, 1.0, -1.0, 3.0], vec![-1.0, -1.0, 1.0, 1.0, 0.0]);
        let before = m.feature_importance(&d).unwrap();
        let after = m.zero_out_feature("a").unwrap().feature_importance(&d).unwrap();
        let get = |v: &[Importance], t: &str| v.iter().find(|i| i.term == t).unwrap().value;
        assert_eq!(get(&after, "a"), 0.0);
        assert_eq!(get(&after, "b"), get(&before, "b"));
    }

    #[test]
    fn document_round_trip_and_errors() {
        let m = two_feature_model();
        let doc = m.to_document().unwrap();
        let back = AdditiveModel::from_document(&doc).unwrap();
        assert_eq!(back, m);

        let bumped = doc.replace("\"version\": 1", "\"version\": 99");
        assert!(matches!(AdditiveModel::from_document(&bumped), Err(Error::Version(_))));
        let other = doc.replace(MODEL_FORMAT, "something.else");
        assert!(matches!(AdditiveModel::from_document(&other), Err(Error::Version(_))));
        let truncated = &doc[..doc.len() / 2];
        assert!(matches!(AdditiveModel::from_document(truncated), Err(Error::Document(_))));
    }

    #[test]
    fn shape_table_lists_every_bin() {
        let m = two_feature_model();
        let t = m.shape_table("a").unwrap();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "bin,lower,upper,category,value,stderr,count");
        assert_eq!(lines[1], "0,-inf,0,,0.5,0,1");
        assert_eq!(lines[2], "1,0,inf,,-0.3,0,1");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::{Rng, SeedableRng};

        fn random_model(seed: u64) -> AdditiveModel {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut m = AdditiveModel::intercept_only(rng.random_range(-3.0..3.0), LinkFunction::Logistic);
            for name in ["a", "b"] {
                let n_cuts = rng.random_range(0..6);
                let mut cuts: Vec<f64> = (0..n_cuts).map(|_| rng.random_range(-2.0..2.0)).collect();
                cuts.sort_by(f64::total_cmp);
                cuts.dedup();
                let values = (0..=cuts.len()).map(|_| rng.random_range(-1.0..1.0) / 3.0).collect();
                m.shapes.push(shape(name, cuts, values));
            }
            let axis = |s: &ShapeFunction| InteractionAxis {
                feature: s.feature.clone(),
                bins: s.bins.clone(),
                cell_cuts: (0..s.bins.n_bins().saturating_sub(1)).step_by(2).collect(),
            };
            let axes = [axis(&m.shapes[0]), axis(&m.shapes[1])];
            let (r, c) = (axes[0].n_cells(), axes[1].n_cells());
            m.interactions.push(InteractionSurface {
                axes,
                values: (0..r).map(|_| (0..c).map(|_| rng.random_range(-0.5..0.5)).collect()).collect(),
                train_counts: vec![vec![1; c]; r],
            });
            m
        }

        proptest! {
            #[test]
            fn serialization_round_trip_is_score_exact(seed in any::<u64>()) {
                let m = random_model(seed);
                let back = AdditiveModel::from_document(&m.to_document().unwrap()).unwrap();
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 1);
                for _ in 0..1000 {
                    let row = [("a", Cell::Num(rng.random_range(-3.0..3.0))), ("b", Cell::Num(rng.random_range(-3.0..3.0)))];
                    prop_assert_eq!(m.score(&row).unwrap().to_bits(), back.score(&row).unwrap().to_bits());
                }
            }

            #[test]
            fn score_equals_decomposition(seed in any::<u64>(), a in -3.0..3.0f64, b in -3.0..3.0f64) {
                let m = random_model(seed);
                let row = [("a", Cell::Num(a)), ("b", Cell::Num(b))];
                let e = m.explain(&row).unwrap();
                let manual = e.intercept + e.terms[0].1 + e.terms[1].1 + e.terms[2].1;
                prop_assert_eq!(m.score(&row).unwrap(), manual);
            }
        }
    }
}
