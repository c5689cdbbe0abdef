//! Datasets drawn from a known additive logistic model.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnData, ColumnSchema, Dataset, Schema};
use crate::error::{Error, Result};
use crate::metrics::auroc;
use crate::model::sigmoid;
use crate::rng::{stream_rng, DOMAIN_SYNTH};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, std: f64 },
    /// Integer codes `0..weights.len()` drawn with the given relative weights.
    Categorical { weights: Vec<f64> },
}

/// True log-odds contribution of one feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Contribution {
    Zero,
    Linear { slope: f64 },
    /// `low` for x ≤ at, `high` above.
    Step { at: f64, low: f64, high: f64 },
    VShape { center: f64, slope: f64 },
    /// amplitude · tanh(x / scale)
    Saturating { amplitude: f64, scale: f64 },
    CategoryOffsets { offsets: Vec<f64> },
}

impl Contribution {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Contribution::Zero => 0.0,
            Contribution::Linear { slope } => slope * x,
            Contribution::Step { at, low, high } => {
                if x <= *at {
                    *low
                } else {
                    *high
                }
            }
            Contribution::VShape { center, slope } => slope * (x - center).abs(),
            Contribution::Saturating { amplitude, scale } => amplitude * (x / scale).tanh(),
            Contribution::CategoryOffsets { offsets } => offsets[x as usize],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticFeature {
    pub name: String,
    pub generator: Generator,
    pub contribution: Contribution,
}

/// ±strength depending on whether exactly one of the two features lies
/// above its threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XorInteraction {
    pub a: String,
    pub a_threshold: f64,
    pub b: String,
    pub b_threshold: f64,
    pub strength: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub features: Vec<SyntheticFeature>,
    pub intercept: f64,
    #[serde(default)]
    pub interaction: Option<XorInteraction>,
    pub n_rows: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.features.is_empty() {
            return fail("synthetic spec has no features".into());
        }
        if !self.intercept.is_finite() {
            return fail("synthetic intercept must be finite".into());
        }
        for (i, f) in self.features.iter().enumerate() {
            if f.name.is_empty() || f.name == "y" || self.features[..i].iter().any(|g| g.name == f.name) {
                return fail(format!("feature name `{}` is empty, reserved or repeated", f.name));
            }
            match &f.generator {
                Generator::Uniform { low, high } if !(low.is_finite() && high.is_finite() && low < high) => {
                    return fail(format!("`{}`: uniform needs finite low < high", f.name));
                }
                Generator::Normal { mean, std } if !(mean.is_finite() && *std > 0.0 && std.is_finite()) => {
                    return fail(format!("`{}`: normal needs a finite mean and positive std", f.name));
                }
                Generator::Categorical { weights } if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || weights.iter().sum::<f64>() <= 0.0 => {
                    return fail(format!("`{}`: categorical weights must be nonnegative with a positive sum", f.name));
                }
                _ => {}
            }
            let categorical = matches!(f.generator, Generator::Categorical { .. });
            match (&f.contribution, &f.generator) {
                (Contribution::CategoryOffsets { offsets }, Generator::Categorical { weights }) => {
                    if offsets.len() != weights.len() || offsets.iter().any(|o| !o.is_finite()) {
                        return fail(format!("`{}`: one finite offset per category required", f.name));
                    }
                }
                (Contribution::CategoryOffsets { .. }, _) => {
                    return fail(format!("`{}`: category offsets need a categorical generator", f.name));
                }
                (Contribution::Zero, _) => {}
                (_, _) if categorical => {
                    return fail(format!("`{}`: categorical features take zero or category offsets", f.name));
                }
                _ => {}
            }
        }
        if let Some(x) = &self.interaction {
            for name in [&x.a, &x.b] {
                if self.index(name).is_none() {
                    return fail(format!("interaction references unknown feature `{name}`"));
                }
            }
            if x.a == x.b {
                return fail("interaction needs two distinct features".into());
            }
        }
        Ok(())
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn schema(&self) -> Schema {
        let columns = self
            .features
            .iter()
            .map(|f| match f.generator {
                Generator::Categorical { .. } => ColumnSchema::categorical(&f.name),
                _ => ColumnSchema::continuous(&f.name),
            })
            .collect();
        Schema::new(columns, "y")
    }

    /// The same spec without its interaction term.
    pub fn without_interaction(&self) -> SyntheticSpec {
        SyntheticSpec {
            interaction: None,
            ..self.clone()
        }
    }
}

/// Evaluates the generating log-odds.
#[derive(Clone, Debug)]
pub struct TrueScore {
    spec: SyntheticSpec,
    interaction: Option<(usize, usize)>,
}

impl TrueScore {
    fn new(spec: &SyntheticSpec) -> Self {
        let interaction = spec
            .interaction
            .as_ref()
            .map(|x| (spec.index(&x.a).expect("validated"), spec.index(&x.b).expect("validated")));
        Self {
            spec: spec.clone(),
            interaction,
        }
    }

    /// Contribution of feature `name` at `x` (a category code for categorical features).
    pub fn contribution(&self, name: &str, x: f64) -> Option<f64> {
        self.spec.index(name).map(|i| self.spec.features[i].contribution.eval(x))
    }

    pub fn interaction_term(&self, row: &[f64]) -> f64 {
        match (&self.spec.interaction, self.interaction) {
            (Some(x), Some((a, b))) => {
                if (row[a] > x.a_threshold) != (row[b] > x.b_threshold) {
                    x.strength
                } else {
                    -x.strength
                }
            }
            _ => 0.0,
        }
    }

    /// Log-odds of a row given as one value per spec feature, in spec order.
    pub fn score(&self, row: &[f64]) -> f64 {
        let mains: f64 = self
            .spec
            .features
            .iter()
            .zip(row)
            .map(|(f, &x)| f.contribution.eval(x))
            .sum();
        self.spec.intercept + mains + self.interaction_term(row)
    }

    /// Log-odds of every row of a dataset whose columns carry the generator's feature names.
    pub fn score_dataset(&self, d: &Dataset) -> Result<Vec<f64>> {
        let cols: Vec<&ColumnData> = self
            .spec
            .features
            .iter()
            .map(|f| d.column(&f.name).ok_or_else(|| Error::UnknownColumn(f.name.clone())))
            .collect::<Result<_>>()?;
        let mut row = vec![0.0; cols.len()];
        (0..d.n_rows())
            .map(|i| {
                for (slot, col) in row.iter_mut().zip(&cols) {
                    *slot = match col {
                        ColumnData::Continuous(v) => v[i],
                        ColumnData::Categorical(v) => v[i].map(|c| c as f64),
                    }
                    .ok_or_else(|| Error::NotImputed(format!("row {i}")))?;
                }
                Ok(self.score(&row))
            })
            .collect()
    }
}

enum Sampler {
    Uniform(f64, f64),
    Normal(Normal<f64>),
    Categorical(WeightedIndex<f64>),
}

impl Sampler {
    fn new(g: &Generator) -> Self {
        match g {
            Generator::Uniform { low, high } => Sampler::Uniform(*low, *high),
            Generator::Normal { mean, std } => Sampler::Normal(Normal::new(*mean, *std).expect("validated")),
            Generator::Categorical { weights } => Sampler::Categorical(WeightedIndex::new(weights).expect("validated")),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Sampler::Uniform(lo, hi) => rng.random_range(*lo..*hi),
            Sampler::Normal(n) => n.sample(rng),
            Sampler::Categorical(w) => w.sample(rng) as f64,
        }
    }
}

/// Draws `spec.n_rows` rows. Row `i` uses its own RNG stream, so the data
/// are identical however rows are scheduled.
pub fn generate(spec: &SyntheticSpec) -> Result<(Dataset, TrueScore)> {
    spec.validate()?;
    let truth = TrueScore::new(spec);
    let samplers: Vec<Sampler> = spec.features.iter().map(|f| Sampler::new(&f.generator)).collect();
    let rows: Vec<(Vec<f64>, u8)> = (0..spec.n_rows)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(spec.seed, DOMAIN_SYNTH, i as u64);
            let row: Vec<f64> = samplers.iter().map(|s| s.sample(&mut rng)).collect();
            let y = u8::from(rng.random::<f64>() < sigmoid(truth.score(&row)));
            (row, y)
        })
        .collect();
    let columns = spec
        .features
        .iter()
        .enumerate()
        .map(|(j, f)| match f.generator {
            Generator::Categorical { .. } => ColumnData::Categorical(rows.iter().map(|(r, _)| Some(r[j] as i64)).collect()),
            _ => ColumnData::Continuous(rows.iter().map(|(r, _)| Some(r[j])).collect()),
        })
        .collect();
    let labels = rows.iter().map(|(_, y)| *y).collect();
    Ok((Dataset::new(spec.schema(), columns, labels, None)?, truth))
}

/// Seed of the evaluation sample paired with a spec seed.
pub fn evaluation_seed(seed: u64) -> u64 {
    seed ^ 0x6576_616c_7561_7465
}

/// AUROC of the true score on a fresh sample of `n_eval` rows.
pub fn bayes_auroc(spec: &SyntheticSpec, n_eval: usize) -> Result<f64> {
    let fresh = SyntheticSpec {
        n_rows: n_eval,
        seed: evaluation_seed(spec.seed),
        ..spec.clone()
    };
    let (d, truth) = generate(&fresh)?;
    auroc(d.labels(), &truth.score_dataset(&d)?)
}

/// Five continuous features with linear, step, V-shaped, saturating and
/// zero contributions, one four-level categorical, and an XOR between the
/// zero-effect feature and the V-shaped one. Positive rate is about 3%.
///
/// Both XOR thresholds sit at centers of symmetry (a symmetric generator
/// with a zero or even contribution), so the XOR leaves every main effect
/// untouched even on the logistic scale.
pub fn standard_spec(n_rows: usize, seed: u64) -> SyntheticSpec {
    let f = |name: &str, generator, contribution| SyntheticFeature {
        name: name.into(),
        generator,
        contribution,
    };
    SyntheticSpec {
        features: vec![
            f("lin", Generator::Uniform { low: -2.0, high: 2.0 }, Contribution::Linear { slope: 0.5 }),
            f("step", Generator::Uniform { low: 0.0, high: 10.0 }, Contribution::Step { at: 5.0, low: -0.5, high: 0.5 }),
            f("vee", Generator::Normal { mean: 0.0, std: 1.0 }, Contribution::VShape { center: 0.0, slope: 0.6 }),
            f("sat", Generator::Uniform { low: -3.0, high: 3.0 }, Contribution::Saturating { amplitude: 0.8, scale: 1.0 }),
            f("null", Generator::Uniform { low: -1.0, high: 1.0 }, Contribution::Zero),
            f(
                "cat",
                Generator::Categorical { weights: vec![1.0; 4] },
                Contribution::CategoryOffsets { offsets: vec![-0.4, 0.0, 0.3, 0.6] },
            ),
        ],
        intercept: STANDARD_INTERCEPT,
        interaction: Some(XorInteraction {
            a: "null".into(),
            a_threshold: 0.0,
            b: "vee".into(),
            b_threshold: 0.0,
            strength: 0.5,
        }),
        n_rows,
        seed,
    }
}

pub const STANDARD_INTERCEPT: f64 = -4.75;
