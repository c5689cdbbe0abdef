//! Train/test partitions of whole groups under a sample-fraction window and
//! per-level coverage on both sides.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, DOMAIN_SPLITS};

/// Group counts up to this size are searched exhaustively.
pub const EXHAUSTIVE_LIMIT: usize = 22;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupInfo {
    pub id: String,
    pub level: u32,
    pub n_samples: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub train_groups: Vec<String>,
    pub test_groups: Vec<String>,
    /// Share of samples on the test side.
    pub test_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub target_test_frac: f64,
    pub tol: f64,
    pub min_per_level_per_side: usize,
    /// Cap on returned plans; `None` returns every plan found.
    pub max_plans: Option<usize>,
    /// Random assignments tried when there are too many groups to enumerate.
    pub max_candidates: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            target_test_frac: 0.25,
            tol: 0.03,
            min_per_level_per_side: 2,
            max_plans: None,
            max_candidates: 100_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitDiagnostic {
    /// No assignment can satisfy the constraints.
    Infeasible { reason: String },
    /// Constraints may be satisfiable but the randomized search found nothing.
    SearchExhausted { candidates: usize },
    /// Every assignment was enumerated and none fits the fraction window.
    NoneInWindow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSearch {
    pub plans: Vec<PartitionPlan>,
    pub exhaustive: bool,
    pub diagnostic: Option<SplitDiagnostic>,
}

/// Sample counts per group id, in order of first appearance.
pub fn group_sizes(d: &Dataset) -> Result<Vec<(String, u64)>> {
    let ids = d
        .group_id()
        .ok_or_else(|| Error::InvalidArgument("dataset has no group column".into()))?;
    let mut order: Vec<String> = Vec::new();
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for id in ids {
        let c = counts.entry(id).or_insert(0);
        if *c == 0 {
            order.push(id.clone());
        }
        *c += 1;
    }
    Ok(order.into_iter().map(|id| {
        let n = counts[id.as_str()];
        (id, n)
    }).collect())
}

fn validate(groups: &[GroupInfo], cfg: &SplitConfig) -> Result<()> {
    let mut seen = HashSet::new();
    for g in groups {
        if g.n_samples == 0 {
            return Err(Error::InvalidArgument(format!("group `{}` has no samples", g.id)));
        }
        if !seen.insert(&g.id) {
            return Err(Error::InvalidArgument(format!("group `{}` is listed twice", g.id)));
        }
    }
    if !(cfg.target_test_frac > 0.0 && cfg.target_test_frac < 1.0) {
        return Err(Error::Config("target_test_frac must be in (0, 1)".into()));
    }
    if !(cfg.tol >= 0.0) {
        return Err(Error::Config("tol must be nonnegative".into()));
    }
    Ok(())
}

fn infeasibility(groups: &[GroupInfo], cfg: &SplitConfig) -> Option<String> {
    if groups.len() < 2 {
        return Some("at least two groups are needed for a split".into());
    }
    let mut per_level: BTreeMap<u32, usize> = BTreeMap::new();
    for g in groups {
        *per_level.entry(g.level).or_insert(0) += 1;
    }
    let need = 2 * cfg.min_per_level_per_side;
    let short: Vec<String> = per_level
        .iter()
        .filter(|(_, &c)| c < need)
        .map(|(l, c)| format!("level {l} has {c}"))
        .collect();
    (!short.is_empty()).then(|| {
        format!(
            "{} {} group(s) per level are needed ({} per side); {}",
            need,
            "or more",
            cfg.min_per_level_per_side,
            short.join(", ")
        )
    })
}

/// Checks one assignment (`true` = test). Returns the test fraction when
/// all constraints hold.
fn evaluate(groups: &[GroupInfo], test: &[bool], levels: &[u32], cfg: &SplitConfig, total: u64) -> Option<f64> {
    let n_test = test.iter().filter(|&&t| t).count();
    if n_test == 0 || n_test == groups.len() {
        return None;
    }
    for &level in levels {
        let (mut tr, mut te) = (0, 0);
        for (g, &t) in groups.iter().zip(test) {
            if g.level == level {
                if t {
                    te += 1;
                } else {
                    tr += 1;
                }
            }
        }
        if tr < cfg.min_per_level_per_side || te < cfg.min_per_level_per_side {
            return None;
        }
    }
    let test_n: u64 = groups.iter().zip(test).filter(|(_, &t)| t).map(|(g, _)| g.n_samples).sum();
    let frac = test_n as f64 / total as f64;
    ((frac - cfg.target_test_frac).abs() <= cfg.tol + 1e-12).then_some(frac)
}

fn plan(groups: &[GroupInfo], test: &[bool], frac: f64) -> PartitionPlan {
    let pick = |side: bool| {
        groups
            .iter()
            .zip(test)
            .filter(|(_, &t)| t == side)
            .map(|(g, _)| g.id.clone())
            .collect()
    };
    PartitionPlan {
        train_groups: pick(false),
        test_groups: pick(true),
        test_fraction: frac,
    }
}

/// All (or up to `max_plans`) partitions meeting the constraints. Up to
/// [`EXHAUSTIVE_LIMIT`] groups every assignment is enumerated in ascending
/// bitmask order (bit `i` set = group `i` in test); beyond that a seeded
/// random search draws `max_candidates` assignments and keeps distinct hits.
pub fn generate_partitions(groups: &[GroupInfo], cfg: &SplitConfig) -> Result<SplitSearch> {
    validate(groups, cfg)?;
    let exhaustive = groups.len() <= EXHAUSTIVE_LIMIT;
    if let Some(reason) = infeasibility(groups, cfg) {
        return Ok(SplitSearch {
            plans: Vec::new(),
            exhaustive,
            diagnostic: Some(SplitDiagnostic::Infeasible { reason }),
        });
    }
    let levels: Vec<u32> = groups.iter().map(|g| g.level).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let total: u64 = groups.iter().map(|g| g.n_samples).sum();
    let cap = cfg.max_plans.unwrap_or(usize::MAX);
    let mut plans = Vec::new();
    let mut test = vec![false; groups.len()];

    if exhaustive {
        for mask in 0u64..(1u64 << groups.len()) {
            if plans.len() >= cap {
                break;
            }
            for (i, t) in test.iter_mut().enumerate() {
                *t = mask >> i & 1 == 1;
            }
            if let Some(frac) = evaluate(groups, &test, &levels, cfg, total) {
                plans.push(plan(groups, &test, frac));
            }
        }
        let diagnostic = plans.is_empty().then_some(SplitDiagnostic::NoneInWindow);
        return Ok(SplitSearch {
            plans,
            exhaustive,
            diagnostic,
        });
    }

    let mut rng = stream_rng(cfg.seed, DOMAIN_SPLITS, 0);
    let mut seen: HashSet<Vec<bool>> = HashSet::new();
    for _ in 0..cfg.max_candidates {
        if plans.len() >= cap {
            break;
        }
        for t in test.iter_mut() {
            *t = rng.random_bool(cfg.target_test_frac);
        }
        if seen.contains(&test) {
            continue;
        }
        if let Some(frac) = evaluate(groups, &test, &levels, cfg, total) {
            seen.insert(test.clone());
            plans.push(plan(groups, &test, frac));
        }
    }
    let diagnostic = plans.is_empty().then_some(SplitDiagnostic::SearchExhausted {
        candidates: cfg.max_candidates,
    });
    Ok(SplitSearch {
        plans,
        exhaustive,
        diagnostic,
    })
}

/// Routes rows to (train, test) by group membership.
pub fn materialize_split(d: &Dataset, plan: &PartitionPlan) -> Result<(Dataset, Dataset)> {
    let ids = d
        .group_id()
        .ok_or_else(|| Error::InvalidArgument("dataset has no group column".into()))?;
    let side: HashMap<&str, bool> = plan
        .train_groups
        .iter()
        .map(|g| (g.as_str(), false))
        .chain(plan.test_groups.iter().map(|g| (g.as_str(), true)))
        .collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (row, id) in ids.iter().enumerate() {
        match side.get(id.as_str()) {
            Some(false) => train.push(row),
            Some(true) => test.push(row),
            None => {
                return Err(Error::UnplannedGroup {
                    row,
                    group: id.clone(),
                })
            }
        }
    }
    Ok((d.select_rows(&train), d.select_rows(&test)))
}
