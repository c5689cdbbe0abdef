//! Subcommands. Each reads one run config, writes its outputs plus the
//! resolved config into the output directory, and reports errors as a single
//! line on stderr with a nonzero exit status.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::boost::train_with_report;
use crate::config::{RunConfig, RESOLVED_CONFIG_FILE};
use crate::data::{apply_filters, build_bins, discretize, impute, load_csv, ColumnKind, Dataset};
use crate::error::{Error, Result};
use crate::logreg::{fit_dataset, EncodeOptions, LinearModel};
use crate::metrics::{bootstrap_auroc_ci, calibration_curve, log_loss, AurocCi, CalibrationReport};
use crate::model::AdditiveModel;
use crate::plot;
use crate::robustness::{run_sweep, spearman, SweepResult};
use crate::splits::{generate_partitions, group_sizes, materialize_split, GroupInfo};
use crate::synth::{evaluation_seed, generate, standard_spec, SyntheticSpec};

pub const MODEL_FILE: &str = "model.json";
pub const BASELINE_FILE: &str = "baseline.json";

#[derive(Debug, Parser)]
#[command(name = "glassbox", version, about = "Additive models by cyclic boosting, with evaluation and robustness tooling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `paths.out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset path, overriding `paths.data`.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Held-out dataset path, overriding `paths.test_data`.
    #[arg(long, global = true)]
    pub test_data: Option<PathBuf>,
    /// Model document path, overriding `paths.model`.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Load, filter and impute a dataset.
    Ingest,
    /// Enumerate group-level train/test partitions.
    Splits,
    /// Train an additive model (and optionally the logistic baseline).
    Train,
    /// AUROC with bootstrap interval, calibration and log-loss.
    Evaluate,
    /// Per-row contribution breakdowns and importances.
    Explain,
    /// Shape stability against training-set size.
    Sweep,
    /// Write a synthetic dataset with known contributions.
    Synth,
}

/// Parses arguments, runs the command and maps the result to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("glassbox: error: {e}");
            1
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let c = &cli.common;
    if let Some(out) = &c.out {
        cfg.paths.out = out.clone();
    }
    for (flag, slot) in [
        (&c.data, &mut cfg.paths.data),
        (&c.test_data, &mut cfg.paths.test_data),
        (&c.model, &mut cfg.paths.model),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if let Some(t) = c.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // A pool already exists when called twice in one process (tests);
        // the first setting stays in force, which cannot change results.
        if rayon::ThreadPoolBuilder::new().num_threads(t).build_global().is_err() {
            warn!("thread pool already initialized; --threads {t} ignored");
        }
    }
    fs::create_dir_all(&cfg.paths.out).map_err(|e| Error::io(&cfg.paths.out, e))?;
    write(&cfg.paths.out.join(RESOLVED_CONFIG_FILE), &cfg.to_toml()?)?;
    match cli.command {
        Command::Ingest => cmd_ingest(&cfg),
        Command::Splits => cmd_splits(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Evaluate => cmd_evaluate(&cfg),
        Command::Explain => cmd_explain(&cfg),
        Command::Sweep => cmd_sweep(&cfg),
        Command::Synth => cmd_synth(&cfg),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Document(e.to_string()))?;
    write(path, &(text + "\n"))
}

fn write_dataset(path: &Path, d: &Dataset) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    d.write_csv(std::io::BufWriter::new(file))
}

/// File-name-safe form of a feature or term name.
fn slug(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| Error::Config(format!("{what} is required for this command")))
}

/// Loads `path` under the configured schema and applies the filter rules.
fn load_filtered(cfg: &RunConfig, path: &Path) -> Result<(Dataset, crate::data::FilterReport)> {
    let schema = cfg.schema()?;
    let d = load_csv(path, &schema)?;
    apply_filters(&d, &cfg.filters)
}

fn load_data(cfg: &RunConfig, path: &Path) -> Result<Dataset> {
    let (d, report) = load_filtered(cfg, path)?;
    if report.rows_after < report.rows_before {
        info!("{}: {} of {} rows kept after filters", path.display(), report.rows_after, report.rows_before);
    }
    Ok(d)
}

fn cmd_ingest(cfg: &RunConfig) -> Result<()> {
    let path = require(&cfg.paths.data, "paths.data")?;
    let (d, report) = load_filtered(cfg, path)?;
    let missing: Vec<(String, usize)> = d
        .schema()
        .columns
        .iter()
        .zip(d.columns())
        .map(|(s, c)| (s.name.clone(), c.missing_count()))
        .collect();
    let clean = impute(&d)?;
    let out = &cfg.paths.out;
    write_dataset(&out.join("clean.csv"), &clean)?;
    #[derive(Serialize)]
    struct IngestReport<'a> {
        filters: &'a crate::data::FilterReport,
        rows: usize,
        positives: usize,
        missing_before_imputation: Vec<(String, usize)>,
    }
    write_json(
        &out.join("ingest_report.json"),
        &IngestReport {
            filters: &report,
            rows: clean.n_rows(),
            positives: clean.n_positives(),
            missing_before_imputation: missing,
        },
    )
}

#[derive(Deserialize)]
struct RosterRow {
    id: String,
    level: u32,
    #[serde(default)]
    n_samples: Option<u64>,
}

fn roster(cfg: &RunConfig, data: Option<&Dataset>) -> Result<Vec<GroupInfo>> {
    let mut groups = cfg.splits.groups.clone();
    if let Some(path) = &cfg.paths.groups {
        let counts: HashMap<String, u64> = match data {
            Some(d) => group_sizes(d)?.into_iter().collect(),
            None => HashMap::new(),
        };
        let mut reader = csv::Reader::from_path(path)?;
        for row in reader.deserialize() {
            let row: RosterRow = row?;
            let n_samples = match (row.n_samples, counts.get(&row.id)) {
                (_, Some(&n)) => n,
                (Some(n), None) => n,
                (None, None) => {
                    return Err(Error::InvalidArgument(format!(
                        "group `{}` has no sample count and no rows in the data",
                        row.id
                    )))
                }
            };
            groups.push(GroupInfo {
                id: row.id,
                level: row.level,
                n_samples,
            });
        }
    }
    if groups.is_empty() {
        return Err(Error::Config("no groups: set [[splits.groups]] or paths.groups".into()));
    }
    Ok(groups)
}

fn cmd_splits(cfg: &RunConfig) -> Result<()> {
    let data = cfg.paths.data.as_ref().map(|p| load_data(cfg, p)).transpose()?;
    let groups = roster(cfg, data.as_ref())?;
    let search = generate_partitions(&groups, &cfg.splits.search)?;
    if let Some(diag) = &search.diagnostic {
        warn!("no feasible partition: {diag:?}");
    }
    let out = &cfg.paths.out;
    write_json(&out.join("plans.json"), &search)?;
    let mut table = String::from("plan\ttest_fraction\ttrain_groups\ttest_groups\n");
    for (i, p) in search.plans.iter().enumerate() {
        let _ = writeln!(table, "{i}\t{:.6}\t{}\t{}", p.test_fraction, p.train_groups.join(";"), p.test_groups.join(";"));
    }
    write(&out.join("plans.tsv"), &table)?;
    if let Some(d) = &data {
        for (i, p) in search.plans.iter().take(cfg.splits.materialize).enumerate() {
            let (train, test) = materialize_split(d, p)?;
            write_dataset(&out.join(format!("plan_{i}_train.csv")), &train)?;
            write_dataset(&out.join(format!("plan_{i}_test.csv")), &test)?;
        }
    }
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let path = require(&cfg.paths.data, "paths.data")?;
    let d = load_data(cfg, path)?;
    cfg.train.validate()?;
    let bins = build_bins(&d, cfg.train.max_bins)?;
    let binned = discretize(&d, &bins)?;
    info!("training on {} rows ({} positives)", d.n_rows(), d.n_positives());
    let (model, report) = train_with_report(&binned, &cfg.train)?;
    let out = &cfg.paths.out;
    write(&out.join(MODEL_FILE), &model.to_document()?)?;
    write(&out.join("training_log.tsv"), &report.log_lines())?;
    #[derive(Serialize)]
    struct Summary<'a> {
        skipped_features: &'a [String],
        detected_pairs: &'a [crate::boost::PairScore],
        best_rounds: Vec<(usize, usize)>,
    }
    write_json(
        &out.join("training_summary.json"),
        &Summary {
            skipped_features: &report.skipped_features,
            detected_pairs: &report.detected_pairs,
            best_rounds: report.bags.iter().map(|b| (b.best_main_round, b.best_pair_round)).collect(),
        },
    )?;
    write_model_views(&model, &d, out)?;
    if cfg.baseline.enabled {
        let opts = EncodeOptions {
            reference: cfg.baseline.reference.clone(),
        };
        let lm = fit_dataset(&impute(&d)?, &opts, &cfg.baseline.fit)?;
        if !lm.converged {
            warn!("logistic baseline stopped at the iteration cap (gradient {:.3e})", lm.gradient_norm);
        }
        write(&out.join(BASELINE_FILE), &lm.to_document()?)?;
    }
    Ok(())
}

/// Shape tables and figures plus the importance table and chart.
fn write_model_views(model: &AdditiveModel, d: &Dataset, out: &Path) -> Result<()> {
    let shapes_dir = out.join("shapes");
    for s in &model.shapes {
        write(&shapes_dir.join(format!("{}.csv", slug(&s.feature))), &model.shape_table(&s.feature)?)?;
        write(&shapes_dir.join(format!("{}.svg", slug(&s.feature))), &plot::shape_svg(s))?;
    }
    write(&out.join("shapes.svg"), &plot::shapes_svg(&model.shapes, 3))?;
    let importance = model.feature_importance(d)?;
    let mut table = String::from("term\timportance\n");
    for i in &importance {
        let _ = writeln!(table, "{}\t{:.8}", i.term, i.value);
    }
    write(&out.join("importance.tsv"), &table)?;
    write(&out.join("importance.svg"), &plot::importance_svg(&importance))
}

#[derive(Debug, Serialize)]
pub struct ModelReport {
    pub dataset: String,
    pub model: String,
    pub rows: usize,
    pub positives: usize,
    pub auroc: Option<AurocCi>,
    /// Why no AUROC was computed (e.g. a single class).
    pub auroc_error: Option<String>,
    pub log_loss: f64,
    pub max_calibration_gap: Option<f64>,
    pub calibration: CalibrationReport,
}

fn model_report(cfg: &RunConfig, dataset: &str, model: &str, labels: &[u8], probs: &[f64]) -> Result<ModelReport> {
    let m = &cfg.metrics;
    let (auroc, auroc_error) = match bootstrap_auroc_ci(labels, probs, m.resamples, m.alpha, m.seed) {
        Ok(ci) => (Some(ci), None),
        Err(e @ (Error::SingleClass | Error::Empty(_))) => {
            warn!("{dataset}/{model}: {e}");
            (None, Some(e.to_string()))
        }
        Err(e) => return Err(e),
    };
    let calibration = calibration_curve(labels, probs, m.calibration_bins, m.binning)?;
    Ok(ModelReport {
        dataset: dataset.into(),
        model: model.into(),
        rows: labels.len(),
        positives: labels.iter().filter(|&&y| y == 1).count(),
        auroc,
        auroc_error,
        log_loss: log_loss(labels, probs)?,
        max_calibration_gap: calibration.max_gap(m.min_bin_count),
        calibration,
    })
}

fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let out = &cfg.paths.out;
    let model_path = cfg.paths.model.clone().unwrap_or_else(|| out.join(MODEL_FILE));
    let model = AdditiveModel::from_document(&fs::read_to_string(&model_path).map_err(|e| Error::io(&model_path, e))?)?;
    let baseline_path = cfg
        .paths
        .baseline
        .clone()
        .or_else(|| cfg.baseline.enabled.then(|| out.join(BASELINE_FILE)));
    let baseline = match &baseline_path {
        Some(p) => Some(LinearModel::from_document(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?),
        None => None,
    };
    let mut sets = Vec::new();
    if let Some(p) = &cfg.paths.data {
        sets.push(("train", p));
    }
    if let Some(p) = &cfg.paths.test_data {
        sets.push(("test", p));
    }
    if sets.is_empty() {
        return Err(Error::Config("paths.data or paths.test_data is required for this command".into()));
    }
    let mut reports = Vec::new();
    for (label, path) in sets {
        let d = load_data(cfg, path)?;
        model.check_compatible(&d)?;
        let probs = model.predict_proba_dataset(&d)?;
        reports.push(model_report(cfg, label, "gam", d.labels(), &probs)?);
        if let Some(lm) = &baseline {
            let probs = lm.predict_dataset(&impute(&d)?)?;
            reports.push(model_report(cfg, label, "logreg", d.labels(), &probs)?);
        }
        let series: Vec<(&str, &CalibrationReport)> = reports
            .iter()
            .filter(|r| r.dataset == label)
            .map(|r| (r.model.as_str(), &r.calibration))
            .collect();
        write(&out.join(format!("reliability_{label}.svg")), &plot::reliability_svg(&series))?;
    }
    write_json(&out.join("metrics.json"), &reports)?;
    let mut table = String::from("dataset\tmodel\trows\tpositives\tauroc\tci_lower\tci_upper\thalf_width\tstd_dev\tlog_loss\tmax_calibration_gap\n");
    for r in &reports {
        let auroc = match &r.auroc {
            Some(a) => format!("{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}", a.point, a.lower, a.upper, a.half_width, a.std_dev),
            None => "-\t-\t-\t-\t-".into(),
        };
        let gap = r.max_calibration_gap.map_or("-".into(), |g| format!("{g:.6}"));
        let _ = writeln!(table, "{}\t{}\t{}\t{}\t{auroc}\t{:.6}\t{gap}", r.dataset, r.model, r.rows, r.positives, r.log_loss);
    }
    write(&out.join("metrics.tsv"), &table)?;
    for r in &reports {
        if let Some(a) = &r.auroc {
            info!("{} {}: AUROC {:.4} ± {:.4}", r.dataset, r.model, a.point, a.half_width);
        }
    }
    Ok(())
}

fn cmd_explain(cfg: &RunConfig) -> Result<()> {
    let out = &cfg.paths.out;
    let model_path = cfg.paths.model.clone().unwrap_or_else(|| out.join(MODEL_FILE));
    let model = AdditiveModel::from_document(&fs::read_to_string(&model_path).map_err(|e| Error::io(&model_path, e))?)?;
    let path = require(&cfg.paths.data, "paths.data")?;
    let d = load_data(cfg, path)?;
    model.check_compatible(&d)?;
    let rows: Vec<usize> = if cfg.explain.rows.is_empty() {
        (0..d.n_rows().min(cfg.explain.max_rows)).collect()
    } else {
        cfg.explain.rows.clone()
    };
    if let Some(&bad) = rows.iter().find(|&&r| r >= d.n_rows()) {
        return Err(Error::InvalidArgument(format!("row {bad} is out of range ({} rows)", d.n_rows())));
    }
    let subset = d.select_rows(&rows);
    let explanations = model.explain_dataset(&subset)?;
    let mut table = String::from("row\tintercept");
    if let Some(e) = explanations.first() {
        for (name, _) in &e.terms {
            let _ = write!(table, "\t{name}");
        }
    }
    table.push_str("\tscore\tprobability\n");
    for (row, e) in rows.iter().zip(&explanations) {
        let _ = write!(table, "{row}\t{:.8}", e.intercept);
        for (_, v) in &e.terms {
            let _ = write!(table, "\t{v:.8}");
        }
        let total = e.total();
        let _ = writeln!(table, "\t{total:.8}\t{:.8}", crate::model::sigmoid(total));
    }
    write(&out.join("explanations.tsv"), &table)?;
    write_model_views(&model, &d, out)
}

fn cmd_sweep(cfg: &RunConfig) -> Result<()> {
    let path = require(&cfg.paths.data, "paths.data")?;
    let d = load_data(cfg, path)?;
    let s = &cfg.sweep;
    let features: Vec<String> = if s.features.is_empty() {
        d.schema()
            .columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Continuous)
            .map(|c| c.name.clone())
            .collect()
    } else {
        s.features.clone()
    };
    if s.seeds.is_empty() {
        return Err(Error::Config("sweep.seeds must not be empty".into()));
    }
    let mut by_feature: HashMap<String, Vec<SweepResult>> = HashMap::new();
    for &seed in &s.seeds {
        info!("sweep seed {seed}");
        for r in run_sweep(&d, &s.sizes, &cfg.train, &features, s.scaling, seed)? {
            by_feature.entry(r.feature.clone()).or_default().push(r);
        }
    }
    let out = &cfg.paths.out;
    let mut summary = String::from("feature\tseed\tspearman_size_distance\n");
    for f in &features {
        let results = &by_feature[f];
        let mut table = String::from("seed\tsize\tpositives\tdegenerate\tdistance\tnormalized\n");
        for r in results {
            let mut norm = r.normalized.values.iter();
            for e in &r.entries {
                let (dist, nv) = match e.distance {
                    Some(x) => (format!("{x:.8}"), norm.next().map_or("-".into(), |v| format!("{v:.8}"))),
                    None => ("-".into(), "-".into()),
                };
                let _ = writeln!(table, "{}\t{}\t{}\t{}\t{dist}\t{nv}", r.seed, e.size, e.positives, e.degenerate);
            }
            let (sizes, dists): (Vec<f64>, Vec<f64>) = r.distances().iter().map(|&(n, x)| (n as f64, x)).unzip();
            let rho = spearman(&sizes, &dists).map_or("-".into(), |v| format!("{v:.6}"));
            let _ = writeln!(summary, "{f}\t{}\t{rho}", r.seed);
            write(&out.join(format!("sweep_{}_seed{}.svg", slug(f), r.seed)), &plot::sweep_svg(r))?;
        }
        write(&out.join(format!("sweep_{}.tsv", slug(f))), &table)?;
        write(&out.join(format!("sweep_{}_distances.svg", slug(f))), &plot::normalized_svg(results))?;
        write_json(&out.join(format!("sweep_{}.json", slug(f))), results)?;
    }
    write(&out.join("sweep_summary.tsv"), &summary)
}

fn synth_spec(cfg: &RunConfig) -> SyntheticSpec {
    let s = &cfg.synth;
    let spec = s.spec.clone().unwrap_or_else(|| standard_spec(s.n_rows, s.seed));
    if s.no_interaction {
        spec.without_interaction()
    } else {
        spec
    }
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let spec = synth_spec(cfg);
    let (d, _) = generate(&spec)?;
    let out = &cfg.paths.out;
    write_dataset(&out.join("data.csv"), &d)?;
    write(
        &out.join("schema.toml"),
        &toml::to_string(&spec.schema()).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    write_json(&out.join("spec.json"), &spec)?;
    if cfg.synth.holdout_rows > 0 {
        let holdout = SyntheticSpec {
            n_rows: cfg.synth.holdout_rows,
            seed: evaluation_seed(spec.seed),
            ..spec.clone()
        };
        let (t, _) = generate(&holdout)?;
        write_dataset(&out.join("test.csv"), &t)?;
    }
    info!("wrote {} rows ({} positives)", d.n_rows(), d.n_positives());
    Ok(())
}
