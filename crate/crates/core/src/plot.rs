//! Minimal SVG emission for shapes, importances, reliability diagrams and
//! sweep results. Output is deterministic text so figures diff cleanly.

use std::fmt::Write;

use crate::data::{BinLabel, FeatureBins};
use crate::metrics::CalibrationReport;
use crate::model::{Importance, ShapeFunction};
use crate::robustness::SweepResult;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN: (f64, f64, f64, f64) = (54.0, 16.0, 30.0, 44.0); // left, right, top, bottom

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn num(x: f64) -> String {
    format!("{:.2}", x)
}

/// Tick label with as few digits as the span needs.
fn tick_label(v: f64, span: f64) -> String {
    let digits = if span >= 10.0 { 0 } else if span >= 1.0 { 1 } else if span >= 0.1 { 2 } else { 3 };
    let s = format!("{v:.digits$}");
    // Values that round to zero would otherwise print as "-0.0".
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// One set of axes. Data coordinates map into a panel of fixed size whose
/// origin is placed by the caller.
struct Panel {
    title: String,
    x_label: String,
    y_label: String,
    x: (f64, f64),
    y: (f64, f64),
    log_x: bool,
    /// Labeled x ticks replacing the numeric ones.
    x_labels: Option<Vec<(f64, String)>>,
    y_ticks: bool,
    body: String,
}

impl Panel {
    fn new(title: &str, x_label: &str, y_label: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            x,
            y,
            log_x: false,
            x_labels: None,
            y_ticks: true,
            body: String::new(),
        }
    }

    fn tx(&self, v: f64) -> f64 {
        let (l, r, _, _) = MARGIN;
        let (a, b, v) = if self.log_x {
            (self.x.0.ln(), self.x.1.ln(), v.ln())
        } else {
            (self.x.0, self.x.1, v)
        };
        l + (v - a) / (b - a) * (PANEL_W - l - r)
    }

    fn ty(&self, v: f64) -> f64 {
        let (_, _, t, b) = MARGIN;
        PANEL_H - b - (v - self.y.0) / (self.y.1 - self.y.0) * (PANEL_H - t - b)
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str, width: f64, dashed: bool) {
        if pts.is_empty() {
            return;
        }
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{},{}", num(self.tx(x)), num(self.ty(y)))).collect();
        let dash = if dashed { r#" stroke-dasharray="5,4""# } else { "" };
        let _ = writeln!(
            self.body,
            r#"<polyline fill="none" stroke="{color}" stroke-width="{width}"{dash} points="{}"/>"#,
            coords.join(" ")
        );
    }

    /// Closed band between `lower` and `upper`, sharing x coordinates.
    fn band(&mut self, xs: &[f64], lower: &[f64], upper: &[f64], color: &str) {
        let mut coords: Vec<String> = xs.iter().zip(upper).map(|(&x, &y)| format!("{},{}", num(self.tx(x)), num(self.ty(y)))).collect();
        coords.extend(xs.iter().zip(lower).rev().map(|(&x, &y)| format!("{},{}", num(self.tx(x)), num(self.ty(y)))));
        let _ = writeln!(self.body, r#"<polygon fill="{color}" fill-opacity="0.2" stroke="none" points="{}"/>"#, coords.join(" "));
    }

    fn point(&mut self, x: f64, y: f64, color: &str) {
        let _ = writeln!(self.body, r#"<circle cx="{}" cy="{}" r="3" fill="{color}"/>"#, num(self.tx(x)), num(self.ty(y)));
    }

    fn rect(&mut self, x0: f64, x1: f64, y0: f64, y1: f64, color: &str) {
        let (a, b) = (self.tx(x0), self.tx(x1));
        let (c, d) = (self.ty(y0), self.ty(y1));
        let _ = writeln!(
            self.body,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{color}"/>"#,
            num(a.min(b)),
            num(c.min(d)),
            num((b - a).abs()),
            num((d - c).abs())
        );
    }

    fn text(&mut self, x: f64, y: f64, s: &str, anchor: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="{anchor}">{}</text>"#,
            num(self.tx(x)),
            num(self.ty(y)),
            esc(s)
        );
    }

    fn legend(&mut self, entries: &[(String, &str)]) {
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = MARGIN.2 + 12.0 + 13.0 * i as f64;
            let x = PANEL_W - MARGIN.1 - 110.0;
            let _ = writeln!(self.body, r#"<rect x="{}" y="{}" width="10" height="3" fill="{color}"/>"#, num(x), num(y - 4.0));
            let _ = writeln!(self.body, r#"<text x="{}" y="{}" font-size="10">{}</text>"#, num(x + 14.0), num(y), esc(label));
        }
    }

    fn x_ticks(&self) -> Vec<f64> {
        if self.log_x {
            let (a, b) = (self.x.0.log10().floor() as i32, self.x.1.log10().ceil() as i32);
            return (a..=b)
                .flat_map(|e| [1.0, 2.0, 5.0].map(|m| m * 10f64.powi(e)))
                .filter(|v| (self.x.0..=self.x.1).contains(v))
                .collect();
        }
        (0..=4).map(|i| self.x.0 + (self.x.1 - self.x.0) * i as f64 / 4.0).collect()
    }

    fn render(&self, ox: f64, oy: f64) -> String {
        let (l, r, t, b) = MARGIN;
        let mut s = String::new();
        let _ = writeln!(s, r#"<g transform="translate({},{})">"#, num(ox), num(oy));
        let _ = writeln!(
            s,
            r##"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
            PANEL_W - l - r,
            PANEL_H - t - b
        );
        let ticks: Vec<(f64, String)> = match &self.x_labels {
            Some(labels) => labels.clone(),
            None => self
                .x_ticks()
                .into_iter()
                .map(|v| (v, if self.log_x { format!("{v}") } else { tick_label(v, self.x.1 - self.x.0) }))
                .collect(),
        };
        for (v, label) in ticks {
            let px = num(self.tx(v));
            let label = esc(&label);
            let _ = writeln!(s, r##"<line x1="{px}" x2="{px}" y1="{}" y2="{}" stroke="#444"/>"##, PANEL_H - b, PANEL_H - b + 4.0);
            let _ = writeln!(s, r#"<text x="{px}" y="{}" font-size="10" text-anchor="middle">{label}</text>"#, PANEL_H - b + 15.0);
        }
        for i in (0..=4).filter(|_| self.y_ticks) {
            let v = self.y.0 + (self.y.1 - self.y.0) * i as f64 / 4.0;
            let py = num(self.ty(v));
            let _ = writeln!(s, r##"<line x1="{}" x2="{l}" y1="{py}" y2="{py}" stroke="#444"/>"##, l - 4.0);
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{py}" font-size="10" text-anchor="end" dominant-baseline="middle">{}</text>"#,
                l - 6.0,
                tick_label(v, self.y.1 - self.y.0)
            );
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#, PANEL_W / 2.0, t - 10.0, esc(&self.title));
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{}</text>"#, (l + PANEL_W - r) / 2.0, PANEL_H - 6.0, esc(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text transform="translate(12,{}) rotate(-90)" font-size="11" text-anchor="middle">{}</text>"#,
            (t + PANEL_H - b) / 2.0,
            esc(&self.y_label)
        );
        s.push_str(&self.body);
        s.push_str("</g>\n");
        s
    }
}

/// Lays panels out row-major, `columns` per row.
fn document(panels: &[Panel], columns: usize) -> String {
    let columns = columns.max(1);
    let rows = panels.len().div_ceil(columns).max(1);
    let (w, h) = (PANEL_W * columns.min(panels.len().max(1)) as f64, PANEL_H * rows as f64);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for (i, p) in panels.iter().enumerate() {
        s.push_str(&p.render(PANEL_W * (i % columns) as f64, PANEL_H * (i / columns) as f64));
    }
    s.push_str("</svg>\n");
    s
}

fn value_range<'a>(values: impl IntoIterator<Item = &'a f64>) -> (f64, f64) {
    values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
}

/// Step outline of a continuous shape over its finite bins. Open-ended edge
/// bins are drawn out to the observed feature range.
fn steps(s: &ShapeFunction, values: &[f64]) -> Vec<(f64, f64)> {
    let FeatureBins::Continuous { min, max, .. } = &s.bins else {
        return Vec::new();
    };
    let mut pts = Vec::new();
    for b in 0..values.len() {
        if let BinLabel::Range { lower, upper } = s.bins.describe_bin(b) {
            let lo = if lower.is_finite() { lower } else { *min };
            let hi = if upper.is_finite() { upper } else { *max };
            if hi >= lo {
                pts.push((lo, values[b]));
                pts.push((hi, values[b]));
            }
        }
    }
    pts
}

fn shape_panel(s: &ShapeFunction) -> Panel {
    let upper: Vec<f64> = s.values.iter().zip(&s.stderr).map(|(v, e)| v + 2.0 * e).collect();
    let lower: Vec<f64> = s.values.iter().zip(&s.stderr).map(|(v, e)| v - 2.0 * e).collect();
    let (ylo, yhi) = value_range(upper.iter().chain(&lower));
    match &s.bins {
        FeatureBins::Continuous { min, max, .. } => {
            let mut p = Panel::new(&s.feature, &s.feature, "log-odds contribution", padded(*min, *max), padded(ylo, yhi));
            let lo = steps(s, &lower);
            let hi = steps(s, &upper);
            let xs: Vec<f64> = lo.iter().map(|q| q.0).collect();
            let (ly, hy): (Vec<f64>, Vec<f64>) = (lo.iter().map(|q| q.1).collect(), hi.iter().map(|q| q.1).collect());
            p.band(&xs, &ly, &hy, PALETTE[0]);
            p.polyline(&steps(s, &s.values), PALETTE[0], 1.8, false);
            p.polyline(&[(p.x.0, 0.0), (p.x.1, 0.0)], "#999", 0.8, true);
            p
        }
        FeatureBins::Categorical { .. } => {
            let n = s.values.len() as f64;
            let mut p = Panel::new(&s.feature, "category", "log-odds contribution", (0.0, n), padded(ylo.min(0.0), yhi.max(0.0)));
            let mut labels = Vec::new();
            for b in 0..s.values.len() {
                let x = b as f64;
                p.rect(x + 0.15, x + 0.85, 0.0, s.values[b], PALETTE[0]);
                p.polyline(&[(x + 0.5, lower[b]), (x + 0.5, upper[b])], "#333", 1.0, false);
                let label = match s.bins.describe_bin(b) {
                    BinLabel::Category(c) => c.to_string(),
                    _ => "missing".into(),
                };
                labels.push((x + 0.5, label));
            }
            p.x_labels = Some(labels);
            p
        }
    }
}

/// Shape function with a two-standard-error band across outer bags.
pub fn shape_svg(s: &ShapeFunction) -> String {
    document(&[shape_panel(s)], 1)
}

/// All shapes of a model in a grid.
pub fn shapes_svg(shapes: &[ShapeFunction], columns: usize) -> String {
    let panels: Vec<Panel> = shapes.iter().map(shape_panel).collect();
    document(&panels, columns)
}

/// Horizontal bars, largest importance on top.
pub fn importance_svg(importances: &[Importance]) -> String {
    let mut sorted: Vec<&Importance> = importances.iter().collect();
    sorted.sort_by(|a, b| b.value.total_cmp(&a.value).then(a.term.cmp(&b.term)));
    let n = sorted.len().max(1) as f64;
    let top = sorted.first().map_or(1.0, |i| i.value.max(1e-12));
    let mut p = Panel::new("feature importance", "mean |contribution|", "", (0.0, top * 1.4), (0.0, n));
    p.y_ticks = false;
    for (i, imp) in sorted.iter().enumerate() {
        let y = n - i as f64;
        p.rect(0.0, imp.value, y - 0.85, y - 0.15, PALETTE[0]);
        p.text(imp.value, y - 0.5, &format!(" {}", imp.term), "start");
    }
    document(&[p], 1)
}

/// Reliability diagram; each labeled report is one series.
pub fn reliability_svg(series: &[(&str, &CalibrationReport)]) -> String {
    let mut p = Panel::new("calibration", "mean predicted", "observed fraction", (0.0, 1.0), (0.0, 1.0));
    let hi = series
        .iter()
        .flat_map(|(_, r)| r.bins.iter())
        .filter(|b| b.count > 0)
        .flat_map(|b| [b.mean_predicted, b.observed])
        .fold(0.0f64, f64::max);
    // Rare-outcome predictions crowd near zero; zoom to the occupied range.
    let top = if hi > 0.0 { (hi * 1.1).min(1.0) } else { 1.0 };
    p.x = (0.0, top);
    p.y = (0.0, top);
    p.polyline(&[(0.0, 0.0), (top, top)], "#999", 1.0, true);
    let mut legend = Vec::new();
    for (i, (label, report)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = report.bins.iter().filter(|b| b.count > 0).map(|b| (b.mean_predicted, b.observed)).collect();
        p.polyline(&pts, color, 1.4, false);
        for &(x, y) in &pts {
            p.point(x, y, color);
        }
        legend.push((label.to_string(), color));
    }
    p.legend(&legend);
    document(&[p], 1)
}

/// One panel per subset size with the full-data reference overlaid, then a
/// final panel of raw distance against size.
pub fn sweep_svg(r: &SweepResult) -> String {
    let mut panels = Vec::new();
    let (ylo, yhi) = value_range(
        r.entries
            .iter()
            .filter_map(|e| e.shape.as_ref())
            .chain(std::iter::once(&r.reference))
            .flat_map(|s| s.values.iter()),
    );
    let y = padded(ylo, yhi);
    let x = match &r.reference.bins {
        FeatureBins::Continuous { min, max, .. } => padded(*min, *max),
        FeatureBins::Categorical { .. } => (0.0, r.reference.values.len() as f64),
    };
    let reference = steps(&r.reference, &r.reference.values);
    for e in &r.entries {
        let title = match e.distance {
            Some(d) => format!("n = {} (d = {d:.3})", e.size),
            None => format!("n = {} (no positives)", e.size),
        };
        let mut p = Panel::new(&title, &r.feature, "log-odds", x, y);
        p.polyline(&reference, "#999", 1.2, true);
        if let Some(s) = &e.shape {
            p.polyline(&steps(s, &s.values), PALETTE[1], 1.6, false);
        }
        panels.push(p);
    }
    panels.push(distance_panel(std::slice::from_ref(r), false));
    document(&panels, 4)
}

fn distance_panel(results: &[SweepResult], normalized: bool) -> Panel {
    let sizes: Vec<f64> = results.iter().flat_map(|r| r.entries.iter().map(|e| e.size as f64)).collect();
    let (lo, hi) = value_range(&sizes);
    let (lo, hi) = if lo.is_finite() { (lo * 0.8, hi * 1.25) } else { (1.0, 10.0) };
    let series: Vec<Vec<(f64, f64)>> = results
        .iter()
        .map(|r| {
            if normalized {
                r.distances().iter().zip(&r.normalized.values).map(|(&(n, _), &v)| (n as f64, v)).collect()
            } else {
                r.distances().iter().map(|&(n, d)| (n as f64, d)).collect()
            }
        })
        .collect();
    let (ylo, yhi) = value_range(series.iter().flatten().map(|p| &p.1));
    let (title, y_label) = if normalized { ("normalized distance", "relative to smallest size") } else { ("distance to reference", "Frechet distance") };
    let mut p = Panel::new(title, "training rows", y_label, (lo, hi), padded(ylo.min(0.0), yhi.max(0.0)));
    p.log_x = true;
    let mut legend = Vec::new();
    for (i, (r, pts)) in results.iter().zip(&series).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        p.polyline(pts, color, 1.4, false);
        for &(x, y) in pts {
            p.point(x, y, color);
        }
        legend.push((format!("seed {}", r.seed), color));
    }
    if results.len() > 1 {
        p.legend(&legend);
    }
    p
}

/// Normalized distance curves of several sweeps (e.g. one per seed).
pub fn normalized_svg(results: &[SweepResult]) -> String {
    document(&[distance_panel(results, false), distance_panel(results, true)], 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{calibration_curve, Binning};

    fn cont_shape() -> ShapeFunction {
        ShapeFunction {
            feature: "a<b".into(),
            bins: FeatureBins::Continuous { cuts: vec![1.0, 2.0], min: 0.0, max: 3.0, mean: 1.5 },
            values: vec![-0.5, 0.1, 0.4],
            stderr: vec![0.05, 0.02, 0.1],
            train_counts: vec![10, 10, 10],
        }
    }

    #[test]
    fn shape_figure_is_well_formed() {
        let svg = shape_svg(&cont_shape());
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("a&lt;b") && !svg.contains("a<b"));
        assert_eq!(svg.matches("<polygon").count(), 1);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
        assert_eq!(svg, shape_svg(&cont_shape()));
    }

    #[test]
    fn categorical_and_importance_figures() {
        let s = ShapeFunction {
            feature: "c".into(),
            bins: FeatureBins::Categorical { categories: vec![1, 2] },
            values: vec![0.0, 0.3, -0.2],
            stderr: vec![0.0; 3],
            train_counts: vec![0, 5, 5],
        };
        let svg = shape_svg(&s);
        assert_eq!(svg.matches("<rect").count(), 1 + 1 + 3);
        let imp = [Importance { term: "x".into(), value: 0.2 }, Importance { term: "y".into(), value: 0.5 }];
        let svg = importance_svg(&imp);
        assert!(svg.find(" y").unwrap() < svg.find(" x<").unwrap());
    }

    #[test]
    fn reliability_figure_has_one_point_per_occupied_bin() {
        let labels = [0, 0, 1, 1, 0, 1];
        let probs = [0.05, 0.15, 0.55, 0.65, 0.1, 0.95];
        let r = calibration_curve(&labels, &probs, 10, Binning::UniformWidth).unwrap();
        let occupied = r.bins.iter().filter(|b| b.count > 0).count();
        let svg = reliability_svg(&[("model", &r)]);
        assert_eq!(svg.matches("<circle").count(), occupied);
    }
}
