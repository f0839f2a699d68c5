//! Single-step evaluation on the held-out bearing, the inner-ring
//! displacement sweep, and report files.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contact::ContactLaw;
use crate::error::{ConfigError, Error, Result};
use crate::geometry::{derived_geometry, roller_nearest, BearingConfig, BearingState, RigidBody2D, Vec2};
use crate::gnn::{gnn_forward, GnnModel};
use crate::graph::{snapshot_to_graph, Graph, NormStats, INNER_NODE, OUTER_NODE};
use crate::simulator::{BearingModel, StepRecord, Trajectory};
use crate::trainer::Checkpoint;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Truth magnitudes below this are too close to zero for a percentage.
pub const MIN_TRUTH_FOR_PERCENT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Inclusive step windows plotted and aggregated.
    pub windows: Vec<[usize; 2]>,
    /// Settled window used for the headline aggregates.
    pub steady_window: [usize; 2],
    /// Inner-ring displacement range of the sweep, mm.
    pub sweep_range: [f64; 2],
    pub sweep_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            windows: vec![[0, 250], [2500, 2750]],
            steady_window: [2000, 2400],
            sweep_range: [-0.05, 0.05],
            sweep_points: 101,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.windows.iter().chain([&self.steady_window]).any(|w| w[0] > w[1]) {
            return Err(ConfigError::invalid("eval.windows", "window start after end"));
        }
        let [lo, hi] = self.sweep_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(ConfigError::invalid("eval.sweep_range", "must be finite with start < end"));
        }
        if self.sweep_points < 2 {
            return Err(ConfigError::invalid("eval.sweep_points", "need at least 2 points"));
        }
        Ok(())
    }

    /// Steps covered by any window, ascending.
    pub fn steps(&self) -> Vec<usize> {
        let mut steps: Vec<usize> = self
            .windows
            .iter()
            .chain([&self.steady_window])
            .flat_map(|&[a, b]| a..=b)
            .collect();
        steps.sort_unstable();
        steps.dedup();
        steps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Entity {
    Roller(usize),
    Inner,
    Outer,
}

impl std::fmt::Display for Entity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Entity::Roller(k) => write!(f, "roller_{k}"),
            Entity::Inner => f.write_str("inner"),
            Entity::Outer => f.write_str("outer"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub trajectory_id: String,
    pub step: usize,
    pub entity: Entity,
    pub pred_force: Vec2,
    pub pred_load: f64,
    pub true_force: Vec2,
    pub true_load: f64,
    pub pct_error: Option<f64>,
    /// Decoded magnitudes on the roller's four edges (roller→inner,
    /// inner→roller, roller→outer, outer→roller); absent for rings.
    pub edge_loads: Option<[f64; 4]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    /// Inner-ring vertical displacement, mm.
    pub displacement: f64,
    /// Total compression of the bottom roller, mm.
    pub deflection: f64,
    pub pred_load: f64,
    pub true_load: f64,
}

/// `100·(pred − truth)/truth`, absent when `|truth|` is below 1 N.
pub fn percentage_error(pred: f64, truth: f64) -> Option<f64> {
    (truth.abs() >= MIN_TRUTH_FOR_PERCENT).then(|| 100.0 * (pred - truth) / truth)
}

fn vec_at(values: &[f64], row: usize) -> Vec2 {
    Vec2::new(values[2 * row], values[2 * row + 1])
}

/// Denormalized `(edge, node)` force predictions for a raw graph.
fn predict(model: &GnnModel, stats: &NormStats, raw: &Graph) -> Result<(Vec<f64>, Vec<f64>)> {
    let g = stats.normalize_graph(raw)?;
    let (e, n) = gnn_forward(model, &g)?;
    Ok(stats.denormalize_predictions(&e, &n)?)
}

fn rows_for_record(model: &GnnModel, stats: &NormStats, config: &BearingConfig, id: &str, record: &StepRecord) -> Result<Vec<EvalRow>> {
    let geom = derived_geometry(config)?;
    let graph = snapshot_to_graph(record, config, &geom, id)?;
    let (edges, nodes) = predict(model, stats, &graph)?;
    let mut rows = Vec::with_capacity(config.n_rollers + 2);
    for (k, roller) in record.rollers.iter().enumerate() {
        let pred = vec_at(&edges, Graph::roller_to_inner_edge(k));
        let edge_loads = [
            Graph::roller_to_inner_edge(k),
            Graph::inner_to_roller_edge(k),
            Graph::roller_to_outer_edge(k),
            Graph::outer_to_roller_edge(k),
        ]
        .map(|e| vec_at(&edges, e).norm());
        let true_load = roller.q_inner.norm();
        rows.push(EvalRow {
            trajectory_id: id.to_string(),
            step: record.step,
            entity: Entity::Roller(k),
            pred_force: pred,
            pred_load: pred.norm(),
            true_force: roller.q_inner,
            true_load,
            pct_error: percentage_error(pred.norm(), true_load),
            edge_loads: Some(edge_loads),
        });
    }
    for (entity, node, truth) in [
        (Entity::Inner, INNER_NODE, record.net_force_inner),
        (Entity::Outer, OUTER_NODE, record.net_force_outer),
    ] {
        let pred = vec_at(&nodes, node);
        rows.push(EvalRow {
            trajectory_id: id.to_string(),
            step: record.step,
            entity,
            pred_force: pred,
            pred_load: pred.norm(),
            true_force: truth,
            true_load: truth.norm(),
            pct_error: percentage_error(pred.norm(), truth.norm()),
            edge_loads: None,
        });
    }
    Ok(rows)
}

/// Scores every recorded step of `trajectory` that lies in `steps`, using
/// the checkpoint's own normalization. Any roller count is accepted.
pub fn single_step_eval(checkpoint: &Checkpoint, trajectory: &Trajectory, steps: &[usize]) -> Result<Vec<EvalRow>> {
    let model = checkpoint.model()?;
    let config = &trajectory.header.config;
    let id = trajectory.id();
    let records: Vec<&StepRecord> = trajectory.records.iter().filter(|r| steps.binary_search(&r.step).is_ok()).collect();
    let per_step: Vec<Result<Vec<EvalRow>>> = records
        .par_iter()
        .map(|r| rows_for_record(&model, &checkpoint.norm_stats, config, &id, r))
        .collect();
    let mut rows = Vec::new();
    for r in per_step {
        rows.extend(r?);
    }
    Ok(rows)
}

/// Outer ring fixed at the origin, inner ring moved to `(0, u)` and both at
/// rest with no external force. The bottom roller's predicted load is
/// compared against the contact law applied to half the compression.
pub fn verification_sweep(checkpoint: &Checkpoint, config: &BearingConfig, range: [f64; 2], n_points: usize) -> Result<Vec<SweepRow>> {
    if n_points < 2 {
        return Err(ConfigError::invalid("eval.sweep_points", "need at least 2 points").into());
    }
    let geom = derived_geometry(config)?;
    if range.iter().any(|u| !(u.abs() < geom.roller_radius)) {
        return Err(ConfigError::invalid("eval.sweep_range", "displacement must be smaller than the roller radius").into());
    }
    let model = checkpoint.model()?;
    let sim = BearingModel::new(config)?;
    let law = ContactLaw::with_constant(config.roller_length, config.contact_constant)?;
    let bottom = roller_nearest(config, -90.0);
    (0..n_points)
        .into_par_iter()
        .map(|i| {
            let u = range[0] + (range[1] - range[0]) * i as f64 / (n_points - 1) as f64;
            let state = BearingState {
                inner: RigidBody2D {
                    position: Vec2::new(0.0, 1e-3 * u),
                    velocity: Vec2::ZERO,
                },
                outer: RigidBody2D::default(),
            };
            let record = sim.record(0, 0.0, state, Vec2::ZERO)?;
            let graph = snapshot_to_graph(&record, config, &geom, "sweep")?;
            let (edges, _) = predict(&model, &checkpoint.norm_stats, &graph)?;
            let deflection = (-u).max(0.0);
            Ok(SweepRow {
                displacement: u,
                deflection,
                pred_load: vec_at(&edges, Graph::roller_to_inner_edge(bottom)).norm(),
                true_load: law.force(deflection / 2.0),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub start: usize,
    pub end: usize,
    pub n_rows: usize,
    pub median_abs_pct_error: Option<f64>,
    pub max_abs_pct_error: Option<f64>,
    pub top_roller_median_abs_pct_error: Option<f64>,
    pub top_roller_max_abs_pct_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadySummary {
    pub start: usize,
    pub end: usize,
    pub top_roller_median_abs_pct_error: Option<f64>,
    /// Largest predicted bottom-roller load in the window, N.
    pub bottom_roller_max_pred_load: Option<f64>,
    /// Largest predicted roller load in the window, N.
    pub peak_pred_load: Option<f64>,
    pub bottom_to_peak_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub n_points: usize,
    /// Over the whole compressive branch with truth ≥ 1 N.
    pub max_rel_deviation: Option<f64>,
    /// Over u ∈ [−0.05, −0.01] mm.
    pub compressive_max_rel_deviation: Option<f64>,
    /// Largest prediction for u ≥ 0 over the prediction at the most negative u.
    pub unloading_max_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub trajectory_id: Option<String>,
    pub top_roller: usize,
    pub bottom_roller: usize,
    pub windows: Vec<WindowSummary>,
    pub steady_state: SteadySummary,
    pub sweep: SweepSummary,
    pub caveats: Vec<String>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn max(v: impl IntoIterator<Item = f64>) -> Option<f64> {
    v.into_iter().max_by(f64::total_cmp)
}

fn abs_errors<'a>(rows: impl Iterator<Item = &'a EvalRow>) -> Vec<f64> {
    rows.filter_map(|r| r.pct_error.map(f64::abs)).collect()
}

fn in_window(r: &EvalRow, [a, b]: [usize; 2]) -> bool {
    (a..=b).contains(&r.step)
}

pub fn summarize(rows: &[EvalRow], sweep: &[SweepRow], config: &EvalConfig, top: usize, bottom: usize) -> Summary {
    let windows = config
        .windows
        .iter()
        .chain([&config.steady_window])
        .map(|&w| {
            let in_w: Vec<&EvalRow> = rows.iter().filter(|r| in_window(r, w)).collect();
            let top_err = abs_errors(in_w.iter().copied().filter(|r| r.entity == Entity::Roller(top)));
            let all_err = abs_errors(in_w.iter().copied());
            WindowSummary {
                start: w[0],
                end: w[1],
                n_rows: in_w.len(),
                median_abs_pct_error: median(all_err.clone()),
                max_abs_pct_error: max(all_err),
                top_roller_median_abs_pct_error: median(top_err.clone()),
                top_roller_max_abs_pct_error: max(top_err),
            }
        })
        .collect();

    let steady: Vec<&EvalRow> = rows.iter().filter(|r| in_window(r, config.steady_window)).collect();
    let bottom_max = max(steady.iter().filter(|r| r.entity == Entity::Roller(bottom)).map(|r| r.pred_load));
    let peak = max(steady.iter().filter(|r| matches!(r.entity, Entity::Roller(_))).map(|r| r.pred_load));
    let steady_state = SteadySummary {
        start: config.steady_window[0],
        end: config.steady_window[1],
        top_roller_median_abs_pct_error: median(abs_errors(steady.iter().copied().filter(|r| r.entity == Entity::Roller(top)))),
        bottom_roller_max_pred_load: bottom_max,
        peak_pred_load: peak,
        bottom_to_peak_ratio: bottom_max.zip(peak).and_then(|(b, p)| (p > 0.0).then(|| b / p)),
    };

    let rel = |r: &SweepRow| (r.pred_load - r.true_load).abs() / r.true_load;
    let compressive = |r: &&SweepRow| r.true_load >= MIN_TRUTH_FOR_PERCENT;
    let deepest = sweep.iter().min_by(|a, b| a.displacement.total_cmp(&b.displacement));
    let sweep_summary = SweepSummary {
        n_points: sweep.len(),
        max_rel_deviation: max(sweep.iter().filter(compressive).map(rel)),
        compressive_max_rel_deviation: max(
            sweep
                .iter()
                .filter(compressive)
                .filter(|r| (-0.05 - 1e-12..=-0.01 + 1e-12).contains(&r.displacement))
                .map(rel),
        ),
        unloading_max_ratio: deepest.and_then(|d| {
            max(sweep.iter().filter(|r| r.displacement >= 0.0).map(|r| r.pred_load))
                .and_then(|m| (d.pred_load > 0.0).then(|| m / d.pred_load))
        }),
    };

    Summary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        trajectory_id: rows.first().map(|r| r.trajectory_id.clone()),
        top_roller: top,
        bottom_roller: bottom,
        windows,
        steady_state,
        sweep: sweep_summary,
        caveats: vec![
            "roller load is the magnitude of the decoded roller-to-inner-ring edge force".into(),
            "sweep graphs use a zero external-force node feature".into(),
            "sweep compares edge-decoded loads, not node-decoded forces".into(),
        ],
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const EVAL_CSV_HEADER: &str = "trajectory_id,step,entity,pred_fx,pred_fy,pred_load,true_fx,true_fy,true_load,pct_error,\
load_roller_inner,load_inner_roller,load_roller_outer,load_outer_roller";

pub const SWEEP_CSV_HEADER: &str = "displacement_mm,deflection_mm,pred_load,true_load";

pub fn eval_rows_csv(rows: &[EvalRow]) -> String {
    let mut out = format!("{EVAL_CSV_HEADER}\n");
    for r in rows {
        let edges = match r.edge_loads {
            Some(e) => e.map(|v| v.to_string()).join(","),
            None => ",,,".to_string(),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.trajectory_id,
            r.step,
            r.entity,
            r.pred_force.x,
            r.pred_force.y,
            r.pred_load,
            r.true_force.x,
            r.true_force.y,
            r.true_load,
            opt(r.pct_error),
            edges
        )
        .unwrap();
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.displacement, r.deflection, r.pred_load, r.true_load).unwrap();
    }
    out
}

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    points: Vec<(f64, f64)>,
}

/// Minimal self-contained line chart, one polyline per series.
fn svg_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const L: f64 = 70.0;
    const R: f64 = 20.0;
    const T: f64 = 40.0;
    const B: f64 = 50.0;
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 == 0.0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 == 0.0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let sy = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0).unwrap();
    writeln!(s, r#"<rect x="{L}" y="{T}" width="{}" height="{}" fill="none" stroke="black"/>"#, W - L - R, H - T - B).unwrap();
    for (v, anchor_y) in [(y0, H - B), (y1, T)] {
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, L - 6.0, anchor_y + 4.0, tick(v)).unwrap();
    }
    for (v, anchor_x) in [(x0, L), (x1, W - R)] {
        writeln!(s, r#"<text x="{anchor_x}" y="{}" text-anchor="middle">{}</text>"#, H - B + 16.0, tick(v)).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, (L + W - R) / 2.0, H - 12.0).unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{y_label}</text>"#,
        (T + H - B) / 2.0,
        (T + H - B) / 2.0
    )
    .unwrap();
    for (i, ser) in series.iter().enumerate() {
        let coords: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        writeln!(s, r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#, ser.color, coords.join(" ")).unwrap();
        let ly = T + 16.0 + 16.0 * i as f64;
        writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/>"#, W - R - 150.0, W - R - 130.0, ser.color).unwrap();
        writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, W - R - 124.0, ly + 4.0, ser.label).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn series_for(rows: &[EvalRow], entity: Entity, [a, b]: [usize; 2], value: impl Fn(&EvalRow) -> Option<f64>) -> Vec<(f64, f64)> {
    rows.iter()
        .filter(|r| r.entity == entity && (a..=b).contains(&r.step))
        .filter_map(|r| value(r).map(|v| (r.step as f64, v)))
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_summary(summary: &Summary, out_dir: &Path) -> Result<()> {
    let path = out_dir.join("summary.json");
    let json = serde_json::to_string_pretty(summary).map_err(|e| Error::format(&path, e))?;
    write_file(&path, &(json + "\n"))
}

fn write_sweep_plot(sweep: &[SweepRow], bottom: usize, out_dir: &Path) -> Result<()> {
    let sweep_svg = svg_plot(
        &format!("Roller {bottom} load under inner-ring displacement"),
        "displacement (mm)",
        "load (N)",
        &[
            Series { label: "predicted", color: "#d62728", points: sweep.iter().map(|r| (r.displacement, r.pred_load)).collect() },
            Series { label: "truth", color: "#1f77b4", points: sweep.iter().map(|r| (r.displacement, r.true_load)).collect() },
        ],
    );
    write_file(&out_dir.join("sweep.svg"), &sweep_svg)
}

/// Sweep-only report: `sweep.csv`, `sweep.svg` and a `summary.json` whose
/// single-step aggregates are null.
pub fn emit_sweep_report(sweep: &[SweepRow], config: &EvalConfig, top: usize, bottom: usize, out_dir: &Path) -> Result<Summary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(&out_dir.join("sweep.csv"), &sweep_csv(sweep))?;
    let summary = summarize(&[], sweep, config, top, bottom);
    write_summary(&summary, out_dir)?;
    write_sweep_plot(sweep, bottom, out_dir)?;
    Ok(summary)
}

/// Writes `eval_rows.csv`, `sweep.csv`, `summary.json` and SVG plots.
pub fn emit_report(rows: &[EvalRow], sweep: &[SweepRow], config: &EvalConfig, top: usize, bottom: usize, out_dir: &Path) -> Result<Summary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(&out_dir.join("eval_rows.csv"), &eval_rows_csv(rows))?;
    write_file(&out_dir.join("sweep.csv"), &sweep_csv(sweep))?;
    let summary = summarize(rows, sweep, config, top, bottom);
    write_summary(&summary, out_dir)?;

    for &w in config.windows.iter().chain([&config.steady_window]) {
        let name = format!("window_{}_{}", w[0], w[1]);
        let loads = svg_plot(
            &format!("Roller loads, steps {}-{}", w[0], w[1]),
            "time step",
            "load (N)",
            &[
                Series { label: &format!("roller {top} predicted"), color: "#d62728", points: series_for(rows, Entity::Roller(top), w, |r| Some(r.pred_load)) },
                Series { label: &format!("roller {top} truth"), color: "#1f77b4", points: series_for(rows, Entity::Roller(top), w, |r| Some(r.true_load)) },
                Series { label: &format!("roller {bottom} predicted"), color: "#ff7f0e", points: series_for(rows, Entity::Roller(bottom), w, |r| Some(r.pred_load)) },
                Series { label: &format!("roller {bottom} truth"), color: "#2ca02c", points: series_for(rows, Entity::Roller(bottom), w, |r| Some(r.true_load)) },
            ],
        );
        write_file(&out_dir.join(format!("{name}_loads.svg")), &loads)?;
        let error = svg_plot(
            &format!("Roller {top} percentage error, steps {}-{}", w[0], w[1]),
            "time step",
            "error (%)",
            &[Series { label: "error", color: "#d62728", points: series_for(rows, Entity::Roller(top), w, |r| r.pct_error) }],
        );
        write_file(&out_dir.join(format!("{name}_error.svg")), &error)?;
    }
    write_sweep_plot(sweep, bottom, out_dir)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentage_error_cases() {
        assert!((percentage_error(110.0, 100.0).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(percentage_error(5.0, 5.0), Some(0.0));
        assert_eq!(percentage_error(3.0, 0.2), None);
        assert_eq!(percentage_error(3.0, -0.999), None);
        assert!((percentage_error(-90.0, -100.0).unwrap() + 10.0).abs() < 1e-12);
    }

    fn row(step: usize, entity: Entity, pred: f64, truth: f64) -> EvalRow {
        EvalRow {
            trajectory_id: "n15_f13000".into(),
            step,
            entity,
            pred_force: Vec2::new(0.0, pred),
            pred_load: pred.abs(),
            true_force: Vec2::new(0.0, truth),
            true_load: truth.abs(),
            pct_error: percentage_error(pred.abs(), truth.abs()),
            edge_loads: matches!(entity, Entity::Roller(_)).then_some([pred.abs(), pred.abs(), 0.5, 0.25]),
        }
    }

    #[test]
    fn csv_matches_fixture() {
        let rows = [
            row(0, Entity::Roller(8), 110.0, 100.0),
            row(0, Entity::Roller(0), 2.5, 0.0),
            row(1, Entity::Outer, -3.0, 4.0),
        ];
        let expected = "\
trajectory_id,step,entity,pred_fx,pred_fy,pred_load,true_fx,true_fy,true_load,pct_error,load_roller_inner,load_inner_roller,load_roller_outer,load_outer_roller
n15_f13000,0,roller_8,0,110,110,0,100,100,10,110,110,0.5,0.25
n15_f13000,0,roller_0,0,2.5,2.5,0,0,0,,2.5,2.5,0.5,0.25
n15_f13000,1,outer,0,-3,3,0,4,4,-25,,,,
";
        assert_eq!(eval_rows_csv(&rows), expected);
    }

    #[test]
    fn empty_inputs_give_headers_and_null_aggregates() {
        let dir = std::env::temp_dir().join(format!("empty_report_{}", std::process::id()));
        emit_report(&[], &[], &EvalConfig::default(), 8, 0, &dir).unwrap();
        assert_eq!(std::fs::read_to_string(dir.join("eval_rows.csv")).unwrap(), format!("{EVAL_CSV_HEADER}\n"));
        assert_eq!(std::fs::read_to_string(dir.join("sweep.csv")).unwrap(), format!("{SWEEP_CSV_HEADER}\n"));
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
        assert!(json["windows"][0]["median_abs_pct_error"].is_null());
        assert!(json["steady_state"]["bottom_to_peak_ratio"].is_null());
        assert!(json["sweep"]["max_rel_deviation"].is_null());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn sweep_svg_has_two_polylines() {
        let dir = std::env::temp_dir().join(format!("sweep_svg_{}", std::process::id()));
        let sweep: Vec<SweepRow> = (0..5)
            .map(|i| SweepRow {
                displacement: -0.05 + 0.025 * i as f64,
                deflection: 0.0,
                pred_load: i as f64,
                true_load: 0.0,
            })
            .collect();
        emit_report(&[], &sweep, &EvalConfig::default(), 8, 0, &dir).unwrap();
        let svg = std::fs::read_to_string(dir.join("sweep.svg")).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(!svg.contains("href"));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn summary_aggregates() {
        let config = EvalConfig {
            windows: vec![[0, 10]],
            steady_window: [20, 30],
            ..EvalConfig::default()
        };
        let rows = [
            row(0, Entity::Roller(8), 170.0, 100.0),
            row(5, Entity::Roller(8), 105.0, 100.0),
            row(20, Entity::Roller(8), 102.0, 100.0),
            row(21, Entity::Roller(8), 96.0, 100.0),
            row(22, Entity::Roller(8), 101.0, 100.0),
            row(21, Entity::Roller(0), 4.0, 0.0),
        ];
        let s = summarize(&rows, &[], &config, 8, 0);
        assert_eq!(s.windows[0].top_roller_median_abs_pct_error, Some(37.5));
        assert_eq!(s.windows[0].top_roller_max_abs_pct_error, Some(70.0));
        assert_eq!(s.steady_state.top_roller_median_abs_pct_error, Some(2.0));
        assert_eq!(s.steady_state.bottom_to_peak_ratio, Some(4.0 / 102.0));
    }

    #[test]
    fn steps_cover_windows_once() {
        let steps = EvalConfig::default().steps();
        assert_eq!(steps.len(), 251 + 251 + 401);
        assert!(steps.windows(2).all(|w| w[0] < w[1]));
    }
}
