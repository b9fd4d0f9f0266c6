//! SVG figures from curve and trajectory CSVs.

use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;

use crate::env::record::{read_trajectory_csv, TrajectoryRow};
use crate::error::{Error, Result};

const SIZE: (u32, u32) = (800, 600);
/// Stroke width of data lines; axes and ticks are drawn at width 1.
pub const PATH_STROKE: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    LearningCurve,
    Trajectory,
    FormationSnapshot,
}

impl PlotKind {
    pub const NAMES: [&'static str; 3] = ["learning_curve", "trajectory", "formation_snapshot"];

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "learning_curve" => Some(PlotKind::LearningCurve),
            "trajectory" => Some(PlotKind::Trajectory),
            "formation_snapshot" => Some(PlotKind::FormationSnapshot),
            _ => None,
        }
    }
}

/// Mean and standard deviation across seeds of one curve series.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveBand {
    pub name: String,
    pub updates: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h == name)
}

/// Reads curve CSVs with at least `update` and `mean_return` columns.
/// Optional `series` and `seed` columns group rows; otherwise each file is
/// one seed of a series named after the file.
pub fn load_curve_bands(paths: &[&Path]) -> Result<Vec<CurveBand>> {
    // series -> update -> seed -> value
    let mut acc: BTreeMap<String, BTreeMap<usize, BTreeMap<String, f64>>> = BTreeMap::new();
    for (file_idx, path) in paths.iter().enumerate() {
        let mut r = csv::Reader::from_path(path).map_err(|e| crate::env::record::csv_io(path, e))?;
        let headers = r.headers()?.clone();
        let (Some(u), Some(m)) = (column(&headers, "update"), column(&headers, "mean_return")) else {
            return Err(Error::InvalidInput(format!(
                "{}: curve CSV needs `update` and `mean_return` columns",
                path.display()
            )));
        };
        let series_col = column(&headers, "series");
        let seed_col = column(&headers, "seed");
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for rec in r.records() {
            let rec = rec?;
            let parse = |i: usize| rec.get(i).unwrap_or("").trim().to_string();
            let update: usize = parse(u)
                .parse()
                .map_err(|_| Error::InvalidInput(format!("{}: bad update `{}`", path.display(), parse(u))))?;
            let value: f64 = parse(m)
                .parse()
                .map_err(|_| Error::InvalidInput(format!("{}: bad mean_return `{}`", path.display(), parse(m))))?;
            let series = series_col.map(parse).unwrap_or_else(|| stem.clone());
            let seed = match seed_col {
                Some(c) => format!("{file_idx}/{}", parse(c)),
                None => file_idx.to_string(),
            };
            acc.entry(series).or_default().entry(update).or_default().insert(seed, value);
        }
    }
    if acc.is_empty() {
        return Err(Error::InvalidInput("no curve rows to plot".into()));
    }
    Ok(acc
        .into_iter()
        .map(|(name, by_update)| {
            let mut band = CurveBand {
                name,
                updates: Vec::new(),
                mean: Vec::new(),
                std: Vec::new(),
            };
            for (u, seeds) in by_update {
                let n = seeds.len() as f64;
                let mean = seeds.values().sum::<f64>() / n;
                let var = seeds.values().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                band.updates.push(u);
                band.mean.push(mean);
                band.std.push(var.sqrt());
            }
            band
        })
        .collect())
}

fn padded(lo: f64, hi: f64) -> std::ops::Range<f64> {
    let span = (hi - lo).abs().max(1e-9);
    (lo - 0.05 * span)..(hi + 0.05 * span)
}

pub fn render_learning_curve(bands: &[CurveBand]) -> Result<String> {
    if bands.iter().all(|b| b.updates.is_empty()) {
        return Err(Error::InvalidInput("no curve rows to plot".into()));
    }
    let x_max = bands.iter().flat_map(|b| b.updates.iter()).copied().max().unwrap_or(0) as f64;
    let lows = bands.iter().flat_map(|b| b.mean.iter().zip(&b.std).map(|(m, s)| m - s));
    let highs = bands.iter().flat_map(|b| b.mean.iter().zip(&b.std).map(|(m, s)| m + s));
    let y_lo = lows.fold(f64::INFINITY, f64::min);
    let y_hi = highs.fold(f64::NEG_INFINITY, f64::max);

    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("mean return", ("sans-serif", 20))
            .margin(15)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(padded(0.0, x_max), padded(y_lo, y_hi))
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("update")
            .y_desc("return")
            .draw()
            .map_err(plot_err)?;
        for (i, band) in bands.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            if band.std.iter().any(|&s| s > 0.0) {
                let mut outline: Vec<(f64, f64)> = band
                    .updates
                    .iter()
                    .zip(band.mean.iter().zip(&band.std))
                    .map(|(&u, (m, s))| (u as f64, m + s))
                    .collect();
                outline.extend(
                    band.updates
                        .iter()
                        .zip(band.mean.iter().zip(&band.std))
                        .rev()
                        .map(|(&u, (m, s))| (u as f64, m - s)),
                );
                chart
                    .draw_series(std::iter::once(Polygon::new(outline, color.mix(0.2).filled())))
                    .map_err(plot_err)?;
            }
            let line: Vec<(f64, f64)> = band.updates.iter().zip(&band.mean).map(|(&u, &m)| (u as f64, m)).collect();
            chart
                .draw_series(LineSeries::new(line, color.stroke_width(PATH_STROKE)))
                .map_err(plot_err)?
                .label(band.name.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

fn episode_rows(rows: &[TrajectoryRow], episode: Option<usize>) -> Result<Vec<&TrajectoryRow>> {
    let first = rows
        .first()
        .ok_or_else(|| Error::InvalidInput("no trajectory rows to plot".into()))?;
    let ep = episode.unwrap_or(first.episode);
    let picked: Vec<&TrajectoryRow> = rows.iter().filter(|r| r.episode == ep).collect();
    if picked.is_empty() {
        return Err(Error::InvalidInput(format!("episode {ep} not in trajectory")));
    }
    Ok(picked)
}

fn bounds<'a>(points: impl Iterator<Item = (f64, f64)> + 'a) -> (std::ops::Range<f64>, std::ops::Range<f64>) {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    (padded(x0, x1), padded(y0, y1))
}

/// One polyline per robot (stroke width [`PATH_STROKE`]) and one circle per goal.
pub fn render_trajectory(rows: &[TrajectoryRow], episode: Option<usize>) -> Result<String> {
    let rows = episode_rows(rows, episode)?;
    let mut paths: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    let mut goals: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for r in &rows {
        paths.entry(r.robot).or_default().push((r.px, r.py));
        goals.insert(r.robot, (r.gx, r.gy));
    }
    let (xr, yr) = bounds(rows.iter().flat_map(|r| [(r.px, r.py), (r.gx, r.gy)]));
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("trajectories", ("sans-serif", 20))
            .margin(15)
            .x_label_area_size(40)
            .y_label_area_size(50)
            .build_cartesian_2d(xr, yr)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("x").y_desc("y").draw().map_err(plot_err)?;
        for (i, (robot, path)) in paths.into_iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(path, color.stroke_width(PATH_STROKE)))
                .map_err(plot_err)?;
            let g = goals[&robot];
            chart
                .draw_series(std::iter::once(Circle::new(g, 5, color.stroke_width(PATH_STROKE))))
                .map_err(plot_err)?;
        }
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

/// Robot positions (filled) and goals (hollow) at step `t`, the last step by
/// default.
pub fn render_formation_snapshot(rows: &[TrajectoryRow], episode: Option<usize>, t: Option<usize>) -> Result<String> {
    let rows = episode_rows(rows, episode)?;
    let t = t.unwrap_or_else(|| rows.iter().map(|r| r.t).max().unwrap_or(0));
    let at: Vec<&&TrajectoryRow> = rows.iter().filter(|r| r.t == t).collect();
    if at.is_empty() {
        return Err(Error::InvalidInput(format!("step {t} not in trajectory")));
    }
    let (xr, yr) = bounds(at.iter().flat_map(|r| [(r.px, r.py), (r.gx, r.gy)]));
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("formation at t = {t}"), ("sans-serif", 20))
            .margin(15)
            .x_label_area_size(40)
            .y_label_area_size(50)
            .build_cartesian_2d(xr, yr)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("x").y_desc("y").draw().map_err(plot_err)?;
        chart
            .draw_series(at.iter().map(|r| Circle::new((r.gx, r.gy), 6, BLACK.stroke_width(1))))
            .map_err(plot_err)?;
        chart
            .draw_series(at.iter().map(|r| Circle::new((r.px, r.py), 3, BLUE.filled())))
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

/// Renders `inputs` as `kind` and writes the SVG to `out`.
pub fn plot(kind: PlotKind, inputs: &[&Path], out: &Path) -> Result<()> {
    let svg = match kind {
        PlotKind::LearningCurve => render_learning_curve(&load_curve_bands(inputs)?)?,
        PlotKind::Trajectory | PlotKind::FormationSnapshot => {
            let [input] = inputs else {
                return Err(Error::InvalidInput("trajectory plots take exactly one CSV".into()));
            };
            let rows = read_trajectory_csv(input)?;
            if kind == PlotKind::Trajectory {
                render_trajectory(&rows, None)?
            } else {
                render_formation_snapshot(&rows, None, None)?
            }
        }
    };
    std::fs::write(out, svg).map_err(|e| Error::io(out, e))
}
