//! File exports: heatmaps, per-cell network probes, buffer dumps and plots.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::curiosity::{self, CoarseFineModel, Novelty};
use crate::env::{encode_observation, Action, GridSpec, Pos};
use crate::memory::MBuffer;
use crate::memrefl::{self, PredictionNet, ReflectionNet};
use crate::{Error, Result};

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Row-major grid of non-negative values.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Validation(format!(
                "{} values for a {height}×{width} grid",
                values.len()
            )));
        }
        Ok(Heatmap { width, height, values })
    }

    pub fn from_counts(spec: &GridSpec, counts: &[u64]) -> Result<Self> {
        Heatmap::new(spec.width, spec.height, counts.iter().map(|&c| c as f64).collect())
    }

    fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Values scaled so the maximum maps to 255; all-zero stays black.
    pub fn gray_levels(&self) -> Vec<u8> {
        let max = self.max();
        self.values
            .iter()
            .map(|&v| if max > 0.0 { (v.max(0.0) / max * 255.0).round() as u8 } else { 0 })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapFormat {
    Pgm,
    Svg,
    Csv,
}

impl FromStr for HeatmapFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm" => Ok(HeatmapFormat::Pgm),
            "svg" => Ok(HeatmapFormat::Svg),
            "csv" => Ok(HeatmapFormat::Csv),
            _ => Err(Error::config("format", format!("unknown heatmap format `{s}`"))),
        }
    }
}

pub fn heatmap_bytes(map: &Heatmap, format: HeatmapFormat) -> Vec<u8> {
    match format {
        HeatmapFormat::Pgm => {
            let mut out = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
            out.extend(map.gray_levels());
            out
        }
        HeatmapFormat::Csv => {
            let mut s = String::new();
            for row in map.values.chunks(map.width) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                s.push_str(&line.join(","));
                s.push('\n');
            }
            s.into_bytes()
        }
        HeatmapFormat::Svg => {
            const CELL: usize = 10;
            let mut s = format!(
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\">\n",
                map.width * CELL,
                map.height * CELL
            );
            for (i, level) in map.gray_levels().into_iter().enumerate() {
                let (r, c) = (i / map.width, i % map.width);
                // Dark blue through teal to yellow.
                let t = f64::from(level) / 255.0;
                let red = (255.0 * t * t).round() as u8;
                let green = (40.0 + 200.0 * t).round() as u8;
                let blue = (110.0 * (1.0 - t) + 40.0 * t).round() as u8;
                writeln!(
                    s,
                    "<rect x=\"{}\" y=\"{}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"#{red:02x}{green:02x}{blue:02x}\"/>",
                    c * CELL,
                    r * CELL
                )
                .unwrap();
            }
            s.push_str("</svg>\n");
            s.into_bytes()
        }
    }
}

pub fn export_heatmap(map: &Heatmap, path: &Path, format: HeatmapFormat) -> Result<()> {
    write_file(path, &heatmap_bytes(map, format))
}

fn open_cells(spec: &GridSpec) -> impl Iterator<Item = Pos> + '_ {
    (0..spec.n_cells()).map(|i| spec.cell_at(i)).filter(|&p| !spec.is_wall(p))
}

/// Novelty of every non-wall cell, in row-major order.
pub fn novelty_grid(model: &CoarseFineModel, spec: &GridSpec) -> Result<Vec<(Pos, Novelty)>> {
    open_cells(spec)
        .map(|p| Ok((p, curiosity::intrinsic_reward(model, &encode_observation(spec, p)?)?)))
        .collect()
}

pub fn novelty_csv(spec: &GridSpec, cells: &[(Pos, Novelty)]) -> String {
    let mut s = String::from("row,col,state_index,r_i,recon_err,sparsity\n");
    for (p, n) in cells {
        writeln!(s, "{},{},{},{},{},{}", p.row, p.col, spec.cell_index(*p), n.reward, n.recon_err, n.sparsity).unwrap();
    }
    s
}

pub fn novelty_heatmap(spec: &GridSpec, cells: &[(Pos, Novelty)]) -> Heatmap {
    let mut values = vec![0.0; spec.n_cells()];
    for (p, n) in cells {
        values[spec.cell_index(*p)] = n.reward;
    }
    Heatmap { width: spec.width, height: spec.height, values }
}

/// Per-cell confidence of the best-scored action and of the predicted one.
pub fn confidence_csv(pred: &PredictionNet, refl: &ReflectionNet, spec: &GridSpec) -> Result<String> {
    let mut s = String::from("row,col,state_index,max_action,max_confidence,predicted_action,predicted_confidence\n");
    for p in open_cells(spec) {
        let obs = encode_observation(spec, p)?;
        let conf: Vec<f64> = (0..Action::COUNT)
            .map(|a| memrefl::confidence(refl, &obs, a))
            .collect::<Result<_>>()?;
        let best = crate::nn::argmax(&conf);
        let (predicted, _) = memrefl::predict_action(pred, &obs)?;
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            p.row,
            p.col,
            spec.cell_index(p),
            Action::ALL[best].arrow(),
            conf[best],
            Action::ALL[predicted].arrow(),
            conf[predicted]
        )
        .unwrap();
    }
    Ok(s)
}

/// Stored trajectories, best first; `episode_id` is the rank.
pub fn memory_csv(mbuf: &MBuffer) -> String {
    let mut s = String::from("episode_id,step,state_index,action,reward\n");
    for (id, traj) in mbuf.entries().iter().enumerate() {
        for (t, step) in traj.steps().iter().enumerate() {
            writeln!(s, "{id},{t},{},{},{}", step.observation.index(), step.action, step.reward).unwrap();
        }
    }
    s
}

/// Parsed metrics file: column names and rows of optional numbers.
pub struct MetricsTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

pub fn parse_metrics(text: &str) -> Result<MetricsTable> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Validation("metrics file has no header".into()))?;
    let columns: Vec<String> = header.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != columns.len() {
            return Err(Error::Validation(format!("metrics row {} has {} cells", n + 1, cells.len())));
        }
        rows.push(cells.iter().map(|c| c.parse().ok()).collect());
    }
    Ok(MetricsTable { columns, rows })
}

/// One small line chart per metric column, against the first column.
pub fn plot_svg(table: &MetricsTable) -> String {
    const W: f64 = 320.0;
    const H: f64 = 160.0;
    const PAD: f64 = 28.0;
    let panels: Vec<usize> = (2..table.columns.len()).collect();
    let per_row = 3;
    let n_rows = panels.len().div_ceil(per_row).max(1);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"11\">\n",
        W * per_row as f64,
        H * n_rows as f64
    );
    for (k, &col) in panels.iter().enumerate() {
        let (ox, oy) = ((k % per_row) as f64 * W, (k / per_row) as f64 * H);
        let points: Vec<(f64, f64)> = table
            .rows
            .iter()
            .filter_map(|r| Some((r[0]?, r[col]?)))
            .collect();
        writeln!(s, "<text x=\"{}\" y=\"{}\">{}</text>", ox + PAD, oy + 14.0, table.columns[col]).unwrap();
        writeln!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>",
            ox + PAD,
            oy + 20.0,
            W - 2.0 * PAD,
            H - PAD - 20.0
        )
        .unwrap();
        if points.is_empty() {
            continue;
        }
        let (x0, x1) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
        let (y0, y1) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
        let sx = |x: f64| ox + PAD + if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.5 } * (W - 2.0 * PAD);
        let sy = |y: f64| oy + H - PAD - if y1 > y0 { (y - y0) / (y1 - y0) } else { 0.5 } * (H - PAD - 20.0);
        let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        writeln!(s, "<polyline fill=\"none\" stroke=\"#1f77b4\" points=\"{}\"/>", path.join(" ")).unwrap();
        writeln!(s, "<text x=\"{}\" y=\"{}\">{y1}</text>", ox + PAD + 4.0, oy + 32.0).unwrap();
        writeln!(s, "<text x=\"{}\" y=\"{}\">{y0}</text>", ox + PAD + 4.0, oy + H - PAD - 4.0).unwrap();
    }
    s.push_str("</svg>\n");
    s
}
