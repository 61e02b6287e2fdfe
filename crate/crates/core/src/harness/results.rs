use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "architecture,rho,seed,mean_se,wmmse_se,se_ratio,n_candidates";

/// Test-set performance of one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub architecture: String,
    pub rho: f64,
    pub seed: u64,
    pub mean_se: f64,
    pub wmmse_se: f64,
    pub se_ratio: f64,
    pub n_candidates: usize,
}

impl EvalRecord {
    fn sort_key(&self, other: &Self) -> std::cmp::Ordering {
        self.architecture
            .cmp(&other.architecture)
            .then(self.rho.total_cmp(&other.rho))
            .then(self.seed.cmp(&other.seed))
            .then(self.n_candidates.cmp(&other.n_candidates))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub architecture: String,
    pub rho: f64,
    pub seed: u64,
    pub epoch: usize,
    pub loss: f64,
    pub buffer_mean_se: f64,
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes records sorted by architecture, rho, seed and candidate count.
pub fn emit_results(records: &[EvalRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidConfig("no records to emit".into()));
    }
    let mut sorted = records.to_vec();
    sorted.sort_by(EvalRecord::sort_key);
    write_csv(&sorted, path)
}

pub fn read_results(path: &Path) -> Result<Vec<EvalRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(Error::InvalidConfig(format!("unexpected results header `{header}`")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn emit_traces(traces: &[TraceRecord], path: &Path) -> Result<()> {
    write_csv(traces, path)
}

const PALETTE: [&str; 6] = ["#1b6ca8", "#d1495b", "#3c8d2f", "#edae49", "#6b4e9b", "#444444"];

/// Line plot of the seed-averaged SE ratio against rho, one line per
/// architecture and candidate count.
pub fn write_plot(records: &[EvalRecord], path: &Path) -> Result<()> {
    let mut counts: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for r in records {
        let c = counts.entry(&r.architecture).or_default();
        if !c.contains(&r.n_candidates) {
            c.push(r.n_candidates);
        }
    }
    let mut series: BTreeMap<String, BTreeMap<u64, (f64, f64, usize)>> = BTreeMap::new();
    for r in records {
        let label = if counts[r.architecture.as_str()].len() > 1 {
            format!("{} (n={})", r.architecture, r.n_candidates)
        } else {
            r.architecture.clone()
        };
        let cell = series.entry(label).or_default().entry(r.rho.to_bits()).or_insert((r.rho, 0.0, 0));
        cell.1 += r.se_ratio;
        cell.2 += 1;
    }
    let points: Vec<(String, Vec<(f64, f64)>)> = series
        .into_iter()
        .map(|(label, cells)| {
            let mut pts: Vec<(f64, f64)> = cells.into_values().map(|(x, s, n)| (x, s / n as f64)).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            (label, pts)
        })
        .collect();
    let ys = points.iter().flat_map(|(_, p)| p.iter().map(|q| q.1));
    let (mut lo, mut hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), y| (l.min(y), h.max(y)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.1).max(0.01);
    let (lo, hi) = (lo - pad, hi + pad);

    let (w, h, left, right, top, bottom) = (640.0, 420.0, 70.0, 150.0, 30.0, 50.0);
    let px = |x: f64| left + x * (w - left - right);
    let py = |y: f64| top + (hi - y) / (hi - lo) * (h - top - bottom);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, x1, y0, y1) = (px(0.0), px(1.0), py(lo), py(hi));
    let _ =
        writeln!(svg, r#"<path d="M{x0:.1},{y1:.1} L{x0:.1},{y0:.1} L{x1:.1},{y0:.1}" stroke="black" fill="none"/>"#);
    for i in 0..=5 {
        let x = i as f64 / 5.0;
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x:.1}</text>"#, px(x), y0 + 18.0);
        let y = lo + (hi - lo) * i as f64 / 5.0;
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{y:.3}</text>"#, x0 - 6.0, py(y) + 4.0);
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">channel correlation</text>"#,
        (x0 + x1) / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16,{:.1}) rotate(-90)" text-anchor="middle">SE ratio</text>"#,
        (y0 + y1) / 2.0
    );
    for (i, (label, pts)) in points.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let line: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ =
            writeln!(svg, r#"<polyline points="{}" stroke="{color}" stroke-width="2" fill="none"/>"#, line.join(" "));
        for &(x, y) in pts {
            let _ = writeln!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, px(x), py(y));
        }
        let ly = top + 18.0 * i as f64 + 10.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{label}</text>"#,
            x1 + 15.0,
            x1 + 35.0,
            x1 + 40.0,
            ly + 4.0
        );
    }
    svg.push_str("</svg>\n");
    create_parent(path)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
