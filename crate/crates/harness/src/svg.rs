//! Minimal deterministic SVG line plots driven by CSV columns.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::table::CsvData;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub file: String,
    pub csv: String,
    pub x: String,
    pub y: String,
    #[serde(default)]
    pub group: Option<String>,
    /// Keep only rows whose `column` renders exactly as `value`.
    #[serde(default)]
    pub filter: Option<(String, String)>,
    pub log_x: bool,
    pub log_y: bool,
    pub title: String,
}

impl PlotSpec {
    pub fn new(file: &str, csv: &str, x: &str, y: &str, title: &str) -> Self {
        Self {
            file: file.into(),
            csv: csv.into(),
            x: x.into(),
            y: y.into(),
            group: None,
            filter: None,
            log_x: false,
            log_y: false,
            title: title.into(),
        }
    }

    pub fn log(mut self, x: bool, y: bool) -> Self {
        self.log_x = x;
        self.log_y = y;
        self
    }

    pub fn group(mut self, col: &str) -> Self {
        self.group = Some(col.into());
        self
    }

    pub fn filter(mut self, col: &str, value: String) -> Self {
        self.filter = Some((col.into(), value));
        self
    }
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 78.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 52.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f",
];

fn column(data: &CsvData, name: &str) -> Result<usize, String> {
    data.column(name).ok_or_else(|| format!("column {name:?} not found"))
}

type Series = Vec<(String, Vec<(f64, f64)>)>;

fn collect(spec: &PlotSpec, data: &CsvData) -> Result<Series, String> {
    let xi = column(data, &spec.x)?;
    let yi = column(data, &spec.y)?;
    let gi = spec.group.as_deref().map(|g| column(data, g)).transpose()?;
    let fi = match &spec.filter {
        Some((c, v)) => Some((column(data, c)?, v.as_str())),
        None => None,
    };
    let mut order: Vec<String> = Vec::new();
    let mut map: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for row in &data.rows {
        if let Some((c, v)) = fi {
            if row[c] != v {
                continue;
            }
        }
        let (Ok(x), Ok(y)) = (row[xi].parse::<f64>(), row[yi].parse::<f64>()) else {
            continue;
        };
        let ok = |v: f64, log: bool| v.is_finite() && (!log || v > 0.0);
        if !ok(x, spec.log_x) || !ok(y, spec.log_y) {
            continue;
        }
        let key = gi.map(|g| row[g].clone()).unwrap_or_default();
        if !map.contains_key(&key) {
            order.push(key.clone());
        }
        map.entry(key).or_default().push((x, y));
    }
    Ok(order
        .into_iter()
        .map(|k| {
            let v = map.remove(&k).unwrap_or_default();
            (k, v)
        })
        .collect())
}

struct Axis {
    log: bool,
    lo: f64,
    hi: f64,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let t = if log { v.log10() } else { v };
            lo = lo.min(t);
            hi = hi.max(t);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 * (1.0 + lo.abs()) {
            let pad = if log { 0.5 } else { 0.5 * lo.abs().max(1.0) };
            lo -= pad;
            hi += pad;
        } else {
            let pad = 0.05 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
        Self { log, lo, hi }
    }

    fn frac(&self, v: f64) -> f64 {
        let t = if self.log { v.log10() } else { v };
        (t - self.lo) / (self.hi - self.lo)
    }

    /// Tick values in data units with labels.
    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log && self.hi - self.lo >= 1.0 {
            let a = self.lo.ceil() as i32;
            let b = self.hi.floor() as i32;
            let stride = ((b - a) / 6 + 1).max(1);
            return (a..=b)
                .filter(|e| (e - a) % stride == 0)
                .map(|e| (10f64.powi(e), format!("1e{e}")))
                .collect();
        }
        let (lo, hi) = if self.log {
            (10f64.powf(self.lo), 10f64.powf(self.hi))
        } else {
            (self.lo, self.hi)
        };
        let raw = (hi - lo) / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|s| *s >= raw)
            .unwrap_or(10.0 * mag);
        let decimals = (-step.log10().floor()).max(0.0) as usize;
        let mut out = Vec::new();
        let mut i = (lo / step).ceil() as i64;
        while (i as f64) * step <= hi + 1e-9 * step {
            let v = i as f64 * step;
            let label = if v.abs() >= 1e5 || (v != 0.0 && v.abs() < 1e-3) {
                format!("{v:.1e}")
            } else {
                format!("{v:.decimals$}")
            };
            out.push((v, label));
            i += 1;
        }
        out
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders the plot. Output depends only on `spec` and the CSV content.
pub fn render(spec: &PlotSpec, data: &CsvData) -> Result<String, String> {
    let series = collect(spec, data)?;
    let xs = Axis::new(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)), spec.log_x);
    let ys = Axis::new(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)), spec.log_y);
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let px = |v: f64| LEFT + xs.frac(v) * pw;
    let py = |v: f64| TOP + (1.0 - ys.frac(v)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">{}</text>",
        LEFT + pw / 2.0,
        esc(&spec.title)
    );
    let _ = writeln!(
        s,
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>"
    );
    for (v, label) in xs.ticks() {
        let x = px(v);
        let _ = writeln!(
            s,
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#ddd\"/>",
            TOP,
            TOP + ph
        );
        let _ = writeln!(
            s,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            TOP + ph + 16.0,
            esc(&label)
        );
    }
    for (v, label) in ys.ticks() {
        let y = py(v);
        let _ = writeln!(
            s,
            "<line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#ddd\"/>",
            LEFT + pw
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            LEFT - 6.0,
            y + 4.0,
            esc(&label)
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
        LEFT + pw / 2.0,
        H - 12.0,
        esc(&spec.x)
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{}</text>",
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        esc(&spec.y)
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            path.join(" ")
        );
        if pts.len() <= 40 {
            for (x, y) in pts {
                let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{color}\"/>", px(*x), py(*y));
            }
        }
        if !name.is_empty() {
            let ly = TOP + 12.0 + 16.0 * i as f64;
            let lx = LEFT + pw + 12.0;
            let _ = writeln!(
                s,
                "<line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>",
                lx + 18.0
            );
            let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>", lx + 22.0, ly + 4.0, esc(name));
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}
