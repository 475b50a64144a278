//! Minimal SVG line plots for result CSVs: a median line with an optional
//! quartile band per series.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::table::CsvData;
use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct PlotSpec {
    pub log_x: bool,
    pub log_y: bool,
    pub title: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Lower and upper edges of a shaded band.
    pub band: Option<(Vec<f64>, Vec<f64>)>,
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 20.0, 40.0, 50.0); // left, right, top, bottom

/// Series and axis labels for a known CSV schema.
pub fn series_for(data: &CsvData) -> Result<(Vec<Series>, &'static str, &'static str), CliError> {
    if data.rows.is_empty() {
        return Err(CliError::Plot("CSV has no rows".into()));
    }
    let has = |c: &str| data.columns.iter().any(|x| x == c);
    if has("median_fwd") && has("median_bwd") {
        let k = data.numeric("k")?;
        let mut out = Vec::new();
        for (dir, label) in [("fwd", "forward"), ("bwd", "backward")] {
            out.push(Series {
                label: label.into(),
                x: k.clone(),
                y: data.numeric(&format!("median_{dir}"))?,
                band: Some((
                    data.numeric(&format!("q25_{dir}"))?,
                    data.numeric(&format!("q75_{dir}"))?,
                )),
            });
        }
        return Ok((out, "step k", "orbit error"));
    }
    if has("mean_numerical") && has("mean_exact") {
        let n = data.numeric("N")?;
        let out = ["exact", "numerical"]
            .iter()
            .map(|which| {
                Ok(Series {
                    label: which.to_string(),
                    x: n.clone(),
                    y: data.numeric(&format!("mean_{which}"))?,
                    band: None,
                })
            })
            .collect::<Result<_, CliError>>()?;
        return Ok((out, "flow length N", "ELBO"));
    }
    if has("epsilon") && has("direction") {
        let dirs = data.column("direction")?;
        let n = data.numeric("N")?;
        let eps = data.numeric("epsilon")?;
        let mut groups: BTreeMap<&str, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
        for ((d, n), e) in dirs.iter().zip(&n).zip(&eps) {
            groups.entry(d).or_default().entry(*n as u64).or_default().push(*e);
        }
        let out = groups
            .into_iter()
            .map(|(d, by_n)| {
                let mut s = Series {
                    label: d.to_string(),
                    x: vec![],
                    y: vec![],
                    band: Some((vec![], vec![])),
                };
                for (n, mut v) in by_n {
                    v.sort_by(f64::total_cmp);
                    let q = |p: f64| shadowflow::stats::quantile_sorted(&v, p);
                    s.x.push(n as f64);
                    s.y.push(q(0.5));
                    let band = s.band.as_mut().expect("set above");
                    band.0.push(q(0.25));
                    band.1.push(q(0.75));
                }
                s
            })
            .collect();
        return Ok((out, "flow length N", "shadowing window"));
    }
    Err(CliError::Plot(format!(
        "no plot layout for columns {}",
        data.columns.join(",")
    )))
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Result<Self, CliError> {
        let vals: Vec<f64> = values
            .filter(|v| v.is_finite() && (!log || *v > 0.0))
            .map(|v| if log { v.log10() } else { v })
            .collect();
        if vals.is_empty() {
            return Err(CliError::Plot("no plottable values".into()));
        }
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pad = if hi > lo { 0.0 } else { 0.5 };
        Ok(Self {
            lo: lo - pad,
            hi: hi + pad,
            log,
        })
    }

    /// Fraction in [0, 1] along the axis; None when not plottable.
    fn frac(&self, v: f64) -> Option<f64> {
        let t = if self.log {
            if v > 0.0 {
                v.log10()
            } else {
                return None;
            }
        } else {
            v
        };
        t.is_finite().then(|| (t - self.lo) / (self.hi - self.lo))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        (0..=4)
            .map(|i| {
                let t = self.lo + (self.hi - self.lo) * i as f64 / 4.0;
                let label = if self.log {
                    format!("1e{:.1}", t)
                } else {
                    format!("{:.3}", t)
                };
                (i as f64 / 4.0, label)
            })
            .collect()
    }
}

pub fn render_svg(series: &[Series], spec: &PlotSpec, xlabel: &str, ylabel: &str) -> Result<String, CliError> {
    let xs = series.iter().flat_map(|s| s.x.iter().cloned());
    let ys = series.iter().flat_map(|s| {
        let band = s.band.iter().flat_map(|(a, b)| a.iter().chain(b.iter()).cloned());
        s.y.iter().cloned().chain(band).collect::<Vec<_>>()
    });
    let ax = Axis::fit(xs, spec.log_x)?;
    let ay = Axis::fit(ys, spec.log_y)?;
    let (l, r, t, b) = MARGIN;
    let (pw, ph) = (W - l - r, H - t - b);
    let px = |v: f64| ax.frac(v).map(|f| l + f * pw);
    let py = |v: f64| ay.frac(v).map(|f| t + (1.0 - f) * ph);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{l}" y="{t}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for (f, label) in ax.ticks() {
        let x = l + f * pw;
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#,
            t + ph + 16.0
        );
    }
    for (f, label) in ay.ticks() {
        let y = t + (1.0 - f) * ph;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"#,
            l - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        l + pw / 2.0,
        H - 10.0,
        escape(xlabel)
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        t + ph / 2.0,
        t + ph / 2.0,
        escape(ylabel)
    );
    if let Some(title) = &spec.title {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
            l + pw / 2.0,
            escape(title)
        );
    }
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        if let Some((lo, hi)) = &s.band {
            let mut pts: Vec<String> = Vec::new();
            for (x, y) in s.x.iter().zip(hi) {
                if let (Some(a), Some(b)) = (px(*x), py(*y)) {
                    pts.push(format!("{a:.1},{b:.1}"));
                }
            }
            for (x, y) in s.x.iter().zip(lo).rev() {
                if let (Some(a), Some(b)) = (px(*x), py(*y)) {
                    pts.push(format!("{a:.1},{b:.1}"));
                }
            }
            let _ = writeln!(
                svg,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                pts.join(" ")
            );
        }
        let pts: Vec<String> =
            s.x.iter()
                .zip(&s.y)
                .filter_map(|(x, y)| Some(format!("{:.1},{:.1}", px(*x)?, py(*y)?)))
                .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        let ly = t + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            l + 10.0,
            l + 30.0,
            l + 36.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render `csv` to `out`. Nothing is written on error.
pub fn emit_plot(csv: &Path, out: &Path, spec: &PlotSpec) -> Result<(), CliError> {
    let data = CsvData::read(csv)?;
    let (series, xl, yl) = series_for(&data)?;
    let svg = render_svg(&series, spec, xl, yl)?;
    std::fs::write(out, svg).map_err(|e| CliError::io(out, e))
}
