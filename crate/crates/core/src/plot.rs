//! Deterministic SVG line charts with a sibling CSV of the plotted numbers.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data_io::{table_to_csv, write_text};
use crate::error::{Error, Result};
use crate::params::EfficacyPower;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureKind {
    MortalityCompare,
    Efficacy,
    HealthcareShare,
    UCurve,
}

impl FromStr for FigureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mortality-compare" => Ok(FigureKind::MortalityCompare),
            "efficacy" => Ok(FigureKind::Efficacy),
            "healthcare-share" => Ok(FigureKind::HealthcareShare),
            "u-curve" => Ok(FigureKind::UCurve),
            other => Err(Error::InvalidParameter(format!(
                "unknown figure kind `{other}` (expected mortality-compare, efficacy, healthcare-share or u-curve)"
            ))),
        }
    }
}

impl fmt::Display for FigureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FigureKind::MortalityCompare => "mortality-compare",
            FigureKind::Efficacy => "efficacy",
            FigureKind::HealthcareShare => "healthcare-share",
            FigureKind::UCurve => "u-curve",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub ys: Vec<f64>,
}

/// Several curves over one shared abscissa.
#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub kind: FigureKind,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub xs: Vec<f64>,
    pub series: Vec<Series>,
    /// Extra lines recorded in the SVG metadata comment.
    pub notes: Vec<String>,
}

impl Figure {
    fn check(&self) -> Result<()> {
        if self.xs.len() < 2 || self.series.is_empty() {
            return Err(Error::InvalidParameter("a figure needs two points and one series".into()));
        }
        for s in &self.series {
            if s.ys.len() != self.xs.len() {
                return Err(Error::InvalidParameter(format!(
                    "series `{}` has {} points for {} abscissae",
                    s.label,
                    s.ys.len(),
                    self.xs.len()
                )));
            }
            if self.log_y && s.ys.iter().any(|y| !(*y > 0.0)) {
                return Err(Error::InvalidParameter(format!(
                    "series `{}` has nonpositive values on a log axis",
                    s.label
                )));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut header = vec![csv_name(&self.x_label)];
        header.extend(self.series.iter().map(|s| csv_name(&s.label)));
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut cols: Vec<&[f64]> = vec![&self.xs];
        cols.extend(self.series.iter().map(|s| s.ys.as_slice()));
        table_to_csv(&header_refs, &cols)
    }
}

fn csv_name(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Round tick positions covering `[lo, hi]`.
fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|f| f * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn tick_label(v: f64, log: bool) -> String {
    if log {
        format!("1e{}", v.round() as i64)
    } else if v == 0.0 || (v.abs() >= 1e-3 && v.abs() < 1e5) {
        let s = format!("{v:.6}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

/// Renders the figure as a standalone SVG document.
pub fn render_svg(fig: &Figure) -> Result<String> {
    fig.check()?;
    let tf = |y: f64| if fig.log_y { y.log10() } else { y };
    let (mut x0, mut x1) = (fig.xs[0], fig.xs[0]);
    for &x in &fig.xs {
        x0 = x0.min(x);
        x1 = x1.max(x);
    }
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in &fig.series {
        for &y in &s.ys {
            if y.is_finite() {
                y0 = y0.min(tf(y));
                y1 = y1.max(tf(y));
            }
        }
    }
    if fig.log_y {
        y0 = y0.floor();
        y1 = y1.ceil();
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(svg, "<!-- kind: {} -->", fig.kind);
    for note in &fig.notes {
        let _ = writeln!(svg, "<!-- {} -->", escape(note).replace("--", "- -"));
    }
    let _ = writeln!(svg, "<!-- data\n{}-->", fig.to_csv()?);
    let _ = writeln!(svg, "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        LEFT + pw / 2.0,
        escape(&fig.title)
    );
    let _ = writeln!(
        svg,
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>"
    );
    for t in linear_ticks(x0, x1) {
        let x = px(t);
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\"/><text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 18.0,
            tick_label(t, false)
        );
    }
    let yt = if fig.log_y {
        (y0 as i64..=y1 as i64).map(|d| d as f64).collect()
    } else {
        linear_ticks(y0, y1)
    };
    for t in yt {
        let y = py(t);
        let _ = writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{LEFT}\" y2=\"{y:.2}\" stroke=\"black\"/><line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/><text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            LEFT - 5.0,
            LEFT + pw,
            LEFT - 8.0,
            y + 4.0,
            tick_label(t, fig.log_y)
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
        LEFT + pw / 2.0,
        HEIGHT - 15.0,
        escape(&fig.x_label)
    );
    let _ = writeln!(
        svg,
        "<text x=\"20\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 20 {:.1})\">{}</text>",
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&format!("{}{}", fig.y_label, if fig.log_y { " (log scale)" } else { "" }))
    );
    for (i, s) in fig.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = String::new();
        for (x, y) in fig.xs.iter().zip(&s.ys) {
            if y.is_finite() {
                let _ = write!(pts, "{:.2},{:.2} ", px(*x), py(tf(*y)));
            }
        }
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            pts.trim_end()
        );
        let ly = TOP + 15.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{lx:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            lx + 20.0,
            lx + 25.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Path of the CSV written next to `svg_path`.
pub fn sibling_csv(svg_path: &Path) -> PathBuf {
    svg_path.with_extension("csv")
}

/// Writes the SVG and its sibling CSV; returns both paths.
pub fn emit_figure(fig: &Figure, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let svg = render_svg(fig)?;
    let csv_path = sibling_csv(out);
    write_text(out, &svg)?;
    write_text(&csv_path, &fig.to_csv()?)?;
    Ok((out.to_path_buf(), csv_path))
}

/// Mortality paths on a log axis.
pub fn mortality_compare(ages: &[f64], curves: &[(String, Vec<f64>)]) -> Figure {
    Figure {
        kind: FigureKind::MortalityCompare,
        title: "Mortality by age".into(),
        x_label: "age".into(),
        y_label: "mortality rate".into(),
        log_y: true,
        xs: ages.to_vec(),
        series: curves
            .iter()
            .map(|(l, ys)| Series {
                label: l.clone(),
                ys: ys.clone(),
            })
            .collect(),
        notes: Vec::new(),
    }
}

/// `g(h)` over `[0, h_max]` for several efficacy functions.
pub fn efficacy(effs: &[EfficacyPower], h_max: f64, points: usize) -> Figure {
    let xs: Vec<f64> = (0..points)
        .map(|i| h_max * i as f64 / (points - 1) as f64)
        .collect();
    Figure {
        kind: FigureKind::Efficacy,
        title: "Efficacy of healthcare".into(),
        x_label: "h".into(),
        y_label: "g(h)".into(),
        log_y: false,
        series: effs
            .iter()
            .map(|e| Series {
                label: format!("a={} q={}", e.a(), e.q()),
                ys: xs.iter().map(|&h| e.g(h)).collect(),
            })
            .collect(),
        xs,
        notes: Vec::new(),
    }
}

/// Healthcare share `h*/(u* + h*)` of spending flows against age.
pub fn healthcare_share(ages: &[f64], consumption: &[f64], healthcare: &[f64]) -> Figure {
    let share = consumption
        .iter()
        .zip(healthcare)
        .map(|(u, h)| h / (u + h))
        .collect();
    Figure {
        kind: FigureKind::HealthcareShare,
        title: "Healthcare share of spending".into(),
        x_label: "age".into(),
        y_label: "share".into(),
        log_y: false,
        xs: ages.to_vec(),
        series: vec![
            Series {
                label: "healthcare_share".into(),
                ys: share,
            },
            Series {
                label: "consumption_rate".into(),
                ys: consumption.to_vec(),
            },
            Series {
                label: "healthcare_rate".into(),
                ys: healthcare.to_vec(),
            },
        ],
        notes: vec!["share = h* / (u* + h*); portfolio positions excluded".into()],
    }
}

/// `u*` and its envelope against mortality.
pub fn u_curve(m: &[f64], u: &[f64], lower: &[f64], upper: &[f64]) -> Figure {
    Figure {
        kind: FigureKind::UCurve,
        title: "Consumption-wealth ratio".into(),
        x_label: "m".into(),
        y_label: "rate".into(),
        log_y: false,
        xs: m.to_vec(),
        series: vec![
            Series {
                label: "u_star".into(),
                ys: u.to_vec(),
            },
            Series {
                label: "lower_env".into(),
                ys: lower.to_vec(),
            },
            Series {
                label: "upper_env".into(),
                ys: upper.to_vec(),
            },
        ],
        notes: Vec::new(),
    }
}
