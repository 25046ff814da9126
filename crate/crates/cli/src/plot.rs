//! Static SVG line, scatter and contour plots.
//!
//! Output is a pure function of the input data: coordinates are printed with
//! fixed precision and nothing depends on time or locale.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 84.0;
const RIGHT: f64 = WIDTH - 176.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = HEIGHT - 60.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scale {
    Linear,
    Log,
    /// `asinh(v / c)`, linear near zero and logarithmic far from it.
    SymLog(f64),
}

impl Scale {
    fn forward(self, v: f64) -> Option<f64> {
        if !v.is_finite() {
            return None;
        }
        match self {
            Scale::Linear => Some(v),
            Scale::Log => (v > 0.0).then(|| v.log10()),
            Scale::SymLog(c) => Some((v / c).asinh()),
        }
    }

    fn inverse(self, t: f64) -> f64 {
        match self {
            Scale::Linear => t,
            Scale::Log => 10f64.powf(t),
            Scale::SymLog(c) => c * t.sinh(),
        }
    }

    fn ticks(self, lo: f64, hi: f64) -> Vec<f64> {
        match self {
            Scale::Linear => linear_ticks(lo, hi),
            Scale::Log => {
                let (a, b) = (lo.floor() as i32, hi.ceil() as i32);
                let step = ((b - a) / 8).max(1);
                let decades: Vec<f64> = (a..=b)
                    .step_by(step as usize)
                    .map(|k| 10f64.powi(k))
                    .filter(|v| {
                        let t = v.log10();
                        t >= lo - 1e-9 && t <= hi + 1e-9
                    })
                    .collect();
                if decades.len() >= 2 {
                    return decades;
                }
                // less than a decade: plain ticks in value space
                linear_ticks(10f64.powf(lo), 10f64.powf(hi))
                    .into_iter()
                    .filter(|v| *v > 0.0)
                    .collect()
            }
            Scale::SymLog(c) => {
                let (vlo, vhi) = (self.inverse(lo), self.inverse(hi));
                let mut out = vec![];
                if vlo <= 0.0 && vhi >= 0.0 {
                    out.push(0.0);
                }
                let top = vlo.abs().max(vhi.abs()).max(c);
                let decades = (top / c).log10().ceil() as i32;
                let step = (decades / 4).max(1);
                for k in (0..=decades).step_by(step as usize) {
                    let v = c * 10f64.powi(k);
                    for s in [v, -v] {
                        if s >= vlo && s <= vhi {
                            out.push(s);
                        }
                    }
                }
                out.sort_by(f64::total_cmp);
                out
            }
        }
    }
}

fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![lo];
    }
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

/// Compact tick label.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e4).contains(&a) {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        let s = format!("{v:.1e}");
        s.replace(".0e", "e")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    Line,
    Markers,
    LineMarkers,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
    pub dashed: bool,
}

impl Series {
    pub fn line(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            points,
            style: Style::Line,
            dashed: false,
        }
    }

    pub fn markers(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            style: Style::Markers,
            ..Series::line(label, points)
        }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }

    pub fn with_markers(mut self) -> Self {
        self.style = Style::LineMarkers;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_scale: Scale,
    pub y_scale: Scale,
    pub series: Vec<Series>,
    /// Draw the line y = x.
    pub diagonal: bool,
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    x_scale: Scale,
    y_scale: Scale,
}

impl Frame {
    fn px(&self, t: f64) -> f64 {
        LEFT + (t - self.x.0) / (self.x.1 - self.x.0) * (RIGHT - LEFT)
    }

    fn py(&self, t: f64) -> f64 {
        BOTTOM - (t - self.y.0) / (self.y.1 - self.y.0) * (BOTTOM - TOP)
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        let w = lo.abs().max(1.0) * 0.05;
        return (lo - w, hi + w);
    }
    let pad = 0.04 * (hi - lo);
    (lo - pad, hi + pad)
}

fn header(out: &mut String, title: &str, hash: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, "<!-- config_hash={hash} -->");
    let _ = writeln!(out, r#"<metadata>config_hash={hash}</metadata>"#);
    let _ = writeln!(out, r##"<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        (LEFT + RIGHT) / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r##"<rect x="{LEFT}" y="{TOP}" width="{:.2}" height="{:.2}" fill="none" stroke="#333333"/>"##,
        RIGHT - LEFT,
        BOTTOM - TOP
    );
    for v in f.x_scale.ticks(f.x.0, f.x.1) {
        let Some(t) = f.x_scale.forward(v) else { continue };
        let x = f.px(t);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.2}" y1="{BOTTOM}" x2="{x:.2}" y2="{:.2}" stroke="#333333"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            BOTTOM + 5.0,
            BOTTOM + 19.0,
            fmt_num(v)
        );
    }
    for v in f.y_scale.ticks(f.y.0, f.y.1) {
        let Some(t) = f.y_scale.forward(v) else { continue };
        let y = f.py(t);
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="#333333"/><line x1="{LEFT}" y1="{y:.2}" x2="{RIGHT}" y2="{y:.2}" stroke="#eeeeee"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT - 5.0,
            LEFT - 8.0,
            y + 4.0,
            fmt_num(v)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (LEFT + RIGHT) / 2.0,
        HEIGHT - 18.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        (TOP + BOTTOM) / 2.0,
        (TOP + BOTTOM) / 2.0,
        escape(y_label)
    );
}

/// Legend entry: label, colour, dashed line, marker-only.
type LegendEntry<'a> = (String, &'a str, bool, bool);

/// Characters that fit right of the plot area.
const LEGEND_CHARS: usize = 22;

fn legend(out: &mut String, entries: &[LegendEntry]) {
    for (i, (label, color, dashed, dot)) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        if *dot {
            let _ = write!(
                out,
                r#"<circle cx="{:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#,
                RIGHT + 22.0
            );
        } else {
            let dash = if *dashed { r#" stroke-dasharray="5,3""# } else { "" };
            let _ = write!(
                out,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"{dash}/>"#,
                RIGHT + 12.0,
                RIGHT + 32.0
            );
        }
        let shown: String = if label.chars().count() > LEGEND_CHARS {
            label.chars().take(LEGEND_CHARS - 1).chain(['…']).collect()
        } else {
            label.clone()
        };
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}"><title>{}</title>{}</text>"#,
            RIGHT + 38.0,
            y + 4.0,
            escape(label),
            escape(&shown)
        );
    }
}

impl Chart {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Chart {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            x_scale: Scale::Linear,
            y_scale: Scale::Linear,
            series: vec![],
            diagonal: false,
        }
    }

    pub fn scales(mut self, x: Scale, y: Scale) -> Self {
        self.x_scale = x;
        self.y_scale = y;
        self
    }

    pub fn series(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }

    pub fn to_svg(&self, hash: &str) -> String {
        let transformed: Vec<Vec<(f64, f64)>> = self
            .series
            .iter()
            .map(|s| {
                s.points
                    .iter()
                    .filter_map(|&(x, y)| Some((self.x_scale.forward(x)?, self.y_scale.forward(y)?)))
                    .collect()
            })
            .collect();
        let all = transformed.iter().flatten();
        let (mut xlo, mut xhi, mut ylo, mut yhi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in all {
            xlo = xlo.min(x);
            xhi = xhi.max(x);
            ylo = ylo.min(y);
            yhi = yhi.max(y);
        }
        if self.diagonal {
            let (lo, hi) = (xlo.min(ylo), xhi.max(yhi));
            (xlo, xhi, ylo, yhi) = (lo, hi, lo, hi);
        }
        let f = Frame {
            x: padded(xlo, xhi),
            y: padded(ylo, yhi),
            x_scale: self.x_scale,
            y_scale: self.y_scale,
        };
        let mut out = String::new();
        header(&mut out, &self.title, hash);
        axes(&mut out, &f, &self.x_label, &self.y_label);
        let _ = writeln!(
            out,
            r#"<clipPath id="plot-area"><rect x="{LEFT}" y="{TOP}" width="{:.2}" height="{:.2}"/></clipPath><g clip-path="url(#plot-area)">"#,
            RIGHT - LEFT,
            BOTTOM - TOP
        );
        if self.diagonal {
            let _ = writeln!(
                out,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999999" stroke-dasharray="4,4"/>"##,
                f.px(f.x.0),
                f.py(f.x.0),
                f.px(f.x.1),
                f.py(f.x.1)
            );
        }
        let mut entries = vec![];
        for (i, (s, pts)) in self.series.iter().zip(&transformed).enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            if matches!(s.style, Style::Line | Style::LineMarkers) && pts.len() > 1 {
                let path: Vec<String> = pts
                    .iter()
                    .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
                    .collect();
                let dash = if s.dashed { r#" stroke-dasharray="5,3""# } else { "" };
                let _ = writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.6"{dash} points="{}"/>"#,
                    path.join(" ")
                );
            }
            if matches!(s.style, Style::Markers | Style::LineMarkers) {
                for &(x, y) in pts {
                    let _ = writeln!(
                        out,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="2.6" fill="{color}" fill-opacity="0.75"/>"#,
                        f.px(x),
                        f.py(y)
                    );
                }
            }
            entries.push((s.label.clone(), color, s.dashed, s.style == Style::Markers));
        }
        out.push_str("</g>\n");
        if self.diagonal {
            entries.push(("y = x".into(), "#999999", true, false));
        }
        legend(&mut out, &entries);
        out.push_str("</svg>\n");
        out
    }
}

/// Level-set segments of a lattice by marching squares. `z[j][i]` is the
/// value at `(xs[i], ys[j])`.
pub fn marching_squares(xs: &[f64], ys: &[f64], z: &[Vec<f64>], level: f64) -> Vec<[(f64, f64); 2]> {
    let mut segs = vec![];
    let lerp = |a: (f64, f64, f64), b: (f64, f64, f64)| {
        let t = if a.2 == b.2 { 0.5 } else { (level - a.2) / (b.2 - a.2) };
        (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
    };
    for j in 0..ys.len().saturating_sub(1) {
        for i in 0..xs.len().saturating_sub(1) {
            // corners counter-clockwise from bottom-left
            let c = [
                (xs[i], ys[j], z[j][i]),
                (xs[i + 1], ys[j], z[j][i + 1]),
                (xs[i + 1], ys[j + 1], z[j + 1][i + 1]),
                (xs[i], ys[j + 1], z[j + 1][i]),
            ];
            if c.iter().any(|p| !p.2.is_finite()) {
                continue;
            }
            let above: Vec<bool> = c.iter().map(|p| p.2 > level).collect();
            // edge k joins corner k and corner k+1
            let crossing: Vec<usize> = (0..4).filter(|&k| above[k] != above[(k + 1) % 4]).collect();
            let point = |k: usize| lerp(c[k], c[(k + 1) % 4]);
            match crossing.len() {
                2 => segs.push([point(crossing[0]), point(crossing[1])]),
                4 => {
                    // saddle: the cell mean decides which corners connect
                    let centre = c.iter().map(|p| p.2).sum::<f64>() / 4.0;
                    if (centre > level) == above[0] {
                        segs.push([point(0), point(1)]);
                        segs.push([point(2), point(3)]);
                    } else {
                        segs.push([point(3), point(0)]);
                        segs.push([point(1), point(2)]);
                    }
                }
                _ => {}
            }
        }
    }
    segs
}

#[derive(Clone, Debug, PartialEq)]
pub struct Contour {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub levels: Vec<f64>,
    /// Marked with a cross.
    pub marker: Option<(f64, f64)>,
}

impl Contour {
    /// `count` levels spread over the finite range of `z`, denser near the
    /// minimum.
    pub fn auto_levels(z: &[Vec<f64>], count: usize) -> Vec<f64> {
        let vals: Vec<f64> = z.iter().flatten().copied().filter(|v| v.is_finite()).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return vec![];
        }
        (1..=count)
            .map(|k| {
                let t = k as f64 / (count + 1) as f64;
                lo + (hi - lo) * t * t
            })
            .collect()
    }

    pub fn to_svg(&self, hash: &str) -> String {
        let first = |v: &[f64]| v.first().copied().unwrap_or(0.0);
        let last = |v: &[f64]| v.last().copied().unwrap_or(1.0);
        let f = Frame {
            x: padded(first(&self.xs), last(&self.xs)),
            y: padded(first(&self.ys), last(&self.ys)),
            x_scale: Scale::Linear,
            y_scale: Scale::Linear,
        };
        let mut out = String::new();
        header(&mut out, &self.title, hash);
        axes(&mut out, &f, &self.x_label, &self.y_label);
        let n = self.levels.len().max(1);
        let mut entries = vec![];
        for (k, &level) in self.levels.iter().enumerate() {
            let t = k as f64 / (n.max(2) - 1) as f64;
            let color = format!(
                "#{:02x}{:02x}{:02x}",
                (40.0 + 200.0 * t) as u8,
                (60.0 + 80.0 * (1.0 - (2.0 * t - 1.0).abs())) as u8,
                (220.0 - 180.0 * t) as u8
            );
            let segs = marching_squares(&self.xs, &self.ys, &self.z, level);
            if segs.is_empty() {
                continue;
            }
            let mut d = String::new();
            for [a, b] in &segs {
                let _ = write!(
                    d,
                    "M{:.2} {:.2}L{:.2} {:.2}",
                    f.px(a.0),
                    f.py(a.1),
                    f.px(b.0),
                    f.py(b.1)
                );
            }
            let _ = writeln!(out, r#"<path fill="none" stroke="{color}" stroke-width="1.3" d="{d}"/>"#);
            entries.push((fmt_num(level), color));
        }
        if let Some((x, y)) = self.marker {
            let (cx, cy) = (f.px(x), f.py(y));
            let _ = writeln!(
                out,
                r##"<path stroke="#000000" stroke-width="1.5" d="M{:.2} {:.2}L{:.2} {:.2}M{:.2} {:.2}L{:.2} {:.2}"/>"##,
                cx - 5.0,
                cy - 5.0,
                cx + 5.0,
                cy + 5.0,
                cx - 5.0,
                cy + 5.0,
                cx + 5.0,
                cy - 5.0
            );
        }
        // keep the legend within the plot height
        let stride = entries.len().div_ceil(16).max(1);
        let shown: Vec<LegendEntry> = entries
            .iter()
            .step_by(stride)
            .map(|(l, c)| (l.clone(), c.as_str(), false, false))
            .collect();
        legend(&mut out, &shown);
        out.push_str("</svg>\n");
        out
    }
}
