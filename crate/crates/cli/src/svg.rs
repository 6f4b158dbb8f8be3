//! Minimal SVG line charts. The plotted numbers are repeated as CSV in a
//! comment block so a figure can be checked without re-running anything.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN: [f64; 4] = [50.0, 150.0, 50.0, 70.0]; // top, right, bottom, left
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Symmetric error bars.
    pub err: Option<Vec<f64>>,
    pub markers: bool,
}

impl Series {
    pub fn line(name: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            x,
            y,
            err: None,
            markers: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub log_y: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Round tick spacing covering `[lo, hi]` with about `n` ticks.
fn ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let raw = (hi - lo) / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl Chart {
    fn range(&self, log: bool) -> ([f64; 2], [f64; 2]) {
        let (mut xr, mut yr) = ([f64::INFINITY, f64::NEG_INFINITY], [f64::INFINITY, f64::NEG_INFINITY]);
        for s in &self.series {
            for (i, (&x, &y)) in s.x.iter().zip(&s.y).enumerate() {
                let e = s.err.as_ref().map_or(0.0, |e| e[i].abs());
                let (lo, hi) = (y - e, y + e);
                if !x.is_finite() || !y.is_finite() || (log && y <= 0.0) {
                    continue;
                }
                xr = [xr[0].min(x), xr[1].max(x)];
                let lo = if log && lo <= 0.0 { y } else { lo };
                let (lo, hi) = if log { (lo.log10(), hi.log10()) } else { (lo, hi) };
                yr = [yr[0].min(lo), yr[1].max(hi)];
            }
        }
        let widen = |r: [f64; 2]| {
            if !r[0].is_finite() {
                [0.0, 1.0]
            } else if r[1] - r[0] < 1e-12 {
                [r[0] - 0.5, r[1] + 0.5]
            } else {
                let pad = 0.05 * (r[1] - r[0]);
                [r[0] - pad, r[1] + pad]
            }
        };
        let x = if xr[0].is_finite() && xr[1] > xr[0] { xr } else { widen(xr) };
        (x, widen(yr))
    }

    pub fn render(&self) -> String {
        let log = self.log_y;
        let (xr, yr) = self.range(log);
        let [top, right, bottom, left] = MARGIN;
        let (pw, ph) = (WIDTH - left - right, HEIGHT - top - bottom);
        let px = |x: f64| left + (x - xr[0]) / (xr[1] - xr[0]) * pw;
        let py = |y: f64| {
            let y = if log { y.log10() } else { y };
            top + ph - (y - yr[0]) / (yr[1] - yr[0]) * ph
        };
        let mut o = String::new();
        let _ = writeln!(
            o,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        o.push_str("<!-- data\nseries,x,y,err\n");
        for s in &self.series {
            let name = s.name.replace("--", "-").replace(',', ";");
            for (i, (x, y)) in s.x.iter().zip(&s.y).enumerate() {
                let e = s.err.as_ref().map_or(String::new(), |e| e[i].to_string());
                let _ = writeln!(o, "{name},{x},{y},{e}");
            }
        }
        o.push_str("-->\n");
        let _ = writeln!(o, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(o, r#"<text x="{}" y="25" text-anchor="middle" font-size="15">{}</text>"#, left + pw / 2.0, escape(&self.title));
        let _ = writeln!(o, r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##);

        for t in ticks(xr[0], xr[1], 6) {
            let x = px(t);
            let _ = writeln!(o, r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/>"##, top + ph, top + ph + 5.0);
            let _ = writeln!(o, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, top + ph + 18.0, label(t));
        }
        for t in ticks(yr[0], yr[1], 6) {
            let (y, v) = if log { (py(10f64.powf(t)), 10f64.powf(t)) } else { (py(t), t) };
            let _ = writeln!(o, r##"<line x1="{:.2}" y1="{y:.2}" x2="{left}" y2="{y:.2}" stroke="#333"/>"##, left - 5.0);
            let _ = writeln!(o, r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, left + pw);
            let _ = writeln!(o, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, left - 8.0, y + 4.0, label(v));
        }
        let _ = writeln!(o, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, left + pw / 2.0, HEIGHT - 12.0, escape(&self.x_label));
        let _ = writeln!(
            o,
            r#"<text x="18" y="{0:.2}" text-anchor="middle" transform="rotate(-90 18 {0:.2})">{1}</text>"#,
            top + ph / 2.0,
            escape(&self.y_label)
        );

        for (k, s) in self.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let mut path = String::new();
            let mut pen_down = false;
            for (&x, &y) in s.x.iter().zip(&s.y) {
                if !x.is_finite() || !y.is_finite() || (log && y <= 0.0) {
                    pen_down = false;
                    continue;
                }
                let _ = write!(path, "{}{:.2},{:.2} ", if pen_down { "L" } else { "M" }, px(x), py(y));
                pen_down = true;
            }
            let _ = writeln!(o, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path.trim_end());
            for (i, (&x, &y)) in s.x.iter().zip(&s.y).enumerate() {
                if !x.is_finite() || !y.is_finite() || (log && y <= 0.0) {
                    continue;
                }
                if let Some(e) = s.err.as_ref().map(|e| e[i]).filter(|e| e.is_finite() && *e > 0.0) {
                    let lo = if log && y - e <= 0.0 { y } else { y - e };
                    let _ = writeln!(o, r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="{color}"/>"#, px(x), py(lo), py(y + e));
                }
                if s.markers {
                    let _ = writeln!(o, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(x), py(y));
                }
            }
            let ly = top + 10.0 + 18.0 * k as f64;
            let lx = left + pw + 12.0;
            let _ = writeln!(o, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
            let _ = writeln!(o, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&s.name));
        }
        o.push_str("</svg>\n");
        o
    }
}
