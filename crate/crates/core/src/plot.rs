//! Minimal static SVG line charts: polylines, shaded envelope bands and a legend.

use std::fmt::Write;

pub const WIDTH: f64 = 1200.0;
pub const HEIGHT: f64 = 600.0;

const MARGIN_LEFT: f64 = 90.0;
const MARGIN_RIGHT: f64 = 200.0;
const MARGIN_TOP: f64 = 50.0;
const MARGIN_BOTTOM: f64 = 70.0;

#[derive(Clone, Debug)]
pub struct Line {
    pub name: String,
    pub color: String,
    pub dashed: bool,
    /// `(x, y)` in data coordinates.
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct Band {
    pub name: String,
    pub color: String,
    /// `(x, lower, upper)`.
    pub points: Vec<(f64, f64, f64)>,
}

#[derive(Clone, Debug, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub lines: Vec<Line>,
    pub bands: Vec<Band>,
    /// Tick positions on the x axis with their labels; numeric ticks when empty.
    pub x_ticks: Vec<(f64, String)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Round step (1, 2 or 5 times a power of ten) giving about `target` intervals.
fn nice_step(span: f64, target: usize) -> f64 {
    if span <= 0.0 || !span.is_finite() {
        return 1.0;
    }
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 1e6 {
        format!("{:.1}M", v / 1e6)
    } else if v.abs() >= 1e4 {
        format!("{:.0}k", v / 1e3)
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

impl Chart {
    fn bounds(&self) -> (f64, f64, f64, f64) {
        let xs = self
            .lines
            .iter()
            .flat_map(|l| l.points.iter().map(|p| p.0))
            .chain(self.bands.iter().flat_map(|b| b.points.iter().map(|p| p.0)));
        let ys = self
            .lines
            .iter()
            .flat_map(|l| l.points.iter().map(|p| p.1))
            .chain(self.bands.iter().flat_map(|b| b.points.iter().flat_map(|p| [p.1, p.2])));
        let (mut x0, mut x1) = xs
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let (mut y0, mut y1) = ys
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !x0.is_finite() {
            (x0, x1) = (0.0, 1.0);
        }
        if !y0.is_finite() {
            (y0, y1) = (0.0, 1.0);
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        y0 = y0.min(0.0);
        if y1 <= y0 {
            y1 = y0 + 1.0;
        }
        let step = nice_step(y1 - y0, 6);
        (x0, x1, y0, (y1 / step).ceil() * step)
    }

    pub fn to_svg(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
        let sy = |y: f64| MARGIN_TOP + plot_h - (y - y0) / (y1 - y0) * plot_h;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="28" text-anchor="middle" font-size="16">{}</text>"#,
            MARGIN_LEFT + plot_w / 2.0,
            escape(&self.title)
        );

        // grid and y ticks
        let step = nice_step(y1 - y0, 6);
        let mut y = y0;
        while y <= y1 + step * 1e-9 {
            let py = sy(y);
            let _ = writeln!(
                s,
                r##"<line x1="{MARGIN_LEFT:.1}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#dddddd"/>"##,
                MARGIN_LEFT + plot_w
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                MARGIN_LEFT - 8.0,
                py + 4.0,
                format_tick(y)
            );
            y += step;
        }
        let ticks: Vec<(f64, String)> = if self.x_ticks.is_empty() {
            let step = nice_step(x1 - x0, 8);
            let mut v = (x0 / step).ceil() * step;
            let mut out = Vec::new();
            while v <= x1 + step * 1e-9 {
                out.push((v, format_tick(v)));
                v += step;
            }
            out
        } else {
            self.x_ticks.clone()
        };
        for (x, label) in &ticks {
            let px = sx(*x);
            let _ = writeln!(
                s,
                r##"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="#333333"/>"##,
                MARGIN_TOP + plot_h,
                MARGIN_TOP + plot_h + 5.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                MARGIN_TOP + plot_h + 20.0,
                escape(label)
            );
        }
        let _ = writeln!(
            s,
            r##"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333333"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            MARGIN_LEFT + plot_w / 2.0,
            HEIGHT - 20.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate(24 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
            MARGIN_TOP + plot_h / 2.0,
            escape(&self.y_label)
        );

        for band in &self.bands {
            if band.points.is_empty() {
                continue;
            }
            let mut d = String::new();
            for (i, (x, _, hi)) in band.points.iter().enumerate() {
                let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { 'M' } else { 'L' }, sx(*x), sy(*hi));
            }
            for (x, lo, _) in band.points.iter().rev() {
                let _ = write!(d, "L{:.2},{:.2} ", sx(*x), sy(*lo));
            }
            let _ = writeln!(
                s,
                r#"<path d="{}Z" fill="{}" fill-opacity="0.25" stroke="none"/>"#,
                d,
                band.color
            );
        }
        for line in &self.lines {
            if line.points.is_empty() {
                continue;
            }
            let pts: Vec<String> = line
                .points
                .iter()
                .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
                .collect();
            let dash = if line.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"{dash}/>"#,
                pts.join(" "),
                line.color
            );
        }

        let lx = MARGIN_LEFT + plot_w + 20.0;
        let mut ly = MARGIN_TOP + 10.0;
        for band in &self.bands {
            let _ = writeln!(
                s,
                r#"<rect x="{lx:.1}" y="{:.1}" width="24" height="12" fill="{}" fill-opacity="0.25"/>"#,
                ly - 9.0,
                band.color
            );
            let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#, lx + 32.0, escape(&band.name));
            ly += 22.0;
        }
        for line in &self.lines {
            let dash = if line.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{}" stroke-width="2"{dash}/>"#,
                ly - 4.0,
                lx + 24.0,
                ly - 4.0,
                line.color
            );
            let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#, lx + 32.0, escape(&line.name));
            ly += 22.0;
        }
        s.push_str("</svg>\n");
        s
    }
}
