//! Log-log line charts written directly as SVG 1.1.

use std::fmt::Write;

use crate::tuning::Method;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Marker {
    Circle,
    Square,
    Triangle,
    Diamond,
    Cross,
}

/// Fixed color and marker for each method.
pub fn method_style(m: Method) -> (&'static str, Marker) {
    match m {
        Method::Sgd => ("#1f77b4", Marker::Circle),
        Method::Ridge => ("#d62728", Marker::Square),
        Method::Presgd => ("#2ca02c", Marker::Triangle),
        Method::PresgdEst => ("#ff7f0e", Marker::Diamond),
        Method::Preridge => ("#9467bd", Marker::Cross),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub color: String,
    pub marker: Marker,
    /// `(x, mean, std)`; points with non-positive or non-finite coordinates
    /// are left out.
    pub points: Vec<(f64, f64, f64)>,
}

impl Series {
    pub fn for_method(m: Method, points: Vec<(f64, f64, f64)>) -> Self {
        let (color, marker) = method_style(m);
        Series {
            label: m.name().to_string(),
            color: color.to_string(),
            marker,
            points,
        }
    }

    fn visible(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.points
            .iter()
            .copied()
            .filter(|&(x, y, _)| x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite())
    }
}

/// Formats with at most nine significant digits and no exponent.
pub fn sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return "0".to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (8 - mag).max(0) as usize;
    let mut s = format!("{x:.decimals$}");
    if s.contains('.') {
        s = s.trim_end_matches('0').trim_end_matches('.').to_string();
    }
    if s == "-0" {
        s = "0".to_string();
    }
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 140.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

/// Decade range `[10^lo, 10^hi]` covering `values`.
fn decades(values: impl Iterator<Item = f64>) -> (i32, i32) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| *v > 0.0 && v.is_finite()) {
        lo = lo.min(v.log10());
        hi = hi.max(v.log10());
    }
    if !lo.is_finite() {
        return (0, 1);
    }
    let (lo, hi) = (lo.floor() as i32, hi.ceil() as i32);
    if lo == hi {
        (lo, hi + 1)
    } else {
        (lo, hi)
    }
}

struct Axes {
    x: (i32, i32),
    y: (i32, i32),
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        let t = (x.log10() - self.x.0 as f64) / (self.x.1 - self.x.0) as f64;
        LEFT + t * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let t = (y.log10() - self.y.0 as f64) / (self.y.1 - self.y.0) as f64;
        HEIGHT - BOTTOM - t * (HEIGHT - TOP - BOTTOM)
    }
}

fn marker(out: &mut String, m: Marker, x: f64, y: f64, color: &str) {
    let r = 4.0;
    let (xs, ys) = (sig9(x), sig9(y));
    let _ = match m {
        Marker::Circle => writeln!(out, r#"<circle cx="{xs}" cy="{ys}" r="{}" fill="{color}"/>"#, sig9(r)),
        Marker::Square => writeln!(
            out,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{color}"/>"#,
            sig9(x - r),
            sig9(y - r),
            sig9(2.0 * r),
            sig9(2.0 * r)
        ),
        Marker::Triangle => writeln!(
            out,
            r#"<polygon points="{},{} {},{} {},{}" fill="{color}"/>"#,
            xs,
            sig9(y - r),
            sig9(x - r),
            sig9(y + r),
            sig9(x + r),
            sig9(y + r)
        ),
        Marker::Diamond => writeln!(
            out,
            r#"<polygon points="{},{} {},{} {},{} {},{}" fill="{color}"/>"#,
            xs,
            sig9(y - r),
            sig9(x + r),
            ys,
            xs,
            sig9(y + r),
            sig9(x - r),
            ys
        ),
        Marker::Cross => writeln!(
            out,
            r#"<path d="M{},{} L{},{} M{},{} L{},{}" stroke="{color}" stroke-width="2"/>"#,
            sig9(x - r),
            sig9(y - r),
            sig9(x + r),
            sig9(y + r),
            sig9(x - r),
            sig9(y + r),
            sig9(x + r),
            sig9(y - r)
        ),
    };
}

/// Renders a log-log chart with one polyline per series and ±1 std error
/// bars. Lower error-bar ends at or below zero are clipped to the axis.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let xs = series.iter().flat_map(|s| s.visible().map(|p| p.0));
    let ys = series.iter().flat_map(|s| {
        s.visible()
            .flat_map(|(_, y, sd)| [y, y + sd.max(0.0), if y - sd > 0.0 { y - sd } else { y }])
    });
    let axes = Axes {
        x: decades(xs),
        y: decades(ys),
    };
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif" font-size="12">"#,
        sig9(WIDTH),
        sig9(HEIGHT),
        sig9(WIDTH),
        sig9(HEIGHT)
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        sig9((x0 + x1) / 2.0),
        escape(title)
    );

    // grid lines and decade labels
    for k in axes.x.0..=axes.x.1 {
        let px = sig9(axes.px(10f64.powi(k)));
        let _ = writeln!(
            out,
            r##"<line x1="{px}" y1="{}" x2="{px}" y2="{}" stroke="#dddddd"/>"##,
            sig9(y0),
            sig9(y1)
        );
        let _ = writeln!(
            out,
            r#"<text x="{px}" y="{}" text-anchor="middle">1e{k}</text>"#,
            sig9(y0 + 18.0)
        );
    }
    for k in axes.y.0..=axes.y.1 {
        let py = sig9(axes.py(10f64.powi(k)));
        let _ = writeln!(
            out,
            r##"<line x1="{}" y1="{py}" x2="{}" y2="{py}" stroke="#dddddd"/>"##,
            sig9(x0),
            sig9(x1)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{py}" text-anchor="end" dominant-baseline="middle">1e{k}</text>"#,
            sig9(x0 - 6.0)
        );
    }
    let _ = writeln!(
        out,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        sig9(x0),
        sig9(y1),
        sig9(x1 - x0),
        sig9(y0 - y1)
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        sig9((x0 + x1) / 2.0),
        sig9(HEIGHT - 16.0),
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">{}</text>"#,
        sig9((y0 + y1) / 2.0),
        sig9((y0 + y1) / 2.0),
        escape(y_label)
    );

    let y_floor = 10f64.powi(axes.y.0);
    for s in series {
        let pts: Vec<(f64, f64, f64)> = s.visible().collect();
        if pts.is_empty() {
            continue;
        }
        let line: Vec<String> = pts
            .iter()
            .map(|&(x, y, _)| format!("{},{}", sig9(axes.px(x)), sig9(axes.py(y))))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            line.join(" "),
            s.color
        );
        for &(x, y, sd) in &pts {
            let sd = if sd.is_finite() { sd.max(0.0) } else { 0.0 };
            let px = axes.px(x);
            let lo = if y - sd > y_floor { y - sd } else { y_floor };
            let (pl, ph) = (axes.py(lo), axes.py(y + sd));
            let _ = writeln!(
                out,
                r#"<path d="M{},{} L{},{} M{},{} L{},{} M{},{} L{},{}" stroke="{}"/>"#,
                sig9(px),
                sig9(pl),
                sig9(px),
                sig9(ph),
                sig9(px - 3.0),
                sig9(pl),
                sig9(px + 3.0),
                sig9(pl),
                sig9(px - 3.0),
                sig9(ph),
                sig9(px + 3.0),
                sig9(ph),
                s.color
            );
            marker(&mut out, s.marker, px, axes.py(y), &s.color);
        }
    }

    // legend
    for (i, s) in series.iter().enumerate() {
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = x1 + 16.0;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="1.5"/>"#,
            sig9(lx),
            sig9(ly),
            sig9(lx + 24.0),
            sig9(ly),
            s.color
        );
        marker(&mut out, s.marker, lx + 12.0, ly, &s.color);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" dominant-baseline="middle">{}</text>"#,
            sig9(lx + 30.0),
            sig9(ly),
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}
