//! Minimal deterministic SVG plots: markers, polylines, vertical guides.
//!
//! Every coordinate is printed with fixed precision so identical inputs give
//! byte-identical files.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Points,
    Line,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub mark: Mark,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>, mark: Mark) -> Self {
        Self {
            label: label.into(),
            points,
            mark,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
    /// Dashed vertical guides, e.g. the critical depth on a depth sweep.
    pub guides: Vec<(f64, String)>,
    /// Emphasised point, e.g. the minimum of a U-curve.
    pub highlight: Option<(f64, f64, String)>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e5).contains(&a) {
        return format!("{v:.1e}");
    }
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: &[f64], log: bool) -> Self {
        let t: Vec<f64> = values.iter().map(|v| if log { v.log10() } else { *v }).collect();
        let mut lo = t.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < 1e-12 * lo.abs().max(1.0) {
            let pad = if log { 0.5 } else { 0.1 * lo.abs().max(1.0) };
            lo -= pad;
            hi += pad;
        } else {
            let pad = 0.05 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
        Self { lo, hi, log }
    }

    fn unit(&self, v: f64) -> f64 {
        let t = if self.log { v.log10() } else { v };
        (t - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            if b - a >= 1 {
                return (a..=b).map(|e| 10f64.powi(e)).collect();
            }
            return (0..5)
                .map(|i| 10f64.powf(self.lo + (self.hi - self.lo) * (0.1 + 0.2 * i as f64)))
                .collect();
        }
        let span = self.hi - self.lo;
        let raw = span / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|s| span / s <= 6.0)
            .unwrap_or(10.0 * mag);
        let mut t = (self.lo / step).ceil() * step;
        let mut out = Vec::new();
        while t <= self.hi + 1e-9 * step {
            out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
            t += step;
        }
        out
    }
}

impl Plot {
    /// Render to SVG markup. Fails on an empty plot or values a log axis cannot show.
    pub fn render(&self) -> Result<String, String> {
        let pts: Vec<(f64, f64)> = self.series.iter().flat_map(|s| s.points.iter().copied()).collect();
        if pts.is_empty() {
            return Err("nothing to plot: every series is empty".into());
        }
        for &(x, y) in &pts {
            if !x.is_finite() || !y.is_finite() {
                return Err(format!("non-finite point ({x}, {y})"));
            }
            if (self.log_x && x <= 0.0) || (self.log_y && y <= 0.0) {
                return Err(format!("point ({x}, {y}) cannot be shown on a log axis"));
            }
        }
        let mut xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        xs.extend(self.guides.iter().map(|g| g.0).filter(|x| !self.log_x || *x > 0.0));
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let ax = Axis::fit(&xs, self.log_x);
        let ay = Axis::fit(&ys, self.log_y);
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let px = |x: f64| LEFT + ax.unit(x) * pw;
        let py = |y: f64| TOP + (1.0 - ay.unit(y)) * ph;

        let mut s = String::new();
        let w = &mut s;
        let _ = writeln!(
            w,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            esc(&self.title)
        );
        let _ = writeln!(
            w,
            r##"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#333"/>"##
        );
        for t in ax.ticks() {
            let x = px(t);
            let _ = writeln!(
                w,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                TOP + ph,
                TOP + ph + 5.0,
                TOP + ph + 19.0,
                label(t)
            );
        }
        for t in ay.ticks() {
            let y = py(t);
            let _ = writeln!(
                w,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT:.2}" y2="{y:.2}" stroke="#333"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT - 5.0,
                LEFT - 8.0,
                y + 4.0,
                label(t)
            );
        }
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 12.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            w,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            esc(&self.y_label)
        );

        for (x, text) in &self.guides {
            if self.log_x && *x <= 0.0 {
                continue;
            }
            let gx = px(*x);
            let _ = writeln!(
                w,
                r##"<line x1="{gx:.2}" y1="{TOP:.2}" x2="{gx:.2}" y2="{:.2}" stroke="#777" stroke-dasharray="5,4"/><text x="{:.2}" y="{:.2}" fill="#555">{}</text>"##,
                TOP + ph,
                gx + 4.0,
                TOP + 14.0,
                esc(text)
            );
        }

        for (i, series) in self.series.iter().enumerate() {
            let colour = PALETTE[i % PALETTE.len()];
            match series.mark {
                Mark::Line if series.points.len() > 1 => {
                    let path: Vec<String> = series
                        .points
                        .iter()
                        .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                        .collect();
                    let _ = writeln!(
                        w,
                        r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
                        path.join(" ")
                    );
                }
                _ => {
                    for &(x, y) in &series.points {
                        let _ = writeln!(
                            w,
                            r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{colour}"/>"#,
                            px(x),
                            py(y)
                        );
                    }
                }
            }
            let ly = TOP + 16.0 + 16.0 * i as f64;
            let lx = LEFT + pw - 150.0;
            let _ = writeln!(
                w,
                r#"<rect x="{lx:.2}" y="{:.2}" width="10" height="10" fill="{colour}"/><text x="{:.2}" y="{ly:.2}">{}</text>"#,
                ly - 9.0,
                lx + 15.0,
                esc(&series.label)
            );
        }

        if let Some((x, y, text)) = &self.highlight {
            let (hx, hy) = (px(*x), py(*y));
            let _ = writeln!(
                w,
                r##"<circle cx="{hx:.2}" cy="{hy:.2}" r="7" fill="none" stroke="#d62728" stroke-width="2"/><text x="{:.2}" y="{:.2}" fill="#d62728">{}</text>"##,
                hx + 9.0,
                hy + 18.0,
                esc(text)
            );
        }
        let _ = writeln!(w, "</svg>");
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ucurve() -> Plot {
        Plot {
            title: "loss vs depth".into(),
            x_label: "depth".into(),
            y_label: "loss".into(),
            series: vec![Series::new(
                "W=512",
                vec![(2.0, 3.945), (8.0, 3.543), (16.0, 3.435), (24.0, 3.468)],
                Mark::Line,
            )],
            guides: vec![(15.2, "D_crit".into())],
            highlight: Some((16.0, 3.435, "min 16L".into())),
            ..Plot::default()
        }
    }

    #[test]
    fn deterministic_and_well_formed() {
        let a = ucurve().render().unwrap();
        assert_eq!(a, ucurve().render().unwrap());
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert!(a.contains("D_crit") && a.contains("min 16L") && a.contains("polyline"));
    }

    #[test]
    fn single_point_renders_one_marker() {
        let p = Plot {
            series: vec![Series::new("one", vec![(1.0, 1.0)], Mark::Line)],
            ..Plot::default()
        };
        let s = p.render().unwrap();
        assert_eq!(s.matches("<circle").count(), 1);
    }

    #[test]
    fn empty_and_bad_log_rejected() {
        assert!(Plot::default().render().is_err());
        let p = Plot {
            log_y: true,
            series: vec![Series::new("x", vec![(1.0, 0.0)], Mark::Points)],
            ..Plot::default()
        };
        assert!(p.render().is_err());
    }

    #[test]
    fn text_is_escaped() {
        let p = Plot {
            title: "a<b & c".into(),
            series: vec![Series::new("s", vec![(1.0, 2.0), (2.0, 3.0)], Mark::Points)],
            ..Plot::default()
        };
        assert!(p.render().unwrap().contains("a&lt;b &amp; c"));
    }

    #[test]
    fn tick_labels() {
        assert_eq!(label(15.0), "15");
        assert_eq!(label(0.25), "0.25");
        assert_eq!(label(1e21), "1.0e21");
    }
}
