//! Minimal static SVG charts: stacked bars, scatter points and polylines.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

const PALETTE: [&str; 6] = ["#d9d9d9", "#9ecae1", "#4292c6", "#08519c", "#e6550d", "#31a354"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn c(x: f64) -> String {
    format!("{x:.2}")
}

struct Frame {
    out: String,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(title: &str, x_label: &str, y_label: &str, x: (f64, f64), y: (f64, f64)) -> Frame {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
            w = WIDTH,
            h = HEIGHT
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            c(WIDTH / 2.0),
            esc(title)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            c(LEFT + (WIDTH - LEFT - RIGHT) / 2.0),
            c(HEIGHT - 15.0),
            esc(x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="18" y="{y}" text-anchor="middle" transform="rotate(-90 18 {y})">{}</text>"#,
            esc(y_label),
            y = c(TOP + (HEIGHT - TOP - BOTTOM) / 2.0)
        );
        let mut f = Frame { out, x0: x.0, x1: x.1, y0: y.0, y1: y.1 };
        let (l, r, t, b) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
        let _ = writeln!(
            f.out,
            r#"<polyline fill="none" stroke="black" points="{},{} {},{} {},{}"/>"#,
            c(l), c(t), c(l), c(b), c(r), c(b)
        );
        for k in 0..=4 {
            let v = y.0 + (y.1 - y.0) * k as f64 / 4.0;
            let py = f.py(v);
            let _ = writeln!(
                f.out,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                c(l - 6.0),
                c(py + 4.0),
                tick(v)
            );
        }
        f
    }

    fn px(&self, v: f64) -> f64 {
        let span = if self.x1 > self.x0 { self.x1 - self.x0 } else { 1.0 };
        LEFT + (v - self.x0) / span * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        let span = if self.y1 > self.y0 { self.y1 - self.y0 } else { 1.0 };
        HEIGHT - BOTTOM - (v - self.y0) / span * (HEIGHT - TOP - BOTTOM)
    }

    fn legend(&mut self, row: usize, color: &str, label: &str) {
        let x = WIDTH - RIGHT + 12.0;
        let y = TOP + 18.0 * row as f64;
        let _ = writeln!(
            self.out,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            c(x),
            c(y),
            c(x + 14.0),
            c(y + 9.0),
            esc(label)
        );
    }

    fn x_tick(&mut self, px: f64, label: &str) {
        let _ = writeln!(
            self.out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            c(px),
            c(HEIGHT - BOTTOM + 16.0),
            esc(label)
        );
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// One bar per model; `series` holds one segment per stack level, each
/// with one value per bar (percentages summing to 100).
pub fn stacked_bars(title: &str, bars: &[String], series: &[(String, Vec<f64>)]) -> String {
    let mut f = Frame::new(title, "model", "% of schools", (0.0, bars.len() as f64), (0.0, 100.0));
    let slot = (WIDTH - LEFT - RIGHT) / bars.len().max(1) as f64;
    for (b, label) in bars.iter().enumerate() {
        let mut acc = 0.0;
        for (s, (_, values)) in series.iter().enumerate() {
            let v = values.get(b).copied().unwrap_or(0.0);
            let top = f.py(acc + v);
            let bottom = f.py(acc);
            let _ = writeln!(
                f.out,
                r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}"/>"#,
                c(LEFT + slot * b as f64 + slot * 0.15),
                c(top),
                c(slot * 0.7),
                c(bottom - top),
                PALETTE[s % PALETTE.len()]
            );
            acc += v;
        }
        f.x_tick(LEFT + slot * (b as f64 + 0.5), label);
    }
    for (s, (name, _)) in series.iter().enumerate().rev() {
        f.legend(series.len() - 1 - s, PALETTE[s % PALETTE.len()], name);
    }
    f.finish()
}

/// Scatter of (x, y, highlighted) points on a square domain.
pub fn scatter(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64, bool)], highlight: &str) -> String {
    let lo = points.iter().flat_map(|p| [p.0, p.1]).fold(f64::INFINITY, f64::min);
    let hi = points.iter().flat_map(|p| [p.0, p.1]).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 1.0) };
    let mut f = Frame::new(title, x_label, y_label, (lo, hi), (lo, hi));
    for tick_v in [lo, (lo + hi) / 2.0, hi] {
        let px = f.px(tick_v);
        f.x_tick(px, &tick(tick_v));
    }
    let _ = writeln!(
        f.out,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4 3"/>"##,
        c(f.px(lo)),
        c(f.py(lo)),
        c(f.px(hi)),
        c(f.py(hi))
    );
    // highlighted points last so they sit on top
    for pass in [false, true] {
        for &(x, y, h) in points.iter().filter(|p| p.2 == pass) {
            let color = if h { PALETTE[4] } else { PALETTE[2] };
            let _ = writeln!(
                f.out,
                r#"<circle cx="{}" cy="{}" r="1.8" fill="{color}" fill-opacity="0.7"/>"#,
                c(f.px(x)),
                c(f.py(y))
            );
        }
    }
    f.legend(0, PALETTE[2], "other");
    f.legend(1, PALETTE[4], highlight);
    f.finish()
}

/// Polylines over categorical x positions.
pub fn lines(title: &str, y_label: &str, x_labels: &[&str], series: &[(String, Vec<f64>)], y_range: (f64, f64)) -> String {
    let k = x_labels.len().max(2);
    let mut f = Frame::new(title, "model family", y_label, (0.0, (k - 1) as f64), y_range);
    for (i, label) in x_labels.iter().enumerate() {
        let px = f.px(i as f64);
        f.x_tick(px, label);
    }
    for (s, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[(s + 2) % PALETTE.len()];
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{},{}", c(f.px(i as f64)), c(f.py(v))))
            .collect();
        let _ = writeln!(
            f.out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        f.legend(s, color, name);
    }
    f.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed() {
        let bars = stacked_bars(
            "t",
            &["Raw".into(), "VA".into()],
            &[("small".into(), vec![40.0, 60.0]), ("large".into(), vec![60.0, 40.0])],
        );
        assert!(bars.starts_with("<svg") && bars.ends_with("</svg>\n"));
        assert_eq!(bars.matches("<rect").count(), 1 + 4 + 2);

        let sc = scatter("s", "x", "y", &[(0.0, 0.1, false), (1.0, 0.9, true)], "grammar");
        assert_eq!(sc.matches("<circle").count(), 2);

        let ln = lines("l", "r", &["Raw", "VA"], &[("a".into(), vec![1.0, 0.5])], (0.0, 1.0));
        assert_eq!(ln.matches("stroke-width=\"2\"").count(), 1);
        assert!(!ln.contains("NaN"));
    }

    #[test]
    fn labels_are_escaped() {
        let s = lines("a<b & c", "y", &["x"], &[], (0.0, 1.0));
        assert!(s.contains("a&lt;b &amp; c"));
    }
}
