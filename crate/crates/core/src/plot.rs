//! Minimal SVG charts for reports. Display only; nothing reads them back.

use std::fmt::Write as _;

use crate::artifact::Stamp;

const W: f64 = 640.0;
const H: f64 = 420.0;
const M: f64 = 56.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (x0, x1) = bounds(xs);
        let (y0, y1) = bounds(ys);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        M + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * M)
    }

    fn py(&self, y: f64) -> f64 {
        H - M - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * M)
    }
}

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in v.filter(|x| x.is_finite()) {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn open(title: &str, xlabel: &str, ylabel: &str, f: &Frame, stamp: &Stamp) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, "{}", stamp.svg_comment());
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * M,
        H - 2.0 * M
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="30" text-anchor="middle" font-size="16">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        W / 2.0,
        H - 14.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
    for (v, x) in [(f.x0, M), (f.x1, W - M)] {
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="middle" font-size="10">{v:.2}</text>"#,
            H - M + 14.0
        );
    }
    for (v, y) in [(f.y0, H - M), (f.y1, M)] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" text-anchor="end" font-size="10">{v:.2}</text>"#,
            M - 4.0
        );
    }
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Predicted against observed, with the 1:1 line.
pub fn scatter_svg(obs: &[f64], pred: &[f64], title: &str, stamp: &Stamp) -> String {
    let all = obs.iter().chain(pred.iter()).copied();
    let (lo, hi) = bounds(all);
    let f = Frame {
        x0: lo,
        x1: hi,
        y0: lo,
        y1: hi,
    };
    let mut s = open(title, "observed (ppm)", "predicted (ppm)", &f, stamp);
    let _ = writeln!(
        s,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4"/>"#,
        f.px(lo),
        f.py(lo),
        f.px(hi),
        f.py(hi)
    );
    for (o, p) in obs.iter().zip(pred) {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="steelblue" fill-opacity="0.6"/>"#,
            f.px(*o),
            f.py(*p)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn histogram_svg(values: &[f64], bins: usize, title: &str, stamp: &Stamp) -> String {
    let bins = bins.max(1);
    let (lo, hi) = bounds(values.iter().copied());
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values.iter().filter(|v| v.is_finite()) {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let top = *counts.iter().max().unwrap_or(&1) as f64;
    let f = Frame {
        x0: lo,
        x1: hi,
        y0: 0.0,
        y1: top.max(1.0),
    };
    let mut s = open(title, "residual (ppm)", "count", &f, stamp);
    for (i, c) in counts.iter().enumerate() {
        let x = lo + i as f64 * width;
        let (px, py) = (f.px(x), f.py(*c as f64));
        let _ = writeln!(
            s,
            r#"<rect x="{px:.2}" y="{py:.2}" width="{:.2}" height="{:.2}" fill="steelblue" stroke="white"/>"#,
            f.px(x + width) - px,
            f.py(0.0) - py
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Named polylines over a shared x axis; `None` breaks a line.
pub fn line_svg(
    x: &[f64],
    series: &[(&str, Vec<Option<f64>>)],
    title: &str,
    xlabel: &str,
    ylabel: &str,
    stamp: &Stamp,
) -> String {
    const COLORS: [&str; 4] = ["steelblue", "darkorange", "seagreen", "firebrick"];
    let ys = series
        .iter()
        .flat_map(|(_, v)| v.iter().flatten().copied())
        .collect::<Vec<_>>();
    let f = Frame::fit(x.iter().copied(), ys.iter().copied());
    let mut s = open(title, xlabel, ylabel, &f, stamp);
    for (k, (name, v)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut seg: Vec<String> = Vec::new();
        let flush = |seg: &mut Vec<String>, s: &mut String| {
            if seg.len() > 1 {
                let _ = writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                    seg.join(" ")
                );
            }
            seg.clear();
        };
        for (xi, yi) in x.iter().zip(v) {
            match yi {
                Some(y) => seg.push(format!("{:.2},{:.2}", f.px(*xi), f.py(*y))),
                None => flush(&mut seg, &mut s),
            }
        }
        flush(&mut seg, &mut s);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}">{}</text>"#,
            W - M - 120.0,
            M + 16.0 + 14.0 * k as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}
