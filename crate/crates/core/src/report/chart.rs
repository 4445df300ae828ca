//! Runtime against thread count, as standalone SVG plus the underlying CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::Report;

type Series = BTreeMap<String, Vec<(usize, f64)>>;

fn series(report: &Report, window: &str) -> Series {
    let mut out: Series = BTreeMap::new();
    for c in report.cells.values().filter(|c| c.key.window == window) {
        out.entry(format!("{} {}", c.key.method, c.key.precision))
            .or_default()
            .push((c.key.threads, c.summary.center));
    }
    out
}

pub fn chart_csv(report: &Report, window: &str) -> String {
    let mut out = String::from("window,series,threads,center_ms\n");
    for (name, points) in series(report, window) {
        for (t, v) in points {
            let _ = writeln!(out, "{window},{name},{t},{v}");
        }
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

pub fn chart_svg(report: &Report, window: &str) -> String {
    let data = series(report, window);
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 70.0, 180.0, 30.0, 50.0);
    let max_t = data
        .values()
        .flatten()
        .map(|p| p.0)
        .max()
        .unwrap_or(1)
        .max(2) as f64;
    let max_v = data
        .values()
        .flatten()
        .map(|p| p.1)
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE)
        * 1.1;
    let x = |t: f64| left + (t - 1.0) / (max_t - 1.0) * (w - left - right);
    let y = |v: f64| h - bottom - v / max_v * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="18">runtime vs threads, window {window}</text>"#
    );
    let (x0, y0, x1, y1) = (left, h - bottom, w - right, top);
    let _ = writeln!(
        s,
        r#"<path d="M{x0},{y1} V{y0} H{x1}" stroke="black" fill="none"/>"#
    );
    for t in 1..=max_t as usize {
        let xt = x(t as f64);
        let _ = writeln!(
            s,
            r#"<text x="{xt:.1}" y="{:.1}" text-anchor="middle">{t}</text>"#,
            y0 + 16.0
        );
    }
    for i in 0..=4 {
        let v = max_v * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#,
            x0 - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">threads</text>"#,
        (x0 + x1) / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">ms</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    for (i, (name, points)) in data.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = points
            .iter()
            .map(|&(t, v)| format!("{:.1},{:.1}", x(t as f64), y(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" stroke="{colour}" fill="none" stroke-width="2"/>"#,
            path.join(" ")
        );
        for &(t, v) in points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{colour}"/>"#,
                x(t as f64),
                y(v)
            );
        }
        let ly = top + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{ly:.1}" fill="{colour}">{name}</text>"#,
            x1 + 10.0
        );
    }
    s.push_str("</svg>\n");
    s
}
