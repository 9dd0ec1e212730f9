//! Static SVG line charts for sweep reports: one line per metric, score
//! against the number of episodes.

use editloop_core::exp::SweepRow;
use editloop_core::metrics::Metric;
use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_BOTTOM: f64 = 50.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_RIGHT: f64 = 150.0;

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub fn sweep_svg(rows: &[SweepRow], metrics: &[Metric], title: &str) -> String {
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let splits: Vec<usize> = rows.iter().map(|r| r.episodes).collect();
    let max_split = splits.iter().copied().max().unwrap_or(1) as f64;
    let min_split = splits.iter().copied().min().unwrap_or(1) as f64;
    let x_of = |m: usize| {
        if (max_split - min_split).abs() < f64::EPSILON {
            MARGIN_LEFT + plot_w / 2.0
        } else {
            MARGIN_LEFT + (m as f64 - min_split) / (max_split - min_split) * plot_w
        }
    };
    let y_of = |v: f64| MARGIN_TOP + (1.0 - v.clamp(0.0, 1.0)) * plot_h;

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = write!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = write!(
        svg,
        r#"<text x="{}" y="18" font-family="sans-serif" font-size="14" text-anchor="middle">{title}</text>"#,
        MARGIN_LEFT + plot_w / 2.0
    );

    // Axes and gridlines.
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let y = y_of(v);
        let _ = write!(
            svg,
            r##"<line x1="{MARGIN_LEFT}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd" stroke-width="1"/>"##,
            MARGIN_LEFT + plot_w
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.1}</text>"#,
            MARGIN_LEFT - 6.0,
            y + 4.0
        );
    }
    for &m in &splits {
        let x = x_of(m);
        let _ = write!(
            svg,
            r#"<text x="{x}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{m}</text>"#,
            MARGIN_TOP + plot_h + 18.0
        );
    }
    let _ = write!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">episodes</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );
    let _ = write!(
        svg,
        r#"<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{}" stroke="black"/>"#,
        MARGIN_TOP + plot_h
    );
    let _ = write!(
        svg,
        r#"<line x1="{MARGIN_LEFT}" y1="{}" x2="{}" y2="{0}" stroke="black"/>"#,
        MARGIN_TOP + plot_h,
        MARGIN_LEFT + plot_w
    );

    // One polyline per metric, with CI whiskers.
    for (mi, &metric) in metrics.iter().enumerate() {
        let color = COLORS[mi % COLORS.len()];
        let mut points = String::new();
        for row in rows {
            if let Some((_, v)) = row.report.aggregate.iter().find(|(m, _)| *m == metric) {
                let _ = write!(points, "{},{} ", x_of(row.episodes), y_of(*v));
            }
            if let Some((_, (lo, hi))) = row.report.ci.iter().find(|(m, _)| *m == metric) {
                let x = x_of(row.episodes);
                let _ = write!(
                    svg,
                    r#"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="{color}" stroke-width="1" opacity="0.6"/>"#,
                    y_of(*lo),
                    y_of(*hi)
                );
            }
        }
        let _ = write!(
            svg,
            r#"<polyline points="{points}" fill="none" stroke="{color}" stroke-width="2"/>"#
        );
        for row in rows {
            if let Some((_, v)) = row.report.aggregate.iter().find(|(m, _)| *m == metric) {
                let _ = write!(
                    svg,
                    r#"<circle cx="{}" cy="{}" r="3" fill="{color}"/>"#,
                    x_of(row.episodes),
                    y_of(*v)
                );
            }
        }
        let ly = MARGIN_TOP + 16.0 * mi as f64 + 10.0;
        let lx = MARGIN_LEFT + plot_w + 14.0;
        let _ = write!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 18.0
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            lx + 24.0,
            ly + 4.0,
            metric.name()
        );
    }
    svg.push_str("</svg>");
    svg
}
