//! Static SVG line charts for forecast profiles and sweep curves.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::report::{ProfileSeries, SweepRow};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLOURS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

pub struct Line {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn bounds(lines: &[Line]) -> (f64, f64, f64, f64) {
    let pts = lines.iter().flat_map(|l| l.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |lo: f64, hi: f64| {
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    (x0, x1, y0, y1)
}

/// Renders `lines` on shared axes with a legend.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, lines: &[Line]) -> String {
    let (x0, x1, y0, y1) = bounds(lines);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" stroke="black" fill="none"/>"#
    );
    for (v, y) in [(y0, bottom), (y1, top)] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#,
            left - 4.0,
            y + 4.0,
            v
        );
    }
    for (v, x) in [(x0, left), (x1, right)] {
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#,
            bottom + 14.0,
            trim(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (i, line) in lines.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        let pts: Vec<String> = line
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" stroke="{colour}" stroke-width="1.5" fill="none"/>"#,
                pts.join(" ")
            );
        }
        let ly = top + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="10" height="3" fill="{colour}"/>"#,
            right - 110.0,
            ly - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}">{}</text>"#,
            right - 95.0,
            escape(&line.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn trim(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

/// Observed history, actual future and predicted future of one thread.
pub fn profile_chart(series: &ProfileSeries) -> String {
    let h = series.history.len();
    let indexed = |offset: usize, v: &[f64]| {
        v.iter()
            .enumerate()
            .map(|(k, &y)| ((offset + k) as f64, y))
            .collect()
    };
    let lines = [
        Line {
            label: "observed".into(),
            points: indexed(0, &series.history),
        },
        Line {
            label: "actual".into(),
            points: indexed(h, &series.actual),
        },
        Line {
            label: "forecast".into(),
            points: indexed(h, &series.predicted),
        },
    ];
    line_chart(
        &format!("thread {}", series.thread_id),
        "window",
        "intensity",
        &lines,
    )
}

/// Seed-averaged RMSE and MFE against the swept value.
pub fn sweep_chart(rows: &[SweepRow]) -> String {
    let mut by_value: BTreeMap<String, Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        by_value.entry(r.value.clone()).or_default().push(r);
    }
    let mut cells: Vec<(f64, &Vec<&SweepRow>)> = by_value
        .iter()
        .enumerate()
        .map(|(i, (v, rs))| (v.parse().unwrap_or(i as f64), rs))
        .collect();
    cells.sort_by(|a, b| a.0.total_cmp(&b.0));
    let avg = |rs: &[&SweepRow], f: fn(&SweepRow) -> f64| {
        rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64
    };
    let lines = [
        Line {
            label: "rmse".into(),
            points: cells
                .iter()
                .map(|(x, rs)| (*x, avg(rs, |r| r.rmse)))
                .collect(),
        },
        Line {
            label: "mfe".into(),
            points: cells
                .iter()
                .map(|(x, rs)| (*x, avg(rs, |r| r.mfe)))
                .collect(),
        },
    ];
    let param = rows.first().map(|r| r.param.as_str()).unwrap_or("value");
    line_chart(&format!("sweep over {param}"), param, "error", &lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_contains_one_polyline_per_line() {
        let s = ProfileSeries {
            thread_id: "t<1>".into(),
            history: vec![1.0, 2.0],
            predicted: vec![2.0, 3.0],
            actual: vec![2.5],
        };
        let svg = profile_chart(&s);
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains("t&lt;1&gt;"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn sweep_chart_averages_seeds() {
        let row = |v: &str, seed, rmse| SweepRow {
            param: "delta".into(),
            value: v.into(),
            seed,
            pcc: None,
            rmse,
            mfe: 0.0,
        };
        let svg = sweep_chart(&[row("5", 1, 1.0), row("5", 2, 3.0), row("10", 1, 2.0)]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        let empty = line_chart("x", "a", "b", &[]);
        assert!(empty.contains("</svg>"));
    }
}
