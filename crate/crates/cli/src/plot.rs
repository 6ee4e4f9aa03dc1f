//! Static SVG plots of aggregated campaign results. Hand-rolled SVG so the
//! output is dependency-free, diffable, and timestamp-free: identical
//! inputs produce identical bytes.

use riskal_core::metrics::{AggregatePoint, AggregateResult};
use std::fmt::Write;

const MARGIN_LEFT: f64 = 62.0;
const MARGIN_RIGHT: f64 = 18.0;
const MARGIN_TOP: f64 = 34.0;
const MARGIN_BOTTOM: f64 = 46.0;

fn color_for(name: &str) -> &'static str {
    match name {
        "gmm" => "#1f77b4",
        "mrvm1" => "#2ca02c",
        "mrvm2" => "#d62728",
        _ => "#7f7f7f",
    }
}

struct Panel {
    origin_x: f64,
    origin_y: f64,
    width: f64,
    height: f64,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Panel {
    fn x(&self, v: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(1e-9);
        self.origin_x + (v - self.x_min) / span * self.width
    }

    fn y(&self, v: f64) -> f64 {
        let span = (self.y_max - self.y_min).max(1e-9);
        self.origin_y + self.height - (v - self.y_min) / span * self.height
    }

    fn frame(&self, out: &mut String, title: &str, x_label: &str, y_label: &str) {
        let _ = write!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#333" stroke-width="1"/>"##,
            self.origin_x, self.origin_y, self.width, self.height
        );
        let _ = write!(
            out,
            r##"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle" font-family="sans-serif">{}</text>"##,
            self.origin_x + self.width / 2.0,
            self.origin_y - 10.0,
            title
        );
        let _ = write!(
            out,
            r##"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle" font-family="sans-serif">{}</text>"##,
            self.origin_x + self.width / 2.0,
            self.origin_y + self.height + 34.0,
            x_label
        );
        let _ = write!(
            out,
            r##"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 {:.2} {:.2})">{}</text>"##,
            self.origin_x - 44.0,
            self.origin_y + self.height / 2.0,
            self.origin_x - 44.0,
            self.origin_y + self.height / 2.0,
            y_label
        );
        // axis ticks: 5 per axis
        for i in 0..=4 {
            let fx = self.x_min + (self.x_max - self.x_min) * i as f64 / 4.0;
            let px = self.x(fx);
            let _ = write!(
                out,
                r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#333" stroke-width="1"/>"##,
                self.origin_y + self.height,
                self.origin_y + self.height + 4.0
            );
            let _ = write!(
                out,
                r##"<text x="{px:.2}" y="{:.2}" font-size="10" text-anchor="middle" font-family="sans-serif">{}</text>"##,
                self.origin_y + self.height + 16.0,
                format_tick(fx)
            );
            let fy = self.y_min + (self.y_max - self.y_min) * i as f64 / 4.0;
            let py = self.y(fy);
            let _ = write!(
                out,
                r##"<line x1="{:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#333" stroke-width="1"/>"##,
                self.origin_x - 4.0,
                self.origin_x
            );
            let _ = write!(
                out,
                r##"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end" font-family="sans-serif">{}</text>"##,
                self.origin_x - 7.0,
                py + 3.5,
                format_tick(fy)
            );
        }
    }
}

fn format_tick(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 && v.abs() < 1e7 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}

fn svg_open(width: f64, height: f64) -> String {
    format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">
<rect width="{width:.0}" height="{height:.0}" fill="white"/>"##
    )
}

fn legend(out: &mut String, names: &[&str], x: f64, y: f64) {
    for (i, name) in names.iter().enumerate() {
        let ly = y + 16.0 * i as f64;
        let _ = write!(
            out,
            r##"<line x1="{x:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="2"/>"##,
            x + 18.0,
            color_for(name)
        );
        let _ = write!(
            out,
            r##"<text x="{:.2}" y="{:.2}" font-size="11" font-family="sans-serif">{name}</text>"##,
            x + 23.0,
            ly + 3.5
        );
    }
}

fn curve_with_band(out: &mut String, panel: &Panel, points: &[AggregatePoint], color: &str) {
    if points.is_empty() {
        return;
    }
    if points.len() > 1 {
        let mut band = String::new();
        for p in points {
            let _ = write!(band, "{:.2},{:.2} ", panel.x(p.query_count as f64), panel.y(p.q75));
        }
        for p in points.iter().rev() {
            let _ = write!(band, "{:.2},{:.2} ", panel.x(p.query_count as f64), panel.y(p.q25));
        }
        let _ = write!(
            out,
            r##"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"##,
            band.trim_end()
        );
    }
    let mut line = String::new();
    for p in points {
        let _ = write!(line, "{:.2},{:.2} ", panel.x(p.query_count as f64), panel.y(p.median));
    }
    let _ = write!(
        out,
        r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"##,
        line.trim_end()
    );
    if points.len() == 1 {
        let p = &points[0];
        let _ = write!(
            out,
            r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"##,
            panel.x(p.query_count as f64),
            panel.y(p.median)
        );
    }
}

/// Median curves with interquartile bands: decision accuracy and macro f1
/// versus the number of label queries, one panel per metric.
pub fn curves_svg(aggregates: &[(String, AggregateResult)]) -> String {
    let panel_width = 330.0;
    let panel_height = 250.0;
    let width = MARGIN_LEFT * 2.0 + panel_width * 2.0 + MARGIN_RIGHT * 2.0 + 30.0;
    let height = MARGIN_TOP + panel_height + MARGIN_BOTTOM;
    let mut out = svg_open(width, height);

    let x_max = aggregates
        .iter()
        .flat_map(|(_, a)| {
            a.decision_accuracy
                .iter()
                .chain(&a.f1)
                .map(|p| p.query_count)
        })
        .max()
        .unwrap_or(1) as f64;
    let x_min = aggregates
        .iter()
        .flat_map(|(_, a)| {
            a.decision_accuracy
                .iter()
                .chain(&a.f1)
                .map(|p| p.query_count)
        })
        .min()
        .unwrap_or(0) as f64;

    for (idx, (metric_name, pick)) in [
        (
            "decision accuracy",
            Box::new(|a: &AggregateResult| a.decision_accuracy.clone())
                as Box<dyn Fn(&AggregateResult) -> Vec<AggregatePoint>>,
        ),
        ("f1 score", Box::new(|a: &AggregateResult| a.f1.clone())),
    ]
    .into_iter()
    .enumerate()
    {
        let panel = Panel {
            origin_x: MARGIN_LEFT + idx as f64 * (panel_width + MARGIN_LEFT + 30.0),
            origin_y: MARGIN_TOP,
            width: panel_width,
            height: panel_height,
            x_min,
            x_max: x_max.max(x_min + 1.0),
            y_min: 0.0,
            y_max: 1.0,
        };
        panel.frame(&mut out, metric_name, "number of label queries", metric_name);
        for (name, aggregate) in aggregates {
            curve_with_band(&mut out, &panel, &pick(aggregate), color_for(name));
        }
    }
    let names: Vec<&str> = aggregates.iter().map(|(n, _)| n.as_str()).collect();
    legend(&mut out, &names, width - 150.0, MARGIN_TOP + 14.0);
    out.push_str("</svg>\n");
    out
}

/// Distribution of total query counts, one panel per classifier.
pub fn histogram_svg(aggregates: &[(String, AggregateResult)]) -> String {
    let panel_width = 300.0;
    let panel_height = 180.0;
    let rows = aggregates.len().max(1) as f64;
    let width = MARGIN_LEFT + panel_width + MARGIN_RIGHT + 170.0;
    let height = MARGIN_TOP + rows * (panel_height + MARGIN_BOTTOM);
    let mut out = svg_open(width, height);

    let x_lo = aggregates
        .iter()
        .flat_map(|(_, a)| a.query_histogram.first().map(|(b, _)| *b))
        .min()
        .unwrap_or(0) as f64;
    let x_hi = aggregates
        .iter()
        .flat_map(|(_, a)| a.query_histogram.last().map(|(b, _)| *b))
        .max()
        .unwrap_or(1) as f64;

    for (idx, (name, aggregate)) in aggregates.iter().enumerate() {
        let max_count = aggregate
            .query_histogram
            .iter()
            .map(|(_, c)| *c)
            .max()
            .unwrap_or(1) as f64;
        let panel = Panel {
            origin_x: MARGIN_LEFT,
            origin_y: MARGIN_TOP + idx as f64 * (panel_height + MARGIN_BOTTOM),
            width: panel_width,
            height: panel_height,
            x_min: x_lo - 0.5,
            x_max: (x_hi + 0.5).max(x_lo + 0.5),
            y_min: 0.0,
            y_max: max_count.max(1.0),
        };
        panel.frame(
            &mut out,
            &format!("{name}: total queries over runs"),
            "total queries",
            "runs",
        );
        let bar_width = (panel.x(1.0) - panel.x(0.0)).clamp(1.0, 24.0);
        for (bin, count) in &aggregate.query_histogram {
            if *count == 0 {
                continue;
            }
            let cx = panel.x(*bin as f64);
            let top = panel.y(*count as f64);
            let base = panel.y(0.0);
            let _ = write!(
                out,
                r##"<rect x="{:.2}" y="{top:.2}" width="{bar_width:.2}" height="{:.2}" fill="{}" fill-opacity="0.8"/>"##,
                cx - bar_width / 2.0,
                base - top,
                color_for(name)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Query frequency per observation index, one panel per classifier.
pub fn per_observation_svg(aggregates: &[(String, AggregateResult)]) -> String {
    let panel_width = 560.0;
    let panel_height = 130.0;
    let rows = aggregates.len().max(1) as f64;
    let width = MARGIN_LEFT + panel_width + MARGIN_RIGHT;
    let height = MARGIN_TOP + rows * (panel_height + MARGIN_BOTTOM);
    let mut out = svg_open(width, height);

    let n = aggregates
        .iter()
        .map(|(_, a)| a.per_observation_frequency.len())
        .max()
        .unwrap_or(1);

    for (idx, (name, aggregate)) in aggregates.iter().enumerate() {
        let panel = Panel {
            origin_x: MARGIN_LEFT,
            origin_y: MARGIN_TOP + idx as f64 * (panel_height + MARGIN_BOTTOM),
            width: panel_width,
            height: panel_height,
            x_min: 0.0,
            x_max: (n.saturating_sub(1)).max(1) as f64,
            y_min: 0.0,
            y_max: 1.0,
        };
        panel.frame(
            &mut out,
            &format!("{name}: query frequency per observation"),
            "observation index",
            "frequency",
        );
        let mut line = String::new();
        for (i, f) in aggregate.per_observation_frequency.iter().enumerate() {
            let _ = write!(line, "{:.2},{:.2} ", panel.x(i as f64), panel.y(*f));
        }
        let _ = write!(
            out,
            r##"<polyline points="{}" fill="none" stroke="{}" stroke-width="1"/>"##,
            line.trim_end(),
            color_for(name)
        );
    }
    out.push_str("</svg>\n");
    out
}
