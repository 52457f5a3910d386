//! Minimal static SVG line charts.
//!
//! The experiment subcommands emit CSV as their canonical output; the charts
//! here are a convenience rendering of the same numbers. Everything is
//! written by hand into one self-contained `<svg>` element — no stylesheet,
//! no script, no external renderer — so the files open anywhere and byte
//! reruns are reproducible.

use std::fmt::Write;

/// One polyline: a label for the legend, a stroke color, and data points.
pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
}

/// A complete line chart. Log axes fall back to linear when any value on
/// that axis is nonpositive (a log map has nowhere to put a zero, and the
/// convergence chart's null test produces exact zeros).
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

/// Canvas and plot-rectangle geometry, in user units.
const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 78.0;
const RIGHT: f64 = 696.0;
const TOP: f64 = 52.0;
const BOTTOM: f64 = 418.0;
const TICKS: usize = 5;

/// One axis after the log/linear decision: transformed bounds plus how to
/// invert a transformed coordinate back into a data value for tick labels.
struct Axis {
    log: bool,
    min: f64,
    max: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, want_log: bool) -> Axis {
        let raw: Vec<f64> = values.collect();
        let log = want_log && raw.iter().all(|&v| v > 0.0);
        let t: Vec<f64> = raw.iter().map(|&v| if log { v.log10() } else { v }).collect();
        let mut min = t.iter().copied().fold(f64::INFINITY, f64::min);
        let mut max = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(min.is_finite() && max.is_finite()) {
            (min, max) = (0.0, 1.0);
        }
        if min == max {
            // A flat axis still needs extent to draw on.
            let pad = if min == 0.0 { 1.0 } else { min.abs() * 0.5 };
            (min, max) = (min - pad, max + pad);
        } else {
            let pad = (max - min) * 0.06;
            (min, max) = (min - pad, max + pad);
        }
        Axis { log, min, max }
    }

    /// Transformed coordinate of a data value.
    fn place(&self, v: f64) -> f64 {
        let t = if self.log { v.log10() } else { v };
        (t - self.min) / (self.max - self.min)
    }

    /// Data value at tick fraction `f` in `[0, 1]`.
    fn tick_value(&self, f: f64) -> f64 {
        let t = self.min + f * (self.max - self.min);
        if self.log {
            10f64.powf(t)
        } else {
            t
        }
    }
}

/// Tick label: plain decimal in a sane range, scientific outside it.
fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !(1e-3..1e4).contains(&v.abs()) {
        return format!("{v:.2e}");
    }
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

/// Escapes the three characters XML text content cannot hold.
fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    /// Renders the chart to a complete standalone SVG document.
    pub fn render(&self) -> String {
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
        let ys = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
        let x_axis = Axis::fit(xs, self.log_x);
        let y_axis = Axis::fit(ys, self.log_y);
        let px = |v: f64| LEFT + x_axis.place(v) * (RIGHT - LEFT);
        let py = |v: f64| BOTTOM - y_axis.place(v) * (BOTTOM - TOP);

        let mut svg = String::new();
        let w = &mut svg;
        writeln!(
            w,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
             font-family=\"sans-serif\" font-size=\"13\">"
        )
        .unwrap();
        writeln!(w, "  <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>").unwrap();
        writeln!(
            w,
            "  <text x=\"{:.1}\" y=\"26\" text-anchor=\"middle\" font-size=\"16\">{}</text>",
            (LEFT + RIGHT) / 2.0,
            escape(&self.title)
        )
        .unwrap();

        // Gridlines with value labels on both axes.
        for i in 0..=TICKS {
            let f = i as f64 / TICKS as f64;
            let gx = LEFT + f * (RIGHT - LEFT);
            let gy = BOTTOM - f * (BOTTOM - TOP);
            writeln!(
                w,
                "  <line x1=\"{gx:.1}\" y1=\"{TOP}\" x2=\"{gx:.1}\" y2=\"{BOTTOM}\" \
                 stroke=\"#dddddd\"/>"
            )
            .unwrap();
            writeln!(
                w,
                "  <line x1=\"{LEFT}\" y1=\"{gy:.1}\" x2=\"{RIGHT}\" y2=\"{gy:.1}\" \
                 stroke=\"#dddddd\"/>"
            )
            .unwrap();
            writeln!(
                w,
                "  <text x=\"{gx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
                BOTTOM + 20.0,
                fmt_tick(x_axis.tick_value(f))
            )
            .unwrap();
            writeln!(
                w,
                "  <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
                LEFT - 8.0,
                gy + 4.0,
                fmt_tick(y_axis.tick_value(f))
            )
            .unwrap();
        }

        // Axis frame and titles.
        writeln!(
            w,
            "  <rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" \
             stroke=\"#333333\"/>",
            RIGHT - LEFT,
            BOTTOM - TOP
        )
        .unwrap();
        writeln!(
            w,
            "  <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            (LEFT + RIGHT) / 2.0,
            HEIGHT - 14.0,
            escape(&self.x_label)
        )
        .unwrap();
        writeln!(
            w,
            "  <text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" \
             transform=\"rotate(-90 18 {:.1})\">{}</text>",
            (TOP + BOTTOM) / 2.0,
            (TOP + BOTTOM) / 2.0,
            escape(&self.y_label)
        )
        .unwrap();

        // Data: one polyline plus point markers per series.
        for s in &self.series {
            let path: Vec<String> =
                s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            writeln!(
                w,
                "  <polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>",
                path.join(" "),
                s.color
            )
            .unwrap();
            for &(x, y) in &s.points {
                writeln!(
                    w,
                    "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>",
                    px(x),
                    py(y),
                    s.color
                )
                .unwrap();
            }
        }

        // Legend, top-right inside the frame.
        for (i, s) in self.series.iter().enumerate() {
            let ly = TOP + 18.0 + 20.0 * i as f64;
            writeln!(
                w,
                "  <line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" \
                 stroke=\"{}\" stroke-width=\"2\"/>",
                RIGHT - 150.0,
                RIGHT - 120.0,
                s.color
            )
            .unwrap();
            writeln!(
                w,
                "  <text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
                RIGHT - 112.0,
                ly + 4.0,
                escape(&s.label)
            )
            .unwrap();
        }

        writeln!(w, "</svg>").unwrap();
        svg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart(log_y: bool, points: Vec<(f64, f64)>) -> Chart {
        Chart {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_x: false,
            log_y,
            series: vec![Series { label: "s".into(), color: "#1f6feb", points }],
        }
    }

    #[test]
    fn renders_a_well_formed_document_with_legend_labels() {
        let mut c = chart(false, vec![(1.0, 2.0), (2.0, 3.0), (3.0, 1.0)]);
        c.series.push(Series {
            label: "base <&> line".into(),
            color: "#d29922",
            points: vec![(1.0, 1.5), (3.0, 1.5)],
        });
        let svg = c.render();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        // Labels are escaped, never raw.
        assert!(svg.contains("base &lt;&amp;&gt; line"));
        assert!(!svg.contains("<&>"));
    }

    #[test]
    fn log_axis_falls_back_to_linear_on_zeros() {
        // A zero on a requested log axis must not produce NaN coordinates.
        let svg = chart(true, vec![(1.0, 0.0), (2.0, 0.0)]).render();
        assert!(!svg.contains("NaN"));
        assert!(svg.contains("<polyline"));
    }

    #[test]
    fn single_point_series_still_renders() {
        let svg = chart(true, vec![(64.0, 0.5)]).render();
        assert!(!svg.contains("NaN"));
        assert!(svg.contains("<circle"));
    }

    #[test]
    fn tick_labels_use_plain_decimals_in_range() {
        assert_eq!(fmt_tick(0.0), "0");
        assert_eq!(fmt_tick(2.5), "2.5");
        assert_eq!(fmt_tick(64.0), "64");
        assert_eq!(fmt_tick(1.25e-7), "1.25e-7");
    }
}
