//! Self-contained SVG line charts with shaded bands. Only polylines, filled
//! band paths and text labels; output is deterministic byte for byte.

/// One line with an optional min/max band, `(x, lo, hi)` per band point.
#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub band: Vec<(f64, f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 52.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#2ca02c", "#d62728", "#ff7f0e", "#9467bd", "#8c564b"];

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 || (v.fract() == 0.0 && v.abs() < 1e4) {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

impl LineChart {
    pub fn to_svg(&self) -> String {
        let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;

        // bounds over finite values only
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for s in &self.series {
            for &(x, y) in &s.points {
                if x.is_finite() && y.is_finite() {
                    xs.push(x);
                    ys.push(y);
                }
            }
            for &(x, lo, hi) in &s.band {
                if x.is_finite() {
                    xs.push(x);
                }
                if lo.is_finite() {
                    ys.push(lo);
                }
                if hi.is_finite() {
                    ys.push(hi);
                }
            }
        }
        let (x_min, x_max) = bounds(&xs);
        let (y_min, y_max) = bounds(&ys);

        let to_px = |x: f64, y: f64| -> (f64, f64) {
            let px = MARGIN_LEFT + (x - x_min) / (x_max - x_min) * plot_w;
            // clamp keeps infinity markers on the chart edge
            let yc = y.clamp(y_min, y_max);
            let py = MARGIN_TOP + (1.0 - (yc - y_min) / (y_max - y_min)) * plot_h;
            (px, py)
        };

        let mut svg = String::new();
        svg.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
             viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
        ));
        svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" \
             text-anchor=\"middle\">{}</text>\n",
            MARGIN_LEFT + plot_w / 2.0,
            escape(&self.title)
        ));

        // axes
        svg.push_str(&format!(
            "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
             <line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n",
            l = fmt(MARGIN_LEFT),
            r = fmt(MARGIN_LEFT + plot_w),
            t = fmt(MARGIN_TOP),
            b = fmt(MARGIN_TOP + plot_h),
        ));

        // ticks
        for i in 0..=4 {
            let fx = i as f64 / 4.0;
            let x = x_min + fx * (x_max - x_min);
            let (px, _) = to_px(x, y_min);
            svg.push_str(&format!(
                "<line x1=\"{px}\" y1=\"{b}\" x2=\"{px}\" y2=\"{b2}\" stroke=\"black\"/>\n\
                 <text x=\"{px}\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"11\" \
                 text-anchor=\"middle\">{label}</text>\n",
                px = fmt(px),
                b = fmt(MARGIN_TOP + plot_h),
                b2 = fmt(MARGIN_TOP + plot_h + 5.0),
                ty = fmt(MARGIN_TOP + plot_h + 18.0),
                label = fmt_tick(x),
            ));
            let y = y_min + fx * (y_max - y_min);
            let (_, py) = to_px(x_min, y);
            svg.push_str(&format!(
                "<line x1=\"{l2}\" y1=\"{py}\" x2=\"{l}\" y2=\"{py}\" stroke=\"black\"/>\n\
                 <text x=\"{tx}\" y=\"{tyy}\" font-family=\"sans-serif\" font-size=\"11\" \
                 text-anchor=\"end\">{label}</text>\n",
                l = fmt(MARGIN_LEFT),
                l2 = fmt(MARGIN_LEFT - 5.0),
                py = fmt(py),
                tx = fmt(MARGIN_LEFT - 8.0),
                tyy = fmt(py + 4.0),
                label = fmt_tick(y),
            ));
        }

        // axis labels
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"middle\">{}</text>\n",
            fmt(MARGIN_LEFT + plot_w / 2.0),
            fmt(HEIGHT - 12.0),
            escape(&self.x_label)
        ));
        svg.push_str(&format!(
            "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"middle\" transform=\"rotate(-90 16 {y})\">{}</text>\n",
            fmt(MARGIN_TOP + plot_h / 2.0),
            escape(&self.y_label),
            y = fmt(MARGIN_TOP + plot_h / 2.0),
        ));

        for (idx, series) in self.series.iter().enumerate() {
            let color = PALETTE[idx % PALETTE.len()];

            if series.band.len() >= 2 {
                let mut path = String::from("M");
                for (i, &(x, _, hi)) in series.band.iter().enumerate() {
                    let (px, py) = to_px(x, hi);
                    if i > 0 {
                        path.push_str(" L");
                    }
                    path.push_str(&format!("{} {}", fmt(px), fmt(py)));
                }
                for &(x, lo, _) in series.band.iter().rev() {
                    let (px, py) = to_px(x, lo);
                    path.push_str(&format!(" L{} {}", fmt(px), fmt(py)));
                }
                path.push('Z');
                svg.push_str(&format!(
                    "<path d=\"{path}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n"
                ));
            }

            if !series.points.is_empty() {
                let pts: Vec<String> = series
                    .points
                    .iter()
                    .map(|&(x, y)| {
                        let (px, py) = to_px(x, y);
                        format!("{},{}", fmt(px), fmt(py))
                    })
                    .collect();
                svg.push_str(&format!(
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
                    pts.join(" ")
                ));
            }

            // legend
            let ly = MARGIN_TOP + 14.0 * idx as f64;
            svg.push_str(&format!(
                "<line x1=\"{x1}\" y1=\"{y}\" x2=\"{x2}\" y2=\"{y}\" stroke=\"{color}\" \
                 stroke-width=\"2\"/>\n\
                 <text x=\"{tx}\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"11\">{label}</text>\n",
                x1 = fmt(WIDTH - MARGIN_RIGHT + 10.0),
                x2 = fmt(WIDTH - MARGIN_RIGHT + 30.0),
                y = fmt(ly),
                tx = fmt(WIDTH - MARGIN_RIGHT + 36.0),
                ty = fmt(ly + 4.0),
                label = escape(&series.label),
            ));
        }

        svg.push_str("</svg>\n");
        svg
    }
}

fn bounds(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_chart() -> LineChart {
        LineChart {
            title: "demo".into(),
            x_label: "n".into(),
            y_label: "log mse".into(),
            series: vec![Series {
                label: "method".into(),
                points: vec![(10.0, -2.0), (20.0, -3.5), (40.0, -4.0)],
                band: vec![(10.0, -2.5, -1.5), (20.0, -4.0, -3.0), (40.0, -4.5, -3.5)],
            }],
        }
    }

    #[test]
    fn chart_contains_one_polyline_and_one_band_per_series() {
        let svg = sample_chart().to_svg();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("fill-opacity").count(), 1);
        assert!(svg.contains("log mse"));
    }

    #[test]
    fn rendering_is_byte_deterministic() {
        assert_eq!(sample_chart().to_svg(), sample_chart().to_svg());
    }

    #[test]
    fn infinite_band_tops_clamp_to_the_chart() {
        let mut chart = sample_chart();
        chart.series[0].band[1].2 = f64::INFINITY;
        let svg = chart.to_svg();
        assert!(!svg.contains("inf"), "no raw infinities in the output");
    }
}
