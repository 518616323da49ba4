//! Minimal self-contained SVG line plots. Each plot embeds its data as a
//! CSV block inside an XML comment so the file can be diffed and re-plotted.

use std::fmt::Write as _;

use crate::model::CoincidenceHistogram;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
/// Histograms longer than this are summed into coarser bins for drawing.
const MAX_POINTS: usize = 3000;

pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

/// Shaded region between two curves sampled at the same x.
pub struct Band {
    pub label: String,
    pub x: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub band: Option<Band>,
    pub markers: bool,
}

fn bounds(plot: &Plot) -> (f64, f64, f64, f64) {
    let mut xs: Vec<f64> = plot.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let mut ys: Vec<f64> = plot.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).collect();
    if let Some(b) = &plot.band {
        xs.extend(&b.x);
        ys.extend(b.lower.iter().chain(&b.upper));
    }
    let fold = |v: &[f64], f: fn(f64, f64) -> f64, init: f64| v.iter().copied().filter(|x| x.is_finite()).fold(init, f);
    let (x0, x1) = (fold(&xs, f64::min, f64::INFINITY), fold(&xs, f64::max, f64::NEG_INFINITY));
    let y1 = fold(&ys, f64::max, f64::NEG_INFINITY);
    let y0 = fold(&ys, f64::min, f64::INFINITY).min(0.0);
    if !x0.is_finite() || !y1.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    let (x1, y1) = (if x1 > x0 { x1 } else { x0 + 1.0 }, if y1 > y0 { y1 * 1.05 } else { y0 + 1.0 });
    (x0, x1, y0, y1)
}

pub fn render(plot: &Plot) -> String {
    let (x0, x1, y0, y1) = bounds(plot);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    out.push_str("<!-- data\n");
    for s in &plot.series {
        let _ = writeln!(out, "# {}", s.label);
        for (x, y) in &s.points {
            let _ = writeln!(out, "{x},{y}");
        }
    }
    if let Some(b) = &plot.band {
        let _ = writeln!(out, "# {} (x,lower,upper)", b.label);
        for i in 0..b.x.len() {
            let _ = writeln!(out, "{},{},{}", b.x[i], b.lower[i], b.upper[i]);
        }
    }
    out.push_str("-->\n");
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="30" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(&plot.title)
    );
    // Axes.
    let _ = writeln!(
        out,
        r#"<path d="M{m} {b} L{r} {b} M{m} {b} L{m} {m}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            sx(fx),
            HEIGHT - MARGIN + 16.0,
            tick(fx)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
            MARGIN - 6.0,
            sy(fy) + 4.0,
            tick(fy)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 15.0,
        escape(&plot.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="15" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 15 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(&plot.y_label)
    );
    if let Some(b) = &plot.band {
        let mut d = String::new();
        for (i, (&x, &y)) in b.x.iter().zip(&b.upper).enumerate() {
            let _ = write!(d, "{}{:.2} {:.2} ", if i == 0 { "M" } else { "L" }, sx(x), sy(y));
        }
        for (&x, &y) in b.x.iter().zip(&b.lower).rev() {
            let _ = write!(d, "L{:.2} {:.2} ", sx(x), sy(y));
        }
        let _ = writeln!(out, r##"<path d="{}Z" fill="#c8b6e2" fill-opacity="0.5" stroke="none"/>"##, d);
    }
    for s in &plot.series {
        if plot.markers && !s.dashed {
            for &(x, y) in &s.points {
                let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#, sx(x), sy(y), s.color);
            }
            continue;
        }
        let mut d = String::new();
        for (i, &(x, y)) in s.points.iter().enumerate() {
            let _ = write!(d, "{}{:.2} {:.2} ", if i == 0 { "M" } else { "L" }, sx(x), sy(y));
        }
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(out, r#"<path d="{}" stroke="{}" fill="none" stroke-width="1.2"{dash}/>"#, d.trim_end(), s.color);
    }
    for (i, s) in plot.series.iter().enumerate() {
        let y = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{y}" text-anchor="end" font-family="sans-serif" font-size="12" fill="{}">{}</text>"#,
            WIDTH - MARGIN,
            s.color,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Histogram as a plottable series, merged into at most `MAX_POINTS` bins.
pub fn histogram_series(h: &CoincidenceHistogram, label: &str, color: &'static str) -> Series {
    let factor = h.len().div_ceil(MAX_POINTS).max(1);
    let points = h
        .counts
        .chunks(factor)
        .enumerate()
        .map(|(i, c)| {
            let first = i * factor;
            let center = (h.bin_center(first) + h.bin_center(first + c.len() - 1)) as f64 / 2.0;
            (center, c.iter().sum::<u64>() as f64)
        })
        .collect();
    Series {
        label: label.to_string(),
        color,
        points,
        dashed: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embeds_data_and_closes() {
        let h = CoincidenceHistogram {
            bin_width_ps: 10,
            offset_ps: -20,
            counts: vec![1, 5, 9, 5, 1],
        };
        let svg = render(&Plot {
            title: "a < b".into(),
            x_label: "delay (ps)".into(),
            y_label: "counts".into(),
            series: vec![histogram_series(&h, "data", "black")],
            band: None,
            markers: false,
        });
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("0,9"));
        assert!(svg.contains("a &lt; b"));
    }

    #[test]
    fn long_histograms_are_rebinned() {
        let h = CoincidenceHistogram::zeros(1, 0, 10_000);
        assert!(histogram_series(&h, "x", "red").points.len() <= MAX_POINTS);
    }
}
