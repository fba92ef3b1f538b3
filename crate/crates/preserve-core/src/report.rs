//! Deterministic report primitives: significant-digit number formatting and
//! self-contained SVG line charts.
//!
//! Output bytes depend only on the input values, never on locale, time, or
//! hash order, so golden-file comparisons stay stable.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("chart has no series")]
    EmptySeries,
    #[error("series `{0}` has no points")]
    EmptyPoints(String),
    #[error("series `{0}` has non-increasing x values")]
    NonIncreasingX(String),
}

/// Format with six significant digits, fixed notation for moderate
/// magnitudes and exponent notation otherwise. Trailing zeros are trimmed.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    let exp_form = format!("{:.5e}", x);
    let (mantissa, exp) = exp_form.split_once('e').expect("exponential format");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    let neg = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    debug_assert_eq!(digits.len(), 6);

    let body = if (-4..=8).contains(&exp) {
        if exp >= 0 {
            let int_len = exp as usize + 1;
            if int_len >= digits.len() {
                format!("{digits}{}", "0".repeat(int_len - digits.len()))
            } else {
                let (int_part, frac) = digits.split_at(int_len);
                let frac = frac.trim_end_matches('0');
                if frac.is_empty() {
                    int_part.to_string()
                } else {
                    format!("{int_part}.{frac}")
                }
            }
        } else {
            let frac = format!("{}{digits}", "0".repeat((-exp - 1) as usize));
            format!("0.{}", frac.trim_end_matches('0'))
        }
    } else {
        let frac = digits[1..].trim_end_matches('0');
        if frac.is_empty() {
            format!("{}e{exp}", &digits[..1])
        } else {
            format!("{}.{frac}e{exp}", &digits[..1])
        }
    };
    if neg {
        format!("-{body}")
    } else {
        body
    }
}

/// One labeled polyline.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Series {
        Series {
            label: label.into(),
            points,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Axes {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

impl Axes {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Axes {
        Axes {
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
        }
    }
}

const PALETTE: [&str; 13] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#aec7e8", "#ffbb78", "#000000",
];

const WIDTH: f64 = 880.0;
const HEIGHT: f64 = 520.0;
const PLOT_LEFT: f64 = 80.0;
const PLOT_RIGHT: f64 = 650.0;
const PLOT_TOP: f64 = 50.0;
const PLOT_BOTTOM: f64 = 455.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Largest power of ten not above `x` (x > 0), computed without logarithms.
fn decade_below(x: f64) -> f64 {
    let mut d = 1.0;
    if x >= 1.0 {
        while d * 10.0 <= x {
            d *= 10.0;
        }
    } else {
        while d > x {
            d /= 10.0;
        }
    }
    d
}

fn nice_step(range: f64) -> f64 {
    let raw = range / 5.0;
    let d = decade_below(raw);
    let m = raw / d;
    if m <= 1.0 {
        d
    } else if m <= 2.0 {
        2.0 * d
    } else if m <= 5.0 {
        5.0 * d
    } else {
        10.0 * d
    }
}

fn ticks(min: f64, max: f64) -> Vec<f64> {
    let step = nice_step(max - min);
    let mut t = (min / step).ceil() * step;
    let mut out = Vec::new();
    while t <= max + step * 1e-9 {
        out.push(t);
        t += step;
    }
    out
}

/// Render labeled series as a self-contained SVG line chart.
///
/// Output is byte-identical for identical input.
pub fn emit_svg(series: &[Series], axes: &Axes) -> Result<String, ReportError> {
    if series.is_empty() {
        return Err(ReportError::EmptySeries);
    }
    for s in series {
        if s.points.is_empty() {
            return Err(ReportError::EmptyPoints(s.label.clone()));
        }
        if s.points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(ReportError::NonIncreasingX(s.label.clone()));
        }
    }

    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in xs {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
    }
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for y in ys {
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if x_max == x_min {
        let pad = if x_min == 0.0 { 1.0 } else { x_min.abs() * 0.5 };
        x_min -= pad;
        x_max += pad;
    }
    if y_max == y_min {
        let pad = if y_min == 0.0 { 1.0 } else { y_min.abs() * 0.5 };
        y_min -= pad;
        y_max += pad;
    }
    let y_pad = (y_max - y_min) * 0.05;
    y_min -= y_pad;
    y_max += y_pad;

    let sx = |x: f64| PLOT_LEFT + (x - x_min) / (x_max - x_min) * (PLOT_RIGHT - PLOT_LEFT);
    let sy = |y: f64| PLOT_BOTTOM - (y - y_min) / (y_max - y_min) * (PLOT_BOTTOM - PLOT_TOP);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"Helvetica, Arial, sans-serif\" font-size=\"13\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"28\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        (PLOT_LEFT + PLOT_RIGHT) / 2.0,
        escape(&axes.title)
    ));

    // Grid lines and tick labels.
    for t in ticks(x_min, x_max) {
        let x = sx(t);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{PLOT_TOP}\" x2=\"{x:.2}\" y2=\"{PLOT_BOTTOM}\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            PLOT_BOTTOM + 20.0,
            fmt_sig6(t)
        ));
    }
    for t in ticks(y_min, y_max) {
        let y = sy(t);
        svg.push_str(&format!(
            "<line x1=\"{PLOT_LEFT}\" y1=\"{y:.2}\" x2=\"{PLOT_RIGHT}\" y2=\"{y:.2}\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
            PLOT_LEFT - 8.0,
            y + 4.0,
            fmt_sig6(t)
        ));
    }
    svg.push_str(&format!(
        "<rect x=\"{PLOT_LEFT}\" y=\"{PLOT_TOP}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#333333\"/>\n",
        PLOT_RIGHT - PLOT_LEFT,
        PLOT_BOTTOM - PLOT_TOP
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
        (PLOT_LEFT + PLOT_RIGHT) / 2.0,
        HEIGHT - 15.0,
        escape(&axes.x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"22\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 22 {:.2})\">{}</text>\n",
        (PLOT_TOP + PLOT_BOTTOM) / 2.0,
        (PLOT_TOP + PLOT_BOTTOM) / 2.0,
        escape(&axes.y_label)
    ));

    // Series polylines, markers, and legend.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if s.points.len() > 1 {
            let path: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                path.join(" ")
            ));
        }
        for &(x, y) in &s.points {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                sx(x),
                sy(y)
            ));
        }
        let ly = PLOT_TOP + 10.0 + i as f64 * 18.0;
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            PLOT_RIGHT + 18.0,
            PLOT_RIGHT + 42.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>\n",
            PLOT_RIGHT + 48.0,
            ly + 4.0,
            escape(&s.label)
        ));
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}
