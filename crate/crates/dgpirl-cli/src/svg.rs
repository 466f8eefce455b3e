//! Minimal self-contained SVG line charts: one polyline per series with a
//! translucent mean +/- std band and a legend.

use std::fmt::Write;

pub struct Series {
    pub name: String,
    /// `(x, mean, std)` per demo count.
    pub points: Vec<(f64, f64, f64)>,
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 48.0;

pub fn render_line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let xs: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .collect();
    let ys_low: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1 - p.2))
        .collect();
    let ys_high: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1 + p.2))
        .collect();
    let (x0, x1) = span(&xs, 1.0);
    let (mut y0, y1) = span(
        &ys_low
            .iter()
            .chain(ys_high.iter())
            .copied()
            .collect::<Vec<_>>(),
        1.0,
    );
    y0 = y0.min(0.0);

    let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * (W - MARGIN_L - MARGIN_R);
    let py = |y: f64| H - MARGIN_B - (y - y0) / (y1 - y0) * (H - MARGIN_T - MARGIN_B);

    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(
        s,
        r#"<rect width="{W}" height="{H}" fill="white"/><text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    // Axes.
    let _ = write!(
        s,
        r#"<line x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{l}" y1="{t}" x2="{l}" y2="{b}" stroke="black"/>"#,
        l = MARGIN_L,
        r = W - MARGIN_R,
        t = MARGIN_T,
        b = H - MARGIN_B
    );
    let _ = write!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (MARGIN_L + W - MARGIN_R) / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = write!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (MARGIN_T + H - MARGIN_B) / 2.0,
        (MARGIN_T + H - MARGIN_B) / 2.0,
        escape(y_label)
    );
    // Ticks: x at each distinct point, y at 5 even stops.
    let mut xticks: Vec<f64> = xs.clone();
    xticks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xticks.dedup();
    for x in &xticks {
        let _ = write!(
            s,
            r#"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="black"/><text x="{0}" y="{3}" text-anchor="middle">{4}</text>"#,
            px(*x),
            H - MARGIN_B,
            H - MARGIN_B + 5.0,
            H - MARGIN_B + 18.0,
            x
        );
    }
    for i in 0..=4 {
        let y = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = write!(
            s,
            r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="black"/><text x="{3}" y="{4}" text-anchor="end">{5:.2}</text>"#,
            MARGIN_L - 5.0,
            py(y),
            MARGIN_L,
            MARGIN_L - 8.0,
            py(y) + 4.0,
            y
        );
    }
    // Bands, lines, legend.
    for (i, sr) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if sr.points.len() > 1 {
            let mut band = String::new();
            for (x, m, sd) in &sr.points {
                let _ = write!(band, "{},{} ", px(*x), py(m + sd));
            }
            for (x, m, sd) in sr.points.iter().rev() {
                let _ = write!(band, "{},{} ", px(*x), py(m - sd));
            }
            let _ = write!(
                s,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
                band.trim_end()
            );
        }
        let pts: Vec<String> = sr
            .points
            .iter()
            .map(|(x, m, _)| format!("{},{}", px(*x), py(*m)))
            .collect();
        let _ = write!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for (x, m, _) in &sr.points {
            let _ = write!(
                s,
                r#"<circle cx="{}" cy="{}" r="3" fill="{color}"/>"#,
                px(*x),
                py(*m)
            );
        }
        let ly = MARGIN_T + 8.0 + i as f64 * 18.0;
        let _ = write!(
            s,
            r#"<rect x="{0}" y="{1}" width="12" height="12" fill="{color}"/><text class="legend" x="{2}" y="{3}">{4}</text>"#,
            W - MARGIN_R - 130.0,
            ly - 10.0,
            W - MARGIN_R - 112.0,
            ly,
            escape(&sr.name)
        );
    }
    s.push_str("</svg>");
    s
}

fn span(values: &[f64], fallback: f64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, fallback);
    }
    if (hi - lo).abs() < 1e-12 {
        (lo - fallback / 2.0, hi + fallback / 2.0)
    } else {
        (lo, hi)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
