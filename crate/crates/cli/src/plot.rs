//! Static SVG charts: loss curves from traces and attribution bars.

use std::fmt::Write;

use cfx_core::attribution::AttributionReport;
use cfx_core::engine::TraceRecord;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLOURS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>
"#,
        WIDTH / 2.0,
        escape(title)
    );
}

/// Total loss per iteration for each named trace. Restart iterations of the
/// first series are marked with dashed lines.
pub fn loss_curves(title: &str, series: &[(&str, &[TraceRecord])]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let steps = series.iter().map(|s| s.1.len()).max().unwrap_or(0).max(2);
    let values = series.iter().flat_map(|s| s.1.iter().map(|r| r.total));
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    let (lo, hi) = match (lo.is_finite(), hi > lo) {
        (true, true) => (lo, hi),
        (true, false) => (lo - 0.5, lo + 0.5),
        (false, _) => (0.0, 1.0),
    };
    let x = |i: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * i as f64 / (steps - 1) as f64;
    let y = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v - lo) / (hi - lo);

    let _ = writeln!(
        out,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN
    );
    for (v, anchor) in [(lo, "end"), (hi, "end")] {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="{anchor}">{v:.3}</text>"#,
            MARGIN - 4.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">iteration</text><text x="{}" y="{}" text-anchor="end">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        WIDTH - MARGIN,
        HEIGHT - MARGIN + 14.0,
        steps - 1
    );
    if let Some((_, first)) = series.first() {
        for (i, r) in first.iter().enumerate().filter(|(_, r)| r.perturbed) {
            let _ = writeln!(
                out,
                r##"<line x1="{0:.1}" y1="{1}" x2="{0:.1}" y2="{2}" stroke="#999" stroke-dasharray="4 3"><title>restart {3}</title></line>"##,
                x(i),
                MARGIN,
                HEIGHT - MARGIN,
                r.restart
            );
        }
    }
    for (k, (name, trace)) in series.iter().enumerate() {
        let colour = COLOURS[k % COLOURS.len()];
        let points: Vec<String> = trace
            .iter()
            .enumerate()
            .map(|(i, r)| format!("{:.1},{:.1}", x(i), y(r.total)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{colour}">{}</text>"#,
            WIDTH - MARGIN - 150.0,
            MARGIN + 14.0 * (k as f64 + 1.0),
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Horizontal bars, one per feature, in report order (descending score).
pub fn attribution_bars(title: &str, report: &AttributionReport) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let max = report
        .scores
        .iter()
        .map(|s| s.attr)
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let label_w = 120.0;
    let rows = report.scores.len().max(1) as f64;
    let band = (HEIGHT - 2.0 * MARGIN) / rows;
    for (i, s) in report.scores.iter().enumerate() {
        let top = MARGIN + band * i as f64;
        let w = (WIDTH - MARGIN - label_w - 60.0) * s.attr / max;
        let fill = if s.fixed { "#bbbbbb" } else { COLOURS[0] };
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text><rect x="{label_w}" y="{:.1}" width="{w:.1}" height="{:.1}" fill="{fill}"/><text x="{:.1}" y="{:.1}">{:.4}</text>"#,
            label_w - 6.0,
            top + band * 0.6,
            escape(&s.feature),
            top + band * 0.15,
            band * 0.7,
            label_w + w + 4.0,
            top + band * 0.6,
            s.attr
        );
    }
    out.push_str("</svg>\n");
    out
}
