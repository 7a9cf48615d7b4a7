use std::fmt::Write;

use super::RobustCurveReport;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;

/// Quantile curve with its 5%–15% band and a dashed nominal marker.
pub fn render_svg(report: &RobustCurveReport) -> String {
    let (x0, x1) = (report.range[0], report.range[1]);
    let ys = report
        .curve
        .iter()
        .flat_map(|r| [r.q05, r.q10, r.q15])
        .filter(|v| v.is_finite());
    let (mut y0, mut y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    if y1 - y0 < 1e-9 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r#"<polyline points="{left},{top} {left},{bottom} {right},{bottom}" fill="none" stroke="black"/>"#
    );

    let mut band = String::new();
    for r in &report.curve {
        let _ = write!(band, "{:.2},{:.2} ", px(r.param_value), py(r.q15));
    }
    for r in report.curve.iter().rev() {
        let _ = write!(band, "{:.2},{:.2} ", px(r.param_value), py(r.q05));
    }
    let _ = writeln!(
        s,
        r##"<polygon points="{}" fill="#1f77b4" fill-opacity="0.25" stroke="none"/>"##,
        band.trim_end()
    );
    let line: Vec<String> = report
        .curve
        .iter()
        .map(|r| format!("{:.2},{:.2}", px(r.param_value), py(r.q10)))
        .collect();
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        line.join(" ")
    );
    if let Some(nominal) = report.nominal.filter(|n| *n >= x0 && *n <= x1) {
        let x = px(nominal);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{top}" x2="{x:.2}" y2="{bottom}" stroke="black" stroke-dasharray="6,4"/>"#
        );
    }
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" font-size="12" text-anchor="{anchor}">{v}</text>"#,
            px(v),
            bottom + 16.0
        );
    }
    for v in [y0, y1] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" font-size="12" text-anchor="end">{v:.2}</text>"#,
            left - 4.0,
            py(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        report.param
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">{}: q={} quantile return, AUC {:.4}</text>"#,
        WIDTH / 2.0,
        24.0,
        report.env.name,
        report.quantile,
        report.auc
    );
    s.push_str("</svg>\n");
    s
}
