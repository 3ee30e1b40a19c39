use std::fmt::Write;

use crate::oracle::ConvergenceReport;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 64.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Log-log plot of replicate-mean W1 error against τ, one polyline per ε,
/// plus the fitted power law as a dashed path. The plotted numbers are
/// repeated in `<!-- data ... -->` comments.
pub fn convergence_svg(report: &ConvergenceReport, eps_list: &[f64]) -> String {
    let series: Vec<(f64, Vec<(f64, f64)>)> = eps_list
        .iter()
        .map(|&eps| {
            let pts = report
                .mean_errors(eps)
                .into_iter()
                .filter(|&(_, e)| e > 0.0 && e.is_finite())
                .map(|(n, e)| (1.0 / n as f64, e))
                .collect();
            (eps, pts)
        })
        .collect();
    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &all {
        x0 = x0.min(x.log10());
        x1 = x1.max(x.log10());
        y0 = y0.min(y.log10());
        y1 = y1.max(y.log10());
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (-2.0, 0.0, -3.0, 0.0);
    }
    let pad = |lo: f64, hi: f64| {
        if hi - lo < 1e-9 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo - 0.05 * (hi - lo), hi + 0.05 * (hi - lo))
        }
    };
    let ((x0, x1), (y0, y1)) = (pad(x0, x1), pad(y0, y1));
    let px = |x: f64| MARGIN + (x.log10() - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y.log10() - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let scheme = match report.scheme {
        crate::flow::Scheme::LieTrotter => "lie_trotter",
        crate::flow::Scheme::Strang => "strang",
    };
    let _ = writeln!(
        s,
        "<!-- scheme={scheme} noise_floor={:?} crn_floor={:?} -->",
        report.noise_floor, report.crn_floor
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M {l} {t} L {l} {b} L {r} {b}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">tau (log10 {x0:.2} to {x1:.2})</text>"#,
        WIDTH / 2.0,
        HEIGHT - 20.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 18 {})">W1 error (log10 {y0:.2} to {y1:.2})</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (i, (eps, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        for &(tau, e) in pts {
            let _ = writeln!(s, "<!-- data eps={eps:?} tau={tau:?} w1={e:?} -->");
        }
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.3},{:.3}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"><title>eps={eps}</title></polyline>"#,
            coords.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">eps={eps}</text>"#,
            r - 90.0,
            t + 16.0 * (i as f64 + 1.0)
        );
    }
    if let (Some(order), Some(c)) = (report.fitted_order, report.fitted_constant) {
        let _ = writeln!(s, "<!-- fit order={order:?} constant={c:?} -->");
        let (xa, xb) = (10f64.powf(x0), 10f64.powf(x1));
        let line = |x: f64| c * x.powf(order);
        let _ = writeln!(
            s,
            r#"<path d="M {:.3} {:.3} L {:.3} {:.3}" fill="none" stroke="gray" stroke-dasharray="6 4"><title>fit order={order:.4}</title></path>"#,
            px(xa),
            py(line(xa)),
            px(xb),
            py(line(xb))
        );
    }
    s.push_str("</svg>\n");
    s
}
