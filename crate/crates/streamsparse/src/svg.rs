//! Self-contained SVG error curves with a log-scaled y axis.

use std::fmt::Write as _;

/// One curve: `(b, value)` points, drawn in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// A panel with its own axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub series: Vec<Series>,
}

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Median of the finite values, `None` if there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Renders panels side by side. Non-positive values cannot be drawn on a log
/// axis and are skipped.
pub fn render(panels: &[Panel]) -> String {
    let width = PANEL_W * panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{PANEL_H:.0}" viewBox="0 0 {width:.0} {PANEL_H:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, panel) in panels.iter().enumerate() {
        render_panel(&mut out, panel, k as f64 * PANEL_W);
    }
    out.push_str("</svg>\n");
    out
}

fn render_panel(out: &mut String, panel: &Panel, x0: f64) {
    let pts: Vec<(f64, f64)> = panel
        .series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|&(_, y)| y > 0.0 && y.is_finite())
        .collect();
    let plot_l = x0 + MARGIN_L;
    let plot_r = x0 + PANEL_W - MARGIN_R;
    let plot_t = MARGIN_T;
    let plot_b = PANEL_H - MARGIN_B;
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        (plot_l + plot_r) / 2.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        out,
        r#"<rect x="{plot_l:.1}" y="{plot_t:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        plot_r - plot_l,
        plot_b - plot_t
    );
    if pts.is_empty() {
        return;
    }
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut lmin, mut lmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        lmin = lmin.min(y.log10());
        lmax = lmax.max(y.log10());
    }
    if xmax == xmin {
        xmax = xmin + 1.0;
    }
    let dmin = lmin.floor();
    let mut dmax = lmax.ceil();
    if dmax == dmin {
        dmax = dmin + 1.0;
    }
    let sx = |x: f64| plot_l + (x - xmin) / (xmax - xmin) * (plot_r - plot_l);
    let sy = |l: f64| plot_b - (l - dmin) / (dmax - dmin) * (plot_b - plot_t);

    let mut d = dmin;
    while d <= dmax {
        let y = sy(d);
        let _ = writeln!(
            out,
            r##"<line x1="{plot_l:.1}" y1="{y:.1}" x2="{plot_r:.1}" y2="{y:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">1e{}</text>"##,
            plot_l - 4.0,
            y + 4.0,
            d as i64
        );
        d += 1.0;
    }
    for tick in x_ticks(xmin, xmax) {
        let x = sx(tick as f64);
        let _ = writeln!(
            out,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{tick}</text>"#,
            plot_b + 14.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">batch b</text>"#,
        (plot_l + plot_r) / 2.0,
        PANEL_H - 12.0
    );
    for (i, s) in panel.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|&&(_, y)| y > 0.0 && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y.log10())))
            .collect();
        if !path.is_empty() {
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
        }
        let ly = plot_t + 14.0 + 14.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            plot_r - 110.0,
            plot_r - 90.0,
            plot_r - 85.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
}

fn x_ticks(xmin: f64, xmax: f64) -> Vec<i64> {
    let span = (xmax - xmin).max(1.0);
    let raw = span / 5.0;
    let step = [1.0, 2.0, 5.0, 10.0, 20.0, 25.0, 50.0, 100.0, 200.0, 500.0, 1000.0]
        .into_iter()
        .find(|s| *s >= raw)
        .unwrap_or(raw.ceil());
    let start = (xmin / step).ceil() * step;
    let mut ticks = Vec::new();
    let mut t = start;
    while t <= xmax + 1e-9 {
        ticks.push(t.round() as i64);
        t += step;
    }
    ticks
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[f64::NAN]), None);
    }

    #[test]
    fn render_is_deterministic_and_well_formed() {
        let panel = Panel {
            title: "l2 error".into(),
            series: vec![Series {
                label: "adiht".into(),
                points: vec![(1.0, 0.5), (2.0, 0.1), (3.0, 0.0)],
            }],
        };
        let a = render(std::slice::from_ref(&panel));
        assert_eq!(a, render(&[panel]));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert_eq!(a.matches("<polyline").count(), 1);
    }
}
