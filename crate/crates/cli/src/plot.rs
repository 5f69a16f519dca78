//! Two stacked line charts, mean reward and KL against epoch, as plain SVG.

use std::fmt::Write;

use persuade_core::trainer::EpochRecord;

const WIDTH: f64 = 640.0;
const PANEL_HEIGHT: f64 = 220.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const GAP: f64 = 50.0;

pub fn history_svg(records: &[EpochRecord]) -> String {
    let epochs: Vec<f64> = records.iter().map(|r| r.epoch as f64).collect();
    let rewards: Vec<f64> = records.iter().map(|r| r.mean_reward).collect();
    let kls: Vec<f64> = records.iter().map(|r| r.kl).collect();
    let height = MARGIN_TOP + 2.0 * PANEL_HEIGHT + GAP + 40.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    panel(&mut svg, MARGIN_TOP, "mean reward", "#1f77b4", &epochs, &rewards);
    panel(&mut svg, MARGIN_TOP + PANEL_HEIGHT + GAP, "KL to baseline", "#d62728", &epochs, &kls);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#,
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        height - 8.0
    );
    svg.push_str("</svg>\n");
    svg
}

/// Degenerate ranges are widened so a constant series draws as a flat line.
fn range(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

fn panel(svg: &mut String, top: f64, title: &str, color: &str, xs: &[f64], ys: &[f64]) {
    let (x0, x1) = range(xs);
    let (y0, y1) = range(ys);
    let inner_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let px = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * inner_w;
    let py = |y: f64| top + PANEL_HEIGHT - (y - y0) / (y1 - y0) * PANEL_HEIGHT;

    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN_LEFT}" y="{top}" width="{inner_w}" height="{PANEL_HEIGHT}" fill="none" stroke="#888"/>"##
    );
    let _ = writeln!(svg, r#"<text x="{MARGIN_LEFT}" y="{}">{title}</text>"#, top - 8.0);
    for (value, y) in [(y1, top), (y0, top + PANEL_HEIGHT)] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 6.0,
            y + 4.0,
            tick(value)
        );
    }
    for (value, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="{anchor}">{}</text>"#,
            px(value),
            top + PANEL_HEIGHT + 16.0,
            tick(value)
        );
    }
    let points: Vec<String> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
        .collect();
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
        points.join(" ")
    );
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.trunc() {
        format!("{v:.0}")
    } else if v.abs() >= 0.01 {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}
