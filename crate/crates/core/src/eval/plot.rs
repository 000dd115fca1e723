//! Minimal SVG rendering of the precision and success curves.

use crate::eval::metrics::Curve;

const W: f64 = 640.0;
const H: f64 = 320.0;
const PAD: f64 = 40.0;
const PANEL: f64 = (W - 3.0 * PAD) / 2.0;

fn polyline(curve: &Curve, x0: f64, color: &str) -> String {
    let t_max = *curve.thresholds.last().unwrap_or(&1.0);
    let pts: Vec<String> = curve
        .thresholds
        .iter()
        .zip(&curve.values)
        .map(|(&t, &v)| {
            let x = x0 + t / t_max * PANEL;
            let y = H - PAD - v * (H - 2.0 * PAD);
            format!("{:.2},{:.2}", x, y)
        })
        .collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>",
        color,
        pts.join(" ")
    )
}

fn panel(x0: f64, title: &str, auc: f64) -> String {
    format!(
        "<rect x=\"{x0}\" y=\"{pad}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#888\"/>\
         <text x=\"{tx}\" y=\"{ty}\" font-size=\"13\" text-anchor=\"middle\">{title} (AUC {auc:.3})</text>",
        x0 = x0,
        pad = PAD,
        pw = PANEL,
        ph = H - 2.0 * PAD,
        tx = x0 + PANEL / 2.0,
        ty = PAD - 8.0,
        title = title,
        auc = auc,
    )
}

/// Two-panel plot: precision over pixel thresholds, success over IoU
/// thresholds.
pub fn curves_svg(precision: &Curve, success: &Curve) -> String {
    let x_p = PAD;
    let x_s = 2.0 * PAD + PANEL;
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>{pp}{pl}{sp}{sl}</svg>",
        w = W,
        h = H,
        pp = panel(x_p, "precision", precision.auc),
        pl = polyline(precision, x_p, "#c0392b"),
        sp = panel(x_s, "success", success.auc),
        sl = polyline(success, x_s, "#2471a3"),
    )
}
