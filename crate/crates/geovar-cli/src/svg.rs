//! Minimal hand-rolled SVG plot of an empirical variogram with an
//! optional fitted-curve overlay. No plotting stack; just polylines,
//! circles, and axis ticks.

use geovar::semivariogram::{evaluate_spherical, EmpiricalVariogram, SphericalModel};

const WIDTH: f64 = 880.0;
const HEIGHT: f64 = 560.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 24.0;
const MARGIN_B: f64 = 56.0;

pub fn variogram_svg(ev: &EmpiricalVariogram, fit: Option<&SphericalModel>) -> String {
    let h_max = ev.bins.last().map(|b| b.h_hi).unwrap_or(1.0);
    let mut g_max = ev
        .bins
        .iter()
        .filter(|b| b.pair_count > 0)
        .map(|b| b.gamma_hat)
        .fold(0.0f64, f64::max);
    if let Some(m) = fit {
        g_max = g_max.max(m.sill());
    }
    if g_max <= 0.0 {
        g_max = 1.0;
    }
    let y_top = g_max * 1.1;

    let px = |h: f64| MARGIN_L + (h / h_max) * (WIDTH - MARGIN_L - MARGIN_R);
    let py = |g: f64| HEIGHT - MARGIN_B - (g / y_top) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    // axes
    s.push_str(&format!(
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        MARGIN_L,
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B
    ));
    s.push_str(&format!(
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        MARGIN_L,
        MARGIN_T,
        MARGIN_L,
        HEIGHT - MARGIN_B
    ));

    // ticks
    for k in 0..=5 {
        let h = h_max * k as f64 / 5.0;
        let x = px(h);
        s.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 6.0
        ));
        s.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{h:.0}</text>\n",
            HEIGHT - MARGIN_B + 22.0
        ));
        let g = y_top * k as f64 / 5.0;
        let y = py(g);
        s.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"black\"/>\n",
            MARGIN_L - 6.0,
            MARGIN_L
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"end\">{g:.3}</text>\n",
            MARGIN_L - 10.0,
            y + 4.0
        ));
    }
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">separation h (km)</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 12.0
    ));
    s.push_str(&format!(
        "<text x=\"18\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.2})\">gamma (half mean cosine distance)</text>\n",
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0
    ));

    // empirical curve: connected nonempty bins plus point markers
    let pts: Vec<(f64, f64)> = ev
        .bins
        .iter()
        .filter(|b| b.pair_count > 0)
        .map(|b| (px(b.h_center), py(b.gamma_hat)))
        .collect();
    if pts.len() > 1 {
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\"/>\n",
            path.join(" ")
        ));
    }
    for (x, y) in &pts {
        s.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"steelblue\"/>\n"
        ));
    }

    // fitted model overlay
    if let Some(m) = fit {
        let samples: Vec<String> = (0..=200)
            .map(|k| {
                let h = h_max * k as f64 / 200.0;
                let g = evaluate_spherical(m, h).expect("h >= 0");
                format!("{:.2},{:.2}", px(h), py(g))
            })
            .collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"crimson\" stroke-width=\"2\"/>\n",
            samples.join(" ")
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"13\" fill=\"crimson\">fit: nugget {:.4}, sill {:.4}, range {:.0} km</text>\n",
            MARGIN_L + 12.0,
            MARGIN_T + 18.0,
            m.nugget(),
            m.sill(),
            m.range_km()
        ));
    }
    s.push_str("</svg>\n");
    s
}
