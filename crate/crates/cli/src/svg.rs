//! Minimal SVG line charts for scan and density curves.

pub struct Series<'a> {
    pub label: &'a str,
    pub points: &'a [(f64, f64)],
}

/// Render one or more series as polylines; optionally log-scale both axes.
pub fn line_chart(title: &str, series: &[Series], log_log: bool) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const M: f64 = 55.0;
    let tx = |v: f64| if log_log { v.ln() } else { v };
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for &(x, y) in s.points {
            if !log_log || (x > 0.0 && y > 0.0) {
                xs.push(tx(x));
                ys.push(tx(y));
            }
        }
    }
    let (x_lo, x_hi) = bounds(&xs);
    let (y_lo, y_hi) = bounds(&ys);
    let px = |x: f64| M + (tx(x) - x_lo) / (x_hi - x_lo) * (W - 2.0 * M);
    let py = |y: f64| H - M - (tx(y) - y_lo) / (y_hi - y_lo) * (H - 2.0 * M);

    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        W / 2.0,
        xml_escape(title)
    );
    out.push_str(&format!(
        "<line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - M,
        W - M,
        H - M,
        H - M
    ));
    for (si, s) in series.iter().enumerate() {
        let color = palette[si % palette.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|&&(x, y)| !log_log || (x > 0.0 && y > 0.0))
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{}</text>\n",
            W - M + 4.0,
            M + 14.0 * si as f64,
            xml_escape(s.label)
        ));
    }
    // axis extremes
    out.push_str(&format!(
        "<text x=\"{M}\" y=\"{}\" font-size=\"10\">{:.3e}</text>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{:.3e}</text>\n\
         <text x=\"8\" y=\"{}\" font-size=\"10\">{:.3e}</text>\n\
         <text x=\"8\" y=\"{}\" font-size=\"10\">{:.3e}</text>\n",
        H - M + 14.0,
        if log_log { x_lo.exp() } else { x_lo },
        W - M,
        H - M + 14.0,
        if log_log { x_hi.exp() } else { x_hi },
        H - M,
        if log_log { y_lo.exp() } else { y_lo },
        M + 4.0,
        if log_log { y_hi.exp() } else { y_hi },
    ));
    out.push_str("</svg>\n");
    out
}

fn bounds(vals: &[f64]) -> (f64, f64) {
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
