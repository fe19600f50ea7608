//! Static SVG plots for simulation reports: absolute bias against sample
//! size (one polyline per scenario/estimator series) and coverage bars.
//! Hand-rolled SVG keeps the output deterministic and dependency-free.

use std::collections::BTreeMap;

use medshift_core::SimReport;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 60.0;

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
        W / 2.0
    )
}

const PALETTE: [&str; 6] = [
    "#1b6ca8", "#d1495b", "#3a7d44", "#8e5ba6", "#c77b1a", "#4a4a4a",
];

/// |bias| against n, log-scaled x, one series per (scenario, estimand,
/// estimator) triple.
pub fn bias_vs_n(report: &SimReport) -> String {
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut max_bias = 1e-12f64;
    let (mut min_n, mut max_n) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in &report.cells {
        let key = format!("{} / {} / {}", c.scenario, c.estimand.as_str(), c.estimator.as_str());
        let n = c.n as f64;
        series.entry(key).or_default().push((n, c.bias.abs()));
        max_bias = max_bias.max(c.bias.abs());
        min_n = min_n.min(n);
        max_n = max_n.max(n);
    }
    let x = |n: f64| {
        if (max_n - min_n).abs() < 1e-9 {
            W / 2.0
        } else {
            MARGIN + (n.ln() - min_n.ln()) / (max_n.ln() - min_n.ln()) * (W - 2.0 * MARGIN)
        }
    };
    let y = |b: f64| H - MARGIN - b / max_bias * (H - 2.0 * MARGIN);

    let mut svg = header("absolute bias vs sample size");
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{lb}\" text-anchor=\"middle\">n (log scale)</text>\n",
        m = MARGIN,
        r = W - MARGIN,
        t = MARGIN,
        b = H - MARGIN,
        cx = W / 2.0,
        lb = H - 20.0
    ));
    for (idx, (key, pts)) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let mut pts = pts.clone();
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let path: Vec<String> = pts
            .iter()
            .map(|&(n, b)| format!("{:.2},{:.2}", x(n), y(b)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            path.join(" ")
        ));
        for &(n, b) in &pts {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                x(n),
                y(b)
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{key}</text>\n",
            MARGIN + 8.0,
            MARGIN + 14.0 * (idx as f64 + 1.0)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Empirical coverage per cell as bars, with the 0.95 target line.
pub fn coverage_bars(report: &SimReport) -> String {
    let cells = &report.cells;
    let mut svg = header("95% interval coverage");
    if cells.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let band = (W - 2.0 * MARGIN) / cells.len() as f64;
    let y = |cov: f64| H - MARGIN - cov * (H - 2.0 * MARGIN);
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{ty}\" x2=\"{r}\" y2=\"{ty}\" stroke=\"#d1495b\" stroke-dasharray=\"4 3\"/>\n\
         <text x=\"{r}\" y=\"{ty2}\" text-anchor=\"end\" fill=\"#d1495b\">0.95</text>\n",
        m = MARGIN,
        r = W - MARGIN,
        b = H - MARGIN,
        ty = y(0.95),
        ty2 = y(0.95) - 4.0
    ));
    for (idx, c) in cells.iter().enumerate() {
        let x0 = MARGIN + band * idx as f64 + band * 0.15;
        let color = PALETTE[idx % PALETTE.len()];
        svg.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\"/>\n",
            x0,
            y(c.coverage),
            band * 0.7,
            (H - MARGIN) - y(c.coverage)
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(30 {:.2} {})\">{} n={}</text>\n",
            x0 + band * 0.35,
            H - MARGIN + 16.0,
            x0 + band * 0.35,
            H - MARGIN + 16.0,
            c.scenario,
            c.n
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
