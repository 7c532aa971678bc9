//! Self-contained SVG for the figure command: log-log axes, dashed bound
//! curves, solid empirical curves with CI whiskers, and a marker at `sqrt n`.

use std::fmt::Write;

use crate::figure::{ExperimentGrid, FigureRow};

const W: f64 = 760.0;
const H: f64 = 500.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];
/// Values above this are drawn at the top edge.
const Y_CAP: f64 = 1e16;

struct Axis {
    lo: f64,
    hi: f64,
    a: f64,
    b: f64,
}

impl Axis {
    /// Log-scale map from `[lo, hi]` onto pixels `[a, b]`.
    fn map(&self, v: f64) -> f64 {
        let v = v.clamp(self.lo, self.hi);
        self.a + (v.log10() - self.lo.log10()) / (self.hi.log10() - self.lo.log10()) * (self.b - self.a)
    }
}

fn series_key(row: &FigureRow) -> String {
    match row.t_mult {
        Some(m) => format!("T = {m} r/n"),
        None => format!("T = {}", row.horizon),
    }
}

fn polyline(out: &mut String, pts: &[(f64, f64)], color: &str, dashed: bool) {
    if pts.len() < 2 {
        for &(x, y) in pts {
            let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
        }
        return;
    }
    let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"{dash}/>"#,
        coords.join(" ")
    );
}

pub fn render_svg(grid: &ExperimentGrid, rows: &[FigureRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);

    let sqrt_n = (grid.n as f64).sqrt();
    let r_min = grid.r.iter().copied().min().unwrap_or(1) as f64;
    let r_max = grid.r.iter().copied().max().unwrap_or(1) as f64;
    let x = Axis { lo: (r_min.min(sqrt_n) / 1.2).max(0.5), hi: r_max.max(sqrt_n) * 1.2, a: LEFT, b: W - RIGHT };

    let values = rows.iter().flat_map(|r| [r.n_star_lo, r.n_star_hat, r.n_star_hi, r.n_star_bound]);
    let finite: Vec<f64> = values.filter(|v| v.is_finite() && *v > 0.0).map(|v| v.min(Y_CAP)).collect();
    let y_lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let y_hi = finite.iter().cloned().fold(0.0, f64::max);
    let (y_lo, y_hi) = if finite.is_empty() { (1.0, 10.0) } else { (y_lo, y_hi) };
    let y_lo = 10f64.powf(y_lo.log10().floor());
    let y_hi = 10f64.powf(y_hi.log10().ceil()).max(y_lo * 10.0);
    let y = Axis { lo: y_lo, hi: y_hi, a: H - BOTTOM, b: TOP };

    // Frame, ticks and labels.
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    let mut e = y_lo.log10().round() as i32;
    while 10f64.powi(e) <= y_hi * 1.0001 {
        let py = y.map(10f64.powi(e));
        let _ = writeln!(out, r##"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#ddd"/>"##, W - RIGHT);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{e}</text>"#, LEFT - 6.0, py + 4.0);
        e += 1;
    }
    for &r in &grid.r {
        let px = x.map(r as f64);
        let _ = writeln!(out, r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#, H - BOTTOM, H - BOTTOM + 5.0);
        let _ = writeln!(out, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{r}</text>"#, H - BOTTOM + 18.0);
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">r (observed differences)</text>"#, (LEFT + W - RIGHT) / 2.0, H - 15.0);
    let _ = writeln!(out, r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">N* (epsilon = {})</text>"#, (TOP + H - BOTTOM) / 2.0, (TOP + H - BOTTOM) / 2.0, grid.epsilon);
    let px = x.map(sqrt_n);
    let _ = writeln!(out, r##"<line x1="{px:.2}" y1="{TOP}" x2="{px:.2}" y2="{:.2}" stroke="#555" stroke-dasharray="2 3"/>"##, H - BOTTOM);
    let _ = writeln!(out, r##"<text x="{:.2}" y="{:.2}" fill="#555">r = sqrt(n)</text>"##, px + 4.0, TOP + 14.0);

    // One colour per horizon series, in first-appearance order.
    let mut keys: Vec<String> = Vec::new();
    for row in rows {
        let k = series_key(row);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for (i, key) in keys.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut series: Vec<&FigureRow> = rows.iter().filter(|r| &series_key(r) == key).collect();
        series.sort_by_key(|r| r.r);
        let bound: Vec<(f64, f64)> = series.iter().map(|r| (x.map(r.r as f64), y.map(r.n_star_bound.min(Y_CAP)))).collect();
        let emp: Vec<(f64, f64)> = series.iter().map(|r| (x.map(r.r as f64), y.map(r.n_star_hat))).collect();
        polyline(&mut out, &bound, color, true);
        polyline(&mut out, &emp, color, false);
        for r in &series {
            let px = x.map(r.r as f64);
            let (lo, hi) = (y.map(r.n_star_lo), y.map(r.n_star_hi));
            let _ = writeln!(out, r#"<line x1="{px:.2}" y1="{lo:.2}" x2="{px:.2}" y2="{hi:.2}" stroke="{color}"/>"#);
            for py in [lo, hi] {
                let _ = writeln!(out, r#"<line x1="{:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="{color}"/>"#, px - 4.0, px + 4.0);
            }
        }
        let ly = TOP + 20.0 + 40.0 * i as f64;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(out, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="1.8" stroke-dasharray="6 4"/>"#, lx + 26.0);
        let _ = writeln!(out, r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="1.8"/>"#, ly + 14.0, lx + 26.0, ly + 14.0);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">{key}</text>"#, lx + 32.0, ly + 11.0);
    }
    let _ = writeln!(out, r#"<text x="{LEFT}" y="18">n = {}, lambda = {}: dashed bound, solid empirical (95% CI)</text>"#, grid.n, grid.lambda);
    out.push_str("</svg>\n");
    out
}
