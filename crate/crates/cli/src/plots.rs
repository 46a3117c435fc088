//! Static SVG plots of a sweep. Layout and number formatting are fixed, so
//! equal records give identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use tmlab_core::blowup::bubble_radial;

use crate::record::RunRecord;

pub const VALUE_PLOT: &str = "value_vs_epsilon.svg";
pub const PROFILE_PLOT: &str = "radial_profile.svg";
pub const REGULAR_PART_PLOT: &str = "regular_part_vs_alpha.svg";

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Chart {
    svg: String,
    x: (f64, f64),
    y: (f64, f64),
    legend_row: usize,
}

fn pad((lo, hi): (f64, f64)) -> (f64, f64) {
    if (hi - lo).abs() < 1e-12 * hi.abs().max(1.0) {
        let d = hi.abs().max(1.0) * 0.05;
        (lo - d, hi + d)
    } else {
        let d = (hi - lo) * 0.05;
        (lo - d, hi + d)
    }
}

fn range(vals: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    vals.filter(|v| v.is_finite()).fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    fn new(title: &str, xlabel: &str, ylabel: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        let (x, y) = (pad(x), pad(y));
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, (LEFT + W - RIGHT) / 2.0, esc(title));
        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
        let _ = writeln!(svg, r#"<path d="M{x0:.1} {y1:.1} V{y0:.1} H{x1:.1}" stroke="black" fill="none"/>"#);
        let mut c = Chart { svg, x, y, legend_row: 0 };
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let xv = x.0 + t * (x.1 - x.0);
            let yv = y.0 + t * (y.1 - y.0);
            let (px, py) = (c.px(xv), c.py(yv));
            let _ = writeln!(c.svg, r#"<line x1="{px:.1}" y1="{y0:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/>"#, y0 + 5.0);
            let _ = writeln!(c.svg, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, y0 + 18.0, tick(xv));
            let _ = writeln!(c.svg, r#"<line x1="{:.1}" y1="{py:.1}" x2="{x0:.1}" y2="{py:.1}" stroke="black"/>"#, x0 - 5.0);
            let _ = writeln!(c.svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 8.0, py + 4.0, tick(yv));
        }
        let _ = writeln!(c.svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, esc(xlabel));
        let _ = writeln!(
            c.svg,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            esc(ylabel)
        );
        c
    }

    fn px(&self, v: f64) -> f64 {
        LEFT + (v - self.x.0) / (self.x.1 - self.x.0) * (W - RIGHT - LEFT)
    }

    fn py(&self, v: f64) -> f64 {
        H - BOTTOM - (v - self.y.0) / (self.y.1 - self.y.0) * (H - BOTTOM - TOP)
    }

    fn legend(&mut self, color: &str, label: &str, dashed: bool) {
        let y = TOP + 10.0 + 18.0 * self.legend_row as f64;
        let x = W - RIGHT + 12.0;
        let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(self.svg, r#"<line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{color}" stroke-width="2"{dash}/>"#, x + 20.0);
        let _ = writeln!(self.svg, r#"<text class="legend" x="{:.1}" y="{:.1}">{}</text>"#, x + 26.0, y + 4.0, esc(label));
        self.legend_row += 1;
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str, markers: bool) {
        if pts.is_empty() {
            return;
        }
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y))).collect();
        let _ = writeln!(self.svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, path.join(" "));
        if markers {
            for &(x, y) in pts {
                let _ = writeln!(self.svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, self.px(x), self.py(y));
            }
        }
    }

    fn hline(&mut self, y: f64, color: &str, label: &str) {
        let py = self.py(y);
        let _ = writeln!(
            self.svg,
            r#"<line class="certificate" x1="{LEFT:.1}" y1="{py:.2}" x2="{:.1}" y2="{py:.2}" stroke="{color}" stroke-dasharray="6 4"/>"#,
            W - RIGHT
        );
        self.legend(color, label, true);
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

fn tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 1e-2 && v.abs() < 1e4) {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

/// Placeholder with a message in place of a plot.
pub fn stub(title: &str, message: &str) -> String {
    format!(
        concat!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="14">"#,
            "\n",
            r#"<rect width="{w}" height="{h}" fill="white"/>"#,
            "\n",
            r#"<text x="{cx}" y="40" text-anchor="middle">{t}</text>"#,
            "\n",
            r##"<text class="stub" x="{cx}" y="{cy}" text-anchor="middle" fill="#a00">{m}</text>"##,
            "\n</svg>\n"
        ),
        w = W,
        h = H,
        cx = W / 2.0,
        cy = H / 2.0,
        t = esc(title),
        m = esc(message)
    )
}

fn alpha_groups(records: &[RunRecord]) -> Vec<f64> {
    let mut alphas: Vec<f64> = Vec::new();
    for r in records {
        if !alphas.iter().any(|a| a.to_bits() == r.alpha.to_bits()) {
            alphas.push(r.alpha);
        }
    }
    alphas
}

/// Functional value against epsilon, one line per alpha, with the
/// certificate of each alpha as a dashed line.
pub fn value_plot(records: &[RunRecord]) -> String {
    let title = "max value of int exp((4 pi - eps) u^2) vs eps";
    let pts = |a: f64| -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = records
            .iter()
            .filter(|r| r.alpha.to_bits() == a.to_bits())
            .filter_map(|r| r.maximizer.as_ref().map(|m| (r.epsilon, m.value)))
            .filter(|p| p.1.is_finite())
            .collect();
        v.sort_by(|p, q| p.0.total_cmp(&q.0));
        v
    };
    let alphas = alpha_groups(records);
    let all: Vec<(f64, f64)> = alphas.iter().flat_map(|&a| pts(a)).collect();
    let certs: Vec<(f64, f64)> = alphas
        .iter()
        .filter_map(|&a| records.iter().find(|r| r.alpha.to_bits() == a.to_bits()).and_then(|r| r.certificate).map(|c| (a, c)))
        .collect();
    let (Some(xr), Some(yr)) = (range(all.iter().map(|p| p.0)), range(all.iter().map(|p| p.1).chain(certs.iter().map(|c| c.1)))) else {
        return stub(title, "no converged maximizer values");
    };
    let mut c = Chart::new(title, "eps", "value", xr, yr);
    for (i, &a) in alphas.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        c.polyline(&pts(a), color, true);
        c.legend(color, &format!("alpha = {a:.4}"), false);
        if let Some(&(_, cert)) = certs.iter().find(|p| p.0.to_bits() == a.to_bits()) {
            c.hline(cert, color, &format!("certificate {cert:.4}"));
        }
    }
    c.finish()
}

/// Rescaled profile of the smallest-epsilon record against the bubble.
pub fn profile_plot(records: &[RunRecord]) -> String {
    let title = "rescaled profile vs bubble";
    let Some(r) = records
        .iter()
        .filter(|r| r.blowup.is_some())
        .min_by(|a, b| a.epsilon.total_cmp(&b.epsilon).then(a.index.cmp(&b.index)))
    else {
        return stub(title, "no blow-up diagnostics available");
    };
    let b = r.blowup.as_ref().expect("filtered");
    let rows: Vec<_> = b.profile.iter().filter(|p| p.resolved).collect();
    if b.unresolved_core || rows.is_empty() {
        return stub(
            title,
            &format!("unresolved-core: r_eps = {:.3e} (log r_eps = {:.3}) below mesh resolution, eps = {:.4}", b.r_eps, b.log_r_eps, r.epsilon),
        );
    }
    let s_max = rows.iter().map(|p| p.s).fold(0.0, f64::max);
    let curve: Vec<(f64, f64)> = (0..=80).map(|i| s_max * i as f64 / 80.0).map(|s| (s, bubble_radial(s))).collect();
    let samples: Vec<(f64, f64)> = rows.iter().map(|p| (p.s, p.phi)).collect();
    let yr = range(curve.iter().chain(&samples).map(|p| p.1)).expect("nonempty");
    let mut c = Chart::new(title, "|x| / r_eps", "phi", (0.0, s_max), yr);
    c.polyline(&curve, COLORS[0], false);
    c.legend(COLORS[0], "bubble", false);
    c.polyline(&samples, COLORS[1], true);
    c.legend(COLORS[1], &format!("eps = {:.4}", r.epsilon), false);
    c.finish()
}

/// Regular part A of the Green function against alpha.
pub fn regular_part_plot(records: &[RunRecord]) -> String {
    let title = "regular part A vs alpha";
    let pts: Vec<(f64, f64)> = alpha_groups(records)
        .into_iter()
        .filter_map(|a| {
            records
                .iter()
                .find(|r| r.alpha.to_bits() == a.to_bits() && r.green.is_some())
                .map(|r| (a, r.green.as_ref().expect("filtered").regular_part))
        })
        .collect();
    let (Some(xr), Some(yr)) = (range(pts.iter().map(|p| p.0)), range(pts.iter().map(|p| p.1))) else {
        return stub(title, "no Green function results");
    };
    let mut c = Chart::new(title, "alpha", "A", xr, yr);
    c.polyline(&pts, COLORS[0], true);
    c.legend(COLORS[0], "A(alpha)", false);
    c.finish()
}

/// Writes the three plots into `dir`.
pub fn emit_plots(records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut out = Vec::new();
    for (name, body) in [
        (VALUE_PLOT, value_plot(records)),
        (PROFILE_PLOT, profile_plot(records)),
        (REGULAR_PART_PLOT, regular_part_plot(records)),
    ] {
        let p = dir.join(name);
        std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
        out.push(p);
    }
    Ok(out)
}
