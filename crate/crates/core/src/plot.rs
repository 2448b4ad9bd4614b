//! Minimal static SVG renderings of report data. Output is plain text so the
//! files diff cleanly; there is no styling beyond fills and labels.

use crate::ensemble::Stratum;
use crate::matrix::{MappingMatrix, RISK_LEVELS, TECH_LEVELS};
use crate::rational::to_f64;
use crate::stats::{CellGrid, Cohort};
use std::fmt::Write;

const BINS: usize = 20;

fn header(width: u32, height: u32, title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n<title>{}</title>\n",
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// White (0) to dark blue (1).
fn shade(v: f64) -> String {
    let v = v.clamp(0.0, 1.0);
    let r = (255.0 - 222.0 * v).round() as u8;
    let g = (255.0 - 178.0 * v).round() as u8;
    let b = (255.0 - 75.0 * v).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Histogram of OAI values over [0, 1] with 20 equal bins.
pub fn density_svg(values: &[f64], scenario: &str) -> String {
    let mut counts = [0usize; BINS];
    for &v in values {
        let bin = ((v * BINS as f64).floor() as usize).min(BINS - 1);
        counts[bin] += 1;
    }
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let (left, top, plot_w, plot_h) = (40.0, 30.0, 400.0, 200.0);
    let bar_w = plot_w / BINS as f64;
    let mut s = header(480, 270, &format!("OAI distribution ({scenario})"));
    let _ = writeln!(
        s,
        "<text x=\"{left}\" y=\"18\">OAI distribution, {} occupations ({})</text>",
        values.len(),
        escape(scenario)
    );
    for (i, &c) in counts.iter().enumerate() {
        let h = plot_h * c as f64 / max;
        let x = left + bar_w * i as f64;
        let y = top + plot_h - h;
        let _ = writeln!(
            s,
            "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"#4a7ab4\"/>",
            bar_w - 1.0
        );
    }
    let base = top + plot_h;
    let _ = writeln!(s, "<line x1=\"{left}\" y1=\"{base}\" x2=\"{}\" y2=\"{base}\" stroke=\"black\"/>", left + plot_w);
    for tick in 0..=5 {
        let x = left + plot_w * f64::from(tick) / 5.0;
        let _ = writeln!(
            s,
            "<text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\">{:.1}</text>",
            base + 16.0,
            f64::from(tick) / 5.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Tech level rows (3 at the top) against risk score columns.
pub fn heatmap_svg(matrix: &MappingMatrix) -> String {
    let cell = 60.0;
    let (left, top) = (70.0, 40.0);
    let mut s = header(400, 330, &format!("Mapping matrix ({})", matrix.scenario()));
    let _ = writeln!(s, "<text x=\"{left}\" y=\"20\">Mapping matrix: {}</text>", escape(matrix.scenario().label()));
    for tech in 0..TECH_LEVELS {
        let y = top + cell * (TECH_LEVELS - 1 - tech) as f64;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">T={tech}</text>",
            left - 8.0,
            y + cell / 2.0 + 4.0
        );
        for risk in 0..RISK_LEVELS {
            let v = to_f64(&matrix.cells()[tech][risk]);
            let x = left + cell * risk as f64;
            let text = if v > 0.55 { "white" } else { "black" };
            let _ = writeln!(
                s,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell}\" height=\"{cell}\" fill=\"{}\" stroke=\"#888\"/>\
                 <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"{text}\">{v:.1}</text>",
                shade(v),
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    let bottom = top + cell * TECH_LEVELS as f64;
    for risk in 0..RISK_LEVELS {
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">R={}</text>",
            left + cell * risk as f64 + cell / 2.0,
            bottom + 18.0,
            risk + 1
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Strata x cohort grid of mean risk ratings, shaded on the 1..5 scale.
pub fn gap_svg(grid: &CellGrid) -> String {
    let (cw, ch) = (90.0, 50.0);
    let (left, top) = (130.0, 50.0);
    let mut s = header(420, 260, "Mean risk rating by stratum and cohort");
    let _ = writeln!(s, "<text x=\"10\" y=\"20\">Mean risk rating by stratum and cohort</text>");
    for (j, cohort) in Cohort::ALL.iter().enumerate() {
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{cohort}</text>",
            left + cw * j as f64 + cw / 2.0,
            top - 8.0
        );
    }
    for (i, stratum) in Stratum::ALL.iter().enumerate() {
        let y = top + ch * i as f64;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{stratum}</text>",
            left - 8.0,
            y + ch / 2.0 + 4.0
        );
        for (j, cohort) in Cohort::ALL.iter().enumerate() {
            let x = left + cw * j as f64;
            let (fill, label) = match grid.get(*stratum, *cohort) {
                Some(c) => (shade((c.mean - 1.0) / 4.0), format!("{:.2}", c.mean)),
                None => ("#eeeeee".to_string(), "n/a".to_string()),
            };
            let _ = writeln!(
                s,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cw}\" height=\"{ch}\" fill=\"{fill}\" stroke=\"#888\"/>\
                 <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{label}</text>",
                x + cw / 2.0,
                y + ch / 2.0 + 4.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
