//! Minimal standalone SVG charts.

use std::fmt::Write;

use super::{EvaluationReport, ScoreDifferenceSummary};

const W: f64 = 480.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = write!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
}

/// ROC curves, one polyline per report, with AUC in the legend.
pub fn roc_svg(title: &str, reports: &[EvaluationReport]) -> String {
    let (pw, ph) = (W - 2.0 * MARGIN, H - 2.0 * MARGIN);
    let x = |fpr: f64| MARGIN + fpr * pw;
    let y = |tpr: f64| H - MARGIN - tpr * ph;
    let mut out = String::new();
    header(&mut out, title);
    let _ = write!(out, r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let _ = write!(
        out,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#aaa" stroke-dasharray="4 3"/>"##,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = write!(out, r#"<text x="{}" y="{}" text-anchor="middle">{t}</text>"#, x(t), H - MARGIN + 15.0);
        let _ = write!(out, r#"<text x="{}" y="{}" text-anchor="end">{t}</text>"#, MARGIN - 5.0, y(t) + 4.0);
    }
    let _ = write!(out, r#"<text x="{}" y="{}" text-anchor="middle">False positive rate</text>"#, W / 2.0, H - 12.0);
    let _ = write!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">True positive rate</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (i, r) in reports.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = r.roc.iter().map(|p| format!("{:.2},{:.2}", x(p.fpr), y(p.tpr))).collect();
        let _ = write!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = MARGIN + 15.0 + 14.0 * i as f64;
        let lx = x(0.55);
        let _ = write!(out, r#"<line x1="{lx}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/>"#, ly - 4.0, lx + 16.0, ly - 4.0);
        let _ = write!(out, r#"<text x="{}" y="{ly}">{} ({:.3})</text>"#, lx + 20.0, escape(&r.detector_id), r.auc);
    }
    out.push_str("</svg>\n");
    out
}

/// Bar chart of a score-difference histogram.
pub fn histogram_svg(summary: &ScoreDifferenceSummary) -> String {
    let (pw, ph) = (W - 2.0 * MARGIN, H - 2.0 * MARGIN);
    let max = summary.bins.iter().map(|b| b.count).max().unwrap_or(0).max(1) as f64;
    let nb = summary.bins.len().max(1) as f64;
    let bw = pw / nb;
    let mut out = String::new();
    let title = match &summary.wilcoxon {
        Some(w) => format!("{} (AI - human), n = {}, p = {:.3e}", summary.category, summary.n_pairs, w.p_value),
        None => format!("{} (AI - human), n = {}", summary.category, summary.n_pairs),
    };
    header(&mut out, &title);
    let _ = write!(
        out,
        r#"<line x1="{MARGIN}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        H - MARGIN,
        W - MARGIN,
        H - MARGIN
    );
    for (i, b) in summary.bins.iter().enumerate() {
        let h = b.count as f64 / max * ph;
        let bx = MARGIN + i as f64 * bw;
        let _ = write!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#1f77b4" stroke="white"/>"##,
            bx,
            H - MARGIN - h,
            bw,
            h
        );
        let _ = write!(out, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, bx + bw / 2.0, H - MARGIN + 15.0, b.diff);
        if b.count > 0 {
            let _ = write!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, bx + bw / 2.0, H - MARGIN - h - 3.0, b.count);
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::difference_summary;
    use crate::evaluation::{auc, roc_curve};
    use crate::score::Orientation;

    #[test]
    fn svgs_are_well_formed() {
        let rep = EvaluationReport {
            detector_id: "a<b".into(),
            orientation: Orientation::HigherIsAi,
            n_ai: 2,
            n_human: 2,
            rows: vec![],
            auc: auc(&[1.0, 3.0], &[2.0, 4.0]).unwrap(),
            roc: roc_curve(&[1.0, 3.0], &[2.0, 4.0]).unwrap(),
            bootstrap_resamples: 0,
            seed: 0,
            calibration_fingerprint: None,
            test_fingerprint: None,
        };
        let svg = roc_svg("ROC", &[rep]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b (0.250)"));
        let h = histogram_svg(&difference_summary("confidence", &[1, 1, 0], 0, 4));
        assert_eq!(h.matches("<rect").count(), 1 + 9);
    }
}
