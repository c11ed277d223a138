//! Mirror histograms: each arm's raw and weighted distribution drawn on
//! opposite sides of a zero line.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::data::ObservationalDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MirrorHistogram {
    pub bin_edges: Vec<f64>,
    pub raw_counts_treated: Vec<u64>,
    pub raw_counts_control: Vec<u64>,
    pub weighted_counts_treated: Vec<f64>,
    pub weighted_counts_control: Vec<f64>,
}

impl MirrorHistogram {
    pub fn bins(&self) -> usize {
        self.bin_edges.len() - 1
    }

    pub fn weighted_total_treated(&self) -> f64 {
        self.weighted_counts_treated.iter().sum()
    }

    pub fn weighted_total_control(&self) -> f64 {
        self.weighted_counts_control.iter().sum()
    }
}

/// Bins `values` into `bins` equal-width bins over `range`, or over the
/// observed range when `range` is `None`. Bins are left-closed except the
/// last, which also includes its upper edge.
pub fn mirror_histogram(
    d: &ObservationalDataset,
    values: &[f64],
    weights: &[f64],
    bins: usize,
    range: Option<(f64, f64)>,
) -> Result<MirrorHistogram> {
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be at least 1".into()));
    }
    if values.len() != d.n() || weights.len() != d.n() {
        return Err(Error::InvalidArgument(format!(
            "{} values and {} weights for {} subjects",
            values.len(),
            weights.len(),
            d.n()
        )));
    }
    if let Some((i, &v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteValue {
            row: i,
            column: "value".into(),
            value: v.to_string(),
        });
    }
    if let Some((i, &w)) = weights.iter().enumerate().find(|(_, &w)| !(w >= 0.0)) {
        return Err(Error::NegativeWeight { index: i, value: w });
    }
    let (lo, hi) = match range {
        Some((lo, hi)) => {
            if !(lo < hi) {
                return Err(Error::InvalidArgument(format!("empty range [{lo}, {hi}]")));
            }
            (lo, hi)
        }
        None => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lo < hi {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        }
    };
    let width = (hi - lo) / bins as f64;
    let mut h = MirrorHistogram {
        bin_edges: (0..=bins)
            .map(|k| if k == bins { hi } else { lo + k as f64 * width })
            .collect(),
        raw_counts_treated: vec![0; bins],
        raw_counts_control: vec![0; bins],
        weighted_counts_treated: vec![0.0; bins],
        weighted_counts_control: vec![0.0; bins],
    };
    for (i, &v) in values.iter().enumerate() {
        if v < lo || v > hi {
            return Err(Error::InvalidArgument(format!(
                "value {v} at row {i} outside [{lo}, {hi}]"
            )));
        }
        let k = (((v - lo) / width) as usize).min(bins - 1);
        if d.is_treated(i) {
            h.raw_counts_treated[k] += 1;
            h.weighted_counts_treated[k] += weights[i];
        } else {
            h.raw_counts_control[k] += 1;
            h.weighted_counts_control[k] += weights[i];
        }
    }
    Ok(h)
}

/// Text around the chart.
#[derive(Debug, Clone)]
pub struct MirrorLabels {
    pub title: String,
    pub x_label: String,
    pub control_label: String,
    pub treated_label: String,
}

impl Default for MirrorLabels {
    fn default() -> Self {
        Self {
            title: String::new(),
            x_label: "propensity score".into(),
            control_label: "Z = 0".into(),
            treated_label: "Z = 1".into(),
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// SVG document for a mirror histogram: control above the zero line,
/// treated below; raw counts as outlined bars, weighted counts filled.
pub fn mirror_svg(h: &MirrorHistogram, labels: &MirrorLabels) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const MARGIN: f64 = 40.0;
    let plot_w = W - 2.0 * MARGIN;
    let half = (H - 2.0 * MARGIN) / 2.0;
    let zero_y = MARGIN + half;
    let max = h
        .raw_counts_treated
        .iter()
        .chain(&h.raw_counts_control)
        .copied()
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let (lo, hi) = (h.bin_edges[0], h.bin_edges[h.bins()]);
    let x_of = |v: f64| MARGIN + (v - lo) / (hi - lo) * plot_w;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    if !labels.title.is_empty() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#,
            W / 2.0,
            escape(&labels.title)
        );
    }
    let groups: [(&str, &str, bool, Vec<f64>); 4] = [
        ("raw control", r#"fill="none" stroke="black""#, true, h.raw_counts_control.iter().map(|&c| c as f64).collect()),
        ("weighted control", r#"fill="grey" stroke="none""#, true, h.weighted_counts_control.clone()),
        ("raw treated", r#"fill="none" stroke="black""#, false, h.raw_counts_treated.iter().map(|&c| c as f64).collect()),
        ("weighted treated", r#"fill="grey" stroke="none""#, false, h.weighted_counts_treated.clone()),
    ];
    for (class, style, above, counts) in &groups {
        let _ = writeln!(s, r#"<g class="{class}" {style}>"#);
        for (k, &c) in counts.iter().enumerate() {
            let x0 = x_of(h.bin_edges[k]);
            let x1 = x_of(h.bin_edges[k + 1]);
            let height = c / max * half;
            let y = if *above { zero_y - height } else { zero_y };
            let _ = writeln!(
                s,
                r#"<rect x="{x0:.3}" y="{y:.3}" width="{:.3}" height="{height:.3}"/>"#,
                x1 - x0
            );
        }
        s.push_str("</g>\n");
    }
    let _ = writeln!(
        s,
        r#"<line class="zero" x1="{MARGIN}" y1="{zero_y}" x2="{}" y2="{zero_y}" stroke="black"/>"#,
        W - MARGIN
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12">{}</text>"#,
        MARGIN + 4.0,
        MARGIN + 12.0,
        escape(&labels.control_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12">{}</text>"#,
        MARGIN + 4.0,
        H - MARGIN - 4.0,
        escape(&labels.treated_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        W / 2.0,
        H - 10.0,
        escape(&labels.x_label)
    );
    for (v, anchor) in [(lo, "start"), (hi, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{}" text-anchor="{anchor}" font-size="10">{}</text>"#,
            x_of(v),
            H - MARGIN + 14.0,
            crate::json::format_g17(v)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn render_mirror_svg(
    h: &MirrorHistogram,
    path: impl AsRef<Path>,
    labels: &MirrorLabels,
) -> Result<()> {
    std::fs::write(path, mirror_svg(h, labels))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propensity::{effective_sample_sizes, matching_weights, SmoothWeightConfig};

    fn four() -> (ObservationalDataset, Vec<f64>) {
        let d = ObservationalDataset::new(
            vec![3.0, 1.0, 5.0, 2.0],
            vec![1, 0, 1, 0],
            vec![vec![1.0]; 4],
            vec!["(intercept)".into()],
        )
        .unwrap();
        (d, vec![0.2, 0.2, 0.8, 0.8])
    }

    #[test]
    fn fixture_counts() {
        let (d, e) = four();
        let w = matching_weights(&d, &e, &SmoothWeightConfig::default()).unwrap();
        let h = mirror_histogram(&d, &e, &w, 2, Some((0.0, 1.0))).unwrap();
        assert_eq!(h.bin_edges, vec![0.0, 0.5, 1.0]);
        assert_eq!(h.raw_counts_treated, vec![1, 1]);
        assert_eq!(h.raw_counts_control, vec![1, 1]);
        // 1 - 0.8 is not exactly 0.2
        let close = |a: &[f64], b: [f64; 2]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15);
        assert!(close(&h.weighted_counts_treated, [1.0, 0.25]));
        assert!(close(&h.weighted_counts_control, [0.25, 1.0]));
        let ess = effective_sample_sizes(&d, &w).unwrap();
        assert_eq!(h.weighted_total_treated(), ess.treated);
        assert_eq!(h.weighted_total_control(), ess.control);
    }

    #[test]
    fn unit_weights_reproduce_raw() {
        let (d, e) = four();
        let h = mirror_histogram(&d, &e, &[1.0; 4], 3, None).unwrap();
        for k in 0..3 {
            assert_eq!(h.weighted_counts_treated[k], h.raw_counts_treated[k] as f64);
            assert_eq!(h.weighted_counts_control[k], h.raw_counts_control[k] as f64);
        }
        assert_eq!(h.bin_edges[3], 0.8);
    }

    #[test]
    fn upper_edge_in_last_bin() {
        let (d, _) = four();
        let h = mirror_histogram(&d, &[0.0, 0.5, 1.0, 1.0], &[1.0; 4], 2, Some((0.0, 1.0))).unwrap();
        assert_eq!(h.raw_counts_treated, vec![1, 1]);
        assert_eq!(h.raw_counts_control, vec![0, 2]);
    }

    #[test]
    fn validation() {
        let (d, e) = four();
        assert!(mirror_histogram(&d, &e, &[1.0; 4], 0, None).is_err());
        assert!(mirror_histogram(&d, &e, &[1.0; 3], 2, None).is_err());
        assert!(mirror_histogram(&d, &[0.1, f64::NAN, 0.2, 0.3], &[1.0; 4], 2, None).is_err());
        assert!(mirror_histogram(&d, &e, &[1.0; 4], 2, Some((0.3, 0.5))).is_err());
        assert!(mirror_histogram(&d, &[2.0; 4], &[1.0; 4], 2, None).is_ok());
    }

    #[test]
    fn svg_structure() {
        let (d, e) = four();
        let w = matching_weights(&d, &e, &SmoothWeightConfig::default()).unwrap();
        let h = mirror_histogram(&d, &e, &w, 4, Some((0.0, 1.0))).unwrap();
        let svg = mirror_svg(&h, &MirrorLabels::default());
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<g class=").count(), 4);
        assert_eq!(svg.matches("<rect").count(), 16);
        // bins 1 and 2 are empty
        assert!(svg.contains(r#"height="0.000""#));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.svg");
        render_mirror_svg(&h, &path, &MirrorLabels::default()).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap(), svg);
    }
}
