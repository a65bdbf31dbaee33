use std::fmt::Write as _;
use std::path::Path;

use super::{ClasswiseReport, SplitReport, SweepRow};
use crate::data::atomic_write;
use crate::Result;

/// `%g`-style formatting with 6 significant digits.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn to_csv<F>(header: &[&str], fill: F) -> String
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("write to vec");
    fill(&mut w).expect("write to vec");
    String::from_utf8(w.into_inner().expect("flush to vec")).expect("csv is utf-8")
}

/// Columns `split,top1,top5,n`; an absent split has empty accuracies and
/// `n = 0`.
pub fn split_report_csv(r: &SplitReport) -> String {
    to_csv(&["split", "top1", "top5", "n"], |w| {
        for (name, m) in r.entries() {
            match m {
                Some(m) => {
                    w.write_record([name, &fmt_sig6(m.top1), &fmt_sig6(m.top5), &m.n.to_string()])?
                }
                None => w.write_record([name, "", "", "0"])?,
            }
        }
        Ok(())
    })
}

pub fn classwise_csv(r: &ClasswiseReport) -> String {
    to_csv(
        &[
            "class_id",
            "baseline_top1",
            "composed_top1",
            "delta",
            "nn_distance",
        ],
        |w| {
            for row in &r.rows {
                w.write_record([
                    row.class_id.to_string(),
                    fmt_sig6(row.baseline_top1),
                    fmt_sig6(row.composed_top1),
                    fmt_sig6(row.delta),
                    fmt_sig6(row.nn_distance),
                ])?;
            }
            Ok(())
        },
    )
}

/// One row per `(param, split)`; absent splits are left out.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    to_csv(&["param", "split", "top1", "top5"], |w| {
        for row in rows {
            for (name, m) in row.report.entries() {
                if let Some(m) = m {
                    w.write_record([
                        &fmt_sig6(row.param),
                        name,
                        &fmt_sig6(m.top1),
                        &fmt_sig6(m.top5),
                    ])?;
                }
            }
        }
        Ok(())
    })
}

pub fn write_split_report_csv(path: &Path, r: &SplitReport) -> Result<()> {
    atomic_write(path, split_report_csv(r).as_bytes())
}

pub fn write_classwise_csv(path: &Path, r: &ClasswiseReport) -> Result<()> {
    atomic_write(path, classwise_csv(r).as_bytes())
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    atomic_write(path, sweep_csv(rows).as_bytes())
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 4] = ["#d62728", "#1f77b4", "#2ca02c", "#000000"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for (x, y) in points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 <= 0.0 {
            (x0, x1) = (x0 - 0.5, x1 + 0.5);
        }
        if y1 - y0 <= 0.0 {
            (y0, y1) = (y0 - 0.5, y1 + 0.5);
        }
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn open(out: &mut String, f: &Frame, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let (l, r, t, b) = (PAD, W - PAD, PAD, H - PAD);
    let _ = writeln!(
        out,
        r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#
    );
    for (v, anchor, x, y) in [
        (f.x0, "start", l, b + 16.0),
        (f.x1, "end", r, b + 16.0),
        (f.y0, "end", l - 6.0, b),
        (f.y1, "end", l - 6.0, t + 4.0),
    ] {
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{}</text>"#,
            fmt_sig6(v)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 16.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
}

/// Top-1 per split against the swept parameter, one polyline per split.
pub fn sweep_svg(rows: &[SweepRow], param_name: &str) -> String {
    let series: Vec<(&str, Vec<(f64, f64)>)> = ["few", "medium", "many", "all"]
        .iter()
        .map(|&name| {
            let pts = rows
                .iter()
                .filter_map(|r| r.report.get(name).map(|m| (r.param, m.top1)))
                .collect();
            (name, pts)
        })
        .collect();
    let frame = Frame::fit(series.iter().flat_map(|(_, p)| p.iter().copied()));
    let mut out = String::new();
    open(
        &mut out,
        &frame,
        &format!("Top-1 accuracy vs {param_name}"),
        param_name,
        "top-1",
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                frame.px(x),
                frame.py(y)
            );
        }
        let ly = PAD + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/>"#,
            W - PAD - 70.0,
            ly - 9.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly}">{name}</text>"#,
            W - PAD - 55.0
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Nearest-neighbor distance against top-1 change, one point per class.
pub fn scatter_svg(r: &ClasswiseReport) -> String {
    let pts: Vec<(f64, f64)> = r
        .rows
        .iter()
        .map(|row| (row.nn_distance, row.delta))
        .collect();
    let frame = Frame::fit(pts.iter().copied());
    let mut out = String::new();
    let title = match r.spearman {
        Some(s) => format!("Per-class improvement (Spearman {})", fmt_sig6(s)),
        None => "Per-class improvement".to_string(),
    };
    open(
        &mut out,
        &frame,
        &title,
        "distance to nearest neighbor",
        "top-1 change",
    );
    for (x, y) in pts {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{}"/>"#,
            frame.px(x),
            frame.py(y),
            COLORS[1]
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{ClasswiseRow, SplitMetrics};

    #[test]
    fn sig6_formatting() {
        assert_eq!(fmt_sig6(0.0), "0");
        assert_eq!(fmt_sig6(1.0), "1");
        assert_eq!(fmt_sig6(0.5), "0.5");
        assert_eq!(fmt_sig6(1.0 / 3.0), "0.333333");
        assert_eq!(fmt_sig6(2.0 / 3.0), "0.666667");
        assert_eq!(fmt_sig6(-0.125), "-0.125");
        assert_eq!(fmt_sig6(123456.0), "123456");
        assert_eq!(fmt_sig6(1234567.0), "1.23457e+06");
        assert_eq!(fmt_sig6(0.0001), "0.0001");
        assert_eq!(fmt_sig6(0.00001234), "1.234e-05");
        assert_eq!(fmt_sig6(999999.5), "1e+06");
        assert_eq!(fmt_sig6(0.1 + 0.2), "0.3");
    }

    fn report() -> SplitReport {
        let m = |t1, t5, n| {
            Some(SplitMetrics {
                top1: t1,
                top5: t5,
                n,
            })
        };
        SplitReport {
            few: m(0.25, 0.75, 4),
            medium: None,
            many: m(1.0, 1.0, 2),
            all: m(0.5, 5.0 / 6.0, 6),
        }
    }

    #[test]
    fn split_csv_layout() {
        let text = split_report_csv(&report());
        assert_eq!(
            text,
            "split,top1,top5,n\nfew,0.25,0.75,4\nmedium,,,0\nmany,1,1,2\nall,0.5,0.833333,6\n"
        );
    }

    #[test]
    fn sweep_outputs() {
        let rows = vec![
            SweepRow {
                param: 0.2,
                report: report(),
            },
            SweepRow {
                param: 0.4,
                report: report(),
            },
        ];
        let text = sweep_csv(&rows);
        assert_eq!(text.lines().count(), 1 + 2 * 3);
        assert!(text.lines().nth(1).unwrap().starts_with("0.2,few,0.25"));
        let svg = sweep_svg(&rows, "gamma");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 3);
    }

    #[test]
    fn classwise_outputs() {
        let r = ClasswiseReport {
            rows: vec![ClasswiseRow {
                class_id: 7,
                baseline_top1: 0.2,
                composed_top1: 0.6,
                delta: 0.6 - 0.2,
                nn_distance: 1.5,
            }],
            spearman: None,
        };
        assert_eq!(
            classwise_csv(&r),
            "class_id,baseline_top1,composed_top1,delta,nn_distance\n7,0.2,0.6,0.4,1.5\n"
        );
        assert_eq!(scatter_svg(&r).matches("<circle").count(), 1);
    }
}
