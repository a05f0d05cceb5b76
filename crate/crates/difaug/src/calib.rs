//! Binary-classifier calibration: ECE, reliability diagrams, confidence
//! histograms.
//!
//! Confidence is max(σ(z), 1−σ(z)), so it lives in [0.5, 1]; bins partition
//! that interval. Ties at σ = 0.5 predict Real so the mapping is total.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DifaugError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Real,
    Fake,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRecord {
    /// Raw discriminator output.
    pub logit: f64,
    /// Ground-truth class of the input the logit was produced for.
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub num_bins: usize,
    pub bins: Vec<BinStat>,
    pub ece: f64,
    pub overall_accuracy: f64,
    pub total_samples: usize,
}

pub const DEFAULT_NUM_BINS: usize = 15;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Map a record to its confidence and predicted label.
pub fn confidence_and_label(record: &PredictionRecord) -> (f64, Label) {
    let p = sigmoid(record.logit);
    if p >= 0.5 {
        (p, Label::Real)
    } else {
        (1.0 - p, Label::Fake)
    }
}

/// Bin index over [0.5, 1]: left-open right-closed intervals, except the
/// first which also contains 0.5.
fn bin_index(confidence: f64, num_bins: usize) -> usize {
    let width = 0.5 / num_bins as f64;
    if confidence <= 0.5 + width {
        return 0;
    }
    let idx = ((confidence - 0.5) / width).ceil() as usize - 1;
    idx.min(num_bins - 1)
}

/// Binned ECE and per-bin statistics.
pub fn compute_ece(records: &[PredictionRecord], num_bins: usize) -> Result<CalibrationReport> {
    if records.is_empty() {
        return Err(DifaugError::InvalidArgument("compute_ece: no records".into()));
    }
    if num_bins == 0 {
        return Err(DifaugError::InvalidArgument("compute_ece: num_bins must be positive".into()));
    }
    let width = 0.5 / num_bins as f64;
    let mut counts = vec![0usize; num_bins];
    let mut conf_sums = vec![0.0; num_bins];
    let mut correct = vec![0usize; num_bins];
    let mut total_correct = 0usize;
    for r in records {
        let (conf, pred) = confidence_and_label(r);
        let b = bin_index(conf, num_bins);
        counts[b] += 1;
        conf_sums[b] += conf;
        if pred == r.label {
            correct[b] += 1;
            total_correct += 1;
        }
    }
    let n = records.len();
    let mut ece = 0.0;
    let bins: Vec<BinStat> = (0..num_bins)
        .map(|b| {
            let lo = 0.5 + b as f64 * width;
            let hi = 0.5 + (b + 1) as f64 * width;
            if counts[b] == 0 {
                BinStat { lo, hi, count: 0, mean_confidence: 0.0, accuracy: 0.0 }
            } else {
                let mean_confidence = conf_sums[b] / counts[b] as f64;
                let accuracy = correct[b] as f64 / counts[b] as f64;
                ece += counts[b] as f64 / n as f64 * (accuracy - mean_confidence).abs();
                BinStat { lo, hi, count: counts[b], mean_confidence, accuracy }
            }
        })
        .collect();
    Ok(CalibrationReport {
        num_bins,
        bins,
        ece,
        overall_accuracy: total_correct as f64 / n as f64,
        total_samples: n,
    })
}

/// Independent oracle for the ECE value: a direct double loop over records
/// and explicit bin intervals, sharing no code with `compute_ece`.
pub fn brute_force_ece(records: &[PredictionRecord], num_bins: usize) -> Result<f64> {
    if records.is_empty() || num_bins == 0 {
        return Err(DifaugError::InvalidArgument("brute_force_ece: empty input".into()));
    }
    let n = records.len() as f64;
    let mut ece = 0.0;
    for m in 0..num_bins {
        let lo = 0.5 + 0.5 * m as f64 / num_bins as f64;
        let hi = 0.5 + 0.5 * (m + 1) as f64 / num_bins as f64;
        let mut count = 0.0;
        let mut conf_sum = 0.0;
        let mut acc_sum = 0.0;
        for r in records {
            let p = 1.0 / (1.0 + (-r.logit).exp());
            let (conf, pred) = if p >= 0.5 { (p, Label::Real) } else { (1.0 - p, Label::Fake) };
            let inside = if m == 0 { conf >= lo && conf <= hi } else { conf > lo && conf <= hi };
            if inside {
                count += 1.0;
                conf_sum += conf;
                if pred == r.label {
                    acc_sum += 1.0;
                }
            }
        }
        if count > 0.0 {
            ece += count / n * (acc_sum / count - conf_sum / count).abs();
        }
    }
    Ok(ece)
}

/// Recompute the ECE from a report's published bins (self-consistency check).
pub fn ece_from_bins(report: &CalibrationReport) -> f64 {
    report
        .bins
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 / report.total_samples as f64 * (b.accuracy - b.mean_confidence).abs())
        .sum()
}

/// Write the reliability CSV and SVG diagram for a report.
pub fn reliability_export(report: &CalibrationReport, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| DifaugError::io(dir.display().to_string(), e))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut csv = String::from("bin_lo,bin_hi,count,mean_confidence,accuracy,gap\n");
    for b in &report.bins {
        let gap = if b.count > 0 { (b.accuracy - b.mean_confidence).abs() } else { 0.0 };
        csv.push_str(&format!(
            "{:.6},{:.6},{},{:.6},{:.6},{:.6}\n",
            b.lo, b.hi, b.count, b.mean_confidence, b.accuracy, gap
        ));
    }
    std::fs::write(&csv_path, csv)
        .map_err(|e| DifaugError::io(csv_path.display().to_string(), e))?;

    let svg_path = dir.join(format!("{stem}.svg"));
    let mut f = std::fs::File::create(&svg_path)
        .map_err(|e| DifaugError::io(svg_path.display().to_string(), e))?;
    write_reliability_svg(&mut f, report)
        .map_err(|e| DifaugError::io(svg_path.display().to_string(), e))
}

fn write_reliability_svg(w: &mut impl Write, report: &CalibrationReport) -> std::io::Result<()> {
    // two panels: reliability diagram (left), confidence histogram (right)
    let (pw, ph, margin) = (320.0f64, 280.0f64, 40.0f64);
    let total_w = 2.0 * pw + 3.0 * margin;
    let total_h = ph + 2.0 * margin;
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{total_h}" viewBox="0 0 {total_w} {total_h}">"#
    )?;
    writeln!(w, r#"<rect width="{total_w}" height="{total_h}" fill="white"/>"#)?;

    let nb = report.num_bins as f64;
    let bw = pw / nb;
    // accuracy bars
    for (i, b) in report.bins.iter().enumerate() {
        let x = margin + i as f64 * bw;
        let h = b.accuracy.max(0.0).min(1.0) * ph;
        let y = margin + ph - h;
        writeln!(
            w,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4477aa" stroke="#223355" stroke-width="0.5"/>"##,
            x, y, bw, h
        )?;
        // confidence marker
        if b.count > 0 {
            let cy = margin + ph - ((b.mean_confidence - 0.5) * 2.0).clamp(0.0, 1.0) * ph;
            writeln!(
                w,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#cc3311" stroke-width="2"/>"##,
                x, cy, x + bw, cy
            )?;
        }
    }
    // identity diagonal: accuracy == confidence
    writeln!(
        w,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#555555" stroke-dasharray="5,4"/>"##,
        margin,
        margin + ph * 0.5,
        margin + pw,
        margin
    )?;
    writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" font-size="13">reliability (ECE {:.4}, acc {:.3}, n {})</text>"#,
        margin,
        margin - 10.0,
        report.ece,
        report.overall_accuracy,
        report.total_samples
    )?;

    // confidence histogram
    let x0 = 2.0 * margin + pw;
    let max_count = report.bins.iter().map(|b| b.count).max().unwrap_or(1).max(1) as f64;
    for (i, b) in report.bins.iter().enumerate() {
        let x = x0 + i as f64 * bw;
        let h = b.count as f64 / max_count * ph;
        let y = margin + ph - h;
        writeln!(
            w,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#66aa77" stroke="#335544" stroke-width="0.5"/>"##,
            x, y, bw, h
        )?;
    }
    writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" font-size="13">confidence histogram</text>"#,
        x0,
        margin - 10.0
    )?;
    writeln!(w, "</svg>")
}

/// Parse a "logit,label" CSV (label ∈ {{real,fake}}).
pub fn parse_records_csv(text: &str) -> Result<Vec<PredictionRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if lineno == 0 && line.eq_ignore_ascii_case("logit,label") {
            continue;
        }
        let mut parts = line.split(',');
        let (logit_s, label_s) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a.trim(), b.trim()),
            _ => {
                return Err(DifaugError::Parse {
                    offset: lineno + 1,
                    detail: format!("line {}: expected 'logit,label'", lineno + 1),
                })
            }
        };
        let logit: f64 = logit_s.parse().map_err(|e| DifaugError::Parse {
            offset: lineno + 1,
            detail: format!("line {}: bad logit {logit_s:?}: {e}", lineno + 1),
        })?;
        if !logit.is_finite() {
            return Err(DifaugError::Parse {
                offset: lineno + 1,
                detail: format!("line {}: non-finite logit", lineno + 1),
            });
        }
        let label = match label_s {
            "real" => Label::Real,
            "fake" => Label::Fake,
            other => {
                return Err(DifaugError::Parse {
                    offset: lineno + 1,
                    detail: format!("line {}: bad label {other:?} (use real|fake)", lineno + 1),
                })
            }
        };
        records.push(PredictionRecord { logit, label });
    }
    Ok(records)
}

pub fn records_to_csv(records: &[PredictionRecord]) -> String {
    let mut out = String::from("logit,label\n");
    for r in records {
        let label = match r.label {
            Label::Real => "real",
            Label::Fake => "fake",
        };
        out.push_str(&format!("{:.12},{}\n", r.logit, label));
    }
    out
}

/// Hand-checkable 4-record case shared by unit and acceptance tests.
pub fn hand_case_records() -> Vec<PredictionRecord> {
    // confidences {0.6 correct, 0.7 wrong, 0.9 correct, 0.95 correct}
    let logit_for_conf = |c: f64| (c / (1.0 - c)).ln();
    vec![
        PredictionRecord { logit: logit_for_conf(0.6), label: Label::Real },
        PredictionRecord { logit: logit_for_conf(0.7), label: Label::Fake },
        PredictionRecord { logit: logit_for_conf(0.9), label: Label::Real },
        PredictionRecord { logit: logit_for_conf(0.95), label: Label::Real },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use rand::Rng;

    #[test]
    fn confidence_mapping() {
        let (c, l) = confidence_and_label(&PredictionRecord { logit: 0.0, label: Label::Real });
        assert_eq!((c, l), (0.5, Label::Real));
        let (c, l) = confidence_and_label(&PredictionRecord { logit: 3f64.ln(), label: Label::Real });
        assert!((c - 0.75).abs() < 1e-12);
        assert_eq!(l, Label::Real);
        let (c, l) =
            confidence_and_label(&PredictionRecord { logit: -(3f64.ln()), label: Label::Fake });
        assert!((c - 0.75).abs() < 1e-12);
        assert_eq!(l, Label::Fake);
    }

    #[test]
    fn hand_case_ece() {
        let records = hand_case_records();
        let report = compute_ece(&records, 2).unwrap();
        // bin1 (conf 0.65, acc 0.5), bin2 (conf 0.925, acc 1.0)
        assert!((report.ece - 0.1125).abs() < 1e-12, "ece = {}", report.ece);
        assert!((brute_force_ece(&records, 2).unwrap() - 0.1125).abs() < 1e-12);
        assert!((report.bins[0].mean_confidence - 0.65).abs() < 1e-12);
        assert!((report.bins[0].accuracy - 0.5).abs() < 1e-12);
        assert!((report.bins[1].mean_confidence - 0.925).abs() < 1e-12);
        assert_eq!(report.bins[1].accuracy, 1.0);
    }

    #[test]
    fn all_confident_all_wrong() {
        // logit +50 → confidence ≈ 1, predicted Real; label Fake
        let records = vec![PredictionRecord { logit: 50.0, label: Label::Fake }; 10];
        let report = compute_ece(&records, 15).unwrap();
        assert!((report.ece - 1.0).abs() < 1e-12);
        assert_eq!(report.overall_accuracy, 0.0);
    }

    #[test]
    fn single_record_degenerate() {
        let r = vec![PredictionRecord { logit: 3f64.ln(), label: Label::Real }];
        // conf 0.75, correct → ece = |1 − 0.75|
        assert!((brute_force_ece(&r, 1).unwrap() - 0.25).abs() < 1e-12);
        let r = vec![PredictionRecord { logit: 3f64.ln(), label: Label::Fake }];
        assert!((brute_force_ece(&r, 1).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn oracle_equivalence_randomized() {
        let mut rng = derive_rng(17, "calib", &[]);
        for trial in 0..50 {
            let n = rng.gen_range(1..400);
            let records: Vec<PredictionRecord> = (0..n)
                .map(|_| PredictionRecord {
                    logit: rng.gen_range(-6.0..6.0),
                    label: if rng.gen::<bool>() { Label::Real } else { Label::Fake },
                })
                .collect();
            for m in [5, 10, 15] {
                let fast = compute_ece(&records, m).unwrap().ece;
                let slow = brute_force_ece(&records, m).unwrap();
                assert!((fast - slow).abs() < 1e-12, "trial {trial} m {m}: {fast} vs {slow}");
            }
        }
    }

    #[test]
    fn duplication_invariance_and_self_consistency() {
        let mut rng = derive_rng(18, "calib", &[]);
        let records: Vec<PredictionRecord> = (0..100)
            .map(|_| PredictionRecord {
                logit: rng.gen_range(-4.0..4.0),
                label: if rng.gen::<bool>() { Label::Real } else { Label::Fake },
            })
            .collect();
        let doubled: Vec<PredictionRecord> =
            records.iter().chain(records.iter()).copied().collect();
        let a = compute_ece(&records, 10).unwrap();
        let b = compute_ece(&doubled, 10).unwrap();
        assert!((a.ece - b.ece).abs() < 1e-12);
        for (ba, bb) in a.bins.iter().zip(&b.bins) {
            assert_eq!(ba.count * 2, bb.count);
            assert!((ba.mean_confidence - bb.mean_confidence).abs() < 1e-12);
        }
        assert!((ece_from_bins(&a) - a.ece).abs() < 1e-15);
        let total: usize = a.bins.iter().map(|b| b.count).sum();
        assert_eq!(total, a.total_samples);
    }

    #[test]
    fn records_csv_roundtrip_and_errors() {
        let records = hand_case_records();
        let csv = records_to_csv(&records);
        let back = parse_records_csv(&csv).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in records.iter().zip(&back) {
            assert!((a.logit - b.logit).abs() < 1e-9);
            assert_eq!(a.label, b.label);
        }
        let err = parse_records_csv("logit,label\n0.5,frob\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn export_writes_csv_rows() {
        let dir = tempfile::tempdir().unwrap();
        let report = compute_ece(&hand_case_records(), 2).unwrap();
        reliability_export(&report, dir.path(), "calib").unwrap();
        let csv = std::fs::read_to_string(dir.path().join("calib.csv")).unwrap();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].ends_with("0.150000"));
        assert!(rows[1].ends_with("0.075000"));
        assert!(std::fs::read_to_string(dir.path().join("calib.svg"))
            .unwrap()
            .contains("</svg>"));
    }
}
