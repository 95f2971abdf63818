//! Line-oriented text output for evaluation reports, quality traces and
//! training history.
//!
//! Fields are tab separated. An evaluation report looks like (tabs shown
//! as spaces)
//!
//! ```text
//! metric  plcc  0.9981  full
//! metric  srcc  0.9975  full
//! video   synth_0003  2.81  2.77
//! ```
//!
//! with one `video` line (id, prediction, MOS) per evaluated video.

use std::fmt::Write;

use priorformer_core::temporal::QualityTrace;
use priorformer_core::train::{EpochRecord, EvalReport};

pub fn format_report(report: &EvalReport) -> String {
    let mut out = String::new();
    for (name, value) in [("plcc", report.plcc), ("srcc", report.srcc)] {
        writeln!(out, "metric\t{name}\t{value}\t{}", report.tag).unwrap();
    }
    for p in &report.predictions {
        writeln!(out, "video\t{}\t{}\t{}", p.id, p.predicted, p.mos).unwrap();
    }
    out
}

/// One `q` line per frame (0-based index, score), then the video score.
pub fn format_trace(trace: &QualityTrace) -> String {
    let mut out = String::new();
    for (t, q) in trace.q.iter().enumerate() {
        writeln!(out, "q\t{t}\t{q}").unwrap();
    }
    writeln!(out, "Q\t{}", trace.score).unwrap();
    out
}

pub fn format_epoch(record: &EpochRecord) -> String {
    let mut line = format!("epoch\t{}\ttrain_l1\t{}", record.epoch + 1, record.train_loss);
    if let Some((plcc, srcc)) = record.validation {
        write!(line, "\tval_plcc\t{plcc}\tval_srcc\t{srcc}").unwrap();
    }
    line
}

#[cfg(test)]
mod tests {
    use super::*;
    use priorformer_core::train::Prediction;

    #[test]
    fn report_lines() {
        let report = EvalReport {
            tag: "w.o. CT+DT".into(),
            plcc: 0.5,
            srcc: 0.25,
            predictions: vec![Prediction {
                id: "a".into(),
                predicted: 3.5,
                mos: 4.0,
            }],
        };
        assert_eq!(
            format_report(&report),
            "metric\tplcc\t0.5\tw.o. CT+DT\nmetric\tsrcc\t0.25\tw.o. CT+DT\nvideo\ta\t3.5\t4\n"
        );
    }

    #[test]
    fn trace_lines() {
        let trace = QualityTrace {
            q: vec![1.0, 2.5],
            m: vec![1.0, 1.0],
            c: vec![1.5, 2.5],
            score: 1.5,
        };
        assert_eq!(format_trace(&trace), "q\t0\t1\nq\t1\t2.5\nQ\t1.5\n");
    }
}
