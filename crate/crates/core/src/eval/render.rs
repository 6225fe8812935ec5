//! Plain-text summary of an experiment report.

use std::fmt::Write;

use super::experiment::EvalReport;
use crate::config::Mode;

fn opt(v: Option<usize>) -> String {
    v.map_or_else(|| "-".to_string(), |e| e.to_string())
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    let d = &report.dataset;
    let _ = writeln!(
        out,
        "dataset: {} samples, {} classes, {} domains ({:?}); seeds {:?}",
        d.samples, d.num_classes, d.num_domains, d.provenance, report.seeds
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<10} {:>16} {:>16} {:>10}", "mode", "Acc % (±std)", "F1 % (±std)", "OvR Acc %");
    for m in &report.modes {
        let _ = writeln!(
            out,
            "{:<10} {:>16} {:>16} {:>10}",
            m.mode.name(),
            format!("{} ± {}", pct(m.acc_avg), pct(m.acc_std)),
            format!("{} ± {}", pct(m.f1_avg), pct(m.f1_std)),
            pct(m.literal_acc_avg)
        );
    }

    let uni = report.mode(Mode::Unialign);
    let std = report.mode(Mode::Standard);
    if let (Some(u), Some(s)) = (uni, std) {
        let _ = writeln!(out);
        let wins = u
            .runs
            .iter()
            .zip(&s.runs)
            .filter(|(a, b)| a.acc_avg > b.acc_avg)
            .count();
        let _ = writeln!(
            out,
            "unialign - standard: Acc {:+.2} points, F1 {:+.2} points; unialign ahead on {}/{} seeds",
            100.0 * (u.acc_avg - s.acc_avg),
            100.0 * (u.f1_avg - s.f1_avg),
            wins,
            u.runs.len().min(s.runs.len())
        );
        let _ = writeln!(out, "JSD ratio standard/unialign by held-out domain:");
        for (fold, (a, b)) in s.jsd_by_fold.iter().zip(&u.jsd_by_fold).enumerate() {
            let ratio = match (a, b) {
                (Some(a), Some(b)) if *b > 0.0 => format!("{:.3}", a / b),
                _ => "n/a".to_string(),
            };
            let show = |v: &Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
            let _ = writeln!(
                out,
                "  domain {fold}: standard {} / unialign {} = {ratio}",
                show(a),
                show(b)
            );
        }
    }

    let _ = writeln!(out);
    let _ = writeln!(out, "valley markers (t_s / t_e / stop / epochs run):");
    for m in &report.modes {
        for run in &m.runs {
            let cells: Vec<String> = run
                .folds
                .iter()
                .map(|f| {
                    format!(
                        "d{} {}/{}/{}/{}{}",
                        f.test_domain,
                        opt(f.converge_epoch),
                        opt(f.overfit_epoch),
                        opt(f.stop_epoch),
                        f.epochs_run,
                        if f.fallback { " (fallback)" } else { "" }
                    )
                })
                .collect();
            let _ = writeln!(out, "  {:<9} seed {:<4} {}", m.mode.name(), run.seed, cells.join("  "));
        }
    }
    out
}
