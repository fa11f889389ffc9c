//! Text reports: delimited curves and summary tables.

use std::fmt::Write;

use vitac_core::eval::{summarize, EpisodeRow, EvalReport, Summary};
use vitac_core::vtcon::EpisodeLog;
use vitac_core::vtgen::{GenEpoch, Quality};

use crate::pipeline::AblationRow;

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_else(|| "nan".into())
}

/// `step reward length critic_loss actor_loss con_loss alpha`, one line
/// per training episode.
pub fn curve_tsv(logs: &[EpisodeLog]) -> String {
    let mut s = String::from("step\treward\tlength\tcritic_loss\tactor_loss\tcon_loss\talpha\n");
    for l in logs {
        let u = l.update;
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            l.step,
            l.reward,
            l.length,
            opt(u.map(|u| u.critic_loss)),
            opt(u.map(|u| u.actor_loss)),
            opt(u.and_then(|u| u.con_loss)),
            opt(u.map(|u| u.alpha)),
        );
    }
    s
}

/// `epoch train_loss psnr ssim no_contact_mean` on the validation split.
pub fn gen_tsv(epochs: &[GenEpoch]) -> String {
    let mut s = String::from("epoch\ttrain_loss\tval_psnr\tval_ssim\tval_no_contact_mean\n");
    for e in epochs {
        let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", e.epoch, e.train_loss, e.val.psnr, e.val.ssim, opt(e.val.no_contact_mean));
    }
    s
}

pub fn quality_line(name: &str, q: &Quality) -> String {
    format!(
        "{name}: {} samples, PSNR {:.2} dB, SSIM {:.4}, no-contact mean {}",
        q.samples,
        q.psnr,
        q.ssim,
        q.no_contact_mean.map(|m| format!("{m:.4} over {} samples", q.no_contact_samples)).unwrap_or_else(|| "n/a".into())
    )
}

/// One table row in the layout of the paper's result tables.
pub fn table_row(label: &str, s: Option<&Summary>) -> String {
    match s {
        Some(s) => format!(
            "| {label} | {:.2}±{:.2} | {:.2}±{:.2} | {:.2} | {:.1} |",
            s.reward.mean,
            s.reward.std,
            s.length.mean,
            s.length.std,
            s.distance.mean * 1000.0,
            s.success_rate * 100.0
        ),
        None => format!("| {label} | - | - | - | - |"),
    }
}

pub fn table(title: &str, threshold: f64, rows: &[(String, Option<Summary>)]) -> String {
    let mut s = format!("{title} (success threshold {:.1} cm)\n\n", threshold * 100.0);
    s.push_str("| Method | Rewards (mean±std) | Epi. Len. | Dist. Err. (mm) | Succ. Rate (%) |\n");
    s.push_str("|---|---|---|---|---|\n");
    for (label, summary) in rows {
        s.push_str(&table_row(label, summary.as_ref()));
        s.push('\n');
    }
    s
}

pub fn eval_table(label: &str, report: &EvalReport) -> String {
    table("Evaluation", report.threshold, &[(label.to_string(), report.summary)])
}

pub fn eval_tsv(report: &EvalReport) -> String {
    let mut s = String::from("seed\treward\tlength\tfinal_distance\tsuccess\n");
    for r in &report.rows {
        let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", r.seed, r.reward, r.length, r.final_distance, r.success as u8);
    }
    s
}

/// Per-variant rows pooled over seeds, in first-seen variant order, plus
/// one line per variant and seed.
pub fn ablation_table(title: &str, threshold: f64, rows: &[AblationRow]) -> String {
    let mut variants: Vec<&str> = Vec::new();
    for r in rows {
        if !variants.contains(&r.variant.as_str()) {
            variants.push(&r.variant);
        }
    }
    let pooled: Vec<(String, Option<Summary>)> = variants
        .iter()
        .map(|v| {
            let eps: Vec<EpisodeRow> = rows.iter().filter(|r| r.variant == *v).flat_map(|r| r.report.rows.clone()).collect();
            (v.to_string(), summarize(&eps))
        })
        .collect();
    let mut s = table(title, threshold, &pooled);
    s.push_str("\nPer seed:\n\n| Method | Seed | Succ. Rate (%) | Dist. Err. (mm) |\n|---|---|---|---|\n");
    for r in rows {
        match r.report.summary {
            Some(x) => {
                let _ = writeln!(s, "| {} | {} | {:.1} | {:.2} |", r.variant, r.seed, x.success_rate * 100.0, x.distance.mean * 1000.0);
            }
            None => {
                let _ = writeln!(s, "| {} | {} | - | - |", r.variant, r.seed);
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use vitac_core::eval::MeanStd;

    #[test]
    fn row_layout() {
        let s = Summary {
            reward: MeanStd { mean: -66.92, std: 55.28 },
            length: MeanStd { mean: 247.82, std: 27.81 },
            distance: MeanStd { mean: 0.03589, std: 0.0 },
            success_rate: 0.95,
        };
        assert_eq!(table_row("Attention", Some(&s)), "| Attention | -66.92±55.28 | 247.82±27.81 | 35.89 | 95.0 |");
        assert_eq!(table_row("Addition", None), "| Addition | - | - | - | - |");
    }

    #[test]
    fn ablation_rows_pool_per_variant() {
        let row = |d: f64, ok: bool| EpisodeRow { seed: 0, reward: -1.0, length: 5, final_distance: d, success: ok };
        let mk = |v: &str, seed, rows| AblationRow { variant: v.into(), seed, report: EvalReport::from_rows(rows, 0.04, 0) };
        let rows = vec![mk("Addition", 1, vec![row(0.01, true)]), mk("Addition", 2, vec![row(0.05, false)]), mk("Attention", 1, vec![])];
        let t = ablation_table("Fusion", 0.04, &rows);
        assert!(t.contains("| Addition | -1.00±0.00 | 5.00±0.00 | 30.00 | 50.0 |"), "{t}");
        assert!(t.contains("| Attention | - | - | - | - |"));
        assert!(t.contains("4.0 cm"));
    }
}
