//! Plain-text summary of a results CSV.

use std::fmt::Write;

use bpe_core::harness::{mean_accuracy_matrix, ResultRecord};
use bpe_core::stats::{friedman_ranks, wilcoxon_signed_rank, win_tie_loss, DEFAULT_TIE_EPSILON, SIGN_TEST_ALPHAS};
use bpe_core::{Error, Result};

pub fn render(records: &[ResultRecord], reference: &str) -> Result<String> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("results file has no records".into()));
    }
    let m = mean_accuracy_matrix(records)?;
    let mut s = String::new();
    let name_w = m.datasets.iter().map(String::len).max().unwrap_or(0).max(7);
    let col_w = |name: &str| name.len().max(8);

    writeln!(s, "Mean accuracy").unwrap();
    write!(s, "{:<name_w$}", "dataset").unwrap();
    for meth in &m.methods {
        write!(s, "  {:>w$}", meth, w = col_w(meth)).unwrap();
    }
    writeln!(s).unwrap();
    for (d, row) in m.datasets.iter().zip(&m.values) {
        write!(s, "{d:<name_w$}").unwrap();
        for (meth, v) in m.methods.iter().zip(row) {
            write!(s, "  {:>w$.4}", v, w = col_w(meth)).unwrap();
        }
        writeln!(s).unwrap();
    }

    if m.methods.len() >= 2 {
        let ranks = friedman_ranks(&m)?;
        let mut order: Vec<usize> = (0..ranks.len()).collect();
        order.sort_by(|&a, &b| ranks[a].total_cmp(&ranks[b]).then(a.cmp(&b)));
        writeln!(s, "\nFriedman mean ranks (1 = best)").unwrap();
        for k in order {
            writeln!(s, "{:<24} {:.3}", m.methods[k], ranks[k]).unwrap();
        }
    }

    let Some(r) = m.method_index(reference) else {
        writeln!(s, "\n`{reference}` not in results; pairwise tests skipped").unwrap();
        return Ok(s);
    };
    let base = m.column(r);
    writeln!(
        s,
        "\nWilcoxon signed-rank, {reference} vs each method over {} datasets",
        m.datasets.len()
    )
    .unwrap();
    writeln!(
        s,
        "{:<40} {:>8} {:>8}  {:<12} {:>10}",
        "comparison", "R+", "R-", "hypothesis", "p-value"
    )
    .unwrap();
    for (k, other) in m.methods.iter().enumerate().filter(|&(k, _)| k != r) {
        let label = format!("{reference} vs {other}");
        match wilcoxon_signed_rank(&base, &m.column(k)) {
            Ok(w) => {
                let verdict = if w.rejected_at_005 { "rejected" } else { "not rejected" };
                writeln!(
                    s,
                    "{label:<40} {:>8.1} {:>8.1}  {verdict:<12} {:>10.4}",
                    w.r_plus, w.r_minus, w.p_value
                )
                .unwrap();
            }
            Err(_) => writeln!(s, "{label:<40} {:>8} {:>8}  {:<12} {:>10}", "-", "-", "all ties", "-").unwrap(),
        }
    }

    writeln!(
        s,
        "\nWin-tie-loss of {reference} (significance at alpha = {:?})",
        SIGN_TEST_ALPHAS
    )
    .unwrap();
    writeln!(
        s,
        "{:<24} {:>5} {:>5} {:>5}  significant",
        "method", "win", "tie", "loss"
    )
    .unwrap();
    for (k, other) in m.methods.iter().enumerate().filter(|&(k, _)| k != r) {
        let wtl = win_tie_loss(&base, &m.column(k), DEFAULT_TIE_EPSILON)?;
        let marks: Vec<String> = SIGN_TEST_ALPHAS
            .iter()
            .zip(wtl.significant)
            .filter(|(_, sig)| *sig)
            .map(|(a, _)| format!("{a}"))
            .collect();
        let marks = if marks.is_empty() {
            "-".to_owned()
        } else {
            marks.join(" ")
        };
        writeln!(
            s,
            "{other:<24} {:>5} {:>5} {:>5}  {marks}",
            wtl.wins, wtl.ties, wtl.losses
        )
        .unwrap();
    }
    Ok(s)
}
