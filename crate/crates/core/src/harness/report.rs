//! Plain-text summary of result tables with the table-pattern checks.

use std::fmt::Write as _;
use std::fs::File;
use std::path::PathBuf;

use super::experiment::{ExperimentResult, PointSummary, ResultRow};
use crate::error::Result;

/// Outcome of one pattern check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

fn non_increasing<T: PartialOrd>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

fn non_decreasing<T: PartialOrd>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0])
}

fn first_switch(row: &ResultRow, steps: usize) -> usize {
    row.switch_step_list().first().copied().unwrap_or(steps + 1)
}

fn fmt_list<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

/// Checks that apply to every table, plus the pattern of its sweep kind.
pub fn pattern_checks(result: &ExperimentResult) -> Vec<Check> {
    let rows: Vec<&ResultRow> = result.rows.iter().filter(|r| !r.failed()).collect();
    let mut checks = Vec::new();
    let identity = rows.iter().filter(|r| r.tc_identity_holds()).count();
    checks.push(Check::new(
        "TC = W_s*PL + W_d*switches",
        identity == rows.len(),
        format!("{identity}/{} rows", rows.len()),
    ));
    let failed = result.rows.len() - rows.len();
    if failed > 0 {
        checks.push(Check::new("all runs complete", false, format!("{failed} failed rows")));
    }
    let summary = result.summarize();
    let Some(kind) = summary.first().map(|p| p.sweep.clone()) else {
        return checks;
    };
    // Per-point first-seed rows stand in for deterministic tables.
    let lead: Vec<&ResultRow> = summary
        .iter()
        .filter_map(|p| rows.iter().find(|r| r.scenario_id == p.scenario_id).copied())
        .collect();
    let horizon_steps = 50;
    match kind.as_str() {
        "horizon" => {
            let firsts: Vec<usize> = lead.iter().map(|r| first_switch(r, horizon_steps)).collect();
            checks.push(Check::new(
                "first switch non-increasing in N",
                non_increasing(&firsts),
                fmt_list(&firsts),
            ));
            let n5 = lead.iter().find(|r| r.point == "N=5");
            let n10 = lead.iter().find(|r| r.point == "N=10");
            if let (Some(a), Some(b)) = (n5, n10) {
                checks.push(Check::new(
                    "N = 5 and N = 10 switch identically",
                    a.switch_steps == b.switch_steps,
                    format!("{} vs {}", a.switch_steps, b.switch_steps),
                ));
            }
        }
        "weights" => {
            let sw: Vec<f64> = summary.iter().map(|p| p.mean_switches).collect();
            let pl: Vec<f64> = summary.iter().map(|p| p.mean_pl).collect();
            checks.push(Check::new("switches non-increasing down the table", non_increasing(&sw), fmt_list(&sw)));
            checks.push(Check::new("PL non-decreasing down the table", non_decreasing(&pl), fmt_list(&pl)));
        }
        "process-noise" => {
            let pl: Vec<f64> = summary.iter().map(|p| p.mean_pl).collect();
            checks.push(Check::new("mean PL non-decreasing in noise std", non_decreasing(&pl), fmt_list(&pl)));
        }
        "measurement-noise" => {
            let steps: Vec<&str> = summary.iter().map(|p| p.switch_steps.as_str()).collect();
            let same = steps.iter().all(|s| s.split(" | ").all(|x| Some(x) == steps[0].split(" | ").next()));
            checks.push(Check::new("switch steps unchanged by measurement noise", same, steps.join(" / ")));
        }
        "controller" => checks.extend(method_checks(&summary)),
        _ => {}
    }
    checks
}

fn method_checks(summary: &[PointSummary]) -> Vec<Check> {
    let by = |kind: &str| summary.iter().find(|p| p.controller == kind);
    let order = ["empc-sigmoid", "empc-relu", "rl-policy", "traditional"];
    let present: Vec<&PointSummary> = order.iter().filter_map(|k| by(k)).collect();
    let mut checks = Vec::new();
    let pl: Vec<f64> = present.iter().map(|p| p.mean_pl).collect();
    let names: Vec<&str> = present.iter().map(|p| p.controller.as_str()).collect();
    checks.push(Check::new(
        format!("PL ordering {}", names.join(" <= ")),
        non_decreasing(&pl),
        fmt_list(&pl),
    ));
    if let Some(trad) = by("traditional") {
        let worst = summary
            .iter()
            .filter(|p| p.controller != "traditional")
            .all(|p| p.mean_tc < trad.mean_tc);
        checks.push(Check::new("traditional TC strictly worst", worst, format!("{}", trad.mean_tc)));
    }
    let timed: Vec<&PointSummary> = ["empc-sigmoid", "empc-relu", "rl-policy"].iter().filter_map(|k| by(k)).collect();
    if timed.len() >= 2 {
        let t: Vec<f64> = timed.iter().map(|p| p.mean_solve_seconds).collect();
        let names: Vec<&str> = timed.iter().map(|p| p.controller.as_str()).collect();
        checks.push(Check::new(
            format!("solve time {}", names.join(" > ")),
            t.windows(2).all(|w| w[0] > w[1]),
            t.iter().map(|s| format!("{s:.3e} s")).collect::<Vec<_>>().join(", "),
        ));
    }
    checks
}

fn table(out: &mut String, summary: &[PointSummary]) {
    let _ = writeln!(out, "| scenario | controller | runs | PL | TC | switches | solve s | switch steps |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|---|");
    for p in summary {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {:.5} | {:.5} | {:.2} | {:.3e} | {} |",
            p.scenario_id, p.controller, p.runs, p.mean_pl, p.mean_tc, p.mean_switches, p.mean_solve_seconds, p.switch_steps
        );
    }
}

/// Summarize result tables. A missing or unreadable table gets a marker
/// section instead of an error.
pub fn compare_report(tables: &[PathBuf]) -> Result<String> {
    let mut out = String::from("# Experiment report\n");
    if tables.is_empty() {
        out.push_str("\n(no result tables)\n");
    }
    for path in tables {
        let _ = writeln!(out, "\n## {}\n", path.display());
        let result = match File::open(path).map_err(crate::Error::from).and_then(ExperimentResult::read_csv) {
            Ok(r) if !r.rows.is_empty() => r,
            Ok(_) => {
                out.push_str("(empty: no rows)\n");
                continue;
            }
            Err(e) => {
                let _ = writeln!(out, "(missing: {e})");
                continue;
            }
        };
        table(&mut out, &result.summarize());
        out.push('\n');
        for c in pattern_checks(&result) {
            let _ = writeln!(out, "- [{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
        }
    }
    Ok(out)
}
