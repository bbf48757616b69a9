//! Replay-based evaluation metrics and report comparison.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write;

use pathprune_core::finder::MarkedProgram;
use pathprune_core::interp::{Interpreter, RunOptions, Termination};
use pathprune_core::ir::BlockId;
use serde::{Deserialize, Serialize};

use crate::campaign::FrameRef;
use crate::Result;

/// One saved corpus input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusFile {
    pub name: String,
    pub input: Vec<u8>,
    /// Campaign step count at discovery, when known.
    pub found_at: Option<u64>,
}

pub fn corpus_file_name(index: usize) -> String {
    format!("{index:06}")
}

pub fn ratio(n: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        n as f64 / total as f64
    }
}

/// Executions per million steps.
pub fn throughput(executions: u64, steps: u64) -> f64 {
    if steps == 0 {
        0.0
    } else {
        executions as f64 * 1e6 / steps as f64
    }
}

/// Relevant blocks covered when replaying `files` on the marked program.
pub fn relevant_coverage(
    files: &[CorpusFile],
    marked: &MarkedProgram,
    budget: u64,
) -> Result<BTreeSet<BlockId>> {
    let interp = Interpreter::new(&marked.program)?;
    let opts = RunOptions::with_budget(budget);
    let mut out = BTreeSet::new();
    for f in files {
        let t = interp.run(&f.input, &opts);
        out.extend(t.blocks_covered.intersection(&marked.relevant_blocks).copied());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugRecord {
    pub bug: String,
    pub primary_location: FrameRef,
    pub full_trace: Vec<FrameRef>,
    pub first_hit_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub inputs: usize,
    pub unique_bugs: usize,
    pub unique_traces: usize,
    pub time_to_first_bug: Option<u64>,
    pub target_relevant_coverage: f64,
    pub relevant_blocks_covered: usize,
    pub relevant_blocks_total: usize,
    pub target_reaches: u64,
    pub target_reaching_inputs: u64,
    pub throughput: f64,
    pub executions: u64,
    pub total_steps: u64,
    /// One record per distinct full trace, in corpus order.
    pub bugs: Vec<BugRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReplayOptions {
    pub budget: u64,
    /// Executions and steps of the campaign that produced the corpus. When
    /// present, throughput is taken from them instead of from the replay.
    pub campaign: Option<(u64, u64)>,
}

/// Replays `files` in order on the marked program.
///
/// Bugs are deduplicated by primary location for `unique_bugs` and by full
/// stack for `unique_traces`. A bug's time is the file's discovery time
/// when known and the cumulative replay step count otherwise.
pub fn replay(files: &[CorpusFile], marked: &MarkedProgram, opts: ReplayOptions) -> Result<ReplayReport> {
    let interp = Interpreter::new(&marked.program)?;
    let run = RunOptions::with_budget(opts.budget);
    let mut covered = BTreeSet::new();
    let mut primary: HashSet<FrameRef> = HashSet::new();
    let mut traces: HashSet<Vec<FrameRef>> = HashSet::new();
    let mut bugs = Vec::new();
    let (mut steps, mut reaches, mut reaching) = (0u64, 0u64, 0u64);
    for f in files {
        let t = interp.run(&f.input, &run);
        steps += t.steps;
        reaches += t.targets_hit.len() as u64;
        if !t.targets_hit.is_empty() {
            reaching += 1;
        }
        covered.extend(t.blocks_covered.intersection(&marked.relevant_blocks).copied());
        if let Termination::BugTriggered { bug, stack } = &t.termination {
            let full: Vec<FrameRef> = stack.iter().map(FrameRef::from).collect();
            primary.insert(full[0].clone());
            if traces.insert(full.clone()) {
                bugs.push(BugRecord {
                    bug: bug.clone(),
                    primary_location: full[0].clone(),
                    full_trace: full,
                    first_hit_steps: f.found_at.unwrap_or(steps),
                });
            }
        }
    }
    let (executions, total_steps) = opts.campaign.unwrap_or((files.len() as u64, steps));
    Ok(ReplayReport {
        inputs: files.len(),
        unique_bugs: primary.len(),
        unique_traces: traces.len(),
        time_to_first_bug: bugs.iter().map(|b| b.first_hit_steps).min(),
        target_relevant_coverage: ratio(covered.len(), marked.relevant_blocks.len()),
        relevant_blocks_covered: covered.len(),
        relevant_blocks_total: marked.relevant_blocks.len(),
        target_reaches: reaches,
        target_reaching_inputs: reaching,
        throughput: throughput(executions, total_steps),
        executions,
        total_steps,
        bugs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Better {
    A,
    B,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub delta: Option<f64>,
    /// Change of `a` relative to `b`, in percent.
    pub percent: Option<f64>,
    pub better: Option<Better>,
    pub higher_is_better: bool,
    /// Set when either side has no value.
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

pub const METRICS: [(&str, bool); 7] = [
    ("unique_bugs", true),
    ("unique_traces", true),
    ("time_to_first_bug", false),
    ("target_relevant_coverage", true),
    ("target_reaches", true),
    ("target_reaching_inputs", true),
    ("throughput", true),
];

pub fn metric_value(r: &ReplayReport, metric: &str) -> Option<f64> {
    match metric {
        "unique_bugs" => Some(r.unique_bugs as f64),
        "unique_traces" => Some(r.unique_traces as f64),
        "time_to_first_bug" => r.time_to_first_bug.map(|t| t as f64),
        "target_relevant_coverage" => Some(r.target_relevant_coverage),
        "target_reaches" => Some(r.target_reaches as f64),
        "target_reaching_inputs" => Some(r.target_reaching_inputs as f64),
        "throughput" => Some(r.throughput),
        _ => None,
    }
}

pub fn compare_row(metric: &str, higher_is_better: bool, a: Option<f64>, b: Option<f64>) -> ComparisonRow {
    let (delta, percent, better) = match (a, b) {
        (Some(a), Some(b)) => {
            let percent = if b != 0.0 {
                Some((a - b) / b.abs() * 100.0)
            } else if a == 0.0 {
                Some(0.0)
            } else {
                None
            };
            let better = if a == b {
                Better::Tie
            } else if (a > b) == higher_is_better {
                Better::A
            } else {
                Better::B
            };
            (Some(a - b), percent, Some(better))
        }
        _ => (None, None, None),
    };
    ComparisonRow {
        metric: metric.to_string(),
        a,
        b,
        delta,
        percent,
        better,
        higher_is_better,
        excluded: a.is_none() || b.is_none(),
    }
}

/// Metric-by-metric comparison of `a` against `b`.
pub fn compare_reports(a: &ReplayReport, b: &ReplayReport) -> Comparison {
    Comparison {
        rows: METRICS
            .iter()
            .map(|&(m, hib)| compare_row(m, hib, metric_value(a, m), metric_value(b, m)))
            .collect(),
    }
}

fn cell(v: Option<f64>) -> String {
    match v {
        None => "X".to_string(),
        Some(x) if x.fract() == 0.0 && x.abs() < 1e15 => format!("{x:.0}"),
        Some(x) => format!("{x:.4}"),
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "X".to_string(), |p| format!("{p:+.1}%"))
}

fn better(b: Option<Better>) -> &'static str {
    match b {
        Some(Better::A) => "a",
        Some(Better::B) => "b",
        Some(Better::Tie) => "tie",
        None => "-",
    }
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let header = ["metric", "a", "b", "delta", "change", "better", "note"];
        let rows: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.metric.clone(),
                    cell(r.a),
                    cell(r.b),
                    cell(r.delta),
                    pct(r.percent),
                    better(r.better).to_string(),
                    if r.excluded { "excluded".into() } else { String::new() },
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[&str]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &header);
        for r in &rows {
            line(&mut out, &r.iter().map(String::as_str).collect::<Vec<_>>());
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,a,b,delta,percent,better,excluded\n");
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.metric,
                opt(r.a),
                opt(r.b),
                opt(r.delta),
                opt(r.percent),
                better(r.better),
                r.excluded
            );
        }
        out
    }
}

/// Paired sign test over trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// Two-sided exact binomial p-value over non-tied pairs.
    pub p_value: f64,
}

pub fn sign_test(pairs: &[(f64, f64)], higher_is_better: bool) -> SignTest {
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for &(a, b) in pairs {
        if a == b {
            ties += 1;
        } else if (a > b) == higher_is_better {
            wins += 1;
        } else {
            losses += 1;
        }
    }
    let n = wins + losses;
    let k = wins.min(losses);
    // P(X <= k) for X ~ Binomial(n, 1/2), doubled and capped at 1.
    let mut tail = 0.0;
    let mut choose = 1.0f64;
    for i in 0..=k {
        if i > 0 {
            choose = choose * (n - i + 1) as f64 / i as f64;
        }
        tail += choose;
    }
    let p_value = if n == 0 {
        1.0
    } else {
        (2.0 * tail / 2f64.powi(n as i32)).min(1.0)
    };
    SignTest {
        wins,
        losses,
        ties,
        p_value,
    }
}
