//! The full analyze, prune, fuzz, replay and compare flow.
//!
//! Output layout under the output directory:
//!
//! ```text
//! config.json
//! analysis/{marked.tir, pruned.tir, finder.json, prune_stats.json}
//! <mode>/trial-<k>/{campaign.json, replay.json, corpus/}
//! comparison.json, comparison.txt
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use pathprune_core::callgraph::{IndirectPolicy, InverseCallGraph};
use pathprune_core::finder::{find_relevant_blocks, MarkedProgram};
use pathprune_core::ir::{print_program, Program};
use pathprune_core::pruner::{prune, PrunedProgram};
use pathprune_fuzz::campaign::{run_campaign, CampaignConfig, CampaignStats, Mode, Programs};
use pathprune_fuzz::metrics::{
    compare_row, metric_value, replay, sign_test, Comparison, CorpusFile, ReplayOptions,
    ReplayReport, SignTest, METRICS,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{PipelineConfig, ProgramSource};
use crate::corpus_dir::write_corpus;
use crate::load::{fingerprint, load_program_file, load_scenario, parse_input, targets, to_json, write};
use crate::{CliError, Result};

/// Program, marking and pruning shared by every trial.
pub struct Analysis {
    pub original: Program,
    pub marked: MarkedProgram,
    pub pruned: PrunedProgram,
    pub icg: InverseCallGraph,
    pub fingerprint: String,
}

impl Analysis {
    pub fn new(original: Program, target_ids: &[String], signature_matching: bool) -> Result<Self> {
        let spec = targets(&original, target_ids)?;
        let policy = if signature_matching {
            IndirectPolicy::SignatureMatch
        } else {
            IndirectPolicy::Ignore
        };
        let icg = InverseCallGraph::build_with(&original, policy);
        let marked = find_relevant_blocks(&original, &icg, &spec)?;
        let pruned = prune(&marked)?;
        let fingerprint = fingerprint(&original);
        Ok(Analysis {
            original,
            marked,
            pruned,
            icg,
            fingerprint,
        })
    }

    pub fn programs(&self) -> Programs<'_> {
        Programs {
            original: &self.original,
            marked: &self.marked,
            pruned: Some(&self.pruned),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub mode: Mode,
    pub index: usize,
    pub stats: CampaignStats,
    pub replay: ReplayReport,
}

/// Per-metric summary across trials: arithmetic means per mode, the
/// comparison of the first mode against each other mode, and a sign test over
/// paired trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub config_hash: String,
    pub program_fingerprint: String,
    pub trials: usize,
    pub means: BTreeMap<Mode, BTreeMap<String, Option<f64>>>,
    pub comparisons: Vec<ModeComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeComparison {
    pub a: Mode,
    pub b: Mode,
    pub rows: Comparison,
    /// Paired over trials with equal index, in metric order.
    pub sign_tests: Vec<MetricSignTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSignTest {
    pub metric: String,
    #[serde(flatten)]
    pub test: SignTest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub trials: Vec<Trial>,
    pub summary: Summary,
}

impl Outcome {
    pub fn trials_of(&self, mode: Mode) -> impl Iterator<Item = &Trial> + '_ {
        self.trials.iter().filter(move |t| t.mode == mode)
    }
}

/// The parts of the config that determine results, hashed into reports.
#[derive(Serialize)]
struct ConfigRecord<'a> {
    program: &'a ProgramSource,
    program_fingerprint: &'a str,
    targets: Vec<&'a str>,
    modes: &'a [Mode],
    budget_steps: u64,
    per_run_budget: u64,
    rng_seeds: &'a [u64],
    seed_inputs: &'a [String],
    distance_energy: bool,
    signature_matching: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_clock_secs: Option<f64>,
}

pub fn load_source(src: &ProgramSource) -> Result<Program> {
    match src {
        ProgramSource::Path(p) => load_program_file(p),
        ProgramSource::Scenario(s) => load_scenario(s),
    }
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Outcome> {
    cfg.check()?;
    let analysis = Analysis::new(load_source(&cfg.program)?, &cfg.targets, cfg.signature_matching)?;
    let seeds = cfg
        .seed_inputs
        .iter()
        .map(|s| parse_input(s))
        .collect::<Result<Vec<_>>>()?;

    let record = ConfigRecord {
        program: &cfg.program,
        program_fingerprint: &analysis.fingerprint,
        targets: analysis.marked.targets.iter().collect(),
        modes: &cfg.modes,
        budget_steps: cfg.budget_steps,
        per_run_budget: cfg.per_run_budget,
        rng_seeds: &cfg.rng_seeds,
        seed_inputs: &cfg.seed_inputs,
        distance_energy: cfg.distance_energy,
        signature_matching: cfg.signature_matching,
        wall_clock_secs: cfg.wall_clock_secs,
    };
    let record_json = to_json(&record);
    let config_hash = crate::load::sha256_hex(record_json.as_bytes());
    let out = &cfg.out;
    write(&out.join("config.json"), &record_json)?;
    let dir = out.join("analysis");
    write(&dir.join("marked.tir"), print_program(&analysis.marked.program))?;
    write(&dir.join("pruned.tir"), print_program(&analysis.pruned.program))?;
    write(&dir.join("finder.json"), to_json(&analysis.marked.report(&analysis.icg)))?;
    write(&dir.join("prune_stats.json"), to_json(&analysis.pruned.report()))?;

    let tasks: Vec<(Mode, usize)> = cfg
        .modes
        .iter()
        .flat_map(|&m| (0..cfg.rng_seeds.len()).map(move |k| (m, k)))
        .collect();
    let run_one = |&(mode, k): &(Mode, usize)| -> Result<Trial> {
        let mut cc = CampaignConfig::new(mode, cfg.budget_steps, cfg.rng_seeds[k]);
        cc.per_run_budget = cfg.per_run_budget;
        if !seeds.is_empty() {
            cc.seeds = seeds.clone();
        }
        cc.distance_energy = cfg.distance_energy;
        cc.time_limit = cfg.wall_clock_secs.map(Duration::from_secs_f64);
        let trial_dir = trial_dir(out, mode, k);
        let trial = run_trial(&analysis, &cc, Some(&trial_dir), k)?;
        log::info!(
            "{mode} trial {k} (rng seed {}): {} executions, {} target-reaching inputs, {} unique bugs",
            cc.rng_seed,
            trial.stats.executions,
            trial.stats.target_reaching_inputs,
            trial.replay.unique_bugs
        );
        Ok(trial)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} jobs: {e}", cfg.jobs)))?;
    let trials = pool.install(|| tasks.par_iter().map(run_one).collect::<Result<Vec<_>>>())?;

    let summary = summarize(&cfg.modes, &trials, config_hash, analysis.fingerprint.clone());
    write(&out.join("comparison.json"), to_json(&summary))?;
    write(&out.join("comparison.txt"), render_summary(&summary))?;
    Ok(Outcome { trials, summary })
}

pub fn trial_dir(out: &std::path::Path, mode: Mode, k: usize) -> PathBuf {
    out.join(mode.name()).join(format!("trial-{k}"))
}

/// Runs one campaign and replays its corpus. Artifacts go to `dir` when given.
pub fn run_trial(
    analysis: &Analysis,
    cc: &CampaignConfig,
    dir: Option<&std::path::Path>,
    index: usize,
) -> Result<Trial> {
    let result = run_campaign(&analysis.programs(), cc)?;
    let files: Vec<CorpusFile> = result
        .corpus
        .iter()
        .enumerate()
        .map(|(i, e)| CorpusFile {
            name: pathprune_fuzz::metrics::corpus_file_name(i),
            input: e.input.clone(),
            found_at: Some(e.found_at),
        })
        .collect();
    let report = replay(
        &files,
        &analysis.marked,
        ReplayOptions {
            budget: cc.per_run_budget,
            campaign: Some((result.stats.executions, result.stats.total_steps)),
        },
    )?;
    if let Some(dir) = dir {
        write(&dir.join("campaign.json"), to_json(&result.stats))?;
        write(&dir.join("replay.json"), to_json(&report))?;
        let targets = analysis.marked.targets.iter().map(str::to_string).collect();
        write_corpus(&dir.join("corpus"), &result, &analysis.fingerprint, targets)?;
    }
    Ok(Trial {
        mode: cc.mode,
        index,
        stats: result.stats,
        replay: report,
    })
}

/// Replay metrics followed by live campaign counters, which cover every
/// execution rather than only the saved corpus.
pub const SUMMARY_METRICS: [(&str, bool); 10] = [
    METRICS[0],
    METRICS[1],
    METRICS[2],
    METRICS[3],
    METRICS[4],
    METRICS[5],
    METRICS[6],
    ("executions", true),
    ("live_target_reaches", true),
    ("live_target_reaching_inputs", true),
];

pub fn trial_value(t: &Trial, metric: &str) -> Option<f64> {
    match metric {
        "executions" => Some(t.stats.executions as f64),
        "live_target_reaches" => Some(t.stats.target_reaches as f64),
        "live_target_reaching_inputs" => Some(t.stats.target_reaching_inputs as f64),
        _ => metric_value(&t.replay, metric),
    }
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn summarize(modes: &[Mode], trials: &[Trial], config_hash: String, program_fingerprint: String) -> Summary {
    let of = |m: Mode| -> Vec<&Trial> {
        let mut v: Vec<&Trial> = trials.iter().filter(|t| t.mode == m).collect();
        v.sort_by_key(|t| t.index);
        v
    };
    let mut means = BTreeMap::new();
    for &m in modes {
        let ts = of(m);
        let row: BTreeMap<String, Option<f64>> = SUMMARY_METRICS
            .iter()
            .map(|&(name, _)| (name.to_string(), mean(ts.iter().map(|t| trial_value(t, name)))))
            .collect();
        means.insert(m, row);
    }
    let mut comparisons = Vec::new();
    if let Some((&a, rest)) = modes.split_first() {
        for &b in rest {
            let (ta, tb) = (of(a), of(b));
            let rows = SUMMARY_METRICS
                .iter()
                .map(|&(name, hib)| compare_row(name, hib, means[&a][name], means[&b][name]))
                .collect();
            let sign_tests = SUMMARY_METRICS
                .iter()
                .map(|&(name, hib)| {
                    let pairs: Vec<(f64, f64)> = ta
                        .iter()
                        .zip(&tb)
                        .filter_map(|(x, y)| Some((trial_value(x, name)?, trial_value(y, name)?)))
                        .collect();
                    MetricSignTest {
                        metric: name.to_string(),
                        test: sign_test(&pairs, hib),
                    }
                })
                .collect();
            comparisons.push(ModeComparison {
                a,
                b,
                rows: Comparison { rows },
                sign_tests,
            });
        }
    }
    Summary {
        config_hash,
        program_fingerprint,
        trials: trials.len(),
        means,
        comparisons,
    }
}

pub fn render_summary(s: &Summary) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(out, "config {}", s.config_hash);
    for c in &s.comparisons {
        let _ = writeln!(out, "\n{} (a) vs {} (b), means over trials", c.a, c.b);
        out.push_str(&c.rows.to_table());
        let _ = writeln!(out, "sign test (a wins / b wins / ties, two-sided p):");
        for MetricSignTest { metric, test: t } in &c.sign_tests {
            let _ = writeln!(
                out,
                "  {metric:<28} {:>3} / {:>3} / {:>3}  p={:.4}",
                t.wins, t.losses, t.ties, t.p_value
            );
        }
    }
    out
}
