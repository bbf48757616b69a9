//! The fuzzing loop.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use pathprune_core::callgraph::InverseCallGraph;
use pathprune_core::finder::MarkedProgram;
use pathprune_core::interp::{ExecutionTrace, Frame, Interpreter, RunOptions, Termination};
use pathprune_core::ir::{BlockId, Program};
use pathprune_core::pruner::PrunedProgram;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distance::{static_block_distances, BlockDistances};
use crate::metrics::{self, CorpusFile};
use crate::mutate::{mutate, MutationWeights};
use crate::{FuzzError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pruning,
    Minimization,
    Plain,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Pruning, Mode::Minimization, Mode::Plain];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Pruning => "pruning",
            Mode::Minimization => "minimization",
            Mode::Plain => "plain",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (expected pruning, minimization or plain)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub mode: Mode,
    pub seeds: Vec<Vec<u8>>,
    /// Total interpreter steps the campaign may spend.
    pub exec_budget: u64,
    /// Step limit of a single run.
    pub per_run_budget: u64,
    pub rng_seed: u64,
    pub weights: MutationWeights,
    /// In pruning mode, also weight seed selection by distance.
    pub distance_energy: bool,
    /// Optional wall-clock cap for demo runs. Results are then no longer
    /// reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_limit: Option<Duration>,
}

impl CampaignConfig {
    pub fn new(mode: Mode, exec_budget: u64, rng_seed: u64) -> Self {
        CampaignConfig {
            mode,
            seeds: vec![vec![0; 8]],
            exec_budget,
            per_run_budget: 20_000,
            rng_seed,
            weights: MutationWeights::default(),
            distance_energy: false,
            time_limit: None,
        }
    }

    fn check(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(FuzzError::NoSeeds);
        }
        if self.per_run_budget == 0 || self.exec_budget < self.per_run_budget {
            return Err(FuzzError::Budget {
                exec: self.exec_budget,
                per_run: self.per_run_budget,
            });
        }
        Ok(())
    }
}

/// The programs a campaign works on.
#[derive(Debug, Clone, Copy)]
pub struct Programs<'a> {
    pub original: &'a Program,
    pub marked: &'a MarkedProgram,
    /// Required in pruning mode.
    pub pruned: Option<&'a PrunedProgram>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameRef {
    pub function: String,
    pub instr: String,
}

impl From<&Frame> for FrameRef {
    fn from(f: &Frame) -> Self {
        FrameRef {
            function: f.function.clone(),
            instr: f.instr.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugHit {
    pub bug: String,
    pub primary_location: FrameRef,
    pub stack: Vec<FrameRef>,
    pub first_hit_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignStats {
    pub mode: Mode,
    pub rng_seed: u64,
    pub exec_budget: u64,
    pub per_run_budget: u64,
    pub executions: u64,
    pub total_steps: u64,
    pub target_reaches: u64,
    pub target_reaching_inputs: u64,
    pub pruned_exits: u64,
    pub relevant_blocks_covered: Vec<String>,
    pub relevant_blocks_total: usize,
    pub target_relevant_coverage: f64,
    /// One entry per distinct full stack, in discovery order.
    pub bugs: Vec<BugHit>,
    pub time_to_first_bug: Option<u64>,
    /// Executions per million steps.
    pub throughput: f64,
    pub queue_size: usize,
    pub corpus_size: usize,
    /// Elapsed seconds, only recorded under a wall-clock limit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryKind {
    Seed,
    Queue,
    PrunedExit,
    Crash,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub input: Vec<u8>,
    pub kind: EntryKind,
    /// Cumulative campaign steps when the input was found.
    pub found_at: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignResult {
    pub stats: CampaignStats,
    /// Saved inputs in discovery order.
    pub corpus: Vec<CorpusEntry>,
}

#[derive(Debug, Clone)]
struct Seed {
    input: Vec<u8>,
    /// `None` when no executed block has a finite distance.
    distance: Option<f64>,
}

/// AFL hit-count bucket of an edge count.
pub fn bucket(count: u32) -> u8 {
    match count {
        0 => 0,
        1 => 1,
        2 => 2,
        3 => 3,
        4..=7 => 4,
        8..=15 => 5,
        16..=31 => 6,
        32..=127 => 7,
        _ => 8,
    }
}

/// Tracks the (edge, bucket) pairs and blocks seen so far.
#[derive(Debug, Default, Clone)]
pub struct CoverageMap {
    edges: HashSet<(BlockId, BlockId, u8)>,
    blocks: HashSet<BlockId>,
}

impl CoverageMap {
    /// Records a trace and reports whether it added anything new.
    pub fn merge(&mut self, t: &ExecutionTrace) -> bool {
        let mut novel = false;
        for (&(a, b), &n) in &t.edges {
            novel |= self.edges.insert((a, b, bucket(n)));
        }
        for &b in &t.blocks_covered {
            novel |= self.blocks.insert(b);
        }
        novel
    }
}

const ENERGY_FLOOR: f64 = 1e-6;

/// Selection weights of seeds at campaign time `elapsed`. Weight moves from
/// uniform to `1 / (1 + distance)` linearly over the first half of the
/// budget; seeds with no finite distance only keep the uniform share.
pub fn seed_energies(distances: &[Option<f64>], elapsed: u64, exec_budget: u64) -> Vec<f64> {
    let half = (exec_budget as f64 / 2.0).max(1.0);
    let w = (elapsed as f64 / half).min(1.0);
    let raw: Vec<f64> = distances
        .iter()
        .map(|d| {
            let closeness = d.map_or(0.0, |d| 1.0 / (1.0 + d));
            ((1.0 - w) + w * closeness).max(ENERGY_FLOOR)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|e| e / total).collect()
}

fn pick_weighted(energies: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let mut x = rng.gen::<f64>();
    for (i, e) in energies.iter().enumerate() {
        if x < *e {
            return i;
        }
        x -= e;
    }
    energies.len() - 1
}

struct Accumulator {
    stats: CampaignStats,
    seen_stacks: HashSet<Vec<Frame>>,
}

impl Accumulator {
    fn account(&mut self, t: &ExecutionTrace) -> bool {
        let s = &mut self.stats;
        s.executions += 1;
        s.total_steps += t.steps;
        s.target_reaches += t.targets_hit.len() as u64;
        if !t.targets_hit.is_empty() {
            s.target_reaching_inputs += 1;
        }
        match &t.termination {
            Termination::PrunedExit => s.pruned_exits += 1,
            Termination::BugTriggered { bug, stack } => {
                if self.seen_stacks.insert(stack.clone()) {
                    s.bugs.push(BugHit {
                        bug: bug.clone(),
                        primary_location: FrameRef::from(&stack[0]),
                        stack: stack.iter().map(FrameRef::from).collect(),
                        first_hit_steps: s.total_steps,
                    });
                    s.time_to_first_bug.get_or_insert(s.total_steps);
                    return true;
                }
            }
            _ => {}
        }
        false
    }
}

/// Runs one campaign to exhaustion of its step budget. A run starts only if
/// its full per-run budget still fits in the remaining campaign budget.
pub fn run_campaign(programs: &Programs<'_>, cfg: &CampaignConfig) -> Result<CampaignResult> {
    cfg.check()?;
    let target = match cfg.mode {
        Mode::Pruning => &programs.pruned.ok_or(FuzzError::MissingPruned)?.program,
        Mode::Minimization | Mode::Plain => programs.original,
    };
    let interp = Interpreter::new(target)?;
    let uses_distance =
        cfg.mode == Mode::Minimization || (cfg.mode == Mode::Pruning && cfg.distance_energy);
    let distances = if uses_distance {
        let icg = InverseCallGraph::build(programs.original);
        static_block_distances(programs.original, &icg, &programs.marked.targets)
    } else {
        BlockDistances::default()
    };

    let opts = RunOptions::with_budget(cfg.per_run_budget);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut coverage = CoverageMap::default();
    let mut queue: Vec<Seed> = Vec::new();
    let mut corpus: Vec<CorpusEntry> = Vec::new();
    let mut acc = Accumulator {
        stats: CampaignStats {
            mode: cfg.mode,
            rng_seed: cfg.rng_seed,
            exec_budget: cfg.exec_budget,
            per_run_budget: cfg.per_run_budget,
            executions: 0,
            total_steps: 0,
            target_reaches: 0,
            target_reaching_inputs: 0,
            pruned_exits: 0,
            relevant_blocks_covered: Vec::new(),
            relevant_blocks_total: programs.marked.relevant_blocks.len(),
            target_relevant_coverage: 0.0,
            bugs: Vec::new(),
            time_to_first_bug: None,
            throughput: 0.0,
            queue_size: 0,
            corpus_size: 0,
            wall_clock_secs: None,
        },
        seen_stacks: HashSet::new(),
    };
    let started = Instant::now();
    let fits = |acc: &Accumulator| {
        acc.stats.total_steps + cfg.per_run_budget <= cfg.exec_budget
            && cfg.time_limit.is_none_or(|l| started.elapsed() < l)
    };

    for seed in &cfg.seeds {
        if !fits(&acc) {
            break;
        }
        let t = interp.run(seed, &opts);
        acc.account(&t);
        coverage.merge(&t);
        queue.push(Seed {
            input: seed.clone(),
            distance: distances.mean_over(&t.blocks_covered),
        });
        corpus.push(CorpusEntry {
            input: seed.clone(),
            kind: EntryKind::Seed,
            found_at: acc.stats.total_steps,
        });
    }

    while fits(&acc) {
        let pick = if uses_distance {
            let d: Vec<Option<f64>> = queue.iter().map(|s| s.distance).collect();
            pick_weighted(
                &seed_energies(&d, acc.stats.total_steps, cfg.exec_budget),
                &mut rng,
            )
        } else {
            rng.gen_range(0..queue.len())
        };
        let input = mutate(&queue[pick].input, &mut rng, &cfg.weights);
        let t = interp.run(&input, &opts);
        let new_crash = acc.account(&t);
        let novel = coverage.merge(&t);
        let found_at = acc.stats.total_steps;
        if new_crash {
            corpus.push(CorpusEntry {
                input,
                kind: EntryKind::Crash,
                found_at,
            });
        } else if novel {
            if t.termination == Termination::PrunedExit {
                corpus.push(CorpusEntry {
                    input,
                    kind: EntryKind::PrunedExit,
                    found_at,
                });
            } else {
                queue.push(Seed {
                    input: input.clone(),
                    distance: distances.mean_over(&t.blocks_covered),
                });
                corpus.push(CorpusEntry {
                    input,
                    kind: EntryKind::Queue,
                    found_at,
                });
            }
        }
    }

    let files: Vec<CorpusFile> = corpus
        .iter()
        .enumerate()
        .map(|(i, e)| CorpusFile {
            name: metrics::corpus_file_name(i),
            input: e.input.clone(),
            found_at: Some(e.found_at),
        })
        .collect();
    let covered = metrics::relevant_coverage(&files, programs.marked, cfg.per_run_budget)?;

    let s = &mut acc.stats;
    s.relevant_blocks_covered = covered
        .iter()
        .map(|&b| programs.marked.program.block_name(b))
        .collect();
    s.target_relevant_coverage = metrics::ratio(covered.len(), s.relevant_blocks_total);
    s.throughput = metrics::throughput(s.executions, s.total_steps);
    s.queue_size = queue.len();
    s.corpus_size = corpus.len();
    if cfg.time_limit.is_some() {
        s.wall_clock_secs = Some(started.elapsed().as_secs_f64());
    }
    log::info!(
        "{} campaign (rng seed {}): {} executions, {} steps, {} target-reaching inputs",
        cfg.mode,
        cfg.rng_seed,
        s.executions,
        s.total_steps,
        s.target_reaching_inputs
    );
    Ok(CampaignResult {
        stats: acc.stats,
        corpus,
    })
}

/// Live coverage of relevant blocks gathered by replaying `inputs` on any
/// program that shares block ids with `marked`.
pub fn live_relevant_coverage(
    program: &Program,
    marked: &MarkedProgram,
    inputs: &[Vec<u8>],
    budget: u64,
) -> Result<BTreeSet<BlockId>> {
    let interp = Interpreter::new(program)?;
    let opts = RunOptions::with_budget(budget);
    let mut out = BTreeSet::new();
    for i in inputs {
        let t = interp.run(i, &opts);
        out.extend(t.blocks_covered.intersection(&marked.relevant_blocks).copied());
    }
    Ok(out)
}
