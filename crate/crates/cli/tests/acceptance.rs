//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero when any
//! criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::{Duration, Instant};

use pathprune_cli::config::{PipelineConfig, ProgramSource};
use pathprune_cli::pipeline::{run_pipeline, Outcome};
use pathprune_core::callgraph::InverseCallGraph;
use pathprune_core::corpus::{generate_random_program, scenario, GenParams};
use pathprune_core::finder::find_relevant_blocks;
use pathprune_core::interp::{ExecutionTrace, Interpreter, RunOptions, Termination};
use pathprune_core::ir::{InstrId, InstrKind, Program};
use pathprune_core::pruner::prune;
use pathprune_fuzz::campaign::Mode;
use pathprune_fuzz::metrics::{replay, CorpusFile, ReplayOptions};
use pathprune_oracle::relevant_blocks;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BUDGET: u64 = 2_000_000;
const TRIALS: u64 = 10;

type Verdict = Result<String, String>;

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn campaigns(name: &str, modes: &[Mode], signature_matching: bool, out: &Path) -> Outcome {
    let mut cfg = PipelineConfig::new(ProgramSource::Scenario(name.into()), out);
    cfg.modes = modes.to_vec();
    cfg.budget_steps = BUDGET;
    cfg.rng_seeds = (0..TRIALS).collect();
    cfg.signature_matching = signature_matching;
    cfg.jobs = jobs();
    run_pipeline(&cfg).expect("pipeline runs")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn random_params(i: u64) -> GenParams {
    GenParams {
        functions: 1 + (i % 6) as usize,
        blocks_per_function: 1 + (i / 6 % 8) as usize,
        indirect_fraction: [0.0, 0.3, 0.7, 1.0][(i % 4) as usize],
        collision_factor: [0.0, 0.5, 1.0][(i % 3) as usize],
        seed: 1_000_003 * (i + 1),
    }
}

fn oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    for i in 0..500 {
        let c = generate_random_program(&random_params(i)).map_err(|e| e.to_string())?;
        let p = c.program();
        let marked = find_relevant_blocks(&p, &InverseCallGraph::build(&p), &c.targets)
            .map_err(|e| e.to_string())?;
        if marked.relevant_blocks != relevant_blocks(&p, &c.targets).relevant {
            mismatches.push(c.name);
        }
    }
    let elapsed = start.elapsed();
    let detail = format!("500 programs, {} mismatches, {:.1}s", mismatches.len(), elapsed.as_secs_f64());
    if mismatches.is_empty() && elapsed < Duration::from_secs(120) {
        Ok(detail)
    } else {
        Err(format!("{detail}; first mismatches {:?}", &mismatches[..mismatches.len().min(5)]))
    }
}

fn source_trace(t: &ExecutionTrace) -> Vec<InstrId> {
    let all = t.instructions.as_ref().expect("recorded");
    all.iter().copied().filter(|i| matches!(i, InstrId::Source(_))).collect()
}

fn target_instrs(p: &Program) -> BTreeSet<InstrId> {
    p.instructions()
        .filter(|(_, ins)| matches!(ins.kind, InstrKind::Target { .. }))
        .map(|(_, ins)| ins.id)
        .collect()
}

fn random_input(rng: &mut ChaCha8Rng, witness: &[u8]) -> Vec<u8> {
    if rng.gen_bool(0.25) {
        let mut v = witness.to_vec();
        if !v.is_empty() {
            let i = rng.gen_range(0..v.len());
            v[i] = rng.gen_range(0..3);
        }
        return v;
    }
    let len = rng.gen_range(0..=10);
    (0..len)
        .map(|_| if rng.gen_bool(0.6) { rng.gen_range(0..2) } else { rng.gen() })
        .collect()
}

#[derive(Default)]
struct SoundnessTally {
    runs: u64,
    target_runs: u64,
    pruned_exits: u64,
    over_pruned: u64,
    bad_exits: u64,
    elapsed: Duration,
}

/// Runs every input on the original and the pruned build and compares the
/// source-instruction traces.
fn soundness_runs() -> Result<SoundnessTally, String> {
    let start = Instant::now();
    let mut tally = SoundnessTally::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let opts = RunOptions::with_budget(200_000).recording();
    for i in 0..200 {
        let c = generate_random_program(&random_params(10_000 + i)).map_err(|e| e.to_string())?;
        let p = c.program();
        let marked = find_relevant_blocks(&p, &InverseCallGraph::build(&p), &c.targets)
            .map_err(|e| e.to_string())?;
        let pruned = prune(&marked).map_err(|e| e.to_string())?;
        let targets = target_instrs(&p);
        let orig = Interpreter::new(&p).map_err(|e| e.to_string())?;
        let cut = Interpreter::new(&pruned.program).map_err(|e| e.to_string())?;
        for _ in 0..1000 {
            let input = random_input(&mut rng, &c.witness);
            let a = orig.run(&input, &opts);
            let b = cut.run(&input, &opts);
            let (ta, tb) = (source_trace(&a), source_trace(&b));
            tally.runs += 1;
            if let Some(last) = ta.iter().rposition(|i| targets.contains(i)) {
                tally.target_runs += 1;
                if tb.len() <= last || tb[..=last] != ta[..=last] {
                    tally.over_pruned += 1;
                }
            }
            if b.termination == Termination::PrunedExit {
                tally.pruned_exits += 1;
                let diverged = !ta.starts_with(&tb);
                let later_hit = ta[tb.len().min(ta.len())..].iter().any(|i| targets.contains(i));
                if diverged || later_hit {
                    tally.bad_exits += 1;
                }
            }
        }
    }
    tally.elapsed = start.elapsed();
    Ok(tally)
}

fn soundness(t: &SoundnessTally) -> Verdict {
    let detail = format!(
        "{} runs, {} hit a target, {} over-pruned, {:.1}s",
        t.runs,
        t.target_runs,
        t.over_pruned,
        t.elapsed.as_secs_f64()
    );
    if t.over_pruned == 0 && t.target_runs > 0 && t.elapsed < Duration::from_secs(300) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn early_exits(t: &SoundnessTally) -> Verdict {
    let detail = format!("{} pruned exits, {} with a later target hit", t.pruned_exits, t.bad_exits);
    if t.bad_exits == 0 && t.pruned_exits > 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ablation(tmp: &Path) -> Verdict {
    let with = campaigns("fig2-giflib-like", &[Mode::Pruning], true, &tmp.join("fig2"));
    let without = campaigns("fig2-giflib-like", &[Mode::Pruning], false, &tmp.join("fig2-ablation"));
    let reached = |o: &Outcome| o.trials.iter().filter(|t| t.stats.target_reaching_inputs > 0).count();
    let leaked = |o: &Outcome| {
        o.trials
            .iter()
            .filter(|t| t.stats.bugs.iter().any(|b| b.bug == "gcb_leak"))
            .count()
    };
    let detail = format!(
        "matching: target {}/10, leak {}/10; ablation: target {}/10, leak {}/10",
        reached(&with),
        leaked(&with),
        reached(&without),
        leaked(&without)
    );
    if reached(&with) == 10 && leaked(&with) == 10 && reached(&without) == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Paired {
    name: &'static str,
    outcome: Outcome,
}

impl Paired {
    fn pairs<T>(&self, f: impl Fn(&pathprune_cli::pipeline::Trial) -> T) -> Vec<(T, T)> {
        let p: Vec<_> = self.outcome.trials_of(Mode::Pruning).collect();
        let m: Vec<_> = self.outcome.trials_of(Mode::Minimization).collect();
        p.iter().zip(&m).map(|(a, b)| (f(a), f(b))).collect()
    }
}

fn throughput(runs: &[Paired]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in runs {
        let pairs = r.pairs(|t| t.stats.executions as f64);
        let wins = pairs.iter().filter(|(p, m)| p > m).count();
        let gain = median(pairs.iter().map(|(p, m)| p / m - 1.0).collect());
        ok &= wins >= 8 && gain >= 0.30;
        parts.push(format!("{}: {wins}/10 wins, median {:+.0}%", r.name, gain * 100.0));
    }
    let detail = parts.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn reachability(runs: &[Paired]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in runs {
        let tri = r.pairs(|t| t.stats.target_reaching_inputs);
        let wins = tri.iter().filter(|(p, m)| p >= m).count();
        let cov = r.pairs(|t| t.stats.target_relevant_coverage);
        let worst = cov.iter().map(|(p, m)| p - m).fold(f64::INFINITY, f64::min);
        ok &= wins >= 8 && worst >= -0.02;
        parts.push(format!("{}: TRI >= in {wins}/10, worst coverage delta {worst:+.3}", r.name));
    }
    let detail = parts.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn time_to_bug(tmp: &Path) -> Verdict {
    let o = campaigns("post-target-bug", &[Mode::Pruning, Mode::Minimization], true, &tmp.join("ptb"));
    // A trial without any bug counts as never finding one.
    let times = |m: Mode| -> Vec<f64> {
        o.trials_of(m)
            .map(|t| t.stats.time_to_first_bug.map_or(f64::INFINITY, |s| s as f64))
            .collect()
    };
    let (p, m) = (median(times(Mode::Pruning)), median(times(Mode::Minimization)));
    let detail = format!("median steps: pruning {p}, minimization {m}");
    if p <= m {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn json_files(dir: &Path, base: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            json_files(&path, base, out);
        } else if path.extension().is_some_and(|x| x == "json") {
            let rel = path.strip_prefix(base).unwrap().display().to_string();
            out.insert(rel, std::fs::read(&path).unwrap());
        }
    }
}

fn determinism(tmp: &Path) -> Verdict {
    let mut compared = 0;
    for name in ["fig1-netcdf-like", "post-target-bug"] {
        let mut trees = Vec::new();
        for (run, jobs) in [("a", 1), ("b", jobs())] {
            let out = tmp.join(format!("det-{name}-{run}"));
            let mut cfg = PipelineConfig::new(ProgramSource::Scenario(name.into()), &out);
            cfg.modes = Mode::ALL.to_vec();
            cfg.budget_steps = 300_000;
            cfg.rng_seeds = vec![3, 4];
            cfg.jobs = jobs;
            run_pipeline(&cfg).map_err(|e| e.to_string())?;
            let mut files = BTreeMap::new();
            json_files(&out, &out, &mut files);
            trees.push(files);
        }
        if trees[0].len() < 6 * 3 {
            return Err(format!("{name}: only {} JSON files written", trees[0].len()));
        }
        if trees[0] != trees[1] {
            let differing: Vec<&String> = trees[0]
                .keys()
                .filter(|k| trees[0].get(*k) != trees[1].get(*k))
                .collect();
            return Err(format!("{name}: differing files {differing:?}"));
        }
        compared += trees[0].len();
    }
    Ok(format!("{compared} JSON files byte-identical across reruns"))
}

/// Hand-traced corpus over the 18-block post-target-bug program. Every
/// instruction costs one step:
///
/// * `[]`: main reads 0 and scans; resync(n) costs 6n+3, so 3+1+543+1 = 548.
/// * `[201,1,250,0]`: keep path, release(250,1) hits double_free: 18 steps.
/// * `[201,255]`: skip_chunk(255) hits skip_overflow: 11 steps.
/// * `[201,1,250,0,9]`: same run as the second input: 18 steps.
/// * `[201,1,7,200]`: drop path, second release hits double_free: 21 steps.
///
/// Cumulative steps 548, 566, 577, 595, 616. Two bug sites, three stacks.
fn metric_conformance() -> Verdict {
    let c = scenario("post-target-bug").unwrap();
    let p = c.program();
    if p.num_blocks() > 30 {
        return Err("program exceeds 30 blocks".into());
    }
    let marked = find_relevant_blocks(&p, &InverseCallGraph::build(&p), &c.targets).unwrap();
    let relevant: BTreeSet<String> = marked.relevant_blocks.iter().map(|&b| p.block_name(b)).collect();
    let expected_relevant: BTreeSet<String> = [
        "main:entry", "main:chunks", "load_chunks:entry", "load_chunks:data",
        "decode_chunk:entry", "decode_chunk:drop", "decode_chunk:keep",
        "release:entry", "release:double", "release:first",
    ]
    .map(String::from)
    .into();
    if relevant != expected_relevant {
        return Err(format!("relevant blocks {relevant:?}"));
    }
    let inputs: [&[u8]; 5] = [&[], &[201, 1, 250, 0], &[201, 255], &[201, 1, 250, 0, 9], &[201, 1, 7, 200]];
    let files = |found: Option<[u64; 5]>| -> Vec<CorpusFile> {
        inputs
            .iter()
            .enumerate()
            .map(|(i, x)| CorpusFile {
                name: i.to_string(),
                input: x.to_vec(),
                found_at: found.map(|f| f[i]),
            })
            .collect()
    };
    let mut failures = Vec::new();
    let check = |failures: &mut Vec<String>, what: &str, got: f64, want: f64| {
        if got != want {
            failures.push(format!("{what}: got {got}, want {want}"));
        }
    };

    let r = replay(&files(None), &marked, ReplayOptions { budget: 100_000, campaign: None }).unwrap();
    check(&mut failures, "unique_bugs", r.unique_bugs as f64, 2.0);
    check(&mut failures, "unique_traces", r.unique_traces as f64, 3.0);
    check(&mut failures, "time_to_first_bug", r.time_to_first_bug.map_or(-1.0, |s| s as f64), 566.0);
    check(&mut failures, "target_relevant_coverage", r.target_relevant_coverage, 1.0);
    check(&mut failures, "target_reaches", r.target_reaches as f64, 3.0);
    check(&mut failures, "target_reaching_inputs", r.target_reaching_inputs as f64, 3.0);
    check(&mut failures, "throughput", r.throughput, 5.0 * 1e6 / 616.0);
    check(&mut failures, "total_steps", r.total_steps as f64, 616.0);
    let primaries: BTreeSet<&str> = r.bugs.iter().map(|b| b.primary_location.function.as_str()).collect();
    if primaries != BTreeSet::from(["release", "skip_chunk"]) {
        failures.push(format!("primary locations {primaries:?}"));
    }

    // With campaign discovery times and totals the report takes those instead.
    let opts = ReplayOptions { budget: 100_000, campaign: Some((1_000, 250_000)) };
    let r = replay(&files(Some([0, 40, 95, 130, 200])), &marked, opts).unwrap();
    check(&mut failures, "time_to_first_bug (recorded)", r.time_to_first_bug.map_or(-1.0, |s| s as f64), 40.0);
    check(&mut failures, "throughput (campaign)", r.throughput, 4_000.0);
    check(&mut failures, "unique_traces (recorded)", r.unique_traces as f64, 3.0);

    if failures.is_empty() {
        Ok("7 metrics match the hand trace on 5 inputs".into())
    } else {
        Err(failures.join("; "))
    }
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let tmp = tmp.path();
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut record = |id, name, r| {
        let (tag, detail) = match &r {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} criterion {id} ({name}): {detail}");
        results.push((id, name, r));
    };

    record(1, "reachability oracle equivalence", oracle_equivalence());
    match soundness_runs() {
        Ok(t) => {
            record(2, "pruning soundness", soundness(&t));
            record(3, "early-exit validity", early_exits(&t));
        }
        Err(e) => {
            record(2, "pruning soundness", Err(e.clone()));
            record(3, "early-exit validity", Err(e));
        }
    }
    record(4, "indirect-edge ablation", ablation(tmp));
    let paired: Vec<Paired> = ["fig1-netcdf-like", "deep-call-chain"]
        .into_iter()
        .map(|name| Paired {
            name,
            outcome: campaigns(name, &[Mode::Pruning, Mode::Minimization], true, &tmp.join(name)),
        })
        .collect();
    record(5, "throughput mechanism", throughput(&paired));
    record(6, "reachability and coverage", reachability(&paired));
    record(7, "time to first bug", time_to_bug(tmp));
    record(8, "determinism", determinism(tmp));
    record(9, "metric-definition conformance", metric_conformance());

    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
