use std::path::Path;

use pathprune_core::corpus::{generate_random_program, scenario, scenario_names, CorpusProgram, GenParams};
use pathprune_core::finder::MarkedProgram;
use pathprune_core::interp::{Interpreter, RunOptions, Termination};
use pathprune_core::ir::print_program;
use pathprune_core::pruner::prune_program;
use pathprune_fuzz::campaign::{run_campaign, CampaignConfig, Mode};
use pathprune_fuzz::metrics::{compare_reports, replay, ReplayOptions, ReplayReport};
use serde::Serialize;

use crate::args::*;
use crate::config::{PipelineConfig, DEFAULT_BUDGET_STEPS, DEFAULT_PER_RUN_BUDGET};
use crate::corpus_dir::read_corpus;
use crate::load::{self, emit, fingerprint, parse_input, to_json, write};
use crate::pipeline::{render_summary, run_pipeline, Analysis};
use crate::{CliError, Result};

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Prune(a) => prune(a),
        Command::Run(a) => run(a),
        Command::Fuzz(a) => fuzz(a),
        Command::Replay(a) => replay_cmd(a),
        Command::Report(a) => report(a),
        Command::Corpus(c) => corpus(c),
        Command::Pipeline(a) => pipeline(a),
    }
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let (p, spec) = load::load(&a.program)?;
    let ids: Vec<String> = spec.iter().map(str::to_string).collect();
    let analysis = Analysis::new(p, &ids, !a.no_signature_matching)?;
    if a.dump_callgraph {
        print!("{}", to_json(&analysis.icg.dump()));
    }
    if let Some(path) = &a.emit_marked {
        write(path, print_program(&analysis.marked.program))?;
    }
    let report = to_json(&analysis.marked.report(&analysis.icg));
    match &a.emit_report {
        Some(path) => write(path, report),
        None if a.dump_callgraph => Ok(()),
        None => emit(None, &report),
    }
}

fn prune(a: PruneArgs) -> Result<()> {
    let marked = load::load_program_file(&a.input)?;
    let pruned = prune_program(&marked)?;
    emit(a.out.as_deref(), &print_program(&pruned.program))?;
    if let Some(path) = &a.stats {
        write(path, to_json(&pruned.report()))?;
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let p = load::load_program(&a.program)?;
    let input = parse_input(&a.input)?;
    let trace = Interpreter::new(&p)?.run(&input, &RunOptions::with_budget(a.budget));
    if a.json {
        print!("{}", to_json(&trace.report(&p)));
    } else {
        let kind = match &trace.termination {
            Termination::NormalReturn => "normal return".to_string(),
            Termination::PrunedExit => "pruned exit".to_string(),
            Termination::StepBudgetExhausted => "step budget exhausted".to_string(),
            Termination::BugTriggered { bug, .. } => format!("bug {bug}"),
        };
        println!(
            "{kind} after {} steps; targets hit: [{}]",
            trace.steps,
            trace.targets_hit.join(", ")
        );
    }
    Ok(())
}

fn campaign_config(mode: Mode, rng_seed: u64, c: &CampaignArgs) -> Result<CampaignConfig> {
    let mut cc = CampaignConfig::new(mode, c.budget_steps.unwrap_or(DEFAULT_BUDGET_STEPS), rng_seed);
    cc.per_run_budget = c.per_run_budget.unwrap_or(DEFAULT_PER_RUN_BUDGET);
    if !c.seed_inputs.is_empty() {
        cc.seeds = c.seed_inputs.iter().map(|s| parse_input(s)).collect::<Result<_>>()?;
    }
    cc.distance_energy = c.distance_energy;
    cc.time_limit = c.wall_clock_secs.map(std::time::Duration::from_secs_f64);
    Ok(cc)
}

fn fuzz(a: FuzzArgs) -> Result<()> {
    let (p, spec) = load::load(&a.program)?;
    let ids: Vec<String> = spec.iter().map(str::to_string).collect();
    let analysis = Analysis::new(p, &ids, !a.campaign.no_signature_matching)?;
    let cc = campaign_config(a.mode, a.rng_seed, &a.campaign)?;
    let result = run_campaign(&analysis.programs(), &cc)?;
    if let Some(dir) = &a.corpus_dir {
        crate::corpus_dir::write_corpus(dir, &result, &analysis.fingerprint, ids)?;
    }
    emit(a.out.as_deref(), &to_json(&result.stats))
}

fn replay_cmd(a: ReplayArgs) -> Result<()> {
    let program = load::load_program_file(&a.marked)?;
    let spec = load::targets(&program, &a.targets)?;
    let (files, manifest) = read_corpus(&a.corpus)?;
    if let Some(m) = &manifest {
        let fp = fingerprint(&program);
        if m.program_fingerprint != fp {
            return Err(CliError::Validation(format!(
                "corpus {} was produced from a different program (fingerprint {} vs {fp})",
                a.corpus.display(),
                m.program_fingerprint
            )));
        }
    }
    if !program.block_ids().any(|b| program.block(b).has_marker()) {
        log::warn!("{} carries no markers; coverage will be 0", a.marked.display());
    }
    let marked = MarkedProgram::from_marked(program, spec)?;
    let opts = ReplayOptions {
        budget: a
            .budget
            .or(manifest.as_ref().map(|m| m.per_run_budget))
            .unwrap_or(DEFAULT_PER_RUN_BUDGET),
        campaign: manifest.as_ref().map(|m| (m.executions, m.total_steps)),
    };
    let report = replay(&files, &marked, opts)?;
    emit(a.report.as_deref(), &to_json(&report))
}

fn read_report(path: &Path) -> Result<ReplayReport> {
    serde_json::from_str(&load::read_text(path)?)
        .map_err(|e| CliError::Validation(format!("{} is not a replay report: {e}", path.display())))
}

fn report(a: ReportArgs) -> Result<()> {
    let ra = read_report(&a.compare[0])?;
    let rb = read_report(&a.compare[1])?;
    let c = compare_reports(&ra, &rb);
    let text = match a.format {
        Format::Table => c.to_table(),
        Format::Json => to_json(&c),
        Format::Csv => c.to_csv(),
    };
    emit(None, &text)
}

#[derive(Serialize)]
struct BugMeta<'a> {
    id: &'a str,
    reachable_only_via: pathprune_core::corpus::BugRoute,
    witness_hex: String,
}

#[derive(Serialize)]
struct ProgramMeta<'a> {
    name: &'a str,
    targets: Vec<&'a str>,
    blocks: usize,
    witness_hex: String,
    planted_bugs: Vec<BugMeta<'a>>,
    notes: &'a str,
}

fn meta(c: &CorpusProgram) -> ProgramMeta<'_> {
    ProgramMeta {
        name: &c.name,
        targets: c.targets.iter().collect(),
        blocks: c.program().num_blocks(),
        witness_hex: hex::encode(&c.witness),
        planted_bugs: c
            .planted_bugs
            .iter()
            .map(|b| BugMeta {
                id: &b.id,
                reachable_only_via: b.reachable_only_via,
                witness_hex: hex::encode(&b.witness),
            })
            .collect(),
        notes: &c.notes,
    }
}

fn write_program(dir: &Path, c: &CorpusProgram) -> Result<()> {
    write(&dir.join(format!("{}.tir", c.name)), &c.source)?;
    write(&dir.join(format!("{}.json", c.name)), to_json(&meta(c)))
}

fn corpus(c: CorpusCommand) -> Result<()> {
    match c {
        CorpusCommand::List => {
            for name in scenario_names() {
                let s = scenario(name).expect("listed scenarios exist");
                println!(
                    "{name:<28} {:>3} blocks  targets {:<18} {}",
                    s.program().num_blocks(),
                    s.targets.iter().collect::<Vec<_>>().join(","),
                    s.notes
                );
            }
            Ok(())
        }
        CorpusCommand::Emit { name, out } => {
            let names: Vec<&str> = if name == "all" {
                scenario_names()
            } else {
                vec![name.as_str()]
            };
            for n in names {
                let s = scenario(n)
                    .ok_or_else(|| CliError::Usage(format!("unknown corpus program `{n}`")))?;
                write_program(&out, &s)?;
            }
            Ok(())
        }
        CorpusCommand::Gen {
            seed,
            functions,
            blocks,
            indirect,
            collision,
            out,
        } => {
            let params = GenParams {
                functions,
                blocks_per_function: blocks,
                indirect_fraction: indirect,
                collision_factor: collision,
                seed,
            };
            let c = generate_random_program(&params).map_err(|e| CliError::Usage(e.to_string()))?;
            match out {
                Some(dir) => write_program(&dir, &c),
                None => emit(None, &c.source),
            }
        }
    }
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let cfg = PipelineConfig::resolve(&a)?;
    let outcome = run_pipeline(&cfg)?;
    print!("{}", render_summary(&outcome.summary));
    Ok(())
}
