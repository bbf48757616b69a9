use pathprune_core::callgraph::InverseCallGraph;
use pathprune_core::corpus::{generate_random_program, scenarios, GenParams};
use pathprune_core::finder::find_relevant_blocks;
use pathprune_core::interp::{ExecutionTrace, Interpreter, RunOptions, Termination};
use pathprune_core::ir::{InstrId, Program, TargetSpec};
use pathprune_core::pruner::prune;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn source_ids(t: &ExecutionTrace) -> Vec<InstrId> {
    t.instructions
        .as_ref()
        .unwrap()
        .iter()
        .copied()
        .filter(|i| matches!(i, InstrId::Source(_)))
        .collect()
}

/// Checks one input: the pruned run must follow the original instruction
/// for instruction and, when it stops early, the original must hit no
/// further target.
fn check_input(orig: &Interpreter, pruned: &Interpreter, input: &[u8]) -> Result<(), String> {
    let opts = RunOptions::with_budget(200_000).recording();
    let a = orig.run(input, &opts);
    let b = pruned.run(input, &opts);
    let (ta, tb) = (source_ids(&a), source_ids(&b));
    if b.steps > a.steps {
        return Err(format!("pruned run longer: {} > {}", b.steps, a.steps));
    }
    if !ta.starts_with(&tb) {
        return Err("pruned trace diverges from original".into());
    }
    match b.termination {
        Termination::PrunedExit => {
            if a.targets_hit != b.targets_hit {
                return Err(format!(
                    "early exit dropped targets: {:?} vs {:?}",
                    a.targets_hit, b.targets_hit
                ));
            }
        }
        _ => {
            if a.termination != b.termination || ta != tb || a.targets_hit != b.targets_hit {
                return Err("runs differ without an early exit".into());
            }
        }
    }
    Ok(())
}

fn setup(p: &Program, spec: &TargetSpec) -> (Interpreter, Interpreter) {
    let icg = InverseCallGraph::build(p);
    let marked = find_relevant_blocks(p, &icg, spec).unwrap();
    let pruned = prune(&marked).unwrap();
    (
        Interpreter::new(p).unwrap(),
        Interpreter::new(&pruned.program).unwrap(),
    )
}

fn random_input(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let len = rng.gen_range(0..12);
    (0..len)
        .map(|_| if rng.gen_bool(0.6) { rng.gen_range(0..2) } else { rng.gen() })
        .collect()
}

#[test]
fn random_programs_prune_soundly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..60u64 {
        let c = generate_random_program(&GenParams {
            functions: 1 + (seed % 6) as usize,
            blocks_per_function: 2 + (seed % 7) as usize,
            seed: seed + 1000,
            ..GenParams::default()
        })
        .unwrap();
        let (orig, pruned) = setup(&c.program(), &c.targets);
        check_input(&orig, &pruned, &c.witness).unwrap();
        for _ in 0..200 {
            let input = random_input(&mut rng);
            if let Err(e) = check_input(&orig, &pruned, &input) {
                panic!("{} on {input:?}: {e}\n{}", c.name, c.source);
            }
        }
    }
}

#[test]
fn scenario_witnesses_survive_pruning() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for c in scenarios() {
        let (orig, pruned) = setup(&c.program(), &c.targets);
        let opts = RunOptions::with_budget(1_000_000);
        assert!(!pruned.run(&c.witness, &opts).targets_hit.is_empty(), "{}", c.name);
        for bug in &c.planted_bugs {
            check_input(&orig, &pruned, &bug.witness).unwrap();
        }
        for _ in 0..300 {
            let input: Vec<u8> = (0..rng.gen_range(0..10)).map(|_| rng.gen()).collect();
            check_input(&orig, &pruned, &input).unwrap();
        }
    }
}
