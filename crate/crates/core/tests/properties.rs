use pathprune_core::callgraph::InverseCallGraph;
use pathprune_core::corpus::{generate_random_program, GenParams};
use pathprune_core::finder::find_relevant_blocks;
use pathprune_core::interp::{Interpreter, RunOptions, Termination};
use pathprune_core::ir::{parse_program_with, print_program, ParseOptions};
use pathprune_core::pruner::{prune, prune_program};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = GenParams> {
    (1usize..=6, 1usize..=8, 0usize..4, 0usize..3, any::<u32>()).prop_map(|(f, b, i, c, seed)| GenParams {
        functions: f,
        blocks_per_function: b,
        indirect_fraction: [0.0, 0.3, 0.7, 1.0][i],
        collision_factor: [0.0, 0.5, 1.0][c],
        seed: u64::from(seed),
    })
}

fn input() -> impl Strategy<Value = Vec<u8>> {
    proptest::collection::vec(prop_oneof![0u8..2, any::<u8>()], 0..10)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn printing_then_parsing_is_identity(params in params()) {
        let c = generate_random_program(&params).unwrap();
        let p = c.program();
        let marked = find_relevant_blocks(&p, &InverseCallGraph::build(&p), &c.targets).unwrap();
        let pruned = prune(&marked).unwrap();
        for q in [&p, &marked.program, &pruned.program] {
            let text = print_program(q);
            let back = parse_program_with(&text, ParseOptions { trusted: true }).unwrap();
            prop_assert_eq!(&back, q);
            prop_assert_eq!(print_program(&back), text);
        }
    }

    #[test]
    fn marking_is_idempotent(params in params()) {
        let c = generate_random_program(&params).unwrap();
        let p = c.program();
        let icg = InverseCallGraph::build(&p);
        let once = find_relevant_blocks(&p, &icg, &c.targets).unwrap();
        let twice = find_relevant_blocks(&once.program, &icg, &c.targets).unwrap();
        prop_assert_eq!(&once, &twice);
        let pruned = prune(&once).unwrap();
        let again = find_relevant_blocks(&pruned.program, &icg, &c.targets).unwrap();
        prop_assert_eq!(once.program, again.program);
    }

    #[test]
    fn pruning_a_pruned_program_is_rejected(params in params()) {
        let c = generate_random_program(&params).unwrap();
        let p = c.program();
        let marked = find_relevant_blocks(&p, &InverseCallGraph::build(&p), &c.targets).unwrap();
        let pruned = prune(&marked).unwrap();
        prop_assume!(pruned.stats.blocks_kept < pruned.stats.blocks_total);
        prop_assert!(prune_program(&pruned.program).is_err());
    }

    #[test]
    fn runs_are_deterministic_and_pruned_runs_never_longer(
        params in params(),
        inputs in proptest::collection::vec(input(), 1..8),
    ) {
        let c = generate_random_program(&params).unwrap();
        let p = c.program();
        let marked = find_relevant_blocks(&p, &InverseCallGraph::build(&p), &c.targets).unwrap();
        let pruned = prune(&marked).unwrap();
        let orig = Interpreter::new(&p).unwrap();
        let cut = Interpreter::new(&pruned.program).unwrap();
        let opts = RunOptions::with_budget(50_000);
        for x in &inputs {
            let a = orig.run(x, &opts);
            prop_assert_eq!(&a, &orig.run(x, &opts));
            let b = cut.run(x, &opts);
            prop_assert!(b.steps <= a.steps);
            if b.termination != Termination::PrunedExit {
                prop_assert_eq!(&a.termination, &b.termination);
                prop_assert_eq!(&a.targets_hit, &b.targets_hit);
                prop_assert_eq!(&a.blocks_covered, &b.blocks_covered);
            }
        }
    }

    #[test]
    fn witnesses_hit_a_target(params in params()) {
        let c = generate_random_program(&params).unwrap();
        let t = Interpreter::new(&c.program()).unwrap().run(&c.witness, &RunOptions::with_budget(1_000_000));
        prop_assert!(!t.targets_hit.is_empty());
    }
}
