use pathprune_core::callgraph::InverseCallGraph;
use pathprune_core::corpus::{generate_random_program, scenarios, GenParams};
use pathprune_core::finder::find_relevant_blocks;
use pathprune_core::ir::{BlockId, Program, TargetSpec};
use pathprune_oracle::relevant_blocks;

fn names(p: &Program, set: &std::collections::BTreeSet<BlockId>) -> Vec<String> {
    set.iter().map(|&b| p.block_name(b)).collect()
}

fn check(p: &Program, spec: &TargetSpec, label: &str) {
    let icg = InverseCallGraph::build(p);
    let marked = find_relevant_blocks(p, &icg, spec).unwrap();
    let oracle = relevant_blocks(p, spec);
    assert_eq!(
        names(p, &marked.relevant_blocks),
        names(p, &oracle.relevant),
        "{label}\n{}",
        pathprune_core::ir::print_program(p)
    );
    assert_eq!(marked.required_functions, oracle.required, "{label}");
}

#[test]
fn random_programs_agree_with_oracle() {
    for seed in 0..300u64 {
        let params = GenParams {
            functions: 1 + (seed % 6) as usize,
            blocks_per_function: 1 + (seed % 8) as usize,
            indirect_fraction: [0.0, 0.3, 0.7, 1.0][(seed % 4) as usize],
            collision_factor: [0.0, 0.5, 1.0][(seed % 3) as usize],
            seed: seed * 7919,
        };
        let c = generate_random_program(&params).unwrap();
        check(&c.program(), &c.targets, &c.name);
    }
}

#[test]
fn scenarios_agree_with_oracle() {
    for c in scenarios() {
        check(&c.program(), &c.targets, &c.name);
    }
}
