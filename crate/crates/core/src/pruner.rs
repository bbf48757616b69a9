//! Basic block pruner.
//!
//! Rewrites a marked program so that any run entering control flow that
//! cannot reach a target stops immediately with a pruning exit.

use serde::Serialize;

use crate::finder::MarkedProgram;
use crate::ir::{validate, BlockId, InstrId, InstrKind, Instruction, Program};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PruneStats {
    pub blocks_total: usize,
    pub blocks_fully_pruned: usize,
    pub blocks_partially_pruned: usize,
    pub blocks_kept: usize,
}

/// How the pruner treated one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockAction {
    FullyPruned,
    /// Exit inserted at this instruction index of the original block.
    PartiallyPruned(usize),
    Kept,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrunedProgram {
    pub program: Program,
    pub stats: PruneStats,
    pub fully_pruned: Vec<BlockId>,
    /// Functions whose every block is fully pruned.
    pub pruned_functions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PruneReport {
    pub prune_stats: PruneStats,
    pub fully_pruned_blocks: Vec<String>,
    pub pruned_functions: Vec<String>,
}

impl PrunedProgram {
    pub fn report(&self) -> PruneReport {
        PruneReport {
            prune_stats: self.stats,
            fully_pruned_blocks: self
                .fully_pruned
                .iter()
                .map(|&b| self.program.block_name(b))
                .collect(),
            pruned_functions: self.pruned_functions.clone(),
        }
    }
}

fn pruning_exit() -> Instruction {
    Instruction::new(
        InstrId::Synthetic(0),
        InstrKind::Exit {
            code: 0,
            pruned: true,
        },
    )
}

/// Decides what to do with a block from its marker layout.
pub fn classify_block(block: &crate::ir::BasicBlock) -> std::result::Result<BlockAction, String> {
    let ins = &block.instructions;
    if ins.iter().any(|i| matches!(i.kind, InstrKind::Exit { pruned: true, .. })) {
        return Err("block already carries a pruning exit".into());
    }
    let Some(first) = ins.iter().position(|i| matches!(i.kind, InstrKind::Marker)) else {
        return Ok(BlockAction::FullyPruned);
    };
    let last_body = match ins.last() {
        Some(t) if t.kind.is_terminator() => ins.len() - 1,
        _ => return Err("block has no terminator".into()),
    };
    if first + 1 == last_body {
        Ok(BlockAction::Kept)
    } else if first == 0 {
        Err("marker at block start precedes no relevant instruction".into())
    } else {
        Ok(BlockAction::PartiallyPruned(first))
    }
}

/// Inserts pruning exits into every block of a marked program.
pub fn prune_program(marked: &Program) -> Result<PrunedProgram> {
    let mut program = marked.clone();
    let mut stats = PruneStats::default();
    let mut fully_pruned = Vec::new();
    let mut pruned_functions = Vec::new();
    for (fi, f) in program.functions.iter_mut().enumerate() {
        let mut all_pruned = true;
        for (bi, block) in f.blocks.iter_mut().enumerate() {
            stats.blocks_total += 1;
            let action = classify_block(block).map_err(|reason| Error::MisplacedMarker {
                block: format!("{}:{}", f.name, block.label),
                reason,
            })?;
            match action {
                BlockAction::FullyPruned => {
                    block.instructions.insert(0, pruning_exit());
                    stats.blocks_fully_pruned += 1;
                    fully_pruned.push(BlockId::new(fi, bi));
                    continue;
                }
                BlockAction::PartiallyPruned(at) => {
                    block.instructions.insert(at, pruning_exit());
                    stats.blocks_partially_pruned += 1;
                }
                BlockAction::Kept => stats.blocks_kept += 1,
            }
            all_pruned = false;
        }
        if all_pruned {
            pruned_functions.push(f.name.clone());
        }
    }
    program.renumber_synthetic();
    if let Some(v) = validate(&program).into_iter().next() {
        return Err(Error::Invalid(v.to_string()));
    }
    Ok(PrunedProgram {
        program,
        stats,
        fully_pruned,
        pruned_functions,
    })
}

pub fn prune(mp: &MarkedProgram) -> Result<PrunedProgram> {
    prune_program(&mp.program)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_program_with, print_program, ParseOptions};

    fn trusted(src: &str) -> Program {
        parse_program_with(src, ParseOptions { trusted: true }).unwrap()
    }

    #[test]
    fn mid_block_marker_gets_exit_before_it() {
        let p = trusted(
            "\
func f() -> void {
b0:
  marker
  ret
}
func main() -> int {
b0:
  call f()
  marker
  v = const 1
  ret v
}
",
        );
        let out = prune_program(&p).unwrap();
        let text = print_program(&out.program);
        assert!(text.contains("  call f()\n  pruned_exit\n  marker\n  v = const 1\n  ret v\n"));
        assert_eq!(
            out.stats,
            PruneStats {
                blocks_total: 2,
                blocks_fully_pruned: 0,
                blocks_partially_pruned: 1,
                blocks_kept: 1,
            }
        );
    }

    #[test]
    fn all_kept_is_identity() {
        let src = "\
func main() -> void {
b0:
  c = read_input
  marker
  br c, b1, b1
b1:
  marker
  ret
}
";
        let p = trusted(src);
        let out = prune_program(&p).unwrap();
        assert_eq!(out.program, p);
        assert_eq!(out.stats.blocks_fully_pruned, 0);
        assert!(out.pruned_functions.is_empty());
    }

    #[test]
    fn unmarked_blocks_and_functions() {
        let p = trusted(
            "\
func dead() -> void {
b0:
  ret
}
func main() -> void {
b0:
  marker
  ret
}
",
        );
        let out = prune_program(&p).unwrap();
        let first = &out.program.functions[0].blocks[0].instructions[0];
        assert!(matches!(first.kind, InstrKind::Exit { pruned: true, code: 0 }));
        assert_eq!(out.pruned_functions, ["dead"]);
        assert_eq!(out.report().fully_pruned_blocks, ["dead:b0"]);
    }

    #[test]
    fn marker_in_unclassifiable_position() {
        let p = trusted("func main() -> void {\nb0:\n  marker\n  v = const 0\n  ret\n}\n");
        assert!(matches!(
            prune_program(&p),
            Err(Error::MisplacedMarker { .. })
        ));
        let twice = prune_program(&trusted(
            "func main() -> void {\nb0:\n  ret\n}\n",
        ))
        .unwrap();
        assert!(prune_program(&twice.program).is_err());
    }
}
