//! Relevant basic block finder.
//!
//! Starting from every target, the pass walks the inverse call graph
//! bottom-up to collect the functions that can reach a target, runs a
//! backward CFG search from each target and each target-reaching call site,
//! and marks every block from which a target is still reachable.
//!
//! Three additions keep the later pruning sound and useful:
//!
//! * Return continuations. A function returns into its callers; when the
//!   code after some call site of `g` can still reach a target, every block
//!   of `g` that can reach a `ret` is relevant too.
//! * Post-target region. Blocks forward-reachable from a target's block stay
//!   relevant so execution can continue past the target.
//! * Required functions. Callees invoked on relevant code before the marker
//!   point are kept whole, transitively.
//!
//! Each relevant block receives exactly one [`InstrKind::Marker`]. Blocks that
//! are kept entirely carry it as their last non-terminating instruction. In a
//! block whose tail can no longer reach a target, the marker goes right after
//! the last target-reaching call, which is where the pruner cuts execution.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::Serialize;

use crate::callgraph::InverseCallGraph;
use crate::ir::{
    BlockId, Function, InstrId, InstrKind, InstrLoc, Instruction, Program, TargetSpec,
};
use crate::Result;

/// A resolved `target` instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetLoc {
    pub id: String,
    pub instr: InstrId,
    pub loc: InstrLoc,
    pub function: String,
    pub block: String,
}

/// The `target` instructions named by `spec`, in program order.
pub fn find_all_targets(p: &Program, spec: &TargetSpec) -> Result<Vec<TargetLoc>> {
    spec.check(p)?;
    Ok(p.instructions()
        .filter_map(|(loc, ins)| match &ins.kind {
            InstrKind::Target { id } if spec.contains(id) => {
                let f = &p.functions[loc.func];
                Some(TargetLoc {
                    id: id.clone(),
                    instr: ins.id,
                    loc,
                    function: f.name.clone(),
                    block: f.blocks[loc.block].label.clone(),
                })
            }
            _ => None,
        })
        .collect())
}

/// Blocks of `f` from which `start` is reachable, `start` included.
pub fn inverse_dfs(f: &Function, start: usize) -> BTreeSet<usize> {
    inverse_dfs_with(&f.predecessor_indices(), start)
}

fn inverse_dfs_with(preds: &[Vec<usize>], start: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(b) = stack.pop() {
        for &p in &preds[b] {
            if seen.insert(p) {
                stack.push(p);
            }
        }
    }
    seen
}

fn forward_closure(succs: &[Vec<usize>], start: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(b) = stack.pop() {
        for &s in &succs[b] {
            if seen.insert(s) {
                stack.push(s);
            }
        }
    }
    seen
}

/// Output of the finder pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkedProgram {
    /// The input program with one marker per relevant block.
    pub program: Program,
    pub targets: TargetSpec,
    pub relevant_blocks: BTreeSet<BlockId>,
    pub required_functions: BTreeSet<String>,
    pub target_reaching_functions: BTreeSet<String>,
    /// Functions with a call site whose continuation can still reach a
    /// target.
    pub returning_functions: BTreeSet<String>,
}

impl MarkedProgram {
    /// Rebuilds the marking facts from a program that already carries
    /// markers. Relevant blocks are exactly the blocks holding a marker;
    /// function-level sets are not recoverable from the text and are left
    /// empty.
    pub fn from_marked(program: Program, targets: TargetSpec) -> Result<Self> {
        targets.check(&program)?;
        let relevant_blocks = program
            .block_ids()
            .filter(|&b| program.block(b).has_marker())
            .collect();
        Ok(MarkedProgram {
            program,
            targets,
            relevant_blocks,
            required_functions: BTreeSet::new(),
            target_reaching_functions: BTreeSet::new(),
            returning_functions: BTreeSet::new(),
        })
    }

    pub fn report(&self, icg: &InverseCallGraph) -> FinderReport {
        let p = &self.program;
        FinderReport {
            targets: self.targets.iter().map(str::to_string).collect(),
            relevant_blocks: self
                .relevant_blocks
                .iter()
                .map(|&b| p.block_name(b))
                .collect(),
            blocks_total: p.num_blocks(),
            required_functions: self.required_functions.iter().cloned().collect(),
            target_reaching_functions: self.target_reaching_functions.iter().cloned().collect(),
            returning_functions: self.returning_functions.iter().cloned().collect(),
            indirect_sites: icg
                .sites()
                .iter()
                .filter(|s| s.is_indirect())
                .map(|s| (s.instr.to_string(), s.callees().len()))
                .collect(),
            warnings: icg.warnings().to_vec(),
        }
    }
}

/// JSON report written by `analyze --emit-report`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FinderReport {
    pub targets: Vec<String>,
    pub relevant_blocks: Vec<String>,
    pub blocks_total: usize,
    pub required_functions: Vec<String>,
    pub target_reaching_functions: Vec<String>,
    pub returning_functions: Vec<String>,
    /// Candidate count per indirect call site.
    pub indirect_sites: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

/// Runs the finder pass. Existing markers and pruning exits in `p` are
/// dropped first, so the pass is idempotent.
pub fn find_relevant_blocks(
    p: &Program,
    icg: &InverseCallGraph,
    spec: &TargetSpec,
) -> Result<MarkedProgram> {
    let base = p.strip_synthetic();
    let targets = find_all_targets(&base, spec)?;
    let ctx = Context::new(&base, icg, spec);

    // Functions that can reach a target: the targets' parents and every
    // transitive caller.
    let mut reaching_fns: BTreeSet<usize> = BTreeSet::new();
    let mut work: VecDeque<usize> = VecDeque::new();
    for t in &targets {
        if reaching_fns.insert(t.loc.func) {
            work.push_back(t.loc.func);
        }
    }
    while let Some(f) = work.pop_front() {
        for site in icg.callers_of(&base.functions[f].name) {
            let Some(&caller) = ctx.fn_index.get(site.caller.as_str()) else {
                continue;
            };
            if reaching_fns.insert(caller) {
                work.push_back(caller);
            }
        }
    }

    let mut analysis = Analysis {
        ctx: &ctx,
        reaching_fns,
        rel: vec![BTreeSet::new(); base.functions.len()],
        returning: BTreeSet::new(),
    };

    // Blocks leading to a target or to a target-reaching call.
    for t in &targets {
        let found = inverse_dfs_with(&ctx.preds[t.loc.func], t.loc.block);
        analysis.rel[t.loc.func].extend(found);
    }
    for &f in &analysis.reaching_fns.clone() {
        for site in icg.callers_of(&base.functions[f].name) {
            let Some(loc) = ctx.locs.get(&site.instr) else {
                continue;
            };
            let found = inverse_dfs_with(&ctx.preds[loc.func], loc.block);
            analysis.rel[loc.func].extend(found);
        }
    }

    analysis.close_returns();

    let mut fwd: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); base.functions.len()];
    for t in &targets {
        let found = forward_closure(&ctx.succs[t.loc.func], t.loc.block);
        fwd[t.loc.func].extend(found);
    }

    let required = analysis.required_functions(&fwd);

    let mut relevant = BTreeSet::new();
    let mut marks: Vec<(BlockId, usize)> = Vec::new();
    for (fi, f) in base.functions.iter().enumerate() {
        for bi in 0..f.blocks.len() {
            let id = BlockId::new(fi, bi);
            match analysis.classify(fi, bi, &fwd, &required) {
                BlockClass::Irrelevant => continue,
                BlockClass::Kept => {
                    marks.push((id, f.blocks[bi].instructions.len() - 1));
                }
                BlockClass::Partial { boundary } => marks.push((id, boundary + 1)),
            }
            relevant.insert(id);
        }
    }

    let mut program = base.clone();
    for (id, at) in marks {
        let block = &mut program.functions[id.func as usize].blocks[id.block as usize];
        block
            .instructions
            .insert(at, Instruction::new(InstrId::Synthetic(0), InstrKind::Marker));
    }
    program.renumber_synthetic();
    program.declared_targets = spec.iter().map(str::to_string).collect();

    let names = |set: &BTreeSet<usize>| -> BTreeSet<String> {
        set.iter().map(|&f| base.functions[f].name.clone()).collect()
    };
    Ok(MarkedProgram {
        program,
        targets: spec.clone(),
        relevant_blocks: relevant,
        required_functions: names(&required),
        target_reaching_functions: names(&analysis.reaching_fns),
        returning_functions: names(&analysis.returning),
    })
}

struct Context<'a> {
    p: &'a Program,
    icg: &'a InverseCallGraph,
    spec: &'a TargetSpec,
    fn_index: HashMap<&'a str, usize>,
    locs: HashMap<InstrId, InstrLoc>,
    preds: Vec<Vec<Vec<usize>>>,
    succs: Vec<Vec<Vec<usize>>>,
}

impl<'a> Context<'a> {
    fn new(p: &'a Program, icg: &'a InverseCallGraph, spec: &'a TargetSpec) -> Self {
        Context {
            p,
            icg,
            spec,
            fn_index: p
                .functions
                .iter()
                .enumerate()
                .map(|(i, f)| (f.name.as_str(), i))
                .collect(),
            locs: p.instructions().map(|(l, i)| (i.id, l)).collect(),
            preds: p.functions.iter().map(Function::predecessor_indices).collect(),
            succs: p.functions.iter().map(Function::successor_indices).collect(),
        }
    }

    /// Function indices a call instruction may invoke.
    fn callees(&self, ins: &Instruction) -> Vec<usize> {
        self.icg
            .site(ins.id)
            .map(|s| {
                s.callees()
                    .into_iter()
                    .filter_map(|c| self.fn_index.get(c).copied())
                    .collect()
            })
            .unwrap_or_default()
    }
}

enum BlockClass {
    Irrelevant,
    Kept,
    /// Relevant up to and including the instruction at `boundary`.
    Partial {
        boundary: usize,
    },
}

struct Analysis<'c, 'a> {
    ctx: &'c Context<'a>,
    reaching_fns: BTreeSet<usize>,
    /// Per function: blocks whose entry can still reach a target.
    rel: Vec<BTreeSet<usize>>,
    returning: BTreeSet<usize>,
}

impl Analysis<'_, '_> {
    fn is_reaching_call(&self, ins: &Instruction) -> bool {
        ins.kind.is_call()
            && self
                .ctx
                .callees(ins)
                .iter()
                .any(|c| self.reaching_fns.contains(c))
    }

    /// Target or target-reaching call.
    fn reaches_here(&self, ins: &Instruction) -> bool {
        match &ins.kind {
            InstrKind::Target { id } => self.ctx.spec.contains(id),
            _ => self.is_reaching_call(ins),
        }
    }

    /// Whether control leaving block `b` of `f` through its terminator can
    /// still reach a target.
    fn terminator_reaches(&self, f: usize, b: usize) -> bool {
        let block = &self.ctx.p.functions[f].blocks[b];
        match block.terminator().map(|t| &t.kind) {
            Some(InstrKind::Ret { .. }) => self.returning.contains(&f),
            Some(_) => self.ctx.succs[f][b].iter().any(|s| self.rel[f].contains(s)),
            None => false,
        }
    }

    /// Whether the code after call instruction `loc` can reach a target.
    fn continuation_reaches(&self, loc: InstrLoc) -> bool {
        let block = &self.ctx.p.functions[loc.func].blocks[loc.block];
        block.instructions[loc.index + 1..]
            .iter()
            .any(|ins| self.reaches_here(ins))
            || self.terminator_reaches(loc.func, loc.block)
    }

    /// Grows `returning` and `rel` until no call-site continuation changes
    /// status.
    fn close_returns(&mut self) {
        let p = self.ctx.p;
        loop {
            let mut changed = false;
            for (g, func) in p.functions.iter().enumerate() {
                if self.returning.contains(&g) {
                    continue;
                }
                let resumes = self.ctx.icg.callers_of(&func.name).any(|site| {
                    self.ctx
                        .locs
                        .get(&site.instr)
                        .is_some_and(|&loc| self.continuation_reaches(loc))
                });
                if !resumes {
                    continue;
                }
                self.returning.insert(g);
                changed = true;
                for (b, block) in func.blocks.iter().enumerate() {
                    if matches!(
                        block.terminator().map(|t| &t.kind),
                        Some(InstrKind::Ret { .. })
                    ) {
                        let found = inverse_dfs_with(&self.ctx.preds[g], b);
                        self.rel[g].extend(found);
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }

    fn classify(
        &self,
        f: usize,
        b: usize,
        fwd: &[BTreeSet<usize>],
        required: &BTreeSet<usize>,
    ) -> BlockClass {
        if fwd[f].contains(&b) || required.contains(&f) || self.terminator_reaches(f, b) {
            return BlockClass::Kept;
        }
        if !self.rel[f].contains(&b) {
            return BlockClass::Irrelevant;
        }
        let block = &self.ctx.p.functions[f].blocks[b];
        let boundary = block
            .instructions
            .iter()
            .rposition(|ins| self.reaches_here(ins))
            .expect("a relevant block whose exit cannot reach a target holds a reaching call");
        BlockClass::Partial { boundary }
    }

    /// Callees executed on relevant code ahead of the marker point, closed
    /// transitively over their own callees.
    fn required_functions(&self, fwd: &[BTreeSet<usize>]) -> BTreeSet<usize> {
        let p = self.ctx.p;
        let mut required = BTreeSet::new();
        loop {
            let mut next = required.clone();
            for (fi, f) in p.functions.iter().enumerate() {
                for (bi, block) in f.blocks.iter().enumerate() {
                    let scan = match self.classify(fi, bi, fwd, &required) {
                        BlockClass::Irrelevant => continue,
                        BlockClass::Kept => &block.instructions[..],
                        BlockClass::Partial { boundary } => &block.instructions[..boundary],
                    };
                    for ins in scan.iter().filter(|i| i.kind.is_call()) {
                        next.extend(self.ctx.callees(ins));
                    }
                }
            }
            if next == required {
                return required;
            }
            required = next;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    fn marked(src: &str, targets: &str) -> MarkedProgram {
        let p = parse_program(src).unwrap();
        let icg = InverseCallGraph::build(&p);
        find_relevant_blocks(&p, &icg, &TargetSpec::parse_list(targets).unwrap()).unwrap()
    }

    fn labels(m: &MarkedProgram, func: &str) -> Vec<String> {
        let fi = m.program.function_index(func).unwrap();
        m.relevant_blocks
            .iter()
            .filter(|b| b.func as usize == fi)
            .map(|&b| m.program.block(b).label.clone())
            .collect()
    }

    const DIAMOND: &str = "\
func main() -> void {
b0:
  c = read_input
  br c, b1, b2
b1:
  jmp b3
b2:
  jmp b3
b3:
  ret
}";

    #[test]
    fn inverse_dfs_diamond() {
        let p = parse_program(DIAMOND).unwrap();
        let f = &p.functions[0];
        assert_eq!(inverse_dfs(f, 3), BTreeSet::from([0, 1, 2, 3]));
        assert_eq!(inverse_dfs(f, 0), BTreeSet::from([0]));
    }

    #[test]
    fn inverse_dfs_entry_on_cycle() {
        let src = "\
func main() -> void {
b0:
  c = read_input
  br c, b1, b2
b1:
  jmp b0
b2:
  ret
}";
        let p = parse_program(src).unwrap();
        assert_eq!(inverse_dfs(&p.functions[0], 0), BTreeSet::from([0, 1]));
    }

    #[test]
    fn find_targets_and_unknown_id() {
        let src = "\
func f() -> void {
b0:
  target t2
  ret
}
func main() -> void {
b0:
  target t1
  call f()
  ret
}";
        let p = parse_program(src).unwrap();
        let one = find_all_targets(&p, &TargetSpec::parse_list("t1").unwrap()).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].function, "main");
        let both = find_all_targets(&p, &TargetSpec::parse_list("t1,t2").unwrap()).unwrap();
        assert_eq!(both.len(), 2);
        assert_ne!(both[0].function, both[1].function);
        let err = find_all_targets(&p, &TargetSpec::parse_list("nope").unwrap()).unwrap_err();
        assert!(matches!(err, crate::Error::UnknownTarget(id) if id == "nope"));
    }

    #[test]
    fn single_function_target_in_entry() {
        let src = "\
func main() -> void {
b0:
  target t
  c = read_input
  br c, b1, b2
b1:
  ret
b2:
  ret
}";
        let m = marked(src, "t");
        assert_eq!(labels(&m, "main"), ["b0", "b1", "b2"]);
        assert_eq!(m.target_reaching_functions, BTreeSet::from(["main".into()]));
        assert!(m.returning_functions.is_empty());
    }

    #[test]
    fn unrelated_branch_is_irrelevant_and_marker_follows_call() {
        let src = "\
func good() -> void {
b0:
  target t
  ret
}
func bad() -> void {
b0:
  ret
}
func main() -> int {
b0:
  c = read_input
  br c, b1, b2
b1:
  call good()
  v = const 1
  ret v
b2:
  call bad()
  ret 0
}";
        let m = marked(src, "t");
        assert_eq!(labels(&m, "main"), ["b0", "b1"]);
        assert!(labels(&m, "bad").is_empty());
        let b1 = &m.program.functions[2].blocks[1].instructions;
        assert!(matches!(b1[0].kind, InstrKind::Call { .. }));
        assert!(matches!(b1[1].kind, InstrKind::Marker));
    }

    #[test]
    fn loop_around_call_keeps_block_and_callee_returns() {
        let src = "\
func t_fn() -> void {
b0:
  c = read_input
  br c, hit, miss
hit:
  target t
  ret
miss:
  ret
}
func main() -> void {
b0:
  call t_fn()
  d = read_input
  br d, b0, out
out:
  ret
}";
        let m = marked(src, "t");
        // `miss` returns into a loop that can call t_fn again.
        assert_eq!(labels(&m, "t_fn"), ["b0", "hit", "miss"]);
        assert!(m.returning_functions.contains("t_fn"));
        assert_eq!(labels(&m, "main"), ["b0"]);
    }

    #[test]
    fn required_callees_are_transitive() {
        let src = "\
func leaf() -> void {
b0:
  c = read_input
  br c, b1, b2
b1:
  exit 1
b2:
  ret
}
func setup() -> void {
b0:
  call leaf()
  ret
}
func t_fn() -> void {
b0:
  target t
  ret
}
func main() -> void {
b0:
  call setup()
  call t_fn()
  x = const 0
  ret
}";
        let m = marked(src, "t");
        assert_eq!(
            m.required_functions,
            BTreeSet::from(["leaf".to_string(), "setup".to_string()])
        );
        // leaf:b1 exits, so only the whole-function rule keeps it.
        assert!(labels(&m, "leaf").contains(&"b1".to_string()));
    }

    #[test]
    fn pass_is_idempotent() {
        let src = "\
func f(x: int) -> int {
b0:
  target t
  ret x
}
func g(x: int) -> int {
b0:
  ret 0
}
func main() -> int {
b0:
  v = read_input
  br v, b1, b2
b1:
  p = fnaddr f
  r = call_indirect fn(int) -> int p(v)
  w = add r, 1
  ret w
b2:
  ret 0
}";
        let p = parse_program(src).unwrap();
        let icg = InverseCallGraph::build(&p);
        let spec = TargetSpec::parse_list("t").unwrap();
        let once = find_relevant_blocks(&p, &icg, &spec).unwrap();
        let twice = find_relevant_blocks(&once.program, &icg, &spec).unwrap();
        assert_eq!(once, twice);
        assert_eq!(labels(&once, "g"), Vec::<String>::new());
        assert_eq!(labels(&once, "main"), ["b0", "b1"]);
    }
}
