//! Deterministic interpreter over byte-string inputs.
//!
//! Every executed instruction costs one step except markers, which are free.
//! A run ends on return from the entry function, on an `exit`, on a bug, or
//! when the step budget or the call-depth limit is exhausted.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::ir::{validate, BinOp, BlockId, InstrId, InstrKind, Operand, Program, Signature};
use crate::{Error, Result};

pub const DEFAULT_MAX_DEPTH: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub budget: u64,
    pub max_depth: usize,
    /// Record every executed instruction id, markers included.
    pub record_instructions: bool,
}

impl RunOptions {
    pub fn with_budget(budget: u64) -> Self {
        RunOptions {
            budget,
            max_depth: DEFAULT_MAX_DEPTH,
            record_instructions: false,
        }
    }

    pub fn recording(mut self) -> Self {
        self.record_instructions = true;
        self
    }
}

/// One stack frame of a bug report.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Frame {
    pub function: String,
    pub instr: InstrId,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Termination {
    NormalReturn,
    PrunedExit,
    /// `stack` is innermost first: the bug instruction, then each caller's
    /// call instruction.
    BugTriggered { bug: String, stack: Vec<Frame> },
    StepBudgetExhausted,
}

impl Termination {
    pub fn is_bug(&self) -> bool {
        matches!(self, Termination::BugTriggered { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionTrace {
    /// Block transitions with hit counts. Includes call entries
    /// (caller block → callee entry) and return resumptions
    /// (returning block → caller block).
    pub edges: BTreeMap<(BlockId, BlockId), u32>,
    pub targets_hit: Vec<String>,
    pub termination: Termination,
    pub steps: u64,
    pub blocks_covered: BTreeSet<BlockId>,
    /// Present when requested through [`RunOptions::record_instructions`].
    pub instructions: Option<Vec<InstrId>>,
}

#[derive(Debug, Clone, Copy)]
enum Src {
    Slot(u32),
    Imm(i64),
}

#[derive(Debug, Clone)]
enum Op {
    Const { dst: u32, value: i64 },
    Read { dst: u32 },
    Bin { dst: u32, op: BinOp, lhs: Src, rhs: Src },
    FnAddr { dst: u32, func: u32 },
    Call { dst: Option<u32>, func: u32, args: Vec<Src> },
    CallIndirect { dst: Option<u32>, sig: u32, pointer: u32, args: Vec<Src> },
    Br { cond: Src, then_block: u32, else_block: u32 },
    Jmp { block: u32 },
    Ret { value: Option<Src> },
    Exit { pruned: bool },
    Target { id: u32 },
    Bug { id: u32 },
    Marker,
}

#[derive(Debug, Clone)]
struct CompiledFn {
    name: String,
    sig: u32,
    slots: u32,
    /// Per block: (op, instruction id).
    blocks: Vec<Vec<(Op, InstrId)>>,
}

struct Activation {
    func: u32,
    block: u32,
    pc: usize,
    base: usize,
    /// Slot in this frame that receives the callee's result.
    pending_dst: Option<u32>,
}

/// A program compiled for execution. Cheap to share across threads.
#[derive(Debug, Clone)]
pub struct Interpreter {
    functions: Vec<CompiledFn>,
    entry: u32,
    target_names: Vec<String>,
    bug_names: Vec<String>,
}

impl Interpreter {
    /// Validates and compiles `p`.
    pub fn new(p: &Program) -> Result<Self> {
        if let Some(v) = validate(p).into_iter().next() {
            return Err(Error::Invalid(v.to_string()));
        }
        Ok(Self::compile(p))
    }

    fn compile(p: &Program) -> Self {
        let fn_index: HashMap<&str, u32> = p
            .functions
            .iter()
            .enumerate()
            .map(|(i, f)| (f.name.as_str(), i as u32))
            .collect();
        let mut sigs: Vec<Signature> = Vec::new();
        let mut sig_id = |s: Signature| -> u32 {
            match sigs.iter().position(|x| *x == s) {
                Some(i) => i as u32,
                None => {
                    sigs.push(s);
                    sigs.len() as u32 - 1
                }
            }
        };
        let mut target_names = Vec::new();
        let mut bug_names = Vec::new();
        let mut functions = Vec::new();
        for f in &p.functions {
            let mut slot_of: HashMap<&str, u32> = HashMap::new();
            for prm in &f.params {
                let n = slot_of.len() as u32;
                slot_of.insert(&prm.name, n);
            }
            for b in &f.blocks {
                for ins in &b.instructions {
                    if let Some(d) = ins.kind.dst() {
                        let n = slot_of.len() as u32;
                        slot_of.entry(d).or_insert(n);
                    }
                }
            }
            let label: HashMap<&str, u32> = f
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| (b.label.as_str(), i as u32))
                .collect();
            let src = |o: &Operand| match o {
                Operand::Imm(n) => Src::Imm(*n),
                Operand::Value(v) => Src::Slot(slot_of[v.as_str()]),
            };
            let mut blocks = Vec::new();
            for b in &f.blocks {
                let mut ops = Vec::new();
                for ins in &b.instructions {
                    let dst = |d: &Option<String>| d.as_ref().map(|d| slot_of[d.as_str()]);
                    let op = match &ins.kind {
                        InstrKind::Const { dst, value } => Op::Const {
                            dst: slot_of[dst.as_str()],
                            value: *value,
                        },
                        InstrKind::ReadInput { dst } => Op::Read {
                            dst: slot_of[dst.as_str()],
                        },
                        InstrKind::BinOp { dst, op, lhs, rhs } => Op::Bin {
                            dst: slot_of[dst.as_str()],
                            op: *op,
                            lhs: src(lhs),
                            rhs: src(rhs),
                        },
                        InstrKind::FnAddr { dst, function } => Op::FnAddr {
                            dst: slot_of[dst.as_str()],
                            func: fn_index[function.as_str()],
                        },
                        InstrKind::Call { dst: d, callee, args } => Op::Call {
                            dst: dst(d),
                            func: fn_index[callee.as_str()],
                            args: args.iter().map(src).collect(),
                        },
                        InstrKind::CallIndirect {
                            dst: d,
                            signature,
                            pointer,
                            args,
                        } => Op::CallIndirect {
                            dst: dst(d),
                            sig: sig_id(signature.clone()),
                            pointer: slot_of[pointer.as_str()],
                            args: args.iter().map(src).collect(),
                        },
                        InstrKind::Br {
                            cond,
                            then_label,
                            else_label,
                        } => Op::Br {
                            cond: src(cond),
                            then_block: label[then_label.as_str()],
                            else_block: label[else_label.as_str()],
                        },
                        InstrKind::Jmp { label: l } => Op::Jmp {
                            block: label[l.as_str()],
                        },
                        InstrKind::Ret { value } => Op::Ret {
                            value: value.as_ref().map(src),
                        },
                        InstrKind::Exit { pruned, .. } => Op::Exit { pruned: *pruned },
                        InstrKind::Target { id } => {
                            target_names.push(id.clone());
                            Op::Target {
                                id: target_names.len() as u32 - 1,
                            }
                        }
                        InstrKind::Bug { id, .. } => {
                            bug_names.push(id.clone());
                            Op::Bug {
                                id: bug_names.len() as u32 - 1,
                            }
                        }
                        InstrKind::Marker => Op::Marker,
                    };
                    ops.push((op, ins.id));
                }
                blocks.push(ops);
            }
            functions.push(CompiledFn {
                name: f.name.clone(),
                sig: 0,
                slots: slot_of.len() as u32,
                blocks,
            });
        }
        for (cf, f) in functions.iter_mut().zip(&p.functions) {
            cf.sig = sig_id(f.signature());
        }
        Interpreter {
            functions,
            entry: fn_index[p.entry.as_str()],
            target_names,
            bug_names,
        }
    }

    pub fn run(&self, input: &[u8], opts: &RunOptions) -> ExecutionTrace {
        let mut edges: BTreeMap<(BlockId, BlockId), u32> = BTreeMap::new();
        let mut blocks_covered = BTreeSet::new();
        let mut targets_hit = Vec::new();
        let mut instructions = opts.record_instructions.then(Vec::new);
        let mut steps = 0u64;
        let mut cursor = 0usize;
        let mut slots: Vec<i64> = vec![0; self.functions[self.entry as usize].slots as usize];
        let mut stack = vec![Activation {
            func: self.entry,
            block: 0,
            pc: 0,
            base: 0,
            pending_dst: None,
        }];
        blocks_covered.insert(BlockId::new(self.entry as usize, 0));

        let mut edge = |from: BlockId, to: BlockId, covered: &mut BTreeSet<BlockId>| {
            *edges.entry((from, to)).or_insert(0) += 1;
            covered.insert(to);
        };

        let termination = 'run: loop {
            let top = stack.len() - 1;
            let (func, block, pc, base) = {
                let a = &stack[top];
                (a.func, a.block, a.pc, a.base)
            };
            let cf = &self.functions[func as usize];
            let (op, id) = &cf.blocks[block as usize][pc];
            if let Some(trace) = instructions.as_mut() {
                trace.push(*id);
            }
            if matches!(op, Op::Marker) {
                stack[top].pc += 1;
                continue;
            }
            if steps >= opts.budget {
                break Termination::StepBudgetExhausted;
            }
            steps += 1;
            let get = |s: &Src, slots: &[i64]| match *s {
                Src::Imm(n) => n,
                Src::Slot(i) => slots[base + i as usize],
            };
            let here = BlockId::new(func as usize, block as usize);
            match op {
                Op::Const { dst, value } => slots[base + *dst as usize] = *value,
                Op::Read { dst } => {
                    let v = input.get(cursor).copied().unwrap_or(0);
                    cursor += 1;
                    slots[base + *dst as usize] = i64::from(v);
                }
                Op::Bin { dst, op, lhs, rhs } => {
                    let v = op.eval(get(lhs, &slots), get(rhs, &slots));
                    slots[base + *dst as usize] = v;
                }
                Op::FnAddr { dst, func } => slots[base + *dst as usize] = i64::from(*func),
                Op::Call { .. } | Op::CallIndirect { .. } => {
                    let (dst, callee, args) = match op {
                        Op::Call { dst, func, args } => (*dst, *func, args),
                        Op::CallIndirect {
                            dst,
                            sig,
                            pointer,
                            args,
                        } => {
                            let callee = slots[base + *pointer as usize] as u32;
                            assert_eq!(
                                self.functions[callee as usize].sig, *sig,
                                "indirect call {id} dispatched to a function of another signature"
                            );
                            (*dst, callee, args)
                        }
                        _ => unreachable!(),
                    };
                    if stack.len() >= opts.max_depth {
                        break Termination::StepBudgetExhausted;
                    }
                    let new_base = slots.len();
                    let callee_fn = &self.functions[callee as usize];
                    slots.resize(new_base + callee_fn.slots as usize, 0);
                    for (i, a) in args.iter().enumerate() {
                        slots[new_base + i] = get(a, &slots);
                    }
                    stack[top].pending_dst = dst;
                    stack.push(Activation {
                        func: callee,
                        block: 0,
                        pc: 0,
                        base: new_base,
                        pending_dst: None,
                    });
                    edge(here, BlockId::new(callee as usize, 0), &mut blocks_covered);
                    continue;
                }
                Op::Br {
                    cond,
                    then_block,
                    else_block,
                } => {
                    let to = if get(cond, &slots) != 0 {
                        *then_block
                    } else {
                        *else_block
                    };
                    stack[top].block = to;
                    stack[top].pc = 0;
                    edge(here, BlockId::new(func as usize, to as usize), &mut blocks_covered);
                    continue;
                }
                Op::Jmp { block: to } => {
                    stack[top].block = *to;
                    stack[top].pc = 0;
                    edge(here, BlockId::new(func as usize, *to as usize), &mut blocks_covered);
                    continue;
                }
                Op::Ret { value } => {
                    let v = value.as_ref().map(|s| get(s, &slots));
                    stack.pop();
                    slots.truncate(base);
                    let Some(caller) = stack.last_mut() else {
                        break Termination::NormalReturn;
                    };
                    if let (Some(d), Some(v)) = (caller.pending_dst.take(), v) {
                        slots[caller.base + d as usize] = v;
                    }
                    caller.pc += 1;
                    let back = BlockId::new(caller.func as usize, caller.block as usize);
                    edge(here, back, &mut blocks_covered);
                    continue;
                }
                Op::Exit { pruned } => {
                    break if *pruned {
                        Termination::PrunedExit
                    } else {
                        Termination::NormalReturn
                    };
                }
                Op::Target { id } => targets_hit.push(self.target_names[*id as usize].clone()),
                Op::Bug { id } => {
                    let mut frames = vec![Frame {
                        function: cf.name.clone(),
                        instr: *id_of(&stack, &self.functions, top),
                    }];
                    for i in (0..top).rev() {
                        frames.push(Frame {
                            function: self.functions[stack[i].func as usize].name.clone(),
                            instr: *id_of(&stack, &self.functions, i),
                        });
                    }
                    break 'run Termination::BugTriggered {
                        bug: self.bug_names[*id as usize].clone(),
                        stack: frames,
                    };
                }
                Op::Marker => unreachable!(),
            }
            stack[top].pc += 1;
        };

        ExecutionTrace {
            edges,
            targets_hit,
            termination,
            steps,
            blocks_covered,
            instructions,
        }
    }
}

fn id_of<'a>(stack: &[Activation], fns: &'a [CompiledFn], i: usize) -> &'a InstrId {
    let a = &stack[i];
    &fns[a.func as usize].blocks[a.block as usize][a.pc].1
}

/// Validates, compiles and runs `p` once.
pub fn interpret(p: &Program, input: &[u8], budget: u64) -> Result<ExecutionTrace> {
    Ok(Interpreter::new(p)?.run(input, &RunOptions::with_budget(budget)))
}

/// JSON view of a trace with block references rendered as `function:label`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceReport {
    pub termination: TerminationReport,
    pub steps: u64,
    pub targets_hit: Vec<String>,
    pub blocks_covered: Vec<String>,
    pub edges: Vec<EdgeReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerminationReport {
    NormalReturn,
    PrunedExit,
    BugTriggered { bug: String, stack: Vec<FrameReport> },
    StepBudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FrameReport {
    pub function: String,
    pub instr: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EdgeReport {
    pub from: String,
    pub to: String,
    pub hits: u32,
}

impl ExecutionTrace {
    pub fn report(&self, p: &Program) -> TraceReport {
        let termination = match &self.termination {
            Termination::NormalReturn => TerminationReport::NormalReturn,
            Termination::PrunedExit => TerminationReport::PrunedExit,
            Termination::StepBudgetExhausted => TerminationReport::StepBudgetExhausted,
            Termination::BugTriggered { bug, stack } => TerminationReport::BugTriggered {
                bug: bug.clone(),
                stack: stack
                    .iter()
                    .map(|f| FrameReport {
                        function: f.function.clone(),
                        instr: f.instr.to_string(),
                    })
                    .collect(),
            },
        };
        TraceReport {
            termination,
            steps: self.steps,
            targets_hit: self.targets_hit.clone(),
            blocks_covered: self.blocks_covered.iter().map(|&b| p.block_name(b)).collect(),
            edges: self
                .edges
                .iter()
                .map(|(&(a, b), &hits)| EdgeReport {
                    from: p.block_name(a),
                    to: p.block_name(b),
                    hits,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    fn run(src: &str, input: &[u8], budget: u64) -> ExecutionTrace {
        interpret(&parse_program(src).unwrap(), input, budget).unwrap()
    }

    const BRANCH: &str = "\
func main() -> void {
b0:
  v = read_input
  br v, bt, bf
bt:
  ret
bf:
  ret
}";

    #[test]
    fn zero_byte_takes_false_edge() {
        let t = run(BRANCH, &[0], 100);
        assert_eq!(t.edges.len(), 1);
        assert_eq!(
            t.edges.keys().next().unwrap(),
            &(BlockId::new(0, 0), BlockId::new(0, 2))
        );
        assert_eq!(t.termination, Termination::NormalReturn);
        assert_eq!(t.steps, 3);
        // Past the end of input reads yield 0.
        assert_eq!(run(BRANCH, &[], 100), t);
        assert!(run(BRANCH, &[7], 100).blocks_covered.contains(&BlockId::new(0, 1)));
    }

    #[test]
    fn budget_is_never_exceeded() {
        let src = "\
func main() -> void {
b0:
  jmp b0
}";
        let t = run(src, &[], 50);
        assert_eq!(t.termination, Termination::StepBudgetExhausted);
        assert_eq!(t.steps, 50);
        assert_eq!(t.edges[&(BlockId::new(0, 0), BlockId::new(0, 0))], 50);
    }

    #[test]
    fn recursion_hits_depth_limit() {
        let src = "\
func main() -> void {
b0:
  call main()
  ret
}";
        let t = run(src, &[], 1_000_000);
        assert_eq!(t.termination, Termination::StepBudgetExhausted);
        assert_eq!(t.steps as usize, DEFAULT_MAX_DEPTH);
    }

    #[test]
    fn calls_pass_arguments_and_results() {
        let src = "\
func twice(x: int) -> int {
b0:
  y = mul x, 2
  ret y
}
func apply(f: fn(int) -> int, x: int) -> int {
b0:
  r = call_indirect fn(int) -> int f(x)
  ret r
}
func main() -> void {
b0:
  p = fnaddr twice
  v = call apply(p, 21)
  c = eq v, 42
  br c, ok, no
ok:
  target t
  ret
no:
  ret
}";
        let t = run(src, &[], 100);
        assert_eq!(t.targets_hit, ["t"]);
        let p = parse_program(src).unwrap();
        let names: Vec<String> = t.blocks_covered.iter().map(|&b| p.block_name(b)).collect();
        assert_eq!(names, ["twice:b0", "apply:b0", "main:b0", "main:ok"]);
        // return resumptions are edges as well
        assert_eq!(t.edges[&(BlockId::new(0, 0), BlockId::new(1, 0))], 1);
        assert_eq!(t.edges[&(BlockId::new(1, 0), BlockId::new(2, 0))], 1);
    }

    #[test]
    fn bug_stack_is_innermost_first() {
        let src = "\
func inner() -> void {
b0:
  bug leak \"memory-leak\"
  ret
}
func main() -> void {
b0:
  call inner()
  ret
}";
        let t = run(src, &[], 100);
        let Termination::BugTriggered { bug, stack } = &t.termination else {
            panic!("{:?}", t.termination)
        };
        assert_eq!(bug, "leak");
        assert_eq!(
            stack,
            &[
                Frame {
                    function: "inner".into(),
                    instr: InstrId::Source(0)
                },
                Frame {
                    function: "main".into(),
                    instr: InstrId::Source(2)
                }
            ]
        );
    }

    #[test]
    fn user_exit_is_normal_and_markers_are_free() {
        let src = "func main() -> void {\nb0:\n  marker\n  exit 3\n}\n";
        let p = crate::ir::parse_program_with(src, crate::ir::ParseOptions { trusted: true })
            .unwrap();
        let t = Interpreter::new(&p)
            .unwrap()
            .run(&[], &RunOptions::with_budget(10).recording());
        assert_eq!(t.termination, Termination::NormalReturn);
        assert_eq!(t.steps, 1);
        assert_eq!(t.instructions.unwrap().len(), 2);
    }
}
