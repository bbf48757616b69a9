//! The intermediate representation analysed, rewritten and executed by the
//! rest of the crate.
//!
//! A [`Program`] is a list of typed functions made of labelled basic blocks.
//! Only control flow matters to the analyses, so the value language is
//! deliberately tiny: 64-bit integers and typed function pointers. The text
//! form (`.tir`) is line oriented; see [`parse_program`] and [`print_program`].

mod parse;
mod print;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

pub use parse::{parse_program, parse_program_with, ParseError, ParseOptions};
pub use print::print_program;
pub use validate::{validate, Violation};

/// A value type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Type {
    Int,
    FnPtr(Box<Signature>),
}

/// A function type. Equality is structural.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Signature {
    pub params: Vec<Type>,
    /// `None` is a void return.
    pub ret: Option<Type>,
}

impl Signature {
    pub fn new(params: Vec<Type>, ret: Option<Type>) -> Self {
        Signature { params, ret }
    }

    /// Nesting depth of function-pointer types; a signature with only `int`s
    /// has depth 1.
    pub fn depth(&self) -> usize {
        let inner = self
            .params
            .iter()
            .chain(self.ret.iter())
            .map(Type::depth)
            .max()
            .unwrap_or(0);
        inner + 1
    }
}

impl Type {
    pub fn fn_ptr(sig: Signature) -> Self {
        Type::FnPtr(Box::new(sig))
    }

    fn depth(&self) -> usize {
        match self {
            Type::Int => 0,
            Type::FnPtr(sig) => sig.depth(),
        }
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Int => f.write_str("int"),
            Type::FnPtr(sig) => write!(f, "{sig}"),
        }
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("fn(")?;
        for (i, p) in self.params.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{p}")?;
        }
        f.write_str(") -> ")?;
        match &self.ret {
            Some(t) => write!(f, "{t}"),
            None => f.write_str("void"),
        }
    }
}

/// Program-unique instruction reference.
///
/// Instructions written in source are numbered in textual order and keep
/// their number through marking and pruning. Instructions inserted by the
/// finder and pruner (markers, pruning exits) live in a separate numbering
/// that is recomputed in textual order whenever a pass rewrites the program,
/// so printing and re-parsing reproduces every id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InstrId {
    Source(u32),
    Synthetic(u32),
}

impl fmt::Display for InstrId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstrId::Source(n) => write!(f, "i{n}"),
            InstrId::Synthetic(n) => write!(f, "s{n}"),
        }
    }
}

impl std::str::FromStr for InstrId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("malformed instruction id `{s}`");
        let (kind, num) = s.split_at(s.len().min(1));
        let n: u32 = num.parse().map_err(|_| bad())?;
        match kind {
            "i" => Ok(InstrId::Source(n)),
            "s" => Ok(InstrId::Synthetic(n)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
    Ne,
    Lt,
    Gt,
    And,
    Or,
}

impl BinOp {
    pub const ALL: [BinOp; 10] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::Div,
        BinOp::Eq,
        BinOp::Ne,
        BinOp::Lt,
        BinOp::Gt,
        BinOp::And,
        BinOp::Or,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
            BinOp::Eq => "eq",
            BinOp::Ne => "ne",
            BinOp::Lt => "lt",
            BinOp::Gt => "gt",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Self> {
        BinOp::ALL.into_iter().find(|op| op.mnemonic() == s)
    }

    /// Wrapping integer semantics; division by zero yields 0, comparisons
    /// yield 0/1 and `and`/`or` are bitwise.
    pub fn eval(self, a: i64, b: i64) -> i64 {
        match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Div => {
                if b == 0 {
                    0
                } else {
                    a.wrapping_div(b)
                }
            }
            BinOp::Eq => (a == b) as i64,
            BinOp::Ne => (a != b) as i64,
            BinOp::Lt => (a < b) as i64,
            BinOp::Gt => (a > b) as i64,
            BinOp::And => a & b,
            BinOp::Or => a | b,
        }
    }
}

/// A value name or an integer immediate.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operand {
    Value(String),
    Imm(i64),
}

impl Operand {
    pub fn value(name: impl Into<String>) -> Self {
        Operand::Value(name.into())
    }

    pub fn as_value(&self) -> Option<&str> {
        match self {
            Operand::Value(v) => Some(v),
            Operand::Imm(_) => None,
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Value(v) => f.write_str(v),
            Operand::Imm(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum InstrKind {
    Const {
        dst: String,
        value: i64,
    },
    ReadInput {
        dst: String,
    },
    BinOp {
        dst: String,
        op: BinOp,
        lhs: Operand,
        rhs: Operand,
    },
    FnAddr {
        dst: String,
        function: String,
    },
    Call {
        dst: Option<String>,
        callee: String,
        args: Vec<Operand>,
    },
    CallIndirect {
        dst: Option<String>,
        signature: Signature,
        pointer: String,
        args: Vec<Operand>,
    },
    Br {
        cond: Operand,
        then_label: String,
        else_label: String,
    },
    Jmp {
        label: String,
    },
    Ret {
        value: Option<Operand>,
    },
    /// `pruned` exits are inserted by the pruner: they may sit anywhere in a
    /// block and terminate the run as a normal, non-crashing early exit.
    /// User exits are block terminators.
    Exit {
        code: i64,
        pruned: bool,
    },
    Target {
        id: String,
    },
    Bug {
        id: String,
        kind: Option<String>,
    },
    Marker,
}

impl InstrKind {
    pub fn is_terminator(&self) -> bool {
        matches!(
            self,
            InstrKind::Br { .. }
                | InstrKind::Jmp { .. }
                | InstrKind::Ret { .. }
                | InstrKind::Exit { pruned: false, .. }
        )
    }

    pub fn is_call(&self) -> bool {
        matches!(self, InstrKind::Call { .. } | InstrKind::CallIndirect { .. })
    }

    /// True for instructions that only passes may introduce.
    pub fn is_synthetic(&self) -> bool {
        matches!(self, InstrKind::Marker | InstrKind::Exit { pruned: true, .. })
    }

    pub fn dst(&self) -> Option<&str> {
        match self {
            InstrKind::Const { dst, .. }
            | InstrKind::ReadInput { dst }
            | InstrKind::BinOp { dst, .. }
            | InstrKind::FnAddr { dst, .. } => Some(dst),
            InstrKind::Call { dst, .. } | InstrKind::CallIndirect { dst, .. } => dst.as_deref(),
            _ => None,
        }
    }

    /// Value names read by this instruction, in operand order.
    pub fn uses(&self) -> Vec<&str> {
        let ops: Vec<&Operand> = match self {
            InstrKind::BinOp { lhs, rhs, .. } => vec![lhs, rhs],
            InstrKind::Call { args, .. } => args.iter().collect(),
            InstrKind::CallIndirect { args, pointer, .. } => {
                let mut v: Vec<&str> = vec![pointer.as_str()];
                v.extend(args.iter().filter_map(Operand::as_value));
                return v;
            }
            InstrKind::Br { cond, .. } => vec![cond],
            InstrKind::Ret { value } => value.iter().collect(),
            _ => Vec::new(),
        };
        ops.into_iter().filter_map(Operand::as_value).collect()
    }

    /// Intra-procedural successor labels of a terminator.
    pub fn successors(&self) -> Vec<&str> {
        match self {
            InstrKind::Br {
                then_label,
                else_label,
                ..
            } => vec![then_label.as_str(), else_label.as_str()],
            InstrKind::Jmp { label } => vec![label.as_str()],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub id: InstrId,
    pub kind: InstrKind,
}

impl Instruction {
    pub fn new(id: InstrId, kind: InstrKind) -> Self {
        Instruction { id, kind }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BasicBlock {
    pub label: String,
    pub instructions: Vec<Instruction>,
}

impl BasicBlock {
    pub fn terminator(&self) -> Option<&Instruction> {
        self.instructions.last().filter(|i| i.kind.is_terminator())
    }

    pub fn successors(&self) -> Vec<&str> {
        self.terminator()
            .map(|t| t.kind.successors())
            .unwrap_or_default()
    }

    pub fn has_marker(&self) -> bool {
        self.instructions
            .iter()
            .any(|i| matches!(i.kind, InstrKind::Marker))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Param {
    pub name: String,
    pub ty: Type,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Function {
    pub name: String,
    pub params: Vec<Param>,
    pub ret: Option<Type>,
    /// The first block is the entry block.
    pub blocks: Vec<BasicBlock>,
}

impl Function {
    pub fn signature(&self) -> Signature {
        Signature {
            params: self.params.iter().map(|p| p.ty.clone()).collect(),
            ret: self.ret.clone(),
        }
    }

    pub fn block_index(&self, label: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.label == label)
    }

    /// Successor block indices for every block, in block order. Unknown
    /// labels are skipped.
    pub fn successor_indices(&self) -> Vec<Vec<usize>> {
        let index: BTreeMap<&str, usize> = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (b.label.as_str(), i))
            .collect();
        self.blocks
            .iter()
            .map(|b| {
                let mut succ: Vec<usize> = b
                    .successors()
                    .into_iter()
                    .filter_map(|l| index.get(l).copied())
                    .collect();
                succ.dedup();
                succ
            })
            .collect()
    }

    pub fn predecessor_indices(&self) -> Vec<Vec<usize>> {
        let mut preds = vec![Vec::new(); self.blocks.len()];
        for (b, succ) in self.successor_indices().into_iter().enumerate() {
            for s in succ {
                if !preds[s].contains(&b) {
                    preds[s].push(b);
                }
            }
        }
        preds
    }
}

/// Function index and block index within that function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId {
    pub func: u32,
    pub block: u32,
}

impl BlockId {
    pub fn new(func: usize, block: usize) -> Self {
        BlockId {
            func: func as u32,
            block: block as u32,
        }
    }
}

/// Where an instruction lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstrLoc {
    pub func: usize,
    pub block: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Program {
    pub functions: Vec<Function>,
    pub entry: String,
    /// Targets named by a `targets` directive, used when no explicit target
    /// list is supplied.
    pub declared_targets: Vec<String>,
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_index(&self, name: &str) -> Option<usize> {
        self.functions.iter().position(|f| f.name == name)
    }

    pub fn block(&self, id: BlockId) -> &BasicBlock {
        &self.functions[id.func as usize].blocks[id.block as usize]
    }

    /// `function:label` rendering of a block id.
    pub fn block_name(&self, id: BlockId) -> String {
        let f = &self.functions[id.func as usize];
        format!("{}:{}", f.name, f.blocks[id.block as usize].label)
    }

    pub fn block_id(&self, function: &str, label: &str) -> Option<BlockId> {
        let fi = self.function_index(function)?;
        let bi = self.functions[fi].block_index(label)?;
        Some(BlockId::new(fi, bi))
    }

    pub fn block_ids(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.functions.iter().enumerate().flat_map(|(fi, f)| {
            (0..f.blocks.len()).map(move |bi| BlockId::new(fi, bi))
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.functions.iter().map(|f| f.blocks.len()).sum()
    }

    pub fn instructions(&self) -> impl Iterator<Item = (InstrLoc, &Instruction)> + '_ {
        self.functions.iter().enumerate().flat_map(|(fi, f)| {
            f.blocks.iter().enumerate().flat_map(move |(bi, b)| {
                b.instructions.iter().enumerate().map(move |(ii, ins)| {
                    (
                        InstrLoc {
                            func: fi,
                            block: bi,
                            index: ii,
                        },
                        ins,
                    )
                })
            })
        })
    }

    pub fn locate(&self, id: InstrId) -> Option<InstrLoc> {
        self.instructions()
            .find(|(_, ins)| ins.id == id)
            .map(|(loc, _)| loc)
    }

    pub fn instr(&self, loc: InstrLoc) -> &Instruction {
        &self.functions[loc.func].blocks[loc.block].instructions[loc.index]
    }

    /// Ids of all `target` instructions, in program order.
    pub fn target_ids(&self) -> Vec<String> {
        self.instructions()
            .filter_map(|(_, ins)| match &ins.kind {
                InstrKind::Target { id } => Some(id.clone()),
                _ => None,
            })
            .collect()
    }

    /// Renumbers synthetic instructions in textual order.
    pub fn renumber_synthetic(&mut self) {
        let mut next = 0u32;
        for f in &mut self.functions {
            for b in &mut f.blocks {
                for ins in &mut b.instructions {
                    if let InstrId::Synthetic(_) = ins.id {
                        ins.id = InstrId::Synthetic(next);
                        next += 1;
                    }
                }
            }
        }
    }

    /// Copy of the program with every marker and pruning exit removed.
    pub fn strip_synthetic(&self) -> Program {
        let mut p = self.clone();
        for f in &mut p.functions {
            for b in &mut f.blocks {
                b.instructions.retain(|i| !i.kind.is_synthetic());
            }
        }
        p
    }

    pub fn next_source_id(&self) -> u32 {
        self.instructions()
            .filter_map(|(_, i)| match i.id {
                InstrId::Source(n) => Some(n + 1),
                InstrId::Synthetic(_) => None,
            })
            .max()
            .unwrap_or(0)
    }
}

/// The target ids a campaign is directed at. Never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TargetSpec {
    ids: std::collections::BTreeSet<String>,
}

impl TargetSpec {
    pub fn new<I, S>(ids: I) -> crate::Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let ids: std::collections::BTreeSet<String> = ids.into_iter().map(Into::into).collect();
        if ids.is_empty() {
            return Err(crate::Error::EmptyTargets);
        }
        Ok(TargetSpec { ids })
    }

    /// Parses a comma separated list such as `t1,t2`.
    pub fn parse_list(list: &str) -> crate::Result<Self> {
        Self::new(list.split(',').map(str::trim).filter(|s| !s.is_empty()))
    }

    /// The program's declared targets, or every target it contains when
    /// nothing is declared.
    pub fn from_program(p: &Program) -> crate::Result<Self> {
        if p.declared_targets.is_empty() {
            Self::new(p.target_ids())
        } else {
            Self::new(p.declared_targets.iter().cloned())
        }
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> + '_ {
        self.ids.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Fails on the first id that names no `target` instruction.
    pub fn check(&self, p: &Program) -> crate::Result<()> {
        let present = p.target_ids();
        match self.iter().find(|id| !present.iter().any(|t| t == id)) {
            Some(missing) => Err(crate::Error::UnknownTarget(missing.to_string())),
            None => Ok(()),
        }
    }
}
