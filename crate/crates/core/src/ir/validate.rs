use std::collections::{HashMap, HashSet};
use std::fmt;

use petgraph::algo::dominators;
use petgraph::graph::{DiGraph, NodeIndex};

use super::{Function, InstrId, InstrKind, Operand, Program, Signature, Type};

/// One broken invariant. `instr` names the offending instruction whenever
/// the problem is attached to one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub function: Option<String>,
    pub block: Option<String>,
    pub instr: Option<InstrId>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.function, &self.block, &self.instr) {
            (Some(func), Some(b), Some(i)) => write!(f, "{func}:{b} ({i}): ")?,
            (Some(func), Some(b), None) => write!(f, "{func}:{b}: ")?,
            (Some(func), None, _) => write!(f, "{func}: ")?,
            _ => {}
        }
        f.write_str(&self.message)
    }
}

/// Checks every structural and typing invariant of a program. An empty
/// result means the program is well formed.
pub fn validate(p: &Program) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |function: Option<&str>, block: Option<&str>, instr, message: String| {
        out.push(Violation {
            function: function.map(str::to_string),
            block: block.map(str::to_string),
            instr,
            message,
        })
    };

    let mut signatures: HashMap<&str, Signature> = HashMap::new();
    for f in &p.functions {
        if signatures.insert(&f.name, f.signature()).is_some() {
            push(
                Some(&f.name),
                None,
                None,
                format!("duplicate function `{}`", f.name),
            );
        }
    }
    match p.function(&p.entry) {
        None => push(
            None,
            None,
            None,
            format!("entry function `{}` does not exist", p.entry),
        ),
        Some(f) if !f.params.is_empty() => push(
            Some(&f.name),
            None,
            None,
            "entry function must take no parameters".to_string(),
        ),
        Some(_) => {}
    }

    let mut ids = HashSet::new();
    let mut targets = HashSet::new();
    let mut bugs = HashSet::new();
    for (loc, ins) in p.instructions() {
        let f = &p.functions[loc.func];
        let b = &f.blocks[loc.block];
        if !ids.insert(ins.id) {
            push(
                Some(&f.name),
                Some(&b.label),
                Some(ins.id),
                format!("duplicate instruction id {}", ins.id),
            );
        }
        match &ins.kind {
            InstrKind::Target { id } if !targets.insert(id.as_str()) => push(
                Some(&f.name),
                Some(&b.label),
                Some(ins.id),
                format!("duplicate target id `{id}`"),
            ),
            InstrKind::Bug { id, .. } if !bugs.insert(id.as_str()) => push(
                Some(&f.name),
                Some(&b.label),
                Some(ins.id),
                format!("duplicate bug id `{id}`"),
            ),
            _ => {}
        }
    }
    for t in &p.declared_targets {
        if !targets.contains(t.as_str()) {
            push(
                None,
                None,
                None,
                format!("declared target `{t}` does not exist"),
            );
        }
    }

    for f in &p.functions {
        validate_function(f, &signatures, &mut out);
    }
    out
}

fn validate_function(f: &Function, sigs: &HashMap<&str, Signature>, out: &mut Vec<Violation>) {
    let mut push = |block: Option<&str>, instr: Option<InstrId>, message: String| {
        out.push(Violation {
            function: Some(f.name.clone()),
            block: block.map(str::to_string),
            instr,
            message,
        })
    };

    if f.blocks.is_empty() {
        push(None, None, "function has no blocks".to_string());
        return;
    }
    let mut labels: HashMap<&str, usize> = HashMap::new();
    for (bi, b) in f.blocks.iter().enumerate() {
        if labels.insert(&b.label, bi).is_some() {
            push(
                Some(&b.label),
                None,
                format!("duplicate block `{}`", b.label),
            );
        }
    }

    // Value definitions: name -> (type, defining block, index); params have
    // no defining block.
    let mut defs: HashMap<&str, (Option<Type>, Option<(usize, usize)>)> = HashMap::new();
    for p in &f.params {
        if defs.insert(&p.name, (Some(p.ty.clone()), None)).is_some() {
            push(None, None, format!("duplicate parameter `{}`", p.name));
        }
    }
    for (bi, b) in f.blocks.iter().enumerate() {
        for (ii, ins) in b.instructions.iter().enumerate() {
            let Some(dst) = ins.kind.dst() else { continue };
            let ty = match &ins.kind {
                InstrKind::Const { .. } | InstrKind::ReadInput { .. } | InstrKind::BinOp { .. } => {
                    Some(Type::Int)
                }
                InstrKind::FnAddr { function, .. } => {
                    sigs.get(function.as_str()).cloned().map(Type::fn_ptr)
                }
                InstrKind::Call { callee, .. } => {
                    sigs.get(callee.as_str()).and_then(|s| s.ret.clone())
                }
                InstrKind::CallIndirect { signature, .. } => signature.ret.clone(),
                _ => None,
            };
            if defs.insert(dst, (ty, Some((bi, ii)))).is_some() {
                push(
                    Some(&b.label),
                    Some(ins.id),
                    format!("value `{dst}` assigned more than once"),
                );
            }
        }
    }

    let dom = Dominance::new(f);
    let type_of = |name: &str| defs.get(name).and_then(|(t, _)| t.clone());

    for (bi, b) in f.blocks.iter().enumerate() {
        if b.instructions.is_empty() {
            push(Some(&b.label), None, "empty block".to_string());
            continue;
        }
        let last = b.instructions.len() - 1;
        for (ii, ins) in b.instructions.iter().enumerate() {
            let mut bad = |message: String| push(Some(&b.label), Some(ins.id), message);
            if ins.kind.is_terminator() && ii != last {
                bad("terminator is not the last instruction of its block".to_string());
            }
            if ii == last && !ins.kind.is_terminator() {
                bad("block does not end in a terminator".to_string());
            }

            for used in ins.kind.uses() {
                match defs.get(used) {
                    None => bad(format!("use of undefined value `{used}`")),
                    Some((_, Some((db, di)))) => {
                        let ok = if *db == bi {
                            *di < ii
                        } else {
                            dom.strictly_dominates(*db, bi)
                        };
                        if !ok {
                            bad(format!("value `{used}` used before its definition"));
                        }
                    }
                    Some((_, None)) => {}
                }
            }

            let expect_int = |op: &Operand, what: &str, bad: &mut dyn FnMut(String)| {
                if let Operand::Value(v) = op {
                    if let Some(t) = type_of(v) {
                        if t != Type::Int {
                            bad(format!("{what} `{v}` has type {t}, expected int"));
                        }
                    }
                }
            };
            let check_args = |sig: &Signature, args: &[Operand], bad: &mut dyn FnMut(String)| {
                if sig.params.len() != args.len() {
                    bad(format!(
                        "call passes {} arguments, signature {sig} takes {}",
                        args.len(),
                        sig.params.len()
                    ));
                    return;
                }
                for (a, want) in args.iter().zip(&sig.params) {
                    let got = match a {
                        Operand::Imm(_) => Some(Type::Int),
                        Operand::Value(v) => type_of(v),
                    };
                    if let Some(got) = got {
                        if &got != want {
                            bad(format!("argument `{a}` has type {got}, expected {want}"));
                        }
                    }
                }
            };

            match &ins.kind {
                InstrKind::BinOp { lhs, rhs, .. } => {
                    expect_int(lhs, "operand", &mut bad);
                    expect_int(rhs, "operand", &mut bad);
                }
                InstrKind::FnAddr { function, .. } => {
                    if !sigs.contains_key(function.as_str()) {
                        bad(format!("unknown function `{function}`"));
                    }
                }
                InstrKind::Call { dst, callee, args } => match sigs.get(callee.as_str()) {
                    None => bad(format!("unknown function `{callee}`")),
                    Some(sig) => {
                        check_args(sig, args, &mut bad);
                        if dst.is_some() && sig.ret.is_none() {
                            bad(format!("call result of void function `{callee}` assigned"));
                        }
                    }
                },
                InstrKind::CallIndirect {
                    dst,
                    signature,
                    pointer,
                    args,
                } => {
                    if let Some(t) = type_of(pointer) {
                        let want = Type::fn_ptr(signature.clone());
                        if t != want {
                            bad(format!(
                                "indirect call pointer `{pointer}` has type {t}, site expects {want}"
                            ));
                        }
                    }
                    check_args(signature, args, &mut bad);
                    if dst.is_some() && signature.ret.is_none() {
                        bad("result of void indirect call assigned".to_string());
                    }
                }
                InstrKind::Br {
                    cond,
                    then_label,
                    else_label,
                } => {
                    expect_int(cond, "branch condition", &mut bad);
                    for l in [then_label, else_label] {
                        if !labels.contains_key(l.as_str()) {
                            bad(format!("unknown label `{l}`"));
                        }
                    }
                }
                InstrKind::Jmp { label } => {
                    if !labels.contains_key(label.as_str()) {
                        bad(format!("unknown label `{label}`"));
                    }
                }
                InstrKind::Ret { value } => match (value, &f.ret) {
                    (None, None) => {}
                    (Some(_), None) | (None, Some(_)) => bad(format!(
                        "return arity mismatch: function returns {}",
                        f.ret
                            .as_ref()
                            .map_or_else(|| "void".to_string(), |t| t.to_string())
                    )),
                    (Some(v), Some(want)) => {
                        let got = match v {
                            Operand::Imm(_) => Some(Type::Int),
                            Operand::Value(name) => type_of(name),
                        };
                        if let Some(got) = got {
                            if &got != want {
                                bad(format!("returns {got}, function returns {want}"));
                            }
                        }
                    }
                },
                _ => {}
            }
        }
    }
}

struct Dominance {
    /// `dominators[b]` lists every block dominating `b`; `None` when `b` is
    /// unreachable from the entry block.
    dominators: Vec<Option<HashSet<usize>>>,
}

impl Dominance {
    fn new(f: &Function) -> Self {
        let mut g: DiGraph<(), ()> = DiGraph::new();
        let nodes: Vec<NodeIndex> = f.blocks.iter().map(|_| g.add_node(())).collect();
        for (b, succ) in f.successor_indices().into_iter().enumerate() {
            for s in succ {
                g.add_edge(nodes[b], nodes[s], ());
            }
        }
        let doms = dominators::simple_fast(&g, nodes[0]);
        let dominators = nodes
            .iter()
            .map(|&n| {
                doms.dominators(n)
                    .map(|it| it.map(|d| d.index()).collect::<HashSet<_>>())
            })
            .collect();
        Dominance { dominators }
    }

    fn strictly_dominates(&self, a: usize, b: usize) -> bool {
        match &self.dominators[b] {
            // Unreachable code never executes.
            None => true,
            Some(ds) => a != b && ds.contains(&a),
        }
    }
}
