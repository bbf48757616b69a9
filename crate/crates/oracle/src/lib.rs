//! Exhaustive reachability oracle over instruction points.
//!
//! Builds a two-layer graph whose nodes are `(layer, function, block,
//! index)` program points and answers which points can still reach a target
//! instruction. It shares nothing with the finder beyond the IR data types:
//! indirect callees are found by comparing signatures directly and block
//! successors are read off the terminators.
//!
//! Layer `Up` models a context-free continuation: a `ret` may resume after
//! any call site of the function. Layer `Down` is entered by descending into
//! a callee; returns there are not edges because the caller's step-over edge
//! already models the resumption.

use std::collections::{BTreeSet, HashMap, VecDeque};

use pathprune_core::ir::{BlockId, InstrKind, Program, TargetSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Layer {
    Up,
    Down,
}

type Point = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleResult {
    /// Blocks whose entry reaches a target in the `Up` layer.
    pub reaching: BTreeSet<BlockId>,
    /// Blocks forward-reachable from a target's block in its own function.
    pub post_target: BTreeSet<BlockId>,
    pub required: BTreeSet<String>,
    pub relevant: BTreeSet<BlockId>,
}

fn successors(p: &Program, f: usize, b: usize) -> Vec<usize> {
    let func = &p.functions[f];
    let label = |l: &str| func.blocks.iter().position(|x| x.label == l).unwrap();
    match &func.blocks[b].instructions.last().unwrap().kind {
        InstrKind::Br {
            then_label,
            else_label,
            ..
        } => vec![label(then_label), label(else_label)],
        InstrKind::Jmp { label: l } => vec![label(l)],
        _ => vec![],
    }
}

fn callees(p: &Program, kind: &InstrKind) -> Vec<usize> {
    match kind {
        InstrKind::Call { callee, .. } => p
            .functions
            .iter()
            .position(|f| &f.name == callee)
            .into_iter()
            .collect(),
        InstrKind::CallIndirect { signature, .. } => p
            .functions
            .iter()
            .enumerate()
            .filter(|(_, f)| {
                f.ret == signature.ret
                    && f.params.len() == signature.params.len()
                    && f.params.iter().zip(&signature.params).all(|(a, b)| a.ty == *b)
            })
            .map(|(i, _)| i)
            .collect(),
        _ => vec![],
    }
}

struct Graph {
    /// Reverse edges.
    preds: HashMap<(Layer, Point), Vec<(Layer, Point)>>,
}

impl Graph {
    fn build(p: &Program) -> Self {
        let mut sites_of: HashMap<usize, Vec<Point>> = HashMap::new();
        for (f, func) in p.functions.iter().enumerate() {
            for (b, block) in func.blocks.iter().enumerate() {
                for (i, ins) in block.instructions.iter().enumerate() {
                    for g in callees(p, &ins.kind) {
                        sites_of.entry(g).or_default().push((f, b, i));
                    }
                }
            }
        }
        let mut preds: HashMap<(Layer, Point), Vec<(Layer, Point)>> = HashMap::new();
        let mut edge = |from: (Layer, Point), to: (Layer, Point)| {
            preds.entry(to).or_default().push(from);
        };
        for (f, func) in p.functions.iter().enumerate() {
            for (b, block) in func.blocks.iter().enumerate() {
                for (i, ins) in block.instructions.iter().enumerate() {
                    for layer in [Layer::Up, Layer::Down] {
                        let here = (layer, (f, b, i));
                        match &ins.kind {
                            InstrKind::Br { .. } | InstrKind::Jmp { .. } => {
                                for s in successors(p, f, b) {
                                    edge(here, (layer, (f, s, 0)));
                                }
                            }
                            InstrKind::Ret { .. } => {
                                if layer == Layer::Up {
                                    for &(cf, cb, ci) in sites_of.get(&f).into_iter().flatten() {
                                        edge(here, (Layer::Up, (cf, cb, ci + 1)));
                                    }
                                }
                            }
                            InstrKind::Exit { pruned: false, .. } => {}
                            InstrKind::Call { .. } | InstrKind::CallIndirect { .. } => {
                                edge(here, (layer, (f, b, i + 1)));
                                for g in callees(p, &ins.kind) {
                                    edge(here, (Layer::Down, (g, 0, 0)));
                                }
                            }
                            _ => edge(here, (layer, (f, b, i + 1))),
                        }
                    }
                }
            }
        }
        Graph { preds }
    }

    /// Every node from which some target point is reachable.
    fn reaching(&self, p: &Program, spec: &TargetSpec) -> BTreeSet<(bool, Point)> {
        let mut seen: BTreeSet<(bool, Point)> = BTreeSet::new();
        let mut work = VecDeque::new();
        for (f, func) in p.functions.iter().enumerate() {
            for (b, block) in func.blocks.iter().enumerate() {
                for (i, ins) in block.instructions.iter().enumerate() {
                    if matches!(&ins.kind, InstrKind::Target { id } if spec.contains(id)) {
                        for layer in [Layer::Up, Layer::Down] {
                            work.push_back((layer, (f, b, i)));
                            seen.insert((layer == Layer::Up, (f, b, i)));
                        }
                    }
                }
            }
        }
        while let Some(node) = work.pop_front() {
            for &pred in self.preds.get(&node).into_iter().flatten() {
                if seen.insert((pred.0 == Layer::Up, pred.1)) {
                    work.push_back(pred);
                }
            }
        }
        seen
    }
}

/// Computes relevance by exhaustive search. Markers and pruning exits in `p`
/// are ignored.
pub fn relevant_blocks(p: &Program, spec: &TargetSpec) -> OracleResult {
    let p = p.strip_synthetic();
    let reach = Graph::build(&p).reaching(&p, spec);
    let up = |pt: Point| reach.contains(&(true, pt));

    let mut reaching = BTreeSet::new();
    for (f, func) in p.functions.iter().enumerate() {
        for b in 0..func.blocks.len() {
            if up((f, b, 0)) {
                reaching.insert(BlockId::new(f, b));
            }
        }
    }

    let mut post_target = BTreeSet::new();
    for (f, func) in p.functions.iter().enumerate() {
        for (b, block) in func.blocks.iter().enumerate() {
            let hit = block
                .instructions
                .iter()
                .any(|i| matches!(&i.kind, InstrKind::Target { id } if spec.contains(id)));
            if !hit {
                continue;
            }
            let mut stack = vec![b];
            while let Some(x) = stack.pop() {
                if post_target.insert(BlockId::new(f, x)) {
                    stack.extend(successors(&p, f, x));
                }
            }
        }
    }

    // A call is required when the code after it can still reach a target,
    // when its block follows a target, or when its function is required.
    let mut required: BTreeSet<usize> = BTreeSet::new();
    loop {
        let mut next = required.clone();
        for (f, func) in p.functions.iter().enumerate() {
            for (b, block) in func.blocks.iter().enumerate() {
                let whole = required.contains(&f) || post_target.contains(&BlockId::new(f, b));
                for (i, ins) in block.instructions.iter().enumerate() {
                    if whole || up((f, b, i + 1)) {
                        next.extend(callees(&p, &ins.kind));
                    }
                }
            }
        }
        if next == required {
            break;
        }
        required = next;
    }

    let mut relevant: BTreeSet<BlockId> = reaching.union(&post_target).copied().collect();
    for &f in &required {
        for b in 0..p.functions[f].blocks.len() {
            relevant.insert(BlockId::new(f, b));
        }
    }
    OracleResult {
        reaching,
        post_target,
        required: required
            .iter()
            .map(|&f| p.functions[f].name.clone())
            .collect(),
        relevant,
    }
}
