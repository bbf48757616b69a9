//! Benchmark programs: hand-written scenarios and a random generator.

use std::fmt::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::interp::{Interpreter, RunOptions, Termination};
use crate::ir::{parse_program, InstrKind, Program, TargetSpec};
use crate::{Error, Result};

/// How a planted bug is reached on its witness path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BugRoute {
    Direct,
    Indirect,
    PostTarget,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlantedBug {
    pub id: String,
    pub reachable_only_via: BugRoute,
    pub witness: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusProgram {
    pub name: String,
    pub source: String,
    pub targets: TargetSpec,
    pub planted_bugs: Vec<PlantedBug>,
    /// An input that hits at least one target.
    pub witness: Vec<u8>,
    pub notes: String,
}

impl CorpusProgram {
    pub fn program(&self) -> Program {
        parse_program(&self.source).expect("corpus programs parse")
    }
}

struct Scenario {
    name: &'static str,
    source: &'static str,
    witness: &'static [u8],
    bugs: &'static [(&'static str, BugRoute, &'static [u8])],
    notes: &'static str,
}

const SCENARIOS: &[Scenario] = &[
    Scenario {
        name: "fig1-netcdf-like",
        source: include_str!("../corpus/fig1-netcdf-like.tir"),
        witness: &[0, 1, 0, 0],
        bugs: &[("att_overflow", BugRoute::PostTarget, &[0, 1, 0, 255])],
        notes: "expensive XML writer is entirely irrelevant to attribute decoding",
    },
    Scenario {
        name: "fig2-giflib-like",
        source: include_str!("../corpus/fig2-giflib-like.tir"),
        witness: &[33, 200, 0],
        bugs: &[("gcb_leak", BugRoute::Indirect, &[33, 200, 200])],
        notes: "the target function is only ever called through a function pointer",
    },
    Scenario {
        name: "deep-call-chain",
        source: include_str!("../corpus/deep-call-chain.tir"),
        witness: &[1, 128, 0, 1, 101, 0],
        bugs: &[],
        notes: "six nested layers, each with a costly non-reaching fallback",
    },
    Scenario {
        name: "signature-collision-heavy",
        source: include_str!("../corpus/signature-collision-heavy.tir"),
        witness: &[251, 20],
        bugs: &[("delta_underflow", BugRoute::Indirect, &[251, 0])],
        notes: "six decoders share one signature, so every dispatch site stays relevant",
    },
    Scenario {
        name: "post-target-bug",
        source: include_str!("../corpus/post-target-bug.tir"),
        witness: &[201, 1, 0, 0],
        bugs: &[
            ("double_free", BugRoute::PostTarget, &[201, 1, 0, 128]),
            ("skip_overflow", BugRoute::Direct, &[201, 255]),
        ],
        notes: "the interesting bug lies after the target on a cheap path",
    },
    Scenario {
        name: "multi-target",
        source: include_str!("../corpus/multi-target.tir"),
        witness: &[1, 0],
        bugs: &[("name_overflow", BugRoute::PostTarget, &[2, 241])],
        notes: "two targets in sibling functions",
    },
];

pub fn scenario_names() -> Vec<&'static str> {
    SCENARIOS.iter().map(|s| s.name).collect()
}

pub fn scenario(name: &str) -> Option<CorpusProgram> {
    let s = SCENARIOS.iter().find(|s| s.name == name)?;
    let program = parse_program(s.source).expect("corpus programs parse");
    Some(CorpusProgram {
        name: s.name.to_string(),
        source: s.source.to_string(),
        targets: TargetSpec::from_program(&program).expect("corpus programs declare targets"),
        planted_bugs: s
            .bugs
            .iter()
            .map(|&(id, route, w)| PlantedBug {
                id: id.to_string(),
                reachable_only_via: route,
                witness: w.to_vec(),
            })
            .collect(),
        witness: s.witness.to_vec(),
        notes: s.notes.to_string(),
    })
}

pub fn scenarios() -> Vec<CorpusProgram> {
    SCENARIOS
        .iter()
        .map(|s| scenario(s.name).expect("registered"))
        .collect()
}

pub const MAX_FUNCTIONS: usize = 64;
pub const MAX_BLOCKS: usize = 32;
/// Longest input tried by the witness search.
pub const WITNESS_MAX_LEN: usize = 8;
const WITNESS_BUDGET: u64 = 100_000;
const MAX_ATTEMPTS: u64 = 1_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenParams {
    pub functions: usize,
    /// Upper bound on blocks per function; each function draws its own count.
    pub blocks_per_function: usize,
    /// Probability that a call site is indirect.
    pub indirect_fraction: f64,
    /// 0 draws signatures from the full pool, 1 gives every non-entry
    /// function the same signature.
    pub collision_factor: f64,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            functions: 4,
            blocks_per_function: 5,
            indirect_fraction: 0.3,
            collision_factor: 0.5,
            seed: 0,
        }
    }
}

/// Generates a valid random program with at least one target and a witness
/// input found by exhaustive search over `{0, 1}` strings of length at most
/// [`WITNESS_MAX_LEN`]. Seeds without a witness are skipped in order.
pub fn generate_random_program(params: &GenParams) -> Result<CorpusProgram> {
    if !(1..=MAX_FUNCTIONS).contains(&params.functions)
        || !(1..=MAX_BLOCKS).contains(&params.blocks_per_function)
        || !(0.0..=1.0).contains(&params.indirect_fraction)
        || !(0.0..=1.0).contains(&params.collision_factor)
    {
        return Err(Error::Invalid(format!(
            "generator parameters out of bounds: {params:?}"
        )));
    }
    for attempt in 0..MAX_ATTEMPTS {
        let seed = params.seed.wrapping_add(attempt);
        let source = build_source(params, seed);
        let program = parse_program(&source)?;
        let targets = TargetSpec::from_program(&program)?;
        let interp = Interpreter::new(&program)?;
        let Some(witness) = search(&interp, |t| !t.targets_hit.is_empty()) else {
            continue;
        };
        let planted_bugs = plant_report(&program, &interp);
        return Ok(CorpusProgram {
            name: format!("random-{seed}"),
            source,
            targets,
            planted_bugs,
            witness,
            notes: format!("generated from {params:?} with seed {seed}"),
        });
    }
    Err(Error::Invalid(format!(
        "no program with a witness after {MAX_ATTEMPTS} seeds from {params:?}"
    )))
}

/// All `{0, 1}` strings up to [`WITNESS_MAX_LEN`], shortest first.
fn binary_inputs() -> impl Iterator<Item = Vec<u8>> {
    (0..=WITNESS_MAX_LEN).flat_map(|len| {
        (0u32..1 << len).map(move |bits| (0..len).map(|i| ((bits >> i) & 1) as u8).collect())
    })
}

fn search(
    interp: &Interpreter,
    accept: impl Fn(&crate::interp::ExecutionTrace) -> bool,
) -> Option<Vec<u8>> {
    let opts = RunOptions::with_budget(WITNESS_BUDGET);
    binary_inputs().find(|input| accept(&interp.run(input, &opts)))
}

fn plant_report(p: &Program, interp: &Interpreter) -> Vec<PlantedBug> {
    let opts = RunOptions::with_budget(WITNESS_BUDGET);
    let mut out = Vec::new();
    for id in p.instructions().filter_map(|(_, i)| match &i.kind {
        InstrKind::Bug { id, .. } => Some(id.clone()),
        _ => None,
    }) {
        let hits = |t: &crate::interp::ExecutionTrace| {
            matches!(&t.termination, Termination::BugTriggered { bug, .. } if *bug == id)
        };
        let Some(witness) = search(interp, hits) else {
            continue;
        };
        let trace = interp.run(&witness, &opts);
        let Termination::BugTriggered { stack, .. } = &trace.termination else {
            unreachable!()
        };
        let via_pointer = stack[1..].iter().any(|f| {
            p.locate(f.instr)
                .is_some_and(|l| matches!(p.instr(l).kind, InstrKind::CallIndirect { .. }))
        });
        let reachable_only_via = if !trace.targets_hit.is_empty() {
            BugRoute::PostTarget
        } else if via_pointer {
            BugRoute::Indirect
        } else {
            BugRoute::Direct
        };
        out.push(PlantedBug {
            id,
            reachable_only_via,
            witness,
        });
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq)]
struct Sig {
    params: usize,
    returns: bool,
}

const SIG_POOL: [Sig; 6] = [
    Sig { params: 1, returns: true },
    Sig { params: 0, returns: true },
    Sig { params: 2, returns: true },
    Sig { params: 1, returns: false },
    Sig { params: 0, returns: false },
    Sig { params: 2, returns: false },
];

impl Sig {
    fn render(self) -> String {
        let params = vec!["int"; self.params].join(", ");
        let ret = if self.returns { "int" } else { "void" };
        format!("fn({params}) -> {ret}")
    }
}

enum Item {
    Call { callee: usize, indirect: bool },
    Target(String),
    Bug(String),
}

struct FnBuilder<'r> {
    rng: &'r mut ChaCha8Rng,
    out: String,
    next_value: usize,
    scope: Vec<String>,
    params: Vec<String>,
}

impl FnBuilder<'_> {
    fn fresh(&mut self) -> String {
        self.next_value += 1;
        format!("v{}", self.next_value)
    }

    fn line(&mut self, s: &str) {
        let _ = writeln!(self.out, "  {s}");
    }

    fn operand(&mut self) -> String {
        let pool: Vec<String> = self.scope.iter().chain(&self.params).cloned().collect();
        if pool.is_empty() || self.rng.gen_bool(0.25) {
            self.rng.gen_range(0..3).to_string()
        } else {
            pool.choose(self.rng).unwrap().clone()
        }
    }

    fn read(&mut self) -> String {
        let v = self.fresh();
        self.line(&format!("{v} = read_input"));
        self.scope.push(v.clone());
        v
    }

    fn filler(&mut self) {
        for _ in 0..self.rng.gen_range(0..3) {
            let v = self.fresh();
            match self.rng.gen_range(0..3) {
                0 => {
                    let n = self.rng.gen_range(0..4);
                    self.line(&format!("{v} = const {n}"));
                }
                1 => self.line(&format!("{v} = read_input")),
                _ => {
                    const OPS: [&str; 8] = ["add", "sub", "mul", "eq", "ne", "lt", "and", "or"];
                    let op = OPS.choose(self.rng).unwrap();
                    let (a, b) = (self.operand(), self.operand());
                    self.line(&format!("{v} = {op} {a}, {b}"));
                }
            }
            self.scope.push(v);
        }
    }

    /// A branch condition: usually a fresh input byte, sometimes a value in
    /// scope.
    fn condition(&mut self) -> String {
        let pool: Vec<String> = self.scope.iter().chain(&self.params).cloned().collect();
        if !pool.is_empty() && self.rng.gen_bool(0.3) {
            pool.choose(self.rng).unwrap().clone()
        } else {
            self.read()
        }
    }
}

fn build_source(params: &GenParams, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.functions;
    let pool_len = 1 + ((1.0 - params.collision_factor) * (SIG_POOL.len() - 1) as f64).round() as usize;
    let names: Vec<String> = (0..n)
        .map(|i| if i == 0 { "main".to_string() } else { format!("f{i}") })
        .collect();
    let sigs: Vec<Sig> = (0..n)
        .map(|i| {
            if i == 0 {
                Sig { params: 0, returns: false }
            } else {
                SIG_POOL[rng.gen_range(0..pool_len)]
            }
        })
        .collect();
    let nblocks: Vec<usize> = (0..n)
        .map(|_| rng.gen_range(1..=params.blocks_per_function))
        .collect();

    // Items per (function, block). Every function gets one caller with a
    // lower index, so all functions are reachable from the entry.
    let mut items: Vec<Vec<Vec<Item>>> = nblocks.iter().map(|&k| (0..k).map(|_| Vec::new()).collect()).collect();
    let place = |rng: &mut ChaCha8Rng, items: &mut Vec<Vec<Vec<Item>>>, f: usize, item: Item| {
        let b = rng.gen_range(0..nblocks[f]);
        items[f][b].push(item);
    };
    for callee in 1..n {
        let caller = rng.gen_range(0..callee);
        let indirect = rng.gen_bool(params.indirect_fraction);
        place(&mut rng, &mut items, caller, Item::Call { callee, indirect });
    }
    for caller in 0..n.saturating_sub(1) {
        if rng.gen_bool(0.4) {
            let callee = rng.gen_range(caller + 1..n);
            let indirect = rng.gen_bool(params.indirect_fraction);
            place(&mut rng, &mut items, caller, Item::Call { callee, indirect });
        }
    }
    let ntargets = rng.gen_range(1..=2);
    for t in 0..ntargets {
        // Targets favour callees and late blocks so that pruning has
        // something to remove.
        let f = if n > 1 && rng.gen_bool(0.8) {
            rng.gen_range(1..n)
        } else {
            0
        };
        let b = rng.gen_range(nblocks[f] / 2..nblocks[f]);
        items[f][b].push(Item::Target(format!("t{t}")));
    }
    for b in 0..rng.gen_range(0..=2) {
        let f = rng.gen_range(0..n);
        place(&mut rng, &mut items, f, Item::Bug(format!("bug{b}")));
    }

    let mut out = String::new();
    for f in 0..n {
        if f > 0 {
            out.push('\n');
        }
        let params_list: Vec<String> = (0..sigs[f].params).map(|i| format!("a{i}")).collect();
        let header = params_list
            .iter()
            .map(|p| format!("{p}: int"))
            .collect::<Vec<_>>()
            .join(", ");
        let ret = if sigs[f].returns { "int" } else { "void" };
        let _ = writeln!(out, "func {}({header}) -> {ret} {{", names[f]);

        // Spanning tree with out-degree at most two, rooted at the entry.
        let k = nblocks[f];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); k];
        for child in 1..k {
            let open: Vec<usize> = (0..child).filter(|&b| children[b].len() < 2).collect();
            let parent = *open.choose(&mut rng).unwrap();
            children[parent].push(child);
        }

        let mut fb = FnBuilder {
            rng: &mut rng,
            out: String::new(),
            next_value: 0,
            scope: Vec::new(),
            params: params_list,
        };
        for b in 0..k {
            let _ = writeln!(fb.out, "b{b}:");
            fb.scope.clear();
            fb.filler();
            let mut block_items = std::mem::take(&mut items[f][b]);
            block_items.shuffle(fb.rng);
            for item in block_items {
                match item {
                    Item::Target(id) => fb.line(&format!("target {id}")),
                    Item::Bug(id) => fb.line(&format!("bug {id}")),
                    Item::Call { callee, indirect } => {
                        let sig = sigs[callee];
                        let args: Vec<String> = (0..sig.params).map(|_| fb.operand()).collect();
                        let dst = if sig.returns { Some(fb.fresh()) } else { None };
                        let assign = dst.as_ref().map_or(String::new(), |d| format!("{d} = "));
                        if indirect {
                            let ptr = fb.fresh();
                            fb.line(&format!("{ptr} = fnaddr {}", names[callee]));
                            fb.line(&format!(
                                "{assign}call_indirect {} {ptr}({})",
                                sig.render(),
                                args.join(", ")
                            ));
                        } else {
                            fb.line(&format!("{assign}call {}({})", names[callee], args.join(", ")));
                        }
                        fb.scope.extend(dst);
                    }
                }
                if fb.rng.gen_bool(0.3) {
                    fb.filler();
                }
            }
            match children[b].as_slice() {
                [a, c] => {
                    let cond = fb.condition();
                    fb.line(&format!("br {cond}, b{a}, b{c}"));
                }
                [a] => {
                    if fb.rng.gen_bool(0.5) {
                        fb.line(&format!("jmp b{a}"));
                    } else {
                        let extra = fb.rng.gen_range(0..k);
                        if extra <= b {
                            // Loops only continue on a fresh non-zero byte,
                            // so every run terminates once input runs out.
                            let cond = fb.read();
                            fb.line(&format!("br {cond}, b{extra}, b{a}"));
                        } else {
                            let cond = fb.condition();
                            if fb.rng.gen_bool(0.5) {
                                fb.line(&format!("br {cond}, b{a}, b{extra}"));
                            } else {
                                fb.line(&format!("br {cond}, b{extra}, b{a}"));
                            }
                        }
                    }
                }
                _ => {
                    if f > 0 && fb.rng.gen_bool(0.1) {
                        fb.line("exit 1");
                    } else if sigs[f].returns {
                        let v = fb.operand();
                        fb.line(&format!("ret {v}"));
                    } else {
                        fb.line("ret");
                    }
                }
            }
        }
        out.push_str(&fb.out);
        out.push_str("}\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::interpret;
    use crate::ir::validate;

    #[test]
    fn scenarios_parse_and_witnesses_hit_targets() {
        for c in scenarios() {
            let p = c.program();
            assert!(validate(&p).is_empty(), "{}", c.name);
            let t = interpret(&p, &c.witness, 1_000_000).unwrap();
            assert!(!t.targets_hit.is_empty(), "{} witness misses", c.name);
            for bug in &c.planted_bugs {
                let t = interpret(&p, &bug.witness, 1_000_000).unwrap();
                assert!(
                    matches!(&t.termination, Termination::BugTriggered { bug: b, .. } if *b == bug.id),
                    "{} / {}: {:?}",
                    c.name,
                    bug.id,
                    t.termination
                );
            }
        }
        assert_eq!(scenario_names().len(), 6);
        assert!(scenario("nope").is_none());
    }

    #[test]
    fn single_block_program_is_straight_line() {
        let c = generate_random_program(&GenParams {
            functions: 1,
            blocks_per_function: 1,
            indirect_fraction: 0.0,
            collision_factor: 0.0,
            seed: 3,
        })
        .unwrap();
        let p = c.program();
        assert_eq!(p.num_blocks(), 1);
        assert!(c.witness.is_empty());
    }

    #[test]
    fn full_indirect_fraction_makes_every_call_indirect() {
        for seed in 0..20 {
            let c = generate_random_program(&GenParams {
                functions: 5,
                indirect_fraction: 1.0,
                seed,
                ..GenParams::default()
            })
            .unwrap();
            let p = c.program();
            assert!(p
                .instructions()
                .all(|(_, i)| !matches!(i.kind, InstrKind::Call { .. })));
            assert!(p
                .instructions()
                .any(|(_, i)| matches!(i.kind, InstrKind::CallIndirect { .. })));
        }
    }

    #[test]
    fn rejects_out_of_bounds_parameters() {
        let too_many = GenParams {
            functions: MAX_FUNCTIONS + 1,
            ..GenParams::default()
        };
        assert!(generate_random_program(&too_many).is_err());
        let bad_fraction = GenParams {
            indirect_fraction: 1.5,
            ..GenParams::default()
        };
        assert!(generate_random_program(&bad_fraction).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let params = GenParams {
            seed: 42,
            ..GenParams::default()
        };
        assert_eq!(
            generate_random_program(&params).unwrap(),
            generate_random_program(&params).unwrap()
        );
    }
}
