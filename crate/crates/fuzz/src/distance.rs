//! Static block distances to the targets.

use std::collections::{BTreeMap, HashMap, VecDeque};

use pathprune_core::callgraph::InverseCallGraph;
use pathprune_core::ir::{BlockId, InstrKind, Program, TargetSpec};

/// Hop distance from each block to the nearest target block. Blocks that
/// cannot reach a target are absent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlockDistances {
    finite: BTreeMap<BlockId, u32>,
}

impl BlockDistances {
    /// `None` stands for an infinite distance.
    pub fn get(&self, b: BlockId) -> Option<u32> {
        self.finite.get(&b).copied()
    }

    pub fn finite(&self) -> &BTreeMap<BlockId, u32> {
        &self.finite
    }

    /// Arithmetic mean of the finite distances of `blocks`; `None` when all
    /// of them are infinite.
    pub fn mean_over<'a>(&self, blocks: impl IntoIterator<Item = &'a BlockId>) -> Option<f64> {
        let (sum, n) = blocks
            .into_iter()
            .filter_map(|&b| self.get(b))
            .fold((0u64, 0u64), |(s, n), d| (s + u64::from(d), n + 1));
        (n > 0).then(|| sum as f64 / n as f64)
    }
}

/// Multi-source reverse BFS over successor, call and return edges, each of
/// cost one.
pub fn static_block_distances(
    p: &Program,
    icg: &InverseCallGraph,
    spec: &TargetSpec,
) -> BlockDistances {
    let fn_index: HashMap<&str, usize> = p
        .functions
        .iter()
        .enumerate()
        .map(|(i, f)| (f.name.as_str(), i))
        .collect();
    let mut preds: HashMap<BlockId, Vec<BlockId>> = HashMap::new();
    let mut add = |from: BlockId, to: BlockId| preds.entry(to).or_default().push(from);
    for (fi, f) in p.functions.iter().enumerate() {
        for (bi, succs) in f.successor_indices().into_iter().enumerate() {
            for s in succs {
                add(BlockId::new(fi, bi), BlockId::new(fi, s));
            }
        }
    }
    for site in icg.sites() {
        let from = BlockId::new(site.loc.func, site.loc.block);
        for callee in site.callees() {
            let Some(&g) = fn_index.get(callee) else {
                continue;
            };
            add(from, BlockId::new(g, 0));
            for (bi, b) in p.functions[g].blocks.iter().enumerate() {
                if matches!(b.terminator().map(|t| &t.kind), Some(InstrKind::Ret { .. })) {
                    add(BlockId::new(g, bi), from);
                }
            }
        }
    }

    let mut finite = BTreeMap::new();
    let mut work = VecDeque::new();
    for (loc, ins) in p.instructions() {
        if matches!(&ins.kind, InstrKind::Target { id } if spec.contains(id)) {
            let b = BlockId::new(loc.func, loc.block);
            if finite.insert(b, 0).is_none() {
                work.push_back(b);
            }
        }
    }
    while let Some(b) = work.pop_front() {
        let d = finite[&b];
        for &pred in preds.get(&b).into_iter().flatten() {
            if let std::collections::btree_map::Entry::Vacant(e) = finite.entry(pred) {
                e.insert(d + 1);
                work.push_back(pred);
            }
        }
    }
    BlockDistances { finite }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pathprune_core::ir::parse_program;

    fn distances(src: &str, t: &str) -> (Program, BlockDistances) {
        let p = parse_program(src).unwrap();
        let icg = InverseCallGraph::build(&p);
        let d = static_block_distances(&p, &icg, &TargetSpec::parse_list(t).unwrap());
        (p, d)
    }

    #[test]
    fn straight_line_counts_down() {
        let (p, d) = distances(
            "func main() -> void {\nb0:\n  jmp b1\nb1:\n  jmp b2\nb2:\n  target t\n  ret\n}",
            "t",
        );
        let got: Vec<Option<u32>> = p.block_ids().map(|b| d.get(b)).collect();
        assert_eq!(got, [Some(2), Some(1), Some(0)]);
    }

    #[test]
    fn calls_and_returns_cost_one_hop() {
        let src = "\
func g() -> void {
b0:
  ret
}
func h() -> void {
b0:
  target t
  ret
}
func main() -> void {
b0:
  call g()
  jmp b1
b1:
  call h()
  ret
b2:
  ret
}";
        let (p, d) = distances(src, "t");
        let at = |f: &str, l: &str| d.get(p.block_id(f, l).unwrap());
        assert_eq!(at("h", "b0"), Some(0));
        assert_eq!(at("main", "b1"), Some(1));
        assert_eq!(at("main", "b0"), Some(2));
        // g returns into main:b0
        assert_eq!(at("g", "b0"), Some(3));
        assert_eq!(at("main", "b2"), None);
        assert_eq!(d.mean_over(&[p.block_id("main", "b2").unwrap()]), None);
        let both = [p.block_id("main", "b0").unwrap(), p.block_id("main", "b1").unwrap()];
        assert_eq!(d.mean_over(&both), Some(1.5));
    }
}
