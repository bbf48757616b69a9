//! Havoc-style byte mutations.

use rand::Rng;
use serde::{Deserialize, Serialize};

pub const MAX_INPUT_LEN: usize = 4096;
pub const INTERESTING: [u8; 4] = [0, 1, 255, 127];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationOp {
    BitFlip,
    ByteSet,
    ByteDelete,
    ByteInsert,
    BlockDuplicate,
    Interesting,
}

impl MutationOp {
    pub const ALL: [MutationOp; 6] = [
        MutationOp::BitFlip,
        MutationOp::ByteSet,
        MutationOp::ByteDelete,
        MutationOp::ByteInsert,
        MutationOp::BlockDuplicate,
        MutationOp::Interesting,
    ];
}

/// Relative selection weight of each operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MutationWeights {
    pub bit_flip: u32,
    pub byte_set: u32,
    pub byte_delete: u32,
    pub byte_insert: u32,
    pub block_duplicate: u32,
    pub interesting: u32,
}

impl Default for MutationWeights {
    fn default() -> Self {
        MutationWeights {
            bit_flip: 1,
            byte_set: 1,
            byte_delete: 1,
            byte_insert: 1,
            block_duplicate: 1,
            interesting: 1,
        }
    }
}

impl MutationWeights {
    fn of(&self, op: MutationOp) -> u32 {
        match op {
            MutationOp::BitFlip => self.bit_flip,
            MutationOp::ByteSet => self.byte_set,
            MutationOp::ByteDelete => self.byte_delete,
            MutationOp::ByteInsert => self.byte_insert,
            MutationOp::BlockDuplicate => self.block_duplicate,
            MutationOp::Interesting => self.interesting,
        }
    }

    fn pick(&self, rng: &mut impl Rng) -> MutationOp {
        let total: u32 = MutationOp::ALL.iter().map(|&op| self.of(op)).sum();
        if total == 0 {
            return MutationOp::ALL[rng.gen_range(0..MutationOp::ALL.len())];
        }
        let mut x = rng.gen_range(0..total);
        for op in MutationOp::ALL {
            let w = self.of(op);
            if x < w {
                return op;
            }
            x -= w;
        }
        unreachable!()
    }
}

/// Applies one operation in place. Operations that need a byte to work on
/// leave an empty input unchanged.
pub fn apply_op(input: &mut Vec<u8>, op: MutationOp, rng: &mut impl Rng) {
    let len = input.len();
    match op {
        MutationOp::ByteInsert => {
            let at = rng.gen_range(0..=len);
            input.insert(at, rng.gen());
        }
        _ if len == 0 => {}
        MutationOp::BitFlip => {
            let bit = rng.gen_range(0..len * 8);
            input[bit / 8] ^= 1 << (bit % 8);
        }
        MutationOp::ByteSet => {
            let at = rng.gen_range(0..len);
            input[at] = rng.gen();
        }
        MutationOp::ByteDelete => {
            input.remove(rng.gen_range(0..len));
        }
        MutationOp::BlockDuplicate => {
            let start = rng.gen_range(0..len);
            let n = rng.gen_range(1..=(len - start).min(16));
            let block = input[start..start + n].to_vec();
            let at = rng.gen_range(0..=len);
            input.splice(at..at, block);
        }
        MutationOp::Interesting => {
            let at = rng.gen_range(0..len);
            input[at] = INTERESTING[rng.gen_range(0..INTERESTING.len())];
        }
    }
    input.truncate(MAX_INPUT_LEN);
}

/// Stacks 1, 2, 4, 8 or 16 weighted operations on a copy of `input`.
pub fn mutate(input: &[u8], rng: &mut impl Rng, weights: &MutationWeights) -> Vec<u8> {
    let mut out = input.to_vec();
    out.truncate(MAX_INPUT_LEN);
    let stack = 1usize << rng.gen_range(0..=4);
    for _ in 0..stack {
        let op = weights.pick(rng);
        apply_op(&mut out, op, rng);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn insert_into_empty_gives_one_byte() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut v = Vec::new();
        apply_op(&mut v, MutationOp::ByteInsert, &mut rng);
        assert_eq!(v.len(), 1);
        for op in MutationOp::ALL {
            if op != MutationOp::ByteInsert {
                let mut e = Vec::new();
                apply_op(&mut e, op, &mut rng);
                assert!(e.is_empty());
            }
        }
    }

    #[test]
    fn fixed_seed_gives_identical_mutants() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            (0..50)
                .map(|_| mutate(b"seed input", &mut rng, &MutationWeights::default()))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn single_op_weights_restrict_the_choice() {
        let only_interesting = MutationWeights {
            bit_flip: 0,
            byte_set: 0,
            byte_delete: 0,
            byte_insert: 0,
            block_duplicate: 0,
            interesting: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let m = mutate(&[9; 5], &mut rng, &only_interesting);
            assert_eq!(m.len(), 5);
            assert!(m.iter().all(|b| *b == 9 || INTERESTING.contains(b)));
        }
    }
}
