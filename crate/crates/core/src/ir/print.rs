use std::fmt::Write;

use super::{InstrKind, Operand, Program};

/// Renders a program in `.tir` form. Pass-inserted instructions print as
/// `marker` / `pruned_exit`, which only a trusted parse accepts.
pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    if p.entry != "main" {
        let _ = writeln!(out, "entry {}", p.entry);
    }
    if !p.declared_targets.is_empty() {
        let _ = writeln!(out, "targets {}", p.declared_targets.join(", "));
    }
    for (fi, f) in p.functions.iter().enumerate() {
        if fi > 0 || !out.is_empty() {
            out.push('\n');
        }
        let params: Vec<String> = f
            .params
            .iter()
            .map(|p| format!("{}: {}", p.name, p.ty))
            .collect();
        let ret = f
            .ret
            .as_ref()
            .map_or_else(|| "void".to_string(), |t| t.to_string());
        let _ = writeln!(out, "func {}({}) -> {} {{", f.name, params.join(", "), ret);
        for b in &f.blocks {
            let _ = writeln!(out, "{}:", b.label);
            for ins in &b.instructions {
                let _ = writeln!(out, "  {}", render(&ins.kind));
            }
        }
        out.push_str("}\n");
    }
    out
}

fn args(args: &[Operand]) -> String {
    args.iter()
        .map(Operand::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

fn assign(dst: &Option<String>) -> String {
    dst.as_ref().map_or_else(String::new, |d| format!("{d} = "))
}

pub(super) fn render(kind: &InstrKind) -> String {
    match kind {
        InstrKind::Const { dst, value } => format!("{dst} = const {value}"),
        InstrKind::ReadInput { dst } => format!("{dst} = read_input"),
        InstrKind::BinOp { dst, op, lhs, rhs } => {
            format!("{dst} = {} {lhs}, {rhs}", op.mnemonic())
        }
        InstrKind::FnAddr { dst, function } => format!("{dst} = fnaddr {function}"),
        InstrKind::Call {
            dst,
            callee,
            args: a,
        } => format!("{}call {callee}({})", assign(dst), args(a)),
        InstrKind::CallIndirect {
            dst,
            signature,
            pointer,
            args: a,
        } => format!(
            "{}call_indirect {signature} {pointer}({})",
            assign(dst),
            args(a)
        ),
        InstrKind::Br {
            cond,
            then_label,
            else_label,
        } => format!("br {cond}, {then_label}, {else_label}"),
        InstrKind::Jmp { label } => format!("jmp {label}"),
        InstrKind::Ret { value: Some(v) } => format!("ret {v}"),
        InstrKind::Ret { value: None } => "ret".to_string(),
        InstrKind::Exit { pruned: true, .. } => "pruned_exit".to_string(),
        InstrKind::Exit { code, .. } => format!("exit {code}"),
        InstrKind::Target { id } => format!("target {id}"),
        InstrKind::Bug { id, kind: Some(k) } => format!("bug {id} \"{k}\""),
        InstrKind::Bug { id, kind: None } => format!("bug {id}"),
        InstrKind::Marker => "marker".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use crate::ir::{parse_program, parse_program_with, ParseOptions};

    use super::*;

    const SAMPLE: &str = "\
targets t

func helper(x: int, cb: fn(int) -> int) -> int {
b0:
  r = call_indirect fn(int) -> int cb(x)
  c = lt r, -3
  br c, b1, b2
b1:
  bug overflow \"heap-overflow\"
  ret 0
b2:
  target t
  ret r
}

func id(x: int) -> int {
b0:
  ret x
}

func main() -> int {
entry_block:
  v = read_input
  p = fnaddr id
  w = call helper(v, p)
  call helper(1, p)
  exit 3
}
";

    #[test]
    fn round_trip_is_identity() {
        let p = parse_program(SAMPLE).unwrap();
        let text = print_program(&p);
        assert_eq!(text, SAMPLE);
        assert_eq!(parse_program(&text).unwrap(), p);
    }

    #[test]
    fn minimal_round_trip() {
        let p = parse_program("func main() -> int { b0: v = const 0 \n ret v }").unwrap();
        assert_eq!(parse_program(&print_program(&p)).unwrap(), p);
    }

    #[test]
    fn synthetic_round_trip_needs_trust() {
        let src = "func main() -> void {\nb0:\n  marker\n  pruned_exit\n  marker\n  ret\n}\n";
        let trusted = ParseOptions { trusted: true };
        let p = parse_program_with(src, trusted).unwrap();
        assert_eq!(print_program(&p), src);
        assert_eq!(parse_program_with(&print_program(&p), trusted).unwrap(), p);
        assert!(parse_program(&print_program(&p)).is_err());
    }
}
