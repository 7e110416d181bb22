use std::collections::BTreeMap;

use thiserror::Error;

use super::{Code, Instruction};
use crate::cells::MAX_INT_BITS;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct AsmError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> AsmError {
    AsmError { line, message: message.into() }
}

enum Pending {
    Ready(Instruction),
    Jump { kind: fn(usize) -> Instruction, label: String },
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        && !name.starts_with(|c: char| c.is_ascii_digit())
}

fn parse_int(text: &str) -> Option<i128> {
    let (neg, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let magnitude = match digits.strip_prefix("0x").or_else(|| digits.strip_prefix("0X")) {
        Some(hex) => u128::from_str_radix(hex, 16).ok()?,
        None => digits.parse::<u128>().ok()?,
    };
    if neg {
        0i128.checked_sub_unsigned(magnitude)
    } else {
        i128::try_from(magnitude).ok()
    }
}

/// Assembles contract source.
///
/// One instruction per line, `;` starts a comment, `name:` defines a label
/// (optionally followed by an instruction on the same line) and
/// `.method name` marks an entry point at the next instruction.
pub fn assemble(source: &str) -> Result<Code, AsmError> {
    let mut pending: Vec<(Pending, usize)> = Vec::new();
    let mut labels: BTreeMap<String, usize> = BTreeMap::new();
    let mut methods: BTreeMap<String, usize> = BTreeMap::new();

    for (idx, raw) in source.lines().enumerate() {
        let line_no = idx + 1;
        let mut line = raw.split(';').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix(".method") {
            let name = rest.trim();
            if !rest.starts_with(char::is_whitespace) || !valid_name(name) {
                return Err(err(line_no, format!("bad method name '{name}'")));
            }
            if methods.insert(name.to_string(), pending.len()).is_some() {
                return Err(err(line_no, format!("duplicate method '{name}'")));
            }
            continue;
        }
        if line.starts_with('.') {
            return Err(err(line_no, format!("unknown directive '{line}'")));
        }
        if let Some((head, tail)) = line.split_once(':') {
            let name = head.trim();
            if !valid_name(name) {
                return Err(err(line_no, format!("bad label '{name}'")));
            }
            if labels.insert(name.to_string(), pending.len()).is_some() {
                return Err(err(line_no, format!("duplicate label '{name}'")));
            }
            line = tail.trim();
            if line.is_empty() {
                continue;
            }
        }
        pending.push((parse_instruction(line, line_no)?, line_no));
    }

    let mut instructions = Vec::with_capacity(pending.len());
    let mut lines = Vec::with_capacity(pending.len());
    for (p, line_no) in pending {
        let instr = match p {
            Pending::Ready(i) => i,
            Pending::Jump { kind, label } => {
                let target =
                    labels.get(&label).ok_or_else(|| err(line_no, format!("unresolved label '{label}'")))?;
                kind(*target)
            }
        };
        instructions.push(instr);
        lines.push(line_no);
    }
    Ok(Code::new(source.to_string(), instructions, labels, methods, lines))
}

fn parse_instruction(text: &str, line: usize) -> Result<Pending, AsmError> {
    let mut parts = text.split_whitespace();
    let mnemonic = parts.next().unwrap_or_default().to_ascii_uppercase();
    let operands: Vec<&str> = parts.collect();

    let expect = |n: usize| -> Result<(), AsmError> {
        if operands.len() != n {
            return Err(err(line, format!("{mnemonic} takes {n} operand(s), got {}", operands.len())));
        }
        Ok(())
    };
    let width = |text: &str| -> Result<u32, AsmError> {
        text.parse::<u32>()
            .ok()
            .filter(|w| *w <= MAX_INT_BITS)
            .ok_or_else(|| err(line, format!("bad bit width '{text}' (0..={MAX_INT_BITS})")))
    };
    let jump = |kind: fn(usize) -> Instruction| -> Result<Pending, AsmError> {
        expect(1)?;
        if !valid_name(operands[0]) {
            return Err(err(line, format!("bad label '{}'", operands[0])));
        }
        Ok(Pending::Jump { kind, label: operands[0].to_string() })
    };

    use Instruction::*;
    let simple = match mnemonic.as_str() {
        "PUSHNULLSLICE" => Some(PushNullSlice),
        "DUP" => Some(Dup),
        "DROP" => Some(Drop),
        "SWAP" => Some(Swap),
        "ADD" => Some(Add),
        "SUB" => Some(Sub),
        "MUL" => Some(Mul),
        "EQINT" => Some(EqInt),
        "LESS" => Some(Less),
        "SLICELEN" => Some(SliceLen),
        "EQSLICE" => Some(EqSlice),
        "STSLICE" => Some(StSlice),
        "NEWC" => Some(NewC),
        "ENDC" => Some(EndC),
        "CTOS" => Some(Ctos),
        "GETDATA" => Some(GetData),
        "SETDATA" => Some(SetData),
        "SENDER" => Some(Sender),
        "MSGVALUE" => Some(MsgValue),
        "BODY" => Some(Body),
        "SENDMSG" => Some(SendMsg),
        "RET" => Some(Ret),
        _ => None,
    };
    if let Some(instr) = simple {
        expect(0)?;
        return Ok(Pending::Ready(instr));
    }
    match mnemonic.as_str() {
        "PUSHINT" => {
            expect(1)?;
            let v = parse_int(operands[0])
                .ok_or_else(|| err(line, format!("bad integer literal '{}'", operands[0])))?;
            Ok(Pending::Ready(PushInt(v)))
        }
        "LDU" => {
            expect(1)?;
            Ok(Pending::Ready(Ldu(width(operands[0])?)))
        }
        "STU" => {
            expect(1)?;
            Ok(Pending::Ready(Stu(width(operands[0])?)))
        }
        "THROW" => {
            expect(1)?;
            let n = operands[0]
                .parse::<u16>()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| err(line, format!("bad exit code '{}' (1..=65535)", operands[0])))?;
            Ok(Pending::Ready(Throw(n)))
        }
        "JMP" => jump(Jmp),
        "IFJMP" => jump(IfJmp),
        "IFNOTJMP" => jump(IfNotJmp),
        other => Err(err(line, format!("unknown mnemonic '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_instruction_program() {
        let code = assemble("PUSHINT 0\nRET").unwrap();
        assert_eq!(code.instructions(), &[Instruction::PushInt(0), Instruction::Ret]);
        assert_eq!(code.line_of(1), Some(2));
    }

    #[test]
    fn unresolved_label() {
        let e = assemble("JMP nowhere").unwrap_err();
        assert_eq!(e.line, 1);
        assert!(e.message.contains("unresolved label 'nowhere'"), "{e}");
    }

    #[test]
    fn duplicate_label() {
        let e = assemble("a:\nRET\na: RET").unwrap_err();
        assert_eq!(e.line, 3);
        assert!(e.message.contains("duplicate label"));
    }

    #[test]
    fn unknown_mnemonic_and_bad_operands() {
        assert!(assemble("NOP").unwrap_err().message.contains("unknown mnemonic"));
        assert!(assemble("LDU 129").unwrap_err().message.contains("bad bit width"));
        assert!(assemble("PUSHINT").unwrap_err().message.contains("takes 1 operand"));
        assert!(assemble("DUP 1").unwrap_err().message.contains("takes 0 operand"));
        assert!(assemble("PUSHINT 1x").unwrap_err().message.contains("bad integer"));
        assert!(assemble("THROW 0").is_err());
        assert!(assemble(".frobnicate").is_err());
    }

    #[test]
    fn labels_methods_and_comments() {
        let src = "; header\n.method recv_internal\nstart: PUSHINT -5 ; trailing\n  jmp end\nend:\n.method get_x\nPUSHINT 0x10\n";
        let code = assemble(src).unwrap();
        assert_eq!(code.method("recv_internal"), Some(0));
        assert_eq!(code.method("get_x"), Some(2));
        assert_eq!(code.label("end"), Some(2));
        assert_eq!(
            code.instructions(),
            &[Instruction::PushInt(-5), Instruction::Jmp(2), Instruction::PushInt(16)]
        );
        assert_eq!(code.get_methods().collect::<Vec<_>>(), vec!["get_x"]);
        assert_eq!(code.line_of(2), Some(7));
    }

    #[test]
    fn label_at_end_is_in_range() {
        let code = assemble("JMP done\nPUSHINT 1\ndone:").unwrap();
        assert_eq!(code.instructions()[0], Instruction::Jmp(2));
    }

    #[test]
    fn int_literal_extremes() {
        assert_eq!(parse_int("-170141183460469231731687303715884105728"), Some(i128::MIN));
        assert_eq!(parse_int("170141183460469231731687303715884105728"), None);
    }
}
