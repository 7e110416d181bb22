use thiserror::Error;

use super::{
    exit, Code, ComputeContext, ComputeResult, Instruction, OutboundAction, Value, RECV_INTERNAL,
    SEND_BOUNCEABLE, SEND_CARRY_ALL,
};
use crate::cells::{Builder, Cell, CellError, Slice};

/// Gas budget for get-method calls.
pub const GETTER_GAS_LIMIT: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GetMethodError {
    #[error("get-method '{0}' failed: no such method")]
    UnknownMethod(String),
    #[error("get-method '{method}' failed with exit code {exit_code}")]
    Failed { method: String, exit_code: i32 },
}

enum Flow {
    Next,
    Jump(usize),
    Return,
}

type Step = Result<Flow, i32>;

fn cell_exit(e: CellError) -> i32 {
    match e {
        CellError::BitOverflow { .. } | CellError::RefOverflow => exit::CELL_OVERFLOW,
        CellError::BitUnderflow { .. } | CellError::RefUnderflow | CellError::Malformed(_) => {
            exit::CELL_UNDERFLOW
        }
        CellError::WidthTooLarge(_) | CellError::ValueOutOfRange(_) => exit::RANGE_CHECK,
    }
}

struct Machine<'a> {
    ctx: &'a ComputeContext,
    stack: Vec<Value>,
    data: Cell,
    actions: Vec<OutboundAction>,
}

impl Machine<'_> {
    fn pop(&mut self) -> Result<Value, i32> {
        self.stack.pop().ok_or(exit::STACK_UNDERFLOW)
    }

    fn pop_int(&mut self) -> Result<i128, i32> {
        match self.pop()? {
            Value::Int(v) => Ok(v),
            _ => Err(exit::TYPE_CHECK),
        }
    }

    fn pop_slice(&mut self) -> Result<Slice, i32> {
        match self.pop()? {
            Value::Slice(s) => Ok(s),
            _ => Err(exit::TYPE_CHECK),
        }
    }

    fn pop_cell(&mut self) -> Result<Cell, i32> {
        match self.pop()? {
            Value::Cell(c) => Ok(c),
            _ => Err(exit::TYPE_CHECK),
        }
    }

    fn pop_builder(&mut self) -> Result<Builder, i32> {
        match self.pop()? {
            Value::Builder(b) => Ok(b),
            _ => Err(exit::TYPE_CHECK),
        }
    }

    fn push_bool(&mut self, b: bool) {
        self.stack.push(Value::Int(if b { -1 } else { 0 }));
    }

    fn binary(&mut self, op: fn(i128, i128) -> Option<i128>) -> Step {
        let b = self.pop_int()?;
        let a = self.pop_int()?;
        let v = op(a, b).ok_or(exit::INTEGER_OVERFLOW)?;
        self.stack.push(Value::Int(v));
        Ok(Flow::Next)
    }

    fn step(&mut self, instr: Instruction) -> Step {
        use Instruction::*;
        match instr {
            PushInt(v) => self.stack.push(Value::Int(v)),
            PushNullSlice => self.stack.push(Value::Slice(Slice::empty())),
            Dup => {
                let top = self.stack.last().cloned().ok_or(exit::STACK_UNDERFLOW)?;
                self.stack.push(top);
            }
            Drop => {
                self.pop()?;
            }
            Swap => {
                let n = self.stack.len();
                if n < 2 {
                    return Err(exit::STACK_UNDERFLOW);
                }
                self.stack.swap(n - 1, n - 2);
            }
            Add => return self.binary(i128::checked_add),
            Sub => return self.binary(i128::checked_sub),
            Mul => return self.binary(i128::checked_mul),
            EqInt => {
                let b = self.pop_int()?;
                let a = self.pop_int()?;
                self.push_bool(a == b);
            }
            Less => {
                let b = self.pop_int()?;
                let a = self.pop_int()?;
                self.push_bool(a < b);
            }
            SliceLen => {
                let s = self.pop_slice()?;
                self.stack.push(Value::Int(s.remaining_bits() as i128));
            }
            EqSlice => {
                let b = self.pop_slice()?;
                let a = self.pop_slice()?;
                self.push_bool(a.contents_eq(&b));
            }
            Ldu(n) => {
                let s = self.pop_slice()?;
                let (value, rest) = s.load_uint(n).map_err(cell_exit)?;
                let value = i128::try_from(value).map_err(|_| exit::INTEGER_OVERFLOW)?;
                self.stack.push(Value::Slice(rest));
                self.stack.push(Value::Int(value));
            }
            Stu(n) => {
                let value = self.pop_int()?;
                let mut b = self.pop_builder()?;
                let value = u128::try_from(value).map_err(|_| exit::RANGE_CHECK)?;
                b.store_uint(value, n).map_err(cell_exit)?;
                self.stack.push(Value::Builder(b));
            }
            StSlice => {
                let s = self.pop_slice()?;
                let mut b = self.pop_builder()?;
                b.store_slice(&s).map_err(cell_exit)?;
                self.stack.push(Value::Builder(b));
            }
            NewC => self.stack.push(Value::Builder(Builder::new())),
            EndC => {
                let b = self.pop_builder()?;
                self.stack.push(Value::Cell(b.build()));
            }
            Ctos => {
                let c = self.pop_cell()?;
                self.stack.push(Value::Slice(Slice::new(c)));
            }
            GetData => self.stack.push(Value::Cell(self.data.clone())),
            SetData => self.data = self.pop_cell()?,
            Sender => self.stack.push(Value::Slice(self.ctx.sender.clone())),
            MsgValue => {
                let v = i128::try_from(self.ctx.msg_value).map_err(|_| exit::INTEGER_OVERFLOW)?;
                self.stack.push(Value::Int(v));
            }
            Body => self.stack.push(Value::Slice(self.ctx.body.clone())),
            SendMsg => {
                let flags = self.pop_int()?;
                let body = self.pop_cell()?;
                let value = self.pop_int()?;
                let dest = self.pop_slice()?;
                if flags & !(SEND_BOUNCEABLE | SEND_CARRY_ALL) != 0 || flags < 0 {
                    return Err(exit::RANGE_CHECK);
                }
                let value = u128::try_from(value).map_err(|_| exit::RANGE_CHECK)?;
                self.actions.push(OutboundAction {
                    dest,
                    value,
                    body,
                    bounceable: flags & SEND_BOUNCEABLE != 0,
                    carry_all: flags & SEND_CARRY_ALL != 0,
                });
            }
            Jmp(t) => return Ok(Flow::Jump(t)),
            IfJmp(t) => {
                if self.pop_int()? != 0 {
                    return Ok(Flow::Jump(t));
                }
            }
            IfNotJmp(t) => {
                if self.pop_int()? == 0 {
                    return Ok(Flow::Jump(t));
                }
            }
            Throw(n) => return Err(n as i32),
            Ret => return Ok(Flow::Return),
        }
        Ok(Flow::Next)
    }
}

fn run(code: &Code, entry: usize, ctx: &ComputeContext) -> ComputeResult {
    let mut m = Machine { ctx, stack: Vec::new(), data: ctx.data.clone(), actions: Vec::new() };
    let mut gas_used = 0u64;
    let mut pc = entry;
    let failure = |exit_code: i32, gas_used: u64| ComputeResult {
        exit_code,
        gas_used,
        new_data: None,
        actions: Vec::new(),
        stack_tail: Vec::new(),
    };
    while let Some(&instr) = code.instructions().get(pc) {
        let cost = instr.gas();
        if gas_used + cost > ctx.gas_limit {
            return failure(exit::OUT_OF_GAS, ctx.gas_limit);
        }
        gas_used += cost;
        match m.step(instr) {
            Ok(Flow::Next) => pc += 1,
            Ok(Flow::Jump(target)) => pc = target,
            Ok(Flow::Return) => break,
            Err(code) => return failure(code, gas_used),
        }
    }
    m.stack.reverse();
    ComputeResult {
        exit_code: exit::SUCCESS,
        gas_used,
        new_data: Some(m.data),
        actions: m.actions,
        stack_tail: m.stack,
    }
}

/// Runs the contract's `recv_internal` entry (instruction 0 when undeclared).
pub fn execute(code: &Code, ctx: &ComputeContext) -> ComputeResult {
    run(code, code.method(RECV_INTERNAL).unwrap_or(0), ctx)
}

/// Runs a named entry point; a missing method exits with [`exit::NO_ENTRY_POINT`].
pub fn execute_method(code: &Code, method: &str, ctx: &ComputeContext) -> ComputeResult {
    match code.method(method) {
        Some(entry) => run(code, entry, ctx),
        None => ComputeResult {
            exit_code: exit::NO_ENTRY_POINT,
            gas_used: 0,
            new_data: None,
            actions: Vec::new(),
            stack_tail: Vec::new(),
        },
    }
}

/// Evaluates a get-method against `data` and returns the stack, top first.
pub fn run_get_method(code: &Code, data: &Cell, method: &str) -> Result<Vec<Value>, GetMethodError> {
    let entry = code.method(method).ok_or_else(|| GetMethodError::UnknownMethod(method.to_string()))?;
    let result = run(code, entry, &ComputeContext::detached(data.clone(), GETTER_GAS_LIMIT));
    if result.success() {
        Ok(result.stack_tail)
    } else {
        Err(GetMethodError::Failed { method: method.to_string(), exit_code: result.exit_code })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vm::assemble;

    fn run_src(src: &str, gas: u64) -> ComputeResult {
        let code = assemble(src).unwrap();
        execute(&code, &ComputeContext::detached(Cell::empty(), gas))
    }

    #[test]
    fn arithmetic_and_stack_tail() {
        let r = run_src("PUSHINT 7\nPUSHINT 5\nSUB\nPUSHINT 3\nMUL\nPUSHINT 1", 1000);
        assert_eq!(r.exit_code, 0);
        assert_eq!(r.stack_tail, vec![Value::Int(1), Value::Int(6)]);
        assert_eq!(r.gas_used, 10 * 6);
    }

    #[test]
    fn error_exit_codes() {
        assert_eq!(run_src("ADD", 1000).exit_code, exit::STACK_UNDERFLOW);
        assert_eq!(run_src("PUSHINT 1\nSLICELEN", 1000).exit_code, exit::TYPE_CHECK);
        assert_eq!(
            run_src("PUSHINT 170141183460469231731687303715884105727\nPUSHINT 1\nADD", 1000).exit_code,
            exit::INTEGER_OVERFLOW
        );
        assert_eq!(run_src("PUSHNULLSLICE\nLDU 8", 1000).exit_code, exit::CELL_UNDERFLOW);
        assert_eq!(run_src("NEWC\nPUSHINT 256\nSTU 8", 1000).exit_code, exit::RANGE_CHECK);
        assert_eq!(run_src("NEWC\nPUSHINT -1\nSTU 8", 1000).exit_code, exit::RANGE_CHECK);
        assert_eq!(run_src("THROW 42", 1000).exit_code, 42);
    }

    #[test]
    fn builder_overflow_is_cell_overflow() {
        let mut src = String::from("NEWC\n");
        for _ in 0..8 {
            src.push_str("PUSHINT 0\nSTU 128\n");
        }
        assert_eq!(run_src(&src, 100_000).exit_code, exit::CELL_OVERFLOW);
    }

    #[test]
    fn zero_gas_limit_runs_out_immediately() {
        let r = run_src("PUSHINT 0\nRET", 0);
        assert_eq!(r.exit_code, exit::OUT_OF_GAS);
        assert_eq!(r.gas_used, 0);
        assert!(r.actions.is_empty());
        assert!(r.new_data.is_none());
    }

    #[test]
    fn out_of_gas_reports_full_limit() {
        // 10 + 10 fits in 25, the ADD (10 more) does not.
        let r = run_src("PUSHINT 1\nPUSHINT 2\nADD", 25);
        assert_eq!(r.exit_code, exit::OUT_OF_GAS);
        assert_eq!(r.gas_used, 25);
        assert_eq!(run_src("PUSHINT 1\nPUSHINT 2\nADD", 30).exit_code, 0);
    }

    #[test]
    fn throw_discards_actions_and_data() {
        let src = "PUSHNULLSLICE\nPUSHINT 5\nNEWC\nENDC\nPUSHINT 1\nSENDMSG\nNEWC\nENDC\nSETDATA\nTHROW 77";
        let r = run_src(src, 10_000);
        assert_eq!(r.exit_code, 77);
        assert!(r.actions.is_empty());
        assert!(r.new_data.is_none());
    }

    #[test]
    fn sendmsg_collects_actions() {
        let src = "PUSHNULLSLICE\nPUSHINT 5\nNEWC\nENDC\nPUSHINT 129\nSENDMSG";
        let r = run_src(src, 10_000);
        assert_eq!(r.exit_code, 0);
        assert_eq!(r.actions.len(), 1);
        assert!(r.actions[0].bounceable && r.actions[0].carry_all);
        assert_eq!(r.actions[0].value, 5);
        let bad = run_src("PUSHNULLSLICE\nPUSHINT 5\nNEWC\nENDC\nPUSHINT 2\nSENDMSG", 10_000);
        assert_eq!(bad.exit_code, exit::RANGE_CHECK);
    }

    #[test]
    fn conditional_jumps() {
        let src = "PUSHINT -1\nIFJMP yes\nPUSHINT 100\nRET\nyes: PUSHINT 0\nIFNOTJMP also\nTHROW 3\nalso: PUSHINT 200";
        let r = run_src(src, 1000);
        assert_eq!(r.stack_tail, vec![Value::Int(200)]);
    }

    #[test]
    fn ldu_pushes_rest_then_value() {
        let code = assemble("GETDATA\nCTOS\nLDU 8").unwrap();
        let data = Cell::from_uint(0xAB01, 16).unwrap();
        let r = execute(&code, &ComputeContext::detached(data, 1000));
        assert_eq!(r.stack_tail[0], Value::Int(0xAB));
        match &r.stack_tail[1] {
            Value::Slice(s) => assert_eq!(s.remaining_bits(), 8),
            other => panic!("expected slice, got {other:?}"),
        }
    }

    #[test]
    fn missing_entry_point() {
        let code = assemble("RET").unwrap();
        let r = execute_method(&code, "recv_external", &ComputeContext::detached(Cell::empty(), 100));
        assert_eq!(r.exit_code, exit::NO_ENTRY_POINT);
        assert_eq!(
            run_get_method(&code, &Cell::empty(), "nope").unwrap_err(),
            GetMethodError::UnknownMethod("nope".into())
        );
    }
}
