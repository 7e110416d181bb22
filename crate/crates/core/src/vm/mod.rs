//! Reduced stack machine for the compute phase.
//!
//! Contracts are written in a line-oriented assembly (see [`assemble`]) and
//! run by [`execute`] against a [`ComputeContext`]. Every instruction charges
//! its gas before it runs; failures surface as nonzero exit codes, never as
//! Rust errors.

mod assembler;
mod interpreter;

use std::collections::BTreeMap;
use std::fmt;

use sha2::{Digest, Sha256};

use crate::cells::{Builder, Cell, Slice};

pub use assembler::{assemble, AsmError};
pub use interpreter::{execute, execute_method, run_get_method, GetMethodError, GETTER_GAS_LIMIT};

/// Entry point for inbound internal messages.
pub const RECV_INTERNAL: &str = "recv_internal";
/// Entry point for inbound external messages.
pub const RECV_EXTERNAL: &str = "recv_external";

/// Exit codes reported in [`ComputeResult::exit_code`].
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const STACK_UNDERFLOW: i32 = 2;
    pub const INTEGER_OVERFLOW: i32 = 4;
    pub const RANGE_CHECK: i32 = 5;
    pub const TYPE_CHECK: i32 = 7;
    pub const CELL_OVERFLOW: i32 = 8;
    pub const CELL_UNDERFLOW: i32 = 9;
    pub const NO_ENTRY_POINT: i32 = 11;
    pub const OUT_OF_GAS: i32 = 13;
}

/// SENDMSG flag: the outbound message is bounceable.
pub const SEND_BOUNCEABLE: i128 = 1;
/// SENDMSG flag: carry the whole remaining account balance (value operand ignored).
pub const SEND_CARRY_ALL: i128 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Instruction {
    PushInt(i128),
    PushNullSlice,
    Dup,
    Drop,
    Swap,
    Add,
    Sub,
    Mul,
    EqInt,
    Less,
    SliceLen,
    EqSlice,
    Ldu(u32),
    Stu(u32),
    StSlice,
    NewC,
    EndC,
    Ctos,
    GetData,
    SetData,
    Sender,
    MsgValue,
    Body,
    SendMsg,
    Jmp(usize),
    IfJmp(usize),
    IfNotJmp(usize),
    Throw(u16),
    Ret,
}

impl Instruction {
    pub fn gas(&self) -> u64 {
        use Instruction::*;
        match self {
            PushInt(_) | PushNullSlice => 10,
            Dup | Drop | Swap => 5,
            Add | Sub | Mul | EqInt | Less | SliceLen => 10,
            EqSlice => 15,
            Ldu(_) | Stu(_) => 15,
            StSlice | NewC => 20,
            EndC => 100,
            Ctos => 15,
            GetData | SetData => 25,
            Sender | MsgValue | Body => 10,
            SendMsg => 50,
            Jmp(_) | IfJmp(_) | IfNotJmp(_) | Throw(_) => 10,
            Ret => 5,
        }
    }

    pub fn mnemonic(&self) -> &'static str {
        use Instruction::*;
        match self {
            PushInt(_) => "PUSHINT",
            PushNullSlice => "PUSHNULLSLICE",
            Dup => "DUP",
            Drop => "DROP",
            Swap => "SWAP",
            Add => "ADD",
            Sub => "SUB",
            Mul => "MUL",
            EqInt => "EQINT",
            Less => "LESS",
            SliceLen => "SLICELEN",
            EqSlice => "EQSLICE",
            Ldu(_) => "LDU",
            Stu(_) => "STU",
            StSlice => "STSLICE",
            NewC => "NEWC",
            EndC => "ENDC",
            Ctos => "CTOS",
            GetData => "GETDATA",
            SetData => "SETDATA",
            Sender => "SENDER",
            MsgValue => "MSGVALUE",
            Body => "BODY",
            SendMsg => "SENDMSG",
            Jmp(_) => "JMP",
            IfJmp(_) => "IFJMP",
            IfNotJmp(_) => "IFNOTJMP",
            Throw(_) => "THROW",
            Ret => "RET",
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Instruction::*;
        match self {
            PushInt(v) => write!(f, "PUSHINT {v}"),
            Ldu(n) | Stu(n) => write!(f, "{} {n}", self.mnemonic()),
            Throw(n) => write!(f, "THROW {n}"),
            Jmp(t) | IfJmp(t) | IfNotJmp(t) => write!(f, "{} @{t}", self.mnemonic()),
            _ => f.write_str(self.mnemonic()),
        }
    }
}

/// Assembled program: instructions plus the label, method and line tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Code {
    source: String,
    instructions: Vec<Instruction>,
    labels: BTreeMap<String, usize>,
    methods: BTreeMap<String, usize>,
    lines: Vec<usize>,
    source_hash: [u8; 32],
}

impl Code {
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn label(&self, name: &str) -> Option<usize> {
        self.labels.get(name).copied()
    }

    pub fn method(&self, name: &str) -> Option<usize> {
        self.methods.get(name).copied()
    }

    pub fn methods(&self) -> impl Iterator<Item = (&str, usize)> {
        self.methods.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Read-only entry points: every `.method` except the message receivers.
    pub fn get_methods(&self) -> impl Iterator<Item = &str> {
        self.methods.keys().map(String::as_str).filter(|m| *m != RECV_INTERNAL && *m != RECV_EXTERNAL)
    }

    /// Source line (1-based) of instruction `index`.
    pub fn line_of(&self, index: usize) -> Option<usize> {
        self.lines.get(index).copied()
    }

    /// SHA-256 of the assembly source text.
    pub fn hash(&self) -> [u8; 32] {
        self.source_hash
    }

    /// Lowercase hex of the UTF-8 source, as stored in state files.
    pub fn to_hex(&self) -> String {
        hex::encode(self.source.as_bytes())
    }

    /// Resolved listing, one `index: instruction` per line with jump targets as indices.
    pub fn listing(&self) -> String {
        let mut out = String::new();
        for (i, instr) in self.instructions.iter().enumerate() {
            for (name, _) in self.methods.iter().filter(|(_, at)| **at == i) {
                out.push_str(&format!(".method {name}\n"));
            }
            out.push_str(&format!("{i}: {instr}\n"));
        }
        out
    }

    pub(crate) fn new(
        source: String,
        instructions: Vec<Instruction>,
        labels: BTreeMap<String, usize>,
        methods: BTreeMap<String, usize>,
        lines: Vec<usize>,
    ) -> Code {
        let source_hash = Sha256::digest(source.as_bytes()).into();
        Code { source, instructions, labels, methods, lines, source_hash }
    }
}

/// A stack entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Int(i128),
    Cell(Cell),
    Slice(Slice),
    Builder(Builder),
}

impl Value {
    /// Equality that ignores how a slice was reached (compares unread contents).
    pub fn same_as(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Slice(a), Value::Slice(b)) => a.contents_eq(b),
            (a, b) => a == b,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Slice(s) => f.write_str(&s.render()),
            Value::Cell(c) => write!(f, "cell{}", c.render_bits(0, c.bit_len())),
            Value::Builder(b) => {
                let c = b.build();
                write!(f, "builder{}", c.render_bits(0, c.bit_len()))
            }
        }
    }
}

/// Renders a value list as `(a, b, ...)`.
pub fn render_values(values: &[Value]) -> String {
    let parts: Vec<String> = values.iter().map(Value::to_string).collect();
    format!("({})", parts.join(", "))
}

/// Inputs to one compute phase.
#[derive(Debug, Clone)]
pub struct ComputeContext {
    pub data: Cell,
    pub sender: Slice,
    pub msg_value: u128,
    pub body: Slice,
    pub gas_limit: u64,
}

impl ComputeContext {
    /// Context with no message attached, used for get-methods.
    pub fn detached(data: Cell, gas_limit: u64) -> ComputeContext {
        ComputeContext { data, sender: Slice::empty(), msg_value: 0, body: Slice::empty(), gas_limit }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutboundAction {
    pub dest: Slice,
    pub value: u128,
    pub body: Cell,
    pub bounceable: bool,
    pub carry_all: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComputeResult {
    pub exit_code: i32,
    pub gas_used: u64,
    /// Committed storage; `None` unless `exit_code == 0`.
    pub new_data: Option<Cell>,
    pub actions: Vec<OutboundAction>,
    /// Remaining stack, top first.
    pub stack_tail: Vec<Value>,
}

impl ComputeResult {
    pub fn success(&self) -> bool {
        self.exit_code == exit::SUCCESS
    }
}
