//! Five-phase transaction execution over a single-contract world, plus the
//! state-file format.
//!
//! Each inbound message runs storage → credit → compute → action → bounce.
//! Every nanotoken that leaves the account is accounted for in the
//! [`TransactionRecord`]:
//!
//! ```text
//! balance_before + credited
//!     = balance_after + storage_fee + gas_fee + sent_value + forward_fees
//! ```

use std::sync::Arc;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::cells::{Builder, Cell, CellError, Slice};
use crate::queue::{address_slice, Message, MessageKind};
use crate::vm::{
    assemble, execute, execute_method, exit, run_get_method, AsmError, Code, ComputeContext, GetMethodError,
    Value, RECV_EXTERNAL,
};

/// Tag prepended to bounce bodies.
pub const BOUNCE_TAG: u32 = 0xFFFF_FFFF;
/// Bits of the original body echoed back in a bounce.
pub const BOUNCE_ECHO_BITS: usize = 224;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeeSchedule {
    /// Nanotokens per stored bit per tick.
    pub bit_price: u128,
    /// Nanotokens per stored cell per tick.
    pub cell_price: u128,
    /// Nanotokens per gas unit.
    pub gas_price: u128,
    /// Flat nanotokens per outbound message.
    pub fwd_fee: u128,
    pub compute_gas_cap: u64,
}

impl Default for FeeSchedule {
    fn default() -> Self {
        FeeSchedule { bit_price: 1, cell_price: 100, gas_price: 1, fwd_fee: 1000, compute_gas_cap: 1_000_000 }
    }
}

impl FeeSchedule {
    /// No storage, gas or forwarding charges.
    pub fn free() -> FeeSchedule {
        FeeSchedule { bit_price: 0, cell_price: 0, gas_price: 0, fwd_fee: 0, ..FeeSchedule::default() }
    }

    /// Parses a `fees.json` override; omitted fields keep their defaults.
    pub fn from_json(text: &str) -> Result<FeeSchedule, StateError> {
        serde_json::from_str(text).map_err(|e| StateError::Json(e.to_string()))
    }

    pub fn storage_fee(&self, data: &Cell, elapsed_ticks: u64) -> u128 {
        let (cells, bits) = data.tree_stats();
        let per_tick = (cells as u128)
            .saturating_mul(self.cell_price)
            .saturating_add((bits as u128).saturating_mul(self.bit_price));
        per_tick.saturating_mul(elapsed_ticks as u128)
    }

    pub fn gas_limit(&self, balance: u128) -> u64 {
        if self.gas_price == 0 {
            return self.compute_gas_cap;
        }
        let affordable = balance / self.gas_price;
        affordable.min(self.compute_gas_cap as u128) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccountState {
    pub balance: u128,
    pub code: Arc<Code>,
    pub data: Cell,
    pub storage_debt: bool,
    pub last_paid_tick: u64,
}

/// A message emitted by the contract (including bounces).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutboundMessage {
    /// Inbound message whose transaction produced this one.
    pub origin_id: u64,
    pub dest: Slice,
    pub value: u128,
    pub body: Cell,
    pub bounceable: bool,
    pub bounce: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ActionPhase {
    /// Compute failed, nothing to run.
    Skipped,
    Completed {
        sent: usize,
    },
    /// Action `index` could not be paid; all actions and the compute phase's
    /// storage update were rolled back.
    Failed {
        index: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComputeSummary {
    pub exit_code: i32,
    pub gas_limit: u64,
    pub gas_used: u64,
    pub gas_fee: u128,
}

fn hex_digest<S: Serializer>(digest: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(digest))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransactionRecord {
    pub tick: u64,
    pub message_id: u64,
    pub message_name: Option<String>,
    pub balance_before: u128,
    pub storage_fee: u128,
    pub storage_debt: bool,
    pub credited: u128,
    pub compute: ComputeSummary,
    pub action: ActionPhase,
    pub bounce_emitted: bool,
    /// Value carried by every message this transaction emitted.
    pub sent_value: u128,
    pub forward_fees: u128,
    pub balance_after: u128,
    #[serde(serialize_with = "hex_digest")]
    pub data_hash_after: [u8; 32],
}

impl TransactionRecord {
    pub fn compute_ok(&self) -> bool {
        self.compute.exit_code == exit::SUCCESS
    }

    pub fn action_ok(&self) -> bool {
        !matches!(self.action, ActionPhase::Failed { .. })
    }

    /// Right-hand side of the conservation identity.
    pub fn outflow(&self) -> u128 {
        self.balance_after + self.storage_fee + self.compute.gas_fee + self.sent_value + self.forward_fees
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct World {
    pub account: AccountState,
    pub now_tick: u64,
    pub fees_collected: u128,
    pub emitted: Vec<OutboundMessage>,
    pub tx_log: Vec<TransactionRecord>,
    pub msg_log: Vec<Message>,
}

impl World {
    pub fn new(balance: u128, code: Arc<Code>, data: Cell) -> World {
        World {
            account: AccountState { balance, code, data, storage_debt: false, last_paid_tick: 0 },
            now_tick: 0,
            fees_collected: 0,
            emitted: Vec::new(),
            tx_log: Vec::new(),
            msg_log: Vec::new(),
        }
    }

    pub fn balance(&self) -> u128 {
        self.account.balance
    }

    pub fn data(&self) -> &Cell {
        &self.account.data
    }

    pub fn code(&self) -> &Code {
        &self.account.code
    }

    pub fn get(&self, method: &str) -> Result<Vec<Value>, GetMethodError> {
        run_get_method(&self.account.code, &self.account.data, method)
    }

    /// Same account with the clock and all logs cleared.
    pub fn reset_logs(&self) -> World {
        World::new(self.account.balance, self.account.code.clone(), self.account.data.clone())
    }
}

fn bounce_body(original: &Cell) -> Cell {
    let mut b = Builder::new();
    b.store_uint(BOUNCE_TAG as u128, 32).expect("fits");
    let echo = original.bit_len().min(BOUNCE_ECHO_BITS);
    for i in 0..echo {
        b.store_bit(original.bit(i)).expect("32 + 224 bits fit");
    }
    b.build()
}

/// Runs one message through all five phases and appends the record to the world.
pub fn run_transaction(world: &mut World, msg: &Message, fees: &FeeSchedule) -> TransactionRecord {
    let balance_before = world.account.balance;
    let tick = world.now_tick;

    // storage
    let elapsed = tick.saturating_sub(world.account.last_paid_tick);
    let due = fees.storage_fee(&world.account.data, elapsed);
    let storage_fee = due.min(world.account.balance);
    world.account.balance -= storage_fee;
    world.account.storage_debt = due > storage_fee;
    world.account.last_paid_tick = tick;

    // credit
    let credited = match msg.kind {
        MessageKind::Internal => msg.value,
        MessageKind::ExternalIn => 0,
    };
    world.account.balance += credited;

    // compute
    let gas_limit = fees.gas_limit(world.account.balance);
    let ctx = ComputeContext {
        data: world.account.data.clone(),
        sender: address_slice(msg.sender_id),
        msg_value: credited,
        body: Slice::new(msg.body.clone()),
        gas_limit,
    };
    let result = match msg.kind {
        MessageKind::Internal => execute(&world.account.code, &ctx),
        MessageKind::ExternalIn => execute_method(&world.account.code, RECV_EXTERNAL, &ctx),
    };
    let gas_fee = (result.gas_used as u128 * fees.gas_price).min(world.account.balance);
    world.account.balance -= gas_fee;
    let pre_compute_data = world.account.data.clone();
    if let Some(data) = &result.new_data {
        world.account.data = data.clone();
    }

    // action
    let mut sent_value = 0u128;
    let mut forward_fees = 0u128;
    let action = if !result.success() {
        ActionPhase::Skipped
    } else {
        let checkpoint = (world.account.balance, world.emitted.len());
        let mut failed_at = None;
        for (index, a) in result.actions.iter().enumerate() {
            let balance = world.account.balance;
            let value = if a.carry_all { balance.checked_sub(fees.fwd_fee) } else { Some(a.value) };
            let Some(value) = value.filter(|v| v.checked_add(fees.fwd_fee).is_some_and(|t| t <= balance))
            else {
                failed_at = Some(index);
                break;
            };
            world.account.balance -= value + fees.fwd_fee;
            sent_value += value;
            forward_fees += fees.fwd_fee;
            world.emitted.push(OutboundMessage {
                origin_id: msg.id,
                dest: a.dest.clone(),
                value,
                body: a.body.clone(),
                bounceable: a.bounceable,
                bounce: false,
            });
        }
        match failed_at {
            None => ActionPhase::Completed { sent: result.actions.len() },
            Some(index) => {
                world.account.balance = checkpoint.0;
                world.emitted.truncate(checkpoint.1);
                world.account.data = pre_compute_data;
                sent_value = 0;
                forward_fees = 0;
                ActionPhase::Failed { index }
            }
        }
    };

    // bounce
    let failed = !result.success() || matches!(action, ActionPhase::Failed { .. });
    let mut bounce_emitted = false;
    if failed && msg.kind == MessageKind::Internal && msg.bounceable {
        let refundable = credited.saturating_sub(gas_fee);
        if refundable >= fees.fwd_fee && world.account.balance >= refundable {
            let value = refundable - fees.fwd_fee;
            world.account.balance -= refundable;
            sent_value += value;
            forward_fees += fees.fwd_fee;
            world.emitted.push(OutboundMessage {
                origin_id: msg.id,
                dest: address_slice(msg.sender_id),
                value,
                body: bounce_body(&msg.body),
                bounceable: false,
                bounce: true,
            });
            bounce_emitted = true;
        }
    }

    world.fees_collected += storage_fee + gas_fee + forward_fees;
    let record = TransactionRecord {
        tick,
        message_id: msg.id,
        message_name: msg.name.clone(),
        balance_before,
        storage_fee,
        storage_debt: world.account.storage_debt,
        credited,
        compute: ComputeSummary {
            exit_code: result.exit_code,
            gas_limit,
            gas_used: result.gas_used,
            gas_fee,
        },
        action,
        bounce_emitted,
        sent_value,
        forward_fees,
        balance_after: world.account.balance,
        data_hash_after: world.account.data.hash(),
    };
    world.tx_log.push(record.clone());
    world.msg_log.push(msg.clone());
    world.now_tick += 1;
    record
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateError {
    #[error("invalid state JSON: {0}")]
    Json(String),
    #[error("invalid balance '{0}': expected decimal nanotokens")]
    Balance(String),
    #[error("invalid data field: {0}")]
    Data(#[from] CellError),
    #[error("invalid code field: {0}")]
    Code(String),
    #[error("contract does not assemble: {0}")]
    Assembly(#[from] AsmError),
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    balance: String,
    data: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    code: Option<String>,
}

/// Balance and storage decoded from a state file, without assembling code.
pub fn parse_state(state_json: &str) -> Result<(u128, Cell, Option<String>), StateError> {
    let file: StateFile = serde_json::from_str(state_json).map_err(|e| StateError::Json(e.to_string()))?;
    let balance = file.balance.parse::<u128>().map_err(|_| StateError::Balance(file.balance.clone()))?;
    let data = Cell::from_base64(&file.data)?;
    let code = match file.code.as_deref().map(str::trim) {
        None | Some("") => None,
        Some(h) => {
            let bytes = hex::decode(h).map_err(|e| StateError::Code(format!("hex: {e}")))?;
            Some(String::from_utf8(bytes).map_err(|_| StateError::Code("source is not UTF-8".into()))?)
        }
    };
    Ok((balance, data, code))
}

/// Loads `{"balance", "data", "code"}`. The embedded code wins; `code_source`
/// is used when the file carries none.
pub fn load_world(state_json: &str, code_source: &str) -> Result<World, StateError> {
    let (balance, data, code) = parse_state(state_json)?;
    let code = assemble(code.as_deref().unwrap_or(code_source))?;
    Ok(World::new(balance, Arc::new(code), data))
}

/// Like [`load_world`] but reuses already-assembled code when the file has none.
pub fn load_world_with(state_json: &str, code: &Arc<Code>) -> Result<World, StateError> {
    let (balance, data, source) = parse_state(state_json)?;
    let code = match source {
        Some(src) if src != code.source() => Arc::new(assemble(&src)?),
        _ => code.clone(),
    };
    Ok(World::new(balance, code, data))
}

/// Canonical state file: pretty JSON with fields balance, data, code and a trailing newline.
pub fn save_world(world: &World) -> String {
    let file = StateFile {
        balance: world.account.balance.to_string(),
        data: world.account.data.to_base64(),
        code: Some(world.account.code.to_hex()),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("state serializes");
    text.push('\n');
    text
}
