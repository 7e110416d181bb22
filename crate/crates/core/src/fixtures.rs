//! The bundled deposit-pool contract and helpers for building its messages.

use std::sync::{Arc, OnceLock};

use crate::cells::{Cell, Slice};
use crate::lifecycle::World;
use crate::queue::{address_slice, Message, MessageKind};
use crate::vm::{assemble, Code, Value};

pub const DEPOSIT_POOL_SOURCE: &str = include_str!("../fixtures/deposit_pool.asm");

pub const OP_ENLIST: u32 = 1;
pub const OP_CLAIM: u32 = 2;
pub const ALICE: u64 = 1;
pub const BOB: u64 = 2;
pub const DEFAULT_DEPOSIT: u128 = 10_000_000;

/// The assembled deposit pool, shared process-wide.
pub fn deposit_pool() -> Arc<Code> {
    static CODE: OnceLock<Arc<Code>> = OnceLock::new();
    CODE.get_or_init(|| Arc::new(assemble(DEPOSIT_POOL_SOURCE).expect("bundled contract assembles"))).clone()
}

/// 32-bit op-code body.
pub fn op_body(op: u32) -> Cell {
    Cell::from_uint(op as u128, 32).expect("32 bits fit")
}

pub fn enlist(id: u64, sender: u64, value: u128, name: &str) -> Message {
    Message {
        id,
        kind: MessageKind::Internal,
        body: op_body(OP_ENLIST),
        value,
        sender_id: sender,
        name: Some(name.to_string()),
        bounceable: true,
    }
}

pub fn claim(id: u64, sender: u64, value: u128, name: &str) -> Message {
    Message { body: op_body(OP_CLAIM), ..enlist(id, sender, value, name) }
}

/// Unowned pool with zero balance and empty storage.
pub fn fresh_world() -> World {
    World::new(0, deposit_pool(), Cell::empty())
}

/// The three-message race: ENLIST Alice, ENLIST Bob, CLAIM Alice.
pub fn race_scenario() -> Vec<Message> {
    vec![
        enlist(1, ALICE, DEFAULT_DEPOSIT, "ENLIST Alice"),
        enlist(2, BOB, DEFAULT_DEPOSIT, "ENLIST Bob"),
        claim(3, ALICE, 0, "CLAIM Alice"),
    ]
}

/// Decodes `get_state` output into (pool balance, owner slice).
pub fn decode_state(values: &[Value]) -> Option<(i128, Slice)> {
    match values {
        [Value::Int(balance), Value::Slice(owner)] => Some((*balance, owner.clone())),
        _ => None,
    }
}

/// Storage cell as the contract writes it.
pub fn pool_data(balance: u64, owner: Option<u64>) -> Cell {
    let mut b = crate::cells::Builder::new();
    b.store_uint(balance as u128, 64).expect("64 bits fit");
    if let Some(id) = owner {
        b.store_slice(&address_slice(id)).expect("address fits");
    }
    b.build()
}
