//! Message-ordering race detection for a reduced, cell-based smart-contract
//! model.
//!
//! A [`World`] holds one contract account. Messages run through a five-phase
//! transaction ([`run_transaction`]); the [`queue`] module reorders pending
//! messages, [`snapshot`] fingerprints and diffs states, and [`harness`]
//! permutes queues until two orderings disagree.
//!
//! ```
//! use racemag_core::{fixtures, run_transaction, FeeSchedule};
//!
//! let mut world = fixtures::fresh_world();
//! for msg in fixtures::race_scenario() {
//!     run_transaction(&mut world, &msg, &FeeSchedule::free());
//! }
//! let (balance, _owner) = fixtures::decode_state(&world.get("get_state").unwrap()).unwrap();
//! assert_eq!(balance, 0);
//! ```

pub mod cells;
pub mod console;
pub mod fixtures;
pub mod harness;
pub mod lifecycle;
pub mod queue;
pub mod snapshot;
pub mod vm;

pub use cells::{Builder, Cell, CellError, Slice};
pub use console::{CommandOutput, Session, StartOptions, StartupError};
pub use harness::{
    enumerate_permutations, expected_iterations, run_experiment, run_trial, sweep_and_emit, Enumeration,
    ExperimentConfig, ExperimentSummary, HarnessError, TrialResult,
};
pub use lifecycle::{
    load_world, run_transaction, save_world, AccountState, FeeSchedule, StateError, TransactionRecord, World,
};
pub use queue::{
    apply_policy, fisher_yates, parse_queue, Message, MessageKind, OrderingPolicy, QueueError, Rng,
};
pub use snapshot::{diff, fingerprint, restore, snapshot, DiffReport, Snapshot, StateView};
pub use vm::{
    assemble, execute, run_get_method, AsmError, Code, ComputeContext, ComputeResult, Instruction, Value,
};
