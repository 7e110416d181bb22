//! Interactive debug session: the command engine behind the `racemag` REPL
//! and the HTTP server.
//!
//! Every command either completes or leaves the session untouched.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::Engine as _;
use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::cells::Cell;
use crate::fixtures;
use crate::lifecycle::{
    load_world_with, run_transaction, save_world, ActionPhase, FeeSchedule, TransactionRecord, World,
};
use crate::queue::{apply_policy, parse_queue_with, queue_to_json, Message, OrderingPolicy, Rng};
use crate::snapshot::diff_state_files;
use crate::vm::{assemble, render_values, Code};

pub const COMPILED_ARTIFACT: &str = "racemag.compiled.json";
pub const TMPDIR_ENV: &str = "RACEMAG_TMPDIR";

/// The command set with one-line descriptions, in `help` order.
pub const COMMANDS: [(&str, &str); 17] = [
    ("run next", "Process the next message in the queue and show the transaction"),
    ("run message <id>", "Process the queued message with this id"),
    ("continue", "Process all remaining messages"),
    ("queue list", "Show the message queue"),
    ("set queue --order <reverse|random>", "Reverse or shuffle the queue"),
    ("add messages <path>", "Append messages from a queue JSON file"),
    ("delete message <id>", "Remove a message from the queue"),
    ("script load <path>", "Load an ordering policy file"),
    ("script run", "Apply the loaded ordering policy to the queue"),
    ("show state", "Show balance, storage and get-method results"),
    ("show transactions", "Show the transaction log"),
    ("show message log", "Show processed messages"),
    ("load state <path>", "Replace the contract state from a state JSON file"),
    ("save state <path>", "Write the contract state to a JSON file"),
    ("diff <path1> <path2>", "Compare two saved contract states"),
    ("exit", "Leave the console"),
    ("help", "Show this list"),
];

#[derive(Debug, Error)]
#[error("{0}")]
pub struct StartupError(pub String);

/// Options for starting a session from files.
#[derive(Debug, Clone, Default)]
pub struct StartOptions {
    pub contract: PathBuf,
    pub init_state: Option<PathBuf>,
    pub queue: Option<PathBuf>,
    pub fees: Option<PathBuf>,
    pub seed: u64,
    /// Where the compiled artifact goes; defaults to `$RACEMAG_TMPDIR` or `tmp`.
    pub tmp_dir: Option<PathBuf>,
}

fn read_file(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => format!("{}: no such file", path.display()),
        _ => format!("{}: {e}", path.display()),
    })
}

pub fn default_tmp_dir() -> PathBuf {
    std::env::var_os(TMPDIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("tmp"))
}

/// `{"code": base64 of the resolved listing, "methods": {name: index}, "source_sha256": hex}`.
pub fn compiled_artifact(code: &Code) -> String {
    let methods: serde_json::Map<String, Json> =
        code.methods().map(|(n, i)| (n.to_string(), json!(i))).collect();
    let artifact = json!({
        "code": base64::engine::general_purpose::STANDARD.encode(code.listing()),
        "methods": methods,
        "source_sha256": hex::encode(code.hash()),
    });
    let mut text = serde_json::to_string_pretty(&artifact).expect("artifact serializes");
    text.push('\n');
    text
}

/// Output of one command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandOutput {
    pub text: String,
    pub exit: bool,
    pub error: bool,
}

impl CommandOutput {
    fn ok(text: String) -> CommandOutput {
        CommandOutput { text, exit: false, error: false }
    }

    fn err(message: impl std::fmt::Display) -> CommandOutput {
        CommandOutput { text: format!("error: {message}\n"), exit: false, error: true }
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    code: Arc<Code>,
    world: World,
    queue: Vec<Message>,
    rng: Rng,
    fees: FeeSchedule,
    policy: Option<OrderingPolicy>,
    transcript: Vec<(String, String)>,
}

impl Session {
    /// Fresh session over `code` with zero balance and empty storage.
    pub fn new(code: Arc<Code>, seed: u64) -> Session {
        Session {
            world: World::new(0, code.clone(), Cell::empty()),
            code,
            queue: Vec::new(),
            rng: Rng::new(seed),
            fees: FeeSchedule::default(),
            policy: None,
            transcript: Vec::new(),
        }
    }

    /// Builds a session from in-memory sources. `contract` defaults to the bundled pool.
    pub fn from_sources(
        contract: Option<&str>,
        state_json: Option<&str>,
        queue_json: Option<&str>,
        fees: FeeSchedule,
        seed: u64,
    ) -> Result<Session, StartupError> {
        let code = match contract {
            None => fixtures::deposit_pool(),
            Some(src) => Arc::new(assemble(src).map_err(|e| StartupError(format!("contract: {e}")))?),
        };
        let mut session = Session::new(code, seed);
        session.fees = fees;
        if let Some(state) = state_json {
            session.world =
                load_world_with(state, &session.code).map_err(|e| StartupError(format!("state: {e}")))?;
        }
        if let Some(q) = queue_json {
            session.queue = parse_queue_with(q, &mut session.rng, &BTreeSet::new())
                .map_err(|e| StartupError(format!("queue: {e}")))?;
        }
        Ok(session)
    }

    /// Reads the start files, writes the compiled artifact and returns the session with its banner.
    pub fn start(opts: &StartOptions) -> Result<(Session, String), StartupError> {
        let contract = read_file(&opts.contract).map_err(StartupError)?;
        let code =
            assemble(&contract).map_err(|e| StartupError(format!("{}: {e}", opts.contract.display())))?;
        let state = opts.init_state.as_deref().map(read_file).transpose().map_err(StartupError)?;
        let queue = opts.queue.as_deref().map(read_file).transpose().map_err(StartupError)?;
        let fees = match &opts.fees {
            None => FeeSchedule::default(),
            Some(p) => {
                let text = read_file(p).map_err(StartupError)?;
                FeeSchedule::from_json(&text).map_err(|e| StartupError(format!("{}: {e}", p.display())))?
            }
        };
        let code = Arc::new(code);
        let mut session = Session::new(code.clone(), opts.seed);
        session.fees = fees;
        if let (Some(text), Some(path)) = (&state, &opts.init_state) {
            session.world =
                load_world_with(text, &code).map_err(|e| StartupError(format!("{}: {e}", path.display())))?;
        }
        if let (Some(text), Some(path)) = (&queue, &opts.queue) {
            session.queue = parse_queue_with(text, &mut session.rng, &BTreeSet::new())
                .map_err(|e| StartupError(format!("{}: {e}", path.display())))?;
        }

        let tmp = opts.tmp_dir.clone().unwrap_or_else(default_tmp_dir);
        let artifact = tmp.join(COMPILED_ARTIFACT);
        fs::create_dir_all(&tmp)
            .and_then(|_| fs::write(&artifact, compiled_artifact(&code)))
            .map_err(|e| StartupError(format!("{}: {e}", artifact.display())))?;

        let mut banner = String::from("racemag debug console\n");
        let methods: Vec<&str> = code.methods().map(|(n, _)| n).collect();
        writeln!(
            banner,
            "contract: {} ({} instructions; methods: {})",
            opts.contract.display(),
            code.len(),
            methods.join(", ")
        )
        .unwrap();
        writeln!(banner, "compiled: {}", artifact.display()).unwrap();
        writeln!(banner, "balance: {}", session.world.balance()).unwrap();
        banner.push_str(&session.queue_text());
        banner.push_str("type 'help' for commands\n");
        Ok((session, banner))
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn queue(&self) -> &[Message] {
        &self.queue
    }

    pub fn code(&self) -> &Arc<Code> {
        &self.code
    }

    pub fn fees(&self) -> &FeeSchedule {
        &self.fees
    }

    /// Every command line run so far with its output.
    pub fn transcript(&self) -> &[(String, String)] {
        &self.transcript
    }

    /// Runs one command line and records it in the transcript.
    pub fn execute(&mut self, line: &str) -> CommandOutput {
        let out = self.dispatch(line.trim());
        self.transcript.push((line.to_string(), out.text.clone()));
        out
    }

    fn dispatch(&mut self, line: &str) -> CommandOutput {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            [] => CommandOutput::ok(String::new()),
            ["run", "next"] => self.run_next(),
            ["run", "message", id] => match parse_id(id) {
                Ok(id) => self.run_message(id),
                Err(e) => e,
            },
            ["continue"] => self.run_all(),
            ["queue", "list"] => CommandOutput::ok(self.queue_text()),
            ["set", "queue", "--order", order] => self.set_order(order),
            ["add", "messages", _, ..] => self.add_messages(Path::new(rest_after(line, 2))),
            ["delete", "message", id] => match parse_id(id) {
                Ok(id) => self.delete_message(id),
                Err(e) => e,
            },
            ["script", "load", _, ..] => self.load_script(Path::new(rest_after(line, 2))),
            ["script", "run"] => self.run_script(),
            ["show", "state"] => CommandOutput::ok(self.state_text()),
            ["show", "transactions"] => CommandOutput::ok(self.transactions_text()),
            ["show", "message", "log"] => CommandOutput::ok(self.message_log_text()),
            ["load", "state", _, ..] => self.load_state(Path::new(rest_after(line, 2))),
            ["save", "state", _, ..] => self.save_state(Path::new(rest_after(line, 2))),
            ["diff", a, b] => self.diff(Path::new(a), Path::new(b)),
            ["exit"] => CommandOutput { text: "bye\n".into(), exit: true, error: false },
            ["help"] => CommandOutput::ok(help_text()),
            _ => CommandOutput::err(format!("unknown command '{line}'; type 'help' for the command list")),
        }
    }

    fn run(&mut self, index: usize) -> String {
        let msg = self.queue.remove(index);
        let record = run_transaction(&mut self.world, &msg, &self.fees);
        render_record(&record, &msg)
    }

    fn run_next(&mut self) -> CommandOutput {
        if self.queue.is_empty() {
            return CommandOutput::err("queue is empty");
        }
        CommandOutput::ok(self.run(0))
    }

    fn run_message(&mut self, id: u64) -> CommandOutput {
        match self.queue.iter().position(|m| m.id == id) {
            Some(i) => CommandOutput::ok(self.run(i)),
            None => CommandOutput::err(format!("no message with id {id}")),
        }
    }

    fn run_all(&mut self) -> CommandOutput {
        let mut out = String::new();
        let n = self.queue.len();
        while !self.queue.is_empty() {
            out.push_str(&self.run(0));
        }
        writeln!(out, "processed {n} message{}", if n == 1 { "" } else { "s" }).unwrap();
        CommandOutput::ok(out)
    }

    /// Applies `policy`, rejecting it without side effects if it does not fit the queue.
    pub fn reorder(&mut self, policy: &OrderingPolicy) -> Result<(), String> {
        self.queue = apply_policy(&self.queue, policy).map_err(|e| e.to_string())?;
        Ok(())
    }

    fn set_order(&mut self, order: &str) -> CommandOutput {
        match order {
            "reverse" => self.queue.reverse(),
            "random" => crate::queue::fisher_yates(&mut self.queue, &mut self.rng),
            other => {
                return CommandOutput::err(format!("unknown order '{other}' (expected reverse or random)"))
            }
        }
        CommandOutput::ok(format!("queue order: {}\n", id_list(&self.queue)))
    }

    fn add_messages(&mut self, path: &Path) -> CommandOutput {
        let text = match read_file(path) {
            Ok(t) => t,
            Err(e) => return CommandOutput::err(e),
        };
        let taken: BTreeSet<u64> = self.queue.iter().map(|m| m.id).collect();
        let mut rng = self.rng.clone();
        match parse_queue_with(&text, &mut rng, &taken) {
            Ok(msgs) => {
                self.rng = rng;
                let n = msgs.len();
                self.queue.extend(msgs);
                CommandOutput::ok(format!("added {n} message{} (queue: {})\n", plural(n), self.queue.len()))
            }
            Err(e) => CommandOutput::err(format!("{}: {e}", path.display())),
        }
    }

    fn delete_message(&mut self, id: u64) -> CommandOutput {
        match self.queue.iter().position(|m| m.id == id) {
            Some(i) => {
                self.queue.remove(i);
                CommandOutput::ok(format!("deleted message {id}\n"))
            }
            None => CommandOutput::err(format!("no message with id {id}")),
        }
    }

    fn load_script(&mut self, path: &Path) -> CommandOutput {
        let policy = read_file(path)
            .and_then(|t| OrderingPolicy::from_json(&t).map_err(|e| format!("{}: {e}", path.display())));
        match policy {
            Ok(p) => {
                let name = p.name();
                self.policy = Some(p);
                CommandOutput::ok(format!("loaded policy {name}\n"))
            }
            Err(e) => CommandOutput::err(e),
        }
    }

    fn run_script(&mut self) -> CommandOutput {
        let Some(policy) = self.policy.clone() else {
            return CommandOutput::err("no script loaded; use 'script load <path>'");
        };
        match self.reorder(&policy) {
            Ok(()) => CommandOutput::ok(format!("applied {}: {}\n", policy.name(), id_list(&self.queue))),
            Err(e) => CommandOutput::err(e),
        }
    }

    fn load_state(&mut self, path: &Path) -> CommandOutput {
        let loaded = read_file(path)
            .and_then(|t| load_world_with(&t, &self.code).map_err(|e| format!("{}: {e}", path.display())));
        match loaded {
            Ok(world) => {
                self.code = world.account.code.clone();
                self.world = world;
                CommandOutput::ok(format!(
                    "loaded state from {} (balance {})\n",
                    path.display(),
                    self.world.balance()
                ))
            }
            Err(e) => CommandOutput::err(e),
        }
    }

    fn save_state(&mut self, path: &Path) -> CommandOutput {
        let written = match path.parent().filter(|p| !p.as_os_str().is_empty()) {
            Some(dir) => fs::create_dir_all(dir).and_then(|_| fs::write(path, save_world(&self.world))),
            None => fs::write(path, save_world(&self.world)),
        };
        match written {
            Ok(()) => CommandOutput::ok(format!("saved state to {}\n", path.display())),
            Err(e) => CommandOutput::err(format!("{}: {e}", path.display())),
        }
    }

    fn diff(&self, a: &Path, b: &Path) -> CommandOutput {
        let texts = read_file(a).and_then(|ta| read_file(b).map(|tb| (ta, tb)));
        match texts.and_then(|(ta, tb)| diff_state_files(&ta, &tb, &self.code).map_err(|e| e.to_string())) {
            Ok(report) => CommandOutput::ok(report.render()),
            Err(e) => CommandOutput::err(e),
        }
    }

    pub fn queue_text(&self) -> String {
        if self.queue.is_empty() {
            return "queue: empty\n".to_string();
        }
        let mut out = format!("queue: {} message{}\n", self.queue.len(), plural(self.queue.len()));
        writeln!(out, "{:>4} {:>6}  {:<11} {:>20} {:>14}  name", "#", "id", "type", "sender", "value")
            .unwrap();
        for (i, m) in self.queue.iter().enumerate() {
            writeln!(
                out,
                "{:>4} {:>6}  {:<11} {:>20} {:>14}  {}",
                i + 1,
                m.id,
                m.kind.as_str(),
                m.sender_id,
                m.value,
                m.label()
            )
            .unwrap();
        }
        out
    }

    pub fn state_text(&self) -> String {
        let w = &self.world;
        let (cells, bits) = w.data().tree_stats();
        let mut out = String::new();
        writeln!(out, "balance: {}", w.balance()).unwrap();
        writeln!(out, "tick: {}", w.now_tick).unwrap();
        writeln!(out, "storage debt: {}", if w.account.storage_debt { "yes" } else { "no" }).unwrap();
        writeln!(out, "data: {} ({cells} cells, {bits} bits)", w.data().to_base64()).unwrap();
        writeln!(out, "data hash: {}", hex::encode(w.data().hash())).unwrap();
        for method in self.code.get_methods() {
            match w.get(method) {
                Ok(values) => writeln!(out, "{method}: {}", render_values(&values)).unwrap(),
                Err(e) => writeln!(out, "{method}: {e}").unwrap(),
            }
        }
        writeln!(out, "outbound messages: {}", w.emitted.len()).unwrap();
        writeln!(out, "fees collected: {}", w.fees_collected).unwrap();
        out
    }

    pub fn transactions_text(&self) -> String {
        if self.world.tx_log.is_empty() {
            return "no transactions\n".to_string();
        }
        let mut out = format!(
            "{:>4} {:>6}  {:<16} {:>4} {:>8} {:>8}  {:<8} {:<6} {:>14}\n",
            "tick", "msg", "name", "exit", "gas", "storage", "action", "bounce", "balance"
        );
        for r in &self.world.tx_log {
            writeln!(
                out,
                "{:>4} {:>6}  {:<16} {:>4} {:>8} {:>8}  {:<8} {:<6} {:>14}",
                r.tick,
                r.message_id,
                r.message_name.as_deref().unwrap_or("-"),
                r.compute.exit_code,
                r.compute.gas_used,
                r.storage_fee,
                action_word(&r.action),
                if r.bounce_emitted { "yes" } else { "no" },
                r.balance_after
            )
            .unwrap();
        }
        out
    }

    pub fn message_log_text(&self) -> String {
        if self.world.msg_log.is_empty() {
            return "message log: empty\n".to_string();
        }
        let mut out = String::new();
        for (i, m) in self.world.msg_log.iter().enumerate() {
            writeln!(out, "{:>4}. {}", i + 1, describe_message(m)).unwrap();
        }
        out
    }

    pub fn state_json(&self) -> Json {
        let w = &self.world;
        let getters: serde_json::Map<String, Json> = self
            .code
            .get_methods()
            .map(|m| {
                let v = match w.get(m) {
                    Ok(values) => json!(values.iter().map(ToString::to_string).collect::<Vec<_>>()),
                    Err(e) => json!({ "error": e.to_string() }),
                };
                (m.to_string(), v)
            })
            .collect();
        json!({
            "balance": w.balance().to_string(),
            "data": w.data().to_base64(),
            "data_hash": hex::encode(w.data().hash()),
            "tick": w.now_tick,
            "storage_debt": w.account.storage_debt,
            "fees_collected": w.fees_collected.to_string(),
            "emitted": w.emitted.len(),
            "getters": getters,
        })
    }

    pub fn queue_json(&self) -> Json {
        queue_to_json(&self.queue)
    }

    pub fn log_json(&self) -> Json {
        json!({
            "transactions": serde_json::to_value(&self.world.tx_log).expect("records serialize"),
            "messages": queue_to_json(&self.world.msg_log),
        })
    }
}

fn plural(n: usize) -> &'static str {
    if n == 1 {
        ""
    } else {
        "s"
    }
}

/// Text after the first `n` whitespace-separated words, so paths may contain spaces.
fn rest_after(line: &str, n: usize) -> &str {
    let mut rest = line;
    for _ in 0..n {
        rest = rest.trim_start();
        rest = &rest[rest.find(char::is_whitespace).unwrap_or(rest.len())..];
    }
    rest.trim()
}

fn parse_id(text: &str) -> Result<u64, CommandOutput> {
    text.parse().map_err(|_| CommandOutput::err(format!("invalid message id '{text}'")))
}

fn id_list(queue: &[Message]) -> String {
    if queue.is_empty() {
        return "(empty)".to_string();
    }
    queue.iter().map(|m| m.id.to_string()).collect::<Vec<_>>().join(", ")
}

fn action_word(a: &ActionPhase) -> String {
    match a {
        ActionPhase::Skipped => "skipped".into(),
        ActionPhase::Completed { sent } => format!("ok/{sent}"),
        ActionPhase::Failed { index } => format!("fail@{index}"),
    }
}

fn describe_message(m: &Message) -> String {
    format!(
        "id {} {} from {} value {} body {} ({})",
        m.id,
        m.kind.as_str(),
        m.sender_id,
        m.value,
        m.body.render_bits(0, m.body.bit_len()),
        m.label()
    )
}

/// Multi-line summary of one transaction, phase by phase.
pub fn render_record(r: &TransactionRecord, m: &Message) -> String {
    let mut out = String::new();
    writeln!(out, "transaction at tick {}: message {} ({})", r.tick, r.message_id, m.label()).unwrap();
    writeln!(out, "  message: {}", describe_message(m)).unwrap();
    writeln!(out, "  storage: fee {}{}", r.storage_fee, if r.storage_debt { " (debt)" } else { "" }).unwrap();
    writeln!(out, "  credit:  {}", r.credited).unwrap();
    writeln!(
        out,
        "  compute: exit {}, gas {}/{}, fee {}",
        r.compute.exit_code, r.compute.gas_used, r.compute.gas_limit, r.compute.gas_fee
    )
    .unwrap();
    let action = match r.action {
        ActionPhase::Skipped => "skipped".to_string(),
        ActionPhase::Completed { sent } => format!("ok, {sent} sent"),
        ActionPhase::Failed { index } => format!("failed at action {index}, rolled back"),
    };
    writeln!(out, "  action:  {action}").unwrap();
    writeln!(out, "  bounce:  {}", if r.bounce_emitted { "emitted" } else { "none" }).unwrap();
    writeln!(out, "  sent:    {} (+{} forward fees)", r.sent_value, r.forward_fees).unwrap();
    writeln!(out, "  balance: {} -> {}", r.balance_before, r.balance_after).unwrap();
    writeln!(out, "  data hash: {}", hex::encode(r.data_hash_after)).unwrap();
    out
}

pub fn help_text() -> String {
    let width = COMMANDS.iter().map(|(c, _)| c.len()).max().unwrap_or(0);
    let mut out = String::from("commands:\n");
    for (cmd, desc) in COMMANDS {
        writeln!(out, "  {cmd:<width$}  {desc}").unwrap();
    }
    out
}
