//! World snapshots, state fingerprints and cell-level state diffs.

use std::fmt::Write as _;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cells::Cell;
use crate::lifecycle::{parse_state, StateError, World};
use crate::vm::{render_values, Code, GetMethodError, Value};

/// SHA-256 over balance (u128 BE), data hash, code hash and tick (u64 BE).
pub fn fingerprint(world: &World) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(world.account.balance.to_be_bytes());
    h.update(world.account.data.hash());
    h.update(world.account.code.hash());
    h.update(world.now_tick.to_be_bytes());
    h.finalize().into()
}

/// Immutable image of a world. Cells are shared, everything else is copied.
#[derive(Debug, Clone)]
pub struct Snapshot {
    world: World,
    fingerprint: [u8; 32],
}

impl Snapshot {
    pub fn fingerprint(&self) -> [u8; 32] {
        self.fingerprint
    }

    pub fn world(&self) -> &World {
        &self.world
    }
}

pub fn snapshot(world: &World) -> Snapshot {
    Snapshot { world: world.clone(), fingerprint: fingerprint(world) }
}

pub fn restore(snap: &Snapshot) -> World {
    snap.world.clone()
}

/// The parts of a world a diff looks at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateView {
    pub balance: u128,
    pub data: Cell,
}

impl StateView {
    pub fn of(world: &World) -> StateView {
        StateView { balance: world.account.balance, data: world.account.data.clone() }
    }

    pub fn from_json(state_json: &str) -> Result<StateView, StateError> {
        let (balance, data, _) = parse_state(state_json)?;
        Ok(StateView { balance, data })
    }
}

impl From<&Snapshot> for StateView {
    fn from(s: &Snapshot) -> StateView {
        StateView::of(&s.world)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GetterDiff {
    pub method: String,
    pub left: String,
    pub right: String,
}

/// First divergent bit range `[start, end)` of one node, addressed by ref indices from the root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PathDiff {
    pub path: Vec<usize>,
    pub start: usize,
    pub end: usize,
    pub left: String,
    pub right: String,
}

impl PathDiff {
    pub fn path_label(&self) -> String {
        let mut s = String::from("data");
        for i in &self.path {
            write!(s, ".{i}").unwrap();
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct DiffReport {
    pub balance: Option<(u128, u128)>,
    pub getters: Vec<GetterDiff>,
    pub paths: Vec<PathDiff>,
}

impl DiffReport {
    pub fn identical(&self) -> bool {
        self.balance.is_none() && self.getters.is_empty() && self.paths.is_empty()
    }

    /// Swaps left and right everywhere.
    pub fn mirrored(&self) -> DiffReport {
        DiffReport {
            balance: self.balance.map(|(l, r)| (r, l)),
            getters: self
                .getters
                .iter()
                .map(|g| GetterDiff {
                    method: g.method.clone(),
                    left: g.right.clone(),
                    right: g.left.clone(),
                })
                .collect(),
            paths: self
                .paths
                .iter()
                .map(|p| PathDiff { left: p.right.clone(), right: p.left.clone(), ..p.clone() })
                .collect(),
        }
    }

    pub fn render(&self) -> String {
        if self.identical() {
            return "States identical\n".to_string();
        }
        let mut out = String::from("State difference detected:\n");
        if let Some((l, r)) = self.balance {
            writeln!(out, "- balance: {l} vs {r}").unwrap();
        }
        for g in &self.getters {
            writeln!(out, "- {}: {} vs {}", g.method, g.left, g.right).unwrap();
        }
        for p in &self.paths {
            writeln!(out, "- {} bits {}..{}: {} vs {}", p.path_label(), p.start, p.end, p.left, p.right)
                .unwrap();
        }
        out
    }
}

fn render_getter(result: &Result<Vec<Value>, GetMethodError>) -> String {
    match result {
        Ok(values) => render_values(values),
        Err(GetMethodError::Failed { exit_code, .. }) => format!("<exit {exit_code}>"),
        Err(GetMethodError::UnknownMethod(_)) => "<missing>".to_string(),
    }
}

fn same_results(a: &Result<Vec<Value>, GetMethodError>, b: &Result<Vec<Value>, GetMethodError>) -> bool {
    match (a, b) {
        (Ok(x), Ok(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.same_as(q)),
        (Err(x), Err(y)) => x == y,
        _ => false,
    }
}

fn walk(left: Option<&Cell>, right: Option<&Cell>, path: &mut Vec<usize>, out: &mut Vec<PathDiff>) {
    match (left, right) {
        (None, None) => {}
        (Some(l), Some(r)) => {
            if l == r {
                return;
            }
            let common = l.bit_len().min(r.bit_len());
            let first = (0..common).find(|&i| l.bit(i) != r.bit(i));
            let range = if l.bit_len() != r.bit_len() {
                Some((first.unwrap_or(common), l.bit_len().max(r.bit_len())))
            } else {
                first.map(|f| (f, (0..common).rev().find(|&i| l.bit(i) != r.bit(i)).unwrap() + 1))
            };
            if let Some((start, end)) = range {
                out.push(PathDiff {
                    path: path.clone(),
                    start,
                    end,
                    left: l.render_bits(start, end),
                    right: r.render_bits(start, end),
                });
            }
            for i in 0..l.refs().len().max(r.refs().len()) {
                path.push(i);
                walk(l.refs().get(i), r.refs().get(i), path, out);
                path.pop();
            }
        }
        (l, r) => {
            let describe = |c: Option<&Cell>| match c {
                Some(c) => c.render_bits(0, c.bit_len()),
                None => "(none)".to_string(),
            };
            let end = l.or(r).map(Cell::bit_len).unwrap_or(0);
            out.push(PathDiff { path: path.clone(), start: 0, end, left: describe(l), right: describe(r) });
        }
    }
}

/// Compares balances, every get-method of `code`, and the two data trees node by node.
pub fn diff(left: &StateView, right: &StateView, code: &Code) -> DiffReport {
    let mut report = DiffReport::default();
    if left.balance != right.balance {
        report.balance = Some((left.balance, right.balance));
    }
    for method in code.get_methods() {
        let l = crate::vm::run_get_method(code, &left.data, method);
        let r = crate::vm::run_get_method(code, &right.data, method);
        if !same_results(&l, &r) {
            report.getters.push(GetterDiff {
                method: method.to_string(),
                left: render_getter(&l),
                right: render_getter(&r),
            });
        }
    }
    walk(Some(&left.data), Some(&right.data), &mut Vec::new(), &mut report.paths);
    report
}

pub fn diff_worlds(left: &World, right: &World) -> DiffReport {
    diff(&StateView::of(left), &StateView::of(right), &left.account.code)
}

pub fn diff_state_files(left_json: &str, right_json: &str, code: &Code) -> Result<DiffReport, StateError> {
    Ok(diff(&StateView::from_json(left_json)?, &StateView::from_json(right_json)?, code))
}
