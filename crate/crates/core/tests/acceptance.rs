//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::collections::{BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use racemag_core::cells::{Builder, Cell, Slice};
use racemag_core::console::Session;
use racemag_core::fixtures::{self, decode_state, BOB};
use racemag_core::harness::{
    default_sweep, expected_iterations_closed, expected_iterations_series, run_sweep, summaries_to_csv,
};
use racemag_core::lifecycle::{load_world, ActionPhase, OutboundMessage};
use racemag_core::queue::address_slice;
use racemag_core::*;

/// Fixed before any experiment was run.
const MASTER_SEED: u64 = 42;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn owner_and_balance(world: &World) -> (i128, Slice) {
    decode_state(&world.get("get_state").expect("get_state runs")).expect("get_state shape")
}

fn permutation_oracle() -> Outcome {
    let (e, took) = timed(|| {
        enumerate_permutations(&fixtures::race_scenario(), &fixtures::fresh_world(), &FeeSchedule::free())
    });
    let e = e.map_err(|err| err.to_string())?;
    let classes: Vec<String> = e
        .classes
        .iter()
        .map(|c| {
            let (bal, owner) = owner_and_balance(&c.final_world);
            format!("{:?} x{} -> ({bal}, {})", c.representative, c.count, owner.render())
        })
        .collect();
    let detail = format!("{} classes [{}] in {took:?}", e.classes.len(), classes.join("; "));
    check(took < Duration::from_secs(1), format!("too slow: {detail}"))?;
    check(e.total() == 6, format!("class sizes sum to {}", e.total()))?;
    let mut mult = e.multiplicities();
    mult.sort();
    check(e.classes.len() == 2 && mult == vec![3, 3], format!("expected 2 classes of 3, got {detail}"))?;
    let mut want_bob = false;
    let mut want_empty = false;
    for c in &e.classes {
        let (bal, owner) = owner_and_balance(&c.final_world);
        want_bob |= bal == 20_000_000 && owner.contents_eq(&address_slice(BOB));
        want_empty |= bal == 0 && owner.remaining_bits() == 0;
    }
    check(want_bob && want_empty, format!("class states wrong: {detail}"))?;
    Ok(detail)
}

const RACE_DIFF: &str = "State difference detected:\n\
- balance: 20000000 vs 0\n\
- get_state: (20000000, [x{0000000000000002}]) vs (0, [empty])\n\
- data bits 39..128: b{10011000100101101000000000000000000000000000000000000000000000000000000000000000000000010} vs b{0000000000000000000000000}\n";

fn diff_reproduction() -> Outcome {
    let e =
        enumerate_permutations(&fixtures::race_scenario(), &fixtures::fresh_world(), &FeeSchedule::free())
            .map_err(|err| err.to_string())?;
    let find = |pred: &dyn Fn(i128, &Slice) -> bool| {
        e.classes.iter().find(|c| {
            let (bal, owner) = owner_and_balance(&c.final_world);
            pred(bal, &owner)
        })
    };
    let bob =
        find(&|b, o| b == 20_000_000 && o.contents_eq(&address_slice(BOB))).ok_or("no Bob-owner class")?;
    let empty = find(&|b, o| b == 0 && o.remaining_bits() == 0).ok_or("no withdrawn class")?;
    let text = racemag_core::snapshot::diff_worlds(&bob.final_world, &empty.final_world).render();
    check(text.contains("balance: 20000000 vs 0"), format!("missing balance line:\n{text}"))?;
    check(text == RACE_DIFF, format!("golden mismatch:\n{text}"))?;
    Ok(format!("{:?} vs {:?}", bob.representative, empty.representative))
}

fn model_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 1..=99 {
        let p = i as f64 / 100.0;
        worst = worst.max((expected_iterations_series(p) - expected_iterations_closed(p)).abs());
    }
    check(worst < 1e-9, format!("max |series - closed| = {worst:e}"))?;
    let e = expected_iterations(32, 32).map_err(|e| e.to_string())?;
    check((e - 3.0).abs() < 1e-9, format!("E(32,32) = {e}"))?;
    Ok(format!("max deviation {worst:.2e} over 99 p values; E(32,32) = {e}"))
}

fn balanced_point() -> Outcome {
    let (s, took) = timed(|| run_experiment(&ExperimentConfig::new(32, 32, MASTER_SEED)));
    let s = s.map_err(|e| e.to_string())?;
    let detail = format!("mean {:.3}, std {:.3}, censored {}, {took:?}", s.mean, s.std_dev, s.censored_count);
    check((2.5..=3.7).contains(&s.mean), format!("mean out of [2.5, 3.7]: {detail}"))?;
    check((0.8..=2.2).contains(&s.std_dev), format!("std out of [0.8, 2.2]: {detail}"))?;
    check(took < Duration::from_secs(10), format!("too slow: {detail}"))?;
    Ok(detail)
}

struct SweepRun {
    summaries: Vec<ExperimentSummary>,
    csv: String,
    took: Duration,
}

fn sweep(parallel: bool) -> Result<SweepRun, String> {
    let (s, took) = timed(|| run_sweep(&default_sweep(MASTER_SEED), parallel));
    let summaries = s.map_err(|e| e.to_string())?;
    let csv = summaries_to_csv(&summaries);
    Ok(SweepRun { summaries, csv, took })
}

fn extremes(run: &SweepRun) -> Outcome {
    let by_n1: HashMap<u64, &ExperimentSummary> = run.summaries.iter().map(|s| (s.config.n1, s)).collect();
    let low = by_n1[&1];
    let high = by_n1[&512];
    let detail = format!(
        "(1,32) mean {:.2} [theory {:.2}]; (512,32) mean {:.2} [theory {:.2}]; sweep {:?}",
        low.mean, low.theoretical, high.mean, high.theoretical, run.took
    );
    check((26.0..=40.0).contains(&low.mean), format!("(1,32) out of [26, 40]: {detail}"))?;
    check((13.0..=21.0).contains(&high.mean), format!("(512,32) out of [13, 21]: {detail}"))?;
    check(run.took < Duration::from_secs(120), format!("sweep too slow: {detail}"))?;
    Ok(detail)
}

fn u_shape(run: &SweepRun) -> Outcome {
    let s = &run.summaries;
    let means: Vec<String> = s.iter().map(|x| format!("{}:{:.2}", x.config.n1, x.mean)).collect();
    let detail = means.join(" ");
    let min_at = s.iter().min_by(|a, b| a.mean.total_cmp(&b.mean)).unwrap().config.n1;
    check(min_at == 32, format!("minimum at n1={min_at}: {detail}"))?;
    let pivot = s.iter().position(|x| x.config.n1 == 32).unwrap();
    for i in 0..s.len() - 1 {
        let slack = s[i].std_error().max(s[i + 1].std_error());
        let ok =
            if i < pivot { s[i + 1].mean <= s[i].mean + slack } else { s[i + 1].mean + slack >= s[i].mean };
        check(
            ok,
            format!("not monotone between n1={} and n1={}: {detail}", s[i].config.n1, s[i + 1].config.n1),
        )?;
    }
    Ok(detail)
}

fn determinism(first: &SweepRun) -> Outcome {
    let second = sweep(true)?;
    let sequential = sweep(false)?;
    check(first.csv == second.csv, "two parallel sweeps differ")?;
    check(first.csv == sequential.csv, "parallel and sequential sweeps differ")?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("sweep.csv");
    sweep_and_emit(&default_sweep(MASTER_SEED), &path).map_err(|e| e.to_string())?;
    let written = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    check(written == first.csv, "emitted CSV differs")?;
    check(first.csv.lines().count() == 11, "expected header + 10 rows")?;
    Ok(format!("{} CSV bytes identical across 4 runs", first.csv.len()))
}

fn spender() -> Arc<Code> {
    Arc::new(assemble(include_str!("../fixtures/spender.asm")).expect("spender assembles"))
}

fn spend_body(rng: &mut Rng) -> Cell {
    let mut b = Builder::new();
    let amount = match rng.next_u64() % 3 {
        0 => rng.next_u64() % 2_000,
        1 => rng.next_u64() % 2_000_000,
        _ => rng.next_u64() % (1 << 32),
    };
    b.store_uint(amount as u128, 32).unwrap();
    let flags = [0u128, 1, 128, 129, 2][(rng.next_u64() % 5) as usize];
    b.store_uint(flags, 8).unwrap();
    if rng.next_u64().is_multiple_of(2) {
        b.store_uint((rng.next_u64() % 3_000_000) as u128, 32).unwrap();
    }
    b.build()
}

fn random_message(rng: &mut Rng, id: u64, spending: bool) -> Message {
    let kind = if rng.next_u64().is_multiple_of(6) { MessageKind::ExternalIn } else { MessageKind::Internal };
    let body = match rng.next_u64() % 5 {
        0 => Cell::from_uint((rng.next_u64() % 4) as u128, 32).unwrap(),
        1 => Cell::from_uint(0, (rng.next_u64() % 32) as u32).unwrap(),
        2 if spending => spend_body(rng),
        _ => fixtures::op_body(1 + (rng.next_u64() % 2) as u32),
    };
    let value = match (kind, rng.next_u64() % 4) {
        (MessageKind::ExternalIn, _) => 0,
        (_, 0) => 0,
        (_, 1) => (rng.next_u64() % 3_000) as u128,
        _ => (rng.next_u64() % 20_000_000) as u128,
    };
    Message {
        id,
        kind,
        body,
        value,
        sender_id: 1 + rng.next_u64() % 3,
        name: None,
        bounceable: !rng.next_u64().is_multiple_of(4),
    }
}

fn random_fees(rng: &mut Rng) -> FeeSchedule {
    match rng.next_u64() % 3 {
        0 => FeeSchedule::default(),
        1 => FeeSchedule::free(),
        _ => FeeSchedule {
            bit_price: (rng.next_u64() % 50) as u128,
            cell_price: (rng.next_u64() % 5_000) as u128,
            gas_price: (rng.next_u64() % 40) as u128,
            fwd_fee: (rng.next_u64() % 100_000) as u128,
            compute_gas_cap: rng.next_u64() % 2_000,
        },
    }
}

fn lifecycle_properties() -> Outcome {
    let mut rng = Rng::new(MASTER_SEED);
    let mut txs = 0;
    let mut counts = [0usize; 4]; // compute failures, action failures, bounces, storage debts
    while txs < 10_000 {
        let spending = rng.next_u64().is_multiple_of(2);
        let code = if spending { spender() } else { fixtures::deposit_pool() };
        let mut world = World::new((rng.next_u64() % 5_000_000) as u128, code, Cell::empty());
        let fees = random_fees(&mut rng);
        for _ in 0..50 {
            if rng.next_u64().is_multiple_of(5) {
                world.now_tick += rng.next_u64() % 200;
            }
            let msg = random_message(&mut rng, txs as u64, spending);
            let tick = world.now_tick;
            let data_before = world.data().hash();
            let emitted_before = world.emitted.len();
            let r = run_transaction(&mut world, &msg, &fees);
            txs += 1;
            let ctx = format!("tx {txs} ({msg:?}, {fees:?}): {r:?}");
            check(r.balance_before + r.credited == r.outflow(), format!("conservation broken: {ctx}"))?;
            check(world.now_tick == tick + 1, format!("clock: {ctx}"))?;
            let new: &[OutboundMessage] = &world.emitted[emitted_before..];
            check(
                new.iter().map(|m| m.value).sum::<u128>() == r.sent_value,
                format!("sent value mismatch: {ctx}"),
            )?;
            if !r.compute_ok() || !r.action_ok() {
                check(r.data_hash_after == data_before, format!("failure changed data: {ctx}"))?;
            }
            if r.bounce_emitted {
                check(!r.compute_ok() || !r.action_ok(), format!("bounce without failure: {ctx}"))?;
                check(msg.kind == MessageKind::Internal && msg.bounceable, format!("bad bounce: {ctx}"))?;
            }
            if let ActionPhase::Failed { .. } = r.action {
                check(new.iter().all(|m| m.bounce), format!("partial actions survived: {ctx}"))?;
            }
            counts[0] += !r.compute_ok() as usize;
            counts[1] += !r.action_ok() as usize;
            counts[2] += r.bounce_emitted as usize;
            counts[3] += r.storage_debt as usize;
        }
    }
    check(counts.iter().all(|&c| c > 0), format!("generator missed a failure mode: {counts:?}"))?;
    adversarial_suite()?;
    Ok(format!(
        "{txs} transactions; {} compute failures, {} action failures, {} bounces, {} storage debts; adversarial suite ok",
        counts[0], counts[1], counts[2], counts[3]
    ))
}

fn adversarial_suite() -> Result<(), String> {
    let fees = FeeSchedule::default();
    // malformed body
    let mut w = fixtures::fresh_world();
    let msg = Message { body: Cell::from_uint(5, 16).unwrap(), ..fixtures::enlist(1, 1, 5_000_000, "short") };
    let r = run_transaction(&mut w, &msg, &fees);
    check(r.compute.exit_code == 9, format!("malformed body exit {}", r.compute.exit_code))?;
    check(r.data_hash_after == Cell::empty().hash(), "malformed body changed data")?;
    check(r.bounce_emitted, "malformed body did not bounce")?;
    let expected = 5_000_000 - r.compute.gas_fee - fees.fwd_fee;
    check(w.emitted[0].value == expected, format!("bounce value {} != {expected}", w.emitted[0].value))?;

    // zero value onto zero balance
    let mut w = fixtures::fresh_world();
    let r = run_transaction(&mut w, &fixtures::enlist(1, 1, 0, "zero"), &fees);
    check(r.compute.exit_code == 13 && r.compute.gas_limit == 0, "zero balance should run out of gas")?;
    check(!r.bounce_emitted && w.emitted.is_empty() && w.balance() == 0, "zero balance emitted funds")?;

    // action overdraft: first send affordable, second not
    let mut w = World::new(0, spender(), Cell::empty());
    let mut b = Builder::new();
    b.store_uint(10, 32).unwrap().store_uint(0, 8).unwrap().store_uint(2_000_000, 32).unwrap();
    let msg = Message { body: b.build(), ..fixtures::enlist(1, 2, 1_500_000, "overdraft") };
    let r = run_transaction(&mut w, &msg, &fees);
    check(r.compute_ok(), "overdraft compute should succeed")?;
    check(
        r.action == ActionPhase::Failed { index: 0 } || r.action == ActionPhase::Failed { index: 1 },
        "overdraft not detected",
    )?;
    check(w.data() == &Cell::empty(), "overdraft kept compute data")?;
    check(w.emitted.iter().all(|m| m.bounce) && r.bounce_emitted, "overdraft should leave only a bounce")?;
    check(r.balance_before + r.credited == r.outflow(), "overdraft conservation")?;
    Ok(())
}

fn round_trips() -> Outcome {
    let mut rng = Rng::new(MASTER_SEED);
    let mut seen: HashMap<Vec<u8>, Cell> = HashMap::new();
    for i in 0..1000 {
        let c = common::random_cell(&mut rng, 3);
        let bytes = c.serialize();
        let back = Cell::deserialize(&bytes).map_err(|e| format!("cell {i}: {e}"))?;
        check(back == c && back.hash() == c.hash(), format!("cell {i} round trip"))?;
        let prior = seen.entry(bytes).or_insert_with(|| c.clone());
        check(*prior == c, format!("cell {i}: distinct cells share an encoding"))?;
    }
    for i in 0..1000 {
        let balance = (rng.next_u64() as u128) << (rng.next_u64() % 60);
        let data = common::random_cell(&mut rng, 2);
        let w = World::new(balance, fixtures::deposit_pool(), data);
        let text = save_world(&w);
        let back = load_world(&text, "").map_err(|e| format!("world {i}: {e}"))?;
        check(back.account == w.account && save_world(&back) == text, format!("world {i} round trip"))?;
    }

    let goldens: [(u64, Vec<u64>, Vec<u64>); 3] = [
        (42, (1..=5).collect(), vec![2, 3, 1, 5, 4]),
        (0, (1..=5).collect(), vec![3, 4, 2, 5, 1]),
        (7, (1..=10).collect(), vec![9, 2, 6, 10, 1, 5, 4, 3, 7, 8]),
    ];
    for (seed, input, want) in goldens {
        let mut v = input.clone();
        fisher_yates(&mut v, &mut Rng::new(seed));
        check(v == want, format!("seed {seed}: {v:?} != {want:?}"))?;
    }

    let mut counts: HashMap<[u8; 3], usize> = HashMap::new();
    let mut rng = Rng::new(MASTER_SEED);
    const DRAWS: usize = 60_000;
    for _ in 0..DRAWS {
        let mut v = [0u8, 1, 2];
        fisher_yates(&mut v, &mut rng);
        *counts.entry(v).or_default() += 1;
    }
    check(counts.len() == 6, "not all permutations seen")?;
    let worst = counts.values().map(|&c| (c as f64 / DRAWS as f64 - 1.0 / 6.0).abs()).fold(0.0, f64::max);
    check(worst <= 0.01, format!("uniformity off by {worst:.4}"))?;
    Ok(format!("1000 cells ({} distinct), 1000 worlds, 3 goldens, max shuffle skew {worst:.4}", seen.len()))
}

fn console_transcripts() -> Outcome {
    let files = common::transcript_files();
    let mut commands = BTreeSet::new();
    for path in &files {
        let r = common::replay(path);
        if let Some((line, want, got)) = r.first_mismatch() {
            return Err(format!("{} line {line}: expected {want:?}, got {got:?}", path.display()));
        }
        for line in r.expected.lines().filter_map(|l| l.strip_prefix("> ")) {
            let words: Vec<&str> = line.split_whitespace().collect();
            let key = match words.as_slice() {
                ["run", "message", ..] => "run message <id>",
                ["set", "queue", ..] => "set queue --order <reverse|random>",
                ["add", "messages", ..] => "add messages <path>",
                ["delete", "message", ..] => "delete message <id>",
                ["script", "load", ..] => "script load <path>",
                ["load", "state", ..] => "load state <path>",
                ["save", "state", ..] => "save state <path>",
                ["diff", ..] => "diff <path1> <path2>",
                _ => line,
            };
            commands.insert(key.to_string());
        }
    }
    let missing: Vec<&str> =
        racemag_core::console::COMMANDS.iter().map(|(c, _)| *c).filter(|c| !commands.contains(*c)).collect();
    check(missing.is_empty(), format!("commands not covered: {missing:?}"))?;

    let mut s = Session::from_sources(
        None,
        None,
        Some(include_str!("../fixtures/race_queue.json")),
        FeeSchedule::default(),
        0,
    )
    .map_err(|e| e.to_string())?;
    let (world, queue) = (s.world().clone(), s.queue().to_vec());
    let out = s.execute("run message 99");
    check(out.text == "error: no message with id 99\n", format!("bad id output {:?}", out.text))?;
    check(s.world() == &world && s.queue() == queue.as_slice(), "bad id mutated the session")?;
    Ok(format!(
        "{} transcripts replayed, all {} commands covered",
        files.len(),
        racemag_core::console::COMMANDS.len()
    ))
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut run = |name: &'static str, f: &dyn Fn() -> Outcome| {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        match &outcome {
            Ok(d) => println!("PASS  {name}: {d}"),
            Err(e) => println!("FAIL  {name}: {e}"),
        }
        results.push((name, outcome));
    };

    run("permutation oracle", &permutation_oracle);
    run("diff reproduction", &diff_reproduction);
    run("model identity", &model_identity);
    run("balanced point (32, 32)", &balanced_point);
    let sweep_run = sweep(true);
    match &sweep_run {
        Ok(s) => {
            run("extremes (1, 32) and (512, 32)", &|| extremes(s));
            run("U-shape", &|| u_shape(s));
            run("determinism", &|| determinism(s));
        }
        Err(e) => {
            for name in ["extremes (1, 32) and (512, 32)", "U-shape", "determinism"] {
                let e = e.clone();
                run(name, &move || Err(e.clone()));
            }
        }
    }
    run("lifecycle properties", &lifecycle_properties);
    run("round trips", &round_trips);
    run("console transcripts", &console_transcripts);

    let failed = results.iter().filter(|(_, o)| o.is_err()).count();
    println!("\n{} criteria, {} passed, {failed} failed", results.len(), results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
