#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use racemag_core::cells::{Builder, Cell};
use racemag_core::console::{Session, StartOptions};
use racemag_core::Rng;

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixture(name: &str) -> PathBuf {
    fixtures_dir().join(name)
}

pub fn transcript_files() -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/transcripts");
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .expect("transcript dir")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    files.sort();
    files
}

pub struct Replay {
    pub expected: String,
    pub actual: String,
}

impl Replay {
    pub fn matches(&self) -> bool {
        self.expected == self.actual
    }

    /// First differing line, for failure messages.
    pub fn first_mismatch(&self) -> Option<(usize, String, String)> {
        let mut e = self.expected.lines();
        let mut a = self.actual.lines();
        for n in 1.. {
            match (e.next(), a.next()) {
                (None, None) => return None,
                (x, y) if x == y => continue,
                (x, y) => return Some((n, x.unwrap_or("<eof>").into(), y.unwrap_or("<eof>").into())),
            }
        }
        None
    }
}

/// Replays a transcript file in a fresh session.
///
/// Format: `#! key=value` start options (`state`, `queue`, `seed`, fixture-relative),
/// then `$ racemag` followed by the banner, then `> command` lines each followed
/// by the command's output. `$FIXTURES` and `$TMP` stand for the fixture directory
/// and a scratch directory. With `RACEMAG_BLESS=1` the file is rewritten.
pub fn replay(path: &Path) -> Replay {
    let expected = fs::read_to_string(path).expect("transcript readable");
    let tmp = tempfile::tempdir().unwrap();
    let fixtures = fixtures_dir();
    let (fx, tx) = (fixtures.display().to_string(), tmp.path().display().to_string());
    let expand = |s: &str| s.replace("$FIXTURES", &fx).replace("$TMP", &tx);
    let collapse = |s: &str| s.replace(&tx, "$TMP").replace(&fx, "$FIXTURES");

    let mut opts = StartOptions {
        contract: fixture("deposit_pool.asm"),
        tmp_dir: Some(tmp.path().join("tmp")),
        ..StartOptions::default()
    };
    let mut header = String::new();
    let mut commands = Vec::new();
    for line in expected.lines() {
        if let Some(opt) = line.strip_prefix("#! ") {
            header.push_str(line);
            header.push('\n');
            let (k, v) = opt.split_once('=').expect("key=value");
            match k {
                "state" => opts.init_state = Some(fixture(v)),
                "queue" => opts.queue = Some(fixture(v)),
                "seed" => opts.seed = v.parse().unwrap(),
                other => panic!("unknown transcript option {other}"),
            }
        } else if let Some(cmd) = line.strip_prefix("> ") {
            commands.push(cmd.to_string());
        }
    }

    let (mut session, banner) = Session::start(&opts).expect("session starts");
    let mut actual = header;
    actual.push_str("$ racemag\n");
    actual.push_str(&collapse(&banner));
    for cmd in &commands {
        let out = session.execute(&expand(cmd));
        actual.push_str(&format!("> {cmd}\n"));
        actual.push_str(&collapse(&out.text));
    }
    if std::env::var_os("RACEMAG_BLESS").is_some() {
        fs::write(path, &actual).unwrap();
    }
    Replay { expected, actual }
}

/// Random valid cell tree with at most `depth` levels below the root.
pub fn random_cell(rng: &mut Rng, depth: u32) -> Cell {
    let mut b = Builder::new();
    let bits = match rng.next_u64() % 4 {
        0 => 0,
        1 => rng.next_u64() % 16,
        2 => rng.next_u64() % 300,
        _ => rng.next_u64() % 1024,
    };
    for _ in 0..bits {
        b.store_bit(rng.next_u64() & 1 == 1).unwrap();
    }
    if depth > 0 {
        for _ in 0..rng.next_u64() % 5 {
            b.store_ref(random_cell(rng, depth - 1)).unwrap();
        }
    }
    b.build()
}
