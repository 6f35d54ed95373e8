//! Dataset snapshot files.
//!
//! A snapshot is UTF-8 text so it diffs and checksums cleanly:
//!
//! ```text
//! mgccf-dataset v1
//! users <n>
//! items <m>
//! train <count>
//! validation <count>
//! test <count>
//! U <index>\t<raw user id>        one line per user, index order
//! I <index>\t<raw item id>        one line per item, index order
//! T <user> <item>                 train interactions, sorted
//! V <user> <item>                 validation interactions, sorted
//! E <user> <item>                 test interactions, sorted
//! ```
//!
//! Writing the same dataset twice yields byte-identical files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Interaction, InteractionDataset};
use crate::error::{Error, Result};

pub const SNAPSHOT_HEADER: &str = "mgccf-dataset v1";

impl InteractionDataset {
    pub fn write_snapshot_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = BufWriter::new(out);
        writeln!(w, "{SNAPSHOT_HEADER}")?;
        writeln!(w, "users {}", self.num_users())?;
        writeln!(w, "items {}", self.num_items())?;
        writeln!(w, "train {}", self.train().len())?;
        writeln!(w, "validation {}", self.validation().len())?;
        writeln!(w, "test {}", self.test().len())?;
        for (idx, raw) in self.user_ids().iter().enumerate() {
            writeln!(w, "U {idx}\t{raw}")?;
        }
        for (idx, raw) in self.item_ids().iter().enumerate() {
            writeln!(w, "I {idx}\t{raw}")?;
        }
        for (tag, part) in [("T", self.train()), ("V", self.validation()), ("E", self.test())] {
            for x in part {
                writeln!(w, "{tag} {} {}", x.user, x.item)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_snapshot_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((n, l)) => Ok((n + 1, l?)),
                None => Err(Error::Format(format!("snapshot truncated before {what}"))),
            }
        };
        let (_, header) = next("header")?;
        if header.trim_end() != SNAPSHOT_HEADER {
            return Err(Error::Format(format!("unrecognised snapshot header {header:?}")));
        }
        let mut count = |key: &str| -> Result<usize> {
            let (n, line) = next(key)?;
            line.strip_prefix(key)
                .and_then(|rest| rest.trim().parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: n,
                    message: format!("expected `{key} <count>`"),
                })
        };
        let num_users = count("users")?;
        let num_items = count("items")?;
        let counts = [count("train")?, count("validation")?, count("test")?];

        let mut ids = |tag: char, n: usize| -> Result<Vec<String>> {
            (0..n)
                .map(|expected| {
                    let (lineno, line) = next("id map")?;
                    let bad = || Error::Parse {
                        line: lineno,
                        message: format!("expected `{tag} {expected}\\t<id>`"),
                    };
                    let rest = line.strip_prefix(tag).ok_or_else(bad)?.trim_start();
                    let (idx, raw) = rest.split_once('\t').ok_or_else(bad)?;
                    if idx.parse::<usize>().ok() != Some(expected) {
                        return Err(bad());
                    }
                    Ok(raw.to_string())
                })
                .collect()
        };
        let user_ids = ids('U', num_users)?;
        let item_ids = ids('I', num_items)?;

        let mut parts: [Vec<Interaction>; 3] = Default::default();
        for (part, (tag, n)) in parts.iter_mut().zip(['T', 'V', 'E'].into_iter().zip(counts)) {
            for _ in 0..n {
                let (lineno, line) = next("interactions")?;
                let mut f = line.split_whitespace();
                let parsed = (f.next(), f.next(), f.next(), f.next());
                match parsed {
                    (Some(t), Some(u), Some(i), None) if t.len() == 1 && t.starts_with(tag) => {
                        match (u.parse(), i.parse()) {
                            (Ok(u), Ok(i)) => part.push(Interaction::new(u, i)),
                            _ => {
                                return Err(Error::Parse {
                                    line: lineno,
                                    message: "bad interaction indices".into(),
                                })
                            }
                        }
                    }
                    _ => {
                        return Err(Error::Parse {
                            line: lineno,
                            message: format!("expected `{tag} <user> <item>`"),
                        })
                    }
                }
            }
        }
        let [train, validation, test] = parts;
        let ds = InteractionDataset::from_parts(user_ids, item_ids, train, validation, test)?;
        ds.check_coverage()?;
        Ok(ds)
    }
}

pub fn write_snapshot(path: impl AsRef<Path>, ds: &InteractionDataset) -> Result<()> {
    ds.write_snapshot_to(File::create(path)?)
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<InteractionDataset> {
    InteractionDataset::read_snapshot_from(BufReader::new(File::open(path)?))
}
