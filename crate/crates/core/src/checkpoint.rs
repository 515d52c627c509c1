//! Plain-text checkpoints for trained policies.
//!
//! ```text
//! sagin-checkpoint v1
//! policy proposed
//! seed 7
//! episodes 2000
//! config {"gamma":0.99,...}
//! nets 3
//! net actor
//! <mlp block>
//! ...
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{read_mlp, write_mlp, Mlp};

const MAGIC: &str = "sagin-checkpoint v1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub policy: String,
    pub seed: u64,
    pub episodes: usize,
    /// Learner configuration as a single JSON line.
    pub config: String,
    pub nets: Vec<(String, Mlp)>,
}

impl Checkpoint {
    pub fn net(&self, name: &str) -> Result<&Mlp> {
        self.nets
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, net)| net)
            .ok_or_else(|| Error::Checkpoint(format!("missing network `{name}`")))
    }

    pub fn write<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "policy {}", self.policy)?;
        writeln!(out, "seed {}", self.seed)?;
        writeln!(out, "episodes {}", self.episodes)?;
        writeln!(out, "config {}", self.config)?;
        writeln!(out, "nets {}", self.nets.len())?;
        for (name, net) in &self.nets {
            writeln!(out, "net {name}")?;
            write_mlp(net, out)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let mut next = || next_line(&mut lines);
        let magic = next()?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!("unsupported header `{magic}`")));
        }
        let policy = field(&next()?, "policy")?.to_string();
        let seed = parse(field(&next()?, "seed")?)?;
        let episodes = parse(field(&next()?, "episodes")?)?;
        let config = field(&next()?, "config")?.to_string();
        let count: usize = parse(field(&next()?, "nets")?)?;
        let mut nets = Vec::with_capacity(count);
        for _ in 0..count {
            let name = field(&next_line(&mut lines)?, "net")?.to_string();
            let net = read_mlp(&mut lines)?;
            nets.push((name, net));
        }
        Ok(Self {
            policy,
            seed,
            episodes,
            config,
            nets,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file))
    }
}

fn next_line<I: Iterator<Item = std::io::Result<String>>>(lines: &mut I) -> Result<String> {
    match lines.next() {
        Some(Ok(l)) => Ok(l.trim_end().to_string()),
        Some(Err(e)) => Err(Error::Checkpoint(e.to_string())),
        None => Err(Error::Checkpoint("unexpected end of file".into())),
    }
}

fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| Error::Checkpoint(format!("expected `{key} ...`, found `{line}`")))
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| Error::Checkpoint(format!("bad value `{s}`: {e}")))
}
