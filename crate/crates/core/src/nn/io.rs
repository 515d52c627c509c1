//! Plain-text parameter dump.
//!
//! ```text
//! mlp v1
//! head softmax
//! sizes 31 64 64 15
//! params 7135
//! <one parameter per line, row-major, shortest round-trip exponent form>
//! ```

use std::io::{BufRead, Write};

use super::{Head, Mlp};
use crate::error::{Error, Result};

const MAGIC: &str = "mlp v1";

pub fn write_mlp<W: Write>(net: &Mlp, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "head {}", net.head().name())?;
    let sizes: Vec<String> = net.sizes().iter().map(usize::to_string).collect();
    writeln!(out, "sizes {}", sizes.join(" "))?;
    writeln!(out, "params {}", net.num_params())?;
    for p in net.params() {
        writeln!(out, "{p:e}")?;
    }
    Ok(())
}

fn next_line<I: Iterator<Item = std::io::Result<String>>>(lines: &mut I) -> Result<String> {
    match lines.next() {
        Some(Ok(l)) => Ok(l.trim().to_string()),
        Some(Err(e)) => Err(Error::Checkpoint(e.to_string())),
        None => Err(Error::Checkpoint("unexpected end of file".into())),
    }
}

fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| Error::Checkpoint(format!("expected `{key} ...`, found `{line}`")))
}

/// Read one network written by [`write_mlp`] from a line stream.
pub fn read_mlp<I: Iterator<Item = std::io::Result<String>>>(lines: &mut I) -> Result<Mlp> {
    let magic = next_line(lines)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!("unsupported header `{magic}`")));
    }
    let head = match field(&next_line(lines)?, "head")? {
        "softmax" => Head::Softmax,
        "identity" => Head::Identity,
        other => return Err(Error::Checkpoint(format!("unknown head `{other}`"))),
    };
    let sizes = field(&next_line(lines)?, "sizes")?
        .split_whitespace()
        .map(|s| s.parse::<usize>().map_err(|e| Error::Checkpoint(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let count: usize = field(&next_line(lines)?, "params")?
        .parse()
        .map_err(|e: std::num::ParseIntError| Error::Checkpoint(e.to_string()))?;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next_line(lines)?;
        params.push(
            line.parse::<f64>()
                .map_err(|e| Error::Checkpoint(format!("bad parameter `{line}`: {e}")))?,
        );
    }
    Mlp::from_params(&sizes, head, params).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Convenience wrapper over a buffered reader.
pub fn read_mlp_from<R: BufRead>(reader: R) -> Result<Mlp> {
    read_mlp(&mut reader.lines())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_exact(seed in 0u64..1000, hidden in 1usize..10, softmax in any::<bool>()) {
            let head = if softmax { Head::Softmax } else { Head::Identity };
            let net = Mlp::new(&[3, hidden, 2], head, &mut stream(seed, "io")).unwrap();
            let mut buf = Vec::new();
            write_mlp(&net, &mut buf).unwrap();
            let back = read_mlp_from(buf.as_slice()).unwrap();
            prop_assert_eq!(back.sizes(), net.sizes());
            prop_assert_eq!(back.head(), net.head());
            prop_assert_eq!(back.params(), net.params());
        }
    }

    #[test]
    fn truncated_file_rejected() {
        let net = Mlp::zeros(&[2, 2], Head::Identity).unwrap();
        let mut buf = Vec::new();
        write_mlp(&net, &mut buf).unwrap();
        buf.truncate(buf.len() - 4);
        assert!(matches!(read_mlp_from(buf.as_slice()), Err(Error::Checkpoint(_))));
        assert!(read_mlp_from("mlp v9\n".as_bytes()).is_err());
    }
}
