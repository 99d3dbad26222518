//! Encoded dataset cache.
//!
//! Layout: a text header of `key=value` lines terminated by `end\n`, then one
//! label byte per sample (class index), then every input value as a
//! little-endian `f64`. Values are stored as raw bits, so a write/read cycle
//! is bit-exact.
//!
//! ```text
//! dpcandle-gaf-1
//! window=10
//! channels=4
//! samples=2400
//! mode=joint
//! classes=morning_star,evening_star,...
//! end
//! <labels><values>
//! ```

use std::fs;
use std::path::Path;

use super::{EncodedSet, Normalization, CHANNELS};
use crate::error::{Error, Result};
use crate::market::PatternClass;

const MAGIC: &str = "dpcandle-gaf-1";

pub fn write_cache(path: impl AsRef<Path>, set: &EncodedSet) -> Result<()> {
    fs::write(path, to_bytes(set))?;
    Ok(())
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<EncodedSet> {
    from_bytes(&fs::read(path)?)
}

pub fn to_bytes(set: &EncodedSet) -> Vec<u8> {
    let classes: Vec<&str> = PatternClass::ALL.iter().map(|c| c.name()).collect();
    let header = format!(
        "{MAGIC}\nwindow={}\nchannels={}\nsamples={}\nmode={}\nclasses={}\nend\n",
        set.window(),
        CHANNELS.len(),
        set.len(),
        set.mode().name(),
        classes.join(",")
    );
    let mut out = header.into_bytes();
    out.extend(set.labels().iter().map(|c| c.index() as u8));
    for v in set.inputs() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<EncodedSet> {
    let bad = |m: &str| Error::Format(format!("GAF cache: {m}"));
    let mut pos = 0;
    let mut lines = Vec::new();
    loop {
        let nl = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated header"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + nl]).map_err(|_| bad("header not UTF-8"))?;
        pos += nl + 1;
        if line == "end" {
            break;
        }
        lines.push(line);
    }
    if lines.first() != Some(&MAGIC) {
        return Err(bad("missing magic line"));
    }
    let field = |k: &str| -> Result<&str> {
        lines
            .iter()
            .find_map(|l| l.strip_prefix(k).and_then(|r| r.strip_prefix('=')))
            .ok_or_else(|| bad(&format!("missing {k}")))
    };
    let parse = |k: &str| -> Result<usize> {
        field(k)?
            .parse()
            .map_err(|_| bad(&format!("bad {k}")))
    };
    let window = parse("window")?;
    let channels = parse("channels")?;
    let samples = parse("samples")?;
    let mode = Normalization::parse(field("mode")?)?;
    if channels != CHANNELS.len() {
        return Err(bad(&format!("expected {} channels", CHANNELS.len())));
    }
    let classes: Vec<&str> = field("classes")?.split(',').collect();
    let expected: Vec<&str> = PatternClass::ALL.iter().map(|c| c.name()).collect();
    if classes != expected {
        return Err(bad("class list does not match this build"));
    }
    let values = samples * window * window * channels;
    if bytes.len() != pos + samples + 8 * values {
        return Err(bad("body length does not match header"));
    }
    let labels = bytes[pos..pos + samples]
        .iter()
        .map(|&b| PatternClass::from_index(b as usize).ok_or_else(|| bad("bad label byte")))
        .collect::<Result<Vec<_>>>()?;
    pos += samples;
    let inputs = bytes[pos..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    EncodedSet::new(window, mode, inputs, labels)
}
