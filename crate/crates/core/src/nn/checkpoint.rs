//! Model checkpoints.
//!
//! A text header of `key=value` lines ending in `end\n`, followed by the flat
//! parameter vector as little-endian `f64`:
//!
//! ```text
//! dpcandle-ckpt-1
//! window=10
//! in_channels=4
//! filters1=16
//! filters2=32
//! kernel=3
//! classes=8
//! seed=7
//! steps=2400
//! params=30840
//! end
//! ```

use std::fs;
use std::path::Path;

use super::{Architecture, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &str = "dpcandle-ckpt-1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub seed: u64,
    pub steps: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let a = self.params.arch();
        let mut out = format!(
            "{MAGIC}\nwindow={}\nin_channels={}\nfilters1={}\nfilters2={}\nkernel={}\nclasses={}\nseed={}\nsteps={}\nparams={}\nend\n",
            a.window,
            a.in_channels,
            a.filters1,
            a.filters2,
            a.kernel,
            a.classes,
            self.seed,
            self.steps,
            self.params.len()
        )
        .into_bytes();
        for v in self.params.flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
        let marker = b"\nend\n";
        let split = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .ok_or_else(|| bad("missing header terminator"))?;
        let header =
            std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header not UTF-8"))?;
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("missing magic line"));
        }
        let mut get = std::collections::HashMap::new();
        for line in lines {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(&format!("bad header line {line:?}")))?;
            let v: u64 = v.parse().map_err(|_| bad(&format!("bad value for {k}")))?;
            get.insert(k, v);
        }
        let field = |k: &str| get.get(k).copied().ok_or_else(|| bad(&format!("missing {k}")));
        let arch = Architecture {
            window: field("window")? as usize,
            in_channels: field("in_channels")? as usize,
            filters1: field("filters1")? as usize,
            filters2: field("filters2")? as usize,
            kernel: field("kernel")? as usize,
            classes: field("classes")? as usize,
        };
        let count = field("params")? as usize;
        let body = &bytes[split + marker.len()..];
        if body.len() != 8 * count {
            return Err(bad("body length does not match header"));
        }
        let theta = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Checkpoint {
            params: ModelParams::from_flat(arch, theta)?,
            seed: field("seed")?,
            steps: field("steps")?,
        })
    }
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
