//! Plain-text checkpoint format.
//!
//! Layout, one item per line:
//!
//! ```text
//! mertopt-checkpoint v1
//! config <tag>                  (optional free-form provenance tag)
//! arch 2 5 1
//! seed 42
//! phase 1
//! step 850
//! params 21
//! <21 lines, one parameter each>
//! adam <beta1> <beta2> <epsilon> <step>
//! m <21 space-separated values>
//! v <21 space-separated values>
//! ```
//!
//! Floats are written in shortest round-trip form, so save/load restores the
//! exact bit pattern. The `adam` block is optional; evaluation-only
//! checkpoints may omit it.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::policy::{Architecture, PolicyParams};
use crate::train::{AdamParams, AdamState};

const MAGIC: &str = "mertopt-checkpoint v1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub policy: PolicyParams,
    pub seed: u64,
    /// Schedule phase the last completed step belonged to (informational;
    /// resumption derives its position from `step`).
    pub phase: usize,
    /// Global optimizer steps completed.
    pub step: u64,
    pub adam: Option<AdamState>,
    /// Free-form provenance tag (e.g. a config hash).
    pub config_tag: Option<String>,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{MAGIC}")?;
        if let Some(tag) = &self.config_tag {
            writeln!(out, "config {tag}")?;
        }
        let widths: Vec<String> = self
            .policy
            .arch()
            .widths()
            .iter()
            .map(|w| w.to_string())
            .collect();
        writeln!(out, "arch {}", widths.join(" "))?;
        writeln!(out, "seed {}", self.seed)?;
        writeln!(out, "phase {}", self.phase)?;
        writeln!(out, "step {}", self.step)?;
        writeln!(out, "params {}", self.policy.param_count())?;
        for v in self.policy.values() {
            writeln!(out, "{v}")?;
        }
        if let Some(adam) = &self.adam {
            let p = adam.params();
            writeln!(out, "adam {} {} {} {}", p.beta1, p.beta2, p.epsilon, adam.step_count())?;
            writeln!(out, "m {}", join_floats(adam.first_moments()))?;
            writeln!(out, "v {}", join_floats(adam.second_moments()))?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(reader: R) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let mut next = || -> Result<Option<String>> {
            match lines.next() {
                Some(line) => Ok(Some(line?)),
                None => Ok(None),
            }
        };

        let magic = next()?.ok_or_else(|| Error::Checkpoint("empty file".into()))?;
        if magic.trim() != MAGIC {
            return Err(Error::Checkpoint(format!("unexpected header {magic:?}")));
        }

        let mut line = next()?.ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let config_tag = if let Some(tag) = line.strip_prefix("config ") {
            let tag = tag.to_string();
            line = next()?.ok_or_else(|| Error::Checkpoint("truncated".into()))?;
            Some(tag)
        } else {
            None
        };

        let widths = parse_prefixed_list::<usize>(&line, "arch")?;
        let arch = Architecture::new(widths)
            .map_err(|e| Error::Checkpoint(format!("bad architecture: {e}")))?;
        let seed: u64 = parse_prefixed(&next()?.unwrap_or_default(), "seed")?;
        let phase: usize = parse_prefixed(&next()?.unwrap_or_default(), "phase")?;
        let step: u64 = parse_prefixed(&next()?.unwrap_or_default(), "step")?;
        let count: usize = parse_prefixed(&next()?.unwrap_or_default(), "params")?;
        if count != arch.param_count() {
            return Err(Error::Checkpoint(format!(
                "parameter count {count} does not match architecture ({})",
                arch.param_count()
            )));
        }
        let mut values = Vec::with_capacity(count);
        for i in 0..count {
            let line = next()?
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {i}")))?;
            values.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Checkpoint(format!("parameter {i}: {e}")))?,
            );
        }
        let policy = PolicyParams::from_values(arch, values)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;

        let adam = match next()? {
            None => None,
            Some(line) if line.trim().is_empty() => None,
            Some(line) => {
                let fields = parse_prefixed_list::<f64>(&line, "adam")?;
                if fields.len() != 4 {
                    return Err(Error::Checkpoint("adam line needs four fields".into()));
                }
                let params = AdamParams {
                    beta1: fields[0],
                    beta2: fields[1],
                    epsilon: fields[2],
                };
                let adam_step = fields[3] as u64;
                let m = parse_prefixed_list::<f64>(
                    &next()?.ok_or_else(|| Error::Checkpoint("missing m line".into()))?,
                    "m",
                )?;
                let v = parse_prefixed_list::<f64>(
                    &next()?.ok_or_else(|| Error::Checkpoint("missing v line".into()))?,
                    "v",
                )?;
                if m.len() != count || v.len() != count {
                    return Err(Error::Checkpoint("moment vectors mismatch parameters".into()));
                }
                Some(
                    AdamState::from_parts(m, v, adam_step, params)
                        .map_err(|e| Error::Checkpoint(e.to_string()))?,
                )
            }
        };

        Ok(Checkpoint {
            policy,
            seed,
            phase,
            step,
            adam,
            config_tag,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path)?;
        Checkpoint::read_from(file)
    }
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_prefixed<T: std::str::FromStr>(line: &str, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let rest = line
        .strip_prefix(key)
        .ok_or_else(|| Error::Checkpoint(format!("expected `{key}` line, got {line:?}")))?;
    rest.trim()
        .parse::<T>()
        .map_err(|e| Error::Checkpoint(format!("{key}: {e}")))
}

fn parse_prefixed_list<T: std::str::FromStr>(line: &str, key: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let rest = line
        .strip_prefix(key)
        .ok_or_else(|| Error::Checkpoint(format!("expected `{key}` line, got {line:?}")))?;
    rest.split_whitespace()
        .map(|tok| {
            tok.parse::<T>()
                .map_err(|e| Error::Checkpoint(format!("{key}: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{AdamParams, AdamState};

    fn sample() -> Checkpoint {
        let arch = Architecture::with_hidden(&[5]).unwrap();
        let policy = PolicyParams::init(arch, 0.1, 77).unwrap();
        let n = policy.param_count();
        let m: Vec<f64> = (0..n).map(|i| (i as f64) * 0.001 - 0.005).collect();
        let v: Vec<f64> = (0..n).map(|i| (i as f64) * 1e-6).collect();
        Checkpoint {
            policy,
            seed: 42,
            phase: 1,
            step: 850,
            adam: Some(AdamState::from_parts(m, v, 850, AdamParams::default()).unwrap()),
            config_tag: Some("deadbeef".into()),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&buf[..]).unwrap();
        assert_eq!(back.policy.values(), ck.policy.values());
        assert_eq!(back.policy.arch(), ck.policy.arch());
        assert_eq!(back.seed, ck.seed);
        assert_eq!(back.phase, ck.phase);
        assert_eq!(back.step, ck.step);
        assert_eq!(back.adam, ck.adam);
        assert_eq!(back.config_tag, ck.config_tag);
    }

    #[test]
    fn round_trip_without_adam_or_tag() {
        let mut ck = sample();
        ck.adam = None;
        ck.config_tag = None;
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&buf[..]).unwrap();
        assert!(back.adam.is_none());
        assert!(back.config_tag.is_none());
        assert_eq!(back.policy.values(), ck.policy.values());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.txt");
        let ck = sample();
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.policy.values(), ck.policy.values());
    }

    #[test]
    fn rejects_corrupted_input() {
        assert!(Checkpoint::read_from(&b"not a checkpoint"[..]).is_err());
        let ck = sample();
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let truncated = text.lines().take(5).collect::<Vec<_>>().join("\n");
        assert!(Checkpoint::read_from(truncated.as_bytes()).is_err());
        let wrong_count = text.replace("params 21", "params 20");
        assert!(Checkpoint::read_from(wrong_count.as_bytes()).is_err());
    }

    #[test]
    fn extreme_values_survive_round_trip() {
        let arch = Architecture::new(vec![2, 1]).unwrap();
        let values = vec![1.0 / 3.0, f64::MIN_POSITIVE, -2.225_073_858_507_201e-308];
        let policy = PolicyParams::from_values(arch, values.clone()).unwrap();
        let ck = Checkpoint {
            policy,
            seed: 0,
            phase: 0,
            step: 0,
            adam: None,
            config_tag: None,
        };
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&buf[..]).unwrap();
        assert_eq!(back.policy.values(), &values[..]);
    }
}
