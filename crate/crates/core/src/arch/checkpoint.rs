//! Binary checkpoint of a [`ParamStore`].
//!
//! Layout (little-endian): magic `DSGC`, version `u16`, spec hash `u64`,
//! entry count `u32`, then per entry: name length `u16`, UTF-8 name, flags
//! `u8` (bit 0 marks BN running statistics), rank `u8`, `rank` extents as
//! `u32`, raw `f32` payload.

use std::collections::BTreeMap;
use std::path::Path;

use crate::arch::params::{param_key, ParamStore, Params, Slot};
use crate::arch::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::io::bytes::{put_f32s, Reader};
use crate::io::{atomic_write, read_file};
use crate::nn::RunningStats;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DSGC";
pub const CHECKPOINT_VERSION: u16 = 1;
pub const FLAG_RUNNING_STAT: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub flags: u8,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawCheckpoint {
    pub spec_hash: u64,
    pub entries: Vec<CheckpointEntry>,
}

fn entries(store: &ParamStore) -> Vec<CheckpointEntry> {
    let mut out = Vec::new();
    let mut push = |name: String, flags, tensor: Tensor| {
        out.push(CheckpointEntry {
            name,
            flags,
            tensor,
        })
    };
    for (name, p) in store.iter() {
        match p {
            Params::Conv { weight, bias } => {
                push(param_key(name, Slot::Weight), 0, weight.clone());
                if let Some(b) = bias {
                    push(param_key(name, Slot::Bias), 0, b.clone());
                }
            }
            Params::BatchNorm { gamma, beta, stats } => {
                push(param_key(name, Slot::Gamma), 0, gamma.clone());
                push(param_key(name, Slot::Beta), 0, beta.clone());
                let c = stats.channels();
                push(
                    format!("{name}.running_mean"),
                    FLAG_RUNNING_STAT,
                    Tensor::from_parts(vec![c], stats.mean.clone()),
                );
                push(
                    format!("{name}.running_var"),
                    FLAG_RUNNING_STAT,
                    Tensor::from_parts(vec![c], stats.var.clone()),
                );
            }
        }
    }
    out
}

pub fn encode_checkpoint(spec: &NetworkSpec, store: &ParamStore) -> Result<Vec<u8>> {
    store.check_against(spec)?;
    let list = entries(store);
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&spec.hash().to_le_bytes());
    out.extend_from_slice(&(list.len() as u32).to_le_bytes());
    for e in &list {
        let name = e.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::invalid(format!("tensor name too long: {}", e.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(e.flags);
        out.push(e.tensor.rank() as u8);
        for &x in e.tensor.shape() {
            let x = u32::try_from(x).map_err(|_| Error::invalid("extent exceeds u32"))?;
            out.extend_from_slice(&x.to_le_bytes());
        }
        put_f32s(&mut out, e.tensor.data());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<RawCheckpoint> {
    let mut r = Reader::new(bytes, "checkpoint");
    let magic = r.array::<4>()?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let spec_hash = r.u64()?;
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?
            .to_string();
        let flags = r.u8()?;
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|x| x as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &b| a.checked_mul(b))
            .ok_or_else(|| Error::Corrupt(format!("{name}: extent overflow")))?;
        let data = r.f32s(numel)?;
        let tensor = Tensor::new(&shape, data)
            .map_err(|e| Error::Corrupt(format!("{name}: {e}")))?;
        entries.push(CheckpointEntry {
            name,
            flags,
            tensor,
        });
    }
    if r.remaining() != 0 {
        return Err(Error::Corrupt(format!("{} trailing bytes", r.remaining())));
    }
    Ok(RawCheckpoint { spec_hash, entries })
}

/// Rebuilds a store for `spec` from decoded entries.
pub fn store_from_checkpoint(spec: &NetworkSpec, raw: RawCheckpoint) -> Result<ParamStore> {
    if raw.spec_hash != spec.hash() {
        return Err(Error::SpecMismatch(format!(
            "checkpoint spec hash {:016x}, network {:016x}",
            raw.spec_hash,
            spec.hash()
        )));
    }
    let mut by_name: BTreeMap<String, CheckpointEntry> = BTreeMap::new();
    for e in raw.entries {
        if by_name.contains_key(&e.name) {
            return Err(Error::Corrupt(format!("duplicate entry {}", e.name)));
        }
        by_name.insert(e.name.clone(), e);
    }
    let mut take = |key: String, flags: u8| {
        let e = by_name
            .remove(&key)
            .ok_or_else(|| Error::SpecMismatch(format!("checkpoint lacks {key}")))?;
        if e.flags != flags {
            return Err(Error::Corrupt(format!("{key}: flags {:#x}", e.flags)));
        }
        Ok(e.tensor)
    };
    let mut store = ParamStore::new();
    for d in spec.descriptors().iter().filter(|d| d.kind.has_params()) {
        let name = &d.name;
        let params = if d.kind.is_weighted() {
            let weight = take(param_key(name, Slot::Weight), 0)?;
            let has_bias = matches!(
                d.kind,
                crate::arch::LayerKind::Conv { bias: true, .. }
                    | crate::arch::LayerKind::TransposedConv { bias: true, .. }
            );
            let bias = if has_bias {
                Some(take(param_key(name, Slot::Bias), 0)?)
            } else {
                None
            };
            Params::Conv { weight, bias }
        } else {
            let gamma = take(param_key(name, Slot::Gamma), 0)?;
            let beta = take(param_key(name, Slot::Beta), 0)?;
            let mean = take(format!("{name}.running_mean"), FLAG_RUNNING_STAT)?;
            let var = take(format!("{name}.running_var"), FLAG_RUNNING_STAT)?;
            Params::BatchNorm {
                gamma,
                beta,
                stats: RunningStats {
                    mean: mean.into_data(),
                    var: var.into_data(),
                },
            }
        };
        store.insert(name.clone(), params);
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::SpecMismatch(format!("checkpoint has unknown entry {extra}")));
    }
    store.check_against(spec)?;
    Ok(store)
}

pub fn save_checkpoint(spec: &NetworkSpec, store: &ParamStore, path: &Path) -> Result<()> {
    atomic_write(path, &encode_checkpoint(spec, store)?)
}

pub fn load_checkpoint(spec: &NetworkSpec, path: &Path) -> Result<ParamStore> {
    store_from_checkpoint(spec, decode_checkpoint(&read_file(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_network, HyperParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(k: usize) -> HyperParams {
        HyperParams {
            growth_rate: k,
            stem_channels: 4,
            layers_per_block: 1,
            upsample_path_channels: 2,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (spec, mut store) = build_network(&tiny(2), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        if let Some(Params::BatchNorm { stats, .. }) = store.get_mut("stem.bn1") {
            stats.mean[0] = -0.125;
            stats.var[1] = 3.5;
        }
        let bytes = encode_checkpoint(&spec, &store).unwrap();
        let back = store_from_checkpoint(&spec, decode_checkpoint(&bytes).unwrap()).unwrap();
        assert_eq!(back, store);
        let raw = decode_checkpoint(&bytes).unwrap();
        assert!(raw
            .entries
            .iter()
            .all(|e| (e.flags == FLAG_RUNNING_STAT) == e.name.contains(".running_")));
    }

    #[test]
    fn truncation_and_magic_detected() {
        let (spec, store) = build_network(&tiny(2), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let bytes = encode_checkpoint(&spec, &store).unwrap();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn other_hyperparameters_rejected() {
        let (spec, store) = build_network(&tiny(2), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let other = NetworkSpec::build(&tiny(3)).unwrap();
        let raw = decode_checkpoint(&encode_checkpoint(&spec, &store).unwrap()).unwrap();
        assert!(matches!(store_from_checkpoint(&other, raw), Err(Error::SpecMismatch(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.dsgc");
        let (spec, store) = build_network(&tiny(2), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        save_checkpoint(&spec, &store, &path).unwrap();
        assert_eq!(load_checkpoint(&spec, &path).unwrap(), store);
    }
}
