//! Binary tensor archives for network weights and optimizer moments.
//!
//! Layout: the ASCII line `AU2AVCKPT 1\n`, a length-prefixed UTF-8 block of
//! `key=value` metadata lines, a tensor count, then per tensor its name,
//! shape and little-endian f64 values. All integers are little-endian u64.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::autograd::{Adam, ParamEntry, ParamStore};
use crate::error::{Error, Result};

const MAGIC: &[u8] = b"AU2AVCKPT 1\n";
const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<ParamEntry>,
}

impl Archive {
    /// Weights of `store`, plus the optimizer moments and step when given.
    pub fn from_store(store: &ParamStore, optimizer: Option<&Adam>) -> Self {
        let mut tensors = store.entries().to_vec();
        let mut meta = BTreeMap::new();
        if let Some(opt) = optimizer {
            meta.insert("adam.step".to_string(), opt.step.to_string());
            for (i, e) in store.entries().iter().enumerate() {
                tensors.push(ParamEntry {
                    name: format!("{ADAM_M}{}", e.name),
                    shape: e.shape.clone(),
                    value: opt.m[i].clone(),
                });
                tensors.push(ParamEntry {
                    name: format!("{ADAM_V}{}", e.name),
                    shape: e.shape.clone(),
                    value: opt.v[i].clone(),
                });
            }
        }
        Self { meta, tensors }
    }

    pub fn find(&self, name: &str) -> Option<&ParamEntry> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Overwrite every parameter of `store`; all must be present with
    /// matching shapes.
    pub fn restore_store(&self, store: &mut ParamStore) -> Result<()> {
        for e in store.entries_mut() {
            let src = self
                .find(&e.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", e.name)))?;
            if src.shape != e.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?} in archive, expected {:?}",
                    e.name, src.shape, e.shape
                )));
            }
            e.value.clone_from(&src.value);
        }
        Ok(())
    }

    /// Restore optimizer moments saved alongside `store`'s parameters.
    pub fn restore_adam(&self, store: &ParamStore, opt: &mut Adam) -> Result<()> {
        let step = self
            .meta
            .get("adam.step")
            .ok_or_else(|| Error::Checkpoint("archive has no optimizer state".into()))?;
        opt.step = step
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad optimizer step `{step}`")))?;
        for (i, e) in store.entries().iter().enumerate() {
            for (prefix, dst) in [(ADAM_M, &mut opt.m[i]), (ADAM_V, &mut opt.v[i])] {
                let src = self.find(&format!("{prefix}{}", e.name)).ok_or_else(|| {
                    Error::Checkpoint(format!("missing optimizer moment for {}", e.name))
                })?;
                if src.value.len() != dst.len() {
                    return Err(Error::Checkpoint(format!(
                        "optimizer moment size mismatch for {}",
                        e.name
                    )));
                }
                dst.clone_from(&src.value);
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        let meta: String = self
            .meta
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        put_u64(&mut out, meta.len() as u64);
        out.extend_from_slice(meta.as_bytes());
        put_u64(&mut out, self.tensors.len() as u64);
        for t in &self.tensors {
            put_u64(&mut out, t.name.len() as u64);
            out.extend_from_slice(t.name.as_bytes());
            put_u64(&mut out, t.shape.len() as u64);
            for &d in &t.shape {
                put_u64(&mut out, d as u64);
            }
            for v in &t.value {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let rest = bytes
            .strip_prefix(MAGIC)
            .ok_or("not a checkpoint archive")?;
        let mut r = Reader { buf: rest, pos: 0 };
        let meta_len = r.u64()? as usize;
        let meta_text =
            std::str::from_utf8(r.take(meta_len)?).map_err(|_| "metadata is not UTF-8")?;
        let mut meta = BTreeMap::new();
        for line in meta_text.lines() {
            let (k, v) = line.split_once('=').ok_or("bad metadata line")?;
            meta.insert(k.to_string(), v.to_string());
        }
        let count = r.u64()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u64()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| "tensor name is not UTF-8")?;
            let ndim = r.u64()? as usize;
            if ndim > 8 {
                return Err(format!("tensor {name}: {ndim} dimensions"));
            }
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| format!("tensor {name}: shape overflow"))?;
            let raw = r.take(n.checked_mul(8).ok_or("size overflow")?)?;
            let value = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push(ParamEntry { name, shape, value });
        }
        if r.pos != r.buf.len() {
            return Err("trailing bytes after last tensor".into());
        }
        Ok(Self { meta, tensors })
    }
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.buf.len() - self.pos < n {
            return Err("truncated archive".into());
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn read_archive(path: &Path) -> Result<Archive> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Archive::decode(&bytes).map_err(|m| Error::Checkpoint(format!("{}: {m}", path.display())))
}

pub fn write_archive(path: &Path, archive: &Archive) -> Result<()> {
    write_atomic(path, &archive.encode())
}

/// Write to a sibling temp file, sync, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::AdamConfig;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.push(
            "a.weight".into(),
            vec![2, 3],
            (0..6).map(|i| i as f64 * 0.5 - 1.0).collect(),
        )
        .unwrap();
        s.push(
            "a.bias".into(),
            vec![3],
            vec![f64::MIN_POSITIVE, -0.0, 1e300],
        )
        .unwrap();
        s
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let s = store();
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.1,
                beta1: 0.5,
                beta2: 0.9,
                eps: 1e-8,
            },
            &s,
        );
        opt.step = 7;
        opt.m[1][2] = 0.25;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        write_archive(&path, &Archive::from_store(&s, Some(&opt))).unwrap();
        let back = read_archive(&path).unwrap();
        let mut s2 = store();
        s2.entries_mut()[0].value.fill(9.0);
        back.restore_store(&mut s2).unwrap();
        assert_eq!(
            s2.flat_values()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>(),
            s.flat_values()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        );
        let mut opt2 = Adam::new(opt.config, &s);
        back.restore_adam(&s2, &mut opt2).unwrap();
        assert_eq!(opt2, opt);
        assert!(!dir.path().join("net.bin.tmp").exists());
    }

    #[test]
    fn rejects_truncation_and_layout_mismatch() {
        let bytes = Archive::from_store(&store(), None).encode();
        for cut in [0, 5, MAGIC.len() + 3, bytes.len() - 1] {
            assert!(Archive::decode(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut other = ParamStore::new();
        other
            .push("a.weight".into(), vec![3, 2], vec![0.0; 6])
            .unwrap();
        assert!(Archive::decode(&bytes)
            .unwrap()
            .restore_store(&mut other)
            .is_err());
    }
}
