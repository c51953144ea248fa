//! Checkpoint container.
//!
//! Layout: a UTF-8 manifest, then a blob of little-endian `f64`s.
//!
//! ```text
//! HYAR-CKPT-1
//! meta <key>\t<value>
//! tensor <name>\t<d0xd1x…>\t<offset>\t<count>
//! end
//! <blob>
//! ```
//!
//! Offsets count bytes from the start of the blob; tensors appear in the blob
//! in manifest order. A zero-dimensional shape is written as `-`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use super::{NumError, ParameterSet};

pub const MAGIC: &str = "HYAR-CKPT-1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, ArrayD<f64>)>,
}

fn bad(msg: impl Into<String>) -> NumError {
    NumError::Format(msg.into())
}

fn check_token(s: &str, what: &str) -> Result<(), NumError> {
    if s.contains(['\t', '\n', '\r']) {
        return Err(bad(format!("{what} {s:?} contains a tab or newline")));
    }
    Ok(())
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.insert(key.into(), value.into());
    }

    pub fn meta(&self, key: &str) -> Result<&str, NumError> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| bad(format!("missing meta key {key}")))
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        self.tensors.push((name.into(), value));
    }

    pub fn tensor(&self, name: &str) -> Result<&ArrayD<f64>, NumError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| bad(format!("missing tensor {name}")))
    }

    /// Stores every entry of `params` as `<prefix>/<entry name>`.
    pub fn push_params(&mut self, prefix: &str, params: &ParameterSet) {
        for e in params.entries() {
            self.push_tensor(format!("{prefix}/{}", e.name), e.value.clone());
        }
    }

    /// Fills `params` from tensors stored by [`Checkpoint::push_params`];
    /// names and shapes must line up.
    pub fn load_params(&self, prefix: &str, params: &mut ParameterSet) -> Result<(), NumError> {
        for idx in 0..params.len() {
            let name = format!("{prefix}/{}", params.entry(idx).name);
            let t = self.tensor(&name)?;
            if t.shape() != params.get(idx).shape() {
                return Err(NumError::Shape(format!(
                    "{name}: checkpoint shape {:?}, expected {:?}",
                    t.shape(),
                    params.get(idx).shape()
                )));
            }
            params.get_mut(idx).assign(t);
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), NumError> {
        let mut manifest = String::new();
        manifest.push_str(MAGIC);
        manifest.push('\n');
        for (k, v) in &self.meta {
            check_token(k, "meta key")?;
            check_token(v, "meta value")?;
            if k.contains(' ') {
                return Err(bad(format!("meta key {k:?} contains a space")));
            }
            manifest.push_str(&format!("meta {k}\t{v}\n"));
        }
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            check_token(name, "tensor name")?;
            let shape = if t.ndim() == 0 {
                "-".to_string()
            } else {
                t.shape().iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
            };
            manifest.push_str(&format!("tensor {name}\t{shape}\t{offset}\t{}\n", t.len()));
            offset += t.len() * 8;
        }
        manifest.push_str("end\n");
        w.write_all(manifest.as_bytes())?;
        let mut buf = Vec::with_capacity(offset);
        for (_, t) in &self.tensors {
            for v in t.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, NumError> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end_matches('\n') != MAGIC {
            return Err(bad(format!("bad magic line {:?}", line.trim_end())));
        }
        let mut ck = Checkpoint::new();
        let mut layout: Vec<(String, Vec<usize>, usize, usize)> = Vec::new();
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(bad("manifest ended without `end`"));
            }
            let l = line.trim_end_matches('\n');
            if l == "end" {
                break;
            }
            if let Some(rest) = l.strip_prefix("meta ") {
                let (k, v) = rest.split_once('\t').ok_or_else(|| bad(format!("bad meta line {l:?}")))?;
                ck.meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = l.strip_prefix("tensor ") {
                let parts: Vec<&str> = rest.split('\t').collect();
                if parts.len() != 4 {
                    return Err(bad(format!("bad tensor line {l:?}")));
                }
                let shape: Vec<usize> = if parts[1] == "-" {
                    Vec::new()
                } else {
                    parts[1]
                        .split('x')
                        .map(|d| d.parse().map_err(|_| bad(format!("bad shape in {l:?}"))))
                        .collect::<Result<_, _>>()?
                };
                let off: usize = parts[2].parse().map_err(|_| bad(format!("bad offset in {l:?}")))?;
                let count: usize = parts[3].parse().map_err(|_| bad(format!("bad count in {l:?}")))?;
                if shape.iter().product::<usize>() != count {
                    return Err(bad(format!("shape/count mismatch in {l:?}")));
                }
                layout.push((parts[0].to_string(), shape, off, count));
            } else {
                return Err(bad(format!("unknown manifest line {l:?}")));
            }
        }
        let mut blob = Vec::new();
        r.read_to_end(&mut blob)?;
        for (name, shape, off, count) in layout {
            let end = off + count * 8;
            if end > blob.len() {
                return Err(bad(format!("tensor {name} runs past the blob")));
            }
            let data: Vec<f64> = blob[off..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = ArrayD::from_shape_vec(IxDyn(&shape), data).map_err(|e| bad(e.to_string()))?;
            ck.tensors.push((name, t));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), NumError> {
        let tmp = path.with_extension("tmp");
        {
            let f = File::create(&tmp)?;
            self.write_to(BufWriter::new(f))?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NumError> {
        Self::read_from(File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr0, arr1, arr2};
    use proptest::prelude::*;

    #[test]
    fn manifest_layout() {
        let mut ck = Checkpoint::new();
        ck.set_meta("step", "42");
        ck.push_tensor("a", arr2(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).into_dyn());
        ck.push_tensor("b", arr1(&[-1.5]).into_dyn());
        ck.push_tensor("c", arr0(7.0).into_dyn());
        let mut out = Vec::new();
        ck.write_to(&mut out).unwrap();
        let text_end = out.windows(4).position(|w| w == b"end\n").unwrap() + 4;
        let manifest = std::str::from_utf8(&out[..text_end]).unwrap();
        assert_eq!(
            manifest,
            "HYAR-CKPT-1\nmeta step\t42\ntensor a\t2x3\t0\t6\ntensor b\t1\t48\t1\ntensor c\t-\t56\t1\nend\n"
        );
        assert_eq!(out.len() - text_end, 8 * 8);
        assert_eq!(&out[text_end..text_end + 8], &1.0f64.to_le_bytes());
        assert_eq!(Checkpoint::read_from(&out[..]).unwrap(), ck);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(Checkpoint::read_from(&b"NOPE\nend\n"[..]).is_err());
        let mut ck = Checkpoint::new();
        ck.push_tensor("a", arr1(&[1.0, 2.0]).into_dyn());
        let mut out = Vec::new();
        ck.write_to(&mut out).unwrap();
        out.truncate(out.len() - 3);
        assert!(Checkpoint::read_from(&out[..]).is_err());
    }

    proptest! {
        #[test]
        fn bits_survive_roundtrip(vals in prop::collection::vec(any::<f64>(), 0..40), key in "[a-z.]{1,12}", value in "[ -~]{0,30}") {
            let mut ck = Checkpoint::new();
            ck.set_meta(key, value);
            ck.push_tensor("t", arr1(&vals).into_dyn());
            let mut out = Vec::new();
            ck.write_to(&mut out).unwrap();
            let back = Checkpoint::read_from(&out[..]).unwrap();
            let t = back.tensor("t").unwrap();
            prop_assert_eq!(t.len(), vals.len());
            for (a, b) in t.iter().zip(&vals) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(back.meta, ck.meta);
        }
    }
}
