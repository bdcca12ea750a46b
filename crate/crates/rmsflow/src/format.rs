//! Binary checkpoint (`RMSW`) and scene (`SFPR`) files, little-endian throughout.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rmsflow_core::data::ScenePair;
use rmsflow_core::geom::PointCloud;
use rmsflow_core::numcore::{ParamStore, Tensor};
use rmsflow_core::predictor::SceneFlow;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RMSW";
pub const SCENE_MAGIC: &[u8; 4] = b"SFPR";
pub const FORMAT_VERSION: u32 = 1;

const FLAG_GT: u8 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        found: [u8; 4],
        expected: [u8; 4],
    },
    #[error("{path}: unsupported version {found} (expected {expected})")]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: truncated while reading {what}")]
    Truncated { path: PathBuf, what: &'static str },
    #[error("{path}: {detail}")]
    Invalid { path: PathBuf, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Bounds-checked little-endian cursor over a whole file.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FormatError::Truncated {
                path: self.path.to_path_buf(),
                what,
            }),
        }
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &'static str) -> Result<Vec<f32>, FormatError> {
        let bytes = n.checked_mul(4).ok_or_else(|| self.invalid(format!("{what}: size overflow")))?;
        Ok(self
            .take(bytes, what)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<(), FormatError> {
        let found: [u8; 4] = self.take(4, "magic")?.try_into().unwrap();
        if &found != magic {
            return Err(FormatError::BadMagic {
                path: self.path.to_path_buf(),
                found,
                expected: *magic,
            });
        }
        let version = self.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(FormatError::Version {
                path: self.path.to_path_buf(),
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(())
    }

    fn invalid(&self, detail: String) -> FormatError {
        FormatError::Invalid {
            path: self.path.to_path_buf(),
            detail,
        }
    }

    fn finish(&self) -> Result<(), FormatError> {
        if self.pos != self.buf.len() {
            return Err(self.invalid(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

/// Writes to `path.tmp` and renames, so a crash never leaves a half-written file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(io_err(&tmp))?);
        w.write_all(bytes).map_err(io_err(&tmp))?;
        w.flush().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn push_f32s(out: &mut Vec<u8>, v: impl IntoIterator<Item = f32>) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Named tensors as `RMSW` bytes, in the map's sorted name order.
pub fn encode_tensors<'a>(tensors: impl ExactSizeIterator<Item = (&'a str, &'a Tensor<f32>)>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        push_f32s(&mut out, t.data().iter().copied());
    }
    out
}

pub fn decode_tensors(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor<f32>)>, FormatError> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    r.header(CHECKPOINT_MAGIC)?;
    let count = r.u32("parameter count")?;
    let mut out: Vec<(String, Tensor<f32>)> = Vec::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| r.invalid("parameter name is not UTF-8".into()))?
            .to_string();
        if out.iter().any(|(n, _)| *n == name) {
            return Err(r.invalid(format!("duplicate parameter `{name}`")));
        }
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dims")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| r.invalid(format!("`{name}`: shape overflow")))?;
        let data = r.f32s(n, "tensor data")?;
        let t = Tensor::new(shape, data).map_err(|e| r.invalid(e.to_string()))?;
        out.push((name, t));
    }
    r.finish()?;
    Ok(out)
}

fn read_file(path: &Path) -> Result<Vec<u8>, FormatError> {
    fs::read(path).map_err(io_err(path))
}

/// Parameter values only.
pub fn save_checkpoint(store: &ParamStore<f32>, path: &Path) -> Result<(), FormatError> {
    let items: Vec<(&str, &Tensor<f32>)> = store.iter().map(|(k, p)| (k.as_str(), &p.value)).collect();
    write_atomic(path, &encode_tensors(items.into_iter()))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore<f32>, FormatError> {
    let mut store = ParamStore::new();
    for (name, t) in decode_tensors(&read_file(path)?, path)? {
        store.insert(&name, t).map_err(|e| FormatError::Invalid {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    }
    Ok(store)
}

const STEP_ENTRY: &str = "@step";

/// Adam moments as `<name>@m` / `<name>@v` plus the step count, in the checkpoint format.
pub fn save_optimizer_state(store: &ParamStore<f32>, path: &Path) -> Result<(), FormatError> {
    let mut owned: Vec<(String, Tensor<f32>)> = Vec::new();
    for (name, p) in store.iter() {
        let shape = p.value.shape().to_vec();
        owned.push((format!("{name}@m"), Tensor::new(shape.clone(), p.m.clone()).expect("moment shape")));
        owned.push((format!("{name}@v"), Tensor::new(shape, p.v.clone()).expect("moment shape")));
    }
    // The step is split into two exact 16-bit halves so f32 carries it losslessly.
    let step = store.step();
    let halves = [(step >> 16) as f32, (step & 0xffff) as f32];
    if step >= 1 << 32 {
        return Err(FormatError::Invalid {
            path: path.to_path_buf(),
            detail: "optimizer step count exceeds 32 bits".into(),
        });
    }
    owned.push((STEP_ENTRY.into(), Tensor::new(vec![2], halves.to_vec()).expect("step shape")));
    owned.sort_by(|a, b| a.0.cmp(&b.0));
    write_atomic(path, &encode_tensors(owned.iter().map(|(n, t)| (n.as_str(), t))))
}

/// Restores moments and step into a store that already holds the matching weights.
pub fn load_optimizer_state(store: &mut ParamStore<f32>, path: &Path) -> Result<(), FormatError> {
    let invalid = |detail: String| FormatError::Invalid {
        path: path.to_path_buf(),
        detail,
    };
    let entries = decode_tensors(&read_file(path)?, path)?;
    let mut step = None;
    for (name, t) in entries {
        if name == STEP_ENTRY {
            let d = t.data();
            if d.len() != 2 {
                return Err(invalid("malformed step entry".into()));
            }
            step = Some(((d[0] as u64) << 16) | d[1] as u64);
            continue;
        }
        let (base, which) = name
            .rsplit_once('@')
            .ok_or_else(|| invalid(format!("unexpected entry `{name}`")))?;
        let p = store
            .param_mut(base)
            .ok_or_else(|| invalid(format!("optimizer state for unknown parameter `{base}`")))?;
        if t.shape() != p.value.shape() {
            return Err(invalid(format!("`{name}` has shape {:?}", t.shape())));
        }
        match which {
            "m" => p.m = t.into_data(),
            "v" => p.v = t.into_data(),
            _ => return Err(invalid(format!("unexpected entry `{name}`"))),
        }
    }
    store.set_step(step.ok_or_else(|| invalid("missing step entry".into()))?);
    Ok(())
}

pub fn encode_scene(pair: &ScenePair) -> Vec<u8> {
    let (n, m) = (pair.pc_t.len(), pair.pc_t1.len());
    let mut out = Vec::with_capacity(17 + 12 * (2 * n + m));
    out.extend_from_slice(SCENE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(m as u32).to_le_bytes());
    out.push(FLAG_GT);
    push_f32s(&mut out, pair.pc_t.points().iter().flatten().copied());
    push_f32s(&mut out, pair.pc_t1.points().iter().flatten().copied());
    push_f32s(&mut out, pair.gt_flow.vectors().iter().flatten().copied());
    out
}

fn triples(v: Vec<f32>) -> Vec<[f32; 3]> {
    v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Decodes a scene; a file without ground truth gets zero flow and `has_gt = false`.
pub fn decode_scene(bytes: &[u8], path: &Path, scene_id: u64) -> Result<(ScenePair, bool), FormatError> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    r.header(SCENE_MAGIC)?;
    let n = r.u32("N")? as usize;
    let m = r.u32("M")? as usize;
    let flags = r.u8("flags")?;
    if n == 0 || m == 0 {
        return Err(r.invalid(format!("empty cloud (N = {n}, M = {m})")));
    }
    if flags & !FLAG_GT != 0 {
        return Err(r.invalid(format!("unknown flags {flags:#04x}")));
    }
    let pc_t = r.f32s(3 * n, "pc_t")?;
    let pc_t1 = r.f32s(3 * m, "pc_t1")?;
    let has_gt = flags & FLAG_GT != 0;
    let gt = if has_gt {
        r.f32s(3 * n, "gt_flow")?
    } else {
        vec![0.0; 3 * n]
    };
    r.finish()?;
    let wrap = |e: rmsflow_core::Error| FormatError::Invalid {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    let pair = ScenePair::new(
        PointCloud::new(triples(pc_t)).map_err(wrap)?,
        PointCloud::new(triples(pc_t1)).map_err(wrap)?,
        SceneFlow::new(triples(gt)).map_err(wrap)?,
        scene_id,
    )
    .map_err(wrap)?;
    Ok((pair, has_gt))
}

pub fn write_scene(pair: &ScenePair, path: &Path) -> Result<(), FormatError> {
    write_atomic(path, &encode_scene(pair))
}

pub fn read_scene(path: &Path, scene_id: u64) -> Result<ScenePair, FormatError> {
    Ok(decode_scene(&read_file(path)?, path, scene_id)?.0)
}
