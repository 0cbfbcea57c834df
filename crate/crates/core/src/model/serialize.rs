//! Binary model files. Layout, all little-endian:
//!
//! ```text
//! "PLDM" | u32 version | u32 metadata length | metadata (UTF-8 JSON)
//! per parametric layer, in network order:
//!     u32 layer index | u64 n | n x f32 weights | u64 m | m x f32 bias
//! ```
//!
//! The metadata names the file kind (`checkpoint` or `frozen`), holds the
//! network description and, for frozen bundles, the class records.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Layer, Network};
use super::spec::NetworkSpec;
use crate::data::{validate_classes, ClassInfo};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PLDM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileKind {
    Checkpoint,
    Frozen,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    kind: FileKind,
    network: NetworkSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classes: Option<Vec<ClassInfo>>,
}

fn encode(net: &Network, meta: &Metadata) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(meta)?;
    let mut out =
        Vec::with_capacity(12 + json.len() + 4 * net.param_count() + 20 * net.layers().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (i, l) in net.layers().iter().enumerate() {
        let (w, b) = match &l.layer {
            Layer::Conv(c) => (&c.weights, &c.bias),
            Layer::Dense(d) => (&d.weights, &d.bias),
            _ => continue,
        };
        out.extend_from_slice(&(i as u32).to_le_bytes());
        for t in [w, b] {
            out.extend_from_slice(&(t.len() as u64).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos,
                format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn f32s_into(&mut self, dst: &mut Tensor, what: &str) -> Result<()> {
        let at = self.pos;
        let n = self.u64(what)?;
        if n != dst.len() as u64 {
            return Err(Error::format(
                at,
                format!("{what} holds {n} values, layer needs {}", dst.len()),
            ));
        }
        let raw = self.take(dst.len() * 4, what)?;
        for (v, b) in dst.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(b.try_into().expect("4 bytes"));
        }
        Ok(())
    }
}

fn decode(bytes: &[u8], expect: FileKind) -> Result<(Network, Metadata)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, not a model file"));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            4,
            format!("unsupported format version {version}"),
        ));
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta_at = r.pos;
    let meta: Metadata = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| Error::format(meta_at, format!("invalid metadata: {e}")))?;
    if meta.kind != expect {
        return Err(Error::format(
            meta_at,
            format!("expected a {expect:?} file, found {:?}", meta.kind).to_lowercase(),
        ));
    }
    let mut net =
        Network::zeros(&meta.network).map_err(|e| Error::format(meta_at, e.to_string()))?;

    for (i, l) in net.layers_mut().iter_mut().enumerate() {
        let (w, b) = match &mut l.layer {
            Layer::Conv(c) => (&mut c.weights, &mut c.bias),
            Layer::Dense(d) => (&mut d.weights, &mut d.bias),
            _ => continue,
        };
        let at = r.pos;
        let index = r.u32("layer index")?;
        if index as usize != i {
            return Err(Error::format(
                at,
                format!("expected record for layer {i}, found {index}"),
            ));
        }
        r.f32s_into(w, &format!("weights of {}", l.name))?;
        r.f32s_into(b, &format!("bias of {}", l.name))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            r.pos,
            format!("{} trailing bytes", bytes.len() - r.pos),
        ));
    }
    Ok((net, meta))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_bytes(net: &Network) -> Result<Vec<u8>> {
    encode(
        net,
        &Metadata {
            kind: FileKind::Checkpoint,
            network: net.spec(),
            classes: None,
        },
    )
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Network> {
    Ok(decode(bytes, FileKind::Checkpoint)?.0)
}

/// Write every layer, dropout included, with exact weights.
pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    write_file(path, &checkpoint_bytes(net)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    checkpoint_from_bytes(&read_file(path)?)
}

/// Inference-only network with dropout removed, plus its class records.
/// Immutable once loaded; share it behind an `Arc`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenModel {
    network: Network,
    classes: Vec<ClassInfo>,
}

impl FrozenModel {
    pub fn new(net: &Network, classes: &[ClassInfo]) -> Result<Self> {
        if classes.len() != net.class_count() {
            return Err(Error::arg(format!(
                "network has {} outputs but {} class records were given",
                net.class_count(),
                classes.len()
            )));
        }
        validate_classes(classes)?;
        Ok(Self {
            network: net.without_dropout(),
            classes: classes.to_vec(),
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn format_version(&self) -> u32 {
        FORMAT_VERSION
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.network.input_shape()
    }

    /// Class probabilities `[N, classes]` for a batch `[N, H, W, C]`.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        self.network.predict(batch)
    }

    pub fn predict_one(&self, image: &Tensor) -> Result<Vec<f32>> {
        self.network.predict_one(image)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode(
            &self.network,
            &Metadata {
                kind: FileKind::Frozen,
                network: self.network.spec(),
                classes: Some(self.classes.clone()),
            },
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (network, meta) = decode(bytes, FileKind::Frozen)?;
        let classes = meta
            .classes
            .ok_or_else(|| Error::format(12, "frozen bundle has no class records"))?;
        if classes.len() != network.class_count() {
            return Err(Error::format(
                12,
                format!(
                    "{} class records for {} outputs",
                    classes.len(),
                    network.class_count()
                ),
            ));
        }
        if network
            .layers()
            .iter()
            .any(|l| matches!(l.layer, Layer::Dropout(_)))
        {
            return Err(Error::format(12, "frozen bundle contains dropout layers"));
        }
        validate_classes(&classes).map_err(|e| Error::format(12, e.to_string()))?;
        Ok(Self { network, classes })
    }
}

/// Freeze `net` with `classes` and write the bundle.
pub fn export_frozen(net: &Network, classes: &[ClassInfo], path: &Path) -> Result<FrozenModel> {
    let model = FrozenModel::new(net, classes)?;
    write_file(path, &model.to_bytes()?)?;
    Ok(model)
}

pub fn load_frozen(path: &Path) -> Result<FrozenModel> {
    FrozenModel::from_bytes(&read_file(path)?)
}
