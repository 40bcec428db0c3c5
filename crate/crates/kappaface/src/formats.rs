//! Binary and text file formats.
//!
//! Binary files are little-endian with a four-byte magic. Readers load the
//! whole file and parse it in memory, so a failed read never yields a
//! partial value. Writers go through a sibling temporary file and a rename,
//! so a failed write never leaves a truncated file behind.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use kappaface_core::class_stats::MemoryBuffer;
use kappaface_core::data::{Pair, SyntheticDataset};
use kappaface_core::eval::VerificationReport;
use kappaface_core::model::{Activation, ClassifierParams, Linear, MlpParams};
use kappaface_core::scheduler::ClassWeights;
use kappaface_core::trainer::EpochRecord;

use crate::fmt::sig6;

pub const DATASET_MAGIC: &[u8; 4] = b"KFD1";
pub const BUFFER_MAGIC: &[u8; 4] = b"KMB1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"KMM1";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: bad magic {found:?} at byte 0, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}: truncated at byte {offset} (needed {needed} more bytes)")]
    Truncated {
        path: PathBuf,
        offset: usize,
        needed: usize,
    },
    #[error("{path}: invalid content at byte {offset}: {reason}")]
    Invalid {
        path: PathBuf,
        offset: usize,
        reason: String,
    },
}

impl FormatError {
    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

type FResult<T> = Result<T, FormatError>;

/// Writes `bytes` to `path` via a temporary sibling and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> FResult<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        FormatError::io(path, e)
    })
}

fn read_all(path: &Path) -> FResult<Vec<u8>> {
    fs::read(path).map_err(|e| FormatError::io(path, e))
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(path: &'a Path, bytes: &'a [u8], magic: &[u8; 4]) -> FResult<Self> {
        if bytes.len() < 4 || &bytes[..4] != magic {
            let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
            return Err(FormatError::BadMagic {
                path: path.to_path_buf(),
                expected: String::from_utf8_lossy(magic).into_owned(),
                found,
            });
        }
        Ok(Self {
            path,
            bytes,
            pos: 4,
        })
    }

    fn take<const N: usize>(&mut self) -> FResult<[u8; N]> {
        let end = self.pos + N;
        if end > self.bytes.len() {
            return Err(FormatError::Truncated {
                path: self.path.to_path_buf(),
                offset: self.bytes.len(),
                needed: end - self.bytes.len(),
            });
        }
        let out = self.bytes[self.pos..end]
            .try_into()
            .expect("length checked");
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> FResult<u32> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    fn count(&mut self) -> FResult<usize> {
        self.u32().map(|v| v as usize)
    }

    /// Fails early when a declared length cannot fit in the remaining bytes.
    fn reserve(&self, items: usize, width: usize) -> FResult<()> {
        let need = items.saturating_mul(width);
        let left = self.bytes.len() - self.pos;
        if need > left {
            return Err(FormatError::Truncated {
                path: self.path.to_path_buf(),
                offset: self.bytes.len(),
                needed: need - left,
            });
        }
        Ok(())
    }

    fn f32s(&mut self, n: usize) -> FResult<Vec<f32>> {
        self.reserve(n, 4)?;
        (0..n)
            .map(|_| self.take::<4>().map(f32::from_le_bytes))
            .collect()
    }

    fn f64s(&mut self, n: usize) -> FResult<Vec<f64>> {
        self.reserve(n, 8)?;
        (0..n)
            .map(|_| self.take::<8>().map(f64::from_le_bytes))
            .collect()
    }

    fn counts(&mut self, n: usize) -> FResult<Vec<usize>> {
        self.reserve(n, 4)?;
        (0..n).map(|_| self.count()).collect()
    }

    fn invalid(&self, offset: usize, reason: impl ToString) -> FormatError {
        FormatError::Invalid {
            path: self.path.to_path_buf(),
            offset,
            reason: reason.to_string(),
        }
    }

    fn finish(&self) -> FResult<()> {
        if self.pos != self.bytes.len() {
            return Err(self.invalid(
                self.pos,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("value fits in u32");
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_dataset(ds: &SyntheticDataset) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + 4 * (ds.inputs.len() + ds.prototypes.len() + ds.len()));
    buf.extend_from_slice(DATASET_MAGIC);
    put_u32(&mut buf, ds.len());
    put_u32(&mut buf, ds.input_dim);
    put_u32(&mut buf, ds.num_classes());
    ds.inputs
        .iter()
        .for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    ds.labels.iter().for_each(|&l| put_u32(&mut buf, l));
    ds.prototypes
        .iter()
        .for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    ds.true_kappas
        .iter()
        .for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    ds.populations.iter().for_each(|&n| put_u32(&mut buf, n));
    buf
}

pub fn decode_dataset(path: &Path, bytes: &[u8]) -> FResult<SyntheticDataset> {
    let mut r = Reader::new(path, bytes, DATASET_MAGIC)?;
    let n = r.count()?;
    let d = r.count()?;
    let c = r.count()?;
    let inputs = r.f32s(n.saturating_mul(d))?;
    let labels = r.counts(n)?;
    let prototypes = r.f32s(c.saturating_mul(d))?;
    let true_kappas = r.f32s(c)?;
    let populations = r.counts(c)?;
    r.finish()?;
    let ds = SyntheticDataset {
        input_dim: d,
        inputs,
        labels,
        prototypes,
        true_kappas,
        populations,
    };
    ds.validate().map_err(|e| r.invalid(16, e))?;
    Ok(ds)
}

pub fn write_dataset(ds: &SyntheticDataset, path: &Path) -> FResult<()> {
    write_atomic(path, &encode_dataset(ds))
}

pub fn read_dataset(path: &Path) -> FResult<SyntheticDataset> {
    decode_dataset(path, &read_all(path)?)
}

pub fn encode_buffer(buffer: &MemoryBuffer) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + 4 * buffer.vectors().len() + 4 * buffer.len());
    buf.extend_from_slice(BUFFER_MAGIC);
    put_u32(&mut buf, buffer.len());
    put_u32(&mut buf, buffer.dim());
    put_u32(&mut buf, buffer.num_classes());
    for &v in buffer.vectors() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buffer.labels().iter().for_each(|&l| put_u32(&mut buf, l));
    buf
}

/// Rows are stored as `f32`; they are renormalized on load.
pub fn decode_buffer(path: &Path, bytes: &[u8], alpha: f64) -> FResult<MemoryBuffer> {
    let mut r = Reader::new(path, bytes, BUFFER_MAGIC)?;
    let n = r.count()?;
    let d = r.count()?;
    let c = r.count()?;
    let rows: Vec<f64> = r
        .f32s(n.saturating_mul(d))?
        .into_iter()
        .map(f64::from)
        .collect();
    let labels = r.counts(n)?;
    r.finish()?;
    let buffer = MemoryBuffer::from_rows(rows, labels, d, alpha).map_err(|e| r.invalid(16, e))?;
    if buffer.num_classes() != c {
        return Err(r.invalid(
            12,
            format!(
                "header declares {c} classes, labels cover {}",
                buffer.num_classes()
            ),
        ));
    }
    Ok(buffer)
}

pub fn write_buffer(buffer: &MemoryBuffer, path: &Path) -> FResult<()> {
    write_atomic(path, &encode_buffer(buffer))
}

pub fn read_buffer(path: &Path, alpha: f64) -> FResult<MemoryBuffer> {
    decode_buffer(path, &read_all(path)?, alpha)
}

/// Embedding network and classifier weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub mlp: MlpParams,
    pub classifier: ClassifierParams,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let layers = &ckpt.mlp.layers;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, layers.len());
    put_u32(&mut buf, ckpt.mlp.input_dim());
    layers.iter().for_each(|l| put_u32(&mut buf, l.fan_out));
    for layer in layers {
        layer
            .weights
            .iter()
            .for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    }
    for layer in layers {
        layer
            .bias
            .iter()
            .for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    }
    put_u32(&mut buf, ckpt.classifier.classes);
    put_u32(&mut buf, ckpt.classifier.dim);
    ckpt.classifier
        .weights
        .iter()
        .for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    buf
}

/// The activation is not stored; it comes from the run configuration.
pub fn decode_checkpoint(path: &Path, bytes: &[u8], activation: Activation) -> FResult<Checkpoint> {
    let mut r = Reader::new(path, bytes, CHECKPOINT_MAGIC)?;
    let count = r.count()?;
    if count == 0 {
        return Err(r.invalid(4, "layer count is zero"));
    }
    r.reserve(count + 1, 4)?;
    let dims = r.counts(count + 1)?;
    let mut layers: Vec<Linear> = dims
        .windows(2)
        .map(|w| Linear {
            fan_in: w[0],
            fan_out: w[1],
            weights: Vec::new(),
            bias: Vec::new(),
        })
        .collect();
    for layer in &mut layers {
        layer.weights = r.f64s(layer.fan_in.saturating_mul(layer.fan_out))?;
    }
    for layer in &mut layers {
        layer.bias = r.f64s(layer.fan_out)?;
    }
    let weights_at = r.pos;
    let classes = r.count()?;
    let dim = r.count()?;
    let w = r.f64s(classes.saturating_mul(dim))?;
    r.finish()?;
    let mlp = MlpParams::new(layers, activation).map_err(|e| r.invalid(8, e))?;
    if mlp.output_dim() != dim {
        return Err(r.invalid(
            weights_at + 4,
            format!("classifier dim {dim} != embedding dim {}", mlp.output_dim()),
        ));
    }
    let classifier =
        ClassifierParams::new(classes, dim, w).map_err(|e| r.invalid(weights_at, e))?;
    Ok(Checkpoint { mlp, classifier })
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> FResult<()> {
    write_atomic(path, &encode_checkpoint(ckpt))
}

pub fn read_checkpoint(path: &Path, activation: Activation) -> FResult<Checkpoint> {
    decode_checkpoint(path, &read_all(path)?, activation)
}

/// Optional first line of every text output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stamp {
    None,
    UnixSeconds(u64),
}

impl Stamp {
    pub fn now() -> Self {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self::UnixSeconds(secs)
    }

    fn header(self, out: &mut String) {
        if let Self::UnixSeconds(s) = self {
            let _ = writeln!(out, "# generated at unix time {s}");
        }
    }
}

pub fn format_pairs(pairs: &[Pair], stamp: Stamp) -> String {
    let mut out = String::new();
    stamp.header(&mut out);
    for p in pairs {
        let _ = writeln!(out, "{}\t{}\t{}", p.i, p.j, u8::from(p.same));
    }
    out
}

pub fn write_pairs(pairs: &[Pair], path: &Path, stamp: Stamp) -> FResult<()> {
    write_atomic(path, format_pairs(pairs, stamp).as_bytes())
}

/// Parses a pair TSV, skipping `#` lines. Offsets in errors are byte offsets.
pub fn parse_pairs(path: &Path, text: &str) -> FResult<Vec<Pair>> {
    let mut pairs = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.trim_end_matches(['\n', '\r']);
        if !body.is_empty() && !body.starts_with('#') {
            let bad = |reason: &str| FormatError::Invalid {
                path: path.to_path_buf(),
                offset,
                reason: format!("{reason} in line {body:?}"),
            };
            let fields: Vec<&str> = body.split('\t').collect();
            let [i, j, same] = fields[..] else {
                return Err(bad("expected 3 tab-separated fields"));
            };
            let i: usize = i.parse().map_err(|_| bad("bad index"))?;
            let j: usize = j.parse().map_err(|_| bad("bad index"))?;
            let same = match same {
                "0" => false,
                "1" => true,
                _ => return Err(bad("flag must be 0 or 1")),
            };
            pairs.push(Pair { i, j, same });
        }
        offset += line.len();
    }
    Ok(pairs)
}

pub fn read_pairs(path: &Path) -> FResult<Vec<Pair>> {
    let bytes = read_all(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| FormatError::Invalid {
        path: path.to_path_buf(),
        offset: e.valid_up_to(),
        reason: "not UTF-8".into(),
    })?;
    parse_pairs(path, text)
}

fn opt(v: Option<f64>) -> String {
    v.map(sig6).unwrap_or_default()
}

pub fn format_metrics(records: &[EpochRecord], with_eval: bool, stamp: Stamp) -> String {
    let mut out = String::new();
    stamp.header(&mut out);
    out.push_str("epoch,lr,mean_loss,psi_min,psi_mean,psi_max,kappa_mean,kappa_std");
    if with_eval {
        out.push_str(",eval_acc,eval_tar");
    }
    out.push('\n');
    for r in records {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.epoch,
            sig6(r.lr),
            sig6(r.mean_loss),
            opt(r.psi.map(|s| s.min)),
            opt(r.psi.map(|s| s.mean)),
            opt(r.psi.map(|s| s.max)),
            opt(r.kappa.map(|s| s.mean)),
            opt(r.kappa.map(|s| s.std)),
        );
        if with_eval {
            let _ = write!(
                out,
                ",{},{}",
                opt(r.eval.map(|e| e.accuracy)),
                opt(r.eval.and_then(|e| e.tar))
            );
        }
        out.push('\n');
    }
    out
}

/// Per-class scheduler table with the final additive margin `psi * m0`.
pub fn format_weights(
    weights: &ClassWeights,
    populations: &[usize],
    m0: f64,
    stamp: Stamp,
) -> String {
    let mut out = String::new();
    stamp.header(&mut out);
    out.push_str("class_id,n_c,kappa_hat,kappa_tilde,w_conc,w_pop,psi,margin\n");
    for c in 0..weights.num_classes() {
        let _ = writeln!(
            out,
            "{c},{},{},{},{},{},{},{}",
            populations[c],
            opt(weights.kappa_hat.as_ref().map(|k| k[c])),
            sig6(weights.kappa_tilde[c]),
            sig6(weights.w_conc[c]),
            sig6(weights.w_pop[c]),
            sig6(weights.psi[c]),
            sig6(weights.psi[c] * m0),
        );
    }
    out
}

pub fn format_roc(report: &VerificationReport, stamp: Stamp) -> String {
    let mut out = String::new();
    stamp.header(&mut out);
    out.push_str("far\ttar\n");
    for p in &report.roc {
        let _ = writeln!(out, "{}\t{}", sig6(p.far), sig6(p.tar));
    }
    out
}

/// Flat JSON object with numeric values at six significant digits.
pub fn format_report(report: &VerificationReport, stamp: Stamp) -> String {
    let num = |x: f64| {
        if x.is_finite() {
            sig6(x)
        } else {
            "null".into()
        }
    };
    let mut fields = Vec::new();
    if let Stamp::UnixSeconds(s) = stamp {
        fields.push(format!("\"generated_at\": {s}"));
    }
    fields.push(format!("\"accuracy\": {}", num(report.accuracy)));
    fields.push(format!(
        "\"best_threshold\": {}",
        num(report.best_threshold)
    ));
    fields.push(format!("\"num_pos\": {}", report.num_pos));
    fields.push(format!("\"num_neg\": {}", report.num_neg));
    for &(level, tar) in &report.tar_at_far {
        fields.push(format!("\"tar_at_far_{}\": {}", sig6(level), num(tar)));
    }
    format!("{{\n  {}\n}}\n", fields.join(",\n  "))
}
