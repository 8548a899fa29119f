//! Masks, mask datasets and the value-function abstraction.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::rng;
use crate::synth::{self, SyntheticSpec};

/// Default number of masks per provider call.
pub const DEFAULT_BATCH: usize = 256;

/// Environment variable carrying `n` to external providers.
pub const VF_N_ENV: &str = "SPEX_VF_N";

/// Draws `count` masks uniformly from the power set of `{0, .., n-1}`:
/// every bit is an independent fair coin. Sampling is with replacement.
pub fn sample_masks(n: usize, count: usize, seed: u64) -> Result<Vec<Mask>> {
    if n == 0 {
        return Err(Error::invalid("sample_masks: n must be at least 1"));
    }
    if count == 0 {
        return Err(Error::invalid("sample_masks: count must be at least 1"));
    }
    let mut rng = rng::seeded(seed);
    let words = n.div_ceil(64);
    Ok((0..count)
        .map(|_| {
            let mut m = Mask::empty(n);
            for w in 0..words {
                let bits: u64 = rng.random();
                for b in 0..64 {
                    let i = w * 64 + b;
                    if i < n && (bits >> b) & 1 == 1 {
                        m.insert(i);
                    }
                }
            }
            m
        })
        .collect())
}

/// Ordered `(mask, value)` pairs over a universe of `n` features.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskDataset {
    n: usize,
    masks: Vec<Mask>,
    values: Vec<f64>,
}

impl MaskDataset {
    pub fn new(n: usize, masks: Vec<Mask>, values: Vec<f64>) -> Result<Self> {
        if masks.len() != values.len() {
            return Err(Error::invalid(format!(
                "{} masks but {} values",
                masks.len(),
                values.len()
            )));
        }
        for m in &masks {
            m.check_width(n)?;
        }
        Ok(MaskDataset { n, masks, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn masks(&self) -> &[Mask] {
        &self.masks
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Mask, f64)> + '_ {
        self.masks.iter().zip(self.values.iter().copied())
    }

    /// Sub-dataset at the given row positions, in that order.
    pub fn select(&self, rows: &[usize]) -> MaskDataset {
        MaskDataset {
            n: self.n,
            masks: rows.iter().map(|&r| self.masks[r].clone()).collect(),
            values: rows.iter().map(|&r| self.values[r]).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return f64::NAN;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Population variance of the values.
    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / self.values.len() as f64
    }

    /// Writes the JSON Lines form: `{"n":N}` then one `{"mask":[..],"value":v}` per sample.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", serde_json::json!({ "n": self.n }))?;
        for (m, v) in self.iter() {
            let row = SampleRow {
                mask: m.indices(),
                value: Some(v),
            };
            writeln!(w, "{}", serde_json::to_string(&row)?)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let (n, rows) = read_rows(r)?;
        let mut masks = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len());
        for (line, row) in rows {
            let v = row
                .value
                .ok_or_else(|| Error::invalid(format!("line {line}: sample has no value")))?;
            masks.push(Mask::from_indices(n, row.mask)?);
            values.push(v);
        }
        MaskDataset::new(n, masks, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }
}

#[derive(Serialize, Deserialize)]
struct SampleRow {
    mask: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
}

#[derive(Deserialize)]
struct Header {
    n: usize,
}

fn read_rows<R: BufRead>(r: R) -> Result<(usize, Vec<(usize, SampleRow)>)> {
    let mut lines = r.lines().enumerate().filter(|(_, l)| match l {
        Ok(s) => !s.trim().is_empty(),
        Err(_) => true,
    });
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::invalid("empty mask file: missing {\"n\":N} header"))?;
    let n = serde_json::from_str::<Header>(&header?)?.n;
    let mut rows = Vec::new();
    for (i, line) in lines {
        rows.push((i + 1, serde_json::from_str::<SampleRow>(&line?)?));
    }
    Ok((n, rows))
}

/// Writes bare masks (no values) in the dataset layout.
pub fn write_masks<W: Write>(n: usize, masks: &[Mask], mut w: W) -> Result<()> {
    writeln!(w, "{}", serde_json::json!({ "n": n }))?;
    for m in masks {
        m.check_width(n)?;
        let row = SampleRow {
            mask: m.indices(),
            value: None,
        };
        writeln!(w, "{}", serde_json::to_string(&row)?)?;
    }
    Ok(())
}

/// Reads masks written by [`write_masks`] (values, if present, are ignored).
pub fn read_masks<R: BufRead>(r: R) -> Result<(usize, Vec<Mask>)> {
    let (n, rows) = read_rows(r)?;
    let masks = rows
        .into_iter()
        .map(|(_, row)| Mask::from_indices(n, row.mask))
        .collect::<Result<_>>()?;
    Ok((n, masks))
}

/// A real-valued set function queried in batches.
///
/// Implementations must be deterministic within a session and return exactly
/// one value per mask, in input order.
pub trait ValueFunction: Send + Sync {
    fn n(&self) -> usize;

    fn query(&self, masks: &[Mask]) -> Result<Vec<f64>>;

    fn preferred_batch(&self) -> usize {
        DEFAULT_BATCH
    }
}

impl<V: ValueFunction + ?Sized> ValueFunction for Box<V> {
    fn n(&self) -> usize {
        (**self).n()
    }
    fn query(&self, masks: &[Mask]) -> Result<Vec<f64>> {
        (**self).query(masks)
    }
    fn preferred_batch(&self) -> usize {
        (**self).preferred_batch()
    }
}

impl<V: ValueFunction + ?Sized> ValueFunction for &V {
    fn n(&self) -> usize {
        (**self).n()
    }
    fn query(&self, masks: &[Mask]) -> Result<Vec<f64>> {
        (**self).query(masks)
    }
    fn preferred_batch(&self) -> usize {
        (**self).preferred_batch()
    }
}

/// Queries `vf` on every mask, `batch_size` masks per call.
pub fn evaluate_dataset<V>(vf: &V, masks: &[Mask], batch_size: usize) -> Result<MaskDataset>
where
    V: ValueFunction + ?Sized,
{
    let n = vf.n();
    for m in masks {
        m.check_width(n)?;
    }
    let batch_size = batch_size.max(1);
    let mut values = Vec::with_capacity(masks.len());
    for (b, chunk) in masks.chunks(batch_size).enumerate() {
        let out = vf.query(chunk).map_err(|e| match e {
            Error::Provider { message, .. } => Error::Provider {
                batch: Some(b),
                message,
            },
            other => Error::Provider {
                batch: Some(b),
                message: other.to_string(),
            },
        })?;
        if out.len() != chunk.len() {
            return Err(Error::Provider {
                batch: Some(b),
                message: format!("{} values returned for {} masks", out.len(), chunk.len()),
            });
        }
        values.extend(out);
    }
    MaskDataset::new(n, masks.to_vec(), values)
}

/// Lookup-table provider; a partial table fails on missing subsets.
#[derive(Debug, Clone)]
pub struct TableFn {
    n: usize,
    table: HashMap<Mask, f64>,
}

impl TableFn {
    pub fn new(n: usize, entries: impl IntoIterator<Item = (Mask, f64)>) -> Result<Self> {
        let mut table = HashMap::new();
        for (m, v) in entries {
            m.check_width(n)?;
            table.insert(m, v);
        }
        Ok(TableFn { n, table })
    }

    /// Complete table indexed by the integer code of each mask (bit i = feature i).
    pub fn from_dense(values: &[f64]) -> Result<Self> {
        let n = dense_width(values.len())?;
        let entries = values
            .iter()
            .enumerate()
            .map(|(code, &v)| (Mask::from_bits_u64(n, code as u64), v));
        TableFn::new(n, entries)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

pub(crate) fn dense_width(len: usize) -> Result<usize> {
    if len == 0 || !len.is_power_of_two() {
        return Err(Error::invalid(format!(
            "a complete table needs 2^n entries, got {len}"
        )));
    }
    Ok(len.trailing_zeros() as usize)
}

impl ValueFunction for TableFn {
    fn n(&self) -> usize {
        self.n
    }

    fn query(&self, masks: &[Mask]) -> Result<Vec<f64>> {
        masks
            .iter()
            .map(|m| {
                self.table
                    .get(m)
                    .copied()
                    .ok_or_else(|| Error::provider(format!("table has no entry for {:?}", m.indices())))
            })
            .collect()
    }
}

/// Wraps a closure as a provider.
pub struct FnValue<F> {
    n: usize,
    f: F,
}

impl<F> FnValue<F>
where
    F: Fn(&Mask) -> f64 + Send + Sync,
{
    pub fn new(n: usize, f: F) -> Self {
        FnValue { n, f }
    }
}

impl<F> ValueFunction for FnValue<F>
where
    F: Fn(&Mask) -> f64 + Send + Sync,
{
    fn n(&self) -> usize {
        self.n
    }

    fn query(&self, masks: &[Mask]) -> Result<Vec<f64>> {
        Ok(masks.iter().map(|m| (self.f)(m)).collect())
    }
}

/// Counts every mask sent to the wrapped provider.
pub struct QueryCounter<V> {
    inner: V,
    count: AtomicUsize,
}

impl<V: ValueFunction> QueryCounter<V> {
    pub fn new(inner: V) -> Self {
        QueryCounter {
            inner,
            count: AtomicUsize::new(0),
        }
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }
}

impl<V: ValueFunction> ValueFunction for QueryCounter<V> {
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn query(&self, masks: &[Mask]) -> Result<Vec<f64>> {
        self.count.fetch_add(masks.len(), Ordering::Relaxed);
        self.inner.query(masks)
    }

    fn preferred_batch(&self) -> usize {
        self.inner.preferred_batch()
    }
}

/// Subprocess provider speaking the line protocol: one bitstring per mask,
/// a blank line to end the batch, then one decimal value per line back.
pub struct ExternalFn {
    n: usize,
    batch: usize,
    io: Mutex<ChildIo>,
}

struct ChildIo {
    child: Child,
    stdin: Option<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

impl ExternalFn {
    pub fn spawn(cmd: &str, args: &[String], n: usize, batch: usize) -> Result<Self> {
        let mut child = Command::new(cmd)
            .args(args)
            .env(VF_N_ENV, n.to_string())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::provider(format!("cannot start {cmd:?}: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child
            .stdout
            .take()
            .map(BufReader::new)
            .ok_or_else(|| Error::provider("child stdout unavailable"))?;
        Ok(ExternalFn {
            n,
            batch: batch.max(1),
            io: Mutex::new(ChildIo {
                child,
                stdin,
                stdout,
            }),
        })
    }
}

impl ValueFunction for ExternalFn {
    fn n(&self) -> usize {
        self.n
    }

    fn preferred_batch(&self) -> usize {
        self.batch
    }

    fn query(&self, masks: &[Mask]) -> Result<Vec<f64>> {
        let mut io = self
            .io
            .lock()
            .map_err(|_| Error::provider("provider lock poisoned"))?;
        let ChildIo { stdin, stdout, .. } = &mut *io;
        let stdin = stdin
            .as_mut()
            .ok_or_else(|| Error::provider("provider stdin closed"))?;
        let mut payload = String::with_capacity(masks.len() * (self.n + 1) + 1);
        for m in masks {
            m.check_width(self.n)?;
            payload.push_str(&m.to_bitstring());
            payload.push('\n');
        }
        payload.push('\n');
        stdin
            .write_all(payload.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| Error::provider(format!("write to provider failed: {e}")))?;

        let mut out = Vec::with_capacity(masks.len());
        let mut line = String::new();
        while out.len() < masks.len() {
            line.clear();
            let read = stdout
                .read_line(&mut line)
                .map_err(|e| Error::provider(format!("read from provider failed: {e}")))?;
            if read == 0 {
                return Err(Error::provider(format!(
                    "provider closed its output after {} of {} values",
                    out.len(),
                    masks.len()
                )));
            }
            let text = line.trim();
            let v: f64 = text
                .parse()
                .map_err(|_| Error::provider(format!("provider replied {text:?}, expected a number")))?;
            if !v.is_finite() {
                return Err(Error::provider(format!("provider replied non-finite {text:?}")));
            }
            out.push(v);
        }
        Ok(out)
    }
}

impl Drop for ExternalFn {
    fn drop(&mut self) {
        if let Ok(io) = self.io.get_mut() {
            io.stdin.take();
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}

/// Declarative description of a provider, as stored in `vf.json` files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSpec {
    Table {
        n: usize,
        entries: Vec<TableEntry>,
    },
    Synthetic(SyntheticSpec),
    External {
        cmd: String,
        #[serde(default)]
        args: Vec<String>,
        n: usize,
        #[serde(default = "default_batch")]
        batch: usize,
    },
}

fn default_batch() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub mask: Vec<usize>,
    pub value: f64,
}

impl ProviderSpec {
    pub fn n(&self) -> usize {
        match self {
            ProviderSpec::Table { n, .. } | ProviderSpec::External { n, .. } => *n,
            ProviderSpec::Synthetic(s) => s.n,
        }
    }

    /// Parses a provider description, reporting unknown kinds as config errors.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let kind = raw
            .get("kind")
            .and_then(|k| k.as_str())
            .map(str::to_owned)
            .ok_or_else(|| Error::Config("provider description needs a \"kind\"".into()))?;
        if !matches!(kind.as_str(), "table" | "synthetic" | "external") {
            return Err(Error::Config(format!("unknown provider kind {kind:?}")));
        }
        serde_json::from_value(raw).map_err(|e| Error::Config(format!("{kind} provider: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Instantiates a provider from its description.
pub fn make_value_function(spec: &ProviderSpec) -> Result<Box<dyn ValueFunction>> {
    Ok(match spec {
        ProviderSpec::Table { n, entries } => {
            let entries = entries
                .iter()
                .map(|e| Ok((Mask::from_indices(*n, e.mask.iter().copied())?, e.value)))
                .collect::<Result<Vec<_>>>()?;
            Box::new(TableFn::new(*n, entries)?)
        }
        ProviderSpec::Synthetic(s) => Box::new(synth::make_synthetic(s)?.0),
        ProviderSpec::External {
            cmd,
            args,
            n,
            batch,
        } => Box::new(ExternalFn::spawn(cmd, args, *n, *batch)?),
    })
}
