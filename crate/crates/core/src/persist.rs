//! Little-endian binary formats with JSON sidecars.
//!
//! | magic  | content                | floats |
//! |--------|------------------------|--------|
//! | `PUMS` | frozen scorer          | f64    |
//! | `PUMD` | interaction dataset    | f32    |
//! | `PUMP` | prompt corpus (+ head) | f32    |
//! | `PUMA` | migration adapter      | f32    |
//!
//! Every file starts with the four magic bytes and a `u16` format version.
//! Sidecars live next to the binary as `<file>.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterBlock, AdapterHyper, MigrationAdapter};
use crate::data::{stats, DatasetStats, InteractionDataset, Item, Record, Task};
use crate::error::{PumaError, Result};
use crate::foundation::{FfnBlock, FrozenScorer, HeadKind, ScorerFamily};
use crate::numeric::{Activation, Tensor2};
use crate::prompt::{PromptCorpus, RatingHead, SoftPrompt, TrainHyper};
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u16 = 1;
pub const SCORER_MAGIC: &[u8; 4] = b"PUMS";
pub const DATASET_MAGIC: &[u8; 4] = b"PUMD";
pub const CORPUS_MAGIC: &[u8; 4] = b"PUMP";
pub const ADAPTER_MAGIC: &[u8; 4] = b"PUMA";

/// `<path>.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| PumaError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| PumaError::io(path, e))
}

fn write_sidecar<S: Serialize>(path: &Path, meta: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(meta)?;
    text.push('\n');
    write_file(&sidecar_path(path), text.as_bytes())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| PumaError::io(path, e))
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn header(magic: &[u8; 4]) -> Self {
        let mut w = Writer::default();
        w.buf.extend_from_slice(magic);
        w.u16(FORMAT_VERSION);
        w
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| PumaError::OutOfRange {
            what: "u32 field",
            value: v as f64,
            limit: u32::MAX as f64,
        })?;
        self.buf.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) -> Result<()> {
        let n = u16::try_from(s.len()).map_err(|_| PumaError::Config(format!("string too long to store: {} bytes", s.len())))?;
        self.u16(n);
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }

    fn f64s<T: Scalar>(&mut self, xs: &[T]) {
        for &x in xs {
            self.buf.extend_from_slice(&x.as_f64().to_le_bytes());
        }
    }

    fn f32s<T: Scalar>(&mut self, xs: &[T]) {
        for &x in xs {
            self.buf.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
    }
}

struct Reader<'a> {
    kind: &'static str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(kind: &'static str, magic: &[u8; 4], buf: &'a [u8]) -> Result<Self> {
        let mut r = Reader { kind, buf, pos: 0 };
        if r.take(4)? != magic {
            return Err(r.bad(format!("bad magic, expected {:?}", std::str::from_utf8(magic).unwrap_or("?"))));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(r.bad(format!("unsupported version {version}")));
        }
        Ok(r)
    }

    fn bad(&self, reason: impl Into<String>) -> PumaError {
        PumaError::Format {
            kind: self.kind,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.bad(format!("truncated at byte {}", self.pos))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.bad("string is not utf-8"))
    }

    fn f64s<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.bad("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect())
    }

    fn f32s<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.bad("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect())
    }

    fn tensor64<T: Scalar>(&mut self, rows: usize, cols: usize) -> Result<Tensor2<T>> {
        let data = self.f64s(rows.checked_mul(cols).ok_or_else(|| self.bad("shape overflow"))?)?;
        Tensor2::from_vec(rows, cols, data)
    }

    fn tensor32<T: Scalar>(&mut self, rows: usize, cols: usize) -> Result<Tensor2<T>> {
        let data = self.f32s(rows.checked_mul(cols).ok_or_else(|| self.bad("shape overflow"))?)?;
        Tensor2::from_vec(rows, cols, data)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.bad(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn head_code(h: HeadKind) -> u8 {
    match h {
        HeadKind::Rating5 => 0,
        HeadKind::Click1 => 1,
    }
}

fn task_code(t: Task) -> u8 {
    match t {
        Task::Rating => 0,
        Task::Click => 1,
    }
}

// ---------------------------------------------------------------- scorer

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerMeta {
    pub family: String,
    pub seed: u64,
    pub d_model: usize,
    pub depth: usize,
    pub d_hidden: usize,
    pub d_item: usize,
    pub prompt_len: usize,
    pub nonlinearity: Activation,
    pub head: HeadKind,
    pub param_count: usize,
    pub weight_hash: String,
}

impl ScorerMeta {
    pub fn of<T: Scalar>(s: &FrozenScorer<T>) -> Self {
        let f = s.family();
        ScorerMeta {
            family: f.name.clone(),
            seed: s.seed(),
            d_model: f.d_model,
            depth: f.depth,
            d_hidden: f.d_hidden,
            d_item: s.d_item(),
            prompt_len: f.prompt_len,
            nonlinearity: f.nonlinearity,
            head: f.head,
            param_count: s.param_count(),
            weight_hash: s.weight_hash(),
        }
    }
}

pub fn encode_scorer<T: Scalar>(s: &FrozenScorer<T>) -> Result<Vec<u8>> {
    let f = s.family();
    let mut w = Writer::header(SCORER_MAGIC);
    w.str(&f.name)?;
    w.u32(f.d_model)?;
    w.u32(f.depth)?;
    w.u32(f.d_hidden)?;
    w.u8(f.nonlinearity.code());
    w.u8(head_code(f.head));
    w.u32(f.prompt_len)?;
    w.u64(s.seed());
    w.u32(s.d_item())?;
    for t in s.tensors() {
        w.f64s(t);
    }
    Ok(w.buf)
}

pub fn decode_scorer<T: Scalar>(bytes: &[u8]) -> Result<FrozenScorer<T>> {
    let mut r = Reader::open("scorer", SCORER_MAGIC, bytes)?;
    let name = r.str()?;
    let d_model = r.u32()?;
    let depth = r.u32()?;
    let d_hidden = r.u32()?;
    let act = r.u8()?;
    let nonlinearity = Activation::from_code(act).ok_or_else(|| r.bad(format!("unknown activation code {act}")))?;
    let head = match r.u8()? {
        0 => HeadKind::Rating5,
        1 => HeadKind::Click1,
        c => return Err(r.bad(format!("unknown head code {c}"))),
    };
    let prompt_len = r.u32()?;
    let seed = r.u64()?;
    let d_item = r.u32()?;
    let family = ScorerFamily {
        name,
        d_model,
        depth,
        d_hidden,
        nonlinearity,
        head,
        prompt_len,
    };
    family.validate().map_err(|e| r.bad(e.to_string()))?;
    let w = family.width();
    let item_proj = r.tensor64(d_item, d_model)?;
    let mut blocks = Vec::with_capacity(depth);
    for _ in 0..depth {
        let w1 = r.tensor64(w, d_hidden)?;
        let b1 = r.f64s(d_hidden)?;
        let w2 = r.tensor64(d_hidden, w)?;
        let b2 = r.f64s(w)?;
        let ln_gamma = r.f64s(w)?;
        let ln_beta = r.f64s(w)?;
        blocks.push(FfnBlock {
            w1,
            b1,
            w2,
            b2,
            ln_gamma,
            ln_beta,
        });
    }
    let head_w = r.tensor64(w, head.width())?;
    let head_b = r.f64s(head.width())?;
    r.finish()?;
    FrozenScorer::from_parts(family, seed, item_proj, blocks, head_w, head_b)
}

pub fn save_scorer<T: Scalar>(path: &Path, s: &FrozenScorer<T>) -> Result<()> {
    write_file(path, &encode_scorer(s)?)?;
    write_sidecar(path, &ScorerMeta::of(s))
}

pub fn load_scorer<T: Scalar>(path: &Path) -> Result<FrozenScorer<T>> {
    decode_scorer(&read_file(path)?)
}

// --------------------------------------------------------------- dataset

/// Sidecar of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub click_bias: Option<f64>,
    pub stats: DatasetStats,
}

/// Labels and embeddings are stored as `f32`; generated datasets already
/// hold `f32`-representable values, so they round-trip exactly.
pub fn encode_dataset(ds: &InteractionDataset) -> Result<Vec<u8>> {
    let mut w = Writer::header(DATASET_MAGIC);
    w.u8(task_code(ds.task));
    w.u32(ds.n_users)?;
    w.u32(ds.n_items())?;
    w.u32(ds.d_item())?;
    w.u64(ds.records.len() as u64);
    for r in &ds.records {
        w.buf.extend_from_slice(&r.user.to_le_bytes());
        w.buf.extend_from_slice(&r.item.to_le_bytes());
        w.buf.extend_from_slice(&(r.y as f32).to_le_bytes());
    }
    for it in &ds.items {
        w.f32s(&it.embed);
    }
    Ok(w.buf)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<InteractionDataset> {
    let mut r = Reader::open("dataset", DATASET_MAGIC, bytes)?;
    let task = match r.u8()? {
        0 => Task::Rating,
        1 => Task::Click,
        c => return Err(r.bad(format!("unknown task code {c}"))),
    };
    let n_users = r.u32()?;
    let n_items = r.u32()?;
    let d_item = r.u32()?;
    let n_records = usize::try_from(r.u64()?).map_err(|_| r.bad("record count overflow"))?;
    if n_records.saturating_mul(12) > bytes.len() {
        return Err(r.bad("record count exceeds file size"));
    }
    let mut records = Vec::with_capacity(n_records);
    for _ in 0..n_records {
        let user = r.u32()? as u32;
        let item = r.u32()? as u32;
        let y = f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as f64;
        records.push(Record { user, item, y });
    }
    let mut items = Vec::with_capacity(n_items);
    for id in 0..n_items {
        items.push(Item { id, embed: r.f32s(d_item)? });
    }
    r.finish()?;
    InteractionDataset::from_parts(task, n_users, items, records)
}

pub fn save_dataset(path: &Path, ds: &InteractionDataset, seed: u64) -> Result<()> {
    write_file(path, &encode_dataset(ds)?)?;
    write_sidecar(
        path,
        &DatasetMeta {
            seed,
            click_bias: ds.click_bias,
            stats: stats(ds),
        },
    )
}

/// Loads the binary and restores the click offset from the sidecar when present.
pub fn load_dataset(path: &Path) -> Result<InteractionDataset> {
    let mut ds = decode_dataset(&read_file(path)?)?;
    if let Ok(text) = fs::read_to_string(sidecar_path(path)) {
        if let Ok(meta) = serde_json::from_str::<DatasetMeta>(&text) {
            ds.click_bias = meta.click_bias;
        }
    }
    Ok(ds)
}

// ---------------------------------------------------------------- corpus

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub scorer_id: String,
    pub n_users: usize,
    pub prompt_len: usize,
    pub width: usize,
    pub head_hidden: Option<usize>,
    pub prompt_hash: String,
    pub hyper: Option<TrainHyper>,
}

fn write_head<T: Scalar>(w: &mut Writer, head: Option<&RatingHead<T>>) -> Result<()> {
    match head {
        None => w.u8(0),
        Some(h) => {
            w.u8(1);
            w.u32(h.hidden())?;
            for t in h.params() {
                w.f32s(t.data());
            }
        }
    }
    Ok(())
}

fn read_head<T: Scalar>(r: &mut Reader) -> Result<Option<RatingHead<T>>> {
    match r.u8()? {
        0 => Ok(None),
        1 => {
            let h = r.u32()?;
            Ok(Some(RatingHead {
                w1: r.tensor32(5, h)?,
                b1: r.tensor32(1, h)?,
                w2: r.tensor32(h, 1)?,
                b2: r.tensor32(1, 1)?,
            }))
        }
        c => Err(r.bad(format!("bad head flag {c}"))),
    }
}

pub fn encode_corpus<T: Scalar>(c: &PromptCorpus<T>) -> Result<Vec<u8>> {
    c.validate()?;
    let mut w = Writer::header(CORPUS_MAGIC);
    w.str(&c.scorer_id)?;
    w.u32(c.prompt_len())?;
    w.u32(c.width())?;
    w.u32(c.n_users())?;
    for p in &c.prompts {
        w.f32s(p.values.data());
    }
    write_head(&mut w, c.head.as_ref())?;
    Ok(w.buf)
}

pub fn decode_corpus<T: Scalar>(bytes: &[u8]) -> Result<PromptCorpus<T>> {
    let mut r = Reader::open("prompt corpus", CORPUS_MAGIC, bytes)?;
    let scorer_id = r.str()?;
    let l = r.u32()?;
    let d = r.u32()?;
    let n = r.u32()?;
    if n.saturating_mul(l).saturating_mul(d).saturating_mul(4) > bytes.len() {
        return Err(r.bad("prompt count exceeds file size"));
    }
    let mut prompts = Vec::with_capacity(n);
    for user in 0..n {
        prompts.push(SoftPrompt {
            user,
            values: r.tensor32(l, d)?,
        });
    }
    let head = read_head(&mut r)?;
    r.finish()?;
    Ok(PromptCorpus { scorer_id, prompts, head })
}

pub fn save_corpus<T: Scalar>(path: &Path, c: &PromptCorpus<T>, hyper: Option<&TrainHyper>) -> Result<()> {
    write_file(path, &encode_corpus(c)?)?;
    write_sidecar(
        path,
        &CorpusMeta {
            scorer_id: c.scorer_id.clone(),
            n_users: c.n_users(),
            prompt_len: c.prompt_len(),
            width: c.width(),
            head_hidden: c.head.as_ref().map(RatingHead::hidden),
            prompt_hash: c.prompt_hash(),
            hyper: hyper.cloned(),
        },
    )
}

pub fn load_corpus<T: Scalar>(path: &Path) -> Result<PromptCorpus<T>> {
    decode_corpus(&read_file(path)?)
}

// --------------------------------------------------------------- adapter

/// Provenance stored next to an adapter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterMeta {
    pub source_ids: Vec<String>,
    pub source_hashes: Vec<String>,
    pub target_id: String,
    pub target_hash: String,
    pub param_count: usize,
    pub hyper: AdapterHyper,
    /// Selection summary (strategy, budget, users) when a coreset was used.
    #[serde(default)]
    pub selection: Option<serde_json::Value>,
}

pub fn encode_adapter<T: Scalar>(a: &MigrationAdapter<T>, head: Option<&RatingHead<T>>) -> Result<Vec<u8>> {
    let mut w = Writer::header(ADAPTER_MAGIC);
    w.u32(a.source_dims.len())?;
    for &(l, d) in &a.source_dims {
        w.u32(l)?;
        w.u32(d)?;
    }
    w.u32(a.target_dim.0)?;
    w.u32(a.target_dim.1)?;
    w.u32(a.blocks.len())?;
    w.u32(a.hidden())?;
    w.u8(a.activation.code());
    for t in a.tensors() {
        w.f32s(t.data());
    }
    write_head(&mut w, head)?;
    Ok(w.buf)
}

pub fn decode_adapter<T: Scalar>(bytes: &[u8]) -> Result<(MigrationAdapter<T>, Option<RatingHead<T>>)> {
    let mut r = Reader::open("adapter", ADAPTER_MAGIC, bytes)?;
    let n_src = r.u32()?;
    if n_src == 0 || n_src > 64 {
        return Err(r.bad(format!("implausible source count {n_src}")));
    }
    let mut source_dims = Vec::with_capacity(n_src);
    for _ in 0..n_src {
        source_dims.push((r.u32()?, r.u32()?));
    }
    let target_dim = (r.u32()?, r.u32()?);
    let n_blocks = r.u32()?;
    let hidden = r.u32()?;
    let code = r.u8()?;
    let activation = Activation::from_code(code).ok_or_else(|| r.bad(format!("unknown activation code {code}")))?;
    let input: usize = source_dims.iter().map(|&(l, d)| l * d).sum();
    let width = target_dim.0 * target_dim.1;
    let w_in = r.tensor32(input, width)?;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        blocks.push(AdapterBlock {
            ln_gamma: r.tensor32(1, width)?,
            ln_beta: r.tensor32(1, width)?,
            w1: r.tensor32(width, hidden)?,
            b1: r.tensor32(1, hidden)?,
            w2: r.tensor32(hidden, width)?,
            b2: r.tensor32(1, width)?,
        });
    }
    let head = read_head(&mut r)?;
    r.finish()?;
    let adapter = MigrationAdapter {
        source_dims,
        target_dim,
        w_in,
        blocks,
        activation,
    };
    Ok((adapter, head))
}

pub fn save_adapter<T: Scalar>(path: &Path, a: &MigrationAdapter<T>, head: Option<&RatingHead<T>>, meta: &AdapterMeta) -> Result<()> {
    write_file(path, &encode_adapter(a, head)?)?;
    write_sidecar(path, meta)
}

pub fn load_adapter<T: Scalar>(path: &Path) -> Result<(MigrationAdapter<T>, Option<RatingHead<T>>)> {
    decode_adapter(&read_file(path)?)
}

/// Reads any sidecar as typed JSON.
pub fn load_sidecar<M: for<'de> Deserialize<'de>>(path: &Path) -> Result<M> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| PumaError::io(&side, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::build_adapter;
    use crate::data::{generate_dataset, DataConfig};
    use crate::prompt::init_prompts;

    fn small_ds() -> InteractionDataset {
        let cfg = DataConfig {
            n_users: 12,
            n_items: 20,
            mean_records_per_user: 5.0,
            ..DataConfig::default()
        };
        generate_dataset(&cfg, 3).unwrap()
    }

    #[test]
    fn scorer_round_trip_is_bit_exact() {
        let fam = ScorerFamily::builtin("echo", HeadKind::Rating5).unwrap();
        let s: FrozenScorer<f64> = FrozenScorer::build(fam, 16, 9).unwrap();
        let bytes = encode_scorer(&s).unwrap();
        assert_eq!(&bytes[..4], b"PUMS");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), FORMAT_VERSION);
        let back: FrozenScorer<f64> = decode_scorer(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.weight_hash(), s.weight_hash());
    }

    #[test]
    fn dataset_round_trip() {
        let ds = small_ds();
        let back = decode_dataset(&encode_dataset(&ds).unwrap()).unwrap();
        assert_eq!(back.records, ds.records);
        assert_eq!(back.items, ds.items);
        assert_eq!(back.n_users, ds.n_users);
    }

    #[test]
    fn corpus_round_trip_rounds_to_f32() {
        let c: PromptCorpus<f64> = init_prompts(4, 1, 16, 2, Some((8, 3.5)), "echo#1");
        let back: PromptCorpus<f64> = decode_corpus(&encode_corpus(&c).unwrap()).unwrap();
        assert_eq!(back.scorer_id, c.scorer_id);
        assert_eq!(back.n_users(), 4);
        for (a, b) in back.prompts.iter().zip(&c.prompts) {
            for (x, y) in a.values.data().iter().zip(b.values.data()) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
        assert_eq!(back.head.as_ref().unwrap().hidden(), 8);
        // a second pass is exact
        let again: PromptCorpus<f64> = decode_corpus(&encode_corpus(&back).unwrap()).unwrap();
        assert_eq!(again, back);
    }

    #[test]
    fn adapter_round_trip() {
        let a: MigrationAdapter<f64> = build_adapter(&[(1, 32), (1, 24)], (1, 48), 2, 8, Activation::Gelu, 4).unwrap();
        let bytes = encode_adapter(&a, None).unwrap();
        assert_eq!(&bytes[..4], b"PUMA");
        let (back, head) = decode_adapter::<f64>(&bytes).unwrap();
        assert!(head.is_none());
        assert_eq!(back.source_dims, a.source_dims);
        assert_eq!(back.param_count(), a.param_count());
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let ds = small_ds();
        let mut bytes = encode_dataset(&ds).unwrap();
        assert!(decode_dataset(&bytes[..bytes.len() - 1]).is_err());
        bytes.push(0);
        assert!(decode_dataset(&bytes).is_err());
        bytes[0] = b'X';
        assert!(matches!(decode_dataset(&bytes), Err(PumaError::Format { .. })));
        let fam = ScorerFamily::builtin("echo", HeadKind::Click1).unwrap();
        let s: FrozenScorer<f64> = FrozenScorer::build(fam, 4, 1).unwrap();
        let mut b = encode_scorer(&s).unwrap();
        b[4] = 9;
        assert!(decode_scorer::<f64>(&b).is_err());
        assert!(decode_corpus::<f64>(b"PUMP").is_err());
    }
}
