//! Model checkpoints and persisted retrieval indices on top of the record
//! container.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use simile_core::nn::{LocateGen, ModelConfig};
use simile_core::retrieval::{InvertedIndex, Matcher, Posting};
use simile_core::vocab::Vocabulary;
use simile_core::{ParamStore, Precision, Real, Tensor};

use crate::container::{parse_container, write_container, Payload, Record};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    LocateGen,
    Matcher,
    Bm25Index,
}

/// Header of a model checkpoint. The vocabulary travels with the weights so
/// a checkpoint is self-contained; its checksum guards against edits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub format_version: u32,
    pub kind: ArtifactKind,
    pub config: ModelConfig,
    pub vocab_checksum: u64,
    pub vocab: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexHeader {
    format_version: u32,
    kind: ArtifactKind,
    entries: Vec<(String, String)>,
}

/// First 16 hex digits of the SHA-256 of the checkpoint bytes.
pub fn checkpoint_id(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn payload_of<T: Real>(data: &[T]) -> Payload {
    match T::PRECISION {
        Precision::F32 => Payload::F32(data.iter().map(|x| x.as_f64() as f32).collect()),
        Precision::F64 => Payload::F64(data.iter().map(|x| x.as_f64()).collect()),
    }
}

pub fn params_to_records<T: Real>(params: &ParamStore<T>) -> Vec<Record> {
    params
        .iter()
        .map(|(_, name, t)| Record {
            name: name.to_owned(),
            dims: t.shape().to_vec(),
            payload: payload_of(t.data()),
        })
        .collect()
}

/// Widening f32 records into an f64 store is exact; narrowing is refused.
pub fn records_to_params<T: Real>(records: Vec<Record>) -> Result<ParamStore<T>> {
    let mut store = ParamStore::new();
    for r in records {
        let data: Vec<T> = match (r.payload, T::PRECISION) {
            (Payload::F32(v), _) => v.into_iter().map(|x| T::of(x as f64)).collect(),
            (Payload::F64(v), Precision::F64) => v.into_iter().map(T::of).collect(),
            (Payload::F64(_), Precision::F32) => {
                return Err(Error::format("checkpoint", format!("{}: f64 record loaded as f32", r.name)))
            }
        };
        store.insert(&r.name, Tensor::new(r.dims, data)?)?;
    }
    Ok(store)
}

fn stored_precision(records: &[Record]) -> Result<Precision> {
    let first = records
        .first()
        .ok_or_else(|| Error::format("checkpoint", "no parameter records"))?
        .payload
        .precision();
    if records.iter().any(|r| r.payload.precision() != first) {
        return Err(Error::format("checkpoint", "mixed record dtypes"));
    }
    Ok(first)
}

fn model_header(kind: ArtifactKind, config: &ModelConfig, vocab: &Vocabulary) -> ModelHeader {
    ModelHeader {
        format_version: FORMAT_VERSION,
        kind,
        config: config.clone(),
        vocab_checksum: vocab.checksum(),
        vocab: vocab.tokens(),
    }
}

fn check_header(h: &ModelHeader, kind: ArtifactKind) -> Result<Vocabulary> {
    if h.format_version != FORMAT_VERSION {
        return Err(Error::format(
            "checkpoint",
            format!("format version {} (expected {FORMAT_VERSION})", h.format_version),
        ));
    }
    if h.kind != kind {
        return Err(Error::format("checkpoint", format!("holds {:?}, expected {kind:?}", h.kind)));
    }
    let vocab = Vocabulary::from_tokens(&h.vocab)?;
    if vocab.checksum() != h.vocab_checksum {
        return Err(Error::format("checkpoint", "vocabulary checksum mismatch"));
    }
    Ok(vocab)
}

pub fn write_model<T: Real, W: Write>(w: W, model: &LocateGen<T>, vocab: &Vocabulary) -> Result<()> {
    let header = model_header(ArtifactKind::LocateGen, model.config(), vocab);
    write_container(w, &header, &params_to_records(model.params()))
}

pub fn model_bytes<T: Real>(model: &LocateGen<T>, vocab: &Vocabulary) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_model(&mut buf, model, vocab)?;
    Ok(buf)
}

pub fn save_model<T: Real>(path: &Path, model: &LocateGen<T>, vocab: &Vocabulary) -> Result<()> {
    fs::write(path, model_bytes(model, vocab)?).map_err(Error::io(path))
}

/// A model in whichever precision its checkpoint stores.
#[derive(Debug, Clone)]
pub enum AnyModel {
    F32(LocateGen<f32>),
    F64(LocateGen<f64>),
}

impl AnyModel {
    pub fn config(&self) -> &ModelConfig {
        match self {
            Self::F32(m) => m.config(),
            Self::F64(m) => m.config(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: AnyModel,
    pub vocab: Vocabulary,
    pub id: String,
}

pub fn parse_model(bytes: &[u8]) -> Result<LoadedModel> {
    let (header, records): (ModelHeader, _) = parse_container(bytes)?;
    let vocab = check_header(&header, ArtifactKind::LocateGen)?;
    let model = match stored_precision(&records)? {
        Precision::F32 => AnyModel::F32(LocateGen::from_params(header.config, records_to_params(records)?)?),
        Precision::F64 => AnyModel::F64(LocateGen::from_params(header.config, records_to_params(records)?)?),
    };
    Ok(LoadedModel {
        model,
        vocab,
        id: checkpoint_id(bytes),
    })
}

/// Loads the model at precision `T` regardless of the stored dtype, as long
/// as the conversion is exact.
pub fn parse_model_as<T: Real>(bytes: &[u8]) -> Result<(LocateGen<T>, Vocabulary)> {
    let (header, records): (ModelHeader, _) = parse_container(bytes)?;
    let vocab = check_header(&header, ArtifactKind::LocateGen)?;
    Ok((LocateGen::from_params(header.config, records_to_params(records)?)?, vocab))
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    parse_model(&fs::read(path).map_err(Error::io(path))?)
}

pub fn save_matcher(path: &Path, matcher: &Matcher<f32>, vocab: &Vocabulary) -> Result<()> {
    let header = model_header(ArtifactKind::Matcher, matcher.config(), vocab);
    let mut buf = Vec::new();
    write_container(&mut buf, &header, &params_to_records(matcher.params()))?;
    fs::write(path, buf).map_err(Error::io(path))
}

pub fn load_matcher(path: &Path) -> Result<(Matcher<f32>, Vocabulary)> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let (header, records): (ModelHeader, _) = parse_container(&bytes)?;
    let vocab = check_header(&header, ArtifactKind::Matcher)?;
    Ok((Matcher::from_params(header.config, records_to_params(records)?)?, vocab))
}

/// Entries go in the header; postings (`[n, 2]` of record id and term
/// frequency) and lengths go in records named `postings.<char>` and
/// `lengths`.
pub fn write_index<W: Write>(w: W, index: &InvertedIndex) -> Result<()> {
    let header = IndexHeader {
        format_version: FORMAT_VERSION,
        kind: ArtifactKind::Bm25Index,
        entries: index.entries().map(|(a, b)| (a.to_owned(), b.to_owned())).collect(),
    };
    let exact = |n: u32| -> Result<f32> {
        if n > 1 << 24 {
            return Err(Error::format("index", format!("{n} is not exact in f32")));
        }
        Ok(n as f32)
    };
    let mut records = vec![Record {
        name: "lengths".into(),
        dims: vec![index.len()],
        payload: Payload::F32(index.lengths().iter().map(|&l| exact(l)).collect::<Result<_>>()?),
    }];
    for (term, postings) in index.terms() {
        let mut flat = Vec::with_capacity(postings.len() * 2);
        for p in postings {
            flat.push(exact(p.record)?);
            flat.push(exact(p.tf)?);
        }
        records.push(Record {
            name: format!("postings.{term}"),
            dims: vec![postings.len(), 2],
            payload: Payload::F32(flat),
        });
    }
    write_container(w, &header, &records)
}

pub fn save_index(path: &Path, index: &InvertedIndex) -> Result<()> {
    let mut buf = Vec::new();
    write_index(&mut buf, index)?;
    fs::write(path, buf).map_err(Error::io(path))
}

pub fn parse_index(bytes: &[u8]) -> Result<InvertedIndex> {
    let (header, records): (IndexHeader, _) = parse_container(bytes)?;
    if header.format_version != FORMAT_VERSION || header.kind != ArtifactKind::Bm25Index {
        return Err(Error::format("index", "not a version-1 BM25 index"));
    }
    let mut lengths = None;
    let mut postings = BTreeMap::new();
    for r in records {
        let Payload::F32(v) = r.payload else {
            return Err(Error::format("index", format!("{}: expected f32", r.name)));
        };
        let ints: Vec<u32> = v.iter().map(|&x| x as u32).collect();
        if r.name == "lengths" {
            lengths = Some(ints);
        } else if let Some(term) = r.name.strip_prefix("postings.") {
            let mut chars = term.chars();
            let (Some(c), None) = (chars.next(), chars.next()) else {
                return Err(Error::format("index", format!("bad term record {:?}", r.name)));
            };
            let list = ints
                .chunks_exact(2)
                .map(|p| Posting { record: p[0], tf: p[1] })
                .collect();
            postings.insert(c, list);
        } else {
            return Err(Error::format("index", format!("unexpected record {:?}", r.name)));
        }
    }
    let lengths = lengths.ok_or_else(|| Error::format("index", "missing lengths record"))?;
    Ok(InvertedIndex::from_parts(header.entries, postings, lengths)?)
}

pub fn load_index(path: &Path) -> Result<InvertedIndex> {
    parse_index(&fs::read(path).map_err(Error::io(path))?)
}
