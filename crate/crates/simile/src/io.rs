//! Corpus and auxiliary file formats: JSON Lines records, raw documents,
//! lexicon and vocabulary JSON, whitespace embedding tables, loss curves.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use simile_core::corpus::{PatternLexicon, RawDocument};
use simile_core::locate_gen::LossRecord;
use simile_core::retrieval::{EmbeddingSource, EmbeddingTable};
use simile_core::vocab::Vocabulary;

use crate::error::{Error, Result};

/// One JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| Error::JsonLine {
            path: path.to_owned(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

pub fn write_jsonl_to<T: Serialize, W: Write>(mut w: W, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    write_jsonl_to(BufWriter::new(file), items).map_err(|e| match e {
        Error::Stream(source) => Error::Io {
            path: path.to_owned(),
            source,
        },
        other => other,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(Error::io(path))
}

/// Raw documents from a JSON Lines file of `{id, text}` or from a directory,
/// where each `.txt` file is a document named by its file stem.
pub fn read_documents(path: &Path) -> Result<Vec<RawDocument>> {
    if !path.is_dir() {
        return read_jsonl(path);
    }
    let mut docs = Vec::new();
    for entry in fs::read_dir(path).map_err(Error::io(path))? {
        let p = entry.map_err(Error::io(path))?.path();
        if p.extension().is_some_and(|e| e == "txt") {
            docs.push(RawDocument {
                id: p.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                text: fs::read_to_string(&p).map_err(Error::io(&p))?,
            });
        }
    }
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(docs)
}

pub fn read_lexicon(path: &Path) -> Result<PatternLexicon> {
    let lex: PatternLexicon = read_json(path)?;
    lex.validate()?;
    Ok(lex)
}

/// A JSON array of tokens, specials first.
pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let tokens: Vec<String> = read_json(path)?;
    Ok(Vocabulary::from_tokens(&tokens)?)
}

pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    write_json(path, &vocab.tokens())
}

/// Lines of `token v1 v2 …`. A leading `count dim` line, as written by
/// word2vec tools, is skipped.
pub fn parse_embeddings(text: &str, source: EmbeddingSource) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = None;
    for (i, line) in text.lines().enumerate() {
        let mut fields = line.split(' ').filter(|f| !f.is_empty());
        let Some(token) = fields.next() else { continue };
        let values = fields
            .map(str::parse::<f32>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format("embedding table", format!("line {}: {e}", i + 1)))?;
        if i == 0 && values.len() == 1 && token.parse::<usize>().is_ok() && values[0].fract() == 0.0 {
            continue;
        }
        if values.is_empty() {
            return Err(Error::format("embedding table", format!("line {}: no values", i + 1)));
        }
        let t = match &mut table {
            Some(t) => t,
            None => table.insert(EmbeddingTable::new(values.len(), source)?),
        };
        t.insert(token, values)?;
    }
    table.ok_or_else(|| Error::format("embedding table", "no vectors"))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    parse_embeddings(&fs::read_to_string(path).map_err(Error::io(path))?, EmbeddingSource::External)
}

pub fn write_embeddings(path: &Path, table: &EmbeddingTable) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(Error::io(path))?);
    for (token, v) in table.iter() {
        let line: Vec<String> = std::iter::once(token.to_owned())
            .chain(v.iter().map(|x| x.to_string()))
            .collect();
        writeln!(w, "{}", line.join(" ")).map_err(Error::io(path))?;
    }
    w.flush().map_err(Error::io(path))
}

/// Comma-separated loss curve with a header row.
pub fn write_loss_curve_to<W: Write>(w: W, curve: &[LossRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in curve {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_loss_curve(path: &Path, curve: &[LossRecord]) -> Result<()> {
    write_loss_curve_to(File::create(path).map_err(Error::io(path))?, curve)
}

pub fn read_loss_curve(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_text_with_and_without_count_line() {
        let a = parse_embeddings("2 3\n像 0.5 -1 2\n云 1 0 0\n", EmbeddingSource::External).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a.dim(), 3);
        assert_eq!(a.get("像").unwrap(), &[0.5, -1.0, 2.0]);
        let b = parse_embeddings("像 0.5 -1 2\n云 1 0 0", EmbeddingSource::External).unwrap();
        assert_eq!(a, b);
        assert!(parse_embeddings("a 1 2\nb 1\n", EmbeddingSource::External).is_err());
        assert!(parse_embeddings("a 1 x\n", EmbeddingSource::External).is_err());
        assert!(parse_embeddings("", EmbeddingSource::External).is_err());
    }

    #[test]
    fn loss_curve_has_header() {
        let curve = [LossRecord {
            step: 10,
            total: 1.5,
            positioning: 0.5,
            generation: 1.0,
            dev_total: 1.25,
        }];
        let mut buf = Vec::new();
        write_loss_curve_to(&mut buf, &curve).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "step,total,positioning,generation,dev_total");
        assert_eq!(text.lines().nth(1).unwrap(), "10,1.5,0.5,1.0,1.25");
    }
}
