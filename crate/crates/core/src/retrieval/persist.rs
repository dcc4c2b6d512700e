//! Single-file binary index format.
//!
//! Layout (little endian): magic `SLIMIDX1`, u32 format version, f64 k1,
//! f64 b, u32 doc count, per doc {str id, str title, str text, u32 length},
//! u32 term count, per term {str term, u32 n, n × (u32 ordinal, u32 tf)}.
//! Strings are u32 byte length followed by UTF-8 bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::index::{Bm25Params, InvertedIndex, Posting};
use super::RetrievalError;
use crate::domain::Document;

pub const MAGIC: &[u8; 8] = b"SLIMIDX1";
pub const FORMAT_VERSION: u32 = 1;

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R) -> Result<String, RetrievalError> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| RetrievalError::Corrupt(format!("invalid utf-8: {e}")))
}

impl InvertedIndex {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), RetrievalError> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_f64::<LittleEndian>(self.params.k1)?;
        w.write_f64::<LittleEndian>(self.params.b)?;
        w.write_u32::<LittleEndian>(self.docs.len() as u32)?;
        for (doc, len) in self.docs.iter().zip(&self.doc_lengths) {
            write_str(w, &doc.doc_id)?;
            write_str(w, &doc.title)?;
            write_str(w, &doc.text)?;
            w.write_u32::<LittleEndian>(*len)?;
        }
        w.write_u32::<LittleEndian>(self.postings.len() as u32)?;
        for (term, list) in &self.postings {
            write_str(w, term)?;
            w.write_u32::<LittleEndian>(list.len() as u32)?;
            for p in list {
                w.write_u32::<LittleEndian>(p.ordinal)?;
                w.write_u32::<LittleEndian>(p.tf)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, RetrievalError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(RetrievalError::Corrupt("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(RetrievalError::Corrupt(format!("unsupported format version {version}")));
        }
        let params = Bm25Params { k1: r.read_f64::<LittleEndian>()?, b: r.read_f64::<LittleEndian>()? };
        params.validate()?;

        let n = r.read_u32::<LittleEndian>()? as usize;
        if n == 0 {
            return Err(RetrievalError::Corrupt("index has no documents".into()));
        }
        let mut docs = Vec::with_capacity(n);
        let mut doc_lengths = Vec::with_capacity(n);
        for _ in 0..n {
            let doc_id = read_str(r)?;
            let title = read_str(r)?;
            let text = read_str(r)?;
            docs.push(Document { doc_id, title, text });
            doc_lengths.push(r.read_u32::<LittleEndian>()?);
        }
        let terms = r.read_u32::<LittleEndian>()? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..terms {
            let term = read_str(r)?;
            let len = r.read_u32::<LittleEndian>()? as usize;
            let mut list = Vec::with_capacity(len.min(n));
            for _ in 0..len {
                let ordinal = r.read_u32::<LittleEndian>()?;
                let tf = r.read_u32::<LittleEndian>()?;
                if ordinal as usize >= n {
                    return Err(RetrievalError::Corrupt(format!("posting ordinal {ordinal} out of range")));
                }
                if list.last().is_some_and(|p: &Posting| p.ordinal >= ordinal) {
                    return Err(RetrievalError::Corrupt(format!("postings for {term:?} not sorted")));
                }
                list.push(Posting { ordinal, tf });
            }
            postings.insert(term, list);
        }
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        if total == 0 {
            return Err(RetrievalError::Corrupt("all documents empty".into()));
        }
        let avg_doc_length = total as f64 / n as f64;
        Ok(Self { params, postings, doc_lengths, avg_doc_length, docs })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    /// Copy with different scoring parameters; postings are unaffected.
    pub fn with_params(mut self, params: Bm25Params) -> Result<Self, RetrievalError> {
        params.validate()?;
        self.params = params;
        Ok(self)
    }
}
