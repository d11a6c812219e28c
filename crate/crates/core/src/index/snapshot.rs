//! On-disk snapshot of an [`IndexSet`].
//!
//! Layout: `manifest.json`, `dense.f32` (row-major little-endian f32, N x 768),
//! `ids.txt` (one id per line, row order), `postings.jsonl` (one term per
//! line) and `units.jsonl` (passage records with keyword lengths). The
//! manifest carries a SHA-256 per file; loading refuses any mismatch.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Bm25Params, DenseIndex, IndexError, IndexSet, Posting, SparseIndex, UnitRecord, EMBEDDING_DIM};
use crate::ids::UnitId;

pub const SNAPSHOT_VERSION: u32 = 1;

const DENSE_FILE: &str = "dense.f32";
const IDS_FILE: &str = "ids.txt";
const POSTINGS_FILE: &str = "postings.jsonl";
const UNITS_FILE: &str = "units.jsonl";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub embedder: String,
    pub dim: usize,
    pub units: usize,
    pub terms: usize,
    pub bm25: Bm25Params,
    /// File name to lowercase hex SHA-256.
    pub checksums: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct PostingLine {
    term: String,
    /// `(row, tf)` pairs in row order.
    postings: Vec<(u32, u32)>,
}

#[derive(Serialize, Deserialize)]
struct UnitLine {
    #[serde(flatten)]
    unit: UnitRecord,
    keyword_len: u32,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn corrupt(msg: impl Into<String>) -> IndexError {
    IndexError::Corrupt(msg.into())
}

fn json_line<T: Serialize>(out: &mut Vec<u8>, value: &T) {
    serde_json::to_writer(&mut *out, value).expect("in-memory serialization");
    out.push(b'\n');
}

impl IndexSet {
    /// Writes the snapshot into `dir`, creating it if needed.
    pub fn save_snapshot(&self, dir: &Path) -> Result<Manifest, IndexError> {
        fs::create_dir_all(dir)?;

        let mut dense = Vec::with_capacity(self.dense().matrix().len() * 4);
        for v in self.dense().matrix() {
            dense.extend_from_slice(&v.to_le_bytes());
        }

        let mut ids = String::with_capacity(self.len() * 9);
        for u in self.units() {
            ids.push_str(&u.id.to_string());
            ids.push('\n');
        }

        let mut terms: Vec<(&String, &Vec<Posting>)> = self.sparse().postings().iter().collect();
        terms.sort_unstable_by(|a, b| a.0.cmp(b.0));
        let mut postings = Vec::new();
        for (term, list) in &terms {
            let line = PostingLine { term: (*term).clone(), postings: list.iter().map(|p| (p.row, p.tf)).collect() };
            json_line(&mut postings, &line);
        }

        let mut units = Vec::new();
        for (unit, &keyword_len) in self.units().iter().zip(self.sparse().doc_lens()) {
            json_line(&mut units, &UnitLine { unit: unit.clone(), keyword_len });
        }

        let files: [(&str, &[u8]); 4] = [
            (DENSE_FILE, &dense),
            (IDS_FILE, ids.as_bytes()),
            (POSTINGS_FILE, &postings),
            (UNITS_FILE, &units),
        ];
        let mut checksums = BTreeMap::new();
        for (name, bytes) in files {
            let mut w = BufWriter::new(fs::File::create(dir.join(name))?);
            w.write_all(bytes)?;
            w.flush()?;
            checksums.insert(name.to_string(), sha256_hex(bytes));
        }

        let manifest = Manifest {
            format_version: SNAPSHOT_VERSION,
            embedder: self.embedder_name().to_string(),
            dim: EMBEDDING_DIM,
            units: self.len(),
            terms: terms.len(),
            bm25: self.sparse().params(),
            checksums,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }

    /// Reads and verifies a snapshot written by [`save_snapshot`](Self::save_snapshot).
    pub fn load_snapshot(dir: &Path) -> Result<Self, IndexError> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)
            .map_err(|e| corrupt(format!("manifest: {e}")))?;
        if manifest.format_version != SNAPSHOT_VERSION {
            return Err(IndexError::Version { found: manifest.format_version, expected: SNAPSHOT_VERSION });
        }
        if manifest.dim != EMBEDDING_DIM {
            return Err(corrupt(format!("dimension {}", manifest.dim)));
        }

        let read = |name: &str| -> Result<Vec<u8>, IndexError> {
            let bytes = fs::read(dir.join(name))?;
            let want = manifest.checksums.get(name).ok_or_else(|| corrupt(format!("no checksum for {name}")))?;
            if &sha256_hex(&bytes) != want {
                return Err(IndexError::Checksum(name.to_string()));
            }
            Ok(bytes)
        };
        let dense_bytes = read(DENSE_FILE)?;
        let ids_bytes = read(IDS_FILE)?;
        let postings_bytes = read(POSTINGS_FILE)?;
        let units_bytes = read(UNITS_FILE)?;

        let ids_text = std::str::from_utf8(&ids_bytes).map_err(|_| corrupt("ids.txt is not UTF-8"))?;
        let ids: Vec<UnitId> = ids_text
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| l.parse().map_err(|e: crate::ids::InvalidUnitId| corrupt(e.to_string())))
            .collect::<Result<_, _>>()?;
        if ids.len() != manifest.units {
            return Err(corrupt(format!("{} ids, manifest says {}", ids.len(), manifest.units)));
        }

        if dense_bytes.len() % 4 != 0 {
            return Err(corrupt("dense.f32 length is not a multiple of 4"));
        }
        let matrix: Vec<f32> = dense_bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let dense = DenseIndex::from_raw(ids.clone(), matrix)?;

        let mut units = Vec::with_capacity(ids.len());
        let mut doc_len = Vec::with_capacity(ids.len());
        for (i, line) in units_bytes.split(|b| *b == b'\n').filter(|l| !l.is_empty()).enumerate() {
            let rec: UnitLine = serde_json::from_slice(line).map_err(|e| corrupt(format!("units.jsonl:{}: {e}", i + 1)))?;
            if ids.get(i) != Some(&rec.unit.id) {
                return Err(corrupt(format!("units.jsonl:{} out of order", i + 1)));
            }
            doc_len.push(rec.keyword_len);
            units.push(rec.unit);
        }

        let mut postings = HashMap::with_capacity(manifest.terms);
        for (i, line) in postings_bytes.split(|b| *b == b'\n').filter(|l| !l.is_empty()).enumerate() {
            let rec: PostingLine =
                serde_json::from_slice(line).map_err(|e| corrupt(format!("postings.jsonl:{}: {e}", i + 1)))?;
            let list = rec.postings.into_iter().map(|(row, tf)| Posting { row, tf }).collect();
            if postings.insert(rec.term, list).is_some() {
                return Err(corrupt(format!("postings.jsonl:{} repeats a term", i + 1)));
            }
        }
        if postings.len() != manifest.terms {
            return Err(corrupt(format!("{} terms, manifest says {}", postings.len(), manifest.terms)));
        }
        let sparse = SparseIndex::assemble(manifest.bm25, ids, doc_len, postings)?;

        IndexSet::assemble(units, dense, sparse, manifest.embedder)
    }
}
