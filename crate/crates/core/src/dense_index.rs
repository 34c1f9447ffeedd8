//! Exact maximum-inner-product search over passage embeddings.
//!
//! Vectors live in one contiguous row-major `f32` buffer. A query is scored
//! against every row (64-bit accumulation, see [`crate::encoder::dot`]);
//! large indices are scanned in blocks on the rayon pool, each block keeps
//! its own top-k and the partial results are merged. Ranking is by score
//! descending, then passage id ascending, so results are fully
//! deterministic.
//!
//! On-disk layout (all integers little-endian):
//!
//! ```text
//! "XLIDX001" | dim: u32 | count: u64 | count*dim f32 | count * (len: u16, utf-8 id) | crc32: u32
//! ```
//!
//! The CRC covers every byte before it.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{dot, EmbeddingVector};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"XLIDX001";
/// Rows per parallel work unit.
const BLOCK_ROWS: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub passage_id: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    dim: usize,
    data: Vec<f32>,
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
}

/// A scored row. Orders best-first: higher score, then smaller id.
#[derive(Debug, Clone, Copy)]
struct Hit<'a> {
    score: f64,
    id: &'a str,
}

impl PartialEq for Hit<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Hit<'_> {}

impl PartialOrd for Hit<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Hit<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.id.cmp(other.id))
    }
}

/// Bounded max-heap whose top is the worst retained hit.
struct TopK<'a> {
    k: usize,
    heap: BinaryHeap<Hit<'a>>,
}

impl<'a> TopK<'a> {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn push(&mut self, hit: Hit<'a>) {
        if self.heap.len() < self.k {
            self.heap.push(hit);
        } else if let Some(worst) = self.heap.peek() {
            if hit < *worst {
                self.heap.pop();
                self.heap.push(hit);
            }
        }
    }

    fn merge(mut self, other: TopK<'a>) -> Self {
        for h in other.heap {
            self.push(h);
        }
        self
    }

    fn into_sorted(self) -> Vec<Hit<'a>> {
        self.heap.into_sorted_vec()
    }
}

impl DenseIndex {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
            ids: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    pub fn build<I, S>(pairs: I, dim: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (S, EmbeddingVector)>,
        S: Into<String>,
    {
        if dim == 0 {
            return Err(Error::invalid("index dim must be positive"));
        }
        let mut index = Self::empty(dim);
        for (id, v) in pairs {
            index.push(id.into(), v.as_slice())?;
        }
        Ok(index)
    }

    fn push(&mut self, id: String, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        if id.len() > u16::MAX as usize {
            return Err(Error::invalid(format!("passage id longer than {} bytes", u16::MAX)));
        }
        if self.lookup.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.lookup.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, passage_id: &str) -> Option<usize> {
        self.lookup.get(passage_id).copied()
    }

    pub fn vector(&self, passage_id: &str) -> Option<&[f32]> {
        self.position(passage_id).map(|i| self.row(i))
    }

    #[inline]
    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn scan_block(&self, query: &[f32], first_row: usize, block: &[f32], k: usize) -> TopK<'_> {
        let mut top = TopK::new(k);
        for (offset, row) in block.chunks_exact(self.dim).enumerate() {
            top.push(Hit {
                score: dot(query, row),
                id: &self.ids[first_row + offset],
            });
        }
        top
    }

    fn check_query(&self, query: &EmbeddingVector) -> Result<()> {
        if query.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        Ok(())
    }

    fn top_k(&self, query: &[f32], k: usize, parallel: bool) -> Vec<RetrievalResult> {
        let k = k.min(self.len());
        if k == 0 {
            return Vec::new();
        }
        let block_len = BLOCK_ROWS * self.dim;
        let top = if parallel && self.len() > BLOCK_ROWS {
            self.data
                .par_chunks(block_len)
                .enumerate()
                .map(|(b, block)| self.scan_block(query, b * BLOCK_ROWS, block, k))
                .reduce(|| TopK::new(k), TopK::merge)
        } else {
            self.data
                .chunks(block_len)
                .enumerate()
                .map(|(b, block)| self.scan_block(query, b * BLOCK_ROWS, block, k))
                .fold(TopK::new(k), TopK::merge)
        };
        top.into_sorted()
            .into_iter()
            .enumerate()
            .map(|(rank, h)| RetrievalResult {
                passage_id: h.id.to_string(),
                score: h.score,
                rank,
            })
            .collect()
    }

    /// The `min(k, len)` highest-scoring passages.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<RetrievalResult>> {
        self.check_query(query)?;
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        Ok(self.top_k(query.as_slice(), k, true))
    }

    /// [`search`](Self::search) for many queries; parallel across queries.
    pub fn search_batch(
        &self,
        queries: &[EmbeddingVector],
        k: usize,
    ) -> Result<Vec<Vec<RetrievalResult>>> {
        for q in queries {
            self.check_query(q)?;
        }
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        Ok(queries
            .par_iter()
            .map(|q| self.top_k(q.as_slice(), k, false))
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(8 + 4 + 8 + 4 * self.data.len() + 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for id in &self.ids {
            buf.extend_from_slice(&(id.len() as u16).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::BadMagic);
        }
        let mut cur = Cursor { bytes, pos: 8 };
        let dim = u32::from_le_bytes(cur.take::<4>("header")?) as usize;
        let count = u64::from_le_bytes(cur.take::<8>("header")?);
        if dim == 0 {
            return Err(Error::Corrupt("zero dimension".into()));
        }
        let count = usize::try_from(count).map_err(|_| Error::Corrupt("count overflow".into()))?;
        let n_floats = count
            .checked_mul(dim)
            .ok_or_else(|| Error::Corrupt("count overflow".into()))?;
        let float_bytes = cur.slice(
            n_floats
                .checked_mul(4)
                .ok_or_else(|| Error::Corrupt("count overflow".into()))?,
            "vectors",
        )?;
        let data: Vec<f32> = float_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let len = u16::from_le_bytes(cur.take::<2>("id table")?) as usize;
            let raw = cur.slice(len, "id table")?;
            let id = std::str::from_utf8(raw)
                .map_err(|_| Error::Corrupt("passage id is not UTF-8".into()))?;
            ids.push(id.to_string());
        }
        let body_end = cur.pos;
        let stored = u32::from_le_bytes(cur.take::<4>("checksum")?);
        if cur.pos != bytes.len() {
            return Err(Error::Corrupt("trailing bytes after checksum".into()));
        }
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i % dim));
        }

        let mut lookup = HashMap::with_capacity(count);
        for (i, id) in ids.iter().enumerate() {
            if lookup.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            dim,
            data,
            ids,
            lookup,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn slice(&mut self, len: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Truncated(what))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn take<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        Ok(self.slice(N, what)?.try_into().unwrap())
    }
}
