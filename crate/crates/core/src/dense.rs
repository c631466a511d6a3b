//! Exact inner-product search over passage embeddings.
//!
//! Vectors are stored as `f32`; dot products accumulate in `f64`, summing
//! dimensions in order so that scores are reproducible bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::provider::{EmbedRole, EmbeddingProvider};
use crate::ranking::{top_n, Provenance, ScoredPassage};
use crate::sparse::{read_str, write_str};

const VECTOR_MAGIC: &[u8; 8] = b"KGTRVEC\0";
const INDEX_MAGIC: &[u8; 8] = b"KGTRDNS\0";
pub const VECTOR_FORMAT_VERSION: u32 = 1;
pub const DENSE_FORMAT_VERSION: u32 = 1;

/// `count x dim` row-major matrix of `f32`.
///
/// On disk: 8-byte magic, `u32` version, `u64` count, `u32` dim, then
/// `count * dim` little-endian `f32` values in row order.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFile {
    dim: usize,
    data: Vec<f32>,
}

impl VectorFile {
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(VECTOR_MAGIC)?;
        w.write_u32::<LittleEndian>(VECTOR_FORMAT_VERSION)?;
        write_matrix(&mut w, self.dim, &self.data)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        check_header(&mut r, VECTOR_MAGIC, VECTOR_FORMAT_VERSION, "vector")?;
        let (dim, data) = read_matrix(&mut r)?;
        Ok(Self { dim, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn check_header<R: Read>(r: &mut R, magic: &[u8; 8], version: u32, what: &str) -> Result<()> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    if &buf != magic {
        return Err(Error::Format(format!("not a {what} file")));
    }
    let v = r.read_u32::<LittleEndian>()?;
    if v != version {
        return Err(Error::Format(format!("unsupported {what} file version {v}")));
    }
    Ok(())
}

fn write_matrix<W: Write>(w: &mut W, dim: usize, data: &[f32]) -> Result<()> {
    let dim32 = u32::try_from(dim).map_err(|_| Error::InvalidParam("dimension too large".into()))?;
    w.write_u64::<LittleEndian>((data.len() / dim) as u64)?;
    w.write_u32::<LittleEndian>(dim32)?;
    for &x in data {
        w.write_f32::<LittleEndian>(x)?;
    }
    Ok(())
}

fn read_matrix<R: Read>(r: &mut R) -> Result<(usize, Vec<f32>)> {
    let count = r.read_u64::<LittleEndian>()? as usize;
    let dim = r.read_u32::<LittleEndian>()? as usize;
    if dim == 0 {
        return Err(Error::Format("dimension 0".into()));
    }
    let len = count
        .checked_mul(dim)
        .ok_or_else(|| Error::Format("matrix size overflows".into()))?;
    let mut data = vec![0f32; len];
    r.read_f32_into::<LittleEndian>(&mut data)?;
    Ok((dim, data))
}

/// Row i holds the passage-role embedding of passage i.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    vectors: VectorFile,
    fingerprint: String,
    corpus_digest: String,
}

pub fn build_dense_index(
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
    batch_size: usize,
) -> Result<DenseIndex> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if batch_size == 0 {
        return Err(Error::InvalidParam("batch size must be >= 1".into()));
    }
    let texts: Vec<&str> = corpus.texts().collect();
    let batches = texts
        .par_chunks(batch_size)
        .map(|chunk| {
            let out = provider.embed(chunk, EmbedRole::Passage)?;
            if out.len() != chunk.len() {
                return Err(Error::LengthMismatch {
                    expected: chunk.len(),
                    got: out.len(),
                });
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let rows: Vec<Vec<f32>> = batches.into_iter().flatten().collect();
    Ok(DenseIndex {
        vectors: VectorFile::from_rows(&rows)?,
        fingerprint: provider.fingerprint(),
        corpus_digest: corpus.digest().to_owned(),
    })
}

impl DenseIndex {
    /// Wraps precomputed passage vectors (row i = passage i).
    pub fn from_vectors(corpus: &Corpus, vectors: VectorFile, fingerprint: String) -> Result<Self> {
        if vectors.count() != corpus.len() {
            return Err(Error::LengthMismatch {
                expected: corpus.len(),
                got: vectors.count(),
            });
        }
        Ok(Self {
            vectors,
            fingerprint,
            corpus_digest: corpus.digest().to_owned(),
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors.dim()
    }

    pub fn len(&self) -> usize {
        self.vectors.count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, id: usize) -> &[f32] {
        self.vectors.row(id)
    }

    pub fn vectors(&self) -> &VectorFile {
        &self.vectors
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn corpus_digest(&self) -> &str {
        &self.corpus_digest
    }

    pub fn score_all(&self, query: &[f32]) -> Result<Vec<f64>> {
        if query.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: query.len(),
            });
        }
        Ok(self
            .vectors
            .data
            .par_chunks(self.dim())
            .map(|row| dot(row, query))
            .collect())
    }

    pub fn search(&self, query: &[f32], n: usize) -> Result<Vec<ScoredPassage>> {
        Ok(top_n(&self.score_all(query)?, n, Provenance::Dense))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(INDEX_MAGIC)?;
        w.write_u32::<LittleEndian>(DENSE_FORMAT_VERSION)?;
        write_str(&mut w, &self.fingerprint)?;
        write_str(&mut w, &self.corpus_digest)?;
        write_matrix(&mut w, self.vectors.dim, &self.vectors.data)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        check_header(&mut r, INDEX_MAGIC, DENSE_FORMAT_VERSION, "dense index")?;
        let fingerprint = read_str(&mut r)?;
        let corpus_digest = read_str(&mut r)?;
        let (dim, data) = read_matrix(&mut r)?;
        Ok(Self {
            vectors: VectorFile { dim, data },
            fingerprint,
            corpus_digest,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Sequential f64 dot product.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |acc, (x, y)| acc + f64::from(*x) * f64::from(*y))
}
