//! Per-template input vectors and the special-token vectors.
//!
//! Providers:
//! * `random`: a seeded standard-normal vector per template id.
//! * `hashed`: signed feature hashing of the template's token multiset,
//!   L2-normalised.
//! * `file`: rows of an `embeddings.jsonl` file
//!   (`{"template_id": int, "vector": [float, …]}` per line).
//! * `zero`: one shared all-zero vector, leaving only the encodings to
//!   distinguish tokens.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::parser::Template;

pub const MIN_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    #[default]
    Random,
    Hashed,
    File,
    Zero,
}

impl EmbeddingMode {
    pub fn name(self) -> &'static str {
        match self {
            EmbeddingMode::Random => "random",
            EmbeddingMode::Hashed => "hashed",
            EmbeddingMode::File => "file",
            EmbeddingMode::Zero => "zero",
        }
    }
}

impl std::str::FromStr for EmbeddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(EmbeddingMode::Random),
            "hashed" => Ok(EmbeddingMode::Hashed),
            "file" => Ok(EmbeddingMode::File),
            "zero" => Ok(EmbeddingMode::Zero),
            other => Err(Error::config(format!(
                "unknown embedding mode `{other}` (expected random|hashed|file|zero)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingProviderConfig {
    pub mode: EmbeddingMode,
    pub dim: usize,
    pub seed: u64,
    pub path: Option<PathBuf>,
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        EmbeddingProviderConfig {
            mode: EmbeddingMode::Random,
            dim: 64,
            seed: 0,
            path: None,
        }
    }
}

impl EmbeddingProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < MIN_DIM {
            return Err(Error::config(format!(
                "embedding dimension must be ≥ {MIN_DIM}, got {}",
                self.dim
            )));
        }
        if self.mode == EmbeddingMode::File && self.path.is_none() {
            return Err(Error::config("file embeddings need a `path`"));
        }
        Ok(())
    }
}

/// One row of the embedding-file contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub template_id: usize,
    pub vector: Vec<f64>,
}

/// Rows loaded from an embedding file. `dim` is `None` for an empty file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    pub dim: Option<usize>,
    pub rows: BTreeMap<usize, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn load_embedding_file(path: &Path) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = EmbeddingTable::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: EmbeddingRow =
            serde_json::from_str(&line).map_err(|e| Error::parse_at(line_no, e.to_string()))?;
        if row.vector.is_empty() {
            return Err(Error::parse_at(line_no, "empty vector"));
        }
        if let Some(j) = row.vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::parse_at(line_no, format!("non-finite value at index {j}")));
        }
        match table.dim {
            None => table.dim = Some(row.vector.len()),
            Some(d) if d != row.vector.len() => {
                return Err(Error::parse_at(
                    line_no,
                    format!("vector has {} values, earlier rows have {d}", row.vector.len()),
                ))
            }
            Some(_) => {}
        }
        if table.rows.insert(row.template_id, row.vector).is_some() {
            return Err(Error::parse_at(
                line_no,
                format!("duplicate template_id {}", row.template_id),
            ));
        }
    }
    Ok(table)
}

/// Writes rows in the given order, one JSON object per line.
pub fn write_embedding_file(path: &Path, rows: &[EmbeddingRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn normal_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// The seeded standard-normal vector of one template id. Each id uses its
/// own generator stream, so the value does not depend on query order.
pub fn random_vector(seed: u64, template_id: usize, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(template_id as u64);
    normal_vector(&mut rng, dim)
}

fn token_hash(token: &str, salt: &[u8]) -> u64 {
    let digest = Sha256::new().chain_update(salt).chain_update(token.as_bytes()).finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn signed_hash_into(tokens: &[String], salt: &[u8], out: &mut [f64]) {
    let dim = out.len() as u64;
    for token in tokens {
        let h = token_hash(token, salt);
        let bucket = ((h >> 1) % dim) as usize;
        out[bucket] += if h & 1 == 0 { 1.0 } else { -1.0 };
    }
}

/// Signed feature hashing of a token multiset, L2-normalised.
pub fn hashed_vector(tokens: &[String], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    signed_hash_into(tokens, b"", &mut out);
    let mut norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        // every bucket cancelled; rehash with a salt so the vector stays usable
        signed_hash_into(tokens, b"fallback", &mut out);
        norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            out[0] = 1.0;
            norm = 1.0;
        }
    }
    out.iter_mut().for_each(|v| *v /= norm);
    out
}

/// Materialised template vectors for one run.
#[derive(Debug, Clone)]
pub struct EmbeddingProvider {
    mode: EmbeddingMode,
    dim: usize,
    seed: u64,
    rows: BTreeMap<usize, Vec<f64>>,
}

impl EmbeddingProvider {
    /// Builds the provider for the given templates. File mode ignores
    /// `templates` beyond checking that each one has a row.
    pub fn build(config: &EmbeddingProviderConfig, templates: &[Template]) -> Result<Self> {
        config.validate()?;
        let dim = config.dim;
        let rows = match config.mode {
            EmbeddingMode::Random => templates
                .iter()
                .map(|t| (t.template_id, random_vector(config.seed, t.template_id, dim)))
                .collect(),
            EmbeddingMode::Hashed => templates
                .iter()
                .map(|t| (t.template_id, hashed_vector(&t.tokens, dim)))
                .collect(),
            EmbeddingMode::Zero => BTreeMap::new(),
            EmbeddingMode::File => {
                let path = config.path.as_ref().expect("validated");
                let table = load_embedding_file(path)?;
                let file_dim = table.dim.ok_or_else(|| {
                    Error::data(format!("embedding file {} is empty", path.display()))
                })?;
                if file_dim != dim {
                    return Err(Error::config(format!(
                        "embedding file {} has dimension {file_dim}, config says {dim}",
                        path.display()
                    )));
                }
                let missing: Vec<usize> = templates
                    .iter()
                    .map(|t| t.template_id)
                    .filter(|id| !table.rows.contains_key(id))
                    .collect();
                if !missing.is_empty() {
                    return Err(Error::data(format!(
                        "embedding file {} has no rows for template ids {missing:?}",
                        path.display()
                    )));
                }
                table.rows
            }
        };
        Ok(EmbeddingProvider {
            mode: config.mode,
            dim,
            seed: config.seed,
            rows,
        })
    }

    /// Rebuilds a provider from previously materialised rows (e.g. from a
    /// checkpoint). Every row must have the configured dimension.
    pub fn from_rows(config: &EmbeddingProviderConfig, rows: BTreeMap<usize, Vec<f64>>) -> Result<Self> {
        if config.dim < MIN_DIM {
            return Err(Error::config(format!(
                "embedding dimension must be ≥ {MIN_DIM}, got {}",
                config.dim
            )));
        }
        if let Some((id, v)) = rows.iter().find(|(_, v)| v.len() != config.dim) {
            return Err(Error::data(format!(
                "embedding row {id} has {} values, expected {}",
                v.len(),
                config.dim
            )));
        }
        Ok(EmbeddingProvider {
            mode: config.mode,
            dim: config.dim,
            seed: config.seed,
            rows,
        })
    }

    /// The materialised rows in id order.
    pub fn rows(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows.iter().map(|(id, v)| (*id, v.as_slice()))
    }

    pub fn mode(&self) -> EmbeddingMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, template_id: usize) -> Result<Cow<'_, [f64]>> {
        if let Some(row) = self.rows.get(&template_id) {
            return Ok(Cow::Borrowed(row));
        }
        match self.mode {
            EmbeddingMode::Random => Ok(Cow::Owned(random_vector(self.seed, template_id, self.dim))),
            EmbeddingMode::Zero => Ok(Cow::Owned(vec![0.0; self.dim])),
            EmbeddingMode::Hashed | EmbeddingMode::File => Err(Error::data(format!(
                "no {} embedding for template id {template_id}",
                self.mode.name()
            ))),
        }
    }
}

pub fn get_embedding(provider: &EmbeddingProvider, template_id: usize) -> Result<Vec<f64>> {
    provider.get(template_id).map(Cow::into_owned)
}

/// `<AGG>`, `<EOS>` and `<PAD>` vectors. Their ids are negative so they can
/// never collide with template ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialTokenSet {
    pub agg_vec: Vec<f64>,
    pub eos_vec: Vec<f64>,
    pub pad_vec: Vec<f64>,
    pub agg_id: i64,
    pub eos_id: i64,
    pub pad_id: i64,
}

pub fn make_special_tokens(seed: u64, dim: usize) -> Result<SpecialTokenSet> {
    if dim < MIN_DIM {
        return Err(Error::config(format!(
            "embedding dimension must be ≥ {MIN_DIM}, got {dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // a stream no template id uses
    rng.set_stream(u64::MAX);
    Ok(SpecialTokenSet {
        agg_vec: normal_vector(&mut rng, dim),
        eos_vec: normal_vector(&mut rng, dim),
        pad_vec: normal_vector(&mut rng, dim),
        agg_id: -1,
        eos_id: -2,
        pad_id: -3,
    })
}
