//! Exponential-mechanism token substitution.
//!
//! A SanText row for input `x` is the softmax of `-epsilon/2 * d(x, y)` over
//! its targets. SanText+ restricts targets to the protected set `V_P` and
//! gives every non-sensitive input a fixed self-substitution mass `1 - p`,
//! scaling the softmax over `V_P` by `p`.

use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alias::AliasTable;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::par;
use crate::vocab::{Document, SensitivityPartition, TokenId, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    #[serde(rename = "santext")]
    SanText,
    #[serde(rename = "santext_plus")]
    SanTextPlus,
    UniformRandom,
}

impl MechanismKind {
    fn code(self) -> u8 {
        match self {
            MechanismKind::SanText => 0,
            MechanismKind::SanTextPlus => 1,
            MechanismKind::UniformRandom => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MechanismKind::SanText => "santext",
            MechanismKind::SanTextPlus => "santext_plus",
            MechanismKind::UniformRandom => "uniform_random",
        }
    }
}

impl std::str::FromStr for MechanismKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "santext" => Ok(MechanismKind::SanText),
            "santext_plus" | "santext+" => Ok(MechanismKind::SanTextPlus),
            "uniform_random" | "random" => Ok(MechanismKind::UniformRandom),
            other => Err(Error::config(format!("unknown mechanism `{other}`"))),
        }
    }
}

/// Mechanism parameters. `epsilon` is the privacy parameter of the metric
/// guarantee; the exponent coefficient is `epsilon / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    pub kind: MechanismKind,
    pub epsilon: f64,
    /// Probability that a non-sensitive token is replaced (SanText+ only).
    pub p: f64,
    pub seed: u64,
}

impl MechanismConfig {
    pub fn new(kind: MechanismKind, epsilon: f64, p: f64, seed: u64) -> Result<Self> {
        let config = MechanismConfig {
            kind,
            epsilon,
            p,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn santext(epsilon: f64, seed: u64) -> Result<Self> {
        Self::new(MechanismKind::SanText, epsilon, 1.0, seed)
    }

    pub fn santext_plus(epsilon: f64, p: f64, seed: u64) -> Result<Self> {
        Self::new(MechanismKind::SanTextPlus, epsilon, p, seed)
    }

    pub fn uniform(seed: u64) -> Self {
        MechanismConfig {
            kind: MechanismKind::UniformRandom,
            epsilon: 0.0,
            p: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(format!(
                "epsilon must be finite and non-negative, got {}",
                self.epsilon
            )));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::config(format!(
                "p must lie in [0, 1], got {}",
                self.p
            )));
        }
        Ok(())
    }

    /// `ln(1/p)`, the additive bound for cross-partition input pairs.
    /// `None` when `p == 0`, where no finite bound exists.
    pub fn epsilon0(&self) -> Option<f64> {
        (self.p > 0.0).then(|| -self.p.ln())
    }
}

/// Substitution probabilities of `x` over `targets`, proportional to
/// `exp(-epsilon/2 * d(x, y))`, computed in log space with max subtraction.
pub fn compute_row(
    x: TokenId,
    targets: &[TokenId],
    epsilon: f64,
    embeddings: &EmbeddingMatrix,
) -> Vec<f64> {
    assert!(!targets.is_empty(), "a row needs at least one target");
    let half = 0.5 * epsilon;
    let mut row: Vec<f64> = targets
        .iter()
        .map(|&y| -half * embeddings.distance(x, y))
        .collect();
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    row
}

/// Natural-log probabilities of [`compute_row`], without exponentiating
/// the individual entries.
pub fn compute_log_row(
    x: TokenId,
    targets: &[TokenId],
    epsilon: f64,
    embeddings: &EmbeddingMatrix,
) -> Vec<f64> {
    let half = 0.5 * epsilon;
    let mut row: Vec<f64> = targets
        .iter()
        .map(|&y| -half * embeddings.distance(x, y))
        .collect();
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
    row
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Every row materialized up front with an alias table.
    FullMatrix,
    /// Rows computed on first use and kept in an LRU cache.
    LazyRow,
}

pub const DEFAULT_MEMORY_BUDGET: u64 = 4 << 30;

#[derive(Clone, Copy, Debug)]
pub struct BuildOptions {
    /// Bytes allowed for the materialized probability matrix.
    pub memory_budget: u64,
    /// Forces a layout instead of choosing by budget.
    pub layout: Option<Layout>,
    /// Lazy-row cache capacity in rows; derived from the budget when `None`.
    pub cache_rows: Option<usize>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            memory_budget: DEFAULT_MEMORY_BUDGET,
            layout: None,
            cache_rows: None,
        }
    }
}

/// One input's distribution: `probs` over the shared target list plus
/// `self_mass` on the input itself (non-zero only for SanText+ non-sensitive
/// inputs, which are never among the targets).
#[derive(Clone, Copy, Debug)]
pub struct RowRef<'a> {
    pub input: TokenId,
    pub targets: &'a [TokenId],
    pub probs: &'a [f64],
    pub self_mass: f64,
}

impl RowRef<'_> {
    pub fn sum(&self) -> f64 {
        self.probs.iter().sum::<f64>() + self.self_mass
    }

    /// Scatters the row into a vector indexed by vocabulary id.
    pub fn to_dense(&self, vocab_len: usize) -> Vec<f64> {
        let mut dense = vec![0.0; vocab_len];
        for (&y, &p) in self.targets.iter().zip(self.probs) {
            dense[y as usize] += p;
        }
        dense[self.input as usize] += self.self_mass;
        dense
    }
}

#[derive(Debug)]
struct MaterializedRow {
    probs: Box<[f64]>,
    self_mass: f64,
    /// Over `probs` followed by `self_mass`.
    table: AliasTable,
}

#[derive(Debug)]
struct LazyRow {
    probs: Box<[f64]>,
    self_mass: f64,
    /// Cumulative sums over `probs` followed by `self_mass`.
    cumulative: Box<[f64]>,
}

#[derive(Debug)]
enum Storage {
    Full(Vec<MaterializedRow>),
    Lazy(Mutex<lru::LruCache<TokenId, Arc<LazyRow>>>),
}

/// Per-token substitution distributions for one mechanism configuration.
#[derive(Debug)]
pub struct ProbabilityModel {
    config: MechanismConfig,
    vocab_len: usize,
    /// Output set shared by every row: all of V, or V_P for SanText+.
    targets: Arc<[TokenId]>,
    /// Marks non-sensitive inputs for SanText+; empty otherwise.
    nonsensitive: Vec<bool>,
    embeddings: Arc<EmbeddingMatrix>,
    storage: Storage,
    hashes: ModelHashes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ModelHashes {
    vocab: [u8; 32],
    partition: [u8; 32],
    embedding: [u8; 32],
}

impl ProbabilityModel {
    /// Builds the model. SanText+ requires a partition with at least one
    /// sensitive token; the partition is ignored for the other kinds.
    pub fn build(
        vocab: &Vocabulary,
        embeddings: Arc<EmbeddingMatrix>,
        partition: Option<&SensitivityPartition>,
        config: &MechanismConfig,
        options: BuildOptions,
    ) -> Result<Self> {
        config.validate()?;
        let n = vocab.len();
        if n == 0 {
            return Err(Error::config(
                "cannot build a model over an empty vocabulary",
            ));
        }
        if embeddings.len() != n {
            return Err(Error::config(format!(
                "embedding matrix has {} rows but vocabulary has {n} tokens",
                embeddings.len()
            )));
        }

        let (targets, nonsensitive, partition_hash): (Arc<[TokenId]>, Vec<bool>, [u8; 32]) =
            match config.kind {
                MechanismKind::SanTextPlus => {
                    let partition = partition.ok_or_else(|| {
                        Error::config("santext_plus requires a sensitivity partition")
                    })?;
                    if partition.vocab_len() != n {
                        return Err(Error::config(format!(
                            "partition covers {} tokens but vocabulary has {n}",
                            partition.vocab_len()
                        )));
                    }
                    if partition.sensitive_ids().is_empty() {
                        return Err(Error::config(
                            "santext_plus requires a non-empty sensitive vocabulary",
                        ));
                    }
                    let mask = (0..n as TokenId)
                        .map(|id| !partition.is_sensitive(id))
                        .collect();
                    (
                        partition.sensitive_ids().into(),
                        mask,
                        partition.content_hash(),
                    )
                }
                _ => (
                    (0..n as TokenId).collect(),
                    Vec::new(),
                    SensitivityPartition::all_sensitive(n).content_hash(),
                ),
            };

        let row_bytes = targets.len() as u64 * 8;
        let layout = options.layout.unwrap_or({
            if (n as u64).saturating_mul(row_bytes) <= options.memory_budget {
                Layout::FullMatrix
            } else {
                Layout::LazyRow
            }
        });

        let hashes = ModelHashes {
            vocab: vocab.content_hash(),
            partition: partition_hash,
            embedding: embeddings.content_hash(),
        };
        let mut model = ProbabilityModel {
            config: *config,
            vocab_len: n,
            targets,
            nonsensitive,
            embeddings,
            storage: Storage::Full(Vec::new()),
            hashes,
        };
        model.storage = match layout {
            Layout::FullMatrix => {
                let rows = par::map_range(n, |x| {
                    let (probs, self_mass) = model.compute_input_row(x as TokenId);
                    materialize(probs, self_mass)
                });
                Storage::Full(rows)
            }
            Layout::LazyRow => {
                let capacity = options.cache_rows.unwrap_or_else(|| {
                    // cumulative array doubles the per-row footprint
                    ((options.memory_budget / (2 * row_bytes.max(8))) as usize).clamp(1, n)
                });
                Storage::Lazy(Mutex::new(lru::LruCache::new(
                    NonZeroUsize::new(capacity.max(1)).unwrap(),
                )))
            }
        };
        Ok(model)
    }

    /// Exact probabilities for input `x` over the shared targets, plus the
    /// self-substitution mass.
    fn compute_input_row(&self, x: TokenId) -> (Vec<f64>, f64) {
        match self.config.kind {
            MechanismKind::UniformRandom => {
                let n = self.targets.len();
                (vec![1.0 / n as f64; n], 0.0)
            }
            MechanismKind::SanText => (
                compute_row(x, &self.targets, self.config.epsilon, &self.embeddings),
                0.0,
            ),
            MechanismKind::SanTextPlus => {
                let row = compute_row(x, &self.targets, self.config.epsilon, &self.embeddings);
                if self.nonsensitive[x as usize] {
                    let p = self.config.p;
                    (row.into_iter().map(|v| p * v).collect(), 1.0 - p)
                } else {
                    (row, 0.0)
                }
            }
        }
    }

    pub fn config(&self) -> &MechanismConfig {
        &self.config
    }

    pub fn kind(&self) -> MechanismKind {
        self.config.kind
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab_len
    }

    pub fn layout(&self) -> Layout {
        match self.storage {
            Storage::Full(_) => Layout::FullMatrix,
            Storage::Lazy(_) => Layout::LazyRow,
        }
    }

    /// Output ids every row draws from (besides a possible self-substitution).
    pub fn targets(&self) -> &[TokenId] {
        &self.targets
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    /// Whether `x` gets the fixed self-substitution mass (SanText+ `V_N`).
    pub fn is_nonsensitive(&self, x: TokenId) -> bool {
        self.nonsensitive.get(x as usize).copied().unwrap_or(false)
    }

    fn lazy_row(
        &self,
        cache: &Mutex<lru::LruCache<TokenId, Arc<LazyRow>>>,
        x: TokenId,
    ) -> Arc<LazyRow> {
        if let Some(row) = cache.lock().unwrap().get(&x) {
            return Arc::clone(row);
        }
        let (probs, self_mass) = self.compute_input_row(x);
        let mut cumulative = Vec::with_capacity(probs.len() + 1);
        let mut acc = 0.0;
        for &p in probs.iter().chain(std::iter::once(&self_mass)) {
            acc += p;
            cumulative.push(acc);
        }
        let row = Arc::new(LazyRow {
            probs: probs.into_boxed_slice(),
            self_mass,
            cumulative: cumulative.into_boxed_slice(),
        });
        cache.lock().unwrap().put(x, Arc::clone(&row));
        row
    }

    /// Runs `f` on the distribution of input `x`.
    pub fn with_row<R>(&self, x: TokenId, f: impl FnOnce(RowRef<'_>) -> R) -> R {
        match &self.storage {
            Storage::Full(rows) => {
                let row = &rows[x as usize];
                f(RowRef {
                    input: x,
                    targets: &self.targets,
                    probs: &row.probs,
                    self_mass: row.self_mass,
                })
            }
            Storage::Lazy(cache) => {
                let row = self.lazy_row(cache, x);
                f(RowRef {
                    input: x,
                    targets: &self.targets,
                    probs: &row.probs,
                    self_mass: row.self_mass,
                })
            }
        }
    }

    /// Row `x` as a vector indexed by vocabulary id.
    pub fn dense_row(&self, x: TokenId) -> Vec<f64> {
        self.with_row(x, |row| row.to_dense(self.vocab_len))
    }

    /// Draws one substitution for `x`.
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, x: TokenId, rng: &mut R) -> TokenId {
        let n_targets = self.targets.len();
        let index = match &self.storage {
            Storage::Full(rows) => rows[x as usize].table.sample(rng),
            Storage::Lazy(cache) => {
                let row = self.lazy_row(cache, x);
                let total = *row.cumulative.last().unwrap();
                let u: f64 = rng.gen::<f64>() * total;
                let i = row.cumulative.partition_point(|&c| c <= u);
                // skip zero-mass entries that rounding could land on
                let mut i = i.min(row.cumulative.len() - 1);
                while i < n_targets && row.probs[i] == 0.0 {
                    i += 1;
                }
                if i == n_targets && row.self_mass == 0.0 {
                    i = row.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
                }
                i
            }
        };
        if index < n_targets {
            self.targets[index]
        } else {
            x
        }
    }

    /// Sanitizes one document with its own random stream, derived from
    /// `(master_seed, provenance)`.
    pub fn sanitize_document(&self, doc: &Document, master_seed: u64) -> SanitizedDocument {
        let mut rng = document_rng(master_seed, doc.provenance);
        let tokens = doc
            .tokens
            .iter()
            .map(|&x| self.sample(x, &mut rng))
            .collect();
        SanitizedDocument {
            tokens,
            stream: doc.provenance,
        }
    }

    /// Sanitizes documents in parallel; output order follows input order.
    pub fn sanitize_documents(
        &self,
        docs: &[Document],
        master_seed: u64,
    ) -> Vec<SanitizedDocument> {
        par::map_slice(docs, |doc| self.sanitize_document(doc, master_seed))
    }

    /// Writes the full matrix as a binary cache file. Lazy models have no
    /// matrix to write.
    ///
    /// Layout (little-endian): magic `STXMODEL`, version `u32`, kind `u8`,
    /// epsilon `f64`, p `f64`, vocabulary / partition / embedding SHA-256
    /// (32 bytes each), input rows `u64`, targets per row `u64`, then for each
    /// input id its target probabilities followed by its self mass.
    pub fn write_cache(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let Storage::Full(rows) = &self.storage else {
            return Err(Error::config(
                "only full-matrix models can be written to a cache file",
            ));
        };
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            out.write_all(MODEL_MAGIC)?;
            out.write_all(&MODEL_VERSION.to_le_bytes())?;
            out.write_all(&[self.config.kind.code()])?;
            out.write_all(&self.config.epsilon.to_le_bytes())?;
            out.write_all(&self.config.p.to_le_bytes())?;
            out.write_all(&self.hashes.vocab)?;
            out.write_all(&self.hashes.partition)?;
            out.write_all(&self.hashes.embedding)?;
            out.write_all(&(rows.len() as u64).to_le_bytes())?;
            out.write_all(&(self.targets.len() as u64).to_le_bytes())?;
            for row in rows {
                for p in row.probs.iter() {
                    out.write_all(&p.to_le_bytes())?;
                }
                out.write_all(&row.self_mass.to_le_bytes())?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    /// Loads a cache written by [`ProbabilityModel::write_cache`]. The inputs
    /// must hash to the values recorded in the header.
    pub fn read_cache(
        path: &std::path::Path,
        vocab: &Vocabulary,
        embeddings: Arc<EmbeddingMatrix>,
        partition: Option<&SensitivityPartition>,
        config: &MechanismConfig,
    ) -> Result<Self> {
        use std::io::Read;
        // A lazy shell validates inputs and derives targets without computing rows.
        let mut model = ProbabilityModel::build(
            vocab,
            embeddings,
            partition,
            config,
            BuildOptions {
                layout: Some(Layout::LazyRow),
                cache_rows: Some(1),
                ..BuildOptions::default()
            },
        )?;
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut input = std::io::BufReader::new(file);
        let mut header = vec![0u8; 8 + 4 + 1 + 8 + 8 + 96 + 16];
        input
            .read_exact(&mut header)
            .map_err(|e| Error::io(path, e))?;
        if &header[..8] != MODEL_MAGIC {
            return Err(Error::StaleCache("bad magic bytes".into()));
        }
        let f64_at = |at: usize| f64::from_le_bytes(header[at..at + 8].try_into().unwrap());
        let u64_at = |at: usize| u64::from_le_bytes(header[at..at + 8].try_into().unwrap());
        let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(Error::StaleCache(format!("unsupported version {version}")));
        }
        if header[12] != config.kind.code()
            || f64_at(13).to_bits() != config.epsilon.to_bits()
            || f64_at(21).to_bits() != config.p.to_bits()
        {
            return Err(Error::StaleCache("mechanism parameters differ".into()));
        }
        if header[29..61] != model.hashes.vocab
            || header[61..93] != model.hashes.partition
            || header[93..125] != model.hashes.embedding
        {
            return Err(Error::StaleCache(
                "vocabulary, partition or embedding hash differs".into(),
            ));
        }
        let n_rows = u64_at(125) as usize;
        let n_targets = u64_at(133) as usize;
        if n_rows != model.vocab_len || n_targets != model.targets.len() {
            return Err(Error::StaleCache("matrix shape differs".into()));
        }
        let mut rows = Vec::with_capacity(n_rows);
        let mut buf = vec![0u8; (n_targets + 1) * 8];
        for _ in 0..n_rows {
            input.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
            let mut values: Vec<f64> = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let self_mass = values.pop().unwrap();
            rows.push(materialize(values, self_mass));
        }
        model.storage = Storage::Full(rows);
        Ok(model)
    }
}

const MODEL_MAGIC: &[u8; 8] = b"STXMODEL";
const MODEL_VERSION: u32 = 1;

fn materialize(probs: Vec<f64>, self_mass: f64) -> MaterializedRow {
    let mut weights = Vec::with_capacity(probs.len() + 1);
    weights.extend_from_slice(&probs);
    weights.push(self_mass);
    MaterializedRow {
        table: AliasTable::new(&weights),
        probs: probs.into_boxed_slice(),
        self_mass,
    }
}

/// A document after token-for-token substitution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SanitizedDocument {
    pub tokens: Vec<TokenId>,
    /// Random stream the document was drawn with (its provenance id).
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent random stream `stream` of purpose `domain` under `master_seed`.
pub fn stream_rng(master_seed: u64, domain: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(master_seed ^ splitmix64(domain)));
    rng.set_stream(stream);
    rng
}

const SANITIZE_DOMAIN: u64 = 0x5341_4e49_5449_5a45;

/// The random stream used to sanitize the document with id `provenance`.
pub fn document_rng(master_seed: u64, provenance: u64) -> ChaCha8Rng {
    stream_rng(master_seed, SANITIZE_DOMAIN, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{FrequencyTable, Token};

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::from_tokens((0..n).map(|i| Token::new(format!("w{i}")).unwrap()))
    }

    fn line_embeddings(points: &[f64]) -> Arc<EmbeddingMatrix> {
        Arc::new(EmbeddingMatrix::from_rows(1, points.to_vec()).unwrap())
    }

    fn build(
        points: &[f64],
        partition: Option<&SensitivityPartition>,
        config: MechanismConfig,
        layout: Layout,
    ) -> ProbabilityModel {
        ProbabilityModel::build(
            &vocab(points.len()),
            line_embeddings(points),
            partition,
            &config,
            BuildOptions {
                layout: Some(layout),
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn epsilon_zero_row_is_exactly_uniform() {
        let e = line_embeddings(&[0.0, 1.0, 5.0, 9.0]);
        let row = compute_row(0, &[0, 1, 2, 3], 0.0, &e);
        assert_eq!(row, vec![0.25; 4]);
    }

    #[test]
    fn row_matches_direct_formula() {
        let e = line_embeddings(&[0.0, 1.0, 3.0]);
        let row = compute_row(0, &[0, 1, 2], 2.0, &e);
        // direct evaluation of exp(-eps/2 * d) / sum
        let w = [1.0f64, (-1.0f64).exp(), (-3.0f64).exp()];
        let z: f64 = w.iter().sum();
        for (got, want) in row.iter().zip(w.iter().map(|v| v / z)) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
        let logs = compute_log_row(0, &[0, 1, 2], 2.0, &e);
        for (l, p) in logs.iter().zip(&row) {
            assert!((l.exp() - p).abs() < 1e-15);
        }
    }

    #[test]
    fn self_entry_is_row_max() {
        let e = line_embeddings(&[0.3, -1.0, 2.0, 0.5, 0.31]);
        for x in 0..5 {
            let row = compute_row(x, &[0, 1, 2, 3, 4], 0.7, &e);
            let max = row.iter().copied().fold(0.0, f64::max);
            assert_eq!(row[x as usize], max);
        }
    }

    #[test]
    fn large_epsilon_does_not_underflow_to_nan() {
        let e = line_embeddings(&[0.0, 1.0, 2.0]);
        let row = compute_row(1, &[0, 1, 2], 1e6, &e);
        assert_eq!(row[1], 1.0);
        assert!(row.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn uniform_model_rows() {
        let m = build(
            &[0.0, 1.0, 2.0],
            None,
            MechanismConfig::uniform(0),
            Layout::FullMatrix,
        );
        for x in 0..3 {
            assert_eq!(m.dense_row(x), vec![1.0 / 3.0; 3]);
        }
    }

    #[test]
    fn uniform_equals_santext_at_epsilon_zero() {
        let pts = [0.0, 0.4, 1.9, -3.0, 7.0];
        let u = build(&pts, None, MechanismConfig::uniform(0), Layout::FullMatrix);
        let s = build(
            &pts,
            None,
            MechanismConfig::santext(0.0, 0).unwrap(),
            Layout::FullMatrix,
        );
        for x in 0..5 {
            assert_eq!(u.dense_row(x), s.dense_row(x));
        }
    }

    #[test]
    fn santext_plus_rows_have_the_right_support() {
        let pts = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5];
        let freq = FrequencyTable::from_counts(vec![1, 2, 3, 9, 9, 9]);
        let part = crate::vocab::partition_sensitivity(&vocab(6), &freq, 0.5).unwrap();
        assert_eq!(part.sensitive_ids(), &[0, 1, 2]);
        let cfg = MechanismConfig::santext_plus(1.5, 0.3, 0).unwrap();
        for layout in [Layout::FullMatrix, Layout::LazyRow] {
            let m = build(&pts, Some(&part), cfg, layout);
            for x in 0..6u32 {
                let dense = m.dense_row(x);
                assert!((dense.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for y in 3..6u32 {
                    if y == x {
                        assert!((dense[y as usize] - 0.7).abs() < 1e-15);
                    } else {
                        assert_eq!(dense[y as usize], 0.0);
                    }
                }
                if x >= 3 {
                    let protected: f64 = dense[..3].iter().sum();
                    assert!((protected - 0.3).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn santext_plus_with_everything_sensitive_is_santext() {
        let pts = [0.0, 0.2, 1.1, 3.0];
        let all = SensitivityPartition::all_sensitive(4);
        let plus = build(
            &pts,
            Some(&all),
            MechanismConfig::santext_plus(2.0, 0.3, 0).unwrap(),
            Layout::FullMatrix,
        );
        let base = build(
            &pts,
            None,
            MechanismConfig::santext(2.0, 0).unwrap(),
            Layout::FullMatrix,
        );
        for x in 0..4 {
            assert_eq!(plus.dense_row(x), base.dense_row(x));
        }
    }

    #[test]
    fn santext_plus_rejects_empty_sensitive_set() {
        let part = SensitivityPartition::from_mask(vec![false; 3], 0.0);
        let err = ProbabilityModel::build(
            &vocab(3),
            line_embeddings(&[0.0, 1.0, 2.0]),
            Some(&part),
            &MechanismConfig::santext_plus(1.0, 0.3, 0).unwrap(),
            BuildOptions::default(),
        );
        assert!(matches!(err, Err(Error::Config(_))));
        let err = ProbabilityModel::build(
            &vocab(3),
            line_embeddings(&[0.0, 1.0, 2.0]),
            None,
            &MechanismConfig::santext_plus(1.0, 0.3, 0).unwrap(),
            BuildOptions::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn config_validation() {
        assert!(MechanismConfig::santext(-1.0, 0).is_err());
        assert!(MechanismConfig::santext(f64::NAN, 0).is_err());
        assert!(MechanismConfig::santext_plus(1.0, 1.2, 0).is_err());
        let c = MechanismConfig::santext_plus(1.0, 0.25, 0).unwrap();
        assert!((c.epsilon0().unwrap() - 4f64.ln()).abs() < 1e-15);
        assert_eq!(
            MechanismConfig::santext_plus(1.0, 1.0, 0)
                .unwrap()
                .epsilon0(),
            Some(0.0)
        );
        assert_eq!(
            MechanismConfig::santext_plus(1.0, 0.0, 0)
                .unwrap()
                .epsilon0(),
            None
        );
    }

    #[test]
    fn layout_follows_memory_budget() {
        let pts: Vec<f64> = (0..10).map(f64::from).collect();
        let mk = |budget| {
            ProbabilityModel::build(
                &vocab(10),
                line_embeddings(&pts),
                None,
                &MechanismConfig::santext(1.0, 0).unwrap(),
                BuildOptions {
                    memory_budget: budget,
                    ..Default::default()
                },
            )
            .unwrap()
            .layout()
        };
        assert_eq!(mk(800), Layout::FullMatrix);
        assert_eq!(mk(799), Layout::LazyRow);
    }

    #[test]
    fn lazy_and_full_rows_agree() {
        let pts = [0.0, 0.1, 0.5, 2.0, 4.0, -1.0];
        let cfg = MechanismConfig::santext(3.0, 0).unwrap();
        let full = build(&pts, None, cfg, Layout::FullMatrix);
        let lazy = build(&pts, None, cfg, Layout::LazyRow);
        for x in 0..6 {
            assert_eq!(full.dense_row(x), lazy.dense_row(x));
        }
    }

    #[test]
    fn single_token_vocabulary_always_returns_it() {
        for layout in [Layout::FullMatrix, Layout::LazyRow] {
            let m = build(
                &[1.0],
                None,
                MechanismConfig::santext(1.0, 0).unwrap(),
                layout,
            );
            let mut rng = document_rng(0, 0);
            for _ in 0..100 {
                assert_eq!(m.sample(0, &mut rng), 0);
            }
        }
    }

    #[test]
    fn lazy_sampling_independent_of_cache_state() {
        let pts: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let cfg = MechanismConfig::santext(2.0, 0).unwrap();
        let draw = |cache_rows| {
            let m = ProbabilityModel::build(
                &vocab(20),
                line_embeddings(&pts),
                None,
                &cfg,
                BuildOptions {
                    layout: Some(Layout::LazyRow),
                    cache_rows: Some(cache_rows),
                    ..Default::default()
                },
            )
            .unwrap();
            let doc = Document::new((0..200).map(|i| (i * 7 % 20) as TokenId).collect(), 3);
            m.sanitize_document(&doc, 99)
        };
        assert_eq!(draw(1), draw(20));
    }

    #[test]
    fn empty_document() {
        let m = build(
            &[0.0, 1.0],
            None,
            MechanismConfig::santext(1.0, 0).unwrap(),
            Layout::FullMatrix,
        );
        let out = m.sanitize_document(&Document::new(vec![], 0), 1);
        assert!(out.tokens.is_empty());
    }

    #[test]
    fn documents_use_independent_streams() {
        let pts: Vec<f64> = (0..10).map(f64::from).collect();
        let m = build(
            &pts,
            None,
            MechanismConfig::santext(0.0, 0).unwrap(),
            Layout::FullMatrix,
        );
        let a = m.sanitize_document(&Document::new(vec![0; 100], 0), 5);
        let b = m.sanitize_document(&Document::new(vec![0; 100], 1), 5);
        let c = m.sanitize_document(&Document::new(vec![0; 100], 0), 6);
        assert_ne!(a.tokens, b.tokens);
        assert_ne!(a.tokens, c.tokens);
        assert_eq!(a, m.sanitize_document(&Document::new(vec![0; 100], 0), 5));
    }

    #[test]
    fn model_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let pts = [0.0, 0.5, 1.0, 1.5];
        let part = SensitivityPartition::from_mask(vec![true, false, true, false], 0.5);
        let cfg = MechanismConfig::santext_plus(1.0, 0.3, 7).unwrap();
        let m = build(&pts, Some(&part), cfg, Layout::FullMatrix);
        m.write_cache(&path).unwrap();
        let loaded = ProbabilityModel::read_cache(
            &path,
            &vocab(4),
            line_embeddings(&pts),
            Some(&part),
            &cfg,
        )
        .unwrap();
        assert_eq!(loaded.layout(), Layout::FullMatrix);
        for x in 0..4 {
            assert_eq!(loaded.dense_row(x), m.dense_row(x));
        }
        let other = MechanismConfig::santext_plus(2.0, 0.3, 7).unwrap();
        assert!(matches!(
            ProbabilityModel::read_cache(
                &path,
                &vocab(4),
                line_embeddings(&pts),
                Some(&part),
                &other
            ),
            Err(Error::StaleCache(_))
        ));
        let moved = [0.0, 0.5, 1.0, 1.6];
        assert!(matches!(
            ProbabilityModel::read_cache(
                &path,
                &vocab(4),
                line_embeddings(&moved),
                Some(&part),
                &cfg
            ),
            Err(Error::StaleCache(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rows_stochastic_and_distance_monotone(
                pts in prop::collection::vec(-5.0f64..5.0, 2..20),
                eps in 0.01f64..6.0,
                x in 0usize..20,
            ) {
                let n = pts.len();
                let x = (x % n) as TokenId;
                let e = line_embeddings(&pts);
                let targets: Vec<TokenId> = (0..n as TokenId).collect();
                let row = compute_row(x, &targets, eps, &e);
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                for a in 0..n {
                    for b in 0..n {
                        let (da, db) = (e.distance(x, a as TokenId), e.distance(x, b as TokenId));
                        if da + 1e-9 < db && row[b] > 0.0 {
                            prop_assert!(row[a] > row[b]);
                        }
                    }
                }
            }
        }
    }
}
