//! Synthetic sequence-classification tasks for desk-scale training, plus a
//! plain-text dataset loader. Batches are generated deterministically from
//! derived seeds, so no dataset files are required and every run is exactly
//! reproducible.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One fixed-length mini-batch: `batch_size` sequences of `seq_len` token
/// ids with one class label each. Tokens are stored row-major
/// (`tokens[b * seq_len + s]`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub tokens: Vec<u32>,
    pub labels: Vec<usize>,
    pub batch_size: usize,
    pub seq_len: usize,
}

impl Batch {
    pub fn token(&self, b: usize, s: usize) -> u32 {
        self.tokens[b * self.seq_len + s]
    }
}

/// Deterministic seed derivation: folds `parts` into `base` with a
/// splitmix64 chain, so independent streams (per epoch, per step, per
/// purpose) never overlap by construction of distinct part tuples.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    fn splitmix64(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    let mut state = splitmix64(base);
    for &p in parts {
        state = splitmix64(state ^ p.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    state
}

/// The two built-in synthetic tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    /// Binary label: which half of the vocabulary contributes more tokens
    /// to the sequence. Solvable from pooled token statistics, learnable by
    /// the smallest architectures.
    MajorityToken,
    /// Binary label: does any token occur at least twice. Requires
    /// token-token comparison, so capacity matters.
    DuplicateToken,
}

impl TaskKind {
    /// Accepts the short names used in configs (`t1`/`t2`) as well as the
    /// descriptive ones.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "t1" | "majority" | "majority_token" => Some(TaskKind::MajorityToken),
            "t2" | "duplicate" | "duplicate_token" => Some(TaskKind::DuplicateToken),
            _ => None,
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TaskKind::MajorityToken => write!(f, "t1"),
            TaskKind::DuplicateToken => write!(f, "t2"),
        }
    }
}

/// Shape and source of generated batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub batch_size: usize,
}

impl TaskConfig {
    pub fn new(kind: TaskKind, vocab_size: usize, seq_len: usize, batch_size: usize) -> Result<Self> {
        if vocab_size < 2 || seq_len == 0 || batch_size == 0 {
            return Err(Error::InvalidParameter(
                "task needs vocab_size ≥ 2 and positive seq_len/batch_size".into(),
            ));
        }
        if kind == TaskKind::DuplicateToken && vocab_size < seq_len {
            return Err(Error::InvalidParameter(format!(
                "duplicate-token task needs vocab_size ≥ seq_len \
                 (got {vocab_size} < {seq_len}) to build duplicate-free sequences"
            )));
        }
        Ok(TaskConfig { kind, vocab_size, seq_len, batch_size })
    }

    /// Number of classes both tasks produce.
    pub fn num_classes(&self) -> usize {
        2
    }

    /// Generates the batch for `seed` deterministically.
    pub fn batch(&self, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tokens = Vec::with_capacity(self.batch_size * self.seq_len);
        let mut labels = Vec::with_capacity(self.batch_size);
        for _ in 0..self.batch_size {
            let (seq, label) = match self.kind {
                TaskKind::MajorityToken => self.majority_example(&mut rng),
                TaskKind::DuplicateToken => self.duplicate_example(&mut rng),
            };
            tokens.extend(seq);
            labels.push(label);
        }
        Batch { tokens, labels, batch_size: self.batch_size, seq_len: self.seq_len }
    }

    /// A fixed family of validation batches, disjoint from training batches
    /// by the seed-derivation tag.
    pub fn val_batches(&self, base_seed: u64, count: usize) -> Vec<Batch> {
        (0..count)
            .map(|i| self.batch(derive_seed(base_seed, &[0x5641_4c42, i as u64])))
            .collect()
    }

    /// Training batch for one (epoch, step) coordinate.
    pub fn train_batch(&self, base_seed: u64, epoch: usize, step: usize) -> Batch {
        self.batch(derive_seed(base_seed, &[0x5452_4e42, epoch as u64, step as u64]))
    }

    fn majority_example<R: Rng>(&self, rng: &mut R) -> (Vec<u32>, usize) {
        let half = (self.vocab_size / 2) as u32;
        loop {
            // Bias token draws toward one vocabulary half, then label by the
            // realized majority so labels are exact; resample rare ties.
            let favored = rng.gen::<bool>();
            let seq: Vec<u32> = (0..self.seq_len)
                .map(|_| {
                    let from_favored = rng.gen::<f64>() < 0.75;
                    let lower_half = favored == from_favored;
                    if lower_half {
                        rng.gen_range(0..half)
                    } else {
                        half + rng.gen_range(0..self.vocab_size as u32 - half)
                    }
                })
                .collect();
            let low = seq.iter().filter(|&&t| t < half).count();
            let high = self.seq_len - low;
            if low == high {
                continue;
            }
            return (seq, usize::from(high > low));
        }
    }

    fn duplicate_example<R: Rng>(&self, rng: &mut R) -> (Vec<u32>, usize) {
        let has_duplicate = rng.gen::<bool>();
        let distinct_needed = if has_duplicate { self.seq_len - 1 } else { self.seq_len };
        // Partial Fisher-Yates over the vocabulary for distinct tokens.
        let mut pool: Vec<u32> = (0..self.vocab_size as u32).collect();
        for i in 0..distinct_needed {
            let j = i + rng.gen_range(0..pool.len() - i);
            pool.swap(i, j);
        }
        let mut seq: Vec<u32> = pool[..distinct_needed].to_vec();
        if has_duplicate {
            let copy = seq[rng.gen_range(0..seq.len())];
            seq.push(copy);
        }
        // Shuffle so the duplicate position is uninformative.
        for i in (1..seq.len()).rev() {
            let j = rng.gen_range(0..=i);
            seq.swap(i, j);
        }
        (seq, usize::from(has_duplicate))
    }
}

/// Loads a plain-text dataset: one example per line, space-separated token
/// ids, a tab, then the label. Blank lines are skipped.
pub fn load_dataset(path: &Path) -> Result<Vec<(Vec<u32>, usize)>> {
    let text = std::fs::read_to_string(path)?;
    let mut examples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (toks, label) = line.split_once('\t').ok_or_else(|| Error::Config {
            line: i + 1,
            message: "expected `tokens<TAB>label`".into(),
        })?;
        let tokens = toks
            .split_whitespace()
            .map(|t| {
                t.parse::<u32>().map_err(|_| Error::Config {
                    line: i + 1,
                    message: format!("bad token id `{t}`"),
                })
            })
            .collect::<Result<Vec<u32>>>()?;
        let label = label.trim().parse::<usize>().map_err(|_| Error::Config {
            line: i + 1,
            message: format!("bad label `{label}`"),
        })?;
        if tokens.is_empty() {
            return Err(Error::Config { line: i + 1, message: "empty token list".into() });
        }
        examples.push((tokens, label));
    }
    Ok(examples)
}

/// Batches a loaded dataset: fixed-size chunks, truncating the remainder;
/// all sequences must share one length.
pub fn batches_from_dataset(
    examples: &[(Vec<u32>, usize)],
    batch_size: usize,
) -> Result<Vec<Batch>> {
    let seq_len = examples
        .first()
        .map(|(t, _)| t.len())
        .ok_or_else(|| Error::InvalidParameter("empty dataset".into()))?;
    if examples.iter().any(|(t, _)| t.len() != seq_len) {
        return Err(Error::InvalidParameter(
            "all dataset sequences must have the same length".into(),
        ));
    }
    Ok(examples
        .chunks(batch_size)
        .filter(|c| c.len() == batch_size)
        .map(|chunk| Batch {
            tokens: chunk.iter().flat_map(|(t, _)| t.iter().copied()).collect(),
            labels: chunk.iter().map(|&(_, l)| l).collect(),
            batch_size,
            seq_len,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_is_stable_and_sensitive() {
        let a = derive_seed(42, &[1, 2, 3]);
        assert_eq!(a, derive_seed(42, &[1, 2, 3]));
        assert_ne!(a, derive_seed(42, &[1, 2, 4]));
        assert_ne!(a, derive_seed(43, &[1, 2, 3]));
        assert_ne!(a, derive_seed(42, &[1, 2]));
    }

    #[test]
    fn majority_labels_match_realized_counts() {
        let cfg = TaskConfig::new(TaskKind::MajorityToken, 16, 16, 64).unwrap();
        let batch = cfg.batch(7);
        assert_eq!(batch.labels.len(), 64);
        assert_eq!(batch.tokens.len(), 64 * 16);
        for b in 0..batch.batch_size {
            let low = (0..16).filter(|&s| batch.token(b, s) < 8).count();
            let high = 16 - low;
            assert_ne!(low, high, "tie should have been resampled");
            assert_eq!(batch.labels[b], usize::from(high > low));
        }
        // Both labels occur.
        assert!(batch.labels.contains(&0));
        assert!(batch.labels.contains(&1));
    }

    #[test]
    fn duplicate_labels_match_content() {
        let cfg = TaskConfig::new(TaskKind::DuplicateToken, 16, 16, 64).unwrap();
        let batch = cfg.batch(11);
        for b in 0..batch.batch_size {
            let mut seen = std::collections::HashSet::new();
            let has_dup = (0..16).any(|s| !seen.insert(batch.token(b, s)));
            assert_eq!(batch.labels[b], usize::from(has_dup));
        }
        assert!(batch.labels.contains(&0));
        assert!(batch.labels.contains(&1));
        // vocab < seq_len cannot build duplicate-free sequences
        assert!(TaskConfig::new(TaskKind::DuplicateToken, 8, 16, 4).is_err());
    }

    #[test]
    fn batches_are_deterministic_per_seed() {
        let cfg = TaskConfig::new(TaskKind::MajorityToken, 16, 16, 8).unwrap();
        assert_eq!(cfg.batch(3), cfg.batch(3));
        assert_ne!(cfg.batch(3), cfg.batch(4));
        assert_eq!(cfg.train_batch(9, 2, 5), cfg.train_batch(9, 2, 5));
        assert_ne!(cfg.train_batch(9, 2, 5), cfg.train_batch(9, 2, 6));
        let val = cfg.val_batches(9, 3);
        assert_eq!(val.len(), 3);
        assert_ne!(val[0], val[1]);
        // Validation batches never collide with training batches.
        for epoch in 0..4 {
            for step in 0..4 {
                let tb = cfg.train_batch(9, epoch, step);
                assert!(val.iter().all(|v| *v != tb));
            }
        }
    }

    #[test]
    fn dataset_loader_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.txt");
        std::fs::write(&path, "1 2 3\t0\n4 5 6\t1\n\n7 8 9\t0\n").unwrap();
        let examples = load_dataset(&path).unwrap();
        assert_eq!(examples.len(), 3);
        assert_eq!(examples[1], (vec![4, 5, 6], 1));
        let batches = batches_from_dataset(&examples, 2).unwrap();
        assert_eq!(batches.len(), 1); // remainder truncated
        assert_eq!(batches[0].labels, vec![0, 1]);
        std::fs::write(&path, "1 2\tx\n").unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(Error::Config { line: 1, .. })
        ));
    }
}
