//! Versioned binary checkpointing of training state.
//!
//! Layout: the magic bytes `EESN`, a little-endian `u32` format version, a
//! `u32` record count, then that many length-prefixed named records. Each
//! record is a `u16` name length, the ASCII name, one dtype tag byte
//! (0 = u64, 1 = f64, 2 = f32, 3 = raw bytes), a `u64` element count, and
//! the packed little-endian payload. Training always writes f64 tensors;
//! the loader additionally accepts f32 records and widens them.
//!
//! A checkpoint captures everything the sequential training loop mutates —
//! active space, exploitation distribution, controller, supernet weights,
//! optimizer moments, RNG position, and the epoch cursor — so a loaded
//! state resumes bit-exactly. Backends are stored by their generative
//! parameters where possible: a tabular landscape is persisted as
//! (kind, seed, noise) and rebuilt on load. Files are written to a sibling
//! temporary path and atomically renamed into place, so a crash mid-write
//! never leaves a half-written checkpoint under the real name.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distribution::{CategoricalParams, ControllerState};
use crate::error::{Error, Result};
use crate::space::{ActiveCounts, SearchSpace};
use crate::supernet::adam::AdamState;
use crate::supernet::tabular::{LandscapeKind, TabularLandscape};
use crate::supernet::tasks::{TaskConfig, TaskKind};
use crate::supernet::{SupernetConfig, SupernetWeights};
use crate::trainer::{NeuralBackend, TabularBackend, TrainBackend, TrainState};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"EESN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Hard ceiling on a single record's payload, guarding allocation against
/// corrupt length fields.
const MAX_PAYLOAD_BYTES: u64 = 1 << 30;

const DTYPE_U64: u8 = 0;
const DTYPE_F64: u8 = 1;
const DTYPE_F32: u8 = 2;
const DTYPE_BYTES: u8 = 3;

fn corrupt(message: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(message.into())
}

/// One decoded record payload. f32 records widen to `F64` at read time.
#[derive(Debug, Clone, PartialEq)]
enum Payload {
    U64(Vec<u64>),
    F64(Vec<f64>),
    Bytes(Vec<u8>),
}

fn write_record(out: &mut impl Write, name: &str, payload: &Payload) -> Result<()> {
    let name_bytes = name.as_bytes();
    out.write_all(&(u16::try_from(name_bytes.len()).expect("short record names")).to_le_bytes())?;
    out.write_all(name_bytes)?;
    match payload {
        Payload::U64(values) => {
            out.write_all(&[DTYPE_U64])?;
            out.write_all(&(values.len() as u64).to_le_bytes())?;
            for v in values {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Payload::F64(values) => {
            out.write_all(&[DTYPE_F64])?;
            out.write_all(&(values.len() as u64).to_le_bytes())?;
            for v in values {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Payload::Bytes(bytes) => {
            out.write_all(&[DTYPE_BYTES])?;
            out.write_all(&(bytes.len() as u64).to_le_bytes())?;
            out.write_all(bytes)?;
        }
    }
    Ok(())
}

/// Reads exactly `buf.len()` bytes; a premature end of file becomes a
/// checkpoint-corruption error naming what was being read.
fn read_or_corrupt(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            corrupt(format!("file truncated while reading {what}"))
        } else {
            Error::Io(e)
        }
    })
}

fn read_record(r: &mut impl Read) -> Result<(String, Payload)> {
    let mut len2 = [0u8; 2];
    read_or_corrupt(r, &mut len2, "a record name length")?;
    let mut name_bytes = vec![0u8; u16::from_le_bytes(len2) as usize];
    read_or_corrupt(r, &mut name_bytes, "a record name")?;
    let name = String::from_utf8(name_bytes)
        .map_err(|_| corrupt("record name is not valid UTF-8"))?;
    let mut dtype = [0u8; 1];
    read_or_corrupt(r, &mut dtype, &format!("the dtype of record {name}"))?;
    let mut count8 = [0u8; 8];
    read_or_corrupt(r, &mut count8, &format!("the length of record {name}"))?;
    let count = u64::from_le_bytes(count8);
    let elem_size = match dtype[0] {
        DTYPE_U64 | DTYPE_F64 => 8,
        DTYPE_F32 => 4,
        DTYPE_BYTES => 1,
        other => return Err(corrupt(format!("record {name} has unknown dtype tag {other}"))),
    };
    let byte_len = count
        .checked_mul(elem_size)
        .filter(|&n| n <= MAX_PAYLOAD_BYTES)
        .ok_or_else(|| corrupt(format!("record {name} declares an implausible length {count}")))?;
    let mut raw = vec![0u8; byte_len as usize];
    read_or_corrupt(r, &mut raw, &format!("the payload of record {name}"))?;
    let payload = match dtype[0] {
        DTYPE_U64 => Payload::U64(
            raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect(),
        ),
        DTYPE_F64 => Payload::F64(
            raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        ),
        DTYPE_F32 => Payload::F64(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        ),
        _ => Payload::Bytes(raw),
    };
    Ok((name, payload))
}

/// Loaded records, consumed by name; unknown extras are tolerated.
struct Records(HashMap<String, Payload>);

impl Records {
    fn take(&mut self, name: &str) -> Result<Payload> {
        self.0.remove(name).ok_or_else(|| corrupt(format!("missing record {name}")))
    }

    fn u64s(&mut self, name: &str) -> Result<Vec<u64>> {
        match self.take(name)? {
            Payload::U64(v) => Ok(v),
            _ => Err(corrupt(format!("record {name} should hold u64 values"))),
        }
    }

    fn f64s(&mut self, name: &str) -> Result<Vec<f64>> {
        match self.take(name)? {
            Payload::F64(v) => Ok(v),
            _ => Err(corrupt(format!("record {name} should hold float values"))),
        }
    }

    fn byte_array<const N: usize>(&mut self, name: &str) -> Result<[u8; N]> {
        match self.take(name)? {
            Payload::Bytes(b) => b.try_into().map_err(|b: Vec<u8>| {
                corrupt(format!("record {name} should hold {N} bytes, found {}", b.len()))
            }),
            _ => Err(corrupt(format!("record {name} should hold raw bytes"))),
        }
    }

    fn u64_array<const N: usize>(&mut self, name: &str) -> Result<[u64; N]> {
        self.u64s(name)?.try_into().map_err(|v: Vec<u64>| {
            corrupt(format!("record {name} should hold {N} values, found {}", v.len()))
        })
    }

    fn f64_array<const N: usize>(&mut self, name: &str) -> Result<[f64; N]> {
        self.f64s(name)?.try_into().map_err(|v: Vec<f64>| {
            corrupt(format!("record {name} should hold {N} values, found {}", v.len()))
        })
    }

    fn u64_scalar(&mut self, name: &str) -> Result<u64> {
        Ok(self.u64_array::<1>(name)?[0])
    }

    fn f64_scalar(&mut self, name: &str) -> Result<f64> {
        Ok(self.f64_array::<1>(name)?[0])
    }

    fn usize_scalar(&mut self, name: &str) -> Result<usize> {
        usize::try_from(self.u64_scalar(name)?)
            .map_err(|_| corrupt(format!("record {name} does not fit in usize")))
    }

    fn usizes(&mut self, name: &str) -> Result<Vec<usize>> {
        self.u64s(name)?
            .into_iter()
            .map(|v| {
                usize::try_from(v)
                    .map_err(|_| corrupt(format!("record {name} holds a value beyond usize")))
            })
            .collect()
    }
}

fn active_counts_record(counts: ActiveCounts) -> Payload {
    Payload::U64(vec![counts.depths as u64, counts.heads as u64, counts.intermediates as u64])
}

fn active_counts_from(raw: [u64; 3], name: &str) -> Result<ActiveCounts> {
    let as_usize = |v: u64| {
        usize::try_from(v).map_err(|_| corrupt(format!("record {name} overflows usize")))
    };
    Ok(ActiveCounts {
        depths: as_usize(raw[0])?,
        heads: as_usize(raw[1])?,
        intermediates: as_usize(raw[2])?,
    })
}

fn push_tensors(records: &mut Vec<(String, Payload)>, prefix: &str, weights: &SupernetWeights) {
    weights.for_each_tensor(|name, view| {
        records.push((format!("{prefix}{name}"), Payload::F64(view.as_slice().to_vec())));
    });
}

fn fill_tensors(records: &mut Records, prefix: &str, weights: &mut SupernetWeights) -> Result<()> {
    for name in weights.tensor_names() {
        let data = records.f64s(&format!("{prefix}{name}"))?;
        let dst = weights.tensor_mut(&name).expect("registry names resolve");
        if dst.len() != data.len() {
            return Err(corrupt(format!(
                "tensor {prefix}{name} should hold {} elements, found {}",
                dst.len(),
                data.len()
            )));
        }
        dst.copy_from_slice(&data);
    }
    Ok(())
}

fn collect_records(state: &TrainState) -> Vec<(String, Payload)> {
    let mut records = Vec::new();
    let space = &state.space;
    let opts = |o: &[usize]| Payload::U64(o.iter().map(|&v| v as u64).collect());
    records.push(("space.depth_options".into(), opts(space.depth_options())));
    records.push(("space.head_options".into(), opts(space.head_options())));
    records.push(("space.inter_options".into(), opts(space.intermediate_options())));
    records.push(("space.active_counts".into(), active_counts_record(space.active_counts())));
    for (i, var) in state.params.probs().iter().enumerate() {
        records.push((format!("theta.var{i}"), Payload::F64(var.clone())));
    }
    let c = &state.controller;
    records.push(("controller.scalars".into(), Payload::F64(vec![c.k, c.rho, c.rho_max])));
    records.push((
        "controller.update_interval".into(),
        Payload::U64(vec![c.update_interval as u64]),
    ));
    records.push(("rng.seed".into(), Payload::Bytes(state.rng.get_seed().to_vec())));
    records.push(("rng.stream".into(), Payload::U64(vec![state.rng.get_stream()])));
    records.push((
        "rng.word_pos".into(),
        Payload::Bytes(state.rng.get_word_pos().to_le_bytes().to_vec()),
    ));
    records.push(("progress.next_epoch".into(), Payload::U64(vec![state.next_epoch as u64])));
    match &state.backend {
        TrainBackend::Tabular(b) => {
            let l = &b.landscape;
            records.push(("backend.kind".into(), Payload::U64(vec![0])));
            records.push((
                "backend.active_counts".into(),
                active_counts_record(l.space().active_counts()),
            ));
            let kind = match l.kind() {
                LandscapeKind::Planted => 0,
                LandscapeKind::Deceptive => 1,
            };
            records.push(("landscape.kind".into(), Payload::U64(vec![kind])));
            records.push(("landscape.seed".into(), Payload::U64(vec![l.seed()])));
            records.push(("landscape.noise".into(), Payload::F64(vec![l.noise()])));
        }
        TrainBackend::Neural(b) => {
            records.push(("backend.kind".into(), Payload::U64(vec![1])));
            records.push((
                "backend.active_counts".into(),
                active_counts_record(b.config.space().active_counts()),
            ));
            records.push((
                "model.dims".into(),
                Payload::U64(vec![
                    b.config.vocab_size as u64,
                    b.config.embed_dim as u64,
                    b.config.seq_len as u64,
                    b.config.num_classes as u64,
                ]),
            ));
            let task_kind = match b.task.kind {
                TaskKind::MajorityToken => 0,
                TaskKind::DuplicateToken => 1,
            };
            records.push(("task.kind".into(), Payload::U64(vec![task_kind])));
            records.push((
                "task.shape".into(),
                Payload::U64(vec![
                    b.task.vocab_size as u64,
                    b.task.seq_len as u64,
                    b.task.batch_size as u64,
                ]),
            ));
            records.push(("adam.step".into(), Payload::U64(vec![b.opt.step])));
            push_tensors(&mut records, "weights.", &b.weights);
            push_tensors(&mut records, "adam.m.", &b.opt.m);
            push_tensors(&mut records, "adam.v.", &b.opt.v);
        }
    }
    records
}

fn build_state(mut rec: Records) -> Result<TrainState> {
    let full_space = SearchSpace::new(
        rec.usizes("space.depth_options")?,
        rec.usizes("space.head_options")?,
        rec.usizes("space.inter_options")?,
    )
    .map_err(|e| corrupt(format!("invalid search space in checkpoint: {e}")))?;
    let active = active_counts_from(rec.u64_array("space.active_counts")?, "space.active_counts")?;
    let space = full_space
        .with_active_counts(active)
        .map_err(|e| corrupt(format!("invalid active counts in checkpoint: {e}")))?;
    let mut probs = Vec::with_capacity(space.var_count());
    for i in 0..space.var_count() {
        probs.push(rec.f64s(&format!("theta.var{i}"))?);
    }
    let params = CategoricalParams::from_probs(probs, &space)
        .map_err(|e| corrupt(format!("invalid distribution in checkpoint: {e}")))?;
    let [k, rho, rho_max] = rec.f64_array("controller.scalars")?;
    let controller = ControllerState {
        k,
        update_interval: rec.usize_scalar("controller.update_interval")?,
        rho,
        rho_max,
    };
    let mut rng = ChaCha8Rng::from_seed(rec.byte_array::<32>("rng.seed")?);
    rng.set_stream(rec.u64_scalar("rng.stream")?);
    rng.set_word_pos(u128::from_le_bytes(rec.byte_array::<16>("rng.word_pos")?));
    let next_epoch = rec.usize_scalar("progress.next_epoch")?;
    let backend_active =
        active_counts_from(rec.u64_array("backend.active_counts")?, "backend.active_counts")?;
    let backend_space = full_space
        .with_active_counts(backend_active)
        .map_err(|e| corrupt(format!("invalid backend space in checkpoint: {e}")))?;
    let backend = match rec.u64_scalar("backend.kind")? {
        0 => {
            let seed = rec.u64_scalar("landscape.seed")?;
            let noise = rec.f64_scalar("landscape.noise")?;
            let landscape = match rec.u64_scalar("landscape.kind")? {
                0 => TabularLandscape::planted(backend_space, seed, noise),
                1 => TabularLandscape::deceptive(backend_space, seed, noise),
                other => return Err(corrupt(format!("unknown landscape kind {other}"))),
            }
            .map_err(|e| corrupt(format!("landscape does not rebuild: {e}")))?;
            TrainBackend::Tabular(Box::new(TabularBackend { landscape }))
        }
        1 => {
            let dims = rec.u64_array::<4>("model.dims")?;
            let config = SupernetConfig::new(
                backend_space,
                usize::try_from(dims[0]).map_err(|_| corrupt("model.dims overflow"))?,
                usize::try_from(dims[1]).map_err(|_| corrupt("model.dims overflow"))?,
                usize::try_from(dims[2]).map_err(|_| corrupt("model.dims overflow"))?,
                usize::try_from(dims[3]).map_err(|_| corrupt("model.dims overflow"))?,
            )
            .map_err(|e| corrupt(format!("invalid model dimensions in checkpoint: {e}")))?;
            let kind = match rec.u64_scalar("task.kind")? {
                0 => TaskKind::MajorityToken,
                1 => TaskKind::DuplicateToken,
                other => return Err(corrupt(format!("unknown task kind {other}"))),
            };
            let shape = rec.u64_array::<3>("task.shape")?;
            let task = TaskConfig::new(
                kind,
                usize::try_from(shape[0]).map_err(|_| corrupt("task.shape overflow"))?,
                usize::try_from(shape[1]).map_err(|_| corrupt("task.shape overflow"))?,
                usize::try_from(shape[2]).map_err(|_| corrupt("task.shape overflow"))?,
            )
            .map_err(|e| corrupt(format!("invalid task in checkpoint: {e}")))?;
            let mut weights = SupernetWeights::zeros(&config);
            fill_tensors(&mut rec, "weights.", &mut weights)?;
            let mut opt = AdamState::new(&config);
            fill_tensors(&mut rec, "adam.m.", &mut opt.m)?;
            fill_tensors(&mut rec, "adam.v.", &mut opt.v)?;
            opt.step = rec.u64_scalar("adam.step")?;
            TrainBackend::Neural(Box::new(NeuralBackend { config, task, weights, opt }))
        }
        other => return Err(corrupt(format!("unknown backend kind {other}"))),
    };
    Ok(TrainState { space, params, controller, backend, rng, next_epoch })
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".tmp");
    PathBuf::from(os)
}

/// Serializes the state to `path` atomically: the bytes are written and
/// synced to a sibling `.tmp` file first, then renamed over the target.
pub fn save(state: &TrainState, path: &Path) -> Result<()> {
    let records = collect_records(state);
    let tmp = tmp_path(path);
    let mut out = BufWriter::new(File::create(&tmp)?);
    out.write_all(&CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(records.len() as u32).to_le_bytes())?;
    for (name, payload) in &records {
        write_record(&mut out, name, payload)?;
    }
    out.flush()?;
    out.get_ref().sync_all()?;
    drop(out);
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a checkpoint back into a runnable training state. Structural
/// problems — bad magic, unknown version, truncation, missing or mis-shaped
/// records — surface as [`Error::CorruptCheckpoint`].
pub fn load(path: &Path) -> Result<TrainState> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_or_corrupt(&mut r, &mut magic, "the magic header")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(corrupt("not a checkpoint file (bad magic header)"));
    }
    let mut word = [0u8; 4];
    read_or_corrupt(&mut r, &mut word, "the format version")?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!(
            "unsupported format version {version} (this build reads {CHECKPOINT_VERSION})"
        )));
    }
    read_or_corrupt(&mut r, &mut word, "the record count")?;
    let count = u32::from_le_bytes(word);
    let mut map = HashMap::with_capacity(count as usize);
    for _ in 0..count {
        let (name, payload) = read_record(&mut r)?;
        if map.insert(name.clone(), payload).is_some() {
            return Err(corrupt(format!("duplicate record {name}")));
        }
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(corrupt("trailing bytes after the last record"));
    }
    build_state(Records(map))
}

/// FNV-1a digest of a file's raw bytes. Search runs assert with it that the
/// checkpoint on disk is left untouched.
pub fn file_digest(path: &Path) -> Result<u64> {
    let bytes = fs::read(path)?;
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x1_0000_01b3);
    }
    Ok(hash)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{presets, ExpansionSchedule};
    use crate::trainer::{run, train, GateMode, TrainConfig};
    use crate::distribution::UtilityMode;

    fn tmp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("ckpt-test-{tag}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn tiny_neural() -> (SearchSpace, TrainBackend) {
        let space = SearchSpace::new(vec![2, 1], vec![2, 1], vec![8, 4]).unwrap();
        let config = SupernetConfig::new(space.clone(), 8, 8, 6, 2).unwrap();
        let task = TaskConfig::new(TaskKind::MajorityToken, 8, 6, 8).unwrap();
        let backend =
            TrainBackend::Neural(Box::new(NeuralBackend::init(config, task, 11).unwrap()));
        (space, backend)
    }

    fn tiny_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            steps_per_epoch: 3,
            lambda: 2,
            update_interval: 1,
            weight_lr: 1e-3,
            theta_lr: 0.05,
            utility_mode: UtilityMode::Ranking,
            gate_mode: GateMode::ExploitExplore,
            seed: 21,
        }
    }

    fn assert_states_equal(a: &TrainState, b: &TrainState) {
        assert_eq!(a.space, b.space);
        assert_eq!(a.params, b.params);
        assert_eq!(a.controller.k, b.controller.k);
        assert_eq!(a.controller.rho, b.controller.rho);
        assert_eq!(a.controller.rho_max, b.controller.rho_max);
        assert_eq!(a.controller.update_interval, b.controller.update_interval);
        assert_eq!(a.rng, b.rng);
        assert_eq!(a.next_epoch, b.next_epoch);
        match (&a.backend, &b.backend) {
            (TrainBackend::Neural(x), TrainBackend::Neural(y)) => {
                assert_eq!(x.weights.checksum(), y.weights.checksum());
                assert_eq!(x.opt.m.checksum(), y.opt.m.checksum());
                assert_eq!(x.opt.v.checksum(), y.opt.v.checksum());
                assert_eq!(x.opt.step, y.opt.step);
                assert_eq!(x.task, y.task);
            }
            (TrainBackend::Tabular(x), TrainBackend::Tabular(y)) => {
                assert_eq!(x.landscape.target(), y.landscape.target());
                assert_eq!(x.landscape.decoy(), y.landscape.decoy());
                assert_eq!(x.landscape.seed(), y.landscape.seed());
                assert_eq!(x.landscape.noise(), y.landscape.noise());
            }
            _ => panic!("backend kinds differ after round trip"),
        }
    }

    #[test]
    fn record_layer_round_trips_every_dtype() {
        let cases = vec![
            ("u".to_string(), Payload::U64(vec![0, 1, u64::MAX])),
            ("f".to_string(), Payload::F64(vec![0.0, -1.5, f64::MIN_POSITIVE])),
            ("b".to_string(), Payload::Bytes(vec![7, 0, 255])),
            ("empty".to_string(), Payload::F64(vec![])),
        ];
        let mut buf = Vec::new();
        for (name, payload) in &cases {
            write_record(&mut buf, name, payload).unwrap();
        }
        let mut r = buf.as_slice();
        for (name, payload) in &cases {
            let (got_name, got) = read_record(&mut r).unwrap();
            assert_eq!(&got_name, name);
            assert_eq!(&got, payload);
        }
        assert!(r.is_empty());
    }

    #[test]
    fn f32_records_widen_on_read() {
        // Hand-build a dtype-2 record: name "w", 3 f32 values.
        let mut buf = Vec::new();
        buf.extend_from_slice(&1u16.to_le_bytes());
        buf.push(b'w');
        buf.push(DTYPE_F32);
        buf.extend_from_slice(&3u64.to_le_bytes());
        for v in [0.5f32, -2.0, 3.25] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let (name, payload) = read_record(&mut buf.as_slice()).unwrap();
        assert_eq!(name, "w");
        assert_eq!(payload, Payload::F64(vec![0.5, -2.0, 3.25]));
    }

    #[test]
    fn neural_state_round_trips_bit_exactly() {
        let dir = tmp_dir("neural-rt");
        let path = dir.join("state.ckpt");
        let (space, backend) = tiny_neural();
        let (state, _) =
            train(&space, &ExpansionSchedule::none(&space), backend, &tiny_config(2)).unwrap();
        save(&state, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_states_equal(&state, &loaded);
        assert!(!tmp_path(&path).exists(), "temporary file left behind");
        // Same state serializes to the same bytes.
        let first = fs::read(&path).unwrap();
        save(&loaded, &path).unwrap();
        assert_eq!(first, fs::read(&path).unwrap());
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn tabular_state_round_trips_for_both_landscape_kinds() {
        let dir = tmp_dir("tabular-rt");
        for (tag, landscape) in [
            ("planted", TabularLandscape::planted(presets::desk(), 4, 0.05).unwrap()),
            ("deceptive", TabularLandscape::deceptive(presets::desk(), 4, 0.05).unwrap()),
        ] {
            let path = dir.join(format!("{tag}.ckpt"));
            let backend = TrainBackend::Tabular(Box::new(TabularBackend { landscape }));
            let mut config = tiny_config(3);
            config.lambda = 6;
            let space = presets::desk();
            let schedule = ExpansionSchedule::progressive(&space, 3).unwrap();
            let (state, _) = train(&space, &schedule, backend, &config).unwrap();
            save(&state, &path).unwrap();
            let loaded = load(&path).unwrap();
            assert_states_equal(&state, &loaded);
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn resume_through_file_matches_uninterrupted_run() {
        let dir = tmp_dir("resume");
        let path = dir.join("mid.ckpt");
        let config = tiny_config(4);
        // Reference run, persisting the epoch-2 boundary as it passes.
        let (space, backend) = tiny_neural();
        let schedule = ExpansionSchedule::none(&space);
        let mut reference = TrainState::new(&space, &schedule, backend, &config).unwrap();
        let ref_history = run(&mut reference, &schedule, &config, |st, _| {
            if st.next_epoch == 2 {
                save(st, &path)?;
            }
            Ok(())
        })
        .unwrap();
        // Load the file and finish the remaining epochs.
        let mut resumed = load(&path).unwrap();
        assert_eq!(resumed.next_epoch, 2);
        let tail = run(&mut resumed, &schedule, &config, |_, _| Ok(())).unwrap();
        assert_states_equal(&reference, &resumed);
        let tail_expected: Vec<_> =
            ref_history.steps.iter().filter(|r| r.epoch >= 2).cloned().collect();
        assert_eq!(tail.steps, tail_expected);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn structural_damage_is_reported_as_corruption() {
        let dir = tmp_dir("corrupt");
        let path = dir.join("base.ckpt");
        let (space, backend) = tiny_neural();
        let (state, _) =
            train(&space, &ExpansionSchedule::none(&space), backend, &tiny_config(1)).unwrap();
        save(&state, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let expect_corrupt = |tag: &str, mutated: Vec<u8>| {
            let p = dir.join(format!("{tag}.ckpt"));
            fs::write(&p, mutated).unwrap();
            match load(&p) {
                Err(Error::CorruptCheckpoint(_)) => {}
                other => panic!("{tag}: expected corruption error, got {other:?}"),
            }
        };
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        expect_corrupt("magic", bad_magic);
        let mut bad_version = bytes.clone();
        bad_version[4] = 99;
        expect_corrupt("version", bad_version);
        expect_corrupt("truncated", bytes[..bytes.len() - 9].to_vec());
        let mut trailing = bytes.clone();
        trailing.push(0);
        expect_corrupt("trailing", trailing);
        // Renaming a record (same length) makes the original go missing.
        let needle = b"landscape.seed";
        let mut renamed = fs::read(&path).unwrap();
        if let Some(pos) = renamed.windows(needle.len()).position(|w| w == needle) {
            renamed[pos] = b'J';
            expect_corrupt("missing-record", renamed);
        } else {
            // Neural checkpoints have no landscape records; patch a weights one.
            let needle = b"weights.embedding";
            let mut renamed = fs::read(&path).unwrap();
            let pos = renamed.windows(needle.len()).position(|w| w == needle).unwrap();
            renamed[pos] = b'J';
            expect_corrupt("missing-record", renamed);
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn digest_tracks_content() {
        let dir = tmp_dir("digest");
        let a = dir.join("a.bin");
        let b = dir.join("b.bin");
        fs::write(&a, b"same bytes").unwrap();
        fs::write(&b, b"same bytes").unwrap();
        assert_eq!(file_digest(&a).unwrap(), file_digest(&b).unwrap());
        fs::write(&b, b"same byteS").unwrap();
        assert_ne!(file_digest(&a).unwrap(), file_digest(&b).unwrap());
        fs::remove_dir_all(&dir).unwrap();
    }
}
