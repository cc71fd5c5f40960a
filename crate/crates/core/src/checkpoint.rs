//! Checkpoint directories: a text manifest plus one little-endian f64 blob.
//!
//! ```text
//! format = ocrf-checkpoint 1
//! config_hash = <sha256>
//! step = 120
//! rng_seed = <hex>
//! rng_stream = 2
//! rng_word_pos = 4096
//! blob_len = <bytes>
//! blob_sha256 = <sha256>
//! tensor params dec.proj.w 8,16 0 1024
//! ...
//! [config]
//! seed = 0
//! ...
//! ```
//!
//! Tensor lines are `tensor <group> <name> <shape> <offset> <len>`, with
//! offset and length in bytes.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::params::{ParamStore, Tensor};
use crate::train::TrainState;

pub const FORMAT: &str = "ocrf-checkpoint 1";
pub const MANIFEST: &str = "manifest.txt";
pub const BLOB: &str = "tensors.bin";

const GROUPS: [&str; 3] = ["params", "adam.m", "adam.v"];

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    group: String,
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

impl Entry {
    fn line(&self) -> String {
        let shape: Vec<String> = self.shape.iter().map(|d| d.to_string()).collect();
        format!("tensor {} {} {} {} {}", self.group, self.name, shape.join(","), self.offset, self.len)
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn stores(state: &TrainState) -> [&ParamStore; 3] {
    [&state.params, &state.m, &state.v]
}

/// Manifest text and blob bytes for a state.
pub fn encode(state: &TrainState, cfg: &RunConfig) -> (String, Vec<u8>) {
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    let mut offset = 0;
    for (group, store) in GROUPS.iter().zip(stores(state)) {
        for (name, t) in store.iter() {
            for v in &t.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(Entry {
                group: group.to_string(),
                name: name.clone(),
                shape: t.shape.clone(),
                offset,
                len: 8 * t.data.len(),
            });
            offset += 8 * t.data.len();
        }
    }
    let rng = &state.rng;
    let mut m = String::new();
    m.push_str(&format!("format = {FORMAT}\n"));
    m.push_str(&format!("config_hash = {}\n", cfg.hash()));
    m.push_str(&format!("step = {}\n", state.step));
    m.push_str(&format!("rng_seed = {}\n", hex::encode(rng.get_seed())));
    m.push_str(&format!("rng_stream = {}\n", rng.get_stream()));
    m.push_str(&format!("rng_word_pos = {}\n", rng.get_word_pos()));
    m.push_str(&format!("blob_len = {}\n", blob.len()));
    m.push_str(&format!("blob_sha256 = {}\n", hex::encode(Sha256::digest(&blob))));
    for e in &entries {
        m.push_str(&e.line());
        m.push('\n');
    }
    m.push_str("[config]\n");
    m.push_str(&cfg.to_text());
    (m, blob)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes `dir/tensors.bin` then `dir/manifest.txt`, each via temp + rename.
pub fn save(dir: &Path, state: &TrainState, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (manifest, blob) = encode(state, cfg);
    write_atomic(&dir.join(BLOB), &blob)?;
    write_atomic(&dir.join(MANIFEST), manifest.as_bytes())?;
    Ok(())
}

fn field<'a>(header: &'a [(String, String)], key: &str) -> Result<&'a str> {
    header
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| bad(format!("manifest is missing {key:?}")))
}

fn num<T: std::str::FromStr>(header: &[(String, String)], key: &str) -> Result<T> {
    field(header, key)?.parse().map_err(|_| bad(format!("manifest field {key:?} is malformed")))
}

fn parse_entry(line: &str) -> Result<Entry> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    let [_, group, name, shape, offset, len] = parts[..] else {
        return Err(bad(format!("malformed tensor line {line:?}")));
    };
    let shape = shape
        .split(',')
        .map(|d| d.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| bad(format!("malformed shape in {line:?}")))?;
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("malformed number in {line:?}")));
    Ok(Entry {
        group: group.to_string(),
        name: name.to_string(),
        shape,
        offset: parse(offset)?,
        len: parse(len)?,
    })
}

/// Parses manifest text and blob bytes back into a state and its config.
pub fn decode(manifest: &str, blob: &[u8]) -> Result<(TrainState, RunConfig)> {
    let (head, config_text) = manifest
        .split_once("[config]\n")
        .ok_or_else(|| bad("manifest has no [config] section"))?;
    let mut header = Vec::new();
    let mut entries = Vec::new();
    for line in head.lines().filter(|l| !l.trim().is_empty()) {
        if line.starts_with("tensor ") {
            entries.push(parse_entry(line)?);
        } else if let Some((k, v)) = line.split_once(" = ") {
            header.push((k.to_string(), v.to_string()));
        } else {
            return Err(bad(format!("unrecognized manifest line {line:?}")));
        }
    }
    let format = field(&header, "format")?;
    if format != FORMAT {
        return Err(bad(format!("format mismatch:\n- {FORMAT}\n+ {format}")));
    }
    let blob_len: usize = num(&header, "blob_len")?;
    if blob.len() != blob_len {
        return Err(bad(format!("blob is {} bytes, manifest says {blob_len}", blob.len())));
    }
    let digest = hex::encode(Sha256::digest(blob));
    if digest != field(&header, "blob_sha256")? {
        return Err(bad("blob checksum mismatch"));
    }
    let cfg = RunConfig::parse(config_text)?;
    if cfg.hash() != field(&header, "config_hash")? {
        return Err(bad("embedded config does not match its hash"));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut groups = [ParamStore::new(), ParamStore::new(), ParamStore::new()];
    for e in entries {
        let gi = GROUPS
            .iter()
            .position(|g| *g == e.group)
            .ok_or_else(|| bad(format!("unknown tensor group {:?}", e.group)))?;
        let n = e.shape.iter().product::<usize>();
        if 8 * n != e.len || e.offset % 8 != 0 || e.offset + e.len > blob.len() {
            return Err(bad(format!("tensor {} {}: shape {:?} does not fit its span", e.group, e.name, e.shape)));
        }
        groups[gi].insert(
            e.name,
            Tensor {
                shape: e.shape,
                data: values[e.offset / 8..e.offset / 8 + n].to_vec(),
            },
        );
    }
    let seed_bytes = hex::decode(field(&header, "rng_seed")?).map_err(|_| bad("rng seed is not hex"))?;
    let seed: [u8; 32] = seed_bytes.try_into().map_err(|_| bad("rng seed must be 32 bytes"))?;
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::from_seed(seed);
    rng.set_stream(num(&header, "rng_stream")?);
    rng.set_word_pos(num(&header, "rng_word_pos")?);
    let [params, m, v] = groups;
    let state = TrainState {
        step: num(&header, "step")?,
        params,
        m,
        v,
        rng,
    };
    Ok((state, cfg))
}

pub fn load(dir: &Path) -> Result<(TrainState, RunConfig)> {
    let manifest = fs::read_to_string(dir.join(MANIFEST))?;
    let blob = fs::read(dir.join(BLOB))?;
    decode(&manifest, &blob)
}

/// Rejects a loaded store whose names or shapes differ from `expected`,
/// listing every differing entry.
pub fn check_layout(loaded: &ParamStore, expected: &ParamStore) -> Result<()> {
    let mut diff = Vec::new();
    for (name, t) in expected.iter() {
        match loaded.get(name) {
            Ok(l) if l.shape == t.shape => {}
            Ok(l) => diff.push(format!("~ {name}: expected {:?}, found {:?}", t.shape, l.shape)),
            Err(_) => diff.push(format!("- {name} {:?}", t.shape)),
        }
    }
    for (name, t) in loaded.iter() {
        if !expected.contains(name) {
            diff.push(format!("+ {name} {:?}", t.shape));
        }
    }
    if diff.is_empty() {
        Ok(())
    } else {
        Err(bad(format!("parameter layout differs:\n{}", diff.join("\n"))))
    }
}

/// Loads a checkpoint for resuming under `cfg`: the settings other than the
/// step budget must match and the layout must match a fresh initialization.
pub fn load_for(dir: &Path, cfg: &RunConfig) -> Result<TrainState> {
    let (state, saved) = load(dir)?;
    if saved.hash() != cfg.hash() {
        let (old_text, new_text) = (saved.to_text(), cfg.to_text());
        let diff: Vec<String> = old_text
            .lines()
            .zip(new_text.lines())
            .filter(|(a, b)| a != b && !a.starts_with("steps ="))
            .map(|(a, b)| format!("- {a}\n+ {b}"))
            .collect();
        return Err(bad(format!("config mismatch:\n{}", diff.join("\n"))));
    }
    let fresh = crate::train::init_params(cfg);
    for store in stores(&state) {
        check_layout(store, &fresh)?;
    }
    Ok(state)
}
