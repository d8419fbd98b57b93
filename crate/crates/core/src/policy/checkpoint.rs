//! Versioned binary checkpoints for policy bundles.
//!
//! The format is a plain little-endian dump with a shape header per tensor;
//! `f64` bits are written verbatim, so a save/load cycle reproduces
//! parameters and optimizer state bit for bit.

use super::adam::Adam;
use super::mlp::Mlp;
use super::nets::{PolicyBundle, PolicyNet, ValueNet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"RNAV";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (this build reads {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub epoch: u64,
    pub seed: u64,
}

pub fn save_bundles(
    path: impl AsRef<Path>,
    bundles: &[PolicyBundle],
    meta: CheckpointMeta,
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, CHECKPOINT_FORMAT_VERSION)?;
    write_u64(&mut w, meta.epoch)?;
    write_u64(&mut w, meta.seed)?;
    write_u32(&mut w, bundles.len() as u32)?;
    for b in bundles {
        write_u32(&mut w, b.policy.m_out() as u32)?;
        write_f64(&mut w, b.policy.id_scale())?;
        write_mlp(&mut w, b.policy.mlp())?;
        write_mlp(&mut w, b.value_agent.mlp())?;
        write_mlp(&mut w, b.value_expert.mlp())?;
        write_adam(&mut w, &b.opt_policy)?;
        write_adam(&mut w, &b.opt_value_agent)?;
        write_adam(&mut w, &b.opt_value_expert)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_bundles(
    path: impl AsRef<Path>,
) -> Result<(Vec<PolicyBundle>, CheckpointMeta), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: CHECKPOINT_FORMAT_VERSION,
        });
    }
    let epoch = read_u64(&mut r)?;
    let seed = read_u64(&mut r)?;
    let count = read_u32(&mut r)? as usize;
    if count == 0 || count > 100_000 {
        return Err(CheckpointError::Corrupt(format!("implausible agent count {count}")));
    }
    let mut bundles = Vec::with_capacity(count);
    for _ in 0..count {
        let m_out = read_u32(&mut r)? as usize;
        let id_scale = read_f64(&mut r)?;
        if m_out == 0 || !id_scale.is_finite() || id_scale <= 0.0 {
            return Err(CheckpointError::Corrupt("bad policy header".into()));
        }
        let policy = PolicyNet::from_parts(read_mlp(&mut r)?, m_out, id_scale);
        let value_agent = ValueNet::from_parts(read_mlp(&mut r)?, m_out, id_scale);
        let value_expert = ValueNet::from_parts(read_mlp(&mut r)?, m_out, id_scale);
        let opt_policy = read_adam(&mut r, policy.param_count())?;
        let opt_value_agent = read_adam(&mut r, value_agent.param_count())?;
        let opt_value_expert = read_adam(&mut r, value_expert.param_count())?;
        bundles.push(PolicyBundle {
            policy,
            value_agent,
            value_expert,
            opt_policy,
            opt_value_agent,
            opt_value_expert,
        });
    }
    Ok((bundles, CheckpointMeta { epoch, seed }))
}

fn write_mlp(w: &mut impl Write, mlp: &Mlp) -> Result<(), CheckpointError> {
    write_u32(w, mlp.dims().len() as u32)?;
    for &d in mlp.dims() {
        write_u32(w, d as u32)?;
    }
    write_u64(w, mlp.param_count() as u64)?;
    for &p in mlp.params() {
        write_f64(w, p)?;
    }
    Ok(())
}

fn read_mlp(r: &mut impl Read) -> Result<Mlp, CheckpointError> {
    let ndims = read_u32(r)? as usize;
    if !(2..=16).contains(&ndims) {
        return Err(CheckpointError::Corrupt(format!("implausible layer count {ndims}")));
    }
    let mut dims = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        let d = read_u32(r)? as usize;
        if d == 0 || d > 1 << 20 {
            return Err(CheckpointError::Corrupt(format!("implausible layer width {d}")));
        }
        dims.push(d);
    }
    let expected: usize = dims.windows(2).map(|p| p[1] * p[0] + p[1]).sum();
    let stored = read_u64(r)? as usize;
    if stored != expected {
        return Err(CheckpointError::Corrupt(format!(
            "parameter count {stored} does not match dims ({expected})"
        )));
    }
    let mut params = Vec::with_capacity(expected);
    for _ in 0..expected {
        params.push(read_f64(r)?);
    }
    Ok(Mlp::from_parts(dims, params))
}

fn write_adam(w: &mut impl Write, adam: &Adam) -> Result<(), CheckpointError> {
    write_f64(w, adam.learning_rate())?;
    write_u64(w, adam.steps_taken())?;
    let (m, v) = adam.moments();
    write_u64(w, m.len() as u64)?;
    for &x in m {
        write_f64(w, x)?;
    }
    for &x in v {
        write_f64(w, x)?;
    }
    Ok(())
}

fn read_adam(r: &mut impl Read, expected_len: usize) -> Result<Adam, CheckpointError> {
    let lr = read_f64(r)?;
    let t = read_u64(r)?;
    let len = read_u64(r)? as usize;
    if len != expected_len {
        return Err(CheckpointError::Corrupt(format!(
            "optimizer state length {len} does not match parameters ({expected_len})"
        )));
    }
    let mut m = Vec::with_capacity(len);
    for _ in 0..len {
        m.push(read_f64(r)?);
    }
    let mut v = Vec::with_capacity(len);
    for _ in 0..len {
        v.push(read_f64(r)?);
    }
    Ok(Adam::from_parts(lr, t, m, v))
}

fn write_u32(w: &mut impl Write, x: u32) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn write_u64(w: &mut impl Write, x: u64) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn write_f64(w: &mut impl Write, x: f64) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64, CheckpointError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn sample_bundles() -> Vec<PolicyBundle> {
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        let mut bundles: Vec<PolicyBundle> =
            (0..3).map(|_| PolicyBundle::new(4, 25.0, 3e-4, &mut rng)).collect();
        // Dirty the optimizer state so the round trip covers it too.
        for b in &mut bundles {
            let grad: Vec<f64> = (0..b.policy.param_count()).map(|i| (i as f64).sin()).collect();
            let mut params = b.policy.params().to_vec();
            b.opt_policy.step(&mut params, &grad).unwrap();
            b.policy.params_mut().copy_from_slice(&params);
        }
        bundles
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bundle.ckpt");
        let bundles = sample_bundles();
        save_bundles(&path, &bundles, CheckpointMeta { epoch: 42, seed: 7 }).unwrap();
        let (loaded, meta) = load_bundles(&path).unwrap();
        assert_eq!(meta, CheckpointMeta { epoch: 42, seed: 7 });
        assert_eq!(loaded.len(), bundles.len());
        for (a, b) in loaded.iter().zip(&bundles) {
            assert_eq!(a.policy, b.policy);
            assert_eq!(a.value_agent, b.value_agent);
            assert_eq!(a.value_expert, b.value_expert);
            assert_eq!(a.opt_policy, b.opt_policy);
            assert_eq!(a.opt_value_agent, b.opt_value_agent);
            assert_eq!(a.opt_value_expert, b.opt_value_expert);
        }
        // Saving the loaded state again reproduces the file byte for byte.
        let path2 = dir.path().join("bundle2.ckpt");
        save_bundles(&path2, &loaded, meta).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"JUNKJUNKJUNK").unwrap();
        match load_bundles(&path) {
            Err(CheckpointError::BadMagic) => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_reported_as_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.ckpt");
        let bundles = sample_bundles();
        save_bundles(&path, &bundles, CheckpointMeta { epoch: 1, seed: 1 }).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_bundles(&path).is_err());
    }

    #[test]
    fn future_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("future.ckpt");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&99u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 24]);
        std::fs::write(&path, &bytes).unwrap();
        match load_bundles(&path) {
            Err(CheckpointError::Version { found: 99, .. }) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }
}
