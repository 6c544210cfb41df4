//! Binary model file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SVEN" | u32 version | u64 len | config JSON
//! plan:   u64 n_passages | u64 s | f64 overlap | u64 seed | u64 base_shard_size
//!         s × (u64 len | len × u32 row)
//! member: u64 width | width × f64 mean | width × f64 std | u64 fitted_on
//!         f64 bias | f64 gamma | u64 n_sv | n_sv × f64 beta
//!         n_sv × u64 support index | n_sv × width × f32 support vector
//! ```
//!
//! One member per subset. Trailing bytes are rejected.

use std::path::Path;

use super::{EnsembleModel, Member, TrainConfig};
use crate::bagging::BaggingPlan;
use crate::error::{Error, Result};
use crate::scaler::FeatureScaler;
use crate::svr::SvrModel;

pub const MODEL_MAGIC: &[u8; 4] = b"SVEN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptModel(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.array()?);
        usize::try_from(v).map_err(|_| Error::CorruptModel(format!("length {v} out of range")))
    }

    /// A count of items of `item_size` bytes, bounded by the bytes remaining.
    fn count(&mut self, item_size: usize) -> Result<usize> {
        let n = self.u64()?;
        let remaining = self.buf.len() - self.pos;
        if n.checked_mul(item_size).is_none_or(|b| b > remaining) {
            return Err(Error::CorruptModel(format!("count {n} exceeds file size")));
        }
        Ok(n)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn to_bytes(model: &EnsembleModel) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.0.extend_from_slice(MODEL_MAGIC);
    w.u32(FORMAT_VERSION);
    let config =
        serde_json::to_vec(&model.config).map_err(|e| Error::CorruptModel(e.to_string()))?;
    w.u64(config.len());
    w.0.extend_from_slice(&config);

    let plan = &model.plan;
    w.u64(plan.n_passages);
    w.u64(plan.s);
    w.f64(plan.overlap);
    w.0.extend_from_slice(&plan.seed.to_le_bytes());
    w.u64(plan.base_shard_size);
    for subset in &plan.subsets {
        w.u64(subset.len());
        for &row in subset {
            w.u32(row as u32);
        }
    }

    for member in &model.members {
        let (scaler, svr) = (&member.scaler, &member.model);
        w.u64(scaler.width());
        w.f64s(&scaler.means);
        w.f64s(&scaler.stds);
        w.u64(scaler.fitted_on);
        w.f64(svr.bias);
        w.f64(svr.gamma);
        w.u64(svr.n_support());
        w.f64s(&svr.beta);
        for &i in &svr.support_indices {
            w.u64(i);
        }
        for &v in &svr.support_vectors {
            w.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(w.0)
}

pub fn from_bytes(buf: &[u8]) -> Result<EnsembleModel> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4).ok() != Some(MODEL_MAGIC.as_slice()) {
        return Err(Error::BadMagic { expected: "SVEN" });
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let n = r.count(1)?;
    let config: TrainConfig = serde_json::from_slice(r.take(n)?)
        .map_err(|e| Error::CorruptModel(format!("config: {e}")))?;

    let n_passages = r.u64()?;
    let s = r.count(8)?;
    let overlap = r.f64()?;
    let seed = u64::from_le_bytes(r.array()?);
    let base_shard_size = r.u64()?;
    let mut subsets = Vec::with_capacity(s);
    for _ in 0..s {
        let len = r.count(4)?;
        let subset: Vec<usize> = (0..len)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<_>>()?;
        if subset.iter().any(|&row| row >= n_passages) || subset.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::CorruptModel(
                "subset rows out of range or unsorted".into(),
            ));
        }
        subsets.push(subset);
    }
    let plan = BaggingPlan {
        n_passages,
        s,
        overlap,
        seed,
        base_shard_size,
        subsets,
    };

    let mut members = Vec::with_capacity(s);
    for _ in 0..s {
        let width = r.count(16)?;
        let means = r.f64s(width)?;
        let stds = r.f64s(width)?;
        let fitted_on = r.u64()?;
        let bias = r.f64()?;
        let gamma = r.f64()?;
        let n_sv = r.count(8 + 8 + 4 * width)?;
        let beta = r.f64s(n_sv)?;
        let support_indices = (0..n_sv).map(|_| r.u64()).collect::<Result<_>>()?;
        let support_vectors = r
            .take(n_sv * width * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        let model = SvrModel::from_parts(
            support_vectors,
            width,
            beta,
            bias,
            gamma,
            config.svr.clone(),
            support_indices,
        )
        .map_err(|e| Error::CorruptModel(format!("member: {e}")))?;
        let scaler = FeatureScaler {
            means,
            stds,
            fitted_on,
        };
        members.push(Member { scaler, model });
    }
    if r.pos != buf.len() {
        return Err(Error::CorruptModel(format!(
            "{} trailing bytes",
            buf.len() - r.pos
        )));
    }
    Ok(EnsembleModel {
        plan,
        members,
        config,
        format_version: version,
    })
}

pub fn save_model(model: &EnsembleModel, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<EnsembleModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
