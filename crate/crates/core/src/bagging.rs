//! Overlapping partitions of the passage index space.
//!
//! Rows `0..n` are shuffled with a seeded ChaCha8 stream and cut into `s`
//! contiguous base shards of `ceil(n / s)` rows (the last one takes the
//! remainder). Each subset is its base shard plus `floor(overlap * |shard|)`
//! rows drawn uniformly without replacement from outside the shard, using the
//! same stream in shard order. Subsets are stored sorted.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusIndex, RelevanceJudgments};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaggingPlan {
    pub n_passages: usize,
    pub s: usize,
    pub overlap: f64,
    pub seed: u64,
    pub base_shard_size: usize,
    pub subsets: Vec<Vec<usize>>,
}

/// Number of extra rows a shard of `shard_len` receives.
pub fn overlap_count(shard_len: usize, overlap: f64, complement: usize) -> usize {
    ((overlap * shard_len as f64).floor() as usize).min(complement)
}

pub fn make_plan(n_passages: usize, s: usize, overlap: f64, seed: u64) -> Result<BaggingPlan> {
    if s == 0 || s > n_passages {
        return Err(Error::InvalidParams(format!(
            "need 1 <= s <= n_passages, got s = {s}, n_passages = {n_passages}"
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidParams(format!(
            "overlap must be in [0, 1), got {overlap}"
        )));
    }
    let base = n_passages.div_ceil(s);
    if (s - 1) * base >= n_passages {
        return Err(Error::InvalidParams(format!(
            "{s} shards of {base} rows leave the last shard empty for n_passages = {n_passages}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n_passages).collect();
    order.shuffle(&mut rng);

    let mut subsets = Vec::with_capacity(s);
    for shard in 0..s {
        let start = shard * base;
        let end = ((shard + 1) * base).min(n_passages);
        let complement = n_passages - (end - start);
        let extra = overlap_count(end - start, overlap, complement);
        let mut subset: Vec<usize> = order[start..end].to_vec();
        for pos in index::sample(&mut rng, complement, extra) {
            // complement = order[..start] ++ order[end..]
            let row = if pos < start {
                order[pos]
            } else {
                order[pos + (end - start)]
            };
            subset.push(row);
        }
        subset.sort_unstable();
        subsets.push(subset);
    }
    Ok(BaggingPlan {
        n_passages,
        s,
        overlap,
        seed,
        base_shard_size: base,
        subsets,
    })
}

impl BaggingPlan {
    /// Expected size of subset `j` under the construction rule.
    pub fn expected_len(&self, j: usize) -> usize {
        let start = j * self.base_shard_size;
        let shard = ((j + 1) * self.base_shard_size).min(self.n_passages) - start;
        shard + overlap_count(shard, self.overlap, self.n_passages - shard)
    }

    /// Subsets containing each row, ascending.
    pub fn memberships(&self) -> Vec<Vec<usize>> {
        let mut member = vec![Vec::new(); self.n_passages];
        for (j, subset) in self.subsets.iter().enumerate() {
            for &row in subset {
                member[row].push(j);
            }
        }
        member
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

/// Query id → subsets holding at least one of its relevant passages.
pub fn assign_queries(
    plan: &BaggingPlan,
    qrels: &RelevanceJudgments,
    index: &CorpusIndex,
) -> Result<BTreeMap<String, Vec<usize>>> {
    let membership = plan.memberships();
    let mut out = BTreeMap::new();
    for (qid, rel) in qrels.iter() {
        let mut subsets: Vec<usize> = Vec::new();
        for pid in rel {
            let row = index
                .row_of(pid)
                .ok_or_else(|| Error::UnknownId(pid.clone()))?;
            let m = membership
                .get(row)
                .ok_or_else(|| Error::UnknownId(pid.clone()))?;
            subsets.extend(m);
        }
        subsets.sort_unstable();
        subsets.dedup();
        out.insert(qid.clone(), subsets);
    }
    Ok(out)
}
