use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::QASample;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Scene-level train/val/test partition. Each list is sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSplit {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SceneSplit {
    pub fn scenes(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Samples whose scene belongs to `split`, in input order.
    pub fn filter<'a>(&self, samples: &'a [QASample], split: Split) -> Vec<&'a QASample> {
        let keep: HashSet<&str> = self.scenes(split).iter().map(String::as_str).collect();
        samples.iter().filter(|s| keep.contains(s.scene_id.as_str())).collect()
    }
}

/// Bucket sizes by largest remainder, then at least one scene for every
/// bucket with a non-zero fraction (taken from the currently largest bucket).
fn bucket_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    let quotas = fractions.map(|f| f * n as f64);
    let mut sizes = quotas.map(|q| q.floor() as usize);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let assigned: usize = sizes.iter().sum();
    for &i in order.iter().take(n - assigned) {
        sizes[i] += 1;
    }
    let nonzero = fractions.iter().filter(|&&f| f > 0.0).count();
    if n < nonzero {
        return Err(Error::data(format!(
            "{n} scenes cannot fill {nonzero} non-empty splits"
        )));
    }
    for i in 0..3 {
        if fractions[i] > 0.0 && sizes[i] == 0 {
            let donor = (0..3)
                .max_by_key(|&j| (sizes[j], std::cmp::Reverse(j)))
                .expect("three buckets");
            sizes[donor] -= 1;
            sizes[i] += 1;
        }
    }
    Ok(sizes)
}

/// Shuffles the distinct scene ids with `seed` and cuts them into
/// train/val/test by `fractions`. Every frame of a scene lands in one bucket.
pub fn split_scenes(samples: &[QASample], fractions: [f64; 3], seed: u64) -> Result<SceneSplit> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let mut scenes: Vec<String> = samples
        .iter()
        .map(|s| s.scene_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let sizes = bucket_sizes(scenes.len(), fractions)?;
    SeededRng::new(seed).shuffle(&mut scenes);
    let mut rest = scenes.into_iter();
    let mut take = |k: usize| {
        let mut v: Vec<String> = rest.by_ref().take(k).collect();
        v.sort();
        v
    };
    Ok(SceneSplit {
        seed,
        train: take(sizes[0]),
        val: take(sizes[1]),
        test: take(sizes[2]),
    })
}
