//! Seeded six-way partition of a filtered dataset: train / validation / test
//! plus one in-context-example pool paired with each of them.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, Label, SubjectRecord};
use crate::error::{Error, Result};

/// Seeds used for every repeated experiment unless configured otherwise.
pub const DEFAULT_SEEDS: [u64; 6] = [36, 73, 105, 314, 564, 777];

const MIN_BUCKET: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Bucket {
    Test,
    Val,
    Train,
    TrainIcl,
    ValIcl,
    TestIcl,
}

impl Bucket {
    /// Sizing and dealing order.
    pub const ALL: [Bucket; 6] = [
        Bucket::Test,
        Bucket::Val,
        Bucket::Train,
        Bucket::TrainIcl,
        Bucket::ValIcl,
        Bucket::TestIcl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Bucket::Test => "TEST",
            Bucket::Val => "VAL",
            Bucket::Train => "TRAIN",
            Bucket::TrainIcl => "TRAIN_ICL",
            Bucket::ValIcl => "VAL_ICL",
            Bucket::TestIcl => "TEST_ICL",
        }
    }

    pub fn is_icl_pool(self) -> bool {
        matches!(self, Bucket::TrainIcl | Bucket::ValIcl | Bucket::TestIcl)
    }

    /// The example pool that serves targets drawn from this bucket.
    pub fn icl_pool(self) -> Option<Bucket> {
        match self {
            Bucket::Train => Some(Bucket::TrainIcl),
            Bucket::Val => Some(Bucket::ValIcl),
            Bucket::Test => Some(Bucket::TestIcl),
            _ => None,
        }
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Bucket fractions. `train: None` takes whatever the other five leave.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitFractions {
    pub test: f64,
    pub val: f64,
    pub train: Option<f64>,
    pub icl_each: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            test: 0.20,
            val: 0.10,
            train: None,
            icl_each: 36.0 / 333.0,
        }
    }
}

impl SplitFractions {
    pub fn equal_sixths() -> Self {
        let f = 1.0 / 6.0;
        SplitFractions {
            test: f,
            val: f,
            train: Some(f),
            icl_each: f,
        }
    }

    fn resolved(&self) -> Result<[f64; 6]> {
        let fixed = self.test + self.val + 3.0 * self.icl_each;
        let train = self.train.unwrap_or(1.0 - fixed);
        let all = [
            self.test,
            self.val,
            train,
            self.icl_each,
            self.icl_each,
            self.icl_each,
        ];
        if all.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::Config(format!(
                "split fractions must be non-negative: {all:?}"
            )));
        }
        let total: f64 = all.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions sum to {total}, expected 1"
            )));
        }
        Ok(all)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub seed: u64,
    #[serde(default)]
    pub fractions: SplitFractions,
    #[serde(default = "default_true")]
    pub stratify: bool,
}

fn default_true() -> bool {
    true
}

impl SplitConfig {
    pub fn new(seed: u64) -> Self {
        SplitConfig {
            seed,
            fractions: SplitFractions::default(),
            stratify: true,
        }
    }
}

/// Bucket membership for one seed. Members keep dataset order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub buckets: BTreeMap<Bucket, Vec<String>>,
}

impl SplitPlan {
    pub fn members(&self, bucket: Bucket) -> &[String] {
        self.buckets.get(&bucket).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn counts(&self) -> BTreeMap<Bucket, usize> {
        Bucket::ALL.iter().map(|&b| (b, self.members(b).len())).collect()
    }

    pub fn bucket_of(&self, subject_id: &str) -> Option<Bucket> {
        self.buckets
            .iter()
            .find(|(_, ids)| ids.iter().any(|i| i == subject_id))
            .map(|(b, _)| *b)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split plan serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(
            serde_json::to_vec(self).expect("split plan serializes"),
        ))
    }
}

/// Largest-remainder apportionment of `total` items over `weights`
/// (which sum to 1). Ties go to the earlier index.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Per-bucket AD counts whose totals match both the bucket sizes and the
/// class total, each within one subject of its proportional share.
fn stratified_positive_counts(sizes: &[usize], n_ad: usize, n: usize) -> Vec<usize> {
    let quotas: Vec<f64> = sizes.iter().map(|&s| s as f64 * n_ad as f64 / n as f64).collect();
    let mut ad: Vec<usize> = quotas
        .iter()
        .zip(sizes)
        .map(|(q, &s)| (q.floor() as usize).min(s))
        .collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut remaining = n_ad - ad.iter().sum::<usize>();
    for &i in order.iter().cycle().take(order.len() * 2) {
        if remaining == 0 {
            break;
        }
        if ad[i] < sizes[i] {
            ad[i] += 1;
            remaining -= 1;
        }
    }
    ad
}

pub fn make_split(d: &Dataset, cfg: &SplitConfig) -> Result<SplitPlan> {
    let weights = cfg.fractions.resolved()?;
    let n = d.len();
    let sizes = apportion(n, &weights);
    if let Some((i, size)) = sizes.iter().enumerate().find(|(_, s)| **s < MIN_BUCKET) {
        return Err(Error::Sizing {
            bucket: Bucket::ALL[i].name().to_string(),
            reason: format!("{size} of {n} subjects allotted, at least {MIN_BUCKET} required"),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); Bucket::ALL.len()];
    if cfg.stratify {
        let mut cn: Vec<usize> = Vec::new();
        let mut ad: Vec<usize> = Vec::new();
        for (i, s) in d.subjects().iter().enumerate() {
            match s.label {
                Some(Label::Ad) => ad.push(i),
                _ => cn.push(i),
            }
        }
        cn.shuffle(&mut rng);
        ad.shuffle(&mut rng);
        let ad_counts = stratified_positive_counts(&sizes, ad.len(), n);
        let (mut cn_iter, mut ad_iter) = (cn.into_iter(), ad.into_iter());
        for (b, (&size, &n_ad)) in sizes.iter().zip(&ad_counts).enumerate() {
            assigned[b].extend(ad_iter.by_ref().take(n_ad));
            assigned[b].extend(cn_iter.by_ref().take(size - n_ad));
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        let mut it = all.into_iter();
        for (b, &size) in sizes.iter().enumerate() {
            assigned[b].extend(it.by_ref().take(size));
        }
    }

    let buckets = Bucket::ALL
        .iter()
        .zip(assigned)
        .map(|(&b, mut idx)| {
            idx.sort_unstable();
            let ids = idx
                .into_iter()
                .map(|i| d.subjects()[i].subject_id.clone())
                .collect();
            (b, ids)
        })
        .collect();
    Ok(SplitPlan {
        seed: cfg.seed,
        buckets,
    })
}

fn icl_rng(seed: u64, pool: Bucket, target_id: &str, replicate: u32) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(pool.name().as_bytes());
    h.update([0x1f]);
    h.update(target_id.as_bytes());
    h.update(replicate.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Draws `k` distinct pool members uniformly without replacement. The draw
/// is a pure function of `(seed, pool, target_id, k)` and is returned in
/// draw order.
pub fn sample_icl<'a>(
    plan: &SplitPlan,
    d: &'a Dataset,
    pool: Bucket,
    k: usize,
    target_id: &str,
    seed: u64,
) -> Result<Vec<&'a SubjectRecord>> {
    sample_icl_replicate(plan, d, pool, k, target_id, seed, 0)
}

/// Like [`sample_icl`], with an extra replicate index so one target can get
/// several independent draws.
pub fn sample_icl_replicate<'a>(
    plan: &SplitPlan,
    d: &'a Dataset,
    pool: Bucket,
    k: usize,
    target_id: &str,
    seed: u64,
    replicate: u32,
) -> Result<Vec<&'a SubjectRecord>> {
    let members = plan.members(pool);
    if k > members.len() {
        return Err(Error::Sampling(format!(
            "k={k} exceeds {pool} pool size {}",
            members.len()
        )));
    }
    if members.iter().any(|m| m == target_id) {
        return Err(Error::Sampling(format!(
            "target {target_id} is a member of its own example pool {pool}"
        )));
    }
    let mut rng = icl_rng(seed, pool, target_id, replicate);
    let mut idx: Vec<usize> = (0..members.len()).collect();
    for i in 0..k {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    idx[..k]
        .iter()
        .map(|&i| {
            d.get(&members[i])
                .ok_or_else(|| Error::Sampling(format!("pool member {} not in dataset", members[i])))
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisjointReport {
    /// Subjects assigned to more than one bucket (or twice to one).
    pub duplicated: Vec<String>,
    /// Dataset subjects with no bucket.
    pub unassigned: Vec<String>,
    /// Plan entries that are not dataset subjects.
    pub unknown: Vec<String>,
}

impl DisjointReport {
    pub fn passed(&self) -> bool {
        self.duplicated.is_empty() && self.unassigned.is_empty() && self.unknown.is_empty()
    }
}

pub fn verify_disjoint(plan: &SplitPlan, d: &Dataset) -> DisjointReport {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for ids in plan.buckets.values() {
        for id in ids {
            *seen.entry(id.as_str()).or_default() += 1;
        }
    }
    let mut report = DisjointReport::default();
    for s in d.subjects() {
        match seen.get(s.subject_id.as_str()) {
            None => report.unassigned.push(s.subject_id.clone()),
            Some(&c) if c > 1 => report.duplicated.push(s.subject_id.clone()),
            _ => {}
        }
    }
    let mut unknown: Vec<String> = seen
        .keys()
        .filter(|id| d.get(id).is_none())
        .map(|id| id.to_string())
        .collect();
    unknown.sort();
    report.unknown = unknown;
    report
}
