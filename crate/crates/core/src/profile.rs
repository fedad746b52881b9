//! Value profiles filled by injected sampling statements.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

pub const DEFAULT_CAPACITY: usize = 1024;
pub const MAX_BUCKETS: usize = 256;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProfileError {
    #[error("profile `{0}` is a histogram; frequency query not supported")]
    NotFrequency(String),
    #[error("no profile for `{0}`")]
    Missing(String),
}

/// Bounded value→count map with min-count eviction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    capacity: usize,
    counts: HashMap<i64, u64>,
    /// Last output seen per key, for input/output pair profiles.
    outputs: HashMap<i64, i64>,
    /// Keys whose observed outputs disagreed.
    conflicting: Vec<i64>,
}

impl FrequencyTable {
    pub fn new(capacity: usize) -> Self {
        FrequencyTable {
            capacity: capacity.max(1),
            counts: HashMap::new(),
            outputs: HashMap::new(),
            conflicting: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn count(&self, v: i64) -> u64 {
        self.counts.get(&v).copied().unwrap_or(0)
    }

    pub fn record(&mut self, v: i64) {
        *self.counts.entry(v).or_insert(0) += 1;
        if self.counts.len() > self.capacity {
            // Minimum count wins eviction; on ties an older entry goes
            // before the key just inserted, then the smaller value.
            let victim = self
                .counts
                .iter()
                .map(|(&k, &c)| (c, k == v, k))
                .min()
                .map(|(_, _, k)| k)
                .expect("table is nonempty");
            self.counts.remove(&victim);
            self.outputs.remove(&victim);
        }
    }

    pub fn record_pair(&mut self, key: i64, out: i64) {
        self.record(key);
        if !self.counts.contains_key(&key) {
            return;
        }
        if let Some(prev) = self.outputs.insert(key, out) {
            if prev != out && !self.conflicting.contains(&key) {
                self.conflicting.push(key);
            }
        }
    }

    pub fn output(&self, key: i64) -> Option<i64> {
        self.outputs.get(&key).copied()
    }

    pub fn is_conflicting(&self, key: i64) -> bool {
        self.conflicting.contains(&key)
    }

    /// Highest counts first, ties broken by ascending value.
    pub fn top_n(&self, n: usize) -> Vec<(i64, u64)> {
        let mut all: Vec<(i64, u64)> = self.counts.iter().map(|(&k, &c)| (k, c)).collect();
        all.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        all.truncate(n);
        all
    }

    pub fn entries(&self) -> BTreeMap<i64, u64> {
        self.counts.iter().map(|(&k, &c)| (k, c)).collect()
    }

    /// Op cost charged by the interpreter for one record: a hashed map
    /// update modeled as a probe sequence over the current size.
    pub fn record_cost(&self) -> u64 {
        2 + (usize::BITS - self.counts.len().leading_zeros()) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub lo: i64,
    pub hi: i64,
    buckets: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: i64, hi: i64) -> Self {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let span = (hi as i128 - lo as i128 + 1) as u128;
        let n = span.min(MAX_BUCKETS as u128) as usize;
        Histogram {
            lo,
            hi,
            buckets: vec![0; n],
        }
    }

    pub fn bucket_of(&self, v: i64) -> usize {
        let v = v.clamp(self.lo, self.hi);
        let span = self.hi as i128 - self.lo as i128 + 1;
        ((v as i128 - self.lo as i128) * self.buckets.len() as i128 / span) as usize
    }

    pub fn record(&mut self, v: i64) {
        let b = self.bucket_of(v);
        self.buckets[b] += 1;
    }

    pub fn buckets(&self) -> &[u64] {
        &self.buckets
    }

    pub fn total(&self) -> u64 {
        self.buckets.iter().sum()
    }

    /// Inclusive value range covered by bucket `i`.
    pub fn bucket_range(&self, i: usize) -> (i64, i64) {
        let span = self.hi as i128 - self.lo as i128 + 1;
        let n = self.buckets.len() as i128;
        let first = |b: i128| self.lo as i128 + (b * span + n - 1) / n;
        (first(i as i128) as i64, (first(i as i128 + 1) - 1) as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProfileKind {
    Frequency(FrequencyTable),
    Histogram(Histogram),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValueProfile {
    pub kind: ProfileKind,
    pub every_k: u64,
    samples_taken: u64,
    evaluations: u64,
}

impl ValueProfile {
    pub fn frequency(every_k: u64) -> Self {
        Self::with_kind(
            ProfileKind::Frequency(FrequencyTable::new(DEFAULT_CAPACITY)),
            every_k,
        )
    }

    pub fn frequency_with_capacity(every_k: u64, capacity: usize) -> Self {
        Self::with_kind(
            ProfileKind::Frequency(FrequencyTable::new(capacity)),
            every_k,
        )
    }

    pub fn histogram(lo: i64, hi: i64, every_k: u64) -> Self {
        Self::with_kind(ProfileKind::Histogram(Histogram::new(lo, hi)), every_k)
    }

    fn with_kind(kind: ProfileKind, every_k: u64) -> Self {
        ValueProfile {
            kind,
            every_k: every_k.max(1),
            samples_taken: 0,
            evaluations: 0,
        }
    }

    pub fn samples_taken(&self) -> u64 {
        self.samples_taken
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    /// Counts one dynamic evaluation; true if this one is sampled.
    /// Evaluations 0, k, 2k, ... are sampled, giving ⌈n/k⌉ samples.
    pub fn tick(&mut self) -> bool {
        let hit = self.evaluations.is_multiple_of(self.every_k);
        self.evaluations += 1;
        hit
    }

    pub fn record(&mut self, v: i64) {
        self.samples_taken += 1;
        match &mut self.kind {
            ProfileKind::Frequency(t) => t.record(v),
            ProfileKind::Histogram(h) => h.record(v),
        }
    }

    pub fn record_pair(&mut self, key: i64, out: i64) {
        self.samples_taken += 1;
        match &mut self.kind {
            ProfileKind::Frequency(t) => t.record_pair(key, out),
            ProfileKind::Histogram(h) => h.record(key),
        }
    }

    /// Ops charged for one record into this profile.
    pub fn record_cost(&self) -> u64 {
        match &self.kind {
            ProfileKind::Frequency(t) => t.record_cost(),
            ProfileKind::Histogram(_) => 1,
        }
    }

    pub fn as_frequency(&self) -> Option<&FrequencyTable> {
        match &self.kind {
            ProfileKind::Frequency(t) => Some(t),
            ProfileKind::Histogram(_) => None,
        }
    }

    pub fn as_histogram(&self) -> Option<&Histogram> {
        match &self.kind {
            ProfileKind::Histogram(h) => Some(h),
            ProfileKind::Frequency(_) => None,
        }
    }

    pub fn top_n(&self, label: &str, n: usize) -> Result<Vec<(i64, u64)>, ProfileError> {
        self.as_frequency()
            .map(|t| t.top_n(n))
            .ok_or_else(|| ProfileError::NotFrequency(label.to_string()))
    }
}

/// Profiles keyed by specialization-point label.
pub type Profiles = BTreeMap<String, ValueProfile>;

/// The value covering at least `share` of all samples, if any.
pub fn dominant_value(profile: &ValueProfile, share: f64) -> Option<i64> {
    let t = profile.as_frequency()?;
    let total = profile.samples_taken();
    if total == 0 {
        return None;
    }
    let (v, c) = *t.top_n(1).first()?;
    (c as f64 >= share * total as f64).then_some(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_repeated_values() {
        let mut p = ValueProfile::frequency(1);
        for v in [7, 7, 7, 9] {
            p.record(v);
        }
        assert_eq!(
            p.as_frequency().unwrap().entries(),
            BTreeMap::from([(7, 3), (9, 1)])
        );
    }

    #[test]
    fn histogram_bucket_index() {
        let mut p = ValueProfile::histogram(1, 8, 1);
        p.record(3);
        let h = p.as_histogram().unwrap();
        assert_eq!(h.buckets().len(), 8);
        assert_eq!(h.buckets()[2], 1);
    }

    #[test]
    fn histogram_clamps_and_caps_buckets() {
        let mut h = Histogram::new(0, 9999);
        assert_eq!(h.buckets().len(), MAX_BUCKETS);
        h.record(-5);
        h.record(1_000_000);
        assert_eq!(h.buckets()[0], 1);
        assert_eq!(h.buckets()[MAX_BUCKETS - 1], 1);
        assert_eq!(h.bucket_range(0).0, 0);
        assert_eq!(h.bucket_range(MAX_BUCKETS - 1).1, 9999);
    }

    #[test]
    fn eviction_keeps_heavy_hitters() {
        let mut t = FrequencyTable::new(2);
        for v in std::iter::repeat_n(1, 5)
            .chain(std::iter::repeat_n(2, 3))
            .chain([3])
        {
            t.record(v);
        }
        assert_eq!(t.entries(), BTreeMap::from([(1, 5), (2, 3)]));
    }

    #[test]
    fn eviction_tie_prefers_older_entry() {
        let mut t = FrequencyTable::new(2);
        t.record(1);
        t.record(2);
        t.record(3);
        assert_eq!(t.entries(), BTreeMap::from([(2, 1), (3, 1)]));
    }

    #[test]
    fn top_n_ordering() {
        let mut t = FrequencyTable::new(16);
        for v in [5, 5, 5, 5, 5, 3, 3, 3, 1, 4, 4, 4] {
            t.record(v);
        }
        assert_eq!(t.top_n(2), vec![(5, 5), (3, 3)]);
        assert_eq!(t.top_n(3), vec![(5, 5), (3, 3), (4, 3)]);
        assert!(FrequencyTable::new(4).top_n(4).is_empty());
    }

    #[test]
    fn top_n_rejects_histograms() {
        let p = ValueProfile::histogram(0, 3, 1);
        assert!(matches!(
            p.top_n("b", 1),
            Err(ProfileError::NotFrequency(_))
        ));
    }

    #[test]
    fn every_k_sampling_counts() {
        let mut p = ValueProfile::frequency(10);
        for i in 0..100 {
            if p.tick() {
                p.record(i);
            }
        }
        assert_eq!(p.samples_taken(), 10);
        let mut q = ValueProfile::frequency(7);
        for i in 0..100 {
            if q.tick() {
                q.record(i);
            }
        }
        assert_eq!(q.samples_taken(), 15);
    }

    #[test]
    fn conflicting_pairs_flagged() {
        let mut t = FrequencyTable::new(8);
        t.record_pair(1, 10);
        t.record_pair(1, 10);
        t.record_pair(2, 20);
        t.record_pair(2, 21);
        assert!(!t.is_conflicting(1));
        assert!(t.is_conflicting(2));
        assert_eq!(t.output(1), Some(10));
    }

    #[test]
    fn histogram_cheaper_than_frequency() {
        let h = ValueProfile::histogram(1, 64, 1);
        let mut f = ValueProfile::frequency(1);
        assert!(h.record_cost() < f.record_cost());
        (0..500).for_each(|v| f.record(v));
        assert!(h.record_cost() < f.record_cost());
    }

    #[test]
    fn dominant_value_threshold() {
        let mut p = ValueProfile::frequency(1);
        (0..7).for_each(|_| p.record(256));
        (0..3).for_each(|v| p.record(v));
        assert_eq!(dominant_value(&p, 0.70), Some(256));
        p.record(9);
        assert_eq!(dominant_value(&p, 0.70), None);
    }
}
