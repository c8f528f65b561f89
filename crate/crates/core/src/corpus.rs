//! Contrastive pretraining corpus: irrelevant-tag filtering, unique tagsets
//! bucketed by their relevant subset, positive pairs and conflict-free batches.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::frame::SdFrame;
use crate::osm::OsmElement;
use crate::rng;
use crate::tags::TagSet;

pub const DEFAULT_IRRELEVANT_TAGS: &str = include_str!("../data/irrelevant_tags.txt");

/// Which tag keys count as irrelevant.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RelevanceConfig {
    pub exact: BTreeSet<String>,
    pub prefixes: Vec<String>,
}

impl RelevanceConfig {
    /// One matcher per line, trailing `*` for a prefix, `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RelevanceConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.chars().any(char::is_whitespace) {
                return Err(Error::data(format!("relevance config line {}: {raw:?}", i + 1)));
            }
            match line.strip_suffix('*') {
                Some(prefix) if !prefix.contains('*') => {
                    if !cfg.prefixes.iter().any(|p| p == prefix) {
                        cfg.prefixes.push(prefix.to_string());
                    }
                }
                None => {
                    cfg.exact.insert(line.to_string());
                }
                Some(_) => return Err(Error::data(format!("relevance config line {}: {raw:?}", i + 1))),
            }
        }
        Ok(cfg)
    }

    pub fn builtin() -> Self {
        Self::parse(DEFAULT_IRRELEVANT_TAGS).expect("bundled relevance config is well formed")
    }

    pub fn is_irrelevant(&self, key: &str) -> bool {
        self.exact.contains(key) || self.prefixes.iter().any(|p| key.starts_with(p.as_str()))
    }

    pub fn relevant_subset(&self, tags: &TagSet) -> TagSet {
        let mut out = tags.clone();
        out.retain(|k, _| !self.is_irrelevant(k));
        out
    }
}

/// Unique tagsets, indexed by their relevant subset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TagsetCorpus {
    pub entries: Vec<TagSet>,
    pub index: BTreeMap<TagSet, Vec<usize>>,
}

impl TagsetCorpus {
    /// Deduplicates non-empty tagsets (sorted for order independence) and
    /// buckets them.
    pub fn build<'a>(tagsets: impl IntoIterator<Item = &'a TagSet>, cfg: &RelevanceConfig) -> Self {
        let unique: BTreeSet<&TagSet> = tagsets.into_iter().filter(|t| !t.is_empty()).collect();
        let entries: Vec<TagSet> = unique.into_iter().cloned().collect();
        let mut index: BTreeMap<TagSet, Vec<usize>> = BTreeMap::new();
        for (i, t) in entries.iter().enumerate() {
            index.entry(cfg.relevant_subset(t)).or_default().push(i);
        }
        TagsetCorpus { entries, index }
    }

    pub fn from_frames(frames: &[SdFrame], cfg: &RelevanceConfig) -> Self {
        Self::build(frames.iter().flat_map(|f| f.elements.iter().map(|e| &e.tags)), cfg)
    }

    pub fn from_elements(elements: &[OsmElement], cfg: &RelevanceConfig) -> Self {
        Self::build(elements.iter().map(|e| &e.tags), cfg)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bucket_count(&self) -> usize {
        self.index.len()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.entries {
            out.push_str(&serde_json::to_string(t).expect("tagsets serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, cfg: &RelevanceConfig) -> Result<Self> {
        let sets = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str::<TagSet>(l).map_err(|e| Error::data(format!("line {}: {e}", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::build(&sets, cfg))
    }
}

/// Anchor/positive pair plus the relevant subset both share.
#[derive(Clone, Debug, PartialEq)]
pub struct PositivePair {
    pub anchor: TagSet,
    pub positive: TagSet,
    pub key: TagSet,
}

/// Draws `per_bucket` pairs from every relevant-subset bucket.
///
/// With `rel_tag_cl` the anchor and positive are drawn with replacement from
/// the bucket's full tagsets. Without it the irrelevant tags are stripped and
/// each pair is the relevant subset twice.
pub fn sample_positive_pairs(
    corpus: &TagsetCorpus,
    per_bucket: usize,
    rel_tag_cl: bool,
    seed: u64,
) -> Result<Vec<PositivePair>> {
    if corpus.is_empty() {
        return Err(Error::contract("cannot sample pairs from an empty corpus"));
    }
    let mut rng = rng::derive(seed, "positive-pairs");
    let mut pairs = Vec::with_capacity(per_bucket * corpus.bucket_count());
    for (key, members) in &corpus.index {
        for _ in 0..per_bucket {
            let pair = if rel_tag_cl {
                let a = members[rng.random_range(0..members.len())];
                let p = members[rng.random_range(0..members.len())];
                PositivePair {
                    anchor: corpus.entries[a].clone(),
                    positive: corpus.entries[p].clone(),
                    key: key.clone(),
                }
            } else {
                PositivePair {
                    anchor: key.clone(),
                    positive: key.clone(),
                    key: key.clone(),
                }
            };
            pairs.push(pair);
        }
    }
    Ok(pairs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveBatch {
    pub anchors: Vec<TagSet>,
    pub positives: Vec<TagSet>,
    pub keys: Vec<TagSet>,
}

impl ContrastiveBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Brute-force check that positives match and in-batch negatives differ.
    pub fn check(&self, cfg: &RelevanceConfig) -> bool {
        let a: Vec<TagSet> = self.anchors.iter().map(|t| cfg.relevant_subset(t)).collect();
        let p: Vec<TagSet> = self.positives.iter().map(|t| cfg.relevant_subset(t)).collect();
        (0..a.len()).all(|i| (0..p.len()).all(|j| (a[i] == p[j]) == (i == j)))
    }
}

/// Shuffles the pairs, then packs each into the first open batch that has
/// room and does not already hold its relevant subset. Batches come out in
/// creation order; batches left with a single pair are discarded.
pub fn make_batches(pairs: &[PositivePair], batch_size: usize, seed: u64) -> Result<Vec<ContrastiveBatch>> {
    if batch_size < 2 {
        return Err(Error::contract(format!(
            "batch size must be at least 2, got {batch_size}"
        )));
    }
    let distinct: HashSet<&TagSet> = pairs.iter().map(|p| &p.key).collect();
    if distinct.len() < 2 {
        return Err(Error::contract(format!(
            "contrastive batches need at least 2 distinct relevant subsets, got {}",
            distinct.len()
        )));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng::derive(seed, "batches"));

    let mut open: Vec<(Vec<usize>, HashSet<&TagSet>)> = Vec::new();
    let mut first_open = 0;
    for i in order {
        let key = &pairs[i].key;
        let slot = (first_open..open.len()).find(|&b| open[b].0.len() < batch_size && !open[b].1.contains(key));
        let b = match slot {
            Some(b) => b,
            None => {
                open.push((Vec::with_capacity(batch_size), HashSet::new()));
                open.len() - 1
            }
        };
        open[b].0.push(i);
        open[b].1.insert(key);
        while first_open < open.len() && open[first_open].0.len() == batch_size {
            first_open += 1;
        }
    }
    Ok(open
        .into_iter()
        .filter(|(members, _)| members.len() >= 2)
        .map(|(members, _)| ContrastiveBatch {
            anchors: members.iter().map(|&i| pairs[i].anchor.clone()).collect(),
            positives: members.iter().map(|&i| pairs[i].positive.clone()).collect(),
            keys: members.iter().map(|&i| pairs[i].key.clone()).collect(),
        })
        .collect())
}


/// Synthetic corpus generator: distinct relevant tagsets, each with variants
/// that differ only in irrelevant tags (names, import ids, sources).
pub mod synthetic {
    use std::collections::BTreeSet;

    use rand::seq::IndexedRandom;
    use rand::Rng as _;

    use crate::rng;
    use crate::tags::TagSet;

    const HIGHWAY: &[&str] = &[
        "motorway",
        "trunk",
        "primary",
        "secondary",
        "tertiary",
        "residential",
        "service",
        "unclassified",
        "living_street",
        "track",
        "footway",
        "cycleway",
    ];
    const OPTIONAL: &[(&str, &[&str])] = &[
        ("lanes", &["1", "2", "3", "4"]),
        ("oneway", &["yes", "no"]),
        ("surface", &["asphalt", "paved", "gravel", "cobblestone"]),
        ("maxspeed", &["30", "50", "70", "100"]),
        ("lit", &["yes", "no"]),
        ("sidewalk", &["both", "left", "right", "none"]),
        ("bridge", &["yes"]),
        ("junction", &["roundabout"]),
        ("access", &["private", "destination"]),
    ];
    const STEMS: &[&str] = &[
        "park", "oak", "maple", "lake", "hill", "river", "church", "mill", "station", "market", "forest", "king",
        "queen", "bridge", "meadow", "spring", "cedar", "pine", "elm", "garden",
    ];
    const SUFFIX: &[&str] = &["street", "avenue", "road", "lane", "drive", "way"];
    const SOURCES: &[&str] = &["survey", "bing", "tiger_import", "gps", "knowledge"];

    /// `buckets` groups of `variants` tagsets. Every group has a distinct
    /// relevant subset; variants inside a group differ in irrelevant tags.
    pub fn grouped(buckets: usize, variants: usize, seed: u64) -> Vec<Vec<TagSet>> {
        let mut rng = rng::derive(seed, "synthetic-tagsets");
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(buckets);
        while out.len() < buckets {
            let mut base = TagSet::new();
            base.insert("highway", *HIGHWAY.choose(&mut rng).expect("non-empty"));
            for (k, vals) in OPTIONAL {
                if rng.random_bool(0.45) {
                    base.insert(*k, *vals.choose(&mut rng).expect("non-empty"));
                }
            }
            if !seen.insert(base.clone()) {
                continue;
            }
            let mut group: Vec<TagSet> = Vec::with_capacity(variants);
            while group.len() < variants {
                let mut t = base.clone();
                let name = format!(
                    "{} {}",
                    STEMS.choose(&mut rng).expect("non-empty"),
                    SUFFIX.choose(&mut rng).expect("non-empty")
                );
                t.insert("name", name);
                if rng.random_bool(0.6) {
                    t.insert("tiger:cfcc", format!("A{}", rng.random_range(11..80)));
                    t.insert("tiger:county", format!("county {}", rng.random_range(1..40)));
                }
                if rng.random_bool(0.5) {
                    t.insert("source", *SOURCES.choose(&mut rng).expect("non-empty"));
                }
                if !group.contains(&t) {
                    group.push(t);
                }
            }
            out.push(group);
        }
        out
    }
}
