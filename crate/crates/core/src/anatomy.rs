//! Valid sentence-anatomy subset discovery and dropout sampling.
//!
//! Sentences are nodes in a graph; an edge joins two sentences whose region
//! sets overlap. The connected components of that graph are the valid
//! sentence-anatomy subsets: selecting a component's regions as input and
//! its sentences as target satisfies both dropout conditions (the target
//! holds every sentence describing the selected regions, and every region
//! described by the target is selected). The fixed-point grouping is
//! realized here as union-find over region/sentence incidence.

use crate::corpus::AnnotatedReport;
use crate::seed::rng_from_seed;
use crate::vocab::RegionVocabulary;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, thiserror::Error)]
pub enum AnatomyError {
    #[error("report `{report_id}` has no localized sentences to partition")]
    EmptyPartition { report_id: String },
    #[error("partition subset {subset} references sentence index {index} not in report `{report_id}`")]
    BadSentenceIndex {
        report_id: String,
        subset: usize,
        index: usize,
    },
}

/// One valid sentence-anatomy subset: a connected component of the overlap
/// graph, with its sentence indices, the union of their region sets, and the
/// in-order concatenation of their texts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetEntry {
    pub pair_indices: BTreeSet<usize>,
    pub regions: BTreeSet<String>,
    pub target_text: String,
}

/// The full set of valid subsets for one report, plus the indices of
/// unlocalized sentences, which belong to no subset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidPartition {
    pub report_id: String,
    pub subsets: Vec<SubsetEntry>,
    #[serde(default)]
    pub unlocalized: Vec<usize>,
}

impl ValidPartition {
    pub fn subset_count(&self) -> usize {
        self.subsets.len()
    }
}

/// Disjoint-set forest with union by size and path halving.
struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(len: usize) -> Self {
        Self {
            parent: (0..len).collect(),
            size: vec![1; len],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra == rb {
            return;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[small] = big;
        self.size[big] += self.size[small];
    }
}

/// Groups a report's sentences into valid sentence-anatomy subsets.
///
/// Two sentences land in the same subset iff they are connected through a
/// chain of shared regions. Unlocalized sentences are listed separately.
/// Subsets are ordered by their smallest sentence index; an empty report
/// yields an empty partition.
pub fn find_valid_subsets(report: &AnnotatedReport) -> ValidPartition {
    let n = report.pairs.len();
    let mut uf = UnionFind::new(n);
    let mut region_owner: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, pair) in report.pairs.iter().enumerate() {
        for region in &pair.regions {
            match region_owner.get(region.as_str()) {
                Some(&owner) => uf.union(i, owner),
                None => {
                    region_owner.insert(region, i);
                }
            }
        }
    }

    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut unlocalized = Vec::new();
    for (i, pair) in report.pairs.iter().enumerate() {
        if pair.is_unlocalized() {
            unlocalized.push(pair.sentence_index);
            continue;
        }
        let root = uf.find(i);
        components.entry(root).or_default().push(i);
    }

    // Order components by smallest member; members are already ascending.
    let mut groups: Vec<Vec<usize>> = components.into_values().collect();
    groups.sort_by_key(|members| members[0]);

    let subsets = groups
        .into_iter()
        .map(|members| {
            let pair_indices: BTreeSet<usize> = members
                .iter()
                .map(|&i| report.pairs[i].sentence_index)
                .collect();
            let regions: BTreeSet<String> = members
                .iter()
                .flat_map(|&i| report.pairs[i].regions.iter().cloned())
                .collect();
            let texts: Vec<&str> = members
                .iter()
                .map(|&i| report.pairs[i].text.as_str())
                .collect();
            SubsetEntry {
                pair_indices,
                regions,
                target_text: texts.join(" "),
            }
        })
        .collect();

    ValidPartition {
        report_id: report.report_id.clone(),
        subsets,
        unlocalized,
    }
}

/// Outcome of [`validate_partition`]: overall verdict plus one diagnostic
/// per violation, naming the condition and the offending sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionValidation {
    pub valid: bool,
    pub violations: Vec<String>,
}

/// Checks the two dropout conditions against a report.
///
/// C1: for each subset, every report sentence whose region set intersects
/// the subset's regions is inside the subset. C2: each subset's regions
/// equal exactly the union of its sentences' regions.
pub fn validate_partition(
    report: &AnnotatedReport,
    partition: &ValidPartition,
) -> Result<PartitionValidation, AnatomyError> {
    let by_index: BTreeMap<usize, &crate::corpus::SentenceAnatomyPair> = report
        .pairs
        .iter()
        .map(|p| (p.sentence_index, p))
        .collect();
    let mut violations = Vec::new();

    for (k, subset) in partition.subsets.iter().enumerate() {
        for &index in &subset.pair_indices {
            if !by_index.contains_key(&index) {
                return Err(AnatomyError::BadSentenceIndex {
                    report_id: report.report_id.clone(),
                    subset: k,
                    index,
                });
            }
        }

        // C1: closure under region overlap.
        for pair in &report.pairs {
            let touches = pair.regions.iter().any(|r| subset.regions.contains(r));
            if touches && !subset.pair_indices.contains(&pair.sentence_index) {
                violations.push(format!(
                    "C1 violated by subset {k}: sentence {} describes {:?} but is outside the subset",
                    pair.sentence_index,
                    pair.regions.iter().collect::<Vec<_>>()
                ));
            }
        }

        // C2: declared regions match the union over member sentences.
        let union: BTreeSet<String> = subset
            .pair_indices
            .iter()
            .flat_map(|i| by_index[i].regions.iter().cloned())
            .collect();
        if union != subset.regions {
            violations.push(format!(
                "C2 violated by subset {k}: declared regions differ from the union of its sentences"
            ));
        }
    }

    Ok(PartitionValidation {
        valid: violations.is_empty(),
        violations,
    })
}

/// Knobs for [`sample_dropout`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DropoutOptions {
    /// Probability of forcing the full-report case before the two-stage
    /// draw. 0.0 keeps the pure uniform scheme.
    pub full_report_probability: f64,
}

impl Default for DropoutOptions {
    fn default() -> Self {
        Self {
            full_report_probability: 0.0,
        }
    }
}

/// One training instance produced by sentence-anatomy dropout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutSample {
    pub report_id: String,
    /// Regions whose tokens stay in the input. The whole vocabulary for the
    /// full-report case, otherwise the union of the selected subsets.
    pub a_target: BTreeSet<String>,
    /// Per-region keep flag in vocabulary order (`true` = in `a_target`).
    pub input_mask: Vec<bool>,
    pub target_text: String,
    pub selected_subsets: BTreeSet<usize>,
    /// Set when every subset was selected: the target regresses to the full
    /// report, including unlocalized sentences, and `a_target` widens to the
    /// entire vocabulary.
    pub is_full_report: bool,
}

/// Draws one dropout sample from a report's valid partition.
///
/// Stage one draws the selection size m uniformly from {1..K}; stage two
/// draws a uniform m-subset of the valid subsets without replacement. Under
/// this law each subset is included with probability (K+1)/(2K). When m = K
/// the sample is the full report: all sentences (unlocalized included, in
/// report order) and `a_target` = the whole vocabulary.
pub fn sample_dropout(
    report: &AnnotatedReport,
    partition: &ValidPartition,
    vocab: &RegionVocabulary,
    rng_seed: u64,
    options: &DropoutOptions,
) -> Result<DropoutSample, AnatomyError> {
    let k = partition.subsets.len();
    if k == 0 {
        return Err(AnatomyError::EmptyPartition {
            report_id: partition.report_id.clone(),
        });
    }
    let mut rng = rng_from_seed(rng_seed);

    let forced_full = options.full_report_probability > 0.0
        && rng.random::<f64>() < options.full_report_probability;
    let m = if forced_full {
        k
    } else {
        rng.random_range(1..=k)
    };

    // Partial Fisher-Yates: the first m slots are a uniform m-subset.
    let mut indices: Vec<usize> = (0..k).collect();
    for i in 0..m {
        let j = rng.random_range(i..k);
        indices.swap(i, j);
    }
    let selected: BTreeSet<usize> = indices[..m].iter().copied().collect();

    if m == k {
        return Ok(full_report_sample(report, partition, vocab));
    }

    let a_target: BTreeSet<String> = selected
        .iter()
        .flat_map(|&s| partition.subsets[s].regions.iter().cloned())
        .collect();
    let mut member_indices: Vec<usize> = selected
        .iter()
        .flat_map(|&s| partition.subsets[s].pair_indices.iter().copied())
        .collect();
    member_indices.sort_unstable();
    let by_index: BTreeMap<usize, &str> = report
        .pairs
        .iter()
        .map(|p| (p.sentence_index, p.text.as_str()))
        .collect();
    let texts: Vec<&str> = member_indices.iter().map(|i| by_index[i]).collect();

    Ok(DropoutSample {
        report_id: report.report_id.clone(),
        input_mask: build_mask(vocab, &a_target),
        a_target,
        target_text: texts.join(" "),
        selected_subsets: selected,
        is_full_report: false,
    })
}

fn full_report_sample(
    report: &AnnotatedReport,
    partition: &ValidPartition,
    vocab: &RegionVocabulary,
) -> DropoutSample {
    let a_target: BTreeSet<String> = vocab.iter().map(str::to_string).collect();
    DropoutSample {
        report_id: report.report_id.clone(),
        input_mask: vec![true; vocab.len()],
        a_target,
        target_text: report.joined_sentences(),
        selected_subsets: (0..partition.subsets.len()).collect(),
        is_full_report: true,
    }
}

fn build_mask(vocab: &RegionVocabulary, a_target: &BTreeSet<String>) -> Vec<bool> {
    vocab.iter().map(|name| a_target.contains(name)).collect()
}

/// Mechanical validity check for a dropout sample.
///
/// Partial samples must satisfy C1 (the target holds exactly the sentences
/// whose regions intersect `a_target`) and C2 (`a_target` equals the union
/// of the target sentences' regions). Full-report samples must carry every
/// sentence and the entire vocabulary. Returns the violations found.
pub fn check_dropout_sample(
    report: &AnnotatedReport,
    sample: &DropoutSample,
    vocab: &RegionVocabulary,
) -> Vec<String> {
    let mut violations = Vec::new();

    if sample.input_mask.len() != vocab.len() {
        violations.push(format!(
            "input mask has {} entries for a {}-region vocabulary",
            sample.input_mask.len(),
            vocab.len()
        ));
        return violations;
    }
    for (i, name) in vocab.iter().enumerate() {
        if sample.input_mask[i] != sample.a_target.contains(name) {
            violations.push(format!("input mask disagrees with a_target at region `{name}`"));
        }
    }

    if sample.is_full_report {
        if sample.a_target.len() != vocab.len() {
            violations.push("full-report sample does not select the whole vocabulary".into());
        }
        if sample.target_text != report.joined_sentences() {
            violations.push("full-report target is not the whole report".into());
        }
        return violations;
    }

    let mut expected_indices: Vec<usize> = report
        .pairs
        .iter()
        .filter(|p| p.regions.iter().any(|r| sample.a_target.contains(r)))
        .map(|p| p.sentence_index)
        .collect();
    expected_indices.sort_unstable();
    let by_index: BTreeMap<usize, &str> = report
        .pairs
        .iter()
        .map(|p| (p.sentence_index, p.text.as_str()))
        .collect();
    let expected_text = expected_indices
        .iter()
        .map(|i| by_index[i])
        .collect::<Vec<_>>()
        .join(" ");
    if sample.target_text != expected_text {
        violations.push(
            "C1 violated: target text differs from the sentences describing a_target".into(),
        );
    }

    let union: BTreeSet<String> = report
        .pairs
        .iter()
        .filter(|p| expected_indices.contains(&p.sentence_index))
        .flat_map(|p| p.regions.iter().cloned())
        .collect();
    if union != sample.a_target {
        violations.push("C2 violated: a_target differs from the union of target regions".into());
    }

    violations
}

/// One partial-report evaluation instance: a subset's regions as input and
/// its sentences as the expected output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialEvalInstance {
    pub report_id: String,
    pub regions: BTreeSet<String>,
    pub target_text: String,
}

/// Expands test reports into partial-report evaluation instances, one per
/// valid subset per report.
pub fn build_partial_eval_set(test_reports: &[AnnotatedReport]) -> Vec<PartialEvalInstance> {
    let mut instances = Vec::new();
    for report in test_reports {
        let partition = find_valid_subsets(report);
        for subset in partition.subsets {
            instances.push(PartialEvalInstance {
                report_id: report.report_id.clone(),
                regions: subset.regions,
                target_text: subset.target_text,
            });
        }
    }
    instances
}
