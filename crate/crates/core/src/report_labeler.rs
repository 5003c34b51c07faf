//! Rule-based extraction of (abnormality, location) labels from report text.
//!
//! A report sentence is split into phrases, each classified as normal or
//! abnormal by cue words. Abnormal phrases are searched for abnormality
//! synonyms and location terms from an editable JSON vocabulary. Labels are
//! stored as a binary matrix over base concepts and locations; the 80 model
//! labels and the 131-way right/left split vector are derived from it.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::anatomy::Location;
use crate::error::{Error, Result};

pub const VOCAB_SCHEMA_VERSION: u32 = 1;

const BUILTIN_VOCAB: &str = include_str!("../data/vocabulary.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelGroup {
    Lung,
    Mediastinum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhraseKind {
    Normal,
    Abnormal,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct LocationEntry {
    id: Location,
    terms: Vec<String>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct Laterality {
    right: Vec<String>,
    left: Vec<String>,
    #[serde(default)]
    both: Vec<String>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct NormalCues {
    leading: Vec<String>,
    trailing: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConceptEntry {
    pub id: String,
    pub synonyms: Vec<String>,
    #[serde(default)]
    pub implied_location: Option<Location>,
    #[serde(default)]
    pub source: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LabelEntry {
    pub name: String,
    pub concept: String,
    pub group: LabelGroup,
    /// Fixed location of a mediastinal label (heart, great vessel or
    /// mediastinum). Lung labels leave this empty.
    #[serde(default)]
    pub location: Option<Location>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct VocabFile {
    schema_version: u32,
    #[serde(default)]
    note: Option<String>,
    locations: Vec<LocationEntry>,
    laterality: Laterality,
    normal_cues: NormalCues,
    concepts: Vec<ConceptEntry>,
    labels: Vec<LabelEntry>,
}

/// Abnormality and location vocabularies plus the label list.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    concepts: Vec<ConceptEntry>,
    labels: Vec<LabelEntry>,
    location_terms: Vec<(String, Location)>,
    synonyms: Vec<(String, usize)>,
    laterality: Laterality,
    cues: NormalCues,
    concept_index: HashMap<String, usize>,
    /// Locations at which each concept has a label.
    compatible: Vec<BTreeSet<Location>>,
    split_len: usize,
}

fn label_location_ok(l: &LabelEntry) -> bool {
    match l.group {
        LabelGroup::Lung => l.location.is_none(),
        LabelGroup::Mediastinum => matches!(
            l.location,
            Some(Location::Heart | Location::GreatVessel | Location::Mediastinum)
        ),
    }
}

impl Vocabulary {
    /// The vocabulary shipped with the crate.
    pub fn builtin() -> Arc<Vocabulary> {
        static VOCAB: OnceLock<Arc<Vocabulary>> = OnceLock::new();
        VOCAB
            .get_or_init(|| {
                Arc::new(Vocabulary::from_json(BUILTIN_VOCAB).expect("builtin vocabulary is valid"))
            })
            .clone()
    }

    pub fn from_path(path: &Path) -> Result<Vocabulary> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: VocabFile = serde_json::from_str(&text).map_err(|e| Error::header(path, e))?;
        Vocabulary::from_file(file)
    }

    pub fn from_json(text: &str) -> Result<Vocabulary> {
        let file: VocabFile = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("vocabulary: {e}")))?;
        Vocabulary::from_file(file)
    }

    fn from_file(file: VocabFile) -> Result<Vocabulary> {
        if file.schema_version != VOCAB_SCHEMA_VERSION {
            return Err(Error::Unsupported {
                what: "vocabulary schema_version",
                value: file.schema_version.to_string(),
            });
        }
        let invalid = |msg: String| Err(Error::InvalidArgument(format!("vocabulary: {msg}")));

        let mut location_terms = Vec::new();
        let mut seen_terms = HashSet::new();
        for entry in &file.locations {
            for t in &entry.terms {
                if t.is_empty() || *t != t.to_lowercase() {
                    return invalid(format!("location term {t:?} must be non-empty lowercase"));
                }
                if !seen_terms.insert(t.clone()) {
                    return invalid(format!("location term {t:?} listed twice"));
                }
                location_terms.push((t.clone(), entry.id));
            }
        }

        let mut concept_index = HashMap::new();
        let mut synonyms = Vec::new();
        let mut seen_syn = HashSet::new();
        for (i, c) in file.concepts.iter().enumerate() {
            if concept_index.insert(c.id.clone(), i).is_some() {
                return invalid(format!("concept {} listed twice", c.id));
            }
            for s in &c.synonyms {
                if s.is_empty() || *s != s.to_lowercase() {
                    return invalid(format!("synonym {s:?} must be non-empty lowercase"));
                }
                if !seen_syn.insert(s.clone()) {
                    return invalid(format!("synonym {s:?} listed twice"));
                }
                synonyms.push((s.clone(), i));
            }
        }

        let mut compatible = vec![BTreeSet::new(); file.concepts.len()];
        let mut names = HashSet::new();
        let mut split_len = 0;
        for l in &file.labels {
            if !names.insert(l.name.clone()) {
                return invalid(format!("label {:?} listed twice", l.name));
            }
            let Some(&c) = concept_index.get(&l.concept) else {
                return Err(Error::Unknown {
                    kind: "concept",
                    name: l.concept.clone(),
                });
            };
            if !label_location_ok(l) {
                return invalid(format!("label {:?} has an invalid location", l.name));
            }
            match l.group {
                LabelGroup::Lung => {
                    compatible[c].extend([
                        Location::RightLung,
                        Location::LeftLung,
                        Location::LungUnspecified,
                    ]);
                    split_len += 2;
                }
                LabelGroup::Mediastinum => {
                    compatible[c].insert(l.location.expect("checked above"));
                    split_len += 1;
                }
            }
        }
        // two labels of one concept must not claim the same location
        for c in 0..file.concepts.len() {
            let mut seen = HashSet::new();
            for l in file
                .labels
                .iter()
                .filter(|l| concept_index[&l.concept] == c)
            {
                if !seen.insert((l.group, l.location)) {
                    return invalid(format!(
                        "concept {} has duplicate labels",
                        file.concepts[c].id
                    ));
                }
            }
        }

        Ok(Vocabulary {
            concepts: file.concepts,
            labels: file.labels,
            location_terms,
            synonyms,
            laterality: file.laterality,
            cues: file.normal_cues,
            concept_index,
            compatible,
            split_len,
        })
    }

    pub fn concepts(&self) -> &[ConceptEntry] {
        &self.concepts
    }

    pub fn labels(&self) -> &[LabelEntry] {
        &self.labels
    }

    pub fn concept_id(&self, name: &str) -> Option<usize> {
        self.concept_index.get(name).copied()
    }

    pub fn label_id(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.name == name)
    }

    pub fn split_len(&self) -> usize {
        self.split_len
    }

    /// Names of the split vector entries: lung labels appear twice, prefixed
    /// with "right " and "left ".
    pub fn split_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.split_len);
        for l in &self.labels {
            match l.group {
                LabelGroup::Lung => {
                    out.push(format!("right {}", l.name));
                    out.push(format!("left {}", l.name));
                }
                LabelGroup::Mediastinum => out.push(l.name.clone()),
            }
        }
        out
    }

    /// Splits a sentence into phrases and marks each normal or abnormal.
    ///
    /// Clauses are separated by commas and semicolons, and clauses are cut
    /// further at the word "and". A trailing cue ("clear", "has resolved")
    /// makes its whole segment normal. A leading cue ("no", "without") makes
    /// the rest of its segment normal and leaves the words before it
    /// abnormal. Neighbouring abnormal segments of one clause are rejoined.
    pub fn classify_phrases(&self, sentence: &str) -> Vec<(String, PhraseKind)> {
        let lower = sentence.to_lowercase();
        let mut out = Vec::new();
        for clause in lower.split([',', ';']) {
            let mut pending: Vec<String> = Vec::new();
            let flush = |pending: &mut Vec<String>, out: &mut Vec<(String, PhraseKind)>| {
                if !pending.is_empty() {
                    out.push((pending.join(" and "), PhraseKind::Abnormal));
                    pending.clear();
                }
            };
            for seg in split_on_word(clause, "and") {
                let seg = clean(seg);
                if seg.is_empty() {
                    continue;
                }
                if self
                    .cues
                    .trailing
                    .iter()
                    .any(|c| !find_term(seg, c).is_empty())
                {
                    flush(&mut pending, &mut out);
                    out.push((seg.to_string(), PhraseKind::Normal));
                    continue;
                }
                match first_cue(seg, &self.cues.leading) {
                    Some((start, end)) => {
                        let left = clean(&seg[..start]);
                        let right = clean(&seg[end..]);
                        if !left.is_empty() {
                            pending.push(left.to_string());
                        }
                        flush(&mut pending, &mut out);
                        if !right.is_empty() {
                            out.push((right.to_string(), PhraseKind::Normal));
                        }
                    }
                    None => pending.push(seg.to_string()),
                }
            }
            flush(&mut pending, &mut out);
        }
        out
    }

    fn concept_hits(&self, phrase: &str) -> Vec<(usize, usize, usize)> {
        let mut hits = Vec::new();
        for (syn, c) in &self.synonyms {
            for (s, e) in find_term(phrase, syn) {
                hits.push((s, e, *c));
            }
        }
        keep_longest(hits)
    }

    /// Base concepts mentioned in a phrase (expects lowercase text).
    pub fn term_search_abnormalities(&self, phrase: &str) -> BTreeSet<String> {
        self.concept_hits(&phrase.to_lowercase())
            .into_iter()
            .map(|(_, _, c)| self.concepts[c].id.clone())
            .collect()
    }

    /// Resolves the location of each abnormality found in a phrase.
    ///
    /// Explicit location terms compatible with the abnormality win; then the
    /// abnormality's implied location; then `other`. A lung location without
    /// side is lateralized by "left"/"right" and set to both lungs when the
    /// phrase names neither side or both.
    pub fn term_search_locations(
        &self,
        phrase: &str,
        found: &BTreeSet<String>,
    ) -> Vec<(String, Location)> {
        let phrase = phrase.to_lowercase();
        let mut hits = Vec::new();
        for (term, loc) in &self.location_terms {
            for (s, e) in find_term(&phrase, term) {
                hits.push((s, e, *loc));
            }
        }
        let explicit: BTreeSet<Location> = keep_longest(hits).into_iter().map(|h| h.2).collect();
        let has = |terms: &[String]| terms.iter().any(|t| !find_term(&phrase, t).is_empty());
        let (right, left, both) = (
            has(&self.laterality.right),
            has(&self.laterality.left),
            has(&self.laterality.both),
        );

        let mut out = BTreeSet::new();
        for name in found {
            let Some(c) = self.concept_id(name) else {
                continue;
            };
            let compat = &self.compatible[c];
            let mut locs: BTreeSet<Location> = explicit
                .iter()
                .copied()
                .filter(|l| *l == Location::Other || compat.contains(l))
                .collect();
            if locs.is_empty() {
                match self.concepts[c].implied_location {
                    Some(l) if compat.contains(&l) => {
                        locs.insert(l);
                    }
                    _ => {
                        locs.insert(Location::Other);
                    }
                }
            }
            if locs.remove(&Location::LungUnspecified) {
                let lateral = right != left && !both;
                if !lateral || right {
                    locs.insert(Location::RightLung);
                }
                if !lateral || left {
                    locs.insert(Location::LeftLung);
                }
            }
            for l in locs {
                out.insert((name.clone(), l));
            }
        }
        out.into_iter().collect()
    }

    /// Labels one report given as a list of sentences.
    pub fn label_report<S: AsRef<str>>(
        &self,
        scan_id: &str,
        sentences: &[S],
    ) -> LocationAbnormalityLabels {
        let mut matrix = Array2::zeros((self.concepts.len(), Location::ALL.len()));
        for sentence in sentences {
            for (phrase, kind) in self.classify_phrases(sentence.as_ref()) {
                if kind == PhraseKind::Normal {
                    continue;
                }
                let found = self.term_search_abnormalities(&phrase);
                for (name, loc) in self.term_search_locations(&phrase, &found) {
                    matrix[[self.concept_index[&name], loc.index()]] = 1;
                }
            }
        }
        self.labels_from_matrix(scan_id, matrix)
            .expect("matrix built with vocabulary shape")
    }

    pub fn labels_from_matrix(
        &self,
        scan_id: &str,
        matrix: Array2<u8>,
    ) -> Result<LocationAbnormalityLabels> {
        let want = (self.concepts.len(), Location::ALL.len());
        if matrix.dim() != want {
            return Err(Error::DimensionMismatch(format!(
                "label matrix {:?}, vocabulary needs {want:?}",
                matrix.dim()
            )));
        }
        if let Some(v) = matrix.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidArgument(format!("label matrix entry {v}")));
        }
        let at = |c: usize, l: Location| matrix[[c, l.index()]] == 1;
        let mut label_locations = Vec::with_capacity(self.labels.len());
        let mut split = Vec::with_capacity(self.split_len);
        for l in &self.labels {
            let c = self.concept_index[&l.concept];
            let mut set = BTreeSet::new();
            match l.group {
                LabelGroup::Lung => {
                    let unspec = at(c, Location::LungUnspecified);
                    let r = unspec || at(c, Location::RightLung);
                    let lf = unspec || at(c, Location::LeftLung);
                    if r {
                        set.insert(Location::RightLung);
                    }
                    if lf {
                        set.insert(Location::LeftLung);
                    }
                    split.extend([r as u8, lf as u8]);
                }
                LabelGroup::Mediastinum => {
                    let loc = l.location.expect("validated");
                    let on = at(c, loc);
                    if on {
                        set.insert(loc);
                    }
                    split.push(on as u8);
                }
            }
            label_locations.push(set);
        }
        let mut pairs = Vec::new();
        for ((c, li), &v) in matrix.indexed_iter() {
            if v == 1 {
                pairs.push(LabelPair {
                    abnormality: self.concepts[c].id.clone(),
                    location: Location::ALL[li],
                });
            }
        }
        pairs.sort();
        Ok(LocationAbnormalityLabels {
            scan_id: scan_id.to_string(),
            matrix,
            label_locations,
            split,
            pairs,
        })
    }

    /// Builds labels from explicit (concept, location) pairs.
    pub fn labels_from_pairs(
        &self,
        scan_id: &str,
        pairs: &[LabelPair],
    ) -> Result<LocationAbnormalityLabels> {
        let mut matrix = Array2::zeros((self.concepts.len(), Location::ALL.len()));
        for p in pairs {
            let c = self
                .concept_id(&p.abnormality)
                .ok_or_else(|| Error::Unknown {
                    kind: "concept",
                    name: p.abnormality.clone(),
                })?;
            matrix[[c, p.location.index()]] = 1;
        }
        self.labels_from_matrix(scan_id, matrix)
    }

    pub fn labels_from_record(&self, record: &LabelRecord) -> Result<LocationAbnormalityLabels> {
        let labels = self.labels_from_pairs(&record.scan_id, &record.pairs)?;
        if !record.split_vector.is_empty() && record.split_vector != labels.split {
            return Err(Error::InvalidArgument(format!(
                "scan {}: split vector disagrees with pairs",
                record.scan_id
            )));
        }
        Ok(labels)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabelPair {
    pub abnormality: String,
    pub location: Location,
}

impl LabelPair {
    pub fn new(abnormality: &str, location: Location) -> Self {
        LabelPair {
            abnormality: abnormality.to_string(),
            location,
        }
    }
}

/// JSON form of one scan's labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub scan_id: String,
    pub pairs: Vec<LabelPair>,
    pub split_vector: Vec<u8>,
}

/// Labels of one scan.
#[derive(Clone, Debug, PartialEq)]
pub struct LocationAbnormalityLabels {
    scan_id: String,
    matrix: Array2<u8>,
    label_locations: Vec<BTreeSet<Location>>,
    split: Vec<u8>,
    pairs: Vec<LabelPair>,
}

impl LocationAbnormalityLabels {
    pub fn scan_id(&self) -> &str {
        &self.scan_id
    }

    /// Concept × location matrix, columns in `Location::ALL` order.
    pub fn matrix(&self) -> &Array2<u8> {
        &self.matrix
    }

    pub fn pairs(&self) -> &[LabelPair] {
        &self.pairs
    }

    pub fn split_vector(&self) -> &[u8] {
        &self.split
    }

    pub fn num_labels(&self) -> usize {
        self.label_locations.len()
    }

    /// Locations at which vocabulary label `label` was found; empty when the
    /// label is absent.
    pub fn locations_of(&self, label: usize) -> Result<BTreeSet<Location>> {
        self.label_locations
            .get(label)
            .cloned()
            .ok_or(Error::IndexOutOfRange {
                index: label,
                len: self.label_locations.len(),
            })
    }

    pub fn is_present(&self, label: usize) -> bool {
        self.label_locations
            .get(label)
            .is_some_and(|s| !s.is_empty())
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn to_record(&self) -> LabelRecord {
        LabelRecord {
            scan_id: self.scan_id.clone(),
            pairs: self.pairs.clone(),
            split_vector: self.split.clone(),
        }
    }
}

fn clean(s: &str) -> &str {
    s.trim_matches(|c: char| c.is_whitespace() || c == '.' || c == ':')
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

fn boundary_before(text: &str, i: usize) -> bool {
    text[..i]
        .chars()
        .next_back()
        .is_none_or(|c| !is_word_char(c))
}

fn boundary_at(text: &str, i: usize) -> bool {
    text[i..].chars().next().is_none_or(|c| !is_word_char(c))
}

/// Byte spans of whole-word occurrences of `term`, allowing a plural "s" or
/// "es" suffix.
pub(crate) fn find_term(text: &str, term: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, _) in text.match_indices(term) {
        if !boundary_before(text, i) {
            continue;
        }
        let j = i + term.len();
        let end = if boundary_at(text, j) {
            Some(j)
        } else if text[j..].starts_with("es") && boundary_at(text, j + 2) {
            Some(j + 2)
        } else if text[j..].starts_with('s') && boundary_at(text, j + 1) {
            Some(j + 1)
        } else {
            None
        };
        if let Some(e) = end {
            out.push((i, e));
        }
    }
    out
}

/// Drops hits whose span lies inside a strictly longer hit.
fn keep_longest<T: Copy>(hits: Vec<(usize, usize, T)>) -> Vec<(usize, usize, T)> {
    hits.iter()
        .copied()
        .filter(|&(s, e, _)| {
            !hits
                .iter()
                .any(|&(s2, e2, _)| s2 <= s && e <= e2 && e2 - s2 > e - s)
        })
        .collect()
}

/// Earliest leading cue in a segment, longest cue on ties.
fn first_cue(seg: &str, cues: &[String]) -> Option<(usize, usize)> {
    cues.iter()
        .flat_map(|c| find_term_exact(seg, c))
        .min_by_key(|&(s, e)| (s, std::cmp::Reverse(e)))
}

fn find_term_exact(text: &str, term: &str) -> Vec<(usize, usize)> {
    text.match_indices(term)
        .map(|(i, _)| (i, i + term.len()))
        .filter(|&(i, j)| boundary_before(text, i) && boundary_at(text, j))
        .collect()
}

fn split_on_word<'a>(text: &'a str, word: &str) -> Vec<&'a str> {
    let mut out = Vec::new();
    let mut last = 0;
    for (i, j) in find_term_exact(text, word) {
        out.push(&text[last..i]);
        last = j;
    }
    out.push(&text[last..]);
    out
}
