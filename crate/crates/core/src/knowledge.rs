//! A UMLS-like vocabulary snapshot and the three expansion layers over it.
//!
//! Input files are pipe-delimited subsets of the RRF tables:
//!
//! * concepts: `CUI|TERM`, one row per term, row order significant
//! * types: `CUI|TUI`
//! * relations: `CHILD_CUI|PARENT_CUI|SOURCE_VOCABULARY` (an `isa` edge)
//!
//! Lines starting with `#` and blank lines are ignored.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub const DEFAULT_SOURCE: &str = "SNOMEDCT_US";
pub const DEFAULT_CAP: usize = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KnowledgeError {
    #[error("{file} row {row}: {reason}")]
    Malformed {
        file: &'static str,
        row: usize,
        reason: String,
    },
    #[error("unknown CUI `{0}`")]
    UnknownCui(String),
    #[error("unknown expansion layer `{0}`")]
    UnknownLayer(String),
    #[error("packed snapshot: {0}")]
    Packed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Concept {
    pub cui: String,
    /// First-appearance order from the concept file; the first is the preferred term.
    pub terms: Vec<String>,
    pub semantic_types: BTreeSet<String>,
}

impl Concept {
    pub fn preferred_term(&self) -> &str {
        &self.terms[0]
    }
}

/// A non-fatal condition met while loading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoadWarning {
    SelfLoop { row: usize, cui: String },
    UnknownRelationCui { row: usize, cui: String },
    UnknownTypeCui { row: usize, cui: String },
}

impl fmt::Display for LoadWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadWarning::SelfLoop { row, cui } => {
                write!(f, "relations row {row}: self-loop on {cui} dropped")
            }
            LoadWarning::UnknownRelationCui { row, cui } => {
                write!(f, "relations row {row}: unknown CUI {cui}, edge dropped")
            }
            LoadWarning::UnknownTypeCui { row, cui } => {
                write!(f, "types row {row}: unknown CUI {cui}, row dropped")
            }
        }
    }
}

/// Immutable indexes over a vocabulary snapshot. All CUI lists are sorted and deduplicated.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeStore {
    concepts: BTreeMap<String, Concept>,
    term_index: HashMap<String, Vec<String>>,
    parents_of: BTreeMap<String, Vec<String>>,
    children_of: BTreeMap<String, Vec<String>>,
    type_index: BTreeMap<String, Vec<String>>,
    edge_count: usize,
}

/// Lowercases, strips leading and trailing punctuation, and collapses whitespace runs.
pub fn normalize_term(surface: &str) -> String {
    let trimmed = surface.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation());
    trimmed
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn data_rows(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.strip_suffix('\r').unwrap_or(l);
        (!l.trim().is_empty() && !l.starts_with('#')).then_some((i + 1, l))
    })
}

fn fields<'a>(
    file: &'static str,
    row: usize,
    line: &'a str,
    n: usize,
) -> Result<Vec<&'a str>, KnowledgeError> {
    let parts: Vec<&str> = if n == 2 && file == "concepts" {
        // terms may legitimately contain '|'
        line.splitn(2, '|').map(str::trim).collect()
    } else {
        line.split('|').map(str::trim).collect()
    };
    if parts.len() != n {
        return Err(KnowledgeError::Malformed {
            file,
            row,
            reason: format!("expected {n} fields, found {}", parts.len()),
        });
    }
    if let Some(i) = parts.iter().position(|p| p.is_empty()) {
        return Err(KnowledgeError::Malformed {
            file,
            row,
            reason: format!("field {} is empty", i + 1),
        });
    }
    Ok(parts)
}

/// Builds a store from the three row files; only relations from `source_filter` are indexed.
pub fn load_store(
    concept_rows: &str,
    type_rows: &str,
    relation_rows: &str,
    source_filter: &str,
) -> Result<(KnowledgeStore, Vec<LoadWarning>), KnowledgeError> {
    let mut warnings = Vec::new();
    let mut concepts: BTreeMap<String, Concept> = BTreeMap::new();
    for (row, line) in data_rows(concept_rows) {
        let f = fields("concepts", row, line, 2)?;
        let concept = concepts.entry(f[0].to_string()).or_insert_with(|| Concept {
            cui: f[0].to_string(),
            terms: Vec::new(),
            semantic_types: BTreeSet::new(),
        });
        if !concept.terms.iter().any(|t| t == f[1]) {
            concept.terms.push(f[1].to_string());
        }
    }

    for (row, line) in data_rows(type_rows) {
        let f = fields("types", row, line, 2)?;
        match concepts.get_mut(f[0]) {
            Some(c) => {
                c.semantic_types.insert(f[1].to_string());
            }
            None => warnings.push(LoadWarning::UnknownTypeCui {
                row,
                cui: f[0].to_string(),
            }),
        }
    }

    let mut edges: BTreeSet<(String, String)> = BTreeSet::new();
    for (row, line) in data_rows(relation_rows) {
        let f = fields("relations", row, line, 3)?;
        let (child, parent, source) = (f[0], f[1], f[2]);
        if source != source_filter {
            continue;
        }
        if child == parent {
            log::warn!("relations row {row}: self-loop on {child} dropped");
            warnings.push(LoadWarning::SelfLoop {
                row,
                cui: child.to_string(),
            });
            continue;
        }
        if let Some(missing) = [child, parent].into_iter().find(|c| !concepts.contains_key(*c)) {
            warnings.push(LoadWarning::UnknownRelationCui {
                row,
                cui: missing.to_string(),
            });
            continue;
        }
        edges.insert((child.to_string(), parent.to_string()));
    }

    Ok((KnowledgeStore::from_parts(concepts, &edges), warnings))
}

fn push_sorted(index: &mut BTreeMap<String, Vec<String>>, key: &str, value: &str) {
    index.entry(key.to_string()).or_default().push(value.to_string());
}

impl KnowledgeStore {
    fn from_parts(concepts: BTreeMap<String, Concept>, edges: &BTreeSet<(String, String)>) -> Self {
        let mut term_index: HashMap<String, Vec<String>> = HashMap::new();
        let mut type_index = BTreeMap::new();
        // BTreeMap iteration is CUI-sorted, so every pushed list stays sorted.
        for (cui, c) in &concepts {
            for t in &c.terms {
                let list = term_index.entry(normalize_term(t)).or_default();
                if list.last() != Some(cui) {
                    list.push(cui.clone());
                }
            }
            for ty in &c.semantic_types {
                push_sorted(&mut type_index, ty, cui);
            }
        }
        let mut parents_of = BTreeMap::new();
        let mut children_of = BTreeMap::new();
        for (child, parent) in edges {
            push_sorted(&mut parents_of, child, parent);
        }
        for (child, parent) in edges {
            children_of.entry(parent.clone()).or_insert_with(Vec::new).push(child.clone());
        }
        for list in children_of.values_mut() {
            list.sort();
        }
        KnowledgeStore {
            concepts,
            term_index,
            parents_of,
            children_of,
            type_index,
            edge_count: edges.len(),
        }
    }

    pub fn concept(&self, cui: &str) -> Result<&Concept, KnowledgeError> {
        self.concepts
            .get(cui)
            .ok_or_else(|| KnowledgeError::UnknownCui(cui.to_string()))
    }

    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn concept_count(&self) -> usize {
        self.concepts.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// CUIs whose terms normalize to the same string as `surface`.
    pub fn resolve_term(&self, surface: &str) -> Vec<String> {
        self.term_index
            .get(&normalize_term(surface))
            .cloned()
            .unwrap_or_default()
    }

    /// Terms of `cui` in source order, minus any that normalize to `exclude`.
    pub fn synonyms(
        &self,
        cui: &str,
        exclude: Option<&str>,
        cap: usize,
    ) -> Result<Vec<String>, KnowledgeError> {
        let concept = self.concept(cui)?;
        let mut seen: HashSet<String> = exclude.map(normalize_term).into_iter().collect();
        Ok(concept
            .terms
            .iter()
            .filter(|t| seen.insert(normalize_term(t)))
            .take(cap)
            .cloned()
            .collect())
    }

    /// CUIs sharing a semantic type with `cui`: co-children of its parents
    /// first, then the rest, each group in CUI order.
    pub fn same_type_neighbors(&self, cui: &str, cap: usize) -> Result<Vec<String>, KnowledgeError> {
        let concept = self.concept(cui)?;
        let candidates: BTreeSet<&str> = concept
            .semantic_types
            .iter()
            .filter_map(|ty| self.type_index.get(ty))
            .flatten()
            .map(String::as_str)
            .filter(|c| *c != cui)
            .collect();
        let adjacent: HashSet<String> = self.siblings(cui)?.into_iter().collect();
        let (mut near, far): (Vec<&str>, Vec<&str>) =
            candidates.into_iter().partition(|c| adjacent.contains(*c));
        near.extend(far);
        Ok(near.into_iter().take(cap).map(str::to_string).collect())
    }

    pub fn parents(&self, cui: &str) -> Result<Vec<String>, KnowledgeError> {
        self.concept(cui)?;
        Ok(self.parents_of.get(cui).cloned().unwrap_or_default())
    }

    pub fn children(&self, cui: &str) -> Result<Vec<String>, KnowledgeError> {
        self.concept(cui)?;
        Ok(self.children_of.get(cui).cloned().unwrap_or_default())
    }

    /// Co-children of any parent of `cui`, excluding `cui` itself.
    pub fn siblings(&self, cui: &str) -> Result<Vec<String>, KnowledgeError> {
        let siblings: BTreeSet<&String> = self
            .parents(cui)?
            .iter()
            .filter_map(|p| self.children_of.get(p))
            .flatten()
            .filter(|c| *c != cui)
            .collect();
        Ok(siblings.into_iter().cloned().collect())
    }

    /// Resolves `surface`, applies `layer`, and realizes the result as replacement terms.
    pub fn expand_entity(&self, surface: &str, layer: ExpansionLayer, cap: usize) -> ExpansionResult {
        let mut result = ExpansionResult {
            query_surface: surface.to_string(),
            cui: None,
            layer,
            terms: Vec::new(),
        };
        // lexicographically smallest CUI wins when a surface is ambiguous
        let Some(cui) = self.resolve_term(surface).into_iter().next() else {
            return result;
        };
        let cuis = match layer {
            ExpansionLayer::Synonym => {
                result.terms = self
                    .synonyms(&cui, Some(surface), cap)
                    .expect("resolved CUI exists");
                result.cui = Some(cui);
                return result;
            }
            ExpansionLayer::SemanticType => self.same_type_neighbors(&cui, usize::MAX),
            ExpansionLayer::Parent => self.parents(&cui),
            ExpansionLayer::Child => self.children(&cui),
            ExpansionLayer::Sibling => self.siblings(&cui),
        }
        .expect("resolved CUI exists");

        let mut seen: HashSet<String> = HashSet::from([normalize_term(surface)]);
        result.terms = cuis
            .iter()
            .filter(|c| **c != cui)
            .map(|c| self.concepts[c].preferred_term())
            .filter(|t| seen.insert(normalize_term(t)))
            .take(cap)
            .map(str::to_string)
            .collect();
        result.cui = Some(cui);
        result
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExpansionLayer {
    Synonym,
    SemanticType,
    Parent,
    Child,
    Sibling,
}

impl ExpansionLayer {
    pub const ALL: [ExpansionLayer; 5] = [
        ExpansionLayer::Synonym,
        ExpansionLayer::SemanticType,
        ExpansionLayer::Parent,
        ExpansionLayer::Child,
        ExpansionLayer::Sibling,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExpansionLayer::Synonym => "synonym",
            ExpansionLayer::SemanticType => "semantic_type",
            ExpansionLayer::Parent => "parent",
            ExpansionLayer::Child => "child",
            ExpansionLayer::Sibling => "sibling",
        }
    }
}

impl fmt::Display for ExpansionLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExpansionLayer {
    type Err = KnowledgeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| KnowledgeError::UnknownLayer(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpansionResult {
    pub query_surface: String,
    /// `None` when the surface did not resolve.
    pub cui: Option<String>,
    pub layer: ExpansionLayer,
    pub terms: Vec<String>,
}

impl ExpansionResult {
    pub fn is_unresolved(&self) -> bool {
        self.cui.is_none()
    }
}

/// `expand_entity` over a layer name; unknown names are an error.
pub fn expand_entity(
    store: &KnowledgeStore,
    surface: &str,
    layer: &str,
    cap: usize,
) -> Result<ExpansionResult, KnowledgeError> {
    Ok(store.expand_entity(surface, layer.parse()?, cap))
}

/// Raw text of the three snapshot files.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SnapshotFiles {
    pub concepts: String,
    pub types: String,
    pub relations: String,
}

impl SnapshotFiles {
    pub fn load(&self, source_filter: &str) -> Result<(KnowledgeStore, Vec<LoadWarning>), KnowledgeError> {
        load_store(&self.concepts, &self.types, &self.relations, source_filter)
    }

    /// Packs the three files into one, under `[concepts]`, `[types]` and `[relations]` headers.
    pub fn pack(&self) -> String {
        let mut out = String::new();
        for (header, body) in [
            ("[concepts]", &self.concepts),
            ("[types]", &self.types),
            ("[relations]", &self.relations),
        ] {
            out.push_str(header);
            out.push('\n');
            out.push_str(body);
            if !body.is_empty() && !body.ends_with('\n') {
                out.push('\n');
            }
        }
        out
    }

    pub fn unpack(text: &str) -> Result<Self, KnowledgeError> {
        const HEADERS: [&str; 3] = ["[concepts]", "[types]", "[relations]"];
        let mut sections: [Option<String>; 3] = Default::default();
        let mut current = None;
        for (i, line) in text.lines().enumerate() {
            if let Some(idx) = HEADERS.iter().position(|h| *h == line.trim()) {
                if sections[idx].is_some() {
                    return Err(KnowledgeError::Packed(format!(
                        "duplicate section {}",
                        HEADERS[idx]
                    )));
                }
                sections[idx] = Some(String::new());
                current = Some(idx);
                continue;
            }
            match current {
                Some(idx) => {
                    let buf = sections[idx].as_mut().expect("opened above");
                    buf.push_str(line);
                    buf.push('\n');
                }
                None if line.trim().is_empty() || line.starts_with('#') => {}
                None => {
                    return Err(KnowledgeError::Packed(format!(
                        "line {}: content before the first section header",
                        i + 1
                    )))
                }
            }
        }
        match sections {
            [Some(concepts), Some(types), Some(relations)] => Ok(SnapshotFiles {
                concepts,
                types,
                relations,
            }),
            _ => Err(KnowledgeError::Packed(
                "expected [concepts], [types] and [relations] sections".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(concepts: &str, types: &str, relations: &str) -> KnowledgeStore {
        load_store(concepts, types, relations, DEFAULT_SOURCE).unwrap().0
    }

    const SIX: &str = "C1|one\nC2|two\nC3|three\nC4|four\nC5|five\nC6|six\n";

    #[test]
    fn counts_match_input() {
        let rels = "C2|C1|SNOMEDCT_US\nC3|C1|SNOMEDCT_US\nC4|C2|SNOMEDCT_US\nC5|C2|SNOMEDCT_US\nC6|C3|SNOMEDCT_US\nC6|C3|SNOMEDCT_US\n";
        let s = store(SIX, "", rels);
        assert_eq!(s.concept_count(), 6);
        assert_eq!(s.edge_count(), 5);
    }

    #[test]
    fn source_filter_and_self_loops() {
        let (s, warnings) =
            load_store(SIX, "", "C2|C1|MSH\nC1|C1|SNOMEDCT_US\nC3|C9|SNOMEDCT_US\n", DEFAULT_SOURCE)
                .unwrap();
        assert_eq!(s.edge_count(), 0);
        assert!(s.parents("C2").unwrap().is_empty());
        assert_eq!(
            warnings,
            vec![
                LoadWarning::SelfLoop { row: 2, cui: "C1".into() },
                LoadWarning::UnknownRelationCui { row: 3, cui: "C9".into() },
            ]
        );
    }

    #[test]
    fn malformed_rows_name_the_row() {
        let err = load_store("# header\nC1|a\nC2\n", "", "", DEFAULT_SOURCE).unwrap_err();
        assert!(matches!(err, KnowledgeError::Malformed { row: 3, .. }), "{err}");
        let err = load_store("C1|a\n", "", "C1|C2\n", DEFAULT_SOURCE).unwrap_err();
        assert!(matches!(err, KnowledgeError::Malformed { file: "relations", row: 1, .. }));
    }

    #[test]
    fn resolve_normalizes() {
        let s = store("C-A|Aspirin\nC-A|acetylsalicylic acid\n", "", "");
        assert_eq!(s.resolve_term("aspirin"), vec!["C-A"]);
        assert_eq!(s.resolve_term("  Aspirin "), vec!["C-A"]);
        assert_eq!(s.resolve_term("(aspirin)."), vec!["C-A"]);
        assert_eq!(s.resolve_term("Acetylsalicylic   acid"), vec!["C-A"]);
        assert!(s.resolve_term("unobtainium").is_empty());
    }

    #[test]
    fn synonyms_cap_and_order() {
        let s = store("C1|a\nC1|b\nC1|c\n", "", "");
        assert_eq!(s.synonyms("C1", None, 10).unwrap(), vec!["a", "b", "c"]);
        let many: String = (0..15).map(|i| format!("C2|t{i:02}\n")).collect();
        let s = store(&many, "", "");
        let got = s.synonyms("C2", None, 10).unwrap();
        assert_eq!(got.len(), 10);
        assert_eq!(got[0], "t00");
        assert_eq!(got[9], "t09");
        assert_eq!(
            s.synonyms("C9999999", None, 10).unwrap_err(),
            KnowledgeError::UnknownCui("C9999999".into())
        );
    }

    #[test]
    fn neighbors_ranking() {
        let concepts = "C-A|a\nC-B|b\nC-C|c\nC-P|p\n";
        let types = "C-A|T121\nC-B|T121\nC-C|T121\n";
        let s = store(concepts, types, "");
        assert_eq!(s.same_type_neighbors("C-A", 10).unwrap(), vec!["C-B", "C-C"]);
        // C-C now shares parent C-P with C-A, so it ranks first
        let s = store(concepts, types, "C-A|C-P|SNOMEDCT_US\nC-C|C-P|SNOMEDCT_US\n");
        assert_eq!(s.same_type_neighbors("C-A", 10).unwrap(), vec!["C-C", "C-B"]);
        let untyped = store("C-A|a\nC-B|b\n", "C-B|T1\n", "");
        assert!(untyped.same_type_neighbors("C-A", 10).unwrap().is_empty());
    }

    #[test]
    fn neighbors_cap() {
        let concepts: String = (0..13).map(|i| format!("C{i:02}|t{i}\n")).collect();
        let types: String = (0..13).map(|i| format!("C{i:02}|T047\n")).collect();
        let s = store(&concepts, &types, "");
        assert_eq!(s.same_type_neighbors("C00", 10).unwrap().len(), 10);
    }

    #[test]
    fn hierarchy() {
        let concepts = "P|p\nA|a\nB|b\nC|c\n";
        let rels = "A|P|SNOMEDCT_US\nB|P|SNOMEDCT_US\nC|P|SNOMEDCT_US\n";
        let s = store(concepts, "", rels);
        assert_eq!(s.siblings("A").unwrap(), vec!["B", "C"]);
        assert!(s.parents("P").unwrap().is_empty());
        assert_eq!(s.children("P").unwrap(), vec!["A", "B", "C"]);

        let concepts = "P1|p1\nP2|p2\nA|a\nB|b\nD|d\n";
        let rels = "A|P1|SNOMEDCT_US\nB|P1|SNOMEDCT_US\nA|P2|SNOMEDCT_US\nB|P2|SNOMEDCT_US\nD|P2|SNOMEDCT_US\n";
        let s = store(concepts, "", rels);
        assert_eq!(s.siblings("A").unwrap(), vec!["B", "D"]);
        assert!(s.siblings("nope").is_err());
    }

    #[test]
    fn expansion_examples() {
        let concepts = "C-A|aspirin\nC-A|acetylsalicylic acid\nC-I|ibuprofen\nC-P|analgesic\n";
        let rels = "C-A|C-P|SNOMEDCT_US\nC-I|C-P|SNOMEDCT_US\n";
        let s = store(concepts, "", rels);
        let syn = s.expand_entity("aspirin", ExpansionLayer::Synonym, 10);
        assert_eq!(syn.terms, vec!["acetylsalicylic acid"]);
        let sib = s.expand_entity("aspirin", ExpansionLayer::Sibling, 10);
        assert_eq!(sib.terms, vec!["ibuprofen"]);
        let par = s.expand_entity("Aspirin", ExpansionLayer::Parent, 10);
        assert_eq!(par.terms, vec!["analgesic"]);
        let miss = s.expand_entity("unobtainium", ExpansionLayer::Parent, 10);
        assert!(miss.is_unresolved());
        assert!(miss.terms.is_empty());
        assert_eq!(
            expand_entity(&s, "aspirin", "cousin", 10).unwrap_err(),
            KnowledgeError::UnknownLayer("cousin".into())
        );
    }

    #[test]
    fn ambiguous_surface_takes_smallest_cui() {
        let s = store("C2|cold\nC2|common cold\nC1|cold\nC1|low temperature\n", "", "");
        let r = s.expand_entity("cold", ExpansionLayer::Synonym, 10);
        assert_eq!(r.cui.as_deref(), Some("C1"));
        assert_eq!(r.terms, vec!["low temperature"]);
    }

    #[test]
    fn pack_round_trip() {
        let files = SnapshotFiles {
            concepts: "C1|a\n".into(),
            types: "C1|T1\n".into(),
            relations: String::new(),
        };
        let packed = files.pack();
        assert_eq!(SnapshotFiles::unpack(&packed).unwrap(), files);
        assert!(SnapshotFiles::unpack("[concepts]\nC1|a\n").is_err());
        assert!(SnapshotFiles::unpack("C1|a\n[concepts]\n[types]\n[relations]\n").is_err());
    }
}
