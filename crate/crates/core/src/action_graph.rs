//! Directed semantic action graph: category, attribute and predicate nodes
//! connected by the attribute phrases (category, attribute) and predicate
//! phrases (category, predicate, category) that survive a frequency threshold.
//!
//! The graph is immutable after construction and cheap to share across
//! threads. Node indices are dense and assigned lexicographically by name so
//! that the same phrase counts always produce the same graph, regardless of
//! input ordering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VrlError};

macro_rules! node_id {
    ($name:ident) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

node_id!(CategoryId);
node_id!(AttributeId);
node_id!(PredicateId);

/// Raw phrase frequencies, the input to [`build_graph`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PhraseCounts {
    /// (subject name, attribute name, count)
    pub attribute_phrases: Vec<(String, String, u64)>,
    /// (subject name, predicate name, object name, count)
    pub predicate_phrases: Vec<(String, String, String, u64)>,
}

impl PhraseCounts {
    /// Parse the tab-separated phrase-count format:
    /// `A<TAB>subject<TAB>attribute<TAB>count` or
    /// `P<TAB>subject<TAB>predicate<TAB>object<TAB>count`, one record per
    /// line. Blank lines and lines starting with `#` are skipped.
    pub fn from_tsv_str(text: &str) -> Result<PhraseCounts> {
        let mut counts = PhraseCounts::default();
        let mut seen_a: BTreeSet<(String, String)> = BTreeSet::new();
        let mut seen_p: BTreeSet<(String, String, String)> = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            let parse_count = |s: &str| -> Result<u64> {
                s.trim().parse::<u64>().map_err(|_| VrlError::Ingest {
                    line,
                    msg: format!("invalid count `{s}`"),
                })
            };
            match fields.as_slice() {
                ["A", subj, attr, count] => {
                    let key = (subj.to_string(), attr.to_string());
                    if !seen_a.insert(key.clone()) {
                        return Err(VrlError::Ingest {
                            line,
                            msg: format!("duplicate attribute phrase `{subj} {attr}`"),
                        });
                    }
                    counts
                        .attribute_phrases
                        .push((key.0, key.1, parse_count(count)?));
                }
                ["P", subj, pred, obj, count] => {
                    let key = (subj.to_string(), pred.to_string(), obj.to_string());
                    if !seen_p.insert(key.clone()) {
                        return Err(VrlError::Ingest {
                            line,
                            msg: format!("duplicate predicate phrase `{subj} {pred} {obj}`"),
                        });
                    }
                    counts
                        .predicate_phrases
                        .push((key.0, key.1, key.2, parse_count(count)?));
                }
                _ => {
                    return Err(VrlError::Ingest {
                        line,
                        msg: format!("expected `A\\tsubj\\tattr\\tcount` or `P\\tsubj\\tpred\\tobj\\tcount`, got `{raw}`"),
                    });
                }
            }
        }
        Ok(counts)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<PhraseCounts> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| VrlError::io(path.display().to_string(), e))?;
        Self::from_tsv_str(&text)
    }
}

/// Serialized form of the graph: name tables plus flat edge lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphRepr {
    categories: Vec<String>,
    attributes: Vec<String>,
    predicates: Vec<String>,
    /// (category index, attribute index)
    attr_edges: Vec<(u32, u32)>,
    /// (subject category index, predicate index, object category index)
    pred_edges: Vec<(u32, u32, u32)>,
}

const GRAPH_FORMAT: &str = "vrl-semantic-graph";
const GRAPH_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphFile {
    format: String,
    version: u32,
    graph: GraphRepr,
}

/// The directed semantic action graph G = (C ∪ A ∪ P, E_A ∪ E_P).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "GraphRepr", try_from = "GraphRepr")]
pub struct SemanticGraph {
    categories: Vec<String>,
    attributes: Vec<String>,
    predicates: Vec<String>,
    cat_by_name: BTreeMap<String, CategoryId>,
    attr_by_name: BTreeMap<String, AttributeId>,
    pred_by_name: BTreeMap<String, PredicateId>,
    /// Indexed by category; attribute successors.
    attr_edges: Vec<BTreeSet<AttributeId>>,
    /// Directed: (subject category, object category) -> predicates.
    pred_edges: BTreeMap<(CategoryId, CategoryId), BTreeSet<PredicateId>>,
}

impl SemanticGraph {
    fn from_parts(
        categories: Vec<String>,
        attributes: Vec<String>,
        predicates: Vec<String>,
        attr_edge_list: Vec<(u32, u32)>,
        pred_edge_list: Vec<(u32, u32, u32)>,
    ) -> Result<SemanticGraph> {
        let check = |idx: u32, len: usize, kind: &'static str| -> Result<()> {
            if (idx as usize) < len {
                Ok(())
            } else {
                Err(VrlError::Lookup { kind, index: idx })
            }
        };
        let mut attr_edges = vec![BTreeSet::new(); categories.len()];
        for &(c, a) in &attr_edge_list {
            check(c, categories.len(), "category")?;
            check(a, attributes.len(), "attribute")?;
            attr_edges[c as usize].insert(AttributeId(a));
        }
        let mut pred_edges: BTreeMap<(CategoryId, CategoryId), BTreeSet<PredicateId>> =
            BTreeMap::new();
        for &(s, p, o) in &pred_edge_list {
            check(s, categories.len(), "category")?;
            check(p, predicates.len(), "predicate")?;
            check(o, categories.len(), "category")?;
            pred_edges
                .entry((CategoryId(s), CategoryId(o)))
                .or_default()
                .insert(PredicateId(p));
        }
        let index_of = |names: &[String]| {
            names
                .iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), i as u32))
                .collect::<BTreeMap<_, _>>()
        };
        Ok(SemanticGraph {
            cat_by_name: index_of(&categories)
                .into_iter()
                .map(|(n, i)| (n, CategoryId(i)))
                .collect(),
            attr_by_name: index_of(&attributes)
                .into_iter()
                .map(|(n, i)| (n, AttributeId(i)))
                .collect(),
            pred_by_name: index_of(&predicates)
                .into_iter()
                .map(|(n, i)| (n, PredicateId(i)))
                .collect(),
            categories,
            attributes,
            predicates,
            attr_edges,
            pred_edges,
        })
    }

    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }
    pub fn n_attributes(&self) -> usize {
        self.attributes.len()
    }
    pub fn n_predicates(&self) -> usize {
        self.predicates.len()
    }
    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn category_name(&self, c: CategoryId) -> Result<&str> {
        self.categories
            .get(c.index())
            .map(String::as_str)
            .ok_or(VrlError::Lookup {
                kind: "category",
                index: c.0,
            })
    }
    pub fn attribute_name(&self, a: AttributeId) -> Result<&str> {
        self.attributes
            .get(a.index())
            .map(String::as_str)
            .ok_or(VrlError::Lookup {
                kind: "attribute",
                index: a.0,
            })
    }
    pub fn predicate_name(&self, p: PredicateId) -> Result<&str> {
        self.predicates
            .get(p.index())
            .map(String::as_str)
            .ok_or(VrlError::Lookup {
                kind: "predicate",
                index: p.0,
            })
    }

    pub fn category_id(&self, name: &str) -> Option<CategoryId> {
        self.cat_by_name.get(name).copied()
    }
    pub fn attribute_id(&self, name: &str) -> Option<AttributeId> {
        self.attr_by_name.get(name).copied()
    }
    pub fn predicate_id(&self, name: &str) -> Option<PredicateId> {
        self.pred_by_name.get(name).copied()
    }

    pub fn category_ids(&self) -> impl Iterator<Item = CategoryId> + '_ {
        (0..self.categories.len() as u32).map(CategoryId)
    }

    /// Attribute successors of `c`: {a : (c, a) ∈ E_A}. Empty set when none.
    pub fn attributes_of(&self, c: CategoryId) -> Result<&BTreeSet<AttributeId>> {
        self.attr_edges.get(c.index()).ok_or(VrlError::Lookup {
            kind: "category",
            index: c.0,
        })
    }

    /// Direction-sensitive predicate lookup: {p : (c, p, c2) ∈ E_P}.
    pub fn predicates_between(
        &self,
        c: CategoryId,
        c2: CategoryId,
    ) -> Result<BTreeSet<PredicateId>> {
        for &x in &[c, c2] {
            if x.index() >= self.categories.len() {
                return Err(VrlError::Lookup {
                    kind: "category",
                    index: x.0,
                });
            }
        }
        Ok(self.pred_edges.get(&(c, c2)).cloned().unwrap_or_default())
    }

    /// All attribute edges as (category, attribute) pairs, sorted.
    pub fn attr_edge_list(&self) -> Vec<(CategoryId, AttributeId)> {
        self.attr_edges
            .iter()
            .enumerate()
            .flat_map(|(c, attrs)| {
                attrs
                    .iter()
                    .map(move |&a| (CategoryId(c as u32), a))
            })
            .collect()
    }

    /// All predicate edges as (subject, predicate, object) triples, sorted.
    pub fn pred_edge_list(&self) -> Vec<(CategoryId, PredicateId, CategoryId)> {
        self.pred_edges
            .iter()
            .flat_map(|(&(s, o), preds)| preds.iter().map(move |&p| (s, p, o)))
            .collect()
    }

    pub fn n_attr_edges(&self) -> usize {
        self.attr_edges.iter().map(|s| s.len()).sum()
    }
    pub fn n_pred_edges(&self) -> usize {
        self.pred_edges.values().map(|s| s.len()).sum()
    }

    pub fn stats(&self) -> GraphStats {
        let n = self.categories.len().max(1) as f64;
        GraphStats {
            n_categories: self.n_categories(),
            n_attributes: self.n_attributes(),
            n_predicates: self.n_predicates(),
            n_attr_edges: self.n_attr_edges(),
            n_pred_edges: self.n_pred_edges(),
            avg_attrs_per_category: self.n_attr_edges() as f64 / n,
            avg_preds_per_category: self.n_pred_edges() as f64 / n,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = GraphFile {
            format: GRAPH_FORMAT.to_string(),
            version: GRAPH_VERSION,
            graph: self.clone().into(),
        };
        let text = serde_json::to_string_pretty(&file)
            .map_err(|e| VrlError::Json {
                path: path.display().to_string(),
                source: e,
            })?;
        std::fs::write(path, text).map_err(|e| VrlError::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SemanticGraph> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| VrlError::io(path.display().to_string(), e))?;
        let file: GraphFile = serde_json::from_str(&text).map_err(|e| VrlError::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        if file.format != GRAPH_FORMAT {
            return Err(VrlError::Config(format!(
                "{}: not a semantic graph file (format `{}`)",
                path.display(),
                file.format
            )));
        }
        if file.version != GRAPH_VERSION {
            return Err(VrlError::Config(format!(
                "{}: unsupported graph version {}",
                path.display(),
                file.version
            )));
        }
        SemanticGraph::try_from(file.graph)
    }
}

impl From<SemanticGraph> for GraphRepr {
    fn from(g: SemanticGraph) -> GraphRepr {
        GraphRepr {
            attr_edges: g
                .attr_edge_list()
                .into_iter()
                .map(|(c, a)| (c.0, a.0))
                .collect(),
            pred_edges: g
                .pred_edge_list()
                .into_iter()
                .map(|(s, p, o)| (s.0, p.0, o.0))
                .collect(),
            categories: g.categories,
            attributes: g.attributes,
            predicates: g.predicates,
        }
    }
}

impl TryFrom<GraphRepr> for SemanticGraph {
    type Error = VrlError;
    fn try_from(r: GraphRepr) -> Result<SemanticGraph> {
        SemanticGraph::from_parts(
            r.categories,
            r.attributes,
            r.predicates,
            r.attr_edges,
            r.pred_edges,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub n_categories: usize,
    pub n_attributes: usize,
    pub n_predicates: usize,
    pub n_attr_edges: usize,
    pub n_pred_edges: usize,
    pub avg_attrs_per_category: f64,
    pub avg_preds_per_category: f64,
}

/// Build the graph from phrase counts, keeping exactly the phrases with
/// `count >= min_count` (inclusive). Node sets are the union of words
/// appearing in retained phrases; indices are lexicographic by name.
pub fn build_graph(counts: &PhraseCounts, min_count: u64) -> Result<SemanticGraph> {
    if min_count < 1 {
        return Err(VrlError::Contract(format!(
            "min_count must be >= 1, got {min_count}"
        )));
    }
    let kept_attr: Vec<_> = counts
        .attribute_phrases
        .iter()
        .filter(|(_, _, n)| *n >= min_count)
        .collect();
    let kept_pred: Vec<_> = counts
        .predicate_phrases
        .iter()
        .filter(|(_, _, _, n)| *n >= min_count)
        .collect();

    let mut cats: BTreeSet<&str> = BTreeSet::new();
    let mut attrs: BTreeSet<&str> = BTreeSet::new();
    let mut preds: BTreeSet<&str> = BTreeSet::new();
    for (s, a, _) in &kept_attr {
        cats.insert(s);
        attrs.insert(a);
    }
    for (s, p, o, _) in &kept_pred {
        cats.insert(s);
        cats.insert(o);
        preds.insert(p);
    }

    let categories: Vec<String> = cats.iter().map(|s| s.to_string()).collect();
    let attributes: Vec<String> = attrs.iter().map(|s| s.to_string()).collect();
    let predicates: Vec<String> = preds.iter().map(|s| s.to_string()).collect();
    let cat_idx: BTreeMap<&str, u32> = categories
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i as u32))
        .collect();
    let attr_idx: BTreeMap<&str, u32> = attributes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i as u32))
        .collect();
    let pred_idx: BTreeMap<&str, u32> = predicates
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i as u32))
        .collect();

    let attr_edge_list = kept_attr
        .iter()
        .map(|(s, a, _)| (cat_idx[s.as_str()], attr_idx[a.as_str()]))
        .collect();
    let pred_edge_list = kept_pred
        .iter()
        .map(|(s, p, o, _)| (cat_idx[s.as_str()], pred_idx[p.as_str()], cat_idx[o.as_str()]))
        .collect();
    SemanticGraph::from_parts(
        categories,
        attributes,
        predicates,
        attr_edge_list,
        pred_edge_list,
    )
}
