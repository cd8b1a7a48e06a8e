//! Rooted, single-parent hierarchies of class labels.
//!
//! A hierarchy has `R` levels. Level 0 holds the coarsest classes and level
//! `R - 1` the most granular ones (the leaves). Every class below the top level
//! has exactly one parent one level up, and every class above the leaf level has
//! at least one child, so each leaf determines a unique path to the top.
//!
//! Node identity is `(level, index)`; indices are assigned in first-appearance
//! order of the labels in the input.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HierarchyError {
    #[error("node {child} has more than one parent ({first} and {second})")]
    MultiParent {
        child: NodeId,
        first: NodeId,
        second: NodeId,
    },
    #[error("node {0} is below the top level but has no parent")]
    OrphanNode(NodeId),
    #[error("interior node {0} has no children")]
    EmptyInterior(NodeId),
    #[error("parent {parent} of {child} is not exactly one level above it")]
    LevelGap { child: NodeId, parent: NodeId },
    #[error("node {0} is not a leaf")]
    NotALeaf(NodeId),
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("hierarchy has no levels")]
    NoLevels,
    #[error("duplicate leaf row for leaf '{0}'")]
    DuplicateLeaf(String),
    #[error("row {row} has {found} columns, expected {expected}")]
    RaggedRow { row: usize, found: usize, expected: usize },
    #[error("duplicate label '{label}' at level {level}")]
    DuplicateLabel { level: usize, label: String },
    #[error("csv error: {0}")]
    Csv(String),
}

/// Identity of a class: zero-based level and zero-based index within the level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub level: usize,
    pub index: usize,
}

impl NodeId {
    pub const fn new(level: usize, index: usize) -> Self {
        Self { level, index }
    }
}

impl fmt::Display for NodeId {
    // One-based, matching the usual h_{r,s} notation.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h{}_{}", self.level + 1, self.index + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Node {
    label: String,
    parent: Option<usize>,
    children: Vec<usize>,
}

/// A validated hierarchy. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    levels: Vec<Vec<Node>>,
}

/// Unvalidated description of a hierarchy: nodes per level and parent links.
///
/// `build` runs the structural checks and produces a [`Hierarchy`].
#[derive(Debug, Clone, Default)]
pub struct HierarchyBuilder {
    labels: Vec<Vec<String>>,
    links: Vec<(NodeId, NodeId)>,
}

impl HierarchyBuilder {
    pub fn new(num_levels: usize) -> Self {
        Self {
            labels: vec![Vec::new(); num_levels],
            links: Vec::new(),
        }
    }

    /// Appends a node to `level` and returns its id.
    pub fn add_node(&mut self, level: usize, label: impl Into<String>) -> NodeId {
        let nodes = &mut self.labels[level];
        nodes.push(label.into());
        NodeId::new(level, nodes.len() - 1)
    }

    pub fn link(&mut self, child: NodeId, parent: NodeId) -> &mut Self {
        self.links.push((child, parent));
        self
    }

    pub fn build(self) -> Result<Hierarchy, HierarchyError> {
        validate(&self)?;
        let mut levels: Vec<Vec<Node>> = self
            .labels
            .into_iter()
            .map(|lv| {
                lv.into_iter()
                    .map(|label| Node {
                        label,
                        parent: None,
                        children: Vec::new(),
                    })
                    .collect()
            })
            .collect();
        for (child, parent) in self.links {
            levels[child.level][child.index].parent = Some(parent.index);
        }
        // children listed in index order, independent of link order
        for level in 1..levels.len() {
            for index in 0..levels[level].len() {
                let p = levels[level][index].parent.expect("validated");
                levels[level - 1][p].children.push(index);
            }
        }
        Ok(Hierarchy { levels })
    }
}

/// Checks the single-parent tree invariants on an unvalidated description.
pub fn validate(raw: &HierarchyBuilder) -> Result<(), HierarchyError> {
    let levels = &raw.labels;
    if levels.is_empty() {
        return Err(HierarchyError::NoLevels);
    }
    let exists = |id: NodeId| id.level < levels.len() && id.index < levels[id.level].len();
    for (level, labels) in levels.iter().enumerate() {
        let mut seen = HashSet::new();
        for label in labels {
            if !seen.insert(label.as_str()) {
                return Err(HierarchyError::DuplicateLabel {
                    level,
                    label: label.clone(),
                });
            }
        }
    }
    let mut parent_of: HashMap<NodeId, NodeId> = HashMap::new();
    for &(child, parent) in &raw.links {
        for id in [child, parent] {
            if !exists(id) {
                return Err(HierarchyError::UnknownNode(id));
            }
        }
        if parent.level + 1 != child.level {
            return Err(HierarchyError::LevelGap { child, parent });
        }
        match parent_of.get(&child) {
            Some(&first) if first != parent => {
                return Err(HierarchyError::MultiParent {
                    child,
                    first,
                    second: parent,
                })
            }
            _ => {
                parent_of.insert(child, parent);
            }
        }
    }
    for (level, labels) in levels.iter().enumerate().skip(1) {
        for index in 0..labels.len() {
            let id = NodeId::new(level, index);
            if !parent_of.contains_key(&id) {
                return Err(HierarchyError::OrphanNode(id));
            }
        }
    }
    let parents: HashSet<NodeId> = parent_of.values().copied().collect();
    for (level, labels) in levels.iter().enumerate().take(levels.len() - 1) {
        for index in 0..labels.len() {
            let id = NodeId::new(level, index);
            if !parents.contains(&id) {
                return Err(HierarchyError::EmptyInterior(id));
            }
        }
    }
    Ok(())
}

impl Hierarchy {
    /// Builds a hierarchy from one label path per leaf (top level first).
    pub fn from_leaf_paths<S: AsRef<str>>(paths: &[Vec<S>]) -> Result<Self, HierarchyError> {
        let depth = paths.first().map(Vec::len).unwrap_or(0);
        if depth == 0 {
            return Err(HierarchyError::NoLevels);
        }
        let mut builder = HierarchyBuilder::new(depth);
        let mut ids: Vec<HashMap<String, NodeId>> = vec![HashMap::new(); depth];
        let mut links = HashSet::new();
        for (row, path) in paths.iter().enumerate() {
            if path.len() != depth {
                return Err(HierarchyError::RaggedRow {
                    row,
                    found: path.len(),
                    expected: depth,
                });
            }
            let leaf_label = path[depth - 1].as_ref();
            if ids[depth - 1].contains_key(leaf_label) {
                return Err(HierarchyError::DuplicateLeaf(leaf_label.to_string()));
            }
            let mut prev: Option<NodeId> = None;
            for (level, label) in path.iter().enumerate() {
                let label = label.as_ref();
                let id = match ids[level].get(label) {
                    Some(&id) => id,
                    None => {
                        let id = builder.add_node(level, label);
                        ids[level].insert(label.to_string(), id);
                        id
                    }
                };
                if let Some(parent) = prev {
                    if links.insert((id, parent)) {
                        builder.link(id, parent);
                    }
                }
                prev = Some(id);
            }
        }
        builder.build()
    }

    /// Reads the hierarchy CSV format: header `level_1,...,level_R`, one row per leaf.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, HierarchyError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers().map_err(|e| HierarchyError::Csv(e.to_string()))?.clone();
        for (i, h) in headers.iter().enumerate() {
            if h.trim() != format!("level_{}", i + 1) {
                return Err(HierarchyError::Csv(format!(
                    "expected header column 'level_{}', found '{h}'",
                    i + 1
                )));
            }
        }
        let mut paths = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| HierarchyError::Csv(e.to_string()))?;
            paths.push(rec.iter().map(|s| s.trim().to_string()).collect::<Vec<_>>());
        }
        Self::from_leaf_paths(&paths)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self, HierarchyError> {
        let file = std::fs::File::open(path.as_ref())
            .map_err(|e| HierarchyError::Csv(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_csv_reader(file)
    }

    /// Writes the hierarchy in the leaf-path CSV format.
    pub fn to_csv_string(&self) -> String {
        let mut out = (1..=self.num_levels())
            .map(|r| format!("level_{r}"))
            .collect::<Vec<_>>()
            .join(",");
        out.push('\n');
        for leaf in self.leaves() {
            let path = self.leaf_path(leaf).expect("leaf");
            let row: Vec<&str> = path.iter().map(|&id| self.label(id)).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn leaf_level(&self) -> usize {
        self.levels.len() - 1
    }

    /// Number of classes at `level` (n_r).
    pub fn level_size(&self, level: usize) -> usize {
        self.levels[level].len()
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    pub fn num_leaves(&self) -> usize {
        self.levels[self.leaf_level()].len()
    }

    pub fn nodes(&self, level: usize) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.levels[level].len()).map(move |i| NodeId::new(level, i))
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes(self.leaf_level())
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.level < self.levels.len() && id.index < self.levels[id.level].len()
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.levels[id.level][id.index].label
    }

    pub fn find(&self, level: usize, label: &str) -> Option<NodeId> {
        self.levels
            .get(level)?
            .iter()
            .position(|n| n.label == label)
            .map(|i| NodeId::new(level, i))
    }

    /// Label → leaf id lookup table.
    pub fn leaf_index(&self) -> HashMap<&str, NodeId> {
        self.leaves().map(|id| (self.label(id), id)).collect()
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.levels[id.level][id.index]
            .parent
            .map(|p| NodeId::new(id.level - 1, p))
    }

    /// Direct descendants in index order.
    pub fn children(&self, id: NodeId) -> Vec<NodeId> {
        self.levels[id.level][id.index]
            .children
            .iter()
            .map(|&c| NodeId::new(id.level + 1, c))
            .collect()
    }

    /// The ordered sibling set containing `id` (all top-level nodes for level 0).
    pub fn siblings(&self, id: NodeId) -> Vec<NodeId> {
        match self.parent(id) {
            Some(p) => self.children(p),
            None => self.nodes(0).collect(),
        }
    }

    pub fn ancestor_at(&self, id: NodeId, level: usize) -> Option<NodeId> {
        if level > id.level {
            return None;
        }
        let mut cur = id;
        while cur.level > level {
            cur = self.parent(cur)?;
        }
        Some(cur)
    }

    /// Top-down path from the top level to `leaf`, inclusive.
    pub fn leaf_path(&self, leaf: NodeId) -> Result<Vec<NodeId>, HierarchyError> {
        if !self.contains(leaf) {
            return Err(HierarchyError::UnknownNode(leaf));
        }
        if leaf.level != self.leaf_level() {
            return Err(HierarchyError::NotALeaf(leaf));
        }
        let mut path = Vec::with_capacity(self.num_levels());
        let mut cur = Some(leaf);
        while let Some(id) = cur {
            path.push(id);
            cur = self.parent(id);
        }
        path.reverse();
        Ok(path)
    }

    /// Leaves below `id` (or `id` itself when it is a leaf), in index order.
    pub fn descendant_leaves(&self, id: NodeId) -> Vec<NodeId> {
        let mut frontier = vec![id];
        while frontier.first().is_some_and(|n| n.level < self.leaf_level()) {
            frontier = frontier.iter().flat_map(|&n| self.children(n)).collect();
        }
        frontier
    }
}
