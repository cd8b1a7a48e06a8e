//! Top-down reduction of a hierarchy from its node embeddings.
//!
//! Levels are processed from the top. At each level a horizontal step merges
//! classes that share a (reduced) parent, and a vertical step collapses child
//! classes that are indistinguishable from their parent. Collapsed classes form
//! pseudoclusters that carry the parent's embedding downwards; their remaining
//! children are still clustered, which allows ragged reduced structures.
//!
//! Every clustering decision goes through a [`Decider`]. Live runs use
//! [`select_k`](crate::clustering::select_k); replays read a recorded trace.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{select_k, ClusterError};
use crate::embedding::{EmbeddingError, EmbeddingTable};
use crate::hierarchy::{Hierarchy, NodeId};
use crate::seed;

#[derive(Debug, Error)]
pub enum ReduceError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("si_star must lie in [-1, 1], got {0}")]
    InvalidSiStar(f64),
    #[error("trace does not match this run: {0}")]
    ReplayMismatch(String),
    #[error("invalid reduced structure: {0}")]
    InvalidStructure(String),
    #[error("trace io: {0}")]
    Io(String),
}

/// Identifier of a class in the reduced hierarchy (zero-based level and index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReducedId {
    pub level: usize,
    pub index: usize,
}

impl fmt::Display for ReducedId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rh{}_{}", self.level + 1, self.index + 1)
    }
}

/// A reduced class formed by merging original classes of one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterNode {
    pub id: ReducedId,
    pub members: Vec<NodeId>,
    pub embedding: Vec<f64>,
    pub descendants_all: Vec<NodeId>,
    pub descendants_active: Vec<NodeId>,
    pub parent: Option<ReducedId>,
}

/// Original classes collapsed into an ancestor's reduced class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoCluster {
    pub level: usize,
    pub index: usize,
    pub members: Vec<NodeId>,
    pub inherited_embedding: Vec<f64>,
    pub descendants_all: Vec<NodeId>,
    pub descendants_active: Vec<NodeId>,
    pub target: ReducedId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedClass {
    pub id: ReducedId,
    pub members: Vec<NodeId>,
    pub parent: Option<ReducedId>,
}

/// Result of a reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedHierarchy {
    pub levels: Vec<Vec<ReducedClass>>,
    pub children: BTreeMap<ReducedId, Vec<ReducedId>>,
    /// Reduced class of every original leaf, indexed by leaf index.
    pub leaf_group: Vec<ReducedId>,
}

/// Order-free description of a reduced structure in terms of original classes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StructureKey {
    classes: BTreeSet<(usize, Vec<NodeId>, Option<(usize, Vec<NodeId>)>)>,
    groups: BTreeSet<(Vec<usize>, usize, Vec<NodeId>)>,
}

impl ReducedHierarchy {
    /// Builds a reduced hierarchy from explicit classes. `parent` refers to a
    /// position in `classes`. Each leaf is grouped with the deepest class whose
    /// members contain the leaf or one of its ancestors.
    pub fn from_classes(
        hierarchy: &Hierarchy,
        classes: &[(usize, Vec<NodeId>, Option<usize>)],
    ) -> Result<Self, ReduceError> {
        let mut levels: Vec<Vec<ReducedClass>> = vec![Vec::new(); hierarchy.num_levels()];
        let mut ids = Vec::with_capacity(classes.len());
        for (level, members, _) in classes {
            if *level >= hierarchy.num_levels() {
                return Err(ReduceError::InvalidStructure(format!("level {level} out of range")));
            }
            if members.is_empty() || members.iter().any(|m| m.level != *level || !hierarchy.contains(*m)) {
                return Err(ReduceError::InvalidStructure(format!(
                    "class at level {} has bad members",
                    level + 1
                )));
            }
            let id = ReducedId {
                level: *level,
                index: levels[*level].len(),
            };
            ids.push(id);
            let mut members = members.clone();
            members.sort();
            levels[*level].push(ReducedClass {
                id,
                members,
                parent: None,
            });
        }
        let mut children: BTreeMap<ReducedId, Vec<ReducedId>> = BTreeMap::new();
        for (i, (_, _, parent)) in classes.iter().enumerate() {
            if let Some(p) = parent {
                let pid = *ids
                    .get(*p)
                    .ok_or_else(|| ReduceError::InvalidStructure(format!("parent {p} out of range")))?;
                if pid.level >= ids[i].level {
                    return Err(ReduceError::InvalidStructure("parent must be on a higher level".into()));
                }
                levels[ids[i].level][ids[i].index].parent = Some(pid);
                children.entry(pid).or_default().push(ids[i]);
            }
        }
        let leaf_group = deepest_groups(hierarchy, &levels)?;
        while levels.last().is_some_and(Vec::is_empty) {
            levels.pop();
        }
        Ok(Self {
            levels,
            children,
            leaf_group,
        })
    }

    /// Number of reduced levels.
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    pub fn class(&self, id: ReducedId) -> &ReducedClass {
        &self.levels[id.level][id.index]
    }

    pub fn children_of(&self, id: ReducedId) -> &[ReducedId] {
        self.children.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Distinct leaf groups in id order and the group position of every leaf.
    pub fn leaf_grouping(&self) -> (Vec<ReducedId>, Vec<usize>) {
        let groups: Vec<ReducedId> = self
            .leaf_group
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let pos: HashMap<ReducedId, usize> = groups.iter().enumerate().map(|(i, g)| (*g, i)).collect();
        let per_leaf = self.leaf_group.iter().map(|g| pos[g]).collect();
        (groups, per_leaf)
    }

    pub fn num_groups(&self) -> usize {
        self.leaf_group.iter().collect::<BTreeSet<_>>().len()
    }

    pub fn structure_key(&self) -> StructureKey {
        let key_of = |id: ReducedId| (id.level, self.class(id).members.clone());
        let classes = self
            .levels
            .iter()
            .flatten()
            .map(|c| (c.id.level, c.members.clone(), c.parent.map(key_of)))
            .collect();
        let mut by_group: BTreeMap<ReducedId, Vec<usize>> = BTreeMap::new();
        for (leaf, g) in self.leaf_group.iter().enumerate() {
            by_group.entry(*g).or_default().push(leaf);
        }
        let groups = by_group
            .into_iter()
            .map(|(g, leaves)| {
                let (l, m) = key_of(g);
                (leaves, l, m)
            })
            .collect();
        StructureKey { classes, groups }
    }

    /// True when both structures have the same classes, parent links and leaf groups,
    /// irrespective of numbering.
    pub fn isomorphic(&self, other: &ReducedHierarchy) -> bool {
        self.structure_key() == other.structure_key()
    }

    pub fn to_json(&self, hierarchy: &Hierarchy) -> serde_json::Value {
        let levels: Vec<Vec<serde_json::Value>> = self
            .levels
            .iter()
            .map(|lvl| {
                lvl.iter()
                    .map(|c| {
                        serde_json::json!({
                            "id": c.id.to_string(),
                            "parent": c.parent.map(|p| p.to_string()),
                            "members": c.members.iter().map(|m| hierarchy.label(*m)).collect::<Vec<_>>(),
                            "children": self.children_of(c.id).iter().map(ToString::to_string).collect::<Vec<_>>(),
                        })
                    })
                    .collect()
            })
            .collect();
        let leaf_group: Vec<serde_json::Value> = hierarchy
            .leaves()
            .map(|leaf| {
                serde_json::json!({
                    "leaf": hierarchy.label(leaf),
                    "group": self.leaf_group[leaf.index].to_string(),
                })
            })
            .collect();
        serde_json::json!({
            "num_levels": self.num_levels(),
            "level_sizes": self.level_sizes(),
            "num_groups": self.num_groups(),
            "levels": levels,
            "leaf_group": leaf_group,
        })
    }
}

fn deepest_groups(hierarchy: &Hierarchy, levels: &[Vec<ReducedClass>]) -> Result<Vec<ReducedId>, ReduceError> {
    let mut owner: HashMap<NodeId, ReducedId> = HashMap::new();
    for c in levels.iter().flatten() {
        for m in &c.members {
            if owner.insert(*m, c.id).is_some() {
                return Err(ReduceError::InvalidStructure(format!("{m} belongs to two classes")));
            }
        }
    }
    hierarchy
        .leaves()
        .map(|leaf| {
            let path = hierarchy.leaf_path(leaf).expect("leaf");
            path.iter()
                .rev()
                .find_map(|n| owner.get(n).copied())
                .ok_or_else(|| ReduceError::InvalidStructure(format!("leaf {leaf} has no reduced class")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Step {
    Horizontal,
    Vertical,
}

/// Identifies one clustering call: step, level of the clustered parent unit
/// (or of the items for the top horizontal step) and the unit's position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CallKey {
    pub step: Step,
    pub level: usize,
    pub unit: usize,
}

/// An item presented to the clustering: an original class or the parent unit's embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Item {
    Parent,
    Node(NodeId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub per_item_silhouette: Option<Vec<f64>>,
    pub si_curve: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decision {
    Clusters { created: Vec<ReducedId> },
    Collapse { members: Vec<NodeId> },
    Veto,
    ParentAlone,
}

/// One clustering call and what the reducer did with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub key: CallKey,
    /// Reduced class the unit belongs to (absent for the top horizontal step).
    pub unit_class: Option<ReducedId>,
    pub from_pseudocluster: bool,
    pub items: Vec<Item>,
    pub outcome: Outcome,
    pub decision: Decision,
}

pub fn write_trace<W: Write>(mut w: W, trace: &[TraceRecord]) -> Result<(), ReduceError> {
    for rec in trace {
        let line = serde_json::to_string(rec).map_err(|e| ReduceError::Io(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| ReduceError::Io(e.to_string()))?;
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(r: R) -> Result<Vec<TraceRecord>, ReduceError> {
    r.lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| {
            let l = l.map_err(|e| ReduceError::Io(e.to_string()))?;
            serde_json::from_str(&l).map_err(|e| ReduceError::Io(e.to_string()))
        })
        .collect()
}

/// Source of clustering outcomes.
pub trait Decider: Sync {
    fn decide(&self, key: CallKey, items: &[Item], vectors: &[Vec<f64>]) -> Result<Outcome, ReduceError>;
}

/// Runs `select_k` with a seed derived from the master seed and the call key.
pub struct LiveDecider {
    pub si_star: f64,
    pub seed: u64,
}

impl Decider for LiveDecider {
    fn decide(&self, key: CallKey, _items: &[Item], vectors: &[Vec<f64>]) -> Result<Outcome, ReduceError> {
        let step = match key.step {
            Step::Horizontal => 0,
            Step::Vertical => 1,
        };
        let call_seed = seed::derive(self.seed, &[step, key.level as u64, key.unit as u64]);
        let sol = select_k(vectors, self.si_star, call_seed)?;
        Ok(Outcome {
            k: sol.k,
            assignment: sol.assignment,
            per_item_silhouette: sol.silhouette.map(|s| s.per_item),
            si_curve: sol.si_curve,
        })
    }
}

/// Plays back the outcomes of a recorded trace.
pub struct ReplayDecider {
    records: HashMap<CallKey, (Vec<Item>, Outcome)>,
}

impl ReplayDecider {
    pub fn new(trace: &[TraceRecord]) -> Self {
        Self {
            records: trace
                .iter()
                .map(|r| (r.key, (r.items.clone(), r.outcome.clone())))
                .collect(),
        }
    }
}

impl Decider for ReplayDecider {
    fn decide(&self, key: CallKey, items: &[Item], _vectors: &[Vec<f64>]) -> Result<Outcome, ReduceError> {
        let (recorded, outcome) = self
            .records
            .get(&key)
            .ok_or_else(|| ReduceError::ReplayMismatch(format!("no record for {key:?}")))?;
        if recorded != items {
            return Err(ReduceError::ReplayMismatch(format!("items differ for {key:?}")));
        }
        Ok(outcome.clone())
    }
}

/// Working state of a reduction.
#[derive(Debug, Clone, Default)]
pub struct ReduceState {
    pub clusters: Vec<Vec<ClusterNode>>,
    pub pseudoclusters: Vec<Vec<PseudoCluster>>,
    pub children: BTreeMap<ReducedId, Vec<ReducedId>>,
    pub trace: Vec<TraceRecord>,
}

struct Unit {
    class: Option<ReducedId>,
    pseudo: bool,
    items: Vec<NodeId>,
}

fn children_of_all(hierarchy: &Hierarchy, members: &[NodeId]) -> Vec<NodeId> {
    let mut out: Vec<NodeId> = members.iter().flat_map(|m| hierarchy.children(*m)).collect();
    out.sort();
    out
}

fn mean(vectors: &[&[f64]]) -> Vec<f64> {
    let mut m = vec![0.0; vectors[0].len()];
    for v in vectors {
        for (a, b) in m.iter_mut().zip(v.iter()) {
            *a += b;
        }
    }
    let n = vectors.len() as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}

struct Reducer<'a, D: Decider> {
    hierarchy: &'a Hierarchy,
    table: &'a EmbeddingTable,
    decider: &'a D,
    state: ReduceState,
}

impl<D: Decider> Reducer<'_, D> {
    fn vectors(&self, nodes: &[NodeId]) -> Result<Vec<Vec<f64>>, ReduceError> {
        nodes.iter().map(|n| Ok(self.table.require(*n)?.to_vec())).collect()
    }

    fn horizontal_step(&mut self, r: usize) -> Result<(), ReduceError> {
        let units: Vec<Unit> = if r == 0 {
            vec![Unit {
                class: None,
                pseudo: false,
                items: self.hierarchy.nodes(0).collect(),
            }]
        } else {
            let from_clusters = self.state.clusters[r - 1].iter().map(|c| Unit {
                class: Some(c.id),
                pseudo: false,
                items: c.descendants_active.clone(),
            });
            let from_pseudo = self.state.pseudoclusters[r - 1].iter().map(|f| Unit {
                class: Some(f.target),
                pseudo: true,
                items: f.descendants_active.clone(),
            });
            from_clusters.chain(from_pseudo).collect()
        };
        let inputs = units
            .iter()
            .map(|u| {
                Ok((
                    u.items.iter().map(|n| Item::Node(*n)).collect::<Vec<_>>(),
                    self.vectors(&u.items)?,
                ))
            })
            .collect::<Result<Vec<_>, ReduceError>>()?;
        let outcomes = self.decide_all(Step::Horizontal, r, &inputs)?;

        for (u, (unit, ((items, vectors), outcome))) in units.iter().zip(inputs.into_iter().zip(outcomes)).enumerate() {
            let Some(outcome) = outcome else { continue };
            let mut created = Vec::with_capacity(outcome.k);
            for k in 0..outcome.k {
                let pos: Vec<usize> = (0..unit.items.len()).filter(|&i| outcome.assignment[i] == k).collect();
                if pos.is_empty() {
                    return Err(ReduceError::ReplayMismatch(format!(
                        "empty cluster {k} at level {}",
                        r + 1
                    )));
                }
                let members: Vec<NodeId> = pos.iter().map(|&i| unit.items[i]).collect();
                let embedding = mean(&pos.iter().map(|&i| vectors[i].as_slice()).collect::<Vec<_>>());
                let descendants_all = children_of_all(self.hierarchy, &members);
                let id = ReducedId {
                    level: r,
                    index: self.state.clusters[r].len(),
                };
                self.state.clusters[r].push(ClusterNode {
                    id,
                    members,
                    embedding,
                    descendants_active: descendants_all.clone(),
                    descendants_all,
                    parent: unit.class,
                });
                if let Some(p) = unit.class {
                    self.state.children.entry(p).or_default().push(id);
                }
                created.push(id);
            }
            self.state.trace.push(TraceRecord {
                key: CallKey {
                    step: Step::Horizontal,
                    level: r,
                    unit: u,
                },
                unit_class: unit.class,
                from_pseudocluster: unit.pseudo,
                items,
                outcome,
                decision: Decision::Clusters { created },
            });
        }
        Ok(())
    }

    fn vertical_step(&mut self, r: usize) -> Result<(), ReduceError> {
        struct VUnit {
            class: ReducedId,
            pseudo: Option<usize>,
            cluster: Option<usize>,
            embedding: Vec<f64>,
            children: Vec<NodeId>,
        }
        let mut units: Vec<VUnit> = self.state.clusters[r]
            .iter()
            .enumerate()
            .map(|(i, c)| VUnit {
                class: c.id,
                pseudo: None,
                cluster: Some(i),
                embedding: c.embedding.clone(),
                children: c.descendants_all.clone(),
            })
            .collect();
        units.extend(self.state.pseudoclusters[r].iter().enumerate().map(|(i, f)| VUnit {
            class: f.target,
            pseudo: Some(i),
            cluster: None,
            embedding: f.inherited_embedding.clone(),
            children: f.descendants_all.clone(),
        }));

        let inputs = units
            .iter()
            .map(|u| {
                let mut items = vec![Item::Parent];
                items.extend(u.children.iter().map(|n| Item::Node(*n)));
                let mut vectors = vec![u.embedding.clone()];
                vectors.extend(self.vectors(&u.children)?);
                Ok((items, vectors))
            })
            .collect::<Result<Vec<_>, ReduceError>>()?;
        let outcomes = self.decide_all(Step::Vertical, r, &inputs)?;

        for (u, (unit, ((items, _), outcome))) in units.iter().zip(inputs.into_iter().zip(outcomes)).enumerate() {
            let Some(outcome) = outcome else { continue };
            let (collapsed, decision) = vertical_decision(&unit.children, &outcome)?;
            if !collapsed.is_empty() {
                let descendants_all = children_of_all(self.hierarchy, &collapsed);
                let index = self.state.pseudoclusters[r + 1].len();
                self.state.pseudoclusters[r + 1].push(PseudoCluster {
                    level: r + 1,
                    index,
                    members: collapsed.clone(),
                    inherited_embedding: unit.embedding.clone(),
                    descendants_active: descendants_all.clone(),
                    descendants_all,
                    target: unit.class,
                });
                let keep = |d: &NodeId| !collapsed.contains(d);
                match (unit.cluster, unit.pseudo) {
                    (Some(i), _) => self.state.clusters[r][i].descendants_active.retain(keep),
                    (_, Some(i)) => self.state.pseudoclusters[r][i].descendants_active.retain(keep),
                    _ => unreachable!(),
                }
            }
            self.state.trace.push(TraceRecord {
                key: CallKey {
                    step: Step::Vertical,
                    level: r,
                    unit: u,
                },
                unit_class: Some(unit.class),
                from_pseudocluster: unit.pseudo.is_some(),
                items,
                outcome,
                decision,
            });
        }
        Ok(())
    }

    /// Clustering outcome per unit; units without items are skipped.
    fn decide_all(
        &self,
        step: Step,
        level: usize,
        inputs: &[(Vec<Item>, Vec<Vec<f64>>)],
    ) -> Result<Vec<Option<Outcome>>, ReduceError> {
        inputs
            .par_iter()
            .enumerate()
            .map(|(unit, (items, vectors))| {
                let has_nodes = items.iter().any(|i| matches!(i, Item::Node(_)));
                if !has_nodes {
                    return Ok(None);
                }
                let outcome = self.decider.decide(CallKey { step, level, unit }, items, vectors)?;
                if outcome.assignment.len() != items.len() || outcome.assignment.iter().any(|&a| a >= outcome.k) {
                    return Err(ReduceError::ReplayMismatch(format!(
                        "malformed outcome for {step:?} level {level} unit {unit}"
                    )));
                }
                Ok(Some(outcome))
            })
            .collect()
    }
}

/// Children to collapse for one vertical clustering outcome (item 0 is the parent).
fn vertical_decision(children: &[NodeId], outcome: &Outcome) -> Result<(Vec<NodeId>, Decision), ReduceError> {
    if outcome.k == 1 {
        return Ok((
            children.to_vec(),
            Decision::Collapse {
                members: children.to_vec(),
            },
        ));
    }
    let parent_cluster = outcome.assignment[0];
    let with_parent: Vec<usize> = (1..outcome.assignment.len())
        .filter(|&i| outcome.assignment[i] == parent_cluster)
        .collect();
    if with_parent.is_empty() {
        return Ok((Vec::new(), Decision::ParentAlone));
    }
    let si = outcome
        .per_item_silhouette
        .as_ref()
        .ok_or_else(|| ReduceError::ReplayMismatch("missing silhouette for k >= 2".into()))?;
    let child_min = with_parent.iter().map(|&i| si[i]).fold(f64::INFINITY, f64::min);
    if si[0] < child_min {
        return Ok((Vec::new(), Decision::Veto));
    }
    let members: Vec<NodeId> = with_parent.iter().map(|&i| children[i - 1]).collect();
    Ok((members.clone(), Decision::Collapse { members }))
}

/// Runs all horizontal and vertical steps with the given decider.
pub fn reduce_with<D: Decider>(
    hierarchy: &Hierarchy,
    table: &EmbeddingTable,
    decider: &D,
) -> Result<(ReducedHierarchy, ReduceState), ReduceError> {
    for r in 0..hierarchy.num_levels() {
        for n in hierarchy.nodes(r) {
            table.require(n)?;
        }
    }
    let levels = hierarchy.num_levels();
    let mut reducer = Reducer {
        hierarchy,
        table,
        decider,
        state: ReduceState {
            clusters: vec![Vec::new(); levels],
            pseudoclusters: vec![Vec::new(); levels],
            ..Default::default()
        },
    };
    for r in 0..levels {
        reducer.horizontal_step(r)?;
        if r + 1 < levels {
            reducer.vertical_step(r)?;
        }
    }
    let state = reducer.state;
    let reduced = assemble(hierarchy, &state)?;
    Ok((reduced, state))
}

/// Reduces `hierarchy` using live clustering with threshold `si_star`.
pub fn reduce(
    hierarchy: &Hierarchy,
    table: &EmbeddingTable,
    si_star: f64,
    seed: u64,
) -> Result<(ReducedHierarchy, Vec<TraceRecord>), ReduceError> {
    if !(-1.0..=1.0).contains(&si_star) {
        return Err(ReduceError::InvalidSiStar(si_star));
    }
    let (reduced, state) = reduce_with(hierarchy, table, &LiveDecider { si_star, seed })?;
    Ok((reduced, state.trace))
}

/// Rebuilds the reduced hierarchy from a recorded trace.
pub fn replay(
    hierarchy: &Hierarchy,
    table: &EmbeddingTable,
    trace: &[TraceRecord],
) -> Result<ReducedHierarchy, ReduceError> {
    Ok(reduce_with(hierarchy, table, &ReplayDecider::new(trace))?.0)
}

fn assemble(hierarchy: &Hierarchy, state: &ReduceState) -> Result<ReducedHierarchy, ReduceError> {
    let mut owner: HashMap<NodeId, ReducedId> = HashMap::new();
    for r in 0..hierarchy.num_levels() {
        let mut seen = 0;
        for c in &state.clusters[r] {
            for m in &c.members {
                owner.insert(*m, c.id);
            }
            seen += c.members.len();
        }
        for f in &state.pseudoclusters[r] {
            for m in &f.members {
                owner.insert(*m, f.target);
            }
            seen += f.members.len();
        }
        if seen != hierarchy.level_size(r) || owner.len() != (0..=r).map(|l| hierarchy.level_size(l)).sum::<usize>() {
            return Err(ReduceError::InvalidStructure(format!(
                "level {} classes are not partitioned",
                r + 1
            )));
        }
    }
    let leaf_group = hierarchy.leaves().map(|l| owner[&l]).collect();
    let mut levels: Vec<Vec<ReducedClass>> = state
        .clusters
        .iter()
        .map(|lvl| {
            lvl.iter()
                .map(|c| ReducedClass {
                    id: c.id,
                    members: c.members.clone(),
                    parent: c.parent,
                })
                .collect()
        })
        .collect();
    while levels.last().is_some_and(Vec::is_empty) {
        levels.pop();
    }
    let reduced = ReducedHierarchy {
        levels,
        children: state.children.clone(),
        leaf_group,
    };
    debug_assert_eq!(
        deepest_groups(hierarchy, &reduced.levels).ok().as_ref(),
        Some(&reduced.leaf_group)
    );
    Ok(reduced)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::aggregate_up;

    /// Three top classes with three children each.
    fn toy() -> Hierarchy {
        let paths: Vec<Vec<String>> = (0..9)
            .map(|i| vec![format!("h1_{}", i / 3 + 1), format!("h2_{}", i + 1)])
            .collect();
        Hierarchy::from_leaf_paths(&paths).unwrap()
    }

    fn toy_table() -> EmbeddingTable {
        let mut t = EmbeddingTable::new(2);
        let top = [[0.0, 0.0], [0.1, 0.0], [10.0, 10.0]];
        for (i, v) in top.iter().enumerate() {
            t.insert(NodeId::new(0, i), v.to_vec()).unwrap();
        }
        let leaves = [
            [-3.0, 5.0],
            [-3.02, 5.01],
            [3.0, 5.0],
            [-2.99, 4.98],
            [-3.01, 5.02],
            [3.02, 4.99],
            [10.0, 10.0],
            [10.0, 10.0],
            [10.0, 10.0],
        ];
        for (i, v) in leaves.iter().enumerate() {
            t.insert(NodeId::new(1, i), v.to_vec()).unwrap();
        }
        t
    }

    fn ids(level: usize, idx: &[usize]) -> Vec<NodeId> {
        idx.iter().map(|&i| NodeId::new(level, i)).collect()
    }

    // With three top classes a 2+1 split has silhouette at most 2/3, so the
    // threshold must sit below that for the top classes to split.
    #[test]
    fn toy_example() {
        let h = toy();
        let (red, trace) = reduce(&h, &toy_table(), 0.5, 1).unwrap();
        assert_eq!(red.level_sizes(), vec![2, 2]);
        assert_eq!(red.levels[0][0].members, ids(0, &[0, 1]));
        assert_eq!(red.levels[0][1].members, ids(0, &[2]));
        assert_eq!(red.levels[1][0].members, ids(1, &[0, 1, 3, 4]));
        assert_eq!(red.levels[1][1].members, ids(1, &[2, 5]));
        let top2 = ReducedId { level: 0, index: 1 };
        assert!(red.children_of(top2).is_empty());
        for leaf in 6..9 {
            assert_eq!(red.leaf_group[leaf], top2);
        }
        assert_eq!(red.num_groups(), 3);

        let v = trace
            .iter()
            .find(|t| t.key.step == Step::Vertical && t.unit_class == Some(top2))
            .unwrap();
        assert_eq!(
            v.decision,
            Decision::Collapse {
                members: ids(1, &[6, 7, 8])
            }
        );
    }

    #[test]
    fn identical_embeddings_collapse_fully() {
        let h = toy();
        let mut t = EmbeddingTable::new(2);
        for leaf in h.leaves() {
            t.insert(leaf, vec![1.0, -1.0]).unwrap();
        }
        let t = aggregate_up(&t, &h).unwrap();
        let (red, _) = reduce(&h, &t, 0.5, 0).unwrap();
        assert_eq!(red.num_levels(), 1);
        assert_eq!(red.level_sizes(), vec![1]);
        assert_eq!(red.num_groups(), 1);
    }

    #[test]
    fn si_star_one_collapses_everything() {
        let h = toy();
        let (red, _) = reduce(&h, &toy_table(), 1.0, 0).unwrap();
        assert_eq!(red.level_sizes(), vec![1]);
        assert!(matches!(
            reduce(&h, &toy_table(), 1.01, 0),
            Err(ReduceError::InvalidSiStar(_))
        ));
    }

    #[test]
    fn veto_requires_strict_minimum() {
        let children = ids(1, &[0, 1, 2]);
        let outcome = |si: Vec<f64>| Outcome {
            k: 2,
            assignment: vec![0, 0, 0, 1],
            per_item_silhouette: Some(si),
            si_curve: vec![],
        };
        let (c, d) = vertical_decision(&children, &outcome(vec![0.1, 0.5, 0.4, 0.0])).unwrap();
        assert!(c.is_empty());
        assert_eq!(d, Decision::Veto);
        let (c, _) = vertical_decision(&children, &outcome(vec![0.4, 0.5, 0.4, 0.0])).unwrap();
        assert_eq!(c, ids(1, &[0, 1]));
        let alone = Outcome {
            k: 2,
            assignment: vec![0, 1, 1, 1],
            per_item_silhouette: Some(vec![0.0; 4]),
            si_curve: vec![],
        };
        assert_eq!(vertical_decision(&children, &alone).unwrap().1, Decision::ParentAlone);
    }

    #[test]
    fn trace_replay_reproduces_result() {
        let h = toy();
        let (red, trace) = reduce(&h, &toy_table(), 0.5, 5).unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace).unwrap();
        let back = read_trace(buf.as_slice()).unwrap();
        assert_eq!(back, trace);
        assert_eq!(replay(&h, &toy_table(), &back).unwrap(), red);
    }

    #[test]
    fn explicit_structure_matches_reduction() {
        let h = toy();
        let (red, _) = reduce(&h, &toy_table(), 0.5, 1).unwrap();
        let truth = ReducedHierarchy::from_classes(
            &h,
            &[
                (0, ids(0, &[2]), None),
                (0, ids(0, &[0, 1]), None),
                (1, ids(1, &[2, 5]), Some(1)),
                (1, ids(1, &[0, 1, 3, 4]), Some(1)),
            ],
        )
        .unwrap();
        assert!(red.isomorphic(&truth));
        assert_ne!(red, truth);
    }
}
