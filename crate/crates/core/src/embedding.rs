//! Embedding vectors for hierarchy nodes and their bottom-up aggregation.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use thiserror::Error;

use crate::dataset::format_float;
use crate::hierarchy::{Hierarchy, NodeId};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("no embedding for leaf {0}")]
    MissingLeaf(NodeId),
    #[error("no embedding for node {0}")]
    MissingNode(NodeId),
    #[error("vector for {node} has length {got}, expected {expected}")]
    DimensionMismatch { node: NodeId, got: usize, expected: usize },
    #[error("node {0} is not in the hierarchy")]
    UnknownNode(NodeId),
    #[error("bad embedding file: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Map from node to a vector of fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<NodeId, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, node: NodeId, vector: Vec<f64>) -> Result<(), EmbeddingError> {
        if vector.len() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                node,
                got: vector.len(),
                expected: self.dim,
            });
        }
        self.vectors.insert(node, vector);
        Ok(())
    }

    pub fn get(&self, node: NodeId) -> Option<&[f64]> {
        self.vectors.get(&node).map(Vec::as_slice)
    }

    pub fn require(&self, node: NodeId) -> Result<&[f64], EmbeddingError> {
        self.get(node).ok_or(EmbeddingError::MissingNode(node))
    }

    /// Entries in `(level, index)` order.
    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &[f64])> {
        self.vectors.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    /// True when every node of `hierarchy` has a vector.
    pub fn covers(&self, hierarchy: &Hierarchy) -> bool {
        (0..hierarchy.num_levels()).all(|r| hierarchy.nodes(r).all(|n| self.vectors.contains_key(&n)))
    }

    /// Writes `level,index,label,dim_1..dim_q` with one-based level and index.
    pub fn write_csv<W: Write>(&self, writer: W, hierarchy: &Hierarchy) -> Result<(), EmbeddingError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["level".to_string(), "index".into(), "label".into()];
        header.extend((1..=self.dim).map(|u| format!("dim_{u}")));
        w.write_record(&header)?;
        for (node, v) in self.iter() {
            if !hierarchy.contains(node) {
                return Err(EmbeddingError::UnknownNode(node));
            }
            let mut rec = vec![
                (node.level + 1).to_string(),
                (node.index + 1).to_string(),
                hierarchy.label(node).to_string(),
            ];
            rec.extend(v.iter().map(|&x| format_float(x)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| EmbeddingError::Format(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, hierarchy: &Hierarchy) -> Result<Self, EmbeddingError> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.len() < 4 || &headers[0] != "level" || &headers[1] != "index" || &headers[2] != "label" {
            return Err(EmbeddingError::Format(
                "header must be level,index,label,dim_1,...".into(),
            ));
        }
        let dim = headers.len() - 3;
        let mut table = Self::new(dim);
        for rec in r.records() {
            let rec = rec?;
            let parse_pos = |s: &str| -> Result<usize, EmbeddingError> {
                s.trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&v| v >= 1)
                    .ok_or_else(|| EmbeddingError::Format(format!("bad position '{s}'")))
            };
            let node = NodeId::new(parse_pos(&rec[0])? - 1, parse_pos(&rec[1])? - 1);
            if !hierarchy.contains(node) {
                return Err(EmbeddingError::UnknownNode(node));
            }
            if hierarchy.label(node) != &rec[2] {
                return Err(EmbeddingError::Format(format!(
                    "label '{}' does not match node {node} ('{}')",
                    &rec[2],
                    hierarchy.label(node)
                )));
            }
            let v = (3..rec.len())
                .map(|j| {
                    rec[j]
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| EmbeddingError::Format(format!("bad value '{}'", &rec[j])))
                })
                .collect::<Result<Vec<_>, _>>()?;
            table.insert(node, v)?;
        }
        Ok(table)
    }
}

/// Fills every non-leaf level with the mean of its children's vectors,
/// working from the level above the leaves up to the top.
///
/// Leaf vectors are copied unchanged; existing upper-level entries are
/// recomputed, so applying this twice gives the same table.
pub fn aggregate_up(leaf_table: &EmbeddingTable, hierarchy: &Hierarchy) -> Result<EmbeddingTable, EmbeddingError> {
    let mut out = EmbeddingTable::new(leaf_table.dim);
    for leaf in hierarchy.leaves() {
        let v = leaf_table.get(leaf).ok_or(EmbeddingError::MissingLeaf(leaf))?;
        out.insert(leaf, v.to_vec())?;
    }
    for r in (0..hierarchy.leaf_level()).rev() {
        for node in hierarchy.nodes(r) {
            let children = hierarchy.children(node);
            let mut mean = vec![0.0; out.dim];
            for c in &children {
                for (m, x) in mean.iter_mut().zip(&out.vectors[c]) {
                    *m += x;
                }
            }
            let k = children.len() as f64;
            mean.iter_mut().for_each(|m| *m /= k);
            out.vectors.insert(node, mean);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_two() -> Hierarchy {
        Hierarchy::from_leaf_paths(&[vec!["a", "x"], vec!["a", "y"], vec!["b", "z"]]).unwrap()
    }

    #[test]
    fn parent_is_mean_of_children() {
        let h = two_two();
        let mut t = EmbeddingTable::new(2);
        t.insert(NodeId::new(1, 0), vec![1.0, 2.0]).unwrap();
        t.insert(NodeId::new(1, 1), vec![3.0, 4.0]).unwrap();
        t.insert(NodeId::new(1, 2), vec![5.0, 6.0]).unwrap();
        let full = aggregate_up(&t, &h).unwrap();
        assert_eq!(full.get(NodeId::new(0, 0)).unwrap(), &[2.0, 3.0]);
        assert_eq!(full.get(NodeId::new(0, 1)).unwrap(), &[5.0, 6.0]);
        assert!(full.covers(&h));
        assert_eq!(aggregate_up(&full, &h).unwrap(), full);
    }

    #[test]
    fn missing_leaf_is_an_error() {
        let h = two_two();
        let mut t = EmbeddingTable::new(1);
        t.insert(NodeId::new(1, 0), vec![1.0]).unwrap();
        assert!(matches!(
            aggregate_up(&t, &h),
            Err(EmbeddingError::MissingLeaf(n)) if n == NodeId::new(1, 1)
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let h = two_two();
        let mut t = EmbeddingTable::new(2);
        t.insert(NodeId::new(1, 0), vec![0.1 + 0.2, -1e-300]).unwrap();
        t.insert(NodeId::new(1, 1), vec![std::f64::consts::PI, 7.0]).unwrap();
        t.insert(NodeId::new(1, 2), vec![1.0 / 3.0, 0.0]).unwrap();
        let full = aggregate_up(&t, &h).unwrap();
        let mut buf = Vec::new();
        full.write_csv(&mut buf, &h).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("level,index,label,dim_1,dim_2\n"));
        let back = EmbeddingTable::read_csv(buf.as_slice(), &h).unwrap();
        assert_eq!(back, full);
    }
}
