mod common;

use std::collections::BTreeMap;

use hiercat::embedding::{aggregate_up, EmbeddingTable};
use hiercat::hierarchy::{Hierarchy, NodeId};
use hiercat::reducer::{read_trace, reduce, replay, write_trace, Decision, ReduceError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random hierarchy whose leaf embeddings sit around a few shared centres.
fn instance(seed: u64) -> (Hierarchy, EmbeddingTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels = rng.random_range(1..=4);
    let top = rng.random_range(1..=4);
    let h = common::random_hierarchy(&mut rng, levels, top, 4);
    let k = rng.random_range(1..=4);
    let centres = common::random_points(&mut rng, k, 2, 3.0);
    let spread = [0.0, 0.05, 0.5][rng.random_range(0..3)];
    let mut leaves = EmbeddingTable::new(2);
    for leaf in h.leaves() {
        let c = &centres[rng.random_range(0..centres.len())];
        let v = c.iter().map(|x| x + spread * rng.random_range(-1.0..1.0)).collect();
        leaves.insert(leaf, v).unwrap();
    }
    let table = aggregate_up(&leaves, &h).unwrap();
    (h, table)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn every_class_is_kept_or_collapsed_once(seed in any::<u64>(), si in -1.0f64..=1.0) {
        let (h, table) = instance(seed);
        let (red, trace) = reduce(&h, &table, si, seed).unwrap();
        let mut count: BTreeMap<NodeId, usize> = BTreeMap::new();
        for class in red.levels.iter().flatten() {
            for m in &class.members {
                prop_assert_eq!(m.level, class.id.level);
                *count.entry(*m).or_default() += 1;
            }
        }
        for rec in &trace {
            if let Decision::Collapse { members } = &rec.decision {
                for m in members {
                    *count.entry(*m).or_default() += 1;
                }
            }
        }
        for r in 0..h.num_levels() {
            for n in h.nodes(r) {
                prop_assert_eq!(count.get(&n).copied(), Some(1), "node {}", n);
            }
        }
    }

    #[test]
    fn leaf_groups_contain_their_leaves(seed in any::<u64>(), si in -1.0f64..=1.0) {
        let (h, table) = instance(seed);
        let (red, _) = reduce(&h, &table, si, seed).unwrap();
        prop_assert_eq!(red.leaf_group.len(), h.num_leaves());
        for (leaf, g) in h.leaves().zip(&red.leaf_group) {
            let anc = h.ancestor_at(leaf, g.level).unwrap();
            prop_assert!(red.class(*g).members.contains(&anc));
        }
        let (groups, per_leaf) = red.leaf_grouping();
        prop_assert_eq!(groups.len(), red.num_groups());
        prop_assert!(per_leaf.iter().all(|&g| g < groups.len()));
        for class in red.levels.iter().flatten() {
            if let Some(p) = class.parent {
                prop_assert!(p.level < class.id.level);
                prop_assert!(red.children_of(p).contains(&class.id));
            } else {
                prop_assert_eq!(class.id.level, 0);
            }
        }
    }

    #[test]
    fn replay_rebuilds_the_same_structure(seed in any::<u64>(), si in -1.0f64..=1.0) {
        let (h, table) = instance(seed);
        let (red, trace) = reduce(&h, &table, si, seed).unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace).unwrap();
        let back = read_trace(buf.as_slice()).unwrap();
        prop_assert_eq!(&back, &trace);
        prop_assert_eq!(replay(&h, &table, &back).unwrap(), red.clone());
        let (again, _) = reduce(&h, &table, si, seed).unwrap();
        prop_assert_eq!(again, red);
    }

    #[test]
    fn thresholds_outside_range_are_rejected(seed in any::<u64>(), excess in 1e-9f64..10.0, above in any::<bool>()) {
        let (h, table) = instance(seed);
        let si = if above { 1.0 + excess } else { -1.0 - excess };
        prop_assert!(matches!(reduce(&h, &table, si, seed), Err(ReduceError::InvalidSiStar(_))));
    }
}

#[test]
fn identical_embeddings_collapse_to_one_group() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = common::random_hierarchy(&mut rng, 3, 3, 3);
    let mut leaves = EmbeddingTable::new(2);
    for leaf in h.leaves() {
        leaves.insert(leaf, vec![0.3, -1.2]).unwrap();
    }
    let table = aggregate_up(&leaves, &h).unwrap();
    let (red, _) = reduce(&h, &table, 0.7, 0).unwrap();
    assert_eq!(red.level_sizes(), vec![1]);
    assert_eq!(red.num_groups(), 1);
}
