use std::collections::BTreeSet;

use proptest::prelude::*;
use udgen_core::features::{style_distance, FeatureBank};
use udgen_core::latent::{agglomerative_cluster, build_patch_space, representative_index, ClusterAssignment, Linkage};
use udgen_core::policy::{cell_probs, PolicyKind};
use udgen_core::seg::UncertaintyTable;
use udgen_core::synth::{Dataset, Patch};

fn partition(labels: &[usize], order: &[usize]) -> BTreeSet<BTreeSet<usize>> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut groups = vec![BTreeSet::new(); k];
    for (pos, &l) in labels.iter().enumerate() {
        groups[l].insert(order[pos]);
    }
    groups.into_iter().collect()
}

fn dataset(labeled: &[bool]) -> Dataset {
    let patches = labeled
        .iter()
        .map(|&l| Patch {
            size: 8,
            pixels: vec![0.5; 8 * 8 * 3],
            source_id: 0,
            offset: (0, 0),
            labeled: l,
            mask: l.then(|| vec![0; 64]),
            reference_mask: None,
            true_content: None,
            true_style: None,
        })
        .collect();
    Dataset::from_patches(patches).unwrap()
}

prop_compose! {
    fn points()(n in 3usize..14, dim in 1usize..4)
        (vals in prop::collection::vec(-10.0f64..10.0, n * dim), dim in Just(dim), shuffle in Just((0..n).collect::<Vec<_>>()).prop_shuffle())
        -> (Vec<Vec<f64>>, Vec<usize>)
    {
        // Continuous coordinates: merge distances tie with probability zero.
        (vals.chunks(dim).map(|c| c.to_vec()).collect(), shuffle)
    }
}

prop_compose! {
    fn random_space()(m in 1usize..4, n in 1usize..4, len in 8usize..40)
        (content in prop::collection::vec(0..m, len), style in prop::collection::vec(0..n, len),
         labeled in prop::collection::vec(any::<bool>(), len), m in Just(m), n in Just(n),
         u in prop::collection::vec(0.0f64..1.0, m * n))
        -> (usize, usize, Vec<usize>, Vec<usize>, Vec<bool>, Vec<f64>)
    {
        (m, n, content, style, labeled, u)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clustering_is_permutation_stable((pts, order) in points(), k in 1usize..4) {
        let k = k.min(pts.len());
        for linkage in [Linkage::Average, Linkage::Complete, Linkage::Single] {
            let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
            let base = agglomerative_cluster(&refs, k, linkage).unwrap();
            let shuffled: Vec<&[f64]> = order.iter().map(|&i| pts[i].as_slice()).collect();
            let other = agglomerative_cluster(&shuffled, k, linkage).unwrap();
            let identity: Vec<usize> = (0..pts.len()).collect();
            prop_assert_eq!(partition(&base.labels, &identity), partition(&other.labels, &order));
        }
    }

    #[test]
    fn medoid_is_a_member_minimizing_total_distance(vals in prop::collection::vec(-5.0f64..5.0, 3..60)) {
        let pts: Vec<Vec<f64>> = vals.chunks(3).map(|c| c.to_vec()).collect();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let best = representative_index(&refs).unwrap();
        let cost = |i: usize| -> f64 {
            refs.iter().map(|b| refs[i].iter().zip(*b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()).sum()
        };
        for i in 0..refs.len() {
            prop_assert!(cost(best) <= cost(i) + 1e-12);
        }
    }

    #[test]
    fn patch_space_partitions_and_tables_normalize((m, n, content, style, labeled, u) in random_space()) {
        let ds = dataset(&labeled);
        let c = ClusterAssignment::new(m, content).unwrap();
        let s = ClusterAssignment::new(n, style).unwrap();
        let space = build_patch_space(&c, &s, &ds).unwrap();
        let mut seen: Vec<usize> = space.cells.iter().flat_map(|c| c.members.clone()).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..ds.len()).collect::<Vec<_>>());
        let n_unlabel = space.cells.iter().map(|c| c.n_unlabel).collect();
        let table = UncertaintyTable::new(m, n, u.clone(), n_unlabel).unwrap();
        for kind in PolicyKind::ALL {
            if let Ok(p) = cell_probs(&space, kind, Some(&table)) {
                prop_assert!((p.sum() - 1.0).abs() < 1e-12);
                prop_assert!(p.probs.iter().all(|&v| v >= 0.0));
            }
        }
        if let Ok(hc) = cell_probs(&space, PolicyKind::HardCase, Some(&table)) {
            for a in 0..m * n {
                for b in 0..m * n {
                    if hc.probs[a] > 0.0 && hc.probs[b] > 0.0 && u[a] < u[b] {
                        prop_assert!(hc.probs[a] <= hc.probs[b]);
                    }
                }
            }
        }
    }

    #[test]
    fn style_distance_axioms(a in prop::collection::vec(0.0f64..1.0, 8 * 8 * 3), b in prop::collection::vec(0.0f64..1.0, 8 * 8 * 3), seed in 0u64..50) {
        let bank = FeatureBank::new(seed);
        let dab = style_distance(&a, &b, 8, &bank).unwrap();
        let dba = style_distance(&b, &a, 8, &bank).unwrap();
        prop_assert!(dab >= 0.0);
        prop_assert!((dab - dba).abs() <= 1e-12 * dab.max(1.0));
        prop_assert_eq!(style_distance(&a, &a, 8, &bank).unwrap(), 0.0);
    }
}
