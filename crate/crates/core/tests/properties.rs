//! Randomized invariants of the data, checkpoint, scoring and optimizer
//! layers.

use proptest::prelude::*;

use kamal_core::amalgam::LabelMap;
use kamal_core::data::{batches, parse_idx, write_idx_images, write_idx_labels};
use kamal_core::kalearn::predict_from_scores;
use kamal_core::nets::{build_network, decode_container, encode_network, merged_width, network_from_container};
use kamal_core::optim::sgd_step;
use kamal_core::{ClassSplit, NetworkSpec, Param, Rng, Tensor};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batches_cover_each_index_once(n in 1usize..200, bs in 1usize..40, seed: u64, epoch in 0u64..5, shuffle: bool) {
        let b = batches(n, bs, seed, epoch, shuffle);
        let mut all: Vec<usize> = b.iter().flatten().copied().collect();
        prop_assert!(b.iter().all(|x| !x.is_empty() && x.len() <= bs));
        prop_assert!(b[..b.len() - 1].iter().all(|x| x.len() == bs));
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn equal_splits_partition_the_classes(classes in 2usize..30, parts in 2usize..5, seed: u64) {
        prop_assume!(parts <= classes);
        let ids: Vec<usize> = (0..classes).map(|c| c * 3 + 1).collect();
        let split = ClassSplit::random_equal(&ids, parts, &[], seed).unwrap();
        let sizes: Vec<usize> = split.parts.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut all: Vec<usize> = split.parts.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, ids);
        prop_assert!(split.parts.iter().all(|p| p.windows(2).all(|w| w[0] < w[1])));
    }

    #[test]
    fn shared_classes_land_in_every_part(seed: u64, shared in 0usize..8) {
        let ids: Vec<usize> = (0..8).collect();
        let split = ClassSplit::random_equal(&ids, 3, &[shared], seed).unwrap();
        prop_assert!(split.parts.iter().all(|p| p.contains(&shared)));
        prop_assert_eq!(split.all_classes(), ids);
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise(c in 1usize..3, hw in 4usize..9, w1 in 1usize..5, w2 in 1usize..5, fc in 1usize..6, classes in 2usize..5, seed: u64) {
        let spec = NetworkSpec::conv_stack([c, hw, hw], &[w1, w2], &[fc], classes).unwrap();
        let net = build_network::<f32>(&spec, &mut Rng::new(seed)).unwrap().with_identity_fams().unwrap();
        let bytes = encode_network(&net);
        let back = network_from_container(decode_container(&bytes).unwrap()).unwrap();
        prop_assert!(back.bitwise_eq(&net));
        prop_assert_eq!(encode_network(&back), bytes);
    }

    #[test]
    fn prediction_ignores_monotone_transforms(seed: u64, scale in 0.1f32..10.0, shift in -5.0f32..5.0) {
        let mut rng = Rng::new(seed);
        let parts = vec![vec![0, 1, 2], vec![2, 3], vec![4, 5, 0]];
        let map = LabelMap::new(&parts);
        let e = map.entry_count();
        let scores = Tensor::new(&[16, e], (0..16 * e).map(|_| rng.uniform(-3.0, 3.0)).collect()).unwrap();
        let monotone = scores.map(|v| scale * v * v * v + scale * v + shift);
        prop_assert_eq!(predict_from_scores(&scores, &map).unwrap(), predict_from_scores(&monotone, &map).unwrap());
    }

    #[test]
    fn merged_width_stays_in_the_open_interval(w in 1usize..200, n in 2usize..6, ratio in 0.01f64..0.99) {
        if let Some(m) = merged_width(w, n, ratio) {
            prop_assert!(w < m && m < n * w);
        } else {
            prop_assert!(n * w - w < 2);
        }
    }

    #[test]
    fn idx_round_trip(n in 1usize..6, h in 1usize..5, w in 1usize..5, seed: u64) {
        let mut rng = Rng::new(seed);
        let pixels: Vec<u8> = (0..n * h * w).map(|_| rng.below(256) as u8).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.below(10) as u8).collect();
        let set = parse_idx(&write_idx_images(n, h, w, &pixels), &write_idx_labels(&labels)).unwrap();
        prop_assert_eq!(set.images.shape(), &[n, 1, h, w]);
        for (v, &p) in set.images.data().iter().zip(&pixels) {
            prop_assert_eq!(*v, p as f32 / 255.0);
        }
        prop_assert_eq!(set.labels, labels.iter().map(|&l| l as usize).collect::<Vec<_>>());
    }

    #[test]
    fn zero_learning_rate_is_a_bitwise_noop(seed: u64, momentum in 0.0f32..0.99, wd in 0.0f32..0.1) {
        let mut rng = Rng::new(seed);
        let value = Tensor::new(&[7], (0..7).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let mut ps = vec![Param::new("p", value.clone())];
        ps[0].grad = Tensor::new(&[7], (0..7).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        sgd_step(&mut ps, 0.0, momentum, wd).unwrap();
        prop_assert!(ps[0].value.bitwise_eq(&value));
    }
}
