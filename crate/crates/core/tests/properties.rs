//! Cross-module invariants as property tests.

use dyadic_core::adapt::{
    build_adapted_grid_with, random_instance, verify_adapted_grid, BuildMode, GeneratorParams,
};
use dyadic_core::haar::{make_haar, SignScheme};
use dyadic_core::norms::{opnorm_exact_2, opnorm_lower_p, witness_ratio, NormOptions, OperatorHandle};
use dyadic_core::stripe::{gap_for, make_classical_stripes, overlap_bound, verify_s1_s4};
use dyadic_core::{Cube, DyadicSystem, Region, SpaceKind, SpaceModel};
use proptest::prelude::*;

fn sup(dim: usize, depth: u32) -> DyadicSystem {
    DyadicSystem::new(SpaceModel::new(SpaceKind::TorusSup, dim, depth).unwrap())
}

fn cube_in(dim: usize, depth: u32) -> impl Strategy<Value = Cube> {
    (0..=depth).prop_flat_map(move |level| {
        proptest::collection::vec(0..(1u32 << level), dim).prop_map(move |c| Cube::new(level, &c).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn children_partition_their_parent(c in cube_in(2, 5)) {
        let s = sup(2, 6);
        let kids: Vec<Region> = c.children().map(|k| s.cells(&k)).collect();
        let total: usize = kids.iter().map(Region::len).sum();
        prop_assert_eq!(total, s.cell_count_of(&c));
        prop_assert_eq!(Region::union_all(kids.iter()), s.cells(&c));
        prop_assert_eq!(s.cells(&c), s.cells_by_coords(&c));
    }

    #[test]
    fn diamonds_grow_with_radius(c in cube_in(1, 9), r in 0.1f64..6.0, extra in 0.0f64..4.0) {
        let s = sup(1, 9);
        let small = s.diamond(&c, r);
        prop_assert!(s.cells(&c).is_subset(&small));
        prop_assert!(small.is_subset(&s.diamond(&c, r + extra)));
        prop_assert!(s.diamond_in_ball(&c, r).holds);
    }

    #[test]
    fn indexed_build_matches_full_scan(seed in any::<u64>(), planar in any::<bool>()) {
        let s = if planar { sup(2, 5) } else { sup(1, 10) };
        let input = random_instance(&s, &GeneratorParams::new(&s, 4.0, seed));
        let fast = build_adapted_grid_with(&s, &input, BuildMode::Indexed).unwrap();
        let slow = build_adapted_grid_with(&s, &input, BuildMode::FullScan).unwrap();
        prop_assert_eq!(fast.to_json().unwrap(), slow.to_json().unwrap());
        prop_assert!(verify_adapted_grid(&s, &input, &fast).ok);
    }

    #[test]
    fn classical_stripes_satisfy_overlap_bound(lambda in 1u32..=4, a in cube_in(1, 2), m in 1usize..=16, n in 1usize..=16) {
        let s = sup(1, 10);
        let family = make_classical_stripes(&s, lambda).unwrap();
        prop_assume!(m <= family.m_count() && n <= family.m_count());
        prop_assert!(verify_s1_s4(&s, &family).ok);
        for k in 1..=gap_for(&s, &family, 1.0) {
            prop_assert!(overlap_bound(&s, &family, &a, m, n, k).unwrap().holds);
        }
    }

    #[test]
    fn lower_bounds_are_witnessed(
        weights in proptest::collection::vec(-2.0f64..2.0, 15),
        shift in 1u64..6,
        p in 1.2f64..6.0,
    ) {
        let s = sup(1, 4);
        let haar = make_haar(&s, SignScheme::FirstHalf);
        let cubes: Vec<Cube> = (0..4).flat_map(|n| s.cubes_at(n)).collect();
        let map = cubes
            .iter()
            .zip(&weights)
            .map(|(c, &w)| (*c, vec![(*c, 1.0), (c.translate(0, shift), w)]))
            .collect();
        let op = OperatorHandle::new(&haar, "random multiplier", map).unwrap();
        let e = opnorm_lower_p(&op, p, NormOptions { restarts: 2, seed: 1 }).unwrap();
        let r = witness_ratio(&haar, &op, &e.witness, p).unwrap();
        prop_assert!((r - e.value).abs() <= 1e-12 * e.value);
        prop_assert!(e.value <= e.upper_bound * (1.0 + 1e-12));
        let exact = opnorm_exact_2(&op, NormOptions::default()).unwrap();
        let nonlinear = opnorm_lower_p(&op, 2.0, NormOptions::default()).unwrap();
        prop_assert!(nonlinear.value <= exact.value + 1e-6);
        prop_assert!(nonlinear.value >= exact.value - 1e-6, "{} vs {}", nonlinear.value, exact.value);
    }
}
