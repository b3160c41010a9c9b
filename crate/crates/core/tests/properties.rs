//! Property tests for the block availability model and seed derivation.

use proptest::prelude::*;

use dassim::block::BlockAvailability;
use dassim::config::{derive_seed, SeedLabel};

fn mask_strategy(n_rows: usize, n_cols: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), n_rows * n_cols)
}

fn from_mask(n_rows: usize, n_cols: usize, mask: &[bool]) -> BlockAvailability {
    let mut avail = BlockAvailability::new(n_rows, n_cols);
    for r in 0..n_rows {
        for c in 0..n_cols {
            if mask[r * n_cols + c] {
                avail.set(r, c);
            }
        }
    }
    avail
}

proptest! {
    /// Reconstruction only adds cells, never removes them.
    #[test]
    fn fixpoint_is_monotone(mask in mask_strategy(6, 6), row_k in 1usize..=6, col_k in 1usize..=6) {
        let before = from_mask(6, 6, &mask);
        let mut after = before.clone();
        after.reconstruct_fixpoint(row_k, col_k);
        for r in 0..6 {
            for c in 0..6 {
                prop_assert!(!before.has(r, c) || after.has(r, c));
            }
        }
    }

    /// Running the fixpoint again makes no further progress.
    #[test]
    fn fixpoint_is_idempotent(mask in mask_strategy(6, 6), row_k in 1usize..=6, col_k in 1usize..=6) {
        let mut avail = from_mask(6, 6, &mask);
        avail.reconstruct_fixpoint(row_k, col_k);
        let settled = avail.clone();
        let added = avail.reconstruct_fixpoint(row_k, col_k);
        prop_assert_eq!(added, 0);
        prop_assert_eq!(avail, settled);
    }

    /// A superset input reconstructs to a superset output.
    #[test]
    fn fixpoint_preserves_inclusion(mask in mask_strategy(6, 6), extra in 0usize..36, row_k in 1usize..=6, col_k in 1usize..=6) {
        let mut small = from_mask(6, 6, &mask);
        let mut large = small.clone();
        large.set(extra / 6, extra % 6);
        small.reconstruct_fixpoint(row_k, col_k);
        large.reconstruct_fixpoint(row_k, col_k);
        for r in 0..6 {
            for c in 0..6 {
                prop_assert!(!small.has(r, c) || large.has(r, c));
            }
        }
    }

    /// Sub-seeds differ across labels and indices for the same base seed.
    #[test]
    fn derived_seeds_are_label_and_index_sensitive(base in any::<u64>(), i in 0u64..1000, j in 0u64..1000) {
        prop_assert_eq!(
            derive_seed(base, SeedLabel::Custody, i),
            derive_seed(base, SeedLabel::Custody, i)
        );
        if i != j {
            prop_assert_ne!(
                derive_seed(base, SeedLabel::Custody, i),
                derive_seed(base, SeedLabel::Custody, j)
            );
        }
        prop_assert_ne!(
            derive_seed(base, SeedLabel::Custody, i),
            derive_seed(base, SeedLabel::Topology, i)
        );
    }
}
