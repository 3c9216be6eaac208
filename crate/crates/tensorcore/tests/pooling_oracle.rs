//! Exhaustive comparison of max pooling against direct enumeration.

use proptest::prelude::*;
use tensorcore::{PoolKind, Region, Tape, Tensor};

#[test]
fn max_pool_matches_enumeration_on_all_small_grids() {
    let cases = tensorcore::suite::max_pool_oracle().unwrap();
    println!("{cases} regions checked");
    assert!(cases > 1000);
}

proptest! {
    #[test]
    fn enlarging_a_region_never_decreases_the_max(
        values in prop::collection::vec(-5.0f64..5.0, 12),
        lo in 0.0f64..11.0,
        width in 0.0f64..5.0,
        grow_lo in 0.0f64..3.0,
        grow_hi in 0.0f64..3.0,
    ) {
        let x = Tensor::matrix(6, 2, values).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(x);
        let small = Region::new(lo / 2.0, lo / 2.0 + width);
        let big = Region::new(small.lo - grow_lo, small.hi + grow_hi);
        let a = tape.region_pool(xv, &[small], PoolKind::Max).unwrap();
        let b = tape.region_pool(xv, &[big], PoolKind::Max).unwrap();
        for (s, l) in tape.value(a).data().iter().zip(tape.value(b).data()) {
            prop_assert!(l >= s);
        }
    }

    #[test]
    fn ops_are_deterministic(values in prop::collection::vec(-3.0f64..3.0, 24)) {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::matrix(8, 3, values.clone()).unwrap());
            let w = tape.leaf(Tensor::new(vec![3, 3, 3], values[..27.min(values.len())].iter().cycle().take(27).cloned().collect()).unwrap());
            let b = tape.leaf(Tensor::zeros(&[3]));
            let y = tape.conv1d(x, w, b, 2, 1).unwrap();
            let g = tape.leaf(Tensor::full(&[3], 1.0));
            let z = tape.group_norm(y, 3, g, b, 1e-5).unwrap();
            let u = tape.linear_upsample(z, 2).unwrap();
            tape.value(u).clone()
        };
        prop_assert_eq!(run(), run());
    }
}
