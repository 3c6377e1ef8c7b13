//! Randomized invariants: structural symmetries that should hold for every
//! input, checked with proptest.

use std::collections::BTreeMap;

use hqas_core::arith::{rat, rat_from_str, rat_to_string, Cyc, Rat};
use hqas_core::curve::{admissible, LocalCurve};
use hqas_core::psi::psi;
use hqas_core::wgl::{f03_closed, index_floor, pi_s, pi_s_inv, RSParams};

use num::Zero;
use proptest::prelude::*;

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

fn small_rat() -> impl Strategy<Value = Rat> {
    (-20i64..=20, 1i64..=12).prop_map(|(n, d)| rat(n, d))
}

fn nonzero_rat() -> impl Strategy<Value = Rat> {
    small_rat().prop_filter("nonzero", |x| !x.is_zero())
}

proptest! {
    /// Ψ is invariant under permutations of its arguments.
    #[test]
    fn psi_is_symmetric(
        r in 2usize..=5,
        j in 0usize..=1,
        args in prop::collection::vec(-10i64..=10, 1..=3),
        seed in any::<u64>(),
    ) {
        prop_assume!(2 * j + args.len() <= r);
        let base = psi(r, j, &args).unwrap();
        // A deterministic shuffle driven by the seed.
        let mut shuffled = args.clone();
        let mut state = seed | 1;
        for i in (1..shuffled.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(psi(r, j, &shuffled).unwrap(), base);
    }

    /// Ψ only depends on its arguments modulo r.
    #[test]
    fn psi_is_periodic(
        r in 2usize..=5,
        j in 0usize..=1,
        args in prop::collection::vec(-10i64..=10, 1..=3),
        offsets in prop::collection::vec(-3i64..=3, 3),
    ) {
        prop_assume!(2 * j + args.len() <= r);
        let shifted: Vec<i64> = args
            .iter()
            .zip(offsets.iter().cycle())
            .map(|(a, m)| a + m * r as i64)
            .collect();
        prop_assert_eq!(psi(r, j, &shifted).unwrap(), psi(r, j, &args).unwrap());
    }

    /// Decimal-fraction strings round-trip exactly.
    #[test]
    fn rational_strings_round_trip(n in any::<i64>(), d in 1i64..=1_000_000) {
        let x = rat(n, d);
        prop_assert_eq!(rat_from_str(&rat_to_string(&x)).unwrap(), x);
    }

    /// Root-of-unity powers multiply by adding exponents.
    #[test]
    fn root_powers_add(r in 1usize..=12, e in -30i64..=30, f in -30i64..=30) {
        prop_assert_eq!(
            Cyc::root_power(r, e).mul(&Cyc::root_power(r, f)),
            Cyc::root_power(r, e + f)
        );
    }

    /// The label bijection round-trips on its image.
    #[test]
    fn label_bijection_round_trips(r in 2usize..=9, s in 1i64..=10, i in 1usize..=9, k in 0i64..=6) {
        prop_assume!(i <= r && gcd(r as i64, s) == 1);
        let k = k + index_floor(r, s, i) + if i == 1 { 1 } else { 0 };
        let q = pi_s(r, s, i, k).unwrap();
        prop_assert_eq!(pi_s_inv(r, s, q).unwrap(), (i, k));
    }

    /// Rescaling the one-form by a nonzero constant never changes the
    /// admissibility verdict or the exponent classification.
    #[test]
    fn admissibility_is_scale_invariant(
        r in 2usize..=8,
        entries in prop::collection::btree_map(1i64..=9, nonzero_rat(), 1..=3),
        c in nonzero_rat(),
    ) {
        let curve = LocalCurve::single(r, entries.clone());
        let scaled = LocalCurve::single(
            r,
            entries
                .iter()
                .map(|(&l, v)| (l, v.clone() * c.clone()))
                .collect::<BTreeMap<_, _>>(),
        );
        match (admissible(&curve), admissible(&scaled)) {
            (Ok((ok_a, rep_a)), Ok((ok_b, rep_b))) => {
                prop_assert_eq!(ok_a, ok_b);
                prop_assert_eq!(rep_a, rep_b);
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "verdicts diverge: {:?} vs {:?}", a, b),
        }
    }

    /// The cubic closed form is symmetric in its three slots.
    #[test]
    fn cubic_closed_form_is_symmetric(
        ((r, s), qs) in (2usize..=8, 1i64..=9)
            .prop_filter("admissible", |&(r, s)| {
                gcd(r as i64, s) == 1 && RSParams { r, s }.admissible()
            })
            .prop_flat_map(|(r, s)| {
                (Just((r, s)), prop::collection::vec(1i64..=s, 3))
            }),
    ) {
        let base = f03_closed(r, s, qs[0], qs[1], qs[2]).unwrap();
        for perm in [
            [0usize, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ] {
            prop_assert_eq!(
                f03_closed(r, s, qs[perm[0]], qs[perm[1]], qs[perm[2]]).unwrap(),
                base.clone()
            );
        }
    }
}
