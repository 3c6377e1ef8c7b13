//! Exact evaluation of the root-of-unity sums Psi^{(j)}(a_{2j+1}, ..., a_i).
//!
//! Psi^{(j)} is a sum over ordered tuples of distinct r-th roots of unity:
//! j "pair kernels" theta^{m+m'} / (theta^m - theta^{m'})^2 times plain
//! characters theta^{-m a}, divided by i! where i = 2j + (number of a's).
//!
//! Three independent evaluation routes are provided:
//!
//! * [`psi0`] — the j = 0 case through the rational set-partition formula
//!   (sum over set partitions of the arguments, each block contributing
//!   r * (|L|-1)! when its argument sum is divisible by r, with sign).
//! * [`psi`] — general j, reducing to j = 0 by appending weighted pairs
//!   (b, r-b) with weight b(r-b)/(2r), once per kernel.  Rational throughout
//!   and memoized; this is the production route.
//! * [`psi_brute`] — direct summation in the cyclotomic field Q(theta_r),
//!   then projection to Q.  Cost r!/(r-i)!; the oracle for the other two.
//!
//! All three agree; the brute-force route additionally certifies that the
//! sums are rational (a failed projection is an implementation bug).

use crate::arith::{cyc_to_rat, factorial, rat, rat_int, ArithError, Cyc, Rat};
use num::{One, Zero};
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// Errors from the Psi evaluators.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PsiError {
    /// The total arity i = (number of args) + 2j must lie in {1, ..., r}.
    #[error("arity {i} outside {{1, ..., {r}}}")]
    ArityOutOfRange { r: usize, i: usize },
    /// Propagated scalar error (NotRational from the brute-force oracle
    /// signals a bug upstream).
    #[error(transparent)]
    Arith(#[from] ArithError),
}

/// Normalizes arguments to {0, ..., r-1}; Psi only depends on them modulo r.
fn normalize(r: usize, args: &[i64]) -> Vec<i64> {
    args.iter().map(|a| a.rem_euclid(r as i64)).collect()
}

// ---------------------------------------------------------------------------
// Set-partition formula for Psi = Psi^{(0)}
// ---------------------------------------------------------------------------

/// Enumerates set partitions of {0, ..., n-1} by growing blocks; calls `f`
/// with the block assignment of each partition (assignment[e] = block id).
fn for_each_set_partition(n: usize, f: &mut impl FnMut(&[usize], usize)) {
    fn rec(
        n: usize,
        pos: usize,
        nblocks: usize,
        assignment: &mut Vec<usize>,
        f: &mut impl FnMut(&[usize], usize),
    ) {
        if pos == n {
            f(assignment, nblocks);
            return;
        }
        // Element `pos` joins an existing block or opens a new one; capping
        // the new block id at nblocks makes each partition appear once
        // (restricted-growth strings).
        for b in 0..=nblocks {
            assignment.push(b);
            rec(n, pos + 1, nblocks.max(b + 1), assignment, f);
            assignment.pop();
        }
    }
    if n == 0 {
        f(&[], 0);
        return;
    }
    rec(n, 0, 0, &mut Vec::with_capacity(n), f);
}

/// Psi(args) for possibly empty args, via the set-partition formula:
///
///   i! Psi(a_1, .., a_i) = sum over set partitions L of the slots of
///       r^{|L|} (-1)^{i - |L|} prod_{blocks} (|block|-1)! [r | block sum].
///
/// Psi(empty) = 1 by convention (needed internally by the zero-stripping
/// identity even though the public entry point rejects empty input).
fn psi0_inner(r: usize, args: &[i64]) -> Rat {
    let n = args.len();
    if n == 0 {
        return Rat::one();
    }
    let residues = normalize(r, args);
    let ri = r as i64;
    let mut total = Rat::zero();
    for_each_set_partition(n, &mut |assignment, nblocks| {
        let mut sums = vec![0i64; nblocks];
        let mut sizes = vec![0usize; nblocks];
        for (e, &b) in assignment.iter().enumerate() {
            sums[b] += residues[e];
            sizes[b] += 1;
        }
        if sums.iter().any(|s| s % ri != 0) {
            return;
        }
        let mut term = Rat::one();
        for &sz in &sizes {
            term *= factorial(sz - 1) * rat_int(ri);
        }
        if (n - nblocks) % 2 == 1 {
            term = -term;
        }
        total += term;
    });
    total / factorial(n)
}

/// Psi(a_1, ..., a_i) by the set-partition formula.  Requires 1 <= i <= r;
/// the value times i! always lies in r * Z.
pub fn psi0(r: usize, args: &[i64]) -> Result<Rat, PsiError> {
    let i = args.len();
    if i == 0 || i > r {
        return Err(PsiError::ArityOutOfRange { r, i });
    }
    Ok(psi(r, 0, args)?)
}

// ---------------------------------------------------------------------------
// General j by pair reduction, memoized
// ---------------------------------------------------------------------------

type MemoKey = (usize, usize, Vec<i64>);

fn memo() -> &'static Mutex<HashMap<MemoKey, Rat>> {
    static MEMO: OnceLock<Mutex<HashMap<MemoKey, Rat>>> = OnceLock::new();
    MEMO.get_or_init(|| Mutex::new(HashMap::new()))
}

fn psi_inner(r: usize, j: usize, args: &[i64]) -> Rat {
    let mut key_args = normalize(r, args);
    key_args.sort_unstable();
    let key = (r, j, key_args.clone());
    if let Some(v) = memo().lock().unwrap().get(&key) {
        return v.clone();
    }
    let value = if j == 0 {
        psi0_inner(r, &key_args)
    } else {
        // Each pair kernel equals the weighted sum of two extra plain
        // arguments (b, r-b) with weight b(r-b)/(2r) — the power-sum identity
        // behind the kernel.  One application lowers j by one.
        let mut acc = Rat::zero();
        for b in 1..r as i64 {
            let mut extended = Vec::with_capacity(key_args.len() + 2);
            extended.push(b);
            extended.push(r as i64 - b);
            extended.extend_from_slice(&key_args);
            acc += rat(b * (r as i64 - b), 2 * r as i64) * psi_inner(r, j - 1, &extended);
        }
        acc
    };
    memo().lock().unwrap().insert(key, value.clone());
    value
}

/// Psi^{(j)}(args) through the rational pair reduction.  The total arity
/// i = len(args) + 2j must lie in {1, ..., r}.
pub fn psi(r: usize, j: usize, args: &[i64]) -> Result<Rat, PsiError> {
    let i = args.len() + 2 * j;
    if i == 0 || i > r {
        return Err(PsiError::ArityOutOfRange { r, i });
    }
    Ok(psi_inner(r, j, args))
}

// ---------------------------------------------------------------------------
// Cyclotomic brute force
// ---------------------------------------------------------------------------

/// Psi^{(j)}(args) by direct summation over ordered tuples of distinct
/// m_l in {0, ..., r-1} in the cyclotomic field.  Cost r!/(r-i)! tuples;
/// intended for r <= 8.  Errors with NotRational when the sum fails to be
/// rational — that always signals a bug.
pub fn psi_brute(r: usize, j: usize, args: &[i64]) -> Result<Rat, PsiError> {
    let i = args.len() + 2 * j;
    if i == 0 || i > r {
        return Err(PsiError::ArityOutOfRange { r, i });
    }
    let residues = normalize(r, args);
    // Precompute theta^t and the pair kernels theta^{m+m'}/(theta^m - theta^{m'})^2.
    let powers: Vec<Cyc> = (0..r as i64).map(|t| Cyc::root_power(r, t)).collect();
    let mut kernel = vec![vec![Cyc::zero(); r]; r];
    for m1 in 0..r {
        for m2 in 0..r {
            if m1 == m2 {
                continue;
            }
            let num = Cyc::root_power(r, (m1 + m2) as i64);
            let diff = powers[m2].sub(&powers[m1]);
            let den = diff.mul(&diff);
            kernel[m1][m2] = num.mul(&den.inv().map_err(PsiError::Arith)?);
        }
    }
    let mut total = Cyc::zero();
    let mut tuple = Vec::with_capacity(i);
    let mut used = vec![false; r];
    // Ordered tuples of pairwise distinct values, accumulating the partial
    // product as the tuple grows.
    fn rec(
        pos: usize,
        i: usize,
        j: usize,
        r: usize,
        residues: &[i64],
        powers: &[Cyc],
        kernel: &[Vec<Cyc>],
        tuple: &mut Vec<usize>,
        used: &mut [bool],
        partial: Cyc,
        total: &mut Cyc,
    ) {
        if pos == i {
            *total = total.add(&partial);
            return;
        }
        for m in 0..r {
            if used[m] {
                continue;
            }
            // Pair slots come first (positions 0..2j, kernels applied on the
            // even positions once their partner is fixed); character slots
            // follow.
            let factor = if pos < 2 * j {
                if pos % 2 == 1 {
                    Some(kernel[tuple[pos - 1]][m].clone())
                } else {
                    None
                }
            } else {
                let a = residues[pos - 2 * j];
                Some(powers[((-(m as i64) * a).rem_euclid(r as i64)) as usize].clone())
            };
            let next = match factor {
                Some(f) => partial.mul(&f),
                None => partial.clone(),
            };
            used[m] = true;
            tuple.push(m);
            rec(pos + 1, i, j, r, residues, powers, kernel, tuple, used, next, total);
            tuple.pop();
            used[m] = false;
        }
    }
    rec(
        0,
        i,
        j,
        r,
        &residues,
        &powers,
        &kernel,
        &mut tuple,
        &mut used,
        Cyc::from_rat(Rat::one()),
        &mut total,
    );
    let value = cyc_to_rat(&total)?;
    Ok(value / factorial(i))
}

// ---------------------------------------------------------------------------
// Zero stripping
// ---------------------------------------------------------------------------

/// Psi^{(j)} with r-divisible arguments factored out:
///
///   Psi^{(j)}(rest, 0^l) = (i-l)!/i! * (r-i+l)!/(r-i)! * Psi^{(j)}(rest),
///
/// where i is the total arity including the zeros.  Equal to the direct
/// evaluation; exposed separately because the stripped form is what the
/// reduced structures consume.
pub fn psi_zero_strip(r: usize, j: usize, args_with_zeros: &[i64]) -> Result<Rat, PsiError> {
    let i = args_with_zeros.len() + 2 * j;
    if i == 0 || i > r {
        return Err(PsiError::ArityOutOfRange { r, i });
    }
    let residues = normalize(r, args_with_zeros);
    let stripped: Vec<i64> = residues.iter().copied().filter(|&a| a != 0).collect();
    let l = residues.len() - stripped.len();
    let factor = factorial(i - l) / factorial(i) * factorial(r - i + l) / factorial(r - i);
    let base = if stripped.is_empty() && j == 0 {
        Rat::one() // Psi(empty) = 1 by convention
    } else {
        psi_inner(r, j, &stripped)
    };
    Ok(factor * base)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> Rat {
        rat(n, d)
    }

    #[test]
    fn psi0_small_closed_forms() {
        // Psi(a) = r [r | a].
        assert_eq!(psi0(3, &[3]).unwrap(), rat_int(3));
        assert_eq!(psi0(3, &[1]).unwrap(), rat_int(0));
        // Psi(a1, a2) = (r^2 [r|a1][r|a2] - r [r|a1+a2]) / 2.
        assert_eq!(psi0(2, &[1, 1]).unwrap(), rat_int(-1));
        // Psi(r-1, ..., r-1, i-1) = (-1)^{i-1} r / i  with i = r = 4.
        assert_eq!(psi0(4, &[3, 3, 3, 3]).unwrap(), rat_int(-1));
    }

    #[test]
    fn psi_pair_reduction_matches_closed_forms() {
        // Psi^{(1)}(empty) = -r(r^2-1)/24.
        assert_eq!(psi(2, 1, &[]).unwrap(), q(-1, 4));
        for r in 2..=8usize {
            let expect = rat_int(-(r as i64) * ((r * r) as i64 - 1)) / rat_int(24);
            assert_eq!(psi(r, 1, &[]).unwrap(), expect, "r = {r}");
        }
        // Psi^{(1)}(a3) = -r(r-2)(r^2-1)/72 [r | a3].
        assert_eq!(psi(3, 1, &[3]).unwrap(), q(-1, 3));
        for r in 3..=8usize {
            let ri = r as i64;
            let expect = rat_int(-ri * (ri - 2) * (ri * ri - 1)) / rat_int(72);
            assert_eq!(psi(r, 1, &[0]).unwrap(), expect, "r = {r}");
            assert_eq!(psi(r, 1, &[1]).unwrap(), rat_int(0), "r = {r}");
        }
        // 24 Psi^{(2)}(empty) = (r+1)r(r-1)(r-2)(r-3)(5r+7)/720 at r = 5.
        assert_eq!(psi(5, 2, &[]).unwrap(), q(4, 3));
    }

    #[test]
    fn brute_force_agrees_on_reference_values() {
        assert_eq!(psi_brute(3, 0, &[1, 2]).unwrap(), q(-3, 2));
        assert_eq!(psi_brute(2, 1, &[]).unwrap(), q(-1, 4));
        assert_eq!(psi_brute(4, 0, &[0, 0, 0, 0]).unwrap(), rat_int(1));
    }

    #[test]
    fn zero_strip_examples() {
        assert_eq!(psi_zero_strip(3, 0, &[3, 0]).unwrap(), rat_int(3));
        assert_eq!(psi_zero_strip(4, 0, &[1, 0]).unwrap(), rat_int(0));
        assert_eq!(psi_zero_strip(2, 0, &[0, 0]).unwrap(), rat_int(1));
        // Stripping must agree with direct evaluation.
        for r in 2..=6usize {
            for a in 0..r as i64 {
                let direct = psi(r, 0, &[a, 0]).unwrap();
                let stripped = psi_zero_strip(r, 0, &[a, 0]).unwrap();
                assert_eq!(direct, stripped, "r = {r}, a = {a}");
            }
        }
    }

    #[test]
    fn arity_bounds_are_enforced() {
        assert!(matches!(psi0(3, &[]), Err(PsiError::ArityOutOfRange { .. })));
        assert!(matches!(psi0(2, &[1, 1, 1]), Err(PsiError::ArityOutOfRange { .. })));
        assert!(matches!(psi(2, 2, &[]), Err(PsiError::ArityOutOfRange { .. })));
        assert!(matches!(psi_brute(3, 2, &[]), Err(PsiError::ArityOutOfRange { .. })));
    }

    #[test]
    fn periodicity_and_symmetry() {
        for r in 2..=5usize {
            let ri = r as i64;
            assert_eq!(psi(r, 0, &[1, 2]).unwrap(), psi(r, 0, &[2, 1]).unwrap());
            assert_eq!(psi(r, 0, &[1, 2]).unwrap(), psi(r, 0, &[1 + ri, 2 - ri]).unwrap());
            if r >= 4 {
                assert_eq!(
                    psi(r, 1, &[1, 3]).unwrap(),
                    psi(r, 1, &[3 - ri, 1 + 2 * ri]).unwrap()
                );
            }
        }
    }
}
