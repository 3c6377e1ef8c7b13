//! Constructors for the twisted free-boson structure families.
//!
//! Provides the raw W-mode coefficients, the `(r,s)` structures obtained by
//! dilaton-shifting the Coxeter-twisted modes, the two-component crosscapped
//! class obtained from an `(r−1)`-cycle twist, the index bijection onto
//! variable labels, partition-based admissibility arithmetic, and the
//! closed-form reference values for `F_{0,3}` and `F_{1,1}`.

use std::collections::BTreeMap;

use num_traits::Zero;
use thiserror::Error;

use crate::arith::{factorial, rat, rat_int, Rat};
use crate::engine::{ComponentData, SpecKind, StructureSpec};
use crate::psi::{psi, PsiError};

/// Errors from constructor arithmetic.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum WglError {
    /// r and s must be coprime to build a structure.
    #[error("r = {r} and s = {s} are not coprime")]
    NotCoprime { r: usize, s: i64 },
    /// The pair violates r ≡ ±1 mod s.
    #[error("(r, s) = ({r}, {s}) is not admissible (r ≠ ±1 mod s)")]
    NotAdmissible { r: usize, s: i64 },
    /// The mode (i, k) lies outside the structure's index set.
    #[error("mode (i, k) = ({i}, {k}) is outside the index set")]
    NotInIndexSet { i: usize, k: i64 },
    /// Mode arity out of range for the coefficient request.
    #[error("arity out of range: r = {r}, i = {i}, j = {j}, len = {len}")]
    ArityOutOfRange { r: usize, i: usize, j: usize, len: usize },
    /// The cycle class needs s | r.
    #[error("s = {s} does not divide r = {r}")]
    SDoesNotDivideR { r: usize, s: i64 },
    /// No partition of r matches the index set of (r, s).
    #[error("no partition of r = {r} corresponds to s = {s}")]
    NoPartition { r: usize, s: i64 },
    /// Twist-weight evaluation failed.
    #[error(transparent)]
    Psi(#[from] PsiError),
}

/// Parameters of an `(r, s)` structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RSParams {
    /// Twist order, at least 2.
    pub r: usize,
    /// Dilaton level, in `{1, …, r+1}`, coprime with r.
    pub s: i64,
}

impl RSParams {
    /// Whether r ≡ ±1 mod s (with s = 1 always admissible).
    pub fn admissible(&self) -> bool {
        let m = self.r as i64 % self.s;
        m == 1 % self.s || m == (self.s - 1) % self.s
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 { a.abs() } else { gcd(b, a % b) }
}

/// The index-set floor `𝔡^i = i − 1 − ⌊s(i−1)/r⌋`.
pub fn index_floor(r: usize, s: i64, i: usize) -> i64 {
    let im1 = i as i64 - 1;
    im1 - (s * im1).div_euclid(r as i64)
}

// ---------------------------------------------------------------------------
// Raw mode coefficients
// ---------------------------------------------------------------------------

/// Coefficient of `ħ^j :J_{α_1}⋯J_{α_{i−2j}}:` in the raw mode `W^i_k`
/// (per ordered tuple): `(1/r)·i!/(2^j j! (i−2j)!)·Ψ^{(j)}(α)` under the
/// momentum condition `Σα = r(k − i + 1)`, else 0.
pub fn wgl_coeff(r: usize, i: usize, k: i64, j: usize, alpha: &[i64]) -> Result<Rat, WglError> {
    if i < 1 || i > r || 2 * j > i || alpha.len() != i - 2 * j {
        return Err(WglError::ArityOutOfRange { r, i, j, len: alpha.len() });
    }
    let total: i64 = alpha.iter().sum();
    if total != r as i64 * (k - i as i64 + 1) {
        return Ok(Rat::zero());
    }
    let pref = factorial(i)
        / (rat_int(1 << j) * factorial(j) * factorial(i - 2 * j))
        / rat_int(r as i64);
    Ok(pref * psi(r, j, alpha)?)
}

// ---------------------------------------------------------------------------
// Index bijection
// ---------------------------------------------------------------------------

/// The variable label `q = rk + (s − r)(i − 1)` of mode `(i, k)`; errors if
/// `(i, k)` lies outside the index set `k ≥ 𝔡^i + δ_{i,1}`.
pub fn pi_s(r: usize, s: i64, i: usize, k: i64) -> Result<i64, WglError> {
    assert!(gcd(r as i64, s) == 1, "pi_s needs gcd(r, s) = 1");
    assert!(i >= 1 && i <= r);
    let floor = index_floor(r, s, i) + if i == 1 { 1 } else { 0 };
    if k < floor {
        return Err(WglError::NotInIndexSet { i, k });
    }
    Ok(r as i64 * k + (s - r as i64) * (i as i64 - 1))
}

/// Inverse of [`pi_s`]: the unique mode `(i, k)` in the index set whose
/// label is `q`.
pub fn pi_s_inv(r: usize, s: i64, q: i64) -> Result<(usize, i64), WglError> {
    assert!(gcd(r as i64, s) == 1, "pi_s_inv needs gcd(r, s) = 1");
    if q <= 0 {
        return Err(WglError::NotInIndexSet { i: 0, k: q });
    }
    for im1 in 0..r as i64 {
        let rest = q - (s - r as i64) * im1;
        if rest % r as i64 == 0 {
            let i = im1 as usize + 1;
            let k = rest / r as i64;
            let floor = index_floor(r, s, i) + if i == 1 { 1 } else { 0 };
            if k < floor {
                return Err(WglError::NotInIndexSet { i, k });
            }
            return Ok((i, k));
        }
    }
    unreachable!("gcd(s - r, r) = 1 guarantees a residue match");
}

// ---------------------------------------------------------------------------
// Structure constructors
// ---------------------------------------------------------------------------

/// The `(r, s)` structure: dilaton-shifted Coxeter-twisted modes with unit
/// diagonal heads. `force` permits non-admissible coprime pairs (their
/// output is not symmetric). `reduced` removes the variables with levels
/// divisible by r together with the corresponding linear constraints.
pub fn build_coxeter(
    params: RSParams,
    reduced: bool,
    force: bool,
) -> Result<StructureSpec, WglError> {
    let RSParams { r, s } = params;
    assert!(r >= 2 && s >= 1 && s <= r as i64 + 1);
    if gcd(r as i64, s) != 1 {
        return Err(WglError::NotCoprime { r, s });
    }
    if !params.admissible() && !force {
        return Err(WglError::NotAdmissible { r, s });
    }
    let mut tau = BTreeMap::new();
    tau.insert(s, rat_int(-1));
    Ok(StructureSpec {
        kind: SpecKind::Standard,
        components: vec![ComponentData { r, s, tau, zero_mode: None, reduced }],
        phi: BTreeMap::new(),
        crosscapped: false,
        exact_grading: Some(s),
        chain_bound: Some(s),
    })
}

/// The crosscapped two-component structure obtained from the `(r−1)`-cycle
/// twist of rank r, with zero-mode charges `±ħ^{1/2}·q_param`.
pub fn build_cycle_rm1(r: usize, s: i64, q_param: Rat) -> Result<StructureSpec, WglError> {
    if r < 3 || s < 1 || s > r as i64 || r as i64 % s != 0 {
        return Err(WglError::SDoesNotDivideR { r, s });
    }
    let r1 = r - 1;
    let mut tau = BTreeMap::new();
    tau.insert(s, rat_int(-1));
    Ok(StructureSpec {
        kind: SpecKind::CycleRm1 { big_r: r },
        components: vec![
            ComponentData {
                r: r1,
                s,
                tau,
                zero_mode: Some(q_param.clone()),
                reduced: false,
            },
            ComponentData {
                r: 1,
                s,
                tau: BTreeMap::new(),
                zero_mode: Some(-q_param),
                reduced: false,
            },
        ],
        phi: BTreeMap::new(),
        crosscapped: true,
        exact_grading: None,
        chain_bound: None,
    })
}

// ---------------------------------------------------------------------------
// Partition arithmetic
// ---------------------------------------------------------------------------

/// A partition of r in weakly decreasing order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LambdaPartition {
    /// Weakly decreasing positive parts.
    pub parts: Vec<usize>,
}

impl LambdaPartition {
    /// Validating constructor.
    pub fn new(parts: Vec<usize>) -> Self {
        assert!(parts.iter().all(|&p| p > 0));
        assert!(parts.windows(2).all(|w| w[0] >= w[1]));
        LambdaPartition { parts }
    }

    /// Sum of the parts.
    pub fn total(&self) -> usize {
        self.parts.iter().sum()
    }

    /// `λ(a) = min{t : λ_1 + ⋯ + λ_t ≥ a}`.
    pub fn lambda_of(&self, a: usize) -> usize {
        let mut acc = 0;
        for (t, &p) in self.parts.iter().enumerate() {
            acc += p;
            if acc >= a {
                return t + 1;
            }
        }
        panic!("a = {a} exceeds the partition total");
    }
}

/// The partition matching the `(r, s)` index set: `r''` parts `r' + 1`
/// followed by `s − r''` parts `r'`, for `r = r's + r''` with
/// `r'' ∈ {1, s−1}` (and `(r)` for s = 1, all ones for s = r+1).
pub fn s_to_partition(r: usize, s: i64) -> Result<LambdaPartition, WglError> {
    assert!(s >= 1 && s <= r as i64 + 1 && gcd(r as i64, s) == 1);
    if s == 1 {
        return Ok(LambdaPartition::new(vec![r]));
    }
    let rem = r as i64 % s;
    if rem != 1 && rem != s - 1 {
        return Err(WglError::NoPartition { r, s });
    }
    let (rp, rpp) = ((r as i64 - rem) / s, rem);
    let mut parts = Vec::new();
    for _ in 0..rpp {
        parts.push(rp as usize + 1);
    }
    for _ in 0..(s - rpp) {
        if rp > 0 {
            parts.push(rp as usize);
        }
    }
    Ok(LambdaPartition::new(parts))
}

/// Whether the mode `(i, k)` is good for the partition: `k ≥ i − λ(i)`.
pub fn lambda_good(lambda: &LambdaPartition, i: usize, k: i64) -> bool {
    k >= i as i64 - lambda.lambda_of(i) as i64
}

fn for_each_partition(r: usize, max_part: usize, buf: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
    if r == 0 {
        f(buf);
        return;
    }
    for p in (1..=max_part.min(r)).rev() {
        buf.push(p);
        for_each_partition(r - p, p, buf, f);
        buf.pop();
    }
}

/// Whether some partition λ of r has its good-mode set equal to the `(r, s)`
/// index set; both sets are co-finite per i, so equality reduces to
/// comparing lower bounds, with `(1, 0)` excluded on both sides as the
/// scalar zero mode.
pub fn sets_agree(r: usize, s: i64) -> bool {
    let mut found = false;
    for_each_partition(r, r, &mut Vec::new(), &mut |parts| {
        if found {
            return;
        }
        let lambda = LambdaPartition::new(parts.to_vec());
        let all_match = (1..=r).all(|i| {
            let from_lambda = (i as i64 - lambda.lambda_of(i) as i64)
                .max(if i == 1 { 1 } else { i64::MIN });
            let from_s = index_floor(r, s, i) + if i == 1 { 1 } else { 0 };
            from_lambda == from_s
        });
        if all_match {
            found = true;
        }
    });
    found
}

// ---------------------------------------------------------------------------
// Closed forms
// ---------------------------------------------------------------------------

/// Closed form for `F_{0,3}[q_1, q_2, q_3]` of the admissible `(r, s)`
/// structure: supported on `q_1 + q_2 + q_3 = s`, with prefactor `r'` when
/// `r = r's + 1` and `−(r' + 1)` when `r = r's + s − 1`.
pub fn f03_closed(r: usize, s: i64, q1: i64, q2: i64, q3: i64) -> Result<Rat, WglError> {
    let params = RSParams { r, s };
    if gcd(r as i64, s) != 1 || !params.admissible() {
        return Err(WglError::NotAdmissible { r, s });
    }
    if s == 1 || q1 + q2 + q3 != s {
        return Ok(Rat::zero());
    }
    let rem = r as i64 % s;
    let qprod = rat_int(q1) * rat_int(q2) * rat_int(q3);
    if rem == s - 1 {
        let rp = (r as i64 - (s - 1)) / s;
        Ok(rat_int(-(rp + 1)) * qprod)
    } else {
        let rp = (r as i64 - 1) / s;
        Ok(rat_int(rp) * qprod)
    }
}

/// Closed form for `F_{1,1}[q]` of the `(r, s)` structure:
/// `−(r² − 1)/24 · δ_{q,s}`.
pub fn f11_closed(r: usize, s: i64, q: i64) -> Rat {
    if q == s {
        rat(-((r * r) as i64 - 1), 24)
    } else {
        Rat::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::HalfInt;
    use crate::diffop::JIndex;
    use crate::engine::{check_annihilation, compute_all, compute_F};

    #[test]
    fn wgl_coeff_examples() {
        assert_eq!(wgl_coeff(2, 1, 3, 0, &[6]).unwrap(), rat_int(1));
        assert_eq!(wgl_coeff(2, 2, 1, 1, &[]).unwrap(), rat(-1, 8));
        assert_eq!(wgl_coeff(3, 3, 2, 1, &[0]).unwrap(), rat(-1, 3));
        assert!(matches!(
            wgl_coeff(2, 3, 0, 0, &[0, 0, 0]),
            Err(WglError::ArityOutOfRange { .. })
        ));
    }

    #[test]
    fn pi_s_examples() {
        assert_eq!(pi_s(3, 4, 2, 0).unwrap(), 1);
        assert_eq!(pi_s(3, 4, 3, 0).unwrap(), 2);
        assert_eq!(pi_s(3, 4, 1, 1).unwrap(), 3);
        assert_eq!(pi_s(2, 3, 2, 1).unwrap(), 3);
        assert_eq!(pi_s(2, 1, 2, 1).unwrap(), 1);
        assert!(pi_s(2, 3, 1, 0).is_err());
    }

    #[test]
    fn pi_s_bijective_onto_positive_integers() {
        for (r, s) in [(2usize, 3i64), (2, 1), (3, 2), (3, 4), (5, 3), (5, 6), (7, 5)] {
            for q in 1..=50 {
                let (i, k) = pi_s_inv(r, s, q).unwrap();
                assert_eq!(pi_s(r, s, i, k).unwrap(), q, "(r,s,q)=({r},{s},{q})");
            }
        }
    }

    #[test]
    fn partition_examples() {
        assert_eq!(s_to_partition(3, 2).unwrap().parts, vec![2, 1]);
        assert_eq!(s_to_partition(5, 3).unwrap().parts, vec![2, 2, 1]);
        assert_eq!(s_to_partition(3, 4).unwrap().parts, vec![1, 1, 1]);
        assert!(matches!(s_to_partition(7, 5), Err(WglError::NoPartition { .. })));
        let l = s_to_partition(3, 2).unwrap();
        assert!(lambda_good(&l, 2, 1));
        assert!(!lambda_good(&l, 3, 0));
    }

    #[test]
    fn sets_agree_matches_admissibility() {
        for r in 2..=12usize {
            for s in 1..=(r as i64 + 1) {
                if gcd(r as i64, s) != 1 {
                    continue;
                }
                assert_eq!(
                    sets_agree(r, s),
                    RSParams { r, s }.admissible(),
                    "(r,s)=({r},{s})"
                );
            }
        }
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(f03_closed(2, 3, 1, 1, 1).unwrap(), rat_int(-1));
        assert_eq!(f03_closed(4, 3, 1, 1, 1).unwrap(), rat_int(1));
        assert!(f03_closed(7, 5, 1, 1, 1).is_err());
        assert_eq!(f11_closed(3, 1, 1), rat(-1, 3));
        assert_eq!(f11_closed(2, 3, 3), rat(-1, 8));
    }

    #[test]
    fn virasoro_table_at_chi_one() {
        let spec = build_coxeter(RSParams { r: 2, s: 3 }, true, false).unwrap();
        let table = compute_all(&spec, 1, 3).unwrap();
        let g0 = HalfInt::zero();
        let g1 = HalfInt::from_int(1);
        let j = |q| JIndex::new(1, q);
        assert_eq!(table.get(g0, &[j(1), j(1), j(1)]).unwrap(), rat_int(-1));
        assert_eq!(table.get(g1, &[j(3)]).unwrap(), rat(-1, 8));
        assert_eq!(table.get(g1, &[j(1)]).unwrap(), Rat::zero());
        assert_eq!(table.get(g0, &[j(1), j(1), j(3)]).unwrap(), Rat::zero());
    }

    #[test]
    fn bessel_like_table_at_chi_one() {
        let spec = build_coxeter(RSParams { r: 3, s: 2 }, false, false).unwrap();
        let table = compute_all(&spec, 1, 4).unwrap();
        let j = |q| JIndex::new(1, q);
        for (g, ls, v) in table.iter() {
            if g == HalfInt::zero() {
                assert!(v.is_zero(), "F_0,3{ls:?} should vanish");
            }
        }
        assert_eq!(table.get(HalfInt::from_int(1), &[j(2)]).unwrap(), rat(-1, 3));
    }

    #[test]
    fn divisible_labels_vanish_unreduced() {
        let spec = build_coxeter(RSParams { r: 2, s: 3 }, false, false).unwrap();
        let j = |q| JIndex::new(1, q);
        assert_eq!(
            compute_F(&spec, HalfInt::zero(), &[j(2), j(2), j(2)]).unwrap(),
            Rat::zero()
        );
        assert_eq!(
            compute_F(&spec, HalfInt::zero(), &[j(1), j(2), j(3), j(4)]).unwrap(),
            Rat::zero()
        );
    }

    #[test]
    fn reduced_and_full_specs_agree() {
        let full = build_coxeter(RSParams { r: 3, s: 4 }, false, false).unwrap();
        let red = build_coxeter(RSParams { r: 3, s: 4 }, true, false).unwrap();
        let j = |q| JIndex::new(1, q);
        for idx in [vec![j(1), j(1), j(2)], vec![j(1), j(2), j(5)], vec![j(2), j(2), j(4)]] {
            assert_eq!(
                compute_F(&full, HalfInt::zero(), &idx).unwrap(),
                compute_F(&red, HalfInt::zero(), &idx).unwrap(),
                "idx {idx:?}"
            );
        }
        assert_eq!(
            compute_F(&full, HalfInt::from_int(1), &[j(4)]).unwrap(),
            compute_F(&red, HalfInt::from_int(1), &[j(4)]).unwrap()
        );
    }

    #[test]
    fn annihilation_clean_at_chi_one() {
        let spec = build_coxeter(RSParams { r: 2, s: 3 }, true, false).unwrap();
        let table = compute_all(&spec, 1, 6).unwrap();
        let report = check_annihilation(&spec, &table, 1, 6).unwrap();
        assert!(report.is_empty(), "residuals: {report:?}");
    }
}
