//! Normal-ordered differential-operator calculus in the Heisenberg modes.
//!
//! An operator is a finite or lazily enumerated sum of monomials
//! `ħ^m · c · :J_{α_1,l_1} ⋯ J_{α_t,l_t}:` with exact rational coefficients.
//! Modes with negative level act by multiplication (`J_{-l} = l·x_l`), modes
//! with positive level by derivation (`J_l = ħ∂_{x_l}`), and zero modes are
//! folded into the coefficient as scalars carrying an `ħ^{1/2}` factor.
//!
//! The module provides:
//! * [`OpTerm`] — a single normal-ordered monomial;
//! * [`CoeffFamily`] — a lazy description of an infinite mode sum (twisted
//!   bosonic W-modes, single modes, and convolution products of the two),
//!   together with the dilaton shifts, polarization data and normalizations
//!   applied to it;
//! * [`enumerate_terms`] — exhaustive expansion of a family against a finite
//!   pool of creator labels;
//! * [`dilaton_shift`] / [`polarization_shift`] — the two conjugations;
//! * [`apply_to_Z`] / [`residual_with`] — evaluation of a constraint against
//!   a table of free energies.

use std::collections::BTreeMap;

use num_traits::{One, Zero};
use thiserror::Error;

use crate::arith::{factorial, rat_int, HalfInt, Rat};
use crate::engine::FTable;
use crate::psi::{psi, PsiError};

/// Errors produced by operator enumeration and evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffOpError {
    /// The polarization matrix has two entries contradicting symmetry.
    #[error("polarization matrix is not symmetric at {0:?} / {1:?}")]
    AsymmetricPhi((u32, i64), (u32, i64)),
    /// A required free-energy table entry is absent.
    #[error("missing table entry for 2g={doubled_genus}, labels {labels:?}")]
    MissingF { doubled_genus: i64, labels: Vec<JIndex> },
    /// A recursion detected a non-triangular linear system of constraints.
    #[error("constraint heads are not triangular: revisited 2g={doubled_genus}, labels {labels:?}")]
    NonTriangular { doubled_genus: i64, labels: Vec<JIndex> },
    /// Underlying twist-weight evaluation failed.
    #[error(transparent)]
    Psi(#[from] PsiError),
}

/// A single Heisenberg mode label: `level < 0` is a creator (`−l·x_{−l}`),
/// `level > 0` an annihilator (`ħ∂_{x_l}`). Zero levels never appear inside
/// [`OpTerm`]; they are folded into scalar coefficients at enumeration time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JIndex {
    /// Component of the underlying direct-sum algebra (1-based).
    pub component: u32,
    /// Nonzero mode level.
    pub level: i64,
}

impl JIndex {
    /// Convenience constructor.
    pub fn new(component: u32, level: i64) -> Self {
        assert!(level != 0, "zero modes are folded into scalars");
        JIndex { component, level }
    }
}

/// A normal-ordered monomial `ħ^hbar · coeff · :∏ creators ∏ annihilators:`.
#[derive(Debug, Clone, PartialEq)]
pub struct OpTerm {
    /// Power of `ħ` (half-integers arise from zero-mode scalars).
    pub hbar: HalfInt,
    /// Creator modes (negative levels), sorted.
    pub creators: Vec<JIndex>,
    /// Annihilator modes (positive levels), sorted.
    pub annihilators: Vec<JIndex>,
    /// Rational coefficient; zero-coefficient terms are dropped on merge.
    pub coeff: Rat,
}

impl OpTerm {
    fn sort_key(&self) -> (i64, Vec<JIndex>, Vec<JIndex>) {
        (self.hbar.doubled, self.creators.clone(), self.annihilators.clone())
    }
}

/// One summand of a [`CoeffFamily`]: a lazily enumerated infinite mode sum.
#[derive(Debug, Clone, PartialEq)]
pub enum FamilyPart {
    /// The `i`-th W-mode `W^i_k` of the r-twisted free boson on one component.
    Mode { comp: u32, r: usize, i: usize, k: i64 },
    /// A single mode `J_{comp,level}`; `level == 0` denotes the zero mode.
    Single { comp: u32, level: i64 },
    /// The convolution `Σ_{k₁+k₂=ksum} W^i_{k₁}(comp) · J_{jcomp,k₂}` across
    /// two distinct components (the factors commute).
    ModeTimesSingle { comp: u32, r: usize, i: usize, jcomp: u32, ksum: i64 },
}

/// A lazy operator: a linear combination of [`FamilyPart`]s conjugated by a
/// dilaton shift and a change of polarization, with optional reductions.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffFamily {
    /// Summands with their prefactors.
    pub parts: Vec<(Rat, FamilyPart)>,
    /// Dilaton data: `(component, a) ↦ v` replaces `J_{-a} → J_{-a} + v`.
    pub shifts: BTreeMap<(u32, i64), Rat>,
    /// Polarization data: symmetric in the two (component, positive level)
    /// slots; a single orientation per pair suffices.
    pub phi: BTreeMap<((u32, i64), (u32, i64)), Rat>,
    /// Zero-mode scalars: `J_{comp,0} = ħ^{1/2} · value`.
    pub zero_modes: BTreeMap<u32, Rat>,
    /// Overall multiplicative normalization.
    pub scale: Rat,
    /// When set, each final term's coefficient is multiplied by
    /// `(−1)^{deg+1}` where `deg` counts the nonzero mode factors; linear
    /// terms are unchanged, so diagonal heads keep coefficient `+1`.
    pub parity_normalized: bool,
    /// Reduction data: `component ↦ modulus`; terms containing any mode of
    /// that component whose level is divisible by the modulus are dropped.
    pub reduced: BTreeMap<u32, i64>,
}

impl CoeffFamily {
    /// Family with the given parts and trivial conjugation data.
    pub fn new(parts: Vec<(Rat, FamilyPart)>) -> Self {
        CoeffFamily {
            parts,
            shifts: BTreeMap::new(),
            phi: BTreeMap::new(),
            zero_modes: BTreeMap::new(),
            scale: Rat::one(),
            parity_normalized: false,
            reduced: BTreeMap::new(),
        }
    }

    fn max_arity(&self) -> usize {
        self.parts
            .iter()
            .map(|(_, p)| match p {
                FamilyPart::Mode { i, .. } => *i,
                FamilyPart::Single { .. } => 1,
                FamilyPart::ModeTimesSingle { i, .. } => *i + 1,
            })
            .max()
            .unwrap_or(0)
    }
}

// ---------------------------------------------------------------------------
// Raw mode enumeration
// ---------------------------------------------------------------------------

/// Nondecreasing positive tuples of length `parts` with entries `≤ cap`
/// summing to `target`, fed to `f`.
fn for_each_ascending_composition(
    target: i64,
    parts: usize,
    cap: i64,
    min: i64,
    buf: &mut Vec<i64>,
    f: &mut dyn FnMut(&[i64]),
) {
    if parts == 0 {
        if target == 0 {
            f(buf);
        }
        return;
    }
    // Remaining entries are all ≥ b, so b ≤ target/parts.
    let hi = (target / parts as i64).min(cap);
    for b in min..=hi {
        buf.push(b);
        for_each_ascending_composition(target - b, parts - 1, cap, b, buf, f);
        buf.pop();
    }
}

/// Sub-multisets of `pool` (entries `(level, multiplicity)`) of size ≤ `cap`,
/// fed to `f` as a sorted list of levels.
fn for_each_sub_multiset(
    pool: &[(i64, usize)],
    idx: usize,
    cap: usize,
    buf: &mut Vec<i64>,
    f: &mut dyn FnMut(&[i64]),
) {
    if idx == pool.len() {
        f(buf);
        return;
    }
    let (level, mult) = pool[idx];
    let take_max = mult.min(cap - buf.len());
    for t in 0..=take_max {
        for _ in 0..t {
            buf.push(level);
        }
        for_each_sub_multiset(pool, idx + 1, cap, buf, f);
        for _ in 0..t {
            buf.pop();
        }
    }
}

fn multiplicity_factor(slots: &[i64]) -> Rat {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &s in slots {
        *counts.entry(s).or_insert(0) += 1;
    }
    let mut f = Rat::one();
    for (_, c) in counts {
        f *= factorial(c);
    }
    f
}

fn rat_pow(x: &Rat, n: usize) -> Rat {
    let mut acc = Rat::one();
    for _ in 0..n {
        acc *= x.clone();
    }
    acc
}

/// All terms of the raw W-mode `W^i_k` on one r-twisted component whose
/// creators lie in `pool` (levels with multiplicities), with annihilator
/// levels ≤ `ann_cap` and ħ-power ≤ `hbar_cap`.
fn enumerate_raw_mode(
    comp: u32,
    r: usize,
    i: usize,
    k: i64,
    pool: &[(i64, usize)],
    ann_cap: i64,
    hbar_cap: HalfInt,
    zero_mode: Option<&Rat>,
) -> Result<Vec<OpTerm>, DiffOpError> {
    assert!(i >= 1 && i <= r, "mode index i must satisfy 1 ≤ i ≤ r");
    let mut out = Vec::new();
    let base = r as i64 * (k - i as i64 + 1);
    for j in 0..=i / 2 {
        if 2 * j as i64 > hbar_cap.doubled {
            break;
        }
        let l = i - 2 * j;
        let prefactor = factorial(i) / (rat_int(1 << j) * factorial(j)) / rat_int(r as i64);
        let zmax = match zero_mode {
            Some(v) if !v.is_zero() => l,
            _ => 0,
        };
        for z in 0..=zmax {
            if 2 * j as i64 + z as i64 > hbar_cap.doubled {
                break;
            }
            let surv = l - z;
            let hbar = HalfInt::from_doubled(2 * j as i64 + z as i64);
            let zfac = match zero_mode {
                Some(v) => rat_pow(v, z),
                None => Rat::one(),
            };
            let mut err: Option<DiffOpError> = None;
            for_each_sub_multiset(pool, 0, surv, &mut Vec::new(), &mut |creators| {
                if err.is_some() {
                    return;
                }
                let csum: i64 = creators.iter().sum();
                let npos = surv - creators.len();
                let target = base + csum;
                let creators = creators.to_vec();
                for_each_ascending_composition(target, npos, ann_cap, 1, &mut Vec::new(), &mut |anns| {
                    if err.is_some() {
                        return;
                    }
                    let mut slots: Vec<i64> = creators.iter().map(|&a| -a).collect();
                    slots.extend(std::iter::repeat(0).take(z));
                    slots.extend_from_slice(anns);
                    let psi_val = match psi(r, j, &slots) {
                        Ok(v) => v,
                        Err(e) => {
                            err = Some(e.into());
                            return;
                        }
                    };
                    if psi_val.is_zero() {
                        return;
                    }
                    let coeff =
                        prefactor.clone() * psi_val * zfac.clone() / multiplicity_factor(&slots);
                    out.push(OpTerm {
                        hbar,
                        creators: creators.iter().map(|&a| JIndex::new(comp, -a)).collect(),
                        annihilators: anns.iter().map(|&b| JIndex::new(comp, b)).collect(),
                        coeff,
                    });
                });
            });
            if let Some(e) = err {
                return Err(e);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Conjugations
// ---------------------------------------------------------------------------

/// Replaces every creator `J_{α,−a}` with `J_{α,−a} + v_{α,a}` and re-expands.
pub fn dilaton_shift(terms: &[OpTerm], shifts: &BTreeMap<(u32, i64), Rat>) -> Vec<OpTerm> {
    let mut out = Vec::new();
    for term in terms {
        // Group creators by label; only shifted groups branch.
        let mut groups: Vec<(JIndex, usize)> = Vec::new();
        for &c in &term.creators {
            match groups.last_mut() {
                Some((lab, m)) if *lab == c => *m += 1,
                _ => groups.push((c, 1)),
            }
        }
        let mut partial: Vec<(Vec<JIndex>, Rat)> = vec![(Vec::new(), term.coeff.clone())];
        for (lab, m) in groups {
            let v = shifts.get(&(lab.component, -lab.level));
            match v {
                None => {
                    for (cre, _) in partial.iter_mut() {
                        cre.extend(std::iter::repeat(lab).take(m));
                    }
                }
                Some(v) => {
                    let mut next = Vec::new();
                    for (cre, coeff) in &partial {
                        for kept in 0..=m {
                            let ways = crate::arith::binomial(m, kept) * rat_pow(v, m - kept);
                            let mut cre2 = cre.clone();
                            cre2.extend(std::iter::repeat(lab).take(kept));
                            next.push((cre2, coeff.clone() * ways));
                        }
                    }
                    partial = next;
                }
            }
        }
        for (cre, coeff) in partial {
            out.push(OpTerm {
                hbar: term.hbar,
                creators: cre,
                annihilators: term.annihilators.clone(),
                coeff,
            });
        }
    }
    out
}

/// Canonical symmetric storage of the polarization matrix, keyed by the
/// sorted label pair.
fn canonical_phi(
    phi: &BTreeMap<((u32, i64), (u32, i64)), Rat>,
) -> Result<BTreeMap<((u32, i64), (u32, i64)), Rat>, DiffOpError> {
    let mut canon = BTreeMap::new();
    for (&(a, b), v) in phi {
        let key = if a <= b { (a, b) } else { (b, a) };
        if let Some(prev) = canon.insert(key, v.clone()) {
            if prev != *v {
                return Err(DiffOpError::AsymmetricPhi(a, b));
            }
        }
    }
    Ok(canon)
}

fn phi_lookup(
    canon: &BTreeMap<((u32, i64), (u32, i64)), Rat>,
    a: (u32, i64),
    b: (u32, i64),
) -> Option<&Rat> {
    let key = if a <= b { (a, b) } else { (b, a) };
    canon.get(&key)
}

fn phi_row(
    canon: &BTreeMap<((u32, i64), (u32, i64)), Rat>,
    a: (u32, i64),
) -> Vec<((u32, i64), Rat)> {
    let mut row = Vec::new();
    for (&(x, y), v) in canon {
        if x == a {
            row.push((y, v.clone()));
        } else if y == a {
            row.push((x, v.clone()));
        }
    }
    row
}

fn polarize_slots(
    slots: &[JIndex],
    canon: &BTreeMap<((u32, i64), (u32, i64)), Rat>,
    kept: &mut Vec<JIndex>,
    extra_ann: &mut Vec<JIndex>,
    extra_hbar: i64,
    coeff: Rat,
    out: &mut Vec<(Vec<JIndex>, Vec<JIndex>, i64, Rat)>,
) {
    let Some((&first, rest)) = slots.split_first() else {
        out.push((kept.clone(), extra_ann.clone(), extra_hbar, coeff));
        return;
    };
    let lab = (first.component, -first.level);
    // Keep the creator.
    kept.push(first);
    polarize_slots(rest, canon, kept, extra_ann, extra_hbar, coeff.clone(), out);
    kept.pop();
    // Substitute it with Σ φ_{a,l}/l · J_l.
    for ((bc, bl), v) in phi_row(canon, lab) {
        extra_ann.push(JIndex::new(bc, bl));
        polarize_slots(
            rest,
            canon,
            kept,
            extra_ann,
            extra_hbar,
            coeff.clone() * v / rat_int(bl),
            out,
        );
        extra_ann.pop();
    }
    // Contract it with a later creator slot (one extra ħ).
    for (jdx, &other) in rest.iter().enumerate() {
        let olab = (other.component, -other.level);
        if let Some(v) = phi_lookup(canon, lab, olab) {
            let mut remaining: Vec<JIndex> = rest.to_vec();
            remaining.remove(jdx);
            polarize_slots(
                &remaining,
                canon,
                kept,
                extra_ann,
                extra_hbar + 2,
                coeff.clone() * v.clone(),
                out,
            );
        }
    }
}

/// Applies the change of polarization `J_{α,−a} → J_{α,−a} + Σ φ_{a,l}/l·J_{β,l}`
/// to every creator, adding one `ħ·φ_{a,b}` contraction term for each
/// unordered pair of substituted creators.
pub fn polarization_shift(
    terms: &[OpTerm],
    phi: &BTreeMap<((u32, i64), (u32, i64)), Rat>,
) -> Result<Vec<OpTerm>, DiffOpError> {
    let canon = canonical_phi(phi)?;
    if canon.is_empty() {
        return Ok(terms.to_vec());
    }
    let mut out = Vec::new();
    for term in terms {
        let mut expansions = Vec::new();
        polarize_slots(
            &term.creators,
            &canon,
            &mut Vec::new(),
            &mut Vec::new(),
            0,
            term.coeff.clone(),
            &mut expansions,
        );
        for (cre, extra_ann, extra_hbar, coeff) in expansions {
            let mut anns = term.annihilators.clone();
            anns.extend(extra_ann);
            anns.sort();
            out.push(OpTerm {
                hbar: HalfInt::from_doubled(term.hbar.doubled + extra_hbar),
                creators: cre,
                annihilators: anns,
                coeff,
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Family enumeration
// ---------------------------------------------------------------------------

fn merge_terms(terms: Vec<OpTerm>) -> Vec<OpTerm> {
    let mut map: BTreeMap<(i64, Vec<JIndex>, Vec<JIndex>), Rat> = BTreeMap::new();
    for mut t in terms {
        t.creators.sort();
        t.annihilators.sort();
        *map.entry(t.sort_key()).or_insert_with(Rat::zero) += t.coeff;
    }
    map.into_iter()
        .filter(|(_, c)| !c.is_zero())
        .map(|((hd, cre, ann), coeff)| OpTerm {
            hbar: HalfInt::from_doubled(hd),
            creators: cre,
            annihilators: ann,
            coeff,
        })
        .collect()
}

/// All terms of the (conjugated, normalized) family whose creators form a
/// sub-multiset of `creator_pool`, with annihilator levels ≤ `annihilator_cap`
/// and ħ-power ≤ `hbar_cap`. Exhaustive for the given pool.
pub fn enumerate_terms(
    family: &CoeffFamily,
    creator_pool: &BTreeMap<(u32, i64), usize>,
    annihilator_cap: i64,
    hbar_cap: HalfInt,
) -> Result<Vec<OpTerm>, DiffOpError> {
    // The raw enumeration must also offer the creators that the dilaton
    // shift and the polarization can later remove.
    let arity = family.max_arity();
    let mut ext: BTreeMap<(u32, i64), usize> = creator_pool.clone();
    for (&lab, _) in &family.shifts {
        let e = ext.entry(lab).or_insert(0);
        *e = (*e).max(arity);
    }
    for (&(a, b), _) in &family.phi {
        for lab in [a, b] {
            let e = ext.entry(lab).or_insert(0);
            *e = (*e).max(arity);
        }
    }
    let pool_for = |comp: u32| -> Vec<(i64, usize)> {
        ext.iter()
            .filter(|((c, _), _)| *c == comp)
            .map(|((_, l), m)| (*l, *m))
            .collect()
    };

    let mut raw = Vec::new();
    for (pref, part) in &family.parts {
        let part_terms = match part {
            FamilyPart::Mode { comp, r, i, k } => enumerate_raw_mode(
                *comp,
                *r,
                *i,
                *k,
                &pool_for(*comp),
                annihilator_cap,
                hbar_cap,
                family.zero_modes.get(comp),
            )?,
            FamilyPart::Single { comp, level } => {
                if *level > 0 {
                    if *level <= annihilator_cap {
                        vec![OpTerm {
                            hbar: HalfInt::zero(),
                            creators: vec![],
                            annihilators: vec![JIndex::new(*comp, *level)],
                            coeff: Rat::one(),
                        }]
                    } else {
                        vec![]
                    }
                } else if *level < 0 {
                    vec![OpTerm {
                        hbar: HalfInt::zero(),
                        creators: vec![JIndex::new(*comp, *level)],
                        annihilators: vec![],
                        coeff: Rat::one(),
                    }]
                } else {
                    match family.zero_modes.get(comp) {
                        Some(v) if !v.is_zero() => vec![OpTerm {
                            hbar: HalfInt::from_doubled(1),
                            creators: vec![],
                            annihilators: vec![],
                            coeff: v.clone(),
                        }],
                        _ => vec![],
                    }
                }
            }
            FamilyPart::ModeTimesSingle { comp, r, i, jcomp, ksum } => {
                assert!(comp != jcomp, "convolution factors must commute");
                let wpool = pool_for(*comp);
                // The W-factor at k₁ = ksum − k₂ vanishes once its momentum
                // r(k₁−i+1) drops below what the creator pool can absorb, so
                // only finitely many annihilator levels k₂ contribute.
                let csum_max: i64 = wpool.iter().map(|(l, m)| l * *m as i64).sum();
                let k1_min = *i as i64 - 1 - csum_max / *r as i64;
                let k2_max = (ksum - k1_min).min(annihilator_cap);
                let mut singles: Vec<(i64, Rat, HalfInt)> = Vec::new();
                for k2 in 1..=k2_max {
                    singles.push((k2, Rat::one(), HalfInt::zero()));
                }
                for ((c, l), _) in &ext {
                    if c == jcomp {
                        singles.push((-l, Rat::one(), HalfInt::zero()));
                    }
                }
                if let Some(v) = family.zero_modes.get(jcomp) {
                    if !v.is_zero() {
                        singles.push((0, v.clone(), HalfInt::from_doubled(1)));
                    }
                }
                let mut acc = Vec::new();
                for (k2, factor, fhbar) in singles {
                    let sub_cap = HalfInt::from_doubled(hbar_cap.doubled - fhbar.doubled);
                    if sub_cap.doubled < 0 {
                        continue;
                    }
                    let wterms = enumerate_raw_mode(
                        *comp,
                        *r,
                        *i,
                        ksum - k2,
                        &wpool,
                        annihilator_cap,
                        sub_cap,
                        family.zero_modes.get(comp),
                    )?;
                    for wt in wterms {
                        let mut creators = wt.creators;
                        let mut annihilators = wt.annihilators;
                        if k2 > 0 {
                            annihilators.push(JIndex::new(*jcomp, k2));
                        } else if k2 < 0 {
                            creators.push(JIndex::new(*jcomp, k2));
                        }
                        acc.push(OpTerm {
                            hbar: HalfInt::from_doubled(wt.hbar.doubled + fhbar.doubled),
                            creators,
                            annihilators,
                            coeff: wt.coeff * factor.clone(),
                        });
                    }
                }
                acc
            }
        };
        for mut t in part_terms {
            t.coeff *= pref.clone();
            raw.push(t);
        }
    }

    let shifted = dilaton_shift(&raw, &family.shifts);
    let polarized = polarization_shift(&shifted, &family.phi)?;

    let mut kept = Vec::new();
    'term: for mut t in polarized {
        if t.hbar.doubled > hbar_cap.doubled {
            continue;
        }
        for a in &t.annihilators {
            if a.level > annihilator_cap {
                continue 'term;
            }
        }
        // Creators must lie inside the user pool (the extended pool only fed
        // the conjugations).
        let mut counts: BTreeMap<(u32, i64), usize> = BTreeMap::new();
        for c in &t.creators {
            *counts.entry((c.component, -c.level)).or_insert(0) += 1;
        }
        for (lab, m) in counts {
            if creator_pool.get(&lab).copied().unwrap_or(0) < m {
                continue 'term;
            }
        }
        for mode in t.creators.iter().chain(t.annihilators.iter()) {
            if let Some(modulus) = family.reduced.get(&mode.component) {
                if mode.level % modulus == 0 {
                    continue 'term;
                }
            }
        }
        t.coeff *= family.scale.clone();
        if family.parity_normalized {
            let deg = t.creators.len() + t.annihilators.len();
            if deg % 2 == 0 {
                t.coeff = -t.coeff;
            }
        }
        kept.push(t);
    }
    Ok(merge_terms(kept))
}

/// Coefficient of the pure linear term `J_{diag}` in the family, used to
/// normalize constraints to a unit diagonal head.
pub fn diagonal_coefficient(family: &CoeffFamily, diag: JIndex) -> Result<Rat, DiffOpError> {
    assert!(diag.level > 0);
    let terms = enumerate_terms(family, &BTreeMap::new(), diag.level, HalfInt::zero())?;
    for t in terms {
        if t.hbar == HalfInt::zero() && t.creators.is_empty() && t.annihilators == [diag] {
            return Ok(t.coeff);
        }
    }
    Ok(Rat::zero())
}

// ---------------------------------------------------------------------------
// Applying a constraint to a partition function
// ---------------------------------------------------------------------------

fn for_each_set_partition_of(
    n: usize,
    f: &mut dyn FnMut(&[Vec<usize>]),
) {
    fn rec(i: usize, n: usize, blocks: &mut Vec<Vec<usize>>, f: &mut dyn FnMut(&[Vec<usize>])) {
        if i == n {
            f(blocks);
            return;
        }
        for b in 0..blocks.len() {
            blocks[b].push(i);
            rec(i + 1, n, blocks, f);
            blocks[b].pop();
        }
        blocks.push(vec![i]);
        rec(i + 1, n, blocks, f);
        blocks.pop();
    }
    rec(0, n, &mut Vec::new(), f);
}

fn for_each_assignment(m: usize, nblocks: usize, buf: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
    if buf.len() == m {
        f(buf);
        return;
    }
    for b in 0..nblocks {
        buf.push(b);
        for_each_assignment(m, nblocks, buf, f);
        buf.pop();
    }
}

fn for_each_genus_split(
    target_doubled: i64,
    parts: usize,
    step: i64,
    buf: &mut Vec<i64>,
    f: &mut dyn FnMut(&[i64]),
) {
    if parts == 0 {
        if target_doubled == 0 {
            f(buf);
        }
        return;
    }
    let mut h = 0;
    while h <= target_doubled {
        buf.push(h);
        for_each_genus_split(target_doubled - h, parts - 1, step, buf, f);
        buf.pop();
        h += step;
    }
}

/// Evaluates the residual of a constraint against free energies supplied by
/// `lookup`, which is called only for entries with `2h − 2 + n > 0` and
/// sorted positive labels. The residual includes the diagonal linear term.
pub fn residual_with<E: From<DiffOpError>>(
    family: &CoeffFamily,
    g: HalfInt,
    beta: &[JIndex],
    annihilator_cap: i64,
    crosscapped: bool,
    lookup: &mut dyn FnMut(HalfInt, &[JIndex]) -> Result<Rat, E>,
) -> Result<Rat, E> {
    assert!(beta.iter().all(|b| b.level > 0));
    let mut pool: BTreeMap<(u32, i64), usize> = BTreeMap::new();
    for b in beta {
        *pool.entry((b.component, b.level)).or_insert(0) += 1;
    }
    let terms = enumerate_terms(family, &pool, annihilator_cap, g).map_err(E::from)?;
    let genus_step = if crosscapped { 1 } else { 2 };

    let mut total = Rat::zero();
    for term in &terms {
        // Match every creator to a distinct probe variable with the same
        // label: ∏ (falling factorial of available positions) × ∏ level.
        let mut cre_counts: BTreeMap<(u32, i64), usize> = BTreeMap::new();
        for c in &term.creators {
            *cre_counts.entry((c.component, -c.level)).or_insert(0) += 1;
        }
        let mut matched = Rat::one();
        let mut feasible = true;
        for (&(comp, a), &m) in &cre_counts {
            let avail = pool.get(&(comp, a)).copied().unwrap_or(0);
            if avail < m {
                feasible = false;
                break;
            }
            for t in 0..m {
                matched *= rat_int((avail - t) as i64);
            }
            matched *= rat_pow(&rat_int(a), m);
        }
        if !feasible {
            continue;
        }
        // Remaining probe variables after the creator matching.
        let mut beta_rest: Vec<JIndex> = Vec::new();
        {
            let mut remaining = cre_counts.clone();
            for b in beta {
                let key = (b.component, b.level);
                match remaining.get_mut(&key) {
                    Some(m) if *m > 0 => *m -= 1,
                    _ => beta_rest.push(*b),
                }
            }
        }

        let ann = &term.annihilators;
        let target_doubled =
            g.doubled - term.hbar.doubled - 2 * ann.len() as i64;
        let mut term_sum = Rat::zero();
        let mut err: Option<E> = None;
        for_each_set_partition_of(ann.len(), &mut |blocks| {
            if err.is_some() {
                return;
            }
            let nb = blocks.len();
            let split_target = target_doubled + 2 * nb as i64;
            if split_target < 0 {
                return;
            }
            if nb == 0 {
                // Scalar term: contributes only when no probes remain and
                // the whole ħ-power accounts for the genus.
                if beta_rest.is_empty() && split_target == 0 {
                    term_sum += Rat::one();
                }
                return;
            }
            let blocks = blocks.to_vec();
            for_each_assignment(beta_rest.len(), nb, &mut Vec::new(), &mut |assign| {
                if err.is_some() {
                    return;
                }
                let assign = assign.to_vec();
                for_each_genus_split(split_target, nb, genus_step, &mut Vec::new(), &mut |hs| {
                    if err.is_some() {
                        return;
                    }
                    let mut prod = Rat::one();
                    for (bi, block) in blocks.iter().enumerate() {
                        let mut labels: Vec<JIndex> =
                            block.iter().map(|&s| ann[s]).collect();
                        for (pi, &ab) in assign.iter().enumerate() {
                            if ab == bi {
                                labels.push(beta_rest[pi]);
                            }
                        }
                        let hd = hs[bi];
                        // 2h − 2 + n ≤ 0 entries vanish: the only nonzero
                        // such free energy pairs a creator with an
                        // annihilator, and all labels here are positive.
                        let chi_doubled = hd * 2 + 2 * (labels.len() as i64 - 2);
                        if chi_doubled <= 0 {
                            prod = Rat::zero();
                            break;
                        }
                        labels.sort();
                        match lookup(HalfInt::from_doubled(hd), &labels) {
                            Ok(v) => {
                                if v.is_zero() {
                                    prod = Rat::zero();
                                    break;
                                }
                                prod *= v;
                            }
                            Err(e) => {
                                err = Some(e);
                                return;
                            }
                        }
                    }
                    term_sum += prod;
                });
            });
        });
        if let Some(e) = err {
            return Err(e);
        }
        total += term.coeff.clone() * matched * term_sum;
    }
    Ok(total)
}

/// Evaluates the constraint residual against a computed free-energy table;
/// zero for every probe when the table is the structure's solution.
#[allow(non_snake_case)]
pub fn apply_to_Z(
    family: &CoeffFamily,
    table: &FTable,
    g: HalfInt,
    beta: &[JIndex],
    annihilator_cap: i64,
    crosscapped: bool,
) -> Result<Rat, DiffOpError> {
    residual_with(family, g, beta, annihilator_cap, crosscapped, &mut |h, labels| {
        table.get(h, labels).ok_or_else(|| DiffOpError::MissingF {
            doubled_genus: h.doubled,
            labels: labels.to_vec(),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::rat;

    fn no_pool() -> BTreeMap<(u32, i64), usize> {
        BTreeMap::new()
    }

    fn mode_family(r: usize, i: usize, k: i64) -> CoeffFamily {
        CoeffFamily::new(vec![(Rat::one(), FamilyPart::Mode { comp: 1, r, i, k })])
    }

    #[test]
    fn linear_mode_of_rank_three() {
        // W^1_2 at r = 3 is the single annihilator J_6.
        let terms =
            enumerate_terms(&mode_family(3, 1, 2), &no_pool(), 10, HalfInt::from_int(2)).unwrap();
        assert_eq!(terms.len(), 1);
        assert_eq!(terms[0].annihilators, vec![JIndex::new(1, 6)]);
        assert!(terms[0].creators.is_empty());
        assert_eq!(terms[0].coeff, rat_int(1));
        assert_eq!(terms[0].hbar, HalfInt::zero());
    }

    #[test]
    fn quadratic_mode_constant_term() {
        // W^2_1 at r = 2 against an empty pool is the scalar −ħ/8.
        let terms =
            enumerate_terms(&mode_family(2, 2, 1), &no_pool(), 10, HalfInt::from_int(2)).unwrap();
        assert_eq!(terms.len(), 1);
        assert!(terms[0].creators.is_empty() && terms[0].annihilators.is_empty());
        assert_eq!(terms[0].hbar, HalfInt::from_int(1));
        assert_eq!(terms[0].coeff, rat(-1, 8));
    }

    #[test]
    fn quadratic_mode_creator_pair() {
        // W^2_0 at r = 2 with pool {1} contains −½ :J_{−1}J_{−1}:.
        let mut pool = no_pool();
        pool.insert((1, 1), 2);
        let terms = enumerate_terms(&mode_family(2, 2, 0), &pool, 10, HalfInt::zero()).unwrap();
        let t = terms
            .iter()
            .find(|t| t.creators == vec![JIndex::new(1, -1), JIndex::new(1, -1)])
            .expect("creator pair term");
        assert_eq!(t.coeff, rat(-1, 2));
    }

    #[test]
    fn dilaton_shift_binomial() {
        // :J_{−3}J_{−3}: with v_3 = −1 → :J_{−3}J_{−3}: − 2J_{−3} + 1.
        let term = OpTerm {
            hbar: HalfInt::zero(),
            creators: vec![JIndex::new(1, -3), JIndex::new(1, -3)],
            annihilators: vec![],
            coeff: Rat::one(),
        };
        let mut shifts = BTreeMap::new();
        shifts.insert((1, 3), rat_int(-1));
        let shifted = merge_terms(dilaton_shift(&[term], &shifts));
        assert_eq!(shifted.len(), 3);
        assert_eq!(shifted[0].creators.len(), 0);
        assert_eq!(shifted[0].coeff, rat_int(1));
        assert_eq!(shifted[1].creators.len(), 1);
        assert_eq!(shifted[1].coeff, rat_int(-2));
        assert_eq!(shifted[2].creators.len(), 2);
        assert_eq!(shifted[2].coeff, rat_int(1));
    }

    #[test]
    fn dilaton_shift_fixes_annihilators() {
        let term = OpTerm {
            hbar: HalfInt::zero(),
            creators: vec![],
            annihilators: vec![JIndex::new(1, 5)],
            coeff: Rat::one(),
        };
        let mut shifts = BTreeMap::new();
        shifts.insert((1, 3), rat_int(-1));
        assert_eq!(dilaton_shift(&[term.clone()], &shifts), vec![term]);
    }

    #[test]
    fn shifted_quadratic_mode_has_linear_head() {
        // W^2_1 at r = 2 with v_3 = −1 acquires the linear head J_3.
        let mut fam = mode_family(2, 2, 1);
        fam.shifts.insert((1, 3), rat_int(-1));
        let terms = enumerate_terms(&fam, &no_pool(), 10, HalfInt::from_int(1)).unwrap();
        let head = terms
            .iter()
            .find(|t| t.creators.is_empty() && t.annihilators == vec![JIndex::new(1, 3)])
            .expect("linear head");
        assert_eq!(head.coeff, rat_int(1));
    }

    #[test]
    fn polarization_square_with_contraction() {
        // :J_{−1}J_{−1}: with φ_{1,1} = c.
        let c = rat(2, 7);
        let term = OpTerm {
            hbar: HalfInt::zero(),
            creators: vec![JIndex::new(1, -1), JIndex::new(1, -1)],
            annihilators: vec![],
            coeff: Rat::one(),
        };
        let mut phi = BTreeMap::new();
        phi.insert(((1, 1), (1, 1)), c.clone());
        let out = merge_terms(polarization_shift(&[term], &phi).unwrap());
        assert_eq!(out.len(), 4);
        // ħ c
        let contraction = out
            .iter()
            .find(|t| t.hbar == HalfInt::from_int(1))
            .unwrap();
        assert!(contraction.creators.is_empty() && contraction.annihilators.is_empty());
        assert_eq!(contraction.coeff, c.clone());
        // 2c :J_{−1}J_1:
        let mixed = out
            .iter()
            .find(|t| t.creators.len() == 1 && t.annihilators.len() == 1)
            .unwrap();
        assert_eq!(mixed.coeff, rat_int(2) * c.clone());
        // c² :J_1 J_1:
        let sq = out
            .iter()
            .find(|t| t.creators.is_empty() && t.annihilators.len() == 2)
            .unwrap();
        assert_eq!(sq.coeff, c.clone() * c.clone());
    }

    #[test]
    fn polarization_single_substitution() {
        // J_{−2} with φ_{2,3} = c → J_{−2} + (c/3) J_3.
        let c = rat(5, 3);
        let term = OpTerm {
            hbar: HalfInt::zero(),
            creators: vec![JIndex::new(1, -2)],
            annihilators: vec![],
            coeff: Rat::one(),
        };
        let mut phi = BTreeMap::new();
        phi.insert(((1, 2), (1, 3)), c.clone());
        let out = merge_terms(polarization_shift(&[term], &phi).unwrap());
        assert_eq!(out.len(), 2);
        let sub = out.iter().find(|t| t.creators.is_empty()).unwrap();
        assert_eq!(sub.annihilators, vec![JIndex::new(1, 3)]);
        assert_eq!(sub.coeff, c / rat_int(3));
    }

    #[test]
    fn polarization_then_inverse_is_identity() {
        let term = OpTerm {
            hbar: HalfInt::zero(),
            creators: vec![JIndex::new(1, -2), JIndex::new(1, -2), JIndex::new(1, -1)],
            annihilators: vec![JIndex::new(1, 4)],
            coeff: rat(3, 5),
        };
        let mut phi = BTreeMap::new();
        phi.insert(((1, 1), (1, 2)), rat(1, 3));
        phi.insert(((1, 2), (1, 2)), rat(-2, 7));
        let mut neg = BTreeMap::new();
        for (k, v) in &phi {
            neg.insert(*k, -v.clone());
        }
        let once = polarization_shift(&[term.clone()], &phi).unwrap();
        let back = merge_terms(polarization_shift(&once, &neg).unwrap());
        assert_eq!(back, vec![term]);
    }

    #[test]
    fn asymmetric_phi_rejected() {
        let term = OpTerm {
            hbar: HalfInt::zero(),
            creators: vec![JIndex::new(1, -1)],
            annihilators: vec![],
            coeff: Rat::one(),
        };
        let mut phi = BTreeMap::new();
        phi.insert(((1, 1), (1, 2)), rat_int(1));
        phi.insert(((1, 2), (1, 1)), rat_int(2));
        assert!(matches!(
            polarization_shift(&[term], &phi),
            Err(DiffOpError::AsymmetricPhi(_, _))
        ));
    }

    #[test]
    fn conjugations_commute() {
        let term = OpTerm {
            hbar: HalfInt::zero(),
            creators: vec![JIndex::new(1, -1), JIndex::new(1, -1), JIndex::new(1, -3)],
            annihilators: vec![],
            coeff: Rat::one(),
        };
        let mut shifts = BTreeMap::new();
        shifts.insert((1, 3), rat(-4, 3));
        let mut phi = BTreeMap::new();
        phi.insert(((1, 1), (1, 1)), rat(2, 5));
        let a = merge_terms(
            polarization_shift(&dilaton_shift(&[term.clone()], &shifts), &phi).unwrap(),
        );
        let b = merge_terms(dilaton_shift(
            &polarization_shift(&[term], &phi).unwrap(),
            &shifts,
        ));
        assert_eq!(a, b);
    }

    #[test]
    fn residual_of_bare_linear_term_is_table_lookup() {
        let fam = CoeffFamily::new(vec![(
            Rat::one(),
            FamilyPart::Single { comp: 1, level: 4 },
        )]);
        let beta = [JIndex::new(1, 1), JIndex::new(1, 2)];
        let expected = rat(9, 2);
        let got = residual_with::<DiffOpError>(
            &fam,
            HalfInt::zero(),
            &beta,
            10,
            false,
            &mut |h, labels| {
                assert_eq!(h, HalfInt::zero());
                assert_eq!(
                    labels,
                    [JIndex::new(1, 1), JIndex::new(1, 2), JIndex::new(1, 4)]
                );
                Ok(rat(9, 2))
            },
        )
        .unwrap();
        assert_eq!(got, expected);
    }
}
