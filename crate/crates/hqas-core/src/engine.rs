//! Topological recursion on a structure of normal-ordered constraints.
//!
//! A [`StructureSpec`] describes a family of constraint operators with unit
//! diagonal linear heads, indexed bijectively by variable labels. The
//! recursion solves `H·Z = 0` order by order in the Euler characteristic
//! `2g − 2 + n`, producing the free energies `F_{g,n}` as exact rationals in
//! an [`FTable`]. Genus is stored doubled throughout so that crosscapped
//! structures (half-integer genus, half-integer powers of ħ) share the same
//! code path.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use itertools::Itertools;
use num_traits::{One, Zero};
use thiserror::Error;

use crate::arith::{HalfInt, Rat};
use crate::diffop::{
    diagonal_coefficient, residual_with, CoeffFamily, DiffOpError, FamilyPart, JIndex,
};

/// Annihilator levels are bounded by momentum conservation at every step;
/// this cap only guards against malformed data.
const ANN_CAP: i64 = 1 << 40;

/// Errors produced by structure assembly and the recursion.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    /// The label is not a variable label of the structure.
    #[error("unknown variable label ({component}, {level})")]
    UnknownLabel { component: u32, level: i64 },
    /// A half-integer genus was requested on a structure without ħ^{1/2}.
    #[error("half-integer genus {0} on a structure that is not crosscapped")]
    HalfGenusOnIntegerStructure(HalfInt),
    /// The operator for this label has no linear term at its own label.
    #[error("constraint at ({component}, {level}) has a vanishing diagonal coefficient")]
    ZeroDiagonal { component: u32, level: i64 },
    /// The linear heads are not triangular: the recursion revisited an entry.
    #[error("non-triangular linear heads: revisited 2g={doubled_genus}, labels {labels:?}")]
    NonTriangular { doubled_genus: i64, labels: Vec<JIndex> },
    /// Operator enumeration or evaluation failed.
    #[error(transparent)]
    DiffOp(#[from] DiffOpError),
}

// ---------------------------------------------------------------------------
// Free-energy table
// ---------------------------------------------------------------------------

/// Exact table of free energies keyed by doubled genus and sorted labels.
/// The conventional `F_{0,2}` values are virtual and never stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FTable {
    entries: BTreeMap<(i64, Vec<JIndex>), Rat>,
}

impl FTable {
    /// Empty table.
    pub fn new() -> Self {
        FTable { entries: BTreeMap::new() }
    }

    /// Looks up a stored entry; labels must be sorted.
    pub fn get(&self, genus: HalfInt, labels: &[JIndex]) -> Option<Rat> {
        self.entries.get(&(genus.doubled, labels.to_vec())).cloned()
    }

    /// Stores an entry; requires `2g − 2 + n > 0` and sorted labels.
    pub fn insert(&mut self, genus: HalfInt, labels: Vec<JIndex>, value: Rat) {
        assert!(genus.doubled + labels.len() as i64 - 2 > 0, "stored keys need 2g-2+n > 0");
        assert!(labels.windows(2).all(|w| w[0] <= w[1]), "labels must be sorted");
        self.entries.insert((genus.doubled, labels), value);
    }

    /// All stored entries in deterministic order.
    pub fn iter(&self) -> impl Iterator<Item = (HalfInt, &[JIndex], &Rat)> {
        self.entries
            .iter()
            .map(|((d, ls), v)| (HalfInt::from_doubled(*d), ls.as_slice(), v))
    }

    /// Number of stored entries.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Whether the table is empty.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Structure specification
// ---------------------------------------------------------------------------

/// Per-component data of a structure: twist order, dilaton values, optional
/// zero-mode charge, and the reduction flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentData {
    /// Twist order r of the component.
    pub r: usize,
    /// The distinguished level s (minimal dilaton level not divisible by r).
    pub s: i64,
    /// Dilaton values: level `a ↦ v` gives `J_{-a} → J_{-a} + v`.
    pub tau: BTreeMap<i64, Rat>,
    /// Zero-mode charge: `J_0 = ħ^{1/2}·value`.
    pub zero_mode: Option<Rat>,
    /// When set, levels divisible by r are removed from the variables and
    /// from all operator terms.
    pub reduced: bool,
}

/// How the constraint operators are assembled from the component data.
#[derive(Debug, Clone, PartialEq)]
pub enum SpecKind {
    /// One twisted W-mode family per component, conjugated by the dilaton
    /// shift and the polarization.
    Standard,
    /// The two-component assembly obtained from an (r−1)-cycle twist of
    /// gl_r: component 1 carries the (r−1)-twisted modes, component 2 a
    /// plain free boson, glued by convolution products.
    CycleRm1 {
        /// The rank r of the ambient algebra (component 1 has order r−1).
        big_r: usize,
    },
}

/// A higher quantum Airy structure in solved normal form: variable labels
/// `(component, positive level)`, one constraint per label with unit diagonal
/// linear head, assembled lazily from the component data.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureSpec {
    /// Operator assembly rule.
    pub kind: SpecKind,
    /// Component data, indexed by component − 1.
    pub components: Vec<ComponentData>,
    /// Polarization matrix between creator labels (symmetric).
    pub phi: BTreeMap<((u32, i64), (u32, i64)), Rat>,
    /// Whether half-integer ħ-powers (and genera) are allowed.
    pub crosscapped: bool,
    /// When set, `F_{g,n}[idx] = 0` unless `Σ levels = grading·(2g−2+n)`
    /// exactly (valid for single-component standard structures with a
    /// one-entry dilaton and no polarization).
    pub exact_grading: Option<i64>,
    /// When set, `F_{g,n}[idx] = 0 whenever Σ levels > bound·(2g−2+n)`;
    /// cuts the ascending same-characteristic linear chains.
    pub chain_bound: Option<i64>,
}

impl StructureSpec {
    /// Whether `(component, level)` is a variable label of the structure.
    pub fn valid_label(&self, component: u32, level: i64) -> bool {
        if component == 0 || component as usize > self.components.len() || level <= 0 {
            return false;
        }
        let data = &self.components[component as usize - 1];
        !(data.reduced && level % data.r as i64 == 0)
    }

    /// All variable labels with level ≤ `q_max`, in sorted order.
    pub fn labels_up_to(&self, q_max: i64) -> Vec<JIndex> {
        let mut labels = Vec::new();
        for comp in 1..=self.components.len() as u32 {
            for q in 1..=q_max {
                if self.valid_label(comp, q) {
                    labels.push(JIndex::new(comp, q));
                }
            }
        }
        labels
    }
}

// ---------------------------------------------------------------------------
// Recursion session
// ---------------------------------------------------------------------------

/// A memoized recursion over one structure.
pub struct Session<'a> {
    spec: &'a StructureSpec,
    memo: HashMap<(i64, Vec<JIndex>), Rat>,
    families: HashMap<(u32, i64), Rc<CoeffFamily>>,
    stack: Vec<(i64, Vec<JIndex>)>,
}

fn chi_of(doubled_genus: i64, n: usize) -> i64 {
    doubled_genus + n as i64 - 2
}

impl<'a> Session<'a> {
    /// Fresh session over a structure.
    pub fn new(spec: &'a StructureSpec) -> Self {
        Session { spec, memo: HashMap::new(), families: HashMap::new(), stack: Vec::new() }
    }

    /// The normalized constraint operator whose diagonal head is the label.
    pub fn family(&mut self, label: JIndex) -> Result<Rc<CoeffFamily>, EngineError> {
        let key = (label.component, label.level);
        if let Some(f) = self.families.get(&key) {
            return Ok(f.clone());
        }
        if !self.spec.valid_label(label.component, label.level) {
            return Err(EngineError::UnknownLabel {
                component: label.component,
                level: label.level,
            });
        }
        let mut fam = assemble_family(self.spec, label.component, label.level)?;
        let diag = diagonal_coefficient(&fam, label)?;
        if diag.is_zero() {
            return Err(EngineError::ZeroDiagonal {
                component: label.component,
                level: label.level,
            });
        }
        fam.scale = fam.scale.clone() / diag;
        let fam = Rc::new(fam);
        self.families.insert(key, fam.clone());
        Ok(fam)
    }

    /// Memoized `F_{g,n}[labels]` with the smallest label distinguished.
    /// `labels` must be sorted, positive and satisfy `2g − 2 + n > 0`.
    pub fn value(&mut self, doubled_genus: i64, labels: Vec<JIndex>) -> Result<Rat, EngineError> {
        debug_assert!(labels.windows(2).all(|w| w[0] <= w[1]));
        let key = (doubled_genus, labels);
        if let Some(v) = self.memo.get(&key) {
            return Ok(v.clone());
        }
        let (doubled_genus, labels) = key;
        for l in &labels {
            if !self.spec.valid_label(l.component, l.level) {
                return Err(EngineError::UnknownLabel { component: l.component, level: l.level });
            }
        }
        let chi = chi_of(doubled_genus, labels.len());
        let total: i64 = labels.iter().map(|l| l.level).sum();
        let cut = match (self.spec.exact_grading, self.spec.chain_bound) {
            (Some(s), _) => total != s * chi,
            (None, Some(m)) => total > m * chi,
            (None, None) => false,
        };
        if cut {
            self.memo.insert((doubled_genus, labels), Rat::zero());
            return Ok(Rat::zero());
        }
        let key = (doubled_genus, labels);
        if self.stack.contains(&key) {
            return Err(EngineError::NonTriangular {
                doubled_genus: key.0,
                labels: key.1,
            });
        }
        self.stack.push(key.clone());
        let result = self.solve_entry(key.0, &key.1, 0);
        self.stack.pop();
        let v = result?;
        self.memo.insert(key, v.clone());
        Ok(v)
    }

    /// Solves one constraint for `F_{g,n}[labels]`, with `labels[pos]`
    /// selecting the constraint. The diagonal term (coefficient 1 after
    /// normalization) is the unknown; everything else moves to the
    /// right-hand side.
    fn solve_entry(
        &mut self,
        doubled_genus: i64,
        labels: &[JIndex],
        pos: usize,
    ) -> Result<Rat, EngineError> {
        let q0 = labels[pos];
        let mut beta: Vec<JIndex> = labels.to_vec();
        beta.remove(pos);
        let fam = self.family(q0)?;
        let mut target: Vec<JIndex> = labels.to_vec();
        target.sort();
        let target = (doubled_genus, target);
        let crosscapped = self.spec.crosscapped;
        let residual: Rat = {
            let this = &mut *self;
            residual_with::<EngineError>(
                &fam,
                HalfInt::from_doubled(doubled_genus),
                &beta,
                ANN_CAP,
                crosscapped,
                &mut |h, ls| {
                    if h.doubled == target.0 && ls == target.1.as_slice() {
                        // The diagonal unknown itself: solved for below.
                        return Ok(Rat::zero());
                    }
                    this.value(h.doubled, ls.to_vec())
                },
            )?
        };
        Ok(-residual)
    }
}

// ---------------------------------------------------------------------------
// Operator assembly
// ---------------------------------------------------------------------------

/// Builds the (un-normalized) constraint operator for one variable label.
fn assemble_family(
    spec: &StructureSpec,
    component: u32,
    level: i64,
) -> Result<CoeffFamily, EngineError> {
    let unknown = || EngineError::UnknownLabel { component, level };
    match &spec.kind {
        SpecKind::Standard => {
            let data = &spec.components[component as usize - 1];
            let (i, k) =
                crate::wgl::pi_s_inv(data.r, data.s, level).map_err(|_| unknown())?;
            let mut fam = CoeffFamily::new(vec![(
                Rat::one(),
                FamilyPart::Mode { comp: component, r: data.r, i, k },
            )]);
            fill_common(&mut fam, spec);
            Ok(fam)
        }
        SpecKind::CycleRm1 { big_r } => {
            let r1 = *big_r - 1;
            let s = spec.components[0].s;
            let mut parts = Vec::new();
            match component {
                1 => {
                    let (i, k) = crate::wgl::pi_s_inv(r1, s, level).map_err(|_| unknown())?;
                    if i == 1 {
                        // H¹_k + H^{r}_{r−1−s+k}: the plain mode, the glued
                        // free boson, and the top convolution.
                        parts.push((Rat::one(), FamilyPart::Mode { comp: 1, r: r1, i: 1, k }));
                        parts.push((Rat::one(), FamilyPart::Single { comp: 2, level: k }));
                        let ktop = r1 as i64 - s + k;
                        parts.push((
                            Rat::from_integer((r1 as i64).into()),
                            FamilyPart::ModeTimesSingle {
                                comp: 1,
                                r: r1,
                                i: r1,
                                jcomp: 2,
                                ksum: ktop - 1,
                            },
                        ));
                    } else {
                        // H^i_k for 2 ≤ i ≤ r−1.
                        parts.push((Rat::one(), FamilyPart::Mode { comp: 1, r: r1, i, k }));
                        parts.push((
                            Rat::from_integer((r1 as i64).into()),
                            FamilyPart::ModeTimesSingle {
                                comp: 1,
                                r: r1,
                                i: i - 1,
                                jcomp: 2,
                                ksum: k - 1,
                            },
                        ));
                    }
                }
                2 => {
                    // −H^{r}_k with k = level + r − 1 − s.
                    let k = level + r1 as i64 - s;
                    parts.push((
                        -Rat::from_integer((r1 as i64).into()),
                        FamilyPart::ModeTimesSingle {
                            comp: 1,
                            r: r1,
                            i: r1,
                            jcomp: 2,
                            ksum: k - 1,
                        },
                    ));
                }
                _ => return Err(unknown()),
            }
            let mut fam = CoeffFamily::new(parts);
            fill_common(&mut fam, spec);
            Ok(fam)
        }
    }
}

fn fill_common(fam: &mut CoeffFamily, spec: &StructureSpec) {
    for (ci, data) in spec.components.iter().enumerate() {
        let comp = ci as u32 + 1;
        for (&a, v) in &data.tau {
            fam.shifts.insert((comp, a), v.clone());
        }
        if let Some(z) = &data.zero_mode {
            if !z.is_zero() {
                fam.zero_modes.insert(comp, z.clone());
            }
        }
        if data.reduced {
            fam.reduced.insert(comp, data.r as i64);
        }
    }
    fam.phi = spec.phi.clone();
    fam.parity_normalized = true;
}

// ---------------------------------------------------------------------------
// Public drivers
// ---------------------------------------------------------------------------

fn validate_probe(
    spec: &StructureSpec,
    g: HalfInt,
    idx: &[JIndex],
) -> Result<(), EngineError> {
    if !spec.crosscapped && !g.is_integer() {
        return Err(EngineError::HalfGenusOnIntegerStructure(g));
    }
    assert!(g.doubled >= 0, "genus must be nonnegative");
    assert!(chi_of(g.doubled, idx.len()) > 0, "need 2g-2+n > 0");
    for l in idx {
        if !spec.valid_label(l.component, l.level) {
            return Err(EngineError::UnknownLabel { component: l.component, level: l.level });
        }
    }
    Ok(())
}

/// The free energy `F_{g,n}[idx]`, computed by the recursion using the first
/// index's constraint and memoizing all sub-entries.
#[allow(non_snake_case)]
pub fn compute_F(spec: &StructureSpec, g: HalfInt, idx: &[JIndex]) -> Result<Rat, EngineError> {
    validate_probe(spec, g, idx)?;
    let mut session = Session::new(spec);
    let mut sorted = idx.to_vec();
    sorted.sort();
    if sorted[0] == idx[0] {
        session.value(g.doubled, sorted)
    } else {
        // Honor the caller's distinguished index even when it is not the
        // canonical (smallest) one.
        let pos = idx.iter().position(|l| *l == idx[0]).unwrap();
        session.solve_entry(g.doubled, idx, pos)
    }
}

/// Every `F_{g,n}[idx]` with `2g − 2 + n ≤ chi_max` and labels ≤ `q_max`.
pub fn compute_all(
    spec: &StructureSpec,
    chi_max: i64,
    q_max: i64,
) -> Result<FTable, EngineError> {
    assert!(chi_max >= 1 && q_max >= 0);
    let mut session = Session::new(spec);
    let table = compute_all_in(&mut session, chi_max, q_max)?;
    Ok(table)
}

fn compute_all_in(
    session: &mut Session<'_>,
    chi_max: i64,
    q_max: i64,
) -> Result<FTable, EngineError> {
    let spec = session.spec;
    let labels = spec.labels_up_to(q_max);
    let mut table = FTable::new();
    for chi in 1..=chi_max {
        for doubled_genus in 0..=chi + 1 {
            if !spec.crosscapped && doubled_genus % 2 != 0 {
                continue;
            }
            let n = (chi + 2 - doubled_genus) as usize;
            if n == 0 {
                continue;
            }
            for combo in labels.iter().copied().combinations_with_replacement(n) {
                let v = session.value(doubled_genus, combo.clone())?;
                table.insert(HalfInt::from_doubled(doubled_genus), combo, v);
            }
        }
    }
    Ok(table)
}

/// One symmetry failure: the same entry computed from two distinguished
/// indices with different results.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryViolation {
    /// Doubled genus of the entry.
    pub doubled_genus: i64,
    /// Sorted index tuple.
    pub idx: Vec<JIndex>,
    /// Value with the smallest label distinguished.
    pub canonical: Rat,
    /// The differing value and the position that produced it.
    pub other: Rat,
    /// Index position used as the distinguished one.
    pub position: usize,
}

/// Recomputes every table entry from each distinguished index position and
/// reports the tuples whose values differ.
pub fn check_symmetry(
    spec: &StructureSpec,
    chi_max: i64,
    q_max: i64,
) -> Result<Vec<SymmetryViolation>, EngineError> {
    let mut session = Session::new(spec);
    let table = compute_all_in(&mut session, chi_max, q_max)?;
    let mut violations = Vec::new();
    let entries: Vec<(i64, Vec<JIndex>, Rat)> = table
        .iter()
        .map(|(g, ls, v)| (g.doubled, ls.to_vec(), v.clone()))
        .collect();
    for (dg, idx, canonical) in entries {
        for pos in 1..idx.len() {
            if idx[pos] == idx[pos - 1] {
                continue;
            }
            let other = session.solve_entry(dg, &idx, pos)?;
            if other != canonical {
                violations.push(SymmetryViolation {
                    doubled_genus: dg,
                    idx: idx.clone(),
                    canonical: canonical.clone(),
                    other,
                    position: pos,
                });
            }
        }
    }
    Ok(violations)
}

/// One nonzero constraint residual.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnihilationViolation {
    /// Label of the constraint operator.
    pub operator: JIndex,
    /// Doubled genus of the probe.
    pub doubled_genus: i64,
    /// Derivative multi-index of the probe.
    pub beta: Vec<JIndex>,
    /// The nonzero residual.
    pub residual: Rat,
}

/// Applies every constraint to the partition function encoded by `table`
/// (falling back to fresh computation for entries beyond the table) and
/// reports all nonzero residuals.
pub fn check_annihilation(
    spec: &StructureSpec,
    table: &FTable,
    chi_max: i64,
    q_max: i64,
) -> Result<Vec<AnnihilationViolation>, EngineError> {
    let mut session = Session::new(spec);
    for (g, ls, v) in table.iter() {
        session.memo.insert((g.doubled, ls.to_vec()), v.clone());
    }
    let labels = spec.labels_up_to(q_max);
    let mut violations = Vec::new();
    for &op in &labels {
        for chi in 1..=chi_max {
            for doubled_genus in 0..=chi + 1 {
                if !spec.crosscapped && doubled_genus % 2 != 0 {
                    continue;
                }
                let nb = (chi + 2 - doubled_genus - 1) as i64;
                if nb < 0 {
                    continue;
                }
                let fam = session.family(op)?;
                for beta in labels
                    .iter()
                    .copied()
                    .combinations_with_replacement(nb as usize)
                {
                    let this = &mut session;
                    let residual = residual_with::<EngineError>(
                        &fam,
                        HalfInt::from_doubled(doubled_genus),
                        &beta,
                        ANN_CAP,
                        spec.crosscapped,
                        &mut |h, ls| this.value(h.doubled, ls.to_vec()),
                    )?;
                    if !residual.is_zero() {
                        violations.push(AnnihilationViolation {
                            operator: op,
                            doubled_genus,
                            beta: beta.clone(),
                            residual,
                        });
                    }
                }
            }
        }
    }
    Ok(violations)
}
