//! Finite coarse spaces and entourage calculus.
//!
//! Points are plain integer ids. An entourage is an explicit set of ordered
//! pairs `(x', x)`; composition, images, thinnings and restrictions are exact
//! set arithmetic. A [`FiniteCoarseSpace`] carries a named generating family
//! of entourages; membership in the generated coarse structure is modelled by
//! containment in a bounded-depth composition of the generators (see
//! [`FiniteCoarseSpace::depth_envelope`]).

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

pub type PointId = u32;

/// Default cap on the number of maximal bounded sets enumerated by
/// [`is_lebesgue`].
pub const DEFAULT_CLIQUE_CAP: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("point ids are not distinct: {0}")]
    DuplicatePoint(PointId),
    #[error("entourage {name:?} references unknown point in pair ({0}, {1})", .pair.0, .pair.1)]
    DanglingPair { name: String, pair: (PointId, PointId) },
    #[error("subset references unknown point {0}")]
    DanglingSubset(PointId),
    #[error("no entourage named {0:?}")]
    UnknownEntourage(String),
    #[error("big family members are not nested at index {0}")]
    NotNested(i64),
    #[error("big family indices are not strictly increasing at {0}")]
    BadIndices(i64),
    #[error("maximal bounded-set enumeration exceeded the cap of {0}")]
    CliqueBudgetExceeded(usize),
}

/// A relation on point ids. The pair `(x', x)` reads "`x'` is reachable from
/// `x`", so `U[x]` collects first coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Entourage {
    pairs: BTreeSet<(PointId, PointId)>,
}

impl Entourage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I: IntoIterator<Item = (PointId, PointId)>>(iter: I) -> Self {
        Entourage { pairs: iter.into_iter().collect() }
    }

    pub fn diagonal<'a, I: IntoIterator<Item = &'a PointId>>(points: I) -> Self {
        Entourage { pairs: points.into_iter().map(|&p| (p, p)).collect() }
    }

    /// Full square `S × S`.
    pub fn full_on(set: &BTreeSet<PointId>) -> Self {
        let mut pairs = BTreeSet::new();
        for &a in set {
            for &b in set {
                pairs.insert((a, b));
            }
        }
        Entourage { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, a: PointId, b: PointId) -> bool {
        self.pairs.contains(&(a, b))
    }

    pub fn iter(&self) -> impl Iterator<Item = &(PointId, PointId)> {
        self.pairs.iter()
    }

    pub fn insert(&mut self, a: PointId, b: PointId) {
        self.pairs.insert((a, b));
    }

    pub fn inverse(&self) -> Entourage {
        Entourage { pairs: self.pairs.iter().map(|&(a, b)| (b, a)).collect() }
    }

    pub fn union(&self, other: &Entourage) -> Entourage {
        Entourage { pairs: self.pairs.union(&other.pairs).cloned().collect() }
    }

    pub fn intersect(&self, other: &Entourage) -> Entourage {
        Entourage { pairs: self.pairs.intersection(&other.pairs).cloned().collect() }
    }

    pub fn is_subset(&self, other: &Entourage) -> bool {
        self.pairs.is_subset(&other.pairs)
    }

    pub fn symmetrize(&self) -> Entourage {
        self.union(&self.inverse())
    }

    /// `{(a, c) : exists b with (a, b) in self and (b, c) in other}`.
    pub fn compose(&self, other: &Entourage) -> Entourage {
        let mut by_second: BTreeMap<PointId, Vec<PointId>> = BTreeMap::new();
        for &(a, b) in &self.pairs {
            by_second.entry(b).or_default().push(a);
        }
        let mut pairs = BTreeSet::new();
        for &(b, c) in &other.pairs {
            if let Some(as_) = by_second.get(&b) {
                for &a in as_ {
                    pairs.insert((a, c));
                }
            }
        }
        Entourage { pairs }
    }

    /// `U[A] = {x' : exists x in A with (x', x) in U}`.
    pub fn image(&self, set: &BTreeSet<PointId>) -> BTreeSet<PointId> {
        self.pairs.iter().filter(|(_, x)| set.contains(x)).map(|&(x1, _)| x1).collect()
    }

    pub fn image_point(&self, x: PointId) -> BTreeSet<PointId> {
        self.pairs.iter().filter(|&&(_, b)| b == x).map(|&(a, _)| a).collect()
    }

    /// The `U`-thinning `U(B) = {x in domain : U[x] subseteq B}`.
    pub fn thinning(&self, b: &BTreeSet<PointId>, domain: &BTreeSet<PointId>) -> BTreeSet<PointId> {
        let mut balls: BTreeMap<PointId, Vec<PointId>> = BTreeMap::new();
        for &(a, x) in &self.pairs {
            balls.entry(x).or_default().push(a);
        }
        domain
            .iter()
            .filter(|x| balls.get(x).map_or(true, |ball| ball.iter().all(|a| b.contains(a))))
            .cloned()
            .collect()
    }

    /// Right-restriction `V_A = V ∩ (Y × A)`.
    pub fn restrict_right(&self, a: &BTreeSet<PointId>) -> Entourage {
        Entourage { pairs: self.pairs.iter().filter(|(_, x)| a.contains(x)).cloned().collect() }
    }

    /// Restriction to `S × S`.
    pub fn restrict_to(&self, s: &BTreeSet<PointId>) -> Entourage {
        Entourage {
            pairs: self.pairs.iter().filter(|(a, b)| s.contains(a) && s.contains(b)).cloned().collect(),
        }
    }

    /// `B` is `U`-bounded iff `B × B ⊆ U`.
    pub fn is_bounded_set(&self, b: &BTreeSet<PointId>) -> bool {
        b.iter().all(|&x| b.iter().all(|&y| self.pairs.contains(&(x, y))))
    }

    /// Pushforward `f(U)` along a total map.
    pub fn pushforward(&self, f: &BTreeMap<PointId, PointId>) -> Entourage {
        Entourage { pairs: self.pairs.iter().map(|&(a, b)| (f[&a], f[&b])).collect() }
    }

    /// Preimage `f^{-1}(V) = {(a, b) : (f(a), f(b)) in V}` over the listed domain.
    pub fn preimage(&self, f: &BTreeMap<PointId, PointId>) -> Entourage {
        let mut pairs = BTreeSet::new();
        let mut fibers: BTreeMap<PointId, Vec<PointId>> = BTreeMap::new();
        for (&x, &y) in f {
            fibers.entry(y).or_default().push(x);
        }
        for &(a, b) in &self.pairs {
            if let (Some(fa), Some(fb)) = (fibers.get(&a), fibers.get(&b)) {
                for &x in fa {
                    for &y in fb {
                        pairs.insert((x, y));
                    }
                }
            }
        }
        Entourage { pairs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedEntourage {
    pub name: String,
    pub pairs: Entourage,
}

/// A finite point set with a named generating family of entourages. In the
/// finite model every subset is bounded (`all_bounded`), which is the only
/// bornology we use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteCoarseSpace {
    points: Vec<PointId>,
    entourages: Vec<NamedEntourage>,
    #[serde(default = "default_true")]
    all_bounded: bool,
}

fn default_true() -> bool {
    true
}

impl FiniteCoarseSpace {
    pub fn new(points: Vec<PointId>, entourages: Vec<NamedEntourage>) -> Result<Self, CoreError> {
        let mut seen = BTreeSet::new();
        for &p in &points {
            if !seen.insert(p) {
                return Err(CoreError::DuplicatePoint(p));
            }
        }
        for ent in &entourages {
            for &(a, b) in ent.pairs.iter() {
                if !seen.contains(&a) || !seen.contains(&b) {
                    return Err(CoreError::DanglingPair { name: ent.name.clone(), pair: (a, b) });
                }
            }
        }
        let mut points = points;
        points.sort_unstable();
        Ok(FiniteCoarseSpace { points, entourages, all_bounded: true })
    }

    pub fn points(&self) -> &[PointId] {
        &self.points
    }

    pub fn point_set(&self) -> BTreeSet<PointId> {
        self.points.iter().cloned().collect()
    }

    pub fn contains_point(&self, p: PointId) -> bool {
        self.points.binary_search(&p).is_ok()
    }

    pub fn entourages(&self) -> &[NamedEntourage] {
        &self.entourages
    }

    pub fn entourage(&self, name: &str) -> Result<&Entourage, CoreError> {
        self.entourages
            .iter()
            .find(|e| e.name == name)
            .map(|e| &e.pairs)
            .ok_or_else(|| CoreError::UnknownEntourage(name.to_string()))
    }

    pub fn diagonal(&self) -> Entourage {
        Entourage::diagonal(self.points.iter())
    }

    /// Union of all generators with their inverses and the diagonal,
    /// composed `depth` times. An entourage belongs to the generated coarse
    /// structure at this depth iff it is contained in the envelope.
    pub fn depth_envelope(&self, depth: usize) -> Entourage {
        let mut step = self.diagonal();
        for ent in &self.entourages {
            step = step.union(&ent.pairs).union(&ent.pairs.inverse());
        }
        let mut env = step.clone();
        for _ in 1..depth.max(1) {
            env = env.compose(&step);
        }
        env
    }

    pub fn in_generated_structure(&self, e: &Entourage, depth: usize) -> bool {
        e.is_subset(&self.depth_envelope(depth))
    }

    /// Connected components of the symmetrized union of all generators.
    pub fn coarse_components(&self) -> Vec<BTreeSet<PointId>> {
        let mut adj: BTreeMap<PointId, Vec<PointId>> = BTreeMap::new();
        for ent in &self.entourages {
            for &(a, b) in ent.pairs.iter() {
                adj.entry(a).or_default().push(b);
                adj.entry(b).or_default().push(a);
            }
        }
        let mut seen: BTreeSet<PointId> = BTreeSet::new();
        let mut comps = Vec::new();
        for &p in &self.points {
            if seen.contains(&p) {
                continue;
            }
            let mut comp = BTreeSet::new();
            let mut stack = vec![p];
            while let Some(q) = stack.pop() {
                if !seen.insert(q) {
                    continue;
                }
                comp.insert(q);
                if let Some(nbrs) = adj.get(&q) {
                    stack.extend(nbrs.iter().cloned());
                }
            }
            comps.push(comp);
        }
        comps
    }

    /// Restriction of the space to a subset of its points; entourages are
    /// restricted to pairs inside the subset.
    pub fn subspace(&self, points: &BTreeSet<PointId>) -> Result<FiniteCoarseSpace, CoreError> {
        for &p in points {
            if !self.contains_point(p) {
                return Err(CoreError::DanglingSubset(p));
            }
        }
        let entourages = self
            .entourages
            .iter()
            .map(|e| NamedEntourage { name: e.name.clone(), pairs: e.pairs.restrict_to(points) })
            .collect();
        FiniteCoarseSpace::new(points.iter().cloned().collect(), entourages)
    }

    /// Path metric entourage on `{offset .. offset+n}` at radius `r`.
    pub fn path_entourage(offset: PointId, n: u32, r: u32) -> Entourage {
        let mut pairs = BTreeSet::new();
        for i in 0..n {
            for j in 0..n {
                if i.abs_diff(j) <= r {
                    pairs.insert((offset + i, offset + j));
                }
            }
        }
        Entourage { pairs }
    }

    /// Cyclic metric entourage on `{offset .. offset+n}` at radius `r`.
    pub fn cycle_entourage(offset: PointId, n: u32, r: u32) -> Entourage {
        let mut pairs = BTreeSet::new();
        for i in 0..n {
            for j in 0..n {
                let d = i.abs_diff(j);
                if d.min(n - d) <= r {
                    pairs.insert((offset + i, offset + j));
                }
            }
        }
        Entourage { pairs }
    }

    /// A path `{0..n-1}` with metric entourages at the given radii, named `U<r>`.
    pub fn path(n: u32, radii: &[u32]) -> FiniteCoarseSpace {
        let entourages = radii
            .iter()
            .map(|&r| NamedEntourage { name: format!("U{r}"), pairs: Self::path_entourage(0, n, r) })
            .collect();
        FiniteCoarseSpace::new((0..n).collect(), entourages).expect("valid by construction")
    }

    /// A cycle `Z/nZ` with metric entourages at the given radii, named `U<r>`.
    pub fn cycle(n: u32, radii: &[u32]) -> FiniteCoarseSpace {
        let entourages = radii
            .iter()
            .map(|&r| NamedEntourage { name: format!("U{r}"), pairs: Self::cycle_entourage(0, n, r) })
            .collect();
        FiniteCoarseSpace::new((0..n).collect(), entourages).expect("valid by construction")
    }
}

/// An increasing chain of subsets with explicit integer indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigFamily {
    members: Vec<(i64, BTreeSet<PointId>)>,
}

impl BigFamily {
    pub fn new(members: Vec<(i64, BTreeSet<PointId>)>) -> Result<Self, CoreError> {
        for w in members.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(CoreError::BadIndices(w[1].0));
            }
            if !w[0].1.is_subset(&w[1].1) {
                return Err(CoreError::NotNested(w[1].0));
            }
        }
        Ok(BigFamily { members })
    }

    /// The family consisting of the single member `∅` at index 0.
    pub fn empty() -> Self {
        BigFamily { members: vec![(0, BTreeSet::new())] }
    }

    pub fn members(&self) -> &[(i64, BTreeSet<PointId>)] {
        &self.members
    }

    pub fn indices(&self) -> Vec<i64> {
        self.members.iter().map(|(k, _)| *k).collect()
    }

    pub fn member(&self, index: i64) -> Option<&BTreeSet<PointId>> {
        self.members.iter().find(|(k, _)| *k == index).map(|(_, z)| z)
    }

    /// `Z_k^c` inside the given ambient point set.
    pub fn complement(&self, ambient: &BTreeSet<PointId>, index: i64) -> BTreeSet<PointId> {
        match self.member(index) {
            Some(z) => ambient.difference(z).cloned().collect(),
            None => ambient.clone(),
        }
    }

    pub fn preimage(&self, f: &BTreeMap<PointId, PointId>) -> BigFamily {
        let members = self
            .members
            .iter()
            .map(|(k, z)| {
                (*k, f.iter().filter(|(_, y)| z.contains(y)).map(|(&x, _)| x).collect())
            })
            .collect();
        BigFamily { members }
    }

    pub fn is_all_empty(&self) -> bool {
        self.members.iter().all(|(_, z)| z.is_empty())
    }
}

/// An indexed family of subsets with cached multiplicity and bound data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverFamily {
    parts: Vec<BTreeSet<PointId>>,
    multiplicity: usize,
    bound: Entourage,
    lebesgue_witness: Option<Entourage>,
}

impl CoverFamily {
    pub fn new(parts: Vec<BTreeSet<PointId>>) -> Self {
        let multiplicity = multiplicity(&parts);
        let mut bound = Entourage::new();
        for p in &parts {
            bound = bound.union(&Entourage::full_on(p));
        }
        CoverFamily { parts, multiplicity, bound, lebesgue_witness: None }
    }

    pub fn with_lebesgue_witness(mut self, witness: Entourage) -> Self {
        self.lebesgue_witness = Some(witness);
        self
    }

    pub fn parts(&self) -> &[BTreeSet<PointId>] {
        &self.parts
    }

    pub fn multiplicity(&self) -> usize {
        self.multiplicity
    }

    pub fn bound(&self) -> &Entourage {
        &self.bound
    }

    pub fn lebesgue_witness(&self) -> Option<&Entourage> {
        self.lebesgue_witness.as_ref()
    }

    pub fn union_of_parts(&self) -> BTreeSet<PointId> {
        self.parts.iter().flatten().cloned().collect()
    }

    pub fn covers(&self, set: &BTreeSet<PointId>) -> bool {
        let u = self.union_of_parts();
        set.is_subset(&u)
    }

    /// Restrict every part to a subset, dropping emptied parts.
    pub fn restrict_to(&self, subset: &BTreeSet<PointId>) -> CoverFamily {
        let parts = self
            .parts
            .iter()
            .map(|p| p.intersection(subset).cloned().collect::<BTreeSet<_>>())
            .filter(|p: &BTreeSet<PointId>| !p.is_empty())
            .collect();
        CoverFamily::new(parts)
    }
}

/// `sup` over points of the number of parts containing it.
pub fn multiplicity(parts: &[BTreeSet<PointId>]) -> usize {
    let mut counts: BTreeMap<PointId, usize> = BTreeMap::new();
    for p in parts {
        for &x in p {
            *counts.entry(x).or_insert(0) += 1;
        }
    }
    counts.values().cloned().max().unwrap_or(0)
}

/// All maximal `U`-bounded subsets, via Bron–Kerbosch with pivoting on the
/// graph whose vertices are points with `(x, x) ∈ U` and whose edges require
/// both ordered pairs. Aborts once more than `cap` sets have been produced.
pub fn maximal_bounded_sets(
    u: &Entourage,
    ambient: &BTreeSet<PointId>,
    cap: usize,
) -> Result<Vec<BTreeSet<PointId>>, CoreError> {
    let vertices: Vec<PointId> =
        ambient.iter().filter(|&&x| u.contains(x, x)).cloned().collect();
    let vset: BTreeSet<PointId> = vertices.iter().cloned().collect();
    let mut adj: BTreeMap<PointId, BTreeSet<PointId>> = BTreeMap::new();
    for &(a, b) in u.iter() {
        if a != b && u.contains(b, a) && vset.contains(&a) && vset.contains(&b) {
            adj.entry(a).or_default().insert(b);
            adj.entry(b).or_default().insert(a);
        }
    }
    let empty = BTreeSet::new();
    let nbrs = |x: PointId| adj.get(&x).unwrap_or(&empty);

    let mut out = Vec::new();
    let mut stack = vec![(BTreeSet::new(), vset, BTreeSet::new())];
    while let Some((r, p, x)) = stack.pop() {
        if p.is_empty() && x.is_empty() {
            if !r.is_empty() {
                out.push(r);
                if out.len() > cap {
                    return Err(CoreError::CliqueBudgetExceeded(cap));
                }
            }
            continue;
        }
        // pivot with most neighbours in P
        let pivot = p
            .iter()
            .chain(x.iter())
            .max_by_key(|&&v| nbrs(v).intersection(&p).count())
            .cloned()
            .unwrap();
        let candidates: Vec<PointId> =
            p.difference(nbrs(pivot)).cloned().collect();
        let mut p = p;
        let mut x = x;
        for v in candidates {
            let mut r2 = r.clone();
            r2.insert(v);
            let p2 = p.intersection(nbrs(v)).cloned().collect();
            let x2 = x.intersection(nbrs(v)).cloned().collect();
            stack.push((r2, p2, x2));
            p.remove(&v);
            x.insert(v);
        }
    }
    Ok(out)
}

/// Is `U` a Lebesgue entourage of the cover? Returns `Ok(None)` when every
/// `U`-bounded subset of the ambient set lies inside some part, and a maximal
/// bounded witness set otherwise.
pub fn lebesgue_witness_failure(
    u: &Entourage,
    cover: &CoverFamily,
    ambient: &BTreeSet<PointId>,
    cap: usize,
) -> Result<Option<BTreeSet<PointId>>, CoreError> {
    for clique in maximal_bounded_sets(u, ambient, cap)? {
        if !cover.parts().iter().any(|part| clique.is_subset(part)) {
            return Ok(Some(clique));
        }
    }
    Ok(None)
}

pub fn is_lebesgue(
    u: &Entourage,
    cover: &CoverFamily,
    ambient: &BTreeSet<PointId>,
) -> Result<bool, CoreError> {
    Ok(lebesgue_witness_failure(u, cover, ambient, DEFAULT_CLIQUE_CAP)?.is_none())
}
