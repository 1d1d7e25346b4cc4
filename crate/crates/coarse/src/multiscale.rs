//! Rips complexes and finite multiscale models: the discretized cone and
//! squeezing space, and the branched coarse covering a base covering induces
//! between cone models.
//!
//! The continuous height direction of the cone is replaced by levels
//! `{0..T}`; an entourage of scale rank `s` allows height differences up to
//! `s` and base pairs that survive both the base entourage of that rank and
//! the schedule entourage at the lower of the two heights.

use crate::covering::{BranchedCovering, CayleyTable, CheckResult, CoveringError, GroupAction, VerificationReport};
use crate::space::{BigFamily, CoreError, Entourage, FiniteCoarseSpace, NamedEntourage, PointId};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MultiscaleError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Covering(#[from] CoveringError),
    #[error("simplex enumeration exceeded the cap of {0}")]
    SimplexBudgetExceeded(usize),
    #[error("schedule is empty")]
    EmptySchedule,
    #[error("schedule is not non-increasing at level {0}")]
    ScheduleNotNested(u32),
    #[error("schedule has {got} levels but {want} are required")]
    ScheduleLength { got: usize, want: usize },
}

/// Default cap on the number of simplices enumerated by [`rips_complex`].
pub const DEFAULT_SIMPLEX_CAP: usize = 1 << 20;

/// A non-increasing family of entourages indexed by level `0..T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    levels: Vec<Entourage>,
}

impl Schedule {
    pub fn new(levels: Vec<Entourage>) -> Result<Self, MultiscaleError> {
        if levels.is_empty() {
            return Err(MultiscaleError::EmptySchedule);
        }
        for (t, w) in levels.windows(2).enumerate() {
            if !w[1].is_subset(&w[0]) {
                return Err(MultiscaleError::ScheduleNotNested(t as u32 + 1));
            }
        }
        Ok(Schedule { levels })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn at(&self, t: u32) -> &Entourage {
        &self.levels[t as usize]
    }
}

/// A base space together with a shrinking schedule of entourages.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiscaleSpace {
    pub base: FiniteCoarseSpace,
    pub schedule: Schedule,
}

/// A finite simplicial complex: downward-closed bounded subsets at a scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplicialComplex {
    pub vertices: Vec<PointId>,
    /// sorted vertex lists, downward closed, grouped in enumeration order
    pub simplices: Vec<Vec<PointId>>,
    pub max_dim: usize,
}

impl SimplicialComplex {
    pub fn dim_count(&self, d: usize) -> usize {
        self.simplices.iter().filter(|s| s.len() == d + 1).count()
    }

    pub fn contains(&self, simplex: &[PointId]) -> bool {
        self.simplices.iter().any(|s| s.as_slice() == simplex)
    }

    /// Downward closure check: every sub-face of every simplex is present.
    pub fn is_downward_closed(&self) -> bool {
        let have: BTreeSet<&[PointId]> = self.simplices.iter().map(Vec::as_slice).collect();
        self.simplices.iter().all(|s| {
            (0..s.len()).all(|i| {
                if s.len() == 1 {
                    return true;
                }
                let mut face = s.clone();
                face.remove(i);
                have.contains(face.as_slice())
            })
        })
    }
}

/// The Rips complex `P_U(X)`: simplices are the `U`-bounded subsets of
/// cardinality at most `max_dim + 1`, after symmetrizing `U`.
pub fn rips_complex(
    space: &FiniteCoarseSpace,
    u: &Entourage,
    max_dim: usize,
    cap: usize,
) -> Result<SimplicialComplex, MultiscaleError> {
    let u = u.symmetrize();
    let vertices: Vec<PointId> =
        space.points().iter().filter(|&&x| u.contains(x, x)).cloned().collect();
    let mut adj: BTreeMap<PointId, BTreeSet<PointId>> = BTreeMap::new();
    for &(a, b) in u.iter() {
        if a != b && u.contains(a, a) && u.contains(b, b) {
            adj.entry(a).or_default().insert(b);
        }
    }
    let empty = BTreeSet::new();
    let mut simplices: Vec<Vec<PointId>> = Vec::new();
    // depth-first extension by larger ids keeps each subset enumerated once
    let mut stack: Vec<(Vec<PointId>, Vec<PointId>)> = vertices
        .iter()
        .rev()
        .map(|&v| {
            let cands = adj
                .get(&v)
                .unwrap_or(&empty)
                .iter()
                .filter(|&&w| w > v)
                .cloned()
                .collect();
            (vec![v], cands)
        })
        .collect();
    while let Some((simplex, cands)) = stack.pop() {
        simplices.push(simplex.clone());
        if simplices.len() > cap {
            return Err(MultiscaleError::SimplexBudgetExceeded(cap));
        }
        if simplex.len() == max_dim + 1 {
            continue;
        }
        for (i, &w) in cands.iter().enumerate() {
            let mut next = simplex.clone();
            next.push(w);
            let next_cands: Vec<PointId> = cands[i + 1..]
                .iter()
                .filter(|&&z| adj.get(&w).map_or(false, |nb| nb.contains(&z)))
                .cloned()
                .collect();
            stack.push((next, next_cands));
        }
    }
    simplices.sort();
    Ok(SimplicialComplex { vertices, simplices, max_dim })
}

/// Unique simplex lifting along a covering: finds the minimal big-family
/// index such that every simplex of `P_{f(U)}(Z^c)` has exactly one lift in
/// `P_U(f^{-1}(Z^c))` through each chosen vertex lift.
pub fn rips_lift_check(
    cov: &BranchedCovering,
    u: &Entourage,
    max_dim: usize,
    cap: usize,
) -> Result<VerificationReport, MultiscaleError> {
    let v = u.pushforward(cov.map());
    let target_pts = cov.target().point_set();
    let indices = cov.big_family().indices();

    let failure_at = |k: i64| -> Result<Option<(Vec<PointId>, PointId, usize)>, MultiscaleError> {
        let zc = cov.big_family().complement(&target_pts, k);
        let xc = cov.source_complement(k);
        let target_sub = cov.target().subspace(&zc)?;
        let source_sub = cov.source().subspace(&xc)?;
        let base = rips_complex(&target_sub, &v.restrict_to(&zc), max_dim, cap)?;
        let total = rips_complex(&source_sub, &u.restrict_to(&xc), max_dim, cap)?;
        let mut through: BTreeMap<PointId, Vec<usize>> = BTreeMap::new();
        for (i, s) in total.simplices.iter().enumerate() {
            for &x in s {
                through.entry(x).or_default().push(i);
            }
        }
        for s in &base.simplices {
            let sset: BTreeSet<PointId> = s.iter().cloned().collect();
            for &y0 in s {
                for &x0 in cov.fibre(y0) {
                    if !xc.contains(&x0) {
                        continue;
                    }
                    let count = through
                        .get(&x0)
                        .map(|is| {
                            is.iter()
                                .filter(|&&i| {
                                    let lift = &total.simplices[i];
                                    lift.len() == s.len()
                                        && lift
                                            .iter()
                                            .map(|&x| cov.apply(x))
                                            .collect::<BTreeSet<_>>()
                                            == sset
                                })
                                .count()
                        })
                        .unwrap_or(0);
                    if count != 1 {
                        return Ok(Some((s.clone(), x0, count)));
                    }
                }
            }
        }
        Ok(None)
    };

    let mut checks = Vec::new();
    let mut found = None;
    for &k in &indices {
        if failure_at(k)?.is_none() {
            found = Some(k);
            break;
        }
    }
    match found {
        Some(k) => checks.push(CheckResult::pass("rips-unique-lift", None, Some(k))),
        None => {
            let last = *indices.last().expect("big families are nonempty");
            let (s, x0, count) = failure_at(last)?.expect("failed at every index");
            checks.push(CheckResult::fail(
                "rips-unique-lift",
                None,
                Some(last),
                vec![],
                s.iter().cloned().chain([x0]).collect(),
                &format!("{count} lifts of a simplex through vertex lift {x0}"),
            ));
        }
    }
    Ok(VerificationReport { depth: 0, checks })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Levels are cone heights; entourages join adjacent levels.
    Cone,
    /// Levels are disjoint copies; entourages stay within one copy.
    Squeeze,
}

/// A leveled model: the underlying space, its height big family and the
/// coordinates of each point.
#[derive(Debug, Clone)]
pub struct LeveledModel {
    pub kind: ModelKind,
    pub space: FiniteCoarseSpace,
    pub big_family: BigFamily,
    /// new id -> (level, base point)
    pub coords: BTreeMap<PointId, (u32, PointId)>,
    pub id_of: BTreeMap<(u32, PointId), PointId>,
    pub levels: u32,
}

impl LeveledModel {
    pub fn level_set(&self, t: u32) -> BTreeSet<PointId> {
        self.coords.iter().filter(|(_, &(l, _))| l == t).map(|(&id, _)| id).collect()
    }
}

fn leveled_points(base: &FiniteCoarseSpace, levels: u32) -> (BTreeMap<PointId, (u32, PointId)>, BTreeMap<(u32, PointId), PointId>) {
    let mut coords = BTreeMap::new();
    let mut id_of = BTreeMap::new();
    let mut next: PointId = 0;
    for t in 0..levels {
        for &y in base.points() {
            coords.insert(next, (t, y));
            id_of.insert((t, y), next);
            next += 1;
        }
    }
    (coords, id_of)
}

/// Discretized cone over a base: points `{0..T} × Y`; the entourage of rank
/// `s` joins `((t', y'), (t, y))` iff `|t' - t| <= s`, `(y', y)` lies in the
/// rank-`s` base entourage and in the schedule entourage at `min(t, t')`.
/// The big family consists of the height cutoffs `{t <= n} × Y`, preceded by
/// the empty member at index `-1`.
pub fn cone_model(ms: &MultiscaleSpace) -> Result<LeveledModel, MultiscaleError> {
    let levels = ms.schedule.len() as u32;
    let (coords, id_of) = leveled_points(&ms.base, levels);
    let mut entourages = Vec::new();
    for (rank, gen) in ms.base.entourages().iter().enumerate() {
        let s = rank as u32 + 1;
        let mut pairs = Entourage::new();
        for (&a, &(ta, ya)) in &coords {
            for (&b, &(tb, yb)) in &coords {
                if ta.abs_diff(tb) <= s
                    && gen.pairs.contains(ya, yb)
                    && ms.schedule.at(ta.min(tb)).contains(ya, yb)
                {
                    pairs.insert(a, b);
                }
            }
        }
        entourages.push(NamedEntourage { name: gen.name.clone(), pairs });
    }
    let space = FiniteCoarseSpace::new(coords.keys().cloned().collect(), entourages)?;
    // height cutoffs; the member covering every level is omitted so that a
    // defect at the top level stays visible
    let mut members = vec![(-1i64, BTreeSet::new())];
    for n in 0..levels.saturating_sub(1) {
        let cut: BTreeSet<PointId> =
            coords.iter().filter(|(_, &(t, _))| t <= n).map(|(&id, _)| id).collect();
        members.push((n as i64, cut));
    }
    let big_family = BigFamily::new(members)?;
    Ok(LeveledModel { kind: ModelKind::Cone, space, big_family, coords, id_of, levels })
}

/// Discretized squeezing space: `n_copies` disjoint copies of the base; the
/// rank-`s` entourage on copy `n` is the rank-`s` base entourage intersected
/// with the schedule entourage at `n`; there are no cross-copy pairs. The
/// big family consists of the unions of the first `n + 1` copies, preceded
/// by the empty member at index `-1`.
pub fn squeeze_model(ms: &MultiscaleSpace, n_copies: u32) -> Result<LeveledModel, MultiscaleError> {
    if (ms.schedule.len() as u32) < n_copies {
        return Err(MultiscaleError::ScheduleLength {
            got: ms.schedule.len(),
            want: n_copies as usize,
        });
    }
    let (coords, id_of) = leveled_points(&ms.base, n_copies);
    let mut entourages = Vec::new();
    for gen in ms.base.entourages() {
        let mut pairs = Entourage::new();
        for (&a, &(ta, ya)) in &coords {
            for (&b, &(tb, yb)) in &coords {
                if ta == tb && gen.pairs.contains(ya, yb) && ms.schedule.at(ta).contains(ya, yb) {
                    pairs.insert(a, b);
                }
            }
        }
        entourages.push(NamedEntourage { name: gen.name.clone(), pairs });
    }
    let space = FiniteCoarseSpace::new(coords.keys().cloned().collect(), entourages)?;
    let mut members = vec![(-1i64, BTreeSet::new())];
    for n in 0..n_copies {
        let cut: BTreeSet<PointId> =
            coords.iter().filter(|(_, &(t, _))| t <= n).map(|(&id, _)| id).collect();
        members.push((n as i64, cut));
    }
    let big_family = BigFamily::new(members)?;
    Ok(LeveledModel { kind: ModelKind::Squeeze, space, big_family, coords, id_of, levels: n_copies })
}

/// A covering between cone models with its level bookkeeping.
#[derive(Debug, Clone)]
pub struct ConeCovering {
    pub covering: BranchedCovering,
    pub source_model: LeveledModel,
    pub target_model: LeveledModel,
}

/// The branched coarse covering between discretized cones induced by a base
/// covering. The target schedule is given; the source schedule is pulled
/// back through the connection (`f^{-1}(δ(t)) ∩ P`), and the connection is
/// `(all level pairs) × P`.
pub fn cone_covering(
    cov: &BranchedCovering,
    schedule: &Schedule,
) -> Result<ConeCovering, MultiscaleError> {
    let target_model =
        cone_model(&MultiscaleSpace { base: cov.target().clone(), schedule: schedule.clone() })?;
    let source_levels = (0..schedule.len() as u32)
        .map(|t| schedule.at(t).preimage(cov.map()).intersect(cov.connection()))
        .collect();
    let source_sched = Schedule::new(source_levels)?;
    let source_model =
        cone_model(&MultiscaleSpace { base: cov.source().clone(), schedule: source_sched })?;

    let f: BTreeMap<PointId, PointId> = source_model
        .coords
        .iter()
        .map(|(&id, &(t, x))| (id, target_model.id_of[&(t, cov.apply(x))]))
        .collect();

    let mut connection = Entourage::new();
    for (&a, &(_, xa)) in &source_model.coords {
        for (&b, &(_, xb)) in &source_model.coords {
            if cov.connection().contains(xa, xb) {
                connection.insert(a, b);
            }
        }
    }

    let deck = cov.deck().map(|deck| GroupAction {
        table: CayleyTable { ..deck.table.clone() },
        action: (0..deck.table.order)
            .map(|g| {
                let perm = source_model
                    .coords
                    .iter()
                    .map(|(&id, &(t, x))| (id, source_model.id_of[&(t, deck.apply(g, x))]))
                    .collect();
                (g, perm)
            })
            .collect(),
    });

    let covering = BranchedCovering::new(
        source_model.space.clone(),
        target_model.space.clone(),
        f,
        connection,
        target_model.big_family.clone(),
        deck,
    )?;
    Ok(ConeCovering { covering, source_model, target_model })
}
