//! Scenario generators: the covering tower of cycles with its deck action,
//! the windowed annulus model with an interior mask, and the cone over a
//! tower sheet. Generated coverings are verified before they are emitted.

use crate::covering::{BranchedCovering, CayleyTable, CoveringError, GroupAction};
use crate::multiscale::{cone_covering, ConeCovering, MultiscaleError, Schedule};
use crate::operators::{
    CMat, Cocycle, CocycleBlocks, ControlledObject, ControlledOperator, OperatorError,
};
use crate::space::{BigFamily, CoreError, Entourage, FiniteCoarseSpace, NamedEntourage, PointId};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Covering(#[from] CoveringError),
    #[error(transparent)]
    Multiscale(#[from] MultiscaleError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("generated covering failed self-verification: {0}")]
    SelfCheck(String),
}

/// The tower of coverings `Z/(m n_k) -> Z/n_k` over a disjoint union of
/// growing cycles, with deck group `Z/m` and the partial unions of sheets as
/// branch family.
#[derive(Debug, Clone)]
pub struct Tower {
    pub covering: BranchedCovering,
    pub deck_order: u32,
    pub sizes: Vec<u32>,
    /// per sheet: (target offset, source offset, size)
    pub sheets: Vec<(u32, u32, u32)>,
}

pub const TOWER_RADII: [u32; 3] = [1, 2, 3];

impl Tower {
    pub fn target_component(&self, k: usize) -> BTreeSet<PointId> {
        let (yoff, _, n) = self.sheets[k];
        (yoff..yoff + n).collect()
    }

    pub fn source_component(&self, k: usize) -> BTreeSet<PointId> {
        let (_, xoff, n) = self.sheets[k];
        (xoff..xoff + self.deck_order * n).collect()
    }
}

/// Build and self-verify the tower scenario.
pub fn tower(m: u32, sizes: &[u32]) -> Result<Tower, ScenarioError> {
    if m < 1 {
        return Err(ScenarioError::InvalidParams("deck order must be at least 1".into()));
    }
    if sizes.is_empty() || sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ScenarioError::InvalidParams(
            "cycle sizes must be nonempty and strictly increasing".into(),
        ));
    }
    if sizes.iter().any(|&n| n % 2 == 0) {
        return Err(ScenarioError::InvalidParams("cycle sizes must be odd".into()));
    }

    let mut sheets = Vec::new();
    let (mut yoff, mut xoff) = (0u32, 0u32);
    for &n in sizes {
        sheets.push((yoff, xoff, n));
        yoff += n;
        xoff += m * n;
    }
    let (y_total, x_total) = (yoff, xoff);

    let mut target_ents: Vec<NamedEntourage> = TOWER_RADII
        .iter()
        .map(|&r| NamedEntourage { name: format!("V{r}"), pairs: Entourage::new() })
        .collect();
    let mut vfull = Entourage::new();
    let mut source_ents: Vec<NamedEntourage> = TOWER_RADII
        .iter()
        .map(|&r| NamedEntourage { name: format!("U{r}"), pairs: Entourage::new() })
        .collect();
    let mut connection = Entourage::new();
    let mut f = BTreeMap::new();
    let mut action: BTreeMap<usize, BTreeMap<PointId, PointId>> =
        (0..m as usize).map(|g| (g, BTreeMap::new())).collect();

    for &(yo, xo, n) in &sheets {
        for (i, &r) in TOWER_RADII.iter().enumerate() {
            for &(a, b) in FiniteCoarseSpace::cycle_entourage(yo, n, r).iter() {
                target_ents[i].pairs.insert(a, b);
            }
            for &(a, b) in FiniteCoarseSpace::cycle_entourage(xo, m * n, r).iter() {
                source_ents[i].pairs.insert(a, b);
            }
        }
        let comp: BTreeSet<PointId> = (yo..yo + n).collect();
        for &(a, b) in Entourage::full_on(&comp).iter() {
            vfull.insert(a, b);
        }
        for &(a, b) in FiniteCoarseSpace::cycle_entourage(xo, m * n, (n - 1) / 2).iter() {
            connection.insert(a, b);
        }
        for s in 0..m * n {
            f.insert(xo + s, yo + (s % n));
            for g in 0..m as usize {
                action
                    .get_mut(&g)
                    .unwrap()
                    .insert(xo + s, xo + ((s + g as u32 * n) % (m * n)));
            }
        }
    }
    target_ents.push(NamedEntourage { name: "Vfull".into(), pairs: vfull });

    let target = FiniteCoarseSpace::new((0..y_total).collect(), target_ents)?;
    let source = FiniteCoarseSpace::new((0..x_total).collect(), source_ents)?;

    // partial unions of sheets; the member swallowing every sheet is omitted
    // so that conditions on the largest sheet stay visible
    let mut members: Vec<(i64, BTreeSet<PointId>)> = vec![(-1, BTreeSet::new())];
    let mut acc = BTreeSet::new();
    for (k, &(yo, _, n)) in sheets.iter().enumerate().take(sheets.len() - 1) {
        acc.extend(yo..yo + n);
        members.push((k as i64, acc.clone()));
    }
    let big_family = BigFamily::new(members)?;
    let deck = GroupAction { table: CayleyTable::cyclic(m as usize), action };

    let covering =
        BranchedCovering::new(source, target, f, connection, big_family, Some(deck))?;

    let report = covering.verify(3);
    if !report.all_pass() {
        return Err(ScenarioError::SelfCheck(format!("{:?}", report.failures())));
    }
    let deck_report = covering.verify_deck(3)?;
    if !deck_report.all_pass() {
        return Err(ScenarioError::SelfCheck(format!("{:?}", deck_report.failures())));
    }

    Ok(Tower { covering, deck_order: m, sizes: sizes.to_vec(), sheets })
}

/// The windowed annulus model: the universal covering of a circle, truncated
/// to an integer window. Verification only makes sense on the interior mask.
#[derive(Debug, Clone)]
pub struct Annulus {
    pub covering: BranchedCovering,
    /// points of the window whose `r`-ball avoids the window boundary
    pub mask: BTreeSet<PointId>,
    pub window: u32,
    pub circumference: u32,
}

pub fn annulus(window: u32, circumference: u32, mask_radius: u32) -> Result<Annulus, ScenarioError> {
    let n = circumference;
    if n < 3 || window < n + 2 * mask_radius {
        return Err(ScenarioError::InvalidParams(
            "window must exceed the circumference plus both margins".into(),
        ));
    }
    let radii = TOWER_RADII;
    let source = FiniteCoarseSpace::new(
        (0..window).collect(),
        radii
            .iter()
            .map(|&r| NamedEntourage {
                name: format!("U{r}"),
                pairs: FiniteCoarseSpace::path_entourage(0, window, r),
            })
            .collect(),
    )?;
    let target = FiniteCoarseSpace::new(
        (0..n).collect(),
        radii
            .iter()
            .map(|&r| NamedEntourage {
                name: format!("V{r}"),
                pairs: FiniteCoarseSpace::cycle_entourage(0, n, r),
            })
            .collect(),
    )?;
    let f = (0..window).map(|x| (x, x % n)).collect();
    // integer pairs closer than half a turn
    let half = (n - 1) / 2;
    let mut connection = Entourage::new();
    for a in 0..window {
        for b in 0..window {
            if a.abs_diff(b) <= half {
                connection.insert(a, b);
            }
        }
    }
    let covering = BranchedCovering::new(
        source,
        target,
        f,
        connection,
        BigFamily::empty(),
        None,
    )?;
    let mask: BTreeSet<PointId> = (mask_radius..window - mask_radius).collect();
    let report = covering.verify_masked(&mask, 3);
    if !report.all_pass() {
        return Err(ScenarioError::SelfCheck(format!("{:?}", report.failures())));
    }
    Ok(Annulus { covering, mask, window, circumference })
}

/// The cone over one tower sheet with a shrinking schedule. The connection
/// is deliberately truncated to unit steps so that the wide bottom levels
/// form a genuine branch locus realized by the height cutoffs.
pub fn cone_tower(m: u32, n: u32, levels: u32) -> Result<ConeCovering, ScenarioError> {
    if m < 1 || n < 5 || n % 2 == 0 || levels < 3 {
        return Err(ScenarioError::InvalidParams(
            "need m >= 1, odd n >= 5 and at least 3 levels".into(),
        ));
    }
    let radii = [1u32, 2];
    let source = FiniteCoarseSpace::new(
        (0..m * n).collect(),
        radii
            .iter()
            .map(|&r| NamedEntourage {
                name: format!("U{r}"),
                pairs: FiniteCoarseSpace::cycle_entourage(0, m * n, r),
            })
            .collect(),
    )?;
    let target = FiniteCoarseSpace::new(
        (0..n).collect(),
        radii
            .iter()
            .map(|&r| NamedEntourage {
                name: format!("V{r}"),
                pairs: FiniteCoarseSpace::cycle_entourage(0, n, r),
            })
            .collect(),
    )?;
    let f = (0..m * n).map(|x| (x, x % n)).collect();
    let p = FiniteCoarseSpace::cycle_entourage(0, m * n, 1);
    let deck = GroupAction {
        table: CayleyTable::cyclic(m as usize),
        action: (0..m as usize)
            .map(|g| (g, (0..m * n).map(|x| (x, (x + g as u32 * n) % (m * n))).collect()))
            .collect(),
    };
    let base =
        BranchedCovering::new(source, target, f, p, BigFamily::empty(), Some(deck))?;

    // geometric schedule: wide at the bottom, unit steps above
    let schedule = Schedule::new(
        (0..levels)
            .map(|t| FiniteCoarseSpace::cycle_entourage(0, n, if t == 0 { 2 } else { 1 }))
            .collect(),
    )?;
    let cone = cone_covering(&base, &schedule)?;
    let report = cone.covering.verify(3);
    if !report.all_pass() {
        return Err(ScenarioError::SelfCheck(format!("{:?}", report.failures())));
    }
    Ok(cone)
}

/// Rank-one averaging projection per tower sheet: all entries `1/n_k` on the
/// component of size `n_k`.
pub fn averaging_projection(tower: &Tower) -> ControlledOperator {
    let obj = ControlledObject::constant(tower.covering.target(), 1);
    let mut blocks = BTreeMap::new();
    for &(yo, _, n) in &tower.sheets {
        let v = Complex64::new(1.0 / n as f64, 0.0);
        for r in yo..yo + n {
            for c in yo..yo + n {
                blocks.insert((r, c), CMat::from_element(1, 1, v));
            }
        }
    }
    ControlledOperator::new(obj.clone(), obj, blocks).expect("valid by construction")
}

/// Cyclic shift by one on every target sheet.
pub fn shift_operator(tower: &Tower) -> ControlledOperator {
    let obj = ControlledObject::constant(tower.covering.target(), 1);
    let one = Complex64::new(1.0, 0.0);
    let mut blocks = BTreeMap::new();
    for &(yo, _, n) in &tower.sheets {
        for s in 0..n {
            blocks.insert((yo + (s + 1) % n, yo + s), CMat::from_element(1, 1, one));
        }
    }
    ControlledOperator::new(obj.clone(), obj, blocks).expect("valid by construction")
}

/// Random operator on the tower target with propagation inside the named
/// scale. With `positive` set, entries are positive reals (useful for the
/// norm-contraction observations); otherwise they are complex.
pub fn random_target_operator(
    tower: &Tower,
    scale: &Entourage,
    dim: usize,
    positive: bool,
    rng: &mut ChaCha8Rng,
) -> ControlledOperator {
    let obj = ControlledObject::constant(tower.covering.target(), dim);
    let mut blocks = BTreeMap::new();
    for &(r, c) in scale.iter() {
        if rng.gen_bool(0.85) {
            let m = CMat::from_fn(dim, dim, |_, _| {
                if positive {
                    Complex64::new(rng.gen_range(0.05..1.0), 0.0)
                } else {
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                }
            });
            blocks.insert((r, c), m);
        }
    }
    ControlledOperator::new(obj.clone(), obj, blocks).expect("valid by construction")
}

/// Random deck-equivariant operator on the tower source with propagation in
/// `P ∩ f^{-1}(V_{Z^c})` for the named target scale: blocks are drawn on the
/// pairs whose column lies in a fundamental domain and copied along the
/// action.
pub fn random_equivariant_source_operator(
    tower: &Tower,
    scale: &Entourage,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ControlledOperator, ScenarioError> {
    let cov = &tower.covering;
    let deck = cov.deck().expect("towers carry a deck action");
    let k = cov
        .minimal_transport_index(scale)
        .ok_or_else(|| ScenarioError::InvalidParams("scale admits no transport index".into()))?;
    let zc = cov.big_family().complement(&cov.target().point_set(), k);
    let support = scale.restrict_right(&zc).preimage(cov.map()).intersect(cov.connection());

    let region = cov.source().point_set();
    let f_dom = crate::transfer::lowest_id_fundamental_domain(deck, &region);
    let obj = ControlledObject::constant(cov.source(), dim).with_cocycle(Cocycle {
        action: deck.clone(),
        blocks: CocycleBlocks::Permutation,
    })?;
    let mut blocks = BTreeMap::new();
    for &(r, c) in support.iter() {
        if !f_dom.contains(&c) {
            continue;
        }
        if rng.gen_bool(0.85) {
            let m = CMat::from_fn(dim, dim, |_, _| {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            });
            for g in 0..deck.table.order {
                blocks.insert((deck.apply(g, r), deck.apply(g, c)), m.clone());
            }
        }
    }
    Ok(ControlledOperator::new(obj.clone(), obj, blocks)?)
}

/// Attach the tower's deck structure to an operator on the source space, so
/// that equivariant checks and traces can run on operators loaded from disk.
pub fn equip_with_deck(
    op: &ControlledOperator,
    cov: &BranchedCovering,
) -> Result<ControlledOperator, ScenarioError> {
    let deck = cov.deck().ok_or(CoveringError::NoDeck)?;
    let cocycle = Cocycle { action: deck.clone(), blocks: CocycleBlocks::Permutation };
    let domain = op.domain.clone().with_cocycle(cocycle.clone())?;
    let codomain = op.codomain.clone().with_cocycle(cocycle)?;
    Ok(ControlledOperator::new(domain, codomain, op.blocks().clone())?)
}
