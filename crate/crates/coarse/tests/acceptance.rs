//! Acceptance suite: every headline identity is exercised end to end on the
//! covering tower and the multiscale models, at pinned tolerances, with an
//! independent oracle wherever one exists. One test per criterion; each
//! prints a pass line with its measured data and elapsed time.

use coarse::covering::BranchedCovering;
use coarse::dimension::{dimension_at_scale, hybrid_cover, lift_cover, SearchStrategy};
use coarse::multiscale::{cone_model, rips_lift_check, squeeze_model, MultiscaleSpace, Schedule, DEFAULT_SIMPLEX_CAP};
use coarse::operators::{equivariance_check, ghost_measure, op_norm, ControlledObject, ControlledOperator};
use coarse::scenario::{
    averaging_projection, random_equivariant_source_operator, random_target_operator,
    shift_operator, tower, Tower,
};
use coarse::space::{CoverFamily, Entourage, FiniteCoarseSpace, PointId};
use coarse::transfer::{
    find_source_certificate, ghost_quotient_bound, inverse_transfer, lowest_id_fundamental_domain,
    norm_bound_check, roundtrip_check, trace_equivariant, trace_plain, transfer_operator,
    verify_trace_square,
};
use num_complex::Complex64;
use rand::{seq::IteratorRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::time::{Duration, Instant};

const TOWER_M: u32 = 3;
const TOWER_SIZES: [u32; 4] = [5, 7, 9, 11];

fn standard_tower() -> Tower {
    tower(TOWER_M, &TOWER_SIZES).expect("tower generates")
}

fn finish(criterion: &str, start: Instant, limit: Duration, details: &str) {
    let elapsed = start.elapsed();
    println!(
        "criterion {criterion}: PASS — {details} [{:.2?} < {:.0?}]",
        elapsed, limit
    );
    assert!(elapsed < limit, "criterion {criterion} exceeded its time budget: {elapsed:?}");
}

/// Brute-force convention for the tower: the minimal index at cyclic scale
/// `r` is the largest sheet index whose size is at most `2r`, or -1.
fn tower_index_oracle(sizes: &[u32], r: u32) -> i64 {
    sizes
        .iter()
        .enumerate()
        .filter(|&(_, &n)| n <= 2 * r)
        .map(|(k, _)| k as i64)
        .max()
        .unwrap_or(-1)
}

#[test]
fn criterion_01_covering_axioms() {
    let start = Instant::now();
    let t = standard_tower();
    let report = t.covering.verify(3);
    assert!(report.all_pass(), "{:#?}", report.failures());

    for r in 1..=3u32 {
        let oracle = tower_index_oracle(&TOWER_SIZES, r);
        let reported = [
            report.minimal_index("unique-lifts", &format!("V{r}")),
            report.minimal_index("connection-coarse", &format!("V{r}")),
            report.minimal_index("generator-in-connection", &format!("U{r}")),
        ]
        .into_iter()
        .map(|i| i.expect("passing checks carry an index"))
        .max()
        .unwrap();
        assert_eq!(reported, oracle, "scale r = {r}");
    }
    finish("1 (covering axioms)", start, Duration::from_secs(5), "tower verifies; minimal indices match max{{k : n_k <= 2r}}");
}

#[test]
fn criterion_02_monodromy() {
    let start = Instant::now();
    let t = standard_tower();
    let v1 = t.covering.target().entourage("V1").unwrap().clone();
    let mut checked = 0usize;
    for &(yoff, xoff, n) in &t.sheets {
        for s in 0..TOWER_M * n {
            let x = xoff + s;
            let y = t.covering.apply(x);
            let mut path: Vec<PointId> = (0..n).map(|i| yoff + ((y - yoff) + i) % n).collect();
            path.push(y);
            let lifted = t.covering.parallel_transport_path(&v1, &path, x).unwrap();
            let expected = xoff + ((s + n) % (TOWER_M * n));
            assert_eq!(lifted, expected, "sheet of size {n}, basepoint {x}");
            checked += 1;
        }
    }
    finish(
        "2 (path lifting & monodromy)",
        start,
        Duration::from_secs(1),
        &format!("full-cycle transport is the deck translation at all {checked} basepoints"),
    );
}

#[test]
fn criterion_03_transfer_inverse_roundtrip() {
    let start = Instant::now();
    let t = standard_tower();
    let v2 = t.covering.target().entourage("V2").unwrap().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    for i in 0..100 {
        let a = random_target_operator(&t, &v2, 1, false, &mut rng);
        let report = roundtrip_check(&t.covering, &a, &v2, 1e-12).unwrap();
        assert!(report.pass, "roundtrip {i}: {report:?}");
    }
    for i in 0..100 {
        let b = random_equivariant_source_operator(&t, &v2, 1, &mut rng).unwrap();
        let down = inverse_transfer(&t.covering, &b, &v2).unwrap();
        let back = transfer_operator(&t.covering, &down.operator, &v2).unwrap();
        let k = back.z_index.max(down.z_index);
        let xc = t.covering.source_complement(k);
        let dev = back.operator.restrict(&xc).max_block_deviation(&b.restrict(&xc));
        assert!(dev <= 1e-12, "transfer(inverse) {i}: deviation {dev}");
    }
    finish(
        "3 (transfer/inverse round trip)",
        start,
        Duration::from_secs(30),
        "200 seeded operators reproduce exactly on the admissible region",
    );
}

#[test]
fn criterion_04_norm_bounds() {
    let start = Instant::now();
    let t = standard_tower();
    let v1 = t.covering.target().entourage("V1").unwrap().clone();
    let (_, source_cert) = find_source_certificate(&t.covering, &v1, 2, 3).unwrap();
    let target_cert =
        dimension_at_scale(t.covering.target(), &v1.compose(&v1), 2, SearchStrategy::Greedy, 3)
            .unwrap()
            .expect("target certificate");
    assert_eq!(source_cert.multiplicity(), 2);
    assert_eq!(target_cert.multiplicity(), 2);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut max_complex_ratio: f64 = 0.0;
    let mut max_positive_ratio: f64 = 0.0;
    for i in 0..100 {
        let a = random_target_operator(&t, &v1, 1, false, &mut rng);
        let report =
            norm_bound_check(&t.covering, &a, &v1, &source_cert, Some(&target_cert), 1e-8)
                .unwrap();
        assert!(report.forward_ok, "forward bound {i}: {report:?}");
        assert_eq!(report.reverse_ok, Some(true), "reverse bound {i}: {report:?}");
        max_complex_ratio = max_complex_ratio.max(report.ratio);

        // positive-entry variant: the lifted Perron data pins the ratio at 1
        let positive = ControlledOperator::new(
            a.domain.clone(),
            a.codomain.clone(),
            a.blocks()
                .iter()
                .map(|(&k, m)| (k, m.map(|z| Complex64::new(z.norm(), 0.0))))
                .collect(),
        )
        .unwrap();
        let report =
            norm_bound_check(&t.covering, &positive, &v1, &source_cert, Some(&target_cert), 1e-8)
                .unwrap();
        assert!(report.forward_ok && report.reverse_ok == Some(true));
        assert!(
            report.ratio <= 1.0 + 1e-8,
            "positive ratio {i}: {}",
            report.ratio
        );
        max_positive_ratio = max_positive_ratio.max(report.ratio);
    }
    finish(
        "4 (norm bounds)",
        start,
        Duration::from_secs(60),
        &format!(
            "sqrt(2) bounds hold both ways on 100 seeded operators; observed ratios: \
             positive family {max_positive_ratio:.9} <= 1, complex family {max_complex_ratio:.9} (reported)"
        ),
    );
}

#[test]
fn criterion_05_trace_identity() {
    let start = Instant::now();
    let t = standard_tower();
    let v2 = t.covering.target().entourage("V2").unwrap().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..100 {
        let a = random_target_operator(&t, &v2, 1, false, &mut rng);
        let report = verify_trace_square(&t.covering, &a, &v2, 1e-9).unwrap();
        assert!(report.pass, "random operator {i}: {report:?}");
    }
    // averaging projections: both sides exactly 1 per sheet
    let avg = averaging_projection(&t);
    let vfull = t.covering.target().entourage("Vfull").unwrap().clone();
    let report = verify_trace_square(&t.covering, &avg, &vfull, 1e-9).unwrap();
    assert!(report.pass, "{report:?}");
    assert_eq!(report.pairs.len(), TOWER_SIZES.len());
    for p in &report.pairs {
        assert!((p.plain.0 - 1.0).abs() <= 1e-12 && p.plain.1.abs() <= 1e-12);
        assert!((p.equivariant.0 - 1.0).abs() <= 1e-12 && p.equivariant.1.abs() <= 1e-12);
    }
    finish(
        "5 (L2-index trace identity)",
        start,
        Duration::from_secs(30),
        "tau^G(transfer) = tau on 100 seeded operators; averaging projections trace to 1 on every sheet",
    );
}

#[test]
fn criterion_06_fundamental_domain_independence() {
    let start = Instant::now();
    let t = standard_tower();
    let v1 = t.covering.target().entourage("V1").unwrap().clone();
    let deck = t.covering.deck().unwrap().clone();
    let region: BTreeSet<PointId> = t.covering.source().point_set();
    let mut rng = ChaCha8Rng::seed_from_u64(6);

    for i in 0..5 {
        let a = random_target_operator(&t, &v1, 1, false, &mut rng);
        let b = transfer_operator(&t.covering, &a, &v1).unwrap().operator;
        let base = trace_equivariant(&b, &region, &lowest_id_fundamental_domain(&deck, &region))
            .unwrap();
        for j in 0..50 {
            // random representative per orbit
            let mut f_dom = BTreeSet::new();
            let mut seen = BTreeSet::new();
            for &x in &region {
                if seen.contains(&x) {
                    continue;
                }
                let orbit = deck.orbit(x);
                seen.extend(orbit.iter().cloned());
                f_dom.insert(orbit.iter().cloned().choose(&mut rng).unwrap());
            }
            let value = trace_equivariant(&b, &region, &f_dom).unwrap();
            assert!(
                (value - base).norm() <= 1e-12,
                "instance {i}, domain {j}: {value} vs {base}"
            );
        }
    }
    finish(
        "6 (fundamental-domain independence)",
        start,
        Duration::from_secs(30),
        "250 randomized fundamental domains give identical equivariant traces",
    );
}

#[test]
fn criterion_07_ghost_certificate() {
    let start = Instant::now();
    let t = standard_tower();
    let target = t.covering.target().clone();
    let avg = averaging_projection(&t);
    let diag = target.diagonal();

    // exact ghost-measure values
    let measured = ghost_measure(&avg, &diag, t.covering.big_family());
    for &(k, v) in &measured {
        let expect = TOWER_SIZES
            .iter()
            .enumerate()
            .filter(|&(j, _)| (j as i64) > k)
            .map(|(_, &n)| 1.0 / n as f64)
            .fold(0.0f64, f64::max);
        assert_eq!(v, expect, "ghost measure at index {k}");
    }

    // quotient-norm chain at every truncation scale
    let vfull = target.entourage("Vfull").unwrap().clone();
    for r in 1..=3u32 {
        let trunc = target.entourage(&format!("V{r}")).unwrap().clone();
        let cert =
            dimension_at_scale(&target, &trunc.compose(&trunc), 3, SearchStrategy::Greedy, 3)
                .unwrap()
                .expect("truncation certificate");
        let report = ghost_quotient_bound(
            &avg,
            &diag,
            t.covering.big_family(),
            &trunc,
            &cert,
            Some((&t.covering, &vfull)),
            1e-8,
        )
        .unwrap();
        assert!(report.pass, "truncation scale {r}: {report:#?}");
        assert!(!report.flagged_non_ghost);
        // transferred restricted norms decay with the index
        let norms: Vec<f64> =
            report.entries.iter().filter_map(|e| e.transferred_norm).collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{norms:?}");
    }
    finish(
        "7 (ghost certificate)",
        start,
        Duration::from_secs(10),
        "ghost measure is exactly max 1/n_k beyond each index; the (1 + sqrt(n)) eps chain holds at scales 1..3",
    );
}

#[test]
fn criterion_08_dimension_certificates() {
    let start = Instant::now();
    // greedy mult-2 certificates for paths and cycles at scales 1..3
    for r in 1..=3u32 {
        let path = FiniteCoarseSpace::path(30, &[1, 2, 3]);
        let u = FiniteCoarseSpace::path_entourage(0, 30, r);
        let cert = dimension_at_scale(&path, &u, 2, SearchStrategy::Greedy, 3)
            .unwrap()
            .unwrap_or_else(|| panic!("path certificate at scale {r}"));
        assert_eq!(cert.multiplicity(), 2);

        for n in [12u32, 15, 21] {
            let cycle = FiniteCoarseSpace::cycle(n, &[1, 2, 3]);
            let u = FiniteCoarseSpace::cycle_entourage(0, n, r);
            let cert = dimension_at_scale(&cycle, &u, 2, SearchStrategy::Greedy, 3)
                .unwrap()
                .unwrap_or_else(|| panic!("cycle Z/{n} certificate at scale {r}"));
            assert!(cert.multiplicity() <= 2, "Z/{n} at scale {r}");
        }
    }
    // exact search: no mult-1 certificate exists at scale >= 1
    let path12 = FiniteCoarseSpace::path(12, &[1]);
    let u1 = FiniteCoarseSpace::path_entourage(0, 12, 1);
    assert!(dimension_at_scale(&path12, &u1, 1, SearchStrategy::Exact, 3).unwrap().is_none());
    let two = dimension_at_scale(&path12, &u1, 2, SearchStrategy::Exact, 3).unwrap().unwrap();
    assert_eq!(two.multiplicity(), 2);

    let cycle12 = FiniteCoarseSpace::cycle(12, &[1]);
    let u2 = FiniteCoarseSpace::cycle_entourage(0, 12, 2);
    assert!(dimension_at_scale(&cycle12, &u2, 1, SearchStrategy::Exact, 3).unwrap().is_none());
    assert_eq!(
        dimension_at_scale(&cycle12, &u2, 2, SearchStrategy::Exact, 3)
            .unwrap()
            .unwrap()
            .multiplicity(),
        2
    );
    finish(
        "8 (dimension certificates)",
        start,
        Duration::from_secs(60),
        "greedy yields multiplicity 2 at scales 1..3; exact search refutes multiplicity 1",
    );
}

#[test]
fn criterion_09_cover_lifting() {
    let start = Instant::now();
    let mut instances = 0usize;
    for (m, sizes) in [(3u32, vec![5u32, 7, 9, 11]), (2u32, vec![5u32, 7, 9, 11, 13])] {
        let t = tower(m, &sizes).expect("tower generates");
        assert!(t.covering.source().points().len() <= 300);
        for r in 1..=2u32 {
            let v = t.covering.target().entourage(&format!("V{r}")).unwrap().clone();
            let w = dimension_at_scale(
                t.covering.target(),
                &v,
                2,
                SearchStrategy::Greedy,
                3,
            )
            .unwrap()
            .expect("target cover")
            .cover;
            let lifted = lift_cover(&t.covering, &w, &v).unwrap();
            assert!(lifted.report.all_pass(), "{:#?}", lifted.report.failures());
            assert!(lifted.cover.multiplicity() <= w.multiplicity());
            instances += 1;
        }
    }
    finish(
        "9 (cover lifting)",
        start,
        Duration::from_secs(30),
        &format!("{instances} lifted covers keep their multiplicity and the Lebesgue property"),
    );
}

#[test]
fn criterion_10_hybrid_bound() {
    let start = Instant::now();
    let base = FiniteCoarseSpace::path(12, &[1, 2, 3]);
    let radii = [3u32, 2, 1, 1];
    let schedule = Schedule::new(
        radii.iter().map(|&r| FiniteCoarseSpace::path_entourage(0, 12, r)).collect(),
    )
    .unwrap();
    let w_base = dimension_at_scale(
        &base,
        &FiniteCoarseSpace::path_entourage(0, 12, 3),
        2,
        SearchStrategy::Greedy,
        3,
    )
    .unwrap()
    .unwrap()
    .cover;
    let per_level: Vec<CoverFamily> = radii
        .iter()
        .map(|&r| {
            dimension_at_scale(
                &base,
                &FiniteCoarseSpace::path_entourage(0, 12, r),
                2,
                SearchStrategy::Greedy,
                3,
            )
            .unwrap()
            .unwrap()
            .cover
        })
        .collect();

    let ms = MultiscaleSpace { base: base.clone(), schedule };
    let mut reports = Vec::new();
    let squeeze = squeeze_model(&ms, 4).unwrap();
    reports.push(("squeeze", hybrid_cover(&squeeze, "U1", &w_base, &per_level, 0).unwrap()));
    let cone = cone_model(&ms).unwrap();
    reports.push(("cone", hybrid_cover(&cone, "U1", &w_base, &per_level, 0).unwrap()));

    let mut measured = Vec::new();
    for (kind, report) in reports {
        assert!(report.lebesgue_ok, "{kind} hybrid cover is not Lebesgue");
        assert!(
            report.measured_multiplicity <= report.crude_bound,
            "{kind}: {} > {}",
            report.measured_multiplicity,
            report.crude_bound
        );
        measured.push(format!("{kind} {} <= {}", report.measured_multiplicity, report.crude_bound));
    }
    finish(
        "10 (hybrid bound)",
        start,
        Duration::from_secs(30),
        &format!("measured multiplicities {}", measured.join(", ")),
    );
}

#[test]
fn criterion_11_rips_lifting() {
    let start = Instant::now();
    let t = standard_tower();
    let verify_report = t.covering.verify(3);
    for r in 1..=2u32 {
        let u = t.covering.source().entourage(&format!("U{r}")).unwrap().clone();

        // edges lift uniquely exactly where the connection swallows the
        // generator, so the 1-skeleton index matches the verifier's
        let edges = rips_lift_check(&t.covering, &u, 1, DEFAULT_SIMPLEX_CAP).unwrap();
        assert!(edges.all_pass(), "{:#?}", edges.failures());
        let verify_index =
            verify_report.minimal_index("generator-in-connection", &format!("U{r}")).unwrap();
        assert_eq!(edges.overall_minimal_index().unwrap(), verify_index, "edges at scale {r}");
        assert_eq!(verify_index, tower_index_oracle(&TOWER_SIZES, r));

        // with triangles, a simplex can wrap a short cycle even though its
        // edges lift: the oracle threshold becomes n_k <= 3r
        let report = rips_lift_check(&t.covering, &u, 2, DEFAULT_SIMPLEX_CAP).unwrap();
        assert!(report.all_pass(), "{:#?}", report.failures());
        let lift_index = report.overall_minimal_index().unwrap();
        let triangle_oracle = TOWER_SIZES
            .iter()
            .enumerate()
            .filter(|&(_, &n)| n <= 3 * r)
            .map(|(k, _)| k as i64)
            .max()
            .unwrap_or(-1);
        assert_eq!(lift_index, triangle_oracle, "triangles at scale {r}");
    }
    finish(
        "11 (Rips lifting)",
        start,
        Duration::from_secs(30),
        "unique simplex lifting verified exhaustively at scales 1..2, max dim 2, over the reported indices",
    );
}

#[test]
fn criterion_12_pullback() {
    let start = Instant::now();
    let t = standard_tower();

    // inclusion of one component
    let (yoff, _, n1) = t.sheets[1];
    let sheet_space = FiniteCoarseSpace::new(
        (0..n1).collect(),
        (1..=3u32)
            .map(|r| coarse::space::NamedEntourage {
                name: format!("V{r}"),
                pairs: FiniteCoarseSpace::cycle_entourage(0, n1, r),
            })
            .collect(),
    )
    .unwrap();
    let h = (0..n1).map(|y| (y, yoff + y)).collect();
    let pb = coarse::covering::pullback_covering(&t.covering, &h, &sheet_space).unwrap();
    let report = pb.covering.verify(3);
    assert!(report.all_pass(), "component inclusion: {:#?}", report.failures());

    // mod-n reduction between cycles onto the first sheet
    let (yoff0, _, n0) = t.sheets[0];
    let double = FiniteCoarseSpace::cycle(2 * n0, &[1]);
    let h = (0..2 * n0).map(|y| (y, yoff0 + (y % n0))).collect();
    let pb = coarse::covering::pullback_covering(&t.covering, &h, &double).unwrap();
    let report = pb.covering.verify(3);
    assert!(report.all_pass(), "mod-n reduction: {:#?}", report.failures());
    finish(
        "12 (pullback)",
        start,
        Duration::from_secs(10),
        "pullbacks along a component inclusion and a mod-n reduction re-pass the verifier",
    );
}

/// The emitted tower files round-trip and their suite is green; this guards
/// the interchange formats the secondary stages rely on.
#[test]
fn emitted_scenario_suite_is_green() {
    let dir = std::env::temp_dir().join(format!("coarse_acceptance_{}", std::process::id()));
    coarse::suite::emit_scenario(
        &coarse::suite::ScenarioParams::Tower { m: 3, sizes: vec![5, 7, 9, 11] },
        &dir,
    )
    .unwrap();
    let report = coarse::suite::run_suite(&dir, 3, 1e-9).unwrap();
    assert!(report.pass, "{}", report.render());
    std::fs::remove_dir_all(&dir).ok();
}

/// Sanity anchors used across the suite: the averaging projection is a
/// projection of plain trace one and operator norm one on every sheet.
#[test]
fn averaging_projection_anchors() {
    let t = standard_tower();
    let avg = averaging_projection(&t);
    let sq = avg.compose(&avg).unwrap();
    assert!(sq.max_block_deviation(&avg) <= 1e-12);
    assert!((op_norm(&avg).unwrap() - 1.0).abs() <= 1e-9);
    for k in 0..TOWER_SIZES.len() {
        let tr = trace_plain(&avg, &t.target_component(k)).unwrap();
        assert!((tr - Complex64::new(1.0, 0.0)).norm() <= 1e-12);
    }
    let shift = shift_operator(&t);
    let fwd = transfer_operator(&t.covering, &shift, t.covering.target().entourage("V1").unwrap())
        .unwrap();
    assert_eq!(equivariance_check(&fwd.operator).unwrap(), None);
    let id_y = ControlledOperator::identity(&ControlledObject::constant(t.covering.target(), 1));
    let fwd_id = transfer_operator(&t.covering, &id_y, t.covering.target().entourage("V1").unwrap())
        .unwrap();
    let id_x = ControlledOperator::identity(&fwd_id.operator.domain);
    assert!(fwd_id.operator.max_block_deviation(&id_x) == 0.0);
}
