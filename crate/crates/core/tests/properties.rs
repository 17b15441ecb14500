use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use turbqkd::attack::{match_rate, optimize, AttackParams};
use turbqkd::optics::{aperture_power, centroid, far_field, Propagator};
use turbqkd::receiver::{AngleGrid, Channel, EfficiencyMap, Polarization, ReceiverModel};
use turbqkd::scan::{reference_efficiencies, run_scan, scan_screen, weighted_map, AttackAngle, AttackAngleSet, ScanSpec};
use turbqkd::screens::{
    annulus_weights, build_ensemble, correct_tip_tilt, disk_gram, sample_coeffs, Bin, Pool, ZernikeBasis, DEFAULT_BOUNDARIES,
};
use turbqkd::turbmath::{fried_from_path, inm, noll_to_nm, path_for_r0, NollIndex, TurbulenceParams};
use turbqkd::witness::{
    check_constraints, check_feasibility, distribution_from_channel, partial_transpose, ChannelSpec, JointDistribution,
    Matrix, MeasurementModel, Verdict, DEFAULT_TOLERANCE,
};

fn params(r0: f64) -> TurbulenceParams {
    TurbulenceParams::new(0.2, r0, 532e-9).unwrap()
}

fn table_row(delta: [f64; 4], tau: [f64; 4]) -> AttackAngleSet {
    AttackAngleSet {
        angles: Channel::ALL
            .iter()
            .map(|&k| AttackAngle::from_ratio(k, delta[k.index()], tau[k.index()]))
            .collect(),
    }
}

fn row_inf() -> AttackAngleSet {
    table_row([22.0, 30.0, 5.0, 1.2], [0.1, 0.03, 0.3, 0.001])
}

#[test]
fn noll_index_round_trips() {
    for j in 1..=200u32 {
        let idx = noll_to_nm(j as i64).unwrap();
        assert_eq!(NollIndex::from_nm(idx.n, idx.m).unwrap().j, j);
    }
}

#[test]
fn zernike_modes_are_orthonormal_at_512() {
    let g = disk_gram(512, 44, 16).unwrap();
    let mut worst: f64 = 0.0;
    for (i, row) in g.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            worst = worst.max((v - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    assert!(worst < 1e-3, "worst inner-product error {worst}");
}

#[test]
fn inm_decreases_with_radial_order() {
    for m in 0..6u32 {
        let mut prev = f64::INFINITY;
        let mut n = if m == 0 { 2 } else { m };
        while n <= 12 {
            let v = inm(NollIndex::from_nm(n, m as i32).unwrap()).unwrap();
            assert!(v < prev, "I(n={n}, m={m}) = {v} not below {prev}");
            prev = v;
            n += 2;
        }
    }
}

#[test]
fn ensemble_weights_do_not_depend_on_turbulence() {
    let w = annulus_weights(&DEFAULT_BOUNDARIES).unwrap();
    for r0 in [0.01, 0.02] {
        let pool = Pool::generate(params(r0), 1, 500);
        let p = pool.params;
        let s = 2.0 * p.wavelength / (std::f64::consts::PI * p.d);
        let e = build_ensemble(&pool, |c| {
            Ok(turbqkd::optics::Centroid {
                x: s * c.get(2),
                y: s * c.get(3),
            })
        })
        .unwrap();
        assert_eq!(e.weights.to_vec(), w);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fried_and_path_are_inverse(cn2 in 1e-16f64..1e-12, len in 10f64..20_000.0) {
        let r0 = fried_from_path(cn2, len, 532e-9).unwrap();
        let back = path_for_r0(cn2, r0, 532e-9).unwrap();
        prop_assert!(((back - len) / len).abs() < 1e-12);
    }

    #[test]
    fn tip_tilt_correction_is_idempotent(seed in any::<u64>(), r0 in 0.005f64..0.2) {
        let c = correct_tip_tilt(&sample_coeffs(&params(r0), seed));
        prop_assert_eq!(c.get(2), 0.0);
        prop_assert_eq!(c.get(3), 0.0);
        prop_assert_eq!(correct_tip_tilt(&c), c);
    }

    #[test]
    fn partial_transpose_is_an_involution(vals in proptest::collection::vec(-1f64..1.0, 36)) {
        let m = Matrix { n: 6, data: vals }.symmetrized();
        let pt = partial_transpose(&m, 2, 3);
        prop_assert!(pt.max_asymmetry() < 1e-15);
        prop_assert!((pt.trace() - m.trace()).abs() < 1e-12);
        prop_assert_eq!(partial_transpose(&pt, 2, 3), m);
    }

    #[test]
    fn povm_elements_sum_to_identity(etas in proptest::collection::vec(0f64..=1.0, 4..=12), y in 0usize..2) {
        let modes: Vec<[f64; 4]> = etas.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect();
        let model = MeasurementModel { bob_modes: modes };
        let povm = model.bob_povm(y).unwrap();
        let mut sum = Matrix::zeros(model.bob_dim());
        for e in &povm {
            sum.add_scaled(e, 1.0);
            prop_assert!(turbqkd::witness::min_eigenvalue(e) > -1e-12);
        }
        prop_assert!(sum.sub(&Matrix::identity(model.bob_dim())).norm() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn far_field_conserves_power(seed in any::<u64>()) {
        let c = sample_coeffs(&params(0.02), seed);
        let s = ZernikeBasis::new(128).render(&c);
        let img = Propagator::for_screen(128, 4).intensity(&s, 532e-9);
        let want = aperture_power(&s);
        prop_assert!(((img.power - want) / want).abs() < 1e-6);
    }

    #[test]
    fn far_field_ignores_global_phase(seed in any::<u64>(), phase in -10f64..10.0) {
        let c = sample_coeffs(&params(0.02), seed);
        let s = ZernikeBasis::new(128).render(&c);
        let mut shifted = s.clone();
        shifted.add_constant(phase);
        let prop = Propagator::for_screen(128, 4);
        let a = prop.intensity(&s, 532e-9);
        let b = prop.intensity(&shifted, 532e-9);
        let max = a.data.iter().cloned().fold(0.0, f64::max);
        for (x, y) in a.data.iter().zip(&b.data) {
            prop_assert!((x - y).abs() <= 1e-9 * max);
        }
    }

    #[test]
    fn tip_shifts_centroid_by_fourier_law(seed in any::<u64>(), tip in -20f64..20.0) {
        let p = params(0.01);
        let b = ZernikeBasis::new(512);
        let mut c = sample_coeffs(&p, seed);
        let c0 = centroid(&far_field(&b.render(&c), &p, 4).unwrap()).unwrap();
        c.set(2, c.get(2) + tip);
        let c1 = centroid(&far_field(&b.render(&c), &p, 4).unwrap()).unwrap();
        let want = 2.0 * tip * p.wavelength / (std::f64::consts::PI * p.d);
        prop_assume!(want.abs() > 1e-7);
        prop_assert!(((c1.x - c0.x) - want).abs() <= 0.01 * want.abs(), "{} vs {}", c1.x - c0.x, want);
    }

    #[test]
    fn doubling_padding_barely_moves_centroid(seed in any::<u64>()) {
        let p = params(0.01);
        let s = ZernikeBasis::new(256).render(&sample_coeffs(&p, seed));
        let a = far_field(&s, &p, 4).unwrap();
        let b = far_field(&s, &p, 8).unwrap();
        let (ca, cb) = (centroid(&a).unwrap(), centroid(&b).unwrap());
        prop_assert!((ca.x - cb.x).hypot(ca.y - cb.y) < 0.1 * a.angular_pitch);
    }
}

fn small_model() -> ReceiverModel {
    ReceiverModel {
        screen_resolution: 64,
        ..ReceiverModel::default()
    }
}

fn coarse_spec() -> ScanSpec {
    ScanSpec {
        step: 540e-6,
        ..ScanSpec::default()
    }
}

#[test]
fn aligned_balanced_receiver_has_no_mismatch() {
    let mut model = ReceiverModel::aligned();
    model.screen_resolution = 64;
    let spec = coarse_spec();
    let grid = spec.grid().unwrap();
    let pol = Polarization::Circular;
    let reference = reference_efficiencies(&model, pol).unwrap();
    let flat = turbqkd::screens::PhaseScreen::flat(64, model.beam_diameter);
    let map = scan_screen(&model, &grid, &flat, pol, &reference);
    for i in 0..grid.len() {
        let t = map.get(Channel::H, i);
        for k in Channel::ALL {
            assert!((map.get(k, i) - t).abs() < 1e-6, "{} at {:?}", k.name(), grid.angle(i));
        }
    }
}

#[test]
fn untouched_scan_is_continuous() {
    let model = ReceiverModel::default();
    let spec = ScanSpec::default();
    let grid = spec.grid().unwrap();
    let reference = reference_efficiencies(&model, spec.polarization).unwrap();
    let flat = turbqkd::screens::PhaseScreen::flat(model.screen_resolution, model.beam_diameter);
    let map = scan_screen(&model, &grid, &flat, spec.polarization, &reference);
    assert!(map.max_neighbour_jump() < 0.5, "jump {}", map.max_neighbour_jump());
}

fn random_map(grid: &AngleGrid, rng: &mut ChaCha8Rng) -> EfficiencyMap {
    let mut m = EfficiencyMap::filled(grid.clone(), 0.0);
    for k in 0..4 {
        for v in &mut m.tau[k] {
            *v = rng.gen::<f64>();
        }
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn weighted_map_is_linear_and_bin_permutation_invariant(seed in any::<u64>(), a in 0f64..3.0, b in 0f64..3.0) {
        let grid = AngleGrid { thetas: vec![-1e-3, 0.0, 1e-3], phis: vec![-1e-3, 0.0, 1e-3] };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bins: Vec<Bin> = Bin::ALL.iter().flat_map(|&b| std::iter::repeat(b).take(2)).collect();
        let x: Vec<EfficiencyMap> = bins.iter().map(|_| random_map(&grid, &mut rng)).collect();
        let y: Vec<EfficiencyMap> = bins.iter().map(|_| random_map(&grid, &mut rng)).collect();
        let w = annulus_weights(&DEFAULT_BOUNDARIES).unwrap();
        let combo: Vec<EfficiencyMap> = x.iter().zip(&y).map(|(p, q)| {
            let mut m = p.clone();
            for k in 0..4 {
                for (i, v) in m.tau[k].iter_mut().enumerate() {
                    *v = a * p.tau[k][i] + b * q.tau[k][i];
                }
            }
            m
        }).collect();
        let wx = weighted_map(&x, &bins, &w).unwrap();
        let wy = weighted_map(&y, &bins, &w).unwrap();
        let wc = weighted_map(&combo, &bins, &w).unwrap();
        for k in 0..4 {
            for i in 0..grid.len() {
                prop_assert!((wc.tau[k][i] - (a * wx.tau[k][i] + b * wy.tau[k][i])).abs() < 1e-12);
            }
        }
        let mut swapped = x.clone();
        swapped.swap(0, 1);
        swapped.swap(6, 7);
        prop_assert_eq!(weighted_map(&swapped, &bins, &w).unwrap().tau, wx.tau.clone());
    }
}

#[test]
fn scan_is_independent_of_worker_count() {
    let pool = Pool::generate(params(0.01), 11, 500);
    let p = pool.params;
    let e = build_ensemble(&pool, |c| {
        centroid(&far_field(&ZernikeBasis::new(128).render(c), &p, 4)?)
    })
    .unwrap();
    let model = small_model();
    let spec = coarse_spec();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| run_scan(&model, &spec, &e)).unwrap();
    let b = three.install(|| run_scan(&model, &spec, &e)).unwrap();
    for (x, y) in a.maps.iter().zip(&b.maps) {
        assert_eq!(x.to_csv(), y.to_csv());
    }
}

#[test]
fn optimizer_is_deterministic() {
    let p = AttackParams {
        mu_alice: 4.6,
        ..AttackParams::new(row_inf())
    };
    assert_eq!(optimize(&p, 12.0).unwrap(), optimize(&p, 12.0).unwrap());
}

#[test]
fn high_loss_optimum_uses_only_the_largest_ratio_channel() {
    let p = AttackParams {
        mu_alice: 4.6,
        ..AttackParams::new(row_inf())
    };
    let s = optimize(&p, 30.0).unwrap();
    assert!(s.feasible);
    for k in Channel::ALL {
        if k == Channel::V {
            assert!(s.mu[k.index()] > 0.0);
        } else {
            assert!(s.mu[k.index()] < 1e-9 * s.mu[Channel::V.index()], "{:?}", s.mu);
        }
    }
}

#[test]
fn optimizer_beats_random_audit() {
    let rows = [
        row_inf(),
        table_row([8.0, 2.5, 1.08, 2.3], [0.5, 0.15, 0.85, 0.5]),
        table_row([3.0, 2.0, 1.7, 1.25], [0.45, 0.3, 0.85, 0.02]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0xa0d17);
    for (r, set) in rows.into_iter().enumerate() {
        let p = AttackParams {
            mu_alice: 4.6,
            ..AttackParams::new(set)
        };
        for loss in [4.0, 9.0, 20.0] {
            let best = optimize(&p, loss).unwrap();
            let mut checked = 0;
            for _ in 0..10_000 / 9 + 1 {
                let mut w: [f64; 4] = std::array::from_fn(|_| -rng.gen::<f64>().max(1e-300).ln());
                // Sparse directions are where optima live.
                for x in &mut w {
                    if rng.gen::<f64>() < 0.4 {
                        *x = 0.0;
                    }
                }
                let Some((_, out)) = match_rate(&p, loss, &w) else { continue };
                let Some(q) = out.qber else { continue };
                checked += 1;
                assert!(
                    best.qber <= q + 1e-9,
                    "row {r} loss {loss}: optimizer {} above audit {q} at {w:?}",
                    best.qber
                );
            }
            assert!(checked > 0);
        }
    }
}

fn flip_alice_x_basis(p: &JointDistribution) -> JointDistribution {
    let mut q = p.clone();
    for y in 0..2 {
        for b in 0..4 {
            q.p[1][y][0][b] = p.p[1][y][1][b];
            q.p[1][y][1][b] = p.p[1][y][0][b];
        }
    }
    q
}

fn same_kind(a: &Verdict, b: &Verdict) -> bool {
    std::mem::discriminant(a) == std::mem::discriminant(b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn witness_verdicts_behave(t in 0.05f64..1.0, e in 0f64..0.35) {
        let model = MeasurementModel::single_mode([1.0; 4]);
        let p = distribution_from_channel(&ChannelSpec::Lossy { transmission: t, qber: e }, &model).unwrap();
        let v = check_feasibility(&p, &model, DEFAULT_TOLERANCE).unwrap();
        prop_assert!(!matches!(v.verdict, Verdict::Indeterminate));
        if let Verdict::CompatibleWithIr(rho) = &v.verdict {
            let (lmin, lpt, viol) = check_constraints(rho, &p, &model).unwrap();
            prop_assert!(lmin >= -DEFAULT_TOLERANCE && lpt >= -DEFAULT_TOLERANCE && viol <= DEFAULT_TOLERANCE);
        }

        let relabeled = check_feasibility(&flip_alice_x_basis(&p), &model, DEFAULT_TOLERANCE).unwrap();
        prop_assert!(same_kind(&v.verdict, &relabeled.verdict), "{} vs {}", v.label(), relabeled.label());

        if matches!(v.verdict, Verdict::CompatibleWithIr(_)) {
            let ir = distribution_from_channel(&ChannelSpec::InterceptResend { basis: None, mode: 0 }, &model).unwrap();
            let mixed = check_feasibility(&p.mix(&ir, 0.1), &model, DEFAULT_TOLERANCE).unwrap();
            prop_assert!(matches!(mixed.verdict, Verdict::CompatibleWithIr(_)), "{}", mixed.label());
        }
    }
}
