use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;

use stcns_core::harness::{decode_checkpoint, encode_checkpoint, EnsembleReport, PathSummary};
use stcns_core::initial::{broadband_state, filtered_noise, random_velocity};
use stcns_core::model::TamingSpec;
use stcns_core::noise::{hilbert_schmidt_identity, lipschitz_identity, sample_increment};
use stcns_core::output::format_real;
use stcns_core::spectral::{bessel_norm, dealiased_product, divergence, leray_project};
use stcns_core::{
    parse_config, BrownianPath, Checkpoint, DealiasRule, GridSpec, NoiseKind, NoiseSpec, ScalarField, SimConfig,
    SobolevIndex, TerminalStatus, TorusGrid, Variant, VariantKind,
};

fn grid_strategy() -> impl Strategy<Value = Arc<TorusGrid>> {
    (
        prop::sample::select(vec![6usize, 8, 12]),
        prop::sample::select(vec![6usize, 8, 10]),
        prop::sample::select(vec![4usize, 8]),
        0.5f64..8.0,
        0.5f64..8.0,
    )
        .prop_map(|(a, b, c, l0, l1)| TorusGrid::new([a, b, c], [l0, l1, 2.0 * PI]).unwrap())
}

fn field_on(grid: &Arc<TorusGrid>, seed: u64) -> ScalarField {
    filtered_noise(grid, seed, 4, 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn leray_is_idempotent_and_solenoidal(grid in grid_strategy(), seed in any::<u64>()) {
        let u = random_velocity(&grid, seed, 3, 0.0);
        let raw = std::array::from_fn(|a| field_on(&grid, seed.wrapping_add(a as u64)));
        let p = leray_project(raw).unwrap();
        let scale = bessel_norm(&p, 1.into()).unwrap().max(1e-300);
        prop_assert!(bessel_norm(&divergence(&p).unwrap(), 0.into()).unwrap() <= 1e-12 * scale);
        let pp = leray_project(p.clone().into_components()).unwrap();
        let diff = bessel_norm(&pp.sub(&p).unwrap(), 0.into()).unwrap();
        prop_assert!(diff <= 1e-13 * scale);
        prop_assert!(bessel_norm(&divergence(&u).unwrap(), 0.into()).unwrap() <= 1e-12 * bessel_norm(&u, 1.into()).unwrap().max(1e-300));
    }

    #[test]
    fn spectral_round_trip(grid in grid_strategy(), samples in prop::collection::vec(-10.0f64..10.0, 12 * 10 * 8)) {
        let vals = samples[..grid.len()].to_vec();
        let f = ScalarField::from_samples(grid.clone(), vals.clone()).unwrap();
        let back = ScalarField::from_spectral(grid.clone(), f.spectral().to_vec()).unwrap();
        for (a, b) in back.samples().iter().zip(&vals) {
            prop_assert!((a - b).abs() <= 1e-12 * 10.0);
        }
    }

    #[test]
    fn taming_bounds(n in 1u32..6, r in 0.0f64..50.0) {
        let spec = TamingSpec::new(n).unwrap();
        let g = spec.g(r).unwrap();
        let nf = n as f64;
        prop_assert!(g >= 0.0 && g <= (r - nf).max(0.0) + 1e-12);
        prop_assert!(g >= r - nf - 1.0 - 1e-12);
        // g' = q on the transition, which peaks at t = 4/7.
        let dg = spec.g_prime(r).unwrap();
        prop_assert!(dg >= -1e-12 && dg <= spec.q(4.0 / 7.0) + 1e-12);
        prop_assert!(spec.g1(r).unwrap().abs() <= spec.dissipativity_constant() + 1e-12);
    }

    #[test]
    fn brownian_coarse_is_sum_of_fine(seed in any::<u64>(), path in 0u64..1000, step in 0u64..10_000, sub in 1u64..9, modes in 1usize..6) {
        let base = 1e-4;
        let coarse = BrownianPath::new(seed, path, base, sub).unwrap().increment(step, modes);
        let mut sum = vec![0.0; modes];
        for s in 0..sub {
            let fine = sample_increment(seed, path, step * sub + s, base, modes).unwrap();
            for (acc, v) in sum.iter_mut().zip(fine.values) {
                *acc += v;
            }
        }
        prop_assert_eq!(coarse.values, sum);
    }

    #[test]
    fn config_round_trips(
        n in prop::sample::select(vec![8usize, 16, 32]),
        dt in 1e-5f64..1e-2,
        a in 0.01f64..0.49,
        eps in 0.0f64..0.5,
        k in 1.0f64..20.0,
        seed in any::<u64>(),
        variant in prop::sample::select(vec![VariantKind::Exact, VariantKind::Mollified, VariantKind::Truncated]),
        kind in prop::sample::select(vec![NoiseKind::MultiplicativeDiagonal, NoiseKind::MultiplicativeShell, NoiseKind::Additive, NoiseKind::Off]),
    ) {
        let cfg = SimConfig {
            grid: GridSpec::Cubic(n),
            dt,
            t_final: dt * 10.0,
            a,
            eps,
            k,
            seed,
            variant,
            noise: NoiseSpec { kind, ..NoiseSpec::default() },
            ..SimConfig::default()
        };
        let back = parse_config(&cfg.to_json()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn format_real_round_trips(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        let text = format_real(v);
        let parsed: f64 = text.parse().unwrap();
        prop_assert_eq!(parsed, if v == 0.0 { 0.0 } else { v });
        prop_assert!(!text.starts_with("-0.0000000000000000e0"));
    }

    #[test]
    fn product_commutes(grid in grid_strategy(), s1 in any::<u64>(), s2 in any::<u64>()) {
        let f = field_on(&grid, s1);
        let g = field_on(&grid, s2);
        for rule in [DealiasRule::None, DealiasRule::TwoThirds, DealiasRule::PadDouble] {
            let fg = dealiased_product(&f, &g, rule).unwrap();
            let gf = dealiased_product(&g, &f, rule).unwrap();
            prop_assert_eq!(fg.samples(), gf.samples());
        }
    }

    #[test]
    fn noise_identities(
        seed in any::<u64>(),
        modes in 1usize..10,
        sigma0 in 0.01f64..3.0,
        decay in 0.51f64..2.0,
        s in 0.0f64..2.0,
        kind in prop::sample::select(vec![NoiseKind::MultiplicativeDiagonal, NoiseKind::MultiplicativeShell, NoiseKind::Additive]),
    ) {
        let grid = TorusGrid::cubic(8, 2.0 * PI).unwrap();
        let spec = NoiseSpec { kind, modes, sigma0, decay };
        let s = SobolevIndex::new(s).unwrap();
        let u1 = random_velocity(&grid, seed, 3, 1.0);
        let u2 = random_velocity(&grid, seed.wrapping_add(1), 3, 1.0);
        prop_assert!(hilbert_schmidt_identity(&u1, &spec, s).unwrap().holds(1e-10));
        prop_assert!(lipschitz_identity(&u1, &u2, &spec, s).unwrap().holds(1e-10));
    }
}

fn summary(path_id: u64, seed: u64) -> PathSummary {
    let x = (seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 11) as f64 / (1u64 << 53) as f64;
    PathSummary {
        path_id,
        status: TerminalStatus::Completed,
        failure_time: None,
        sup_f: 1.0 + x,
        int_g: 2.0 + x * x,
        sup_u_h1: 3.0 * x,
        finite: true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoint_round_trip_and_corruption(
        seed in any::<u64>(),
        step in any::<u64>(),
        path_id in any::<u64>(),
        flip in any::<prop::sample::Index>(),
        bit in 0u8..8,
    ) {
        let grid = TorusGrid::new([8, 6, 4], [2.0 * PI, 3.0, 5.0]).unwrap();
        let ck = Checkpoint {
            state: broadband_state(&grid, seed, 1.0),
            step,
            dt: 1e-3,
            variant: Variant::Truncated { eps: 0.1, k: 4.0, radius: 10.0, annulus: true },
            seed,
            path_id,
        };
        let bytes = encode_checkpoint(&ck);
        let back = decode_checkpoint(&bytes, Some(&grid)).unwrap();
        prop_assert_eq!(back.step, step);
        prop_assert_eq!(back.seed, seed);
        prop_assert_eq!(back.path_id, path_id);
        prop_assert_eq!(back.variant, ck.variant);
        prop_assert_eq!(back.state.n.spectral(), ck.state.n.spectral());
        prop_assert_eq!(back.state.u.component(2).spectral(), ck.state.u.component(2).spectral());
        prop_assert_eq!(encode_checkpoint(&back), bytes.clone());

        let mut bad = bytes.clone();
        let i = flip.index(bad.len());
        bad[i] ^= 1 << bit;
        prop_assert!(decode_checkpoint(&bad, Some(&grid)).is_err());
        prop_assert!(decode_checkpoint(&bytes[..bytes.len() - 1], Some(&grid)).is_err());
    }

    #[test]
    fn ensemble_reduction_ignores_path_order(
        seeds in prop::collection::vec(any::<u64>(), 2..20),
        perm_seed in any::<u64>(),
    ) {
        let paths: Vec<PathSummary> = seeds.iter().enumerate().map(|(i, &s)| summary(i as u64, s)).collect();
        let mut shuffled = paths.clone();
        let n = shuffled.len();
        let mut state = perm_seed | 1;
        for i in (1..n).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            shuffled.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let a = EnsembleReport::reduce(0.1, paths, &[1.0, 2.0]).unwrap();
        let b = EnsembleReport::reduce(0.1, shuffled, &[1.0, 2.0]).unwrap();
        prop_assert_eq!(a, b);
    }
}
