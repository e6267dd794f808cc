mod common;

use common::*;
use dwols_privacy::data::Term;
use dwols_privacy::distributed::{
    aggregate_summaries, compute_site_summary_with_weights, deserialize_summary, serialize_summary,
    solve_distributed,
};
use dwols_privacy::gdwols::{
    build_outcome_design, fit_gdwols, optimal_dose, DesignSpec, DoseKind, DoseRange, QuadraticBlip,
};
use dwols_privacy::glm::fit_wls;
use dwols_privacy::pooling::{aggregate, assign_pools, fit_pooled_gdwols, PoolSizes, PoolStrategy};
use dwols_privacy::weights::{estimate_weights, TreatmentKind, TreatmentModelSpec, WeightVector};
use proptest::prelude::*;

fn spec_k(k: usize) -> DesignSpec {
    let terms: Vec<Term> = (1..=k).map(|j| Term::identity(&format!("x{j}"))).collect();
    DesignSpec::linear(terms.clone(), terms[..1].to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pooling_partitions_subjects(seed in 0u64..10_000, n in 10usize..400, g in 1usize..12, sites in 1usize..5,
                                   strategy in 0u8..2) {
        let data = random_dataset(seed, n, 2, sites, true);
        let strategy = if strategy == 0 { PoolStrategy::CrossCentre1 } else { PoolStrategy::PerCentreCommonG2 };
        let too_big = match strategy {
            PoolStrategy::CrossCentre1 => g > n,
            _ => data.site_indices().values().any(|v| g > v.len()),
        };
        let result = assign_pools(&data, strategy, &PoolSizes::Common(g), seed);
        prop_assume!(!too_big);
        let a = result.unwrap();
        prop_assert!(a.pool_sizes().iter().all(|&s| s == g));
        let expected_excluded: usize = match strategy {
            PoolStrategy::CrossCentre1 => n % g,
            _ => data.site_indices().values().map(|v| v.len() % g).sum(),
        };
        prop_assert_eq!(a.excluded.len(), expected_excluded);
        let mut seen = vec![0u8; n];
        for m in &a.members {
            for &i in m { seen[i] += 1; }
        }
        for &i in &a.excluded { seen[i] += 1; }
        prop_assert!(seen.iter().all(|&c| c == 1));
        if strategy == PoolStrategy::PerCentreCommonG2 {
            for m in &a.members {
                let site = &data.records()[m[0]].site;
                prop_assert!(m.iter().all(|&i| &data.records()[i].site == site));
            }
        }
    }

    #[test]
    fn pooled_sums_preserve_totals(seed in 0u64..10_000, n in 20usize..300, g in 1usize..10) {
        let data = random_dataset(seed, n, 2, 3, false);
        let spec = spec_k(2);
        let a = assign_pools(&data, PoolStrategy::CrossCentre1, &PoolSizes::Common(g), seed).unwrap();
        let pooled = aggregate(&data, &a, &spec, &[]).unwrap();
        let included: Vec<usize> = a.members.iter().flatten().copied().collect();
        let tot = |f: &dyn Fn(usize) -> f64| included.iter().map(|&i| f(i)).sum::<f64>();
        let r = data.records();
        let scale = |v: f64| v.abs().max(1.0) * 1e-10;
        let y: f64 = pooled.rows.iter().map(|p| p.y_pool).sum();
        prop_assert!((y - tot(&|i| r[i].outcome)).abs() <= scale(y));
        let a_sum: f64 = pooled.rows.iter().map(|p| p.a_pool).sum();
        prop_assert!((a_sum - tot(&|i| r[i].treatment)).abs() <= scale(a_sum));
        let x1: f64 = pooled.sums_of(&Term::identity("x1")).unwrap().iter().sum();
        prop_assert!((x1 - tot(&|i| r[i].covariates[0])).abs() <= scale(x1));
        // a_pool · x^ψw recovers Σ aᵢxᵢ within each pool.
        for (p, m) in pooled.rows.iter().zip(&a.members) {
            let ax: f64 = m.iter().map(|&i| r[i].treatment * r[i].covariates[0]).sum();
            prop_assert!((p.a_pool * p.x_psi_weighted[0] - ax).abs() <= scale(ax) * 1e3);
        }
    }

    #[test]
    fn pooled_g1_is_gold(seed in 0u64..10_000, n in 30usize..300, binary in any::<bool>()) {
        let data = random_dataset(seed, n, 2, 2, binary);
        let spec = spec_k(2);
        let kind = if binary { TreatmentKind::Binary } else { TreatmentKind::Continuous };
        let t = TreatmentModelSpec::new(kind, vec![Term::identity("x1")]);
        let w = match estimate_weights(&data, &t, None) {
            Ok(w) => w,
            Err(_) => return Ok(()),
        };
        let gold = fit_gdwols(&data, &spec, &w).unwrap();
        let a = assign_pools(&data, PoolStrategy::CrossCentre1, &PoolSizes::Common(1), seed).unwrap();
        let pooled = aggregate(&data, &a, &spec, &t.covariate_basis).unwrap();
        let est = fit_pooled_gdwols(&pooled, &spec, &t.clone().pooled(), None).unwrap();
        for (x, y) in gold.psi.iter().zip(&est.psi) {
            prop_assert!((x - y).abs() <= 1e-12, "{} vs {}", x, y);
        }
    }

    #[test]
    fn distributed_matches_central(seed in 0u64..10_000, n in 30usize..600, k in 1usize..5, sites in 1usize..7) {
        let data = random_dataset(seed, n, k, sites, true);
        let spec = spec_k(k);
        let w: Vec<f64> = (0..n).map(|i| 0.2 + ((i * 37 + seed as usize) % 17) as f64 / 7.0).collect();
        let design = build_outcome_design(&data, &spec).unwrap();
        let central = fit_wls(&design.matrix, &data.outcome(), &w).unwrap();
        let mut summaries: Vec<_> = data.site_indices().values().map(|idx| {
            let wv = WeightVector::supplied(idx.iter().map(|&i| w[i]).collect()).unwrap();
            compute_site_summary_with_weights(&data.subset(idx), &spec, TreatmentKind::Binary, &wv).unwrap()
        }).collect();
        let est = solve_distributed(&aggregate_summaries(&summaries).unwrap(), &spec).unwrap();
        prop_assert!(max_relative_gap(&est.psi, &central.theta[spec.psi_offset()..]) <= 1e-10);

        // Any arrival order aggregates to the same bits.
        summaries.reverse();
        let again = solve_distributed(&aggregate_summaries(&summaries).unwrap(), &spec).unwrap();
        prop_assert!(est.psi.iter().map(|v| v.to_bits()).eq(again.psi.iter().map(|v| v.to_bits())));

        // The wire format is value-exact.
        for s in &summaries {
            prop_assert_eq!(&deserialize_summary(&serialize_summary(s).unwrap()).unwrap(), s);
        }
    }

    #[test]
    fn optimal_dose_maximizes_on_grid(l in -5.0f64..5.0, q in -5.0f64..5.0, x in -2.0f64..2.0,
                                       lo in -10.0f64..0.0, width in 0.1f64..20.0) {
        let blip = QuadraticBlip { psi01: l, psi11: vec![0.5], psi02: q, psi12: vec![-0.3] };
        let range = DoseRange::new(lo, lo + width).unwrap();
        let d = optimal_dose(&blip, &[x], range);
        prop_assert!(d.dose >= range.a_min && d.dose <= range.a_max);
        let best_grid = (0..=2000)
            .map(|i| range.a_min + width * i as f64 / 2000.0)
            .map(|a| blip.value(&[x], a))
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(blip.value(&[x], d.dose) >= best_grid - 1e-9);
        if d.kind == DoseKind::Interior {
            let (_, quad) = blip.coefficients_at(&[x]);
            prop_assert!(quad < 0.0);
        }
    }

    #[test]
    fn term_text_round_trips(func in 0usize..7, name in "[a-z][a-z0-9_]{0,6}") {
        let text = match func {
            0 => name.clone(),
            1 => format!("log({name})"),
            2 => format!("sin({name})"),
            3 => format!("cos({name})"),
            4 => format!("exp({name})"),
            5 => format!("sq({name})"),
            _ => format!("sqrt({name})"),
        };
        let t: Term = text.parse().unwrap();
        prop_assert_eq!(t.to_string(), text);
    }
}

#[test]
fn larger_pools_use_fewer_rows() {
    let data = random_dataset(5, 3000, 1, 3, true);
    let spec = spec_k(1);
    let t = TreatmentModelSpec::new(TreatmentKind::Binary, vec![Term::identity("x1")]);
    let mut rows = Vec::new();
    for g in [1, 5, 30] {
        let a = assign_pools(&data, PoolStrategy::CrossCentre1, &PoolSizes::Common(g), 3).unwrap();
        let pooled = aggregate(&data, &a, &spec, &t.covariate_basis).unwrap();
        let est = fit_pooled_gdwols(&pooled, &spec, &t.clone().pooled(), None).unwrap();
        assert!(est.psi.iter().all(|v| v.is_finite()));
        rows.push(est.diagnostics.n);
    }
    assert_eq!(rows, vec![3000, 600, 100]);
}
