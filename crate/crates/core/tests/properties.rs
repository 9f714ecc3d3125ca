use ndarray::{Array1, Array2};
use proptest::prelude::*;
use topv_core::budget::{flops_ratio, ModelShape};
use topv_core::cost::{build_cost, central_cost, min_max_normalize, spatial_cost, CostConfig};
use topv_core::pruner::{decide, select_topk, PruneConfig};
use topv_core::sinkhorn::{plan_entropy, solve, LastUpdate, MassMode, SinkhornConfig};
use topv_core::token::{decode_dump, encode_dump};
use topv_core::TokenSet;

fn converged(epsilon: f64) -> SinkhornConfig {
    SinkhornConfig {
        epsilon,
        max_iter: 200_000,
        tolerance: 1e-13,
        mass_mode: MassMode::Uniform,
        last_update: LastUpdate::Column,
        log_domain: false,
    }
}

fn grid_tokens(h: usize, w: usize, d: usize) -> impl Strategy<Value = TokenSet> {
    prop::collection::vec(-3.0f32..3.0, h * w * d).prop_map(move |v| {
        let data = Array2::from_shape_vec((h * w, d), v.into_iter().map(f64::from).collect()).unwrap();
        TokenSet::new(data, h, w).unwrap()
    })
}

fn sized_tokens() -> impl Strategy<Value = TokenSet> {
    (1usize..5, 1usize..5, 1usize..5).prop_flat_map(|(h, w, d)| grid_tokens(h, w, d))
}

fn simplex(n: usize) -> impl Strategy<Value = Array1<f64>> {
    prop::collection::vec(0.05f64..1.0, n).prop_map(|v| {
        let a = Array1::from(v);
        let s = a.sum();
        a / s
    })
}

fn ot_problem() -> impl Strategy<Value = (Array2<f64>, Array1<f64>, Array1<f64>, f64)> {
    (2usize..7).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0f64..1.0, n * n).prop_map(move |v| Array2::from_shape_vec((n, n), v).unwrap()),
            simplex(n),
            simplex(n),
            prop::sample::select(vec![0.2, 0.5, 1.0]),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dump_round_trip_is_bit_exact(src in sized_tokens(), with_target in any::<bool>()) {
        let tgt = TokenSet::new(src.data().mapv(|v| -v), src.grid_h(), src.grid_w()).unwrap();
        let target = with_target.then_some(&tgt);
        let bytes = encode_dump(&src, target).unwrap();
        let (s2, t2) = decode_dump(&bytes).unwrap();
        prop_assert_eq!(&s2, &src);
        prop_assert_eq!(t2.as_ref(), target);
        prop_assert_eq!(encode_dump(&s2, t2.as_ref()).unwrap(), bytes);
    }

    #[test]
    fn auto_coords_are_a_bijection(h in 1usize..30, w in 1usize..30) {
        let t = TokenSet::new(Array2::zeros((h * w, 1)), h, w).unwrap();
        let mut seen = vec![false; h * w];
        for &(x, y) in t.coords() {
            prop_assert!(x < w && y < h);
            prop_assert!(!seen[y * w + x]);
            seen[y * w + x] = true;
        }
        prop_assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn normalized_components_in_unit_range(src in sized_tokens(), scale in 0.1f64..4.0) {
        let tgt = TokenSet::new(src.data().mapv(|v| v * scale + 0.3), src.grid_h(), src.grid_w()).unwrap();
        let c = build_cost(&src, &tgt, &CostConfig::INTERNVL2).unwrap();
        for m in [&c.c_f, &c.c_s, &c.c_e] {
            prop_assert!(m.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        for row in c.c_e.rows() {
            prop_assert!(row.iter().all(|&v| v == row[0]));
        }
        prop_assert!(c.c_v.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn spatial_cost_symmetric_on_shared_coords(src in sized_tokens(), sigma in 0.5f64..20.0) {
        let c = spatial_cost(&src, &src, sigma).unwrap();
        let n = src.len();
        for i in 0..n {
            prop_assert_eq!(c[[i, i]], 0.0);
            for j in 0..n {
                prop_assert_eq!(c[[i, j]], c[[j, i]]);
                prop_assert!((0.0..1.0).contains(&c[[i, j]]));
            }
        }
    }

    #[test]
    fn central_cost_mirror_symmetry(h in 1usize..12, w in 1usize..12) {
        let t = TokenSet::new(Array2::zeros((h * w, 1)), h, w).unwrap();
        let c = central_cost(&t).unwrap();
        for (i, &(x, y)) in t.coords().iter().enumerate() {
            if x >= 1 && y >= 1 {
                let (mx, my) = (w - x, h - y);
                if mx < w && my < h {
                    prop_assert!((c[[i, 0]] - c[[my * w + mx, 0]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn cost_scales_linearly_with_weights(src in sized_tokens(), k in 0.1f64..10.0) {
        let base = CostConfig::LLAVA;
        let scaled = CostConfig { alpha: base.alpha * k, beta: base.beta * k, gamma: base.gamma * k, ..base };
        let a = build_cost(&src, &src, &base).unwrap();
        let b = build_cost(&src, &src, &scaled).unwrap();
        for (x, y) in a.c_v.iter().zip(b.c_v.iter()) {
            prop_assert!((x * k - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn plan_nonnegative_and_finite((cost, p, q, eps) in ot_problem(), iters in 1usize..10) {
        let cfg = SinkhornConfig { max_iter: iters, ..converged(eps) };
        let plan = solve(&cost, &p, &q, &cfg).unwrap();
        prop_assert!(plan.plan.iter().all(|&x| x.is_finite() && x >= 0.0));
        for (c, want) in plan.col_sums().iter().zip(q.iter()) {
            prop_assert!((c - want).abs() < 1e-14);
        }
    }

    #[test]
    fn converged_plan_shift_invariant((cost, p, q, eps) in ot_problem(), shift in -2.0f64..2.0) {
        let a = solve(&cost, &p, &q, &converged(eps)).unwrap();
        let b = solve(&cost.mapv(|c| c + shift), &p, &q, &converged(eps)).unwrap();
        prop_assert!(a.converged && b.converged);
        for (x, y) in a.plan.iter().zip(b.plan.iter()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn plan_rows_permute_with_cost_rows((cost, p, q, eps) in ot_problem(), seed in any::<u64>()) {
        let n = p.len();
        let mut perm: Vec<usize> = (0..n).collect();
        // deterministic shuffle from the seed
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let pc = Array2::from_shape_fn((n, n), |(i, j)| cost[[perm[i], j]]);
        let pp = Array1::from_shape_fn(n, |i| p[perm[i]]);
        let a = solve(&cost, &p, &q, &converged(eps)).unwrap();
        let b = solve(&pc, &pp, &q, &converged(eps)).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((a.plan[[perm[i], j]] - b.plan[[i, j]]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn entropy_nondecreasing_in_temperature((cost, p, q, _eps) in ot_problem()) {
        let temps = [0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0];
        let mut last = f64::NEG_INFINITY;
        for eps in temps {
            let plan = solve(&cost, &p, &q, &converged(eps)).unwrap();
            let h = plan_entropy(&plan.plan);
            prop_assert!(h >= last - 1e-9, "entropy fell from {last} to {h} at eps={eps}");
            last = h;
        }
    }

    #[test]
    fn linear_and_log_domain_agree((cost, p, q, eps) in ot_problem(), iters in prop::sample::select(vec![1usize, 3, 200_000])) {
        let lin = SinkhornConfig { max_iter: iters, ..converged(eps) };
        let log = SinkhornConfig { log_domain: true, ..lin };
        let a = solve(&cost, &p, &q, &lin).unwrap();
        let b = solve(&cost, &p, &q, &log).unwrap();
        for (x, y) in a.plan.iter().zip(b.plan.iter()) {
            prop_assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn retained_sorted_unique_in_range(imp in prop::collection::vec(0.0f64..1.0, 1..200), ratio in 0.0f64..0.95, r in 0usize..8) {
        let n = imp.len();
        let cfg = PruneConfig { prune_ratio: ratio, recovery_interval: r };
        if let Ok(d) = decide(Array1::from(imp), &cfg) {
            prop_assert!(d.retained.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(d.retained.iter().all(|&i| i < n));
            prop_assert!(d.kept_topk.iter().all(|i| !d.recovered.contains(i)));
            prop_assert_eq!(d.kept_topk.len() + d.recovered.len(), d.retained.len());
        }
    }

    #[test]
    fn raising_importance_keeps_token(imp in prop::collection::vec(0.0f64..1.0, 2..60), k_frac in 0.05f64..1.0, pick in any::<prop::sample::Index>(), bump in 0.0f64..1.0) {
        let n = imp.len();
        let k = ((n as f64 * k_frac).ceil() as usize).clamp(1, n);
        let i = pick.index(n);
        let before = select_topk(&Array1::from(imp.clone()), k).unwrap();
        if before.contains(&i) {
            let mut raised = imp.clone();
            raised[i] += bump;
            let after = select_topk(&Array1::from(raised), k).unwrap();
            prop_assert!(after.contains(&i));
        }
    }

    #[test]
    fn decision_is_deterministic(imp in prop::collection::vec(0.0f64..1.0, 1..100)) {
        let a = decide(Array1::from(imp.clone()), &PruneConfig::LLAVA);
        let b = decide(Array1::from(imp), &PruneConfig::LLAVA);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "determinism broken"),
        }
    }

    #[test]
    fn fewer_retained_never_saves_less(r in 0usize..576) {
        let s = ModelShape::LLAVA_7B;
        let a = flops_ratio(r, &s).unwrap();
        let b = flops_ratio(r + 1, &s).unwrap();
        prop_assert!(a.flops_ratio_tokenfraction >= b.flops_ratio_tokenfraction);
        prop_assert!(a.flops_ratio_layerweighted >= b.flops_ratio_layerweighted);
        prop_assert!(a.kv_ratio <= b.kv_ratio);
        for v in [a.flops_ratio_tokenfraction, a.flops_ratio_layerweighted, a.kv_ratio] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn normalization_of_constant_component_is_zero() {
    let t = TokenSet::new(Array2::ones((4, 3)), 2, 2).unwrap();
    let c = build_cost(&t, &t, &CostConfig::LLAVA).unwrap();
    assert!(c.c_f.iter().all(|&v| v == 0.0));
    let mut m = Array2::from_elem((2, 2), -1.0);
    min_max_normalize(&mut m);
    assert!(m.iter().all(|&v| v == 0.0));
}

#[test]
fn modes_stay_close_for_llava_shape() {
    let s = ModelShape::LLAVA_7B;
    for r in (0..=576).step_by(8) {
        let rep = flops_ratio(r, &s).unwrap();
        assert!((rep.flops_ratio_tokenfraction - rep.flops_ratio_layerweighted).abs() < 0.02, "r={r}");
    }
}
