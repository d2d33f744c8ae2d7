use proptest::prelude::*;
use sgdl::action::LagrangianCtx;
use sgdl::landscape::{min_in_tree, min_in_tree_brute_force, CostMatrix, energy_levels};
use sgdl::noise::{AffineErr, CgfOptions, NoiseModel};
use sgdl::objective::{CriticalComponent, DoubleWell, EigSignature, Kind, ObjectiveSpec, SearchBox};
use sgdl::path::DiscretePath;
use sgdl::records::format_sig17;
use sgdl::simulate::{detect_visits, occupation_measure};

fn matrix(k: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(prop_oneof![9 => 0.0..20.0f64, 1 => Just(f64::INFINITY)], k), k).prop_map(|mut q| {
        for (i, row) in q.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        q
    })
}

fn point_component(id: usize, x: f64) -> CriticalComponent<f64> {
    CriticalComponent {
        id,
        points: vec![vec![x]],
        rep: 0,
        f_value: 0.0,
        kind: Kind::Minimizer,
        eig_signature: EigSignature { n_pos: 1, n_neg: 0, n_zero: 0 },
        minimizing: true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn edmonds_matches_enumeration(q in (3usize..=6).prop_flat_map(matrix), root in 0usize..3) {
        let fast = min_in_tree(&q, root);
        let slow = min_in_tree_brute_force(&q, root);
        match (fast, slow) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.weight, b.weight);
                prop_assert!(a.is_valid());
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "disagreement: {:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn energies_are_normalized(q in (2usize..=5).prop_flat_map(|k| prop::collection::vec(prop::collection::vec(0.0..5.0f64, k), k))) {
        let mut q = q;
        for (i, row) in q.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        let e = energy_levels(&CostMatrix::new(q).unwrap()).unwrap();
        prop_assert!(e.e.iter().all(|v| *v >= 0.0));
        prop_assert!(e.e.iter().any(|v| *v == 0.0));
    }

    #[test]
    fn finite_sum_cgf_is_convex(
        atoms in prop::collection::vec(-3.0..3.0f64, 2..6),
        p in -4.0..4.0f64,
        q in -4.0..4.0f64,
    ) {
        let m = NoiseModel::finite_sum(atoms.iter().map(|&a| AffineErr::constant(vec![a])).collect(), 1).unwrap();
        let h = |t: f64| m.cgf(&[0.0], 0.0, &[t], CgfOptions::default()).value;
        let mid = h(0.5 * (p + q));
        prop_assert!(mid <= 0.5 * (h(p) + h(q)) + 1e-12 * (1.0 + h(p).abs() + h(q).abs()));
        prop_assert!(h(p) >= -1e-12, "centered CGF is non-negative by Jensen");
    }

    #[test]
    fn reverse_path_identity_1d(
        a in -1.8..1.8f64,
        b in -1.8..1.8f64,
        bump in -0.5..0.5f64,
        horizon in 0.5..5.0f64,
        sigma2 in 0.5..4.0f64,
    ) {
        let spec = ObjectiveSpec::new(DoubleWell, SearchBox::cube(1, -2.0, 2.0)).unwrap();
        let ctx = LagrangianCtx::new(spec, NoiseModel::gaussian(1, sigma2).unwrap()).unwrap();
        let n = 2001;
        let nodes: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let s = k as f64 / (n - 1) as f64;
                vec![a + s * (b - a) + bump * (std::f64::consts::PI * s).sin()]
            })
            .collect();
        let path = DiscretePath::new(nodes, horizon).unwrap();
        let fwd = ctx.action(&path).unwrap();
        let rev = ctx.action(&path.reversed()).unwrap();
        // Exact on the grid: the cross term is the midpoint line integral of the gradient.
        let line: f64 = path
            .nodes
            .windows(2)
            .map(|w| {
                let mut g = [0.0];
                ctx.spec.grad_into(&[0.5 * (w[0][0] + w[1][0])], &mut g);
                (w[1][0] - w[0][0]) * g[0]
            })
            .sum();
        prop_assert!((rev - fwd + 2.0 * line / sigma2).abs() <= 1e-9 * (1.0 + fwd.abs()));
        // Against the continuum value, up to midpoint quadrature error.
        let df = ctx.spec.f(&[b]) - ctx.spec.f(&[a]);
        prop_assert!((rev - fwd + 2.0 * df / sigma2).abs() <= 1e-4 * (1.0 + fwd.abs()));
    }

    #[test]
    fn occupation_counts_are_conserved(xs in prop::collection::vec(-2.0..2.0f64, 1..200)) {
        let comps = [point_component(0, -1.0), point_component(1, 0.0), point_component(2, 1.0)];
        let tr: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let s = occupation_measure(&[tr.clone()], &comps, 0.3).unwrap();
        prop_assert_eq!(s.counts.iter().sum::<u64>() + s.outside, s.total);
        let total: f64 = s.fractions().iter().sum::<f64>() + s.outside_fraction();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        let visits = detect_visits(&tr, &comps, 0.15, 0.45).unwrap();
        prop_assert!(visits.windows(2).all(|w| w[0].entry <= w[1].entry));
        prop_assert!(visits.iter().all(|v| v.exit.is_none_or(|e| e >= v.entry)));
    }

    #[test]
    fn sig17_round_trips(v in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL) {
        prop_assert_eq!(format_sig17(v).parse::<f64>().unwrap(), v);
    }
}

