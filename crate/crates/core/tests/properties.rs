use nearfield_core::dtn::{dtn_exterior, DtnKind, DtnSet, HarmonicDiagonal};
use nearfield_core::inversion::recover_dtn;
use nearfield_core::layer::{assemble_l, DenseOperator, Discretization};
use nearfield_core::scene::{RadialPotential, SceneConfig, SceneFile};
use nearfield_core::specfun::*;
use nearfield_core::Complex64;
use proptest::prelude::*;
use std::sync::OnceLock;

fn tiny_l() -> &'static DenseOperator {
    static L: OnceLock<DenseOperator> = OnceLock::new();
    L.get_or_init(|| {
        let cfg = SceneConfig {
            l_max: 3,
            n_quad_s: 30,
            ..SceneConfig::default_scene()
        };
        assemble_l(&Discretization::new(&cfg).unwrap())
    })
}

fn complex() -> impl Strategy<Value = Complex64> {
    (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b)| Complex64::new(a, b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bessel_wronskian(l in 1usize..40, x in 0.5f64..50.0) {
        let j = spherical_bessel_j_array(l, x).unwrap();
        let y = spherical_bessel_y_array(l, x).unwrap();
        let w = j[l] * y[l - 1] - j[l - 1] * y[l];
        let scale = (j[l] * y[l - 1]).abs().max((j[l - 1] * y[l]).abs()).max(1.0 / (x * x));
        prop_assert!((w - 1.0 / (x * x)).abs() <= 1e-11 * scale, "W = {w}, want {}", 1.0 / (x * x));
    }

    #[test]
    fn bessel_three_term_recurrence(l in 1usize..40, x in 0.1f64..60.0) {
        let j = spherical_bessel_j_array(l + 1, x).unwrap();
        let lhs = j[l - 1] + j[l + 1];
        let rhs = (2 * l + 1) as f64 / x * j[l];
        let scale = j[l - 1].abs().max(j[l + 1].abs()).max(rhs.abs());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
    }

    #[test]
    fn harmonic_conjugation(l in 0usize..30, t in 0.0f64..std::f64::consts::PI, p in 0.0f64..6.28) {
        let ys = spherical_harmonics_all(l, t, p);
        for m in 0..=(l as i64) {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            let a = ys[lm_index(l, -m)];
            let b = ys[lm_index(l, m)].conj() * sign;
            prop_assert!((a - b).norm() <= 1e-13 * (1.0 + b.norm()));
        }
    }

    #[test]
    fn exterior_dtn_has_positive_imaginary_part(l in 0usize..40, k in 0.2f64..6.0, a in 0.5f64..2.0) {
        let f = dtn_exterior(l, k, a).unwrap();
        // Wronskian: Im f = k / (x² |h_l(x)|²) with x = k a
        let (h, _) = spherical_hankel1(l, k * a).unwrap();
        let want = 1.0 / (k * a * a * h.norm_sqr());
        prop_assert!(f.im > 0.0);
        prop_assert!((f.im - want).abs() <= 1e-10 * want);
    }

    #[test]
    fn breakpoints_belong_to_the_outer_shell(b0 in 0.1f64..0.5, gap in 0.05f64..0.4, v0 in 0.2f64..3.0, v1 in 0.2f64..3.0) {
        let p = RadialPotential::new(vec![b0, b0 + gap], vec![v0, v1]).unwrap();
        prop_assert_eq!(p.evaluate(b0), v1);
        prop_assert_eq!(p.evaluate(b0 + gap), 1.0);
        prop_assert_eq!(p.evaluate(b0 * 0.999), v0);
    }

    #[test]
    fn middle_inverts_to_the_potential_dtn(b in 0.2f64..0.9, v in 0.3f64..2.5, k in 0.5f64..3.0) {
        let p = RadialPotential::new(vec![b], vec![v]).unwrap();
        let set = DtnSet::compute(&p, 10, k, 1.0);
        prop_assume!(set.is_ok());
        let set = set.unwrap();
        let m = set.middle();
        prop_assume!(m.is_ok());
        let back = recover_dtn(&m.unwrap(), &set.f0, &set.fout, 10);
        prop_assume!(back.is_ok());
        let back = back.unwrap();
        for l in 0..=10 {
            let t = set.fn_.get(l);
            prop_assert!((back.get(l) - t).norm() <= 1e-9 * t.norm().max(1.0), "l={}", l);
        }
    }

    #[test]
    fn operators_are_linear(x in proptest::collection::vec(complex(), 30), y in proptest::collection::vec(complex(), 30), s in complex()) {
        let l = tiny_l();
        prop_assume!(x.len() == l.matrix.ncols());
        let combo: Vec<Complex64> = x.iter().zip(&y).map(|(a, b)| a * s + b).collect();
        let lhs = l.apply(&combo).unwrap();
        let (lx, ly) = (l.apply(&x).unwrap(), l.apply(&y).unwrap());
        for ((u, a), b) in lhs.iter().zip(&lx).zip(&ly) {
            let want = a * s + b;
            prop_assert!((u - want).norm() <= 1e-12 * (1.0 + a.norm() + b.norm()));
        }
    }

    #[test]
    fn diagonal_json_round_trip(entries in proptest::collection::vec(complex(), 1..30)) {
        let d = HarmonicDiagonal { kind: DtnKind::Fn, entries };
        let back = HarmonicDiagonal::from_json(&d.to_json()).unwrap();
        prop_assert_eq!(back, d);
    }

    #[test]
    fn operator_json_round_trip(v in complex()) {
        let mut op = tiny_l().clone();
        op.matrix[(0, 0)] = v;
        let back = DenseOperator::from_json(&op.to_json()).unwrap();
        prop_assert_eq!(back, op);
    }

    #[test]
    fn scene_toml_round_trip(
        k in 0.5f64..4.0,
        rho in 0.1f64..0.6,
        cx in 2.0f64..5.0,
        l_max in 2usize..30,
        n in 20usize..900,
        b in 0.1f64..0.9,
        v in 0.2f64..3.0,
    ) {
        let file = SceneFile {
            scene: SceneConfig { k, rho, center: [cx, -0.5, 0.25], l_max, n_quad_s: n, ..SceneConfig::default_scene() },
            potential: RadialPotential::new(vec![b], vec![v]).unwrap(),
        };
        let back = SceneFile::parse(&file.to_toml()).unwrap();
        prop_assert_eq!(back, file);
    }
}
