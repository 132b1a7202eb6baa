mod common;

use common::{f, fixture, rel, z};
use nearfield_core::dtn::*;
use nearfield_core::scene::RadialPotential;
use nearfield_core::specfun::spherical_hankel1;
use nearfield_core::NearFieldError;

#[test]
fn degree_zero_closed_forms() {
    let fx = fixture("dtn.json");
    let f0 = dtn_interior_free(0, 2.0, 1.0).unwrap();
    assert!(rel(f0, f(&fx["f0_degree0_k2"])) < 1e-13);
    assert!(rel(f0, 2.0 / 2.0f64.tan() - 1.0) < 1e-13);
    let fo = dtn_exterior(0, 2.0, 1.0).unwrap();
    assert!((fo - z(&fx["fout_degree0_k2"])).norm() < 1e-13);
}

#[test]
fn free_and_exterior_match_closed_form_tables() {
    let fx = fixture("dtn.json");
    for k in [1.0, 2.0, 3.0] {
        let key = format!("{}", k as i32);
        for l in 0..=40 {
            let f0 = dtn_interior_free(l, k, 1.0).unwrap();
            assert!(rel(f0, f(&fx["f0"][&key][l])) < 1e-12, "f0 l={l} k={k}");
            let fo = dtn_exterior(l, k, 1.0).unwrap();
            let want = z(&fx["fout"][&key][l]);
            assert!((fo - want).norm() < 1e-12 * want.norm(), "fout l={l} k={k}");
            // imaginary part against the Wronskian closed form
            let closed = f(&fx["fout"][&key][l]["im_closed_form"]);
            assert!(fo.im > 0.0);
            assert!(rel(fo.im, closed) < 1e-12, "Im fout l={l} k={k}");
        }
    }
}

#[test]
fn finite_difference_normal_derivatives() {
    let fx = fixture("dtn.json");
    let f4 = dtn_interior_free(4, 2.0, 1.0).unwrap();
    assert!((f4 - f(&fx["fd_f0_l4_k2"])).abs() < 1e-8);
    let f6 = dtn_exterior(6, 3.0, 1.0).unwrap();
    assert!((f6 - z(&fx["fd_fout_l6_k3"])).norm() < 1e-8);
}

#[test]
fn pole_at_a_bessel_zero() {
    match dtn_interior_free(0, std::f64::consts::PI, 1.0) {
        Err(NearFieldError::Pole { l: 0, .. }) => {}
        other => panic!("expected a pole, got {other:?}"),
    }
}

#[test]
fn free_potential_reduces_to_f0() {
    let free = RadialPotential::free();
    for l in 0..=25 {
        let a = dtn_potential(&free, l, 2.0, 1.0).unwrap();
        let b = dtn_interior_free(l, 2.0, 1.0).unwrap();
        assert!((a - b).abs() < 1e-9 * b.abs().max(1.0), "l={l}");
    }
}

#[test]
fn single_shell_transfer_matrix() {
    let fx = fixture("dtn.json");
    let s = &fx["single_shell"];
    let p = RadialPotential::new(vec![f(&s["breakpoint"])], vec![f(&s["value"])]).unwrap();
    for (l, want) in s["fn"].as_array().unwrap().iter().enumerate() {
        let got = dtn_potential(&p, l, 2.0, 1.0).unwrap();
        assert!((got - f(want)).abs() < 1e-8 * f(want).abs().max(1.0), "l={l}: {got} vs {}", f(want));
    }
}

#[test]
fn two_shell_transfer_matrix() {
    let fx = fixture("dtn.json");
    let s = &fx["two_shell"];
    let p = RadialPotential::default_two_shell();
    for (l, want) in s["fn"].as_array().unwrap().iter().enumerate() {
        let got = dtn_potential(&p, l, 2.0, 1.0).unwrap();
        assert!((got - f(want)).abs() < 1e-8 * f(want).abs().max(1.0), "l={l}");
    }
}

#[test]
fn self_convergence_is_fourth_order() {
    let fx = fixture("dtn.json");
    let p = RadialPotential::new(vec![0.5], vec![1.5]).unwrap();
    for l in [0usize, 3, 6] {
        let exact = f(&fx["single_shell"]["fn"][l]);
        let errs: Vec<f64> = [100, 200, 400]
            .iter()
            .map(|&n| (dtn_potential_with_steps(&p, l, 2.0, 1.0, n).unwrap() - exact).abs())
            .collect();
        let r1 = errs[0] / errs[1];
        let r2 = errs[1] / errs[2];
        println!("l={l}: errors {errs:?} ratios {r1:.2} {r2:.2}");
        assert!((12.0..=20.0).contains(&r2), "ratio {r2} not near 2^4");
    }
}

#[test]
fn first_order_symbol_growth() {
    let l = 40;
    let f0 = dtn_interior_free(l, 2.0, 1.0).unwrap();
    let fo = dtn_exterior(l, 2.0, 1.0).unwrap();
    assert!((f0 / l as f64 - 1.0).abs() < 0.05);
    assert!((fo.re / -((l + 1) as f64) - 1.0).abs() < 0.05);
}

#[test]
fn difference_decays_to_compactness_floor() {
    let fx = fixture("dtn.json");
    let p = RadialPotential::default_two_shell();
    let diffs: Vec<f64> = (0..=25)
        .map(|l| (dtn_potential(&p, l, 2.0, 1.0).unwrap() - dtn_interior_free(l, 2.0, 1.0).unwrap()).abs())
        .collect();
    // monotone from some small degree on
    let l_star = (0..diffs.len())
        .find(|&s| diffs[s..].windows(2).all(|w| w[1] < w[0]))
        .unwrap();
    assert!(l_star <= 5, "monotone only from l = {l_star}");
    let below = diffs.iter().position(|&d| d < 1e-8).unwrap();
    assert!(below < 25);
    // the oracle sees the same floor
    for l in 20..=40 {
        let d = f(&fx["two_shell"]["fn"][l]) - f(&fx["f0"]["2"][l]);
        assert!(d.abs() < 1e-8);
    }
}

#[test]
fn interior_eigenvalue_of_potential_is_rejected() {
    // j_0(k sqrt(n) r) vanishes at the edge of a shell that fills almost all of the ball
    let edge = 1.0 - 1e-10;
    let n = (std::f64::consts::PI / (2.0 * edge)).powi(2);
    let p = RadialPotential::new(vec![edge], vec![n]).unwrap();
    assert!(matches!(dtn_potential(&p, 0, 2.0, 1.0), Err(NearFieldError::Pole { l: 0, .. })));
}

#[test]
fn exterior_positivity_from_hankel_modulus() {
    for k in [1.0, 2.0, 3.0] {
        for l in 0..=40 {
            let (h, _) = spherical_hankel1(l, k).unwrap();
            let fo = dtn_exterior(l, k, 1.0).unwrap();
            assert!(fo.im > 0.0);
            assert!(rel(fo.im, k / (k * k) / h.norm_sqr()) < 1e-12);
        }
    }
}

#[test]
fn diagonal_json_export() {
    let d = free_interior_diagonal(5, 2.0, 1.0).unwrap();
    let text = d.to_json();
    assert!(text.contains("\"l\": 5"));
    assert_eq!(HarmonicDiagonal::from_json(&text).unwrap(), d);
}
