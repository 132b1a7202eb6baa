mod common;

use common::{default_disc, small_scene, two_shell};
use nearfield_core::emission::*;
use nearfield_core::error::NearFieldError;
use nearfield_core::forward::{incident_coefficients, scatter, scattering_ratios};
use nearfield_core::layer::{Discretization, KernelSign, SourceDensity};
use nearfield_core::scene::SceneConfig;
use nearfield_core::specfun::{harmonic_count, lm_index};
use nearfield_core::Complex64;
use std::f64::consts::PI;

fn sphere_point(center: [f64; 3], radius: f64, i: usize) -> [f64; 3] {
    let t = (i as f64 + 0.5) / 20.0 * PI;
    let p = 2.4 * i as f64;
    [
        center[0] + radius * t.sin() * p.cos(),
        center[1] + radius * t.sin() * p.sin(),
        center[2] + radius * t.cos(),
    ]
}

#[test]
fn shield_expansion_matches_kernel_quadrature() {
    let cfg = small_scene();
    let disc = Discretization::new(&cfg).unwrap();
    let mut ec = EmissionConfig::default_for(&cfg);
    // sources sit at >= 2.5 from the origin, radius 1.75: error ~ 0.7^l
    ec.l_shield = 64;
    ec.quadrature_degree = 64;
    let em = Emitter::new(&disc, &ec).unwrap();
    let phi = disc.random_density(5);
    let coef = em.ltilde.apply(&phi.values).unwrap();
    let Shield::EnclosingSphere { radius } = ec.shield else { unreachable!() };
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..20 {
        let x = sphere_point([0.0; 3], radius, i);
        let got = evaluate_shield_expansion(&coef, [0.0; 3], radius, ec.l_shield, x);
        let want = kernel_sum(&disc, &phi, x, KernelSign::Incoming);
        worst = worst.max((got - want).norm());
        scale = scale.max(want.norm());
        // the outgoing counterpart is the conjugate-kernel trace
        let out = em.ltilde_conj.apply(&phi.values).unwrap();
        let got_out = evaluate_shield_expansion(&out, [0.0; 3], radius, ec.l_shield, x);
        let want_out = kernel_sum(&disc, &phi, x, KernelSign::Outgoing);
        worst = worst.max((got_out - want_out).norm());
    }
    println!("shield expansion vs quadrature: {:e}", worst / scale);
    assert!(worst < 1e-9 * scale);
}

fn decay_slope(coef: &[Complex64], offset: usize) -> f64 {
    // fitted slope of ln ‖block_l‖ over l = 2..12
    let pts: Vec<(f64, f64)> = (2..=12)
        .map(|l| {
            let e: f64 = (-(l as i64)..=l as i64).map(|m| coef[offset + lm_index(l, m)].norm_sqr()).sum();
            (l as f64, 0.5 * e.ln())
        })
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn annulus_outer_trace_decays_faster() {
    let cfg = small_scene();
    let disc = Discretization::new(&cfg).unwrap();
    let mut ec = EmissionConfig::annulus(&cfg, 0.05);
    ec.l_shield = 14;
    let em = Emitter::new(&disc, &ec).unwrap();
    let coef = em.ltilde.apply(&disc.random_density(9).values).unwrap();
    let per = harmonic_count(14);
    let (outer, inner) = (decay_slope(&coef, 0), decay_slope(&coef, per));
    println!("decay slopes: outer {outer:.4}, inflated ball {inner:.4}");
    // geometric rates: ln(3.5/4.5) = -0.25 and ln(0.5/0.55) = -0.095
    assert!(outer < inner);
    assert!(outer < -0.15 && inner < 0.0);
}

struct Measured {
    disc: Discretization,
    phi: SourceDensity,
    target: Vec<Complex64>,
}

impl Measured {
    fn new() -> Self {
        let disc = default_disc();
        let phi = disc.random_density(11);
        let target = respond(&disc, &phi, KernelSign::Incoming);
        Self { disc, phi, target }
    }
}

fn respond(disc: &Discretization, psi: &SourceDensity, sign: KernelSign) -> Vec<Complex64> {
    let cfg = &disc.config;
    let tau = scattering_ratios(&two_shell(), cfg.l_max, cfg.k, cfg.a).unwrap();
    let inc = incident_coefficients(cfg.k, cfg.l_max, &disc.source_points, &psi.weights, &psi.values, sign);
    scatter(cfg, &tau, inc, &disc.source_points).unwrap().on_sources
}

#[test]
fn tikhonov_path_reaches_the_target() {
    let m = Measured::new();
    let ec = EmissionConfig::default_for(&m.disc.config);
    let em = Emitter::new(&m.disc, &ec).unwrap();
    let path = regularization_path(&em, &m.phi, &m.target, |psi| Ok(respond(&m.disc, psi, KernelSign::Outgoing))).unwrap();
    assert_eq!(path.steps.len(), DEFAULT_PATH_STEPS);
    assert!(path.is_monotone());
    let hit = path
        .steps
        .iter()
        .find(|s| s.residual_h32 < 1e-3 * path.target_norm)
        .expect("relative residual 1e-3 somewhere on the path");
    println!("relative residual below 1e-3 from step {}", hit.step);
    // spectral residuals agree with direct evaluation
    for s in path.steps.iter().step_by(6) {
        let direct = em.residual(&s.psi, &m.phi).unwrap();
        assert!((direct - s.residual_h32).abs() < 1e-8 * path.target_norm);
    }
    let last = path.final_step().unwrap();
    let e = last.nearfield_error.unwrap();
    println!("final near-field error {e:e}");
    assert!(e < 1e-2);
    let c = path.stability_constants();
    println!("stability constants {c:.3?}");
    assert_eq!(c.len(), path.steps.len());
    assert!(c.iter().all(|v| v.is_finite() && *v > 0.0));
    assert!(path.to_csv().starts_with("n,alpha_or_rank,residual_h32,nearfield_error\n"));
}

#[test]
fn truncated_svd_path_is_monotone() {
    let cfg = small_scene();
    let disc = Discretization::new(&cfg).unwrap();
    let mut ec = EmissionConfig::default_for(&cfg);
    ec.regularization = Regularization::TruncatedSvd {
        ranks: vec![1, 2, 4, 8, 12, 16, 20, 25],
    };
    let em = Emitter::new(&disc, &ec).unwrap();
    let steps = em.synthesize_path(&disc.random_density(3)).unwrap();
    assert!(steps.windows(2).all(|w| w[1].residual_h32 <= w[0].residual_h32));
    assert_eq!(steps.last().unwrap().effective_rank, 25);
    let sv = em.singular_values();
    assert!(sv.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn zero_density_synthesizes_zero() {
    let disc = Discretization::new(&small_scene()).unwrap();
    let em = Emitter::new(&disc, &EmissionConfig::default_for(&disc.config)).unwrap();
    let zero = SourceDensity::zeros(disc.source_weights.clone());
    for s in em.synthesize_path(&zero).unwrap() {
        assert_eq!(s.residual_h32, 0.0);
        assert!(s.psi.values.iter().all(|v| v.norm() == 0.0));
    }
    assert_eq!(em.target_norm(&zero).unwrap(), 0.0);
}

#[test]
fn shield_geometry_is_enforced() {
    let cfg = SceneConfig {
        l_max: 4,
        n_quad_s: 30,
        ..SceneConfig::default_scene()
    };
    let disc = Discretization::new(&cfg).unwrap();
    for radius in [0.9, 1.0, 2.5, 3.0] {
        let ec = EmissionConfig {
            shield: Shield::EnclosingSphere { radius },
            ..EmissionConfig::default_for(&cfg)
        };
        assert!(matches!(Emitter::new(&disc, &ec), Err(NearFieldError::Geometry(_))), "radius {radius}");
    }
    // inflation reaching the scatterer or the outer sphere
    for (r_outer, inflate) in [(4.5, 1.6), (3.6, 0.2), (4.5, 0.0)] {
        let ec = EmissionConfig {
            shield: Shield::Annulus { r_outer, inflate },
            ..EmissionConfig::default_for(&cfg)
        };
        assert!(matches!(Emitter::new(&disc, &ec), Err(NearFieldError::Geometry(_))), "{r_outer} {inflate}");
    }
    let empty = EmissionConfig {
        regularization: Regularization::Tikhonov { alphas: vec![] },
        ..EmissionConfig::default_for(&cfg)
    };
    assert!(matches!(Emitter::new(&disc, &empty), Err(NearFieldError::Config(_))));
}
