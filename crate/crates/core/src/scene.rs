//! Scene geometry (scatterer ball at the origin, source ball B with surface S),
//! wavenumber, discretization, the piecewise-constant radial potential, and
//! checks of the non-eigenvalue and separation assumptions.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::dtn;
use crate::error::{NearFieldError, Result};
use crate::specfun::spherical_bessel_j_array;
use crate::sphere::{norm, Point, SphereGrid};

/// Default proximity margin (in units of `ka`) to the nearest Bessel zero.
pub const DEFAULT_EIGEN_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// Wavenumber `k = sqrt(λ)`.
    pub k: f64,
    /// Radius of the scatterer ball, centered at the origin.
    pub a: f64,
    /// Radius of the source ball B.
    pub rho: f64,
    /// Center of B.
    pub center: Point,
    pub l_max: usize,
    /// Requested number of quadrature nodes on S.
    pub n_quad_s: usize,
    /// The bounding-ball parameter: the scatterer lies in `|x| < 1/eps_ball`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_ball: Option<f64>,
}

impl SceneConfig {
    /// The reference configuration used throughout the tests.
    pub fn default_scene() -> Self {
        Self {
            k: 2.0,
            a: 1.0,
            rho: 0.5,
            center: [3.0, 0.0, 0.0],
            l_max: 25,
            n_quad_s: 600,
            eps_ball: None,
        }
    }

    pub fn center_distance(&self) -> f64 {
        norm(self.center)
    }

    /// `1/eps_ball`, defaulting to one unit beyond the far side of B.
    pub fn bounding_radius(&self) -> f64 {
        match self.eps_ball {
            Some(e) => 1.0 / e,
            None => self.center_distance() + self.rho + 1.0,
        }
    }

    /// `(n_theta, n_phi)` with `n_theta * n_phi ≈ n_quad_s` and `n_phi ≈ 1.5 n_theta`.
    pub fn source_grid_shape(&self) -> (usize, usize) {
        let n = self.n_quad_s.max(2);
        let n_theta = ((2.0 * n as f64 / 3.0).sqrt().ceil() as usize).max(1);
        let n_phi = n.div_ceil(n_theta).max(1);
        (n_theta, n_phi)
    }

    /// Quadrature grid on S.
    pub fn source_grid(&self) -> SphereGrid {
        let (nt, np) = self.source_grid_shape();
        SphereGrid::new(self.center, self.rho, nt, np)
    }

    /// Quadrature grid on the scatterer boundary, exact for degree `2 l_max + 1`.
    pub fn boundary_grid(&self) -> SphereGrid {
        SphereGrid::for_degree([0.0; 3], self.a, self.l_max)
    }

    pub fn check_well_formed(&self) -> Result<()> {
        let finite = [self.k, self.a, self.rho].iter().all(|v| v.is_finite())
            && self.center.iter().all(|v| v.is_finite());
        if !finite || self.k <= 0.0 || self.a <= 0.0 || self.rho <= 0.0 {
            return Err(NearFieldError::Config("k, a, rho must be positive and finite".into()));
        }
        if self.n_quad_s < 4 {
            return Err(NearFieldError::Config("n_quad_s must be at least 4".into()));
        }
        if let Some(e) = self.eps_ball {
            if !(e > 0.0 && e.is_finite()) {
                return Err(NearFieldError::Config("eps_ball must be positive".into()));
            }
        }
        Ok(())
    }

    /// Hard failure when the two balls are not strictly separated.
    pub fn check_geometry(&self) -> Result<()> {
        let d = self.center_distance();
        if d <= self.a + self.rho {
            return Err(NearFieldError::Geometry(format!(
                "balls overlap: |c| = {d} <= a + rho = {}",
                self.a + self.rho
            )));
        }
        Ok(())
    }
}

/// Piecewise-constant radial refraction index. Shell `j` covers
/// `[r_{j-1}, r_j)` with `r_0 = 0`; the value is 1 for `r >= r_J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialPotential {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl RadialPotential {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let p = Self { breakpoints, values };
        p.check()?;
        Ok(p)
    }

    /// `n ≡ 1`.
    pub fn free() -> Self {
        Self {
            breakpoints: vec![],
            values: vec![],
        }
    }

    /// Two shells: 1.5 on [0, 0.4), 0.8 on [0.4, 0.7).
    pub fn default_two_shell() -> Self {
        Self {
            breakpoints: vec![0.4, 0.7],
            values: vec![1.5, 0.8],
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.breakpoints.len() != self.values.len() {
            return Err(NearFieldError::Config(format!(
                "{} breakpoints but {} values",
                self.breakpoints.len(),
                self.values.len()
            )));
        }
        let mut prev = 0.0;
        for &r in &self.breakpoints {
            if !(r > prev) || !r.is_finite() {
                return Err(NearFieldError::Config("breakpoints must be positive and increasing".into()));
            }
            prev = r;
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(NearFieldError::Config("potential values must be finite".into()));
        }
        Ok(())
    }

    pub fn shell_count(&self) -> usize {
        self.breakpoints.len()
    }

    /// Outer edge of the support of `n - 1` (0 for the free model).
    pub fn support_radius(&self) -> f64 {
        self.breakpoints.last().copied().unwrap_or(0.0)
    }

    pub fn is_free(&self) -> bool {
        self.values.iter().all(|&v| v == 1.0)
    }

    /// `n(r)`; breakpoints belong to the outer shell.
    pub fn evaluate(&self, r: f64) -> f64 {
        for (rb, v) in self.breakpoints.iter().zip(&self.values) {
            if r < *rb {
                return *v;
            }
        }
        1.0
    }

    /// Value at the origin (innermost shell).
    pub fn core_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(1.0)
    }
}

pub fn evaluate_potential(potential: &RadialPotential, r: f64) -> f64 {
    potential.evaluate(r)
}

/// One line of a [`ValidationReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    pub margin: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<4} {:<28} margin={:<12.4e} {}",
                if c.passed { "ok" } else { "FAIL" },
                c.name,
                c.margin,
                c.detail
            )?;
        }
        Ok(())
    }
}

/// Distance from `x` to the nearest positive zero of any `j_l`, `l <= l_max`,
/// together with the degree attaining it.
pub fn nearest_bessel_zero(l_max: usize, x: f64) -> (f64, usize) {
    let lo = (x - 4.0).max(1e-3);
    let hi = x + 4.0;
    let steps = (((hi - lo) / 0.02).ceil() as usize).max(1);
    let dx = (hi - lo) / steps as f64;
    let mut best = (f64::INFINITY, 0);
    let eval = |t: f64| spherical_bessel_j_array(l_max, t).expect("positive argument");
    let mut prev = eval(lo);
    let mut t_prev = lo;
    for s in 1..=steps {
        let t = lo + dx * s as f64;
        let cur = eval(t);
        for l in 0..=l_max {
            let exact_prev = prev[l] == 0.0;
            if exact_prev {
                let d = (t_prev - x).abs();
                if d < best.0 {
                    best = (d, l);
                }
            }
            if prev[l] * cur[l] < 0.0 {
                let z = bisect_zero(l, t_prev, t);
                let d = (z - x).abs();
                if d < best.0 {
                    best = (d, l);
                }
            }
        }
        prev = cur;
        t_prev = t;
    }
    best
}

fn bisect_zero(l: usize, mut lo: f64, mut hi: f64) -> f64 {
    let f = |t: f64| spherical_bessel_j_array(l, t).expect("positive argument")[l];
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if flo * fm < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
        if hi - lo < 1e-15 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Check the standing assumptions of the scene. Overlapping balls are a hard
/// error; every other assumption is reported with its numerical margin.
pub fn validate_scene(config: &SceneConfig, potential: &RadialPotential) -> Result<ValidationReport> {
    validate_scene_with_margin(config, potential, DEFAULT_EIGEN_MARGIN)
}

pub fn validate_scene_with_margin(
    config: &SceneConfig,
    potential: &RadialPotential,
    eig_margin: f64,
) -> Result<ValidationReport> {
    config.check_well_formed()?;
    potential.check()?;
    config.check_geometry()?;
    let mut checks = Vec::new();

    let sep = config.center_distance() - config.a - config.rho;
    checks.push(AssumptionCheck {
        name: "separation".into(),
        passed: true,
        margin: sep,
        detail: "B lies strictly outside the scatterer ball".into(),
    });

    let (d_o, l_o) = nearest_bessel_zero(config.l_max, config.k * config.a);
    checks.push(AssumptionCheck {
        name: "dirichlet_nonresonance_O".into(),
        passed: d_o >= eig_margin,
        margin: d_o,
        detail: format!("ka = {} nearest zero of j_{l_o}", config.k * config.a),
    });

    let (d_b, l_b) = nearest_bessel_zero(config.l_max, config.k * config.rho);
    checks.push(AssumptionCheck {
        name: "dirichlet_nonresonance_B".into(),
        passed: d_b >= eig_margin,
        margin: d_b,
        detail: format!("k rho = {} nearest zero of j_{l_b}", config.k * config.rho),
    });

    let support = config.a - potential.support_radius();
    checks.push(AssumptionCheck {
        name: "potential_support".into(),
        passed: support > 0.0,
        margin: support,
        detail: "support of n - 1 strictly inside the scatterer ball".into(),
    });

    let pole = dtn::potential_pole_margin(potential, config.l_max, config.k, config.a);
    let (margin, detail) = match &pole {
        Ok((m, l)) if *m < dtn::POLE_THRESHOLD => (
            *m,
            NearFieldError::Pole {
                l: *l,
                detail: format!("|w(a)|/max|w| = {m:e}: interior eigenvalue of the radial problem"),
            }
            .to_string(),
        ),
        Ok((m, l)) => (*m, format!("smallest |w(a)|/max|w| at degree {l}")),
        Err(e) => (0.0, e.to_string()),
    };
    checks.push(AssumptionCheck {
        name: "schroedinger_nonresonance".into(),
        passed: pole.is_ok() && margin >= dtn::POLE_THRESHOLD,
        margin,
        detail,
    });

    Ok(ValidationReport { checks })
}

/// The TOML scene file: `[scene]` and `[potential]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub scene: SceneConfig,
    #[serde(default = "RadialPotential::free")]
    pub potential: RadialPotential,
}

impl SceneFile {
    pub fn default_scene() -> Self {
        Self {
            scene: SceneConfig::default_scene(),
            potential: RadialPotential::default_two_shell(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: SceneFile = toml::from_str(text).map_err(|e| NearFieldError::Parse(format_toml_error(text, &e)))?;
        file.scene.check_well_formed()?;
        file.potential.check()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }
}

fn format_toml_error(text: &str, e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            format!("line {line}: {}", e.message())
        }
        None => e.message().to_string(),
    }
}
