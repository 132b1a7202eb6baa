//! Single-layer operators between the source surface S and the scatterer
//! boundary `|x| = a`:
//!
//! ```text
//! (L φ)(x)  = ∫_S  e^{-ik|x-y|}/|x-y| φ(y) dS_y,   x on ∂O
//! (L* μ)(x) = ∫_∂O e^{+ik|x-y|}/|x-y| μ(y) dS_y,   x on S
//! ```
//!
//! The kernels carry no `1/(4π)`; the normal derivative of the single layer
//! `∫ e^{ik|x-y|}/|x-y| μ dS` jumps by `-4πμ` across the surface.
//!
//! Functions on S are stored as quadrature-node values (inner product weighted
//! by the node weights); functions on ∂O as coefficients in the orthonormal
//! basis `Y_lm / a` (inner product = plain coefficient sum).

use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NearFieldError, Result};
use crate::linalg::{frobenius, singular_values, CMat, ZERO};
use crate::scene::SceneConfig;
use crate::specfun::{direction_angles, harmonic_count, lm_index, lm_iter, spherical_harmonics_all, RadialTable};
use crate::sphere::{dist, norm, sub, HarmonicProjector, Point, SphereGrid};

/// `e^{-ik r}` (incoming, converging onto the sources) or `e^{+ik r}` (outgoing).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelSign {
    Incoming,
    Outgoing,
}

impl KernelSign {
    fn factor(self) -> f64 {
        match self {
            KernelSign::Incoming => -1.0,
            KernelSign::Outgoing => 1.0,
        }
    }
}

/// `e^{±ik|x-y|}/|x-y|`.
#[inline]
pub fn kernel(sign: KernelSign, k: f64, x: Point, y: Point) -> Complex64 {
    let r = dist(x, y);
    Complex64::from_polar(1.0 / r, sign.factor() * k * r)
}

/// Descriptor of the discrete function space on either side of an operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FunctionSpace {
    /// Quadrature-node values on a surface.
    Nodes { surface: String, count: usize },
    /// Coefficients in the basis `Y_lm / radius` on a sphere.
    Harmonics { center: Point, radius: f64, l_max: usize },
    /// Coefficients on a union of spheres, concatenated in order.
    HarmonicsUnion { parts: Vec<FunctionSpace> },
}

impl FunctionSpace {
    pub fn dim(&self) -> usize {
        match self {
            FunctionSpace::Nodes { count, .. } => *count,
            FunctionSpace::Harmonics { l_max, .. } => harmonic_count(*l_max),
            FunctionSpace::HarmonicsUnion { parts } => parts.iter().map(|p| p.dim()).sum(),
        }
    }
}

/// A complex matrix with tagged row and column spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    pub row_space: FunctionSpace,
    pub col_space: FunctionSpace,
    pub matrix: CMat,
}

#[derive(Serialize, Deserialize)]
struct DenseOperatorJson {
    row_space: FunctionSpace,
    col_space: FunctionSpace,
    rows: usize,
    cols: usize,
    /// Row-major `[re, im]` pairs.
    data: Vec<[f64; 2]>,
}

impl DenseOperator {
    pub fn new(row_space: FunctionSpace, col_space: FunctionSpace, matrix: CMat) -> Result<Self> {
        if matrix.nrows() != row_space.dim() || matrix.ncols() != col_space.dim() {
            return Err(NearFieldError::Dimension(format!(
                "matrix {}x{} vs spaces {}x{}",
                matrix.nrows(),
                matrix.ncols(),
                row_space.dim(),
                col_space.dim()
            )));
        }
        Ok(Self {
            row_space,
            col_space,
            matrix,
        })
    }

    pub fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.matrix.ncols() {
            return Err(NearFieldError::Dimension(format!(
                "vector of length {} for operator with {} columns",
                x.len(),
                self.matrix.ncols()
            )));
        }
        let v = nalgebra::DVector::from_column_slice(x);
        Ok((&self.matrix * v).iter().copied().collect())
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let mut data = Vec::with_capacity(self.matrix.len());
        for r in 0..self.matrix.nrows() {
            for c in 0..self.matrix.ncols() {
                let z = self.matrix[(r, c)];
                data.push([z.re, z.im]);
            }
        }
        serde_json::to_value(DenseOperatorJson {
            row_space: self.row_space.clone(),
            col_space: self.col_space.clone(),
            rows: self.matrix.nrows(),
            cols: self.matrix.ncols(),
            data,
        })
        .expect("operator serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_json_value()).expect("operator serializes")
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self> {
        let doc: DenseOperatorJson = serde_json::from_value(value)?;
        if doc.data.len() != doc.rows * doc.cols {
            return Err(NearFieldError::Dimension(format!(
                "{} entries for a {}x{} operator",
                doc.data.len(),
                doc.rows,
                doc.cols
            )));
        }
        let matrix = CMat::from_fn(doc.rows, doc.cols, |r, c| {
            let [re, im] = doc.data[r * doc.cols + c];
            Complex64::new(re, im)
        });
        Self::new(doc.row_space, doc.col_space, matrix)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_value(serde_json::from_str(text)?)
    }
}

/// Node values of a density on S together with their quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceDensity {
    pub values: Vec<Complex64>,
    pub weights: Vec<f64>,
}

impl SourceDensity {
    pub fn new(values: Vec<Complex64>, weights: Vec<f64>) -> Result<Self> {
        if values.len() != weights.len() {
            return Err(NearFieldError::Dimension(format!(
                "{} values but {} weights",
                values.len(),
                weights.len()
            )));
        }
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(NearFieldError::Domain("density values must be finite".into()));
        }
        Ok(Self { values, weights })
    }

    pub fn zeros(weights: Vec<f64>) -> Self {
        Self {
            values: vec![ZERO; weights.len()],
            weights,
        }
    }

    /// `L₂(S)` norm under the quadrature.
    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| w * v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * s).collect(),
            weights: self.weights.clone(),
        }
    }
}

/// Harmonic coefficients of a density on ∂O (basis `Y_lm / a`).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryDensity {
    pub l_max: usize,
    pub coefficients: Vec<Complex64>,
}

impl BoundaryDensity {
    pub fn new(l_max: usize, coefficients: Vec<Complex64>) -> Result<Self> {
        if coefficients.len() != harmonic_count(l_max) {
            return Err(NearFieldError::Dimension(format!(
                "{} coefficients for l_max = {l_max}",
                coefficients.len()
            )));
        }
        Ok(Self { l_max, coefficients })
    }
}

/// Quadrature nodes on S and ∂O for a scene.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub config: SceneConfig,
    pub source_grid: SphereGrid,
    pub source_points: Vec<Point>,
    pub source_weights: Vec<f64>,
    pub boundary_grid: SphereGrid,
    boundary_points: Vec<Point>,
    projector: HarmonicProjector,
}

impl Discretization {
    pub fn new(config: &SceneConfig) -> Result<Self> {
        config.check_well_formed()?;
        config.check_geometry()?;
        let source_grid = config.source_grid();
        let boundary_grid = config.boundary_grid();
        Ok(Self {
            config: config.clone(),
            source_points: source_grid.points(),
            source_weights: source_grid.surface_weights(),
            boundary_points: boundary_grid.points(),
            projector: boundary_grid.projector(config.l_max),
            source_grid,
            boundary_grid,
        })
    }

    /// Same scene with a finer boundary quadrature (`factor` times the nodes per direction).
    pub fn with_boundary_refinement(config: &SceneConfig, factor: usize) -> Result<Self> {
        let mut d = Self::new(config)?;
        let g = SphereGrid::new([0.0; 3], config.a, d.boundary_grid.n_theta * factor, d.boundary_grid.n_phi * factor);
        d.boundary_points = g.points();
        d.projector = g.projector(config.l_max);
        d.boundary_grid = g;
        Ok(d)
    }

    pub fn n_sources(&self) -> usize {
        self.source_points.len()
    }

    pub fn n_harmonics(&self) -> usize {
        harmonic_count(self.config.l_max)
    }

    pub fn source_space(&self) -> FunctionSpace {
        FunctionSpace::Nodes {
            surface: "S".into(),
            count: self.n_sources(),
        }
    }

    pub fn boundary_space(&self) -> FunctionSpace {
        FunctionSpace::Harmonics {
            center: [0.0; 3],
            radius: self.config.a,
            l_max: self.config.l_max,
        }
    }

    pub fn density(&self, values: Vec<Complex64>) -> Result<SourceDensity> {
        SourceDensity::new(values, self.source_weights.clone())
    }

    /// Density with independent uniform real and imaginary parts in [-1, 1].
    pub fn random_density(&self, seed: u64) -> SourceDensity {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..self.n_sources())
            .map(|_| Complex64::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)))
            .collect();
        SourceDensity {
            values,
            weights: self.source_weights.clone(),
        }
    }

    /// Typical node spacing on S.
    pub fn source_spacing(&self) -> f64 {
        std::f64::consts::PI * self.config.rho / self.source_grid.n_theta as f64
    }

    /// Unweighted incoming-kernel projections: column `q` holds the
    /// coefficients of `x ↦ e^{-ik|x-y_q|}/|x-y_q|` on ∂O.
    fn incoming_projection(&self) -> CMat {
        let k = self.config.k;
        let a = self.config.a;
        let cols: Vec<Vec<Complex64>> = self
            .source_points
            .par_iter()
            .map(|&y| {
                let samples: Vec<Complex64> = self
                    .boundary_points
                    .iter()
                    .map(|&x| kernel(KernelSign::Incoming, k, x, y))
                    .collect();
                self.projector.project(&samples).into_iter().map(|c| c * a).collect()
            })
            .collect();
        CMat::from_fn(self.n_harmonics(), self.n_sources(), |r, c| cols[c][r])
    }
}

/// `L : L₂(S) → L₂(∂O)`.
pub fn assemble_l(disc: &Discretization) -> DenseOperator {
    let mut m = disc.incoming_projection();
    for (q, w) in disc.source_weights.iter().enumerate() {
        m.column_mut(q).scale_mut(*w);
    }
    DenseOperator::new(disc.boundary_space(), disc.source_space(), m).expect("consistent dimensions")
}

/// `L* : L₂(∂O) → L₂(S)`.
pub fn assemble_lstar(disc: &Discretization) -> DenseOperator {
    // conj(e^{-ikr}/r) = e^{ikr}/r, so L*[q, lm] = a Σ W G+(y_q, x) Y_lm(x)
    let m = disc.incoming_projection().adjoint();
    DenseOperator::new(disc.source_space(), disc.boundary_space(), m).expect("consistent dimensions")
}

/// `‖L* - W^{-1} L^H‖_F / ‖L‖_F`: the discrete form of `<Lφ, μ> = <φ, L*μ>`.
pub fn adjoint_residual(l: &DenseOperator, lstar: &DenseOperator, weights: &[f64]) -> f64 {
    let mut adj = l.matrix.adjoint();
    for (q, w) in weights.iter().enumerate() {
        adj.row_mut(q).scale_mut(1.0 / w);
    }
    frobenius(&(&lstar.matrix - adj)) / frobenius(&l.matrix)
}

/// Single-layer field `∫_∂O e^{ik|x-y|}/|x-y| μ(y) dS_y` at any point, by the
/// addition theorem (exact for band-limited μ).
pub fn single_layer_field(config: &SceneConfig, mu: &BoundaryDensity, x: Point) -> Complex64 {
    let k = config.k;
    let a = config.a;
    let r = norm(x);
    let (theta, phi) = if r > 0.0 { direction_angles(x) } else { (0.0, 0.0) };
    let ys = spherical_harmonics_all(mu.l_max, theta, phi);
    let inner = RadialTable::new(mu.l_max, k * r.min(a).max(1e-300)).expect("positive");
    let outer = RadialTable::new(mu.l_max, k * r.max(a)).expect("positive");
    let pref = Complex64::new(0.0, 4.0 * std::f64::consts::PI * k * a);
    let mut sum = ZERO;
    for (l, m) in lm_iter(mu.l_max) {
        let radial = if r < a {
            inner.j[l] * outer.h(l)
        } else {
            outer.h(l) * inner.j[l]
        };
        sum += mu.coefficients[lm_index(l, m)] * radial * ys[lm_index(l, m)];
    }
    pref * sum
}

/// `u^inc(x) = ∫_S e^{-ik|x-y|}/|x-y| φ(y) dS_y` by the S quadrature.
pub fn evaluate_incident_field(disc: &Discretization, phi: &SourceDensity, x: Point) -> Result<Complex64> {
    evaluate_source_field(disc, phi, x, KernelSign::Incoming)
}

/// Either-kernel potential of a density on S.
pub fn evaluate_source_field(disc: &Discretization, phi: &SourceDensity, x: Point, sign: KernelSign) -> Result<Complex64> {
    if phi.values.len() != disc.n_sources() {
        return Err(NearFieldError::Dimension("density does not match the S quadrature".into()));
    }
    let d_center = dist(x, disc.config.center);
    if (d_center - disc.config.rho).abs() < disc.source_spacing() {
        return Err(NearFieldError::Geometry(format!(
            "evaluation point within {:.3e} of S (node spacing {:.3e})",
            (d_center - disc.config.rho).abs(),
            disc.source_spacing()
        )));
    }
    let k = disc.config.k;
    Ok(disc
        .source_points
        .iter()
        .zip(&phi.values)
        .zip(&phi.weights)
        .map(|((&y, v), w)| kernel(sign, k, x, y) * v * *w)
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularValueReport {
    /// Singular values of `L` as a map from weighted `L₂(S)`.
    pub singular_values: Vec<f64>,
    pub smallest: f64,
    /// Count above `1e-14 σ_max`.
    pub numerical_rank: usize,
    /// Slope of `ln σ_i` against `i` over the resolved part of the spectrum.
    pub decay_slope: f64,
    /// Correlation of that fit (close to -1 for exponential decay).
    pub decay_correlation: f64,
    /// Slope of `ln σ_i` against `sqrt(i)`, a proxy for the harmonic degree
    /// (degree `p` owns indices up to `(p+1)²`).
    pub degree_decay_slope: f64,
    pub degree_decay_correlation: f64,
    /// Smallest gain of `L` on densities of degree `<= low_order_degree`
    /// about the center of B, relative to `σ_max`.
    pub low_order_gain: f64,
    pub low_order_degree: usize,
}

/// Numerical counterpart of the dense-range statement: spectrum of `L`.
pub fn range_diagnostics(l: &DenseOperator, disc: &Discretization) -> SingularValueReport {
    let mut scaled = l.matrix.clone();
    for (q, w) in disc.source_weights.iter().enumerate() {
        scaled.column_mut(q).scale_mut(1.0 / w.sqrt());
    }
    let s = singular_values(&scaled);
    let s0 = s[0];
    let numerical_rank = s.iter().filter(|&&v| v > 1e-14 * s0).count();
    let resolved: Vec<(f64, f64)> = s
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 1e-13 * s0)
        .map(|(i, &v)| (i as f64, v.ln()))
        .collect();
    let (slope, corr) = linear_fit(&resolved);
    let by_degree: Vec<(f64, f64)> = resolved.iter().map(|&(i, v)| (i.sqrt(), v)).collect();
    let (degree_slope, degree_corr) = linear_fit(&by_degree);

    // densities Y_lm(direction from c)/rho, orthonormal in L₂(S)
    let p = 2;
    let rho = disc.config.rho;
    let basis = CMat::from_fn(disc.n_sources(), harmonic_count(p), |q, i| {
        let (t, ph) = direction_angles(sub(disc.source_points[q], disc.config.center));
        spherical_harmonics_all(p, t, ph)[i] / rho
    });
    let mut weighted_basis = basis;
    for (q, w) in disc.source_weights.iter().enumerate() {
        weighted_basis.row_mut(q).scale_mut(*w);
    }
    // L φ with φ = basis column; L already carries the weights, so undo them
    let mut lb = CMat::zeros(l.matrix.nrows(), weighted_basis.ncols());
    let mut unweighted = l.matrix.clone();
    for (q, w) in disc.source_weights.iter().enumerate() {
        unweighted.column_mut(q).scale_mut(1.0 / w);
    }
    lb.gemm(Complex64::new(1.0, 0.0), &unweighted, &weighted_basis, ZERO);
    let gains = singular_values(&lb);
    let low = gains.last().copied().unwrap_or(0.0) / s0;

    SingularValueReport {
        smallest: *s.last().unwrap_or(&0.0),
        singular_values: s,
        numerical_rank,
        decay_slope: slope,
        decay_correlation: corr,
        degree_decay_slope: degree_slope,
        degree_decay_correlation: degree_corr,
        low_order_gain: low,
        low_order_degree: p,
    }
}

fn linear_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    if n < 2.0 {
        return (0.0, 0.0);
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    (sxy / sxx, sxy / (sxx * syy).sqrt())
}
