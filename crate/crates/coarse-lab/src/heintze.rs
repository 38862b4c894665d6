//! Heintze-group data: derivation specs on abelian / Heisenberg nilpotent
//! parts, the homogeneous boundary quasimetrics they induce, box-counting
//! dimension estimation, line-counting exponents, and the dimension
//! invariants that classify rank-one symmetric spaces.

use crate::numerics::linear_fit;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum HeintzeError {
    #[error("eigenvalues must be positive, got {0}")]
    NonPositiveEigenvalue(f64),
    #[error("operation requires a normalized spec (min eigenvalue 1)")]
    NotNormalized,
    #[error("invalid Heintze spec: {0}")]
    InvalidSpec(String),
    #[error("box counting needs at least 4 scales, got {0}")]
    InsufficientScales(usize),
    #[error("line direction must be an eigenvector of eigenvalue 1, got {0}")]
    DirectionNotUnitEigenvector(f64),
    #[error("invalid symmetric-space id: {0}")]
    InvalidId(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NType {
    /// Abelian N = R^k.
    Abelian { dim: usize },
    /// Heisenberg group of dimension 2m + 1, coordinates (v_1..v_2m, z).
    Heisenberg { m: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JordanBlock {
    pub eigenvalue: f64,
    pub size: usize,
}

/// A purely real Heintze group S = N x_alpha R described by the nilpotent
/// part and the Jordan data of the derivation alpha (real parts only).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeintzeSpec {
    pub n_type: NType,
    pub blocks: Vec<JordanBlock>,
    pub normalized: bool,
}

impl HeintzeSpec {
    pub fn abelian_diag(eigenvalues: &[f64]) -> Result<Self, HeintzeError> {
        let blocks = eigenvalues
            .iter()
            .map(|&e| JordanBlock {
                eigenvalue: e,
                size: 1,
            })
            .collect();
        Self::abelian(blocks)
    }

    pub fn abelian(blocks: Vec<JordanBlock>) -> Result<Self, HeintzeError> {
        if blocks.is_empty() {
            return Err(HeintzeError::InvalidSpec("empty derivation".into()));
        }
        let dim = blocks.iter().map(|b| b.size).sum();
        let spec = HeintzeSpec {
            n_type: NType::Abelian { dim },
            blocks,
            normalized: false,
        };
        spec.validated()
    }

    /// Heisenberg(m) with the grading-compatible derivation: eigenvalue `a`
    /// on the 2m horizontal coordinates and 2a on the center.
    pub fn heisenberg(m: usize, a: f64) -> Result<Self, HeintzeError> {
        if m == 0 {
            return Err(HeintzeError::InvalidSpec("Heisenberg needs m >= 1".into()));
        }
        let mut blocks = vec![
            JordanBlock {
                eigenvalue: a,
                size: 1,
            };
            2 * m
        ];
        blocks.push(JordanBlock {
            eigenvalue: 2.0 * a,
            size: 1,
        });
        let spec = HeintzeSpec {
            n_type: NType::Heisenberg { m },
            blocks,
            normalized: false,
        };
        spec.validated()
    }

    fn validated(mut self) -> Result<Self, HeintzeError> {
        for b in &self.blocks {
            if !(b.eigenvalue > 0.0) || !b.eigenvalue.is_finite() {
                return Err(HeintzeError::NonPositiveEigenvalue(b.eigenvalue));
            }
            if b.size == 0 {
                return Err(HeintzeError::InvalidSpec("zero-size Jordan block".into()));
            }
        }
        let total: usize = self.blocks.iter().map(|b| b.size).sum();
        match self.n_type {
            NType::Abelian { dim } => {
                if total != dim {
                    return Err(HeintzeError::InvalidSpec(format!(
                        "block sizes sum to {total}, expected {dim}"
                    )));
                }
            }
            NType::Heisenberg { m } => {
                if total != 2 * m + 1 {
                    return Err(HeintzeError::InvalidSpec(format!(
                        "block sizes sum to {total}, expected {}",
                        2 * m + 1
                    )));
                }
                let a = self.blocks[0].eigenvalue;
                let horizontal_ok = self.blocks[..2 * m]
                    .iter()
                    .all(|b| b.size == 1 && (b.eigenvalue - a).abs() < 1e-12);
                let center = self.blocks[2 * m];
                if !horizontal_ok || center.size != 1 || (center.eigenvalue - 2.0 * a).abs() > 1e-12
                {
                    return Err(HeintzeError::InvalidSpec(
                        "Heisenberg derivation must be a(1,..,1;2) on (v;z)".into(),
                    ));
                }
            }
        }
        let min = self
            .blocks
            .iter()
            .map(|b| b.eigenvalue)
            .fold(f64::INFINITY, f64::min);
        self.normalized = (min - 1.0).abs() < 1e-12;
        Ok(self)
    }

    pub fn dim_n(&self) -> usize {
        self.blocks.iter().map(|b| b.size).sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.eigenvalue)
            .fold(f64::INFINITY, f64::min)
    }

    /// Eigenvalue per coordinate, in block order.
    pub fn coordinate_eigenvalues(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim_n());
        for b in &self.blocks {
            out.extend(std::iter::repeat(b.eigenvalue).take(b.size));
        }
        out
    }

    pub fn is_semisimple(&self) -> bool {
        self.blocks.iter().all(|b| b.size == 1)
    }
}

pub fn normalize(spec: &HeintzeSpec) -> Result<HeintzeSpec, HeintzeError> {
    let min = spec.min_eigenvalue();
    if !(min > 0.0) {
        return Err(HeintzeError::NonPositiveEigenvalue(min));
    }
    let blocks = spec
        .blocks
        .iter()
        .map(|b| JordanBlock {
            eigenvalue: b.eigenvalue / min,
            size: b.size,
        })
        .collect();
    HeintzeSpec {
        n_type: spec.n_type,
        blocks,
        normalized: false,
    }
    .validated()
}

/// p = tr(alpha), the volume-growth exponent of the boundary gauge.
pub fn homogeneous_dimension(spec: &HeintzeSpec) -> Result<f64, HeintzeError> {
    if !spec.normalized {
        return Err(HeintzeError::NotNormalized);
    }
    Ok(spec
        .blocks
        .iter()
        .map(|b| b.eigenvalue * b.size as f64)
        .sum())
}

/// Carnot type: alpha acts as the identity, semisimply, on the
/// abelianization of N.
pub fn is_carnot_type(spec: &HeintzeSpec) -> Result<bool, HeintzeError> {
    if !spec.normalized {
        return Err(HeintzeError::NotNormalized);
    }
    match spec.n_type {
        NType::Abelian { .. } => Ok(spec.is_semisimple()
            && spec
                .blocks
                .iter()
                .all(|b| (b.eigenvalue - 1.0).abs() < 1e-12)),
        NType::Heisenberg { m } => {
            // the abelianization is the horizontal layer
            Ok(spec.blocks[..2 * m]
                .iter()
                .all(|b| b.size == 1 && (b.eigenvalue - 1.0).abs() < 1e-12))
        }
    }
}

/// ln of the homogeneous quasimetric; -inf when the points coincide.
/// Working in log scale keeps the log-model distance formula stable at
/// separations far beyond e^{+-700}.
pub fn log_homogeneous_quasimetric(spec: &HeintzeSpec, n1: &[f64], n2: &[f64]) -> f64 {
    assert_eq!(n1.len(), spec.dim_n(), "coordinate length mismatch");
    assert_eq!(n2.len(), spec.dim_n(), "coordinate length mismatch");
    match spec.n_type {
        NType::Abelian { .. } => {
            if spec.is_semisimple() {
                let mut best = f64::NEG_INFINITY;
                for (i, lambda) in spec.coordinate_eigenvalues().iter().enumerate() {
                    let d = (n1[i] - n2[i]).abs();
                    if d > 0.0 {
                        best = best.max(d.ln() / lambda);
                    }
                }
                best
            } else {
                let delta: Vec<f64> = n1.iter().zip(n2).map(|(a, b)| a - b).collect();
                log_jordan_gauge(spec, &delta)
            }
        }
        NType::Heisenberg { m } => {
            let a = spec.blocks[0].eigenvalue;
            // group difference g^{-1} h = (v' - v, z' - z - omega(v, v')/2)
            let dv: Vec<f64> = (0..2 * m).map(|i| n2[i] - n1[i]).collect();
            let zt = n2[2 * m] - n1[2 * m] - 0.5 * symplectic(&n1[..2 * m], &n2[..2 * m]);
            let g = log_koranyi_gauge(&dv, zt);
            // eigenvalue a on the horizontal layer scales the gauge by e^{a s}
            g / a
        }
    }
}

pub fn homogeneous_quasimetric(spec: &HeintzeSpec, n1: &[f64], n2: &[f64]) -> f64 {
    log_homogeneous_quasimetric(spec, n1, n2).exp()
}

fn symplectic(v: &[f64], w: &[f64]) -> f64 {
    let m = v.len() / 2;
    (0..m)
        .map(|i| v[2 * i] * w[2 * i + 1] - v[2 * i + 1] * w[2 * i])
        .sum()
}

/// ln of the Koranyi gauge (|v|^4 + z^2)^{1/4}, overflow-safe.
fn log_koranyi_gauge(v: &[f64], z: f64) -> f64 {
    let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = vnorm.max(z.abs().sqrt());
    if scale == 0.0 {
        return f64::NEG_INFINITY;
    }
    let a = vnorm / scale;
    let b = z / (scale * scale);
    scale.ln() + 0.25 * (a.powi(4) + b * b).ln()
}

/// Gauge for a non-semisimple derivation: the unique s with
/// ||exp(-s alpha) w||_inf = 1, found by bisection; returns s = ln gauge.
fn log_jordan_gauge(spec: &HeintzeSpec, delta: &[f64]) -> f64 {
    if delta.iter().all(|&d| d == 0.0) {
        return f64::NEG_INFINITY;
    }
    let phi = |s: f64| -> f64 {
        // ln ||exp(-s alpha) delta||_inf, blockwise
        let mut best = f64::NEG_INFINITY;
        let mut offset = 0;
        for b in &spec.blocks {
            for i in 0..b.size {
                // (exp(-sN) w)_i = sum_j (-s)^j / j! w_{i+j}
                let mut comp = 0.0;
                let mut coeff = 1.0;
                for j in 0..(b.size - i) {
                    if j > 0 {
                        coeff *= -s / j as f64;
                    }
                    comp += coeff * delta[offset + i + j];
                }
                if comp != 0.0 {
                    best = best.max(comp.abs().ln() - s * b.eigenvalue);
                }
            }
            offset += b.size;
        }
        best
    };
    // bracket the root of phi(s) = 0; phi decreases through 0
    let mut lo = -1.0;
    let mut hi = 1.0;
    let mut guard = 0;
    while phi(lo) <= 0.0 {
        lo *= 2.0;
        guard += 1;
        if guard > 600 {
            break;
        }
    }
    guard = 0;
    while phi(hi) > 0.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 600 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Image of N-coordinates under the dilation by e^{t alpha} (the conjugation
/// action of the R factor).
pub fn dilate(spec: &HeintzeSpec, t: f64, n: &[f64]) -> Vec<f64> {
    match spec.n_type {
        NType::Abelian { .. } => {
            let mut out = vec![0.0; n.len()];
            let mut offset = 0;
            for b in &spec.blocks {
                let scale = (t * b.eigenvalue).exp();
                for i in 0..b.size {
                    // (exp(tN) w)_i = sum_j t^j / j! w_{i+j}
                    let mut comp = 0.0;
                    let mut coeff = 1.0;
                    for j in 0..(b.size - i) {
                        if j > 0 {
                            coeff *= t / j as f64;
                        }
                        comp += coeff * n[offset + i + j];
                    }
                    out[offset + i] = scale * comp;
                }
                offset += b.size;
            }
            out
        }
        NType::Heisenberg { m } => {
            let a = spec.blocks[0].eigenvalue;
            let mut out = Vec::with_capacity(2 * m + 1);
            for v in &n[..2 * m] {
                out.push(v * (t * a).exp());
            }
            out.push(n[2 * m] * (2.0 * t * a).exp());
            out
        }
    }
}

/// Largest observed rho(a,c) / max(rho(a,b), rho(b,c)) over seeded triples.
pub fn measure_quasi_ultrametric_constant(
    spec: &HeintzeSpec,
    trials: usize,
    half_width: f64,
    seed: u64,
) -> f64 {
    use rand::Rng;
    let mut rng = crate::rng::rng_from_seed(seed);
    let dim = spec.dim_n();
    let sample = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..dim)
            .map(|_| rng.random_range(-half_width..half_width))
            .collect()
    };
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let a = sample(&mut rng);
        let b = sample(&mut rng);
        let c = sample(&mut rng);
        let ac = homogeneous_quasimetric(spec, &a, &c);
        let ab = homogeneous_quasimetric(spec, &a, &b);
        let bc = homogeneous_quasimetric(spec, &b, &c);
        let denom = ab.max(bc);
        if denom > 0.0 {
            worst = worst.max(ac / denom);
        }
    }
    worst
}

/// Metric whose boxes are counted: plain Euclidean cubes, anisotropic cells
/// (eps^{lambda_i} per coordinate) for diagonal derivations, or
/// Koranyi-adapted cells (eps on v, eps^2 on z).
#[derive(Clone, Debug, PartialEq)]
pub enum BoxMetric {
    Euclidean { dim: usize },
    DiagPowers { exponents: Vec<f64> },
    Koranyi { m: usize },
}

impl BoxMetric {
    pub fn from_spec(spec: &HeintzeSpec) -> Result<Self, HeintzeError> {
        if !spec.normalized {
            return Err(HeintzeError::NotNormalized);
        }
        match spec.n_type {
            NType::Abelian { .. } => {
                if !spec.is_semisimple() {
                    return Err(HeintzeError::InvalidSpec(
                        "box counting supports diagonal derivations only".into(),
                    ));
                }
                Ok(BoxMetric::DiagPowers {
                    exponents: spec.coordinate_eigenvalues(),
                })
            }
            NType::Heisenberg { m } => Ok(BoxMetric::Koranyi { m }),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BoxMetric::Euclidean { dim } => *dim,
            BoxMetric::DiagPowers { exponents } => exponents.len(),
            BoxMetric::Koranyi { m } => 2 * m + 1,
        }
    }

    fn cell_exponents(&self) -> Vec<f64> {
        match self {
            BoxMetric::Euclidean { dim } => vec![1.0; *dim],
            BoxMetric::DiagPowers { exponents } => exponents.clone(),
            BoxMetric::Koranyi { m } => {
                let mut e = vec![1.0; 2 * m];
                e.push(2.0);
                e
            }
        }
    }

    /// Membership test for the gauge ball of given radius (used by region
    /// filtering). Euclidean uses the sup-norm cube of that half-width.
    fn in_gauge_ball(&self, x: &[f64], radius: f64) -> bool {
        match self {
            BoxMetric::Euclidean { .. } => x.iter().all(|v| v.abs() <= radius),
            BoxMetric::DiagPowers { exponents } => x
                .iter()
                .zip(exponents)
                .all(|(v, l)| v.abs() <= radius.powf(*l)),
            BoxMetric::Koranyi { m } => {
                log_koranyi_gauge(&x[..2 * m], x[2 * m]) <= radius.ln()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SampleRegion {
    /// [0,1]^d.
    UnitCube,
    /// Gauge ball of the metric, centered at 0.
    GaugeBall { radius: f64 },
}

fn radical_inverse(base: u64, mut n: u64) -> f64 {
    let mut inv = 0.0;
    let mut denom = 1.0;
    let b = base as f64;
    while n > 0 {
        denom *= b;
        inv += (n % base) as f64 / denom;
        n /= base;
    }
    inv
}

/// Box-counting dimension estimate. Counts occupied metric-adapted cells at
/// each scale from a low-discrepancy sample, drops the two extreme scales,
/// and regresses ln N on ln(1/eps). Returns (estimate, slope standard error).
pub fn box_counting_dimension(
    metric: &BoxMetric,
    region: &SampleRegion,
    scales: &[f64],
    n_samples: usize,
) -> Result<(f64, f64), HeintzeError> {
    if scales.len() < 4 {
        return Err(HeintzeError::InsufficientScales(scales.len()));
    }
    let dim = metric.dim();
    assert!(dim <= 4, "box counting supports up to 4 coordinates");
    const BASES: [u64; 4] = [2, 3, 5, 7];
    // generate the deterministic sample once
    let mut points: Vec<[f64; 4]> = Vec::new();
    let mut n = 1u64;
    while points.len() < n_samples {
        let mut x = [0.0f64; 4];
        for i in 0..dim {
            x[i] = radical_inverse(BASES[i], n);
        }
        let keep = match region {
            SampleRegion::UnitCube => true,
            SampleRegion::GaugeBall { radius } => {
                // map [0,1] to the ball's bounding box, then filter
                let exps = metric.cell_exponents();
                for i in 0..dim {
                    let half = radius.powf(exps[i]);
                    x[i] = (2.0 * x[i] - 1.0) * half;
                }
                metric.in_gauge_ball(&x[..dim], *radius)
            }
        };
        if keep {
            points.push(x);
        }
        n += 1;
        if n > 64 * n_samples as u64 + 1024 {
            break; // region too thin; keep whatever we have
        }
    }
    let exps = metric.cell_exponents();
    let counts: Vec<(f64, usize)> = scales
        .par_iter()
        .map(|&eps| {
            let mut cells: HashSet<[i64; 4]> = HashSet::new();
            for p in &points {
                let mut key = [0i64; 4];
                for i in 0..dim {
                    key[i] = (p[i] / eps.powf(exps[i])).floor() as i64;
                }
                cells.insert(key);
            }
            (eps, cells.len())
        })
        .collect();
    // drop the two extreme scales (coarsest and finest)
    let mut ordered: Vec<(f64, usize)> = counts;
    ordered.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let window = &ordered[1..ordered.len() - 1];
    let xs: Vec<f64> = window.iter().map(|(e, _)| (1.0 / e).ln()).collect();
    let ys: Vec<f64> = window.iter().map(|(_, c)| (*c as f64).ln()).collect();
    let (slope, intercept) = linear_fit(&xs, &ys);
    // standard error of the slope
    let mut ss_res = 0.0;
    let mut ss_x = 0.0;
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    for (&x, &y) in xs.iter().zip(&ys) {
        let r = y - (slope * x + intercept);
        ss_res += r * r;
        ss_x += (x - mx) * (x - mx);
    }
    let stderr = if xs.len() > 2 && ss_x > 0.0 {
        (ss_res / (xs.len() - 2) as f64 / ss_x).sqrt()
    } else {
        0.0
    };
    Ok((slope, stderr))
}

#[derive(Clone, Debug, Serialize)]
pub struct LineCountReport {
    pub fitted_exponent: f64,
    pub expected_exponent: f64,
    pub radii: Vec<f64>,
    pub transversal_measures: Vec<f64>,
    pub ball_measures: Vec<f64>,
}

/// Measures how many lines parallel to a unit-eigenvalue coordinate axis meet
/// gauge balls of swept radii, against the ball measure. The fitted exponent
/// should match (p-1)/p.
pub fn line_count_scaling(
    spec: &HeintzeSpec,
    direction: usize,
    ball_radii: &[f64],
    grid_per_axis: usize,
) -> Result<LineCountReport, HeintzeError> {
    if !spec.normalized {
        return Err(HeintzeError::NotNormalized);
    }
    if !matches!(spec.n_type, NType::Abelian { .. }) || !spec.is_semisimple() {
        return Err(HeintzeError::InvalidSpec(
            "line counting needs a diagonal abelian spec".into(),
        ));
    }
    let lambdas = spec.coordinate_eigenvalues();
    let ldir = lambdas
        .get(direction)
        .copied()
        .ok_or_else(|| HeintzeError::InvalidSpec("direction out of range".into()))?;
    if (ldir - 1.0).abs() > 1e-12 {
        return Err(HeintzeError::DirectionNotUnitEigenvector(ldir));
    }
    let rmax = ball_radii.iter().cloned().fold(0.0f64, f64::max);
    let mut radii = Vec::new();
    let mut tmeas = Vec::new();
    let mut bmeas = Vec::new();
    for &r in ball_radii {
        if r <= 0.0 {
            radii.push(r);
            tmeas.push(0.0);
            bmeas.push(0.0);
            continue;
        }
        // transversal: grid over the coordinates other than `direction`,
        // count cells whose line meets the ball (the line {x_dir free} meets
        // it iff the transversal part already has gauge <= r)
        let tdims: Vec<usize> = (0..lambdas.len()).filter(|&i| i != direction).collect();
        let mut cell_measure = 1.0;
        let mut halves = Vec::new();
        for &i in &tdims {
            let h = rmax.powf(lambdas[i]);
            halves.push(h);
            cell_measure *= 2.0 * h / grid_per_axis as f64;
        }
        let mut count = 0usize;
        let mut total = 1usize;
        for _ in &tdims {
            total *= grid_per_axis;
        }
        for flat in 0..total {
            let mut rem = flat;
            let mut inside = true;
            for (axis, &i) in tdims.iter().enumerate() {
                let gi = rem % grid_per_axis;
                rem /= grid_per_axis;
                let c = -halves[axis] + (gi as f64 + 0.5) * 2.0 * halves[axis] / grid_per_axis as f64;
                if c.abs() > r.powf(lambdas[i]) {
                    inside = false;
                    break;
                }
            }
            if inside {
                count += 1;
            }
        }
        let transversal = count as f64 * cell_measure;
        // ball measure: product formula integrated the same way (grid count
        // over the full coordinate box)
        let mut ball = 1.0;
        for &l in &lambdas {
            ball *= 2.0 * r.powf(l);
        }
        radii.push(r);
        tmeas.push(transversal);
        bmeas.push(ball);
    }
    let p: f64 = lambdas.iter().sum();
    let pairs: Vec<(f64, f64)> = tmeas
        .iter()
        .zip(&bmeas)
        .filter(|(t, b)| **t > 0.0 && **b > 0.0)
        .map(|(t, b)| (b.ln(), t.ln()))
        .collect();
    let (slope, _) = linear_fit(
        &pairs.iter().map(|p| p.0).collect::<Vec<_>>(),
        &pairs.iter().map(|p| p.1).collect::<Vec<_>>(),
    );
    Ok(LineCountReport {
        fitted_exponent: slope,
        expected_exponent: (p - 1.0) / p,
        radii,
        transversal_measures: tmeas,
        ball_measures: bmeas,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DivisionAlgebra {
    R,
    C,
    H,
    O,
}

impl DivisionAlgebra {
    pub fn dim_r(&self) -> u32 {
        match self {
            DivisionAlgebra::R => 1,
            DivisionAlgebra::C => 2,
            DivisionAlgebra::H => 4,
            DivisionAlgebra::O => 8,
        }
    }

    pub fn dim_im(&self) -> u32 {
        self.dim_r() - 1
    }
}

/// Rank-one symmetric space of noncompact type: KH^n. For K = R the
/// parameter n is the real dimension of the space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SymmetricSpaceId {
    pub algebra: DivisionAlgebra,
    pub n: u32,
}

impl SymmetricSpaceId {
    pub fn new(algebra: DivisionAlgebra, n: u32) -> Result<Self, HeintzeError> {
        let ok = match algebra {
            DivisionAlgebra::R => n >= 2,
            DivisionAlgebra::C | DivisionAlgebra::H => n >= 2,
            DivisionAlgebra::O => n == 2,
        };
        if !ok {
            return Err(HeintzeError::InvalidId(format!("{algebra:?} with n = {n}")));
        }
        Ok(SymmetricSpaceId { algebra, n })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantRecord {
    pub dim_x: u32,
    pub dim_boundary: u32,
    pub p: u32,
    pub dim_im_k: u32,
}

pub fn symmetric_space_invariants(id: SymmetricSpaceId) -> InvariantRecord {
    let n = id.n;
    let (dim_x, p) = match id.algebra {
        DivisionAlgebra::R => (n, n - 1),
        DivisionAlgebra::C => (2 * n, 2 * n),
        DivisionAlgebra::H => (4 * n, 4 * n + 2),
        DivisionAlgebra::O => (16, 22),
    };
    InvariantRecord {
        dim_x,
        dim_boundary: dim_x - 1,
        p,
        dim_im_k: id.algebra.dim_im(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Homothetic,
    DistinguishedBy(Invariant),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Invariant {
    TopDim,
    HomogeneousDimension,
}

/// Which invariant separates the two spaces, scanning the boundary's
/// topological dimension first and the homogeneous dimension second.
pub fn sbe_distinguishable(id1: SymmetricSpaceId, id2: SymmetricSpaceId) -> Verdict {
    if id1 == id2 {
        return Verdict::Homothetic;
    }
    let a = symmetric_space_invariants(id1);
    let b = symmetric_space_invariants(id2);
    if a.dim_boundary != b.dim_boundary {
        Verdict::DistinguishedBy(Invariant::TopDim)
    } else {
        debug_assert_ne!(a.p, b.p, "distinct ids must differ in some invariant");
        Verdict::DistinguishedBy(Invariant::HomogeneousDimension)
    }
}

/// All valid ids with dim X <= max_dim, in a stable order.
pub fn all_ids_up_to_dim(max_dim: u32) -> Vec<SymmetricSpaceId> {
    let mut out = Vec::new();
    for n in 2..=max_dim {
        out.push(SymmetricSpaceId::new(DivisionAlgebra::R, n).unwrap());
    }
    for n in 2..=(max_dim / 2) {
        out.push(SymmetricSpaceId::new(DivisionAlgebra::C, n).unwrap());
    }
    for n in 2..=(max_dim / 4) {
        out.push(SymmetricSpaceId::new(DivisionAlgebra::H, n).unwrap());
    }
    if max_dim >= 16 {
        out.push(SymmetricSpaceId::new(DivisionAlgebra::O, 2).unwrap());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        let s = HeintzeSpec::abelian_diag(&[2.0, 2.0]).unwrap();
        let n = normalize(&s).unwrap();
        assert_eq!(n.coordinate_eigenvalues(), vec![1.0, 1.0]);
        assert!(n.normalized);

        let s = HeintzeSpec::abelian_diag(&[1.0, 2.0]).unwrap();
        let n = normalize(&s).unwrap();
        assert_eq!(n.coordinate_eigenvalues(), vec![1.0, 2.0]);

        let s = HeintzeSpec::abelian_diag(&[3.0, 6.0]).unwrap();
        let n = normalize(&s).unwrap();
        assert_eq!(n.coordinate_eigenvalues(), vec![1.0, 2.0]);
    }

    #[test]
    fn homogeneous_dimension_examples() {
        let s = HeintzeSpec::abelian_diag(&[1.0, 1.0]).unwrap();
        assert_eq!(homogeneous_dimension(&s).unwrap(), 2.0);
        let h = HeintzeSpec::heisenberg(1, 1.0).unwrap();
        assert_eq!(homogeneous_dimension(&h).unwrap(), 4.0);
        let rh5 = HeintzeSpec::abelian_diag(&[1.0; 4]).unwrap();
        assert_eq!(homogeneous_dimension(&rh5).unwrap(), 4.0);
        // requires normalization
        let un = HeintzeSpec::abelian_diag(&[2.0, 2.0]).unwrap();
        assert_eq!(
            homogeneous_dimension(&un).unwrap_err(),
            HeintzeError::NotNormalized
        );
    }

    #[test]
    fn carnot_type_examples() {
        let flat = HeintzeSpec::abelian_diag(&[1.0, 1.0]).unwrap();
        assert!(is_carnot_type(&flat).unwrap());
        let skew = HeintzeSpec::abelian_diag(&[1.0, 2.0]).unwrap();
        assert!(!is_carnot_type(&skew).unwrap());
        let heis = HeintzeSpec::heisenberg(1, 1.0).unwrap();
        assert!(is_carnot_type(&heis).unwrap());
        // a Jordan block on the abelianization is not Carnot even with eigenvalue 1
        let jordan = HeintzeSpec::abelian(vec![JordanBlock {
            eigenvalue: 1.0,
            size: 2,
        }])
        .unwrap();
        assert!(!is_carnot_type(&jordan).unwrap());
    }

    #[test]
    fn quasimetric_zero_iff_equal_coordinates() {
        let s = HeintzeSpec::abelian_diag(&[1.0, 2.0]).unwrap();
        assert_eq!(homogeneous_quasimetric(&s, &[0.3, -0.7], &[0.3, -0.7]), 0.0);
        let h = HeintzeSpec::heisenberg(1, 1.0).unwrap();
        assert_eq!(
            homogeneous_quasimetric(&h, &[0.1, 0.2, 0.3], &[0.1, 0.2, 0.3]),
            0.0
        );
    }

    #[test]
    fn koranyi_horizontal_layer_is_euclidean() {
        let h = HeintzeSpec::heisenberg(1, 1.0).unwrap();
        let v = [3.0, 4.0, 0.0];
        let zero = [0.0, 0.0, 0.0];
        assert!((homogeneous_quasimetric(&h, &zero, &v) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn diag_gauge_max_formula() {
        let s = HeintzeSpec::abelian_diag(&[1.0, 2.0]).unwrap();
        // |dx| = 0.04 -> 0.04; |dy| = 0.04 -> 0.04^{1/2} = 0.2
        let d = homogeneous_quasimetric(&s, &[0.0, 0.0], &[0.04, 0.04]);
        assert!((d - 0.2).abs() < 1e-12);
    }

    #[test]
    fn dilation_equivariance_exact_for_diag_and_koranyi() {
        use rand::Rng;
        let diag = HeintzeSpec::abelian_diag(&[1.0, 2.0, 3.0]).unwrap();
        let heis = HeintzeSpec::heisenberg(1, 1.0).unwrap();
        let mut rng = crate::rng::rng_from_seed(99);
        for _ in 0..1000 {
            let t: f64 = rng.random_range(-2.0..2.0);
            for spec in [&diag, &heis] {
                let dim = spec.dim_n();
                let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
                let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
                let before = log_homogeneous_quasimetric(spec, &a, &b);
                let after =
                    log_homogeneous_quasimetric(spec, &dilate(spec, t, &a), &dilate(spec, t, &b));
                assert!(
                    (after - (before + t)).abs() < 1e-10,
                    "equivariance broke: {after} vs {}",
                    before + t
                );
            }
        }
    }

    #[test]
    fn jordan_gauge_agrees_with_diag_on_semisimple_input() {
        // a diagonal spec evaluated through the bisection path must agree
        let diag = HeintzeSpec::abelian_diag(&[1.0, 2.0]).unwrap();
        let delta = [0.7, -1.3];
        let closed = log_homogeneous_quasimetric(&diag, &[0.0, 0.0], &delta);
        let bisected = log_jordan_gauge(&diag, &delta);
        assert!((closed - bisected).abs() < 1e-9);
    }

    #[test]
    fn jordan_gauge_equivariance_within_tolerance() {
        let spec = HeintzeSpec::abelian(vec![JordanBlock {
            eigenvalue: 1.0,
            size: 2,
        }])
        .unwrap();
        let a = [0.4, -0.9];
        let b = [-1.1, 0.2];
        let before = log_homogeneous_quasimetric(&spec, &a, &b);
        let t = 0.8;
        let after = log_homogeneous_quasimetric(&spec, &dilate(&spec, t, &a), &dilate(&spec, t, &b));
        assert!((after - (before + t)).abs() < 1e-9);
    }

    #[test]
    fn koranyi_quasi_ultrametric_constant_is_finite() {
        let h = HeintzeSpec::heisenberg(1, 1.0).unwrap();
        let k = measure_quasi_ultrametric_constant(&h, 2000, 2.0, 5);
        assert!(k.is_finite() && k >= 1.0);
        // recorded, not asserted: print for the log
        println!("Koranyi quasi-ultrametric constant over 2000 triples: {k:.4}");
    }

    #[test]
    fn box_counting_unit_square() {
        let scales: Vec<f64> = (1..=8).map(|k| 0.5f64.powf(k as f64 / 2.0)).collect();
        let (dim, _err) = box_counting_dimension(
            &BoxMetric::Euclidean { dim: 2 },
            &SampleRegion::UnitCube,
            &scales,
            200_000,
        )
        .unwrap();
        assert!((dim - 2.0).abs() < 0.1, "estimated {dim}");
    }

    #[test]
    fn box_counting_requires_four_scales() {
        let err = box_counting_dimension(
            &BoxMetric::Euclidean { dim: 2 },
            &SampleRegion::UnitCube,
            &[0.5, 0.25, 0.125],
            1000,
        )
        .unwrap_err();
        assert_eq!(err, HeintzeError::InsufficientScales(3));
    }

    #[test]
    fn box_counting_weighted_diag() {
        let scales: Vec<f64> = (1..=8).map(|k| 0.5f64.powf(k as f64 / 2.0)).collect();
        let metric = BoxMetric::DiagPowers {
            exponents: vec![1.0, 2.0],
        };
        let (dim, _) =
            box_counting_dimension(&metric, &SampleRegion::UnitCube, &scales, 200_000).unwrap();
        assert!((dim - 3.0).abs() < 0.2, "estimated {dim}");
    }

    #[test]
    fn line_counting_flat_plane() {
        let spec = HeintzeSpec::abelian_diag(&[1.0, 1.0]).unwrap();
        let radii: Vec<f64> = (0..8).map(|i| 0.5 * 1.3f64.powi(i)).collect();
        let rep = line_count_scaling(&spec, 0, &radii, 400).unwrap();
        assert!((rep.expected_exponent - 0.5).abs() < 1e-12);
        assert!(
            (rep.fitted_exponent - 0.5).abs() < 0.02,
            "fitted {}",
            rep.fitted_exponent
        );
    }

    #[test]
    fn line_counting_rejects_non_unit_direction() {
        let spec = HeintzeSpec::abelian_diag(&[1.0, 2.0]).unwrap();
        let err = line_count_scaling(&spec, 1, &[1.0], 10).unwrap_err();
        assert_eq!(err, HeintzeError::DirectionNotUnitEigenvector(2.0));
    }

    #[test]
    fn zero_radius_counts_nothing() {
        let spec = HeintzeSpec::abelian_diag(&[1.0, 2.0]).unwrap();
        let rep = line_count_scaling(&spec, 0, &[0.0, 1.0, 2.0], 50).unwrap();
        assert_eq!(rep.transversal_measures[0], 0.0);
    }

    #[test]
    fn invariant_records_match_formulas() {
        let rh = |n| symmetric_space_invariants(SymmetricSpaceId::new(DivisionAlgebra::R, n).unwrap());
        assert_eq!(
            rh(4),
            InvariantRecord {
                dim_x: 4,
                dim_boundary: 3,
                p: 3,
                dim_im_k: 0
            }
        );
        let ch2 = symmetric_space_invariants(SymmetricSpaceId::new(DivisionAlgebra::C, 2).unwrap());
        assert_eq!(
            ch2,
            InvariantRecord {
                dim_x: 4,
                dim_boundary: 3,
                p: 4,
                dim_im_k: 1
            }
        );
        let oh2 = symmetric_space_invariants(SymmetricSpaceId::new(DivisionAlgebra::O, 2).unwrap());
        assert_eq!(
            oh2,
            InvariantRecord {
                dim_x: 16,
                dim_boundary: 15,
                p: 22,
                dim_im_k: 7
            }
        );
    }

    #[test]
    fn record_identities_hold_for_all_small_ids() {
        for id in all_ids_up_to_dim(32) {
            let r = symmetric_space_invariants(id);
            assert_eq!(r.p, r.dim_x - 1 + r.dim_im_k);
            assert!(matches!(r.dim_im_k, 0 | 1 | 3 | 7));
            // n * dim_R(K) = dim X
            assert_eq!(id.n * id.algebra.dim_r(), r.dim_x);
        }
    }

    #[test]
    fn octonionic_plane_only_exists_for_n2() {
        assert!(SymmetricSpaceId::new(DivisionAlgebra::O, 3).is_err());
        assert!(SymmetricSpaceId::new(DivisionAlgebra::O, 2).is_ok());
    }

    #[test]
    fn distinguishability_examples() {
        let rh2 = SymmetricSpaceId::new(DivisionAlgebra::R, 2).unwrap();
        assert_eq!(sbe_distinguishable(rh2, rh2), Verdict::Homothetic);
        let rh4 = SymmetricSpaceId::new(DivisionAlgebra::R, 4).unwrap();
        let ch2 = SymmetricSpaceId::new(DivisionAlgebra::C, 2).unwrap();
        assert_eq!(
            sbe_distinguishable(rh4, ch2),
            Verdict::DistinguishedBy(Invariant::HomogeneousDimension)
        );
        let rh3 = SymmetricSpaceId::new(DivisionAlgebra::R, 3).unwrap();
        assert_eq!(
            sbe_distinguishable(rh3, ch2),
            Verdict::DistinguishedBy(Invariant::TopDim)
        );
    }

    #[test]
    fn all_small_pairs_are_distinguished() {
        let ids = all_ids_up_to_dim(32);
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                assert_ne!(
                    sbe_distinguishable(a, b),
                    Verdict::Homothetic,
                    "{a:?} vs {b:?} not distinguished"
                );
            }
        }
    }
}
