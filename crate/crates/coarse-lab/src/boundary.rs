//! Visual boundary machinery: kernels of the form mu^{-(x|y)_o}, the chain
//! construction that makes them subadditive, boundary Gromov products with
//! closed forms per model, metric cross-ratios, and the comparison between
//! log cross-ratios and distances between the corresponding geodesics.

use crate::matrix::SymmetricMatrix;
use crate::numerics::GOLDEN_TOL;
use crate::spaces::{
    geodesic_between, project_to_geodesic, BoundaryPoint, Configuration, Endpoint, Model,
    ModelSpace, Point, SpaceError,
};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BoundaryError {
    #[error("boundary points coincide")]
    DegenerateQuadruple,
    #[error("limit did not stabilize after 40 doublings")]
    NonConvergence,
    #[error("unsupported boundary computation: {0}")]
    UnsupportedBoundary(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Kernel parameters: mu = 2^{1/delta} for delta > 0, e for delta = 0, so
/// that mu^delta <= 2 always holds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VisualKernel {
    pub delta: f64,
    pub mu: f64,
}

impl VisualKernel {
    pub fn new(delta: f64) -> Self {
        assert!(delta >= 0.0 && delta.is_finite(), "delta must be finite and non-negative");
        let mu = if delta > 0.0 {
            2.0f64.powf(1.0 / delta)
        } else {
            std::f64::consts::E
        };
        VisualKernel { delta, mu }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelMatrix {
    pub values: SymmetricMatrix,
    pub quasi_ultrametric_k: f64,
}

/// Largest ratio values[i][k] / max(values[i][j], values[j][k]) over
/// distinct triples; 1 exactly for an ultrametric.
pub fn quasi_ultrametric_constant(values: &SymmetricMatrix) -> f64 {
    let n = values.n();
    let mut worst = 0.0f64;
    for i in 0..n {
        for k in 0..i {
            let ik = values.get(i, k);
            for j in 0..n {
                if j == i || j == k {
                    continue;
                }
                let denom = values.get(i, j).max(values.get(j, k));
                if denom > 0.0 {
                    worst = worst.max(ik / denom);
                }
            }
        }
    }
    worst
}

/// Kernel mu^{-(x_i|x_j)_o} over the configuration's points, with Gromov
/// products seen from the configuration basepoint. The diagonal is zero by
/// convention so the kernel can be chained into a metric.
pub fn visual_kernel_matrix(kernel: &VisualKernel, config: &Configuration) -> KernelMatrix {
    let n = config.points.len();
    let b = config.basepoint;
    let ln_mu = kernel.mu.ln();
    let values = SymmetricMatrix::from_fn(n, |i, j| {
        if i == j {
            0.0
        } else {
            let p = 0.5 * (config.dist.get(i, b) + config.dist.get(j, b) - config.dist.get(i, j));
            (-p * ln_mu).exp()
        }
    });
    let quasi_ultrametric_k = quasi_ultrametric_constant(&values);
    KernelMatrix {
        values,
        quasi_ultrametric_k,
    }
}

/// Chain construction: all-pairs-shortest-path closure of the kernel seen
/// as complete-graph edge weights. The result is the largest subadditive
/// minorant realized by chains.
pub fn chain_metric(values: &SymmetricMatrix) -> SymmetricMatrix {
    crate::matrix::apsp(values)
}

#[derive(Clone, Debug, Serialize)]
pub struct FrinkReport {
    pub quasi_ultrametric_k: f64,
    /// max over pairs of kernel / chained, expected <= 4 when K <= 2
    pub max_ratio: f64,
    pub sandwich_holds: bool,
}

/// Checks the sandwich: chained <= kernel <= 4 * chained entrywise.
pub fn frink_sandwich(values: &SymmetricMatrix, chained: &SymmetricMatrix) -> FrinkReport {
    let n = values.n();
    let mut max_ratio = 1.0f64;
    let mut lower_ok = true;
    for i in 0..n {
        for j in 0..i {
            let v = values.get(i, j);
            let c = chained.get(i, j);
            if c > v + 1e-12 {
                lower_ok = false;
            }
            if c > 0.0 {
                max_ratio = max_ratio.max(v / c);
            } else if v > 0.0 {
                max_ratio = f64::INFINITY;
            }
        }
    }
    FrinkReport {
        quasi_ultrametric_k: quasi_ultrametric_constant(values),
        max_ratio,
        sandwich_holds: lower_ok && max_ratio <= 4.0 + 1e-9,
    }
}

fn as_disk_angle(xi: &BoundaryPoint, ox: f64, ot: f64) -> Result<f64, BoundaryError> {
    // normalize so the origin sits at (0,1), then Cayley to the disk chart
    let u = match xi {
        BoundaryPoint::HalfPlaneReal { x } => Some((x - ox) / ot),
        BoundaryPoint::HalfPlaneInfinity => None,
        _ => {
            return Err(BoundaryError::UnsupportedBoundary(
                "expected a half-plane boundary point".into(),
            ))
        }
    };
    Ok(match u {
        // w = (u - i)/(u + i) lands on the unit circle
        Some(u) => (-2.0 * u).atan2(u * u - 1.0),
        None => 0.0,
    })
}

/// Gromov product of two ideal points seen from o, by the model's closed
/// form. Half-plane: -ln sin(theta/2) with theta the disk-chart angle at o.
/// Trees: distance from o to the bi-infinite path. Heintze log model
/// (basepoint only): expressions in the quasinorm.
pub fn boundary_gromov_product(
    space: &ModelSpace,
    xi: &BoundaryPoint,
    eta: &BoundaryPoint,
    o: &Point,
) -> Result<f64, BoundaryError> {
    if xi == eta {
        return Err(BoundaryError::DegenerateQuadruple);
    }
    match (&space.model, o) {
        (Model::HalfPlane, Point::HalfPlane { x: ox, t: ot }) => {
            let a1 = as_disk_angle(xi, *ox, *ot)?;
            let a2 = as_disk_angle(eta, *ox, *ot)?;
            let mut theta = (a1 - a2).abs();
            if theta > std::f64::consts::PI {
                theta = std::f64::consts::TAU - theta;
            }
            if theta == 0.0 {
                return Err(BoundaryError::DegenerateQuadruple);
            }
            Ok(-(0.5 * theta).sin().ln())
        }
        (Model::RegularTree { .. }, Point::TreeVertex { .. }) => {
            let line = geodesic_between(space, &Endpoint::Ideal(xi.clone()), &Endpoint::Ideal(eta.clone()))?;
            let (p, _) = project_to_geodesic(space, &line, o)?;
            Ok(space.distance(o, &p)?)
        }
        (Model::HeintzeLog { spec }, Point::Heintze { n: on, s: os }) => {
            if on.iter().any(|&c| c != 0.0) || *os != 0.0 {
                return Err(BoundaryError::UnsupportedBoundary(
                    "log-model products are only available from the basepoint".into(),
                ));
            }
            let origin = vec![0.0; spec.dim_n()];
            let m = |n: &[f64]| -> f64 {
                crate::heintze::log_homogeneous_quasimetric(spec, &origin, n).max(0.0)
            };
            match (xi, eta) {
                (BoundaryPoint::HeintzeN { n: n1 }, BoundaryPoint::HeintzeN { n: n2 }) => {
                    if n1 == n2 {
                        return Err(BoundaryError::DegenerateQuadruple);
                    }
                    let l = crate::heintze::log_homogeneous_quasimetric(spec, n1, n2);
                    Ok(m(n1) + m(n2) - l)
                }
                (BoundaryPoint::HeintzeN { n }, BoundaryPoint::HeintzeOmega)
                | (BoundaryPoint::HeintzeOmega, BoundaryPoint::HeintzeN { n }) => Ok(m(n)),
                _ => Err(BoundaryError::UnsupportedBoundary(
                    "expected log-model boundary points".into(),
                )),
            }
        }
        _ => Err(BoundaryError::UnsupportedBoundary(
            "no boundary chart for this model or origin".into(),
        )),
    }
}

/// Same product computed as a limit along rays from o, doubling the ray
/// parameter until two successive values differ by less than 1e-4.
pub fn boundary_gromov_product_by_doubling(
    space: &ModelSpace,
    xi: &BoundaryPoint,
    eta: &BoundaryPoint,
    o: &Point,
) -> Result<f64, BoundaryError> {
    if xi == eta {
        return Err(BoundaryError::DegenerateQuadruple);
    }
    let ray_xi = geodesic_between(space, &Endpoint::Interior(o.clone()), &Endpoint::Ideal(xi.clone()))?;
    let ray_eta = geodesic_between(space, &Endpoint::Interior(o.clone()), &Endpoint::Ideal(eta.clone()))?;
    let mut t = 1.0;
    let mut prev = f64::NAN;
    for _ in 0..40 {
        let a = ray_xi.point_at(t);
        let b = ray_eta.point_at(t);
        let da = space.distance(&a, o)?;
        let db = space.distance(&b, o)?;
        let dab = space.distance(&a, &b)?;
        let p = 0.5 * (da + db - dab);
        if (p - prev).abs() < 1e-4 {
            return Ok(p);
        }
        prev = p;
        t *= 2.0;
    }
    Err(BoundaryError::NonConvergence)
}

/// Kernel matrix over ideal points: mu^{-(xi_i|xi_j)_o}.
pub fn boundary_kernel_matrix(
    space: &ModelSpace,
    points: &[BoundaryPoint],
    kernel: &VisualKernel,
    o: &Point,
) -> Result<KernelMatrix, BoundaryError> {
    let n = points.len();
    let ln_mu = kernel.mu.ln();
    let mut values = SymmetricMatrix::zeros(n);
    for i in 0..n {
        for j in 0..i {
            let p = boundary_gromov_product(space, &points[i], &points[j], o)?;
            values.set(i, j, (-p * ln_mu).exp());
        }
    }
    let quasi_ultrametric_k = quasi_ultrametric_constant(&values);
    Ok(KernelMatrix {
        values,
        quasi_ultrametric_k,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CrossRatioResult {
    pub ratio: f64,
    pub log_plus: f64,
    pub boxtimes_sup: f64,
    pub boxtimes_inf: f64,
}

/// Metric cross-ratio rho(1,3) rho(2,4) / (rho(1,4) rho(2,3)) of four rows
/// of a kernel or metric matrix, with logs in base mu. boxtimes_sup and
/// boxtimes_inf are the extreme pairwise Gromov products -log_mu rho.
pub fn cross_ratio(
    values: &SymmetricMatrix,
    mu: f64,
    idx: [usize; 4],
) -> Result<CrossRatioResult, BoundaryError> {
    for a in 0..4 {
        for b in 0..a {
            if idx[a] == idx[b] || values.get(idx[a], idx[b]) == 0.0 {
                return Err(BoundaryError::DegenerateQuadruple);
            }
        }
    }
    let [i1, i2, i3, i4] = idx;
    let r13 = values.get(i1, i3);
    let r24 = values.get(i2, i4);
    let r14 = values.get(i1, i4);
    let r23 = values.get(i2, i3);
    let ratio = (r13 * r24) / (r14 * r23);
    let ln_mu = mu.ln();
    let log_plus = (ratio.ln() / ln_mu).max(0.0);
    let mut sup = f64::NEG_INFINITY;
    let mut inf = f64::INFINITY;
    for a in 0..4 {
        for b in 0..a {
            let p = -values.get(idx[a], idx[b]).ln() / ln_mu;
            sup = sup.max(p);
            inf = inf.min(p);
        }
    }
    Ok(CrossRatioResult {
        ratio,
        log_plus,
        boxtimes_sup: sup,
        boxtimes_inf: inf,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct XRatioGeodesicReport {
    pub geodesic_distance: f64,
    pub log_plus: f64,
    pub gap: f64,
}

/// Compares the log cross-ratio of four ideal points with the distance
/// between the geodesics (xi1 xi4) and (xi2 xi3). The half-plane distance
/// uses the common-perpendicular closed form; trees project exactly.
pub fn xratio_vs_geodesic_distance(
    space: &ModelSpace,
    xs: &[BoundaryPoint; 4],
) -> Result<XRatioGeodesicReport, BoundaryError> {
    for a in 0..4 {
        for b in 0..a {
            if xs[a] == xs[b] {
                return Err(BoundaryError::DegenerateQuadruple);
            }
        }
    }
    let o = space.basepoint();
    let p = |i: usize, j: usize| boundary_gromov_product(space, &xs[i], &xs[j], &o);
    let log_ratio = p(0, 3)? + p(1, 2)? - p(0, 2)? - p(1, 3)?;
    let log_plus = log_ratio.max(0.0);
    let d = match &space.model {
        Model::HalfPlane => half_plane_line_distance(&xs[0], &xs[3], &xs[1], &xs[2])?,
        Model::RegularTree { .. } => {
            let chi14 =
                geodesic_between(space, &Endpoint::Ideal(xs[0].clone()), &Endpoint::Ideal(xs[3].clone()))?;
            let chi23 =
                geodesic_between(space, &Endpoint::Ideal(xs[1].clone()), &Endpoint::Ideal(xs[2].clone()))?;
            tree_line_distance(space, &chi14, &chi23)?
        }
        _ => {
            return Err(BoundaryError::UnsupportedBoundary(
                "geodesic distance implemented for half-plane and trees".into(),
            ))
        }
    };
    Ok(XRatioGeodesicReport {
        geodesic_distance: d,
        log_plus,
        gap: (log_plus - d).abs(),
    })
}

fn mobius_apply(m: [[f64; 2]; 2], x: Option<f64>) -> Option<f64> {
    let (num, den) = match x {
        Some(x) => (m[0][0] * x + m[0][1], m[1][0] * x + m[1][1]),
        None => (m[0][0], m[1][0]),
    };
    if den == 0.0 {
        None
    } else {
        Some(num / den)
    }
}

fn as_real(xi: &BoundaryPoint) -> Result<Option<f64>, BoundaryError> {
    match xi {
        BoundaryPoint::HalfPlaneReal { x } => Ok(Some(*x)),
        BoundaryPoint::HalfPlaneInfinity => Ok(None),
        _ => Err(BoundaryError::UnsupportedBoundary(
            "expected a half-plane boundary point".into(),
        )),
    }
}

/// Distance between the geodesics (a b) and (c d) of the half-plane, via a
/// Mobius map sending a to 0 and b to infinity: the image of (a b) is the
/// vertical axis, and sinh d to the semicircle over [p, q] is
/// 2 sqrt(pq) / (q - p), zero when the images straddle the origin.
pub fn half_plane_line_distance(
    a: &BoundaryPoint,
    b: &BoundaryPoint,
    c: &BoundaryPoint,
    d: &BoundaryPoint,
) -> Result<f64, BoundaryError> {
    let (a, b, c, d) = (as_real(a)?, as_real(b)?, as_real(c)?, as_real(d)?);
    let m = match (a, b) {
        (Some(a), Some(b)) => [[1.0, -a], [1.0, -b]],
        (None, Some(b)) => [[0.0, 1.0], [1.0, -b]],
        (Some(a), None) => [[1.0, -a], [0.0, 1.0]],
        (None, None) => return Err(BoundaryError::DegenerateQuadruple),
    };
    let p = mobius_apply(m, c).ok_or(BoundaryError::DegenerateQuadruple)?;
    let q = mobius_apply(m, d).ok_or(BoundaryError::DegenerateQuadruple)?;
    if p == 0.0 || q == 0.0 || p == q {
        return Err(BoundaryError::DegenerateQuadruple);
    }
    if p.signum() != q.signum() {
        return Ok(0.0);
    }
    let (lo, hi) = (p.abs().min(q.abs()), p.abs().max(q.abs()));
    Ok((2.0 * (lo * hi).sqrt() / (hi - lo)).asinh())
}

/// Distance between two disjoint tree lines by integer descent on one
/// parameter with exact projection onto the other line.
fn tree_line_distance(
    space: &ModelSpace,
    l1: &crate::spaces::GeodesicLine,
    l2: &crate::spaces::GeodesicLine,
) -> Result<f64, BoundaryError> {
    let eval = |k: f64| -> Result<f64, BoundaryError> {
        let b = l2.point_at(k);
        let (p, _) = project_to_geodesic(space, l1, &b)?;
        Ok(space.distance(&p, &b)?)
    };
    let mut k = 0.0f64;
    let mut fk = eval(k)?;
    loop {
        let fl = eval(k - 1.0)?;
        let fr = eval(k + 1.0)?;
        if fl < fk {
            k -= 1.0;
            fk = fl;
        } else if fr < fk {
            k += 1.0;
            fk = fr;
        } else {
            break;
        }
    }
    Ok(fk)
}

/// Generic distance between two geodesics by nested minimization: golden
/// section on the second line's parameter with exact projection inside.
pub fn line_distance(
    space: &ModelSpace,
    l1: &crate::spaces::GeodesicLine,
    l2: &crate::spaces::GeodesicLine,
) -> Result<f64, BoundaryError> {
    if matches!(space.model, Model::RegularTree { .. }) {
        return tree_line_distance(space, l1, l2);
    }
    let f = |k: f64| -> f64 {
        let b = l2.point_at(k);
        match project_to_geodesic(space, l1, &b) {
            Ok((p, _)) => space.distance(&p, &b).unwrap_or(f64::INFINITY),
            Err(_) => f64::INFINITY,
        }
    };
    // expand a window on l2's parameter until the outer min is interior
    let mut a = if l2.lo.is_finite() { l2.lo } else { -1.0 };
    let mut c = if l2.hi.is_finite() { l2.hi } else { 1.0 };
    let mut guard = 0;
    loop {
        let width = c - a;
        let grow_left = !l2.lo.is_finite() && f(a) <= f(a + 0.05 * width);
        let grow_right = !l2.hi.is_finite() && f(c) <= f(c - 0.05 * width);
        if !grow_left && !grow_right {
            break;
        }
        if grow_left {
            a -= width;
        }
        if grow_right {
            c += width;
        }
        guard += 1;
        if guard > 200 {
            return Err(BoundaryError::NonConvergence);
        }
    }
    let (_, fmin) = crate::numerics::golden_section_min(f, a, c, GOLDEN_TOL);
    Ok(fmin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::{sample_configuration, Region};

    #[test]
    fn kernel_parameters_follow_the_convention() {
        let k = VisualKernel::new(0.5);
        assert!((k.mu - 4.0).abs() < 1e-12);
        assert!((k.mu.powf(k.delta) - 2.0).abs() < 1e-12);
        let k0 = VisualKernel::new(0.0);
        assert_eq!(k0.mu, std::f64::consts::E);
    }

    #[test]
    fn basepoint_entries_are_one() {
        let space = ModelSpace::regular_tree(3);
        let config = sample_configuration(&space, &Region::Ball { radius: 5.0 }, 20, 3).unwrap();
        let km = visual_kernel_matrix(&VisualKernel::new(0.0), &config);
        for j in 1..20 {
            let expected = (-config.dist.get(0, j) * 0.0f64).exp();
            // (o|x)_o = 0, so the basepoint row is exactly 1 off-diagonal
            assert_eq!(km.values.get(0, j), expected.min(1.0));
            assert_eq!(km.values.get(0, j), 1.0);
        }
        assert_eq!(km.values.get(0, 0), 0.0);
    }

    #[test]
    fn tree_kernel_is_an_ultrametric() {
        let space = ModelSpace::regular_tree(4);
        let config = sample_configuration(&space, &Region::Ball { radius: 8.0 }, 40, 11).unwrap();
        let km = visual_kernel_matrix(&VisualKernel::new(0.0), &config);
        assert!(km.quasi_ultrametric_k <= 1.0 + 1e-9, "K = {}", km.quasi_ultrametric_k);
    }

    #[test]
    fn half_plane_kernel_has_k_at_most_two() {
        let space = ModelSpace::half_plane();
        let config = sample_configuration(&space, &Region::Ball { radius: 6.0 }, 60, 19).unwrap();
        // measure the four-point defect of the products, then build the
        // kernel with that delta: K <= mu^delta = 2 must follow
        let b = config.basepoint;
        let prod = |i: usize, j: usize| {
            0.5 * (config.dist.get(i, b) + config.dist.get(j, b) - config.dist.get(i, j))
        };
        let n = config.points.len();
        let mut defect = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if i != j && j != k && i != k {
                        defect = defect.max(prod(i, j).min(prod(j, k)) - prod(i, k));
                    }
                }
            }
        }
        let km = visual_kernel_matrix(&VisualKernel::new(defect + 1e-12), &config);
        assert!(km.quasi_ultrametric_k <= 2.0 + 1e-9, "K = {}", km.quasi_ultrametric_k);
    }

    #[test]
    fn chain_metric_examples() {
        // a genuine metric is untouched
        let metric = SymmetricMatrix::from_lower(vec![0.0, 1.0, 0.0, 1.5, 1.0, 0.0]).unwrap();
        assert_eq!(chain_metric(&metric), metric);
        // the 1-1-3 chain shortcuts to 2
        let v = SymmetricMatrix::from_lower(vec![0.0, 1.0, 0.0, 3.0, 1.0, 0.0]).unwrap();
        let c = chain_metric(&v);
        assert_eq!(c.get(0, 2), 2.0);
        assert!(c.max_triangle_defect() <= 1e-12);
    }

    #[test]
    fn chain_metric_matches_brute_force_on_small_matrices() {
        use rand::Rng;
        let mut rng = crate::rng::rng_from_seed(7);
        for _ in 0..20 {
            let n = 6;
            let values = SymmetricMatrix::from_fn(n, |i, j| {
                if i == j {
                    0.0
                } else {
                    rng.random_range(0.1..2.0)
                }
            });
            let chained = chain_metric(&values);
            // brute force over all simple chains
            for i in 0..n {
                for j in 0..i {
                    let mut best = values.get(i, j);
                    let others: Vec<usize> = (0..n).filter(|&k| k != i && k != j).collect();
                    // enumerate non-empty ordered subsets of intermediates
                    let m = others.len();
                    for mask in 1u32..(1 << m) {
                        let subset: Vec<usize> =
                            others.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &k)| k).collect();
                        let mut perm = subset.clone();
                        permute_all(&mut perm, 0, &mut |p: &[usize]| {
                            let mut len = values.get(i, p[0]);
                            for w in p.windows(2) {
                                len += values.get(w[0], w[1]);
                            }
                            len += values.get(*p.last().unwrap(), j);
                            if len < best {
                                best = len;
                            }
                        });
                    }
                    assert!((chained.get(i, j) - best).abs() < 1e-12);
                }
            }
        }
    }

    fn permute_all(items: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
        if k == items.len() {
            visit(items);
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permute_all(items, k + 1, visit);
            items.swap(k, i);
        }
    }

    #[test]
    fn frink_sandwich_holds_for_small_k_kernels() {
        // ultrametric tree kernel times entrywise factors in [1, sqrt 2]
        // keeps K <= sqrt 2 <= 2, so the sandwich must hold exactly
        let space = ModelSpace::regular_tree(3);
        let config = sample_configuration(&space, &Region::Ball { radius: 7.0 }, 30, 23).unwrap();
        let km = visual_kernel_matrix(&VisualKernel::new(0.0), &config);
        let n = km.values.n();
        let scaled = SymmetricMatrix::from_fn(n, |i, j| {
            if i == j {
                0.0
            } else {
                let f = 1.0
                    + (2.0f64.sqrt() - 1.0)
                        * crate::rng::hash_to_unit(&[i as u64, j as u64], 5).abs();
                km.values.get(i, j) * f
            }
        });
        let chained = chain_metric(&scaled);
        let report = frink_sandwich(&scaled, &chained);
        assert!(report.quasi_ultrametric_k <= 2.0 + 1e-12);
        assert!(report.sandwich_holds, "max ratio {}", report.max_ratio);
    }

    #[test]
    fn boundary_product_closed_forms() {
        let space = ModelSpace::half_plane();
        let o = space.basepoint();
        // 0 and infinity are antipodal seen from (0,1)
        let p = boundary_gromov_product(
            &space,
            &BoundaryPoint::HalfPlaneReal { x: 0.0 },
            &BoundaryPoint::HalfPlaneInfinity,
            &o,
        )
        .unwrap();
        assert!(p.abs() < 1e-12);
        // disk angle pi/3 gives -ln sin(pi/6) = ln 2
        let p = boundary_gromov_product(
            &space,
            &BoundaryPoint::HalfPlaneReal { x: 3.0f64.sqrt() },
            &BoundaryPoint::HalfPlaneInfinity,
            &o,
        )
        .unwrap();
        assert!((p - 2.0f64.ln()).abs() < 1e-12, "got {p}");
    }

    #[test]
    fn tree_product_is_distance_to_the_path() {
        let space = ModelSpace::regular_tree(3);
        let o = Point::TreeVertex { word: vec![] };
        let xi = BoundaryPoint::TreeEnd {
            prefix: vec![0, 1, 0],
            period: vec![1, 2],
        };
        let eta = BoundaryPoint::TreeEnd {
            prefix: vec![0, 1, 2],
            period: vec![0, 1],
        };
        // both rays share the prefix [0,1]: the line hangs at distance 2
        let p = boundary_gromov_product(&space, &xi, &eta, &o).unwrap();
        assert_eq!(p, 2.0);
    }

    #[test]
    fn doubling_limit_matches_the_closed_form() {
        let space = ModelSpace::half_plane();
        let o = Point::HalfPlane { x: 0.4, t: 2.3 };
        let xi = BoundaryPoint::HalfPlaneReal { x: -3.0 };
        let eta = BoundaryPoint::HalfPlaneReal { x: 1.2 };
        let exact = boundary_gromov_product(&space, &xi, &eta, &o).unwrap();
        let limit = boundary_gromov_product_by_doubling(&space, &xi, &eta, &o).unwrap();
        assert!((exact - limit).abs() < 1e-4, "{exact} vs {limit}");
    }

    #[test]
    fn heintze_products_from_the_quasinorm() {
        let spec = crate::heintze::HeintzeSpec::abelian_diag(&[1.0]).unwrap();
        let space = ModelSpace::heintze_log(spec);
        let o = space.basepoint();
        let xi = BoundaryPoint::HeintzeN { n: vec![8.0] };
        let omega = BoundaryPoint::HeintzeOmega;
        let p = boundary_gromov_product(&space, &xi, &omega, &o).unwrap();
        assert!((p - 8.0f64.ln()).abs() < 1e-12);
        // two points inside the unit ball separate below height 0
        let a = BoundaryPoint::HeintzeN { n: vec![0.1] };
        let b = BoundaryPoint::HeintzeN { n: vec![-0.1] };
        let p = boundary_gromov_product(&space, &a, &b, &o).unwrap();
        assert!((p + 0.2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_ratio_on_the_real_line() {
        let xs = [0.0f64, 1.0, 2.0, 3.0];
        let m = SymmetricMatrix::from_fn(4, |i, j| (xs[i] - xs[j]).abs());
        let r = cross_ratio(&m, std::f64::consts::E, [0, 1, 2, 3]).unwrap();
        assert!((r.ratio - 4.0 / 3.0).abs() < 1e-12);
        assert!((r.log_plus - (4.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn balanced_quadruple_has_ratio_one() {
        let m = SymmetricMatrix::from_fn(4, |i, j| if i == j { 0.0 } else { 1.0 });
        let r = cross_ratio(&m, 2.0, [0, 1, 2, 3]).unwrap();
        assert_eq!(r.ratio, 1.0);
        assert_eq!(r.log_plus, 0.0);
    }

    #[test]
    fn degenerate_quadruples_are_rejected() {
        let m = SymmetricMatrix::from_fn(4, |i, j| if i == j { 0.0 } else { 1.0 });
        assert_eq!(
            cross_ratio(&m, 2.0, [0, 1, 2, 2]).unwrap_err(),
            BoundaryError::DegenerateQuadruple
        );
    }

    #[test]
    fn cross_ratio_swap_symmetries() {
        let space = ModelSpace::half_plane();
        let config = sample_configuration(&space, &Region::Ball { radius: 5.0 }, 12, 31).unwrap();
        let km = visual_kernel_matrix(&VisualKernel::new(1.0), &config);
        let r = cross_ratio(&km.values, 2.0, [1, 2, 3, 4]).unwrap();
        // swapping (1<->2, 3<->4) preserves the ratio
        let r_swap = cross_ratio(&km.values, 2.0, [2, 1, 4, 3]).unwrap();
        assert!((r.ratio - r_swap.ratio).abs() < 1e-12 * r.ratio.abs());
        // swapping 3<->4 inverts it
        let r_inv = cross_ratio(&km.values, 2.0, [1, 2, 4, 3]).unwrap();
        assert!((r.ratio * r_inv.ratio - 1.0).abs() < 1e-9);
        assert!(r.log_plus == 0.0 || r_inv.log_plus == 0.0);
    }

    #[test]
    fn kernel_vs_chain_cross_ratio_slack() {
        let space = ModelSpace::half_plane();
        let config = sample_configuration(&space, &Region::Ball { radius: 6.0 }, 30, 37).unwrap();
        // delta large enough for K <= 2 on this sample
        let kernel = VisualKernel::new(1.0);
        let km = visual_kernel_matrix(&kernel, &config);
        assert!(km.quasi_ultrametric_k <= 2.0 + 1e-9);
        let chained = chain_metric(&km.values);
        let log16 = 16.0f64.ln() / kernel.mu.ln();
        let mut checked = 0;
        for idx in [[1, 2, 3, 4], [5, 6, 7, 8], [2, 9, 4, 11], [10, 3, 12, 7]] {
            let a = cross_ratio(&km.values, kernel.mu, idx);
            let b = cross_ratio(&chained, kernel.mu, idx);
            if let (Ok(a), Ok(b)) = (a, b) {
                let gap = (a.ratio.ln() - b.ratio.ln()).abs() / kernel.mu.ln();
                assert!(gap <= log16 + 1e-9, "gap {gap} exceeds log_mu 16 = {log16}");
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn crossing_geodesics_have_distance_zero() {
        let space = ModelSpace::half_plane();
        let xs = [
            BoundaryPoint::HalfPlaneReal { x: -2.0 },
            BoundaryPoint::HalfPlaneReal { x: -1.0 },
            BoundaryPoint::HalfPlaneReal { x: 5.0 },
            BoundaryPoint::HalfPlaneReal { x: 1.0 },
        ];
        // chi14 over (-2,1), chi23 over (-1,5): they cross
        let rep = xratio_vs_geodesic_distance(&space, &xs).unwrap();
        assert_eq!(rep.geodesic_distance, 0.0);
        assert!(rep.gap < 6.0, "gap {}", rep.gap);
    }

    #[test]
    fn symmetric_sweep_distance_grows_like_log_r() {
        let space = ModelSpace::half_plane();
        for r in [4.0f64, 40.0, 400.0] {
            let xs = [
                BoundaryPoint::HalfPlaneReal { x: -r },
                BoundaryPoint::HalfPlaneReal { x: -1.0 },
                BoundaryPoint::HalfPlaneReal { x: 1.0 },
                BoundaryPoint::HalfPlaneReal { x: r },
            ];
            let rep = xratio_vs_geodesic_distance(&space, &xs).unwrap();
            let expected = ((r * r - 1.0) / (2.0 * r)).asinh();
            assert!(
                (rep.geodesic_distance - expected).abs() < 1e-9,
                "closed form mismatch at R = {r}"
            );
            assert!(rep.gap < 3.0, "gap {} at R = {r}", rep.gap);
        }
    }

    #[test]
    fn xratio_gap_does_not_drift_with_separation() {
        // for the quadruple (-R, -1, 1, R) the gap is 2 ln(2R/(R+1)),
        // converging to 2 ln 2; past the O(1/R) transient the fit against
        // log R must be flat
        let space = ModelSpace::half_plane();
        let mut lnr = Vec::new();
        let mut gaps = Vec::new();
        let mut r = 64.0f64;
        while r < 5e6 {
            let xs = [
                BoundaryPoint::HalfPlaneReal { x: -r },
                BoundaryPoint::HalfPlaneReal { x: -1.0 },
                BoundaryPoint::HalfPlaneReal { x: 1.0 },
                BoundaryPoint::HalfPlaneReal { x: r },
            ];
            let rep = xratio_vs_geodesic_distance(&space, &xs).unwrap();
            assert!((rep.gap - 2.0 * (2.0 * r / (r + 1.0)).ln()).abs() < 1e-9);
            lnr.push(r.ln());
            gaps.push(rep.gap);
            r *= 4.0;
        }
        let (slope, _) = crate::numerics::linear_fit(&lnr, &gaps);
        assert!(slope.abs() < 0.02, "gap drifts with slope {slope}");
    }

    #[test]
    fn random_quadruples_have_bounded_gap() {
        use rand::Rng;
        let space = ModelSpace::half_plane();
        let mut rng = crate::rng::rng_from_seed(41);
        let mut max_gap = 0.0f64;
        for _ in 0..2000 {
            let mut xs: Vec<f64> = (0..4).map(|_| rng.random_range(-50.0..50.0)).collect();
            xs.sort_by(f64::total_cmp);
            if xs.windows(2).any(|w| w[1] - w[0] < 1e-3) {
                continue;
            }
            // nested order so chi14 and chi23 are disjoint
            let q = [
                BoundaryPoint::HalfPlaneReal { x: xs[0] },
                BoundaryPoint::HalfPlaneReal { x: xs[1] },
                BoundaryPoint::HalfPlaneReal { x: xs[2] },
                BoundaryPoint::HalfPlaneReal { x: xs[3] },
            ];
            let rep = xratio_vs_geodesic_distance(&space, &q).unwrap();
            max_gap = max_gap.max(rep.gap);
        }
        assert!(max_gap < 1.5, "measured gap bound {max_gap}");
    }

    #[test]
    fn tree_xratio_agrees_with_line_distance() {
        let space = ModelSpace::regular_tree(3);
        let xs = [
            BoundaryPoint::TreeEnd {
                prefix: vec![0],
                period: vec![1, 0],
            },
            BoundaryPoint::TreeEnd {
                prefix: vec![1],
                period: vec![0, 1],
            },
            BoundaryPoint::TreeEnd {
                prefix: vec![1, 2],
                period: vec![0, 2],
            },
            BoundaryPoint::TreeEnd {
                prefix: vec![0, 2],
                period: vec![1, 2],
            },
        ];
        let rep = xratio_vs_geodesic_distance(&space, &xs).unwrap();
        assert_eq!(rep.geodesic_distance, rep.geodesic_distance.round());
        // in a tree the identity is exact
        assert!(rep.gap < 1e-9, "gap {}", rep.gap);
    }

    #[test]
    fn mobius_line_distance_examples() {
        // vertical axis (0, inf) vs unit semicircle scaled: over [p q]
        let d = half_plane_line_distance(
            &BoundaryPoint::HalfPlaneReal { x: 0.0 },
            &BoundaryPoint::HalfPlaneInfinity,
            &BoundaryPoint::HalfPlaneReal { x: 1.0 },
            &BoundaryPoint::HalfPlaneReal { x: 4.0 },
        )
        .unwrap();
        assert!((d - (2.0f64 * 2.0 / 3.0).asinh()).abs() < 1e-12);
        // straddling the origin: crossing
        let d = half_plane_line_distance(
            &BoundaryPoint::HalfPlaneReal { x: 0.0 },
            &BoundaryPoint::HalfPlaneInfinity,
            &BoundaryPoint::HalfPlaneReal { x: -1.0 },
            &BoundaryPoint::HalfPlaneReal { x: 4.0 },
        )
        .unwrap();
        assert_eq!(d, 0.0);
    }
}
