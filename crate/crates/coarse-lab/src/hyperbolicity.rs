//! Gromov products, the four-point hyperbolicity constant of a finite
//! configuration, and randomized audits of the geodesic-geometry lemmas
//! whose conclusions are explicit multiples of delta.

use crate::boundary::{boundary_gromov_product, half_plane_line_distance, line_distance, BoundaryError};
use crate::matrix::SymmetricMatrix;
use crate::numerics::{acosh_from_log_cosh, log_cosh, log_sinh};
use crate::rng::{hash_to_unit, splitmix64, stream_rng};
use crate::spaces::{
    geodesic_between, offset_at_distance, project_to_geodesic, sample_in_ball, BoundaryPoint,
    Configuration, Endpoint, GeodesicLine, Model, ModelSpace, Point, SpaceError,
};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HyperbolicityError {
    #[error("could not satisfy the hypotheses of {lemma:?} within {rejections} rejected samples")]
    HypothesisUnsatisfiable { lemma: LemmaId, rejections: usize },
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
}

/// (x|y)_o = (|x-o| + |y-o| - |x-y|) / 2 from a distance matrix.
pub fn gromov_product(dist: &SymmetricMatrix, x: usize, y: usize, o: usize) -> f64 {
    (0.5 * (dist.get(x, o) + dist.get(y, o) - dist.get(x, y))).max(0.0)
}

/// Same product evaluated directly on model points.
pub fn gromov_product_points(
    space: &ModelSpace,
    x: &Point,
    y: &Point,
    o: &Point,
) -> Result<f64, SpaceError> {
    let a = space.distance(x, o)?;
    let b = space.distance(y, o)?;
    let c = space.distance(x, y)?;
    Ok((0.5 * (a + b - c)).max(0.0))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DeltaOptions {
    /// exhaustive O(n^4) scan up to this many points
    pub scan_limit: usize,
    /// number of random quadruples above the scan limit
    pub subsample: usize,
    pub seed: u64,
}

impl Default for DeltaOptions {
    fn default() -> Self {
        DeltaOptions {
            scan_limit: 300,
            subsample: 1_000_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DeltaEstimate {
    pub delta: f64,
    pub witness: [usize; 4],
    pub n_points: usize,
    pub exhaustive: bool,
}

/// Four-point defect of one quadruple: pair up the six distances into the
/// three perfect matchings and take half the gap between the largest and
/// the middle sum. Quadruples with repeated indices have defect <= 0, so
/// scanning distinct quadruples suffices.
#[inline]
fn quad_defect(d: &[f64], n: usize, q: [usize; 4]) -> f64 {
    let [i, j, k, l] = q;
    let s1 = d[i * n + j] + d[k * n + l];
    let s2 = d[i * n + k] + d[j * n + l];
    let s3 = d[i * n + l] + d[j * n + k];
    // middle value selected with exact max/min so relabeling the points
    // cannot change the result by a rounding step
    let hi = s1.max(s2).max(s3);
    let mid = s1.max(s2).min(s1.min(s2).max(s3));
    0.5 * (hi - mid)
}

fn better(a: (f64, [usize; 4]), b: (f64, [usize; 4])) -> (f64, [usize; 4]) {
    if a.0 > b.0 || (a.0 == b.0 && a.1 <= b.1) {
        a
    } else {
        b
    }
}

/// Smallest delta for which the four-point condition holds over the
/// configuration, with the lexicographically least witness quadruple.
pub fn delta_four_point(config: &Configuration) -> DeltaEstimate {
    delta_four_point_matrix(&config.dist, &DeltaOptions::default())
}

pub fn delta_four_point_matrix(dist: &SymmetricMatrix, opts: &DeltaOptions) -> DeltaEstimate {
    let n = dist.n();
    if n < 4 {
        return DeltaEstimate {
            delta: 0.0,
            witness: [0; 4],
            n_points: n,
            exhaustive: true,
        };
    }
    let d = dist.to_dense();
    if n <= opts.scan_limit {
        let (delta, witness) = (0..n - 3)
            .into_par_iter()
            .map(|i| {
                let mut best = (0.0f64, [0usize; 4]);
                let ri = &d[i * n..(i + 1) * n];
                for j in i + 1..n - 2 {
                    let rj = &d[j * n..(j + 1) * n];
                    let dij = ri[j];
                    for k in j + 1..n - 1 {
                        let rk = &d[k * n..(k + 1) * n];
                        let dik = ri[k];
                        let djk = rj[k];
                        for l in k + 1..n {
                            let s1 = dij + rk[l];
                            let s2 = dik + rj[l];
                            let s3 = ri[l] + djk;
                            let hi = s1.max(s2).max(s3);
                            let mid = s1.max(s2).min(s1.min(s2).max(s3));
                            let defect = 0.5 * (hi - mid);
                            if defect > best.0 {
                                best = (defect, [i, j, k, l]);
                            }
                        }
                    }
                }
                best
            })
            .reduce(|| (0.0, [0; 4]), better);
        DeltaEstimate {
            delta,
            witness,
            n_points: n,
            exhaustive: true,
        }
    } else {
        let chunks = opts.subsample.div_ceil(4096).max(1);
        let (delta, witness) = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = stream_rng(opts.seed, c as u64);
                let in_chunk = if c + 1 == chunks {
                    opts.subsample - 4096 * (chunks - 1)
                } else {
                    4096
                };
                let mut best = (0.0f64, [0usize; 4]);
                for _ in 0..in_chunk {
                    let mut q = [0usize; 4];
                    let mut filled = 0;
                    while filled < 4 {
                        let cand = rng.random_range(0..n);
                        if !q[..filled].contains(&cand) {
                            q[filled] = cand;
                            filled += 1;
                        }
                    }
                    q.sort_unstable();
                    let defect = quad_defect(&d, n, q);
                    best = better(best, (defect, q));
                }
                best
            })
            .reduce(|| (0.0, [0; 4]), better);
        DeltaEstimate {
            delta,
            witness,
            n_points: n,
            exhaustive: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaId {
    Contraction,
    Connectedness,
    LinedUpProduct,
    RightTriangle,
    Quadrilateral,
    ProjectionSup,
    LinearDivergence,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditOptions {
    pub trials: usize,
    pub seed: u64,
    /// offset scale for the almost-lined-up checker; its bound is 5 eta
    pub eta: f64,
    /// chain step for the connectedness checker
    pub alpha: f64,
    /// sampling ball radius; None picks a per-lemma default
    pub region_radius: Option<f64>,
    /// replace measured distances by a deterministically corrupted metric;
    /// used as the negative control
    pub corrupt: bool,
}

impl AuditOptions {
    pub fn new(trials: usize, seed: u64) -> Self {
        AuditOptions {
            trials,
            seed,
            eta: 0.5,
            alpha: 1.0,
            region_radius: None,
            corrupt: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub trial: usize,
    pub observed: f64,
    pub points: Vec<Point>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub lemma_id: LemmaId,
    pub n_trials: usize,
    pub stated_bound: f64,
    pub max_observed: f64,
    /// stated_bound - max_observed; negative exactly when there are violations
    pub margin: f64,
    pub violations: Vec<Violation>,
    pub rejections: usize,
    pub seed: u64,
}

const VIOLATION_CAP: usize = 64;
const AUDIT_TOL: f64 = 1e-6;
const REJECTION_CAP: usize = 100_000;

struct Trial {
    observed: f64,
    points: Vec<Point>,
}

struct Measure<'a> {
    space: &'a ModelSpace,
    corrupt: Option<(f64, u64)>,
}

impl Measure<'_> {
    fn d(&self, a: &Point, b: &Point) -> Result<f64, SpaceError> {
        Ok(self.warp(self.space.distance(a, b)?, a, b))
    }

    /// Applies the corruption (if any) to a distance computed elsewhere,
    /// e.g. by a closed form that never materializes the chart metric.
    fn warp(&self, d: f64, a: &Point, b: &Point) -> f64 {
        match self.corrupt {
            None => d,
            Some((delta, seed)) => {
                let h = point_hash(a) ^ point_hash(b);
                let s1 = hash_to_unit(&[h], seed);
                let s2 = hash_to_unit(&[h], seed.wrapping_add(0x9e37_79b9));
                (d * (1.0 + 0.3 * s1) + (1.0 + 20.0 * delta) * s2).max(0.0)
            }
        }
    }
}

fn point_hash(p: &Point) -> u64 {
    let fold = |acc: u64, w: u64| splitmix64(acc ^ w);
    match p {
        Point::HalfPlane { x, t } => fold(fold(1, x.to_bits()), t.to_bits()),
        Point::Hyperboloid { coords } => coords.iter().fold(2, |a, c| fold(a, c.to_bits())),
        Point::TreeVertex { word } => word.iter().fold(3, |a, &l| fold(a, l as u64)),
        Point::Heintze { n, s } => fold(n.iter().fold(4, |a, c| fold(a, c.to_bits())), s.to_bits()),
    }
}

/// Runs one of the lemma checkers over random configurations satisfying
/// its hypotheses. Each trial draws from its own RNG stream, and the
/// global rejection budget is split evenly across trials, so reports are
/// reproducible regardless of thread schedule.
pub fn audit_lemma(
    space: &ModelSpace,
    delta: f64,
    lemma: LemmaId,
    opts: &AuditOptions,
) -> Result<AuditReport, HyperbolicityError> {
    assert!(opts.trials >= 1, "need at least one trial");
    assert!(delta >= 0.0 && delta.is_finite(), "delta must be finite and non-negative");
    let stated_bound = match lemma {
        LemmaId::Contraction | LemmaId::Connectedness => 16.0 * delta,
        LemmaId::LinedUpProduct => 5.0 * opts.eta,
        LemmaId::RightTriangle => 28.0 * delta,
        LemmaId::Quadrilateral | LemmaId::LinearDivergence => 56.0 * delta,
        LemmaId::ProjectionSup => 284.0 * delta,
    };
    let meter = Measure {
        space,
        corrupt: opts.corrupt.then_some((delta, opts.seed ^ 0xc0ffee)),
    };
    let budget = (REJECTION_CAP / opts.trials).max(8);
    let outcomes: Result<Vec<(Trial, usize)>, HyperbolicityError> = (0..opts.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(opts.seed, t as u64);
            let mut rejected = 0usize;
            loop {
                let attempt = run_trial(space, delta, lemma, opts, &meter, &mut rng)?;
                match attempt {
                    Some(trial) => return Ok((trial, rejected)),
                    None => {
                        rejected += 1;
                        if rejected >= budget {
                            return Err(HyperbolicityError::HypothesisUnsatisfiable {
                                lemma,
                                rejections: rejected,
                            });
                        }
                    }
                }
            }
        })
        .collect();
    let outcomes = outcomes?;
    let mut max_observed = f64::NEG_INFINITY;
    let mut violations = Vec::new();
    let mut rejections = 0;
    for (t, (trial, rejected)) in outcomes.into_iter().enumerate() {
        rejections += rejected;
        max_observed = max_observed.max(trial.observed);
        if trial.observed > stated_bound + AUDIT_TOL && violations.len() < VIOLATION_CAP {
            violations.push(Violation {
                trial: t,
                observed: trial.observed,
                points: trial.points,
            });
        }
    }
    Ok(AuditReport {
        lemma_id: lemma,
        n_trials: opts.trials,
        stated_bound,
        max_observed,
        margin: stated_bound - max_observed,
        violations,
        rejections,
        seed: opts.seed,
    })
}

fn run_trial(
    space: &ModelSpace,
    delta: f64,
    lemma: LemmaId,
    opts: &AuditOptions,
    meter: &Measure,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Option<Trial>, HyperbolicityError> {
    let radius = opts.region_radius.unwrap_or(match lemma {
        LemmaId::Quadrilateral => (110.0 * delta).max(8.0),
        _ => 8.0,
    });
    match lemma {
        LemmaId::Contraction => trial_contraction(space, radius, meter, rng),
        LemmaId::Connectedness => trial_connectedness(space, opts.alpha, radius, meter, rng),
        LemmaId::LinedUpProduct => trial_lined_up(space, opts.eta, radius, meter, rng),
        LemmaId::RightTriangle => trial_right_triangle(space, radius, meter, rng),
        LemmaId::Quadrilateral => trial_quadrilateral(space, delta, radius, meter, rng),
        LemmaId::ProjectionSup => trial_projection_sup(space, meter, rng),
        LemmaId::LinearDivergence => trial_linear_divergence(space, meter, rng),
    }
}

fn random_segment(
    space: &ModelSpace,
    radius: f64,
    min_len: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Option<GeodesicLine>, SpaceError> {
    let a = sample_in_ball(space, radius, rng)?;
    let b = sample_in_ball(space, radius, rng)?;
    if space.distance(&a, &b)? < min_len {
        return Ok(None);
    }
    Ok(Some(geodesic_between(
        space,
        &Endpoint::Interior(a),
        &Endpoint::Interior(b),
    )?))
}

fn rand_param(space: &ModelSpace, lo: f64, hi: f64, rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let u = rng.random_range(lo..=hi);
    if matches!(space.model, Model::RegularTree { .. }) {
        u.round().clamp(lo.ceil(), hi.floor())
    } else {
        u
    }
}

/// Both forms of the projection contraction bound: along the geodesic,
/// |c - p(b)| <= |b - c| - |b - p(b)| + 16 delta, and between projections,
/// |p(b) - p(b')| <= |b - b'| + 16 delta.
fn trial_contraction(
    space: &ModelSpace,
    radius: f64,
    meter: &Measure,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Option<Trial>, HyperbolicityError> {
    let Some(sigma) = random_segment(space, radius, 1.0, rng)? else {
        return Ok(None);
    };
    let b = sample_in_ball(space, radius, rng)?;
    let b2 = sample_in_ball(space, radius, rng)?;
    let (pb, _) = project_to_geodesic(space, &sigma, &b)?;
    let (pb2, _) = project_to_geodesic(space, &sigma, &b2)?;
    let d_b_pb = meter.d(&b, &pb)?;
    let mut observed = meter.d(&pb, &pb2)? - meter.d(&b, &b2)?;
    for _ in 0..4 {
        let c = sigma.point_at(rand_param(space, sigma.lo, sigma.hi, rng));
        let along = meter.d(&c, &pb)? - meter.d(&b, &c)? + d_b_pb;
        observed = observed.max(along);
    }
    Ok(Some(Trial {
        observed,
        points: vec![b, b2, pb, pb2],
    }))
}

/// Projects an alpha-connected chain of points and measures the largest
/// gap between consecutive projections in geodesic order; the projected
/// set must stay (alpha + 16 delta)-connected.
fn trial_connectedness(
    space: &ModelSpace,
    alpha: f64,
    radius: f64,
    meter: &Measure,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Option<Trial>, HyperbolicityError> {
    let Some(sigma) = random_segment(space, radius, 2.0, rng)? else {
        return Ok(None);
    };
    let mut chain = vec![sample_in_ball(space, radius, rng)?];
    for _ in 0..12 {
        let step = rng.random_range(0.0..=alpha);
        let next = offset_at_distance(space, chain.last().unwrap(), step, rng)?;
        chain.push(next);
    }
    let mut projected: Vec<(f64, Point)> = Vec::with_capacity(chain.len());
    for x in &chain {
        let (p, u) = project_to_geodesic(space, &sigma, x)?;
        projected.push((u, p));
    }
    projected.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut maxgap = 0.0f64;
    for w in projected.windows(2) {
        maxgap = maxgap.max(meter.d(&w[0].1, &w[1].1)?);
    }
    Ok(Some(Trial {
        observed: maxgap - alpha,
        points: chain,
    }))
}

/// Three points within eta of a geodesic segment, projections in order:
/// the Gromov product (x2|x3)_{x1} must equal |x1 - x2| up to 5 eta.
fn trial_lined_up(
    space: &ModelSpace,
    eta: f64,
    radius: f64,
    meter: &Measure,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Option<Trial>, HyperbolicityError> {
    let Some(sigma) = random_segment(space, radius, (4.0 * eta).max(2.0), rng)? else {
        return Ok(None);
    };
    let mut us = [0.0f64; 3];
    for u in us.iter_mut() {
        *u = rand_param(space, sigma.lo, sigma.hi, rng);
    }
    us.sort_by(f64::total_cmp);
    let mut xs = Vec::with_capacity(3);
    for &u in &us {
        let base = sigma.point_at(u);
        let r = rng.random_range(0.0..=eta);
        xs.push(offset_at_distance(space, &base, r, rng)?);
    }
    let mut ps = [0.0f64; 3];
    for (slot, x) in ps.iter_mut().zip(&xs) {
        *slot = project_to_geodesic(space, &sigma, x)?.1;
    }
    if !(ps[0] <= ps[1] && ps[1] <= ps[2]) {
        return Ok(None);
    }
    let d12 = meter.d(&xs[0], &xs[1])?;
    let product = 0.5 * (d12 + meter.d(&xs[0], &xs[2])? - meter.d(&xs[1], &xs[2])?);
    Ok(Some(Trial {
        observed: (product - d12).abs(),
        points: xs,
    }))
}

/// a is the projection of b onto sigma and c lies on sigma: the segment
/// [b c] must pass within 28 delta of a.
fn trial_right_triangle(
    space: &ModelSpace,
    radius: f64,
    meter: &Measure,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Option<Trial>, HyperbolicityError> {
    let Some(sigma) = random_segment(space, radius, 1.0, rng)? else {
        return Ok(None);
    };
    let b = sample_in_ball(space, radius, rng)?;
    let (a, _) = project_to_geodesic(space, &sigma, &b)?;
    let c = sigma.point_at(rand_param(space, sigma.lo, sigma.hi, rng));
    if space.distance(&b, &c)? < 1e-9 {
        return Ok(None);
    }
    let bc = geodesic_between(space, &Endpoint::Interior(b.clone()), &Endpoint::Interior(c.clone()))?;
    let (t, _) = project_to_geodesic(space, &bc, &a)?;
    Ok(Some(Trial {
        observed: meter.d(&a, &t)?,
        points: vec![b, c, a, t],
    }))
}

/// Projections a_i of b_i onto a long geodesic, separated by at least
/// 138 delta (and nondegenerate, which matters when delta = 0): both a_i
/// must lie within 56 delta of the segment [b0 b1].
/// Distance from a point to a geodesic segment, computed from the two
/// endpoint distances and the segment length alone. Runs in the log
/// domain, so configurations hundreds of units wide keep full precision.
fn point_segment_distance(m0: f64, m1: f64, c: f64) -> f64 {
    if c <= 1e-12 {
        return m0.min(m1);
    }
    let (l0, l1) = (log_cosh(m0), log_cosh(m1));
    // The perpendicular foot leaves the segment exactly when one endpoint
    // distance dominates the other by more than the length allows.
    let lc = log_cosh(c);
    if l1 >= lc + l0 {
        return m0;
    }
    if l0 >= lc + l1 {
        return m1;
    }
    let f_lo = l1 + (-(l0 - c - l1).exp()).ln_1p();
    let f_hi = c + l0 + (-(l1 - c - l0).exp()).ln_1p();
    acosh_from_log_cosh(0.5 * (f_lo + f_hi) - log_sinh(c))
}

fn trial_quadrilateral(
    space: &ModelSpace,
    delta: f64,
    radius: f64,
    meter: &Measure,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Option<Trial>, HyperbolicityError> {
    if matches!(space.model, Model::RegularTree { .. }) {
        return trial_quadrilateral_tree(space, delta, radius, meter, rng);
    }
    // Normal form: the side a0 a1 runs along a fixed axis and each b_i sits
    // on the perpendicular fiber at a_i, which makes a_i its projection by
    // construction. Every configuration satisfying the hypothesis is
    // isometric to one of these, and the frame stays representable however
    // wide the quadrilateral gets, where assembling the same points from a
    // sampled chart would collapse at width ~35.
    let s0 = rng.random_range(-radius..radius);
    let s1 = rng.random_range(-radius..radius);
    let sep = (s0 - s1).abs();
    if sep < (138.0 * delta).max(1e-9) {
        return Ok(None);
    }
    let off = 12.0 * delta + 1.0;
    let l0 = rng.random_range(0.0..=off);
    let l1 = rng.random_range(0.0..=off);
    let (a0, b0, u0) = perpendicular_fiber(space, s0, l0, rng)?;
    let (a1, b1, u1) = perpendicular_fiber(space, s1, l1, rng)?;
    let align: f64 = u0.iter().zip(&u1).map(|(x, y)| x * y).sum();
    let cross01 = acosh_from_log_cosh(log_cosh(sep) + log_cosh(l1));
    let cross10 = acosh_from_log_cosh(log_cosh(sep) + log_cosh(l0));
    let ratio = l0.tanh() * l1.tanh() * align / sep.cosh();
    let c = acosh_from_log_cosh(
        log_cosh(l0) + log_cosh(l1) + log_cosh(sep) + (-ratio).ln_1p(),
    );
    let cw = meter.warp(c, &b0, &b1);
    let h0 = point_segment_distance(
        meter.warp(l0, &a0, &b0),
        meter.warp(cross01, &a0, &b1),
        cw,
    );
    let h1 = point_segment_distance(
        meter.warp(cross10, &a1, &b0),
        meter.warp(l1, &a1, &b1),
        cw,
    );
    Ok(Some(Trial {
        observed: h0.max(h1),
        points: vec![b0, b1, a0, a1],
    }))
}

/// Axis point at arc parameter `s` together with a point at distance `l`
/// along a random perpendicular direction, plus that direction as a vector
/// in the orthogonal complement (so two fibers can be compared).
fn perpendicular_fiber(
    space: &ModelSpace,
    s: f64,
    l: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(Point, Point, Vec<f64>), HyperbolicityError> {
    match &space.model {
        Model::HalfPlane => {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let t = s.exp();
            let a = Point::HalfPlane { x: 0.0, t };
            let b = Point::HalfPlane {
                x: sign * t * l.tanh(),
                t: t / l.cosh(),
            };
            Ok((a, b, vec![sign]))
        }
        Model::Hyperboloid { dim } => {
            let mut u: Vec<f64> = (0..dim - 1)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                u[0] = 1.0;
            } else {
                for x in u.iter_mut() {
                    *x /= norm;
                }
            }
            let mut a = vec![0.0; dim + 1];
            a[0] = s.cosh();
            a[1] = s.sinh();
            let mut b = vec![0.0; dim + 1];
            b[0] = l.cosh() * s.cosh();
            b[1] = l.cosh() * s.sinh();
            let sh = l.sinh();
            for (slot, x) in b[2..].iter_mut().zip(&u) {
                *slot = sh * x;
            }
            Ok((
                Point::Hyperboloid { coords: a },
                Point::Hyperboloid { coords: b },
                u,
            ))
        }
        _ => Err(HyperbolicityError::Space(SpaceError::UnsupportedGeodesic(
            "quadrilateral frame needs a continuous model".into(),
        ))),
    }
}

fn trial_quadrilateral_tree(
    space: &ModelSpace,
    delta: f64,
    radius: f64,
    meter: &Measure,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Option<Trial>, HyperbolicityError> {
    let Some(sigma) = random_segment(space, radius, (150.0 * delta).max(1.0), rng)? else {
        return Ok(None);
    };
    let span = sigma.hi - sigma.lo;
    let u0 = rand_param(space, sigma.lo, sigma.lo + 0.05 * span, rng);
    let u1 = rand_param(space, sigma.hi - 0.05 * span, sigma.hi, rng);
    let off = 12.0 * delta + 1.0;
    let b0 = offset_at_distance(space, &sigma.point_at(u0), rng.random_range(0.0..=off), rng)?;
    let b1 = offset_at_distance(space, &sigma.point_at(u1), rng.random_range(0.0..=off), rng)?;
    let (a0, _) = project_to_geodesic(space, &sigma, &b0)?;
    let (a1, _) = project_to_geodesic(space, &sigma, &b1)?;
    if space.distance(&a0, &a1)? < (138.0 * delta).max(1e-9) {
        return Ok(None);
    }
    let bb = geodesic_between(space, &Endpoint::Interior(b0.clone()), &Endpoint::Interior(b1.clone()))?;
    let (t0, _) = project_to_geodesic(space, &bb, &a0)?;
    let (t1, _) = project_to_geodesic(space, &bb, &a1)?;
    let observed = meter.d(&a0, &t0)?.max(meter.d(&a1, &t1)?);
    Ok(Some(Trial {
        observed,
        points: vec![b0, b1, a0, a1],
    }))
}

fn cauchy(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let u: f64 = rng.random_range(0.0..1.0);
    (std::f64::consts::PI * (u - 0.5)).tan()
}

fn random_end(valence: u8, rng: &mut rand_chacha::ChaCha8Rng) -> BoundaryPoint {
    let plen = rng.random_range(0..=4usize);
    let mut prefix: Vec<u8> = Vec::with_capacity(plen);
    for i in 0..plen {
        let letter = if i == 0 {
            rng.random_range(0..valence)
        } else {
            let r = rng.random_range(0..valence - 1);
            if r >= prefix[i - 1] {
                r + 1
            } else {
                r
            }
        };
        prefix.push(letter);
    }
    loop {
        let a = rng.random_range(0..valence);
        let b = rng.random_range(0..valence);
        if a != b && prefix.last() != Some(&a) {
            return BoundaryPoint::TreeEnd {
                prefix,
                period: vec![a, b],
            };
        }
    }
}

fn random_line(
    space: &ModelSpace,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Option<(GeodesicLine, [BoundaryPoint; 2])>, HyperbolicityError> {
    let ends = match &space.model {
        Model::HalfPlane => {
            let x1 = cauchy(rng);
            let x2 = cauchy(rng);
            if (x1 - x2).abs() < 1e-6 {
                return Ok(None);
            }
            [
                BoundaryPoint::HalfPlaneReal { x: x1 },
                BoundaryPoint::HalfPlaneReal { x: x2 },
            ]
        }
        Model::RegularTree { valence } => [random_end(*valence, rng), random_end(*valence, rng)],
        _ => {
            return Err(SpaceError::UnsupportedGeodesic(
                "boundary audits run on the half-plane and trees".into(),
            )
            .into())
        }
    };
    match geodesic_between(space, &Endpoint::Ideal(ends[0].clone()), &Endpoint::Ideal(ends[1].clone())) {
        Ok(line) => Ok(Some((line, ends))),
        Err(SpaceError::DegenerateEndpoints) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Largest pairwise boundary Gromov product among the four ideal ends;
/// None when two of them coincide.
fn boxtimes_sup(
    space: &ModelSpace,
    ends: &[BoundaryPoint],
    o: &Point,
) -> Result<Option<f64>, HyperbolicityError> {
    let mut sup = f64::NEG_INFINITY;
    for i in 0..ends.len() {
        for j in 0..i {
            match boundary_gromov_product(space, &ends[i], &ends[j], o) {
                Ok(p) => sup = sup.max(p),
                Err(BoundaryError::DegenerateQuadruple)
                | Err(BoundaryError::Space(SpaceError::DegenerateEndpoints)) => return Ok(None),
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(Some(sup))
}

const LINE_GRID_HALF_WIDTH: f64 = 45.0;
const LINE_GRID_POINTS: usize = 121;

/// The projection of one complete geodesic onto another stays within
/// boxtimes_sup of the four ideal ends + 284 delta of the basepoint. The
/// supremum over the line is evaluated on a parameter grid and refined by
/// golden section around the best cell, so the reported value is a
/// certified lower bound of the true supremum.
fn trial_projection_sup(
    space: &ModelSpace,
    meter: &Measure,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Option<Trial>, HyperbolicityError> {
    let Some((g1, e1)) = random_line(space, rng)? else {
        return Ok(None);
    };
    let Some((g2, e2)) = random_line(space, rng)? else {
        return Ok(None);
    };
    let o = space.basepoint();
    let ends = [e1[0].clone(), e1[1].clone(), e2[0].clone(), e2[1].clone()];
    let Some(boxtimes) = boxtimes_sup(space, &ends, &o)? else {
        return Ok(None);
    };
    let u = LINE_GRID_HALF_WIDTH;
    let mut best = (f64::NEG_INFINITY, 0.0f64);
    let probe = |s: f64| -> Result<f64, HyperbolicityError> {
        let b = g2.point_at(s);
        let (p, _) = project_to_geodesic(space, &g1, &b)?;
        Ok(meter.d(&o, &p)?)
    };
    for g in 0..LINE_GRID_POINTS {
        let s = -u + 2.0 * u * g as f64 / (LINE_GRID_POINTS - 1) as f64;
        let v = probe(s)?;
        if v > best.0 {
            best = (v, s);
        }
    }
    if !matches!(space.model, Model::RegularTree { .. }) {
        let step = 2.0 * u / (LINE_GRID_POINTS - 1) as f64;
        let mut err = None;
        let (_, neg_max) = crate::numerics::golden_section_min(
            |s| match probe(s) {
                Ok(v) => -v,
                Err(e) => {
                    err = Some(e);
                    f64::INFINITY
                }
            },
            best.1 - step,
            best.1 + step,
            1e-7,
        );
        if let Some(e) = err {
            return Err(e);
        }
        best.0 = best.0.max(-neg_max);
    }
    let witness = g2.point_at(best.1);
    Ok(Some(Trial {
        observed: best.0 - boxtimes,
        points: vec![witness],
    }))
}

/// Two complete geodesics diverge linearly: the distance between points on
/// them is at least Delta plus the larger excursion beyond the mutual
/// projection shadows, within 56 delta.
fn trial_linear_divergence(
    space: &ModelSpace,
    meter: &Measure,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Option<Trial>, HyperbolicityError> {
    let Some((g1, e1)) = random_line(space, rng)? else {
        return Ok(None);
    };
    let Some((g2, e2)) = random_line(space, rng)? else {
        return Ok(None);
    };
    let o = space.basepoint();
    let ends = [e1[0].clone(), e1[1].clone(), e2[0].clone(), e2[1].clone()];
    if boxtimes_sup(space, &ends, &o)?.is_none() {
        return Ok(None);
    }
    let big_delta = match &space.model {
        Model::HalfPlane => half_plane_line_distance(&e1[0], &e1[1], &e2[0], &e2[1])?,
        _ => line_distance(space, &g1, &g2)?,
    };
    let shadow = |target: &GeodesicLine, source: &GeodesicLine| -> Result<(f64, f64), HyperbolicityError> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let u = LINE_GRID_HALF_WIDTH;
        for g in 0..LINE_GRID_POINTS {
            let s = -u + 2.0 * u * g as f64 / (LINE_GRID_POINTS - 1) as f64;
            let (_, q) = project_to_geodesic(space, target, &source.point_at(s))?;
            lo = lo.min(q);
            hi = hi.max(q);
        }
        Ok((lo, hi))
    };
    let h1 = shadow(&g1, &g2)?;
    let h2 = shadow(&g2, &g1)?;
    let s1 = rand_param(space, -30.0, 30.0, rng);
    let s2 = rand_param(space, -30.0, 30.0, rng);
    let m1 = (h1.0 - s1).max(s1 - h1.1).max(0.0);
    let m2 = (h2.0 - s2).max(s2 - h2.1).max(0.0);
    let x1 = g1.point_at(s1);
    let x2 = g2.point_at(s2);
    let observed = big_delta + m1.max(m2) - meter.d(&x1, &x2)?;
    Ok(Some(Trial {
        observed,
        points: vec![x1, x2],
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::{sample_configuration, Region};
    use proptest::prelude::*;

    #[test]
    fn gromov_product_examples() {
        // collinear points 0, 3, 5 on the real line
        let xs = [0.0f64, 3.0, 5.0];
        let m = SymmetricMatrix::from_fn(3, |i, j| (xs[i] - xs[j]).abs());
        assert_eq!(gromov_product(&m, 1, 2, 0), 3.0);
        // degenerate pair: (x|x)_o = |x - o|
        assert_eq!(gromov_product(&m, 1, 1, 0), 3.0);
        // star tree: leaves on different branches seen from the center
        let space = ModelSpace::regular_tree(3);
        let center = Point::TreeVertex { word: vec![] };
        let x = Point::TreeVertex { word: vec![0] };
        let y = Point::TreeVertex { word: vec![1] };
        assert_eq!(gromov_product_points(&space, &x, &y, &center).unwrap(), 0.0);
    }

    #[test]
    fn unit_square_delta_is_sqrt2_minus_one() {
        let corners = [(0.0f64, 0.0f64), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let m = SymmetricMatrix::from_fn(4, |i, j| {
            let (xi, yi) = corners[i];
            let (xj, yj) = corners[j];
            ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt()
        });
        let est = delta_four_point_matrix(&m, &DeltaOptions::default());
        assert!((est.delta - (2.0f64.sqrt() - 1.0)).abs() < 1e-12);
        assert_eq!(est.witness, [0, 1, 2, 3]);
        assert!(est.exhaustive);
    }

    #[test]
    fn tiny_configurations_have_zero_delta() {
        let m = SymmetricMatrix::from_fn(1, |_, _| 0.0);
        let est = delta_four_point_matrix(&m, &DeltaOptions::default());
        assert_eq!(est.delta, 0.0);
        assert_eq!(est.n_points, 1);
        let m3 = SymmetricMatrix::from_fn(3, |i, j| if i == j { 0.0 } else { 1.0 });
        assert_eq!(delta_four_point_matrix(&m3, &DeltaOptions::default()).delta, 0.0);
    }

    #[test]
    fn tree_configurations_have_zero_delta() {
        let space = ModelSpace::regular_tree(3);
        let config = sample_configuration(&space, &Region::Ball { radius: 10.0 }, 30, 5).unwrap();
        let est = delta_four_point(&config);
        assert_eq!(est.delta, 0.0);
        assert!(est.exhaustive);
    }

    #[test]
    fn witness_realizes_the_reported_delta() {
        let space = ModelSpace::half_plane();
        let config = sample_configuration(&space, &Region::Ball { radius: 6.0 }, 60, 9).unwrap();
        let est = delta_four_point(&config);
        assert!(est.delta > 0.0);
        let d = config.dist.to_dense();
        let recomputed = quad_defect(&d, 60, est.witness);
        assert!((recomputed - est.delta).abs() < 1e-9);
    }

    #[test]
    fn subsampled_estimate_is_a_lower_bound() {
        let space = ModelSpace::half_plane();
        let config = sample_configuration(&space, &Region::Ball { radius: 6.0 }, 120, 13).unwrap();
        let exhaustive = delta_four_point_matrix(
            &config.dist,
            &DeltaOptions {
                scan_limit: 300,
                ..Default::default()
            },
        );
        let subsampled = delta_four_point_matrix(
            &config.dist,
            &DeltaOptions {
                scan_limit: 100,
                subsample: 50_000,
                seed: 3,
            },
        );
        assert!(exhaustive.exhaustive);
        assert!(!subsampled.exhaustive);
        assert!(subsampled.delta <= exhaustive.delta + 1e-15);
        assert!(subsampled.delta > 0.0);
    }

    #[test]
    fn delta_is_permutation_invariant() {
        let space = ModelSpace::half_plane();
        let config = sample_configuration(&space, &Region::Ball { radius: 5.0 }, 25, 17).unwrap();
        let n = 25;
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
        let shuffled = SymmetricMatrix::from_fn(n, |i, j| config.dist.get(perm[i], perm[j]));
        let a = delta_four_point_matrix(&config.dist, &DeltaOptions::default());
        let b = delta_four_point_matrix(&shuffled, &DeltaOptions::default());
        assert_eq!(a.delta, b.delta);
    }

    #[test]
    fn delta_is_isometry_invariant() {
        let space = ModelSpace::half_plane();
        let config = sample_configuration(&space, &Region::Ball { radius: 5.0 }, 25, 21).unwrap();
        // z -> 2z + 3 is a hyperbolic isometry of the half-plane
        let moved: Vec<Point> = config
            .points
            .iter()
            .map(|p| match p {
                Point::HalfPlane { x, t } => Point::HalfPlane {
                    x: 2.0 * x + 3.0,
                    t: 2.0 * t,
                },
                _ => unreachable!(),
            })
            .collect();
        let dist = SymmetricMatrix::from_fn(25, |i, j| {
            space.distance(&moved[i], &moved[j]).unwrap()
        });
        let a = delta_four_point_matrix(&config.dist, &DeltaOptions::default());
        let b = delta_four_point_matrix(&dist, &DeltaOptions::default());
        assert!((a.delta - b.delta).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn delta_is_monotone_under_subsets(seed in 0u64..1000, n in 5usize..10, m in 4usize..5) {
            let mut rng = crate::rng::rng_from_seed(seed);
            let full = SymmetricMatrix::from_fn(n, |i, j| {
                if i == j { 0.0 } else { rng.random_range(0.1..3.0) }
            });
            let m = m.min(n);
            let sub = SymmetricMatrix::from_fn(m, |i, j| full.get(i, j));
            let opts = DeltaOptions::default();
            prop_assert!(
                delta_four_point_matrix(&sub, &opts).delta
                    <= delta_four_point_matrix(&full, &opts).delta + 1e-15
            );
        }

        #[test]
        fn random_shuffles_preserve_delta(seed in 0u64..1000) {
            let mut rng = crate::rng::rng_from_seed(seed);
            let n = 8;
            let m = SymmetricMatrix::from_fn(n, |i, j| {
                if i == j { 0.0 } else { rng.random_range(0.1..3.0) }
            });
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
            let shuffled = SymmetricMatrix::from_fn(n, |i, j| m.get(perm[i], perm[j]));
            let opts = DeltaOptions::default();
            prop_assert_eq!(
                delta_four_point_matrix(&m, &opts).delta,
                delta_four_point_matrix(&shuffled, &opts).delta
            );
        }
    }

    #[test]
    fn contraction_audit_passes_on_the_half_plane() {
        let space = ModelSpace::half_plane();
        let report = audit_lemma(&space, 1.0, LemmaId::Contraction, &AuditOptions::new(1500, 2)).unwrap();
        assert!(report.violations.is_empty(), "max {}", report.max_observed);
        assert!(report.max_observed <= 16.0);
        assert!((report.margin - (16.0 - report.max_observed)).abs() < 1e-12);
    }

    #[test]
    fn contraction_audit_is_exact_on_trees() {
        let space = ModelSpace::regular_tree(3);
        let report = audit_lemma(&space, 0.0, LemmaId::Contraction, &AuditOptions::new(600, 4)).unwrap();
        assert!(report.max_observed <= 1e-9, "max {}", report.max_observed);
        assert!(report.violations.is_empty());
    }

    #[test]
    fn connectedness_audit_passes() {
        let space = ModelSpace::half_plane();
        let report =
            audit_lemma(&space, 1.0, LemmaId::Connectedness, &AuditOptions::new(800, 6)).unwrap();
        assert!(report.violations.is_empty(), "max {}", report.max_observed);
    }

    #[test]
    fn exactly_lined_up_points_have_zero_defect() {
        let space = ModelSpace::half_plane();
        let mut opts = AuditOptions::new(400, 8);
        opts.eta = 0.0;
        let report = audit_lemma(&space, 1.0, LemmaId::LinedUpProduct, &opts).unwrap();
        assert_eq!(report.stated_bound, 0.0);
        assert!(report.max_observed <= 1e-9, "max {}", report.max_observed);
    }

    #[test]
    fn lined_up_audit_passes_with_offsets() {
        let space = ModelSpace::half_plane();
        let mut opts = AuditOptions::new(1200, 10);
        opts.eta = 0.7;
        let report = audit_lemma(&space, 1.0, LemmaId::LinedUpProduct, &opts).unwrap();
        assert!(report.violations.is_empty(), "max {}", report.max_observed);
        assert!(report.max_observed <= 3.5);
    }

    #[test]
    fn right_triangle_audit_passes() {
        let space = ModelSpace::half_plane();
        let report =
            audit_lemma(&space, 1.0, LemmaId::RightTriangle, &AuditOptions::new(1000, 12)).unwrap();
        assert!(report.violations.is_empty(), "max {}", report.max_observed);
        let space3 = ModelSpace::hyperboloid(3);
        let report3 =
            audit_lemma(&space3, 1.0, LemmaId::RightTriangle, &AuditOptions::new(300, 14)).unwrap();
        assert!(report3.violations.is_empty(), "max {}", report3.max_observed);
    }

    #[test]
    fn segment_distance_formula_matches_projection() {
        let space = ModelSpace::half_plane();
        let mut rng = stream_rng(77, 0);
        let mut checked = 0;
        while checked < 200 {
            let p = sample_in_ball(&space, 5.0, &mut rng).unwrap();
            let b0 = sample_in_ball(&space, 5.0, &mut rng).unwrap();
            let b1 = sample_in_ball(&space, 5.0, &mut rng).unwrap();
            if space.distance(&b0, &b1).unwrap() < 1e-3 {
                continue;
            }
            let seg = geodesic_between(
                &space,
                &Endpoint::Interior(b0.clone()),
                &Endpoint::Interior(b1.clone()),
            )
            .unwrap();
            let (foot, _) = project_to_geodesic(&space, &seg, &p).unwrap();
            let via_projection = space.distance(&p, &foot).unwrap();
            let via_sides = point_segment_distance(
                space.distance(&p, &b0).unwrap(),
                space.distance(&p, &b1).unwrap(),
                space.distance(&b0, &b1).unwrap(),
            );
            assert!(
                (via_projection - via_sides).abs() < 1e-5,
                "{via_projection} vs {via_sides}"
            );
            checked += 1;
        }
    }

    #[test]
    fn segment_distance_handles_feet_outside_the_segment() {
        // Collinear points on the vertical axis: p at height e^0, segment
        // from e^2 to e^5. The nearest point is the endpoint at distance 2.
        let d = point_segment_distance(2.0, 5.0, 3.0);
        assert!((d - 2.0).abs() < 1e-9, "{d}");
        // p between the endpoints: distance 0.
        let d = point_segment_distance(2.0, 3.0, 5.0);
        assert!(d.abs() < 1e-6, "{d}");
        // Degenerate segment.
        let d = point_segment_distance(1.0, 1.0, 0.0);
        assert!((d - 1.0).abs() < 1e-12, "{d}");
    }

    #[test]
    fn quadrilateral_audit_passes() {
        let tree = ModelSpace::regular_tree(3);
        let report =
            audit_lemma(&tree, 0.0, LemmaId::Quadrilateral, &AuditOptions::new(400, 16)).unwrap();
        assert!(report.max_observed <= 1e-9, "max {}", report.max_observed);
        let space = ModelSpace::half_plane();
        let report =
            audit_lemma(&space, 1.0, LemmaId::Quadrilateral, &AuditOptions::new(60, 18)).unwrap();
        assert!(report.violations.is_empty(), "max {}", report.max_observed);
    }

    #[test]
    fn quadrilateral_hypothesis_can_be_unsatisfiable() {
        let space = ModelSpace::half_plane();
        let mut opts = AuditOptions::new(10, 20);
        opts.region_radius = Some(5.0);
        let err = audit_lemma(&space, 1.0, LemmaId::Quadrilateral, &opts).unwrap_err();
        assert!(matches!(
            err,
            HyperbolicityError::HypothesisUnsatisfiable { lemma: LemmaId::Quadrilateral, .. }
        ));
    }

    #[test]
    fn projection_sup_audit_passes() {
        let space = ModelSpace::half_plane();
        let report =
            audit_lemma(&space, 1.0, LemmaId::ProjectionSup, &AuditOptions::new(120, 22)).unwrap();
        assert!(report.violations.is_empty(), "max {}", report.max_observed);
        let tree = ModelSpace::regular_tree(3);
        let report =
            audit_lemma(&tree, 0.0, LemmaId::ProjectionSup, &AuditOptions::new(200, 24)).unwrap();
        assert!(report.max_observed <= 1e-9, "max {}", report.max_observed);
    }

    #[test]
    fn linear_divergence_audit_passes() {
        let space = ModelSpace::half_plane();
        let report =
            audit_lemma(&space, 1.0, LemmaId::LinearDivergence, &AuditOptions::new(150, 26)).unwrap();
        assert!(report.violations.is_empty(), "max {}", report.max_observed);
        let tree = ModelSpace::regular_tree(3);
        let report =
            audit_lemma(&tree, 0.0, LemmaId::LinearDivergence, &AuditOptions::new(150, 28)).unwrap();
        assert!(report.max_observed <= 1e-9, "max {}", report.max_observed);
    }

    #[test]
    fn corrupted_metric_triggers_violations() {
        let space = ModelSpace::half_plane();
        let mut opts = AuditOptions::new(400, 30);
        opts.corrupt = true;
        let report = audit_lemma(&space, 1.0, LemmaId::Contraction, &opts).unwrap();
        assert!(!report.violations.is_empty());
        assert!(report.max_observed > report.stated_bound + AUDIT_TOL);
    }

    #[test]
    fn audit_reports_are_reproducible() {
        let space = ModelSpace::half_plane();
        let opts = AuditOptions::new(40, 32);
        let a = audit_lemma(&space, 1.0, LemmaId::ProjectionSup, &opts).unwrap();
        let b = audit_lemma(&space, 1.0, LemmaId::ProjectionSup, &opts).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn audit_report_serializes_with_its_bound() {
        let space = ModelSpace::regular_tree(3);
        let report =
            audit_lemma(&space, 0.0, LemmaId::RightTriangle, &AuditOptions::new(50, 34)).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"lemma_id\":\"right_triangle\""));
        assert!(json.contains("\"stated_bound\""));
        assert!(json.contains("\"max_observed\""));
    }
}
