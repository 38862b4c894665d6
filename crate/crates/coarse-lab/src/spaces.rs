//! Pointed hyperbolic model spaces: the upper half-plane, hyperboloids of
//! any dimension, regular trees, and the logarithmic model of Heintze
//! groups. Each exposes exact distances, geodesic parametrizations,
//! closest-point projections, and ideal boundary coordinates.

use crate::heintze::{log_homogeneous_quasimetric, HeintzeSpec};
use crate::matrix::SymmetricMatrix;
use crate::numerics::{
    acosh1p, acosh_from_log_cosh, golden_section_min, log_add_exp, log_cosh, log_cosh_m1,
    GOLDEN_TOL,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("points belong to different models")]
    ModelMismatch,
    #[error("geodesic endpoints coincide")]
    DegenerateEndpoints,
    #[error("invalid sampling region: {0}")]
    InvalidRegion(String),
    #[error("invalid point: {0}")]
    InvalidPoint(String),
    #[error("projection failed to bracket a minimum")]
    NonConvergence,
    #[error("geodesic not representable in this model: {0}")]
    UnsupportedGeodesic(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    HalfPlane,
    Hyperboloid { dim: usize },
    RegularTree { valence: u8 },
    HeintzeLog { spec: HeintzeSpec },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpace {
    pub model: Model,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Point {
    HalfPlane { x: f64, t: f64 },
    Hyperboloid { coords: Vec<f64> },
    TreeVertex { word: Vec<u8> },
    Heintze { n: Vec<f64>, s: f64 },
}

/// Ideal boundary coordinates. The half-plane boundary is R plus infinity;
/// tree ends are eventually periodic rays from the root; the Heintze-log
/// boundary is N plus the distinguished fixed point omega.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPoint {
    HalfPlaneReal { x: f64 },
    HalfPlaneInfinity,
    TreeEnd { prefix: Vec<u8>, period: Vec<u8> },
    HeintzeN { n: Vec<f64> },
    HeintzeOmega,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Endpoint {
    Interior(Point),
    Ideal(BoundaryPoint),
}

impl ModelSpace {
    pub fn half_plane() -> Self {
        ModelSpace {
            model: Model::HalfPlane,
        }
    }

    pub fn hyperboloid(dim: usize) -> Self {
        assert!(dim >= 2, "hyperboloid dimension must be at least 2");
        ModelSpace {
            model: Model::Hyperboloid { dim },
        }
    }

    pub fn regular_tree(valence: u8) -> Self {
        assert!(valence >= 2, "tree valence must be at least 2");
        ModelSpace {
            model: Model::RegularTree { valence },
        }
    }

    pub fn heintze_log(spec: HeintzeSpec) -> Self {
        ModelSpace {
            model: Model::HeintzeLog { spec },
        }
    }

    pub fn basepoint(&self) -> Point {
        match &self.model {
            Model::HalfPlane => Point::HalfPlane { x: 0.0, t: 1.0 },
            Model::Hyperboloid { dim } => {
                let mut coords = vec![0.0; dim + 1];
                coords[0] = 1.0;
                Point::Hyperboloid { coords }
            }
            Model::RegularTree { .. } => Point::TreeVertex { word: Vec::new() },
            Model::HeintzeLog { spec } => Point::Heintze {
                n: vec![0.0; spec.dim_n()],
                s: 0.0,
            },
        }
    }

    pub fn validate_point(&self, p: &Point) -> Result<(), SpaceError> {
        match (&self.model, p) {
            (Model::HalfPlane, Point::HalfPlane { t, .. }) => {
                if *t > 0.0 {
                    Ok(())
                } else {
                    Err(SpaceError::InvalidPoint(format!("t = {t} must be positive")))
                }
            }
            (Model::Hyperboloid { dim }, Point::Hyperboloid { coords }) => {
                if coords.len() != dim + 1 {
                    return Err(SpaceError::InvalidPoint(format!(
                        "expected {} Minkowski coordinates, got {}",
                        dim + 1,
                        coords.len()
                    )));
                }
                let q = minkowski(coords, coords);
                if (q + 1.0).abs() > 1e-9 {
                    return Err(SpaceError::InvalidPoint(format!(
                        "Minkowski norm {q} is not -1"
                    )));
                }
                if coords[0] <= 0.0 {
                    return Err(SpaceError::InvalidPoint("lower sheet".into()));
                }
                Ok(())
            }
            (Model::RegularTree { valence }, Point::TreeVertex { word }) => {
                validate_word(word, *valence)
            }
            (Model::HeintzeLog { spec }, Point::Heintze { n, .. }) => {
                if n.len() == spec.dim_n() {
                    Ok(())
                } else {
                    Err(SpaceError::InvalidPoint(format!(
                        "expected {} N-coordinates, got {}",
                        spec.dim_n(),
                        n.len()
                    )))
                }
            }
            _ => Err(SpaceError::ModelMismatch),
        }
    }

    /// Exact distance between interior points of the model.
    ///
    /// The HeintzeLog value is a pseudo-quasimetric: it vanishes on pairs
    /// whose N-coordinates have not yet separated at their common height,
    /// and satisfies the triangle inequality only up to the additive
    /// constant 2 ln K, with K the quasi-ultrametric constant of the gauge.
    pub fn distance(&self, a: &Point, b: &Point) -> Result<f64, SpaceError> {
        match (&self.model, a, b) {
            (Model::HalfPlane, Point::HalfPlane { x: x1, t: t1 }, Point::HalfPlane { x: x2, t: t2 }) => {
                Ok(half_plane_distance(*x1, *t1, *x2, *t2))
            }
            (Model::Hyperboloid { .. }, Point::Hyperboloid { coords: p }, Point::Hyperboloid { coords: q }) => {
                if p.len() != q.len() {
                    return Err(SpaceError::ModelMismatch);
                }
                Ok(hyperboloid_distance(p, q))
            }
            (Model::RegularTree { .. }, Point::TreeVertex { word: u }, Point::TreeVertex { word: v }) => {
                let l = lcp_len(u, v);
                Ok(((u.len() - l) + (v.len() - l)) as f64)
            }
            (Model::HeintzeLog { spec }, Point::Heintze { n: n1, s: s1 }, Point::Heintze { n: n2, s: s2 }) => {
                let log_rho = log_homogeneous_quasimetric(spec, n1, n2);
                Ok(2.0 * log_rho.max(*s1).max(*s2) - s1 - s2)
            }
            _ => Err(SpaceError::ModelMismatch),
        }
    }
}

pub fn half_plane_distance(x1: f64, t1: f64, x2: f64, t2: f64) -> f64 {
    let dx = x1 - x2;
    let dt = t1 - t2;
    acosh1p((dx * dx + dt * dt) / (2.0 * t1 * t2))
}

fn minkowski(p: &[f64], q: &[f64]) -> f64 {
    let mut s = -p[0] * q[0];
    for i in 1..p.len() {
        s += p[i] * q[i];
    }
    s
}

fn hyperboloid_distance(p: &[f64], q: &[f64]) -> f64 {
    // -<p,q> = 1 + <p-q, p-q>/2 keeps precision for nearby points
    let mut sq = 0.0;
    for i in 1..p.len() {
        let d = p[i] - q[i];
        sq += d * d;
    }
    let d0 = p[0] - q[0];
    acosh1p((0.5 * (sq - d0 * d0)).max(0.0))
}

fn lcp_len(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

fn validate_word(word: &[u8], valence: u8) -> Result<(), SpaceError> {
    for (i, &c) in word.iter().enumerate() {
        if c >= valence {
            return Err(SpaceError::InvalidPoint(format!(
                "letter {c} exceeds valence {valence}"
            )));
        }
        if i > 0 && word[i - 1] == c {
            return Err(SpaceError::InvalidPoint("word is not reduced".into()));
        }
    }
    Ok(())
}

/// Eventually periodic end descriptor, expanded letter by letter.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeEnd {
    pub prefix: Vec<u8>,
    pub period: Vec<u8>,
}

impl TreeEnd {
    pub fn new(prefix: Vec<u8>, period: Vec<u8>, valence: u8) -> Result<Self, SpaceError> {
        if period.is_empty() {
            return Err(SpaceError::InvalidPoint("empty end period".into()));
        }
        validate_word(&prefix, valence)?;
        validate_word(&period, valence)?;
        if let (Some(&lp), Some(&fp)) = (prefix.last(), period.first()) {
            if lp == fp {
                return Err(SpaceError::InvalidPoint("end word is not reduced".into()));
            }
        }
        if period.last() == period.first() && period.len() > 1 {
            return Err(SpaceError::InvalidPoint("end word is not reduced".into()));
        }
        if period.len() == 1 && !prefix.is_empty() && prefix.last() == period.first() {
            return Err(SpaceError::InvalidPoint("end word is not reduced".into()));
        }
        if period.len() == 1 {
            // a single repeating letter is never reduced
            return Err(SpaceError::InvalidPoint(
                "period of length 1 repeats a letter".into(),
            ));
        }
        Ok(TreeEnd { prefix, period })
    }

    pub fn letter(&self, i: usize) -> u8 {
        if i < self.prefix.len() {
            self.prefix[i]
        } else {
            self.period[(i - self.prefix.len()) % self.period.len()]
        }
    }

    pub fn same_end(&self, other: &TreeEnd) -> bool {
        let horizon = self.prefix.len().max(other.prefix.len())
            + self.period.len() * other.period.len()
            + self.period.len().max(other.period.len());
        (0..horizon).all(|i| self.letter(i) == other.letter(i))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TreeTarget {
    Vertex(Vec<u8>),
    End(TreeEnd),
}

impl TreeTarget {
    fn lcp_with(&self, word: &[u8]) -> usize {
        match self {
            TreeTarget::Vertex(w) => lcp_len(word, w),
            TreeTarget::End(e) => word
                .iter()
                .enumerate()
                .take_while(|(i, &c)| e.letter(*i) == c)
                .count(),
        }
    }

    /// Vertex at distance k from `anchor` along the path toward the target.
    fn step(&self, anchor: &[u8], k: usize) -> Vec<u8> {
        let l = self.lcp_with(anchor);
        let down = anchor.len() - l;
        if k <= down {
            anchor[..anchor.len() - k].to_vec()
        } else {
            let up = k - down;
            match self {
                TreeTarget::Vertex(w) => {
                    let stop = (l + up).min(w.len());
                    w[..stop].to_vec()
                }
                TreeTarget::End(e) => {
                    let mut out = anchor[..l].to_vec();
                    for i in l..l + up {
                        out.push(e.letter(i));
                    }
                    out
                }
            }
        }
    }

    fn distance_from(&self, anchor: &[u8]) -> f64 {
        match self {
            TreeTarget::Vertex(w) => {
                let l = lcp_len(anchor, w);
                ((anchor.len() - l) + (w.len() - l)) as f64
            }
            TreeTarget::End(_) => f64::INFINITY,
        }
    }
}

#[derive(Clone, Debug)]
pub enum GeodesicKind {
    /// (x, t0 e^{orient u}).
    HalfPlaneVertical { x: f64, t0: f64, orient: f64 },
    /// (c + r tanh w, r sech w) with w = orient u - s0.
    HalfPlaneCircle { c: f64, r: f64, s0: f64, orient: f64 },
    /// cosh(u) p + sinh(u) v with <p,v> = 0, <v,v> = 1.
    Hyperboloid { p: Vec<f64>, v: Vec<f64> },
    /// Integer path through `anchor`; positive parameters step toward `pos`.
    Tree {
        anchor: Vec<u8>,
        neg: Option<TreeTarget>,
        pos: TreeTarget,
    },
    /// (n, h0 + orient u), the vertical toward or away from omega.
    HeintzeVertical { n: Vec<f64>, h0: f64, orient: f64 },
    /// Descends from the apex on both sides: left leg in n_neg, right in
    /// n_pos. Parameters are shifted so 0 sits at `shift` past the apex.
    HeintzeV {
        n_neg: Vec<f64>,
        n_pos: Vec<f64>,
        apex: f64,
        shift: f64,
    },
}

#[derive(Clone, Debug)]
pub struct GeodesicLine {
    pub model: Model,
    pub kind: GeodesicKind,
    pub lo: f64,
    pub hi: f64,
}

impl GeodesicLine {
    pub fn point_at(&self, u: f64) -> Point {
        let u = u.clamp(self.lo, self.hi);
        match &self.kind {
            GeodesicKind::HalfPlaneVertical { x, t0, orient } => Point::HalfPlane {
                x: *x,
                t: t0 * (orient * u).exp(),
            },
            GeodesicKind::HalfPlaneCircle { c, r, s0, orient } => {
                let w = orient * u - s0;
                Point::HalfPlane {
                    x: c + r * w.tanh(),
                    t: r / w.cosh(),
                }
            }
            GeodesicKind::Hyperboloid { p, v } => {
                let (ch, sh) = (u.cosh(), u.sinh());
                Point::Hyperboloid {
                    coords: p.iter().zip(v).map(|(pi, vi)| ch * pi + sh * vi).collect(),
                }
            }
            GeodesicKind::Tree { anchor, neg, pos } => {
                let k = u.round();
                let word = if k >= 0.0 {
                    pos.step(anchor, k as usize)
                } else {
                    match neg {
                        Some(t) => t.step(anchor, (-k) as usize),
                        None => anchor.clone(),
                    }
                };
                Point::TreeVertex { word }
            }
            GeodesicKind::HeintzeVertical { n, h0, orient } => Point::Heintze {
                n: n.clone(),
                s: h0 + orient * u,
            },
            GeodesicKind::HeintzeV {
                n_neg,
                n_pos,
                apex,
                shift,
            } => {
                let w = u + shift;
                if w <= 0.0 {
                    Point::Heintze {
                        n: n_neg.clone(),
                        s: apex + w,
                    }
                } else {
                    Point::Heintze {
                        n: n_pos.clone(),
                        s: apex - w,
                    }
                }
            }
        }
    }
}

/// Unit-speed geodesic through the two endpoints (interior or ideal).
/// Parameter 0 sits at the first endpoint when it is interior, and at the
/// projection of the basepoint when both endpoints are ideal.
pub fn geodesic_between(
    space: &ModelSpace,
    a: &Endpoint,
    b: &Endpoint,
) -> Result<GeodesicLine, SpaceError> {
    if a == b {
        return Err(SpaceError::DegenerateEndpoints);
    }
    match &space.model {
        Model::HalfPlane => half_plane_geodesic(space, a, b),
        Model::Hyperboloid { .. } => match (a, b) {
            (Endpoint::Interior(p), Endpoint::Interior(q)) => hyperboloid_segment(space, p, q),
            _ => Err(SpaceError::UnsupportedGeodesic(
                "hyperboloid ideal endpoints are not represented; use rays".into(),
            )),
        },
        Model::RegularTree { valence } => tree_geodesic(space, *valence, a, b),
        Model::HeintzeLog { spec } => heintze_geodesic(space, spec, a, b),
    }
}

fn half_plane_geodesic(
    space: &ModelSpace,
    a: &Endpoint,
    b: &Endpoint,
) -> Result<GeodesicLine, SpaceError> {
    use BoundaryPoint::*;
    use Endpoint::*;
    let model = space.model.clone();
    let inf = f64::INFINITY;
    // parameter of (x,t) inside the circle parametrization
    let circle_param = |c: f64, r: f64, x: f64, t: f64| -> f64 {
        // w = atanh((x-c)/r), but via t for stability near the apex
        let ratio = ((x - c) / r).clamp(-1.0, 1.0);
        let w = ratio.atanh();
        if w.is_finite() {
            w
        } else {
            (r / t).ln().copysign(ratio) + 0.0
        }
    };
    match (a, b) {
        (Ideal(p), Ideal(q)) => {
            let (xa, xb) = match (p, q) {
                (HalfPlaneReal { x: xa }, HalfPlaneReal { x: xb }) => (Some(*xa), Some(*xb)),
                (HalfPlaneReal { x: xa }, HalfPlaneInfinity) => (Some(*xa), None),
                (HalfPlaneInfinity, HalfPlaneReal { x: xb }) => (None, Some(*xb)),
                _ => return Err(SpaceError::ModelMismatch),
            };
            match (xa, xb) {
                (Some(xa), Some(xb)) => {
                    if xa == xb {
                        return Err(SpaceError::DegenerateEndpoints);
                    }
                    let c = 0.5 * (xa + xb);
                    let r = 0.5 * (xb - xa).abs();
                    let orient = if xb > xa { 1.0 } else { -1.0 };
                    let right = c + r;
                    let left = c - r;
                    let s0 = 0.5 * ((right * right + 1.0).ln() - (left * left + 1.0).ln());
                    Ok(GeodesicLine {
                        model,
                        kind: GeodesicKind::HalfPlaneCircle { c, r, s0, orient },
                        lo: -inf,
                        hi: inf,
                    })
                }
                (Some(x), None) | (None, Some(x)) => {
                    let orient = if xa.is_none() { -1.0 } else { 1.0 };
                    let t0 = (x * x + 1.0).sqrt();
                    Ok(GeodesicLine {
                        model,
                        kind: GeodesicKind::HalfPlaneVertical { x, t0, orient },
                        lo: -inf,
                        hi: inf,
                    })
                }
                (None, None) => Err(SpaceError::DegenerateEndpoints),
            }
        }
        (Interior(p), Ideal(xi)) | (Ideal(xi), Interior(p)) => {
            let toward_second = matches!((a, b), (Interior(_), Ideal(_)));
            let (px, pt) = match p {
                Point::HalfPlane { x, t } => (*x, *t),
                _ => return Err(SpaceError::ModelMismatch),
            };
            let kind = match xi {
                HalfPlaneInfinity => GeodesicKind::HalfPlaneVertical {
                    x: px,
                    t0: pt,
                    orient: if toward_second { 1.0 } else { -1.0 },
                },
                HalfPlaneReal { x: xi } => {
                    if (px - xi).abs() < 1e-300 {
                        // vertical ray descending to the foot
                        GeodesicKind::HalfPlaneVertical {
                            x: px,
                            t0: pt,
                            orient: if toward_second { -1.0 } else { 1.0 },
                        }
                    } else {
                        let c = (xi * xi - px * px - pt * pt) / (2.0 * (xi - px));
                        let r = ((px - c) * (px - c) + pt * pt).sqrt();
                        let wp = circle_param(c, r, px, pt);
                        let toward_right = *xi > c;
                        let orient = match (toward_second, toward_right) {
                            (true, true) | (false, false) => 1.0,
                            _ => -1.0,
                        };
                        GeodesicKind::HalfPlaneCircle {
                            c,
                            r,
                            s0: -wp,
                            orient,
                        }
                    }
                }
                _ => return Err(SpaceError::ModelMismatch),
            };
            Ok(GeodesicLine {
                model,
                kind,
                lo: if toward_second { 0.0 } else { -inf },
                hi: if toward_second { inf } else { 0.0 },
            })
        }
        (Interior(p), Interior(q)) => {
            let (px, pt, qx, qt) = match (p, q) {
                (Point::HalfPlane { x: px, t: pt }, Point::HalfPlane { x: qx, t: qt }) => {
                    (*px, *pt, *qx, *qt)
                }
                _ => return Err(SpaceError::ModelMismatch),
            };
            if px == qx {
                let span = (qt / pt).ln();
                Ok(GeodesicLine {
                    model,
                    kind: GeodesicKind::HalfPlaneVertical {
                        x: px,
                        t0: pt,
                        orient: span.signum(),
                    },
                    lo: 0.0,
                    hi: span.abs(),
                })
            } else {
                let c = (px * px + pt * pt - qx * qx - qt * qt) / (2.0 * (px - qx));
                let r = ((px - c) * (px - c) + pt * pt).sqrt();
                let wp = circle_param(c, r, px, pt);
                let wq = circle_param(c, r, qx, qt);
                let orient = (wq - wp).signum();
                Ok(GeodesicLine {
                    model,
                    kind: GeodesicKind::HalfPlaneCircle {
                        c,
                        r,
                        s0: -wp,
                        orient,
                    },
                    lo: 0.0,
                    hi: (wq - wp).abs(),
                })
            }
        }
    }
}

fn hyperboloid_segment(space: &ModelSpace, p: &Point, q: &Point) -> Result<GeodesicLine, SpaceError> {
    let (pc, qc) = match (p, q) {
        (Point::Hyperboloid { coords: pc }, Point::Hyperboloid { coords: qc }) => (pc, qc),
        _ => return Err(SpaceError::ModelMismatch),
    };
    let d = hyperboloid_distance(pc, qc);
    if d == 0.0 {
        return Err(SpaceError::DegenerateEndpoints);
    }
    let sh = d.sinh();
    let ch = d.cosh();
    let v: Vec<f64> = pc
        .iter()
        .zip(qc)
        .map(|(pi, qi)| (qi - ch * pi) / sh)
        .collect();
    Ok(GeodesicLine {
        model: space.model.clone(),
        kind: GeodesicKind::Hyperboloid {
            p: pc.clone(),
            v,
        },
        lo: 0.0,
        hi: d,
    })
}

/// Unit-speed ray from `p` in the unit tangent direction `v` (Minkowski
/// orthogonal to `p`). Used where ideal hyperboloid endpoints would be.
pub fn hyperboloid_ray(space: &ModelSpace, p: &Point, v: Vec<f64>) -> Result<GeodesicLine, SpaceError> {
    let pc = match p {
        Point::Hyperboloid { coords } => coords,
        _ => return Err(SpaceError::ModelMismatch),
    };
    if (minkowski(pc, &v)).abs() > 1e-9 || (minkowski(&v, &v) - 1.0).abs() > 1e-9 {
        return Err(SpaceError::InvalidPoint(
            "direction must be unit and tangent".into(),
        ));
    }
    Ok(GeodesicLine {
        model: space.model.clone(),
        kind: GeodesicKind::Hyperboloid { p: pc.clone(), v },
        lo: 0.0,
        hi: f64::INFINITY,
    })
}

fn tree_geodesic(
    space: &ModelSpace,
    valence: u8,
    a: &Endpoint,
    b: &Endpoint,
) -> Result<GeodesicLine, SpaceError> {
    let model = space.model.clone();
    let to_target = |e: &Endpoint| -> Result<TreeTarget, SpaceError> {
        match e {
            Endpoint::Interior(Point::TreeVertex { word }) => {
                validate_word(word, valence)?;
                Ok(TreeTarget::Vertex(word.clone()))
            }
            Endpoint::Ideal(BoundaryPoint::TreeEnd { prefix, period }) => Ok(TreeTarget::End(
                TreeEnd::new(prefix.clone(), period.clone(), valence)?,
            )),
            _ => Err(SpaceError::ModelMismatch),
        }
    };
    let ta = to_target(a)?;
    let tb = to_target(b)?;
    match (&ta, &tb) {
        (TreeTarget::Vertex(u), TreeTarget::Vertex(v)) => {
            if u == v {
                return Err(SpaceError::DegenerateEndpoints);
            }
            let d = tb.distance_from(u);
            Ok(GeodesicLine {
                model,
                kind: GeodesicKind::Tree {
                    anchor: u.clone(),
                    neg: None,
                    pos: tb,
                },
                lo: 0.0,
                hi: d,
            })
        }
        (TreeTarget::Vertex(u), TreeTarget::End(_)) => Ok(GeodesicLine {
            model,
            kind: GeodesicKind::Tree {
                anchor: u.clone(),
                neg: None,
                pos: tb,
            },
            lo: 0.0,
            hi: f64::INFINITY,
        }),
        (TreeTarget::End(_), TreeTarget::Vertex(v)) => Ok(GeodesicLine {
            model,
            kind: GeodesicKind::Tree {
                anchor: v.clone(),
                neg: Some(ta),
                pos: tb,
            },
            lo: -f64::INFINITY,
            hi: 0.0,
        }),
        (TreeTarget::End(e1), TreeTarget::End(e2)) => {
            if e1.same_end(e2) {
                return Err(SpaceError::DegenerateEndpoints);
            }
            // confluence vertex: longest common prefix of the two rays
            let mut l = 0;
            while e1.letter(l) == e2.letter(l) {
                l += 1;
            }
            let anchor: Vec<u8> = (0..l).map(|i| e1.letter(i)).collect();
            Ok(GeodesicLine {
                model,
                kind: GeodesicKind::Tree {
                    anchor,
                    neg: Some(ta),
                    pos: tb,
                },
                lo: -f64::INFINITY,
                hi: f64::INFINITY,
            })
        }
    }
}

fn heintze_geodesic(
    space: &ModelSpace,
    spec: &HeintzeSpec,
    a: &Endpoint,
    b: &Endpoint,
) -> Result<GeodesicLine, SpaceError> {
    use BoundaryPoint::*;
    use Endpoint::*;
    let model = space.model.clone();
    let inf = f64::INFINITY;
    match (a, b) {
        (Interior(Point::Heintze { n, s }), Ideal(HeintzeOmega)) => Ok(GeodesicLine {
            model,
            kind: GeodesicKind::HeintzeVertical {
                n: n.clone(),
                h0: *s,
                orient: 1.0,
            },
            lo: 0.0,
            hi: inf,
        }),
        (Ideal(HeintzeOmega), Interior(Point::Heintze { n, s })) => Ok(GeodesicLine {
            model,
            kind: GeodesicKind::HeintzeVertical {
                n: n.clone(),
                h0: *s,
                orient: -1.0,
            },
            lo: -inf,
            hi: 0.0,
        }),
        (Interior(Point::Heintze { n, s }), Ideal(HeintzeN { n: nb }))
        | (Ideal(HeintzeN { n: nb }), Interior(Point::Heintze { n, s })) => {
            let toward_second = matches!(a, Interior(_));
            if n == nb {
                // descend straight toward the boundary point under the ray
                return Ok(GeodesicLine {
                    model,
                    kind: GeodesicKind::HeintzeVertical {
                        n: n.clone(),
                        h0: *s,
                        orient: if toward_second { -1.0 } else { 1.0 },
                    },
                    lo: if toward_second { 0.0 } else { -inf },
                    hi: if toward_second { inf } else { 0.0 },
                });
            }
            let apex = log_homogeneous_quasimetric(spec, n, nb);
            if *s > apex {
                return Err(SpaceError::UnsupportedGeodesic(
                    "log-model geodesic needs the interior point at or below the apex".into(),
                ));
            }
            // V from (n, s) over the apex, then down toward nb
            if toward_second {
                Ok(GeodesicLine {
                    model,
                    kind: GeodesicKind::HeintzeV {
                        n_neg: n.clone(),
                        n_pos: nb.clone(),
                        apex,
                        shift: s - apex,
                    },
                    lo: 0.0,
                    hi: inf,
                })
            } else {
                Ok(GeodesicLine {
                    model,
                    kind: GeodesicKind::HeintzeV {
                        n_neg: nb.clone(),
                        n_pos: n.clone(),
                        apex,
                        shift: apex - s,
                    },
                    lo: -inf,
                    hi: 0.0,
                })
            }
        }
        (Ideal(HeintzeN { n }), Ideal(HeintzeOmega)) => {
            let h0 = log_homogeneous_quasimetric(spec, &vec![0.0; n.len()], n).max(0.0);
            Ok(GeodesicLine {
                model,
                kind: GeodesicKind::HeintzeVertical {
                    n: n.clone(),
                    h0,
                    orient: 1.0,
                },
                lo: -inf,
                hi: inf,
            })
        }
        (Ideal(HeintzeOmega), Ideal(HeintzeN { n })) => {
            let h0 = log_homogeneous_quasimetric(spec, &vec![0.0; n.len()], n).max(0.0);
            Ok(GeodesicLine {
                model,
                kind: GeodesicKind::HeintzeVertical {
                    n: n.clone(),
                    h0,
                    orient: -1.0,
                },
                lo: -inf,
                hi: inf,
            })
        }
        (Ideal(HeintzeN { n: n1 }), Ideal(HeintzeN { n: n2 })) => {
            if n1 == n2 {
                return Err(SpaceError::DegenerateEndpoints);
            }
            let apex = log_homogeneous_quasimetric(spec, n1, n2);
            let origin = vec![0.0; n1.len()];
            // projection of the basepoint (0,0): per-leg closed form
            let leg_min = |nn: &[f64]| -> (f64, f64) {
                let l0 = log_homogeneous_quasimetric(spec, &origin, nn).max(0.0);
                let h = l0.min(apex);
                (2.0 * l0.max(h).max(0.0) - h, h)
            };
            let (d1, h1) = leg_min(n1);
            let (d2, h2) = leg_min(n2);
            let shift = if d1 <= d2 { h1 - apex } else { apex - h2 };
            Ok(GeodesicLine {
                model,
                kind: GeodesicKind::HeintzeV {
                    n_neg: n1.clone(),
                    n_pos: n2.clone(),
                    apex,
                    shift,
                },
                lo: -inf,
                hi: inf,
            })
        }
        (Interior(Point::Heintze { n: n1, s: s1 }), Interior(Point::Heintze { n: n2, s: s2 })) => {
            if n1 == n2 {
                if s1 == s2 {
                    return Err(SpaceError::DegenerateEndpoints);
                }
                let span = s2 - s1;
                return Ok(GeodesicLine {
                    model,
                    kind: GeodesicKind::HeintzeVertical {
                        n: n1.clone(),
                        h0: *s1,
                        orient: span.signum(),
                    },
                    lo: 0.0,
                    hi: span.abs(),
                });
            }
            let apex = log_homogeneous_quasimetric(spec, n1, n2);
            if *s1 > apex || *s2 > apex {
                return Err(SpaceError::UnsupportedGeodesic(
                    "log-model segment needs both heights at or below the apex".into(),
                ));
            }
            Ok(GeodesicLine {
                model,
                kind: GeodesicKind::HeintzeV {
                    n_neg: n1.clone(),
                    n_pos: n2.clone(),
                    apex,
                    shift: s1 - apex,
                },
                lo: 0.0,
                hi: (apex - s1) + (apex - s2),
            })
        }
        _ => Err(SpaceError::ModelMismatch),
    }
}

/// Closest point on the geodesic, with its parameter. Golden-section search
/// after bracketing by doubling; trees use exact integer descent.
pub fn project_to_geodesic(
    space: &ModelSpace,
    line: &GeodesicLine,
    b: &Point,
) -> Result<(Point, f64), SpaceError> {
    match &line.kind {
        GeodesicKind::Tree { .. } => {
            let f = |k: f64| -> f64 {
                space
                    .distance(&line.point_at(k), b)
                    .expect("tree projection distance")
            };
            let mut k = 0.0f64;
            let mut fk = f(k);
            // integer descent from the anchor: the distance is unimodal
            loop {
                let left = (k - 1.0).max(line.lo);
                let right = (k + 1.0).min(line.hi);
                let fl = f(left);
                let fr = f(right);
                if fl < fk && left < k {
                    k = left;
                    fk = fl;
                } else if fr < fk && right > k {
                    k = right;
                    fk = fr;
                } else {
                    break;
                }
            }
            Ok((line.point_at(k), k))
        }
        GeodesicKind::HeintzeV { shift, .. } => {
            // the distance can dip once on each leg; search both sides of
            // the apex and keep the better minimum
            let apex_param = -shift;
            let left = golden_on_interval(space, line, b, line.lo, apex_param)?;
            let right = golden_on_interval(space, line, b, apex_param, line.hi)?;
            let best = if left.1 <= right.1 { left } else { right };
            Ok((line.point_at(best.0), best.0))
        }
        _ => {
            let (u, _) = golden_on_interval(space, line, b, line.lo, line.hi)?;
            Ok((line.point_at(u), u))
        }
    }
}

fn golden_on_interval(
    space: &ModelSpace,
    line: &GeodesicLine,
    b: &Point,
    lo: f64,
    hi: f64,
) -> Result<(f64, f64), SpaceError> {
    let f = |u: f64| -> f64 {
        space
            .distance(&line.point_at(u), b)
            .expect("projection distance")
    };
    // grow a finite window until the minimum is interior or range-clamped
    let mut a = if lo.is_finite() { lo } else { -1.0 };
    let mut c = if hi.is_finite() { hi } else { 1.0 };
    if a >= c {
        return Ok((a.min(c), f(a.min(c))));
    }
    let mut guard = 0;
    loop {
        let width = c - a;
        let ia = a + 0.05 * width;
        let ic = c - 0.05 * width;
        let grow_left = !lo.is_finite() && f(a) <= f(ia);
        let grow_right = !hi.is_finite() && f(c) <= f(ic);
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
            return Err(SpaceError::NonConvergence);
        }
    }
    let (u, fu) = golden_section_min(f, a, c, GOLDEN_TOL);
    Ok((u, fu))
}

/// Fermi coordinates (s, y) about the positive vertical axis of the half
/// plane: s is arclength along the axis, y the signed distance from it.
/// Stable far beyond the range where (x, t) coordinates overflow.
pub fn fermi_distance(s1: f64, y1: f64, s2: f64, y2: f64) -> f64 {
    let l = log_add_exp(
        log_cosh(y1 - y2),
        log_cosh(y1) + log_cosh(y2) + log_cosh_m1(s1 - s2),
    );
    acosh_from_log_cosh(l)
}

/// Distance from the Fermi point (s, y) to the basepoint (0, 0).
pub fn fermi_norm(s: f64, y: f64) -> f64 {
    acosh_from_log_cosh(log_cosh(y) + log_cosh(s))
}

/// Half-plane coordinates of the Fermi point (s, y), valid while e^s is
/// representable.
pub fn fermi_to_half_plane(s: f64, y: f64) -> Point {
    let es = s.exp();
    Point::HalfPlane {
        x: es * y.tanh(),
        t: es / y.cosh(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Ball { radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub model: Model,
    pub points: Vec<Point>,
    pub basepoint: usize,
    pub dist: SymmetricMatrix,
}

impl Configuration {
    /// Largest violation of the triangle inequality, d(i,k) - d(i,j) - d(j,k).
    pub fn triangle_defect(&self) -> f64 {
        self.dist.max_triangle_defect()
    }
}

/// Deterministic sample of n points in the region; the basepoint is always
/// at index 0 and distances are filled from the model oracle.
pub fn sample_configuration(
    space: &ModelSpace,
    region: &Region,
    n: usize,
    seed: u64,
) -> Result<Configuration, SpaceError> {
    if n < 1 {
        return Err(SpaceError::InvalidRegion("need at least one point".into()));
    }
    let Region::Ball { radius } = *region;
    if !(radius >= 0.0) {
        return Err(SpaceError::InvalidRegion(format!(
            "empty ball of radius {radius}"
        )));
    }
    if !radius.is_finite() {
        return Err(SpaceError::InvalidRegion("unbounded region".into()));
    }
    let cap = match &space.model {
        Model::RegularTree { .. } => 100_000.0,
        _ => 500.0,
    };
    if radius > cap {
        return Err(SpaceError::InvalidRegion(format!(
            "radius {radius} exceeds the model's stable range {cap}"
        )));
    }
    let mut rng = crate::rng::rng_from_seed(seed);
    let mut points = Vec::with_capacity(n);
    points.push(space.basepoint());
    while points.len() < n {
        points.push(sample_in_ball(space, radius, &mut rng)?);
    }
    let dist = SymmetricMatrix::from_fn(n, |i, j| {
        space
            .distance(&points[i], &points[j])
            .expect("sampled points share the model")
    });
    Ok(Configuration {
        model: space.model.clone(),
        points,
        basepoint: 0,
        dist,
    })
}

/// Uniform-in-measure point of the closed ball around the basepoint.
pub fn sample_in_ball(
    space: &ModelSpace,
    radius: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Point, SpaceError> {
    match &space.model {
        Model::HalfPlane => {
            let r = hyperbolic_radius(radius, rng);
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            // Geodesic polar coordinates about i, pushed through the Cayley
            // map.  The denominator stays positive for every phi, so points
            // at radius 100+ keep full precision instead of cancelling.
            let denom = (-r).exp() + 2.0 * r.sinh() * (0.5 * phi).sin().powi(2);
            Ok(Point::HalfPlane {
                x: -r.sinh() * phi.sin() / denom,
                t: 1.0 / denom,
            })
        }
        Model::Hyperboloid { dim } => {
            let r = hyperbolic_radius(radius, rng);
            let mut dir: Vec<f64> = (0..*dim)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                dir[0] = 1.0;
            } else {
                for d in dir.iter_mut() {
                    *d /= norm;
                }
            }
            let mut coords = Vec::with_capacity(dim + 1);
            coords.push(r.cosh());
            let sh = r.sinh();
            coords.extend(dir.iter().map(|d| d * sh));
            Ok(Point::Hyperboloid { coords })
        }
        Model::RegularTree { valence } => {
            let max_len = radius.floor() as usize;
            let len = rng.random_range(0..=max_len);
            let mut word = Vec::with_capacity(len);
            for i in 0..len {
                let letter = if i == 0 {
                    rng.random_range(0..*valence)
                } else {
                    let r = rng.random_range(0..valence - 1);
                    if r >= word[i - 1] {
                        r + 1
                    } else {
                        r
                    }
                };
                word.push(letter);
            }
            Ok(Point::TreeVertex { word })
        }
        Model::HeintzeLog { spec } => {
            if !spec.is_semisimple() {
                return Err(SpaceError::InvalidRegion(
                    "sampling supports semisimple derivations only".into(),
                ));
            }
            for _ in 0..100_000 {
                let s = rng.random_range(-radius..=radius);
                let bound = 0.5 * (radius + s);
                let gauge = bound.exp();
                let n: Vec<f64> = spec
                    .coordinate_eigenvalues()
                    .iter()
                    .map(|l| {
                        let half = gauge.powf(*l);
                        rng.random_range(-half..=half)
                    })
                    .collect();
                let origin = vec![0.0; n.len()];
                if log_homogeneous_quasimetric(spec, &origin, &n) <= bound {
                    return Ok(Point::Heintze { n, s });
                }
            }
            Err(SpaceError::InvalidRegion(
                "rejection sampling exhausted its budget".into(),
            ))
        }
    }
}

/// Point at exact distance r from p in a uniformly random direction.
/// Trees round r to the nearest edge count and walk without backtracking.
pub fn offset_at_distance(
    space: &ModelSpace,
    p: &Point,
    r: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Point, SpaceError> {
    match (&space.model, p) {
        (Model::HalfPlane, Point::HalfPlane { x, t }) => {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let (sh, ch) = (r.sinh(), r.cosh());
            Ok(Point::HalfPlane {
                x: x + t * sh * theta.sin(),
                t: t * (ch + sh * theta.cos()),
            })
        }
        (Model::Hyperboloid { dim }, Point::Hyperboloid { coords }) => {
            // random unit tangent: Gaussian vector made Minkowski-orthogonal
            let minkowski = |a: &[f64], b: &[f64]| -> f64 {
                -a[0] * b[0] + a[1..].iter().zip(&b[1..]).map(|(x, y)| x * y).sum::<f64>()
            };
            loop {
                let y: Vec<f64> = (0..=*dim)
                    .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect();
                let yp = minkowski(&y, coords);
                let v: Vec<f64> = y.iter().zip(coords).map(|(yi, pi)| yi + yp * pi).collect();
                let norm = minkowski(&v, &v).sqrt();
                if !(norm > 1e-9) {
                    continue;
                }
                let (sh, ch) = (r.sinh(), r.cosh());
                let coords = coords
                    .iter()
                    .zip(&v)
                    .map(|(pi, vi)| ch * pi + sh * vi / norm)
                    .collect();
                return Ok(Point::Hyperboloid { coords });
            }
        }
        (Model::RegularTree { valence }, Point::TreeVertex { word }) => {
            // Non-backtracking walk. Neighbors are enumerated as the parent
            // first, then children in letter order, with the vertex we just
            // left removed; moves are applied in place so each step is O(1).
            #[derive(PartialEq)]
            enum Move {
                Pop,
                Push(u8),
            }
            let steps = r.round().max(0.0) as usize;
            let mut word = word.clone();
            let mut back: Option<Move> = None;
            let mut moves: Vec<Move> = Vec::with_capacity(*valence as usize);
            for _ in 0..steps {
                moves.clear();
                if let Some(&last) = word.last() {
                    moves.push(Move::Pop);
                    for a in 0..*valence {
                        if a != last {
                            moves.push(Move::Push(a));
                        }
                    }
                } else {
                    for a in 0..*valence {
                        moves.push(Move::Push(a));
                    }
                }
                if let Some(b) = &back {
                    moves.retain(|m| m != b);
                }
                back = match moves[rng.random_range(0..moves.len())] {
                    Move::Pop => {
                        let popped = word.pop().expect("pop is only offered below a vertex");
                        Some(Move::Push(popped))
                    }
                    Move::Push(a) => {
                        word.push(a);
                        Some(Move::Pop)
                    }
                };
            }
            Ok(Point::TreeVertex { word })
        }
        (Model::HeintzeLog { .. }, _) => Err(SpaceError::UnsupportedGeodesic(
            "the log model has no exact-distance direction sampler".into(),
        )),
        _ => Err(SpaceError::ModelMismatch),
    }
}

/// Radius with density proportional to sinh, matching area in the plane.
fn hyperbolic_radius(max: f64, rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    if max == 0.0 {
        return 0.0;
    }
    let u: f64 = rng.random_range(0.0..1.0);
    acosh1p(u * (max.cosh() - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(x: f64, t: f64) -> Point {
        Point::HalfPlane { x, t }
    }

    #[test]
    fn half_plane_distance_examples() {
        let space = ModelSpace::half_plane();
        let d = space.distance(&hp(0.0, 1.0), &hp(1.0, 1.0)).unwrap();
        assert!((d - 1.5f64.acosh()).abs() < 1e-12);
        assert!((d - 0.9624236501192069).abs() < 1e-12);
        assert_eq!(space.distance(&hp(3.0, 2.0), &hp(3.0, 2.0)).unwrap(), 0.0);
    }

    #[test]
    fn model_mismatch_is_rejected() {
        let space = ModelSpace::half_plane();
        let err = space
            .distance(&hp(0.0, 1.0), &Point::TreeVertex { word: vec![] })
            .unwrap_err();
        assert_eq!(err, SpaceError::ModelMismatch);
    }

    #[test]
    fn tree_distance_counts_edges() {
        let space = ModelSpace::regular_tree(3);
        let a = Point::TreeVertex { word: vec![0, 1] };
        let b = Point::TreeVertex { word: vec![0, 2, 0] };
        // paths meet at [0]: distance 1 + 2
        assert_eq!(space.distance(&a, &b).unwrap(), 3.0);
        let c = Point::TreeVertex {
            word: vec![1, 0, 1, 0],
        };
        let root = Point::TreeVertex { word: vec![] };
        assert_eq!(space.distance(&root, &c).unwrap(), 4.0);
    }

    #[test]
    fn half_plane_matches_hyperboloid_embedding() {
        // psi(x,t) = ((1+x^2+t^2)/2t, x/t, (x^2+t^2-1)/2t) is an isometry
        let hp_space = ModelSpace::half_plane();
        let hy_space = ModelSpace::hyperboloid(2);
        let embed = |x: f64, t: f64| -> Point {
            let q = x * x + t * t;
            Point::Hyperboloid {
                coords: vec![(1.0 + q) / (2.0 * t), x / t, (q - 1.0) / (2.0 * t)],
            }
        };
        let mut rng = crate::rng::rng_from_seed(11);
        for _ in 0..200 {
            let (x1, t1) = (rng.random_range(-5.0..5.0), rng.random_range(0.1..8.0));
            let (x2, t2) = (rng.random_range(-5.0..5.0), rng.random_range(0.1..8.0));
            let p1 = embed(x1, t1);
            let p2 = embed(x2, t2);
            hy_space.validate_point(&p1).unwrap();
            let d_hp = hp_space.distance(&hp(x1, t1), &hp(x2, t2)).unwrap();
            let d_hy = hy_space.distance(&p1, &p2).unwrap();
            assert!((d_hp - d_hy).abs() < 1e-9, "{d_hp} vs {d_hy}");
        }
    }

    #[test]
    fn heintze_log_vertical_distance_is_height_gap() {
        let spec = HeintzeSpec::abelian_diag(&[1.0, 2.0]).unwrap();
        let space = ModelSpace::heintze_log(spec);
        let a = Point::Heintze {
            n: vec![0.5, -0.3],
            s: 1.0,
        };
        let b = Point::Heintze {
            n: vec![0.5, -0.3],
            s: -2.5,
        };
        assert!((space.distance(&a, &b).unwrap() - 3.5).abs() < 1e-12);
    }

    #[test]
    fn heintze_log_separated_points_use_the_quasinorm() {
        let spec = HeintzeSpec::abelian_diag(&[1.0]).unwrap();
        let space = ModelSpace::heintze_log(spec);
        // ln rho = ln 8; both at height 0: d = 2 ln 8
        let a = Point::Heintze { n: vec![0.0], s: 0.0 };
        let b = Point::Heintze { n: vec![8.0], s: 0.0 };
        assert!((space.distance(&a, &b).unwrap() - 2.0 * 8.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn vertical_axis_geodesic_is_exponential() {
        let space = ModelSpace::half_plane();
        let g = geodesic_between(
            &space,
            &Endpoint::Ideal(BoundaryPoint::HalfPlaneReal { x: 0.0 }),
            &Endpoint::Ideal(BoundaryPoint::HalfPlaneInfinity),
        )
        .unwrap();
        for s in [-2.0, 0.0, 1.0, 3.7] {
            let p = g.point_at(s);
            match p {
                Point::HalfPlane { x, t } => {
                    assert_eq!(x, 0.0);
                    assert!((t - s.exp()).abs() < 1e-12);
                }
                _ => panic!("wrong model"),
            }
        }
    }

    #[test]
    fn unit_semicircle_between_minus_one_and_one() {
        let space = ModelSpace::half_plane();
        let g = geodesic_between(
            &space,
            &Endpoint::Ideal(BoundaryPoint::HalfPlaneReal { x: -1.0 }),
            &Endpoint::Ideal(BoundaryPoint::HalfPlaneReal { x: 1.0 }),
        )
        .unwrap();
        // parameter 0 at the projection of the basepoint, which lies on it
        match g.point_at(0.0) {
            Point::HalfPlane { x, t } => {
                assert!(x.abs() < 1e-12 && (t - 1.0).abs() < 1e-12);
            }
            _ => panic!("wrong model"),
        }
        match g.point_at(20.0) {
            Point::HalfPlane { x, t } => {
                assert!((x - 1.0).abs() < 1e-8 && t < 1e-8);
            }
            _ => panic!("wrong model"),
        }
    }

    #[test]
    fn geodesics_are_unit_speed() {
        let hp_space = ModelSpace::half_plane();
        let g = geodesic_between(
            &hp_space,
            &Endpoint::Ideal(BoundaryPoint::HalfPlaneReal { x: 2.0 }),
            &Endpoint::Ideal(BoundaryPoint::HalfPlaneReal { x: 7.5 }),
        )
        .unwrap();
        let mut rng = crate::rng::rng_from_seed(3);
        for _ in 0..100 {
            let s = rng.random_range(-15.0..15.0);
            let t = rng.random_range(-15.0..15.0);
            let d = hp_space.distance(&g.point_at(s), &g.point_at(t)).unwrap();
            assert!((d - (s - t).abs()).abs() < 1e-7, "speed defect at {s},{t}");
        }

        let hy_space = ModelSpace::hyperboloid(3);
        let p = hy_space.basepoint();
        let q = Point::Hyperboloid {
            coords: vec![2.0f64.cosh(), 2.0f64.sinh(), 0.0, 0.0],
        };
        let seg = geodesic_between(&hy_space, &Endpoint::Interior(p), &Endpoint::Interior(q))
            .unwrap();
        assert!((seg.hi - 2.0).abs() < 1e-12);
        for _ in 0..50 {
            let s = rng.random_range(0.0..2.0);
            let t = rng.random_range(0.0..2.0);
            let d = hy_space
                .distance(&seg.point_at(s), &seg.point_at(t))
                .unwrap();
            assert!((d - (s - t).abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn point_to_point_geodesic_hits_both_endpoints() {
        let space = ModelSpace::half_plane();
        let p = hp(-2.0, 0.7);
        let q = hp(4.0, 2.2);
        let g = geodesic_between(&space, &Endpoint::Interior(p.clone()), &Endpoint::Interior(q.clone()))
            .unwrap();
        let d = space.distance(&p, &q).unwrap();
        assert!((g.hi - d).abs() < 1e-9, "span {} vs distance {}", g.hi, d);
        let back = g.point_at(0.0);
        let fore = g.point_at(g.hi);
        assert!(space.distance(&back, &p).unwrap() < 1e-9);
        assert!(space.distance(&fore, &q).unwrap() < 1e-9);
    }

    #[test]
    fn degenerate_endpoints_are_rejected() {
        let space = ModelSpace::half_plane();
        let xi = Endpoint::Ideal(BoundaryPoint::HalfPlaneReal { x: 1.0 });
        assert_eq!(
            geodesic_between(&space, &xi, &xi).unwrap_err(),
            SpaceError::DegenerateEndpoints
        );
        let tree = ModelSpace::regular_tree(3);
        let e1 = Endpoint::Ideal(BoundaryPoint::TreeEnd {
            prefix: vec![0],
            period: vec![1, 2],
        });
        let e2 = Endpoint::Ideal(BoundaryPoint::TreeEnd {
            prefix: vec![0, 1],
            period: vec![2, 1],
        });
        // same infinite word written differently
        assert_eq!(
            geodesic_between(&tree, &e1, &e2).unwrap_err(),
            SpaceError::DegenerateEndpoints
        );
    }

    #[test]
    fn tree_line_through_confluence() {
        let space = ModelSpace::regular_tree(3);
        let e1 = Endpoint::Ideal(BoundaryPoint::TreeEnd {
            prefix: vec![0, 1],
            period: vec![0, 1],
        });
        let e2 = Endpoint::Ideal(BoundaryPoint::TreeEnd {
            prefix: vec![0, 2],
            period: vec![0, 2],
        });
        let g = geodesic_between(&space, &e1, &e2).unwrap();
        match g.point_at(0.0) {
            Point::TreeVertex { word } => assert_eq!(word, vec![0]),
            _ => panic!("wrong model"),
        }
        match g.point_at(2.0) {
            Point::TreeVertex { word } => assert_eq!(word, vec![0, 2, 0]),
            _ => panic!("wrong model"),
        }
        match g.point_at(-3.0) {
            Point::TreeVertex { word } => assert_eq!(word, vec![0, 1, 0, 1]),
            _ => panic!("wrong model"),
        }
        // integer unit speed
        let d = space.distance(&g.point_at(-3.0), &g.point_at(2.0)).unwrap();
        assert_eq!(d, 5.0);
    }

    #[test]
    fn projection_to_vertical_axis_closed_form() {
        let space = ModelSpace::half_plane();
        let axis = geodesic_between(
            &space,
            &Endpoint::Ideal(BoundaryPoint::HalfPlaneReal { x: 0.0 }),
            &Endpoint::Ideal(BoundaryPoint::HalfPlaneInfinity),
        )
        .unwrap();
        let (p, u) = project_to_geodesic(&space, &axis, &hp(3.0, 4.0)).unwrap();
        match p {
            Point::HalfPlane { x, t } => {
                assert!(x.abs() < 1e-7);
                assert!((t - 5.0).abs() < 1e-6, "projected to t = {t}");
            }
            _ => panic!("wrong model"),
        }
        assert!((u - 5.0f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn projection_of_a_point_on_the_line_is_itself() {
        let space = ModelSpace::half_plane();
        let g = geodesic_between(
            &space,
            &Endpoint::Ideal(BoundaryPoint::HalfPlaneReal { x: -1.0 }),
            &Endpoint::Ideal(BoundaryPoint::HalfPlaneReal { x: 1.0 }),
        )
        .unwrap();
        let b = g.point_at(1.3);
        let (p, u) = project_to_geodesic(&space, &g, &b).unwrap();
        assert!(space.distance(&p, &b).unwrap() < 1e-6);
        assert!((u - 1.3).abs() < 1e-5);
    }

    #[test]
    fn tree_projection_is_the_meeting_vertex() {
        let space = ModelSpace::regular_tree(3);
        let g = geodesic_between(
            &space,
            &Endpoint::Interior(Point::TreeVertex { word: vec![0] }),
            &Endpoint::Interior(Point::TreeVertex {
                word: vec![0, 1, 0, 1],
            }),
        )
        .unwrap();
        let b = Point::TreeVertex {
            word: vec![0, 1, 2, 0],
        };
        // path from b reaches the line at [0,1]
        let (p, u) = project_to_geodesic(&space, &g, &b).unwrap();
        match p {
            Point::TreeVertex { word } => assert_eq!(word, vec![0, 1]),
            _ => panic!("wrong model"),
        }
        assert_eq!(u, 1.0);
    }

    #[test]
    fn projection_beats_random_probes() {
        let space = ModelSpace::half_plane();
        let g = geodesic_between(
            &space,
            &Endpoint::Ideal(BoundaryPoint::HalfPlaneReal { x: 1.0 }),
            &Endpoint::Ideal(BoundaryPoint::HalfPlaneReal { x: 9.0 }),
        )
        .unwrap();
        let mut rng = crate::rng::rng_from_seed(17);
        for _ in 0..20 {
            let b = hp(rng.random_range(-10.0..10.0), rng.random_range(0.05..20.0));
            let (_, u) = project_to_geodesic(&space, &g, &b).unwrap();
            let du = space.distance(&g.point_at(u), &b).unwrap();
            for _ in 0..50 {
                let s = rng.random_range(-30.0..30.0);
                let ds = space.distance(&g.point_at(s), &b).unwrap();
                assert!(ds >= du - 1e-6, "probe at {s} beat the projection");
            }
        }
    }

    #[test]
    fn heintze_v_line_is_unit_speed_across_the_apex() {
        let spec = HeintzeSpec::abelian_diag(&[1.0, 2.0]).unwrap();
        let space = ModelSpace::heintze_log(spec);
        let g = geodesic_between(
            &space,
            &Endpoint::Ideal(BoundaryPoint::HeintzeN { n: vec![0.0, 0.0] }),
            &Endpoint::Ideal(BoundaryPoint::HeintzeN { n: vec![3.0, 1.0] }),
        )
        .unwrap();
        let mut rng = crate::rng::rng_from_seed(23);
        for _ in 0..100 {
            let s = rng.random_range(-20.0..20.0);
            let t = rng.random_range(-20.0..20.0);
            let d = space.distance(&g.point_at(s), &g.point_at(t)).unwrap();
            assert!((d - (s - t).abs()).abs() < 1e-9, "defect at {s},{t}");
        }
    }

    #[test]
    fn single_point_configuration_is_a_zero_matrix() {
        let space = ModelSpace::half_plane();
        let c = sample_configuration(&space, &Region::Ball { radius: 5.0 }, 1, 7).unwrap();
        assert_eq!(c.points.len(), 1);
        assert_eq!(c.dist.get(0, 0), 0.0);
        assert_eq!(c.basepoint, 0);
    }

    #[test]
    fn sampling_is_bit_reproducible() {
        let space = ModelSpace::half_plane();
        let a = sample_configuration(&space, &Region::Ball { radius: 5.0 }, 100, 7).unwrap();
        let b = sample_configuration(&space, &Region::Ball { radius: 5.0 }, 100, 7).unwrap();
        assert_eq!(a, b);
        let json_a = serde_json::to_string(&a).unwrap();
        let json_b = serde_json::to_string(&b).unwrap();
        assert_eq!(json_a, json_b);
    }

    #[test]
    fn tree_ball_distances_are_small_integers() {
        let space = ModelSpace::regular_tree(3);
        let c = sample_configuration(&space, &Region::Ball { radius: 6.0 }, 50, 12).unwrap();
        for i in 0..50 {
            for j in 0..i {
                let d = c.dist.get(i, j);
                assert_eq!(d, d.round());
                assert!(d <= 12.0);
            }
        }
    }

    #[test]
    fn sampled_configurations_satisfy_the_triangle_inequality() {
        for space in [
            ModelSpace::half_plane(),
            ModelSpace::hyperboloid(3),
            ModelSpace::regular_tree(4),
        ] {
            let c = sample_configuration(&space, &Region::Ball { radius: 6.0 }, 60, 5).unwrap();
            assert!(
                c.triangle_defect() <= 1e-9,
                "defect {} in {:?}",
                c.triangle_defect(),
                space.model
            );
        }
        // log-model distances only satisfy the triangle inequality up to
        // 2 ln K, where K bounds the quasinorm: 2^{1/lambda_min} for the
        // max-of-powers gauge, 2 for the Koranyi gauge
        for spec in [
            HeintzeSpec::abelian_diag(&[1.0, 2.0]).unwrap(),
            HeintzeSpec::heisenberg(1, 1.0).unwrap(),
        ] {
            let space = ModelSpace::heintze_log(spec);
            let c = sample_configuration(&space, &Region::Ball { radius: 6.0 }, 60, 5).unwrap();
            let defect = c.triangle_defect();
            assert!(defect <= 2.0 * 2.0f64.ln() + 1e-9, "defect {defect}");
        }
    }

    #[test]
    fn invalid_regions_are_rejected() {
        let space = ModelSpace::half_plane();
        assert!(matches!(
            sample_configuration(&space, &Region::Ball { radius: -1.0 }, 5, 0),
            Err(SpaceError::InvalidRegion(_))
        ));
        assert!(matches!(
            sample_configuration(&space, &Region::Ball { radius: f64::INFINITY }, 5, 0),
            Err(SpaceError::InvalidRegion(_))
        ));
        assert!(matches!(
            sample_configuration(&space, &Region::Ball { radius: 1.0 }, 0, 0),
            Err(SpaceError::InvalidRegion(_))
        ));
    }

    #[test]
    fn hyperboloid_points_stay_on_the_sheet() {
        let space = ModelSpace::hyperboloid(4);
        let c = sample_configuration(&space, &Region::Ball { radius: 5.0 }, 40, 9).unwrap();
        for p in &c.points {
            space.validate_point(p).unwrap();
        }
    }

    #[test]
    fn fermi_matches_half_plane_coordinates() {
        let space = ModelSpace::half_plane();
        let mut rng = crate::rng::rng_from_seed(31);
        for _ in 0..200 {
            let s1 = rng.random_range(-3.0..3.0);
            let y1 = rng.random_range(-3.0..3.0);
            let s2 = rng.random_range(-3.0..3.0);
            let y2 = rng.random_range(-3.0..3.0);
            let d_fermi = fermi_distance(s1, y1, s2, y2);
            let d_hp = space
                .distance(&fermi_to_half_plane(s1, y1), &fermi_to_half_plane(s2, y2))
                .unwrap();
            assert!((d_fermi - d_hp).abs() < 1e-9, "{d_fermi} vs {d_hp}");
            let norm = fermi_norm(s1, y1);
            let from_o = space
                .distance(&fermi_to_half_plane(s1, y1), &space.basepoint())
                .unwrap();
            assert!((norm - from_o).abs() < 1e-9);
        }
    }

    #[test]
    fn fermi_is_stable_at_extreme_scales() {
        // distance along the axis is exact
        assert!((fermi_distance(0.0, 0.0, 3.0e6, 0.0) - 3.0e6).abs() < 1e-6);
        // distance from the axis is the Fermi height
        let d = fermi_distance(2.5e6, 0.0, 2.5e6, 40.0);
        assert!((d - 40.0).abs() < 1e-6, "got {d}");
        let n = fermi_norm(1.0e6, 25.0);
        assert!(n > 1.0e6 && n < 1.0e6 + 50.0);
    }

    #[test]
    fn configuration_serializes_to_lower_triangle_shape() {
        let space = ModelSpace::regular_tree(3);
        let c = sample_configuration(&space, &Region::Ball { radius: 3.0 }, 4, 2).unwrap();
        let v: serde_json::Value = serde_json::to_value(&c).unwrap();
        assert!(v.get("model").is_some());
        assert!(v.get("points").is_some());
        assert!(v.get("basepoint").is_some());
        let dist = v.get("dist").unwrap().as_array().unwrap();
        assert_eq!(dist.len(), 4 * 5 / 2);
        let back: Configuration = serde_json::from_value(v).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn heintze_point_ideal_ray_descends_to_its_boundary_point() {
        let spec = HeintzeSpec::abelian_diag(&[1.0]).unwrap();
        let space = ModelSpace::heintze_log(spec);
        let p = Point::Heintze {
            n: vec![2.0],
            s: -1.0,
        };
        let g = geodesic_between(
            &space,
            &Endpoint::Interior(p.clone()),
            &Endpoint::Ideal(BoundaryPoint::HeintzeN { n: vec![2.0] }),
        )
        .unwrap();
        assert!(space.distance(&g.point_at(0.0), &p).unwrap() < 1e-12);
        match g.point_at(5.0) {
            Point::Heintze { n, s } => {
                assert_eq!(n, vec![2.0]);
                assert!((s + 6.0).abs() < 1e-12);
            }
            _ => panic!("wrong model"),
        }
    }
}
