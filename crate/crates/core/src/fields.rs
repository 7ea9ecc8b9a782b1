//! Test vector fields: analytic catalog entries with divergence and
//! regularity metadata, plus the integration policy they require.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{ElementGeometry, Mesh};
use crate::quadrature::{graded_line_rule, graded_rule, line_rule, quad_rule, LineRule, QuadRule};

/// A point inside element `elem`, in reference and physical coordinates.
#[derive(Debug, Clone, Copy)]
pub struct ElemPoint {
    pub elem: usize,
    pub xhat: [f64; 2],
    pub x: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldInfo {
    pub name: String,
    /// Elementwise Sobolev index `s` (`f64::INFINITY` for smooth fields).
    pub regularity: f64,
    pub divergence_free: bool,
    /// Polynomial degree when the field is a member of a discrete space.
    pub discrete_degree: Option<usize>,
    /// Point where the field is singular; must be a mesh vertex.
    pub singular_point: Option<[f64; 2]>,
}

pub trait VectorField: Send + Sync {
    fn info(&self) -> &FieldInfo;
    fn value(&self, pt: &ElemPoint) -> [f64; 2];
    fn divergence(&self, pt: &ElemPoint) -> f64;
}

type VecFn = dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync;
type ScalarFn = dyn Fn([f64; 2]) -> f64 + Send + Sync;

/// A field given by closed-form evaluators of `v` and `∇·v`.
#[derive(Clone)]
pub struct AnalyticField {
    info: FieldInfo,
    v: Arc<VecFn>,
    div: Arc<ScalarFn>,
}

impl fmt::Debug for AnalyticField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyticField").field("info", &self.info).finish()
    }
}

impl AnalyticField {
    pub fn new(
        info: FieldInfo,
        v: impl Fn([f64; 2]) -> [f64; 2] + Send + Sync + 'static,
        div: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        AnalyticField {
            info,
            v: Arc::new(v),
            div: Arc::new(div),
        }
    }

    fn smooth(name: &str, divergence_free: bool) -> FieldInfo {
        FieldInfo {
            name: name.into(),
            regularity: f64::INFINITY,
            divergence_free,
            discrete_degree: None,
            singular_point: None,
        }
    }

    /// `(sin πx sin πy, cos πx cos πy)`, divergence free.
    pub fn sine_divfree() -> Self {
        AnalyticField::new(
            Self::smooth("sine_divfree", true),
            |x| {
                let (sx, cx) = (PI * x[0]).sin_cos();
                let (sy, cy) = (PI * x[1]).sin_cos();
                [sx * sy, cx * cy]
            },
            |_| 0.0,
        )
    }

    /// `(x³, y³)`.
    pub fn cubic() -> Self {
        AnalyticField::new(
            Self::smooth("cubic", false),
            |x| [x[0].powi(3), x[1].powi(3)],
            |x| 3.0 * (x[0] * x[0] + x[1] * x[1]),
        )
    }

    /// `(eˣ, eʸ)`.
    pub fn exponential() -> Self {
        AnalyticField::new(
            Self::smooth("exp", false),
            |x| [x[0].exp(), x[1].exp()],
            |x| x[0].exp() + x[1].exp(),
        )
    }

    /// `∇(r^α sin(αθ))` on the L-shape with the reentrant corner at the origin
    /// and `θ ∈ [0, 3π/2]`.
    pub fn lshape_singular(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "lshape_singular needs alpha in (0, 1], got {alpha}"
            )));
        }
        let info = FieldInfo {
            name: format!("lshape_singular:{alpha}"),
            regularity: alpha,
            divergence_free: true,
            discrete_degree: None,
            singular_point: Some([0.0, 0.0]),
        };
        Ok(AnalyticField::new(
            info,
            move |x| {
                let r = x[0].hypot(x[1]);
                if r == 0.0 {
                    return [f64::NAN, f64::NAN];
                }
                let th = lshape_angle(x);
                let a = alpha * r.powf(alpha - 1.0);
                let (s, c) = ((alpha - 1.0) * th).sin_cos();
                [a * s, a * c]
            },
            |_| 0.0,
        ))
    }

    /// Potential `r^α sin(αθ)` of [`AnalyticField::lshape_singular`].
    pub fn lshape_potential(alpha: f64, x: [f64; 2]) -> f64 {
        x[0].hypot(x[1]).powf(alpha) * (alpha * lshape_angle(x)).sin()
    }

    /// `a u + b w`.
    pub fn combine(a: f64, u: &AnalyticField, b: f64, w: &AnalyticField) -> Self {
        let info = FieldInfo {
            name: format!("{a}*{}+{b}*{}", u.info.name, w.info.name),
            regularity: u.info.regularity.min(w.info.regularity),
            divergence_free: u.info.divergence_free && w.info.divergence_free,
            discrete_degree: None,
            singular_point: u.info.singular_point.or(w.info.singular_point),
        };
        let (uv, wv, ud, wd) = (u.v.clone(), w.v.clone(), u.div.clone(), w.div.clone());
        AnalyticField::new(
            info,
            move |x| {
                let (p, q) = (uv(x), wv(x));
                [a * p[0] + b * q[0], a * p[1] + b * q[1]]
            },
            move |x| a * ud(x) + b * wd(x),
        )
    }

    pub fn eval(&self, x: [f64; 2]) -> [f64; 2] {
        (self.v)(x)
    }

    pub fn eval_div(&self, x: [f64; 2]) -> f64 {
        (self.div)(x)
    }
}

fn lshape_angle(x: [f64; 2]) -> f64 {
    let th = x[1].atan2(x[0]);
    if th < -0.5 * PI {
        th + 2.0 * PI
    } else if th < 0.0 {
        // only reachable through rounding on the edge y = 0, x > 0
        0.0
    } else {
        th
    }
}

impl VectorField for AnalyticField {
    fn info(&self) -> &FieldInfo {
        &self.info
    }

    fn value(&self, pt: &ElemPoint) -> [f64; 2] {
        (self.v)(pt.x)
    }

    fn divergence(&self, pt: &ElemPoint) -> f64 {
        (self.div)(pt.x)
    }
}

/// Catalog entry selected by name, e.g. `sine_divfree`, `cubic`, `exp`,
/// `lshape_singular:0.6667` (also `lshape_singular(2/3)`) or `random_rtn:2:7`
/// (degree 2, seed 7).
#[derive(Debug, Clone, PartialEq)]
pub enum FieldSpec {
    SineDivfree,
    Cubic,
    Exponential,
    LShapeSingular(f64),
    RandomRtn { degree: usize, seed: u64 },
}

impl FieldSpec {
    /// The analytic field, or `None` for discrete samples (which need a space).
    pub fn analytic(&self) -> Result<Option<AnalyticField>> {
        Ok(match self {
            FieldSpec::SineDivfree => Some(AnalyticField::sine_divfree()),
            FieldSpec::Cubic => Some(AnalyticField::cubic()),
            FieldSpec::Exponential => Some(AnalyticField::exponential()),
            FieldSpec::LShapeSingular(a) => Some(AnalyticField::lshape_singular(*a)?),
            FieldSpec::RandomRtn { .. } => None,
        })
    }
}

impl fmt::Display for FieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldSpec::SineDivfree => write!(f, "sine_divfree"),
            FieldSpec::Cubic => write!(f, "cubic"),
            FieldSpec::Exponential => write!(f, "exp"),
            FieldSpec::LShapeSingular(a) => write!(f, "lshape_singular:{a}"),
            FieldSpec::RandomRtn { degree, seed } => write!(f, "random_rtn:{degree}:{seed}"),
        }
    }
}

fn parse_number(s: &str) -> Option<f64> {
    match s.split_once('/') {
        Some((a, b)) => Some(a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?),
        None => s.trim().parse().ok(),
    }
}

impl FromStr for FieldSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, params): (&str, Vec<&str>) = if let Some(open) = s.find('(') {
            let inner = s[open + 1..].strip_suffix(')').ok_or_else(|| Error::UnknownField(s.into()))?;
            (&s[..open], inner.split(',').collect())
        } else {
            let mut parts = s.split(':');
            let name = parts.next().unwrap_or("");
            (name, parts.collect())
        };
        let bad = || Error::InvalidArgument(format!("bad parameters in field `{s}`"));
        match (name, params.as_slice()) {
            ("sine_divfree", []) => Ok(FieldSpec::SineDivfree),
            ("cubic", []) => Ok(FieldSpec::Cubic),
            ("exp", []) => Ok(FieldSpec::Exponential),
            ("lshape_singular", []) => Ok(FieldSpec::LShapeSingular(2.0 / 3.0)),
            ("lshape_singular", [a]) => {
                let a = parse_number(a).ok_or_else(bad)?;
                AnalyticField::lshape_singular(a)?;
                Ok(FieldSpec::LShapeSingular(a))
            }
            ("random_rtn", [p]) => Ok(FieldSpec::RandomRtn {
                degree: p.trim().parse().map_err(|_| bad())?,
                seed: 0,
            }),
            ("random_rtn", [p, seed]) => Ok(FieldSpec::RandomRtn {
                degree: p.trim().parse().map_err(|_| bad())?,
                seed: seed.trim().parse().map_err(|_| bad())?,
            }),
            ("sine_divfree" | "cubic" | "exp" | "lshape_singular" | "random_rtn", _) => Err(bad()),
            _ => Err(Error::UnknownField(s.into())),
        }
    }
}

/// Graded-refinement depth near singular points. Deeper grading puts
/// quadrature points within rounding distance of the singular vertex.
pub const GRADED_LEVELS: usize = 40;

/// Minimum degree near a singular point: the base rule of graded rules on
/// elements touching it, and the plain rule on elements within two diameters,
/// where integrands are smooth but vary on the scale of the element.
pub const NEAR_SINGULAR_DEGREE: usize = 30;

/// Quadrature degree and rule selection for non-polynomial integrands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPolicy {
    /// Extra degree added to `2p` for analytic fields.
    pub extra: usize,
    /// Fixed degree overriding `2p + extra`.
    pub degree_override: Option<usize>,
    /// Recompute analytic integrals at doubled degree and warn on mismatch.
    pub self_check: bool,
}

impl Default for QuadPolicy {
    fn default() -> Self {
        QuadPolicy {
            extra: 10,
            degree_override: None,
            self_check: true,
        }
    }
}

impl QuadPolicy {
    pub fn with_override(degree: Option<usize>) -> Self {
        QuadPolicy {
            degree_override: degree,
            ..Default::default()
        }
    }

    /// Degree used for an analytic field tested against degree-`p` functions.
    pub fn degree(&self, p: usize, info: &FieldInfo) -> usize {
        if let Some(d) = info.discrete_degree {
            return d + p + 1;
        }
        self.degree_override.unwrap_or(2 * p + self.extra)
    }

    /// Triangle rule for element `k` (graded towards a singular vertex).
    pub fn element_rule(
        &self,
        degree: usize,
        info: &FieldInfo,
        mesh: &Mesh,
        k: usize,
    ) -> Result<Arc<QuadRule>> {
        let g = mesh.geometry(k);
        match singular_vertex(info, g) {
            Some(v) => Ok(Arc::new(graded_rule(degree.max(NEAR_SINGULAR_DEGREE), v, GRADED_LEVELS)?)),
            None if near_singularity(info, g) => quad_rule(degree.max(NEAR_SINGULAR_DEGREE)),
            None => quad_rule(degree),
        }
    }

    /// Line rule for local edge `e` of element `k`, in the local parameter.
    pub fn edge_rule(&self, degree: usize, info: &FieldInfo, mesh: &Mesh, k: usize, e: usize) -> Arc<LineRule> {
        let g = mesh.geometry(k);
        if let Some(v) = singular_vertex(info, g) {
            let (a, b) = crate::basis::local_edge_vertices(e);
            if v == a {
                return Arc::new(graded_line_rule(degree.max(NEAR_SINGULAR_DEGREE), false, GRADED_LEVELS));
            }
            if v == b {
                return Arc::new(graded_line_rule(degree.max(NEAR_SINGULAR_DEGREE), true, GRADED_LEVELS));
            }
        }
        if near_singularity(info, g) {
            return line_rule(degree.max(NEAR_SINGULAR_DEGREE));
        }
        line_rule(degree)
    }
}

/// Local index of the singular point of `info` if it is a vertex of `g`.
pub fn singular_vertex(info: &FieldInfo, g: &ElementGeometry) -> Option<usize> {
    let s = info.singular_point?;
    let scale = g.diameter();
    g.vertices
        .iter()
        .position(|v| (v[0] - s[0]).abs() <= 1e-12 * scale && (v[1] - s[1]).abs() <= 1e-12 * scale)
}

/// Whether the singular point of `info` lies within two diameters of `g`
/// without being one of its vertices.
pub fn near_singularity(info: &FieldInfo, g: &ElementGeometry) -> bool {
    let Some(s) = info.singular_point else {
        return false;
    };
    let dist = g.vertices.iter().map(|v| (v[0] - s[0]).hypot(v[1] - s[1])).fold(f64::INFINITY, f64::min);
    dist > 1e-12 * g.diameter() && dist <= 2.0 * g.diameter()
}

/// Whether the singular point of `info` touches element `k`.
pub fn touches_singularity(info: &FieldInfo, mesh: &Mesh, k: usize) -> bool {
    singular_vertex(info, mesh.geometry(k)).is_some()
}
