//! Homogenised surface potentials and the inverse design of linear terms.
//!
//! For a species with reference body `P`, rotation field `R(x)` and surface
//! density `f_s`, the homogenised potential is the boundary integral of
//! `f_s(Q, R(x) ν)` with `ν` the inward normal of `P`; the total potential
//! weights each species by its number density `ξ(x)`.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{SMatrix, SVector};

use crate::energy::{f_surface, f_surface_grad, SurfaceDensity};
use crate::error::{Error, Result};
use crate::qtensor::{dot, Mat3, QTensor, Rotation, SymMatrix, UnitVector, Vec3};
use crate::shapes::{self, Shape, SurfaceRule, DEFAULT_ORDER};

/// Orientation of a species' inclusions as a function of position.
#[derive(Clone, Debug)]
pub enum RotationField {
    Constant(Rotation),
    /// Rotation by `rate · x[along] + phase` about `axis`.
    Twist { axis: Vec3, along: usize, rate: f64, phase: f64 },
}

impl RotationField {
    pub fn identity() -> Self {
        RotationField::Constant(Rotation::identity())
    }

    pub fn at(&self, x: &Vec3) -> Mat3 {
        match self {
            RotationField::Constant(r) => *r.matrix(),
            RotationField::Twist { axis, along, rate, phase } => {
                *Rotation::about_axis(axis, rate * x[*along] + phase)
                    .expect("twist axis validated at construction")
                    .matrix()
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, RotationField::Constant(_)) || matches!(self, RotationField::Twist { rate, .. } if *rate == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RotationField::Constant(r) => Rotation::new(*r.matrix()).map(|_| ()),
            RotationField::Twist { axis, along, rate, phase } => {
                if *along >= 3 || !rate.is_finite() || !phase.is_finite() {
                    return Err(Error::Assumption {
                        label: "H4",
                        detail: format!("twist rotation field needs along < 3 and finite rate/phase, got along={along}"),
                    });
                }
                UnitVector::normalize(*axis).map(|_| ()).map_err(|_| Error::Assumption {
                    label: "H4",
                    detail: "twist rotation axis must be nonzero".into(),
                })
            }
        }
    }
}

/// Axis-aligned box with a density value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityBox {
    pub lo: Vec3,
    pub hi: Vec3,
    pub value: f64,
}

impl DensityBox {
    pub fn contains(&self, x: &Vec3) -> bool {
        (0..3).all(|k| x[k] >= self.lo[k] && x[k] <= self.hi[k])
    }
}

/// Number density `ξ(x)` of inclusion centres (per `ε³`).
#[derive(Clone, Debug, PartialEq)]
pub enum DensityField {
    Constant(f64),
    /// First matching box wins; `background` elsewhere.
    Boxes { background: f64, boxes: Vec<DensityBox> },
}

impl DensityField {
    pub fn at(&self, x: &Vec3) -> f64 {
        match self {
            DensityField::Constant(v) => *v,
            DensityField::Boxes { background, boxes } => {
                boxes.iter().find(|b| b.contains(x)).map_or(*background, |b| b.value)
            }
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            DensityField::Constant(v) => vec![*v],
            DensityField::Boxes { background, boxes } => {
                std::iter::once(*background).chain(boxes.iter().map(|b| b.value)).collect()
            }
        }
    }

    pub fn max(&self) -> f64 {
        self.values().into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values().iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Assumption {
                label: "H3",
                detail: format!("species density must be finite and nonnegative, got {:?}", self.values()),
            });
        }
        Ok(())
    }
}

/// One population of inclusions.
#[derive(Clone, Debug)]
pub struct Species {
    pub shape: Arc<Shape>,
    pub rotation: RotationField,
    pub density: DensityField,
    pub surface: SurfaceDensity,
    rule: Arc<SurfaceRule>,
}

impl Species {
    pub fn new(shape: Shape, rotation: RotationField, density: DensityField, surface: SurfaceDensity) -> Self {
        let rule = Arc::new(shape.rule(DEFAULT_ORDER));
        Species { shape: Arc::new(shape), rotation, density, surface, rule }
    }

    /// Constant orientation `Id`, unit density.
    pub fn uniform(shape: Shape, surface: SurfaceDensity) -> Self {
        Species::new(shape, RotationField::identity(), DensityField::Constant(1.0), surface)
    }

    pub fn with_density(mut self, density: DensityField) -> Self {
        self.density = density;
        self
    }

    pub fn with_rotation(mut self, rotation: RotationField) -> Self {
        self.rotation = rotation;
        self
    }

    fn rule_for(&self, order: usize) -> std::borrow::Cow<'_, SurfaceRule> {
        if order == self.rule.order {
            std::borrow::Cow::Borrowed(&*self.rule)
        } else {
            std::borrow::Cow::Owned(self.shape.rule(order))
        }
    }

    /// Closed form of this species' homogenised potential at `x` (unit density),
    /// available for the built-in quadratic densities.
    pub fn closed_form_at(&self, x: &Vec3) -> Option<HomQuadratic> {
        let r = self.rotation.at(x);
        let m = self.shape.moment().conjugate(&r);
        let area = self.shape.area();
        match self.surface {
            SurfaceDensity::RapiniPapoular { strength } => Some(HomQuadratic {
                constant: strength * area * 2.0 / 3.0,
                iso: strength * area,
                aniso: SymMatrix::ZERO,
                linear: m.scale(-2.0 * strength),
            }),
            SurfaceDensity::SphericalQuadratic { coefficient } => Some(HomQuadratic {
                aniso: m.scale(coefficient / (4.0 * std::f64::consts::PI)),
                ..HomQuadratic::ZERO
            }),
            SurfaceDensity::Custom(_) => None,
        }
    }
}

/// `c + iso·|Q|² + tr(Q² A) + tr(Q L)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomQuadratic {
    pub constant: f64,
    pub iso: f64,
    pub aniso: SymMatrix,
    pub linear: SymMatrix,
}

impl HomQuadratic {
    pub const ZERO: HomQuadratic =
        HomQuadratic { constant: 0.0, iso: 0.0, aniso: SymMatrix::ZERO, linear: SymMatrix::ZERO };

    pub fn scaled(&self, s: f64) -> Self {
        HomQuadratic {
            constant: s * self.constant,
            iso: s * self.iso,
            aniso: self.aniso.scale(s),
            linear: self.linear.scale(s),
        }
    }

    pub fn add(&self, o: &HomQuadratic) -> Self {
        HomQuadratic {
            constant: self.constant + o.constant,
            iso: self.iso + o.iso,
            aniso: self.aniso + o.aniso,
            linear: self.linear + o.linear,
        }
    }

    #[inline]
    pub fn value(&self, q: &QTensor) -> f64 {
        let m = q.to_matrix();
        self.constant + self.iso * q.norm_sq() + dot(&(m * m), &self.aniso) + dot(&m, &self.linear)
    }

    #[inline]
    pub fn gradient(&self, q: &QTensor) -> QTensor {
        let m = q.to_matrix();
        let a = self.aniso.to_matrix();
        let mut g = (2.0 * self.iso) * *q + QTensor::project(&self.linear.to_matrix());
        if self.aniso != SymMatrix::ZERO {
            g += QTensor::project(&(m * a + a * m));
        }
        g
    }

    /// Infimum over the traceless symmetric matrices; `None` if unbounded below.
    pub fn infimum(&self) -> Option<f64> {
        let mut h = SMatrix::<f64, 5, 5>::zeros();
        let basis: Vec<Mat3> = (0..5).map(crate::qtensor::basis_matrix).collect();
        let a = self.aniso.to_matrix();
        for i in 0..5 {
            for j in 0..5 {
                let sym = 0.5 * (basis[i] * basis[j] + basis[j] * basis[i]);
                h[(i, j)] = self.iso * if i == j { 1.0 } else { 0.0 } + dot(&sym, &a);
            }
        }
        let l = SVector::<f64, 5>::from_column_slice(&QTensor::project(&self.linear.to_matrix()).0);
        let eig = h.symmetric_eigen();
        let scale = eig.eigenvalues.amax().max(1.0);
        let mut drop = 0.0;
        for k in 0..5 {
            let lambda = eig.eigenvalues[k];
            let lk = eig.eigenvectors.column(k).dot(&l);
            if lambda < -1e-12 * scale {
                return None;
            }
            if lambda <= 1e-12 * scale {
                if lk.abs() > 1e-12 * scale {
                    return None;
                }
                continue;
            }
            drop += lk * lk / lambda;
        }
        Some(self.constant - 0.25 * drop)
    }
}

/// `∫_{∂P} f_s(Q, R(x) ν_in) dσ` by quadrature over the reference body.
pub fn f_hom_j(species: &Species, q: &QTensor, x: &Vec3, order: usize) -> f64 {
    let r = species.rotation.at(x);
    species
        .rule_for(order)
        .integrate(|_, n| f_surface(&species.surface, q, &UnitVector::new_unchecked(-(r * n.as_vec()))))
}

/// Derivative of [`f_hom_j`] in `Q` by differentiating under the integral.
pub fn f_hom_j_grad(species: &Species, q: &QTensor, x: &Vec3, order: usize) -> Result<QTensor> {
    let r = species.rotation.at(x);
    let rule = species.rule_for(order);
    let mut g = QTensor::ZERO;
    for node in &rule.nodes {
        let nu = UnitVector::new_unchecked(-(r * node.normal));
        g += node.weight * f_surface_grad(&species.surface, q, &nu)?;
    }
    Ok(g)
}

/// `Σ_j ξ_j(x) f_hom^j(Q, x)`, entirely by quadrature.
pub fn f_hom_quadrature(species: &[Species], q: &QTensor, x: &Vec3, order: usize) -> f64 {
    species.iter().map(|s| s.density.at(x) * f_hom_j(s, q, x, order)).sum()
}

/// `Σ_j ξ_j(x) f_hom^j(Q, x)`; closed form for the built-in densities,
/// quadrature for custom ones.
pub fn f_hom(species: &[Species], q: &QTensor, x: &Vec3) -> f64 {
    LocalPotential::compile(species, x).value(species, q, x)
}

/// Derivative of [`f_hom`] in `Q`.
pub fn f_hom_grad(species: &[Species], q: &QTensor, x: &Vec3) -> Result<QTensor> {
    LocalPotential::compile(species, x).gradient(species, q, x)
}

/// Homogenised potential frozen at one position: the merged closed-form part
/// plus weighted references to custom species.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalPotential {
    pub quadratic: HomQuadratic,
    pub custom: Vec<(usize, f64)>,
}

impl LocalPotential {
    pub fn compile(species: &[Species], x: &Vec3) -> Self {
        let mut quadratic = HomQuadratic::ZERO;
        let mut custom = Vec::new();
        for (j, s) in species.iter().enumerate() {
            let xi = s.density.at(x);
            if xi == 0.0 {
                continue;
            }
            match s.closed_form_at(x) {
                Some(h) => quadratic = quadratic.add(&h.scaled(xi)),
                None => custom.push((j, xi)),
            }
        }
        LocalPotential { quadratic, custom }
    }

    #[inline]
    pub fn value(&self, species: &[Species], q: &QTensor, x: &Vec3) -> f64 {
        let mut v = self.quadratic.value(q);
        for &(j, xi) in &self.custom {
            v += xi * f_hom_j(&species[j], q, x, DEFAULT_ORDER);
        }
        v
    }

    #[inline]
    pub fn gradient(&self, species: &[Species], q: &QTensor, x: &Vec3) -> Result<QTensor> {
        let mut g = self.quadratic.gradient(q);
        for &(j, xi) in &self.custom {
            g += xi * f_hom_j_grad(&species[j], q, x, DEFAULT_ORDER)?;
        }
        Ok(g)
    }

    /// Infimum over `Q`; numerical descent when custom species are present.
    pub fn infimum(&self, species: &[Species], x: &Vec3) -> Option<f64> {
        if self.custom.is_empty() {
            return self.quadratic.infimum();
        }
        let mut q = QTensor::ZERO;
        let mut v = self.value(species, &q, x);
        let mut step = 0.1;
        for _ in 0..10_000 {
            let g = self.gradient(species, &q, x).ok()?;
            if g.norm() < 1e-10 || step < 1e-14 {
                break;
            }
            let trial = q - step * g;
            let tv = self.value(species, &trial, x);
            if tv < v {
                q = trial;
                v = tv;
                step *= 1.2;
            } else {
                step *= 0.5;
            }
        }
        v.is_finite().then_some(v)
    }
}

/// Coefficients `a` with `Σ a_k M_k = P` over the basis `M_1 … M_6`
/// (Gram system, the basis is not orthonormal).
pub fn decompose_in_mk(p: &SymMatrix) -> Result<[f64; 6]> {
    let mats: Vec<SymMatrix> = (1..=6).map(shapes::m_k).collect::<Result<_>>()?;
    let g = SMatrix::<f64, 6, 6>::from_fn(|a, b| dot(&mats[a], &mats[b]));
    let rhs = SVector::<f64, 6>::from_fn(|k, _| dot(p, &mats[k]));
    let lu = g.lu();
    let sol = lu.solve(&rhs).ok_or(Error::Singular("Gram matrix of the M_k basis"))?;
    Ok(std::array::from_fn(|k| sol[k]))
}

/// `Σ a_k M_k`.
pub fn recompose_from_mk(a: &[f64; 6]) -> Result<SymMatrix> {
    let mut p = SymMatrix::ZERO;
    for (k, ak) in a.iter().enumerate() {
        p = p + shapes::m_k(k + 1)?.scale(*ak);
    }
    Ok(p)
}

/// Requested homogenised potential `(a′ − a) tr(Q²) + W tr(QP) + const`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DesignTarget {
    pub p: SymMatrix,
    pub w: f64,
    pub a: f64,
    pub a_prime: f64,
}

/// One wedge species of a design.
#[derive(Clone, Debug)]
pub struct DesignComponent {
    /// Parent assembly `1..=6`.
    pub assembly: usize,
    /// Catalogue name of the wedge, e.g. `wedge-23`.
    pub wedge: String,
    /// Placement offset of the component inside its assembly.
    pub offset: Vec3,
    /// Intensity `i_j`; the Rapini-Papoular strength is `W i_j`.
    pub intensity: f64,
    pub area: f64,
    /// Body recentred so that the origin is interior.
    pub shape: Shape,
}

/// Colloidal design realising a [`DesignTarget`].
#[derive(Clone, Debug)]
pub struct DesignSpec {
    pub target: DesignTarget,
    pub coefficients: [f64; 6],
    pub components: Vec<DesignComponent>,
    /// `Σ_j i_j σ(∂P_j)`.
    pub alpha_p: f64,
    /// `tr(Q²)` coefficient of the wedge species, measured by quadrature.
    pub wedge_quadratic: f64,
    /// `tr(Q²)` response of the spherical species per unit coefficient.
    pub sphere_unit_response: f64,
    pub spherical_coefficient: f64,
    /// Total homogenised potential at `Q = 0` (reported, never subtracted).
    pub constant_offset: f64,
    pub order: usize,
}

impl DesignSpec {
    /// All species of the design: the wedge components, then the ball.
    pub fn species(&self) -> Vec<Species> {
        let mut out: Vec<Species> = self
            .components
            .iter()
            .map(|c| {
                Species::uniform(
                    c.shape.clone(),
                    SurfaceDensity::RapiniPapoular { strength: self.target.w * c.intensity },
                )
            })
            .collect();
        out.push(Species::uniform(
            shapes::ball(),
            SurfaceDensity::SphericalQuadratic { coefficient: self.spherical_coefficient },
        ));
        out
    }

    /// Total homogenised potential by quadrature at the design's order.
    pub fn f_hom_total(&self, q: &QTensor) -> f64 {
        f_hom_quadrature(&self.species(), q, &Vec3::zeros(), self.order)
    }

    /// `|Σ a_k M_k − P|` entrywise max.
    pub fn reconstruction_residual(&self) -> f64 {
        recompose_from_mk(&self.coefficients)
            .map(|p| p.max_abs_diff(&self.target.p))
            .unwrap_or(f64::INFINITY)
    }

    /// Human-readable report as CSV rows `key,value`.
    pub fn report_csv(&self) -> String {
        let mut s = String::from("key,value\n");
        let t = &self.target;
        let _ = writeln!(s, "W,{:.17e}", t.w);
        let _ = writeln!(s, "a,{:.17e}", t.a);
        let _ = writeln!(s, "a_prime,{:.17e}", t.a_prime);
        for (k, v) in t.p.0.iter().enumerate() {
            let _ = writeln!(s, "P[{}],{:.17e}", ["xx", "yy", "zz", "xy", "xz", "yz"][k], v);
        }
        for (k, a) in self.coefficients.iter().enumerate() {
            let _ = writeln!(s, "a_{},{:.17e}", k + 1, a);
        }
        for c in &self.components {
            let _ = writeln!(s, "i[assembly{}:{}],{:.17e}", c.assembly, c.wedge, c.intensity);
        }
        let _ = writeln!(s, "alpha_P,{:.17e}", self.alpha_p);
        let _ = writeln!(s, "wedge_trQ2_coefficient,{:.17e}", self.wedge_quadratic);
        let _ = writeln!(s, "sphere_unit_response,{:.17e}", self.sphere_unit_response);
        let _ = writeln!(s, "spherical_coefficient,{:.17e}", self.spherical_coefficient);
        let _ = writeln!(s, "constant_offset,{:.17e}", self.constant_offset);
        let _ = writeln!(s, "reconstruction_residual,{:.3e}", self.reconstruction_residual());
        s
    }
}

/// Second difference along a fixed unit probe: the `tr(Q²)` coefficient of a
/// potential that is quadratic in `Q` with isotropic quadratic part.
fn quadratic_coefficient(f: impl Fn(&QTensor) -> f64) -> f64 {
    let probe = (1.0 / 5f64.sqrt()) * QTensor([1.0, 1.0, 1.0, 1.0, 1.0]);
    (f(&probe) + f(&-probe) - 2.0 * f(&QTensor::ZERO)) / 2.0
}

/// Builds wedge species with Rapini-Papoular strengths `W i_j` so that their
/// linear part equals `W tr(QP)`, plus one ball species with the density
/// `(coef/4π) ν·Q²ν` whose coefficient is calibrated by quadrature so that the
/// total `tr(Q²)` coefficient equals `a′ − a`.
///
/// Each component of assembly `k` gets `i_j = −a_k / (2 m_k)`, where `m_k` is
/// the ratio between the assembly's normal moment and the basis matrix `M_k`.
pub fn design_linear_term(p: &SymMatrix, w: f64, a: f64, a_prime: f64) -> Result<DesignSpec> {
    design_linear_term_with_order(p, w, a, a_prime, DEFAULT_ORDER)
}

pub fn design_linear_term_with_order(p: &SymMatrix, w: f64, a: f64, a_prime: f64, order: usize) -> Result<DesignSpec> {
    let coefficients = decompose_in_mk(p)?;
    let mut components = Vec::new();
    for (k, ak) in coefficients.iter().enumerate() {
        let asm = shapes::assembly(k + 1)?;
        let intensity = -ak / (2.0 * asm.multiplicity());
        for (c, body) in asm.components.iter().enumerate() {
            let wedge = match (k + 1, c) {
                (1, 0) => "wedge+23",
                (1, _) => "wedge-23",
                (2, 0) => "wedge+13",
                (2, _) => "wedge-13",
                (3, 0) | (4, _) => "wedge+12",
                (3, _) => "wedge-12",
                (5, _) => "wedge+13",
                _ => "wedge+23",
            };
            components.push(DesignComponent {
                assembly: k + 1,
                wedge: wedge.to_string(),
                offset: body.placement().translation,
                intensity,
                area: body.area(),
                shape: body.centered(),
            });
        }
    }
    let alpha_p = components.iter().map(|c| c.intensity * c.area).sum();

    let target = DesignTarget { p: *p, w, a, a_prime };
    let mut spec = DesignSpec {
        target,
        coefficients,
        components,
        alpha_p,
        wedge_quadratic: 0.0,
        sphere_unit_response: 0.0,
        spherical_coefficient: 0.0,
        constant_offset: 0.0,
        order,
    };
    let origin = Vec3::zeros();
    let wedges: Vec<Species> = {
        let mut all = spec.species();
        all.pop();
        all
    };
    spec.wedge_quadratic = quadratic_coefficient(|q| f_hom_quadrature(&wedges, q, &origin, order));
    let unit_sphere = [Species::uniform(shapes::ball(), SurfaceDensity::SphericalQuadratic { coefficient: 1.0 })];
    spec.sphere_unit_response = quadratic_coefficient(|q| f_hom_quadrature(&unit_sphere, q, &origin, order));
    spec.spherical_coefficient = (a_prime - a - spec.wedge_quadratic) / spec.sphere_unit_response;
    spec.constant_offset = spec.f_hom_total(&QTensor::ZERO);
    Ok(spec)
}
