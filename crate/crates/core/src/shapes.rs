//! Convex reference bodies, their boundary parameterisations and surface
//! quadrature, including the ball and the "potato wedge" catalogue.
//!
//! All stored normals point outward from the body.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::qtensor::{orthogonality_defect, Mat3, SymMatrix, UnitVector, Vec3};
use crate::quadrature::gauss_legendre_on;

/// Default number of Gauss points per patch direction.
pub const DEFAULT_ORDER: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
enum PatchKind {
    /// Unit-sphere sector `frame · (sinθ cosφ, sinθ sinφ, cosθ)`.
    Sphere { frame: Mat3 },
    /// Flat sector of the unit disc `r cosψ a + r sinψ b` with fixed normal.
    Disc { a: Vec3, b: Vec3, normal: Vec3 },
}

/// A smooth map from a parameter rectangle to the boundary of a reference body.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Patch {
    kind: PatchKind,
    u: (f64, f64),
    v: (f64, f64),
}

impl Patch {
    /// Position, outward unit normal and area Jacobian at parameter `(u, v)`.
    pub fn eval(&self, u: f64, v: f64) -> (Vec3, Vec3, f64) {
        match self.kind {
            PatchKind::Sphere { frame } => {
                let (st, ct) = u.sin_cos();
                let (sp, cp) = v.sin_cos();
                let p = frame * Vec3::new(st * cp, st * sp, ct);
                (p, p, st)
            }
            PatchKind::Disc { a, b, normal } => {
                let (s, c) = v.sin_cos();
                (u * (c * a + s * b), normal, u)
            }
        }
    }

    pub fn parameter_box(&self) -> ((f64, f64), (f64, f64)) {
        (self.u, self.v)
    }
}

/// Proper similarity `x ↦ t + s R x` (R orthogonal).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Placement {
    pub rotation: Mat3,
    pub scale: f64,
    pub translation: Vec3,
}

impl Placement {
    pub fn identity() -> Self {
        Placement { rotation: Mat3::identity(), scale: 1.0, translation: Vec3::zeros() }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.translation + self.scale * (self.rotation * p)
    }

    pub fn inverse_apply(&self, x: &Vec3) -> Vec3 {
        self.rotation.transpose() * (x - self.translation) / self.scale
    }

    /// `outer ∘ self`.
    pub fn then(&self, outer: &Placement) -> Placement {
        Placement {
            rotation: outer.rotation * self.rotation,
            scale: outer.scale * self.scale,
            translation: outer.apply(&self.translation),
        }
    }
}

/// One quadrature node on a body's boundary.
#[derive(Clone, Copy, Debug)]
pub struct SurfaceNode {
    pub position: Vec3,
    /// Outward unit normal.
    pub normal: Vec3,
    pub weight: f64,
}

/// Flattened tensor-product Gauss rule over all patches of a shape.
#[derive(Clone, Debug)]
pub struct SurfaceRule {
    pub order: usize,
    pub nodes: Vec<SurfaceNode>,
}

impl SurfaceRule {
    pub fn integrate<F: FnMut(&Vec3, &UnitVector) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .map(|n| n.weight * f(&n.position, &UnitVector::new_unchecked(n.normal)))
            .sum()
    }
}

/// Compact convex body: unit ball intersected with half-spaces `n·y ≤ 0`
/// (reference frame), then placed by a similarity.
#[derive(Clone, Debug)]
pub struct Shape {
    name: String,
    patches: Vec<Patch>,
    /// Outward normals of the flat faces through the origin (reference frame).
    halfspaces: Vec<Vec3>,
    placement: Placement,
    convex: bool,
    area: f64,
    moment: SymMatrix,
}

impl Shape {
    fn build(name: impl Into<String>, patches: Vec<Patch>, halfspaces: Vec<Vec3>) -> Shape {
        let mut s = Shape {
            name: name.into(),
            patches,
            halfspaces,
            placement: Placement::identity(),
            convex: true,
            area: 0.0,
            moment: SymMatrix::ZERO,
        };
        s.refresh_cache();
        s
    }

    fn refresh_cache(&mut self) {
        let rule = self.rule(DEFAULT_ORDER);
        self.area = rule.integrate(|_, _| 1.0);
        self.moment = moment_from_rule(&rule);
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn placement(&self) -> &Placement {
        &self.placement
    }

    pub fn is_convex(&self) -> bool {
        self.convex
    }

    /// Boundary area, computed at [`DEFAULT_ORDER`].
    pub fn area(&self) -> f64 {
        self.area
    }

    /// `∫ ν⊗ν dσ`, computed at [`DEFAULT_ORDER`].
    pub fn moment(&self) -> SymMatrix {
        self.moment
    }

    /// Radius of a ball about the origin containing the body.
    pub fn bounding_radius(&self) -> f64 {
        self.placement.translation.norm() + self.placement.scale
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        let y = self.placement.inverse_apply(x);
        y.norm_squared() <= 1.0 && self.halfspaces.iter().all(|n| n.dot(&y) <= 0.0)
    }

    /// Whether the origin lies in the interior, with relative margin `tol`.
    pub fn origin_is_interior(&self, tol: f64) -> bool {
        let y = self.placement.inverse_apply(&Vec3::zeros());
        y.norm() < 1.0 - tol && self.halfspaces.iter().all(|n| n.dot(&y) < -tol)
    }

    /// A point in the interior (the centroid of a few boundary points pulled inward).
    pub fn interior_point(&self) -> Vec3 {
        let mut c = Vec3::zeros();
        for n in &self.halfspaces {
            c -= *n;
        }
        let c = if c.norm() > 0.0 { 0.4 * c / c.norm() } else { c };
        self.placement.apply(&c)
    }

    pub fn rule(&self, order: usize) -> SurfaceRule {
        let order = order.max(2);
        let s2 = self.placement.scale * self.placement.scale;
        let mut nodes = Vec::with_capacity(self.patches.len() * order * order);
        for patch in &self.patches {
            let (ub, vb) = patch.parameter_box();
            let (us, uw) = gauss_legendre_on(order, ub.0, ub.1);
            let (vs, vw) = gauss_legendre_on(order, vb.0, vb.1);
            for (u, wu) in us.iter().zip(&uw) {
                for (v, wv) in vs.iter().zip(&vw) {
                    let (p, n, jac) = patch.eval(*u, *v);
                    nodes.push(SurfaceNode {
                        position: self.placement.apply(&p),
                        normal: self.placement.rotation * n,
                        weight: wu * wv * jac * s2,
                    });
                }
            }
        }
        SurfaceRule { order, nodes }
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Shape {
        self.name = name.into();
        self
    }

    /// Moves the body so that an interior point sits at the origin.
    pub fn centered(&self) -> Shape {
        let c = self.interior_point();
        transform(self, &Mat3::identity(), 1.0, &-c).expect("identity is orthogonal")
    }
}

fn moment_from_rule(rule: &SurfaceRule) -> SymMatrix {
    let mut m = [0.0; 6];
    for n in &rule.nodes {
        let v = n.normal;
        let w = n.weight;
        m[0] += w * v.x * v.x;
        m[1] += w * v.y * v.y;
        m[2] += w * v.z * v.z;
        m[3] += w * v.x * v.y;
        m[4] += w * v.x * v.z;
        m[5] += w * v.y * v.z;
    }
    SymMatrix(m)
}

/// `∫_{∂shape} f(x, ν) dσ` by tensor-product Gauss-Legendre quadrature.
pub fn quad_surface<F: FnMut(&Vec3, &UnitVector) -> f64>(shape: &Shape, f: F, order: usize) -> f64 {
    shape.rule(order).integrate(f)
}

/// `∫_{∂shape} ν⊗ν dσ`.
pub fn moment_matrix(shape: &Shape, order: usize) -> SymMatrix {
    moment_from_rule(&shape.rule(order))
}

/// Maps the body by `x ↦ translation + scale · rotation · x`.
pub fn transform(shape: &Shape, rotation: &Mat3, scale: f64, translation: &Vec3) -> Result<Shape> {
    let defect = orthogonality_defect(rotation);
    if defect > 1e-10 {
        return Err(Error::NotOrthogonal { deviation: defect });
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidParameter(format!("scale must be positive, got {scale}")));
    }
    let outer = Placement { rotation: *rotation, scale, translation: *translation };
    let mut out = shape.clone();
    out.placement = shape.placement.then(&outer);
    out.refresh_cache();
    Ok(out)
}

/// The closed unit ball `B₁`.
pub fn ball() -> Shape {
    let patch = Patch {
        kind: PatchKind::Sphere { frame: Mat3::identity() },
        u: (0.0, PI),
        v: (0.0, 2.0 * PI),
    };
    Shape::build("ball", vec![patch], Vec::new())
}

fn axis(k: usize) -> Vec3 {
    let mut v = Vec3::zeros();
    v[k] = 1.0;
    v
}

/// `{ |x| ≤ 1, sign·x_i ≥ 0, x_j ≥ 0 }` (0-based axes).
///
/// `sign = +1` gives `Ω_ij^+`, `sign = −1` gives `Ω_ij^-`.
pub fn wedge(sign: f64, i: usize, j: usize) -> Result<Shape> {
    if i >= 3 || j >= 3 || i == j {
        return Err(Error::InvalidParameter(format!("wedge axes ({i}, {j}) must be distinct and < 3")));
    }
    let k = 3 - i - j;
    let si = if sign < 0.0 { -1.0 } else { 1.0 };
    let (ei, ej, ek) = (si * axis(i), axis(j), axis(k));
    // local (u1, u2, u3) = (s_i x_i, x_j, x_k)
    let frame = Mat3::from_columns(&[ei, ej, ek]);
    let half = (-PI / 2.0, PI / 2.0);
    let patches = vec![
        Patch { kind: PatchKind::Sphere { frame }, u: (0.0, PI), v: (0.0, PI / 2.0) },
        Patch { kind: PatchKind::Disc { a: ej, b: ek, normal: -ei }, u: (0.0, 1.0), v: half },
        Patch { kind: PatchKind::Disc { a: ei, b: ek, normal: -ej }, u: (0.0, 1.0), v: half },
    ];
    let tag = if si > 0.0 { '+' } else { '-' };
    let name = format!("wedge{tag}{}{}", i + 1, j + 1);
    Ok(Shape::build(name, patches, vec![-ei, -ej]))
}

/// Closed-form `∫ ν⊗ν dσ` of a wedge: `π/3 + π/2` on axes `i, j`, `π/3` on the
/// third axis and `sign · 2/3` off-diagonal in `(i, j)`.
pub fn wedge_moment_analytic(sign: f64, i: usize, j: usize) -> SymMatrix {
    let k = 3 - i - j;
    let mut m = Mat3::zeros();
    m[(i, i)] = PI / 3.0 + PI / 2.0;
    m[(j, j)] = PI / 3.0 + PI / 2.0;
    m[(k, k)] = PI / 3.0;
    let s = if sign < 0.0 { -1.0 } else { 1.0 };
    m[(i, j)] = s * 2.0 / 3.0;
    m[(j, i)] = s * 2.0 / 3.0;
    SymMatrix::from_matrix(&m)
}

/// The basis matrices `M_k`, `k = 1..=6`:
/// `(π/3 + π/2) Id − (π/2) e_k⊗e_k` for `k ≤ 3`, and the single-wedge matrices
/// with off-diagonal `2/3` in the `(1,2)`, `(1,3)`, `(2,3)` slots for `k = 4, 5, 6`.
pub fn m_k(k: usize) -> Result<SymMatrix> {
    let iso = PI / 3.0 + PI / 2.0;
    let base = SymMatrix::identity().scale(iso);
    let pick = |axis: usize| SymMatrix::unit_pair(axis, axis).scale(-PI / 2.0);
    let off = |a: usize, b: usize| SymMatrix::unit_pair(a, b).scale(2.0 / 3.0);
    Ok(match k {
        1..=3 => base + pick(k - 1),
        4 => base + pick(2) + off(0, 1),
        5 => base + pick(1) + off(0, 2),
        6 => base + pick(0) + off(1, 2),
        _ => return Err(Error::OutOfRange { index: k, range: "1..=6" }),
    })
}

/// A possibly disconnected body stored as its convex components.
#[derive(Clone, Debug)]
pub struct Assembly {
    pub index: usize,
    pub components: Vec<Shape>,
    /// Sum of the components' closed-form wedge matrices.
    pub analytic_moment: SymMatrix,
}

impl Assembly {
    pub fn name(&self) -> String {
        format!("assembly{}", self.index)
    }

    pub fn area(&self) -> f64 {
        self.components.iter().map(Shape::area).sum()
    }

    pub fn moment(&self, order: usize) -> SymMatrix {
        self.components
            .iter()
            .map(|c| moment_matrix(c, order))
            .fold(SymMatrix::ZERO, |a, b| a + b)
    }

    /// Ratio between the assembly's true normal moment and the basis matrix `M_k`
    /// (2 for the two-wedge assemblies 1–3, 1 for the single wedges 4–6).
    pub fn multiplicity(&self) -> f64 {
        self.components.len() as f64
    }
}

/// The six assemblies: `𝔓₁ = Ω₂₃⁺ ∪ (Ω₂₃⁻ − e₂)`, `𝔓₂ = Ω₁₃⁺ ∪ (Ω₁₃⁻ − e₁)`,
/// `𝔓₃ = Ω₁₂⁺ ∪ (Ω₁₂⁻ − e₁)`, `𝔓₄ = Ω₁₂⁺`, `𝔓₅ = Ω₁₃⁺`, `𝔓₆ = Ω₂₃⁺`.
pub fn assembly(k: usize) -> Result<Assembly> {
    let pair = |i: usize, j: usize, shift_axis: usize| -> Result<Vec<(f64, usize, usize, Vec3)>> {
        Ok(vec![(1.0, i, j, Vec3::zeros()), (-1.0, i, j, -axis(shift_axis))])
    };
    let parts = match k {
        1 => pair(1, 2, 1)?,
        2 => pair(0, 2, 0)?,
        3 => pair(0, 1, 0)?,
        4 => vec![(1.0, 0, 1, Vec3::zeros())],
        5 => vec![(1.0, 0, 2, Vec3::zeros())],
        6 => vec![(1.0, 1, 2, Vec3::zeros())],
        _ => return Err(Error::OutOfRange { index: k, range: "1..=6" }),
    };
    let mut components = Vec::new();
    let mut analytic = SymMatrix::ZERO;
    for (c, (sign, i, j, shift)) in parts.into_iter().enumerate() {
        let w = wedge(sign, i, j)?;
        let w = if shift.norm() > 0.0 { transform(&w, &Mat3::identity(), 1.0, &shift)? } else { w };
        components.push(w.renamed(format!("assembly{k}.{}", c + 1)));
        analytic = analytic + wedge_moment_analytic(sign, i, j);
    }
    Ok(Assembly { index: k, components, analytic_moment: analytic })
}

/// Names accepted by [`catalogue_shape`] and [`catalogue_entry`].
pub const CATALOGUE: [&str; 13] = [
    "ball", "wedge+12", "wedge+13", "wedge+23", "wedge-12", "wedge-13", "wedge-23", "assembly1",
    "assembly2", "assembly3", "assembly4", "assembly5", "assembly6",
];

fn catalogue_listing() -> String {
    CATALOGUE.join(", ")
}

/// A catalogue entry: a single convex body or a multi-component assembly.
#[derive(Clone, Debug)]
pub enum CatalogueEntry {
    Single(Shape),
    Assembly(Assembly),
}

impl CatalogueEntry {
    pub fn components(&self) -> Vec<Shape> {
        match self {
            CatalogueEntry::Single(s) => vec![s.clone()],
            CatalogueEntry::Assembly(a) => a.components.clone(),
        }
    }

    /// Closed-form moment, where one is known.
    pub fn analytic_moment(&self) -> Option<SymMatrix> {
        match self {
            CatalogueEntry::Single(s) => analytic_single(s.name()),
            CatalogueEntry::Assembly(a) => Some(a.analytic_moment),
        }
    }
}

fn analytic_single(name: &str) -> Option<SymMatrix> {
    if name == "ball" {
        return Some(SymMatrix::identity().scale(4.0 * PI / 3.0));
    }
    parse_wedge(name).ok().map(|(s, i, j)| wedge_moment_analytic(s, i, j))
}

fn parse_wedge(name: &str) -> Result<(f64, usize, usize)> {
    let unknown = || Error::UnknownShape { name: name.to_string(), catalogue: catalogue_listing() };
    let rest = name.strip_prefix("wedge").ok_or_else(unknown)?;
    let mut chars = rest.chars();
    let sign = match chars.next() {
        Some('+') => 1.0,
        Some('-') => -1.0,
        _ => return Err(unknown()),
    };
    let digits: Vec<usize> = chars.map(|c| c.to_digit(10).map(|d| d as usize)).collect::<Option<_>>().ok_or_else(unknown)?;
    if digits.len() != 2 || digits.iter().any(|d| !(1..=3).contains(d)) || digits[0] == digits[1] {
        return Err(unknown());
    }
    let (i, j) = (digits[0] - 1, digits[1] - 1);
    if sign > 0.0 {
        // Ω_ij^+ = Ω_ji^+
        Ok((1.0, i.min(j), i.max(j)))
    } else if i < j {
        Ok((-1.0, i, j))
    } else {
        // Ω_ij^- is only defined for i < j
        Err(unknown())
    }
}

/// Looks up a catalogue entry by name (`ball`, `wedge±ij`, `assemblyK`).
pub fn catalogue_entry(name: &str) -> Result<CatalogueEntry> {
    if name == "ball" {
        return Ok(CatalogueEntry::Single(ball()));
    }
    if let Some(k) = name.strip_prefix("assembly") {
        let k: usize = k.parse().map_err(|_| Error::UnknownShape {
            name: name.to_string(),
            catalogue: catalogue_listing(),
        })?;
        return assembly(k)
            .map(CatalogueEntry::Assembly)
            .map_err(|_| Error::UnknownShape { name: name.to_string(), catalogue: catalogue_listing() });
    }
    let (s, i, j) = parse_wedge(name)?;
    Ok(CatalogueEntry::Single(wedge(s, i, j)?))
}

/// Looks up a single convex catalogue body (assemblies are rejected).
pub fn catalogue_shape(name: &str) -> Result<Shape> {
    match catalogue_entry(name)? {
        CatalogueEntry::Single(s) => Ok(s),
        CatalogueEntry::Assembly(_) => Err(Error::InvalidParameter(format!(
            "`{name}` is a multi-component assembly; use its components as separate species"
        ))),
    }
}

/// Shared handle used by species and lattices.
pub type ShapeRef = Arc<Shape>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qtensor::{dot, Rotation};
    use crate::testutil::rng;
    use rand::Rng;

    #[test]
    fn ball_area_and_moment() {
        let b = ball();
        assert!((quad_surface(&b, |_, _| 1.0, 32) - 4.0 * PI).abs() < 1e-10);
        let m = moment_matrix(&b, 32);
        assert!(m.max_abs_diff(&SymMatrix::identity().scale(4.0 * PI / 3.0)) < 1e-10);
    }

    #[test]
    fn wedge_area_at_two_orders() {
        let w = wedge(1.0, 0, 1).unwrap();
        for order in [16, 32] {
            assert!((quad_surface(&w, |_, _| 1.0, order) - 2.0 * PI).abs() < 1e-10);
        }
    }

    #[test]
    fn spherical_patch_mixed_moment() {
        // only the curved patch: x1 x2 integrates to 4/3 · 1/2
        let w = wedge(1.0, 0, 1).unwrap();
        let v = quad_surface(&w, |x, _| if (x.norm() - 1.0).abs() < 1e-12 { x.x * x.y } else { 0.0 }, 32);
        assert!((v - 2.0 / 3.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn wedge_moments_match_closed_forms() {
        for (s, i, j) in [(1.0, 0, 1), (1.0, 0, 2), (1.0, 1, 2), (-1.0, 0, 1), (-1.0, 0, 2), (-1.0, 1, 2)] {
            let w = wedge(s, i, j).unwrap();
            let m = moment_matrix(&w, 32);
            assert!(m.max_abs_diff(&wedge_moment_analytic(s, i, j)) < 1e-10, "{}", w.name());
        }
        let m = wedge_moment_analytic(-1.0, 1, 2);
        assert!((m.0[5] + 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn basis_examples() {
        let m1 = m_k(1).unwrap();
        let expected = SymMatrix::identity().scale(PI / 3.0 + PI / 2.0) - SymMatrix::unit_pair(0, 0).scale(PI / 2.0);
        assert_eq!(m1, expected);
        let sum = m_k(1).unwrap() + m_k(2).unwrap() + m_k(3).unwrap();
        assert!(sum.max_abs_diff(&SymMatrix::identity().scale(2.0 * PI)) < 1e-14);
        assert!((m_k(4).unwrap().0[3] - 2.0 / 3.0).abs() < 1e-15);
        assert!(m_k(0).is_err() && m_k(7).is_err());
        for k in 4..=6 {
            assert!(m_k(k).unwrap().max_abs_diff(&assembly(k).unwrap().analytic_moment) < 1e-15);
        }
    }

    #[test]
    fn basis_is_linearly_independent() {
        let mats: Vec<_> = (1..=6).map(|k| m_k(k).unwrap()).collect();
        let g = nalgebra::SMatrix::<f64, 6, 6>::from_fn(|a, b| dot(&mats[a], &mats[b]));
        assert!(g.determinant().abs() > 1e-6);
    }

    #[test]
    fn assemblies_reproduce_their_moments() {
        for k in 1..=6 {
            let a = assembly(k).unwrap();
            let q = a.moment(32);
            assert!(q.max_abs_diff(&a.analytic_moment) < 1e-8, "assembly {k}");
            let basis = m_k(k).unwrap().scale(a.multiplicity());
            assert!(q.max_abs_diff(&basis) < 1e-8, "assembly {k} vs basis");
        }
    }

    #[test]
    fn quadrature_convergence_and_trace_identity() {
        let mut shapes = vec![ball()];
        for k in 1..=6 {
            shapes.extend(assembly(k).unwrap().components);
        }
        for s in &shapes {
            let m16 = moment_matrix(s, 16);
            let m32 = moment_matrix(s, 32);
            assert!(m16.max_abs_diff(&m32) < 1e-8, "{}", s.name());
            assert!((m32.trace() - s.area()).abs() < 1e-8);
            let eig = nalgebra::SymmetricEigen::new(m32.to_matrix()).eigenvalues;
            assert!(eig.min() > -1e-12);
        }
    }

    #[test]
    fn transform_scales_and_conjugates() {
        let b = ball();
        let same = transform(&b, &Mat3::identity(), 1.0, &Vec3::zeros()).unwrap();
        assert!((same.area() - b.area()).abs() < 1e-14);
        let big = transform(&b, &Mat3::identity(), 2.0, &Vec3::new(1.0, 2.0, 3.0)).unwrap();
        assert!((big.area() - 16.0 * PI).abs() < 1e-9);
        assert!(transform(&b, &(Mat3::identity() * 1.1), 1.0, &Vec3::zeros()).is_err());
        assert!(transform(&b, &Mat3::identity(), 0.0, &Vec3::zeros()).is_err());

        let mut r = rng(31);
        let w = wedge(1.0, 0, 1).unwrap();
        for _ in 0..10 {
            let axis = Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
            let rot = *Rotation::about_axis(&axis, r.gen_range(0.0..6.0)).unwrap().matrix();
            let t = Vec3::new(r.gen_range(-3.0..3.0), 0.5, -1.0);
            let moved = transform(&w, &rot, 1.0, &t).unwrap();
            let expected = wedge_moment_analytic(1.0, 0, 1).conjugate(&rot);
            assert!(moment_matrix(&moved, 32).max_abs_diff(&expected) < 1e-8);
            let scaled = transform(&w, &rot, 0.5, &t).unwrap();
            assert!(scaled.moment().max_abs_diff(&expected.scale(0.25)) < 1e-8);
        }
    }

    #[test]
    fn containment_and_interior() {
        let w = wedge(-1.0, 0, 1).unwrap();
        assert!(w.contains(&Vec3::new(-0.3, 0.3, 0.1)));
        assert!(!w.contains(&Vec3::new(0.3, 0.3, 0.1)));
        assert!(!w.origin_is_interior(1e-9));
        let c = w.centered();
        assert!(c.origin_is_interior(1e-3));
        assert!((c.area() - w.area()).abs() < 1e-12);
        assert!(ball().origin_is_interior(1e-9));
        let a = assembly(1).unwrap();
        assert!(a.components[1].contains(&Vec3::new(0.0, -1.3, 0.2)));
    }

    #[test]
    fn catalogue_lookup() {
        for name in CATALOGUE {
            assert!(catalogue_entry(name).is_ok(), "{name}");
        }
        assert_eq!(catalogue_shape("wedge+21").unwrap().name(), "wedge+12");
        assert!(matches!(catalogue_entry("wedge-21"), Err(Error::UnknownShape { .. })));
        assert!(matches!(catalogue_entry("cube"), Err(Error::UnknownShape { .. })));
        assert!(matches!(catalogue_entry("assembly7"), Err(Error::UnknownShape { .. })));
        assert!(catalogue_shape("assembly1").is_err());
    }
}
