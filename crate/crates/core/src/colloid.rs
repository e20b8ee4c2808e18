//! The ε-family of colloids: inclusion lattices, masked grids, the surface
//! functionals, the full functional with inclusions, harmonic extension,
//! mollified recovery fields, the flat-norm estimator, and ε-sweeps.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::energy::{f_surface, f_surface_grad};
use crate::error::{Error, Result};
use crate::grid::{BoundaryData, GridSpec, Initialization, MaskedLaplacian, TensorField};
use crate::homogenize::{f_hom_j, DensityField, Species};
use crate::qtensor::{Mat3, QTensor, UnitVector, Vec3};
use crate::quadrature::gauss_legendre_on;
use crate::solver::{
    energy_f0, minimize, minimize_objective, neumaier, EnergyReport, HomPotential, Material, MinimizeOptions,
    MinimizeOutcome, Objective, Status, VolumeEnergy,
};

/// Default surface quadrature order for inclusion boundaries.
pub const DEFAULT_SURFACE_ORDER: usize = 12;

/// A violated modelling assumption that is reported rather than enforced.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub label: &'static str,
    pub detail: String,
}

/// Scaling parameters of one member of the ε-family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColloidConfig {
    /// Inclusions have size `ε^α`.
    pub alpha: f64,
    pub eps: f64,
    /// Surface term carries `ε^{−γ}`; 0 is the weak-anchoring regime.
    pub gamma: f64,
    pub surface_order: usize,
}

impl ColloidConfig {
    pub fn new(alpha: f64, eps: f64, gamma: f64) -> Result<Self> {
        let c = ColloidConfig { alpha, eps, gamma, surface_order: DEFAULT_SURFACE_ORDER };
        c.validate()?;
        Ok(c)
    }

    /// Hard errors only; assumption violations are listed by [`Self::violations`].
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidParameter(format!("ε = {} must lie in (0, 1)", self.eps)));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("α = {} must be positive", self.alpha)));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::InvalidParameter(format!("γ = {} must be nonnegative", self.gamma)));
        }
        if self.surface_order < 2 {
            return Err(Error::InvalidParameter("surface quadrature order must be at least 2".into()));
        }
        Ok(())
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.alpha > 1.0 && self.alpha < 1.5) {
            v.push(Violation { label: "H1", detail: format!("α = {} outside (1, 3/2)", self.alpha) });
        }
        if self.gamma >= 0.25 {
            v.push(Violation { label: "K1", detail: format!("γ = {} outside (0, 1/4)", self.gamma) });
        }
        v
    }

    /// Inclusion scale `ε^α`.
    pub fn scale(&self) -> f64 {
        self.eps.powf(self.alpha)
    }

    /// Factor `ε^{−γ}` in front of the surface functional.
    pub fn surface_factor(&self) -> f64 {
        self.eps.powf(-self.gamma)
    }
}

/// Axis-aligned container box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Container {
    pub lo: Vec3,
    pub hi: Vec3,
}

impl Container {
    pub fn unit() -> Self {
        Container { lo: Vec3::zeros(), hi: Vec3::new(1.0, 1.0, 1.0) }
    }

    pub fn of(grid: &GridSpec) -> Self {
        Container { lo: grid.lo, hi: grid.hi }
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|k| self.hi[k] - self.lo[k]).product()
    }

    pub fn distance_to_boundary(&self, x: &Vec3) -> f64 {
        (0..3).map(|k| (x[k] - self.lo[k]).min(self.hi[k] - x[k])).fold(f64::INFINITY, f64::min)
    }

    /// Grid with spacing at most `h` on every axis.
    pub fn grid_with_spacing(&self, h: f64) -> Result<GridSpec> {
        let n = std::array::from_fn(|k| (((self.hi[k] - self.lo[k]) / h) - 1e-9).ceil().max(3.0) as usize + 1);
        GridSpec::new(self.lo, self.hi, n)
    }
}

/// Centres and orientations of one species.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpeciesLattice {
    pub centres: Vec<Vec3>,
    pub rotations: Vec<Mat3>,
}

/// All inclusions of one member of the ε-family.
#[derive(Clone, Debug)]
pub struct InclusionLattice {
    pub eps: f64,
    pub alpha: f64,
    /// `ε^α`.
    pub scale: f64,
    pub species: Vec<SpeciesLattice>,
    /// `min_i [dist(x_i, ∂Ω) + ½ min_{k≠i} |x_k − x_i|] / ε`.
    pub separation: f64,
    pub warnings: Vec<String>,
}

impl InclusionLattice {
    pub fn count(&self, j: usize) -> usize {
        self.species[j].centres.len()
    }

    pub fn total(&self) -> usize {
        self.species.iter().map(|s| s.centres.len()).sum()
    }

    /// `Σ_j N_j ε^{2α} σ(∂P_j)`.
    pub fn surface_area(&self, species: &[Species]) -> f64 {
        species.iter().zip(&self.species).map(|(s, l)| l.centres.len() as f64 * self.scale * self.scale * s.shape.area()).sum()
    }

    /// Iterates `(species, centre, rotation)`.
    pub fn inclusions(&self) -> impl Iterator<Item = (usize, &Vec3, &Mat3)> {
        self.species.iter().enumerate().flat_map(|(j, l)| l.centres.iter().zip(&l.rotations).map(move |(c, r)| (j, c, r)))
    }
}

/// Periodic lattice of pitch `ε`: centres `y ∈ ε(ℤ + o_j)³` whose cell
/// `y + [−ε/2, ε/2]³` lies in the open container, with `o_j = ½` for odd
/// species indices. Densities below one thin the lattice deterministically;
/// inclusions are checked to be disjoint and inside the container.
pub fn build_lattice(config: &ColloidConfig, species: &[Species], container: &Container) -> Result<InclusionLattice> {
    config.validate()?;
    let eps = config.eps;
    let scale = config.scale();
    let mut warnings = Vec::new();
    let mut out = Vec::with_capacity(species.len());
    let tol = 1e-12 * eps;
    for (j, s) in species.iter().enumerate() {
        s.density.validate()?;
        if s.density.max() > 1.0 {
            return Err(Error::InvalidParameter(format!(
                "species {j}: density {} exceeds 1, which a lattice of pitch ε cannot realise",
                s.density.max()
            )));
        }
        let offset = if j % 2 == 1 { 0.5 } else { 0.0 };
        let range = |k: usize| {
            let lo = ((container.lo[k] + eps / 2.0) / eps - offset).floor() as i64 - 1;
            let hi = ((container.hi[k] - eps / 2.0) / eps - offset).ceil() as i64 + 1;
            (lo..=hi)
                .map(|m| (m as f64 + offset) * eps)
                .filter(|y| y - eps / 2.0 > container.lo[k] + tol && y + eps / 2.0 < container.hi[k] - tol)
                .collect::<Vec<f64>>()
        };
        let (xs, ys, zs) = (range(0), range(1), range(2));
        let mut lattice = SpeciesLattice::default();
        let mut seen: Vec<(u64, u64)> = Vec::new();
        for z in &zs {
            for y in ys.iter() {
                for x in xs.iter() {
                    let c = Vec3::new(*x, *y, *z);
                    let xi = s.density.at(&c);
                    // Bresenham-style thinning per density value
                    let key = xi.to_bits();
                    let slot = match seen.iter().position(|(k, _)| *k == key) {
                        Some(p) => p,
                        None => {
                            seen.push((key, 0));
                            seen.len() - 1
                        }
                    };
                    let r = seen[slot].1 as f64;
                    seen[slot].1 += 1;
                    if ((r + 1.0) * xi).floor() > (r * xi).floor() {
                        lattice.centres.push(c);
                        lattice.rotations.push(s.rotation.at(&c));
                    }
                }
            }
        }
        if lattice.centres.is_empty() {
            warnings.push(format!("species {j}: no lattice cell of pitch ε = {eps} fits in the container"));
        }
        if !s.shape.origin_is_interior(1e-9) {
            warnings.push(format!("species {j}: origin is not interior to shape `{}` (H5)", s.shape.name()));
        }
        out.push(lattice);
    }

    // disjointness, containment and the separation certificate
    let all: Vec<(usize, Vec3)> = out.iter().enumerate().flat_map(|(j, l)| l.centres.iter().map(move |c| (j, *c))).collect();
    let radius: Vec<f64> = species.iter().map(|s| scale * extent(&s.shape)).collect();
    let mut separation = f64::INFINITY;
    for (a, (ja, ca)) in all.iter().enumerate() {
        let dist = container.distance_to_boundary(ca);
        if dist <= radius[*ja] {
            return Err(Error::Assumption {
                label: "H2",
                detail: format!("inclusion at {ca:?} (species {ja}) is not inside the container"),
            });
        }
        let mut nearest = f64::INFINITY;
        for (b, (jb, cb)) in all.iter().enumerate() {
            if a == b {
                continue;
            }
            let d = (ca - cb).norm();
            nearest = nearest.min(d);
            if b > a && d <= radius[*ja] + radius[*jb] {
                return Err(Error::Assumption {
                    label: "H2",
                    detail: format!("inclusions at {ca:?} and {cb:?} may overlap (bounding balls intersect)"),
                });
            }
        }
        let nearest = if nearest.is_finite() { nearest } else { 0.0 };
        separation = separation.min((dist + 0.5 * nearest) / eps);
    }
    Ok(InclusionLattice { eps, alpha: config.alpha, scale, species: out, separation, warnings })
}

/// Radius about the origin of a ball containing the body: the largest
/// distance of a surface node, padded by a margin that covers the gaps
/// between nodes of a convex body.
fn extent(shape: &crate::shapes::Shape) -> f64 {
    let far = shape.rule(24).nodes.iter().map(|n| n.position.norm()).fold(0.0, f64::max);
    (far + 0.05 * shape.placement().scale).min(shape.bounding_radius())
}

/// Grid with a per-node occupancy flag (node inside some inclusion).
#[derive(Clone, Debug)]
pub struct MaskedGrid {
    pub grid: GridSpec,
    pub occupied: Vec<bool>,
}

impl MaskedGrid {
    pub fn new(grid: &GridSpec, lattice: &InclusionLattice, species: &[Species]) -> Self {
        let mut occupied = vec![false; grid.len()];
        let h = grid.spacing();
        for (j, c, r) in lattice.inclusions() {
            let shape = &species[j].shape;
            let rad = lattice.scale * shape.bounding_radius();
            let lo: [usize; 3] = std::array::from_fn(|k| (((c[k] - rad - grid.lo[k]) / h[k]).floor().max(0.0)) as usize);
            let hi: [usize; 3] =
                std::array::from_fn(|k| ((((c[k] + rad - grid.lo[k]) / h[k]).ceil()) as usize).min(grid.n[k] - 1));
            for kz in lo[2]..=hi[2] {
                for ky in lo[1]..=hi[1] {
                    for kx in lo[0]..=hi[0] {
                        let idx = grid.index(kx, ky, kz);
                        let y = r.transpose() * (grid.position(idx) - c) / lattice.scale;
                        if shape.contains(&y) {
                            occupied[idx] = true;
                        }
                    }
                }
            }
        }
        MaskedGrid { grid: *grid, occupied }
    }

    pub fn unoccupied(&self) -> Vec<bool> {
        self.occupied.iter().map(|o| !o).collect()
    }

    /// Trapezoidal volume fraction of occupied nodes.
    pub fn occupied_fraction(&self) -> f64 {
        let occ: f64 = (0..self.grid.len()).filter(|&i| self.occupied[i]).map(|i| self.grid.node_weight(i)).sum();
        occ / self.grid.volume()
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|o| **o).count()
    }
}

/// Quadrature points on all inclusion boundaries, with the weights of the
/// scaled surface functional (`ε^{3−2α}` times the area element).
#[derive(Clone, Debug)]
pub struct SurfaceSampling {
    points: Vec<SurfacePoint>,
}

#[derive(Clone, Copy, Debug)]
struct SurfacePoint {
    position: Vec3,
    /// Normal pointing into the inclusion.
    normal: UnitVector,
    weight: f64,
    species: usize,
}

impl SurfaceSampling {
    pub fn new(lattice: &InclusionLattice, species: &[Species], order: usize) -> Self {
        let rules: Vec<_> = species.iter().map(|s| s.shape.rule(order)).collect();
        // ε^{3−2α} · (ε^α)² = ε³
        let w0 = lattice.eps.powi(3);
        let mut points = Vec::new();
        for (j, c, r) in lattice.inclusions() {
            for node in &rules[j].nodes {
                points.push(SurfacePoint {
                    position: c + lattice.scale * (r * node.position),
                    normal: UnitVector::new_unchecked(-(r * node.normal)),
                    weight: w0 * node.weight,
                    species: j,
                });
            }
        }
        SurfaceSampling { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Surface functional of an arbitrary field.
    pub fn value_with(&self, species: &[Species], q: impl Fn(&Vec3) -> QTensor + Sync) -> f64 {
        let parts: Vec<f64> = self
            .points
            .par_chunks(4096)
            .map(|chunk| chunk.iter().map(|p| p.weight * f_surface(&species[p.species].surface, &q(&p.position), &p.normal)).sum())
            .collect();
        neumaier(parts)
    }

    /// Surface functional of a grid field (trilinear interpolation).
    pub fn value(&self, field: &TensorField, species: &[Species]) -> f64 {
        self.value_with(species, |x| field.interpolate(x))
    }

    /// Value and gradient with respect to nodal coefficients (added into `grad`).
    pub fn value_grad(&self, grid: &GridSpec, data: &[f64], species: &[Species], grad: &mut [f64]) -> Result<f64> {
        let interp = |x: &Vec3| {
            let mut q = QTensor::ZERO;
            for (idx, w) in grid.trilinear(x) {
                let s = &data[5 * idx..5 * idx + 5];
                q += w * QTensor([s[0], s[1], s[2], s[3], s[4]]);
            }
            q
        };
        let parts: Vec<Result<(f64, Vec<QTensor>)>> = self
            .points
            .par_chunks(4096)
            .map(|chunk| {
                let mut v = 0.0;
                let mut gs = Vec::with_capacity(chunk.len());
                for p in chunk {
                    let s = &species[p.species].surface;
                    let q = interp(&p.position);
                    v += p.weight * f_surface(s, &q, &p.normal);
                    gs.push(p.weight * f_surface_grad(s, &q, &p.normal)?);
                }
                Ok((v, gs))
            })
            .collect();
        let mut values = Vec::with_capacity(parts.len());
        let mut k = 0;
        for part in parts {
            let (v, gs) = part?;
            values.push(v);
            for g in gs {
                for (idx, w) in grid.trilinear(&self.points[k].position) {
                    for c in 0..5 {
                        grad[5 * idx + c] += w * g.0[c];
                    }
                }
                k += 1;
            }
        }
        Ok(neumaier(values))
    }
}

/// `J_ε[Q] = ε^{3−2α} Σ_j ∫_{∂P_ε^j} f_s^j(Q, ν) dσ` of a grid field.
pub fn j_eps(field: &TensorField, lattice: &InclusionLattice, species: &[Species], order: usize) -> f64 {
    SurfaceSampling::new(lattice, species, order).value(field, species)
}

/// [`j_eps`] of a closed-form field.
pub fn j_eps_fn(q: impl Fn(&Vec3) -> QTensor + Sync, lattice: &InclusionLattice, species: &[Species], order: usize) -> f64 {
    SurfaceSampling::new(lattice, species, order).value_with(species, q)
}

/// `J̃_ε[Q] = Σ_j ε³ Σ_i f_hom^j(Q(x_i), x_i)`: the field frozen at each centre.
pub fn j_tilde_eps_fn(q: impl Fn(&Vec3) -> QTensor, lattice: &InclusionLattice, species: &[Species], order: usize) -> f64 {
    let e3 = lattice.eps.powi(3);
    neumaier(lattice.inclusions().map(|(j, c, _)| e3 * f_hom_j(&species[j], &q(c), c, order)))
}

pub fn j_tilde_eps(field: &TensorField, lattice: &InclusionLattice, species: &[Species], order: usize) -> f64 {
    j_tilde_eps_fn(|x| field.interpolate(x), lattice, species, order)
}

/// `J₀[Q] = ∫_Ω f_hom(Q(x), x) dx` by tensor Gauss-Legendre quadrature with
/// `n` points per axis.
pub fn j0_fn(q: impl Fn(&Vec3) -> QTensor, species: &[Species], container: &Container, n: usize) -> f64 {
    let rules: Vec<_> = (0..3).map(|k| gauss_legendre_on(n, container.lo[k], container.hi[k])).collect();
    let mut terms = Vec::with_capacity(n * n * n);
    for (z, wz) in rules[2].0.iter().zip(&rules[2].1) {
        for (y, wy) in rules[1].0.iter().zip(&rules[1].1) {
            for (x, wx) in rules[0].0.iter().zip(&rules[0].1) {
                let p = Vec3::new(*x, *y, *z);
                terms.push(wx * wy * wz * crate::homogenize::f_hom(species, &q(&p), &p));
            }
        }
    }
    neumaier(terms)
}

/// `J₀` of a grid field with trapezoidal weights.
pub fn j0(field: &TensorField, species: &[Species]) -> f64 {
    let g = field.grid();
    let pot = HomPotential::new(g, species);
    neumaier((0..g.len()).map(|i| {
        let x = g.position(i);
        g.node_weight(i) * pot.value(i, &field.get(i), &x)
    }))
}

/// `∫_Ω (f_hom(Q, x) − inf_P f_hom(P, x)) dx`: the distance of `Q` from the
/// zero set of the normalised potential.
pub fn constraint_residual(field: &TensorField, species: &[Species]) -> Result<f64> {
    let g = field.grid();
    let pot = HomPotential::new(g, species);
    let mut terms = Vec::with_capacity(g.len());
    for i in 0..g.len() {
        let x = g.position(i);
        let inf = pot.infimum(i, &x).ok_or_else(|| Error::Assumption {
            label: "K3",
            detail: format!("homogenised potential is unbounded below at {x:?}"),
        })?;
        terms.push(g.node_weight(i) * (pot.value(i, &field.get(i), &x) - inf));
    }
    Ok(neumaier(terms))
}

/// Discrete harmonic extension into the occupied nodes.
pub fn extend(field: &TensorField, mask: &MaskedGrid) -> Result<TensorField> {
    if field.grid() != &mask.grid {
        return Err(Error::Mismatch("mask and field use different grids".into()));
    }
    let mut out = field.clone();
    MaskedLaplacian::new(&mask.grid, &mask.occupied).fill(out.data_mut_unchecked())?;
    Ok(out)
}

/// Everything needed to evaluate and minimise the functional with inclusions.
#[derive(Clone, Debug)]
pub struct ColloidProblem {
    pub config: ColloidConfig,
    pub lattice: InclusionLattice,
    pub mask: MaskedGrid,
    pub material: Material,
    pub species: Vec<Species>,
    sampling: SurfaceSampling,
    laplacian: MaskedLaplacian,
    counted: Vec<bool>,
}

impl ColloidProblem {
    pub fn new(config: &ColloidConfig, grid: &GridSpec, material: &Material, species: &[Species]) -> Result<Self> {
        if config.gamma > 0.0 {
            if let Some((j, s)) = species.iter().enumerate().find(|(_, s)| !s.surface.is_nonnegative()) {
                return Err(Error::Assumption {
                    label: "K2",
                    detail: format!(
                        "strong anchoring (γ = {}) needs f_s ≥ 0, but species {j} uses `{}`",
                        config.gamma,
                        s.surface.label()
                    ),
                });
            }
        }
        let lattice = build_lattice(config, species, &Container::of(grid))?;
        Ok(ColloidProblem::with_lattice(config, grid, material, species, lattice))
    }

    pub fn with_lattice(
        config: &ColloidConfig,
        grid: &GridSpec,
        material: &Material,
        species: &[Species],
        lattice: InclusionLattice,
    ) -> Self {
        let mask = MaskedGrid::new(grid, &lattice, species);
        let sampling = SurfaceSampling::new(&lattice, species, config.surface_order);
        let laplacian = MaskedLaplacian::new(grid, &mask.occupied);
        let counted = mask.unoccupied();
        ColloidProblem { config: *config, lattice, mask, material: *material, species: species.to_vec(), sampling, laplacian, counted }
    }

    fn volume(&self) -> VolumeEnergy<'_> {
        VolumeEnergy::new(&self.mask.grid, &self.material, None).with_mask(&self.counted)
    }

    /// Unscaled surface functional `J_ε` of a grid field.
    pub fn j_eps(&self, field: &TensorField) -> f64 {
        self.sampling.value(field, &self.species)
    }

    /// Volume terms over the unoccupied nodes plus `ε^{−γ} J_ε`, of the field as given.
    pub fn energy(&self, field: &TensorField) -> Result<EnergyReport> {
        let parts = self.volume().value(field.data())?;
        Ok(EnergyReport::from_parts(parts, self.config.surface_factor() * self.j_eps(field)))
    }

    pub fn extend(&self, field: &TensorField) -> Result<TensorField> {
        let mut out = field.clone();
        self.laplacian.fill(out.data_mut_unchecked())?;
        Ok(out)
    }

    /// Minimises over the unoccupied nodes; occupied nodes always hold the
    /// harmonic extension. Returns the extended minimiser.
    pub fn minimize(&self, init: &TensorField, opts: &MinimizeOptions) -> Result<(TensorField, EnergyReport, MinimizeOutcome)> {
        if init.grid() != &self.mask.grid {
            return Err(Error::Mismatch("initial field and mask use different grids".into()));
        }
        let obj = FepsObjective { problem: self, fixed: init.fixed() };
        let outcome = minimize_objective(&obj, init.data().to_vec(), opts)?;
        let mut out = init.clone();
        *out.data_mut_unchecked() = outcome.x.clone();
        let out = self.extend(&out)?;
        let mut report = self.energy(&out)?;
        report.iterations = outcome.iterations;
        report.grad_norm = outcome.grad_norm;
        Ok((out, report, outcome))
    }
}

struct FepsObjective<'a> {
    problem: &'a ColloidProblem,
    fixed: &'a [bool],
}

impl FepsObjective<'_> {
    fn extended(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = x.to_vec();
        self.problem.laplacian.fill(&mut y)?;
        Ok(y)
    }
}

impl Objective for FepsObjective<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let y = self.extended(x)?;
        let p = self.problem;
        let vol = p.volume().value(&y)?.total();
        let grid = &p.mask.grid;
        let surf = p.sampling.value_with(&p.species, |pt| {
            let mut q = QTensor::ZERO;
            for (idx, w) in grid.trilinear(pt) {
                let s = &y[5 * idx..5 * idx + 5];
                q += w * QTensor([s[0], s[1], s[2], s[3], s[4]]);
            }
            q
        });
        Ok(vol + p.config.surface_factor() * surf)
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let y = self.extended(x)?;
        let p = self.problem;
        let vol = p.volume().value_grad(&y, grad)?.total();
        let factor = p.config.surface_factor();
        let mut sg = vec![0.0; grad.len()];
        let surf = p.sampling.value_grad(&p.mask.grid, &y, &p.species, &mut sg)?;
        for (g, s) in grad.iter_mut().zip(&sg) {
            *g += factor * s;
        }
        p.laplacian.pull_back(grad)?;
        for (i, f) in self.fixed.iter().enumerate() {
            if *f {
                grad[5 * i..5 * i + 5].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok(vol + factor * surf)
    }

    fn grad_scale(&self) -> f64 {
        1.0 / self.problem.mask.grid.cell_volume()
    }
}

fn bump(t: f64) -> f64 {
    if t.abs() < 1.0 {
        (-1.0 / (1.0 - t * t)).exp()
    } else {
        0.0
    }
}

/// Recovery field `Q_σ = g̃ + min(1, dist(x, ∂Ω)/σ) · (ρ_σ ∗ (Q − g̃))`, with
/// `g̃` the harmonic extension of the boundary data, the difference
/// zero-extended outside the box, and `ρ_σ` a separable smooth bump of radius
/// `σ`. Boundary values equal `g` exactly.
pub fn mollify_recovery(field: &TensorField, sigma: f64) -> Result<TensorField> {
    let grid = *field.grid();
    let h = grid.spacing();
    let hmax = h.x.max(h.y).max(h.z);
    if !(sigma < 1.0) {
        return Err(Error::InvalidParameter(format!("mollifier radius σ = {sigma} must be below 1")));
    }
    if !(sigma >= 2.0 * hmax * (1.0 - 1e-12)) {
        return Err(Error::SigmaTooSmall { sigma, h: hmax });
    }
    let g_ext = TensorField::new(grid, field.boundary().clone(), Initialization::Harmonic)?;
    let mut u: Vec<f64> = field.data().iter().zip(g_ext.data()).map(|(a, b)| a - b).collect();
    let n = grid.n;
    let stride = [1, n[0], n[0] * n[1]];
    for d in 0..3 {
        let reach = (sigma / h[d]).ceil() as i64;
        let mut kernel: Vec<(i64, f64)> = (-reach..=reach).map(|m| (m, bump(m as f64 * h[d] / sigma))).filter(|(_, w)| *w > 0.0).collect();
        let total: f64 = kernel.iter().map(|(_, w)| w).sum();
        kernel.iter_mut().for_each(|(_, w)| *w /= total);
        let mut out = vec![0.0; u.len()];
        for idx in 0..grid.len() {
            let c = grid.coords(idx)[d] as i64;
            for &(m, w) in &kernel {
                let cm = c + m;
                if cm < 0 || cm >= n[d] as i64 {
                    continue;
                }
                let src = (idx as i64 + m * stride[d] as i64) as usize;
                for comp in 0..5 {
                    out[5 * idx + comp] += w * u[5 * src + comp];
                }
            }
        }
        u = out;
    }
    let mut result = g_ext.clone();
    let data = result.data_mut_unchecked();
    for idx in 0..grid.len() {
        let cut = (grid.distance_to_boundary(&grid.position(idx)) / sigma).min(1.0);
        if grid.is_boundary(idx) {
            continue;
        }
        for comp in 0..5 {
            data[5 * idx + comp] += cut * u[5 * idx + comp];
        }
    }
    Ok(result)
}

/// A trigonometric test function `c + Σ a_m cos(ω_m · (x − lo) + p_m)`.
#[derive(Clone, Debug)]
struct TestFunction {
    constant: f64,
    terms: Vec<(f64, Vec3, f64)>,
}

impl TestFunction {
    fn value(&self, x: &Vec3, lo: &Vec3) -> f64 {
        let r = x - lo;
        self.constant + self.terms.iter().map(|(a, w, p)| a * (w.dot(&r) + p).cos()).sum::<f64>()
    }

    /// Upper bound of `‖φ‖∞ + ‖∇φ‖∞`.
    fn norm_bound(&self) -> f64 {
        self.constant.abs() + self.terms.iter().map(|(a, w, _)| a.abs() * (1.0 + w.norm())).sum::<f64>()
    }

    /// Exact `∫_{[a,b]} φ`.
    fn integral(&self, a: &Vec3, b: &Vec3, lo: &Vec3) -> f64 {
        let vol: f64 = (0..3).map(|k| (b[k] - a[k]).max(0.0)).product();
        let mut total = self.constant * vol;
        for (amp, w, p) in &self.terms {
            // Re(e^{ip} Π_k ∫ e^{i w_k (x_k − lo_k)} dx_k)
            let (mut re, mut im) = (p.cos(), p.sin());
            for k in 0..3 {
                let (fr, fi) = if w[k] == 0.0 {
                    ((b[k] - a[k]).max(0.0), 0.0)
                } else {
                    let (s, t) = (w[k] * (b[k] - lo[k]), w[k] * (a[k] - lo[k]));
                    // (e^{is} − e^{it}) / (i w)
                    ((s.sin() - t.sin()) / w[k], -(s.cos() - t.cos()) / w[k])
                };
                let nr = re * fr - im * fi;
                im = re * fi + im * fr;
                re = nr;
            }
            total += amp * re;
        }
        total
    }
}

fn density_integral(phi: &TestFunction, density: &DensityField, container: &Container) -> f64 {
    let whole = phi.integral(&container.lo, &container.hi, &container.lo);
    match density {
        DensityField::Constant(v) => v * whole,
        DensityField::Boxes { background, boxes } => {
            let mut total = background * whole;
            for b in boxes {
                let lo = Vec3::from_fn(|k, _| b.lo[k].max(container.lo[k]));
                let hi = Vec3::from_fn(|k, _| b.hi[k].min(container.hi[k]));
                total += (b.value - background) * phi.integral(&lo, &hi, &container.lo);
            }
            total
        }
    }
}

/// Seeded lower bound of the flat distance between `ε³ Σ δ_{x_i}` and `ξ dx`:
/// the largest discrepancy over the constant function and `test_count − 1`
/// random trigonometric polynomials scaled to `‖φ‖∞ + ‖∇φ‖∞ ≤ 1`, maximised
/// over species. Density boxes must not overlap.
pub fn flat_norm_estimate(
    lattice: &InclusionLattice,
    species: &[Species],
    container: &Container,
    test_count: usize,
    seed: u64,
) -> Result<f64> {
    if test_count == 0 {
        return Err(Error::InvalidParameter("flat-norm estimate needs at least one test function".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tests = vec![TestFunction { constant: 1.0, terms: vec![] }];
    let len = container.hi - container.lo;
    while tests.len() < test_count {
        let terms = (0..rng.gen_range(1..=3))
            .map(|_| {
                let k = Vec3::from_fn(|d, _| rng.gen_range(-2i32..=2) as f64 * 2.0 * std::f64::consts::PI / len[d]);
                (rng.gen_range(-1.0..1.0), k, rng.gen_range(0.0..2.0 * std::f64::consts::PI))
            })
            .collect();
        let mut t = TestFunction { constant: rng.gen_range(-1.0..1.0), terms };
        let s = t.norm_bound();
        t.constant /= s;
        t.terms.iter_mut().for_each(|(a, _, _)| *a /= s);
        tests.push(t);
    }
    let e3 = lattice.eps.powi(3);
    let mut best: f64 = 0.0;
    for (j, s) in species.iter().enumerate() {
        for t in &tests {
            let discrete = e3 * neumaier(lattice.species[j].centres.iter().map(|c| t.value(c, &container.lo)));
            let continuum = density_integral(t, &s.density, container);
            best = best.max((discrete - continuum).abs());
        }
    }
    Ok(best)
}

/// Resolution rule of a sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Resolution {
    /// Spacing at most `ε^α / cells_per_inclusion`, capped at `max_nodes` per axis.
    PerInclusion { cells_per_inclusion: f64, max_nodes: usize },
    /// Fixed node count per axis.
    Fixed(usize),
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub eps_list: Vec<f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub resolution: Resolution,
    pub minimize: MinimizeOptions,
    pub surface_order: usize,
    pub flat_tests: usize,
    pub seed: u64,
}

/// One row of a sweep table.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub eps: f64,
    pub gamma: f64,
    pub nodes: usize,
    pub n_eps: usize,
    pub f_eps: f64,
    pub f0: f64,
    pub delta_f: f64,
    pub l2_error: f64,
    pub h1_error: f64,
    pub constraint_residual: f64,
    /// `ε^γ` times the surface part of the functional, i.e. `J_ε[Q_ε]`.
    pub surface_unscaled: f64,
    pub flat_norm: f64,
    pub separation: f64,
    pub occupied_fraction: f64,
    pub iterations: usize,
    pub status: String,
    pub wall_time: f64,
}

impl SweepRow {
    pub fn header(timings: bool) -> String {
        let mut h = String::from(
            "eps,gamma,nodes,N_eps,F_eps,F0,abs_dF,L2_error,H1_error,constraint_residual,surface_unscaled,flat_norm,separation,occupied_fraction,iterations,status",
        );
        if timings {
            h.push_str(",wall_time");
        }
        h
    }

    pub fn csv(&self, timings: bool) -> String {
        let mut s = format!(
            "{:.6e},{:.6e},{},{},{:.12e},{:.12e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{},{}",
            self.eps,
            self.gamma,
            self.nodes,
            self.n_eps,
            self.f_eps,
            self.f0,
            self.delta_f,
            self.l2_error,
            self.h1_error,
            self.constraint_residual,
            self.surface_unscaled,
            self.flat_norm,
            self.separation,
            self.occupied_fraction,
            self.iterations,
            self.status
        );
        if timings {
            s.push_str(&format!(",{:.3}", self.wall_time));
        }
        s
    }
}

pub fn sweep_csv(rows: &[SweepRow], timings: bool) -> String {
    let mut s = SweepRow::header(timings);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv(timings));
        s.push('\n');
    }
    s
}

/// Fields produced by one sweep entry.
pub struct SweepFields<'a> {
    pub reference: &'a TensorField,
    pub extended: &'a TensorField,
}

/// Runs the ε-sweep: per ε, solve `ℱ₀` on the ε-grid, build the lattice,
/// minimise the functional with inclusions from the `ℱ₀` minimiser, extend,
/// and compare. Per-ε failures are recorded in the status column.
pub fn sweep(
    container: &Container,
    boundary: &BoundaryData,
    material: &Material,
    species: &[Species],
    opts: &SweepOptions,
    mut on_entry: impl FnMut(&SweepRow, SweepFields<'_>),
) -> Result<Vec<SweepRow>> {
    if opts.eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter("ε list must be strictly decreasing".into()));
    }
    let mut rows = Vec::with_capacity(opts.eps_list.len());
    for &eps in &opts.eps_list {
        let start = Instant::now();
        let mut config = ColloidConfig::new(opts.alpha, eps, opts.gamma)?;
        config.surface_order = opts.surface_order;
        let grid = match opts.resolution {
            Resolution::Fixed(n) => GridSpec::new(container.lo, container.hi, [n; 3])?,
            Resolution::PerInclusion { cells_per_inclusion, max_nodes } => {
                let g = container.grid_with_spacing(config.scale() / cells_per_inclusion)?;
                if g.n.iter().any(|&m| m > max_nodes) {
                    return Err(Error::InvalidParameter(format!(
                        "ε = {eps} needs {:?} nodes, above the cap of {max_nodes} per axis",
                        g.n
                    )));
                }
                g
            }
        };
        let mut row = SweepRow {
            eps,
            gamma: opts.gamma,
            nodes: grid.len(),
            n_eps: 0,
            f_eps: f64::NAN,
            f0: f64::NAN,
            delta_f: f64::NAN,
            l2_error: f64::NAN,
            h1_error: f64::NAN,
            constraint_residual: f64::NAN,
            surface_unscaled: f64::NAN,
            flat_norm: f64::NAN,
            separation: f64::NAN,
            occupied_fraction: f64::NAN,
            iterations: 0,
            status: String::new(),
            wall_time: 0.0,
        };
        let result = (|| -> Result<(TensorField, TensorField)> {
            let init = TensorField::new(grid, boundary.clone(), Initialization::Harmonic)?;
            let potential = HomPotential::new(&grid, species);
            let (q0, rep0, out0) = minimize(&init, material, &potential, &opts.minimize)?;
            row.f0 = rep0.total;
            let problem = ColloidProblem::new(&config, &grid, material, species)?;
            row.n_eps = problem.lattice.total();
            row.separation = problem.lattice.separation;
            row.occupied_fraction = problem.mask.occupied_fraction();
            let (qe, rep, out) = problem.minimize(&q0, &opts.minimize)?;
            row.f_eps = rep.total;
            row.delta_f = (rep.total - rep0.total).abs();
            row.l2_error = qe.l2_distance(&q0);
            let semi = qe.h1_seminorm_distance(Some(&q0));
            row.h1_error = (row.l2_error * row.l2_error + semi * semi).sqrt();
            row.constraint_residual = if species.is_empty() { 0.0 } else { constraint_residual(&qe, species)? };
            row.surface_unscaled = problem.j_eps(&qe);
            row.flat_norm = if species.is_empty() {
                0.0
            } else {
                flat_norm_estimate(&problem.lattice, species, container, opts.flat_tests.max(1), opts.seed)?
            };
            row.iterations = out.iterations;
            row.status = if out0.status.is_stationary() || out0.status == Status::MaxIterations {
                out.status.to_string()
            } else {
                format!("{}/reference_{}", out.status, out0.status)
            };
            Ok((q0, qe))
        })();
        row.wall_time = start.elapsed().as_secs_f64();
        match result {
            Ok((q0, qe)) => {
                on_entry(&row, SweepFields { reference: &q0, extended: &qe });
            }
            Err(e) => row.status = format!("error:{}", e.kind()),
        }
        rows.push(row);
    }
    Ok(rows)
}

/// `ℱ₀` of a field without the homogenised term (the functional with no
/// inclusions).
pub fn energy_without_inclusions(field: &TensorField, material: &Material) -> Result<EnergyReport> {
    energy_f0(field, material, &HomPotential::empty())
}
