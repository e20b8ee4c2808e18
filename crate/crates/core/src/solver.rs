//! Discretised homogenised functional on a box and its minimisation.
//!
//! Every grid cell contributes, at each of its 8 corners, the densities
//! evaluated with one-sided differences along the three cell edges that meet
//! at that corner, weighted by a volume share `h_x h_y h_z / 8`. Node terms
//! then carry trapezoidal weights and the elastic term has no checkerboard
//! null space.

use std::fmt;

use rayon::prelude::*;

use crate::energy::{f_bulk, f_bulk_grad, f_elastic, f_elastic_grad, BulkParams, ElasticParams, GradientSlot};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, TensorField};
use crate::homogenize::{LocalPotential, Species};
use crate::qtensor::{QTensor, Vec3};

/// Elastic and bulk coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Material {
    pub elastic: ElasticParams,
    pub bulk: BulkParams,
}

/// Homogenised potential compiled on the nodes of a grid.
#[derive(Clone, Debug)]
pub struct HomPotential {
    species: Vec<Species>,
    compiled: Compiled,
}

#[derive(Clone, Debug)]
enum Compiled {
    Empty,
    Uniform(LocalPotential),
    PerNode(Vec<LocalPotential>),
}

impl HomPotential {
    pub fn new(grid: &GridSpec, species: &[Species]) -> Self {
        let compiled = if species.is_empty() {
            Compiled::Empty
        } else if species.iter().all(|s| s.rotation.is_constant() && s.density.values().len() == 1) {
            Compiled::Uniform(LocalPotential::compile(species, &grid.lo))
        } else {
            Compiled::PerNode((0..grid.len()).map(|i| LocalPotential::compile(species, &grid.position(i))).collect())
        };
        HomPotential { species: species.to_vec(), compiled }
    }

    pub fn empty() -> Self {
        HomPotential { species: Vec::new(), compiled: Compiled::Empty }
    }

    pub fn species(&self) -> &[Species] {
        &self.species
    }

    pub fn is_empty(&self) -> bool {
        matches!(self.compiled, Compiled::Empty)
    }

    #[inline]
    fn local(&self, idx: usize) -> Option<&LocalPotential> {
        match &self.compiled {
            Compiled::Empty => None,
            Compiled::Uniform(p) => Some(p),
            Compiled::PerNode(v) => Some(&v[idx]),
        }
    }

    #[inline]
    pub fn value(&self, idx: usize, q: &QTensor, x: &Vec3) -> f64 {
        self.local(idx).map_or(0.0, |p| p.value(&self.species, q, x))
    }

    #[inline]
    pub fn gradient(&self, idx: usize, q: &QTensor, x: &Vec3) -> Result<QTensor> {
        self.local(idx).map_or(Ok(QTensor::ZERO), |p| p.gradient(&self.species, q, x))
    }

    /// `inf_Q f_hom(Q, x)` at a node.
    pub fn infimum(&self, idx: usize, x: &Vec3) -> Option<f64> {
        self.local(idx).map_or(Some(0.0), |p| p.infimum(&self.species, x))
    }
}

/// Volume densities split by kind.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Breakdown {
    pub elastic: f64,
    pub bulk: f64,
    pub hom: f64,
}

impl Breakdown {
    pub fn total(&self) -> f64 {
        self.elastic + self.bulk + self.hom
    }
}

/// Energy of a field with diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyReport {
    pub elastic: f64,
    pub bulk: f64,
    pub homogenised: f64,
    pub surface: f64,
    pub total: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl EnergyReport {
    pub fn from_parts(parts: Breakdown, surface: f64) -> Self {
        EnergyReport {
            elastic: parts.elastic,
            bulk: parts.bulk,
            homogenised: parts.hom,
            surface,
            total: parts.elastic + parts.bulk + parts.hom + surface,
            iterations: 0,
            grad_norm: f64::NAN,
        }
    }

    pub const CSV_HEADER: &'static str = "elastic,bulk,homogenised,surface,total,iterations,grad_norm";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{},{:.6e}",
            self.elastic, self.bulk, self.homogenised, self.surface, self.total, self.iterations, self.grad_norm
        )
    }
}

impl fmt::Display for EnergyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "elastic      {:.12e}", self.elastic)?;
        writeln!(f, "bulk         {:.12e}", self.bulk)?;
        writeln!(f, "homogenised  {:.12e}", self.homogenised)?;
        writeln!(f, "surface      {:.12e}", self.surface)?;
        writeln!(f, "total        {:.12e}", self.total)?;
        writeln!(f, "iterations   {}", self.iterations)?;
        write!(f, "grad_norm    {:.6e}", self.grad_norm)
    }
}

/// Compensated (Neumaier) sum in iteration order.
pub(crate) fn neumaier<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

const NODE_CHUNK: usize = 2048;

/// Discrete volume energy `∫ f_e(∇Q) + f_b(Q) + f_hom(Q, x)`, optionally
/// restricted to the corner terms at `counted` nodes.
#[derive(Clone, Copy)]
pub struct VolumeEnergy<'a> {
    pub grid: &'a GridSpec,
    pub material: &'a Material,
    pub potential: Option<&'a HomPotential>,
    pub counted: Option<&'a [bool]>,
}

impl<'a> VolumeEnergy<'a> {
    pub fn new(grid: &'a GridSpec, material: &'a Material, potential: Option<&'a HomPotential>) -> Self {
        VolumeEnergy { grid, material, potential, counted: None }
    }

    pub fn with_mask(mut self, counted: &'a [bool]) -> Self {
        self.counted = Some(counted);
        self
    }

    #[inline]
    fn counts(&self, idx: usize) -> bool {
        self.counted.is_none_or(|c| c[idx])
    }

    /// Value only.
    pub fn value(&self, data: &[f64]) -> Result<Breakdown> {
        let g = self.grid;
        let slabs = g.n[2] - 1;
        let elastic = neumaier((0..slabs).into_par_iter().map(|k| self.slab(data, k, None)).collect::<Vec<_>>());
        let nodes = g.len();
        let chunks: Vec<Result<(f64, f64)>> = (0..nodes.div_ceil(NODE_CHUNK))
            .into_par_iter()
            .map(|c| {
                let start = c * NODE_CHUNK;
                self.node_terms(data, start, (start + NODE_CHUNK).min(nodes), None)
            })
            .collect();
        let mut bulk = Vec::with_capacity(chunks.len());
        let mut hom = Vec::with_capacity(chunks.len());
        for c in chunks {
            let (b, h) = c?;
            bulk.push(b);
            hom.push(h);
        }
        Ok(Breakdown { elastic, bulk: neumaier(bulk), hom: neumaier(hom) })
    }

    /// Value and gradient with respect to every coefficient (Dirichlet
    /// entries are not zeroed here).
    pub fn value_grad(&self, data: &[f64], grad: &mut [f64]) -> Result<Breakdown> {
        let g = self.grid;
        let nodes = g.len();
        let node_parts: Vec<Result<(f64, f64)>> = grad
            .par_chunks_mut(5 * NODE_CHUNK)
            .enumerate()
            .map(|(c, out)| {
                let start = c * NODE_CHUNK;
                self.node_terms(data, start, (start + NODE_CHUNK).min(nodes), Some(out))
            })
            .collect();
        let plane = 5 * g.n[0] * g.n[1];
        let slabs = g.n[2] - 1;
        // even slabs write planes {2m, 2m+1}, odd slabs {2m+1, 2m+2}: no overlap within a pass
        let even: Vec<(usize, f64)> = grad
            .par_chunks_mut(2 * plane)
            .enumerate()
            .filter(|(m, _)| 2 * m < slabs)
            .map(|(m, out)| (2 * m, self.slab(data, 2 * m, Some(out))))
            .collect();
        let odd: Vec<(usize, f64)> = grad[plane..]
            .par_chunks_mut(2 * plane)
            .enumerate()
            .filter(|(m, _)| 2 * m + 1 < slabs)
            .map(|(m, out)| (2 * m + 1, self.slab(data, 2 * m + 1, Some(out))))
            .collect();
        let mut per_slab = vec![0.0; slabs];
        for (k, e) in even.into_iter().chain(odd) {
            per_slab[k] = e;
        }
        let mut bulk = Vec::new();
        let mut hom = Vec::new();
        for c in node_parts {
            let (b, h) = c?;
            bulk.push(b);
            hom.push(h);
        }
        Ok(Breakdown { elastic: neumaier(per_slab), bulk: neumaier(bulk), hom: neumaier(hom) })
    }

    fn node_terms(&self, data: &[f64], start: usize, end: usize, mut out: Option<&mut [f64]>) -> Result<(f64, f64)> {
        let mut bulk = 0.0;
        let mut hom = 0.0;
        let bp = &self.material.bulk;
        for idx in start..end {
            let local = 5 * (idx - start);
            if let Some(o) = out.as_deref_mut() {
                o[local..local + 5].iter_mut().for_each(|v| *v = 0.0);
            }
            if !self.counts(idx) {
                continue;
            }
            let w = self.grid.node_weight(idx);
            let s = &data[5 * idx..5 * idx + 5];
            let q = QTensor([s[0], s[1], s[2], s[3], s[4]]);
            bulk += w * f_bulk(&q, bp);
            let mut gq = f_bulk_grad(&q, bp);
            if let Some(p) = self.potential.filter(|p| !p.is_empty()) {
                let x = self.grid.position(idx);
                hom += w * p.value(idx, &q, &x);
                if out.is_some() {
                    gq += p.gradient(idx, &q, &x)?;
                }
            }
            if let Some(o) = out.as_deref_mut() {
                for c in 0..5 {
                    o[local + c] = w * gq.0[c];
                }
            }
        }
        Ok((bulk, hom))
    }

    /// Elastic energy of the cells in layer `k`; when `out` is given, adds
    /// the gradient into it (`out` starts at node plane `k`).
    fn slab(&self, data: &[f64], k: usize, mut out: Option<&mut [f64]>) -> f64 {
        let g = self.grid;
        let [nx, ny, _] = g.n;
        let h = g.spacing();
        let inv_h = [1.0 / h.x, 1.0 / h.y, 1.0 / h.z];
        let corner_w = g.cell_volume() / 8.0;
        let base = g.index(0, 0, k);
        let el = &self.material.elastic;
        let fast = el.is_one_constant();
        let stride = [1, nx, nx * ny];
        let mut energy = 0.0;
        let mut q = [QTensor::ZERO; 8];
        let mut cnt = [0.0; 8];
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let origin = g.index(i, j, k);
                let node = |m: usize| origin + (m & 1) * stride[0] + ((m >> 1) & 1) * stride[1] + ((m >> 2) & 1) * stride[2];
                for m in 0..8 {
                    let idx = node(m);
                    let s = &data[5 * idx..5 * idx + 5];
                    q[m] = QTensor([s[0], s[1], s[2], s[3], s[4]]);
                    cnt[m] = if self.counts(idx) { 1.0 } else { 0.0 };
                }
                if fast {
                    // each edge is shared by the corner terms of its two endpoints
                    for d in 0..3 {
                        let bit = 1 << d;
                        for lo in (0..8).filter(|m| m & bit == 0) {
                            let hi = lo | bit;
                            let wt = corner_w * (cnt[lo] + cnt[hi]);
                            if wt == 0.0 {
                                continue;
                            }
                            let diff = q[hi] - q[lo];
                            let s2 = inv_h[d] * inv_h[d];
                            energy += wt * el.l1 * s2 * diff.norm_sq();
                            if let Some(o) = out.as_deref_mut() {
                                let gd = (2.0 * wt * el.l1 * s2) * diff;
                                add(o, node(hi) - base, &gd);
                                add(o, node(lo) - base, &-gd);
                            }
                        }
                    }
                } else {
                    for m in 0..8 {
                        if cnt[m] == 0.0 {
                            continue;
                        }
                        let mut dq = GradientSlot::ZERO;
                        for d in 0..3 {
                            let bit = 1 << d;
                            let (lo, hi) = (m & !bit, m | bit);
                            dq.0[d] = inv_h[d] * (q[hi] - q[lo]);
                        }
                        energy += corner_w * f_elastic(&dq, el);
                        if let Some(o) = out.as_deref_mut() {
                            let gs = f_elastic_grad(&dq, el);
                            for d in 0..3 {
                                let bit = 1 << d;
                                let gd = (corner_w * inv_h[d]) * gs.0[d];
                                add(o, node(m | bit) - base, &gd);
                                add(o, node(m & !bit) - base, &-gd);
                            }
                        }
                    }
                }
            }
        }
        energy
    }
}

#[inline]
fn add(out: &mut [f64], local_node: usize, v: &QTensor) {
    let s = &mut out[5 * local_node..5 * local_node + 5];
    for c in 0..5 {
        s[c] += v.0[c];
    }
}

/// `ℱ₀` of a field.
pub fn energy_f0(field: &TensorField, material: &Material, potential: &HomPotential) -> Result<EnergyReport> {
    let parts = VolumeEnergy::new(field.grid(), material, Some(potential)).value(field.data())?;
    Ok(EnergyReport::from_parts(parts, 0.0))
}

/// Gradient of the discrete `ℱ₀` with respect to the nodal coefficients;
/// zero at Dirichlet nodes.
pub fn energy_grad_f0(field: &TensorField, material: &Material, potential: &HomPotential) -> Result<Vec<QTensor>> {
    let mut g = vec![0.0; field.data().len()];
    VolumeEnergy::new(field.grid(), material, Some(potential)).value_grad(field.data(), &mut g)?;
    Ok((0..field.grid().len())
        .map(|i| if field.fixed()[i] { QTensor::ZERO } else { QTensor([g[5 * i], g[5 * i + 1], g[5 * i + 2], g[5 * i + 3], g[5 * i + 4]]) })
        .collect())
}

/// Smooth objective over a flat coefficient vector.
pub trait Objective: Sync {
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64>;
    /// Factor applied to `‖grad‖∞` before comparing with the tolerance.
    fn grad_scale(&self) -> f64 {
        1.0
    }
}

/// `ℱ₀` with Dirichlet nodes frozen.
pub struct F0Objective<'a> {
    pub energy: VolumeEnergy<'a>,
    pub fixed: &'a [bool],
}

impl Objective for F0Objective<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.energy.value(x)?.total())
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let e = self.energy.value_grad(x, grad)?.total();
        for (i, f) in self.fixed.iter().enumerate() {
            if *f {
                grad[5 * i..5 * i + 5].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok(e)
    }

    fn grad_scale(&self) -> f64 {
        1.0 / self.energy.grid.cell_volume()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    GradientDescent,
    Lbfgs { memory: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinimizeOptions {
    pub method: Method,
    pub max_iterations: usize,
    /// Tolerance on `‖grad‖∞` divided by the cell volume.
    pub grad_tol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            method: Method::Lbfgs { memory: 8 },
            max_iterations: 100_000,
            grad_tol: 1e-8,
            armijo: 1e-4,
            max_backtracks: 60,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIterations,
    /// No step decreased the energy; the state is returned as is.
    LineSearchFailed,
    /// No step decreased the energy and the best decrease of a quadratic model
    /// along the search direction is below the floating-point resolution of
    /// the energy.
    RoundoffLimited,
}

impl Status {
    /// Converged, or stopped at the resolution limit of the energy.
    pub fn is_stationary(&self) -> bool {
        matches!(self, Status::Converged | Status::RoundoffLimited)
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Converged => "converged",
            Status::MaxIterations => "max_iterations",
            Status::LineSearchFailed => "line_search_failed",
            Status::RoundoffLimited => "roundoff_limited",
        })
    }
}

#[derive(Clone, Debug)]
pub struct MinimizeOutcome {
    pub x: Vec<f64>,
    pub energy: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub status: Status,
    /// Energy after every accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

impl MinimizeOutcome {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,energy\n");
        for (i, e) in self.trace.iter().enumerate() {
            s.push_str(&format!("{i},{e:.17e}\n"));
        }
        s
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    neumaier(a.iter().zip(b).map(|(x, y)| x * y))
}

/// Line-search descent (L-BFGS or steepest descent) with Armijo backtracking;
/// a step is accepted only if it strictly lowers the objective.
pub fn minimize_objective(obj: &dyn Objective, x0: Vec<f64>, opts: &MinimizeOptions) -> Result<MinimizeOutcome> {
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = obj.value_grad(&x, &mut g)?;
    if !f.is_finite() {
        return Err(Error::InvalidParameter("initial energy is not finite".into()));
    }
    let scale = obj.grad_scale();
    let mut trace = vec![f];
    let memory = match opts.method {
        Method::Lbfgs { memory } => memory,
        Method::GradientDescent => 0,
    };
    let mut pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
    let mut gd_step = f64::NAN;
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut status = Status::MaxIterations;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        let gnorm = inf_norm(&g);
        if gnorm * scale < opts.grad_tol {
            status = Status::Converged;
            break;
        }
        let mut accepted = false;
        let mut resolvable = false;
        // second attempt falls back to steepest descent with a fresh memory
        for attempt in 0..2 {
            let quasi_newton = memory > 0 && !pairs.is_empty() && attempt == 0;
            let mut alpha;
            if quasi_newton {
                two_loop(&pairs, &g, &mut d);
                alpha = 1.0;
            } else {
                d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
                alpha = if gd_step.is_finite() { gd_step * 2.0 } else { 0.1 / gnorm };
            }
            let slope = dotv(&g, &d);
            if !(slope < 0.0) {
                pairs.clear();
                continue;
            }
            for trial in 0..opts.max_backtracks {
                for i in 0..n {
                    xt[i] = x[i] + alpha * d[i];
                }
                let ft = obj.value_grad(&xt, &mut gt)?;
                // best decrease a quadratic model along d could deliver,
                // with the curvature measured on the first (largest) trial step
                let curvature = (dotv(&gt, &d) - slope) / alpha;
                let achievable = if curvature > 0.0 { slope * slope / (2.0 * curvature) } else { f64::INFINITY };
                if trial == 0 && achievable > 64.0 * f64::EPSILON * f.abs().max(f64::MIN_POSITIVE) {
                    resolvable = true;
                }
                if ft.is_finite() && ft < f && ft <= f + opts.armijo * alpha * slope {
                    if memory > 0 {
                        let s: Vec<f64> = (0..n).map(|i| xt[i] - x[i]).collect();
                        let y: Vec<f64> = (0..n).map(|i| gt[i] - g[i]).collect();
                        let sy = dotv(&s, &y);
                        if sy > 1e-300 {
                            if pairs.len() == memory {
                                pairs.pop_front();
                            }
                            pairs.push_back((s, y, 1.0 / sy));
                        }
                    }
                    if !quasi_newton {
                        gd_step = alpha;
                    }
                    std::mem::swap(&mut x, &mut xt);
                    std::mem::swap(&mut g, &mut gt);
                    f = ft;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if accepted {
                break;
            }
            pairs.clear();
            gd_step = f64::NAN;
        }
        if !accepted {
            status = if resolvable { Status::LineSearchFailed } else { Status::RoundoffLimited };
            break;
        }
        iterations += 1;
        trace.push(f);
    }
    let grad_norm = inf_norm(&g) * scale;
    if status == Status::MaxIterations && grad_norm < opts.grad_tol {
        status = Status::Converged;
    }
    Ok(MinimizeOutcome { x, energy: f, iterations, grad_norm, status, trace })
}

fn two_loop(pairs: &std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>, g: &[f64], d: &mut [f64]) {
    let n = g.len();
    d.iter_mut().zip(g).for_each(|(di, gi)| *di = -gi);
    let mut alphas = vec![0.0; pairs.len()];
    for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
        let a = rho * dotv(s, d);
        alphas[k] = a;
        for i in 0..n {
            d[i] -= a * y[i];
        }
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dotv(s, y) / dotv(y, y);
        d.iter_mut().for_each(|v| *v *= gamma);
    }
    for (k, (s, y, rho)) in pairs.iter().enumerate() {
        let b = rho * dotv(y, d);
        for i in 0..n {
            d[i] += (alphas[k] - b) * s[i];
        }
    }
}

/// Minimises `ℱ₀` from the given field; Dirichlet nodes stay at `g`.
pub fn minimize(
    field: &TensorField,
    material: &Material,
    potential: &HomPotential,
    opts: &MinimizeOptions,
) -> Result<(TensorField, EnergyReport, MinimizeOutcome)> {
    let obj = F0Objective { energy: VolumeEnergy::new(field.grid(), material, Some(potential)), fixed: field.fixed() };
    let outcome = minimize_objective(&obj, field.data().to_vec(), opts)?;
    let mut out = field.clone();
    *out.data_mut_unchecked() = outcome.x.clone();
    let mut report = energy_f0(&out, material, potential)?;
    report.iterations = outcome.iterations;
    report.grad_norm = outcome.grad_norm;
    Ok((out, report, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::SurfaceDensity;
    use crate::grid::{BoundaryData, Initialization};
    use crate::homogenize::{design_linear_term, DensityField, RotationField};
    use crate::qtensor::{deviatoric, SymMatrix};
    use crate::shapes;
    use crate::testutil::{random_q, random_sym, rng};
    use rand::Rng;

    fn material(l: (f64, f64, f64), a: f64, b: f64, c: f64) -> Material {
        Material { elastic: ElasticParams::new(l.0, l.1, l.2).unwrap(), bulk: BulkParams::new(a, b, c).unwrap() }
    }

    fn random_field(grid: GridSpec, r: &mut impl Rng, scale: f64) -> TensorField {
        let mut f = TensorField::new(grid, BoundaryData::Constant(random_q(r, scale)), Initialization::Harmonic).unwrap();
        for idx in 0..grid.len() {
            if !grid.is_boundary(idx) {
                f.set(idx, &random_q(r, scale)).unwrap();
            }
        }
        f
    }

    #[test]
    fn constant_field_energy_is_bulk_times_volume() {
        let grid = GridSpec::new(Vec3::zeros(), Vec3::new(1.0, 2.0, 0.5), [6, 7, 5]).unwrap();
        let q0 = QTensor([0.1, 0.2, -0.1, 0.05, 0.0]);
        let m = material((1.0, 0.5, 0.2), -0.3, 1.0, 2.0);
        let f = TensorField::new(grid, BoundaryData::Constant(q0), Initialization::Harmonic).unwrap();
        let e = energy_f0(&f, &m, &HomPotential::empty()).unwrap();
        assert!(e.elastic.abs() < 1e-20);
        assert!((e.total - grid.volume() * f_bulk(&q0, &m.bulk)).abs() < 1e-13);
    }

    #[test]
    fn linear_field_elastic_energy_is_exact() {
        let grid = GridSpec::new(Vec3::zeros(), Vec3::new(1.0, 1.5, 2.0), [5, 8, 6]).unwrap();
        let e = QTensor([0.3, -0.4, 0.2, 0.1, 0.7]);
        let lin = move |x: &Vec3| x.x * e;
        let f = TensorField::from_fn(grid, BoundaryData::function("lin", e.norm(), lin), lin).unwrap();
        let m = material((1.7, 0.0, 0.0), 1.0, 0.0, 1.0);
        let r = energy_f0(&f, &m, &HomPotential::empty()).unwrap();
        assert!((r.elastic - 1.7 * e.norm_sq() * grid.volume()).abs() < 1e-10);
    }

    /// Independent re-summation: loop over cells and corners with full
    /// matrices and explicit index sums.
    fn naive_energy(f: &TensorField, m: &Material, species: &[Species]) -> f64 {
        let g = f.grid();
        let h = g.spacing();
        let w = g.cell_volume() / 8.0;
        let mut total = 0.0;
        for k in 0..g.n[2] - 1 {
            for j in 0..g.n[1] - 1 {
                for i in 0..g.n[0] - 1 {
                    for corner in 0..8usize {
                        let c = [i + (corner & 1), j + ((corner >> 1) & 1), k + ((corner >> 2) & 1)];
                        let at = |c: [usize; 3]| f.get(g.index(c[0], c[1], c[2])).to_matrix();
                        let mut dm = [crate::qtensor::Mat3::zeros(); 3];
                        for d in 0..3 {
                            let mut lo = c;
                            let mut hi = c;
                            lo[d] = [i, j, k][d];
                            hi[d] = [i, j, k][d] + 1;
                            dm[d] = (at(hi) - at(lo)) / h[d];
                        }
                        let mut el = 0.0;
                        for a in 0..3 {
                            for b in 0..3 {
                                for cc in 0..3 {
                                    el += m.elastic.l1 * dm[cc][(a, b)] * dm[cc][(a, b)];
                                    el += m.elastic.l2 * dm[b][(a, b)] * dm[cc][(a, cc)];
                                    el += m.elastic.l3 * dm[b][(a, cc)] * dm[cc][(a, b)];
                                }
                            }
                        }
                        let q = at(c);
                        let t2 = (q * q).trace();
                        let bulk = m.bulk.a * t2 - m.bulk.b * (q * q * q).trace() + m.bulk.c * t2 * t2 + m.bulk.kappa;
                        let x = g.position(g.index(c[0], c[1], c[2]));
                        let hom = crate::homogenize::f_hom_quadrature(species, &QTensor::project(&q), &x, 32);
                        total += w * (el + bulk + hom);
                    }
                }
            }
        }
        total
    }

    #[test]
    fn matches_naive_resummation() {
        let mut r = rng(70);
        let grid = GridSpec::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.8, 1.2), [5, 6, 4]).unwrap();
        let species = vec![
            Species::uniform(shapes::wedge(1.0, 0, 2).unwrap(), SurfaceDensity::RapiniPapoular { strength: 0.7 })
                .with_rotation(RotationField::Twist { axis: Vec3::new(0.0, 1.0, 0.0), along: 2, rate: 0.8, phase: 0.0 }),
            Species::uniform(shapes::ball(), SurfaceDensity::SphericalQuadratic { coefficient: 1.1 }).with_density(
                DensityField::Boxes {
                    background: 0.5,
                    boxes: vec![crate::homogenize::DensityBox { lo: Vec3::zeros(), hi: Vec3::new(0.5, 1.0, 1.0), value: 2.0 }],
                },
            ),
        ];
        for l in [(1.0, 0.0, 0.0), (1.0, 0.6, -0.3)] {
            let m = material(l, -0.2, 0.8, 1.5);
            let f = random_field(grid, &mut r, 0.5);
            let pot = HomPotential::new(&grid, &species);
            let fast = energy_f0(&f, &m, &pot).unwrap().total;
            let slow = naive_energy(&f, &m, &species);
            assert!((fast - slow).abs() < 1e-10 * slow.abs().max(1.0), "{fast} vs {slow}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng(71);
        let grid = GridSpec::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), [6, 5, 7]).unwrap();
        let design = design_linear_term(&random_sym(&mut r, 1.0), 0.8, 0.3, 1.0).unwrap();
        let species = design.species();
        for l in [(1.0, 0.0, 0.0), (0.8, 0.5, 0.4)] {
            let m = material(l, -0.5, 1.2, 2.0);
            let pot = HomPotential::new(&grid, &species);
            let f = random_field(grid, &mut r, 0.4);
            let grad = energy_grad_f0(&f, &m, &pot).unwrap();
            for _ in 0..10 {
                let mut dir: Vec<QTensor> = (0..grid.len()).map(|_| random_q(&mut r, 1.0)).collect();
                for (i, d) in dir.iter_mut().enumerate() {
                    if f.fixed()[i] {
                        *d = QTensor::ZERO;
                    }
                }
                let shifted = |t: f64| {
                    let mut g = f.clone();
                    for i in 0..grid.len() {
                        if !f.fixed()[i] {
                            g.set(i, &(f.get(i) + t * dir[i])).unwrap();
                        }
                    }
                    energy_f0(&g, &m, &pot).unwrap().total
                };
                let h = 1e-5;
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                let an: f64 = grad.iter().zip(&dir).map(|(g, d)| g.dot(d)).sum();
                assert!((fd - an).abs() < 1e-5 * an.abs().max(1e-3), "fd {fd} an {an}");
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_constant_minimiser_and_dirichlet() {
        let grid = GridSpec::unit_cube(8).unwrap();
        let m = material((1.0, 0.3, 0.1), 1.0, 0.0, 1.0);
        let f = TensorField::new(grid, BoundaryData::Constant(QTensor::ZERO), Initialization::Harmonic).unwrap();
        let g = energy_grad_f0(&f, &m, &HomPotential::empty()).unwrap();
        assert!(g.iter().map(|q| q.max_abs()).fold(0.0, f64::max) < 1e-12);
        let mut r = rng(72);
        let f = random_field(grid, &mut r, 1.0);
        let g = energy_grad_f0(&f, &m, &HomPotential::empty()).unwrap();
        for i in 0..grid.len() {
            if f.fixed()[i] {
                assert_eq!(g[i], QTensor::ZERO);
            }
        }
    }

    fn effective_setup(n: usize, c: f64) -> (Material, HomPotential, QTensor, GridSpec, f64, SymMatrix) {
        let p = SymMatrix([0.4, -0.2, 0.1, 0.3, -0.1, 0.2]);
        let (w, a, a_prime) = (0.5, 1.0, 2.0);
        let design = design_linear_term(&p, w, a, a_prime).unwrap();
        let grid = GridSpec::unit_cube(n).unwrap();
        let m = material((1.0, 0.0, 0.0), a, 0.0, c);
        let pot = HomPotential::new(&grid, &design.species());
        let qstar = (-w / (2.0 * a_prime)) * deviatoric(&p);
        (m, pot, qstar, grid, a_prime, p)
    }

    #[test]
    fn effective_field_gradient_is_small_at_closed_form() {
        let (m, pot, qstar, grid, _, _) = effective_setup(10, 1e-6);
        let f = TensorField::new(grid, BoundaryData::Constant(qstar), Initialization::Harmonic).unwrap();
        let g = energy_grad_f0(&f, &m, &pot).unwrap();
        let worst = g.iter().map(|q| q.max_abs()).fold(0.0, f64::max) / grid.cell_volume();
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn effective_field_minimiser() {
        let (m, pot, qstar, grid, _, _) = effective_setup(16, 1e-6);
        let f0 = TensorField::new(grid, BoundaryData::Constant(qstar), Initialization::Constant(QTensor::ZERO)).unwrap();
        let opts = MinimizeOptions { grad_tol: 1e-7, ..Default::default() };
        let (f, report, outcome) = minimize(&f0, &m, &pot, &opts).unwrap();
        assert!(outcome.status.is_stationary(), "{} at {:e}", outcome.status, outcome.grad_norm);
        assert!(f.sup_distance_to(|_| qstar) < 1e-4);
        assert_eq!(f.boundary_defect(), 0.0);
        assert!(outcome.trace.windows(2).all(|w| w[1] < w[0]));
        assert!((report.total - (report.elastic + report.bulk + report.homogenised)).abs() <= 1e-12 * report.total.abs());
    }

    #[test]
    fn refinement_reduces_error() {
        // 1D boundary layer: Q* + E cosh(k(x−½))/cosh(k/2) solves the Euler-Lagrange system exactly
        let err = |n: usize| {
            let (m, pot, qstar, grid, a_prime, _) = effective_setup(n, 1e-10);
            let e = QTensor([0.2, -0.1, 0.05, 0.1, 0.0]);
            let k = (a_prime / m.elastic.l1).sqrt();
            let exact = move |x: &Vec3| qstar + ((k * (x.x - 0.5)).cosh() / (k / 2.0).cosh()) * e;
            let bd = BoundaryData::function("layer", k * e.norm(), exact);
            let f0 = TensorField::new(grid, bd, Initialization::Harmonic).unwrap();
            let opts = MinimizeOptions { grad_tol: 1e-9, ..Default::default() };
            let (f, _, _) = minimize(&f0, &m, &pot, &opts).unwrap();
            f.sup_distance_to(exact)
        };
        let (e16, e32) = (err(16), err(32));
        assert!(e32 < e16, "{e16} -> {e32}");
        assert!(e32 < 0.5 * e16);
    }

    #[test]
    fn pure_bulk_converges_to_zero_deterministically() {
        let grid = GridSpec::unit_cube(8).unwrap();
        let m = material((1.0, 0.0, 0.0), 1.0, 0.0, 1.0);
        let mut r = rng(73);
        let mut f0 = TensorField::new(grid, BoundaryData::Constant(QTensor::ZERO), Initialization::Harmonic).unwrap();
        for i in 0..grid.len() {
            if !grid.is_boundary(i) {
                f0.set(i, &random_q(&mut r, 0.5)).unwrap();
            }
        }
        for method in [Method::Lbfgs { memory: 8 }, Method::GradientDescent] {
            let opts = MinimizeOptions { method, grad_tol: 1e-9, ..Default::default() };
            let (f, rep, out1) = minimize(&f0, &m, &HomPotential::empty(), &opts).unwrap();
            assert!(out1.status.is_stationary(), "{method:?}");
            assert!(rep.total.abs() < 1e-10);
            assert!(f.sup_distance_to(|_| QTensor::ZERO) < 1e-6);
            let (_, _, out2) = minimize(&f0, &m, &HomPotential::empty(), &opts).unwrap();
            assert_eq!(out1.trace, out2.trace);
            assert!(out1.trace.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn masked_energy_counts_only_selected_corners() {
        let grid = GridSpec::unit_cube(6).unwrap();
        let m = material((1.0, 0.2, 0.1), 0.5, 0.3, 1.0);
        let mut r = rng(74);
        let f = random_field(grid, &mut r, 0.5);
        let all = vec![true; grid.len()];
        let none = vec![false; grid.len()];
        let e = VolumeEnergy::new(&grid, &m, None);
        assert_eq!(e.value(f.data()).unwrap(), e.with_mask(&all).value(f.data()).unwrap());
        assert_eq!(e.with_mask(&none).value(f.data()).unwrap().total(), 0.0);
        let half: Vec<bool> = (0..grid.len()).map(|i| grid.coords(i)[0] < 3).collect();
        let other: Vec<bool> = half.iter().map(|b| !b).collect();
        let sum = e.with_mask(&half).value(f.data()).unwrap().total() + e.with_mask(&other).value(f.data()).unwrap().total();
        assert!((sum - e.value(f.data()).unwrap().total()).abs() < 1e-12);
    }

    #[test]
    fn neumaier_is_accurate() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(neumaier(v), 2.0);
    }
}
