//! Structured grids on a box container, Q-tensor fields with Dirichlet data,
//! masked discrete Laplace solves, and field dumps.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::qtensor::{q_nu, QTensor, UnitVector, Vec3};

/// Basis convention tag written into field dumps.
pub const BASIS_ID: u32 = 1;
const MAGIC: &[u8; 4] = b"NQF1";
const DUMP_VERSION: u32 = 1;

/// Uniform node grid on the box `[lo, hi]` with `n[k]` nodes along axis `k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub lo: Vec3,
    pub hi: Vec3,
    pub n: [usize; 3],
}

impl GridSpec {
    pub fn new(lo: Vec3, hi: Vec3, n: [usize; 3]) -> Result<Self> {
        if n.iter().any(|&m| m < 4) {
            return Err(Error::InvalidParameter(format!("grid needs at least 4 nodes per axis, got {n:?}")));
        }
        if (0..3).any(|k| !(hi[k] > lo[k]) || !lo[k].is_finite() || !hi[k].is_finite()) {
            return Err(Error::InvalidParameter(format!("empty or non-finite box [{lo:?}, {hi:?}]")));
        }
        Ok(GridSpec { lo, hi, n })
    }

    /// `[0,1]³` with `n` nodes per axis.
    pub fn unit_cube(n: usize) -> Result<Self> {
        GridSpec::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), [n; 3])
    }

    pub fn spacing(&self) -> Vec3 {
        Vec3::from_fn(|k, _| (self.hi[k] - self.lo[k]) / (self.n[k] - 1) as f64)
    }

    pub fn cell_volume(&self) -> f64 {
        let h = self.spacing();
        h.x * h.y * h.z
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|k| self.hi[k] - self.lo[k]).product()
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cells(&self) -> usize {
        (self.n[0] - 1) * (self.n[1] - 1) * (self.n[2] - 1)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n[0] * (j + self.n[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.n[0];
        let r = idx / self.n[0];
        [i, r % self.n[1], r / self.n[1]]
    }

    #[inline]
    pub fn position(&self, idx: usize) -> Vec3 {
        let c = self.coords(idx);
        let h = self.spacing();
        Vec3::new(
            self.lo.x + c[0] as f64 * h.x,
            self.lo.y + c[1] as f64 * h.y,
            self.lo.z + c[2] as f64 * h.z,
        )
    }

    #[inline]
    pub fn is_boundary(&self, idx: usize) -> bool {
        let c = self.coords(idx);
        (0..3).any(|k| c[k] == 0 || c[k] == self.n[k] - 1)
    }

    /// Trapezoidal weight: cell volume over 8 per adjacent cell.
    #[inline]
    pub fn node_weight(&self, idx: usize) -> f64 {
        let c = self.coords(idx);
        let mut w = self.cell_volume();
        for k in 0..3 {
            if c[k] == 0 || c[k] == self.n[k] - 1 {
                w *= 0.5;
            }
        }
        w
    }

    /// Distance from a point to the box boundary (0 outside).
    pub fn distance_to_boundary(&self, x: &Vec3) -> f64 {
        (0..3).map(|k| (x[k] - self.lo[k]).min(self.hi[k] - x[k])).fold(f64::INFINITY, f64::min).max(0.0)
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        (0..3).all(|k| x[k] >= self.lo[k] && x[k] <= self.hi[k])
    }

    /// Cell containing `x` and the local coordinates in `[0,1]³`, clamped to the box.
    pub fn locate(&self, x: &Vec3) -> ([usize; 3], [f64; 3]) {
        let h = self.spacing();
        let mut cell = [0; 3];
        let mut t = [0.0; 3];
        for k in 0..3 {
            let u = ((x[k] - self.lo[k]) / h[k]).clamp(0.0, (self.n[k] - 1) as f64);
            let c = (u.floor() as usize).min(self.n[k] - 2);
            cell[k] = c;
            t[k] = u - c as f64;
        }
        (cell, t)
    }

    /// Trilinear interpolation stencil: 8 node indices and weights.
    pub fn trilinear(&self, x: &Vec3) -> [(usize, f64); 8] {
        let (c, t) = self.locate(x);
        let mut out = [(0, 0.0); 8];
        for (m, slot) in out.iter_mut().enumerate() {
            let (di, dj, dk) = (m & 1, (m >> 1) & 1, (m >> 2) & 1);
            let w = (if di == 1 { t[0] } else { 1.0 - t[0] })
                * (if dj == 1 { t[1] } else { 1.0 - t[1] })
                * (if dk == 1 { t[2] } else { 1.0 - t[2] });
            *slot = (self.index(c[0] + di, c[1] + dj, c[2] + dk), w);
        }
        out
    }
}

/// Director field for uniaxial boundary data.
#[derive(Clone, Debug, PartialEq)]
pub enum DirectorField {
    Constant(UnitVector),
    /// `n = (cos θ, sin θ, 0)` with `θ = rate · x[along] + phase`.
    Twist { along: usize, rate: f64, phase: f64 },
}

impl DirectorField {
    pub fn at(&self, x: &Vec3) -> UnitVector {
        match self {
            DirectorField::Constant(n) => *n,
            DirectorField::Twist { along, rate, phase } => {
                let t = rate * x[*along] + phase;
                UnitVector::new_unchecked(Vec3::new(t.cos(), t.sin(), 0.0))
            }
        }
    }
}

/// Dirichlet data `g` on the container boundary.
#[derive(Clone)]
pub enum BoundaryData {
    Constant(QTensor),
    /// `s (n⊗n − Id/3)`.
    Uniaxial { order: f64, director: DirectorField },
    /// Arbitrary bounded Lipschitz map with a declared Lipschitz constant.
    Function { name: String, lipschitz: f64, map: Arc<dyn Fn(&Vec3) -> QTensor + Send + Sync> },
}

impl fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryData::Constant(q) => f.debug_tuple("Constant").field(q).finish(),
            BoundaryData::Uniaxial { order, director } => {
                f.debug_struct("Uniaxial").field("order", order).field("director", director).finish()
            }
            BoundaryData::Function { name, lipschitz, .. } => {
                f.debug_struct("Function").field("name", name).field("lipschitz", lipschitz).finish()
            }
        }
    }
}

impl BoundaryData {
    pub fn function(name: impl Into<String>, lipschitz: f64, map: impl Fn(&Vec3) -> QTensor + Send + Sync + 'static) -> Self {
        BoundaryData::Function { name: name.into(), lipschitz, map: Arc::new(map) }
    }

    pub fn value(&self, x: &Vec3) -> QTensor {
        match self {
            BoundaryData::Constant(q) => *q,
            BoundaryData::Uniaxial { order, director } => *order * q_nu(&director.at(x)),
            BoundaryData::Function { map, .. } => map(x),
        }
    }

    /// Declared Lipschitz constant.
    pub fn lipschitz(&self) -> f64 {
        match self {
            BoundaryData::Constant(_) => 0.0,
            BoundaryData::Uniaxial { order, director } => match director {
                DirectorField::Constant(_) => 0.0,
                // |d(n⊗n)/dθ| = √2
                DirectorField::Twist { rate, .. } => order.abs() * rate.abs() * 2f64.sqrt(),
            },
            BoundaryData::Function { lipschitz, .. } => *lipschitz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::Assumption { label: "K5", detail });
        match self {
            BoundaryData::Constant(q) if !q.is_finite() => bad("boundary tensor is not finite".into()),
            BoundaryData::Uniaxial { order, director } => {
                if !order.is_finite() {
                    return bad("uniaxial order parameter is not finite".into());
                }
                if let DirectorField::Twist { along, rate, phase } = director {
                    if *along >= 3 || !rate.is_finite() || !phase.is_finite() {
                        return bad("twist director needs along < 3 and finite rate/phase".into());
                    }
                }
                Ok(())
            }
            BoundaryData::Function { lipschitz, .. } if !(lipschitz.is_finite() && *lipschitz >= 0.0) => {
                bad(format!("declared Lipschitz constant {lipschitz} must be finite and nonnegative"))
            }
            _ => Ok(()),
        }
    }
}

/// Interior initialisation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Initialization {
    /// Component-wise discrete Laplace fill from the boundary data.
    Harmonic,
    Constant(QTensor),
}

/// Q-tensor field on a grid; boundary nodes hold the Dirichlet data.
#[derive(Clone, Debug)]
pub struct TensorField {
    grid: GridSpec,
    data: Vec<f64>,
    fixed: Vec<bool>,
    boundary: BoundaryData,
}

impl TensorField {
    pub fn new(grid: GridSpec, boundary: BoundaryData, init: Initialization) -> Result<Self> {
        boundary.validate()?;
        let n = grid.len();
        let fixed: Vec<bool> = (0..n).map(|i| grid.is_boundary(i)).collect();
        let mut data = vec![0.0; 5 * n];
        for idx in 0..n {
            let q = if fixed[idx] {
                boundary.value(&grid.position(idx))
            } else {
                match init {
                    Initialization::Constant(q) => q,
                    Initialization::Harmonic => QTensor::ZERO,
                }
            };
            data[5 * idx..5 * idx + 5].copy_from_slice(&q.0);
        }
        let mut field = TensorField { grid, data, fixed, boundary };
        if init == Initialization::Harmonic {
            let free: Vec<bool> = field.fixed.iter().map(|f| !f).collect();
            MaskedLaplacian::new(&field.grid, &free).fill(&mut field.data)?;
        }
        Ok(field)
    }

    /// Field with every node (interior included) set from a closed-form map;
    /// boundary nodes still take `boundary`.
    pub fn from_fn(grid: GridSpec, boundary: BoundaryData, f: impl Fn(&Vec3) -> QTensor) -> Result<Self> {
        let mut field = TensorField::new(grid, boundary, Initialization::Constant(QTensor::ZERO))?;
        for idx in 0..grid.len() {
            if !field.fixed[idx] {
                field.set_raw(idx, &f(&grid.position(idx)));
            }
        }
        Ok(field)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn boundary(&self) -> &BoundaryData {
        &self.boundary
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn fixed(&self) -> &[bool] {
        &self.fixed
    }

    #[inline]
    pub fn get(&self, idx: usize) -> QTensor {
        let s = &self.data[5 * idx..5 * idx + 5];
        QTensor([s[0], s[1], s[2], s[3], s[4]])
    }

    /// Sets an interior node; Dirichlet nodes are rejected.
    pub fn set(&mut self, idx: usize, q: &QTensor) -> Result<()> {
        if self.fixed[idx] {
            return Err(Error::InvalidParameter(format!("node {idx} carries Dirichlet data")));
        }
        self.set_raw(idx, q);
        Ok(())
    }

    fn set_raw(&mut self, idx: usize, q: &QTensor) {
        self.data[5 * idx..5 * idx + 5].copy_from_slice(&q.0);
    }

    /// Replaces the coefficient vector; Dirichlet entries must already match.
    pub fn set_data(&mut self, data: Vec<f64>) -> Result<()> {
        if data.len() != self.data.len() {
            return Err(Error::Mismatch(format!("expected {} coefficients, got {}", self.data.len(), data.len())));
        }
        for idx in 0..self.grid.len() {
            if self.fixed[idx] && data[5 * idx..5 * idx + 5] != self.data[5 * idx..5 * idx + 5] {
                return Err(Error::Mismatch(format!("Dirichlet node {idx} was modified")));
            }
        }
        self.data = data;
        Ok(())
    }

    pub(crate) fn data_mut_unchecked(&mut self) -> &mut Vec<f64> {
        &mut self.data
    }

    /// Largest deviation of a Dirichlet node from `g`.
    pub fn boundary_defect(&self) -> f64 {
        (0..self.grid.len())
            .filter(|&i| self.fixed[i])
            .map(|i| (self.get(i) - self.boundary.value(&self.grid.position(i))).max_abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Max over nodes of the coefficient-wise difference.
    pub fn sup_distance(&self, other: &TensorField) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Max over nodes of `|Q(x) − f(x)|` (Frobenius).
    pub fn sup_distance_to(&self, f: impl Fn(&Vec3) -> QTensor) -> f64 {
        (0..self.grid.len())
            .map(|i| (self.get(i) - f(&self.grid.position(i))).norm())
            .fold(0.0, f64::max)
    }

    /// Trapezoidal `L²` distance.
    pub fn l2_distance(&self, other: &TensorField) -> f64 {
        let mut s = 0.0;
        for idx in 0..self.grid.len() {
            s += self.grid.node_weight(idx) * (self.get(idx) - other.get(idx)).norm_sq();
        }
        s.sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| self.grid.node_weight(i) * self.get(i).norm_sq())
            .sum::<f64>()
            .sqrt()
    }

    /// Discrete `H¹` seminorm of `self − other` (edge differences, each edge
    /// weighted by the volume it represents).
    pub fn h1_seminorm_distance(&self, other: Option<&TensorField>) -> f64 {
        let g = &self.grid;
        let h = g.spacing();
        let v = g.cell_volume();
        let diff = |idx: usize| match other {
            Some(o) => self.get(idx) - o.get(idx),
            None => self.get(idx),
        };
        let mut s = 0.0;
        for idx in 0..g.len() {
            let c = g.coords(idx);
            for d in 0..3 {
                if c[d] + 1 >= g.n[d] {
                    continue;
                }
                let mut cn = c;
                cn[d] += 1;
                let nb = g.index(cn[0], cn[1], cn[2]);
                // edge weight: volume share of the up-to-4 cells around the edge
                let mut w = v;
                for e in 0..3 {
                    if e != d && (c[e] == 0 || c[e] == g.n[e] - 1) {
                        w *= 0.5;
                    }
                }
                s += w * (diff(nb) - diff(idx)).norm_sq() / (h[d] * h[d]);
            }
        }
        s.sqrt()
    }

    /// Trilinear interpolation at `x`.
    pub fn interpolate(&self, x: &Vec3) -> QTensor {
        let mut q = QTensor::ZERO;
        for (idx, w) in self.grid.trilinear(x) {
            q += w * self.get(idx);
        }
        q
    }

    /// Writes the binary dump: magic `NQF1`, `u32` version, `3×u64` node
    /// counts, `3×f64` lower corner, `3×f64` spacing, `u32` basis id, then
    /// five little-endian `f64` coefficients per node, x fastest.
    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        write_binary(&self.grid, &self.data, w)
    }

    /// CSV of one grid plane `coords[axis] == index`.
    pub fn write_csv_slice(&self, axis: usize, index: usize, w: &mut impl Write) -> Result<()> {
        if axis >= 3 || index >= self.grid.n[axis] {
            return Err(Error::OutOfRange { index, range: "slice axis < 3, index < n[axis]" });
        }
        writeln!(w, "x,y,z,q0,q1,q2,q3,q4")?;
        for idx in 0..self.grid.len() {
            if self.grid.coords(idx)[axis] != index {
                continue;
            }
            let p = self.grid.position(idx);
            let q = self.get(idx);
            writeln!(
                w,
                "{:.10e},{:.10e},{:.10e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                p.x, p.y, p.z, q.0[0], q.0[1], q.0[2], q.0[3], q.0[4]
            )?;
        }
        Ok(())
    }
}

pub fn write_binary(grid: &GridSpec, data: &[f64], w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&DUMP_VERSION.to_le_bytes())?;
    for n in grid.n {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    let h = grid.spacing();
    for v in [grid.lo.x, grid.lo.y, grid.lo.z, h.x, h.y, h.z] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&BASIS_ID.to_le_bytes())?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Contents of a binary dump.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldDump {
    pub grid: GridSpec,
    pub basis_id: u32,
    pub data: Vec<f64>,
}

pub fn read_binary(r: &mut impl Read) -> Result<FieldDump> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse("not a field dump (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != DUMP_VERSION {
        return Err(Error::Parse(format!("unsupported dump version {version}")));
    }
    let mut n = [0usize; 3];
    for v in n.iter_mut() {
        r.read_exact(&mut b8)?;
        *v = u64::from_le_bytes(b8) as usize;
    }
    let mut f = [0.0; 6];
    for v in f.iter_mut() {
        r.read_exact(&mut b8)?;
        *v = f64::from_le_bytes(b8);
    }
    r.read_exact(&mut b4)?;
    let basis_id = u32::from_le_bytes(b4);
    let lo = Vec3::new(f[0], f[1], f[2]);
    let hi = Vec3::from_fn(|k, _| lo[k] + f[3 + k] * (n[k].max(1) - 1) as f64);
    let grid = GridSpec::new(lo, hi, n)?;
    let mut data = vec![0.0; 5 * grid.len()];
    for v in data.iter_mut() {
        r.read_exact(&mut b8)?;
        *v = f64::from_le_bytes(b8);
    }
    Ok(FieldDump { grid, basis_id, data })
}

/// 7-point Laplacian restricted to a set of unknown nodes; the remaining
/// nodes act as Dirichlet data. Neighbours outside the box are dropped.
#[derive(Clone, Debug)]
pub struct MaskedLaplacian {
    grid: GridSpec,
    unknowns: Vec<usize>,
    slot: Vec<u32>,
    weights: [f64; 3],
}

const KNOWN: u32 = u32::MAX;

/// Residual tolerance of the Laplace solves (relative to the right-hand side).
pub const LAPLACE_TOL: f64 = 1e-12;

impl MaskedLaplacian {
    pub fn new(grid: &GridSpec, unknown: &[bool]) -> Self {
        let mut slot = vec![KNOWN; grid.len()];
        let mut unknowns = Vec::new();
        for (idx, &u) in unknown.iter().enumerate() {
            if u {
                slot[idx] = unknowns.len() as u32;
                unknowns.push(idx);
            }
        }
        let h = grid.spacing();
        MaskedLaplacian { grid: *grid, unknowns, slot, weights: [1.0 / (h.x * h.x), 1.0 / (h.y * h.y), 1.0 / (h.z * h.z)] }
    }

    pub fn unknowns(&self) -> &[usize] {
        &self.unknowns
    }

    pub fn is_unknown(&self, idx: usize) -> bool {
        self.slot[idx] != KNOWN
    }

    #[inline]
    fn neighbours(&self, idx: usize, mut f: impl FnMut(usize, f64)) {
        let c = self.grid.coords(idx);
        let n = self.grid.n;
        let stride = [1, n[0], n[0] * n[1]];
        for d in 0..3 {
            if c[d] > 0 {
                f(idx - stride[d], self.weights[d]);
            }
            if c[d] + 1 < n[d] {
                f(idx + stride[d], self.weights[d]);
            }
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (s, &idx) in self.unknowns.iter().enumerate() {
            let mut acc = 0.0;
            self.neighbours(idx, |nb, w| {
                acc += w * x[s];
                let t = self.slot[nb];
                if t != KNOWN {
                    acc -= w * x[t as usize];
                }
            });
            out[s] = acc;
        }
    }

    /// Conjugate gradients; returns the iteration count.
    fn cg(&self, b: &[f64], x: &mut [f64]) -> Result<usize> {
        let m = b.len();
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            x.iter_mut().for_each(|v| *v = 0.0);
            return Ok(0);
        }
        let mut r = vec![0.0; m];
        self.apply(x, &mut r);
        for i in 0..m {
            r[i] = b[i] - r[i];
        }
        let mut p = r.clone();
        let mut ap = vec![0.0; m];
        let mut rr: f64 = r.iter().map(|v| v * v).sum();
        let cap = 20 * m + 100;
        for it in 0..cap {
            if rr.sqrt() <= LAPLACE_TOL * bnorm {
                return Ok(it);
            }
            self.apply(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if !(pap > 0.0) {
                return Err(Error::Singular("masked Laplacian (unknown region without Dirichlet contact)"));
            }
            let alpha = rr / pap;
            for i in 0..m {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new: f64 = r.iter().map(|v| v * v).sum();
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..m {
                p[i] = r[i] + beta * p[i];
            }
        }
        Err(Error::Singular("masked Laplacian: conjugate gradients did not converge"))
    }

    /// Overwrites the unknown nodes of a 5-component field with the discrete
    /// harmonic extension of the known nodes.
    pub fn fill(&self, data: &mut [f64]) -> Result<()> {
        let m = self.unknowns.len();
        if m == 0 {
            return Ok(());
        }
        let mut b = vec![0.0; m];
        let mut x = vec![0.0; m];
        for comp in 0..5 {
            for (s, &idx) in self.unknowns.iter().enumerate() {
                let mut acc = 0.0;
                self.neighbours(idx, |nb, w| {
                    if self.slot[nb] == KNOWN {
                        acc += w * data[5 * nb + comp];
                    }
                });
                b[s] = acc;
                x[s] = data[5 * idx + comp];
            }
            self.cg(&b, &mut x)?;
            for (s, &idx) in self.unknowns.iter().enumerate() {
                data[5 * idx + comp] = x[s];
            }
        }
        Ok(())
    }

    /// Pulls a gradient with respect to the unknown nodes back onto the known
    /// nodes through the harmonic extension, then zeroes the unknown entries.
    pub fn pull_back(&self, grad: &mut [f64]) -> Result<()> {
        let m = self.unknowns.len();
        if m == 0 {
            return Ok(());
        }
        let mut b = vec![0.0; m];
        let mut z = vec![0.0; m];
        for comp in 0..5 {
            for (s, &idx) in self.unknowns.iter().enumerate() {
                b[s] = grad[5 * idx + comp];
                z[s] = 0.0;
            }
            self.cg(&b, &mut z)?;
            for (s, &idx) in self.unknowns.iter().enumerate() {
                let zs = z[s];
                self.neighbours(idx, |nb, w| {
                    if self.slot[nb] == KNOWN {
                        grad[5 * nb + comp] += w * zs;
                    }
                });
                grad[5 * idx + comp] = 0.0;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_q, rng};
    use rand::Rng;

    #[test]
    fn grid_validation_and_indexing() {
        assert!(GridSpec::unit_cube(3).is_err());
        assert!(GridSpec::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 1.0), [4; 3]).is_err());
        let g = GridSpec::new(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0), [4, 5, 6]).unwrap();
        for idx in 0..g.len() {
            let c = g.coords(idx);
            assert_eq!(g.index(c[0], c[1], c[2]), idx);
        }
        let total: f64 = (0..g.len()).map(|i| g.node_weight(i)).sum();
        assert!((total - 6.0).abs() < 1e-12);
    }

    #[test]
    fn trilinear_reproduces_linear_functions() {
        let g = GridSpec::unit_cube(6).unwrap();
        let f = |x: &Vec3| QTensor([x.x, 2.0 * x.y - x.z, 1.0, x.x + x.y + x.z, -x.z]);
        let field = TensorField::from_fn(g, BoundaryData::function("lin", 3.0, f), f).unwrap();
        let mut r = rng(60);
        for _ in 0..100 {
            let x = Vec3::new(r.gen(), r.gen(), r.gen());
            assert!((field.interpolate(&x) - f(&x)).max_abs() < 1e-13);
        }
    }

    #[test]
    fn boundary_holds_g_and_harmonic_fill_is_exact_for_linear_data() {
        let g = GridSpec::new(Vec3::zeros(), Vec3::new(1.0, 1.5, 0.8), [7, 9, 6]).unwrap();
        let f = |x: &Vec3| QTensor([x.x - x.y, 0.3 * x.z, 0.0, 1.0 + x.y, 2.0 * x.x]);
        let field = TensorField::new(g, BoundaryData::function("lin", 3.0, f), Initialization::Harmonic).unwrap();
        assert_eq!(field.boundary_defect(), 0.0);
        assert!(field.sup_distance_to(f) < 1e-10);
    }

    #[test]
    fn constant_data_extends_to_constant() {
        let q = QTensor([0.1, -0.2, 0.3, 0.0, 0.05]);
        let g = GridSpec::unit_cube(8).unwrap();
        let field = TensorField::new(g, BoundaryData::Constant(q), Initialization::Harmonic).unwrap();
        assert!(field.sup_distance_to(|_| q) < 1e-12);
    }

    #[test]
    fn set_rejects_dirichlet_nodes() {
        let g = GridSpec::unit_cube(5).unwrap();
        let mut f = TensorField::new(g, BoundaryData::Constant(QTensor::ZERO), Initialization::Harmonic).unwrap();
        assert!(f.set(0, &QTensor([1.0; 5])).is_err());
        let mid = g.index(2, 2, 2);
        f.set(mid, &QTensor([1.0; 5])).unwrap();
        assert_eq!(f.get(mid), QTensor([1.0; 5]));
        let mut d = f.data().to_vec();
        d[0] = 9.0;
        assert!(f.set_data(d).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let g = GridSpec::new(Vec3::new(-1.0, 0.0, 0.5), Vec3::new(1.0, 1.0, 1.5), [5, 4, 6]).unwrap();
        let mut r = rng(61);
        let mut f = TensorField::new(g, BoundaryData::Constant(random_q(&mut r, 1.0)), Initialization::Harmonic).unwrap();
        for idx in 0..g.len() {
            if !g.is_boundary(idx) {
                f.set(idx, &random_q(&mut r, 1.0)).unwrap();
            }
        }
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 24 + 48 + 4 + 40 * g.len());
        let d = read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(d.basis_id, BASIS_ID);
        assert_eq!(d.grid.n, g.n);
        assert_eq!(d.data, f.data());
        assert!((d.grid.hi - g.hi).norm() < 1e-14);
        assert!(read_binary(&mut &b"XXXX"[..]).is_err());
        let mut csv = Vec::new();
        f.write_csv_slice(2, 1, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1 + 5 * 4);
    }

    #[test]
    fn harmonic_fill_obeys_maximum_principle() {
        let g = GridSpec::unit_cube(10).unwrap();
        let mut r = rng(62);
        let mut data: Vec<f64> = (0..5 * g.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
        let unknown: Vec<bool> = (0..g.len())
            .map(|i| {
                let c = g.coords(i);
                (3..7).contains(&c[0]) && (3..7).contains(&c[1]) && (2..8).contains(&c[2])
            })
            .collect();
        let lap = MaskedLaplacian::new(&g, &unknown);
        lap.fill(&mut data).unwrap();
        for &idx in lap.unknowns() {
            for comp in 0..5 {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for j in 0..g.len() {
                    if !unknown[j] {
                        lo = lo.min(data[5 * j + comp]);
                        hi = hi.max(data[5 * j + comp]);
                    }
                }
                assert!(data[5 * idx + comp] >= lo - 1e-12 && data[5 * idx + comp] <= hi + 1e-12);
            }
            // discrete harmonicity
            let mut acc = 0.0;
            let c = g.coords(idx);
            for d in 0..3 {
                for s in [-1i64, 1] {
                    let mut cn = c;
                    cn[d] = (cn[d] as i64 + s) as usize;
                    acc += data[5 * g.index(cn[0], cn[1], cn[2])] - data[5 * idx];
                }
            }
            assert!(acc.abs() < 1e-9);
        }
    }

    #[test]
    fn pull_back_is_the_adjoint_of_fill() {
        let g = GridSpec::unit_cube(8).unwrap();
        let unknown: Vec<bool> = (0..g.len()).map(|i| {
            let c = g.coords(i);
            (2..5).contains(&c[0]) && (3..6).contains(&c[1]) && (2..6).contains(&c[2])
        }).collect();
        let lap = MaskedLaplacian::new(&g, &unknown);
        let mut r = rng(63);
        let x: Vec<f64> = (0..5 * g.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..5 * g.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
        // <y, fill(x)> restricted to unknown rows == <pull_back(y), x> on known rows
        let mut fx = x.clone();
        lap.fill(&mut fx).unwrap();
        let lhs: f64 = lap.unknowns().iter().flat_map(|&i| (0..5).map(move |c| 5 * i + c)).map(|k| y[k] * fx[k]).sum();
        let mut py: Vec<f64> = vec![0.0; y.len()];
        for &i in lap.unknowns() {
            for c in 0..5 {
                py[5 * i + c] = y[5 * i + c];
            }
        }
        lap.pull_back(&mut py).unwrap();
        let rhs: f64 = (0..g.len()).filter(|&i| !unknown[i]).flat_map(|i| (0..5).map(move |c| 5 * i + c)).map(|k| py[k] * x[k]).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn twist_boundary_lipschitz() {
        let b = BoundaryData::Uniaxial { order: 0.5, director: DirectorField::Twist { along: 2, rate: 1.5, phase: 0.0 } };
        let l = b.lipschitz();
        let mut r = rng(64);
        for _ in 0..1000 {
            let x = Vec3::new(r.gen(), r.gen(), r.gen());
            let y = Vec3::new(r.gen(), r.gen(), r.gen());
            assert!((b.value(&x) - b.value(&y)).norm() <= l * (x - y).norm() + 1e-12);
        }
        assert!(BoundaryData::function("bad", -1.0, |_| QTensor::ZERO).validate().is_err());
    }
}
