//! JSON run configuration and its validation against the modelling
//! assumptions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::colloid::{ColloidConfig, Container, Resolution, SweepOptions, Violation, DEFAULT_SURFACE_ORDER};
use crate::energy::{custom, BulkParams, ElasticParams, SurfaceDensity};
use crate::error::{Error, Result};
use crate::grid::{BoundaryData, DirectorField, GridSpec, Initialization};
use crate::homogenize::{design_linear_term, DensityBox, DensityField, DesignSpec, RotationField, Species};
use crate::qtensor::{Mat3, QTensor, Rotation, SymMatrix, UnitVector, Vec3};
use crate::shapes::{catalogue_shape, transform};
use crate::solver::{Material, Method, MinimizeOptions};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub container: BoxConfig,
    /// Nodes per axis for `minimize`.
    #[serde(default = "default_nodes")]
    pub nodes: [usize; 3],
    #[serde(default)]
    pub elastic: ElasticConfig,
    pub bulk: BulkConfig,
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub initialization: InitConfig,
    #[serde(default)]
    pub species: Vec<SpeciesConfig>,
    /// Adds the species of a linear-term design to `species`.
    #[serde(default)]
    pub design: Option<DesignConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// Turns assumption violations on α and γ into warnings.
    #[serde(default)]
    pub explore: bool,
}

fn default_nodes() -> [usize; 3] {
    [17, 17, 17]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Default for BoxConfig {
    fn default() -> Self {
        BoxConfig { lo: [0.0; 3], hi: [1.0; 3] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElasticConfig {
    pub l1: f64,
    #[serde(default)]
    pub l2: f64,
    #[serde(default)]
    pub l3: f64,
}

impl Default for ElasticConfig {
    fn default() -> Self {
        ElasticConfig { l1: 1.0, l2: 0.0, l3: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BulkConfig {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DirectorConfig {
    Constant { n: [f64; 3] },
    Twist { along: usize, rate: f64, #[serde(default)] phase: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryConfig {
    Constant { q: [f64; 5] },
    Uniaxial { order: f64, director: DirectorConfig },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitConfig {
    #[default]
    Harmonic,
    Constant { q: [f64; 5] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RotationConfig {
    Identity,
    Constant { axis: [f64; 3], angle: f64 },
    Twist { axis: [f64; 3], along: usize, rate: f64, #[serde(default)] phase: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDensityConfig {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityConfig {
    Constant { value: f64 },
    Boxes { background: f64, boxes: Vec<BoxDensityConfig> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceConfig {
    RapiniPapoular { strength: f64 },
    SphericalQuadratic { coefficient: f64 },
    LinearTilt { weight: f64 },
    Quartic { weight: f64 },
    PolarTilt { weight: f64, axis: [f64; 3] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesConfig {
    /// Catalogue name.
    pub shape: String,
    #[serde(default = "one")]
    pub scale: f64,
    /// Recentre so that the origin is interior (needed for wedges).
    #[serde(default)]
    pub centered: bool,
    #[serde(default = "identity_rotation")]
    pub rotation: RotationConfig,
    #[serde(default = "unit_density")]
    pub density: DensityConfig,
    pub surface: SurfaceConfig,
}

fn one() -> f64 {
    1.0
}

fn identity_rotation() -> RotationConfig {
    RotationConfig::Identity
}

fn unit_density() -> DensityConfig {
    DensityConfig::Constant { value: 1.0 }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    /// `xx, yy, zz, xy, xz, yz`.
    pub p: [f64; 6],
    pub w: f64,
    pub a: f64,
    pub a_prime: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub eps: Vec<f64>,
    pub alpha: f64,
    #[serde(default)]
    pub gamma: f64,
    /// Fixed nodes per axis; otherwise spacing `ε^α / cells_per_inclusion`.
    #[serde(default)]
    pub nodes: Option<usize>,
    #[serde(default = "four")]
    pub cells_per_inclusion: f64,
    #[serde(default = "max_nodes")]
    pub max_nodes: usize,
    #[serde(default = "surface_order")]
    pub surface_order: usize,
    #[serde(default = "flat_tests")]
    pub flat_tests: usize,
}

fn four() -> f64 {
    4.0
}

fn max_nodes() -> usize {
    96
}

fn surface_order() -> usize {
    DEFAULT_SURFACE_ORDER
}

fn flat_tests() -> usize {
    16
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodConfig {
    Lbfgs,
    GradientDescent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "lbfgs")]
    pub method: MethodConfig,
    #[serde(default = "memory")]
    pub memory: usize,
    #[serde(default = "max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "grad_tol")]
    pub grad_tol: f64,
}

fn lbfgs() -> MethodConfig {
    MethodConfig::Lbfgs
}

fn memory() -> usize {
    8
}

fn max_iterations() -> usize {
    100_000
}

fn grad_tol() -> f64 {
    1e-8
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { method: lbfgs(), memory: memory(), max_iterations: max_iterations(), grad_tol: grad_tol() }
    }
}

fn vec3(v: [f64; 3]) -> Vec3 {
    Vec3::new(v[0], v[1], v[2])
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text)?;
        if c.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                c.schema_version
            )));
        }
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn container(&self) -> Container {
        Container { lo: vec3(self.container.lo), hi: vec3(self.container.hi) }
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(vec3(self.container.lo), vec3(self.container.hi), self.nodes)
    }

    pub fn material(&self) -> Result<Material> {
        Ok(Material {
            elastic: ElasticParams::new(self.elastic.l1, self.elastic.l2, self.elastic.l3)?,
            bulk: BulkParams::new(self.bulk.a, self.bulk.b, self.bulk.c)?,
        })
    }

    pub fn boundary(&self) -> Result<BoundaryData> {
        let b = match &self.boundary {
            BoundaryConfig::Constant { q } => BoundaryData::Constant(QTensor(*q)),
            BoundaryConfig::Uniaxial { order, director } => BoundaryData::Uniaxial {
                order: *order,
                director: match director {
                    DirectorConfig::Constant { n } => DirectorField::Constant(UnitVector::normalize(vec3(*n))?),
                    DirectorConfig::Twist { along, rate, phase } => {
                        DirectorField::Twist { along: *along, rate: *rate, phase: *phase }
                    }
                },
            },
        };
        b.validate()?;
        Ok(b)
    }

    pub fn initialization(&self) -> Initialization {
        match self.initialization {
            InitConfig::Harmonic => Initialization::Harmonic,
            InitConfig::Constant { q } => Initialization::Constant(QTensor(q)),
        }
    }

    pub fn design_spec(&self) -> Result<Option<DesignSpec>> {
        self.design.map(|d| design_linear_term(&SymMatrix(d.p), d.w, d.a, d.a_prime)).transpose()
    }

    /// Configured species followed by the design species, if any.
    pub fn species(&self) -> Result<Vec<Species>> {
        let mut out = Vec::with_capacity(self.species.len());
        for (j, s) in self.species.iter().enumerate() {
            out.push(s.build().map_err(|e| match e {
                Error::Assumption { label, detail } => Error::Assumption { label, detail: format!("species {j}: {detail}") },
                other => other,
            })?);
        }
        if let Some(d) = self.design_spec()? {
            out.extend(d.species());
        }
        Ok(out)
    }

    pub fn minimize_options(&self) -> MinimizeOptions {
        MinimizeOptions {
            method: match self.solver.method {
                MethodConfig::Lbfgs => Method::Lbfgs { memory: self.solver.memory.max(1) },
                MethodConfig::GradientDescent => Method::GradientDescent,
            },
            max_iterations: self.solver.max_iterations,
            grad_tol: self.solver.grad_tol,
            ..Default::default()
        }
    }

    pub fn sweep_options(&self) -> Result<SweepOptions> {
        let s = self.sweep.as_ref().ok_or_else(|| Error::InvalidParameter("config has no `sweep` section".into()))?;
        Ok(SweepOptions {
            eps_list: s.eps.clone(),
            alpha: s.alpha,
            gamma: s.gamma,
            resolution: match s.nodes {
                Some(n) => Resolution::Fixed(n),
                None => Resolution::PerInclusion { cells_per_inclusion: s.cells_per_inclusion, max_nodes: s.max_nodes },
            },
            minimize: self.minimize_options(),
            surface_order: s.surface_order,
            flat_tests: s.flat_tests,
            seed: self.seed,
        })
    }

    /// Checks every section; returns the violations tolerated by `explore`.
    pub fn validate(&self) -> Result<Vec<Violation>> {
        for k in 0..3 {
            if !(self.container.hi[k] > self.container.lo[k]) {
                return Err(Error::InvalidParameter(format!("container axis {k} is empty")));
            }
        }
        self.grid()?;
        self.material()?;
        self.boundary()?;
        let species = self.species()?;
        if self.solver.grad_tol <= 0.0 || !self.solver.grad_tol.is_finite() {
            return Err(Error::InvalidParameter("solver.grad_tol must be positive".into()));
        }
        let mut warnings = Vec::new();
        if let Some(s) = &self.sweep {
            if s.eps.is_empty() {
                return Err(Error::InvalidParameter("sweep.eps is empty".into()));
            }
            if s.eps.windows(2).any(|w| !(w[1] < w[0])) {
                return Err(Error::InvalidParameter("sweep.eps must be strictly decreasing".into()));
            }
            for &eps in &s.eps {
                let cfg = ColloidConfig { alpha: s.alpha, eps, gamma: s.gamma, surface_order: s.surface_order };
                cfg.validate()?;
                for v in cfg.violations() {
                    if !warnings.contains(&v) {
                        warnings.push(v);
                    }
                }
            }
            if s.gamma > 0.0 {
                if let Some((j, sp)) = species.iter().enumerate().find(|(_, sp)| !sp.surface.is_nonnegative()) {
                    return Err(Error::Assumption {
                        label: "K2",
                        detail: format!(
                            "strong anchoring (γ = {}) needs f_s ≥ 0, but species {j} uses `{}`",
                            s.gamma,
                            sp.surface.label()
                        ),
                    });
                }
            }
        }
        if !self.explore {
            if let Some(v) = warnings.first() {
                return Err(Error::Assumption { label: v.label, detail: format!("{} (set `explore` to run anyway)", v.detail) });
            }
        }
        Ok(warnings)
    }
}

impl SpeciesConfig {
    pub fn build(&self) -> Result<Species> {
        let mut shape = catalogue_shape(&self.shape)?;
        if self.centered {
            shape = shape.centered();
        }
        if self.scale != 1.0 {
            shape = transform(&shape, &Mat3::identity(), self.scale, &Vec3::zeros())?;
        }
        let rotation = match &self.rotation {
            RotationConfig::Identity => RotationField::identity(),
            RotationConfig::Constant { axis, angle } => RotationField::Constant(Rotation::about_axis(&vec3(*axis), *angle)?),
            RotationConfig::Twist { axis, along, rate, phase } => {
                RotationField::Twist { axis: vec3(*axis), along: *along, rate: *rate, phase: *phase }
            }
        };
        rotation.validate()?;
        let density = match &self.density {
            DensityConfig::Constant { value } => DensityField::Constant(*value),
            DensityConfig::Boxes { background, boxes } => DensityField::Boxes {
                background: *background,
                boxes: boxes.iter().map(|b| DensityBox { lo: vec3(b.lo), hi: vec3(b.hi), value: b.value }).collect(),
            },
        };
        density.validate()?;
        let surface = match &self.surface {
            SurfaceConfig::RapiniPapoular { strength } => SurfaceDensity::RapiniPapoular { strength: *strength },
            SurfaceConfig::SphericalQuadratic { coefficient } => SurfaceDensity::SphericalQuadratic { coefficient: *coefficient },
            SurfaceConfig::LinearTilt { weight } => SurfaceDensity::Custom(Arc::new(custom::LinearTilt { weight: *weight })),
            SurfaceConfig::Quartic { weight } => SurfaceDensity::Custom(Arc::new(custom::QuarticAnchoring { weight: *weight })),
            SurfaceConfig::PolarTilt { weight, axis } => {
                SurfaceDensity::Custom(Arc::new(custom::PolarTilt { weight: *weight, axis: vec3(*axis) }))
            }
        };
        Ok(Species::new(shape, rotation, density, surface))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunConfig {
        RunConfig::from_json(
            r#"{
                "schema_version": 1,
                "bulk": {"a": 0.5, "b": 0.0, "c": 1.0},
                "boundary": {"kind": "uniaxial", "order": 0.5, "director": {"kind": "twist", "along": 2, "rate": 1.5}},
                "species": [{"shape": "ball", "scale": 0.5, "surface": {"kind": "rapini_papoular", "strength": 1.0}}],
                "sweep": {"eps": [0.25, 0.2], "alpha": 1.2}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn parses_and_round_trips() {
        let c = base();
        assert!(c.validate().unwrap().is_empty());
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(c.species().unwrap().len(), 1);
        assert_eq!(c.nodes, [17; 3]);
    }

    #[test]
    fn rejects_alpha_at_the_ends() {
        for alpha in [1.0, 1.5] {
            let mut c = base();
            c.sweep.as_mut().unwrap().alpha = alpha;
            match c.validate() {
                Err(Error::Assumption { label, .. }) => assert_eq!(label, "H1"),
                other => panic!("{other:?}"),
            }
            c.explore = true;
            assert_eq!(c.validate().unwrap()[0].label, "H1");
        }
    }

    #[test]
    fn rejects_strong_anchoring_with_indefinite_density() {
        let mut c = base();
        c.sweep.as_mut().unwrap().gamma = 0.1;
        assert!(c.validate().is_ok());
        c.species[0].surface = SurfaceConfig::LinearTilt { weight: 1.0 };
        c.explore = true;
        assert!(matches!(c.validate(), Err(Error::Assumption { label: "K2", .. })));
        c.sweep.as_mut().unwrap().gamma = 0.3;
        c.species[0].surface = SurfaceConfig::Quartic { weight: 1.0 };
        assert_eq!(c.validate().unwrap()[0].label, "K1");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(RunConfig::from_json("{\"schema_version\": 2}"), Err(Error::Json(_)) | Err(Error::Parse(_))));
        let text = base().to_json().replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(matches!(RunConfig::from_json(&text), Err(Error::Parse(_))));
        let mut c = base();
        c.species[0].shape = "cube".into();
        assert!(matches!(c.validate(), Err(Error::UnknownShape { .. })));
        let mut c = base();
        c.bulk.c = 0.0;
        assert!(matches!(c.validate(), Err(Error::Assumption { label: "H7", .. })));
        let mut c = base();
        c.species[0].density = DensityConfig::Constant { value: -1.0 };
        assert!(matches!(c.validate(), Err(Error::Assumption { label: "H3", .. })));
        let mut c = base();
        c.sweep.as_mut().unwrap().eps = vec![0.2, 0.25];
        assert!(c.validate().is_err());
    }

    #[test]
    fn design_section_adds_species() {
        let mut c = base();
        c.design = Some(DesignConfig { p: [0.4, -0.2, 0.1, 0.3, -0.1, 0.2], w: 0.5, a: 1.0, a_prime: 2.0 });
        assert_eq!(c.species().unwrap().len(), 1 + 10);
    }
}
