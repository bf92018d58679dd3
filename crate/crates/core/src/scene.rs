//! Scene description and its JSON representation.
//!
//! A scene file looks like
//!
//! ```json
//! {
//!   "vertices": [[0,0,0],[1,0,0],[0,1,0],[0,0,1]],
//!   "elements": [[0,1,2,3]],
//!   "material": {"model": "neohookean", "E": 1e4, "nu": 0.3},
//!   "density": 1000.0,
//!   "gravity": [0,0,-9.8],
//!   "dt": 0.01,
//!   "eps2": 1e-6,
//!   "bindings": [{"vertex": 0, "target": [0,0,0], "compliance": 1e-6}],
//!   "colliders": [{"type": "half_space", "normal": [0,0,1], "offset": 0, "mu": 0.3}]
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::state::SimState;

pub const DEFAULT_GRAVITY: [f64; 3] = [0.0, 0.0, -9.8];
pub const DEFAULT_CONTACT_ACTIVATION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaterialModel {
    #[serde(alias = "ARAP")]
    Arap,
    #[serde(alias = "NeoHookean", alias = "neo_hookean")]
    NeoHookean,
}

/// Constitutive parameters of one element.
///
/// The constraint weight is derived: `2μ·vol` for Neo-Hookean and
/// `stiffness·vol` for ARAP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub model: MaterialModel,
    #[serde(rename = "E", default = "default_young")]
    pub young: f64,
    #[serde(default = "default_poisson")]
    pub nu: f64,
    #[serde(default = "default_stiffness")]
    pub stiffness: f64,
}

fn default_young() -> f64 {
    1e4
}
fn default_poisson() -> f64 {
    0.3
}
fn default_stiffness() -> f64 {
    1e3
}

impl MaterialParams {
    pub fn arap(stiffness: f64) -> Self {
        Self { model: MaterialModel::Arap, young: default_young(), nu: default_poisson(), stiffness }
    }

    pub fn neohookean(young: f64, nu: f64) -> Self {
        Self { model: MaterialModel::NeoHookean, young, nu, stiffness: default_stiffness() }
    }

    pub fn validate(&self) -> Result<()> {
        match self.model {
            MaterialModel::Arap => {
                if !(self.stiffness >= 0.0 && self.stiffness.is_finite()) {
                    return Err(SimError::InvalidMaterial(format!("stiffness {} < 0", self.stiffness)));
                }
            }
            MaterialModel::NeoHookean => {
                if !(self.young > 0.0 && self.young.is_finite()) {
                    return Err(SimError::InvalidMaterial(format!("E = {} must be > 0", self.young)));
                }
                if !(self.nu > -1.0 && self.nu < 0.5) {
                    return Err(SimError::InvalidMaterial(format!("nu = {} outside (-1, 0.5)", self.nu)));
                }
            }
        }
        Ok(())
    }

    /// Weight per unit rest measure (w / vol).
    pub fn weight_density(&self) -> f64 {
        match self.model {
            MaterialModel::Arap => self.stiffness,
            MaterialModel::NeoHookean => 2.0 * crate::elasticity::lame_from_young(self.young, self.nu).0,
        }
    }
}

/// Element connectivity: tetrahedra or surface triangles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Element {
    Tet([usize; 4]),
    Tri([usize; 3]),
}

impl Element {
    pub fn nodes(&self) -> &[usize] {
        match self {
            Element::Tet(n) => n,
            Element::Tri(n) => n,
        }
    }

    /// Intrinsic dimension (3 for tets, 2 for triangles).
    pub fn dim(&self) -> usize {
        self.nodes().len() - 1
    }
}

/// A soft positional constraint `λ_b = −(x_v − target)/compliance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BindingSpec {
    pub vertex: usize,
    pub target: [f64; 3],
    pub compliance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ColliderKind {
    /// The free side is `n·x ≥ offset`.
    #[serde(alias = "plane")]
    HalfSpace { normal: [f64; 3], offset: f64 },
    /// Solid ball; the free side is outside.
    Sphere { center: [f64; 3], radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Collider {
    #[serde(flatten)]
    pub kind: ColliderKind,
    #[serde(default)]
    pub mu: f64,
}

impl Collider {
    pub fn half_space(normal: [f64; 3], offset: f64, mu: f64) -> Self {
        let l = (normal[0].powi(2) + normal[1].powi(2) + normal[2].powi(2)).sqrt();
        Self { kind: ColliderKind::HalfSpace { normal: normal.map(|c| c / l), offset }, mu }
    }

    pub fn sphere(center: [f64; 3], radius: f64, mu: f64) -> Self {
        Self { kind: ColliderKind::Sphere { center, radius }, mu }
    }

    /// Signed gap and outward unit normal at point x.
    pub fn gap_and_normal(&self, x: [f64; 3]) -> (f64, [f64; 3]) {
        match self.kind {
            ColliderKind::HalfSpace { normal, offset } => {
                (normal[0] * x[0] + normal[1] * x[1] + normal[2] * x[2] - offset, normal)
            }
            ColliderKind::Sphere { center, radius } => {
                let d = [x[0] - center[0], x[1] - center[1], x[2] - center[2]];
                let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                if r == 0.0 {
                    return (-radius, [0.0, 0.0, 1.0]);
                }
                // `r − R` cancels catastrophically when the center is far from
                // the origin; measure the dominant axis from the nearest pole.
                let k = (0..3).max_by(|&a, &b| d[a].abs().total_cmp(&d[b].abs())).unwrap();
                let s = d[k].signum();
                let off_pole = s * (x[k] - (center[k] + s * radius));
                let rest: f64 = (0..3).filter(|&i| i != k).map(|i| d[i] * d[i]).sum();
                let gap = (rest + off_pole * (d[k].abs() + radius)) / (r + radius);
                (gap, d.map(|c| c / r))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(SimError::InvalidScene(format!("friction coefficient {} < 0", self.mu)));
        }
        match self.kind {
            ColliderKind::HalfSpace { normal, .. } => {
                let l = (normal[0].powi(2) + normal[1].powi(2) + normal[2].powi(2)).sqrt();
                if (l - 1.0).abs() > 1e-9 {
                    return Err(SimError::InvalidScene(format!("collider normal has length {l}")));
                }
            }
            ColliderKind::Sphere { radius, .. } => {
                if !(radius > 0.0) {
                    return Err(SimError::InvalidScene(format!("sphere radius {radius} <= 0")));
                }
            }
        }
        Ok(())
    }
}

/// Everything that defines a simulation apart from its state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub vertices: Vec<[f64; 3]>,
    pub elements: Vec<Element>,
    pub materials: Vec<MaterialParams>,
    pub masses: Vec<f64>,
    pub gravity: [f64; 3],
    pub h: f64,
    pub bindings: Vec<BindingSpec>,
    pub colliders: Vec<Collider>,
    /// Smoothing parameter stored as 2ε².
    pub eps2: f64,
    /// Per-dof external force (length 3·n_verts).
    pub fext: Vec<f64>,
    pub initial_velocities: Option<Vec<[f64; 3]>>,
    pub contact_activation: f64,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum MaterialSpec {
    One(MaterialParams),
    PerElement(Vec<MaterialParams>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    vertices: Vec<[f64; 3]>,
    #[serde(default)]
    elements: Vec<Element>,
    #[serde(alias = "materials")]
    material: Option<MaterialSpec>,
    density: Option<f64>,
    masses: Option<Vec<f64>>,
    gravity: Option<[f64; 3]>,
    dt: f64,
    eps2: f64,
    #[serde(default)]
    bindings: Vec<BindingSpec>,
    #[serde(default)]
    colliders: Vec<Collider>,
    fext: Option<Vec<[f64; 3]>>,
    velocities: Option<Vec<[f64; 3]>>,
    contact_activation: Option<f64>,
}

impl Scene {
    /// Scene with the given vertices and masses and nothing else.
    pub fn particles(vertices: Vec<[f64; 3]>, masses: Vec<f64>, h: f64, eps2: f64) -> Self {
        let n = vertices.len();
        Self {
            vertices,
            elements: Vec::new(),
            materials: Vec::new(),
            masses,
            gravity: DEFAULT_GRAVITY,
            h,
            bindings: Vec::new(),
            colliders: Vec::new(),
            eps2,
            fext: vec![0.0; 3 * n],
            initial_velocities: None,
            contact_activation: DEFAULT_CONTACT_ACTIVATION,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: SceneFile = serde_json::from_str(s)?;
        Self::from_file_repr(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    fn from_file_repr(f: SceneFile) -> Result<Self> {
        let n = f.vertices.len();
        let materials = match f.material {
            None if f.elements.is_empty() => Vec::new(),
            None => return Err(SimError::InvalidScene("elements given without material".into())),
            Some(MaterialSpec::One(m)) => vec![m; f.elements.len()],
            Some(MaterialSpec::PerElement(v)) => v,
        };
        let mut scene = Self {
            vertices: f.vertices,
            elements: f.elements,
            materials,
            masses: Vec::new(),
            gravity: f.gravity.unwrap_or(DEFAULT_GRAVITY),
            h: f.dt,
            bindings: f.bindings,
            colliders: f.colliders,
            eps2: f.eps2,
            fext: f.fext.map_or_else(|| vec![0.0; 3 * n], |v| v.concat()),
            initial_velocities: f.velocities,
            contact_activation: f.contact_activation.unwrap_or(DEFAULT_CONTACT_ACTIVATION),
        };
        scene.masses = match (f.masses, f.density) {
            (Some(m), _) => m,
            (None, Some(rho)) => scene.lumped_masses(rho)?,
            (None, None) => return Err(SimError::InvalidScene("either masses or density required".into())),
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Lumped masses from a uniform density: each element splits ρ·vol evenly
    /// among its nodes.
    pub fn lumped_masses(&self, density: f64) -> Result<Vec<f64>> {
        let mut m = vec![0.0; self.n_verts()];
        for (e, el) in self.elements.iter().enumerate() {
            if let Some(&i) = el.nodes().iter().find(|&&i| i >= self.n_verts()) {
                return Err(SimError::InvalidScene(format!("element {e} references vertex {i} (have {})", self.n_verts())));
            }
            let vol = crate::system::rest_measure(&self.vertices, el);
            if !(vol > 0.0) {
                return Err(SimError::DegenerateElement { index: e, measure: vol });
            }
            let share = density * vol / el.nodes().len() as f64;
            for &i in el.nodes() {
                m[i] += share;
            }
        }
        Ok(m)
    }

    pub fn n_verts(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_dofs(&self) -> usize {
        3 * self.vertices.len()
    }

    /// Diagonal of the lumped mass matrix (length 3·n_verts).
    pub fn mass_diag(&self) -> Vec<f64> {
        self.masses.iter().flat_map(|&m| [m, m, m]).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn rest_positions(&self) -> Vec<f64> {
        self.vertices.concat()
    }

    /// State at rest positions with the scene's initial velocities.
    pub fn initial_state(&self) -> SimState {
        let q = self.rest_positions();
        let v = self
            .initial_velocities
            .as_ref()
            .map_or_else(|| vec![0.0; q.len()], |v| v.concat());
        SimState { q, v, step_index: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_verts();
        let bad = |msg: String| Err(SimError::InvalidScene(msg));
        if !(self.h > 0.0 && self.h.is_finite()) {
            return bad(format!("time step {} must be > 0", self.h));
        }
        if !(self.eps2 > 0.0 && self.eps2.is_finite()) {
            return bad(format!("eps2 {} must be > 0", self.eps2));
        }
        if self.masses.len() != n {
            return bad(format!("{} masses for {} vertices", self.masses.len(), n));
        }
        if let Some(i) = self.masses.iter().position(|m| !(*m > 0.0 && m.is_finite())) {
            return bad(format!("vertex {i} has non-positive mass {}", self.masses[i]));
        }
        if self.fext.len() != 3 * n {
            return bad(format!("fext has {} entries, expected {}", self.fext.len(), 3 * n));
        }
        if self.materials.len() != self.elements.len() {
            return bad(format!("{} materials for {} elements", self.materials.len(), self.elements.len()));
        }
        if let Some(v) = &self.initial_velocities {
            if v.len() != n {
                return bad(format!("{} velocities for {} vertices", v.len(), n));
            }
        }
        if !(self.contact_activation >= 0.0) {
            return bad("contact_activation must be >= 0".into());
        }
        for (e, el) in self.elements.iter().enumerate() {
            if let Some(&i) = el.nodes().iter().find(|&&i| i >= n) {
                return bad(format!("element {e} references vertex {i} (have {n})"));
            }
            let vol = crate::system::rest_measure(&self.vertices, el);
            if !(vol > 1e-14) {
                return Err(SimError::DegenerateElement { index: e, measure: vol });
            }
        }
        for m in &self.materials {
            m.validate()?;
        }
        for b in &self.bindings {
            if b.vertex >= n {
                return bad(format!("binding references vertex {} (have {n})", b.vertex));
            }
            if !(b.compliance > 0.0 && b.compliance.is_finite()) {
                return bad(format!("binding compliance {} must be > 0", b.compliance));
            }
        }
        for c in &self.colliders {
            c.validate()?;
        }
        let all = self.vertices.iter().flatten().chain(&self.fext).chain(self.gravity.iter());
        if !all.copied().all(f64::is_finite) {
            return Err(SimError::NonFinite("scene"));
        }
        Ok(())
    }
}
