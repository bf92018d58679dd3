//! Scalar parameters of a scene and rollout losses over them.

use serde::{Deserialize, Serialize};

use crate::adjoint::{backprop_rollout, GradientReport};
use crate::error::{Result, SimError};
use crate::forward::{rollout, ForwardConfig, Rollout};
use crate::linsolve::SolverConfig;
use crate::scene::{MaterialModel, Scene};
use crate::system::assemble_system_matrix;

/// A scalar knob of a scene. Each variable sets one value on every entity
/// of its kind (all elements, all colliders, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    /// ARAP stiffness density of every ARAP element.
    Stiffness,
    /// Young's modulus of every Neo-Hookean element.
    Young,
    /// Poisson ratio of every Neo-Hookean element.
    Poisson,
    /// Total external force along an axis, distributed by mass.
    Force { axis: usize },
    /// Friction coefficient of every collider.
    Friction,
    /// Initial velocity along an axis, shared by all vertices.
    InitialVelocity { axis: usize },
    /// Compliance of every binding.
    BindingCompliance,
    /// Offset of every binding target from its scene value along an axis.
    BindingOffset { axis: usize },
}

impl Variable {
    pub fn parse(s: &str) -> Option<Self> {
        let axis = |c: &str| match c {
            "x" => Some(0),
            "y" => Some(1),
            "z" => Some(2),
            _ => None,
        };
        Some(match s {
            "k" | "stiffness" | "w" => Variable::Stiffness,
            "E" | "young" => Variable::Young,
            "nu" | "poisson" => Variable::Poisson,
            "mu" | "friction" => Variable::Friction,
            "Eb" | "compliance" => Variable::BindingCompliance,
            _ => {
                let (head, tail) = s.rsplit_once('_')?;
                let a = axis(tail)?;
                match head {
                    "f" | "fext" | "force" => Variable::Force { axis: a },
                    "v" | "v0" => Variable::InitialVelocity { axis: a },
                    "db" | "offset" => Variable::BindingOffset { axis: a },
                    _ => return None,
                }
            }
        })
    }

    pub fn name(&self) -> String {
        const AX: [&str; 3] = ["x", "y", "z"];
        match self {
            Variable::Stiffness => "stiffness".into(),
            Variable::Young => "E".into(),
            Variable::Poisson => "nu".into(),
            Variable::Force { axis } => format!("fext_{}", AX[*axis]),
            Variable::Friction => "mu".into(),
            Variable::InitialVelocity { axis } => format!("v0_{}", AX[*axis]),
            Variable::BindingCompliance => "Eb".into(),
            Variable::BindingOffset { axis } => format!("db_{}", AX[*axis]),
        }
    }

    /// True for parameters whose FD reference is unreliable near stick–slip.
    pub fn is_friction(&self) -> bool {
        matches!(self, Variable::Friction)
    }

    /// True for strictly positive parameters (eligible for log-space descent).
    pub fn is_positive(&self) -> bool {
        matches!(self, Variable::Stiffness | Variable::Young | Variable::BindingCompliance)
    }

    /// Errors if the scene has nothing this variable acts on.
    pub fn check(&self, scene: &Scene) -> Result<()> {
        let has = |m: MaterialModel| scene.materials.iter().any(|p| p.model == m);
        let ok = match self {
            Variable::Stiffness => has(MaterialModel::Arap),
            Variable::Young | Variable::Poisson => has(MaterialModel::NeoHookean),
            Variable::Force { axis } | Variable::InitialVelocity { axis } => *axis < 3,
            Variable::Friction => !scene.colliders.is_empty(),
            Variable::BindingCompliance => !scene.bindings.is_empty(),
            Variable::BindingOffset { axis } => *axis < 3 && !scene.bindings.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidScene(format!("variable {} has nothing to act on in this scene", self.name())))
        }
    }

    /// Writes `value` into a copy of `base`.
    pub fn apply(&self, base: &Scene, scene: &mut Scene, value: f64) {
        match *self {
            Variable::Stiffness => scene.materials.iter_mut().filter(|m| m.model == MaterialModel::Arap).for_each(|m| m.stiffness = value),
            Variable::Young => scene.materials.iter_mut().filter(|m| m.model == MaterialModel::NeoHookean).for_each(|m| m.young = value),
            Variable::Poisson => scene.materials.iter_mut().filter(|m| m.model == MaterialModel::NeoHookean).for_each(|m| m.nu = value),
            Variable::Force { axis } => {
                let total = scene.total_mass();
                for (v, m) in scene.masses.iter().enumerate() {
                    scene.fext[3 * v + axis] = base.fext[3 * v + axis] + value * m / total;
                }
            }
            Variable::Friction => scene.colliders.iter_mut().for_each(|c| c.mu = value),
            Variable::InitialVelocity { axis } => {
                let n = scene.n_verts();
                let mut v = scene.initial_velocities.clone().unwrap_or_else(|| vec![[0.0; 3]; n]);
                v.iter_mut().for_each(|x| x[axis] = value);
                scene.initial_velocities = Some(v);
            }
            Variable::BindingCompliance => scene.bindings.iter_mut().for_each(|b| b.compliance = value),
            Variable::BindingOffset { axis } => {
                for (b, b0) in scene.bindings.iter_mut().zip(&base.bindings) {
                    b.target[axis] = b0.target[axis] + value;
                }
            }
        }
    }

    /// Current value in a scene (the first entity of the kind).
    pub fn read(&self, base: &Scene, scene: &Scene) -> f64 {
        let mat = |m: MaterialModel| scene.materials.iter().find(|p| p.model == m).copied();
        match *self {
            Variable::Stiffness => mat(MaterialModel::Arap).map_or(0.0, |m| m.stiffness),
            Variable::Young => mat(MaterialModel::NeoHookean).map_or(0.0, |m| m.young),
            Variable::Poisson => mat(MaterialModel::NeoHookean).map_or(0.0, |m| m.nu),
            Variable::Force { axis } => (0..scene.n_verts()).map(|v| scene.fext[3 * v + axis] - base.fext[3 * v + axis]).sum(),
            Variable::Friction => scene.colliders.first().map_or(0.0, |c| c.mu),
            Variable::InitialVelocity { axis } => scene.initial_velocities.as_ref().map_or(0.0, |v| v[0][axis]),
            Variable::BindingCompliance => scene.bindings.first().map_or(0.0, |b| b.compliance),
            Variable::BindingOffset { axis } => scene.bindings.first().zip(base.bindings.first()).map_or(0.0, |(b, b0)| b.target[axis] - b0.target[axis]),
        }
    }

    /// Chain rule from the per-entity gradients to this scalar.
    pub fn gradient(&self, scene: &Scene, g: &GradientReport) -> f64 {
        let over_model = |m: MaterialModel, v: &[f64]| -> f64 {
            scene.materials.iter().zip(v).filter(|(p, _)| p.model == m).map(|(_, x)| x).sum()
        };
        match *self {
            Variable::Stiffness => over_model(MaterialModel::Arap, &g.dl_dstiffness_elem),
            Variable::Young => over_model(MaterialModel::NeoHookean, &g.dl_de_elem),
            Variable::Poisson => over_model(MaterialModel::NeoHookean, &g.dl_dnu_elem),
            Variable::Force { axis } => {
                let total = scene.total_mass();
                scene.masses.iter().enumerate().map(|(v, m)| g.dl_dfext[3 * v + axis] * m / total).sum()
            }
            Variable::Friction => g.dl_dmu_friction.iter().sum(),
            Variable::InitialVelocity { axis } => (0..scene.n_verts()).map(|v| g.dl_dv0[3 * v + axis]).sum(),
            Variable::BindingCompliance => g.dl_deb.iter().sum(),
            Variable::BindingOffset { axis } => g.dl_ddb.iter().map(|d| d[axis]).sum(),
        }
    }
}

/// What the rollout is compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// `L = ‖q_T − q*‖²`.
    FinalState(Vec<f64>),
    /// `L = Σ_{t≥1} ‖q_t − q*_t‖²`; entry 0 is ignored.
    Trajectory(Vec<Vec<f64>>),
}

#[derive(Debug, Clone)]
pub struct OptProblem {
    pub scene: Scene,
    pub horizon: usize,
    pub variables: Vec<Variable>,
    pub init: Vec<f64>,
    pub learning_rate: f64,
    pub iterations: usize,
    pub target: Target,
    /// Descend on `ln x` instead of x for the positive parameters; the
    /// others (ν, forces, velocities, offsets) stay linear.
    pub log_space: bool,
    pub forward: ForwardConfig,
    pub solver: SolverConfig,
    /// Compute an FD reference every this many iterations (0 = never).
    pub fd_every: usize,
    /// Relative FD step.
    pub eta: f64,
}

pub const DEFAULT_ETA: f64 = 1e-4;

impl OptProblem {
    /// Problem whose target is generated by the simulator itself at `target_values`.
    pub fn self_generated(
        scene: Scene,
        horizon: usize,
        variables: Vec<Variable>,
        target_values: &[f64],
        final_state_only: bool,
    ) -> Result<Self> {
        for v in &variables {
            v.check(&scene)?;
        }
        let init: Vec<f64> = variables.iter().map(|v| v.read(&scene, &scene)).collect();
        let mut p = Self {
            scene,
            horizon,
            variables,
            init,
            learning_rate: 1e-2,
            iterations: 100,
            target: Target::FinalState(Vec::new()),
            log_space: false,
            forward: ForwardConfig::default(),
            solver: SolverConfig::default(),
            fd_every: 0,
            eta: DEFAULT_ETA,
        };
        let ro = p.rollout_at(target_values)?;
        p.target = if final_state_only {
            Target::FinalState(ro.final_state().q.clone())
        } else {
            Target::Trajectory(ro.states.iter().map(|s| s.q.clone()).collect())
        };
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(SimError::InvalidScene("learning rate must be > 0".into()));
        }
        if self.init.len() != self.variables.len() {
            return Err(SimError::DimensionMismatch { expected: self.variables.len(), got: self.init.len() });
        }
        for v in &self.variables {
            v.check(&self.scene)?;
        }
        Ok(())
    }

    /// Per-variable log-space flags.
    pub fn log_mask(&self) -> Vec<bool> {
        self.variables.iter().map(|v| self.log_space && v.is_positive()).collect()
    }

    pub fn scene_at(&self, x: &[f64]) -> Scene {
        let mut s = self.scene.clone();
        for (v, &val) in self.variables.iter().zip(x) {
            v.apply(&self.scene, &mut s, val);
        }
        s
    }

    pub fn rollout_at(&self, x: &[f64]) -> Result<Rollout> {
        let s = self.scene_at(x);
        let sys = assemble_system_matrix(&s)?;
        rollout(&s, &sys, &s.initial_state(), self.horizon, &self.forward)
    }

    fn loss_and_seeds(&self, ro: &Rollout) -> (f64, Vec<Vec<f64>>) {
        let n_states = ro.states.len();
        let mut seeds = vec![Vec::new(); n_states];
        let mut l = 0.0;
        let mut add = |t: usize, target: &[f64]| {
            let (lt, g) = crate::adjoint::loss_final_state(&ro.states[t].q, target);
            l += lt;
            seeds[t] = g;
        };
        match &self.target {
            Target::FinalState(q) => add(n_states - 1, q),
            Target::Trajectory(qs) => {
                for (t, q) in qs.iter().enumerate().take(n_states).skip(1) {
                    add(t, q);
                }
            }
        }
        (l, seeds)
    }

    pub fn loss(&self, x: &[f64]) -> Result<f64> {
        Ok(self.loss_and_seeds(&self.rollout_at(x)?).0)
    }

    /// Loss and adjoint gradient with respect to the problem's variables.
    pub fn loss_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let s = self.scene_at(x);
        let sys = assemble_system_matrix(&s)?;
        let ro = rollout(&s, &sys, &s.initial_state(), self.horizon, &self.forward)?;
        let (l, seeds) = self.loss_and_seeds(&ro);
        let rep = backprop_rollout(&s, &sys, &ro, &seeds, &[], &self.solver)?;
        Ok((l, self.variables.iter().map(|v| v.gradient(&s, &rep)).collect()))
    }
}

/// Central differences of `f` with per-component step `eta·|xᵢ|` (`eta` at
/// `xᵢ = 0`), so small positive parameters such as compliances stay positive.
pub fn fd_gradient_fn(f: impl Fn(&[f64]) -> Result<f64>, x: &[f64], eta: f64) -> Result<Vec<f64>> {
    if !(eta > 0.0) {
        return Err(SimError::InvalidScene(format!("FD step {eta} must be > 0")));
    }
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let step = if x[i] == 0.0 { eta } else { eta * x[i].abs() };
        let mut xp = x.to_vec();
        xp[i] += step;
        let mut xm = x.to_vec();
        xm[i] -= step;
        g.push((f(&xp)? - f(&xm)?) / (2.0 * step));
    }
    Ok(g)
}

/// FD reference of the problem's rollout loss.
pub fn fd_gradient(problem: &OptProblem, x: &[f64], eta: f64) -> Result<Vec<f64>> {
    fd_gradient_fn(|y| problem.loss(y), x, eta)
}
