//! Element geometry and the global system matrix `A = M + h²Σ wᵢ GᵢᵀGᵢ`.
//!
//! `Gᵢ` maps stacked vertex positions to the column-stacked deformation
//! gradient, `vec(F) = Gᵢ q`, with `F = D_s D_m⁻¹`. Since `Gᵢ = Cᵀ ⊗ I₃`,
//! the element contribution to `A` is `(C Cᵀ) ⊗ I₃`.

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector3};

use crate::error::{Result, SimError};
use crate::par;
use crate::scene::{Element, Scene};
use crate::sparse::CsrMatrix;
use crate::state::SimState;

fn v3(p: [f64; 3]) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

/// Rest volume (tets) or rest area (triangles).
pub fn rest_measure(vertices: &[[f64; 3]], el: &Element) -> f64 {
    let x = |k: usize| v3(vertices[el.nodes()[k]]);
    match el {
        Element::Tet(_) => {
            let dm = Matrix3::from_columns(&[x(1) - x(0), x(2) - x(0), x(3) - x(0)]);
            dm.determinant().abs() / 6.0
        }
        Element::Tri(_) => 0.5 * (x(1) - x(0)).cross(&(x(2) - x(0))).norm(),
    }
}

/// Precomputed rest-shape data of one element.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementGeom {
    pub nodes: Vec<usize>,
    /// 3 for tets, 2 for triangles.
    pub dim: usize,
    /// Row `a` holds the gradient coefficients of node `a`: `F = Σ_a x_a c_aᵀ`.
    pub c: DMatrix<f64>,
    pub measure: f64,
}

impl ElementGeom {
    pub fn new(vertices: &[[f64; 3]], el: &Element, index: usize) -> Result<Self> {
        let nodes = el.nodes().to_vec();
        let x = |k: usize| v3(vertices[nodes[k]]);
        let measure = rest_measure(vertices, el);
        if !(measure > 1e-14) {
            return Err(SimError::DegenerateElement { index, measure });
        }
        let dim = el.dim();
        let dm_inv = match el {
            Element::Tet(_) => {
                let dm = Matrix3::from_columns(&[x(1) - x(0), x(2) - x(0), x(3) - x(0)]);
                let inv = dm.try_inverse().ok_or(SimError::DegenerateElement { index, measure })?;
                DMatrix::from_fn(3, 3, |i, j| inv[(i, j)])
            }
            Element::Tri(_) => {
                // Rest shape expressed in an orthonormal in-plane basis.
                let e1 = x(1) - x(0);
                let e2 = x(2) - x(0);
                let t1 = e1.normalize();
                let t2 = (e2 - t1 * e2.dot(&t1)).normalize();
                let dm = Matrix2::new(e1.dot(&t1), e2.dot(&t1), 0.0, e2.dot(&t2));
                let inv = dm.try_inverse().ok_or(SimError::DegenerateElement { index, measure })?;
                DMatrix::from_fn(2, 2, |i, j| inv[(i, j)])
            }
        };
        let mut c = DMatrix::zeros(dim + 1, dim);
        for j in 0..dim {
            for k in 0..dim {
                c[(k + 1, j)] = dm_inv[(k, j)];
                c[(0, j)] -= dm_inv[(k, j)];
            }
        }
        Ok(Self { nodes, dim, c, measure })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Deformation gradient (3 × dim) at positions q.
    pub fn deformation_gradient(&self, q: &[f64]) -> DMatrix<f64> {
        let mut f = DMatrix::zeros(3, self.dim);
        for (a, &v) in self.nodes.iter().enumerate() {
            for j in 0..self.dim {
                let caj = self.c[(a, j)];
                for r in 0..3 {
                    f[(r, j)] += caj * q[3 * v + r];
                }
            }
        }
        f
    }

    /// Local `Gᵀ y` for a column-stacked `y` of length 3·dim; returns a
    /// vector of length 3·n_nodes in node order.
    pub fn gt_local(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; 3 * self.n_nodes()];
        for a in 0..self.n_nodes() {
            for j in 0..self.dim {
                let caj = self.c[(a, j)];
                for r in 0..3 {
                    out[3 * a + r] += caj * y[3 * j + r];
                }
            }
        }
        out
    }

    /// Dense `G` of shape (3·dim) × (3·n_nodes) in local node order.
    pub fn g_matrix(&self) -> DMatrix<f64> {
        let k = self.n_nodes();
        let mut g = DMatrix::zeros(3 * self.dim, 3 * k);
        for a in 0..k {
            for j in 0..self.dim {
                for r in 0..3 {
                    g[(3 * j + r, 3 * a + r)] = self.c[(a, j)];
                }
            }
        }
        g
    }

    /// Global dof indices in local order.
    pub fn dofs(&self) -> Vec<usize> {
        self.nodes.iter().flat_map(|&v| [3 * v, 3 * v + 1, 3 * v + 2]).collect()
    }
}

/// Build element geometry for every element of a scene.
pub fn element_geometry(scene: &Scene) -> Result<Vec<ElementGeom>> {
    par::try_map_range(scene.elements.len(), |e| ElementGeom::new(&scene.vertices, &scene.elements[e], e))
}

/// Constraint weights `wᵢ` derived from the element materials.
pub fn element_weights(scene: &Scene, geoms: &[ElementGeom]) -> Vec<f64> {
    scene
        .materials
        .iter()
        .zip(geoms)
        .map(|(m, g)| m.weight_density() * g.measure)
        .collect()
}

/// `A` together with the structures needed to refill it and related
/// operators without touching its sparsity pattern.
#[derive(Debug, Clone)]
pub struct SystemMatrix {
    pub a: CsrMatrix,
    pub mass: Vec<f64>,
    pub geoms: Vec<ElementGeom>,
    pub weights: Vec<f64>,
    pub h: f64,
    /// Per element, the CSR slot of each entry of its (3k × 3k) local block, row-major.
    pub pattern_map: Vec<Vec<usize>>,
    /// Per vertex, the CSR slots of its 3 × 3 diagonal block, row-major.
    pub vertex_blocks: Vec<[usize; 9]>,
}

pub fn assemble_system_matrix(scene: &Scene) -> Result<SystemMatrix> {
    scene.validate()?;
    let geoms = element_geometry(scene)?;
    let n = scene.n_dofs();
    let mut triplets = Vec::new();
    for v in 0..scene.n_verts() {
        for r in 0..3 {
            for s in 0..3 {
                triplets.push((3 * v + r, 3 * v + s, 0.0));
            }
        }
    }
    for g in &geoms {
        let dofs = g.dofs();
        for &i in &dofs {
            for &j in &dofs {
                triplets.push((i, j, 0.0));
            }
        }
    }
    let pattern = CsrMatrix::from_triplets(n, n, &triplets);
    let pattern_map = geoms
        .iter()
        .map(|g| {
            let dofs = g.dofs();
            dofs.iter()
                .flat_map(|&i| dofs.iter().map(move |&j| (i, j)))
                .map(|(i, j)| pattern.slot(i, j).expect("slot present"))
                .collect()
        })
        .collect();
    let vertex_blocks = (0..scene.n_verts())
        .map(|v| {
            let mut b = [0usize; 9];
            for r in 0..3 {
                for s in 0..3 {
                    b[3 * r + s] = pattern.slot(3 * v + r, 3 * v + s).expect("slot present");
                }
            }
            b
        })
        .collect();
    let mut sys = SystemMatrix {
        a: pattern,
        mass: scene.mass_diag(),
        weights: element_weights(scene, &geoms),
        geoms,
        h: scene.h,
        pattern_map,
        vertex_blocks,
    };
    sys.refill();
    Ok(sys)
}

impl SystemMatrix {
    /// Recompute weights, masses and `h` from the scene and refill values.
    /// The sparsity pattern is left untouched.
    pub fn reassemble(&mut self, scene: &Scene) {
        self.weights = element_weights(scene, &self.geoms);
        self.mass = scene.mass_diag();
        self.h = scene.h;
        self.refill();
    }

    fn refill(&mut self) {
        let h2 = self.h * self.h;
        let blocks: Vec<DMatrix<f64>> = par::map_range(self.geoms.len(), |e| {
            let g = &self.geoms[e];
            let cct = &g.c * g.c.transpose();
            let k = g.n_nodes();
            DMatrix::from_fn(3 * k, 3 * k, |i, j| {
                if i % 3 == j % 3 {
                    h2 * self.weights[e] * cct[(i / 3, j / 3)]
                } else {
                    0.0
                }
            })
        });
        let vals = self.a.values_mut();
        vals.iter_mut().for_each(|x| *x = 0.0);
        for (v, slots) in self.vertex_blocks.iter().enumerate() {
            for r in 0..3 {
                vals[slots[4 * r]] += self.mass[3 * v + r];
            }
        }
        for (slots, b) in self.pattern_map.iter().zip(&blocks) {
            scatter_block(vals, slots, b, 1.0);
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Copy of `A` with `scale · blocks[e]` added to each element's local block.
    pub fn with_element_blocks(&self, blocks: &[DMatrix<f64>], scale: f64) -> CsrMatrix {
        let mut m = self.a.clone();
        let vals = m.values_mut();
        for (slots, b) in self.pattern_map.iter().zip(blocks) {
            scatter_block(vals, slots, b, scale);
        }
        m
    }

    /// Add `scale · block` to the 3 × 3 diagonal block of vertex `v` of a
    /// matrix sharing `A`'s pattern.
    pub fn add_vertex_block(&self, m: &mut CsrMatrix, v: usize, block: &Matrix3<f64>, scale: f64) {
        let vals = m.values_mut();
        for r in 0..3 {
            for s in 0..3 {
                vals[self.vertex_blocks[v][3 * r + s]] += scale * block[(r, s)];
            }
        }
    }
}

fn scatter_block(vals: &mut [f64], slots: &[usize], b: &DMatrix<f64>, scale: f64) {
    let k = b.ncols();
    for (idx, &slot) in slots.iter().enumerate() {
        vals[slot] += scale * b[(idx / k, idx % k)];
    }
}

/// `q̂ = q̄ + h v̄ + h² M⁻¹ (f_ext + m g)`.
pub fn predict(scene: &Scene, state: &SimState) -> Vec<f64> {
    let h = scene.h;
    (0..state.q.len())
        .map(|i| {
            let m = scene.masses[i / 3];
            state.q[i] + h * state.v[i] + h * h * (scene.fext[i] / m + scene.gravity[i % 3])
        })
        .collect()
}
