//! Procedural desk-scale scenes: bars, cubes, a pinned sheet, blocks on a
//! plane. Generation is deterministic in (resolution, seed).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scene::{BindingSpec, Collider, Element, MaterialParams, Scene};

pub const DEFAULT_DT: f64 = 1e-2;
pub const DEFAULT_EPS2: f64 = 1e-6;
/// Binding compliance used for pinned vertices.
pub const PIN_COMPLIANCE: f64 = 1e-6;

/// Regular tet grid: each cell split into six tets around its main diagonal.
pub fn tet_grid(cells: [usize; 3], size: [f64; 3], origin: [f64; 3]) -> (Vec<[f64; 3]>, Vec<Element>) {
    let [nx, ny, nz] = cells;
    let idx = |i: usize, j: usize, k: usize| (k * (ny + 1) + j) * (nx + 1) + i;
    let mut verts = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                verts.push([
                    origin[0] + size[0] * i as f64 / nx as f64,
                    origin[1] + size[1] * j as f64 / ny as f64,
                    origin[2] + size[2] * k as f64 / nz as f64,
                ]);
            }
        }
    }
    // Kuhn subdivision: one tet per permutation of the axes.
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut elems = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                for p in PERMS {
                    let mut c = [i, j, k];
                    let mut tet = [idx(c[0], c[1], c[2]); 4];
                    for (s, &axis) in p.iter().enumerate() {
                        c[axis] += 1;
                        tet[s + 1] = idx(c[0], c[1], c[2]);
                    }
                    elems.push(Element::Tet(tet));
                }
            }
        }
    }
    (verts, elems)
}

/// Regular triangle grid in the x–z plane, rows ordered bottom to top.
pub fn tri_grid(cells: [usize; 2], size: [f64; 2], origin: [f64; 3]) -> (Vec<[f64; 3]>, Vec<Element>) {
    let [nx, nz] = cells;
    let idx = |i: usize, k: usize| k * (nx + 1) + i;
    let mut verts = Vec::new();
    for k in 0..=nz {
        for i in 0..=nx {
            verts.push([
                origin[0] + size[0] * i as f64 / nx as f64,
                origin[1],
                origin[2] + size[1] * k as f64 / nz as f64,
            ]);
        }
    }
    let mut elems = Vec::new();
    for k in 0..nz {
        for i in 0..nx {
            elems.push(Element::Tri([idx(i, k), idx(i + 1, k), idx(i + 1, k + 1)]));
            elems.push(Element::Tri([idx(i, k), idx(i + 1, k + 1), idx(i, k + 1)]));
        }
    }
    (verts, elems)
}

/// Scene with uniform material and lumped masses from `density`.
pub fn elastic_scene(vertices: Vec<[f64; 3]>, elements: Vec<Element>, material: MaterialParams, density: f64) -> Scene {
    let mut s = Scene::particles(vertices, Vec::new(), DEFAULT_DT, DEFAULT_EPS2);
    s.materials = vec![material; elements.len()];
    s.elements = elements;
    s.masses = s.lumped_masses(density).expect("generated mesh is valid");
    s
}

/// Perturbs rest positions by a uniform jitter of `amplitude` (per coordinate).
pub fn jitter(scene: &mut Scene, seed: u64, amplitude: f64) {
    if amplitude == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut scene.vertices {
        for c in v.iter_mut() {
            *c += rng.gen_range(-amplitude..=amplitude);
        }
    }
}

fn pin(scene: &mut Scene, vertices: impl IntoIterator<Item = usize>) {
    for v in vertices {
        scene.bindings.push(BindingSpec { vertex: v, target: scene.vertices[v], compliance: PIN_COMPLIANCE });
    }
}

/// Cantilever bar along x with its x = 0 face pinned; contact-free.
pub fn bar(cells_x: usize, material: MaterialParams) -> Scene {
    let (v, e) = tet_grid([cells_x, 1, 1], [0.2 * cells_x as f64, 0.2, 0.2], [0.0; 3]);
    let mut s = elastic_scene(v, e, material, 1e3);
    let fixed: Vec<usize> = (0..s.n_verts()).filter(|&i| s.vertices[i][0] == 0.0).collect();
    pin(&mut s, fixed);
    s
}

/// Free-floating cube of side 0.2 with n cells per side; contact-free.
pub fn cube(n: usize, material: MaterialParams) -> Scene {
    let (v, e) = tet_grid([n, n, n], [0.2; 3], [0.0; 3]);
    elastic_scene(v, e, material, 1e3)
}

/// Triangle sheet hanging in the x–z plane with its top row pinned.
pub fn hanging_sheet(nx: usize, nz: usize, material: MaterialParams) -> Scene {
    let (v, e) = tri_grid([nx, nz], [0.4, 0.4], [0.0; 3]);
    let mut s = elastic_scene(v, e, material, 1.0);
    let top = (nz * (nx + 1))..((nz + 1) * (nx + 1));
    pin(&mut s, top);
    s
}

/// Single-particle block on the plane z = 0, resting at its contact equilibrium.
pub fn particle_block(mass: f64, mu: f64, eps2: f64) -> Scene {
    let g = crate::scene::DEFAULT_GRAVITY[2].abs();
    let rest_gap = 0.5 * eps2 / (mass * g);
    let mut s = Scene::particles(vec![[0.0, 0.0, rest_gap]], vec![mass], DEFAULT_DT, eps2);
    s.colliders.push(Collider::half_space([0.0, 0.0, 1.0], 0.0, mu));
    s
}

/// Block mass used by the friction-pair scenes; see `friction_block`.
pub const FRICTION_BLOCK_MASS: f64 = 1e3;

/// One block of the friction pair: pushed along +x with `0.1 m g`.
///
/// The smoothed friction row lets a nominally sticking block creep by
/// `ε²/(μλ_n − F)` per step. Since `ε²` carries units of force × length,
/// the creep depends on the block's weight; the heavy default keeps it
/// far below the sliding motion for `2ε² = 1e-6`.
pub fn friction_block(mu: f64, mass: f64) -> Scene {
    let mut s = particle_block(mass, mu, DEFAULT_EPS2);
    let g = s.gravity[2].abs();
    s.fext[0] = 0.1 * mass * g;
    s
}

/// Blocks with μ = 0.101 (holds) and μ = 0.099 (slides) under the same push.
pub fn friction_pair() -> [Scene; 2] {
    [friction_block(0.101, FRICTION_BLOCK_MASS), friction_block(0.099, FRICTION_BLOCK_MASS)]
}

/// Unit-mass block launched along +x on a plane with friction μ.
pub fn sliding_block(mu: f64) -> Scene {
    let mut s = particle_block(1.0, mu, DEFAULT_EPS2);
    s.initial_velocities = Some(vec![[4.0, 0.0, 0.0]]);
    s
}

/// Light block on a plane with a smoothing large enough that the contact
/// plateau of the lifting task has a usable gradient. Contacts stay active
/// at any height so the loss is smooth through separation.
pub fn block_lift() -> Scene {
    let mut s = particle_block(0.01, 0.0, 1e-3);
    s.contact_activation = 1e6;
    s
}

/// Named scenes with a given seed (jitter only affects elastic meshes).
pub fn scene_library(seed: u64) -> Vec<(&'static str, Scene)> {
    let mut out = vec![
        ("bar", bar(3, MaterialParams::arap(1e4))),
        ("bar_neohookean", bar(3, MaterialParams::neohookean(1e5, 0.3))),
        ("cube", cube(1, MaterialParams::neohookean(1e5, 0.3))),
        ("hanging_sheet", hanging_sheet(3, 3, MaterialParams::neohookean(1e3, 0.3))),
    ];
    for (_, s) in &mut out {
        jitter(s, seed, 0.01);
    }
    let [a, b] = friction_pair();
    out.push(("friction_block_hold", a));
    out.push(("friction_block_slide", b));
    out.push(("sliding_block", sliding_block(0.1)));
    out.push(("block_lift", block_lift()));
    out
}

pub fn by_name(name: &str, seed: u64) -> Option<Scene> {
    scene_library(seed).into_iter().find(|(n, _)| *n == name).map(|(_, s)| s)
}
