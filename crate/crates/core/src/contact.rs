//! Vertex-versus-collider contact with smoothed Fischer–Burmeister rows.
//!
//! For a contact with normal gap `δ_n` and tangential slip `δ_f` the
//! multipliers satisfy
//!
//! ```text
//! φ(δ_n, λ_n) = 0,   φ(‖δ_f‖, μλ_n − ‖λ_f‖) = 0,   ‖λ_f‖δ_f + ‖δ_f‖λ_f = 0
//! ```
//!
//! with `φ(x, y) = x + y − √(x² + y² + 2ε²)`. On the zero-level set
//! `φ(x, y) = 0 ⇔ xy = ε², x, y > 0`, so the rows are solved in closed form:
//! `λ_n = ε²/δ_n` and `λ_f = −(μλ_n − ε²/‖δ_f‖) δ_f/‖δ_f‖`. When the slip is
//! too small for that to be nonnegative (`μλ_n‖δ_f‖ ≤ ε²`) the friction row
//! has no admissible root and `λ_f` is clamped to zero.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::scene::Scene;

/// Threshold for the contact-frame fallback rotation and for guarding `‖δ_f‖`.
pub const TAU: f64 = 1e-9;

pub fn fb_smooth(x: f64, y: f64, eps2: f64) -> f64 {
    x + y - (x * x + y * y + eps2).sqrt()
}

pub fn fb_grad(x: f64, y: f64, eps2: f64) -> (f64, f64) {
    let r = (x * x + y * y + eps2).sqrt();
    (1.0 - x / r, 1.0 - y / r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrictionRegime {
    /// `μ = 0`.
    Frictionless,
    /// Slip below `ε²/(μλ_n)`: `λ_f = 0`.
    Clamped,
    /// Friction row on its zero-level set.
    Sliding,
}

/// One vertex–collider contact with its frame and converged multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactPoint {
    pub vertex: usize,
    pub collider: usize,
    /// Rows `n, t₁, t₂`; `J_c = frame · S_vertex`.
    pub frame: Matrix3<f64>,
    /// `δ_n = n·x − d_n`.
    pub d_n: f64,
    pub mu: f64,
    pub eps2: f64,
    /// `(δ_n, δ_f)`.
    pub delta: Vector3<f64>,
    /// `(λ_n, λ_f)`, a force; the residual carries it as `h² J_cᵀ λ`.
    pub lambda: Vector3<f64>,
    pub regime: FrictionRegime,
}

/// Per-contact Jacobian data.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactBlock {
    /// Inner matrix `K̃` in the rotated frame.
    pub kc_local: Matrix3<f64>,
    /// `K_c = Rᵀ K̃ R`, so `∂λ/∂δ = −K_c`.
    pub kc: Matrix3<f64>,
    pub k_mu: Vector3<f64>,
    pub r: Matrix3<f64>,
}

/// Orthonormal tangents by Gram–Schmidt against the axis least aligned with n.
pub fn tangent_frame(n: [f64; 3]) -> Matrix3<f64> {
    let nv = Vector3::from(n);
    let axis = (0..3).min_by(|&a, &b| nv[a].abs().total_cmp(&nv[b].abs())).unwrap();
    let mut e = Vector3::zeros();
    e[axis] = 1.0;
    let t1 = (e - nv * nv.dot(&e)).normalize();
    let t2 = nv.cross(&t1);
    Matrix3::from_rows(&[nv.transpose(), t1.transpose(), t2.transpose()])
}

/// Closed-form multipliers on the smoothed zero-level sets; requires `δ_n > 0`.
pub fn solve_multipliers(delta: &Vector3<f64>, mu: f64, eps2: f64) -> (Vector3<f64>, FrictionRegime) {
    let e2 = 0.5 * eps2;
    let lam_n = e2 / delta[0];
    if mu == 0.0 {
        return (Vector3::new(lam_n, 0.0, 0.0), FrictionRegime::Frictionless);
    }
    let df = Vector2::new(delta[1], delta[2]);
    let r = df.norm();
    if mu * lam_n * r <= e2 {
        return (Vector3::new(lam_n, 0.0, 0.0), FrictionRegime::Clamped);
    }
    let s = mu * lam_n - e2 / r;
    let lf = -df * (s / r);
    (Vector3::new(lam_n, lf[0], lf[1]), FrictionRegime::Sliding)
}

impl ContactPoint {
    fn x_of(&self, q: &[f64]) -> Vector3<f64> {
        let v = self.vertex;
        Vector3::new(q[3 * v], q[3 * v + 1], q[3 * v + 2])
    }

    /// `(δ_n, δ_f)` at positions q with previous positions q̄.
    pub fn displacement(&self, q: &[f64], q_bar: &[f64]) -> Vector3<f64> {
        let x = self.x_of(q);
        let dx = x - self.x_of(q_bar);
        let fx = self.frame * x;
        let fdx = self.frame * dx;
        Vector3::new(fx[0] - self.d_n, fdx[1], fdx[2])
    }

    /// `J_c x` restricted to this contact's vertex.
    pub fn j_apply(&self, x: &[f64]) -> Vector3<f64> {
        self.frame * self.x_of(x)
    }

    /// Residual rows `[φ_n, φ_f, ‖λ_f‖δ_f + ‖δ_f‖λ_f]` using the stored λ.
    pub fn residual(&self, q: &[f64], q_bar: &[f64]) -> [f64; 4] {
        let d = self.displacement(q, q_bar);
        let l = self.lambda;
        let df = Vector2::new(d[1], d[2]);
        let lf = Vector2::new(l[1], l[2]);
        let align = df * lf.norm() + lf * df.norm();
        [
            fb_smooth(d[0], l[0], self.eps2),
            fb_smooth(df.norm(), self.mu * l[0] - lf.norm(), self.eps2),
            align[0],
            align[1],
        ]
    }

    /// Jacobian block of this contact with the rotation built from its state.
    pub fn block(&self) -> ContactBlock {
        let r = build_r([self.delta[1], self.delta[2]], [self.lambda[1], self.lambda[2]], TAU);
        contact_block(self, &r)
    }
}

/// Rotation that maps `δ_c` to `(δ_n, ‖δ_f‖, 0)` and `λ_c` to `(λ_n, −‖λ_f‖, 0)`.
pub fn build_r(delta_f: [f64; 2], lambda_f: [f64; 2], tau: f64) -> Matrix3<f64> {
    let rd = (delta_f[0].powi(2) + delta_f[1].powi(2)).sqrt();
    if rd > tau {
        let (c, s) = (delta_f[0] / rd, delta_f[1] / rd);
        return Matrix3::new(1.0, 0.0, 0.0, 0.0, c, s, 0.0, -s, c);
    }
    let rl = (lambda_f[0].powi(2) + lambda_f[1].powi(2)).sqrt();
    if rl > tau {
        let (c, s) = (lambda_f[0] / rl, lambda_f[1] / rl);
        return Matrix3::new(1.0, 0.0, 0.0, 0.0, -c, -s, 0.0, s, -c);
    }
    Matrix3::identity()
}

/// `K̃ = [[λ_n/δ_n, 0, 0], [−μλ_n/δ_n, (μλ_n − ‖λ_f‖)/‖δ_f‖, 0], [0, 0, ‖λ_f‖/‖δ_f‖]]`
/// and `k_μ = Rᵀ(0, λ_n, 0)` on the sliding branch; the friction rows vanish
/// when friction is absent or clamped. `‖δ_f‖` is guarded below by τ.
pub fn contact_block(cp: &ContactPoint, r: &Matrix3<f64>) -> ContactBlock {
    let (ln, dn) = (cp.lambda[0], cp.delta[0]);
    let mut k = Matrix3::zeros();
    k[(0, 0)] = ln / dn;
    let mut k_mu = Vector3::zeros();
    if cp.regime == FrictionRegime::Sliding {
        let df = Vector2::new(cp.delta[1], cp.delta[2]).norm().max(TAU);
        let lf = Vector2::new(cp.lambda[1], cp.lambda[2]).norm();
        k[(1, 0)] = -cp.mu * ln / dn;
        k[(1, 1)] = (cp.mu * ln - lf) / df;
        k[(2, 2)] = lf / df;
        k_mu = r.transpose() * Vector3::new(0.0, ln, 0.0);
    }
    ContactBlock { kc_local: k, kc: r.transpose() * k * r, k_mu, r: *r }
}

/// Contacts of every vertex within the activation distance of a collider,
/// sorted by (vertex, collider), with multipliers solved at q. Multipliers
/// are left at zero for non-positive gaps; callers keep iterates feasible.
pub fn detect_contacts(scene: &Scene, q: &[f64], q_bar: &[f64]) -> Vec<ContactPoint> {
    let mut out = Vec::new();
    for v in 0..scene.n_verts() {
        let x = [q[3 * v], q[3 * v + 1], q[3 * v + 2]];
        for (ci, col) in scene.colliders.iter().enumerate() {
            let (gap, n) = col.gap_and_normal(x);
            if gap >= scene.contact_activation {
                continue;
            }
            let frame = tangent_frame(n);
            let nx = n[0] * x[0] + n[1] * x[1] + n[2] * x[2];
            let mut cp = ContactPoint {
                vertex: v,
                collider: ci,
                frame,
                d_n: nx - gap,
                mu: col.mu,
                eps2: scene.eps2,
                delta: Vector3::zeros(),
                lambda: Vector3::zeros(),
                regime: FrictionRegime::Frictionless,
            };
            cp.delta = cp.displacement(q, q_bar);
            if cp.delta[0] > 0.0 {
                let (lambda, regime) = solve_multipliers(&cp.delta, cp.mu, cp.eps2);
                cp.lambda = lambda;
                cp.regime = regime;
            }
            out.push(cp);
        }
    }
    out
}

/// Smallest signed gap over all vertex–collider pairs (∞ without colliders).
pub fn min_gap(scene: &Scene, q: &[f64]) -> f64 {
    let mut g = f64::INFINITY;
    for v in 0..scene.n_verts() {
        let x = [q[3 * v], q[3 * v + 1], q[3 * v + 2]];
        for col in &scene.colliders {
            g = g.min(col.gap_and_normal(x).0);
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Collider;

    #[test]
    fn fb_examples() {
        assert!((fb_smooth(0.0, 0.0, 1e-6) + 1e-3).abs() < 1e-15);
        assert!(fb_smooth(1.0, 1.0, 2.0).abs() < 1e-15);
        assert!((fb_smooth(3.0, 4.0, 0.0) - 2.0).abs() < 1e-15);
        assert_eq!(fb_grad(0.0, 0.0, 1e-3), (1.0, 1.0));
        let (a, b) = fb_grad(1.0, 1.0, 2.0);
        assert!((a - 0.5).abs() < 1e-15 && (b - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fb_grad_matches_fd() {
        for &(x, y, e) in &[(0.3, -0.2, 1e-2), (2.0, 0.5, 1.0), (-1.0, 0.1, 1e-4)] {
            let (gx, gy) = fb_grad(x, y, e);
            let h = 1e-7;
            let fx = (fb_smooth(x + h, y, e) - fb_smooth(x - h, y, e)) / (2.0 * h);
            let fy = (fb_smooth(x, y + h, e) - fb_smooth(x, y - h, e)) / (2.0 * h);
            assert!((gx - fx).abs() < 1e-6 && (gy - fy).abs() < 1e-6);
        }
    }

    #[test]
    fn build_r_examples() {
        assert_eq!(build_r([1.0, 0.0], [0.0, 0.0], TAU), Matrix3::identity());
        assert_eq!(build_r([0.0, 1.0], [0.0, 0.0], TAU), Matrix3::new(1., 0., 0., 0., 0., 1., 0., -1., 0.));
        assert_eq!(build_r([0.0, 0.0], [0.0, 0.0], TAU), Matrix3::identity());
    }

    #[test]
    fn frictionless_block_is_normal_diagonal() {
        let cp = ContactPoint {
            vertex: 0,
            collider: 0,
            frame: Matrix3::identity(),
            d_n: 0.0,
            mu: 0.0,
            eps2: 2.0,
            delta: Vector3::new(0.5, 0.0, 0.0),
            lambda: Vector3::new(2.0, 0.0, 0.0),
            regime: FrictionRegime::Frictionless,
        };
        let b = cp.block();
        assert_eq!(b.r * b.kc * b.r.transpose(), Matrix3::from_diagonal(&Vector3::new(4.0, 0.0, 0.0)));
        assert_eq!(b.k_mu, Vector3::zeros());
    }

    #[test]
    fn sliding_block_arithmetic() {
        let cp = ContactPoint {
            vertex: 0,
            collider: 0,
            frame: Matrix3::identity(),
            d_n: 0.0,
            mu: 0.5,
            eps2: 2.0,
            delta: Vector3::new(1.0, 0.2, 0.0),
            lambda: Vector3::new(1.0, -0.3, 0.0),
            regime: FrictionRegime::Sliding,
        };
        let b = contact_block(&cp, &Matrix3::identity());
        let expect = Matrix3::new(1.0, 0.0, 0.0, -0.5, 1.0, 0.0, 0.0, 0.0, 1.5);
        assert!((b.kc_local - expect).amax() < 1e-15);
        assert_eq!(b.k_mu, Vector3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn closed_form_lies_on_zero_level_sets() {
        let eps2 = 1e-4;
        for &(dn, d1, d2, mu) in &[(0.01, 0.3, -0.1, 0.4), (1e-3, 1e-2, 0.0, 1.0), (0.1, -0.05, 0.2, 0.0)] {
            let delta = Vector3::new(dn, d1, d2);
            let (l, regime) = solve_multipliers(&delta, mu, eps2);
            assert!((dn * l[0] - 0.5 * eps2).abs() < 1e-15);
            let cp = ContactPoint {
                vertex: 0,
                collider: 0,
                frame: Matrix3::identity(),
                d_n: 0.0,
                mu,
                eps2,
                delta,
                lambda: l,
                regime,
            };
            let q = [dn, d1, d2];
            let res = cp.residual(&q, &[0.0, 0.0, 0.0]);
            assert!(res[0].abs() < 1e-14);
            assert!(res[2].abs() < 1e-14 && res[3].abs() < 1e-14);
            if regime == FrictionRegime::Sliding {
                assert!(res[1].abs() < 1e-13);
            }
        }
    }

    #[test]
    fn r_is_orthogonal_and_aligns() {
        let r = build_r([0.3, -0.4], [0.0, 0.0], TAU);
        assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-15);
        let d = r * Vector3::new(2.0, 0.3, -0.4);
        assert!((d - Vector3::new(2.0, 0.5, 0.0)).amax() < 1e-15);
        let r = build_r([0.0, 0.0], [0.6, 0.8], TAU);
        let l = r * Vector3::new(1.0, 0.6, 0.8);
        assert!((l - Vector3::new(1.0, -1.0, 0.0)).amax() < 1e-15);
    }

    #[test]
    fn detection_examples() {
        let mut s = Scene::particles(vec![[0.0, 0.0, 0.5], [1.0, 0.0, 0.0]], vec![1.0, 1.0], 0.01, 1e-6);
        s.colliders = vec![Collider::half_space([0.0, 0.0, 1.0], 0.0, 0.2)];
        s.contact_activation = 0.1;
        let mut q = s.rest_positions();
        q[5] = 1e-4;
        let cs = detect_contacts(&s, &q, &q);
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].vertex, 1);
        assert!((cs[0].delta[0] - 1e-4).abs() < 1e-18);
        q[5] = 0.0;
        let cs = detect_contacts(&s, &q, &q);
        assert_eq!(cs[0].delta[0], 0.0);

        let sph = Collider::sphere([0.0, 0.0, 0.0], 1.0, 0.0);
        let (g, n) = sph.gap_and_normal([0.0, 0.0, 0.9]);
        assert!(g < 0.0 && n == [0.0, 0.0, 1.0]);
    }
}
