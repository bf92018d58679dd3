//! `∂vec(P)/∂vec(F)` in the column-stacking convention.
//!
//! With `X = Uᵀ dF V` and `Y = Uᵀ dP V`, the diagonal of `Y` follows
//! `W = ∂θ/∂σ` and each off-diagonal pair satisfies
//! `Y_ij = M_ij X_ij + N_ij X_ji`. Hence
//! `dP/dF = (V⊗U)[D W Dᵀ + Diag(vec M) + Diag(vec N) T](Vᵀ⊗Uᵀ)`.

use nalgebra::{DMatrix, DVector};

use super::projection::Projection;
use super::svd::SvdTriple;
use super::TAU_SIGMA;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjJacobian {
    /// (3·dim) × (3·dim).
    pub dp_df: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub n: DMatrix<f64>,
}

/// `D x = vec(Diag(x))`, shape d² × d.
pub fn d_matrix(d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d * d, d);
    for i in 0..d {
        m[(i * d + i, i)] = 1.0;
    }
    m
}

/// `T vec(X) = vec(Xᵀ)`, shape d² × d².
pub fn t_matrix(d: usize) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(d * d, d * d);
    for r in 0..d {
        for c in 0..d {
            t[(r * d + c, c * d + r)] = 1.0;
        }
    }
    t
}

/// Off-diagonal coefficients. The split
/// `½[(θᵢ−θⱼ)/(σᵢ−σⱼ) ± (θᵢ+θⱼ)/(σᵢ+σⱼ)]` equals
/// `M = (σᵢθᵢ−σⱼθⱼ)/(σᵢ²−σⱼ²)`, `N = (σⱼθᵢ−σᵢθⱼ)/(σᵢ²−σⱼ²)`; near a repeated
/// singular value the first quotient is replaced by its limit `Wᵢᵢ − Wᵢⱼ`.
fn mn_coefficients(svd: &SvdTriple, proj: &Projection) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = svd.dim();
    let (s, t, w) = (&svd.sigma, &proj.theta, &proj.w);
    let tau = TAU_SIGMA * s.max();
    let mut m = DMatrix::zeros(d, d);
    let mut n = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            let first = if (s[i] - s[j]).abs() > tau {
                (t[i] - t[j]) / (s[i] - s[j])
            } else {
                0.5 * (w[(i, i)] - w[(i, j)] + w[(j, j)] - w[(j, i)])
            };
            let second = (t[i] + t[j]) / (s[i] + s[j]);
            m[(i, j)] = 0.5 * (first + second);
            n[(i, j)] = 0.5 * (first - second);
        }
    }
    (m, n)
}

fn core(w: &DMatrix<f64>, m: &DMatrix<f64>, n: &DMatrix<f64>) -> DMatrix<f64> {
    let d = w.nrows();
    let dm = d_matrix(d);
    let vec_m = DMatrix::from_diagonal(&DVector::from_column_slice(m.as_slice()));
    let vec_n = DMatrix::from_diagonal(&DVector::from_column_slice(n.as_slice()));
    &dm * w * dm.transpose() + vec_m + vec_n * t_matrix(d)
}

pub fn proj_jacobian(svd: &SvdTriple, proj: &Projection) -> ProjJacobian {
    let d = svd.dim();
    let (m, n) = mn_coefficients(svd, proj);
    let inner = core(&proj.w, &m, &n);
    let dp_df = if d == 3 {
        let k = svd.v.kronecker(&svd.u);
        &k * inner * k.transpose()
    } else {
        // Thin 2D case: embed the in-plane core into the 3 × 2 layout and add
        // the out-of-plane rows, where Y₂ⱼ = (θⱼ/σⱼ) X₂ⱼ.
        let mut c6 = DMatrix::zeros(6, 6);
        for a in 0..4 {
            for b in 0..4 {
                c6[((a / 2) * 3 + a % 2, (b / 2) * 3 + b % 2)] = inner[(a, b)];
            }
        }
        for c in 0..2 {
            c6[(c * 3 + 2, c * 3 + 2)] = proj.theta[c] / svd.sigma[c];
        }
        let k = svd.v.kronecker(&svd.u_full());
        &k * c6 * k.transpose()
    };
    ProjJacobian { dp_df, m, n }
}

#[cfg(test)]
mod tests {
    use super::super::{project_arap, project_neohookean, svd_polar};
    use super::*;

    #[test]
    fn d_and_t_examples() {
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let vd = d_matrix(3) * &x;
        assert_eq!(vd.as_slice(), DMatrix::from_diagonal(&x).as_slice());
        let a = DMatrix::from_fn(3, 3, |i, j| (3 * i + j) as f64);
        let ta = t_matrix(3) * DVector::from_column_slice(a.as_slice());
        assert_eq!(ta.as_slice(), a.transpose().as_slice());
    }

    #[test]
    fn arap_coefficients() {
        let svd = svd_polar(&DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 0.5]))).unwrap();
        let j = proj_jacobian(&svd, &project_arap(&svd));
        assert!((j.m[(0, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert!((j.n[(0, 1)] + 1.0 / 3.0).abs() < 1e-15);
        assert!((&j.dp_df - j.dp_df.transpose()).amax() < 1e-14);

        let id = svd_polar(&DMatrix::identity(3, 3)).unwrap();
        let j = proj_jacobian(&id, &project_arap(&id));
        assert!((j.m[(0, 2)] - 0.5).abs() < 1e-15 && (j.n[(0, 2)] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn neohookean_rest_coefficient() {
        let id = svd_polar(&DMatrix::identity(3, 3)).unwrap();
        let p = project_neohookean(&id, 1.0, 1.0, 2.0).unwrap();
        let j = proj_jacobian(&id, &p);
        assert!((j.m[(1, 2)] - 0.75).abs() < 1e-14);
    }
}
