use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x2, Vector3};

use crate::error::{Result, SimError};

/// Singular value decomposition with a rotation-variant sign convention.
///
/// In 3D, `U` and `V` are proper rotations and `σ` is positive and sorted in
/// descending order; inverted deformation gradients are rejected. In 2D
/// (`F` is 3 × 2) the factors are thin: `U` is 3 × 2, `V` a 2 × 2 rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdTriple {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub sigma: DVector<f64>,
}

impl SvdTriple {
    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    /// `U Σ Vᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.sigma) * self.v.transpose()
    }

    /// `U` completed to a 3 × 3 rotation (adds the surface normal in 2D).
    pub fn u_full(&self) -> DMatrix<f64> {
        if self.dim() == 3 {
            return self.u.clone();
        }
        let c0 = Vector3::new(self.u[(0, 0)], self.u[(1, 0)], self.u[(2, 0)]);
        let c1 = Vector3::new(self.u[(0, 1)], self.u[(1, 1)], self.u[(2, 1)]);
        let n = c0.cross(&c1);
        DMatrix::from_fn(3, 3, |i, j| match j {
            0 => c0[i],
            1 => c1[i],
            _ => n[i],
        })
    }
}

pub fn svd_polar(f: &DMatrix<f64>) -> Result<SvdTriple> {
    let dim = f.ncols();
    assert!(f.nrows() == 3 && (dim == 2 || dim == 3), "F must be 3x3 or 3x2");
    if !f.iter().all(|x| x.is_finite()) {
        return Err(SimError::NonFinite("svd_polar"));
    }
    // The dynamic-size SVD loses accuracy near repeated singular values; the
    // fixed-size 3 × 3 path does not.
    let (singular_values, u_raw, vt_raw) = if dim == 3 {
        let svd = Matrix3::from_fn(|i, j| f[(i, j)]).svd(true, true);
        let (u, vt) = (svd.u.expect("U requested"), svd.v_t.expect("V requested"));
        (
            DVector::from_column_slice(svd.singular_values.as_slice()),
            DMatrix::from_column_slice(3, 3, u.as_slice()),
            DMatrix::from_column_slice(3, 3, vt.as_slice()),
        )
    } else {
        let svd = Matrix3x2::from_fn(|i, j| f[(i, j)]).svd(true, true);
        let (u, vt) = (svd.u.expect("U requested"), svd.v_t.expect("V requested"));
        (
            DVector::from_column_slice(svd.singular_values.as_slice()),
            DMatrix::from_column_slice(3, 2, u.as_slice()),
            DMatrix::from_column_slice(2, 2, vt.as_slice()),
        )
    };
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| singular_values[b].total_cmp(&singular_values[a]));

    let mut u = DMatrix::zeros(3, dim);
    let mut v = DMatrix::zeros(dim, dim);
    let mut sigma = DVector::zeros(dim);
    for (k, &o) in order.iter().enumerate() {
        sigma[k] = singular_values[o];
        u.set_column(k, &u_raw.column(o));
        v.set_column(k, &vt_raw.row(o).transpose());
    }
    if !(sigma[dim - 1] > 0.0) {
        return Err(SimError::InvertedElement(usize::MAX));
    }
    if dim == 3 {
        let du = u.determinant();
        let dv = v.determinant();
        if du * dv < 0.0 {
            return Err(SimError::InvertedElement(usize::MAX));
        }
        if du < 0.0 {
            for r in 0..3 {
                u[(r, 2)] = -u[(r, 2)];
                v[(r, 2)] = -v[(r, 2)];
            }
        }
    } else if v.determinant() < 0.0 {
        for r in 0..3 {
            u[(r, 1)] = -u[(r, 1)];
        }
        for r in 0..2 {
            v[(r, 1)] = -v[(r, 1)];
        }
    }
    Ok(SvdTriple { u, v, sigma })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity() {
        let s = svd_polar(&DMatrix::identity(3, 3)).unwrap();
        assert!((s.sigma.clone() - DVector::from_element(3, 1.0)).abs().max() < 1e-15);
        assert!((s.reconstruct() - DMatrix::identity(3, 3)).abs().max() < 1e-15);
    }

    #[test]
    fn diagonal_stays_axis_aligned() {
        let f = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 0.5]));
        let s = svd_polar(&f).unwrap();
        assert_eq!(s.sigma.as_slice(), &[2.0, 1.0, 0.5]);
        assert!((s.u.abs() - DMatrix::identity(3, 3)).abs().max() < 1e-14);
        assert!((s.v.abs() - DMatrix::identity(3, 3)).abs().max() < 1e-14);
        assert!(s.u.determinant() > 0.0 && s.v.determinant() > 0.0);
    }

    #[test]
    fn random_reconstruction_and_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let f = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.0 } + rng.gen_range(-0.5..0.5));
            if f.determinant() <= 0.0 {
                assert!(svd_polar(&f).is_err());
                continue;
            }
            let s = svd_polar(&f).unwrap();
            assert!((s.reconstruct() - &f).abs().max() <= 1e-12 * f.norm());
            assert!((s.u.transpose() * &s.u - DMatrix::identity(3, 3)).abs().max() < 1e-12);
            assert!((s.v.transpose() * &s.v - DMatrix::identity(3, 3)).abs().max() < 1e-12);
            assert!((s.u.determinant() - 1.0).abs() < 1e-12);
            assert!((s.v.determinant() - 1.0).abs() < 1e-12);
            assert!(s.sigma[0] >= s.sigma[1] && s.sigma[1] >= s.sigma[2]);
        }
    }

    #[test]
    fn thin_factors_in_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let f = DMatrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
            let s = svd_polar(&f).unwrap();
            assert_eq!((s.u.nrows(), s.u.ncols(), s.v.nrows()), (3, 2, 2));
            assert!((s.reconstruct() - &f).abs().max() < 1e-12);
            assert!((s.v.determinant() - 1.0).abs() < 1e-12);
            assert!((s.u_full().determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_reflection_and_nan() {
        let f = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, -1.0]));
        assert!(svd_polar(&f).is_err());
        let mut g = DMatrix::identity(3, 3);
        g[(0, 1)] = f64::NAN;
        assert!(svd_polar(&g).is_err());
    }
}
