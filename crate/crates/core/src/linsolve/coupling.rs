//! Low-rank coupling terms `h² Jᵀ K J` from bindings and contacts.
//!
//! Every block acts on a single vertex: `J` is an r × 3 row block (frame rows
//! for contacts, the identity for bindings) and `K` is r × r.

use nalgebra::{DMatrix, DVector};

use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlock {
    pub vertex: usize,
    pub j: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

impl CouplingBlock {
    pub fn rows(&self) -> usize {
        self.j.nrows()
    }

    fn local(&self, x: &[f64]) -> DVector<f64> {
        let v = self.vertex;
        DVector::from_column_slice(&x[3 * v..3 * v + 3])
    }

    /// `Jᵀ K J` as a 3 × 3 vertex block.
    pub fn vertex_block(&self) -> DMatrix<f64> {
        self.j.transpose() * &self.k * &self.j
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CouplingSet {
    pub h: f64,
    pub n: usize,
    pub blocks: Vec<CouplingBlock>,
}

impl CouplingSet {
    pub fn new(h: f64, n: usize) -> Self {
        Self { h, n, blocks: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn total_rows(&self) -> usize {
        self.blocks.iter().map(CouplingBlock::rows).sum()
    }

    fn apply_impl(&self, x: &[f64], transpose: bool) -> Vec<f64> {
        let h2 = self.h * self.h;
        let locals: Vec<DVector<f64>> = par::map(&self.blocks, |b| {
            let jx = &b.j * b.local(x);
            let kjx = if transpose { b.k.tr_mul(&jx) } else { &b.k * jx };
            b.j.tr_mul(&kjx) * h2
        });
        let mut y = vec![0.0; self.n];
        for (b, l) in self.blocks.iter().zip(&locals) {
            for r in 0..3 {
                y[3 * b.vertex + r] += l[r];
            }
        }
        y
    }

    /// `h² Jᵀ(K(J x))` without assembling the product.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.apply_impl(x, false)
    }

    /// `h² Jᵀ(Kᵀ(J x))`.
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        self.apply_impl(x, true)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let h2 = self.h * self.h;
        let mut d = vec![0.0; self.n];
        for b in &self.blocks {
            let vb = b.vertex_block();
            for r in 0..3 {
                d[3 * b.vertex + r] += h2 * vb[(r, r)];
            }
        }
        d
    }

    /// Stacked `J` (m × n).
    pub fn j_dense(&self) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.total_rows(), self.n);
        let mut row = 0;
        for b in &self.blocks {
            for r in 0..b.rows() {
                for c in 0..3 {
                    j[(row + r, 3 * b.vertex + c)] = b.j[(r, c)];
                }
            }
            row += b.rows();
        }
        j
    }

    /// Block-diagonal `K` (m × m).
    pub fn k_dense(&self) -> DMatrix<f64> {
        let m = self.total_rows();
        let mut k = DMatrix::zeros(m, m);
        let mut row = 0;
        for b in &self.blocks {
            k.view_mut((row, row), (b.rows(), b.rows())).copy_from(&b.k);
            row += b.rows();
        }
        k
    }

    /// `h² Jᵀ K J` as a dense n × n matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let j = self.j_dense();
        j.transpose() * self.k_dense() * j * (self.h * self.h)
    }
}

/// `𝒦x = h² Jᵀ(K(J x))`.
pub fn matfree_contact_apply(set: &CouplingSet, x: &[f64]) -> Vec<f64> {
    set.apply(x)
}
