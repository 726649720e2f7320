use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::problem::{Block, LmiProblem, VarEntry, VarKind};
use crate::SdpError;

/// Handle to a symmetric matrix variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymVar {
    pub n: usize,
    pub start: usize,
}

/// Handle to a general matrix variable (row-major storage).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatVar {
    pub rows: usize,
    pub cols: usize,
    pub start: usize,
}

/// Handle to a scalar variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scalar(pub usize);

impl SymVar {
    /// Scalar index of entry `(i, j)`; symmetric in its arguments.
    pub fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        // upper triangle row by row: row i starts after sum_{k<i} (n-k)
        let row_start = i * self.n - i * i.saturating_sub(1) / 2;
        self.start + row_start + (j - i)
    }

    pub fn entry(&self, i: usize, j: usize) -> Scalar {
        Scalar(self.index(i, j))
    }
}

impl MatVar {
    pub fn entry(&self, i: usize, j: usize) -> Scalar {
        Scalar(self.start + i * self.cols + j)
    }
}

/// A matrix whose entries are affine in the decision vector:
/// `constant + sum_k x_k * terms[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub rows: usize,
    pub cols: usize,
    pub constant: DMatrix<f64>,
    pub terms: BTreeMap<usize, DMatrix<f64>>,
}

impl Affine {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            constant: DMatrix::zeros(rows, cols),
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            constant: m,
            terms: BTreeMap::new(),
        }
    }

    pub fn identity(n: usize, scale: f64) -> Self {
        Self::constant(DMatrix::identity(n, n) * scale)
    }

    pub fn sym(v: &SymVar) -> Self {
        let mut a = Self::zeros(v.n, v.n);
        for i in 0..v.n {
            for j in i..v.n {
                let mut m = DMatrix::zeros(v.n, v.n);
                m[(i, j)] = 1.0;
                m[(j, i)] = 1.0;
                a.terms.insert(v.index(i, j), m);
            }
        }
        a
    }

    pub fn mat(v: &MatVar) -> Self {
        let mut a = Self::zeros(v.rows, v.cols);
        for i in 0..v.rows {
            for j in 0..v.cols {
                let mut m = DMatrix::zeros(v.rows, v.cols);
                m[(i, j)] = 1.0;
                a.terms.insert(v.entry(i, j).0, m);
            }
        }
        a
    }

    /// `s * m` for a scalar variable `s` and constant matrix `m`.
    pub fn scaled(s: Scalar, m: DMatrix<f64>) -> Self {
        let mut a = Self::zeros(m.nrows(), m.ncols());
        a.terms.insert(s.0, m);
        a
    }

    /// The 1x1 expression `s`.
    pub fn scalar(s: Scalar) -> Self {
        Self::scaled(s, DMatrix::from_element(1, 1, 1.0))
    }

    fn map(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        let constant = f(&self.constant);
        Self {
            rows: constant.nrows(),
            cols: constant.ncols(),
            constant,
            terms: self.terms.iter().map(|(k, m)| (*k, f(m))).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        self.map(|m| m.transpose())
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|m| m * c)
    }

    /// `m * self`.
    pub fn left_mul(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(m.ncols(), self.rows, "left_mul dimension mismatch");
        self.map(|t| m * t)
    }

    /// `self * m`.
    pub fn right_mul(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(self.cols, m.nrows(), "right_mul dimension mismatch");
        self.map(|t| t * m)
    }

    pub fn add(&self, other: &Affine) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "add dimension mismatch");
        let mut out = self.clone();
        out.constant += &other.constant;
        for (k, m) in &other.terms {
            out.terms
                .entry(*k)
                .and_modify(|t| *t += m)
                .or_insert_with(|| m.clone());
        }
        out
    }

    pub fn sub(&self, other: &Affine) -> Self {
        self.add(&other.scale(-1.0))
    }

    /// Assembles a block matrix from a grid of expressions.
    pub fn blocks(grid: &[Vec<Affine>]) -> Result<Self, SdpError> {
        let row_heights: Vec<usize> = grid.iter().map(|r| r[0].rows).collect();
        let col_widths: Vec<usize> = grid[0].iter().map(|a| a.cols).collect();
        for (bi, row) in grid.iter().enumerate() {
            if row.len() != col_widths.len() {
                return Err(SdpError::DimensionMismatch(format!(
                    "block row {bi} has {} entries",
                    row.len()
                )));
            }
            for (bj, a) in row.iter().enumerate() {
                if a.rows != row_heights[bi] || a.cols != col_widths[bj] {
                    return Err(SdpError::DimensionMismatch(format!(
                        "block ({bi},{bj}) is {}x{}, expected {}x{}",
                        a.rows, a.cols, row_heights[bi], col_widths[bj]
                    )));
                }
            }
        }
        let rows: usize = row_heights.iter().sum();
        let cols: usize = col_widths.iter().sum();
        let mut out = Self::zeros(rows, cols);
        let mut r0 = 0;
        for (bi, row) in grid.iter().enumerate() {
            let mut c0 = 0;
            for (bj, a) in row.iter().enumerate() {
                let (h, w) = (row_heights[bi], col_widths[bj]);
                out.constant.view_mut((r0, c0), (h, w)).copy_from(&a.constant);
                for (k, m) in &a.terms {
                    let t = out
                        .terms
                        .entry(*k)
                        .or_insert_with(|| DMatrix::zeros(rows, cols));
                    t.view_mut((r0, c0), (h, w)).copy_from(m);
                }
                c0 += w;
            }
            r0 += row_heights[bi];
        }
        Ok(out)
    }

    /// Value of the expression at `x`.
    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut v = self.constant.clone();
        for (k, m) in &self.terms {
            v += m * x[*k];
        }
        v
    }
}

/// Incremental construction of an [`LmiProblem`].
#[derive(Debug, Default)]
pub struct LmiBuilder {
    n_vars: usize,
    var_map: Vec<VarEntry>,
    objective: Vec<(usize, f64)>,
    blocks: Vec<Affine>,
    equalities: Vec<Affine>,
    epsilon: f64,
}

impl LmiBuilder {
    /// `epsilon` is the margin used to encode strict definiteness.
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Default::default()
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn alloc(&mut self, name: &str, kind: VarKind, len: usize) -> usize {
        let start = self.n_vars;
        self.var_map.push(VarEntry {
            name: name.to_string(),
            kind,
            start,
            len,
        });
        self.n_vars += len;
        start
    }

    pub fn sym_var(&mut self, name: &str, n: usize) -> SymVar {
        let start = self.alloc(name, VarKind::Symmetric(n), n * (n + 1) / 2);
        SymVar { n, start }
    }

    pub fn mat_var(&mut self, name: &str, rows: usize, cols: usize) -> MatVar {
        let start = self.alloc(name, VarKind::Full(rows, cols), rows * cols);
        MatVar { rows, cols, start }
    }

    pub fn scalar_var(&mut self, name: &str) -> Scalar {
        Scalar(self.alloc(name, VarKind::Scalar, 1))
    }

    /// Adds `coef * s` to the (minimized) objective.
    pub fn add_objective(&mut self, s: Scalar, coef: f64) {
        self.objective.push((s.0, coef));
    }

    /// Requires `expr <= 0`. The expression must be square and symmetric.
    pub fn nsd(&mut self, expr: Affine) -> Result<(), SdpError> {
        if expr.rows != expr.cols || expr.rows == 0 {
            return Err(SdpError::DimensionMismatch(format!(
                "LMI expression is {}x{}",
                expr.rows, expr.cols
            )));
        }
        self.blocks.push(expr);
        Ok(())
    }

    /// Requires `expr >= 0`.
    pub fn psd(&mut self, expr: Affine) -> Result<(), SdpError> {
        self.nsd(expr.scale(-1.0))
    }

    /// Requires `expr > 0`, encoded as `expr >= epsilon I`.
    pub fn pd(&mut self, expr: Affine) -> Result<(), SdpError> {
        let n = expr.rows;
        self.nsd(Affine::identity(n, self.epsilon).sub(&expr))
    }

    /// Requires `s >= lower`.
    pub fn lower_bound(&mut self, s: Scalar, lower: f64) -> Result<(), SdpError> {
        self.nsd(Affine::constant(DMatrix::from_element(1, 1, lower)).sub(&Affine::scalar(s)))
    }

    /// Requires the 1x1 expression to vanish.
    pub fn equal_zero(&mut self, expr: Affine) -> Result<(), SdpError> {
        if expr.rows != 1 || expr.cols != 1 {
            return Err(SdpError::DimensionMismatch(
                "equality constraints must be scalar".into(),
            ));
        }
        self.equalities.push(expr);
        Ok(())
    }

    pub fn build(self) -> Result<LmiProblem, SdpError> {
        if self.blocks.is_empty() && self.equalities.is_empty() {
            return Err(SdpError::EmptyProblem);
        }
        let mut objective = DVector::zeros(self.n_vars);
        for (i, c) in &self.objective {
            objective[*i] += c;
        }
        let blocks = self
            .blocks
            .into_iter()
            .map(|a| Block {
                size: a.rows,
                constant: a.constant,
                coeffs: a
                    .terms
                    .into_iter()
                    .filter(|(_, m)| m.amax() > 0.0)
                    .collect(),
            })
            .collect();
        let m = self.equalities.len();
        let mut eq_matrix = DMatrix::zeros(m, self.n_vars);
        let mut eq_rhs = DVector::zeros(m);
        for (r, e) in self.equalities.iter().enumerate() {
            eq_rhs[r] = -e.constant[(0, 0)];
            for (k, c) in &e.terms {
                eq_matrix[(r, *k)] += c[(0, 0)];
            }
        }
        let p = LmiProblem {
            n_vars: self.n_vars,
            objective,
            blocks,
            eq_matrix,
            eq_rhs,
            var_map: self.var_map,
        };
        p.validate()?;
        Ok(p)
    }
}
