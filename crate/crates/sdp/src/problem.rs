use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::SdpError;

/// One negative-semidefinite constraint `F0 + sum_i x_i F_i <= 0`.
///
/// Only the variables that actually appear in the block are listed in
/// `coeffs`; every matrix is `size x size` and symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub size: usize,
    pub constant: DMatrix<f64>,
    pub coeffs: Vec<(usize, DMatrix<f64>)>,
}

impl Block {
    /// Evaluates `F(x)` for this block.
    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut f = self.constant.clone();
        for (idx, fi) in &self.coeffs {
            f += fi * x[*idx];
        }
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Scalar,
    /// Symmetric `n x n` matrix stored as its upper triangle, row by row.
    Symmetric(usize),
    /// General `rows x cols` matrix stored row-major.
    Full(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarEntry {
    pub name: String,
    pub kind: VarKind,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiProblem {
    pub n_vars: usize,
    pub objective: DVector<f64>,
    pub blocks: Vec<Block>,
    /// Equality rows `E x = g`; `eq_matrix` has `n_vars` columns.
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub var_map: Vec<VarEntry>,
}

impl LmiProblem {
    /// Checks the structural invariants: symmetric coefficient matrices,
    /// consistent sizes, and a disjoint covering variable map.
    pub fn validate(&self) -> Result<(), SdpError> {
        if self.blocks.is_empty() && self.eq_matrix.nrows() == 0 {
            return Err(SdpError::EmptyProblem);
        }
        if self.objective.len() != self.n_vars {
            return Err(SdpError::DimensionMismatch(format!(
                "objective has {} entries for {} variables",
                self.objective.len(),
                self.n_vars
            )));
        }
        if self.eq_matrix.ncols() != self.n_vars && self.eq_matrix.nrows() > 0 {
            return Err(SdpError::DimensionMismatch(
                "equality matrix column count".into(),
            ));
        }
        if self.eq_matrix.nrows() != self.eq_rhs.len() {
            return Err(SdpError::DimensionMismatch(
                "equality rhs length".into(),
            ));
        }
        for (b, block) in self.blocks.iter().enumerate() {
            if block.size == 0 {
                return Err(SdpError::DimensionMismatch(format!("block {b} is empty")));
            }
            check_sym(&block.constant, block.size, &format!("block {b} constant"))?;
            for (idx, fi) in &block.coeffs {
                if *idx >= self.n_vars {
                    return Err(SdpError::DimensionMismatch(format!(
                        "block {b} references variable {idx}"
                    )));
                }
                check_sym(fi, block.size, &format!("block {b} coefficient of x{idx}"))?;
            }
        }
        let mut covered = 0;
        let mut entries: Vec<&VarEntry> = self.var_map.iter().collect();
        entries.sort_by_key(|e| e.start);
        for e in entries {
            if e.start != covered {
                return Err(SdpError::DimensionMismatch(format!(
                    "variable map gap or overlap at '{}'",
                    e.name
                )));
            }
            covered += e.len;
        }
        if covered != self.n_vars {
            return Err(SdpError::DimensionMismatch(
                "variable map does not cover all variables".into(),
            ));
        }
        Ok(())
    }

    pub fn var(&self, name: &str) -> Option<&VarEntry> {
        self.var_map.iter().find(|e| e.name == name)
    }

    /// Extracts a named variable from a decision vector as a matrix
    /// (a 1x1 matrix for scalars).
    pub fn extract(&self, name: &str, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let e = self.var(name)?;
        let s = &x.as_slice()[e.start..e.start + e.len];
        Some(match e.kind {
            VarKind::Scalar => DMatrix::from_element(1, 1, s[0]),
            VarKind::Symmetric(n) => {
                let mut m = DMatrix::zeros(n, n);
                let mut k = 0;
                for i in 0..n {
                    for j in i..n {
                        m[(i, j)] = s[k];
                        m[(j, i)] = s[k];
                        k += 1;
                    }
                }
                m
            }
            VarKind::Full(r, c) => DMatrix::from_row_slice(r, c, s),
        })
    }

    pub fn extract_scalar(&self, name: &str, x: &DVector<f64>) -> Option<f64> {
        self.extract(name, x).map(|m| m[(0, 0)])
    }

    pub fn to_dump(&self) -> ProblemDump {
        ProblemDump {
            schema_version: 1,
            n_vars: self.n_vars,
            objective: self.objective.iter().copied().collect(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockDump {
                    size: b.size,
                    constant: rows(&b.constant),
                    coeffs: b
                        .coeffs
                        .iter()
                        .map(|(i, m)| CoeffDump { var: *i, matrix: rows(m) })
                        .collect(),
                })
                .collect(),
            eq_matrix: rows(&self.eq_matrix),
            eq_rhs: self.eq_rhs.iter().copied().collect(),
            var_map: self.var_map.clone(),
        }
    }

    /// Writes the problem as JSON (matrices as arrays of rows) so it can be
    /// cross-checked with an external solver.
    pub fn dump_json(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(&self.to_dump())?;
        std::fs::write(path, text)
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn check_sym(m: &DMatrix<f64>, n: usize, what: &str) -> Result<(), SdpError> {
    if m.nrows() != n || m.ncols() != n {
        return Err(SdpError::DimensionMismatch(format!(
            "{what} is {}x{}, expected {n}x{n}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = 1.0 + m.amax();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(SdpError::NotSymmetric(what.to_string()));
            }
        }
    }
    Ok(())
}

/// Serialized form of an [`LmiProblem`].
///
/// `blocks[k]` encodes `constant + sum_i x[coeffs[i].var] * coeffs[i].matrix <= 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemDump {
    pub schema_version: u32,
    pub n_vars: usize,
    pub objective: Vec<f64>,
    pub blocks: Vec<BlockDump>,
    pub eq_matrix: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
    pub var_map: Vec<VarEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockDump {
    pub size: usize,
    pub constant: Vec<Vec<f64>>,
    pub coeffs: Vec<CoeffDump>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoeffDump {
    pub var: usize,
    pub matrix: Vec<Vec<f64>>,
}
