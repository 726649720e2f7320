use nalgebra::DMatrix;

/// Row-major nested vectors, the JSON layout used for every matrix.
pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(r: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let nr = r.len();
    let nc = r.first().map_or(0, |x| x.len());
    if r.iter().any(|x| x.len() != nc) {
        return None;
    }
    Some(DMatrix::from_fn(nr, nc, |i, j| r[i][j]))
}

pub fn max_eig(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigen().eigenvalues.max()
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigen().eigenvalues.min()
}
