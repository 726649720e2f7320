//! Sampled Lipschitz constants over an operating box.
//!
//! The estimate is the largest spectral norm of the state Jacobian found by
//! Latin-hypercube sampling followed by projected gradient ascent from the
//! best samples.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::models::OperatingBox;

/// Samples are drawn in blocks of this size so that a larger budget with the
/// same seed always contains the smaller one.
pub const BLOCK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Grid,
    Multistart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    /// Inflated estimate used for design.
    pub gamma: f64,
    /// Largest Jacobian norm actually found.
    pub raw: f64,
    pub arg_x: Vec<f64>,
    pub arg_u: Vec<f64>,
    pub n_samples: usize,
    pub method: Method,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzOptions {
    pub budget: usize,
    pub seed: u64,
    /// Refinement starts per sample block.
    pub refine_top: usize,
    pub inflation: f64,
}

impl Default for LipschitzOptions {
    fn default() -> Self {
        Self { budget: 10_000, seed: 0, refine_top: 10, inflation: 1.05 }
    }
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// `gamma_l = gamma_h + ||C||_2`.
pub fn compose_gamma_l(gamma_h: f64, c: &DMatrix<f64>) -> f64 {
    gamma_h + spectral_norm(c)
}

struct Scaled<'a> {
    lo: Vec<f64>,
    width: Vec<f64>,
    nx: usize,
    bx: &'a OperatingBox,
}

impl Scaled<'_> {
    fn point(&self, z: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let v: Vec<f64> = z.iter().enumerate().map(|(i, s)| self.lo[i] + s * self.width[i]).collect();
        (
            DVector::from_column_slice(&v[..self.nx]),
            DVector::from_column_slice(&v[self.nx..]),
        )
    }
}

fn latin_block(dim: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dim]; n];
    for d in 0..dim {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        for (i, p) in perm.into_iter().enumerate() {
            pts[i][d] = (p as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

fn ascend<J>(jac: &J, sc: &Scaled, start: &[f64], g0: f64) -> (Vec<f64>, f64)
where
    J: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64>,
{
    let value = |z: &[f64]| {
        let (x, u) = sc.point(z);
        spectral_norm(&jac(&x, &u))
    };
    let mut z = start.to_vec();
    let mut g = g0;
    let mut step = 0.05;
    let fd = 1e-6;
    for _ in 0..200 {
        let mut grad = vec![0.0; z.len()];
        for i in 0..z.len() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] = (z[i] + fd).min(1.0);
            zm[i] = (z[i] - fd).max(0.0);
            let span = zp[i] - zm[i];
            if span > 0.0 {
                grad[i] = (value(&zp) - value(&zm)) / span;
            }
        }
        let gn = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn < 1e-12 {
            break;
        }
        loop {
            let cand: Vec<f64> = z
                .iter()
                .zip(&grad)
                .map(|(zi, gi)| (zi + step * gi / gn).clamp(0.0, 1.0))
                .collect();
            let gc = value(&cand);
            if gc > g {
                z = cand;
                g = gc;
                step *= 1.5;
                break;
            }
            step *= 0.5;
            if step < 1e-10 {
                break;
            }
        }
        if step < 1e-10 {
            break;
        }
    }
    (z, g)
}

/// Estimates `max ||d map / dx||_2` over the box. `jac(x, u)` returns the
/// state Jacobian of the map.
pub fn estimate_gamma<J>(jac: J, bx: &OperatingBox, opts: &LipschitzOptions) -> LipschitzEstimate
where
    J: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Sync,
{
    let nx = bx.x_min.len();
    let mut lo = bx.x_min.clone();
    lo.extend(&bx.u_min);
    let mut width: Vec<f64> = bx.x_max.iter().zip(&bx.x_min).map(|(a, b)| a - b).collect();
    width.extend(bx.u_max.iter().zip(&bx.u_min).map(|(a, b)| a - b));
    let sc = Scaled { lo, width, nx, bx };
    let dim = sc.lo.len();
    let blocks = opts.budget.max(1).div_ceil(BLOCK);

    let best: Vec<(f64, Vec<f64>)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(b as u64);
            let pts = latin_block(dim, BLOCK, &mut rng);
            let mut scored: Vec<(f64, Vec<f64>)> = pts
                .into_iter()
                .map(|z| {
                    let (x, u) = sc.point(&z);
                    (spectral_norm(&jac(&x, &u)), z)
                })
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0));
            let mut top = scored[0].clone();
            for (g, z) in scored.iter().take(opts.refine_top) {
                let (zr, gr) = ascend(&jac, &sc, z, *g);
                if gr > top.0 {
                    top = (gr, zr);
                }
            }
            top
        })
        .collect();

    let (raw, z) = best
        .into_iter()
        .fold((f64::NEG_INFINITY, Vec::new()), |acc, v| if v.0 > acc.0 { v } else { acc });
    let (x, u) = sc.point(&z);
    debug_assert!(sc.bx.contains_x(&x));
    LipschitzEstimate {
        gamma: raw * opts.inflation,
        raw,
        arg_x: x.iter().copied().collect(),
        arg_u: u.iter().copied().collect(),
        n_samples: blocks * BLOCK,
        method: Method::Multistart,
    }
}
