//! Loss surfaces on a random two-dimensional slice through θ and the
//! anisotropy of their fitted level sets.

use nalgebra::{Matrix2, SMatrix, SVector};
use rayon::prelude::*;
use serde::Serialize;
use villani_core::diagnostics::random_unit_directions;
use villani_core::EnergyOracle;

use crate::error::{CliError, CliResult};

/// Orthonormal pair spanning a random plane.
pub fn plane(dim: usize, seed: u64) -> CliResult<(Vec<f64>, Vec<f64>)> {
    if dim < 2 {
        return Err(CliError::runtime("a two-dimensional slice needs d ≥ 2"));
    }
    let mut dirs = random_unit_directions(dim, 2, seed);
    let v = dirs.pop().expect("two directions");
    let u = dirs.pop().expect("two directions");
    let c: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    let mut w: Vec<f64> = v.iter().zip(&u).map(|(v, u)| v - c * u).collect();
    let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    w.iter_mut().for_each(|x| *x /= n);
    Ok((u, w))
}

/// `values[j][i]` is the energy at `θ + a_i·u + b_j·v`.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceGrid {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

pub fn lattice(grid: usize, extent: f64) -> Vec<f64> {
    (0..grid)
        .map(|i| -extent + 2.0 * extent * i as f64 / (grid - 1) as f64)
        .collect()
}

pub fn evaluate_surface(
    oracle: &(impl EnergyOracle + ?Sized),
    theta: &[f64],
    (u, v): (&[f64], &[f64]),
    grid: usize,
    extent: f64,
) -> CliResult<SurfaceGrid> {
    if grid < 3 {
        return Err(CliError::Usage(format!("subspace grid must be at least 3, got {grid}")));
    }
    let coords = lattice(grid, extent);
    let points: Vec<(usize, usize)> = (0..grid).flat_map(|j| (0..grid).map(move |i| (i, j))).collect();
    let flat = points
        .par_iter()
        .map(|&(i, j)| {
            let p: Vec<f64> = theta
                .iter()
                .zip(u.iter().zip(v))
                .map(|(t, (u, v))| t + coords[i] * u + coords[j] * v)
                .collect();
            oracle.value(&p)
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(SurfaceGrid {
        a: coords.clone(),
        b: coords,
        values: flat.chunks(grid).map(<[f64]>::to_vec).collect(),
    })
}

/// `F ≈ c + gᵀx + ½xᵀHx` on the slice, fitted by least squares.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuadraticFit {
    pub c: f64,
    pub g: [f64; 2],
    pub h: [[f64; 2]; 2],
    pub r_squared: f64,
    /// Eigenvalues of H, descending.
    pub curvatures: [f64; 2],
    /// Ratio of the longest to the shortest level-set axis,
    /// `sqrt(κ_max/κ_min)`; `None` when H is not positive definite.
    pub anisotropy: Option<f64>,
    /// Stationary point `−H⁻¹g`, if H is invertible.
    pub centre: Option<[f64; 2]>,
}

pub fn fit_quadratic(s: &SurfaceGrid) -> CliResult<QuadraticFit> {
    // normalized coordinates keep the normal equations well conditioned
    let scale = s.a.iter().chain(&s.b).fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let mut ata = SMatrix::<f64, 6, 6>::zeros();
    let mut atz = SVector::<f64, 6>::zeros();
    let mut samples = vec![];
    for (j, row) in s.values.iter().enumerate() {
        for (i, &z) in row.iter().enumerate() {
            if !z.is_finite() {
                continue;
            }
            let (x, y) = (s.a[i] / scale, s.b[j] / scale);
            let f = SVector::<f64, 6>::from([1.0, x, y, 0.5 * x * x, x * y, 0.5 * y * y]);
            ata += f * f.transpose();
            atz += f * z;
            samples.push((f, z));
        }
    }
    if samples.len() < 6 {
        return Err(CliError::runtime("quadratic fit needs at least six finite values"));
    }
    let p = ata
        .cholesky()
        .map(|c| c.solve(&atz))
        .ok_or_else(|| CliError::runtime("quadratic fit is singular"))?;
    let mean = samples.iter().map(|s| s.1).sum::<f64>() / samples.len() as f64;
    let (ss_res, ss_tot) = samples.iter().fold((0.0, 0.0), |(r, t), (f, z)| {
        let e = z - f.dot(&p);
        (r + e * e, t + (z - mean) * (z - mean))
    });
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let g = [p[1] / scale, p[2] / scale];
    let s2 = scale * scale;
    let h = [[p[3] / s2, p[4] / s2], [p[4] / s2, p[5] / s2]];
    let hm = Matrix2::new(h[0][0], h[0][1], h[1][0], h[1][1]);
    let eig = hm.symmetric_eigenvalues();
    let (k1, k2) = (eig[0].max(eig[1]), eig[0].min(eig[1]));
    let anisotropy = (k2 > 0.0).then(|| (k1 / k2).sqrt());
    let centre = hm
        .try_inverse()
        .map(|inv| {
            let c = -(inv * nalgebra::Vector2::new(g[0], g[1]));
            [c[0], c[1]]
        });
    Ok(QuadraticFit {
        c: p[0],
        g,
        h,
        r_squared,
        curvatures: [k1, k2],
        anisotropy,
        centre,
    })
}

/// Anisotropy with non-elliptic fits ranked as infinitely anisotropic.
pub fn anisotropy_or_inf(fit: &QuadraticFit) -> f64 {
    fit.anisotropy.unwrap_or(f64::INFINITY)
}
