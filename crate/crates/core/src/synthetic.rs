//! Synthetic point-cloud generators used by analysis tests and recipes.
//!
//! These are the reference shapes whose homology is known in closed form:
//! a ring has Betti numbers (1,1,0), a sphere (1,0,1), a torus (1,2,1),
//! and two disjoint rings (2,2,0).

use ndarray::Array2;

use crate::rng::{stream, StreamRng};

/// `n` evenly spaced points on a circle of the given radius, centred at the
/// origin in the xy-plane.
pub fn circle(n: usize, radius: f64) -> Array2<f64> {
    let mut pts = Array2::zeros((n, 2));
    for i in 0..n {
        let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
        pts[(i, 0)] = radius * theta.cos();
        pts[(i, 1)] = radius * theta.sin();
    }
    pts
}

/// Fibonacci lattice on a sphere: `n` near-uniform points at the given
/// radius.
pub fn fibonacci_sphere(n: usize, radius: f64) -> Array2<f64> {
    // Golden angle in radians.
    let ga = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    let mut pts = Array2::zeros((n, 3));
    for i in 0..n {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let r_xy = (1.0 - z * z).sqrt();
        let phi = ga * i as f64;
        pts[(i, 0)] = radius * r_xy * phi.cos();
        pts[(i, 1)] = radius * r_xy * phi.sin();
        pts[(i, 2)] = radius * z;
    }
    pts
}

/// Regular (u,v) grid sample of a torus with major radius `big_r` and minor
/// radius `small_r`; `nu * nv` points.
pub fn torus_grid(nu: usize, nv: usize, big_r: f64, small_r: f64) -> Array2<f64> {
    let mut pts = Array2::zeros((nu * nv, 3));
    for i in 0..nu {
        let u = 2.0 * std::f64::consts::PI * i as f64 / nu as f64;
        for j in 0..nv {
            let v = 2.0 * std::f64::consts::PI * j as f64 / nv as f64;
            let row = i * nv + j;
            let ring = big_r + small_r * v.cos();
            pts[(row, 0)] = ring * u.cos();
            pts[(row, 1)] = ring * u.sin();
            pts[(row, 2)] = small_r * v.sin();
        }
    }
    pts
}

/// Two disjoint circles of the same radius in the xy-plane, centres
/// `separation` apart along x.
pub fn two_rings(n_each: usize, radius: f64, separation: f64) -> Array2<f64> {
    let mut pts = Array2::zeros((2 * n_each, 2));
    let one = circle(n_each, radius);
    for i in 0..n_each {
        pts[(i, 0)] = one[(i, 0)];
        pts[(i, 1)] = one[(i, 1)];
        pts[(n_each + i, 0)] = one[(i, 0)] + separation;
        pts[(n_each + i, 1)] = one[(i, 1)];
    }
    pts
}

/// Seeded isotropic Gaussian cloud, for noise fixtures and oracle tests.
pub fn gaussian_cloud(n: usize, d: usize, scale: f64, seed: u64) -> Array2<f64> {
    let mut rng = StreamRng::new(seed, stream::DATA);
    Array2::from_shape_fn((n, d), |_| scale * rng.normal_f64())
}
