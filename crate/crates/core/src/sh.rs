//! Real spherical harmonics up to degree 3, using the constants and sign
//! convention common to Gaussian splatting renderers.

use nalgebra::Vector3;

pub const MAX_DEGREE: usize = 3;

pub const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of coefficients per channel for a given degree.
pub const fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Inverse of [`coeff_count`]; `None` when `n` is not a perfect square of a
/// supported degree.
pub fn degree_for_count(n: usize) -> Option<usize> {
    (0..=MAX_DEGREE).find(|&d| coeff_count(d) == n)
}

/// Evaluates the basis functions at a unit direction. Entries past
/// `coeff_count(degree)` are left at zero.
pub fn basis(dir: &Vector3<f64>, degree: usize) -> [f64; 16] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = [0.0; 16];
    b[0] = C0;
    if degree >= 1 {
        b[1] = -C1 * y;
        b[2] = C1 * z;
        b[3] = -C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = C2[0] * x * y;
        b[5] = C2[1] * y * z;
        b[6] = C2[2] * (2.0 * zz - xx - yy);
        b[7] = C2[3] * x * z;
        b[8] = C2[4] * (xx - yy);
        if degree >= 3 {
            b[9] = C3[0] * y * (3.0 * xx - yy);
            b[10] = C3[1] * x * y * z;
            b[11] = C3[2] * y * (4.0 * zz - xx - yy);
            b[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            b[13] = C3[4] * x * (4.0 * zz - xx - yy);
            b[14] = C3[5] * z * (xx - yy);
            b[15] = C3[6] * x * (xx - 3.0 * yy);
        }
    }
    b
}

/// Partial derivatives of each basis polynomial with respect to the
/// direction components, treating (x, y, z) as free variables.
pub fn basis_grad(dir: &Vector3<f64>, degree: usize) -> [[f64; 3]; 16] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut g = [[0.0; 3]; 16];
    if degree >= 1 {
        g[1] = [0.0, -C1, 0.0];
        g[2] = [0.0, 0.0, C1];
        g[3] = [-C1, 0.0, 0.0];
    }
    if degree >= 2 {
        g[4] = [C2[0] * y, C2[0] * x, 0.0];
        g[5] = [0.0, C2[1] * z, C2[1] * y];
        g[6] = [-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z];
        g[7] = [C2[3] * z, 0.0, C2[3] * x];
        g[8] = [2.0 * C2[4] * x, -2.0 * C2[4] * y, 0.0];
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        g[9] = [C3[0] * 6.0 * x * y, C3[0] * 3.0 * (xx - yy), 0.0];
        g[10] = [C3[1] * y * z, C3[1] * x * z, C3[1] * x * y];
        g[11] = [
            C3[2] * -2.0 * x * y,
            C3[2] * (4.0 * zz - xx - 3.0 * yy),
            C3[2] * 8.0 * y * z,
        ];
        g[12] = [
            C3[3] * -6.0 * x * z,
            C3[3] * -6.0 * y * z,
            C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
        ];
        g[13] = [
            C3[4] * (4.0 * zz - 3.0 * xx - yy),
            C3[4] * -2.0 * x * y,
            C3[4] * 8.0 * x * z,
        ];
        g[14] = [C3[5] * 2.0 * x * z, C3[5] * -2.0 * y * z, C3[5] * (xx - yy)];
        g[15] = [C3[6] * 3.0 * (xx - yy), C3[6] * -6.0 * x * y, 0.0];
    }
    g
}

fn unit_or_axis(dir: &Vector3<f64>) -> Vector3<f64> {
    let n = dir.norm();
    if n > 0.0 && n.is_finite() {
        dir / n
    } else {
        Vector3::z()
    }
}

/// Unclamped `Σ c_lm Y_lm(dir) + 0.5` per channel.
pub fn eval_sh_raw(coeffs: &[[f64; 3]], dir: &Vector3<f64>, degree: usize) -> [f64; 3] {
    let degree = degree.min(degree_for_count(coeffs.len()).unwrap_or(0));
    let b = basis(&unit_or_axis(dir), degree);
    let mut rgb = [0.5; 3];
    for (k, c) in coeffs.iter().take(coeff_count(degree)).enumerate() {
        for ch in 0..3 {
            rgb[ch] += b[k] * c[ch];
        }
    }
    rgb
}

/// View-dependent base color: SH expansion plus 0.5, clamped below at 0.
/// Non-unit directions are normalized.
pub fn eval_sh_color(coeffs: &[[f64; 3]], dir: &Vector3<f64>, degree: usize) -> [f64; 3] {
    eval_sh_raw(coeffs, dir, degree).map(|v| v.max(0.0))
}

/// Adjoint of [`eval_sh_color`] at a unit direction. Accumulates into
/// `d_coeffs` and returns the gradient with respect to the direction
/// components.
pub fn eval_sh_color_backward(
    coeffs: &[[f64; 3]],
    dir: &Vector3<f64>,
    degree: usize,
    d_rgb: [f64; 3],
    d_coeffs: &mut [[f64; 3]],
) -> Vector3<f64> {
    let raw = eval_sh_raw(coeffs, dir, degree);
    let mut d = d_rgb;
    for ch in 0..3 {
        if raw[ch] < 0.0 {
            d[ch] = 0.0;
        }
    }
    let b = basis(dir, degree);
    let g = basis_grad(dir, degree);
    let mut d_dir = Vector3::zeros();
    for k in 0..coeff_count(degree).min(coeffs.len()) {
        let mut s = 0.0;
        for ch in 0..3 {
            d_coeffs[k][ch] += d[ch] * b[k];
            s += d[ch] * coeffs[k][ch];
        }
        d_dir += Vector3::new(g[k][0], g[k][1], g[k][2]) * s;
    }
    d_dir
}
