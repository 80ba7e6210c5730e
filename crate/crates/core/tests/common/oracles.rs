//! Independent reference implementations used only by tests.
//!
//! Nothing here calls into the quaternion kinematics under test: forward
//! kinematics goes through 4×4 homogeneous matrices, Jacobians through
//! central differences, CRC through the bitwise shift register, and box QPs
//! through exhaustive active-set enumeration.

#![allow(dead_code)]

use rand::Rng;
use telearm_core::kinematics::DHChain;
use telearm_core::qp::QpProblem;
use telearm_core::Mat;

pub type M4 = [[f64; 4]; 4];

fn m4_mul(a: &M4, b: &M4) -> M4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

/// Standard DH link transform RotZ(θ)·TransZ(d)·TransX(a)·RotX(α).
pub fn dh_matrix(theta: f64, d: f64, a: f64, alpha: f64) -> M4 {
    let (st, ct) = theta.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    [[ct, -st * ca, st * sa, a * ct], [st, ct * ca, -ct * sa, a * st], [0.0, sa, ca, d], [0.0, 0.0, 0.0, 1.0]]
}

pub fn fk_matrix(chain: &DHChain, q: &[f64]) -> M4 {
    let mut t = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
    for (row, qi) in chain.rows().iter().zip(q) {
        t = m4_mul(&t, &dh_matrix(qi + row.theta_off, row.d, row.a, row.alpha));
    }
    t
}

/// Rotation matrix to `[w, x, y, z]`, branching on the largest diagonal
/// combination for accuracy.
pub fn rotation_to_quaternion(m: &M4) -> [f64; 4] {
    let tr = m[0][0] + m[1][1] + m[2][2];
    let candidates = [tr, m[0][0], m[1][1], m[2][2]];
    let (k, _) = candidates
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
    match k {
        0 => {
            let s = 2.0 * (1.0 + tr).sqrt();
            [0.25 * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s]
        }
        1 => {
            let s = 2.0 * (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt();
            [(m[2][1] - m[1][2]) / s, 0.25 * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s]
        }
        2 => {
            let s = 2.0 * (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt();
            [(m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, 0.25 * s, (m[1][2] + m[2][1]) / s]
        }
        _ => {
            let s = 2.0 * (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt();
            [(m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, 0.25 * s]
        }
    }
}

/// Componentwise distance between two quaternions, minimized over sign.
pub fn quaternion_distance_up_to_sign(a: [f64; 4], b: [f64; 4]) -> f64 {
    let plus = (0..4).map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max);
    let minus = (0..4).map(|i| (a[i] + b[i]).abs()).fold(0.0, f64::max);
    plus.min(minus)
}

/// Central-difference Jacobian of `f: ℝⁿ → ℝ⁴`.
pub fn central_difference<F>(q: &[f64], h: f64, f: F) -> Mat
where
    F: Fn(&[f64]) -> [f64; 4],
{
    let n = q.len();
    let mut j = Mat::zeros(4, n);
    for c in 0..n {
        let mut qp = q.to_vec();
        let mut qm = q.to_vec();
        qp[c] += h;
        qm[c] -= h;
        let (fp, fm) = (f(&qp), f(&qm));
        for r in 0..4 {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    j
}

/// `max|A − B| / max(max|B|, floor)`.
pub fn relative_error(a: &Mat, b: &Mat, floor: f64) -> f64 {
    a.max_abs_diff(b) / b.max_abs().max(floor)
}

/// CRC-8, polynomial 0x07, init 0, processed one bit at a time.
pub fn crc8_bitwise(data: &[u8]) -> u8 {
    let mut crc = 0u8;
    for &byte in data {
        for bit in (0..8).rev() {
            let input = (byte >> bit) & 1;
            let top = crc >> 7;
            crc <<= 1;
            if top ^ input == 1 {
                crc ^= 0x07;
            }
        }
    }
    crc
}

pub fn uniform_q<R: Rng>(rng: &mut R, chain: &DHChain) -> Vec<f64> {
    (0..chain.dof()).map(|i| rng.random_range(chain.q_min()[i]..=chain.q_max()[i])).collect()
}

/// Random strictly convex QP with a known strictly feasible interior point.
pub struct RandomQp {
    pub problem: QpProblem,
    pub interior: Vec<f64>,
}

pub fn random_qp<R: Rng>(rng: &mut R, n: usize, m: usize) -> RandomQp {
    // H = AᵀA + δI, conditioned well enough for 1e-8 KKT residuals.
    let a = Mat::from_vec(n, n, (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let mut h = a.tr_matmul(&a).unwrap();
    for i in 0..n {
        h[(i, i)] += rng.random_range(0.1..1.0);
    }
    let f: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let w_mat = Mat::from_vec(m, n, (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let interior: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let wx = w_mat.mul_vec(&interior);
    let w: Vec<f64> = wx.iter().map(|v| v + rng.random_range(0.05..1.0)).collect();
    RandomQp { problem: QpProblem::new(h, f, w_mat, w), interior }
}

/// A random feasible point: a uniform draw around `center`, pulled back along
/// the segment toward `interior` when it leaves the feasible set.
pub fn random_feasible_point<R: Rng>(
    rng: &mut R,
    p: &QpProblem,
    interior: &[f64],
    center: &[f64],
    radius: f64,
) -> Vec<f64> {
    let y: Vec<f64> = center.iter().map(|c| c + rng.random_range(-radius..=radius)).collect();
    let wy = p.constraint_matrix.mul_vec(&y);
    let wi = p.constraint_matrix.mul_vec(interior);
    let mut t = 1.0f64;
    for k in 0..wy.len() {
        let (a, b) = (wi[k], wy[k]);
        if b > p.constraint_bound[k] {
            t = t.min((p.constraint_bound[k] - a) / (b - a));
        }
    }
    interior.iter().zip(&y).map(|(i, y)| i + t * (y - i)).collect()
}

/// Minimizer of ½xᵀHx + fᵀx over `lo ⪯ x ⪯ hi` by enumerating every
/// assignment of each coordinate to {free, lower, upper}; the optimum is the
/// best feasible stationary point. Exponential, so only for small n.
pub fn box_qp_enumerate(h: &Mat, f: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let mut state = vec![0u8; n];
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let mut x = vec![0.0; n];
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 0).collect();
        for i in 0..n {
            match state[i] {
                1 => x[i] = lo[i],
                2 => x[i] = hi[i],
                _ => {}
            }
        }
        if !free.is_empty() {
            // H_ff x_f = −(f_f + H_fb x_b)
            let k = free.len();
            let mut hff = Mat::zeros(k, k);
            let mut rhs = vec![0.0; k];
            for (a, &i) in free.iter().enumerate() {
                rhs[a] = -f[i];
                for j in 0..n {
                    if state[j] != 0 {
                        rhs[a] -= h[(i, j)] * x[j];
                    }
                }
                for (b, &j) in free.iter().enumerate() {
                    hff[(a, b)] = h[(i, j)];
                }
            }
            let xf = hff.solve(&rhs).expect("principal submatrix of an SPD matrix");
            for (a, &i) in free.iter().enumerate() {
                x[i] = xf[a];
            }
        }
        if (0..n).any(|i| x[i] < lo[i] - 1e-12 || x[i] > hi[i] + 1e-12) {
            continue;
        }
        let hx = h.mul_vec(&x);
        let obj: f64 =
            0.5 * x.iter().zip(&hx).map(|(a, b)| a * b).sum::<f64>() + x.iter().zip(f).map(|(a, b)| a * b).sum::<f64>();
        if best.as_ref().is_none_or(|(o, _)| obj < *o) {
            best = Some((obj, x));
        }
    }
    best.expect("box is non-empty").1
}
