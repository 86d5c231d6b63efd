//! Independent oracles and fixtures shared by the integration tests. Nothing
//! here calls into the code paths it is used to check.

#![allow(dead_code)]

use dgn_spline::{Activation, ActivationKind, GeneratorNetwork, Layer};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn activation(kind: ActivationKind) -> Activation {
    match kind {
        ActivationKind::Relu => Activation::relu(),
        ActivationKind::LeakyRelu => Activation::leaky_relu(0.2).unwrap(),
        ActivationKind::Abs => Activation::abs(),
        ActivationKind::Linear => Activation::linear(),
    }
}

/// Random network with Gaussian weights scaled by `1/sqrt(fan_in)`, small
/// random biases, `kind` on hidden layers and a linear output layer.
pub fn random_net(
    rng: &mut ChaCha8Rng,
    latent: usize,
    widths: &[usize],
    output: usize,
    kind: ActivationKind,
) -> GeneratorNetwork {
    random_net_with_output(rng, latent, widths, output, kind, ActivationKind::Linear)
}

/// As [`random_net`] with a chosen activation on the output layer.
pub fn random_net_with_output(
    rng: &mut ChaCha8Rng,
    latent: usize,
    widths: &[usize],
    output: usize,
    kind: ActivationKind,
    output_kind: ActivationKind,
) -> GeneratorNetwork {
    let mut dims = vec![latent];
    dims.extend_from_slice(widths);
    dims.push(output);
    let last = dims.len() - 2;
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, p)| {
            let w = gaussian_matrix(rng, p[1], p[0]) / (p[0] as f64).sqrt();
            let b = gaussian_vector(rng, p[1]) * 0.1;
            let act = if i == last { activation(output_kind) } else { activation(kind) };
            Layer::new(w, b, act).unwrap()
        })
        .collect();
    GeneratorNetwork::new(layers).unwrap()
}

/// Pre-activations recomputed with explicit loops.
pub fn manual_pre_activations(net: &GeneratorNetwork, z: &DVector<f64>) -> Vec<Vec<f64>> {
    let mut v: Vec<f64> = z.iter().copied().collect();
    let mut out = Vec::new();
    for layer in net.layers() {
        let w = layer.weights();
        let b = layer.bias();
        let mut pre = vec![0.0; w.nrows()];
        for r in 0..w.nrows() {
            let mut acc = b[r];
            for c in 0..w.ncols() {
                acc += w[(r, c)] * v[c];
            }
            pre[r] = acc;
        }
        let act = layer.activation();
        v = pre
            .iter()
            .map(|&p| if act.kind() == ActivationKind::Linear || p > 0.0 { p } else { act.alpha() * p })
            .collect();
        out.push(pre);
    }
    out
}

/// Central-difference Jacobian with step `1e-6 * (1 + |z_i|)`.
pub fn fd_jacobian(net: &GeneratorNetwork, z: &DVector<f64>) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(net.output_dim(), z.len());
    for i in 0..z.len() {
        let h = 1e-6 * (1.0 + z[i].abs());
        let mut up = z.clone();
        let mut down = z.clone();
        up[i] += h;
        down[i] -= h;
        let col = (net.forward(&up).unwrap() - net.forward(&down).unwrap()) / (up[i] - down[i]);
        jac.set_column(i, &col);
    }
    jac
}

/// Rank by Gaussian elimination with partial pivoting; pivots at or below
/// `tol * max|a_ij|` count as zero.
pub fn rank_by_elimination(a: &DMatrix<f64>, tol: f64) -> usize {
    let mut m = a.clone();
    let (rows, cols) = m.shape();
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return 0;
    }
    let mut rank = 0;
    for c in 0..cols {
        if rank == rows {
            break;
        }
        let (piv, val) = (rank..rows)
            .map(|r| (r, m[(r, c)].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if val <= tol * scale {
            continue;
        }
        m.swap_rows(rank, piv);
        for r in rank + 1..rows {
            let f = m[(r, c)] / m[(rank, c)];
            for k in c..cols {
                m[(r, k)] -= f * m[(rank, k)];
            }
        }
        rank += 1;
    }
    rank
}

/// Determinant of a square matrix by LU with partial pivoting.
pub fn determinant(a: &DMatrix<f64>) -> f64 {
    let mut m = a.clone();
    let n = m.nrows();
    let mut det = 1.0;
    for c in 0..n {
        let piv = (c..n).max_by(|&x, &y| m[(x, c)].abs().total_cmp(&m[(y, c)].abs())).unwrap();
        if m[(piv, c)] == 0.0 {
            return 0.0;
        }
        if piv != c {
            m.swap_rows(piv, c);
            det = -det;
        }
        det *= m[(c, c)];
        for r in c + 1..n {
            let f = m[(r, c)] / m[(c, c)];
            for k in c..n {
                m[(r, k)] -= f * m[(c, k)];
            }
        }
    }
    det
}

/// Orthonormal basis by modified Gram-Schmidt (columns assumed independent).
pub fn gram_schmidt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut q = a.clone();
    for j in 0..q.ncols() {
        for _ in 0..2 {
            for k in 0..j {
                let proj = q.column(k).dot(&q.column(j));
                let qk = q.column(k).into_owned();
                q.column_mut(j).axpy(-proj, &qk, 1.0);
            }
        }
        let n = q.column(j).norm();
        q.column_mut(j).scale_mut(1.0 / n);
    }
    q
}

/// Largest principal angle as `arccos` of the smallest singular value of
/// `Q_a^T Q_b`.
pub fn principal_angle_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = gram_schmidt(a);
    let qb = gram_schmidt(b);
    let sv = (qa.transpose() * qb).singular_values();
    let smin = sv.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    smin.clamp(-1.0, 1.0).acos()
}

/// Adaptive Simpson quadrature.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    rec(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, depth)
}

/// Composite Gauss-Legendre (5 nodes) over `pieces` equal panels.
pub fn gauss_legendre(f: &dyn Fn(f64) -> f64, a: f64, b: f64, pieces: usize) -> f64 {
    const X: [f64; 5] = [
        -0.906_179_845_938_664,
        -0.538_469_310_105_683,
        0.0,
        0.538_469_310_105_683,
        0.906_179_845_938_664,
    ];
    const W: [f64; 5] = [
        0.236_926_885_056_189,
        0.478_628_670_499_366,
        0.568_888_888_888_889,
        0.478_628_670_499_366,
        0.236_926_885_056_189,
    ];
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|k| {
            let (lo, hi) = (a + k as f64 * h, a + (k + 1) as f64 * h);
            let (c, r) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            X.iter().zip(W).map(|(x, w)| w * f(c + r * x)).sum::<f64>() * r
        })
        .sum()
}

/// Adaptive Simpson over `panels` equal sub-intervals of `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize, tol: f64) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let lo = a + k as f64 * h;
            adaptive_simpson(f, lo, lo + h, tol / panels as f64, 40)
        })
        .sum()
}

/// Axis-aligned box containing the image of `[-r, r]^S` (edges sampled densely
/// and padded by 5%). Only valid for `S <= 2`.
pub fn output_box(net: &GeneratorNetwork, r: f64) -> Vec<(f64, f64)> {
    let s = net.latent_dim();
    let d = net.output_dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    let n = 2001;
    let grid: Vec<f64> = (0..n).map(|k| -r + 2.0 * r * k as f64 / (n - 1) as f64).collect();
    let mut visit = |z: DVector<f64>| {
        let x = net.forward(&z).unwrap();
        for i in 0..d {
            lo[i] = lo[i].min(x[i]);
            hi[i] = hi[i].max(x[i]);
        }
    };
    if s == 1 {
        for &t in &grid {
            visit(DVector::from_vec(vec![t]));
        }
    } else {
        // a CPA homeomorphism maps the box boundary onto the image boundary
        for &t in &grid {
            for (u, v) in [(t, -r), (t, r), (-r, t), (r, t)] {
                visit(DVector::from_vec(vec![u, v]));
            }
        }
    }
    lo.iter()
        .zip(&hi)
        .map(|(&l, &h)| {
            let pad = 0.05 * (h - l);
            (l - pad, h + pad)
        })
        .collect()
}
