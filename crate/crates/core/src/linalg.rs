//! Small dense complex linear algebra.
//!
//! The systems handled by this crate are low-dimensional (d <= 8, typically
//! d = 2), so everything here is written for small matrices: a cyclic Jacobi
//! solver for Hermitian matrices, an explicit-shift QR iteration for general
//! complex matrices, and the phase and ordering conventions shared by the
//! spectral tracking code.
//!
//! Conventions:
//! - eigenvector columns are normalised to unit length and the entry of
//!   largest modulus is rotated to be real and positive (ties broken by the
//!   lowest index);
//! - matrix norms are spectral norms unless a function name says otherwise.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{Error, Result};

pub type C = Complex<f64>;
pub type CMat = DMatrix<C>;
pub type CVec = DVector<C>;

pub fn cx(re: f64, im: f64) -> C {
    Complex::new(re, im)
}

/// Frobenius norm.
pub fn fro_norm(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Spectral norm via the Hermitian eigenproblem for `A^H A`.
pub fn spectral_norm(a: &CMat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    // Scale to avoid overflow in the squared matrix.
    let scale = a.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let b = a.map(|z| z / scale);
    let g = b.adjoint() * &b;
    let (vals, _) = hermitian_eigen(&g);
    let max = vals.iter().cloned().fold(0.0f64, f64::max);
    scale * max.max(0.0).sqrt()
}

/// Condition number estimate `sigma_max / sigma_min`.
pub fn cond_spectral(a: &CMat) -> f64 {
    let scale = a.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    if scale == 0.0 {
        return f64::INFINITY;
    }
    let b = a.map(|z| z / scale);
    let g = b.adjoint() * &b;
    let (vals, _) = hermitian_eigen(&g);
    let max = vals.iter().cloned().fold(0.0f64, f64::max);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        (max / min).sqrt()
    }
}

/// Eigendecomposition of a complex Hermitian matrix by cyclic Jacobi
/// rotations. Returns real eigenvalues (unsorted) and the unitary matrix of
/// eigenvectors as columns. The input is not checked for hermiticity; the
/// strictly lower triangle is taken as the conjugate of the upper one.
pub fn hermitian_eigen(a: &CMat) -> (Vec<f64>, CMat) {
    let d = a.nrows();
    let mut m = a.clone();
    // Symmetrise to protect against tiny hermiticity violations.
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)].conj());
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
        m[(i, i)] = cx(m[(i, i)].re, 0.0);
    }
    let mut v = CMat::identity(d, d);
    let norm = fro_norm(&m).max(f64::MIN_POSITIVE);
    let tol = 1e-15 * norm;

    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for i in 0..d {
            for j in (i + 1)..d {
                off += m[(i, j)].norm_sqr();
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let g = m[(p, q)];
                let gn = g.norm();
                if gn <= tol * 1e-2 {
                    continue;
                }
                let phase = g / gn;
                let alpha = m[(p, p)].re;
                let beta = m[(q, q)].re;
                let tau = (beta - alpha) / (2.0 * gn);
                // Smaller-magnitude root of t^2 - 2 tau t - 1 = 0; the G
                // below zeroes the pivot iff (1 - t^2) + 2 tau t = 0.
                let t = if tau >= 0.0 {
                    -1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Unitary G with columns (c, s e^{-i phi})^T and
                // (-s, c e^{-i phi})^T applied as A <- G^H A G, V <- V G.
                let gp = cx(c, 0.0);
                let gq = phase.conj() * s;
                let hp = cx(-s, 0.0);
                let hq = phase.conj() * c;
                for r in 0..d {
                    let mp = m[(r, p)];
                    let mq = m[(r, q)];
                    m[(r, p)] = mp * gp + mq * gq;
                    m[(r, q)] = mp * hp + mq * hq;
                }
                for r in 0..d {
                    let mp = m[(p, r)];
                    let mq = m[(q, r)];
                    m[(p, r)] = mp * gp.conj() + mq * gq.conj();
                    m[(q, r)] = mp * hp.conj() + mq * hq.conj();
                }
                for r in 0..d {
                    let vp = v[(r, p)];
                    let vq = v[(r, q)];
                    v[(r, p)] = vp * gp + vq * gq;
                    v[(r, q)] = vp * hp + vq * hq;
                }
            }
        }
    }
    let vals = (0..d).map(|i| m[(i, i)].re).collect();
    (vals, v)
}

/// Whether `a` is Hermitian up to `tol` relative to its norm.
pub fn is_hermitian(a: &CMat, tol: f64) -> bool {
    let d = a.nrows();
    let scale = fro_norm(a).max(f64::MIN_POSITIVE);
    for i in 0..d {
        for j in i..d {
            if (a[(i, j)] - a[(j, i)].conj()).norm() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Eigendecomposition of a general complex matrix. Returns eigenvalues and
/// the (non-unitary in general) matrix of unit-norm eigenvector columns.
///
/// Hermitian inputs are routed to the Jacobi solver, 1x1 and 2x2 matrices
/// are done in closed form, everything else goes through Hessenberg
/// reduction and explicitly shifted QR with accumulated Schur vectors.
pub fn complex_eigen(a: &CMat) -> Result<(Vec<C>, CMat)> {
    let d = a.nrows();
    assert_eq!(d, a.ncols(), "complex_eigen requires a square matrix");
    match d {
        0 => Ok((Vec::new(), CMat::zeros(0, 0))),
        1 => Ok((vec![a[(0, 0)]], CMat::identity(1, 1))),
        2 => Ok(eigen_2x2(a)),
        _ => {
            if is_hermitian(a, 1e-12) {
                let (vals, v) = hermitian_eigen(a);
                Ok((vals.into_iter().map(|x| cx(x, 0.0)).collect(), v))
            } else {
                eigen_qr(a)
            }
        }
    }
}

fn eigen_2x2(a: &CMat) -> (Vec<C>, CMat) {
    let (a11, a12, a21, a22) = (a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
    let tr = a11 + a22;
    let det = a11 * a22 - a12 * a21;
    let disc = (tr * tr - 4.0 * det).sqrt();
    // Pick the sign that avoids cancellation in tr +/- disc.
    let disc = if (tr + disc).norm() >= (tr - disc).norm() {
        disc
    } else {
        -disc
    };
    let l1 = 0.5 * (tr + disc);
    let l2 = if l1.norm() > 0.0 { det / l1 } else { 0.5 * (tr - disc) };

    let scale = fro_norm(a).max(f64::MIN_POSITIVE);
    let mut v = CMat::identity(2, 2);
    for (k, lam) in [l1, l2].iter().enumerate() {
        // Rows of (A - lam I) are orthogonal complements of the eigenvector;
        // take the candidate of larger norm for stability.
        let c1 = CVec::from_vec(vec![a12, *lam - a11]);
        let c2 = CVec::from_vec(vec![*lam - a22, a21]);
        let (n1, n2) = (c1.norm(), c2.norm());
        let w = if n1 >= n2 { c1 } else { c2 };
        let n = w.norm();
        if n > 1e-300 * scale {
            v.set_column(k, &(w / cx(n, 0.0)));
        } else {
            // Scalar matrix: any basis works.
            let mut e = CVec::zeros(2);
            e[k] = cx(1.0, 0.0);
            v.set_column(k, &e);
        }
    }
    (vec![l1, l2], v)
}

fn householder_hessenberg(a: &CMat) -> (CMat, CMat) {
    let d = a.nrows();
    let mut h = a.clone();
    let mut q = CMat::identity(d, d);
    for k in 0..d.saturating_sub(2) {
        let mut x = CVec::zeros(d - k - 1);
        for i in (k + 1)..d {
            x[i - k - 1] = h[(i, k)];
        }
        let xnorm = x.norm();
        if xnorm < 1e-300 {
            continue;
        }
        let x0 = x[0];
        let phase = if x0.norm() > 0.0 { x0 / x0.norm() } else { cx(1.0, 0.0) };
        let mut v = x.clone();
        v[0] += phase * xnorm;
        let vnorm = v.norm();
        if vnorm < 1e-300 {
            continue;
        }
        let v = v / cx(vnorm, 0.0);
        // H = I - 2 v v^H acting on indices k+1..d.
        let apply_left = |m: &mut CMat, v: &CVec| {
            for col in 0..m.ncols() {
                let mut dot = cx(0.0, 0.0);
                for i in 0..v.len() {
                    dot += v[i].conj() * m[(k + 1 + i, col)];
                }
                for i in 0..v.len() {
                    let upd = 2.0 * v[i] * dot;
                    m[(k + 1 + i, col)] -= upd;
                }
            }
        };
        let apply_right = |m: &mut CMat, v: &CVec| {
            for row in 0..m.nrows() {
                let mut dot = cx(0.0, 0.0);
                for i in 0..v.len() {
                    dot += m[(row, k + 1 + i)] * v[i];
                }
                for i in 0..v.len() {
                    let upd = 2.0 * dot * v[i].conj();
                    m[(row, k + 1 + i)] -= upd;
                }
            }
        };
        apply_left(&mut h, &v);
        apply_right(&mut h, &v);
        apply_right(&mut q, &v);
    }
    // Zero the subdiagonal garbage below the first subdiagonal.
    for j in 0..d {
        for i in (j + 2)..d {
            h[(i, j)] = cx(0.0, 0.0);
        }
    }
    (h, q)
}

fn eigen_qr(a: &CMat) -> Result<(Vec<C>, CMat)> {
    let d = a.nrows();
    let scale = fro_norm(a).max(f64::MIN_POSITIVE);
    let (mut h, mut q) = householder_hessenberg(&(a / cx(scale, 0.0)));

    let eps = 1e-15;
    let mut hi = d; // active block is 0..hi
    let mut iters_since_deflation = 0usize;
    let mut total_iters = 0usize;
    let max_iters = 120 * d;

    while hi > 1 {
        total_iters += 1;
        if total_iters > max_iters {
            return Err(Error::EigenNoConvergence { dim: d });
        }
        // Deflate negligible subdiagonals.
        let mut deflated = false;
        for i in (1..hi).rev() {
            let s = h[(i - 1, i - 1)].norm() + h[(i, i)].norm();
            let s = if s == 0.0 { 1.0 } else { s };
            if h[(i, i - 1)].norm() <= eps * s {
                h[(i, i - 1)] = cx(0.0, 0.0);
                if i == hi - 1 {
                    hi -= 1;
                    deflated = true;
                    iters_since_deflation = 0;
                }
            }
        }
        if deflated || hi <= 1 {
            continue;
        }
        // Active block lower boundary.
        let mut lo = hi - 1;
        while lo > 0 && h[(lo, lo - 1)].norm() != 0.0 {
            lo -= 1;
        }
        iters_since_deflation += 1;

        // Wilkinson shift from the trailing 2x2 of the active block.
        let m = hi - 1;
        let shift = if iters_since_deflation % 12 == 0 {
            // Exceptional shift to break rare cycles.
            h[(m, m)] + cx(1.5 * h[(m, m - 1)].norm(), 0.5 * h[(m, m - 1)].norm())
        } else {
            let a11 = h[(m - 1, m - 1)];
            let a12 = h[(m - 1, m)];
            let a21 = h[(m, m - 1)];
            let a22 = h[(m, m)];
            let tr = a11 + a22;
            let det = a11 * a22 - a12 * a21;
            let disc = (tr * tr - 4.0 * det).sqrt();
            let r1 = 0.5 * (tr + disc);
            let r2 = 0.5 * (tr - disc);
            if (r1 - a22).norm() <= (r2 - a22).norm() {
                r1
            } else {
                r2
            }
        };

        // Explicit QR step on the active block via Givens rotations.
        let mut rots: Vec<(usize, C, C)> = Vec::with_capacity(hi - lo);
        for i in lo..hi {
            h[(i, i)] -= shift;
        }
        for i in lo..(hi - 1) {
            let x = h[(i, i)];
            let y = h[(i + 1, i)];
            let r = (x.norm_sqr() + y.norm_sqr()).sqrt();
            if r < 1e-300 {
                rots.push((i, cx(1.0, 0.0), cx(0.0, 0.0)));
                continue;
            }
            let c = x / r;
            let s = y / r;
            // G rows: [c^H, s^H; -s, c] annihilates y.
            for col in i..d {
                let hi1 = h[(i, col)];
                let hi2 = h[(i + 1, col)];
                h[(i, col)] = c.conj() * hi1 + s.conj() * hi2;
                h[(i + 1, col)] = -s * hi1 + c * hi2;
            }
            rots.push((i, c, s));
        }
        // Multiply by G^H on the right: H <- R G_1^H ... and Q <- Q G^H.
        for &(i, c, s) in &rots {
            for row in 0..=(i + 1).min(hi - 1) {
                let h1 = h[(row, i)];
                let h2 = h[(row, i + 1)];
                h[(row, i)] = h1 * c + h2 * s;
                h[(row, i + 1)] = -h1 * s.conj() + h2 * c.conj();
            }
            for row in 0..d {
                let q1 = q[(row, i)];
                let q2 = q[(row, i + 1)];
                q[(row, i)] = q1 * c + q2 * s;
                q[(row, i + 1)] = -q1 * s.conj() + q2 * c.conj();
            }
        }
        for i in lo..hi {
            h[(i, i)] += shift;
        }
    }

    // h is now upper triangular (Schur form of a/scale).
    let vals: Vec<C> = (0..d).map(|i| h[(i, i)] * scale).collect();

    // Eigenvectors of the triangular factor by back substitution.
    let tnorm = fro_norm(&h).max(f64::MIN_POSITIVE);
    let smin = 1e-14 * tnorm;
    let mut y = CMat::zeros(d, d);
    for k in 0..d {
        let lam = h[(k, k)];
        y[(k, k)] = cx(1.0, 0.0);
        for j in (0..k).rev() {
            let mut acc = cx(0.0, 0.0);
            for i in (j + 1)..=k {
                acc += h[(j, i)] * y[(i, k)];
            }
            let mut denom = h[(j, j)] - lam;
            if denom.norm() < smin {
                denom = cx(smin, 0.0);
            }
            y[(j, k)] = -acc / denom;
        }
        // Rescale to unit norm within the triangular frame to limit growth.
        let n = y.column(k).norm();
        if n > 0.0 {
            for j in 0..=k {
                y[(j, k)] /= cx(n, 0.0);
            }
        }
    }
    let mut v = &q * y;
    for k in 0..d {
        let n = v.column(k).norm();
        if n > 0.0 {
            let col = v.column(k) / cx(n, 0.0);
            v.set_column(k, &col);
        }
    }
    Ok((vals, v))
}

/// Rotate each column so its largest-modulus entry (lowest index on ties)
/// is real and positive.
pub fn fix_phase(v: &mut CMat) {
    for k in 0..v.ncols() {
        let mut best = 0usize;
        let mut best_norm = -1.0f64;
        for i in 0..v.nrows() {
            let n = v[(i, k)].norm();
            if n > best_norm + 1e-18 {
                best_norm = n;
                best = i;
            }
        }
        if best_norm <= 0.0 {
            continue;
        }
        let z = v[(best, k)];
        let phase = z.conj() / z.norm();
        for i in 0..v.nrows() {
            v[(i, k)] *= phase;
        }
        // Kill the residual imaginary dust on the anchor entry.
        v[(best, k)] = cx(v[(best, k)].re, 0.0);
    }
}

fn permutations(d: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        let d = used.len();
        if cur.len() == d {
            out.push(cur.clone());
            return;
        }
        for i in 0..d {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; d], &mut out);
    out
}

/// Permutation `p` minimising `sum_i |new[p[i]] - prev[i]|`, so that
/// `new[p[i]]` continues branch `i`. Exhaustive for d <= 6, greedy with
/// pairwise improvement beyond that.
pub fn match_by_value(prev: &[C], new: &[C]) -> Vec<usize> {
    let d = prev.len();
    assert_eq!(d, new.len());
    if d <= 6 {
        let mut best: Option<(f64, Vec<usize>)> = None;
        for p in permutations(d) {
            let cost: f64 = (0..d).map(|i| (new[p[i]] - prev[i]).norm()).sum();
            if best.as_ref().map_or(true, |(c, _)| cost < *c) {
                best = Some((cost, p));
            }
        }
        best.unwrap().1
    } else {
        greedy_match(d, |i, j| (new[j] - prev[i]).norm())
    }
}

/// Permutation maximising total eigenvector overlap `|v_prev_i^H v_new_j|`.
pub fn match_by_overlap(prev: &CMat, new: &CMat) -> Vec<usize> {
    let d = prev.ncols();
    let mut overlap = vec![vec![0.0f64; d]; d];
    for i in 0..d {
        for j in 0..d {
            let mut dot = cx(0.0, 0.0);
            for r in 0..prev.nrows() {
                dot += prev[(r, i)].conj() * new[(r, j)];
            }
            overlap[i][j] = dot.norm();
        }
    }
    if d <= 6 {
        let mut best: Option<(f64, Vec<usize>)> = None;
        for p in permutations(d) {
            let gain: f64 = (0..d).map(|i| overlap[i][p[i]]).sum();
            if best.as_ref().map_or(true, |(g, _)| gain > *g) {
                best = Some((gain, p));
            }
        }
        best.unwrap().1
    } else {
        greedy_match(d, |i, j| -overlap[i][j])
    }
}

fn greedy_match(d: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut perm = vec![usize::MAX; d];
    let mut taken = vec![false; d];
    for i in 0..d {
        let mut best_j = usize::MAX;
        let mut best_c = f64::INFINITY;
        for j in 0..d {
            if !taken[j] && cost(i, j) < best_c {
                best_c = cost(i, j);
                best_j = j;
            }
        }
        perm[i] = best_j;
        taken[best_j] = true;
    }
    // One pass of pairwise exchange improvement.
    for i in 0..d {
        for k in (i + 1)..d {
            let cur = cost(i, perm[i]) + cost(k, perm[k]);
            let swp = cost(i, perm[k]) + cost(k, perm[i]);
            if swp < cur {
                perm.swap(i, k);
            }
        }
    }
    perm
}

/// Inverse through LU, with the condition estimate in the error path.
pub fn invert(a: &CMat, context: &str) -> Result<CMat> {
    a.clone().try_inverse().ok_or_else(|| Error::IllConditioned {
        context: context.to_string(),
        cond: f64::INFINITY,
    })
}

/// Diagonal matrix from complex entries.
pub fn diag(entries: &[C]) -> CMat {
    let d = entries.len();
    let mut m = CMat::zeros(d, d);
    for i in 0..d {
        m[(i, i)] = entries[i];
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_cmat(d: usize, seed: u64) -> CMat {
        // xorshift; tests need reproducibility, not statistical quality.
        let mut s = seed.wrapping_mul(0x9e3779b97f4a7c15) | 1;
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        CMat::from_fn(d, d, |_, _| cx(next(), next()))
    }

    fn eigen_residual(a: &CMat, vals: &[C], v: &CMat) -> f64 {
        let d = a.nrows();
        let mut worst = 0.0f64;
        for k in 0..d {
            let col = v.column(k).clone_owned();
            let r = a * &col - col * vals[k];
            worst = worst.max(r.norm());
        }
        worst / fro_norm(a).max(1.0)
    }

    #[test]
    fn hermitian_eigen_diagonalises() {
        for seed in 1..8u64 {
            for d in 2..6usize {
                let b = random_cmat(d, seed * 31 + d as u64);
                let a = &b + b.adjoint();
                let (vals, v) = hermitian_eigen(&a);
                // Unitary to machine precision.
                let err = fro_norm(&(v.adjoint() * &v - CMat::identity(d, d)));
                assert!(err < 1e-13, "unitarity {err}");
                let cvals: Vec<C> = vals.iter().map(|x| cx(*x, 0.0)).collect();
                assert!(eigen_residual(&a, &cvals, &v) < 1e-13);
            }
        }
    }

    #[test]
    fn general_eigen_small_and_random() {
        for seed in 1..10u64 {
            for d in 2..7usize {
                let a = random_cmat(d, seed * 97 + d as u64);
                let (vals, v) = complex_eigen(&a).unwrap();
                let res = eigen_residual(&a, &vals, &v);
                assert!(res < 1e-10, "d={d} seed={seed} residual {res}");
            }
        }
    }

    #[test]
    fn eigen_2x2_nearly_defective() {
        // Jordan-like matrix with a small splitting.
        let eps = 1e-8;
        let a = CMat::from_row_slice(2, 2, &[cx(1.0, 0.0), cx(1.0, 0.0), cx(eps, 0.0), cx(1.0, 0.0)]);
        let (vals, v) = complex_eigen(&a).unwrap();
        let res = eigen_residual(&a, &vals, &v);
        assert!(res < 1e-9, "residual {res}");
        let gap = (vals[0] - vals[1]).norm();
        assert!((gap - 2.0 * eps.sqrt()).abs() < 1e-6, "gap {gap}");
    }

    #[test]
    fn klein_gordon_limit_matrix_spectrum() {
        // [[i, 1], [m0^2, 0]] has spectrum i/2 +- sqrt(m0^2 - 1/4).
        for &m0 in &[0.3f64, 1.0, 2.5] {
            let a = CMat::from_row_slice(
                2,
                2,
                &[cx(0.0, 1.0), cx(1.0, 0.0), cx(m0 * m0, 0.0), cx(0.0, 0.0)],
            );
            let (vals, _) = complex_eigen(&a).unwrap();
            let disc = cx(m0 * m0 - 0.25, 0.0).sqrt();
            let expect = [cx(0.0, 0.5) + disc, cx(0.0, 0.5) - disc];
            let perm = match_by_value(&expect, &vals);
            for i in 0..2 {
                assert!((vals[perm[i]] - expect[i]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn phase_fix_makes_anchor_real() {
        let mut v = random_cmat(4, 5);
        for k in 0..4 {
            let n = v.column(k).norm();
            let col = v.column(k) / cx(n, 0.0);
            v.set_column(k, &col);
        }
        fix_phase(&mut v);
        for k in 0..4 {
            let mut best = 0;
            let mut bn = -1.0;
            for i in 0..4 {
                if v[(i, k)].norm() > bn {
                    bn = v[(i, k)].norm();
                    best = i;
                }
            }
            assert!(v[(best, k)].im.abs() < 1e-14);
            assert!(v[(best, k)].re > 0.0);
        }
    }

    #[test]
    fn phase_fix_idempotent() {
        let mut v = random_cmat(3, 9);
        fix_phase(&mut v);
        let w = v.clone();
        fix_phase(&mut v);
        assert!(fro_norm(&(&v - &w)) < 1e-14);
    }

    #[test]
    fn spectral_norm_matches_known() {
        let a = CMat::from_row_slice(2, 2, &[cx(3.0, 0.0), cx(0.0, 0.0), cx(0.0, 0.0), cx(-4.0, 0.0)]);
        assert!((spectral_norm(&a) - 4.0).abs() < 1e-13);
        // Rank-one: norm equals sqrt(sum |entries|^2).
        let b = CMat::from_row_slice(2, 2, &[cx(1.0, 0.0), cx(2.0, 0.0), cx(2.0, 0.0), cx(4.0, 0.0)]);
        assert!((spectral_norm(&b) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn value_matching_tracks_crossing() {
        let prev = vec![cx(-1.0, 0.0), cx(1.0, 0.0)];
        let new = vec![cx(0.9, 0.0), cx(-1.1, 0.0)];
        let p = match_by_value(&prev, &new);
        assert_eq!(p, vec![1, 0]);
    }
}
