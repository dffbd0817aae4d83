//! Minimal pose from three bearing/point pairs.
//!
//! With depths `s_i` along unit bearings, the law of cosines gives three
//! quadratic constraints. Writing `u = s2/s1`, `v = s3/s1` and eliminating
//! `u` leaves a quartic in `v`; each positive real root yields depths,
//! which are polished by Gauss-Newton before the rigid transform is
//! recovered from the two point triplets.

use nalgebra::{Complex, DMatrix, Matrix3, Vector3};

use super::RelocError;
use crate::geometry::{orthonormalize, Pose};
use crate::num::Real;

type Poly<T> = Vec<T>;

fn poly_mul<T: Real>(a: &[T], b: &[T]) -> Poly<T> {
    let mut out = vec![T::zero(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += *x * *y;
        }
    }
    out
}

fn poly_add<T: Real>(a: &[T], b: &[T]) -> Poly<T> {
    let mut out = vec![T::zero(); a.len().max(b.len())];
    for (i, x) in a.iter().enumerate() {
        out[i] += *x;
    }
    for (i, y) in b.iter().enumerate() {
        out[i] += *y;
    }
    out
}

fn poly_scale<T: Real>(a: &[T], k: T) -> Poly<T> {
    a.iter().map(|x| *x * k).collect()
}

fn poly_eval<T: Real>(a: &[T], x: T) -> T {
    a.iter().rev().fold(T::zero(), |acc, c| acc * x + *c)
}

fn poly_derivative<T: Real>(a: &[T]) -> Poly<T> {
    a.iter().enumerate().skip(1).map(|(i, c)| *c * T::lit(i as f64)).collect()
}

/// Real roots via companion-matrix eigenvalues, polished by Newton steps.
fn real_roots<T: Real>(coeffs: &[T]) -> Vec<T> {
    let scale = coeffs.iter().fold(T::zero(), |m, c| m.max(c.abs()));
    if scale == T::zero() {
        return Vec::new();
    }
    let mut c: Vec<T> = coeffs.iter().map(|x| *x / scale).collect();
    while c.len() > 1 && c.last().is_some_and(|x| x.abs() <= T::lit(1e-14)) {
        c.pop();
    }
    let degree = c.len() - 1;
    if degree == 0 {
        return Vec::new();
    }
    let lead = c[degree];
    let mut companion = DMatrix::zeros(degree, degree);
    for k in 0..degree {
        companion[(0, k)] = -c[degree - 1 - k] / lead;
    }
    for k in 1..degree {
        companion[(k, k - 1)] = T::one();
    }
    let eig: Vec<Complex<T>> = companion.complex_eigenvalues().iter().copied().collect();
    let d = poly_derivative(&c);
    let mut roots = Vec::new();
    for z in eig {
        if z.im.abs() > T::lit(1e-4) * (T::one() + z.re.abs()) {
            continue;
        }
        let mut x = z.re;
        for _ in 0..8 {
            let f = poly_eval(&c, x);
            let df = poly_eval(&d, x);
            if df == T::zero() {
                break;
            }
            let step = f / df;
            x -= step;
            if step.abs() <= T::eps() * (T::one() + x.abs()) {
                break;
            }
        }
        roots.push(x);
    }
    roots
}

/// Gauss-Newton on the three squared-distance constraints.
fn polish_depths<T: Real>(s: Vector3<T>, y: &[Vector3<T>; 3], dist2: &[T; 3]) -> Vector3<T> {
    // pairs (0,1)->dist2[0], (0,2)->dist2[1], (1,2)->dist2[2]
    let pairs = [(0usize, 1usize), (0, 2), (1, 2)];
    let mut s = s;
    for _ in 0..5 {
        let mut f = Vector3::zeros();
        let mut j = Matrix3::zeros();
        for (k, &(a, b)) in pairs.iter().enumerate() {
            let cab = y[a].dot(&y[b]);
            f[k] = s[a] * s[a] + s[b] * s[b] - T::lit(2.0) * s[a] * s[b] * cab - dist2[k];
            j[(k, a)] = T::lit(2.0) * (s[a] - s[b] * cab);
            j[(k, b)] = T::lit(2.0) * (s[b] - s[a] * cab);
        }
        match j.lu().solve(&f) {
            Some(step) => {
                s -= step;
                if step.norm() <= T::eps() * s.norm() {
                    break;
                }
            }
            None => break,
        }
    }
    s
}

/// Rigid transform mapping `world[i]` onto `cam[i]`.
fn absolute_orientation<T: Real>(world: &[Vector3<T>; 3], cam: &[Vector3<T>; 3]) -> Pose<T> {
    let three = T::lit(3.0);
    let wc = (world[0] + world[1] + world[2]) / three;
    let cc = (cam[0] + cam[1] + cam[2]) / three;
    let mut h = Matrix3::zeros();
    for i in 0..3 {
        h += (cam[i] - cc) * (world[i] - wc).transpose();
    }
    let r = orthonormalize(&h);
    Pose::new(r, cc - r * wc)
}

fn angular_error<T: Real>(pose: &Pose<T>, x: &Vector3<T>, y: &Vector3<T>) -> Option<T> {
    let p = pose.transform(x);
    if p.z <= T::zero() {
        return None;
    }
    let p = p.normalize();
    Some(p.cross(y).norm().atan2(p.dot(y)))
}

/// Acceptance bound on the reprojection angle of emitted poses.
pub fn reprojection_tolerance<T: Real>() -> T {
    T::lit(1e-7).max(T::eps().sqrt())
}

/// Up to four poses `x_cam = R x_world + t` consistent with the three
/// bearing/point pairs. Bearings are normalized internally.
pub fn p3p<T: Real>(bearings: &[Vector3<T>; 3], world: &[Vector3<T>; 3]) -> Result<Vec<Pose<T>>, RelocError> {
    let y = [bearings[0].normalize(), bearings[1].normalize(), bearings[2].normalize()];
    let sides = [(world[1] - world[2]).norm(), (world[0] - world[2]).norm(), (world[0] - world[1]).norm()];
    let longest = sides.iter().fold(T::zero(), |m, s| m.max(*s));
    let area2 = (world[1] - world[0]).cross(&(world[2] - world[0])).norm();
    if !(longest > T::zero()) || area2 / longest < T::lit(1e-9) * longest {
        return Err(RelocError::DegenerateConfiguration);
    }

    let a2 = (world[1] - world[2]).norm_squared();
    let b2 = (world[0] - world[2]).norm_squared();
    let c2 = (world[0] - world[1]).norm_squared();
    let (ca, cb, cg) = (y[1].dot(&y[2]), y[0].dot(&y[2]), y[0].dot(&y[1]));
    let two = T::lit(2.0);

    // Q1(u; v): (c2 - a2) u^2 + (2 a2 cg - 2 c2 ca v) u + (c2 v^2 - a2)
    // Q2(u; v): b2 u^2 - 2 b2 cg u + (b2 - c2 - c2 v^2 + 2 c2 cb v)
    let a1 = c2 - a2;
    let b1: Poly<T> = vec![two * a2 * cg, -two * c2 * ca];
    let c1: Poly<T> = vec![-a2, T::zero(), c2];
    let a2q = b2;
    let b2q = -two * b2 * cg;
    let c2q: Poly<T> = vec![b2 - c2, two * c2 * cb, -c2];

    // u = -n / l after eliminating u^2
    let l = poly_add(&poly_scale(&b1, a2q), &[-a1 * b2q]);
    let n = poly_add(&poly_scale(&c1, a2q), &poly_scale(&c2q, -a1));
    let quartic = poly_add(
        &poly_add(&poly_scale(&poly_mul(&n, &n), a2q), &poly_scale(&poly_mul(&n, &l), -b2q)),
        &poly_mul(&c2q, &poly_mul(&l, &l)),
    );

    let dist2 = [c2, b2, a2];
    let tol = reprojection_tolerance::<T>();
    let mut poses: Vec<Pose<T>> = Vec::new();
    for v in real_roots(&quartic) {
        if v <= T::zero() {
            continue;
        }
        let lv = poly_eval(&l, v);
        let c2v = poly_eval(&c2q, v);
        let scale_n = poly_eval(&n, v).abs().max(T::one());
        let us: Vec<T> = if lv.abs() > T::lit(1e-10) * scale_n {
            vec![-poly_eval(&n, v) / lv]
        } else {
            // elimination is singular here; fall back to Q2 alone
            let disc = b2q * b2q - T::lit(4.0) * a2q * c2v;
            if disc < T::zero() {
                continue;
            }
            let r = disc.sqrt();
            vec![(-b2q + r) / (two * a2q), (-b2q - r) / (two * a2q)]
        };
        for u in us {
            if u <= T::zero() {
                continue;
            }
            let denom = T::one() + v * v - two * v * cb;
            if denom <= T::zero() {
                continue;
            }
            let s1 = (b2 / denom).sqrt();
            let s = polish_depths(Vector3::new(s1, u * s1, v * s1), &y, &dist2);
            if s.iter().any(|d| !(*d > T::zero())) {
                continue;
            }
            let cam = [y[0] * s[0], y[1] * s[1], y[2] * s[2]];
            let pose = absolute_orientation(world, &cam);
            let ok = (0..3).all(|i| angular_error(&pose, &world[i], &y[i]).is_some_and(|e| e <= tol));
            let duplicate = poses.iter().any(|p| {
                (p.rotation - pose.rotation).amax() < T::lit(1e-9) && (p.translation - pose.translation).amax() < T::lit(1e-9) * (T::one() + pose.translation.norm())
            });
            if ok && !duplicate {
                poses.push(pose);
            }
        }
    }
    Ok(poses)
}
