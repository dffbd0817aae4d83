use nalgebra::{DMatrix, DVector, Rotation3, Vector3};

use super::{wasserstein::bures_term, Observation, DEFAULT_DEGENERATE_PENALTY};
use crate::geometry::{Ellipsoid, Gaussian2};
use crate::num::Real;

/// Levenberg-Marquardt settings for ellipsoid refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig<T: Real> {
    pub max_iterations: usize,
    /// Stop once the relative cost decrease of an accepted step falls below this.
    pub tolerance: T,
    pub initial_lambda: T,
    pub lambda_up: T,
    pub lambda_down: T,
    /// Freeze the rotation block (initial reconstruction).
    pub orientation_locked: bool,
    pub degenerate_penalty: T,
    /// Lower bound on each semi-axis relative to the largest one. Keeps an
    /// axis seen only edge-on from collapsing to zero, where the log chart
    /// would make it unrecoverable.
    pub min_axis_ratio: T,
}

impl<T: Real> Default for RefineConfig<T> {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: T::lit(1e-8),
            initial_lambda: T::lit(1e-3),
            lambda_up: T::lit(10.0),
            lambda_down: T::lit(10.0),
            orientation_locked: false,
            degenerate_penalty: T::lit(DEFAULT_DEGENERATE_PENALTY),
            min_axis_ratio: T::lit(0.1),
        }
    }
}

impl<T: Real> RefineConfig<T> {
    pub fn locked() -> Self {
        Self { orientation_locked: true, ..Self::default() }
    }

    fn dof(&self) -> usize {
        if self.orientation_locked {
            6
        } else {
            9
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineStatus {
    Converged,
    MaxIterations,
    /// No step lowered the cost; the input is returned unchanged.
    NoImprovement,
    /// Fewer than two observations.
    UnderConstrained,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome<T: Real> {
    pub ellipsoid: Ellipsoid<T>,
    pub initial_cost: T,
    pub final_cost: T,
    pub iterations: usize,
    pub status: RefineStatus,
}

/// Applies a local increment `[d_center(3), d_log_axes(3), rotation(3)]`.
/// A 6-element increment leaves the orientation untouched.
pub fn retract_ellipsoid<T: Real>(e: &Ellipsoid<T>, delta: &[T]) -> Ellipsoid<T> {
    let center = e.center + Vector3::new(delta[0], delta[1], delta[2]);
    let axes = Vector3::new(e.axes.x * delta[3].exp(), e.axes.y * delta[4].exp(), e.axes.z * delta[5].exp());
    let rotation = if delta.len() >= 9 {
        Rotation3::new(Vector3::new(delta[6], delta[7], delta[8])).into_inner() * e.rotation
    } else {
        e.rotation
    };
    Ellipsoid { center, axes, rotation }
}

fn clamp_axes<T: Real>(mut e: Ellipsoid<T>, ratio: T) -> Ellipsoid<T> {
    let floor = e.max_axis() * ratio;
    e.axes = e.axes.map(|a| a.max(floor));
    e
}

/// Per-observation residuals whose squared norm is the object cost:
/// `sqrt(w) * [dmu_x, dmu_y, sqrt(bures)]` with `w = 1 / score`.
struct Residuals<'a, T: Real> {
    obs: &'a [Observation<T>],
    targets: Vec<(Gaussian2<T>, T)>,
    penalty_root: T,
}

impl<'a, T: Real> Residuals<'a, T> {
    fn new(obs: &'a [Observation<T>], penalty: T) -> Self {
        let targets = obs.iter().map(|o| (o.target_gaussian(), (T::one() / o.detection.score).sqrt())).collect();
        Self { obs, targets, penalty_root: penalty.sqrt() }
    }

    fn len(&self) -> usize {
        3 * self.obs.len()
    }

    fn eval(&self, e: &Ellipsoid<T>) -> DVector<T> {
        let q = e.to_dual_quadric();
        let mut r = DVector::zeros(self.len());
        for (k, (o, (target, w))) in self.obs.iter().zip(&self.targets).enumerate() {
            match q.project(&o.projection).and_then(|c| c.to_gaussian()) {
                Ok(g) => {
                    let d = target.mean - g.mean;
                    r[3 * k] = *w * d.x;
                    r[3 * k + 1] = *w * d.y;
                    r[3 * k + 2] = *w * bures_term(&target.cov, &g.cov).sqrt();
                }
                Err(_) => r[3 * k] = self.penalty_root,
            }
        }
        r
    }

    /// Central-difference Jacobian with respect to the local chart at `e`.
    fn jacobian(&self, e: &Ellipsoid<T>, dof: usize) -> DMatrix<T> {
        let h = T::eps().cbrt();
        let mut j = DMatrix::zeros(self.len(), dof);
        let mut delta = vec![T::zero(); dof];
        for p in 0..dof {
            delta[p] = h;
            let plus = self.eval(&retract_ellipsoid(e, &delta));
            delta[p] = -h;
            let minus = self.eval(&retract_ellipsoid(e, &delta));
            delta[p] = T::zero();
            j.set_column(p, &((plus - minus) / (T::lit(2.0) * h)));
        }
        j
    }
}

/// Gradient of the object cost in the local chart, as assembled by the
/// optimizer (`2 J^T r`).
pub fn cost_gradient<T: Real>(e: &Ellipsoid<T>, obs: &[Observation<T>], cfg: &RefineConfig<T>) -> DVector<T> {
    let res = Residuals::new(obs, cfg.degenerate_penalty);
    let r = res.eval(e);
    let j = res.jacobian(e, cfg.dof());
    j.transpose() * r * T::lit(2.0)
}

/// Damped Gauss-Newton descent on the object cost. The returned cost never
/// exceeds the initial one.
pub fn refine_ellipsoid<T: Real>(e0: &Ellipsoid<T>, obs: &[Observation<T>], cfg: &RefineConfig<T>) -> RefineOutcome<T> {
    let res = Residuals::new(obs, cfg.degenerate_penalty);
    let mut r = res.eval(e0);
    let initial_cost = r.norm_squared();
    if obs.len() < 2 {
        return RefineOutcome {
            ellipsoid: *e0,
            initial_cost,
            final_cost: initial_cost,
            iterations: 0,
            status: RefineStatus::UnderConstrained,
        };
    }

    let dof = cfg.dof();
    let mut current = *e0;
    let mut cost = initial_cost;
    let mut lambda = cfg.initial_lambda;
    let mut accepted_any = false;
    let mut status = RefineStatus::MaxIterations;
    let mut iterations = 0;
    let mut jacobian = None;

    while iterations < cfg.max_iterations {
        if cost == T::zero() {
            status = RefineStatus::Converged;
            break;
        }
        let j = jacobian.get_or_insert_with(|| res.jacobian(&current, dof));
        let jt = j.transpose();
        let h = &jt * &*j;
        let g = &jt * &r;
        iterations += 1;

        let floor = T::lit(1e-9) * h.trace() / T::lit(dof as f64);
        let mut damped = h.clone();
        for d in 0..dof {
            // Marquardt scaling, floored so flat directions stay bounded
            damped[(d, d)] += lambda * (h[(d, d)] + floor);
        }
        let step = damped.cholesky().map(|c| c.solve(&(-&g)));
        let Some(step) = step else {
            lambda *= cfg.lambda_up;
            continue;
        };
        let candidate = clamp_axes(retract_ellipsoid(&current, step.as_slice()), cfg.min_axis_ratio);
        let r_new = res.eval(&candidate);
        let cost_new = r_new.norm_squared();
        if cost_new.is_finite() && cost_new < cost {
            let decrease = (cost - cost_new) / cost;
            current = candidate;
            cost = cost_new;
            r = r_new;
            jacobian = None;
            accepted_any = true;
            lambda = (lambda / cfg.lambda_down).max(T::lit(1e-12));
            if decrease < cfg.tolerance {
                status = RefineStatus::Converged;
                break;
            }
        } else {
            lambda *= cfg.lambda_up;
            if lambda > T::lit(1e12) {
                status = RefineStatus::Converged;
                break;
            }
        }
    }

    if !accepted_any {
        return RefineOutcome {
            ellipsoid: *e0,
            initial_cost,
            final_cost: initial_cost,
            iterations,
            status: if initial_cost == T::zero() { RefineStatus::Converged } else { RefineStatus::NoImprovement },
        };
    }
    RefineOutcome { ellipsoid: current, initial_cost, final_cost: cost, iterations, status }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assoc::Detection;
    use crate::geometry::{CameraIntrinsics, Pose};
    use crate::recon::object_cost;

    fn intrinsics() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    /// Noiseless observations of `truth` from cameras on an arc looking at its center.
    fn orbit_observations(truth: &Ellipsoid<f64>, views: usize, arc_deg: f64) -> Vec<Observation<f64>> {
        (0..views)
            .map(|k| {
                let a = (arc_deg * k as f64 / (views - 1) as f64).to_radians();
                let eye = truth.center + Vector3::new(2.5 * a.cos(), 2.5 * a.sin(), 0.8);
                let pose = Pose::look_at(&eye, &truth.center, &Vector3::z());
                let ell = truth.to_dual_quadric().project(&pose.projection(&intrinsics())).unwrap().to_ellipse().unwrap();
                Observation::new(k as u64, pose, intrinsics(), Detection { bbox: ell.bbox(), category: 0, score: 0.8 })
            })
            .collect()
    }

    #[test]
    fn ground_truth_is_a_fixed_point() {
        let truth = Ellipsoid::sphere(Vector3::new(0.1, -0.2, 0.3), 0.25).unwrap();
        let obs = orbit_observations(&truth, 10, 60.0);
        let out = refine_ellipsoid(&truth, &obs, &RefineConfig::default());
        assert!(out.final_cost <= out.initial_cost);
        assert!((out.ellipsoid.center - truth.center).norm() < 1e-9);
        assert!((out.ellipsoid.axes - truth.axes).norm() < 1e-9);
    }

    #[test]
    fn recovers_radius_from_perturbed_sphere() {
        let truth = Ellipsoid::sphere(Vector3::new(0.0, 0.0, 0.2), 0.3).unwrap();
        let obs = orbit_observations(&truth, 20, 60.0);
        let init = Ellipsoid::sphere(truth.center + Vector3::new(0.02, -0.01, 0.0), 0.33).unwrap();
        let out = refine_ellipsoid(&init, &obs, &RefineConfig::default());
        assert!(out.final_cost < out.initial_cost);
        let mut axes: Vec<f64> = out.ellipsoid.axes.iter().copied().collect();
        axes.sort_by(f64::total_cmp);
        for a in axes {
            assert!((a - 0.3).abs() / 0.3 < 0.02, "axis {a}");
        }
    }

    #[test]
    fn single_view_is_under_constrained() {
        let truth = Ellipsoid::sphere(Vector3::zeros(), 0.3).unwrap();
        let obs = orbit_observations(&truth, 2, 30.0);
        let init = Ellipsoid::sphere(Vector3::zeros(), 0.4).unwrap();
        let out = refine_ellipsoid(&init, &obs[..1], &RefineConfig::default());
        assert_eq!(out.status, RefineStatus::UnderConstrained);
        assert_eq!(out.ellipsoid, init);
    }

    #[test]
    fn locked_refinement_keeps_orientation() {
        let truth = Ellipsoid::sphere(Vector3::zeros(), 0.3).unwrap();
        let obs = orbit_observations(&truth, 8, 40.0);
        let r = Rotation3::new(Vector3::new(0.1, 0.2, 0.3)).into_inner();
        let init = Ellipsoid::new(Vector3::new(0.01, 0.0, 0.0), Vector3::new(0.35, 0.3, 0.28), r).unwrap();
        let out = refine_ellipsoid(&init, &obs, &RefineConfig::locked());
        assert_eq!(out.ellipsoid.rotation, r);
        assert!(out.final_cost < out.initial_cost);
        assert!((object_cost(&out.ellipsoid, &obs).total - out.final_cost).abs() < 1e-9 * out.initial_cost.max(1.0));
    }
}
