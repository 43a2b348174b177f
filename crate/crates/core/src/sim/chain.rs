//! 7-joint revolute chain in standard Denavit–Hartenberg form and
//! damped-least-squares target tracking.

use super::{Result, SimError};
use crate::protocol::{Pose, Timestamp, UnitQuat, Vec3, JOINTS};
use nalgebra::{Matrix3, Matrix4, Matrix6, SMatrix, Vector6};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

pub type Jacobian = SMatrix<f64, 6, JOINTS>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DhLink {
    /// Link length along x (m).
    pub a: f64,
    /// Link offset along z (m).
    pub d: f64,
    /// Link twist about x (rad).
    pub alpha: f64,
    /// Joint range `[lo, hi]` (rad).
    pub limits: [f64; 2],
    /// rad/s
    pub velocity_limit: f64,
}

impl DhLink {
    fn transform(&self, theta: f64) -> Matrix4<f64> {
        let (st, ct) = theta.sin_cos();
        let (sa, ca) = self.alpha.sin_cos();
        Matrix4::new(
            ct, -st * ca, st * sa, self.a * ct,
            st, ct * ca, -ct * sa, self.a * st,
            0.0, sa, ca, self.d,
            0.0, 0.0, 0.0, 1.0,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinematicChain {
    pub links: [DhLink; JOINTS],
    /// Configuration every arm starts in.
    pub ready: [f64; JOINTS],
}

impl Default for KinematicChain {
    /// Seven-joint arm with alternating ±90° twists, 0.34 m base column,
    /// two 0.4 m links and a 0.126 m flange.
    fn default() -> Self {
        let link = |d: f64, alpha: f64, lim: f64, vel: f64| DhLink {
            a: 0.0,
            d,
            alpha,
            limits: [-lim, lim],
            velocity_limit: vel,
        };
        KinematicChain {
            links: [
                link(0.34, -FRAC_PI_2, 2.96, 1.71),
                link(0.0, FRAC_PI_2, 2.09, 1.71),
                link(0.4, FRAC_PI_2, 2.96, 1.75),
                link(0.0, -FRAC_PI_2, 2.09, 2.27),
                link(0.4, -FRAC_PI_2, 2.96, 2.44),
                link(0.0, FRAC_PI_2, 2.09, 3.14),
                link(0.126, 0.0, 3.05, 3.14),
            ],
            ready: [0.0, 0.44, 0.0, -1.45, 0.0, 1.25, 0.0],
        }
    }
}

impl KinematicChain {
    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.links.iter().enumerate() {
            if !(l.limits[0] < l.limits[1]) {
                return Err(SimError::InvalidArgument(format!("joint {i}: lower limit must be below upper")));
            }
            if !(l.velocity_limit > 0.0) {
                return Err(SimError::InvalidArgument(format!("joint {i}: velocity limit must be positive")));
            }
            if ![l.a, l.d, l.alpha].iter().all(|v| v.is_finite()) {
                return Err(SimError::InvalidArgument(format!("joint {i}: non-finite DH parameter")));
            }
        }
        self.check_limits(&self.ready)
    }

    pub fn check_limits(&self, q: &[f64; JOINTS]) -> Result<()> {
        for (i, (v, l)) in q.iter().zip(&self.links).enumerate() {
            if !(*v >= l.limits[0] && *v <= l.limits[1]) {
                return Err(SimError::InvalidArgument(format!(
                    "joint {i} = {v} outside [{}, {}]",
                    l.limits[0], l.limits[1]
                )));
            }
        }
        Ok(())
    }

    pub fn clamp(&self, q: &mut [f64; JOINTS]) {
        for (v, l) in q.iter_mut().zip(&self.links) {
            *v = v.clamp(l.limits[0], l.limits[1]);
        }
    }

    /// Sum of |a| + |d| over all links; bounds how far the flange can move
    /// per radian of any single joint.
    pub fn total_length(&self) -> f64 {
        self.links.iter().map(|l| l.a.abs() + l.d.abs()).sum()
    }

    /// Forward kinematics of the flange. Fails for out-of-limit `q`.
    pub fn fk(&self, q: &[f64; JOINTS]) -> Result<Pose> {
        self.check_limits(q)?;
        Ok(pose_of(&self.flange(q)))
    }

    fn flange(&self, q: &[f64; JOINTS]) -> Matrix4<f64> {
        self.links
            .iter()
            .zip(q)
            .fold(Matrix4::identity(), |t, (l, th)| t * l.transform(*th))
    }

    /// Flange pose and geometric Jacobian (linear rows first, world frame).
    pub fn fk_with_jacobian(&self, q: &[f64; JOINTS]) -> (Pose, Jacobian) {
        let mut frames = [Matrix4::identity(); JOINTS + 1];
        for i in 0..JOINTS {
            frames[i + 1] = frames[i] * self.links[i].transform(q[i]);
        }
        let p_end = frames[JOINTS].fixed_view::<3, 1>(0, 3).into_owned();
        let mut jac = Jacobian::zeros();
        for i in 0..JOINTS {
            let z = frames[i].fixed_view::<3, 1>(0, 2).into_owned();
            let p = frames[i].fixed_view::<3, 1>(0, 3).into_owned();
            let lin = z.cross(&(p_end - p));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
        }
        (pose_of(&frames[JOINTS]), jac)
    }
}

fn pose_of(t: &Matrix4<f64>) -> Pose {
    let r: Matrix3<f64> = t.fixed_view::<3, 3>(0, 0).into_owned();
    let rot = nalgebra::Rotation3::from_matrix_unchecked(r);
    let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
    let orientation =
        UnitQuat::normalized(q.w, q.i, q.j, q.k).expect("rotation matrix yields a finite quaternion");
    Pose::new(Vec3::new(t[(0, 3)], t[(1, 3)], t[(2, 3)]), orientation)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmState {
    pub q: [f64; JOINTS],
    pub t: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IkParams {
    /// Damping λ in `Jᵀ(JJᵀ + λ²I)⁻¹`.
    pub damping: f64,
    /// Weight of the orientation error relative to position (m/rad).
    pub orientation_weight: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        IkParams { damping: 0.05, orientation_weight: 0.3 }
    }
}

/// One damped-least-squares step toward `target`.
///
/// The joint step is scaled uniformly so no joint exceeds its velocity limit
/// over `dt`, then clamped to the joint limits.
pub fn track_step(state: &ArmState, target: &Pose, dt: f64, chain: &KinematicChain, params: &IkParams) -> ArmState {
    let (pose, jac) = chain.fk_with_jacobian(&state.q);
    let e_pos = target.position - pose.position;
    let e_rot = target.orientation.compose(&pose.orientation.inverse()).to_rotation_vector();
    let w = params.orientation_weight;
    let err = Vector6::new(e_pos.x, e_pos.y, e_pos.z, w * e_rot.x, w * e_rot.y, w * e_rot.z);

    let mut jw = jac;
    for c in 0..JOINTS {
        for r in 3..6 {
            jw[(r, c)] *= w;
        }
    }
    let lambda2 = params.damping * params.damping;
    let jjt: Matrix6<f64> = jw * jw.transpose() + Matrix6::identity() * lambda2;
    let dq = match jjt.cholesky() {
        Some(ch) => jw.transpose() * ch.solve(&err),
        None => return ArmState { q: state.q, t: state.t },
    };

    let mut scale: f64 = 1.0;
    for (i, l) in chain.links.iter().enumerate() {
        let cap = l.velocity_limit * dt;
        if dq[i].abs() > cap {
            scale = scale.min(cap / dq[i].abs());
        }
    }
    let mut q = state.q;
    for i in 0..JOINTS {
        q[i] += dq[i] * scale;
    }
    chain.clamp(&mut q);
    ArmState { q, t: state.t + (dt * 1e9).round() as u64 }
}
