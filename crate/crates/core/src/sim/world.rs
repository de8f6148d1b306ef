//! Maximal-coordinate planar rigid-body dynamics.
//!
//! Each link is a free body (x, z, angle). Revolute joint velocities are
//! projected exactly onto the constraint manifold, and a position
//! projection removes the remaining anchor drift. Ground contact is a penalty
//! spring-damper on the foot end points with a stick-slip tangential
//! spring capped by Coulomb friction; both springs are integrated
//! implicitly inside the impulse solver. Everything else is semi-implicit
//! Euler.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::randomization::EmbodimentVariant;
use crate::robot_model::{Kinematics, RobotModel};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsParams {
    pub gravity: f64,
    /// Physics step, s.
    pub dt: f64,
    /// Physics steps per control step.
    pub substeps: usize,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub tangential_stiffness: f64,
    pub tangential_damping: f64,
    pub solver_iterations: usize,
    /// Velocity bias factor on the anchor separation.
    pub baumgarte: f64,
    /// Position projection sweeps after integration.
    pub position_iterations: usize,
    pub gravity_enabled: bool,
    pub contact_enabled: bool,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        PhysicsParams {
            gravity: -9.81,
            dt: 0.005,
            substeps: 4,
            contact_stiffness: 2e4,
            contact_damping: 200.0,
            tangential_stiffness: 2e4,
            tangential_damping: 200.0,
            solver_iterations: 16,
            baumgarte: 0.0,
            position_iterations: 4,
            gravity_enabled: true,
            contact_enabled: true,
        }
    }
}

impl PhysicsParams {
    pub fn control_dt(&self) -> f64 {
        self.dt * self.substeps as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Body<T> {
    pub pos: [T; 2],
    pub angle: T,
    pub vel: [T; 2],
    pub omega: T,
}

/// Dynamic state of one simulated robot.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState<T> {
    pub bodies: Vec<Body<T>>,
    /// Tangential spring anchor (x) per contact point while touching.
    pub stick: Vec<Option<T>>,
    /// Seconds, kept in double precision whatever `T` is.
    pub time: f64,
    pub step: u64,
    /// `(v_x, v_y, v_yaw)`; the last two stay 0 in the plane.
    pub command: [T; 3],
}

/// How joints are driven during a control step.
#[derive(Debug, Clone, Copy)]
pub enum Actuation<'a, T> {
    /// Constant torques held over every physics step.
    Torque(&'a [T]),
    /// PD targets; torques are recomputed at every physics step.
    PdTarget(&'a [T]),
}

#[inline]
fn rot<T: Scalar>(angle: T, p: [T; 2]) -> [T; 2] {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

#[inline]
fn cross<T: Scalar>(r: [T; 2], f: [T; 2]) -> T {
    r[0] * f[1] - r[1] * f[0]
}

/// Joint torque from a PD law, clamped to `+-tau_max`.
#[inline]
pub fn pd_torque<T: Scalar>(kp: T, kd: T, tau_max: T, target: T, q: T, qd: T) -> T {
    let tau = kp * (target - q) - kd * qd;
    tau.max(-tau_max).min(tau_max)
}

/// Element-wise PD torques for a variant's (possibly randomized) gains.
pub fn pd_torques<T: Scalar>(variant: &EmbodimentVariant, q_target: &[T], q: &[T], qd: &[T]) -> Vec<T> {
    variant
        .model
        .joints
        .iter()
        .enumerate()
        .map(|(i, j)| pd_torque(T::lit(j.kp), T::lit(j.kd), T::lit(j.tau_max), q_target[i], q[i], qd[i]))
        .collect()
}

/// Immutable physical description of one embodiment variant.
#[derive(Debug, Clone)]
pub struct World<T> {
    pub params: PhysicsParams,
    pub kin: Kinematics,
    pub friction: T,
    mass: Vec<T>,
    inertia: Vec<T>,
    parent: Vec<usize>,
    child: Vec<usize>,
    sign: Vec<T>,
    parent_anchor: Vec<[T; 2]>,
    child_anchor: Vec<[T; 2]>,
    kp: Vec<T>,
    kd: Vec<T>,
    tau_max: Vec<T>,
    contacts: Vec<(usize, [T; 2])>,
    base: usize,
}

/// Scratch values of one ground contact for the current physics step.
#[derive(Clone, Copy)]
struct ContactRow<T> {
    index: usize,
    link: usize,
    r: [T; 2],
    bias_n: f64,
    gamma_n: f64,
    bias_t: f64,
    gamma_t: f64,
    lambda_t: f64,
    sliding: bool,
}

impl<T: Scalar> World<T> {
    pub fn new(model: &RobotModel, friction: f64, params: PhysicsParams) -> Self {
        let kin = Kinematics::new(model);
        let v2 = |p: [f64; 2]| [T::lit(p[0]), T::lit(p[1])];
        World {
            friction: T::lit(friction),
            mass: model.links.iter().map(|l| T::lit(l.mass)).collect(),
            inertia: model.links.iter().map(|l| T::lit(l.inertia_com)).collect(),
            parent: model.joints.iter().map(|j| j.parent).collect(),
            child: model.joints.iter().map(|j| j.child).collect(),
            sign: model.joints.iter().map(|j| T::lit(j.sign)).collect(),
            parent_anchor: kin.parent_anchor.iter().map(|&p| v2(p)).collect(),
            child_anchor: kin.child_anchor.iter().map(|&p| v2(p)).collect(),
            kp: model.joints.iter().map(|j| T::lit(j.kp)).collect(),
            kd: model.joints.iter().map(|j| T::lit(j.kd)).collect(),
            tau_max: model.joints.iter().map(|j| T::lit(j.tau_max)).collect(),
            contacts: kin.contacts.iter().map(|&(l, p)| (l, v2(p))).collect(),
            base: model.base_link,
            kin,
            params,
        }
    }

    pub fn from_variant(v: &EmbodimentVariant, params: PhysicsParams) -> Self {
        Self::new(&v.model, v.friction, params)
    }

    pub fn n_joints(&self) -> usize {
        self.parent.len()
    }

    pub fn n_bodies(&self) -> usize {
        self.mass.len()
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn n_contacts(&self) -> usize {
        self.contacts.len()
    }

    pub fn total_mass(&self) -> T {
        self.mass.iter().copied().sum()
    }

    /// State posed kinematically at rest.
    pub fn pose_state(&self, model: &RobotModel, base_com: [f64; 2], base_angle: f64, q: &[f64]) -> SimState<T> {
        let poses = self.kin.pose(model, base_com, base_angle, q);
        SimState {
            bodies: poses
                .iter()
                .map(|p| Body {
                    pos: [T::lit(p.com[0]), T::lit(p.com[1])],
                    angle: T::lit(p.angle),
                    vel: [T::zero(); 2],
                    omega: T::zero(),
                })
                .collect(),
            stick: vec![None; self.contacts.len()],
            time: 0.0,
            step: 0,
            command: [T::zero(); 3],
        }
    }

    pub fn joint_angles(&self, s: &SimState<T>) -> Vec<T> {
        (0..self.n_joints())
            .map(|j| self.sign[j] * (s.bodies[self.child[j]].angle - s.bodies[self.parent[j]].angle))
            .collect()
    }

    pub fn joint_rates(&self, s: &SimState<T>) -> Vec<T> {
        (0..self.n_joints())
            .map(|j| self.sign[j] * (s.bodies[self.child[j]].omega - s.bodies[self.parent[j]].omega))
            .collect()
    }

    /// World-space attachment points `(on parent, on child)` of a joint.
    pub fn joint_anchors(&self, s: &SimState<T>, j: usize) -> ([T; 2], [T; 2]) {
        let a = &s.bodies[self.parent[j]];
        let b = &s.bodies[self.child[j]];
        let ra = rot(a.angle, self.parent_anchor[j]);
        let rb = rot(b.angle, self.child_anchor[j]);
        (
            [a.pos[0] + ra[0], a.pos[1] + ra[1]],
            [b.pos[0] + rb[0], b.pos[1] + rb[1]],
        )
    }

    /// Largest anchor separation over all joints, meters.
    pub fn max_joint_residual(&self, s: &SimState<T>) -> T {
        (0..self.n_joints())
            .map(|j| {
                let (pa, pb) = self.joint_anchors(s, j);
                ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt()
            })
            .fold(T::zero(), T::max)
    }

    pub fn contact_points(&self, s: &SimState<T>) -> Vec<[T; 2]> {
        self.contacts
            .iter()
            .map(|&(l, local)| {
                let b = &s.bodies[l];
                let r = rot(b.angle, local);
                [b.pos[0] + r[0], b.pos[1] + r[1]]
            })
            .collect()
    }

    pub fn linear_momentum(&self, s: &SimState<T>) -> [T; 2] {
        let mut p = [T::zero(); 2];
        for (b, &m) in s.bodies.iter().zip(&self.mass) {
            p[0] += m * b.vel[0];
            p[1] += m * b.vel[1];
        }
        p
    }

    /// Kinetic + gravitational + contact spring + PD spring energy, J.
    pub fn mechanical_energy(&self, s: &SimState<T>, pd_target: Option<&[T]>) -> T {
        let half = T::lit(0.5);
        let g = if self.params.gravity_enabled {
            T::lit(-self.params.gravity)
        } else {
            T::zero()
        };
        let mut e = T::zero();
        for (i, b) in s.bodies.iter().enumerate() {
            e += half * self.mass[i] * (b.vel[0] * b.vel[0] + b.vel[1] * b.vel[1]);
            e += half * self.inertia[i] * b.omega * b.omega;
            e += self.mass[i] * g * b.pos[1];
        }
        if self.params.contact_enabled {
            let k = T::lit(self.params.contact_stiffness);
            let kt = T::lit(self.params.tangential_stiffness);
            for (c, p) in self.contact_points(s).iter().enumerate() {
                if p[1] < T::zero() {
                    e += half * k * p[1] * p[1];
                }
                if let Some(x0) = s.stick[c] {
                    e += half * kt * (p[0] - x0) * (p[0] - x0);
                }
            }
        }
        if let Some(target) = pd_target {
            let q = self.joint_angles(s);
            for j in 0..self.n_joints() {
                let d = target[j] - q[j];
                e += half * self.kp[j] * d * d;
            }
        }
        e
    }

    pub fn is_finite(&self, s: &SimState<T>) -> bool {
        s.bodies.iter().all(|b| {
            b.pos[0].is_finite()
                && b.pos[1].is_finite()
                && b.angle.is_finite()
                && b.vel[0].is_finite()
                && b.vel[1].is_finite()
                && b.omega.is_finite()
        })
    }

    /// One control step. Returns the joint torques averaged over the
    /// physics steps.
    pub fn step(&self, s: &mut SimState<T>, act: Actuation<'_, T>, base_force: [T; 2]) -> Vec<T> {
        let n = self.n_joints();
        let mut tau = vec![T::zero(); n];
        let mut tau_sum = vec![T::zero(); n];
        for _ in 0..self.params.substeps {
            match act {
                Actuation::Torque(t) => {
                    for j in 0..n {
                        tau[j] = t[j].max(-self.tau_max[j]).min(self.tau_max[j]);
                    }
                }
                Actuation::PdTarget(target) => {
                    let q = self.joint_angles(s);
                    let qd = self.joint_rates(s);
                    for j in 0..n {
                        tau[j] = pd_torque(self.kp[j], self.kd[j], self.tau_max[j], target[j], q[j], qd[j]);
                    }
                }
            }
            self.substep(s, &tau, base_force);
            for j in 0..n {
                tau_sum[j] += tau[j];
            }
        }
        s.step += 1;
        let inv = T::one() / T::from_usize_lossy(self.params.substeps.max(1));
        tau_sum.iter().map(|&t| t * inv).collect()
    }

    fn substep(&self, s: &mut SimState<T>, tau: &[T], base_force: [T; 2]) {
        let dt = T::lit(self.params.dt);
        let nb = self.n_bodies();
        let mut force = vec![[T::zero(); 2]; nb];
        let mut torque = vec![T::zero(); nb];

        if self.params.gravity_enabled {
            let g = T::lit(self.params.gravity);
            for (f, &m) in force.iter_mut().zip(&self.mass) {
                f[1] += m * g;
            }
        }
        force[self.base][0] += base_force[0];
        force[self.base][1] += base_force[1];

        for j in 0..self.n_joints() {
            let t = self.sign[j] * tau[j];
            torque[self.child[j]] += t;
            torque[self.parent[j]] -= t;
        }

        for (i, b) in s.bodies.iter_mut().enumerate() {
            b.vel[0] += force[i][0] / self.mass[i] * dt;
            b.vel[1] += force[i][1] / self.mass[i] * dt;
            b.omega += torque[i] / self.inertia[i] * dt;
        }

        let mut rows = if self.params.contact_enabled {
            self.contact_rows(s, dt)
        } else {
            Vec::new()
        };
        self.solve_velocities(s, dt, &mut rows);

        for b in s.bodies.iter_mut() {
            b.pos[0] += b.vel[0] * dt;
            b.pos[1] += b.vel[1] * dt;
            b.angle += b.omega * dt;
        }
        self.project_positions(s);
        self.update_anchors(s, &rows, dt);
        s.time += self.params.dt;
    }

    /// Soft constraint rows for the points below ground.
    fn contact_rows(&self, s: &mut SimState<T>, dt: T) -> Vec<ContactRow<T>> {
        let dt = dt.as_f64();
        let soft = |k: f64, c: f64| {
            let d = c + dt * k;
            if d > 0.0 {
                (k / d, 1.0 / (dt * d))
            } else {
                (0.0, f64::INFINITY)
            }
        };
        let (bn, gn) = soft(self.params.contact_stiffness, self.params.contact_damping);
        let (bt, gt) = soft(self.params.tangential_stiffness, self.params.tangential_damping);
        let mut rows = Vec::new();
        for (ci, &(l, local)) in self.contacts.iter().enumerate() {
            let b = s.bodies[l];
            let r = rot(b.angle, local);
            let p = [b.pos[0] + r[0], b.pos[1] + r[1]];
            if p[1] >= T::zero() {
                s.stick[ci] = None;
                continue;
            }
            let anchor = *s.stick[ci].get_or_insert(p[0]);
            rows.push(ContactRow {
                index: ci,
                link: l,
                r,
                bias_n: bn * p[1].as_f64(),
                gamma_n: gn,
                bias_t: bt * (p[0] - anchor).as_f64(),
                gamma_t: gt,
                lambda_t: 0.0,
                sliding: false,
            });
        }
        rows
    }

    /// Sliding contacts drag their stick anchor so the spring carries the
    /// Coulomb force at the new position.
    fn update_anchors(&self, s: &mut SimState<T>, rows: &[ContactRow<T>], dt: T) {
        let kt = T::lit(self.params.tangential_stiffness);
        for row in rows {
            if !row.sliding || kt <= T::zero() {
                continue;
            }
            let b = &s.bodies[row.link];
            let p = rot(b.angle, self.contacts[row.index].1);
            let x = b.pos[0] + p[0];
            s.stick[row.index] = Some(x + T::lit(row.lambda_t) / dt / kt);
        }
    }

    /// Nonlinear Gauss-Seidel on anchor separation. Moves positions only,
    /// so momenta are untouched.
    fn project_positions(&self, s: &mut SimState<T>) {
        for _ in 0..self.params.position_iterations {
            for j in 0..self.n_joints() {
                let (a, b) = (self.parent[j], self.child[j]);
                let ba = s.bodies[a];
                let bb = s.bodies[b];
                let ra = rot(ba.angle, self.parent_anchor[j]);
                let rb = rot(bb.angle, self.child_anchor[j]);
                let c = [
                    bb.pos[0] + rb[0] - ba.pos[0] - ra[0],
                    bb.pos[1] + rb[1] - ba.pos[1] - ra[1],
                ];
                let (ima, imb) = (T::one() / self.mass[a], T::one() / self.mass[b]);
                let (iia, iib) = (T::one() / self.inertia[a], T::one() / self.inertia[b]);
                let k11 = ima + imb + iia * ra[1] * ra[1] + iib * rb[1] * rb[1];
                let k12 = -iia * ra[0] * ra[1] - iib * rb[0] * rb[1];
                let k22 = ima + imb + iia * ra[0] * ra[0] + iib * rb[0] * rb[0];
                let det = k11 * k22 - k12 * k12;
                let p = [-(k22 * c[0] - k12 * c[1]) / det, -(-k12 * c[0] + k11 * c[1]) / det];
                let bbm = &mut s.bodies[b];
                bbm.pos[0] += p[0] * imb;
                bbm.pos[1] += p[1] * imb;
                bbm.angle += cross(rb, p) * iib;
                let bam = &mut s.bodies[a];
                bam.pos[0] -= p[0] * ima;
                bam.pos[1] -= p[1] * ima;
                bam.angle -= cross(ra, p) * iia;
            }
        }
    }

    /// Joint velocity constraints are enforced exactly by an
    /// M-orthogonal projection. Contacts are then solved by projected
    /// Gauss-Seidel on their effective mass through that projection, so
    /// every contact impulse already accounts for the whole chain.
    fn solve_velocities(&self, s: &mut SimState<T>, dt: T, rows: &mut [ContactRow<T>]) {
        let nb = self.n_bodies();
        let nj = self.n_joints();
        let dof = 3 * nb;
        let mut minv = DVector::<f64>::zeros(dof);
        for i in 0..nb {
            minv[3 * i] = 1.0 / self.mass[i].as_f64();
            minv[3 * i + 1] = minv[3 * i];
            minv[3 * i + 2] = 1.0 / self.inertia[i].as_f64();
        }
        let mut jac = DMatrix::<f64>::zeros(2 * nj, dof);
        let mut bias = DVector::<f64>::zeros(2 * nj);
        let beta = self.params.baumgarte / dt.as_f64();
        for j in 0..nj {
            let (a, b) = (self.parent[j], self.child[j]);
            let (ba, bb) = (s.bodies[a], s.bodies[b]);
            let ra = rot(ba.angle, self.parent_anchor[j]).map(|x| x.as_f64());
            let rb = rot(bb.angle, self.child_anchor[j]).map(|x| x.as_f64());
            // d/dt (p_b + r_b - p_a - r_a)
            jac[(2 * j, 3 * b)] = 1.0;
            jac[(2 * j, 3 * b + 2)] = -rb[1];
            jac[(2 * j, 3 * a)] = -1.0;
            jac[(2 * j, 3 * a + 2)] = ra[1];
            jac[(2 * j + 1, 3 * b + 1)] = 1.0;
            jac[(2 * j + 1, 3 * b + 2)] = rb[0];
            jac[(2 * j + 1, 3 * a + 1)] = -1.0;
            jac[(2 * j + 1, 3 * a + 2)] = -ra[0];
            for k in 0..2 {
                let err = (bb.pos[k] + rot(bb.angle, self.child_anchor[j])[k]
                    - ba.pos[k]
                    - rot(ba.angle, self.parent_anchor[j])[k])
                    .as_f64();
                bias[2 * j + k] = beta * err;
            }
        }
        let jm = {
            let mut m = jac.clone();
            for c in 0..dof {
                m.column_mut(c).scale_mut(minv[c]);
            }
            m
        };
        let chol = (&jm * jac.transpose()).cholesky().expect("joint constraints are independent");
        // v - M^-1 J^T S^-1 (J v + bias)
        let project = |v: &DVector<f64>, bias: &DVector<f64>| v - jm.transpose() * chol.solve(&(&jac * v + bias));

        let mut v = DVector::<f64>::zeros(dof);
        for (i, b) in s.bodies.iter().enumerate() {
            v[3 * i] = b.vel[0].as_f64();
            v[3 * i + 1] = b.vel[1].as_f64();
            v[3 * i + 2] = b.omega.as_f64();
        }
        v = project(&v, &bias);

        if !rows.is_empty() {
            let nc = 2 * rows.len();
            // contact Jacobian rows: normal then tangential per contact
            let mut jc = DMatrix::<f64>::zeros(nc, dof);
            for (i, row) in rows.iter().enumerate() {
                let l = row.link;
                let r = row.r.map(|x| x.as_f64());
                jc[(2 * i, 3 * l + 1)] = 1.0;
                jc[(2 * i, 3 * l + 2)] = r[0];
                jc[(2 * i + 1, 3 * l)] = 1.0;
                jc[(2 * i + 1, 3 * l + 2)] = -r[1];
            }
            let mut resp = jc.transpose();
            for (r, mut row) in resp.row_iter_mut().enumerate() {
                row *= minv[r];
            }
            let x = chol.solve(&(&jac * &resp));
            resp -= jm.transpose() * x;
            let k = &jc * &resp;
            let mut vc = &jc * &v;
            let mut lambda = DVector::<f64>::zeros(nc);
            let friction = self.friction.as_f64();
            for _ in 0..self.params.solver_iterations {
                for (i, row) in rows.iter_mut().enumerate() {
                    let (n, t) = (2 * i, 2 * i + 1);
                    let dn = -(vc[n] + row.bias_n + row.gamma_n * lambda[n]) / (k[(n, n)] + row.gamma_n);
                    let dn = (lambda[n] + dn).max(0.0) - lambda[n];
                    lambda[n] += dn;
                    vc.axpy(dn, &k.column(n), 1.0);

                    let dt_ = if row.gamma_t.is_finite() {
                        -(vc[t] + row.bias_t + row.gamma_t * lambda[t]) / (k[(t, t)] + row.gamma_t)
                    } else {
                        0.0
                    };
                    let cap = friction * lambda[n];
                    let unclamped = lambda[t] + dt_;
                    let new_t = unclamped.clamp(-cap, cap);
                    row.sliding = unclamped.abs() > cap;
                    let dt_ = new_t - lambda[t];
                    lambda[t] = new_t;
                    vc.axpy(dt_, &k.column(t), 1.0);
                }
            }
            for (i, row) in rows.iter_mut().enumerate() {
                row.lambda_t = lambda[2 * i + 1];
            }
            v += &resp * &lambda;
        }

        for (i, b) in s.bodies.iter_mut().enumerate() {
            b.vel = [T::lit(v[3 * i]), T::lit(v[3 * i + 1])];
            b.omega = T::lit(v[3 * i + 2]);
        }
    }
}
