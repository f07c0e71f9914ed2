//! Planar biped dynamics in generalized coordinates.
//!
//! The walker is a hull with two identical two-link legs moving in the x-z
//! plane.  Generalized coordinates:
//!
//! ```text
//! q = [x, z, phi, hip_l, knee_l, hip_r, knee_r]
//! ```
//!
//! where `phi` is the hull pitch and joint angles are relative to the parent
//! link.  A joint angle of zero points the link straight down; positive
//! angles swing it forward (+x).  Mass is lumped at points: the hull at the
//! base (plus a pitch inertia) and each link at its midpoint.  The mass
//! matrix is assembled as `M = I_h e3 e3^T + sum_i m_i J_i^T J_i` from the
//! point Jacobians, the velocity-product terms fall out of the same chain
//! geometry in closed form, and contact is a penalty spring with a Coulomb
//! friction cap.  Integration is semi-implicit Euler.

use crate::terrain::Heightfield;

pub const NQ: usize = 7;
pub const NJ: usize = 4;
/// Index of the pitch coordinate in q.
pub const PITCH: usize = 2;

/// Penetration beyond this depth counts as a contact-solver failure.
pub const PENETRATION_TOL: f64 = 0.01;

#[derive(Clone, Copy, Debug)]
pub struct WalkerState {
    pub q: [f64; NQ],
    pub qd: [f64; NQ],
}

impl WalkerState {
    pub fn joints(&self) -> [f64; NJ] {
        [self.q[3], self.q[4], self.q[5], self.q[6]]
    }

    pub fn joint_vels(&self) -> [f64; NJ] {
        [self.qd[3], self.qd[4], self.qd[5], self.qd[6]]
    }
}

#[derive(Clone, Debug)]
pub struct PhysicsConfig {
    pub gravity: f64,
    pub control_hz: f64,
    pub substeps: usize,
    pub hull_mass: f64,
    pub hull_inertia: f64,
    pub thigh_mass: f64,
    pub shank_mass: f64,
    pub thigh_len: f64,
    pub shank_len: f64,
    /// Vertical drop from the base to the hull's lowest point.
    pub hull_clearance: f64,
    pub kp: f64,
    pub kd: f64,
    pub torque_limit: f64,
    pub joint_vel_limit: f64,
    /// Hip range (both hips), then the left knee's range.  The right leg is
    /// the left mirrored through the vertical, so its knee range is the
    /// negation: the left knee flexes backwards, the right forwards.  Mirror
    /// symmetry is what lets the default stance hold both shanks vertical.
    pub hip_limits: (f64, f64),
    pub knee_limits: (f64, f64),
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    /// Cap on the viscous tangential force before the friction cone clips it.
    pub tangential_damping: f64,
    pub friction: f64,
    /// Base height above the feet in the default stance.
    pub stance_height: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            gravity: 9.81,
            control_hz: 50.0,
            substeps: 40,
            hull_mass: 10.0,
            hull_inertia: 0.15,
            thigh_mass: 1.0,
            shank_mass: 0.5,
            thigh_len: 0.35,
            shank_len: 0.35,
            hull_clearance: 0.15,
            kp: 100.0,
            kd: 3.0,
            torque_limit: 45.0,
            joint_vel_limit: 12.0,
            hip_limits: (-1.2, 1.2),
            knee_limits: (-2.4, 0.0),
            contact_stiffness: 2.0e6,
            contact_damping: 2.0e4,
            tangential_damping: 2000.0,
            friction: 0.8,
            stance_height: 0.65,
        }
    }
}

impl PhysicsConfig {
    pub fn control_dt(&self) -> f64 {
        1.0 / self.control_hz
    }

    pub fn substep_dt(&self) -> f64 {
        self.control_dt() / self.substeps as f64
    }

    /// Split stance at stance_height with both shanks vertical, left leg
    /// forward.  A vertical shank puts the knee directly above the foot, so
    /// the knees carry no gravity torque and the hip torques are equal and
    /// opposite: joint sag lowers the base uniformly instead of unloading one
    /// foot, which is what keeps a stiff stand from tipping.
    pub fn default_pose(&self) -> [f64; NJ] {
        let hip = ((self.stance_height - self.shank_len) / self.thigh_len)
            .clamp(-1.0, 1.0)
            .acos();
        [hip, -hip, -hip, hip]
    }

    /// Standing base height implied by the default pose.
    pub fn nominal_height(&self) -> f64 {
        self.stance_height
    }

    /// Horizontal distance from the base to each foot in the default stance.
    pub fn stance_half_sep(&self) -> f64 {
        self.thigh_len * self.default_pose()[0].sin()
    }

    pub fn joint_limits(&self, j: usize) -> (f64, f64) {
        match j {
            0 | 2 => self.hip_limits,
            1 => self.knee_limits,
            _ => (-self.knee_limits.1, -self.knee_limits.0),
        }
    }
}

/// Per-episode randomization applied multiplicatively to the nominal model.
#[derive(Clone, Debug)]
pub struct DrParams {
    /// Scales for [hull, thigh_l, shank_l, thigh_r, shank_r].
    pub mass_scale: [f64; 5],
    pub friction: f64,
    /// Restitution in [0, 1); scales contact damping down so impacts keep
    /// more energy.
    pub restitution: f64,
    pub motor_scale: f64,
    pub kp_scale: f64,
    pub kd_scale: f64,
}

impl DrParams {
    pub fn nominal(cfg: &PhysicsConfig) -> Self {
        DrParams {
            mass_scale: [1.0; 5],
            friction: cfg.friction,
            restitution: 0.0,
            motor_scale: 1.0,
            kp_scale: 1.0,
            kd_scale: 1.0,
        }
    }
}

/// A lumped mass point on the body: a chain of link offsets from the base.
/// Each term contributes `coeff * dir(angle)` to the position where `angle`
/// is the sum of q over `dofs`.
struct ChainTerm {
    coeff: f64,
    dofs: &'static [usize],
}

const L_THIGH_DOFS: &[usize] = &[PITCH, 3];
const L_SHANK_DOFS: &[usize] = &[PITCH, 3, 4];
const R_THIGH_DOFS: &[usize] = &[PITCH, 5];
const R_SHANK_DOFS: &[usize] = &[PITCH, 5, 6];

/// Position, Jacobian and frozen-coordinate acceleration of one chain point.
#[derive(Clone, Copy, Debug)]
pub struct PointKin {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    jac: [[f64; NQ]; 2],
    /// Acceleration of the point when qdd = 0 (centripetal terms).
    acc_cent: [f64; 2],
}

impl PointKin {
    fn of(q: &[f64; NQ], qd: &[f64; NQ], terms: &[ChainTerm]) -> PointKin {
        let mut pos = [q[0], q[1]];
        let mut jac = [[0.0; NQ]; 2];
        jac[0][0] = 1.0;
        jac[1][1] = 1.0;
        let mut acc = [0.0; 2];
        for t in terms {
            let mut a = 0.0;
            let mut ad = 0.0;
            for &k in t.dofs {
                a += q[k];
                ad += qd[k];
            }
            let (s, c) = a.sin_cos();
            // dir = (sin a, -cos a), dir' = (cos a, sin a), dir'' = -dir
            pos[0] += t.coeff * s;
            pos[1] -= t.coeff * c;
            for &k in t.dofs {
                jac[0][k] += t.coeff * c;
                jac[1][k] += t.coeff * s;
            }
            acc[0] -= t.coeff * ad * ad * s;
            acc[1] += t.coeff * ad * ad * c;
        }
        let mut vel = [0.0; 2];
        for k in 0..NQ {
            vel[0] += jac[0][k] * qd[k];
            vel[1] += jac[1][k] * qd[k];
        }
        PointKin { pos, vel, jac, acc_cent: acc }
    }
}

/// Kinematics of every point the dynamics or contact model cares about.
pub struct BodyKin {
    /// Mass points: hull, thigh_l, shank_l, thigh_r, shank_r.
    pub mass_points: [PointKin; 5],
    pub foot_l: PointKin,
    pub foot_r: PointKin,
    pub knee_l: PointKin,
    pub knee_r: PointKin,
    pub hull_bottom: PointKin,
}

pub fn body_kin(cfg: &PhysicsConfig, state: &WalkerState) -> BodyKin {
    let (q, qd) = (&state.q, &state.qd);
    let (lt, ls) = (cfg.thigh_len, cfg.shank_len);
    let half = |d: &'static [usize], l: f64| ChainTerm { coeff: 0.5 * l, dofs: d };
    let full = |d: &'static [usize], l: f64| ChainTerm { coeff: l, dofs: d };
    let hull = PointKin::of(q, qd, &[]);
    let thigh_l = PointKin::of(q, qd, &[half(L_THIGH_DOFS, lt)]);
    let shank_l = PointKin::of(q, qd, &[full(L_THIGH_DOFS, lt), half(L_SHANK_DOFS, ls)]);
    let thigh_r = PointKin::of(q, qd, &[half(R_THIGH_DOFS, lt)]);
    let shank_r = PointKin::of(q, qd, &[full(R_THIGH_DOFS, lt), half(R_SHANK_DOFS, ls)]);
    let foot_l = PointKin::of(q, qd, &[full(L_THIGH_DOFS, lt), full(L_SHANK_DOFS, ls)]);
    let foot_r = PointKin::of(q, qd, &[full(R_THIGH_DOFS, lt), full(R_SHANK_DOFS, ls)]);
    let knee_l = PointKin::of(q, qd, &[full(L_THIGH_DOFS, lt)]);
    let knee_r = PointKin::of(q, qd, &[full(R_THIGH_DOFS, lt)]);
    // The hull's lowest point is rigid in the hull frame, straight below the
    // base when upright.
    let hull_bottom = PointKin::of(q, qd, &[ChainTerm { coeff: cfg.hull_clearance, dofs: &[PITCH] }]);
    BodyKin {
        mass_points: [hull, thigh_l, shank_l, thigh_r, shank_r],
        foot_l,
        foot_r,
        knee_l,
        knee_r,
        hull_bottom,
    }
}

/// Outcome of one control step, accumulated over substeps.
#[derive(Clone, Copy, Debug, Default)]
pub struct StepInfo {
    /// Torques applied during the final substep, after clamping and motor
    /// scaling.
    pub torques: [f64; NJ],
    /// Raw PD request from the final substep, before the torque limit.
    pub torques_requested: [f64; NJ],
    /// Contact state at the end of the step.
    pub foot_contact: [bool; 2],
    pub foot_normal: [f64; 2],
    pub foot_tangent: [f64; 2],
    /// True if a knee or the hull underside touched ground at any substep.
    pub nonfoot_contact: bool,
    /// Deepest foot penetration seen at any substep.
    pub max_penetration: f64,
}

/// Mass matrix and forcing on the right-hand side of `M qdd = rhs`.
fn assemble(
    cfg: &PhysicsConfig,
    dr: &DrParams,
    kin: &BodyKin,
    torques: &[f64; NJ],
    push_force: f64,
) -> ([[f64; NQ]; NQ], [f64; NQ]) {
    let masses = [
        cfg.hull_mass * dr.mass_scale[0],
        cfg.thigh_mass * dr.mass_scale[1],
        cfg.shank_mass * dr.mass_scale[2],
        cfg.thigh_mass * dr.mass_scale[3],
        cfg.shank_mass * dr.mass_scale[4],
    ];
    let mut m = [[0.0; NQ]; NQ];
    m[PITCH][PITCH] = cfg.hull_inertia * dr.mass_scale[0];
    let mut rhs = [0.0; NQ];
    for (pk, &mass) in kin.mass_points.iter().zip(masses.iter()) {
        // Force on the point with qdd frozen: gravity minus inertial terms.
        let fx = -mass * pk.acc_cent[0];
        let fz = -mass * (cfg.gravity + pk.acc_cent[1]);
        for i in 0..NQ {
            rhs[i] += pk.jac[0][i] * fx + pk.jac[1][i] * fz;
            for j in i..NQ {
                m[i][j] += mass * (pk.jac[0][i] * pk.jac[0][j] + pk.jac[1][i] * pk.jac[1][j]);
            }
        }
    }
    for i in 0..NQ {
        for j in 0..i {
            m[i][j] = m[j][i];
        }
    }
    for j in 0..NJ {
        rhs[3 + j] += torques[j];
    }
    rhs[0] += push_force;
    (m, rhs)
}

fn apply_point_force(rhs: &mut [f64; NQ], pk: &PointKin, f: &[f64; 2]) {
    for i in 0..NQ {
        rhs[i] += pk.jac[0][i] * f[0] + pk.jac[1][i] * f[1];
    }
}

/// Constrained dynamics solver: a Cholesky factorization of the mass matrix
/// restricted to the free coordinates.  Joints pressed against a hard stop
/// are frozen at a prescribed acceleration, so forces transmit through the
/// locked joint into the rest of the body instead of vanishing into a
/// post-hoc velocity clamp (which lets a jammed leg tunnel into the ground).
struct Chol {
    l: [[f64; NQ]; NQ],
    m: [[f64; NQ]; NQ],
    idx: [usize; NQ],
    n: usize,
    fixed_qdd: [f64; NQ],
}

impl Chol {
    fn factor(m: &[[f64; NQ]; NQ], free: &[bool; NQ], fixed_qdd: &[f64; NQ]) -> Chol {
        let mut idx = [0usize; NQ];
        let mut n = 0;
        for i in 0..NQ {
            if free[i] {
                idx[n] = i;
                n += 1;
            }
        }
        let mut l = [[0.0; NQ]; NQ];
        for i in 0..n {
            for j in 0..=i {
                let mut s = m[idx[i]][idx[j]];
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if i == j {
                    // The mass matrix is PD by construction; the floor guards
                    // against pathological scale draws.
                    l[i][i] = s.max(1e-12).sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        Chol { l, m: *m, idx, n, fixed_qdd: *fixed_qdd }
    }

    /// Solves `M qdd = b` with frozen coordinates held at their prescribed
    /// acceleration and their coupling moved to the right-hand side.
    fn solve(&self, b: &[f64; NQ]) -> [f64; NQ] {
        let mut y = [0.0; NQ];
        for i in 0..self.n {
            let gi = self.idx[i];
            let mut s = b[gi];
            for g in 0..NQ {
                s -= self.m[gi][g] * self.fixed_qdd[g];
            }
            for k in 0..i {
                s -= self.l[i][k] * y[k];
            }
            y[i] = s / self.l[i][i];
        }
        let mut xr = [0.0; NQ];
        for i in (0..self.n).rev() {
            let mut s = y[i];
            for k in i + 1..self.n {
                s -= self.l[k][i] * xr[k];
            }
            xr[i] = s / self.l[i][i];
        }
        let mut x = self.fixed_qdd;
        for i in 0..self.n {
            x[self.idx[i]] = xr[i];
        }
        x
    }
}

/// Solves the box-constrained 2x2 complementarity problem `a x = b` with
/// `x` clamped to `[lo, hi]`: a clamped component's residual must push
/// further outward.  `a` comes from an SPD Delassus matrix plus identity, so
/// exactly one case is consistent; cases are tried in a fixed order and the
/// first consistent one wins.
fn box_solve2(a: &[[f64; 2]; 2], b: &[f64; 2], lo: &[f64; 2], hi: &[f64; 2]) -> [f64; 2] {
    let solve_free = |i: usize, other: f64, oj: usize| (b[i] - a[i][oj] * other) / a[i][i];
    let resid = |x: &[f64; 2], i: usize| b[i] - a[i][0] * x[0] - a[i][1] * x[1];
    let ok = |x: &[f64; 2], i: usize| {
        if x[i] <= lo[i] {
            resid(x, i) <= 1e-9
        } else if x[i] >= hi[i] {
            resid(x, i) >= -1e-9
        } else {
            true
        }
    };
    // Both interior.
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let x = [
        (b[0] * a[1][1] - b[1] * a[0][1]) / det,
        (b[1] * a[0][0] - b[0] * a[1][0]) / det,
    ];
    if x[0] > lo[0] && x[0] < hi[0] && x[1] > lo[1] && x[1] < hi[1] {
        return x;
    }
    // One clamped, the other solved against it.
    for (i, o) in [(0, 1), (1, 0)] {
        for bound in [lo[i], hi[i]] {
            if !bound.is_finite() {
                continue;
            }
            let mut x = [0.0; 2];
            x[i] = bound;
            x[o] = solve_free(o, bound, i).clamp(lo[o], hi[o]);
            if ok(&x, 0) && ok(&x, 1) {
                return x;
            }
        }
    }
    // Both clamped: pick the corner with consistent residuals.
    for xi in [lo[0], hi[0]] {
        for xj in [lo[1], hi[1]] {
            if !xi.is_finite() || !xj.is_finite() {
                continue;
            }
            let x = [xi, xj];
            if ok(&x, 0) && ok(&x, 1) {
                return x;
            }
        }
    }
    [x[0].clamp(lo[0], hi[0]), x[1].clamp(lo[1], hi[1])]
}

/// Stable PD: the proportional term tracks the position predicted one substep
/// ahead, and for unsaturated motors the torque's dependence on the incoming
/// acceleration moves onto the mass-matrix diagonal (`spd_diag`), making the
/// feedback implicit.  Explicit high-gain PD diverges here because the
/// apparent inertia at a knee is only ~0.015 kg m^2.
fn pd_torques(
    cfg: &PhysicsConfig,
    dr: &DrParams,
    state: &WalkerState,
    targets: &[f64; NJ],
    dt: f64,
) -> ([f64; NJ], [f64; NJ], [f64; NJ]) {
    let mut applied = [0.0; NJ];
    let mut requested = [0.0; NJ];
    let mut spd_diag = [0.0; NJ];
    for j in 0..NJ {
        let kp = cfg.kp * dr.kp_scale;
        let kd = cfg.kd * dr.kd_scale;
        let raw = kp * (targets[j] - state.q[3 + j] - state.qd[3 + j] * dt)
            - kd * state.qd[3 + j];
        requested[j] = raw;
        // Torque-speed curve: driving torque tapers to zero at the velocity
        // limit, braking torque keeps the full limit.  Without the taper a
        // free-swinging leg winds up to speeds whose one-substep travel
        // alone busts the penetration tolerance.
        let vel_frac = state.qd[3 + j] / cfg.joint_vel_limit;
        let hi = cfg.torque_limit * (1.0 - vel_frac).clamp(0.0, 1.0);
        let lo = -cfg.torque_limit * (1.0 + vel_frac).clamp(0.0, 1.0);
        applied[j] = raw.clamp(lo, hi) * dr.motor_scale;
        if raw > lo && raw < hi {
            spd_diag[j] = (kp * dt + kd) * dr.motor_scale * dt;
        }
    }
    (applied, requested, spd_diag)
}

/// Advances the state by one substep.  Contact forces come from the state at
/// the start of the substep; velocities update before positions.
pub fn substep(
    cfg: &PhysicsConfig,
    dr: &DrParams,
    state: &mut WalkerState,
    hf: &Heightfield,
    targets: &[f64; NJ],
    push_force: f64,
    dt: f64,
    info: &mut StepInfo,
) {
    let kin = body_kin(cfg, state);
    let (applied, requested, spd_diag) = pd_torques(cfg, dr, state, targets, dt);
    let (mut m, mut rhs) = assemble(cfg, dr, &kin, &applied, push_force);
    for j in 0..NJ {
        m[3 + j][3 + j] += spd_diag[j];
    }
    // Joints pressed against (or resting on) a hard stop are frozen for the
    // substep: the stop supplies whatever reaction holds them, and the rest
    // of the body feels it through the constrained solve.
    let mut free = [true; NQ];
    let mut fixed_qdd = [0.0; NQ];
    for j in 0..NJ {
        let (lo, hi) = cfg.joint_limits(j);
        let (qj, qdj) = (state.q[3 + j], state.qd[3 + j]);
        if (qj <= lo + 1e-9 && qdj <= 1e-9) || (qj >= hi - 1e-9 && qdj >= -1e-9) {
            free[3 + j] = false;
            fixed_qdd[3 + j] = -qdj / dt;
        }
    }
    let chol = Chol::factor(&m, &free, &fixed_qdd);

    // Backward-Euler contact: spring and damper both act on the
    // end-of-substep gap and velocity, so any stiffness is stable (the
    // apparent mass at a foot is ~0.1 kg, far too light for an explicit
    // spring this stiff).  The feet couple through the body, so the pair of
    // normal forces solves a 2x2 complementarity problem over the Delassus
    // matrix exactly; tangential forces then solve the same shape boxed by
    // the friction cone.
    let feet = [&kin.foot_l, &kin.foot_r];
    let pens = [
        hf.height_at(kin.foot_l.pos[0]) - kin.foot_l.pos[1],
        hf.height_at(kin.foot_r.pos[0]) - kin.foot_r.pos[1],
    ];
    let active = [pens[0] > 0.0, pens[1] > 0.0];
    let damping = cfg.contact_damping * (1.0 - dr.restitution);
    let imp = cfg.contact_stiffness * dt + damping;
    let kt = cfg.tangential_damping;
    let dot = |row: &[f64; NQ], v: &[f64; NQ]| {
        let mut s = 0.0;
        for k in 0..NQ {
            s += row[k] * v[k];
        }
        s
    };
    let mut forces = [[0.0; 2]; 2];
    let mut qdd = chol.solve(&rhs);
    if active[0] || active[1] {
        let minv = [
            [chol.solve(&feet[0].jac[0]), chol.solve(&feet[0].jac[1])],
            [chol.solve(&feet[1].jac[0]), chol.solve(&feet[1].jac[1])],
        ];
        let w = |ax: usize, f: usize, g: usize| dot(&feet[f].jac[ax], &minv[g][ax]);
        let couple = |coef: f64, ax: usize| {
            let mut a = [[0.0; 2]; 2];
            for f in 0..2 {
                for g in 0..2 {
                    a[f][g] = (f == g) as usize as f64
                        + if active[f] && active[g] { coef * w(ax, f, g) * dt } else { 0.0 };
                }
            }
            a
        };

        let az = couple(imp, 1);
        let mut bz = [0.0; 2];
        for f in 0..2 {
            if active[f] {
                let vz0 = feet[f].vel[1] + dot(&feet[f].jac[1], &qdd) * dt;
                bz[f] = cfg.contact_stiffness * pens[f] - imp * vz0;
            }
        }
        let n = box_solve2(&az, &bz, &[0.0; 2], &[f64::INFINITY; 2]);
        for f in 0..2 {
            apply_point_force(&mut rhs, feet[f], &[0.0, n[f]]);
        }
        qdd = chol.solve(&rhs);

        let ax = couple(kt, 0);
        let mut bx = [0.0; 2];
        for f in 0..2 {
            if active[f] {
                let vx1 = feet[f].vel[0] + dot(&feet[f].jac[0], &qdd) * dt;
                bx[f] = -kt * vx1;
            }
        }
        let cap = [dr.friction * n[0], dr.friction * n[1]];
        let t = box_solve2(&ax, &bx, &[-cap[0], -cap[1]], &[cap[0], cap[1]]);
        for f in 0..2 {
            apply_point_force(&mut rhs, feet[f], &[t[f], 0.0]);
            forces[f] = [t[f], n[f]];
        }
        qdd = chol.solve(&rhs);
    }
    for f in 0..2 {
        info.foot_contact[f] = active[f];
        info.foot_normal[f] = forces[f][1];
        info.foot_tangent[f] = forces[f][0];
        info.max_penetration = info.max_penetration.max(pens[f].max(0.0));
    }
    for pk in [&kin.knee_l, &kin.knee_r, &kin.hull_bottom] {
        if hf.height_at(pk.pos[0]) > pk.pos[1] {
            info.nonfoot_contact = true;
        }
    }

    for i in 0..NQ {
        state.qd[i] += qdd[i] * dt;
    }
    for i in 0..NQ {
        state.q[i] += state.qd[i] * dt;
    }
    // Hard joint stops: project the angle back and kill outward velocity.
    for j in 0..NJ {
        let (lo, hi) = cfg.joint_limits(j);
        let qj = &mut state.q[3 + j];
        if *qj < lo {
            *qj = lo;
            state.qd[3 + j] = state.qd[3 + j].max(0.0);
        } else if *qj > hi {
            *qj = hi;
            state.qd[3 + j] = state.qd[3 + j].min(0.0);
        }
    }
    info.torques = applied;
    for j in 0..NJ {
        // Implicit part of the stable-PD torque, now that qdd is known.
        info.torques[j] -= spd_diag[j] * qdd[3 + j];
    }
    info.torques_requested = requested;
}

/// Runs one control step: holds `targets` for `cfg.substeps` substeps.
pub fn control_step(
    cfg: &PhysicsConfig,
    dr: &DrParams,
    state: &mut WalkerState,
    hf: &Heightfield,
    targets: &[f64; NJ],
    push_force: f64,
) -> StepInfo {
    let dt = cfg.substep_dt();
    let mut info = StepInfo::default();
    for _ in 0..cfg.substeps {
        substep(cfg, dr, state, hf, targets, push_force, dt, &mut info);
    }
    info
}

/// Kinetic plus gravitational potential energy.  `qd` may differ from the
/// state's stored velocity so callers can evaluate midpoint estimates.
pub fn mechanical_energy(cfg: &PhysicsConfig, dr: &DrParams, q: &[f64; NQ], qd: &[f64; NQ]) -> f64 {
    let state = WalkerState { q: *q, qd: *qd };
    let kin = body_kin(cfg, &state);
    let masses = [
        cfg.hull_mass * dr.mass_scale[0],
        cfg.thigh_mass * dr.mass_scale[1],
        cfg.shank_mass * dr.mass_scale[2],
        cfg.thigh_mass * dr.mass_scale[3],
        cfg.shank_mass * dr.mass_scale[4],
    ];
    let mut e = 0.5 * cfg.hull_inertia * dr.mass_scale[0] * qd[PITCH] * qd[PITCH];
    for (pk, &mass) in kin.mass_points.iter().zip(masses.iter()) {
        e += 0.5 * mass * (pk.vel[0] * pk.vel[0] + pk.vel[1] * pk.vel[1]);
        e += mass * cfg.gravity * pk.pos[1];
    }
    e
}
