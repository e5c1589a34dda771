//! Direct pose refinement by minimizing `L_pla + L_axi`.
//!
//! Parameters are a left-composed rotation increment `R ← exp(ω) R` and
//! the translation `(t_x, t_y, t_z)`, all expressed in units of the
//! configured step sizes. Each iteration takes a central finite-difference
//! gradient (optionally analytic in the translation), then backtracks along
//! the normalized descent direction. The trust radius doubles after every
//! accepted step. When the line search finds no decrease, a coordinate
//! pattern search over the same radii runs before giving up.
//!
//! Every accepted step strictly decreases the objective.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::alignment::{aligned_flows, backproject_source, CorrespondenceSet, SourcePoints};
use crate::error::{Error, Result};
use crate::flow::{DepthMap, DENOM_EPS};
use crate::geometry::{
    check_rotation, decompose_motion, rotation_from_vector, rotation_to_vector, SE3Pose,
};
use crate::losses::{ratio_maps, recover_translation, RecoveredTranslation, RunningStats, FLOW_EPS};

/// How the objective gradient is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    /// Central differences in all six parameters.
    #[default]
    FiniteDifference,
    /// Central differences in rotation, chain rule through the aligned
    /// projections in translation.
    AnalyticTranslational,
}

/// Which alignment losses make up the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    #[default]
    Both,
    Coplanar,
    Coaxial,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub max_iters: usize,
    /// Radians per unit of the rotation parameters.
    pub step_rotation: f64,
    /// Scene units per unit of the translation parameters.
    pub step_translation: f64,
    pub gradient_mode: GradientMode,
    pub convergence_tol: f64,
    pub line_search_shrink: f64,
    pub objective: Objective,
    /// Free parameters `(ω_x, ω_y, ω_z, t_x, t_y, t_z)`; frozen ones keep
    /// their initial value.
    pub free: [bool; 6],
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            max_iters: 100,
            step_rotation: 1e-3,
            step_translation: 1e-4,
            gradient_mode: GradientMode::FiniteDifference,
            convergence_tol: 1e-10,
            line_search_shrink: 0.5,
            objective: Objective::Both,
            free: [true; 6],
        }
    }
}

impl RefineConfig {
    /// Defaults with the translation step scaled to the initial translation:
    /// `1e-3 · |t_init|`, at least `1e-4`.
    pub fn for_init(init: &SE3Pose) -> Self {
        RefineConfig {
            step_translation: (1e-3 * init.translation().norm()).max(1e-4),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be positive".into()));
        }
        if !positive(self.step_rotation) || !positive(self.step_translation) {
            return Err(Error::InvalidConfig("step sizes must be positive".into()));
        }
        if !positive(self.convergence_tol) {
            return Err(Error::InvalidConfig("convergence_tol must be positive".into()));
        }
        if !(self.line_search_shrink > 0.0 && self.line_search_shrink < 1.0) {
            return Err(Error::InvalidConfig("line_search_shrink must lie in (0, 1)".into()));
        }
        if !self.free.iter().any(|&f| f) {
            return Err(Error::InvalidConfig("no free parameter".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss_pla: f64,
    pub loss_axi: f64,
    pub objective: f64,
    pub rotation_vector: [f64; 3],
    pub translation: [f64; 3],
    /// Trust radius in step units after this iteration.
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineTrace {
    /// Record 0 is the initial pose; one record per accepted step follows.
    pub records: Vec<IterationRecord>,
    pub final_pose: SE3Pose,
    pub converged: bool,
    /// Optimizer iterations run (gradient evaluations).
    pub iterations: usize,
}

impl RefineTrace {
    pub fn final_objective(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.objective)
    }

    /// One JSON object per record.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            writeln!(out, "{}", serde_json::to_string(r)?).expect("writing to a String");
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug)]
struct Losses {
    pla: f64,
    axi: f64,
    objective: f64,
}

/// Evaluates the alignment losses directly from back-projected points.
/// Matches [`crate::losses::loss_pla`] / [`crate::losses::loss_axi`] on the
/// flows of [`crate::alignment::aligned_flows`].
///
/// A loss that is undefined at the initial pose is left out of the
/// objective. Once included, a pose where fewer than half of its initially
/// usable pixels remain scores `+∞`, so the search cannot lower the
/// objective by pushing pixels out of view.
struct Evaluator<'a> {
    points: &'a SourcePoints,
    /// Valid pixel coordinates, their source points and target depths.
    cells: Vec<(Vector2<f64>, Vector3<f64>, f64)>,
    use_pla: bool,
    use_axi: bool,
    min_pla: usize,
    min_axi: usize,
}

impl<'a> Evaluator<'a> {
    fn new(points: &'a SourcePoints, depth_t: &DepthMap, objective: Objective) -> Self {
        let cells = points
            .valid
            .indexed()
            .filter(|(_, _, &ok)| ok)
            .map(|(u, v, _)| {
                (
                    Vector2::new(u as f64, v as f64),
                    *points.points.get(u, v),
                    depth_t.at(u, v),
                )
            })
            .collect();
        Evaluator {
            points,
            cells,
            use_pla: objective != Objective::Coaxial,
            use_axi: objective != Objective::Coplanar,
            min_pla: 2,
            min_axi: 1,
        }
    }

    /// Fixes the included losses and pixel budgets from the initial pose.
    fn calibrate(&mut self, r: &Matrix3<f64>, t: &Vector3<f64>) {
        let (_, _, n_pla, n_axi) = self.raw(r, t, false);
        self.use_pla &= n_pla >= 2;
        self.use_axi &= n_axi >= 1;
        self.min_pla = (n_pla / 2).max(2);
        self.min_axi = (n_axi / 2).max(1);
    }

    fn evaluate(&self, r: &Matrix3<f64>, t: &Vector3<f64>) -> Losses {
        self.evaluate_with_gradient(r, t, false).0
    }

    fn evaluate_with_gradient(
        &self,
        r: &Matrix3<f64>,
        t: &Vector3<f64>,
        gradient: bool,
    ) -> (Losses, Vector3<f64>) {
        let (pla, axi, n_pla, n_axi) = self.raw(r, t, gradient);
        let mut objective = 0.0;
        let mut grad = Vector3::zeros();
        if self.use_pla {
            objective += if n_pla >= self.min_pla { pla.0 } else { f64::INFINITY };
            grad += pla.1;
        }
        if self.use_axi {
            objective += if n_axi >= self.min_axi { axi.0 } else { f64::INFINITY };
            grad += axi.1;
        }
        let losses = Losses {
            pla: pla.0,
            axi: axi.0,
            objective,
        };
        (losses, grad)
    }

    /// Rows of the linear flow relations of
    /// [`recover_translation_closed_form`] in `a = R⁻¹ t` for rotation `r`.
    fn for_each_relation(&self, r: &Matrix3<f64>, mut f: impl FnMut(Vector3<f64>, f64)) {
        let k = &self.points.intrinsics;
        let r_inv = r.transpose();
        for (p, point, z) in &self.cells {
            let q = r_inv * point;
            if q.z <= DENOM_EPS {
                continue;
            }
            let flow = Vector2::new(k.fu * q.x / q.z + k.u0, k.fv * q.y / q.z + k.v0) - p;
            let (du, dv) = (p.x - k.u0, p.y - k.v0);
            // Divided by depth so that residuals are in pixels.
            f(Vector3::new(k.fu, 0.0, -(du + flow.x)) / *z, flow.x);
            f(Vector3::new(0.0, k.fv, -(dv + flow.y)) / *z, flow.y);
        }
    }

    /// Least-squares `a = R⁻¹ t` for rotation `r`.
    fn solve_relations(&self, r: &Matrix3<f64>) -> Option<Vector3<f64>> {
        let mut ata = Matrix3::zeros();
        let mut atb = Vector3::zeros();
        self.for_each_relation(r, |row, rhs| {
            ata += row * row.transpose();
            atb += row * rhs;
        });
        let a = ata.cholesky()?.solve(&atb);
        a.iter().all(|x| x.is_finite()).then_some(a)
    }

    /// Least-squares translation for rotation `r`.
    fn solve_translation(&self, r: &Matrix3<f64>) -> Option<Vector3<f64>> {
        self.solve_relations(r).map(|a| r * a)
    }

    /// Mean squared residual of the linear flow relations with the
    /// translation eliminated. Zero at the true rotation on exact data and
    /// smooth in the rotation, unlike the angular losses.
    fn relation_residual(&self, r: &Matrix3<f64>) -> f64 {
        let Some(a) = self.solve_relations(r) else {
            return f64::INFINITY;
        };
        let mut stats = RunningStats::default();
        self.for_each_relation(r, |row, rhs| stats.push((row.dot(&a) - rhs).powi(2)));
        if stats.count() < self.cells.len() {
            return f64::INFINITY;
        }
        stats.mean()
    }

    /// `(L_pla, ∂L_pla/∂t)`, `(L_axi, ∂L_axi/∂t)` and the usable pixel
    /// counts. Undefined losses are 0.
    #[allow(clippy::type_complexity)]
    fn raw(
        &self,
        r: &Matrix3<f64>,
        t: &Vector3<f64>,
        gradient: bool,
    ) -> ((f64, Vector3<f64>), (f64, Vector3<f64>), usize, usize) {
        let k = &self.points.intrinsics;
        let p0 = k.principal_point();
        let r_inv = r.transpose();
        let base = r_inv * t;
        let t_tan = Vector3::new(t.x, t.y, 0.0);
        let t_rad = Vector3::new(0.0, 0.0, t.z);
        let offset_pla = base - t_tan;
        let offset_axi = base - t_rad;
        // dq/dt for each alignment.
        let dq_pla = -r_inv + Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
        let dq_axi = -r_inv + Matrix3::from_diagonal(&Vector3::new(0.0, 0.0, 1.0));

        // Flow and its Jacobian w.r.t. t (2×3), or None when not projectable.
        let flow = |q: Vector3<f64>, p: &Vector2<f64>, dq: &Matrix3<f64>| {
            if q.z <= DENOM_EPS || !q.z.is_finite() {
                return None;
            }
            let f = Vector2::new(k.fu * q.x / q.z + k.u0, k.fv * q.y / q.z + k.v0) - p;
            let jac = gradient.then(|| {
                let proj = nalgebra::Matrix2x3::new(
                    k.fu / q.z,
                    0.0,
                    -k.fu * q.x / (q.z * q.z),
                    0.0,
                    k.fv / q.z,
                    -k.fv * q.y / (q.z * q.z),
                );
                proj * dq
            });
            Some((f, jac))
        };

        let mut pla = RunningStats::default();
        let mut pla_grad_theta = Vector3::zeros();
        let mut pla_grad = Vector3::zeros();
        let mut axi = RunningStats::default();
        let mut axi_grad = Vector3::zeros();
        for (p, point, _) in &self.cells {
            let a = r_inv * point;
            if self.use_pla {
                if let Some((f, jac)) = flow(a - offset_pla, p, &dq_pla) {
                    if f.norm() > FLOW_EPS {
                        let y = f.y.abs();
                        let theta = y.atan2(f.x);
                        pla.push(theta);
                        if let Some(j) = jac {
                            let n2 = f.norm_squared();
                            let dtheta_df = Vector2::new(-y / n2, f.y.signum() * f.x / n2);
                            let g = j.transpose() * dtheta_df;
                            pla_grad_theta += theta * g;
                            pla_grad += g;
                        }
                    }
                }
            }
            if self.use_axi {
                if let Some((f, jac)) = flow(a - offset_axi, p, &dq_axi) {
                    let d = p - p0;
                    if f.norm() > FLOW_EPS && d.norm() > FLOW_EPS {
                        let cross = f.x * d.y - f.y * d.x;
                        let dot = f.dot(&d);
                        axi.push(cross.abs().atan2(dot.abs()));
                        if let Some(j) = jac {
                            let n2 = cross * cross + dot * dot;
                            let dcross = cross.signum() * Vector2::new(d.y, -d.x);
                            let ddot = dot.signum() * d;
                            let dtheta_df = (dot.abs() * dcross - cross.abs() * ddot) / n2;
                            axi_grad += j.transpose() * dtheta_df;
                        }
                    }
                }
            }
        }
        let mut pla_out = (0.0, Vector3::zeros());
        if pla.count() >= 2 {
            let n = pla.count() as f64;
            pla_out = (
                pla.population_variance(),
                2.0 / n * pla_grad_theta - 2.0 * pla.mean() / n * pla_grad,
            );
        }
        let mut axi_out = (0.0, Vector3::zeros());
        if axi.count() > 0 {
            axi_out = (axi.mean(), axi_grad / axi.count() as f64);
        }
        (pla_out, axi_out, pla.count(), axi.count())
    }
}

struct State {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    losses: Losses,
}

fn apply(
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
    x: &[f64; 6],
    cfg: &RefineConfig,
) -> (Matrix3<f64>, Vector3<f64>) {
    let w = Vector3::new(x[0], x[1], x[2]) * cfg.step_rotation;
    let dt = Vector3::new(x[3], x[4], x[5]) * cfg.step_translation;
    (rotation_from_vector(&w) * rotation, translation + dt)
}

fn record(iteration: usize, s: &State, radius: f64) -> IterationRecord {
    let w = rotation_to_vector(&s.rotation);
    IterationRecord {
        iteration,
        loss_pla: s.losses.pla,
        loss_axi: s.losses.axi,
        objective: s.losses.objective,
        rotation_vector: [w.x, w.y, w.z],
        translation: [s.translation.x, s.translation.y, s.translation.z],
        radius,
    }
}

/// Smallest trust radius (step units) tried before giving up.
const MIN_RADIUS: f64 = 1e-9;
const MAX_RADIUS: f64 = 1e4;

/// Refines `init` by minimizing the configured alignment objective over
/// the correspondences.
pub fn refine_pose(
    corr: &CorrespondenceSet,
    init: &SE3Pose,
    cfg: &RefineConfig,
) -> Result<RefineTrace> {
    cfg.validate()?;
    check_rotation(init.rotation())?;
    let points = backproject_source(corr);
    let mut eval = Evaluator::new(&points, &corr.depth_t, cfg.objective);
    eval.calibrate(init.rotation(), init.translation());
    if !eval.use_pla && !eval.use_axi {
        return Err(Error::Initialization(
            "no alignment loss is defined at the initial pose".into(),
        ));
    }
    let losses = eval.evaluate(init.rotation(), init.translation());
    if !losses.objective.is_finite() {
        return Err(Error::Initialization(format!(
            "objective at the initial pose is {}",
            losses.objective
        )));
    }
    if eval.cells.is_empty() {
        return Err(Error::Initialization("no valid correspondence".into()));
    }
    let mut run = Run {
        eval: &eval,
        cfg,
        state: State {
            rotation: *init.rotation(),
            translation: *init.translation(),
            losses,
        },
        records: Vec::new(),
        iterations: 0,
        converged: false,
        warm_start: false,
    };
    run.records.push(record(0, &run.state, 1.0));
    let translation_free = cfg.free[3..].iter().all(|&f| f);
    let rotation_free = cfg.free[..3].iter().any(|&f| f);
    if translation_free && rotation_free {
        // Rotation only, translation re-solved for every trial rotation.
        let reduced = |s: &State, x: &[f64; 6]| {
            let w = Vector3::new(x[0], x[1], x[2]) * cfg.step_rotation;
            let r = rotation_from_vector(&w) * s.rotation;
            let t = eval.solve_translation(&r).unwrap_or(s.translation);
            (r, t)
        };
        let mut mask = cfg.free;
        mask[3..].fill(false);

        // The angular losses have narrow basins in rotation. Start from the
        // rotation that best explains the flow linearly, and keep it only if
        // it lowers the actual objective.
        let warm_cfg = RefineConfig {
            max_iters: cfg.max_iters / 2,
            ..*cfg
        };
        let mut warm = Run {
            eval: &eval,
            cfg: &warm_cfg,
            state: State {
                rotation: *init.rotation(),
                translation: *init.translation(),
                losses: Losses {
                    pla: f64::NAN,
                    axi: f64::NAN,
                    objective: eval.relation_residual(init.rotation()),
                },
            },
            records: Vec::new(),
            iterations: 0,
            converged: false,
            warm_start: true,
        };
        warm.descend(&reduced, mask, false);
        run.iterations += warm.iterations;
        let (r, t) = (warm.state.rotation, warm.state.translation);
        let losses = eval.evaluate(&r, &t);
        if losses.objective < run.state.losses.objective {
            run.state = State {
                rotation: r,
                translation: t,
                losses,
            };
            run.records.push(record(run.iterations, &run.state, 1.0));
        }
        run.descend(&reduced, mask, false);
    }
    if !run.converged {
        let full = |s: &State, x: &[f64; 6]| apply(&s.rotation, &s.translation, x, cfg);
        run.descend(&full, cfg.free, cfg.gradient_mode == GradientMode::AnalyticTranslational);
    }
    if run.state.losses.objective <= cfg.convergence_tol {
        run.converged = true;
    }
    Ok(RefineTrace {
        final_pose: SE3Pose::new(run.state.rotation, run.state.translation)?,
        records: run.records,
        converged: run.converged,
        iterations: run.iterations,
    })
}

fn dot(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Polak–Ribière direction with automatic restart: `−g + β d_prev`,
/// `β = max(0, gᵀ(g − g_prev) / |g_prev|²)`, falling back to `−g` when that
/// is not a descent direction.
fn conjugate_direction(g: &[f64; 6], prev: Option<&([f64; 6], [f64; 6])>) -> [f64; 6] {
    let steepest = g.map(|x| -x);
    let Some((g_prev, d_prev)) = prev else {
        return steepest;
    };
    let gg = dot(g_prev, g_prev);
    if gg == 0.0 {
        return steepest;
    }
    let diff: [f64; 6] = std::array::from_fn(|i| g[i] - g_prev[i]);
    let beta = (dot(g, &diff) / gg).max(0.0);
    let d: [f64; 6] = std::array::from_fn(|i| steepest[i] + beta * d_prev[i]);
    if dot(&d, g) < 0.0 {
        d
    } else {
        steepest
    }
}

type Propose<'p> = dyn Fn(&State, &[f64; 6]) -> (Matrix3<f64>, Vector3<f64>) + 'p;

struct Run<'a> {
    eval: &'a Evaluator<'a>,
    cfg: &'a RefineConfig,
    state: State,
    records: Vec<IterationRecord>,
    iterations: usize,
    converged: bool,
    /// Descends the linear-relation residual instead of the losses.
    warm_start: bool,
}

impl Run<'_> {
    fn score(&self, r: &Matrix3<f64>, t: &Vector3<f64>) -> Losses {
        if self.warm_start {
            Losses {
                pla: f64::NAN,
                axi: f64::NAN,
                objective: self.eval.relation_residual(r),
            }
        } else {
            self.eval.evaluate(r, t)
        }
    }

    fn try_step(&self, propose: &Propose, x: &[f64; 6]) -> Option<State> {
        let (r, t) = propose(&self.state, x);
        let l = self.score(&r, &t);
        (l.objective < self.state.losses.objective).then_some(State {
            rotation: r,
            translation: t,
            losses: l,
        })
    }

    /// Line-searched descent over the parameters in `mask` until the
    /// iteration budget is spent, the objective reaches the tolerance, or
    /// no decrease can be found.
    fn descend(&mut self, propose: &Propose, mask: [bool; 6], analytic: bool) {
        let cfg = self.cfg;
        let mut radius: f64 = 1.0;
        let mut prev: Option<([f64; 6], [f64; 6])> = None;
        while self.iterations < cfg.max_iters {
            if self.state.losses.objective <= cfg.convergence_tol {
                self.converged = true;
                return;
            }
            self.iterations += 1;
            let g = self.gradient(propose, mask, analytic, radius.clamp(1e-6, 1.0));
            let d = conjugate_direction(&g, prev.as_ref());
            let norm = dot(&d, &d).sqrt();

            let mut accepted = None;
            if norm > 0.0 && norm.is_finite() {
                let mut r = radius;
                while r >= MIN_RADIUS {
                    let x = d.map(|di| r * di / norm);
                    if let Some(s) = self.try_step(propose, &x) {
                        accepted = Some((s, r));
                        break;
                    }
                    r *= cfg.line_search_shrink;
                }
            }
            prev = accepted.is_some().then_some((g, d));
            if accepted.is_none() {
                accepted = self.pattern_search(propose, mask, radius);
            }
            let Some((next, r)) = accepted else {
                return;
            };
            let moved = (next.rotation - self.state.rotation)
                .amax()
                .max((next.translation - self.state.translation).amax());
            self.state = next;
            radius = (2.0 * r).min(MAX_RADIUS);
            self.records.push(record(self.iterations, &self.state, radius));
            if moved < cfg.convergence_tol {
                self.converged = true;
                return;
            }
        }
    }

    fn gradient(&self, propose: &Propose, mask: [bool; 6], analytic: bool, h: f64) -> [f64; 6] {
        let mut g = [0.0; 6];
        let fd_count = if analytic { 3 } else { 6 };
        for i in (0..fd_count).filter(|&i| mask[i]) {
            let mut x = [0.0; 6];
            x[i] = h;
            let (r, t) = propose(&self.state, &x);
            let plus = self.score(&r, &t).objective;
            x[i] = -h;
            let (r, t) = propose(&self.state, &x);
            let minus = self.score(&r, &t).objective;
            g[i] = (plus - minus) / (2.0 * h);
        }
        if analytic {
            let s = &self.state;
            let (_, gt) = self.eval.evaluate_with_gradient(&s.rotation, &s.translation, true);
            for i in (0..3).filter(|&i| mask[3 + i]) {
                // Chain rule into step units.
                g[3 + i] = gt[i] * self.cfg.step_translation;
            }
        }
        g
    }

    fn pattern_search(&self, propose: &Propose, mask: [bool; 6], radius: f64) -> Option<(State, f64)> {
        let mut r = radius;
        while r >= MIN_RADIUS {
            for i in (0..6).filter(|&i| mask[i]) {
                for sign in [1.0, -1.0] {
                    let mut x = [0.0; 6];
                    x[i] = sign * r;
                    if let Some(next) = self.try_step(propose, &x) {
                        return Some((next, r));
                    }
                }
            }
            r *= self.cfg.line_search_shrink;
        }
        None
    }
}

/// Translation from the correspondences given a rotation, without
/// iterating.
///
/// With the rotation compensated and no translation removed, each pixel's
/// flow obeys two relations linear in `a = R̂⁻¹ t`:
///
/// ```text
/// f_u a_x − (u − u_0 + f_x) a_z = f_x z
/// f_v a_y − (v − v_0 + f_y) a_z = f_y z
/// ```
///
/// Their least-squares solution gives a first estimate `t = R̂ a`. The flows
/// are then re-aligned with it and the translation is read off the ratio
/// maps as `E[ẑ / ρ]`. Components whose ratio mask is empty come back as
/// `None`.
pub fn recover_translation_closed_form(
    corr: &CorrespondenceSet,
    rotation: &Matrix3<f64>,
    depth: &DepthMap,
) -> Result<RecoveredTranslation> {
    check_rotation(rotation)?;
    let rot_only = decompose_motion(&SE3Pose::new(*rotation, Vector3::zeros())?)?;
    let flows = aligned_flows(corr, &rot_only)?;
    let k = *corr.intrinsics();
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    let mut rows = 0usize;
    for (u, v, f) in flows.coplanar.valid_vectors() {
        let z = depth.at(u, v);
        let (du, dv) = (u as f64 - k.u0, v as f64 - k.v0);
        for (row, rhs) in [
            (Vector3::new(k.fu, 0.0, -(du + f.x)), f.x * z),
            (Vector3::new(0.0, k.fv, -(dv + f.y)), f.y * z),
        ] {
            ata += row * row.transpose();
            atb += row * rhs;
            rows += 1;
        }
    }
    if rows < 3 {
        return Ok(RecoveredTranslation {
            components: [None; 3],
        });
    }
    let a = ata
        .cholesky()
        .map(|c| c.solve(&atb))
        .or_else(|| ata.try_inverse().map(|m| m * atb))
        .ok_or_else(|| Error::DegenerateMotion("translation normal equations are singular".into()))?;
    let t = rotation * a;
    let est = decompose_motion(&SE3Pose::new(*rotation, t)?)?;
    let flows = aligned_flows(corr, &est)?;
    let ratios = ratio_maps(&flows, &k);
    let mut rec = recover_translation(&ratios, depth)?;
    // An axis with no measurable motion has no ratio pixels; the linear
    // estimate already says it is (numerically) zero.
    for i in 0..3 {
        if rec.components[i].is_none() && t[i].abs() < 1e-8 {
            rec.components[i] = Some(t[i]);
        }
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::rigid_flow;
    use crate::grid::Grid;
    use crate::geometry::CameraIntrinsics;
    use crate::losses::{loss_axi, loss_pla};

    fn scene(pose: &SE3Pose) -> CorrespondenceSet {
        let k = CameraIntrinsics::kitti_like(64, 24).unwrap();
        let dt = DepthMap::new(
            Grid::from_fn(64, 24, |u, v| 6.0 + 0.08 * u as f64 + 0.3 * (0.4 * v as f64).sin()),
            k,
        )
        .unwrap();
        let flow = rigid_flow(&dt, pose).unwrap();
        // Source depth at each match is the z of the transformed point.
        let zs = Grid::from_fn(64, 24, |u, v| {
            let p = k.backproject(u as f64, v as f64, dt.at(u, v));
            pose.transform_point(&p).z
        });
        let masked = crate::alignment::MaskedDepth {
            valid: flow.valid.clone(),
            values: zs,
        };
        CorrespondenceSet::new(flow, dt.clone(), dt, None)
            .unwrap()
            .with_aligned_source_depth(masked)
            .unwrap()
    }

    fn truth() -> SE3Pose {
        SE3Pose::from_parts(Vector3::new(0.01, -0.02, 0.005), Vector3::new(0.3, -0.1, 0.8)).unwrap()
    }

    #[test]
    fn evaluator_matches_loss_functions() {
        let corr = scene(&truth());
        let est = SE3Pose::from_parts(Vector3::new(0.012, -0.018, 0.004), Vector3::new(0.28, -0.09, 0.85))
            .unwrap();
        let flows = aligned_flows(&corr, &decompose_motion(&est).unwrap()).unwrap();
        let pla = loss_pla(&flows.coplanar).unwrap();
        let axi = loss_axi(&flows.coaxial, corr.intrinsics()).unwrap();
        let points = backproject_source(&corr);
        let l = Evaluator::new(&points, &corr.depth_t, Objective::Both).evaluate(est.rotation(), est.translation());
        assert!((l.pla - pla).abs() < 1e-14);
        assert!((l.axi - axi).abs() < 1e-14);
    }

    #[test]
    fn analytic_translation_gradient_matches_differences() {
        let corr = scene(&truth());
        let est = SE3Pose::from_parts(Vector3::new(0.012, -0.018, 0.004), Vector3::new(0.28, -0.09, 0.85))
            .unwrap();
        let points = backproject_source(&corr);
        let eval = Evaluator::new(&points, &corr.depth_t, Objective::Both);
        let (_, g) = eval.evaluate_with_gradient(est.rotation(), est.translation(), true);
        let h = 1e-6;
        for i in 0..3 {
            let mut tp = *est.translation();
            tp[i] += h;
            let mut tm = *est.translation();
            tm[i] -= h;
            let fd = (eval.evaluate(est.rotation(), &tp).objective
                - eval.evaluate(est.rotation(), &tm).objective)
                / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * fd.abs().max(1e-3), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn truth_is_a_fixed_point() {
        let corr = scene(&truth());
        let trace = refine_pose(&corr, &truth(), &RefineConfig::for_init(&truth())).unwrap();
        assert!(trace.converged);
        assert!(trace.iterations <= 1);
        assert!(trace.final_pose.frobenius_distance(&truth()) < 1e-9);
    }

    #[test]
    fn descent_is_monotone_and_recovers_rotation() {
        let corr = scene(&truth());
        let init = SE3Pose::new(
            rotation_from_vector(&Vector3::new(0.0, 0.02, 0.0)) * truth().rotation(),
            *truth().translation() * 1.05,
        )
        .unwrap();
        let trace = refine_pose(&corr, &init, &RefineConfig::for_init(&init)).unwrap();
        for w in trace.records.windows(2) {
            assert!(w[1].objective < w[0].objective);
        }
        let err = crate::geometry::rotation_angle_between(trace.final_pose.rotation(), truth().rotation());
        assert!(err.to_degrees() < 0.05, "rotation error {}", err.to_degrees());
    }

    #[test]
    fn closed_form_translation_exact_rotation() {
        let corr = scene(&truth());
        let rec = recover_translation_closed_form(&corr, truth().rotation(), &corr.depth_t).unwrap();
        let t = *truth().translation();
        assert!((rec.vector() - t).norm() / t.norm() < 1e-6);
    }

    #[test]
    fn closed_form_translation_zero_motion() {
        let pose = SE3Pose::from_parts(Vector3::new(0.0, 0.01, 0.0), Vector3::zeros()).unwrap();
        let corr = scene(&pose);
        let rec = recover_translation_closed_form(&corr, pose.rotation(), &corr.depth_t).unwrap();
        assert!(rec.vector().amax() < 1e-8);
    }

    #[test]
    fn config_validation() {
        let mut cfg = RefineConfig::default();
        cfg.max_iters = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = RefineConfig::default();
        cfg.line_search_shrink = 1.0;
        assert!(cfg.validate().is_err());
    }
}
