//! Quasi-static contact model for the exploratory swipe and flip attempts.
//!
//! The swipe synthesizes a six-axis force/torque reading from the top sheet's
//! friction, bending stiffness and the stack beneath it. A flip attempt
//! resolves how many layers the gripper detaches: the commanded approach depth
//! is compared against an engagement window around the top sheet, alignment
//! and peel angle set the single-layer success probability, and inter-sheet
//! adhesion can drag a second sheet along.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FlipError, Result};
use crate::rng::SimRng;
use crate::scene::{FlipAction, Lambda, PaperSpec, SceneConfig, Sheet, StackState};

/// Reference static friction (printer paper mean).
pub const MU_REF: f64 = 0.462;
/// Reference thickness, mm (printer paper mean).
pub const T_REF_MM: f64 = 0.096;
/// Relative stiffening of the contact per sheet remaining underneath.
pub const STACK_SUPPORT_GAIN: f64 = 0.02;
/// Upper end of the peel-angle range, degrees.
pub const THETA_MAX_DEG: f64 = 3.0;

/// Which stiffness sets the optimal peel angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeelReference {
    /// Bending stiffness of the top sheet alone.
    TopSheet,
    /// Top-sheet stiffness scaled by the stack support factor, i.e. the same
    /// effective stiffness the swipe's normal force responds to.
    #[default]
    Effective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsParams {
    /// N per kPa of finger pressure.
    pub pressure_to_force: f64,
    /// kPa
    pub swipe_pressure: f64,
    /// mm
    pub lever_arm: f64,
    /// N (also used, numerically, for the N·mm torque channel mz)
    pub ft_noise_sigma: f64,
    /// mm
    pub window_width_base: f64,
    /// mm
    pub misalign_sigma: f64,
    /// degrees per GPa·mm³
    pub theta_opt_scale: f64,
    pub vdw_base_prob: f64,
    pub gravity_tilt_gain: f64,
    /// Stiffness normalization s₀ of the swipe normal-force response, GPa·mm³.
    pub stiffness_ref: f64,
    pub peel_reference: PeelReference,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        PhysicsParams {
            pressure_to_force: 0.05,
            swipe_pressure: 100.0,
            lever_arm: 20.0,
            ft_noise_sigma: 0.02,
            window_width_base: 0.35,
            misalign_sigma: 1.5,
            theta_opt_scale: 600.0,
            vdw_base_prob: 0.02,
            gravity_tilt_gain: 0.3,
            stiffness_ref: PaperSpec::printer().mean_stiffness(),
            peel_reference: PeelReference::Effective,
        }
    }
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("pressure_to_force", self.pressure_to_force),
            ("swipe_pressure", self.swipe_pressure),
            ("lever_arm", self.lever_arm),
            ("ft_noise_sigma", self.ft_noise_sigma),
            ("window_width_base", self.window_width_base),
            ("misalign_sigma", self.misalign_sigma),
            ("theta_opt_scale", self.theta_opt_scale),
            ("vdw_base_prob", self.vdw_base_prob),
            ("gravity_tilt_gain", self.gravity_tilt_gain),
            ("stiffness_ref", self.stiffness_ref),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(FlipError::Config(format!(
                    "physics parameter {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.stiffness_ref == 0.0 {
            return Err(FlipError::Config("stiffness_ref must be positive".into()));
        }
        Ok(())
    }

    pub fn noise_free(&self) -> Self {
        PhysicsParams {
            ft_noise_sigma: 0.0,
            ..self.clone()
        }
    }

    /// Normal force of the pressurized finger, N.
    pub fn normal_force(&self) -> f64 {
        self.pressure_to_force * self.swipe_pressure
    }

    /// Optimal peel angle for the current top sheet, degrees in [0, 3].
    pub fn optimal_theta(&self, state: &StackState) -> Option<f64> {
        let top = state.top()?;
        let stiffness = match self.peel_reference {
            PeelReference::TopSheet => top.stiffness,
            PeelReference::Effective => effective_stiffness(top, state.remaining()),
        };
        Some((self.theta_opt_scale * stiffness).clamp(0.0, THETA_MAX_DEG))
    }

    /// Engagement window `[d_lo, d_hi]` around the top sheet, mm.
    pub fn engagement_window(&self, top: &Sheet, tilt_rad: f64) -> (f64, f64) {
        let center = 0.5 * top.thickness;
        let width = self.window_width(top.mu_s, tilt_rad);
        (center - 0.5 * width, center + 0.5 * width)
    }

    pub fn window_width(&self, mu_s: f64, tilt_rad: f64) -> f64 {
        self.window_width_base * (mu_s / MU_REF) * tilt_rad.cos()
    }

    /// Probability that a correctly engaged single sheet drags the next one along.
    pub fn adhesion_probability(&self, top: &Sheet) -> f64 {
        (self.vdw_base_prob * (MU_REF / top.mu_s) * (T_REF_MM / top.thickness)).clamp(0.0, 1.0)
    }
}

/// Stiffness felt through the top sheet with `remaining` sheets in the stack.
pub fn effective_stiffness(top: &Sheet, remaining: usize) -> f64 {
    top.stiffness * (1.0 + STACK_SUPPORT_GAIN * remaining as f64)
}

/// Raw force/torque reading after a swipe. Forces in N, torques in N·mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwipeResult {
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
    pub mx: f64,
    pub my: f64,
    pub mz: f64,
    /// Height of the contacted surface above the table, mm.
    pub contact_height: f64,
}

impl SwipeResult {
    pub fn channels(&self) -> [f64; 6] {
        [self.fx, self.fy, self.fz, self.mx, self.my, self.mz]
    }
}

fn require_sheets(state: &StackState) -> Result<&Sheet> {
    state
        .top()
        .ok_or_else(|| FlipError::Precondition("the stack is empty".into()))
}

/// Exploratory swipe on the top sheet. Consumes exactly four normal draws.
pub fn swipe(
    state: &StackState,
    config: &SceneConfig,
    params: &PhysicsParams,
    rng: &mut SimRng,
) -> Result<SwipeResult> {
    let top = require_sheets(state)?;
    let sigma = params.ft_noise_sigma;
    let mut eps = || sigma * rng.sample::<f64, _>(StandardNormal);
    let (e_x, e_y, e_z, e_mz) = (eps(), eps(), eps(), eps());

    let n = params.normal_force();
    let tilt = config.tilt_rad();
    let s_eff = effective_stiffness(top, state.remaining());

    let fz = -n * (1.0 - (-s_eff / params.stiffness_ref).exp()) + e_z;
    let fx = top.mu_s * n * tilt.cos() + e_x;
    let fy = params.gravity_tilt_gain * n * tilt.sin() + e_y;
    let result = SwipeResult {
        fx,
        fy,
        fz,
        mx: fy * params.lever_arm,
        my: -fx * params.lever_arm,
        mz: e_mz,
        contact_height: state.stack_height(),
    };
    if result.channels().iter().any(|v| !v.is_finite()) {
        return Err(FlipError::Numeric("swipe reading".into()));
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlipOutcome {
    pub layers: usize,
}

impl FlipOutcome {
    pub fn is_single(&self) -> bool {
        self.layers == 1
    }
}

/// Resolves one flip attempt. Always consumes exactly two uniform draws so
/// that different actions on the same stream see common random numbers.
pub fn attempt_flip(
    state: &StackState,
    action: &FlipAction,
    config: &SceneConfig,
    params: &PhysicsParams,
    rng: &mut SimRng,
) -> Result<FlipOutcome> {
    let top = *require_sheets(state)?;
    let u_grip: f64 = rng.random();
    let u_stick: f64 = rng.random();
    let remaining = state.remaining();

    if action.lambda() == Lambda::Open {
        return Ok(FlipOutcome { layers: 0 });
    }

    let d = action.decode_z();
    let (d_lo, d_hi) = params.engagement_window(&top, config.tilt_rad());
    let mut layers = if d < d_lo {
        0
    } else if d <= d_hi {
        let p = single_layer_probability(state, action, params);
        usize::from(u_grip < p)
    } else {
        let below = state.sheets().get(1).unwrap_or(&top).thickness;
        let extra = ((d - d_hi) / below).ceil() as usize;
        (1 + extra).min(remaining)
    };

    if layers == 1 && remaining >= 2 && u_stick < params.adhesion_probability(&top) {
        layers = 2;
    }
    Ok(FlipOutcome { layers })
}

/// Probability of detaching the top sheet once the fingertips are inside the
/// engagement window.
pub fn single_layer_probability(state: &StackState, action: &FlipAction, params: &PhysicsParams) -> f64 {
    let Some(theta_opt) = params.optimal_theta(state) else {
        return 0.0;
    };
    let x = action.decode_x();
    let align = if params.misalign_sigma > 0.0 {
        (-x * x / (2.0 * params.misalign_sigma * params.misalign_sigma)).exp()
    } else if x == 0.0 {
        1.0
    } else {
        0.0
    };
    let dt = action.decode_theta() - theta_opt;
    align * (-0.5 * dt * dt).exp()
}

/// Removes the detached layers and advances the page counter.
pub fn apply_outcome(state: &StackState, outcome: FlipOutcome) -> Result<StackState> {
    let mut next = state.clone();
    next.remove_top(outcome.layers)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::scene::{new_scene, Scenario};

    fn cfg(paper: PaperSpec, tilt: f64, seed: u64) -> SceneConfig {
        SceneConfig::new(Scenario::Book, paper, tilt, seed)
    }

    fn mean_stack(paper: &PaperSpec, n: usize) -> StackState {
        let c = SceneConfig {
            sheet_count: n,
            ..cfg(paper.deterministic(), 0.0, 0)
        };
        new_scene(&c).unwrap()
    }

    fn center_action(theta_bin: usize) -> FlipAction {
        FlipAction::new(6, 6, theta_bin, Lambda::Close).unwrap()
    }

    #[test]
    fn no_tilt_means_no_lateral_force() {
        let p = PhysicsParams::default().noise_free();
        let c = cfg(PaperSpec::printer(), 0.0, 1);
        let s = new_scene(&c).unwrap();
        let r = swipe(&s, &c, &p, &mut stream(3)).unwrap();
        assert_eq!(r.fy, 0.0);
        assert_eq!(r.mx, 0.0);
        assert_eq!(r.mz, 0.0);
        assert!(r.fz < 0.0);
        assert!(r.contact_height > 0.0);
    }

    #[test]
    fn fx_grows_with_static_friction() {
        let p = PhysicsParams::default().noise_free();
        let mut lo = PaperSpec::printer().deterministic();
        lo.static_friction.mean = 0.3;
        lo.kinetic_friction.mean = 0.2;
        let hi = PaperSpec::printer().deterministic();
        let c = cfg(lo.clone(), 10.0, 0);
        let a = swipe(&mean_stack(&lo, 5), &c, &p, &mut stream(0)).unwrap();
        let b = swipe(&mean_stack(&hi, 5), &c, &p, &mut stream(0)).unwrap();
        assert!(b.fx > a.fx);
    }

    #[test]
    fn fz_separates_top_and_bottom_of_book() {
        let p = PhysicsParams::default();
        let c = cfg(PaperSpec::printer(), 0.0, 0);
        let full = mean_stack(&PaperSpec::printer(), 50);
        let last = mean_stack(&PaperSpec::printer(), 1);
        let q = p.noise_free();
        let a = swipe(&full, &c, &q, &mut stream(0)).unwrap();
        let b = swipe(&last, &c, &q, &mut stream(0)).unwrap();
        // Oracle: fz = -N (1 - exp(-(1 + 0.02 r))) at the calibration material.
        let n = 5.0;
        let expect = |r: f64| -n * (1.0 - (-(1.0 + 0.02 * r)).exp());
        assert!((a.fz - expect(50.0)).abs() < 1e-12);
        assert!((b.fz - expect(1.0)).abs() < 1e-12);
        assert!((a.fz - b.fz).abs() > 3.0 * p.ft_noise_sigma);
        assert!((expect(50.0) - expect(1.0)).abs() > 1.1);
    }

    #[test]
    fn swipe_rejects_empty_stack() {
        let p = PhysicsParams::default();
        let c = cfg(PaperSpec::printer(), 0.0, 0);
        let empty = StackState::from_sheets(vec![]);
        assert!(matches!(
            swipe(&empty, &c, &p, &mut stream(0)),
            Err(FlipError::Precondition(_))
        ));
        let a = center_action(2);
        assert!(attempt_flip(&empty, &a, &c, &p, &mut stream(0)).is_err());
    }

    #[test]
    fn open_gripper_flips_nothing() {
        let p = PhysicsParams::default();
        let c = cfg(PaperSpec::printer(), 0.0, 0);
        let s = new_scene(&c).unwrap();
        let mut rng = stream(5);
        for a in FlipAction::all().filter(|a| a.lambda() == Lambda::Open) {
            assert_eq!(attempt_flip(&s, &a, &c, &p, &mut rng).unwrap().layers, 0);
        }
    }

    #[test]
    fn shallow_approach_misses() {
        let p = PhysicsParams::default();
        let c = cfg(PaperSpec::printer(), 0.0, 0);
        let s = new_scene(&c).unwrap();
        let a = FlipAction::new(6, 0, 2, Lambda::Close).unwrap();
        for seed in 0..50 {
            assert_eq!(attempt_flip(&s, &a, &c, &p, &mut stream(seed)).unwrap().layers, 0);
        }
    }

    #[test]
    fn deep_approach_grabs_many_layers() {
        let p = PhysicsParams::default();
        let c = cfg(PaperSpec::printer().deterministic(), 0.0, 0);
        let s = new_scene(&c).unwrap();
        let a = FlipAction::new(6, 7, 2, Lambda::Close).unwrap();
        let (_, d_hi) = p.engagement_window(s.top().unwrap(), 0.0);
        let expect = 1 + ((1.0 - d_hi) / 0.096).ceil() as usize;
        let out = attempt_flip(&s, &a, &c, &p, &mut stream(0)).unwrap();
        assert_eq!(out.layers, expect);
        let a = FlipAction::new(6, 12, 2, Lambda::Close).unwrap();
        assert_eq!(attempt_flip(&s, &a, &c, &p, &mut stream(0)).unwrap().layers, 50);
    }

    #[test]
    fn layers_are_monotone_in_depth() {
        let p = PhysicsParams::default();
        for seed in 0..200 {
            let c = cfg(PaperSpec::coated(), 20.0, seed);
            let s = new_scene(&c).unwrap();
            let mut prev = 0;
            for z in 0..13 {
                let a = FlipAction::new(5, z, 1, Lambda::Close).unwrap();
                let l = attempt_flip(&s, &a, &c, &p, &mut stream(seed)).unwrap().layers;
                assert!(l >= prev, "seed {seed}: z={z} gave {l} after {prev}");
                prev = l;
            }
        }
    }

    #[test]
    fn window_narrows_with_tilt() {
        let p = PhysicsParams::default();
        let mut prev = f64::INFINITY;
        for deg in [0.0, 1.0, 15.0, 30.0, 45.0, 60.0, 75.0, 89.0] {
            let w = p.window_width(0.462, f64::to_radians(deg));
            assert!(w < prev);
            prev = w;
        }
    }

    #[test]
    fn adhesion_is_stronger_on_slippery_thin_paper() {
        let p = PhysicsParams::default();
        let printer = mean_stack(&PaperSpec::printer(), 2);
        let coated = mean_stack(&PaperSpec::coated(), 2);
        let pp = p.adhesion_probability(printer.top().unwrap());
        let pc = p.adhesion_probability(coated.top().unwrap());
        assert!((pp - 0.02).abs() < 1e-12);
        assert!(pc > pp);
    }

    #[test]
    fn zero_misalignment_sigma_is_a_hard_gate() {
        let p = PhysicsParams {
            misalign_sigma: 0.0,
            ..PhysicsParams::default()
        };
        let s = mean_stack(&PaperSpec::printer(), 3);
        assert_eq!(single_layer_probability(&s, &FlipAction::new(7, 6, 2, Lambda::Close).unwrap(), &p), 0.0);
        assert!(single_layer_probability(&s, &center_action(2), &p) > 0.0);
    }

    #[test]
    fn peel_reference_switch() {
        let mut p = PhysicsParams::default();
        let s = mean_stack(&PaperSpec::printer(), 50);
        let top = s.top().unwrap().stiffness;
        p.peel_reference = PeelReference::TopSheet;
        assert!((p.optimal_theta(&s).unwrap() - 600.0 * top).abs() < 1e-12);
        p.peel_reference = PeelReference::Effective;
        assert!((p.optimal_theta(&s).unwrap() - (600.0 * top * 2.0).min(3.0)).abs() < 1e-12);
    }

    #[test]
    fn apply_outcome_advances_pages() {
        let c = cfg(PaperSpec::printer(), 0.0, 0);
        let s = new_scene(&c).unwrap();
        let same = apply_outcome(&s, FlipOutcome { layers: 0 }).unwrap();
        assert_eq!(same, s);
        let one = apply_outcome(&s, FlipOutcome { layers: 1 }).unwrap();
        assert_eq!(one.page_index(), 3);
        assert_eq!(one.sheets()[0], s.sheets()[1]);
        let two = apply_outcome(&s, FlipOutcome { layers: 2 }).unwrap();
        assert_eq!(two.page_index(), 5);
        assert!(matches!(
            apply_outcome(&s, FlipOutcome { layers: 51 }),
            Err(FlipError::Contract(_))
        ));
    }

    #[test]
    fn attempts_are_deterministic() {
        let p = PhysicsParams::default();
        let c = cfg(PaperSpec::plastic(), 30.0, 12);
        let s = new_scene(&c).unwrap();
        for a in FlipAction::all().step_by(37) {
            let x = attempt_flip(&s, &a, &c, &p, &mut stream(99)).unwrap();
            let y = attempt_flip(&s, &a, &c, &p, &mut stream(99)).unwrap();
            assert_eq!(x, y);
            let r1 = swipe(&s, &c, &p, &mut stream(99)).unwrap();
            let r2 = swipe(&s, &c, &p, &mut stream(99)).unwrap();
            assert_eq!(r1, r2);
        }
    }

    #[test]
    fn invalid_params_are_rejected() {
        let p = PhysicsParams {
            lever_arm: -1.0,
            ..PhysicsParams::default()
        };
        assert!(p.validate().is_err());
        let p = PhysicsParams {
            stiffness_ref: 0.0,
            ..PhysicsParams::default()
        };
        assert!(p.validate().is_err());
        PhysicsParams::default().validate().unwrap();
    }
}
