//! Paper types, scene configuration and the mutable sheet stack.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FlipError, Result};
use crate::rng::{derive_seed, stream, SimRng};

/// Default number of sheets in a book or box scene.
pub const DEFAULT_SHEET_COUNT: usize = 50;

/// Sampled values never drop below this fraction of the mean.
const CLAMP_FRACTION: f64 = 0.1;

/// Box scenes jitter each sheet in-plane by up to this many mm / degrees.
pub const BOX_JITTER_MM: f64 = 5.0;
pub const BOX_JITTER_DEG: f64 = 5.0;

/// A measured property: mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub mean: f64,
    pub stddev: f64,
}

impl Measured {
    pub const fn new(mean: f64, stddev: f64) -> Self {
        Measured { mean, stddev }
    }

    /// Gaussian draw clamped to at least 10% of the mean.
    fn sample(&self, rng: &mut SimRng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        (self.mean + self.stddev * z).max(CLAMP_FRACTION * self.mean)
    }
}

/// Physical properties of one paper type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperSpec {
    pub name: String,
    pub static_friction: Measured,
    pub kinetic_friction: Measured,
    /// GPa, machine direction.
    pub youngs_modulus: Measured,
    /// g/m².
    pub density: Measured,
    /// mm.
    pub thickness: Measured,
}

pub const PRESET_NAMES: [&str; 3] = ["printer", "coated", "plastic"];

impl PaperSpec {
    pub fn printer() -> Self {
        PaperSpec {
            name: "printer".into(),
            static_friction: Measured::new(0.462, 0.0087),
            kinetic_friction: Measured::new(0.417, 0.0542),
            youngs_modulus: Measured::new(2.84, 0.17),
            density: Measured::new(102.5, 2.32),
            thickness: Measured::new(0.096, 0.006),
        }
    }

    pub fn coated() -> Self {
        PaperSpec {
            name: "coated".into(),
            static_friction: Measured::new(0.283, 0.0104),
            kinetic_friction: Measured::new(0.174, 0.0229),
            youngs_modulus: Measured::new(2.62, 0.14),
            density: Measured::new(59.8, 0.93),
            thickness: Measured::new(0.057, 0.012),
        }
    }

    pub fn plastic() -> Self {
        PaperSpec {
            name: "plastic".into(),
            static_friction: Measured::new(0.334, 0.0066),
            kinetic_friction: Measured::new(0.259, 0.0263),
            youngs_modulus: Measured::new(1.54, 0.23),
            density: Measured::new(385.4, 1.74),
            thickness: Measured::new(0.151, 0.017),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "printer" => Ok(Self::printer()),
            "coated" => Ok(Self::coated()),
            "plastic" => Ok(Self::plastic()),
            other => Err(FlipError::Config(format!(
                "unknown paper preset {other:?} (expected one of {PRESET_NAMES:?})"
            ))),
        }
    }

    pub fn presets() -> [PaperSpec; 3] {
        [Self::printer(), Self::coated(), Self::plastic()]
    }

    /// A copy of this spec with every standard deviation set to zero.
    pub fn deterministic(&self) -> Self {
        let z = |m: Measured| Measured::new(m.mean, 0.0);
        PaperSpec {
            name: self.name.clone(),
            static_friction: z(self.static_friction),
            kinetic_friction: z(self.kinetic_friction),
            youngs_modulus: z(self.youngs_modulus),
            density: z(self.density),
            thickness: z(self.thickness),
        }
    }

    /// Bending stiffness E·t³ at the mean properties, GPa·mm³.
    pub fn mean_stiffness(&self) -> f64 {
        self.youngs_modulus.mean * self.thickness.mean.powi(3)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("static_friction", self.static_friction),
            ("kinetic_friction", self.kinetic_friction),
            ("youngs_modulus", self.youngs_modulus),
            ("density", self.density),
            ("thickness", self.thickness),
        ];
        for (field, m) in fields {
            if !(m.mean.is_finite() && m.mean > 0.0) {
                return Err(FlipError::Config(format!(
                    "paper {:?}: {field} mean must be positive, got {}",
                    self.name, m.mean
                )));
            }
            if !(m.stddev.is_finite() && m.stddev >= 0.0) {
                return Err(FlipError::Config(format!(
                    "paper {:?}: {field} stddev must be non-negative, got {}",
                    self.name, m.stddev
                )));
            }
        }
        if self.kinetic_friction.mean > self.static_friction.mean {
            return Err(FlipError::Config(format!(
                "paper {:?}: kinetic friction mean exceeds static friction mean",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Book,
    Box,
    SingleSheet,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Book, Scenario::Box, Scenario::SingleSheet];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Book => "book",
            Scenario::Box => "box",
            Scenario::SingleSheet => "single_sheet",
        }
    }

    pub fn default_sheet_count(&self) -> usize {
        match self {
            Scenario::SingleSheet => 1,
            _ => DEFAULT_SHEET_COUNT,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = FlipError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "book" => Ok(Scenario::Book),
            "box" => Ok(Scenario::Box),
            "single_sheet" | "single" => Ok(Scenario::SingleSheet),
            other => Err(FlipError::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub scenario: Scenario,
    pub paper: PaperSpec,
    pub tilt_deg: f64,
    pub sheet_count: usize,
    pub seed: u64,
}

impl SceneConfig {
    pub fn new(scenario: Scenario, paper: PaperSpec, tilt_deg: f64, seed: u64) -> Self {
        SceneConfig {
            scenario,
            paper,
            tilt_deg,
            sheet_count: scenario.default_sheet_count(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tilt_deg.is_finite() && (0.0..90.0).contains(&self.tilt_deg)) {
            return Err(FlipError::Config(format!(
                "tilt_deg must lie in [0, 90), got {}",
                self.tilt_deg
            )));
        }
        if self.sheet_count == 0 {
            return Err(FlipError::Config("sheet_count must be at least 1".into()));
        }
        if self.scenario == Scenario::SingleSheet && self.sheet_count != 1 {
            return Err(FlipError::Config(format!(
                "single_sheet scenario requires sheet_count = 1, got {}",
                self.sheet_count
            )));
        }
        self.paper.validate()
    }

    pub fn tilt_rad(&self) -> f64 {
        self.tilt_deg.to_radians()
    }
}

/// One sampled sheet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sheet {
    /// mm
    pub thickness: f64,
    pub mu_s: f64,
    pub mu_k: f64,
    /// GPa
    pub youngs_modulus: f64,
    /// E·t³, GPa·mm³
    pub stiffness: f64,
    /// In-plane offset of the sheet corner (mm), nonzero only in box scenes.
    pub offset: [f64; 2],
    /// In-plane rotation (degrees), nonzero only in box scenes.
    pub yaw_deg: f64,
}

impl Sheet {
    fn sample(paper: &PaperSpec, scenario: Scenario, rng: &mut SimRng) -> Sheet {
        let thickness = paper.thickness.sample(rng);
        let mut mu_s = paper.static_friction.sample(rng);
        let mut mu_k = paper.kinetic_friction.sample(rng);
        if mu_k > mu_s {
            std::mem::swap(&mut mu_s, &mut mu_k);
        }
        let youngs_modulus = paper.youngs_modulus.sample(rng);
        let (offset, yaw_deg) = match scenario {
            Scenario::Box => {
                let dx = rng.random_range(-BOX_JITTER_MM..=BOX_JITTER_MM);
                let dy = rng.random_range(-BOX_JITTER_MM..=BOX_JITTER_MM);
                let yaw = rng.random_range(-BOX_JITTER_DEG..=BOX_JITTER_DEG);
                ([dx, dy], yaw)
            }
            _ => ([0.0, 0.0], 0.0),
        };
        Sheet {
            thickness,
            mu_s,
            mu_k,
            youngs_modulus,
            stiffness: youngs_modulus * thickness.powi(3),
            offset,
            yaw_deg,
        }
    }
}

/// The stack of sheets still in play; index 0 is the top sheet.
#[derive(Debug, Clone, PartialEq)]
pub struct StackState {
    sheets: Vec<Sheet>,
    initial_count: usize,
    flipped_count: usize,
    page_index: u64,
    epoch: u64,
}

impl StackState {
    /// Builds a stack from explicit sheets (used by calibration sweeps and tests).
    pub fn from_sheets(sheets: Vec<Sheet>) -> Self {
        let initial_count = sheets.len();
        StackState {
            sheets,
            initial_count,
            flipped_count: 0,
            page_index: 1,
            epoch: 0,
        }
    }

    pub fn sheets(&self) -> &[Sheet] {
        &self.sheets
    }

    pub fn top(&self) -> Option<&Sheet> {
        self.sheets.first()
    }

    pub fn remaining(&self) -> usize {
        self.sheets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sheets.is_empty()
    }

    pub fn initial_count(&self) -> usize {
        self.initial_count
    }

    pub fn flipped_count(&self) -> usize {
        self.flipped_count
    }

    pub fn page_index(&self) -> u64 {
        self.page_index
    }

    /// Number of resets this scene has gone through.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Total height of the remaining sheets, mm.
    pub fn stack_height(&self) -> f64 {
        self.sheets.iter().map(|s| s.thickness).sum()
    }

    /// Removes `layers` sheets from the top and advances the page counter.
    pub(crate) fn remove_top(&mut self, layers: usize) -> Result<()> {
        if layers > self.sheets.len() {
            return Err(FlipError::Contract(format!(
                "cannot flip {layers} layers with {} sheets remaining",
                self.sheets.len()
            )));
        }
        self.sheets.drain(..layers);
        self.flipped_count += layers;
        self.page_index = 1 + 2 * self.flipped_count as u64;
        Ok(())
    }
}

fn sample_stack(config: &SceneConfig, seed: u64, epoch: u64) -> StackState {
    let mut rng = stream(seed);
    let sheets = (0..config.sheet_count)
        .map(|_| Sheet::sample(&config.paper, config.scenario, &mut rng))
        .collect();
    StackState {
        sheets,
        initial_count: config.sheet_count,
        flipped_count: 0,
        page_index: 1,
        epoch,
    }
}

/// Samples a fresh stack. Pure function of `config`.
pub fn new_scene(config: &SceneConfig) -> Result<StackState> {
    config.validate()?;
    Ok(sample_stack(config, config.seed, 0))
}

/// Seed used for the stack produced by the `epoch`-th reset.
pub fn reset_seed(base_seed: u64, epoch: u64) -> u64 {
    derive_seed(base_seed, epoch)
}

/// Returns the stack to page 1 with re-sampled sheets drawn from the next
/// seed in the chain.
pub fn reset_scene(state: &StackState, config: &SceneConfig) -> Result<StackState> {
    config.validate()?;
    let epoch = state.epoch + 1;
    Ok(sample_stack(config, reset_seed(config.seed, epoch), epoch))
}

pub fn page_number(state: &StackState) -> u64 {
    1 + 2 * state.flipped_count as u64
}

/// Gripper opening command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lambda {
    Close,
    Open,
}

impl Lambda {
    pub fn index(self) -> usize {
        match self {
            Lambda::Close => 0,
            Lambda::Open => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Lambda> {
        match i {
            0 => Some(Lambda::Close),
            1 => Some(Lambda::Open),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aperture {
    Open,
    Closed,
}

/// Continuous gripper displacement in the action frame: `x` along the
/// fingertip line, `z` along the approach line, `theta` about the plane normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GripperPose {
    pub x: f64,
    pub z: f64,
    pub theta: f64,
    pub aperture: Aperture,
}

pub const X_BINS: usize = 13;
pub const Z_BINS: usize = 13;
pub const THETA_BINS: usize = 4;
pub const LAMBDA_BINS: usize = 2;
pub const HEAD_SIZES: [usize; 4] = [X_BINS, Z_BINS, THETA_BINS, LAMBDA_BINS];
pub const ACTION_COUNT: usize = X_BINS * Z_BINS * THETA_BINS * LAMBDA_BINS;

const DISPLACEMENT_MIN_MM: f64 = -6.0;
const DISPLACEMENT_STEP_MM: f64 = 1.0;
const THETA_STEP_DEG: f64 = 1.0;

/// Discretized flip action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FlipAction {
    x_bin: u8,
    z_bin: u8,
    theta_bin: u8,
    lambda: Lambda,
}

impl FlipAction {
    pub fn new(x_bin: usize, z_bin: usize, theta_bin: usize, lambda: Lambda) -> Result<Self> {
        if x_bin >= X_BINS || z_bin >= Z_BINS || theta_bin >= THETA_BINS {
            return Err(FlipError::Argument(format!(
                "action bins out of range: x={x_bin} z={z_bin} theta={theta_bin}"
            )));
        }
        Ok(FlipAction {
            x_bin: x_bin as u8,
            z_bin: z_bin as u8,
            theta_bin: theta_bin as u8,
            lambda,
        })
    }

    /// Builds an action from per-head bin indices `[x, z, theta, lambda]`.
    pub fn from_bins(bins: [usize; 4]) -> Result<Self> {
        let lambda = Lambda::from_index(bins[3])
            .ok_or_else(|| FlipError::Argument(format!("lambda bin {} out of range", bins[3])))?;
        Self::new(bins[0], bins[1], bins[2], lambda)
    }

    pub fn bins(&self) -> [usize; 4] {
        [
            self.x_bin as usize,
            self.z_bin as usize,
            self.theta_bin as usize,
            self.lambda.index(),
        ]
    }

    pub fn x_bin(&self) -> usize {
        self.x_bin as usize
    }

    pub fn z_bin(&self) -> usize {
        self.z_bin as usize
    }

    pub fn theta_bin(&self) -> usize {
        self.theta_bin as usize
    }

    pub fn lambda(&self) -> Lambda {
        self.lambda
    }

    pub fn decode_x(&self) -> f64 {
        DISPLACEMENT_MIN_MM + self.x_bin as f64 * DISPLACEMENT_STEP_MM
    }

    pub fn decode_z(&self) -> f64 {
        DISPLACEMENT_MIN_MM + self.z_bin as f64 * DISPLACEMENT_STEP_MM
    }

    pub fn decode_theta(&self) -> f64 {
        self.theta_bin as f64 * THETA_STEP_DEG
    }

    pub fn pose(&self) -> GripperPose {
        GripperPose {
            x: self.decode_x(),
            z: self.decode_z(),
            theta: self.decode_theta(),
            aperture: match self.lambda {
                Lambda::Close => Aperture::Closed,
                Lambda::Open => Aperture::Open,
            },
        }
    }

    /// Flat index into the joint action grid, x-major.
    pub fn joint_index(&self) -> usize {
        let [x, z, t, l] = self.bins();
        ((x * Z_BINS + z) * THETA_BINS + t) * LAMBDA_BINS + l
    }

    pub fn from_joint_index(index: usize) -> Result<Self> {
        if index >= ACTION_COUNT {
            return Err(FlipError::Argument(format!("joint action {index} out of range")));
        }
        let l = index % LAMBDA_BINS;
        let t = (index / LAMBDA_BINS) % THETA_BINS;
        let z = (index / (LAMBDA_BINS * THETA_BINS)) % Z_BINS;
        let x = index / (LAMBDA_BINS * THETA_BINS * Z_BINS);
        Self::from_bins([x, z, t, l])
    }

    pub fn all() -> impl Iterator<Item = FlipAction> {
        (0..ACTION_COUNT).map(|i| Self::from_joint_index(i).expect("index in range"))
    }

    /// Bin whose decoded displacement is nearest `mm`, clamped to the range.
    pub fn nearest_displacement_bin(mm: f64) -> usize {
        let b = ((mm - DISPLACEMENT_MIN_MM) / DISPLACEMENT_STEP_MM).round();
        b.clamp(0.0, (X_BINS - 1) as f64) as usize
    }

    pub fn nearest_theta_bin(deg: f64) -> usize {
        (deg / THETA_STEP_DEG).round().clamp(0.0, (THETA_BINS - 1) as f64) as usize
    }
}
