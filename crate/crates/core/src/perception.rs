//! Synthetic exteroception (depth crop) and proprioception (normalized F/T).

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FlipError, Result};
use crate::physics::{swipe, PhysicsParams, SwipeResult};
use crate::rng::SimRng;
use crate::scene::{PaperSpec, Scenario, SceneConfig, StackState, DEFAULT_SHEET_COUNT};

/// Side length of the depth crop, pixels.
pub const CROP: usize = 60;
pub const CROP_PIXELS: usize = CROP * CROP;
/// Heightfield size (rows = cols), cells.
pub const GRID: usize = 96;
/// mm per heightfield cell.
pub const CELL_PITCH_MM: f64 = 1.0;
pub const CAMERA_HEIGHT_MM: f64 = 300.0;
pub const APPROACH_OFFSET_MM: f64 = 2.0;
/// Nominal top-right paper corner in grid coordinates (row, col).
pub const PAPER_CORNER: (f64, f64) = (30.0, 66.0);
/// Paper extent from the corner, mm.
pub const PAPER_SIZE_MM: f64 = 210.0;
/// Width of the curled band along the free edge, mm.
const CURL_BAND_MM: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionParams {
    /// Per-cell depth sensor noise, mm.
    pub depth_noise_sigma: f64,
    /// Height of the curl bump at the free edge, mm.
    pub edge_curl_mm: f64,
}

impl Default for PerceptionParams {
    fn default() -> Self {
        PerceptionParams {
            depth_noise_sigma: 0.3,
            edge_curl_mm: 0.5,
        }
    }
}

impl PerceptionParams {
    pub fn noise_free(&self) -> Self {
        PerceptionParams {
            depth_noise_sigma: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.depth_noise_sigma >= 0.0 && self.edge_curl_mm >= 0.0) {
            return Err(FlipError::Config(
                "perception parameters must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Surface heights above the table in the camera frame, mm, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Heightfield {
    rows: usize,
    cols: usize,
    heights: Vec<f64>,
    pub cell_pitch: f64,
}

impl Heightfield {
    pub fn new(rows: usize, cols: usize, heights: Vec<f64>) -> Result<Self> {
        if rows < CROP || cols < CROP {
            return Err(FlipError::Argument(format!(
                "heightfield must be at least {CROP}x{CROP}, got {rows}x{cols}"
            )));
        }
        if heights.len() != rows * cols {
            return Err(FlipError::Argument("heightfield size mismatch".into()));
        }
        if heights.iter().any(|h| !h.is_finite()) {
            return Err(FlipError::Numeric("heightfield".into()));
        }
        Ok(Heightfield {
            rows,
            cols,
            heights,
            cell_pitch: CELL_PITCH_MM,
        })
    }

    pub fn flat(rows: usize, cols: usize, height: f64) -> Result<Self> {
        Self::new(rows, cols, vec![height; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.heights[row * self.cols + col]
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }
}

/// Fixed-size depth crop, mm from the camera.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pixels: Vec<f32>,
}

impl DepthImage {
    pub fn from_pixels(pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != CROP_PIXELS {
            return Err(FlipError::Argument(format!(
                "depth image needs {CROP_PIXELS} pixels, got {}",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(FlipError::Argument("depth values must be finite and >= 0".into()));
        }
        Ok(DepthImage { pixels })
    }

    pub fn uniform(depth: f32) -> Result<Self> {
        Self::from_pixels(vec![depth; CROP_PIXELS])
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * CROP + col]
    }

    /// Binary PGM, 16-bit big-endian samples in units of 0.1 mm.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{CROP} {CROP}\n65535\n").into_bytes();
        out.reserve(CROP_PIXELS * 2);
        for &d in &self.pixels {
            let v = (f64::from(d) * 10.0).round().clamp(0.0, 65535.0) as u16;
            out.extend_from_slice(&v.to_be_bytes());
        }
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| FlipError::io(path, e))?;
        f.write_all(&self.to_pgm()).map_err(|e| FlipError::io(path, e))
    }
}

/// Normalized force/torque vector `(fx, fy, fz, mx, my, mz)` in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProprioObs {
    pub values: [f32; 6],
}

/// `s_t = (o_tv, o_tf)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub depth: DepthImage,
    pub proprio: ProprioObs,
}

impl Observation {
    pub fn is_finite(&self) -> bool {
        self.depth.pixels.iter().all(|v| v.is_finite())
            && self.proprio.values.iter().all(|v| v.is_finite())
    }
}

/// Per-channel `(min, max)` used to normalize raw F/T readings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FtCalibration {
    pub channels: [(f64, f64); 6],
}

impl FtCalibration {
    pub fn identity() -> Self {
        FtCalibration {
            channels: [(0.0, 1.0); 6],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, (lo, hi)) in self.channels.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(FlipError::Config(format!(
                    "calibration channel {i} is degenerate: min {lo}, max {hi}"
                )));
            }
        }
        Ok(())
    }

    /// Noise-free sweep over every preset, stack depth and test tilt; each
    /// channel range is widened by 10% of its span on both sides. Channels
    /// that never move without noise (mz, and fy/mx only at zero tilt) get a
    /// span of six noise standard deviations instead.
    pub fn sweep(physics: &PhysicsParams) -> Result<Self> {
        physics.validate()?;
        let clean = physics.noise_free();
        let mut lo = [f64::INFINITY; 6];
        let mut hi = [f64::NEG_INFINITY; 6];
        let mut rng = crate::rng::stream(0);
        for paper in PaperSpec::presets() {
            let base = SceneConfig {
                scenario: Scenario::Book,
                paper: paper.deterministic(),
                tilt_deg: 0.0,
                sheet_count: DEFAULT_SHEET_COUNT,
                seed: 0,
            };
            let full = crate::scene::new_scene(&base)?;
            for tilt in [0.0, 30.0, 60.0] {
                let config = SceneConfig {
                    tilt_deg: tilt,
                    ..base.clone()
                };
                let mut state = full.clone();
                while !state.is_empty() {
                    let r = swipe(&state, &config, &clean, &mut rng)?;
                    for (c, v) in r.channels().into_iter().enumerate() {
                        lo[c] = lo[c].min(v);
                        hi[c] = hi[c].max(v);
                    }
                    state.remove_top(1)?;
                }
            }
        }
        let floor = 6.0 * physics.ft_noise_sigma;
        let mut channels = [(0.0, 1.0); 6];
        for c in 0..6 {
            let span = hi[c] - lo[c];
            channels[c] = if span > floor && span > 0.0 {
                (lo[c] - 0.1 * span, hi[c] + 0.1 * span)
            } else {
                let mid = 0.5 * (lo[c] + hi[c]);
                let half = 0.5 * floor.max(1e-3);
                (mid - half, mid + half)
            };
        }
        let cal = FtCalibration { channels };
        cal.validate()?;
        Ok(cal)
    }
}

/// Everything needed to turn a stack into an observation and resolve actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulator {
    pub physics: PhysicsParams,
    pub perception: PerceptionParams,
    pub calibration: FtCalibration,
}

impl Simulator {
    pub fn new(physics: PhysicsParams, perception: PerceptionParams) -> Result<Self> {
        perception.validate()?;
        let calibration = FtCalibration::sweep(&physics)?;
        Ok(Simulator {
            physics,
            perception,
            calibration,
        })
    }

    pub fn with_defaults() -> Self {
        Self::new(PhysicsParams::default(), PerceptionParams::default())
            .expect("default parameters are valid")
    }

    /// Coarse-to-fine observation: depth crop, then swipe.
    pub fn observe(&self, state: &StackState, config: &SceneConfig, rng: &mut SimRng) -> Result<Observation> {
        let field = render_heightfield(state, config, &self.perception, rng);
        let depth = crop_depth(&field, default_window())?;
        let raw = swipe(state, config, &self.physics, rng)?;
        let proprio = normalize_ft(&raw, &self.calibration)?;
        Ok(Observation { depth, proprio })
    }
}

/// Crop origin (row, col) centering the window on the nominal paper corner.
pub fn default_window() -> (usize, usize) {
    let half = (CROP / 2) as f64;
    (
        (PAPER_CORNER.0 - half) as usize,
        (PAPER_CORNER.1 - half) as usize,
    )
}

/// Renders the stack as a heightfield. Always consumes `GRID * GRID` normal
/// draws regardless of the noise level.
pub fn render_heightfield(
    state: &StackState,
    _config: &SceneConfig,
    params: &PerceptionParams,
    rng: &mut SimRng,
) -> Heightfield {
    let height = state.stack_height();
    let (offset, yaw) = state
        .top()
        .map(|s| (s.offset, s.yaw_deg.to_radians()))
        .unwrap_or(([0.0, 0.0], 0.0));
    let corner_row = PAPER_CORNER.0 + offset[1];
    let corner_col = PAPER_CORNER.1 + offset[0];
    let (sin, cos) = yaw.sin_cos();

    let mut heights = Vec::with_capacity(GRID * GRID);
    for r in 0..GRID {
        for c in 0..GRID {
            let mut h = 0.0;
            if height > 0.0 {
                let px = (c as f64 + 0.5) * CELL_PITCH_MM - corner_col;
                let py = (r as f64 + 0.5) * CELL_PITCH_MM - corner_row;
                // Sheet frame: u runs from the free edge toward the spine, v down the page.
                let u = -(cos * px + sin * py);
                let v = -sin * px + cos * py;
                if (0.0..PAPER_SIZE_MM).contains(&u) && (0.0..PAPER_SIZE_MM).contains(&v) {
                    h = height + params.edge_curl_mm * (1.0 - u / CURL_BAND_MM).max(0.0);
                }
            }
            let z: f64 = rng.sample(StandardNormal);
            heights.push(h + params.depth_noise_sigma * z);
        }
    }
    Heightfield {
        rows: GRID,
        cols: GRID,
        heights,
        cell_pitch: CELL_PITCH_MM,
    }
}

/// Cuts a `CROP`×`CROP` window at `origin` (row, col) and converts heights to
/// camera depth.
pub fn crop_depth(field: &Heightfield, origin: (usize, usize)) -> Result<DepthImage> {
    let (r0, c0) = origin;
    if r0 + CROP > field.rows || c0 + CROP > field.cols {
        return Err(FlipError::Argument(format!(
            "crop window at {origin:?} exceeds {}x{} field",
            field.rows, field.cols
        )));
    }
    let mut pixels = Vec::with_capacity(CROP_PIXELS);
    for r in r0..r0 + CROP {
        let row = &field.heights[r * field.cols + c0..r * field.cols + c0 + CROP];
        pixels.extend(row.iter().map(|h| (CAMERA_HEIGHT_MM - h).max(0.0) as f32));
    }
    Ok(DepthImage { pixels })
}

pub fn normalize_ft(raw: &SwipeResult, calibration: &FtCalibration) -> Result<ProprioObs> {
    calibration.validate()?;
    let mut values = [0f32; 6];
    for (i, v) in raw.channels().into_iter().enumerate() {
        let (lo, hi) = calibration.channels[i];
        values[i] = ((v - lo) / (hi - lo)).clamp(0.0, 1.0) as f32;
    }
    Ok(ProprioObs { values })
}

/// Approach distance from the camera to just above the highest point in the
/// default crop window, mm.
pub fn descend_distance(field: &Heightfield) -> f64 {
    let (r0, c0) = default_window();
    let r1 = (r0 + CROP).min(field.rows);
    let c1 = (c0 + CROP).min(field.cols);
    let mut top = f64::NEG_INFINITY;
    for r in r0..r1 {
        for c in c0..c1 {
            top = top.max(field.at(r, c));
        }
    }
    CAMERA_HEIGHT_MM - top - APPROACH_OFFSET_MM
}
