//! Analytic comparison method: a fixed geometric flip plan from the depth image
//! and a hardcoded per-paper thickness. No proprioception, no learning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{FlipError, Result};
use crate::perception::{DepthImage, Observation, CAMERA_HEIGHT_MM};
use crate::sac::Policy;
use crate::scene::{FlipAction, Lambda, PaperSpec};

/// Fixed peel angle of the plan, degrees.
pub const PEEL_ANGLE_DEG: f64 = 2.0;
/// Depth levels closer than this are treated as one level, mm.
pub const MIN_LEVEL_GAP_MM: f64 = 1.0;
/// Each level must cover at least this fraction of the crop.
const MIN_LEVEL_FRACTION: f64 = 0.05;

/// Hardcoded sheet thickness per paper name, mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThicknessTable(pub BTreeMap<String, f64>);

impl Default for ThicknessTable {
    fn default() -> Self {
        ThicknessTable(
            PaperSpec::presets()
                .into_iter()
                .map(|p| (p.name.clone(), p.thickness.mean))
                .collect(),
        )
    }
}

impl ThicknessTable {
    pub fn get(&self, name: &str) -> Result<f64> {
        let t = self
            .0
            .get(name)
            .copied()
            .ok_or_else(|| FlipError::Config(format!("no thickness entry for paper '{name}'")))?;
        if !(t.is_finite() && t > 0.0) {
            return Err(FlipError::Config(format!("thickness for '{name}' must be positive")));
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselinePlan {
    pub action: FlipAction,
    /// mm
    pub assumed_thickness: f64,
    /// Stack top above the table as read from the depth image, mm; `None`
    /// when the image shows a single level.
    pub estimated_top: Option<f64>,
}

fn median(sorted: &[f32]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        f64::from(sorted[n / 2])
    } else {
        0.5 * (f64::from(sorted[n / 2 - 1]) + f64::from(sorted[n / 2]))
    }
}

/// Splits the crop into a near (paper) and far (table) depth level and returns
/// the height of the near level above the table.
pub fn estimate_top_height(depth: &DepthImage) -> Option<f64> {
    let mut v = depth.pixels().to_vec();
    v.sort_by(f32::total_cmp);
    let n = v.len();
    let lo = f64::from(v[n / 50]);
    let hi = f64::from(v[n - 1 - n / 50]);
    let split = 0.5 * (lo + hi);
    let cut = v.partition_point(|&d| f64::from(d) < split);
    let min_count = (MIN_LEVEL_FRACTION * n as f64) as usize;
    if cut < min_count || n - cut < min_count {
        return None;
    }
    let near = median(&v[..cut]);
    let far = median(&v[cut..]);
    if far - near < MIN_LEVEL_GAP_MM {
        return None;
    }
    Some(CAMERA_HEIGHT_MM - near)
}

/// Plan: aim half a sheet below the detected top surface, centered laterally,
/// with a fixed peel angle and the gripper closing.
pub fn plan_action(depth: &DepthImage, paper_name: &str, table: &ThicknessTable) -> Result<BaselinePlan> {
    let thickness = table.get(paper_name)?;
    let estimated_top = estimate_top_height(depth);
    // The gripper descends to the detected surface; z is the remaining depth
    // down to the target height. A single-level image gives no surface
    // estimate and the half-sheet offset is used as is.
    let target_depth = match estimated_top {
        Some(surface) => {
            let target_height = surface - 0.5 * thickness;
            surface - target_height
        }
        None => -0.5 * thickness,
    };
    let z_bin = FlipAction::nearest_displacement_bin(target_depth);
    let x_bin = FlipAction::nearest_displacement_bin(0.0);
    let theta_bin = FlipAction::nearest_theta_bin(PEEL_ANGLE_DEG);
    Ok(BaselinePlan {
        action: FlipAction::new(x_bin, z_bin, theta_bin, Lambda::Close)?,
        assumed_thickness: thickness,
        estimated_top,
    })
}

/// The baseline as a [`Policy`] for one paper type.
#[derive(Debug, Clone)]
pub struct FlexFlipPolicy {
    pub paper_name: String,
    pub table: ThicknessTable,
}

impl FlexFlipPolicy {
    pub fn new(paper_name: &str, table: ThicknessTable) -> Result<Self> {
        table.get(paper_name)?;
        Ok(FlexFlipPolicy {
            paper_name: paper_name.to_string(),
            table,
        })
    }
}

impl Policy for FlexFlipPolicy {
    fn select(&mut self, obs: &Observation) -> Result<FlipAction> {
        Ok(plan_action(&obs.depth, &self.paper_name, &self.table)?.action)
    }
}
