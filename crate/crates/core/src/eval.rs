//! The 27-scene evaluation matrix, SR/PPH metrics and report output.

use std::fmt;
use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{FlexFlipPolicy, ThicknessTable};
use crate::error::{FlipError, Result};
use crate::nn::Agent;
use crate::perception::Simulator;
use crate::rng::derive_seed;
use crate::sac::{GreedyPolicy, Policy, SceneRun};
use crate::scene::{PaperSpec, Scenario, SceneConfig};

/// Seconds per flip attempt used for PPH reporting.
pub const DEFAULT_T_ATTEMPT: f64 = 11.6;
pub const DEFAULT_ATTEMPTS: usize = 200;
pub const DEFAULT_TILTS: [f64; 3] = [0.0, 30.0, 60.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "flipbot")]
    Flipbot,
    #[serde(rename = "flipbot-wo-prop")]
    FlipbotWoProp,
    #[serde(rename = "flexflip")]
    FlexFlip,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Flipbot, Method::FlipbotWoProp, Method::FlexFlip];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Flipbot => "flipbot",
            Method::FlipbotWoProp => "flipbot-wo-prop",
            Method::FlexFlip => "flexflip",
        }
    }

    pub fn is_learned(&self) -> bool {
        !matches!(self, Method::FlexFlip)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = FlipError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| FlipError::Argument(format!("unknown method '{s}' (flipbot, flipbot-wo-prop, flexflip)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMatrix {
    pub scenarios: Vec<Scenario>,
    pub papers: Vec<PaperSpec>,
    pub tilts: Vec<f64>,
    pub attempts_per_cell: usize,
}

impl Default for EvalMatrix {
    fn default() -> Self {
        EvalMatrix {
            scenarios: Scenario::ALL.to_vec(),
            papers: PaperSpec::presets().to_vec(),
            tilts: DEFAULT_TILTS.to_vec(),
            attempts_per_cell: DEFAULT_ATTEMPTS,
        }
    }
}

/// One scene of the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    /// Position in report order.
    pub index: usize,
    pub scenario: Scenario,
    pub paper: PaperSpec,
    pub tilt_deg: f64,
}

impl EvalMatrix {
    /// `"default"` is the full 3×3×3 matrix; `"smoke"` is a single printer
    /// book cell at 0°.
    pub fn named(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "smoke" => Ok(EvalMatrix {
                scenarios: vec![Scenario::Book],
                papers: vec![PaperSpec::printer()],
                tilts: vec![0.0],
                attempts_per_cell: 20,
            }),
            _ => Err(FlipError::Argument(format!("unknown matrix '{name}' (default, smoke)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.attempts_per_cell == 0 {
            return Err(FlipError::Config("attempts_per_cell must be positive".into()));
        }
        if self.scenarios.is_empty() || self.papers.is_empty() || self.tilts.is_empty() {
            return Err(FlipError::Config("evaluation matrix has an empty axis".into()));
        }
        Ok(())
    }

    /// Cells in report order: tilt-major, then scenario, then paper.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &tilt_deg in &self.tilts {
            for &scenario in &self.scenarios {
                for paper in &self.papers {
                    out.push(Cell {
                        index: out.len(),
                        scenario,
                        paper: paper.clone(),
                        tilt_deg,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: String,
    pub scenario: String,
    pub paper: String,
    pub tilt: f64,
    pub attempts: usize,
    pub successes: usize,
    pub sr: f64,
    pub pph: u64,
    pub seed: u64,
}

/// Successful flips per hour.
pub fn compute_pph(sr: f64, t_attempt: f64) -> Result<f64> {
    if !(t_attempt.is_finite() && t_attempt > 0.0) {
        return Err(FlipError::Config(format!("t_attempt must be positive, got {t_attempt}")));
    }
    if !(0.0..=1.0).contains(&sr) {
        return Err(FlipError::Argument(format!("success rate {sr} outside [0, 1]")));
    }
    Ok(sr * 3600.0 / t_attempt)
}

/// PPH rounded for reports.
pub fn report_pph(sr: f64, t_attempt: f64) -> Result<u64> {
    Ok(compute_pph(sr, t_attempt)?.round() as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub seed: u64,
    pub t_attempt: f64,
    /// Worker threads; 0 uses the global pool.
    pub jobs: usize,
    pub thickness: ThicknessTable,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            seed: 0,
            t_attempt: DEFAULT_T_ATTEMPT,
            jobs: 0,
            thickness: ThicknessTable::default(),
        }
    }
}

/// Seed of one cell; identical across methods so they face the same scenes.
pub fn cell_seed(base: u64, cell: &Cell) -> u64 {
    derive_seed(base, cell.index as u64)
}

fn run_cell(
    method: Method,
    agent: Option<&Agent>,
    cell: &Cell,
    attempts: usize,
    sim: &Simulator,
    opts: &EvalOptions,
) -> Result<CellResult> {
    let seed = cell_seed(opts.seed, cell);
    let config = SceneConfig::new(cell.scenario, cell.paper.clone(), cell.tilt_deg, seed);
    let mut run = SceneRun::new(config)?;
    let mut policy: Box<dyn Policy + '_> = match (method, agent) {
        (Method::FlexFlip, _) => Box::new(FlexFlipPolicy::new(&cell.paper.name, opts.thickness.clone())?),
        (_, Some(agent)) => Box::new(GreedyPolicy { agent }),
        (_, None) => return Err(FlipError::Argument(format!("method {method} needs a checkpoint"))),
    };
    let mut successes = 0;
    for _ in 0..attempts {
        let t = run.step(sim, policy.as_mut())?;
        successes += usize::from(t.layers == 1);
    }
    let sr = successes as f64 / attempts as f64;
    Ok(CellResult {
        method: method.as_str().to_string(),
        scenario: cell.scenario.as_str().to_string(),
        paper: cell.paper.name.clone(),
        tilt: cell.tilt_deg,
        attempts,
        successes,
        sr,
        pph: report_pph(sr, opts.t_attempt)?,
        seed,
    })
}

/// Greedy evaluation of one method over the matrix. Results come back in
/// report order regardless of the number of workers.
pub fn evaluate(
    method: Method,
    agent: Option<&Agent>,
    matrix: &EvalMatrix,
    sim: &Simulator,
    opts: &EvalOptions,
) -> Result<Vec<CellResult>> {
    matrix.validate()?;
    compute_pph(0.0, opts.t_attempt)?;
    if method.is_learned() {
        let agent = agent.ok_or_else(|| FlipError::Argument(format!("method {method} needs a checkpoint")))?;
        let masked = method == Method::FlipbotWoProp;
        if agent.config.mask_proprio != masked {
            return Err(FlipError::Argument(format!(
                "checkpoint was trained {} proprioception but method {method} expects the opposite",
                if agent.config.mask_proprio { "without" } else { "with" }
            )));
        }
    }
    let cells = matrix.cells();
    let work = || {
        cells
            .par_iter()
            .map(|c| run_cell(method, agent, c, matrix.attempts_per_cell, sim, opts))
            .collect::<Result<Vec<_>>>()
    };
    if opts.jobs == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| FlipError::Config(format!("thread pool: {e}")))?
            .install(work)
    }
}

pub fn write_csv<W: Write>(out: W, results: &[CellResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in results {
        w.serialize(r).map_err(|e| FlipError::Table(e.to_string()))?;
    }
    w.flush().map_err(|e| FlipError::Table(e.to_string()))?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<CellResult>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(|e| FlipError::Table(e.to_string())))
        .collect()
}

/// Side-by-side table, one row per cell and an `sr% / pph` column per
/// method. All result sets must cover the same cells in the same order.
pub fn format_table(results: &[Vec<CellResult>]) -> Result<String> {
    let Some(first) = results.first() else {
        return Ok(String::new());
    };
    for r in results {
        if r.len() != first.len()
            || r.iter().zip(first).any(|(a, b)| (a.scenario.as_str(), a.paper.as_str(), a.tilt) != (b.scenario.as_str(), b.paper.as_str(), b.tilt))
        {
            return Err(FlipError::Argument("result sets cover different cells".into()));
        }
    }
    let mut s = String::new();
    let _ = write!(s, "{:>5}  {:<12} {:<8}", "tilt", "scenario", "paper");
    for r in results {
        let name = r.first().map(|c| c.method.as_str()).unwrap_or("-");
        let _ = write!(s, " | {name:>15}");
    }
    s.push('\n');
    let width = s.trim_end().chars().count();
    s.push_str(&"-".repeat(width));
    s.push('\n');
    let mut last_tilt = None;
    for (i, cell) in first.iter().enumerate() {
        if last_tilt.is_some() && last_tilt != Some(cell.tilt) {
            s.push('\n');
        }
        last_tilt = Some(cell.tilt);
        let _ = write!(s, "{:>4}°  {:<12} {:<8}", cell.tilt, cell.scenario, cell.paper);
        for r in results {
            let c = &r[i];
            let _ = write!(s, " | {:>15}", format!("{:.0}% / {}", c.sr * 100.0, c.pph));
        }
        s.push('\n');
    }
    Ok(s)
}
