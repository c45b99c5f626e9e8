use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use flipbench_core::config::{load_physics, RunConfig};
use flipbench_core::eval::{evaluate, format_table, write_csv, CellResult, EvalMatrix, EvalOptions, Method, DEFAULT_T_ATTEMPT};
use flipbench_core::nn::Agent;
use flipbench_core::perception::{crop_depth, default_window, normalize_ft, render_heightfield, Simulator};
use flipbench_core::physics::{apply_outcome, swipe, FlipOutcome};
use flipbench_core::rng::stream;
use flipbench_core::sac::train as run_training;
use flipbench_core::scene::{new_scene, page_number, PaperSpec, Scenario, SceneConfig};
use flipbench_core::FlipError;

#[derive(Parser)]
#[command(name = "flipbench", version, about = "Train and evaluate page-flipping policies in simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy on one scene and write checkpoints plus a CSV log.
    Train(TrainArgs),
    /// Evaluate one method over the scene matrix.
    Eval(EvalArgs),
    /// Evaluate all three methods and print the comparison table.
    Bench(BenchArgs),
    /// Dump a scene's depth crop as PGM and print noise-free swipe readings.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Physics overrides (TOML), merged over the defaults.
    #[arg(long)]
    physics: Option<PathBuf>,
    #[arg(long, env = "FLIPBENCH_SEED")]
    seed: Option<u64>,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.physics {
            cfg.physics = load_physics(p)?;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        Ok(cfg)
    }

    fn simulator(cfg: &RunConfig) -> Result<Simulator> {
        Ok(Simulator::new(cfg.physics.clone(), cfg.perception.clone())?)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    steps: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "runs/train")]
    out: PathBuf,
}

#[derive(Args)]
struct MatrixArgs {
    /// `default` (27 cells) or `smoke` (one cell).
    #[arg(long, default_value = "default")]
    matrix: String,
    #[arg(long)]
    attempts: Option<usize>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Seconds per attempt for PPH.
    #[arg(long, default_value_t = DEFAULT_T_ATTEMPT)]
    t_attempt: f64,
}

impl MatrixArgs {
    fn matrix(&self) -> Result<EvalMatrix> {
        let mut m = EvalMatrix::named(&self.matrix)?;
        if let Some(a) = self.attempts {
            m.attempts_per_cell = a;
        }
        m.validate()?;
        Ok(m)
    }

    fn options(&self, cfg: &RunConfig, seed: u64) -> EvalOptions {
        EvalOptions {
            seed,
            t_attempt: self.t_attempt,
            jobs: self.jobs,
            thickness: cfg.thickness.clone(),
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    matrix: MatrixArgs,
    /// flipbot, flipbot-wo-prop or flexflip
    #[arg(long)]
    method: String,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// CSV output file; without it the CSV goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    matrix: MatrixArgs,
    /// Checkpoint trained with proprioception.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Checkpoint trained with the proprioceptive input masked.
    #[arg(long)]
    checkpoint_wo_prop: PathBuf,
    /// Directory for `bench.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "book")]
    scenario: String,
    #[arg(long, default_value = "printer")]
    paper: String,
    #[arg(long, default_value_t = 0.0)]
    tilt: f64,
    /// Sheets to remove before rendering.
    #[arg(long, default_value_t = 0)]
    flipped: usize,
    /// PGM output file.
    #[arg(long, default_value = "depth.pgm")]
    out: PathBuf,
}

fn load_agent(method: Method, checkpoint: Option<&Path>) -> Result<Option<Agent>> {
    match (method.is_learned(), checkpoint) {
        (false, _) => Ok(None),
        (true, None) => Err(FlipError::Argument(format!("method {method} requires --checkpoint")).into()),
        (true, Some(p)) => Ok(Some(Agent::load(p)?)),
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = args.common.run_config()?;
    if let Some(s) = args.steps {
        cfg.train.steps = s;
    }
    cfg.validate()?;
    let sim = Common::simulator(&cfg)?;
    let scene = cfg.scene.to_scene(cfg.train.seed)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    fs::write(args.out.join("config.toml"), cfg.to_toml()?)?;
    let steps = cfg.train.steps;
    let out = run_training(&cfg.train, &scene, &sim, Some(&args.out))?;
    let sr = out.log.last().map(|r| r.rolling_sr_100);
    println!(
        "trained {steps} steps on {}/{}/{}°; final rolling success {}; wrote {}",
        scene.scenario,
        scene.paper.name,
        scene.tilt_deg,
        sr.map(|s| format!("{s:.2}")).unwrap_or_else(|| "n/a".into()),
        args.out.join("policy.flpb").display()
    );
    Ok(())
}

fn write_results(results: &[CellResult], out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_csv(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?, results)?;
        }
        None => write_csv(std::io::stdout().lock(), results)?,
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let cfg = args.common.run_config()?;
    let method: Method = args.method.parse()?;
    let agent = load_agent(method, args.checkpoint.as_deref())?;
    let sim = Common::simulator(&cfg)?;
    let matrix = args.matrix.matrix()?;
    let opts = args.matrix.options(&cfg, args.common.seed.unwrap_or(0));
    let results = evaluate(method, agent.as_ref(), &matrix, &sim, &opts)?;
    write_results(&results, args.out.as_deref())?;
    if args.out.is_some() {
        print!("{}", format_table(&[results])?);
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let cfg = args.common.run_config()?;
    let sim = Common::simulator(&cfg)?;
    let matrix = args.matrix.matrix()?;
    let opts = args.matrix.options(&cfg, args.common.seed.unwrap_or(0));
    let with = Agent::load(&args.checkpoint)?;
    let without = Agent::load(&args.checkpoint_wo_prop)?;
    let runs = [
        evaluate(Method::Flipbot, Some(&with), &matrix, &sim, &opts)?,
        evaluate(Method::FlipbotWoProp, Some(&without), &matrix, &sim, &opts)?,
        evaluate(Method::FlexFlip, None, &matrix, &sim, &opts)?,
    ];
    print!("{}", format_table(&runs)?);
    let ge = |a: &[CellResult], b: &[CellResult]| a.iter().zip(b).filter(|(x, y)| x.sr >= y.sr).count();
    let n = runs[0].len();
    println!();
    println!("flipbot >= flipbot-wo-prop in {}/{n} cells", ge(&runs[0], &runs[1]));
    println!("flipbot >= flexflip in {}/{n} cells", ge(&runs[0], &runs[2]));
    println!("flipbot-wo-prop >= flexflip in {}/{n} cells", ge(&runs[1], &runs[2]));
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        let all: Vec<CellResult> = runs.concat();
        write_results(&all, Some(&dir.join("bench.csv")))?;
    }
    Ok(())
}

fn inspect(args: InspectArgs) -> Result<()> {
    let cfg = args.common.run_config()?;
    let sim = Common::simulator(&cfg)?;
    let scenario: Scenario = args.scenario.parse()?;
    let seed = args.common.seed.unwrap_or(0);
    let scene = SceneConfig::new(scenario, PaperSpec::preset(&args.paper)?, args.tilt, seed);
    scene.validate()?;
    let mut state = new_scene(&scene)?;
    if args.flipped >= state.remaining() {
        bail!(FlipError::Argument(format!(
            "--flipped {} leaves no sheet (stack has {})",
            args.flipped,
            state.remaining()
        )));
    }
    state = apply_outcome(&state, FlipOutcome { layers: args.flipped })?;
    let mut rng = stream(seed);
    let field = render_heightfield(&state, &scene, &sim.perception, &mut rng);
    let depth = crop_depth(&field, default_window())?;
    depth.write_pgm(&args.out)?;
    let raw = swipe(&state, &scene, &sim.physics.noise_free(), &mut rng)?;
    let norm = normalize_ft(&raw, &sim.calibration)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "scene      {}/{}/{}° seed {seed}", scene.scenario, scene.paper.name, scene.tilt_deg)?;
    writeln!(out, "page       {} ({} sheets left)", page_number(&state), state.remaining())?;
    writeln!(out, "depth      {} (60x60, 0.1 mm units)", args.out.display())?;
    writeln!(out, "channel        raw   normalized")?;
    for (name, (r, n)) in ["fx", "fy", "fz", "mx", "my", "mz"].iter().zip(raw.channels().iter().zip(norm.values)) {
        writeln!(out, "{name:<8} {r:>10.4} {n:>12.4}")?;
    }
    writeln!(out, "contact height {:.3} mm", raw.contact_height)?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<FlipError>() {
        Some(FlipError::Argument(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
