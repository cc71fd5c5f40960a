use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ocrf_core::config::RunConfig;
use ocrf_core::train::{self, metrics_csv, SceneCache, Trainer, METRICS_HEADER};
use ocrf_core::{checkpoint, gradsuite, io, Error};

#[derive(Parser)]
#[command(name = "ocrf", version, about = "Object-centric radiance fields on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the training and held-out scenes to a directory.
    Synth(Common),
    /// Train from scratch or resume from a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory to resume from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render one view of a scene from a checkpoint as PPM/PGM.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scene seed; defaults to the first held-out scene.
        #[arg(long)]
        scene: Option<u64>,
    },
    /// Evaluate a checkpoint on the held-out scenes.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck,
}

/// Settings shared by the subcommands; each flag overrides the config file.
#[derive(Args, Clone, Default)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sets both the run seed and the first scene seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    warmup: Option<u64>,
    /// hybrid | gs | nerf
    #[arg(long)]
    ablation: Option<String>,
    /// scene | object | scene+object
    #[arg(long)]
    goal: Option<String>,
    /// on | off
    #[arg(long)]
    hoa: Option<String>,
    /// on | off
    #[arg(long = "depth-render")]
    depth_render: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    /// random | INDEX
    #[arg(long)]
    view: Option<String>,
}

impl Common {
    /// Config file (or defaults, or `base`) with the flag overrides applied.
    fn config(&self, base: Option<RunConfig>) -> ocrf_core::Result<RunConfig> {
        let mut cfg = match (&self.config, base) {
            (Some(path), _) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
                RunConfig::parse(&text)?
            }
            (None, Some(b)) => b,
            (None, None) => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
            cfg.scene_seed = s;
        }
        let overrides = [
            ("steps", self.steps.map(|v| v.to_string())),
            ("warmup", self.warmup.map(|v| v.to_string())),
            ("fields", self.ablation.clone()),
            ("goal", self.goal.clone()),
            ("hoa", self.hoa.clone()),
            ("depth_render", self.depth_render.clone()),
            ("k", self.k.map(|v| v.to_string())),
            ("view", self.view.clone()),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn synth(common: &Common) -> ocrf_core::Result<()> {
    let cfg = common.config(None)?;
    let text = cfg.to_text();
    for seed in cfg.train_seeds().into_iter().chain(cfg.eval_seeds()) {
        let scene = ocrf_core::scene::generate_scene(&cfg.scene_for(seed))?;
        io::write_scene_dir(&common.out.join(format!("scene_{seed}")), &scene, &text)?;
    }
    fs::write(common.out.join("config.txt"), text)?;
    println!("wrote {} scenes to {}", cfg.train_scenes + cfg.eval_scenes, common.out.display());
    Ok(())
}

fn train_cmd(common: &Common, resume: Option<&Path>) -> ocrf_core::Result<()> {
    let cfg = common.config(None)?;
    let out = &common.out;
    fs::create_dir_all(out)?;
    let metrics_path = out.join("metrics.csv");
    let mut trainer = match resume {
        Some(dir) => Trainer::with_state(cfg.clone(), checkpoint::load_for(dir, &cfg)?)?,
        None => Trainer::new(cfg.clone())?,
    };
    let append = resume.is_some() && metrics_path.exists();
    let mut csv = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&metrics_path)?;
    if !append {
        writeln!(csv, "{METRICS_HEADER}")?;
    }
    fs::write(out.join("config.txt"), cfg.to_text())?;
    let mut write_err = None;
    let result = trainer.run(|row| {
        if let Err(e) = writeln!(csv, "{}", row.csv()) {
            write_err.get_or_insert(e);
        }
        println!(
            "step {:>6}  L_render {:.5}  L_mask {:.5}  alpha {:.4}  fg_ssim {:.4}  iou {:.4}",
            row.step, row.l_render, row.l_mask, row.alpha, row.fg_ssim, row.iou
        );
    });
    if let Some(e) = write_err {
        return Err(e.into());
    }
    if let Err(e @ Error::NonFinite { .. }) = &result {
        let dump = out.join("abort_checkpoint");
        checkpoint::save(&dump, &trainer.state, &cfg)?;
        eprintln!("{e}; state saved to {}", dump.display());
    }
    result?;
    checkpoint::save(&out.join("checkpoint"), &trainer.state, &cfg)?;
    println!("finished at step {}; checkpoint in {}", trainer.state.step, out.join("checkpoint").display());
    Ok(())
}

fn load_checkpoint(common: &Common, dir: &Path) -> ocrf_core::Result<(train::TrainState, RunConfig)> {
    let (state, saved) = checkpoint::load(dir)?;
    let cfg = common.config(Some(saved))?;
    checkpoint::check_layout(&state.params, &train::init_params(&cfg))?;
    Ok((state, cfg))
}

fn render_cmd(common: &Common, dir: &Path, scene: Option<u64>) -> ocrf_core::Result<()> {
    let (state, cfg) = load_checkpoint(common, dir)?;
    let seed = scene.unwrap_or(cfg.eval_seeds().first().copied().unwrap_or(cfg.scene_seed));
    let view = match cfg.view {
        ocrf_core::config::ViewSelect::Index(i) => i,
        ocrf_core::config::ViewSelect::Random => 0,
    };
    let cache = SceneCache::generate(&cfg, seed)?;
    let r = train::render_view(&cfg, &state.params, &cache, view)?;
    let (w, h) = (cache.scene.width(), cache.scene.height());
    let out = &common.out;
    fs::create_dir_all(out)?;
    io::write_ppm(&out.join("render.ppm"), w, h, &r.image)?;
    io::write_pgm16(&out.join("render_depth.pgm"), w, h, &io::depth_samples(&r.depth))?;
    io::write_ppm(&out.join("gt.ppm"), w, h, &cache.scene.gt_rgb[view])?;
    io::write_pgm16(&out.join("gt_depth.pgm"), w, h, &io::depth_samples(&cache.scene.gt_depth[view]))?;
    println!("rendered scene {seed} view {view} to {}", out.display());
    Ok(())
}

fn eval_cmd(common: &Common, dir: &Path) -> ocrf_core::Result<()> {
    let (state, cfg) = load_checkpoint(common, dir)?;
    let scenes = train::eval_pool(&cfg)?;
    let views: Vec<usize> = (0..cfg.scene.views).collect();
    let row = train::evaluate(&cfg, &state.params, state.step, &scenes, &views)?;
    let out = &common.out;
    fs::create_dir_all(out)?;
    fs::write(out.join("eval.csv"), metrics_csv(&[row]))?;
    let [nx, ny, _] = cfg.scene.grid.dims;
    for cache in &scenes {
        let seed = cache.scene.seed;
        let r = train::render_view(&cfg, &state.params, cache, 0)?;
        // Rows of the heatmaps run along X.
        io::write_pgm16(&out.join(format!("bev_{seed}.pgm")), ny, nx, &io::heatmap_samples(&r.bev_pred))?;
        if let Some(maps) = &r.attention_maps {
            for (i, m) in maps.chunks(nx * ny).enumerate() {
                io::write_pgm16(&out.join(format!("attention_{seed}_{i}.pgm")), ny, nx, &io::heatmap_samples(m))?;
            }
        }
    }
    println!(
        "fg_ssim {:.6}  full_ssim {:.6}  bev_iou {:.6}  ({} scenes x {} views)",
        row.fg_ssim,
        row.full_ssim,
        row.iou,
        scenes.len(),
        views.len()
    );
    Ok(())
}

fn gradcheck_cmd() -> ocrf_core::Result<bool> {
    let checks = gradsuite::run()?;
    let mut worst: f64 = 0.0;
    for c in &checks {
        worst = worst.max(c.error);
        println!("{:<4} {:.3e}  {}", if c.passed() { "ok" } else { "FAIL" }, c.error, c.name);
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    println!(
        "{} checks, {failed} failed, max relative error {worst:.3e} (tolerance {:e})",
        checks.len(),
        gradsuite::TOLERANCE
    );
    Ok(failed == 0)
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("OCRF_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("OCRF_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn exit_for(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::NonFinite { .. } => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    let result = match &cli.command {
        Command::Synth(c) => synth(c),
        Command::Train { common, resume } => train_cmd(common, resume.as_deref()),
        Command::Render {
            common,
            checkpoint,
            scene,
        } => render_cmd(common, checkpoint, *scene),
        Command::Eval { common, checkpoint } => eval_cmd(common, checkpoint),
        Command::Gradcheck => match gradcheck_cmd() {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(2),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => exit_for(&e),
    }
}
