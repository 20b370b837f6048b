use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use snca::checkpoint::Checkpoint;
use snca::config::{RunConfig, TargetSource};
use snca::render::{write_gif, Background, RenderMode, RenderSpec};
use snca::run::{self, RunError, SeedOverrides};
use snca::targets::load_image;

#[derive(Parser)]
#[command(name = "snca", version, about = "Train and inspect steerable neural cellular automata")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train from a config file.
    Train {
        config: PathBuf,
        /// Output directory; overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Roll a trained model out and render frames.
    Rollout {
        checkpoint: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Turn the seed configuration by this many degrees.
        #[arg(long)]
        seed_rotation: Option<f64>,
        /// Distance between the two seeds, in cells.
        #[arg(long)]
        seed_diameter: Option<f64>,
        #[arg(long)]
        single_seed: bool,
        #[arg(long, default_value = "rgba")]
        render: String,
        #[arg(long)]
        checker: bool,
        /// Overlay each cell's orientation as a line (needs render_scale >= 5).
        #[arg(long)]
        arrows: bool,
        /// Generator seed; a comma-separated list gives one run per seed.
        #[arg(long, default_value = "0", value_delimiter = ',')]
        rng: Vec<u64>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        gif: Option<PathBuf>,
        /// Directory for the final PNG (and every frame with --frames).
        #[arg(long, default_value = "rollout")]
        out: PathBuf,
        #[arg(long)]
        frames: bool,
    },
    /// Evaluate final rotation-invariant and mirrored losses over several runs.
    Eval {
        checkpoint: PathBuf,
        /// PNG path or `builtin:<name>`.
        target: String,
        #[arg(long, default_value_t = 8)]
        runs: usize,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        rng: u64,
        /// CSV destination; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a builtin target to a PNG file.
    MakeTarget { name: String, path: PathBuf },
}

fn output_err(path: &std::path::Path, e: impl std::fmt::Display) -> RunError {
    RunError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn execute(cmd: Cmd) -> Result<(), RunError> {
    match cmd {
        Cmd::Train { config, out, quiet } => {
            let cfg = RunConfig::load(&config)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let total = cfg.train.total_steps;
            let outcome = run::train(&cfg, &out, |r| {
                if !quiet && (r.step % 100 == 0 || r.step == total) {
                    eprintln!("step {:>6}  loss {:.6}", r.step, r.loss);
                }
            })?;
            println!("{}", outcome.final_checkpoint.display());
        }
        Cmd::Rollout {
            checkpoint,
            steps,
            seed_rotation,
            seed_diameter,
            single_seed,
            render,
            checker,
            arrows,
            rng,
            stride,
            gif,
            out,
            frames,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let mode = RenderMode::parse(&render).ok_or_else(|| {
                RunError::Core(snca::core::Error::Contract(format!(
                    "unknown render mode `{render}` (expected rgba or angle_field)"
                )))
            })?;
            let steps = steps.unwrap_or(ckpt.config.gif_steps);
            let spec = RenderSpec {
                mode,
                background: if checker { Background::Checker } else { Background::White },
                stride: stride.unwrap_or(ckpt.config.gif_stride).max(1),
                scale: ckpt.config.render_scale,
                arrows,
            };
            let seed = run::seed_with_overrides(
                &ckpt,
                &SeedOverrides {
                    rotation_deg: seed_rotation,
                    diameter: seed_diameter,
                    single: single_seed,
                },
            )?;
            for &r in &rng {
                let dir = if rng.len() > 1 { out.join(format!("rng_{r}")) } else { out.clone() };
                std::fs::create_dir_all(&dir).map_err(|e| output_err(&dir, e))?;
                let imgs = run::rollout_frames(&ckpt, &seed, steps, r, &spec)?;
                if frames {
                    for (step, img) in &imgs {
                        let p = dir.join(format!("frame_{step:06}.png"));
                        img.save(&p).map_err(|e| output_err(&p, e))?;
                    }
                }
                let last = dir.join("final.png");
                imgs.last().expect("rollout has frames").1.save(&last).map_err(|e| output_err(&last, e))?;
                if let Some(g) = &gif {
                    let g = if rng.len() > 1 { dir.join(g.file_name().unwrap_or(g.as_os_str())) } else { g.clone() };
                    write_gif(&g, imgs.into_iter().map(|f| f.1).collect(), 40).map_err(|e| output_err(&g, e))?;
                }
                println!("{}", last.display());
            }
        }
        Cmd::Eval {
            checkpoint,
            target,
            runs,
            steps,
            rng,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let target = run::eval_target(&ckpt, &TargetSource::parse(&target))?;
            let steps = steps.unwrap_or(ckpt.config.train.rollout_max);
            let rows = run::evaluate(&ckpt, &target, &run::eval_seed(&ckpt), runs, steps, rng)?;
            match out {
                Some(p) => {
                    let f = std::fs::File::create(&p).map_err(|e| output_err(&p, e))?;
                    run::write_eval_csv(f, &rows).map_err(|e| output_err(&p, e))?;
                }
                None => run::write_eval_csv(std::io::stdout(), &rows).map_err(|e| output_err("stdout".as_ref(), e))?,
            }
        }
        Cmd::MakeTarget { name, path } => {
            let img = load_image(&TargetSource::Builtin(name), 0)?;
            let s = img.shape();
            let out = image::RgbaImage::from_fn(s.width as u32, s.height as u32, |x, y| {
                let a = img.get(0, y as usize, x as usize, 3);
                let straight = |c| if a > 0.0 { img.get(0, y as usize, x as usize, c) / a } else { 0.0 };
                let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                image::Rgba([q(straight(0)), q(straight(1)), q(straight(2)), q(a)])
            });
            out.save(&path).map_err(|e| output_err(&path, e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
