use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use semtex_core::app::pipeline::Mode;
use semtex_core::app::run::{self, GenerateRequest};
use semtex_core::app::PipelineConfig;

/// Semantic-guided texture generation for 3D meshes.
#[derive(Parser, Debug)]
#[command(name = "semtex", version, about)]
struct Cli {
    /// TOML config whose keys mirror the pipeline configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// Output directory; the run directory for train and evaluate.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a procedural image/label dataset with toy meshes.
    SynthData {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Project a labeled mesh into the canonical views: atlas and segmentation PNGs.
    Parametrize {
        #[arg(long)]
        mesh: PathBuf,
        /// Face labels, one per line; defaults to the mesh path with `.labels`.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Train one stage, reading the previous stage's checkpoint from the run directory.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        stage: u8,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Texture a mesh from a stage-3 checkpoint.
    #[command(group(ArgGroup::new("mode").required(true).args(["conditional", "unconditional"])))]
    Generate {
        #[arg(long)]
        conditional: bool,
        #[arg(long)]
        unconditional: bool,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Per-view segmentation PNGs used instead of rasterizing the mesh labels.
        #[arg(long)]
        seg_dir: Option<PathBuf>,
        /// Style reference image (conditional mode).
        #[arg(long, required_if_eq("conditional", "true"))]
        style: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score generations on the held-out split and write report.txt.
    Evaluate {
        #[arg(long, value_enum, default_value = "conditional")]
        mode: ModeArg,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Bake per-view texture PNGs onto a mesh as OBJ/MTL/PNG plus renders.
    Export {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Directory holding `<view>.png` for every configured view.
        #[arg(long)]
        textures: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Conditional,
    Unconditional,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Conditional => Mode::Conditional,
            ModeArg::Unconditional => Mode::Unconditional,
        }
    }
}

fn out_dir(cli: &Cli, cfg: &PipelineConfig) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone())
}

fn execute(cli: &Cli) -> semtex_core::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    match &cli.command {
        Command::SynthData { count } => {
            if let Some(c) = count {
                cfg.synth.count = *c;
            }
            let out = cli.out.clone().unwrap_or_else(|| cfg.dataset_dir.clone());
            let ds = run::synth_data(&cfg, &out)?;
            println!("wrote {} image/label pairs and {} meshes to {}", ds.len(), ds.meshes.len(), out.display());
        }
        Command::Parametrize { mesh, labels } => {
            let out = out_dir(cli, &cfg);
            let p = run::parametrize(&cfg, mesh, labels.as_deref(), &out)?;
            println!("{} views, atlas and segmentation maps in {}", p.atlas.num_views(), out.display());
        }
        Command::Train { stage, dataset } => {
            if let Some(d) = dataset {
                cfg.dataset_dir = d.clone();
            }
            let s = run::train(&cfg, *stage)?;
            match s.recon {
                Some((a, b)) => println!(
                    "stage {} done after {} steps: held-out recon {a:.5} -> {b:.5}; checkpoint {}",
                    s.stage,
                    s.steps,
                    s.checkpoint.display()
                ),
                None => println!("stage {} done after {} steps; checkpoint {}", s.stage, s.steps, s.checkpoint.display()),
            }
        }
        Command::Generate {
            conditional,
            mesh,
            labels,
            seg_dir,
            style,
            checkpoint,
            ..
        } => {
            let mode = if *conditional { Mode::Conditional } else { Mode::Unconditional };
            let tag = if *conditional { "conditional" } else { "unconditional" };
            let out = out_dir(cli, &cfg).join("samples").join(format!("{tag}_seed{}", cfg.seed));
            let (g, files) = run::generate(
                &cfg,
                &GenerateRequest {
                    checkpoint: checkpoint.as_deref(),
                    mesh,
                    labels: labels.as_deref(),
                    seg_dir: seg_dir.as_deref(),
                    style_image: style.as_deref(),
                    mode,
                    out: &out,
                },
            )?;
            println!("{} textures; textured mesh {}", g.textures.len(), files.mesh.obj.display());
        }
        Command::Evaluate { mode, checkpoint, dataset } => {
            if let Some(d) = dataset {
                cfg.dataset_dir = d.clone();
            }
            let out = out_dir(cli, &cfg);
            let r = run::evaluate_run(&cfg, checkpoint.as_deref(), (*mode).into(), &out)?;
            print!("{}", r.to_text()?);
        }
        Command::Export { mesh, labels, textures } => {
            let out = out_dir(cli, &cfg);
            let f = run::export(&cfg, mesh, labels.as_deref(), textures, &out)?;
            println!("wrote {}", f.mesh.obj.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
