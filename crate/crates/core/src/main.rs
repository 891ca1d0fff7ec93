use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use uncodec::config::Config;
use uncodec::evaluation::{bd_rate_table, eval_models, read_csv, BdFit};
use uncodec::frames::{load_sequence, save_sequence, Frame, GopStructure};
use uncodec::pipeline::{checkpoint, decode_sequence, encode_sequence, SequenceBitstream};
use uncodec::synthetic::{write_corpus, MovingShapesConfig};
use uncodec::training::{ablate, ablation_csv, Trainer, TrainingData};
use uncodec::uncertainty_viz::{aleatoric_map, epistemic_map, model_predictive_map, FlowNorm, HeatMap};
use uncodec::{Error, Result};

#[derive(Parser)]
#[command(name = "uncodec", version, about = "Uncertainty-aware learned video codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-key overrides, e.g. `--set codec.h=4 loss.k=1`.
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        cfg.apply_overrides(&self.set)?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VizKind {
    Aleatoric,
    Epistemic,
    Predictive,
}

#[derive(Subcommand)]
enum Command {
    /// Two-phase training; writes ckpt/step_XXXXXXXX and metrics.csv under train.out_dir.
    #[command(after_help = Config::help())]
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Codes a directory of PNG frames into a bitstream.
    #[command(after_help = Config::help())]
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// GoP size (defaults to data.gop of the checkpoint config).
        #[arg(long)]
        gop: Option<usize>,
        /// Also write encoder-side reconstructions here.
        #[arg(long)]
        recon: Option<PathBuf>,
    },
    /// Decodes a bitstream into PNG frames.
    #[command(after_help = Config::help())]
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// RD point per checkpoint on a frame directory; writes rd.csv and rd.png.
    #[command(after_help = Config::help())]
    Eval {
        #[arg(long, num_args = 1.., required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        gop: usize,
        #[arg(long, default_value_t = 100)]
        max_frames: usize,
        #[arg(long, default_value = "uncodec")]
        label: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// BD-rate grid of every test curve against every anchor curve.
    #[command(after_help = Config::help())]
    Bdrate {
        test: PathBuf,
        anchor: PathBuf,
        #[arg(long, default_value = "cubic")]
        fit: String,
    },
    /// Uncertainty heat map of one frame pair (reference first).
    #[command(name = "viz-uncertainty", after_help = Config::help())]
    VizUncertainty {
        #[arg(long, value_enum)]
        kind: VizKind,
        #[arg(long, num_args = 2, value_names = ["REFERENCE", "CURRENT"])]
        frames: Vec<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Trains one model per (h, k, fgsm) cell and writes the held-out RD table.
    #[command(after_help = Config::help())]
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        heldout: usize,
    },
    /// Writes a moving-shapes corpus of PNG clips.
    #[command(name = "gen-synthetic", after_help = Config::help())]
    GenSynthetic {
        /// Defaults to $UNCODEC_CACHE/synthetic.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 2)]
        shapes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { cfg } => {
            let cfg = cfg.resolve()?;
            let data = TrainingData::from_config(&cfg)?;
            let mut trainer = Trainer::from_config(&cfg)?;
            if let Some(dir) = &trainer.cfg.out_dir {
                create_dir(dir)?;
                write_file(&dir.join("config.txt"), cfg.echo().as_bytes())?;
            }
            trainer.run(&data, |r| {
                println!(
                    "step {:>7}  loss {:.4}  bpp_mv {:.4}  bpp_res {:.4}  psnr {:.2}",
                    r.step, r.loss, r.bpp_mv, r.bpp_res, r.psnr
                )
            })?;
        }
        Command::Encode {
            input,
            checkpoint: ckpt,
            out,
            gop,
            recon,
        } => {
            let model = checkpoint::load(&ckpt)?;
            let seq = load_sequence(&input, model.config.usize("data.max_frames")?)?;
            let gop = gop.map_or_else(|| model.config.usize("data.gop"), Ok)?;
            let report = encode_sequence(&seq, &GopStructure::new(seq.len(), gop)?, &model)?;
            write_file(&out, &report.bitstream.to_bytes())?;
            if let Some(dir) = recon {
                save_sequence(
                    &uncodec::frames::VideoSequence::new(seq.name(), report.reconstructions.clone())?,
                    &dir,
                )?;
            }
            println!(
                "frames {}  bytes {}  bpp {:.6}  psnr {:.4} dB",
                seq.len(),
                report.bitstream.len_bytes(),
                report.bpp(),
                report.mean_psnr()
            );
        }
        Command::Decode {
            input,
            checkpoint: ckpt,
            out,
        } => {
            let model = checkpoint::load(&ckpt)?;
            let bs = SequenceBitstream::parse(&read_file(&input)?)?;
            let seq = decode_sequence(&bs, &model)?;
            save_sequence(&seq, &out)?;
            println!("decoded {} frames into {}", seq.len(), out.display());
        }
        Command::Eval {
            checkpoints,
            data,
            gop,
            max_frames,
            label,
            out,
        } => {
            let models = checkpoints
                .iter()
                .map(|p| checkpoint::load(p))
                .collect::<Result<Vec<_>>>()?;
            let mut dirs: Vec<PathBuf> = std::fs::read_dir(&data)
                .map_err(|e| Error::Io {
                    path: data.clone(),
                    source: e,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            dirs.sort();
            if dirs.is_empty() {
                dirs.push(data.clone());
            }
            let seqs = dirs
                .iter()
                .map(|d| load_sequence(d, max_frames))
                .collect::<Result<Vec<_>>>()?;
            for p in eval_models(&label, &models, &seqs, gop, &out)? {
                println!("lambda {:>6}  bpp {:.6}  psnr {:.4} dB", p.lambda, p.bpp, p.psnr_db);
            }
        }
        Command::Bdrate { test, anchor, fit } => {
            let fit: BdFit = fit.parse()?;
            print!("{}", bd_rate_table(&read_csv(&test)?, &read_csv(&anchor)?, fit)?);
        }
        Command::VizUncertainty {
            kind,
            frames,
            checkpoint: ckpt,
            out,
            cfg,
        } => {
            let cfg = cfg.resolve()?;
            let model = checkpoint::load(&ckpt)?;
            let x_ref = Frame::load_png(&frames[0])?;
            let x_t = Frame::load_png(&frames[1])?;
            let (name, map): (&str, HeatMap) = match kind {
                VizKind::Aleatoric => {
                    let norm: FlowNorm = cfg.get("viz.norm").parse()?;
                    let a = aleatoric_map(
                        &model,
                        &x_t,
                        &x_ref,
                        norm,
                        cfg.f32("viz.gap_threshold")?,
                        cfg.f32("viz.fraction")?,
                    )?;
                    if a.untrained {
                        eprintln!("warning: checkpoint holds an untrained model");
                    }
                    ("aleatoric", a.map)
                }
                VizKind::Epistemic => ("epistemic", epistemic_map(&model, &x_t, &x_ref)?),
                VizKind::Predictive => ("predictive", model_predictive_map(&model, &x_t, &x_ref, false)?),
            };
            create_dir(&out)?;
            map.save_png16(&out.join(format!("{name}.png")))?;
            map.write_raw(&out.join(format!("{name}.f32")))?;
            println!("{name}: mean {:.6e}", map.mean());
        }
        Command::Ablate { cfg, out, heldout } => {
            let cfg = cfg.resolve()?;
            let rows = ablate(&cfg, heldout, |m| eprintln!("{m}"))?;
            let csv = ablation_csv(&rows);
            write_file(&out, csv.as_bytes())?;
            print!("{csv}");
        }
        Command::GenSynthetic {
            out,
            count,
            frames,
            size,
            shapes,
            seed,
        } => {
            let out = match out {
                Some(p) => p,
                None => std::env::var_os("UNCODEC_CACHE")
                    .map(PathBuf::from)
                    .ok_or_else(|| Error::Config("--out not given and UNCODEC_CACHE unset".into()))?
                    .join("synthetic"),
            };
            let shape_cfg = MovingShapesConfig {
                height: size,
                width: size,
                frames,
                shapes,
                seed,
                ..Default::default()
            };
            write_corpus(&shape_cfg, count, &out)?;
            println!("wrote {count} clips to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
