use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use interseg_core::grid::io::{label_to_grid, read_grid, save_pgm, write_grid};
use interseg_core::segnet::read_checkpoint;
use interseg_core::synth::{generate_dataset, load_dataset, save_dataset};
use interseg_core::trainer::{
    evaluate, infer, parse_axis, run_ablation, run_variants, summary_csv, sweep_variants, train_with, DumpSpec,
    TrainOptions,
};
use interseg_core::{DatasetSpec, DomainStyle, Grid, Preset, SegmenterParams, TrainConfig};

#[derive(Parser)]
#[command(name = "interseg", version, about = "Mixed-domain semi-supervised segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multi-domain dataset directory.
    GenerateData(GenerateArgs),
    /// Train a segmenter and write checkpoint and telemetry.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Evaluate(EvaluateArgs),
    /// Compare flag presets or hyper-parameter grids over several seeds.
    Ablate(AblateArgs),
    /// Segment one image.
    Infer(InferArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of domains (2 to 4); domain 0 supplies the labeled split.
    #[arg(long, default_value_t = 4)]
    domains: usize,
    /// Square image side in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// 2 (blob) or 3 (blob with core).
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 8)]
    labeled: usize,
    #[arg(long, default_value_t = 50)]
    unlabeled_per_domain: usize,
    #[arg(long, default_value_t = 20)]
    test_per_domain: usize,
    /// Replace the built-in domain styles with one line per domain:
    /// `gamma brightness contrast bias_amplitude noise_sigma texture_frequency`.
    #[arg(long)]
    styles: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// File of key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Flag preset: supervised, fixmatch, row1..row8 or full.
    #[arg(long)]
    preset: Option<String>,
    /// Extra key=value overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Rectangle area fraction range as `lo,hi`.
    #[arg(long)]
    rect_area: Option<String>,
    /// Rectangle aspect ratio range as `lo,hi`.
    #[arg(long)]
    rect_aspect: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Write PGM snapshots of the composites into this directory.
    #[arg(long)]
    dump_intermediates: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    dump_every: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// labeled, unlabeled or test.
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated presets.
    #[arg(long, default_value = "supervised,fixmatch,row1,row2,row3,row4,row5,row6,row7,row8")]
    rows: String,
    /// Comma-separated seeds.
    #[arg(long, default_value = "1,2,3")]
    seeds: String,
    /// Sweep axis `key=v1,v2,...` (repeatable); replaces the preset rows.
    #[arg(long)]
    sweep: Vec<String>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input image in GRID format.
    #[arg(long)]
    image: PathBuf,
    /// Output label field; `.pgm` writes a viewable image, anything else GRID.
    #[arg(long)]
    out: PathBuf,
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let (lo, hi) = s.split_once(',').context("expected lo,hi")?;
    Ok((lo.trim().parse()?, hi.trim().parse()?))
}

impl ConfigArgs {
    fn build(&self) -> Result<TrainConfig> {
        let mut c = TrainConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            c.apply_text(&text)?;
        }
        if let Some(p) = &self.preset {
            c.flags = Preset::parse(p)?.flags();
        }
        if let Some(v) = self.beta {
            c.beta = v;
        }
        if let Some(v) = self.tau {
            c.tau = v;
        }
        if let Some(r) = &self.rect_area {
            c.rect.area_fraction = parse_range(r)?;
        }
        if let Some(r) = &self.rect_aspect {
            c.rect.aspect_ratio = parse_range(r)?;
        }
        if let Some(v) = self.iters {
            c.t_total = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        for o in &self.overrides {
            c.apply_assignment(o)?;
        }
        c.validate()?;
        Ok(c)
    }
}

fn parse_styles(text: &str) -> Result<Vec<DomainStyle>> {
    let mut out = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let v = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().with_context(|| format!("bad number {t:?}")))
            .collect::<Result<Vec<_>>>()?;
        let [gamma, brightness, contrast, bias_amplitude, noise_sigma, texture_frequency] = v[..] else {
            bail!("style line needs 6 numbers: {line:?}");
        };
        let style = DomainStyle { gamma, brightness, contrast, bias_amplitude, noise_sigma, texture_frequency };
        style.validate()?;
        out.push(style);
    }
    Ok(out)
}

fn generate(args: GenerateArgs) -> Result<()> {
    let styles = match &args.styles {
        Some(path) => parse_styles(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)?,
        None => DomainStyle::defaults(),
    };
    if !(2..=styles.len()).contains(&args.domains) {
        bail!("--domains must be between 2 and {}", styles.len());
    }
    let spec = DatasetSpec {
        size: args.size,
        classes: args.classes,
        labeled: args.labeled,
        unlabeled_per_domain: args.unlabeled_per_domain,
        test_per_domain: args.test_per_domain,
        domains: styles[..args.domains].to_vec(),
    };
    let data = generate_dataset(&spec, args.seed)?;
    save_dataset(&data, &args.out)?;
    eprintln!(
        "wrote {} labeled, {} unlabeled, {} test samples to {}",
        data.labeled.len(),
        data.unlabeled.len(),
        data.test.len(),
        args.out.display()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let config = args.config.build()?;
    let data = load_dataset(&args.data)?;
    let options = TrainOptions { dump: args.dump_intermediates.map(|dir| DumpSpec { dir, every: args.dump_every }) };
    eprintln!("training {} for {} iterations (seed {})", config.flags, config.t_total, config.seed);
    let outcome = train_with(&config, &data, &options)?;
    outcome.write_outputs(&args.out)?;
    for e in &outcome.evals {
        eprintln!("iter {:>6}  mean DC {:.4}", e.iter + 1, e.mean_dc);
    }
    println!(
        "best iteration {}: mean DC {:.4}, held-out DC {}",
        outcome.best_iter + 1,
        outcome.best_report.overall_dc(),
        outcome.heldout_dc().map_or("n/a".into(), |v| format!("{v:.4}"))
    );
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let params: SegmenterParams<f32> = read_checkpoint(&args.checkpoint)?;
    let data = load_dataset(&args.data)?;
    let samples = match args.split.as_str() {
        "test" => &data.test,
        "labeled" => &data.labeled,
        "unlabeled" => &data.unlabeled,
        other => bail!("unknown split {other:?}"),
    };
    let report = evaluate(&params, samples)?;
    write_file(&args.out, report.to_csv())?;
    println!("mean DC {:.4} over {} samples", report.overall_dc(), samples.len());
    Ok(())
}

fn run_ablate(args: AblateArgs) -> Result<()> {
    let base = args.config.build()?;
    let data = load_dataset(&args.data)?;
    let seeds = args
        .seeds
        .split(',')
        .map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed {s:?}")))
        .collect::<Result<Vec<_>>>()?;
    let report = |r: &interseg_core::trainer::RunSummary| {
        eprintln!("{:<28} seed {:<4} held-out DC {:.4}  mean DC {:.4}", r.variant, r.seed, r.heldout_dc, r.mean_dc)
    };
    let rows = if args.sweep.is_empty() {
        let presets = args.rows.split(',').map(Preset::parse).collect::<interseg_core::Result<Vec<_>>>()?;
        run_ablation(&base, &presets, &seeds, &data, report)?
    } else {
        let axes = args.sweep.iter().map(|s| parse_axis(s)).collect::<interseg_core::Result<Vec<_>>>()?;
        run_variants(&sweep_variants(&base, &axes)?, &seeds, &data, report)?
    };
    let csv = summary_csv(&rows);
    write_file(&args.out, &csv)?;
    print!("{csv}");
    Ok(())
}

fn run_infer(args: InferArgs) -> Result<()> {
    let params: SegmenterParams<f32> = read_checkpoint(&args.checkpoint)?;
    let image = read_grid(&args.image)?;
    let label = infer(&params, &image)?;
    if args.out.extension().is_some_and(|e| e == "pgm") {
        let top = (label.classes() - 1) as f64;
        let view = Grid::from_fn(label.height(), label.width(), |y, x| label.get(y, x) as f64 / top);
        save_pgm(&args.out, &view)?;
    } else {
        write_grid(&args.out, &label_to_grid(&label))?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenerateData(a) => generate(a),
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Ablate(a) => run_ablate(a),
        Command::Infer(a) => run_infer(a),
    }
}
