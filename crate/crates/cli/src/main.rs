use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use axemu::bench::{bench, BenchConfig};
use axemu::formats::{
    load_cifar10, load_lut, load_model, load_raw_lut, load_tensor, save_cifar10, save_lut,
    save_model, save_raw_lut, save_tensor, Cifar10Batch, RunReport,
};
use axemu::graph::{resnet_style, run_traced, transform, AxSettings, ResNetSpec, RunOptions};
use axemu::synth::{agreement, pretrained, synth_cifar, top1};
use axemu::{
    error_stats, exact_lut, truncated_lut, Accumulator, Engine, MultLut, RoundMode, Signedness,
    Tensor4,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Emulates DNN accelerators built from approximate 8-bit multipliers.
#[derive(Parser)]
#[command(name = "axemu", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a multiplier truth table.
    GenLut(GenLut),
    /// Print error statistics of a multiplier table.
    LutStats(LutStats),
    /// Replace every Conv2D of a model with an approximate AxConv2D.
    Transform(TransformCmd),
    /// Run one forward pass and write the outputs.
    Run(RunCmd),
    /// Time inference over a data set as t_init + t_comp.
    Bench(BenchCmd),
    /// Write a synthetic CIFAR-10-format data set and/or a fitted model.
    Synth(SynthCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Unsigned,
    Signed,
}

impl From<Mode> for Signedness {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Unsigned => Signedness::Unsigned,
            Mode::Signed => Signedness::Signed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LutKind {
    Exact,
    Truncated,
}

#[derive(Clone, Copy, ValueEnum)]
enum Round {
    HalfAway,
    HalfEven,
    TowardZero,
}

impl From<Round> for RoundMode {
    fn from(r: Round) -> Self {
        match r {
            Round::HalfAway => RoundMode::HalfAwayFromZero,
            Round::HalfEven => RoundMode::HalfToEven,
            Round::TowardZero => RoundMode::TowardZero,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Acc {
    Exact64,
    Wrap32,
    Saturate32,
}

impl From<Acc> for Accumulator {
    fn from(a: Acc) -> Self {
        match a {
            Acc::Exact64 => Accumulator::Exact64,
            Acc::Wrap32 => Accumulator::Wrap32,
            Acc::Saturate32 => Accumulator::Saturate32,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Direct,
    Gemm,
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Direct => Engine::Direct,
            EngineArg::Gemm => Engine::Gemm,
        }
    }
}

#[derive(Args)]
struct GenLut {
    #[arg(long, value_enum, default_value = "exact")]
    kind: LutKind,
    /// Low magnitude bits cleared from each operand (truncated tables).
    #[arg(long, default_value_t = 0)]
    drop_bits: u32,
    #[arg(long, value_enum, default_value = "unsigned")]
    mode: Mode,
    /// Write the bare 131,072-byte table without a header.
    #[arg(long)]
    raw: bool,
    #[arg(short, long)]
    output: PathBuf,
}

/// A table file, with the signedness needed to read a headerless one.
#[derive(Args)]
struct LutSource {
    /// Table is headerless; its signedness comes from --mode.
    #[arg(long, requires = "mode")]
    raw: bool,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

impl LutSource {
    fn load(&self, path: &Path) -> Result<MultLut> {
        let lut = match (self.raw, self.mode) {
            (true, Some(mode)) => load_raw_lut(path, mode.into())?,
            _ => load_lut(path)?,
        };
        if let (false, Some(mode)) = (self.raw, self.mode) {
            if lut.mode() != Signedness::from(mode) {
                bail!(
                    "{} holds a {} table, not {}",
                    path.display(),
                    lut.mode().name(),
                    Signedness::from(mode).name()
                );
            }
        }
        Ok(lut)
    }
}

#[derive(Args)]
struct LutStats {
    lut: PathBuf,
    #[command(flatten)]
    source: LutSource,
}

#[derive(Args)]
struct TransformCmd {
    #[arg(long)]
    model: PathBuf,
    /// Headered table file the approximate layers will reference.
    #[arg(long)]
    lut: PathBuf,
    #[arg(long, value_enum, default_value = "half-away")]
    round: Round,
    #[arg(long, value_enum, default_value = "exact64")]
    accumulator: Acc,
    #[arg(long, default_value_t = axemu::axconv::DEFAULT_CHUNK)]
    chunk_size: usize,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct Exec {
    #[arg(long)]
    model: PathBuf,
    /// Use this table in every approximate layer instead of the referenced ones.
    #[arg(long)]
    lut: Option<PathBuf>,
    #[command(flatten)]
    lut_source: LutSource,
    #[arg(long, value_enum, default_value = "gemm")]
    engine: EngineArg,
    /// Worker threads; 0 uses every core.
    #[arg(long, env = "AXEMU_WORKERS", default_value_t = 0)]
    workers: usize,
    #[arg(long, default_value_t = 1000)]
    batch_size: usize,
    /// Accurate model whose top-1 labels the outputs are compared with.
    #[arg(long)]
    reference: Option<PathBuf>,
}

impl Exec {
    fn load_model(&self) -> Result<axemu::LayerGraph> {
        let lut = match &self.lut {
            Some(p) => Some(Arc::new(self.lut_source.load(p)?)),
            None => None,
        };
        load_model(&self.model, lut).with_context(|| format!("loading {}", self.model.display()))
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            engine: self.engine.into(),
            workers: self.workers,
            keep_all: false,
        }
    }
}

#[derive(Args)]
struct RunCmd {
    #[command(flatten)]
    exec: Exec,
    /// CIFAR-10 binary batch.
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    data: Option<PathBuf>,
    /// Images as a tensor file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output tensor file.
    #[arg(short, long)]
    output: PathBuf,
    /// Write the top-1 label of every image, one per line.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct BenchCmd {
    #[command(flatten)]
    exec: Exec,
    /// CIFAR-10 binary batch; without it a synthetic one is generated.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Images of the synthetic data set.
    #[arg(long, default_value_t = 1000)]
    images: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    warmup: usize,
    /// Write the report as TOML.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Output tensor file.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Earlier report to print the speedup over.
    #[arg(long)]
    baseline: Option<PathBuf>,
}

#[derive(Args)]
struct SynthCmd {
    #[arg(long, default_value_t = 1000)]
    images: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Where to write the CIFAR-10-format data set.
    #[arg(long, required_unless_present = "model")]
    data: Option<PathBuf>,
    /// Where to write a residual model with a fitted head.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Channels of every convolution.
    #[arg(long, default_value_t = 16)]
    width: usize,
    /// Residual blocks per stage.
    #[arg(long, default_value_t = 1)]
    blocks: usize,
    /// Leave the head at its random initialization.
    #[arg(long)]
    untrained: bool,
}

fn gen_lut(a: &GenLut) -> Result<()> {
    let mode = a.mode.into();
    let lut = match a.kind {
        LutKind::Exact => exact_lut(mode),
        LutKind::Truncated => truncated_lut(mode, a.drop_bits)?,
    };
    if a.raw {
        save_raw_lut(&lut, &a.output)?;
    } else {
        save_lut(&lut, &a.output)?;
    }
    println!(
        "wrote {} ({} bytes)",
        a.output.display(),
        fs::metadata(&a.output)?.len()
    );
    Ok(())
}

fn lut_stats(a: &LutStats) -> Result<()> {
    let lut = a.source.load(&a.lut)?;
    let s = error_stats(&lut);
    println!("mode = {}", lut.mode().name());
    println!("max_abs_error = {}", s.max_abs_error);
    println!("mean_abs_error = {}", s.mean_abs_error);
    println!("mean_rel_error = {}", s.mean_rel_error);
    println!("error_count = {}", s.error_count);
    Ok(())
}

/// How `target` is written in a model stored at `model`.
fn lut_ref(target: &Path, model: &Path) -> Result<String> {
    let target =
        fs::canonicalize(target).with_context(|| format!("resolving {}", target.display()))?;
    let dir = model
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let dir = fs::canonicalize(dir).with_context(|| format!("resolving {}", dir.display()))?;
    let shown = target
        .strip_prefix(&dir)
        .map(Path::to_path_buf)
        .unwrap_or(target);
    Ok(shown.to_string_lossy().into_owned())
}

fn transform_cmd(a: &TransformCmd) -> Result<()> {
    let lut = Arc::new(load_lut(&a.lut)?);
    let g = load_model(&a.model, Some(lut.clone()))
        .with_context(|| format!("loading {}", a.model.display()))?;
    let mut settings = AxSettings::new(lut, lut_ref(&a.lut, &a.output)?);
    settings.round = a.round.into();
    settings.accumulator = a.accumulator.into();
    settings.chunk_size = a.chunk_size;
    let (t, report) = transform(&g, &settings)?;
    save_model(&t, &a.output)?;
    println!("{report}");
    Ok(())
}

fn load_images(data: Option<&Path>, input: Option<&Path>) -> Result<(Tensor4, Option<Vec<u8>>)> {
    match (data, input) {
        (Some(d), _) => {
            let b = load_cifar10(d)?;
            Ok((b.images, Some(b.labels)))
        }
        (None, Some(i)) => Ok((load_tensor(i)?, None)),
        (None, None) => bail!("one of --data, --input is required"),
    }
}

/// Runs `g` over `images` in batches and returns the joined outputs.
fn forward(
    g: &axemu::LayerGraph,
    images: &Tensor4,
    opts: &RunOptions,
    batch: usize,
) -> Result<Tensor4> {
    if batch == 0 {
        bail!("--batch-size must be positive");
    }
    let n = images.shape()[0];
    let mut parts = Vec::new();
    for start in (0..n).step_by(batch) {
        let part = images.batch_slice(start, (start + batch).min(n))?;
        parts.push(run_traced(g, &part, opts)?.0);
    }
    Ok(Tensor4::concat_batch(&parts)?)
}

fn reference_labels(exec: &Exec, images: &Tensor4) -> Result<Option<Vec<u8>>> {
    let Some(path) = &exec.reference else {
        return Ok(None);
    };
    let g = load_model(path, None).with_context(|| format!("loading {}", path.display()))?;
    Ok(Some(top1(&forward(
        &g,
        images,
        &exec.options(),
        exec.batch_size,
    )?)))
}

fn run_cmd(a: &RunCmd) -> Result<()> {
    let g = a.exec.load_model()?;
    let (images, labels) = load_images(a.data.as_deref(), a.input.as_deref())?;
    let out = forward(&g, &images, &a.exec.options(), a.exec.batch_size)?;
    save_tensor(&out, &a.output)?;
    let pred = top1(&out);
    println!("images = {}", pred.len());
    if let Some(path) = &a.labels {
        let text: String = pred.iter().map(|p| format!("{p}\n")).collect();
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(labels) = labels {
        println!("accuracy = {:.4}", agreement(&pred, &labels));
    }
    if let Some(reference) = reference_labels(&a.exec, &images)? {
        println!("top1_agreement = {:.4}", agreement(&pred, &reference));
    }
    Ok(())
}

fn bench_cmd(a: &BenchCmd) -> Result<()> {
    let data: Cifar10Batch = match &a.data {
        Some(p) => load_cifar10(p)?,
        None => synth_cifar(a.images, a.seed)?,
    };
    let cfg = BenchConfig {
        engine: a.exec.engine.into(),
        workers: a.exec.workers,
        batch_size: a.exec.batch_size,
        warmup_images: a.warmup,
    };
    let mut result = bench(
        || {
            a.exec
                .load_model()
                .map_err(|e| axemu::AxError::Graph(format!("{e:#}")))
        },
        &data,
        &cfg,
    )?;
    let r = &mut result.report;
    r.model = a.exec.model.display().to_string();
    if let Some(lut) = &a.exec.lut {
        r.lut = lut.display().to_string();
    }
    if let Some(reference) = reference_labels(&a.exec, &data.images)? {
        r.top1_agreement = Some(agreement(&result.predictions, &reference));
    }

    print!("{r}");
    println!(
        "accuracy = {:.4}",
        agreement(&result.predictions, &data.labels)
    );
    if let Some(t) = r.top1_agreement {
        println!("top1_agreement = {t:.4}");
    }
    if let Some(path) = &a.baseline {
        let base = RunReport::load(path)?;
        println!(
            "speedup = {:.2}x over {}",
            r.speedup_over(&base),
            path.display()
        );
    }
    if let Some(path) = &a.report {
        r.save(path)?;
    }
    if let Some(path) = &a.csv {
        fs::write(path, r.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &a.output {
        save_tensor(&result.output, path)?;
    }
    Ok(())
}

fn synth_cmd(a: &SynthCmd) -> Result<()> {
    if let Some(path) = &a.data {
        save_cifar10(&synth_cifar(a.images, a.seed)?, path)?;
        println!("wrote {} ({} images)", path.display(), a.images);
    }
    if let Some(path) = &a.model {
        let spec = ResNetSpec {
            blocks: [a.blocks; 3],
            ..ResNetSpec::resnet8(a.width)
        };
        let g = if a.untrained {
            resnet_style(&spec, a.seed)?
        } else {
            pretrained(&spec, a.seed)?
        };
        save_model(&g, path)?;
        println!(
            "wrote {} ({} convolutions, {} MACs per image)",
            path.display(),
            spec.conv_layers(),
            spec.conv_macs()
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenLut(a) => gen_lut(a),
        Command::LutStats(a) => lut_stats(a),
        Command::Transform(a) => transform_cmd(a),
        Command::Run(a) => run_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Synth(a) => synth_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
