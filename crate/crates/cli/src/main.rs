//! Command-line front end: texture synthesis, style transfer, global and
//! masked super-resolution, NNF inspection, and the gradient self-check.
//!
//! The pixel pipeline runs in f32; the gradient check runs in f64 where
//! finite differences are meaningful. Exit codes: 0 success, 1 runtime or
//! validation failure, 2 flag parsing failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gramsr_core::image::{load_image, save_image, Image};
use gramsr_core::losses::Mode;
use gramsr_core::masks::{generate_patchmatch_masks, load_manual_masks, MaskSet};
use gramsr_core::net::{supports_depth, Network, PoolKind};
use gramsr_core::optim::{
    default_style_layers, run_prepared, trace_to_csv, AdamParams, LatentInit, Objective,
    ObjectiveConfig, DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_CONTENT_LAYER, DEFAULT_INIT_NOISE_STD,
    DEFAULT_SR_ITERATIONS, DEFAULT_SYNTH_ITERATIONS,
};
use gramsr_core::patchmatch::{compute_nnf, write_nnf, PatchMatchParams};
use gramsr_core::sampling::{downsample, GaussianKernel};

type S = f32;

#[derive(Parser)]
#[command(
    name = "gramsr",
    about = "Example-based super-resolution and texture synthesis by descent on Gram-matrix statistics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a texture from noise, matching an example's Gram statistics
    Synth(SynthArgs),
    /// Transfer example texture onto a content image
    Transfer(TransferArgs),
    /// Super-resolve an image with a globally matched example texture
    Sr(SrArgs),
    /// Super-resolve with locally masked texture matching
    SrLocal(SrLocalArgs),
    /// Compute and dump a nearest-neighbor field between two images
    Nnf(NnfArgs),
    /// Verify every analytic gradient against finite differences
    Gradcheck(GradcheckArgs),
    /// Write a seeded random weight file (for tests and experimentation)
    GenWeights(GenWeightsArgs),
}

#[derive(Args)]
struct GenWeightsArgs {
    /// Output weight file path
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct CommonOpt {
    /// Weight file (GMW1 format)
    #[arg(long)]
    weights: PathBuf,
    /// Example (style) image
    #[arg(long)]
    style: PathBuf,
    /// Output image path (.png or .pgm)
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV loss trace path
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Style layers (comma separated, weight 1 each)
    #[arg(long, value_delimiter = ',')]
    style_layers: Option<Vec<String>>,
    /// Iteration count
    #[arg(long)]
    iterations: Option<usize>,
    /// Adam learning rate
    #[arg(long, default_value_t = 0.02)]
    lr: f64,
    /// RNG seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Style weight beta
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    /// Pooling variant: avg or max
    #[arg(long, default_value = "avg")]
    pooling: String,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonOpt,
    /// Output height
    #[arg(long)]
    height: usize,
    /// Output width
    #[arg(long)]
    width: usize,
}

#[derive(Args)]
struct TransferArgs {
    #[command(flatten)]
    common: CommonOpt,
    /// Content image
    #[arg(long)]
    input: PathBuf,
    /// Content weight alpha
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Content layer
    #[arg(long, default_value = DEFAULT_CONTENT_LAYER)]
    content_layer: String,
}

#[derive(Args, Clone)]
struct SrArgs {
    #[command(flatten)]
    common: CommonOpt,
    /// Low-resolution input image
    #[arg(long)]
    input: PathBuf,
    /// Upsampling factor
    #[arg(long, default_value_t = 3)]
    factor: usize,
    /// Gaussian blur sigma of the formation model (default 0.5 * factor)
    #[arg(long)]
    sigma: Option<f64>,
    /// Faithfulness weight alpha
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Std of the Gaussian perturbation added to the bicubic init
    #[arg(long, default_value_t = DEFAULT_INIT_NOISE_STD)]
    init_noise: f64,
}

#[derive(Args)]
struct SrLocalArgs {
    #[command(flatten)]
    sr: SrArgs,
    /// Output-side manual mask (repeatable, paired with --mask-s in order)
    #[arg(long)]
    mask_x: Vec<PathBuf>,
    /// Style-side manual mask (repeatable)
    #[arg(long)]
    mask_s: Vec<PathBuf>,
    /// Generate mask pairs automatically with PatchMatch
    #[arg(long, default_value_t = false)]
    auto_masks: bool,
    /// Cell size of automatic output masks (default 8 * factor)
    #[arg(long)]
    cell: Option<usize>,
    /// Stamp size of automatic style masks (default patch * factor)
    #[arg(long)]
    stamp: Option<usize>,
    /// Mask dilation radius (default factor)
    #[arg(long)]
    dilate: Option<usize>,
    /// PatchMatch patch size
    #[arg(long, default_value_t = 7)]
    patch: usize,
    /// PatchMatch iterations
    #[arg(long, default_value_t = 5)]
    pm_iters: usize,
}

#[derive(Args)]
struct NnfArgs {
    /// Source (query) image
    #[arg(long)]
    input: PathBuf,
    /// Target image
    #[arg(long)]
    style: PathBuf,
    /// Binary NNF1 dump path
    #[arg(long)]
    out: PathBuf,
    /// Offset visualization image (default: dump path with .png appended)
    #[arg(long)]
    viz: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    patch: usize,
    #[arg(long, default_value_t = 5)]
    pm_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Corrupt the conv kernel flip to prove the harness catches it
    #[arg(long, default_value_t = false)]
    debug_no_flip: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Transfer(args) => cmd_transfer(args),
        Command::Sr(args) => cmd_sr(args).map(|_| ()),
        Command::SrLocal(args) => cmd_sr_local(args),
        Command::Nnf(args) => cmd_nnf(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::GenWeights(args) => cmd_gen_weights(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

type CmdResult = Result<(), String>;

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn style_layer_weights(names: &Option<Vec<String>>) -> Vec<(String, S)> {
    match names {
        Some(list) => list.iter().map(|n| (n.clone(), 1.0)).collect(),
        None => default_style_layers(),
    }
}

fn pool_kind(name: &str) -> Result<PoolKind, String> {
    match name {
        "avg" => Ok(PoolKind::Average),
        "max" => Ok(PoolKind::Max),
        other => Err(format!("unknown pooling {other:?}, use avg or max")),
    }
}

fn load_network(path: &PathBuf, pooling: &str) -> Result<Network<S>, String> {
    let mut net = Network::load(path).map_err(fail)?;
    net.pooling = pool_kind(pooling)?;
    Ok(net)
}

/// Fail-fast check that every configured layer is computable at this size.
fn check_depths(h: usize, w: usize, layers: &[(String, S)], label: &str) -> CmdResult {
    for (name, _) in layers {
        supports_depth(h, w, name).map_err(|e| format!("{label}: {e}"))?;
    }
    Ok(())
}

fn echo_common(cmd: &str, c: &CommonOpt, iterations: usize, extra: &str) {
    eprintln!(
        "{cmd}: weights={} style={} out={} iterations={iterations} lr={} seed={} beta={} \
         pooling={} style_layers={:?}{extra}",
        c.weights.display(),
        c.style.display(),
        c.out.display(),
        c.lr,
        c.seed,
        c.beta,
        c.pooling,
        c.style_layers
            .clone()
            .unwrap_or_else(|| default_style_layers::<S>().into_iter().map(|(n, _)| n).collect()),
    );
}

fn optimize_and_save(
    net: &Network<S>,
    cfg: ObjectiveConfig<S>,
    iterations: usize,
    lr: f64,
    common: &CommonOpt,
) -> Result<Image<S>, String> {
    let adam = AdamParams {
        lr: lr as S,
        ..AdamParams::default()
    };
    let objective = Objective::new(net, cfg).map_err(fail)?;
    for (pair, layer) in objective.skipped_mask_layers() {
        eprintln!("warning: mask pair {pair} is empty at {layer} and contributes nothing there");
    }
    let (x, trace) = run_prepared(&objective, iterations, &adam, |i, b| {
        if (i + 1) % 100 == 0 || i + 1 == iterations {
            eprintln!("iter {:>5}  total {:.6e}", i + 1, b.total);
        }
    })
    .map_err(fail)?;
    save_image(&x, &common.out).map_err(fail)?;
    if let Some(trace_path) = &common.trace {
        std::fs::write(trace_path, trace_to_csv(&trace))
            .map_err(|e| format!("cannot write trace {}: {e}", trace_path.display()))?;
    }
    Ok(x)
}

fn cmd_synth(args: SynthArgs) -> CmdResult {
    let c = &args.common;
    let iterations = c.iterations.unwrap_or(DEFAULT_SYNTH_ITERATIONS);
    echo_common(
        "synth",
        c,
        iterations,
        &format!(" height={} width={}", args.height, args.width),
    );
    let layers = style_layer_weights(&c.style_layers);
    check_depths(args.height, args.width, &layers, "output size")?;
    let net = load_network(&c.weights, &c.pooling)?;
    let style = load_image::<S>(&c.style).map_err(fail)?;
    check_depths(style.height(), style.width(), &layers, "style image")?;
    let cfg = ObjectiveConfig {
        mode: Mode::SrGlobal,
        alpha: 0.0,
        beta: c.beta as S,
        style_layers: layers,
        content_layer: DEFAULT_CONTENT_LAYER.into(),
        factor: 1,
        kernel: GaussianKernel::delta(),
        mask_set: None,
        style_image: style,
        input_image: None,
        out_size: Some((args.height, args.width)),
        init: LatentInit::UniformNoise { lo: 0.4, hi: 0.6 },
        seed: c.seed,
    };
    optimize_and_save(&net, cfg, iterations, c.lr, c)?;
    Ok(())
}

fn cmd_transfer(args: TransferArgs) -> CmdResult {
    let c = &args.common;
    let iterations = c.iterations.unwrap_or(DEFAULT_SR_ITERATIONS);
    echo_common(
        "transfer",
        c,
        iterations,
        &format!(
            " input={} alpha={} content_layer={}",
            args.input.display(),
            args.alpha,
            args.content_layer
        ),
    );
    let layers = style_layer_weights(&c.style_layers);
    let net = load_network(&c.weights, &c.pooling)?;
    let content = load_image::<S>(&args.input).map_err(fail)?;
    let style = load_image::<S>(&c.style).map_err(fail)?;
    check_depths(content.height(), content.width(), &layers, "content image")?;
    check_depths(style.height(), style.width(), &layers, "style image")?;
    supports_depth(content.height(), content.width(), &args.content_layer).map_err(fail)?;
    let cfg = ObjectiveConfig {
        mode: Mode::Transfer,
        alpha: args.alpha as S,
        beta: c.beta as S,
        style_layers: layers,
        content_layer: args.content_layer.clone(),
        factor: 1,
        kernel: GaussianKernel::delta(),
        mask_set: None,
        style_image: style,
        input_image: Some(content),
        out_size: None,
        init: LatentInit::ContentCopy,
        seed: c.seed,
    };
    optimize_and_save(&net, cfg, iterations, c.lr, c)?;
    Ok(())
}

/// Shared sr / sr-local pipeline; returns the saved output image.
fn run_sr(args: &SrArgs, mask_set: Option<MaskSet<S>>) -> Result<Image<S>, String> {
    let c = &args.common;
    let iterations = c.iterations.unwrap_or(DEFAULT_SR_ITERATIONS);
    let sigma = args.sigma.unwrap_or(0.5 * args.factor as f64);
    let mode = if mask_set.is_some() { Mode::SrLocal } else { Mode::SrGlobal };
    echo_common(
        if mask_set.is_some() { "sr-local" } else { "sr" },
        c,
        iterations,
        &format!(
            " input={} factor={} sigma={sigma} alpha={} init_noise={}",
            args.input.display(),
            args.factor,
            args.alpha,
            args.init_noise
        ),
    );
    if args.factor < 1 {
        return Err("factor must be >= 1".into());
    }
    let layers = style_layer_weights(&c.style_layers);
    let input = load_image::<S>(&args.input).map_err(fail)?;
    let (out_h, out_w) = (input.height() * args.factor, input.width() * args.factor);
    check_depths(out_h, out_w, &layers, "output size")?;
    let net = load_network(&c.weights, &c.pooling)?;
    let style = load_image::<S>(&c.style).map_err(fail)?;
    check_depths(style.height(), style.width(), &layers, "style image")?;
    let kernel = GaussianKernel::new(sigma as S).map_err(fail)?;
    let cfg = ObjectiveConfig {
        mode,
        alpha: args.alpha as S,
        beta: c.beta as S,
        style_layers: layers,
        content_layer: DEFAULT_CONTENT_LAYER.into(),
        factor: args.factor,
        kernel: kernel.clone(),
        mask_set,
        style_image: style,
        input_image: Some(input.clone()),
        out_size: None,
        init: LatentInit::BicubicOfInput {
            noise_std: args.init_noise as S,
        },
        seed: c.seed,
    };
    let x = optimize_and_save(&net, cfg, iterations, c.lr, c)?;

    // residual of the saved (clamped) output against the LR input
    let clamped = x.map(|v| v.clamp(0.0, 1.0));
    let down = downsample(&clamped, args.factor, &kernel).map_err(fail)?;
    let mse: f64 = down
        .as_slice()
        .iter()
        .zip(input.as_slice())
        .map(|(&a, &b)| ((a - b) as f64).powi(2))
        .sum::<f64>()
        / (input.height() * input.width()) as f64;
    eprintln!("downsampled-output residual RMSE: {:.6}", mse.sqrt());
    Ok(x)
}

fn cmd_sr(args: SrArgs) -> Result<Image<S>, String> {
    run_sr(&args, None)
}

fn cmd_sr_local(args: SrLocalArgs) -> CmdResult {
    let sr = &args.sr;
    let input = load_image::<S>(&sr.input).map_err(fail)?;
    let style = load_image::<S>(&sr.common.style).map_err(fail)?;
    let f = sr.factor;
    let (out_h, out_w) = (input.height() * f, input.width() * f);
    let dilate = args.dilate.unwrap_or(f);

    let mask_set = if args.auto_masks {
        if !args.mask_x.is_empty() || !args.mask_s.is_empty() {
            return Err("--auto-masks conflicts with manual --mask-x/--mask-s".into());
        }
        // LR version of the style image through the same formation model;
        // crop to a multiple of the factor first
        if style.height() < f || style.width() < f {
            return Err(format!(
                "style image {}x{} is smaller than the factor {f}",
                style.height(),
                style.width()
            ));
        }
        let sigma = sr.sigma.unwrap_or(0.5 * f as f64);
        let kernel = GaussianKernel::new(sigma as S).map_err(fail)?;
        let style_crop = style.crop(
            0,
            0,
            style.height() - style.height() % f,
            style.width() - style.width() % f,
        );
        let style_lr = downsample(&style_crop, f, &kernel).map_err(fail)?;
        let params = PatchMatchParams::<S> {
            patch_size: args.patch,
            iterations: args.pm_iters,
            rng_seed: sr.common.seed,
            ..Default::default()
        };
        let nnf = compute_nnf(&input, &style_lr, &params).map_err(fail)?;
        let cell = args.cell.unwrap_or(8 * f);
        let stamp = args.stamp.unwrap_or(args.patch * f);
        let (set, report) = generate_patchmatch_masks(
            &nnf,
            f,
            out_h,
            out_w,
            style_crop.height(),
            style_crop.width(),
            cell,
            stamp,
            dilate,
        )
        .map_err(fail)?;
        eprintln!(
            "auto masks: K={} cell={cell} stamp={stamp} dilate={dilate} borrowed_cells={}",
            set.len(),
            report.borrowed_cells.len()
        );
        set
    } else {
        if args.mask_x.is_empty() {
            return Err("sr-local needs --mask-x/--mask-s pairs or --auto-masks".into());
        }
        let set = load_manual_masks::<S>(
            &args.mask_x,
            &args.mask_s,
            out_h,
            out_w,
            style.height(),
            style.width(),
            dilate,
        )
        .map_err(fail)?;
        eprintln!("manual masks: K={} dilate={dilate}", set.len());
        set
    };

    run_sr(sr, Some(mask_set))?;
    Ok(())
}

fn cmd_nnf(args: NnfArgs) -> CmdResult {
    eprintln!(
        "nnf: input={} style={} out={} patch={} pm_iters={} seed={}",
        args.input.display(),
        args.style.display(),
        args.out.display(),
        args.patch,
        args.pm_iters,
        args.seed
    );
    let src = load_image::<S>(&args.input).map_err(fail)?;
    let tgt = load_image::<S>(&args.style).map_err(fail)?;
    let params = PatchMatchParams::<S> {
        patch_size: args.patch,
        iterations: args.pm_iters,
        rng_seed: args.seed,
        ..Default::default()
    };
    let field = compute_nnf(&src, &tgt, &params).map_err(fail)?;
    write_nnf(&field, &args.out).map_err(fail)?;

    // side-by-side dy | dx panels, each min-max normalized
    let viz_path = args.viz.unwrap_or_else(|| {
        let mut p = args.out.clone();
        p.set_extension("viz.png");
        p
    });
    let (h, w) = (field.height, field.width);
    let normalize = |vals: Vec<f64>| -> Vec<f64> {
        let (lo, hi) = vals
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        if hi > lo {
            vals.iter().map(|&v| (v - lo) / (hi - lo)).collect()
        } else {
            vec![0.5; vals.len()]
        }
    };
    let dy = normalize(field.offsets.iter().map(|o| o.0 as f64).collect());
    let dx = normalize(field.offsets.iter().map(|o| o.1 as f64).collect());
    let viz = Image::<S>::from_fn(h, 2 * w, |y, x| {
        if x < w {
            dy[y * w + x] as S
        } else {
            dx[y * w + (x - w)] as S
        }
    });
    save_image(&viz, &viz_path).map_err(fail)?;
    eprintln!(
        "nnf: mean distance {:.6}, dump {} + visualization {}",
        field.mean_distance(),
        args.out.display(),
        viz_path.display()
    );
    Ok(())
}

fn cmd_gen_weights(args: GenWeightsArgs) -> CmdResult {
    eprintln!("gen-weights: out={} seed={}", args.out.display(), args.seed);
    Network::<S>::random(args.seed).save(&args.out).map_err(fail)
}

fn cmd_gradcheck(args: GradcheckArgs) -> CmdResult {
    eprintln!("gradcheck: debug_no_flip={}", args.debug_no_flip);
    let report = gramsr_core::check::run_suite(args.debug_no_flip);
    print!("{}", report.render());
    if report.all_passed() {
        Ok(())
    } else {
        Err("gradient checks failed".into())
    }
}
