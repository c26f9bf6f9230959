use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adablock::analysis::{channel_mse, gaussian_tensor, mse_csv, mse_gaussian, range_csv, sr_bias};
use adablock::container::{self, raw_f32_bytes, read_raw_f32, write_atomic};
use adablock::formats::{reference_document, Selection};
use adablock::quantizer::{quantize_with_stats, GRADIENT_SCALE_UNBIAS};
use adablock::rng::derive_seed;
use adablock::transform::{rht_rows, rht_rows_inverse, HadamardConfig};
use adablock::{dequantize, mac, Error, FormatId, QuantOptions, RoundMode, TensorView};
use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Salt separating the Hadamard sign stream from the rounding streams.
const HADAMARD_SALT: u64 = 0x4841_4441;

const TABLE_FORMATS: [FormatId; 5] = [
    FormatId::Mxfp4,
    FormatId::Nvfp4,
    FormatId::Nvfp4FourSix,
    FormatId::Nvint4,
    FormatId::If4,
];

#[derive(Parser)]
#[command(name = "adablock", version, about = "Adaptive block-scaled low-precision quantization")]
struct Cli {
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true, env = "ADABLOCK_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize a raw little-endian f32 file into an ABSD container.
    Quantize(QuantizeArgs),
    /// Decode an ABSD container back to raw little-endian f32.
    Dequantize(DequantizeArgs),
    /// Mean squared error of each format on standard-normal samples.
    MseGaussian(MseArgs),
    /// Representable range of each format, relative to NVFP4.
    Range(RangeArgs),
    /// Mean signed error of stochastic rounding per value.
    Bias(BiasArgs),
    /// Per-row quantization error of a rank-2 tensor, sorted per format.
    ChannelMse(ChannelArgs),
    /// Compare the MAC datapath model against an exact reference.
    MacVerify(MacArgs),
    /// Print every element code and scale byte of the builtin formats.
    Reference(OutputArg),
}

#[derive(Clone, Copy, ValueEnum)]
enum Rounding {
    Nearest,
    Stochastic,
}

#[derive(Args)]
struct OutputArg {
    /// Write to this file instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long, short)]
    input: PathBuf,
    /// Comma-separated dimensions; the last one is the blocked axis.
    #[arg(long, value_delimiter = ',', required = true)]
    shape: Vec<usize>,
    #[arg(long, short)]
    format: String,
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "nearest")]
    rounding: Rounding,
    /// Required with stochastic rounding or --hadamard.
    #[arg(long)]
    seed: Option<u64>,
    /// Use the four-over-six variant of an NVFP4 format.
    #[arg(long)]
    four_six: bool,
    /// Apply a random Hadamard transform of this size along rows first.
    #[arg(long)]
    hadamard: Option<usize>,
    /// Block-scale factor in (0, 1]; 16/17 is used for gradients.
    #[arg(long)]
    scale_unbias: Option<f64>,
}

#[derive(Args)]
struct DequantizeArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    /// Undo a Hadamard transform applied at quantization time.
    #[arg(long, requires = "seed")]
    hadamard: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct MseArgs {
    #[arg(long, value_delimiter = ',')]
    formats: Vec<String>,
    #[arg(long, default_value_t = 10_000_000)]
    samples: usize,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    out: OutputArg,
}

#[derive(Args)]
struct RangeArgs {
    #[arg(long, value_delimiter = ',')]
    formats: Vec<String>,
    #[command(flatten)]
    out: OutputArg,
}

#[derive(Args)]
#[group(id = "source", required = true, multiple = false, args = ["input", "gaussian"])]
struct BiasArgs {
    /// Raw f32 values, blocked in file order.
    #[arg(long, short)]
    input: Option<PathBuf>,
    /// Use this many standard-normal values instead of an input file.
    #[arg(long)]
    gaussian: Option<usize>,
    #[arg(long, short, default_value = "IF4")]
    format: String,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = GRADIENT_SCALE_UNBIAS)]
    scale_unbias: f64,
    #[command(flatten)]
    out: OutputArg,
}

#[derive(Args)]
struct ChannelArgs {
    #[arg(long, short)]
    input: PathBuf,
    /// Rows,columns.
    #[arg(long, value_delimiter = ',', required = true)]
    shape: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    formats: Vec<String>,
    #[command(flatten)]
    out: OutputArg,
}

#[derive(Args)]
struct MacArgs {
    #[arg(long, default_value_t = 100_000)]
    blocks: usize,
    #[arg(long)]
    seed: u64,
    /// Also print the full datapath trace of the first block.
    #[arg(long)]
    trace: bool,
}

fn formats(names: &[String]) -> anyhow::Result<Vec<FormatId>> {
    if names.is_empty() {
        return Ok(TABLE_FORMATS.to_vec());
    }
    Ok(names.iter().map(|n| FormatId::from_name(n)).collect::<Result<_, _>>()?)
}

fn four_six_variant(id: FormatId) -> anyhow::Result<FormatId> {
    match id {
        FormatId::Nvfp4 | FormatId::Nvfp4FourSix => Ok(FormatId::Nvfp4FourSix),
        FormatId::Nvfp4Bs8 | FormatId::Nvfp4Bs8FourSix => Ok(FormatId::Nvfp4Bs8FourSix),
        other => Err(Error::InvalidArgument(format!("{other} has no four-over-six variant")).into()),
    }
}

fn read_tensor(path: &Path, shape: &[usize]) -> anyhow::Result<TensorView> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(read_raw_f32(&bytes, shape)?)
}

fn emit(out: &OutputArg, text: &str) -> anyhow::Result<()> {
    match &out.output {
        Some(p) => Ok(write_atomic(p, text.as_bytes())?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn join_shape(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

fn hadamard(size: usize, seed: u64) -> anyhow::Result<HadamardConfig> {
    Ok(HadamardConfig::new(size, derive_seed(seed, HADAMARD_SALT))?)
}

fn cmd_quantize(a: &QuantizeArgs) -> anyhow::Result<()> {
    let mut id = FormatId::from_name(&a.format)?;
    if a.four_six {
        id = four_six_variant(id)?;
    }
    let spec = id.spec();
    let needs_seed = matches!(a.rounding, Rounding::Stochastic) || a.hadamard.is_some();
    let seed = match (a.seed, needs_seed) {
        (Some(s), _) => s,
        (None, false) => 0,
        (None, true) => bail!(Error::InvalidArgument(
            "--seed is required with stochastic rounding or --hadamard".into()
        )),
    };
    let mut opts = QuantOptions {
        mode: match a.rounding {
            Rounding::Nearest => RoundMode::Nearest,
            Rounding::Stochastic => RoundMode::Stochastic,
        },
        seed,
        ..QuantOptions::default()
    };
    if let Some(u) = a.scale_unbias {
        opts = opts.with_scale_unbias(u);
    }

    let x = read_tensor(&a.input, &a.shape)?;
    let cfg = a.hadamard.map(|n| hadamard(n, seed)).transpose()?;
    let input = match &cfg {
        Some(c) => rht_rows(&x, c)?.tensor,
        None => x.clone(),
    };
    let (q, stats) = quantize_with_stats(&input, spec, &opts)?;
    let mut y = dequantize(&q)?;
    if let Some(c) = &cfg {
        y = rht_rows_inverse(&y, c)?.tensor;
    }
    let mse = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&p, &r)| (r as f64 - p as f64).powi(2))
        .sum::<f64>()
        / x.len() as f64;
    write_atomic(&a.output, &container::to_bytes(&q)?)?;

    let (int_rate, max4_rate) = match spec.selection {
        Selection::IntFloat => (stats.alternate_rate().to_string(), String::new()),
        Selection::FourSix => (String::new(), stats.alternate_rate().to_string()),
        Selection::Single => (String::new(), String::new()),
    };
    println!("format,shape,elements,blocks,alpha,mse,int_selection_rate,max4_rate");
    println!(
        "{},{},{},{},{:e},{:.6e},{},{}",
        id,
        join_shape(&a.shape),
        x.len(),
        stats.blocks,
        q.alpha,
        mse,
        int_rate,
        max4_rate
    );
    println!(
        "# config: command=quantize input={} output={} format={} rounding={} seed={} hadamard={} scale_unbias={}",
        a.input.display(),
        a.output.display(),
        id,
        match a.rounding {
            Rounding::Nearest => "nearest",
            Rounding::Stochastic => "stochastic",
        },
        seed,
        a.hadamard.map_or("none".into(), |n| n.to_string()),
        opts.scale_unbias
    );
    Ok(())
}

fn cmd_dequantize(a: &DequantizeArgs) -> anyhow::Result<()> {
    let bytes = std::fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let q = container::from_bytes(&bytes)?;
    let mut y = dequantize(&q)?;
    if let (Some(n), Some(seed)) = (a.hadamard, a.seed) {
        y = rht_rows_inverse(&y, &hadamard(n, seed)?)?.tensor;
    }
    write_atomic(&a.output, &raw_f32_bytes(&y))?;
    println!("format,shape,elements,alpha");
    println!("{},{},{},{:e}", q.format, join_shape(&q.shape), y.len(), q.alpha);
    println!(
        "# config: command=dequantize input={} output={} hadamard={} seed={}",
        a.input.display(),
        a.output.display(),
        a.hadamard.map_or("none".into(), |n| n.to_string()),
        a.seed.map_or("none".into(), |s| s.to_string())
    );
    Ok(())
}

fn cmd_mse(a: &MseArgs) -> anyhow::Result<()> {
    let ids = formats(&a.formats)?;
    let reports = ids
        .iter()
        .map(|id| mse_gaussian(id.spec(), a.samples, a.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let mut text = mse_csv(&reports);
    let _ = writeln!(
        text,
        "# config: command=mse-gaussian samples={} seed={} rounding=nearest",
        a.samples, a.seed
    );
    emit(&a.out, &text)
}

fn cmd_range(a: &RangeArgs) -> anyhow::Result<()> {
    let ids = formats(&a.formats)?;
    let specs: Vec<_> = ids.iter().map(|id| id.spec()).collect();
    let mut text = range_csv(&specs);
    text.push_str("# config: command=range\n");
    emit(&a.out, &text)
}

fn cmd_bias(a: &BiasArgs) -> anyhow::Result<()> {
    let id = FormatId::from_name(&a.format)?;
    let (values, source) = match (&a.input, a.gaussian) {
        (Some(p), _) => {
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            if bytes.is_empty() || bytes.len() % 4 != 0 {
                bail!(Error::Shape(format!("{} is not a whole number of f32 values", p.display())));
            }
            let v = read_raw_f32(&bytes, &[bytes.len() / 4])?.into_data();
            (v, p.display().to_string())
        }
        (None, Some(n)) => {
            let t = gaussian_tensor(vec![n], derive_seed(a.seed, 1), 0.0, 1.0)?;
            (t.into_data(), format!("gaussian:{n}"))
        }
        (None, None) => unreachable!("clap enforces one source"),
    };
    let curve = sr_bias(&values, id.spec(), a.trials, a.seed, a.scale_unbias)?;
    let mut text = curve.to_csv();
    let _ = writeln!(
        text,
        "# config: command=bias source={} format={} trials={} seed={} scale_unbias={}",
        source, id, a.trials, a.seed, a.scale_unbias
    );
    emit(&a.out, &text)
}

fn cmd_channel(a: &ChannelArgs) -> anyhow::Result<()> {
    let ids = formats(&a.formats)?;
    let x = read_tensor(&a.input, &a.shape)?;
    let specs: Vec<_> = ids.iter().map(|id| id.spec()).collect();
    let mut text = channel_mse(&x, &specs)?.to_csv();
    let _ = writeln!(
        text,
        "# config: command=channel-mse input={} shape={}",
        a.input.display(),
        join_shape(&a.shape)
    );
    emit(&a.out, &text)
}

fn cmd_mac(a: &MacArgs) -> anyhow::Result<bool> {
    let report = mac::verify(a.blocks, a.seed)?;
    print!("{}", report.to_text());
    if a.trace {
        let mut rng = adablock::rng::substream(a.seed, 0);
        let (w, x, ws, xs) = mac::random_if4_block(&mut rng);
        let (_, trace) = mac::mac_if4(&w, &x, ws, xs, 0.0)?;
        print!("{}", trace.dump());
    }
    Ok(report.passed())
}

/// Prints the machine-readable error line and picks the exit code.
fn report_error(e: &anyhow::Error) -> ExitCode {
    let kind = e.downcast_ref::<Error>().map_or("other", Error::kind);
    let msg = format!("{e:#}").replace('\n', " ");
    eprintln!("error kind={kind}: {msg}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("error kind=usage: {first}");
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return report_error(&anyhow!(e));
        }
    }
    let result = match &cli.command {
        Command::Quantize(a) => cmd_quantize(a).map(|_| true),
        Command::Dequantize(a) => cmd_dequantize(a).map(|_| true),
        Command::MseGaussian(a) => cmd_mse(a).map(|_| true),
        Command::Range(a) => cmd_range(a).map(|_| true),
        Command::Bias(a) => cmd_bias(a).map(|_| true),
        Command::ChannelMse(a) => cmd_channel(a).map(|_| true),
        Command::MacVerify(a) => cmd_mac(a),
        Command::Reference(o) => emit(o, &reference_document()).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error kind=check_failed: verification failed");
            ExitCode::from(1)
        }
        Err(e) => report_error(&e),
    }
}
