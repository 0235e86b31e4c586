use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use presgd_core::bounds::{BoundConstants, SignalFactor};
use presgd_core::harness::{
    self, append_records, bounds_report, load_instance, run_figure1, run_fixed, run_sweep, separation_report,
    BoundsRequest, ExperimentConfig, FixedRun, HarnessError, Overrides,
};
use presgd_core::problem::{InstanceSpec, SpectrumMode, TargetMode};
use presgd_core::tuning::{Flag, Method, Params};

#[derive(Parser, Debug)]
#[command(name = "presgd", version, about = "Preconditioned SGD and ridge regression experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Experiment config (TOML); flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Write SVG charts.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    emit_svg: Option<bool>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write an instance document.
    Gen(GenArgs),
    /// Run one method at fixed hyperparameters and append its records.
    Run(RunArgs),
    /// Tune methods over a range of sample sizes on one instance.
    Sweep(SweepArgs),
    /// Tune SGD, ridge and the preconditioned variants on the six comparison panels.
    Figure1(Figure1Args),
    /// Evaluate risk bounds.
    Bounds(BoundsArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    d: usize,
    /// inv_1, inv_2 or custom.
    #[arg(long)]
    spectrum: String,
    /// ones, inv_1, inv_10 or custom.
    #[arg(long)]
    target: String,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    /// Eigenvalues for a custom spectrum.
    #[arg(long, value_delimiter = ',')]
    spectrum_values: Vec<f64>,
    /// Entries of a custom target.
    #[arg(long, value_delimiter = ',')]
    target_values: Vec<f64>,
    /// Destination; defaults to `instance.toml` in the output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Instance document; the config's `[instance]` table otherwise.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long)]
    method: Method,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    n_values: Option<Vec<usize>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
}

#[derive(Args, Debug)]
struct Figure1Args {
    /// Panels to run, e.g. `a,c`.
    #[arg(long, value_delimiter = ',')]
    instances: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    n_values: Option<Vec<usize>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Compare the bounds on the spiked instance at each of `--n-values`.
    #[arg(long)]
    spiked: bool,
    #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
    n_values: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    k1: Option<usize>,
    #[arg(long)]
    k2: Option<usize>,
    /// Include per-direction bias and variance terms.
    #[arg(long)]
    per_direction: bool,
    /// Report the ridge lower bound against the SGD upper bound.
    #[arg(long)]
    compare: bool,
    #[arg(long, default_value_t = 100.0)]
    slack: f64,
    #[arg(long, default_value_t = 2.0)]
    b: f64,
    /// Use the unsquared signal norm in the SGD variance.
    #[arg(long)]
    unsquared: bool,
}

fn base_config(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig {
            seed: Some(0),
            ..ExperimentConfig::default()
        },
    };
    cfg.apply(&Overrides {
        seed: common.seed,
        out_dir: common.out.clone(),
        workers: common.workers,
        emit_svg: common.emit_svg,
        ..Overrides::default()
    });
    Ok(cfg)
}

fn create_dir(path: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(path).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn instance_for(cfg: &ExperimentConfig, file: Option<&Path>) -> Result<(String, InstanceSpec), HarnessError> {
    match file {
        Some(path) => {
            let (spec, _) = load_instance(path)?;
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| cfg.instance_id.clone());
            Ok((id, spec))
        }
        None => cfg
            .instance
            .clone()
            .map(|s| (cfg.instance_id.clone(), s))
            .ok_or_else(|| HarnessError::Config("no instance: pass --instance or add an [instance] table".into())),
    }
}

fn gen(cfg: &ExperimentConfig, a: &GenArgs) -> Result<(), HarnessError> {
    let spectrum = match a.spectrum.as_str() {
        "custom" => SpectrumMode::Custom {
            values: a.spectrum_values.clone(),
        },
        s => SpectrumMode::parse(s).ok_or_else(|| HarnessError::Config(format!("unknown spectrum `{s}`")))?,
    };
    let target = match a.target.as_str() {
        "custom" => TargetMode::Custom {
            values: a.target_values.clone(),
        },
        s => TargetMode::parse(s).ok_or_else(|| HarnessError::Config(format!("unknown target `{s}`")))?,
    };
    let spec = InstanceSpec {
        d: a.d,
        sigma2: a.sigma2,
        spectrum,
        target,
    };
    let path = match &a.output {
        Some(p) => p.clone(),
        None => {
            create_dir(&cfg.out_dir)?;
            cfg.out_dir.join("instance.toml")
        }
    };
    harness::write_instance(&path, &spec)?;
    println!("{}", path.display());
    Ok(())
}

fn run(cfg: &ExperimentConfig, a: &RunArgs) -> Result<(), HarnessError> {
    let seed = cfg.seed()?;
    let (id, spec) = instance_for(cfg, a.instance.as_deref())?;
    let inst = spec.build()?;
    let records = run_fixed(
        &inst,
        &FixedRun {
            instance_id: id,
            method: a.method,
            params: Params {
                eta: a.eta,
                beta: a.beta,
                lambda: a.lambda,
            },
            n: a.n,
            trials: a.trials.unwrap_or(cfg.grid.trials),
            test_size: a.test_size.unwrap_or(cfg.grid.test_size),
            seed,
            preridge_gamma_power: cfg.grid.preridge_gamma_power,
            record_timing: cfg.record_timing,
        },
    )?;
    create_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("records.csv");
    append_records(&path, &records)?;
    let ok: Vec<f64> = records.iter().filter(|r| r.flag == Flag::Ok).map(|r| r.mse).collect();
    if ok.is_empty() {
        println!("{} records appended to {}; none ok ({})", records.len(), path.display(), records[0].flag.as_str());
    } else {
        let mean = ok.iter().sum::<f64>() / ok.len() as f64;
        println!("{} records appended to {}; mean mse {mean}", records.len(), path.display());
    }
    Ok(())
}

fn print_outputs(out: &harness::ExperimentOutput) {
    let failed = out.cells.iter().filter(|c| c.best.is_none()).count();
    println!("records: {}", out.records.display());
    println!("summary: {}", out.summary.display());
    println!("grid:    {}", out.grid.display());
    for c in &out.charts {
        println!("chart:   {}", c.display());
    }
    if failed > 0 {
        println!("{failed} cells had no usable configuration; see summary.csv");
    }
}

fn sweep(mut cfg: ExperimentConfig, a: &SweepArgs) -> Result<(), HarnessError> {
    cfg.apply(&Overrides {
        n_values: a.n_values.clone(),
        trials: a.trials,
        test_size: a.test_size,
        methods: a.methods.clone(),
        ..Overrides::default()
    });
    if a.instance.is_some() {
        let (id, spec) = instance_for(&cfg, a.instance.as_deref())?;
        cfg.instance_id = id;
        cfg.instance = Some(spec);
    }
    print_outputs(&run_sweep(&cfg)?);
    Ok(())
}

fn figure1(mut cfg: ExperimentConfig, a: &Figure1Args) -> Result<(), HarnessError> {
    cfg.apply(&Overrides {
        n_values: a.n_values.clone(),
        trials: a.trials,
        test_size: a.test_size,
        instances: a.instances.clone(),
        methods: a.methods.clone(),
        ..Overrides::default()
    });
    print_outputs(&run_figure1(&cfg)?);
    Ok(())
}

fn bounds(cfg: &ExperimentConfig, a: &BoundsArgs) -> Result<(), HarnessError> {
    let consts = BoundConstants::new(a.b, a.slack)?;
    let json = if a.spiked {
        separation_report(&a.n_values, &consts)?.to_json()
    } else {
        let (id, spec) = instance_for(cfg, a.instance.as_deref())?;
        let req = BoundsRequest {
            n: a.n,
            lambda: a.lambda,
            eta: a.eta,
            beta: a.beta,
            k1: a.k1,
            k2: a.k2,
            per_direction: a.per_direction,
            compare: a.compare,
            factor: if a.unsquared {
                SignalFactor::Unsquared
            } else {
                SignalFactor::Squared
            },
            consts,
        };
        bounds_report(&id, &spec.build()?, &req)?.to_json()
    };
    create_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join("bounds.json"), &json)?;
    print!("{json}");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    let cfg = base_config(&cli.common)?;
    match &cli.command {
        Command::Gen(a) => gen(&cfg, a),
        Command::Run(a) => run(&cfg, a),
        Command::Sweep(a) => sweep(cfg, a),
        Command::Figure1(a) => figure1(cfg, a),
        Command::Bounds(a) => bounds(&cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
