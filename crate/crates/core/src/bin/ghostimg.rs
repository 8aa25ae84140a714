use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ghostimg::engine::{
    fit_kernel, ingest_scan_csv, monte_carlo_g2, simulate_scan, KlyshkoPath, MonteCarloSettings,
    ScanSettings,
};
use ghostimg::exec::{with_workers, workers_from_env};
use ghostimg::fitting::{
    fit_alpha, fit_scan_auto, slit_correction, slit_factor, write_campaign_csv, FitOptions,
};
use ghostimg::harness::{
    read_visibility_csv, reproduce_figure, run_campaign, ExperimentConfig, Figure, KernelChoice,
};
use ghostimg::model::laws::{
    analytic_g2, effective_distance, fringe_wavenumber, kernel_sigma, visibility, wavenumber,
    Validity,
};
use ghostimg::model::{Placement, TurbulenceSpec};
use ghostimg::units::Length;
use ghostimg::{Error, Execution, Result};

#[derive(Parser)]
#[command(
    name = "ghostimg",
    version,
    about = "Ghost imaging through thin turbulence"
)]
struct Cli {
    /// Worker threads (overrides GHOSTIMG_WORKERS).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the visibility law at each sweep point.
    Analytic(ConfigArgs),
    /// Coherence kernel G² at the first sweep point, as CSV.
    Kernel {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Simulate one scan at the first sweep point.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Seed of the Poisson counts (default: first campaign scan seed).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Fit a scan CSV, or a campaign CSV with `--campaign`.
    Fit(FitArgs),
    /// Run every sweep point and write a report.
    Campaign(ConfigArgs),
    /// Write figure data.
    Reproduce {
        #[arg(value_enum)]
        figure: FigureName,
        #[arg(long, default_value = "out/figures")]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FigureName {
    Fig3,
    Fig4,
    Fig5,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelFlag {
    Analytic,
    MonteCarlo,
}

/// Config file plus per-key overrides. A flag always wins over the file.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Config path, or a bundled name (`paper_unshifted`, `paper_shifted`).
    #[arg(long, short, default_value = "paper_unshifted")]
    config: PathBuf,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    wavelength_nm: Option<f64>,
    #[arg(long)]
    focal_length_mm: Option<f64>,
    #[arg(long)]
    shift_mm: Option<f64>,
    #[arg(long)]
    system_visibility: Option<f64>,
    #[arg(long)]
    alpha_per_mm2: Option<f64>,
    #[arg(long)]
    exponent: Option<f64>,
    /// Crystal-side sweep points; replaces the config sweep.
    #[arg(long, num_args = 1..)]
    l1_mm: Vec<f64>,
    /// Object-side sweep points; replaces the config sweep.
    #[arg(long, num_args = 1..)]
    distance_from_object_mm: Vec<f64>,
    #[arg(long)]
    envelope_width_mm: Option<f64>,
    #[arg(long)]
    cycles_per_mm: Option<f64>,
    #[arg(long)]
    intrinsic_visibility: Option<f64>,
    #[arg(long)]
    slit_width_mm: Option<f64>,
    #[arg(long)]
    step_mm: Option<f64>,
    #[arg(long)]
    positions: Option<usize>,
    #[arg(long)]
    center_mm: Option<f64>,
    #[arg(long)]
    dwell_s: Option<f64>,
    #[arg(long)]
    peak_rate_cps: Option<f64>,
    #[arg(long)]
    background_cps: Option<f64>,
    #[arg(long, value_enum)]
    kernel: Option<KernelFlag>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long)]
    master_seed: Option<u64>,
    #[arg(long)]
    noiseless: bool,
    #[arg(long)]
    validity_threshold: Option<f64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Scan CSV (`position_mm,counts,duration_s`) or, with `--campaign`,
    /// visibility CSV (`d_mm,V,sigma_V[,configuration]`).
    input: PathBuf,
    #[arg(long)]
    campaign: bool,
    /// Visibility ceiling per configuration, `name=value`.
    #[arg(long = "g", value_parser = parse_ceiling)]
    ceilings: Vec<(String, f64)>,
    /// Hold the background at this rate (counts/s).
    #[arg(long)]
    background_cps: Option<f64>,
    /// Slit width used to correct the fitted visibility.
    #[arg(long, default_value_t = 0.04)]
    slit_width_mm: f64,
    #[arg(long, default_value_t = 650.0)]
    wavelength_nm: f64,
    #[arg(long, default_value_t = 3.6)]
    cycles_per_mm: f64,
    /// Write the campaign table with model column here.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn parse_ceiling(s: &str) -> std::result::Result<(String, f64), String> {
    let (name, v) = s.split_once('=').ok_or("expected name=value")?;
    let v: f64 = v.parse().map_err(|_| format!("`{v}` is not a number"))?;
    Ok((name.to_string(), v))
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::load(&self.config)?;
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { c.$($field).+ = v; })*
            };
        }
        set!(
            name => name,
            wavelength_nm => optics.wavelength_nm,
            focal_length_mm => optics.focal_length_mm,
            shift_mm => optics.shift_mm,
            system_visibility => optics.system_visibility,
            alpha_per_mm2 => turbulence.alpha_per_mm2,
            exponent => turbulence.exponent,
            envelope_width_mm => object.envelope_width_mm,
            cycles_per_mm => object.cycles_per_mm,
            intrinsic_visibility => object.intrinsic_visibility,
            slit_width_mm => detector.slit_width_mm,
            step_mm => detector.step_mm,
            positions => detector.positions,
            center_mm => detector.center_mm,
            dwell_s => detector.dwell_s,
            peak_rate_cps => detector.peak_rate_cps,
            background_cps => detector.background_cps,
            realizations => engine.realizations,
            master_seed => engine.master_seed,
            validity_threshold => engine.validity_threshold,
            output_dir => output_dir,
        );
        if let Some(k) = self.kernel {
            c.engine.kernel = match k {
                KernelFlag::Analytic => KernelChoice::Analytic,
                KernelFlag::MonteCarlo => KernelChoice::MonteCarlo,
            };
        }
        if self.noiseless {
            c.engine.noiseless = true;
        }
        if !self.l1_mm.is_empty() || !self.distance_from_object_mm.is_empty() {
            c.turbulence.sweep = self
                .l1_mm
                .iter()
                .map(|&l1_mm| Placement::CrystalSide { l1_mm })
                .chain(
                    self.distance_from_object_mm
                        .iter()
                        .map(|&distance_from_object_mm| Placement::ObjectSide {
                            distance_from_object_mm,
                        }),
                )
                .collect();
        }
        c.validate().map_err(|e| Error::ConfigInvalid {
            path: self.config.clone(),
            message: e.to_string(),
        })?;
        Ok(c)
    }
}

fn first_spec(cfg: &ExperimentConfig) -> Result<TurbulenceSpec> {
    cfg.sweep_specs()?.into_iter().next().ok_or_else(|| {
        Error::Config("the sweep is empty; pass --l1-mm or --distance-from-object-mm".into())
    })
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(File::create(p)?))
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn analytic(cfg: &ExperimentConfig) -> Result<()> {
    let optics = cfg.optics()?;
    let pattern = cfg.pattern()?;
    let k = optics.wavenumber();
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    w.write_record([
        "placement",
        "d_mm",
        "sigma_mm",
        "V",
        "validity_ratio",
        "validity_warning",
    ])?;
    for spec in cfg.sweep_specs()? {
        let d = effective_distance(&spec, &optics)?;
        let v = visibility(
            optics.system_visibility(),
            spec.alpha_per_mm2,
            d,
            k,
            pattern.fringe_wavenumber,
        )? * pattern.intrinsic_visibility;
        let val = Validity::assess(
            d,
            spec.alpha_per_mm2,
            k,
            pattern.envelope_width_mm,
            cfg.engine.validity_threshold,
        );
        let placement = match spec.placement {
            Placement::CrystalSide { l1_mm } => format!("l1_mm={l1_mm}"),
            Placement::ObjectSide {
                distance_from_object_mm,
            } => format!("distance_from_object_mm={distance_from_object_mm}"),
        };
        w.write_record([
            placement,
            d.to_string(),
            kernel_sigma(spec.alpha_per_mm2, d, k).to_string(),
            v.to_string(),
            val.ratio.to_string(),
            val.warning.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn kernel(cfg: &ExperimentConfig, out: &Option<PathBuf>, exec: Execution) -> Result<()> {
    let optics = cfg.optics()?;
    let spec = first_spec(cfg)?;
    let path = KlyshkoPath::new(&optics, &spec)?;
    let alpha = spec.alpha_per_mm2;
    let d = path.effective_distance_mm();
    let sigma = kernel_sigma(alpha, d, path.wavenumber);
    let mut w = csv::Writer::from_writer(sink(out)?);
    let summary = match cfg.engine.kernel {
        KernelChoice::Analytic => {
            w.write_record(["offset_mm", "G2"])?;
            let (step, n) = if sigma > 0.0 {
                (sigma / 10.0, 60)
            } else {
                (1e-3, 10)
            };
            for i in -n..=n {
                let dx = i as f64 * step;
                w.write_record([
                    dx.to_string(),
                    analytic_g2(dx, alpha, d, path.wavenumber).to_string(),
                ])?;
            }
            json!({ "kernel": "analytic", "d_mm": d, "sigma_mm": sigma })
        }
        KernelChoice::MonteCarlo => {
            let (_, seed) = ghostimg::harness::point_seeds(cfg.engine.master_seed, 0);
            let mc = MonteCarloSettings::new(cfg.engine.realizations, seed);
            let k = monte_carlo_g2(&path, alpha, &mc, exec)?;
            let ghostimg::model::CoherenceKernel::Sampled(s) = &k else {
                return Err(Error::Degenerate(
                    "Monte Carlo returned an analytic kernel".into(),
                ));
            };
            w.write_record(["offset_mm", "G2", "std_error"])?;
            for i in 0..s.offsets_mm.len() {
                w.write_record([
                    s.offsets_mm[i].to_string(),
                    s.values[i].to_string(),
                    s.std_errors[i].to_string(),
                ])?;
            }
            let fitted = if sigma > 0.0 {
                Some(fit_kernel(s)?)
            } else {
                None
            };
            json!({
                "kernel": "monte_carlo",
                "d_mm": d,
                "sigma_mm": sigma,
                "fitted_sigma_mm": fitted.map(|f| f.sigma),
                "fitted_sigma_error_mm": fitted.map(|f| f.sigma_error),
                "realizations": s.realizations,
                "master_seed": seed,
            })
        }
    };
    w.flush()?;
    eprintln!("{summary}");
    Ok(())
}

fn simulate(cfg: &ExperimentConfig, seed: Option<u64>, out: &Option<PathBuf>) -> Result<()> {
    let optics = cfg.optics()?;
    let spec = first_spec(cfg)?;
    let path = KlyshkoPath::new(&optics, &spec)?;
    let (scan_seed, kernel_seed) = ghostimg::harness::point_seeds(cfg.engine.master_seed, 0);
    let settings = ScanSettings {
        kernel: cfg.kernel_source(kernel_seed),
        seed: seed.unwrap_or(scan_seed),
        noiseless: cfg.engine.noiseless,
    };
    let scan = simulate_scan(
        &path,
        spec.alpha_per_mm2,
        &cfg.pattern()?,
        &cfg.detector,
        &settings,
    )?;
    let note = format!(
        "config {} (sha256 {}), {:?}",
        cfg.name,
        cfg.hash(),
        spec.placement
    );
    scan.write_csv(sink(out)?, &[&note])
}

fn fit(args: &FitArgs) -> Result<()> {
    let k = wavenumber(Length::from_nm(args.wavelength_nm))?;
    let k0 = fringe_wavenumber(args.cycles_per_mm);
    if args.campaign {
        let ceilings: BTreeMap<String, f64> = args.ceilings.iter().cloned().collect();
        let points = read_visibility_csv(File::open(&args.input)?, &args.input, "default")?;
        let fit = fit_alpha(&points, &ceilings, k, k0)?;
        if args.out.is_some() {
            write_campaign_csv(sink(&args.out)?, &points, &ceilings, fit.alpha, k, k0)?;
        }
        println!("{}", serde_json::to_string_pretty(&fit)?);
        return Ok(());
    }
    let scan = ingest_scan_csv(&args.input)?;
    let opts = match args.background_cps {
        Some(b) => FitOptions::with_fixed_background(b),
        None => FitOptions::default(),
    };
    let result = fit_scan_auto(&scan, &opts)?;
    let model = result.usable()?;
    let corrected = slit_correction(
        model.visibility,
        model.fringe_wavenumber,
        args.slit_width_mm,
    )?;
    let factor = slit_factor(model.fringe_wavenumber, args.slit_width_mm)?;
    let report = json!({
        "fit": result,
        "slit_width_mm": args.slit_width_mm,
        "slit_factor": factor,
        "visibility_corrected": corrected,
        "visibility_corrected_error": result.errors.map(|e| e.visibility / factor),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

/// Writes `report.json`, `config.json` and `points.csv`; returns the number
/// of failed points.
fn campaign(cfg: &ExperimentConfig, exec: Execution) -> Result<usize> {
    let report = run_campaign(cfg, exec)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), report.to_json()? + "\n")?;
    fs::write(dir.join("config.json"), cfg.to_json() + "\n")?;
    report.write_points_csv(File::create(dir.join("points.csv"))?)?;
    for p in &report.points {
        if let Some(e) = &p.error {
            eprintln!("point {} ({:?}): {e}", p.index, p.placement);
        }
    }
    println!("{}", dir.join("report.json").display());
    Ok(report.failures())
}

fn reproduce(which: FigureName, out_dir: &Path) -> Result<()> {
    let figures = match which {
        FigureName::Fig3 => vec![Figure::Fig3],
        FigureName::Fig4 => vec![Figure::Fig4],
        FigureName::Fig5 => vec![Figure::Fig5],
        FigureName::All => Figure::ALL.to_vec(),
    };
    for f in figures {
        for p in reproduce_figure(f, out_dir)? {
            println!("{}", p.display());
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match &cli.command {
        Command::Analytic(c) => analytic(&c.resolve()?)?,
        Command::Kernel { cfg, out } => kernel(&cfg.resolve()?, out, exec)?,
        Command::Simulate { cfg, seed, out } => simulate(&cfg.resolve()?, *seed, out)?,
        Command::Fit(args) => fit(args)?,
        Command::Campaign(c) => {
            if campaign(&c.resolve()?, exec)? > 0 {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Reproduce { figure, out_dir } => reproduce(*figure, out_dir)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.workers.or_else(workers_from_env) {
        Some(n) => with_workers(n, || run(&cli)),
        None => run(&cli),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
