use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use mvicad::{
    delay_recovery_report, fit, generate_dataset, match_permutation, reconstruct_sources,
    DelayMode, FitConfig, FitResult, Init, LineSearchConfig, NllPhase, PermutationTest, SimConfig,
    SourceShape,
};
use mvicad_cli::csv as csvio;
use mvicad_cli::dataset::{self, Metadata};
use mvicad_cli::{exit_code, experiment, plot, ExperimentGrid, HarnessError};

#[derive(Parser)]
#[command(
    name = "mvicad",
    version,
    about = "Multiview ICA with per-view source delays: simulate, fit, benchmark, plot"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a synthetic dataset with known ground truth and store it.
    Simulate(SimulateArgs),
    /// Fit unmixing matrices and delays to a stored dataset.
    Fit(FitArgs),
    /// Sweep delay levels and seeds, scoring against the truth.
    BenchAmari(BenchAmariArgs),
    /// One large run pairing estimated delays with true ones.
    BenchDelays(BenchDelaysArgs),
    /// Render a stored CSV as an SVG figure.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ModeArg {
    PerSource,
    PerView,
}

impl From<ModeArg> for DelayMode {
    fn from(m: ModeArg) -> DelayMode {
        match m {
            ModeArg::PerSource => DelayMode::PerSource,
            ModeArg::PerView => DelayMode::PerView,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum InitArg {
    Whitening,
    Random,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long, default_value_t = 3)]
    p: usize,
    #[arg(long, default_value_t = 700)]
    n: usize,
    /// Largest true delay magnitude to draw.
    #[arg(long, default_value_t = 0)]
    tau_max_true: i64,
    /// Noise scale; ignored when --snr-target is given.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Scale noise to hit this signal-to-noise power ratio.
    #[arg(long)]
    snr_target: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    bumps_min: Option<usize>,
    #[arg(long)]
    bumps_max: Option<usize>,
    #[arg(long)]
    width_min: Option<usize>,
    #[arg(long)]
    width_max: Option<usize>,
    #[arg(long)]
    margin: Option<usize>,
    /// Dataset directory to create.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct FitArgs {
    /// Dataset directory holding manifest.json.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the fit.
    #[arg(long)]
    out: PathBuf,
    /// Delay search half-window; 0 disables delay estimation in effect.
    #[arg(long, default_value_t = 0)]
    tau_max: i64,
    /// Skip the delay phase entirely.
    #[arg(long)]
    no_delay_updates: bool,
    #[arg(long, value_enum, default_value_t = ModeArg::PerSource)]
    mode: ModeArg,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, alias = "sweeps", default_value_t = 1000)]
    max_sweeps: usize,
    #[arg(long, default_value_t = 1e-6)]
    gtol: f64,
    #[arg(long, default_value_t = 2)]
    delay_warmup_sweeps: usize,
    #[arg(long, value_enum, default_value_t = InitArg::Whitening)]
    init: InitArg,
    /// Seed for --init random.
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
}

#[derive(Args, Serialize)]
struct BenchAmariArgs {
    /// Comma-separated true delay levels to sweep.
    #[arg(long, value_delimiter = ',', default_value = "0,10,20,30,40")]
    levels: Vec<i64>,
    /// Seeds per level.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    base_seed: u64,
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long, default_value_t = 3)]
    p: usize,
    #[arg(long, default_value_t = 700)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long)]
    snr_target: Option<f64>,
    #[arg(long, value_enum, default_value_t = ModeArg::PerSource)]
    mode: ModeArg,
    #[arg(long, alias = "sweeps", default_value_t = 1000)]
    max_sweeps: usize,
    #[arg(long, default_value_t = 1e-6)]
    gtol: f64,
    #[arg(long, default_value_t = 2)]
    delay_warmup_sweeps: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct BenchDelaysArgs {
    #[arg(long, default_value_t = 40)]
    m: usize,
    #[arg(long, default_value_t = 5)]
    p: usize,
    #[arg(long, default_value_t = 700)]
    n: usize,
    /// Largest true delay magnitude to draw.
    #[arg(long, default_value_t = 40)]
    tau_max_true: i64,
    /// Fit window; defaults to the true level.
    #[arg(long)]
    tau_max: Option<i64>,
    #[arg(long, default_value_t = 5.0)]
    snr_target: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::PerSource)]
    mode: ModeArg,
    #[arg(long, alias = "sweeps", default_value_t = 1000)]
    max_sweeps: usize,
    #[arg(long, default_value_t = 1e-6)]
    gtol: f64,
    #[arg(long, default_value_t = 2)]
    delay_warmup_sweeps: usize,
    /// Permutation-test resamples for the p-value.
    #[arg(long, default_value_t = 10000)]
    resamples: usize,
    #[arg(long, default_value_t = 0)]
    test_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum PlotKind {
    /// Mean Amari distance vs delay level, from bench-amari rows.
    Line,
    /// Estimated vs true delays, from bench-delays scatter rows.
    Scatter,
}

#[derive(Args, Serialize)]
struct PlotArgs {
    #[arg(long, value_enum)]
    kind: PlotKind,
    /// CSV produced by bench-amari (line) or bench-delays (scatter).
    #[arg(long)]
    input: PathBuf,
    /// SVG file to write.
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e);
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            eprintln!("  caused by: {}", s);
            source = s.source();
        }
        std::process::exit(exit_code(&e));
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.cmd {
        Cmd::Simulate(args) => simulate(args),
        Cmd::Fit(args) => fit_cmd(args),
        Cmd::BenchAmari(args) => bench_amari_cmd(args),
        Cmd::BenchDelays(args) => bench_delays_cmd(args),
        Cmd::Plot(args) => plot_cmd(args),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::Io {
        path: path.into(),
        source: e,
    })
}

fn read_text(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
        path: path.into(),
        source: e,
    })
}

fn make_dir(path: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(path).map_err(|e| HarnessError::Io {
        path: path.into(),
        source: e,
    })
}

fn sim_json(cfg: &SimConfig) -> serde_json::Value {
    json!({
        "m": cfg.m,
        "p": cfg.p,
        "n": cfg.n,
        "tau_max_true": cfg.tau_max_true,
        "sigma": cfg.sigma,
        "snr_target": cfg.snr_target,
        "seed": cfg.seed,
        "shape": {
            "bumps_min": cfg.shape.bumps_min,
            "bumps_max": cfg.shape.bumps_max,
            "width_min": cfg.shape.width_min,
            "width_max": cfg.shape.width_max,
            "margin": cfg.shape.margin,
        },
    })
}

fn fit_json(cfg: &FitConfig) -> serde_json::Value {
    let init = match &cfg.init {
        Init::Whitening => json!({ "kind": "whitening" }),
        Init::Random { seed } => json!({ "kind": "random", "seed": seed }),
        Init::Provided(_) => json!({ "kind": "provided" }),
    };
    json!({
        "tau_max": cfg.tau_max,
        "delay_updates": cfg.delay_updates,
        "delay_mode": mode_name(cfg.delay_mode),
        "sigma": cfg.sigma,
        "max_sweeps": cfg.max_sweeps,
        "gtol": cfg.gtol,
        "delay_warmup_sweeps": cfg.delay_warmup_sweeps,
        "init": init,
        "line_search": {
            "rho_init": cfg.line_search.rho_init,
            "shrink": cfg.line_search.shrink,
            "max_backtracks": cfg.line_search.max_backtracks,
        },
    })
}

fn mode_name(mode: DelayMode) -> &'static str {
    match mode {
        DelayMode::PerSource => "per-source",
        DelayMode::PerView => "per-view",
    }
}

/// Every run leaves a record of its resolved parameters next to its outputs.
fn write_config_echo(path: &Path, command: &str, resolved: serde_json::Value) -> Result<(), HarnessError> {
    let body = json!({ "command": command, "resolved": resolved });
    write_text(path, &format!("{:#}\n", body))
}

fn build_sim(args: &SimulateArgs) -> SimConfig {
    let mut cfg = SimConfig::new(args.m, args.p, args.n, args.tau_max_true, args.seed);
    cfg.sigma = args.sigma;
    cfg.snr_target = args.snr_target;
    let mut shape = SourceShape::default_for(args.n, args.tau_max_true.max(0) as usize);
    if let Some(v) = args.margin {
        shape = SourceShape::default_for(args.n, v);
    }
    if let Some(v) = args.bumps_min {
        shape.bumps_min = v;
    }
    if let Some(v) = args.bumps_max {
        shape.bumps_max = v;
    }
    if let Some(v) = args.width_min {
        shape.width_min = v;
    }
    if let Some(v) = args.width_max {
        shape.width_max = v;
    }
    cfg.shape = shape;
    cfg
}

fn simulate(args: SimulateArgs) -> Result<(), HarnessError> {
    let cfg = build_sim(&args);
    let (views, truth) = generate_dataset(&cfg)?;
    let metadata = Metadata {
        seed: Some(cfg.seed),
        generator: Some(sim_json(&cfg)),
    };
    let manifest = dataset::write_dataset(&args.out, &views, Some(&truth), metadata)?;
    write_config_echo(&args.out.join("config.json"), "simulate", sim_json(&cfg))?;
    println!(
        "wrote dataset: m={} p={} n={} tau_max_true={} -> {}",
        manifest.m,
        manifest.p,
        manifest.n,
        cfg.tau_max_true,
        args.out.display()
    );
    Ok(())
}

fn phase_name(phase: NllPhase) -> &'static str {
    match phase {
        NllPhase::Init => "init",
        NllPhase::Unmixing => "unmixing",
        NllPhase::Delay => "delay",
    }
}

fn write_fit_outputs(
    out: &Path,
    res: &FitResult,
    views: &mvicad::ViewSet,
) -> Result<(), HarnessError> {
    let m = views.n_views();
    for i in 0..m {
        dataset::write_f64_file(
            &out.join(format!("unmixing_{:03}.f64", i)),
            res.params.unmixing[i].array().iter().copied(),
        )?;
    }

    let mut delays = String::from("view,source,delay\n");
    for (i, d) in res.params.delays.iter().enumerate() {
        for (k, &tau) in d.delays().iter().enumerate() {
            delays.push_str(&format!("{},{},{}\n", i, k, tau));
        }
    }
    write_text(&out.join("delays.csv"), &delays)?;

    let shared = reconstruct_sources(&res.params, views)?;
    dataset::write_f64_file(
        &out.join("shared_sources.f64"),
        shared.array().iter().copied(),
    )?;

    let mut history = String::from("sweep,phase,nll\n");
    for rec in &res.nll_history {
        history.push_str(&format!(
            "{},{},{}\n",
            rec.sweep,
            phase_name(rec.phase),
            rec.nll
        ));
    }
    write_text(&out.join("nll_history.csv"), &history)?;

    let summary = json!({
        "converged": res.converged,
        "sweeps": res.sweeps,
        "final_gradient_norm": res.final_gradient_norm,
        "final_nll": res.final_nll(),
        "delay_mode_rows": m,
    });
    write_text(&out.join("result.json"), &format!("{:#}\n", summary))
}

fn fit_cmd(args: FitArgs) -> Result<(), HarnessError> {
    let (views, truth, manifest) = dataset::read_dataset(&args.data)?;
    let cfg = FitConfig {
        tau_max: args.tau_max,
        delay_updates: !args.no_delay_updates,
        delay_mode: args.mode.into(),
        sigma: args.sigma,
        max_sweeps: args.max_sweeps,
        gtol: args.gtol,
        delay_warmup_sweeps: args.delay_warmup_sweeps,
        init: match args.init {
            InitArg::Whitening => Init::Whitening,
            InitArg::Random => Init::Random {
                seed: args.init_seed,
            },
        },
        line_search: LineSearchConfig::default(),
    };
    make_dir(&args.out)?;
    write_config_echo(
        &args.out.join("config.json"),
        "fit",
        json!({ "data": args.data, "config": fit_json(&cfg) }),
    )?;

    let res = fit(&views, &cfg)?;
    write_fit_outputs(&args.out, &res, &views)?;

    if let Some(gt) = &truth {
        let mut amari = Vec::with_capacity(views.n_views());
        for i in 0..views.n_views() {
            amari.push(mvicad::amari_distance(
                res.params.unmixing[i].array(),
                gt.mixing[i].array(),
            )?);
        }
        let amari_mean = amari.iter().sum::<f64>() / amari.len() as f64;
        let gt_tau = manifest
            .ground_truth
            .as_ref()
            .map(|g| g.tau_max)
            .unwrap_or(0);
        let window = (cfg.tau_max + gt_tau).min((views.n_samples() as i64 - 1) / 2);
        let shared = reconstruct_sources(&res.params, &views)?;
        let matching = match_permutation(shared.array(), gt.sources.array(), window)?;
        let test = PermutationTest {
            resamples: 10000,
            seed: 0,
        };
        let report = delay_recovery_report(&res.params.delays, &gt.delays, &matching.perm, &test)?;
        let regression = report.regression.as_ref().map(|r| {
            json!({
                "slope": r.slope,
                "intercept": r.intercept,
                "r_squared": r.r_squared,
                "p_value": r.p_value,
            })
        });
        let eval = json!({
            "amari_per_view": amari,
            "amari_mean": amari_mean,
            "permutation": matching.perm,
            "delay_regression": regression,
        });
        write_text(&args.out.join("eval.json"), &format!("{:#}\n", eval))?;
    }

    println!(
        "fit: converged={} sweeps={} final_nll={:.6} -> {}",
        res.converged,
        res.sweeps,
        res.final_nll(),
        args.out.display()
    );
    Ok(())
}

fn bench_amari_cmd(args: BenchAmariArgs) -> Result<(), HarnessError> {
    let max_level = args.levels.iter().copied().max().unwrap_or(0).max(0);
    let mut sim = SimConfig::new(args.m, args.p, args.n, max_level, args.base_seed);
    sim.sigma = args.sigma;
    sim.snr_target = args.snr_target;
    let fit_cfg = FitConfig {
        delay_mode: args.mode.into(),
        max_sweeps: args.max_sweeps,
        gtol: args.gtol,
        delay_warmup_sweeps: args.delay_warmup_sweeps,
        ..FitConfig::default()
    };
    let grid = ExperimentGrid {
        levels: args.levels.clone(),
        n_seeds: args.seeds,
        base_seed: args.base_seed,
        sim: sim.clone(),
        fit: fit_cfg.clone(),
        out_dir: Some(args.out.clone()),
    };
    let pool = experiment::thread_pool(experiment::threads_from_env()?)?;

    make_dir(&args.out)?;
    write_config_echo(
        &args.out.join("config.json"),
        "bench-amari",
        json!({
            "levels": grid.levels,
            "seeds": grid.n_seeds,
            "base_seed": grid.base_seed,
            "sim": sim_json(&sim),
            "fit": fit_json(&fit_cfg),
        }),
    )?;

    let (rows, summary) = experiment::bench_amari(&grid, &pool)?;
    write_text(&args.out.join("amari_rows.csv"), &csvio::amari_rows_to_csv(&rows))?;
    write_text(
        &args.out.join("amari_summary.csv"),
        &csvio::amari_summary_to_csv(&summary),
    )?;

    for s in &summary {
        println!(
            "level {:>4}  {:<7} mean Amari {:.4} over {} seeds",
            s.delay_level, s.algorithm, s.amari_mean, s.seeds
        );
    }
    println!("-> {}", args.out.display());
    Ok(())
}

fn bench_delays_cmd(args: BenchDelaysArgs) -> Result<(), HarnessError> {
    let mut sim = SimConfig::new(args.m, args.p, args.n, args.tau_max_true, args.seed);
    sim.snr_target = Some(args.snr_target);
    let fit_cfg = FitConfig {
        tau_max: args.tau_max.unwrap_or(args.tau_max_true),
        delay_mode: args.mode.into(),
        max_sweeps: args.max_sweeps,
        gtol: args.gtol,
        delay_warmup_sweeps: args.delay_warmup_sweeps,
        ..FitConfig::default()
    };
    let test = PermutationTest {
        resamples: args.resamples,
        seed: args.test_seed,
    };

    make_dir(&args.out)?;
    write_config_echo(
        &args.out.join("config.json"),
        "bench-delays",
        json!({
            "sim": sim_json(&sim),
            "fit": fit_json(&fit_cfg),
            "test": { "resamples": test.resamples, "seed": test.seed },
        }),
    )?;

    let bench = experiment::bench_delays(&sim, &fit_cfg, &test)?;
    write_text(
        &args.out.join("delay_scatter.csv"),
        &csvio::scatter_to_csv(&bench.rows),
    )?;
    write_text(
        &args.out.join("delay_summary.csv"),
        &csvio::delay_summary_to_csv(&bench.report),
    )?;
    let summary = json!({
        "converged": bench.converged,
        "sweeps": bench.sweeps,
        "wall_time_s": bench.wall_time_s,
        "pairs": bench.rows.len(),
    });
    write_text(&args.out.join("result.json"), &format!("{:#}\n", summary))?;

    match &bench.report.regression {
        Some(reg) => println!(
            "delay recovery over {} pairs: slope {:.4}, R^2 {:.4}, p {:.2e}",
            bench.rows.len(),
            reg.slope,
            reg.r_squared,
            reg.p_value
        ),
        None => println!(
            "delay recovery over {} pairs: regression undefined (degenerate truth)",
            bench.rows.len()
        ),
    }
    println!("-> {}", args.out.display());
    Ok(())
}

fn plot_cmd(args: PlotArgs) -> Result<(), HarnessError> {
    let text = read_text(&args.input)?;
    let svg = match args.kind {
        PlotKind::Line => plot::line_plot_svg(&csvio::amari_rows_from_csv(&text)?)?,
        PlotKind::Scatter => plot::scatter_plot_svg(&csvio::scatter_from_csv(&text)?)?,
    };
    write_text(&args.out, &svg)?;
    write_config_echo(
        &args.out.with_extension("config.json"),
        "plot",
        json!({
            "kind": args.kind,
            "input": args.input,
            "out": args.out,
        }),
    )?;
    println!("wrote {}", args.out.display());
    Ok(())
}
