use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use lpvslc::design::{certify, design_slc, identify_resonance, rigid_body_decouple, ControllerSet, DesignMode, DesignSpec, GridSpec};
use lpvslc::freqresp::frf;
use lpvslc::io::{read_json, write_json};
use lpvslc::plant::{ModalPlantModel, SchedulingPoint};
use lpvslc::scheduling::{fit_surface, FrozenDesignSet, Normalization, Units};
use lpvslc::sim::{compare, simulate, Scenario, SimConfig, SimMeta, SimResult};
use lpvslc::trajectory::TrajectorySpec;
use lpvslc::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "lpvslc", version, about = "Position-scheduled sequential loop closing for flexible motion stages")]
struct Cli {
    /// Project file naming the plant, design, trajectory and simulation configs.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the project file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for per-point analyses.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Frequency grid `f_min:f_max:points` in Hz.
    #[arg(long, global = true)]
    grid: Option<String>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Lti,
    Lpv,
}

impl From<Mode> for DesignMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Lti => DesignMode::Lti,
            Mode::Lpv => DesignMode::Lpv,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Rigid-body decoupled FRFs at frozen positions.
    Frf {
        /// `x,y;x,y;...` in meters.
        #[arg(long)]
        positions: String,
    },
    /// Sequential loop-closing design and certification.
    Design {
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Least-squares surface fit of frozen coefficient values.
    Fit {
        /// JSON `{ "samples": [{ "p": {"x", "y"}, "value", "units" }] }`.
        #[arg(long)]
        input: PathBuf,
        /// Polynomial orders `i,j`.
        #[arg(long, default_value = "3,3")]
        order: String,
    },
    /// Frozen-position certification of a controller set on the verification grid.
    Certify {
        #[arg(long)]
        controllers: PathBuf,
    },
    /// Fourth-order in-plane reference.
    Trajectory,
    /// Closed-loop simulation of one or more controller sets on the same move.
    Simulate {
        /// `name=path`; defaults to the design outputs in the output directory.
        #[arg(long = "controllers", value_name = "NAME=PATH")]
        controllers: Vec<String>,
    },
    /// Mean MA / MSD over the constant-velocity interval, first run as baseline.
    Metrics {
        /// Run names written by `simulate`.
        #[arg(long = "run", value_name = "NAME")]
        runs: Vec<String>,
        /// Axis name.
        #[arg(long, default_value = "z")]
        axis: String,
    },
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ProjectConfig {
    plant: Option<PathBuf>,
    design: Option<PathBuf>,
    trajectory: Option<PathBuf>,
    sim: Option<PathBuf>,
    out_dir: Option<PathBuf>,
}

struct Project {
    model: ModalPlantModel,
    design: DesignSpec,
    trajectory: TrajectorySpec,
    sim: SimConfig,
    out: PathBuf,
}

impl Project {
    fn load(cli: &Cli) -> Result<Self> {
        let (cfg, base) = match &cli.config {
            Some(p) => (read_json::<ProjectConfig>(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
            None => (ProjectConfig::default(), PathBuf::new()),
        };
        let at = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let model = match &cfg.plant {
            Some(p) => {
                let path = at(p);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                ModalPlantModel::from_json(&text).map_err(|e| match e {
                    Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
                    other => other,
                })?
            }
            None => ModalPlantModel::benchmark(),
        };
        let mut design: DesignSpec = cfg.design.as_deref().map(|p| read_json(&at(p))).transpose()?.unwrap_or_default();
        if cfg.design.is_none() && design.target_bandwidth_hz.len() != model.n_axes() {
            design = DesignSpec::for_axes(vec![design.target_bandwidth_hz[0]; model.n_axes()]);
        }
        if let Some(g) = &cli.grid {
            design.frequency_grid = parse_grid(g)?;
        }
        design.validate(&model)?;
        let trajectory = cfg.trajectory.as_deref().map(|p| read_json(&at(p))).transpose()?.unwrap_or_default();
        let sim: SimConfig = cfg.sim.as_deref().map(|p| read_json(&at(p))).transpose()?.unwrap_or_default();
        let out = cli.out.clone().or(cfg.out_dir.map(|p| at(&p))).unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&out)
            .map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", out.display())))?;
        Ok(Self { model, design, trajectory, sim, out })
    }
}

fn parse_grid(s: &str) -> Result<GridSpec> {
    let bad = || Error::Config(format!("grid {s:?} is not f_min:f_max:points"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let grid = GridSpec {
        f_min_hz: parts[0].trim().parse().map_err(|_| bad())?,
        f_max_hz: parts[1].trim().parse().map_err(|_| bad())?,
        points: parts[2].trim().parse().map_err(|_| bad())?,
    };
    grid.build()?;
    Ok(grid)
}

fn parse_positions(s: &str) -> Result<Vec<SchedulingPoint>> {
    let pts = s
        .split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let xy: Vec<f64> = t.split(',').map(|v| v.trim().parse::<f64>()).collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("position {t:?} is not x,y")))?;
            match xy[..] {
                [x, y] => Ok(SchedulingPoint::new(x, y)),
                _ => Err(Error::Config(format!("position {t:?} is not x,y"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if pts.is_empty() {
        return Err(Error::Config("empty position list".into()));
    }
    Ok(pts)
}

fn load_controllers(path: &Path, model: &ModalPlantModel) -> Result<ControllerSet> {
    let c: ControllerSet = read_json(path)?;
    c.validate(model)?;
    Ok(c)
}

#[derive(Serialize)]
struct DesignSummary {
    mode: &'static str,
    bandwidth_hz: f64,
    axes: Vec<String>,
    axis_bandwidth_hz: Vec<f64>,
    certified: bool,
    worst_peak_db: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    bandwidth_ratio_vs_lti: Option<f64>,
}

fn cmd_frf(pr: &Project, positions: &str) -> Result<()> {
    let pts = parse_positions(positions)?;
    let grid = pr.design.frequency_grid.build()?;
    let (t_u, t_y) = rigid_body_decouple(&pr.model, pr.model.workspace.center())?;
    let dir = pr.out.join("frf");
    std::fs::create_dir_all(&dir)?;
    let mut combined = csv::Writer::from_path(dir.join("frf_all.csv"))?;
    let mut peaks = csv::Writer::from_path(dir.join("frf_peaks.csv"))?;
    peaks.write_record(["q_x", "q_y", "axis", "peak_hz", "residue"])?;
    let axes: Vec<&str> = pr.model.rigid_modes.iter().map(|r| r.axis.name()).collect();
    for (k, p) in pts.iter().enumerate() {
        pr.model.workspace.check(*p)?;
        let ss = pr.model.frozen_realization(*p)?;
        let h = frf(&ss, &grid)?.transform(&t_y, &t_u);
        h.write_csv(std::fs::File::create(dir.join(format!("frf_{k}.csv")))?)?;
        let mut buf = Vec::new();
        h.write_csv(&mut buf)?;
        let text = String::from_utf8(buf).expect("csv output is utf-8");
        for (line, row) in text.lines().enumerate() {
            if line == 0 && k > 0 {
                continue;
            }
            let lead = if line == 0 { vec!["q_x".to_string(), "q_y".into()] } else { vec![fmt(p.x), fmt(p.y)] };
            combined.write_record(lead.into_iter().chain(row.split(',').map(str::to_string)))?;
        }
        for (i, axis) in axes.iter().enumerate() {
            let id = identify_resonance(&h.entry(i, i), pr.design.resonance_band_hz, 0.0);
            let (f, c) = id.map_or((String::new(), String::new()), |r| (fmt(r.f_hz), fmt(r.residue)));
            peaks.write_record([fmt(p.x), fmt(p.y), axis.to_string(), f, c])?;
        }
    }
    combined.flush()?;
    peaks.flush()?;
    println!("wrote {} FRFs to {}", pts.len(), dir.display());
    Ok(())
}

fn fmt(v: f64) -> String {
    lpvslc::io::fmt_f64(v)
}

fn cmd_design(pr: &Project, mode: DesignMode) -> Result<bool> {
    let outcome = design_slc(&pr.model, &pr.design, mode)?;
    let name = mode.name();
    write_json(&pr.out.join(format!("controllers_{name}.json")), &outcome.controllers)?;
    write_json(&pr.out.join(format!("certification_{name}.json")), &outcome.certification)?;
    write_json(&pr.out.join(format!("loops_{name}.json")), &outcome.loops)?;
    let bw = outcome.controllers.bandwidth();
    let ratio = match mode {
        DesignMode::Lpv => {
            let lti = pr.out.join("controllers_lti.json");
            lti.exists().then(|| load_controllers(&lti, &pr.model)).transpose()?.map(|c| bw / c.bandwidth())
        }
        DesignMode::Lti => None,
    };
    let summary = DesignSummary {
        mode: name,
        bandwidth_hz: bw,
        axes: outcome.controllers.axes.clone(),
        axis_bandwidth_hz: outcome.controllers.bandwidth_hz.clone(),
        certified: outcome.certification.passed,
        worst_peak_db: outcome.certification.worst_peak_db,
        bandwidth_ratio_vs_lti: ratio,
    };
    write_json(&pr.out.join(format!("design_{name}.json")), &summary)?;
    println!("{name}: bandwidth {bw:.2} Hz, worst sensitivity peak {:.2} dB, certified {}", summary.worst_peak_db, summary.certified);
    if let Some(r) = ratio {
        log::info!("bandwidth ratio lpv / lti = {r:.3}");
        println!("bandwidth ratio lpv / lti = {r:.3}");
    }
    for f in outcome.certification.failures() {
        eprintln!("certification failure {f}");
    }
    Ok(outcome.certification.passed)
}

fn cmd_fit(pr: &Project, input: &Path, order: &str) -> Result<()> {
    let set: FrozenDesignSet = read_json(input)?;
    let set = FrozenDesignSet::new(set.samples)?;
    let ij: Vec<usize> = order
        .split(',')
        .map(|v| v.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("order {order:?} is not i,j")))?;
    let [i, j] = ij[..] else {
        return Err(Error::Config(format!("order {order:?} is not i,j")));
    };
    let norm = Normalization::from_workspace(&pr.model.workspace);
    let rep = fit_surface(&set, i, j, norm)?;
    if set.samples[0].units == Units::Hz && rep.surface.theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::Fit("non-finite coefficients".into()));
    }
    write_json(&pr.out.join("fit.json"), &rep)?;
    println!("fit order {i}x{j}: rank {}, max |residual| {:.3e}", rep.rank, rep.max_abs_residual());
    Ok(())
}

fn cmd_certify(pr: &Project, path: &Path) -> Result<bool> {
    let c = load_controllers(path, &pr.model)?;
    let grid = pr.design.frequency_grid.build()?;
    let rep = certify(&pr.model, &c, &pr.design.verification_points(&pr.model), pr.design.sensitivity_bound_db, &grid)?;
    write_json(&pr.out.join("certification.json"), &rep)?;
    print!("{}", rep.table());
    println!("certified {}", rep.passed);
    Ok(rep.passed)
}

fn cmd_trajectory(pr: &Project) -> Result<()> {
    let planar = pr.trajectory.plan()?;
    let series = planar.sample_grid(pr.trajectory.sample_rate_hz, planar.duration());
    lpvslc::trajectory::write_csv(&pr.out.join("trajectory.csv"), &["x", "y"], &series)?;
    write_json(&pr.out.join("trajectory.json"), &planar)?;
    println!("move duration {:.6} s", planar.duration());
    Ok(())
}

fn cmd_simulate(pr: &Project, specs: &[String]) -> Result<()> {
    let runs: Vec<(String, PathBuf)> = if specs.is_empty() {
        ["lti", "lpv"]
            .iter()
            .map(|n| (n.to_string(), pr.out.join(format!("controllers_{n}.json"))))
            .filter(|(_, p)| p.exists())
            .collect()
    } else {
        specs
            .iter()
            .map(|s| {
                s.split_once('=')
                    .map(|(n, p)| (n.to_string(), PathBuf::from(p)))
                    .ok_or_else(|| Error::Config(format!("controllers {s:?} is not NAME=PATH")))
            })
            .collect::<Result<_>>()?
    };
    if runs.is_empty() {
        return Err(Error::Config("no controller files to simulate".into()));
    }
    let scenario = Scenario::planar_move(&pr.trajectory, pr.model.n_axes())?;
    for (name, path) in &runs {
        let c = load_controllers(path, &pr.model)?;
        let res = simulate(&pr.model, &c, &scenario, &pr.sim)?;
        res.write_csv(&pr.out.join(format!("sim_{name}.csv")))?;
        write_json(&pr.out.join(format!("sim_{name}.json")), &res.meta())?;
        println!("{name}: {} samples", res.t.len());
    }
    Ok(())
}

fn cmd_metrics(pr: &Project, runs: &[String], axis: &str) -> Result<()> {
    let names: Vec<String> = if runs.is_empty() {
        ["lti", "lpv"].iter().map(|s| s.to_string()).filter(|n| pr.out.join(format!("sim_{n}.csv")).exists()).collect()
    } else {
        runs.to_vec()
    };
    if names.is_empty() {
        return Err(Error::Config("no simulation results found".into()));
    }
    let results = names
        .iter()
        .map(|n| {
            let meta: SimMeta = read_json(&pr.out.join(format!("sim_{n}.json")))?;
            SimResult::read_csv(&pr.out.join(format!("sim_{n}.csv")), &meta)
        })
        .collect::<Result<Vec<_>>>()?;
    let idx = results[0]
        .axes
        .iter()
        .position(|a| a == axis)
        .ok_or_else(|| Error::Config(format!("unknown axis {axis:?}")))?;
    let pairs: Vec<(&str, &SimResult)> = names.iter().map(String::as_str).zip(results.iter()).collect();
    let summary = compare(&pairs, idx)?;
    write_json(&pr.out.join("metrics.json"), &summary)?;
    print!("{}", summary.table());
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))?;
    }
    let pr = Project::load(cli)?;
    match &cli.cmd {
        Command::Frf { positions } => cmd_frf(&pr, positions).map(|_| true),
        Command::Design { mode } => cmd_design(&pr, (*mode).into()),
        Command::Fit { input, order } => cmd_fit(&pr, input, order).map(|_| true),
        Command::Certify { controllers } => cmd_certify(&pr, controllers),
        Command::Trajectory => cmd_trajectory(&pr).map(|_| true),
        Command::Simulate { controllers } => cmd_simulate(&pr, controllers).map(|_| true),
        Command::Metrics { runs, axis } => cmd_metrics(&pr, runs, axis).map(|_| true),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LPVSLC_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Infeasible => 1,
                ErrorKind::Config => 2,
                ErrorKind::Numerical => 3,
            })
        }
    }
}
