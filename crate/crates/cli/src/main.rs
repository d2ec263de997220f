use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qlandscape::algebra::{random_element, random_special_unitary, standard_basis};
use qlandscape::dynamics::{end_point, endpoint_jacobian_with, propagate, ControlField};
use qlandscape::harness::{
    preset, random_control, read_json, run_experiment, write_file, ExperimentConfig, SystemDoc, UnitaryDoc,
    PRESETS,
};
use qlandscape::landscape::{classify_critical, gradient_ascent, AscentOptions, Objective};
use qlandscape::singularity::{is_transverse_to_level_set, larc_dimension_with};
use qlandscape::synthesis::{
    fix_parameter_scan, restriction_cascade, scan_csv, singular_critical_search,
    synthesize_singular_control, Fix, SearchOptions, SeedMode, SingularSeed,
};
use qlandscape::{ControlSystem, Error, Tolerances, UnitaryMatrix};
use serde_json::json;

#[derive(Parser)]
#[command(name = "qlandscape", version, about = "Control landscapes of closed quantum systems")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Seed for random targets, initial fields and searches.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write the result here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Relative singular-value threshold for numerical rank
    #[arg(long, global = true)]
    tol_rank: Option<f64>,
    /// Projection residual below which a level set is not met transversally
    #[arg(long, global = true)]
    tol_transverse: Option<f64>,
    /// Relative threshold for new directions in the Lie closure
    #[arg(long, global = true)]
    tol_larc: Option<f64>,
    /// Critical when the gradient norm is at most this times κ·√p
    #[arg(long, global = true)]
    tol_grad: Option<f64>,
    /// Norm below which the translated gradient counts as zero
    #[arg(long, global = true)]
    tol_xi: Option<f64>,
    /// Largest Hessian eigenvalue still counted as negative semidefinite
    #[arg(long, global = true)]
    tol_hessian: Option<f64>,
    /// Singular-control denominator guard
    #[arg(long, global = true)]
    tol_denom: Option<f64>,
    /// Relative gap from the kinematic maximum counted as optimal
    #[arg(long, global = true)]
    tol_value_gap: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate a field and report the end point.
    Propagate {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        field: PathBuf,
        /// Gate whose phase-free fidelity is reported.
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Single gradient-ascent run from a random or given field.
    Optimize {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long = "T", default_value_t = 10.0)]
        total_time: f64,
        #[arg(long, default_value_t = 100)]
        p: usize,
        #[arg(long, default_value_t = 2.0)]
        kappa: f64,
        #[arg(long, default_value_t = 5000)]
        max_iters: usize,
        /// Use Re Tr(G†U) instead of |Tr(G†U)|².
        #[arg(long)]
        real: bool,
    },
    /// Rank, corank and singular values of the end-point derivative.
    Corank {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        field: PathBuf,
        /// Also test transversality against this gate's level set.
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Dimension of the generated Lie algebra.
    Larc {
        #[arg(long)]
        system: PathBuf,
    },
    /// Integrate a candidate singular control.
    SynthSingular {
        #[arg(long)]
        system: PathBuf,
        /// Direction B as {"n", "matrix"}; random when omitted.
        #[arg(long)]
        direction: Option<PathBuf>,
        #[arg(long = "T", default_value_t = 1.0)]
        total_time: f64,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        /// Keep the direction as given instead of projecting out b and [b,a].
        #[arg(long)]
        raw: bool,
    },
    /// Stochastic search for singular critical controls.
    SearchSingular {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long = "T", default_value_t = 10.0)]
        total_time: f64,
        #[arg(long, default_value_t = 100)]
        p: usize,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long, default_value_t = 40)]
        iters: usize,
        #[arg(long, default_value_t = 0.05)]
        sigma: f64,
        #[arg(long)]
        raw: bool,
    },
    /// Corank of the map with one parameter frozen, swept over [−κ, κ].
    ScanFix {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        generator: usize,
        #[arg(long)]
        piece: usize,
        #[arg(long, default_value_t = 101)]
        values: usize,
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Freeze parameters one by one and track corank and transversality.
    Cascade {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        field: PathBuf,
        /// JSON list of {"generator", "piece", "value"}.
        #[arg(long)]
        fixes: PathBuf,
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Run a bundled experiment; writes report.json and summary.csv.
    Reproduce {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
        preset: String,
        /// Override the preset's master seed.
        #[arg(long)]
        master_seed: Option<u64>,
    },
    /// Run an experiment from a JSON config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

impl Global {
    fn tolerances(&self) -> Tolerances {
        let mut t = Tolerances::default();
        if self.tol_rank.is_some() {
            t.rank = self.tol_rank;
        }
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut t.transverse, self.tol_transverse);
        set(&mut t.larc, self.tol_larc);
        set(&mut t.grad, self.tol_grad);
        set(&mut t.xi, self.tol_xi);
        set(&mut t.hessian, self.tol_hessian);
        set(&mut t.denom, self.tol_denom);
        set(&mut t.value_gap, self.tol_value_gap);
        t
    }

    fn emit(&self, text: &str) -> Result<(), Error> {
        match &self.out {
            Some(path) => write_file(path, text),
            None => {
                println!("{}", text.trim_end());
                Ok(())
            }
        }
    }

    fn emit_json(&self, value: &serde_json::Value) -> Result<(), Error> {
        self.emit(&serde_json::to_string_pretty(value)?)
    }
}

fn load_system(path: &Path) -> Result<ControlSystem, Error> {
    read_json::<SystemDoc>(path)?.to_system()
}

fn load_field(path: &Path) -> Result<ControlField, Error> {
    read_json(path)
}

fn load_target(path: Option<&PathBuf>, n: usize, seed: u64) -> Result<UnitaryMatrix, Error> {
    match path {
        Some(p) => {
            let u = read_json::<UnitaryDoc>(p)?.to_unitary()?;
            if u.dim() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: u.dim(),
                });
            }
            Ok(u)
        }
        None => random_special_unitary(n, seed),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let g = &cli.global;
    let tol = g.tolerances();
    match &cli.command {
        Command::Propagate {
            system,
            field,
            target,
        } => {
            let sys = load_system(system)?;
            let field = load_field(field)?;
            let traj = propagate(&sys, &field)?;
            let u = traj.final_op();
            let mut out = json!({
                "U_T": UnitaryDoc::from_unitary(u),
                "unitarity_defect": u.unitarity_defect(),
                "det_defect": u.det_defect(),
            });
            if let Some(t) = target {
                let obj = Objective::gate_phase_free(load_target(Some(t), sys.dim(), g.seed)?)?;
                out["fidelity"] = json!(obj.evaluate(u)? / obj.kinematic_max());
            }
            g.emit_json(&out)
        }
        Command::Optimize {
            system,
            target,
            field,
            total_time,
            p,
            kappa,
            max_iters,
            real,
        } => {
            let sys = load_system(system)?;
            let u = load_target(target.as_ref(), sys.dim(), g.seed)?;
            let obj = if *real {
                Objective::gate_real(u)?
            } else {
                Objective::gate_phase_free(u)?
            };
            let start = match field {
                Some(f) => load_field(f)?,
                None => random_control(*total_time, *p, *kappa, sys.num_generators(), g.seed)?,
            };
            let opts = AscentOptions {
                max_iters: *max_iters,
                ..Default::default()
            };
            let mut rec = gradient_ascent(&sys, &start, &obj, &opts)?;
            rec.seed = Some(g.seed);
            rec.classification = Some(classify_critical(&sys, &rec.final_field, &obj, &tol)?);
            g.emit_json(&serde_json::to_value(&rec)?)
        }
        Command::Corank {
            system,
            field,
            target,
        } => {
            let sys = load_system(system)?;
            let field = load_field(field)?;
            let report = endpoint_jacobian_with(&sys, &field, &tol)?;
            let residual = match target {
                Some(t) => {
                    let obj = Objective::gate_phase_free(load_target(Some(t), sys.dim(), g.seed)?)?;
                    let xi = obj.riemannian_gradient(&end_point(&sys, &field)?)?;
                    let coords = standard_basis(sys.dim())?.coords(&xi)?;
                    Some(is_transverse_to_level_set(&report, &coords, tol.transverse)?.residual)
                }
                None => None,
            };
            g.emit_json(&serde_json::to_value(report.summary(residual, &tol))?)
        }
        Command::Larc { system } => {
            let sys = load_system(system)?;
            let full = sys.dim() * sys.dim() - 1;
            let dim = larc_dimension_with(&sys, tol.larc);
            let verdict = if dim == full {
                "controllable"
            } else {
                "NOT controllable"
            };
            match g.format {
                Format::Json => g.emit_json(&json!({
                    "dimension": dim,
                    "full": full,
                    "controllable": dim == full,
                })),
                Format::Csv => g.emit(&format!("dimension,full,controllable\n{dim},{full},{}\n", dim == full)),
            }?;
            if g.out.is_some() || g.format == Format::Csv {
                eprintln!("dimension {dim} of {full}: {verdict}");
            } else {
                println!("dimension {dim} of {full}: {verdict}");
            }
            Ok(())
        }
        Command::SynthSingular {
            system,
            direction,
            total_time,
            steps,
            raw,
        } => {
            let sys = load_system(system)?;
            let dir = match direction {
                Some(p) => {
                    let doc: UnitaryDoc = read_json(p)?;
                    qlandscape::AlgebraElement::with_tolerance(
                        qlandscape::harness::matrix_from_doc(&doc.matrix, doc.n, "matrix")?,
                        1e-10,
                    )?
                }
                None => random_element(sys.dim(), g.seed, 1.0)?,
            };
            let seed = if *raw {
                SingularSeed::new(&sys, &dir)?
            } else {
                SingularSeed::projected(&sys, &dir)?
            };
            let c = synthesize_singular_control(
                &sys,
                seed.direction(),
                *total_time,
                *steps,
                tol.denom,
            )?;
            match g.format {
                Format::Json => g.emit_json(&json!({
                    "dt": c.dt,
                    "diagnostics": c.diagnostics,
                    "control": c.control,
                    "invariant": c.invariant,
                })),
                Format::Csv => {
                    let mut s = String::from("t,control,invariant\n");
                    for (k, e) in c.control.iter().enumerate() {
                        s.push_str(&format!("{},{e},{}\n", k as f64 * c.dt, c.invariant[k]));
                    }
                    g.emit(&s)
                }
            }
        }
        Command::SearchSingular {
            system,
            target,
            total_time,
            p,
            kappa,
            restarts,
            iters,
            sigma,
            raw,
        } => {
            let sys = load_system(system)?;
            let obj = Objective::gate_phase_free(load_target(target.as_ref(), sys.dim(), g.seed)?)?;
            let opts = SearchOptions {
                restarts: *restarts,
                iters: *iters,
                sigma: *sigma,
                mode: if *raw { SeedMode::Raw } else { SeedMode::Projected },
                ..Default::default()
            };
            let rec =
                singular_critical_search(&sys, &obj, *total_time, *p, *kappa, &opts, g.seed, &tol)?;
            g.emit_json(&serde_json::to_value(&rec)?)
        }
        Command::ScanFix {
            system,
            field,
            generator,
            piece,
            values,
            target,
        } => {
            let sys = load_system(system)?;
            let field = load_field(field)?;
            let k = field.kappa();
            let grid: Vec<f64> = match *values {
                0 => return Err(Error::InvalidInput("values must be at least 1".into())),
                1 => vec![0.0],
                m => (0..m)
                    .map(|i| (-k + 2.0 * k * i as f64 / (m - 1) as f64).clamp(-k, k))
                    .collect(),
            };
            let obj = match target {
                Some(t) => Some(Objective::gate_phase_free(load_target(Some(t), sys.dim(), g.seed)?)?),
                None => None,
            };
            let pts = fix_parameter_scan(&sys, &field, *generator, *piece, &grid, obj.as_ref(), &tol)?;
            match g.format {
                Format::Json => g.emit_json(&serde_json::to_value(&pts)?),
                Format::Csv => g.emit(&scan_csv(&pts)?),
            }
        }
        Command::Cascade {
            system,
            field,
            fixes,
            target,
        } => {
            let sys = load_system(system)?;
            let field = load_field(field)?;
            let fixes: Vec<Fix> = read_json(fixes)?;
            let obj = Objective::gate_phase_free(load_target(target.as_ref(), sys.dim(), g.seed)?)?;
            let rep = restriction_cascade(&sys, &field, &fixes, &obj, &tol)?;
            match g.format {
                Format::Json => g.emit_json(&serde_json::to_value(&rep)?),
                Format::Csv => g.emit(&rep.to_csv()?),
            }
        }
        Command::Reproduce {
            preset: name,
            master_seed,
        } => {
            let mut cfg = preset(name).expect("value parser admits only presets");
            if let Some(s) = master_seed {
                cfg.master_seed = *s;
            }
            cfg.tolerances = tol;
            let dir = g.out.clone().unwrap_or_else(|| PathBuf::from(format!("reproduce-{name}")));
            cfg.outputs.json = Some(dir.join("report.json"));
            cfg.outputs.csv = Some(dir.join("summary.csv"));
            finish_experiment(&cfg)
        }
        Command::Run { config } => {
            let mut cfg = ExperimentConfig::from_file(config)?;
            if let Some(dir) = &g.out {
                cfg.outputs.json = Some(dir.join("report.json"));
                cfg.outputs.csv = Some(dir.join("summary.csv"));
            }
            finish_experiment(&cfg)
        }
    }
}

fn finish_experiment(cfg: &ExperimentConfig) -> Result<(), Error> {
    let report = run_experiment(cfg)?;
    let a = &report.aggregate;
    println!(
        "{}: {} runs, success fraction {:.4}, trap candidates {}",
        cfg.kind.as_str(),
        a.total_runs,
        a.success_fraction,
        a.trap_candidates
    );
    if let (Some(v), Some(c)) = (a.verified, a.converged) {
        println!("verified singular critical controls: {v} (converged {c})");
    }
    for path in [&cfg.outputs.json, &cfg.outputs.csv].into_iter().flatten() {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NumericalFailure(_)
        | Error::DegenerateDenominator { .. }
        | Error::KinematicCritical
        | Error::AllRejected => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
