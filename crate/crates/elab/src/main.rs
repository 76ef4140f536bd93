use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use elab::capacity::cdc_sweep;
use elab::carleson::{comparability_check, duality_check, CubeMeasure, CubeTree};
use elab::coefficients::{CoefficientField, FieldSpec};
use elab::domain::{GridDomain, Point, Shape};
use elab::dyadic::DyadicGrid;
use elab::experiments::{profile_domains, run_scenario, verify_all, Scenario, Status, DIMENSION_CAVEAT};
use elab::perturbation::{compose_rh, pole_pairs, rh_constant, surface_measure, BallFamily, PoleMeasures};
use elab::regions::Setting;
use elab::sfnt::{
    cme_functional, djk_bounds_check, djk_nu, nontangential_max, random_boundary_data, s_vs_n, square_function,
};
use elab::solver::Operator;

#[derive(Parser)]
#[command(name = "elab", version, about = "Elliptic measure and Carleson functional experiments on voxel domains")]
struct Cli {
    /// Scenario file (TOML); `experiment` requires it, other commands read the operator pair from it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Lattice nodes per axis.
    #[arg(long, global = true)]
    resolution: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// square, disk, lipschitz, koch or 3d.
    #[arg(long, global = true, default_value = "square")]
    profile: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and verify the dyadic grid.
    Grid,
    /// Sawtooth over a cube with the family of its descendants at a fixed depth.
    Sawtooth {
        /// Generation of `Q₀` above the coarsest one.
        #[arg(long, default_value_t = 1)]
        level: i32,
        #[arg(long, default_value_t = 2)]
        depth: u32,
    },
    /// Elliptic measure of one pole.
    Measure {
        /// Pole as `x,y[,z]`; defaults to the deepest cell.
        #[arg(long)]
        pole: Option<String>,
    },
    /// Capacity density ratios at random boundary points.
    Capacity {
        #[arg(long, default_value_t = 50)]
        samples: usize,
        /// Smallest radius in grid spacings.
        #[arg(long, default_value_t = 2.0)]
        r_min_cells: f64,
        #[arg(long, default_value_t = 0.25)]
        r_max: f64,
    },
    /// Tent duality and Carleson comparability on random trees.
    Carleson {
        #[arg(long, default_value_t = 200)]
        trees: usize,
        #[arg(long, default_value_t = 3)]
        depth: u32,
    },
    /// Reverse Hölder constants of the operator pair and their composition.
    Rhq {
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        #[arg(long, default_value_t = 2.0)]
        q: f64,
    },
    /// Square function, non-tangential maximal function and CME.
    Sfnt {
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long, default_value_t = 2.0)]
        q: f64,
    },
    /// Sawtooth measure `ν` and its bounds against `ω`.
    Djk {
        #[arg(long, default_value_t = 1)]
        level: i32,
        #[arg(long, default_value_t = 30)]
        samples: usize,
    },
    /// Run a scenario file.
    Experiment,
    /// Invariant matrix for the profile.
    Verify,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("ELAB_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: ELAB_THREADS: {e}");
                    return ExitCode::from(2);
                }
            }
            _ => {
                eprintln!("error: ELAB_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn shape_of(cli: &Cli) -> Result<(Shape, usize)> {
    let (shapes, n) = profile_domains(&cli.profile)?;
    Ok((shapes[0].clone(), cli.resolution.unwrap_or(n)))
}

fn scenario(cli: &Cli) -> Result<Option<Scenario>> {
    match &cli.config {
        None => Ok(None),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(Some(Scenario::from_toml(&text)?))
        }
    }
}

/// `(A₀, A)` from the config, identity for both without one.
fn fields(cli: &Cli, domain: &GridDomain) -> Result<(CoefficientField, CoefficientField)> {
    let (base, perturbed) = match scenario(cli)? {
        Some(s) => (s.operator.base, s.operator.perturbed),
        None => (FieldSpec::Identity, FieldSpec::Identity),
    };
    Ok((CoefficientField::from_spec(domain, &base)?, CoefficientField::from_spec(domain, &perturbed)?))
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_csv(dir: &Path, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn parse_point(s: &str, dim: usize) -> Result<Point> {
    let parts: Vec<f64> = s.split(',').map(|t| t.trim().parse::<f64>()).collect::<std::result::Result<_, _>>()?;
    if parts.len() != dim {
        bail!("point {s:?} needs {dim} coordinates");
    }
    let mut p = [0.0; 3];
    p[..dim].copy_from_slice(&parts);
    Ok(p)
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    domain: String,
    resolution: usize,
    seed: u64,
    caveat: &'a str,
    report: T,
}

fn envelope<'a, T: Serialize>(cli: &Cli, command: &'a str, shape: &Shape, n: usize, report: T) -> Envelope<'a, T> {
    Envelope { command, domain: shape.name(), resolution: n, seed: cli.seed, caveat: DIMENSION_CAVEAT, report }
}

fn run(cli: &Cli) -> Result<bool> {
    let out = &cli.out;
    match &cli.command {
        Command::Grid => {
            let (shape, n) = shape_of(cli)?;
            let domain = GridDomain::build(&shape, n)?;
            let grid = DyadicGrid::from_domain(&domain, None)?;
            let report = grid.verify()?;
            let rows: Vec<Vec<String>> = grid
                .cubes
                .iter()
                .map(|c| {
                    let p = grid.points[c.center];
                    vec![
                        c.id.to_string(),
                        c.generation.to_string(),
                        format!("{}", c.length),
                        format!("{:.10}", p[0]),
                        format!("{:.10}", p[1]),
                        format!("{:.10}", p[2]),
                        format!("{}", c.radius),
                        c.members.len().to_string(),
                        c.parent.map_or(String::new(), |p| p.to_string()),
                    ]
                })
                .collect();
            write_csv(
                out,
                "grid_cubes.csv",
                &strings(&["id", "generation", "length", "x", "y", "z", "radius", "members", "parent"]),
                &rows,
            )?;
            println!("{} generations, {} cubes, sandwich {:.4}", report.generations, report.cubes, report.sandwich);
            write_json(out, "grid.json", &envelope(cli, "grid", &shape, n, report))?;
            Ok(true)
        }
        Command::Sawtooth { level, depth } => {
            let (shape, n) = shape_of(cli)?;
            let s = Setting::build(&shape, n)?;
            let face = s.domain.nearest_face(&[0.5, 0.0, 0.0]);
            let q0 = s.grid.cube_of(s.grid.k_min + level, face);
            let family = s.descendants_at(q0, *depth)?;
            let saw = s.sawtooth(&family, q0)?;
            let sub = s.sub_domain(&saw)?;
            #[derive(Serialize)]
            struct Report {
                q0: usize,
                family: Vec<usize>,
                cells: usize,
                components: usize,
                corkscrew: elab::regions::CommonCorkscrew,
                projection: elab::regions::ProjectionReport,
            }
            let r = Report {
                q0,
                family: family.clone(),
                cells: saw.len(),
                components: sub.components,
                corkscrew: s.common_corkscrew(&sub),
                projection: s.projection_cubes(&saw),
            };
            println!(
                "sawtooth over cube {q0}: {} cells, {} components, corkscrew ratio {:.3}",
                r.cells, r.components, r.corkscrew.ratio
            );
            write_json(out, "sawtooth.json", &envelope(cli, "sawtooth", &shape, n, r))?;
            Ok(true)
        }
        Command::Measure { pole } => {
            let (shape, n) = shape_of(cli)?;
            let domain = std::sync::Arc::new(GridDomain::build(&shape, n)?);
            let (_, a) = fields(cli, &domain)?;
            let op = Operator::new(domain.clone(), a)?;
            let cell = match pole {
                Some(p) => {
                    let p = parse_point(p, domain.dim)?;
                    domain.locate(&p).with_context(|| format!("pole {p:?} is not an interior point"))?
                }
                None => (0..domain.n_cells())
                    .max_by(|&a, &b| domain.delta(a).total_cmp(&domain.delta(b)).then(b.cmp(&a)))
                    .context("empty domain")?,
            };
            let m = op.elliptic_measure(cell)?;
            let rows: Vec<Vec<String>> = domain
                .faces()
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    vec![
                        i.to_string(),
                        format!("{:.10}", f.point[0]),
                        format!("{:.10}", f.point[1]),
                        format!("{:.10}", f.point[2]),
                        format!("{:.10e}", f.sigma),
                        format!("{:.12e}", m.omega[i]),
                    ]
                })
                .collect();
            write_csv(out, "measure.csv", &strings(&["face", "x", "y", "z", "sigma", "omega"]), &rows)?;
            #[derive(Serialize)]
            struct Report {
                pole: usize,
                point: Point,
                total: f64,
            }
            let total = m.total();
            println!("pole {cell}, total mass {total:.12}");
            write_json(
                out,
                "measure.json",
                &envelope(cli, "measure", &shape, n, Report { pole: cell, point: domain.cell_point(cell), total }),
            )?;
            Ok(true)
        }
        Command::Capacity { samples, r_min_cells, r_max } => {
            let (shape, n) = shape_of(cli)?;
            let domain = GridDomain::build(&shape, n)?;
            let sweep = cdc_sweep(&domain, *samples, r_min_cells * domain.h, *r_max, cli.seed)?;
            let rows: Vec<Vec<String>> = sweep
                .samples
                .iter()
                .map(|s| {
                    vec![
                        s.face.to_string(),
                        format!("{:.10e}", s.radius),
                        format!("{:.10e}", s.numerator),
                        format!("{:.10e}", s.denominator),
                        format!("{:.10}", s.ratio),
                    ]
                })
                .collect();
            write_csv(out, "capacity.csv", &strings(&["face", "radius", "numerator", "denominator", "ratio"]), &rows)?;
            println!("minimum capacity ratio {:.4} over {} samples", sweep.min_ratio, sweep.samples.len());
            write_json(out, "capacity.json", &envelope(cli, "capacity", &shape, n, sweep))?;
            Ok(true)
        }
        Command::Carleson { trees, depth } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
            let (mut worst, mut certified, mut inside) = (0.0f64, 0usize, 0usize);
            for _ in 0..*trees {
                let tree = CubeTree::random(*depth, 3, &mut rng)?;
                let mu = CubeMeasure::random(&tree, 0.1, 1.0, &mut rng)?;
                let alpha: Vec<f64> = (0..tree.len()).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
                let beta: Vec<f64> = (0..tree.len()).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
                let (lhs, rhs) = duality_check(&tree, &alpha, &beta, &mu);
                worst = worst.max(lhs / rhs);
                let atoms: Vec<f64> =
                    mu.atom.iter().map(|&m| m * rand::Rng::random_range(&mut rng, 0.9..1.1)).collect();
                let nu = CubeMeasure::new(&tree, atoms)?;
                let gamma: Vec<f64> = (0..tree.len()).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect();
                let c = comparability_check(&tree, &gamma, &mu, &nu, 0.5, 0.5);
                if c.certified {
                    certified += 1;
                    inside += c.holds() as usize;
                }
            }
            #[derive(Serialize)]
            struct Report {
                trees: usize,
                depth: u32,
                worst_duality_ratio: f64,
                certified: usize,
                comparability_holds: usize,
            }
            let r = Report {
                trees: *trees,
                depth: *depth,
                worst_duality_ratio: worst,
                certified,
                comparability_holds: inside,
            };
            println!("duality worst lhs/rhs {worst:.4}; comparability {inside}/{certified} certified instances");
            write_json(out, "carleson.json", &r)?;
            Ok(worst <= 1.0 + 1e-12 && inside == certified)
        }
        Command::Rhq { p, q } => {
            let (shape, n) = shape_of(cli)?;
            let s = Setting::build(&shape, n)?;
            let d = s.domain.clone();
            let (a0, a) = fields(cli, &d)?;
            let op0 = Operator::new(d.clone(), a0)?;
            let op = Operator::new(d.clone(), a)?;
            let family = BallFamily::dyadic(&d, &s.grid, 4.0 * d.h, d.diam())?;
            let balls: Vec<usize> = (0..family.len()).collect();
            let pairs = pole_pairs(&op, &op0, &family, &balls)?;
            let sigma = surface_measure(&d);
            let vs_omega0: Vec<PoleMeasures> =
                pairs.iter().map(|(b, w, w0)| PoleMeasures { ball: *b, nu: w.clone(), mu: w0.clone() }).collect();
            let omega0_vs_sigma: Vec<PoleMeasures> =
                pairs.iter().map(|(b, _, w0)| PoleMeasures { ball: *b, nu: w0.clone(), mu: sigma.clone() }).collect();
            let omega_vs_sigma: Vec<PoleMeasures> =
                pairs.iter().map(|(b, w, _)| PoleMeasures { ball: *b, nu: w.clone(), mu: sigma.clone() }).collect();
            let rh_q = rh_constant(&family, *q, &vs_omega0)?;
            let rh_p = rh_constant(&family, *p, &omega0_vs_sigma)?;
            let (r, bound) = compose_rh(*p, *q, rh_q.constant, rh_p.constant)?;
            let rh_r = rh_constant(&family, r, &omega_vs_sigma)?;
            #[derive(Serialize)]
            struct Report {
                p: f64,
                q: f64,
                r: f64,
                rh_q_omega0: f64,
                rh_p_sigma: f64,
                bound: f64,
                rh_r_sigma: f64,
                within_bound: bool,
            }
            let rep = Report {
                p: *p,
                q: *q,
                r,
                rh_q_omega0: rh_q.constant,
                rh_p_sigma: rh_p.constant,
                bound,
                rh_r_sigma: rh_r.constant,
                within_bound: rh_r.constant <= bound * (1.0 + 1e-12),
            };
            println!(
                "[RH_{q}(w0)] = {:.5}, [RH_{p}(sigma)] = {:.5}, r = {r:.4}, bound {bound:.5}, measured {:.5}",
                rep.rh_q_omega0, rep.rh_p_sigma, rep.rh_r_sigma
            );
            let ok = rep.within_bound;
            write_json(out, "rhq.json", &envelope(cli, "rhq", &shape, n, rep))?;
            Ok(ok)
        }
        Command::Sfnt { samples, q } => {
            let (shape, n) = shape_of(cli)?;
            let s = Setting::build(&shape, n)?;
            let d = s.domain.clone();
            let (_, a) = fields(cli, &d)?;
            let op = Operator::new(d.clone(), a)?;
            let q0 = s.grid.roots().start;
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
            let data: Vec<Vec<f64>> = (0..*samples).map(|_| random_boundary_data(&d, &mut rng)).collect();
            let u = op.solve_dirichlet(&data[0])?;
            let sq = square_function(&s, &u, q0, None)?;
            let nt = nontangential_max(&s, &u, q0)?;
            let rows: Vec<Vec<String>> = (0..d.n_faces())
                .map(|f| {
                    vec![
                        f.to_string(),
                        format!("{:.12e}", data[0][f]),
                        format!("{:.12e}", sq[f]),
                        format!("{:.12e}", nt[f]),
                    ]
                })
                .collect();
            write_csv(out, "sfnt_faces.csv", &strings(&["face", "data", "square", "nontangential"]), &rows)?;
            let family = BallFamily::dyadic(&d, &s.grid, 4.0 * d.h, d.diam())?;
            let sup = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let cme = cme_functional(&op, &u, &family)?;
            let report = s_vs_n(&s, &op, &data, q0, *q)?;
            #[derive(Serialize)]
            struct Report {
                cme: f64,
                cme_over_sup2: f64,
                s_vs_n: elab::sfnt::SnReport,
            }
            println!("C_{q} = {:.4}; CME / |u|^2 = {:.4}", report.c_q, cme.value / (sup * sup));
            write_json(
                out,
                "sfnt.json",
                &envelope(
                    cli,
                    "sfnt",
                    &shape,
                    n,
                    Report { cme: cme.value, cme_over_sup2: cme.value / (sup * sup), s_vs_n: report },
                ),
            )?;
            Ok(true)
        }
        Command::Djk { level, samples } => {
            let (shape, n) = shape_of(cli)?;
            let s = Setting::build(&shape, n)?;
            let d = s.domain.clone();
            let (_, a) = fields(cli, &d)?;
            let op = Operator::new(d.clone(), a)?;
            let q0 = s.grid.cube_of(s.grid.k_min + level, d.nearest_face(&[0.5, 0.0, 0.0]));
            let family: Vec<usize> = s.descendants_at(q0, 2)?.into_iter().step_by(2).collect();
            let nu = djk_nu(&s, &op, &family, q0)?;
            let report = djk_bounds_check(&s, &nu, *samples, cli.seed)?;
            let rows: Vec<Vec<String>> = report
                .samples
                .iter()
                .map(|x| {
                    vec![
                        x.q.to_string(),
                        x.f_cubes.len().to_string(),
                        format!("{:.12e}", x.omega_ratio),
                        format!("{:.12e}", x.nu_ratio),
                    ]
                })
                .collect();
            write_csv(out, "djk_samples.csv", &strings(&["q", "f_cubes", "omega_ratio", "nu_ratio"]), &rows)?;
            println!(
                "upper constant {:.4}, fitted theta {:.4} (residual {:.4})",
                report.upper, report.theta, report.residual
            );
            write_json(out, "djk.json", &envelope(cli, "djk", &shape, n, report))?;
            Ok(true)
        }
        Command::Experiment => {
            let mut sc = scenario(cli)?.context("experiment needs --config")?;
            if let Some(n) = cli.resolution {
                sc.domain.resolutions = vec![n];
            }
            if cli.seed != 0 {
                sc.seed = cli.seed;
            }
            let report = run_scenario(&sc)?;
            let (header, rows) = report.table();
            write_csv(out, "table.csv", &header, &rows)?;
            write_json(out, "summary.json", &report)?;
            fs::write(out.join("plot.py"), report.plot_script("table.csv"))?;
            println!("{} ({DIMENSION_CAVEAT})", report.name);
            for a in &report.assertions {
                println!("{} {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail);
            }
            if let Some(a) = report.first_failure() {
                eprintln!("first violated invariant: {} ({})", a.name, a.detail);
                return Ok(false);
            }
            Ok(true)
        }
        Command::Verify => {
            let cells = verify_all(&cli.profile, cli.resolution, cli.seed)?;
            for c in &cells {
                let tag = match c.status {
                    Status::Pass => "PASS",
                    Status::Fail => "FAIL",
                    Status::NotApplicable => "N/A ",
                };
                println!("{tag} {:<30} {:<28} {}", c.invariant, c.domain, c.detail);
            }
            write_json(out, "verify.json", &cells)?;
            Ok(cells.iter().all(|c| c.status != Status::Fail))
        }
    }
}
