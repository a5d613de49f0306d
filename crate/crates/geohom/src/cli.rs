//! Command-line driver: parses the subcommands, runs the module pipelines,
//! writes artifacts with reproducibility headers.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 numerical failure.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::fields::{QField, RasterGrid, SField, SigmaField, TensorCarrier};
use crate::io::{self, ArtifactMeta};
use crate::mesh::Mesh2D;
use crate::phantom::Phantom;
use crate::svg::{render_svg, Overlay};
use crate::Tensor2;

#[derive(Parser)]
#[command(name = "geohom", version = crate::VERSION, about = "Discrete geometric homogenization and EIT toolkit")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GlobalOpts {
    /// Seed for all randomized procedures (bit-reproducible)
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads (falls back to GEOHOM_THREADS; computations stay
    /// deterministic regardless)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Generic tolerance knob recorded into artifact headers
    #[arg(long, global = true, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Dirichlet solve -div(sigma grad u) = f with u = 0 on the boundary
    Solve {
        #[arg(long)]
        mesh: PathBuf,
        /// per-cell tensor CSV; defaults to the identity coefficient
        #[arg(long)]
        sigma: Option<PathBuf>,
        /// constant right-hand side
        #[arg(long, default_value_t = 1.0)]
        f: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Harmonic coordinates of a conductivity
    Harmonic {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        sigma: Option<PathBuf>,
        /// output CSV of per-vertex image coordinates
        #[arg(long)]
        out: PathBuf,
    },
    /// Push a conductivity forward to its divergence-free representative
    Sigma2q {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        sigma: Option<PathBuf>,
        /// per-cell tensor CSV on the image mesh
        #[arg(long)]
        out: PathBuf,
        /// also write the image mesh
        #[arg(long)]
        out_mesh: Option<PathBuf>,
    },
    /// Integrate a raster Q into its convex potential
    Q2s {
        /// tensor raster CSV (header nx,ny,x0,y0,dx,dy then a11,a12,a22 rows)
        #[arg(long)]
        q: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Differentiate a raster potential back into Q
    S2q {
        /// scalar raster CSV
        #[arg(long)]
        s: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Effective edge conductivities of a phantom and the coarse solve
    Homogenize {
        #[arg(long)]
        coarse: PathBuf,
        #[arg(long, default_value = "laminate")]
        phantom: String,
        /// nested refinement levels for the fine scale
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long, default_value_t = 1.0)]
        f: f64,
        #[arg(long)]
        out_qh: PathBuf,
        #[arg(long)]
        out_u: Option<PathBuf>,
    },
    /// Verify the coarsening and interpolation semi-group identities
    SemigroupCheck {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long, default_value = "laminate")]
        phantom: String,
    },
    /// Q-optimal mesh generation
    MeshOpt {
        /// scalar raster CSV for s, or one of qx:QXX,qy:QYY for the
        /// quadratic potential of diag(QXX, QYY)
        #[arg(long)]
        s: String,
        /// interior point budget
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol_opt: f64,
        /// SVG rendering of the final mesh
        #[arg(long)]
        out_svg: Option<PathBuf>,
        /// CSV of (iteration, energy)
        #[arg(long)]
        out_energy: Option<PathBuf>,
    },
    /// Periodic cell problems and the effective tensor
    CellProblem {
        #[arg(long, default_value = "laminate")]
        phantom: String,
        #[arg(long, default_value_t = 32)]
        n: usize,
        /// JSON output of the effective tensor
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Continuum forward map sampled at boundary points
    EitForward {
        #[arg(long, default_value = "blob")]
        phantom: String,
        #[arg(long, default_value_t = 8)]
        bpoints: usize,
        /// fine grid resolution per side
        #[arg(long, default_value_t = 48)]
        n: usize,
        /// relative Gaussian noise on the map (0 = clean)
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a coarse resistor network to a DtN target by annealing
    EitFitCoarse {
        #[arg(long)]
        dtn: PathBuf,
        #[arg(long, default_value_t = 5)]
        interior: usize,
        #[arg(long, default_value_t = 120)]
        stages: usize,
        #[arg(long)]
        out_mesh: Option<PathBuf>,
        #[arg(long)]
        out_qh: Option<PathBuf>,
        #[arg(long)]
        out_misfit: Option<PathBuf>,
    },
    /// Harmonic-coordinate iteration on a fitted coarse network
    EitIterateF {
        #[arg(long)]
        dtn: PathBuf,
        #[arg(long, default_value_t = 10)]
        iters: usize,
        #[arg(long, default_value_t = 5)]
        interior: usize,
        #[arg(long, default_value_t = 60)]
        stages: usize,
        /// refinement levels of the fitted mesh for the fine-scale recovery
        #[arg(long, default_value_t = 2)]
        levels: usize,
        #[arg(long)]
        out_sigma: Option<PathBuf>,
        #[arg(long)]
        out_misfit: Option<PathBuf>,
        #[arg(long)]
        out_svg: Option<PathBuf>,
    },
    /// Recover the convex potential from DtN data
    EitRecoverSh {
        #[arg(long)]
        dtn: PathBuf,
        /// ghosted recovery mesh; generated over the measurement ring when absent
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-3)]
        alpha: f64,
        /// sweep alpha over 1e-4..1e0 and report the L-curve instead
        #[arg(long, default_value_t = false)]
        lcurve: bool,
        /// interior points when generating the recovery mesh
        #[arg(long, default_value_t = 24)]
        interior: usize,
        #[arg(long)]
        out_sh: Option<PathBuf>,
        #[arg(long)]
        out_qh: Option<PathBuf>,
        #[arg(long)]
        out_svg: Option<PathBuf>,
    },
    /// Render a mesh with an optional field overlay
    Plot {
        #[arg(long)]
        mesh: PathBuf,
        /// per-cell scalar CSV (id,s)
        #[arg(long)]
        field: Option<PathBuf>,
        /// per-cell tensor CSV (id,a11,a12,a22) rendered as eigenvector glyphs
        #[arg(long)]
        tensor: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Entry point used by the binary; returns the process exit code.
pub fn run(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // clap prints its own usage text; map every parse failure to 1
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let threads = cli
        .global
        .threads
        .or_else(|| {
            std::env::var("GEOHOM_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1);
    match dispatch(cli.command, &cli.global, threads) {
        Ok(()) => 0,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            2
        }
    }
}

pub(crate) enum CliError {
    Validation(String),
    Numerical(String),
}

impl From<io::IoError> for CliError {
    fn from(e: io::IoError) -> Self {
        CliError::Validation(e.to_string())
    }
}
impl From<crate::mesh::MeshError> for CliError {
    fn from(e: crate::mesh::MeshError) -> Self {
        CliError::Validation(e.to_string())
    }
}
impl From<crate::fields::FieldError> for CliError {
    fn from(e: crate::fields::FieldError) -> Self {
        CliError::Numerical(e.to_string())
    }
}
impl From<crate::fem::FemError> for CliError {
    fn from(e: crate::fem::FemError) -> Self {
        CliError::Numerical(e.to_string())
    }
}
impl From<crate::homogenize::HomogenizeError> for CliError {
    fn from(e: crate::homogenize::HomogenizeError) -> Self {
        CliError::Numerical(e.to_string())
    }
}
impl From<crate::eit::EitError> for CliError {
    fn from(e: crate::eit::EitError) -> Self {
        CliError::Numerical(e.to_string())
    }
}
impl From<crate::meshopt::MeshOptError> for CliError {
    fn from(e: crate::meshopt::MeshOptError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

fn load_mesh(path: &Path) -> Result<Arc<Mesh2D>, CliError> {
    Ok(Arc::new(io::read_mesh_json(path)?))
}

fn load_sigma(path: &Option<PathBuf>, mesh: &Arc<Mesh2D>) -> Result<SigmaField, CliError> {
    match path {
        Some(p) => {
            let carrier = io::read_mesh_tensor_field(p, mesh)?;
            Ok(SigmaField::new(carrier)?)
        }
        None => Ok(SigmaField::constant(Arc::clone(mesh), Tensor2::identity())?),
    }
}

fn file_hash(path: &Path) -> u64 {
    std::fs::read(path).map(|b| io::fnv1a(&b)).unwrap_or(0)
}

fn meta_for(config: &RunConfig, inputs: &[(&str, &Path)]) -> ArtifactMeta {
    ArtifactMeta {
        config_hash: config.hash(),
        inputs: inputs
            .iter()
            .map(|(n, p)| (n.to_string(), file_hash(p)))
            .collect(),
    }
}

/// Tensor raster CSV: geometry header then a11,a12,a22 per node.
fn read_tensor_raster(path: &Path) -> Result<(RasterGrid, Vec<Tensor2>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(e.to_string()))?;
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let head = lines
        .next()
        .ok_or_else(|| CliError::Validation("empty tensor raster".into()))?;
    let parts: Vec<&str> = head.split(',').collect();
    if parts.len() != 6 {
        return Err(CliError::Validation(
            "tensor raster header needs nx,ny,x0,y0,dx,dy".into(),
        ));
    }
    let bad = |what: &str| CliError::Validation(format!("tensor raster: {what}"));
    let nx: usize = parts[0].trim().parse().map_err(|_| bad("nx"))?;
    let ny: usize = parts[1].trim().parse().map_err(|_| bad("ny"))?;
    let grid = RasterGrid {
        nx,
        ny,
        x0: parts[2].trim().parse().map_err(|_| bad("x0"))?,
        y0: parts[3].trim().parse().map_err(|_| bad("y0"))?,
        dx: parts[4].trim().parse().map_err(|_| bad("dx"))?,
        dy: parts[5].trim().parse().map_err(|_| bad("dy"))?,
    };
    let mut values = Vec::with_capacity(nx * ny);
    for l in lines {
        let p: Vec<&str> = l.split(',').collect();
        if p.len() != 3 {
            return Err(bad("rows must be a11,a12,a22"));
        }
        values.push(Tensor2::new(
            p[0].trim().parse().map_err(|_| bad("a11"))?,
            p[1].trim().parse().map_err(|_| bad("a12"))?,
            p[2].trim().parse().map_err(|_| bad("a22"))?,
        ));
    }
    if values.len() != nx * ny {
        return Err(bad("value count mismatch"));
    }
    Ok((grid, values))
}

fn write_tensor_raster(
    path: &Path,
    grid: RasterGrid,
    values: &[Tensor2],
    meta: &ArtifactMeta,
) -> Result<(), CliError> {
    use std::fmt::Write as _;
    let mut out = meta.header_lines();
    let _ = writeln!(
        out,
        "{},{},{:.17e},{:.17e},{:.17e},{:.17e}",
        grid.nx, grid.ny, grid.x0, grid.y0, grid.dx, grid.dy
    );
    for t in values {
        let _ = writeln!(out, "{:.17e},{:.17e},{:.17e}", t.a11, t.a12, t.a22);
    }
    std::fs::write(path, out).map_err(|e| CliError::Validation(e.to_string()))
}

fn phantom_by_name(name: &str) -> Result<Phantom, CliError> {
    Phantom::by_name(name)
        .ok_or_else(|| CliError::Validation(format!("unknown phantom {name:?}")))
}

fn dispatch(command: Command, global: &GlobalOpts, threads: usize) -> Result<(), CliError> {
    match command {
        Command::Solve { mesh, sigma, f, out } => {
            let config = RunConfig::new("solve", global.seed, threads, global.tol).arg("f", f);
            let m = load_mesh(&mesh)?;
            let coeff = load_sigma(&sigma, &m)?;
            let u = crate::fem::solve_dirichlet(&m, &coeff, &|_| f, &|_| 0.0)?;
            io::write_scalar_csv(&out, &u, &meta_for(&config, &[("mesh", &mesh)]))?;
            println!("solved {} vertices -> {}", m.num_vertices(), out.display());
            Ok(())
        }
        Command::Harmonic { mesh, sigma, out } => {
            let config = RunConfig::new("harmonic", global.seed, threads, global.tol);
            let m = load_mesh(&mesh)?;
            let coeff = load_sigma(&sigma, &m)?;
            let fmap = crate::fem::harmonic_coordinates(&m, &coeff)?;
            // two scalar columns flattened as (id, x) then offset ids for y
            let mut rows = Vec::with_capacity(2 * m.num_vertices());
            for v in 0..m.num_vertices() {
                rows.push(fmap.image(v).x);
            }
            for v in 0..m.num_vertices() {
                rows.push(fmap.image(v).y);
            }
            io::write_scalar_csv(&out, &rows, &meta_for(&config, &[("mesh", &mesh)]))?;
            println!(
                "harmonic coordinates: min Jacobian determinant {:.3e}",
                fmap.min_jacobian_det
            );
            Ok(())
        }
        Command::Sigma2q {
            mesh,
            sigma,
            out,
            out_mesh,
        } => {
            let config = RunConfig::new("sigma2q", global.seed, threads, global.tol);
            let m = load_mesh(&mesh)?;
            let coeff = load_sigma(&sigma, &m)?;
            let (q, _fmap) = crate::fields::sigma_to_q(&coeff, &m)?;
            let meta = meta_for(&config, &[("mesh", &mesh)]);
            io::write_tensor_csv(&out, q.carrier.values(), &meta)?;
            if let TensorCarrier::MeshCells { mesh: image, .. } = &q.carrier {
                if let Some(p) = out_mesh {
                    io::write_mesh_json(&p, image, &meta)?;
                }
            }
            println!(
                "pushed forward; weak divergence residual {:.3e}",
                q.divergence_residual.unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Command::Q2s { q, out } => {
            let config = RunConfig::new("q2s", global.seed, threads, global.tol);
            let (grid, values) = read_tensor_raster(&q)?;
            let field = QField::new(TensorCarrier::Raster { grid, values })?;
            let (s, residual) = crate::fields::q_to_s(&field, 1e-6)?;
            let SField::Raster { grid, values } = &s else {
                unreachable!()
            };
            io::write_raster_csv(&out, *grid, values, &meta_for(&config, &[("q", &q)]))?;
            println!("integrated potential; loop closure residual {residual:.3e}");
            Ok(())
        }
        Command::S2q { s, out } => {
            let config = RunConfig::new("s2q", global.seed, threads, global.tol);
            let field = io::read_sfield_raster(&s)?;
            let SField::Raster { grid, .. } = &field else {
                unreachable!()
            };
            let grid = *grid;
            let q = crate::fields::s_to_q(&field, grid)?;
            write_tensor_raster(&out, grid, q.carrier.values(), &meta_for(&config, &[("s", &s)]))?;
            println!("rotated Hessian written to {}", out.display());
            Ok(())
        }
        Command::Homogenize {
            coarse,
            phantom,
            levels,
            f,
            out_qh,
            out_u,
        } => {
            let config = RunConfig::new("homogenize", global.seed, threads, global.tol)
                .arg("phantom", &phantom)
                .arg("levels", levels);
            let coarse_mesh = load_mesh(&coarse)?;
            let (fine, _) = coarse_mesh.refine(levels);
            let fine = Arc::new(fine);
            let sigma = phantom_by_name(&phantom)?.on_mesh(Arc::clone(&fine))?;
            let op = crate::homogenize::qh_from_sigma_on(&coarse_mesh, &sigma, &fine)?;
            let meta = meta_for(&config, &[("coarse", &coarse)]);
            io::write_edges_csv(&out_qh, &op.qh, &meta)?;
            if let Some(p) = out_u {
                let load = op.load(&|_| f);
                let sol = crate::homogenize::solve_homogenized(&op.qh, &load)?;
                io::write_scalar_csv(&p, &sol.values, &meta)?;
            }
            println!(
                "effective conductivities on {} edges (divergence residual {:.3e})",
                op.qh.num_populated(),
                op.qh.divergence_residual()
            );
            Ok(())
        }
        Command::SemigroupCheck {
            mesh,
            levels,
            phantom,
        } => {
            let base = load_mesh(&mesh)?;
            let sigma_phantom = phantom_by_name(&phantom)?;
            let deviation = semigroup_deviation(&base, &sigma_phantom, levels)?;
            println!("max semigroup deviation {deviation:.3e}");
            if deviation < 1e-9 {
                Ok(())
            } else {
                Err(CliError::Numerical(format!(
                    "semigroup identity violated: {deviation:.3e}"
                )))
            }
        }
        Command::MeshOpt {
            s,
            n,
            out,
            iters,
            tol_opt,
            out_svg,
            out_energy,
        } => {
            let config = RunConfig::new("mesh-opt", global.seed, threads, global.tol)
                .arg("s", &s)
                .arg("n", n)
                .arg("iters", iters);
            let field = parse_potential(&s)?;
            let per_side = ((n as f64).sqrt() as usize).clamp(4, 64);
            let points = crate::meshopt::seeded_points(per_side, n, global.seed);
            let cfg = crate::meshopt::MeshOptConfig {
                max_iter: iters,
                tol: tol_opt,
                ..Default::default()
            };
            let result = crate::meshopt::optimize_mesh(&points, &field, &cfg)?;
            let meta = ArtifactMeta {
                config_hash: config.hash(),
                inputs: Vec::new(),
            };
            io::write_mesh_json(&out, &result.mesh, &meta)?;
            if let Some(p) = out_svg {
                let svg = render_svg(&result.mesh, &Overlay::None, 800);
                std::fs::write(p, svg).map_err(|e| CliError::Validation(e.to_string()))?;
            }
            if let Some(p) = out_energy {
                io::write_scalar_csv(&p, &result.energy_history, &meta)?;
            }
            println!(
                "optimized {} points in {} iterations (converged: {})",
                result.points.len(),
                result.iterations,
                result.converged
            );
            Ok(())
        }
        Command::CellProblem { phantom, n, out } => {
            let torus = crate::fem::TorusMesh::new(n);
            let sigma = phantom_by_name(&phantom)?.on_mesh(Arc::clone(&torus.mesh))?;
            let sol = crate::fem::cell_problem(&torus, &sigma)?;
            let se = sol.sigma_e;
            println!("sigma_e =");
            println!("  [ {:+.6e}  {:+.6e} ]", se.a11, se.a12);
            println!("  [ {:+.6e}  {:+.6e} ]", se.a12, se.a22);
            println!(
                "volume-average route: [ {:+.6e} {:+.6e}; {:+.6e} {:+.6e} ]",
                sol.sigma_e_via_q.a11,
                sol.sigma_e_via_q.a12,
                sol.sigma_e_via_q.a12,
                sol.sigma_e_via_q.a22
            );
            if let Some(p) = out {
                let json = serde_json::json!({
                    "sigma_e": [[se.a11, se.a12], [se.a12, se.a22]],
                    "sigma_e_via_q": [
                        [sol.sigma_e_via_q.a11, sol.sigma_e_via_q.a12],
                        [sol.sigma_e_via_q.a12, sol.sigma_e_via_q.a22]
                    ],
                    "n": n,
                });
                std::fs::write(p, serde_json::to_string_pretty(&json).unwrap())
                    .map_err(|e| CliError::Validation(e.to_string()))?;
            }
            Ok(())
        }
        Command::EitForward {
            phantom,
            bpoints,
            n,
            noise,
            out,
        } => {
            let config = RunConfig::new("eit-forward", global.seed, threads, global.tol)
                .arg("phantom", &phantom)
                .arg("bpoints", bpoints)
                .arg("n", n)
                .arg("noise", noise);
            let fine = Arc::new(crate::mesh::grid_mesh(0.0, 0.0, 1.0, 1.0, n, n));
            let sigma = phantom_by_name(&phantom)?.on_mesh(Arc::clone(&fine))?;
            let meas = crate::eit::spread_measurement_vertices(&fine, bpoints)?;
            let mut dtn = crate::eit::forward_dtn(&fine, &sigma, &meas)?;
            if noise > 0.0 {
                dtn.add_noise(noise, global.seed);
            }
            io::write_dtn_csv(&out, &dtn, &meta_for(&config, &[]))?;
            println!(
                "DtN map over {bpoints} points (symmetry residual {:.3e})",
                dtn.symmetry_residual()
            );
            Ok(())
        }
        Command::EitFitCoarse {
            dtn,
            interior,
            stages,
            out_mesh,
            out_qh,
            out_misfit,
        } => {
            let config = RunConfig::new("eit-fit-coarse", global.seed, threads, global.tol)
                .arg("interior", interior)
                .arg("stages", stages);
            let target = io::read_dtn_csv(&dtn)?;
            let cfg = crate::eit::AnnealConfig {
                seed: global.seed,
                stages,
                n_interior: interior,
                ..Default::default()
            };
            let fit = crate::eit::fit_coarse_network(&target, &cfg)?;
            let meta = meta_for(&config, &[("dtn", &dtn)]);
            if let Some(p) = out_mesh {
                io::write_mesh_json(&p, &fit.mesh, &meta)?;
            }
            if let Some(p) = out_qh {
                io::write_edges_csv(&p, &fit.qh, &meta)?;
            }
            if let Some(p) = out_misfit {
                io::write_scalar_csv(&p, &fit.misfit_history, &meta)?;
            }
            println!(
                "coarse fit: misfit {:.4e} -> {:.4e} (converged: {})",
                fit.initial_misfit, fit.best_misfit, fit.converged
            );
            Ok(())
        }
        Command::EitIterateF {
            dtn,
            iters,
            interior,
            stages,
            levels,
            out_sigma,
            out_misfit,
            out_svg,
        } => {
            let config = RunConfig::new("eit-iterate-F", global.seed, threads, global.tol)
                .arg("iters", iters)
                .arg("levels", levels);
            let target = io::read_dtn_csv(&dtn)?;
            let cfg = crate::eit::AnnealConfig {
                seed: global.seed,
                stages,
                n_interior: interior,
                ..Default::default()
            };
            let fit = crate::eit::fit_coarse_network(&target, &cfg)?;
            let (fine, _) = fit.mesh.refine(levels);
            let fine = Arc::new(fine);
            let meas: Vec<usize> = (0..target.n()).collect();
            let report = crate::eit::harmonic_iteration(
                &fit.qh,
                &target,
                &fine,
                &meas,
                iters,
                &crate::eit::TvConfig::default(),
            )?;
            let meta = meta_for(&config, &[("dtn", &dtn)]);
            if let Some(p) = out_misfit {
                io::write_scalar_csv(&p, &report.misfit_history, &meta)?;
            }
            if let Some(p) = out_sigma {
                io::write_tensor_csv(&p, report.best_sigma.carrier.values(), &meta)?;
            }
            if let Some(p) = out_svg {
                let values: Vec<f64> = report
                    .best_sigma
                    .carrier
                    .values()
                    .iter()
                    .map(|t| t.a11)
                    .collect();
                let svg = render_svg(&fine, &Overlay::CellScalar(&values), 800);
                std::fs::write(p, svg).map_err(|e| CliError::Validation(e.to_string()))?;
            }
            println!(
                "iteration misfits: {:?} (best at {} = {:.4e}, unstable: {})",
                report
                    .misfit_history
                    .iter()
                    .map(|m| format!("{m:.3e}"))
                    .collect::<Vec<_>>(),
                report.best_iteration,
                report.best_misfit,
                report.instability_detected
            );
            Ok(())
        }
        Command::EitRecoverSh {
            dtn,
            mesh,
            alpha,
            lcurve,
            interior,
            out_sh,
            out_qh,
            out_svg,
        } => {
            let config = RunConfig::new("eit-recover-sh", global.seed, threads, global.tol)
                .arg("alpha", alpha);
            let target = io::read_dtn_csv(&dtn)?;
            let ghosted = match mesh {
                Some(p) => load_mesh(&p)?,
                None => crate::eit::recovery_mesh(&target, interior, global.seed)?,
            };
            let meta = meta_for(&config, &[("dtn", &dtn)]);
            if lcurve {
                println!("alpha,misfit,tv_of_trace");
                for k in -4..=0 {
                    let a = 10f64.powi(k);
                    let cfg = crate::eit::RecoverConfig {
                        alpha: a,
                        ..Default::default()
                    };
                    let report = crate::eit::recover_sh(&target, &ghosted, &cfg)?;
                    println!("{a:.1e},{:.6e},{:.6e}", report.final_misfit, trace_tv(&ghosted, &report.sh));
                }
                return Ok(());
            }
            let cfg = crate::eit::RecoverConfig {
                alpha,
                ..Default::default()
            };
            let report = crate::eit::recover_sh(&target, &ghosted, &cfg)?;
            if let Some(p) = out_sh {
                io::write_scalar_csv(&p, &report.sh, &meta)?;
            }
            if let Some(p) = out_qh {
                io::write_edges_csv(&p, &report.qh, &meta)?;
            }
            if let Some(p) = out_svg {
                let q = crate::eit::quadratic_stencil_q(&ghosted, &report.sh)?;
                let tensors: Vec<Tensor2> = q
                    .iter()
                    .map(|t| t.unwrap_or(Tensor2::identity()))
                    .collect();
                let svg = render_svg(&ghosted, &Overlay::CellTensor(&tensors), 800);
                std::fs::write(p, svg).map_err(|e| CliError::Validation(e.to_string()))?;
            }
            println!(
                "recovered potential: final misfit {:.4e} in {:.1}s (converged: {})",
                report.final_misfit, report.wall_seconds, report.converged
            );
            Ok(())
        }
        Command::Plot {
            mesh,
            field,
            tensor,
            out,
        } => {
            let m = load_mesh(&mesh)?;
            let svg = match (&field, &tensor) {
                (Some(p), _) => {
                    let values = io::read_scalar_csv(p)?;
                    if values.len() != m.num_triangles() {
                        return Err(CliError::Validation(format!(
                            "field has {} values, mesh has {} triangles",
                            values.len(),
                            m.num_triangles()
                        )));
                    }
                    render_svg(&m, &Overlay::CellScalar(&values), 800)
                }
                (None, Some(p)) => {
                    let tensors = io::read_tensor_csv(p)?;
                    render_svg(&m, &Overlay::CellTensor(&tensors), 800)
                }
                (None, None) => render_svg(&m, &Overlay::None, 800),
            };
            std::fs::write(&out, svg).map_err(|e| CliError::Validation(e.to_string()))?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn parse_potential(spec: &str) -> Result<SField, CliError> {
    if let Some(rest) = spec.strip_prefix("qx:") {
        // qx:A,qy:B builds the quadratic potential of Q = diag(A, B)
        let parts: Vec<&str> = rest.split(",qy:").collect();
        if parts.len() == 2 {
            let a: f64 = parts[0]
                .parse()
                .map_err(|_| CliError::Validation("bad qx value".into()))?;
            let b: f64 = parts[1]
                .parse()
                .map_err(|_| CliError::Validation("bad qy value".into()))?;
            return Ok(SField::quadratic_for(Tensor2::diag(a, b)));
        }
        return Err(CliError::Validation(
            "expected qx:<num>,qy:<num> for a quadratic potential".into(),
        ));
    }
    Ok(io::read_sfield_raster(Path::new(spec))?)
}

fn trace_tv(ghosted: &Arc<Mesh2D>, sh: &[f64]) -> f64 {
    let Ok(q) = crate::eit::quadratic_stencil_q(ghosted, sh) else {
        return f64::NAN;
    };
    let mut tv = 0.0;
    for (_, e) in ghosted.interior_edges() {
        let (t1, t2) = (e.tris[0].unwrap(), e.tris[1].unwrap());
        if let (Some(a), Some(b)) = (q[t1], q[t2]) {
            let len = (ghosted.vertex(e.b) - ghosted.vertex(e.a)).norm();
            tv += len * (a.trace() - b.trace()).abs();
        }
    }
    tv
}

/// Deviation of the two-step versus direct coarsening across three nested
/// levels, plus the interpolation analogue; exercised by `semigroup-check`.
pub(crate) fn semigroup_deviation(
    base: &Arc<Mesh2D>,
    phantom: &Phantom,
    levels: usize,
) -> Result<f64, CliError> {
    let levels = levels.max(2);
    let (mid, p12) = base.refine(1);
    let mid = Arc::new(mid);
    let (fine, p23) = mid.refine(levels - 2 + 1);
    let fine = Arc::new(fine);
    let p13 = p12.compose(&p23);
    let sigma = phantom.on_mesh(Arc::clone(&fine))?;
    let q3 = crate::homogenize::qh_from_q_all_edges(&fine, &sigma);
    let q2 = crate::homogenize::coarsen_qh_all_edges(&q3, &mid, &p23)?;
    let two_step = crate::homogenize::coarsen_qh(&q2, base, &p12)?;
    let direct = crate::homogenize::coarsen_qh(&q3, base, &p13)?;
    let mut worst = 0.0f64;
    for (id, _) in base.interior_edges() {
        let a = two_step.get_edge(id).unwrap();
        let b = direct.get_edge(id).unwrap();
        worst = worst.max((a - b).abs() / a.abs().max(1.0));
    }
    // interpolation side at shared coarse vertices
    let s = SField::paraboloid();
    let s3 = crate::homogenize::sh_from_s(&fine, &s);
    let s3f = SField::MeshVertex {
        mesh: Arc::clone(&fine),
        values: s3,
    };
    let s2 = crate::homogenize::sh_from_s(&mid, &s3f);
    let s2f = SField::MeshVertex {
        mesh: Arc::clone(&mid),
        values: s2,
    };
    let s1_two = crate::homogenize::sh_from_s(base, &s2f);
    let s1_direct = crate::homogenize::sh_from_s(base, &s3f);
    for v in 0..base.num_vertices() {
        worst = worst.max((s1_two[v] - s1_direct[v]).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> i32 {
        let argv: Vec<String> = std::iter::once("geohom".to_string())
            .chain(args.iter().map(|s| s.to_string()))
            .collect();
        run(&argv)
    }

    #[test]
    fn unknown_flag_exits_one() {
        assert_eq!(run_args(&["solve", "--nonsense"]), 1);
        assert_eq!(run_args(&["no-such-command"]), 1);
    }

    #[test]
    fn plot_produces_deterministic_svg() {
        let dir = std::env::temp_dir().join("geohom_cli_test");
        std::fs::create_dir_all(&dir).unwrap();
        let mesh_path = dir.join("m.json");
        let mesh = crate::mesh::grid_mesh(0.0, 0.0, 1.0, 1.0, 3, 3);
        io::write_mesh_json(&mesh_path, &mesh, &ArtifactMeta::default()).unwrap();
        let out1 = dir.join("a.svg");
        let out2 = dir.join("b.svg");
        assert_eq!(
            run_args(&["plot", "--mesh", mesh_path.to_str().unwrap(), "--out", out1.to_str().unwrap()]),
            0
        );
        assert_eq!(
            run_args(&["plot", "--mesh", mesh_path.to_str().unwrap(), "--out", out2.to_str().unwrap()]),
            0
        );
        assert_eq!(
            std::fs::read(&out1).unwrap(),
            std::fs::read(&out2).unwrap()
        );
    }

    #[test]
    fn semigroup_check_command_passes() {
        let dir = std::env::temp_dir().join("geohom_cli_test");
        std::fs::create_dir_all(&dir).unwrap();
        let mesh_path = dir.join("sg.json");
        let mesh = crate::mesh::grid_mesh(0.0, 0.0, 1.0, 1.0, 2, 2);
        io::write_mesh_json(&mesh_path, &mesh, &ArtifactMeta::default()).unwrap();
        assert_eq!(
            run_args(&[
                "semigroup-check",
                "--mesh",
                mesh_path.to_str().unwrap(),
                "--levels",
                "3",
                "--phantom",
                "laminate"
            ]),
            0
        );
    }

    #[test]
    fn solve_roundtrip_through_files() {
        let dir = std::env::temp_dir().join("geohom_cli_test");
        std::fs::create_dir_all(&dir).unwrap();
        let mesh_path = dir.join("solve.json");
        let mesh = crate::mesh::grid_mesh(0.0, 0.0, 1.0, 1.0, 8, 8);
        io::write_mesh_json(&mesh_path, &mesh, &ArtifactMeta::default()).unwrap();
        let out = dir.join("u.csv");
        assert_eq!(
            run_args(&[
                "solve",
                "--mesh",
                mesh_path.to_str().unwrap(),
                "--out",
                out.to_str().unwrap()
            ]),
            0
        );
        let u = io::read_scalar_csv(&out).unwrap();
        assert_eq!(u.len(), mesh.num_vertices());
        let max = u.iter().cloned().fold(0.0f64, f64::max);
        // Poisson on the unit square peaks near 0.0737
        assert!((max - 0.0737).abs() < 0.01, "max {max}");
    }
}
