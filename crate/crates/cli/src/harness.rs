//! End-to-end experiment orchestration: phantom and reference generation,
//! the method matrix (FBP/TV/TG/NLTV/NLTG), MAP and CM estimation, CSV
//! emission, and the ordering assertions.
//!
//! Every run is namespaced by a hash of its configuration and fully
//! determined by its master seed: per-cell seeds are derived with
//! splitmix64 from `(master, tag)`, jobs write into preallocated slots,
//! and files are emitted in a fixed order, so repeated runs are
//! byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use nltg_core::gauss::PriorCovariance;
use nltg_core::image::{
    add_noise, clip_intensity, generate_phantom, BackgroundWave, NoiseModel, Phantom,
    PhantomKind, Tumor,
};
use nltg_core::map::{solve_map, MapConfig, PriorKind};
use nltg_core::metrics::{psnr, ssim};
use nltg_core::nonlocal::{build_weights, group_l2_sum, local_graph, nl_gradient, PatchKernel, WeightGraph};
use nltg_core::pcn::{run_chain, PcnConfig};
use nltg_core::radon::{apply_mask, fbp, forward, FbpFilter, ScanGeometry, Sinogram};
use nltg_core::Image;

use crate::io;
use crate::CliError;

/// Reconstruction method in the comparison matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Fbp,
    Tv,
    Tg,
    Nltv,
    Nltg,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Fbp, Method::Tv, Method::Tg, Method::Nltv, Method::Nltg];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Fbp => "FBP",
            Method::Tv => "TV",
            Method::Tg => "TG",
            Method::Nltv => "NLTV",
            Method::Nltg => "NLTG",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s.to_ascii_lowercase().as_str() {
            "fbp" => Some(Method::Fbp),
            "tv" => Some(Method::Tv),
            "tg" => Some(Method::Tg),
            "nltv" => Some(Method::Nltv),
            "nltg" => Some(Method::Nltg),
            _ => None,
        }
    }

    fn prior_kind(&self) -> Option<PriorKind> {
        match self {
            Method::Fbp => None,
            Method::Tv => Some(PriorKind::Tv),
            Method::Tg => Some(PriorKind::Tg),
            Method::Nltv => Some(PriorKind::Nltv),
            Method::Nltg => Some(PriorKind::Nltg),
        }
    }

    /// FBP and TV ignore the reference image, so they run once per
    /// sinogram noise level.
    pub fn uses_reference(&self) -> bool {
        !matches!(self, Method::Fbp | Method::Tv)
    }

    fn id(&self) -> u64 {
        match self {
            Method::Fbp => 0,
            Method::Tv => 1,
            Method::Tg => 2,
            Method::Nltv => 3,
            Method::Nltg => 4,
        }
    }
}

/// Full experiment description; see `ExperimentConfig::new` for the
/// defaults, which reproduce the desk-scale comparison matrix.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub size: usize,
    pub n_angles: usize,
    pub detector_extent: f64,
    pub sinogram_noise: Vec<f64>,
    pub reference_noise: Vec<f64>,
    pub reference_angles: usize,
    pub methods: Vec<Method>,
    pub run_map: bool,
    pub run_cm: bool,
    pub cm_samples: u64,
    /// Burn-in steps; `None` scales the sampling count by 1/19.
    pub cm_burnin: Option<u64>,
    pub cm_thin: u64,
    pub beta0: f64,
    pub target_acceptance: f64,
    pub adapt_burnin: bool,
    /// Grid multipliers applied to the per-method base weights.
    pub lambda_grid: Vec<f64>,
    pub lambda_tv: f64,
    pub lambda_tg: f64,
    pub lambda_nltv: f64,
    pub lambda_nltg: f64,
    /// Bregman penalty as a multiple of lambda.
    pub mu_ratio: f64,
    pub outer_iters: usize,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub patch_radius: usize,
    pub patch_a: f64,
    pub search_radius: usize,
    pub k_best: usize,
    pub k_local: usize,
    /// Filtering parameter for weights and covariance; `None` uses each
    /// reference image's generating noise level.
    pub h: Option<f64>,
    /// Covariance diagonal shift; `None` starts at the pattern default
    /// and doubles until the factorization succeeds.
    pub delta_c: Option<f64>,
    pub tumor: Option<Tumor>,
    pub wave: Option<BackgroundWave>,
    pub fbp_filter: FbpFilter,
    pub ref_filter: FbpFilter,
    pub out_dir: PathBuf,
    pub master_seed: u64,
    pub threads: usize,
    pub emit_images: bool,
}

impl ExperimentConfig {
    pub fn new(out_dir: PathBuf) -> Self {
        let size = 128;
        ExperimentConfig {
            size,
            n_angles: 50,
            detector_extent: f64::INFINITY,
            sinogram_noise: vec![5.0, 20.0],
            reference_noise: vec![5.0, 20.0],
            reference_angles: 500,
            methods: Method::ALL.to_vec(),
            run_map: true,
            run_cm: true,
            cm_samples: 100_000,
            cm_burnin: None,
            cm_thin: 1,
            beta0: 0.01,
            target_acceptance: 0.25,
            adapt_burnin: true,
            lambda_grid: vec![0.5, 1.0, 2.0],
            lambda_tv: 40.0,
            lambda_tg: 40.0,
            lambda_nltv: 15.0,
            lambda_nltg: 15.0,
            mu_ratio: 1.0,
            outer_iters: 80,
            cg_tol: 1e-6,
            cg_max_iters: 200,
            patch_radius: 2,
            patch_a: 1.5,
            search_radius: 5,
            k_best: 10,
            k_local: 4,
            h: None,
            delta_c: None,
            tumor: Some(default_tumor(size)),
            wave: Some(BackgroundWave {
                amplitude: 12.0,
                frequency: 3.0,
            }),
            fbp_filter: FbpFilter::Hann,
            ref_filter: FbpFilter::RamLak,
            out_dir,
            master_seed: 7,
            threads: 2,
            emit_images: true,
        }
    }

    /// Canonical key=value dump; hashed for the run directory name.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "size={}", self.size);
        let _ = writeln!(s, "n_angles={}", self.n_angles);
        let _ = writeln!(s, "detector_extent={}", self.detector_extent);
        let _ = writeln!(s, "sinogram_noise={:?}", self.sinogram_noise);
        let _ = writeln!(s, "reference_noise={:?}", self.reference_noise);
        let _ = writeln!(s, "reference_angles={}", self.reference_angles);
        let _ = writeln!(
            s,
            "methods={}",
            self.methods
                .iter()
                .map(|m| m.name())
                .collect::<Vec<_>>()
                .join(",")
        );
        let _ = writeln!(s, "run_map={} run_cm={}", self.run_map, self.run_cm);
        let _ = writeln!(
            s,
            "cm_samples={} cm_burnin={:?} cm_thin={} beta0={} target_acceptance={} adapt={}",
            self.cm_samples,
            self.cm_burnin,
            self.cm_thin,
            self.beta0,
            self.target_acceptance,
            self.adapt_burnin
        );
        let _ = writeln!(
            s,
            "lambda_grid={:?} tv={} tg={} nltv={} nltg={} mu_ratio={}",
            self.lambda_grid,
            self.lambda_tv,
            self.lambda_tg,
            self.lambda_nltv,
            self.lambda_nltg,
            self.mu_ratio
        );
        let _ = writeln!(
            s,
            "outer={} cg_tol={} cg_max={}",
            self.outer_iters, self.cg_tol, self.cg_max_iters
        );
        let _ = writeln!(
            s,
            "patch_radius={} a={} search_radius={} k_best={} k_local={}",
            self.patch_radius, self.patch_a, self.search_radius, self.k_best, self.k_local
        );
        let _ = writeln!(s, "h={:?} delta_c={:?}", self.h, self.delta_c);
        let _ = writeln!(s, "tumor={:?} wave={:?}", self.tumor, self.wave);
        let _ = writeln!(
            s,
            "fbp_filter={:?} ref_filter={:?}",
            self.fbp_filter, self.ref_filter
        );
        let _ = writeln!(s, "master_seed={}", self.master_seed);
        s
    }

    fn lambda_base(&self, method: Method) -> f64 {
        match method {
            Method::Fbp => 0.0,
            Method::Tv => self.lambda_tv,
            Method::Tg => self.lambda_tg,
            Method::Nltv => self.lambda_nltv,
            Method::Nltg => self.lambda_nltg,
        }
    }
}

/// A tumor disc inside the right lung, scaled to the phantom size.
pub fn default_tumor(size: usize) -> Tumor {
    let s = size as f64;
    Tumor {
        center_x: 0.69 * s,
        center_y: 0.48 * s,
        radius: 0.055 * s,
        intensity: 70.0,
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-purpose seed derivation.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    splitmix64(master ^ splitmix64(tag))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// One comparison-matrix entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    /// Method label; CM rows carry a `-CM` suffix.
    pub method: String,
    pub sinogram_noise: f64,
    pub reference_noise: Option<f64>,
    pub psnr: f64,
    pub ssim: f64,
    /// Regularization weight used (best of the grid for MAP, inherited
    /// for CM); zero for FBP.
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug)]
pub struct ReproduceReport {
    pub run_dir: PathBuf,
    pub map_rows: Vec<CellResult>,
    pub cm_rows: Vec<CellResult>,
    pub assertions: Vec<Assertion>,
    pub map_seconds: f64,
    pub cm_seconds: f64,
}

impl ReproduceReport {
    pub fn all_assertions_pass(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }
}

/// Deterministic job pool: results land in slots indexed by job order.
fn run_jobs<T: Send, F>(jobs: Vec<F>, threads: usize) -> Vec<T>
where
    F: FnOnce() -> T + Send,
{
    let n = jobs.len();
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    let queue: Mutex<Vec<(usize, F)>> = Mutex::new(jobs.into_iter().enumerate().rev().collect());
    let counter = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1) {
            scope.spawn(|| loop {
                let job = queue.lock().unwrap().pop();
                match job {
                    Some((idx, f)) => {
                        let out = f();
                        slots.lock().unwrap()[idx] = Some(out);
                        counter.fetch_add(1, Ordering::Relaxed);
                    }
                    None => break,
                }
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|s| s.expect("job completed"))
        .collect()
}

struct ReferenceBundle {
    noise: f64,
    image: Image,
    graph: WeightGraph,
    covariance: PriorCovariance,
    delta_c_used: f64,
    h_used: f64,
}

/// Builds the covariance, doubling `delta_c` until the factorization
/// succeeds when no explicit shift is configured.
fn build_covariance_escalating(
    u_ref: &Image,
    h: f64,
    graph: &WeightGraph,
    configured: Option<f64>,
) -> Result<(PriorCovariance, f64), CliError> {
    if let Some(d) = configured {
        let c = PriorCovariance::build(u_ref.as_slice(), h, graph, d)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        return Ok((c, d));
    }
    let mut d = PriorCovariance::default_delta_c(graph);
    for _ in 0..12 {
        match PriorCovariance::build(u_ref.as_slice(), h, graph, d) {
            Ok(c) => return Ok((c, d)),
            Err(nltg_core::Error::FactorizationFailed { .. }) => {
                eprintln!("covariance: delta_c {d} too small, doubling");
                d *= 2.0;
            }
            Err(e) => return Err(CliError::Numerical(e.to_string())),
        }
    }
    Err(CliError::Numerical(format!(
        "covariance factorization still failing at delta_c {d}"
    )))
}

fn float_label(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e9 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Runs the full experiment matrix; returns the report after writing all
/// artifacts under a config-hash-namespaced directory.
pub fn run_reproduce(cfg: &ExperimentConfig) -> Result<ReproduceReport, CliError> {
    let canonical = cfg.canonical();
    let hash = fnv1a(canonical.as_bytes());
    let run_dir = cfg.out_dir.join(format!("run-{hash:016x}"));
    std::fs::create_dir_all(&run_dir)
        .map_err(|e| CliError::Format(format!("{}: {e}", run_dir.display())))?;
    io::write_text(&run_dir.join("config.txt"), &canonical)?;
    eprintln!("run directory: {}", run_dir.display());

    // Ground truth and original (tumor-free, wave-free) phantoms.
    let base = Phantom {
        kind: PhantomKind::XcatLike,
        size: cfg.size,
        tumor: None,
        background_wave: None,
    };
    let u_ori = generate_phantom(&base);
    let u_gt = generate_phantom(&Phantom {
        tumor: cfg.tumor,
        background_wave: cfg.wave,
        ..base
    });
    if cfg.emit_images {
        io::write_image(&run_dir.join("ori.img"), &u_ori)?;
        io::write_image(&run_dir.join("gt.img"), &u_gt)?;
        io::write_pgm(&run_dir.join("gt.pgm"), &u_gt)?;
    }

    // References: FBP from many projections of the tumor-free phantom.
    // Skipped entirely when no requested method consumes them.
    let needs_references = cfg.methods.iter().any(|m| m.uses_reference())
        || (cfg.run_cm && cfg.methods.iter().any(|m| matches!(m, Method::Tg | Method::Nltg)));
    let ref_geometry = ScanGeometry::standard(cfg.reference_angles, cfg.size);
    let mut references = Vec::new();
    for (ref_idx, &noise) in cfg.reference_noise.iter().enumerate() {
        if !needs_references {
            break;
        }
        let mut y_ref = forward(&u_ori, &ref_geometry)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        y_ref.data = add_noise(
            &y_ref.data,
            &NoiseModel {
                sigma: noise,
                seed: derive_seed(cfg.master_seed, 2000 + ref_idx as u64),
            },
        );
        let u_ref = clip_intensity(
            &fbp(&y_ref, cfg.ref_filter).map_err(|e| CliError::Numerical(e.to_string()))?,
        );
        let h = cfg.h.unwrap_or(noise);
        eprintln!("reference {ref_idx} (noise {noise}): building weights (h = {h})");
        let graph = build_weights(
            &u_ref,
            &PatchKernel {
                patch_radius: cfg.patch_radius,
                a: cfg.patch_a,
                h,
            },
            cfg.search_radius,
            cfg.k_best,
            cfg.k_local,
        )
        .map_err(|e| CliError::Usage(e.to_string()))?;
        let (covariance, delta_used) =
            build_covariance_escalating(&u_ref, h, &graph, cfg.delta_c)?;
        eprintln!(
            "reference {ref_idx}: covariance ready (delta_c {delta_used}, bandwidth {})",
            covariance.bandwidth()
        );
        if cfg.emit_images {
            io::write_image(&run_dir.join(format!("ref{}.img", ref_idx + 1)), &u_ref)?;
            io::write_pgm(&run_dir.join(format!("ref{}.pgm", ref_idx + 1)), &u_ref)?;
        }
        references.push(ReferenceBundle {
            noise,
            image: u_ref,
            graph,
            covariance,
            delta_c_used: delta_used,
            h_used: h,
        });
    }

    if needs_references && references.is_empty() {
        return Err(CliError::Usage(
            "reference-based methods need at least one reference noise level".into(),
        ));
    }

    // Limited-projection data.
    let geometry = ScanGeometry {
        detector_extent: cfg.detector_extent,
        ..ScanGeometry::standard(cfg.n_angles, cfg.size)
    };
    let mut sinograms = Vec::new();
    for (noise_idx, &noise) in cfg.sinogram_noise.iter().enumerate() {
        let clean = forward(&u_gt, &geometry).map_err(|e| CliError::Numerical(e.to_string()))?;
        let mut y = clean.clone();
        y.data = add_noise(
            &y.data,
            &NoiseModel {
                sigma: noise,
                seed: derive_seed(cfg.master_seed, 1000 + noise_idx as u64),
            },
        );
        let y = apply_mask(&y, cfg.detector_extent);
        io::write_sinogram(&run_dir.join(format!("sino_n{}.sin", float_label(noise))), &y)?;
        sinograms.push((noise, y));
    }

    // MAP phase. CM needs the per-cell best lambda, so the MAP matrix for
    // TG/NLTG always runs when CM is requested.
    struct MapJob {
        method: Method,
        noise_idx: usize,
        ref_idx: Option<usize>,
    }
    let mut map_jobs = Vec::new();
    for &method in &cfg.methods {
        let needed = cfg.run_map || (cfg.run_cm && matches!(method, Method::Tg | Method::Nltg));
        if !needed {
            continue;
        }
        for noise_idx in 0..cfg.sinogram_noise.len() {
            if method.uses_reference() {
                for ref_idx in 0..references.len() {
                    map_jobs.push(MapJob {
                        method,
                        noise_idx,
                        ref_idx: Some(ref_idx),
                    });
                }
            } else {
                map_jobs.push(MapJob {
                    method,
                    noise_idx,
                    ref_idx: None,
                });
            }
        }
    }

    let t_map = Instant::now();
    struct MapOutcome {
        method: Method,
        noise_idx: usize,
        ref_idx: Option<usize>,
        lambda: f64,
        image: Image,
        psnr: f64,
        ssim: f64,
        trace_csv: String,
    }
    let map_outcomes: Vec<Result<MapOutcome, CliError>> = run_jobs(
        map_jobs
            .iter()
            .map(|job| {
                let cfg = &*cfg;
                let u_gt = &u_gt;
                let references = &references;
                let sinograms = &sinograms;
                move || -> Result<MapOutcome, CliError> {
                    let (noise, y) = &sinograms[job.noise_idx];
                    if let Method::Fbp = job.method {
                        let rec = clip_intensity(
                            &fbp(y, cfg.fbp_filter)
                                .map_err(|e| CliError::Numerical(e.to_string()))?,
                        );
                        let p = psnr(u_gt, &rec, 255.0)
                            .map_err(|e| CliError::Numerical(e.to_string()))?;
                        let s =
                            ssim(u_gt, &rec).map_err(|e| CliError::Numerical(e.to_string()))?;
                        return Ok(MapOutcome {
                            method: job.method,
                            noise_idx: job.noise_idx,
                            ref_idx: None,
                            lambda: 0.0,
                            image: rec,
                            psnr: p,
                            ssim: s,
                            trace_csv: String::new(),
                        });
                    }
                    let prior = job.method.prior_kind().expect("solver method");
                    let bundle = job.ref_idx.map(|r| &references[r]);
                    // TV carries no reference: the solver swaps in the local
                    // grid internally (the graph argument is unused) and the
                    // chain starts from zero.
                    let tv_placeholder;
                    let (graph, cov, init): (&WeightGraph, Option<&PriorCovariance>, Image) =
                        match bundle {
                            Some(b) => (
                                &b.graph,
                                prior.uses_covariance().then_some(&b.covariance),
                                b.image.clone(),
                            ),
                            None => {
                                tv_placeholder = local_graph(cfg.size, cfg.size);
                                (&tv_placeholder, None, Image::zeros(cfg.size, cfg.size))
                            }
                        };
                    let base = cfg.lambda_base(job.method);
                    let mut best: Option<(f64, f64, f64, nltg_core::map::MapSolution)> = None;
                    for &mult in &cfg.lambda_grid {
                        let lambda = base * mult;
                        let mut mc = MapConfig::new(prior);
                        mc.lambda = lambda;
                        mc.mu = cfg.mu_ratio * lambda.max(1e-9);
                        mc.outer_iters = cfg.outer_iters;
                        mc.cg_tol = cfg.cg_tol;
                        mc.cg_max_iters = cfg.cg_max_iters;
                        mc.sigma = *noise;
                        let sol = solve_map(y, &init, &mc, graph, cov)
                            .map_err(|e| CliError::Numerical(e.to_string()))?;
                        let rec = clip_intensity(&sol.image);
                        let p = psnr(u_gt, &rec, 255.0)
                            .map_err(|e| CliError::Numerical(e.to_string()))?;
                        let better = match &best {
                            Some((_, bp, _, _)) => p > *bp,
                            None => true,
                        };
                        if better {
                            best = Some((lambda, p, 0.0, sol));
                        }
                    }
                    let (lambda, p, _, sol) = best.expect("non-empty lambda grid");
                    let rec = clip_intensity(&sol.image);
                    let s = ssim(u_gt, &rec).map_err(|e| CliError::Numerical(e.to_string()))?;
                    let mut trace_csv =
                        String::from("iteration,data_fidelity,regularizer,prior_quadratic,total\n");
                    for row in &sol.trace {
                        let _ = writeln!(
                            trace_csv,
                            "{},{},{},{},{}",
                            row.iteration,
                            row.data_fidelity,
                            row.regularizer,
                            row.prior_quadratic,
                            row.total
                        );
                    }
                    Ok(MapOutcome {
                        method: job.method,
                        noise_idx: job.noise_idx,
                        ref_idx: job.ref_idx,
                        lambda,
                        image: rec,
                        psnr: p,
                        ssim: s,
                        trace_csv,
                    })
                }
            })
            .collect(),
        cfg.threads,
    );
    let map_seconds = t_map.elapsed().as_secs_f64();

    let mut map_rows = Vec::new();
    let mut best_lambda = std::collections::BTreeMap::new();
    for outcome in map_outcomes {
        let o = outcome?;
        let noise = cfg.sinogram_noise[o.noise_idx];
        let ref_noise = o.ref_idx.map(|r| references[r].noise);
        let suffix = match o.ref_idx {
            Some(r) => format!("n{}_r{}", float_label(noise), float_label(references[r].noise)),
            None => format!("n{}", float_label(noise)),
        };
        if cfg.emit_images {
            let stem = format!("rec_{}_{}", o.method.name().to_ascii_lowercase(), suffix);
            io::write_image(&run_dir.join(format!("{stem}.img")), &o.image)?;
            io::write_pgm(&run_dir.join(format!("{stem}.pgm")), &o.image)?;
            if !o.trace_csv.is_empty() {
                io::write_text(&run_dir.join(format!("trace_{}_{suffix}.csv",
                    o.method.name().to_ascii_lowercase())), &o.trace_csv)?;
            }
        }
        best_lambda.insert((o.method.id(), o.noise_idx, o.ref_idx), o.lambda);
        if cfg.run_map {
            map_rows.push(CellResult {
                method: o.method.name().to_string(),
                sinogram_noise: noise,
                reference_noise: ref_noise,
                psnr: o.psnr,
                ssim: o.ssim,
                lambda: o.lambda,
            });
        }
    }
    if cfg.run_map {
        eprintln!("MAP matrix finished in {map_seconds:.1} s");
    }

    // CM phase.
    let t_cm = Instant::now();
    let mut cm_rows = Vec::new();
    if cfg.run_cm {
        struct CmJob {
            method: Method,
            noise_idx: usize,
            ref_idx: usize,
        }
        let mut cm_jobs = Vec::new();
        for &method in &cfg.methods {
            if !matches!(method, Method::Tg | Method::Nltg) {
                continue;
            }
            for noise_idx in 0..cfg.sinogram_noise.len() {
                for ref_idx in 0..references.len() {
                    cm_jobs.push(CmJob {
                        method,
                        noise_idx,
                        ref_idx,
                    });
                }
            }
        }
        struct CmOutcome {
            method: Method,
            noise_idx: usize,
            ref_idx: usize,
            lambda: f64,
            cm: Image,
            ci: Image,
            psnr: f64,
            ssim: f64,
            diagnostics_csv: String,
        }
        let cm_outcomes: Vec<Result<CmOutcome, CliError>> = run_jobs(
            cm_jobs
                .iter()
                .map(|job| {
                    let cfg = &*cfg;
                    let u_gt = &u_gt;
                    let references = &references;
                    let sinograms = &sinograms;
                    let best_lambda = &best_lambda;
                    move || -> Result<CmOutcome, CliError> {
                        let (noise, y) = &sinograms[job.noise_idx];
                        let bundle = &references[job.ref_idx];
                        let lambda = *best_lambda
                            .get(&(job.method.id(), job.noise_idx, Some(job.ref_idx)))
                            .ok_or_else(|| {
                                CliError::Usage(
                                    "CM requires the MAP phase for its lambda".into(),
                                )
                            })?;
                        let prior = job.method.prior_kind().expect("cm method");
                        let local;
                        let graph: &WeightGraph = if prior.uses_nonlocal_graph() {
                            &bundle.graph
                        } else {
                            local = local_graph(cfg.size, cfg.size);
                            &local
                        };
                        let sigma = *noise;
                        let side = cfg.size;
                        let potential = |u: &[f64]| -> f64 {
                            let img = Image::from_data(side, side, u.to_vec()).expect("size");
                            let phi = nltg_core::map::data_fidelity(&img, y, sigma)
                                .expect("finite fidelity");
                            let grad = nl_gradient(u, graph).expect("pattern");
                            let j = group_l2_sum(&grad, graph).expect("pattern");
                            phi + lambda * j
                        };
                        let mut pc = PcnConfig::new(derive_seed(
                            cfg.master_seed,
                            3000 + job.method.id() * 100
                                + job.noise_idx as u64 * 10
                                + job.ref_idx as u64,
                        ));
                        pc.beta = cfg.beta0;
                        pc.n_samples = cfg.cm_samples;
                        pc.n_burnin = cfg.cm_burnin.unwrap_or(cfg.cm_samples / 19);
                        pc.thin = cfg.cm_thin;
                        pc.target_acceptance = cfg.target_acceptance;
                        pc.adapt_burnin = cfg.adapt_burnin;
                        let (stats, diag) =
                            run_chain(potential, &pc, &bundle.covariance, &bundle.image)
                                .map_err(|e| CliError::Numerical(e.to_string()))?;
                        let cm = clip_intensity(
                            &stats.cm_image().map_err(|e| CliError::Numerical(e.to_string()))?,
                        );
                        let ci = stats
                            .ci_map(0.95)
                            .map_err(|e| CliError::Numerical(e.to_string()))?;
                        let p = psnr(u_gt, &cm, 255.0)
                            .map_err(|e| CliError::Numerical(e.to_string()))?;
                        let s = ssim(u_gt, &cm).map_err(|e| CliError::Numerical(e.to_string()))?;
                        let mut diagnostics_csv =
                            String::from("step,window_acceptance,potential,beta\n");
                        for row in &diag.rows {
                            let _ = writeln!(
                                diagnostics_csv,
                                "{},{},{},{}",
                                row.step, row.window_acceptance, row.potential, row.beta
                            );
                        }
                        let _ = writeln!(
                            diagnostics_csv,
                            "# final_beta={} acceptance_rate={}",
                            diag.final_beta,
                            stats.acceptance_rate()
                        );
                        Ok(CmOutcome {
                            method: job.method,
                            noise_idx: job.noise_idx,
                            ref_idx: job.ref_idx,
                            lambda,
                            cm,
                            ci,
                            psnr: p,
                            ssim: s,
                            diagnostics_csv,
                        })
                    }
                })
                .collect(),
            cfg.threads,
        );
        for outcome in cm_outcomes {
            let o = outcome?;
            let noise = cfg.sinogram_noise[o.noise_idx];
            let rnoise = references[o.ref_idx].noise;
            let suffix = format!("n{}_r{}", float_label(noise), float_label(rnoise));
            if cfg.emit_images {
                let stem = format!("cm_{}_{suffix}", o.method.name().to_ascii_lowercase());
                io::write_image(&run_dir.join(format!("{stem}.img")), &o.cm)?;
                io::write_pgm(&run_dir.join(format!("{stem}.pgm")), &o.cm)?;
                let ci_stem = format!("ci_{}_{suffix}", o.method.name().to_ascii_lowercase());
                io::write_image(&run_dir.join(format!("{ci_stem}.img")), &o.ci)?;
                io::write_pgm(&run_dir.join(format!("{ci_stem}.pgm")), &o.ci)?;
                io::write_text(
                    &run_dir.join(format!(
                        "diag_{}_{suffix}.csv",
                        o.method.name().to_ascii_lowercase()
                    )),
                    &o.diagnostics_csv,
                )?;
            }
            cm_rows.push(CellResult {
                method: format!("{}-CM", o.method.name()),
                sinogram_noise: noise,
                reference_noise: Some(rnoise),
                psnr: o.psnr,
                ssim: o.ssim,
                lambda: o.lambda,
            });
        }
        eprintln!("CM matrix finished in {:.1} s", t_cm.elapsed().as_secs_f64());
    }
    let cm_seconds = t_cm.elapsed().as_secs_f64();

    // results.csv
    let mut results = String::from("method,sinogram_noise,ref_noise,psnr,ssim\n");
    for row in map_rows.iter().chain(cm_rows.iter()) {
        let _ = writeln!(
            results,
            "{},{},{},{},{}",
            row.method,
            row.sinogram_noise,
            row.reference_noise
                .map(|r| r.to_string())
                .unwrap_or_else(|| "none".into()),
            row.psnr,
            row.ssim
        );
    }
    io::write_text(&run_dir.join("results.csv"), &results)?;

    // Table-layout CSVs (methods as columns).
    if cfg.run_map {
        for (table, field) in [(1, "psnr"), (2, "ssim")] {
            let mut s = String::from("sinogram_noise,reference,FBP,TV,TG,NLTV,NLTG\n");
            for &noise in &cfg.sinogram_noise {
                for bundle in &references {
                    let mut cells = Vec::new();
                    for method in Method::ALL {
                        let row = map_rows.iter().find(|r| {
                            r.method == method.name()
                                && r.sinogram_noise == noise
                                && (r.reference_noise == Some(bundle.noise)
                                    || (!method.uses_reference() && r.reference_noise.is_none()))
                        });
                        cells.push(match row {
                            Some(r) => {
                                let v = if field == "psnr" { r.psnr } else { r.ssim };
                                format!("{v}")
                            }
                            None => String::from("-"),
                        });
                    }
                    let _ = writeln!(
                        s,
                        "{},{},{}",
                        noise,
                        bundle.noise,
                        cells.join(",")
                    );
                }
            }
            io::write_text(&run_dir.join(format!("table{table}.csv")), &s)?;
        }
    }
    if cfg.run_cm {
        let mut s = String::from("sinogram_noise,reference,NLTG_psnr,TG_psnr,NLTG_ssim,TG_ssim\n");
        for &noise in &cfg.sinogram_noise {
            for bundle in &references {
                let find = |name: &str| {
                    cm_rows.iter().find(|r| {
                        r.method == name
                            && r.sinogram_noise == noise
                            && r.reference_noise == Some(bundle.noise)
                    })
                };
                let nltg = find("NLTG-CM");
                let tg = find("TG-CM");
                let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "-".into());
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    noise,
                    bundle.noise,
                    fmt(nltg.map(|r| r.psnr)),
                    fmt(tg.map(|r| r.psnr)),
                    fmt(nltg.map(|r| r.ssim)),
                    fmt(tg.map(|r| r.ssim)),
                );
            }
        }
        io::write_text(&run_dir.join("table3.csv"), &s)?;
    }

    // Resolved data-dependent parameters, for the record.
    let mut resolved = String::new();
    for (i, b) in references.iter().enumerate() {
        let _ = writeln!(
            resolved,
            "reference{}: noise={} h={} delta_c={}",
            i + 1,
            b.noise,
            b.h_used,
            b.delta_c_used
        );
    }
    io::write_text(&run_dir.join("resolved.txt"), &resolved)?;

    // Ordering assertions.
    let assertions = evaluate_assertions(cfg, &references, &map_rows, &cm_rows);
    let mut atext = String::new();
    for a in &assertions {
        let _ = writeln!(
            atext,
            "{}: {} ({})",
            a.name,
            if a.passed { "PASS" } else { "FAIL" },
            a.detail
        );
    }
    io::write_text(&run_dir.join("assertions.txt"), &atext)?;
    print!("{atext}");

    Ok(ReproduceReport {
        run_dir,
        map_rows,
        cm_rows,
        assertions,
        map_seconds,
        cm_seconds,
    })
}

fn evaluate_assertions(
    cfg: &ExperimentConfig,
    references: &[ReferenceBundle],
    map_rows: &[CellResult],
    cm_rows: &[CellResult],
) -> Vec<Assertion> {
    let mut out = Vec::new();
    let has = |m: Method| cfg.methods.contains(&m);
    let map_cell = |name: &str, noise: f64, rnoise: Option<f64>| {
        map_rows
            .iter()
            .find(|r| {
                r.method == name
                    && r.sinogram_noise == noise
                    && (r.reference_noise == rnoise || r.reference_noise.is_none())
            })
            .cloned()
    };
    let cm_cell = |name: &str, noise: f64, rnoise: f64| {
        cm_rows
            .iter()
            .find(|r| {
                r.method == name && r.sinogram_noise == noise && r.reference_noise == Some(rnoise)
            })
            .cloned()
    };
    if cfg.run_map && has(Method::Nltg) && has(Method::Nltv) && has(Method::Tg) {
        for &noise in &cfg.sinogram_noise {
            for bundle in references {
                let cells: Vec<_> = ["NLTG", "NLTV", "TG", "TV", "FBP"]
                    .iter()
                    .map(|m| map_cell(m, noise, Some(bundle.noise)))
                    .collect();
                if let [Some(nltg), Some(nltv), Some(tg), Some(tv), Some(fbp_row)] =
                    &cells[..]
                {
                    let ordered = nltg.psnr >= nltv.psnr + 0.2
                        && nltv.psnr >= tg.psnr + 0.2
                        && tg.psnr > tv.psnr
                        && tv.psnr > fbp_row.psnr;
                    out.push(Assertion {
                        name: format!(
                            "map-ordering noise {} ref {}",
                            noise, bundle.noise
                        ),
                        passed: ordered,
                        detail: format!(
                            "NLTG {:.2} NLTV {:.2} TG {:.2} TV {:.2} FBP {:.2}",
                            nltg.psnr, nltv.psnr, tg.psnr, tv.psnr, fbp_row.psnr
                        ),
                    });
                }
            }
        }
    }
    if cfg.run_cm && has(Method::Nltg) {
        for &noise in &cfg.sinogram_noise {
            for bundle in references {
                if let (Some(map_row), Some(cm_row)) = (
                    map_cell("NLTG", noise, Some(bundle.noise)),
                    cm_cell("NLTG-CM", noise, bundle.noise),
                ) {
                    out.push(Assertion {
                        name: format!("map-ssim>=cm-ssim noise {} ref {}", noise, bundle.noise),
                        passed: map_row.ssim >= cm_row.ssim,
                        detail: format!("MAP {:.4} CM {:.4}", map_row.ssim, cm_row.ssim),
                    });
                }
                if let (Some(nltg_cm), Some(tg_cm)) = (
                    cm_cell("NLTG-CM", noise, bundle.noise),
                    cm_cell("TG-CM", noise, bundle.noise),
                ) {
                    out.push(Assertion {
                        name: format!("nltg-cm>tg-cm noise {} ref {}", noise, bundle.noise),
                        passed: nltg_cm.psnr > tg_cm.psnr,
                        detail: format!("NLTG-CM {:.2} TG-CM {:.2}", nltg_cm.psnr, tg_cm.psnr),
                    });
                }
            }
        }
    }
    out
}

/// Convenience used by subcommands: read a sinogram with its image side.
pub fn load_sinogram(path: &Path, size: usize) -> Result<Sinogram, CliError> {
    io::read_sinogram(path, size)
}
