//! MAP estimation by split Bregman: minimize
//! `Phi(u) + lambda * J(u) + 0.5 * u' C0^{-1} u` with
//! `Phi(u) = ||mask (A u - y)||^2 / (2 sigma^2)` and `J` the per-pixel
//! l2-grouped seminorm of the nonlocal gradient.
//!
//! Each outer round solves the quadratic u-subproblem
//! `(A' A / sigma^2 - mu lap + C0^{-1}) u = A' y / sigma^2 + mu div(b - d)`
//! with warm-started conjugate gradients (all operators applied
//! matrix-free), shrinks `grad u + b` groupwise with threshold
//! `lambda / mu`, and updates the Bregman multiplier.
//!
//! One solver covers four configurations: `Nltg` (nonlocal graph +
//! Gaussian term), `Nltv` (nonlocal graph only), `Tg` (local 4-neighbor
//! graph + Gaussian term), and `Tv` (local graph only).

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gauss::PriorCovariance;
use crate::image::Image;
use crate::math;
use crate::nonlocal::{
    group_l2_sum, local_graph, nl_divergence, nl_gradient, nl_laplacian, EdgeField, WeightGraph,
};
use crate::radon::{adjoint, forward, Sinogram};

/// Which regularization configuration the solver runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    Nltg,
    Nltv,
    Tg,
    Tv,
}

impl PriorKind {
    /// True when the Gaussian quadratic term is part of the objective.
    pub fn uses_covariance(&self) -> bool {
        matches!(self, PriorKind::Nltg | PriorKind::Tg)
    }

    /// True when the seminorm runs on the nonlocal similarity graph
    /// rather than the 4-neighbor grid.
    pub fn uses_nonlocal_graph(&self) -> bool {
        matches!(self, PriorKind::Nltg | PriorKind::Nltv)
    }
}

/// Solver configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapConfig {
    /// Regularization weight on the seminorm; nonnegative.
    pub lambda: f64,
    /// Bregman penalty; positive.
    pub mu: f64,
    pub outer_iters: usize,
    /// Relative residual target of the inner CG solve.
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub prior: PriorKind,
    /// Noise standard deviation in the data fidelity.
    pub sigma: f64,
}

impl MapConfig {
    pub fn new(prior: PriorKind) -> Self {
        MapConfig {
            lambda: 1.0,
            mu: 1.0,
            outer_iters: 80,
            cg_tol: 1e-8,
            cg_max_iters: 200,
            prior,
            sigma: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(Error::InvalidParameter {
                name: "mu",
                reason: "Bregman penalty must be positive",
            });
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: "regularization weight must be nonnegative",
            });
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidParameter {
                name: "sigma",
                reason: "noise level must be positive",
            });
        }
        if self.outer_iters == 0 {
            return Err(Error::InvalidParameter {
                name: "outer_iters",
                reason: "at least one outer iteration is required",
            });
        }
        Ok(())
    }
}

/// Objective breakdown of one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    /// `Phi(u)`.
    pub data_fidelity: f64,
    /// `lambda * J(u)` at solver scale.
    pub regularizer: f64,
    /// `0.5 u' C0^{-1} u`, zero for priors without the Gaussian term.
    pub prior_quadratic: f64,
    pub total: f64,
    /// `||grad u - d||` after the shrink step.
    pub feasibility_gap: f64,
}

/// Result of a MAP solve: the (unclipped) image and per-iteration trace.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSolution {
    pub image: Image,
    pub trace: Vec<TraceRow>,
    /// Total inner CG iterations across all outer rounds.
    pub cg_iterations: usize,
    /// Smallest curvature `p' M p / p' p` seen by CG; positive for an SPD
    /// system.
    pub min_curvature: f64,
}

/// Data fidelity `||mask (A u - y)||^2 / (2 sigma^2)`.
pub fn data_fidelity(u: &Image, y: &Sinogram, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter {
            name: "sigma",
            reason: "noise level must be positive",
        });
    }
    let au = forward(u, &y.geometry)?;
    let mut acc = 0.0;
    for i in 0..au.data.len() {
        if y.mask[i] {
            let r = au.data[i] - y.data[i];
            acc += r * r;
        }
    }
    Ok(acc / (2.0 * sigma * sigma))
}

/// Groupwise soft threshold: for each pixel, the l2 norm of its edge
/// values is shrunk by `t` (groups at or below `t` collapse to zero, with
/// the convention 0/0 = 0). This is the exact prox of
/// `t * sum_i ||d_i||_2`.
pub fn shrink(p: &EdgeField, graph: &WeightGraph, t: f64) -> Result<EdgeField> {
    if p.values.len() != graph.n_edges() {
        return Err(Error::PatternMismatch);
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter {
            name: "threshold",
            reason: "shrink threshold must be nonnegative",
        });
    }
    let mut out = p.clone();
    for i in 0..graph.n_pixels() {
        let range = graph.row_range(i);
        let norm = math::sqrt(p.values[range.clone()].iter().map(|v| v * v).sum::<f64>());
        let scale = if norm > t { (norm - t) / norm } else { 0.0 };
        for e in range {
            out.values[e] = p.values[e] * scale;
        }
    }
    Ok(out)
}

/// The SPD normal operator of the u-subproblem, applied matrix-free.
struct NormalOperator<'a> {
    y_template: &'a Sinogram,
    graph: &'a WeightGraph,
    prior_cov: Option<&'a PriorCovariance>,
    mu: f64,
    inv_sigma2: f64,
    side: usize,
}

impl NormalOperator<'_> {
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let img = Image::from_data(self.side, self.side, v.to_vec())?;
        let av = forward(&img, &self.y_template.geometry)?;
        let mut out = adjoint(&av).into_data();
        for o in out.iter_mut() {
            *o *= self.inv_sigma2;
        }
        let lap = nl_laplacian(v, self.graph)?;
        for (o, l) in out.iter_mut().zip(&lap) {
            *o -= self.mu * l;
        }
        if let Some(c) = self.prior_cov {
            let p = c.apply_precision(v)?;
            for (o, q) in out.iter_mut().zip(&p) {
                *o += q;
            }
        }
        Ok(out)
    }
}

struct CgOutcome {
    iterations: usize,
    min_curvature: f64,
}

/// Warm-started conjugate gradients on the normal operator, stopping at
/// relative residual `tol` against `||rhs||`.
fn conjugate_gradient(
    op: &NormalOperator<'_>,
    rhs: &[f64],
    x: &mut Vec<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<CgOutcome> {
    let rhs_norm = math::sqrt(dot(rhs, rhs));
    if rhs_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgOutcome {
            iterations: 0,
            min_curvature: f64::INFINITY,
        });
    }
    let mx = op.apply(x)?;
    let mut r: Vec<f64> = rhs.iter().zip(&mx).map(|(b, m)| b - m).collect();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let mut min_curvature = f64::INFINITY;
    let mut iterations = 0usize;
    while iterations < max_iters && math::sqrt(rs) > tol * rhs_norm {
        let mp = op.apply(&p)?;
        let pmp = dot(&p, &mp);
        let pp = dot(&p, &p);
        if !pmp.is_finite() || pmp <= 0.0 {
            return Err(Error::CgDiverged {
                iteration: iterations,
            });
        }
        min_curvature = min_curvature.min(pmp / pp);
        let alpha = rs / pmp;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * mp[i];
        }
        let rs_new = dot(&r, &r);
        if !rs_new.is_finite() {
            return Err(Error::CgDiverged {
                iteration: iterations,
            });
        }
        let beta = rs_new / rs;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
        iterations += 1;
    }
    Ok(CgOutcome {
        iterations,
        min_curvature,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Runs split Bregman from `u0 = u_ref`, `b0 = d0 = 0`.
///
/// `graph` is the nonlocal similarity graph; the `Tv`/`Tg` configurations
/// replace it internally with the unit-weight 4-neighbor grid. Priors with
/// a Gaussian term require `prior_cov`. Returns the final iterate
/// (unclipped) with the objective trace.
pub fn solve_map(
    y: &Sinogram,
    u_ref: &Image,
    cfg: &MapConfig,
    graph: &WeightGraph,
    prior_cov: Option<&PriorCovariance>,
) -> Result<MapSolution> {
    cfg.validate()?;
    let side = y.geometry.image_side;
    if u_ref.width() != side || u_ref.height() != side {
        return Err(Error::GeometryMismatch {
            image_side: u_ref.width().max(u_ref.height()),
            expected: side,
        });
    }
    let local;
    let active_graph = if cfg.prior.uses_nonlocal_graph() {
        if graph.n_pixels() != side * side {
            return Err(Error::SizeMismatch {
                what: "weight graph",
                expected: side * side,
                actual: graph.n_pixels(),
            });
        }
        graph
    } else {
        local = local_graph(side, side);
        &local
    };
    let cov = if cfg.prior.uses_covariance() {
        let c = prior_cov.ok_or(Error::InvalidParameter {
            name: "prior_cov",
            reason: "this prior requires the Gaussian covariance",
        })?;
        if c.n_pixels() != side * side {
            return Err(Error::SizeMismatch {
                what: "prior covariance",
                expected: side * side,
                actual: c.n_pixels(),
            });
        }
        Some(c)
    } else {
        None
    };

    let op = NormalOperator {
        y_template: y,
        graph: active_graph,
        prior_cov: cov,
        mu: cfg.mu,
        inv_sigma2: 1.0 / (cfg.sigma * cfg.sigma),
        side,
    };

    // Constant part of the right-hand side: A' y / sigma^2.
    let mut rhs_data = adjoint(y).into_data();
    for v in rhs_data.iter_mut() {
        *v *= op.inv_sigma2;
    }

    let mut u = u_ref.as_slice().to_vec();
    let mut d = EdgeField::zeros(active_graph);
    let mut b = EdgeField::zeros(active_graph);
    let mut trace = Vec::with_capacity(cfg.outer_iters);
    let mut cg_total = 0usize;
    let mut min_curvature = f64::INFINITY;
    let threshold = cfg.lambda / cfg.mu;

    for k in 0..cfg.outer_iters {
        // rhs = A' y / sigma^2 + mu div(b - d)
        let mut bd = b.clone();
        for (v, w) in bd.values.iter_mut().zip(&d.values) {
            *v -= w;
        }
        let div_bd = nl_divergence(&bd, active_graph)?;
        let rhs: Vec<f64> = rhs_data
            .iter()
            .zip(&div_bd)
            .map(|(a, g)| a + cfg.mu * g)
            .collect();

        let outcome = conjugate_gradient(&op, &rhs, &mut u, cfg.cg_tol, cfg.cg_max_iters)?;
        cg_total += outcome.iterations;
        min_curvature = min_curvature.min(outcome.min_curvature);

        let grad = nl_gradient(&u, active_graph)?;
        let mut gb = grad.clone();
        for (v, w) in gb.values.iter_mut().zip(&b.values) {
            *v += w;
        }
        d = shrink(&gb, active_graph, threshold)?;
        // b = b + grad u - d  (gb already holds b + grad u)
        for (v, w) in gb.values.iter_mut().zip(&d.values) {
            *v -= w;
        }
        b = gb;

        let img = Image::from_data(side, side, u.clone())?;
        let phi = data_fidelity(&img, y, cfg.sigma)?;
        let reg = cfg.lambda * group_l2_sum(&grad, active_graph)?;
        let quad = match cov {
            Some(c) => c.prior_quadratic(&u)?,
            None => 0.0,
        };
        let gap = math::sqrt(
            grad.values
                .iter()
                .zip(&d.values)
                .map(|(g, dd)| (g - dd) * (g - dd))
                .sum::<f64>(),
        );
        trace.push(TraceRow {
            iteration: k + 1,
            data_fidelity: phi,
            regularizer: reg,
            prior_quadratic: quad,
            total: phi + reg + quad,
            feasibility_gap: gap,
        });
    }

    Ok(MapSolution {
        image: Image::from_data(side, side, u)?,
        trace,
        cg_iterations: cg_total,
        min_curvature,
    })
}

/// Solver-scale objective `Phi + lambda J + 0.5 ||u||_K^2` of an arbitrary
/// image under a configuration (used by oracles and the pCN potential).
pub fn objective(
    u: &Image,
    y: &Sinogram,
    cfg: &MapConfig,
    graph: &WeightGraph,
    prior_cov: Option<&PriorCovariance>,
) -> Result<f64> {
    let phi = data_fidelity(u, y, cfg.sigma)?;
    let local;
    let active_graph = if cfg.prior.uses_nonlocal_graph() {
        graph
    } else {
        local = local_graph(u.width(), u.height());
        &local
    };
    let grad = nl_gradient(u.as_slice(), active_graph)?;
    let reg = cfg.lambda * group_l2_sum(&grad, active_graph)?;
    let quad = if cfg.prior.uses_covariance() {
        let c = prior_cov.ok_or(Error::InvalidParameter {
            name: "prior_cov",
            reason: "this prior requires the Gaussian covariance",
        })?;
        c.prior_quadratic(u.as_slice())?
    } else {
        0.0
    };
    Ok(phi + reg + quad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    use crate::image::{generate_phantom, Phantom, PhantomKind};
    use crate::nonlocal::{build_weights, PatchKernel};
    use crate::radon::ScanGeometry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn small_setup(
        side: usize,
        n_angles: usize,
        seed: u64,
    ) -> (Image, Sinogram, WeightGraph, PriorCovariance) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let data = (0..side * side)
            .map(|_| rng.random::<f64>() * 100.0)
            .collect();
        let truth = Image::from_data(side, side, data).unwrap();
        let g = ScanGeometry::standard(n_angles, side);
        let y = forward(&truth, &g).unwrap();
        let graph = build_weights(
            &truth,
            &PatchKernel {
                patch_radius: 1,
                a: 1.5,
                h: 40.0,
            },
            2,
            4,
            4,
        )
        .unwrap();
        let mut delta = PriorCovariance::default_delta_c(&graph).max(0.05);
        let cov = loop {
            match PriorCovariance::build(truth.as_slice(), 30.0, &graph, delta) {
                Ok(c) => break c,
                Err(_) => delta *= 2.0,
            }
        };
        (truth, y, graph, cov)
    }

    #[test]
    fn shrink_examples() {
        // Pixel 0 has the group (3, 4); threshold 1 scales by 0.8.
        let graph = WeightGraph::from_pairs(3, &[(0, 1, 1.0), (0, 2, 1.0)]).unwrap();
        let mut p = EdgeField::zeros(&graph);
        p.values[0] = 3.0;
        p.values[1] = 4.0;
        let out = shrink(&p, &graph, 1.0).unwrap();
        assert!((out.values[0] - 2.4).abs() < 1e-15);
        assert!((out.values[1] - 3.2).abs() < 1e-15);

        // Threshold zero is the identity.
        let id = shrink(&p, &graph, 0.0).unwrap();
        assert_eq!(id.values, p.values);

        // Groups at or below the threshold collapse to zero.
        let z = shrink(&p, &graph, 5.0).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shrink_is_the_prox_of_the_group_norm() {
        let mut rng = ChaCha20Rng::seed_from_u64(44);
        // One pixel with 3 incident edges; scan candidate magnitudes.
        let graph = WeightGraph::from_pairs(4, &[(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0)]).unwrap();
        for _ in 0..200 {
            let mut p = EdgeField::zeros(&graph);
            for e in graph.row_range(0) {
                p.values[e] = rng.random::<f64>() * 4.0 - 2.0;
            }
            let t = rng.random::<f64>() * 2.0;
            let out = shrink(&p, &graph, t).unwrap();
            let norm: f64 = graph
                .row_range(0)
                .map(|e| p.values[e] * p.values[e])
                .sum::<f64>()
                .sqrt();
            // Any prox candidate lies on the ray through the group; scan
            // its magnitude.
            let objective = |s: f64| t * s + 0.5 * (s - norm) * (s - norm);
            let got_s: f64 = graph
                .row_range(0)
                .map(|e| out.values[e] * out.values[e])
                .sum::<f64>()
                .sqrt();
            let best = objective(got_s);
            let mut s = 0.0;
            while s <= norm + 2.0 * t {
                assert!(
                    best <= objective(s) + 1e-9,
                    "prox beaten at s = {s}: {} vs {best}",
                    objective(s)
                );
                s += 1e-3;
            }
        }
    }

    #[test]
    fn data_fidelity_examples() {
        let (truth, y, _, _) = small_setup(8, 4, 3);
        // Exact data: zero fidelity.
        assert!(data_fidelity(&truth, &y, 5.0).unwrap() < 1e-18);
        // Doubling sigma quarters the value.
        let zero = Image::zeros(8, 8);
        let f1 = data_fidelity(&zero, &y, 5.0).unwrap();
        let f2 = data_fidelity(&zero, &y, 10.0).unwrap();
        assert!((f1 / f2 - 4.0).abs() < 1e-12);
        // Hand-summed residual on a tiny case.
        let g = ScanGeometry::standard(2, 4);
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let u = Image::from_data(4, 4, (0..16).map(|_| rng.random::<f64>()).collect()).unwrap();
        let mut y2 = forward(&u, &g).unwrap();
        for v in y2.data.iter_mut() {
            *v += 0.25;
        }
        let au = forward(&u, &g).unwrap();
        let sigma = 1.5;
        let mut expected = 0.0;
        for i in 0..y2.data.len() {
            if y2.mask[i] {
                let r = au.data[i] - y2.data[i];
                expected += r * r;
            }
        }
        expected /= 2.0 * sigma * sigma;
        let got = data_fidelity(&u, &y2, sigma).unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected.max(1.0));
    }

    #[test]
    fn normal_operator_is_symmetric_and_positive() {
        let (_, y, graph, cov) = small_setup(8, 6, 5);
        let op = NormalOperator {
            y_template: &y,
            graph: &graph,
            prior_cov: Some(&cov),
            mu: 0.7,
            inv_sigma2: 1.0 / 25.0,
            side: 8,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        for _ in 0..5 {
            let v: Vec<f64> = (0..64).map(|_| rng.random::<f64>() - 0.5).collect();
            let w: Vec<f64> = (0..64).map(|_| rng.random::<f64>() - 0.5).collect();
            let mv = op.apply(&v).unwrap();
            let mw = op.apply(&w).unwrap();
            let a = dot(&v, &mw);
            let b = dot(&mv, &w);
            assert!(
                (a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1.0),
                "<v,Mw> = {a}, <Mv,w> = {b}"
            );
            assert!(dot(&v, &mv) > 0.0);
        }
    }

    /// Dense probe of the operator plus dense Cholesky solve.
    fn dense_oracle_solve(op: &NormalOperator<'_>, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut m = vec![0.0; n * n];
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = op.apply(&e).unwrap();
            for (i, value) in col.iter().enumerate() {
                m[i * n + j] = *value;
            }
        }
        let mut l = m;
        for i in 0..n {
            for j in 0..=i {
                let mut sum = l[i * n + j];
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    assert!(sum > 0.0, "operator not SPD in oracle");
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        let mut x = rhs.to_vec();
        for i in 0..n {
            for j in 0..i {
                x[i] = x[i] - l[i * n + j] * x[j];
            }
            x[i] /= l[i * n + i];
        }
        for i in (0..n).rev() {
            for j in (i + 1)..n {
                x[i] = x[i] - l[j * n + i] * x[j];
            }
            x[i] /= l[i * n + i];
        }
        x
    }

    #[test]
    fn cg_matches_dense_solve() {
        let (_, y, graph, cov) = small_setup(8, 6, 21);
        let op = NormalOperator {
            y_template: &y,
            graph: &graph,
            prior_cov: Some(&cov),
            mu: 0.5,
            inv_sigma2: 1.0 / 25.0,
            side: 8,
        };
        let rhs_img = adjoint(&y);
        let rhs: Vec<f64> = rhs_img.as_slice().iter().map(|v| v / 25.0).collect();
        let mut x = vec![0.0; 64];
        let outcome = conjugate_gradient(&op, &rhs, &mut x, 1e-12, 2000).unwrap();
        assert!(outcome.min_curvature > 0.0);
        let want = dense_oracle_solve(&op, &rhs);
        let num: f64 = x
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = want.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(num / den <= 1e-6, "CG vs dense rel err {}", num / den);

        // CG residual contract at the configured tolerance.
        let mx = op.apply(&x).unwrap();
        let res: f64 = mx
            .iter()
            .zip(&rhs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let rhs_norm: f64 = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(res / rhs_norm <= 1e-10);
    }

    #[test]
    fn lambda_zero_reduces_to_tikhonov() {
        let (_, y, graph, cov) = small_setup(8, 6, 31);
        let u_ref = Image::constant(8, 8, 20.0);
        let mut cfg = MapConfig::new(PriorKind::Nltg);
        cfg.lambda = 0.0;
        cfg.mu = 0.05;
        cfg.sigma = 5.0;
        cfg.outer_iters = 150;
        cfg.cg_tol = 1e-12;
        cfg.cg_max_iters = 500;
        let sol = solve_map(&y, &u_ref, &cfg, &graph, Some(&cov)).unwrap();

        // Direct solution of (A'A/sigma^2 + C^{-1}) u = A'y/sigma^2.
        let op = NormalOperator {
            y_template: &y,
            graph: &graph,
            prior_cov: Some(&cov),
            mu: 0.0,
            inv_sigma2: 1.0 / 25.0,
            side: 8,
        };
        let rhs: Vec<f64> = adjoint(&y).as_slice().iter().map(|v| v / 25.0).collect();
        let want = dense_oracle_solve(&op, &rhs);
        let num: f64 = sol
            .image
            .as_slice()
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = want.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(num / den <= 1e-6, "rel err {}", num / den);
    }

    #[test]
    fn objective_decreases_and_gap_shrinks() {
        let phantom = generate_phantom(&Phantom {
            kind: PhantomKind::SheppLogan,
            size: 16,
            tumor: None,
            background_wave: None,
        });
        let g = ScanGeometry::standard(12, 16);
        let y = forward(&phantom, &g).unwrap();
        let graph = build_weights(
            &phantom,
            &PatchKernel {
                patch_radius: 1,
                a: 1.5,
                h: 25.0,
            },
            2,
            4,
            4,
        )
        .unwrap();
        let mut delta = 0.2;
        let cov = loop {
            match PriorCovariance::build(phantom.as_slice(), 25.0, &graph, delta) {
                Ok(c) => break c,
                Err(_) => delta *= 2.0,
            }
        };
        let mut cfg = MapConfig::new(PriorKind::Nltg);
        cfg.lambda = 2.0;
        cfg.mu = 1.0;
        cfg.sigma = 2.0;
        cfg.outer_iters = 60;
        let sol = solve_map(&y, &phantom, &cfg, &graph, Some(&cov)).unwrap();
        let init_obj = objective(&phantom, &y, &cfg, &graph, Some(&cov)).unwrap();
        let final_obj = sol.trace.last().unwrap().total;
        assert!(
            final_obj <= init_obj,
            "objective grew: {final_obj} > {init_obj}"
        );
        let gap_first = sol.trace[0].feasibility_gap;
        let gap_last = sol.trace.last().unwrap().feasibility_gap;
        assert!(
            gap_last <= 0.01 * gap_first,
            "gap {gap_last} vs first {gap_first}"
        );
        assert!(sol.min_curvature > 0.0);
    }

    #[test]
    fn two_initializations_agree() {
        let (truth, y, graph, cov) = small_setup(8, 8, 61);
        let mut cfg = MapConfig::new(PriorKind::Nltg);
        cfg.lambda = 1.0;
        cfg.mu = 0.5;
        cfg.sigma = 5.0;
        cfg.outer_iters = 120;
        let a = solve_map(&y, &truth, &cfg, &graph, Some(&cov)).unwrap();
        let zero = Image::zeros(8, 8);
        let b = solve_map(&y, &zero, &cfg, &graph, Some(&cov)).unwrap();
        let ta = a.trace.last().unwrap().total;
        let tb = b.trace.last().unwrap().total;
        assert!(
            (ta - tb).abs() <= 1e-3 * ta.abs().max(tb.abs()),
            "objectives {ta} vs {tb}"
        );
    }

    #[test]
    fn prior_kinds_validate_covariance() {
        let (truth, y, graph, cov) = small_setup(8, 4, 71);
        let cfg_tv = MapConfig::new(PriorKind::Tv);
        assert!(solve_map(&y, &truth, &cfg_tv, &graph, None).is_ok());
        let cfg_tg = MapConfig::new(PriorKind::Tg);
        assert!(solve_map(&y, &truth, &cfg_tg, &graph, None).is_err());
        assert!(solve_map(&y, &truth, &cfg_tg, &graph, Some(&cov)).is_ok());
        let cfg_nltv = MapConfig::new(PriorKind::Nltv);
        assert!(solve_map(&y, &truth, &cfg_nltv, &graph, None).is_ok());
    }
}
