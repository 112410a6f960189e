//! Patch-similarity weight graph and the nonlocal operators built on it:
//! gradient, divergence, Laplacian, and the NLTV seminorm.
//!
//! The weight between pixels `i` and `j` is
//! `exp(-sum_t G_a(t) * (f(i+t) - f(j+t))^2 / h^2)` over patch offsets `t`,
//! with mirror extension at the borders. Per pixel, the `k_best` largest
//! weights inside the search window plus the `k_local` closest 4-connected
//! neighbors are kept, and the pattern is symmetrized by union. Weights are
//! computed once per unordered pair, so both directions agree bitwise.
//!
//! Sign conventions: `grad p_ij = (u_j - u_i) sqrt(w_ij)` and
//! `div p (i) = sum_j (p_ij - p_ji) sqrt(w_ij)`, which gives the adjoint
//! pair `<grad u, p> = -<u, div p>` and a negative-semidefinite Laplacian
//! `lap = div . grad`.
//!
//! The solver works with unnormalized edge sums (constants absorbed into
//! the regularization weights); only [`nltv`] applies the continuum
//! normalization `dx = 1/n_pixels` used by the seminorm bounds.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::math;

/// Gaussian patch comparison kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchKernel {
    /// Patches are `(2 * patch_radius + 1)^2` windows.
    pub patch_radius: usize,
    /// Standard deviation of the Gaussian over patch offsets, in pixels.
    pub a: f64,
    /// Filtering parameter; conventionally the noise standard deviation
    /// of the reference image.
    pub h: f64,
}

impl PatchKernel {
    /// Offset weights over the patch, normalized to sum 1.
    fn offset_weights(&self) -> Vec<f64> {
        let r = self.patch_radius as isize;
        let side = (2 * self.patch_radius + 1) as isize;
        let mut w = Vec::with_capacity((side * side) as usize);
        let mut sum = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let g = math::exp(-((dx * dx + dy * dy) as f64) / (2.0 * self.a * self.a));
                w.push(g);
                sum += g;
            }
        }
        for v in w.iter_mut() {
            *v /= sum;
        }
        w
    }
}

/// Sparse symmetric similarity graph over the pixels of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGraph {
    n_pixels: usize,
    /// CSR row offsets, length `n_pixels + 1`.
    offsets: Vec<usize>,
    /// Column indices, sorted ascending within each row.
    cols: Vec<u32>,
    /// Edge weights in `(0, 1]`, equal in both directions.
    weights: Vec<f64>,
    /// `sqrt` of each weight, precomputed for the operators.
    sqrt_weights: Vec<f64>,
    /// For each directed edge slot, the slot of the reversed edge.
    reverse: Vec<usize>,
}

impl WeightGraph {
    pub fn n_pixels(&self) -> usize {
        self.n_pixels
    }

    pub fn n_edges(&self) -> usize {
        self.cols.len()
    }

    #[inline]
    pub fn row_range(&self, i: usize) -> core::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn row_cols(&self, i: usize) -> &[u32] {
        &self.cols[self.row_range(i)]
    }

    pub fn row_weights(&self, i: usize) -> &[f64] {
        &self.weights[self.row_range(i)]
    }

    /// Maximum number of neighbors over all pixels.
    pub fn max_degree(&self) -> usize {
        (0..self.n_pixels)
            .map(|i| self.row_range(i).len())
            .max()
            .unwrap_or(0)
    }

    /// Assembles a graph from unordered weighted pairs `(i, j, w)`.
    ///
    /// Pairs are deduplicated; both directions of each edge receive the
    /// same stored weight. Fails on self loops, out-of-range indices, or
    /// weights outside `(0, 1]`.
    pub fn from_pairs(n_pixels: usize, pairs: &[(u32, u32, f64)]) -> Result<Self> {
        let mut normalized: Vec<(u32, u32, f64)> = Vec::with_capacity(pairs.len());
        for &(a, b, w) in pairs {
            if a == b {
                return Err(Error::InvalidParameter {
                    name: "graph edge",
                    reason: "self loops are excluded",
                });
            }
            if a as usize >= n_pixels || b as usize >= n_pixels {
                return Err(Error::InvalidParameter {
                    name: "graph edge",
                    reason: "pixel index out of range",
                });
            }
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::InvalidParameter {
                    name: "graph weight",
                    reason: "weights must lie in (0, 1]",
                });
            }
            normalized.push((a.min(b), a.max(b), w));
        }
        normalized.sort_unstable_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        normalized.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);

        let mut degree = vec![0usize; n_pixels];
        for &(a, b, _) in &normalized {
            degree[a as usize] += 1;
            degree[b as usize] += 1;
        }
        let mut offsets = vec![0usize; n_pixels + 1];
        for i in 0..n_pixels {
            offsets[i + 1] = offsets[i] + degree[i];
        }
        let n_edges = offsets[n_pixels];
        let mut cols = vec![0u32; n_edges];
        let mut weights = vec![0.0; n_edges];
        let mut cursor = offsets[..n_pixels].to_vec();
        for &(a, b, w) in &normalized {
            let (a, b) = (a as usize, b as usize);
            cols[cursor[a]] = b as u32;
            weights[cursor[a]] = w;
            cursor[a] += 1;
            cols[cursor[b]] = a as u32;
            weights[cursor[b]] = w;
            cursor[b] += 1;
        }
        // Rows need sorting: pairs arrive sorted by (min, max), which fills
        // the `min` rows in order but the `max` rows out of order.
        for i in 0..n_pixels {
            let range = offsets[i]..offsets[i + 1];
            let mut row: Vec<(u32, f64)> = cols[range.clone()]
                .iter()
                .copied()
                .zip(weights[range.clone()].iter().copied())
                .collect();
            row.sort_unstable_by_key(|&(c, _)| c);
            for (k, (c, w)) in row.into_iter().enumerate() {
                cols[offsets[i] + k] = c;
                weights[offsets[i] + k] = w;
            }
        }
        let sqrt_weights = weights.iter().map(|&w| math::sqrt(w)).collect();
        let mut graph = WeightGraph {
            n_pixels,
            offsets,
            cols,
            weights,
            sqrt_weights,
            reverse: Vec::new(),
        };
        graph.reverse = graph.build_reverse()?;
        Ok(graph)
    }

    fn build_reverse(&self) -> Result<Vec<usize>> {
        let mut reverse = vec![0usize; self.cols.len()];
        for i in 0..self.n_pixels {
            for e in self.row_range(i) {
                let j = self.cols[e] as usize;
                let row = self.row_cols(j);
                match row.binary_search(&(i as u32)) {
                    Ok(pos) => reverse[e] = self.offsets[j] + pos,
                    Err(_) => return Err(Error::PatternMismatch),
                }
            }
        }
        Ok(reverse)
    }
}

/// Values attached to every directed edge of a [`WeightGraph`], in CSR
/// slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeField {
    pub values: Vec<f64>,
}

impl EdgeField {
    pub fn zeros(graph: &WeightGraph) -> Self {
        EdgeField {
            values: vec![0.0; graph.n_edges()],
        }
    }

    fn check(&self, graph: &WeightGraph) -> Result<()> {
        if self.values.len() != graph.n_edges() {
            return Err(Error::PatternMismatch);
        }
        Ok(())
    }
}

fn mirror(v: isize, n: usize) -> usize {
    // Half-sample symmetric extension: -1 -> 0, n -> n-1.
    let n = n as isize;
    let m = if v < 0 {
        -v - 1
    } else if v >= n {
        2 * n - v - 1
    } else {
        v
    };
    m.clamp(0, n - 1) as usize
}

/// Builds the similarity graph of `f`.
///
/// Per pixel, keeps the `k_best` largest-weight candidates in the
/// `(2 * search_radius + 1)^2` window (ties broken by smaller pixel index)
/// plus the `k_local` closest 4-connected neighbors, then symmetrizes by
/// union.
pub fn build_weights(
    f: &Image,
    kernel: &PatchKernel,
    search_radius: usize,
    k_best: usize,
    k_local: usize,
) -> Result<WeightGraph> {
    if !(kernel.h > 0.0) || !kernel.h.is_finite() {
        return Err(Error::InvalidParameter {
            name: "h",
            reason: "filtering parameter must be positive and finite",
        });
    }
    if !(kernel.a > 0.0) || !kernel.a.is_finite() {
        return Err(Error::InvalidParameter {
            name: "a",
            reason: "patch Gaussian std must be positive and finite",
        });
    }
    if k_best + k_local == 0 {
        return Err(Error::InvalidParameter {
            name: "k_best + k_local",
            reason: "at least one neighbor per pixel is required",
        });
    }
    if k_local > 0 && search_radius < 1 {
        return Err(Error::InvalidParameter {
            name: "search_radius",
            reason: "search window smaller than the local neighborhood",
        });
    }
    let (width, height) = (f.width(), f.height());
    let offsets = kernel.offset_weights();
    let pr = kernel.patch_radius as isize;
    let h2 = kernel.h * kernel.h;

    // Patch distance with mirrored borders; identical summation order for
    // both orientations of a pair, so weights agree bitwise.
    let patch_weight = |xi: usize, yi: usize, xj: usize, yj: usize| -> f64 {
        let mut d2 = 0.0;
        let mut t = 0usize;
        for dy in -pr..=pr {
            let yi_m = mirror(yi as isize + dy, height);
            let yj_m = mirror(yj as isize + dy, height);
            for dx in -pr..=pr {
                let xi_m = mirror(xi as isize + dx, width);
                let xj_m = mirror(xj as isize + dx, width);
                let diff = f.at(xi_m, yi_m) - f.at(xj_m, yj_m);
                d2 += offsets[t] * diff * diff;
                t += 1;
            }
        }
        math::exp(-d2 / h2)
    };

    let sr = search_radius as isize;
    let mut pairs: Vec<(u32, u32, f64)> = Vec::new();
    let mut candidates: Vec<(f64, u32)> = Vec::new();
    for yi in 0..height {
        for xi in 0..width {
            let i = (yi * width + xi) as u32;
            candidates.clear();
            for dy in -sr..=sr {
                let yj = yi as isize + dy;
                if yj < 0 || yj >= height as isize {
                    continue;
                }
                for dx in -sr..=sr {
                    let xj = xi as isize + dx;
                    if xj < 0 || xj >= width as isize || (dx == 0 && dy == 0) {
                        continue;
                    }
                    let j = (yj as usize * width + xj as usize) as u32;
                    let w = patch_weight(xi, yi, xj as usize, yj as usize);
                    candidates.push((w, j));
                }
            }
            // Largest weight first, ties by smaller index.
            candidates.sort_unstable_by(|a, b| {
                b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1))
            });
            for &(w, j) in candidates.iter().take(k_best) {
                pairs.push((i, j, w));
            }
            // Closest 4-connected neighbors, in ascending index order.
            let mut local: Vec<u32> = Vec::with_capacity(4);
            if yi > 0 {
                local.push(i - width as u32);
            }
            if xi > 0 {
                local.push(i - 1);
            }
            if xi + 1 < width {
                local.push(i + 1);
            }
            if yi + 1 < height {
                local.push(i + width as u32);
            }
            for &j in local.iter().take(k_local) {
                let (xj, yj) = ((j as usize) % width, (j as usize) / width);
                let w = patch_weight(xi, yi, xj, yj);
                pairs.push((i, j, w));
            }
        }
    }
    WeightGraph::from_pairs(width * height, &pairs)
}

/// The 4-connected grid graph with unit weights, used by the TV and TG
/// configurations.
pub fn local_graph(width: usize, height: usize) -> WeightGraph {
    let mut pairs = Vec::with_capacity(2 * width * height);
    for y in 0..height {
        for x in 0..width {
            let i = (y * width + x) as u32;
            if x + 1 < width {
                pairs.push((i, i + 1, 1.0));
            }
            if y + 1 < height {
                pairs.push((i, i + width as u32, 1.0));
            }
        }
    }
    WeightGraph::from_pairs(width * height, &pairs).expect("grid graph is always valid")
}

/// Nonlocal gradient: `p_ij = (u_j - u_i) * sqrt(w_ij)` per directed edge.
pub fn nl_gradient(u: &[f64], graph: &WeightGraph) -> Result<EdgeField> {
    if u.len() != graph.n_pixels {
        return Err(Error::SizeMismatch {
            what: "nl_gradient input",
            expected: graph.n_pixels,
            actual: u.len(),
        });
    }
    let mut values = vec![0.0; graph.n_edges()];
    for i in 0..graph.n_pixels {
        for e in graph.row_range(i) {
            let j = graph.cols[e] as usize;
            values[e] = (u[j] - u[i]) * graph.sqrt_weights[e];
        }
    }
    Ok(EdgeField { values })
}

/// Nonlocal divergence, the negative adjoint of [`nl_gradient`]:
/// `div p (i) = sum_j (p_ij - p_ji) * sqrt(w_ij)`.
pub fn nl_divergence(p: &EdgeField, graph: &WeightGraph) -> Result<Vec<f64>> {
    p.check(graph)?;
    let mut out = vec![0.0; graph.n_pixels];
    for i in 0..graph.n_pixels {
        let mut acc = 0.0;
        for e in graph.row_range(i) {
            let rev = graph.reverse[e];
            acc += (p.values[e] - p.values[rev]) * graph.sqrt_weights[e];
        }
        out[i] = acc;
    }
    Ok(out)
}

/// Graph Laplacian `div . grad`; negative semidefinite.
///
/// Evaluated with exactly the same floating-point operations as the
/// composition, so `nl_laplacian(u) == nl_divergence(nl_gradient(u))`
/// bitwise.
pub fn nl_laplacian(u: &[f64], graph: &WeightGraph) -> Result<Vec<f64>> {
    if u.len() != graph.n_pixels {
        return Err(Error::SizeMismatch {
            what: "nl_laplacian input",
            expected: graph.n_pixels,
            actual: u.len(),
        });
    }
    let mut out = vec![0.0; graph.n_pixels];
    for i in 0..graph.n_pixels {
        let mut acc = 0.0;
        for e in graph.row_range(i) {
            let j = graph.cols[e] as usize;
            let s = graph.sqrt_weights[e];
            let p_ij = (u[j] - u[i]) * s;
            let p_ji = (u[i] - u[j]) * s;
            acc += (p_ij - p_ji) * s;
        }
        out[i] = acc;
    }
    Ok(out)
}

/// NLTV seminorm with the continuum normalization `dx = 1/n_pixels`
/// applied to both integrals:
/// `J(u) = sum_i sqrt(dx * sum_j w_ij (u_i - u_j)^2) * dx`.
///
/// Under this normalization `J(u) <= 2 ||u||` and
/// `||grad u|| <= 2 ||u||` hold for every `u` whenever the maximum degree
/// does not exceed the pixel count.
pub fn nltv(u: &[f64], graph: &WeightGraph) -> Result<f64> {
    if u.len() != graph.n_pixels {
        return Err(Error::SizeMismatch {
            what: "nltv input",
            expected: graph.n_pixels,
            actual: u.len(),
        });
    }
    let dx = 1.0 / graph.n_pixels as f64;
    let mut total = 0.0;
    for i in 0..graph.n_pixels {
        let mut inner = 0.0;
        for e in graph.row_range(i) {
            let j = graph.cols[e] as usize;
            let d = u[i] - u[j];
            inner += graph.weights[e] * d * d;
        }
        total += math::sqrt(dx * inner);
    }
    Ok(total * dx)
}

/// Sum of per-pixel l2 norms of an edge field: the solver-scale
/// (unnormalized) NLTV value of `nl_gradient(u)`.
pub fn group_l2_sum(p: &EdgeField, graph: &WeightGraph) -> Result<f64> {
    p.check(graph)?;
    let mut total = 0.0;
    for i in 0..graph.n_pixels {
        let mut inner = 0.0;
        for e in graph.row_range(i) {
            inner += p.values[e] * p.values[e];
        }
        total += math::sqrt(inner);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let data = (0..w * h).map(|_| rng.random::<f64>() * 100.0).collect();
        Image::from_data(w, h, data).unwrap()
    }

    fn default_kernel(h: f64) -> PatchKernel {
        PatchKernel {
            patch_radius: 2,
            a: 1.5,
            h,
        }
    }

    fn random_vec(n: usize, seed: u64) -> alloc::vec::Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn constant_image_gives_unit_weights() {
        let f = Image::constant(12, 12, 42.0);
        let g = build_weights(&f, &default_kernel(10.0), 3, 5, 4).unwrap();
        assert!(g.weights.iter().all(|&w| w == 1.0));
        // Union symmetrization bounds the mean degree by 2 (k_best + k_local);
        // individual pixels can exceed it when many windows tie on them.
        let mean_degree = g.n_edges() as f64 / g.n_pixels() as f64;
        assert!(mean_degree <= 2.0 * (5 + 4) as f64, "mean degree {mean_degree}");
        assert!(g.n_edges() > 0);
    }

    #[test]
    fn weights_are_symmetric_bitwise() {
        let f = random_image(10, 10, 7);
        let g = build_weights(&f, &default_kernel(30.0), 3, 6, 4).unwrap();
        for i in 0..g.n_pixels() {
            for e in g.row_range(i) {
                let rev = g.reverse[e];
                assert_eq!(g.weights[e].to_bits(), g.weights[rev].to_bits());
                assert!(g.weights[e] > 0.0 && g.weights[e] <= 1.0);
            }
        }
    }

    #[test]
    fn weights_match_brute_force() {
        let f = random_image(8, 8, 99);
        let kernel = default_kernel(25.0);
        let g = build_weights(&f, &kernel, 3, 4, 4).unwrap();
        // Independent evaluation of the weight formula over all pairs.
        let offsets = kernel.offset_weights();
        let brute = |i: usize, j: usize| -> f64 {
            let (xi, yi) = (i % 8, i / 8);
            let (xj, yj) = (j % 8, j / 8);
            let mut d2 = 0.0;
            let mut t = 0;
            for dy in -2isize..=2 {
                for dx in -2isize..=2 {
                    let a = f.at(mirror(xi as isize + dx, 8), mirror(yi as isize + dy, 8));
                    let b = f.at(mirror(xj as isize + dx, 8), mirror(yj as isize + dy, 8));
                    d2 += offsets[t] * (a - b) * (a - b);
                    t += 1;
                }
            }
            (-d2 / (25.0f64 * 25.0)).exp()
        };
        for i in 0..g.n_pixels() {
            for e in g.row_range(i) {
                let j = g.cols[e] as usize;
                let expected = brute(i, j);
                assert!(
                    (g.weights[e] - expected).abs() <= 1e-12,
                    "edge ({i},{j}): {} vs {expected}",
                    g.weights[e]
                );
            }
        }
    }

    #[test]
    fn build_is_deterministic() {
        let f = random_image(9, 9, 3);
        let a = build_weights(&f, &default_kernel(20.0), 2, 5, 4).unwrap();
        let b = build_weights(&f, &default_kernel(20.0), 2, 5, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn build_rejects_bad_parameters() {
        let f = Image::constant(8, 8, 1.0);
        assert!(build_weights(&f, &default_kernel(0.0), 2, 5, 4).is_err());
        assert!(build_weights(&f, &default_kernel(1.0), 2, 0, 0).is_err());
        assert!(build_weights(&f, &default_kernel(1.0), 0, 5, 4).is_err());
    }

    #[test]
    fn gradient_examples() {
        // Single edge with w = 0.25, u = (1, 3): p_01 = (3-1) * 0.5 = 1.
        let g = WeightGraph::from_pairs(2, &[(0, 1, 0.25)]).unwrap();
        let p = nl_gradient(&[1.0, 3.0], &g).unwrap();
        assert_eq!(p.values[0], 1.0);
        assert_eq!(p.values[1], -1.0);

        let f = random_image(8, 8, 5);
        let graph = build_weights(&f, &default_kernel(30.0), 2, 4, 4).unwrap();
        let constant = vec![7.5; graph.n_pixels()];
        let p0 = nl_gradient(&constant, &graph).unwrap();
        assert!(p0.values.iter().all(|&v| v == 0.0));

        let u = random_vec(graph.n_pixels(), 11);
        let p = nl_gradient(&u, &graph).unwrap();
        for i in 0..graph.n_pixels() {
            for e in graph.row_range(i) {
                assert_eq!(p.values[e], -p.values[graph.reverse[e]]);
            }
        }
    }

    #[test]
    fn divergence_is_negative_adjoint_of_gradient() {
        let f = random_image(16, 16, 21);
        let graph = build_weights(&f, &default_kernel(40.0), 3, 6, 4).unwrap();
        let u = random_vec(graph.n_pixels(), 1);
        let mut p = EdgeField::zeros(&graph);
        for (k, v) in random_vec(graph.n_edges(), 2).into_iter().enumerate() {
            p.values[k] = v;
        }
        let grad_u = nl_gradient(&u, &graph).unwrap();
        let div_p = nl_divergence(&p, &graph).unwrap();
        let lhs: f64 = grad_u.values.iter().zip(&p.values).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.iter().zip(&div_p).map(|(a, b)| a * b).sum();
        let scale = lhs.abs().max(rhs.abs()).max(1.0);
        assert!(
            (lhs + rhs).abs() <= 1e-12 * scale,
            "<grad u, p> = {lhs}, <u, div p> = {rhs}"
        );
    }

    #[test]
    fn divergence_of_sqrt_weight_field() {
        // p_ij = sqrt(w_ij) (antisymmetric counterpart p_ji = -sqrt(w_ij))
        // gives div p(i) = 2 * sum_j w_ij under this sign convention.
        let f = random_image(8, 8, 17);
        let graph = build_weights(&f, &default_kernel(30.0), 2, 4, 4).unwrap();
        let mut p = EdgeField::zeros(&graph);
        for i in 0..graph.n_pixels() {
            for e in graph.row_range(i) {
                let j = graph.cols[e] as usize;
                let sign = if i < j { 1.0 } else { -1.0 };
                p.values[e] = sign * graph.sqrt_weights[e];
            }
        }
        let div = nl_divergence(&p, &graph).unwrap();
        for i in 0..graph.n_pixels() {
            let expected: f64 = graph
                .row_range(i)
                .map(|e| {
                    let j = graph.cols[e] as usize;
                    let sign = if i < j { 1.0 } else { -1.0 };
                    2.0 * sign * graph.weights[e]
                })
                .sum();
            assert!(
                (div[i] - expected).abs() <= 1e-12 * expected.abs().max(1.0),
                "pixel {i}: {} vs {expected}",
                div[i]
            );
        }
    }

    #[test]
    fn laplacian_equals_composition_exactly() {
        let f = random_image(12, 12, 8);
        let graph = build_weights(&f, &default_kernel(35.0), 3, 5, 4).unwrap();
        let u = random_vec(graph.n_pixels(), 4);
        let lap = nl_laplacian(&u, &graph).unwrap();
        let composed = nl_divergence(&nl_gradient(&u, &graph).unwrap(), &graph).unwrap();
        assert_eq!(lap, composed);

        let constant = vec![3.0; graph.n_pixels()];
        assert!(nl_laplacian(&constant, &graph)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_is_negative_semidefinite() {
        let f = random_image(10, 10, 30);
        let graph = build_weights(&f, &default_kernel(30.0), 2, 5, 4).unwrap();
        for seed in 0..100 {
            let u = random_vec(graph.n_pixels(), 1000 + seed);
            let lap = nl_laplacian(&u, &graph).unwrap();
            let quad: f64 = u.iter().zip(&lap).map(|(a, b)| a * b).sum();
            assert!(quad <= 1e-9, "seed {seed}: <u, lap u> = {quad}");
        }
    }

    #[test]
    fn nltv_bounds_and_homogeneity() {
        let f = random_image(12, 12, 55);
        let graph = build_weights(&f, &default_kernel(30.0), 3, 10, 4).unwrap();
        let n = graph.n_pixels() as f64;
        let constant = vec![9.0; graph.n_pixels()];
        assert_eq!(nltv(&constant, &graph).unwrap(), 0.0);
        for seed in 0..100 {
            let u = random_vec(graph.n_pixels(), 2000 + seed);
            let j = nltv(&u, &graph).unwrap();
            let norm = (u.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
            assert!(j <= 2.0 * norm + 1e-12, "seed {seed}: J = {j}, 2||u|| = {}", 2.0 * norm);
        }
        // Lipschitz bound |J(u1) - J(u2)| <= 2 ||u1 - u2||.
        for seed in 0..100 {
            let u1 = random_vec(graph.n_pixels(), 3000 + seed);
            let u2 = random_vec(graph.n_pixels(), 4000 + seed);
            let j1 = nltv(&u1, &graph).unwrap();
            let j2 = nltv(&u2, &graph).unwrap();
            let diff_norm = (u1
                .iter()
                .zip(&u2)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / n)
                .sqrt();
            assert!((j1 - j2).abs() <= 2.0 * diff_norm + 1e-12);
        }
        // Positive homogeneity.
        let u = random_vec(graph.n_pixels(), 77);
        let j = nltv(&u, &graph).unwrap();
        for &c in &[-3.5f64, 0.25, 2.0] {
            let scaled: alloc::vec::Vec<f64> = u.iter().map(|v| c * v).collect();
            let js = nltv(&scaled, &graph).unwrap();
            assert!(
                (js - c.abs() * j).abs() <= 1e-12 * (1.0 + js.abs()),
                "c = {c}: {js} vs {}",
                c.abs() * j
            );
        }
    }

    #[test]
    fn local_graph_is_unit_weight_grid() {
        let g = local_graph(4, 3);
        assert_eq!(g.n_pixels(), 12);
        assert!(g.weights.iter().all(|&w| w == 1.0));
        // Interior pixel (1,1) has 4 neighbors.
        assert_eq!(g.row_cols(5), &[1, 4, 6, 9]);
        // Corner has 2.
        assert_eq!(g.row_cols(0), &[1, 4]);
    }

    #[test]
    fn from_pairs_rejects_invalid_edges() {
        assert!(WeightGraph::from_pairs(4, &[(0, 0, 0.5)]).is_err());
        assert!(WeightGraph::from_pairs(4, &[(0, 7, 0.5)]).is_err());
        assert!(WeightGraph::from_pairs(4, &[(0, 1, 0.0)]).is_err());
        assert!(WeightGraph::from_pairs(4, &[(0, 1, 1.5)]).is_err());
    }

    #[test]
    fn pattern_mismatch_is_detected() {
        let g1 = local_graph(4, 4);
        let g2 = local_graph(5, 5);
        let p = EdgeField::zeros(&g1);
        assert!(nl_divergence(&p, &g2).is_err());
        assert!(nl_gradient(&[0.0; 7], &g1).is_err());
    }
}
