//! Reference implementations used by the test suites: a closed-form
//! linear-Gaussian posterior, finite differences, and a dense planar grid
//! posterior. Everything here is deliberately written against textbook
//! formulas, independent of the library's own numerical paths, so tests
//! compare two different routes to the same quantity.

use nalgebra::{DMatrix, DVector};

/// Exact linear-Gaussian posterior in information form:
/// `cov = (P^-1 + H^T R^-1 H)^-1`, `mean = cov (P^-1 m + H^T R^-1 z)`.
/// Inversions go through LU, not Cholesky, to stay off the library's path.
pub fn kalman_posterior(
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    h: &DMatrix<f64>,
    noise_var: &DVector<f64>,
    z: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let p_inv = prior_cov.clone().try_inverse().expect("invertible prior covariance");
    let mut info = p_inv.clone();
    let mut rhs = &p_inv * prior_mean;
    for r in 0..h.nrows() {
        let row = h.row(r);
        let w = 1.0 / noise_var[r];
        info += row.transpose() * row * w;
        rhs += row.transpose() * (z[r] * w);
    }
    let cov = info.try_inverse().expect("invertible posterior information");
    let mean = &cov * rhs;
    (mean, cov)
}

/// Gradient of a scalar function by central differences with step `h`.
pub fn central_difference(
    f: &dyn Fn(&DVector<f64>) -> f64,
    x: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    let mut grad = DVector::zeros(x.len());
    for i in 0..x.len() {
        let mut hi = x.clone();
        hi[i] += h;
        let mut lo = x.clone();
        lo[i] -= h;
        grad[i] = (f(&hi) - f(&lo)) / (2.0 * h);
    }
    grad
}

/// Dense posterior over a rectangle in the plane, for problems whose
/// uncertainty is confined to two position coordinates.
pub struct PlanarGrid {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Normalized cell masses, indexed `[iy * nx + ix]`.
    mass: Vec<f64>,
}

impl PlanarGrid {
    /// Evaluates `log_target` at every cell center and normalizes. Cells
    /// where the target is `-inf` (outside the support) carry zero mass.
    pub fn posterior(
        x_range: (f64, f64),
        y_range: (f64, f64),
        nx: usize,
        ny: usize,
        log_target: &dyn Fn(f64, f64) -> f64,
    ) -> Self {
        assert!(nx >= 2 && ny >= 2, "grid too coarse");
        let xs: Vec<f64> = (0..nx)
            .map(|i| x_range.0 + (i as f64 + 0.5) * (x_range.1 - x_range.0) / nx as f64)
            .collect();
        let ys: Vec<f64> = (0..ny)
            .map(|i| y_range.0 + (i as f64 + 0.5) * (y_range.1 - y_range.0) / ny as f64)
            .collect();
        let mut log_mass = vec![f64::NEG_INFINITY; nx * ny];
        let mut max = f64::NEG_INFINITY;
        for (iy, &y) in ys.iter().enumerate() {
            for (ix, &x) in xs.iter().enumerate() {
                let v = log_target(x, y);
                log_mass[iy * nx + ix] = v;
                if v > max {
                    max = v;
                }
            }
        }
        assert!(max.is_finite(), "target vanishes on the whole grid");
        let mut mass: Vec<f64> = log_mass.iter().map(|&v| (v - max).exp()).collect();
        let total: f64 = mass.iter().sum();
        for m in &mut mass {
            *m /= total;
        }
        PlanarGrid { xs, ys, mass }
    }

    pub fn mean(&self) -> (f64, f64) {
        let nx = self.xs.len();
        let mut mx = 0.0;
        let mut my = 0.0;
        for (iy, &y) in self.ys.iter().enumerate() {
            for (ix, &x) in self.xs.iter().enumerate() {
                let m = self.mass[iy * nx + ix];
                mx += m * x;
                my += m * y;
            }
        }
        (mx, my)
    }

    pub fn mode(&self) -> (f64, f64) {
        let nx = self.xs.len();
        let (best, _) = self
            .mass
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("comparable mass"))
            .expect("nonempty grid");
        (self.xs[best % nx], self.ys[best / nx])
    }

    /// Posterior standard deviations along x and y.
    pub fn std(&self) -> (f64, f64) {
        let (mx, my) = self.mean();
        let nx = self.xs.len();
        let mut vx = 0.0;
        let mut vy = 0.0;
        for (iy, &y) in self.ys.iter().enumerate() {
            for (ix, &x) in self.xs.iter().enumerate() {
                let m = self.mass[iy * nx + ix];
                vx += m * (x - mx) * (x - mx);
                vy += m * (y - my) * (y - my);
            }
        }
        (vx.sqrt(), vy.sqrt())
    }

    /// Total mass within Euclidean distance `radius` of `(cx, cy)`.
    pub fn mass_within(&self, cx: f64, cy: f64, radius: f64) -> f64 {
        let nx = self.xs.len();
        let r2 = radius * radius;
        let mut total = 0.0;
        for (iy, &y) in self.ys.iter().enumerate() {
            for (ix, &x) in self.xs.iter().enumerate() {
                let dx = x - cx;
                let dy = y - cy;
                if dx * dx + dy * dy <= r2 {
                    total += self.mass[iy * nx + ix];
                }
            }
        }
        total
    }
}

/// Log density of a scalar Gaussian, spelled out locally so grid targets
/// do not borrow the library's version.
pub fn log_normal(x: f64, mean: f64, sigma: f64) -> f64 {
    let t = (x - mean) / sigma;
    -0.5 * t * t - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Marginal posterior of one node of a two-node chain, by brute-force
/// marginalization over the partner on its own grid:
/// `p(s) ∝ exp(log_self(s)) · Σ_p exp(log_partner(p) + log_pair(‖s-p‖))`.
///
/// Partner cells below `1e-12` of the heaviest cell are dropped; they
/// change the marginal by less than that relative mass. Panics if the
/// product vanishes everywhere on the self grid.
#[allow(clippy::too_many_arguments)]
pub fn pair_marginal(
    self_x: (f64, f64),
    self_y: (f64, f64),
    nx: usize,
    ny: usize,
    partner_x: (f64, f64),
    partner_y: (f64, f64),
    pnx: usize,
    pny: usize,
    log_self: &dyn Fn(f64, f64) -> f64,
    log_partner: &dyn Fn(f64, f64) -> f64,
    log_pair: &dyn Fn(f64) -> f64,
) -> PlanarGrid {
    let partner = PlanarGrid::posterior(partner_x, partner_y, pnx, pny, log_partner);
    let max_mass = partner.mass.iter().cloned().fold(0.0_f64, f64::max);
    let mut cells: Vec<(f64, f64, f64)> = Vec::new();
    let cols = partner.xs.len();
    for (iy, &y) in partner.ys.iter().enumerate() {
        for (ix, &x) in partner.xs.iter().enumerate() {
            let m = partner.mass[iy * cols + ix];
            if m > 1e-12 * max_mass {
                cells.push((x, y, m));
            }
        }
    }
    PlanarGrid::posterior(self_x, self_y, nx, ny, &|x, y| {
        let own = log_self(x, y);
        if own == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let mut message = 0.0;
        for &(px, py, m) in &cells {
            let d = ((x - px) * (x - px) + (y - py) * (y - py)).sqrt();
            message += m * log_pair(d).exp();
        }
        if message > 0.0 {
            own + message.ln()
        } else {
            f64::NEG_INFINITY
        }
    })
}
