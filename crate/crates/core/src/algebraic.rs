//! Matrix-free least squares (LSQR), Poisson measurement noise and the
//! reconstruction error metric.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::excitation::{Aperture, ConePlan};
use crate::field::{dot, norm, Grid, ScalarField};

/// Largest accepted relative mismatch in the adjoint dot-test.
pub const DOT_TEST_TOL: f64 = 1e-10;

/// A linear operator given by its action and the action of its transpose.
pub trait LinearMap {
    /// Length of `forward` output.
    fn rows(&self) -> usize;
    /// Length of `forward` input.
    fn cols(&self) -> usize;
    fn forward(&self, x: &[f64]) -> Vec<f64>;
    fn adjoint(&self, y: &[f64]) -> Vec<f64>;
}

/// `|⟨Ax, y⟩ - ⟨x, Aᵀy⟩| / (‖Ax‖ ‖y‖)` for random `x, y` drawn from `seed`.
pub fn dot_test(map: &dyn LinearMap, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..map.cols()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..map.rows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ax = map.forward(&x);
    let aty = map.adjoint(&y);
    let scale = norm(&ax) * norm(&y);
    if scale == 0.0 {
        return if norm(&aty) == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (dot(&ax, &y) - dot(&x, &aty)).abs() / scale
}

/// Dense row-major matrix, mostly for tests and small problems.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMap {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl LinearMap for DenseMap {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.data.chunks(self.cols).map(|row| dot(row, x)).collect()
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &yi) in self.data.chunks(self.cols).zip(y) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsqrOptions {
    pub max_iters: usize,
    /// Stop once `‖Aᵀr‖ <= atol ‖A‖ ‖r‖` or `‖r‖ <= atol (‖b‖ + ‖A‖ ‖x‖)`.
    pub atol: f64,
    /// Replace negative entries of the final iterate by zero.
    pub clamp_nonnegative: bool,
}

impl Default for LsqrOptions {
    fn default() -> Self {
        LsqrOptions {
            max_iters: 500,
            atol: 1e-8,
            clamp_nonnegative: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsqrStep {
    pub iteration: usize,
    /// `‖b - Ax‖`
    pub residual: f64,
    /// `‖Aᵀ(b - Ax)‖`
    pub normal_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsqrResult {
    pub solution: Vec<f64>,
    /// One entry per iteration, starting with the initial guess `x = 0`.
    pub history: Vec<LsqrStep>,
    pub converged: bool,
}

impl LsqrResult {
    pub fn iterations(&self) -> usize {
        self.history.len() - 1
    }
}

fn scale_in_place(v: &mut [f64], s: f64) {
    v.iter_mut().for_each(|x| *x *= s);
}

/// Paige–Saunders LSQR for `min ‖Ax - b‖` starting from `x = 0`.
pub fn lsqr(map: &dyn LinearMap, data: &[f64], options: &LsqrOptions) -> Result<LsqrResult> {
    if data.len() != map.rows() {
        return Err(Error::invalid(format!(
            "data has {} entries but the operator has {} rows",
            data.len(),
            map.rows()
        )));
    }
    let mismatch = dot_test(map, 0x5eed);
    if !(mismatch <= DOT_TEST_TOL) {
        return Err(Error::InvalidOperator(mismatch));
    }
    let n = map.cols();
    let mut x = vec![0.0; n];
    let mut u = data.to_vec();
    let mut beta = norm(&u);
    let bnorm = beta;
    if beta == 0.0 {
        let step = LsqrStep { iteration: 0, residual: 0.0, normal_residual: 0.0 };
        return Ok(LsqrResult { solution: x, history: vec![step], converged: true });
    }
    scale_in_place(&mut u, 1.0 / beta);
    let mut v = map.adjoint(&u);
    let mut alpha = norm(&v);
    if alpha > 0.0 {
        scale_in_place(&mut v, 1.0 / alpha);
    }
    let mut w = v.clone();
    let mut phi_bar = beta;
    let mut rho_bar = alpha;
    let mut anorm2 = 0.0;
    let mut history = vec![LsqrStep {
        iteration: 0,
        residual: beta,
        normal_residual: alpha * beta,
    }];
    if alpha == 0.0 {
        // b is orthogonal to the range: x = 0 is the least-squares solution
        return Ok(LsqrResult { solution: x, history, converged: true });
    }
    let mut converged = false;
    for it in 1..=options.max_iters {
        // bidiagonalization
        let av = map.forward(&v);
        u.iter_mut().zip(&av).for_each(|(u, a)| *u = a - alpha * *u);
        beta = norm(&u);
        if beta > 0.0 {
            scale_in_place(&mut u, 1.0 / beta);
        }
        anorm2 += alpha * alpha + beta * beta;
        let atu = map.adjoint(&u);
        v.iter_mut().zip(&atu).for_each(|(v, a)| *v = a - beta * *v);
        alpha = norm(&v);
        if alpha > 0.0 {
            scale_in_place(&mut v, 1.0 / alpha);
        }
        // plane rotation
        let rho = rho_bar.hypot(beta);
        let c = rho_bar / rho;
        let s = beta / rho;
        let theta = s * alpha;
        rho_bar = -c * alpha;
        let phi = c * phi_bar;
        phi_bar *= s;
        let t1 = phi / rho;
        let t2 = -theta / rho;
        for ((x, w), v) in x.iter_mut().zip(w.iter_mut()).zip(&v) {
            *x += t1 * *w;
            *w = v + t2 * *w;
        }
        let residual = phi_bar;
        let normal = phi_bar * alpha * c.abs();
        history.push(LsqrStep {
            iteration: it,
            residual,
            normal_residual: normal,
        });
        let anorm = anorm2.sqrt();
        if residual <= options.atol * (bnorm + anorm * norm(&x)) || normal <= options.atol * anorm * residual {
            converged = true;
            break;
        }
    }
    if options.clamp_nonnegative {
        x.iter_mut().for_each(|x| *x = x.max(0.0));
    }
    Ok(LsqrResult {
        solution: x,
        history,
        converged,
    })
}

/// The discretized scan `f ↦ (Σ_y w_j(x - y) v(y) f(y) ΔV)_{x, j}` with the
/// per-cone data stacked cone by cone.
pub struct ScanMap {
    plan: ConePlan,
    weight: Vec<f64>,
}

impl ScanMap {
    pub fn new(v: &ScalarField, focus: &Grid, apertures: &[Aperture]) -> Result<Self> {
        Ok(ScanMap {
            plan: ConePlan::new(v.grid(), focus, apertures)?,
            weight: v.values().to_vec(),
        })
    }

    pub fn field_grid(&self) -> &Grid {
        self.plan.field_grid()
    }

    pub fn focus_grid(&self) -> &Grid {
        self.plan.focus_grid()
    }
}

impl LinearMap for ScanMap {
    fn rows(&self) -> usize {
        self.plan.cones() * self.plan.focus_grid().len()
    }

    fn cols(&self) -> usize {
        self.plan.field_grid().len()
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let g: Vec<f64> = x.iter().zip(&self.weight).map(|(a, b)| a * b).collect();
        self.plan.forward(&g).concat()
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let m = self.plan.focus_grid().len();
        let parts: Vec<Vec<f64>> = y.chunks(m).map(|c| c.to_vec()).collect();
        self.plan
            .adjoint(&parts)
            .iter()
            .zip(&self.weight)
            .map(|(a, b)| a * b)
            .collect()
    }
}

/// Poisson photon-count noise: `y ↦ Poisson(κ y) / κ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub photons_per_unit: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn poisson(photons_per_unit: f64, seed: u64) -> Result<Self> {
        if !(photons_per_unit > 0.0) || !photons_per_unit.is_finite() {
            return Err(Error::invalid(format!(
                "photon count scale must be positive, got {photons_per_unit}"
            )));
        }
        Ok(NoiseModel { photons_per_unit, seed })
    }
}

/// Draws one noisy copy of `data`. Entries down to `-1e-12 · max(data)` are
/// read as zero (rounding in FFT-based simulations); anything more negative
/// is rejected.
pub fn apply_noise(model: &NoiseModel, data: &[f64]) -> Result<Vec<f64>> {
    let kappa = model.photons_per_unit;
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::invalid("photon count scale must be positive"));
    }
    let top = data.iter().copied().fold(0.0, f64::max);
    if let Some(bad) = data.iter().find(|&&y| !(y >= -1e-12 * top)) {
        return Err(Error::invalid(format!("noise needs non-negative intensities, found {bad}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    data.iter()
        .map(|&y| {
            let mean = kappa * y.max(0.0);
            if mean == 0.0 {
                return Ok(0.0);
            }
            let dist = Poisson::new(mean).map_err(|e| Error::invalid(format!("Poisson mean {mean}: {e}")))?;
            Ok(dist.sample(&mut rng) / kappa)
        })
        .collect()
}

/// Seed for the named random stream of a run: FNV-1a hash of the name mixed
/// into the run seed by one SplitMix64 step.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = (seed ^ h).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    /// Mean of `(recon - truth)/truth`.
    pub signed: f64,
    /// Mean of `|recon - truth|/truth`.
    pub absolute: f64,
    /// Number of cells with `truth > eps_bg`.
    pub cells: usize,
}

/// Mean relative error over cells where the truth exceeds `eps_bg`.
pub fn relative_error(truth: &ScalarField, recon: &ScalarField, eps_bg: f64) -> Result<ErrorMetrics> {
    truth.check_same_grid(recon, "relative error")?;
    if !(eps_bg >= 0.0) {
        return Err(Error::invalid("background threshold must be >= 0"));
    }
    let (mut signed, mut absolute, mut cells) = (0.0, 0.0, 0usize);
    for (&t, &r) in truth.values().iter().zip(recon.values()) {
        if t > eps_bg {
            let e = (r - t) / t;
            signed += e;
            absolute += e.abs();
            cells += 1;
        }
    }
    if cells == 0 {
        return Err(Error::EmptyMask(eps_bg));
    }
    Ok(ErrorMetrics {
        signed: signed / cells as f64,
        absolute: absolute / cells as f64,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Identity(usize);

    impl LinearMap for Identity {
        fn rows(&self) -> usize {
            self.0
        }
        fn cols(&self) -> usize {
            self.0
        }
        fn forward(&self, x: &[f64]) -> Vec<f64> {
            x.to_vec()
        }
        fn adjoint(&self, y: &[f64]) -> Vec<f64> {
            y.to_vec()
        }
    }

    struct Broken;

    impl LinearMap for Broken {
        fn rows(&self) -> usize {
            3
        }
        fn cols(&self) -> usize {
            3
        }
        fn forward(&self, x: &[f64]) -> Vec<f64> {
            vec![x[0] + x[1], x[1], x[2]]
        }
        fn adjoint(&self, y: &[f64]) -> Vec<f64> {
            y.to_vec()
        }
    }

    #[test]
    fn identity_converges_in_one_step() {
        let b: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let r = lsqr(&Identity(100), &b, &LsqrOptions::default()).unwrap();
        assert_eq!(r.iterations(), 1);
        assert!(r.converged);
        for (x, b) in r.solution.iter().zip(&b) {
            assert!((x - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_data_and_bad_operators() {
        let r = lsqr(&Identity(5), &[0.0; 5], &LsqrOptions::default()).unwrap();
        assert!(r.solution.iter().all(|&x| x == 0.0));
        assert!(matches!(
            lsqr(&Broken, &[1.0, 2.0, 3.0], &LsqrOptions::default()),
            Err(Error::InvalidOperator(_))
        ));
        assert!(lsqr(&Identity(5), &[1.0; 4], &LsqrOptions::default()).is_err());
    }

    #[test]
    fn history_is_nonincreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = DenseMap {
            rows: 40,
            cols: 25,
            data: (0..1000).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let b: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = lsqr(&a, &b, &LsqrOptions { max_iters: 60, atol: 1e-14, clamp_nonnegative: false }).unwrap();
        for w in r.history.windows(2) {
            assert!(w[1].residual <= w[0].residual * (1.0 + 1e-12));
        }
        let clamped = lsqr(&a, &b, &LsqrOptions { max_iters: 60, atol: 1e-14, clamp_nonnegative: true }).unwrap();
        assert!(clamped.solution.iter().all(|&x| x >= 0.0));
    }

    // normal equations solved by Gaussian elimination with partial pivoting
    fn normal_solve(a: &DenseMap, b: &[f64]) -> Vec<f64> {
        let n = a.cols;
        let mut m = vec![vec![0.0; n + 1]; n];
        for (i, row) in m.iter_mut().enumerate() {
            for j in 0..n {
                row[j] = (0..a.rows).map(|k| a.data[k * n + i] * a.data[k * n + j]).sum();
            }
            row[n] = (0..a.rows).map(|k| a.data[k * n + i] * b[k]).sum();
        }
        for c in 0..n {
            let p = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
            m.swap(c, p);
            for r in c + 1..n {
                let f = m[r][c] / m[c][c];
                for k in c..=n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
        let mut x = vec![0.0; n];
        for c in (0..n).rev() {
            let s: f64 = (c + 1..n).map(|k| m[c][k] * x[k]).sum();
            x[c] = (m[c][n] - s) / m[c][c];
        }
        x
    }

    #[test]
    fn dense_least_squares_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = DenseMap {
            rows: 30,
            cols: 20,
            data: (0..600).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let b: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let want = normal_solve(&a, &b);
        let r = lsqr(&a, &b, &LsqrOptions { max_iters: 200, atol: 1e-14, clamp_nonnegative: false }).unwrap();
        let err = r.solution.iter().zip(&want).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn noise_is_deterministic_and_concentrates() {
        let data: Vec<f64> = (0..10_000).map(|i| 0.5 + (i % 7) as f64 * 0.25).collect();
        let m = NoiseModel::poisson(1e8, 42).unwrap();
        let a = apply_noise(&m, &data).unwrap();
        let b = apply_noise(&m, &data).unwrap();
        assert_eq!(a, b);
        let worst = a.iter().zip(&data).map(|(a, d)| ((a - d) / d).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-3, "{worst}");
        let other = apply_noise(&NoiseModel::poisson(1e8, 43).unwrap(), &data).unwrap();
        assert_ne!(a, other);
        assert!(apply_noise(&m, &[0.0; 10]).unwrap().iter().all(|&x| x == 0.0));
        assert!(apply_noise(&m, &[1.0, -0.5]).is_err());
        assert_eq!(apply_noise(&m, &[1.0, -1e-14]).unwrap()[1], 0.0);
        assert!(NoiseModel::poisson(0.0, 1).is_err());
    }

    #[test]
    fn small_means_use_integer_counts() {
        let m = NoiseModel::poisson(2.0, 9).unwrap();
        let out = apply_noise(&m, &[1.5; 1000]).unwrap();
        assert!(out.iter().all(|&x| (2.0 * x).fract() == 0.0));
        let mean = out.iter().sum::<f64>() / 1000.0;
        // Poisson(3)/2 has standard deviation √3/2; 3σ of the sample mean
        assert!((mean - 1.5).abs() < 3.0 * 3f64.sqrt() / 2.0 / 1000f64.sqrt());
    }

    #[test]
    fn derived_seeds_differ_by_stream() {
        assert_ne!(derive_seed(1, "noise"), derive_seed(1, "phantom"));
        assert_ne!(derive_seed(1, "noise"), derive_seed(2, "noise"));
        assert_eq!(derive_seed(7, "noise"), derive_seed(7, "noise"));
    }

    #[test]
    fn error_metric_cases() {
        let g = Grid::centered(2, 4.0, 4).unwrap();
        let t = ScalarField::from_fn(g, |x| if x[0] > 0.0 { 2.0 } else { 0.0 });
        let e = relative_error(&t, &t, 0.1).unwrap();
        assert_eq!((e.signed, e.absolute, e.cells), (0.0, 0.0, 8));
        let e = relative_error(&t, &t.scaled(1.1), 0.1).unwrap();
        assert!((e.signed - 0.1).abs() < 1e-12 && (e.absolute - 0.1).abs() < 1e-12);
        let mut alt = t.clone();
        let mut flip = 1.0;
        for v in alt.values_mut().iter_mut().filter(|v| **v > 0.0) {
            *v *= 1.0 + 0.1 * flip;
            flip = -flip;
        }
        let e = relative_error(&t, &alt, 0.1).unwrap();
        assert!(e.signed.abs() < 1e-12 && (e.absolute - 0.1).abs() < 1e-12);
        assert!(matches!(
            relative_error(&ScalarField::zeros(g), &t, 0.1),
            Err(Error::EmptyMask(_))
        ));
    }

    #[test]
    fn scan_map_passes_the_dot_test() {
        let g = Grid::centered(2, 10.0, 16).unwrap();
        let v = ScalarField::from_fn(g, |x| 1.0 + 0.02 * x[0]);
        let aps = [Aperture::cone_2d(0.0, 0.4).unwrap(), Aperture::cone_2d(1.0, 0.4).unwrap()];
        let map = ScanMap::new(&v, &g, &aps).unwrap();
        assert_eq!((map.rows(), map.cols()), (512, 256));
        assert!(dot_test(&map, 1) < 1e-12);
    }
}
