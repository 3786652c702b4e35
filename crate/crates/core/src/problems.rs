//! Benchmark problem families: conditioned random MIQPs, the hybrid vehicle
//! energy-management problem and l0-penalized regression / ARX segmentation.

use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::problem::{MiqpProblem, ProblemData};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomMiqpConfig {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub q: usize,
    pub kappa: f64,
    pub seed: u64,
}

impl RandomMiqpConfig {
    pub fn new(n: usize, m: usize, p: usize, q: usize, seed: u64) -> Self {
        Self {
            n,
            m,
            p,
            q,
            kappa: 10.0,
            seed,
        }
    }
}

const MAX_RESAMPLE: usize = 100;

fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, sd: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| {
        let x: f64 = StandardNormal.sample(rng);
        sd * x
    })
}

fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| {
        let x: f64 = StandardNormal.sample(rng);
        sd * x
    })
}

/// Random SPD matrix `U diag(sigma) U'` with condition number exactly `kappa`.
pub fn conditioned_hessian(n: usize, kappa: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, n, n, 1.0);
    let u = g.qr().q();
    let half = kappa.ln() / 2.0;
    let sigma = DVector::from_fn(n, |i, _| {
        if n == 1 {
            1.0
        } else {
            (-half + 2.0 * half * i as f64 / (n - 1) as f64).exp()
        }
    });
    let q = &u * DMatrix::from_diagonal(&sigma) * u.transpose();
    // Exact symmetry; the product is symmetric only up to rounding.
    (&q + q.transpose()) * 0.5
}

/// Seeded random MIQP with binaries on the first `p` coordinates and a
/// planted feasible point.
pub fn gen_random_miqp(cfg: &RandomMiqpConfig) -> Result<MiqpProblem> {
    let RandomMiqpConfig {
        n,
        m,
        p,
        q,
        kappa,
        seed,
    } = *cfg;
    if n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }
    if p > n {
        return Err(Error::Config(format!("p = {p} exceeds n = {n}")));
    }
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::Config(format!("kappa = {kappa} must be >= 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hq = conditioned_hessian(n, kappa, &mut rng);
    let c = gaussian_vector(&mut rng, n, 1.0);
    let a = gaussian_matrix(&mut rng, m, n, 0.05);
    let box_dist = Uniform::new(0.0, 100.0).expect("valid range");
    let u = DVector::from_fn(m, |_, _| box_dist.sample(&mut rng));
    let l = DVector::from_fn(m, |_, _| -box_dist.sample(&mut rng));
    let a_eq = gaussian_matrix(&mut rng, q, n, 1.0);

    for _ in 0..MAX_RESAMPLE {
        let z0 = DVector::from_fn(n, |i, _| {
            if i < p {
                if rng.random::<bool>() {
                    1.0
                } else {
                    0.0
                }
            } else {
                let x: f64 = StandardNormal.sample(&mut rng);
                x
            }
        });
        let az = &a * &z0;
        if (0..m).any(|i| az[i] < l[i] || az[i] > u[i]) {
            continue;
        }
        let b_eq = &a_eq * &z0;
        return ProblemData::new(hq, c)
            .with_inequalities(a, l, u)
            .with_equalities(a_eq, b_eq)
            .with_unit_binaries(p)
            .build();
    }
    Err(Error::Config(format!(
        "no feasible planted point after {MAX_RESAMPLE} draws"
    )))
}

/// Hybrid vehicle energy management over `t_horizon` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleConfig {
    pub t_horizon: usize,
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub eta: f64,
    pub e_max: f64,
    pub p_max: f64,
    pub e0: f64,
    pub p_des: Vec<f64>,
    /// Added to every diagonal entry of the Hessian.
    pub regularization: f64,
}

impl VehicleConfig {
    /// Default parameters with a seeded smooth demand profile.
    pub fn seeded(t_horizon: usize, seed: u64) -> Self {
        let p_max = 1.0;
        let e_max = 40.0;
        Self {
            t_horizon,
            tau: 1.0,
            alpha: 1.0,
            beta: 10.0,
            gamma: 1.0,
            delta: 10.0,
            eta: 1.0,
            e_max,
            p_max,
            e0: e_max,
            p_des: smooth_demand(t_horizon, p_max, seed),
            regularization: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.p_des.len() != self.t_horizon {
            return Err(Error::DimensionMismatch {
                field: "P_des".into(),
                expected: self.t_horizon.to_string(),
                found: self.p_des.len().to_string(),
            });
        }
        if !(self.e_max > 0.0 && self.p_max > 0.0 && self.tau > 0.0) {
            return Err(Error::Config("capacities and tau must be positive".into()));
        }
        if !(self.delta >= 0.0 && self.eta >= 0.0 && self.regularization >= 0.0) {
            return Err(Error::Config(
                "delta, eta and regularization must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Smooth random profile in `[0, 1.5 p_max]`: a few low-frequency sinusoids
/// with seeded amplitudes and phases, rescaled to the band.
pub fn smooth_demand(t_horizon: usize, p_max: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comps: Vec<(f64, f64, f64)> = (1..=3)
        .map(|k| {
            let amp = rng.random_range(0.3..1.0) / k as f64;
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let freq = k as f64 * rng.random_range(0.5..1.5);
            (amp, phase, freq)
        })
        .collect();
    let raw: Vec<f64> = (0..t_horizon)
        .map(|t| {
            let s = t as f64 / t_horizon.max(1) as f64;
            comps
                .iter()
                .map(|(a, ph, f)| a * (std::f64::consts::TAU * f * s + ph).sin())
                .sum()
        })
        .collect();
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    raw.iter()
        .map(|x| {
            let unit = if span > 0.0 { (x - lo) / span } else { 0.5 };
            1.5 * p_max * unit
        })
        .collect()
}

/// Variable layout of the vehicle problem.
#[derive(Debug, Clone, Copy)]
pub struct VehicleLayout {
    pub t_horizon: usize,
}

impl VehicleLayout {
    /// Energy `E_t`, `t = 0..=T`.
    pub fn energy(&self, t: usize) -> usize {
        t
    }
    pub fn p_batt(&self, t: usize) -> usize {
        self.t_horizon + 1 + t
    }
    pub fn p_eng(&self, t: usize) -> usize {
        2 * self.t_horizon + 1 + t
    }
    pub fn engine_on(&self, t: usize) -> usize {
        3 * self.t_horizon + 1 + t
    }
    pub fn switch_slack(&self, t: usize) -> usize {
        4 * self.t_horizon + 1 + t
    }
    pub fn n(&self) -> usize {
        5 * self.t_horizon + 1
    }
}

/// Builds the vehicle MIQP. Binary `z_t` is the engine on/off state; `s_t`
/// is the epigraph of the switch-on indicator `max(z_t - z_{t-1}, 0)` with
/// the engine off before the horizon.
pub fn build_hybrid_vehicle(cfg: &VehicleConfig) -> Result<MiqpProblem> {
    cfg.validate()?;
    let tt = cfg.t_horizon;
    let lay = VehicleLayout { t_horizon: tt };
    let n = lay.n();

    let mut q = DMatrix::<f64>::identity(n, n) * cfg.regularization;
    let mut c = DVector::<f64>::zeros(n);
    q[(lay.energy(tt), lay.energy(tt))] += 2.0 * cfg.eta;
    c[lay.energy(tt)] -= 2.0 * cfg.eta * cfg.e_max;
    for t in 0..tt {
        q[(lay.p_eng(t), lay.p_eng(t))] += 2.0 * cfg.alpha;
        c[lay.p_eng(t)] += cfg.beta;
        c[lay.engine_on(t)] += cfg.gamma;
        c[lay.switch_slack(t)] += cfg.delta;
    }

    let m = 6 * tt;
    let mut a = DMatrix::<f64>::zeros(m, n);
    let mut l = DVector::<f64>::zeros(m);
    let mut u = DVector::<f64>::zeros(m);
    let inf = f64::INFINITY;
    let mut row = 0;
    let mut push = |a: &mut DMatrix<f64>, coeffs: &[(usize, f64)], lo: f64, hi: f64| {
        for &(j, v) in coeffs {
            a[(row, j)] += v;
        }
        l[row] = lo;
        u[row] = hi;
        row += 1;
    };
    for t in 1..=tt {
        push(&mut a, &[(lay.energy(t), 1.0)], 0.0, cfg.e_max);
    }
    for t in 0..tt {
        push(&mut a, &[(lay.p_eng(t), 1.0)], 0.0, cfg.p_max);
        push(
            &mut a,
            &[(lay.p_eng(t), 1.0), (lay.engine_on(t), -cfg.p_max)],
            -inf,
            0.0,
        );
        push(
            &mut a,
            &[(lay.p_batt(t), 1.0), (lay.p_eng(t), 1.0)],
            cfg.p_des[t],
            inf,
        );
        let mut sw = vec![(lay.switch_slack(t), 1.0), (lay.engine_on(t), -1.0)];
        if t > 0 {
            sw.push((lay.engine_on(t - 1), 1.0));
        }
        push(&mut a, &sw, 0.0, inf);
        push(&mut a, &[(lay.switch_slack(t), 1.0)], 0.0, inf);
    }

    let mut a_eq = DMatrix::<f64>::zeros(tt + 1, n);
    let mut b_eq = DVector::<f64>::zeros(tt + 1);
    for t in 0..tt {
        a_eq[(t, lay.energy(t + 1))] = 1.0;
        a_eq[(t, lay.energy(t))] = -1.0;
        a_eq[(t, lay.p_batt(t))] = cfg.tau;
    }
    a_eq[(tt, lay.energy(0))] = 1.0;
    b_eq[tt] = cfg.e0;

    let mut a_bar = DMatrix::<f64>::zeros(tt, n);
    for t in 0..tt {
        a_bar[(t, lay.engine_on(t))] = 1.0;
    }

    ProblemData::new(q, c)
        .with_inequalities(a, l, u)
        .with_equalities(a_eq, b_eq)
        .with_binaries(a_bar, DVector::zeros(tt), DVector::from_element(tt, 1.0))
        .with_offset(cfg.eta * cfg.e_max * cfg.e_max)
        .build()
}

/// `min |A theta - b|^2 + gamma sum(omega)` with `-M omega <= theta <= M omega`.
///
/// Variables are `theta` (k entries) followed by the binaries `omega`.
pub fn build_l0_lagrangian(
    amat: &DMatrix<f64>,
    b: &DVector<f64>,
    gamma_reg: f64,
    m_bound: f64,
    regularization: f64,
) -> Result<MiqpProblem> {
    if amat.nrows() != b.len() {
        return Err(Error::DimensionMismatch {
            field: "b".into(),
            expected: amat.nrows().to_string(),
            found: b.len().to_string(),
        });
    }
    if !(m_bound > 0.0) {
        return Err(Error::Config("M must be positive".into()));
    }
    let k = amat.ncols();
    let n = 2 * k;
    let mut q = DMatrix::<f64>::identity(n, n) * regularization;
    let ata = amat.transpose() * amat * 2.0;
    q.view_mut((0, 0), (k, k)).add_assign(&ata);
    let mut c = DVector::<f64>::zeros(n);
    c.rows_mut(0, k).copy_from(&(amat.transpose() * b * -2.0));
    for i in 0..k {
        c[k + i] = gamma_reg;
    }
    let (a, l, u) = big_m_coupling(n, (0..k).map(|i| (i, k + i)), m_bound);
    let a_bar = DMatrix::from_fn(k, n, |i, j| if j == k + i { 1.0 } else { 0.0 });
    ProblemData::new(q, c)
        .with_inequalities(a, l, u)
        .with_binaries(a_bar, DVector::zeros(k), DVector::from_element(k, 1.0))
        .with_offset(b.norm_squared())
        .build()
}

/// Two one-sided rows per (continuous, binary) pair:
/// `x - M w <= 0` and `x + M w >= 0`.
fn big_m_coupling(
    n: usize,
    pairs: impl Iterator<Item = (usize, usize)>,
    m_bound: f64,
) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let pairs: Vec<_> = pairs.collect();
    let m = 2 * pairs.len();
    let mut a = DMatrix::<f64>::zeros(m, n);
    let mut l = DVector::<f64>::zeros(m);
    let mut u = DVector::<f64>::zeros(m);
    for (r, &(x, w)) in pairs.iter().enumerate() {
        a[(2 * r, x)] = 1.0;
        a[(2 * r, w)] = -m_bound;
        l[2 * r] = f64::NEG_INFINITY;
        u[2 * r] = 0.0;
        a[(2 * r + 1, x)] = 1.0;
        a[(2 * r + 1, w)] = m_bound;
        l[2 * r + 1] = 0.0;
        u[2 * r + 1] = f64::INFINITY;
    }
    (a, l, u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArxSegConfig {
    pub na: usize,
    pub nb: usize,
    /// Input delay: the first input regressor is `u(t - nk)`.
    pub nk: usize,
    pub gamma_reg: f64,
    pub m_bound: f64,
    pub regularization: f64,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
}

impl ArxSegConfig {
    pub fn new(y: Vec<f64>, u: Vec<f64>, gamma_reg: f64) -> Self {
        Self {
            na: 1,
            nb: 2,
            nk: 1,
            gamma_reg,
            m_bound: 1.0,
            regularization: 1e-2,
            y,
            u,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.y.len()
    }

    pub fn n_params(&self) -> usize {
        self.na + self.nb
    }

    /// First (1-based) sample with a complete regressor.
    pub fn first_sample(&self) -> usize {
        self.na.max(self.nk + self.nb - 1) + 1
    }

    /// `phi(t) = [-y(t-1) .. -y(t-na), u(t-nk) .. u(t-nk-nb+1)]`, 1-based `t`.
    pub fn regressor(&self, t: usize) -> Vec<f64> {
        let mut phi = Vec::with_capacity(self.n_params());
        for i in 1..=self.na {
            phi.push(-self.y[t - i - 1]);
        }
        for i in 0..self.nb {
            phi.push(self.u[t - self.nk - i - 1]);
        }
        phi
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.len() != self.u.len() {
            return Err(Error::DimensionMismatch {
                field: "u".into(),
                expected: self.y.len().to_string(),
                found: self.u.len().to_string(),
            });
        }
        if self.nk == 0 || self.nb == 0 {
            return Err(Error::Config("nb and nk must be positive".into()));
        }
        if self.n_samples() < self.first_sample() {
            return Err(Error::Config(format!(
                "need at least {} samples, got {}",
                self.first_sample(),
                self.n_samples()
            )));
        }
        if !(self.m_bound > 0.0) {
            return Err(Error::Config("M must be positive".into()));
        }
        Ok(())
    }

    /// Index of `theta(1)_i`.
    pub fn theta1_index(&self, i: usize) -> usize {
        i
    }

    /// Index of `delta(t)_i`, `t = 2..=N`.
    pub fn delta_index(&self, t: usize, i: usize) -> usize {
        self.n_params() * (t - 1) + i
    }

    /// Index of the binary `omega(t)_i`, `t = 2..=N`.
    pub fn omega_index(&self, t: usize, i: usize) -> usize {
        let d = self.n_params();
        d * self.n_samples() + d * (t - 2) + i
    }

    pub fn n_vars(&self) -> usize {
        let d = self.n_params();
        d + 2 * d * (self.n_samples() - 1)
    }

    /// `theta(t)` for `t = 1..=N` from a solution vector.
    pub fn parameter_trajectory(&self, z: &DVector<f64>) -> Vec<DVector<f64>> {
        let d = self.n_params();
        let mut out = Vec::with_capacity(self.n_samples());
        let mut th = DVector::from_fn(d, |i, _| z[self.theta1_index(i)]);
        out.push(th.clone());
        for t in 2..=self.n_samples() {
            for i in 0..d {
                th[i] += z[self.delta_index(t, i)];
            }
            out.push(th.clone());
        }
        out
    }
}

/// Time (1-based) of the largest parameter jump `|theta(t) - theta(t-1)|`.
pub fn dominant_change(traj: &[DVector<f64>]) -> Option<usize> {
    (1..traj.len())
        .map(|k| (k + 1, (&traj[k] - &traj[k - 1]).norm()))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(t, _)| t)
}

/// ARX segmentation MIQP with increment variables and one binary per
/// parameter component and step.
pub fn build_arx_segmentation(cfg: &ArxSegConfig) -> Result<MiqpProblem> {
    cfg.validate()?;
    let d = cfg.n_params();
    let nn = cfg.n_samples();
    let n = cfg.n_vars();
    let t0 = cfg.first_sample();
    let rows = nn + 1 - t0;
    let mut j = DMatrix::<f64>::zeros(rows, n);
    let mut yv = DVector::<f64>::zeros(rows);
    for (r, t) in (t0..=nn).enumerate() {
        let phi = cfg.regressor(t);
        for i in 0..d {
            j[(r, cfg.theta1_index(i))] = phi[i];
            for s in 2..=t {
                j[(r, cfg.delta_index(s, i))] = phi[i];
            }
        }
        yv[r] = cfg.y[t - 1];
    }
    let mut q = j.transpose() * &j * 2.0;
    for i in 0..n {
        q[(i, i)] += cfg.regularization;
    }
    let mut c = j.transpose() * &yv * -2.0;
    let mut pairs = Vec::with_capacity(d * (nn - 1));
    for t in 2..=nn {
        for i in 0..d {
            c[cfg.omega_index(t, i)] += cfg.gamma_reg;
            pairs.push((cfg.delta_index(t, i), cfg.omega_index(t, i)));
        }
    }
    let p = pairs.len();
    let mut a_bar = DMatrix::<f64>::zeros(p, n);
    for (r, &(_, w)) in pairs.iter().enumerate() {
        a_bar[(r, w)] = 1.0;
    }
    let (a, l, u) = big_m_coupling(n, pairs.into_iter(), cfg.m_bound);
    ProblemData::new(q, c)
        .with_inequalities(a, l, u)
        .with_binaries(a_bar, DVector::zeros(p), DVector::from_element(p, 1.0))
        .with_offset(yv.norm_squared())
        .build()
}

/// Maximal-length 7-bit LFSR sequence (`x^7 + x^6 + 1`) mapped to +-1.
pub fn prbs(n_samples: usize, state: u8) -> Vec<f64> {
    assert!(state & 0x7f != 0, "LFSR state must be nonzero");
    let mut s = state & 0x7f;
    (0..n_samples)
        .map(|_| {
            let bit = ((s >> 6) ^ (s >> 5)) & 1;
            s = ((s << 1) | bit) & 0x7f;
            if bit == 1 {
                1.0
            } else {
                -1.0
            }
        })
        .collect()
}

/// Register state of the default ARX input. Its sequence changes sign at
/// samples 17, 18 and 19, so a delay switch at t = 20 is identifiable from
/// noise-free data: with `u(t-1) = u(t-2)` both delays predict the same
/// output and the switch time would be ambiguous.
pub const ARX_PRBS_STATE: u8 = 0x09;

/// Output of `y(t) + 0.9 y(t-1) = u(t - nk(t)) + e(t)` for the input `u`,
/// where the delay is 2 before `switch_time` and 1 from then on, and
/// `e` is seeded Gaussian noise. Samples before `t = 1` are zero.
pub fn simulate_transport_delay(u: &[f64], switch_time: usize, noise_var: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = noise_var.max(0.0).sqrt();
    let n_samples = u.len();
    let mut y = vec![0.0; n_samples];
    let at = |v: &[f64], t: isize| if t >= 1 { v[(t - 1) as usize] } else { 0.0 };
    for t in 1..=n_samples as isize {
        let delay = if (t as usize) < switch_time { 2 } else { 1 };
        let e: f64 = StandardNormal.sample(&mut rng);
        let val = -0.9 * at(&y, t - 1) + at(u, t - delay) + sd * e;
        y[(t - 1) as usize] = val;
    }
    y
}

/// True `theta(t) = [a, b1, b2]` of [`simulate_transport_delay`].
pub fn transport_delay_parameters(n_samples: usize, switch_time: usize) -> Vec<DVector<f64>> {
    (1..=n_samples)
        .map(|t| {
            if t < switch_time {
                DVector::from_vec(vec![0.9, 0.0, 1.0])
            } else {
                DVector::from_vec(vec![0.9, 1.0, 0.0])
            }
        })
        .collect()
}
