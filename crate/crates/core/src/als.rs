//! Rank-1 (pure tensor product) minimisation of `A_M^u`.
//!
//! A separable function `R(eta) = prod_s R_s(eta_s)` stays a product of
//! per-site factors after any relabeling of sites, and sums of products of
//! such functions over `{0,1}^N` factor into products of per-site sums. Every
//! term of the expanded functional is of that form, so `A_M^u(R)` costs
//! `O(N)` per term and `O(K N^2)` in total, without touching the `2^N`
//! configurations.
//!
//! The functional restricted to one site factor `(R_s(1), R_s(0)) = (a, b)`
//! is a quadratic in `(a, b)`. Its six coefficients are recovered by
//! evaluating at six points, and the slice minimiser is a 2x2 solve.
//! Alternating over the sites in index order gives the ALS sweep.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{ConfigFunction, DenseFunction, Direction};
use crate::lattice::{Configuration, LatticeSpec, Relabeling, Source, WrappedSite};

/// Per-site factor pairs `[R_s(0), R_s(1)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableFunction {
    factors: Vec<[f64; 2]>,
}

impl SeparableFunction {
    pub fn new(factors: Vec<[f64; 2]>) -> Result<Self> {
        if factors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("separable factors"));
        }
        Ok(Self { factors })
    }

    pub fn constant_one(n: usize) -> Self {
        Self {
            factors: vec![[1.0, 1.0]; n],
        }
    }

    /// Factors drawn independently from the uniform distribution on `[0, 1]`.
    pub fn random_uniform<R: Rng>(n: usize, rng: &mut R) -> Self {
        Self {
            factors: (0..n)
                .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
                .collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[[f64; 2]] {
        &self.factors
    }

    pub fn factor(&self, site: usize) -> [f64; 2] {
        self.factors[site]
    }

    pub fn set_factor(&mut self, site: usize, value: [f64; 2]) {
        self.factors[site] = value;
    }

    /// Multiplies the factor pair at `site` by `c`.
    pub fn scale_site(&mut self, site: usize, c: f64) {
        self.factors[site][0] *= c;
        self.factors[site][1] *= c;
    }
}

impl ConfigFunction for SeparableFunction {
    fn value(&self, cfg: Configuration) -> f64 {
        self.factors
            .iter()
            .enumerate()
            .map(|(s, f)| f[cfg.occupancy(s)])
            .product()
    }
}

/// Value at every configuration.
pub fn densify(spec: &LatticeSpec, r: &SeparableFunction, guard: usize) -> Result<DenseFunction> {
    if spec.n() > guard {
        return Err(Error::SizeGuard {
            what: "densify",
            size: 1u128 << spec.n().min(127),
            limit: 1u128 << guard,
        });
    }
    Ok(DenseFunction::from_fn(spec.n(), |c| r.value(c)))
}

/// `eta -> scale * prod_t factors[t][eta_t]`.
#[derive(Debug, Clone)]
struct SiteProduct {
    scale: f64,
    factors: Vec<[f64; 2]>,
}

impl SiteProduct {
    fn of(r: &SeparableFunction) -> Self {
        Self {
            scale: 1.0,
            factors: r.factors.clone(),
        }
    }

    /// `eta -> R(relabel(eta))`: the factor of site `s` moves to the site it
    /// reads from; constant sources fold into the scale.
    fn relabeled(r: &SeparableFunction, relabel: &Relabeling) -> Self {
        let mut out = Self {
            scale: 1.0,
            factors: vec![[1.0, 1.0]; r.n()],
        };
        for (s, src) in relabel.sources.iter().enumerate() {
            let f = r.factors[s];
            match *src {
                Source::Site(t) => {
                    out.factors[t][0] *= f[0];
                    out.factors[t][1] *= f[1];
                }
                Source::Vacant => out.scale *= f[0],
                Source::Occupied => out.scale *= f[1],
            }
        }
        out
    }

    /// `sum_eta [eta_vacant = 0] P(eta) Q(eta)`.
    fn inner(&self, other: &Self, vacant: Option<usize>) -> f64 {
        let mut acc = self.scale * other.scale;
        for (t, (a, b)) in self.factors.iter().zip(&other.factors).enumerate() {
            acc *= if Some(t) == vacant {
                a[0] * b[0]
            } else {
                a[0] * b[0] + a[1] * b[1]
            };
        }
        acc
    }

    /// `sum_eta [eta_vacant = 0] P(eta)`.
    fn total(&self, vacant: Option<usize>) -> f64 {
        let mut acc = self.scale;
        for (t, a) in self.factors.iter().enumerate() {
            acc *= if Some(t) == vacant { a[0] } else { a[0] + a[1] };
        }
        acc
    }
}

/// `A_M^u(R)` through per-site sums, never enumerating configurations.
pub fn eval_separable_a(spec: &LatticeSpec, r: &SeparableFunction, u: &Direction) -> f64 {
    let base = SiteProduct::of(r);
    let norm = base.inner(&base, None);
    let count_all = 2f64.powi(spec.n() as i32);
    let mut total = 0.0;
    for (k, jump) in spec.jumps().iter().enumerate() {
        let c = jump.dot(u.as_slice());
        let mut term = 0.0;
        if let WrappedSite::Site(v) = spec.landing_site(k) {
            let mask = Some(v);
            let jumped = SiteProduct::relabeled(r, spec.tagged_relabeling(k));
            term += c * c * count_all / 2.0
                + jumped.inner(&jumped, mask)
                + base.inner(&base, mask)
                - 2.0 * jumped.inner(&base, mask)
                + 2.0 * c * (jumped.total(mask) - base.total(mask));
        }
        let mut swaps = 0.0;
        for pair in spec.swap_pairs(k) {
            let swapped = swapped_product(r, pair.from, pair.to);
            swaps += swapped.inner(&swapped, None) + norm - 2.0 * swapped.inner(&base, None);
        }
        total += jump.probability * (term + 0.5 * swaps);
    }
    total
}

fn swapped_product(r: &SeparableFunction, y: usize, z: usize) -> SiteProduct {
    let mut p = SiteProduct::of(r);
    p.factors.swap(y, z);
    p
}

/// Coefficients of `alpha1 a^2 + alpha2 b^2 + alpha3 a b + alpha4 a + alpha5 b + alpha6`
/// with `a = R_s(1)` and `b = R_s(0)`. Stored as `alpha[0..6]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteQuadratic {
    pub alpha: [f64; 6],
}

impl SiteQuadratic {
    pub fn eval(&self, a: f64, b: f64) -> f64 {
        let [a1, a2, a3, a4, a5, a6] = self.alpha;
        a1 * a * a + a2 * b * b + a3 * a * b + a4 * a + a5 * b + a6
    }
}

/// Recovers the slice quadratic at `site` by interpolation at
/// `(a, b) = (0,0), (1,0), (0,1), (2,0), (0,2), (1,1)`.
pub fn fit_site_quadratic(
    spec: &LatticeSpec,
    r: &SeparableFunction,
    u: &Direction,
    site: usize,
) -> SiteQuadratic {
    let mut trial = r.clone();
    let mut at = |a: f64, b: f64| {
        trial.factors[site] = [b, a];
        eval_separable_a(spec, &trial, u)
    };
    let f00 = at(0.0, 0.0);
    let f10 = at(1.0, 0.0);
    let f01 = at(0.0, 1.0);
    let f20 = at(2.0, 0.0);
    let f02 = at(0.0, 2.0);
    let f11 = at(1.0, 1.0);
    let a1 = 0.5 * f20 - f10 + 0.5 * f00;
    let a2 = 0.5 * f02 - f01 + 0.5 * f00;
    let a3 = f11 - f10 - f01 + f00;
    let a4 = f10 - a1 - f00;
    let a5 = f01 - a2 - f00;
    SiteQuadratic {
        alpha: [a1, a2, a3, a4, a5, f00],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteSolution {
    pub a: f64,
    pub b: f64,
    /// The 2x2 system was singular and the minimum-norm solution was taken.
    pub singular: bool,
}

/// Minimiser of a slice quadratic: `[[2a1, a3], [a3, 2a2]] (a, b) = (-a4, -a5)`.
pub fn solve_site(q: &SiteQuadratic) -> SiteSolution {
    let [a1, a2, a3, a4, a5, _] = q.alpha;
    let (m11, m12, m22) = (2.0 * a1, a3, 2.0 * a2);
    let (r1, r2) = (-a4, -a5);
    let det = m11 * m22 - m12 * m12;
    let scale = m11.abs().max(m22.abs()).max(m12.abs());
    if det.abs() > 1e-14 * scale * scale && scale > 0.0 {
        return SiteSolution {
            a: (m22 * r1 - m12 * r2) / det,
            b: (m11 * r2 - m12 * r1) / det,
            singular: false,
        };
    }
    // pseudo-inverse through the eigendecomposition of the symmetric matrix
    let mut a = 0.0;
    let mut b = 0.0;
    if scale > 0.0 {
        let half_tr = 0.5 * (m11 + m22);
        let disc = (0.25 * (m11 - m22).powi(2) + m12 * m12).sqrt();
        for lambda in [half_tr + disc, half_tr - disc] {
            if lambda.abs() <= 1e-12 * scale {
                continue;
            }
            let (mut x, mut y) = if m12.abs() > 0.0 {
                (lambda - m22, m12)
            } else if (lambda - m11).abs() <= (lambda - m22).abs() {
                (1.0, 0.0)
            } else {
                (0.0, 1.0)
            };
            let len = (x * x + y * y).sqrt();
            x /= len;
            y /= len;
            let coef = (x * r1 + y * r2) / lambda;
            a += coef * x;
            b += coef * y;
        }
    }
    SiteSolution {
        a,
        b,
        singular: true,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AlsSettings {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for AlsSettings {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_sweeps: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlsReport {
    pub final_value: f64,
    /// Objective after each full sweep; entry 0 is the starting value.
    pub sweep_values: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    pub seed: Option<u64>,
    /// Site updates that fell back to the minimum-norm solve.
    pub singular_slices: usize,
    /// Largest increase of the slice objective over any single site update
    /// (non-positive up to rounding).
    pub max_site_increase: f64,
}

/// Alternating least squares from `start`, stopping once
/// `|v_old - v_new| <= tol |v_new|` or after `max_sweeps` sweeps.
pub fn run_als(
    spec: &LatticeSpec,
    u: &Direction,
    start: SeparableFunction,
    settings: &AlsSettings,
) -> Result<(SeparableFunction, AlsReport)> {
    u.check_dim(spec)?;
    if !(settings.tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "ALS tolerance must be positive, got {}",
            settings.tol
        )));
    }
    if start.n() != spec.n() {
        return Err(Error::LengthMismatch {
            got: start.n(),
            expected: spec.n(),
        });
    }
    let mut r = start;
    let mut v_new = eval_separable_a(spec, &r, u);
    let mut v_old = f64::INFINITY;
    let mut report = AlsReport {
        final_value: v_new,
        sweep_values: vec![v_new],
        sweeps: 0,
        converged: false,
        seed: None,
        singular_slices: 0,
        max_site_increase: f64::NEG_INFINITY,
    };
    while (v_old - v_new).abs() > settings.tol * v_new.abs() {
        if report.sweeps == settings.max_sweeps {
            report.final_value = v_new;
            return Ok((r, report));
        }
        v_old = v_new;
        for site in 0..spec.n() {
            let q = fit_site_quadratic(spec, &r, u, site);
            let [b_old, a_old] = r.factor(site);
            let sol = solve_site(&q);
            if sol.singular {
                report.singular_slices += 1;
            }
            let increase = q.eval(sol.a, sol.b) - q.eval(a_old, b_old);
            report.max_site_increase = report.max_site_increase.max(increase);
            r.set_factor(site, [sol.b, sol.a]);
        }
        v_new = eval_separable_a(spec, &r, u);
        report.sweeps += 1;
        report.sweep_values.push(v_new);
    }
    report.converged = true;
    report.final_value = v_new;
    Ok((r, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestartStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone)]
pub struct MultiStart {
    pub best: SeparableFunction,
    pub best_index: usize,
    pub reports: Vec<AlsReport>,
    pub stats: RestartStats,
}

/// RNG for restart `index` of a seeded multi-start: ChaCha8 seeded from
/// `seed`, one stream per restart.
pub fn restart_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Independent ALS runs from uniform `[0, 1]` starts; restarts run in parallel
/// and results are independent of thread scheduling.
pub fn multi_start(
    spec: &LatticeSpec,
    u: &Direction,
    restarts: usize,
    seed: u64,
    settings: &AlsSettings,
) -> Result<MultiStart> {
    if restarts == 0 {
        return Err(Error::InvalidParameter("restarts must be >= 1".into()));
    }
    let runs: Vec<(SeparableFunction, AlsReport)> = (0..restarts)
        .into_par_iter()
        .map(|i| {
            let mut rng = restart_rng(seed, i);
            let start = SeparableFunction::random_uniform(spec.n(), &mut rng);
            run_als(spec, u, start, settings).map(|(r, mut rep)| {
                rep.seed = Some(seed);
                (r, rep)
            })
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = runs.iter().map(|(_, rep)| rep.final_value).collect();
    let best_index = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let stats = RestartStats {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    let best = runs[best_index].0.clone();
    Ok(MultiStart {
        best,
        best_index,
        reports: runs.into_iter().map(|(_, rep)| rep).collect(),
        stats,
    })
}
