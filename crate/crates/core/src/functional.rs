//! Dense evaluation of the quadratic functionals `A_M^u` and `A_{M,l}^u`.
//!
//! Both functionals are sums over configurations of the same per-configuration
//! summand: a tagged-jump term gated by the landing-site vacancy plus half the
//! squared swap differences. The combined functional sums over all `2^N`
//! configurations; the level functional averages over `C_{M,l}` only.

use crate::error::{Error, Result};
use crate::lattice::{Configuration, LatticeSpec, WrappedSite};

/// Largest `N` for which dense (`2^N`) objects are built unless a caller
/// raises the guard explicitly.
pub const DEFAULT_DENSE_GUARD: usize = 24;

/// A real function on `{0,1}^N`.
pub trait ConfigFunction {
    fn value(&self, cfg: Configuration) -> f64;
}

/// One value per configuration, indexed by the configuration bits.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFunction {
    values: Vec<f64>,
}

impl DenseFunction {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; 1usize << n],
        }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self {
            values: vec![c; 1usize << n],
        }
    }

    pub fn from_fn(n: usize, f: impl Fn(Configuration) -> f64) -> Self {
        Self {
            values: (0..1u64 << n).map(|b| f(Configuration(b))).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v + c).collect(),
        }
    }

    fn check(&self, spec: &LatticeSpec) -> Result<()> {
        let expected = 1usize << spec.n();
        if self.values.len() != expected {
            return Err(Error::LengthMismatch {
                got: self.values.len(),
                expected,
            });
        }
        Ok(())
    }
}

impl ConfigFunction for DenseFunction {
    #[inline]
    fn value(&self, cfg: Configuration) -> f64 {
        self.values[cfg.index()]
    }
}

/// Direction `u` of the quadratic form `u^T D_s u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction(Vec<f64>);

impl Direction {
    pub fn new(u: impl Into<Vec<f64>>) -> Result<Self> {
        let u = u.into();
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("direction"));
        }
        Ok(Self(u))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.clone()
    }

    pub fn check_dim(&self, spec: &LatticeSpec) -> Result<()> {
        if self.0.len() != spec.dim() {
            return Err(Error::InvalidParameter(format!(
                "direction has {} entries, lattice dimension is {}",
                self.0.len(),
                spec.dim()
            )));
        }
        Ok(())
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Iterator over configurations with exactly `level` occupied sites, in
/// increasing order of their bit encoding.
#[derive(Debug, Clone)]
pub struct LevelIter {
    next: Option<u64>,
    limit: u64,
}

impl Iterator for LevelIter {
    type Item = Configuration;

    fn next(&mut self) -> Option<Configuration> {
        let current = self.next?;
        self.next = if current == 0 {
            None
        } else {
            // Gosper's hack: next integer with the same popcount
            let c = current & current.wrapping_neg();
            let r = current + c;
            let next = (((r ^ current) >> 2) / c) | r;
            (r != 0 && next < self.limit).then_some(next)
        };
        Some(Configuration(current))
    }
}

/// Configurations in `C_{M,l}`.
pub fn enumerate_level(spec: &LatticeSpec, level: usize) -> Result<LevelIter> {
    let n = spec.n();
    if level > n {
        return Err(Error::LevelOutOfRange { level, n });
    }
    if n > 63 {
        return Err(Error::SizeGuard {
            what: "level enumeration bits",
            size: n as u128,
            limit: 63,
        });
    }
    let first = if level == 0 { 0 } else { (1u64 << level) - 1 };
    Ok(LevelIter {
        next: Some(first),
        limit: 1u64 << n,
    })
}

/// `binom(n, k)` as an exact integer.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Per-configuration summand of `A_M^u`.
pub fn summand<F: ConfigFunction + ?Sized>(
    spec: &LatticeSpec,
    f: &F,
    u: &Direction,
    cfg: Configuration,
) -> f64 {
    let here = f.value(cfg);
    let mut total = 0.0;
    for (k, jump) in spec.jumps().iter().enumerate() {
        let mut term = 0.0;
        if let WrappedSite::Site(v) = spec.landing_site(k) {
            if !cfg.is_occupied(v) {
                let jumped = spec.tagged_relabeling(k).apply(cfg);
                let diff = jump.dot(u.as_slice()) + f.value(jumped) - here;
                term += diff * diff;
            }
        }
        let mut swaps = 0.0;
        for pair in spec.swap_pairs(k) {
            if cfg.is_occupied(pair.from) != cfg.is_occupied(pair.to) {
                let swapped = cfg
                    .with(pair.from, !cfg.is_occupied(pair.from))
                    .with(pair.to, !cfg.is_occupied(pair.to));
                let diff = f.value(swapped) - here;
                swaps += diff * diff;
            }
        }
        total += jump.probability * (term + 0.5 * swaps);
    }
    total
}

/// `A_M^u(Psi)`: the exact sum over all `2^N` configurations.
pub fn eval_dense_a(spec: &LatticeSpec, psi: &DenseFunction, u: &Direction) -> Result<f64> {
    psi.check(spec)?;
    u.check_dim(spec)?;
    let mut acc = CompensatedSum::default();
    for bits in 0..psi.len() as u64 {
        acc.add(summand(spec, psi, u, Configuration(bits)));
    }
    Ok(acc.value())
}

/// `A_M^u` for any configuration function, by explicit summation.
pub fn eval_full_a<F: ConfigFunction + ?Sized>(
    spec: &LatticeSpec,
    f: &F,
    u: &Direction,
) -> Result<f64> {
    u.check_dim(spec)?;
    let mut acc = CompensatedSum::default();
    for level in 0..=spec.n() {
        for cfg in enumerate_level(spec, level)? {
            acc.add(summand(spec, f, u, cfg));
        }
    }
    Ok(acc.value())
}

/// `A_{M,l}^u(f)`: the summand averaged over configurations of level `l`.
pub fn eval_level_a<F: ConfigFunction + ?Sized>(
    spec: &LatticeSpec,
    f: &F,
    u: &Direction,
    level: usize,
) -> Result<f64> {
    u.check_dim(spec)?;
    let mut acc = CompensatedSum::default();
    for cfg in enumerate_level(spec, level)? {
        acc.add(summand(spec, f, u, cfg));
    }
    Ok(acc.value() / binomial(spec.n(), level) as f64)
}

/// `A_{M,l}^u(f)` for every level `0..=N`.
pub fn eval_all_levels<F: ConfigFunction + ?Sized>(
    spec: &LatticeSpec,
    f: &F,
    u: &Direction,
) -> Result<Vec<f64>> {
    (0..=spec.n())
        .map(|l| eval_level_a(spec, f, u, l))
        .collect()
}
