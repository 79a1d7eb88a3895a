//! Finite periodic lattice around the tagged particle.
//!
//! The lattice is `S_M = {-M..M}^d \ {0}`: the tagged particle sits at the
//! origin and the `N = (2M+1)^d - 1` remaining sites carry one occupancy bit
//! each. Sites are enumerated row-major (first coordinate most significant)
//! over the full grid, skipping the origin, with 0-based indices.
//!
//! Coordinates outside the box are reduced periodically; a point that reduces
//! onto the origin is an *origin copy* and reads as occupied, since the tagged
//! particle is repeated in every periodic image.

use crate::error::{Error, Result};

/// One admissible jump: displacement `v_k` and its rate `p_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jump {
    pub vector: Vec<i32>,
    pub probability: f64,
}

impl Jump {
    pub fn new(vector: impl Into<Vec<i32>>, probability: f64) -> Self {
        Self {
            vector: vector.into(),
            probability,
        }
    }

    pub fn dot(&self, u: &[f64]) -> f64 {
        self.vector
            .iter()
            .zip(u)
            .map(|(&v, &x)| f64::from(v) * x)
            .sum()
    }
}

/// Result of reducing an integer point into the periodic box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WrappedSite {
    Site(usize),
    OriginCopy,
}

/// Occupancy of the `N` lattice sites, one bit per site index.
///
/// Stored in a single word, so configuration-level operations need `N <= 64`.
/// Separable (rank-1) evaluation never materialises configurations and has no
/// such limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Configuration(pub u64);

impl Configuration {
    pub const EMPTY: Configuration = Configuration(0);

    pub fn full(n: usize) -> Self {
        if n >= 64 {
            Configuration(u64::MAX)
        } else {
            Configuration((1u64 << n) - 1)
        }
    }

    pub fn from_sites(sites: &[usize]) -> Self {
        Configuration(sites.iter().fold(0u64, |acc, &s| acc | (1u64 << s)))
    }

    #[inline]
    pub fn bits(self) -> u64 {
        self.0
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn is_occupied(self, site: usize) -> bool {
        (self.0 >> site) & 1 == 1
    }

    #[inline]
    pub fn occupancy(self, site: usize) -> usize {
        ((self.0 >> site) & 1) as usize
    }

    /// Number of occupied sites `l`.
    #[inline]
    pub fn level(self) -> usize {
        self.0.count_ones() as usize
    }

    #[inline]
    pub fn with(self, site: usize, occupied: bool) -> Self {
        if occupied {
            Configuration(self.0 | (1u64 << site))
        } else {
            Configuration(self.0 & !(1u64 << site))
        }
    }
}

/// Popcount of a configuration.
pub fn config_level(cfg: Configuration) -> usize {
    cfg.level()
}

/// Where a site of the transformed configuration reads its occupancy from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Site(usize),
    /// Constant 0: the site vacated by the tagged particle.
    Vacant,
    /// Constant 1: the site reads an origin copy.
    Occupied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelabelKind {
    Swap,
    TaggedJump,
}

/// A configuration transformation written as a site map: the new occupancy
/// of site `s` is the old occupancy at `sources[s]` (or a constant).
#[derive(Debug, Clone, PartialEq)]
pub struct Relabeling {
    pub kind: RelabelKind,
    pub sources: Vec<Source>,
}

impl Relabeling {
    pub fn apply(&self, cfg: Configuration) -> Configuration {
        let mut out = 0u64;
        for (s, src) in self.sources.iter().enumerate() {
            let bit = match *src {
                Source::Site(t) => (cfg.0 >> t) & 1,
                Source::Vacant => 0,
                Source::Occupied => 1,
            };
            out |= bit << s;
        }
        Configuration(out)
    }

    pub fn constant_zero_site(&self) -> Option<usize> {
        self.sources.iter().position(|s| *s == Source::Vacant)
    }

    pub fn site_map(&self, site: usize) -> Option<usize> {
        match self.sources[site] {
            Source::Site(t) => Some(t),
            _ => None,
        }
    }
}

/// An admissible swap pair `(y, wrap(y + v_k))` for one jump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwapPair {
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone)]
pub struct LatticeSpec {
    half_width: usize,
    dim: usize,
    jumps: Vec<Jump>,
    coords: Vec<Vec<i32>>,
    landing: Vec<WrappedSite>,
    tagged: Vec<Relabeling>,
    swaps: Vec<Vec<SwapPair>>,
}

impl LatticeSpec {
    /// Builds `S_M` in dimension `dim` with the given jumps.
    pub fn new(half_width: usize, dim: usize, jumps: Vec<Jump>) -> Result<Self> {
        if half_width < 1 {
            return Err(Error::InvalidLattice("half-width M must be >= 1".into()));
        }
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidLattice(format!(
                "dimension must be 1, 2 or 3, got {dim}"
            )));
        }
        if jumps.is_empty() {
            return Err(Error::InvalidLattice("at least one jump is required".into()));
        }
        for (index, jump) in jumps.iter().enumerate() {
            if jump.vector.len() != dim {
                return Err(Error::InvalidJump {
                    index,
                    reason: format!("vector has length {}, expected {dim}", jump.vector.len()),
                });
            }
            if jump.vector.iter().all(|&c| c == 0) {
                return Err(Error::InvalidJump {
                    index,
                    reason: "zero displacement".into(),
                });
            }
            if !(jump.probability > 0.0 && jump.probability <= 1.0) {
                return Err(Error::InvalidJump {
                    index,
                    reason: format!("probability {} outside (0, 1]", jump.probability),
                });
            }
        }

        let side = 2 * half_width + 1;
        let total = side.pow(dim as u32);
        let m = half_width as i32;
        let mut coords = Vec::with_capacity(total - 1);
        for flat in 0..total {
            let mut c = vec![0i32; dim];
            let mut rest = flat;
            for i in (0..dim).rev() {
                c[i] = (rest % side) as i32 - m;
                rest /= side;
            }
            if c.iter().any(|&x| x != 0) {
                coords.push(c);
            }
        }

        let mut spec = Self {
            half_width,
            dim,
            jumps,
            coords,
            landing: Vec::new(),
            tagged: Vec::new(),
            swaps: Vec::new(),
        };
        spec.landing = spec.jumps.iter().map(|j| spec.wrap_site(&j.vector)).collect();
        spec.tagged = (0..spec.jumps.len())
            .map(|k| spec.build_tagged_relabeling(k))
            .collect();
        let mut collisions = 0usize;
        spec.swaps = (0..spec.jumps.len())
            .map(|k| {
                let mut pairs = Vec::new();
                for y in 0..spec.n() {
                    match spec.swap_target(y, k) {
                        Ok(to) => pairs.push(SwapPair { from: y, to }),
                        Err(Error::InvalidSwap { reason, .. }) if reason == ORIGIN_COPY => {
                            collisions += 1
                        }
                        Err(_) => {}
                    }
                }
                pairs
            })
            .collect();
        let tagged_collisions = spec
            .tagged
            .iter()
            .flat_map(|r| r.sources.iter())
            .filter(|s| **s == Source::Occupied)
            .count();
        if collisions + tagged_collisions > 0 {
            log::warn!(
                "lattice M={half_width} d={dim}: {collisions} swaps onto origin copies skipped, \
                 {tagged_collisions} tagged-jump sources read an origin copy"
            );
        }
        Ok(spec)
    }

    /// Nearest-neighbour jumps `±e_i`, each with rate `1/(2d)`.
    pub fn nearest_neighbour(half_width: usize, dim: usize) -> Result<Self> {
        let p = 1.0 / (2 * dim) as f64;
        let mut jumps = Vec::new();
        for i in 0..dim {
            for sign in [1, -1] {
                let mut v = vec![0; dim];
                v[i] = sign;
                jumps.push(Jump::new(v, p));
            }
        }
        Self::new(half_width, dim, jumps)
    }

    /// `M = 1`, `d = 2`, jumps `(1,0), (-1,0), (0,1), (0,-1)` with rate 1/4.
    pub fn square_2d() -> Self {
        Self::nearest_neighbour(1, 2).expect("preset lattice is valid")
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of sites `N`.
    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn coords(&self, site: usize) -> &[i32] {
        &self.coords[site]
    }

    /// Reduces `z` componentwise into `{-M..M}^d`.
    pub fn wrap_site(&self, z: &[i32]) -> WrappedSite {
        let side = (2 * self.half_width + 1) as i32;
        let m = self.half_width as i32;
        let mut flat = 0usize;
        let mut origin = true;
        for &c in z {
            let r = (c + m).rem_euclid(side);
            if r != m {
                origin = false;
            }
            flat = flat * side as usize + r as usize;
        }
        if origin {
            return WrappedSite::OriginCopy;
        }
        let origin_flat = (side as usize).pow(self.dim as u32) / 2;
        if flat > origin_flat {
            WrappedSite::Site(flat - 1)
        } else {
            WrappedSite::Site(flat)
        }
    }

    pub fn site_index(&self, coords: &[i32]) -> Option<usize> {
        let m = self.half_width as i32;
        if coords.len() != self.dim || coords.iter().any(|&c| c < -m || c > m) {
            return None;
        }
        match self.wrap_site(coords) {
            WrappedSite::Site(s) => Some(s),
            WrappedSite::OriginCopy => None,
        }
    }

    /// Site read by the prefactor `(1 - eta_{v_k})`.
    pub fn landing_site(&self, k: usize) -> WrappedSite {
        self.landing[k]
    }

    /// Whether any swap or tagged jump touches an origin copy (never for
    /// `M = 1` with unit jumps).
    pub fn has_origin_collisions(&self) -> bool {
        let swaps: usize = self.swaps.iter().map(Vec::len).sum();
        let expected: usize = (0..self.jumps.len())
            .map(|k| {
                (0..self.n())
                    .filter(|&y| !self.lands_on_origin(y, k))
                    .count()
            })
            .sum();
        swaps != expected
            || self
                .tagged
                .iter()
                .any(|r| r.sources.contains(&Source::Occupied))
    }

    fn lands_on_origin(&self, y: usize, k: usize) -> bool {
        self.coords[y]
            .iter()
            .zip(&self.jumps[k].vector)
            .all(|(a, b)| a + b == 0)
    }

    fn swap_target(&self, y: usize, k: usize) -> Result<usize> {
        let jump = &self.jumps[k];
        if self.lands_on_origin(y, k) {
            return Err(Error::InvalidSwap {
                site: y,
                jump: k,
                reason: ONTO_TAGGED,
            });
        }
        let target: Vec<i32> = self.coords[y]
            .iter()
            .zip(&jump.vector)
            .map(|(a, b)| a + b)
            .collect();
        match self.wrap_site(&target) {
            WrappedSite::Site(z) => Ok(z),
            WrappedSite::OriginCopy => Err(Error::InvalidSwap {
                site: y,
                jump: k,
                reason: ORIGIN_COPY,
            }),
        }
    }

    /// Admissible swap pairs for jump `k`, ordered by the source site.
    pub fn swap_pairs(&self, k: usize) -> &[SwapPair] {
        &self.swaps[k]
    }

    /// Exchanges the occupancies of `y` and `wrap(y + v_k)`.
    pub fn apply_swap(&self, cfg: Configuration, y: usize, k: usize) -> Result<Configuration> {
        let z = self.swap_target(y, k)?;
        let (a, b) = (cfg.is_occupied(y), cfg.is_occupied(z));
        Ok(cfg.with(y, b).with(z, a))
    }

    /// The tagged particle jumps along `v_k` and the lattice is recentred on it.
    pub fn apply_tagged_jump(&self, cfg: Configuration, k: usize) -> Configuration {
        let v = &self.jumps[k].vector;
        let mut out = Configuration::EMPTY;
        let mut shifted = vec![0i32; self.dim];
        for s in 0..self.n() {
            let c = &self.coords[s];
            if c.iter().zip(v).all(|(a, b)| *a == -b) {
                continue;
            }
            for i in 0..self.dim {
                shifted[i] = c[i] + v[i];
            }
            let occupied = match self.wrap_site(&shifted) {
                WrappedSite::OriginCopy => true,
                WrappedSite::Site(t) => cfg.is_occupied(t),
            };
            out = out.with(s, occupied);
        }
        out
    }

    pub fn tagged_relabeling(&self, k: usize) -> &Relabeling {
        &self.tagged[k]
    }

    pub fn swap_relabeling(&self, y: usize, k: usize) -> Result<Relabeling> {
        let z = self.swap_target(y, k)?;
        let mut sources: Vec<Source> = (0..self.n()).map(Source::Site).collect();
        sources[y] = Source::Site(z);
        sources[z] = Source::Site(y);
        Ok(Relabeling {
            kind: RelabelKind::Swap,
            sources,
        })
    }

    fn build_tagged_relabeling(&self, k: usize) -> Relabeling {
        let v = &self.jumps[k].vector;
        let sources = (0..self.n())
            .map(|s| {
                let c = &self.coords[s];
                if c.iter().zip(v).all(|(a, b)| *a == -b) {
                    return Source::Vacant;
                }
                let shifted: Vec<i32> = c.iter().zip(v).map(|(a, b)| a + b).collect();
                match self.wrap_site(&shifted) {
                    WrappedSite::OriginCopy => Source::Occupied,
                    WrappedSite::Site(t) => Source::Site(t),
                }
            })
            .collect();
        Relabeling {
            kind: RelabelKind::TaggedJump,
            sources,
        }
    }

    /// Errors unless configurations fit in one machine word.
    pub fn require_word_configurations(&self) -> Result<()> {
        if self.n() > 64 {
            return Err(Error::SizeGuard {
                what: "configuration bits",
                size: self.n() as u128,
                limit: 64,
            });
        }
        Ok(())
    }
}

const ONTO_TAGGED: &str = "target is the tagged particle";
const ORIGIN_COPY: &str = "target wraps onto an origin copy";
