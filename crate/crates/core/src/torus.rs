//! Geometry of the unit torus T² = R²/Z² and the seeded randomness shared by
//! every sampler in the crate.
//!
//! Coordinates are stored in `[0, 1)`. Differences are represented by their
//! minimal lift in `[-1/2, 1/2)²`, which is the inverse exponential map of
//! the flat torus whenever the two points are closer than 1/2.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};

/// A point of the unit torus, both coordinates in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    x1: f64,
    x2: f64,
}

/// Reduce a finite real modulo 1 into `[0, 1)`.
#[inline]
pub fn wrap_coord(v: f64) -> f64 {
    let r = v - v.floor();
    // v = -1e-20 gives r = 1.0 after rounding
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Minimal representative of `d` modulo 1, in `[-1/2, 1/2)`.
#[inline]
pub fn wrap_signed(d: f64) -> f64 {
    let r = d - (d + 0.5).floor();
    if r >= 0.5 {
        r - 1.0
    } else {
        r
    }
}

impl TorusPoint {
    /// Builds a point from coordinates that are already reduced.
    ///
    /// Panics in debug builds if a coordinate lies outside `[0, 1)`.
    #[inline]
    pub fn from_reduced(x1: f64, x2: f64) -> Self {
        debug_assert!((0.0..1.0).contains(&x1) && (0.0..1.0).contains(&x2));
        TorusPoint { x1, x2 }
    }

    /// Wraps arbitrary finite coordinates onto the torus.
    pub fn wrap(p: [f64; 2]) -> Result<Self> {
        if !(p[0].is_finite() && p[1].is_finite()) {
            return Err(invalid_arg(format!("non-finite torus coordinate {p:?}")));
        }
        Ok(Self::wrap_unchecked(p[0], p[1]))
    }

    #[inline]
    pub(crate) fn wrap_unchecked(x1: f64, x2: f64) -> Self {
        TorusPoint {
            x1: wrap_coord(x1),
            x2: wrap_coord(x2),
        }
    }

    pub const ORIGIN: TorusPoint = TorusPoint { x1: 0.0, x2: 0.0 };

    #[inline]
    pub fn x1(&self) -> f64 {
        self.x1
    }

    #[inline]
    pub fn x2(&self) -> f64 {
        self.x2
    }

    #[inline]
    pub fn coords(&self) -> [f64; 2] {
        [self.x1, self.x2]
    }

    /// `self + d`, wrapped.
    #[inline]
    pub fn translate(&self, d: Displacement) -> TorusPoint {
        Self::wrap_unchecked(self.x1 + d.d1, self.x2 + d.d2)
    }

    /// Uniform sample on the torus.
    pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> TorusPoint {
        TorusPoint::wrap_unchecked(rng.random::<f64>(), rng.random::<f64>())
    }
}

/// Convenience wrapper for [`TorusPoint::wrap`].
pub fn wrap(p: [f64; 2]) -> Result<TorusPoint> {
    TorusPoint::wrap(p)
}

/// Minimal wrapped difference between two torus points, each component in
/// `[-1/2, 1/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Displacement {
    pub d1: f64,
    pub d2: f64,
}

impl Displacement {
    pub const ZERO: Displacement = Displacement { d1: 0.0, d2: 0.0 };

    /// Reduces an arbitrary real vector to its minimal representative.
    #[inline]
    pub fn reduce(d1: f64, d2: f64) -> Self {
        Displacement {
            d1: wrap_signed(d1),
            d2: wrap_signed(d2),
        }
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.d1.hypot(self.d2)
    }

    #[inline]
    pub fn norm_linf(&self) -> f64 {
        self.d1.abs().max(self.d2.abs())
    }

    #[inline]
    pub fn as_array(&self) -> [f64; 2] {
        [self.d1, self.d2]
    }
}

impl std::ops::Neg for Displacement {
    type Output = Displacement;
    fn neg(self) -> Displacement {
        Displacement {
            d1: -self.d1,
            d2: -self.d2,
        }
    }
}

/// Minimal wrapped difference `y - x`. Ties at ±1/2 resolve to -1/2.
#[inline]
pub fn displacement(x: &TorusPoint, y: &TorusPoint) -> Displacement {
    Displacement::reduce(y.x1 - x.x1, y.x2 - x.x2)
}

/// Euclidean torus distance.
#[inline]
pub fn dist(x: &TorusPoint, y: &TorusPoint) -> f64 {
    displacement(x, y).norm()
}

/// Max-norm torus distance `|y - x|_∞`.
#[inline]
pub fn dist_linf(x: &TorusPoint, y: &TorusPoint) -> f64 {
    displacement(x, y).norm_linf()
}

/// Periodized Gaussian with the given per-coordinate variance, as a
/// minimal displacement. Sampled on R² and reduced mod 1, which is exact in
/// law.
pub fn wrapped_gaussian<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> Result<Displacement> {
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(invalid_arg(format!(
            "variance must be finite and non-negative, got {variance}"
        )));
    }
    Ok(wrapped_gaussian_unchecked(variance.sqrt(), rng))
}

#[inline]
pub(crate) fn wrapped_gaussian_unchecked<R: Rng + ?Sized>(sd: f64, rng: &mut R) -> Displacement {
    if sd == 0.0 {
        return Displacement::ZERO;
    }
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    Displacement::reduce(sd * z1, sd * z2)
}

/// Reproducible random stream identified by `(master_seed, stream_id)`.
///
/// Backed by ChaCha8 with the stream id selecting one of its 2⁶⁴ independent
/// streams. Child streams are derived by hashing, so the sequence a consumer
/// sees depends only on its id and never on scheduling order.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

/// splitmix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        RngStream {
            master_seed,
            stream_id,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream number `child`; independent of the parent's position.
    pub fn substream(&self, child: u64) -> RngStream {
        let id = mix64(self.stream_id ^ mix64(child.wrapping_add(0x5851_f42d_4c95_7f2d)));
        RngStream::new(self.master_seed, id)
    }

    /// Child stream keyed by a label and an index, e.g. `("shifts", 3)`.
    pub fn keyed(&self, label: &str, index: u64) -> RngStream {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
        }
        self.substream(mix64(h) ^ index)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
