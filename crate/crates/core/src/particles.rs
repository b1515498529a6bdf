//! Particle store (array-of-attributes layout), Maxwellian importance-
//! sampling loading against a uniform background density, radial binning,
//! and the 4-point gyro-ring.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::RunParams;
use crate::error::{Error, Result};
use crate::geometry::{TorusGrid, TWO_PI};

/// Initial weight noise amplitude, w ~ U(-eps, eps).
pub const WEIGHT_NOISE: f64 = 1e-3;
/// Velocity-space cutoff in thermal speeds; draws beyond are resampled.
pub const V_CUTOFF: f64 = 5.0;

/// Canonical attribute order used by the wire format and snapshots.
pub const ATTR_NAMES: [&str; 12] = [
    "r", "theta", "zeta", "vpar", "mu", "weight", "r0", "theta0", "zeta0", "vpar0", "mu0",
    "weight0",
];

/// Gyrocenter phase-space coordinates, magnetic moment, delta-f weight, and
/// the saved step-start copy for the two-stage integrator. One parallel
/// array per attribute.
#[derive(Debug, Clone, Default)]
pub struct ParticleStore {
    pub r: Vec<f64>,
    pub theta: Vec<f64>,
    pub zeta: Vec<f64>,
    pub vpar: Vec<f64>,
    pub mu: Vec<f64>,
    pub weight: Vec<f64>,
    pub r0: Vec<f64>,
    pub theta0: Vec<f64>,
    pub zeta0: Vec<f64>,
    pub vpar0: Vec<f64>,
    pub mu0: Vec<f64>,
    pub weight0: Vec<f64>,
    /// Radial bin id per particle; meaningful right after `bin_radial`.
    pub bin_index: Vec<u32>,
    pub capacity: usize,
}

impl ParticleStore {
    pub const ATTRS: usize = 12;
    /// Stored reals per particle at 8 bytes each (2 x 6 attributes).
    pub const BYTES_PER_PARTICLE: usize = Self::ATTRS * 8;

    pub fn with_capacity(capacity: usize) -> Self {
        let mut s = ParticleStore {
            capacity,
            ..Default::default()
        };
        for a in s.attrs_mut() {
            a.reserve(capacity);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn attrs(&self) -> [&Vec<f64>; Self::ATTRS] {
        [
            &self.r,
            &self.theta,
            &self.zeta,
            &self.vpar,
            &self.mu,
            &self.weight,
            &self.r0,
            &self.theta0,
            &self.zeta0,
            &self.vpar0,
            &self.mu0,
            &self.weight0,
        ]
    }

    pub fn attrs_mut(&mut self) -> [&mut Vec<f64>; Self::ATTRS] {
        [
            &mut self.r,
            &mut self.theta,
            &mut self.zeta,
            &mut self.vpar,
            &mut self.mu,
            &mut self.weight,
            &mut self.r0,
            &mut self.theta0,
            &mut self.zeta0,
            &mut self.vpar0,
            &mut self.mu0,
            &mut self.weight0,
        ]
    }

    pub fn push_raw(&mut self, values: &[f64]) -> Result<()> {
        assert_eq!(values.len(), Self::ATTRS);
        if self.len() + 1 > self.capacity {
            return Err(Error::CapacityOverflow(self.capacity));
        }
        for (a, &v) in self.attrs_mut().into_iter().zip(values) {
            a.push(v);
        }
        Ok(())
    }

    /// Appends unpacked wire columns.
    pub fn append_arrays(&mut self, cols: &[Vec<f64>]) -> Result<()> {
        assert_eq!(cols.len(), Self::ATTRS);
        let extra = cols[0].len();
        if self.len() + extra > self.capacity {
            return Err(Error::CapacityOverflow(self.capacity));
        }
        for (a, col) in self.attrs_mut().into_iter().zip(cols) {
            a.extend_from_slice(col);
        }
        Ok(())
    }

    /// Removes two disjoint ascending index lists, backfilling holes from
    /// the array tail.
    pub fn remove_backfill(&mut self, a: &mut Vec<usize>, b: &mut Vec<usize>) {
        let mut all = Vec::with_capacity(a.len() + b.len());
        all.append(a);
        all.append(b);
        all.sort_unstable();
        for &i in all.iter().rev() {
            for attr in self.attrs_mut() {
                attr.swap_remove(i);
            }
        }
    }

    /// Copies the live attributes into the saved step-start slots.
    pub fn save_state(&mut self) {
        self.r0.copy_from_slice(&self.r);
        self.theta0.copy_from_slice(&self.theta);
        self.zeta0.copy_from_slice(&self.zeta);
        self.vpar0.copy_from_slice(&self.vpar);
        self.mu0.copy_from_slice(&self.mu);
        self.weight0.copy_from_slice(&self.weight);
    }
}

/// What a rank owns, for filtering the per-wedge particle streams.
#[derive(Debug, Clone, Copy)]
pub struct LoadContext {
    pub plane_first: usize,
    pub planes_owned: usize,
    /// Owned radial cells (cell i is [r_i, r_{i+1})).
    pub cell_first: usize,
    pub cell_last: usize,
    pub pd: usize,
    pub npd: usize,
}

fn wedge_rng(seed: u64, plane: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (plane as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Loads this rank's particles.
///
/// Each plane wedge carries its own deterministic stream of mgrid x micell
/// markers: positions rejection-sampled so the (r, theta) density is
/// proportional to the Jacobian (uniform physical density), v_par a
/// standard normal, mu from a 2D Maxwellian at the local B, and weights
/// uniform noise. The rank keeps the markers that fall in its radial cells
/// and carry its particle-replica index, so the global population is
/// independent of the decomposition.
pub fn load(grid: &TorusGrid, params: &RunParams, ctx: &LoadContext) -> Result<ParticleStore> {
    let per_wedge = grid.mgrid * params.micell;
    let expected = per_wedge * ctx.planes_owned / ctx.npd;
    let mut store = ParticleStore::with_capacity(expected + expected / 2 + 1024);
    let j_max = {
        let h = 1.0 + grid.r_outer / grid.major_r;
        h * h
    };
    let normal = StandardNormal;
    for plane in ctx.plane_first..ctx.plane_first + ctx.planes_owned {
        let mut rng = wedge_rng(params.seed, plane);
        let zeta_lo = plane as f64 * grid.delta_zeta;
        for ord in 0..per_wedge {
            let (r, theta) = loop {
                let r = grid.r_inner + rng.random::<f64>() * (grid.r_outer - grid.r_inner);
                let theta = rng.random::<f64>() * TWO_PI;
                if rng.random::<f64>() * j_max <= grid.jacobian(r, theta) {
                    break (r, theta);
                }
            };
            let zeta = zeta_lo + rng.random::<f64>() * grid.delta_zeta;
            let vpar = loop {
                let v: f64 = normal.sample(&mut rng);
                if v.abs() <= V_CUTOFF {
                    break v;
                }
            };
            let vperp = loop {
                let u: f64 = rng.random();
                let v = (-2.0 * (1.0 - u).ln()).sqrt();
                if v <= V_CUTOFF {
                    break v;
                }
            };
            let w = (rng.random::<f64>() * 2.0 - 1.0) * WEIGHT_NOISE;

            if ord % ctx.npd != ctx.pd {
                continue;
            }
            let cell = grid.cell_of(r);
            if cell < ctx.cell_first || cell > ctx.cell_last {
                continue;
            }
            let b = grid.bfield(r, theta).b;
            let mu = vperp * vperp / (2.0 * b);
            store.push_raw(&[r, theta, zeta, vpar, mu, w, r, theta, zeta, vpar, mu, w])?;
        }
    }
    Ok(store)
}

/// Reorders particles so radial bin ids (owned-cell index) are
/// non-decreasing; stable within bins, all attribute arrays permuted
/// consistently.
pub fn bin_radial(store: &mut ParticleStore, grid: &TorusGrid, cell_first: usize, cell_last: usize) {
    let n = store.len();
    let nbins = cell_last - cell_first + 1;
    let mut keys = Vec::with_capacity(n);
    let mut counts = vec![0usize; nbins];
    for i in 0..n {
        let bin = grid
            .cell_of(store.r[i])
            .clamp(cell_first, cell_last)
            - cell_first;
        keys.push(bin as u32);
        counts[bin] += 1;
    }
    let mut offsets = vec![0usize; nbins];
    let mut acc = 0;
    for (o, c) in offsets.iter_mut().zip(&counts) {
        *o = acc;
        acc += c;
    }
    let mut target = vec![0usize; n];
    for i in 0..n {
        let bin = keys[i] as usize;
        target[i] = offsets[bin];
        offsets[bin] += 1;
    }
    for attr in store.attrs_mut() {
        let mut out = vec![0.0f64; n];
        for (i, &t) in target.iter().enumerate() {
            out[t] = attr[i];
        }
        *attr = out;
    }
    let mut sorted_keys = vec![0u32; n];
    for (i, &t) in target.iter().enumerate() {
        sorted_keys[t] = keys[i];
    }
    store.bin_index = sorted_keys;
}

/// The particle's 4 gyro-ring points at phases {0, pi/2, pi, 3pi/2}:
/// (r +- rho, theta) and (r, theta +- rho/r), zeta unchanged. The gyroradius
/// sqrt(2 mu B)/B is evaluated at the gyrocenter and scaled by rho_i/a.
#[inline]
pub fn gyro_points(grid: &TorusGrid, r: f64, theta: f64, mu: f64) -> [(f64, f64); 4] {
    let b = grid.bfield(r, theta).b;
    let rho = grid.rho_star * (2.0 * mu * b).sqrt() / b;
    [
        (r + rho, theta),
        (r - rho, theta),
        (r, theta + rho / r),
        (r, theta - rho / r),
    ]
}

/// Thermal-unit gyroradius sqrt(2 mu B)/B (multiply by rho_i/a for lengths
/// in a).
#[inline]
pub fn gyro_radius_thermal(b: f64, mu: f64) -> f64 {
    (2.0 * mu * b).sqrt() / b
}

/// Flat binary particle snapshot: u64 count, u32 attribute count, the
/// attribute list (u8 length + ascii name each), then the attribute arrays
/// in declared order, little-endian 8-byte reals.
pub fn write_snapshot<W: std::io::Write>(store: &ParticleStore, out: &mut W) -> Result<()> {
    out.write_all(&(store.len() as u64).to_le_bytes())?;
    out.write_all(&(ParticleStore::ATTRS as u32).to_le_bytes())?;
    for name in ATTR_NAMES {
        out.write_all(&[name.len() as u8])?;
        out.write_all(name.as_bytes())?;
    }
    for attr in store.attrs() {
        for v in attr {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_snapshot<R: std::io::Read>(input: &mut R) -> Result<ParticleStore> {
    let mut u64buf = [0u8; 8];
    let mut u32buf = [0u8; 4];
    input.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;
    input.read_exact(&mut u32buf)?;
    let nattr = u32::from_le_bytes(u32buf) as usize;
    if nattr != ParticleStore::ATTRS {
        return Err(Error::Encoding(format!("snapshot has {nattr} attributes")));
    }
    for name in ATTR_NAMES {
        let mut lbuf = [0u8; 1];
        input.read_exact(&mut lbuf)?;
        let mut nbuf = vec![0u8; lbuf[0] as usize];
        input.read_exact(&mut nbuf)?;
        if nbuf != name.as_bytes() {
            return Err(Error::Encoding("snapshot attribute list mismatch".into()));
        }
    }
    let mut store = ParticleStore::with_capacity(count);
    let mut cols = Vec::with_capacity(nattr);
    for _ in 0..nattr {
        let mut col = Vec::with_capacity(count);
        for _ in 0..count {
            input.read_exact(&mut u64buf)?;
            col.push(f64::from_le_bytes(u64buf));
        }
        cols.push(col);
    }
    store.append_arrays(&cols)?;
    Ok(store)
}
