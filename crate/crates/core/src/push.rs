//! The push kernel: gathers E at the 4 gyro-points, advances gyrocenter
//! coordinates with the drift-kinetic equations of motion under a two-stage
//! Runge-Kutta step, evolves the delta-f weights, and reflects particles at
//! the radial boundaries.
//!
//! Drifts are evaluated at the gyrocenter; only the potential-derived field
//! is gyro-averaged. The stored E_zeta component is the field-aligned plane
//! difference, so the parallel gradient is b . grad phi = -b_zeta E_zeta
//! with no poloidal cross term.

use crate::config::RunParams;
use crate::deposit::GridVector;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, TorusGrid};
use crate::particles::{gyro_points, ParticleStore};

#[derive(Debug, Clone, Copy, Default)]
pub struct PushOptions {
    /// Drop vE and the magnetic drifts, leaving parallel streaming and the
    /// mirror force (test hook for the field-line-pitch invariant).
    pub disable_drifts: bool,
    /// Run gather and update as two separate particle loops instead of the
    /// fused single pass.
    pub split_loops: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PushStats {
    pub reflected: u64,
    pub double_crossings: u64,
    /// Gyro-points whose field interpolation was clamped at a window edge.
    pub clamped_gathers: u64,
    pub weight_cap_hits: u64,
}

impl PushStats {
    fn merge(&mut self, o: &PushStats) {
        self.reflected += o.reflected;
        self.double_crossings += o.double_crossings;
        self.clamped_gathers += o.clamped_gathers;
        self.weight_cap_hits += o.weight_cap_hits;
    }
}

/// Radial profile shaping the gradient drive,
/// exp(-[(r - 0.5a)/(0.35a)]^6).
#[inline]
pub fn drive_profile(r: f64) -> f64 {
    let x = (r - 0.5) / 0.35;
    (-x.powi(6)).exp()
}

/// Drift velocities and b* data at one gyrocenter, normalized units.
#[derive(Debug, Clone, Copy)]
pub struct DriftTerms {
    /// E x B drift (r, theta, zeta physical components).
    pub v_e: [f64; 3],
    /// Curvature plus grad-B drift.
    pub v_d: [f64; 3],
    /// rho* v_par / B^2, the coefficient of b x grad B inside b*.
    pub b_star_coeff: f64,
    /// Physical gradient of B: (dB/dr, dB/(r dtheta), 0).
    pub grad_b: [f64; 3],
}

/// Evaluates the drifts at a gyrocenter given the gyro-averaged field
/// (E_r, E_theta, field-aligned E_zeta).
pub fn drift_terms(
    grid: &TorusGrid,
    r: f64,
    theta: f64,
    vpar: f64,
    mu: f64,
    e: [f64; 3],
) -> DriftTerms {
    let bf = grid.bfield(r, theta);
    let b = bf.b;
    let gb_r = bf.db_dr;
    let gb_t = bf.db_dtheta / r;
    let (b_th, b_ze, rloc) = grid.bhat(r, theta);
    let lam = r / (grid.qprofile(r) * rloc);
    let e_zp = e[2] - lam * e[1]; // physical zeta component
    let f = grid.rho_star / b;
    let v_e = [
        f * (e[1] * b_ze - e_zp * b_th),
        f * (-e[0] * b_ze),
        f * (e[0] * b_th),
    ];
    let cd = grid.rho_star * (vpar * vpar + mu * b) / (b * b);
    let v_d = [-cd * b_ze * gb_t, cd * b_ze * gb_r, -cd * b_th * gb_r];
    DriftTerms {
        v_e,
        v_d,
        b_star_coeff: grid.rho_star * vpar / (b * b),
        grad_b: [gb_r, gb_t, 0.0],
    }
}

/// Phase-space time derivatives at one gyrocenter.
#[derive(Debug, Clone, Copy, Default)]
struct Deriv {
    dr: f64,
    dth: f64,
    dze: f64,
    dvp: f64,
    dwt: f64,
}

struct Mover<'a> {
    grid: &'a TorusGrid,
    rln: f64,
    rlt: f64,
    disable_drifts: bool,
}

impl Mover<'_> {
    #[inline]
    fn derivs(&self, r: f64, theta: f64, vpar: f64, mu: f64, w: f64, e: [f64; 3]) -> Deriv {
        let grid = self.grid;
        let bf = grid.bfield(r, theta);
        let b = bf.b;
        let gb_r = bf.db_dr;
        let gb_t = bf.db_dtheta / r;
        let (b_th, b_ze, rloc) = grid.bhat(r, theta);
        let q = grid.qprofile(r);
        let lam = r / (q * rloc);
        let e_zp = e[2] - lam * e[1];

        let (ve, vd, bxgb_dot_e, cd);
        if self.disable_drifts {
            ve = [0.0; 3];
            vd = [0.0; 3];
            bxgb_dot_e = 0.0;
            cd = 0.0;
        } else {
            let f = grid.rho_star / b;
            ve = [
                f * (e[1] * b_ze - e_zp * b_th),
                f * (-e[0] * b_ze),
                f * (e[0] * b_th),
            ];
            cd = grid.rho_star * (vpar * vpar + mu * b) / (b * b);
            vd = [-cd * b_ze * gb_t, cd * b_ze * gb_r, -cd * b_th * gb_r];
            bxgb_dot_e = -b_ze * gb_t * e[0] + b_ze * gb_r * e[1] - b_th * gb_r * e_zp;
        }

        let dr = ve[0] + vd[0];
        let dth = (vpar * b_th + ve[1] + vd[1]) / r;
        let dze = (vpar * b_ze + ve[2] + vd[2]) / rloc;
        let bstar_c = grid.rho_star * vpar / (b * b);
        let mut dvp = -mu * b_th * gb_t + b_ze * e[2];
        if !self.disable_drifts {
            dvp += bstar_c * bxgb_dot_e;
        }

        // delta-f weight drive: radial E x B motion against the gradient
        // profile plus the parallel/drift work, T = 1
        let energy = 0.5 * vpar * vpar + mu * b;
        let kappa =
            drive_profile(r) * (self.rln + (energy - 1.5) * self.rlt) / grid.major_r;
        let par_work = vpar * (b_ze * e[2] + bstar_c * bxgb_dot_e);
        let vd_dot_e = cd * bxgb_dot_e;
        let dwt = (1.0 - w) * (-ve[0] * kappa + par_work + vd_dot_e);

        Deriv {
            dr,
            dth,
            dze,
            dvp,
            dwt,
        }
    }
}

/// Clamps zeta into the span covered by the owned planes plus the toroidal
/// ghost plane (multi-domain toroidal decompositions only).
#[inline]
fn clamp_zeta(grid: &TorusGrid, plane_first: usize, planes_owned: usize, zeta: f64) -> (f64, bool) {
    let zw = wrap_angle(zeta);
    if planes_owned == grid.ntoroidal {
        return (zw, false);
    }
    let lo = plane_first as f64 * grid.delta_zeta;
    let hi = (plane_first + planes_owned) as f64 * grid.delta_zeta;
    if zw >= lo && zw < hi {
        return (zw, false);
    }
    let two_pi = crate::geometry::TWO_PI;
    let cyc = |a: f64, b: f64| {
        let d = (a - b).abs();
        d.min(two_pi - d)
    };
    let hi_in = hi - grid.delta_zeta * 1e-9;
    if cyc(zw, lo) <= cyc(zw, hi_in) {
        (lo, true)
    } else {
        (hi_in, true)
    }
}

/// Gyro-averaged field at a gyrocenter: mean of the trilinear E at the 4
/// gyro-points (weight 1/4 each); out-of-window points use boundary-clamped
/// values and are flagged.
pub fn gather_at(
    ev: &GridVector,
    grid: &TorusGrid,
    r: f64,
    theta: f64,
    zeta: f64,
    mu: f64,
) -> ([f64; 3], u64) {
    let layout = &ev.layout;
    let w = layout.window;
    let r_lo = grid.r[w.first];
    let r_hi = if w.last == grid.mpsi {
        grid.r_outer
    } else {
        grid.r[w.last] - grid.delta_r * 1e-12
    };
    let mut acc = [0.0f64; 3];
    let mut clamped = 0u64;
    for (pr, pt) in gyro_points(grid, r, theta, mu) {
        let rc = pr.clamp(r_lo, r_hi);
        let (zc, zflag) = clamp_zeta(grid, layout.plane_first, layout.planes_owned, zeta);
        if rc != pr || zflag {
            clamped += 1;
        }
        let loc = grid.locate(rc, pt, zc);
        let slot0 = loc.plane[0] - layout.plane_first;
        for s in 0..2 {
            let slab = slot0 + s;
            for a in 0..2 {
                for bslot in 0..2 {
                    let idx = layout.node(slab, loc.ring[a], loc.node[s][a][bslot]);
                    let wgt = 0.25 * loc.weight(s, a, bslot);
                    acc[0] += wgt * ev.comp[0][idx];
                    acc[1] += wgt * ev.comp[1][idx];
                    acc[2] += wgt * ev.comp[2][idx];
                }
            }
        }
    }
    (acc, clamped)
}

/// Reflects a radius at the annulus boundaries; returns crossings seen.
#[inline]
fn reflect(r: f64, r_inner: f64, r_outer: f64) -> (f64, u32) {
    let mut v = r;
    let mut n = 0;
    if v > r_outer {
        v = 2.0 * r_outer - v;
        n += 1;
    }
    if v < r_inner {
        v = 2.0 * r_inner - v;
        n += 1;
    }
    (v.clamp(r_inner, r_outer), n)
}

/// Reflects particles crossing r_inner/r_outer (r -> 2 r_bound - r, v_par,
/// theta, zeta, weight unchanged). Double crossings are flagged.
pub fn boundary(store: &mut ParticleStore, r_inner: f64, r_outer: f64) -> PushStats {
    let mut stats = PushStats::default();
    for r in store.r.iter_mut() {
        let (v, n) = reflect(*r, r_inner, r_outer);
        *r = v;
        if n > 0 {
            stats.reflected += 1;
        }
        if n > 1 {
            stats.double_crossings += 1;
        }
    }
    stats
}

struct Chunk<'a> {
    r: &'a mut [f64],
    theta: &'a mut [f64],
    zeta: &'a mut [f64],
    vpar: &'a mut [f64],
    weight: &'a mut [f64],
    mu: &'a [f64],
    r0: &'a [f64],
    theta0: &'a [f64],
    zeta0: &'a [f64],
    vpar0: &'a [f64],
    weight0: &'a [f64],
    offset: usize,
}

fn split_chunks(store: &mut ParticleStore, chunk: usize) -> Vec<Chunk<'_>> {
    let mut out = Vec::new();
    let ParticleStore {
        r,
        theta,
        zeta,
        vpar,
        mu,
        weight,
        r0,
        theta0,
        zeta0,
        vpar0,
        weight0,
        ..
    } = store;
    let mut rest = (
        r.as_mut_slice(),
        theta.as_mut_slice(),
        zeta.as_mut_slice(),
        vpar.as_mut_slice(),
        weight.as_mut_slice(),
        mu.as_slice(),
        r0.as_slice(),
        theta0.as_slice(),
        zeta0.as_slice(),
        vpar0.as_slice(),
        weight0.as_slice(),
    );
    let mut offset = 0;
    while !rest.0.is_empty() {
        let len = rest.0.len().min(chunk);
        let (ra, rb) = std::mem::take(&mut rest.0).split_at_mut(len);
        let (ta, tb) = std::mem::take(&mut rest.1).split_at_mut(len);
        let (za, zb) = std::mem::take(&mut rest.2).split_at_mut(len);
        let (va, vb) = std::mem::take(&mut rest.3).split_at_mut(len);
        let (wa, wb) = std::mem::take(&mut rest.4).split_at_mut(len);
        let (ma, mb) = rest.5.split_at(len);
        let (r0a, r0b) = rest.6.split_at(len);
        let (t0a, t0b) = rest.7.split_at(len);
        let (z0a, z0b) = rest.8.split_at(len);
        let (v0a, v0b) = rest.9.split_at(len);
        let (w0a, w0b) = rest.10.split_at(len);
        out.push(Chunk {
            r: ra,
            theta: ta,
            zeta: za,
            vpar: va,
            weight: wa,
            mu: ma,
            r0: r0a,
            theta0: t0a,
            zeta0: z0a,
            vpar0: v0a,
            weight0: w0a,
            offset,
        });
        rest = (rb, tb, zb, vb, wb, mb, r0b, t0b, z0b, v0b, w0b);
        offset += len;
    }
    out
}

fn advance_chunk(
    chunk: &mut Chunk,
    ev: &GridVector,
    grid: &TorusGrid,
    mover: &Mover,
    dt: f64,
    r_inner: f64,
    r_outer: f64,
    split_loops: bool,
) -> Result<PushStats> {
    let mut stats = PushStats::default();
    let n = chunk.r.len();
    let stage = |stats: &mut PushStats,
                 chunk: &mut Chunk,
                 gathered: Option<&[[f64; 3]]>,
                 h: f64|
     -> Result<()> {
        for i in 0..n {
            let e = match gathered {
                Some(g) => g[i],
                None => {
                    let (e, c) =
                        gather_at(ev, grid, chunk.r[i], chunk.theta[i], chunk.zeta[i], chunk.mu[i]);
                    stats.clamped_gathers += c;
                    e
                }
            };
            let d = mover.derivs(
                chunk.r[i],
                chunk.theta[i],
                chunk.vpar[i],
                chunk.mu[i],
                chunk.weight[i],
                e,
            );
            chunk.r[i] = chunk.r0[i] + h * d.dr;
            chunk.theta[i] = wrap_angle(chunk.theta0[i] + h * d.dth);
            chunk.zeta[i] = wrap_angle(chunk.zeta0[i] + h * d.dze);
            chunk.vpar[i] = chunk.vpar0[i] + h * d.dvp;
            chunk.weight[i] = chunk.weight0[i] + h * d.dwt;
        }
        Ok(())
    };

    for (substep, h) in [(0usize, 0.5 * dt), (1usize, dt)] {
        if split_loops {
            // gather loop, then update loop
            let mut gathered = vec![[0.0f64; 3]; n];
            for (i, g) in gathered.iter_mut().enumerate() {
                let (e, c) =
                    gather_at(ev, grid, chunk.r[i], chunk.theta[i], chunk.zeta[i], chunk.mu[i]);
                stats.clamped_gathers += c;
                *g = e;
            }
            stage(&mut stats, chunk, Some(&gathered), h)?;
        } else {
            stage(&mut stats, chunk, None, h)?;
        }
        if substep == 1 {
            for i in 0..n {
                let (v, crossings) = reflect(chunk.r[i], r_inner, r_outer);
                chunk.r[i] = v;
                if crossings > 0 {
                    stats.reflected += 1;
                }
                if crossings > 1 {
                    stats.double_crossings += 1;
                }
                if chunk.weight[i].abs() > 10.0 {
                    stats.weight_cap_hits += 1;
                }
                if !(chunk.r[i].is_finite()
                    && chunk.vpar[i].is_finite()
                    && chunk.weight[i].is_finite())
                {
                    return Err(Error::NonFinite {
                        what: "particle state",
                        index: chunk.offset + i,
                    });
                }
            }
        }
    }
    Ok(stats)
}

/// One full time step of the gyrocenter equations: stage 1 advances to the
/// midpoint from the saved state, stage 2 takes the full step with midpoint
/// derivatives. The field is gathered per stage at the current positions;
/// mu is invariant; weights evolve through the same stages; the radial
/// boundary reflects.
pub fn advance(
    store: &mut ParticleStore,
    ev: &GridVector,
    grid: &TorusGrid,
    params: &RunParams,
    dt: f64,
    opts: &PushOptions,
) -> Result<PushStats> {
    store.save_state();
    let mover = Mover {
        grid,
        rln: params.rln,
        rlt: params.rlt,
        disable_drifts: opts.disable_drifts,
    };
    let n = store.len();
    let workers = params.workers.max(1);
    let chunk = n.div_ceil(workers).max(1);
    let mut chunks = split_chunks(store, chunk);
    let mut stats = PushStats::default();
    if chunks.len() <= 1 {
        for c in chunks.iter_mut() {
            stats.merge(&advance_chunk(
                c,
                ev,
                grid,
                &mover,
                dt,
                params.r_inner,
                params.r_outer,
                opts.split_loops,
            )?);
        }
        return Ok(stats);
    }
    let results: Vec<Result<PushStats>> = std::thread::scope(|scope| {
        let mover = &mover;
        let handles: Vec<_> = chunks
            .iter_mut()
            .map(|c| {
                scope.spawn(move || {
                    advance_chunk(
                        c,
                        ev,
                        grid,
                        mover,
                        dt,
                        params.r_inner,
                        params.r_outer,
                        opts.split_loops,
                    )
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("push worker panicked"))
            .collect()
    });
    for r in results {
        stats.merge(&r?);
    }
    Ok(stats)
}
