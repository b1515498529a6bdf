//! Field-aligned toroidal grid, analytic circular equilibrium, and the
//! radial domain partition.
//!
//! A plane is an unstructured poloidal mesh: rings of uniform radial spacing,
//! each ring carrying an even node count proportional to its radius plus one
//! duplicate closure node at theta = 2pi. Nodes on successive planes are
//! rotated by the per-ring twist delta_zeta / q(r_i), so a field line keeps a
//! constant poloidal node index until it crosses the zeta = 0 branch cut,
//! where it picks up the accumulated 2pi/q shift.

use crate::config::RunParams;
use crate::error::{Error, Result};

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Wraps an angle into [0, 2pi).
#[inline]
pub fn wrap_angle(x: f64) -> f64 {
    let t = x.rem_euclid(TWO_PI);
    if t >= TWO_PI {
        t - TWO_PI
    } else {
        t
    }
}

/// Magnetic field magnitude and analytic derivatives at a point.
#[derive(Debug, Clone, Copy)]
pub struct Bfield {
    pub b: f64,
    pub db_dr: f64,
    pub db_dtheta: f64,
}

/// Contiguous window of rings owned by one radial domain, padded by ghosts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RingWindow {
    pub owned_first: usize,
    pub owned_last: usize,
    pub first: usize,
    pub last: usize,
}

impl RingWindow {
    pub fn owns_ring(&self, i: usize) -> bool {
        (self.owned_first..=self.owned_last).contains(&i)
    }

    pub fn contains_ring(&self, i: usize) -> bool {
        (self.first..=self.last).contains(&i)
    }

    pub fn owned_rings(&self) -> usize {
        self.owned_last - self.owned_first + 1
    }
}

/// The field-aligned toroidal mesh with its circular equilibrium profiles.
#[derive(Debug, Clone)]
pub struct TorusGrid {
    pub mpsi: usize,
    /// Ring radii, units of a, length mpsi+1.
    pub r: Vec<f64>,
    /// Nodes per ring, exclusive of the duplicate closure node.
    pub mtheta: Vec<usize>,
    /// Flat start index of each ring within one plane.
    pub igrid: Vec<usize>,
    /// Poloidal grid points per plane, including closure duplicates.
    pub mgrid: usize,
    pub delta_r: f64,
    /// Per-ring poloidal spacing 2pi / mtheta(i).
    pub delta_t: Vec<f64>,
    pub ntoroidal: usize,
    pub delta_zeta: f64,
    /// q(r_i) per ring.
    pub qprof: Vec<f64>,
    /// Per-plane field-line angular shift delta_zeta / q(r_i).
    pub twist: Vec<f64>,
    pub r_inner: f64,
    pub r_outer: f64,
    /// R0 in units of a.
    pub major_r: f64,
    /// rho_i / a.
    pub rho_star: f64,
    pub q0: f64,
    pub q2: f64,
    pub nghost: usize,
}

/// Bounding grid points of one spatial location: 2 planes x 2 rings x 2
/// nodes, with trilinear weights that sum to 1. Node indices are canonical
/// (the closure duplicate is never referenced) and depend on the plane slot
/// only across the zeta branch cut.
#[derive(Debug, Clone, Copy)]
pub struct Locate8 {
    pub plane: [usize; 2],
    pub ring: [usize; 2],
    /// node[plane slot][ring slot][node slot]
    pub node: [[[usize; 2]; 2]; 2],
    /// Poloidal fraction per [plane slot][ring slot].
    pub wt: [[f64; 2]; 2],
    pub w_r: f64,
    pub w_z: f64,
    pub clamped: bool,
}

impl Locate8 {
    /// Trilinear weight of corner (plane slot s, ring slot a, node slot b).
    #[inline]
    pub fn weight(&self, s: usize, a: usize, b: usize) -> f64 {
        let wz = if s == 0 { 1.0 - self.w_z } else { self.w_z };
        let wr = if a == 0 { 1.0 - self.w_r } else { self.w_r };
        let wt = self.wt[s][a];
        let wtb = if b == 0 { 1.0 - wt } else { wt };
        wz * wr * wtb
    }
}

/// In-plane bilinear stencil: 2 rings x 2 nodes.
#[derive(Debug, Clone, Copy)]
pub struct Locate4 {
    pub ring: [usize; 2],
    pub node: [[usize; 2]; 2],
    pub wt: [f64; 2],
    pub w_r: f64,
    pub clamped: bool,
}

impl TorusGrid {
    /// Builds the mesh from run parameters.
    ///
    /// Ring radii are r_i = r_inner + i * delta_r; node counts follow the
    /// nearest-even proportional rule mtheta(i) = 2 max(2, round(mthetamax *
    /// r_i / (2 r_outer))), which reproduces the published per-plane grid
    /// sizes to within 0.5%.
    pub fn build(params: &RunParams) -> Result<TorusGrid> {
        params.validate()?;
        if params.mthetamax % 2 != 0 {
            return Err(Error::Invariant(format!(
                "mthetamax must be even, got {}",
                params.mthetamax
            )));
        }
        let mpsi = params.mpsi;
        let delta_r = (params.r_outer - params.r_inner) / mpsi as f64;
        let mut r = Vec::with_capacity(mpsi + 1);
        for i in 0..=mpsi {
            r.push(params.r_inner + i as f64 * delta_r);
        }
        r[mpsi] = params.r_outer;

        let qprofile = |radius: f64| params.q0 + params.q2 * radius * radius;
        let mut mtheta = Vec::with_capacity(mpsi + 1);
        let mut delta_t = Vec::with_capacity(mpsi + 1);
        let mut igrid = Vec::with_capacity(mpsi + 1);
        let mut qprof = Vec::with_capacity(mpsi + 1);
        let mut twist = Vec::with_capacity(mpsi + 1);
        let delta_zeta = TWO_PI / params.ntoroidal as f64;
        let mut acc = 0usize;
        for i in 0..=mpsi {
            let prop = (params.mthetamax as f64 * r[i] / (2.0 * params.r_outer)).round() as usize;
            let m = 2 * prop.max(2);
            igrid.push(acc);
            acc += m + 1;
            delta_t.push(TWO_PI / m as f64);
            mtheta.push(m);
            let q = qprofile(r[i]);
            qprof.push(q);
            twist.push(delta_zeta / q);
        }
        debug_assert_eq!(mtheta[mpsi], params.mthetamax);

        Ok(TorusGrid {
            mpsi,
            r,
            mtheta,
            igrid,
            mgrid: acc,
            delta_r,
            delta_t,
            ntoroidal: params.ntoroidal,
            delta_zeta,
            qprof,
            twist,
            r_inner: params.r_inner,
            r_outer: params.r_outer,
            major_r: params.major_radius(),
            rho_star: params.rho_star(),
            q0: params.q0,
            q2: params.q2,
            nghost: params.nghost,
        })
    }

    /// Safety factor q(r) = q0 + q2 (r/a)^2, r in units of a.
    #[inline]
    pub fn qprofile(&self, r: f64) -> f64 {
        self.q0 + self.q2 * r * r
    }

    /// B(r, theta) = 1 / (1 + (r/R0) cos theta) with analytic derivatives.
    #[inline]
    pub fn bfield(&self, r: f64, theta: f64) -> Bfield {
        let eps = r / self.major_r;
        let h = 1.0 + eps * theta.cos();
        let b = 1.0 / h;
        Bfield {
            b,
            db_dr: -theta.cos() / (self.major_r * h * h),
            db_dtheta: eps * theta.sin() / (h * h),
        }
    }

    /// Guiding-center Jacobian J = (1 + (r/R0) cos theta)^2.
    #[inline]
    pub fn jacobian(&self, r: f64, theta: f64) -> f64 {
        let h = 1.0 + (r / self.major_r) * theta.cos();
        h * h
    }

    /// Unit-field components (b_theta, b_zeta) and the local major radius R,
    /// with the pitch fixed so that d theta / d zeta = 1/q along b.
    #[inline]
    pub fn bhat(&self, r: f64, theta: f64) -> (f64, f64, f64) {
        let rloc = self.major_r + r * theta.cos();
        let lambda = r / (self.qprofile(r) * rloc);
        let norm = 1.0 / (1.0 + lambda * lambda).sqrt();
        (lambda * norm, norm, rloc)
    }

    /// Physical angle of node j on the given ring and plane.
    #[inline]
    pub fn node_theta(&self, plane: usize, ring: usize, j: usize) -> f64 {
        wrap_angle(j as f64 * self.delta_t[ring] + plane as f64 * self.twist[ring])
    }

    /// Radial cell index of r (cells are [r_i, r_{i+1}), clamped).
    #[inline]
    pub fn cell_of(&self, r: f64) -> usize {
        let x = (r - self.r_inner) / self.delta_r;
        (x.floor().max(0.0) as usize).min(self.mpsi - 1)
    }

    /// Bounding node pair and fraction at physical angle theta on one ring
    /// of one plane.
    #[inline]
    pub fn ring_lookup(&self, plane: usize, ring: usize, theta: f64) -> (usize, usize, f64) {
        let local = wrap_angle(theta - plane as f64 * self.twist[ring]);
        let m = self.mtheta[ring];
        let jf = local / self.delta_t[ring];
        let j0 = (jf.floor() as usize).min(m - 1);
        let frac = (jf - j0 as f64).clamp(0.0, 1.0);
        (j0, (j0 + 1) % m, frac)
    }

    /// In-plane bilinear stencil at (r, theta) on the given plane; r is
    /// clamped into the annulus (and flagged).
    pub fn locate_plane(&self, plane: usize, r: f64, theta: f64) -> Locate4 {
        let rc = r.clamp(self.r_inner, self.r_outer);
        let clamped = rc != r;
        let x = (rc - self.r_inner) / self.delta_r;
        let i0 = (x.floor().max(0.0) as usize).min(self.mpsi - 1);
        let w_r = (x - i0 as f64).clamp(0.0, 1.0);
        let th = wrap_angle(theta);
        let mut node = [[0usize; 2]; 2];
        let mut wt = [0.0f64; 2];
        for (a, slot) in node.iter_mut().enumerate() {
            let (j0, j1, frac) = self.ring_lookup(plane, i0 + a, th);
            *slot = [j0, j1];
            wt[a] = frac;
        }
        Locate4 {
            ring: [i0, i0 + 1],
            node,
            wt,
            w_r,
            clamped,
        }
    }

    /// Trilinear field-aligned stencil at (r, theta, zeta).
    ///
    /// theta is first shifted along the field line to each bounding plane
    /// (per-ring twist), so the poloidal lookup reduces to the field-line
    /// label theta - zeta/q(r_i), plus the 2pi/q shift when the second plane
    /// sits across the zeta = 0 branch cut.
    pub fn locate(&self, r: f64, theta: f64, zeta: f64) -> Locate8 {
        let rc = r.clamp(self.r_inner, self.r_outer);
        let clamped = rc != r;
        let x = (rc - self.r_inner) / self.delta_r;
        let i0 = (x.floor().max(0.0) as usize).min(self.mpsi - 1);
        let w_r = (x - i0 as f64).clamp(0.0, 1.0);

        let zw = wrap_angle(zeta);
        let zx = zw / self.delta_zeta;
        let k = (zx.floor() as usize).min(self.ntoroidal - 1);
        let w_z = (zx - k as f64).clamp(0.0, 1.0);
        let wrapped = k + 1 == self.ntoroidal;
        let plane = [k, (k + 1) % self.ntoroidal];

        let th = wrap_angle(theta);
        let mut node = [[[0usize; 2]; 2]; 2];
        let mut wt = [[0.0f64; 2]; 2];
        for a in 0..2 {
            let ring = i0 + a;
            let q = self.qprof[ring];
            let m = self.mtheta[ring];
            let base = wrap_angle(th - zw / q);
            for s in 0..2 {
                let lookup = if s == 1 && wrapped {
                    wrap_angle(base + TWO_PI / q)
                } else {
                    base
                };
                let jf = lookup / self.delta_t[ring];
                let j0 = (jf.floor() as usize).min(m - 1);
                node[s][a] = [j0, (j0 + 1) % m];
                wt[s][a] = (jf - j0 as f64).clamp(0.0, 1.0);
            }
        }
        Locate8 {
            plane,
            ring: [i0, i0 + 1],
            node,
            wt,
            w_r,
            w_z,
            clamped,
        }
    }

    /// Poloidal node index (possibly fractional) that the field line through
    /// node j of `ring` reaches when stepping `crossings` times over the
    /// zeta = 0 branch cut (signed). Zero crossings means the same index.
    #[inline]
    pub fn aligned_index(&self, ring: usize, j: usize, crossings: i32) -> f64 {
        j as f64 + crossings as f64 * (TWO_PI / self.qprof[ring]) / self.delta_t[ring]
    }

    /// Equal-area radial partition snapped to ring boundaries, each window
    /// padded with nghost ghost rings per side (truncated at the domain
    /// boundary).
    pub fn radial_partition(&self, nradial_domains: usize) -> Result<Vec<RingWindow>> {
        if nradial_domains == 0 {
            return Err(Error::Invariant("nradial_domains must be >= 1".into()));
        }
        let k = nradial_domains;
        let a2 = self.r_inner * self.r_inner;
        let b2 = self.r_outer * self.r_outer;
        let mut cut = Vec::with_capacity(k + 1);
        cut.push(0usize);
        for part in 1..k {
            let rk = (a2 + (part as f64 / k as f64) * (b2 - a2)).sqrt();
            let idx = ((rk - self.r_inner) / self.delta_r).round() as usize;
            cut.push(idx.min(self.mpsi));
        }
        cut.push(self.mpsi + 1);
        let mut windows = Vec::with_capacity(k);
        for d in 0..k {
            if cut[d + 1] <= cut[d] {
                return Err(Error::TooManyDomains(k, 1, self.mpsi + 1));
            }
            let owned_first = cut[d];
            let owned_last = cut[d + 1] - 1;
            if owned_last - owned_first + 1 < self.nghost {
                return Err(Error::TooManyDomains(k, self.nghost, self.mpsi + 1));
            }
            windows.push(RingWindow {
                owned_first,
                owned_last,
                first: owned_first.saturating_sub(self.nghost),
                last: (owned_last + self.nghost).min(self.mpsi),
            });
        }
        Ok(windows)
    }

    /// Radial domain index owning the given ring.
    pub fn ring_owner(windows: &[RingWindow], ring: usize) -> usize {
        windows
            .iter()
            .position(|w| w.owns_ring(ring))
            .expect("ring outside partition")
    }

    /// Per-ring text dump: r, mtheta, q, twist offset.
    pub fn summary(&self) -> String {
        let mut out = String::from("# ring  r  mtheta  q  twist_offset\n");
        for i in 0..=self.mpsi {
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                i, self.r[i], self.mtheta[i], self.qprof[i], self.twist[i]
            ));
        }
        out.push_str(&format!(
            "# mgrid={} ntoroidal={} delta_zeta={}\n",
            self.mgrid, self.ntoroidal, self.delta_zeta
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;

    fn toy_params() -> RunParams {
        RunParams {
            mpsi: 16,
            mthetamax: 32,
            ntoroidal: 4,
            ranks_toroidal: 4,
            a_over_rho: 30.0,
            ..RunParams::default()
        }
    }

    #[test]
    fn preset_mgrid_matches_published_sizes() {
        let expect = [("A", 32449.0), ("B", 128893.0), ("C", 513785.0), ("D", 2051567.0)];
        let mut prev = 0.0;
        for (label, target) in expect {
            let grid = TorusGrid::build(&preset(label).unwrap()).unwrap();
            let got = grid.mgrid as f64;
            assert!(
                (got - target).abs() / target < 0.005,
                "{label}: mgrid {got} vs {target}"
            );
            if prev > 0.0 {
                let ratio = got / prev;
                assert!((ratio - 4.0).abs() / 4.0 < 0.02, "ratio {ratio}");
            }
            prev = got;
        }
    }

    #[test]
    fn mgrid_equals_direct_summation() {
        let params = RunParams {
            mpsi: 4,
            mthetamax: 8,
            ..RunParams::default()
        };
        let grid = TorusGrid::build(&params).unwrap();
        // independent oracle: recompute node counts from the stated rule
        let mut total = 0usize;
        for i in 0..=4 {
            let r = 0.1 + i as f64 * (0.8 / 4.0);
            let m = 2 * ((8.0 * r / 1.8).round() as usize).max(2);
            assert_eq!(grid.mtheta[i], m);
            total += m + 1;
        }
        assert_eq!(grid.mgrid, total);
        assert_eq!(grid.mtheta[4], 8);
        for w in grid.igrid.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn outermost_ring_has_mthetamax_nodes() {
        for label in ["A", "B", "C", "D"] {
            let p = preset(label).unwrap();
            let grid = TorusGrid::build(&p).unwrap();
            assert_eq!(grid.mtheta[grid.mpsi], p.mthetamax);
        }
    }

    #[test]
    fn bfield_values_and_finite_differences() {
        let grid = TorusGrid::build(&toy_params()).unwrap();
        // cos(pi/2) = 0 gives B = 1 exactly
        let b = grid.bfield(0.3, std::f64::consts::FRAC_PI_2);
        assert!((b.b - 1.0).abs() < 1e-15);
        // direct substitution at r/R0 = 0.18, theta = 0
        let b = grid.bfield(0.18 * grid.major_r, 0.0);
        assert!((b.b - 1.0 / 1.18).abs() < 1e-12);
        // finite-difference oracle for both gradients
        let h = 1e-6;
        for &(r, th) in &[(0.2, 0.7), (0.5, 3.0), (0.8, 5.5)] {
            let an = grid.bfield(r, th);
            let fd_t = (grid.bfield(r, th + h).b - grid.bfield(r, th - h).b) / (2.0 * h);
            let fd_r = (grid.bfield(r + h, th).b - grid.bfield(r - h, th).b) / (2.0 * h);
            assert!((an.db_dtheta - fd_t).abs() < 1e-8, "dB/dtheta at ({r},{th})");
            assert!((an.db_dr - fd_r).abs() < 1e-8, "dB/dr at ({r},{th})");
        }
    }

    #[test]
    fn qprofile_matches_cyclone_constraints() {
        let grid = TorusGrid::build(&toy_params()).unwrap();
        let q = grid.qprofile(0.5);
        assert!((q - 1.4).abs() < 1e-12);
        // shear (r/q) dq/dr at r = 0.5a
        let dq = 2.0 * grid.q2 * 0.5;
        assert!(((0.5 / q) * dq - 0.78).abs() < 1e-12);
    }

    #[test]
    fn jacobian_values_and_quadrature() {
        let grid = TorusGrid::build(&toy_params()).unwrap();
        assert!((grid.jacobian(0.3, std::f64::consts::FRAC_PI_2) - 1.0).abs() < 1e-15);
        let j = grid.jacobian(0.18 * grid.major_r, 0.0);
        assert!((j - 1.3924).abs() < 1e-12);
        // ring integral of J against Simpson quadrature: closed form is
        // 2 pi (1 + eps^2 / 2)
        let r = 0.63;
        let eps = r / grid.major_r;
        let n = 4096;
        let dth = TWO_PI / n as f64;
        let mut quad = 0.0;
        for k in 0..n {
            let t0 = k as f64 * dth;
            quad += dth / 6.0
                * (grid.jacobian(r, t0)
                    + 4.0 * grid.jacobian(r, t0 + 0.5 * dth)
                    + grid.jacobian(r, t0 + dth));
        }
        let analytic = TWO_PI * (1.0 + 0.5 * eps * eps);
        assert!((quad - analytic).abs() < 1e-10);
    }

    #[test]
    fn locate_weights_sum_to_one() {
        let grid = TorusGrid::build(&toy_params()).unwrap();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1_000_000 {
            let r = grid.r_inner + rng.random::<f64>() * (grid.r_outer - grid.r_inner);
            let th = rng.random::<f64>() * TWO_PI;
            let ze = rng.random::<f64>() * TWO_PI;
            let loc = grid.locate(r, th, ze);
            let mut sum = 0.0;
            for s in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        let w = loc.weight(s, a, b);
                        assert!(w >= 0.0);
                        sum += w;
                    }
                }
            }
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn locate_on_node_gives_unit_weight() {
        let grid = TorusGrid::build(&toy_params()).unwrap();
        let (plane, ring, j) = (2usize, 5usize, 3usize);
        let theta = grid.node_theta(plane, ring, j);
        let zeta = plane as f64 * grid.delta_zeta;
        let loc = grid.locate(grid.r[ring], theta, zeta);
        let mut best = 0.0f64;
        for s in 0..2 {
            for a in 0..2 {
                for b in 0..2 {
                    best = best.max(loc.weight(s, a, b));
                }
            }
        }
        assert!((best - 1.0).abs() < 1e-9, "max weight {best}");
        assert_eq!(loc.plane[0], plane);
        assert_eq!(loc.ring[0], ring);
        assert_eq!(loc.node[0][0][0], j);
    }

    #[test]
    fn locate_midpoint_between_nodes_splits_evenly() {
        let grid = TorusGrid::build(&toy_params()).unwrap();
        let (plane, ring) = (0usize, 8usize);
        let theta = 2.5 * grid.delta_t[ring]; // halfway between nodes 2 and 3
        let loc = grid.locate(grid.r[ring], theta, 0.0);
        assert!((loc.weight(0, 0, 0) - 0.5).abs() < 1e-9);
        assert!((loc.weight(0, 0, 1) - 0.5).abs() < 1e-9);
        assert_eq!(loc.node[0][0], [2, 3]);
    }

    #[test]
    fn twist_closure_over_full_circuit() {
        let grid = TorusGrid::build(&toy_params()).unwrap();
        for i in 0..=grid.mpsi {
            let total = grid.ntoroidal as f64 * grid.twist[i];
            assert!((total - TWO_PI / grid.qprof[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn radial_partition_single_domain() {
        let grid = TorusGrid::build(&toy_params()).unwrap();
        let w = grid.radial_partition(1).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!((w[0].owned_first, w[0].owned_last), (0, grid.mpsi));
        assert_eq!((w[0].first, w[0].last), (0, grid.mpsi));
    }

    #[test]
    fn radial_partition_two_domains_splits_at_equal_area() {
        // r_inner -> 0, r_outer -> 1 would split at 1/sqrt(2); use the real
        // annulus and check against the direct area integral
        let mut params = toy_params();
        params.mpsi = 64;
        params.mthetamax = 128;
        let grid = TorusGrid::build(&params).unwrap();
        let w = grid.radial_partition(2).unwrap();
        let split = grid.r[w[1].owned_first];
        let expect =
            (0.5 * (grid.r_inner * grid.r_inner + grid.r_outer * grid.r_outer)).sqrt();
        assert!((split - expect).abs() <= grid.delta_r, "split {split} vs {expect}");
        // area of each domain within one annulus of the mean
        let area = |lo: f64, hi: f64| hi * hi - lo * lo;
        let a0 = area(grid.r[w[0].owned_first], grid.r[w[1].owned_first]);
        let a1 = area(grid.r[w[1].owned_first], grid.r_outer);
        let ring_area = area(grid.r_outer - grid.delta_r, grid.r_outer);
        assert!((a0 - a1).abs() <= 2.0 * ring_area);
    }

    #[test]
    fn radial_partition_covers_without_gaps() {
        for mpsi in [16usize, 23, 40, 97] {
            let params = RunParams {
                mpsi,
                mthetamax: 64,
                ..RunParams::default()
            };
            let grid = TorusGrid::build(&params).unwrap();
            for k in 1..=4usize {
                let windows = match grid.radial_partition(k) {
                    Ok(w) => w,
                    Err(_) => continue,
                };
                let mut covered = vec![0usize; mpsi + 1];
                for w in &windows {
                    for i in w.owned_first..=w.owned_last {
                        covered[i] += 1;
                    }
                }
                assert!(covered.iter().all(|&c| c == 1), "mpsi={mpsi} k={k}");
                for w in &windows {
                    assert!(w.first <= w.owned_first && w.owned_last <= w.last);
                }
            }
        }
    }

    #[test]
    fn partition_rejects_too_many_domains() {
        let grid = TorusGrid::build(&toy_params()).unwrap();
        assert!(grid.radial_partition(9).is_err());
    }

    #[test]
    fn summary_lists_every_ring() {
        let grid = TorusGrid::build(&toy_params()).unwrap();
        let text = grid.summary();
        assert_eq!(text.lines().count(), grid.mpsi + 3);
    }
}
