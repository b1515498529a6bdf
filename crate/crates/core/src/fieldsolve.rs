//! Grid kernels: the gyrokinetic Poisson solve through the 4-point double
//! gyroaverage and a weighted Jacobi iteration, the zonal-flow radial solve,
//! the 1-2-1 smoothing filter, and the electric-field gradient.
//!
//! The potential equation per plane is (c1 + c2) phi - c1 G^2 phi = rhs with
//! c1 the ion polarization coefficient, c2 the adiabatic-electron response,
//! and G the 4-point ring average at the thermal gyroradius. G has row sums
//! of one, so the Jacobi iteration matrix has spectral radius at most
//! c1/(c1+c2) and converges geometrically.

use std::sync::Arc;

use crate::deposit::{GridLayout, GridScalar, GridVector};
use crate::error::{Error, Result};
use crate::geometry::TorusGrid;
use crate::transport::{
    allreduce_f64, fetch_adjacent_planes, fill_radial, fill_vector_ghosts, RankTopology,
    Transport,
};

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Jacobi relaxation weight.
    pub omega: f64,
    /// Relative-residual stop.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            omega: 2.0 / 3.0,
            tol: 1e-6,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveStats {
    pub iterations: usize,
    /// Relative residual after each iteration.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

/// One row of the gyroaverage operator.
#[derive(Debug, Clone, Copy)]
struct Row {
    /// In-plane flat index the row writes.
    node: u32,
    start: u32,
    end: u32,
    dirichlet: bool,
}

/// Sparse G for one poloidal plane: rows over the owned rings' canonical
/// nodes, columns reaching into the ghost rings.
#[derive(Debug, Clone)]
pub struct PlaneOp {
    rows: Vec<Row>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl PlaneOp {
    /// (in-plane node, dirichlet, column indices, coefficients) per row.
    pub fn rows(&self) -> impl Iterator<Item = (usize, bool, &[u32], &[f64])> {
        self.rows.iter().map(move |r| {
            (
                r.node as usize,
                r.dirichlet,
                &self.cols[r.start as usize..r.end as usize],
                &self.vals[r.start as usize..r.end as usize],
            )
        })
    }

    /// Applies G: dst[row node] = sum vals * src[col]. Slots without a row
    /// (ghost rings, duplicates) are left untouched.
    pub fn apply(&self, src: &[f64], dst: &mut [f64]) {
        for r in &self.rows {
            let mut acc = 0.0;
            for k in r.start as usize..r.end as usize {
                acc += self.vals[k] * src[self.cols[k] as usize];
            }
            dst[r.node as usize] = acc;
        }
    }
}

/// The assembled double-gyroaverage system: one PlaneOp per owned plane
/// (node angles differ by the twist) plus the ring-averaged 1D reduction
/// for the zonal flow.
#[derive(Debug, Clone)]
pub struct GyroOperator {
    pub c1: f64,
    pub c2: f64,
    pub planes: Vec<PlaneOp>,
    zonal_rows: Vec<Vec<(u32, f64)>>,
}

/// Assembles G at the thermal gyroradius rho_i = rho* / B(r, theta) for
/// every owned plane, alongside the 1D zonal reduction. Dirichlet rows
/// (first and last ring) are identity.
pub fn build_gyro_operator(
    grid: &TorusGrid,
    layout: &Arc<GridLayout>,
    tau: f64,
) -> Result<GyroOperator> {
    // worst-case single-G radial reach must stay inside the ghost rings
    let b_min = grid.bfield(grid.r_outer, 0.0).b;
    let reach = (grid.rho_star / b_min / grid.delta_r).ceil() as usize + 1;
    if reach > grid.nghost && layout.window.owned_rings() < grid.mpsi + 1 {
        return Err(Error::Invariant(format!(
            "gyroaverage stencil reaches {reach} rings, beyond nghost = {}",
            grid.nghost
        )));
    }

    let w = layout.window;
    let mut planes = Vec::with_capacity(layout.planes_owned);
    for slot in 0..layout.planes_owned {
        let plane = layout.plane_first + slot;
        let mut rows = Vec::new();
        let mut cols: Vec<u32> = Vec::new();
        let mut vals: Vec<f64> = Vec::new();
        for ring in w.owned_first..=w.owned_last {
            for j in 0..grid.mtheta[ring] {
                let node = layout.node(0, ring, j) as u32;
                let start = cols.len() as u32;
                if ring == 0 || ring == grid.mpsi {
                    cols.push(node);
                    vals.push(1.0);
                    rows.push(Row {
                        node,
                        start,
                        end: cols.len() as u32,
                        dirichlet: true,
                    });
                    continue;
                }
                let r = grid.r[ring];
                let theta = grid.node_theta(plane, ring, j);
                let b = grid.bfield(r, theta).b;
                let rho = grid.rho_star / b;
                // two radial ring points, bilinear within the plane
                for pr in [r + rho, r - rho] {
                    let loc = grid.locate_plane(plane, pr, theta);
                    for a in 0..2 {
                        let wr = if a == 0 { 1.0 - loc.w_r } else { loc.w_r };
                        for bslot in 0..2 {
                            let wt = if bslot == 0 { 1.0 - loc.wt[a] } else { loc.wt[a] };
                            cols.push(layout.node(0, loc.ring[a], loc.node[a][bslot]) as u32);
                            vals.push(0.25 * wr * wt);
                        }
                    }
                }
                // two poloidal ring points stay on this ring
                for pt in [theta + rho / r, theta - rho / r] {
                    let (j0, j1, frac) = grid.ring_lookup(plane, ring, pt);
                    cols.push(layout.node(0, ring, j0) as u32);
                    vals.push(0.25 * (1.0 - frac));
                    cols.push(layout.node(0, ring, j1) as u32);
                    vals.push(0.25 * frac);
                }
                rows.push(Row {
                    node,
                    start,
                    end: cols.len() as u32,
                    dirichlet: false,
                });
            }
        }
        planes.push(PlaneOp { rows, cols, vals });
    }

    // zonal reduction: ring-average of the 4-point radial spread (plane-0
    // node angles; only B's theta dependence enters)
    let mut zonal_rows = Vec::with_capacity(grid.mpsi + 1);
    for ring in 0..=grid.mpsi {
        if ring == 0 || ring == grid.mpsi {
            zonal_rows.push(vec![(ring as u32, 1.0)]);
            continue;
        }
        let mut acc = vec![0.0f64; grid.mpsi + 1];
        let r = grid.r[ring];
        let m = grid.mtheta[ring];
        for j in 0..m {
            let theta = grid.node_theta(0, ring, j);
            let b = grid.bfield(r, theta).b;
            let rho = grid.rho_star / b;
            for pr in [r + rho, r - rho] {
                let rc = pr.clamp(grid.r_inner, grid.r_outer);
                let x = (rc - grid.r_inner) / grid.delta_r;
                let i0 = (x.floor().max(0.0) as usize).min(grid.mpsi - 1);
                let frac = (x - i0 as f64).clamp(0.0, 1.0);
                acc[i0] += 0.25 * (1.0 - frac);
                acc[i0 + 1] += 0.25 * frac;
            }
            acc[ring] += 0.5;
        }
        let row = acc
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i as u32, v / m as f64))
            .collect();
        zonal_rows.push(row);
    }

    Ok(GyroOperator {
        c1: 1.0,
        c2: 1.0 / tau,
        planes,
        zonal_rows,
    })
}

impl GyroOperator {
    fn zonal_apply(&self, src: &[f64], dst: &mut [f64]) {
        for (i, row) in self.zonal_rows.iter().enumerate() {
            dst[i] = row.iter().map(|&(c, v)| v * src[c as usize]).sum();
        }
    }

    pub fn zonal_rows(&self) -> &[Vec<(u32, f64)>] {
        &self.zonal_rows
    }
}

/// Weighted Jacobi solve of (c1 + c2) phi - c1 G^2 phi = rhs on every owned
/// plane, ghost exchange per iteration, Dirichlet phi = 0 at the first and
/// last ring. Non-convergence is flagged, not fatal.
pub fn poisson<T: Transport>(
    t: &mut T,
    topo: &RankTopology,
    op: &GyroOperator,
    rhs: &GridScalar,
    grid: &TorusGrid,
    opts: &SolveOptions,
) -> Result<(GridScalar, SolveStats)> {
    let layout = rhs.layout.clone();
    let radial = topo.radial_comm();
    let mut phi = GridScalar::zeros(layout.clone());
    let mut g1 = GridScalar::zeros(layout.clone());
    let mut g2 = vec![0.0f64; layout.mgrid_local];
    let mut src = vec![0.0f64; layout.mgrid_local];
    let mut stats = SolveStats::default();

    let mut rhs_norm2 = [0.0f64];
    for (slot, plane) in op.planes.iter().enumerate() {
        let slab = rhs.slab(slot);
        for r in &plane.rows {
            if !r.dirichlet {
                let v = slab[r.node as usize];
                rhs_norm2[0] += v * v;
            }
        }
    }
    allreduce_f64(t, &radial, &mut rhs_norm2)?;
    if rhs_norm2[0] == 0.0 {
        stats.converged = true;
        return Ok((phi, stats));
    }
    let rhs_norm = rhs_norm2[0].sqrt();
    let denom = op.c1 + op.c2;

    for _ in 0..opts.max_iter {
        fill_radial(t, topo, &mut phi)?;
        for (slot, plane) in op.planes.iter().enumerate() {
            src.copy_from_slice(phi.slab(slot));
            plane.apply(&src, g1.slab_mut(slot));
        }
        fill_radial(t, topo, &mut g1)?;
        let mut res2 = [0.0f64];
        for (slot, plane) in op.planes.iter().enumerate() {
            plane.apply(g1.slab(slot), &mut g2);
            src.copy_from_slice(rhs.slab(slot));
            let phi_slab = phi.slab_mut(slot);
            for r in &plane.rows {
                let n = r.node as usize;
                if r.dirichlet {
                    phi_slab[n] = 0.0;
                    continue;
                }
                let b = src[n];
                let res = b + op.c1 * g2[n] - denom * phi_slab[n];
                res2[0] += res * res;
                phi_slab[n] =
                    (1.0 - opts.omega) * phi_slab[n] + opts.omega * (b + op.c1 * g2[n]) / denom;
            }
        }
        allreduce_f64(t, &radial, &mut res2)?;
        stats.iterations += 1;
        let rel = res2[0].sqrt() / rhs_norm;
        stats.residuals.push(rel);
        if rel <= opts.tol {
            stats.converged = true;
            break;
        }
    }
    phi.sync_duplicates(grid);
    fill_radial(t, topo, &mut phi)?;
    Ok((phi, stats))
}

/// 1D radial solve of the flux-surface-averaged system with the
/// ring-averaged gyro operator; Dirichlet ends. Inputs are replicated, so
/// no communication is involved.
pub fn zonal_solve(op: &GyroOperator, flux_avg_charge: &[f64], opts: &SolveOptions) -> Vec<f64> {
    let n = flux_avg_charge.len();
    let mut rhs = flux_avg_charge.to_vec();
    rhs[0] = 0.0;
    rhs[n - 1] = 0.0;
    let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut phi = vec![0.0f64; n];
    if rhs_norm == 0.0 {
        return phi;
    }
    let denom = op.c1 + op.c2;
    let mut t1 = vec![0.0f64; n];
    let mut t2 = vec![0.0f64; n];
    for _ in 0..opts.max_iter {
        op.zonal_apply(&phi, &mut t1);
        op.zonal_apply(&t1, &mut t2);
        let mut res2 = 0.0;
        for i in 1..n - 1 {
            let res = rhs[i] + op.c1 * t2[i] - denom * phi[i];
            res2 += res * res;
            phi[i] = (1.0 - opts.omega) * phi[i] + opts.omega * (rhs[i] + op.c1 * t2[i]) / denom;
        }
        if res2.sqrt() / rhs_norm <= opts.tol {
            break;
        }
    }
    phi
}

/// One 1-2-1 pass along theta, periodic per ring, over all window rings of
/// the owned planes. Ring-local, so ghost rings stay consistent with the
/// neighbor that owns them.
pub fn theta_pass(gs: &mut GridScalar, grid: &TorusGrid) {
    let layout = gs.layout.clone();
    let w = layout.window;
    let mut scratch: Vec<f64> = Vec::new();
    for slab in 0..layout.planes_owned {
        for ring in w.first..=w.last {
            let m = grid.mtheta[ring];
            let vals = gs.ring_mut(slab, ring);
            scratch.clear();
            scratch.extend_from_slice(&vals[..m]);
            for j in 0..m {
                let prev = scratch[(j + m - 1) % m];
                let next = scratch[(j + 1) % m];
                vals[j] = 0.25 * prev + 0.5 * scratch[j] + 0.25 * next;
            }
            vals[m] = vals[0];
        }
    }
}

/// Linear interpolation of a ring's values at a physical angle.
#[inline]
fn interp_ring(
    grid: &TorusGrid,
    layout: &GridLayout,
    data: &[f64],
    plane: usize,
    ring: usize,
    theta: f64,
) -> f64 {
    let (j0, j1, frac) = grid.ring_lookup(plane, ring, theta);
    let base = layout.node(0, ring, 0);
    (1.0 - frac) * data[base + j0] + frac * data[base + j1]
}

/// One 1-2-1 pass along r on the owned rings, Dirichlet-respecting at the
/// global boundary (outside treated as zero); neighbor-ring values are
/// angle-interpolated.
pub fn radial_pass(gs: &mut GridScalar, grid: &TorusGrid) {
    let layout = gs.layout.clone();
    let w = layout.window;
    for slab in 0..layout.planes_owned {
        let plane = layout.plane_first + slab;
        let src = gs.slab(slab).to_vec();
        for ring in w.owned_first..=w.owned_last {
            let m = grid.mtheta[ring];
            let base = layout.node(0, ring, 0);
            for j in 0..m {
                let theta = grid.node_theta(plane, ring, j);
                let inner = if ring == 0 {
                    0.0
                } else {
                    interp_ring(grid, &layout, &src, plane, ring - 1, theta)
                };
                let outer = if ring == grid.mpsi {
                    0.0
                } else {
                    interp_ring(grid, &layout, &src, plane, ring + 1, theta)
                };
                gs.slab_mut(slab)[base + j] = 0.25 * inner + 0.5 * src[base + j] + 0.25 * outer;
            }
            let dst = gs.ring_mut(slab, ring);
            dst[m] = dst[0];
        }
    }
}

/// Reads a neighboring plane's value along the field line through node j:
/// the same index, except across the zeta = 0 branch cut where the
/// accumulated 2pi/q shift is interpolated.
#[inline]
fn aligned_read(
    grid: &TorusGrid,
    layout: &GridLayout,
    data: &[f64],
    ring: usize,
    j: usize,
    crossings: i32,
) -> f64 {
    let base = layout.node(0, ring, 0);
    if crossings == 0 {
        return data[base + j];
    }
    let m = grid.mtheta[ring];
    let jf = grid.aligned_index(ring, j, crossings).rem_euclid(m as f64);
    let j0 = (jf.floor() as usize).min(m - 1);
    let frac = (jf - j0 as f64).clamp(0.0, 1.0);
    (1.0 - frac) * data[base + j0] + frac * data[base + (j0 + 1) % m]
}

/// One 1-2-1 pass along the field line across planes.
pub fn toroidal_pass<T: Transport>(
    t: &mut T,
    topo: &RankTopology,
    gs: &mut GridScalar,
    grid: &TorusGrid,
) -> Result<()> {
    let layout = gs.layout.clone();
    let w = layout.window;
    let planes = layout.planes_owned;
    let (left_buf, right_buf) = fetch_adjacent_planes(t, topo, gs)?;
    let snapshot: Vec<Vec<f64>> = (0..planes).map(|s| gs.slab(s).to_vec()).collect();
    for slab in 0..planes {
        let absp = layout.plane_first + slab;
        let left: &[f64] = if slab == 0 { &left_buf } else { &snapshot[slab - 1] };
        let right: &[f64] = if slab + 1 < planes {
            &snapshot[slab + 1]
        } else {
            &right_buf
        };
        let lcross = if absp == 0 { -1 } else { 0 };
        let rcross = if absp == grid.ntoroidal - 1 { 1 } else { 0 };
        for ring in w.owned_first..=w.owned_last {
            let m = grid.mtheta[ring];
            let base = layout.node(0, ring, 0);
            for j in 0..m {
                let lv = aligned_read(grid, &layout, left, ring, j, lcross);
                let rv = aligned_read(grid, &layout, right, ring, j, rcross);
                gs.slab_mut(slab)[base + j] =
                    0.25 * lv + 0.5 * snapshot[slab][base + j] + 0.25 * rv;
            }
            let dst = gs.ring_mut(slab, ring);
            dst[m] = dst[0];
        }
    }
    Ok(())
}

/// The smoothing filter: one 1-2-1 pass along theta, then r, then the field
/// line, with ghost refresh between passes.
pub fn smooth<T: Transport>(
    t: &mut T,
    topo: &RankTopology,
    gs: &mut GridScalar,
    grid: &TorusGrid,
) -> Result<()> {
    fill_radial(t, topo, gs)?;
    theta_pass(gs, grid);
    radial_pass(gs, grid);
    fill_radial(t, topo, gs)?;
    toroidal_pass(t, topo, gs, grid)?;
    gs.sync_duplicates(grid);
    fill_radial(t, topo, gs)?;
    Ok(())
}

/// E = -grad phi on the owned rings of every owned plane, then ghost fill.
///
/// E_r comes from centered ring differences (one-sided at the domain
/// boundary), E_theta from centered differences along the ring, and E_zeta
/// from the field-aligned difference between adjacent planes over the local
/// major radius (so b . grad phi = -b_zeta E_zeta exactly).
pub fn field<T: Transport>(
    t: &mut T,
    topo: &RankTopology,
    phi: &mut GridScalar,
    grid: &TorusGrid,
) -> Result<GridVector> {
    let layout = phi.layout.clone();
    let w = layout.window;
    phi.sync_duplicates(grid);
    fill_radial(t, topo, phi)?;
    let (left_buf, right_buf) = fetch_adjacent_planes(t, topo, phi)?;
    let mut ev = GridVector::zeros(layout.clone());
    let planes = layout.planes_owned;
    for slab in 0..planes {
        let absp = layout.plane_first + slab;
        let src = phi.slab(slab);
        let left: &[f64] = if slab == 0 { &left_buf } else { phi.slab(slab - 1) };
        let right: &[f64] = if slab + 1 < planes {
            phi.slab(slab + 1)
        } else {
            &right_buf
        };
        let lcross = if absp == 0 { -1 } else { 0 };
        let rcross = if absp == grid.ntoroidal - 1 { 1 } else { 0 };
        for ring in w.owned_first..=w.owned_last {
            let m = grid.mtheta[ring];
            let r = grid.r[ring];
            let base = layout.node(0, ring, 0);
            let dth = grid.delta_t[ring];
            for j in 0..m {
                let theta = grid.node_theta(absp, ring, j);
                let prev = src[base + (j + m - 1) % m];
                let next = src[base + (j + 1) % m];
                let e_t = -(next - prev) / (2.0 * r * dth);
                let e_r = if ring == 0 {
                    -(interp_ring(grid, &layout, src, absp, 1, theta) - src[base + j])
                        / grid.delta_r
                } else if ring == grid.mpsi {
                    -(src[base + j] - interp_ring(grid, &layout, src, absp, ring - 1, theta))
                        / grid.delta_r
                } else {
                    -(interp_ring(grid, &layout, src, absp, ring + 1, theta)
                        - interp_ring(grid, &layout, src, absp, ring - 1, theta))
                        / (2.0 * grid.delta_r)
                };
                let lv = aligned_read(grid, &layout, left, ring, j, lcross);
                let rv = aligned_read(grid, &layout, right, ring, j, rcross);
                let rloc = grid.major_r + r * theta.cos();
                let e_z = -(rv - lv) / (2.0 * grid.delta_zeta * rloc);
                let idx = slab * layout.mgrid_local + base + j;
                ev.comp[0][idx] = e_r;
                ev.comp[1][idx] = e_t;
                ev.comp[2][idx] = e_z;
            }
            let dup = slab * layout.mgrid_local + base + m;
            let first = slab * layout.mgrid_local + base;
            for comp in ev.comp.iter_mut() {
                comp[dup] = comp[first];
            }
        }
    }
    fill_vector_ghosts(t, topo, &mut ev)?;
    Ok(ev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunParams;
    use crate::deposit::GridLayout;
    use crate::transport::LocalTransport;

    fn setup(params: &RunParams) -> (TorusGrid, Arc<GridLayout>, RankTopology, LocalTransport) {
        let grid = TorusGrid::build(params).unwrap();
        let window = grid.radial_partition(1).unwrap()[0];
        let layout = GridLayout::new(&grid, window, 0, grid.ntoroidal);
        let topo = RankTopology::new(1, 1, 1, 0);
        let t = LocalTransport::mesh(1).remove(0);
        (grid, layout, topo, t)
    }

    fn toy_params() -> RunParams {
        RunParams {
            mpsi: 16,
            mthetamax: 32,
            ntoroidal: 1,
            ranks_toroidal: 1,
            a_over_rho: 30.0,
            ..RunParams::default()
        }
    }

    #[test]
    fn gyro_rows_sum_to_one() {
        let params = toy_params();
        let (grid, layout, _, _) = setup(&params);
        let op = build_gyro_operator(&grid, &layout, 1.0).unwrap();
        for plane in &op.planes {
            for (_, _, _, vals) in plane.rows() {
                let sum: f64 = vals.iter().sum();
                assert!((sum - 1.0).abs() < 1e-14);
            }
        }
        for row in op.zonal_rows() {
            let sum: f64 = row.iter().map(|(_, v)| v).sum();
            assert!((sum - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn gyro_applied_to_constant_returns_constant() {
        let params = toy_params();
        let (grid, layout, _, _) = setup(&params);
        let op = build_gyro_operator(&grid, &layout, 1.0).unwrap();
        let src = vec![3.25f64; layout.mgrid_local];
        let mut g1 = src.clone();
        op.planes[0].apply(&src, &mut g1);
        let mut g2 = g1.clone();
        op.planes[0].apply(&g1, &mut g2);
        for (node, dirichlet, _, _) in op.planes[0].rows() {
            if !dirichlet {
                assert!((g1[node] - 3.25).abs() < 1e-13);
                assert!((g2[node] - 3.25).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn zero_gyroradius_reduces_to_identity_and_screened_solve() {
        let mut params = toy_params();
        params.a_over_rho = 1e15;
        let (grid, layout, topo, mut t) = setup(&params);
        let op = build_gyro_operator(&grid, &layout, 1.0).unwrap();
        for plane in &op.planes {
            for (node, _, colids, vals) in plane.rows() {
                let diag: f64 = colids
                    .iter()
                    .zip(vals)
                    .filter(|(c, _)| **c as usize == node)
                    .map(|(_, v)| v)
                    .sum();
                assert!((diag - 1.0).abs() < 1e-9, "diag {diag}");
            }
        }
        // constant rhs c: phi = c / c2 at interior points
        let mut rhs = GridScalar::zeros(layout.clone());
        for v in rhs.data.iter_mut() {
            *v = 0.7;
        }
        let opts = SolveOptions {
            tol: 1e-12,
            ..Default::default()
        };
        let (phi, stats) = poisson(&mut t, &topo, &op, &rhs, &grid, &opts).unwrap();
        assert!(stats.converged);
        for ring in 2..grid.mpsi - 1 {
            for j in 0..grid.mtheta[ring] {
                let v = phi.data[layout.node(0, ring, j)];
                assert!((v - 0.7 / op.c2).abs() < 1e-6, "ring {ring} value {v}");
            }
        }
    }

    #[test]
    fn poisson_zero_rhs_gives_zero() {
        let params = toy_params();
        let (grid, layout, topo, mut t) = setup(&params);
        let op = build_gyro_operator(&grid, &layout, 1.0).unwrap();
        let rhs = GridScalar::zeros(layout.clone());
        let (phi, stats) = poisson(&mut t, &topo, &op, &rhs, &grid, &Default::default()).unwrap();
        assert!(stats.converged);
        assert!(phi.data.iter().all(|v| *v == 0.0));
    }

    /// Dense Gaussian-elimination oracle assembled from the operator's
    /// explicit rows.
    fn dense_solve(op: &GyroOperator, layout: &GridLayout, rhs: &GridScalar) -> Vec<f64> {
        let mut dense_id = vec![usize::MAX; layout.mgrid_local];
        let mut nodes = Vec::new();
        for (node, _, _, _) in op.planes[0].rows() {
            dense_id[node] = nodes.len();
            nodes.push(node);
        }
        let n = nodes.len();
        let mut g = vec![vec![0.0f64; n]; n];
        for (node, _, colids, vals) in op.planes[0].rows() {
            let row = dense_id[node];
            for (c, v) in colids.iter().zip(vals) {
                g[row][dense_id[*c as usize]] += v;
            }
        }
        let mut a = vec![vec![0.0f64; n]; n];
        let mut b = vec![0.0f64; n];
        for (node, dirichlet, _, _) in op.planes[0].rows() {
            let row = dense_id[node];
            if dirichlet {
                a[row][row] = 1.0;
                continue;
            }
            for k in 0..n {
                let mut g2 = 0.0;
                for l in 0..n {
                    g2 += g[row][l] * g[l][k];
                }
                a[row][k] = -op.c1 * g2;
            }
            a[row][row] += op.c1 + op.c2;
            b[row] = rhs.data[node];
        }
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            let d = a[col][col];
            for i in col + 1..n {
                let f = a[i][col] / d;
                if f == 0.0 {
                    continue;
                }
                for k in col..n {
                    a[i][k] -= f * a[col][k];
                }
                b[i] -= f * b[col];
            }
        }
        let mut x = vec![0.0f64; n];
        for i in (0..n).rev() {
            let mut acc = b[i];
            for k in i + 1..n {
                acc -= a[i][k] * x[k];
            }
            x[i] = acc / a[i][i];
        }
        let mut full = vec![0.0f64; layout.mgrid_local];
        for (k, node) in nodes.iter().enumerate() {
            full[*node] = x[k];
        }
        full
    }

    #[test]
    fn jacobi_matches_dense_oracle_and_residual_monotone() {
        let params = toy_params();
        let (grid, layout, topo, mut t) = setup(&params);
        let op = build_gyro_operator(&grid, &layout, 1.0).unwrap();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut rhs = GridScalar::zeros(layout.clone());
        for (node, dirichlet, _, _) in op.planes[0].rows() {
            if !dirichlet {
                rhs.data[node] = rng.random::<f64>() * 2.0 - 1.0;
            }
        }
        let opts = SolveOptions {
            tol: 1e-12,
            max_iter: 300,
            ..Default::default()
        };
        let (phi, stats) = poisson(&mut t, &topo, &op, &rhs, &grid, &opts).unwrap();
        assert!(stats.converged);
        for pair in stats.residuals.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-14, "residual not monotone: {pair:?}");
        }
        let oracle = dense_solve(&op, &layout, &rhs);
        let scale = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut worst = 0.0f64;
        for (node, _, _, _) in op.planes[0].rows() {
            worst = worst.max((phi.data[node] - oracle[node]).abs());
        }
        assert!(worst / scale < 1e-8, "relative error {}", worst / scale);
    }

    #[test]
    fn zonal_solve_cases() {
        let params = toy_params();
        let (grid, layout, _, _) = setup(&params);
        let op = build_gyro_operator(&grid, &layout, 1.0).unwrap();
        let n = grid.mpsi + 1;
        let phi = zonal_solve(&op, &vec![0.0; n], &Default::default());
        assert!(phi.iter().all(|v| *v == 0.0));
        // dense 1D oracle on a random rhs
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut rhs = vec![0.0f64; n];
        for v in rhs.iter_mut().take(n - 1).skip(1) {
            *v = rng.random::<f64>() - 0.5;
        }
        let opts = SolveOptions {
            tol: 1e-13,
            max_iter: 400,
            ..Default::default()
        };
        let phi = zonal_solve(&op, &rhs, &opts);
        let mut g = vec![vec![0.0f64; n]; n];
        for (i, row) in op.zonal_rows().iter().enumerate() {
            for &(c, v) in row {
                g[i][c as usize] += v;
            }
        }
        let mut a = vec![vec![0.0f64; n]; n];
        let mut b = vec![0.0f64; n];
        for i in 0..n {
            if i == 0 || i == n - 1 {
                a[i][i] = 1.0;
                continue;
            }
            for k in 0..n {
                let mut g2 = 0.0;
                for l in 0..n {
                    g2 += g[i][l] * g[l][k];
                }
                a[i][k] = -op.c1 * g2;
            }
            a[i][i] += op.c1 + op.c2;
            b[i] = rhs[i];
        }
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for i in col + 1..n {
                let f = a[i][col] / a[col][col];
                for k in col..n {
                    a[i][k] -= f * a[col][k];
                }
                b[i] -= f * b[col];
            }
        }
        let mut x = vec![0.0f64; n];
        for i in (0..n).rev() {
            let mut acc = b[i];
            for k in i + 1..n {
                acc -= a[i][k] * x[k];
            }
            x[i] = acc / a[i][i];
        }
        for i in 0..n {
            assert!((phi[i] - x[i]).abs() < 1e-10, "ring {i}: {} vs {}", phi[i], x[i]);
        }
        // constant input with rho -> 0 gives c / c2 in the interior
        let mut big = toy_params();
        big.a_over_rho = 1e15;
        let (grid2, layout2, _, _) = setup(&big);
        let op2 = build_gyro_operator(&grid2, &layout2, 1.0).unwrap();
        let phi = zonal_solve(&op2, &vec![0.4; n], &opts);
        for (i, v) in phi.iter().enumerate() {
            if i > 1 && i < n - 2 {
                assert!((v - 0.4 / op2.c2).abs() < 1e-6, "ring {i} value {v}");
            }
        }
    }

    #[test]
    fn smooth_preserves_constants_in_interior() {
        let mut params = toy_params();
        params.ntoroidal = 4;
        params.ranks_toroidal = 4;
        let grid = TorusGrid::build(&params).unwrap();
        let window = grid.radial_partition(1).unwrap()[0];
        let layout = GridLayout::new(&grid, window, 0, grid.ntoroidal);
        let topo = RankTopology::new(1, 1, 1, 0);
        let mut t = LocalTransport::mesh(1).remove(0);
        let mut gs = GridScalar::zeros(layout.clone());
        for v in gs.data.iter_mut() {
            *v = 1.5;
        }
        smooth(&mut t, &topo, &mut gs, &grid).unwrap();
        for ring in 1..grid.mpsi {
            for slab in 0..layout.planes_owned {
                for j in 0..grid.mtheta[ring] {
                    let v = gs.data[layout.node(slab, ring, j)];
                    assert!((v - 1.5).abs() < 1e-13, "ring {ring} j {j}: {v}");
                }
            }
        }
    }

    #[test]
    fn smooth_spike_composition() {
        let mut params = toy_params();
        params.ntoroidal = 4;
        params.ranks_toroidal = 4;
        let grid = TorusGrid::build(&params).unwrap();
        let window = grid.radial_partition(1).unwrap()[0];
        let layout = GridLayout::new(&grid, window, 0, grid.ntoroidal);
        let topo = RankTopology::new(1, 1, 1, 0);
        let mut t = LocalTransport::mesh(1).remove(0);
        let mut gs = GridScalar::zeros(layout.clone());
        let (slab, ring, j) = (1usize, 8usize, 5usize);
        let v = 4.0;
        gs.data[layout.node(slab, ring, j)] = v;
        // composed stencil at the spike: each pass keeps 0.5 of the center
        // (every neighbor of the spike is zero in every direction)
        smooth(&mut t, &topo, &mut gs, &grid).unwrap();
        let got = gs.data[layout.node(slab, ring, j)];
        assert!((got - 0.125 * v).abs() < 1e-12, "center {got}");
    }

    #[test]
    fn theta_pass_preserves_ring_sums() {
        let params = toy_params();
        let (grid, layout, _, _) = setup(&params);
        let mut gs = GridScalar::zeros(layout.clone());
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for v in gs.data.iter_mut() {
            *v = rng.random::<f64>() - 0.5;
        }
        let before: Vec<f64> = (0..=grid.mpsi)
            .map(|ring| gs.ring(0, ring)[..grid.mtheta[ring]].iter().sum())
            .collect();
        theta_pass(&mut gs, &grid);
        for (ring, b) in before.iter().enumerate() {
            let after: f64 = gs.ring(0, ring)[..grid.mtheta[ring]].iter().sum();
            assert!((after - b).abs() < 1e-12, "ring {ring}");
        }
    }

    #[test]
    fn smooth_is_linear() {
        let mut params = toy_params();
        params.ntoroidal = 2;
        params.ranks_toroidal = 2;
        let grid = TorusGrid::build(&params).unwrap();
        let window = grid.radial_partition(1).unwrap()[0];
        let layout = GridLayout::new(&grid, window, 0, grid.ntoroidal);
        let topo = RankTopology::new(1, 1, 1, 0);
        let mut t = LocalTransport::mesh(1).remove(0);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut x = GridScalar::zeros(layout.clone());
        let mut y = GridScalar::zeros(layout.clone());
        for (a, b) in x.data.iter_mut().zip(y.data.iter_mut()) {
            *a = rng.random::<f64>() - 0.5;
            *b = rng.random::<f64>() - 0.5;
        }
        let (alpha, beta) = (1.7, -0.6);
        let mut combo = GridScalar::zeros(layout.clone());
        for ((c, a), b) in combo.data.iter_mut().zip(&x.data).zip(&y.data) {
            *c = alpha * a + beta * b;
        }
        smooth(&mut t, &topo, &mut x, &grid).unwrap();
        smooth(&mut t, &topo, &mut y, &grid).unwrap();
        smooth(&mut t, &topo, &mut combo, &grid).unwrap();
        for i in 0..combo.data.len() {
            let expect = alpha * x.data[i] + beta * y.data[i];
            assert!((combo.data[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn field_of_constant_potential_vanishes() {
        let mut params = toy_params();
        params.ntoroidal = 2;
        params.ranks_toroidal = 2;
        let grid = TorusGrid::build(&params).unwrap();
        let window = grid.radial_partition(1).unwrap()[0];
        let layout = GridLayout::new(&grid, window, 0, grid.ntoroidal);
        let topo = RankTopology::new(1, 1, 1, 0);
        let mut t = LocalTransport::mesh(1).remove(0);
        let mut phi = GridScalar::zeros(layout.clone());
        for v in phi.data.iter_mut() {
            *v = 2.0;
        }
        let ev = field(&mut t, &topo, &mut phi, &grid).unwrap();
        for slab in 0..layout.planes_owned {
            for ring in 1..grid.mpsi {
                for j in 0..grid.mtheta[ring] {
                    let idx = layout.node(slab, ring, j);
                    for c in 0..3 {
                        assert!(ev.comp[c][idx].abs() < 1e-13);
                    }
                }
            }
        }
    }

    #[test]
    fn field_theta_gradient_second_order() {
        // phi = sin(theta) on one ring -> E_theta = -cos(theta)/r, with the
        // error falling ~4x when the poloidal resolution doubles
        let mut errs = Vec::new();
        for mthetamax in [32usize, 64] {
            let params = RunParams {
                mpsi: 16,
                mthetamax,
                ntoroidal: 1,
                ranks_toroidal: 1,
                a_over_rho: 30.0,
                ..RunParams::default()
            };
            let (grid, layout, topo, mut t) = setup(&params);
            let mut phi = GridScalar::zeros(layout.clone());
            let ring = 8;
            for j in 0..=grid.mtheta[ring] {
                let theta = grid.node_theta(0, ring, j);
                phi.data[layout.node(0, ring, j)] = theta.sin();
            }
            let ev = field(&mut t, &topo, &mut phi, &grid).unwrap();
            let mut worst = 0.0f64;
            for j in 0..grid.mtheta[ring] {
                let theta = grid.node_theta(0, ring, j);
                let expect = -theta.cos() / grid.r[ring];
                worst = worst.max((ev.comp[1][layout.node(0, ring, j)] - expect).abs());
            }
            errs.push(worst);
        }
        let ratio = errs[0] / errs[1];
        assert!(
            (3.0..5.0).contains(&ratio),
            "convergence ratio {ratio} errors {errs:?}"
        );
    }
}
