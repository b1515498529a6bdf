//! The charge kernel: 4-point gyro-averaged scatter of delta-f weights onto
//! the two bounding poloidal planes, hazard-free accumulation via per-worker
//! grid replicas with deterministic ordered merge, ghost-zone reduction, and
//! the flux-surface-averaged charge.
//!
//! Also home to the grid-resident field containers shared by the solver
//! kernels.

use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{RingWindow, TorusGrid};
use crate::particles::{gyro_points, ParticleStore};
use crate::transport::{
    self, allreduce_f64, exchange_radial, merge_toroidal, RankTopology, Transport,
};

/// Node addressing for one rank's slice of the field arrays: the local ring
/// window (ghosts included) over `planes_owned` owned planes plus one
/// toroidal ghost plane.
#[derive(Debug, Clone)]
pub struct GridLayout {
    pub window: RingWindow,
    pub plane_first: usize,
    pub planes_owned: usize,
    pub ntoroidal: usize,
    pub mpsi: usize,
    pub nghost: usize,
    /// Per-window-ring start offset within one plane slab.
    igrid_local: Vec<usize>,
    /// Nodes per window ring, including the closure duplicate.
    ring_size: Vec<usize>,
    pub mgrid_local: usize,
    /// (ring, j) per in-plane flat slot; the nested ring loops of the grid
    /// kernels run over this single index space.
    node_map: Vec<(u32, u32)>,
}

impl GridLayout {
    pub fn new(
        grid: &TorusGrid,
        window: RingWindow,
        plane_first: usize,
        planes_owned: usize,
    ) -> Arc<GridLayout> {
        let mut igrid_local = Vec::with_capacity(window.last - window.first + 1);
        let mut ring_size = Vec::with_capacity(window.last - window.first + 1);
        let mut node_map = Vec::new();
        let mut acc = 0usize;
        for ring in window.first..=window.last {
            igrid_local.push(acc);
            ring_size.push(grid.mtheta[ring] + 1);
            for j in 0..=grid.mtheta[ring] {
                node_map.push((ring as u32, j as u32));
            }
            acc += grid.mtheta[ring] + 1;
        }
        Arc::new(GridLayout {
            window,
            plane_first,
            planes_owned,
            ntoroidal: grid.ntoroidal,
            mpsi: grid.mpsi,
            nghost: grid.nghost,
            igrid_local,
            ring_size,
            mgrid_local: acc,
            node_map,
        })
    }

    /// The flattened (ring, j) index space of one plane slab, closure
    /// duplicates included; length equals `mgrid_local`.
    #[inline]
    pub fn flat_nodes(&self) -> &[(u32, u32)] {
        &self.node_map
    }

    /// Number of plane slabs held locally (owned + toroidal ghost).
    #[inline]
    pub fn slabs(&self) -> usize {
        self.planes_owned + 1
    }

    /// Flat index of canonical node j on a global ring within a plane slab.
    #[inline]
    pub fn node(&self, slab: usize, ring: usize, j: usize) -> usize {
        debug_assert!(self.window.contains_ring(ring));
        slab * self.mgrid_local + self.igrid_local[ring - self.window.first] + j
    }

    #[inline]
    pub fn ring_range(&self, slab: usize, ring: usize) -> Range<usize> {
        let k = ring - self.window.first;
        let start = slab * self.mgrid_local + self.igrid_local[k];
        start..start + self.ring_size[k]
    }

    #[inline]
    pub fn slab_range(&self, slab: usize) -> Range<usize> {
        slab * self.mgrid_local..(slab + 1) * self.mgrid_local
    }

    /// Total values held (all slabs).
    pub fn len(&self) -> usize {
        self.slabs() * self.mgrid_local
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-grid-point scalar spanning the local planes plus ghost zones.
#[derive(Debug, Clone)]
pub struct GridScalar {
    pub layout: Arc<GridLayout>,
    pub data: Vec<f64>,
}

impl GridScalar {
    pub fn zeros(layout: Arc<GridLayout>) -> GridScalar {
        let n = layout.len();
        GridScalar {
            layout,
            data: vec![0.0; n],
        }
    }

    #[inline]
    pub fn ring(&self, slab: usize, ring: usize) -> &[f64] {
        &self.data[self.layout.ring_range(slab, ring)]
    }

    #[inline]
    pub fn ring_mut(&mut self, slab: usize, ring: usize) -> &mut [f64] {
        let r = self.layout.ring_range(slab, ring);
        &mut self.data[r]
    }

    #[inline]
    pub fn slab(&self, slab: usize) -> &[f64] {
        &self.data[self.layout.slab_range(slab)]
    }

    #[inline]
    pub fn slab_mut(&mut self, slab: usize) -> &mut [f64] {
        let r = self.layout.slab_range(slab);
        &mut self.data[r]
    }

    /// Disjoint mutable views of two slabs (a < b).
    pub fn two_slabs(&mut self, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
        assert!(a < b);
        let m = self.layout.mgrid_local;
        let (lo, hi) = self.data.split_at_mut(b * m);
        (&mut lo[a * m..(a + 1) * m], &mut hi[..m])
    }

    /// Sum over owned planes, owned rings, canonical nodes.
    pub fn sum_owned(&self, grid: &TorusGrid) -> f64 {
        let w = self.layout.window;
        let mut total = 0.0;
        for slab in 0..self.layout.planes_owned {
            for ring in w.owned_first..=w.owned_last {
                let vals = self.ring(slab, ring);
                total += vals[..grid.mtheta[ring]].iter().sum::<f64>();
            }
        }
        total
    }

    /// Copies each ring's node 0 into its closure duplicate.
    pub fn sync_duplicates(&mut self, grid: &TorusGrid) {
        let w = self.layout.window;
        for slab in 0..self.layout.slabs() {
            for ring in w.first..=w.last {
                let vals = self.ring_mut(slab, ring);
                vals[grid.mtheta[ring]] = vals[0];
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Per-grid-point 3-component vector (the electric field).
#[derive(Debug, Clone)]
pub struct GridVector {
    pub layout: Arc<GridLayout>,
    pub comp: [Vec<f64>; 3],
}

impl GridVector {
    pub fn zeros(layout: Arc<GridLayout>) -> GridVector {
        let n = layout.len();
        GridVector {
            layout,
            comp: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }
}

/// Grid memory per toroidal domain for the charge array (2 plane slabs of
/// 8-byte reals).
pub fn charge_grid_bytes(mgrid: usize) -> usize {
    mgrid * 2 * 8
}

/// Grid memory per toroidal domain for the 3-component field array.
pub fn evector_grid_bytes(mgrid: usize) -> usize {
    mgrid * 2 * 3 * 8
}

#[derive(Debug, Default, Clone, Copy)]
pub struct DepositStats {
    /// Sum of weight quarters actually scattered.
    pub deposited: f64,
    /// Sum of weight quarters dropped beyond the ghost window.
    pub dropped_weight: f64,
    pub dropped_points: u64,
    /// Gyro-points radially clamped into the annulus.
    pub clamped_points: u64,
}

impl DepositStats {
    fn merge(&mut self, other: &DepositStats) {
        self.deposited += other.deposited;
        self.dropped_weight += other.dropped_weight;
        self.dropped_points += other.dropped_points;
        self.clamped_points += other.clamped_points;
    }
}

fn deposit_range(
    store: &ParticleStore,
    grid: &TorusGrid,
    layout: &Arc<GridLayout>,
    range: Range<usize>,
) -> (GridScalar, DepositStats) {
    let mut gs = GridScalar::zeros(layout.clone());
    let mut stats = DepositStats::default();
    let w = layout.window;
    let plane_first = layout.plane_first;
    for i in range {
        let quarter = store.weight[i] * 0.25;
        let points = gyro_points(grid, store.r[i], store.theta[i], store.mu[i]);
        for (pr, pt) in points {
            let loc = grid.locate(pr, pt, store.zeta[i]);
            if loc.clamped {
                stats.clamped_points += 1;
            }
            if loc.ring[0] < w.first || loc.ring[1] > w.last {
                stats.dropped_points += 1;
                stats.dropped_weight += quarter;
                continue;
            }
            let slot0 = loc.plane[0] - plane_first;
            debug_assert!(slot0 < layout.planes_owned);
            for s in 0..2 {
                let slab = slot0 + s;
                for a in 0..2 {
                    for b in 0..2 {
                        let idx = layout.node(slab, loc.ring[a], loc.node[s][a][b]);
                        gs.data[idx] += quarter * loc.weight(s, a, b);
                    }
                }
            }
            stats.deposited += quarter;
        }
    }
    (gs, stats)
}

/// Scatters the local particles onto per-worker grid replicas and merges the
/// replicas in fixed worker order. Gyro-points whose radial stencil leaves
/// the ghost window are dropped and counted.
pub fn deposit_local(
    store: &ParticleStore,
    grid: &TorusGrid,
    layout: &Arc<GridLayout>,
    workers: usize,
) -> (GridScalar, DepositStats) {
    let n = store.len();
    if workers <= 1 || n < 2 * workers {
        return deposit_range(store, grid, layout, 0..n);
    }
    let chunk = n.div_ceil(workers);
    let mut parts: Vec<(GridScalar, DepositStats)> = Vec::with_capacity(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|wk| {
                let lo = wk * chunk;
                let hi = ((wk + 1) * chunk).min(n);
                scope.spawn(move || deposit_range(store, grid, layout, lo..hi))
            })
            .collect();
        for h in handles {
            parts.push(h.join().expect("deposit worker panicked"));
        }
    });
    let (mut gs, mut stats) = parts.remove(0);
    for (part, pstats) in &parts {
        for (d, s) in gs.data.iter_mut().zip(&part.data) {
            *d += s;
        }
        stats.merge(pstats);
    }
    (gs, stats)
}

/// The full charge kernel: local scatter, particle-communicator reduction,
/// radial ghost merge, toroidal boundary-plane merge.
///
/// The returned field holds raw deposited weight sums; dividing by the
/// marker-density reference is the caller's step (the driver does it before
/// the Poisson solve).
pub fn charge<T: Transport>(
    t: &mut T,
    topo: &RankTopology,
    store: &ParticleStore,
    grid: &TorusGrid,
    layout: &Arc<GridLayout>,
    workers: usize,
) -> Result<(GridScalar, DepositStats)> {
    if let Some(bad) = store.weight.iter().position(|w| !w.is_finite()) {
        return Err(Error::NonFinite {
            what: "weight",
            index: bad,
        });
    }
    let (mut gs, stats) = deposit_local(store, grid, layout, workers);
    transport::particle_reduce_grid(t, topo, &mut gs)?;
    exchange_radial(t, topo, &mut gs)?;
    merge_toroidal(t, topo, &mut gs)?;
    gs.sync_duplicates(grid);
    Ok((gs, stats))
}

/// Per-ring mean of node values over the whole flux surface (all planes,
/// canonical nodes), replicated on every rank. Only the pd = 0 replica of
/// each domain contributes, so values are counted once.
pub fn flux_surface_average<T: Transport>(
    t: &mut T,
    topo: &RankTopology,
    gs: &GridScalar,
    grid: &TorusGrid,
) -> Result<Vec<f64>> {
    let mut ring_sum = vec![0.0f64; grid.mpsi + 1];
    if topo.pd == 0 {
        let w = gs.layout.window;
        for slab in 0..gs.layout.planes_owned {
            for ring in w.owned_first..=w.owned_last {
                let vals = gs.ring(slab, ring);
                ring_sum[ring] += vals[..grid.mtheta[ring]].iter().sum::<f64>();
            }
        }
    }
    allreduce_f64(t, &topo.world(), &mut ring_sum)?;
    for (ring, sum) in ring_sum.iter_mut().enumerate() {
        *sum /= (grid.mtheta[ring] * grid.ntoroidal) as f64;
    }
    Ok(ring_sum)
}

/// Pointwise division by the marker-density reference; nodes that collected
/// no markers stay zero.
pub fn normalize_by_markers(raw: &GridScalar, markers: &GridScalar) -> GridScalar {
    let mut out = GridScalar::zeros(raw.layout.clone());
    for ((o, &x), &m) in out.data.iter_mut().zip(&raw.data).zip(&markers.data) {
        if m > 1e-12 {
            *o = x / m;
        }
    }
    out
}
