//! Logical-rank message passing: the toroidal/radial/particle communicators,
//! deterministic collectives, ghost-zone exchange, and the iterative particle
//! shift.
//!
//! Ranks are in-process state machines connected by FIFO channels per ordered
//! pair. Receives always name their source, and reductions accumulate in
//! fixed member order, so results are bitwise reproducible no matter how the
//! rank threads are scheduled.

use std::collections::VecDeque;
use std::sync::mpsc;

use crate::deposit::{GridScalar, GridVector};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, TorusGrid};
use crate::particles::ParticleStore;

/// Message tags; one per logical channel so demultiplexing never depends on
/// arrival timing.
pub mod tags {
    pub const REDUCE: u32 = 1;
    pub const BCAST: u32 = 2;
    pub const GHOST_RAD_MERGE: u32 = 3;
    pub const GHOST_RAD_FILL: u32 = 4;
    pub const GHOST_TOR_MERGE: u32 = 5;
    pub const GHOST_TOR_FILL: u32 = 6;
    pub const PLANE_LEFT: u32 = 7;
    pub const PLANE_RIGHT: u32 = 8;
    pub const SHIFT_TOR_RIGHT: u32 = 9;
    pub const SHIFT_TOR_LEFT: u32 = 10;
    pub const SHIFT_RAD_IN: u32 = 11;
    pub const SHIFT_RAD_OUT: u32 = 12;
    pub const GATHER: u32 = 13;
}

#[derive(Debug, Clone)]
pub enum Payload {
    F64(Vec<f64>),
    U64(Vec<u64>),
    Bytes(Vec<u8>),
}

impl Payload {
    pub fn into_f64(self) -> Result<Vec<f64>> {
        match self {
            Payload::F64(v) => Ok(v),
            _ => Err(Error::Encoding("expected f64 payload".into())),
        }
    }
    pub fn into_u64(self) -> Result<Vec<u64>> {
        match self {
            Payload::U64(v) => Ok(v),
            _ => Err(Error::Encoding("expected u64 payload".into())),
        }
    }
    pub fn into_bytes(self) -> Result<Vec<u8>> {
        match self {
            Payload::Bytes(v) => Ok(v),
            _ => Err(Error::Encoding("expected byte payload".into())),
        }
    }
}

struct Envelope {
    from: usize,
    tag: u32,
    payload: Payload,
}

/// Point-to-point message passing between logical ranks. A multi-process
/// backend can slot in behind this trait; the in-process one below is what
/// runs everywhere.
pub trait Transport: Send {
    fn rank(&self) -> usize;
    fn nranks(&self) -> usize;
    fn send(&mut self, to: usize, tag: u32, payload: Payload);
    /// Blocking receive of the next message from `from` carrying `tag`.
    fn recv(&mut self, from: usize, tag: u32) -> Payload;
}

/// Channel-mesh transport for ranks living in one process.
pub struct LocalTransport {
    rank: usize,
    n: usize,
    peers: Vec<mpsc::Sender<Envelope>>,
    inbox: mpsc::Receiver<Envelope>,
    stash: VecDeque<Envelope>,
}

impl LocalTransport {
    /// Builds the full rank mesh; element i is rank i's endpoint.
    pub fn mesh(n: usize) -> Vec<LocalTransport> {
        let mut senders = Vec::with_capacity(n);
        let mut receivers = Vec::with_capacity(n);
        for _ in 0..n {
            let (tx, rx) = mpsc::channel();
            senders.push(tx);
            receivers.push(rx);
        }
        receivers
            .into_iter()
            .enumerate()
            .map(|(rank, inbox)| LocalTransport {
                rank,
                n,
                peers: senders.clone(),
                inbox,
                stash: VecDeque::new(),
            })
            .collect()
    }
}

impl Transport for LocalTransport {
    fn rank(&self) -> usize {
        self.rank
    }
    fn nranks(&self) -> usize {
        self.n
    }
    fn send(&mut self, to: usize, tag: u32, payload: Payload) {
        let env = Envelope {
            from: self.rank,
            tag,
            payload,
        };
        self.peers[to].send(env).expect("peer hung up");
    }
    fn recv(&mut self, from: usize, tag: u32) -> Payload {
        if let Some(pos) = self
            .stash
            .iter()
            .position(|e| e.from == from && e.tag == tag)
        {
            return self.stash.remove(pos).unwrap().payload;
        }
        loop {
            let env = self.inbox.recv().expect("all peers hung up");
            if env.from == from && env.tag == tag {
                return env.payload;
            }
            self.stash.push_back(env);
        }
    }
}

/// Logical-rank identity and neighbor links for the three communicators.
#[derive(Debug, Clone)]
pub struct RankTopology {
    pub rank: usize,
    pub tor: usize,
    pub rad: usize,
    pub pd: usize,
    pub ntor: usize,
    pub nrad: usize,
    pub npd: usize,
}

impl RankTopology {
    pub fn new(ntor: usize, nrad: usize, npd: usize, rank: usize) -> Self {
        let pd = rank % npd;
        let rad = (rank / npd) % nrad;
        let tor = rank / (npd * nrad);
        RankTopology {
            rank,
            tor,
            rad,
            pd,
            ntor,
            nrad,
            npd,
        }
    }

    pub fn nranks(&self) -> usize {
        self.ntor * self.nrad * self.npd
    }

    pub fn rank_of(&self, tor: usize, rad: usize, pd: usize) -> usize {
        (tor * self.nrad + rad) * self.npd + pd
    }

    /// Toroidal neighbors are periodic.
    pub fn tor_right(&self) -> usize {
        self.rank_of((self.tor + 1) % self.ntor, self.rad, self.pd)
    }
    pub fn tor_left(&self) -> usize {
        self.rank_of((self.tor + self.ntor - 1) % self.ntor, self.rad, self.pd)
    }
    /// Radial neighbors are edge-terminated.
    pub fn rad_inner(&self) -> Option<usize> {
        (self.rad > 0).then(|| self.rank_of(self.tor, self.rad - 1, self.pd))
    }
    pub fn rad_outer(&self) -> Option<usize> {
        (self.rad + 1 < self.nrad).then(|| self.rank_of(self.tor, self.rad + 1, self.pd))
    }

    /// Communicator membership, ordered (the reduction order).
    pub fn toroidal_comm(&self) -> Vec<usize> {
        (0..self.ntor)
            .map(|t| self.rank_of(t, self.rad, self.pd))
            .collect()
    }
    pub fn radial_comm(&self) -> Vec<usize> {
        (0..self.nrad)
            .map(|d| self.rank_of(self.tor, d, self.pd))
            .collect()
    }
    pub fn particle_comm(&self) -> Vec<usize> {
        (0..self.npd)
            .map(|p| self.rank_of(self.tor, self.rad, p))
            .collect()
    }
    pub fn world(&self) -> Vec<usize> {
        (0..self.nranks()).collect()
    }
}

/// Element-wise sum replicated to every member, accumulated in member order
/// at the group head and broadcast back (fixed tree, deterministic rounding).
pub fn allreduce_f64<T: Transport>(t: &mut T, group: &[usize], data: &mut [f64]) -> Result<()> {
    if group.len() <= 1 {
        return Ok(());
    }
    let me = t.rank();
    let root = group[0];
    if me == root {
        for &m in &group[1..] {
            let v = t.recv(m, tags::REDUCE).into_f64()?;
            if v.len() != data.len() {
                return Err(Error::SizeMismatch {
                    expected: data.len(),
                    got: v.len(),
                });
            }
            for (d, x) in data.iter_mut().zip(v) {
                *d += x;
            }
        }
        for &m in &group[1..] {
            t.send(m, tags::BCAST, Payload::F64(data.to_vec()));
        }
    } else {
        t.send(root, tags::REDUCE, Payload::F64(data.to_vec()));
        let v = t.recv(root, tags::BCAST).into_f64()?;
        if v.len() != data.len() {
            return Err(Error::SizeMismatch {
                expected: data.len(),
                got: v.len(),
            });
        }
        data.copy_from_slice(&v);
    }
    Ok(())
}

/// Integer-exact counterpart of [`allreduce_f64`].
pub fn allreduce_u64<T: Transport>(t: &mut T, group: &[usize], data: &mut [u64]) -> Result<()> {
    if group.len() <= 1 {
        return Ok(());
    }
    let me = t.rank();
    let root = group[0];
    if me == root {
        for &m in &group[1..] {
            let v = t.recv(m, tags::REDUCE).into_u64()?;
            if v.len() != data.len() {
                return Err(Error::SizeMismatch {
                    expected: data.len(),
                    got: v.len(),
                });
            }
            for (d, x) in data.iter_mut().zip(v) {
                *d += x;
            }
        }
        for &m in &group[1..] {
            t.send(m, tags::BCAST, Payload::U64(data.to_vec()));
        }
    } else {
        t.send(root, tags::REDUCE, Payload::U64(data.to_vec()));
        let v = t.recv(root, tags::BCAST).into_u64()?;
        data.copy_from_slice(&v);
    }
    Ok(())
}

/// Sum of per-replica charge grids within the particle communicator.
pub fn particle_reduce_grid<T: Transport>(
    t: &mut T,
    topo: &RankTopology,
    gs: &mut GridScalar,
) -> Result<()> {
    allreduce_f64(t, &topo.particle_comm(), &mut gs.data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GhostMode {
    /// Ghost contributions added into the owner, donor ghosts zeroed.
    MergeAdd,
    /// Owner values copied outward into neighbor ghosts.
    CopyFill,
}

/// Radial ghost exchange over the full local slab (owned planes + the
/// toroidal ghost plane). Edge domains skip their missing neighbor.
pub fn exchange_radial<T: Transport>(
    t: &mut T,
    topo: &RankTopology,
    gs: &mut GridScalar,
) -> Result<()> {
    exchange_radial_mode(t, topo, gs, GhostMode::MergeAdd)
}

pub fn fill_radial<T: Transport>(
    t: &mut T,
    topo: &RankTopology,
    gs: &mut GridScalar,
) -> Result<()> {
    exchange_radial_mode(t, topo, gs, GhostMode::CopyFill)
}

fn exchange_radial_mode<T: Transport>(
    t: &mut T,
    topo: &RankTopology,
    gs: &mut GridScalar,
    mode: GhostMode,
) -> Result<()> {
    if topo.nrad == 1 {
        return Ok(());
    }
    let layout = gs.layout.clone();
    let w = layout.window;
    let slabs = layout.planes_owned + 1;
    // ring spans exchanged with each side
    let inner_ghost = (w.first, w.owned_first); // rings I hold but inner neighbor owns
    let outer_ghost = (w.owned_last + 1, w.last + 1);
    let inner_edge = (w.owned_first, (w.owned_first + layout.nghost).min(w.owned_last + 1));
    let outer_edge = (w.owned_last + 1 - layout.nghost.min(w.owned_rings()), w.owned_last + 1);

    let pack = |gs: &GridScalar, lo: usize, hi: usize| -> Vec<f64> {
        let mut buf = Vec::new();
        for slab in 0..slabs {
            for ring in lo..hi {
                buf.extend_from_slice(gs.ring(slab, ring));
            }
        }
        buf
    };
    let apply = |gs: &mut GridScalar, lo: usize, hi: usize, buf: &[f64], add: bool| -> Result<()> {
        let mut pos = 0;
        for slab in 0..slabs {
            for ring in lo..hi {
                let dst = gs.ring_mut(slab, ring);
                let src = buf.get(pos..pos + dst.len()).ok_or(Error::SizeMismatch {
                    expected: pos + dst.len(),
                    got: buf.len(),
                })?;
                if add {
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                } else {
                    dst.copy_from_slice(src);
                }
                pos += dst.len();
            }
        }
        if pos != buf.len() {
            return Err(Error::SizeMismatch {
                expected: pos,
                got: buf.len(),
            });
        }
        Ok(())
    };

    let tag = match mode {
        GhostMode::MergeAdd => tags::GHOST_RAD_MERGE,
        GhostMode::CopyFill => tags::GHOST_RAD_FILL,
    };
    let inner = topo.rad_inner();
    let outer = topo.rad_outer();

    match mode {
        GhostMode::MergeAdd => {
            // donate ghosts toward their owners, receive into owned rings
            if let Some(peer) = inner {
                t.send(peer, tag, Payload::F64(pack(gs, inner_ghost.0, inner_ghost.1)));
            }
            if let Some(peer) = outer {
                t.send(peer, tag, Payload::F64(pack(gs, outer_ghost.0, outer_ghost.1)));
            }
            if let Some(peer) = inner {
                let buf = t.recv(peer, tag).into_f64()?;
                apply(gs, inner_edge.0, inner_edge.1, &buf, true)?;
            }
            if let Some(peer) = outer {
                let buf = t.recv(peer, tag).into_f64()?;
                apply(gs, outer_edge.0, outer_edge.1, &buf, true)?;
            }
            // donor ghosts are spent
            for slab in 0..slabs {
                for ring in inner_ghost.0..inner_ghost.1 {
                    gs.ring_mut(slab, ring).fill(0.0);
                }
                for ring in outer_ghost.0..outer_ghost.1 {
                    gs.ring_mut(slab, ring).fill(0.0);
                }
            }
        }
        GhostMode::CopyFill => {
            // send owned edges outward, receive into my ghosts
            if let Some(peer) = inner {
                t.send(peer, tag, Payload::F64(pack(gs, inner_edge.0, inner_edge.1)));
            }
            if let Some(peer) = outer {
                t.send(peer, tag, Payload::F64(pack(gs, outer_edge.0, outer_edge.1)));
            }
            if let Some(peer) = inner {
                let buf = t.recv(peer, tag).into_f64()?;
                apply(gs, inner_ghost.0, inner_ghost.1, &buf, false)?;
            }
            if let Some(peer) = outer {
                let buf = t.recv(peer, tag).into_f64()?;
                apply(gs, outer_ghost.0, outer_ghost.1, &buf, false)?;
            }
        }
    }
    Ok(())
}

/// Merges the toroidal ghost plane into the right neighbor's first owned
/// plane and zeroes it.
pub fn merge_toroidal<T: Transport>(
    t: &mut T,
    topo: &RankTopology,
    gs: &mut GridScalar,
) -> Result<()> {
    let ghost_slab = gs.layout.planes_owned;
    if topo.ntor == 1 {
        let (own, ghost) = gs.two_slabs(0, ghost_slab);
        for (d, s) in own.iter_mut().zip(ghost.iter_mut()) {
            *d += *s;
            *s = 0.0;
        }
        return Ok(());
    }
    let right = topo.tor_right();
    let left = topo.tor_left();
    let buf = gs.slab(ghost_slab).to_vec();
    t.send(right, tags::GHOST_TOR_MERGE, Payload::F64(buf));
    let incoming = t.recv(left, tags::GHOST_TOR_MERGE).into_f64()?;
    let own = gs.slab_mut(0);
    if incoming.len() != own.len() {
        return Err(Error::SizeMismatch {
            expected: own.len(),
            got: incoming.len(),
        });
    }
    for (d, s) in own.iter_mut().zip(&incoming) {
        *d += s;
    }
    gs.slab_mut(ghost_slab).fill(0.0);
    Ok(())
}

/// Refills the toroidal ghost plane with the right neighbor's first owned
/// plane.
pub fn fill_toroidal<T: Transport>(
    t: &mut T,
    topo: &RankTopology,
    gs: &mut GridScalar,
) -> Result<()> {
    let ghost_slab = gs.layout.planes_owned;
    if topo.ntor == 1 {
        let (own, ghost) = gs.two_slabs(0, ghost_slab);
        ghost.copy_from_slice(own);
        return Ok(());
    }
    let right = topo.tor_right();
    let left = topo.tor_left();
    let buf = gs.slab(0).to_vec();
    t.send(left, tags::GHOST_TOR_FILL, Payload::F64(buf));
    let incoming = t.recv(right, tags::GHOST_TOR_FILL).into_f64()?;
    let ghost = gs.slab_mut(ghost_slab);
    if incoming.len() != ghost.len() {
        return Err(Error::SizeMismatch {
            expected: ghost.len(),
            got: incoming.len(),
        });
    }
    ghost.copy_from_slice(&incoming);
    Ok(())
}

/// Vector-field version of [`fill_toroidal`] plus radial fill, for E.
pub fn fill_vector_ghosts<T: Transport>(
    t: &mut T,
    topo: &RankTopology,
    ev: &mut GridVector,
) -> Result<()> {
    for c in 0..3 {
        let mut gs = GridScalar {
            layout: ev.layout.clone(),
            data: std::mem::take(&mut ev.comp[c]),
        };
        fill_radial(t, topo, &mut gs)?;
        fill_toroidal(t, topo, &mut gs)?;
        ev.comp[c] = gs.data;
    }
    Ok(())
}

/// Fetches the planes adjacent to my owned span: the left neighbor's last
/// owned plane and the right neighbor's first owned plane.
pub fn fetch_adjacent_planes<T: Transport>(
    t: &mut T,
    topo: &RankTopology,
    gs: &GridScalar,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let last = gs.layout.planes_owned - 1;
    if topo.ntor == 1 {
        return Ok((gs.slab(last).to_vec(), gs.slab(0).to_vec()));
    }
    let right = topo.tor_right();
    let left = topo.tor_left();
    t.send(right, tags::PLANE_RIGHT, Payload::F64(gs.slab(last).to_vec()));
    t.send(left, tags::PLANE_LEFT, Payload::F64(gs.slab(0).to_vec()));
    let from_left = t.recv(left, tags::PLANE_RIGHT).into_f64()?;
    let from_right = t.recv(right, tags::PLANE_LEFT).into_f64()?;
    Ok((from_left, from_right))
}

// ---------------------------------------------------------------------------
// particle shift
// ---------------------------------------------------------------------------

/// Message wire format: u32 magic, u32 attribute count, u64 particle count,
/// then the attribute arrays in canonical order, little-endian 8-byte reals.
pub const WIRE_MAGIC: u32 = 0x5049_4331;

pub fn pack_particles(store: &ParticleStore, indices: &[usize]) -> Vec<u8> {
    let n = indices.len();
    let mut buf = Vec::with_capacity(16 + n * ParticleStore::ATTRS * 8);
    buf.extend_from_slice(&WIRE_MAGIC.to_le_bytes());
    buf.extend_from_slice(&(ParticleStore::ATTRS as u32).to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    for attr in store.attrs() {
        for &i in indices {
            buf.extend_from_slice(&attr[i].to_le_bytes());
        }
    }
    buf
}

pub fn unpack_particles(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    let bad = |msg: &str| Error::Encoding(msg.into());
    if bytes.len() < 16 {
        return Err(bad("short header"));
    }
    let magic = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let nattr = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if magic != WIRE_MAGIC {
        return Err(bad("bad magic"));
    }
    if nattr != ParticleStore::ATTRS {
        return Err(bad("attribute count mismatch"));
    }
    if bytes.len() != 16 + nattr * count * 8 {
        return Err(Error::SizeMismatch {
            expected: 16 + nattr * count * 8,
            got: bytes.len(),
        });
    }
    let mut out = Vec::with_capacity(nattr);
    let mut pos = 16;
    for _ in 0..nattr {
        let mut col = Vec::with_capacity(count);
        for _ in 0..count {
            col.push(f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()));
            pos += 8;
        }
        out.push(col);
    }
    Ok(out)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ShiftStats {
    pub moved_toroidal: u64,
    pub moved_radial: u64,
    pub bytes_toroidal: u64,
    pub bytes_radial: u64,
    pub iterations: u32,
}

/// Ownership context the shift needs: which toroidal wedge and radial cells
/// this rank owns, and who owns every radial cell.
pub struct ShiftCtx<'a> {
    pub grid: &'a TorusGrid,
    pub planes_owned: usize,
    /// Radial domain index per cell 0..mpsi-1.
    pub cell_owner: &'a [usize],
    pub owned_cell_first: usize,
    pub owned_cell_last: usize,
}

impl ShiftCtx<'_> {
    /// Toroidal rank owning a zeta angle.
    #[inline]
    pub fn tor_owner(&self, zeta: f64, ntor: usize) -> usize {
        let plane = ((wrap_angle(zeta) / self.grid.delta_zeta).floor() as usize)
            .min(self.grid.ntoroidal - 1);
        (plane / self.planes_owned).min(ntor - 1)
    }
}

/// Migrates particles to their owning ranks: toroidal first, then radial,
/// iterating with nearest-neighbor sendrecv until a global all-reduce of
/// movers reaches zero. Holes are backfilled from the array tail; buffers
/// use the per-attribute wire layout.
pub fn shift<T: Transport>(
    t: &mut T,
    topo: &RankTopology,
    ctx: &ShiftCtx,
    store: &mut ParticleStore,
) -> Result<ShiftStats> {
    let mut stats = ShiftStats::default();
    let max_iter = topo.ntor + topo.nrad + 2;
    for iter in 0..=max_iter {
        if iter == max_iter {
            return Err(Error::ShiftDiverged(max_iter));
        }
        stats.iterations = iter as u32 + 1;
        let mut moved = 0u64;

        if topo.ntor > 1 {
            let mut go_right = Vec::new();
            let mut go_left = Vec::new();
            for i in 0..store.len() {
                let owner = ctx.tor_owner(store.zeta[i], topo.ntor);
                if owner == topo.tor {
                    continue;
                }
                let d = (owner + topo.ntor - topo.tor) % topo.ntor;
                if d <= topo.ntor / 2 {
                    go_right.push(i);
                } else {
                    go_left.push(i);
                }
            }
            moved += (go_right.len() + go_left.len()) as u64;
            stats.moved_toroidal += (go_right.len() + go_left.len()) as u64;
            let right_buf = pack_particles(store, &go_right);
            let left_buf = pack_particles(store, &go_left);
            stats.bytes_toroidal += (right_buf.len() + left_buf.len()) as u64;
            store.remove_backfill(&mut go_right, &mut go_left);
            t.send(topo.tor_right(), tags::SHIFT_TOR_RIGHT, Payload::Bytes(right_buf));
            t.send(topo.tor_left(), tags::SHIFT_TOR_LEFT, Payload::Bytes(left_buf));
            let from_left = t.recv(topo.tor_left(), tags::SHIFT_TOR_RIGHT).into_bytes()?;
            let from_right = t.recv(topo.tor_right(), tags::SHIFT_TOR_LEFT).into_bytes()?;
            store.append_arrays(&unpack_particles(&from_left)?)?;
            store.append_arrays(&unpack_particles(&from_right)?)?;
        }

        if topo.nrad > 1 {
            let mut go_in = Vec::new();
            let mut go_out = Vec::new();
            for i in 0..store.len() {
                let owner = ctx.cell_owner[ctx.grid.cell_of(store.r[i])];
                if owner < topo.rad {
                    go_in.push(i);
                } else if owner > topo.rad {
                    go_out.push(i);
                }
            }
            moved += (go_in.len() + go_out.len()) as u64;
            stats.moved_radial += (go_in.len() + go_out.len()) as u64;
            let in_buf = pack_particles(store, &go_in);
            let out_buf = pack_particles(store, &go_out);
            stats.bytes_radial += (in_buf.len() + out_buf.len()) as u64;
            store.remove_backfill(&mut go_in, &mut go_out);
            if let Some(peer) = topo.rad_inner() {
                t.send(peer, tags::SHIFT_RAD_IN, Payload::Bytes(in_buf));
            }
            if let Some(peer) = topo.rad_outer() {
                t.send(peer, tags::SHIFT_RAD_OUT, Payload::Bytes(out_buf));
            }
            if let Some(peer) = topo.rad_inner() {
                let buf = t.recv(peer, tags::SHIFT_RAD_OUT).into_bytes()?;
                store.append_arrays(&unpack_particles(&buf)?)?;
            }
            if let Some(peer) = topo.rad_outer() {
                let buf = t.recv(peer, tags::SHIFT_RAD_IN).into_bytes()?;
                store.append_arrays(&unpack_particles(&buf)?)?;
            }
        }

        let mut total = [moved];
        allreduce_u64(t, &topo.world(), &mut total)?;
        if total[0] == 0 {
            return Ok(stats);
        }
    }
    unreachable!()
}
