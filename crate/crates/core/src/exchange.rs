//! Ghost-cell exchange.
//!
//! A [`HaloPlan`] lists, for one rank, which ghost slabs are filled by a
//! direct copy from another local block and which travel through the
//! transport. Two strategies execute a plan:
//!
//! * **fused**: the rank's main thread does everything in sequence: post
//!   receives, pack and send, local copies, wait, unpack.
//! * **split-overlap**: packs, local copies and unpacks run on the worker
//!   pool; the local copies happen while remote messages are in flight, before
//!   the wait.
//!
//! Both produce bitwise identical ghost cells.

use crate::grid::{Block, Decomposition, Face, Side, NGHOST};
use crate::metrics::{Phase, PhaseTimes};
use crate::runtime::{Payload, RankContext, Scheduling};
use crate::Error;
use parking_lot::Mutex;
use std::sync::mpsc;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExchangeError {
    #[error("payload for {slab:?} has {got} values, expected {expected}")]
    PayloadLength { slab: FaceSlab, expected: usize, got: usize },
    #[error("tag overflow for block with Morton index {0}")]
    TagOverflow(u64),
    #[error("pack task for send {0} never completed")]
    LostPack(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExchangeStrategy {
    Fused,
    SplitOverlap,
}

impl ExchangeStrategy {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fused => "fused",
            Self::SplitOverlap => "split-overlap",
        }
    }
}

impl std::str::FromStr for ExchangeStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('_', "-").as_str() {
            "fused" => Ok(Self::Fused),
            "split-overlap" | "split" => Ok(Self::SplitOverlap),
            other => Err(format!("unknown strategy '{other}' (expected fused or split-overlap)")),
        }
    }
}

/// Whether a slab covers interior (source) or ghost (destination) cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Interior,
    Ghost,
}

/// A `NGHOST`-deep slab of cells adjacent to one block face, all variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FaceSlab {
    pub face: Face,
    pub region: Region,
}

impl FaceSlab {
    pub fn ghost(face: Face) -> Self {
        Self { face, region: Region::Ghost }
    }

    pub fn interior(face: Face) -> Self {
        Self { face, region: Region::Interior }
    }

    /// Padded index ranges `[lo, hi)` per axis for a block of `size` cells.
    pub fn ranges(&self, size: usize) -> [(usize, usize); 3] {
        let mut r = [(NGHOST, NGHOST + size); 3];
        let axis = self.face.axis();
        r[axis] = match (self.region, self.face.side()) {
            (Region::Ghost, Side::Low) => (0, NGHOST),
            (Region::Ghost, Side::High) => (NGHOST + size, 2 * NGHOST + size),
            (Region::Interior, Side::Low) => (NGHOST, 2 * NGHOST),
            (Region::Interior, Side::High) => (size, NGHOST + size),
        };
        r
    }

    pub fn len(nvar: usize, size: usize) -> usize {
        nvar * NGHOST * size * size
    }
}

/// Copy of one slab between two blocks of the same rank. Indices are local
/// block indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalCopy {
    pub src: usize,
    pub src_slab: FaceSlab,
    pub dest: usize,
    pub dest_slab: FaceSlab,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RemoteSend {
    pub dest_rank: usize,
    pub tag: i32,
    pub src: usize,
    pub slab: FaceSlab,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RemoteRecv {
    pub src_rank: usize,
    pub tag: i32,
    pub dest: usize,
    pub slab: FaceSlab,
}

/// Precomputed ghost fills of one rank.
#[derive(Debug, Clone, PartialEq)]
pub struct HaloPlan {
    pub rank: usize,
    pub nlocal: usize,
    pub local_copies: Vec<LocalCopy>,
    pub remote_sends: Vec<RemoteSend>,
    pub remote_recvs: Vec<RemoteRecv>,
    copies_by_dest: Vec<Vec<usize>>,
    recvs_by_dest: Vec<Vec<usize>>,
}

/// Tag of the message filling ghost face `face` of the block with Morton
/// index `morton`.
pub fn exchange_tag(morton: u64, face: Face) -> Result<i32, ExchangeError> {
    morton
        .checked_mul(6)
        .and_then(|t| t.checked_add(face.index() as u64))
        .and_then(|t| i32::try_from(t).ok())
        .ok_or(ExchangeError::TagOverflow(morton))
}

/// Classify every ghost fill of `rank`'s blocks as local or remote, in Morton
/// then face order.
pub fn build_plan(decomp: &Decomposition, rank: usize) -> Result<HaloPlan, ExchangeError> {
    let grid = decomp.grid();
    let local = decomp.blocks_of(rank);
    let mut local_copies = Vec::new();
    let mut remote_sends = Vec::new();
    let mut remote_recvs = Vec::new();

    for (dest, &id) in local.iter().enumerate() {
        for face in Face::ALL {
            let nb = grid.face_neighbor(id, face);
            let owner = decomp.owner(nb);
            let src_slab = FaceSlab::interior(face.opposite());
            if owner == rank {
                local_copies.push(LocalCopy {
                    src: decomp.local_index(nb),
                    src_slab,
                    dest,
                    dest_slab: FaceSlab::ghost(face),
                });
            } else {
                remote_recvs.push(RemoteRecv {
                    src_rank: owner,
                    tag: exchange_tag(id.morton, face)?,
                    dest,
                    slab: FaceSlab::ghost(face),
                });
            }
        }
    }
    for (src, &id) in local.iter().enumerate() {
        for face in Face::ALL {
            // `nb` fills its ghost face `face.opposite()` from our `face` slab.
            let nb = grid.face_neighbor(id, face);
            let owner = decomp.owner(nb);
            if owner != rank {
                remote_sends.push(RemoteSend {
                    dest_rank: owner,
                    tag: exchange_tag(nb.morton, face.opposite())?,
                    src,
                    slab: FaceSlab::interior(face),
                });
            }
        }
    }

    let mut copies_by_dest = vec![Vec::new(); local.len()];
    for (i, c) in local_copies.iter().enumerate() {
        copies_by_dest[c.dest].push(i);
    }
    let mut recvs_by_dest = vec![Vec::new(); local.len()];
    for (i, r) in remote_recvs.iter().enumerate() {
        recvs_by_dest[r.dest].push(i);
    }
    Ok(HaloPlan {
        rank,
        nlocal: local.len(),
        local_copies,
        remote_sends,
        remote_recvs,
        copies_by_dest,
        recvs_by_dest,
    })
}

impl HaloPlan {
    /// Bytes of message buffers live during one exchange.
    pub fn buffer_bytes(&self, nvar: usize, size: usize) -> u64 {
        let slab = (FaceSlab::len(nvar, size) * std::mem::size_of::<f64>()) as u64;
        (self.remote_sends.len() + self.remote_recvs.len()) as u64 * slab
    }
}

/// Copy `slab` of `block` into a contiguous buffer, ordered var, z, y, x.
pub fn pack_face(block: &Block, slab: FaceSlab) -> Payload {
    let mut out = Vec::with_capacity(FaceSlab::len(block.nvar(), block.size()));
    pack_face_into(block, slab, &mut out);
    out
}

pub fn pack_face_into(block: &Block, slab: FaceSlab, out: &mut Vec<f64>) {
    out.clear();
    let [(i0, i1), (j0, j1), (k0, k1)] = slab.ranges(block.size());
    for v in 0..block.nvar() {
        for k in k0..k1 {
            for j in j0..j1 {
                let row = block.index(v, 0, j, k);
                out.extend_from_slice(&block.data[row + i0..row + i1]);
            }
        }
    }
}

/// Inverse of [`pack_face`] over the destination slab.
pub fn unpack_face(block: &mut Block, slab: FaceSlab, payload: &[f64]) -> Result<(), ExchangeError> {
    let expected = FaceSlab::len(block.nvar(), block.size());
    if payload.len() != expected {
        return Err(ExchangeError::PayloadLength { slab, expected, got: payload.len() });
    }
    let [(i0, i1), (j0, j1), (k0, k1)] = slab.ranges(block.size());
    let w = i1 - i0;
    let mut at = 0;
    for v in 0..block.nvar() {
        for k in k0..k1 {
            for j in j0..j1 {
                let row = block.index(v, 0, j, k);
                block.data[row + i0..row + i1].copy_from_slice(&payload[at..at + w]);
                at += w;
            }
        }
    }
    Ok(())
}

fn local_copy(blocks: &[Mutex<Block>], copy: &LocalCopy, scratch: &mut Vec<f64>) -> Result<(), ExchangeError> {
    pack_face_into(&blocks[copy.src].lock(), copy.src_slab, scratch);
    unpack_face(&mut blocks[copy.dest].lock(), copy.dest_slab, scratch)
}

/// Serial exchange on the rank's main thread; the worker pool is not used.
pub fn exchange_fused(
    ctx: &RankContext,
    plan: &HaloPlan,
    blocks: &[Mutex<Block>],
    times: &mut PhaseTimes,
) -> Result<(), Error> {
    let mut requests = Vec::with_capacity(plan.remote_recvs.len() + plan.remote_sends.len());
    times.time(Phase::Pack, || -> Result<(), Error> {
        for r in &plan.remote_recvs {
            requests.push(ctx.irecv(r.src_rank, r.tag)?);
        }
        for s in &plan.remote_sends {
            let payload = pack_face(&blocks[s.src].lock(), s.slab);
            requests.push(ctx.isend(s.dest_rank, s.tag, payload)?);
        }
        Ok(())
    })?;
    times.time(Phase::LocalCopy, || -> Result<(), Error> {
        let mut scratch = Vec::new();
        for c in &plan.local_copies {
            local_copy(blocks, c, &mut scratch)?;
        }
        Ok(())
    })?;
    let payloads = times.time(Phase::CommWait, || ctx.wait_all(requests))?;
    times.time(Phase::Unpack, || -> Result<(), Error> {
        for (r, payload) in plan.remote_recvs.iter().zip(payloads) {
            let payload = payload.expect("receive request yields a payload");
            unpack_face(&mut blocks[r.dest].lock(), r.slab, &payload)?;
        }
        Ok(())
    })
}

/// Exchange with threaded packs, local copies overlapping the remote
/// transfers, and threaded unpacks. Sends are posted by the main thread as
/// packs complete.
pub fn exchange_split_overlap(
    ctx: &RankContext,
    plan: &HaloPlan,
    blocks: &[Mutex<Block>],
    scheduling: Scheduling,
    times: &mut PhaseTimes,
) -> Result<(), Error> {
    let pool = ctx.pool();
    let nsends = plan.remote_sends.len();
    let requests = times.time(Phase::Pack, || -> Result<Vec<_>, Error> {
        let mut requests = Vec::with_capacity(plan.remote_recvs.len() + nsends);
        for r in &plan.remote_recvs {
            requests.push(ctx.irecv(r.src_rank, r.tag)?);
        }
        let (tx, rx) = mpsc::channel::<(usize, Payload)>();
        let tx = Mutex::new(tx);
        let posted = pool.parallel_for_with_main(
            nsends,
            scheduling,
            |i| {
                let s = &plan.remote_sends[i];
                let payload = pack_face(&blocks[s.src].lock(), s.slab);
                // The receiver only disappears if the main thread bailed out.
                let _ = tx.lock().send((i, payload));
                Ok(())
            },
            || -> Result<Vec<_>, Error> {
                let mut sent = Vec::with_capacity(nsends);
                for _ in 0..nsends {
                    let (i, payload) = rx.recv().map_err(|_| ExchangeError::LostPack(sent.len()))?;
                    let s = &plan.remote_sends[i];
                    sent.push(ctx.isend(s.dest_rank, s.tag, payload)?);
                }
                Ok(sent)
            },
        )??;
        requests.extend(posted);
        Ok(requests)
    })?;

    times.time(Phase::LocalCopy, || {
        pool.parallel_for(plan.nlocal, scheduling, |dest| {
            let mut scratch = Vec::new();
            for &c in &plan.copies_by_dest[dest] {
                local_copy(blocks, &plan.local_copies[c], &mut scratch)?;
            }
            Ok(())
        })
    })?;

    let payloads = times.time(Phase::CommWait, || ctx.wait_all(requests))?;
    let payloads: Vec<Payload> = payloads.into_iter().take(plan.remote_recvs.len()).map(|p| p.unwrap_or_default()).collect();

    times.time(Phase::Unpack, || {
        pool.parallel_for(plan.nlocal, scheduling, |dest| {
            let group = &plan.recvs_by_dest[dest];
            if group.is_empty() {
                return Ok(());
            }
            let mut block = blocks[dest].lock();
            for &r in group {
                unpack_face(&mut block, plan.remote_recvs[r].slab, &payloads[r])?;
            }
            Ok(())
        })
    })?;
    Ok(())
}

/// Deliberate defects for exercising the validation suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Return without exchanging on the given (zero-based) call.
    SkipExchange { call: u64 },
}

/// A plan bound to a strategy, as used by the time stepper.
#[derive(Debug)]
pub struct Exchanger {
    plan: HaloPlan,
    strategy: ExchangeStrategy,
    scheduling: Scheduling,
    fault: Option<Fault>,
    calls: u64,
}

impl Exchanger {
    pub fn new(plan: HaloPlan, strategy: ExchangeStrategy, scheduling: Scheduling) -> Self {
        Self { plan, strategy, scheduling, fault: None, calls: 0 }
    }

    pub fn with_fault(mut self, fault: Option<Fault>) -> Self {
        self.fault = fault;
        self
    }

    pub fn plan(&self) -> &HaloPlan {
        &self.plan
    }

    /// Number of exchanges performed so far (skipped ones included).
    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn exchange(
        &mut self,
        ctx: &RankContext,
        blocks: &[Mutex<Block>],
        times: &mut PhaseTimes,
    ) -> Result<(), Error> {
        let call = self.calls;
        self.calls += 1;
        if self.fault == Some(Fault::SkipExchange { call }) {
            return Ok(());
        }
        match self.strategy {
            ExchangeStrategy::Fused => exchange_fused(ctx, &self.plan, blocks, times),
            ExchangeStrategy::SplitOverlap => {
                exchange_split_overlap(ctx, &self.plan, blocks, self.scheduling, times)
            }
        }
    }
}
