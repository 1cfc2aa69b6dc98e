//! Simulated distributed runtime.
//!
//! Ranks are OS threads inside one process. Each rank owns a worker pool for
//! task parallelism and talks to other ranks through an in-process transport
//! with non-blocking send/receive, wait-all and a min-reduction. Only the
//! rank's main thread may issue communication calls.
//!
//! Messages are matched on `(source, tag)` plus a per-pair sequence number so
//! that messages with the same envelope are delivered in posting order.

use crate::Error;
use parking_lot::{Condvar, Mutex};
use std::collections::HashMap;
use std::fmt;
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, ThreadId};
use std::time::{Duration, Instant};

/// Environment variable overriding the deadlock watchdog, in seconds.
pub const WATCHDOG_ENV: &str = "HALOLAB_WATCHDOG_SECS";

pub const DEFAULT_WATCHDOG: Duration = Duration::from_secs(60);

/// Tag reserved for the min-reduction. Exchange tags are non-negative.
const REDUCE_TAG: i32 = -1;

/// Granularity at which blocked waits re-check the abort flag.
const POLL_SLICE: Duration = Duration::from_millis(20);

pub type Payload = Vec<f64>;

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("invalid runtime configuration: {0}")]
    Config(String),
    #[error("rank {rank} out of range for {nranks} ranks")]
    InvalidRank { rank: usize, nranks: usize },
    #[error("communication call from a worker thread on rank {rank}; only the main context may communicate")]
    NotMainContext { rank: usize },
    #[error("deadlock on rank {rank}: nothing completed for {waited:?}; pending: {}", .pending.join(", "))]
    Deadlock { rank: usize, waited: Duration, pending: Vec<String> },
    #[error("rank {rank} aborted because another rank failed")]
    Aborted { rank: usize },
    #[error("task {index} failed: {source}")]
    Task { index: usize, source: Box<Error> },
    #[error("rank {rank} failed: {source}")]
    RankFailed { rank: usize, source: Box<Error> },
    #[error("rank {rank} panicked: {message}")]
    RankPanicked { rank: usize, message: String },
}

/// How intra-process messages move between ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntranodePath {
    /// The payload buffer is handed to the receiver without copying.
    SharedHandoff,
    /// The payload is serialised into a staging buffer by the sender and
    /// copied out by the receiver.
    CopyThrough,
}

impl IntranodePath {
    pub fn name(self) -> &'static str {
        match self {
            Self::SharedHandoff => "shared-handoff",
            Self::CopyThrough => "copy-through",
        }
    }
}

impl std::str::FromStr for IntranodePath {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('_', "-").as_str() {
            "shared-handoff" | "shm" => Ok(Self::SharedHandoff),
            "copy-through" | "copy" => Ok(Self::CopyThrough),
            other => Err(format!("unknown intranode path '{other}' (expected shared-handoff or copy-through)")),
        }
    }
}

/// Loop scheduling for [`ThreadPool::parallel_for`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheduling {
    /// Worker `w` of `T` runs the contiguous range `[w·n/T, (w+1)·n/T)`.
    StaticBlocked,
    /// Idle workers claim the next `chunk` tasks.
    Dynamic { chunk: usize },
}

impl Scheduling {
    pub fn dynamic() -> Self {
        Self::Dynamic { chunk: 1 }
    }
}

impl fmt::Display for Scheduling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::StaticBlocked => write!(f, "static"),
            Self::Dynamic { chunk: 1 } => write!(f, "dynamic"),
            Self::Dynamic { chunk } => write!(f, "dynamic:{chunk}"),
        }
    }
}

impl std::str::FromStr for Scheduling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" | "static-blocked" | "static_blocked" => Ok(Self::StaticBlocked),
            "dynamic" => Ok(Self::dynamic()),
            other => match other.strip_prefix("dynamic:") {
                Some(n) => match n.parse::<usize>() {
                    Ok(chunk) if chunk >= 1 => Ok(Self::Dynamic { chunk }),
                    _ => Err(format!("dynamic chunk must be a positive integer, got '{n}'")),
                },
                None => Err(format!("unknown scheduling '{other}' (expected static, dynamic or dynamic:N)")),
            },
        }
    }
}

/// Counts the buffer copies made by the copy-through path.
#[derive(Debug, Default)]
pub struct CopyStats {
    copies: AtomicU64,
    bytes: AtomicU64,
}

impl CopyStats {
    pub fn copies(&self) -> u64 {
        self.copies.load(Ordering::Relaxed)
    }

    pub fn bytes(&self) -> u64 {
        self.bytes.load(Ordering::Relaxed)
    }

    fn record(&self, bytes: usize) {
        self.copies.fetch_add(1, Ordering::Relaxed);
        self.bytes.fetch_add(bytes as u64, Ordering::Relaxed);
    }
}

/// A message between the sender's post and the receiver's completion.
#[derive(Debug)]
pub enum InFlight {
    Handoff(Payload),
    Staged(Vec<u8>),
}

/// Sender half of an intra-node transfer.
pub fn stage(path: IntranodePath, payload: Payload, stats: &CopyStats) -> InFlight {
    match path {
        IntranodePath::SharedHandoff => InFlight::Handoff(payload),
        IntranodePath::CopyThrough => {
            let mut staging = Vec::with_capacity(payload.len() * 8);
            for v in &payload {
                staging.extend_from_slice(&v.to_le_bytes());
            }
            stats.record(staging.len());
            InFlight::Staged(staging)
        }
    }
}

/// Receiver half of an intra-node transfer.
pub fn deliver(msg: InFlight, stats: &CopyStats) -> Payload {
    match msg {
        InFlight::Handoff(payload) => payload,
        InFlight::Staged(bytes) => {
            let out = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            stats.record(bytes.len());
            out
        }
    }
}

/// Move `payload` from sender to receiver along `path`.
pub fn transfer_intranode(path: IntranodePath, payload: Payload, stats: &CopyStats) -> Payload {
    deliver(stage(path, payload, stats), stats)
}

type Envelope = (usize, i32, u64);

#[derive(Default)]
struct Mailbox {
    messages: Mutex<HashMap<Envelope, InFlight>>,
    arrived: Condvar,
}

/// Shared in-process message fabric.
pub struct Transport {
    nranks: usize,
    path: IntranodePath,
    mailboxes: Vec<Mailbox>,
    aborted: AtomicBool,
    stats: CopyStats,
}

impl Transport {
    pub fn new(nranks: usize, path: IntranodePath) -> Self {
        Self {
            nranks,
            path,
            mailboxes: (0..nranks).map(|_| Mailbox::default()).collect(),
            aborted: AtomicBool::new(false),
            stats: CopyStats::default(),
        }
    }

    pub fn stats(&self) -> &CopyStats {
        &self.stats
    }

    pub fn abort(&self) {
        self.aborted.store(true, Ordering::SeqCst);
        for mb in &self.mailboxes {
            // Taking the lock orders the flag store before any waiter re-checks.
            let _guard = mb.messages.lock();
            mb.arrived.notify_all();
        }
    }

    pub fn is_aborted(&self) -> bool {
        self.aborted.load(Ordering::SeqCst)
    }
}

#[derive(Debug)]
enum RequestKind {
    Send { dest: usize, tag: i32 },
    Recv { src: usize, tag: i32, seq: u64 },
}

/// Handle for a posted non-blocking operation. Consumed by
/// [`RankContext::wait_all`].
#[derive(Debug)]
#[must_use = "requests must be completed with wait_all"]
pub struct Request {
    kind: RequestKind,
}

impl Request {
    fn describe(&self) -> String {
        match self.kind {
            RequestKind::Send { dest, tag } => format!("send(dest={dest}, tag={tag})"),
            RequestKind::Recv { src, tag, seq } => format!("recv(src={src}, tag={tag}, seq={seq})"),
        }
    }
}

/// Per-rank handle to the runtime.
pub struct RankContext {
    rank: usize,
    transport: Arc<Transport>,
    pool: ThreadPool,
    main_thread: ThreadId,
    watchdog: Duration,
    send_seq: Mutex<HashMap<(usize, i32), u64>>,
    recv_seq: Mutex<HashMap<(usize, i32), u64>>,
}

impl RankContext {
    pub fn new(rank: usize, transport: Arc<Transport>, pool: ThreadPool, watchdog: Duration) -> Self {
        Self {
            rank,
            transport,
            pool,
            main_thread: thread::current().id(),
            watchdog,
            send_seq: Mutex::new(HashMap::new()),
            recv_seq: Mutex::new(HashMap::new()),
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn nranks(&self) -> usize {
        self.transport.nranks
    }

    pub fn pool(&self) -> &ThreadPool {
        &self.pool
    }

    pub fn path(&self) -> IntranodePath {
        self.transport.path
    }

    pub fn copy_stats(&self) -> &CopyStats {
        &self.transport.stats
    }

    fn check_main(&self) -> Result<(), RuntimeError> {
        if cfg!(debug_assertions) && thread::current().id() != self.main_thread {
            return Err(RuntimeError::NotMainContext { rank: self.rank });
        }
        Ok(())
    }

    fn check_rank(&self, rank: usize) -> Result<(), RuntimeError> {
        if rank >= self.nranks() {
            return Err(RuntimeError::InvalidRank { rank, nranks: self.nranks() });
        }
        Ok(())
    }

    /// Post a send. The message is queued at the destination immediately.
    pub fn isend(&self, dest: usize, tag: i32, payload: Payload) -> Result<Request, RuntimeError> {
        self.check_main()?;
        self.check_rank(dest)?;
        let seq = {
            let mut seqs = self.send_seq.lock();
            let slot = seqs.entry((dest, tag)).or_insert(0);
            *slot += 1;
            *slot - 1
        };
        let msg = stage(self.transport.path, payload, &self.transport.stats);
        let mb = &self.transport.mailboxes[dest];
        mb.messages.lock().insert((self.rank, tag, seq), msg);
        mb.arrived.notify_all();
        Ok(Request { kind: RequestKind::Send { dest, tag } })
    }

    /// Post a receive matching exactly `(src, tag)`.
    pub fn irecv(&self, src: usize, tag: i32) -> Result<Request, RuntimeError> {
        self.check_main()?;
        self.check_rank(src)?;
        let mut seqs = self.recv_seq.lock();
        let slot = seqs.entry((src, tag)).or_insert(0);
        let seq = *slot;
        *slot += 1;
        Ok(Request { kind: RequestKind::Recv { src, tag, seq } })
    }

    /// Block until every request completes. Returns one entry per request, in
    /// order: the payload for receives, `None` for sends.
    pub fn wait_all(&self, requests: Vec<Request>) -> Result<Vec<Option<Payload>>, RuntimeError> {
        self.check_main()?;
        let start = Instant::now();
        let mb = &self.transport.mailboxes[self.rank];
        let mut out: Vec<Option<Payload>> = Vec::with_capacity(requests.len());
        let mut pending: Vec<Option<Envelope>> = requests
            .iter()
            .map(|r| match r.kind {
                RequestKind::Send { .. } => None,
                RequestKind::Recv { src, tag, seq } => Some((src, tag, seq)),
            })
            .collect();
        let mut staged: Vec<Option<InFlight>> = (0..requests.len()).map(|_| None).collect();
        let mut remaining = pending.iter().filter(|p| p.is_some()).count();

        let mut messages = mb.messages.lock();
        while remaining > 0 {
            for (slot, env) in pending.iter_mut().enumerate() {
                if let Some(key) = env {
                    if let Some(msg) = messages.remove(key) {
                        staged[slot] = Some(msg);
                        *env = None;
                        remaining -= 1;
                    }
                }
            }
            if remaining == 0 {
                break;
            }
            if self.transport.is_aborted() {
                return Err(RuntimeError::Aborted { rank: self.rank });
            }
            let waited = start.elapsed();
            if waited >= self.watchdog {
                let pending = requests
                    .iter()
                    .zip(pending.iter())
                    .filter(|(_, p)| p.is_some())
                    .map(|(r, _)| r.describe())
                    .collect();
                return Err(RuntimeError::Deadlock { rank: self.rank, waited, pending });
            }
            let slice = POLL_SLICE.min(self.watchdog - waited);
            mb.arrived.wait_for(&mut messages, slice);
        }
        drop(messages);

        for msg in staged {
            out.push(msg.map(|m| deliver(m, &self.transport.stats)));
        }
        Ok(out)
    }

    /// Global minimum over all ranks. Every rank must call it.
    pub fn allreduce_min(&self, value: f64) -> Result<f64, RuntimeError> {
        let n = self.nranks();
        if n == 1 {
            return Ok(value);
        }
        if self.rank == 0 {
            let reqs = (1..n).map(|src| self.irecv(src, REDUCE_TAG)).collect::<Result<Vec<_>, _>>()?;
            let mut global = value;
            for payload in self.wait_all(reqs)?.into_iter().flatten() {
                global = global.min(payload[0]);
            }
            let sends = (1..n)
                .map(|dest| self.isend(dest, REDUCE_TAG, vec![global]))
                .collect::<Result<Vec<_>, _>>()?;
            self.wait_all(sends)?;
            Ok(global)
        } else {
            let send = self.isend(0, REDUCE_TAG, vec![value])?;
            let recv = self.irecv(0, REDUCE_TAG)?;
            let got = self.wait_all(vec![send, recv])?;
            Ok(got[1].as_ref().expect("receive payload")[0])
        }
    }
}

/// Fixed-size worker pool owned by one rank.
pub struct ThreadPool {
    pool: rayon::ThreadPool,
    nthreads: usize,
}

impl ThreadPool {
    pub fn new(nthreads: usize) -> Result<Self, RuntimeError> {
        if nthreads == 0 {
            return Err(RuntimeError::Config("thread count must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(nthreads)
            .thread_name(|i| format!("halolab-worker-{i}"))
            .build()
            .map_err(|e| RuntimeError::Config(e.to_string()))?;
        Ok(Self { pool, nthreads })
    }

    pub fn nthreads(&self) -> usize {
        self.nthreads
    }

    /// Run `task(i)` for every `i < ntasks` on the pool and wait for all of
    /// them. Tasks must touch disjoint mutable state.
    pub fn parallel_for<F>(&self, ntasks: usize, scheduling: Scheduling, task: F) -> Result<(), RuntimeError>
    where
        F: Fn(usize) -> Result<(), Error> + Sync,
    {
        self.parallel_for_with_main(ntasks, scheduling, task, || ()).map(|_| ())
    }

    /// Like [`parallel_for`](Self::parallel_for), but runs `main` on the
    /// calling thread while the workers execute the tasks.
    pub fn parallel_for_with_main<F, M, R>(
        &self,
        ntasks: usize,
        scheduling: Scheduling,
        task: F,
        main: M,
    ) -> Result<R, RuntimeError>
    where
        F: Fn(usize) -> Result<(), Error> + Sync,
        M: FnOnce() -> R,
    {
        if ntasks == 0 {
            return Ok(main());
        }
        if let Scheduling::Dynamic { chunk: 0 } = scheduling {
            return Err(RuntimeError::Config("dynamic chunk must be at least 1".into()));
        }
        let failure: Mutex<Option<(usize, Error)>> = Mutex::new(None);
        let stop = AtomicBool::new(false);
        let next = AtomicUsize::new(0);
        let run = |i: usize| {
            if stop.load(Ordering::Relaxed) {
                return;
            }
            if let Err(e) = task(i) {
                stop.store(true, Ordering::Relaxed);
                let mut slot = failure.lock();
                if slot.as_ref().is_none_or(|(j, _)| i < *j) {
                    *slot = Some((i, e));
                }
            }
        };
        let worker = |w: usize, nworkers: usize| match scheduling {
            Scheduling::StaticBlocked => {
                for i in w * ntasks / nworkers..(w + 1) * ntasks / nworkers {
                    run(i);
                }
            }
            Scheduling::Dynamic { chunk } => loop {
                let start = next.fetch_add(chunk, Ordering::Relaxed);
                if start >= ntasks {
                    break;
                }
                for i in start..(start + chunk).min(ntasks) {
                    run(i);
                }
            },
        };
        let result = self.pool.in_place_scope(|scope| {
            scope.spawn_broadcast(|_, ctx| worker(ctx.index(), ctx.num_threads()));
            main()
        });
        match failure.into_inner() {
            Some((index, source)) => Err(RuntimeError::Task { index, source: Box::new(source) }),
            None => Ok(result),
        }
    }
}

/// Shape of a simulated parallel job.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuntimeConfig {
    pub nranks: usize,
    pub nthreads: usize,
    pub path: IntranodePath,
    pub watchdog: Duration,
}

impl RuntimeConfig {
    pub fn new(nranks: usize, nthreads: usize) -> Self {
        Self { nranks, nthreads, path: IntranodePath::SharedHandoff, watchdog: watchdog_from_env() }
    }

    pub fn with_path(mut self, path: IntranodePath) -> Self {
        self.path = path;
        self
    }

    pub fn with_watchdog(mut self, watchdog: Duration) -> Self {
        self.watchdog = watchdog;
        self
    }
}

/// Watchdog from [`WATCHDOG_ENV`], or the 60 s default.
pub fn watchdog_from_env() -> Duration {
    std::env::var(WATCHDOG_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<f64>().ok())
        .filter(|s| s.is_finite() && *s > 0.0)
        .map(Duration::from_secs_f64)
        .unwrap_or(DEFAULT_WATCHDOG)
}

/// Run `rank_main` once per rank, concurrently, and collect the results in
/// rank order. The first failing rank aborts the others.
pub fn spawn_ranks<T, F>(config: RuntimeConfig, rank_main: F) -> Result<Vec<T>, RuntimeError>
where
    T: Send,
    F: Fn(&RankContext) -> Result<T, Error> + Sync,
{
    spawn_ranks_with_transport(config, rank_main).map(|(out, _)| out)
}

/// [`spawn_ranks`], also returning the transport for inspecting copy counts.
pub fn spawn_ranks_with_transport<T, F>(
    config: RuntimeConfig,
    rank_main: F,
) -> Result<(Vec<T>, Arc<Transport>), RuntimeError>
where
    T: Send,
    F: Fn(&RankContext) -> Result<T, Error> + Sync,
{
    if config.nranks == 0 {
        return Err(RuntimeError::Config("rank count must be at least 1".into()));
    }
    if config.nthreads == 0 {
        return Err(RuntimeError::Config("thread count must be at least 1".into()));
    }
    let transport = Arc::new(Transport::new(config.nranks, config.path));
    let outcomes: Vec<Result<T, RuntimeError>> = thread::scope(|s| {
        let handles: Vec<_> = (0..config.nranks)
            .map(|rank| {
                let transport = Arc::clone(&transport);
                let rank_main = &rank_main;
                thread::Builder::new()
                    .name(format!("halolab-rank-{rank}"))
                    .spawn_scoped(s, move || {
                        let outcome = panic::catch_unwind(AssertUnwindSafe(|| {
                            let pool = ThreadPool::new(config.nthreads)?;
                            let ctx = RankContext::new(rank, Arc::clone(&transport), pool, config.watchdog);
                            rank_main(&ctx).map_err(|e| match e {
                                Error::Runtime(RuntimeError::Aborted { rank }) => RuntimeError::Aborted { rank },
                                other => RuntimeError::RankFailed { rank, source: Box::new(other) },
                            })
                        }));
                        let outcome = outcome.unwrap_or_else(|payload| {
                            Err(RuntimeError::RankPanicked { rank, message: panic_message(&payload) })
                        });
                        if outcome.is_err() {
                            transport.abort();
                        }
                        outcome
                    })
                    .expect("spawn rank thread")
            })
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(rank, h)| {
                h.join().unwrap_or_else(|payload| {
                    Err(RuntimeError::RankPanicked { rank, message: panic_message(&payload) })
                })
            })
            .collect()
    });

    let mut results = Vec::with_capacity(config.nranks);
    let mut first_abort = None;
    let mut root_cause = None;
    for outcome in outcomes {
        match outcome {
            Ok(v) => results.push(v),
            Err(e @ RuntimeError::Aborted { .. }) => {
                first_abort.get_or_insert(e);
            }
            Err(e) => {
                root_cause.get_or_insert(e);
            }
        }
    }
    if let Some(e) = root_cause.or(first_abort) {
        return Err(e);
    }
    Ok((results, transport))
}

fn panic_message(payload: &Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic payload".into()
    }
}
