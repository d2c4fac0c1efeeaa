//! Three-stage executor (encode, accelerator, decode) with bounded queues,
//! an in-flight window and an in-order sink.

mod detector;
mod stats;

pub use detector::{Backend, DetectorStages};
pub use stats::{bench_report, BenchReport, LatencySummary, PipelineStats};

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three stage functions of a pipeline. `Sync` so one instance can be
/// shared by the stage workers.
pub trait Stages: Sync {
    type Input: Send;
    type Encoded: Send;
    type Raw: Send;
    type Output: Send;

    fn frame_id(&self, input: &Self::Input) -> u64;
    fn pre(&self, input: Self::Input) -> Result<Self::Encoded>;
    fn accel(&self, encoded: Self::Encoded) -> Result<Self::Raw>;
    fn post(&self, frame_id: u64, raw: Self::Raw) -> Result<Self::Output>;
}

/// Minimum wall time per stage call. A stage that finishes early sleeps for
/// the remainder, so measured throughput does not depend on the host.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageDelays {
    pub pre: Duration,
    pub accel: Duration,
    pub post: Duration,
}

impl StageDelays {
    pub fn from_millis(pre: u64, accel: u64, post: u64) -> Self {
        StageDelays {
            pre: Duration::from_millis(pre),
            accel: Duration::from_millis(accel),
            post: Duration::from_millis(post),
        }
    }

    /// Parses `pre,accel,post` in milliseconds.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || Error::InvalidArgument(format!("stage delays must be 'pre,accel,post' in ms, got '{s}'"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let ms: Vec<f64> = parts
            .iter()
            .map(|p| p.parse::<f64>().ok().filter(|v| v.is_finite() && *v >= 0.0).ok_or_else(bad))
            .collect::<Result<_>>()?;
        let d = |v: f64| Duration::from_secs_f64(v / 1000.0);
        Ok(StageDelays {
            pre: d(ms[0]),
            accel: d(ms[1]),
            post: d(ms[2]),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub queue_depth: usize,
    /// Frames admitted but not yet delivered at the sink.
    pub in_flight_max: usize,
    pub delays: StageDelays,
}

impl Default for StagePlan {
    fn default() -> Self {
        StagePlan {
            queue_depth: 2,
            in_flight_max: 4,
            delays: StageDelays::default(),
        }
    }
}

impl StagePlan {
    pub fn validate(&self) -> Result<()> {
        if self.queue_depth == 0 || self.in_flight_max == 0 {
            return Err(Error::InvalidArgument("queue depth and in-flight window must be >= 1".into()));
        }
        Ok(())
    }
}

fn timed<T>(min: Duration, f: impl FnOnce() -> T) -> (T, Duration) {
    timed_from(Instant::now(), min, f)
}

/// Like [`timed`], but the stage is taken to have started at `t0`, which may
/// be in the past.
fn timed_from<T>(t0: Instant, min: Duration, f: impl FnOnce() -> T) -> (T, Duration) {
    let out = f();
    let spent = t0.elapsed();
    if spent < min {
        thread::sleep(min - spent);
    }
    (out, t0.elapsed())
}

fn tag(frame_id: u64) -> impl FnOnce(Error) -> Error {
    move |e| Error::Stage {
        frame_id,
        source: Box::new(e),
    }
}

/// Per-frame timing collected along the way.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct FrameTiming {
    pub pre: Duration,
    pub accel: Duration,
    pub post: Duration,
    pub end_to_end: Duration,
}

/// Runs frames one at a time through all three stages.
pub fn run_sequential<S: Stages>(
    stages: &S,
    frames: impl IntoIterator<Item = S::Input>,
    delays: StageDelays,
) -> Result<(Vec<S::Output>, PipelineStats)> {
    let start = Instant::now();
    let mut outputs = Vec::new();
    let mut timings = Vec::new();
    for input in frames {
        let fid = stages.frame_id(&input);
        let t0 = Instant::now();
        let (enc, pre) = timed(delays.pre, || stages.pre(input));
        let (raw, accel) = timed(delays.accel, || stages.accel(enc.map_err(tag(fid))?));
        let (out, post) = timed(delays.post, || stages.post(fid, raw.map_err(tag(fid))?));
        outputs.push(out.map_err(tag(fid))?);
        timings.push(FrameTiming {
            pre,
            accel,
            post,
            end_to_end: t0.elapsed(),
        });
    }
    Ok((outputs, PipelineStats::from_timings(&timings, start.elapsed())))
}

struct Msg<T> {
    seq: usize,
    fid: u64,
    admitted: Instant,
    /// When the previous stage handed the message off.
    sent: Instant,
    timing: FrameTiming,
    item: Result<T>,
}

/// One stage loop. A call's occupancy starts once the stage is free and the
/// input has been handed off, not when this thread next gets scheduled. On a
/// single core the wakeup of a downstream worker can preempt this one for
/// several milliseconds, which a dedicated device would not see.
fn stage_worker<A, B>(
    rx: Receiver<Msg<A>>,
    tx: SyncSender<Msg<B>>,
    min: Duration,
    slot: fn(&mut FrameTiming) -> &mut Duration,
    f: impl Fn(u64, A) -> Result<B>,
) {
    let mut free_at: Option<Instant> = None;
    for m in rx {
        let mut timing = m.timing;
        let item = match m.item {
            Ok(x) => {
                let t0 = free_at.map_or(m.sent, |t| t.max(m.sent));
                let (r, spent) = timed_from(t0, min, || f(m.fid, x));
                *slot(&mut timing) = spent;
                free_at = Some(t0 + spent);
                r.map_err(tag(m.fid))
            }
            Err(e) => Err(e),
        };
        let out = Msg {
            seq: m.seq,
            fid: m.fid,
            admitted: m.admitted,
            sent: Instant::now(),
            timing,
            item,
        };
        if tx.send(out).is_err() {
            return;
        }
    }
}

/// Runs the stages concurrently, one worker thread each, connected by
/// bounded FIFO queues. Outputs come back in input order and are identical
/// to [`run_sequential`]. On failure the pipeline stops admitting, drains,
/// and returns the error of the earliest failing frame.
pub fn run_pipelined<S: Stages>(
    stages: &S,
    frames: impl IntoIterator<Item = S::Input, IntoIter: Send>,
    plan: &StagePlan,
) -> Result<(Vec<S::Output>, PipelineStats)> {
    plan.validate()?;
    let q = plan.queue_depth;
    let (tx_in, rx_in) = sync_channel::<Msg<S::Input>>(q);
    let (tx_enc, rx_enc) = sync_channel::<Msg<S::Encoded>>(q);
    let (tx_raw, rx_raw) = sync_channel::<Msg<S::Raw>>(q);
    let (tx_out, rx_out) = sync_channel::<Msg<S::Output>>(q);
    let (tok_tx, tok_rx) = sync_channel::<()>(plan.in_flight_max);
    for _ in 0..plan.in_flight_max {
        tok_tx.send(()).expect("token queue has room");
    }
    let stop = AtomicBool::new(false);
    let delays = plan.delays;
    let frames = frames.into_iter();
    let start = Instant::now();

    thread::scope(|s| {
        let stop = &stop;
        s.spawn(move || {
            for (seq, input) in frames.enumerate() {
                if tok_rx.recv().is_err() || stop.load(Ordering::Acquire) {
                    break;
                }
                let fid = stages.frame_id(&input);
                let now = Instant::now();
                let m = Msg {
                    seq,
                    fid,
                    admitted: now,
                    sent: now,
                    timing: FrameTiming::default(),
                    item: Ok(input),
                };
                if tx_in.send(m).is_err() {
                    break;
                }
            }
        });
        s.spawn(move || stage_worker(rx_in, tx_enc, delays.pre, |t| &mut t.pre, |_, x| stages.pre(x)));
        s.spawn(move || stage_worker(rx_enc, tx_raw, delays.accel, |t| &mut t.accel, |_, x| stages.accel(x)));
        s.spawn(move || stage_worker(rx_raw, tx_out, delays.post, |t| &mut t.post, |fid, x| stages.post(fid, x)));

        let mut pending: BTreeMap<usize, Msg<S::Output>> = BTreeMap::new();
        let mut next = 0usize;
        let mut outputs = Vec::new();
        let mut timings = Vec::new();
        let mut failure: Option<(usize, Error)> = None;
        for m in rx_out {
            let _ = tok_tx.try_send(());
            let mut m = m;
            m.timing.end_to_end = m.admitted.elapsed();
            pending.insert(m.seq, m);
            while let Some(m) = pending.remove(&next) {
                next += 1;
                match m.item {
                    Ok(out) if failure.is_none() => {
                        outputs.push(out);
                        timings.push(m.timing);
                    }
                    Ok(_) => {}
                    Err(e) => {
                        stop.store(true, Ordering::Release);
                        if failure.as_ref().is_none_or(|(seq, _)| m.seq < *seq) {
                            failure = Some((m.seq, e));
                        }
                    }
                }
            }
        }
        drop(tok_tx);
        match failure {
            Some((_, e)) => Err(e),
            None => Ok((outputs, PipelineStats::from_timings(&timings, start.elapsed()))),
        }
    })
}
