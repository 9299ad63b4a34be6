//! Event-driven execution of prefill, decoding, and colocated instances.
//!
//! Time advances through a single min-heap of timestamped events. Pipeline
//! stages are modeled with per-stage free times: a batch entering a
//! `p`-stage pipeline occupies each stage for `iter_time / p` (the shard
//! formulas already yield per-stage times), and uneven batch times surface
//! as bubbles through the stage-availability recurrence. A decoding
//! instance with `p` stages runs `p` independent continuous batches so the
//! pipeline can stay full despite the autoregressive dependency within each
//! batch.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use crate::cluster::{InstanceConfig, InstanceKind, SloSpec};
use crate::error::{Error, Result};
use crate::latency::{
    decode_time_for_totals, mixed_time_for_totals, prefill_time_for_totals, LatencyCoefficients,
};
use crate::model::{kv_cache_bytes, ModelSpec};
use crate::workload::Request;

use super::{DecodeRouting, InstanceUsage, RequestRecord, SimMode, SimResult, StageBreakdown};

#[derive(Debug)]
enum Kind {
    Arrive(usize),
    PrefillTryLaunch(usize),
    PrefillBatchDone(usize, Vec<usize>),
    DecodeAdmit(usize),
    TransferDone {
        inst: usize,
        group: usize,
        req: usize,
    },
    DecodeTryLaunch {
        inst: usize,
        group: usize,
    },
    DecodeIterDone {
        inst: usize,
        group: usize,
    },
    ColoTryLaunch(usize),
    ColoIterDone(usize),
}

struct Event {
    time: f64,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap, we pop the earliest event
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy)]
struct ReqState {
    id: u64,
    input_len: u32,
    output_len: u32,
    arrival: f64,
    prefill_start: f64,
    prefill_done: f64,
    transfer_start: f64,
    transfer_end: f64,
    first_decode_entry: f64,
    completion: f64,
    generated: u32,
    kv_reserved: u64,
}

struct PrefillInst {
    cfg: InstanceConfig,
    queue: VecDeque<usize>,
    stage_free: Vec<f64>,
}

struct Group {
    members: Vec<usize>,
    ready: Vec<usize>,
    inflight_transfers: usize,
    iterating: bool,
    /// Sum of (input_len + generated) over members, updated incrementally.
    ctx_sum: u64,
}

impl Group {
    fn load(&self) -> usize {
        self.members.len() + self.ready.len() + self.inflight_transfers
    }
}

struct DecodeInst {
    cfg: InstanceConfig,
    pending: VecDeque<usize>,
    groups: Vec<Group>,
    stage_free: Vec<f64>,
    resident_kv: u64,
    peak_kv: u64,
}

struct ColoInst {
    cfg: InstanceConfig,
    pending: VecDeque<usize>,
    prefill_members: Vec<usize>,
    decode_members: Vec<usize>,
    prefill_tokens: u64,
    prefill_sq_tokens: u64,
    decode_ctx_sum: u64,
    stage_free: Vec<f64>,
    iterating: bool,
    resident_kv: u64,
    peak_kv: u64,
}

pub(crate) struct Engine<'a> {
    model: &'a ModelSpec,
    coef: &'a LatencyCoefficients,
    mode: SimMode,
    ttft_limit: f64,
    tpot_limit: f64,
    link_bw: f64,
    routing: DecodeRouting,
    prefill: Vec<PrefillInst>,
    decode: Vec<DecodeInst>,
    colocated: Vec<ColoInst>,
    reqs: Vec<ReqState>,
    heap: BinaryHeap<Event>,
    seq: u64,
}

impl<'a> Engine<'a> {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        model: &'a ModelSpec,
        coef: &'a LatencyCoefficients,
        slo: &SloSpec,
        mode: SimMode,
        link_bw: f64,
        routing: DecodeRouting,
        prefill: Vec<InstanceConfig>,
        decode: Vec<InstanceConfig>,
        colocated: Vec<InstanceConfig>,
    ) -> Self {
        Engine {
            model,
            coef,
            mode,
            ttft_limit: slo.scaled_ttft(),
            tpot_limit: slo.scaled_tpot(),
            link_bw,
            routing,
            prefill: prefill
                .into_iter()
                .map(|cfg| {
                    let p = cfg.parallel.inter_op as usize;
                    PrefillInst {
                        cfg,
                        queue: VecDeque::new(),
                        stage_free: vec![0.0; p],
                    }
                })
                .collect(),
            decode: decode
                .into_iter()
                .map(|cfg| {
                    let p = cfg.parallel.inter_op as usize;
                    DecodeInst {
                        cfg,
                        pending: VecDeque::new(),
                        groups: (0..p)
                            .map(|_| Group {
                                members: Vec::new(),
                                ready: Vec::new(),
                                inflight_transfers: 0,
                                iterating: false,
                                ctx_sum: 0,
                            })
                            .collect(),
                        stage_free: vec![0.0; p],
                        resident_kv: 0,
                        peak_kv: 0,
                    }
                })
                .collect(),
            colocated: colocated
                .into_iter()
                .map(|cfg| {
                    let p = cfg.parallel.inter_op as usize;
                    ColoInst {
                        cfg,
                        pending: VecDeque::new(),
                        prefill_members: Vec::new(),
                        decode_members: Vec::new(),
                        prefill_tokens: 0,
                        prefill_sq_tokens: 0,
                        decode_ctx_sum: 0,
                        stage_free: vec![0.0; p],
                        iterating: false,
                        resident_kv: 0,
                        peak_kv: 0,
                    }
                })
                .collect(),
            reqs: Vec::new(),
            heap: BinaryHeap::new(),
            seq: 0,
        }
    }

    fn push(&mut self, time: f64, kind: Kind) {
        self.heap.push(Event {
            time,
            seq: self.seq,
            kind,
        });
        self.seq += 1;
    }

    fn kv_reserve(&self, rid: usize) -> u64 {
        let r = &self.reqs[rid];
        kv_cache_bytes(self.model, r.input_len as u64 + r.output_len as u64)
    }

    fn kv_transfer(&self, rid: usize) -> u64 {
        kv_cache_bytes(self.model, self.reqs[rid].input_len as u64)
    }

    pub(crate) fn run(mut self, workload: &[Request]) -> Result<SimResult> {
        self.reqs = workload
            .iter()
            .map(|r| ReqState {
                id: r.id,
                input_len: r.input_len,
                output_len: r.output_len,
                arrival: r.arrival_s,
                prefill_start: f64::NAN,
                prefill_done: f64::NAN,
                transfer_start: f64::NAN,
                transfer_end: f64::NAN,
                first_decode_entry: f64::NAN,
                completion: f64::NAN,
                generated: 0,
                kv_reserved: 0,
            })
            .collect();
        for rid in 0..self.reqs.len() {
            self.push(self.reqs[rid].arrival, Kind::Arrive(rid));
        }

        while let Some(ev) = self.heap.pop() {
            let now = ev.time;
            match ev.kind {
                Kind::Arrive(rid) => self.on_arrive(rid, now)?,
                Kind::PrefillTryLaunch(pi) => self.prefill_try_launch(pi, now),
                Kind::PrefillBatchDone(pi, reqs) => self.on_prefill_done(pi, reqs, now),
                Kind::DecodeAdmit(di) => self.decode_admit(di, now)?,
                Kind::TransferDone { inst, group, req } => {
                    self.on_transfer_done(inst, group, req, now)
                }
                Kind::DecodeTryLaunch { inst, group } => self.decode_try_launch(inst, group, now),
                Kind::DecodeIterDone { inst, group } => {
                    self.on_decode_iter_done(inst, group, now)?
                }
                Kind::ColoTryLaunch(ci) => self.colo_try_launch(ci, now)?,
                Kind::ColoIterDone(ci) => self.on_colo_iter_done(ci, now)?,
            }
        }

        let mut records = Vec::with_capacity(self.reqs.len());
        for s in &self.reqs {
            if !s.completion.is_finite() {
                return Err(Error::Placement(format!(
                    "request {} never completed; the simulation stalled",
                    s.id
                )));
            }
            records.push(self.finalize(s));
        }
        let mut usage = Vec::new();
        for (i, d) in self.decode.iter().enumerate() {
            usage.push(InstanceUsage {
                kind: InstanceKind::Decoding,
                index: i,
                kv_budget_bytes: d.cfg.kv_budget_bytes,
                peak_kv_bytes: d.peak_kv,
            });
        }
        for (i, c) in self.colocated.iter().enumerate() {
            usage.push(InstanceUsage {
                kind: InstanceKind::Colocated,
                index: i,
                kv_budget_bytes: c.cfg.kv_budget_bytes,
                peak_kv_bytes: c.peak_kv,
            });
        }
        Ok(SimResult::from_records(records, usage))
    }

    fn finalize(&self, s: &ReqState) -> RequestRecord {
        let mut stages = StageBreakdown::default();
        let mut ttft = 0.0;
        if matches!(self.mode, SimMode::Full | SimMode::PrefillOnly) {
            stages.prefill_queuing_s = s.prefill_start - s.arrival;
            stages.prefill_execution_s = s.prefill_done - s.prefill_start;
            ttft = s.prefill_done - s.arrival;
        }
        let first_token_at = match self.mode {
            SimMode::DecodeOnly => s.arrival,
            _ => s.prefill_done,
        };
        if s.transfer_start.is_finite() {
            stages.transmission_s = s.transfer_end - s.transfer_start;
            stages.decoding_queuing_s =
                (s.transfer_start - first_token_at) + (s.first_decode_entry - s.transfer_end);
            stages.decoding_execution_s = s.completion - s.first_decode_entry;
        }
        let tpot = if s.output_len > 1 && self.mode != SimMode::PrefillOnly {
            (s.completion - first_token_at) / (s.output_len - 1) as f64
        } else {
            0.0
        };
        let met_slo = match self.mode {
            SimMode::Full => ttft <= self.ttft_limit && tpot <= self.tpot_limit,
            SimMode::PrefillOnly => ttft <= self.ttft_limit,
            SimMode::DecodeOnly => tpot <= self.tpot_limit,
        };
        RequestRecord {
            id: s.id,
            arrival_s: s.arrival,
            input_len: s.input_len,
            output_len: s.output_len,
            ttft_s: ttft,
            tpot_s: tpot,
            met_slo,
            completion_s: s.completion,
            stages,
        }
    }

    // ---- dispatch ----

    fn on_arrive(&mut self, rid: usize, now: f64) -> Result<()> {
        match self.mode {
            SimMode::DecodeOnly => {
                if self.reqs[rid].output_len == 1 {
                    // the only token was already produced by prefill
                    self.reqs[rid].completion = now;
                    return Ok(());
                }
                let di = self.least_loaded_decode();
                self.decode[di].pending.push_back(rid);
                self.push(now, Kind::DecodeAdmit(di));
                Ok(())
            }
            SimMode::Full | SimMode::PrefillOnly => {
                if !self.colocated.is_empty() {
                    let ci = self
                        .colocated
                        .iter()
                        .enumerate()
                        .min_by_key(|(i, c)| (c.pending.len(), *i))
                        .map(|(i, _)| i)
                        .expect("colocated instances exist");
                    self.colocated[ci].pending.push_back(rid);
                    self.push(now, Kind::ColoTryLaunch(ci));
                    return Ok(());
                }
                let pi = self
                    .prefill
                    .iter()
                    .enumerate()
                    .min_by_key(|(i, p)| (p.queue.len(), *i))
                    .map(|(i, _)| i)
                    .ok_or_else(|| Error::Placement("no prefill instances".into()))?;
                self.prefill[pi].queue.push_back(rid);
                self.push(now, Kind::PrefillTryLaunch(pi));
                Ok(())
            }
        }
    }

    fn least_loaded_decode(&self) -> usize {
        self.decode
            .iter()
            .enumerate()
            .min_by(|(i, a), (j, b)| a.resident_kv.cmp(&b.resident_kv).then(i.cmp(j)))
            .map(|(i, _)| i)
            .expect("decode instances exist")
    }

    // ---- prefill ----

    fn prefill_try_launch(&mut self, pi: usize, now: f64) {
        let inst = &mut self.prefill[pi];
        if inst.queue.is_empty() {
            return;
        }
        if inst.stage_free[0] > now {
            let at = inst.stage_free[0];
            self.push(at, Kind::PrefillTryLaunch(pi));
            return;
        }
        // FCFS greedy packing: keep adding while the token budget holds; a
        // head longer than the budget runs alone.
        let cap = inst.cfg.max_batch_tokens as u64;
        let mut batch = Vec::new();
        let head = inst.queue.pop_front().expect("queue non-empty");
        let mut tokens = self.reqs[head].input_len as u64;
        let mut sq = (self.reqs[head].input_len as u64).pow(2);
        batch.push(head);
        while let Some(&next) = inst.queue.front() {
            let len = self.reqs[next].input_len as u64;
            if tokens + len > cap {
                break;
            }
            tokens += len;
            sq += len * len;
            batch.push(next);
            inst.queue.pop_front();
        }

        let stage_time = prefill_time_for_totals(
            &inst.cfg.shard,
            tokens,
            sq,
            self.coef,
            inst.cfg.parallel.intra_op,
        );
        let entry = now.max(inst.stage_free[0]);
        let mut depart = entry;
        for slot in inst.stage_free.iter_mut() {
            depart = depart.max(*slot) + stage_time;
            *slot = depart;
        }
        for &rid in &batch {
            self.reqs[rid].prefill_start = entry;
        }
        let stage0_free = self.prefill[pi].stage_free[0];
        let more_queued = !self.prefill[pi].queue.is_empty();
        self.push(depart, Kind::PrefillBatchDone(pi, batch));
        if more_queued {
            self.push(stage0_free, Kind::PrefillTryLaunch(pi));
        }
    }

    fn on_prefill_done(&mut self, pi: usize, batch: Vec<usize>, now: f64) {
        for rid in batch {
            self.reqs[rid].prefill_done = now;
            match self.mode {
                SimMode::PrefillOnly => {
                    self.reqs[rid].completion = now;
                }
                _ => {
                    if self.reqs[rid].output_len == 1 {
                        // prefill already produced the whole output
                        self.reqs[rid].completion = now;
                        continue;
                    }
                    let di = match self.routing {
                        DecodeRouting::ByReplicaIndex => pi,
                        DecodeRouting::LeastLoaded => self.least_loaded_decode(),
                    };
                    self.decode[di].pending.push_back(rid);
                    self.push(now, Kind::DecodeAdmit(di));
                }
            }
        }
        self.push(now, Kind::PrefillTryLaunch(pi));
    }

    // ---- decoding ----

    fn decode_admit(&mut self, di: usize, now: f64) -> Result<()> {
        loop {
            let inst = &self.decode[di];
            let Some(&rid) = inst.pending.front() else {
                break;
            };
            let need = self.kv_reserve(rid);
            if need > inst.cfg.kv_budget_bytes {
                return Err(Error::Capacity {
                    request_id: self.reqs[rid].id,
                    needed_bytes: need,
                    budget_bytes: inst.cfg.kv_budget_bytes,
                });
            }
            let (gi, load) = inst
                .groups
                .iter()
                .enumerate()
                .map(|(i, g)| (i, g.load()))
                .min_by_key(|&(i, l)| (l, i))
                .expect("at least one group");
            if load >= inst.cfg.max_batch_size as usize {
                break;
            }
            if inst.resident_kv + need > inst.cfg.kv_budget_bytes {
                break;
            }

            let inst = &mut self.decode[di];
            inst.pending.pop_front();
            inst.resident_kv += need;
            inst.peak_kv = inst.peak_kv.max(inst.resident_kv);
            inst.groups[gi].inflight_transfers += 1;
            self.reqs[rid].kv_reserved = need;
            self.reqs[rid].transfer_start = now;
            let duration = if self.mode == SimMode::DecodeOnly {
                0.0
            } else {
                self.kv_transfer(rid) as f64 / self.link_bw
            };
            self.reqs[rid].transfer_end = now + duration;
            self.push(
                now + duration,
                Kind::TransferDone {
                    inst: di,
                    group: gi,
                    req: rid,
                },
            );
        }
        Ok(())
    }

    fn on_transfer_done(&mut self, di: usize, gi: usize, rid: usize, now: f64) {
        let group = &mut self.decode[di].groups[gi];
        group.inflight_transfers -= 1;
        group.ready.push(rid);
        if !group.iterating {
            self.push(
                now,
                Kind::DecodeTryLaunch {
                    inst: di,
                    group: gi,
                },
            );
        }
    }

    fn decode_try_launch(&mut self, di: usize, gi: usize, now: f64) {
        let inst = &mut self.decode[di];
        let group = &mut inst.groups[gi];
        if group.iterating {
            return;
        }
        // merge transfers that finished since the last boundary
        let ready: Vec<usize> = group.ready.drain(..).collect();
        for &rid in &ready {
            group.ctx_sum += self.reqs[rid].input_len as u64 + self.reqs[rid].generated as u64;
        }
        group.members.extend(ready.iter().copied());
        if group.members.is_empty() {
            return;
        }
        group.iterating = true;
        let stage_time = decode_time_for_totals(
            &inst.cfg.shard,
            group.ctx_sum,
            self.coef,
            inst.cfg.parallel.intra_op,
        );
        let entry = now.max(inst.stage_free[0]);
        let mut depart = entry;
        for slot in inst.stage_free.iter_mut() {
            depart = depart.max(*slot) + stage_time;
            *slot = depart;
        }
        for &rid in &inst.groups[gi].members {
            if !self.reqs[rid].first_decode_entry.is_finite() {
                self.reqs[rid].first_decode_entry = entry;
            }
        }
        self.push(
            depart,
            Kind::DecodeIterDone {
                inst: di,
                group: gi,
            },
        );
    }

    fn on_decode_iter_done(&mut self, di: usize, gi: usize, now: f64) -> Result<()> {
        let inst = &mut self.decode[di];
        let group = &mut inst.groups[gi];
        group.iterating = false;

        let mut freed = 0u64;
        let mut kept = Vec::with_capacity(group.members.len());
        for &rid in &group.members {
            let s = &mut self.reqs[rid];
            s.generated += 1;
            group.ctx_sum += 1;
            if s.generated == s.output_len - 1 {
                s.completion = now;
                freed += s.kv_reserved;
                group.ctx_sum -= s.input_len as u64 + s.generated as u64;
            } else {
                kept.push(rid);
            }
        }
        group.members = kept;
        inst.resident_kv -= freed;

        self.decode_admit(di, now)?;
        self.push(
            now,
            Kind::DecodeTryLaunch {
                inst: di,
                group: gi,
            },
        );
        Ok(())
    }

    // ---- colocated ----

    fn colo_try_launch(&mut self, ci: usize, now: f64) -> Result<()> {
        if self.colocated[ci].iterating {
            return Ok(());
        }
        // Admit new prefills into the upcoming iteration: FCFS under the
        // prefill token budget, the batch-size cap, and the KV budget.
        loop {
            let inst = &self.colocated[ci];
            let Some(&rid) = inst.pending.front() else {
                break;
            };
            let need = self.kv_reserve(rid);
            if need > inst.cfg.kv_budget_bytes {
                return Err(Error::Capacity {
                    request_id: self.reqs[rid].id,
                    needed_bytes: need,
                    budget_bytes: inst.cfg.kv_budget_bytes,
                });
            }
            let len = self.reqs[rid].input_len as u64;
            let members = inst.prefill_members.len() + inst.decode_members.len();
            if members >= inst.cfg.max_batch_size as usize {
                break;
            }
            if !inst.prefill_members.is_empty()
                && inst.prefill_tokens + len > inst.cfg.max_batch_tokens as u64
            {
                break;
            }
            if inst.resident_kv + need > inst.cfg.kv_budget_bytes {
                break;
            }
            let inst = &mut self.colocated[ci];
            inst.pending.pop_front();
            inst.resident_kv += need;
            inst.peak_kv = inst.peak_kv.max(inst.resident_kv);
            inst.prefill_tokens += len;
            inst.prefill_sq_tokens += len * len;
            inst.prefill_members.push(rid);
            self.reqs[rid].kv_reserved = need;
        }

        let inst = &mut self.colocated[ci];
        if inst.prefill_members.is_empty() && inst.decode_members.is_empty() {
            return Ok(());
        }
        inst.iterating = true;
        let stage_time = mixed_time_for_totals(
            &inst.cfg.shard,
            inst.prefill_tokens,
            inst.prefill_sq_tokens,
            inst.decode_ctx_sum,
            self.coef,
            inst.cfg.parallel.intra_op,
        );
        let entry = now.max(inst.stage_free[0]);
        let mut depart = entry;
        for slot in inst.stage_free.iter_mut() {
            depart = depart.max(*slot) + stage_time;
            *slot = depart;
        }
        for &rid in &inst.prefill_members {
            self.reqs[rid].prefill_start = entry;
        }
        for &rid in &inst.decode_members {
            if !self.reqs[rid].first_decode_entry.is_finite() {
                self.reqs[rid].first_decode_entry = entry;
            }
        }
        self.push(depart, Kind::ColoIterDone(ci));
        Ok(())
    }

    fn on_colo_iter_done(&mut self, ci: usize, now: f64) -> Result<()> {
        let inst = &mut self.colocated[ci];
        inst.iterating = false;

        // decode members advance one token
        let mut freed = 0u64;
        let mut kept = Vec::with_capacity(inst.decode_members.len());
        for &rid in &inst.decode_members {
            let s = &mut self.reqs[rid];
            s.generated += 1;
            inst.decode_ctx_sum += 1;
            if s.generated == s.output_len - 1 {
                s.completion = now;
                freed += s.kv_reserved;
                inst.decode_ctx_sum -= s.input_len as u64 + s.generated as u64;
            } else {
                kept.push(rid);
            }
        }
        inst.decode_members = kept;

        // prefill members produced their first token and join the decode batch
        let graduates: Vec<usize> = inst.prefill_members.drain(..).collect();
        inst.prefill_tokens = 0;
        inst.prefill_sq_tokens = 0;
        for rid in graduates {
            let s = &mut self.reqs[rid];
            s.prefill_done = now;
            if s.output_len == 1 || self.mode == SimMode::PrefillOnly {
                s.completion = now;
                freed += s.kv_reserved;
            } else {
                // KV never leaves the instance: a zero-length hop keeps the
                // stage accounting exhaustive
                s.transfer_start = now;
                s.transfer_end = now;
                inst.decode_ctx_sum += s.input_len as u64;
                inst.decode_members.push(rid);
            }
        }
        inst.resident_kv -= freed;
        self.push(now, Kind::ColoTryLaunch(ci));
        Ok(())
    }
}
