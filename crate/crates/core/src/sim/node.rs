//! Per-node behaviour: what an honest (or adversarial) node sends after
//! seeing each block.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use crate::commit_reveal::{open_signal, seal_signal, verify_dataset, BlobStore, DatasetCommitment, EnvelopeContext};
use crate::config::ProblemType;
use crate::crypto::Keypair;
use crate::scenario::{AdversarySpec, NodeSpec, SearcherSpec};
use crate::scoring::{codec, dataset_score, real_time_score, BuiltinError};
use crate::searcher::{
    decide_restart, emit_dataset_outputs, emit_prediction, step_local_search, LocalSearchState, RestartDecision,
    SearchSpace, TruthProcess,
};
use crate::state::{AgentStatus, ChainEvent, ChainState};
use crate::transactions::TxPayload;
use crate::types::{Address, AgentId, Hash256, SymmetricKey, Timestamp, TokenAmount, Uuid};

/// Width of challenger dataset input rows.
const DATASET_INPUT_WIDTH: usize = 3;

/// Things a node does at most once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Action {
    Submit(u64),
    Signal(u64, u64),
    SignalKey(u64, u64),
    Dataset(u64),
    DatasetKey(u64),
    Ranking(u64),
    Listing,
}

#[derive(Debug, Clone)]
pub(crate) struct AgentPlan {
    pub id: AgentId,
    pub point: Vec<f64>,
    pub seed: Hash256,
}

#[derive(Debug, Clone)]
pub(crate) struct SearchRuntime {
    pub spec: SearcherSpec,
    pub space: SearchSpace,
    pub state: LocalSearchState,
    pub history: Vec<(usize, usize)>,
    pub agents: BTreeMap<u64, AgentPlan>,
}

/// Read access to the world plus an outbox, handed to a node per block.
pub(crate) struct NodeCtx<'a> {
    pub state: &'a ChainState,
    pub blobs: &'a mut BlobStore,
    pub truth: &'a TruthProcess,
    pub tournaments: u64,
    pub dataset_rows: usize,
    pub submit_lead: u64,
    pub outbox: Vec<TxPayload>,
    /// Off-chain happenings worth logging: `(kind, detail)`.
    pub notes: Vec<(&'static str, serde_json::Value)>,
}

pub(crate) struct Node {
    pub name: String,
    pub keys: Keypair,
    pub address: Address,
    pub spec: NodeSpec,
    rng: ChaCha8Rng,
    pub search: Option<SearchRuntime>,
    done: BTreeSet<Action>,
    signal_keys: BTreeMap<(u64, u64), SymmetricKey>,
    dataset_keys: BTreeMap<u64, SymmetricKey>,
    /// Copier bookkeeping: `(tournament, slot)` to the copied agent.
    copies: BTreeMap<(u64, u64), AgentId>,
    listing: Uuid,
    blocks_seen: u64,
    spam_sent: u64,
}

fn node_seed(master: u64, purpose: &str, name: &str) -> [u8; 32] {
    Hash256::digest_parts(&[b"sim-node/", &master.to_be_bytes(), purpose.as_bytes(), b"/", name.as_bytes()]).0
}

pub(crate) fn stream(master: u64, purpose: &str, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(node_seed(master, purpose, name))
}

pub(crate) fn agent_id(name: &str, tournament: u64) -> AgentId {
    Uuid::derive(&[b"agent/", name.as_bytes(), &tournament.to_be_bytes()])
}

pub(crate) fn listing_id(name: &str) -> Uuid {
    Uuid::derive(&[b"listing/", name.as_bytes()])
}

impl Node {
    pub fn new(spec: NodeSpec, master_seed: u64) -> Self {
        let keys = Keypair::from_name(&spec.name);
        let search = spec.searcher.clone().map(|s| {
            let space = s.space();
            let seed =
                u64::from_be_bytes(node_seed(master_seed, "search", &spec.name)[..8].try_into().expect("8 bytes"));
            let state = match &s.start {
                Some(p) => LocalSearchState::from_point(&space, p.clone(), s.step_scale, seed),
                None => LocalSearchState::new(&space, s.step_scale, seed),
            };
            SearchRuntime { spec: s, state, space, history: Vec::new(), agents: BTreeMap::new() }
        });
        Self {
            name: spec.name.clone(),
            address: keys.address(),
            keys,
            rng: stream(master_seed, "behaviour", &spec.name),
            search,
            done: BTreeSet::new(),
            signal_keys: BTreeMap::new(),
            dataset_keys: BTreeMap::new(),
            copies: BTreeMap::new(),
            listing: listing_id(&spec.name),
            blocks_seen: 0,
            spam_sent: 0,
            spec,
        }
    }

    fn is(&self, adversary: AdversarySpec) -> bool {
        self.spec.adversary == Some(adversary)
    }

    fn fresh_key(&mut self) -> SymmetricKey {
        SymmetricKey(self.rng.gen())
    }

    /// Reacts to a block with timestamp `t` and the events it produced.
    pub fn on_block(&mut self, t: Timestamp, events: &[ChainEvent], ctx: &mut NodeCtx<'_>) {
        self.blocks_seen += 1;
        self.search_step(events, ctx);
        if self.search.is_some() {
            self.submit_agent(t, ctx);
            match ctx.state.config.problem_type {
                ProblemType::RealTime => self.real_time_signals(t, ctx),
                ProblemType::Dataset => self.dataset_signals(t, ctx),
            }
        }
        if self.spec.is_validator() {
            self.challenger_duties(t, ctx);
            self.rank(t, ctx);
        }
        self.market(ctx);
    }

    fn search_step(&mut self, events: &[ChainEvent], ctx: &mut NodeCtx<'_>) {
        let Some(search) = self.search.as_mut() else { return };
        step_local_search(&mut search.state, &search.space, search.spec.steps_per_block);
        for event in events {
            let ChainEvent::TournamentSettled { tournament, settlement } = event else { continue };
            let Some(plan) = search.agents.get(tournament) else { continue };
            let status = ctx.state.agents.get(&plan.id).map(|a| a.status);
            if matches!(status, Some(AgentStatus::NotSelected { .. })) {
                continue;
            }
            let field = settlement.consensus.len();
            if field == 0 {
                continue;
            }
            let rank = settlement.consensus.iter().position(|(a, _)| *a == plan.id).map_or(field, |p| p + 1);
            search.history.push((rank, field));
            if decide_restart(&search.spec.restart, &search.history) == RestartDecision::Restart {
                search.state.restart(&search.space);
                search.history.clear();
                ctx.notes.push((
                    "restart",
                    json!({ "tournament": tournament, "rank": rank, "field": field, "bestEver": search.state.best_ever }),
                ));
            }
        }
    }

    fn submit_agent(&mut self, t: Timestamp, ctx: &mut NodeCtx<'_>) {
        let cfg = &ctx.state.config;
        let next = cfg.tournament_index_at(t).map_or(1, |k| k + 1);
        if next > ctx.tournaments
            || t + ctx.submit_lead < cfg.tournament_start(next)
            || self.done.contains(&Action::Submit(next))
        {
            return;
        }
        let search = self.search.as_mut().expect("searcher");
        let stake: TokenAmount = search.spec.stake.unwrap_or(cfg.min_agent_submit_stake);
        if ctx.state.ledger.balance(&self.address) < stake {
            return;
        }
        self.done.insert(Action::Submit(next));
        let id = agent_id(&self.name, next);
        let seed = Hash256::digest_parts(&[b"agent-seed/", id.as_bytes()]);
        search.agents.insert(next, AgentPlan { id, point: search.state.best_point.clone(), seed });
        ctx.outbox.push(TxPayload::SubmitAgent { agent: id, stake });
    }

    /// Agents of ours that may still act in tournament `k`.
    fn live_agents(&self, state: &ChainState, k_min: u64) -> Vec<(u64, AgentPlan)> {
        let search = self.search.as_ref().expect("searcher");
        search
            .agents
            .range(k_min..)
            .filter(|(k, plan)| {
                let active = matches!(
                    state.agents.get(&plan.id).map(|a| a.status),
                    Some(AgentStatus::Pending { tournament } | AgentStatus::Participating { tournament }) if tournament == **k
                );
                let dq = state.tournament(**k).is_some_and(|r| r.disqualified_agents.contains_key(&plan.id));
                active && !dq
            })
            .map(|(k, p)| (*k, p.clone()))
            .collect()
    }

    fn real_time_signals(&mut self, t: Timestamp, ctx: &mut NodeCtx<'_>) {
        let state = ctx.state;
        let cfg = &state.config;
        let rtf = cfg.tick_interval();
        let dim = cfg.signal_dimension as usize;
        let current = cfg.tournament_index_at(t).unwrap_or(0);
        let copier = self.is(AdversarySpec::SignalCopier);
        let silent = self.is(AdversarySpec::SilentSearcher);

        for (k, plan) in self.live_agents(state, current.max(1)) {
            for t_m in cfg.schedule_for(k).ticks {
                let m = t_m / rtf;
                let window_open = t + rtf >= t_m && t < t_m;
                if !window_open || silent || self.done.contains(&Action::Signal(k, m)) {
                    continue;
                }
                let envelope = if copier {
                    let Some((victim, env)) = victim_envelope(state, k, m, &plan.id) else { continue };
                    self.copies.insert((k, m), victim);
                    ctx.notes.push(("copy-attempt", json!({ "tournament": k, "tick": m, "victim": victim })));
                    crate::commit_reveal::SignalEnvelope { agent: plan.id, ..env }
                } else {
                    let search = self.search.as_ref().expect("searcher");
                    let prediction = emit_prediction(&search.space, &plan.point, ctx.truth, &plan.seed, m, dim);
                    let key = self.fresh_key();
                    self.signal_keys.insert((k, m), key);
                    seal_signal(
                        &key,
                        plan.id,
                        EnvelopeContext::Tick(m),
                        &codec::encode_vector(&prediction),
                        &self.address,
                    )
                };
                self.done.insert(Action::Signal(k, m));
                ctx.outbox.push(TxPayload::SubmitSignal { agent: plan.id, envelope, tick: Some(m) });
            }
        }

        // Reveals; disqualified agents still reveal so copies are exposed.
        let search = self.search.as_ref().expect("searcher");
        let mut reveals = Vec::new();
        for (&k, plan) in search.agents.range(current.saturating_sub(1).max(1)..) {
            let Some(rec) = state.tournament(k) else { continue };
            for t_m in cfg.schedule_for(k).ticks {
                let m = t_m / rtf;
                if t < t_m
                    || t >= t_m + rtf
                    || self.done.contains(&Action::SignalKey(k, m))
                    || rec.envelope(&plan.id, m).is_none()
                {
                    continue;
                }
                let key = match self.copies.get(&(k, m)) {
                    Some(victim) => rec.signal_key(victim, m).copied(),
                    None => self.signal_keys.get(&(k, m)).copied(),
                };
                if let Some(key) = key {
                    reveals.push((k, m, plan.id, key));
                }
            }
        }
        for (k, m, agent, key) in reveals {
            self.done.insert(Action::SignalKey(k, m));
            ctx.outbox.push(TxPayload::PublishSignalDecryptionKey { agent, key, tick: Some(m) });
        }
    }

    fn dataset_signals(&mut self, t: Timestamp, ctx: &mut NodeCtx<'_>) {
        let state = ctx.state;
        let cfg = &state.config;
        let dim = cfg.signal_dimension as usize;
        let Some(current) = cfg.tournament_index_at(t) else { return };
        let copier = self.is(AdversarySpec::SignalCopier);
        let silent = self.is(AdversarySpec::SilentSearcher);

        let sendable =
            !silent && t >= cfg.challenger_deadline(current) && !self.done.contains(&Action::Signal(current, current));
        if let Some(plan) = self.live_agents(state, current).into_iter().find(|(k, _)| *k == current).map(|(_, p)| p) {
            let rec = state.tournament(current);
            let participating = matches!(state.agents[&plan.id].status, AgentStatus::Participating { tournament } if tournament == current);
            if sendable && participating {
                let envelope = if copier {
                    victim_envelope(state, current, current, &plan.id).map(|(victim, env)| {
                        self.copies.insert((current, current), victim);
                        ctx.notes.push(("copy-attempt", json!({ "tournament": current, "victim": victim })));
                        crate::commit_reveal::SignalEnvelope { agent: plan.id, ..env }
                    })
                } else {
                    let search = self.search.as_ref().expect("searcher");
                    let mut answers = Vec::new();
                    for (ch, ds) in rec.map(|r| &r.datasets).into_iter().flatten() {
                        let rows = ctx.blobs.get(&ds.commitment.inputs_blob).and_then(codec::decode_matrix);
                        if let Some(rows) = rows {
                            answers.push((
                                *ch,
                                emit_dataset_outputs(&search.space, &plan.point, ctx.truth, &plan.seed, &rows, dim),
                            ));
                        }
                    }
                    let key = self.fresh_key();
                    self.signal_keys.insert((current, current), key);
                    let signal = codec::encode_dataset_answers(&answers);
                    Some(seal_signal(&key, plan.id, EnvelopeContext::Tournament(current), &signal, &self.address))
                };
                if let Some(envelope) = envelope {
                    self.done.insert(Action::Signal(current, current));
                    ctx.outbox.push(TxPayload::SubmitSignal { agent: plan.id, envelope, tick: None });
                }
            }
        }

        // Reveal for the tournament that just closed.
        let k = current - 1;
        if k == 0 || t >= cfg.dataset_key_deadline(k) || self.done.contains(&Action::SignalKey(k, k)) {
            return;
        }
        let search = self.search.as_ref().expect("searcher");
        let (Some(plan), Some(rec)) = (search.agents.get(&k), state.tournament(k)) else { return };
        if rec.envelope(&plan.id, k).is_none() {
            return;
        }
        let key = match self.copies.get(&(k, k)) {
            Some(victim) => rec.signal_key(victim, k).copied(),
            None => self.signal_keys.get(&(k, k)).copied(),
        };
        if let Some(key) = key {
            let agent = plan.id;
            self.done.insert(Action::SignalKey(k, k));
            ctx.outbox.push(TxPayload::PublishSignalDecryptionKey { agent, key, tick: None });
        }
    }

    fn challenger_duties(&mut self, t: Timestamp, ctx: &mut NodeCtx<'_>) {
        let state = ctx.state;
        let cfg = &state.config;
        if cfg.problem_type != ProblemType::Dataset {
            return;
        }
        let Some(current) = cfg.tournament_index_at(t) else { return };
        let dim = cfg.signal_dimension as usize;
        if let Some(rec) = state.tournament(current) {
            if rec.is_challenger(&self.address)
                && t < cfg.challenger_deadline(current)
                && !rec.datasets.contains_key(&self.address)
                && !self.done.contains(&Action::Dataset(current))
            {
                let rows: Vec<Vec<f64>> = (0..ctx.dataset_rows)
                    .map(|_| (0..DATASET_INPUT_WIDTH).map(|_| self.rng.gen_range(-1.0..1.0)).collect())
                    .collect();
                let outputs: Vec<f64> = if self.is(AdversarySpec::CorruptChallenger) {
                    let mut junk = stream(current, "corrupt-outputs", &self.name);
                    (0..rows.len() * dim).map(|_| 5.0 * junk.sample::<f64, _>(StandardNormal)).collect()
                } else {
                    rows.iter().flat_map(|r| ctx.truth.map_row(r, dim)).collect()
                };
                let key = self.fresh_key();
                let c = DatasetCommitment::publish(
                    ctx.blobs,
                    &self.address,
                    codec::encode_matrix(&rows),
                    &codec::encode_vector(&outputs),
                    &key,
                );
                self.dataset_keys.insert(current, key);
                self.done.insert(Action::Dataset(current));
                ctx.outbox.push(TxPayload::PublishDataset {
                    inputs_blob: c.inputs_blob,
                    inputs_hash: c.inputs_hash,
                    outputs_blob: c.outputs_blob,
                    outputs_hash: c.outputs_hash,
                });
            }
        }
        let k = current - 1;
        if k == 0 || t >= cfg.dataset_key_deadline(k) || self.done.contains(&Action::DatasetKey(k)) {
            return;
        }
        let published =
            state.tournament(k).is_some_and(|r| r.datasets.get(&self.address).is_some_and(|d| d.key.is_none()));
        if let (true, Some(key)) = (published, self.dataset_keys.get(&k).copied()) {
            self.done.insert(Action::DatasetKey(k));
            ctx.outbox.push(TxPayload::PublishDatasetDecryptionKey { key });
        }
    }

    fn rank(&mut self, t: Timestamp, ctx: &mut NodeCtx<'_>) {
        if self.is(AdversarySpec::LazyValidator) {
            return;
        }
        let state = ctx.state;
        let cfg = &state.config;
        let Some(k) = cfg.tournament_index_at(t).and_then(|c| c.checked_sub(1)).filter(|k| *k >= 1) else { return };
        let Some(rec) = state.tournament(k) else { return };
        if !rec.validators.contains_key(&self.address)
            || self.done.contains(&Action::Ranking(k))
            || t >= cfg.ranking_deadline(k)
        {
            return;
        }
        // Rank once every reveal the ranking depends on is final.
        let ready_at = match cfg.problem_type {
            ProblemType::RealTime => {
                let last_key = cfg.schedule_for(k).ticks.last().map_or(0, |t_m| t_m + cfg.tick_interval());
                cfg.tournament_end(k).max(last_key)
            }
            ProblemType::Dataset => cfg.dataset_key_deadline(k),
        };
        if t < ready_at {
            return;
        }
        let ranking = compute_ranking(state, k, ctx.blobs, ctx.truth);
        self.done.insert(Action::Ranking(k));
        ctx.outbox.push(TxPayload::PublishTournamentRanking { ranking });
    }

    fn market(&mut self, ctx: &mut NodeCtx<'_>) {
        let state = ctx.state;
        if let Some(listing) = &self.spec.data_listing {
            let params = format!("{{\"source\":\"{}\"}}", self.name).into_bytes();
            if !self.done.contains(&Action::Listing) {
                self.done.insert(Action::Listing);
                ctx.outbox.push(TxPayload::PublishDataPrice {
                    data: self.listing,
                    params: params.clone(),
                    scheme: listing.scheme.clone(),
                    price: listing.price,
                    stake: listing.stake,
                });
            } else if let Some(AdversarySpec::TxSpammer { per_block }) = self.spec.adversary {
                for _ in 0..per_block {
                    // A revision counter keeps every update a distinct transaction.
                    self.spam_sent += 1;
                    let mut params = params.clone();
                    params.extend_from_slice(format!("#{}", self.spam_sent).as_bytes());
                    ctx.outbox.push(TxPayload::PublishDataPrice {
                        data: self.listing,
                        params,
                        scheme: listing.scheme.clone(),
                        price: listing.price,
                        stake: listing.stake,
                    });
                }
            }
        }
        if let Some(client) = self.spec.client {
            if !self.blocks_seen.is_multiple_of(client.every_blocks) {
                return;
            }
            let open: Vec<(&Uuid, TokenAmount)> = state
                .listings
                .iter()
                .filter(|(_, l)| l.active && l.owner != self.address)
                .map(|(id, l)| (id, l.price))
                .collect();
            if open.is_empty() {
                return;
            }
            let (id, price) = open[self.rng.gen_range(0..open.len())];
            let cost = price.saturating_mul(client.quantity).saturating_add(state.config.rent_fee);
            if state.ledger.balance(&self.address) >= cost {
                ctx.outbox.push(TxPayload::Rent { listing: *id, quantity: client.quantity });
            }
        }
    }
}

/// Lowest-id envelope of another agent for `(k, slot)`.
fn victim_envelope(
    state: &ChainState,
    k: u64,
    slot: u64,
    own: &AgentId,
) -> Option<(AgentId, crate::commit_reveal::SignalEnvelope)> {
    let rec = state.tournament(k)?;
    rec.envelopes
        .iter()
        .filter(|(agent, _)| *agent != own)
        .find_map(|(agent, slots)| slots.get(&slot).map(|env| (*agent, env.clone())))
}

/// An honest validator's ranking of tournament `k`: every non-disqualified
/// participant it can score, best first.
pub(crate) fn compute_ranking(
    state: &ChainState,
    k: u64,
    blobs: &BlobStore,
    truth: &TruthProcess,
) -> Vec<(AgentId, f64)> {
    let cfg = &state.config;
    let Some(rec) = state.tournament(k) else { return Vec::new() };
    let dim = cfg.signal_dimension as usize;
    let metric = BuiltinError::MeanSquaredError;
    let mut scored = Vec::new();
    match cfg.problem_type {
        ProblemType::RealTime => {
            let rtf = cfg.tick_interval();
            let truths: BTreeMap<u64, Vec<f64>> =
                cfg.schedule_for(k).ticks.iter().map(|t_m| (t_m / rtf, truth.at_tick(t_m / rtf, dim))).collect();
            for (agent, p) in &rec.participants {
                if rec.disqualified_agents.contains_key(agent) {
                    continue;
                }
                let signals: BTreeMap<u64, Vec<f64>> = truths
                    .keys()
                    .filter_map(|m| {
                        let bytes = open_signal(rec.envelope(agent, *m)?, rec.signal_key(agent, *m)?, &p.owner).ok()?;
                        Some((*m, codec::decode_prediction(&bytes, dim)?))
                    })
                    .collect();
                if let Ok(s) = real_time_score(*agent, &signals, &truths, &metric) {
                    scored.push((*agent, s.score));
                }
            }
        }
        ProblemType::Dataset => {
            let truths: BTreeMap<Address, Vec<f64>> = rec
                .datasets
                .iter()
                .filter(|(ch, _)| !rec.disqualified_challengers.contains_key(*ch))
                .filter_map(|(ch, d)| {
                    let verified = verify_dataset(&d.commitment, d.key.as_ref()?, blobs).ok()?;
                    Some((*ch, codec::decode_vector(&verified.outputs)?))
                })
                .collect();
            for (agent, p) in &rec.participants {
                if rec.disqualified_agents.contains_key(agent) {
                    continue;
                }
                let answers = rec
                    .envelope(agent, k)
                    .zip(rec.signal_key(agent, k))
                    .and_then(|(env, key)| open_signal(env, key, &p.owner).ok())
                    .and_then(|bytes| codec::decode_dataset_answers(&bytes));
                let Some(answers) = answers else { continue };
                let outputs: BTreeMap<Address, Vec<f64>> = answers.into_iter().collect();
                if let Ok(s) = dataset_score(*agent, &outputs, &truths, &metric) {
                    scored.push((*agent, s.score));
                }
            }
        }
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
}
