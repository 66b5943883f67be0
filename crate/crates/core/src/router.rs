//! Type-indexed message router with fan-out delivery and pull-based mailboxes.
//!
//! Endpoints register the message types they send and receive. Routing a
//! message enqueues one copy into the mailbox of every endpoint that declared
//! the message's type as receivable, in endpoint-id order. Every routing
//! decision is appended to an observation log so that conformance checks can
//! reference exactly what happened.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::mtype::Mtype;

pub const MAX_PAYLOAD_BYTES: usize = 65536;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EndpointId(pub String);

impl EndpointId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EndpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RmrMessage {
    pub mtype: Mtype,
    pub source: EndpointId,
    #[serde(with = "payload_text")]
    pub payload: Vec<u8>,
    pub correlation_id: Option<String>,
    pub sim_time_ms: u64,
}

/// Payloads are UTF-8 JSON in practice; anything else is rendered lossily.
mod payload_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&String::from_utf8_lossy(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        Ok(String::deserialize(d)?.into_bytes())
    }
}

impl RmrMessage {
    pub fn new(
        mtype: Mtype,
        source: EndpointId,
        payload: impl Into<Vec<u8>>,
        sim_time_ms: u64,
    ) -> Self {
        Self {
            mtype,
            source,
            payload: payload.into(),
            correlation_id: None,
            sim_time_ms,
        }
    }

    pub fn with_correlation(mut self, id: Option<String>) -> Self {
        self.correlation_id = id;
        self
    }

    pub fn is_well_formed(&self) -> bool {
        self.mtype.in_domain() && self.payload.len() <= MAX_PAYLOAD_BYTES
    }
}

/// One routing decision as recorded in the observation log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub seq: u64,
    pub message: RmrMessage,
    pub delivered_to: BTreeSet<EndpointId>,
    pub dropped: bool,
    pub observed_at: u64,
}

/// The JSON-lines export shape of the observation log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationLine {
    pub seq: u64,
    pub sim_time_ms: u64,
    pub mtype: Mtype,
    pub source: EndpointId,
    pub delivered_to: Vec<EndpointId>,
    pub dropped: bool,
}

impl From<&DeliveryRecord> for ObservationLine {
    fn from(r: &DeliveryRecord) -> Self {
        Self {
            seq: r.seq,
            sim_time_ms: r.observed_at,
            mtype: r.message.mtype,
            source: r.message.source.clone(),
            delivered_to: r.delivered_to.iter().cloned().collect(),
            dropped: r.dropped,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Endpoint {
    declared_rx: BTreeSet<Mtype>,
    declared_tx: BTreeSet<Mtype>,
    mailbox: VecDeque<RmrMessage>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouterStats {
    /// Calls to `route`/`route_directed`.
    pub messages_routed: u64,
    /// Routed messages that reached at least one endpoint.
    pub messages_delivered: u64,
    /// Routed messages that reached no endpoint.
    pub messages_dropped: u64,
    /// Per-recipient copies enqueued.
    pub copies_enqueued: u64,
    pub copies_drained: u64,
    /// Copies still queued when their endpoint was deregistered.
    pub copies_discarded: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RouterError {
    #[error("endpoint `{0}` is already registered")]
    AlreadyRegistered(EndpointId),
    #[error("endpoint `{0}` is not registered")]
    UnknownEndpoint(EndpointId),
}

#[derive(Debug, Clone, Default)]
pub struct RouteTable {
    rx_index: BTreeMap<Mtype, BTreeSet<EndpointId>>,
    endpoints: BTreeMap<EndpointId, Endpoint>,
    log: Vec<DeliveryRecord>,
    next_seq: u64,
    stats: RouterStats,
}

impl RouteTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_endpoint(
        &mut self,
        id: EndpointId,
        rx: BTreeSet<Mtype>,
        tx: BTreeSet<Mtype>,
    ) -> Result<(), RouterError> {
        if self.endpoints.contains_key(&id) {
            return Err(RouterError::AlreadyRegistered(id));
        }
        for t in &rx {
            self.rx_index.entry(*t).or_default().insert(id.clone());
        }
        self.endpoints.insert(
            id,
            Endpoint {
                declared_rx: rx,
                declared_tx: tx,
                mailbox: VecDeque::new(),
            },
        );
        Ok(())
    }

    /// Removes the endpoint from every index; undelivered mail is discarded.
    pub fn deregister_endpoint(&mut self, id: &EndpointId) -> Result<usize, RouterError> {
        let ep = self
            .endpoints
            .remove(id)
            .ok_or_else(|| RouterError::UnknownEndpoint(id.clone()))?;
        for t in &ep.declared_rx {
            if let Some(set) = self.rx_index.get_mut(t) {
                set.remove(id);
                if set.is_empty() {
                    self.rx_index.remove(t);
                }
            }
        }
        let discarded = ep.mailbox.len();
        self.stats.copies_discarded += discarded as u64;
        Ok(discarded)
    }

    /// Fans `msg` out to every endpoint registered to receive its type.
    pub fn route(&mut self, msg: RmrMessage) -> DeliveryRecord {
        let targets = self.rx_index.get(&msg.mtype).cloned().unwrap_or_default();
        self.deliver(msg, targets)
    }

    /// Delivers `msg` to `target` only, provided it registered to receive the type.
    ///
    /// Used for subscription responses and indications, which belong to one
    /// subscriber rather than to every holder of the type.
    pub fn route_directed(&mut self, msg: RmrMessage, target: &EndpointId) -> DeliveryRecord {
        let targets = self
            .rx_index
            .get(&msg.mtype)
            .filter(|set| set.contains(target))
            .map(|_| BTreeSet::from([target.clone()]))
            .unwrap_or_default();
        self.deliver(msg, targets)
    }

    fn deliver(&mut self, msg: RmrMessage, targets: BTreeSet<EndpointId>) -> DeliveryRecord {
        for id in &targets {
            let ep = self
                .endpoints
                .get_mut(id)
                .expect("rx_index names live endpoints");
            ep.mailbox.push_back(msg.clone());
        }
        self.stats.messages_routed += 1;
        self.stats.copies_enqueued += targets.len() as u64;
        if targets.is_empty() {
            self.stats.messages_dropped += 1;
        } else {
            self.stats.messages_delivered += 1;
        }
        let record = DeliveryRecord {
            seq: self.next_seq,
            observed_at: msg.sim_time_ms,
            dropped: targets.is_empty(),
            delivered_to: targets,
            message: msg,
        };
        self.next_seq += 1;
        self.log.push(record.clone());
        record
    }

    /// Removes and returns up to `max` messages in FIFO order.
    pub fn drain(&mut self, id: &EndpointId, max: usize) -> Result<Vec<RmrMessage>, RouterError> {
        let ep = self
            .endpoints
            .get_mut(id)
            .ok_or_else(|| RouterError::UnknownEndpoint(id.clone()))?;
        let n = max.min(ep.mailbox.len());
        let out: Vec<RmrMessage> = ep.mailbox.drain(..n).collect();
        self.stats.copies_drained += out.len() as u64;
        Ok(out)
    }

    pub fn is_registered(&self, id: &EndpointId) -> bool {
        self.endpoints.contains_key(id)
    }

    pub fn endpoint_ids(&self) -> impl Iterator<Item = &EndpointId> {
        self.endpoints.keys()
    }

    /// Declared (rx, tx) of a registered endpoint.
    pub fn declarations(&self, id: &EndpointId) -> Option<(&BTreeSet<Mtype>, &BTreeSet<Mtype>)> {
        self.endpoints
            .get(id)
            .map(|e| (&e.declared_rx, &e.declared_tx))
    }

    pub fn receivers_of(&self, mtype: Mtype) -> BTreeSet<EndpointId> {
        self.rx_index.get(&mtype).cloned().unwrap_or_default()
    }

    pub fn rx_index(&self) -> &BTreeMap<Mtype, BTreeSet<EndpointId>> {
        &self.rx_index
    }

    pub fn pending(&self, id: &EndpointId) -> usize {
        self.endpoints.get(id).map_or(0, |e| e.mailbox.len())
    }

    pub fn pending_total(&self) -> u64 {
        self.endpoints
            .values()
            .map(|e| e.mailbox.len() as u64)
            .sum()
    }

    pub fn stats(&self) -> &RouterStats {
        &self.stats
    }

    /// Both conservation identities of the router counters.
    pub fn conservation_holds(&self) -> bool {
        let s = &self.stats;
        s.messages_routed == s.messages_delivered + s.messages_dropped
            && s.copies_enqueued == s.copies_drained + s.copies_discarded + self.pending_total()
    }

    pub fn log(&self) -> &[DeliveryRecord] {
        &self.log
    }

    pub fn log_entry(&self, seq: u64) -> Option<&DeliveryRecord> {
        // seq numbers are dense and start at zero
        self.log.get(seq as usize).filter(|r| r.seq == seq)
    }

    pub fn log_since(&self, since_seq: Option<u64>) -> impl Iterator<Item = &DeliveryRecord> {
        self.log
            .iter()
            .filter(move |r| since_seq.is_none_or(|s| r.seq > s))
    }

    /// Observation log as JSON lines.
    pub fn export_log_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.log {
            let line = serde_json::to_string(&ObservationLine::from(r)).expect("serializable");
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}
