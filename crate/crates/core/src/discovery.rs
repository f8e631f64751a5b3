//! Agent discovery: factory contracts, permissionless and curated registries,
//! an off-chain indexer over the transaction log, and payment-derived
//! reputation.
//!
//! Standard-interface aggregation is the composition of the other three: all
//! agent contracts share one schema, and [`AgentIndex`] is the aggregator.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::routing::get;
use axum::{Json, Router};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::card::{AgentCard, Skill};
use crate::crypto::Address;
use crate::ledger::{
    FactoryContract, Ledger, LedgerError, LedgerState, RegistryContract, RegistryEntry,
    RegistryMode, TxKind, TxRecord, REGISTRY_ENROLL, REGISTRY_REMOVE,
};
use crate::util::Clock;

impl LedgerState {
    pub fn deploy_factory(&mut self, owner: Address, now: u64) -> Address {
        let addr = self.allocate_contract_address(&owner);
        self.factories.insert(
            addr,
            FactoryContract {
                owner,
                children: Vec::new(),
            },
        );
        self.append(
            TxKind::ContractDeploy,
            now,
            owner,
            addr,
            None,
            0,
            None,
            None,
        );
        addr
    }

    /// Deploys an agent contract through `factory`, recording it as a child.
    pub fn factory_create_agent(
        &mut self,
        factory: &Address,
        owner: Address,
        card: AgentCard,
        now: u64,
    ) -> Result<Address, LedgerError> {
        if !self.factories.contains_key(factory) {
            return Err(LedgerError::UnknownFactory(*factory));
        }
        let agent = self.deploy_agent_via(owner, card, now, Some(*factory))?;
        self.factories
            .get_mut(factory)
            .expect("checked above")
            .children
            .push(agent);
        Ok(agent)
    }

    pub fn factory_list(&self, factory: &Address) -> Result<Vec<Address>, LedgerError> {
        self.factories
            .get(factory)
            .map(|f| f.children.clone())
            .ok_or(LedgerError::UnknownFactory(*factory))
    }

    /// Curated registries need at least one curator; permissionless ones none.
    pub fn deploy_registry(
        &mut self,
        owner: Address,
        mode: RegistryMode,
        curators: BTreeSet<Address>,
        now: u64,
    ) -> Result<Address, LedgerError> {
        match mode {
            RegistryMode::Curated if curators.is_empty() => {
                return Err(LedgerError::InvalidRegistryConfig(
                    "curated registry needs a curator",
                ))
            }
            RegistryMode::Permissionless if !curators.is_empty() => {
                return Err(LedgerError::InvalidRegistryConfig(
                    "permissionless registry takes no curators",
                ))
            }
            _ => {}
        }
        let addr = self.allocate_contract_address(&owner);
        self.registries.insert(
            addr,
            RegistryContract {
                owner,
                mode,
                curators,
                entries: Vec::new(),
            },
        );
        self.append(
            TxKind::ContractDeploy,
            now,
            owner,
            addr,
            None,
            0,
            None,
            None,
        );
        Ok(addr)
    }

    fn authorize_registry_op(
        &self,
        registry: &Address,
        caller: &Address,
        agent: &Address,
    ) -> Result<&RegistryContract, LedgerError> {
        let reg = self
            .registries
            .get(registry)
            .ok_or(LedgerError::UnknownRegistry(*registry))?;
        let contract = self.agent(agent).ok_or(LedgerError::UnknownAgent(*agent))?;
        let allowed = match reg.mode {
            RegistryMode::Permissionless => contract.owner == *caller,
            RegistryMode::Curated => reg.curators.contains(caller),
        };
        if !allowed {
            return Err(LedgerError::NotAuthorized);
        }
        Ok(reg)
    }

    pub fn registry_enroll(
        &mut self,
        registry: &Address,
        caller: &Address,
        agent: &Address,
        now: u64,
    ) -> Result<TxRecord, LedgerError> {
        let reg = self.authorize_registry_op(registry, caller, agent)?;
        if reg.entries.iter().any(|e| e.agent == *agent) {
            return Err(LedgerError::AlreadyEnrolled);
        }
        let height = self.height() + 1;
        self.registries
            .get_mut(registry)
            .expect("checked above")
            .entries
            .push(RegistryEntry {
                agent: *agent,
                enrolled_at: now,
                height,
            });
        Ok(self.append(
            TxKind::RegistryOp,
            now,
            *caller,
            *agent,
            None,
            REGISTRY_ENROLL,
            None,
            Some(*registry),
        ))
    }

    pub fn registry_remove(
        &mut self,
        registry: &Address,
        caller: &Address,
        agent: &Address,
        now: u64,
    ) -> Result<TxRecord, LedgerError> {
        let reg = self.authorize_registry_op(registry, caller, agent)?;
        let pos = reg
            .entries
            .iter()
            .position(|e| e.agent == *agent)
            .ok_or(LedgerError::NotEnrolled)?;
        self.registries
            .get_mut(registry)
            .expect("checked above")
            .entries
            .remove(pos);
        Ok(self.append(
            TxKind::RegistryOp,
            now,
            *caller,
            *agent,
            None,
            REGISTRY_REMOVE,
            None,
            Some(*registry),
        ))
    }

    /// Current entries in enrollment order.
    pub fn registry_list(&self, registry: &Address) -> Result<Vec<Address>, LedgerError> {
        self.registries
            .get(registry)
            .map(|r| r.entries.iter().map(|e| e.agent).collect())
            .ok_or(LedgerError::UnknownRegistry(*registry))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReputationReport {
    pub total_payments_received: u64,
    pub unique_payers: u64,
    /// Payers with at least two payments.
    pub repeat_payers: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_payment_at: Option<u64>,
    pub score: u64,
}

/// score = total payments + 2 * repeat payers.
pub fn reputation_score(total_payments: u64, repeat_payers: u64) -> u64 {
    total_payments + 2 * repeat_payers
}

/// Per-payer counts kept by the indexer and folded into a report.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct PaymentTally {
    per_payer: BTreeMap<Address, u64>,
    last_payment_at: Option<u64>,
}

impl PaymentTally {
    fn record(&mut self, payer: Address, at: u64) {
        *self.per_payer.entry(payer).or_default() += 1;
        self.last_payment_at = Some(self.last_payment_at.map_or(at, |t| t.max(at)));
    }

    fn report(&self) -> ReputationReport {
        let total: u64 = self.per_payer.values().sum();
        let repeat = self.per_payer.values().filter(|&&n| n >= 2).count() as u64;
        ReputationReport {
            total_payments_received: total,
            unique_payers: self.per_payer.len() as u64,
            repeat_payers: repeat,
            last_payment_at: self.last_payment_at,
            score: reputation_score(total, repeat),
        }
    }
}

fn is_payment_to(tx: &TxRecord, agent: &Address) -> bool {
    tx.kind == TxKind::TokenTransfer && tx.to == *agent
}

/// Reputation from payments received up to `now`.
pub fn compute_reputation(
    state: &LedgerState,
    agent: &Address,
    now: u64,
) -> Result<ReputationReport, LedgerError> {
    if state.agent(agent).is_none() {
        return Err(LedgerError::UnknownAgent(*agent));
    }
    let mut tally = PaymentTally::default();
    for tx in state.tx_log() {
        if is_payment_to(tx, agent) && tx.timestamp <= now {
            tally.record(tx.from, tx.timestamp);
        }
    }
    Ok(tally.report())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CardSummary {
    pub name: String,
    pub description: String,
    pub url: String,
    pub version: String,
    pub skills: Vec<Skill>,
}

impl From<&AgentCard> for CardSummary {
    fn from(card: &AgentCard) -> Self {
        CardSummary {
            name: card.name.clone(),
            description: card.description.clone(),
            url: card.url.clone(),
            version: card.version.clone(),
            skills: card.skills.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IndexRecord {
    pub card: CardSummary,
    pub active: bool,
    pub last_activity: u64,
    pub reputation: ReputationReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factory: Option<Address>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IndexFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill_keyword: Option<String>,
    #[serde(default)]
    pub active_only: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_score: Option<u64>,
}

/// Off-chain catalog of agent contracts. Reflects the ledger as of
/// `last_scanned_height`; anything later is invisible until the next scan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentIndex {
    pub last_scanned_height: u64,
    pub window: u64,
    pub records: BTreeMap<Address, IndexRecord>,
    tallies: BTreeMap<Address, PaymentTally>,
}

impl AgentIndex {
    pub fn new(window: u64) -> AgentIndex {
        AgentIndex {
            last_scanned_height: 0,
            window,
            records: BTreeMap::new(),
            tallies: BTreeMap::new(),
        }
    }

    /// Folds in every transaction after `last_scanned_height`, then refreshes
    /// activity flags as of `now`.
    pub fn scan(&mut self, state: &LedgerState, now: u64) {
        let start = self.last_scanned_height as usize;
        let mut dirty = BTreeSet::new();
        for tx in state.tx_log().iter().skip(start) {
            match tx.kind {
                TxKind::AgentDeploy | TxKind::CardUpdate => {
                    dirty.insert(tx.to);
                }
                TxKind::TokenTransfer if state.agent(&tx.to).is_some() => {
                    self.tallies
                        .entry(tx.to)
                        .or_default()
                        .record(tx.from, tx.timestamp);
                }
                _ => {}
            }
            for addr in [Some(tx.from), Some(tx.to), tx.via].into_iter().flatten() {
                if let Some(rec) = self.records.get_mut(&addr) {
                    rec.last_activity = rec.last_activity.max(tx.timestamp);
                }
            }
            if tx.kind == TxKind::AgentDeploy {
                if let Some(contract) = state.agent(&tx.to) {
                    self.records.insert(
                        tx.to,
                        IndexRecord {
                            card: CardSummary::from(&contract.card),
                            active: true,
                            last_activity: tx.timestamp,
                            reputation: ReputationReport::default(),
                            factory: contract.factory,
                        },
                    );
                }
            }
            self.last_scanned_height = tx.height;
        }
        for addr in dirty {
            if let (Some(rec), Some(contract)) = (self.records.get_mut(&addr), state.agent(&addr)) {
                rec.card = CardSummary::from(&contract.card);
            }
        }
        for (addr, rec) in self.records.iter_mut() {
            if let Some(t) = self.tallies.get(addr) {
                rec.reputation = t.report();
            }
            let flag = state.agent(addr).map(|c| c.active).unwrap_or(false);
            rec.active = flag && rec.last_activity >= now.saturating_sub(self.window);
        }
    }

    /// Records matching every given predicate, best score first, then by
    /// address.
    pub fn query(&self, filter: &IndexFilter) -> Vec<(Address, ReputationReport)> {
        let keyword = filter.skill_keyword.as_ref().map(|k| k.to_lowercase());
        let mut hits: Vec<(Address, ReputationReport)> = self
            .records
            .iter()
            .filter(|(_, rec)| !filter.active_only || rec.active)
            .filter(|(_, rec)| filter.min_score.is_none_or(|m| rec.reputation.score >= m))
            .filter(|(_, rec)| match &keyword {
                None => true,
                Some(k) => rec.card.skills.iter().any(|s| {
                    s.name.to_lowercase().contains(k) || s.description.to_lowercase().contains(k)
                }),
            })
            .map(|(addr, rec)| (*addr, rec.reputation.clone()))
            .collect();
        hits.sort_by(|a, b| b.1.score.cmp(&a.1.score).then(a.0.cmp(&b.0)));
        hits
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("index serializes")
    }
}

/// Indexer bound to a ledger, with an HTTP read endpoint.
pub struct IndexerService {
    ledger: Ledger,
    index: Mutex<AgentIndex>,
    clock: Clock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentListing {
    pub address: Address,
    pub name: String,
    pub url: String,
    pub active: bool,
    pub reputation: ReputationReport,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
struct AgentsQuery {
    skill: Option<String>,
    active_only: Option<bool>,
    min_score: Option<u64>,
}

impl IndexerService {
    pub fn new(ledger: Ledger, window: u64, clock: Clock) -> IndexerService {
        IndexerService {
            ledger,
            index: Mutex::new(AgentIndex::new(window)),
            clock,
        }
    }

    pub fn scan_now(&self) {
        let now = self.clock.now();
        let mut index = self.index.lock();
        self.ledger.read(|s| index.scan(s, now));
    }

    pub fn index(&self) -> AgentIndex {
        self.index.lock().clone()
    }

    pub fn listings(&self, filter: &IndexFilter) -> Vec<AgentListing> {
        let index = self.index.lock();
        index
            .query(filter)
            .into_iter()
            .map(|(address, reputation)| {
                let rec = &index.records[&address];
                AgentListing {
                    address,
                    name: rec.card.name.clone(),
                    url: rec.card.url.clone(),
                    active: rec.active,
                    reputation,
                }
            })
            .collect()
    }

    /// `GET /agents?skill=&activeOnly=&minScore=`, served from the index as
    /// of its last scan.
    pub fn router(self: Arc<Self>) -> Router {
        async fn agents(
            State(svc): State<Arc<IndexerService>>,
            Query(q): Query<AgentsQuery>,
        ) -> Json<Vec<AgentListing>> {
            let filter = IndexFilter {
                skill_keyword: q.skill.filter(|s| !s.is_empty()),
                active_only: q.active_only.unwrap_or(false),
                min_score: q.min_score,
            };
            Json(svc.listings(&filter))
        }
        Router::new().route("/agents", get(agents)).with_state(self)
    }

    /// Rescans every `interval` until the returned task is aborted.
    pub fn spawn_scan_loop(
        self: Arc<Self>,
        interval: std::time::Duration,
    ) -> tokio::task::JoinHandle<()> {
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(interval);
            loop {
                tick.tick().await;
                self.scan_now();
            }
        })
    }
}
