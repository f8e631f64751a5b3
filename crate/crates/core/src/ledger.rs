//! Deterministic in-process ledger: native accounts, EIP-3009 capable tokens,
//! agent identity contracts, discovery contracts and an append-only
//! transaction log.
//!
//! Every mutating operation validates first and only then touches state, so a
//! rejected call leaves the ledger exactly as it was. Time only enters through
//! explicit `now` arguments.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::card::{self, AgentCard, Violation};
use crate::crypto::{self, Address, Digest32, Eip712Domain, Signature};
use crate::util::decimal;

pub type Amount = u128;

pub const DEFAULT_CHAIN_ID: u64 = 31337;
/// Default activity window: 30 days.
pub const DEFAULT_ACTIVITY_WINDOW: u64 = 30 * 24 * 60 * 60;
pub const TOKEN_DOMAIN_VERSION: &str = "1";

/// Text identifier of a simulated chain, e.g. `sim:31337`.
pub fn network_id(chain_id: u64) -> String {
    format!("sim:{chain_id}")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LedgerError {
    #[error("duplicate genesis account {0}")]
    DuplicateAccount(Address),
    #[error("unknown token {0}")]
    UnknownToken(Address),
    #[error("unknown agent {0}")]
    UnknownAgent(Address),
    #[error("unknown registry {0}")]
    UnknownRegistry(Address),
    #[error("unknown factory {0}")]
    UnknownFactory(Address),
    #[error("signature does not recover to the authorizing account")]
    BadSignature,
    #[error("authorization expired")]
    AuthorizationExpired,
    #[error("authorization not yet valid")]
    AuthorizationNotYetValid,
    #[error("authorization nonce already used")]
    NonceAlreadyUsed,
    #[error("insufficient funds")]
    InsufficientFunds,
    #[error("submitter cannot pay the settlement fee")]
    InsufficientFeeBalance,
    #[error("malformed authorization: validAfter must precede validBefore")]
    MalformedAuthorization,
    #[error("invalid card: {}", card::join_violations(.0))]
    InvalidCard(Vec<Violation>),
    #[error("caller is not the owner")]
    NotOwner,
    #[error("caller is not authorized")]
    NotAuthorized,
    #[error("agent already enrolled")]
    AlreadyEnrolled,
    #[error("agent not enrolled")]
    NotEnrolled,
    #[error("token {0} is not approved for this agent")]
    TokenNotApproved(Address),
    #[error("invalid registry configuration: {0}")]
    InvalidRegistryConfig(&'static str),
    #[error("arithmetic overflow")]
    Overflow,
    #[error("snapshot: {0}")]
    Snapshot(String),
}

impl LedgerError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            LedgerError::DuplicateAccount(_) => "DuplicateAccount",
            LedgerError::UnknownToken(_) => "UnknownToken",
            LedgerError::UnknownAgent(_) => "UnknownAgent",
            LedgerError::UnknownRegistry(_) => "UnknownRegistry",
            LedgerError::UnknownFactory(_) => "UnknownFactory",
            LedgerError::BadSignature => "BadSignature",
            LedgerError::AuthorizationExpired => "AuthorizationExpired",
            LedgerError::AuthorizationNotYetValid => "AuthorizationNotYetValid",
            LedgerError::NonceAlreadyUsed => "NonceAlreadyUsed",
            LedgerError::InsufficientFunds => "InsufficientFunds",
            LedgerError::InsufficientFeeBalance => "InsufficientFeeBalance",
            LedgerError::MalformedAuthorization => "MalformedAuthorization",
            LedgerError::InvalidCard(_) => "InvalidCard",
            LedgerError::NotOwner => "NotOwner",
            LedgerError::NotAuthorized => "NotAuthorized",
            LedgerError::AlreadyEnrolled => "AlreadyEnrolled",
            LedgerError::NotEnrolled => "NotEnrolled",
            LedgerError::TokenNotApproved(_) => "TokenNotApproved",
            LedgerError::InvalidRegistryConfig(_) => "InvalidRegistryConfig",
            LedgerError::Overflow => "Overflow",
            LedgerError::Snapshot(_) => "Snapshot",
        }
    }
}

/// EIP-3009 `transferWithAuthorization` tuple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TransferAuthorization {
    pub from: Address,
    pub to: Address,
    #[serde(with = "decimal")]
    pub value: Amount,
    #[serde(with = "decimal")]
    pub valid_after: u64,
    #[serde(with = "decimal")]
    pub valid_before: u64,
    pub nonce: Digest32,
}

impl TransferAuthorization {
    pub fn is_well_formed(&self) -> bool {
        self.valid_after < self.valid_before
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TxKind {
    TokenTransfer,
    AgentDeploy,
    CardUpdate,
    Heartbeat,
    Withdrawal,
    /// `value` is [`REGISTRY_ENROLL`] or [`REGISTRY_REMOVE`].
    RegistryOp,
    /// Token, registry and factory deployments.
    ContractDeploy,
}

impl TxKind {
    fn tag(self) -> u8 {
        match self {
            TxKind::TokenTransfer => 0,
            TxKind::AgentDeploy => 1,
            TxKind::CardUpdate => 2,
            TxKind::Heartbeat => 3,
            TxKind::Withdrawal => 4,
            TxKind::RegistryOp => 5,
            TxKind::ContractDeploy => 6,
        }
    }
}

pub const REGISTRY_ENROLL: Amount = 1;
pub const REGISTRY_REMOVE: Amount = 0;

/// One accepted transaction.
///
/// Field conventions per kind:
/// - `TokenTransfer`: payer to payee; `token` absent for native transfers.
/// - `AgentDeploy`: owner to agent; `via` is the factory when factory-created.
/// - `CardUpdate`, `Heartbeat`: caller to agent.
/// - `Withdrawal`: caller to recipient, `via` the agent contract.
/// - `RegistryOp`: caller to agent, `via` the registry.
/// - `ContractDeploy`: deployer to new contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TxRecord {
    pub tx_id: Digest32,
    pub height: u64,
    pub timestamp: u64,
    pub kind: TxKind,
    pub from: Address,
    pub to: Address,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<Address>,
    #[serde(with = "decimal")]
    pub value: Amount,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonce: Option<Digest32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub via: Option<Address>,
}

impl TxRecord {
    /// Canonical byte encoding of every field except `tx_id`.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(160);
        buf.push(self.kind.tag());
        buf.extend_from_slice(&self.height.to_be_bytes());
        buf.extend_from_slice(&self.timestamp.to_be_bytes());
        buf.extend_from_slice(&self.from.0);
        buf.extend_from_slice(&self.to.0);
        match &self.token {
            Some(t) => {
                buf.push(1);
                buf.extend_from_slice(&t.0);
            }
            None => buf.push(0),
        }
        buf.extend_from_slice(&crypto::pad32(self.value));
        match &self.nonce {
            Some(n) => {
                buf.push(1);
                buf.extend_from_slice(&n.0);
            }
            None => buf.push(0),
        }
        match &self.via {
            Some(v) => {
                buf.push(1);
                buf.extend_from_slice(&v.0);
            }
            None => buf.push(0),
        }
        buf
    }

    pub fn compute_id(&self) -> Digest32 {
        crypto::keccak256(self.canonical_bytes())
    }

    pub fn touches(&self, addr: &Address) -> bool {
        self.from == *addr || self.to == *addr || self.via.as_ref() == Some(addr)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TokenContract {
    pub name: String,
    pub symbol: String,
    pub decimals: u8,
    pub owner: Address,
    #[serde(with = "decimal")]
    pub total_supply: Amount,
    pub balances: BTreeMap<Address, DecimalAmount>,
    pub used_nonces: BTreeSet<(Address, Digest32)>,
}

impl TokenContract {
    pub fn balance_of(&self, who: &Address) -> Amount {
        self.balances.get(who).map(|a| a.0).unwrap_or(0)
    }

    pub fn nonce_used(&self, from: &Address, nonce: &Digest32) -> bool {
        self.used_nonces.contains(&(*from, *nonce))
    }

    fn set_balance(&mut self, who: Address, value: Amount) {
        if value == 0 {
            self.balances.remove(&who);
        } else {
            self.balances.insert(who, DecimalAmount(value));
        }
    }
}

/// Amount serialized as a decimal string inside maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DecimalAmount(#[serde(with = "decimal")] pub Amount);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentContract {
    pub owner: Address,
    pub card: AgentCard,
    pub active: bool,
    pub last_heartbeat: u64,
    #[serde(with = "decimal")]
    pub native_balance: Amount,
    pub approved_tokens: BTreeSet<Address>,
    pub created_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factory: Option<Address>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegistryMode {
    Permissionless,
    Curated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RegistryEntry {
    pub agent: Address,
    pub enrolled_at: u64,
    pub height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RegistryContract {
    pub owner: Address,
    pub mode: RegistryMode,
    pub curators: BTreeSet<Address>,
    /// Current entries in enrollment order.
    pub entries: Vec<RegistryEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FactoryContract {
    pub owner: Address,
    pub children: Vec<Address>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LedgerConfig {
    /// Flat native-coin fee charged to whoever submits a settlement.
    #[serde(with = "decimal")]
    pub settlement_fee: Amount,
    /// Added to `now` when stamping settled transfers.
    pub settlement_delay: u64,
    pub activity_window: u64,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        LedgerConfig {
            settlement_fee: 0,
            settlement_delay: 0,
            activity_window: DEFAULT_ACTIVITY_WINDOW,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TxFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<Address>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<Address>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<TxKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub since: Option<u64>,
}

impl TxFilter {
    pub fn matches(&self, tx: &TxRecord) -> bool {
        self.to.is_none_or(|a| tx.to == a)
            && self.from.is_none_or(|a| tx.from == a)
            && self.kind.is_none_or(|k| tx.kind == k)
            && self.since.is_none_or(|t| tx.timestamp >= t)
    }
}

/// Complete world state. Serializes to a canonical JSON snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LedgerState {
    chain_id: u64,
    height: u64,
    config: LedgerConfig,
    deploy_seq: u64,
    #[serde(with = "decimal")]
    fees_collected: Amount,
    accounts: BTreeMap<Address, DecimalAmount>,
    tokens: BTreeMap<Address, TokenContract>,
    agents: BTreeMap<Address, AgentContract>,
    pub(crate) registries: BTreeMap<Address, RegistryContract>,
    pub(crate) factories: BTreeMap<Address, FactoryContract>,
    tx_log: Vec<TxRecord>,
}

impl LedgerState {
    pub fn new(chain_id: u64, genesis: &[(Address, Amount)]) -> Result<LedgerState, LedgerError> {
        LedgerState::with_config(chain_id, genesis, LedgerConfig::default())
    }

    pub fn with_config(
        chain_id: u64,
        genesis: &[(Address, Amount)],
        config: LedgerConfig,
    ) -> Result<LedgerState, LedgerError> {
        let mut accounts = BTreeMap::new();
        for (addr, amount) in genesis {
            if accounts.insert(*addr, DecimalAmount(*amount)).is_some() {
                return Err(LedgerError::DuplicateAccount(*addr));
            }
        }
        Ok(LedgerState {
            chain_id,
            height: 0,
            config,
            deploy_seq: 0,
            fees_collected: 0,
            accounts,
            tokens: BTreeMap::new(),
            agents: BTreeMap::new(),
            registries: BTreeMap::new(),
            factories: BTreeMap::new(),
            tx_log: Vec::new(),
        })
    }

    pub fn chain_id(&self) -> u64 {
        self.chain_id
    }

    pub fn network(&self) -> String {
        network_id(self.chain_id)
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn config(&self) -> &LedgerConfig {
        &self.config
    }

    pub fn fees_collected(&self) -> Amount {
        self.fees_collected
    }

    pub fn tx_log(&self) -> &[TxRecord] {
        &self.tx_log
    }

    pub fn native_balance(&self, who: &Address) -> Amount {
        if let Some(agent) = self.agents.get(who) {
            return agent.native_balance;
        }
        self.accounts.get(who).map(|a| a.0).unwrap_or(0)
    }

    pub fn accounts(&self) -> impl Iterator<Item = (&Address, Amount)> {
        self.accounts.iter().map(|(a, v)| (a, v.0))
    }

    pub fn token(&self, token: &Address) -> Option<&TokenContract> {
        self.tokens.get(token)
    }

    pub fn tokens(&self) -> &BTreeMap<Address, TokenContract> {
        &self.tokens
    }

    pub fn agent(&self, agent: &Address) -> Option<&AgentContract> {
        self.agents.get(agent)
    }

    pub fn agents(&self) -> &BTreeMap<Address, AgentContract> {
        &self.agents
    }

    pub fn registry(&self, registry: &Address) -> Option<&RegistryContract> {
        self.registries.get(registry)
    }

    pub fn factory(&self, factory: &Address) -> Option<&FactoryContract> {
        self.factories.get(factory)
    }

    pub fn balance_of(&self, token: &Address, who: &Address) -> Result<Amount, LedgerError> {
        self.tokens
            .get(token)
            .map(|t| t.balance_of(who))
            .ok_or(LedgerError::UnknownToken(*token))
    }

    pub fn token_domain(&self, token: &Address) -> Result<Eip712Domain, LedgerError> {
        let t = self
            .tokens
            .get(token)
            .ok_or(LedgerError::UnknownToken(*token))?;
        Ok(Eip712Domain {
            name: t.name.clone(),
            version: TOKEN_DOMAIN_VERSION.to_string(),
            chain_id: self.chain_id,
            verifying_contract: *token,
        })
    }

    /// Address the next contract deployed by `deployer` will receive.
    pub fn next_contract_address(&self, deployer: &Address) -> Address {
        let mut buf = Vec::with_capacity(28);
        buf.extend_from_slice(&deployer.0);
        buf.extend_from_slice(&self.deploy_seq.to_be_bytes());
        let hash = crypto::keccak256(buf);
        let mut out = [0u8; 20];
        out.copy_from_slice(&hash.0[12..]);
        Address(out)
    }

    pub(crate) fn allocate_contract_address(&mut self, deployer: &Address) -> Address {
        let addr = self.next_contract_address(deployer);
        self.deploy_seq += 1;
        addr
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn append(
        &mut self,
        kind: TxKind,
        timestamp: u64,
        from: Address,
        to: Address,
        token: Option<Address>,
        value: Amount,
        nonce: Option<Digest32>,
        via: Option<Address>,
    ) -> TxRecord {
        self.height += 1;
        let mut tx = TxRecord {
            tx_id: Digest32::ZERO,
            height: self.height,
            timestamp,
            kind,
            from,
            to,
            token,
            value,
            nonce,
            via,
        };
        tx.tx_id = tx.compute_id();
        self.tx_log.push(tx.clone());
        tx
    }

    pub fn deploy_token(
        &mut self,
        owner: Address,
        name: &str,
        symbol: &str,
        decimals: u8,
        mint: &[(Address, Amount)],
        now: u64,
    ) -> Result<Address, LedgerError> {
        let mut balances: BTreeMap<Address, Amount> = BTreeMap::new();
        let mut supply: Amount = 0;
        for (who, amount) in mint {
            let slot = balances.entry(*who).or_default();
            *slot = slot.checked_add(*amount).ok_or(LedgerError::Overflow)?;
            supply = supply.checked_add(*amount).ok_or(LedgerError::Overflow)?;
        }
        let addr = self.allocate_contract_address(&owner);
        let mut token = TokenContract {
            name: name.to_string(),
            symbol: symbol.to_string(),
            decimals,
            owner,
            total_supply: supply,
            balances: BTreeMap::new(),
            used_nonces: BTreeSet::new(),
        };
        for (who, amount) in balances {
            token.set_balance(who, amount);
        }
        self.tokens.insert(addr, token);
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

    /// Read-only EIP-3009 checks in order: signature, validity window, nonce,
    /// balance.
    pub fn check_transfer_authorization(
        &self,
        token: &Address,
        auth: &TransferAuthorization,
        sig: &Signature,
        now: u64,
    ) -> Result<(), LedgerError> {
        let contract = self
            .tokens
            .get(token)
            .ok_or(LedgerError::UnknownToken(*token))?;
        if !auth.is_well_formed() {
            return Err(LedgerError::MalformedAuthorization);
        }
        let separator = crypto::domain_separator(&self.token_domain(token)?);
        let digest = crypto::transfer_auth_digest(&separator, auth);
        match crypto::recover(&digest, sig) {
            Ok(signer) if signer == auth.from => {}
            _ => return Err(LedgerError::BadSignature),
        }
        if now <= auth.valid_after {
            return Err(LedgerError::AuthorizationNotYetValid);
        }
        if now >= auth.valid_before {
            return Err(LedgerError::AuthorizationExpired);
        }
        if contract.nonce_used(&auth.from, &auth.nonce) {
            return Err(LedgerError::NonceAlreadyUsed);
        }
        if contract.balance_of(&auth.from) < auth.value {
            return Err(LedgerError::InsufficientFunds);
        }
        Ok(())
    }

    /// Executes a signed transfer authorization submitted by `submitter`, who
    /// pays the flat settlement fee.
    pub fn transfer_with_authorization(
        &mut self,
        submitter: &Address,
        token: &Address,
        auth: &TransferAuthorization,
        sig: &Signature,
        now: u64,
    ) -> Result<TxRecord, LedgerError> {
        self.check_transfer_authorization(token, auth, sig, now)?;
        let fee = self.config.settlement_fee;
        let submitter_native = self.native_balance(submitter);
        if submitter_native < fee {
            return Err(LedgerError::InsufficientFeeBalance);
        }
        let contract = self.tokens.get(token).expect("checked above");
        let to_balance = contract
            .balance_of(&auth.to)
            .checked_add(auth.value)
            .ok_or(LedgerError::Overflow)?;

        if fee > 0 {
            self.debit_native(submitter, fee);
            self.fees_collected += fee;
        }
        let contract = self.tokens.get_mut(token).expect("checked above");
        let from_balance = contract.balance_of(&auth.from) - auth.value;
        contract.set_balance(auth.from, from_balance);
        // Recompute: `to` may equal `from`.
        let to_balance = if auth.to == auth.from {
            contract.balance_of(&auth.to) + auth.value
        } else {
            to_balance
        };
        contract.set_balance(auth.to, to_balance);
        contract.used_nonces.insert((auth.from, auth.nonce));
        let stamp = now.saturating_add(self.config.settlement_delay);
        Ok(self.append(
            TxKind::TokenTransfer,
            stamp,
            auth.from,
            auth.to,
            Some(*token),
            auth.value,
            Some(auth.nonce),
            None,
        ))
    }

    /// Plain token transfer authorized by the holder itself.
    pub fn transfer(
        &mut self,
        token: &Address,
        from: &Address,
        to: &Address,
        value: Amount,
        now: u64,
    ) -> Result<TxRecord, LedgerError> {
        let contract = self
            .tokens
            .get_mut(token)
            .ok_or(LedgerError::UnknownToken(*token))?;
        let from_balance = contract.balance_of(from);
        if from_balance < value {
            return Err(LedgerError::InsufficientFunds);
        }
        contract.set_balance(*from, from_balance - value);
        let to_balance = contract
            .balance_of(to)
            .checked_add(value)
            .ok_or(LedgerError::Overflow)?;
        contract.set_balance(*to, to_balance);
        Ok(self.append(
            TxKind::TokenTransfer,
            now,
            *from,
            *to,
            Some(*token),
            value,
            None,
            None,
        ))
    }

    fn debit_native(&mut self, who: &Address, amount: Amount) {
        if let Some(agent) = self.agents.get_mut(who) {
            agent.native_balance -= amount;
        } else if let Some(bal) = self.accounts.get_mut(who) {
            bal.0 -= amount;
        }
    }

    fn credit_native(&mut self, who: &Address, amount: Amount) -> Result<(), LedgerError> {
        let slot = match self.agents.get_mut(who) {
            Some(agent) => &mut agent.native_balance,
            None => &mut self.accounts.entry(*who).or_insert(DecimalAmount(0)).0,
        };
        *slot = slot.checked_add(amount).ok_or(LedgerError::Overflow)?;
        Ok(())
    }

    /// Native coin transfer. Paying an agent contract credits its native balance.
    pub fn transfer_native(
        &mut self,
        from: &Address,
        to: &Address,
        value: Amount,
        now: u64,
    ) -> Result<TxRecord, LedgerError> {
        if self.native_balance(from) < value {
            return Err(LedgerError::InsufficientFunds);
        }
        if self.native_balance(to).checked_add(value).is_none() {
            return Err(LedgerError::Overflow);
        }
        self.debit_native(from, value);
        self.credit_native(to, value)?;
        Ok(self.append(
            TxKind::TokenTransfer,
            now,
            *from,
            *to,
            None,
            value,
            None,
            None,
        ))
    }

    fn approved_tokens_for(&self, card: &AgentCard) -> BTreeSet<Address> {
        match card::extract_x402_params(card) {
            Ok(Some(ext)) if self.tokens.contains_key(&ext.asset) => BTreeSet::from([ext.asset]),
            _ => BTreeSet::new(),
        }
    }

    pub fn deploy_agent_contract(
        &mut self,
        owner: Address,
        card: AgentCard,
        now: u64,
    ) -> Result<Address, LedgerError> {
        self.deploy_agent_via(owner, card, now, None)
    }

    pub(crate) fn deploy_agent_via(
        &mut self,
        owner: Address,
        card: AgentCard,
        now: u64,
        factory: Option<Address>,
    ) -> Result<Address, LedgerError> {
        let violations = card::validate_card(&card);
        if !violations.is_empty() {
            return Err(LedgerError::InvalidCard(violations));
        }
        let addr = self.allocate_contract_address(&owner);
        let approved_tokens = self.approved_tokens_for(&card);
        self.agents.insert(
            addr,
            AgentContract {
                owner,
                card,
                active: true,
                last_heartbeat: now,
                native_balance: 0,
                approved_tokens,
                created_at: now,
                factory,
            },
        );
        self.append(
            TxKind::AgentDeploy,
            now,
            owner,
            addr,
            None,
            0,
            None,
            factory,
        );
        Ok(addr)
    }

    fn owned_agent(
        &self,
        agent: &Address,
        caller: &Address,
    ) -> Result<&AgentContract, LedgerError> {
        let contract = self
            .agents
            .get(agent)
            .ok_or(LedgerError::UnknownAgent(*agent))?;
        if contract.owner != *caller {
            return Err(LedgerError::NotOwner);
        }
        Ok(contract)
    }

    /// Replaces the card. A newly advertised x402 asset joins the approved
    /// token set; previously approved tokens stay approved.
    pub fn update_card(
        &mut self,
        agent: &Address,
        caller: &Address,
        card: AgentCard,
        now: u64,
    ) -> Result<TxRecord, LedgerError> {
        self.owned_agent(agent, caller)?;
        let violations = card::validate_card(&card);
        if !violations.is_empty() {
            return Err(LedgerError::InvalidCard(violations));
        }
        let extra = self.approved_tokens_for(&card);
        let contract = self.agents.get_mut(agent).expect("checked above");
        contract.card = card;
        contract.approved_tokens.extend(extra);
        Ok(self.append(
            TxKind::CardUpdate,
            now,
            *caller,
            *agent,
            None,
            0,
            None,
            None,
        ))
    }

    pub fn heartbeat(
        &mut self,
        agent: &Address,
        caller: &Address,
        now: u64,
    ) -> Result<TxRecord, LedgerError> {
        self.owned_agent(agent, caller)?;
        self.agents
            .get_mut(agent)
            .expect("checked above")
            .last_heartbeat = now;
        Ok(self.append(TxKind::Heartbeat, now, *caller, *agent, None, 0, None, None))
    }

    /// Timestamp of the most recent activity: heartbeat or any transaction
    /// touching the agent.
    pub fn last_activity(&self, agent: &Address) -> Result<u64, LedgerError> {
        let contract = self
            .agents
            .get(agent)
            .ok_or(LedgerError::UnknownAgent(*agent))?;
        let last_tx = self
            .tx_log
            .iter()
            .rev()
            .filter(|tx| tx.touches(agent))
            .map(|tx| tx.timestamp)
            .max()
            .unwrap_or(0);
        Ok(contract.last_heartbeat.max(last_tx))
    }

    pub fn is_active(&self, agent: &Address, now: u64, window: u64) -> Result<bool, LedgerError> {
        let last = self.last_activity(agent)?;
        let active = self.agents[agent].active;
        Ok(active && last >= now.saturating_sub(window))
    }

    /// Moves funds held by an agent contract. `token` absent means native coin.
    pub fn withdraw(
        &mut self,
        agent: &Address,
        caller: &Address,
        token: Option<&Address>,
        amount: Amount,
        to: &Address,
        now: u64,
    ) -> Result<TxRecord, LedgerError> {
        let contract = self.owned_agent(agent, caller)?;
        match token {
            None => {
                if contract.native_balance < amount {
                    return Err(LedgerError::InsufficientFunds);
                }
                if self.native_balance(to).checked_add(amount).is_none() {
                    return Err(LedgerError::Overflow);
                }
                self.debit_native(agent, amount);
                self.credit_native(to, amount)?;
            }
            Some(token) => {
                if !contract.approved_tokens.contains(token) {
                    return Err(LedgerError::TokenNotApproved(*token));
                }
                let t = self
                    .tokens
                    .get_mut(token)
                    .ok_or(LedgerError::UnknownToken(*token))?;
                let held = t.balance_of(agent);
                if held < amount {
                    return Err(LedgerError::InsufficientFunds);
                }
                let credited = t
                    .balance_of(to)
                    .checked_add(amount)
                    .ok_or(LedgerError::Overflow)?;
                t.set_balance(*agent, held - amount);
                let credited = if to == agent { held } else { credited };
                t.set_balance(*to, credited);
            }
        }
        Ok(self.append(
            TxKind::Withdrawal,
            now,
            *caller,
            *to,
            token.copied(),
            amount,
            None,
            Some(*agent),
        ))
    }

    pub fn query_tx_log(&self, filter: &TxFilter) -> Vec<TxRecord> {
        self.tx_log
            .iter()
            .filter(|tx| filter.matches(tx))
            .cloned()
            .collect()
    }

    pub fn find_tx(&self, tx_id: &Digest32) -> Option<&TxRecord> {
        self.tx_log.iter().find(|tx| tx.tx_id == *tx_id)
    }

    /// Canonical agent.json stored in the contract.
    pub fn agent_json(&self, agent: &Address) -> Result<String, LedgerError> {
        let contract = self
            .agents
            .get(agent)
            .ok_or(LedgerError::UnknownAgent(*agent))?;
        card::to_agent_json(&contract.card).map_err(|e| match e {
            card::CardError::Invalid(v) => LedgerError::InvalidCard(v),
            other => LedgerError::InvalidCard(vec![Violation::new("$", other.to_string())]),
        })
    }

    pub fn to_snapshot_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ledger state always serializes")
    }

    pub fn from_snapshot_json(text: &str) -> Result<LedgerState, LedgerError> {
        let state: LedgerState =
            serde_json::from_str(text).map_err(|e| LedgerError::Snapshot(e.to_string()))?;
        state.check_consistency()?;
        Ok(state)
    }

    /// Structural invariants a snapshot must satisfy.
    pub fn check_consistency(&self) -> Result<(), LedgerError> {
        for (addr, token) in &self.tokens {
            let sum = token
                .balances
                .values()
                .try_fold(0u128, |acc, b| acc.checked_add(b.0))
                .ok_or(LedgerError::Overflow)?;
            if sum != token.total_supply {
                return Err(LedgerError::Snapshot(format!(
                    "token {addr}: balances sum {sum} != total supply {}",
                    token.total_supply
                )));
            }
        }
        let mut seen = BTreeSet::new();
        let contract_addrs = self
            .tokens
            .keys()
            .chain(self.agents.keys())
            .chain(self.registries.keys())
            .chain(self.factories.keys());
        for addr in contract_addrs {
            if !seen.insert(*addr) {
                return Err(LedgerError::Snapshot(format!(
                    "contract address {addr} appears in more than one map"
                )));
            }
        }
        let mut ids = BTreeSet::new();
        for (i, tx) in self.tx_log.iter().enumerate() {
            if tx.height != i as u64 + 1 || tx.compute_id() != tx.tx_id || !ids.insert(tx.tx_id) {
                return Err(LedgerError::Snapshot(format!(
                    "tx log entry {i} is inconsistent"
                )));
            }
        }
        if self.height != self.tx_log.len() as u64 {
            return Err(LedgerError::Snapshot("height does not match tx log".into()));
        }
        Ok(())
    }
}

/// Shared handle to a ledger. Writes serialize through one lock; reads see a
/// consistent state.
#[derive(Debug, Clone)]
pub struct Ledger {
    inner: Arc<RwLock<LedgerState>>,
}

impl Ledger {
    pub fn new(state: LedgerState) -> Ledger {
        Ledger {
            inner: Arc::new(RwLock::new(state)),
        }
    }

    pub fn read<R>(&self, f: impl FnOnce(&LedgerState) -> R) -> R {
        f(&self.inner.read())
    }

    pub fn write<R>(&self, f: impl FnOnce(&mut LedgerState) -> R) -> R {
        f(&mut self.inner.write())
    }

    pub fn snapshot(&self) -> LedgerState {
        self.inner.read().clone()
    }
}
