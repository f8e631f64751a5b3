//! The client agent: card discovery, payment construction and paid A2A calls.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use http::{header, Request, Response, StatusCode};
use parking_lot::Mutex;
use rand::rngs::StdRng;
use rand::{RngCore, SeedableRng};

use crate::card::{self, AgentCard, CardError};
use crate::crypto::{self, Address, CryptoError, Digest32, PrivateKey};
use crate::ledger::{Amount, Ledger, LedgerError};
use crate::protocol::{A2ARequest, A2AResponse};
use crate::server::A2aServer;
use crate::util::Clock;
use crate::wire::{
    self, PaymentRequirements, SettlementReceipt, SignedPaymentPayload, WireError, SCHEME_EXACT,
    X402_VERSION, X_PAYMENT, X_PAYMENT_RESPONSE,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("unexpected HTTP status {0}")]
    Status(u16),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClientError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Card(#[from] CardError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("payment rejected: {}", .reason.as_deref().unwrap_or("unknown reason"))]
    PaymentRejected {
        reason: Option<String>,
        receipt: Option<Box<SettlementReceipt>>,
    },
    #[error("insufficient funds: balance {balance}, required {required}")]
    InsufficientFunds { balance: Amount, required: Amount },
    #[error("requirements ask for {required}, above the spend cap {cap}")]
    OverBudget { required: Amount, cap: Amount },
    #[error("card does not advertise x402 payment parameters")]
    NotPayable,
    #[error("protocol violation: {0}")]
    Protocol(String),
}

/// One HTTP exchange.
pub trait Transport: Send + Sync {
    fn send(&self, req: Request<Vec<u8>>) -> Result<Response<Vec<u8>>, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn send(&self, req: Request<Vec<u8>>) -> Result<Response<Vec<u8>>, TransportError> {
        (**self).send(req)
    }
}

/// Blocking HTTP transport. Must not be called from inside an async runtime.
#[derive(Debug, Clone, Default)]
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> HttpTransport {
        HttpTransport::default()
    }
}

impl Transport for HttpTransport {
    fn send(&self, req: Request<Vec<u8>>) -> Result<Response<Vec<u8>>, TransportError> {
        let req = reqwest::blocking::Request::try_from(req)
            .map_err(|e| TransportError::Connect(e.to_string()))?;
        let resp = self
            .client
            .execute(req)
            .map_err(|e| TransportError::Connect(e.to_string()))?;
        let mut builder = Response::builder().status(resp.status().as_u16());
        for (name, value) in resp.headers() {
            builder = builder.header(name.as_str(), value.as_bytes());
        }
        let body = resp
            .bytes()
            .map_err(|e| TransportError::Connect(e.to_string()))?;
        builder
            .body(body.to_vec())
            .map_err(|e| TransportError::Connect(e.to_string()))
    }
}

/// Calls a server directly, bypassing the network.
pub struct InProcessTransport {
    server: Arc<A2aServer>,
    clock: Clock,
}

impl InProcessTransport {
    pub fn new(server: Arc<A2aServer>, clock: Clock) -> InProcessTransport {
        InProcessTransport { server, clock }
    }
}

impl Transport for InProcessTransport {
    fn send(&self, req: Request<Vec<u8>>) -> Result<Response<Vec<u8>>, TransportError> {
        Ok(self.server.handle(&req, self.clock.now()))
    }
}

/// Counts round trips through an inner transport.
pub struct CountingTransport<T> {
    inner: T,
    count: AtomicUsize,
}

impl<T: Transport> CountingTransport<T> {
    pub fn new(inner: T) -> CountingTransport<T> {
        CountingTransport {
            inner,
            count: AtomicUsize::new(0),
        }
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.count.store(0, Ordering::SeqCst);
    }
}

impl<T: Transport> Transport for CountingTransport<T> {
    fn send(&self, req: Request<Vec<u8>>) -> Result<Response<Vec<u8>>, TransportError> {
        self.count.fetch_add(1, Ordering::SeqCst);
        self.inner.send(req)
    }
}

/// GET `{base_url}/.well-known/agent.json`.
pub fn discover_by_url<T: Transport + ?Sized>(
    transport: &T,
    base_url: &str,
) -> Result<AgentCard, ClientError> {
    let url = format!(
        "{}{}",
        base_url.trim_end_matches('/'),
        card::WELL_KNOWN_PATH
    );
    let req = Request::get(url)
        .body(Vec::new())
        .map_err(|e| TransportError::Connect(e.to_string()))?;
    let resp = transport.send(req)?;
    if resp.status() != StatusCode::OK {
        return Err(TransportError::Status(resp.status().as_u16()).into());
    }
    let text = String::from_utf8(resp.into_body()).map_err(|e| CardError::Parse(e.to_string()))?;
    Ok(card::parse_agent_json(&text)?)
}

/// Reads the card stored in an agent contract.
pub fn discover_by_contract(ledger: &Ledger, agent: &Address) -> Result<AgentCard, ClientError> {
    let text = ledger.read(|s| s.agent_json(agent))?;
    Ok(card::parse_agent_json(&text)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaymentMode {
    /// Call unpaid, pay after a 402.
    Reactive,
    /// Pay up front from the card's advertised parameters.
    Proactive,
}

#[derive(Clone)]
pub struct Wallet {
    key: PrivateKey,
    address: Address,
}

impl Wallet {
    pub fn new(key: PrivateKey) -> Wallet {
        let address = key.address();
        Wallet { key, address }
    }

    pub fn address(&self) -> Address {
        self.address
    }
}

impl std::fmt::Debug for Wallet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Wallet({})", self.address)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaidResponse {
    pub response: A2AResponse,
    pub receipt: Option<SettlementReceipt>,
    /// HTTP round trips used by this call.
    pub round_trips: usize,
}

/// Outcome of a single request.
#[derive(Debug, Clone)]
pub enum Exchange {
    Completed {
        response: A2AResponse,
        receipt: Option<SettlementReceipt>,
    },
    PaymentRequired {
        requirements: PaymentRequirements,
        receipt: Option<SettlementReceipt>,
    },
}

pub struct A2aClient<T> {
    transport: T,
    wallet: Wallet,
    max_spend: Option<Amount>,
    preflight: Option<Ledger>,
    rng: Mutex<StdRng>,
    next_id: AtomicU64,
}

impl<T: Transport> A2aClient<T> {
    pub fn new(transport: T, wallet: Wallet) -> A2aClient<T> {
        A2aClient {
            transport,
            wallet,
            max_spend: None,
            preflight: None,
            rng: Mutex::new(StdRng::from_entropy()),
            next_id: AtomicU64::new(1),
        }
    }

    /// Deterministic nonces for reproducible runs.
    pub fn with_seed(mut self, seed: u64) -> A2aClient<T> {
        self.rng = Mutex::new(StdRng::seed_from_u64(seed));
        self
    }

    /// Refuse requirements asking for more than `cap` base units.
    pub fn with_max_spend(mut self, cap: Amount) -> A2aClient<T> {
        self.max_spend = Some(cap);
        self
    }

    /// Check the payer's token balance on `ledger` before signing.
    pub fn with_preflight(mut self, ledger: Ledger) -> A2aClient<T> {
        self.preflight = Some(ledger);
        self
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn wallet(&self) -> &Wallet {
        &self.wallet
    }

    pub fn fresh_nonce(&self) -> Digest32 {
        let mut out = [0u8; 32];
        self.rng.lock().fill_bytes(&mut out);
        Digest32(out)
    }

    /// Builds and signs an authorization paying `reqs` exactly. The token
    /// domain is (token name, "1", chain id, token address); `token_name` is
    /// the EIP-712 domain name of `reqs.asset`.
    pub fn sign_payment(
        &self,
        reqs: &PaymentRequirements,
        token_name: &str,
        chain_id: u64,
        now: u64,
    ) -> Result<SignedPaymentPayload, ClientError> {
        if let Some(cap) = self.max_spend {
            if reqs.max_amount_required > cap {
                return Err(ClientError::OverBudget {
                    required: reqs.max_amount_required,
                    cap,
                });
            }
        }
        if let Some(ledger) = &self.preflight {
            let balance = ledger.read(|s| s.balance_of(&reqs.asset, &self.wallet.address))?;
            if balance < reqs.max_amount_required {
                return Err(ClientError::InsufficientFunds {
                    balance,
                    required: reqs.max_amount_required,
                });
            }
        }
        let nonce = reqs.nonce.unwrap_or_else(|| self.fresh_nonce());
        let auth = wire::build_authorization(
            reqs,
            self.wallet.address,
            now,
            reqs.max_timeout_seconds.max(1),
            nonce,
        );
        let domain = crypto::Eip712Domain {
            name: token_name.to_string(),
            version: crate::ledger::TOKEN_DOMAIN_VERSION.to_string(),
            chain_id,
            verifying_contract: reqs.asset,
        };
        let digest = crypto::transfer_auth_digest(&crypto::domain_separator(&domain), &auth);
        let signature = crypto::sign(&digest, &self.wallet.key)?;
        Ok(SignedPaymentPayload {
            x402_version: X402_VERSION,
            scheme: SCHEME_EXACT.to_string(),
            network: reqs.network.clone(),
            authorization: auth,
            signature,
        })
    }

    /// One POST of a `message/send` request, optionally carrying a payment.
    pub fn send_message(
        &self,
        endpoint: &str,
        skill_id: &str,
        message: &str,
        payment: Option<&SignedPaymentPayload>,
    ) -> Result<Exchange, ClientError> {
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let body = serde_json::to_vec(&A2ARequest::message_send(id, skill_id, message))
            .expect("requests serialize");
        let mut builder = Request::post(endpoint).header(header::CONTENT_TYPE, "application/json");
        if let Some(p) = payment {
            builder = builder.header(X_PAYMENT, wire::encode_payment_header(p));
        }
        let req = builder
            .body(body)
            .map_err(|e| TransportError::Connect(e.to_string()))?;
        let resp = self.transport.send(req)?;
        let receipt = resp
            .headers()
            .get(X_PAYMENT_RESPONSE)
            .map(|v| {
                v.to_str()
                    .map_err(|_| WireError::NotBase64)
                    .and_then(wire::decode_settlement_header)
            })
            .transpose()?;
        match resp.status() {
            StatusCode::OK => {
                let response: A2AResponse = serde_json::from_slice(resp.body())
                    .map_err(|e| ClientError::Protocol(format!("bad JSON-RPC body: {e}")))?;
                Ok(Exchange::Completed { response, receipt })
            }
            StatusCode::PAYMENT_REQUIRED => {
                let text = std::str::from_utf8(resp.body())
                    .map_err(|e| ClientError::Protocol(e.to_string()))?;
                Ok(Exchange::PaymentRequired {
                    requirements: wire::decode_402_body(text)?,
                    receipt,
                })
            }
            other => Err(TransportError::Status(other.as_u16()).into()),
        }
    }

    /// Full paid call. The token's EIP-712 domain name and chain id come from
    /// `domain`; see [`PaymentDomain`].
    pub fn paid_send(
        &self,
        card: &AgentCard,
        skill_id: &str,
        message: &str,
        domain: &PaymentDomain,
        now: u64,
        mode: PaymentMode,
    ) -> Result<PaidResponse, ClientError> {
        let endpoint = card.url.as_str();
        let mut round_trips = 0;
        let payment = match mode {
            PaymentMode::Reactive => {
                round_trips += 1;
                match self.send_message(endpoint, skill_id, message, None)? {
                    Exchange::Completed { response, receipt } => {
                        return Ok(PaidResponse {
                            response,
                            receipt,
                            round_trips,
                        })
                    }
                    Exchange::PaymentRequired { requirements, .. } => {
                        self.sign_payment(&requirements, &domain.token_name, domain.chain_id, now)?
                    }
                }
            }
            PaymentMode::Proactive => {
                let params = card::extract_x402_params(card)?.ok_or(ClientError::NotPayable)?;
                let reqs = wire::build_payment_requirements(
                    &params,
                    &wire::resource_for(&card.url, skill_id),
                );
                self.sign_payment(&reqs, &domain.token_name, domain.chain_id, now)?
            }
        };
        round_trips += 1;
        match self.send_message(endpoint, skill_id, message, Some(&payment))? {
            Exchange::Completed { response, receipt } => Ok(PaidResponse {
                response,
                receipt,
                round_trips,
            }),
            Exchange::PaymentRequired {
                requirements,
                receipt,
            } => Err(ClientError::PaymentRejected {
                reason: receipt
                    .as_ref()
                    .and_then(|r| r.error_reason.clone())
                    .or(requirements.error),
                receipt: receipt.map(Box::new),
            }),
        }
    }
}

/// EIP-712 domain inputs for the payment token that are not on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaymentDomain {
    pub token_name: String,
    pub chain_id: u64,
}

impl PaymentDomain {
    /// Looks the token name up on the ledger.
    pub fn from_ledger(ledger: &Ledger, token: &Address) -> Result<PaymentDomain, LedgerError> {
        ledger.read(|s| {
            let d = s.token_domain(token)?;
            Ok(PaymentDomain {
                token_name: d.name,
                chain_id: d.chain_id,
            })
        })
    }
}
