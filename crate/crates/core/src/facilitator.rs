//! Payment verification and settlement against the ledger.
//!
//! Verification order is fixed: network, asset, payee, amount, signature,
//! validity window, nonce, balance. The first failing check is reported.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::crypto::Address;
use crate::ledger::{Ledger, LedgerError, LedgerState};
use crate::util::Clock;
use crate::wire::{self, PaymentRequirements, SettlementReceipt, SignedPaymentPayload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerifyReason {
    BadSignature,
    Expired,
    NotYetValid,
    NonceUsed,
    InsufficientFunds,
    WrongPayee,
    AmountTooLow,
    WrongNetwork,
    WrongAsset,
}

impl VerifyReason {
    pub const ALL: [VerifyReason; 9] = [
        VerifyReason::BadSignature,
        VerifyReason::Expired,
        VerifyReason::NotYetValid,
        VerifyReason::NonceUsed,
        VerifyReason::InsufficientFunds,
        VerifyReason::WrongPayee,
        VerifyReason::AmountTooLow,
        VerifyReason::WrongNetwork,
        VerifyReason::WrongAsset,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VerifyReason::BadSignature => "BadSignature",
            VerifyReason::Expired => "Expired",
            VerifyReason::NotYetValid => "NotYetValid",
            VerifyReason::NonceUsed => "NonceUsed",
            VerifyReason::InsufficientFunds => "InsufficientFunds",
            VerifyReason::WrongPayee => "WrongPayee",
            VerifyReason::AmountTooLow => "AmountTooLow",
            VerifyReason::WrongNetwork => "WrongNetwork",
            VerifyReason::WrongAsset => "WrongAsset",
        }
    }

    fn from_ledger(err: &LedgerError) -> VerifyReason {
        match err {
            LedgerError::AuthorizationExpired => VerifyReason::Expired,
            LedgerError::AuthorizationNotYetValid => VerifyReason::NotYetValid,
            LedgerError::NonceAlreadyUsed => VerifyReason::NonceUsed,
            LedgerError::InsufficientFunds => VerifyReason::InsufficientFunds,
            LedgerError::UnknownToken(_) => VerifyReason::WrongAsset,
            _ => VerifyReason::BadSignature,
        }
    }
}

impl fmt::Display for VerifyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VerifyReason {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VerifyReason::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyResult {
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<VerifyReason>,
}

impl VerifyResult {
    pub const VALID: VerifyResult = VerifyResult {
        valid: true,
        reason: None,
    };

    pub fn invalid(reason: VerifyReason) -> VerifyResult {
        VerifyResult {
            valid: false,
            reason: Some(reason),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FacilitatorError {
    #[error("ledger unavailable: {0}")]
    LedgerUnavailable(String),
    #[error("facilitator rejected request: {0}")]
    BadRequest(String),
}

/// What the x402 middleware needs from a facilitator.
pub trait PaymentFacilitator: Send + Sync {
    fn verify(
        &self,
        payload: &SignedPaymentPayload,
        reqs: &PaymentRequirements,
        now: u64,
    ) -> Result<VerifyResult, FacilitatorError>;

    fn settle(
        &self,
        payload: &SignedPaymentPayload,
        reqs: &PaymentRequirements,
        now: u64,
    ) -> Result<SettlementReceipt, FacilitatorError>;
}

/// Read-only verification against a ledger state.
pub fn verify_against(
    state: &LedgerState,
    payload: &SignedPaymentPayload,
    reqs: &PaymentRequirements,
    now: u64,
) -> VerifyResult {
    let auth = &payload.authorization;
    if payload.network != reqs.network || reqs.network != state.network() {
        return VerifyResult::invalid(VerifyReason::WrongNetwork);
    }
    if state.token(&reqs.asset).is_none() {
        return VerifyResult::invalid(VerifyReason::WrongAsset);
    }
    if auth.to != reqs.pay_to {
        return VerifyResult::invalid(VerifyReason::WrongPayee);
    }
    if auth.value < reqs.max_amount_required {
        return VerifyResult::invalid(VerifyReason::AmountTooLow);
    }
    match state.check_transfer_authorization(&reqs.asset, auth, &payload.signature, now) {
        Ok(()) => VerifyResult::VALID,
        Err(e) => VerifyResult::invalid(VerifyReason::from_ledger(&e)),
    }
}

/// Stateless facilitator linked against a ledger handle. `account` submits
/// settlements and pays the settlement fee.
#[derive(Debug, Clone)]
pub struct Facilitator {
    ledger: Ledger,
    account: Address,
}

impl Facilitator {
    pub fn new(ledger: Ledger, account: Address) -> Facilitator {
        Facilitator { ledger, account }
    }

    pub fn account(&self) -> Address {
        self.account
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }
}

impl PaymentFacilitator for Facilitator {
    fn verify(
        &self,
        payload: &SignedPaymentPayload,
        reqs: &PaymentRequirements,
        now: u64,
    ) -> Result<VerifyResult, FacilitatorError> {
        Ok(self
            .ledger
            .read(|state| verify_against(state, payload, reqs, now)))
    }

    fn settle(
        &self,
        payload: &SignedPaymentPayload,
        reqs: &PaymentRequirements,
        now: u64,
    ) -> Result<SettlementReceipt, FacilitatorError> {
        let payer = payload.authorization.from;
        let network = reqs.network.clone();
        // Verify and execute under one write lock so nothing can interleave.
        Ok(self.ledger.write(|state| {
            let verdict = verify_against(state, payload, reqs, now);
            if let Some(reason) = verdict.reason {
                return SettlementReceipt::failure(reason.as_str(), network, payer);
            }
            match state.transfer_with_authorization(
                &self.account,
                &reqs.asset,
                &payload.authorization,
                &payload.signature,
                now,
            ) {
                Ok(tx) => SettlementReceipt::success(tx.tx_id, network, payer),
                Err(LedgerError::InsufficientFeeBalance) => {
                    SettlementReceipt::failure("FacilitatorCannotPayFee", network, payer)
                }
                Err(e) => SettlementReceipt::failure(
                    VerifyReason::from_ledger(&e).as_str(),
                    network,
                    payer,
                ),
            }
        }))
    }
}

impl<F: PaymentFacilitator + ?Sized> PaymentFacilitator for Arc<F> {
    fn verify(
        &self,
        payload: &SignedPaymentPayload,
        reqs: &PaymentRequirements,
        now: u64,
    ) -> Result<VerifyResult, FacilitatorError> {
        (**self).verify(payload, reqs, now)
    }

    fn settle(
        &self,
        payload: &SignedPaymentPayload,
        reqs: &PaymentRequirements,
        now: u64,
    ) -> Result<SettlementReceipt, FacilitatorError> {
        (**self).settle(payload, reqs, now)
    }
}

/// Body of `POST /verify` and `POST /settle`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FacilitatorRequest {
    /// The base64 `X-PAYMENT` header value.
    pub payment_payload: String,
    pub payment_requirements: PaymentRequirements,
}

#[derive(Clone)]
struct ServiceState {
    facilitator: Arc<dyn PaymentFacilitator>,
    clock: Clock,
}

type ApiError = (StatusCode, Json<serde_json::Value>);

fn bad_request(msg: String) -> ApiError {
    (
        StatusCode::BAD_REQUEST,
        Json(serde_json::json!({ "error": msg })),
    )
}

fn decode_request(req: &FacilitatorRequest) -> Result<SignedPaymentPayload, ApiError> {
    wire::decode_payment_header(&req.payment_payload).map_err(|e| bad_request(e.to_string()))
}

async fn verify_handler(
    State(svc): State<ServiceState>,
    Json(req): Json<FacilitatorRequest>,
) -> Result<Json<VerifyResult>, ApiError> {
    let payload = decode_request(&req)?;
    let now = svc.clock.now();
    tokio::task::spawn_blocking(move || {
        svc.facilitator
            .verify(&payload, &req.payment_requirements, now)
    })
    .await
    .map_err(|e| bad_request(e.to_string()))?
    .map(Json)
    .map_err(|e| bad_request(e.to_string()))
}

async fn settle_handler(
    State(svc): State<ServiceState>,
    Json(req): Json<FacilitatorRequest>,
) -> Result<Json<SettlementReceipt>, ApiError> {
    let payload = decode_request(&req)?;
    let now = svc.clock.now();
    tokio::task::spawn_blocking(move || {
        svc.facilitator
            .settle(&payload, &req.payment_requirements, now)
    })
    .await
    .map_err(|e| bad_request(e.to_string()))?
    .map(Json)
    .map_err(|e| bad_request(e.to_string()))
}

/// HTTP surface: `POST /verify` and `POST /settle`.
pub fn router(facilitator: Arc<dyn PaymentFacilitator>, clock: Clock) -> Router {
    Router::new()
        .route("/verify", post(verify_handler))
        .route("/settle", post(settle_handler))
        .with_state(ServiceState { facilitator, clock })
}

/// Facilitator reached over HTTP. Uses its own clock; the `now` argument is
/// ignored.
#[derive(Debug, Clone)]
pub struct RemoteFacilitator {
    base_url: String,
    client: reqwest::blocking::Client,
}

impl RemoteFacilitator {
    pub fn new(base_url: &str) -> RemoteFacilitator {
        RemoteFacilitator {
            base_url: base_url.trim_end_matches('/').to_string(),
            client: reqwest::blocking::Client::new(),
        }
    }

    fn call<T: serde::de::DeserializeOwned>(
        &self,
        path: &str,
        payload: &SignedPaymentPayload,
        reqs: &PaymentRequirements,
    ) -> Result<T, FacilitatorError> {
        let body = FacilitatorRequest {
            payment_payload: wire::encode_payment_header(payload),
            payment_requirements: reqs.clone(),
        };
        let resp = self
            .client
            .post(format!("{}{}", self.base_url, path))
            .json(&body)
            .send()
            .map_err(|e| FacilitatorError::LedgerUnavailable(e.to_string()))?;
        if resp.status() == reqwest::StatusCode::BAD_REQUEST {
            return Err(FacilitatorError::BadRequest(
                resp.text().unwrap_or_default(),
            ));
        }
        if !resp.status().is_success() {
            return Err(FacilitatorError::LedgerUnavailable(format!(
                "facilitator returned {}",
                resp.status()
            )));
        }
        resp.json()
            .map_err(|e| FacilitatorError::LedgerUnavailable(e.to_string()))
    }
}

impl PaymentFacilitator for RemoteFacilitator {
    fn verify(
        &self,
        payload: &SignedPaymentPayload,
        reqs: &PaymentRequirements,
        _now: u64,
    ) -> Result<VerifyResult, FacilitatorError> {
        self.call("/verify", payload, reqs)
    }

    fn settle(
        &self,
        payload: &SignedPaymentPayload,
        reqs: &PaymentRequirements,
        _now: u64,
    ) -> Result<SettlementReceipt, FacilitatorError> {
        self.call("/settle", payload, reqs)
    }
}
