//! The server agent: JSON-RPC endpoint for skills, the well-known card, and
//! x402 middleware in front of paid skills.
//!
//! Paid skills are pay-then-serve: the handler runs only after the facilitator
//! reports a successful settlement. A handler failure after settlement is
//! reported as a JSON-RPC error; the payment is not refunded.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use axum::Router;
use http::{header, Method, Request, Response, StatusCode};
use serde_json::Value;

use crate::card::{self, AgentCard, CardError, X402Params};
use crate::crypto::Address;
use crate::facilitator::PaymentFacilitator;
use crate::net;
use crate::protocol::{
    A2AResponse, Message, MessageSendParams, HANDLER_ERROR, INTERNAL_ERROR, INVALID_PARAMS,
    INVALID_REQUEST, JSONRPC_VERSION, METHOD_MESSAGE_SEND, METHOD_NOT_FOUND, PARSE_ERROR,
    UNSUPPORTED_OPERATION,
};
use crate::util::Clock;
use crate::wire::{self, PaymentRequirements, X_PAYMENT, X_PAYMENT_RESPONSE};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ServerError {
    #[error("unknown skill {0:?}")]
    UnknownSkill(String),
    #[error("paid skills require the card to carry a valid x402 extension")]
    MissingPaymentExtension,
    #[error(transparent)]
    Card(#[from] CardError),
}

/// What a skill handler sees.
#[derive(Debug, Clone)]
pub struct SkillCall {
    pub skill_id: String,
    pub message: Message,
    /// Set for paid skills after successful settlement.
    pub payer: Option<Address>,
}

pub type SkillHandler = Arc<dyn Fn(&SkillCall) -> Result<String, String> + Send + Sync>;

#[derive(Clone)]
pub struct ServerConfig {
    card: AgentCard,
    paid_skills: BTreeSet<String>,
    handlers: BTreeMap<String, SkillHandler>,
}

impl ServerConfig {
    pub fn new(card: AgentCard) -> Result<ServerConfig, ServerError> {
        let violations = card::validate_card(&card);
        if !violations.is_empty() {
            return Err(CardError::Invalid(violations).into());
        }
        Ok(ServerConfig {
            card,
            paid_skills: BTreeSet::new(),
            handlers: BTreeMap::new(),
        })
    }

    pub fn card(&self) -> &AgentCard {
        &self.card
    }

    pub fn paid_skills(&self) -> &BTreeSet<String> {
        &self.paid_skills
    }

    fn has_skill(&self, id: &str) -> bool {
        self.card.skills.iter().any(|s| s.id == id)
    }

    pub fn with_paid_skill(mut self, skill_id: &str) -> Result<ServerConfig, ServerError> {
        if !self.has_skill(skill_id) {
            return Err(ServerError::UnknownSkill(skill_id.into()));
        }
        if card::extract_x402_params(&self.card)?.is_none() {
            return Err(ServerError::MissingPaymentExtension);
        }
        self.paid_skills.insert(skill_id.into());
        Ok(self)
    }

    /// Installs or replaces the handler for a skill declared on the card.
    pub fn register_skill_handler<F>(
        &mut self,
        skill_id: &str,
        handler: F,
    ) -> Result<(), ServerError>
    where
        F: Fn(&SkillCall) -> Result<String, String> + Send + Sync + 'static,
    {
        if !self.has_skill(skill_id) {
            return Err(ServerError::UnknownSkill(skill_id.into()));
        }
        self.handlers.insert(skill_id.into(), Arc::new(handler));
        Ok(())
    }

    pub fn with_handler<F>(
        mut self,
        skill_id: &str,
        handler: F,
    ) -> Result<ServerConfig, ServerError>
    where
        F: Fn(&SkillCall) -> Result<String, String> + Send + Sync + 'static,
    {
        self.register_skill_handler(skill_id, handler)?;
        Ok(self)
    }
}

pub struct A2aServer {
    config: ServerConfig,
    card_json: String,
    payment: Option<X402Params>,
    facilitator: Arc<dyn PaymentFacilitator>,
}

fn json_response(status: StatusCode, body: String) -> Response<Vec<u8>> {
    Response::builder()
        .status(status)
        .header(header::CONTENT_TYPE, "application/json")
        .body(body.into_bytes())
        .expect("static response parts are valid")
}

fn rpc_response(status: StatusCode, resp: &A2AResponse) -> Response<Vec<u8>> {
    json_response(
        status,
        serde_json::to_string(resp).expect("responses serialize"),
    )
}

fn rpc_error(id: Value, code: i64, message: impl Into<String>) -> Response<Vec<u8>> {
    rpc_response(StatusCode::OK, &A2AResponse::error(id, code, message))
}

fn with_header(mut resp: Response<Vec<u8>>, name: &'static str, value: &str) -> Response<Vec<u8>> {
    if let Ok(v) = http::HeaderValue::from_str(value) {
        resp.headers_mut().insert(name, v);
    }
    resp
}

impl A2aServer {
    pub fn new(
        config: ServerConfig,
        facilitator: Arc<dyn PaymentFacilitator>,
    ) -> Result<A2aServer, ServerError> {
        let card_json = card::to_agent_json(&config.card)?;
        let payment = card::extract_x402_params(&config.card)?;
        if !config.paid_skills.is_empty() && payment.is_none() {
            return Err(ServerError::MissingPaymentExtension);
        }
        Ok(A2aServer {
            config,
            card_json,
            payment,
            facilitator,
        })
    }

    pub fn card(&self) -> &AgentCard {
        &self.config.card
    }

    pub fn card_json(&self) -> &str {
        &self.card_json
    }

    pub fn is_paid(&self, skill_id: &str) -> bool {
        self.config.paid_skills.contains(skill_id)
    }

    /// Requirements a client must satisfy to call `skill_id`.
    pub fn requirements_for(&self, skill_id: &str) -> Option<PaymentRequirements> {
        let params = self.payment.as_ref()?;
        Some(wire::build_payment_requirements(
            params,
            &wire::resource_for(&self.config.card.url, skill_id),
        ))
    }

    pub fn serve_well_known_card(&self) -> Response<Vec<u8>> {
        json_response(StatusCode::OK, self.card_json.clone())
    }

    pub fn handle(&self, req: &Request<Vec<u8>>, now: u64) -> Response<Vec<u8>> {
        let path = req.uri().path();
        match *req.method() {
            Method::GET if path == card::WELL_KNOWN_PATH => self.serve_well_known_card(),
            Method::POST if path != card::WELL_KNOWN_PATH => self.handle_a2a(req, now),
            _ => Response::builder()
                .status(StatusCode::NOT_FOUND)
                .body(Vec::new())
                .expect("static response parts are valid"),
        }
    }

    pub fn handle_a2a(&self, req: &Request<Vec<u8>>, now: u64) -> Response<Vec<u8>> {
        let value: Value = match serde_json::from_slice(req.body()) {
            Ok(v) => v,
            Err(e) => return rpc_error(Value::Null, PARSE_ERROR, format!("parse error: {e}")),
        };
        let id = value.get("id").cloned().unwrap_or(Value::Null);
        let well_formed = value.get("jsonrpc").and_then(Value::as_str) == Some(JSONRPC_VERSION)
            && matches!(id, Value::Number(_) | Value::String(_))
            && value.get("method").map(Value::is_string).unwrap_or(false);
        if !well_formed {
            return rpc_error(id, INVALID_REQUEST, "invalid JSON-RPC 2.0 request");
        }
        let method = value["method"].as_str().unwrap_or_default();
        if method != METHOD_MESSAGE_SEND {
            return rpc_error(id, METHOD_NOT_FOUND, format!("method not found: {method}"));
        }
        let params: MessageSendParams =
            match serde_json::from_value(value.get("params").cloned().unwrap_or(Value::Null)) {
                Ok(p) => p,
                Err(e) => return rpc_error(id, INVALID_PARAMS, format!("invalid params: {e}")),
            };
        let skill_id = match &params.skill_id {
            Some(s) => s.clone(),
            None => self.config.card.skills[0].id.clone(),
        };
        if !self.config.has_skill(&skill_id) {
            return rpc_error(id, INVALID_PARAMS, format!("unknown skill {skill_id:?}"));
        }
        let Some(handler) = self.config.handlers.get(&skill_id).cloned() else {
            return rpc_error(
                id,
                UNSUPPORTED_OPERATION,
                format!("skill {skill_id:?} has no handler"),
            );
        };

        let mut call = SkillCall {
            skill_id: skill_id.clone(),
            message: params.message,
            payer: None,
        };
        if !self.is_paid(&skill_id) {
            return dispatch(&handler, &call, id);
        }

        let reqs = self
            .requirements_for(&skill_id)
            .expect("paid skills imply a payment extension");
        let Some(header_value) = req.headers().get(X_PAYMENT) else {
            return json_response(StatusCode::PAYMENT_REQUIRED, wire::encode_402_body(&reqs));
        };
        let payload = match header_value
            .to_str()
            .map_err(|_| wire::WireError::NotBase64)
            .and_then(wire::decode_payment_header)
        {
            Ok(p) => p,
            Err(e) => {
                return json_response(
                    StatusCode::PAYMENT_REQUIRED,
                    wire::encode_402_body(&reqs.with_error(e.code())),
                )
            }
        };

        let receipt = match self.facilitator.verify(&payload, &reqs, now) {
            Ok(v) if !v.valid => {
                let reason = v.reason.map(|r| r.as_str()).unwrap_or("Invalid");
                wire::SettlementReceipt::failure(
                    reason,
                    reqs.network.clone(),
                    payload.authorization.from,
                )
            }
            Ok(_) => match self.facilitator.settle(&payload, &reqs, now) {
                Ok(r) => r,
                Err(e) => return facilitator_down(id, e),
            },
            Err(e) => return facilitator_down(id, e),
        };
        let receipt_header = wire::encode_settlement_header(&receipt)
            .expect("facilitator receipts satisfy their invariants");
        if !receipt.success {
            let reason = receipt.error_reason.clone().unwrap_or_default();
            let resp = json_response(
                StatusCode::PAYMENT_REQUIRED,
                wire::encode_402_body(&reqs.with_error(reason)),
            );
            return with_header(resp, X_PAYMENT_RESPONSE, &receipt_header);
        }
        call.payer = Some(receipt.payer);
        with_header(
            dispatch(&handler, &call, id),
            X_PAYMENT_RESPONSE,
            &receipt_header,
        )
    }
}

fn facilitator_down(id: Value, e: crate::facilitator::FacilitatorError) -> Response<Vec<u8>> {
    rpc_response(
        StatusCode::BAD_GATEWAY,
        &A2AResponse::error(id, INTERNAL_ERROR, format!("payment facilitator: {e}")),
    )
}

fn dispatch(handler: &SkillHandler, call: &SkillCall, id: Value) -> Response<Vec<u8>> {
    match catch_unwind(AssertUnwindSafe(|| handler(call))) {
        Ok(Ok(text)) => rpc_response(
            StatusCode::OK,
            &A2AResponse::result(id, Message::agent(text)),
        ),
        Ok(Err(msg)) => rpc_error(id, HANDLER_ERROR, msg),
        Err(_) => rpc_error(id, HANDLER_ERROR, "skill handler panicked"),
    }
}

/// HTTP adapter for an [`A2aServer`].
pub fn router(server: Arc<A2aServer>, clock: Clock) -> Router {
    Router::new().fallback(move |req: axum::extract::Request| {
        let server = server.clone();
        let clock = clock.clone();
        async move {
            let req = net::collect_request(req).await;
            let now = clock.now();
            // The facilitator may be a blocking HTTP client.
            let resp = tokio::task::spawn_blocking(move || server.handle(&req, now))
                .await
                .unwrap_or_else(|_| {
                    rpc_response(
                        StatusCode::INTERNAL_SERVER_ERROR,
                        &A2AResponse::error(Value::Null, INTERNAL_ERROR, "internal error"),
                    )
                });
            net::into_axum_response(resp)
        }
    })
}
