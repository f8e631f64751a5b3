//! x402 wire formats: 402 bodies, the `X-PAYMENT` request header and the
//! `X-PAYMENT-RESPONSE` settlement header.

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::card::X402Params;
use crate::crypto::{Address, Digest32, Signature};
use crate::ledger::{Amount, TransferAuthorization};
use crate::util::decimal;

pub const X402_VERSION: u32 = 1;
pub const SCHEME_EXACT: &str = "exact";
pub const X_PAYMENT: &str = "X-PAYMENT";
pub const X_PAYMENT_RESPONSE: &str = "X-PAYMENT-RESPONSE";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("header value is not base64")]
    NotBase64,
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("unsupported scheme {0:?}")]
    UnsupportedScheme(String),
    #[error("unsupported x402 version {0}")]
    UnsupportedVersion(u32),
    #[error("receipt violates its invariants: {0}")]
    InvalidReceipt(&'static str),
}

impl WireError {
    pub fn code(&self) -> &'static str {
        match self {
            WireError::NotBase64 => "NotBase64",
            WireError::MalformedPayload(_) => "MalformedPayload",
            WireError::UnsupportedScheme(_) => "UnsupportedScheme",
            WireError::UnsupportedVersion(_) => "UnsupportedVersion",
            WireError::InvalidReceipt(_) => "InvalidReceipt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PaymentRequirements {
    pub x402_version: u32,
    pub scheme: String,
    pub network: String,
    pub asset: Address,
    pub pay_to: Address,
    #[serde(with = "decimal")]
    pub max_amount_required: Amount,
    pub resource: String,
    pub description: String,
    pub max_timeout_seconds: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonce: Option<Digest32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PaymentRequirements {
    pub fn with_error(mut self, error: impl Into<String>) -> PaymentRequirements {
        self.error = Some(error.into());
        self
    }
}

/// JSON body of an HTTP 402 response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PaymentRequiredBody {
    pub x402_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub accepts: Vec<PaymentRequirements>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SignedPaymentPayload {
    pub x402_version: u32,
    pub scheme: String,
    pub network: String,
    pub authorization: TransferAuthorization,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SettlementReceipt {
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx_id: Option<Digest32>,
    pub network: String,
    pub payer: Address,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_reason: Option<String>,
}

impl SettlementReceipt {
    pub fn success(tx_id: Digest32, network: String, payer: Address) -> SettlementReceipt {
        SettlementReceipt {
            success: true,
            tx_id: Some(tx_id),
            network,
            payer,
            error_reason: None,
        }
    }

    pub fn failure(
        reason: impl Into<String>,
        network: String,
        payer: Address,
    ) -> SettlementReceipt {
        SettlementReceipt {
            success: false,
            tx_id: None,
            network,
            payer,
            error_reason: Some(reason.into()),
        }
    }

    pub fn check(&self) -> Result<(), WireError> {
        match (self.success, &self.tx_id, &self.error_reason) {
            (true, None, _) => Err(WireError::InvalidReceipt("success requires txId")),
            (false, _, None) => Err(WireError::InvalidReceipt("failure requires errorReason")),
            _ => Ok(()),
        }
    }
}

/// Resource identifier for a skill served at `endpoint`.
pub fn resource_for(endpoint: &str, skill_id: &str) -> String {
    format!("{}#{}", endpoint.trim_end_matches('/'), skill_id)
}

pub fn build_payment_requirements(ext: &X402Params, resource_url: &str) -> PaymentRequirements {
    PaymentRequirements {
        x402_version: X402_VERSION,
        scheme: SCHEME_EXACT.to_string(),
        network: ext.network.clone(),
        asset: ext.asset,
        pay_to: ext.pay_to,
        max_amount_required: ext.amount_units().unwrap_or(0),
        resource: resource_url.to_string(),
        description: ext.description.clone(),
        max_timeout_seconds: ext.max_timeout_seconds,
        nonce: None,
        error: None,
    }
}

pub fn encode_402_body(reqs: &PaymentRequirements) -> String {
    let mut accepted = reqs.clone();
    let error = accepted.error.take();
    let body = PaymentRequiredBody {
        x402_version: reqs.x402_version,
        error,
        accepts: vec![accepted],
    };
    serde_json::to_string(&body).expect("402 body serializes")
}

/// Inverse of [`encode_402_body`]: the first accepted requirements, carrying
/// the body-level error if any.
pub fn decode_402_body(text: &str) -> Result<PaymentRequirements, WireError> {
    let body: PaymentRequiredBody =
        serde_json::from_str(text).map_err(|e| WireError::MalformedPayload(e.to_string()))?;
    let mut reqs = body
        .accepts
        .into_iter()
        .next()
        .ok_or_else(|| WireError::MalformedPayload("accepts is empty".into()))?;
    if reqs.scheme != SCHEME_EXACT {
        return Err(WireError::UnsupportedScheme(reqs.scheme));
    }
    reqs.error = body.error;
    Ok(reqs)
}

/// Authorization paying `reqs` exactly; valid from `now - 1` for
/// `validity_seconds`.
pub fn build_authorization(
    reqs: &PaymentRequirements,
    payer: Address,
    now: u64,
    validity_seconds: u64,
    nonce: Digest32,
) -> TransferAuthorization {
    debug_assert!(validity_seconds > 0);
    TransferAuthorization {
        from: payer,
        to: reqs.pay_to,
        value: reqs.max_amount_required,
        valid_after: now.saturating_sub(1),
        valid_before: now.saturating_add(validity_seconds.max(1)),
        nonce,
    }
}

fn encode_json_base64<T: Serialize>(value: &T) -> String {
    STANDARD.encode(serde_json::to_vec(value).expect("payload serializes"))
}

fn decode_base64(text: &str) -> Result<Vec<u8>, WireError> {
    STANDARD
        .decode(text.trim())
        .map_err(|_| WireError::NotBase64)
}

pub fn encode_payment_header(payload: &SignedPaymentPayload) -> String {
    encode_json_base64(payload)
}

pub fn decode_payment_header(value: &str) -> Result<SignedPaymentPayload, WireError> {
    let bytes = decode_base64(value)?;
    let payload: SignedPaymentPayload =
        serde_json::from_slice(&bytes).map_err(|e| WireError::MalformedPayload(e.to_string()))?;
    if payload.x402_version != X402_VERSION {
        return Err(WireError::UnsupportedVersion(payload.x402_version));
    }
    if payload.scheme != SCHEME_EXACT {
        return Err(WireError::UnsupportedScheme(payload.scheme));
    }
    if !payload.authorization.is_well_formed() {
        return Err(WireError::MalformedPayload(
            "validAfter must precede validBefore".into(),
        ));
    }
    Ok(payload)
}

pub fn encode_settlement_header(receipt: &SettlementReceipt) -> Result<String, WireError> {
    receipt.check()?;
    Ok(encode_json_base64(receipt))
}

pub fn decode_settlement_header(value: &str) -> Result<SettlementReceipt, WireError> {
    let bytes = decode_base64(value)?;
    let receipt: SettlementReceipt =
        serde_json::from_slice(&bytes).map_err(|e| WireError::MalformedPayload(e.to_string()))?;
    receipt
        .check()
        .map_err(|e| WireError::MalformedPayload(e.to_string()))?;
    Ok(receipt)
}
