//! Fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod mutations;
pub mod oracles;
pub mod scenario;
pub mod stack;

use std::collections::BTreeMap;

use a2a_x402::card::{AgentCard, Capabilities, Skill, X402Params};
use a2a_x402::crypto::{self, Address, Digest32, Eip712Domain, PrivateKey};
use a2a_x402::ledger::{Amount, LedgerState, TransferAuthorization, DEFAULT_CHAIN_ID};
use a2a_x402::wire::{self, PaymentRequirements, SignedPaymentPayload, SCHEME_EXACT, X402_VERSION};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::Value;

pub const T0: u64 = 1_700_000_000;
pub const PRICE: Amount = 10_000;
pub const FUNDS: Amount = 1_000_000;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn key(rng: &mut ChaCha20Rng) -> PrivateKey {
    PrivateKey::random(rng)
}

pub fn digest(rng: &mut ChaCha20Rng) -> Digest32 {
    let mut b = [0u8; 32];
    rng.fill_bytes(&mut b);
    Digest32(b)
}

pub fn address(rng: &mut ChaCha20Rng) -> Address {
    let mut b = [0u8; 20];
    rng.fill_bytes(&mut b);
    Address(b)
}

fn word(rng: &mut ChaCha20Rng, min: usize, max: usize) -> String {
    const POOL: &[&str] = &[
        "alpha",
        "beta",
        "gamma",
        "delta",
        "wetter",
        "météo",
        "天気",
        "forecast",
        "tally",
        "pay",
        "agent",
        "\"quoted\"",
        "back\\slash",
        "tab\there",
        "emoji 🌦",
        "<tag>",
        "a&b",
        "ünïcode",
    ];
    let n = rng.gen_range(min..=max);
    (0..n)
        .map(|_| POOL[rng.gen_range(0..POOL.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

fn mime(rng: &mut ChaCha20Rng) -> String {
    const MIMES: &[&str] = &[
        "text/plain",
        "application/json",
        "image/png",
        "text/markdown",
        "application/vnd.a2a+json",
    ];
    MIMES[rng.gen_range(0..MIMES.len())].to_string()
}

/// A random card that passes validation. About half carry the x402 extension.
pub fn random_card(rng: &mut ChaCha20Rng) -> AgentCard {
    let port: u16 = rng.gen_range(1024..65535);
    let host = ["127.0.0.1", "localhost", "agent.example.org", "[::1]"][rng.gen_range(0..4)];
    let scheme = if rng.gen_bool(0.5) { "http" } else { "https" };
    let path = if rng.gen_bool(0.5) { "/" } else { "/a2a/v1" };
    let n_skills = rng.gen_range(1..=4);
    let skills = (0..n_skills)
        .map(|i| {
            let mut s = Skill::new(
                &format!("skill-{i}-{}", rng.gen::<u16>()),
                &word(rng, 1, 2),
                &word(rng, 1, 6),
            );
            if rng.gen_bool(0.3) {
                s.extra
                    .insert("tags".into(), Value::from(vec![word(rng, 1, 1)]));
            }
            s
        })
        .collect();
    let mut capabilities = Capabilities::default();
    if rng.gen_bool(0.5) {
        capabilities
            .flags
            .insert("streaming".into(), rng.gen_bool(0.5));
    }
    if rng.gen_bool(0.5) {
        capabilities.extensions.push(
            X402Params {
                asset: address(rng),
                network: format!("sim:{}", rng.gen_range(1..100_000u64)),
                amount: rng.gen_range(1..10_000_000u64).to_string(),
                pay_to: address(rng),
                max_timeout_seconds: rng.gen_range(1..600),
                description: word(rng, 0, 3),
            }
            .to_extension(),
        );
    }
    let mut extra = BTreeMap::new();
    if rng.gen_bool(0.3) {
        extra.insert(
            "documentationUrl".into(),
            Value::from("https://example.org/docs"),
        );
    }
    AgentCard {
        name: word(rng, 1, 3),
        description: word(rng, 0, 8),
        url: format!("{scheme}://{host}:{port}{path}"),
        version: format!(
            "{}.{}.{}",
            rng.gen_range(0..5),
            rng.gen_range(0..20),
            rng.gen_range(0..100)
        ),
        capabilities,
        default_input_modes: (0..rng.gen_range(1..3)).map(|_| mime(rng)).collect(),
        default_output_modes: (0..rng.gen_range(1..3)).map(|_| mime(rng)).collect(),
        skills,
        extra,
    }
}

/// Ledger with one token and a funded payer, plus matching requirements.
pub struct PayFixture {
    pub state: LedgerState,
    pub token: Address,
    pub payer: PrivateKey,
    pub payee: Address,
    pub submitter: Address,
    pub reqs: PaymentRequirements,
}

impl PayFixture {
    pub fn new(rng: &mut ChaCha20Rng) -> PayFixture {
        let payer = key(rng);
        let payee = address(rng);
        let submitter = address(rng);
        let mut state = LedgerState::new(DEFAULT_CHAIN_ID, &[(submitter, 1_000_000)]).unwrap();
        let token = state
            .deploy_token(
                address(rng),
                "MockUSDC",
                "USDC",
                6,
                &[(payer.address(), FUNDS)],
                T0,
            )
            .unwrap();
        let reqs = PaymentRequirements {
            x402_version: X402_VERSION,
            scheme: SCHEME_EXACT.into(),
            network: state.network(),
            asset: token,
            pay_to: payee,
            max_amount_required: PRICE,
            resource: "http://127.0.0.1:8080#forecast".into(),
            description: String::new(),
            max_timeout_seconds: 60,
            nonce: None,
            error: None,
        };
        PayFixture {
            state,
            token,
            payer,
            payee,
            submitter,
            reqs,
        }
    }

    pub fn domain(&self) -> Eip712Domain {
        self.state.token_domain(&self.token).unwrap()
    }

    /// Independent re-derivation of what a correct client sends.
    pub fn sign(&self, auth: TransferAuthorization, signer: &PrivateKey) -> SignedPaymentPayload {
        let digest = crypto::transfer_auth_digest(&crypto::domain_separator(&self.domain()), &auth);
        SignedPaymentPayload {
            x402_version: X402_VERSION,
            scheme: SCHEME_EXACT.into(),
            network: self.reqs.network.clone(),
            authorization: auth,
            signature: crypto::sign(&digest, signer).unwrap(),
        }
    }

    pub fn valid_payload(&self, rng: &mut ChaCha20Rng, now: u64) -> SignedPaymentPayload {
        let auth =
            wire::build_authorization(&self.reqs, self.payer.address(), now, 60, digest(rng));
        self.sign(auth, &self.payer)
    }
}
