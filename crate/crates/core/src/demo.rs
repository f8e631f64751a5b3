//! End-to-end walkthrough: ledger, token, facilitator and agent on real HTTP
//! listeners, a client that discovers the agent through a registry, gets a
//! 402, pays, and receives a result plus receipt.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::Serialize;

use crate::card::{AgentCard, Capabilities, Skill, X402Params};
use crate::client::{self, A2aClient, ClientError, Exchange, HttpTransport, PaymentDomain, Wallet};
use crate::crypto::{Address, PrivateKey};
use crate::facilitator::{self, Facilitator, PaymentFacilitator, RemoteFacilitator};
use crate::ledger::{Amount, Ledger, LedgerConfig, LedgerState, RegistryMode, DEFAULT_CHAIN_ID};
use crate::net::{self, HttpServerHandle};
use crate::server::{self, A2aServer, ServerConfig};
use crate::util::Clock;
use crate::wire::SettlementReceipt;

pub const DEMO_START_TIME: u64 = 1_700_000_000;
/// 0.01 USDC at 6 decimals.
pub const DEMO_PRICE: Amount = 10_000;
pub const DEMO_CLIENT_FUNDS: Amount = 5_000_000;
pub const DEMO_SETTLEMENT_FEE: Amount = 21_000;
pub const DEMO_SKILL: &str = "forecast";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DemoOptions {
    /// Corrupt the client's signature; settlement must be refused.
    pub tamper_signature: bool,
    /// Re-submit an already settled payment; it must be refused.
    pub replay: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
#[serde(rename_all = "camelCase")]
pub struct DemoReport {
    pub transcript: Vec<String>,
    pub agent: Address,
    pub payer: Address,
    pub payer_before: Amount,
    pub payer_after: Amount,
    pub payee_before: Amount,
    pub payee_after: Amount,
    pub receipt: Option<SettlementReceipt>,
    pub tx_found: bool,
    pub response_text: Option<String>,
    /// Reason given for the expected rejection in tamper/replay runs.
    pub rejection: Option<String>,
    pub transfers_to_agent: usize,
    /// Whether the run behaved as expected for its options.
    pub ok: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error("setup failed: {0}")]
    Setup(String),
    #[error(transparent)]
    Client(#[from] ClientError),
}

fn setup<E: std::fmt::Display>(e: E) -> DemoError {
    DemoError::Setup(e.to_string())
}

fn demo_card(url: &str, asset: Address, pay_to: Address, network: &str) -> AgentCard {
    let params = X402Params {
        asset,
        network: network.to_string(),
        amount: DEMO_PRICE.to_string(),
        pay_to,
        max_timeout_seconds: 60,
        description: "One forecast".into(),
    };
    AgentCard {
        name: "Weather Agent".into(),
        description: "Paid daily forecasts".into(),
        url: url.to_string(),
        version: "1.0.0".into(),
        capabilities: Capabilities {
            extensions: vec![params.to_extension()],
            ..Default::default()
        },
        default_input_modes: vec!["text/plain".into()],
        default_output_modes: vec!["text/plain".into()],
        skills: vec![
            Skill::new(DEMO_SKILL, "Forecast", "Weather forecast for a city"),
            Skill::new("ping", "Ping", "Free liveness check"),
        ],
        extra: Default::default(),
    }
}

fn localhost() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 0))
}

pub fn run_e2e(opts: DemoOptions) -> Result<DemoReport, DemoError> {
    let started = Instant::now();
    let mut log = Vec::new();
    let mut rng = StdRng::seed_from_u64(opts.seed);
    let deployer = PrivateKey::random(&mut rng);
    let agent_owner = PrivateKey::random(&mut rng);
    let facilitator_key = PrivateKey::random(&mut rng);
    let payer_key = PrivateKey::random(&mut rng);
    let clock = Clock::fixed(DEMO_START_TIME);
    let now = clock.now();

    let config = LedgerConfig {
        settlement_fee: DEMO_SETTLEMENT_FEE,
        ..LedgerConfig::default()
    };
    let state = LedgerState::with_config(
        DEFAULT_CHAIN_ID,
        &[(facilitator_key.address(), 1_000_000_000)],
        config,
    )
    .map_err(setup)?;
    let ledger = Ledger::new(state);
    let token = ledger
        .write(|s| {
            s.deploy_token(
                deployer.address(),
                "MockUSDC",
                "USDC",
                6,
                &[(payer_key.address(), DEMO_CLIENT_FUNDS)],
                now,
            )
        })
        .map_err(setup)?;
    let network = ledger.read(|s| s.network());
    log.push(format!(
        "[phase 1] ledger {network}: MockUSDC deployed at {token}"
    ));

    let fac: Arc<dyn PaymentFacilitator> =
        Arc::new(Facilitator::new(ledger.clone(), facilitator_key.address()));
    let fac_http: HttpServerHandle =
        net::spawn_http(facilitator::router(fac, clock.clone()), localhost()).map_err(setup)?;
    log.push(format!(
        "[phase 1] facilitator listening on {}",
        fac_http.base_url()
    ));

    let agent_addr = ledger.read(|s| s.next_contract_address(&agent_owner.address()));
    let remote: Arc<dyn PaymentFacilitator> =
        Arc::new(RemoteFacilitator::new(&fac_http.base_url()));
    let (card_tx, card_rx) = std::sync::mpsc::channel();
    let server_clock = clock.clone();
    let net_id = network.clone();
    let agent_http = net::spawn_http_with(localhost(), move |bound| {
        let card = demo_card(&format!("http://{bound}/"), token, agent_addr, &net_id);
        let built = ServerConfig::new(card.clone())
            .and_then(|c| c.with_paid_skill(DEMO_SKILL))
            .and_then(|c| {
                c.with_handler(DEMO_SKILL, |call| {
                    Ok(format!(
                        "Forecast for {}: sunny, 21C",
                        call.message.text().trim()
                    ))
                })
            })
            .and_then(|c| c.with_handler("ping", |_| Ok("pong".into())))
            .and_then(|c| A2aServer::new(c, remote));
        match built {
            Ok(srv) => {
                let _ = card_tx.send(Ok(card));
                server::router(Arc::new(srv), server_clock)
            }
            Err(e) => {
                let _ = card_tx.send(Err(e));
                axum::Router::new()
            }
        }
    })
    .map_err(setup)?;
    let card = card_rx.recv().map_err(setup)?.map_err(setup)?;

    let deployed = ledger
        .write(|s| s.deploy_agent_contract(agent_owner.address(), card, now))
        .map_err(setup)?;
    debug_assert_eq!(deployed, agent_addr);
    let registry = ledger
        .write(|s| {
            let reg = s.deploy_registry(
                deployer.address(),
                RegistryMode::Permissionless,
                BTreeSet::new(),
                now,
            )?;
            s.registry_enroll(&reg, &agent_owner.address(), &agent_addr, now)?;
            Ok::<_, crate::ledger::LedgerError>(reg)
        })
        .map_err(setup)?;
    log.push(format!(
        "[phase 1] agent contract {agent_addr} serving {}",
        agent_http.base_url()
    ));
    log.push(format!("[phase 1] registry {registry} lists the agent"));

    // Client side: registry -> contract -> card, then the well-known copy.
    let listed = ledger.read(|s| s.registry_list(&registry)).map_err(setup)?;
    let chosen = *listed.first().ok_or_else(|| setup("registry is empty"))?;
    let on_chain = client::discover_by_contract(&ledger, &chosen)?;
    let transport = HttpTransport::new();
    let served = client::discover_by_url(&transport, &on_chain.url)?;
    if served != on_chain {
        return Err(setup("served card differs from the contract card"));
    }
    log.push(format!(
        "[phase 2] client discovered {:?} at {}",
        served.name, served.url
    ));

    let payer = payer_key.address();
    let balances = |l: &Ledger| {
        l.read(|s| {
            (
                s.balance_of(&token, &payer).unwrap_or(0),
                s.balance_of(&token, &agent_addr).unwrap_or(0),
            )
        })
    };
    let (payer_before, payee_before) = balances(&ledger);
    let domain = PaymentDomain::from_ledger(&ledger, &token).map_err(setup)?;
    let client = A2aClient::new(transport, Wallet::new(payer_key)).with_seed(opts.seed);

    let mut receipt = None;
    let mut response_text = None;
    let mut rejection = None;
    let endpoint = served.url.clone();

    let reqs = match client.send_message(&endpoint, DEMO_SKILL, "Berlin", None)? {
        Exchange::PaymentRequired { requirements, .. } => requirements,
        Exchange::Completed { .. } => return Err(setup("paid skill answered without payment")),
    };
    log.push(format!(
        "[phase 3] 402 Payment Required: {} base units of {} to {}",
        reqs.max_amount_required, reqs.asset, reqs.pay_to
    ));
    let mut payload =
        client.sign_payment(&reqs, &domain.token_name, domain.chain_id, clock.now())?;
    log.push(format!(
        "[phase 3] signed authorization, nonce {}",
        payload.authorization.nonce
    ));
    if opts.tamper_signature {
        payload.signature.r[31] ^= 0x01;
        log.push("[phase 3] signature tampered before sending".into());
    }
    let mut attempts = 0;
    loop {
        attempts += 1;
        match client.send_message(&endpoint, DEMO_SKILL, "Berlin", Some(&payload))? {
            Exchange::Completed {
                response,
                receipt: r,
            } => {
                log.push("[phase 4] facilitator verified and settled; 200 OK".into());
                response_text = response.result.as_ref().map(|m| m.text());
                receipt = r;
                if attempts > 1 || !opts.replay {
                    break;
                }
                log.push("[phase 4] replaying the same payload".into());
            }
            Exchange::PaymentRequired {
                requirements,
                receipt: r,
            } => {
                let reason = r
                    .as_ref()
                    .and_then(|r| r.error_reason.clone())
                    .or(requirements.error);
                log.push(format!(
                    "[phase 4] rejected: {}",
                    reason.as_deref().unwrap_or("?")
                ));
                rejection = reason;
                break;
            }
        }
    }

    if let Some(text) = &response_text {
        log.push(format!("[phase 5] result: {text}"));
    }
    let tx_found = receipt
        .as_ref()
        .and_then(|r| r.tx_id)
        .is_some_and(|id| ledger.read(|s| s.find_tx(&id).is_some()));
    if let Some(r) = &receipt {
        if let Some(id) = r.tx_id {
            log.push(format!(
                "[phase 5] receipt tx {id} found on ledger: {tx_found}"
            ));
        }
    }
    let (payer_after, payee_after) = balances(&ledger);
    let transfers_to_agent = ledger.read(|s| {
        s.tx_log()
            .iter()
            .filter(|t| t.kind == crate::ledger::TxKind::TokenTransfer && t.to == agent_addr)
            .count()
    });
    log.push(format!(
        "payer {payer_before} -> {payer_after}, agent {payee_before} -> {payee_after}"
    ));

    let paid_once =
        payer_before - payer_after == DEMO_PRICE && payee_after - payee_before == DEMO_PRICE;
    let ok = if opts.tamper_signature {
        rejection.as_deref() == Some("BadSignature")
            && payer_after == payer_before
            && transfers_to_agent == 0
    } else if opts.replay {
        rejection.as_deref() == Some("NonceUsed")
            && paid_once
            && transfers_to_agent == 1
            && tx_found
    } else {
        paid_once
            && tx_found
            && response_text.is_some()
            && receipt.as_ref().is_some_and(|r| r.success)
    };
    log.push(format!("finished in {} ms", started.elapsed().as_millis()));

    drop(agent_http);
    drop(fac_http);
    Ok(DemoReport {
        transcript: log,
        agent: agent_addr,
        payer,
        payer_before,
        payer_after,
        payee_before,
        payee_after,
        receipt,
        tx_found,
        response_text,
        rejection,
        transfers_to_agent,
        ok,
    })
}
