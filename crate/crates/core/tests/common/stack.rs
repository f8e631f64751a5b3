//! Ledger + facilitator + paid agent served over real HTTP.

use std::net::SocketAddr;
use std::sync::{mpsc, Arc};

use a2a_x402::card::{AgentCard, Capabilities, Skill, X402Params};
use a2a_x402::client::PaymentDomain;
use a2a_x402::crypto::{Address, PrivateKey};
use a2a_x402::facilitator::{Facilitator, PaymentFacilitator};
use a2a_x402::ledger::{Ledger, LedgerState, DEFAULT_CHAIN_ID};
use a2a_x402::net::{self, HttpServerHandle};
use a2a_x402::server::{self, A2aServer, ServerConfig};
use a2a_x402::util::Clock;

use super::{address, key, rng, FUNDS, PRICE, T0};

pub struct Stack {
    pub ledger: Ledger,
    pub token: Address,
    pub agent: Address,
    pub payer: PrivateKey,
    pub card: AgentCard,
    pub clock: Clock,
    pub server: Arc<A2aServer>,
    pub http: HttpServerHandle,
}

pub fn paid_card(url: &str, token: Address, pay_to: Address) -> AgentCard {
    let params = X402Params {
        asset: token,
        network: format!("sim:{DEFAULT_CHAIN_ID}"),
        amount: PRICE.to_string(),
        pay_to,
        max_timeout_seconds: 60,
        description: "per call".into(),
    };
    AgentCard {
        name: "Weather Agent".into(),
        description: "Forecasts".into(),
        url: url.into(),
        version: "1.0.0".into(),
        capabilities: Capabilities {
            extensions: vec![params.to_extension()],
            ..Default::default()
        },
        default_input_modes: vec!["text/plain".into()],
        default_output_modes: vec!["text/plain".into()],
        skills: vec![
            Skill::new("forecast", "Forecast", "Paid forecast"),
            Skill::new("ping", "Ping", "Free"),
        ],
        extra: Default::default(),
    }
}

impl Stack {
    pub fn start(seed: u64) -> Stack {
        let mut r = rng(seed);
        let payer = key(&mut r);
        let owner = address(&mut r);
        let submitter = address(&mut r);
        let clock = Clock::fixed(T0);
        let mut state = LedgerState::new(DEFAULT_CHAIN_ID, &[(submitter, 1_000_000)]).unwrap();
        let token = state
            .deploy_token(
                address(&mut r),
                "MockUSDC",
                "USDC",
                6,
                &[(payer.address(), FUNDS)],
                T0,
            )
            .unwrap();
        let agent = state.next_contract_address(&owner);
        let ledger = Ledger::new(state);
        let fac: Arc<dyn PaymentFacilitator> =
            Arc::new(Facilitator::new(ledger.clone(), submitter));
        let (tx, rx) = mpsc::channel();
        let c = clock.clone();
        let http = net::spawn_http_with(SocketAddr::from(([127, 0, 0, 1], 0)), move |bound| {
            let card = paid_card(&format!("http://{bound}/"), token, agent);
            let config = ServerConfig::new(card)
                .unwrap()
                .with_paid_skill("forecast")
                .unwrap()
                .with_handler("forecast", |call| {
                    Ok(format!("sunny in {}", call.message.text()))
                })
                .unwrap()
                .with_handler("ping", |_| Ok("pong".into()))
                .unwrap();
            let srv = Arc::new(A2aServer::new(config, fac).unwrap());
            tx.send(srv.clone()).unwrap();
            server::router(srv, c)
        })
        .unwrap();
        let server = rx.recv().unwrap();
        let card = server.card().clone();
        let deployed = ledger
            .write(|s| s.deploy_agent_contract(owner, card.clone(), T0))
            .unwrap();
        assert_eq!(deployed, agent);
        Stack {
            ledger,
            token,
            agent,
            payer,
            card,
            clock,
            server,
            http,
        }
    }

    pub fn domain(&self) -> PaymentDomain {
        PaymentDomain::from_ledger(&self.ledger, &self.token).unwrap()
    }

    pub fn balance(&self, who: &Address) -> u128 {
        self.ledger
            .read(|s| s.balance_of(&self.token, who).unwrap())
    }
}
