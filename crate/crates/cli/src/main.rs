//! `a2ax`: operator commands over a ledger snapshot file, plus the agent,
//! facilitator and indexer services and the end-to-end demo.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use a2a_x402::card::{self, AgentCard};
use a2a_x402::client::{
    self, A2aClient, ClientError, HttpTransport, PaymentDomain, PaymentMode, TransportError, Wallet,
};
use a2a_x402::crypto::{Address, PrivateKey};
use a2a_x402::demo::{self, DemoOptions};
use a2a_x402::discovery::{self, AgentIndex, IndexFilter, IndexerService};
use a2a_x402::facilitator::{
    self, Facilitator, FacilitatorError, PaymentFacilitator, RemoteFacilitator, VerifyResult,
};
use a2a_x402::ledger::{Amount, Ledger, LedgerConfig, LedgerState, RegistryMode};
use a2a_x402::net::{self, HttpServerHandle};
use a2a_x402::server::{self, A2aServer, ServerConfig};
use a2a_x402::util::Clock;
use a2a_x402::wire::{PaymentRequirements, SettlementReceipt, SignedPaymentPayload};
use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

const EXIT_DOMAIN: u8 = 1;
const EXIT_TRANSPORT: u8 = 3;

#[derive(Parser)]
#[command(
    name = "a2ax",
    version,
    about = "Paid agent-to-agent calls over a simulated ledger"
)]
struct Cli {
    /// Ledger snapshot file.
    #[arg(
        long,
        global = true,
        env = "A2AX_LEDGER",
        default_value = "ledger.json"
    )]
    ledger: PathBuf,
    /// Logical clock in unix seconds; defaults to the system clock.
    #[arg(long, global = true)]
    now: Option<u64>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create or inspect the ledger snapshot.
    #[command(subcommand)]
    Ledger(LedgerCmd),
    /// Deploy tokens and read balances.
    #[command(subcommand)]
    Token(TokenCmd),
    /// Deploy, serve and keep an agent alive.
    #[command(subcommand)]
    Agent(AgentCmd),
    /// Curated or permissionless agent registries.
    #[command(subcommand)]
    Registry(RegistryCmd),
    /// Deploy an agent factory.
    #[command(subcommand)]
    Factory(FactoryCmd),
    /// Run the payment facilitator.
    #[command(subcommand)]
    Facilitator(FacilitatorCmd),
    /// Serve the reputation-ranked agent index.
    #[command(subcommand)]
    Indexer(IndexerCmd),
    /// Call an agent, paying when asked.
    #[command(subcommand)]
    Client(ClientCmd),
    /// List agents from a registry, a factory, or the indexer.
    Discover(DiscoverArgs),
    /// Payment-derived reputation of an agent.
    Reputation {
        #[arg(long)]
        agent: Address,
    },
    /// Scripted end-to-end run on a fresh in-memory ledger.
    #[command(subcommand)]
    Demo(DemoCmd),
}

#[derive(Subcommand)]
enum LedgerCmd {
    /// Create a snapshot from a genesis file.
    Init {
        #[arg(long, default_value_t = a2a_x402::ledger::DEFAULT_CHAIN_ID)]
        chain_id: u64,
        #[arg(long)]
        genesis: PathBuf,
        /// Overwrite an existing snapshot.
        #[arg(long)]
        force: bool,
    },
    /// Print the snapshot.
    Show,
}

#[derive(Subcommand)]
enum TokenCmd {
    Deploy {
        #[arg(long)]
        owner: String,
        #[arg(long, default_value = "MockUSDC")]
        name: String,
        #[arg(long, default_value = "USDC")]
        symbol: String,
        #[arg(long, default_value_t = 6)]
        decimals: u8,
        /// ADDRESS=AMOUNT, repeatable.
        #[arg(long = "mint", value_parser = parse_mint)]
        mint: Vec<(Address, Amount)>,
    },
    Balance {
        #[arg(long)]
        token: Address,
        #[arg(long)]
        of: Address,
    },
}

#[derive(Subcommand)]
enum AgentCmd {
    /// Deploy an agent contract holding the card.
    Deploy {
        #[arg(long)]
        card: PathBuf,
        #[arg(long)]
        owner: String,
        /// Deploy through this factory.
        #[arg(long)]
        factory: Option<Address>,
    },
    /// Serve the card and skills over HTTP.
    Serve {
        #[arg(long)]
        card: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Skill id gated by payment, repeatable.
        #[arg(long = "paid-skill")]
        paid_skills: Vec<String>,
        /// Facilitator base URL.
        #[arg(long)]
        facilitator: Option<String>,
    },
    Heartbeat {
        #[arg(long)]
        agent: Address,
        #[arg(long)]
        key: String,
    },
}

#[derive(Subcommand)]
enum RegistryCmd {
    Deploy {
        #[arg(long)]
        owner: String,
        /// Curator address; any curator makes the registry curated.
        #[arg(long = "curator")]
        curators: Vec<Address>,
    },
    Enroll {
        #[arg(long)]
        registry: Address,
        #[arg(long)]
        agent: Address,
        #[arg(long)]
        key: String,
    },
    Remove {
        #[arg(long)]
        registry: Address,
        #[arg(long)]
        agent: Address,
        #[arg(long)]
        key: String,
    },
}

#[derive(Subcommand)]
enum FactoryCmd {
    Deploy {
        #[arg(long)]
        owner: String,
    },
}

#[derive(Subcommand)]
enum FacilitatorCmd {
    /// Serve /verify and /settle against the snapshot file.
    Serve {
        #[arg(long, default_value_t = 8090)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Settlement submitter; pays the settlement fee.
        #[arg(long)]
        key: String,
    },
}

#[derive(Subcommand)]
enum IndexerCmd {
    /// Serve GET /agents, rescanning the snapshot periodically.
    Serve {
        #[arg(long, default_value_t = 8070)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 2)]
        interval_secs: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Reactive,
    Proactive,
}

#[derive(Subcommand)]
enum ClientCmd {
    /// Paid `message/send` call.
    Send {
        #[arg(
            long,
            conflicts_with = "contract",
            required_unless_present = "contract"
        )]
        to: Option<String>,
        #[arg(long)]
        contract: Option<Address>,
        #[arg(long)]
        skill: String,
        #[arg(long)]
        message: String,
        #[arg(long)]
        key: String,
        #[arg(long, value_enum, default_value = "reactive")]
        mode: Mode,
        /// Refuse to pay more than this many base units.
        #[arg(long)]
        max_spend: Option<Amount>,
        /// EIP-712 token name; read from the snapshot when omitted.
        #[arg(long)]
        token_name: Option<String>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "source")]
struct DiscoverSource {
    #[arg(long)]
    registry: Option<Address>,
    #[arg(long)]
    factory: Option<Address>,
    #[arg(long)]
    indexer: bool,
}

#[derive(Args)]
struct DiscoverArgs {
    #[command(flatten)]
    source: DiscoverSource,
    #[arg(long, requires = "indexer")]
    skill: Option<String>,
    #[arg(long, requires = "indexer")]
    active: bool,
    #[arg(long, requires = "indexer")]
    min_score: Option<u64>,
}

#[derive(Subcommand)]
enum DemoCmd {
    /// Full discovery, 402, payment and settlement walkthrough.
    E2e {
        #[arg(long)]
        tamper_signature: bool,
        #[arg(long)]
        replay: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_mint(s: &str) -> Result<(Address, Amount), String> {
    let (a, v) = s.split_once('=').ok_or("expected ADDRESS=AMOUNT")?;
    let addr = a.parse::<Address>().map_err(|e| e.to_string())?;
    let amount = v.parse::<Amount>().map_err(|e| e.to_string())?;
    Ok((addr, amount))
}

/// Keys come from `env:NAME` or a file holding hex.
fn load_key(spec: &str) -> anyhow::Result<PrivateKey> {
    let text = match spec.strip_prefix("env:") {
        Some(var) => {
            std::env::var(var).with_context(|| format!("environment variable {var} not set"))?
        }
        None => fs::read_to_string(spec).with_context(|| format!("cannot read key file {spec}"))?,
    };
    PrivateKey::from_hex(&text).map_err(|e| anyhow!("bad key in {spec}: {e}"))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct Genesis {
    /// Address to native balance, as decimal text.
    accounts: BTreeMap<Address, String>,
    #[serde(default)]
    config: Option<LedgerConfig>,
}

fn parse_genesis(text: &str) -> anyhow::Result<(Vec<(Address, Amount)>, LedgerConfig)> {
    let g: Genesis = serde_json::from_str(text).context("malformed genesis file")?;
    let mut accounts = Vec::new();
    for (addr, v) in g.accounts {
        if v.is_empty() || !v.bytes().all(|b| b.is_ascii_digit()) {
            bail!("malformed genesis file: balance of {addr} is not a decimal integer");
        }
        accounts.push((addr, v.parse().context("balance out of range")?));
    }
    Ok((accounts, g.config.unwrap_or_default()))
}

fn load_state(path: &Path) -> anyhow::Result<LedgerState> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read ledger snapshot {}", path.display()))?;
    Ok(LedgerState::from_snapshot_json(&text)?)
}

fn save_state(path: &Path, state: &LedgerState) -> anyhow::Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, state.to_snapshot_json())?;
    fs::rename(&tmp, path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn load_card(path: &Path) -> anyhow::Result<AgentCard> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read card {}", path.display()))?;
    Ok(card::parse_agent_json(&text)?)
}

struct Ctx {
    ledger: PathBuf,
    now: Option<u64>,
    json: bool,
}

impl Ctx {
    fn clock(&self) -> Clock {
        self.now.map(Clock::fixed).unwrap_or(Clock::System)
    }

    fn now(&self) -> u64 {
        self.clock().now()
    }

    /// Loads the snapshot, applies `f`, saves only on success.
    fn mutate<R>(
        &self,
        f: impl FnOnce(&mut LedgerState) -> anyhow::Result<R>,
    ) -> anyhow::Result<R> {
        let mut state = load_state(&self.ledger)?;
        let out = f(&mut state)?;
        save_state(&self.ledger, &state)?;
        Ok(out)
    }

    fn emit(&self, value: Value, human: impl FnOnce() -> String) {
        if self.json {
            println!("{}", serde_json::to_string_pretty(&value).expect("json"));
        } else {
            println!("{}", human());
        }
    }
}

fn socket(host: &str, port: u16) -> anyhow::Result<SocketAddr> {
    format!("{host}:{port}")
        .parse()
        .with_context(|| format!("bad listen address {host}:{port}"))
}

fn wait_for_shutdown(handles: Vec<HttpServerHandle>) -> anyhow::Result<()> {
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()?;
    rt.block_on(tokio::signal::ctrl_c())?;
    drop(handles);
    Ok(())
}

/// Facilitator that reloads the snapshot file for every call and writes it
/// back after a successful settlement, so other commands see the result.
struct FileFacilitator {
    path: PathBuf,
    account: Address,
    lock: Mutex<()>,
}

impl FileFacilitator {
    fn open(&self) -> Result<Ledger, FacilitatorError> {
        load_state(&self.path)
            .map(Ledger::new)
            .map_err(|e| FacilitatorError::LedgerUnavailable(e.to_string()))
    }
}

impl PaymentFacilitator for FileFacilitator {
    fn verify(
        &self,
        payload: &SignedPaymentPayload,
        reqs: &PaymentRequirements,
        now: u64,
    ) -> Result<VerifyResult, FacilitatorError> {
        let _g = self.lock.lock();
        Facilitator::new(self.open()?, self.account).verify(payload, reqs, now)
    }

    fn settle(
        &self,
        payload: &SignedPaymentPayload,
        reqs: &PaymentRequirements,
        now: u64,
    ) -> Result<SettlementReceipt, FacilitatorError> {
        let _g = self.lock.lock();
        let ledger = self.open()?;
        let receipt = Facilitator::new(ledger.clone(), self.account).settle(payload, reqs, now)?;
        if receipt.success {
            ledger
                .read(|s| save_state(&self.path, s))
                .map_err(|e| FacilitatorError::LedgerUnavailable(e.to_string()))?;
        }
        Ok(receipt)
    }
}

/// Without a facilitator, paid skills cannot be served.
struct NoFacilitator;

impl PaymentFacilitator for NoFacilitator {
    fn verify(
        &self,
        _: &SignedPaymentPayload,
        _: &PaymentRequirements,
        _: u64,
    ) -> Result<VerifyResult, FacilitatorError> {
        Err(FacilitatorError::LedgerUnavailable(
            "no facilitator configured".into(),
        ))
    }

    fn settle(
        &self,
        _: &SignedPaymentPayload,
        _: &PaymentRequirements,
        _: u64,
    ) -> Result<SettlementReceipt, FacilitatorError> {
        Err(FacilitatorError::LedgerUnavailable(
            "no facilitator configured".into(),
        ))
    }
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SendOutput {
    result: Value,
    receipt: Option<SettlementReceipt>,
    round_trips: usize,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ctx = Ctx {
        ledger: cli.ledger,
        now: cli.now,
        json: cli.json,
    };
    match cli.cmd {
        Command::Ledger(LedgerCmd::Init {
            chain_id,
            genesis,
            force,
        }) => {
            if ctx.ledger.exists() && !force {
                bail!(
                    "{} already exists; pass --force to overwrite",
                    ctx.ledger.display()
                );
            }
            let text = fs::read_to_string(&genesis)
                .with_context(|| format!("cannot read genesis {}", genesis.display()))?;
            let (accounts, config) = parse_genesis(&text)?;
            let state = LedgerState::with_config(chain_id, &accounts, config)?;
            save_state(&ctx.ledger, &state)?;
            ctx.emit(
                json!({"ledger": ctx.ledger, "chainId": chain_id, "accounts": accounts.len()}),
                || {
                    format!(
                        "initialized {} (chain {chain_id}, {} accounts)",
                        ctx.ledger.display(),
                        accounts.len()
                    )
                },
            );
        }
        Command::Ledger(LedgerCmd::Show) => {
            println!("{}", load_state(&ctx.ledger)?.to_snapshot_json());
        }
        Command::Token(TokenCmd::Deploy {
            owner,
            name,
            symbol,
            decimals,
            mint,
        }) => {
            let owner = load_key(&owner)?.address();
            let now = ctx.now();
            let addr =
                ctx.mutate(|s| Ok(s.deploy_token(owner, &name, &symbol, decimals, &mint, now)?))?;
            ctx.emit(json!({"token": addr}), || addr.to_string());
        }
        Command::Token(TokenCmd::Balance { token, of }) => {
            let bal = load_state(&ctx.ledger)?.balance_of(&token, &of)?;
            ctx.emit(json!({"balance": bal.to_string()}), || bal.to_string());
        }
        Command::Agent(AgentCmd::Deploy {
            card,
            owner,
            factory,
        }) => {
            let card = load_card(&card)?;
            let owner = load_key(&owner)?.address();
            let now = ctx.now();
            let addr = ctx.mutate(|s| {
                Ok(match factory {
                    Some(f) => s.factory_create_agent(&f, owner, card, now)?,
                    None => s.deploy_agent_contract(owner, card, now)?,
                })
            })?;
            ctx.emit(json!({"agent": addr}), || addr.to_string());
        }
        Command::Agent(AgentCmd::Heartbeat { agent, key }) => {
            let caller = load_key(&key)?.address();
            let now = ctx.now();
            ctx.mutate(|s| Ok(s.heartbeat(&agent, &caller, now)?))?;
            ctx.emit(json!({"agent": agent, "heartbeat": now}), || {
                format!("heartbeat {now}")
            });
        }
        Command::Agent(AgentCmd::Serve {
            card,
            port,
            host,
            paid_skills,
            facilitator,
        }) => {
            let card = load_card(&card)?;
            let mut config = ServerConfig::new(card.clone())?;
            for skill in card.skills.iter().map(|s| s.id.clone()) {
                let id = skill.clone();
                config.register_skill_handler(&skill, move |call| {
                    Ok(format!("{id}: {}", call.message.text()))
                })?;
            }
            for skill in &paid_skills {
                config = config.with_paid_skill(skill)?;
            }
            let fac: Arc<dyn PaymentFacilitator> = match facilitator {
                Some(url) => Arc::new(RemoteFacilitator::new(&url)),
                None if paid_skills.is_empty() => Arc::new(NoFacilitator),
                None => bail!("--paid-skill requires --facilitator"),
            };
            let server = Arc::new(A2aServer::new(config, fac)?);
            let handle =
                net::spawn_http(server::router(server, ctx.clock()), socket(&host, port)?)?;
            println!("agent listening on {}", handle.base_url());
            wait_for_shutdown(vec![handle])?;
        }
        Command::Registry(RegistryCmd::Deploy { owner, curators }) => {
            let owner = load_key(&owner)?.address();
            let mode = if curators.is_empty() {
                RegistryMode::Permissionless
            } else {
                RegistryMode::Curated
            };
            let curators: BTreeSet<Address> = curators.into_iter().collect();
            let now = ctx.now();
            let addr = ctx.mutate(|s| Ok(s.deploy_registry(owner, mode, curators, now)?))?;
            ctx.emit(json!({"registry": addr}), || addr.to_string());
        }
        Command::Registry(RegistryCmd::Enroll {
            registry,
            agent,
            key,
        }) => {
            let caller = load_key(&key)?.address();
            let now = ctx.now();
            let tx = ctx.mutate(|s| Ok(s.registry_enroll(&registry, &caller, &agent, now)?))?;
            ctx.emit(json!({"txId": tx.tx_id}), || tx.tx_id.to_string());
        }
        Command::Registry(RegistryCmd::Remove {
            registry,
            agent,
            key,
        }) => {
            let caller = load_key(&key)?.address();
            let now = ctx.now();
            let tx = ctx.mutate(|s| Ok(s.registry_remove(&registry, &caller, &agent, now)?))?;
            ctx.emit(json!({"txId": tx.tx_id}), || tx.tx_id.to_string());
        }
        Command::Factory(FactoryCmd::Deploy { owner }) => {
            let owner = load_key(&owner)?.address();
            let now = ctx.now();
            let addr = ctx.mutate(|s| Ok(s.deploy_factory(owner, now)))?;
            ctx.emit(json!({"factory": addr}), || addr.to_string());
        }
        Command::Facilitator(FacilitatorCmd::Serve { port, host, key }) => {
            let account = load_key(&key)?.address();
            load_state(&ctx.ledger)?;
            let fac: Arc<dyn PaymentFacilitator> = Arc::new(FileFacilitator {
                path: ctx.ledger.clone(),
                account,
                lock: Mutex::new(()),
            });
            let handle =
                net::spawn_http(facilitator::router(fac, ctx.clock()), socket(&host, port)?)?;
            println!("facilitator listening on {}", handle.base_url());
            wait_for_shutdown(vec![handle])?;
        }
        Command::Indexer(IndexerCmd::Serve {
            port,
            host,
            interval_secs,
        }) => {
            let state = load_state(&ctx.ledger)?;
            let window = state.config().activity_window;
            let ledger = Ledger::new(state);
            let svc = Arc::new(IndexerService::new(ledger.clone(), window, ctx.clock()));
            svc.scan_now();
            let handle = net::spawn_http(svc.clone().router(), socket(&host, port)?)?;
            println!("indexer listening on {}", handle.base_url());
            let path = ctx.ledger.clone();
            std::thread::spawn(move || loop {
                std::thread::sleep(Duration::from_secs(interval_secs.max(1)));
                if let Ok(fresh) = load_state(&path) {
                    ledger.write(|s| *s = fresh);
                    svc.scan_now();
                }
            });
            wait_for_shutdown(vec![handle])?;
        }
        Command::Client(ClientCmd::Send {
            to,
            contract,
            skill,
            message,
            key,
            mode,
            max_spend,
            token_name,
        }) => {
            let wallet = Wallet::new(load_key(&key)?);
            let transport = HttpTransport::new();
            let snapshot = if contract.is_some() || token_name.is_none() {
                Some(Ledger::new(load_state(&ctx.ledger)?))
            } else {
                None
            };
            let card = match (to, contract) {
                (_, Some(addr)) => {
                    client::discover_by_contract(snapshot.as_ref().expect("loaded"), &addr)?
                }
                (Some(url), None) => client::discover_by_url(&transport, &url)?,
                (None, None) => unreachable!("clap requires one"),
            };
            let params = card::extract_x402_params(&card)?;
            let domain = match (&token_name, &snapshot, &params) {
                (Some(name), _, Some(p)) => PaymentDomain {
                    token_name: name.clone(),
                    chain_id: chain_from_network(&p.network)?,
                },
                (None, Some(ledger), Some(p)) => PaymentDomain::from_ledger(ledger, &p.asset)?,
                // Unpaid agent: the domain is never used.
                _ => PaymentDomain {
                    token_name: String::new(),
                    chain_id: 0,
                },
            };
            let mut c = A2aClient::new(transport, wallet);
            if let Some(cap) = max_spend {
                c = c.with_max_spend(cap);
            }
            let mode = match mode {
                Mode::Reactive => PaymentMode::Reactive,
                Mode::Proactive => PaymentMode::Proactive,
            };
            let paid = c.paid_send(&card, &skill, &message, &domain, ctx.now(), mode)?;
            if let Some(err) = &paid.response.error {
                bail!(
                    "agent returned JSON-RPC error {}: {}",
                    err.code,
                    err.message
                );
            }
            let out = SendOutput {
                result: serde_json::to_value(&paid.response.result)?,
                receipt: paid.receipt.clone(),
                round_trips: paid.round_trips,
            };
            ctx.emit(serde_json::to_value(&out)?, || {
                let mut lines = vec![format!(
                    "result: {}",
                    paid.response
                        .result
                        .as_ref()
                        .map(|m| m.text())
                        .unwrap_or_default()
                )];
                if let Some(r) = &paid.receipt {
                    lines.push(format!(
                        "receipt: {}",
                        serde_json::to_string(r).expect("json")
                    ));
                }
                lines.push(format!("round-trips={}", paid.round_trips));
                lines.join("\n")
            });
        }
        Command::Discover(args) => {
            let state = load_state(&ctx.ledger)?;
            let value = if let Some(reg) = args.source.registry {
                json!(state.registry_list(&reg)?)
            } else if let Some(f) = args.source.factory {
                json!(state.factory_list(&f)?)
            } else {
                let mut index = AgentIndex::new(state.config().activity_window);
                index.scan(&state, ctx.now());
                let filter = IndexFilter {
                    skill_keyword: args.skill,
                    active_only: args.active,
                    min_score: args.min_score,
                };
                let hits: Vec<Value> = index
                    .query(&filter)
                    .into_iter()
                    .map(|(addr, rep)| {
                        let rec = &index.records[&addr];
                        json!({"address": addr, "name": rec.card.name, "url": rec.card.url,
                               "active": rec.active, "score": rep.score})
                    })
                    .collect();
                Value::Array(hits)
            };
            // Lists are always JSON.
            println!("{}", serde_json::to_string_pretty(&value)?);
        }
        Command::Reputation { agent } => {
            let state = load_state(&ctx.ledger)?;
            let report = discovery::compute_reputation(&state, &agent, ctx.now())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Demo(DemoCmd::E2e {
            tamper_signature,
            replay,
            seed,
        }) => {
            let report = demo::run_e2e(DemoOptions {
                tamper_signature,
                replay,
                seed,
            })?;
            ctx.emit(serde_json::to_value(&report)?, || {
                let mut out = report.transcript.join("\n");
                out.push_str(if report.ok { "\nOK" } else { "\nFAILED" });
                out
            });
            if !report.ok {
                bail!("demo assertions failed");
            }
        }
    }
    Ok(())
}

fn chain_from_network(network: &str) -> anyhow::Result<u64> {
    network
        .strip_prefix("sim:")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| anyhow!("unsupported network {network:?}"))
}

fn is_transport(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<TransportError>().is_some()
            || matches!(
                e.downcast_ref::<ClientError>(),
                Some(ClientError::Transport(_))
            )
            || matches!(
                e.downcast_ref::<demo::DemoError>(),
                Some(demo::DemoError::Client(ClientError::Transport(_)))
            )
            || e.downcast_ref::<std::io::Error>().is_some_and(|io| {
                matches!(
                    io.kind(),
                    std::io::ErrorKind::AddrInUse
                        | std::io::ErrorKind::AddrNotAvailable
                        | std::io::ErrorKind::ConnectionRefused
                )
            })
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if let Some(ClientError::PaymentRejected {
                receipt: Some(r), ..
            }) = err.downcast_ref::<ClientError>()
            {
                eprintln!("receipt: {}", serde_json::to_string(r).unwrap_or_default());
            }
            ExitCode::from(if is_transport(&err) {
                EXIT_TRANSPORT
            } else {
                EXIT_DOMAIN
            })
        }
    }
}
