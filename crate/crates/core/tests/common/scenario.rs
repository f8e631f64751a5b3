//! Random but reproducible operation sequences over a ledger.

use std::collections::BTreeSet;

use a2a_x402::card::AgentCard;
use a2a_x402::crypto::{self, Address, PrivateKey, Signature};
use a2a_x402::ledger::{
    Amount, LedgerError, LedgerState, RegistryMode, TransferAuthorization, DEFAULT_CHAIN_ID,
};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::{digest, key, random_card, T0};

pub type History = Vec<(Op, Result<(), LedgerError>)>;

/// A fully concrete operation: replaying the same list on the same genesis
/// must give the same state.
#[derive(Debug, Clone)]
pub enum Op {
    DeployAgent {
        owner: Address,
        card: AgentCard,
        factory: Option<Address>,
    },
    DeployRegistry {
        owner: Address,
        curators: BTreeSet<Address>,
    },
    DeployFactory {
        owner: Address,
    },
    Enroll {
        registry: Address,
        caller: Address,
        agent: Address,
    },
    Remove {
        registry: Address,
        caller: Address,
        agent: Address,
    },
    Pay {
        auth: TransferAuthorization,
        sig: Signature,
    },
    Transfer {
        from: Address,
        to: Address,
        value: Amount,
    },
    Native {
        from: Address,
        to: Address,
        value: Amount,
    },
    Heartbeat {
        agent: Address,
        caller: Address,
    },
    UpdateCard {
        agent: Address,
        caller: Address,
        card: AgentCard,
    },
    Withdraw {
        agent: Address,
        caller: Address,
        amount: Amount,
        to: Address,
    },
    Tick {
        secs: u64,
    },
}

pub struct World {
    pub state: LedgerState,
    pub now: u64,
    pub token: Address,
    pub keys: Vec<PrivateKey>,
    pub facilitator: Address,
    pub agents: Vec<Address>,
    pub registries: Vec<Address>,
    pub factories: Vec<Address>,
    pub genesis_native: Amount,
}

pub const ACTORS: usize = 6;

impl World {
    pub fn genesis(seed: u64) -> World {
        let mut rng = super::rng(seed);
        let keys: Vec<PrivateKey> = (0..ACTORS).map(|_| key(&mut rng)).collect();
        let facilitator = keys[0].address();
        let native: Vec<(Address, Amount)> =
            keys.iter().map(|k| (k.address(), 1_000_000)).collect();
        let mut state = LedgerState::with_config(
            DEFAULT_CHAIN_ID,
            &native,
            a2a_x402::ledger::LedgerConfig {
                settlement_fee: 7,
                ..Default::default()
            },
        )
        .unwrap();
        let mint: Vec<(Address, Amount)> = keys.iter().map(|k| (k.address(), 5_000_000)).collect();
        let token = state
            .deploy_token(facilitator, "MockUSDC", "USDC", 6, &mint, T0)
            .unwrap();
        World {
            state,
            now: T0,
            token,
            keys,
            facilitator,
            agents: Vec::new(),
            registries: Vec::new(),
            factories: Vec::new(),
            genesis_native: 1_000_000 * ACTORS as Amount,
        }
    }

    fn pick<T: Copy>(rng: &mut ChaCha20Rng, v: &[T]) -> Option<T> {
        (!v.is_empty()).then(|| v[rng.gen_range(0..v.len())])
    }

    fn actor(&self, rng: &mut ChaCha20Rng) -> usize {
        rng.gen_range(0..self.keys.len())
    }

    /// Draws an operation; it may be one the ledger rejects.
    pub fn random_op(&self, rng: &mut ChaCha20Rng) -> Op {
        let a = self.actor(rng);
        let who = self.keys[a].address();
        let agent = Self::pick(rng, &self.agents);
        match rng.gen_range(0..100) {
            0..=14 => {
                let mut card = random_card(rng);
                if rng.gen_bool(0.3) {
                    card.skills.clear(); // invalid on purpose
                }
                let factory = if rng.gen_bool(0.4) {
                    Self::pick(rng, &self.factories)
                } else {
                    None
                };
                Op::DeployAgent {
                    owner: who,
                    card,
                    factory,
                }
            }
            15..=18 => {
                let curators = if rng.gen_bool(0.5) {
                    BTreeSet::new()
                } else {
                    (0..rng.gen_range(1..3))
                        .map(|_| self.keys[self.actor(rng)].address())
                        .collect()
                };
                Op::DeployRegistry {
                    owner: who,
                    curators,
                }
            }
            19..=21 => Op::DeployFactory { owner: who },
            22..=36 => match (Self::pick(rng, &self.registries), agent) {
                (Some(registry), Some(agent)) => {
                    let caller = self.enroll_caller(rng, &registry, &agent, who);
                    Op::Enroll {
                        registry,
                        caller,
                        agent,
                    }
                }
                _ => Op::Tick { secs: 1 },
            },
            37..=40 => match (Self::pick(rng, &self.registries), agent) {
                (Some(registry), Some(agent)) => {
                    let caller = self.enroll_caller(rng, &registry, &agent, who);
                    Op::Remove {
                        registry,
                        caller,
                        agent,
                    }
                }
                _ => Op::Tick { secs: 1 },
            },
            41..=70 => {
                let to = agent.unwrap_or_else(|| self.keys[self.actor(rng)].address());
                let value = rng.gen_range(0..20_000);
                let auth = TransferAuthorization {
                    from: who,
                    to,
                    value,
                    valid_after: self.now - 1,
                    valid_before: self.now + rng.gen_range(0..120),
                    nonce: digest(rng),
                };
                let d = crypto::transfer_auth_digest(
                    &crypto::domain_separator(&self.state.token_domain(&self.token).unwrap()),
                    &auth,
                );
                let signer = if rng.gen_bool(0.9) {
                    &self.keys[a]
                } else {
                    &self.keys[self.actor(rng)]
                };
                Op::Pay {
                    auth,
                    sig: crypto::sign(&d, signer).unwrap(),
                }
            }
            71..=76 => Op::Transfer {
                from: who,
                to: agent.unwrap_or(self.facilitator),
                value: rng.gen_range(0..50_000),
            },
            77..=80 => Op::Native {
                from: who,
                to: self.keys[self.actor(rng)].address(),
                value: rng.gen_range(0..200_000),
            },
            81..=85 => match agent {
                Some(agent) => Op::Heartbeat {
                    agent,
                    caller: self.owner_or(rng, &agent, who),
                },
                None => Op::Tick { secs: 5 },
            },
            86..=88 => match agent {
                Some(agent) => Op::UpdateCard {
                    agent,
                    caller: self.owner_or(rng, &agent, who),
                    card: random_card(rng),
                },
                None => Op::Tick { secs: 5 },
            },
            89..=92 => match agent {
                Some(agent) => Op::Withdraw {
                    agent,
                    caller: self.owner_or(rng, &agent, who),
                    amount: rng.gen_range(0..30_000),
                    to: who,
                },
                None => Op::Tick { secs: 5 },
            },
            _ => Op::Tick {
                secs: rng.gen_range(1..40 * 86_400),
            },
        }
    }

    fn owner_or(&self, rng: &mut ChaCha20Rng, agent: &Address, other: Address) -> Address {
        match self.state.agent(agent) {
            Some(c) if rng.gen_bool(0.85) => c.owner,
            _ => other,
        }
    }

    fn enroll_caller(
        &self,
        rng: &mut ChaCha20Rng,
        registry: &Address,
        agent: &Address,
        other: Address,
    ) -> Address {
        let reg = self.state.registry(registry).expect("known registry");
        if rng.gen_bool(0.15) {
            return other;
        }
        match reg.mode {
            RegistryMode::Permissionless => self.owner_or(rng, agent, other),
            RegistryMode::Curated => *reg.curators.iter().next().expect("curated has curators"),
        }
    }

    pub fn apply(&mut self, op: &Op) -> Result<(), LedgerError> {
        let now = self.now;
        let s = &mut self.state;
        match op.clone() {
            Op::DeployAgent {
                owner,
                card,
                factory,
            } => {
                let a = match factory {
                    Some(f) => s.factory_create_agent(&f, owner, card, now)?,
                    None => s.deploy_agent_contract(owner, card, now)?,
                };
                self.agents.push(a);
            }
            Op::DeployRegistry { owner, curators } => {
                let mode = if curators.is_empty() {
                    RegistryMode::Permissionless
                } else {
                    RegistryMode::Curated
                };
                let r = s.deploy_registry(owner, mode, curators, now)?;
                self.registries.push(r);
            }
            Op::DeployFactory { owner } => self.factories.push(s.deploy_factory(owner, now)),
            Op::Enroll {
                registry,
                caller,
                agent,
            } => {
                s.registry_enroll(&registry, &caller, &agent, now)?;
            }
            Op::Remove {
                registry,
                caller,
                agent,
            } => {
                s.registry_remove(&registry, &caller, &agent, now)?;
            }
            Op::Pay { auth, sig } => {
                s.transfer_with_authorization(&self.facilitator, &self.token, &auth, &sig, now)?;
            }
            Op::Transfer { from, to, value } => {
                s.transfer(&self.token, &from, &to, value, now)?;
            }
            Op::Native { from, to, value } => {
                s.transfer_native(&from, &to, value, now)?;
            }
            Op::Heartbeat { agent, caller } => {
                s.heartbeat(&agent, &caller, now)?;
            }
            Op::UpdateCard {
                agent,
                caller,
                card,
            } => {
                s.update_card(&agent, &caller, card, now)?;
            }
            Op::Withdraw {
                agent,
                caller,
                amount,
                to,
            } => {
                s.withdraw(&agent, &caller, Some(&self.token), amount, &to, now)?;
            }
            Op::Tick { secs } => self.now += secs,
        }
        Ok(())
    }

    /// Runs `n` random operations, returning them with their outcomes.
    pub fn run(seed: u64, n: usize) -> (World, History) {
        let mut world = World::genesis(seed);
        let mut rng = super::rng(seed ^ 0x5eed);
        let mut log = Vec::with_capacity(n);
        for _ in 0..n {
            let op = world.random_op(&mut rng);
            let out = world.apply(&op);
            log.push((op, out));
        }
        (world, log)
    }

    pub fn replay(seed: u64, ops: &[Op]) -> World {
        let mut world = World::genesis(seed);
        for op in ops {
            let _ = world.apply(op);
        }
        world
    }
}
