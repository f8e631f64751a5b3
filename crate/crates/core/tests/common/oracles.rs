//! Independent reference implementations used as test oracles.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use a2a_x402::crypto::{Address, Digest32, Signature};
use a2a_x402::ledger::{LedgerState, TxKind, REGISTRY_ENROLL, REGISTRY_REMOVE};
use secp256k1::ecdsa::{RecoverableSignature, RecoveryId};
use secp256k1::{Message, Secp256k1, SecretKey};
use tiny_keccak::{Hasher, Keccak};

fn secp() -> &'static Secp256k1<secp256k1::All> {
    static CTX: OnceLock<Secp256k1<secp256k1::All>> = OnceLock::new();
    CTX.get_or_init(Secp256k1::new)
}

pub fn oracle_keccak(data: &[u8]) -> [u8; 32] {
    let mut k = Keccak::v256();
    k.update(data);
    let mut out = [0u8; 32];
    k.finalize(&mut out);
    out
}

pub fn oracle_address(secret: &[u8; 32]) -> Address {
    let secp = secp();
    let sk = SecretKey::from_slice(secret).unwrap();
    let pk = secp256k1::PublicKey::from_secret_key(secp, &sk).serialize_uncompressed();
    let h = oracle_keccak(&pk[1..]);
    let mut a = [0u8; 20];
    a.copy_from_slice(&h[12..]);
    Address(a)
}

pub fn oracle_recover(digest: &Digest32, sig: &Signature) -> Address {
    let secp = secp();
    let id = RecoveryId::from_i32(sig.v as i32 - 27).unwrap();
    let mut compact = [0u8; 64];
    compact[..32].copy_from_slice(&sig.r);
    compact[32..].copy_from_slice(&sig.s);
    let rs = RecoverableSignature::from_compact(&compact, id).unwrap();
    let pk = secp
        .recover_ecdsa(&Message::from_digest(digest.0), &rs)
        .unwrap()
        .serialize_uncompressed();
    let h = oracle_keccak(&pk[1..]);
    let mut a = [0u8; 20];
    a.copy_from_slice(&h[12..]);
    Address(a)
}

pub fn oracle_factory_list(s: &LedgerState, factory: &Address) -> Vec<Address> {
    s.tx_log()
        .iter()
        .filter(|t| t.kind == TxKind::AgentDeploy && t.via == Some(*factory))
        .map(|t| t.to)
        .collect()
}

pub fn oracle_registry_list(s: &LedgerState, registry: &Address) -> Vec<Address> {
    let mut out: Vec<Address> = Vec::new();
    for t in s.tx_log() {
        if t.kind != TxKind::RegistryOp || t.via != Some(*registry) {
            continue;
        }
        match t.value {
            REGISTRY_ENROLL => out.push(t.to),
            REGISTRY_REMOVE => out.retain(|a| *a != t.to),
            other => panic!("unexpected registry op {other}"),
        }
    }
    out
}

/// (total, unique, repeat, score)
pub fn oracle_reputation(s: &LedgerState, agent: &Address, now: u64) -> (u64, u64, u64, u64) {
    let mut per: BTreeMap<Address, u64> = BTreeMap::new();
    for t in s.tx_log() {
        if t.kind == TxKind::TokenTransfer && t.to == *agent && t.timestamp <= now {
            *per.entry(t.from).or_default() += 1;
        }
    }
    let total: u64 = per.values().sum();
    let repeat = per.values().filter(|n| **n > 1).count() as u64;
    (total, per.len() as u64, repeat, total + 2 * repeat)
}

pub fn oracle_index_all(s: &LedgerState, now: u64) -> Vec<Address> {
    let mut agents: Vec<(u64, Address)> = s
        .tx_log()
        .iter()
        .filter(|t| t.kind == TxKind::AgentDeploy)
        .map(|t| (oracle_reputation(s, &t.to, now).3, t.to))
        .collect();
    agents.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    agents.into_iter().map(|(_, a)| a).collect()
}
