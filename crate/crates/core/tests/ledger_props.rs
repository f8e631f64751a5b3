mod common;

use a2a_x402::crypto::Digest32;
use a2a_x402::ledger::{Amount, LedgerError, LedgerState, TxFilter, TxKind};
use common::scenario::{Op, World};
use proptest::prelude::*;
use rand::Rng;

fn token_sum(w: &World) -> Amount {
    let t = w.state.token(&w.token).unwrap();
    t.balances.values().map(|b| b.0).sum()
}

fn native_sum(w: &World) -> Amount {
    w.state.accounts().map(|(_, v)| v).sum::<Amount>()
        + w.state
            .agents()
            .values()
            .map(|a| a.native_balance)
            .sum::<Amount>()
}

fn check_invariants(w: &World) {
    let t = w.state.token(&w.token).unwrap();
    assert_eq!(token_sum(w), t.total_supply, "token supply conserved");
    assert_eq!(
        native_sum(w) + w.state.fees_collected(),
        w.genesis_native,
        "native coin conserved"
    );
    let log = w.state.tx_log();
    for (i, tx) in log.iter().enumerate() {
        assert_eq!(tx.height, i as u64 + 1);
        assert_eq!(tx.tx_id, tx.compute_id());
    }
    let ids: std::collections::BTreeSet<Digest32> = log.iter().map(|t| t.tx_id).collect();
    assert_eq!(ids.len(), log.len(), "tx ids unique");
    assert_eq!(w.state.height(), log.len() as u64);
    w.state.check_consistency().unwrap();
}

#[test]
fn conservation_and_log_integrity_over_random_runs() {
    for seed in 0..8 {
        let mut world = World::genesis(seed);
        let mut rng = common::rng(seed ^ 0x5eed);
        for _ in 0..250 {
            let op = world.random_op(&mut rng);
            let before = world.state.clone();
            if world.apply(&op).is_err() {
                assert_eq!(
                    world.state, before,
                    "failed op must not change state: {op:?}"
                );
            }
            check_invariants(&world);
        }
    }
}

#[test]
fn settled_authorization_cannot_be_replayed() {
    let (mut world, log) = World::run(11, 300);
    let settled: Vec<Op> = log
        .iter()
        .filter(|(op, out)| matches!(op, Op::Pay { .. }) && out.is_ok())
        .map(|(op, _)| op.clone())
        .collect();
    assert!(settled.len() > 10);
    let before = world.state.clone();
    for op in &settled {
        let Op::Pay { auth, sig } = op else {
            unreachable!()
        };
        // Put the clock back inside the window so only the nonce can fail.
        let err = world
            .state
            .transfer_with_authorization(
                &world.facilitator,
                &world.token,
                auth,
                sig,
                auth.valid_after + 1,
            )
            .unwrap_err();
        assert_eq!(err, LedgerError::NonceAlreadyUsed);
    }
    assert_eq!(world.state, before);
}

#[test]
fn replay_of_recorded_ops_is_byte_identical() {
    for seed in [1, 2, 3] {
        let (world, log) = World::run(seed, 300);
        let ops: Vec<Op> = log.into_iter().map(|(op, _)| op).collect();
        let again = World::replay(seed, &ops);
        assert_eq!(
            world.state.to_snapshot_json(),
            again.state.to_snapshot_json()
        );
    }
}

#[test]
fn snapshot_round_trips() {
    let (world, _) = World::run(5, 200);
    let text = world.state.to_snapshot_json();
    let back = LedgerState::from_snapshot_json(&text).unwrap();
    assert_eq!(back, world.state);
    assert_eq!(back.to_snapshot_json(), text);
    assert!(LedgerState::from_snapshot_json("{").is_err());
}

#[test]
fn query_tx_log_matches_brute_force() {
    let (world, _) = World::run(21, 1000);
    let log = world.state.tx_log();
    assert!(log.len() > 300);
    let kinds = [
        TxKind::TokenTransfer,
        TxKind::AgentDeploy,
        TxKind::CardUpdate,
        TxKind::Heartbeat,
        TxKind::Withdrawal,
        TxKind::RegistryOp,
        TxKind::ContractDeploy,
    ];
    let mut rng = common::rng(77);
    for _ in 0..300 {
        let pick = |rng: &mut rand_chacha::ChaCha20Rng| log[rng.gen_range(0..log.len())].clone();
        let filter = TxFilter {
            to: rng.gen_bool(0.4).then(|| pick(&mut rng).to),
            from: rng.gen_bool(0.4).then(|| pick(&mut rng).from),
            kind: rng
                .gen_bool(0.5)
                .then(|| kinds[rng.gen_range(0..kinds.len())]),
            since: rng.gen_bool(0.4).then(|| pick(&mut rng).timestamp),
        };
        let mut expected = Vec::new();
        for tx in log {
            let ok = filter.to.is_none_or(|a| a == tx.to)
                && filter.from.is_none_or(|a| a == tx.from)
                && filter.kind.is_none_or(|k| k == tx.kind)
                && filter.since.is_none_or(|t| tx.timestamp >= t);
            if ok {
                expected.push(tx.clone());
            }
        }
        assert_eq!(world.state.query_tx_log(&filter), expected);
    }
}

#[test]
fn contract_addresses_are_distinct_and_predictable() {
    let (world, _) = World::run(8, 400);
    let mut all: Vec<_> = world.agents.clone();
    all.extend(&world.registries);
    all.extend(&world.factories);
    all.push(world.token);
    let n = all.len();
    all.sort();
    all.dedup();
    assert_eq!(all.len(), n);

    let mut s = world.state.clone();
    let owner = world.keys[1].address();
    let predicted = s.next_contract_address(&owner);
    assert_eq!(s.deploy_factory(owner, world.now), predicted);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_runs_keep_invariants(seed in any::<u64>(), n in 20usize..150) {
        let (world, log) = World::run(seed, n);
        check_invariants(&world);
        // Genesis token deploy plus one record per successful ledger op.
        let ok_ops = log
            .iter()
            .filter(|(o, r)| r.is_ok() && !matches!(o, Op::Tick { .. }))
            .count();
        prop_assert_eq!(world.state.height() as usize, 1 + ok_ops);
    }
}
